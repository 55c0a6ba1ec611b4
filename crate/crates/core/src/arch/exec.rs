//! Runs a spec through the real kernels with random weights.
//!
//! Only practical at desk scale; it exists to check that the cost report
//! describes what the kernels actually execute.

use crate::arch::{residual_stride, ArchSpec, LayerOp, Pool, PoolMode, Shape3};
use crate::conv::{
    conv2d_forward, dwc_forward, gwc_forward, hetconv_forward, pwc_forward, DenseFilterBank, GroupedFilterBank,
    HetConvFilterBank, MulCounter,
};
use crate::{Result, Rng, Tensor4};

#[derive(Clone, Debug)]
pub struct ExecReport {
    pub batch: usize,
    /// Multiplications executed over the whole batch.
    pub total_macs: u64,
    /// Per-layer multiplications per batch item.
    pub layer_macs: Vec<u64>,
    pub output: Tensor4,
}

impl ExecReport {
    pub fn macs_per_item(&self) -> u64 {
        self.total_macs / self.batch as u64
    }
}

const WEIGHT_RANGE: (f64, f64) = (-0.25, 0.25);

/// Executes `a` on a random `batch`-item input drawn from `seed`.
pub fn execute(a: &ArchSpec, batch: usize, seed: u64) -> Result<ExecReport> {
    let shapes = a.resolve()?;
    let mut rng = Rng::new(seed);
    let Shape3 { c, h, w } = a.input;
    let input = Tensor4::random_uniform((batch, c, h, w), &mut rng, -1.0, 1.0)?;
    let (lo, hi) = WEIGHT_RANGE;
    let mut outputs: Vec<Tensor4> = Vec::with_capacity(a.layers.len());
    let mut layer_macs = Vec::with_capacity(a.layers.len());
    let mut total = 0u64;
    for (i, layer) in a.layers.iter().enumerate() {
        let x = match a.source(i) {
            Some(j) => &outputs[j],
            None => &input,
        };
        let mut counter = MulCounter::new();
        let cnt = Some(&mut counter);
        let y = match layer.op {
            LayerOp::StandardConv(g) => conv2d_forward(x, &DenseFilterBank::random(g, &mut rng, lo, hi)?, cnt),
            LayerOp::HetConv { geometry, part } => {
                hetconv_forward(x, &HetConvFilterBank::random(geometry, part, &mut rng, lo, hi)?, cnt)
            }
            LayerOp::Dwc(g) => dwc_forward(x, &GroupedFilterBank::random(g, g.in_channels, &mut rng, lo, hi)?, cnt),
            LayerOp::Pwc(g) => pwc_forward(x, &GroupedFilterBank::random(g, 1, &mut rng, lo, hi)?, cnt),
            LayerOp::Gwc { geometry, groups } => {
                gwc_forward(x, &GroupedFilterBank::random(geometry, groups, &mut rng, lo, hi)?, cnt)
            }
            LayerOp::Pool(pool) => Ok(pool_forward(x, pool, shapes[i].1)),
            LayerOp::Fc {
                in_features,
                out_features,
            } => {
                let weights: Vec<f64> = (0..in_features * out_features).map(|_| rng.uniform(lo, hi)).collect();
                Ok(fc_forward(x, &weights, out_features, &mut counter))
            }
            LayerOp::AddResidual { from } => add_residual(x, &outputs[from]),
        }
        .map_err(|e| e.at(&layer.name))?;
        let muls = counter.count();
        total += muls;
        layer_macs.push(muls / batch as u64);
        outputs.push(y);
    }
    let output = outputs.pop().unwrap_or(input);
    Ok(ExecReport {
        batch,
        total_macs: total,
        layer_macs,
        output,
    })
}

fn fc_forward(x: &Tensor4, weights: &[f64], out_features: usize, counter: &mut MulCounter) -> Tensor4 {
    let batch = x.dims().n;
    let in_features = x.dims().len() / batch;
    let mut out = Tensor4::zeros((batch, out_features, 1, 1)).expect("fc output dims are nonzero");
    for b in 0..batch {
        let item = x.item(b);
        for o in 0..out_features {
            let row = &weights[o * in_features..(o + 1) * in_features];
            let v: f64 = row.iter().zip(item).map(|(w, v)| w * v).sum();
            out.set(b, o, 0, 0, v);
        }
    }
    counter.add((batch * in_features * out_features) as u64);
    out
}

fn pool_forward(x: &Tensor4, pool: Pool, out_shape: Shape3) -> Tensor4 {
    let d = x.dims();
    let mut out = Tensor4::zeros((d.n, out_shape.c, out_shape.h, out_shape.w)).expect("pool output dims are nonzero");
    let (mode, kernel, stride, padding) = match pool {
        Pool::Window {
            mode,
            kernel,
            stride,
            padding,
        } => (mode, kernel, stride, padding),
        Pool::Global { mode } => (mode, d.h.max(d.w), 1, 0),
    };
    for b in 0..d.n {
        for c in 0..d.c {
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    // Padded positions are skipped; averages divide by the
                    // number of real positions.
                    let (mut acc, mut count) = (
                        match mode {
                            PoolMode::Max => f64::NEG_INFINITY,
                            PoolMode::Avg => 0.0,
                        },
                        0usize,
                    );
                    for i in 0..kernel {
                        for j in 0..kernel {
                            let (y, xx) = (oy * stride + i, ox * stride + j);
                            if y < padding || xx < padding || y - padding >= d.h || xx - padding >= d.w {
                                continue;
                            }
                            let v = x.get(b, c, y - padding, xx - padding);
                            acc = match mode {
                                PoolMode::Max => acc.max(v),
                                PoolMode::Avg => acc + v,
                            };
                            count += 1;
                        }
                    }
                    let v = match mode {
                        PoolMode::Max => acc,
                        PoolMode::Avg => acc / count as f64,
                    };
                    out.set(b, c, oy, ox, v);
                }
            }
        }
    }
    out
}

/// `main + shortcut`, with the shortcut subsampled by the spatial ratio and
/// zero-padded in channels.
fn add_residual(main: &Tensor4, shortcut: &Tensor4) -> Result<Tensor4> {
    let (m, s) = (main.dims(), shortcut.dims());
    let stride = residual_stride(Shape3::new(s.c, s.h, s.w), Shape3::new(m.c, m.h, m.w))?;
    let mut out = main.clone();
    for b in 0..m.n {
        for c in 0..s.c {
            for y in 0..m.h {
                for x in 0..m.w {
                    let v = out.get(b, c, y, x) + shortcut.get(b, c, y * stride, x * stride);
                    out.set(b, c, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{cost_report, fuse_separable, hetconvify, separate, LayerSpec, PartPolicy, Separable};
    use crate::conv::ConvGeometry;

    fn small_resnet() -> ArchSpec {
        let conv = |m, n, s| LayerOp::StandardConv(ConvGeometry::new(m, n, 3, s, 1).unwrap());
        let mut a = ArchSpec::new("small", Shape3::new(3, 8, 8));
        let stem = a.push(LayerSpec::new("conv1", conv(3, 4, 1)));
        a.push(LayerSpec::new("b1.conv1", conv(4, 8, 2)));
        a.push(LayerSpec::new("b1.conv2", conv(8, 8, 1)));
        a.push(LayerSpec::new("b1.add", LayerOp::AddResidual { from: stem }));
        a.push(LayerSpec::new(
            "pool",
            LayerOp::Pool(Pool::Window {
                mode: PoolMode::Max,
                kernel: 3,
                stride: 2,
                padding: 1,
            }),
        ));
        a.push(LayerSpec::new(
            "gap",
            LayerOp::Pool(Pool::Global { mode: PoolMode::Avg }),
        ));
        a.push(LayerSpec::new(
            "fc",
            LayerOp::Fc {
                in_features: 8,
                out_features: 5,
            },
        ));
        a
    }

    #[test]
    fn executed_macs_match_report() {
        let base = small_resnet();
        let variants = [
            base.clone(),
            hetconvify(&base, PartPolicy::Fixed(2), true).unwrap(),
            hetconvify(&base, PartPolicy::InputChannels, false).unwrap(),
            separate(&base, Separable::Depthwise, true).unwrap(),
            separate(&base, Separable::Grouped(2), true).unwrap(),
            fuse_separable(
                &separate(&base, Separable::Depthwise, true).unwrap(),
                PartPolicy::Fixed(4),
            )
            .unwrap(),
        ];
        for a in &variants {
            let report = cost_report(a, None).unwrap();
            let run = execute(a, 2, 9).unwrap();
            assert_eq!(run.macs_per_item(), report.total_flops, "{:?}", a.layers);
            assert_eq!(run.total_macs, 2 * report.total_flops);
            let per_layer: Vec<u64> = report.rows.iter().map(|r| r.flops).collect();
            assert_eq!(run.layer_macs, per_layer);
            assert_eq!(run.output.dims().as_array(), [2, 5, 1, 1]);
        }
    }

    #[test]
    fn residual_zero_pads_channels() {
        let main = Tensor4::full((1, 4, 2, 2), 1.0).unwrap();
        let mut short = Tensor4::zeros((1, 2, 4, 4)).unwrap();
        for (i, v) in short.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        let out = add_residual(&main, &short).unwrap();
        assert_eq!(out.get(0, 0, 1, 1), 1.0 + short.get(0, 0, 2, 2));
        assert_eq!(out.get(0, 1, 0, 1), 1.0 + short.get(0, 1, 0, 2));
        assert_eq!(out.get(0, 3, 1, 1), 1.0);
    }

    #[test]
    fn pools() {
        let x = Tensor4::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = pool_forward(&x, Pool::Global { mode: PoolMode::Avg }, Shape3::new(1, 1, 1));
        assert_eq!(g.data(), &[2.5]);
        let pool = Pool::Window {
            mode: PoolMode::Max,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let m = pool_forward(&x, pool, Shape3::new(1, 1, 1));
        assert_eq!(m.data(), &[4.0]);
    }
}
