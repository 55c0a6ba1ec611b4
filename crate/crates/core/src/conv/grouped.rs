use crate::conv::{charge, check_input, ConvGeometry, MulCounter, Padded};
use crate::{Dims4, Error, Result, Rng, Tensor4};

/// Groupwise filter bank: `G` groups, weights `[N][M/G][K][K]`.
///
/// Output filter `n` belongs to group `n / (N/G)` and reads the input
/// channels `[group·M/G, (group+1)·M/G)`. Depthwise (`G = M = N`) and
/// pointwise (`G = 1`, `K = 1`) banks are special cases.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedFilterBank {
    geometry: ConvGeometry,
    groups: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl GroupedFilterBank {
    pub fn new(geometry: ConvGeometry, groups: usize, weights: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        geometry.validate()?;
        check_groups(&geometry, groups)?;
        let g = &geometry;
        let expected = g.out_channels * (g.in_channels / groups) * g.kernel * g.kernel;
        if weights.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: weights.len(),
            });
        }
        let bias = bias.unwrap_or_else(|| vec![0.0; g.out_channels]);
        if bias.len() != g.out_channels {
            return Err(Error::LengthMismatch {
                expected: g.out_channels,
                found: bias.len(),
            });
        }
        Ok(GroupedFilterBank {
            geometry,
            groups,
            weights,
            bias,
        })
    }

    pub fn random(geometry: ConvGeometry, groups: usize, rng: &mut Rng, lo: f64, hi: f64) -> Result<Self> {
        geometry.validate()?;
        check_groups(&geometry, groups)?;
        let g = &geometry;
        let len = g.out_channels * (g.in_channels / groups) * g.kernel * g.kernel;
        let weights = (0..len).map(|_| rng.uniform(lo, hi)).collect();
        Self::new(geometry, groups, weights, None)
    }

    /// Depthwise bank: one `K×K` kernel per channel, weights `[M][K][K]`.
    pub fn depthwise(channels: usize, kernel: usize, stride: usize, padding: usize, weights: Vec<f64>) -> Result<Self> {
        let g = ConvGeometry::new(channels, channels, kernel, stride, padding)?;
        Self::new(g, channels, weights, None)
    }

    /// Pointwise bank: `1×1` weights `[N][M]`.
    pub fn pointwise(in_channels: usize, out_channels: usize, stride: usize, weights: Vec<f64>) -> Result<Self> {
        let g = ConvGeometry::new(in_channels, out_channels, 1, stride, 0)?;
        Self::new(g, 1, weights, None)
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn is_depthwise(&self) -> bool {
        let g = &self.geometry;
        self.groups == g.in_channels && g.in_channels == g.out_channels
    }

    fn is_pointwise(&self) -> bool {
        self.groups == 1 && self.geometry.kernel == 1 && self.geometry.padding == 0
    }
}

pub(crate) fn check_groups(g: &ConvGeometry, groups: usize) -> Result<()> {
    if groups == 0 {
        return Err(Error::Geometry("group count must be at least 1".into()));
    }
    for (value, value_name) in [(g.in_channels, "input channels"), (g.out_channels, "output channels")] {
        if value % groups != 0 {
            return Err(Error::Divisibility {
                divisor_name: "G",
                divisor: groups,
                value_name,
                value,
                layer: None,
            });
        }
    }
    Ok(())
}

/// Groupwise convolution. Accrues `D_o²·M·N·K²/G` multiplications per batch
/// item.
pub fn gwc_forward(x: &Tensor4, f: &GroupedFilterBank, counter: Option<&mut MulCounter>) -> Result<Tensor4> {
    let g = *f.geometry();
    let (ho, wo) = check_input(x, &g)?;
    let batch = x.dims().n;
    let (k, s) = (g.kernel, g.stride);
    let per_group_in = g.in_channels / f.groups;
    let per_group_out = g.out_channels / f.groups;
    let mut out = Tensor4::zeros_like_dims(Dims4::new(batch, g.out_channels, ho, wo)?);
    let mut muls = 0u64;
    for b in 0..batch {
        let xp = Padded::from_item(x, b, g.padding);
        for n in 0..g.out_channels {
            let first = (n / per_group_out) * per_group_in;
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = 0.0;
                    for local in 0..per_group_in {
                        let c = first + local;
                        for i in 0..k {
                            let row = xp.at(c, y * s + i, xo * s);
                            let wrow = ((n * per_group_in + local) * k + i) * k;
                            for j in 0..k {
                                acc += f.weights[wrow + j] * xp.data[row + j];
                            }
                        }
                    }
                    muls += (per_group_in * k * k) as u64;
                    let o = out.dims().offset(b, n, y, xo);
                    out.data_mut()[o] = acc + f.bias[n];
                }
            }
        }
    }
    charge(counter, muls);
    Ok(out)
}

/// Depthwise convolution. Accrues `D_o²·M·K²` multiplications per batch item.
pub fn dwc_forward(x: &Tensor4, f: &GroupedFilterBank, counter: Option<&mut MulCounter>) -> Result<Tensor4> {
    if !f.is_depthwise() {
        return Err(Error::Geometry("depthwise bank needs G = M = N".to_string()));
    }
    gwc_forward(x, f, counter)
}

/// Pointwise convolution. Accrues `D_o²·M·N` multiplications per batch item.
pub fn pwc_forward(x: &Tensor4, f: &GroupedFilterBank, counter: Option<&mut MulCounter>) -> Result<Tensor4> {
    if !f.is_pointwise() {
        return Err(Error::Geometry(
            "pointwise bank needs K = 1, G = 1 and no padding".to_string(),
        ));
    }
    gwc_forward(x, f, counter)
}
