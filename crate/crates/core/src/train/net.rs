use crate::arch::{
    cost_report, hetconvify, ArchSpec, CostReport, LayerOp, LayerSpec, PartPolicy, Pool, PoolMode, Shape3,
};
use crate::conv::{
    conv2d_backward, conv2d_forward, hetconv_backward, hetconv_forward, ConvGeometry, DenseFilterBank,
    HetConvFilterBank,
};
use crate::train::data::{CLASSES, IMAGE_CHANNELS, IMAGE_SIZE};
use crate::{Error, Result, Rng, Tensor4};

/// Conv widths and strides of the toy network; every conv is `3×3`, pad 1.
pub const TOY_CONVS: [(usize, usize); 4] = [(8, 1), (16, 2), (16, 1), (32, 2)];

/// Standard toy network: four `3×3` convs (each followed by ReLU), global
/// average pool, FC to 10 classes.
pub fn toy_arch() -> ArchSpec {
    let mut a = ArchSpec::new("toynet", Shape3::new(IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE));
    let mut c = IMAGE_CHANNELS;
    for (i, &(width, stride)) in TOY_CONVS.iter().enumerate() {
        let g = ConvGeometry::new(c, width, 3, stride, 1).expect("toy geometry is valid");
        a.push(LayerSpec::new(format!("conv{}", i + 1), LayerOp::StandardConv(g)));
        c = width;
    }
    a.push(LayerSpec::new(
        "gap",
        LayerOp::Pool(Pool::Global { mode: PoolMode::Avg }),
    ));
    a.push(LayerSpec::new(
        "fc",
        LayerOp::Fc {
            in_features: c,
            out_features: CLASSES,
        },
    ));
    a
}

/// HetConv twin: every conv but the first becomes HetConv with part `P`.
pub fn toy_arch_hetconv(policy: PartPolicy) -> Result<ArchSpec> {
    let mut a = hetconvify(&toy_arch(), policy, true)?;
    a.name = match policy {
        PartPolicy::Fixed(p) => format!("toynet-p{p}"),
        PartPolicy::InputChannels => "toynet-pc".to_string(),
    };
    Ok(a)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConvLayer {
    Standard(DenseFilterBank),
    Het(HetConvFilterBank),
}

impl ConvLayer {
    fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            ConvLayer::Standard(f) => conv2d_forward(x, f, None),
            ConvLayer::Het(f) => hetconv_forward(x, f, None),
        }
    }

    /// Returns `(input gradient, parameter gradients in params order)`.
    fn backward(&self, x: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, Vec<Vec<f64>>)> {
        match self {
            ConvLayer::Standard(f) => {
                let g = conv2d_backward(x, f, grad_out)?;
                Ok((g.input, vec![g.weights, g.bias]))
            }
            ConvLayer::Het(f) => {
                let g = hetconv_backward(x, f, grad_out)?;
                Ok((g.input, vec![g.kxk, g.one, g.bias]))
            }
        }
    }
}

/// Parameter gradients, one vector per parameter tensor in
/// [`ToyNet::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

/// Convolutional classifier built from an [`ArchSpec`] of the form
/// `conv+ → global average pool → fc`, with ReLU after every conv.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    arch: ArchSpec,
    convs: Vec<ConvLayer>,
    fc_w: Vec<f64>,
    fc_b: Vec<f64>,
    features: usize,
    classes: usize,
}

struct Cache {
    inputs: Vec<Tensor4>,
    pre: Vec<Tensor4>,
    pooled: Vec<f64>,
}

/// Batch loss and number of correct predictions.
pub(crate) struct LossOut {
    pub loss: f64,
    pub correct: usize,
}

impl ToyNet {
    /// He-uniform conv weights, `±1/√features` FC weights, zero biases.
    pub fn from_arch(arch: &ArchSpec, seed: u64) -> Result<ToyNet> {
        arch.validate()?;
        let bad = |msg: &str| Error::Arch(format!("{}: {msg}", arch.name));
        let n = arch.layers.len();
        if n < 3 {
            return Err(bad("expected conv layers, a global average pool and an fc layer"));
        }
        if !matches!(
            arch.layers[n - 2].op,
            LayerOp::Pool(Pool::Global { mode: PoolMode::Avg })
        ) {
            return Err(bad("second-to-last layer must be a global average pool"));
        }
        let (features, classes) = match arch.layers[n - 1].op {
            LayerOp::Fc {
                in_features,
                out_features,
            } => (in_features, out_features),
            _ => return Err(bad("last layer must be fc")),
        };
        let mut rng = Rng::new(seed);
        let mut convs = Vec::new();
        for layer in &arch.layers[..n - 2] {
            if layer.input.is_some() {
                return Err(bad("toy networks are plain chains"));
            }
            let conv = match layer.op {
                LayerOp::StandardConv(g) => {
                    let b = (6.0 / (g.in_channels * g.kernel * g.kernel) as f64).sqrt();
                    ConvLayer::Standard(DenseFilterBank::random(g, &mut rng, -b, b)?)
                }
                LayerOp::HetConv { geometry: g, part } => {
                    let groups = g.in_channels / part;
                    let fan_in = groups * g.kernel * g.kernel + g.in_channels - groups;
                    let b = (6.0 / fan_in as f64).sqrt();
                    ConvLayer::Het(HetConvFilterBank::random(g, part, &mut rng, -b, b)?)
                }
                _ => return Err(bad(&format!("layer {} must be a standard or HetConv conv", layer.name))),
            };
            convs.push(conv);
        }
        let b = 1.0 / (features as f64).sqrt();
        let fc_w = (0..features * classes).map(|_| rng.uniform(-b, b)).collect();
        Ok(ToyNet {
            arch: arch.clone(),
            convs,
            fc_w,
            fc_b: vec![0.0; classes],
            features,
            classes,
        })
    }

    pub fn standard(seed: u64) -> ToyNet {
        Self::from_arch(&toy_arch(), seed).expect("toy arch is valid")
    }

    pub fn hetconv(policy: PartPolicy, seed: u64) -> Result<ToyNet> {
        Self::from_arch(&toy_arch_hetconv(policy)?, seed)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cost(&self) -> Result<CostReport> {
        cost_report(&self.arch, None)
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    /// Parameter tensors: per conv `weights, bias` (standard) or
    /// `kxk, one, bias` (HetConv), then `fc weights, fc bias`.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            match c {
                ConvLayer::Standard(f) => out.extend([f.weights(), f.bias()]),
                ConvLayer::Het(f) => out.extend([f.kxk(), f.one(), f.bias()]),
            }
        }
        out.extend([self.fc_w.as_slice(), self.fc_b.as_slice()]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            match c {
                ConvLayer::Standard(f) => out.extend(f.params_mut()),
                ConvLayer::Het(f) => out.extend(f.params_mut()),
            }
        }
        out.push(&mut self.fc_w);
        out.push(&mut self.fc_b);
        out
    }

    /// Whether each parameter tensor is a bias (biases are not decayed).
    pub fn bias_mask(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for c in &self.convs {
            match c {
                ConvLayer::Standard(_) => out.extend([false, true]),
                ConvLayer::Het(_) => out.extend([false, false, true]),
            }
        }
        out.extend([false, true]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn run(&self, x: &Tensor4) -> Result<(Vec<f64>, Cache)> {
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut act = x.clone();
        for conv in &self.convs {
            let z = conv.forward(&act)?;
            let mut a = z.clone();
            for v in a.data_mut() {
                // Written as a comparison so NaN propagates.
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            inputs.push(std::mem::replace(&mut act, a));
            pre.push(z);
        }
        let d = act.dims();
        if d.c != self.features {
            return Err(Error::shape(self.features, d.c));
        }
        let area = (d.h * d.w) as f64;
        let mut pooled = vec![0.0; d.n * d.c];
        for b in 0..d.n {
            for c in 0..d.c {
                let plane = &act.item(b)[c * d.h * d.w..(c + 1) * d.h * d.w];
                pooled[b * d.c + c] = plane.iter().sum::<f64>() / area;
            }
        }
        let mut logits = vec![0.0; d.n * self.classes];
        for b in 0..d.n {
            for o in 0..self.classes {
                let row = &self.fc_w[o * self.features..(o + 1) * self.features];
                let feat = &pooled[b * d.c..(b + 1) * d.c];
                logits[b * self.classes + o] = self.fc_b[o] + row.iter().zip(feat).map(|(w, f)| w * f).sum::<f64>();
            }
        }
        Ok((logits, Cache { inputs, pre, pooled }))
    }

    /// Logits, row-major `[batch][classes]`.
    pub fn forward(&self, x: &Tensor4) -> Result<Vec<f64>> {
        Ok(self.run(x)?.0)
    }

    pub fn predict(&self, x: &Tensor4) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        Ok(logits.chunks(self.classes).map(argmax).collect())
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, x: &Tensor4, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(x)?;
        Ok(softmax_xent(&logits, labels, self.classes)?.0.loss)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub(crate) fn loss_and_grads(&self, x: &Tensor4, labels: &[usize]) -> Result<(LossOut, Grads)> {
        let (logits, cache) = self.run(x)?;
        let (out, dz) = softmax_xent(&logits, labels, self.classes)?;
        let batch = labels.len();
        let f = self.features;

        let mut g_fc_w = vec![0.0; self.fc_w.len()];
        let mut g_fc_b = vec![0.0; self.classes];
        let mut d_pool = vec![0.0; batch * f];
        for b in 0..batch {
            for o in 0..self.classes {
                let g = dz[b * self.classes + o];
                g_fc_b[o] += g;
                for j in 0..f {
                    g_fc_w[o * f + j] += g * cache.pooled[b * f + j];
                    d_pool[b * f + j] += g * self.fc_w[o * f + j];
                }
            }
        }

        let last = cache.pre.last().expect("at least one conv").dims();
        let area = (last.h * last.w) as f64;
        let mut d_act = Tensor4::zeros((last.n, last.c, last.h, last.w))?;
        for b in 0..last.n {
            for c in 0..last.c {
                let g = d_pool[b * f + c] / area;
                for y in 0..last.h {
                    for xx in 0..last.w {
                        d_act.set(b, c, y, xx, g);
                    }
                }
            }
        }

        let mut conv_grads = Vec::with_capacity(self.convs.len());
        for (l, conv) in self.convs.iter().enumerate().rev() {
            let mut d_pre = d_act;
            for (g, z) in d_pre.data_mut().iter_mut().zip(cache.pre[l].data()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
            let (d_in, grads) = conv.backward(&cache.inputs[l], &d_pre)?;
            conv_grads.push(grads);
            d_act = d_in;
        }
        let mut tensors: Vec<Vec<f64>> = conv_grads.into_iter().rev().flatten().collect();
        tensors.push(g_fc_w);
        tensors.push(g_fc_b);
        Ok((out, Grads { tensors }))
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy and `∂loss/∂logits`.
fn softmax_xent(logits: &[f64], labels: &[usize], classes: usize) -> Result<(LossOut, Vec<f64>)> {
    let batch = labels.len();
    if logits.len() != batch * classes {
        return Err(Error::shape(batch * classes, logits.len()));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = vec![0.0; logits.len()];
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::shape(format!("label < {classes}"), label));
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        if argmax(row) == label {
            correct += 1;
        }
        for (o, &z) in row.iter().enumerate() {
            let p = (z - log_z).exp();
            grad[b * classes + o] = (p - if o == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((
        LossOut {
            loss: loss / batch as f64,
            correct,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_costs() {
        let base = ToyNet::standard(1).cost().unwrap();
        let het = ToyNet::hetconv(PartPolicy::Fixed(4), 1).unwrap().cost().unwrap();
        assert!(het.total_flops < base.total_flops);
        assert_eq!(ToyNet::standard(1).param_count() as u64, base.total_params);
        assert_eq!(
            ToyNet::hetconv(PartPolicy::Fixed(2), 1).unwrap().param_count() as u64,
            cost_report(&toy_arch_hetconv(PartPolicy::Fixed(2)).unwrap(), None)
                .unwrap()
                .total_params
        );
        assert!(ToyNet::hetconv(PartPolicy::Fixed(3), 1).is_err());
    }

    #[test]
    fn hetconv_p1_equals_standard() {
        let a = ToyNet::standard(5);
        let b = ToyNet::hetconv(PartPolicy::Fixed(1), 5).unwrap();
        let mut rng = Rng::new(2);
        let x = Tensor4::random_uniform((2, 3, 16, 16), &mut rng, -1.0, 1.0).unwrap();
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn xent_known_values() {
        let (out, g) = softmax_xent(&[0.0, 0.0], &[1], 2).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);
        assert!(softmax_xent(&[0.0, 0.0], &[2], 2).is_err());
        // Large logits stay finite.
        let (out, _) = softmax_xent(&[1000.0, 0.0], &[0], 2).unwrap();
        assert!(out.loss.abs() < 1e-12 && out.correct == 1);
    }

    #[test]
    fn rejects_non_chain_specs() {
        let mut a = toy_arch();
        a.layers.pop();
        assert!(ToyNet::from_arch(&a, 0).is_err());
    }
}
