//! Desk-scale training: a procedural 10-class dataset, a small conv net that
//! can be built with standard or HetConv layers, and plain SGD.
//!
//! Optimizer: `v ← μ·v + g + λ·w` (decay skipped for biases), `w ← w − η·v`,
//! with `η = η₀ · γ^⌊epoch / interval⌋`. Each epoch visits the training set
//! once in an order drawn from the run seed; batches and summation orders
//! are fixed, so a run is reproducible bit for bit.

mod data;
mod net;

pub use data::{ToyDataset, CLASSES, IMAGE_CHANNELS, IMAGE_SIZE, NOISE_SIGMA};
pub use net::{toy_arch, toy_arch_hetconv, ConvLayer, Grads, ToyNet, TOY_CONVS};

use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::arch::PartPolicy;
use crate::cost::Fraction;
use crate::{Error, Result, Rng, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds weight initialization and the per-epoch sample order.
    pub seed: u64,
    pub data_seed: u64,
    pub train_per_class: usize,
    pub val_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            lr_decay: 0.2,
            decay_every: 8,
            weight_decay: 5e-4,
            momentum: 0.9,
            batch_size: 32,
            epochs: 12,
            seed: 0,
            data_seed: 2024,
            train_per_class: 100,
            val_per_class: 40,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Geometry(format!("train config: {msg}")));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        for (name, v) in [
            ("decay_every", self.decay_every),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("train_per_class", self.train_per_class),
            ("val_per_class", self.val_per_class),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    /// Training and held-out sets drawn from `data_seed`.
    pub fn datasets(&self) -> (ToyDataset, ToyDataset) {
        ToyDataset::generate(self.data_seed, self.train_per_class + self.val_per_class).split(self.val_per_class)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Percent of training samples classified correctly during the epoch.
    pub train_acc: f64,
    /// Percent of held-out samples classified correctly after the epoch.
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub initial_val_acc: f64,
    pub trace: Vec<EpochRecord>,
    pub net: ToyNet,
}

impl TrainResult {
    pub fn final_val_acc(&self) -> f64 {
        self.trace.last().map_or(self.initial_val_acc, |r| r.val_acc)
    }
}

/// Held-out accuracy in percent.
pub fn evaluate(net: &ToyNet, data: &ToyDataset, batch_size: usize) -> Result<f64> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk)?;
        let pred = net.predict(&x)?;
        correct += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(100.0 * correct as f64 / data.len().max(1) as f64)
}

/// One SGD-with-momentum update.
pub(crate) fn sgd_step(net: &mut ToyNet, grads: &Grads, velocity: &mut [Vec<f64>], cfg: &TrainConfig, lr: f64) {
    let mask = net.bias_mask();
    for (((w, g), v), is_bias) in net.params_mut().into_iter().zip(&grads.tensors).zip(velocity).zip(mask) {
        let decay = if is_bias { 0.0 } else { cfg.weight_decay };
        for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = cfg.momentum * *vi + gi + decay * *wi;
            *wi -= lr * *vi;
        }
    }
}

pub fn train(mut net: ToyNet, train_set: &ToyDataset, val_set: &ToyDataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Geometry("training set is empty".into()));
    }
    let initial_val_acc = evaluate(&net, val_set, 128)?;
    let mut velocity: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut order_rng = Rng::new(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(order_rng.inner_mut());
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0, 0);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train_set.batch(chunk)?;
            let (out, grads) = net.loss_and_grads(&x, &y)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, step });
            }
            loss_sum += out.loss;
            correct += out.correct;
            batches += 1;
            sgd_step(&mut net, &grads, &mut velocity, cfg, lr);
        }
        trace.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            loss: loss_sum / batches as f64,
            train_acc: 100.0 * correct as f64 / train_set.len() as f64,
            val_acc: evaluate(&net, val_set, 128)?,
        });
    }
    Ok(TrainResult {
        initial_val_acc,
        trace,
        net,
    })
}

/// CSV with header `epoch,loss,train_acc,val_acc`.
pub fn write_trace_csv<W: Write>(trace: &[EpochRecord], out: W) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        loss: f64,
        train_acc: f64,
        val_acc: f64,
    }
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(Row {
            epoch: r.epoch,
            loss: r.loss,
            train_acc: r.train_acc,
            val_acc: r.val_acc,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub part: usize,
    pub model: String,
    pub final_val_acc: f64,
    /// Baseline accuracy minus this row's accuracy, in points.
    pub gap: f64,
    pub flops: u64,
    pub params: u64,
    /// `flops / baseline flops`, exact.
    #[serde(serialize_with = "ser_fraction")]
    pub flop_ratio: Fraction,
}

fn ser_fraction<S: serde::Serializer>(f: &Fraction, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&f.to_string())
}

/// Trains the standard toy net and one HetConv twin per `P` on the same data
/// and seeds. `P = 1` reports the standard run itself.
pub fn compare_convergence(parts: &[usize], cfg: &TrainConfig) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    let (train_set, val_set) = cfg.datasets();
    let base_net = ToyNet::standard(cfg.seed);
    let base_cost = base_net.cost()?;
    let base = train(base_net, &train_set, &val_set, cfg)?;
    let base_acc = base.final_val_acc();
    let mut rows = Vec::with_capacity(parts.len());
    for &part in parts {
        let (model, acc, cost) = if part == 1 {
            (base_cost.name.clone(), base_acc, base_cost.clone())
        } else {
            let net = ToyNet::hetconv(PartPolicy::Fixed(part), cfg.seed)?;
            let cost = net.cost()?;
            let run = train(net, &train_set, &val_set, cfg)?;
            (cost.name.clone(), run.final_val_acc(), cost)
        };
        rows.push(ConvergenceRow {
            part,
            model,
            final_val_acc: acc,
            gap: base_acc - acc,
            flops: cost.total_flops,
            params: cost.total_params,
            flop_ratio: Fraction::new(cost.total_flops, base_cost.total_flops),
        });
    }
    Ok(rows)
}

/// CSV with header `P,model,final_val_acc,gap,flops,params,flop_ratio`.
pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["P", "model", "final_val_acc", "gap", "flops", "params", "flop_ratio"])?;
    for r in rows {
        w.write_record([
            r.part.to_string(),
            r.model.clone(),
            r.final_val_acc.to_string(),
            r.gap.to_string(),
            r.flops.to_string(),
            r.params.to_string(),
            r.flop_ratio.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Sampled coordinates dropped because a ReLU switches within `±h`.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// `(tensor, index)` of the worst coordinate.
    pub worst: (usize, usize),
}

/// Compares backpropagated gradients of the mean loss against central
/// differences on `per_tensor` sampled coordinates of every parameter
/// tensor. Relative error is `|a − n| / max(|a|, |n|, 1e−6)`.
///
/// A coordinate whose one-sided differences disagree, or whose central
/// differences at `h` and `h/4` disagree, sits near a ReLU kink where the
/// loss is not differentiable at scale `h`; such coordinates are counted in
/// `skipped` instead of `checked`.
pub fn gradcheck(
    net: &mut ToyNet,
    x: &Tensor4,
    labels: &[usize],
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    const H: f64 = 1e-6;
    let (_, grads) = net.loss_and_grads(x, labels)?;
    let center = net.loss(x, labels)?;
    let mut rng = Rng::new(seed);
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: (0, 0),
    };
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for _ in 0..per_tensor.min(len) {
            let i = rng.int_in(0, len - 1);
            let orig = net.params()[t][i];
            let mut central = |h: f64| -> Result<(f64, f64, f64)> {
                net.params_mut()[t][i] = orig + h;
                let up = net.loss(x, labels)?;
                net.params_mut()[t][i] = orig - h;
                let down = net.loss(x, labels)?;
                net.params_mut()[t][i] = orig;
                Ok(((up - down) / (2.0 * h), (up - center) / h, (center - down) / h))
            };
            let (numeric, right, left) = central(H)?;
            let (fine, _, _) = central(H / 4.0)?;
            let scale = right.abs().max(left.abs());
            if (right - left).abs() > 1e-5 + 1e-3 * scale || (numeric - fine).abs() > 1e-7 + 1e-4 * scale {
                report.skipped += 1;
                continue;
            }
            let analytic = grads.tensors[t][i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (t, i);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            train_per_class: 6,
            val_per_class: 3,
            batch_size: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation_and_schedule() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.lr_at(0), 0.05);
        assert_eq!(cfg.lr_at(7), 0.05);
        assert!((cfg.lr_at(8) - 0.01).abs() < 1e-15);
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..cfg.clone()
            },
            TrainConfig {
                lr: f64::NAN,
                ..cfg.clone()
            },
            TrainConfig {
                momentum: 1.0,
                ..cfg.clone()
            },
            TrainConfig {
                lr_decay: 0.0,
                ..cfg.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn zero_lr_keeps_accuracy() {
        let cfg = TrainConfig { lr: 0.0, ..tiny_cfg() };
        let (tr, va) = cfg.datasets();
        let r = train(ToyNet::standard(3), &tr, &va, &cfg).unwrap();
        assert_eq!(r.final_val_acc(), r.initial_val_acc);
        assert_eq!(r.net, ToyNet::standard(3));
    }

    #[test]
    fn identical_runs_identical_traces() {
        let cfg = tiny_cfg();
        let (tr, va) = cfg.datasets();
        let net = ToyNet::hetconv(PartPolicy::Fixed(2), 1).unwrap();
        let a = train(net.clone(), &tr, &va, &cfg).unwrap();
        let b = train(net, &tr, &va, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn hetconv_p1_trains_like_standard() {
        let cfg = tiny_cfg();
        let (tr, va) = cfg.datasets();
        let a = train(ToyNet::standard(4), &tr, &va, &cfg).unwrap();
        let b = train(ToyNet::hetconv(PartPolicy::Fixed(1), 4).unwrap(), &tr, &va, &cfg).unwrap();
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert!((x.loss - y.loss).abs() < 1e-9);
            assert_eq!(x.val_acc, y.val_acc);
        }
    }

    #[test]
    fn decay_only_step_shrinks_weights() {
        let mut net = ToyNet::hetconv(PartPolicy::Fixed(2), 9).unwrap();
        let before = net.clone();
        let zero = Grads {
            tensors: net.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        };
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        let lr = 0.1;
        let mut velocity = zero.tensors.clone();
        for _ in 0..3 {
            sgd_step(&mut net, &zero, &mut velocity, &cfg, lr);
        }
        let factor = (1.0 - lr * cfg.weight_decay).powi(3);
        let mask = net.bias_mask();
        for ((a, b), is_bias) in before.params().iter().zip(net.params()).zip(mask) {
            for (x, y) in a.iter().zip(b) {
                let want = if is_bias { *x } else { x * factor };
                assert!((want - y).abs() <= 1e-15 * x.abs().max(1.0), "{want} vs {y}");
            }
        }
    }

    #[test]
    fn nan_loss_aborts() {
        let cfg = tiny_cfg();
        let (tr, va) = cfg.datasets();
        let mut net = ToyNet::standard(0);
        net.params_mut()[0][0] = f64::NAN;
        let err = train(net, &tr, &va, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, step: 0 }), "{err}");
    }

    #[test]
    fn end_to_end_gradients() {
        let data = ToyDataset::generate(11, 1);
        let (x, y) = data.batch(&[0, 3, 5, 8]).unwrap();
        for policy in [PartPolicy::Fixed(1), PartPolicy::Fixed(2), PartPolicy::InputChannels] {
            let mut net = ToyNet::hetconv(policy, 21).unwrap();
            let r = gradcheck(&mut net, &x, &y, 6, 5).unwrap();
            assert!(r.max_rel_err < 1e-3, "{policy:?}: {r:?}");
            let expected: usize = net.params().iter().map(|p| p.len().min(6)).sum();
            assert_eq!(r.checked + r.skipped, expected);
            assert!(r.skipped * 10 <= expected, "{policy:?}: {r:?}");
        }
    }

    #[test]
    fn loss_drops_over_first_epoch() {
        let cfg = TrainConfig {
            epochs: 1,
            train_per_class: 20,
            val_per_class: 2,
            ..TrainConfig::default()
        };
        let (tr, va) = cfg.datasets();
        let net = ToyNet::standard(cfg.seed);
        let (x, y) = tr.batch(&(0..tr.len()).collect::<Vec<_>>()).unwrap();
        let before = net.loss(&x, &y).unwrap();
        let r = train(net, &tr, &va, &cfg).unwrap();
        assert!(r.net.loss(&x, &y).unwrap() < before);
    }

    #[test]
    fn csv_headers() {
        let rec = EpochRecord {
            epoch: 1,
            lr: 0.1,
            loss: 2.0,
            train_acc: 10.0,
            val_acc: 12.5,
        };
        let mut buf = Vec::new();
        write_trace_csv(&[rec], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,loss,train_acc,val_acc\n1,2.0,10.0,12.5\n"
        );
    }
}
