//! Seeded property suites behind `hetconv verify`.
//!
//! Every trial draws its configuration from a per-trial seed derived from
//! the run seed and the trial index, so a run seed replays the identical
//! trial set and a printed failure can be reproduced from its config line.

use std::fmt;

use serde::Serialize;

use crate::conv::{
    conv2d_forward, dwc_forward, embed_as_dense, gwc_forward, hetconv_backward, hetconv_forward, pwc_forward,
    ConvGeometry, GroupedFilterBank, HetConvFilterBank, MulCounter,
};
use crate::cost::{self, reduction_group, reduction_hetconv, reduction_mobnet, LayerCostInput};
use crate::{Result, Rng, Tensor4};

/// Deliberate defects for negative-control runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs one HetConv output value by `1e-6`.
    Oracle,
    /// Reports one extra multiplication.
    Count,
    /// Scales analytic gradients by `1 + 1e-3`.
    Gradient,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Fault> {
        match s {
            "oracle" => Some(Fault::Oracle),
            "count" => Some(Fault::Count),
            "gradient" => Some(Fault::Gradient),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    /// Oracle, count and linearity trials.
    pub trials: usize,
    /// Finite-difference trials.
    pub grad_trials: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trials: 100,
            grad_trials: 20,
            seed: 0,
            fault: None,
        }
    }
}

pub const ORACLE_TOL: f64 = 1e-10;
pub const GRAD_TOL: f64 = 1e-4;
/// Relative to `1 + max |output|`.
pub const LINEARITY_TOL: f64 = 1e-12;
const MAX_REPORTED_FAILURES: usize = 5;

/// Shape of one random trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrialConfig {
    pub index: usize,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub part: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl fmt::Display for TrialConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trial {} (seed {}): M={} N={} P={} K={} stride={} pad={} input={}x{}x{}x{}",
            self.index,
            self.seed,
            self.m,
            self.n,
            self.part,
            self.k,
            self.stride,
            self.pad,
            self.batch,
            self.m,
            self.h,
            self.w
        )
    }
}

impl TrialConfig {
    fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.m, self.n, self.k, self.stride, self.pad).expect("trial geometry is valid")
    }
}

fn divisors(m: usize) -> Vec<usize> {
    (1..=m).filter(|d| m.is_multiple_of(*d)).collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn trial_seed(seed: u64, suite: u64, index: usize) -> u64 {
    seed ^ suite.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1)
}

/// Draws one configuration; `max_m`, `max_n` and `kernels` bound the shape.
fn draw_config(
    rng: &mut Rng,
    index: usize,
    seed: u64,
    (min_m, max_m): (usize, usize),
    max_n: usize,
    kernels: &[usize],
    pads: &[usize],
) -> TrialConfig {
    let m = rng.int_in(min_m, max_m);
    let part = *rng.pick(&divisors(m));
    let n = rng.int_in(1, max_n);
    let k = *rng.pick(kernels);
    let stride = rng.int_in(1, 2);
    let pad = *rng.pick(pads);
    let min_extent = k.saturating_sub(2 * pad).max(1);
    let h = rng.int_in(min_extent, k + 5);
    let w = rng.int_in(min_extent, k + 5);
    let batch = rng.int_in(1, 2);
    TrialConfig {
        index,
        seed,
        m,
        n,
        part,
        k,
        stride,
        pad,
        batch,
        h,
        w,
    }
}

/// Configuration of trial `index` of the oracle/count/linearity suites.
pub fn oracle_trial(seed: u64, index: usize) -> TrialConfig {
    let s = trial_seed(seed, 1, index);
    draw_config(&mut Rng::new(s), index, s, (2, 32), 32, &[1, 3, 5], &[0, 1, 2])
}

/// Configuration of gradient trial `index`. Trial 0 uses `P = 1` and trial 1
/// uses `P = M`.
pub fn grad_trial(seed: u64, index: usize) -> TrialConfig {
    let s = trial_seed(seed, 2, index);
    let mut c = draw_config(&mut Rng::new(s), index, s, (2, 8), 6, &[1, 3], &[0, 1]);
    match index {
        0 => c.part = 1,
        1 => c.part = c.m,
        _ => {}
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    /// Largest observed error where the property is a tolerance check.
    pub max_err: Option<f64>,
    /// The first few failing configurations, ready to print for replay.
    pub failures: Vec<String>,
}

impl PropertyResult {
    fn new(name: &'static str) -> Self {
        PropertyResult {
            name,
            trials: 0,
            passed: 0,
            max_err: None,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, err: Option<f64>, describe: impl FnOnce() -> String) {
        self.trials += 1;
        if let Some(e) = err {
            self.max_err = Some(self.max_err.map_or(e, |m| m.max(e)));
        }
        if ok {
            self.passed += 1;
        } else if self.failures.len() < MAX_REPORTED_FAILURES {
            self.failures.push(describe());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(PropertyResult::ok)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.properties {
            let status = if p.ok() { "PASS" } else { "FAIL" };
            write!(f, "{status} {}: {}/{}", p.name, p.passed, p.trials)?;
            if let Some(e) = p.max_err {
                write!(f, " (max err {e:.3e})")?;
            }
            writeln!(f)?;
            for fail in &p.failures {
                writeln!(f, "  failing {fail}")?;
            }
        }
        let verdict = if self.all_passed() {
            "all properties passed"
        } else {
            "verification FAILED"
        };
        writeln!(f, "{verdict} (seed {})", self.seed)
    }
}

fn het_forward(
    x: &Tensor4,
    f: &HetConvFilterBank,
    counter: Option<&mut MulCounter>,
    fault: Option<Fault>,
) -> Result<Tensor4> {
    let mut y = hetconv_forward(x, f, counter)?;
    if fault == Some(Fault::Oracle) {
        y.data_mut()[0] += 1e-6;
    }
    Ok(y)
}

fn cost_input(c: &TrialConfig, ho: usize, wo: usize, n: usize) -> LayerCostInput {
    LayerCostInput {
        out_h: ho as u64,
        out_w: wo as u64,
        in_channels: c.m as u64,
        out_channels: n as u64,
        kernel: c.k as u64,
    }
}

struct OracleSuites {
    oracle: PropertyResult,
    counts: PropertyResult,
    linearity: PropertyResult,
}

fn run_oracle_trial(c: &TrialConfig, fault: Option<Fault>, s: &mut OracleSuites) -> Result<()> {
    let mut rng = Rng::new(c.seed ^ 0xA5A5);
    let g = c.geometry();
    let f = HetConvFilterBank::random(g, c.part, &mut rng, -1.0, 1.0)?;
    let x = Tensor4::random_uniform((c.batch, c.m, c.h, c.w), &mut rng, -1.0, 1.0)?;

    // Oracle equivalence.
    let mut het_count = MulCounter::new();
    let y = het_forward(&x, &f, Some(&mut het_count), fault)?;
    let mut dense_count = MulCounter::new();
    let oracle = conv2d_forward(&x, &embed_as_dense(&f), Some(&mut dense_count))?;
    let diff = y.max_abs_diff(&oracle)?;
    s.oracle
        .record(diff < ORACLE_TOL, Some(diff), || format!("{c}: max_abs_diff {diff:e}"));

    // Counts against the closed forms.
    let d = y.dims();
    let (ho, wo, b) = (d.h, d.w, c.batch as u64);
    let l = cost_input(c, ho, wo, c.n);
    let mut het_muls = het_count.count();
    if fault == Some(Fault::Count) {
        het_muls += 1;
    }
    let mut checks: Vec<(&str, u64, u64)> = vec![
        ("hetconv", het_muls, b * cost::flops_hetconv(&l, c.part as u64)?),
        ("standard", dense_count.count(), b * cost::flops_standard(&l)),
    ];
    let dw = GroupedFilterBank::random(
        ConvGeometry::new(c.m, c.m, c.k, c.stride, c.pad)?,
        c.m,
        &mut rng,
        -1.0,
        1.0,
    )?;
    let mut cnt = MulCounter::new();
    dwc_forward(&x, &dw, Some(&mut cnt))?;
    checks.push(("dwc", cnt.count(), b * cost::flops_dwc(&cost_input(c, ho, wo, c.m))));
    let pw = GroupedFilterBank::random(ConvGeometry::new(c.m, c.n, 1, 1, 0)?, 1, &mut rng, -1.0, 1.0)?;
    let mut cnt = MulCounter::new();
    pwc_forward(&x, &pw, Some(&mut cnt))?;
    let lp = LayerCostInput {
        out_h: c.h as u64,
        out_w: c.w as u64,
        kernel: 1,
        ..l
    };
    checks.push(("pwc", cnt.count(), b * cost::flops_pwc(&lp)));
    let groups = *rng.pick(&divisors(gcd(c.m, c.n)));
    let gw = GroupedFilterBank::random(g, groups, &mut rng, -1.0, 1.0)?;
    let mut cnt = MulCounter::new();
    gwc_forward(&x, &gw, Some(&mut cnt))?;
    checks.push(("gwc", cnt.count(), b * cost::flops_gwc(&l, groups as u64)?));
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name} counted {got}, closed form {want}"))
        .collect();
    s.counts
        .record(bad.is_empty(), None, || format!("{c}: {}", bad.join("; ")));

    // Linearity in the input (bias is zero).
    let (alpha, beta) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
    let x2 = Tensor4::random_uniform((c.batch, c.m, c.h, c.w), &mut rng, -1.0, 1.0)?;
    let mut mix = x.clone();
    for (v, w) in mix.data_mut().iter_mut().zip(x2.data()) {
        *v = alpha * *v + beta * w;
    }
    let lhs = het_forward(&mix, &f, None, fault)?;
    let y2 = het_forward(&x2, &f, None, fault)?;
    let mut rhs = y.clone();
    for (v, w) in rhs.data_mut().iter_mut().zip(y2.data()) {
        *v = alpha * *v + beta * w;
    }
    let scale = 1.0 + rhs.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let err = lhs.max_abs_diff(&rhs)? / scale;
    s.linearity.record(err < LINEARITY_TOL, Some(err), || {
        format!("{c}: relative deviation {err:e}")
    });
    Ok(())
}

fn params(f: &mut HetConvFilterBank, which: usize) -> &mut [f64] {
    match which {
        0 => f.kxk_mut(),
        1 => f.one_mut(),
        _ => f.bias_mut(),
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every input, weight and bias gradient of `Σ r ⊙ hetconv(x)` for a
/// random `r` against central differences. The loss is linear in each
/// coordinate, so the differences are exact up to rounding.
fn run_grad_trial(c: &TrialConfig, fault: Option<Fault>) -> Result<f64> {
    const H: f64 = 1e-5;
    let mut rng = Rng::new(c.seed ^ 0x5A5A);
    let g = c.geometry();
    let mut f = HetConvFilterBank::random(g, c.part, &mut rng, -1.0, 1.0)?;
    for b in f.bias_mut() {
        *b = rng.uniform(-1.0, 1.0);
    }
    let mut x = Tensor4::random_uniform((c.batch, c.m, c.h, c.w), &mut rng, -1.0, 1.0)?;
    let out = hetconv_forward(&x, &f, None)?;
    let d = out.dims();
    let r = Tensor4::random_uniform((d.n, d.c, d.h, d.w), &mut rng, -1.0, 1.0)?;
    let mut grads = hetconv_backward(&x, &f, &r)?;
    if fault == Some(Fault::Gradient) {
        for v in grads.kxk.iter_mut() {
            *v *= 1.0 + 1e-3;
        }
    }
    let loss = |x: &Tensor4, f: &HetConvFilterBank| -> Result<f64> {
        let y = hetconv_forward(x, f, None)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };
    let mut worst = 0.0f64;
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + H;
        let up = loss(&x, &f)?;
        x.data_mut()[i] = orig - H;
        let down = loss(&x, &f)?;
        x.data_mut()[i] = orig;
        worst = worst.max(rel_err(grads.input.data()[i], (up - down) / (2.0 * H)));
    }
    for (which, analytic) in [(0, &grads.kxk), (1, &grads.one), (2, &grads.bias)] {
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params(&mut f, which)[i];
            params(&mut f, which)[i] = orig + H;
            let up = loss(&x, &f)?;
            params(&mut f, which)[i] = orig - H;
            let down = loss(&x, &f)?;
            params(&mut f, which)[i] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * H)));
        }
    }
    Ok(worst)
}

/// Strict dominance of the HetConv reduction over both two-stage
/// alternatives at `P = M = N = G`, for `M ∈ [2, 512]`, `K ∈ {3, 5, 7}`.
fn dominance() -> (PropertyResult, PropertyResult) {
    let mut vs_dwc = PropertyResult::new("dominance_vs_dwc_pwc");
    let mut vs_gwc = PropertyResult::new("dominance_vs_gwc_pwc");
    for k in [3u64, 5, 7] {
        for m in 2u64..=512 {
            let het = reduction_hetconv(m, k);
            let (mob, grp) = (reduction_mobnet(m, k), reduction_group(m, k));
            vs_dwc.record(het < mob, None, || format!("M={m} K={k}: {het} >= {mob}"));
            vs_gwc.record(het < grp, None, || format!("G=P={m} K={k}: {het} >= {grp}"));
        }
    }
    (vs_dwc, vs_gwc)
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut suites = OracleSuites {
        oracle: PropertyResult::new("oracle_equivalence"),
        counts: PropertyResult::new("mac_counts"),
        linearity: PropertyResult::new("linearity"),
    };
    for i in 0..cfg.trials {
        run_oracle_trial(&oracle_trial(cfg.seed, i), cfg.fault, &mut suites)?;
    }
    let mut grads = PropertyResult::new("gradients");
    for i in 0..cfg.grad_trials {
        let c = grad_trial(cfg.seed, i);
        let err = run_grad_trial(&c, cfg.fault)?;
        grads.record(err < GRAD_TOL, Some(err), || format!("{c}: max relative error {err:e}"));
    }
    let (vs_dwc, vs_gwc) = dominance();
    Ok(VerifyReport {
        seed: cfg.seed,
        properties: vec![suites.oracle, suites.counts, suites.linearity, grads, vs_dwc, vs_gwc],
    })
}
