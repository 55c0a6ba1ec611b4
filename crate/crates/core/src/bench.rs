//! Wall-clock microbenchmark of one layer position under each substitution.
//!
//! Timings are reported, never gated: the kernels are naive loops and need
//! not realize the theoretical speedup. The MAC columns are exact.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::conv::{
    conv2d_forward, dwc_forward, gwc_forward, hetconv_forward, pwc_forward, ConvGeometry, DenseFilterBank,
    GroupedFilterBank, HetConvFilterBank, MulCounter,
};
use crate::cost::{reduction_hetconv, reduction_mobnet, to_f64, Fraction};
use crate::{Error, Result, Rng, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Standard,
    HetConv(usize),
    DwcPwc,
    GwcPwc(usize),
}

impl Variant {
    /// Extra sequential stages over a single standard conv.
    pub fn latency(&self) -> usize {
        match self {
            Variant::Standard | Variant::HetConv(_) => 0,
            Variant::DwcPwc | Variant::GwcPwc(_) => 1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Standard => write!(f, "standard"),
            Variant::HetConv(p) => write!(f, "hetconv:{p}"),
            Variant::DwcPwc => write!(f, "dwc+pwc"),
            Variant::GwcPwc(g) => write!(f, "gwc+pwc:{g}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// `standard`, `hetconv:P`, `dwc+pwc` or `gwc+pwc:G`.
    fn from_str(s: &str) -> Result<Variant> {
        let bad = || {
            Error::Geometry(format!(
                "unknown variant {s:?}; expected standard, hetconv:P, dwc+pwc or gwc+pwc:G"
            ))
        };
        let count = |v: &str| v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        match s.split_once(':') {
            None if s == "standard" => Ok(Variant::Standard),
            None if s == "dwc+pwc" => Ok(Variant::DwcPwc),
            Some(("hetconv", p)) => Ok(Variant::HetConv(count(p)?)),
            Some(("gwc+pwc", g)) => Ok(Variant::GwcPwc(count(g)?)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub reps: usize,
    pub seed: u64,
    pub variants: Vec<Variant>,
}

impl Default for BenchConfig {
    /// `M = N`, which the GWC+PWC prediction assumes.
    fn default() -> Self {
        BenchConfig {
            in_channels: 64,
            out_channels: 64,
            kernel: 3,
            stride: 1,
            padding: 1,
            height: 16,
            width: 16,
            batch: 1,
            reps: 5,
            seed: 0,
            variants: vec![
                Variant::Standard,
                Variant::HetConv(2),
                Variant::HetConv(4),
                Variant::HetConv(8),
                Variant::DwcPwc,
                Variant::GwcPwc(4),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub variant: String,
    /// `None` when the variant ran; otherwise why it was skipped.
    pub skipped: Option<String>,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    /// Multiplications per repetition (whole batch).
    pub macs: u64,
    #[serde(serialize_with = "ser_ratio")]
    pub mac_ratio: Option<Fraction>,
    /// Closed-form cost ratio against the standard conv.
    #[serde(serialize_with = "ser_ratio")]
    pub predicted_ratio: Option<Fraction>,
    pub latency: usize,
}

fn ser_ratio<S: serde::Serializer>(r: &Option<Fraction>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&r.to_string()),
        None => s.serialize_none(),
    }
}

impl BenchRow {
    pub fn ratio_matches(&self) -> bool {
        self.mac_ratio == self.predicted_ratio
    }
}

/// Closed-form ratio of `v` to a standard `K×K` conv at the same output
/// resolution. For GWC+PWC this is `M/(G·N) + 1/K²`, which is `1/G + 1/K²`
/// when `M = N`.
pub fn predicted_ratio(v: Variant, m: usize, n: usize, k: usize) -> Fraction {
    let (m, n, k) = (m as u64, n as u64, k as u64);
    match v {
        Variant::Standard => Fraction::from_integer(1),
        Variant::HetConv(p) => reduction_hetconv(p as u64, k),
        Variant::DwcPwc => reduction_mobnet(n, k),
        Variant::GwcPwc(g) => Fraction::new(m, g as u64 * n) + Fraction::new(1, k * k),
    }
}

const WEIGHT_RANGE: (f64, f64) = (-0.25, 0.25);

type Kernel = Box<dyn Fn(&Tensor4, Option<&mut MulCounter>) -> Result<Tensor4>>;

fn build(cfg: &BenchConfig, v: Variant, rng: &mut Rng) -> Result<Kernel> {
    let (lo, hi) = WEIGHT_RANGE;
    let (m, n, k, s, p) = (cfg.in_channels, cfg.out_channels, cfg.kernel, cfg.stride, cfg.padding);
    let g = ConvGeometry::new(m, n, k, s, p)?;
    Ok(match v {
        Variant::Standard => {
            let f = DenseFilterBank::random(g, rng, lo, hi)?;
            Box::new(move |x, c| conv2d_forward(x, &f, c))
        }
        Variant::HetConv(part) => {
            let f = HetConvFilterBank::random(g, part, rng, lo, hi)?;
            Box::new(move |x, c| hetconv_forward(x, &f, c))
        }
        Variant::DwcPwc | Variant::GwcPwc(_) => {
            let groups = match v {
                Variant::GwcPwc(g) => g,
                _ => m,
            };
            let first = GroupedFilterBank::random(ConvGeometry::new(m, m, k, s, p)?, groups, rng, lo, hi)?;
            let pw = GroupedFilterBank::random(ConvGeometry::new(m, n, 1, 1, 0)?, 1, rng, lo, hi)?;
            let depthwise = v == Variant::DwcPwc;
            Box::new(move |x, mut c| {
                let mid = if depthwise {
                    dwc_forward(x, &first, c.as_deref_mut())?
                } else {
                    gwc_forward(x, &first, c.as_deref_mut())?
                };
                pwc_forward(&mid, &pw, c)
            })
        }
    })
}

fn mean_stddev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every variant `reps` times on one shared input. A variant whose
/// geometry is invalid becomes a skipped row.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.reps == 0 {
        return Err(Error::Geometry("reps must be at least 1".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let x = Tensor4::random_uniform((cfg.batch, cfg.in_channels, cfg.height, cfg.width), &mut rng, -1.0, 1.0)?;
    let standard_macs = dense_macs(cfg).ok();
    let mut rows = Vec::with_capacity(cfg.variants.len());
    for &v in &cfg.variants {
        let mut row = BenchRow {
            variant: v.to_string(),
            skipped: None,
            mean_ms: 0.0,
            stddev_ms: 0.0,
            macs: 0,
            mac_ratio: None,
            predicted_ratio: None,
            latency: v.latency(),
        };
        let kernel = match build(cfg, v, &mut rng) {
            Ok(k) => k,
            Err(e) => {
                row.skipped = Some(e.to_string());
                rows.push(row);
                continue;
            }
        };
        let mut counter = MulCounter::new();
        if let Err(e) = kernel(&x, Some(&mut counter)) {
            row.skipped = Some(e.to_string());
            rows.push(row);
            continue;
        }
        row.macs = counter.count();
        row.mac_ratio = standard_macs.map(|s| Fraction::new(row.macs, s));
        row.predicted_ratio = Some(predicted_ratio(v, cfg.in_channels, cfg.out_channels, cfg.kernel));
        let mut times = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let t = Instant::now();
            std::hint::black_box(kernel(std::hint::black_box(&x), None)?);
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        (row.mean_ms, row.stddev_ms) = mean_stddev(&times);
        rows.push(row);
    }
    Ok(rows)
}

fn dense_macs(cfg: &BenchConfig) -> Result<u64> {
    let g = ConvGeometry::new(cfg.in_channels, cfg.out_channels, cfg.kernel, cfg.stride, cfg.padding)?;
    let (ho, wo) = g.output_size(cfg.height, cfg.width)?;
    Ok((cfg.batch * ho * wo * cfg.in_channels * cfg.out_channels * cfg.kernel * cfg.kernel) as u64)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    variant: &'a str,
    status: &'a str,
    mean_ms: String,
    stddev_ms: String,
    macs: u64,
    mac_ratio: String,
    predicted_ratio: String,
    mac_ratio_f64: String,
    latency: usize,
}

/// Header `variant,status,mean_ms,stddev_ms,macs,mac_ratio,predicted_ratio,mac_ratio_f64,latency`.
/// Ratios are exact `numer/denom`; skipped rows leave the numeric columns empty.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ratio = |r: Option<Fraction>| r.map(|r| r.to_string()).unwrap_or_default();
    for r in rows {
        let ran = r.skipped.is_none();
        let num = |v: f64| if ran { format!("{v:.4}") } else { String::new() };
        w.serialize(CsvRow {
            variant: &r.variant,
            status: r.skipped.as_deref().map_or("ok", |_| "skipped"),
            mean_ms: num(r.mean_ms),
            stddev_ms: num(r.stddev_ms),
            macs: r.macs,
            mac_ratio: ratio(r.mac_ratio),
            predicted_ratio: ratio(r.predicted_ratio),
            mac_ratio_f64: r.mac_ratio.map(|q| format!("{:.4}", to_f64(q))).unwrap_or_default(),
            latency: r.latency,
        })?;
    }
    w.flush()?;
    Ok(())
}
