//! `hetconv` command-line driver.
//!
//! Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
//! input error.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetconv::arch::{
    builtin, cost_report, emit_arch, fuse_separable, hetconvify, latency_chain, parse_arch, separate,
    write_summary_csv, ArchSpec, PartPolicy, Separable, BUILTIN_NAMES,
};
use hetconv::bench::{run_bench, write_bench_csv, BenchConfig, Variant};
use hetconv::cost::{
    comparison_json, comparison_table, speedup_curve, speedup_json, speedup_svg, write_comparison_csv,
    write_speedup_csv,
};
use hetconv::train::{compare_convergence, write_convergence_csv, TrainConfig};
use hetconv::verify::{run_verify, Fault, VerifyConfig};
use hetconv::Error;
use serde::Serialize;

const SEED_ENV: &str = "HETCONV_SEED";

#[derive(Parser)]
#[command(
    name = "hetconv",
    version,
    about = "HetConv kernels, cost model and architecture tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer MAC, parameter and latency report.
    Analyze(AnalyzeArgs),
    /// Applies a rewrite and prints the architecture config.
    Transform(TransformArgs),
    /// HetConv speedup over standard convolution for a list of P.
    Speedup(SpeedupArgs),
    /// HetConv, GWC+PWC and DWC+PWC reduction ratios side by side.
    Compare(CompareArgs),
    /// Sequential-stage latency per block.
    Latency(LatencyArgs),
    /// Runs the seeded property suites.
    Verify(VerifyArgs),
    /// Times one layer position under each substitution.
    Bench(BenchArgs),
    /// Trains the toy network and its HetConv twins.
    TrainToy(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyFormat {
    Text,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    /// Write to this file instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RewriteArgs {
    /// Replace K×K standard convs with HetConv of this part: a number or `pc`
    /// (P equal to each layer's input channels).
    #[arg(long, value_name = "P|pc", value_parser = parse_part)]
    p: Option<PartPolicy>,
    /// Replace K×K standard convs with `dwc` or `gwc:G` followed by a pointwise conv.
    #[arg(long, value_name = "dwc|gwc:G", value_parser = parse_separable, conflicts_with = "p")]
    separable: Option<Separable>,
    /// Fuse each depthwise/groupwise + pointwise pair into HetConv of this part.
    #[arg(long, value_name = "P|pc", value_parser = parse_part, conflicts_with_all = ["p", "separable"])]
    fuse: Option<PartPolicy>,
    /// Keep the first conv layer (the default).
    #[arg(long, conflicts_with = "include_first")]
    skip_first: bool,
    /// Also rewrite the first conv layer.
    #[arg(long)]
    include_first: bool,
}

impl RewriteArgs {
    fn is_identity(&self) -> bool {
        self.p.is_none() && self.separable.is_none() && self.fuse.is_none()
    }

    fn apply(&self, a: &ArchSpec) -> hetconv::Result<ArchSpec> {
        let skip_first = !self.include_first;
        let mut out = if let Some(policy) = self.p {
            hetconvify(a, policy, skip_first)?
        } else if let Some(kind) = self.separable {
            separate(a, kind, skip_first)?
        } else if let Some(policy) = self.fuse {
            fuse_separable(a, policy)?
        } else {
            return Ok(a.clone());
        };
        let suffix = match (self.p.or(self.fuse), self.separable) {
            (Some(PartPolicy::Fixed(p)), _) => format!("hetconv-p{p}"),
            (Some(PartPolicy::InputChannels), _) => "hetconv-pc".to_string(),
            (None, Some(Separable::Depthwise)) => "dwc-pwc".to_string(),
            (None, Some(Separable::Grouped(g))) => format!("gwc{g}-pwc"),
            (None, None) => unreachable!("identity handled above"),
        };
        out.name = format!("{}-{suffix}", a.name);
        Ok(out)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Builtin name or path to an architecture config.
    arch: String,
    #[command(flatten)]
    rewrite: RewriteArgs,
    /// Baseline for the reduction columns. Defaults to the untransformed
    /// architecture when a rewrite is requested.
    #[arg(long)]
    baseline: Option<String>,
    /// Emit a single summary row instead of the per-layer table.
    #[arg(long)]
    summary: bool,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct TransformArgs {
    /// Builtin name or path to an architecture config.
    arch: String,
    #[command(flatten)]
    rewrite: RewriteArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SpeedupArgs {
    #[arg(long, default_value_t = 3)]
    k: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    p_list: Vec<u64>,
    #[arg(long, value_enum, default_value_t = CurveFormat::Csv)]
    format: CurveFormat,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value_t = 3)]
    k: u64,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
    p_list: Vec<u64>,
    /// Output channels N for the DWC+PWC column; defaults to N = P.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct LatencyArgs {
    /// Builtin name or path to an architecture config.
    arch: String,
    #[command(flatten)]
    rewrite: RewriteArgs,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Oracle, count and linearity trials.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Finite-difference gradient trials.
    #[arg(long, default_value_t = 20)]
    grad_trials: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Negative control: inject a defect (oracle, count or gradient).
    #[arg(long, hide = true, value_parser = parse_fault)]
    inject_fault: Option<Fault>,
    #[arg(long, value_enum, default_value_t = VerifyFormat::Text)]
    format: VerifyFormat,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Layer geometry `M,N,K,STRIDE,PAD,H,W`.
    #[arg(long, default_value = "64,64,3,1,1,16,16", value_parser = parse_layer)]
    layer: [usize; 7],
    /// Comma-separated variants: standard, hetconv:P, dwc+pwc, gwc+pwc:G.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "standard,hetconv:2,hetconv:4,hetconv:8,dwc+pwc,gwc+pwc:4"
    )]
    variants: Vec<String>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// HetConv parts to train next to the standard net (`1` is the standard net).
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    parts: Vec<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Weight initialization and shuffle seed.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    val_per_class: Option<usize>,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    #[command(flatten)]
    out: OutputArgs,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            decay_every: self.decay_every.unwrap_or(d.decay_every),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            momentum: self.momentum.unwrap_or(d.momentum),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(d.seed),
            data_seed: self.data_seed.unwrap_or(d.data_seed),
            train_per_class: self.train_per_class.unwrap_or(d.train_per_class),
            val_per_class: self.val_per_class.unwrap_or(d.val_per_class),
        }
    }
}

fn parse_part(s: &str) -> Result<PartPolicy, String> {
    if s == "pc" {
        return Ok(PartPolicy::InputChannels);
    }
    match s.parse::<usize>() {
        Ok(p) if p > 0 => Ok(PartPolicy::Fixed(p)),
        _ => Err(format!("expected a positive integer or `pc`, got {s:?}")),
    }
}

fn parse_separable(s: &str) -> Result<Separable, String> {
    if s == "dwc" {
        return Ok(Separable::Depthwise);
    }
    match s.strip_prefix("gwc:").map(str::parse::<usize>) {
        Some(Ok(g)) if g > 0 => Ok(Separable::Grouped(g)),
        _ => Err(format!("expected `dwc` or `gwc:G`, got {s:?}")),
    }
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    Fault::parse(s).ok_or_else(|| format!("unknown fault {s:?}"))
}

fn parse_layer(s: &str) -> Result<[usize; 7], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad number {v:?} in layer geometry"))
        })
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| "layer geometry is M,N,K,STRIDE,PAD,H,W".to_string())
}

fn load_arch(spec: &str) -> hetconv::Result<ArchSpec> {
    if BUILTIN_NAMES.contains(&spec) {
        return builtin(spec);
    }
    match fs::read_to_string(spec) {
        Ok(text) => parse_arch(&text),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(Error::Arch(format!(
            "{spec:?} is neither a builtin ({}) nor an existing file",
            BUILTIN_NAMES.join(", ")
        ))),
        Err(e) => Err(e.into()),
    }
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("value serializes");
    out.push(b'\n');
    out
}

fn emit(out: &OutputArgs, bytes: &[u8]) -> hetconv::Result<()> {
    match &out.output {
        Some(path) => fs::write(path, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> hetconv::Result<Vec<u8>> {
    let original = load_arch(&args.arch)?;
    let a = args.rewrite.apply(&original)?;
    let baseline = match &args.baseline {
        Some(b) => Some(load_arch(b)?),
        None if !args.rewrite.is_identity() => Some(original),
        None => None,
    };
    let report = cost_report(&a, baseline.as_ref())?;
    let mut buf = Vec::new();
    match (args.format, args.summary) {
        (TableFormat::Csv, false) => report.write_csv(&mut buf)?,
        (TableFormat::Csv, true) => write_summary_csv(&[report.summary_row()], &mut buf)?,
        (TableFormat::Json, false) => buf = json_bytes(&report),
        (TableFormat::Json, true) => buf = json_bytes(&report.summary_row()),
    }
    Ok(buf)
}

#[derive(Serialize)]
struct LatencyRow {
    block: String,
    stages: String,
    latency: usize,
}

fn latency(args: &LatencyArgs) -> hetconv::Result<Vec<u8>> {
    let a = args.rewrite.apply(&load_arch(&args.arch)?)?;
    a.validate()?;
    let report = latency_chain(&a);
    let rows: Vec<LatencyRow> = report
        .blocks
        .iter()
        .map(|b| LatencyRow {
            block: b.name.clone(),
            stages: b
                .layers
                .iter()
                .map(|&i| a.layers[i].name.as_str())
                .collect::<Vec<_>>()
                .join("+"),
            latency: b.latency,
        })
        .collect();
    Ok(match args.format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r)?;
            }
            w.into_inner().map_err(|e| e.into_error())?
        }
        TableFormat::Json => json_bytes(&serde_json::json!({ "name": a.name, "max": report.max, "blocks": rows })),
    })
}

fn speedup(args: &SpeedupArgs) -> hetconv::Result<Vec<u8>> {
    let points = speedup_curve(args.k, &args.p_list)?;
    let mut buf = Vec::new();
    match args.format {
        CurveFormat::Csv => write_speedup_csv(&points, &mut buf)?,
        CurveFormat::Json => buf = json_bytes(&speedup_json(&points)),
        CurveFormat::Svg => buf = speedup_svg(args.k, &points).into_bytes(),
    }
    Ok(buf)
}

fn compare(args: &CompareArgs) -> hetconv::Result<Vec<u8>> {
    let rows = comparison_table(args.k, &args.p_list, args.n)?;
    let mut buf = Vec::new();
    match args.format {
        TableFormat::Csv => write_comparison_csv(&rows, &mut buf)?,
        TableFormat::Json => buf = json_bytes(&comparison_json(&rows)),
    }
    Ok(buf)
}

fn bench(args: &BenchArgs) -> hetconv::Result<Vec<u8>> {
    let [m, n, k, stride, pad, h, w] = args.layer;
    let variants = args
        .variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<hetconv::Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        in_channels: m,
        out_channels: n,
        kernel: k,
        stride,
        padding: pad,
        height: h,
        width: w,
        batch: args.batch,
        reps: args.reps,
        seed: args.seed,
        variants,
    };
    let rows = run_bench(&cfg)?;
    let mut buf = Vec::new();
    match args.format {
        TableFormat::Csv => write_bench_csv(&rows, &mut buf)?,
        TableFormat::Json => buf = json_bytes(&rows),
    }
    Ok(buf)
}

fn train_toy(args: &TrainArgs) -> hetconv::Result<Vec<u8>> {
    let rows = compare_convergence(&args.parts, &args.config())?;
    let mut buf = Vec::new();
    match args.format {
        TableFormat::Csv => write_convergence_csv(&rows, &mut buf)?,
        TableFormat::Json => buf = json_bytes(&rows),
    }
    Ok(buf)
}

/// Returns the output bytes and whether the command succeeded.
fn run(cmd: &Command) -> hetconv::Result<(Vec<u8>, &OutputArgs, bool)> {
    Ok(match cmd {
        Command::Analyze(a) => (analyze(a)?, &a.out, true),
        Command::Transform(a) => {
            let arch = a.rewrite.apply(&load_arch(&a.arch)?)?;
            (emit_arch(&arch).into_bytes(), &a.out, true)
        }
        Command::Speedup(a) => (speedup(a)?, &a.out, true),
        Command::Compare(a) => (compare(a)?, &a.out, true),
        Command::Latency(a) => (latency(a)?, &a.out, true),
        Command::Verify(a) => {
            let report = run_verify(&VerifyConfig {
                trials: a.trials,
                grad_trials: a.grad_trials,
                seed: a.seed,
                fault: a.inject_fault,
            })?;
            let bytes = match a.format {
                VerifyFormat::Text => report.to_string().into_bytes(),
                VerifyFormat::Json => json_bytes(&report),
            };
            (bytes, &a.out, report.all_passed())
        }
        Command::Bench(a) => (bench(a)?, &a.out, true),
        Command::TrainToy(a) => (train_toy(a)?, &a.out, true),
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::NonFiniteLoss { .. } | Error::Json(_) | Error::Csv(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli.command).and_then(|(bytes, out, ok)| emit(out, &bytes).map(|()| ok));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
