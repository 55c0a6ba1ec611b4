use std::process::{Command, Output};

fn hetconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetconv"))
        .args(args)
        .env_remove("HETCONV_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = hetconv(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn summary(args: &[&str]) -> (f64, f64) {
    let text = stdout(args);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    (row[1].parse().unwrap(), row[3].parse().unwrap())
}

#[test]
fn analyze_vgg16_p4_and_p1() {
    let (flops, params) = summary(&["analyze", "vgg16-cifar", "--p", "4", "--summary"]);
    assert!(
        within(flops, 105.98e6, 0.02) && within(params, 5.17e6, 0.02),
        "{flops} {params}"
    );
    let (flops, params) = summary(&["analyze", "vgg16-cifar", "--p", "1", "--summary"]);
    assert!(
        within(flops, 313.74e6, 0.02) && within(params, 15.00e6, 0.02),
        "{flops} {params}"
    );
}

#[test]
fn analyze_vgg16_p3_fails_at_conv2() {
    let out = hetconv(&["analyze", "vgg16-cifar", "--p", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.contains("3 does not divide 64") && err.contains("at layer conv2"),
        "{err}"
    );
    assert!(out.stdout.is_empty());
}

#[test]
fn per_layer_report_has_reduction_row() {
    let text = stdout(&["analyze", "vgg16-cifar", "--p", "4"]);
    assert!(text.starts_with("layer,kind,flops,params,latency\nconv1,standard_conv,"));
    assert!(text.contains("\nconv2,hetconv,"));
    assert!(text.lines().last().unwrap().starts_with("reduced_pct,,66."));
    let plain = stdout(&["analyze", "vgg16-cifar"]);
    assert!(plain.lines().last().unwrap().starts_with("total,,313463808,"));
}

#[test]
fn transform_round_trip_preserves_report() {
    let dir = tempfile::tempdir().unwrap();
    for (arch, rewrite) in [
        ("vgg16-cifar", vec![]),
        ("resnet56-cifar", vec![]),
        ("resnet50-imagenet", vec![]),
        ("vgg16-cifar", vec!["--p", "4"]),
        ("mobilenet-cifar", vec!["--fuse", "32"]),
        ("resnet34-imagenet", vec!["--separable", "gwc:4"]),
    ] {
        let path = dir.path().join(format!("{arch}.jsonl"));
        let path_s = path.to_str().unwrap();
        let mut t = vec!["transform", arch];
        t.extend(&rewrite);
        t.extend(["-o", path_s]);
        stdout(&t);
        for format in ["csv", "json"] {
            let mut direct = vec!["analyze", arch, "--format", format, "--baseline", arch];
            direct.extend(&rewrite);
            let from_file = ["analyze", path_s, "--format", format, "--baseline", arch];
            assert_eq!(stdout(&direct), stdout(&from_file), "{arch} {rewrite:?} {format}");
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"format\":\"hetconv-arch\",\"version\":1"));
    }
}

#[test]
fn speedup_examples() {
    let text = stdout(&["speedup", "--k", "3", "--p-list", "1,2,4,8,16,32,64"]);
    let speedups: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(speedups, ["1.0", "1.8", "3.0", "4.5", "6.0", "7.2", "8.0"]);
    let ones = stdout(&["speedup", "--k", "1", "--p-list", "1,2,8"]);
    assert!(
        ones.lines().skip(1).all(|l| l.split(',').nth(2) == Some("1.0")),
        "{ones}"
    );
    let k5 = stdout(&["speedup", "--k", "5", "--p-list", "25"]);
    assert!(k5.contains("25,0.0784,12.755"), "{k5}");
    let svg = stdout(&["speedup", "--format", "svg"]);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let json: serde_json::Value =
        serde_json::from_str(&stdout(&["speedup", "--format", "json", "--p-list", "4"])).unwrap();
    assert_eq!(json[0]["speedup_exact"], "3");
}

#[test]
fn compare_table() {
    let text = stdout(&["compare", "--k", "3", "--p-list", "4"]);
    assert_eq!(text.lines().next().unwrap(), "P,R_hetconv,R_group,R_mobnet,speedup");
}

#[test]
fn latency_blocks() {
    let text = stdout(&["latency", "mobilenet-cifar"]);
    assert!(text
        .lines()
        .skip(2)
        .filter(|l| l.contains(".dw+"))
        .all(|l| l.ends_with(",1")));
    let het = stdout(&["latency", "vgg16-cifar", "--p", "4", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&het).unwrap();
    assert_eq!(v["max"], 0);
    assert_eq!(v["blocks"].as_array().unwrap().len(), 13);
}

#[test]
fn verify_passes_and_replays() {
    let args = ["verify", "--trials", "20", "--grad-trials", "3", "--seed", "7"];
    let a = stdout(&args);
    assert!(a.contains("PASS oracle_equivalence: 20/20"), "{a}");
    assert!(a.contains("all properties passed (seed 7)"));
    assert_eq!(a, stdout(&args));
    let env = Command::new(env!("CARGO_BIN_EXE_hetconv"))
        .args(["verify", "--trials", "20", "--grad-trials", "3"])
        .env("HETCONV_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(env.stdout).unwrap(), a);
}

#[test]
fn verify_fault_exits_one() {
    let out = hetconv(&[
        "verify",
        "--trials",
        "3",
        "--grad-trials",
        "1",
        "--inject-fault",
        "oracle",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("FAIL oracle_equivalence") && text.contains("failing trial 0 (seed "),
        "{text}"
    );
}

#[test]
fn bench_ratios_and_skips() {
    let text = stdout(&[
        "bench",
        "--layer",
        "8,8,3,1,1,6,6",
        "--reps",
        "1",
        "--variants",
        "standard,hetconv:4,hetconv:3,dwc+pwc",
    ]);
    let row = |v: &str| {
        text.lines()
            .find(|l| l.starts_with(&format!("{v},")))
            .unwrap()
            .to_string()
    };
    assert!(row("standard").ends_with(",1,1,1.0000,0"));
    assert!(row("hetconv:4").ends_with(",1/3,1/3,0.3333,0"));
    assert!(row("hetconv:3").starts_with("hetconv:3,skipped,"));
    assert!(row("dwc+pwc").ends_with(",1"));
    assert_eq!(hetconv(&["bench", "--variants", "nope"]).status.code(), Some(2));
}

#[test]
fn table_output_is_deterministic() {
    for args in [
        &["analyze", "resnet56-cifar", "--p", "4", "--format", "json"][..],
        &["compare", "--format", "json"],
        &["latency", "resnet50-imagenet", "--separable", "dwc"],
    ] {
        assert_eq!(stdout(args), stdout(args));
    }
}

#[test]
fn train_toy_small_run() {
    let args = [
        "train-toy",
        "--parts",
        "1,2",
        "--epochs",
        "1",
        "--train-per-class",
        "4",
        "--val-per-class",
        "2",
        "--batch-size",
        "8",
    ];
    let text = stdout(&args);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "P,model,final_val_acc,gap,flops,params,flop_ratio"
    );
    assert!(lines.next().unwrap().starts_with("1,toynet,"));
    assert!(lines.next().unwrap().starts_with("2,toynet-p2,"));
    assert_eq!(text, stdout(&args));
    assert_eq!(hetconv(&["train-toy", "--momentum", "1.5"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["analyze", "vgg16-cifar", "--bogus"][..],
        &["analyze", "no-such-arch"],
        &["analyze", "vgg16-cifar", "--p", "pd"],
        &["analyze", "vgg16-cifar", "--p", "4", "--separable", "dwc"],
        &["speedup", "--k", "4"],
        &["speedup", "--format", "xml"],
        &["frobnicate"],
    ] {
        assert_eq!(hetconv(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn parse_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(
        &path,
        "{\"format\":\"hetconv-arch\",\"version\":1,\"name\":\"x\",\"input\":[3,8,8]}\n{\"name\":\"c\",\"kind\":\"warp_conv\"}\n",
    )
    .unwrap();
    let out = hetconv(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 2"));
}
