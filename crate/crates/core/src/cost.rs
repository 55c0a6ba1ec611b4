//! Closed-form cost model.
//!
//! Counts are multiply-accumulates per batch item for one layer; additions
//! and bias terms are not counted. Reduction ratios are exact rationals.
//!
//! | variant   | MACs                               | reduction vs standard   |
//! |-----------|------------------------------------|-------------------------|
//! | standard  | `D²·M·N·K²`                        | `1`                     |
//! | HetConv   | `D²·N·(M·K²/P + M − M/P)`          | `1/P + (1 − 1/P)/K²`    |
//! | DWC + PWC | `D²·M·K² + D²·M·N`                 | `1/N + 1/K²`            |
//! | GWC + PWC | `D²·M·N·K²/G + D²·M·N`             | `1/G + 1/K²`            |
//!
//! The GWC+PWC row counts its groupwise stage as mapping `M→N`. A real
//! replacement keeps the groupwise stage at `M→M`, so the row and its ratio
//! describe real layers only when `M = N`.

use std::fmt::Write as _;
use std::io::Write;

use num_rational::Ratio;
use serde::Serialize;

use crate::{Error, Result};

pub type Fraction = Ratio<u64>;

/// Shape of one layer for cost purposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCostInput {
    pub out_h: u64,
    pub out_w: u64,
    pub in_channels: u64,
    pub out_channels: u64,
    pub kernel: u64,
}

impl LayerCostInput {
    /// Square `D_o × D_o` output.
    pub fn square(d_out: u64, in_channels: u64, out_channels: u64, kernel: u64) -> Self {
        LayerCostInput {
            out_h: d_out,
            out_w: d_out,
            in_channels,
            out_channels,
            kernel,
        }
    }

    fn area(&self) -> u64 {
        self.out_h * self.out_w
    }

    fn k2(&self) -> u64 {
        self.kernel * self.kernel
    }
}

fn divides(divisor_name: &'static str, divisor: u64, value_name: &'static str, value: u64) -> Result<()> {
    if divisor == 0 || !value.is_multiple_of(divisor) {
        return Err(Error::Divisibility {
            divisor_name,
            divisor: divisor as usize,
            value_name,
            value: value as usize,
            layer: None,
        });
    }
    Ok(())
}

pub fn flops_standard(l: &LayerCostInput) -> u64 {
    l.area() * l.in_channels * l.out_channels * l.k2()
}

/// `K×K` part of a HetConv layer: `FL_S / P`.
pub fn flops_hetconv_kxk(l: &LayerCostInput, part: u64) -> Result<u64> {
    divides("P", part, "input channels", l.in_channels)?;
    Ok(l.area() * l.out_channels * (l.in_channels / part) * l.k2())
}

/// `1×1` part of a HetConv layer: `D²·N·(M − M/P)`.
pub fn flops_hetconv_one(l: &LayerCostInput, part: u64) -> Result<u64> {
    divides("P", part, "input channels", l.in_channels)?;
    Ok(l.area() * l.out_channels * (l.in_channels - l.in_channels / part))
}

pub fn flops_hetconv(l: &LayerCostInput, part: u64) -> Result<u64> {
    if part > l.in_channels {
        return Err(Error::Geometry(format!(
            "part P={part} exceeds {} input channels",
            l.in_channels
        )));
    }
    Ok(flops_hetconv_kxk(l, part)? + flops_hetconv_one(l, part)?)
}

/// Depthwise stage alone: `D²·M·K²`.
pub fn flops_dwc(l: &LayerCostInput) -> u64 {
    l.area() * l.in_channels * l.k2()
}

/// Pointwise stage alone: `D²·M·N`.
pub fn flops_pwc(l: &LayerCostInput) -> u64 {
    l.area() * l.in_channels * l.out_channels
}

/// Groupwise stage alone: `D²·M·N·K²/G`.
pub fn flops_gwc(l: &LayerCostInput, groups: u64) -> Result<u64> {
    divides("G", groups, "input channels", l.in_channels)?;
    divides("G", groups, "output channels", l.out_channels)?;
    Ok(l.area() * (l.in_channels / groups) * l.out_channels * l.k2())
}

/// Depthwise followed by pointwise: `D²·M·K² + D²·M·N`.
///
/// The depthwise term has no factor of `N` because each input channel gets
/// exactly one `K×K` kernel.
pub fn flops_dwc_pwc(l: &LayerCostInput) -> u64 {
    flops_dwc(l) + flops_pwc(l)
}

/// Groupwise followed by pointwise: `D²·M·N·K²/G + D²·M·N`.
pub fn flops_gwc_pwc(l: &LayerCostInput, groups: u64) -> Result<u64> {
    Ok(flops_gwc(l, groups)? + flops_pwc(l))
}

pub fn params_standard(m: u64, n: u64, k: u64, bias: bool) -> u64 {
    n * m * k * k + if bias { n } else { 0 }
}

pub fn params_hetconv(m: u64, n: u64, k: u64, part: u64, bias: bool) -> Result<u64> {
    divides("P", part, "input channels", m)?;
    Ok(n * ((m / part) * k * k + m - m / part) + if bias { n } else { 0 })
}

pub fn params_grouped(m: u64, n: u64, k: u64, groups: u64, bias: bool) -> Result<u64> {
    divides("G", groups, "input channels", m)?;
    divides("G", groups, "output channels", n)?;
    Ok(n * (m / groups) * k * k + if bias { n } else { 0 })
}

pub fn params_fc(inputs: u64, outputs: u64) -> u64 {
    inputs * outputs + outputs
}

/// `1/P + (1 − 1/P)/K²`, i.e. `(K² + P − 1) / (P·K²)`.
pub fn reduction_hetconv(part: u64, k: u64) -> Fraction {
    assert!(part >= 1 && k >= 1, "P and K must be at least 1");
    Fraction::new(k * k + part - 1, part * k * k)
}

/// `1/N + 1/K²`.
pub fn reduction_mobnet(n: u64, k: u64) -> Fraction {
    assert!(n >= 1 && k >= 1, "N and K must be at least 1");
    Fraction::new(1, n) + Fraction::new(1, k * k)
}

/// `1/G + 1/K²`.
pub fn reduction_group(groups: u64, k: u64) -> Fraction {
    assert!(groups >= 1 && k >= 1, "G and K must be at least 1");
    Fraction::new(1, groups) + Fraction::new(1, k * k)
}

pub fn speedup(reduction: Fraction) -> Fraction {
    reduction.recip()
}

pub fn to_f64(r: Fraction) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpeedupPoint {
    pub part: u64,
    pub reduction: Fraction,
    pub speedup: Fraction,
}

pub fn speedup_curve(k: u64, parts: &[u64]) -> Result<Vec<SpeedupPoint>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Geometry(format!("kernel size must be odd, got {k}")));
    }
    parts
        .iter()
        .map(|&part| {
            if part == 0 {
                return Err(Error::Geometry("part P must be at least 1".into()));
            }
            let reduction = reduction_hetconv(part, k);
            Ok(SpeedupPoint {
                part,
                reduction,
                speedup: speedup(reduction),
            })
        })
        .collect()
}

/// One row of the HetConv / GWC+PWC / DWC+PWC comparison at `P = G`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonRow {
    pub part: u64,
    pub r_hetconv: Fraction,
    pub r_group: Fraction,
    pub r_mobnet: Fraction,
    pub speedup: Fraction,
}

/// Compares the three variants for each `P`, with `G = P`. `out_channels`
/// sets `N` for the DWC+PWC term; `None` uses `N = P` (the `P = M = N`
/// extreme case).
pub fn comparison_table(k: u64, parts: &[u64], out_channels: Option<u64>) -> Result<Vec<ComparisonRow>> {
    speedup_curve(k, parts).map(|points| {
        points
            .into_iter()
            .map(|p| ComparisonRow {
                part: p.part,
                r_hetconv: p.reduction,
                r_group: reduction_group(p.part, k),
                r_mobnet: reduction_mobnet(out_channels.unwrap_or(p.part), k),
                speedup: p.speedup,
            })
            .collect()
    })
}

#[derive(Serialize)]
struct CurveRecord {
    #[serde(rename = "P")]
    part: u64,
    #[serde(rename = "R_hetconv")]
    r_hetconv: f64,
    #[serde(rename = "R_group")]
    r_group: f64,
    #[serde(rename = "R_mobnet")]
    r_mobnet: f64,
    speedup: f64,
}

#[derive(Serialize)]
struct CurveJson {
    #[serde(rename = "P")]
    part: u64,
    #[serde(rename = "R_hetconv")]
    r_hetconv: f64,
    #[serde(rename = "R_group")]
    r_group: f64,
    #[serde(rename = "R_mobnet")]
    r_mobnet: f64,
    speedup: f64,
    exact: ExactJson,
}

#[derive(Serialize)]
struct ExactJson {
    #[serde(rename = "R_hetconv")]
    r_hetconv: String,
    #[serde(rename = "R_group")]
    r_group: String,
    #[serde(rename = "R_mobnet")]
    r_mobnet: String,
    speedup: String,
}

/// CSV with header `P,R_hetconv,R_group,R_mobnet,speedup`.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(CurveRecord {
            part: r.part,
            r_hetconv: to_f64(r.r_hetconv),
            r_group: to_f64(r.r_group),
            r_mobnet: to_f64(r.r_mobnet),
            speedup: to_f64(r.speedup),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// JSON array of rows; each row carries float columns plus an `exact`
/// object with the same values as `numer/denom` strings.
pub fn comparison_json(rows: &[ComparisonRow]) -> serde_json::Value {
    let records: Vec<CurveJson> = rows
        .iter()
        .map(|r| CurveJson {
            part: r.part,
            r_hetconv: to_f64(r.r_hetconv),
            r_group: to_f64(r.r_group),
            r_mobnet: to_f64(r.r_mobnet),
            speedup: to_f64(r.speedup),
            exact: ExactJson {
                r_hetconv: r.r_hetconv.to_string(),
                r_group: r.r_group.to_string(),
                r_mobnet: r.r_mobnet.to_string(),
                speedup: r.speedup.to_string(),
            },
        })
        .collect();
    serde_json::to_value(records).expect("rows serialize")
}

#[derive(Serialize)]
struct SpeedupRecord {
    #[serde(rename = "P")]
    part: u64,
    reduction: f64,
    speedup: f64,
    reduction_exact: String,
    speedup_exact: String,
}

fn speedup_records(points: &[SpeedupPoint]) -> Vec<SpeedupRecord> {
    points
        .iter()
        .map(|p| SpeedupRecord {
            part: p.part,
            reduction: to_f64(p.reduction),
            speedup: to_f64(p.speedup),
            reduction_exact: p.reduction.to_string(),
            speedup_exact: p.speedup.to_string(),
        })
        .collect()
}

/// CSV with header `P,reduction,speedup,reduction_exact,speedup_exact`.
pub fn write_speedup_csv<W: Write>(points: &[SpeedupPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in speedup_records(points) {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn speedup_json(points: &[SpeedupPoint]) -> serde_json::Value {
    serde_json::to_value(speedup_records(points)).expect("points serialize")
}

/// Minimal SVG line chart of speedup against `P` (log2-spaced x axis).
pub fn speedup_svg(k: u64, points: &[SpeedupPoint]) -> String {
    let (width, height, margin) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = points.iter().map(|p| (p.part as f64).log2()).collect();
    let ys: Vec<f64> = points.iter().map(|p| to_f64(p.speedup)).collect();
    let x_max = xs.iter().cloned().fold(1.0, f64::max);
    let y_max = ys.iter().cloned().fold(1.0, f64::max).ceil();
    let px = |x: f64| margin + x / x_max * (width - 2.0 * margin);
    let py = |y: f64| height - margin - y / y_max * (height - 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    );
    let path: Vec<String> = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        path.join(" ")
    );
    for (p, (&x, &y)) in points.iter().zip(xs.iter().zip(&ys)) {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            px(x),
            py(y),
            px(x),
            height - margin + 14.0,
            p.part
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">P (K={k})</text>"#,
        width / 2.0,
        height - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">speedup (max {y_max})</text>"#,
        height / 2.0,
        height / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_examples() {
        assert_eq!(flops_standard(&LayerCostInput::square(32, 64, 64, 3)), 37_748_736);
        assert_eq!(flops_standard(&LayerCostInput::square(7, 5, 3, 1)), 49 * 5 * 3);
        assert_eq!(flops_standard(&LayerCostInput::square(1, 1, 1, 1)), 1);
    }

    #[test]
    fn hetconv_examples() {
        let l = LayerCostInput::square(32, 64, 64, 3);
        assert_eq!(flops_hetconv(&l, 1).unwrap(), flops_standard(&l));
        // FL_K = FL_S / 4 = 9,437,184 and FL_1 = 1024·64·48 = 3,145,728.
        assert_eq!(flops_hetconv_kxk(&l, 4).unwrap(), 9_437_184);
        assert_eq!(flops_hetconv_one(&l, 4).unwrap(), 3_145_728);
        assert_eq!(flops_hetconv(&l, 4).unwrap(), 12_582_912);
        assert!(matches!(flops_hetconv(&l, 3), Err(Error::Divisibility { .. })));
        assert!(flops_hetconv(&l, 128).is_err());
    }

    #[test]
    fn reductions() {
        assert_eq!(reduction_hetconv(1, 3), Fraction::from_integer(1));
        assert_eq!(reduction_hetconv(4, 3), Fraction::new(1, 3));
        assert_eq!(speedup(reduction_hetconv(4, 3)), Fraction::from_integer(3));
        for p in [1, 2, 7, 64, 1000] {
            assert!(reduction_hetconv(p, 3) > Fraction::new(1, 9));
        }
        let r = to_f64(reduction_mobnet(64, 3));
        assert!((r - (1.0 / 64.0 + 1.0 / 9.0)).abs() < 1e-15);
        assert!((r - 0.12674).abs() < 5e-6);
        assert_eq!(reduction_mobnet(5, 1), Fraction::new(6, 5));
        assert_eq!(reduction_group(1, 3), Fraction::new(10, 9));
        assert_eq!(reduction_group(4, 3), Fraction::new(13, 36));
        assert!((to_f64(reduction_group(4, 3)) - 0.3611).abs() < 1e-4);
    }

    #[test]
    fn curve_values() {
        let pts = speedup_curve(3, &[1, 2, 4, 8, 16, 32, 64]).unwrap();
        let got: Vec<f64> = pts.iter().map(|p| to_f64(p.speedup)).collect();
        let want = [1.0, 1.8, 3.0, 4.5, 6.0, 7.2, 8.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
        for w in pts.windows(2) {
            assert!(w[1].speedup > w[0].speedup);
        }
        assert!(speedup_curve(1, &[1, 4, 64])
            .unwrap()
            .iter()
            .all(|p| p.speedup == Fraction::from_integer(1)));
        let five = speedup_curve(5, &[25]).unwrap()[0];
        assert_eq!(five.reduction, Fraction::new(49, 625));
        assert!((to_f64(five.speedup) - 12.755).abs() < 1e-3);
        assert!(speedup_curve(2, &[1]).is_err());
        assert!(speedup_curve(3, &[0]).is_err());
    }

    #[test]
    fn pair_counts() {
        let l = LayerCostInput::square(8, 16, 32, 3);
        assert_eq!(flops_dwc_pwc(&l), 64 * 16 * 9 + 64 * 16 * 32);
        assert_eq!(flops_gwc_pwc(&l, 4).unwrap(), 64 * 16 * 32 * 9 / 4 + 64 * 16 * 32);
        assert!(flops_gwc_pwc(&l, 3).is_err());
    }

    #[test]
    fn params() {
        assert_eq!(params_standard(64, 64, 3, true), 36_928);
        assert_eq!(params_hetconv(64, 64, 3, 1, true).unwrap(), 36_928);
        assert_eq!(params_hetconv(64, 64, 3, 4, false).unwrap(), 64 * (16 * 9 + 48));
        assert_eq!(params_grouped(16, 16, 3, 16, false).unwrap(), 144);
        assert_eq!(params_fc(512, 10), 5130);
    }

    #[test]
    fn csv_layout() {
        let rows = comparison_table(3, &[4], None).unwrap();
        let mut buf = Vec::new();
        write_comparison_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("P,R_hetconv,R_group,R_mobnet,speedup"));
        assert_eq!(
            lines.next(),
            Some("4,0.3333333333333333,0.3611111111111111,0.3611111111111111,3.0")
        );
        let json = comparison_json(&rows);
        assert_eq!(json[0]["exact"]["R_hetconv"], "1/3");
    }

    #[test]
    fn speedup_csv_layout() {
        let points = speedup_curve(3, &[1, 4]).unwrap();
        let mut out = Vec::new();
        write_speedup_csv(&points, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "P,reduction,speedup,reduction_exact,speedup_exact\n1,1.0,1.0,1,1\n4,0.3333333333333333,3.0,1/3,3\n"
        );
        assert_eq!(speedup_json(&points)[1]["speedup_exact"], "3");
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = speedup_svg(3, &speedup_curve(3, &[1, 2, 4]).unwrap());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
