use std::io::Write;

use serde::Serialize;

use crate::arch::{latency_chain, ArchSpec, LayerKind, LayerOp, Shape3};
use crate::conv::ConvGeometry;
use crate::cost::{self, LayerCostInput};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub kind: LayerKind,
    pub flops: u64,
    pub params: u64,
    pub latency_units: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reduction {
    pub baseline: String,
    pub baseline_flops: u64,
    pub baseline_params: u64,
    /// `100·(1 − flops / baseline_flops)`.
    pub flops_pct: f64,
    pub params_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub name: String,
    pub rows: Vec<CostRow>,
    pub total_flops: u64,
    pub total_params: u64,
    pub max_latency: usize,
    pub reduction: Option<Reduction>,
}

/// One model line in the usual comparison-table layout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: String,
    pub flops: u64,
    pub flops_reduced_pct: Option<f64>,
    pub params: u64,
    pub params_reduced_pct: Option<f64>,
}

impl Serialize for LayerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

fn conv_input(output: Shape3, g: &ConvGeometry) -> LayerCostInput {
    LayerCostInput {
        out_h: output.h as u64,
        out_w: output.w as u64,
        in_channels: g.in_channels as u64,
        out_channels: g.out_channels as u64,
        kernel: g.kernel as u64,
    }
}

fn layer_cost(op: &LayerOp, output: Shape3) -> Result<(u64, u64)> {
    Ok(match *op {
        LayerOp::StandardConv(g) | LayerOp::Pwc(g) => {
            let l = conv_input(output, &g);
            let (m, n, k) = (l.in_channels, l.out_channels, l.kernel);
            (cost::flops_standard(&l), cost::params_standard(m, n, k, true))
        }
        LayerOp::HetConv { geometry: g, part } => {
            let l = conv_input(output, &g);
            let p = part as u64;
            (
                cost::flops_hetconv(&l, p)?,
                cost::params_hetconv(l.in_channels, l.out_channels, l.kernel, p, true)?,
            )
        }
        LayerOp::Dwc(g) => {
            let l = conv_input(output, &g);
            let m = l.in_channels;
            (cost::flops_dwc(&l), cost::params_grouped(m, m, l.kernel, m, true)?)
        }
        LayerOp::Gwc { geometry: g, groups } => {
            let l = conv_input(output, &g);
            let gr = groups as u64;
            (
                cost::flops_gwc(&l, gr)?,
                cost::params_grouped(l.in_channels, l.out_channels, l.kernel, gr, true)?,
            )
        }
        LayerOp::Fc {
            in_features,
            out_features,
        } => {
            let (i, o) = (in_features as u64, out_features as u64);
            (i * o, cost::params_fc(i, o))
        }
        LayerOp::Pool(_) | LayerOp::AddResidual { .. } => (0, 0),
    })
}

/// Per-layer MACs (per batch item), parameters and latency units, with
/// reductions against `baseline` when given.
pub fn cost_report(a: &ArchSpec, baseline: Option<&ArchSpec>) -> Result<CostReport> {
    let shapes = a.resolve()?;
    let latency = latency_chain(a);
    let mut rows = Vec::with_capacity(a.layers.len());
    for (i, (layer, &(_, output))) in a.layers.iter().zip(&shapes).enumerate() {
        let (flops, params) = layer_cost(&layer.op, output).map_err(|e| e.at(&layer.name))?;
        rows.push(CostRow {
            name: layer.name.clone(),
            kind: layer.op.kind(),
            flops,
            params,
            latency_units: latency.units_for_layer(i),
        });
    }
    let total_flops = rows.iter().map(|r| r.flops).sum();
    let total_params = rows.iter().map(|r| r.params).sum();
    let reduction = match baseline {
        Some(b) => {
            let base = cost_report(b, None)?;
            Some(Reduction {
                baseline: base.name.clone(),
                baseline_flops: base.total_flops,
                baseline_params: base.total_params,
                flops_pct: reduced_pct(total_flops, base.total_flops),
                params_pct: reduced_pct(total_params, base.total_params),
            })
        }
        None => None,
    };
    Ok(CostReport {
        name: a.name.clone(),
        rows,
        total_flops,
        total_params,
        max_latency: latency.max,
        reduction,
    })
}

fn reduced_pct(value: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        return 0.0;
    }
    100.0 * (1.0 - value as f64 / baseline as f64)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    layer: &'a str,
    kind: &'a str,
    flops: u64,
    params: u64,
    latency: usize,
}

impl CostReport {
    pub fn summary_row(&self) -> SummaryRow {
        SummaryRow {
            model: self.name.clone(),
            flops: self.total_flops,
            flops_reduced_pct: self.reduction.as_ref().map(|r| r.flops_pct),
            params: self.total_params,
            params_reduced_pct: self.reduction.as_ref().map(|r| r.params_pct),
        }
    }

    /// CSV with header `layer,kind,flops,params,latency` and a closing
    /// `total` row. With a baseline, a final `reduced_pct` row holds the
    /// percentage reductions to two decimals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                layer: &r.name,
                kind: r.kind.as_str(),
                flops: r.flops,
                params: r.params,
                latency: r.latency_units,
            })?;
        }
        w.serialize(CsvRow {
            layer: "total",
            kind: "",
            flops: self.total_flops,
            params: self.total_params,
            latency: self.max_latency,
        })?;
        if let Some(r) = &self.reduction {
            w.write_record([
                "reduced_pct",
                "",
                &format!("{:.2}", r.flops_pct),
                &format!("{:.2}", r.params_pct),
                "",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Writes summary rows as CSV: `model,flops,flops_reduced_pct,params,params_reduced_pct`.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
