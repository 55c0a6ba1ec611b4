//! Declarative network descriptions.
//!
//! An [`ArchSpec`] is an ordered list of layers. Each layer reads the output
//! of the previous layer unless `input` names an earlier layer by index;
//! `add_residual` layers additionally read a shortcut from `from`. Shapes are
//! resolved from the network input, so a spec is valid only when every
//! layer's declared channel counts chain.
//!
//! Cost conventions used by [`cost_report`]: convolution and fully-connected
//! layers contribute multiply-accumulates and parameters (including one bias
//! per output channel); pooling and residual additions are free. Batch norm
//! and activations are not represented.

mod builders;
mod config;
mod exec;
mod latency;
mod report;
mod transform;

pub use builders::{
    build_mobilenet_cifar, build_resnet34_imagenet, build_resnet50_imagenet, build_resnet56_cifar, build_vgg16_cifar,
    builtin, BUILTIN_NAMES,
};
pub use config::{emit_arch, parse_arch, ARCH_FORMAT_VERSION};
pub use exec::{execute, ExecReport};
pub use latency::{latency_chain, LatencyBlock, LatencyReport};
pub use report::{cost_report, write_summary_csv, CostReport, CostRow, Reduction, SummaryRow};
pub use transform::{fuse_separable, hetconvify, separate, PartPolicy, Separable};

use std::fmt;

use crate::conv::ConvGeometry;
use crate::{Error, Result};

/// Activation shape `(channels, height, width)` for one batch item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape3 { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pool {
    Window {
        mode: PoolMode,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Reduces each channel to a single value.
    Global { mode: PoolMode },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    StandardConv,
    HetConv,
    Dwc,
    Pwc,
    Gwc,
    Pool,
    Fc,
    AddResidual,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::StandardConv,
        LayerKind::HetConv,
        LayerKind::Dwc,
        LayerKind::Pwc,
        LayerKind::Gwc,
        LayerKind::Pool,
        LayerKind::Fc,
        LayerKind::AddResidual,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::StandardConv => "standard_conv",
            LayerKind::HetConv => "hetconv",
            LayerKind::Dwc => "dwc",
            LayerKind::Pwc => "pwc",
            LayerKind::Gwc => "gwc",
            LayerKind::Pool => "pool",
            LayerKind::Fc => "fc",
            LayerKind::AddResidual => "add_residual",
        }
    }

    pub fn parse(s: &str) -> Option<LayerKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerOp {
    StandardConv(ConvGeometry),
    HetConv {
        geometry: ConvGeometry,
        part: usize,
    },
    /// Depthwise: `in_channels == out_channels`, one kernel per channel.
    Dwc(ConvGeometry),
    /// Pointwise: `kernel == 1`, `padding == 0`.
    Pwc(ConvGeometry),
    Gwc {
        geometry: ConvGeometry,
        groups: usize,
    },
    Pool(Pool),
    Fc {
        in_features: usize,
        out_features: usize,
    },
    /// Adds the output of layer `from` to this layer's input. A shortcut with
    /// fewer channels or a larger spatial extent is subsampled by the integer
    /// stride ratio and zero-padded in channels.
    AddResidual {
        from: usize,
    },
}

impl LayerOp {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerOp::StandardConv(_) => LayerKind::StandardConv,
            LayerOp::HetConv { .. } => LayerKind::HetConv,
            LayerOp::Dwc(_) => LayerKind::Dwc,
            LayerOp::Pwc(_) => LayerKind::Pwc,
            LayerOp::Gwc { .. } => LayerKind::Gwc,
            LayerOp::Pool(_) => LayerKind::Pool,
            LayerOp::Fc { .. } => LayerKind::Fc,
            LayerOp::AddResidual { .. } => LayerKind::AddResidual,
        }
    }

    pub fn geometry(&self) -> Option<&ConvGeometry> {
        match self {
            LayerOp::StandardConv(g)
            | LayerOp::Dwc(g)
            | LayerOp::Pwc(g)
            | LayerOp::HetConv { geometry: g, .. }
            | LayerOp::Gwc { geometry: g, .. } => Some(g),
            _ => None,
        }
    }

    pub fn is_conv(&self) -> bool {
        self.geometry().is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub op: LayerOp,
    /// Index of the layer whose output feeds this one; `None` means the
    /// previous layer (or the network input for layer 0).
    pub input: Option<usize>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, op: LayerOp) -> Self {
        LayerSpec {
            name: name.into(),
            op,
            input: None,
        }
    }

    pub fn with_input(mut self, input: usize) -> Self {
        self.input = Some(input);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    pub input: Shape3,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    pub fn new(name: impl Into<String>, input: Shape3) -> Self {
        ArchSpec {
            name: name.into(),
            input,
            layers: Vec::new(),
        }
    }

    /// Appends a layer and returns its index.
    pub fn push(&mut self, layer: LayerSpec) -> usize {
        self.layers.push(layer);
        self.layers.len() - 1
    }

    /// Index of the layer feeding layer `i`; `None` is the network input.
    pub fn source(&self, i: usize) -> Option<usize> {
        match self.layers[i].input {
            Some(j) => Some(j),
            None => i.checked_sub(1),
        }
    }

    /// Validates every layer and returns `(input shape, output shape)` per
    /// layer.
    pub fn resolve(&self) -> Result<Vec<(Shape3, Shape3)>> {
        if self.input.is_empty() {
            return Err(Error::Arch(format!("input shape {} is empty", self.input)));
        }
        let mut shapes: Vec<(Shape3, Shape3)> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| Error::Arch(format!("layer {} ({}): {msg}", i, layer.name));
            if let Some(j) = layer.input {
                if j >= i {
                    return Err(fail(format!("input {j} does not precede the layer")));
                }
            }
            let input = match self.source(i) {
                Some(j) => shapes[j].1,
                None => self.input,
            };
            let output = layer_output(layer, input, &shapes).map_err(|e| match e {
                Error::Arch(msg) => fail(msg),
                other => other.at(&layer.name),
            })?;
            shapes.push((input, output));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    pub fn output_shape(&self) -> Result<Shape3> {
        Ok(self.resolve()?.last().map(|s| s.1).unwrap_or(self.input))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }
}

fn conv_output(g: &ConvGeometry, input: Shape3) -> Result<Shape3> {
    g.validate()?;
    if input.c != g.in_channels {
        return Err(Error::Arch(format!(
            "expects {} input channels, got {}",
            g.in_channels, input.c
        )));
    }
    let (h, w) = g.output_size(input.h, input.w)?;
    Ok(Shape3::new(g.out_channels, h, w))
}

fn layer_output(layer: &LayerSpec, input: Shape3, shapes: &[(Shape3, Shape3)]) -> Result<Shape3> {
    match layer.op {
        LayerOp::StandardConv(g) => conv_output(&g, input),
        LayerOp::HetConv { geometry, part } => {
            crate::conv::check_part(geometry.in_channels, part)?;
            conv_output(&geometry, input)
        }
        LayerOp::Dwc(g) => {
            if g.in_channels != g.out_channels {
                return Err(Error::Arch("depthwise layer needs in == out channels".into()));
            }
            conv_output(&g, input)
        }
        LayerOp::Pwc(g) => {
            if g.kernel != 1 || g.padding != 0 {
                return Err(Error::Arch("pointwise layer needs k=1 and pad=0".into()));
            }
            conv_output(&g, input)
        }
        LayerOp::Gwc { geometry, groups } => {
            crate::conv::check_groups(&geometry, groups)?;
            conv_output(&geometry, input)
        }
        LayerOp::Pool(Pool::Global { .. }) => Ok(Shape3::new(input.c, 1, 1)),
        LayerOp::Pool(Pool::Window {
            kernel,
            stride,
            padding,
            ..
        }) => {
            if kernel == 0 || stride == 0 {
                return Err(Error::Arch("pool kernel and stride must be at least 1".into()));
            }
            if 2 * padding > kernel {
                return Err(Error::Arch("pool padding exceeds half the kernel".into()));
            }
            let extent = |d: usize| -> Result<usize> {
                let padded = d + 2 * padding;
                if padded < kernel {
                    return Err(Error::Arch(format!(
                        "pool kernel {kernel} exceeds padded extent {padded}"
                    )));
                }
                Ok((padded - kernel) / stride + 1)
            };
            Ok(Shape3::new(input.c, extent(input.h)?, extent(input.w)?))
        }
        LayerOp::Fc {
            in_features,
            out_features,
        } => {
            if in_features != input.len() {
                return Err(Error::Arch(format!(
                    "expects {in_features} input features, got {} ({input})",
                    input.len()
                )));
            }
            if out_features == 0 {
                return Err(Error::Arch("fc needs at least one output".into()));
            }
            Ok(Shape3::new(out_features, 1, 1))
        }
        LayerOp::AddResidual { from } => {
            let shortcut = shapes
                .get(from)
                .map(|s| s.1)
                .ok_or_else(|| Error::Arch(format!("residual source {from} does not precede the layer")))?;
            residual_stride(shortcut, input)?;
            Ok(input)
        }
    }
}

/// Spatial subsampling factor mapping `shortcut` onto `main`.
pub(crate) fn residual_stride(shortcut: Shape3, main: Shape3) -> Result<usize> {
    if shortcut.c > main.c {
        return Err(Error::Arch(format!(
            "shortcut {shortcut} has more channels than main path {main}"
        )));
    }
    if !shortcut.h.is_multiple_of(main.h)
        || !shortcut.w.is_multiple_of(main.w)
        || shortcut.h / main.h != shortcut.w / main.w
    {
        return Err(Error::Arch(format!(
            "shortcut {shortcut} does not subsample onto main path {main}"
        )));
    }
    Ok(shortcut.h / main.h)
}
