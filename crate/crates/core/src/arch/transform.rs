//! Architecture rewrites.
//!
//! Every rewrite keeps the filter count of each replaced layer and leaves
//! non-convolution layers untouched. Layer references (`input`, residual
//! `from`) are remapped onto the rewritten layer list.

use crate::arch::{ArchSpec, LayerOp, LayerSpec};
use crate::conv::ConvGeometry;
use crate::{Error, Result};

/// How the part `P` of each new HetConv layer is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartPolicy {
    /// The same `P` for every replaced layer.
    Fixed(usize),
    /// `P` equal to the layer's input channel count.
    InputChannels,
}

impl PartPolicy {
    fn part_for(&self, in_channels: usize) -> usize {
        match *self {
            PartPolicy::Fixed(p) => p,
            PartPolicy::InputChannels => in_channels,
        }
    }
}

/// Replacement used by [`separate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Separable {
    /// Depthwise `K×K` on the `M` input channels, then pointwise `M→N`.
    Depthwise,
    /// Groupwise `K×K` `M→M` with `G` groups, then pointwise `M→N`.
    Grouped(usize),
}

/// Index of the first convolution layer of any kind.
fn first_conv(a: &ArchSpec) -> Option<usize> {
    a.layers.iter().position(|l| l.op.is_conv())
}

fn targets(a: &ArchSpec, skip_first: bool) -> Vec<bool> {
    let first = if skip_first { first_conv(a) } else { None };
    a.layers
        .iter()
        .enumerate()
        .map(|(i, l)| matches!(l.op, LayerOp::StandardConv(g) if g.kernel > 1) && Some(i) != first)
        .collect()
}

/// Rebuilds `a` by emitting a group of layers for every original layer.
/// `emit(i, layer)` receives the layer with its references already remapped
/// and returns the replacement group; the last layer of a group stands in for
/// the original in later references.
fn rebuild(a: &ArchSpec, mut emit: impl FnMut(usize, &LayerSpec) -> Result<Vec<LayerSpec>>) -> Result<ArchSpec> {
    let mut out = ArchSpec::new(a.name.clone(), a.input);
    let mut map: Vec<usize> = Vec::with_capacity(a.layers.len());
    for (i, layer) in a.layers.iter().enumerate() {
        let remap = |j: usize| -> Result<usize> {
            map.get(j)
                .copied()
                .ok_or_else(|| Error::Arch(format!("layer {} ({}) references later layer {j}", i, layer.name)))
        };
        let mut original = layer.clone();
        original.input = original.input.map(remap).transpose()?;
        if let LayerOp::AddResidual { from } = original.op {
            original.op = LayerOp::AddResidual { from: remap(from)? };
        }
        let group = emit(i, &original)?;
        debug_assert!(!group.is_empty());
        for l in group {
            out.push(l);
        }
        map.push(out.layers.len() - 1);
    }
    Ok(out)
}

/// Replaces every standard `K×K` convolution (`K > 1`) with a HetConv layer
/// of the same geometry. With `skip_first`, the first convolution of the
/// network is kept. `1×1` convolutions are never replaced.
pub fn hetconvify(a: &ArchSpec, policy: PartPolicy, skip_first: bool) -> Result<ArchSpec> {
    let targets = targets(a, skip_first);
    let out = rebuild(a, |i, layer| {
        let mut layer = layer.clone();
        if let (true, LayerOp::StandardConv(geometry)) = (targets[i], layer.op) {
            let part = policy.part_for(geometry.in_channels);
            crate::conv::check_part(geometry.in_channels, part).map_err(|e| e.at(&layer.name))?;
            layer.op = LayerOp::HetConv { geometry, part };
        }
        Ok(vec![layer])
    })?;
    out.validate()?;
    Ok(out)
}

/// Replaces every standard `K×K` convolution (`K > 1`) with a two-stage
/// separable pair named `<name>.dw`/`<name>.gw` and `<name>.pw`. The first
/// stage keeps the `M` input channels, stride and padding; the second maps
/// `M→N` with a `1×1` kernel.
pub fn separate(a: &ArchSpec, kind: Separable, skip_first: bool) -> Result<ArchSpec> {
    let targets = targets(a, skip_first);
    let out = rebuild(a, |i, layer| {
        let g = match (targets[i], layer.op) {
            (true, LayerOp::StandardConv(g)) => g,
            _ => return Ok(vec![layer.clone()]),
        };
        let m = g.in_channels;
        let spatial = ConvGeometry::new(m, m, g.kernel, g.stride, g.padding)?;
        let (suffix, op) = match kind {
            Separable::Depthwise => ("dw", LayerOp::Dwc(spatial)),
            Separable::Grouped(groups) => {
                crate::conv::check_groups(&spatial, groups).map_err(|e| e.at(&layer.name))?;
                (
                    "gw",
                    LayerOp::Gwc {
                        geometry: spatial,
                        groups,
                    },
                )
            }
        };
        let first = LayerSpec {
            name: format!("{}.{suffix}", layer.name),
            op,
            input: layer.input,
        };
        let pw = LayerSpec::new(
            format!("{}.pw", layer.name),
            LayerOp::Pwc(ConvGeometry::new(m, g.out_channels, 1, 1, 0)?),
        );
        Ok(vec![first, pw])
    })?;
    out.validate()?;
    Ok(out)
}

/// Fuses each depthwise or groupwise layer that feeds only the pointwise
/// layer right after it into one HetConv layer with the spatial stage's
/// kernel, stride and padding and the pointwise stage's filter count.
pub fn fuse_separable(a: &ArchSpec, policy: PartPolicy) -> Result<ArchSpec> {
    let n = a.layers.len();
    let mut referenced_elsewhere = vec![false; n];
    for (i, l) in a.layers.iter().enumerate() {
        if let Some(j) = a.source(i) {
            if j + 1 != i {
                referenced_elsewhere[j] = true;
            }
        }
        if let LayerOp::AddResidual { from } = l.op {
            referenced_elsewhere[from] = true;
        }
    }
    let pair_start: Vec<bool> = (0..n)
        .map(|i| {
            let spatial = matches!(a.layers[i].op, LayerOp::Dwc(_) | LayerOp::Gwc { .. });
            spatial
                && i + 1 < n
                && matches!(a.layers[i + 1].op, LayerOp::Pwc(_))
                && a.source(i + 1) == Some(i)
                && !referenced_elsewhere[i]
        })
        .collect();

    let mut pending: Option<LayerSpec> = None;
    let fused_from_pending = |layer: &LayerSpec, spatial: LayerSpec| -> Result<LayerSpec> {
        let (sg, pg) = match (spatial.op.geometry(), layer.op.geometry()) {
            (Some(s), Some(p)) => (*s, *p),
            _ => unreachable!("pairs are conv layers"),
        };
        let geometry = ConvGeometry::new(
            sg.in_channels,
            pg.out_channels,
            sg.kernel,
            sg.stride * pg.stride,
            sg.padding,
        )?;
        let name = spatial
            .name
            .strip_suffix(".dw")
            .or_else(|| spatial.name.strip_suffix(".gw"))
            .map(str::to_string)
            .unwrap_or_else(|| format!("{}+{}", spatial.name, layer.name));
        let part = policy.part_for(geometry.in_channels);
        crate::conv::check_part(geometry.in_channels, part).map_err(|e| e.at(&name))?;
        Ok(LayerSpec {
            name,
            op: LayerOp::HetConv { geometry, part },
            input: spatial.input,
        })
    };

    // The spatial half of a pair is held back and emitted together with the
    // pointwise half, so both original indices map to the fused layer.
    let mut map: Vec<usize> = Vec::with_capacity(n);
    let mut out = ArchSpec::new(a.name.clone(), a.input);
    for (i, layer) in a.layers.iter().enumerate() {
        let remap = |j: usize| map[j];
        let mut l = layer.clone();
        l.input = l.input.map(remap);
        if let LayerOp::AddResidual { from } = l.op {
            l.op = LayerOp::AddResidual { from: remap(from) };
        }
        if pair_start[i] {
            pending = Some(l);
            // Placeholder; fixed up when the pair completes.
            map.push(usize::MAX);
            continue;
        }
        if let Some(spatial) = pending.take() {
            let fused = fused_from_pending(&l, spatial)?;
            let idx = out.push(fused);
            map[i - 1] = idx;
            map.push(idx);
            continue;
        }
        map.push(out.push(l));
    }
    out.validate()?;
    Ok(out)
}
