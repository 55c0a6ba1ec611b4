//! Sequential-stage latency.
//!
//! Each block is the set of convolution layers that together stand in for
//! one standard convolution. Its latency is the number of sequential conv
//! stages minus one: a standard or HetConv layer is one stage (latency 0), a
//! depthwise or groupwise layer feeding a pointwise layer is two (latency 1).

use serde::Serialize;

use crate::arch::{ArchSpec, LayerOp};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LatencyBlock {
    /// Name of the first layer in the block.
    pub name: String,
    /// Layer indices in execution order.
    pub layers: Vec<usize>,
    pub latency: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LatencyReport {
    pub blocks: Vec<LatencyBlock>,
    pub max: usize,
}

impl LatencyReport {
    /// Latency charged to layer `i`: the block latency on the block's last
    /// layer, zero elsewhere.
    pub fn units_for_layer(&self, i: usize) -> usize {
        self.blocks
            .iter()
            .find(|b| b.layers.last() == Some(&i))
            .map_or(0, |b| b.latency)
    }
}

pub fn latency_chain(a: &ArchSpec) -> LatencyReport {
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < a.layers.len() {
        let layer = &a.layers[i];
        if !layer.op.is_conv() {
            i += 1;
            continue;
        }
        let spatial = matches!(layer.op, LayerOp::Dwc(_) | LayerOp::Gwc { .. });
        let pair = spatial
            && a.layers
                .get(i + 1)
                .is_some_and(|next| matches!(next.op, LayerOp::Pwc(_)))
            && a.source(i + 1) == Some(i);
        let layers: Vec<usize> = if pair { vec![i, i + 1] } else { vec![i] };
        i += layers.len();
        blocks.push(LatencyBlock {
            name: layer.name.clone(),
            latency: layers.len() - 1,
            layers,
        });
    }
    let max = blocks.iter().map(|b| b.latency).max().unwrap_or(0);
    LatencyReport { blocks, max }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_mobilenet_cifar, build_vgg16_cifar, hetconvify, separate, PartPolicy, Separable};

    #[test]
    fn hetconv_has_zero_latency() {
        let h = hetconvify(&build_vgg16_cifar(), PartPolicy::Fixed(4), true).unwrap();
        let r = latency_chain(&h);
        assert_eq!(r.blocks.len(), 13);
        assert_eq!(r.max, 0);
    }

    #[test]
    fn separable_pairs_have_latency_one() {
        let r = latency_chain(&build_mobilenet_cifar());
        assert_eq!(r.blocks.len(), 14);
        assert_eq!(r.blocks[0].latency, 0);
        assert!(r.blocks[1..].iter().all(|b| b.latency == 1 && b.layers.len() == 2));
        assert_eq!(r.units_for_layer(2), 1);
        assert_eq!(r.units_for_layer(1), 0);

        let g = separate(&build_vgg16_cifar(), Separable::Grouped(4), true).unwrap();
        let r = latency_chain(&g);
        assert_eq!(r.blocks.iter().filter(|b| b.latency == 1).count(), 12);
        assert_eq!(r.max, 1);
    }
}
