//! Builtin networks.
//!
//! * `vgg16-cifar`: 13 `3×3` convs (64-64-M-128-128-M-256×3-M-512×3-M-512×3-M)
//!   on `3×32×32`, then FC 512→512→10.
//! * `resnet56-cifar`: `3×3` stem to 16 channels, three stages of nine basic
//!   blocks (16-32-64, stride 2 entering stages 2 and 3), parameter-free
//!   shortcuts (subsample + zero-pad), global average pool, FC 64→10.
//! * `mobilenet-cifar`: `3×3` stem to 32 channels, thirteen depthwise +
//!   pointwise blocks, global average pool, FC 1024→10.
//! * `resnet34-imagenet`: `7×7/2` stem, `3×3/2` max pool, basic blocks
//!   [3, 4, 6, 3] with `1×1` projection shortcuts, FC 512→1000.
//! * `resnet50-imagenet`: as above with bottleneck blocks (stride on the
//!   `3×3`), FC 2048→1000.

use crate::arch::{ArchSpec, LayerOp, LayerSpec, Pool, PoolMode, Shape3};
use crate::conv::ConvGeometry;
use crate::{Error, Result};

pub const BUILTIN_NAMES: [&str; 5] = [
    "vgg16-cifar",
    "resnet56-cifar",
    "mobilenet-cifar",
    "resnet34-imagenet",
    "resnet50-imagenet",
];

pub fn builtin(name: &str) -> Result<ArchSpec> {
    match name {
        "vgg16-cifar" => Ok(build_vgg16_cifar()),
        "resnet56-cifar" => Ok(build_resnet56_cifar()),
        "mobilenet-cifar" => Ok(build_mobilenet_cifar()),
        "resnet34-imagenet" => Ok(build_resnet34_imagenet()),
        "resnet50-imagenet" => Ok(build_resnet50_imagenet()),
        other => Err(Error::Arch(format!(
            "unknown builtin architecture {other:?} (known: {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

fn geom(m: usize, n: usize, k: usize, stride: usize) -> ConvGeometry {
    ConvGeometry::new(m, n, k, stride, k / 2).expect("builtin geometry is valid")
}

fn conv(m: usize, n: usize, k: usize, stride: usize) -> LayerOp {
    LayerOp::StandardConv(geom(m, n, k, stride))
}

fn max_pool(kernel: usize, stride: usize, padding: usize) -> LayerOp {
    LayerOp::Pool(Pool::Window {
        mode: PoolMode::Max,
        kernel,
        stride,
        padding,
    })
}

fn global_avg() -> LayerOp {
    LayerOp::Pool(Pool::Global { mode: PoolMode::Avg })
}

fn fc(i: usize, o: usize) -> LayerOp {
    LayerOp::Fc {
        in_features: i,
        out_features: o,
    }
}

pub fn build_vgg16_cifar() -> ArchSpec {
    const CFG: [usize; 18] = [
        64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0,
    ];
    let mut a = ArchSpec::new("vgg16-cifar", Shape3::new(3, 32, 32));
    let (mut c, mut convs, mut pools) = (3, 0, 0);
    for &width in &CFG {
        if width == 0 {
            pools += 1;
            a.push(LayerSpec::new(format!("pool{pools}"), max_pool(2, 2, 0)));
        } else {
            convs += 1;
            a.push(LayerSpec::new(format!("conv{convs}"), conv(c, width, 3, 1)));
            c = width;
        }
    }
    a.push(LayerSpec::new("fc1", fc(512, 512)));
    a.push(LayerSpec::new("fc2", fc(512, 10)));
    a
}

pub fn build_resnet56_cifar() -> ArchSpec {
    let mut a = ArchSpec::new("resnet56-cifar", Shape3::new(3, 32, 32));
    let mut block_in = a.push(LayerSpec::new("conv1", conv(3, 16, 3, 1)));
    let mut c = 16;
    for (stage, width) in [16, 32, 64].into_iter().enumerate() {
        for block in 0..9 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let prefix = format!("s{}.b{}", stage + 1, block + 1);
            a.push(LayerSpec::new(format!("{prefix}.conv1"), conv(c, width, 3, stride)));
            a.push(LayerSpec::new(format!("{prefix}.conv2"), conv(width, width, 3, 1)));
            block_in = a.push(LayerSpec::new(
                format!("{prefix}.add"),
                LayerOp::AddResidual { from: block_in },
            ));
            c = width;
        }
    }
    a.push(LayerSpec::new("avgpool", global_avg()));
    a.push(LayerSpec::new("fc", fc(64, 10)));
    a
}

pub fn build_mobilenet_cifar() -> ArchSpec {
    const CFG: [(usize, usize); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    let mut a = ArchSpec::new("mobilenet-cifar", Shape3::new(3, 32, 32));
    a.push(LayerSpec::new("conv1", conv(3, 32, 3, 1)));
    let mut c = 32;
    for (i, &(width, stride)) in CFG.iter().enumerate() {
        a.push(LayerSpec::new(
            format!("b{}.dw", i + 1),
            LayerOp::Dwc(geom(c, c, 3, stride)),
        ));
        a.push(LayerSpec::new(
            format!("b{}.pw", i + 1),
            LayerOp::Pwc(geom(c, width, 1, 1)),
        ));
        c = width;
    }
    a.push(LayerSpec::new("avgpool", global_avg()));
    a.push(LayerSpec::new("fc", fc(1024, 10)));
    a
}

fn imagenet_stem(name: &str) -> ArchSpec {
    let mut a = ArchSpec::new(name, Shape3::new(3, 224, 224));
    a.push(LayerSpec::new("conv1", conv(3, 64, 7, 2)));
    a.push(LayerSpec::new("maxpool", max_pool(3, 2, 1)));
    a
}

pub fn build_resnet34_imagenet() -> ArchSpec {
    let mut a = imagenet_stem("resnet34-imagenet");
    let mut block_in = a.layers.len() - 1;
    let mut c = 64;
    for (stage, (width, blocks)) in [(64, 3), (128, 4), (256, 6), (512, 3)].into_iter().enumerate() {
        for block in 0..blocks {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let prefix = format!("layer{}.{}", stage + 1, block);
            a.push(LayerSpec::new(format!("{prefix}.conv1"), conv(c, width, 3, stride)));
            let main = a.push(LayerSpec::new(format!("{prefix}.conv2"), conv(width, width, 3, 1)));
            let shortcut = if stride != 1 || c != width {
                a.push(LayerSpec::new(format!("{prefix}.downsample"), conv(c, width, 1, stride)).with_input(block_in))
            } else {
                block_in
            };
            block_in = a.push(
                LayerSpec::new(format!("{prefix}.add"), LayerOp::AddResidual { from: shortcut }).with_input(main),
            );
            c = width;
        }
    }
    a.push(LayerSpec::new("avgpool", global_avg()));
    a.push(LayerSpec::new("fc", fc(512, 1000)));
    a
}

pub fn build_resnet50_imagenet() -> ArchSpec {
    let mut a = imagenet_stem("resnet50-imagenet");
    let mut block_in = a.layers.len() - 1;
    let mut c = 64;
    for (stage, (width, blocks)) in [(64, 3), (128, 4), (256, 6), (512, 3)].into_iter().enumerate() {
        let out = width * 4;
        for block in 0..blocks {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let prefix = format!("layer{}.{}", stage + 1, block);
            a.push(LayerSpec::new(format!("{prefix}.conv1"), conv(c, width, 1, 1)));
            a.push(LayerSpec::new(format!("{prefix}.conv2"), conv(width, width, 3, stride)));
            let main = a.push(LayerSpec::new(format!("{prefix}.conv3"), conv(width, out, 1, 1)));
            let shortcut = if stride != 1 || c != out {
                a.push(LayerSpec::new(format!("{prefix}.downsample"), conv(c, out, 1, stride)).with_input(block_in))
            } else {
                block_in
            };
            block_in = a.push(
                LayerSpec::new(format!("{prefix}.add"), LayerOp::AddResidual { from: shortcut }).with_input(main),
            );
            c = out;
        }
    }
    a.push(LayerSpec::new("avgpool", global_avg()));
    a.push(LayerSpec::new("fc", fc(2048, 1000)));
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::LayerKind;

    #[test]
    fn all_builtins_resolve() {
        for name in BUILTIN_NAMES {
            let a = builtin(name).unwrap();
            assert_eq!(a.name, name);
            a.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(builtin("alexnet").is_err());
    }

    #[test]
    fn layer_counts() {
        let count = |a: &ArchSpec, kind: LayerKind| a.layers.iter().filter(|l| l.op.kind() == kind).count();
        let vgg = build_vgg16_cifar();
        assert_eq!(count(&vgg, LayerKind::StandardConv), 13);
        let r56 = build_resnet56_cifar();
        assert_eq!(count(&r56, LayerKind::StandardConv), 55);
        assert_eq!(count(&r56, LayerKind::AddResidual), 27);
        let mob = build_mobilenet_cifar();
        assert_eq!(count(&mob, LayerKind::Dwc), 13);
        assert_eq!(count(&mob, LayerKind::Pwc), 13);
        let r34 = build_resnet34_imagenet();
        // 1 stem + 32 block convs + 3 projections.
        assert_eq!(count(&r34, LayerKind::StandardConv), 36);
        let r50 = build_resnet50_imagenet();
        // 1 stem + 48 block convs + 4 projections.
        assert_eq!(count(&r50, LayerKind::StandardConv), 53);
    }

    #[test]
    fn output_shapes() {
        assert_eq!(build_vgg16_cifar().output_shape().unwrap(), Shape3::new(10, 1, 1));
        assert_eq!(
            build_resnet50_imagenet().output_shape().unwrap(),
            Shape3::new(1000, 1, 1)
        );
        let shapes = build_resnet34_imagenet().resolve().unwrap();
        assert_eq!(shapes[1].1, Shape3::new(64, 56, 56));
    }
}
