use hetconv::arch::{
    build_resnet56_cifar, build_vgg16_cifar, cost_report, emit_arch, execute, hetconvify, latency_chain, parse_arch,
    separate, ArchSpec, LayerKind, LayerOp, LayerSpec, PartPolicy, Separable, Shape3,
};
use hetconv::conv::{
    conv2d_forward, embed_as_dense, hetconv_forward, ConvGeometry, DenseFilterBank, HetConvFilterBank, MulCounter,
};
use hetconv::cost::{self, reduction_hetconv, speedup, Fraction, LayerCostInput};
use hetconv::{Rng, Tensor4};
use proptest::prelude::*;

#[derive(Clone, Debug)]
struct Case {
    m: usize,
    n: usize,
    part: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    seed: u64,
}

fn case() -> impl Strategy<Value = Case> {
    (
        2usize..=16,
        1usize..=12,
        prop::sample::select(vec![1usize, 3, 5]),
        1usize..=2,
        0usize..=2,
        any::<u64>(),
    )
        .prop_flat_map(|(m, n, k, stride, pad, seed)| {
            let divisors: Vec<usize> = (1..=m).filter(|d| m % d == 0).collect();
            let min = k.saturating_sub(2 * pad).max(1);
            (prop::sample::select(divisors), min..=k + 4, min..=k + 4).prop_map(move |(part, h, w)| Case {
                m,
                n,
                part,
                k,
                stride,
                pad,
                h,
                w,
                seed,
            })
        })
}

fn setup(c: &Case) -> (HetConvFilterBank, Tensor4) {
    let mut rng = Rng::new(c.seed);
    let g = ConvGeometry::new(c.m, c.n, c.k, c.stride, c.pad).unwrap();
    let mut f = HetConvFilterBank::random(g, c.part, &mut rng, -1.0, 1.0).unwrap();
    for b in f.bias_mut() {
        *b = rng.uniform(-1.0, 1.0);
    }
    let x = Tensor4::random_uniform((2, c.m, c.h, c.w), &mut rng, -1.0, 1.0).unwrap();
    (f, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hetconv_matches_embedded_dense(c in case()) {
        let (f, x) = setup(&c);
        let (mut ch, mut cd) = (MulCounter::new(), MulCounter::new());
        let y = hetconv_forward(&x, &f, Some(&mut ch)).unwrap();
        let oracle = conv2d_forward(&x, &embed_as_dense(&f), Some(&mut cd)).unwrap();
        prop_assert!(y.max_abs_diff(&oracle).unwrap() < 1e-10);

        let d = y.dims();
        let l = LayerCostInput {
            out_h: d.h as u64,
            out_w: d.w as u64,
            in_channels: c.m as u64,
            out_channels: c.n as u64,
            kernel: c.k as u64,
        };
        prop_assert_eq!(ch.count(), 2 * cost::flops_hetconv(&l, c.part as u64).unwrap());
        prop_assert_eq!(cd.count(), 2 * cost::flops_standard(&l));
        prop_assert_eq!(
            Fraction::new(ch.count(), cd.count()),
            reduction_hetconv(c.part as u64, c.k as u64)
        );
    }

    #[test]
    fn part_one_is_bitwise_dense(c in case()) {
        let c = Case { part: 1, ..c };
        let (f, x) = setup(&c);
        let dense = DenseFilterBank::new(*f.geometry(), f.kxk().to_vec(), Some(f.bias().to_vec())).unwrap();
        let embedded = embed_as_dense(&f);
        prop_assert_eq!(embedded.weights(), dense.weights());
        let a = hetconv_forward(&x, &f, None).unwrap();
        let b = conv2d_forward(&x, &dense, None).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn kxk_groups_follow_the_shifted_layout(c in case()) {
        let (f, _) = setup(&c);
        for n in 0..c.n {
            let kxk: Vec<usize> = (0..c.m).filter(|&ch| f.is_kxk_channel(n, ch)).collect();
            let expect: Vec<usize> = (n % c.part..c.m).step_by(c.part).collect();
            prop_assert_eq!(kxk, expect);
        }
        if c.n >= c.part {
            for ch in 0..c.m {
                prop_assert!((0..c.n).any(|n| f.is_kxk_channel(n, ch)), "channel {} uncovered", ch);
            }
        }
    }

    #[test]
    fn linear_in_input(c in case(), a in -3.0f64..3.0) {
        let (mut f, x) = setup(&c);
        for b in f.bias_mut() {
            *b = 0.0;
        }
        let lhs = hetconv_forward(&x.scaled(a), &f, None).unwrap();
        let rhs = hetconv_forward(&x, &f, None).unwrap().scaled(a);
        for (p, q) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(q.abs()).max(1.0));
        }
    }

    #[test]
    fn reduction_bounds(part in 1u64..=1024, k in prop::sample::select(vec![1u64, 3, 5, 7, 9])) {
        let r = reduction_hetconv(part, k);
        prop_assert!(r <= Fraction::from_integer(1));
        prop_assert!(speedup(r) >= Fraction::from_integer(1));
        if k > 1 {
            prop_assert!(Fraction::new(1, k * k) < r);
        } else {
            prop_assert_eq!(r, Fraction::from_integer(1));
        }
        if part > 1 && k > 1 {
            prop_assert!(r < reduction_hetconv(part - 1, k));
        }
    }

    #[test]
    fn report_totals_and_reduction(p in prop::sample::select(vec![1usize, 2, 4, 8, 16])) {
        let base = build_resnet56_cifar();
        let h = hetconvify(&base, PartPolicy::Fixed(p), true).unwrap();
        let r = cost_report(&h, Some(&base)).unwrap();
        prop_assert_eq!(r.total_flops, r.rows.iter().map(|x| x.flops).sum::<u64>());
        prop_assert_eq!(r.total_params, r.rows.iter().map(|x| x.params).sum::<u64>());
        let red = r.reduction.unwrap();
        let pct = 100.0 * (1.0 - r.total_flops as f64 / red.baseline_flops as f64);
        prop_assert!((red.flops_pct - pct).abs() < 1e-9);
        prop_assert_eq!(latency_chain(&h).max, 0);
    }

    #[test]
    fn hetconvify_touches_only_later_standard_convs(
        p in prop::sample::select(vec![1usize, 2, 4, 8, 16]),
        skip_first in any::<bool>(),
    ) {
        let base = build_vgg16_cifar();
        let policy = PartPolicy::Fixed(p);
        let h = match hetconvify(&base, policy, skip_first) {
            Ok(h) => h,
            // conv1 has 3 input channels.
            Err(_) => { prop_assert!(!skip_first && p > 1); return Ok(()); }
        };
        prop_assert_eq!(h.layers.len(), base.layers.len());
        for (i, (a, b)) in base.layers.iter().zip(&h.layers).enumerate() {
            prop_assert_eq!(&a.name, &b.name);
            let replaced = matches!(a.op, LayerOp::StandardConv(_)) && !(skip_first && i == 0);
            if replaced {
                prop_assert_eq!(b.op.kind(), LayerKind::HetConv);
                prop_assert_eq!(a.op.geometry(), b.op.geometry());
            } else {
                prop_assert_eq!(&a.op, &b.op);
            }
        }
    }

    #[test]
    fn config_round_trip(
        p in prop::sample::select(vec![1usize, 2, 4, 8, 16]),
        which in 0usize..4,
        g in prop::sample::select(vec![1usize, 2, 4, 8]),
    ) {
        let base = if which % 2 == 0 { build_vgg16_cifar() } else { build_resnet56_cifar() };
        let a = match which {
            0 | 1 => hetconvify(&base, PartPolicy::Fixed(p), true).unwrap(),
            2 => separate(&base, Separable::Grouped(g), true).unwrap(),
            _ => separate(&base, Separable::Depthwise, true).unwrap(),
        };
        let text = emit_arch(&a);
        let back = parse_arch(&text).unwrap();
        prop_assert_eq!(&back, &a);
        prop_assert_eq!(emit_arch(&back), text);
    }

    #[test]
    fn executed_macs_match_report(
        input_c in 1usize..=4,
        size in 3usize..=7,
        layers in prop::collection::vec((0usize..5, 1usize..=3, 1usize..=2, any::<bool>()), 1..4),
        seed in any::<u64>(),
    ) {
        let a = random_chain(input_c, size, &layers);
        let report = cost_report(&a, None).unwrap();
        let run = execute(&a, 2, seed).unwrap();
        prop_assert_eq!(run.total_macs, 2 * report.total_flops);
        prop_assert_eq!(run.layer_macs, report.rows.iter().map(|r| r.flops).collect::<Vec<_>>());
    }
}

/// A chain of convolutions with desk-scale channel counts. Each entry picks
/// the kind, a channel multiplier, the stride and whether to use `K = 3`.
fn random_chain(input_c: usize, size: usize, layers: &[(usize, usize, usize, bool)]) -> ArchSpec {
    let mut a = ArchSpec::new("chain", Shape3::new(input_c, size, size));
    let mut c = input_c;
    let mut extent = size;
    for (i, &(kind, mult, stride, k3)) in layers.iter().enumerate() {
        let k = if k3 { 3 } else { 1 };
        let stride = if extent >= 3 { stride } else { 1 };
        let pad = k / 2;
        let out = c * mult;
        let geometry = |n: usize| ConvGeometry::new(c, n, k, stride, pad).unwrap();
        let op = match kind {
            0 => LayerOp::StandardConv(geometry(out)),
            1 => LayerOp::HetConv {
                geometry: geometry(out),
                part: c,
            },
            2 => LayerOp::Dwc(geometry(c)),
            3 => LayerOp::Pwc(ConvGeometry::new(c, out, 1, 1, 0).unwrap()),
            _ => LayerOp::Gwc {
                geometry: geometry(out),
                groups: c,
            },
        };
        let n = op.geometry().unwrap().out_channels;
        if let Some(g) = op.geometry() {
            extent = (extent + 2 * g.padding - g.kernel) / g.stride + 1;
        }
        a.push(LayerSpec::new(format!("l{i}"), op));
        c = n;
    }
    a
}
