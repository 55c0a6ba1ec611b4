use crate::conv::filters::{check_part, Slot};
use crate::conv::{check_input, DenseFilterBank, HetConvFilterBank, Padded};
use crate::{Dims4, Error, Result, Tensor4};

/// Gradients of `Σ grad_out ⊙ conv2d_forward(x, f)`.
#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor4,
    /// `[N][M][K][K]`, same layout as [`DenseFilterBank::weights`].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of `Σ grad_out ⊙ hetconv_forward(x, f)`.
///
/// Only structurally present weights get a gradient: `kxk` and `one` share
/// the layouts of [`HetConvFilterBank::kxk`] and [`HetConvFilterBank::one`].
#[derive(Clone, Debug)]
pub struct HetConvGrads {
    pub input: Tensor4,
    pub kxk: Vec<f64>,
    pub one: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_grad_out(grad_out: &Tensor4, expected: Dims4) -> Result<()> {
    if grad_out.dims() != expected {
        return Err(Error::shape(expected, grad_out.dims()));
    }
    Ok(())
}

pub fn conv2d_backward(x: &Tensor4, f: &DenseFilterBank, grad_out: &Tensor4) -> Result<DenseGrads> {
    let g = *f.geometry();
    let (ho, wo) = check_input(x, &g)?;
    let d = x.dims();
    check_grad_out(grad_out, Dims4::new(d.n, g.out_channels, ho, wo)?)?;
    let (m, k, s, p) = (g.in_channels, g.kernel, g.stride, g.padding);
    let w = f.weights();
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.out_channels];
    let mut gx = Tensor4::zeros_like_dims(d);
    for b in 0..d.n {
        let xp = Padded::from_item(x, b, p);
        let mut gxp = Padded::zeros(m, d.h, d.w, p);
        #[allow(clippy::needless_range_loop)]
        for n in 0..g.out_channels {
            for y in 0..ho {
                for xo in 0..wo {
                    let go = grad_out.get(b, n, y, xo);
                    gb[n] += go;
                    for c in 0..m {
                        for i in 0..k {
                            let row = xp.at(c, y * s + i, xo * s);
                            let wrow = f.weight_index(n, c, i, 0);
                            for j in 0..k {
                                gw[wrow + j] += go * xp.data[row + j];
                                gxp.data[row + j] += go * w[wrow + j];
                            }
                        }
                    }
                }
            }
        }
        gxp.crop_into(&mut gx, b, p);
    }
    Ok(DenseGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

pub fn hetconv_backward(x: &Tensor4, f: &HetConvFilterBank, grad_out: &Tensor4) -> Result<HetConvGrads> {
    let g = *f.geometry();
    check_part(g.in_channels, f.part())?;
    let (ho, wo) = check_input(x, &g)?;
    let d = x.dims();
    check_grad_out(grad_out, Dims4::new(d.n, g.out_channels, ho, wo)?)?;
    let (m, k, s, p) = (g.in_channels, g.kernel, g.stride, g.padding);
    let center = k / 2;
    let mut gk = vec![0.0; f.kxk().len()];
    let mut g1 = vec![0.0; f.one().len()];
    let mut gb = vec![0.0; g.out_channels];
    let mut gx = Tensor4::zeros_like_dims(d);
    let slots: Vec<Vec<Slot>> = (0..g.out_channels)
        .map(|n| (0..m).map(|c| f.slot(n, c)).collect())
        .collect();
    for b in 0..d.n {
        let xp = Padded::from_item(x, b, p);
        let mut gxp = Padded::zeros(m, d.h, d.w, p);
        for (n, filter_slots) in slots.iter().enumerate() {
            for y in 0..ho {
                for xo in 0..wo {
                    let go = grad_out.get(b, n, y, xo);
                    if go == 0.0 {
                        continue;
                    }
                    gb[n] += go;
                    for (c, slot) in filter_slots.iter().enumerate() {
                        match *slot {
                            Slot::Kxk(group) => {
                                for i in 0..k {
                                    let row = xp.at(c, y * s + i, xo * s);
                                    let wrow = f.kxk_index(n, group, i, 0);
                                    for j in 0..k {
                                        gk[wrow + j] += go * xp.data[row + j];
                                        gxp.data[row + j] += go * f.kxk()[wrow + j];
                                    }
                                }
                            }
                            Slot::One(idx) => {
                                let at = xp.at(c, y * s + center, xo * s + center);
                                let wi = f.one_index(n, idx);
                                g1[wi] += go * xp.data[at];
                                gxp.data[at] += go * f.one()[wi];
                            }
                        }
                    }
                }
            }
        }
        gxp.crop_into(&mut gx, b, p);
    }
    Ok(HetConvGrads {
        input: gx,
        kxk: gk,
        one: g1,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{hetconv_forward, ConvGeometry};
    use crate::Rng;

    fn loss(x: &Tensor4, f: &HetConvFilterBank, go: &Tensor4) -> f64 {
        let y = hetconv_forward(x, f, None).unwrap();
        y.data().iter().zip(go.data()).map(|(a, b)| a * b).sum()
    }

    fn rel_err(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(1);
        let g = ConvGeometry::new(4, 4, 3, 1, 1).unwrap();
        let f = HetConvFilterBank::random(g, 2, &mut rng, -1.0, 1.0).unwrap();
        let x = Tensor4::random_uniform((1, 4, 5, 5), &mut rng, -1.0, 1.0).unwrap();
        let go = Tensor4::zeros((1, 4, 5, 5)).unwrap();
        let grads = hetconv_backward(&x, &f, &go).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.kxk.iter().chain(&grads.one).chain(&grads.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn p1_matches_dense_backward() {
        let mut rng = Rng::new(2);
        let g = ConvGeometry::new(3, 4, 3, 2, 1).unwrap();
        let f = HetConvFilterBank::random(g, 1, &mut rng, -1.0, 1.0).unwrap();
        let d = DenseFilterBank::new(g, f.kxk().to_vec(), None).unwrap();
        let x = Tensor4::random_uniform((2, 3, 7, 7), &mut rng, -1.0, 1.0).unwrap();
        let go = Tensor4::random_uniform((2, 4, 4, 4), &mut rng, -1.0, 1.0).unwrap();
        let h = hetconv_backward(&x, &f, &go).unwrap();
        let r = conv2d_backward(&x, &d, &go).unwrap();
        assert!(h.input.max_abs_diff(&r.input).unwrap() < 1e-12);
        for (a, b) in h.kxk.iter().zip(&r.weights) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in h.bias.iter().zip(&r.bias) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_small_case() {
        let mut rng = Rng::new(3);
        let g = ConvGeometry::new(4, 4, 3, 1, 1).unwrap();
        let mut f = HetConvFilterBank::random(g, 2, &mut rng, -1.0, 1.0).unwrap();
        for b in f.bias_mut() {
            *b = rng.uniform(-1.0, 1.0);
        }
        let mut x = Tensor4::random_uniform((1, 4, 5, 5), &mut rng, -1.0, 1.0).unwrap();
        let go = Tensor4::random_uniform((1, 4, 5, 5), &mut rng, -1.0, 1.0).unwrap();
        let grads = hetconv_backward(&x, &f, &go).unwrap();
        let h = 1e-5;

        for i in 0..x.data().len() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let up = loss(&x, &f, &go);
            x.data_mut()[i] = orig - h;
            let down = loss(&x, &f, &go);
            x.data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(rel_err(grads.input.data()[i], num) < 1e-4, "input {i}");
        }
        for i in 0..f.kxk().len() {
            let orig = f.kxk()[i];
            f.kxk_mut()[i] = orig + h;
            let up = loss(&x, &f, &go);
            f.kxk_mut()[i] = orig - h;
            let down = loss(&x, &f, &go);
            f.kxk_mut()[i] = orig;
            assert!(rel_err(grads.kxk[i], (up - down) / (2.0 * h)) < 1e-4, "kxk {i}");
        }
        for i in 0..f.one().len() {
            let orig = f.one()[i];
            f.one_mut()[i] = orig + h;
            let up = loss(&x, &f, &go);
            f.one_mut()[i] = orig - h;
            let down = loss(&x, &f, &go);
            f.one_mut()[i] = orig;
            assert!(rel_err(grads.one[i], (up - down) / (2.0 * h)) < 1e-4, "one {i}");
        }
        for i in 0..f.bias().len() {
            let orig = f.bias()[i];
            f.bias_mut()[i] = orig + h;
            let up = loss(&x, &f, &go);
            f.bias_mut()[i] = orig - h;
            let down = loss(&x, &f, &go);
            f.bias_mut()[i] = orig;
            assert!(rel_err(grads.bias[i], (up - down) / (2.0 * h)) < 1e-4, "bias {i}");
        }
    }

    #[test]
    fn grad_out_shape_checked() {
        let mut rng = Rng::new(4);
        let g = ConvGeometry::new(2, 2, 3, 1, 1).unwrap();
        let f = HetConvFilterBank::random(g, 2, &mut rng, -1.0, 1.0).unwrap();
        let x = Tensor4::zeros((1, 2, 4, 4)).unwrap();
        let go = Tensor4::zeros((1, 2, 3, 4)).unwrap();
        assert!(matches!(
            hetconv_backward(&x, &f, &go),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
