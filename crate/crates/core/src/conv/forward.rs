use crate::conv::filters::{check_part, Slot};
use crate::conv::{charge, check_input, DenseFilterBank, HetConvFilterBank, MulCounter, Padded};
use crate::{Dims4, Result, Tensor4};

/// Standard convolution. Accrues `D_o²·M·N·K²` multiplications per batch item.
pub fn conv2d_forward(x: &Tensor4, f: &DenseFilterBank, counter: Option<&mut MulCounter>) -> Result<Tensor4> {
    let g = *f.geometry();
    let (ho, wo) = check_input(x, &g)?;
    let batch = x.dims().n;
    let (m, k, s) = (g.in_channels, g.kernel, g.stride);
    let mut out = Tensor4::zeros_like_dims(Dims4::new(batch, g.out_channels, ho, wo)?);
    let w = f.weights();
    let mut muls = 0u64;
    for b in 0..batch {
        let xp = Padded::from_item(x, b, g.padding);
        for n in 0..g.out_channels {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..m {
                        for i in 0..k {
                            let row = xp.at(c, y * s + i, xo * s);
                            let wrow = f.weight_index(n, c, i, 0);
                            for j in 0..k {
                                acc += w[wrow + j] * xp.data[row + j];
                            }
                        }
                    }
                    muls += (m * k * k) as u64;
                    let o = out.dims().offset(b, n, y, xo);
                    out.data_mut()[o] = acc + f.bias()[n];
                }
            }
        }
    }
    charge(counter, muls);
    Ok(out)
}

/// HetConv forward pass. Accrues `D_o²·N·(M/P·K² + M − M/P)` multiplications
/// per batch item.
///
/// Channels are accumulated in increasing order, so with `P = 1` the result
/// is bitwise identical to [`conv2d_forward`] on the same weights.
pub fn hetconv_forward(x: &Tensor4, f: &HetConvFilterBank, counter: Option<&mut MulCounter>) -> Result<Tensor4> {
    let g = *f.geometry();
    check_part(g.in_channels, f.part())?;
    let (ho, wo) = check_input(x, &g)?;
    let batch = x.dims().n;
    let (m, k, s) = (g.in_channels, g.kernel, g.stride);
    let center = k / 2;
    let mut out = Tensor4::zeros_like_dims(Dims4::new(batch, g.out_channels, ho, wo)?);
    let per_output = (f.kxk_per_filter() * k * k + f.one_per_filter()) as u64;
    let slots: Vec<Vec<Slot>> = (0..g.out_channels)
        .map(|n| (0..m).map(|c| f.slot(n, c)).collect())
        .collect();
    let mut muls = 0u64;
    for b in 0..batch {
        let xp = Padded::from_item(x, b, g.padding);
        for (n, filter_slots) in slots.iter().enumerate() {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = 0.0;
                    for (c, slot) in filter_slots.iter().enumerate() {
                        match *slot {
                            Slot::Kxk(group) => {
                                for i in 0..k {
                                    let row = xp.at(c, y * s + i, xo * s);
                                    let wrow = f.kxk_index(n, group, i, 0);
                                    for j in 0..k {
                                        acc += f.kxk()[wrow + j] * xp.data[row + j];
                                    }
                                }
                            }
                            Slot::One(idx) => {
                                let at = xp.at(c, y * s + center, xo * s + center);
                                acc += f.one()[f.one_index(n, idx)] * xp.data[at];
                            }
                        }
                    }
                    muls += per_output;
                    let o = out.dims().offset(b, n, y, xo);
                    out.data_mut()[o] = acc + f.bias()[n];
                }
            }
        }
    }
    charge(counter, muls);
    Ok(out)
}
