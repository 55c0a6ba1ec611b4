//! Convolution kernels.
//!
//! All kernels are cross-correlations (no kernel flip) over zero-padded NCHW
//! input. Each forward pass optionally accrues into a [`MulCounter`] the exact
//! number of scalar multiplications it executes; padding is materialized, so
//! multiplications against padded zeros are executed and counted like any
//! other.
//!
//! # HetConv channel layout
//!
//! With part `P`, output filter `n` carries `K×K` kernels on the input
//! channels `c ≡ n (mod P)` (`M/P` of them, in increasing channel order) and
//! a `1×1` kernel on each remaining channel (again in increasing order). The
//! `1×1` taps read the center `(K/2, K/2)` of the receptive field. `P = 1` is
//! a standard dense filter.

mod backward;
mod filters;
mod forward;
mod grouped;
mod weights;

pub use backward::{conv2d_backward, hetconv_backward, DenseGrads, HetConvGrads};
pub use filters::{embed_as_dense, DenseFilterBank, HetConvFilterBank};
pub use forward::{conv2d_forward, hetconv_forward};
pub use grouped::{dwc_forward, gwc_forward, pwc_forward, GroupedFilterBank};
pub use weights::{WeightFile, WEIGHT_LAYOUT_VERSION};

pub(crate) use filters::check_part;
pub(crate) use grouped::check_groups;

use crate::{Error, Result, Tensor4};

/// Shape parameters shared by every convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let g = ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Geometry(format!(
                "channel counts must be at least 1 (in={}, out={})",
                self.in_channels, self.out_channels
            )));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Geometry(format!(
                "kernel size must be odd and at least 1, got {}",
                self.kernel
            )));
        }
        if self.stride == 0 {
            return Err(Error::Geometry("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let extent = |d: usize| -> Result<usize> {
            let padded = d + 2 * self.padding;
            if padded < self.kernel {
                return Err(Error::Geometry(format!(
                    "kernel {} exceeds padded input extent {padded}",
                    self.kernel
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((extent(h)?, extent(w)?))
    }
}

/// Accumulator of executed scalar multiplications.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MulCounter {
    count: u64,
}

impl MulCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn add(&mut self, muls: u64) {
        self.count += muls;
    }

    pub fn reset(&mut self) {
        self.count = 0;
    }
}

pub(crate) fn charge(counter: Option<&mut MulCounter>, muls: u64) {
    if let Some(c) = counter {
        c.add(muls);
    }
}

/// Zero-padded copy of one batch item as a `(c, h + 2p, w + 2p)` plane.
pub(crate) struct Padded {
    pub data: Vec<f64>,
    pub h: usize,
    pub w: usize,
}

impl Padded {
    pub fn from_item(x: &Tensor4, n: usize, padding: usize) -> Padded {
        let d = x.dims();
        let (h, w) = (d.h + 2 * padding, d.w + 2 * padding);
        let mut data = vec![0.0; d.c * h * w];
        let src = x.item(n);
        for c in 0..d.c {
            for y in 0..d.h {
                let s = (c * d.h + y) * d.w;
                let t = (c * h + y + padding) * w + padding;
                data[t..t + d.w].copy_from_slice(&src[s..s + d.w]);
            }
        }
        Padded { data, h, w }
    }

    pub fn zeros(c: usize, h: usize, w: usize, padding: usize) -> Padded {
        let (h, w) = (h + 2 * padding, w + 2 * padding);
        Padded {
            data: vec![0.0; c * h * w],
            h,
            w,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    /// Writes the interior back into batch item `n` of `out`.
    pub fn crop_into(&self, out: &mut Tensor4, n: usize, padding: usize) {
        let d = out.dims();
        let base = n * d.c * d.h * d.w;
        let data = out.data_mut();
        for c in 0..d.c {
            for y in 0..d.h {
                let s = self.at(c, y + padding, padding);
                let t = base + (c * d.h + y) * d.w;
                data[t..t + d.w].copy_from_slice(&self.data[s..s + d.w]);
            }
        }
    }
}

pub(crate) fn check_input(x: &Tensor4, g: &ConvGeometry) -> Result<(usize, usize)> {
    g.validate()?;
    if x.dims().c != g.in_channels {
        return Err(Error::shape(
            format!("{} input channels", g.in_channels),
            format!("{} input channels", x.dims().c),
        ));
    }
    g.output_size(x.dims().h, x.dims().w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_rejects_even_kernels_and_zero_stride() {
        assert!(ConvGeometry::new(4, 4, 2, 1, 0).is_err());
        assert!(ConvGeometry::new(4, 4, 0, 1, 0).is_err());
        assert!(ConvGeometry::new(4, 4, 3, 0, 0).is_err());
        assert!(ConvGeometry::new(0, 4, 3, 1, 0).is_err());
        assert!(ConvGeometry::new(4, 4, 3, 1, 1).is_ok());
    }

    #[test]
    fn output_size_formula() {
        let g = ConvGeometry::new(1, 1, 3, 2, 1).unwrap();
        assert_eq!(g.output_size(32, 32).unwrap(), (16, 16));
        let g = ConvGeometry::new(1, 1, 3, 1, 0).unwrap();
        assert_eq!(g.output_size(3, 3).unwrap(), (1, 1));
        assert!(g.output_size(2, 5).is_err());
        let g = ConvGeometry::new(1, 1, 7, 2, 3).unwrap();
        assert_eq!(g.output_size(224, 224).unwrap(), (112, 112));
    }
}
