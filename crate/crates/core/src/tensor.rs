//! Dense 4-D tensors in NCHW order.
//!
//! # Random fill
//!
//! [`Rng`] wraps ChaCha8 from `rand_chacha`, seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`. A uniform draw in `[lo, hi)` takes one
//! `f64` from `rand`'s standard distribution (53 random mantissa bits scaled
//! into `[0, 1)`) and maps it to `lo + (hi - lo) * u`. Both crates guarantee
//! value stability for this path, so a seed reproduces the same tensor on
//! every platform.
//!
//! # Blob format
//!
//! A tensor blob is 32 bytes of header followed by the payload, all
//! little-endian:
//!
//! | offset | size       | content                          |
//! |--------|------------|----------------------------------|
//! | 0      | 8          | `n` as `u64`                     |
//! | 8      | 8          | `c` as `u64`                     |
//! | 16     | 8          | `h` as `u64`                     |
//! | 24     | 8          | `w` as `u64`                     |
//! | 32     | 8·n·c·h·w  | elements as `f64`, NCHW order    |

use std::fmt;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const BLOB_HEADER_LEN: usize = 32;

/// Tensor dimensions `(n, c, h, w)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let dims = Dims4 { n, c, h, w };
        if dims.as_array().contains(&0) {
            return Err(Error::ZeroDimension(dims.as_array()));
        }
        Ok(dims)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of `(n, c, h, w)`: `((n·C + c)·H + h)·W + w`.
    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Debug for Dims4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl TryFrom<(usize, usize, usize, usize)> for Dims4 {
    type Error = Error;

    fn try_from((n, c, h, w): (usize, usize, usize, usize)) -> Result<Self> {
        Dims4::new(n, c, h, w)
    }
}

/// Seeded pseudo-random generator (ChaCha8).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.gen();
        let v = lo + (hi - lo) * u;
        // lo + span·u can round up to hi when the span is wide.
        if v >= hi {
            lo.max(next_down(hi))
        } else {
            v
        }
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    /// Picks one element of a non-empty slice.
    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.inner.gen_range(0..items.len())]
    }

    pub(crate) fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

fn next_down(x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return x;
    }
    if x == 0.0 {
        return -f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits - 1)
    } else {
        f64::from_bits(bits + 1)
    }
}

/// Dense `f64` tensor stored in row-major NCHW order.
#[derive(Clone, PartialEq)]
pub struct Tensor4 {
    dims: Dims4,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("dims", &self.dims)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor4 {
    pub fn zeros(dims: (usize, usize, usize, usize)) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: (usize, usize, usize, usize), value: f64) -> Result<Self> {
        let dims = Dims4::try_from(dims)?;
        Ok(Tensor4 {
            dims,
            data: vec![value; dims.len()],
        })
    }

    pub fn from_vec(dims: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let dims = Dims4::try_from(dims)?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: data.len(),
            });
        }
        Ok(Tensor4 { dims, data })
    }

    pub(crate) fn zeros_like_dims(dims: Dims4) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    /// Elements drawn uniformly from `[lo, hi)` in flat order.
    pub fn random_uniform(dims: (usize, usize, usize, usize), rng: &mut Rng, lo: f64, hi: f64) -> Result<Self> {
        // Also rejects NaN bounds.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(lo < hi) {
            return Err(Error::InvalidRange { lo, hi });
        }
        let dims = Dims4::try_from(dims)?;
        let data = (0..dims.len()).map(|_| rng.uniform(lo, hi)).collect();
        Ok(Tensor4 { dims, data })
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.dims.offset(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.dims.offset(n, c, h, w);
        self.data[i] = value;
    }

    pub fn scaled(&self, factor: f64) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Contiguous `(c, h, w)` plane of batch item `n`.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.dims.c * self.dims.h * self.dims.w;
        &self.data[n * len..(n + 1) * len]
    }

    /// Maximum elementwise `|a - b|`.
    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::shape(self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOB_HEADER_LEN + 8 * self.data.len());
        for d in self.dims.as_array() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes one blob that must span the whole input.
    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let (tensor, used) = Self::read_blob(bytes)?;
        if used != bytes.len() {
            return Err(Error::Decode(format!(
                "{} trailing bytes after tensor blob",
                bytes.len() - used
            )));
        }
        Ok(tensor)
    }

    /// Decodes a blob from the front of `bytes`, returning the tensor and the
    /// number of bytes consumed.
    pub fn read_blob(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < BLOB_HEADER_LEN {
            return Err(Error::Decode(format!(
                "blob header needs {BLOB_HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let mut raw = [0u64; 4];
        for (i, d) in raw.iter_mut().enumerate() {
            let chunk: [u8; 8] = bytes[i * 8..i * 8 + 8].try_into().expect("8-byte slice");
            *d = u64::from_le_bytes(chunk);
        }
        let count = raw
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::DimensionOverflow(raw))?;
        let payload = count
            .checked_mul(8)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or(Error::DimensionOverflow(raw))?;
        let dims = Dims4::new(raw[0] as usize, raw[1] as usize, raw[2] as usize, raw[3] as usize)?;
        let body = &bytes[BLOB_HEADER_LEN..];
        if body.len() < payload {
            return Err(Error::Decode(format!(
                "blob payload needs {payload} bytes, got {}",
                body.len()
            )));
        }
        let data = body[..payload]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok((Tensor4 { dims, data }, BLOB_HEADER_LEN + payload))
    }
}
