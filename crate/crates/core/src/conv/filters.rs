use crate::conv::ConvGeometry;
use crate::{Error, Result, Rng};

/// Standard filter bank: weights `[N][M][K][K]` and bias `[N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseFilterBank {
    geometry: ConvGeometry,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseFilterBank {
    pub fn new(geometry: ConvGeometry, weights: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        geometry.validate()?;
        let g = &geometry;
        let expected = g.out_channels * g.in_channels * g.kernel * g.kernel;
        if weights.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: weights.len(),
            });
        }
        let bias = bias.unwrap_or_else(|| vec![0.0; g.out_channels]);
        if bias.len() != g.out_channels {
            return Err(Error::LengthMismatch {
                expected: g.out_channels,
                found: bias.len(),
            });
        }
        Ok(DenseFilterBank {
            geometry,
            weights,
            bias,
        })
    }

    /// Uniform random weights in `[lo, hi)` and zero bias.
    pub fn random(geometry: ConvGeometry, rng: &mut Rng, lo: f64, hi: f64) -> Result<Self> {
        let g = &geometry;
        let len = g.out_channels * g.in_channels * g.kernel * g.kernel;
        let weights = (0..len).map(|_| rng.uniform(lo, hi)).collect();
        Self::new(geometry, weights, None)
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// `[weights, bias]`.
    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weights, &mut self.bias]
    }

    #[inline]
    pub fn weight_index(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        let g = &self.geometry;
        ((n * g.in_channels + c) * g.kernel + i) * g.kernel + j
    }

    pub fn weight(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.weights[self.weight_index(n, c, i, j)]
    }
}

/// HetConv filter bank with part `P`.
///
/// `kxk` holds `[N][M/P][K][K]`: entry `[n][g]` is the kernel applied to
/// input channel `n mod P + g·P`. `one` holds `[N][M - M/P]`: entry `[n][j]`
/// is the `1×1` weight for the `j`-th channel (in increasing order) not
/// covered by the `K×K` group.
#[derive(Clone, Debug, PartialEq)]
pub struct HetConvFilterBank {
    geometry: ConvGeometry,
    part: usize,
    kxk: Vec<f64>,
    one: Vec<f64>,
    bias: Vec<f64>,
}

impl HetConvFilterBank {
    pub fn new(
        geometry: ConvGeometry,
        part: usize,
        kxk: Vec<f64>,
        one: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        geometry.validate()?;
        check_part(geometry.in_channels, part)?;
        let g = &geometry;
        let groups = g.in_channels / part;
        let expected_kxk = g.out_channels * groups * g.kernel * g.kernel;
        let expected_one = g.out_channels * (g.in_channels - groups);
        if kxk.len() != expected_kxk {
            return Err(Error::LengthMismatch {
                expected: expected_kxk,
                found: kxk.len(),
            });
        }
        if one.len() != expected_one {
            return Err(Error::LengthMismatch {
                expected: expected_one,
                found: one.len(),
            });
        }
        let bias = bias.unwrap_or_else(|| vec![0.0; g.out_channels]);
        if bias.len() != g.out_channels {
            return Err(Error::LengthMismatch {
                expected: g.out_channels,
                found: bias.len(),
            });
        }
        Ok(HetConvFilterBank {
            geometry,
            part,
            kxk,
            one,
            bias,
        })
    }

    /// Uniform random weights in `[lo, hi)` and zero bias. The `K×K` weights
    /// are drawn first, then the `1×1` weights.
    pub fn random(geometry: ConvGeometry, part: usize, rng: &mut Rng, lo: f64, hi: f64) -> Result<Self> {
        geometry.validate()?;
        check_part(geometry.in_channels, part)?;
        let g = &geometry;
        let groups = g.in_channels / part;
        let kxk = (0..g.out_channels * groups * g.kernel * g.kernel)
            .map(|_| rng.uniform(lo, hi))
            .collect();
        let one = (0..g.out_channels * (g.in_channels - groups))
            .map(|_| rng.uniform(lo, hi))
            .collect();
        Self::new(geometry, part, kxk, one, None)
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn part(&self) -> usize {
        self.part
    }

    /// Number of `K×K` kernels per filter (`M/P`).
    pub fn kxk_per_filter(&self) -> usize {
        self.geometry.in_channels / self.part
    }

    /// Number of `1×1` kernels per filter (`M - M/P`).
    pub fn one_per_filter(&self) -> usize {
        self.geometry.in_channels - self.kxk_per_filter()
    }

    pub fn kxk(&self) -> &[f64] {
        &self.kxk
    }

    pub fn kxk_mut(&mut self) -> &mut [f64] {
        &mut self.kxk
    }

    pub fn one(&self) -> &[f64] {
        &self.one
    }

    pub fn one_mut(&mut self) -> &mut [f64] {
        &mut self.one
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// `[kxk, one, bias]`.
    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.kxk, &mut self.one, &mut self.bias]
    }

    pub fn is_kxk_channel(&self, filter: usize, channel: usize) -> bool {
        channel % self.part == filter % self.part
    }

    /// Where input channel `c` sits within filter `n`'s kernel groups.
    pub fn slot(&self, n: usize, c: usize) -> Slot {
        let r = n % self.part;
        if c % self.part == r {
            Slot::Kxk(c / self.part)
        } else {
            // K×K channels below c are r, r+P, ... < c.
            let below = if c <= r { 0 } else { (c - r - 1) / self.part + 1 };
            Slot::One(c - below)
        }
    }

    #[inline]
    pub fn kxk_index(&self, n: usize, group: usize, i: usize, j: usize) -> usize {
        let k = self.geometry.kernel;
        ((n * self.kxk_per_filter() + group) * k + i) * k + j
    }

    #[inline]
    pub fn one_index(&self, n: usize, j: usize) -> usize {
        n * self.one_per_filter() + j
    }
}

/// Position of an input channel inside one HetConv filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Kxk(usize),
    One(usize),
}

pub(crate) fn check_part(channels: usize, part: usize) -> Result<()> {
    if part == 0 || part > channels {
        return Err(Error::Geometry(format!("part P={part} must lie in [1, {channels}]")));
    }
    if !channels.is_multiple_of(part) {
        return Err(Error::Divisibility {
            divisor_name: "P",
            divisor: part,
            value_name: "input channels",
            value: channels,
            layer: None,
        });
    }
    Ok(())
}

/// Dense bank equal to `f`: `K×K` channels copied verbatim, `1×1` channels
/// placed at the kernel center with zeros elsewhere.
pub fn embed_as_dense(f: &HetConvFilterBank) -> DenseFilterBank {
    let g = *f.geometry();
    let k = g.kernel;
    let mut weights = vec![0.0; g.out_channels * g.in_channels * k * k];
    let at = |n: usize, c: usize, i: usize, j: usize| ((n * g.in_channels + c) * k + i) * k + j;
    for n in 0..g.out_channels {
        for c in 0..g.in_channels {
            match f.slot(n, c) {
                Slot::Kxk(group) => {
                    for i in 0..k {
                        for j in 0..k {
                            weights[at(n, c, i, j)] = f.kxk[f.kxk_index(n, group, i, j)];
                        }
                    }
                }
                Slot::One(idx) => {
                    weights[at(n, c, k / 2, k / 2)] = f.one[f.one_index(n, idx)];
                }
            }
        }
    }
    DenseFilterBank::new(g, weights, Some(f.bias.clone())).expect("embedding preserves geometry")
}
