use rand_distr::{Distribution, Normal};

use crate::{Result, Rng, Tensor4};

pub const CLASSES: usize = 10;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_SIZE: usize = 16;
const PIXELS: usize = IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE;

/// Procedural 10-class image set (`3×16×16`).
///
/// Classes: 0 horizontal bar, 1 vertical bar, 2 diagonal, 3 anti-diagonal,
/// 4 disc, 5 ring, 6 plus, 7 cross, 8 checkerboard, 9 square outline. Each
/// sample shifts its pattern by up to ±2 pixels, scales every channel by an
/// independent gain in `[0.4, 1)` and adds Gaussian noise (σ = 0.3). Sample
/// `i` has label `i mod 10`, so any prefix of whole rounds is balanced.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    seed: u64,
    images: Vec<f64>,
    labels: Vec<usize>,
}

pub const NOISE_SIGMA: f64 = 0.3;

fn pattern(class: usize, y: usize, x: usize, dy: f64, dx: f64) -> bool {
    let c = (IMAGE_SIZE as f64 - 1.0) / 2.0;
    let v = y as f64 - c - dy;
    let u = x as f64 - c - dx;
    let r = (u * u + v * v).sqrt();
    let box_r = u.abs().max(v.abs());
    match class {
        0 => v.abs() < 1.5 && u.abs() < 6.0,
        1 => u.abs() < 1.5 && v.abs() < 6.0,
        2 => (u - v).abs() < 1.5 && box_r < 6.0,
        3 => (u + v).abs() < 1.5 && box_r < 6.0,
        4 => r < 4.0,
        5 => (3.5..5.5).contains(&r),
        6 => (u.abs() < 1.2 && v.abs() < 5.5) || (v.abs() < 1.2 && u.abs() < 5.5),
        7 => ((u - v).abs() < 1.2 || (u + v).abs() < 1.2) && box_r < 5.5,
        8 => ((((u + 16.0) / 3.0).floor() + ((v + 16.0) / 3.0).floor()) as i64).rem_euclid(2) == 0,
        9 => (3.5..5.5).contains(&box_r),
        _ => unreachable!("class out of range"),
    }
}

impl ToyDataset {
    /// `per_class · 10` samples, fully determined by `seed`.
    pub fn generate(seed: u64, per_class: usize) -> ToyDataset {
        let mut rng = Rng::new(seed);
        let noise = Normal::new(0.0, NOISE_SIGMA).expect("sigma is positive");
        let total = per_class * CLASSES;
        let mut images = Vec::with_capacity(total * PIXELS);
        let mut labels = Vec::with_capacity(total);
        for i in 0..total {
            let class = i % CLASSES;
            let dy = rng.int_in(0, 4) as f64 - 2.0;
            let dx = rng.int_in(0, 4) as f64 - 2.0;
            let gains: Vec<f64> = (0..IMAGE_CHANNELS).map(|_| rng.uniform(0.4, 1.0)).collect();
            for &gain in &gains {
                for y in 0..IMAGE_SIZE {
                    for x in 0..IMAGE_SIZE {
                        let on = if pattern(class, y, x, dy, dx) { gain } else { 0.0 };
                        images.push(on + noise.sample(rng.inner_mut()));
                    }
                }
            }
            labels.push(class);
        }
        ToyDataset { seed, images, labels }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn sample(&self, i: usize) -> (Tensor4, usize) {
        let t = Tensor4::from_vec((1, IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE), self.image(i).to_vec())
            .expect("sample dims match");
        (t, self.labels[i])
    }

    /// Stacks the given samples into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let x = Tensor4::from_vec((indices.len(), IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE), data)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Splits off the last `val_per_class · 10` samples as a held-out set.
    pub fn split(mut self, val_per_class: usize) -> (ToyDataset, ToyDataset) {
        let keep = self.len().saturating_sub(val_per_class * CLASSES);
        let val = ToyDataset {
            seed: self.seed,
            images: self.images.split_off(keep * PIXELS),
            labels: self.labels.split_off(keep),
        };
        (self, val)
    }
}
