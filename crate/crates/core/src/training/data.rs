//! Bundled toy datasets. Each is generated from a fixed seed, independent of
//! the training seed, so every run sees the same data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `n x outputs` regression targets.
    Values(Tensor),
    Labels { labels: Vec<usize>, classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gathers the samples at `idx` into a batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Targets) {
        let row = self.inputs.row_len();
        let mut shape = self.inputs.shape.clone();
        shape[0] = idx.len();
        let data = idx
            .iter()
            .flat_map(|&i| self.inputs.data[i * row..(i + 1) * row].iter().copied())
            .collect();
        let targets = match &self.targets {
            Targets::Values(t) => {
                let w = t.row_len();
                let d = idx
                    .iter()
                    .flat_map(|&i| t.data[i * w..(i + 1) * w].iter().copied())
                    .collect();
                Targets::Values(Tensor::new(vec![idx.len(), w], d))
            }
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        (Tensor::new(shape, data), targets)
    }
}

const DATA_SEED: u64 = 0x5eed_da7a;

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    let v: f64 = StandardNormal.sample(rng);
    v as f32
}

/// `y = x . w + b + noise` with `x ~ N(0, I_8)`, noise std 0.05, 512 samples.
pub fn regression() -> Dataset {
    let (n, d) = (512, 8);
    let noise = 0.05f32;
    let mut rng = ChaCha8Rng::seed_from_u64(DATA_SEED);
    let w: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let b = 0.5f32;
    let x: Vec<f32> = (0..n * d).map(|_| normal(&mut rng)).collect();
    let y: Vec<f32> = (0..n)
        .map(|i| {
            let dot: f32 = x[i * d..(i + 1) * d].iter().zip(&w).map(|(a, b)| a * b).sum();
            dot + b + noise * normal(&mut rng)
        })
        .collect();
    Dataset {
        inputs: Tensor::new(vec![n, d], x),
        targets: Targets::Values(Tensor::new(vec![n, 1], y)),
    }
}

/// Three overlapping Gaussian blobs in the plane, 600 samples.
pub fn blobs() -> Dataset {
    let (n, classes) = (600, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(DATA_SEED + 1);
    let mut x = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = c as f32 * std::f32::consts::TAU / classes as f32;
        x.push(1.5 * angle.cos() + 0.8 * normal(&mut rng));
        x.push(1.5 * angle.sin() + 0.8 * normal(&mut rng));
        labels.push(c);
    }
    Dataset {
        inputs: Tensor::new(vec![n, 2], x),
        targets: Targets::Labels { labels, classes },
    }
}

/// 8x8 single-channel images of a horizontal bar, vertical bar, diagonal or
/// anti-diagonal under pixel noise, 512 samples.
pub fn bars() -> Dataset {
    let (n, side, classes) = (512, 8usize, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(DATA_SEED + 2);
    let mut x = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let offset = rng.random_range(0..side);
        let off = offset as isize - (side / 2) as isize;
        for r in 0..side {
            for col in 0..side {
                let on = match c {
                    0 => r == offset,
                    1 => col == offset,
                    2 => r as isize - col as isize == off / 2,
                    _ => (r + col) as isize == side as isize - 1 + off / 2,
                };
                let v = if on { 1.0 } else { 0.0 };
                x.push(v + 0.3 * normal(&mut rng));
            }
        }
        labels.push(c);
    }
    Dataset {
        inputs: Tensor::new(vec![n, 1, side, side], x),
        targets: Targets::Labels { labels, classes },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasets_are_fixed() {
        assert_eq!(regression(), regression());
        assert_eq!(blobs().len(), 600);
        let b = bars();
        assert_eq!(b.inputs.shape, vec![512, 1, 8, 8]);
        let (x, t) = b.batch(&[3, 1]);
        assert_eq!(x.shape, vec![2, 1, 8, 8]);
        assert_eq!(x.data[..64], b.inputs.data[3 * 64..4 * 64]);
        match t {
            Targets::Labels { labels, .. } => assert_eq!(labels, vec![3, 1]),
            _ => unreachable!(),
        }
    }
}
