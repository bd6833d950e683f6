//! Low-discrepancy point sets for hypothesis scans.

use crate::rng;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut acc = 0.0;
    while index > 0 {
        acc += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    acc
}

/// Randomly shifted Halton sequence in `[0,1)^dim`.
///
/// The Cranley-Patterson shift is derived from `seed`, so the same seed
/// always reproduces the same point set.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        let shift = (0..dim).map(|k| rng::uniform(seed, 0xA11CE, k as u64)).collect();
        Self { shift }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Point `index` of the sequence. Dimensions beyond the prime table fall
    /// back to hashed uniforms.
    pub fn point(&self, index: u64) -> Vec<f64> {
        self.shift
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let raw = match PRIMES.get(k) {
                    Some(&p) => radical_inverse(index + 1, p),
                    None => rng::uniform(0x5EED, k as u64, index),
                };
                (raw + s).fract()
            })
            .collect()
    }
}

/// Map a point of the unit cube onto the closed ball of `radius` around the
/// origin. The radial rescaling `y * |y|_inf / |y|_2` is a bijection from the
/// cube `[-1,1]^n` onto the unit ball.
pub fn cube_to_ball(u: &[f64], radius: f64) -> Vec<f64> {
    let y: Vec<f64> = u.iter().map(|v| 2.0 * v - 1.0).collect();
    let inf = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let two = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if two == 0.0 {
        return vec![0.0; y.len()];
    }
    y.iter().map(|v| radius * v * inf / two).collect()
}

/// `samples` quasi-random points in the ball of `radius`, followed by the
/// origin and every extra point supplied.
pub fn ball_points(dim: usize, radius: f64, samples: usize, seed: u64, extra: &[&[f64]]) -> Vec<Vec<f64>> {
    let seq = Halton::new(dim, seed);
    let mut pts: Vec<Vec<f64>> = (0..samples as u64)
        .map(|i| cube_to_ball(&seq.point(i), radius))
        .collect();
    pts.push(vec![0.0; dim]);
    for p in extra {
        pts.push(p.to_vec());
    }
    pts
}
