//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, counter)`: there is no
//! generator state to advance, so a Monte Carlo path can be simulated on any
//! thread, in any order, and still see exactly the same Brownian increments.
//! The mixing function is the SplitMix64 finaliser applied to a keyed
//! combination of the three words.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MUL: u64 = 0xD1B5_4A32_D192_ED03;
const COUNTER_MUL: u64 = 0xAEF1_7502_108E_F2D9;
const LANE_MUL: u64 = 0x94D0_49BB_1331_11EB;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a `(seed, stream, counter, lane)` tuple to 64 uniformly mixed bits.
#[inline]
pub fn hash4(seed: u64, stream: u64, counter: u64, lane: u64) -> u64 {
    let k = mix64(seed.wrapping_add(GOLDEN));
    let k = mix64(k ^ stream.wrapping_mul(STREAM_MUL).wrapping_add(GOLDEN));
    let k = mix64(k ^ counter.wrapping_mul(COUNTER_MUL).wrapping_add(GOLDEN));
    mix64(k ^ lane.wrapping_mul(LANE_MUL).wrapping_add(GOLDEN))
}

/// Uniform in the half-open interval `(0, 1]`.
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[0, 1)` keyed by `(seed, stream, counter)`.
#[inline]
pub fn uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    (hash4(seed, stream, counter, 0) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Two independent standard normals via Box-Muller. `lane` selects the pair.
#[inline]
pub fn normal_pair(seed: u64, stream: u64, counter: u64, lane: u64) -> (f64, f64) {
    let u1 = open_unit(hash4(seed, stream, counter, 2 * lane));
    let u2 = open_unit(hash4(seed, stream, counter, 2 * lane + 1));
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Fill `out` with standard normals for one `(path, step)` cell.
#[inline]
pub fn fill_standard_normals(seed: u64, path: u64, step: u64, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    let mut lane = 0u64;
    for pair in &mut chunks {
        let (a, b) = normal_pair(seed, path, step, lane);
        pair[0] = a;
        pair[1] = b;
        lane += 1;
    }
    if let [last] = chunks.into_remainder() {
        *last = normal_pair(seed, path, step, lane).0;
    }
}

/// Standard-normal vector driving path `path` over step `step`.
///
/// The caller scales by `sqrt(dt)`. Identical arguments always give a
/// bit-identical vector.
pub fn brownian_increment(seed: u64, path: u64, step: u64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_standard_normals(seed, path, step, &mut out);
    out
}

/// Derive an independent sub-seed, e.g. for the coarse and fine halves of a
/// two-stage search.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    hash4(seed, u64::MAX, purpose, 7)
}
