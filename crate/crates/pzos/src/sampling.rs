//! Deterministic, seedable sampling of sphere directions and ball points.
//!
//! Every consumer owns an [`RngStream`] identified by `(seed, stream_id)`.
//! The integer layer is a counter-based stream cipher generator, so two
//! streams with the same identity produce bit-identical output across runs
//! and platforms, and streams with distinct `stream_id` are independent
//! without any shared state. Floating-point output is reproducible up to
//! last-ulp differences in transcendental functions; anything built on top
//! of it is compared with tolerances, never bit equality.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seedable random stream. `(seed, stream_id)` fully determines the output
/// sequence; the handle advances an internal counter and is safe to move
/// between threads.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform over the integers {lo, ..., hi}, inclusive on both ends.
    /// Unbiased via rejection on the integer layer.
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi);
        let span = hi - lo + 1;
        if span == 0 {
            // lo = 0, hi = u64::MAX
            return self.next_u64();
        }
        let zone = u64::MAX - (u64::MAX % span + 1) % span;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return lo + v % span;
            }
        }
    }

    /// Standard normal via Box-Muller; consumes two uniforms per draw.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln finite
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Stable stream-id derivation from a list of parts (master seed, role
/// constants, instance indices). SplitMix64-style mixing chain.
pub fn derive_stream_id(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e3779b97f4a7c15;
    for &p in parts {
        h ^= mix64(p.wrapping_add(h));
        h = h.rotate_left(27).wrapping_mul(0x94d049bb133111eb);
    }
    mix64(h)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Uniform direction on the unit sphere in `dx` dimensions: a standard
/// normal vector, normalized. Resamples on norm underflow.
pub fn sample_unit_sphere(rng: &mut RngStream, dx: usize) -> Result<Vec<f64>> {
    if dx == 0 {
        return Err(Error::InvalidDimension);
    }
    loop {
        let v: Vec<f64> = (0..dx).map(|_| rng.standard_normal()).collect();
        let n = crate::vecmath::norm(&v);
        if n > 1e-300 {
            return Ok(v.into_iter().map(|c| c / n).collect());
        }
    }
}

/// Uniform point in the closed unit ball: a sphere direction scaled by
/// U^(1/dx), U uniform on [0, 1].
pub fn sample_unit_ball(rng: &mut RngStream, dx: usize) -> Result<Vec<f64>> {
    let v = sample_unit_sphere(rng, dx)?;
    let r = rng.uniform().powf(1.0 / dx as f64);
    Ok(v.into_iter().map(|c| r * c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::norm;

    #[test]
    fn zero_dimension_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            sample_unit_sphere(&mut rng, 0),
            Err(Error::InvalidDimension)
        ));
        assert!(matches!(
            sample_unit_ball(&mut rng, 0),
            Err(Error::InvalidDimension)
        ));
    }

    #[test]
    fn sphere_sample_is_unit_norm() {
        let mut rng = RngStream::new(7, 3);
        for _ in 0..100 {
            let v = sample_unit_sphere(&mut rng, 3).unwrap();
            assert!((norm(&v) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_dimensional_sphere_is_sign_fair() {
        let mut rng = RngStream::new(11, 0);
        let mut plus = 0usize;
        let n = 100_000;
        for _ in 0..n {
            let v = sample_unit_sphere(&mut rng, 1).unwrap();
            assert!((v[0].abs() - 1.0).abs() <= 1e-12);
            if v[0] > 0.0 {
                plus += 1;
            }
        }
        let frac = plus as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "sign fraction {frac}");
    }

    #[test]
    fn integer_layer_is_reproducible_bitwise() {
        let mut a = RngStream::new(42, 9);
        let mut b = RngStream::new(42, 9);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        // distinct stream ids diverge
        let mut c = RngStream::new(42, 10);
        let first: Vec<u64> = (0..8).map(|_| RngStream::new(42, 9).next_u64()).collect();
        assert!(first.iter().any(|&w| w != c.next_u64()));
    }

    #[test]
    fn kth_sphere_sample_identical_across_streams() {
        let draw = |k: usize| -> Vec<f64> {
            let mut rng = RngStream::new(5, 17);
            let mut last = Vec::new();
            for _ in 0..=k {
                last = sample_unit_sphere(&mut rng, 4).unwrap();
            }
            last
        };
        for k in [0, 3, 10] {
            let a = draw(k);
            let b = draw(k);
            assert_eq!(a, b, "k-th draw must match exactly");
        }
    }

    /// Monte-Carlo check of the analytic second moment E[v vᵀ] = I/dx.
    #[test]
    fn sphere_second_moment_matches_identity_over_dx() {
        let dx = 5;
        let n = 1_000_000usize;
        let mut rng = RngStream::new(2024, 1);
        let mut acc = vec![0.0; dx * dx];
        for _ in 0..n {
            let v = sample_unit_sphere(&mut rng, dx).unwrap();
            for i in 0..dx {
                for j in 0..dx {
                    acc[i * dx + j] += v[i] * v[j];
                }
            }
        }
        for i in 0..dx {
            for j in 0..dx {
                let want = if i == j { 1.0 / dx as f64 } else { 0.0 };
                let got = acc[i * dx + j] / n as f64;
                assert!(
                    (got - want).abs() < 0.01,
                    "moment ({i},{j}) = {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn ball_sample_stays_in_ball() {
        let mut rng = RngStream::new(3, 3);
        for _ in 0..1000 {
            let u = sample_unit_ball(&mut rng, 4).unwrap();
            assert!(norm(&u) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn ball_mean_is_centered_in_one_dimension() {
        let mut rng = RngStream::new(8, 1);
        let n = 1_000_000usize;
        let mut s = 0.0;
        for _ in 0..n {
            s += sample_unit_ball(&mut rng, 1).unwrap()[0];
        }
        assert!((s / n as f64).abs() < 0.005);
    }

    /// Area-ratio oracle for the uniform disc: P(|u| <= 1/2) = 1/4.
    #[test]
    fn disc_radius_fraction_matches_area_ratio() {
        let mut rng = RngStream::new(21, 4);
        let n = 1_000_000usize;
        let mut inside = 0usize;
        for _ in 0..n {
            if norm(&sample_unit_ball(&mut rng, 2).unwrap()) <= 0.5 {
                inside += 1;
            }
        }
        let frac = inside as f64 / n as f64;
        assert!((frac - 0.25).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn isotropy_coordinate_means_vanish() {
        let dx = 10;
        let n = 100_000usize;
        let mut rng = RngStream::new(99, 0);
        let mut means = vec![0.0; dx];
        for _ in 0..n {
            let v = sample_unit_sphere(&mut rng, dx).unwrap();
            for (m, c) in means.iter_mut().zip(&v) {
                *m += c;
            }
        }
        let bound = 4.0 / (n as f64).sqrt();
        for (i, m) in means.iter().enumerate() {
            let mean = m / n as f64;
            assert!(mean.abs() <= bound, "coordinate {i} mean {mean}");
        }
    }

    #[test]
    fn derive_stream_id_is_stable_and_sensitive() {
        let a = derive_stream_id(&[1, 2, 3]);
        assert_eq!(a, derive_stream_id(&[1, 2, 3]));
        assert_ne!(a, derive_stream_id(&[1, 2, 4]));
        assert_ne!(a, derive_stream_id(&[1, 3, 2]));
    }
}
