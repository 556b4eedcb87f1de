//! Bilevel problem interfaces: a leader objective with exact partial
//! gradients and a black-box follower-response oracle.
//!
//! The smoothed response (ball-averaged follower response) is deliberately
//! available only as a Monte-Carlo reference for tests; the optimization
//! algorithms never evaluate it.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{sample_unit_ball, RngStream};
use crate::vecmath;

/// Optimization sense of the leader objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Validated smoothing radius; rejected once at construction rather than
/// per call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mu(f64);

impl Mu {
    pub fn new(mu: f64) -> Result<Self> {
        if mu.is_finite() && mu > 0.0 {
            Ok(Mu(mu))
        } else {
            Err(Error::InvalidMu(mu))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Black-box mapping from a leader decision to the followers' unique
/// response. `respond` must be deterministic, and its output must satisfy
/// `is_feasible` (membership in the follower set within 1e-8).
pub trait FollowerOracle: Sync {
    fn leader_dim(&self) -> usize;
    fn follower_dim(&self) -> usize;
    fn respond(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn is_feasible(&self, y: &[f64]) -> bool;
}

impl<O: FollowerOracle + ?Sized> FollowerOracle for &O {
    fn leader_dim(&self) -> usize {
        (**self).leader_dim()
    }
    fn follower_dim(&self) -> usize {
        (**self).follower_dim()
    }
    fn respond(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).respond(x)
    }
    fn is_feasible(&self, y: &[f64]) -> bool {
        (**self).is_feasible(y)
    }
}

/// Oracle wrapper with a monotone atomic counter of `respond` invocations.
/// Safe to query from multiple workers concurrently.
pub struct Counted<O> {
    inner: O,
    calls: AtomicU64,
}

impl<O: FollowerOracle> Counted<O> {
    pub fn new(inner: O) -> Self {
        Counted {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<O: FollowerOracle> FollowerOracle for Counted<O> {
    fn leader_dim(&self) -> usize {
        self.inner.leader_dim()
    }
    fn follower_dim(&self) -> usize {
        self.inner.follower_dim()
    }
    fn respond(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.respond(x)
    }
    fn is_feasible(&self, y: &[f64]) -> bool {
        self.inner.is_feasible(y)
    }
}

/// Leader cost with exact partial gradients in both arguments.
pub trait LeaderObjective: Sync {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn sense(&self) -> Sense;
}

impl<L: LeaderObjective + ?Sized> LeaderObjective for &L {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (**self).eval(x, y)
    }
    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        (**self).grad_x(x, y)
    }
    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        (**self).grad_y(x, y)
    }
    fn sense(&self) -> Sense {
        (**self).sense()
    }
}

/// Regularity constants of a problem. Consumed only by the theoretical
/// parameter helper, never by the algorithms themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Lipschitz constant of the leader cost (and bound on its partials).
    pub l_f: f64,
    /// Lipschitz constant of the leader cost gradient.
    pub l_g: f64,
    /// Lipschitz constant of the follower response.
    pub l_y: f64,
    /// Suboptimality bound at the initial point.
    pub delta: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l_f", self.l_f),
            ("l_g", self.l_g),
            ("l_y", self.l_y),
            ("delta", self.delta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "constant {name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Monte-Carlo estimate with per-component standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
}

impl McEstimate {
    /// Euclidean norm of the combined standard-error vector.
    pub fn stderr_norm(&self) -> f64 {
        vecmath::norm(&self.stderr)
    }
}

/// Monte-Carlo reference for the ball-smoothed response
/// (1/n) Σ y*(x + μ u_k), u_k uniform on the unit ball.
pub fn smoothed_response_mc(
    oracle: &dyn FollowerOracle,
    x: &[f64],
    mu: Mu,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig(
            "n_samples must be at least 1".into(),
        ));
    }
    let dx = oracle.leader_dim();
    let dy = oracle.follower_dim();
    let mut sum = vec![0.0; dy];
    let mut sum_sq = vec![0.0; dy];
    for _ in 0..n_samples {
        let u = sample_unit_ball(rng, dx)?;
        let mut z = x.to_vec();
        vecmath::axpy(&mut z, mu.get(), &u);
        let y = oracle.respond(&z).map_err(|e| e.at_query(&z))?;
        for i in 0..dy {
            sum[i] += y[i];
            sum_sq[i] += y[i] * y[i];
        }
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr: Vec<f64> = if n_samples > 1 {
        sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / n - m * m).max(0.0) / (n - 1.0)).sqrt())
            .collect()
    } else {
        vec![0.0; dy]
    };
    Ok(McEstimate {
        mean,
        stderr,
        n_samples,
    })
}

/// True iff the running ball-average of follower responses is feasible at
/// every prefix length in {1, ..., n_samples}. For a convex follower set
/// this must always hold.
pub fn check_smoothing_feasibility(
    oracle: &dyn FollowerOracle,
    x: &[f64],
    mu: Mu,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<bool> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig(
            "n_samples must be at least 1".into(),
        ));
    }
    let dx = oracle.leader_dim();
    let dy = oracle.follower_dim();
    let mut sum = vec![0.0; dy];
    for k in 1..=n_samples {
        let u = sample_unit_ball(rng, dx)?;
        let mut z = x.to_vec();
        vecmath::axpy(&mut z, mu.get(), &u);
        let y = oracle.respond(&z).map_err(|e| e.at_query(&z))?;
        for i in 0..dy {
            sum[i] += y[i];
        }
        let avg: Vec<f64> = sum.iter().map(|s| s / k as f64).collect();
        if !oracle.is_feasible(&avg) {
            return Ok(false);
        }
    }
    Ok(true)
}


#[cfg(test)]
mod tests {
    use super::test_oracles::*;
    use super::*;
    use crate::vecmath::Matrix;

    #[test]
    fn mu_must_be_positive() {
        assert!(Mu::new(0.0).is_err());
        assert!(Mu::new(-0.1).is_err());
        assert!(Mu::new(f64::NAN).is_err());
        assert_eq!(Mu::new(0.5).unwrap().get(), 0.5);
    }

    #[test]
    fn constants_validated_nonnegative() {
        let ok = ProblemConstants {
            l_f: 1.0,
            l_g: 0.0,
            l_y: 2.0,
            delta: 3.0,
        };
        assert!(ok.validate().is_ok());
        let bad = ProblemConstants { l_f: -1.0, ..ok };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn smoothing_of_constant_map_is_exact() {
        let oracle = ConstantOracle {
            dx: 3,
            value: vec![2.5, -1.0],
        };
        let mut rng = RngStream::new(1, 0);
        let est = smoothed_response_mc(&oracle, &[0.1, 0.2, 0.3], Mu::new(0.7).unwrap(), 50, &mut rng)
            .unwrap();
        assert_eq!(est.mean, vec![2.5, -1.0]);
        assert!(est.stderr.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn smoothing_of_linear_map_is_unbiased() {
        // E[u] = 0 makes the smoothed response equal A x for linear maps.
        let mut a = Matrix::zeros(2, 3);
        for (k, v) in [1.0, -2.0, 0.5, 0.0, 3.0, -1.0].iter().enumerate() {
            a.data[k] = *v;
        }
        let oracle = LinearOracle { a };
        let x = vec![0.4, -0.3, 1.2];
        let want = oracle.respond(&x).unwrap();
        let mut rng = RngStream::new(5, 2);
        let est =
            smoothed_response_mc(&oracle, &x, Mu::new(0.9).unwrap(), 10_000, &mut rng).unwrap();
        for i in 0..2 {
            let slack = 3.0 * est.stderr[i].max(1e-12);
            assert!(
                (est.mean[i] - want[i]).abs() <= slack,
                "component {i}: {} vs {}",
                est.mean[i],
                want[i]
            );
        }
    }

    /// Analytic oracle: for y*(x) = |x| in 1-D at x = 0, the smoothed
    /// response is E|μu| = μ/2 with u uniform on [-1, 1].
    #[test]
    fn smoothing_of_abs_at_kink_matches_integral() {
        let oracle = AbsOracle { dx: 1 };
        let mut rng = RngStream::new(9, 7);
        let est =
            smoothed_response_mc(&oracle, &[0.0], Mu::new(0.4).unwrap(), 1_000_000, &mut rng)
                .unwrap();
        let want = 0.2;
        assert!(
            (est.mean[0] - want).abs() <= 3.0 * est.stderr[0],
            "{} vs {want} (se {})",
            est.mean[0],
            est.stderr[0]
        );
    }

    #[test]
    fn n_samples_zero_rejected() {
        let oracle = AbsOracle { dx: 1 };
        let mut rng = RngStream::new(4, 0);
        assert!(
            smoothed_response_mc(&oracle, &[0.0], Mu::new(0.1).unwrap(), 0, &mut rng).is_err()
        );
    }

    #[test]
    fn prefix_feasibility_holds_for_convex_set() {
        let oracle = AbsOracle { dx: 2 };
        let mut rng = RngStream::new(13, 1);
        let ok = check_smoothing_feasibility(
            &oracle,
            &[0.3, -0.2],
            Mu::new(0.5).unwrap(),
            200,
            &mut rng,
        )
        .unwrap();
        assert!(ok);
        // degenerate single-sample prefix
        let ok1 =
            check_smoothing_feasibility(&oracle, &[0.0, 0.0], Mu::new(0.1).unwrap(), 1, &mut rng)
                .unwrap();
        assert!(ok1);
    }

    #[test]
    fn counted_wrapper_tracks_every_respond() {
        let oracle = Counted::new(AbsOracle { dx: 2 });
        assert_eq!(oracle.calls(), 0);
        oracle.respond(&[1.0, 2.0]).unwrap();
        oracle.respond(&[0.0, 0.0]).unwrap();
        assert_eq!(oracle.calls(), 2);
        // feasibility checks do not count
        oracle.is_feasible(&[1.0, 1.0]);
        assert_eq!(oracle.calls(), 2);
    }
}
