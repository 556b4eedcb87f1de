//! Gradient estimators built from follower-response queries.
//!
//! Three building blocks: the rank-one two-point Jacobian estimate of the
//! smoothed response, the chain-rule gradient that combines it with exact
//! leader partials (PZOS), and the black-box two-point estimator applied to
//! the whole composite (ZOS). Batched variants average Jacobians before the
//! chain rule is applied, and gradients for the black-box estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{FollowerOracle, LeaderObjective, Mu};
use crate::sampling::{sample_unit_sphere, RngStream};
use crate::vecmath::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Pzos,
    Zos,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Pzos => write!(f, "pzos"),
            EstimatorKind::Zos => write!(f, "zos"),
        }
    }
}

/// Rank-one two-point Jacobian estimate
/// H = (dx / 2μ) (y*(x + μv) - y*(x - μv)) vᵀ,
/// stored in factored form: `scaled_diff` is the first factor (length dy),
/// `direction` the second (length dx).
#[derive(Debug, Clone)]
pub struct JacobianEstimate {
    scaled_diff: Vec<f64>,
    direction: Vec<f64>,
    pub queries_used: u64,
}

impl JacobianEstimate {
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn scaled_diff(&self) -> &[f64] {
        &self.scaled_diff
    }

    /// Materialize the dy×dx matrix. Rank at most one by construction.
    pub fn matrix(&self) -> Matrix {
        let dy = self.scaled_diff.len();
        let dx = self.direction.len();
        let mut m = Matrix::zeros(dy, dx);
        for i in 0..dy {
            for j in 0..dx {
                m.data[i * dx + j] = self.scaled_diff[i] * self.direction[j];
            }
        }
        m
    }

    /// Hᵀ g without materializing the matrix: v · (scaled_diff ⋅ g).
    pub fn transpose_apply(&self, g: &[f64]) -> Vec<f64> {
        let s = vecmath::dot(&self.scaled_diff, g);
        vecmath::scaled(&self.direction, s)
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = vecmath::norm(v);
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitDirection { norm: n });
    }
    Ok(())
}

fn query(oracle: &dyn FollowerOracle, x: &[f64]) -> Result<Vec<f64>> {
    oracle.respond(x).map_err(|e| e.at_query(x))
}

/// Two-point Jacobian estimate of the smoothed response along `v`.
pub fn jacobian_estimate(
    oracle: &dyn FollowerOracle,
    x: &[f64],
    mu: Mu,
    v: &[f64],
) -> Result<JacobianEstimate> {
    check_unit(v)?;
    let dx = oracle.leader_dim();
    let mut plus = x.to_vec();
    vecmath::axpy(&mut plus, mu.get(), v);
    let mut minus = x.to_vec();
    vecmath::axpy(&mut minus, -mu.get(), v);
    let y_plus = query(oracle, &plus)?;
    let y_minus = query(oracle, &minus)?;
    let scale = dx as f64 / (2.0 * mu.get());
    let scaled_diff: Vec<f64> = y_plus
        .iter()
        .zip(&y_minus)
        .map(|(p, m)| scale * (p - m))
        .collect();
    Ok(JacobianEstimate {
        scaled_diff,
        direction: v.to_vec(),
        queries_used: 2,
    })
}

/// One gradient estimate with its oracle-query cost.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub vector: Vec<f64>,
    pub kind: EstimatorKind,
    pub queries_used: u64,
}

/// Chain-rule gradient: exact leader partials at (x, y*(x)) combined with
/// the average of `directions.len()` Jacobian estimates. The center query
/// y*(x) is evaluated once, before the batch loop. Query cost 2Q + 1.
pub fn pzos_gradient(
    leader: &dyn LeaderObjective,
    oracle: &dyn FollowerOracle,
    x: &[f64],
    mu: Mu,
    directions: &[Vec<f64>],
) -> Result<GradientSample> {
    if directions.is_empty() {
        return Err(Error::InvalidConfig("batch must contain at least one direction".into()));
    }
    let y0 = query(oracle, x)?;
    let gx = leader.grad_x(x, &y0);
    let gy = leader.grad_y(x, &y0);
    let q = directions.len() as f64;
    let mut vector = gx;
    let mut queries = 1;
    for v in directions {
        let h = jacobian_estimate(oracle, x, mu, v)?;
        queries += h.queries_used;
        // accumulate H̄ᵀ gy term by term; averaging Jacobians first and
        // applying the chain rule once is the same linear combination
        let s = vecmath::dot(h.scaled_diff(), &gy) / q;
        vecmath::axpy(&mut vector, s, h.direction());
    }
    Ok(GradientSample {
        vector,
        kind: EstimatorKind::Pzos,
        queries_used: queries,
    })
}

/// Black-box two-point estimator of the composite F(x) = f(x, y*(x)),
/// averaged over the batch. Query cost 2Q.
pub fn zos_gradient(
    leader: &dyn LeaderObjective,
    oracle: &dyn FollowerOracle,
    x: &[f64],
    mu: Mu,
    directions: &[Vec<f64>],
) -> Result<GradientSample> {
    if directions.is_empty() {
        return Err(Error::InvalidConfig("batch must contain at least one direction".into()));
    }
    let dx = oracle.leader_dim();
    let scale = dx as f64 / (2.0 * mu.get());
    let q = directions.len() as f64;
    let mut vector = vec![0.0; x.len()];
    let mut queries = 0;
    for v in directions {
        check_unit(v)?;
        let mut plus = x.to_vec();
        vecmath::axpy(&mut plus, mu.get(), v);
        let mut minus = x.to_vec();
        vecmath::axpy(&mut minus, -mu.get(), v);
        let y_plus = query(oracle, &plus)?;
        let y_minus = query(oracle, &minus)?;
        queries += 2;
        let diff = leader.eval(&plus, &y_plus) - leader.eval(&minus, &y_minus);
        vecmath::axpy(&mut vector, scale * diff / q, v);
    }
    Ok(GradientSample {
        vector,
        kind: EstimatorKind::Zos,
        queries_used: queries,
    })
}

/// Sample mean and standard error of the squared estimator norm at a fixed
/// point, one fresh direction per sample.
#[derive(Debug, Clone, Copy)]
pub struct SecondMomentStats {
    pub mean_sq_norm: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

pub fn second_moment_probe(
    kind: EstimatorKind,
    leader: &dyn LeaderObjective,
    oracle: &dyn FollowerOracle,
    x: &[f64],
    mu: Mu,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<SecondMomentStats> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig("n_samples must be at least 2".into()));
    }
    let dx = oracle.leader_dim();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let v = sample_unit_sphere(rng, dx)?;
        let dirs = [v];
        let g = match kind {
            EstimatorKind::Pzos => pzos_gradient(leader, oracle, x, mu, &dirs)?,
            EstimatorKind::Zos => zos_gradient(leader, oracle, x, mu, &dirs)?,
        };
        let sq = vecmath::dot(&g.vector, &g.vector);
        sum += sq;
        sum_sq += sq * sq;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean).max(0.0)) / (n - 1.0);
    Ok(SecondMomentStats {
        mean_sq_norm: mean,
        stderr: var.sqrt(),
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::test_oracles::{AbsOracle, ConstantOracle, LinearOracle};
    use crate::problem::{Counted, Sense};
    use crate::sampling::RngStream;

    struct QuadraticLeader;

    /// f(x, y) = 0.5 ||x||^2, gradient x; ignores y.
    impl LeaderObjective for QuadraticLeader {
        fn eval(&self, x: &[f64], _y: &[f64]) -> f64 {
            0.5 * vecmath::dot(x, x)
        }
        fn grad_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
        fn grad_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
            vec![0.0; y.len()]
        }
        fn sense(&self) -> Sense {
            Sense::Minimize
        }
    }

    /// f(x, y) = (x - 1)^2 + y in one leader and one follower dimension.
    struct ShiftedSquarePlusY;

    impl LeaderObjective for ShiftedSquarePlusY {
        fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
            (x[0] - 1.0).powi(2) + y[0]
        }
        fn grad_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
            vec![2.0 * (x[0] - 1.0)]
        }
        fn grad_y(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
            vec![1.0]
        }
        fn sense(&self) -> Sense {
            Sense::Minimize
        }
    }

    fn unit(dx: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dx];
        v[axis] = 1.0;
        v
    }

    /// y_i(x) = scale * tanh(x_i), a smooth map with analytic Jacobian.
    struct ScaledTanhOracle {
        dx: usize,
        scale: f64,
    }

    impl FollowerOracle for ScaledTanhOracle {
        fn leader_dim(&self) -> usize {
            self.dx
        }
        fn follower_dim(&self) -> usize {
            self.dx
        }
        fn respond(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.iter().map(|c| self.scale * c.tanh()).collect())
        }
        fn is_feasible(&self, _y: &[f64]) -> bool {
            true
        }
    }

    /// f(x, y) = 0.5 ||x||^2 + Σ y_i.
    struct SumLeader;

    impl LeaderObjective for SumLeader {
        fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
            0.5 * vecmath::dot(x, x) + y.iter().sum::<f64>()
        }
        fn grad_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
        fn grad_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
            vec![1.0; y.len()]
        }
        fn sense(&self) -> Sense {
            Sense::Minimize
        }
    }

    #[test]
    fn non_unit_direction_rejected() {
        let oracle = AbsOracle { dx: 2 };
        let err = jacobian_estimate(
            &oracle,
            &[0.0, 0.0],
            Mu::new(0.5).unwrap(),
            &[0.5, 0.5],
        );
        assert!(matches!(err, Err(Error::NonUnitDirection { .. })));
    }

    #[test]
    fn abs_at_origin_gives_zero_estimate() {
        let oracle = AbsOracle { dx: 1 };
        let h = jacobian_estimate(&oracle, &[0.0], Mu::new(0.5).unwrap(), &[1.0]).unwrap();
        assert_eq!(h.matrix().data, vec![0.0]);
        assert_eq!(h.queries_used, 2);
    }

    #[test]
    fn abs_on_smooth_region_gives_slope_one() {
        let oracle = AbsOracle { dx: 1 };
        let h = jacobian_estimate(&oracle, &[1.0], Mu::new(0.5).unwrap(), &[1.0]).unwrap();
        assert!((h.matrix().data[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_antisymmetry_is_exact() {
        let oracle = AbsOracle { dx: 3 };
        let x = [0.4, -0.2, 0.7];
        let mut rng = RngStream::new(3, 5);
        let v = crate::sampling::sample_unit_sphere(&mut rng, 3).unwrap();
        let neg: Vec<f64> = v.iter().map(|c| -c).collect();
        let h_plus = jacobian_estimate(&oracle, &x, Mu::new(0.3).unwrap(), &v).unwrap();
        let h_minus = jacobian_estimate(&oracle, &x, Mu::new(0.3).unwrap(), &neg).unwrap();
        assert_eq!(h_plus.matrix().data, h_minus.matrix().data);
    }

    #[test]
    fn matrix_annihilates_orthogonal_vectors() {
        let oracle = AbsOracle { dx: 2 };
        let v = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
        let h = jacobian_estimate(&oracle, &[0.5, 0.8], Mu::new(0.1).unwrap(), &v).unwrap();
        let w = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
        let m = h.matrix();
        for i in 0..2 {
            let r: f64 = (0..2).map(|j| m.get(i, j) * w[j]).sum();
            assert!(r.abs() < 1e-12);
        }
    }

    /// Unbiasedness for linear maps: E[H] = A since E[dx v vᵀ] = I.
    #[test]
    fn jacobian_mean_recovers_linear_map() {
        let mut a = Matrix::zeros(2, 4);
        for (k, v) in [0.5, -1.0, 2.0, 0.3, -0.7, 1.5, 0.0, -2.0].iter().enumerate() {
            a.data[k] = *v;
        }
        let oracle = LinearOracle { a: a.clone() };
        let x = [0.1, 0.2, -0.3, 0.4];
        let n = 100_000usize;
        let mut rng = RngStream::new(77, 0);
        let mut acc = Matrix::zeros(2, 4);
        let mut acc_sq = Matrix::zeros(2, 4);
        for _ in 0..n {
            let v = crate::sampling::sample_unit_sphere(&mut rng, 4).unwrap();
            let h = jacobian_estimate(&oracle, &x, Mu::new(0.2).unwrap(), &v).unwrap();
            let m = h.matrix();
            for k in 0..8 {
                acc.data[k] += m.data[k];
                acc_sq.data[k] += m.data[k] * m.data[k];
            }
        }
        for k in 0..8 {
            let mean = acc.data[k] / n as f64;
            let var = (acc_sq.data[k] / n as f64 - mean * mean).max(0.0) / (n as f64 - 1.0);
            let se = var.sqrt();
            assert!(
                (mean - a.data[k]).abs() <= 3.0 * se.max(1e-12),
                "entry {k}: mean {mean} target {} se {se}",
                a.data[k]
            );
        }
    }

    #[test]
    fn pzos_on_constant_follower_is_pure_leader_gradient() {
        let oracle = ConstantOracle {
            dx: 3,
            value: vec![0.0, 0.0],
        };
        let leader = QuadraticLeader;
        let x = [0.3, -1.0, 2.0];
        let dirs = vec![unit(3, 0), unit(3, 2)];
        let g = pzos_gradient(&leader, &oracle, &x, Mu::new(0.7).unwrap(), &dirs).unwrap();
        assert_eq!(g.vector, x.to_vec());
        assert_eq!(g.queries_used, 5); // 2Q + 1
    }

    #[test]
    fn pzos_composition_on_smooth_region() {
        // f(x,y) = (x-1)^2 + y, y* = |x| at x = 1: g = 0 + 1*1 = 1.
        let oracle = AbsOracle { dx: 1 };
        let leader = ShiftedSquarePlusY;
        let g = pzos_gradient(&leader, &oracle, &[1.0], Mu::new(0.25).unwrap(), &[vec![1.0]])
            .unwrap();
        assert!((g.vector[0] - 1.0).abs() < 1e-12);
        assert_eq!(g.queries_used, 3);
    }

    #[test]
    fn zos_constant_composite_is_exactly_zero() {
        let oracle = ConstantOracle {
            dx: 2,
            value: vec![1.0],
        };
        struct ConstLeader;
        impl LeaderObjective for ConstLeader {
            fn eval(&self, _x: &[f64], _y: &[f64]) -> f64 {
                4.2
            }
            fn grad_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
                vec![0.0; x.len()]
            }
            fn grad_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
                vec![0.0; y.len()]
            }
            fn sense(&self) -> Sense {
                Sense::Minimize
            }
        }
        let mut rng = RngStream::new(12, 0);
        for _ in 0..20 {
            let v = crate::sampling::sample_unit_sphere(&mut rng, 2).unwrap();
            let g = zos_gradient(&ConstLeader, &oracle, &[0.5, 0.5], Mu::new(0.3).unwrap(), &[v])
                .unwrap();
            assert_eq!(g.vector, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn zos_abs_at_origin_vanishes_by_symmetry() {
        let oracle = AbsOracle { dx: 1 };
        struct PassThrough;
        impl LeaderObjective for PassThrough {
            fn eval(&self, _x: &[f64], y: &[f64]) -> f64 {
                y[0]
            }
            fn grad_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
                vec![0.0; x.len()]
            }
            fn grad_y(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
                vec![1.0]
            }
            fn sense(&self) -> Sense {
                Sense::Minimize
            }
        }
        let g = zos_gradient(&PassThrough, &oracle, &[0.0], Mu::new(0.3).unwrap(), &[vec![1.0]])
            .unwrap();
        assert_eq!(g.vector[0], 0.0);
        assert_eq!(g.queries_used, 2);
    }

    /// Linear composite oracle: the two-point estimator is unbiased with
    /// mean exactly c for F(x) = cᵀ x.
    #[test]
    fn zos_mean_recovers_linear_composite_gradient() {
        let c = [1.5, -0.5, 2.0];
        struct LinearLeader {
            c: Vec<f64>,
        }
        impl LeaderObjective for LinearLeader {
            fn eval(&self, x: &[f64], _y: &[f64]) -> f64 {
                vecmath::dot(&self.c, x)
            }
            fn grad_x(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
                self.c.clone()
            }
            fn grad_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
                vec![0.0; y.len()]
            }
            fn sense(&self) -> Sense {
                Sense::Minimize
            }
        }
        let oracle = ConstantOracle {
            dx: 3,
            value: vec![0.0],
        };
        let leader = LinearLeader { c: c.to_vec() };
        let n = 100_000usize;
        let mut rng = RngStream::new(31, 2);
        let mut acc = vec![0.0; 3];
        let mut acc_sq = vec![0.0; 3];
        for _ in 0..n {
            let v = crate::sampling::sample_unit_sphere(&mut rng, 3).unwrap();
            let g = zos_gradient(&leader, &oracle, &[0.2, 0.1, -0.4], Mu::new(0.05).unwrap(), &[v])
                .unwrap();
            for k in 0..3 {
                acc[k] += g.vector[k];
                acc_sq[k] += g.vector[k] * g.vector[k];
            }
        }
        for k in 0..3 {
            let mean = acc[k] / n as f64;
            let se = ((acc_sq[k] / n as f64 - mean * mean).max(0.0) / (n as f64 - 1.0)).sqrt();
            assert!(
                (mean - c[k]).abs() <= 3.0 * se,
                "coord {k}: {mean} vs {} (se {se})",
                c[k]
            );
        }
    }

    /// Smooth follower map with analytic Jacobian: y_i = s tanh(x_i). At
    /// small mu the batched PZOS mean matches the chain rule.
    #[test]
    fn pzos_mean_matches_analytic_chain_rule_on_smooth_map() {
        let dx = 6;
        let scale = 0.05;
        let oracle = ScaledTanhOracle { dx, scale };
        let x: Vec<f64> = (0..dx).map(|i| 0.2 * i as f64 - 0.5).collect();
        // analytic: grad = x + diag(s (1 - tanh(x)^2)) * 1
        let want: Vec<f64> = x
            .iter()
            .map(|&c| c + scale * (1.0 - c.tanh().powi(2)))
            .collect();
        let mut rng = RngStream::new(6, 6);
        let q = 10_000usize;
        let dirs: Vec<Vec<f64>> = (0..q)
            .map(|_| crate::sampling::sample_unit_sphere(&mut rng, dx).unwrap())
            .collect();
        let g =
            pzos_gradient(&SumLeader, &oracle, &x, Mu::new(1e-3).unwrap(), &dirs).unwrap();
        let rel = vecmath::norm(&vecmath::sub(&g.vector, &want)) / vecmath::norm(&want);
        assert!(rel < 1e-2, "relative error {rel}");
        assert_eq!(g.queries_used, 2 * q as u64 + 1);
    }

    #[test]
    fn query_accounting_matches_counter_delta() {
        let oracle = Counted::new(AbsOracle { dx: 4 });
        let leader = QuadraticLeader;
        let x = [0.1, 0.2, 0.3, 0.4];
        let mut rng = RngStream::new(1, 1);
        let dirs: Vec<Vec<f64>> = (0..3)
            .map(|_| crate::sampling::sample_unit_sphere(&mut rng, 4).unwrap())
            .collect();
        let before = oracle.calls();
        let g = pzos_gradient(&leader, &oracle, &x, Mu::new(0.2).unwrap(), &dirs).unwrap();
        assert_eq!(g.queries_used, oracle.calls() - before);
        let before = oracle.calls();
        let g = zos_gradient(&leader, &oracle, &x, Mu::new(0.2).unwrap(), &dirs).unwrap();
        assert_eq!(g.queries_used, oracle.calls() - before);
    }

    #[test]
    fn second_moment_of_constant_composite_is_zero() {
        let oracle = ConstantOracle {
            dx: 2,
            value: vec![0.0],
        };
        struct ConstLeader;
        impl LeaderObjective for ConstLeader {
            fn eval(&self, _x: &[f64], _y: &[f64]) -> f64 {
                1.0
            }
            fn grad_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
                vec![0.0; x.len()]
            }
            fn grad_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
                vec![0.0; y.len()]
            }
            fn sense(&self) -> Sense {
                Sense::Minimize
            }
        }
        let mut rng = RngStream::new(2, 2);
        let stats = second_moment_probe(
            EstimatorKind::Zos,
            &ConstLeader,
            &oracle,
            &[0.0, 0.0],
            Mu::new(0.4).unwrap(),
            200,
            &mut rng,
        )
        .unwrap();
        assert_eq!(stats.mean_sq_norm, 0.0);
        assert_eq!(stats.stderr, 0.0);
    }

    #[test]
    fn second_moment_of_pzos_with_constant_follower_is_deterministic() {
        // H = 0, so the estimator is the deterministic leader gradient.
        let oracle = ConstantOracle {
            dx: 3,
            value: vec![2.0],
        };
        let leader = QuadraticLeader;
        let x = [1.0, 2.0, -2.0];
        let mut rng = RngStream::new(4, 4);
        let stats = second_moment_probe(
            EstimatorKind::Pzos,
            &leader,
            &oracle,
            &x,
            Mu::new(0.1).unwrap(),
            100,
            &mut rng,
        )
        .unwrap();
        let want = vecmath::dot(&x, &x);
        assert!((stats.mean_sq_norm - want).abs() < 1e-9);
        assert!(stats.stderr < 1e-9);
    }
}
