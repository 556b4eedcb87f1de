//! Defense-attack security game benchmark.
//!
//! A defender invests x >= 0 across n targets; the attacker observes x and
//! allocates effort y >= 0 under a budget, maximizing contest-success gains
//! w_i y_i/(x_i + y_i + b_i) minus quadratic effort costs. The attacker
//! problem is strictly concave, so the response is unique; it is solved by
//! dual bisection on the budget multiplier with a safeguarded scalar solve
//! per target (Newton step accepted only inside the bracket).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{FollowerOracle, LeaderObjective, Sense};
use crate::sampling::RngStream;

pub const DEFAULT_SOLVER_TOL: f64 = 1e-8;
/// Experiment defaults: smoothing radius, iteration count, batch size.
pub const DEFAULT_MU: f64 = 0.1;
pub const DEFAULT_ITERATIONS: usize = 500;
/// Diminishing step constants: 0.05 up to 100 targets, 0.03 above.
pub fn default_step_constant(n: usize) -> f64 {
    if n <= 100 {
        0.05
    } else {
        0.03
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityInstance {
    pub n: usize,
    /// Target values to the attacker.
    pub w: Vec<f64>,
    /// Target values to the defender.
    pub v: Vec<f64>,
    /// Baseline security levels.
    pub b: Vec<f64>,
    /// Attacker quadratic effort costs.
    pub c_attack: Vec<f64>,
    /// Defender quadratic investment costs.
    pub c_defense: Vec<f64>,
    /// Attacker budget.
    pub budget: f64,
    /// Generator seed recorded for provenance.
    pub seed: u64,
}

impl SecurityInstance {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidDimension);
        }
        for (name, vs) in [
            ("w", &self.w),
            ("v", &self.v),
            ("b", &self.b),
            ("c_attack", &self.c_attack),
            ("c_defense", &self.c_defense),
        ] {
            if vs.len() != self.n {
                return Err(Error::InvalidConfig(format!(
                    "{name} has length {}, expected {}",
                    vs.len(),
                    self.n
                )));
            }
            if vs.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} entries must be strictly positive"
                )));
            }
        }
        if !(self.budget > 0.0) {
            return Err(Error::InvalidConfig("budget must be positive".into()));
        }
        Ok(())
    }
}

/// Attacker best response with its KKT certificate.
#[derive(Debug, Clone)]
pub struct AttackerResponse {
    pub y: Vec<f64>,
    pub dual_lambda: f64,
    pub kkt_residual: f64,
}

/// Marginal gain of effort on target i at (x_i, y_i):
/// d/dy [w p(x, y) - c y^2 / 2] = w (x + b) / (x + y + b)^2 - c y.
fn marginal_gain(w: f64, b: f64, c: f64, x: f64, y: f64) -> f64 {
    w * (x + b) / (x + y + b).powi(2) - c * y
}

fn marginal_gain_deriv(w: f64, b: f64, c: f64, x: f64, y: f64) -> f64 {
    -2.0 * w * (x + b) / (x + y + b).powi(3) - c
}

/// Solve marginal_gain(y) = lambda on y >= 0 for one target; the left side
/// is strictly decreasing, so bisection is safe and a Newton step is used
/// whenever it stays inside the bracket.
fn target_effort(w: f64, b: f64, c: f64, x: f64, lambda: f64, tol: f64) -> Result<f64> {
    if marginal_gain(w, b, c, x, 0.0) <= lambda {
        return Ok(0.0);
    }
    let mut hi = (w / (c * b)).sqrt() + 1.0;
    let mut grow = 0;
    while marginal_gain(w, b, c, x, hi) > lambda {
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::BracketFailure(format!(
                "target effort bracket did not close (w={w}, b={b}, c={c}, x={x})"
            )));
        }
    }
    let mut lo = 0.0;
    let mut y = 0.5 * hi;
    for _ in 0..200 {
        let g = marginal_gain(w, b, c, x, y) - lambda;
        if g.abs() <= tol {
            return Ok(y);
        }
        if g > 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let step = g / marginal_gain_deriv(w, b, c, x, y);
        let newton = y - step;
        y = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    Ok(y)
}

/// Unique attacker best response at defense x, via bisection on the budget
/// multiplier lambda >= 0 (lambda = 0 when the unconstrained optimum is
/// within budget).
pub fn attacker_best_response(
    instance: &SecurityInstance,
    x: &[f64],
    tol: f64,
) -> Result<AttackerResponse> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tol must be positive, got {tol}")));
    }
    if x.len() != instance.n {
        return Err(Error::InvalidConfig(format!(
            "x has length {}, expected {}",
            x.len(),
            instance.n
        )));
    }
    if x.iter().any(|&c| c < 0.0) {
        return Err(Error::InvalidConfig("defense must be nonnegative".into()));
    }
    let n = instance.n;
    let inner_tol = tol * 1e-2;
    let efforts = |lambda: f64| -> Result<Vec<f64>> {
        (0..n)
            .map(|i| {
                target_effort(
                    instance.w[i],
                    instance.b[i],
                    instance.c_attack[i],
                    x[i],
                    lambda,
                    inner_tol,
                )
            })
            .collect()
    };

    let lambda_max = (0..n)
        .map(|i| marginal_gain(instance.w[i], instance.b[i], instance.c_attack[i], x[i], 0.0))
        .fold(0.0f64, f64::max);

    let (lambda, y) = if instance.budget <= 0.0 {
        (lambda_max.max(0.0), vec![0.0; n])
    } else {
        let y0 = efforts(0.0)?;
        let total: f64 = y0.iter().sum();
        if total <= instance.budget {
            (0.0, y0)
        } else {
            // strictly decreasing total effort in lambda; bisect to budget
            let mut lo = 0.0;
            let mut hi = lambda_max;
            let mut lambda = 0.5 * hi;
            let mut y = y0;
            for _ in 0..200 {
                y = efforts(lambda)?;
                let total: f64 = y.iter().sum();
                let excess = total - instance.budget;
                if excess.abs() <= tol * 1e-2 * (1.0 + instance.budget) {
                    break;
                }
                if excess > 0.0 {
                    lo = lambda;
                } else {
                    hi = lambda;
                }
                lambda = 0.5 * (lo + hi);
                if hi - lo <= f64::EPSILON * hi.max(1e-300) {
                    break;
                }
            }
            (lambda, y)
        }
    };

    let kkt_residual = kkt_residual(instance, x, &y, lambda);
    Ok(AttackerResponse {
        y,
        dual_lambda: lambda,
        kkt_residual,
    })
}

/// Max of the scaled KKT residuals: stationarity per target, primal budget
/// feasibility, complementary slackness.
fn kkt_residual(instance: &SecurityInstance, x: &[f64], y: &[f64], lambda: f64) -> f64 {
    let total: f64 = y.iter().sum();
    let primal = (total - instance.budget).max(0.0);
    let slack = lambda * (instance.budget - total).abs() / (1.0 + instance.budget);
    let mut stationarity = 0.0f64;
    for i in 0..instance.n {
        let g = marginal_gain(instance.w[i], instance.b[i], instance.c_attack[i], x[i], y[i]);
        let r = if y[i] > 1e-8 {
            (g - lambda).abs()
        } else {
            (g - lambda).max(0.0)
        };
        stationarity = stationarity.max(r);
    }
    stationarity.max(primal).max(slack)
}

/// Defender cost Σ v_i y_i/(x_i + y_i + b_i) + c_i x_i^2/2 with exact
/// partial gradients.
pub fn defender_objective_and_grads(
    instance: &SecurityInstance,
    x: &[f64],
    y: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = instance.n;
    let mut value = 0.0;
    let mut grad_x = vec![0.0; n];
    let mut grad_y = vec![0.0; n];
    for i in 0..n {
        let denom = x[i] + y[i] + instance.b[i];
        value += instance.v[i] * y[i] / denom + instance.c_defense[i] * x[i] * x[i] / 2.0;
        grad_x[i] = -instance.v[i] * y[i] / (denom * denom) + instance.c_defense[i] * x[i];
        grad_y[i] = instance.v[i] * (x[i] + instance.b[i]) / (denom * denom);
    }
    (value, grad_x, grad_y)
}

/// Instance generator: w, v ~ U[1,5], b ~ U[0.1,0.5], costs ~ U[0.1,0.3];
/// the budget is half the attacker's aggregate unconstrained effort under a
/// mirrored defense (x_i = y_i per target), so the constraint binds.
pub fn generate_security_instance(rng: &mut RngStream, n: usize) -> Result<SecurityInstance> {
    if n == 0 {
        return Err(Error::InvalidDimension);
    }
    let seed = rng.stream_id();
    let mut w = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut c_attack = Vec::with_capacity(n);
    let mut c_defense = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(rng.uniform_in(1.0, 5.0));
        w.push(rng.uniform_in(1.0, 5.0));
        b.push(rng.uniform_in(0.1, 0.5));
        c_defense.push(rng.uniform_in(0.1, 0.3));
        c_attack.push(rng.uniform_in(0.1, 0.3));
    }
    let mut symmetric_total = 0.0;
    for i in 0..n {
        symmetric_total += mirrored_effort(w[i], b[i], c_attack[i])?;
    }
    let instance = SecurityInstance {
        n,
        w,
        v,
        b,
        c_attack,
        c_defense,
        budget: 0.5 * symmetric_total,
        seed,
    };
    instance.validate()?;
    Ok(instance)
}

/// Solve w (y + b) / (2y + b)^2 = c y, the per-target unconstrained effort
/// when the defender mirrors the attacker (x = y). Strictly decreasing
/// left-hand side minus right-hand side; plain bisection.
fn mirrored_effort(w: f64, b: f64, c: f64) -> Result<f64> {
    let g = |y: f64| w * (y + b) / (2.0 * y + b).powi(2) - c * y;
    let mut hi = (w / (c * b)).sqrt() + 1.0;
    let mut grow = 0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::BracketFailure("mirrored effort bracket".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Defender's optimal investment if every target were attacked with effort
/// y_i = b_i: per target, minimize v b/(x + 2b) + c x^2/2 over x >= 0 via
/// the first-order condition v b/(x + 2b)^2 = c x.
pub fn initial_defense(instance: &SecurityInstance) -> Vec<f64> {
    (0..instance.n)
        .map(|i| {
            let vb = instance.v[i] * instance.b[i];
            let c = instance.c_defense[i];
            let b2 = 2.0 * instance.b[i];
            let g = |x: f64| vb / (x + b2).powi(2) - c * x;
            let mut lo = 0.0;
            let mut hi = (vb / c).cbrt() + 1.0;
            debug_assert!(g(hi) < 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-16 * hi.max(1.0) {
                    break;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// The attacker response as a black-box follower oracle (dx = dy = n).
pub struct SecurityOracle<'a> {
    pub instance: &'a SecurityInstance,
    pub tol: f64,
}

impl<'a> SecurityOracle<'a> {
    pub fn new(instance: &'a SecurityInstance) -> Self {
        SecurityOracle {
            instance,
            tol: DEFAULT_SOLVER_TOL,
        }
    }
}

impl FollowerOracle for SecurityOracle<'_> {
    fn leader_dim(&self) -> usize {
        self.instance.n
    }
    fn follower_dim(&self) -> usize {
        self.instance.n
    }
    fn respond(&self, x: &[f64]) -> Result<Vec<f64>> {
        // ball perturbations can push components slightly negative; the
        // attacker model needs x >= 0
        let clamped: Vec<f64> = x.iter().map(|&c| c.max(0.0)).collect();
        Ok(attacker_best_response(self.instance, &clamped, self.tol)?.y)
    }
    fn is_feasible(&self, y: &[f64]) -> bool {
        y.iter().all(|&c| c >= -1e-8) && y.iter().sum::<f64>() <= self.instance.budget + 1e-8
    }
}

/// Defender cost as the leader objective (minimization).
pub struct DefenderObjective<'a> {
    pub instance: &'a SecurityInstance,
}

impl LeaderObjective for DefenderObjective<'_> {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        defender_objective_and_grads(self.instance, x, y).0
    }
    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        defender_objective_and_grads(self.instance, x, y).1
    }
    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        defender_objective_and_grads(self.instance, x, y).2
    }
    fn sense(&self) -> Sense {
        Sense::Minimize
    }
}

pub fn to_toml_string(instance: &SecurityInstance) -> Result<String> {
    toml::to_string(instance).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_toml_str(text: &str) -> Result<SecurityInstance> {
    let instance: SecurityInstance =
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    instance.validate()?;
    Ok(instance)
}
