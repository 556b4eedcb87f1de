//! Exact 1-D analysis of Clarke gradients, the delta-Goldstein
//! subdifferential, and its partial variant for composite objectives with
//! piecewise-polynomial follower responses.
//!
//! Everything here is symbolic over polynomial pieces: interval extremes
//! come from endpoint and critical-point evaluation, never from sampling,
//! so reference values are exact to rounding.

use crate::error::{Error, Result};

/// Dense polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(Vec<f64>);

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial(coeffs)
    }

    pub fn constant(c: f64) -> Self {
        Polynomial(vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.0.len() <= 1 {
            return Polynomial(vec![0.0]);
        }
        Polynomial(
            self.0[1..]
                .iter()
                .enumerate()
                .map(|(i, c)| c * (i + 1) as f64)
                .collect(),
        )
    }

    /// a*p + q accumulation used to assemble directional derivatives.
    fn add_scaled(&mut self, a: f64, p: &Polynomial) {
        if self.0.len() < p.0.len() {
            self.0.resize(p.0.len(), 0.0);
        }
        for (c, pc) in self.0.iter_mut().zip(&p.0) {
            *c += a * pc;
        }
    }

    fn effective_degree(&self) -> usize {
        self.0
            .iter()
            .rposition(|c| c.abs() > 1e-300)
            .unwrap_or(0)
    }

    /// All real roots inside [lo, hi], found by recursive bisection between
    /// the critical points of each derivative order.
    fn roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let deg = self.effective_degree();
        if deg == 0 {
            return Vec::new(); // constant (the all-zero case is handled by callers)
        }
        if deg == 1 {
            let r = -self.0[0] / self.0[1];
            return if r >= lo && r <= hi { vec![r] } else { Vec::new() };
        }
        let mut nodes = vec![lo];
        nodes.extend(self.derivative().roots_in(lo, hi));
        nodes.push(hi);
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut roots = Vec::new();
        for w in nodes.windows(2) {
            if let Some(r) = bisect(self, w[0], w[1]) {
                if roots.last().map_or(true, |&p: &f64| (r - p).abs() > 1e-12) {
                    roots.push(r);
                }
            }
        }
        roots
    }

    /// Extremes of the polynomial over the closed interval [lo, hi].
    fn range_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut consider = |x: f64| {
            let v = self.eval(x);
            min = min.min(v);
            max = max.max(v);
        };
        consider(lo);
        consider(hi);
        for r in self.derivative().roots_in(lo, hi) {
            consider(r);
        }
        (min, max)
    }
}

/// Monotone-segment bisection: returns the root of p on [a, b] if the sign
/// changes, refined to ~1e-15 relative width.
fn bisect(p: &Polynomial, a: f64, b: f64) -> Option<f64> {
    let (mut lo, mut hi) = (a, b);
    let (mut flo, fhi) = (p.eval(lo), p.eval(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = p.eval(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Continuous piecewise-polynomial function on the real line. Pieces are
/// indexed so piece `i` covers (breakpoints[i-1], breakpoints[i]); there is
/// always one more piece than breakpoints.
#[derive(Debug, Clone)]
pub struct PiecewiseScalarFunction {
    breakpoints: Vec<f64>,
    pieces: Vec<Polynomial>,
}

impl PiecewiseScalarFunction {
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<Polynomial>) -> Result<Self> {
        if pieces.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "need {} pieces for {} breakpoints, got {}",
                breakpoints.len() + 1,
                breakpoints.len(),
                pieces.len()
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        for (k, bp) in breakpoints.iter().enumerate() {
            let left = pieces[k].eval(*bp);
            let right = pieces[k + 1].eval(*bp);
            if (left - right).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "discontinuity at breakpoint {bp}: {left} vs {right}"
                )));
            }
        }
        Ok(PiecewiseScalarFunction {
            breakpoints,
            pieces,
        })
    }

    /// Single smooth polynomial (no breakpoints).
    pub fn smooth(p: Polynomial) -> Self {
        PiecewiseScalarFunction {
            breakpoints: Vec::new(),
            pieces: vec![p],
        }
    }

    /// |x - c| as a two-piece function.
    pub fn abs_shifted(c: f64) -> Self {
        PiecewiseScalarFunction {
            breakpoints: vec![c],
            pieces: vec![Polynomial::new(vec![c, -1.0]), Polynomial::new(vec![-c, 1.0])],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    fn piece_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&bp| bp < x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].eval(x)
    }

    fn is_breakpoint(&self, x: f64) -> Option<usize> {
        self.breakpoints
            .iter()
            .position(|&bp| (bp - x).abs() <= 1e-12)
    }

    /// Left and right derivatives at a point (equal on smooth points).
    fn one_sided_derivatives(&self, x: f64) -> (f64, f64) {
        match self.is_breakpoint(x) {
            Some(k) => (
                self.pieces[k].derivative().eval(x),
                self.pieces[k + 1].derivative().eval(x),
            ),
            None => {
                let d = self.pieces[self.piece_index(x)].derivative().eval(x);
                (d, d)
            }
        }
    }
}

/// Closed interval; the convex sets arising in one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSet {
    pub lo: f64,
    pub hi: f64,
}

impl IntervalSet {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        IntervalSet { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &IntervalSet) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Clarke generalized gradient at a point: the derivative on smooth pieces,
/// the hull of the two one-sided derivatives at a breakpoint.
pub fn clarke_interval(f: &PiecewiseScalarFunction, x: f64) -> IntervalSet {
    match f.is_breakpoint(x) {
        Some(k) => {
            let left = f.pieces[k].derivative().eval(x);
            let right = f.pieces[k + 1].derivative().eval(x);
            IntervalSet::new(left.min(right), left.max(right))
        }
        None => {
            let d = f.pieces[f.piece_index(x)].derivative().eval(x);
            IntervalSet::new(d, d)
        }
    }
}

/// Extremes of a piecewise function's derivative over [lo, hi]; the closure
/// of each piece's overlap covers breakpoint one-sided limits.
fn derivative_range(f: &PiecewiseScalarFunction, lo: f64, hi: f64) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (k, piece) in f.pieces.iter().enumerate() {
        let piece_lo = if k == 0 { f64::NEG_INFINITY } else { f.breakpoints[k - 1] };
        let piece_hi = if k == f.breakpoints.len() {
            f64::INFINITY
        } else {
            f.breakpoints[k]
        };
        let a = piece_lo.max(lo);
        let b = piece_hi.min(hi);
        if a > b {
            continue;
        }
        let (pmin, pmax) = piece.derivative().range_on(a, b);
        min = min.min(pmin);
        max = max.max(pmax);
    }
    (min, max)
}

/// Hull of Clarke gradients over the ball [x - delta, x + delta], computed
/// exactly from piece-derivative extremes.
pub fn goldstein_interval(
    f: &PiecewiseScalarFunction,
    x: f64,
    delta: f64,
) -> Result<IntervalSet> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let (min, max) = derivative_range(f, x - delta, x + delta);
    Ok(IntervalSet::new(min, max))
}

/// Partial variant: the leader partial gradients are fixed at the center,
/// and only the follower Jacobian varies over the ball. The image of the
/// Jacobian hull under M ↦ fx + Mᵀ fy is an interval whose extremes are
/// attained on the hull's generating set, so it suffices to range the
/// directional derivative Σ_j fy_j y_j'(z) over the ball.
pub fn partial_goldstein_interval(
    fx_grad: f64,
    fy_grad: &[f64],
    ystar: &[PiecewiseScalarFunction],
    x: f64,
    delta: f64,
) -> Result<IntervalSet> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if fy_grad.len() != ystar.len() {
        return Err(Error::InvalidConfig(format!(
            "fy_grad has {} entries for {} response coordinates",
            fy_grad.len(),
            ystar.len()
        )));
    }
    let lo = x - delta;
    let hi = x + delta;
    // merged breakpoints of all coordinates inside the ball
    let mut cuts = vec![lo];
    for g in ystar {
        for &bp in g.breakpoints() {
            if bp > lo && bp < hi {
                cuts.push(bp);
            }
        }
    }
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);

    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        // directional derivative polynomial on this smooth sub-interval
        let mut phi = Polynomial::constant(0.0);
        for (gy, g) in fy_grad.iter().zip(ystar) {
            let piece = &g.pieces[g.piece_index(mid)];
            phi.add_scaled(*gy, &piece.derivative());
        }
        let (pmin, pmax) = phi.range_on(w[0], w[1]);
        min = min.min(pmin);
        max = max.max(pmax);
    }
    // breakpoints in the closed ball contribute the hull of both one-sided
    // Jacobians; for one on the ball boundary, only the inner side was
    // covered by the sub-interval sweep above
    let mut kinks: Vec<f64> = ystar
        .iter()
        .flat_map(|g| g.breakpoints().iter().copied())
        .filter(|&bp| bp >= lo && bp <= hi)
        .collect();
    kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    kinks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    for bp in kinks {
        let mut left = 0.0;
        let mut right = 0.0;
        for (gy, g) in fy_grad.iter().zip(ystar) {
            let (l, r) = g.one_sided_derivatives(bp);
            left += gy * l;
            right += gy * r;
        }
        min = min.min(left.min(right));
        max = max.max(left.max(right));
    }
    Ok(IntervalSet::new(fx_grad + min, fx_grad + max))
}

/// Distance from zero to the interval: the minimum norm over the set.
pub fn stationarity_gap(interval: &IntervalSet) -> f64 {
    if interval.contains(0.0) {
        0.0
    } else {
        interval.lo.abs().min(interval.hi.abs())
    }
}

/// One of the built-in demonstration problems: a composite F(x) = f(x, y*(x))
/// with everything needed for both subdifferential variants at `center`.
pub struct CompositeDemo {
    pub name: &'static str,
    pub composite: PiecewiseScalarFunction,
    pub fx_grad: f64,
    pub fy_grad: Vec<f64>,
    pub ystar: Vec<PiecewiseScalarFunction>,
    pub center: f64,
}

/// f(x, y) = (x-1)^2 + y with y*(x) = |x|; F(x) = (x-1)^2 + |x|.
/// The full subdifferential at 0 grows with delta while the partial one
/// stays at [-3, -1].
pub fn demo_quadratic_plus_kink() -> CompositeDemo {
    let composite = PiecewiseScalarFunction::new(
        vec![0.0],
        vec![
            Polynomial::new(vec![1.0, -3.0, 1.0]), // (x-1)^2 - x
            Polynomial::new(vec![1.0, -1.0, 1.0]), // (x-1)^2 + x
        ],
    )
    .expect("valid demo pieces");
    CompositeDemo {
        name: "quadratic-plus-kink",
        composite,
        fx_grad: -2.0,        // d/dx (x-1)^2 at x = 0
        fy_grad: vec![1.0],   // d/dy at (0, 0)
        ystar: vec![PiecewiseScalarFunction::abs_shifted(0.0)],
        center: 0.0,
    }
}

/// f(y1, y2) = y1 - y2^2 with y*(x) = (|x|, |x-1|); F(x) = |x| - (x-1)^2.
/// The kink of y* at x = 1 is invisible in F but enters the partial
/// subdifferential once delta >= 1.
pub fn demo_kink_minus_quadratic() -> CompositeDemo {
    let composite = PiecewiseScalarFunction::new(
        vec![0.0],
        vec![
            Polynomial::new(vec![-1.0, 1.0, -1.0]), // -x - (x-1)^2
            Polynomial::new(vec![-1.0, 3.0, -1.0]), // x - (x-1)^2
        ],
    )
    .expect("valid demo pieces");
    CompositeDemo {
        name: "kink-minus-quadratic",
        composite,
        fx_grad: 0.0,
        fy_grad: vec![1.0, -2.0], // (1, -2 y2) at y*(0) = (0, 1)
        ystar: vec![
            PiecewiseScalarFunction::abs_shifted(0.0),
            PiecewiseScalarFunction::abs_shifted(1.0),
        ],
        center: 0.0,
    }
}

/// Row of the demo table at one delta.
#[derive(Debug, Clone, Copy)]
pub struct DemoRow {
    pub delta: f64,
    pub full: IntervalSet,
    pub full_gap: f64,
    pub partial: IntervalSet,
    pub partial_gap: f64,
}

pub fn demo_table(demo: &CompositeDemo, deltas: &[f64]) -> Result<Vec<DemoRow>> {
    deltas
        .iter()
        .map(|&delta| {
            let full = goldstein_interval(&demo.composite, demo.center, delta)?;
            let partial = partial_goldstein_interval(
                demo.fx_grad,
                &demo.fy_grad,
                &demo.ystar,
                demo.center,
                delta,
            )?;
            Ok(DemoRow {
                delta,
                full,
                full_gap: stationarity_gap(&full),
                partial,
                partial_gap: stationarity_gap(&partial),
            })
        })
        .collect()
}
