//! Toll-optimization benchmark: multi-class routing on a directed graph
//! with affine latencies.
//!
//! Given tolls, each user class spreads its demand over minimum
//! perceived-cost paths (latency plus toll scaled by the class's
//! sensitivity). Because latency depends only on aggregate flow and tolls
//! enter linearly, the equilibrium is the minimizer of a convex quadratic
//! potential over the multi-commodity flow polytope. The solver is
//! Frank-Wolfe with per-class shortest-path oracles, conjugate search
//! directions, exact line search (closed form on the quadratic), and a
//! duality-gap stop; per-class flows live on edges only, paths are never
//! enumerated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{FollowerOracle, LeaderObjective, Sense};
use crate::sampling::RngStream;
use crate::vecmath;

pub const DEFAULT_SOLVER_TOL: f64 = 1e-6;
/// Experiment defaults: regularization, smoothing radius, iterations; the
/// step size is 0.7 / |E|.
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_MU: f64 = 0.5;
pub const DEFAULT_ITERATIONS: usize = 150;
pub const DEFAULT_STEP_NUMERATOR: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    /// Latency slope, strictly positive so the aggregate equilibrium flow
    /// is unique.
    pub a: f64,
    /// Free-flow latency.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Commodity {
    pub origin: usize,
    pub destination: usize,
    pub demand: f64,
    /// Toll sensitivity: perceived cost is latency + toll / sensitivity.
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingInstance {
    pub vertices: usize,
    pub edges: Vec<Edge>,
    pub commodities: Vec<Commodity>,
    pub lambda: f64,
    /// Generator seed recorded for provenance.
    pub seed: u64,
}

impl RoutingInstance {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices == 0 || self.edges.is_empty() || self.commodities.is_empty() {
            return Err(Error::InvalidConfig("empty routing instance".into()));
        }
        for e in &self.edges {
            if e.tail >= self.vertices || e.head >= self.vertices {
                return Err(Error::InvalidConfig("edge endpoint out of range".into()));
            }
            if !(e.a > 0.0) || !(e.b > 0.0) {
                return Err(Error::InvalidConfig(
                    "latency coefficients must be strictly positive".into(),
                ));
            }
        }
        for (k, c) in self.commodities.iter().enumerate() {
            if c.origin >= self.vertices || c.destination >= self.vertices {
                return Err(Error::InvalidConfig("commodity endpoint out of range".into()));
            }
            if !(c.demand > 0.0) || !(c.sensitivity > 0.0) {
                return Err(Error::InvalidConfig(
                    "demand and sensitivity must be strictly positive".into(),
                ));
            }
            if !self.reachable(c.origin, c.destination) {
                return Err(Error::InvalidConfig(format!(
                    "destination of class {k} unreachable from its origin"
                )));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        Ok(())
    }

    fn reachable(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.vertices];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            for e in &self.edges {
                if e.tail == v && !seen[e.head] {
                    seen[e.head] = true;
                    stack.push(e.head);
                }
            }
        }
        false
    }

    pub fn total_demand(&self) -> f64 {
        self.commodities.iter().map(|c| c.demand).sum()
    }
}

/// Generator ranges (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingGenParams {
    pub vertices: (usize, usize),
    pub edges: (usize, usize),
    pub commodities: (usize, usize),
}

impl Default for RoutingGenParams {
    fn default() -> Self {
        RoutingGenParams {
            vertices: (6, 25),
            edges: (12, 119),
            commodities: (2, 5),
        }
    }
}

/// Random instance: a random arborescence guarantees a connected spanning
/// structure, extra arcs are placed uniformly among the remaining ordered
/// pairs, latency and class parameters follow the benchmark distributions
/// (a ~ U[1,5], b ~ U[1,10], integer demands in {3..12}, sensitivities
/// U[0.1,2], lambda = 1).
pub fn generate_routing_instance(
    rng: &mut RngStream,
    params: &RoutingGenParams,
) -> Result<RoutingInstance> {
    let (v_lo, v_hi) = params.vertices;
    let (e_lo, e_hi) = params.edges;
    let (k_lo, k_hi) = params.commodities;
    if v_lo == 0 || v_lo > v_hi || e_lo > e_hi || k_lo == 0 || k_lo > k_hi {
        return Err(Error::InvalidConfig("empty generator range".into()));
    }
    let n = rng.uniform_int(v_lo as u64, v_hi as u64) as usize;
    let max_edges = n * (n - 1);
    let lo = e_lo.max(n - 1).min(max_edges);
    let hi = e_hi.min(max_edges).max(lo);
    let m = rng.uniform_int(lo as u64, hi as u64) as usize;

    // random arborescence over a shuffled vertex order
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.uniform_int(0, i as u64) as usize;
        order.swap(i, j);
    }
    let mut present = std::collections::HashSet::new();
    let mut arcs: Vec<(usize, usize)> = Vec::with_capacity(m);
    for i in 1..n {
        let j = rng.uniform_int(0, i as u64 - 1) as usize;
        let arc = (order[j], order[i]);
        present.insert(arc);
        arcs.push(arc);
    }
    let mut guard = 0usize;
    while arcs.len() < m {
        let t = rng.uniform_int(0, n as u64 - 1) as usize;
        let h = rng.uniform_int(0, n as u64 - 1) as usize;
        if t != h && present.insert((t, h)) {
            arcs.push((t, h));
        }
        guard += 1;
        if guard > 1_000_000 {
            return Err(Error::GenerationFailure("edge placement stalled".into()));
        }
    }

    let edges: Vec<Edge> = arcs
        .into_iter()
        .map(|(tail, head)| Edge {
            tail,
            head,
            a: rng.uniform_in(1.0, 5.0),
            b: rng.uniform_in(1.0, 10.0),
        })
        .collect();

    let shell = RoutingInstance {
        vertices: n,
        edges,
        commodities: vec![],
        lambda: DEFAULT_LAMBDA,
        seed: rng.stream_id(),
    };

    let k = rng.uniform_int(k_lo as u64, k_hi as u64) as usize;
    let mut commodities = Vec::with_capacity(k);
    for _ in 0..k {
        let mut found = false;
        for _ in 0..1000 {
            let o = rng.uniform_int(0, n as u64 - 1) as usize;
            let d = rng.uniform_int(0, n as u64 - 1) as usize;
            if o != d && shell.reachable(o, d) {
                commodities.push(Commodity {
                    origin: o,
                    destination: d,
                    demand: rng.uniform_int(3, 12) as f64,
                    sensitivity: rng.uniform_in(0.1, 2.0),
                });
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::GenerationFailure(
                "no reachable origin-destination pair after 1000 resamples".into(),
            ));
        }
    }
    let instance = RoutingInstance {
        commodities,
        ..shell
    };
    instance.validate()?;
    Ok(instance)
}

/// Multi-class equilibrium flows.
#[derive(Debug, Clone)]
pub struct EquilibriumFlow {
    /// Aggregate edge flow, the quantity the leader observes.
    pub aggregate: Vec<f64>,
    /// Per-class edge flows (classes x edges). Only the aggregate is
    /// unique; the decomposition may differ between solver runs.
    pub per_class: Vec<Vec<f64>>,
    pub duality_gap: f64,
}

/// Starting flow for the solver; used to probe aggregate uniqueness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRule {
    /// All-or-nothing at free-flow costs (the default).
    FreeFlow,
    /// All-or-nothing at unit costs, i.e. minimum-hop paths.
    MinHop,
}

/// Bellman-Ford tolerant of negative costs. Returns per-vertex distances
/// and predecessor edges, or the edge set of a negative-cost cycle. A
/// cycle matters only when it can reach `target`: cycles in side pockets
/// of the graph leave the origin-target distance well defined, and the
/// predecessor chain into the target never crosses them.
enum PathsOutcome {
    Tree {
        dist: Vec<f64>,
        pred: Vec<Option<usize>>,
    },
    NegativeCycle {
        cycle: Vec<usize>,
    },
}

fn shortest_paths(
    vertices: usize,
    edges: &[Edge],
    costs: &[f64],
    source: usize,
    target: usize,
) -> PathsOutcome {
    let mut dist = vec![f64::INFINITY; vertices];
    let mut pred: Vec<Option<usize>> = vec![None; vertices];
    dist[source] = 0.0;
    let mut changed = true;
    for _ in 0..vertices.saturating_sub(1) {
        if !changed {
            break;
        }
        changed = false;
        for (idx, e) in edges.iter().enumerate() {
            let dt = dist[e.tail];
            if dt.is_finite() && dt + costs[idx] < dist[e.head] - 1e-15 {
                dist[e.head] = dt + costs[idx];
                pred[e.head] = Some(idx);
                changed = true;
            }
        }
    }
    if changed {
        // vertices that can reach the target
        let mut reaches_target = vec![false; vertices];
        reaches_target[target] = true;
        let mut stack = vec![target];
        while let Some(v) = stack.pop() {
            for e in edges {
                if e.head == v && !reaches_target[e.tail] {
                    reaches_target[e.tail] = true;
                    stack.push(e.tail);
                }
            }
        }
        for (idx, e) in edges.iter().enumerate() {
            let dt = dist[e.tail];
            if dt.is_finite()
                && dt + costs[idx] < dist[e.head] - 1e-9
                && reaches_target[e.head]
            {
                // walk the predecessor chain far enough to land on the
                // cycle, then collect it
                let mut pred = pred;
                pred[e.head] = Some(idx);
                let mut v = e.head;
                for _ in 0..vertices {
                    v = edges[pred[v].expect("relaxed vertex has a predecessor")].tail;
                }
                let start = v;
                let mut cycle = Vec::new();
                loop {
                    let e = pred[v].expect("cycle vertex has a predecessor");
                    cycle.push(e);
                    v = edges[e].tail;
                    if v == start {
                        break;
                    }
                }
                cycle.reverse();
                return PathsOutcome::NegativeCycle { cycle };
            }
        }
    }
    PathsOutcome::Tree { dist, pred }
}

fn perceived_costs(instance: &RoutingInstance, aggregate: &[f64], tolls: &[f64], class: usize) -> Vec<f64> {
    let s = instance.commodities[class].sensitivity;
    instance
        .edges
        .iter()
        .enumerate()
        .map(|(e, edge)| edge.a * aggregate[e] + edge.b + tolls[e] / s)
        .collect()
}

/// All-or-nothing assignment of one class along its predecessor chain.
fn assign_demand(
    instance: &RoutingInstance,
    class: usize,
    pred: &[Option<usize>],
    target: &mut [f64],
) -> Result<()> {
    let c = &instance.commodities[class];
    let mut v = c.destination;
    let mut hops = 0;
    while v != c.origin {
        let e = pred[v].ok_or_else(|| {
            Error::InvalidConfig(format!("destination of class {class} became unreachable"))
        })?;
        target[e] += c.demand;
        v = instance.edges[e].tail;
        hops += 1;
        if hops > instance.vertices {
            return Err(Error::InvalidConfig(format!(
                "predecessor chain of class {class} is cyclic"
            )));
        }
    }
    Ok(())
}

/// Beckmann-style potential: Σ_e (a f^2 / 2 + b f) over aggregates plus the
/// per-class toll terms.
fn potential_from(
    instance: &RoutingInstance,
    per_class: &[&[f64]],
    aggregate: &[f64],
    tolls: &[f64],
) -> f64 {
    let mut phi = 0.0;
    for (e, edge) in instance.edges.iter().enumerate() {
        phi += 0.5 * edge.a * aggregate[e] * aggregate[e] + edge.b * aggregate[e];
    }
    for (i, c) in instance.commodities.iter().enumerate() {
        phi += vecmath::dot(tolls, per_class[i]) / c.sensitivity;
    }
    phi
}

#[cfg(test)]
fn aggregate_of(per_class: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut agg = vec![0.0; m];
    for f in per_class {
        for (a, x) in agg.iter_mut().zip(f) {
            *a += x;
        }
    }
    agg
}

struct SolverOutcome {
    flow: EquilibriumFlow,
    phi_trace: Vec<f64>,
}

const MAX_FW_ITERATIONS: usize = 400_000;

fn solve_equilibrium(
    instance: &RoutingInstance,
    tolls: &[f64],
    tol: f64,
    init: InitRule,
    keep_trace: bool,
) -> Result<SolverOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tol must be positive, got {tol}")));
    }
    if tolls.len() != instance.edge_count() {
        return Err(Error::InvalidConfig(format!(
            "toll vector has length {}, expected {}",
            tolls.len(),
            instance.edge_count()
        )));
    }
    let m = instance.edge_count();
    let k = instance.commodities.len();
    let total_demand = instance.total_demand();

    // Each class keeps the all-or-nothing assignments seen so far (path
    // atoms, simplex weights) plus any unit circulations discovered while
    // perceived costs admitted a negative cycle (ray atoms, nonnegative
    // weights). Its flow is the weighted combination of both. Atom entries
    // are exactly representable (0 or the demand; 0 or 1), so deduplication
    // can use exact equality.
    struct ClassState {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        cycles: Vec<Vec<f64>>,
        cycle_weights: Vec<f64>,
        flow: Vec<f64>,
    }
    impl ClassState {
        fn add_atom(&mut self, atom: Vec<f64>) {
            if !self.atoms.iter().any(|a| *a == atom) {
                self.atoms.push(atom);
                self.weights.push(0.0);
            }
        }

        fn add_cycle(&mut self, cycle: Vec<f64>) {
            if !self.cycles.iter().any(|c| *c == cycle) {
                self.cycles.push(cycle);
                self.cycle_weights.push(0.0);
            }
        }

        fn rebuild_flow(&mut self, m: usize) {
            let mut flow = vec![0.0; m];
            for (w, atom) in self.weights.iter().zip(&self.atoms) {
                vecmath::axpy(&mut flow, *w, atom);
            }
            for (u, cycle) in self.cycle_weights.iter().zip(&self.cycles) {
                vecmath::axpy(&mut flow, *u, cycle);
            }
            self.flow = flow;
        }

        fn circulation_total(&self) -> f64 {
            self.cycle_weights.iter().sum()
        }

        fn prune(&mut self) {
            let mut kept_atoms = Vec::with_capacity(self.atoms.len());
            let mut kept_weights = Vec::with_capacity(self.weights.len());
            for (atom, w) in self.atoms.drain(..).zip(self.weights.drain(..)) {
                if w > 0.0 {
                    kept_atoms.push(atom);
                    kept_weights.push(w);
                }
            }
            self.atoms = kept_atoms;
            self.weights = kept_weights;
            let mut kept_cycles = Vec::with_capacity(self.cycles.len());
            let mut kept_cw = Vec::with_capacity(self.cycle_weights.len());
            for (cycle, u) in self.cycles.drain(..).zip(self.cycle_weights.drain(..)) {
                if u > 0.0 {
                    kept_cycles.push(cycle);
                    kept_cw.push(u);
                }
            }
            self.cycles = kept_cycles;
            self.cycle_weights = kept_cw;
        }
    }

    let mut classes: Vec<ClassState> = Vec::with_capacity(k);
    for i in 0..k {
        let costs = match init {
            InitRule::FreeFlow => perceived_costs(instance, &vec![0.0; m], tolls, i),
            InitRule::MinHop => vec![1.0; m],
        };
        let pred = match shortest_paths(
            instance.vertices,
            &instance.edges,
            &costs,
            instance.commodities[i].origin,
            instance.commodities[i].destination,
        ) {
            PathsOutcome::Tree { pred, .. } => pred,
            PathsOutcome::NegativeCycle { .. } => {
                // fall back to hop counts for the very first assignment;
                // profitable cycles are handled by the main loop
                match shortest_paths(
                    instance.vertices,
                    &instance.edges,
                    &vec![1.0; m],
                    instance.commodities[i].origin,
                    instance.commodities[i].destination,
                ) {
                    PathsOutcome::Tree { pred, .. } => pred,
                    PathsOutcome::NegativeCycle { .. } => unreachable!("unit costs"),
                }
            }
        };
        let mut atom = vec![0.0; m];
        assign_demand(instance, i, &pred, &mut atom)?;
        let mut state = ClassState {
            atoms: vec![atom],
            weights: vec![1.0],
            cycles: Vec::new(),
            cycle_weights: Vec::new(),
            flow: Vec::new(),
        };
        state.rebuild_flow(m);
        classes.push(state);
    }

    let aggregate_now = |classes: &[ClassState]| -> Vec<f64> {
        let mut agg = vec![0.0; m];
        for st in classes {
            for (a, x) in agg.iter_mut().zip(&st.flow) {
                *a += x;
            }
        }
        agg
    };

    let mut aggregate = aggregate_now(&classes);
    let mut phi_trace = Vec::new();
    let mut gap = f64::INFINITY;
    // pairwise sweeps per outer iteration; each sweep is one swap step per
    // class over the current atom dictionary at refreshed costs
    const INNER_SWEEPS: usize = 24;

    for _iter in 0..MAX_FW_ITERATIONS {
        let per_class: Vec<&[f64]> = classes.iter().map(|c| c.flow.as_slice()).collect();
        let phi = potential_from(instance, &per_class, &aggregate, tolls);
        if keep_trace {
            phi_trace.push(phi);
        }

        // fresh all-or-nothing point per class; also yields the duality
        // gap. A perceived-cost cycle that is still profitable at current
        // flows becomes a ray atom instead of an assignment.
        gap = 0.0;
        let mut gap_valid = true;
        for i in 0..k {
            let costs = perceived_costs(instance, &aggregate, tolls, i);
            match shortest_paths(
                instance.vertices,
                &instance.edges,
                &costs,
                instance.commodities[i].origin,
                instance.commodities[i].destination,
            ) {
                PathsOutcome::Tree { dist, pred } => {
                    let mut atom = vec![0.0; m];
                    assign_demand(instance, i, &pred, &mut atom)?;
                    gap += vecmath::dot(&costs, &classes[i].flow)
                        - instance.commodities[i].demand
                            * dist[instance.commodities[i].destination];
                    classes[i].add_atom(atom);
                }
                PathsOutcome::NegativeCycle { cycle } => {
                    gap_valid = false;
                    let mut ray = vec![0.0; m];
                    for e in cycle {
                        ray[e] = 1.0;
                    }
                    classes[i].add_cycle(ray);
                }
            }
        }

        if gap_valid && gap <= tol * (1.0 + phi.abs()) {
            let per_class: Vec<Vec<f64>> = classes.iter().map(|c| c.flow.clone()).collect();
            let residual = certificate_residual(instance, &per_class, &aggregate, tolls)?;
            if residual <= 10.0 * tol {
                return Ok(SolverOutcome {
                    flow: EquilibriumFlow {
                        aggregate,
                        per_class,
                        duality_gap: gap,
                    },
                    phi_trace,
                });
            }
        }

        for sweep in 0..INNER_SWEEPS {
            let mut moved = false;
            for i in 0..k {
                let st = &mut classes[i];
                let costs = perceived_costs(instance, &aggregate, tolls, i);

                // pairwise step: shift weight from the costliest used path
                // atom onto the cheapest one, exact line search
                if st.atoms.len() >= 2 {
                    let scores: Vec<f64> =
                        st.atoms.iter().map(|a| vecmath::dot(&costs, a)).collect();
                    let toward = (0..st.atoms.len())
                        .min_by(|&x, &y| scores[x].partial_cmp(&scores[y]).unwrap())
                        .unwrap();
                    let away = (0..st.atoms.len())
                        .filter(|&x| st.weights[x] > 0.0)
                        .max_by(|&x, &y| scores[x].partial_cmp(&scores[y]).unwrap())
                        .unwrap();
                    if away != toward && scores[away] - scores[toward] > 0.0 {
                        let slope = scores[toward] - scores[away];
                        let mut curvature = 0.0;
                        for e in 0..m {
                            let d = st.atoms[toward][e] - st.atoms[away][e];
                            curvature += instance.edges[e].a * d * d;
                        }
                        let unbounded = if curvature > 0.0 {
                            -slope / curvature
                        } else {
                            f64::INFINITY
                        };
                        let step = unbounded.min(st.weights[away]);
                        if step > 0.0 {
                            st.weights[away] -= step;
                            st.weights[toward] += step;
                            if st.weights[away] < 1e-15 {
                                st.weights[toward] += st.weights[away];
                                st.weights[away] = 0.0;
                            }
                            for e in 0..m {
                                let d = step * (st.atoms[toward][e] - st.atoms[away][e]);
                                st.flow[e] += d;
                                aggregate[e] += d;
                            }
                            moved = true;
                        }
                    }
                }

                // ray steps: scale each circulation to its exact optimum
                // (up while its cycle stays profitable, down to zero once
                // it is not)
                for j in 0..st.cycles.len() {
                    let cycle_cost = vecmath::dot(&costs, &st.cycles[j]);
                    let mut curvature = 0.0;
                    for e in 0..m {
                        let c = st.cycles[j][e];
                        curvature += instance.edges[e].a * c * c;
                    }
                    if curvature <= 0.0 {
                        continue;
                    }
                    let step = (-cycle_cost / curvature).max(-st.cycle_weights[j]);
                    if step.abs() <= 1e-15 {
                        continue;
                    }
                    st.cycle_weights[j] += step;
                    if st.cycle_weights[j] < 1e-15 {
                        st.cycle_weights[j] = 0.0;
                    }
                    for e in 0..m {
                        let d = step * st.cycles[j][e];
                        st.flow[e] += d;
                        aggregate[e] += d;
                    }
                    moved = true;
                    if st.circulation_total() > 10.0 * total_demand.max(1.0) {
                        // perceived costs reward circling far beyond any
                        // routed volume; treat the query as pathological
                        return Err(Error::NegativeCycle { class: i });
                    }
                }
            }
            if !moved {
                break;
            }
            // refresh flows exactly from the weights now and then to stop
            // incremental-update drift
            if sweep == INNER_SWEEPS - 1 {
                for st in classes.iter_mut() {
                    st.prune();
                    st.rebuild_flow(m);
                }
                aggregate = aggregate_now(&classes);
            }
        }
    }
    Err(Error::EquilibriumNotConverged {
        iterations: MAX_FW_ITERATIONS,
        gap,
    })
}

/// Cancel directed cycles in a nonnegative edge flow, returning the
/// path-decomposable remainder with the same divergence.
fn cancel_cycles(vertices: usize, edges: &[Edge], flow: &[f64]) -> Vec<f64> {
    const EPS: f64 = 1e-12;

    // DFS over the support; returns (meet vertex, closing edge) of a cycle
    fn dfs(
        v: usize,
        edges: &[Edge],
        flow: &[f64],
        color: &mut [u8],
        entered_by: &mut [Option<usize>],
    ) -> Option<(usize, usize)> {
        color[v] = 1;
        for (idx, e) in edges.iter().enumerate() {
            if e.tail != v || flow[idx] <= EPS {
                continue;
            }
            match color[e.head] {
                1 => return Some((e.head, idx)),
                0 => {
                    entered_by[e.head] = Some(idx);
                    if let Some(hit) = dfs(e.head, edges, flow, color, entered_by) {
                        return Some(hit);
                    }
                }
                _ => {}
            }
        }
        color[v] = 2;
        None
    }

    let mut flow = flow.to_vec();
    loop {
        let mut color = vec![0u8; vertices];
        let mut entered_by: Vec<Option<usize>> = vec![None; vertices];
        let mut found = None;
        for start in 0..vertices {
            if color[start] == 0 {
                if let Some(hit) = dfs(start, edges, &flow, &mut color, &mut entered_by) {
                    found = Some(hit);
                    break;
                }
            }
        }
        let Some((meet, closing_edge)) = found else {
            return flow;
        };
        let mut cycle = vec![closing_edge];
        let mut x = edges[closing_edge].tail;
        while x != meet {
            let e = entered_by[x].expect("vertex on DFS path has entry edge");
            cycle.push(e);
            x = edges[e].tail;
        }
        let shift = cycle.iter().map(|&e| flow[e]).fold(f64::INFINITY, f64::min);
        for e in cycle {
            flow[e] -= shift;
            if flow[e] < EPS {
                flow[e] = 0.0;
            }
        }
    }
}

/// Max excess perceived cost over used edges (class flow > 1e-6 after
/// cycle canceling): for each used edge, the cheapest origin-destination
/// path through it must cost no more than the class minimum plus the
/// returned residual. Circulation sustained by zero-cost cycles is not
/// part of the routed demand and is excluded before the check.
fn certificate_residual(
    instance: &RoutingInstance,
    per_class: &[Vec<f64>],
    aggregate: &[f64],
    tolls: &[f64],
) -> Result<f64> {
    let mut residual = 0.0f64;
    let reversed: Vec<Edge> = instance
        .edges
        .iter()
        .map(|e| Edge {
            tail: e.head,
            head: e.tail,
            a: e.a,
            b: e.b,
        })
        .collect();
    for (i, c) in instance.commodities.iter().enumerate() {
        let costs = perceived_costs(instance, aggregate, tolls, i);
        let dist = match shortest_paths(
            instance.vertices,
            &instance.edges,
            &costs,
            c.origin,
            c.destination,
        ) {
            PathsOutcome::Tree { dist, .. } => dist,
            PathsOutcome::NegativeCycle { .. } => return Err(Error::NegativeCycle { class: i }),
        };
        let rdist = match shortest_paths(
            instance.vertices,
            &reversed,
            &costs,
            c.destination,
            c.origin,
        ) {
            PathsOutcome::Tree { dist, .. } => dist,
            PathsOutcome::NegativeCycle { .. } => return Err(Error::NegativeCycle { class: i }),
        };
        let best = dist[c.destination];
        let routed = cancel_cycles(instance.vertices, &instance.edges, &per_class[i]);
        for (e, edge) in instance.edges.iter().enumerate() {
            if routed[e] > 1e-6 {
                let through = dist[edge.tail] + costs[e] + rdist[edge.head];
                residual = residual.max(through - best);
            }
        }
    }
    Ok(residual)
}

/// Wardrop equilibrium at the given tolls. The aggregate flow is unique;
/// solver accuracy is certified by the duality gap and the used-path
/// optimality residual (within 10 x tol).
pub fn wardrop_equilibrium(
    instance: &RoutingInstance,
    tolls: &[f64],
    tol: f64,
) -> Result<EquilibriumFlow> {
    Ok(solve_equilibrium(instance, tolls, tol, InitRule::FreeFlow, false)?.flow)
}

/// Equilibrium from a chosen starting flow; aggregates from different
/// starts must agree within solver accuracy.
pub fn wardrop_equilibrium_from(
    instance: &RoutingInstance,
    tolls: &[f64],
    tol: f64,
    init: InitRule,
) -> Result<EquilibriumFlow> {
    Ok(solve_equilibrium(instance, tolls, tol, init, false)?.flow)
}

/// Equilibrium plus the potential value per solver iteration (test hook).
pub fn wardrop_equilibrium_traced(
    instance: &RoutingInstance,
    tolls: &[f64],
    tol: f64,
) -> Result<(EquilibriumFlow, Vec<f64>)> {
    let out = solve_equilibrium(instance, tolls, tol, InitRule::FreeFlow, true)?;
    Ok((out.flow, out.phi_trace))
}

/// Used-path optimality residual of a solved flow (public test surface).
pub fn equilibrium_certificate(
    instance: &RoutingInstance,
    tolls: &[f64],
    flow: &EquilibriumFlow,
) -> Result<f64> {
    certificate_residual(instance, &flow.per_class, &flow.aggregate, tolls)
}

/// Revenue Σ τ_e f_e - λ ||τ||^2 with exact partial gradients.
pub fn revenue_objective_and_grads(
    instance: &RoutingInstance,
    tolls: &[f64],
    flow: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let value = vecmath::dot(tolls, flow) - instance.lambda * vecmath::dot(tolls, tolls);
    let grad_tolls: Vec<f64> = flow
        .iter()
        .zip(tolls)
        .map(|(f, t)| f - 2.0 * instance.lambda * t)
        .collect();
    let grad_flow = tolls.to_vec();
    (value, grad_tolls, grad_flow)
}

/// Starting point for toll optimization: the zero toll vector.
pub fn initial_tolls(instance: &RoutingInstance) -> Vec<f64> {
    vec![0.0; instance.edge_count()]
}

/// The equilibrium aggregate flow as a black-box follower oracle.
pub struct RoutingOracle<'a> {
    pub instance: &'a RoutingInstance,
    pub tol: f64,
}

impl<'a> RoutingOracle<'a> {
    pub fn new(instance: &'a RoutingInstance) -> Self {
        RoutingOracle {
            instance,
            tol: DEFAULT_SOLVER_TOL,
        }
    }
}

impl FollowerOracle for RoutingOracle<'_> {
    fn leader_dim(&self) -> usize {
        self.instance.edge_count()
    }
    fn follower_dim(&self) -> usize {
        self.instance.edge_count()
    }
    fn respond(&self, tolls: &[f64]) -> Result<Vec<f64>> {
        Ok(wardrop_equilibrium(self.instance, tolls, self.tol)?.aggregate)
    }
    /// Outer approximation of the aggregate-flow polytope: nonnegativity,
    /// total-demand caps, and aggregate conservation at every vertex. All
    /// are preserved by averaging, so smoothed responses stay inside.
    fn is_feasible(&self, flow: &[f64]) -> bool {
        if flow.len() != self.instance.edge_count() {
            return false;
        }
        let total = self.instance.total_demand();
        let tol = 1e-8 * (1.0 + total);
        if flow.iter().any(|&f| f < -tol || f > total + tol) {
            return false;
        }
        let mut divergence = vec![0.0; self.instance.vertices];
        for (e, edge) in self.instance.edges.iter().enumerate() {
            divergence[edge.tail] += flow[e];
            divergence[edge.head] -= flow[e];
        }
        for c in &self.instance.commodities {
            divergence[c.origin] -= c.demand;
            divergence[c.destination] += c.demand;
        }
        divergence.iter().all(|d| d.abs() <= tol)
    }
}

/// Toll revenue as the leader objective (maximization).
pub struct RevenueObjective<'a> {
    pub instance: &'a RoutingInstance,
}

impl LeaderObjective for RevenueObjective<'_> {
    fn eval(&self, tolls: &[f64], flow: &[f64]) -> f64 {
        revenue_objective_and_grads(self.instance, tolls, flow).0
    }
    fn grad_x(&self, tolls: &[f64], flow: &[f64]) -> Vec<f64> {
        revenue_objective_and_grads(self.instance, tolls, flow).1
    }
    fn grad_y(&self, tolls: &[f64], flow: &[f64]) -> Vec<f64> {
        revenue_objective_and_grads(self.instance, tolls, flow).2
    }
    fn sense(&self) -> Sense {
        Sense::Maximize
    }
}

pub fn to_toml_string(instance: &RoutingInstance) -> Result<String> {
    toml::to_string(instance).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_toml_str(text: &str) -> Result<RoutingInstance> {
    let instance: RoutingInstance =
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    instance.validate()?;
    Ok(instance)
}
