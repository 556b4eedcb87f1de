//! Experiment orchestration: paired-noise suites over generated instance
//! sets, estimator variance sweeps, batch and smoothing-radius sweeps,
//! dimension profiles, and the constrained-leader variant.
//!
//! Determinism contract: every artifact is a pure function of the
//! [`ExperimentSpec`], including `master_seed` and `workers` — stream
//! identities are derived from indices, never from scheduling.

pub mod exec;
pub mod io;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{second_moment_probe, EstimatorKind};
use crate::optimizer::{self, Algorithm, RunConfig, StepSchedule, Trajectory};
use crate::problem::{Mu, Sense};
use crate::routing::{self, RoutingInstance, RoutingOracle, RevenueObjective};
use crate::sampling::{derive_stream_id, RngStream};
use crate::security::{self, DefenderObjective, SecurityInstance, SecurityOracle};

pub use exec::{run_jobs, run_jobs_sequential};

/// Role constants entering stream-id derivation, keeping generation, runs,
/// and probes on disjoint streams.
const ROLE_GENERATE: u64 = 1;
const ROLE_RUN: u64 = 2;
const ROLE_PROBE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Routing,
    Security,
    /// Instances loaded from `instances_dir` instead of generated.
    Custom,
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Suite::Routing => write!(f, "routing"),
            Suite::Security => write!(f, "security"),
            Suite::Custom => write!(f, "custom"),
        }
    }
}

/// One compared configuration: the algorithm and its batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub algorithm: Algorithm,
    #[serde(default = "default_q")]
    pub q: usize,
}

fn default_q() -> usize {
    1
}

/// Step-size rule before per-instance resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSpec {
    /// Routing: constant 0.7/|E|; security: 0.05/sqrt(t+1) up to 100
    /// targets, 0.03/sqrt(t+1) above.
    SuiteDefault,
    Constant { alpha: f64 },
    /// Constant numerator / leader dimension.
    ConstantOverDim { numerator: f64 },
    InverseSqrt { c: f64 },
}

impl Default for StepSpec {
    fn default() -> Self {
        StepSpec::SuiteDefault
    }
}

/// Run-configuration template; unset fields fall back to suite defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunTemplate {
    pub iterations: Option<usize>,
    pub mu: Option<f64>,
    pub project_nonnegative: bool,
    pub step: StepSpec,
}

/// Suite-specific generator ranges (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceParams {
    pub vertices: (usize, usize),
    pub edges: (usize, usize),
    pub commodities: (usize, usize),
    /// Security-game target-count range.
    pub targets: (usize, usize),
}

impl Default for InstanceParams {
    fn default() -> Self {
        let r = routing::RoutingGenParams::default();
        InstanceParams {
            vertices: r.vertices,
            edges: r.edges,
            commodities: r.commodities,
            targets: (2, 100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub suite: Suite,
    pub instance_count: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub snapshots: Vec<usize>,
    #[serde(default)]
    pub mu_grid: Option<Vec<f64>>,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub run: RunTemplate,
    #[serde(default)]
    pub instance_params: InstanceParams,
    #[serde(default)]
    pub instances_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance_count == 0 {
            return Err(Error::InvalidConfig("instance_count must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("at least one algorithm required".into()));
        }
        if self.algorithms.iter().any(|a| a.q == 0) {
            return Err(Error::InvalidConfig("batch size q must be at least 1".into()));
        }
        if self.suite == Suite::Custom && self.instances_dir.is_none() {
            return Err(Error::InvalidConfig(
                "custom suite requires instances_dir".into(),
            ));
        }
        if let Some(grid) = &self.mu_grid {
            if grid.iter().any(|&m| !(m > 0.0)) {
                return Err(Error::InvalidConfig("mu_grid entries must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A concrete benchmark instance of either family.
#[derive(Debug, Clone)]
pub enum GameInstance {
    Routing(RoutingInstance),
    Security(SecurityInstance),
}

impl GameInstance {
    pub fn leader_dim(&self) -> usize {
        match self {
            GameInstance::Routing(i) => i.edge_count(),
            GameInstance::Security(i) => i.n,
        }
    }

    pub fn sense(&self) -> Sense {
        match self {
            GameInstance::Routing(_) => Sense::Maximize,
            GameInstance::Security(_) => Sense::Minimize,
        }
    }

    pub fn initial_point(&self) -> Vec<f64> {
        match self {
            GameInstance::Routing(i) => routing::initial_tolls(i),
            GameInstance::Security(i) => security::initial_defense(i),
        }
    }

    pub fn default_mu(&self) -> f64 {
        match self {
            GameInstance::Routing(_) => routing::DEFAULT_MU,
            GameInstance::Security(_) => security::DEFAULT_MU,
        }
    }

    pub fn default_iterations(&self) -> usize {
        match self {
            GameInstance::Routing(_) => routing::DEFAULT_ITERATIONS,
            GameInstance::Security(_) => security::DEFAULT_ITERATIONS,
        }
    }

    pub fn default_step(&self) -> StepSchedule {
        match self {
            GameInstance::Routing(i) => StepSchedule::Constant {
                alpha: routing::DEFAULT_STEP_NUMERATOR / i.edge_count() as f64,
            },
            GameInstance::Security(i) => StepSchedule::InverseSqrt {
                c: security::default_step_constant(i.n),
            },
        }
    }

    pub fn execute(&self, config: &RunConfig) -> Result<Trajectory> {
        match self {
            GameInstance::Routing(inst) => {
                let oracle = RoutingOracle::new(inst);
                let leader = RevenueObjective { instance: inst };
                optimizer::run(&leader, &oracle, config)
            }
            GameInstance::Security(inst) => {
                let oracle = SecurityOracle::new(inst);
                let leader = DefenderObjective { instance: inst };
                optimizer::run(&leader, &oracle, config)
            }
        }
    }
}

fn resolve_step(step: StepSpec, instance: &GameInstance) -> StepSchedule {
    match step {
        StepSpec::SuiteDefault => instance.default_step(),
        StepSpec::Constant { alpha } => StepSchedule::Constant { alpha },
        StepSpec::ConstantOverDim { numerator } => StepSchedule::Constant {
            alpha: numerator / instance.leader_dim() as f64,
        },
        StepSpec::InverseSqrt { c } => StepSchedule::InverseSqrt { c },
    }
}

fn resolve_config(
    spec: &ExperimentSpec,
    instance: &GameInstance,
    algo: AlgorithmSpec,
    instance_idx: usize,
) -> Result<RunConfig> {
    let iterations = spec.run.iterations.unwrap_or_else(|| instance.default_iterations());
    if let Some(&bad) = spec.snapshots.iter().find(|&&s| s > iterations) {
        return Err(Error::InvalidConfig(format!(
            "snapshot {bad} beyond horizon {iterations}"
        )));
    }
    // algorithm identity deliberately does not enter the stream id: paired
    // runs on one instance must consume identical directions
    let stream_id = derive_stream_id(&[spec.master_seed, ROLE_RUN, instance_idx as u64, 0]);
    Ok(RunConfig {
        algorithm: algo.algorithm,
        batch_q: algo.q,
        iterations,
        mu: spec.run.mu.unwrap_or_else(|| instance.default_mu()),
        step: resolve_step(spec.run.step, instance),
        project_nonnegative: spec.run.project_nonnegative,
        seed: spec.master_seed,
        stream_id,
        sense: instance.sense(),
        x0: instance.initial_point(),
    })
}

/// One run inside an instance record: configuration key, raw trajectory,
/// and the jointly normalized objective series.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub key: AlgorithmSpec,
    pub trajectory: Trajectory,
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub dimension: usize,
    pub runs: Vec<TrajectoryRecord>,
    pub lowest: f64,
    pub highest: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exclusion {
    pub instance_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub q: usize,
    pub t: usize,
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub n_instances: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub records: Vec<InstanceRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub exclusions: Vec<Exclusion>,
    pub spec: ExperimentSpec,
}

impl SuiteResult {
    /// Median normalized objective for one configuration at iteration t.
    pub fn median(&self, algorithm: Algorithm, q: usize, t: usize) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|r| r.algorithm == algorithm && r.q == q && r.t == t)
            .map(|r| r.p50)
    }

    /// Per-instance normalized values for one configuration at iteration t.
    pub fn instance_values(&self, algorithm: Algorithm, q: usize, t: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|rec| {
                rec.runs
                    .iter()
                    .find(|r| r.key.algorithm == algorithm && r.key.q == q)
                    .and_then(|r| r.normalized.get(t).copied())
            })
            .collect()
    }

    /// Normalized value reached within an algorithmic oracle-call budget,
    /// per instance: the latest iterate whose cumulative calls fit.
    pub fn instance_values_at_call_budget(
        &self,
        algorithm: Algorithm,
        q: usize,
        budget: u64,
    ) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|rec| {
                rec.runs
                    .iter()
                    .find(|r| r.key.algorithm == algorithm && r.key.q == q)
                    .map(|r| {
                        let calls = &r.trajectory.oracle_calls_cumulative;
                        let t = calls.partition_point(|&c| c <= budget).saturating_sub(1);
                        r.normalized[t]
                    })
            })
            .collect()
    }
}

/// Linear-interpolation percentile of unsorted data, p in [0, 1].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

fn generate_instances(spec: &ExperimentSpec) -> Result<Vec<(String, GameInstance)>> {
    match spec.suite {
        Suite::Routing => (0..spec.instance_count)
            .map(|idx| {
                let sid = derive_stream_id(&[spec.master_seed, ROLE_GENERATE, idx as u64]);
                let mut rng = RngStream::new(spec.master_seed, sid);
                let params = routing::RoutingGenParams {
                    vertices: spec.instance_params.vertices,
                    edges: spec.instance_params.edges,
                    commodities: spec.instance_params.commodities,
                };
                let inst = routing::generate_routing_instance(&mut rng, &params)?;
                Ok((format!("routing-{idx:03}"), GameInstance::Routing(inst)))
            })
            .collect(),
        Suite::Security => (0..spec.instance_count)
            .map(|idx| {
                let sid = derive_stream_id(&[spec.master_seed, ROLE_GENERATE, idx as u64]);
                let mut rng = RngStream::new(spec.master_seed, sid);
                let (lo, hi) = spec.instance_params.targets;
                let n = rng.uniform_int(lo as u64, hi as u64) as usize;
                let inst = security::generate_security_instance(&mut rng, n)?;
                Ok((format!("security-{idx:03}"), GameInstance::Security(inst)))
            })
            .collect(),
        Suite::Custom => {
            let dir = spec.instances_dir.as_ref().expect("validated");
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "no instance files in {}",
                    dir.display()
                )));
            }
            paths
                .into_iter()
                .take(spec.instance_count)
                .map(|p| {
                    let id = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "instance".into());
                    Ok((id, io::read_instance(&p)?))
                })
                .collect()
        }
    }
}

/// Run every configured algorithm on every instance with paired noise and
/// aggregate jointly normalized objectives across instances.
pub fn run_paired_suite(spec: &ExperimentSpec) -> Result<SuiteResult> {
    spec.validate()?;
    let instances = generate_instances(spec)?;

    type JobOutput = std::result::Result<Vec<(AlgorithmSpec, Trajectory)>, String>;
    let indices: Vec<usize> = (0..instances.len()).collect();
    let outputs: Vec<JobOutput> = run_jobs(spec.workers, indices, |idx| {
        let (_, instance) = &instances[idx];
        let mut runs = Vec::with_capacity(spec.algorithms.len());
        for &algo in &spec.algorithms {
            let config = resolve_config(spec, instance, algo, idx).map_err(|e| e.to_string())?;
            let traj = instance.execute(&config).map_err(|e| e.to_string())?;
            runs.push((algo, traj));
        }
        Ok(runs)
    });

    let mut records = Vec::new();
    let mut exclusions = Vec::new();
    for ((id, instance), output) in instances.iter().zip(outputs) {
        match output {
            Ok(runs) => {
                let trajs: Vec<&Trajectory> = runs.iter().map(|(_, t)| t).collect();
                let normalized = optimizer::normalized_objective(&trajs)?;
                let record = InstanceRecord {
                    instance_id: id.clone(),
                    dimension: instance.leader_dim(),
                    runs: runs
                        .into_iter()
                        .zip(normalized.series)
                        .map(|((key, trajectory), series)| TrajectoryRecord {
                            key,
                            trajectory,
                            normalized: series,
                        })
                        .collect(),
                    lowest: normalized.lowest,
                    highest: normalized.highest,
                    degenerate: normalized.degenerate,
                };
                records.push(record);
            }
            Err(reason) => {
                // recorded, never silently dropped
                exclusions.push(Exclusion {
                    instance_id: id.clone(),
                    reason,
                });
            }
        }
    }

    let aggregates = aggregate(spec, &records);
    Ok(SuiteResult {
        records,
        aggregates,
        exclusions,
        spec: spec.clone(),
    })
}

fn aggregate(spec: &ExperimentSpec, records: &[InstanceRecord]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    if records.is_empty() {
        return rows;
    }
    for &algo in &spec.algorithms {
        let series: Vec<&[f64]> = records
            .iter()
            .filter_map(|rec| {
                rec.runs
                    .iter()
                    .find(|r| r.key == algo)
                    .map(|r| r.normalized.as_slice())
            })
            .collect();
        if series.is_empty() {
            continue;
        }
        let horizon = series.iter().map(|s| s.len()).min().unwrap_or(0);
        for t in 0..horizon {
            let values: Vec<f64> = series.iter().map(|s| s[t]).collect();
            rows.push(AggregateRow {
                algorithm: algo.algorithm,
                q: algo.q,
                t,
                p10: percentile(&values, 0.10),
                p25: percentile(&values, 0.25),
                p50: percentile(&values, 0.50),
                p75: percentile(&values, 0.75),
                p90: percentile(&values, 0.90),
                n_instances: values.len(),
            });
        }
    }
    rows
}

/// Second-moment comparison of the two estimators across problem
/// dimensions, on freshly generated security instances evaluated at their
/// initial defense point with paired direction streams.
#[derive(Debug, Clone, Copy)]
pub struct VarianceRow {
    pub dx: usize,
    pub estimator: EstimatorKind,
    pub mean_sq_norm: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

pub fn variance_sweep(
    dims: &[usize],
    samples_per_dim: usize,
    master_seed: u64,
    workers: usize,
    mu: f64,
) -> Result<Vec<VarianceRow>> {
    if samples_per_dim < 100 {
        return Err(Error::InvalidConfig(
            "variance sweep needs at least 100 samples per dimension".into(),
        ));
    }
    let mu = Mu::new(mu)?;
    let dims_vec: Vec<usize> = dims.to_vec();
    let outputs: Vec<Result<[VarianceRow; 2]>> = run_jobs(workers, dims_vec, |dx| {
        let gen_sid = derive_stream_id(&[master_seed, ROLE_GENERATE, dx as u64]);
        let mut gen_rng = RngStream::new(master_seed, gen_sid);
        let instance = security::generate_security_instance(&mut gen_rng, dx)?;
        let oracle = SecurityOracle::new(&instance);
        let leader = DefenderObjective { instance: &instance };
        let x0 = security::initial_defense(&instance);
        let probe_sid = derive_stream_id(&[master_seed, ROLE_PROBE, dx as u64]);
        let row = |kind: EstimatorKind| -> Result<VarianceRow> {
            // identical stream for both estimators: paired directions
            let mut rng = RngStream::new(master_seed, probe_sid);
            let stats =
                second_moment_probe(kind, &leader, &oracle, &x0, mu, samples_per_dim, &mut rng)?;
            Ok(VarianceRow {
                dx,
                estimator: kind,
                mean_sq_norm: stats.mean_sq_norm,
                stderr: stats.stderr,
                n_samples: stats.n_samples,
            })
        };
        Ok([row(EstimatorKind::Pzos)?, row(EstimatorKind::Zos)?])
    });
    let mut rows = Vec::new();
    for out in outputs {
        let [a, b] = out?;
        rows.push(a);
        rows.push(b);
    }
    Ok(rows)
}

/// Batch-size sweep: a paired suite over algorithm/batch combinations; the
/// result carries both iteration-indexed and oracle-call-indexed views
/// (the latter via `instance_values_at_call_budget` and the calls-keyed
/// aggregate files).
pub fn batch_sweep(spec: &ExperimentSpec) -> Result<SuiteResult> {
    run_paired_suite(spec)
}

/// One paired suite per smoothing radius; instances and direction streams
/// are shared across the grid.
pub fn mu_sensitivity(spec: &ExperimentSpec) -> Result<Vec<(f64, SuiteResult)>> {
    let grid = spec
        .mu_grid
        .clone()
        .unwrap_or_else(|| vec![0.1, 0.5, 0.9, 2.0]);
    if grid.is_empty() {
        return Err(Error::InvalidConfig("mu grid must be nonempty".into()));
    }
    grid.into_iter()
        .map(|mu| {
            let mut sub = spec.clone();
            sub.mu_grid = None;
            sub.run.mu = Some(mu);
            Ok((mu, run_paired_suite(&sub)?))
        })
        .collect()
}

/// Per-dimension snapshot table over security games with min/max bands.
#[derive(Debug, Clone, Copy)]
pub struct DimensionProfileRow {
    pub n: usize,
    pub algorithm: Algorithm,
    pub q: usize,
    pub snapshot: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub n_instances: usize,
}

pub fn dimension_profile(
    spec: &ExperimentSpec,
    dims: &[usize],
    instances_per_dim: usize,
) -> Result<Vec<DimensionProfileRow>> {
    if dims.is_empty() || instances_per_dim == 0 {
        return Err(Error::InvalidConfig("empty dimension profile".into()));
    }
    let mut rows = Vec::new();
    for &n in dims {
        let mut sub = spec.clone();
        sub.suite = Suite::Security;
        sub.instance_count = instances_per_dim;
        sub.instance_params.targets = (n, n);
        // distinct seeds per bucket keep instances independent across dims
        sub.master_seed = derive_stream_id(&[spec.master_seed, n as u64]);
        let result = run_paired_suite(&sub)?;
        for &algo in &sub.algorithms {
            for &snapshot in &spec.snapshots {
                let values = result.instance_values(algo.algorithm, algo.q, snapshot);
                if values.is_empty() {
                    continue;
                }
                rows.push(DimensionProfileRow {
                    n,
                    algorithm: algo.algorithm,
                    q: algo.q,
                    snapshot,
                    median: percentile(&values, 0.5),
                    min: values.iter().cloned().fold(f64::INFINITY, f64::min),
                    max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    n_instances: values.len(),
                });
            }
        }
    }
    Ok(rows)
}

/// Identical protocol with the nonnegativity projection enabled for every
/// algorithm; only meaningful for the routing suite.
pub fn constrained_routing_suite(spec: &ExperimentSpec) -> Result<SuiteResult> {
    if spec.suite != Suite::Routing {
        return Err(Error::InvalidConfig(
            "constrained suite is defined for the routing family".into(),
        ));
    }
    let mut sub = spec.clone();
    sub.run.project_nonnegative = true;
    run_paired_suite(&sub)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// A tiny deterministic suite used by persistence tests.
    pub(crate) fn small_suite_result() -> SuiteResult {
        let spec = ExperimentSpec {
            suite: Suite::Routing,
            instance_count: 2,
            master_seed: 7,
            workers: 1,
            snapshots: vec![2, 5],
            mu_grid: None,
            algorithms: vec![
                AlgorithmSpec {
                    algorithm: Algorithm::Pzos,
                    q: 1,
                },
                AlgorithmSpec {
                    algorithm: Algorithm::Zos,
                    q: 1,
                },
            ],
            run: RunTemplate {
                iterations: Some(5),
                mu: Some(0.5),
                project_nonnegative: false,
                step: StepSpec::SuiteDefault,
            },
            instance_params: InstanceParams {
                vertices: (5, 7),
                edges: (8, 12),
                commodities: (2, 2),
                targets: (2, 5),
            },
            instances_dir: None,
        };
        run_paired_suite(&spec).expect("small suite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_routing_spec() -> ExperimentSpec {
        ExperimentSpec {
            suite: Suite::Routing,
            instance_count: 3,
            master_seed: 11,
            workers: 0,
            snapshots: vec![5, 10],
            mu_grid: None,
            algorithms: vec![
                AlgorithmSpec {
                    algorithm: Algorithm::Pzos,
                    q: 1,
                },
                AlgorithmSpec {
                    algorithm: Algorithm::Zos,
                    q: 1,
                },
            ],
            run: RunTemplate {
                iterations: Some(10),
                mu: Some(0.5),
                project_nonnegative: false,
                step: StepSpec::SuiteDefault,
            },
            instance_params: InstanceParams {
                vertices: (5, 8),
                edges: (8, 14),
                commodities: (2, 3),
                targets: (2, 10),
            },
            instances_dir: None,
        }
    }

    #[test]
    fn percentile_interpolates_and_stays_monotone() {
        let values = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&values, 0.0), 1.0);
        assert_eq!(percentile(&values, 1.0), 4.0);
        assert_eq!(percentile(&values, 0.5), 2.5);
        let ps = [0.1, 0.25, 0.5, 0.75, 0.9];
        let got: Vec<f64> = ps.iter().map(|&p| percentile(&values, p)).collect();
        assert!(got.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn spec_toml_round_trip_rejects_unknown_keys() {
        let spec = small_routing_spec();
        let text = spec.to_toml_string().unwrap();
        let back = ExperimentSpec::from_toml_str(&text).unwrap();
        assert_eq!(spec, back);
        let bad = format!("{text}\nnot_a_field = true\n");
        assert!(ExperimentSpec::from_toml_str(&bad).is_err());
    }

    #[test]
    fn paired_suite_shares_noise_and_normalizes_jointly() {
        let spec = small_routing_spec();
        let result = run_paired_suite(&spec).unwrap();
        assert_eq!(result.records.len(), 3);
        assert!(result.exclusions.is_empty());
        for rec in &result.records {
            assert_eq!(rec.runs.len(), 2);
            // identical direction streams across paired algorithms
            assert_eq!(
                rec.runs[0].trajectory.direction_hash,
                rec.runs[1].trajectory.direction_hash
            );
            // joint normalization attains both 0 and 1 across the pair
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for run in &rec.runs {
                for &v in &run.normalized {
                    assert!((-1e-12..=1.0 + 1e-12).contains(&v));
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
        // aggregate percentile ordering
        for row in &result.aggregates {
            assert!(row.p10 <= row.p25 && row.p25 <= row.p50);
            assert!(row.p50 <= row.p75 && row.p75 <= row.p90);
            assert_eq!(row.n_instances, 3);
        }
    }

    #[test]
    fn suite_is_deterministic_across_worker_counts() {
        let mut spec = small_routing_spec();
        let a = run_paired_suite(&spec).unwrap();
        spec.workers = 1;
        let b = run_paired_suite(&spec).unwrap();
        spec.workers = 2;
        let c = run_paired_suite(&spec).unwrap();
        for (x, y) in a.aggregates.iter().zip(&b.aggregates) {
            assert_eq!(x, y);
        }
        for (x, y) in a.aggregates.iter().zip(&c.aggregates) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn batch_q1_equals_unbatched_trajectory() {
        // algebraic identity: averaging one sample is that sample, so the
        // Q=1 batch path must reproduce itself exactly under a shared stream
        let mut spec = small_routing_spec();
        spec.algorithms = vec![AlgorithmSpec {
            algorithm: Algorithm::Zos,
            q: 1,
        }];
        let a = run_paired_suite(&spec).unwrap();
        let b = run_paired_suite(&spec).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(
                ra.runs[0].trajectory.iterates,
                rb.runs[0].trajectory.iterates
            );
        }
    }

    #[test]
    fn single_mu_grid_degenerates_to_paired_suite() {
        let mut spec = small_routing_spec();
        spec.mu_grid = Some(vec![0.5]);
        let sweep = mu_sensitivity(&spec).unwrap();
        assert_eq!(sweep.len(), 1);
        let direct = run_paired_suite(&{
            let mut s = spec.clone();
            s.mu_grid = None;
            s.run.mu = Some(0.5);
            s
        })
        .unwrap();
        for (a, b) in sweep[0].1.aggregates.iter().zip(&direct.aggregates) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn variance_sweep_rejects_small_samples() {
        assert!(variance_sweep(&[2], 50, 1, 0, 0.1).is_err());
    }

    #[test]
    fn variance_sweep_small_dims_nonnegative() {
        let rows = variance_sweep(&[2], 150, 7, 0, 0.1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.mean_sq_norm >= 0.0));
        assert!(rows.iter().all(|r| r.n_samples == 150));
    }

    #[test]
    fn constrained_suite_keeps_iterates_nonnegative() {
        let mut spec = small_routing_spec();
        spec.instance_count = 2;
        let result = constrained_routing_suite(&spec).unwrap();
        for rec in &result.records {
            for run in &rec.runs {
                for x in &run.trajectory.iterates {
                    assert!(x.iter().all(|&c| c >= 0.0));
                }
            }
        }
        // security suite rejected
        let mut sec = spec.clone();
        sec.suite = Suite::Security;
        assert!(constrained_routing_suite(&sec).is_err());
    }

    #[test]
    fn exclusion_accounting_is_complete() {
        let spec = small_routing_spec();
        let result = run_paired_suite(&spec).unwrap();
        assert_eq!(
            result.records.len() + result.exclusions.len(),
            spec.instance_count
        );
    }
}
