//! Persistence: instance documents, trajectory / aggregate / variance CSV
//! files, and the per-suite summary document.
//!
//! CSV floats use the shortest round-trip representation, so identical
//! results produce byte-identical files. The summary carries wall-clock
//! time and is the one artifact excluded from the byte-identity contract.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{
    DimensionProfileRow, Exclusion, ExperimentSpec, GameInstance, SuiteResult, VarianceRow,
};
use crate::routing::RoutingInstance;
use crate::security::SecurityInstance;

/// Self-describing instance document, either game family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InstanceDoc {
    Routing(RoutingInstance),
    Security(SecurityInstance),
}

impl From<GameInstance> for InstanceDoc {
    fn from(value: GameInstance) -> Self {
        match value {
            GameInstance::Routing(i) => InstanceDoc::Routing(i),
            GameInstance::Security(i) => InstanceDoc::Security(i),
        }
    }
}

impl From<InstanceDoc> for GameInstance {
    fn from(value: InstanceDoc) -> Self {
        match value {
            InstanceDoc::Routing(i) => GameInstance::Routing(i),
            InstanceDoc::Security(i) => GameInstance::Security(i),
        }
    }
}

pub fn write_instance(path: &Path, instance: &InstanceDoc) -> Result<()> {
    let text = toml::to_string(instance).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<GameInstance> {
    let text = std::fs::read_to_string(path)?;
    let doc: InstanceDoc = toml::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    match &doc {
        InstanceDoc::Routing(i) => i.validate()?,
        InstanceDoc::Security(i) => i.validate()?,
    }
    Ok(doc.into())
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub const TRAJECTORY_HEADER: &str = "instance_id,algorithm,q,t,oracle_calls_cum,objective_raw,objective_normalized,grad_norm,step_size,projected_flag";

/// One row per iterate per run. The terminal iterate has no gradient, step,
/// or projection entry; those fields stay empty.
pub fn write_trajectories_csv(path: &Path, result: &SuiteResult) -> Result<()> {
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for rec in &result.records {
        for run in &rec.runs {
            let traj = &run.trajectory;
            let horizon = traj.completed_iterations();
            for t in 0..=horizon {
                let (grad, step, proj) = if t < horizon {
                    (
                        fmt_f64(traj.gradient_norms[t]),
                        fmt_f64(traj.step_sizes[t]),
                        if traj.projected[t] { "1" } else { "0" }.to_string(),
                    )
                } else {
                    (String::new(), String::new(), String::new())
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    rec.instance_id,
                    run.key.algorithm,
                    run.key.q,
                    t,
                    traj.oracle_calls_cumulative[t],
                    fmt_f64(traj.objective_values[t]),
                    fmt_f64(run.normalized[t]),
                    grad,
                    step,
                    proj
                )
                .expect("write to string");
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub instance_id: String,
    pub algorithm: String,
    pub q: usize,
    pub t: usize,
    pub oracle_calls_cum: u64,
    pub objective_raw: f64,
    pub objective_normalized: f64,
}

pub fn read_trajectories_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRAJECTORY_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "unexpected trajectory header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Parse(format!("trajectory line {k}: bad arity")));
        }
        let parse_f =
            |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {k}: {e}")));
        rows.push(TrajectoryRow {
            instance_id: fields[0].to_string(),
            algorithm: fields[1].to_string(),
            q: fields[2].parse().map_err(|e| Error::Parse(format!("line {k}: {e}")))?,
            t: fields[3].parse().map_err(|e| Error::Parse(format!("line {k}: {e}")))?,
            oracle_calls_cum: fields[4]
                .parse()
                .map_err(|e| Error::Parse(format!("line {k}: {e}")))?,
            objective_raw: parse_f(fields[5])?,
            objective_normalized: parse_f(fields[6])?,
        });
    }
    Ok(rows)
}

pub const AGGREGATE_HEADER: &str = "t,p10,p25,p50,p75,p90,n_instances";

/// One aggregate file per compared configuration, keyed by iteration.
pub fn write_aggregate_csvs(dir: &Path, result: &SuiteResult) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &algo in &result.spec.algorithms {
        let path = dir.join(format!("aggregate_{}_q{}.csv", algo.algorithm, algo.q));
        let mut out = String::new();
        out.push_str(AGGREGATE_HEADER);
        out.push('\n');
        for row in result
            .aggregates
            .iter()
            .filter(|r| r.algorithm == algo.algorithm && r.q == algo.q)
        {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.t,
                fmt_f64(row.p10),
                fmt_f64(row.p25),
                fmt_f64(row.p50),
                fmt_f64(row.p75),
                fmt_f64(row.p90),
                row.n_instances
            )
            .expect("write to string");
        }
        std::fs::write(&path, out)?;
        written.push(path);
    }
    Ok(written)
}

/// Oracle-call-aligned twin of the aggregate files: the same percentile
/// rows, keyed by cumulative algorithmic calls instead of iteration.
pub fn write_calls_aggregate_csvs(dir: &Path, result: &SuiteResult) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &algo in &result.spec.algorithms {
        let per_iter = algo.algorithm.calls_per_iteration(algo.q);
        let path = dir.join(format!(
            "aggregate_calls_{}_q{}.csv",
            algo.algorithm, algo.q
        ));
        let mut out = String::new();
        out.push_str("oracle_calls,p10,p25,p50,p75,p90,n_instances\n");
        for row in result
            .aggregates
            .iter()
            .filter(|r| r.algorithm == algo.algorithm && r.q == algo.q)
        {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                per_iter * row.t as u64,
                fmt_f64(row.p10),
                fmt_f64(row.p25),
                fmt_f64(row.p50),
                fmt_f64(row.p75),
                fmt_f64(row.p90),
                row.n_instances
            )
            .expect("write to string");
        }
        std::fs::write(&path, out)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_snapshots_csv(path: &Path, result: &SuiteResult) -> Result<()> {
    let mut out = String::new();
    out.push_str("instance_id,dimension,algorithm,q,t,objective_normalized\n");
    for rec in &result.records {
        for run in &rec.runs {
            for &t in &result.spec.snapshots {
                if let Some(v) = run.normalized.get(t) {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        rec.instance_id,
                        rec.dimension,
                        run.key.algorithm,
                        run.key.q,
                        t,
                        fmt_f64(*v)
                    )
                    .expect("write to string");
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_variance_csv(path: &Path, rows: &[VarianceRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("dx,estimator,mean_sq_norm,stderr,n_samples\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.dx,
            r.estimator,
            fmt_f64(r.mean_sq_norm),
            fmt_f64(r.stderr),
            r.n_samples
        )
        .expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_dimension_profile_csv(path: &Path, rows: &[DimensionProfileRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("n,algorithm,q,snapshot_t,median,min,max,n_instances\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.algorithm,
            r.q,
            r.snapshot,
            fmt_f64(r.median),
            fmt_f64(r.min),
            fmt_f64(r.max),
            r.n_instances
        )
        .expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// SHA-256 content hash, hex encoded.
pub fn content_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").expect("write to string");
    }
    hex
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub suite: String,
    /// SHA-256 of the canonical serialized spec.
    pub spec_hash: String,
    pub wall_clock_seconds: f64,
    pub instance_count: usize,
    pub included: usize,
    pub excluded: usize,
    /// Normalization extremes are always taken over exactly the compared
    /// algorithm set echoed below.
    pub compared: Vec<String>,
    pub exclusions: Vec<Exclusion>,
    pub spec_echo: ExperimentSpec,
}

pub fn write_summary(path: &Path, result: &SuiteResult, wall_clock_seconds: f64) -> Result<()> {
    let spec_text = result.spec.to_toml_string()?;
    let summary = Summary {
        suite: result.spec.suite.to_string(),
        spec_hash: content_hash(&spec_text),
        wall_clock_seconds,
        instance_count: result.spec.instance_count,
        included: result.records.len(),
        excluded: result.exclusions.len(),
        compared: result
            .spec
            .algorithms
            .iter()
            .map(|a| format!("{}_q{}", a.algorithm, a.q))
            .collect(),
        exclusions: result.exclusions.clone(),
        spec_echo: result.spec.clone(),
    };
    let text = toml::to_string(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Write the full artifact set for a suite into `dir`.
pub fn write_suite_outputs(dir: &Path, result: &SuiteResult, wall_clock_seconds: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trajectories_csv(&dir.join("trajectories.csv"), result)?;
    write_aggregate_csvs(dir, result)?;
    write_calls_aggregate_csvs(dir, result)?;
    if !result.spec.snapshots.is_empty() {
        write_snapshots_csv(&dir.join("snapshots.csv"), result)?;
    }
    write_summary(&dir.join("summary.toml"), result, wall_clock_seconds)?;
    Ok(())
}

/// Recompute aggregate percentiles from the persisted per-instance rows and
/// compare them with the persisted aggregate files.
pub fn verify_persisted_aggregates(dir: &Path) -> Result<()> {
    use std::collections::BTreeMap;
    let rows = read_trajectories_csv(&dir.join("trajectories.csv"))?;
    let mut grouped: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for row in &rows {
        grouped
            .entry((row.algorithm.clone(), row.q, row.t))
            .or_default()
            .push(row.objective_normalized);
    }
    let mut keys: Vec<(String, usize)> = grouped
        .keys()
        .map(|(a, q, _)| (a.clone(), *q))
        .collect();
    keys.dedup();
    for (algorithm, q) in keys {
        let path = dir.join(format!("aggregate_{algorithm}_q{q}.csv"));
        let text = std::fs::read_to_string(&path)?;
        for (k, line) in text.lines().skip(1).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Parse(format!("aggregate line {k}: bad arity")));
            }
            let t: usize = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("aggregate line {k}: {e}")))?;
            let values = grouped
                .get(&(algorithm.clone(), q, t))
                .ok_or_else(|| Error::Parse(format!("no trajectory rows for t = {t}")))?;
            let expect = [
                crate::harness::percentile(values, 0.10),
                crate::harness::percentile(values, 0.25),
                crate::harness::percentile(values, 0.50),
                crate::harness::percentile(values, 0.75),
                crate::harness::percentile(values, 0.90),
            ];
            for (i, want) in expect.iter().enumerate() {
                let got: f64 = fields[1 + i]
                    .parse()
                    .map_err(|e| Error::Parse(format!("aggregate line {k}: {e}")))?;
                if (got - want).abs() > 1e-12 {
                    return Err(Error::Parse(format!(
                        "aggregate mismatch for {algorithm} q{q} t{t}: {got} vs {want}"
                    )));
                }
            }
        }
    }
    Ok(())
}
