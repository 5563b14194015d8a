//! Batch experiments: replications across calling probabilities, policies and
//! search budgets, with per-replication CSV, summary statistics and plot series.
//!
//! Each replication owns named seed streams, so the scenario for a given
//! replication is the same for every policy, budget and calling probability;
//! only the delivered calls thin out as the calling probability drops.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::grid::GridTopology;
use crate::mcts::SearchConfig;
use crate::policies::{run_policy, EpisodeLog, Policy, PolicyError};
use crate::scenario::{generate_scenario, storm_priors, ScenarioError, ScenarioSample, StormSpec};
use crate::seeds::{self, Stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("experiment needs at least one replication")]
    NoReplications,
    #[error("calling probability {0} outside [0, 1]")]
    Rho(f64),
    #[error("experiment has no {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("replication {replication}, rho {rho}, {policy}: {source}")]
    Policy {
        replication: usize,
        rho: f64,
        policy: Policy,
        source: PolicyError,
    },
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("writing {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// Storm used when none is given: a straight track across the service area.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomStorm {
    pub severity: (f64, f64),
    /// Diameter as a fraction of the road network's bounding-box diagonal.
    pub diameter_fraction: f64,
}

impl Default for RandomStorm {
    fn default() -> Self {
        Self {
            severity: (0.6, 1.0),
            diameter_fraction: 0.17,
        }
    }
}

impl RandomStorm {
    pub fn draw<R: Rng>(&self, topology: &GridTopology, rng: &mut R) -> StormSpec {
        let n = topology.road_nodes().len();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let (x, y) = topology.road_position(i);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let diagonal = (x1 - x0).hypot(y1 - y0).max(1.0);
        let severity = rng.gen_range(self.severity.0..=self.severity.1);
        StormSpec::random_track(topology, severity, self.diameter_fraction * diagonal, rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Fixed storm for every replication; `None` draws one per replication.
    pub storm: Option<StormSpec>,
    #[serde(default)]
    pub random_storm: RandomStorm,
    /// Frozen scenarios, used in place of generated ones (cycled by replication).
    #[serde(default)]
    pub scenarios: Vec<ScenarioSample>,
    pub policies: Vec<Policy>,
    pub rhos: Vec<f64>,
    pub budgets: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub search: SearchConfig,
    /// Record decision wall-time (makes `decision_ms_mean` non-deterministic).
    #[serde(default)]
    pub timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            storm: None,
            random_storm: RandomStorm::default(),
            scenarios: Vec::new(),
            policies: Policy::ALL.to_vec(),
            rhos: vec![0.01, 0.1, 1.0],
            budgets: vec![250, 500, 1000, 2000, 4000, 8000],
            replications: 20,
            seed: 0,
            sim: SimConfig::default(),
            search: SearchConfig::default(),
            timing: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replications == 0 {
            return Err(HarnessError::NoReplications);
        }
        if let Some(&r) = self.rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(HarnessError::Rho(r));
        }
        if self.rhos.is_empty() {
            return Err(HarnessError::Empty("calling probabilities"));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::Empty("policies"));
        }
        if self.budgets.is_empty() && self.policies.iter().any(|p| p.uses_budget()) {
            return Err(HarnessError::Empty("budgets"));
        }
        Ok(())
    }
}

/// One episode's outcome, as written to the per-replication CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub policy: Policy,
    pub rho: f64,
    /// Search budget; 0 for policies that do not search.
    pub budget: usize,
    pub outage_hours: f64,
    pub restore_h: f64,
    pub stop_h: f64,
    pub unrepaired: usize,
    pub decision_ms_mean: Option<f64>,
    pub customers_out: u64,
}

impl ReplicationRow {
    pub fn from_log(replication: usize, rho: f64, budget: usize, log: &EpisodeLog, timing: bool) -> Self {
        Self {
            replication,
            policy: log.policy,
            rho,
            budget,
            outage_hours: log.outage_minutes / 60.0,
            restore_h: log.restore_minute / 60.0,
            stop_h: log.stop_minute / 60.0,
            unrepaired: log.unrepaired_faults,
            decision_ms_mean: if timing { log.mean_decision_ms() } else { None },
            customers_out: log.customers_out_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub policy: Policy,
    pub rho: f64,
    pub budget: usize,
    pub replications: usize,
    pub outage_hours: MeanStd,
    pub restore_hours: MeanStd,
    pub stop_hours: MeanStd,
    pub unrepaired: MeanStd,
    pub customers_out: MeanStd,
    pub decision_ms_mean: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentResult {
    pub replications: Vec<ReplicationRow>,
    pub stats: Vec<StatRow>,
}

impl ExperimentResult {
    pub fn stat(&self, policy: Policy, rho: f64, budget: usize) -> Option<&StatRow> {
        self.stats
            .iter()
            .find(|s| s.policy == policy && s.rho == rho && s.budget == budget)
    }

    pub fn rows(&self, policy: Policy, rho: f64, budget: usize) -> impl Iterator<Item = &ReplicationRow> {
        self.replications
            .iter()
            .filter(move |r| r.policy == policy && r.rho == rho && r.budget == budget)
    }
}

/// Priors for one replication: the fixed storm, or a fresh random one.
pub fn replication_priors(spec: &ExperimentSpec, topology: &GridTopology, replication: usize) -> Result<Vec<f64>, ScenarioError> {
    let storm = match &spec.storm {
        Some(s) => s.clone(),
        None => {
            let mut rng = seeds::rng(seeds::derive_seed(spec.seed, replication as u64, Stream::Storm));
            spec.random_storm.draw(topology, &mut rng)
        }
    };
    storm_priors(topology, &storm, spec.sim.p_max)
}

/// Scenario for `(replication, rho)`; frozen scenarios take precedence.
pub fn replication_scenario(
    spec: &ExperimentSpec,
    topology: &GridTopology,
    replication: usize,
    rho: f64,
) -> Result<ScenarioSample, ScenarioError> {
    if !spec.scenarios.is_empty() {
        let s = spec.scenarios[replication % spec.scenarios.len()].clone();
        s.validate(topology)?;
        return Ok(s);
    }
    let priors = replication_priors(spec, topology, replication)?;
    generate_scenario(topology, priors, rho, &spec.sim, spec.seed, replication as u64)
}

struct Job {
    rho_index: usize,
    replication: usize,
    policy: Policy,
    budget: usize,
}

pub fn run_experiment(spec: &ExperimentSpec, topology: &GridTopology) -> Result<ExperimentResult, HarnessError> {
    spec.validate()?;
    let mut policies = spec.policies.clone();
    policies.sort();
    policies.dedup();
    let mut budgets = spec.budgets.clone();
    budgets.sort_unstable();
    budgets.dedup();

    let keys: Vec<(usize, usize)> = (0..spec.rhos.len())
        .flat_map(|r| (0..spec.replications).map(move |k| (r, k)))
        .collect();
    let scenarios: Vec<ScenarioSample> = keys
        .par_iter()
        .map(|&(r, k)| replication_scenario(spec, topology, k, spec.rhos[r]))
        .collect::<Result<_, _>>()?;

    let mut jobs = Vec::new();
    for &(rho_index, replication) in &keys {
        for &policy in &policies {
            let bs: Vec<usize> = if policy.uses_budget() { budgets.clone() } else { vec![0] };
            for budget in bs {
                jobs.push(Job {
                    rho_index,
                    replication,
                    policy,
                    budget,
                });
            }
        }
    }
    // longest jobs first keeps the pool busy
    jobs.sort_by_key(|j| std::cmp::Reverse(j.budget));

    let rows: Vec<ReplicationRow> = jobs
        .par_iter()
        .map(|j| {
            let scenario = &scenarios[j.rho_index * spec.replications + j.replication];
            let rho = spec.rhos[j.rho_index];
            let search = SearchConfig {
                budget: j.budget,
                seed: seeds::derive_seed(spec.seed, j.replication as u64, Stream::Mcts),
                ..spec.search.clone()
            };
            let log = run_policy(j.policy, topology, scenario, &spec.sim, &search).map_err(|source| HarnessError::Policy {
                replication: j.replication,
                rho,
                policy: j.policy,
                source,
            })?;
            Ok(ReplicationRow::from_log(j.replication, rho, j.budget, &log, spec.timing))
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut rows = rows;
    rows.sort_by(|a, b| {
        a.rho
            .total_cmp(&b.rho)
            .then(a.policy.cmp(&b.policy))
            .then(a.budget.cmp(&b.budget))
            .then(a.replication.cmp(&b.replication))
    });
    let stats = aggregate(&rows);
    Ok(ExperimentResult {
        replications: rows,
        stats,
    })
}

/// Groups rows by `(rho, policy, budget)`; input must be sorted that way.
pub fn aggregate(rows: &[ReplicationRow]) -> Vec<StatRow> {
    let mut out = Vec::new();
    for group in rows.chunk_by(|a, b| a.rho == b.rho && a.policy == b.policy && a.budget == b.budget) {
        let first = &group[0];
        let times: Vec<f64> = group.iter().filter_map(|r| r.decision_ms_mean).collect();
        out.push(StatRow {
            policy: first.policy,
            rho: first.rho,
            budget: first.budget,
            replications: group.len(),
            outage_hours: MeanStd::of(group.iter().map(|r| r.outage_hours)),
            restore_hours: MeanStd::of(group.iter().map(|r| r.restore_h)),
            stop_hours: MeanStd::of(group.iter().map(|r| r.stop_h)),
            unrepaired: MeanStd::of(group.iter().map(|r| r.unrepaired as f64)),
            customers_out: MeanStd::of(group.iter().map(|r| r.customers_out as f64)),
            decision_ms_mean: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        });
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, HarnessError> {
    csv::Writer::from_path(path).map_err(|source| HarnessError::Csv {
        path: path.display().to_string(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

const REPLICATION_HEADER: [&str; 10] = [
    "replication",
    "policy",
    "rho",
    "budget",
    "outage_hours",
    "restore_h",
    "stop_h",
    "unrepaired",
    "decision_ms_mean",
    "customers_out",
];

pub fn write_replications(path: &Path, rows: &[ReplicationRow]) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    w.write_record(REPLICATION_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.replication.to_string(),
            r.policy.to_string(),
            r.rho.to_string(),
            r.budget.to_string(),
            r.outage_hours.to_string(),
            r.restore_h.to_string(),
            r.stop_h.to_string(),
            r.unrepaired.to_string(),
            r.decision_ms_mean.map(|x| x.to_string()).unwrap_or_default(),
            r.customers_out.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_replications(path: &Path) -> Result<Vec<ReplicationRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let num = |i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
        rows.push(ReplicationRow {
            replication: rec[0].parse().unwrap_or(0),
            policy: rec[1].parse().unwrap_or(Policy::Lookahead),
            rho: num(2),
            budget: rec[3].parse().unwrap_or(0),
            outage_hours: num(4),
            restore_h: num(5),
            stop_h: num(6),
            unrepaired: rec[7].parse().unwrap_or(0),
            decision_ms_mean: rec[8].parse().ok(),
            customers_out: rec[9].parse().unwrap_or(0),
        });
    }
    Ok(rows)
}

pub fn write_stats(path: &Path, stats: &[StatRow]) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "policy",
        "rho",
        "budget",
        "replications",
        "outage_hours_mean",
        "outage_hours_std",
        "restore_h_mean",
        "restore_h_std",
        "stop_h_mean",
        "stop_h_std",
        "unrepaired_mean",
        "unrepaired_std",
        "customers_out_mean",
        "customers_out_std",
        "decision_ms_mean",
    ])
    .map_err(csv_err(path))?;
    for s in stats {
        let mut rec = vec![s.policy.to_string(), s.rho.to_string(), s.budget.to_string(), s.replications.to_string()];
        for m in [s.outage_hours, s.restore_hours, s.stop_hours, s.unrepaired, s.customers_out] {
            rec.push(m.mean.to_string());
            rec.push(m.std.to_string());
        }
        rec.push(s.decision_ms_mean.map(|x| x.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes one `series_<policy>_rho<rho>.csv` per (policy, rho) with budget
/// against mean outage-hours, plus `decision_time.csv` when timings exist.
pub fn emit_plot_series(stats: &[StatRow], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut keys: Vec<(Policy, f64)> = stats.iter().map(|s| (s.policy, s.rho)).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    let mut written = Vec::new();
    for (policy, rho) in keys {
        let mut rows: Vec<&StatRow> = stats.iter().filter(|s| s.policy == policy && s.rho == rho).collect();
        rows.sort_by_key(|s| s.budget);
        let path = dir.join(format!("series_{}_rho{}.csv", policy, rho));
        let mut w = csv_writer(&path)?;
        w.write_record(["budget", "outage_hours_mean", "outage_hours_std"]).map_err(csv_err(&path))?;
        for s in rows {
            w.write_record([s.budget.to_string(), s.outage_hours.mean.to_string(), s.outage_hours.std.to_string()])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    let mut timed: Vec<&StatRow> = stats.iter().filter(|s| s.decision_ms_mean.is_some()).collect();
    if !timed.is_empty() {
        timed.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.rho.total_cmp(&b.rho)).then(a.budget.cmp(&b.budget)));
        let path = dir.join("decision_time.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["policy", "rho", "budget", "decision_ms_mean"]).map_err(csv_err(&path))?;
        for s in timed {
            w.write_record([
                s.policy.to_string(),
                s.rho.to_string(),
                s.budget.to_string(),
                s.decision_ms_mean.unwrap_or_default().to_string(),
            ])
            .map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `replications.csv`, `stats.csv` and the plot series into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let reps = dir.join("replications.csv");
    write_replications(&reps, &result.replications)?;
    let stats = dir.join("stats.csv");
    write_stats(&stats, &result.stats)?;
    let mut files = vec![reps, stats];
    files.extend(emit_plot_series(&result.stats, dir)?);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_topology;
    use crate::synth::{synth_grid, SynthParams};

    fn small_grid() -> GridTopology {
        let p = SynthParams {
            circuits: 3,
            min_segments: 3,
            max_segments: 4,
            lattice: 6,
            ..SynthParams::default()
        };
        build_topology(&synth_grid(&p, 1)).unwrap()
    }

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            policies: vec![Policy::Escalation],
            rhos: vec![1.0],
            budgets: vec![100],
            replications: 1,
            seed: 5,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn one_replication_one_row() {
        let g = small_grid();
        let r = run_experiment(&small_spec(), &g).unwrap();
        assert_eq!(r.replications.len(), 1);
        assert_eq!(r.stats.len(), 1);
        assert_eq!(r.stats[0].outage_hours.std, 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let g = small_grid();
        let spec = ExperimentSpec {
            replications: 0,
            ..small_spec()
        };
        assert!(matches!(run_experiment(&spec, &g), Err(HarnessError::NoReplications)));
        let spec = ExperimentSpec {
            rhos: vec![1.5],
            ..small_spec()
        };
        assert!(matches!(run_experiment(&spec, &g), Err(HarnessError::Rho(_))));
    }

    #[test]
    fn mean_std_by_hand() {
        let m = MeanStd::of([2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m.mean, 5.0);
        assert!((m.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(MeanStd::of([3.0]).std, 0.0);
    }

    fn stat(budget: usize, mean: f64) -> StatRow {
        StatRow {
            policy: Policy::Lookahead,
            rho: 0.1,
            budget,
            replications: 1,
            outage_hours: MeanStd { mean, std: 0.0 },
            restore_hours: MeanStd { mean: 0.0, std: 0.0 },
            stop_hours: MeanStd { mean: 0.0, std: 0.0 },
            unrepaired: MeanStd { mean: 0.0, std: 0.0 },
            customers_out: MeanStd { mean: 0.0, std: 0.0 },
            decision_ms_mean: None,
        }
    }

    #[test]
    fn series_sorted_by_budget() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_series(&[stat(4000, 2.0), stat(250, 3.0), stat(1000, 2.5)], dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let budgets: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(budgets, ["250", "1000", "4000"]);
        let single = emit_plot_series(&[stat(500, 1.5)], dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&single[0]).unwrap().lines().count(), 2);
    }
}
