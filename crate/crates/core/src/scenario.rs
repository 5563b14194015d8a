//! Storm priors and the exogenous process: true faults, trouble calls and
//! repair times.
//!
//! Every outage starts at minute 0. Each customer without power draws once
//! whether it will call and when, so the same latent draws serve every calling
//! probability and every policy. Whether a drawn call is actually delivered
//! depends on the repair history of the policy being simulated.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::grid::{GridTopology, SegmentId};
use crate::seeds::{self, Stream};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("storm severity must lie in (0, 1], got {0}")]
    Severity(f64),
    #[error("storm diameter must be positive, got {0}")]
    Diameter(f64),
    #[error("storm center path is empty")]
    EmptyPath,
    #[error("calling probability must lie in [0, 1], got {0}")]
    Rho(f64),
    #[error("repair distribution is empty")]
    EmptyRepair,
    #[error("repair probabilities sum to {0}, expected 1")]
    RepairMass(f64),
    #[error("repair outcome has non-positive duration {0}")]
    RepairDuration(f64),
    #[error("scenario references segment {0} outside the grid")]
    UnknownSegment(SegmentId),
    #[error("scenario schema {0} unsupported")]
    Schema(u32),
    #[error("scenario has {got} priors for a grid of {expected} segments")]
    PriorCount { got: usize, expected: usize },
    #[error("scenario file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StormSpec {
    /// Polyline in road coordinates traced by the storm center.
    pub center_path: Vec<(f64, f64)>,
    pub severity: f64,
    pub diameter: f64,
    #[serde(default)]
    pub seed: u64,
}

impl StormSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.severity > 0.0 && self.severity <= 1.0) {
            return Err(ScenarioError::Severity(self.severity));
        }
        if !(self.diameter > 0.0) {
            return Err(ScenarioError::Diameter(self.diameter));
        }
        if self.center_path.is_empty() {
            return Err(ScenarioError::EmptyPath);
        }
        Ok(())
    }

    /// Distance from `p` to the center polyline.
    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        if self.center_path.len() == 1 {
            let c = self.center_path[0];
            return (p.0 - c.0).hypot(p.1 - c.1);
        }
        self.center_path
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// A straight storm track crossing the bounding box of the road network.
    pub fn random_track<R: Rng>(topology: &GridTopology, severity: f64, diameter: f64, rng: &mut R) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..topology.road_nodes().len() {
            let (x, y) = topology.road_position(i);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let a = (rng.gen_range(x0..=x1), rng.gen_range(y0..=y1));
        let b = (rng.gen_range(x0..=x1), rng.gen_range(y0..=y1));
        Self {
            center_path: vec![a, b],
            severity,
            diameter,
            seed: rng.gen(),
        }
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - qx).hypot(p.1 - qy)
}

/// Per-segment fault prior `severity * max(0, 1 - dist / diameter) * p_max`,
/// with the distance taken at the segment's representative pole.
pub fn storm_priors(topology: &GridTopology, storm: &StormSpec, p_max: f64) -> Result<Vec<f64>, ScenarioError> {
    storm.validate()?;
    Ok(topology
        .segments()
        .iter()
        .map(|s| {
            let d = storm.distance_to(topology.road_position(topology.segment_road(s.id)));
            (storm.severity * (1.0 - d / storm.diameter).max(0.0) * p_max).clamp(0.0, 1.0)
        })
        .collect())
}

/// Independent Bernoulli draw per segment.
pub fn sample_faults(priors: &[f64], seed: u64) -> BTreeSet<SegmentId> {
    let mut rng = seeds::rng(seed);
    priors
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let u: f64 = rng.gen();
            (u < p).then_some(SegmentId(i))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Call {
    pub minute: f64,
    pub segment: SegmentId,
}

/// Whether `seg` is without power at `minute`, given the true faults and the
/// minute each of them was repaired (absent = still faulted).
pub fn in_outage(
    topology: &GridTopology,
    faults: &BTreeSet<SegmentId>,
    repaired_at: &BTreeMap<SegmentId, f64>,
    seg: SegmentId,
    minute: f64,
) -> bool {
    topology.outage_sources(seg).iter().any(|k| {
        faults.contains(k) && repaired_at.get(k).map_or(true, |&r| r > minute)
    })
}

/// Trouble calls: every customer out at minute 0 calls at most once, with
/// probability `rho`, at a uniform minute within `window`. Calls from segments
/// restored before their arrival are suppressed.
///
/// The random draws do not depend on `rho` or on `repair_history`, so streams
/// for different calling probabilities are nested.
pub fn sample_calls(
    topology: &GridTopology,
    true_faults: &BTreeSet<SegmentId>,
    repair_history: &BTreeMap<SegmentId, f64>,
    rho: f64,
    window: f64,
    seed: u64,
) -> Result<Vec<Call>, ScenarioError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(ScenarioError::Rho(rho));
    }
    let mut out_at_onset = vec![false; topology.num_segments()];
    for f in true_faults {
        for s in topology.outage_closure(*f) {
            out_at_onset[s.0] = true;
        }
    }
    let mut rng = seeds::rng(seed);
    let mut calls = Vec::new();
    for seg in topology.segments() {
        if !out_at_onset[seg.id.0] {
            continue;
        }
        for _ in 0..seg.customers {
            let u: f64 = rng.gen();
            let minute = rng.gen::<f64>() * window;
            if u < rho && in_outage(topology, true_faults, repair_history, seg.id, minute) {
                calls.push(Call {
                    minute,
                    segment: seg.id,
                });
            }
        }
    }
    calls.sort_by(|a, b| a.minute.total_cmp(&b.minute).then(a.segment.cmp(&b.segment)));
    Ok(calls)
}

/// Categorical repair-time distribution over fault types.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RepairDistribution {
    /// `(minutes, probability)`
    pub outcomes: Vec<(f64, f64)>,
}

impl Default for RepairDistribution {
    fn default() -> Self {
        Self {
            outcomes: vec![(45.0, 0.3), (60.0, 0.4), (90.0, 0.3)],
        }
    }
}

impl RepairDistribution {
    pub fn single(minutes: f64) -> Self {
        Self {
            outcomes: vec![(minutes, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.outcomes.is_empty() {
            return Err(ScenarioError::EmptyRepair);
        }
        let mass: f64 = self.outcomes.iter().map(|o| o.1).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(ScenarioError::RepairMass(mass));
        }
        if let Some(&(m, _)) = self.outcomes.iter().find(|o| !(o.0 > 0.0)) {
            return Err(ScenarioError::RepairDuration(m));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|(m, p)| m * p).sum()
    }
}

pub fn sample_repair_time<R: Rng>(dist: &RepairDistribution, rng: &mut R) -> Result<f64, ScenarioError> {
    dist.validate()?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(minutes, p) in &dist.outcomes {
        acc += p;
        if u < acc {
            return Ok(minutes);
        }
    }
    Ok(dist.outcomes.last().unwrap().0)
}

/// One realization of the storm: everything the simulator needs to replay an
/// episode under any policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSample {
    pub schema: u32,
    pub priors: Vec<f64>,
    pub true_faults: BTreeSet<SegmentId>,
    pub repair_times: BTreeMap<SegmentId, f64>,
    /// Calls as they would arrive if nothing were ever repaired.
    pub call_stream: Vec<Call>,
    pub calling_probability: f64,
    pub call_window: f64,
    /// Multiplies every shortest-path travel time.
    #[serde(default = "unit")]
    pub traffic_factor: f64,
}

fn unit() -> f64 {
    1.0
}

impl ScenarioSample {
    pub fn validate(&self, topology: &GridTopology) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::Schema(self.schema));
        }
        let n = topology.num_segments();
        if self.priors.len() != n {
            return Err(ScenarioError::PriorCount {
                got: self.priors.len(),
                expected: n,
            });
        }
        let bad = self
            .true_faults
            .iter()
            .chain(self.repair_times.keys())
            .chain(self.call_stream.iter().map(|c| &c.segment))
            .find(|s| s.0 >= n);
        if let Some(s) = bad {
            return Err(ScenarioError::UnknownSegment(*s));
        }
        if !(0.0..=1.0).contains(&self.calling_probability) {
            return Err(ScenarioError::Rho(self.calling_probability));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn repair_time(&self, seg: SegmentId) -> f64 {
        self.repair_times.get(&seg).copied().unwrap_or(0.0)
    }
}

/// Builds a full scenario for one replication from fixed priors.
pub fn generate_scenario(
    topology: &GridTopology,
    priors: Vec<f64>,
    rho: f64,
    config: &SimConfig,
    root_seed: u64,
    replication: u64,
) -> Result<ScenarioSample, ScenarioError> {
    let faults = sample_faults(&priors, seeds::derive_seed(root_seed, replication, Stream::Faults));
    let mut rng = seeds::rng(seeds::derive_seed(root_seed, replication, Stream::Repairs));
    let mut repair_times = BTreeMap::new();
    for s in &faults {
        repair_times.insert(*s, sample_repair_time(&config.repair, &mut rng)?);
    }
    let call_stream = sample_calls(
        topology,
        &faults,
        &BTreeMap::new(),
        rho,
        config.call_window_minutes,
        seeds::derive_seed(root_seed, replication, Stream::Calls),
    )?;
    Ok(ScenarioSample {
        schema: SCENARIO_SCHEMA_VERSION,
        priors,
        true_faults: faults,
        repair_times,
        call_stream,
        calling_probability: rho,
        call_window: config.call_window_minutes,
        traffic_factor: 1.0,
    })
}
