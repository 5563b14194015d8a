//! Simulation-wide settings shared by the belief engine, search and policies.

use serde::{Deserialize, Serialize};

use crate::scenario::RepairDistribution;

/// Episode cap: no leg starts after 48 simulated hours.
pub const EPISODE_CAP_MINUTES: f64 = 48.0 * 60.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Calls from an outage arrive uniformly within this many minutes of onset.
    pub call_window_minutes: f64,
    /// Minute at which the truck leaves the depot.
    pub dispatch_minute: f64,
    pub episode_cap_minutes: f64,
    /// Posterior threshold for candidate segments and for stopping.
    pub stop_threshold: f64,
    pub repair: RepairDistribution,
    /// Deterministic repair time assumed inside the lookahead model.
    pub lookahead_repair_minutes: f64,
    /// Exact posterior enumeration up to this many nonzero-prior segments per circuit.
    pub exact_limit: usize,
    /// Maximum simultaneous faults per circuit beyond `exact_limit`.
    pub k_max: usize,
    pub hk_max: usize,
    /// Above this many sampled faults a rollout uses the local-search tour.
    pub rollout_hk_max: usize,
    /// Weight of the truck operating cost in the stage cost.
    pub gamma: f64,
    pub cost_per_minute: f64,
    pub p_max: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let repair = RepairDistribution::default();
        Self {
            call_window_minutes: 30.0,
            dispatch_minute: 30.0,
            episode_cap_minutes: EPISODE_CAP_MINUTES,
            stop_threshold: 0.01,
            lookahead_repair_minutes: repair.mean(),
            repair,
            exact_limit: 20,
            k_max: 4,
            hk_max: 20,
            rollout_hk_max: 12,
            gamma: 0.0,
            cost_per_minute: 0.0,
            p_max: 0.765,
        }
    }
}
