//! Single-truck storm response on radial distribution grids.
//!
//! The truck works from a Bayesian belief over segment faults, driven by
//! trouble calls and its own inspections. Decisions come from a sampled
//! Monte Carlo tree search whose leaves are scored by an exact latency-TSP
//! dynamic program; escalation and first-call-first-serve dispatchers and a
//! full-information tour serve as baselines.

pub mod belief;
pub mod config;
pub mod grid;
pub mod harness;
pub mod mcts;
pub mod policies;
pub mod rollout;
pub mod scenario;
pub mod seeds;
pub mod synth;

pub use belief::{BeliefState, CallModel, Observation, Posterior, PosteriorLimits};
pub use config::SimConfig;
pub use grid::{CircuitId, GridTopology, NodeId, NodeKind, RoadNodeId, SegmentId};
pub use mcts::SearchConfig;
pub use policies::EpisodeLog;
pub use rollout::{LatencyInstance, TourResult};
pub use scenario::{ScenarioSample, StormSpec};
