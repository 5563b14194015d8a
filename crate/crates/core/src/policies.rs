//! Episode drivers: the search-based lookahead dispatcher, the escalation and
//! first-call-first-serve baselines, and the full-information tour.
//!
//! Every policy moves the same simulated truck through [`Episode`], so the
//! realized outage integral is computed identically for all of them. Faults
//! all occur at minute 0 and customers only regain power at repair
//! completions, so the customers-out curve is a step function.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{posterior, stop_condition, BeliefError, BeliefState, CallModel, Observation, PosteriorLimits};
use crate::config::SimConfig;
use crate::grid::{GridTopology, SegmentId};
use crate::mcts::{self, SearchConfig, SearchError, SearchProblem, SearchState, TraceRow};
use crate::rollout::{best_tour, outage_weight, LatencyInstance};
use crate::scenario::{in_outage, ScenarioSample};
use crate::seeds;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Lookahead,
    Escalation,
    Fcfs,
    PosteriorOptimal,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Lookahead, Policy::Escalation, Policy::Fcfs, Policy::PosteriorOptimal];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Lookahead => "lookahead",
            Policy::Escalation => "escalation",
            Policy::Fcfs => "fcfs",
            Policy::PosteriorOptimal => "posterior-optimal",
        }
    }

    /// Whether the result depends on the search budget.
    pub fn uses_budget(self) -> bool {
        self == Policy::Lookahead
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Move,
    Repair,
    CallBatch,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub minute: f64,
    pub kind: EventKind,
    pub segment: Option<SegmentId>,
    pub customers_out_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub policy: Policy,
    pub events: Vec<LogEvent>,
    /// Integral of customers out from minute 0 to the later of the episode
    /// cap and the last completion.
    pub outage_minutes: f64,
    /// Completion of the last repair, 0 if none.
    pub restore_minute: f64,
    pub stop_minute: f64,
    pub unrepaired_faults: usize,
    pub customers_out_end: u64,
    pub customers_out_initial: u64,
    /// Segments visited, in order.
    pub visits: Vec<SegmentId>,
    /// The full-information tour fell back to local search.
    #[serde(default)]
    pub heuristic_tour: bool,
    /// Wall-clock milliseconds per search decision.
    #[serde(skip)]
    pub decision_ms: Vec<f64>,
}

impl EpisodeLog {
    pub fn outage_hours(&self) -> f64 {
        self.outage_minutes / 60.0
    }

    pub fn mean_decision_ms(&self) -> Option<f64> {
        (!self.decision_ms.is_empty()).then(|| self.decision_ms.iter().sum::<f64>() / self.decision_ms.len() as f64)
    }
}

/// The simulated truck and the realized outage process.
pub struct Episode<'a> {
    topology: &'a GridTopology,
    scenario: &'a ScenarioSample,
    sim: &'a SimConfig,
    faults: Vec<SegmentId>,
    clock: f64,
    location: usize,
    repaired_at: BTreeMap<SegmentId, f64>,
    visited: Vec<bool>,
    out: u64,
    initial_out: u64,
    area: f64,
    next_call: usize,
    events: Vec<LogEvent>,
    visits: Vec<SegmentId>,
}

impl<'a> Episode<'a> {
    pub fn new(topology: &'a GridTopology, scenario: &'a ScenarioSample, sim: &'a SimConfig) -> Self {
        let faults: Vec<SegmentId> = scenario.true_faults.iter().copied().collect();
        let out = outage_weight(topology, &faults, &[]);
        Self {
            topology,
            scenario,
            sim,
            faults,
            clock: 0.0,
            location: topology.depot(),
            repaired_at: BTreeMap::new(),
            visited: vec![false; topology.num_segments()],
            out,
            initial_out: out,
            area: 0.0,
            next_call: 0,
            events: Vec::new(),
            visits: Vec::new(),
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn location(&self) -> usize {
        self.location
    }

    pub fn visited(&self, seg: SegmentId) -> bool {
        self.visited[seg.0]
    }

    pub fn customers_out(&self) -> u64 {
        self.out
    }

    /// Whether another leg may start.
    pub fn can_move(&self) -> bool {
        self.clock < self.sim.episode_cap_minutes
    }

    fn advance_to(&mut self, t: f64) {
        if t > self.clock {
            self.area += self.out as f64 * (t - self.clock);
            self.clock = t;
        }
    }

    pub fn dispatch(&mut self) {
        self.advance_to(self.sim.dispatch_minute);
    }

    pub fn travel_to(&self, seg: SegmentId) -> f64 {
        self.topology.travel_between(self.location, self.topology.segment_road(seg)) * self.scenario.traffic_factor
    }

    /// Drives to `seg`, repairing its fault if there is one.
    pub fn visit(&mut self, seg: SegmentId) -> Observation {
        let travel = self.travel_to(seg);
        self.advance_to(self.clock + travel);
        self.location = self.topology.segment_road(seg);
        self.visited[seg.0] = true;
        self.visits.push(seg);
        self.log(EventKind::Move, Some(seg));
        let fault_found = self.scenario.true_faults.contains(&seg) && !self.repaired_at.contains_key(&seg);
        let repair = if fault_found { self.scenario.repair_time(seg) } else { 0.0 };
        if fault_found {
            self.advance_to(self.clock + repair);
            self.repaired_at.insert(seg, self.clock);
            let done: Vec<SegmentId> = self.repaired_at.keys().copied().collect();
            self.out = outage_weight(self.topology, &self.faults, &done);
            self.log(EventKind::Repair, Some(seg));
        }
        Observation {
            fault_found,
            travel,
            repair,
        }
    }

    fn delivered(&self, i: usize) -> bool {
        let c = &self.scenario.call_stream[i];
        in_outage(self.topology, &self.scenario.true_faults, &self.repaired_at, c.segment, c.minute)
    }

    /// Calls that have arrived by now and not been read yet.
    pub fn take_calls(&mut self) -> Vec<SegmentId> {
        let mut got = Vec::new();
        while let Some(c) = self.scenario.call_stream.get(self.next_call) {
            if c.minute > self.clock {
                break;
            }
            if self.delivered(self.next_call) {
                got.push(c.segment);
            }
            self.next_call += 1;
        }
        if !got.is_empty() {
            self.log(EventKind::CallBatch, None);
        }
        got
    }

    /// Arrival minute of the next call that will actually be delivered.
    pub fn next_call_minute(&self) -> Option<f64> {
        (self.next_call..self.scenario.call_stream.len())
            .find(|&i| self.delivered(i))
            .map(|i| self.scenario.call_stream[i].minute)
    }

    /// Idles until the next call, if one is still to come within the episode.
    pub fn wait_for_call(&mut self) -> bool {
        match self.next_call_minute() {
            Some(t) if t < self.sim.episode_cap_minutes => {
                self.advance_to(t);
                true
            }
            _ => false,
        }
    }

    fn log(&mut self, kind: EventKind, segment: Option<SegmentId>) {
        self.events.push(LogEvent {
            minute: self.clock,
            kind,
            segment,
            customers_out_after: self.out,
        });
    }

    pub fn finish(mut self, policy: Policy) -> EpisodeLog {
        let stop = self.clock;
        self.log(EventKind::Stop, None);
        let end = self.sim.episode_cap_minutes.max(self.clock);
        self.advance_to(end);
        EpisodeLog {
            policy,
            events: self.events,
            outage_minutes: self.area,
            restore_minute: self.repaired_at.values().copied().fold(0.0, f64::max),
            stop_minute: stop,
            unrepaired_faults: self.faults.len() - self.repaired_at.len(),
            customers_out_end: self.out,
            customers_out_initial: self.initial_out,
            visits: self.visits,
            heuristic_tour: false,
            decision_ms: Vec::new(),
        }
    }
}

/// Search-driven dispatch: re-plan at every arrival until no segment is
/// likely enough to be faulted.
pub fn run_lookahead(
    topology: &GridTopology,
    scenario: &ScenarioSample,
    sim: &SimConfig,
    search: &SearchConfig,
    mut trace: Option<&mut Vec<(usize, TraceRow)>>,
) -> Result<EpisodeLog, PolicyError> {
    let model = CallModel::new(scenario.calling_probability, scenario.call_window)?;
    let limits = PosteriorLimits::from(sim);
    let problem = SearchProblem {
        topology,
        sim,
        model,
        traffic: scenario.traffic_factor,
    };
    let mut ep = Episode::new(topology, scenario, sim);
    ep.dispatch();
    let mut belief = BeliefState::new(scenario.priors.clone());
    belief.clock = ep.clock();
    let calls = ep.take_calls();
    belief.add_calls(calls, ep.clock());
    let mut decision_ms = Vec::new();
    let mut epoch = 0u64;
    loop {
        let post = posterior(&belief, topology, &model, limits)?;
        if stop_condition(&post.probs, search.threshold) {
            if ep.clock() < scenario.call_window && ep.wait_for_call() {
                belief.clock = ep.clock();
                let calls = ep.take_calls();
                belief.add_calls(calls, ep.clock());
                continue;
            }
            break;
        }
        if !ep.can_move() {
            break;
        }
        let root = SearchState {
            location: ep.location(),
            belief: belief.clone(),
            posterior: post,
        };
        let cfg = SearchConfig {
            seed: seeds::subseed(search.seed, epoch),
            ..search.clone()
        };
        let started = Instant::now();
        let mut rows = trace.as_ref().map(|_| Vec::new());
        let outcome = mcts::search(problem, root, &cfg, rows.as_mut())?;
        decision_ms.push(started.elapsed().as_secs_f64() * 1e3);
        if let (Some(t), Some(rows)) = (trace.as_deref_mut(), rows) {
            t.extend(rows.into_iter().map(|r| (epoch as usize, r)));
        }
        let obs = ep.visit(outcome.decision);
        let calls = ep.take_calls();
        belief.apply(outcome.decision, obs, Some(&calls));
        belief.clock = ep.clock();
        epoch += 1;
    }
    let mut log = ep.finish(Policy::Lookahead);
    log.decision_ms = decision_ms;
    Ok(log)
}

/// Visit order of the escalation sweep for the segments that have called.
///
/// Per circuit: the deepest segment common to every caller's path from the
/// substation first, then its ancestors back up to the substation, then a
/// depth-first sweep (children by id) down to every calling segment.
pub fn escalation_plan(topology: &GridTopology, calling: &BTreeSet<SegmentId>) -> Vec<SegmentId> {
    let mut circuits: Vec<usize> = (0..topology.circuits().len()).collect();
    circuits.sort_by_key(|&c| topology.circuits()[c].id);
    let mut plan = Vec::new();
    for ci in circuits {
        let here: Vec<SegmentId> = calling.iter().copied().filter(|s| topology.segment(*s).circuit == ci).collect();
        if here.is_empty() {
            continue;
        }
        let paths: Vec<Vec<SegmentId>> = here.iter().map(|&s| root_path(topology, s)).collect();
        let mut common = 0;
        while paths.iter().all(|p| p.len() > common && p[common] == paths[0][common]) {
            common += 1;
        }
        let mut on_path = BTreeSet::new();
        for p in &paths {
            on_path.extend(p.iter().skip(common.max(1) - 1).copied());
        }
        if common > 0 {
            let x = paths[0][common - 1];
            plan.push(x);
            plan.extend(paths[0][..common - 1].iter().rev().copied());
            sweep(topology, x, &on_path, &mut plan);
        } else {
            let roots: BTreeSet<SegmentId> = paths.iter().map(|p| p[0]).collect();
            for r in roots {
                plan.push(r);
                sweep(topology, r, &on_path, &mut plan);
            }
        }
    }
    plan
}

fn root_path(topology: &GridTopology, seg: SegmentId) -> Vec<SegmentId> {
    let mut path = vec![seg];
    let mut cur = seg;
    while let Some(p) = topology.segment(cur).parent {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

/// Preorder below `from` restricted to `keep`, children by id; `from` itself excluded.
fn sweep(topology: &GridTopology, from: SegmentId, keep: &BTreeSet<SegmentId>, plan: &mut Vec<SegmentId>) {
    let mut kids: Vec<SegmentId> = topology.segment(from).children.clone();
    kids.sort();
    for k in kids {
        if keep.contains(&k) {
            plan.push(k);
            sweep(topology, k, keep, plan);
        }
    }
}

/// Escalation baseline: calls trigger a sweep from their common ancestor.
/// Circuits nobody called from are never searched.
pub fn run_escalation(topology: &GridTopology, scenario: &ScenarioSample, sim: &SimConfig) -> EpisodeLog {
    let mut ep = Episode::new(topology, scenario, sim);
    ep.dispatch();
    let mut calling: BTreeSet<SegmentId> = ep.take_calls().into_iter().collect();
    'outer: loop {
        let plan = escalation_plan(topology, &calling);
        let mut moved = false;
        for x in plan {
            if ep.visited(x) {
                continue;
            }
            if !ep.can_move() {
                break 'outer;
            }
            ep.visit(x);
            moved = true;
            calling.extend(ep.take_calls());
        }
        if calling.iter().all(|&s| ep.visited(s)) {
            if ep.clock() < scenario.call_window && ep.wait_for_call() {
                calling.extend(ep.take_calls());
                continue;
            }
            break;
        }
        if !moved {
            break;
        }
    }
    ep.finish(Policy::Escalation)
}

/// First-call-first-serve: calling segments in order of their first call.
pub fn run_fcfs(topology: &GridTopology, scenario: &ScenarioSample, sim: &SimConfig) -> EpisodeLog {
    let mut ep = Episode::new(topology, scenario, sim);
    ep.dispatch();
    let mut queue: VecDeque<SegmentId> = ep.take_calls().into();
    loop {
        while let Some(x) = queue.pop_front() {
            if ep.visited(x) {
                continue;
            }
            if !ep.can_move() {
                return ep.finish(Policy::Fcfs);
            }
            ep.visit(x);
            queue.extend(ep.take_calls());
        }
        if ep.clock() < scenario.call_window && ep.wait_for_call() {
            queue.extend(ep.take_calls());
            continue;
        }
        break;
    }
    ep.finish(Policy::Fcfs)
}

/// Full-information benchmark: the optimal tour over the revealed faults,
/// with realized repair and travel times.
pub fn run_posterior_optimal(topology: &GridTopology, scenario: &ScenarioSample, sim: &SimConfig) -> EpisodeLog {
    let mut ep = Episode::new(topology, scenario, sim);
    ep.dispatch();
    let faults: Vec<SegmentId> = scenario.true_faults.iter().copied().collect();
    let repair = faults.iter().map(|&f| scenario.repair_time(f)).collect();
    let inst = LatencyInstance::from_grid(topology, &faults, ep.location(), repair, scenario.traffic_factor);
    let (tour, exact) = best_tour(&inst, sim.hk_max);
    for j in tour.order {
        if !ep.can_move() {
            break;
        }
        ep.visit(faults[j]);
    }
    let mut log = ep.finish(Policy::PosteriorOptimal);
    log.heuristic_tour = !exact;
    log
}

pub fn run_policy(
    policy: Policy,
    topology: &GridTopology,
    scenario: &ScenarioSample,
    sim: &SimConfig,
    search: &SearchConfig,
) -> Result<EpisodeLog, PolicyError> {
    Ok(match policy {
        Policy::Lookahead => run_lookahead(topology, scenario, sim, search, None)?,
        Policy::Escalation => run_escalation(topology, scenario, sim),
        Policy::Fcfs => run_fcfs(topology, scenario, sim),
        Policy::PosteriorOptimal => run_posterior_optimal(topology, scenario, sim),
    })
}
