//! Sampled Monte Carlo tree search over (truck location, belief) states.
//!
//! Pre-decision nodes choose the next segment to inspect; post-decision nodes
//! resolve whether a fault is found there. New leaves are scored by one
//! rollout: a fault set drawn from the leaf posterior and routed optimally.
//! Event children are sampled uniformly and recombined with their true
//! probabilities during backup.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{expected_customers_out, BeliefError, BeliefState, CallModel, Observation, Posterior, PosteriorLimits};
use crate::config::SimConfig;
use crate::grid::{GridTopology, SegmentId};
use crate::rollout;
use crate::seeds;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("no segment has posterior at or above {0}")]
    NoDecision(f64),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// How leg-plus-value costs are scaled before entering the UCT score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostScale {
    /// Divide by a fixed number of customer-minutes.
    Fixed(f64),
    /// Divide by the current root value estimate.
    RootValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub budget: usize,
    pub alpha: f64,
    /// Upper bound on decisions expanded per node; the effective threshold is
    /// `min(d_max, candidates)`.
    pub d_max: usize,
    pub e_thr: usize,
    /// Lookahead minutes beyond the root clock; `None` runs to the episode cap.
    pub horizon: Option<f64>,
    /// Decisions per simulated branch before the rollout takes over.
    pub max_depth: Option<usize>,
    /// Candidate threshold on the posterior.
    pub threshold: f64,
    pub cost_scale: CostScale,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget: 4000,
            alpha: 2.2,
            d_max: 4,
            e_thr: 2,
            horizon: None,
            max_depth: None,
            threshold: 0.01,
            cost_scale: CostScale::RootValue,
            seed: 0,
        }
    }
}

/// Outage cost of one leg: expected customers out times its duration, plus
/// the weighted operating cost.
pub fn stage_cost(expected_out: f64, minutes: f64, gamma: f64, cost_per_minute: f64) -> f64 {
    expected_out * minutes + gamma * cost_per_minute * minutes
}

/// Everything a search needs besides the root state.
#[derive(Debug, Clone, Copy)]
pub struct SearchProblem<'a> {
    pub topology: &'a GridTopology,
    pub sim: &'a SimConfig,
    pub model: CallModel,
    /// Multiplier on shortest-path travel.
    pub traffic: f64,
}

impl SearchProblem<'_> {
    fn limits(&self) -> PosteriorLimits {
        PosteriorLimits::from(self.sim)
    }

    fn travel(&self, from: usize, seg: SegmentId) -> f64 {
        self.topology.travel_between(from, self.topology.segment_road(seg)) * self.traffic
    }
}

#[derive(Debug, Clone)]
pub struct SearchState {
    pub location: usize,
    pub belief: BeliefState,
    pub posterior: Posterior,
}

pub const FAULT: usize = 0;
pub const NO_FAULT: usize = 1;

#[derive(Debug, Clone)]
struct EventSlot {
    prob: f64,
    /// Leg cost given this event.
    cost: f64,
    state: Option<SearchState>,
    child: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PostNode {
    pub decision: SegmentId,
    pub parent: usize,
    /// Expected leg cost over both events.
    pub stage_cost: f64,
    pub value: f64,
    pub visits: u32,
    events: [EventSlot; 2],
}

impl PostNode {
    pub fn event_prob(&self, e: usize) -> f64 {
        self.events[e].prob
    }

    pub fn event_cost(&self, e: usize) -> f64 {
        self.events[e].cost
    }

    pub fn child(&self, e: usize) -> Option<usize> {
        self.events[e].child
    }

    pub fn total(&self) -> f64 {
        self.stage_cost + self.value
    }
}

#[derive(Debug, Clone)]
struct Scored {
    decision: SegmentId,
    event: usize,
    score: f64,
    cost: f64,
    rollout: f64,
    state: SearchState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leaf {
    /// No candidate left, or the episode cap is reached: nothing more to gain.
    Done,
    /// Depth or horizon limit: valued by averaging rollouts.
    Cutoff,
}

#[derive(Debug, Clone)]
pub struct PreNode {
    pub state: SearchState,
    pub depth: usize,
    pub visits: u32,
    pub value: f64,
    pub candidates: Vec<SegmentId>,
    /// Post-decision children in expansion order.
    pub explored: Vec<usize>,
    pub terminal: Option<Leaf>,
    rollouts: u32,
    pending: Option<Vec<Scored>>,
}

impl PreNode {
    pub fn d_thr(&self, d_max: usize) -> usize {
        d_max.min(self.candidates.len())
    }
}

/// One iteration of the search as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// `segment:F` or `segment:N` per step.
    pub path: String,
    pub rollout: f64,
    pub best: Option<SegmentId>,
    pub root_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub decision: SegmentId,
    pub value: f64,
    pub iterations: usize,
}

pub struct SearchTree<'a> {
    problem: SearchProblem<'a>,
    config: SearchConfig,
    pub pre: Vec<PreNode>,
    pub post: Vec<PostNode>,
    root_clock: f64,
    rng: ChaCha8Rng,
    rollout_rng: ChaCha8Rng,
    iterations: usize,
}

impl<'a> SearchTree<'a> {
    pub fn new(problem: SearchProblem<'a>, root: SearchState, config: SearchConfig) -> Self {
        let rng = seeds::rng(seeds::subseed(config.seed, 0));
        let rollout_rng = seeds::rng(seeds::subseed(config.seed, 1));
        let root_clock = root.belief.clock;
        let mut tree = Self {
            problem,
            config,
            pre: Vec::new(),
            post: Vec::new(),
            root_clock,
            rng,
            rollout_rng,
            iterations: 0,
        };
        let node = tree.make_pre(root, 0, 0.0);
        tree.pre.push(node);
        tree
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn root(&self) -> &PreNode {
        &self.pre[0]
    }

    fn candidates(&self, posterior: &Posterior) -> Vec<SegmentId> {
        posterior
            .probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= self.config.threshold)
            .map(|(i, _)| SegmentId(i))
            .collect()
    }

    fn make_pre(&self, state: SearchState, depth: usize, value: f64) -> PreNode {
        let candidates = self.candidates(&state.posterior);
        let clock = state.belief.clock;
        let terminal = if candidates.is_empty() || clock >= self.problem.sim.episode_cap_minutes {
            Some(Leaf::Done)
        } else if self.config.max_depth.is_some_and(|d| depth >= d)
            || self.config.horizon.is_some_and(|h| clock - self.root_clock >= h)
        {
            Some(Leaf::Cutoff)
        } else {
            None
        };
        PreNode {
            state,
            depth,
            visits: 0,
            value: if terminal == Some(Leaf::Done) { 0.0 } else { value },
            candidates,
            explored: Vec::new(),
            terminal,
            rollouts: u32::from(terminal == Some(Leaf::Cutoff)),
            pending: None,
        }
    }

    /// State after visiting `x` from `from` under event `e`, with the leg cost.
    fn event_state(&self, from: &SearchState, x: SegmentId, e: usize) -> Result<(SearchState, f64), BeliefError> {
        let p = self.problem;
        let travel = p.travel(from.location, x);
        let fault_found = e == FAULT;
        let obs = Observation {
            fault_found,
            travel,
            repair: p.sim.lookahead_repair_minutes,
        };
        let belief = from.belief.transition(x, obs, None);
        let mut posterior = from.posterior.clone();
        posterior.refresh_circuit_of(x, &belief, p.topology, &p.model, p.limits())?;
        let mut during = posterior.probs.clone();
        if fault_found {
            during[x.0] = 1.0;
        }
        let minutes = belief.clock - from.belief.clock;
        let cost = stage_cost(
            expected_customers_out(&during, p.topology),
            minutes,
            p.sim.gamma,
            p.sim.cost_per_minute,
        );
        let state = SearchState {
            location: p.topology.segment_road(x),
            belief,
            posterior,
        };
        Ok((state, cost))
    }

    fn rollout(&mut self, state: &SearchState) -> f64 {
        let p = self.problem;
        let threshold = self.config.threshold;
        let faults: Vec<SegmentId> = state
            .posterior
            .probs
            .iter()
            .enumerate()
            .filter(|(_, &q)| q >= threshold && self.rollout_rng.gen::<f64>() < q)
            .map(|(i, _)| SegmentId(i))
            .collect();
        rollout::sample_path_value(
            p.topology,
            &faults,
            state.location,
            p.sim.lookahead_repair_minutes,
            p.traffic,
            p.sim.rollout_hk_max,
        )
    }

    fn draw_event(&mut self, prob_fault: f64) -> usize {
        if self.rng.gen::<f64>() < prob_fault {
            FAULT
        } else {
            NO_FAULT
        }
    }

    /// Scores every unexplored decision of `node` once, best last.
    fn score_decisions(&mut self, node: usize) -> Result<Vec<Scored>, SearchError> {
        let decisions = self.pre[node].candidates.clone();
        let mut scored = Vec::with_capacity(decisions.len());
        for x in decisions {
            let pf = self.pre[node].state.posterior.get(x);
            let mut e = self.draw_event(pf);
            let (state, cost) = match self.event_state(&self.pre[node].state, x, e) {
                Ok(s) => s,
                Err(_) => {
                    e = 1 - e;
                    self.event_state(&self.pre[node].state, x, e)?
                }
            };
            let rollout = self.rollout(&state);
            scored.push(Scored {
                decision: x,
                event: e,
                score: cost + rollout,
                cost,
                rollout,
                state,
            });
        }
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(b.decision.cmp(&a.decision)));
        Ok(scored)
    }

    /// Expands the best-scored unexplored decision; returns the new post node
    /// and its first child.
    pub fn expand_decision(&mut self, node: usize) -> Result<(usize, usize), SearchError> {
        if self.pre[node].pending.is_none() {
            let scored = self.score_decisions(node)?;
            self.pre[node].pending = Some(scored);
        }
        let s = self.pre[node].pending.as_mut().and_then(|p| p.pop()).expect("expansion precondition");
        let x = s.decision;
        let pf = self.pre[node].state.posterior.get(x);
        let probs = [pf, 1.0 - pf];
        let mut events = [
            EventSlot {
                prob: probs[FAULT],
                cost: 0.0,
                state: None,
                child: None,
            },
            EventSlot {
                prob: probs[NO_FAULT],
                cost: 0.0,
                state: None,
                child: None,
            },
        ];
        let other = 1 - s.event;
        if probs[other] > 0.0 {
            match self.event_state(&self.pre[node].state, x, other) {
                Ok((state, cost)) => {
                    events[other].state = Some(state);
                    events[other].cost = cost;
                }
                Err(_) => events[other].prob = 0.0,
            }
        }
        if probs[s.event] == 0.0 {
            // Only reachable when the drawn event had to be flipped.
            events[s.event].prob = 1.0 - events[other].prob;
        }
        events[s.event].cost = s.cost;
        let stage = events.iter().map(|e| e.prob * e.cost).sum();
        let depth = self.pre[node].depth + 1;
        let child = self.make_pre(s.state, depth, s.rollout);
        let child_id = self.pre.len();
        self.pre.push(child);
        events[s.event].child = Some(child_id);
        let post_id = self.post.len();
        self.post.push(PostNode {
            decision: x,
            parent: node,
            stage_cost: stage,
            value: 0.0,
            visits: 0,
            events,
        });
        self.pre[node].explored.push(post_id);
        Ok((post_id, child_id))
    }

    fn scale(&self) -> f64 {
        match self.config.cost_scale {
            CostScale::Fixed(s) => s,
            CostScale::RootValue => {
                let root = &self.pre[0];
                let v = root
                    .explored
                    .iter()
                    .map(|&p| self.post[p].total())
                    .fold(f64::INFINITY, f64::min);
                if v.is_finite() && v > 1.0 {
                    v
                } else {
                    1.0
                }
            }
        }
    }

    /// Explored decision maximizing the UCT score; ties go to the lowest segment.
    pub fn uct_select(&self, node: usize) -> usize {
        uct_pick(
            self.pre[node].visits,
            self.pre[node].explored.iter().map(|&p| {
                let post = &self.post[p];
                (post.decision, post.total(), post.visits)
            }),
            self.config.alpha,
            self.scale(),
        )
        .map(|i| self.pre[node].explored[i])
        .expect("node has explored decisions")
    }

    /// Picks an event of `post`: a new one while fewer than `e_thr` are
    /// explored, otherwise uniformly among explored ones.
    pub fn sample_event(&mut self, post: usize) -> usize {
        let slots = &self.post[post].events;
        let valid: Vec<usize> = (0..2).filter(|&e| slots[e].prob > 0.0).collect();
        let explored: Vec<usize> = valid.iter().copied().filter(|&e| slots[e].child.is_some()).collect();
        let fresh: Vec<usize> = valid.iter().copied().filter(|&e| slots[e].child.is_none()).collect();
        let pool = if explored.len() < self.config.e_thr && !fresh.is_empty() {
            fresh
        } else {
            explored
        };
        pool[self.rng.gen_range(0..pool.len())]
    }

    fn terminal_value(&mut self, node: usize) -> f64 {
        match self.pre[node].terminal {
            Some(Leaf::Done) => 0.0,
            _ => {
                let state = self.pre[node].state.clone();
                let r = self.rollout(&state);
                let n = &mut self.pre[node];
                n.rollouts += 1;
                n.value += (r - n.value) / n.rollouts as f64;
                r
            }
        }
    }

    /// One selection, expansion, simulation and backup pass.
    pub fn iterate(&mut self) -> Result<TraceRow, SearchError> {
        let mut path: Vec<(usize, usize, usize)> = Vec::new();
        let mut cur = 0;
        let leaf_value;
        loop {
            let node = &self.pre[cur];
            if node.terminal.is_some() {
                leaf_value = self.terminal_value(cur);
                break;
            }
            let unexplored = node.candidates.len() > node.explored.len();
            if node.explored.len() < node.d_thr(self.config.d_max) && unexplored {
                let (post, child) = self.expand_decision(cur)?;
                let e = if self.post[post].events[FAULT].child == Some(child) { FAULT } else { NO_FAULT };
                path.push((cur, post, e));
                leaf_value = self.pre[child].value;
                break;
            }
            let post = self.uct_select(cur);
            let e = self.sample_event(post);
            path.push((cur, post, e));
            match self.post[post].events[e].child {
                Some(c) => cur = c,
                None => {
                    let state = self.post[post].events[e].state.take().expect("prepared event state");
                    let v = self.rollout(&state);
                    let depth = self.pre[cur].depth + 1;
                    let child = self.make_pre(state, depth, v);
                    let id = self.pre.len();
                    leaf_value = child.value;
                    self.pre.push(child);
                    self.post[post].events[e].child = Some(id);
                    break;
                }
            }
        }
        self.backup(&path);
        self.iterations += 1;
        let best = self.best();
        Ok(TraceRow {
            iteration: self.iterations,
            path: path.iter().fold(String::new(), |mut s, &(_, p, e)| {
                if !s.is_empty() {
                    s.push(' ');
                }
                let _ = write!(s, "{}:{}", self.post[p].decision, if e == FAULT { 'F' } else { 'N' });
                s
            }),
            rollout: leaf_value,
            best: best.as_ref().map(|b| b.0),
            root_value: best.map_or(self.pre[0].value, |b| b.1),
        })
    }

    /// Walks `path` upwards refreshing post-decision values and pre-decision means.
    pub fn backup(&mut self, path: &[(usize, usize, usize)]) {
        for &(pre, post, _) in path.iter().rev() {
            let v = self.recompute_post(post);
            let p = &mut self.post[post];
            p.value = v;
            p.visits += 1;
            let delta = p.stage_cost + p.value;
            let n = &mut self.pre[pre];
            n.visits += 1;
            n.value += (delta - n.value) / n.visits as f64;
        }
    }

    /// Probability-weighted mean of explored event children.
    pub fn recompute_post(&self, post: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for slot in &self.post[post].events {
            if let Some(c) = slot.child {
                num += slot.prob * self.pre[c].value;
                den += slot.prob;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Root decision with the lowest leg-plus-value estimate.
    pub fn best(&self) -> Option<(SegmentId, f64)> {
        let mut best: Option<(SegmentId, f64)> = None;
        for &p in &self.pre[0].explored {
            let post = &self.post[p];
            let v = post.total();
            let better = match best {
                None => true,
                Some((d, b)) => v < b || (v == b && post.decision < d),
            };
            if better {
                best = Some((post.decision, v));
            }
        }
        best
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// UCT over `(decision, cost, visits)` triples, returning the winning index.
pub fn uct_pick(
    parent_visits: u32,
    children: impl Iterator<Item = (SegmentId, f64, u32)>,
    alpha: f64,
    scale: f64,
) -> Option<usize> {
    let ln_n = (parent_visits.max(1) as f64).ln();
    let mut best: Option<(usize, SegmentId, f64)> = None;
    for (i, (d, cost, n)) in children.enumerate() {
        let bonus = if n == 0 {
            f64::INFINITY
        } else {
            alpha * (ln_n / n as f64).sqrt()
        };
        let score = -cost / scale + bonus;
        let better = match best {
            None => true,
            Some((_, bd, bs)) => score > bs || (score == bs && d < bd),
        };
        if better {
            best = Some((i, d, score));
        }
    }
    best.map(|b| b.0)
}

/// Runs a full search and returns the recommended segment.
pub fn search(
    problem: SearchProblem<'_>,
    root: SearchState,
    config: &SearchConfig,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<SearchOutcome, SearchError> {
    let threshold = config.threshold;
    let candidates: Vec<SegmentId> = root
        .posterior
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| SegmentId(i))
        .collect();
    match candidates.len() {
        0 => return Err(SearchError::NoDecision(threshold)),
        1 if trace.is_none() => {
            return Ok(SearchOutcome {
                decision: candidates[0],
                value: f64::NAN,
                iterations: 0,
            })
        }
        _ => {}
    }
    let mut tree = SearchTree::new(problem, root, config.clone());
    for _ in 0..config.budget.max(1) {
        let row = tree.iterate()?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(row);
        }
    }
    let (decision, value) = tree.best().ok_or(SearchError::NoDecision(threshold))?;
    Ok(SearchOutcome {
        decision,
        value,
        iterations: tree.iterations(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::posterior;
    use crate::grid::{build_topology, NodeKind::*};

    /// Substation feeding 5 local customers plus one device branch per entry
    /// of `customers`; every branch pole is 5 minutes from the depot.
    pub(crate) fn star(customers: &[u32]) -> GridTopology {
        use crate::grid::{CircuitDocument, GridDocument, NodeId, RoadNodeId};
        let mut road_nodes = vec![(RoadNodeId(0), 0.0, 0.0)];
        let mut road_edges = Vec::new();
        let mut nodes = vec![
            (NodeId(0), Substation, 0, None, RoadNodeId(0)),
            (NodeId(1), Transformer, 5, Some(NodeId(0)), RoadNodeId(0)),
        ];
        for (i, &c) in customers.iter().enumerate() {
            let r = RoadNodeId(i as u32 + 1);
            let angle = i as f64;
            road_nodes.push((r, 5.0 * angle.cos(), 5.0 * angle.sin()));
            road_edges.push((RoadNodeId(0), r, 5.0));
            let d = 10 * (i as u32 + 1);
            nodes.push((NodeId(d), ProtectiveDevice, 0, Some(NodeId(0)), r));
            nodes.push((NodeId(d + 1), Transformer, c, Some(NodeId(d)), r));
        }
        build_topology(&GridDocument {
            schema: 1,
            depot: None,
            road_nodes,
            road_edges,
            circuits: vec![CircuitDocument { id: crate::grid::CircuitId(0), nodes }],
        })
        .unwrap()
    }

    fn root_state(g: &GridTopology, sim: &SimConfig, model: &CallModel, priors: Vec<f64>) -> SearchState {
        let mut belief = BeliefState::new(priors);
        belief.clock = sim.dispatch_minute;
        belief.calls_observed_at = sim.dispatch_minute;
        let posterior = posterior(&belief, g, model, PosteriorLimits::from(sim)).unwrap();
        SearchState {
            location: g.depot(),
            belief,
            posterior,
        }
    }

    #[test]
    fn stage_cost_examples() {
        assert_eq!(stage_cost(0.0, 30.0, 0.0, 0.0), 0.0);
        assert_eq!(stage_cost(20.0, 30.0, 0.0, 0.0), 600.0);
        assert_eq!(stage_cost(20.0, 30.0, 1.0, 2.0), 660.0);
    }

    #[test]
    fn uct_examples() {
        let kids = [(SegmentId(1), 10.0, 5), (SegmentId(2), 20.0, 5)];
        assert_eq!(uct_pick(10, kids.iter().copied(), 2.2, 1.0), Some(0));
        assert_eq!(uct_pick(10, kids[..1].iter().copied(), 2.2, 1.0), Some(0));
        let kids = [(SegmentId(1), 30.0, 1), (SegmentId(2), 20.0, 50)];
        assert_eq!(uct_pick(51, kids.iter().copied(), 0.0, 1.0), Some(1));
        let tie = [(SegmentId(4), 5.0, 3), (SegmentId(2), 5.0, 3)];
        assert_eq!(uct_pick(6, tie.iter().copied(), 1.0, 1.0), Some(1));
    }

    #[test]
    fn single_candidate_is_returned() {
        let g = star(&[10, 10]);
        let sim = SimConfig::default();
        let model = CallModel::new(0.0, 30.0).unwrap();
        let p = SearchProblem {
            topology: &g,
            sim: &sim,
            model,
            traffic: 1.0,
        };
        for budget in [1, 50] {
            let root = root_state(&g, &sim, &model, vec![0.0, 0.5, 0.0]);
            let out = search(p, root, &SearchConfig { budget, ..Default::default() }, None).unwrap();
            assert_eq!(out.decision, SegmentId(1));
        }
        let root = root_state(&g, &sim, &model, vec![0.0, 0.0, 0.0]);
        assert_eq!(search(p, root, &SearchConfig::default(), None).unwrap_err(), SearchError::NoDecision(0.01));
    }

    #[test]
    fn heavy_certain_segment_wins() {
        let g = star(&[100, 1]);
        let sim = SimConfig::default();
        let model = CallModel::new(0.0, 30.0).unwrap();
        let p = SearchProblem {
            topology: &g,
            sim: &sim,
            model,
            traffic: 1.0,
        };
        for seed in 0..20 {
            let root = root_state(&g, &sim, &model, vec![0.0, 1.0, 0.01]);
            let cfg = SearchConfig {
                budget: 50,
                seed,
                ..Default::default()
            };
            assert_eq!(search(p, root, &cfg, None).unwrap().decision, SegmentId(1));
        }
    }

    #[test]
    fn certain_fault_expanded_first() {
        let g = star(&[10, 10]);
        let sim = SimConfig::default();
        let model = CallModel::new(0.0, 30.0).unwrap();
        let p = SearchProblem {
            topology: &g,
            sim: &sim,
            model,
            traffic: 1.0,
        };
        // the zero-posterior segment sits just above the threshold so it is a candidate
        let mut first = 0;
        for seed in 0..100 {
            let root = root_state(&g, &sim, &model, vec![0.0, 1.0, 0.01]);
            let mut t = SearchTree::new(p, root, SearchConfig { seed, ..Default::default() });
            let (post, _) = t.expand_decision(0).unwrap();
            if t.post[post].decision == SegmentId(1) {
                first += 1;
            }
        }
        assert!(first >= 95, "{first}");
    }

    #[test]
    fn expansion_stops_at_threshold() {
        let g = star(&[10, 10, 10, 10, 10, 10]);
        let sim = SimConfig::default();
        let model = CallModel::new(0.0, 30.0).unwrap();
        let p = SearchProblem {
            topology: &g,
            sim: &sim,
            model,
            traffic: 1.0,
        };
        let root = root_state(&g, &sim, &model, vec![0.0, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3]);
        let mut t = SearchTree::new(p, root, SearchConfig::default());
        for _ in 0..200 {
            t.iterate().unwrap();
        }
        assert_eq!(t.root().explored.len(), 4);
        assert!(t.root().pending.as_ref().is_some_and(|p| p.len() == 2));
    }

    #[test]
    fn events_follow_destination_posterior() {
        let g = star(&[10, 10]);
        let sim = SimConfig::default();
        let model = CallModel::new(0.0, 30.0).unwrap();
        let p = SearchProblem {
            topology: &g,
            sim: &sim,
            model,
            traffic: 1.0,
        };
        let root = root_state(&g, &sim, &model, vec![0.0, 1.0, 0.3]);
        let mut t = SearchTree::new(p, root, SearchConfig::default());
        for _ in 0..2 {
            t.expand_decision(0).unwrap();
        }
        let by = |t: &SearchTree, s| t.root().explored.iter().copied().find(|&q| t.post[q].decision == SegmentId(s)).unwrap();
        let certain = by(&t, 1);
        assert_eq!(t.post[certain].event_prob(NO_FAULT), 0.0);
        for _ in 0..20 {
            assert_eq!(t.sample_event(certain), FAULT);
        }
        let child = t.post[certain].child(FAULT).unwrap();
        assert_eq!(t.pre[child].state.belief.clock - 30.0, 5.0 + sim.lookahead_repair_minutes);

        let mixed = by(&t, 2);
        for e in [FAULT, NO_FAULT] {
            if t.post[mixed].child(e).is_none() {
                let s = t.post[mixed].events[e].state.take().unwrap();
                let c = t.make_pre(s, 1, 0.0);
                t.pre.push(c);
                t.post[mixed].events[e].child = Some(t.pre.len() - 1);
            }
        }
        let n = 10_000;
        let faults = (0..n).filter(|_| t.sample_event(mixed) == FAULT).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((faults - 5000.0).abs() < 3.0 * sigma, "{faults}");
    }

    #[test]
    fn backup_weights_events() {
        let g = star(&[10, 10]);
        let sim = SimConfig::default();
        let model = CallModel::new(0.0, 30.0).unwrap();
        let p = SearchProblem {
            topology: &g,
            sim: &sim,
            model,
            traffic: 1.0,
        };
        let root = root_state(&g, &sim, &model, vec![0.0, 0.3, 0.0]);
        let mut t = SearchTree::new(p, root, SearchConfig::default());
        let (post, child) = t.expand_decision(0).unwrap();
        let e = if t.post[post].child(FAULT) == Some(child) { FAULT } else { NO_FAULT };
        let s = t.post[post].events[1 - e].state.take().unwrap();
        let other = t.make_pre(s, 1, 0.0);
        t.pre.push(other);
        t.post[post].events[1 - e].child = Some(t.pre.len() - 1);
        let (f, nf) = (t.post[post].child(FAULT).unwrap(), t.post[post].child(NO_FAULT).unwrap());
        t.pre[f].value = 100.0;
        t.pre[nf].value = 10.0;
        t.backup(&[(0, post, e)]);
        assert!((t.post[post].value - 37.0).abs() < 1e-12);
        // N = 1 at the root: its value is exactly the leg cost plus 37
        assert_eq!(t.root().visits, 1);
        assert!((t.root().value - (t.post[post].stage_cost + 37.0)).abs() < 1e-9);
    }

    #[test]
    fn bookkeeping_holds_every_iteration() {
        let g = star(&[12, 30, 7, 18]);
        let sim = SimConfig::default();
        let model = CallModel::new(0.5, 30.0).unwrap();
        let p = SearchProblem {
            topology: &g,
            sim: &sim,
            model,
            traffic: 1.0,
        };
        let mut root = root_state(&g, &sim, &model, vec![0.05, 0.4, 0.3, 0.6, 0.2]);
        root.belief.calls = vec![0, 5, 0, 3, 0];
        root.posterior = posterior(&root.belief, &g, &model, PosteriorLimits::from(&sim)).unwrap();
        let mut t = SearchTree::new(p, root, SearchConfig { seed: 5, ..Default::default() });
        for _ in 0..300 {
            t.iterate().unwrap();
            for n in &t.pre {
                if n.terminal.is_none() {
                    let sum: u32 = n.explored.iter().map(|&q| t.post[q].visits).sum();
                    assert_eq!(n.visits, sum);
                }
                assert!(n.value.is_finite() && n.value >= 0.0);
            }
            for (i, q) in t.post.iter().enumerate() {
                assert!((t.recompute_post(i) - q.value).abs() <= 1e-9 * q.value.max(1.0));
            }
        }
    }

    #[test]
    fn certain_faults_follow_exact_tour() {
        use crate::rollout::{held_karp, LatencyInstance};
        use rand::{seq::SliceRandom, SeedableRng};
        let sim = SimConfig::default();
        let model = CallModel::new(0.0, 30.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for case in 0..10 {
            let mut customers: Vec<u32> = (1..=12).map(|c| c * 7).collect();
            customers.shuffle(&mut rng);
            let n = 2 + case % 4;
            let g = star(&customers[..n]);
            let p = SearchProblem {
                topology: &g,
                sim: &sim,
                model,
                traffic: 1.0,
            };
            let faults: Vec<SegmentId> = (1..=n).map(SegmentId).collect();
            let repair = vec![sim.lookahead_repair_minutes; n];
            let inst = LatencyInstance::from_grid(&g, &faults, g.depot(), repair, 1.0);
            let first = faults[held_karp(&inst, 20).unwrap().order[0]];
            let mut priors = vec![1.0; n + 1];
            priors[0] = 0.0;
            let root = root_state(&g, &sim, &model, priors);
            let cfg = SearchConfig {
                budget: 4000,
                seed: case as u64,
                ..Default::default()
            };
            assert_eq!(search(p, root, &cfg, None).unwrap().decision, first, "case {case}");
        }
    }

    #[test]
    fn seeded_search_is_deterministic() {
        let g = star(&[12, 30, 7]);
        let sim = SimConfig::default();
        let model = CallModel::new(0.1, 30.0).unwrap();
        let p = SearchProblem {
            topology: &g,
            sim: &sim,
            model,
            traffic: 1.0,
        };
        let cfg = SearchConfig {
            budget: 300,
            seed: 9,
            ..Default::default()
        };
        let run = || {
            let root = root_state(&g, &sim, &model, vec![0.1, 0.4, 0.3, 0.6]);
            let mut trace = Vec::new();
            let out = search(p, root, &cfg, Some(&mut trace)).unwrap();
            (out, trace)
        };
        assert_eq!(run(), run());
    }
}
