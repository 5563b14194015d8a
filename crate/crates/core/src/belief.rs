//! Fault belief: priors conditioned on the truck's trajectory, accumulated
//! trouble calls, and the exact (or truncated) Bayesian posterior.
//!
//! Circuits are independent a priori and calls never cross circuits, so the
//! posterior factorizes per circuit. Within a circuit the hypothesis space is
//! enumerated depth-first over segments in preorder, which lets the outage
//! state of every segment, and therefore its call likelihood, be settled as
//! soon as the segment is assigned.
//!
//! Faults the truck has already found and repaired stay part of every
//! hypothesis with their known completion minute. A customer calls at a
//! uniform minute of the call window, so a segment restored at minute `r`
//! only produces calls that arrived before `r`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

use crate::config::SimConfig;
use crate::grid::{GridTopology, SegmentId};

#[derive(Debug, Error, PartialEq)]
pub enum BeliefError {
    #[error("inconsistent observations on circuit {0}: no hypothesis explains the calls")]
    Inconsistent(crate::grid::CircuitId),
    #[error("segment {segment} reports {calls} calls but has {customers} customers")]
    ImpossibleObservation {
        segment: SegmentId,
        calls: u32,
        customers: u32,
    },
    #[error("calling probability must lie in [0, 1], got {0}")]
    Rho(f64),
    #[error("belief has {got} entries for a grid of {expected} segments")]
    Size { got: usize, expected: usize },
}

/// How trouble calls are generated and when they were last read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallModel {
    pub rho: f64,
    /// Calls from an outage arrive uniformly over this many minutes.
    pub window: f64,
}

impl CallModel {
    pub fn new(rho: f64, window: f64) -> Result<Self, BeliefError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(BeliefError::Rho(rho));
        }
        Ok(Self { rho, window })
    }

    /// Probability that one customer of a segment restored at `restored`
    /// has called by minute `observed_at`.
    pub fn call_probability(&self, observed_at: f64, restored: f64) -> f64 {
        if self.window <= 0.0 {
            return if restored > 0.0 { self.rho } else { 0.0 };
        }
        self.rho * observed_at.min(restored).min(self.window).max(0.0) / self.window
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub segment: SegmentId,
    pub completed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    /// Fault priors given the trajectory so far; visited segments hold 0.
    pub priors: Vec<f64>,
    pub calls: Vec<u32>,
    pub clock: f64,
    /// Minute up to which calls have been read into `calls`.
    pub calls_observed_at: f64,
    /// Faults found by the truck, in visiting order.
    pub repairs: Vec<Repair>,
}

/// What the truck learned on arrival at a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub fault_found: bool,
    pub travel: f64,
    /// Repair minutes, charged only when a fault is found.
    pub repair: f64,
}

impl BeliefState {
    pub fn new(priors: Vec<f64>) -> Self {
        let n = priors.len();
        Self {
            priors,
            calls: vec![0; n],
            clock: 0.0,
            calls_observed_at: 0.0,
            repairs: Vec::new(),
        }
    }

    pub fn add_calls(&mut self, calls: impl IntoIterator<Item = SegmentId>, observed_at: f64) {
        for s in calls {
            self.calls[s.0] += 1;
        }
        self.calls_observed_at = self.calls_observed_at.max(observed_at);
    }

    /// Visiting `seg` zeroes its prior; a found fault is repaired and remembered.
    /// `new_calls` are the calls received up to the new clock, or `None` while
    /// calls are frozen.
    pub fn transition(&self, seg: SegmentId, obs: Observation, new_calls: Option<&[SegmentId]>) -> Self {
        let mut next = self.clone();
        next.apply(seg, obs, new_calls);
        next
    }

    pub fn apply(&mut self, seg: SegmentId, obs: Observation, new_calls: Option<&[SegmentId]>) {
        self.priors[seg.0] = 0.0;
        self.clock += obs.travel;
        if obs.fault_found {
            self.clock += obs.repair;
            self.repairs.push(Repair {
                segment: seg,
                completed: self.clock,
            });
        }
        if let Some(calls) = new_calls {
            let clock = self.clock;
            self.add_calls(calls.iter().copied(), clock);
        }
    }

    pub fn repaired(&self, seg: SegmentId) -> Option<f64> {
        self.repairs.iter().find(|r| r.segment == seg).map(|r| r.completed)
    }

    fn check(&self, topology: &GridTopology) -> Result<(), BeliefError> {
        let n = topology.num_segments();
        for got in [self.priors.len(), self.calls.len()] {
            if got != n {
                return Err(BeliefError::Size { got, expected: n });
            }
        }
        Ok(())
    }
}

/// Binomial mass of `k` successes in `n` trials, in logs; `-inf` when impossible.
pub fn ln_binomial_mass(n: u32, k: u32, q: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let mut out = ln_binomial(n as u64, k as u64);
    if k > 0 {
        if q <= 0.0 {
            return f64::NEG_INFINITY;
        }
        out += k as f64 * q.ln();
    }
    if n > k {
        if q >= 1.0 {
            return f64::NEG_INFINITY;
        }
        out += (n - k) as f64 * (-q).ln_1p();
    }
    out
}

/// `p(H | L)` for a fault set with no repairs and every call already observed.
pub fn likelihood(
    topology: &GridTopology,
    faults: &[SegmentId],
    calls: &[u32],
    rho: f64,
) -> Result<f64, BeliefError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(BeliefError::Rho(rho));
    }
    let mut out = vec![false; topology.num_segments()];
    for f in faults {
        for s in topology.outage_closure(*f) {
            out[s.0] = true;
        }
    }
    let mut ln = 0.0;
    for seg in topology.segments() {
        let c = calls[seg.id.0];
        if c > seg.customers {
            return Err(BeliefError::ImpossibleObservation {
                segment: seg.id,
                calls: c,
                customers: seg.customers,
            });
        }
        let q = if out[seg.id.0] { rho } else { 0.0 };
        ln += ln_binomial_mass(seg.customers, c, q);
    }
    Ok(ln.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosteriorLimits {
    pub exact_limit: usize,
    pub k_max: usize,
}

impl Default for PosteriorLimits {
    fn default() -> Self {
        Self {
            exact_limit: 20,
            k_max: 4,
        }
    }
}

impl From<&SimConfig> for PosteriorLimits {
    fn from(c: &SimConfig) -> Self {
        Self {
            exact_limit: c.exact_limit,
            k_max: c.k_max,
        }
    }
}

/// Marginal fault posteriors per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub probs: Vec<f64>,
    /// Largest simultaneous-fault cap used on a truncated circuit, if any.
    pub support_truncation: Option<usize>,
    truncations: Vec<Option<usize>>,
}

impl Posterior {
    pub fn get(&self, seg: SegmentId) -> f64 {
        self.probs[seg.0]
    }

    /// Recomputes the circuit containing `seg` after a belief change that
    /// touched only that circuit.
    pub fn refresh_circuit_of(
        &mut self,
        seg: SegmentId,
        belief: &BeliefState,
        topology: &GridTopology,
        model: &CallModel,
        limits: PosteriorLimits,
    ) -> Result<(), BeliefError> {
        let ci = topology.segment(seg).circuit;
        let t = circuit_posterior(topology, ci, belief, model, limits, &mut self.probs)?;
        self.truncations[ci] = t;
        self.support_truncation = self.truncations.iter().flatten().copied().max();
        Ok(())
    }

    /// Writes a `segment,posterior` table.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "segment,posterior")?;
        for (i, p) in self.probs.iter().enumerate() {
            writeln!(w, "{i},{p}")?;
        }
        Ok(())
    }
}

pub fn posterior(
    belief: &BeliefState,
    topology: &GridTopology,
    model: &CallModel,
    limits: PosteriorLimits,
) -> Result<Posterior, BeliefError> {
    belief.check(topology)?;
    if !(0.0..=1.0).contains(&model.rho) {
        return Err(BeliefError::Rho(model.rho));
    }
    for seg in topology.segments() {
        let c = belief.calls[seg.id.0];
        if c > seg.customers {
            return Err(BeliefError::ImpossibleObservation {
                segment: seg.id,
                calls: c,
                customers: seg.customers,
            });
        }
    }
    let mut probs = vec![0.0; topology.num_segments()];
    let mut truncations = Vec::with_capacity(topology.circuits().len());
    for ci in 0..topology.circuits().len() {
        truncations.push(circuit_posterior(topology, ci, belief, model, limits, &mut probs)?);
    }
    Ok(Posterior {
        probs,
        support_truncation: truncations.iter().flatten().copied().max(),
        truncations,
    })
}

struct Enumeration<'a> {
    prior: &'a [f64],
    ln_on: Vec<f64>,
    ln_off: Vec<f64>,
    parent: Vec<Option<usize>>,
    customers: Vec<u32>,
    calls: Vec<u32>,
    ln_choose: Vec<f64>,
    repaired: Vec<f64>,
    model: CallModel,
    observed_at: f64,
    cap: usize,
    // DFS scratch
    unrepaired_out: Vec<bool>,
    restored_by: Vec<f64>,
    chosen: Vec<usize>,
    // running log-sum-exp accumulators
    shift: f64,
    total: f64,
    marginal: Vec<f64>,
}

impl Enumeration<'_> {
    fn segment_ln(&self, j: usize, unrepaired: bool, restored_by: f64) -> f64 {
        let restored = if unrepaired { f64::INFINITY } else { restored_by };
        let q = self.model.call_probability(self.observed_at, restored);
        let (n, k) = (self.customers[j], self.calls[j]);
        if n == 0 {
            return 0.0;
        }
        let mut out = self.ln_choose[j];
        if k > 0 {
            if q <= 0.0 {
                return f64::NEG_INFINITY;
            }
            out += k as f64 * q.ln();
        }
        if n > k {
            if q >= 1.0 {
                return f64::NEG_INFINITY;
            }
            out += (n - k) as f64 * (-q).ln_1p();
        }
        out
    }

    fn visit(&mut self, j: usize, ln_w: f64) {
        if j == self.prior.len() {
            self.accumulate(ln_w);
            return;
        }
        let (parent_out, parent_restored) = match self.parent[j] {
            Some(p) => (self.unrepaired_out[p], self.restored_by[p]),
            None => (false, 0.0),
        };
        let restored_by = parent_restored.max(self.repaired[j]);
        self.restored_by[j] = restored_by;
        let p = self.prior[j];
        if p < 1.0 {
            self.unrepaired_out[j] = parent_out;
            let lw = ln_w + self.ln_off[j] + self.segment_ln(j, parent_out, restored_by);
            if lw > f64::NEG_INFINITY {
                self.visit(j + 1, lw);
            }
        }
        if p > 0.0 && self.chosen.len() < self.cap {
            self.unrepaired_out[j] = true;
            let lw = ln_w + self.ln_on[j] + self.segment_ln(j, true, restored_by);
            if lw > f64::NEG_INFINITY {
                self.chosen.push(j);
                self.visit(j + 1, lw);
                self.chosen.pop();
            }
        }
    }

    fn accumulate(&mut self, ln_w: f64) {
        if ln_w > self.shift {
            let scale = (self.shift - ln_w).exp();
            self.total *= scale;
            for m in &mut self.marginal {
                *m *= scale;
            }
            self.shift = ln_w;
        }
        let w = (ln_w - self.shift).exp();
        self.total += w;
        for &j in &self.chosen {
            self.marginal[j] += w;
        }
    }
}

/// Posterior for one circuit, written into `probs`. Returns the fault cap if
/// the support was truncated.
fn circuit_posterior(
    topology: &GridTopology,
    ci: usize,
    belief: &BeliefState,
    model: &CallModel,
    limits: PosteriorLimits,
    probs: &mut [f64],
) -> Result<Option<usize>, BeliefError> {
    let circuit = &topology.circuits()[ci];
    let range = circuit.segments.clone();
    let lo = range.start;
    let n = range.len();
    let prior = &belief.priors[range.clone()];
    let nonzero = prior.iter().filter(|&&p| p > 0.0).count();

    let mut repaired = vec![0.0; n];
    for r in &belief.repairs {
        if range.contains(&r.segment.0) {
            repaired[r.segment.0 - lo] = r.completed;
        }
    }
    let segs = &topology.segments()[range.clone()];
    let mut e = Enumeration {
        prior,
        ln_on: prior.iter().map(|p| p.ln()).collect(),
        ln_off: prior.iter().map(|p| (-p).ln_1p()).collect(),
        parent: segs.iter().map(|s| s.parent.map(|p| p.0 - lo)).collect(),
        customers: segs.iter().map(|s| s.customers).collect(),
        calls: belief.calls[range.clone()].to_vec(),
        ln_choose: segs
            .iter()
            .map(|s| ln_binomial(s.customers as u64, belief.calls[s.id.0].min(s.customers) as u64))
            .collect(),
        repaired,
        model: *model,
        observed_at: belief.calls_observed_at,
        cap: usize::MAX,
        unrepaired_out: vec![false; n],
        restored_by: vec![0.0; n],
        chosen: Vec::new(),
        shift: f64::NEG_INFINITY,
        total: 0.0,
        marginal: vec![0.0; n],
    };

    let exact = nonzero <= limits.exact_limit;
    let mut cap = if exact { nonzero } else { limits.k_max.min(nonzero) };
    loop {
        e.cap = cap;
        e.shift = f64::NEG_INFINITY;
        e.total = 0.0;
        e.marginal.iter_mut().for_each(|m| *m = 0.0);
        e.visit(0, 0.0);
        if e.total > 0.0 || cap >= nonzero {
            break;
        }
        cap += 1;
    }
    if !(e.total > 0.0) {
        return Err(BeliefError::Inconsistent(circuit.id));
    }
    for (j, m) in e.marginal.iter().enumerate() {
        probs[lo + j] = (m / e.total).clamp(0.0, 1.0);
    }
    Ok((!exact).then_some(cap))
}

/// Expected customers without power when segment faults are independent with
/// the given marginals.
pub fn expected_customers_out(probs: &[f64], topology: &GridTopology) -> f64 {
    topology
        .segments()
        .iter()
        .map(|s| {
            let powered: f64 = topology
                .outage_sources(s.id)
                .iter()
                .map(|k| 1.0 - probs[k.0])
                .product();
            (1.0 - powered) * s.customers as f64
        })
        .sum()
}

/// True when every segment's posterior is below `threshold`.
pub fn stop_condition(probs: &[f64], threshold: f64) -> bool {
    probs.iter().all(|&p| p < threshold)
}
