//! Minimum customer-outage tours over a revealed fault set.
//!
//! Once the faults are known, routing the truck is a minimum-latency TSP in
//! which each stop is weighted by the customers still out before it. Small
//! instances are solved exactly by a subset DP; larger ones by a greedy start
//! plus 2-opt and or-opt.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridTopology, SegmentId};

#[derive(Debug, Error, PartialEq)]
pub enum TourError {
    #[error("{faults} faults exceed the exact limit of {limit}; use heuristic_tour")]
    TooLarge { faults: usize, limit: usize },
}

/// Customers out under `true_faults` once `repaired` have been fixed.
pub fn outage_weight(topology: &GridTopology, true_faults: &[SegmentId], repaired: &[SegmentId]) -> u64 {
    topology
        .segments()
        .iter()
        .filter(|s| {
            topology
                .outage_sources(s.id)
                .iter()
                .any(|k| true_faults.contains(k) && !repaired.contains(k))
        })
        .map(|s| s.customers as u64)
        .sum()
}

/// A group of customers that regains power once every listed fault is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageTerm {
    pub faults: Vec<usize>,
    pub customers: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyInstance {
    /// Fault segments; DP node `j + 1` is `faults[j]`, node 0 the start.
    pub faults: Vec<SegmentId>,
    /// `(n + 1) x (n + 1)` row-major travel minutes.
    pub travel: Vec<f64>,
    pub repair: Vec<f64>,
    pub terms: Vec<OutageTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub segment: SegmentId,
    pub arrival: f64,
    pub completion: f64,
    pub restored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourResult {
    /// Indices into [`LatencyInstance::faults`].
    pub order: Vec<usize>,
    pub cost: f64,
    pub per_stop: Vec<Stop>,
}

impl LatencyInstance {
    /// Builds the instance for `faults` with the truck at road node `start`.
    pub fn from_grid(
        topology: &GridTopology,
        faults: &[SegmentId],
        start: usize,
        repair: Vec<f64>,
        traffic: f64,
    ) -> Self {
        let n = faults.len();
        let roads: Vec<usize> = std::iter::once(start)
            .chain(faults.iter().map(|&f| topology.segment_road(f)))
            .collect();
        let mut travel = vec![0.0; (n + 1) * (n + 1)];
        for (a, &ra) in roads.iter().enumerate() {
            for (b, &rb) in roads.iter().enumerate() {
                travel[a * (n + 1) + b] = topology.travel_between(ra, rb) * traffic;
            }
        }
        let index = |s: SegmentId| faults.iter().position(|&f| f == s);
        let mut terms: Vec<OutageTerm> = Vec::new();
        let mut seen = vec![false; topology.num_segments()];
        for &f in faults {
            for &s in topology.outage_closure(f) {
                if std::mem::replace(&mut seen[s.0], true) {
                    continue;
                }
                let customers = topology.segment(s).customers as f64;
                if customers == 0.0 {
                    continue;
                }
                let mut sources: Vec<usize> = topology
                    .outage_sources(s)
                    .iter()
                    .filter_map(|&k| index(k))
                    .collect();
                sources.sort_unstable();
                match terms.iter_mut().find(|t| t.faults == sources) {
                    Some(t) => t.customers += customers,
                    None => terms.push(OutageTerm {
                        faults: sources,
                        customers,
                    }),
                }
            }
        }
        Self {
            faults: faults.to_vec(),
            travel,
            repair,
            terms,
        }
    }

    pub fn len(&self) -> usize {
        self.faults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    /// Travel between DP nodes (0 = start, `j + 1` = fault `j`).
    #[inline]
    pub fn t(&self, a: usize, b: usize) -> f64 {
        self.travel[a * (self.len() + 1) + b]
    }

    /// Customers still out after repairing the faults in `done`.
    pub fn f(&self, done: &[bool]) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.faults.iter().any(|&j| !done[j]))
            .map(|t| t.customers)
            .sum()
    }

    /// `f` for every subset as a bitmask table.
    fn weight_table(&self) -> Vec<f64> {
        let n = self.len();
        let size = 1usize << n;
        let total: f64 = self.terms.iter().map(|t| t.customers).sum();
        let mut fixed = vec![0.0; size];
        for t in &self.terms {
            let m = t.faults.iter().fold(0usize, |m, &j| m | 1 << j);
            fixed[m] += t.customers;
        }
        for bit in 0..n {
            for m in 0..size {
                if m >> bit & 1 == 1 {
                    fixed[m] += fixed[m ^ (1 << bit)];
                }
            }
        }
        fixed.iter().map(|h| total - h).collect()
    }

    /// Replays `order` and reports the outage-minute cost with per-stop detail.
    pub fn evaluate(&self, order: &[usize]) -> TourResult {
        let mut done = vec![false; self.len()];
        let mut remaining: Vec<usize> = self.terms.iter().map(|t| t.faults.len()).collect();
        let mut out: f64 = self
            .terms
            .iter()
            .filter(|t| !t.faults.is_empty())
            .map(|t| t.customers)
            .sum();
        let mut clock = 0.0;
        let mut cost = 0.0;
        let mut prev = 0;
        let mut per_stop = Vec::with_capacity(order.len());
        for &j in order {
            let leg = self.t(prev, j + 1) + self.repair[j];
            let arrival = clock + self.t(prev, j + 1);
            cost += out * leg;
            clock += leg;
            let mut restored = 0.0;
            if !std::mem::replace(&mut done[j], true) {
                for (ti, t) in self.terms.iter().enumerate() {
                    if t.faults.contains(&j) {
                        remaining[ti] -= 1;
                        if remaining[ti] == 0 {
                            restored += t.customers;
                        }
                    }
                }
            }
            out -= restored;
            per_stop.push(Stop {
                segment: self.faults[j],
                arrival,
                completion: clock,
                restored,
            });
            prev = j + 1;
        }
        TourResult {
            order: order.to_vec(),
            cost,
            per_stop,
        }
    }

    fn cost_of(&self, order: &[usize], scratch: &mut Vec<usize>) -> f64 {
        scratch.clear();
        scratch.extend(self.terms.iter().map(|t| t.faults.len()));
        let mut out: f64 = self.terms.iter().filter(|t| !t.faults.is_empty()).map(|t| t.customers).sum();
        let mut cost = 0.0;
        let mut prev = 0;
        for &j in order {
            cost += out * (self.t(prev, j + 1) + self.repair[j]);
            for (ti, t) in self.terms.iter().enumerate() {
                if t.faults.contains(&j) {
                    scratch[ti] -= 1;
                    if scratch[ti] == 0 {
                        out -= t.customers;
                    }
                }
            }
            prev = j + 1;
        }
        cost
    }
}

/// Exact subset DP over `(visited set, last fault)`.
pub fn held_karp(inst: &LatencyInstance, limit: usize) -> Result<TourResult, TourError> {
    let n = inst.len();
    if n > limit || n >= usize::BITS as usize - 1 {
        return Err(TourError::TooLarge { faults: n, limit });
    }
    if n == 0 {
        return Ok(inst.evaluate(&[]));
    }
    let size = 1usize << n;
    let f = inst.weight_table();
    let mut cost = vec![f64::INFINITY; size * n];
    let mut from = vec![u8::MAX; size * n];
    for j in 0..n {
        cost[(1 << j) * n + j] = f[0] * (inst.t(0, j + 1) + inst.repair[j]);
    }
    for mask in 1..size {
        if mask.count_ones() < 2 {
            continue;
        }
        for j in 0..n {
            if mask >> j & 1 == 0 {
                continue;
            }
            let prev = mask ^ (1 << j);
            let w = f[prev];
            let mut best = f64::INFINITY;
            let mut arg = u8::MAX;
            for i in 0..n {
                if prev >> i & 1 == 0 {
                    continue;
                }
                let c = cost[prev * n + i] + w * (inst.t(i + 1, j + 1) + inst.repair[j]);
                if c < best {
                    best = c;
                    arg = i as u8;
                }
            }
            cost[mask * n + j] = best;
            from[mask * n + j] = arg;
        }
    }
    let full = size - 1;
    let mut last = 0;
    for j in 1..n {
        if cost[full * n + j] < cost[full * n + last] {
            last = j;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full;
    let mut j = last;
    loop {
        order.push(j);
        let p = from[mask * n + j];
        mask ^= 1 << j;
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    order.reverse();
    let mut result = inst.evaluate(&order);
    result.cost = cost[full * n + last];
    Ok(result)
}

/// Greedy order visiting the nearest remaining fault (travel plus repair).
pub fn nearest_neighbor(inst: &LatencyInstance) -> Vec<usize> {
    let n = inst.len();
    let mut left: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    let mut at = 0;
    while !left.is_empty() {
        let (k, _) = left
            .iter()
            .enumerate()
            .map(|(k, &j)| (k, inst.t(at, j + 1) + inst.repair[j]))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        let j = left.remove(k);
        order.push(j);
        at = j + 1;
    }
    order
}

/// Greedy order maximizing customers restored per minute of the next leg.
fn ratio_greedy(inst: &LatencyInstance) -> Vec<usize> {
    let n = inst.len();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut at = 0;
    for _ in 0..n {
        let before = inst.f(&done);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for j in 0..n {
            if done[j] {
                continue;
            }
            done[j] = true;
            let gain = before - inst.f(&done);
            done[j] = false;
            let score = gain / (inst.t(at, j + 1) + inst.repair[j]).max(1e-12);
            if score > best.0 {
                best = (score, j);
            }
        }
        done[best.1] = true;
        order.push(best.1);
        at = best.1 + 1;
    }
    order
}

/// Local search from the better of two greedy starts, improving with segment
/// reversals and block moves until neither helps.
pub fn heuristic_tour(inst: &LatencyInstance) -> TourResult {
    let mut scratch = Vec::new();
    let a = nearest_neighbor(inst);
    let b = ratio_greedy(inst);
    let (mut order, mut best) = {
        let (ca, cb) = (inst.cost_of(&a, &mut scratch), inst.cost_of(&b, &mut scratch));
        if cb < ca {
            (b, cb)
        } else {
            (a, ca)
        }
    };
    let n = order.len();
    let eps = 1e-9;
    let mut cand = order.clone();
    loop {
        let mut improved = false;
        for i in 0..n {
            for k in i + 1..n {
                cand.copy_from_slice(&order);
                cand[i..=k].reverse();
                let c = inst.cost_of(&cand, &mut scratch);
                if c < best - eps {
                    order.copy_from_slice(&cand);
                    best = c;
                    improved = true;
                }
            }
        }
        for len in 1..=3.min(n) {
            for i in 0..=n - len {
                for dest in 0..=n - len {
                    if dest == i {
                        continue;
                    }
                    cand.clear();
                    cand.extend(order[..i].iter().chain(&order[i + len..]));
                    let block: Vec<usize> = order[i..i + len].to_vec();
                    cand.splice(dest..dest, block);
                    let c = inst.cost_of(&cand, &mut scratch);
                    if c < best - eps {
                        order.copy_from_slice(&cand);
                        best = c;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    inst.evaluate(&order)
}

/// Exact tour when small enough, local search otherwise.
pub fn best_tour(inst: &LatencyInstance, hk_max: usize) -> (TourResult, bool) {
    match held_karp(inst, hk_max) {
        Ok(t) => (t, true),
        Err(_) => (heuristic_tour(inst), false),
    }
}

/// Outage-minutes of the optimal tour on one fault set drawn from `probs`,
/// starting at road node `start`.
pub fn rollout_value<R: Rng>(
    topology: &GridTopology,
    probs: &[f64],
    start: usize,
    repair_minutes: f64,
    traffic: f64,
    hk_max: usize,
    rng: &mut R,
) -> f64 {
    let faults: Vec<SegmentId> = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0 && rng.gen::<f64>() < p)
        .map(|(i, _)| SegmentId(i))
        .collect();
    sample_path_value(topology, &faults, start, repair_minutes, traffic, hk_max)
}

pub fn sample_path_value(
    topology: &GridTopology,
    faults: &[SegmentId],
    start: usize,
    repair_minutes: f64,
    traffic: f64,
    hk_max: usize,
) -> f64 {
    if faults.is_empty() {
        return 0.0;
    }
    let inst = LatencyInstance::from_grid(topology, faults, start, vec![repair_minutes; faults.len()], traffic);
    best_tour(&inst, hk_max).0.cost
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::grid::fixtures::chain_doc;
    use crate::grid::{build_topology, NodeKind::*};
    use crate::seeds;

    fn nested_grid() -> GridTopology {
        // root segment (5 customers) feeding a middle device (7) feeding a leaf (11),
        // plus a sibling branch (13) under the root
        build_topology(&chain_doc(vec![vec![
            (0, Substation, 0, None),
            (1, Transformer, 5, Some(0)),
            (2, ProtectiveDevice, 0, Some(0)),
            (3, Transformer, 7, Some(2)),
            (4, ProtectiveDevice, 0, Some(2)),
            (5, Transformer, 11, Some(4)),
            (6, ProtectiveDevice, 0, Some(0)),
            (7, Transformer, 13, Some(6)),
        ]]))
        .unwrap()
    }

    #[test]
    fn outage_weight_examples() {
        let g = nested_grid();
        let all: Vec<_> = (0..4).map(SegmentId).collect();
        assert_eq!(outage_weight(&g, &all, &all), 0);
        assert_eq!(outage_weight(&g, &[SegmentId(0)], &[]), 36);
        // upstream middle fault fixed, leaf fault remains: only the leaf is dark
        assert_eq!(outage_weight(&g, &[SegmentId(1), SegmentId(2)], &[SegmentId(1)]), 11);
    }

    #[test]
    fn trivial_tours() {
        let empty = LatencyInstance {
            faults: vec![],
            travel: vec![0.0],
            repair: vec![],
            terms: vec![],
        };
        let r = held_karp(&empty, 20).unwrap();
        assert!(r.order.is_empty());
        assert_eq!(r.cost, 0.0);
        let one = LatencyInstance {
            faults: vec![SegmentId(0)],
            travel: vec![0.0, 2.0, 2.0, 0.0],
            repair: vec![1.0],
            terms: vec![OutageTerm {
                faults: vec![0],
                customers: 10.0,
            }],
        };
        assert_eq!(held_karp(&one, 20).unwrap().cost, 30.0);
        assert_eq!(heuristic_tour(&one).cost, 30.0);
    }

    #[test]
    fn held_karp_matches_permutations_on_four_faults() {
        let mut rng = seeds::rng(4);
        let inst = random_instance(4, &mut rng);
        let brute = permutations(4)
            .iter()
            .map(|p| brute_cost(&inst, p))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(held_karp(&inst, 20).unwrap().cost, brute);
    }

    #[test]
    fn held_karp_matches_permutations_up_to_eight() {
        let mut rng = seeds::rng(77);
        for trial in 0..200 {
            let n = 1 + trial % 8;
            let inst = random_instance(n, &mut rng);
            let brute = permutations(n)
                .iter()
                .map(|p| brute_cost(&inst, p))
                .fold(f64::INFINITY, f64::min);
            let hk = held_karp(&inst, 20).unwrap();
            assert_eq!(hk.cost, brute, "trial {trial}");
            assert_eq!(brute_cost(&inst, &hk.order), hk.cost);
        }
    }

    #[test]
    fn replay_reproduces_reported_cost() {
        let mut rng = seeds::rng(8);
        for _ in 0..50 {
            let inst = random_instance(7, &mut rng);
            let r = held_karp(&inst, 20).unwrap();
            assert_eq!(inst.evaluate(&r.order).cost, r.cost);
            let restored: f64 = r.per_stop.iter().map(|s| s.restored).sum();
            assert_eq!(restored, inst.terms.iter().map(|t| t.customers).sum::<f64>());
        }
    }

    #[test]
    fn removing_a_fault_never_costs_more() {
        let g = nested_grid();
        let all: Vec<_> = (0..4).map(SegmentId).collect();
        let cost = |fs: &[SegmentId]| {
            let inst = LatencyInstance::from_grid(&g, fs, g.depot(), vec![60.0; fs.len()], 1.0);
            held_karp(&inst, 20).unwrap().cost
        };
        let full = cost(&all);
        for k in 0..4 {
            let fewer: Vec<_> = all.iter().copied().filter(|s| s.0 != k).collect();
            assert!(cost(&fewer) <= full);
        }
    }

    #[test]
    fn too_large_is_refused() {
        let mut rng = seeds::rng(1);
        let inst = random_instance(5, &mut rng);
        assert_eq!(held_karp(&inst, 4).unwrap_err(), TourError::TooLarge { faults: 5, limit: 4 });
    }

    #[test]
    fn heuristic_is_exact_for_two_faults() {
        let mut rng = seeds::rng(2);
        for n in 0..=2 {
            for _ in 0..20 {
                let inst = random_instance(n, &mut rng);
                assert_eq!(heuristic_tour(&inst).cost, held_karp(&inst, 20).unwrap().cost);
            }
        }
    }

    #[test]
    fn heuristic_near_optimal_on_eight_faults() {
        let mut rng = seeds::rng(3);
        let mut close = 0;
        for _ in 0..100 {
            let inst = random_instance(8, &mut rng);
            let h = heuristic_tour(&inst).cost;
            let e = held_karp(&inst, 20).unwrap().cost;
            assert!(h >= e - 1e-9);
            if h <= 1.1 * e {
                close += 1;
            }
        }
        assert!(close >= 95, "{close}");
    }

    #[test]
    fn heuristic_handles_thirty_faults() {
        let mut rng = seeds::rng(30);
        let inst = random_instance(30, &mut rng);
        let start = std::time::Instant::now();
        let h = heuristic_tour(&inst);
        assert!(start.elapsed().as_secs_f64() < 1.0);
        let mut scratch = Vec::new();
        assert!(h.cost <= inst.cost_of(&nearest_neighbor(&inst), &mut scratch));
    }

    #[test]
    fn rollout_matches_manual_instance() {
        let g = nested_grid();
        assert_eq!(rollout_value(&g, &[0.0; 4], g.depot(), 60.0, 1.0, 20, &mut seeds::rng(0)), 0.0);
        let probs = [0.0, 1.0, 1.0, 0.0];
        let v = rollout_value(&g, &probs, g.depot(), 60.0, 1.0, 20, &mut seeds::rng(0));
        // depot is road 0; segment 1 sits at road 2, segment 2 at road 4
        // 1 then 2 costs 18*62 + 11*62 = 1798; 2 then 1 leaves everything dark
        // until segment 1 is fixed: 18*64 + 18*62 = 2268
        assert_eq!(v, 1798.0);
        let inst = LatencyInstance::from_grid(&g, &[SegmentId(1), SegmentId(2)], g.depot(), vec![60.0; 2], 1.0);
        assert_eq!(held_karp(&inst, 20).unwrap().cost, v);
    }
}
