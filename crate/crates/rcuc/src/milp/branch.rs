//! Branch and bound over the bounded-variable simplex.
//!
//! Nodes branch on the most-fractional binary (ties to the lowest index),
//! explored best-first by parent LP bound after an initial depth-first dive
//! that seeds the incumbent. One tableau is kept warm across nodes: moving
//! to a node only changes variable bounds and re-optimizes dually.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::presolve::{presolve, Presolved};
use super::simplex::{SolveOutcome, Tableau};
use super::{relative_gap, Integrality, MilpError, MilpModel, MilpSolution, MilpStatus, SolveStats};

#[derive(Debug, Clone)]
pub struct MilpOptions {
    /// Relative-gap stopping rule: (incumbent - bound) / max(1, |incumbent|).
    pub gap: f64,
    pub time_limit_s: f64,
    pub presolve: bool,
    /// Rounding-and-repair heuristic at the root.
    pub heuristic: bool,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions { gap: 1e-3, time_limit_s: 600.0, presolve: true, heuristic: true }
    }
}

impl MilpOptions {
    pub fn exact() -> Self {
        MilpOptions { gap: 0.0, ..Default::default() }
    }

    pub fn with_gap(gap: f64) -> Self {
        MilpOptions { gap, ..Default::default() }
    }
}

/// Full fix list from the root; `u8` is the binary's pinned value.
type FixList = Vec<(u32, u8)>;

struct OpenNode {
    bound: f64,
    seq: u64,
    fixes: FixList,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap pops the maximum: make "better" (smaller bound, then
        // earlier seq) compare greater.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    tab: Tableau,
    pre: &'a Presolved,
    model: &'a MilpModel,
    binaries: Vec<usize>,
    /// Current pin state applied to the tableau, per reduced variable.
    applied: Vec<Option<u8>>,
    incumbent: Option<(f64, Vec<f64>)>,
    heap: BinaryHeap<OpenNode>,
    seq: u64,
    nodes: u64,
    started: Instant,
    time_limit_s: f64,
}

pub(crate) fn solve(model: &MilpModel, options: &MilpOptions) -> Result<MilpSolution, MilpError> {
    let started = Instant::now();
    let owned_pre;
    let pre: &Presolved = if options.presolve {
        owned_pre = presolve(model);
        &owned_pre
    } else {
        owned_pre = Presolved {
            model: model.clone(),
            var_map: (0..model.num_vars()).map(Some).collect(),
            fixed: vec![None; model.num_vars()],
            dropped_rows: 0,
            infeasible: false,
        };
        &owned_pre
    };

    let mut stats = SolveStats {
        presolve_fixed_vars: pre.fixed.iter().filter(|f| f.is_some()).count(),
        presolve_dropped_rows: pre.dropped_rows,
        ..Default::default()
    };

    if pre.infeasible {
        stats.solve_time_s = started.elapsed().as_secs_f64();
        return Ok(infeasible_solution(stats));
    }

    let rm = &pre.model;
    let binaries: Vec<usize> = rm
        .variables
        .iter()
        .enumerate()
        .filter(|(_, v)| v.integrality == Integrality::Binary && v.upper - v.lower > 0.5)
        .map(|(j, _)| j)
        .collect();
    stats.branch_binaries = binaries.len();

    let mut search = Search {
        tab: Tableau::build(rm),
        pre,
        model,
        binaries,
        applied: vec![None; rm.num_vars()],
        incumbent: None,
        heap: BinaryHeap::new(),
        seq: 0,
        nodes: 0,
        started,
        time_limit_s: options.time_limit_s,
    };

    // Root relaxation.
    let root_outcome = search.tab.solve_from_scratch()?;
    match root_outcome {
        SolveOutcome::Infeasible => {
            stats.simplex_iterations = search.tab.iterations();
            stats.solve_time_s = started.elapsed().as_secs_f64();
            return Ok(infeasible_solution(stats));
        }
        SolveOutcome::Unbounded => {
            stats.simplex_iterations = search.tab.iterations();
            stats.solve_time_s = started.elapsed().as_secs_f64();
            return Ok(MilpSolution {
                status: MilpStatus::Unbounded,
                values: Vec::new(),
                objective_value: f64::NEG_INFINITY,
                best_bound: f64::NEG_INFINITY,
                relative_gap: f64::INFINITY,
                stats,
            });
        }
        SolveOutcome::Optimal => {}
    }
    let root_bound = search.tab.objective_value() + rm.objective_offset;

    search.try_incumbent();
    if options.heuristic && search.fractional_binary().is_some() {
        search.rounding_heuristic()?;
    }

    // Initial depth-first dive, then best-first on the open heap.
    let had_incumbent_before_dive = search.incumbent.is_some();
    let mut status_hint = None;
    if search.fractional_binary().is_some() {
        search.dive(root_bound, had_incumbent_before_dive)?;
        loop {
            if search.started.elapsed().as_secs_f64() > search.time_limit_s {
                status_hint = Some(MilpStatus::Feasible);
                break;
            }
            let bound_now = search.global_bound();
            if let Some((inc, _)) = &search.incumbent {
                if relative_gap(*inc, bound_now) <= options.gap {
                    break;
                }
            }
            let Some(node) = search.heap.pop() else { break };
            if let Some((inc, _)) = &search.incumbent {
                if node.bound >= cutoff(*inc) {
                    continue;
                }
            }
            search.process_node(&node.fixes, node.bound, false)?;
        }
    }

    // Assemble the result.
    stats.nodes = search.nodes;
    stats.simplex_iterations = search.tab.iterations();
    stats.solve_time_s = started.elapsed().as_secs_f64();
    let timed_out = matches!(status_hint, Some(MilpStatus::Feasible));
    let open_bound = search.global_bound();

    match search.incumbent {
        Some((obj, values)) => {
            let bound = open_bound.min(obj).max(root_bound.min(obj));
            let gap = relative_gap(obj, bound);
            let status = if gap <= 1e-9 {
                MilpStatus::Optimal
            } else if gap <= options.gap {
                MilpStatus::GapReached
            } else if timed_out {
                MilpStatus::Feasible
            } else {
                // Heap exhausted: bound proof complete.
                MilpStatus::Optimal
            };
            let bound = if status == MilpStatus::Optimal { obj } else { bound };
            Ok(MilpSolution {
                status,
                values,
                objective_value: obj,
                best_bound: bound,
                relative_gap: relative_gap(obj, bound).max(0.0),
                stats,
            })
        }
        None => {
            if timed_out {
                Ok(MilpSolution {
                    status: MilpStatus::Unknown,
                    values: Vec::new(),
                    objective_value: f64::INFINITY,
                    best_bound: open_bound,
                    relative_gap: f64::INFINITY,
                    stats,
                })
            } else {
                Ok(infeasible_solution(stats))
            }
        }
    }
}

fn cutoff(incumbent: f64) -> f64 {
    incumbent - 1e-9 * incumbent.abs().max(1.0)
}

fn infeasible_solution(stats: SolveStats) -> MilpSolution {
    MilpSolution {
        status: MilpStatus::Infeasible,
        values: Vec::new(),
        objective_value: f64::INFINITY,
        best_bound: f64::INFINITY,
        relative_gap: 0.0,
        stats,
    }
}

impl<'a> Search<'a> {
    /// Lower bound over everything still open (the heap is bound-ordered).
    fn global_bound(&self) -> f64 {
        match (self.heap.peek(), &self.incumbent) {
            (Some(top), Some((inc, _))) => top.bound.min(*inc),
            (Some(top), None) => top.bound,
            (None, Some((inc, _))) => *inc,
            (None, None) => f64::INFINITY,
        }
    }

    /// Most fractional unfixed binary in the current LP solution.
    fn fractional_binary(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &j in &self.binaries {
            let x = self.tab.var_value(j);
            let frac = (x - x.round()).abs();
            if frac <= 1e-6 {
                continue;
            }
            let dist = x.fract().min(1.0 - x.fract()).abs();
            match best {
                Some((_, d)) if dist <= d => {}
                _ => best = Some((j, dist)),
            }
        }
        best
    }

    /// Accepts the current LP point as incumbent when integral and feasible.
    /// A rejected audit triggers one refresh of the tableau state from its
    /// basis (recovering from accumulated pivot drift) and a retry.
    fn try_incumbent(&mut self) -> bool {
        for attempt in 0..2 {
            if self.fractional_binary().is_some() {
                return false;
            }
            let reduced = self.tab.structural_values();
            let full = self.pre.postsolve(&reduced);
            if self.model.check_feasible(&full, 1e-6).is_none() {
                let obj = self.model.objective_value(&full);
                let better = self.incumbent.as_ref().map_or(true, |(best, _)| obj < *best);
                if better {
                    self.incumbent = Some((obj, full));
                }
                return better;
            }
            if attempt == 0 {
                if !self.tab.refresh_and_check() {
                    let _ = self.tab.reoptimize();
                }
            }
        }
        false
    }

    /// Applies a node's pin set to the tableau (diff against what is active).
    fn apply_fixes(&mut self, fixes: &FixList) {
        let mut target: Vec<Option<u8>> = vec![None; self.applied.len()];
        for &(j, v) in fixes {
            target[j as usize] = Some(v);
        }
        for &j in &self.binaries.clone() {
            if target[j] != self.applied[j] {
                let (lo, hi) = match target[j] {
                    Some(0) => (0.0, 0.0),
                    Some(_) => (1.0, 1.0),
                    None => (0.0, 1.0),
                };
                self.tab.set_var_bounds(j, lo, hi);
                self.applied[j] = target[j];
            }
        }
    }

    /// Solves one node, updates the incumbent, and pushes children.
    /// Returns the node's LP objective when it branched.
    fn process_node(&mut self, fixes: &FixList, _parent_bound: f64, diving: bool) -> Result<Option<(f64, FixList, FixList)>, MilpError> {
        self.nodes += 1;
        self.apply_fixes(fixes);
        match self.tab.reoptimize()? {
            SolveOutcome::Infeasible => return Ok(None),
            SolveOutcome::Unbounded => {
                return Err(MilpError::Numerical(
                    "node became unbounded after bound tightening".into(),
                ))
            }
            SolveOutcome::Optimal => {}
        }
        let obj = self.tab.objective_value() + self.pre.model.objective_offset;
        if let Some((inc, _)) = &self.incumbent {
            if obj >= cutoff(*inc) {
                return Ok(None);
            }
        }
        let Some((j, _)) = self.fractional_binary() else {
            self.try_incumbent();
            return Ok(None);
        };

        let x = self.tab.var_value(j);
        let preferred: u8 = if x >= 0.5 { 1 } else { 0 };
        let mut first = fixes.clone();
        first.push((j as u32, preferred));
        let mut second = fixes.clone();
        second.push((j as u32, 1 - preferred));
        if diving {
            Ok(Some((obj, first, second)))
        } else {
            for fixes in [first, second] {
                self.seq += 1;
                self.heap.push(OpenNode { bound: obj, seq: self.seq, fixes });
            }
            Ok(None)
        }
    }

    /// Depth-first dive from the root, stashing siblings on the heap.
    fn dive(&mut self, root_bound: f64, stop_at_first_incumbent: bool) -> Result<(), MilpError> {
        let mut fixes: FixList = Vec::new();
        let mut bound = root_bound;
        for _depth in 0..2 * self.binaries.len() + 4 {
            if self.started.elapsed().as_secs_f64() > self.time_limit_s {
                return Ok(());
            }
            match self.process_node(&fixes.clone(), bound, true)? {
                None => break,
                Some((obj, first, second)) => {
                    self.seq += 1;
                    self.heap.push(OpenNode { bound: obj, seq: self.seq, fixes: second });
                    fixes = first;
                    bound = obj;
                }
            }
            if stop_at_first_incumbent && self.incumbent.is_some() {
                break;
            }
        }
        Ok(())
    }

    /// Rounding-and-repair at the root: pin near-integral binaries all at
    /// once; then pin remaining fractional ones one at a time, flipping a
    /// pin whose fix turns the LP infeasible. Restores root bounds after.
    fn rounding_heuristic(&mut self) -> Result<(), MilpError> {
        let mut pins: FixList = Vec::new();
        for &j in &self.binaries {
            let x = self.tab.var_value(j);
            if (x - x.round()).abs() <= 1e-6 {
                pins.push((j as u32, if x.round() >= 0.5 { 1 } else { 0 }));
            }
        }
        self.apply_fixes(&pins.clone());
        let mut alive = matches!(self.tab.reoptimize()?, SolveOutcome::Optimal);

        let mut steps = 0;
        while alive && steps < 200 {
            steps += 1;
            let Some((j, _)) = self.fractional_binary() else { break };
            let x = self.tab.var_value(j);
            let rounded: u8 = if x >= 0.5 { 1 } else { 0 };
            pins.push((j as u32, rounded));
            self.apply_fixes(&pins.clone());
            if matches!(self.tab.reoptimize()?, SolveOutcome::Optimal) {
                continue;
            }
            // Repair: flip the pin.
            pins.last_mut().expect("just pushed").1 = 1 - rounded;
            self.apply_fixes(&pins.clone());
            alive = matches!(self.tab.reoptimize()?, SolveOutcome::Optimal);
        }
        if alive {
            self.try_incumbent();
        }
        // Back to the root relaxation.
        self.apply_fixes(&Vec::new());
        match self.tab.reoptimize()? {
            SolveOutcome::Optimal => Ok(()),
            _ => Err(MilpError::Numerical("root relaxation lost after heuristic".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{solve_lp, solve_milp, MilpModel, MilpStatus, Sense};
    use super::MilpOptions;

    /// 0/1 knapsack oracle by exhaustive enumeration (minimization form).
    fn knapsack_best(values: &[f64], weights: &[f64], cap: f64) -> f64 {
        let n = values.len();
        let mut best = 0.0f64;
        for mask in 0u32..1 << n {
            let mut w = 0.0;
            let mut v = 0.0;
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    w += weights[i];
                    v += values[i];
                }
            }
            if w <= cap {
                best = best.max(v);
            }
        }
        -best
    }

    fn knapsack_model(values: &[f64], weights: &[f64], cap: f64) -> MilpModel {
        let mut m = MilpModel::new();
        let xs: Vec<_> = (0..values.len()).map(|i| m.add_binary(format!("x{i}"))).collect();
        for (i, &x) in xs.iter().enumerate() {
            m.set_obj(x, -values[i]);
        }
        let row: Vec<_> = xs.iter().enumerate().map(|(i, &x)| (x, weights[i])).collect();
        m.add_row(Sense::Le, cap, &row);
        m
    }

    #[test]
    fn all_binaries_fixed_reduces_to_lp() {
        let mut m = MilpModel::new();
        let a = m.add_var("a", 1.0, 1.0, super::Integrality::Binary);
        let x = m.add_continuous("x", 0.0, 10.0);
        m.set_obj(x, 1.0);
        m.add_row(Sense::Ge, 3.0, &[(x, 1.0), (a, 1.0)]);
        let milp = solve_milp(&m, &MilpOptions::exact()).unwrap();
        let lp = solve_lp(&m).unwrap();
        assert_eq!(milp.status, MilpStatus::Optimal);
        assert!((milp.objective_value - lp.objective).abs() < 1e-9);
        assert!((milp.objective_value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn knapsack_10_items_matches_enumeration() {
        let values = [16.0, 22.0, 12.0, 8.0, 11.0, 19.0, 5.0, 14.0, 9.0, 17.0];
        let weights = [5.0, 7.0, 4.0, 3.0, 4.0, 6.0, 2.0, 6.0, 3.0, 5.0];
        let cap = 18.0;
        let m = knapsack_model(&values, &weights, cap);
        let sol = solve_milp(&m, &MilpOptions::exact()).unwrap();
        let best = knapsack_best(&values, &weights, cap);
        assert_eq!(sol.status, MilpStatus::Optimal);
        assert!(
            (sol.objective_value - best).abs() < 1e-6,
            "solver {} vs enumeration {best}",
            sol.objective_value
        );
        assert!(sol.best_bound <= sol.objective_value + 1e-9);
    }

    #[test]
    fn loose_gap_is_certified_by_bound() {
        let values = [16.0, 22.0, 12.0, 8.0, 11.0, 19.0, 5.0, 14.0, 9.0, 17.0];
        let weights = [5.0, 7.0, 4.0, 3.0, 4.0, 6.0, 2.0, 6.0, 3.0, 5.0];
        let cap = 18.0;
        let m = knapsack_model(&values, &weights, cap);
        let sol = solve_milp(&m, &MilpOptions::with_gap(0.5)).unwrap();
        let best = knapsack_best(&values, &weights, cap);
        assert!(matches!(sol.status, MilpStatus::Optimal | MilpStatus::GapReached));
        // Objective within 50% of optimum, certified by the returned bound.
        assert!(sol.best_bound <= best + 1e-9);
        assert!(sol.objective_value - sol.best_bound <= 0.5 * sol.objective_value.abs().max(1.0) + 1e-9);
    }

    #[test]
    fn infeasible_binary_system_detected() {
        let mut m = MilpModel::new();
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        m.add_row(Sense::Ge, 2.0, &[(a, 1.0), (b, 1.0)]);
        m.add_row(Sense::Le, 1.0, &[(a, 1.0), (b, 1.0)]);
        let sol = solve_milp(&m, &MilpOptions::exact()).unwrap();
        assert_eq!(sol.status, MilpStatus::Infeasible);
    }

    #[test]
    fn determinism_same_model_same_incumbent() {
        let values = [7.0, 3.0, 9.0, 4.0, 6.0, 8.0, 2.0, 5.0];
        let weights = [3.0, 2.0, 4.0, 2.0, 3.0, 4.0, 1.0, 3.0];
        let m = knapsack_model(&values, &weights, 9.0);
        let a = solve_milp(&m, &MilpOptions::exact()).unwrap();
        let b = solve_milp(&m, &MilpOptions::exact()).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.objective_value, b.objective_value);
        assert_eq!(a.stats.nodes, b.stats.nodes);
    }
}
