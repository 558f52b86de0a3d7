//! Root presolve: bound tightening from singleton rows, substitution of
//! fixed variables, and activity-based detection of forced binaries.
//!
//! Iterated to a fixpoint, this is enough to eliminate the ReLU binaries of
//! neurons whose bounds are one-sided and to collapse encodings whose inputs
//! are fixed, which is what branch and bound needs it for.

use super::{Constraint, Integrality, MilpModel, Sense};

const TOL: f64 = 1e-9;

pub(crate) struct Presolved {
    /// Reduced model over the surviving variables and rows.
    pub model: MilpModel,
    /// Per original variable: its index in the reduced model, if it survived.
    pub var_map: Vec<Option<usize>>,
    /// Per original variable: the fixed value, if eliminated.
    pub fixed: Vec<Option<f64>>,
    pub dropped_rows: usize,
    pub infeasible: bool,
}

impl Presolved {
    /// Expands a reduced-space point back to the original variables.
    pub fn postsolve(&self, x: &[f64]) -> Vec<f64> {
        self.var_map
            .iter()
            .zip(&self.fixed)
            .map(|(map, fix)| match (map, fix) {
                (Some(j), _) => x[*j],
                (None, Some(v)) => *v,
                (None, None) => 0.0,
            })
            .collect()
    }

    fn infeasible_marker(n: usize) -> Presolved {
        Presolved {
            model: MilpModel::new(),
            var_map: vec![None; n],
            fixed: vec![None; n],
            dropped_rows: 0,
            infeasible: true,
        }
    }
}

struct Work {
    lb: Vec<f64>,
    ub: Vec<f64>,
    binary: Vec<bool>,
    rows: Vec<Option<Constraint>>,
}

pub(crate) fn presolve(model: &MilpModel) -> Presolved {
    let n = model.variables.len();
    let mut w = Work {
        lb: model.variables.iter().map(|v| v.lower).collect(),
        ub: model.variables.iter().map(|v| v.upper).collect(),
        binary: model
            .variables
            .iter()
            .map(|v| v.integrality == Integrality::Binary)
            .collect(),
        rows: model.constraints.iter().cloned().map(Some).collect(),
    };
    let mut substituted = vec![false; n];

    for _pass in 0..60 {
        let mut changed = false;

        // Integral rounding of binary bounds.
        for j in 0..n {
            if w.binary[j] {
                if w.lb[j] > TOL && w.lb[j] < 1.0 - TOL {
                    w.lb[j] = 1.0;
                    changed = true;
                }
                if w.ub[j] < 1.0 - TOL && w.ub[j] > TOL {
                    w.ub[j] = 0.0;
                    changed = true;
                }
            }
            if w.lb[j] > w.ub[j] + feas_tol(w.lb[j].abs().max(w.ub[j].abs())) {
                return Presolved::infeasible_marker(n);
            }
        }

        // Substitute variables whose bounds have collapsed.
        for j in 0..n {
            if substituted[j] || w.ub[j] - w.lb[j] > TOL || !w.lb[j].is_finite() {
                continue;
            }
            let val = 0.5 * (w.lb[j] + w.ub[j]);
            substituted[j] = true;
            w.lb[j] = val;
            w.ub[j] = val;
            changed = true;
            for row in w.rows.iter_mut().flatten() {
                if let Some(pos) = row.coeffs.iter().position(|&(k, _)| k == j) {
                    let (_, a) = row.coeffs.remove(pos);
                    row.rhs -= a * val;
                }
            }
        }

        // Row scans: empty rows, singletons, forced binaries.
        for ri in 0..w.rows.len() {
            let Some(row) = w.rows[ri].clone() else { continue };

            if row.coeffs.is_empty() {
                let ok = match row.sense {
                    Sense::Le => 0.0 <= row.rhs + feas_tol(row.rhs.abs()),
                    Sense::Ge => 0.0 >= row.rhs - feas_tol(row.rhs.abs()),
                    Sense::Eq => row.rhs.abs() <= feas_tol(row.rhs.abs()),
                };
                if !ok {
                    return Presolved::infeasible_marker(n);
                }
                w.rows[ri] = None;
                changed = true;
                continue;
            }

            if row.coeffs.len() == 1 {
                let (j, a) = row.coeffs[0];
                let bound = row.rhs / a;
                let (mut new_lb, mut new_ub) = (w.lb[j], w.ub[j]);
                match (row.sense, a > 0.0) {
                    (Sense::Le, true) | (Sense::Ge, false) => new_ub = new_ub.min(bound),
                    (Sense::Le, false) | (Sense::Ge, true) => new_lb = new_lb.max(bound),
                    (Sense::Eq, _) => {
                        new_lb = new_lb.max(bound);
                        new_ub = new_ub.min(bound);
                    }
                }
                if new_lb > new_ub + feas_tol(bound.abs()) {
                    return Presolved::infeasible_marker(n);
                }
                if new_lb > w.lb[j] + TOL || new_ub < w.ub[j] - TOL {
                    w.lb[j] = new_lb.min(new_ub);
                    w.ub[j] = new_ub.max(new_lb.min(new_ub));
                }
                w.rows[ri] = None;
                changed = true;
                continue;
            }

            // Activity bounds for binary forcing.
            let mut min_act = 0.0f64;
            let mut max_act = 0.0f64;
            let mut unbounded_min = false;
            let mut unbounded_max = false;
            for &(j, a) in &row.coeffs {
                let (lo, hi) = if a >= 0.0 {
                    (a * w.lb[j], a * w.ub[j])
                } else {
                    (a * w.ub[j], a * w.lb[j])
                };
                if lo.is_finite() { min_act += lo } else { unbounded_min = true }
                if hi.is_finite() { max_act += hi } else { unbounded_max = true }
            }
            for &(j, a) in &row.coeffs {
                if !w.binary[j] || w.ub[j] - w.lb[j] < 0.5 {
                    continue;
                }
                // Contribution range of j itself is [min(0,a), max(0,a)].
                let cmin = a.min(0.0);
                let cmax = a.max(0.0);
                let tol = feas_tol(row.rhs.abs().max(max_act.abs().max(min_act.abs())));
                let mut impossible0 = false;
                let mut impossible1 = false;
                // Least achievable lhs with x_j = v must not exceed a <= rhs;
                // greatest achievable lhs must reach a >= rhs.
                if !unbounded_min && matches!(row.sense, Sense::Le | Sense::Eq) {
                    let rest_min = min_act - cmin;
                    impossible0 |= rest_min > row.rhs + tol;
                    impossible1 |= rest_min + a > row.rhs + tol;
                }
                if !unbounded_max && matches!(row.sense, Sense::Ge | Sense::Eq) {
                    let rest_max = max_act - cmax;
                    impossible0 |= rest_max < row.rhs - tol;
                    impossible1 |= rest_max + a < row.rhs - tol;
                }
                match (impossible0, impossible1) {
                    (true, true) => return Presolved::infeasible_marker(n),
                    (true, false) => {
                        w.lb[j] = 1.0;
                        changed = true;
                    }
                    (false, true) => {
                        w.ub[j] = 0.0;
                        changed = true;
                    }
                    (false, false) => {}
                }
            }
        }

        if !changed {
            break;
        }
    }

    // Assemble the reduced model.
    let mut var_map = vec![None; n];
    let mut fixed = vec![None; n];
    let mut reduced = MilpModel::new();
    reduced.objective_offset = model.objective_offset;
    for j in 0..n {
        if substituted[j] {
            fixed[j] = Some(w.lb[j]);
            reduced.objective_offset += model.objective[j] * w.lb[j];
        } else {
            let v = &model.variables[j];
            let id = reduced.add_var(v.name.clone(), w.lb[j], w.ub[j], v.integrality);
            reduced.objective[id.0] = model.objective[j];
            var_map[j] = Some(id.0);
        }
    }
    let mut dropped = 0;
    for row in w.rows.iter() {
        match row {
            None => dropped += 1,
            Some(c) => {
                let coeffs: Vec<(usize, f64)> = c
                    .coeffs
                    .iter()
                    .map(|&(j, a)| (var_map[j].expect("unsubstituted var survives"), a))
                    .collect();
                reduced.constraints.push(Constraint { coeffs, sense: c.sense, rhs: c.rhs });
            }
        }
    }

    Presolved { model: reduced, var_map, fixed, dropped_rows: dropped, infeasible: false }
}

fn feas_tol(scale: f64) -> f64 {
    1e-7 * scale.max(1.0)
}
