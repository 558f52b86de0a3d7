//! Self-contained mixed-integer linear programming engine.
//!
//! Models are built row by row against [`MilpModel`], solved either as pure
//! LP relaxations ([`solve_lp`]) or as binary MILPs ([`solve_milp`]) with
//! branch and bound over a bounded-variable simplex. Everything minimizes.
//!
//! The engine is deliberately narrow: continuous and binary variables, a
//! relative-gap stopping rule, a limited presolve, and a rounding heuristic.
//! No cutting planes, no general integers.

mod branch;
mod lp_text;
mod presolve;
mod simplex;

use std::fmt;

pub use branch::MilpOptions;

/// Handle to a model variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrality {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integrality: Integrality,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    /// Sparse (variable index, coefficient) pairs; one entry per variable.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Dense objective coefficients, aligned with `variables`.
    pub objective: Vec<f64>,
    /// Constant objective offset.
    pub objective_offset: f64,
}

#[derive(Debug)]
pub enum MilpError {
    InvalidModel(String),
    /// The simplex lost feasibility beyond recovery; indicates a numerical
    /// failure, not a property of the model.
    Numerical(String),
}

impl fmt::Display for MilpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MilpError::InvalidModel(m) => write!(f, "invalid model: {m}"),
            MilpError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for MilpError {}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        integrality: Integrality,
    ) -> VarId {
        self.variables.push(Variable { name: name.into(), lower, upper, integrality });
        self.objective.push(0.0);
        VarId(self.variables.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, Integrality::Binary)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, Integrality::Continuous)
    }

    /// Adds a row; duplicate variable references are summed.
    pub fn add_row(&mut self, sense: Sense, rhs: f64, coeffs: &[(VarId, f64)]) -> usize {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
        for &(VarId(j), a) in coeffs {
            if a == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(k, _)| *k == j) {
                Some((_, acc)) => *acc += a,
                None => merged.push((j, a)),
            }
        }
        self.constraints.push(Constraint { coeffs: merged, sense, rhs });
        self.constraints.len() - 1
    }

    /// Adds to a variable's objective coefficient.
    pub fn add_obj(&mut self, var: VarId, coef: f64) {
        self.objective[var.0] += coef;
    }

    pub fn set_obj(&mut self, var: VarId, coef: f64) {
        self.objective[var.0] = coef;
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Binaries that remain free to branch on (bounds not already collapsed).
    pub fn num_unfixed_binaries(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.integrality == Integrality::Binary && v.upper - v.lower > 0.5)
            .count()
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.integrality == Integrality::Binary).count()
    }

    /// Structural validation: finite coefficients, sane bounds, binary
    /// bounds inside [0, 1], references in range.
    pub fn validate(&self) -> Result<(), MilpError> {
        for (j, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() {
                return Err(MilpError::InvalidModel(format!("variable {} has NaN bound", v.name)));
            }
            if v.lower > v.upper {
                return Err(MilpError::InvalidModel(format!(
                    "variable {} has empty bound range [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
            if v.integrality == Integrality::Binary
                && (v.lower < -1e-9 || v.upper > 1.0 + 1e-9)
            {
                return Err(MilpError::InvalidModel(format!(
                    "binary {} has bounds outside [0, 1]",
                    v.name
                )));
            }
            if !self.objective[j].is_finite() {
                return Err(MilpError::InvalidModel(format!(
                    "objective coefficient of {} is not finite",
                    v.name
                )));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(MilpError::InvalidModel(format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &c.coeffs {
                if j >= self.variables.len() {
                    return Err(MilpError::InvalidModel(format!(
                        "row {i} references missing variable {j}"
                    )));
                }
                if !a.is_finite() {
                    return Err(MilpError::InvalidModel(format!(
                        "row {i} has non-finite coefficient on {}",
                        self.variables[j].name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Objective value of a point (includes the constant offset).
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset
            + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Independent feasibility audit of a point at absolute tolerance `tol`.
    /// Returns the first violation, if any.
    pub fn check_feasible(&self, x: &[f64], tol: f64) -> Option<String> {
        if x.len() != self.variables.len() {
            return Some("solution length mismatch".into());
        }
        for (j, v) in self.variables.iter().enumerate() {
            if x[j] < v.lower - tol || x[j] > v.upper + tol {
                return Some(format!(
                    "variable {} = {} outside [{}, {}]",
                    v.name, x[j], v.lower, v.upper
                ));
            }
            if v.integrality == Integrality::Binary && (x[j] - x[j].round()).abs() > 1e-6 {
                return Some(format!("binary {} = {} is fractional", v.name, x[j]));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let lhs: f64 = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let ok = match c.sense {
                Sense::Le => lhs <= c.rhs + tol,
                Sense::Ge => lhs >= c.rhs - tol,
                Sense::Eq => (lhs - c.rhs).abs() <= tol,
            };
            if !ok {
                return Some(format!(
                    "row {i}: lhs {lhs} violates {:?} {}",
                    c.sense, c.rhs
                ));
            }
        }
        None
    }

    /// Model export in LP text format (debugging aid).
    pub fn to_lp_text(&self) -> String {
        lp_text::render(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Defined when status is Optimal.
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: u64,
}

/// Solves the LP relaxation (integrality dropped) to a vertex optimum.
pub fn solve_lp(model: &MilpModel) -> Result<LpSolution, MilpError> {
    model.validate()?;
    let mut tab = simplex::Tableau::build(model);
    let outcome = tab.solve_from_scratch()?;
    Ok(match outcome {
        simplex::SolveOutcome::Optimal => LpSolution {
            status: LpStatus::Optimal,
            values: tab.structural_values(),
            objective: tab.objective_value() + model.objective_offset,
            iterations: tab.iterations(),
        },
        simplex::SolveOutcome::Infeasible => LpSolution {
            status: LpStatus::Infeasible,
            values: Vec::new(),
            objective: f64::INFINITY,
            iterations: tab.iterations(),
        },
        simplex::SolveOutcome::Unbounded => LpSolution {
            status: LpStatus::Unbounded,
            values: Vec::new(),
            objective: f64::NEG_INFINITY,
            iterations: tab.iterations(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    /// Proven optimal (gap 0 within tolerances).
    Optimal,
    /// Incumbent with proven relative gap at most the requested gap.
    GapReached,
    /// Incumbent found but the requested gap was not proven (time limit).
    Feasible,
    /// Proven infeasible.
    Infeasible,
    Unbounded,
    /// Time limit with no incumbent: feasibility undetermined.
    Unknown,
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub nodes: u64,
    pub simplex_iterations: u64,
    pub solve_time_s: f64,
    /// Variables fixed by presolve.
    pub presolve_fixed_vars: usize,
    /// Rows removed by presolve.
    pub presolve_dropped_rows: usize,
    /// Binaries still free when the search started.
    pub branch_binaries: usize,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Incumbent values (empty unless an incumbent exists).
    pub values: Vec<f64>,
    pub objective_value: f64,
    pub best_bound: f64,
    /// (objective - bound) / max(1, |objective|).
    pub relative_gap: f64,
    pub stats: SolveStats,
}

/// Branch-and-bound solve of a binary MILP to the requested relative gap.
pub fn solve_milp(model: &MilpModel, options: &MilpOptions) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    branch::solve(model, options)
}

/// Relative gap as reported in solutions.
pub(crate) fn relative_gap(objective: f64, bound: f64) -> f64 {
    if !objective.is_finite() || !bound.is_finite() {
        return f64::INFINITY;
    }
    (objective - bound) / objective.abs().max(1.0)
}
