//! Bounded-variable simplex on a dense tableau.
//!
//! The tableau keeps `B^-1 [A | I]` for all columns (structural variables
//! first, one logical per row after), the basic values `xb`, and reduced
//! costs `dj`. Nonbasic variables sit at a bound (or at zero when free).
//! Rows and columns are equilibrated to unit max magnitude with powers of
//! two before solving, so unscaling is exact.
//!
//! Three engines share the pivot kernel:
//! - primal phase 2 (Dantzig pricing, bound flips, Bland fallback on stall),
//! - composite primal phase 1 (minimizes the sum of bound violations),
//! - dual simplex (most-violated row), used cold when the cost placement is
//!   dual feasible and warm after bound changes in branch and bound.

use super::{MilpError, MilpModel, Sense};

const FEAS_TOL: f64 = 1e-7;
const DUAL_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-8;
const ZERO_TOL: f64 = 1e-11;
const STALL_LIMIT: u32 = 4000;
const REFRESH_INTERVAL: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SolveOutcome {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VStat {
    Basic(u32),
    AtLb,
    AtUb,
    /// Free nonbasic variables sit at value zero.
    Free,
}

pub(crate) struct Tableau {
    m: usize,
    ncols: usize,
    n_struct: usize,
    /// Row-major m x ncols.
    tab: Vec<f64>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    col_scale: Vec<f64>,
    basis: Vec<usize>,
    vstat: Vec<VStat>,
    xb: Vec<f64>,
    dj: Vec<f64>,
    objval: f64,
    iterations: u64,
    bland_until: u64,
    last_progress_iter: u64,
    last_obj: f64,
    nz_buf: Vec<u32>,
    col_buf: Vec<f64>,
}

impl Tableau {
    pub(crate) fn build(model: &MilpModel) -> Tableau {
        let m = model.constraints.len();
        let n_struct = model.variables.len();
        let ncols = n_struct + m;

        // Power-of-two equilibration: rows first, then columns.
        let mut row_scale = vec![1.0f64; m];
        for (i, c) in model.constraints.iter().enumerate() {
            let maxa = c.coeffs.iter().map(|&(_, a)| a.abs()).fold(0.0f64, f64::max);
            if maxa > 0.0 {
                row_scale[i] = pow2_inverse(maxa);
            }
        }
        let mut col_max = vec![0.0f64; n_struct];
        for (i, c) in model.constraints.iter().enumerate() {
            for &(j, a) in &c.coeffs {
                col_max[j] = col_max[j].max((a * row_scale[i]).abs());
            }
        }
        let col_scale: Vec<f64> = (0..ncols)
            .map(|j| {
                if j < n_struct && col_max[j] > 0.0 {
                    pow2_inverse(col_max[j])
                } else {
                    1.0
                }
            })
            .collect();

        let mut tab = vec![0.0f64; m * ncols];
        let mut rhs = vec![0.0f64; m];
        let mut lb = vec![0.0f64; ncols];
        let mut ub = vec![0.0f64; ncols];
        let mut cost = vec![0.0f64; ncols];
        for j in 0..n_struct {
            let v = &model.variables[j];
            // x' = x / s  =>  bounds divide by s.
            lb[j] = v.lower / col_scale[j];
            ub[j] = v.upper / col_scale[j];
            cost[j] = model.objective[j] * col_scale[j];
        }
        for (i, c) in model.constraints.iter().enumerate() {
            let base = i * ncols;
            for &(j, a) in &c.coeffs {
                tab[base + j] += a * row_scale[i] * col_scale[j];
            }
            tab[base + n_struct + i] = 1.0;
            rhs[i] = c.rhs * row_scale[i];
            let sj = n_struct + i;
            match c.sense {
                Sense::Le => {
                    lb[sj] = 0.0;
                    ub[sj] = f64::INFINITY;
                }
                Sense::Ge => {
                    lb[sj] = f64::NEG_INFINITY;
                    ub[sj] = 0.0;
                }
                Sense::Eq => {
                    lb[sj] = 0.0;
                    ub[sj] = 0.0;
                }
            }
        }

        let mut vstat = vec![VStat::AtLb; ncols];
        for (j, stat) in vstat.iter_mut().enumerate().take(n_struct) {
            *stat = initial_status(lb[j], ub[j], cost[j]);
        }
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let sj = n_struct + i;
            vstat[sj] = VStat::Basic(i as u32);
            basis.push(sj);
        }

        let mut t = Tableau {
            m,
            ncols,
            n_struct,
            tab,
            rhs,
            cost,
            lb,
            ub,
            col_scale,
            basis,
            vstat,
            xb: vec![0.0; m],
            dj: vec![0.0; ncols],
            objval: 0.0,
            iterations: 0,
            bland_until: 0,
            last_progress_iter: 0,
            last_obj: f64::NAN,
            nz_buf: Vec::new(),
            col_buf: vec![0.0; m],
        };
        t.recompute_xb();
        t.recompute_dj();
        t
    }

    pub(crate) fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Scaled objective equals the unscaled one by construction.
    pub(crate) fn objective_value(&self) -> f64 {
        self.objval
    }

    pub(crate) fn var_value(&self, j: usize) -> f64 {
        self.nonbasic_or_basic_value(j) * self.col_scale[j]
    }

    pub(crate) fn structural_values(&self) -> Vec<f64> {
        (0..self.n_struct).map(|j| self.var_value(j)).collect()
    }

    fn nonbasic_or_basic_value(&self, j: usize) -> f64 {
        match self.vstat[j] {
            VStat::Basic(r) => self.xb[r as usize],
            VStat::AtLb => self.lb[j],
            VStat::AtUb => self.ub[j],
            VStat::Free => 0.0,
        }
    }

    /// Updates a structural variable's bounds (model units) in place,
    /// shifting nonbasic values and maintaining `xb`/`objval`.
    pub(crate) fn set_var_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        let s = self.col_scale[j];
        let new_lb = lower / s;
        let new_ub = upper / s;
        let old_val = self.nonbasic_or_basic_value(j);
        self.lb[j] = new_lb;
        self.ub[j] = new_ub;
        match self.vstat[j] {
            VStat::Basic(_) => {}
            VStat::Free => {
                if new_lb.is_finite() || new_ub.is_finite() {
                    // Attach to a bound now that one exists.
                    self.vstat[j] = if new_lb.is_finite() { VStat::AtLb } else { VStat::AtUb };
                    let delta = self.nonbasic_or_basic_value(j) - old_val;
                    self.shift_nonbasic(j, delta);
                }
            }
            VStat::AtLb | VStat::AtUb => {
                // Snap to the (possibly moved) bound; prefer the nearer one
                // when the previous side vanished.
                if matches!(self.vstat[j], VStat::AtLb) && !new_lb.is_finite() {
                    self.vstat[j] = VStat::AtUb;
                }
                if matches!(self.vstat[j], VStat::AtUb) && !new_ub.is_finite() {
                    self.vstat[j] = VStat::AtLb;
                }
                let delta = self.nonbasic_or_basic_value(j) - old_val;
                if delta != 0.0 {
                    self.shift_nonbasic(j, delta);
                }
            }
        }
    }

    fn shift_nonbasic(&mut self, j: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        for i in 0..self.m {
            let a = self.tab[i * self.ncols + j];
            if a != 0.0 {
                self.xb[i] -= a * delta;
            }
        }
        self.objval += self.dj[j] * delta;
    }

    fn recompute_xb(&mut self) {
        // x_B = B^-1 b - sum_nonbasic T[:,j] * value_j; the logical block of
        // the tableau is B^-1 itself.
        let mut contrib: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.m {
            if self.rhs[i] != 0.0 {
                contrib.push((self.n_struct + i, self.rhs[i]));
            }
        }
        let mut nonbasic_vals: Vec<(usize, f64)> = Vec::new();
        for j in 0..self.ncols {
            if let VStat::Basic(_) = self.vstat[j] {
                continue;
            }
            let v = self.nonbasic_or_basic_value(j);
            if v != 0.0 {
                nonbasic_vals.push((j, v));
            }
        }
        for i in 0..self.m {
            let row = &self.tab[i * self.ncols..(i + 1) * self.ncols];
            let mut x = 0.0;
            // B^-1 b via the logical columns: column n_struct+r of the
            // original system is e_r, so T[i][n_struct+r] = (B^-1)[i][r].
            for &(k, b) in &contrib {
                x += row[k] * b;
            }
            for &(j, v) in &nonbasic_vals {
                x -= row[j] * v;
            }
            self.xb[i] = x;
        }
        self.recompute_objval();
    }

    fn recompute_objval(&mut self) {
        let mut obj = 0.0;
        for j in 0..self.ncols {
            let c = self.cost[j];
            if c != 0.0 {
                obj += c * self.nonbasic_or_basic_value(j);
            }
        }
        self.objval = obj;
    }

    fn recompute_dj(&mut self) {
        self.dj.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * self.ncols..(i + 1) * self.ncols];
                for (dj, &t) in self.dj.iter_mut().zip(row.iter()) {
                    if t != 0.0 {
                        *dj -= cb * t;
                    }
                }
            }
        }
        for &b in &self.basis {
            self.dj[b] = 0.0;
        }
    }

    fn primal_feasible(&self) -> bool {
        self.max_primal_violation().1 <= FEAS_TOL
    }

    /// (row, violation) of the most violated basic bound.
    fn max_primal_violation(&self) -> (usize, f64) {
        let mut worst = (0usize, 0.0f64);
        for i in 0..self.m {
            let b = self.basis[i];
            let v = self.xb[i];
            let viol = (self.lb[b] - v).max(v - self.ub[b]);
            if viol > worst.1 {
                worst = (i, viol);
            }
        }
        worst
    }

    fn dual_feasible(&self) -> bool {
        for j in 0..self.ncols {
            match self.vstat[j] {
                VStat::Basic(_) => {}
                VStat::AtLb => {
                    if self.lb[j] < self.ub[j] - ZERO_TOL && self.dj[j] < -DUAL_TOL {
                        return false;
                    }
                }
                VStat::AtUb => {
                    if self.lb[j] < self.ub[j] - ZERO_TOL && self.dj[j] > DUAL_TOL {
                        return false;
                    }
                }
                VStat::Free => {
                    if self.dj[j].abs() > DUAL_TOL {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Cold solve: routes through dual simplex when the initial placement is
    /// dual feasible, otherwise primal phase 1 + phase 2.
    pub(crate) fn solve_from_scratch(&mut self) -> Result<SolveOutcome, MilpError> {
        if self.primal_feasible() {
            return self.primal_simplex();
        }
        if self.dual_feasible() {
            return self.dual_simplex();
        }
        match self.phase1()? {
            SolveOutcome::Optimal => self.primal_simplex(),
            other => Ok(other),
        }
    }

    /// Warm re-solve after bound changes.
    pub(crate) fn reoptimize(&mut self) -> Result<SolveOutcome, MilpError> {
        if self.dual_feasible() {
            self.dual_simplex()
        } else if self.primal_feasible() {
            self.primal_simplex()
        } else {
            match self.phase1()? {
                SolveOutcome::Optimal => self.primal_simplex(),
                other => Ok(other),
            }
        }
    }

    fn bland(&self) -> bool {
        self.iterations < self.bland_until
    }

    fn note_progress(&mut self) {
        let improved = if self.last_obj.is_nan() {
            true
        } else {
            (self.objval - self.last_obj).abs() > 1e-12 * self.last_obj.abs().max(1.0)
        };
        if improved {
            self.last_obj = self.objval;
            self.last_progress_iter = self.iterations;
        } else if self.iterations - self.last_progress_iter > STALL_LIMIT as u64
            && !self.bland()
        {
            // Anti-cycling: fall back to lowest-index rules for a while.
            self.bland_until = self.iterations + STALL_LIMIT as u64;
        }
    }

    /// Per-call pivot budget; `iterations` accumulates across warm re-solves.
    fn budget_from(&self, start: u64) -> bool {
        self.iterations - start > 30_000 + 30 * self.m as u64
    }

    fn gather_column(&mut self, q: usize) {
        for i in 0..self.m {
            self.col_buf[i] = self.tab[i * self.ncols + q];
        }
    }

    /// Shared pivot kernel: makes `q` basic in row `r`. `self.col_buf` must
    /// hold column `q`. Updates tableau, reduced costs, basis and statuses.
    /// The caller has already updated `xb` and set `xb[r]` to the entering
    /// variable's new value.
    fn pivot(&mut self, r: usize, q: usize, leaving_to_upper: bool) {
        let ncols = self.ncols;
        let piv = self.col_buf[r];
        debug_assert!(piv.abs() > ZERO_TOL, "pivot too small: {piv}");

        // Normalize pivot row and collect its nonzeros.
        let inv = 1.0 / piv;
        self.nz_buf.clear();
        {
            let row = &mut self.tab[r * ncols..(r + 1) * ncols];
            for (j, v) in row.iter_mut().enumerate() {
                if *v != 0.0 {
                    *v *= inv;
                    if v.abs() > ZERO_TOL {
                        self.nz_buf.push(j as u32);
                    } else {
                        *v = 0.0;
                    }
                }
            }
            row[q] = 1.0;
        }

        // Rank-1 update of every other row with a nonzero in column q.
        let (before, rest) = self.tab.split_at_mut(r * ncols);
        let (prow, after) = rest.split_at_mut(ncols);
        let update = |rows: &mut [f64], base_row: usize, col: &[f64], nz: &[u32]| {
            let nrows = rows.len() / ncols;
            for i in 0..nrows {
                let f = col[base_row + i];
                if f == 0.0 {
                    continue;
                }
                let row = &mut rows[i * ncols..(i + 1) * ncols];
                for &j in nz {
                    row[j as usize] -= f * prow[j as usize];
                }
                row[q] = 0.0;
            }
        };
        update(before, 0, &self.col_buf, &self.nz_buf);
        update(after, r + 1, &self.col_buf, &self.nz_buf);

        // Reduced costs.
        let f = self.dj[q];
        if f != 0.0 {
            for &j in &self.nz_buf {
                self.dj[j as usize] -= f * prow[j as usize];
            }
        }
        self.dj[q] = 0.0;

        let leaving = self.basis[r];
        self.vstat[leaving] = if leaving_to_upper { VStat::AtUb } else { VStat::AtLb };
        self.basis[r] = q;
        self.vstat[q] = VStat::Basic(r as u32);
    }

    fn maybe_refresh(&mut self) {
        if self.iterations % REFRESH_INTERVAL == 0 {
            self.recompute_xb();
            self.recompute_dj();
        }
    }

    // ----------------------------------------------------------- primal

    fn primal_simplex(&mut self) -> Result<SolveOutcome, MilpError> {
        let start = self.iterations;
        loop {
            if self.budget_from(start) {
                return Err(MilpError::Numerical("primal simplex iteration cap".into()));
            }
            self.iterations += 1;
            self.maybe_refresh();
            self.note_progress();
            let bland = self.bland();

            // Pricing.
            let mut q = usize::MAX;
            let mut best = DUAL_TOL;
            let mut sigma = 1.0;
            for j in 0..self.ncols {
                if self.lb[j] >= self.ub[j] - ZERO_TOL && self.lb[j].is_finite() {
                    continue; // fixed
                }
                let (elig, s) = match self.vstat[j] {
                    VStat::Basic(_) => (false, 0.0),
                    VStat::AtLb => (self.dj[j] < -DUAL_TOL, 1.0),
                    VStat::AtUb => (self.dj[j] > DUAL_TOL, -1.0),
                    VStat::Free => (self.dj[j].abs() > DUAL_TOL, -self.dj[j].signum()),
                };
                if !elig {
                    continue;
                }
                if bland {
                    q = j;
                    sigma = s;
                    break;
                }
                let score = self.dj[j].abs();
                if score > best {
                    best = score;
                    q = j;
                    sigma = s;
                }
            }
            if q == usize::MAX {
                return Ok(SolveOutcome::Optimal);
            }

            self.gather_column(q);

            // Ratio test with bound flip.
            let own_range = self.ub[q] - self.lb[q];
            let mut limit = if own_range.is_finite() { own_range } else { f64::INFINITY };
            let mut block: Option<(usize, bool)> = None; // (row, to_upper)
            let mut block_alpha = 0.0f64;
            for i in 0..self.m {
                let delta = -sigma * self.col_buf[i];
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let (bound, to_upper) = if delta > 0.0 {
                    (self.ub[b], true)
                } else {
                    (self.lb[b], false)
                };
                if !bound.is_finite() {
                    continue;
                }
                let ratio = ((bound - self.xb[i]) / delta).max(0.0);
                let better = ratio < limit - 1e-12
                    || (ratio < limit + 1e-12
                        && block.map_or(false, |_| {
                            if bland {
                                self.basis[i] < self.basis[block.unwrap().0]
                            } else {
                                self.col_buf[i].abs() > block_alpha.abs()
                            }
                        }));
                if better {
                    limit = ratio;
                    block = Some((i, to_upper));
                    block_alpha = self.col_buf[i];
                }
            }

            match block {
                None => {
                    if !limit.is_finite() {
                        return Ok(SolveOutcome::Unbounded);
                    }
                    // Bound flip: cross to the other bound, no basis change.
                    for i in 0..self.m {
                        let a = self.col_buf[i];
                        if a != 0.0 {
                            self.xb[i] -= sigma * a * limit;
                        }
                    }
                    self.objval += self.dj[q] * sigma * limit;
                    self.vstat[q] = match self.vstat[q] {
                        VStat::AtLb => VStat::AtUb,
                        VStat::AtUb => VStat::AtLb,
                        other => other,
                    };
                }
                Some((r, to_upper)) => {
                    let enter_val = self.nonbasic_or_basic_value(q) + sigma * limit;
                    for i in 0..self.m {
                        let a = self.col_buf[i];
                        if a != 0.0 {
                            self.xb[i] -= sigma * a * limit;
                        }
                    }
                    self.objval += self.dj[q] * sigma * limit;
                    self.pivot(r, q, to_upper);
                    self.xb[r] = enter_val;
                }
            }
        }
    }

    // ------------------------------------------------------------- dual

    fn dual_simplex(&mut self) -> Result<SolveOutcome, MilpError> {
        let start = self.iterations;
        loop {
            if self.budget_from(start) {
                return Err(MilpError::Numerical("dual simplex iteration cap".into()));
            }
            self.iterations += 1;
            self.maybe_refresh();
            self.note_progress();
            let bland = self.bland();

            // Leaving row: most violated basic bound.
            let r = if bland {
                let mut row = usize::MAX;
                for i in 0..self.m {
                    let b = self.basis[i];
                    let viol = (self.lb[b] - self.xb[i]).max(self.xb[i] - self.ub[b]);
                    if viol > FEAS_TOL {
                        row = i;
                        break;
                    }
                }
                row
            } else {
                let (row, viol) = self.max_primal_violation();
                if viol <= FEAS_TOL {
                    usize::MAX
                } else {
                    row
                }
            };
            if r == usize::MAX {
                return Ok(SolveOutcome::Optimal);
            }

            let bvar = self.basis[r];
            let below = self.xb[r] < self.lb[bvar];
            let e = if below { 1.0 } else { -1.0 };
            let target = if below { self.lb[bvar] } else { self.ub[bvar] };

            // Entering: dual ratio test over the leaving row.
            let row_off = r * self.ncols;
            let mut q = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0f64;
            for j in 0..self.ncols {
                if matches!(self.vstat[j], VStat::Basic(_)) {
                    continue;
                }
                if self.lb[j] >= self.ub[j] - ZERO_TOL && self.lb[j].is_finite() {
                    continue; // fixed variables cannot enter
                }
                let alpha = self.tab[row_off + j];
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let eligible = match self.vstat[j] {
                    VStat::AtLb => e * alpha < 0.0,
                    VStat::AtUb => e * alpha > 0.0,
                    VStat::Free => true,
                    VStat::Basic(_) => false,
                };
                if !eligible {
                    continue;
                }
                let ratio = (self.dj[j] / (-e * alpha)).max(0.0);
                let take = if bland {
                    ratio < best_ratio - 1e-12 || (q == usize::MAX)
                } else {
                    ratio < best_ratio - 1e-12
                        || (ratio < best_ratio + 1e-12 && alpha.abs() > best_alpha.abs())
                };
                if take {
                    best_ratio = ratio;
                    best_alpha = alpha;
                    q = j;
                    if bland && ratio <= 1e-12 {
                        break;
                    }
                }
            }
            if q == usize::MAX {
                // Dual unbounded: no way to restore this row.
                return Ok(SolveOutcome::Infeasible);
            }

            let alpha_rq = self.tab[row_off + q];
            let sigma = match self.vstat[q] {
                VStat::AtLb => 1.0,
                VStat::AtUb => -1.0,
                VStat::Free => -e * alpha_rq.signum(),
                VStat::Basic(_) => unreachable!(),
            };
            let delta = (target - self.xb[r]) / (-sigma * alpha_rq);
            debug_assert!(delta >= -1e-9, "negative dual step {delta}");
            let delta = delta.max(0.0);

            self.gather_column(q);
            let enter_val = self.nonbasic_or_basic_value(q) + sigma * delta;
            for i in 0..self.m {
                let a = self.col_buf[i];
                if a != 0.0 {
                    self.xb[i] -= sigma * a * delta;
                }
            }
            self.objval += self.dj[q] * sigma * delta;
            // Leaving variable lands on the bound it violated.
            self.pivot(r, q, !below);
            self.xb[r] = enter_val;
        }
    }

    // ---------------------------------------------------------- phase 1

    /// Composite phase 1: minimizes total bound violation of the basics.
    fn phase1(&mut self) -> Result<SolveOutcome, MilpError> {
        let start = self.iterations;
        loop {
            if self.budget_from(start) {
                return Err(MilpError::Numerical("phase-1 iteration cap".into()));
            }
            self.iterations += 1;

            // Infeasibility gradient w.r.t. raising x_j: basic i moves by
            // -T[i][j], so rows below lb contribute +T[i][j] and rows above
            // ub contribute -T[i][j].
            let mut signs: Vec<(usize, f64)> = Vec::new();
            for i in 0..self.m {
                let b = self.basis[i];
                if self.xb[i] < self.lb[b] - FEAS_TOL {
                    signs.push((i, 1.0));
                } else if self.xb[i] > self.ub[b] + FEAS_TOL {
                    signs.push((i, -1.0));
                }
            }
            if signs.is_empty() {
                self.recompute_dj();
                self.recompute_objval();
                return Ok(SolveOutcome::Optimal);
            }

            // Phase-1 reduced costs: d1_j = sum_i sign_i * T[i][j].
            let mut d1 = vec![0.0f64; self.ncols];
            for &(i, s) in &signs {
                let row = &self.tab[i * self.ncols..(i + 1) * self.ncols];
                for (d, &t) in d1.iter_mut().zip(row.iter()) {
                    if t != 0.0 {
                        *d += s * t;
                    }
                }
            }

            let mut q = usize::MAX;
            let mut best = DUAL_TOL;
            let mut sigma = 1.0;
            for j in 0..self.ncols {
                if matches!(self.vstat[j], VStat::Basic(_)) {
                    continue;
                }
                if self.lb[j] >= self.ub[j] - ZERO_TOL && self.lb[j].is_finite() {
                    continue;
                }
                let (elig, s) = match self.vstat[j] {
                    VStat::AtLb => (d1[j] < -DUAL_TOL, 1.0),
                    VStat::AtUb => (d1[j] > DUAL_TOL, -1.0),
                    VStat::Free => (d1[j].abs() > DUAL_TOL, -d1[j].signum()),
                    VStat::Basic(_) => (false, 0.0),
                };
                if elig && d1[j].abs() > best {
                    best = d1[j].abs();
                    q = j;
                    sigma = s;
                }
            }
            if q == usize::MAX {
                // Local optimum of the infeasibility sum > 0: infeasible.
                return Ok(SolveOutcome::Infeasible);
            }

            self.gather_column(q);
            let own_range = self.ub[q] - self.lb[q];
            let mut limit = if own_range.is_finite() { own_range } else { f64::INFINITY };
            let mut block: Option<(usize, bool)> = None;
            for i in 0..self.m {
                let delta = -sigma * self.col_buf[i];
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let infeasible_low = self.xb[i] < self.lb[b] - FEAS_TOL;
                let infeasible_high = self.xb[i] > self.ub[b] + FEAS_TOL;
                // Feasible basics block at their near bound; infeasible ones
                // block where they become feasible again.
                let (bound, to_upper) = if delta > 0.0 {
                    if infeasible_low {
                        (self.lb[b], false)
                    } else {
                        (self.ub[b], true)
                    }
                } else if infeasible_high {
                    (self.ub[b], true)
                } else {
                    (self.lb[b], false)
                };
                if !bound.is_finite() {
                    continue;
                }
                let ratio = ((bound - self.xb[i]) / delta).max(0.0);
                if ratio < limit - 1e-12 {
                    limit = ratio;
                    block = Some((i, to_upper));
                }
            }

            match block {
                None => {
                    if !limit.is_finite() {
                        return Err(MilpError::Numerical(
                            "phase-1 direction unbounded; model badly scaled".into(),
                        ));
                    }
                    for i in 0..self.m {
                        let a = self.col_buf[i];
                        if a != 0.0 {
                            self.xb[i] -= sigma * a * limit;
                        }
                    }
                    self.vstat[q] = match self.vstat[q] {
                        VStat::AtLb => VStat::AtUb,
                        VStat::AtUb => VStat::AtLb,
                        other => other,
                    };
                }
                Some((r, to_upper)) => {
                    let enter_val = self.nonbasic_or_basic_value(q) + sigma * limit;
                    for i in 0..self.m {
                        let a = self.col_buf[i];
                        if a != 0.0 {
                            self.xb[i] -= sigma * a * limit;
                        }
                    }
                    self.pivot(r, q, to_upper);
                    self.xb[r] = enter_val;
                }
            }
        }
    }

    /// Re-derives `xb`, `dj` and the objective from the current basis, then
    /// verifies primal feasibility. Used before trusting a final answer.
    pub(crate) fn refresh_and_check(&mut self) -> bool {
        self.recompute_xb();
        self.recompute_dj();
        self.primal_feasible()
    }
}

fn initial_status(lb: f64, ub: f64, cost: f64) -> VStat {
    if lb.is_finite() && ub.is_finite() && lb >= ub - ZERO_TOL {
        return VStat::AtLb;
    }
    if cost > DUAL_TOL {
        if lb.is_finite() {
            VStat::AtLb
        } else if ub.is_finite() {
            VStat::AtUb
        } else {
            VStat::Free
        }
    } else if cost < -DUAL_TOL {
        if ub.is_finite() {
            VStat::AtUb
        } else if lb.is_finite() {
            VStat::AtLb
        } else {
            VStat::Free
        }
    } else if lb.is_finite() {
        VStat::AtLb
    } else if ub.is_finite() {
        VStat::AtUb
    } else {
        VStat::Free
    }
}

/// Nearest power of two to 1/x, clamped to keep scaling mild.
fn pow2_inverse(x: f64) -> f64 {
    let e = -(x.log2().round());
    let e = e.clamp(-30.0, 30.0);
    (2.0f64).powi(e as i32)
}
