//! Reduced-order frequency dynamics: Kron reduction, Laplacian modal
//! analysis, time-domain swing simulation of generator-loss events, and
//! windowed locational RoCoF measurement.
//!
//! Conventions, fixed here and locked by the one-machine tests:
//! - Angles are in radians, powers in MW, time in seconds.
//! - The Laplacian entry for a branch is `b_pu * V_i * V_j * base_mva`
//!   (MW/rad), so `M theta_dd + D theta_d = P - L theta` holds in MW.
//! - Bus inertia is `m = sum 2 H S / (2 pi f0)` over its online synchronous
//!   units (MW s^2/rad); bus damping is `d = sum D S / (2 pi f0)`.
//! - Frequency is `f = f0 + theta_d / (2 pi)`; the one-machine initial slope
//!   is then `-dP * f0 / (2 H S)` Hz/s.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::grid::GridCase;

pub const DEFAULT_STEP_S: f64 = 1e-3;
pub const DEFAULT_HORIZON_S: f64 = 5.0;
pub const DEFAULT_WINDOW_S: f64 = 0.5;

#[derive(Debug)]
pub enum DynError {
    /// Elimination block of the Kron reduction is singular.
    SingularElimination(String),
    /// Eigensolver failed to reach the requested residual.
    NonConvergence { residual: f64 },
    /// Integration step too large: the undamped energy drift check failed.
    StepTooLarge { drift: f64 },
    HorizonTooShort { horizon_s: f64, window_s: f64 },
    /// A non-zero mode is overdamped, outside the closed form's regime.
    Overdamped { mode: usize },
    NoOnlineGenerator,
    AllZeroDispatch,
    NoSynchronousInertia,
    Invalid(String),
}

impl fmt::Display for DynError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynError::SingularElimination(msg) => {
                write!(f, "singular elimination block in Kron reduction: {msg}")
            }
            DynError::NonConvergence { residual } => {
                write!(f, "eigendecomposition did not converge, residual norm {residual:e}")
            }
            DynError::StepTooLarge { drift } => write!(
                f,
                "energy drift {drift:.3e} exceeds 0.1%; use a smaller integration step"
            ),
            DynError::HorizonTooShort { horizon_s, window_s } => write!(
                f,
                "horizon {horizon_s} s is shorter than the RoCoF window {window_s} s"
            ),
            DynError::Overdamped { mode } => {
                write!(f, "mode {mode} is overdamped; closed form requires lambda/m > gamma^2/4")
            }
            DynError::NoOnlineGenerator => write!(f, "no online generator"),
            DynError::AllZeroDispatch => write!(f, "all-zero dispatch defines no contingency"),
            DynError::NoSynchronousInertia => {
                write!(f, "no synchronous inertia remains after the contingency")
            }
            DynError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for DynError {}

/// Kron-reduced network over a retained set of buses.
///
/// `injections_mw` are the folded pre-event injections; `fold` maps an
/// injection at an eliminated bus onto the retained buses (column per
/// eliminated bus), which is how disturbances at eliminated buses enter.
#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    pub gen_buses: Vec<u32>,
    pub laplacian: DMatrix<f64>,
    /// Per-bus inertia coefficient m_i, MW s^2/rad.
    pub inertia: Vec<f64>,
    /// Per-bus damping coefficient d_i, MW s/rad.
    pub damping: Vec<f64>,
    /// d_i/m_i when homogeneous across buses (within 1e-9 relative).
    pub gamma: Option<f64>,
    /// Per-bus online synchronous rating, MVA (governor gain basis).
    pub rated_mva: Vec<f64>,
    /// Folded net injections, MW.
    pub injections_mw: Vec<f64>,
    /// Ids of eliminated buses, aligned with `fold` columns.
    pub eliminated_buses: Vec<u32>,
    /// -L_re * L_ee^-1: distributes eliminated-bus injections to retained buses.
    pub fold: DMatrix<f64>,
    pub f0_hz: f64,
}

impl ReducedNetwork {
    pub fn size(&self) -> usize {
        self.gen_buses.len()
    }

    /// Position of a retained bus id.
    pub fn bus_position(&self, bus_id: u32) -> Option<usize> {
        self.gen_buses.iter().position(|&b| b == bus_id)
    }

    /// Maps a power step at any original bus onto the retained buses.
    pub fn fold_injection(&self, bus_id: u32, mw: f64) -> Result<Vec<f64>, DynError> {
        let n = self.size();
        let mut v = vec![0.0; n];
        if let Some(i) = self.bus_position(bus_id) {
            v[i] = mw;
            return Ok(v);
        }
        let Some(e) = self.eliminated_buses.iter().position(|&b| b == bus_id) else {
            return Err(DynError::Invalid(format!(
                "bus {bus_id} is neither retained nor eliminated"
            )));
        };
        for i in 0..n {
            v[i] = self.fold[(i, e)] * mw;
        }
        Ok(v)
    }

    fn detect_gamma(inertia: &[f64], damping: &[f64]) -> Option<f64> {
        let ratios: Vec<f64> = inertia
            .iter()
            .zip(damping)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, d)| d / m)
            .collect();
        let first = *ratios.first()?;
        let homogeneous = ratios
            .iter()
            .all(|r| (r - first).abs() <= 1e-9 * first.abs().max(1.0));
        homogeneous.then_some(first)
    }

    /// Checks the structural invariants (symmetry, zero row sums,
    /// nonnegative spectrum, nonnegative inertia).
    pub fn validate(&self) -> Result<(), DynError> {
        let n = self.size();
        let l = &self.laplacian;
        if l.nrows() != n || l.ncols() != n {
            return Err(DynError::Invalid("laplacian dimension mismatch".into()));
        }
        let scale = l.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (l[(i, j)] - l[(j, i)]).abs() > 1e-9 * scale {
                    return Err(DynError::Invalid(format!(
                        "laplacian not symmetric at ({i},{j})"
                    )));
                }
            }
            let row_sum: f64 = l.row(i).iter().sum();
            if row_sum.abs() > 1e-9 * scale {
                return Err(DynError::Invalid(format!("laplacian row {i} sums to {row_sum:e}")));
            }
        }
        if self.inertia.iter().any(|m| *m < 0.0) {
            return Err(DynError::Invalid("negative inertia entry".into()));
        }
        let eig = nalgebra::SymmetricEigen::new(l.clone());
        if eig.eigenvalues.iter().any(|ev| *ev < -1e-9 * scale) {
            return Err(DynError::Invalid("laplacian has a negative eigenvalue".into()));
        }
        Ok(())
    }
}

/// Full network Laplacian in MW/rad over all buses, in `case.buses` order.
pub fn full_laplacian(case: &GridCase) -> DMatrix<f64> {
    let n = case.num_buses();
    let mut l = DMatrix::zeros(n, n);
    for br in &case.branches {
        let i = case.bus_index(br.from_bus).expect("validated case");
        let j = case.bus_index(br.to_bus).expect("validated case");
        let w = br.susceptance_pu
            * case.buses[i].nominal_voltage_pu
            * case.buses[j].nominal_voltage_pu
            * case.meta.base_mva;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    l
}

/// Schur-complement reduction of the full Laplacian onto `retained_idx`
/// (positions into `case.buses`), folding eliminated-bus injections.
///
/// `injections_mw` is per bus in `case.buses` order. `inertia`, `damping`
/// and `rated_mva` are per retained bus, already aggregated by the caller.
pub fn kron_reduce_onto(
    case: &GridCase,
    retained_idx: &[usize],
    injections_mw: &[f64],
    inertia: Vec<f64>,
    damping: Vec<f64>,
    rated_mva: Vec<f64>,
) -> Result<ReducedNetwork, DynError> {
    let n = case.num_buses();
    if retained_idx.is_empty() {
        return Err(DynError::Invalid("retained bus set is empty".into()));
    }
    if injections_mw.len() != n {
        return Err(DynError::Invalid("injection vector length mismatch".into()));
    }
    let full = full_laplacian(case);
    let retained: Vec<usize> = retained_idx.to_vec();
    let eliminated: Vec<usize> = (0..n).filter(|i| !retained.contains(i)).collect();
    let r = retained.len();
    let e = eliminated.len();

    let mut l_rr = DMatrix::zeros(r, r);
    for (a, &i) in retained.iter().enumerate() {
        for (b, &j) in retained.iter().enumerate() {
            l_rr[(a, b)] = full[(i, j)];
        }
    }
    let p_r = DVector::from_iterator(r, retained.iter().map(|&i| injections_mw[i]));

    let (laplacian, fold, injections) = if e == 0 {
        (l_rr, DMatrix::zeros(r, 0), p_r)
    } else {
        let mut l_re = DMatrix::zeros(r, e);
        let mut l_ee = DMatrix::zeros(e, e);
        for (a, &i) in retained.iter().enumerate() {
            for (b, &j) in eliminated.iter().enumerate() {
                l_re[(a, b)] = full[(i, j)];
            }
        }
        for (a, &i) in eliminated.iter().enumerate() {
            for (b, &j) in eliminated.iter().enumerate() {
                l_ee[(a, b)] = full[(i, j)];
            }
        }
        let p_e = DVector::from_iterator(e, eliminated.iter().map(|&i| injections_mw[i]));
        let lu = l_ee.clone().lu();
        // X = L_ee^-1 L_er; by symmetry X^T = L_re L_ee^-1, so fold = -X^T.
        let x = lu.solve(&l_re.transpose()).ok_or_else(|| {
            DynError::SingularElimination(format!("{e} eliminated buses form an island"))
        })?;
        let fold = -x.transpose();
        let reduced = &l_rr - &l_re * &x;
        let injections = &p_r + &fold * p_e;
        (reduced, fold, injections)
    };

    // Symmetrize away the last bits of rounding.
    let mut lap = laplacian;
    for i in 0..r {
        for j in 0..i {
            let avg = 0.5 * (lap[(i, j)] + lap[(j, i)]);
            lap[(i, j)] = avg;
            lap[(j, i)] = avg;
        }
    }

    let gamma = ReducedNetwork::detect_gamma(&inertia, &damping);
    Ok(ReducedNetwork {
        gen_buses: retained.iter().map(|&i| case.buses[i].id).collect(),
        laplacian: lap,
        inertia,
        damping,
        gamma,
        rated_mva,
        injections_mw: injections.iter().copied().collect(),
        eliminated_buses: eliminated.iter().map(|&i| case.buses[i].id).collect(),
        fold,
        f0_hz: case.meta.f0_hz,
    })
}

/// Reduces onto the buses that host generators, aggregating every unit's
/// inertia and damping (commitment-agnostic).
pub fn kron_reduce(case: &GridCase, injections_mw: &[f64]) -> Result<ReducedNetwork, DynError> {
    let mut retained: Vec<usize> = Vec::new();
    for g in &case.generators {
        let i = case.bus_index(g.bus).expect("validated case");
        if !retained.contains(&i) {
            retained.push(i);
        }
    }
    retained.sort_unstable();
    if retained.is_empty() {
        return Err(DynError::Invalid("case has no generator buses".into()));
    }
    let two_pi_f0 = 2.0 * std::f64::consts::PI * case.meta.f0_hz;
    let mut inertia = vec![0.0; retained.len()];
    let mut damping = vec![0.0; retained.len()];
    let mut rated = vec![0.0; retained.len()];
    for g in &case.generators {
        let i = case.bus_index(g.bus).unwrap();
        let k = retained.iter().position(|&r| r == i).unwrap();
        inertia[k] += 2.0 * g.inertia_h_s * g.rated_mva / two_pi_f0;
        damping[k] += g.damping_d * g.rated_mva / two_pi_f0;
        rated[k] += g.rated_mva;
    }
    kron_reduce_onto(case, &retained, injections_mw, inertia, damping, rated)
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of the reduced
/// Laplacian.
#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column alpha is the eigenvector of `eigenvalues[alpha]`.
    pub eigenvectors: DMatrix<f64>,
}

/// Full spectrum of the reduced Laplacian via the iterative symmetric
/// eigensolver; verified against a reconstruction residual.
pub fn decompose(reduced: &ReducedNetwork) -> Result<ModalDecomposition, DynError> {
    decompose_matrix(&reduced.laplacian)
}

pub fn decompose_matrix(l: &DMatrix<f64>) -> Result<ModalDecomposition, DynError> {
    let n = l.nrows();
    let scale = l.amax().max(1.0);
    let eig = nalgebra::SymmetricEigen::try_new(l.clone(), 1e-13, 10_000)
        .ok_or(DynError::NonConvergence { residual: f64::INFINITY })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        eigenvectors.set_column(col, &eig.eigenvectors.column(i));
    }
    // Residual check stands in for an iteration-cap signal.
    let lam = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
    let residual = (l * &eigenvectors - &eigenvectors * lam).norm();
    if residual > 1e-8 * scale * (n as f64) {
        return Err(DynError::NonConvergence { residual });
    }
    Ok(ModalDecomposition { eigenvalues, eigenvectors })
}

/// Loss of one generating unit: `delta_p_mw` of injection disappears at
/// `bus_b` at `t_event_s`.
#[derive(Debug, Clone)]
pub struct ContingencyEvent {
    pub lost_generator: u32,
    pub delta_p_mw: f64,
    pub bus_b: u32,
    pub t_event_s: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GovernorConfig {
    /// Per-unit droop; 0.05 means 5%.
    pub droop: f64,
    pub time_constant_s: f64,
}

impl Default for GovernorConfig {
    fn default() -> Self {
        GovernorConfig { droop: 0.05, time_constant_s: 8.0 }
    }
}

/// Fixed-step trajectories over the retained buses.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    pub time_s: Vec<f64>,
    /// theta_rad[bus][step]
    pub theta_rad: Vec<Vec<f64>>,
    /// freq_hz[bus][step]
    pub freq_hz: Vec<Vec<f64>>,
    pub step_s: f64,
    /// Index of the first post-event sample.
    pub event_index: usize,
    pub bus_ids: Vec<u32>,
    pub f0_hz: f64,
}

/// Integrates `M theta_dd + D theta_d = P - L theta` with classical
/// fourth-order Runge-Kutta at a fixed step.
///
/// The pre-event state is the synchronous equilibrium of the stored
/// injections; at the event the injection step from `event` is applied.
/// `reduced.inertia` must already reflect the post-event machines (inertia
/// is irrelevant while the system sits at equilibrium).
pub fn simulate_contingency(
    reduced: &ReducedNetwork,
    event: &ContingencyEvent,
    horizon_s: f64,
    step_s: f64,
    governor: Option<GovernorConfig>,
) -> Result<TrajectorySet, DynError> {
    let n = reduced.size();
    if n == 0 {
        return Err(DynError::Invalid("empty reduced network".into()));
    }
    if !(step_s > 0.0) || !(horizon_s > step_s) {
        return Err(DynError::Invalid("need horizon_s > step_s > 0".into()));
    }
    if reduced.inertia.iter().any(|m| *m <= 0.0) {
        return Err(DynError::Invalid(
            "every retained bus needs positive inertia to integrate".into(),
        ));
    }

    let p_pre = DVector::from_vec(reduced.injections_mw.clone());
    let imbalance: f64 = p_pre.iter().sum::<f64>();
    let scale_p = p_pre.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    if imbalance.abs() > 1e-6 * scale_p {
        return Err(DynError::Invalid(format!(
            "pre-event injections do not balance (sum {imbalance:.6} MW)"
        )));
    }

    let theta0 = solve_equilibrium(&reduced.laplacian, &p_pre)?;
    let step_vec = reduced.fold_injection(event.bus_b, -event.delta_p_mw)?;
    let p_post = &p_pre + DVector::from_vec(step_vec);

    let steps = (horizon_s / step_s).round() as usize;
    let event_index = (event.t_event_s / step_s).round() as usize;
    if event_index >= steps {
        return Err(DynError::Invalid("event time is outside the horizon".into()));
    }

    let m = DVector::from_vec(reduced.inertia.clone());
    let d = DVector::from_vec(reduced.damping.clone());
    let two_pi = 2.0 * std::f64::consts::PI;
    let gov = governor.map(|g| {
        let gain: Vec<f64> = reduced
            .rated_mva
            .iter()
            .map(|s| s / g.droop / (two_pi * reduced.f0_hz))
            .collect();
        (g, DVector::from_vec(gain))
    });

    // State: theta, omega (= theta_d), pm (governor response, MW).
    let mut theta = theta0.clone();
    let mut omega = DVector::zeros(n);
    let mut pm = DVector::zeros(n);

    let mut time = Vec::with_capacity(steps + 1);
    let mut theta_tr = vec![Vec::with_capacity(steps + 1); n];
    let mut freq_tr = vec![Vec::with_capacity(steps + 1); n];
    let record = |t: f64, th: &DVector<f64>, om: &DVector<f64>,
                      time: &mut Vec<f64>,
                      theta_tr: &mut Vec<Vec<f64>>,
                      freq_tr: &mut Vec<Vec<f64>>| {
        time.push(t);
        for i in 0..n {
            theta_tr[i].push(th[i]);
            freq_tr[i].push(reduced.f0_hz + om[i] / two_pi);
        }
    };
    record(0.0, &theta, &omega, &mut time, &mut theta_tr, &mut freq_tr);

    let accel = |p: &DVector<f64>, th: &DVector<f64>, om: &DVector<f64>, pmv: &DVector<f64>| {
        let mut a = p - &reduced.laplacian * th;
        for i in 0..n {
            a[i] = (a[i] - d[i] * om[i] + pmv[i]) / m[i];
        }
        a
    };

    let mut energy_ref: Option<f64> = None;
    let mut max_kinetic: f64 = 0.0;
    let undamped = reduced.damping.iter().all(|v| *v == 0.0) && gov.is_none();

    for k in 0..steps {
        let p = if k >= event_index { &p_post } else { &p_pre };

        // RK4 on (theta, omega, pm).
        let pm_dot = |om: &DVector<f64>, pmv: &DVector<f64>| -> DVector<f64> {
            match &gov {
                Some((g, gain)) => {
                    let mut out = DVector::zeros(n);
                    for i in 0..n {
                        out[i] = (-gain[i] * om[i] - pmv[i]) / g.time_constant_s;
                    }
                    out
                }
                None => DVector::zeros(n),
            }
        };

        let k1_th = omega.clone();
        let k1_om = accel(p, &theta, &omega, &pm);
        let k1_pm = pm_dot(&omega, &pm);

        let th2 = &theta + &k1_th * (step_s / 2.0);
        let om2 = &omega + &k1_om * (step_s / 2.0);
        let pm2 = &pm + &k1_pm * (step_s / 2.0);
        let k2_th = om2.clone();
        let k2_om = accel(p, &th2, &om2, &pm2);
        let k2_pm = pm_dot(&om2, &pm2);

        let th3 = &theta + &k2_th * (step_s / 2.0);
        let om3 = &omega + &k2_om * (step_s / 2.0);
        let pm3 = &pm + &k2_pm * (step_s / 2.0);
        let k3_th = om3.clone();
        let k3_om = accel(p, &th3, &om3, &pm3);
        let k3_pm = pm_dot(&om3, &pm3);

        let th4 = &theta + &k3_th * step_s;
        let om4 = &omega + &k3_om * step_s;
        let pm4 = &pm + &k3_pm * step_s;
        let k4_th = om4.clone();
        let k4_om = accel(p, &th4, &om4, &pm4);
        let k4_pm = pm_dot(&om4, &pm4);

        theta += (k1_th + k2_th * 2.0 + k3_th * 2.0 + k4_th) * (step_s / 6.0);
        omega += (k1_om + k2_om * 2.0 + k3_om * 2.0 + k4_om) * (step_s / 6.0);
        pm += (k1_pm + k2_pm * 2.0 + k3_pm * 2.0 + k4_pm) * (step_s / 6.0);

        if !theta.iter().all(|v| v.is_finite()) || !omega.iter().all(|v| v.is_finite()) {
            return Err(DynError::StepTooLarge { drift: f64::INFINITY });
        }

        record((k + 1) as f64 * step_s, &theta, &omega, &mut time, &mut theta_tr, &mut freq_tr);

        if undamped && k + 1 > event_index {
            let e = total_energy(&m, &reduced.laplacian, &p_post, &theta, &omega);
            let kinetic: f64 =
                0.5 * omega.iter().zip(m.iter()).map(|(o, mi)| mi * o * o).sum::<f64>();
            max_kinetic = max_kinetic.max(kinetic);
            match energy_ref {
                None => energy_ref = Some(e),
                Some(e0) => {
                    // Exchanged energy sets the scale; total energy can sit
                    // near zero when kinetic and potential cancel.
                    let scale = max_kinetic.max(e0.abs()).max(1e-9);
                    let drift = (e - e0).abs() / scale;
                    if drift > 1e-3 {
                        return Err(DynError::StepTooLarge { drift });
                    }
                }
            }
        }
    }

    Ok(TrajectorySet {
        time_s: time,
        theta_rad: theta_tr,
        freq_hz: freq_tr,
        step_s,
        event_index,
        bus_ids: reduced.gen_buses.clone(),
        f0_hz: reduced.f0_hz,
    })
}

fn total_energy(
    m: &DVector<f64>,
    l: &DMatrix<f64>,
    p: &DVector<f64>,
    theta: &DVector<f64>,
    omega: &DVector<f64>,
) -> f64 {
    let kinetic: f64 = 0.5 * omega.iter().zip(m.iter()).map(|(o, mi)| mi * o * o).sum::<f64>();
    let potential = 0.5 * (theta.transpose() * l * theta)[(0, 0)] - p.dot(theta);
    kinetic + potential
}

/// Solves `L theta = p` for a connected Laplacian by grounding the last bus.
fn solve_equilibrium(l: &DMatrix<f64>, p: &DVector<f64>) -> Result<DVector<f64>, DynError> {
    let n = l.nrows();
    if n == 1 {
        return Ok(DVector::zeros(1));
    }
    let sub = l.view((0, 0), (n - 1, n - 1)).into_owned();
    let rhs = DVector::from_iterator(n - 1, p.iter().take(n - 1).copied());
    let sol = sub
        .lu()
        .solve(&rhs)
        .ok_or_else(|| DynError::SingularElimination("grounded Laplacian is singular".into()))?;
    let mut theta = DVector::zeros(n);
    for i in 0..n - 1 {
        theta[i] = sol[i];
    }
    Ok(theta)
}

/// Per-bus and system-wide maxima of |(f(t+w) - f(t)) / w| from the event on.
#[derive(Debug, Clone)]
pub struct RocofMeasurement {
    pub per_bus_hz_s: Vec<f64>,
    pub overall_hz_s: f64,
}

pub fn measure_rocof(traj: &TrajectorySet, window_s: f64) -> Result<RocofMeasurement, DynError> {
    let steps_per_window = (window_s / traj.step_s).round() as usize;
    if steps_per_window < 2 {
        return Err(DynError::Invalid(format!(
            "window {window_s} s must be at least twice the step {} s",
            traj.step_s
        )));
    }
    let len = traj.time_s.len();
    if traj.event_index + steps_per_window >= len {
        return Err(DynError::HorizonTooShort {
            horizon_s: (len - 1) as f64 * traj.step_s,
            window_s,
        });
    }
    let w = steps_per_window as f64 * traj.step_s;
    let mut per_bus = Vec::with_capacity(traj.freq_hz.len());
    let mut overall: f64 = 0.0;
    for series in &traj.freq_hz {
        let mut best: f64 = 0.0;
        for k in traj.event_index..len - steps_per_window {
            let r = (series[k + steps_per_window] - series[k]).abs() / w;
            if r > best {
                best = r;
            }
        }
        overall = overall.max(best);
        per_bus.push(best);
    }
    Ok(RocofMeasurement { per_bus_hz_s: per_bus, overall_hz_s: overall })
}

/// Signed per-bus windowed RoCoF at time `t` from the modal series solution
/// of the homogeneous-inertia swing equation under a step loss of
/// `delta_p_mw` at retained-bus position `bus_pos`.
///
/// The zero mode is evaluated through its analytic limit (the
/// center-of-inertia ramp); every other mode must be underdamped.
pub fn closed_form_rocof(
    decomp: &ModalDecomposition,
    bus_pos: usize,
    delta_p_mw: f64,
    homogeneous_m: f64,
    gamma: f64,
    window_s: f64,
    t: f64,
) -> Result<Vec<f64>, DynError> {
    let n = decomp.eigenvalues.len();
    if bus_pos >= n {
        return Err(DynError::Invalid(format!("bus position {bus_pos} out of range")));
    }
    if !(homogeneous_m > 0.0) {
        return Err(DynError::Invalid("homogeneous inertia must be positive".into()));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let dt = window_s;
    let lam_max = decomp.eigenvalues.last().copied().unwrap_or(0.0).max(1.0);
    let mut out = vec![0.0; n];
    for (alpha, &lam) in decomp.eigenvalues.iter().enumerate() {
        let beta_b = decomp.eigenvectors[(bus_pos, alpha)];
        let force = -delta_p_mw * beta_b;
        let zero_mode = lam.abs() <= 1e-8 * lam_max;
        let shared = if zero_mode {
            // d/dt of the COI ramp (F/(gamma m))(1 - e^{-gamma t}) over the window.
            if gamma > 0.0 {
                force / (two_pi * gamma * homogeneous_m * dt)
                    * ((-gamma * t).exp() - (-gamma * (t + dt)).exp())
            } else {
                force / (two_pi * homogeneous_m)
            }
        } else {
            let disc = lam / homogeneous_m - gamma * gamma / 4.0;
            if disc <= 0.0 {
                return Err(DynError::Overdamped { mode: alpha });
            }
            let omega = disc.sqrt();
            force / (two_pi * homogeneous_m * omega * dt)
                * ((-gamma * (t + dt) / 2.0).exp() * (omega * (t + dt)).sin()
                    - (-gamma * t / 2.0).exp() * (omega * t).sin())
        };
        for i in 0..n {
            out[i] += shared * decomp.eigenvectors[(i, alpha)];
        }
    }
    Ok(out)
}

/// Builds the worst single-unit contingency for a dispatch snapshot and
/// returns the system-wide maximum |RoCoF| in Hz/s.
///
/// The lost unit is the online generator with maximum output (ties to the
/// lowest index). Retained buses are those with online synchronous machines
/// other than the lost unit; everything else, including the lost unit's bus
/// when it hosts no other machine, is folded out by Kron reduction.
pub fn label_sample(
    case: &GridCase,
    hour: usize,
    commitment: &[bool],
    dispatch: &[f64],
) -> Result<f64, DynError> {
    let (reduced, event) = build_contingency(case, hour, commitment, dispatch)?;
    let traj = simulate_contingency(&reduced, &event, DEFAULT_HORIZON_S, DEFAULT_STEP_S, None)?;
    Ok(measure_rocof(&traj, DEFAULT_WINDOW_S)?.overall_hz_s)
}

/// Shared setup for labeling and verification: picks the largest-output
/// online unit, reduces onto the remaining synchronous buses and returns
/// the event.
pub fn build_contingency(
    case: &GridCase,
    hour: usize,
    commitment: &[bool],
    dispatch: &[f64],
) -> Result<(ReducedNetwork, ContingencyEvent), DynError> {
    let ng = case.num_generators();
    if commitment.len() != ng || dispatch.len() != ng {
        return Err(DynError::Invalid("commitment/dispatch length mismatch".into()));
    }
    if hour >= case.horizon() {
        return Err(DynError::Invalid(format!("hour {hour} outside horizon")));
    }
    for (g, (&on, &p)) in commitment.iter().zip(dispatch).enumerate() {
        if !on && p.abs() > 1e-6 {
            return Err(DynError::Invalid(format!(
                "generator {} is offline but dispatched {p} MW",
                case.generators[g].id
            )));
        }
    }
    if !commitment.iter().any(|&on| on) {
        return Err(DynError::NoOnlineGenerator);
    }
    let total: f64 = dispatch.iter().sum();
    if total <= 1e-9 {
        return Err(DynError::AllZeroDispatch);
    }

    // Largest online output, ties to the lowest index.
    let mut lost = None;
    for g in 0..ng {
        if commitment[g] && dispatch[g] > lost.map_or(0.0, |(_, p)| p) + 0.0 {
            if lost.map_or(true, |(_, p)| dispatch[g] > p) {
                lost = Some((g, dispatch[g]));
            }
        }
    }
    let (lost_idx, lost_mw) = lost.ok_or(DynError::AllZeroDispatch)?;

    // Retained set: buses with online synchronous machines, excluding the lost unit.
    let two_pi_f0 = 2.0 * std::f64::consts::PI * case.meta.f0_hz;
    let n = case.num_buses();
    let mut m_bus = vec![0.0; n];
    let mut d_bus = vec![0.0; n];
    let mut s_bus = vec![0.0; n];
    for (g, gen) in case.generators.iter().enumerate() {
        if g == lost_idx || !commitment[g] || !gen.is_synchronous() {
            continue;
        }
        let i = case.bus_index(gen.bus).unwrap();
        m_bus[i] += 2.0 * gen.inertia_h_s * gen.rated_mva / two_pi_f0;
        d_bus[i] += gen.damping_d * gen.rated_mva / two_pi_f0;
        s_bus[i] += gen.rated_mva;
    }
    let retained: Vec<usize> = (0..n).filter(|&i| m_bus[i] > 0.0).collect();
    if retained.is_empty() {
        return Err(DynError::NoSynchronousInertia);
    }

    // Net injections: generation minus load, loads rescaled to balance so
    // the pre-event state is a true equilibrium (shed shows up here).
    let mut inj = vec![0.0; n];
    for (g, gen) in case.generators.iter().enumerate() {
        if commitment[g] {
            inj[case.bus_index(gen.bus).unwrap()] += dispatch[g];
        }
    }
    let total_load: f64 = (0..n).map(|i| case.profiles.load_at(case.buses[i].id, hour)).sum();
    let load_scale = if total_load > 1e-9 { total / total_load } else { 0.0 };
    for i in 0..n {
        inj[i] -= case.profiles.load_at(case.buses[i].id, hour) * load_scale;
    }

    let inertia: Vec<f64> = retained.iter().map(|&i| m_bus[i]).collect();
    let damping: Vec<f64> = retained.iter().map(|&i| d_bus[i]).collect();
    let rated: Vec<f64> = retained.iter().map(|&i| s_bus[i]).collect();
    let reduced = kron_reduce_onto(case, &retained, &inj, inertia, damping, rated)?;
    let event = ContingencyEvent {
        lost_generator: case.generators[lost_idx].id,
        delta_p_mw: lost_mw,
        bus_b: case.generators[lost_idx].bus,
        t_event_s: 0.0,
    };
    Ok((reduced, event))
}

/// Columnar trajectory export: time, then one frequency column per bus.
pub fn write_trajectory_csv(traj: &TrajectorySet, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str("time_s");
    for id in &traj.bus_ids {
        out.push_str(&format!(",f_bus{id}_hz"));
    }
    out.push('\n');
    for (k, t) in traj.time_s.iter().enumerate() {
        out.push_str(&format!("{t:.6}"));
        for series in &traj.freq_hz {
            out.push_str(&format!(",{:.9}", series[k]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Stable content hash for golden-label bookkeeping (FNV-1a over a
/// canonical rendering of the inputs).
pub fn sample_hash(case_tag: &str, hour: usize, commitment: &[bool], dispatch: &[f64]) -> String {
    let mut text = format!("{case_tag}|{hour}|");
    for &on in commitment {
        text.push(if on { '1' } else { '0' });
    }
    text.push('|');
    for &p in dispatch {
        text.push_str(&format!("{p:.6};"));
    }
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// Golden-label file: JSON map from sample hash to label.
pub fn write_golden_labels(
    labels: &BTreeMap<String, f64>,
    path: impl AsRef<std::path::Path>,
) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(labels).expect("map serializes");
    std::fs::write(path, text)
}

pub fn read_golden_labels(path: impl AsRef<std::path::Path>) -> std::io::Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
