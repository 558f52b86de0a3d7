//! Grid case ingestion, validation and profile perturbation.
//!
//! A case file is a single JSON document with top-level keys `meta`, `buses`,
//! `branches`, `generators` and `profiles`. All quantities are in the units
//! named by their fields (MW, MVA, hours, seconds); per-unit susceptances are
//! converted once, where consumed, using `meta.base_mva`.
//!
//! Everything here is immutable after construction and can be shared freely
//! across worker threads.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Error raised while loading or validating a grid case.
#[derive(Debug)]
pub enum CaseError {
    Io(std::io::Error),
    Parse(String),
    /// Names the first violated invariant.
    Validation(String),
}

impl fmt::Display for CaseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseError::Io(e) => write!(f, "case i/o error: {e}"),
            CaseError::Parse(msg) => write!(f, "case parse error: {msg}"),
            CaseError::Validation(msg) => write!(f, "case validation error: {msg}"),
        }
    }
}

impl std::error::Error for CaseError {}

impl From<std::io::Error> for CaseError {
    fn from(e: std::io::Error) -> Self {
        CaseError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    #[serde(rename = "generator-bus")]
    Generator,
    #[serde(rename = "load-bus")]
    Load,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Nominal voltage magnitude, per unit. Enters the network Laplacian.
    pub nominal_voltage_pu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: u32,
    pub to_bus: u32,
    pub susceptance_pu: f64,
    pub flow_limit_mw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub id: u32,
    pub bus: u32,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub ramp_mw_per_h: f64,
    pub min_up_h: u32,
    pub min_down_h: u32,
    pub cost_energy_per_mwh: f64,
    pub cost_noload_per_h: f64,
    pub cost_startup: f64,
    pub cost_reserve_per_mwh: f64,
    /// Inertia constant H in seconds; 0 marks a converter-based unit that
    /// contributes power but no kinetic energy.
    pub inertia_h_s: f64,
    pub rated_mva: f64,
    /// Damping factor on the machine base; bus damping is
    /// `damping_d * rated_mva / (2*pi*f0)` in the angle-domain swing equation.
    pub damping_d: f64,
}

impl Generator {
    /// True for synchronous machines (H > 0).
    pub fn is_synchronous(&self) -> bool {
        self.inertia_h_s > 0.0
    }

    /// Stored kinetic energy H * S in MW·s.
    pub fn kinetic_energy_mws(&self) -> f64 {
        self.inertia_h_s * self.rated_mva
    }
}

/// Per-bus load and per-generator available wind, one entry per period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Profiles {
    pub horizon_h: usize,
    pub load_mw: BTreeMap<u32, Vec<f64>>,
    pub wind_mw: BTreeMap<u32, Vec<f64>>,
}

impl Profiles {
    /// Total system load in period `t`.
    pub fn system_load(&self, t: usize) -> f64 {
        self.load_mw.values().map(|s| s[t]).sum()
    }

    /// Load at `bus` in period `t` (0 when the bus carries no load).
    pub fn load_at(&self, bus: u32, t: usize) -> f64 {
        self.load_mw.get(&bus).map_or(0.0, |s| s[t])
    }

    /// Available wind for generator `gen` in period `t`.
    pub fn wind_for(&self, gen: u32, t: usize) -> Option<f64> {
        self.wind_mw.get(&gen).map(|s| s[t])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub base_mva: f64,
    pub f0_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCase {
    pub meta: Meta,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub profiles: Profiles,
}

impl GridCase {
    /// Index of `bus_id` in `buses`, if present.
    pub fn bus_index(&self, bus_id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == bus_id)
    }

    /// Index of `gen_id` in `generators`, if present.
    pub fn gen_index(&self, gen_id: u32) -> Option<usize> {
        self.generators.iter().position(|g| g.id == gen_id)
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn horizon(&self) -> usize {
        self.profiles.horizon_h
    }

    /// Total synchronous kinetic energy if every machine were online, MW·s.
    pub fn total_kinetic_energy_mws(&self) -> f64 {
        self.generators.iter().map(|g| g.kinetic_energy_mws()).sum()
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), CaseError> {
        let fail = |msg: String| Err(CaseError::Validation(msg));

        if !(self.meta.base_mva > 0.0) {
            return fail(format!("base_mva must be positive, got {}", self.meta.base_mva));
        }
        if !(self.meta.f0_hz > 0.0) {
            return fail(format!("f0_hz must be positive, got {}", self.meta.f0_hz));
        }
        if self.buses.is_empty() {
            return fail("case has no buses".into());
        }

        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return fail(format!("duplicate bus id {}", b.id));
            }
            if !(b.nominal_voltage_pu > 0.0) {
                return fail(format!(
                    "bus {} nominal_voltage_pu must be positive, got {}",
                    b.id, b.nominal_voltage_pu
                ));
            }
        }

        for (k, br) in self.branches.iter().enumerate() {
            if br.from_bus == br.to_bus {
                return fail(format!("branch {k} connects bus {} to itself", br.from_bus));
            }
            for end in [br.from_bus, br.to_bus] {
                if self.bus_index(end).is_none() {
                    return fail(format!("branch {k} references absent bus {end}"));
                }
            }
            if !(br.susceptance_pu > 0.0) {
                return fail(format!("branch {k} susceptance_pu must be positive"));
            }
            if !(br.flow_limit_mw > 0.0) {
                return fail(format!("branch {k} flow_limit_mw must be positive"));
            }
        }

        let mut gen_ids = HashSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id) {
                return fail(format!("duplicate generator id {}", g.id));
            }
            if self.bus_index(g.bus).is_none() {
                return fail(format!("generator {} references absent bus {}", g.id, g.bus));
            }
            if !(0.0 <= g.p_min_mw && g.p_min_mw <= g.p_max_mw) {
                return fail(format!(
                    "generator {} requires 0 <= p_min ({}) <= p_max ({})",
                    g.id, g.p_min_mw, g.p_max_mw
                ));
            }
            for (name, c) in [
                ("cost_energy_per_mwh", g.cost_energy_per_mwh),
                ("cost_noload_per_h", g.cost_noload_per_h),
                ("cost_startup", g.cost_startup),
                ("cost_reserve_per_mwh", g.cost_reserve_per_mwh),
            ] {
                if c < 0.0 {
                    return fail(format!("generator {} {name} must be >= 0, got {c}", g.id));
                }
            }
            if g.inertia_h_s < 0.0 {
                return fail(format!("generator {} inertia_h_s must be >= 0", g.id));
            }
            if !(g.rated_mva > 0.0) {
                return fail(format!("generator {} rated_mva must be positive", g.id));
            }
            if g.damping_d < 0.0 {
                return fail(format!("generator {} damping_d must be >= 0", g.id));
            }
            if g.min_up_h < 1 || g.min_down_h < 1 {
                return fail(format!("generator {} min_up_h and min_down_h must be >= 1", g.id));
            }
            if g.ramp_mw_per_h < 0.0 {
                return fail(format!("generator {} ramp_mw_per_h must be >= 0", g.id));
            }
        }

        let t = self.profiles.horizon_h;
        if t == 0 {
            return fail("profiles horizon_h must be >= 1".into());
        }
        for (bus, series) in &self.profiles.load_mw {
            if self.bus_index(*bus).is_none() {
                return fail(format!("load profile references absent bus {bus}"));
            }
            if series.len() != t {
                return fail(format!(
                    "load profile for bus {bus} has {} entries, horizon is {t}",
                    series.len()
                ));
            }
            if let Some(v) = series.iter().find(|v| **v < 0.0) {
                return fail(format!("load profile for bus {bus} has negative entry {v}"));
            }
        }
        for (gen, series) in &self.profiles.wind_mw {
            if self.gen_index(*gen).is_none() {
                return fail(format!("wind profile references absent generator {gen}"));
            }
            if series.len() != t {
                return fail(format!(
                    "wind profile for generator {gen} has {} entries, horizon is {t}",
                    series.len()
                ));
            }
            if let Some(v) = series.iter().find(|v| **v < 0.0) {
                return fail(format!("wind profile for generator {gen} has negative entry {v}"));
            }
        }

        if !self.is_connected() {
            return fail("network graph is disconnected".into());
        }
        Ok(())
    }

    /// Breadth-first reachability from the first bus over all branches.
    pub fn is_connected(&self) -> bool {
        if self.buses.is_empty() {
            return false;
        }
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (Some(a), Some(b)) = (self.bus_index(br.from_bus), self.bus_index(br.to_bus)) else {
                return false;
            };
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }
}

/// Loads and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, CaseError> {
    let text = std::fs::read_to_string(path)?;
    let case: GridCase =
        serde_json::from_str(&text).map_err(|e| CaseError::Parse(e.to_string()))?;
    case.validate()?;
    Ok(case)
}

/// Writes a case as pretty-printed JSON. Numeric fields round-trip exactly.
pub fn save_case(case: &GridCase, path: impl AsRef<Path>) -> Result<(), CaseError> {
    let text = serde_json::to_string_pretty(case)
        .map_err(|e| CaseError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Scales every load and wind entry by an independent uniform factor in
/// `[1 - deviation, 1 + deviation]`. Deterministic for a fixed seed; the
/// case structure is unchanged.
pub fn perturb_profiles(case: &GridCase, deviation: f64, seed: u64) -> GridCase {
    assert!(
        (0.0..1.0).contains(&deviation),
        "deviation must lie in [0, 1), got {deviation}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = case.clone();
    // BTreeMap iteration order is fixed, so the draw sequence is reproducible.
    for series in out.profiles.load_mw.values_mut() {
        for v in series.iter_mut() {
            let factor = 1.0 + rng.gen_range(-deviation..=deviation);
            *v *= factor;
        }
    }
    for series in out.profiles.wind_mw.values_mut() {
        for v in series.iter_mut() {
            let factor = 1.0 + rng.gen_range(-deviation..=deviation);
            *v *= factor;
        }
    }
    out
}
