//! Decoherence diagnostics for one decomposition at a time, and the side-by-side
//! comparison of the `S+E` and `CM+R` structures driven by one global unitary.
//!
//! The decoherence function is `Γ(t) = ln O(t)`, with `O` the normalised
//! Hilbert–Schmidt overlap of the environment marginals of two branches that
//! differ only by an initial displacement of the open mode. The decoherence time
//! is the first time at which `Γ` falls to `−1`.

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::decomposition::{
    cm_relative_transform, normal_mode_transform, transform_hamiltonian, transform_state, LinearCoordinateTransform,
    WeightFamily, CM_LABEL,
};
use crate::dynamics::{evolve_displaced_branches, evolve_grid, BranchPair};
use crate::error::{Error, Result};
use crate::phase_space::{gaussian_log_overlap, CoherentAmplitude, GaussianState, ModeScale, QuadraticHamiltonian};

/// `Γ` level defining the decoherence time (overlap `1/e`).
pub const DECOHERENCE_THRESHOLD: f64 = -1.0;
/// Overlaps below this are clamped and flagged as saturated.
pub const OVERLAP_FLOOR: f64 = 1e-300;
/// Two decoherence times agree "in order of magnitude" when their ratio lies in
/// `[1/10, 10]`.
pub const ORDER_OF_MAGNITUDE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decomposition {
    SystemEnvironment,
    CenterOfMassRelative,
}

impl Decomposition {
    pub fn tag(self) -> &'static str {
        match self {
            Decomposition::SystemEnvironment => "S+E",
            Decomposition::CenterOfMassRelative => "CM+R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSample {
    pub time: f64,
    pub gamma: f64,
    pub saturated: bool,
}

/// `Γ(t)` from the environment marginals of each branch pair.
pub fn decoherence_function<S: AsRef<str>>(branches: &[BranchPair], env_modes: &[S]) -> Result<Vec<GammaSample>> {
    let floor = OVERLAP_FLOOR.ln();
    branches
        .iter()
        .map(|bp| {
            let a = bp.alpha.reduce(env_modes)?;
            let b = bp.beta.reduce(env_modes)?;
            let ln = gaussian_log_overlap(&a, &b)?;
            let saturated = ln < floor;
            Ok(GammaSample { time: bp.time, gamma: if saturated { floor } else { ln }, saturated })
        })
        .collect()
}

/// `Λ(t) = −2Γ(t)/|α−β|²`, distance measured in vacuum-scaled units of the open mode.
pub fn fit_lambda(
    gamma: &[f64],
    alpha: &CoherentAmplitude,
    beta: &CoherentAmplitude,
    scale: ModeScale,
) -> Result<Vec<f64>> {
    let d2 = alpha.scaled_distance_sq(beta, scale);
    if d2 == 0.0 {
        return Err(Error::DegenerateAmplitudes);
    }
    Ok(gamma.iter().map(|g| -2.0 * g / d2).collect())
}

/// First time with `Γ ≤ −1`, linearly interpolated between bracketing samples.
/// `None` when the threshold is never reached on the grid.
pub fn decoherence_time(times: &[f64], gamma: &[f64]) -> Option<f64> {
    let th = DECOHERENCE_THRESHOLD;
    let first = gamma.iter().position(|g| *g <= th)?;
    if first == 0 {
        return Some(times[0]);
    }
    let (t0, t1) = (times[first - 1], times[first]);
    let (g0, g1) = (gamma[first - 1], gamma[first]);
    Some(t0 + (th - g0) * (t1 - t0) / (g1 - g0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoherenceReport {
    pub decomposition: Decomposition,
    pub open_mode: String,
    pub times: Vec<f64>,
    pub gamma: Vec<f64>,
    pub saturated: Vec<bool>,
    pub lambda: Vec<f64>,
    pub tau: Option<f64>,
    pub alpha: CoherentAmplitude,
    pub beta: CoherentAmplitude,
    pub open_scale: ModeScale,
    pub distance_sq: f64,
    pub max_symplectic_residual: f64,
    pub fingerprint: String,
}

impl DecoherenceReport {
    /// `Γ` strictly decreasing over the first `len` samples.
    pub fn strictly_decreasing_over(&self, len: usize) -> bool {
        self.gamma[..len.min(self.gamma.len())].windows(2).all(|w| w[1] < w[0])
    }
}

/// Hex digest of a Hamiltonian matrix and a time grid.
pub fn fingerprint(h: &QuadraticHamiltonian, times: &[f64]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(h.layout().to_string().as_bytes());
    for v in h.matrix().iter().chain(h.linear_term().iter()).chain(times.iter()) {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Runs both branches of `base` displaced by `alpha`/`beta` on the open mode and
/// traces out everything else.
pub fn decoherence_report(
    decomposition: Decomposition,
    h: &QuadraticHamiltonian,
    base: &GaussianState,
    alpha: &CoherentAmplitude,
    beta: &CoherentAmplitude,
    open_scale: ModeScale,
    times: &[f64],
) -> Result<DecoherenceReport> {
    if alpha.mode != beta.mode {
        return Err(Error::InvalidParameter("alpha and beta must displace the same mode".into()));
    }
    let env = h.layout().complement(&[alpha.mode.as_str()]);
    let branches = evolve_displaced_branches(base, alpha, beta, h, times)?;
    let samples = decoherence_function(&branches, &env)?;
    let gamma: Vec<f64> = samples.iter().map(|s| s.gamma).collect();
    let distance_sq = alpha.scaled_distance_sq(beta, open_scale);
    let lambda = if distance_sq > 0.0 { fit_lambda(&gamma, alpha, beta, open_scale)? } else { vec![0.0; gamma.len()] };
    Ok(DecoherenceReport {
        decomposition,
        open_mode: alpha.mode.clone(),
        times: times.to_vec(),
        tau: decoherence_time(times, &gamma),
        saturated: samples.iter().map(|s| s.saturated).collect(),
        gamma,
        lambda,
        alpha: alpha.clone(),
        beta: beta.clone(),
        open_scale,
        distance_sq,
        max_symplectic_residual: branches.iter().map(|b| b.symplectic_residual).fold(0.0, f64::max),
        fingerprint: fingerprint(h, times),
    })
}

/// Inputs of a side-by-side `S+E` / `CM+R` run on one closed model.
#[derive(Debug, Clone)]
pub struct ParallelSetup {
    /// The model in its original `S+E` coordinates, open system first.
    pub hamiltonian: QuadraticHamiltonian,
    pub masses: Vec<f64>,
    pub family: WeightFamily,
    /// Undisplaced global initial state in `S+E` coordinates.
    pub initial: GaussianState,
    pub s_alpha: (f64, f64),
    pub s_beta: (f64, f64),
    pub cm_alpha: (f64, f64),
    pub cm_beta: (f64, f64),
    /// Vacuum-width frequency used for an open mode without its own confinement.
    pub reference_frequency: f64,
    pub times: Vec<f64>,
    pub allow_positivity_violation: bool,
}

#[derive(Debug, Clone)]
pub struct ParallelComparison {
    pub system: DecoherenceReport,
    pub center_of_mass: DecoherenceReport,
    /// `τ_S / τ_CM` when both are reached.
    pub tau_ratio: Option<f64>,
    pub within_order_of_magnitude: bool,
    /// Largest relative deviation between evolving-then-transforming and
    /// transforming-then-evolving, over the grid.
    pub frame_residual: f64,
    /// Combined `S+E → CM+R → normal modes` transform.
    pub transform: LinearCoordinateTransform,
    pub cm_hamiltonian: QuadraticHamiltonian,
    pub normal_hamiltonian: QuadraticHamiltonian,
}

impl ParallelComparison {
    pub fn flag(&self) -> &'static str {
        match (self.tau_ratio, self.within_order_of_magnitude) {
            (None, _) => "not_reached",
            (Some(_), true) => "within",
            (Some(_), false) => "outside",
        }
    }
}

fn relative_residual(a: &GaussianState, b: &GaussianState) -> f64 {
    let scale_m = a.mean().amax().max(1.0);
    let scale_c = a.covariance().amax().max(1.0);
    ((a.mean() - b.mean()).amax() / scale_m).max((a.covariance() - b.covariance()).amax() / scale_c)
}

/// One global unitary, two decompositions. The `S` branches displace the global
/// state on `S`; the `CM` branches displace the same global state, re-expressed
/// in `CM+R` normal-mode coordinates, on `CM`.
pub fn parallel_compare(setup: &ParallelSetup) -> Result<ParallelComparison> {
    let h = &setup.hamiltonian;
    let open = h.layout().labels()[0].clone();
    let to_cm = cm_relative_transform(h.layout(), &setup.masses, setup.family).map_err(|e| e.tagged("CM+R"))?;
    let h_cm = transform_hamiltonian(h, &to_cm).map_err(|e| e.tagged("CM+R"))?;
    let diag = h_cm.matrix().diagonal();
    let violated: Vec<String> = (0..h_cm.n_modes())
        .filter(|&k| diag[k] <= 0.0)
        .map(|k| h_cm.layout().labels()[k].clone())
        .collect();
    if !violated.is_empty() && !setup.allow_positivity_violation {
        return Err(Error::Constraint(format!(
            "non-positive confinement (M Ω_CM²/2 or μ_α ν_α²/2) on [{}]; set the positivity override to proceed",
            violated.join(",")
        ))
        .tagged("CM+R"));
    }
    let env_r = h_cm.layout().complement(&[CM_LABEL]);
    let (to_normal, h_normal) = normal_mode_transform(&h_cm, &env_r).map_err(|e| e.tagged("CM+R"))?;
    let total = to_cm.then(&to_normal)?;

    let s_scale = h.mode_scale(&open, setup.reference_frequency).map_err(|e| e.tagged("S+E"))?;
    let cm_scale = h_normal.mode_scale(CM_LABEL, setup.reference_frequency).map_err(|e| e.tagged("CM+R"))?;
    let amp = |mode: &str, (x0, p0): (f64, f64)| CoherentAmplitude::new(mode, x0, p0);

    let system = decoherence_report(
        Decomposition::SystemEnvironment,
        h,
        &setup.initial,
        &amp(&open, setup.s_alpha),
        &amp(&open, setup.s_beta),
        s_scale,
        &setup.times,
    )
    .map_err(|e| e.tagged("S+E"))?;

    let base_cm = transform_state(&setup.initial, &total)?;
    let cm_alpha = amp(CM_LABEL, setup.cm_alpha);
    let center_of_mass = decoherence_report(
        Decomposition::CenterOfMassRelative,
        &h_normal,
        &base_cm,
        &cm_alpha,
        &amp(CM_LABEL, setup.cm_beta),
        cm_scale,
        &setup.times,
    )
    .map_err(|e| e.tagged("CM+R"))?;

    // commuting square on the CM-displaced branch
    let branch_cm = base_cm.displaced(&cm_alpha)?;
    let branch_se = transform_state(&branch_cm, &total.inverse())?;
    let direct = evolve_grid(&branch_cm, &h_normal, &setup.times)?;
    let via_se = evolve_grid(&branch_se, h, &setup.times)?;
    let mut frame_residual: f64 = 0.0;
    for (d, v) in direct.iter().zip(&via_se) {
        frame_residual = frame_residual.max(relative_residual(&transform_state(v, &total)?, d));
    }

    let tau_ratio = match (system.tau, center_of_mass.tau) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let within = tau_ratio.is_some_and(|r| (1.0 / ORDER_OF_MAGNITUDE..=ORDER_OF_MAGNITUDE).contains(&r));
    Ok(ParallelComparison {
        system,
        center_of_mass,
        tau_ratio,
        within_order_of_magnitude: within,
        frame_residual,
        transform: total,
        cm_hamiltonian: h_cm,
        normal_hamiltonian: h_normal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointerScore {
    pub index: usize,
    pub purity: f64,
}

/// Evolves `candidate ⊗ env` for each candidate open-mode state and ranks the
/// candidates by the purity their reduced state retains at time `t`.
pub fn pointer_robustness(
    h: &QuadraticHamiltonian,
    candidates: &[GaussianState],
    env: &GaussianState,
    t: f64,
) -> Result<Vec<PointerScore>> {
    let mut scores = candidates
        .iter()
        .enumerate()
        .map(|(index, c)| {
            if c.n_modes() != 1 {
                return Err(Error::InvalidParameter("pointer candidates must be single-mode states".into()));
            }
            let global = GaussianState::product(h.layout(), &[c, env])?;
            let out = crate::dynamics::evolve(&global, h, t)?;
            Ok(PointerScore { index, purity: out.reduce(c.layout().labels())?.purity()? })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| b.purity.total_cmp(&a.purity).then(a.index.cmp(&b.index)));
    Ok(scores)
}

/// Covariance of the open mode alone; a convenience for reports.
pub fn open_mode_covariance(state: &GaussianState, mode: &str) -> Result<DMatrix<f64>> {
    Ok(state.reduce(&[mode])?.covariance().clone())
}
