//! Position point-transformations between global structures of the same closed
//! system, their symplectic action on Hamiltonians and states, environment
//! normal modes, and closed-form constants of the transformed Hamiltonians.
//!
//! A transform acts as `x' = A x`, `p' = A⁻ᵀ p`, i.e. `z' = S z` with
//! `S = blockdiag(A, A⁻ᵀ)`. Hamiltonians map by congruence `h' = S⁻ᵀ h S⁻¹` so
//! that the energy is unchanged, and covariances map as `σ' = S σ Sᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::models::{CaldeiraLeggettParams, ModelParts, SystemPotential, TwoModeParams};
use crate::phase_space::{submatrix, GaussianState, PhaseSpaceLayout, QuadraticHamiltonian};

pub const CM_LABEL: &str = "CM";
pub const RELATIVE_PREFIX: &str = "R";
pub const NORMAL_PREFIX: &str = "Q";
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoordinateTransform {
    source: PhaseSpaceLayout,
    target: PhaseSpaceLayout,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    condition: f64,
}

impl LinearCoordinateTransform {
    pub fn new(source: PhaseSpaceLayout, target: PhaseSpaceLayout, a: DMatrix<f64>) -> Result<Self> {
        let n = source.n_modes();
        if target.n_modes() != n || a.shape() != (n, n) {
            return Err(Error::InvalidParameter(format!(
                "transform must map {n} modes onto {n} modes with an {n}x{n} matrix"
            )));
        }
        let sv = a.clone().singular_values();
        let (max, min) = (sv.max(), sv.min());
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned(condition));
        }
        let a_inv = a.clone().try_inverse().ok_or(Error::IllConditioned(condition))?;
        Ok(Self { source, target, a, a_inv, condition })
    }

    pub fn identity(layout: &PhaseSpaceLayout) -> Self {
        let n = layout.n_modes();
        Self {
            source: layout.clone(),
            target: layout.clone(),
            a: DMatrix::identity(n, n),
            a_inv: DMatrix::identity(n, n),
            condition: 1.0,
        }
    }

    pub fn source(&self) -> &PhaseSpaceLayout {
        &self.source
    }

    pub fn target(&self) -> &PhaseSpaceLayout {
        &self.target
    }

    /// `A` in `x' = A x`.
    pub fn position_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn inverse_position_matrix(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// `S = blockdiag(A, A⁻ᵀ)`.
    pub fn symplectic(&self) -> DMatrix<f64> {
        block_diag(&self.a, &self.a_inv.transpose())
    }

    /// `S⁻¹ = blockdiag(A⁻¹, Aᵀ)`.
    pub fn symplectic_inverse(&self) -> DMatrix<f64> {
        block_diag(&self.a_inv, &self.a.transpose())
    }

    pub fn inverse(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
            a: self.a_inv.clone(),
            a_inv: self.a.clone(),
            condition: self.condition,
        }
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &LinearCoordinateTransform) -> Result<Self> {
        self.target.ensure_same(&next.source)?;
        Self::new(self.source.clone(), next.target.clone(), &next.a * &self.a)
    }

    /// Weight of new coordinate `new_mode` in the expansion of old coordinate
    /// `old_mode`: `x_old = Σ_new w · x'_new`.
    pub fn weight(&self, old_mode: usize, new_mode: usize) -> f64 {
        self.a_inv[(old_mode, new_mode)]
    }

    /// `S⁻ᵀ m S⁻¹` for any phase-space quadratic form.
    pub fn congruence(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let s_inv = self.symplectic_inverse();
        let out = s_inv.transpose() * m * &s_inv;
        (&out + out.transpose()) * 0.5
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

/// How the relative coordinates of a center-of-mass transform are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightFamily {
    /// `ρ_α = X_{1..α} − x_{α+1}`: mode `α+1` against the center of mass of modes `1..α`.
    /// Kinetic energy stays diagonal.
    #[default]
    Jacobi,
    /// `ρ_α = x_1 − x_{α+1}`: every mode against the open system, which produces
    /// mass-polarisation cross terms in the kinetic energy.
    RelativeToFirst,
}

impl WeightFamily {
    pub fn name(self) -> &'static str {
        match self {
            WeightFamily::Jacobi => "jacobi",
            WeightFamily::RelativeToFirst => "relative_to_first",
        }
    }
}

/// Center-of-mass plus relative coordinates of the whole system.
pub fn cm_relative_transform(
    source: &PhaseSpaceLayout,
    masses: &[f64],
    family: WeightFamily,
) -> Result<LinearCoordinateTransform> {
    let n = masses.len();
    if n < 2 {
        return Err(Error::InvalidParameter("center-of-mass transform needs at least 2 modes".into()));
    }
    if n != source.n_modes() {
        return Err(Error::InvalidParameter(format!("{n} masses for {} modes", source.n_modes())));
    }
    if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidParameter(format!("masses must be positive, got {m}")));
    }
    let total: f64 = masses.iter().sum();
    let mut a = DMatrix::zeros(n, n);
    for (k, m) in masses.iter().enumerate() {
        a[(0, k)] = m / total;
    }
    for alpha in 1..n {
        match family {
            WeightFamily::Jacobi => {
                let partial: f64 = masses[..alpha].iter().sum();
                for k in 0..alpha {
                    a[(alpha, k)] = masses[k] / partial;
                }
            }
            WeightFamily::RelativeToFirst => a[(alpha, 0)] = 1.0,
        }
        a[(alpha, alpha)] = -1.0;
    }
    let target = PhaseSpaceLayout::with_environment(CM_LABEL, RELATIVE_PREFIX, n - 1)?;
    LinearCoordinateTransform::new(source.clone(), target, a)
}

pub fn transform_hamiltonian(
    h: &QuadraticHamiltonian,
    t: &LinearCoordinateTransform,
) -> Result<QuadraticHamiltonian> {
    t.source.ensure_same(h.layout())?;
    let linear = t.symplectic_inverse().transpose() * h.linear_term();
    QuadraticHamiltonian::with_linear(t.target.clone(), t.congruence(h.matrix()), linear, h.tag())
}

pub fn transform_state(s: &GaussianState, t: &LinearCoordinateTransform) -> Result<GaussianState> {
    t.source.ensure_same(s.layout())?;
    let sm = t.symplectic();
    let cov = &sm * s.covariance() * sm.transpose();
    GaussianState::new_unchecked(t.target.clone(), &sm * s.mean(), (&cov + cov.transpose()) * 0.5)
}

fn sym_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    for mut col in vectors.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    (values, vectors)
}

fn sym_power(m: &DMatrix<f64>, power: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.powf(power))) * eig.eigenvectors.transpose()
}

fn check_no_position_momentum_mixing(h: &QuadraticHamiltonian, modes: &[usize]) -> Result<()> {
    let n = h.n_modes();
    let m = h.matrix();
    for &k in modes {
        for j in 0..n {
            if m[(k, n + j)].abs() > 1e-12 || m[(j, n + k)].abs() > 1e-12 {
                return Err(Error::Unsupported(format!(
                    "position-momentum cross term involving mode `{}`",
                    h.layout().labels()[k]
                )));
            }
        }
    }
    Ok(())
}

/// Brings the environment block to `Σ_l (P_l²/2 + ω_l² Q_l²/2)` with a point
/// transformation acting only on `env_modes`. The open-mode coupling becomes
/// `X Σ_l λ_l Q_l`. Frequencies ascend; each eigenvector's first nonzero component
/// is positive.
pub fn normal_mode_transform<S: AsRef<str>>(
    h: &QuadraticHamiltonian,
    env_modes: &[S],
) -> Result<(LinearCoordinateTransform, QuadraticHamiltonian)> {
    let layout = h.layout();
    let env = layout.indices_of(env_modes)?;
    if env.is_empty() {
        return Err(Error::EmptySelection);
    }
    let n = layout.n_modes();
    let open: Vec<usize> = (0..n).filter(|k| !env.contains(k)).collect();
    check_no_position_momentum_mixing(h, &env)?;
    let m = h.matrix();
    for &o in &open {
        for &e in &env {
            if m[(n + o, n + e)].abs() > 1e-12 {
                return Err(Error::Unsupported(format!(
                    "open mode `{}` couples to the environment through momenta",
                    layout.labels()[o]
                )));
            }
        }
    }
    let p_env: Vec<usize> = env.iter().map(|k| k + n).collect();
    let kinetic = submatrix(m, &p_env, &p_env);
    let potential = submatrix(m, &env, &env);
    let k_half = sym_power(&kinetic, 0.5);
    let k_neg_half = sym_power(&kinetic, -0.5);
    let (w2, u) = sym_eigen_sorted(&(&k_half * &potential * &k_half));
    if let Some((index, &value)) = w2.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::UnstableEnvironment { index, value });
    }
    let a_env = u.transpose() * k_neg_half;
    let mut a = DMatrix::identity(n, n);
    for (r, &er) in env.iter().enumerate() {
        for (c, &ec) in env.iter().enumerate() {
            a[(er, ec)] = a_env[(r, c)];
        }
    }
    let mut labels = layout.labels().to_vec();
    for (l, &k) in env.iter().enumerate() {
        labels[k] = format!("{NORMAL_PREFIX}{}", l + 1);
    }
    let target = PhaseSpaceLayout::new(labels)?;
    let t = LinearCoordinateTransform::new(layout.clone(), target, a)?;
    let transformed = transform_hamiltonian(h, &t)?;
    Ok((t, transformed))
}

/// `√(h_xx · h_pp)` for each listed mode; the frequency of a mode in normal form.
pub fn diagonal_frequencies<S: AsRef<str>>(h: &QuadraticHamiltonian, modes: &[S]) -> Result<Vec<f64>> {
    let n = h.n_modes();
    let m = h.matrix();
    h.layout()
        .indices_of(modes)?
        .into_iter()
        .map(|k| {
            let w2 = m[(k, k)] * m[(n + k, n + k)];
            if w2 > 0.0 {
                Ok(w2.sqrt())
            } else {
                Err(Error::UnstableEnvironment { index: k, value: w2 })
            }
        })
        .collect()
}

/// Squared normal-mode frequencies of the full closed dynamics, ascending. A
/// negative entry marks an unbounded direction.
pub fn closed_frequencies_sq(h: &QuadraticHamiltonian) -> Result<Vec<f64>> {
    let n = h.n_modes();
    check_no_position_momentum_mixing(h, &(0..n).collect::<Vec<_>>())?;
    let m = h.matrix();
    let kinetic = m.view((n, n), (n, n)).clone_owned();
    let potential = m.view((0, 0), (n, n)).clone_owned();
    let k_half = sym_power(&kinetic, 0.5);
    Ok(sym_eigen_sorted(&(&k_half * potential * &k_half)).0)
}

/// Parameters of a model whose CM+R constants have closed forms.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    TwoMode(TwoModeParams),
    CaldeiraLeggett(CaldeiraLeggettParams),
}

/// Coefficients of `H = P²/2M + c1 X² + p_ρ²/2μ + c2 ρ² − c3 X ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub mu: f64,
    pub total_mass: f64,
}

/// Terms contributed by `m_S ω_S² x_S²/2` once `x_S = X + Σ_α ω_αS ρ_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicAdditions {
    /// `m_S ω_S²/2`, coefficient of `X²`.
    pub cm: f64,
    /// `m_S ω_S² ω_αS²/2`, coefficient of `ρ_α²`.
    pub relative: Vec<f64>,
    /// `m_S ω_S² ω_αS ω_α'S`, coefficient of `ρ_α ρ_α'` per unordered pair.
    pub relative_cross: DMatrix<f64>,
    /// `m_S ω_S² ω_αS`, coefficient of `X ρ_α`.
    pub cm_relative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityFlags {
    /// `M Ω_CM²/2 > 0`.
    pub cm: bool,
    /// `μ_α ν_α²/2 > 0` for each α.
    pub relative: Vec<bool>,
}

impl PositivityFlags {
    pub fn all(&self) -> bool {
        self.cm && self.relative.iter().all(|&b| b)
    }
}

/// Closed-form constants of the CM+R Caldeira–Leggett Hamiltonian
/// `P²/2M + MΩ²X²/2 + Σ_α (p_α²/2μ_α + μ_α ν_α² ρ_α²/2) + V_R + X Σ_α σ_α ρ_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManyModeConstants {
    pub family: WeightFamily,
    pub sign: f64,
    /// `Σ_i κ_i`.
    pub kappa_sum: f64,
    pub total_mass: f64,
    /// `M Ω_CM²/2`.
    pub cm_potential: f64,
    pub omega_cm_sq: f64,
    pub reduced_masses: Vec<f64>,
    /// `μ_α ν_α²/2`.
    pub relative_potential: Vec<f64>,
    pub nu_sq: Vec<f64>,
    /// Full coefficient of `X ρ_α`, coupling sign included.
    pub sigma: Vec<f64>,
    /// `Ω_α = Σ_i κ_i ω_αi`.
    pub omega_alpha: Vec<f64>,
    /// `Ω_αα' = Σ_i m_i ω_i² ω_αi ω_α'i / 2`.
    pub omega_alpha_beta: DMatrix<f64>,
    /// Mass-polarisation constants: minus the off-diagonal of the velocity-space
    /// mass matrix of the relative coordinates.
    pub mass_polarization: DMatrix<f64>,
    /// Coefficient of `p_α p_α'` (α ≠ α') in the Hamiltonian.
    pub kinetic_cross: DMatrix<f64>,
    /// Position part of `V_R`: coefficient of `ρ_α ρ_α'` per unordered pair.
    pub relative_cross: DMatrix<f64>,
    /// `ω_αi` with `i = 0` the open system; row α, column i.
    pub weights: DMatrix<f64>,
    pub harmonic: Option<HarmonicAdditions>,
    pub positivity: PositivityFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransformedConstants {
    TwoMode(TwoModeConstants),
    ManyMode(Box<ManyModeConstants>),
}

/// Constants of the CM+R Hamiltonian from the model parameters alone, using the
/// `ω_αi` weights of the CM transform's inverse.
pub fn analytic_transformed_constants(
    params: &ModelParams,
    family: WeightFamily,
) -> Result<TransformedConstants> {
    match params {
        ModelParams::TwoMode(p) => {
            p.validate()?;
            let total = p.m_s + p.m_e;
            let mu = p.m_s * p.m_e / total;
            let w2 = p.omega * p.omega;
            Ok(TransformedConstants::TwoMode(TwoModeConstants {
                c1: p.m_e * w2 / 2.0 - p.coupling,
                c2: p.m_s * mu * w2 / (2.0 * total) + p.coupling * mu / total,
                c3: p.coupling * (p.m_e - p.m_s) / total + mu * w2,
                mu,
                total_mass: total,
            }))
        }
        ModelParams::CaldeiraLeggett(p) => many_mode_constants(p, family).map(|c| TransformedConstants::ManyMode(Box::new(c))),
    }
}

fn many_mode_constants(p: &CaldeiraLeggettParams, family: WeightFamily) -> Result<ManyModeConstants> {
    p.validate()?;
    let masses = p.masses();
    let t = cm_relative_transform(&p.layout(), &masses, family)?;
    let n_rel = masses.len() - 1;
    let s = p.bath.sign.factor();
    let total: f64 = masses.iter().sum();
    let bath = &p.bath.oscillators;
    // weights[α][i]: α over relative coordinates, i over all particles (0 = S)
    let weights = DMatrix::from_fn(n_rel, masses.len(), |alpha, i| t.weight(i, alpha + 1));
    let w_s = |alpha: usize| weights[(alpha, 0)];
    let w_i = |alpha: usize, i: usize| weights[(alpha, i + 1)];
    let kappa_sum: f64 = bath.iter().map(|o| o.coupling).sum();

    let omega_alpha: Vec<f64> =
        (0..n_rel).map(|a| bath.iter().enumerate().map(|(i, o)| o.coupling * w_i(a, i)).sum()).collect();
    let omega_alpha_beta = DMatrix::from_fn(n_rel, n_rel, |a, b| {
        bath.iter()
            .enumerate()
            .map(|(i, o)| o.mass * o.frequency * o.frequency * w_i(a, i) * w_i(b, i) / 2.0)
            .sum()
    });

    let harmonic = match p.potential {
        SystemPotential::FreeParticle => None,
        SystemPotential::Harmonic { omega_s } => {
            let k = p.m_s * omega_s * omega_s;
            Some(HarmonicAdditions {
                cm: k / 2.0,
                relative: (0..n_rel).map(|a| k * w_s(a) * w_s(a) / 2.0).collect(),
                relative_cross: DMatrix::from_fn(n_rel, n_rel, |a, b| if a == b { 0.0 } else { k * w_s(a) * w_s(b) }),
                cm_relative: (0..n_rel).map(|a| k * w_s(a)).collect(),
            })
        }
    };

    let mut cm_potential: f64 = bath.iter().map(|o| s * o.coupling + o.mass * o.frequency * o.frequency / 2.0).sum();
    let mut relative_potential: Vec<f64> = (0..n_rel)
        .map(|a| {
            s * w_s(a) * omega_alpha[a]
                + bath
                    .iter()
                    .enumerate()
                    .map(|(i, o)| o.mass * o.frequency * o.frequency * w_i(a, i).powi(2) / 2.0)
                    .sum::<f64>()
        })
        .collect();
    let mut sigma: Vec<f64> = (0..n_rel)
        .map(|a| {
            bath.iter()
                .enumerate()
                .map(|(i, o)| s * (o.coupling * w_i(a, i) + o.coupling * w_s(a)) + o.mass * o.frequency * o.frequency * w_i(a, i))
                .sum()
        })
        .collect();
    let mut relative_cross = DMatrix::from_fn(n_rel, n_rel, |a, b| {
        if a == b {
            0.0
        } else {
            2.0 * omega_alpha_beta[(a, b)] + s * (w_s(a) * omega_alpha[b] + w_s(b) * omega_alpha[a])
        }
    });
    if let Some(hm) = &harmonic {
        cm_potential += hm.cm;
        for a in 0..n_rel {
            relative_potential[a] += hm.relative[a];
            sigma[a] += hm.cm_relative[a];
        }
        relative_cross += &hm.relative_cross;
    }
    let (reduced_masses, mass_polarization, kinetic_cross) = kinetic_constants(&masses, family);
    let nu_sq = relative_potential.iter().zip(&reduced_masses).map(|(v, mu)| 2.0 * v / mu).collect();
    let positivity = PositivityFlags {
        cm: cm_potential > 0.0,
        relative: relative_potential.iter().map(|v| *v > 0.0).collect(),
    };
    Ok(ManyModeConstants {
        family,
        sign: s,
        kappa_sum,
        total_mass: total,
        cm_potential,
        omega_cm_sq: 2.0 * cm_potential / total,
        reduced_masses,
        relative_potential,
        nu_sq,
        sigma,
        omega_alpha,
        omega_alpha_beta,
        mass_polarization,
        kinetic_cross,
        relative_cross,
        weights,
        harmonic,
        positivity,
    })
}

/// Reduced masses, mass-polarisation constants and Hamiltonian `p_α p_α'`
/// coefficients in closed form for each weight family.
fn kinetic_constants(masses: &[f64], family: WeightFamily) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n_rel = masses.len() - 1;
    let total: f64 = masses.iter().sum();
    match family {
        WeightFamily::Jacobi => {
            let mu = (1..=n_rel)
                .map(|a| {
                    let inner: f64 = masses[..a].iter().sum();
                    inner * masses[a] / (inner + masses[a])
                })
                .collect();
            (mu, DMatrix::zeros(n_rel, n_rel), DMatrix::zeros(n_rel, n_rel))
        }
        WeightFamily::RelativeToFirst => {
            let m1 = masses[0];
            let mu = masses[1..].iter().map(|m| m1 * m / (m1 + m)).collect();
            let off = |a: usize, b: usize, v: f64| if a == b { 0.0 } else { v };
            let pol = DMatrix::from_fn(n_rel, n_rel, |a, b| off(a, b, masses[a + 1] * masses[b + 1] / total));
            let cross = DMatrix::from_fn(n_rel, n_rel, |a, b| off(a, b, 1.0 / m1));
            (mu, pol, cross)
        }
    }
}

/// One named comparison between a closed-form constant and the matrix route.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub name: String,
    pub analytic: f64,
    pub matrix: f64,
}

impl Residual {
    fn new(name: impl Into<String>, analytic: f64, matrix: f64) -> Self {
        Self { name: name.into(), analytic, matrix }
    }

    pub fn abs(&self) -> f64 {
        (self.analytic - self.matrix).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstantReport {
    pub residuals: Vec<Residual>,
}

impl ConstantReport {
    pub fn max_abs(&self) -> f64 {
        self.residuals.iter().map(Residual::abs).fold(0.0, f64::max)
    }

    /// Largest residual among constants whose name starts with `prefix`.
    pub fn max_abs_for(&self, prefix: &str) -> f64 {
        self.residuals.iter().filter(|r| r.name.starts_with(prefix)).map(Residual::abs).fold(0.0, f64::max)
    }

    pub fn extend(&mut self, other: ConstantReport) {
        self.residuals.extend(other.residuals);
    }
}

/// Reads every constant of `k` back out of the transformed matrix `h_prime`.
pub fn verify_constants(h_prime: &QuadraticHamiltonian, k: &TransformedConstants) -> Result<ConstantReport> {
    let m = h_prime.matrix();
    let n = h_prime.n_modes();
    let mut out = ConstantReport::default();
    match k {
        TransformedConstants::TwoMode(c) => {
            if n != 2 {
                return Err(Error::LayoutMismatch { expected: "CM,R1".into(), found: h_prime.layout().to_string() });
            }
            out.residuals.extend([
                Residual::new("c1", c.c1, m[(0, 0)] / 2.0),
                Residual::new("c2", c.c2, m[(1, 1)] / 2.0),
                Residual::new("c3", c.c3, -m[(0, 1)]),
                Residual::new("mu", c.mu, 1.0 / m[(3, 3)]),
                Residual::new("M", c.total_mass, 1.0 / m[(2, 2)]),
                Residual::new("P_p_cross", 0.0, m[(2, 3)]),
            ]);
        }
        TransformedConstants::ManyMode(c) => {
            let n_rel = c.reduced_masses.len();
            if n != n_rel + 1 {
                return Err(Error::LayoutMismatch {
                    expected: format!("{} modes", n_rel + 1),
                    found: h_prime.layout().to_string(),
                });
            }
            out.residuals.push(Residual::new("M_Omega_cm_sq", 2.0 * c.cm_potential, m[(0, 0)]));
            out.residuals.push(Residual::new("M", c.total_mass, 1.0 / m[(n, n)]));
            let p_rel: Vec<usize> = (n + 1..2 * n).collect();
            let metric = submatrix(m, &p_rel, &p_rel)
                .try_inverse()
                .ok_or_else(|| Error::InvalidHamiltonian("relative kinetic block is singular".into()))?;
            for a in 0..n_rel {
                let r = a + 1;
                out.residuals.push(Residual::new(format!("mu_nu_sq[{a}]"), 2.0 * c.relative_potential[a], m[(r, r)]));
                out.residuals.push(Residual::new(format!("sigma[{a}]"), c.sigma[a], m[(0, r)]));
                out.residuals.push(Residual::new(format!("mu[{a}]"), c.reduced_masses[a], 1.0 / m[(n + r, n + r)]));
                out.residuals.push(Residual::new(format!("P_p_cross[{a}]"), 0.0, m[(n, n + r)]));
                for b in (a + 1)..n_rel {
                    let rb = b + 1;
                    out.residuals.push(Residual::new(format!("V_R_position[{a},{b}]"), c.relative_cross[(a, b)], m[(r, rb)]));
                    out.residuals.push(Residual::new(format!("V_R_momentum[{a},{b}]"), c.kinetic_cross[(a, b)], m[(n + r, n + rb)]));
                    out.residuals.push(Residual::new(format!("C_mass_polarization[{a},{b}]"), c.mass_polarization[(a, b)], -metric[(a, b)]));
                }
            }
        }
    }
    Ok(out)
}

/// Checks the intermediate constants `Ω_α`, `Ω_αα'` and the harmonic additions
/// against the separately transformed pieces of the model.
pub fn verify_component_constants(parts_prime: &ModelParts, k: &ManyModeConstants) -> Result<ConstantReport> {
    let n_rel = k.reduced_masses.len();
    if parts_prime.layout.n_modes() != n_rel + 1 {
        return Err(Error::LayoutMismatch {
            expected: format!("{} modes", n_rel + 1),
            found: parts_prime.layout.to_string(),
        });
    }
    let mut out = ConstantReport::default();
    let kappa_sum = k.kappa_sum;
    for a in 0..n_rel {
        let r = a + 1;
        let w_s = k.weights[(a, 0)];
        let from_coupling = parts_prime.coupling[(0, r)] / k.sign - w_s * kappa_sum;
        out.residuals.push(Residual::new(format!("Omega_alpha[{a}]"), k.omega_alpha[a], from_coupling));
        for b in 0..n_rel {
            if a != b {
                out.residuals.push(Residual::new(
                    format!("Omega_alpha_beta[{a},{b}]"),
                    k.omega_alpha_beta[(a, b)],
                    parts_prime.bath_potential[(r, b + 1)] / 2.0,
                ));
            }
        }
    }
    let sp = &parts_prime.system_potential;
    match &k.harmonic {
        Some(hm) => {
            out.residuals.push(Residual::new("harmonic_cm", hm.cm, sp[(0, 0)] / 2.0));
            for a in 0..n_rel {
                let r = a + 1;
                out.residuals.push(Residual::new(format!("harmonic_rho_sq[{a}]"), hm.relative[a], sp[(r, r)] / 2.0));
                out.residuals.push(Residual::new(format!("harmonic_cm_rho[{a}]"), hm.cm_relative[a], sp[(0, r)]));
                for b in (a + 1)..n_rel {
                    out.residuals.push(Residual::new(
                        format!("harmonic_rho_cross[{a},{b}]"),
                        hm.relative_cross[(a, b)],
                        sp[(r, b + 1)],
                    ));
                }
            }
        }
        None => out.residuals.push(Residual::new("harmonic_absent", 0.0, sp.amax())),
    }
    Ok(out)
}

/// Transform a model's pieces with the same congruence as the full Hamiltonian.
pub fn transform_parts(parts: &ModelParts, t: &LinearCoordinateTransform) -> Result<ModelParts> {
    t.source.ensure_same(&parts.layout)?;
    Ok(parts.map(t.target.clone(), |m| t.congruence(m)))
}

/// Every new coordinate mixes at least two old ones.
pub fn is_global(t: &LinearCoordinateTransform) -> bool {
    t.position_matrix().row_iter().all(|row| row.iter().filter(|v| v.abs() > 1e-14).count() >= 2)
}

/// Transform a phase-space vector `z → S z`.
pub fn transform_vector(z: &DVector<f64>, t: &LinearCoordinateTransform) -> DVector<f64> {
    t.symplectic() * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_caldeira_leggett, build_two_mode, BathOscillator, BathParams, CouplingSign};
    use crate::phase_space::{symplectic_residual, CoherentAmplitude, ModeScale};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cl(rng: &mut ChaCha8Rng, n: usize, harmonic: bool, sign: CouplingSign) -> CaldeiraLeggettParams {
        let oscillators = (0..n)
            .map(|_| BathOscillator {
                mass: rng.gen_range(0.3..3.0),
                frequency: rng.gen_range(0.2..3.0),
                coupling: rng.gen_range(-0.4..0.4),
            })
            .collect();
        CaldeiraLeggettParams {
            m_s: rng.gen_range(0.3..3.0),
            potential: if harmonic {
                SystemPotential::Harmonic { omega_s: rng.gen_range(0.5..3.0) }
            } else {
                SystemPotential::FreeParticle
            },
            bath: BathParams { oscillators, sign },
        }
    }

    #[test]
    fn equal_mass_two_mode_transform() {
        let l = TwoModeParams::layout();
        let t = cm_relative_transform(&l, &[1.0, 1.0], WeightFamily::Jacobi).unwrap();
        let a = t.position_matrix();
        assert_eq!(a, &DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, -1.0]));
        assert_eq!(t.target().labels(), &["CM", "R1"]);
        assert!(is_global(&t));
    }

    #[test]
    fn general_two_mode_cm_row() {
        let t = cm_relative_transform(&TwoModeParams::layout(), &[2.0, 3.0], WeightFamily::Jacobi).unwrap();
        let a = t.position_matrix();
        assert!((a[(0, 0)] - 0.4).abs() < 1e-15 && (a[(0, 1)] - 0.6).abs() < 1e-15);
        assert_eq!((a[(1, 0)], a[(1, 1)]), (1.0, -1.0));
    }

    #[test]
    fn inverse_first_column_is_ones() {
        let l = PhaseSpaceLayout::new(["a", "b", "c", "d"]).unwrap();
        for family in [WeightFamily::Jacobi, WeightFamily::RelativeToFirst] {
            let t = cm_relative_transform(&l, &[1.0, 2.5, 0.3, 4.0], family).unwrap();
            for i in 0..4 {
                assert!((t.inverse_position_matrix()[(i, 0)] - 1.0).abs() < 1e-12);
            }
            assert!(is_global(&t));
        }
        let l3 = PhaseSpaceLayout::new(["a", "b", "c"]).unwrap();
        let t = cm_relative_transform(&l3, &[1.0, 1.0, 1.0], WeightFamily::Jacobi).unwrap();
        assert!(t.inverse_position_matrix().column(0).iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn cm_transform_errors() {
        let l1 = PhaseSpaceLayout::new(["a"]).unwrap();
        assert!(cm_relative_transform(&l1, &[1.0], WeightFamily::Jacobi).is_err());
        let l2 = TwoModeParams::layout();
        assert!(cm_relative_transform(&l2, &[1.0, -1.0], WeightFamily::Jacobi).is_err());
        assert!(cm_relative_transform(&l2, &[1.0, 0.0], WeightFamily::Jacobi).is_err());
    }

    #[test]
    fn ill_conditioned_rejected() {
        let l = TwoModeParams::layout();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-14]);
        assert!(matches!(LinearCoordinateTransform::new(l.clone(), l, a), Err(Error::IllConditioned(_))));
    }

    proptest! {
        #[test]
        fn cm_transforms_are_symplectic(masses in prop::collection::vec(0.05f64..20.0, 2..9), jacobi in any::<bool>()) {
            let l = PhaseSpaceLayout::with_environment("S", "E", masses.len() - 1).unwrap();
            let family = if jacobi { WeightFamily::Jacobi } else { WeightFamily::RelativeToFirst };
            let t = cm_relative_transform(&l, &masses, family).unwrap();
            prop_assert!(symplectic_residual(&t.symplectic()) < 1e-10);
            prop_assert!(symplectic_residual(&t.inverse().symplectic()) < 1e-10);
        }
    }

    #[test]
    fn identity_transform_is_noop() {
        let h = build_two_mode(&TwoModeParams { m_s: 1.3, m_e: 0.7, omega: 1.1, coupling: 0.2 }).unwrap();
        let t = LinearCoordinateTransform::identity(h.layout());
        assert_eq!(transform_hamiltonian(&h, &t).unwrap().matrix(), h.matrix());
        let s = GaussianState::coherent(h.layout(), &[ModeScale::unit(), ModeScale::unit()], &[CoherentAmplitude::new("S", 1.0, 2.0)]).unwrap();
        assert_eq!(transform_state(&s, &t).unwrap(), s);
    }

    #[test]
    fn two_mode_constants_reference_values() {
        let p = TwoModeParams { m_s: 1.0, m_e: 1.0, omega: 1.0, coupling: 0.25 };
        let h = build_two_mode(&p).unwrap();
        let t = cm_relative_transform(h.layout(), &p.masses(), WeightFamily::Jacobi).unwrap();
        let hp = transform_hamiltonian(&h, &t).unwrap();
        let m = hp.matrix();
        assert!((m[(0, 0)] / 2.0 - 0.25).abs() < 1e-14);
        assert!((m[(1, 1)] / 2.0 - 0.1875).abs() < 1e-14);
        assert!((-m[(0, 1)] - 0.5).abs() < 1e-14);
        assert!((1.0 / m[(3, 3)] - 0.5).abs() < 1e-14);
        let k = analytic_transformed_constants(&ModelParams::TwoMode(p), WeightFamily::Jacobi).unwrap();
        let TransformedConstants::TwoMode(c) = k else { unreachable!() };
        assert_eq!((c.c1, c.c2, c.c3, c.mu), (0.25, 0.1875, 0.5, 0.5));
    }

    #[test]
    fn two_mode_constant_special_cases() {
        let get = |p: TwoModeParams| match analytic_transformed_constants(&ModelParams::TwoMode(p), WeightFamily::Jacobi).unwrap() {
            TransformedConstants::TwoMode(c) => c,
            _ => unreachable!(),
        };
        let c = get(TwoModeParams { m_s: 1.5, m_e: 0.5, omega: 2.0, coupling: 0.0 });
        let mu = 1.5 * 0.5 / 2.0;
        assert!((c.c1 - 0.5 * 4.0 / 2.0).abs() < 1e-15);
        assert!((c.c3 - mu * 4.0).abs() < 1e-15);
        assert!(c.c3 > 0.0);
        let c = get(TwoModeParams { m_s: 0.8, m_e: 0.8, omega: 1.2, coupling: 0.3 });
        assert!((c.c3 - 0.4 * 1.44).abs() < 1e-15);
    }

    #[test]
    fn free_particle_without_coupling_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = random_cl(&mut rng, 4, false, CouplingSign::Minus);
        p.bath.oscillators.iter_mut().for_each(|o| o.coupling = 0.0);
        let TransformedConstants::ManyMode(c) =
            analytic_transformed_constants(&ModelParams::CaldeiraLeggett(p.clone()), WeightFamily::Jacobi).unwrap()
        else {
            unreachable!()
        };
        let expected: f64 = p.bath.oscillators.iter().map(|o| o.mass * o.frequency.powi(2) / 2.0).sum();
        assert!((c.cm_potential - expected).abs() < 1e-13);
        assert!(c.positivity.cm);
    }

    #[test]
    fn two_mode_residuals() {
        let p = TwoModeParams { m_s: 0.7, m_e: 2.1, omega: 1.3, coupling: -0.4 };
        let h = build_two_mode(&p).unwrap();
        let t = cm_relative_transform(h.layout(), &p.masses(), WeightFamily::Jacobi).unwrap();
        let hp = transform_hamiltonian(&h, &t).unwrap();
        let k = analytic_transformed_constants(&ModelParams::TwoMode(p), WeightFamily::Jacobi).unwrap();
        assert!(verify_constants(&hp, &k).unwrap().max_abs() < 1e-10);
    }

    fn many_mode_residuals(n: usize, harmonic: bool, family: WeightFamily, seed: u64) -> ConstantReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sign = if seed.is_multiple_of(2) { CouplingSign::Plus } else { CouplingSign::Minus };
        let p = random_cl(&mut rng, n, harmonic, sign);
        let h = build_caldeira_leggett(&p).unwrap();
        let t = cm_relative_transform(h.layout(), &p.masses(), family).unwrap();
        let hp = transform_hamiltonian(&h, &t).unwrap();
        let k = analytic_transformed_constants(&ModelParams::CaldeiraLeggett(p.clone()), family).unwrap();
        let mut report = verify_constants(&hp, &k).unwrap();
        let TransformedConstants::ManyMode(mk) = &k else { unreachable!() };
        let parts = transform_parts(&p.parts().unwrap(), &t).unwrap();
        report.extend(verify_component_constants(&parts, mk).unwrap());
        report
    }

    #[test]
    fn many_mode_residuals_both_cases() {
        for family in [WeightFamily::Jacobi, WeightFamily::RelativeToFirst] {
            for (seed, harmonic) in [(1, false), (2, true), (3, true), (4, false)] {
                let r = many_mode_residuals(3, harmonic, family, seed);
                assert!(r.max_abs() < 1e-9, "{family:?} {r:?}");
                assert_eq!(r.residuals.iter().any(|x| x.name.starts_with("harmonic_cm")), harmonic);
            }
        }
    }

    #[test]
    fn relative_to_first_has_mass_polarization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_cl(&mut rng, 3, false, CouplingSign::Minus);
        let TransformedConstants::ManyMode(c) =
            analytic_transformed_constants(&ModelParams::CaldeiraLeggett(p.clone()), WeightFamily::RelativeToFirst).unwrap()
        else {
            unreachable!()
        };
        let m = p.masses();
        let total: f64 = m.iter().sum();
        assert!((c.mass_polarization[(0, 1)] - m[1] * m[2] / total).abs() < 1e-15);
        assert!((c.reduced_masses[0] - m[0] * m[1] / (m[0] + m[1])).abs() < 1e-15);
    }

    #[test]
    fn round_trip_restores_hamiltonian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_cl(&mut rng, 5, true, CouplingSign::Minus);
        let h = build_caldeira_leggett(&p).unwrap();
        let t = cm_relative_transform(h.layout(), &p.masses(), WeightFamily::Jacobi).unwrap();
        let back = transform_hamiltonian(&transform_hamiltonian(&h, &t).unwrap(), &t.inverse()).unwrap();
        assert!((back.matrix() - h.matrix()).amax() < 1e-10);
        assert_eq!(back.layout(), h.layout());
    }

    #[test]
    fn energy_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_cl(&mut rng, 4, true, CouplingSign::Plus);
        let h = build_caldeira_leggett(&p).unwrap();
        let t = cm_relative_transform(h.layout(), &p.masses(), WeightFamily::Jacobi).unwrap();
        let hp = transform_hamiltonian(&h, &t).unwrap();
        for _ in 0..100 {
            let z = DVector::from_fn(10, |_, _| rng.gen_range(-2.0..2.0));
            let zp = transform_vector(&z, &t);
            assert!((h.energy_at(&z) - hp.energy_at(&zp)).abs() < 1e-11);
        }
    }

    #[test]
    fn closed_spectrum_is_transform_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = random_cl(&mut rng, 5, true, CouplingSign::Minus);
        let h = build_caldeira_leggett(&p).unwrap();
        let t = cm_relative_transform(h.layout(), &p.masses(), WeightFamily::RelativeToFirst).unwrap();
        let hp = transform_hamiltonian(&h, &t).unwrap();
        let a = closed_frequencies_sq(&h).unwrap();
        let b = closed_frequencies_sq(&hp).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
        }
    }

    fn stable_cm_model(n: usize, seed: u64) -> (QuadraticHamiltonian, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_cl(&mut rng, n, true, CouplingSign::Minus);
        p.bath.oscillators.iter_mut().for_each(|o| o.coupling *= 0.2);
        if let SystemPotential::Harmonic { ref mut omega_s } = p.potential {
            *omega_s += 1.0;
        }
        let h = build_caldeira_leggett(&p).unwrap();
        let t = cm_relative_transform(h.layout(), &p.masses(), WeightFamily::RelativeToFirst).unwrap();
        let hp = transform_hamiltonian(&h, &t).unwrap();
        let env = hp.layout().complement(&[CM_LABEL]);
        (hp, env)
    }

    #[test]
    fn normal_modes_linearize_environment() {
        for n in [2, 3, 5, 8] {
            let (hp, env) = stable_cm_model(n, 100 + n as u64);
            let before = closed_frequencies_sq(&hp).unwrap();
            let (t, hn) = normal_mode_transform(&hp, &env).unwrap();
            let m = hn.matrix();
            let dim = n + 1;
            for a in 1..dim {
                for b in 1..dim {
                    if a != b {
                        assert!(m[(a, b)].abs() < 1e-10);
                        assert!(m[(dim + a, dim + b)].abs() < 1e-10);
                    }
                }
                assert!((m[(dim + a, dim + a)] - 1.0).abs() < 1e-10);
            }
            // open mode untouched
            let a = t.position_matrix();
            assert_eq!(a[(0, 0)], 1.0);
            assert!((1..dim).all(|k| a[(0, k)] == 0.0 && a[(k, 0)] == 0.0));
            assert!(symplectic_residual(&t.symplectic()) < 1e-10);
            // spectrum of the closed dynamics is unchanged
            let after = closed_frequencies_sq(&hn).unwrap();
            for (x, y) in before.iter().zip(&after) {
                assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
            }
            // environment eigenfrequencies unchanged
            let env_h = crate::phase_space::submatrix(hp.matrix(), &(1..dim).chain(dim + 1..2 * dim).collect::<Vec<_>>(), &(1..dim).chain(dim + 1..2 * dim).collect::<Vec<_>>());
            let env_only = QuadraticHamiltonian::new(PhaseSpaceLayout::new(env.clone()).unwrap(), env_h, "env").unwrap();
            let w_env = closed_frequencies_sq(&env_only).unwrap();
            let w_norm: Vec<f64> = diagonal_frequencies(&hn, &hn.layout().complement(&[CM_LABEL])).unwrap().iter().map(|w| w * w).collect();
            for (x, y) in w_env.iter().zip(&w_norm) {
                assert!((x - y).abs() < 1e-10 * x.max(1.0));
            }
        }
    }

    #[test]
    fn normal_modes_of_normal_bath_are_identity() {
        let p = CaldeiraLeggettParams {
            m_s: 1.0,
            potential: SystemPotential::Harmonic { omega_s: 2.0 },
            bath: BathParams {
                oscillators: (1..=4).map(|i| BathOscillator { mass: 1.0, frequency: i as f64 * 0.5, coupling: 0.1 }).collect(),
                sign: CouplingSign::Minus,
            },
        };
        let h = build_caldeira_leggett(&p).unwrap();
        let env = h.layout().complement(&["S"]);
        let (t, hn) = normal_mode_transform(&h, &env).unwrap();
        assert!((t.position_matrix() - DMatrix::<f64>::identity(5, 5)).amax() < 1e-12);
        assert!((hn.matrix() - h.matrix()).amax() < 1e-12);
    }

    #[test]
    fn unstable_environment_is_reported() {
        let layout = PhaseSpaceLayout::new(["S", "E1", "E2"]).unwrap();
        let mut h = DMatrix::identity(6, 6);
        h[(1, 2)] = 2.0;
        h[(2, 1)] = 2.0;
        let h = QuadraticHamiltonian::new(layout, h, "unstable").unwrap();
        let err = normal_mode_transform(&h, &["E1", "E2"]).unwrap_err();
        assert!(matches!(err, Error::UnstableEnvironment { index: 0, value } if (value + 1.0).abs() < 1e-12));
    }

    #[test]
    fn momentum_coupled_open_mode_unsupported() {
        let layout = PhaseSpaceLayout::new(["S", "E1"]).unwrap();
        let mut h = DMatrix::identity(4, 4);
        h[(2, 3)] = 0.1;
        h[(3, 2)] = 0.1;
        let h = QuadraticHamiltonian::new(layout, h, "pp").unwrap();
        assert!(matches!(normal_mode_transform(&h, &["E1"]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn transform_state_preserves_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_cl(&mut rng, 3, true, CouplingSign::Minus);
        let layout = p.layout();
        let scales: Vec<(ModeScale, f64)> = std::iter::once((ModeScale::new(p.m_s, 1.0).unwrap(), 0.0))
            .chain(p.bath.scales().into_iter().map(|s| (s, 0.8)))
            .collect();
        let st = GaussianState::thermal(&layout, &scales).unwrap();
        let t = cm_relative_transform(&layout, &p.masses(), WeightFamily::Jacobi).unwrap();
        let tst = transform_state(&st, &t).unwrap();
        assert!((st.purity().unwrap() - tst.purity().unwrap()).abs() < 1e-12);
        assert!(tst.uncertainty_min_eigenvalue() > -1e-10);
    }

    #[test]
    fn product_state_is_entangled_in_cm_frame() {
        // vacua of different frequencies: separable in S|E, entangled in CM|R
        let layout = TwoModeParams::layout();
        let st = GaussianState::vacuum(&layout, &[ModeScale::new(1.0, 1.0).unwrap(), ModeScale::new(2.0, 2.0).unwrap()]).unwrap();
        assert!(st.log_negativity(&["S"], &["E"]).unwrap() < 1e-12);
        let t = cm_relative_transform(&layout, &[1.0, 2.0], WeightFamily::Jacobi).unwrap();
        let cm = transform_state(&st, &t).unwrap();
        assert!(cm.log_negativity(&["CM"], &["R1"]).unwrap() > 0.01);
    }

    #[test]
    fn layout_mismatch_errors() {
        let h = build_two_mode(&TwoModeParams { m_s: 1.0, m_e: 1.0, omega: 1.0, coupling: 0.1 }).unwrap();
        let other = PhaseSpaceLayout::new(["A", "B"]).unwrap();
        let t = cm_relative_transform(&other, &[1.0, 1.0], WeightFamily::Jacobi).unwrap();
        assert!(matches!(transform_hamiltonian(&h, &t), Err(Error::LayoutMismatch { .. })));
    }
}
