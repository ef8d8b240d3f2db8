//! Canonical phase-space representation.
//!
//! Coordinates are stacked as `z = (x_1..x_n, p_1..p_n)` in natural units
//! (ħ = k_B = 1). Covariances use `σ_ij = ½⟨{Δz_i, Δz_j}⟩`, so the vacuum of a
//! unit-mass, unit-frequency mode is `I/2`.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest eigenvalue of `σ + iJ/2` tolerated before a state is rejected.
pub const UNCERTAINTY_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

/// Ordered, uniquely labelled list of modes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhaseSpaceLayout {
    labels: Vec<String>,
}

impl PhaseSpaceLayout {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::EmptySelection);
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateMode(l.clone()));
            }
        }
        Ok(Self { labels })
    }

    /// Layout `prefix1..prefixN` preceded by `head`.
    pub fn with_environment(head: &str, prefix: &str, n_env: usize) -> Result<Self> {
        let labels =
            std::iter::once(head.to_string()).chain((1..=n_env).map(|i| format!("{prefix}{i}")));
        Self::new(labels)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_modes(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    pub fn indices_of<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.index_of(l.as_ref())).collect()
    }

    /// Labels of all modes except `excluded`.
    pub fn complement<S: AsRef<str>>(&self, excluded: &[S]) -> Vec<String> {
        self.labels
            .iter()
            .filter(|l| !excluded.iter().any(|e| e.as_ref() == l.as_str()))
            .cloned()
            .collect()
    }

    /// Phase-space row indices `(x_k..., p_k...)` of the given mode indices.
    pub fn phase_indices(&self, modes: &[usize]) -> Vec<usize> {
        let n = self.n_modes();
        modes.iter().copied().chain(modes.iter().map(|&k| k + n)).collect()
    }

    pub fn ensure_same(&self, other: &PhaseSpaceLayout) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::LayoutMismatch { expected: self.to_string(), found: other.to_string() })
        }
    }
}

impl fmt::Display for PhaseSpaceLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels.join(","))
    }
}

/// `J = [[0, I], [-I, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        j[(k, n_modes + k)] = 1.0;
        j[(n_modes + k, k)] = -1.0;
    }
    j
}

/// `max |Sᵀ J S − J|`.
pub fn symplectic_residual(s: &DMatrix<f64>) -> f64 {
    let j = symplectic_form(s.nrows() / 2);
    (s.transpose() * &j * s - j).amax()
}

pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub(crate) fn subvector(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| v[rows[i]])
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() / scale
}

/// Free-text model tag carried alongside a Hamiltonian.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelTag(pub String);

/// `H = ½ zᵀ h z + lᵀ z`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticHamiltonian {
    layout: PhaseSpaceLayout,
    h: DMatrix<f64>,
    linear: DVector<f64>,
    tag: ModelTag,
}

impl QuadraticHamiltonian {
    pub fn new(layout: PhaseSpaceLayout, h: DMatrix<f64>, tag: impl Into<String>) -> Result<Self> {
        let linear = DVector::zeros(layout.dim());
        Self::with_linear(layout, h, linear, tag)
    }

    pub fn with_linear(
        layout: PhaseSpaceLayout,
        h: DMatrix<f64>,
        linear: DVector<f64>,
        tag: impl Into<String>,
    ) -> Result<Self> {
        let d = layout.dim();
        if h.shape() != (d, d) || linear.len() != d {
            return Err(Error::InvalidHamiltonian(format!(
                "expected {d}x{d} matrix for {} modes",
                layout.n_modes()
            )));
        }
        if asymmetry(&h) > SYMMETRY_TOL {
            return Err(Error::InvalidHamiltonian("h_matrix is not symmetric".into()));
        }
        let n = layout.n_modes();
        let kinetic = h.view((n, n), (n, n)).clone_owned();
        if kinetic.cholesky().is_none() {
            return Err(Error::InvalidHamiltonian(
                "momentum block is not positive definite (non-positive mass)".into(),
            ));
        }
        Ok(Self { layout, h, linear, tag: ModelTag(tag.into()) })
    }

    pub fn layout(&self) -> &PhaseSpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn tag(&self) -> &str {
        &self.tag.0
    }

    pub fn n_modes(&self) -> usize {
        self.layout.n_modes()
    }

    /// Classical energy at a phase-space point.
    pub fn energy_at(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.linear.dot(z)
    }

    /// Quantum expectation value `½ mᵀhm + ½ tr(hσ) + lᵀm` in a Gaussian state.
    pub fn expectation(&self, state: &GaussianState) -> f64 {
        let m = state.mean();
        0.5 * m.dot(&(&self.h * m)) + 0.5 * (&self.h * state.covariance()).trace() + self.linear.dot(m)
    }

    /// `(mass, frequency)` of the uncoupled oscillator on one mode: mass from the
    /// `p²` coefficient, frequency from the `x²` coefficient, falling back to
    /// `reference_frequency` when that coefficient is not positive.
    pub fn mode_scale(&self, label: &str, reference_frequency: f64) -> Result<ModeScale> {
        let k = self.layout.index_of(label)?;
        let n = self.n_modes();
        let mass = 1.0 / self.h[(n + k, n + k)];
        let stiffness = self.h[(k, k)];
        let frequency =
            if stiffness > 0.0 { (stiffness / mass).sqrt() } else { reference_frequency };
        ModeScale::new(mass, frequency)
    }
}

/// Mass and frequency setting the vacuum width of a mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeScale {
    pub mass: f64,
    pub frequency: f64,
}

impl ModeScale {
    pub fn new(mass: f64, frequency: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {mass}")));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "frequency must be positive, got {frequency}"
            )));
        }
        Ok(Self { mass, frequency })
    }

    pub fn unit() -> Self {
        Self { mass: 1.0, frequency: 1.0 }
    }

    pub fn m_omega(&self) -> f64 {
        self.mass * self.frequency
    }
}

/// Phase-space displacement of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentAmplitude {
    pub mode: String,
    pub x0: f64,
    pub p0: f64,
}

impl CoherentAmplitude {
    pub fn new(mode: impl Into<String>, x0: f64, p0: f64) -> Self {
        Self { mode: mode.into(), x0, p0 }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { mode: self.mode.clone(), x0: s * self.x0, p0: s * self.p0 }
    }

    /// Squared distance in vacuum-scaled coordinates `(x√(mω), p/√(mω))`.
    pub fn scaled_distance_sq(&self, other: &CoherentAmplitude, scale: ModeScale) -> f64 {
        let mw = scale.m_omega();
        let dx = self.x0 - other.x0;
        let dp = self.p0 - other.p0;
        dx * dx * mw + dp * dp / mw
    }
}

/// Mean vector and covariance matrix of a Gaussian state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    layout: PhaseSpaceLayout,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianState {
    /// Validates symmetry and the uncertainty relation `σ + iJ/2 ⪰ 0`.
    pub fn new(layout: PhaseSpaceLayout, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let state = Self::new_unchecked(layout, mean, covariance)?;
        let min = state.uncertainty_min_eigenvalue();
        if min < -UNCERTAINTY_TOL {
            return Err(Error::InvalidState(format!(
                "uncertainty relation violated (min eigenvalue of σ + iJ/2 is {min:.3e})"
            )));
        }
        Ok(state)
    }

    /// Shape and symmetry checks only; used for states produced by symplectic maps of
    /// valid states, where rounding may push the uncertainty eigenvalue a hair negative.
    pub(crate) fn new_unchecked(
        layout: PhaseSpaceLayout,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        let d = layout.dim();
        if mean.len() != d || covariance.shape() != (d, d) {
            return Err(Error::InvalidState(format!("dimension mismatch for {} modes", layout.n_modes())));
        }
        if !mean.iter().chain(covariance.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidState("non-finite moments".into()));
        }
        if asymmetry(&covariance) > SYMMETRY_TOL {
            return Err(Error::InvalidState("covariance is not symmetric".into()));
        }
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        Ok(Self { layout, mean, covariance })
    }

    pub fn vacuum(layout: &PhaseSpaceLayout, scales: &[ModeScale]) -> Result<Self> {
        Self::thermal(layout, &scales.iter().map(|&s| (s, 0.0)).collect::<Vec<_>>())
    }

    /// Per-mode thermal state with `n̄ = 1/(e^{ω/T} − 1)`.
    pub fn thermal(layout: &PhaseSpaceLayout, modes: &[(ModeScale, f64)]) -> Result<Self> {
        let n = layout.n_modes();
        if modes.len() != n {
            return Err(Error::InvalidParameter(format!("expected {n} mode specs, got {}", modes.len())));
        }
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for (k, (scale, temperature)) in modes.iter().enumerate() {
            if !(*temperature >= 0.0) {
                return Err(Error::InvalidParameter(format!("temperature must be >= 0, got {temperature}")));
            }
            let occ = bose_occupation(scale.frequency, *temperature);
            let mw = scale.m_omega();
            cov[(k, k)] = (occ + 0.5) / mw;
            cov[(n + k, n + k)] = (occ + 0.5) * mw;
        }
        Self::new(layout.clone(), DVector::zeros(2 * n), cov)
    }

    /// Vacuum covariance on every mode, displaced at the listed modes.
    pub fn coherent(
        layout: &PhaseSpaceLayout,
        scales: &[ModeScale],
        amplitudes: &[CoherentAmplitude],
    ) -> Result<Self> {
        let vac = Self::vacuum(layout, scales)?;
        amplitudes.iter().try_fold(vac, |s, a| s.displaced(a))
    }

    /// Single-mode squeezed vacuum: `Var x = e^{-2r}/(2mω)`, `Var p = e^{2r} mω/2`.
    pub fn squeezed(layout: &PhaseSpaceLayout, scale: ModeScale, r: f64) -> Result<Self> {
        if layout.n_modes() != 1 {
            return Err(Error::InvalidParameter("squeezed state expects a single-mode layout".into()));
        }
        let mw = scale.m_omega();
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![
            (-2.0 * r).exp() / (2.0 * mw),
            (2.0 * r).exp() * mw / 2.0,
        ]));
        Self::new(layout.clone(), DVector::zeros(2), cov)
    }

    /// Tensor product of states on disjoint modes, arranged in `layout` order.
    pub fn product(layout: &PhaseSpaceLayout, parts: &[&GaussianState]) -> Result<Self> {
        let n = layout.n_modes();
        let mut mean = DVector::zeros(2 * n);
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        let mut covered = vec![false; n];
        for part in parts {
            let targets = layout.indices_of(part.layout.labels())?;
            let rows = layout.phase_indices(&targets);
            let m = part.layout.n_modes();
            for a in 0..2 * m {
                mean[rows[a]] = part.mean[a];
                for b in 0..2 * m {
                    cov[(rows[a], rows[b])] = part.covariance[(a, b)];
                }
            }
            for t in targets {
                if covered[t] {
                    return Err(Error::DuplicateMode(layout.labels()[t].clone()));
                }
                covered[t] = true;
            }
        }
        if let Some(k) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidState(format!("mode `{}` not covered by product", layout.labels()[k])));
        }
        Self::new(layout.clone(), mean, cov)
    }

    pub fn displaced(&self, amp: &CoherentAmplitude) -> Result<Self> {
        let k = self.layout.index_of(&amp.mode)?;
        let mut mean = self.mean.clone();
        mean[k] += amp.x0;
        mean[self.layout.n_modes() + k] += amp.p0;
        Ok(Self { layout: self.layout.clone(), mean, covariance: self.covariance.clone() })
    }

    pub fn layout(&self) -> &PhaseSpaceLayout {
        &self.layout
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn n_modes(&self) -> usize {
        self.layout.n_modes()
    }

    /// Smallest eigenvalue of the Hermitian matrix `σ + iJ/2`.
    pub fn uncertainty_min_eigenvalue(&self) -> f64 {
        let j = symplectic_form(self.n_modes());
        let m = DMatrix::from_fn(self.covariance.nrows(), self.covariance.ncols(), |a, b| {
            Complex::new(self.covariance[(a, b)], 0.5 * j[(a, b)])
        });
        SymmetricEigen::new(m).eigenvalues.min()
    }

    pub fn purity(&self) -> Result<f64> {
        let det = self.covariance.determinant();
        if !(det > 0.0) {
            return Err(Error::InvalidState(format!("degenerate covariance (det = {det:.3e})")));
        }
        let p = 1.0 / (2f64.powi(self.n_modes() as i32) * det.sqrt());
        if p > 1.0 + 1e-8 {
            return Err(Error::InvalidState(format!("purity {p} exceeds 1; uncertainty relation violated")));
        }
        Ok(p.min(1.0))
    }

    /// Marginal on `modes`, in the order given.
    pub fn reduce<S: AsRef<str>>(&self, modes: &[S]) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::EmptySelection);
        }
        let idx = self.layout.indices_of(modes)?;
        let layout = PhaseSpaceLayout::new(modes.iter().map(|s| s.as_ref().to_string()))?;
        let rows = self.layout.phase_indices(&idx);
        Ok(Self {
            layout,
            mean: subvector(&self.mean, &rows),
            covariance: submatrix(&self.covariance, &rows, &rows),
        })
    }

    /// Symplectic eigenvalues `ν_k` (vacuum: ½), ascending.
    pub fn symplectic_eigenvalues(&self) -> Result<Vec<f64>> {
        symplectic_spectrum(&self.covariance)
    }

    /// Gaussian logarithmic negativity across `(a, b)`, from the partially transposed
    /// covariance (momentum sign flip on `b`).
    pub fn log_negativity<S: AsRef<str>>(&self, a: &[S], b: &[S]) -> Result<f64> {
        let ia = self.layout.indices_of(a)?;
        let ib = self.layout.indices_of(b)?;
        let mut all: Vec<usize> = ia.iter().chain(ib.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        if ia.is_empty() || ib.is_empty() {
            return Err(Error::InvalidBipartition("both parts must be non-empty".into()));
        }
        if all.len() != ia.len() + ib.len() || all.len() != self.n_modes() {
            return Err(Error::InvalidBipartition(format!(
                "parts must partition the {} modes [{}] without overlap",
                self.n_modes(),
                self.layout
            )));
        }
        let n = self.n_modes();
        let mut flip = DMatrix::<f64>::identity(2 * n, 2 * n);
        for &k in &ib {
            flip[(n + k, n + k)] = -1.0;
        }
        let pt = &flip * &self.covariance * &flip;
        Ok(symplectic_spectrum(&pt)?
            .into_iter()
            .map(|nu| (-(2.0 * nu).ln()).max(0.0))
            .sum())
    }
}

fn bose_occupation(frequency: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        0.0
    } else {
        1.0 / (frequency / temperature).exp_m1()
    }
}

/// Symplectic spectrum via the antisymmetric matrix `σ^{1/2} J σ^{1/2}`, whose
/// singular values are the `ν_k`, each appearing twice.
fn symplectic_spectrum(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = cov.nrows() / 2;
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::InvalidState("covariance is not positive definite".into()));
    }
    let sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
        * eig.eigenvectors.transpose();
    let k = &sqrt * symplectic_form(n) * &sqrt;
    let ktk = k.transpose() * &k;
    let mut nu2: Vec<f64> = SymmetricEigen::new((&ktk + ktk.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    nu2.sort_by(|a, b| a.total_cmp(b));
    Ok(nu2.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect())
}

/// Natural log of the normalised Hilbert–Schmidt overlap
/// `tr(ρ_a ρ_b) / √(tr ρ_a² · tr ρ_b²)`.
pub fn gaussian_log_overlap(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    a.layout.ensure_same(&b.layout)?;
    let sum = &a.covariance + &b.covariance;
    let chol = sum
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidState("σ_a + σ_b not positive definite".into()))?;
    let delta = &a.mean - &b.mean;
    let quad = delta.dot(&chol.solve(&delta));
    let ln_det = |m: &DMatrix<f64>| -> Result<f64> {
        let c = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidState("covariance not positive definite".into()))?;
        Ok(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    };
    let ln_tr_ab = -0.5 * quad - 0.5 * ln_det(&sum)?;
    let ln_pa = -0.5 * ln_det(&(&a.covariance * 2.0))?;
    let ln_pb = -0.5 * ln_det(&(&b.covariance * 2.0))?;
    Ok((ln_tr_ab - 0.5 * (ln_pa + ln_pb)).min(0.0))
}

pub fn gaussian_overlap(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    gaussian_log_overlap(a, b).map(f64::exp)
}
