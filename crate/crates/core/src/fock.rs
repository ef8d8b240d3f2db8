//! Truncated Fock-space oracle for up to three modes.
//!
//! Everything here is brute force: dense operators built from ladder matrices,
//! exact unitary evolution through a dense eigendecomposition of `H`, and
//! moments read off the density matrix. It shares no code path with the Gaussian
//! engine beyond the `QuadraticHamiltonian` it is fed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::{build_two_mode, TwoModeParams, ENV_LABEL, SYSTEM_LABEL};
use crate::phase_space::{gaussian_overlap, CoherentAmplitude, GaussianState, ModeScale, QuadraticHamiltonian};

pub const MAX_DIMENSION: usize = 20_000;
pub const MAX_MODES: usize = 3;
/// Population allowed in the top two levels of any mode before a result is
/// flagged untrusted.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;

type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct FockMode {
    pub label: String,
    pub cutoff: usize,
    pub scale: ModeScale,
}

impl FockMode {
    pub fn new(label: impl Into<String>, cutoff: usize, scale: ModeScale) -> Self {
        FockMode { label: label.into(), cutoff, scale }
    }
}

/// Tensor product of truncated single-mode spaces; the first mode is the most
/// significant digit of the basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct FockSpace {
    modes: Vec<FockMode>,
    dim: usize,
}

impl FockSpace {
    pub fn new(modes: Vec<FockMode>) -> Result<Self> {
        if modes.is_empty() || modes.len() > MAX_MODES {
            return Err(Error::InvalidParameter(format!(
                "Fock oracle supports 1..={MAX_MODES} modes, got {}",
                modes.len()
            )));
        }
        let mut dim: usize = 1;
        for (k, m) in modes.iter().enumerate() {
            if m.cutoff < 2 {
                return Err(Error::InvalidParameter(format!("cutoff of `{}` must be at least 2", m.label)));
            }
            if modes[..k].iter().any(|o| o.label == m.label) {
                return Err(Error::DuplicateMode(m.label.clone()));
            }
            dim = dim.saturating_mul(m.cutoff);
        }
        if dim > MAX_DIMENSION {
            return Err(Error::InvalidParameter(format!(
                "Fock dimension {dim} exceeds the cap of {MAX_DIMENSION}"
            )));
        }
        Ok(FockSpace { modes, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[FockMode] {
        &self.modes
    }

    pub fn labels(&self) -> Vec<String> {
        self.modes.iter().map(|m| m.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.modes.iter().position(|m| m.label == label).ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    /// Occupation numbers of basis state `i`.
    pub fn occupations(&self, mut i: usize) -> Vec<usize> {
        let mut n = vec![0; self.modes.len()];
        for k in (0..self.modes.len()).rev() {
            n[k] = i % self.modes[k].cutoff;
            i /= self.modes[k].cutoff;
        }
        n
    }

    fn index(&self, n: &[usize]) -> usize {
        n.iter().zip(&self.modes).fold(0, |acc, (nk, m)| acc * m.cutoff + nk)
    }

    /// Kronecker product with `ops[k]` on mode `k` and the identity elsewhere.
    fn kron(&self, ops: &[(usize, &CMatrix)]) -> CMatrix {
        let mut out = CMatrix::from_element(1, 1, ONE);
        for (k, m) in self.modes.iter().enumerate() {
            out = match ops.iter().find(|(j, _)| *j == k) {
                Some((_, op)) => out.kronecker(*op),
                None => out.kronecker(&CMatrix::identity(m.cutoff, m.cutoff)),
            };
        }
        out
    }

    fn sub_space(&self, keep: &[usize]) -> Result<FockSpace> {
        FockSpace::new(keep.iter().map(|&k| self.modes[k].clone()).collect())
    }
}

/// Annihilation operator on a `d`-level truncation.
pub fn annihilation(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if j == i + 1 { (j as f64).sqrt() } else { 0.0 })
}

/// Single-mode quadratures. Second-order products are built on a padded space and
/// then truncated, so their retained matrix elements are exact.
#[derive(Debug, Clone)]
pub struct ModeOperators {
    pub x: CMatrix,
    pub p: CMatrix,
    pub x2: CMatrix,
    pub p2: CMatrix,
    /// `(xp + px)/2`
    pub xp: CMatrix,
    pub number: CMatrix,
}

impl ModeOperators {
    pub fn new(d: usize, scale: ModeScale) -> Self {
        let pad = d + 2;
        let a = annihilation(pad).map(|v| Complex64::new(v, 0.0));
        let ad = a.adjoint();
        let s = scale.m_omega().sqrt();
        let x = (&a + &ad) * Complex64::new(1.0 / (s * std::f64::consts::SQRT_2), 0.0);
        let p = (&ad - &a) * Complex64::new(0.0, s / std::f64::consts::SQRT_2);
        let cut = |m: CMatrix| m.view((0, 0), (d, d)).into_owned();
        let xp = (&x * &p + &p * &x) * Complex64::new(0.5, 0.0);
        ModeOperators {
            x2: cut(&x * &x),
            p2: cut(&p * &p),
            xp: cut(xp),
            number: cut(&ad * &a),
            x: cut(x),
            p: cut(p),
        }
    }
}

/// Position and momentum of every mode, embedded in the full space.
#[derive(Debug, Clone)]
pub struct Operators {
    pub x: Vec<CMatrix>,
    pub p: Vec<CMatrix>,
}

pub fn build_operators(space: &FockSpace) -> Operators {
    let (mut x, mut p) = (Vec::new(), Vec::new());
    for (k, m) in space.modes.iter().enumerate() {
        let ops = ModeOperators::new(m.cutoff, m.scale);
        x.push(space.kron(&[(k, &ops.x)]));
        p.push(space.kron(&[(k, &ops.p)]));
    }
    Operators { x, p }
}

/// Operator `z_i z_j` symmetrised, with exact single-mode squares.
fn quadratic_operator(space: &FockSpace, single: &[ModeOperators], i: usize, j: usize) -> CMatrix {
    let n = space.modes.len();
    let (ki, kj) = (i % n, j % n);
    let pick = |ops: &ModeOperators, idx: usize| if idx < n { ops.x.clone() } else { ops.p.clone() };
    if ki == kj {
        let ops = &single[ki];
        let local = match (i < n, j < n) {
            (true, true) => ops.x2.clone(),
            (false, false) => ops.p2.clone(),
            _ => ops.xp.clone(),
        };
        space.kron(&[(ki, &local)])
    } else {
        let (a, b) = (pick(&single[ki], i), pick(&single[kj], j));
        space.kron(&[(ki, &a), (kj, &b)])
    }
}

/// `H = ½ zᵀhz + lᵀz` as a `D×D` matrix. The Hamiltonian's layout must list the
/// same modes in the same order as `space`.
pub fn hamiltonian_operator(space: &FockSpace, h: &QuadraticHamiltonian) -> Result<CMatrix> {
    if h.layout().labels() != space.labels().as_slice() {
        return Err(Error::InvalidParameter(format!(
            "Hamiltonian modes [{}] do not match Fock modes [{}]",
            h.layout(),
            space.labels().join(",")
        )));
    }
    let n = space.modes.len();
    let single: Vec<ModeOperators> = space.modes.iter().map(|m| ModeOperators::new(m.cutoff, m.scale)).collect();
    let m = h.matrix();
    let mut out = CMatrix::zeros(space.dim, space.dim);
    for i in 0..2 * n {
        for j in i..2 * n {
            if m[(i, j)] == 0.0 {
                continue;
            }
            let w = if i == j { 0.5 * m[(i, j)] } else { m[(i, j)] };
            out += quadratic_operator(space, &single, i, j) * Complex64::new(w, 0.0);
        }
    }
    let ops = build_operators(space);
    for (i, l) in h.linear_term().iter().enumerate() {
        if *l != 0.0 {
            let z = if i < n { &ops.x[i] } else { &ops.p[i - n] };
            out += z * Complex64::new(*l, 0.0);
        }
    }
    Ok(out)
}

/// Eigenvalues of a Hermitian matrix through its real symmetric embedding
/// `[[A, −B], [B, A]]`, whose spectrum is that of `A + iB` with each value twice.
pub fn hermitian_eigenvalues(m: &CMatrix) -> DVector<f64> {
    let n = m.nrows();
    let (a, b) = split(m);
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&a);
    big.view_mut((n, n), (n, n)).copy_from(&a);
    big.view_mut((n, 0), (n, n)).copy_from(&b);
    big.view_mut((0, n), (n, n)).copy_from(&(-&b));
    let mut ev: Vec<f64> = SymmetricEigen::new(big).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    DVector::from_iterator(n, ev.chunks(2).map(|p| 0.5 * (p[0] + p[1])))
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: FockSpace,
    rho: CMatrix,
    /// `X` with `ρ = X X†`, kept when known to avoid a dense factorisation.
    factor: Option<CMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validity {
    pub hermiticity: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.hermiticity <= 1e-10 && self.trace_error <= 1e-10 && self.min_eigenvalue >= -1e-8
    }
}

impl DensityMatrix {
    /// Checks shape, Hermiticity and unit trace. Positivity is available through
    /// [`DensityMatrix::validity`].
    pub fn new(space: FockSpace, rho: CMatrix) -> Result<Self> {
        if rho.nrows() != space.dim || rho.ncols() != space.dim {
            return Err(Error::InvalidState(format!(
                "density matrix is {}x{}, space dimension is {}",
                rho.nrows(),
                rho.ncols(),
                space.dim
            )));
        }
        let out = DensityMatrix { space, rho, factor: None };
        if out.hermiticity() > 1e-10 {
            return Err(Error::InvalidState(format!("density matrix not Hermitian ({:e})", out.hermiticity())));
        }
        if (out.trace() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("density matrix trace {} != 1", out.trace())));
        }
        Ok(out)
    }

    pub fn pure(space: FockSpace, psi: &DVector<Complex64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let psi = psi / Complex64::new(norm, 0.0);
        let mut out = DensityMatrix::new(space, &psi * psi.adjoint())?;
        out.factor = Some(CMatrix::from_column_slice(psi.len(), 1, psi.as_slice()));
        Ok(out)
    }

    /// Mixture `Σ_k w_k |v_k⟩⟨v_k|` of the columns of `vectors`.
    pub fn mixture(space: FockSpace, weights: &[f64], vectors: &CMatrix) -> Result<Self> {
        if weights.len() != vectors.ncols() || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidState("mixture weights must be non-negative, one per vector".into()));
        }
        let kept: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
        let x = CMatrix::from_fn(vectors.nrows(), kept.len(), |i, j| {
            vectors[(i, kept[j])] * weights[kept[j]].sqrt()
        });
        let mut out = DensityMatrix::new(space, outer_gram(&x))?;
        out.factor = Some(x);
        Ok(out)
    }

    /// `X` with `ρ = X X†`, from the stored factor or an eigendecomposition.
    pub fn factor(&self) -> CMatrix {
        if let Some(x) = &self.factor {
            return x.clone();
        }
        let eig = SymmetricEigen::new(self.rho.clone());
        let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&k| eig.eigenvalues[k] > 1e-15).collect();
        CMatrix::from_fn(self.rho.nrows(), keep.len(), |i, j| {
            eig.eigenvectors[(i, keep[j])] * eig.eigenvalues[keep[j]].sqrt()
        })
    }

    /// Product state over the concatenated mode lists.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<Self> {
        let modes = self.space.modes.iter().chain(&other.space.modes).cloned().collect();
        let mut out = DensityMatrix::new(FockSpace::new(modes)?, self.rho.kronecker(&other.rho))?;
        if let (Some(a), Some(b)) = (&self.factor, &other.factor) {
            out.factor = Some(a.kronecker(b));
        }
        Ok(out)
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn hermiticity(&self) -> f64 {
        max_abs(&(&self.rho - self.rho.adjoint()))
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.rho, &self.rho).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.rho).min()
    }

    pub fn validity(&self) -> Validity {
        Validity {
            hermiticity: self.hermiticity(),
            trace_error: (self.trace() - 1.0).abs(),
            min_eigenvalue: self.min_eigenvalue(),
        }
    }

    pub fn expectation(&self, op: &CMatrix) -> Complex64 {
        trace_product(&self.rho, op)
    }

    /// Population of basis states with any mode in its top two levels.
    pub fn leakage(&self) -> f64 {
        (0..self.space.dim)
            .filter(|&i| {
                self.space.occupations(i).iter().zip(&self.space.modes).any(|(n, m)| n + 2 >= m.cutoff)
            })
            .map(|i| self.rho[(i, i)].re)
            .sum()
    }

    /// Mean vector and symmetrised covariance in `(x…, p…)` order.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.space.modes.len();
        let single: Vec<ModeOperators> =
            self.space.modes.iter().map(|m| ModeOperators::new(m.cutoff, m.scale)).collect();
        let ops = build_operators(&self.space);
        let mean = DVector::from_fn(2 * n, |i, _| {
            let z = if i < n { &ops.x[i] } else { &ops.p[i - n] };
            self.expectation(z).re
        });
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..2 * n {
            for j in i..2 * n {
                let v = self.expectation(&quadratic_operator(&self.space, &single, i, j)).re - mean[i] * mean[j];
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        (mean, cov)
    }

    /// Partial trace keeping `keep` in the order given.
    pub fn reduce<S: AsRef<str>>(&self, keep: &[S]) -> Result<DensityMatrix> {
        let kept: Vec<usize> = keep.iter().map(|l| self.space.index_of(l.as_ref())).collect::<Result<_>>()?;
        let sub = self.space.sub_space(&kept)?;
        let traced: Vec<usize> = (0..self.space.modes.len()).filter(|k| !kept.contains(k)).collect();
        let traced_space_dim: usize = traced.iter().map(|&k| self.space.modes[k].cutoff).product();
        let mut out = CMatrix::zeros(sub.dim, sub.dim);
        let digits = |mut idx: usize, which: &[usize]| {
            let mut n = vec![0; which.len()];
            for (slot, &k) in which.iter().enumerate().rev() {
                n[slot] = idx % self.space.modes[k].cutoff;
                idx /= self.space.modes[k].cutoff;
            }
            n
        };
        let full_index = |a: &[usize], t: &[usize]| {
            let mut n = vec![0; self.space.modes.len()];
            for (slot, &k) in kept.iter().enumerate() {
                n[k] = a[slot];
            }
            for (slot, &k) in traced.iter().enumerate() {
                n[k] = t[slot];
            }
            self.space.index(&n)
        };
        for i in 0..sub.dim {
            let a = digits(i, &kept);
            for j in 0..sub.dim {
                let b = digits(j, &kept);
                let mut acc = ZERO;
                for t in 0..traced_space_dim {
                    let tn = digits(t, &traced);
                    acc += self.rho[(full_index(&a, &tn), full_index(&b, &tn))];
                }
                out[(i, j)] = acc;
            }
        }
        DensityMatrix::new(sub, out)
    }
}

/// Coherent state on a `d`-level truncation, renormalised. Returns the vector and
/// the norm that fell outside the truncation.
pub fn coherent_vector(d: usize, scale: ModeScale, x0: f64, p0: f64) -> (DVector<Complex64>, f64) {
    let s = scale.m_omega().sqrt();
    let alpha = Complex64::new(s * x0, p0 / s) / std::f64::consts::SQRT_2;
    let mut v = DVector::from_element(d, ZERO);
    let mut c = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..d {
        v[n] = c;
        c *= alpha / ((n + 1) as f64).sqrt();
    }
    let kept = v.norm_squared();
    (v.unscale(kept.sqrt()), (1.0 - kept).max(0.0))
}

/// Coherent state of a `scale` oscillator written in the Fock basis of `basis`,
/// by projecting its wavefunction onto the basis Hermite functions. Returns the
/// renormalised vector and the lost norm.
pub fn coherent_in_basis(
    d: usize,
    basis: ModeScale,
    scale: ModeScale,
    x0: f64,
    p0: f64,
) -> Result<(DVector<Complex64>, f64)> {
    if basis.m_omega() == scale.m_omega() {
        return Ok(coherent_vector(d, scale, x0, p0));
    }
    let (mw, mwb) = (scale.m_omega(), basis.m_omega());
    let half = 12.0 / mw.sqrt().min(mwb.sqrt()) + x0.abs();
    let points = 4001;
    let h = 2.0 * half / (points - 1) as f64;
    let mut v = DVector::from_element(d, ZERO);
    for k in 0..points {
        let x = -half + k as f64 * h;
        let psi = (mw / std::f64::consts::PI).powf(0.25)
            * Complex64::from_polar((-mw * (x - x0).powi(2) / 2.0).exp(), p0 * x);
        for (n, phi) in hermite_functions(d, mwb, x).into_iter().enumerate() {
            v[n] += psi * phi * h;
        }
    }
    let kept = v.norm_squared();
    if kept < 0.5 {
        return Err(Error::InvalidState("coherent state mostly outside the truncated basis".into()));
    }
    Ok((v.unscale(kept.sqrt()), (1.0 - kept).max(0.0)))
}

/// Gibbs state `∝ e^{−ωn/T}` truncated to `d` levels and renormalised. Returns the
/// state and the truncated weight `e^{−ωd/T}`.
pub fn thermal_density(d: usize, scale: ModeScale, temperature: f64) -> Result<(CMatrix, f64)> {
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!("temperature must be non-negative, got {temperature}")));
    }
    let q = if temperature == 0.0 { 0.0 } else { (-scale.frequency / temperature).exp() };
    let weights: Vec<f64> = (0..d).map(|n| q.powi(n as i32)).collect();
    let z: f64 = weights.iter().sum();
    let rho = CMatrix::from_fn(d, d, |i, j| if i == j { Complex64::new(weights[i] / z, 0.0) } else { ZERO });
    Ok((rho, q.powi(d as i32)))
}

/// Normalised Hilbert–Schmidt overlap `tr(ab)/√(tr a² tr b²)`.
pub fn normalized_overlap(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.space != b.space {
        return Err(Error::InvalidParameter("overlap of states on different Fock spaces".into()));
    }
    Ok(trace_product(&a.rho, &b.rho).re / (a.purity() * b.purity()).sqrt())
}

/// `exp(−iHt)` through a cached eigendecomposition of `H`.
#[derive(Debug, Clone)]
pub struct UnitaryEvolver {
    vectors: Eigenvectors,
    energies: DVector<f64>,
}

#[derive(Debug, Clone)]
enum Eigenvectors {
    Real(DMatrix<f64>),
    Complex(CMatrix),
}

#[derive(Debug, Clone)]
pub struct EvolvedState {
    pub time: f64,
    pub state: DensityMatrix,
    pub leakage: f64,
    pub trusted: bool,
}

fn split(m: &CMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|c| c.re), m.map(|c| c.im))
}

fn join(re: DMatrix<f64>, im: DMatrix<f64>) -> CMatrix {
    re.zip_map(&im, Complex64::new)
}

/// `Y Y†` through real products.
fn outer_gram(y: &CMatrix) -> CMatrix {
    let (a, b) = split(y);
    join(&a * a.transpose() + &b * b.transpose(), &b * a.transpose() - &a * b.transpose())
}

impl Eigenvectors {
    fn mul(&self, w: &CMatrix) -> CMatrix {
        match self {
            Eigenvectors::Real(v) => {
                let (a, b) = split(w);
                join(v * a, v * b)
            }
            Eigenvectors::Complex(v) => v * w,
        }
    }

    fn adjoint_mul(&self, w: &CMatrix) -> CMatrix {
        match self {
            Eigenvectors::Real(v) => {
                let (a, b) = split(w);
                join(v.tr_mul(&a), v.tr_mul(&b))
            }
            Eigenvectors::Complex(v) => v.ad_mul(w),
        }
    }
}

impl UnitaryEvolver {
    pub fn new(h: &CMatrix) -> Result<Self> {
        let herm = max_abs(&(h - h.adjoint()));
        if herm > 1e-10 * max_abs(h).max(1.0) {
            return Err(Error::InvalidHamiltonian(format!("operator not Hermitian ({herm:e})")));
        }
        let imag = h.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        let (vectors, energies) = if imag == 0.0 {
            let eig = SymmetricEigen::new(h.map(|c| c.re));
            (Eigenvectors::Real(eig.eigenvectors), eig.eigenvalues)
        } else {
            let eig = SymmetricEigen::new(h.clone());
            (Eigenvectors::Complex(eig.eigenvectors), eig.eigenvalues)
        };
        Ok(UnitaryEvolver { vectors, energies })
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    /// `ρ(t) = U ρ U†` on every time of the grid, propagating the factor `X` of
    /// `ρ = X X†`.
    pub fn evolve_grid(&self, rho0: &DensityMatrix, times: &[f64]) -> Result<Vec<EvolvedState>> {
        if rho0.rho.nrows() != self.energies.len() {
            return Err(Error::InvalidState("state and Hamiltonian dimensions differ".into()));
        }
        let factor = rho0.factor();
        let in_eigenbasis = self.vectors.adjoint_mul(&factor);
        let e = &self.energies;
        times
            .iter()
            .map(|&t| {
                let mut rotated = in_eigenbasis.clone();
                for (j, mut row) in rotated.row_iter_mut().enumerate() {
                    row *= Complex64::from_polar(1.0, -e[j] * t);
                }
                let y = self.vectors.mul(&rotated);
                let mut rho = outer_gram(&y);
                // restore exact Hermiticity lost to rounding
                rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
                let state = DensityMatrix { space: rho0.space.clone(), rho, factor: Some(y) };
                let leakage = state.leakage();
                Ok(EvolvedState { time: t, state, leakage, trusted: leakage < LEAKAGE_THRESHOLD })
            })
            .collect()
    }
}

pub fn evolve_exact(rho0: &DensityMatrix, h: &CMatrix, t: f64) -> Result<EvolvedState> {
    let mut out = UnitaryEvolver::new(h)?.evolve_grid(rho0, &[t])?;
    Ok(out.remove(0))
}

/// Hermite functions `φ_0..φ_{n-1}` at `x` for a mode with `mω = m_omega`.
pub fn hermite_functions(n: usize, m_omega: f64, x: f64) -> Vec<f64> {
    let s = m_omega.sqrt();
    let xi = s * x;
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push((s * s / std::f64::consts::PI).powf(0.25) * (-xi * xi / 2.0).exp());
    if n > 1 {
        out.push(std::f64::consts::SQRT_2 * xi * out[0]);
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        out.push((2.0 / (kf + 1.0)).sqrt() * xi * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1]);
    }
    out
}

/// Quadrature and basis sizes for re-expanding a two-mode wavefunction in
/// center-of-mass and relative coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionGrid {
    pub points: usize,
    pub cutoff: usize,
}

impl Default for ProjectionGrid {
    fn default() -> Self {
        ProjectionGrid { points: 160, cutoff: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativityCheck {
    pub log_negativity: f64,
    /// Norm captured by the truncated CM⊗R basis.
    pub captured_norm: f64,
    pub min_partial_transpose_eigenvalue: f64,
}

/// CM|R log-negativity of a pure two-mode state, by evaluating `ψ(x_S, x_E)` on a
/// grid in `(X, r)`, projecting onto Hermite functions of each new coordinate,
/// and diagonalising the partial transpose of the resulting density matrix.
pub fn cm_relative_negativity(state: &DensityMatrix, masses: [f64; 2], grid: ProjectionGrid) -> Result<NegativityCheck> {
    let space = &state.space;
    if space.modes.len() != 2 {
        return Err(Error::Unsupported("CM|R negativity needs exactly two modes".into()));
    }
    let factor = state.factor();
    let norms: Vec<f64> = factor.column_iter().map(|c| c.norm_squared()).collect();
    let top = (0..norms.len()).max_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap_or(0);
    if norms.is_empty() || (norms[top] - 1.0).abs() > 1e-8 {
        return Err(Error::Unsupported("CM|R negativity in the oracle is limited to pure states".into()));
    }
    let psi = factor.column(top).into_owned();
    let (ms, me) = (masses[0], masses[1]);
    let total = ms + me;
    let (ws, we) = (ms / total, me / total);

    // moments of X and r from the oracle itself, to centre and size the basis
    let (mean, cov) = state.moments();
    let lin = |a: f64, b: f64, i: usize| a * mean[i] + b * mean[i + 1];
    let var = |a: f64, b: f64, i: usize| a * a * cov[(i, i)] + 2.0 * a * b * cov[(i, i + 1)] + b * b * cov[(i + 1, i + 1)];
    let (x_mean, r_mean) = (lin(ws, we, 0), lin(1.0, -1.0, 0));
    let (px_mean, pr_mean) = (lin(1.0, 1.0, 2), lin(we, -ws, 2));
    let width = |vx: f64, vp: f64| (vp / vx).sqrt();
    let mw_x = width(var(ws, we, 0), var(1.0, 1.0, 2));
    let mw_r = width(var(1.0, -1.0, 0), var(we, -ws, 2));

    let d = grid.cutoff;
    let half = |mw: f64| 1.3 * ((2 * d + 1) as f64).sqrt() / mw.sqrt();
    let (lx, lr) = (half(mw_x), half(mw_r));
    let nodes = |l: f64| -> Vec<f64> {
        (0..grid.points).map(|k| -l + 2.0 * l * k as f64 / (grid.points - 1) as f64).collect()
    };
    let (xs, rs) = (nodes(lx), nodes(lr));
    let (dx, dr) = (xs[1] - xs[0], rs[1] - rs[0]);

    let (ds, de) = (space.modes[0].cutoff, space.modes[1].cutoff);
    let (mws, mwe) = (space.modes[0].scale.m_omega(), space.modes[1].scale.m_omega());
    let coeff = DMatrix::from_fn(ds, de, |i, j| psi[i * de + j]);
    let mut wave = CMatrix::zeros(xs.len(), rs.len());
    for (a, &xc) in xs.iter().enumerate() {
        for (b, &rc) in rs.iter().enumerate() {
            let (x, r) = (xc + x_mean, rc + r_mean);
            let phi_s = DVector::from_vec(hermite_functions(ds, mws, x + we * r)).map(|v| Complex64::new(v, 0.0));
            let phi_e = DVector::from_vec(hermite_functions(de, mwe, x - ws * r)).map(|v| Complex64::new(v, 0.0));
            // local momentum kicks remove the mean momenta; they do not change entanglement
            let phase = Complex64::from_polar(1.0, -(px_mean * x + pr_mean * r));
            wave[(a, b)] = (phi_s.transpose() * &coeff * phi_e)[(0, 0)] * phase;
        }
    }
    let basis = |pts: &[f64], mw: f64, h: f64| {
        let mut m = CMatrix::zeros(pts.len(), d);
        for (k, &p) in pts.iter().enumerate() {
            for (n, v) in hermite_functions(d, mw, p).into_iter().enumerate() {
                m[(k, n)] = Complex64::new(v * h.sqrt(), 0.0);
            }
        }
        m
    };
    let bx = basis(&xs, mw_x, dx);
    let br = basis(&rs, mw_r, dr);
    let c = bx.transpose() * wave * br * Complex64::new((dx * dr).sqrt(), 0.0);
    let captured = c.norm_squared();
    let c = c.unscale(captured.sqrt());

    // ρ_{(ab),(a'b')} = c_ab c*_a'b'; partial transpose on R swaps b and b'
    let mut pt = CMatrix::zeros(d * d, d * d);
    for a in 0..d {
        for b in 0..d {
            for a2 in 0..d {
                for b2 in 0..d {
                    pt[(a * d + b2, a2 * d + b)] = c[(a, b)] * c[(a2, b2)].conj();
                }
            }
        }
    }
    let ev = hermitian_eigenvalues(&pt);
    let trace_norm: f64 = ev.iter().map(|v| v.abs()).sum();
    Ok(NegativityCheck { log_negativity: trace_norm.ln(), captured_norm: captured, min_partial_transpose_eigenvalue: ev.min() })
}

/// A two-mode instance for the oracle comparison. `S` is prepared in a coherent
/// state of frequency `system_frequency`; `E` in a thermal state of its own
/// oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosscheckScenario {
    pub params: TwoModeParams,
    pub system_frequency: f64,
    /// Frequency of the Fock basis used for `S`. A free `S` spreads, and a wider
    /// basis keeps it away from the cutoff.
    pub system_basis_frequency: f64,
    pub env_temperature: f64,
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub cutoff: usize,
    pub times: Vec<f64>,
    /// CM|R negativity is computed when the state is pure and this is set.
    pub negativity: Option<ProjectionGrid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosscheckRow {
    pub time: f64,
    pub mean_dev: f64,
    pub cov_dev: f64,
    pub purity_dev: f64,
    pub overlap_gaussian: f64,
    pub overlap_oracle: f64,
    pub log_neg_gaussian: Option<f64>,
    pub log_neg_oracle: Option<f64>,
    pub leakage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosscheckReport {
    pub rows: Vec<CrosscheckRow>,
    pub max_mean_dev: f64,
    pub max_cov_dev: f64,
    pub max_purity_dev: f64,
    pub max_overlap_dev: f64,
    pub max_log_neg_dev: Option<f64>,
    pub max_leakage: f64,
    pub env_truncation: f64,
    pub coherent_truncation: f64,
    pub trusted: bool,
}

impl CrosscheckReport {
    /// Largest log-negativity seen by each engine, when computed.
    pub fn peak_log_negativity(&self) -> Option<(f64, f64)> {
        let g = self.rows.iter().filter_map(|r| r.log_neg_gaussian).fold(f64::NEG_INFINITY, f64::max);
        let o = self.rows.iter().filter_map(|r| r.log_neg_oracle).fold(f64::NEG_INFINITY, f64::max);
        (g.is_finite() && o.is_finite()).then_some((g, o))
    }
}

/// Evolves two branches in both engines and compares moments, reduced purities,
/// environment overlaps and (for pure states) CM|R log-negativity.
pub fn gaussian_crosscheck(s: &CrosscheckScenario) -> Result<CrosscheckReport> {
    let h = build_two_mode(&s.params)?;
    let s_scale = ModeScale::new(s.params.m_s, s.system_frequency)?;
    let s_basis = ModeScale::new(s.params.m_s, s.system_basis_frequency)?;
    let e_scale = ModeScale::new(s.params.m_e, s.params.omega)?;
    let space = FockSpace::new(vec![
        FockMode::new(SYSTEM_LABEL, s.cutoff, s_basis),
        FockMode::new(ENV_LABEL, s.cutoff, e_scale),
    ])?;
    let env_space = FockSpace::new(vec![FockMode::new(ENV_LABEL, s.cutoff, e_scale)])?;
    let (env_rho, env_truncation) = thermal_density(s.cutoff, e_scale, s.env_temperature)?;
    let weights: Vec<f64> = env_rho.diagonal().iter().map(|c| c.re).collect();
    let env_oracle = DensityMatrix::mixture(env_space, &weights, &CMatrix::identity(s.cutoff, s.cutoff))?;
    let evolver = UnitaryEvolver::new(&hamiltonian_operator(&space, &h)?)?;

    let layout = h.layout().clone();
    let env_gauss = GaussianState::thermal(&crate::phase_space::PhaseSpaceLayout::new([ENV_LABEL])?, &[(e_scale, s.env_temperature)])?;
    let mut coherent_truncation: f64 = 0.0;
    let mut branch = |(x0, p0): (f64, f64)| -> Result<(Vec<EvolvedState>, Vec<GaussianState>)> {
        let (v, lost) = coherent_in_basis(s.cutoff, s_basis, s_scale, x0, p0)?;
        coherent_truncation = coherent_truncation.max(lost);
        let sys = DensityMatrix::pure(FockSpace::new(vec![space.modes[0].clone()])?, &v)?;
        let oracle = evolver.evolve_grid(&sys.tensor(&env_oracle)?, &s.times)?;
        let sys_gauss = GaussianState::coherent(
            &crate::phase_space::PhaseSpaceLayout::new([SYSTEM_LABEL])?,
            &[s_scale],
            &[CoherentAmplitude::new(SYSTEM_LABEL, x0, p0)],
        )?;
        let global = GaussianState::product(&layout, &[&sys_gauss, &env_gauss])?;
        let gauss = crate::dynamics::evolve_grid(&global, &h, &s.times)?;
        Ok((oracle, gauss))
    };
    let (oa, ga) = branch(s.alpha)?;
    let (ob, gb) = branch(s.beta)?;

    let masses = s.params.masses();
    let to_cm = crate::decomposition::cm_relative_transform(&layout, &masses, crate::decomposition::WeightFamily::Jacobi)?;
    let mut rows = Vec::with_capacity(s.times.len());
    for k in 0..s.times.len() {
        let mut mean_dev: f64 = 0.0;
        let mut cov_dev: f64 = 0.0;
        let mut purity_dev: f64 = 0.0;
        for (o, g) in [(&oa[k], &ga[k]), (&ob[k], &gb[k])] {
            let (m, c) = o.state.moments();
            mean_dev = mean_dev.max((m - g.mean()).amax());
            cov_dev = cov_dev.max((c - g.covariance()).amax());
            let po = o.state.reduce(&[SYSTEM_LABEL])?.purity();
            purity_dev = purity_dev.max((po - g.reduce(&[SYSTEM_LABEL])?.purity()?).abs());
        }
        let overlap_oracle = normalized_overlap(&oa[k].state.reduce(&[ENV_LABEL])?, &ob[k].state.reduce(&[ENV_LABEL])?)?;
        let overlap_gaussian = gaussian_overlap(&ga[k].reduce(&[ENV_LABEL])?, &gb[k].reduce(&[ENV_LABEL])?)?;
        let (log_neg_gaussian, log_neg_oracle) = match s.negativity {
            Some(grid) if s.env_temperature == 0.0 => {
                let cm = crate::decomposition::transform_state(&ga[k], &to_cm)?;
                let labels = cm.layout().labels().to_vec();
                let g = cm.log_negativity(&labels[..1], &labels[1..])?;
                let o = cm_relative_negativity(&oa[k].state, masses, grid)?;
                (Some(g), Some(o.log_negativity))
            }
            _ => (None, None),
        };
        rows.push(CrosscheckRow {
            time: s.times[k],
            mean_dev,
            cov_dev,
            purity_dev,
            overlap_gaussian,
            overlap_oracle,
            log_neg_gaussian,
            log_neg_oracle,
            leakage: oa[k].leakage.max(ob[k].leakage),
        });
    }
    let max = |f: &dyn Fn(&CrosscheckRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let max_log_neg_dev = s
        .negativity
        .filter(|_| s.env_temperature == 0.0)
        .map(|_| max(&|r| (r.log_neg_gaussian.unwrap_or(0.0) - r.log_neg_oracle.unwrap_or(0.0)).abs()));
    let max_leakage = max(&|r| r.leakage);
    Ok(CrosscheckReport {
        max_mean_dev: max(&|r| r.mean_dev),
        max_cov_dev: max(&|r| r.cov_dev),
        max_purity_dev: max(&|r| r.purity_dev),
        max_overlap_dev: max(&|r| (r.overlap_gaussian - r.overlap_oracle).abs()),
        max_log_neg_dev,
        max_leakage,
        env_truncation,
        coherent_truncation,
        trusted: max_leakage < LEAKAGE_THRESHOLD,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::PhaseSpaceLayout;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn one_mode(d: usize, scale: ModeScale) -> FockSpace {
        FockSpace::new(vec![FockMode::new("S", d, scale)]).unwrap()
    }

    #[test]
    fn two_level_position() {
        let ops = ModeOperators::new(2, ModeScale::unit());
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(max_abs(&(ops.x.clone() - CMatrix::from_row_slice(2, 2, &[c(0.0), c(r), c(r), c(0.0)]))) < 1e-15);
        let scaled = ModeOperators::new(2, ModeScale::new(2.0, 2.0).unwrap());
        assert!((scaled.x[(0, 1)].re - r / 2.0).abs() < 1e-15);
    }

    #[test]
    fn number_operator_diagonal() {
        let ops = ModeOperators::new(6, ModeScale::unit());
        for n in 0..6 {
            assert!((ops.number[(n, n)].re - n as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn commutator_except_top_level() {
        let d = 10;
        let ops = ModeOperators::new(d, ModeScale::new(1.3, 0.7).unwrap());
        let comm = &ops.x * &ops.p - &ops.p * &ops.x;
        for i in 0..d - 1 {
            for j in 0..d - 1 {
                let want = if i == j { Complex64::new(0.0, 1.0) } else { ZERO };
                assert!((comm[(i, j)] - want).norm() < 1e-12);
            }
        }
        assert!((comm[(d - 1, d - 1)] - Complex64::new(0.0, 1.0)).norm() > 1.0);
    }

    #[test]
    fn exact_squares() {
        // ⟨n|x²|n⟩ = (2n+1)/(2mω) including the top level
        let d = 5;
        let sc = ModeScale::new(2.0, 1.5).unwrap();
        let ops = ModeOperators::new(d, sc);
        for n in 0..d {
            assert!((ops.x2[(n, n)].re - (2 * n + 1) as f64 / (2.0 * sc.m_omega())).abs() < 1e-13);
            assert!((ops.p2[(n, n)].re - (2 * n + 1) as f64 * sc.m_omega() / 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn limits() {
        let s = ModeScale::unit();
        assert!(FockSpace::new(vec![FockMode::new("A", 1, s)]).is_err());
        assert!(FockSpace::new(vec![FockMode::new("A", 200, s), FockMode::new("B", 101, s)]).is_err());
        let four: Vec<FockMode> = (0..4).map(|k| FockMode::new(format!("M{k}"), 2, s)).collect();
        assert!(FockSpace::new(four).is_err());
        assert!(FockSpace::new(vec![FockMode::new("A", 2, s), FockMode::new("A", 2, s)]).is_err());
    }

    #[test]
    fn coherent_orbit() {
        let sc = ModeScale::new(1.5, 0.8).unwrap();
        let space = one_mode(40, sc);
        let (v, lost) = coherent_vector(40, sc, 0.7, -0.4);
        assert!(lost < 1e-15);
        let rho = DensityMatrix::pure(space.clone(), &v).unwrap();
        let h = QuadraticHamiltonian::new(
            PhaseSpaceLayout::new(["S"]).unwrap(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.5 * 0.64, 1.0 / 1.5])),
            "oscillator",
        )
        .unwrap();
        let times = [0.0, 0.5, 1.7, 3.0];
        let out = UnitaryEvolver::new(&hamiltonian_operator(&space, &h).unwrap()).unwrap().evolve_grid(&rho, &times).unwrap();
        assert!(max_abs(&(out[0].state.matrix() - rho.matrix())) < 1e-12);
        for e in &out {
            let (m, _) = e.state.moments();
            let want = 0.7 * (0.8 * e.time).cos() + (-0.4 / (1.5 * 0.8)) * (0.8 * e.time).sin();
            assert!((m[0] - want).abs() < 1e-6);
            assert!((e.state.trace() - 1.0).abs() < 1e-10);
            assert!(e.state.hermiticity() < 1e-10);
            assert!(e.trusted);
        }
    }

    #[test]
    fn coherent_moments() {
        let sc = ModeScale::new(0.5, 4.0).unwrap();
        let (v, _) = coherent_vector(30, sc, 0.3, 0.9);
        let rho = DensityMatrix::pure(one_mode(30, sc), &v).unwrap();
        let (m, cov) = rho.moments();
        assert!((m[0] - 0.3).abs() < 1e-12 && (m[1] - 0.9).abs() < 1e-12);
        assert!((cov[(0, 0)] - 0.25).abs() < 1e-12);
        assert!((cov[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(cov[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn thermal_matches_gaussian() {
        let sc = ModeScale::new(1.0, 1.0).unwrap();
        let (rho, err) = thermal_density(60, sc, 0.8).unwrap();
        assert!(err < 1e-30);
        let dm = DensityMatrix::new(one_mode(60, sc), rho).unwrap();
        let g = GaussianState::thermal(&PhaseSpaceLayout::new(["S"]).unwrap(), &[(sc, 0.8)]).unwrap();
        let (_, cov) = dm.moments();
        assert!((cov - g.covariance()).amax() < 1e-12);
        assert!((dm.purity() - g.purity().unwrap()).abs() < 1e-12);
        let (_, err) = thermal_density(5, sc, 5.0).unwrap();
        assert!((err - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_of_product() {
        let sa = ModeScale::unit();
        let sb = ModeScale::new(2.0, 1.0).unwrap();
        let (va, _) = coherent_vector(6, sa, 0.2, 0.0);
        let a = DensityMatrix::pure(FockSpace::new(vec![FockMode::new("A", 6, sa)]).unwrap(), &va).unwrap();
        let (rb, _) = thermal_density(5, sb, 1.0).unwrap();
        let b = DensityMatrix::new(FockSpace::new(vec![FockMode::new("B", 5, sb)]).unwrap(), rb).unwrap();
        let ab = a.tensor(&b).unwrap();
        assert!(max_abs(&(ab.reduce(&["A"]).unwrap().matrix() - a.matrix())) < 1e-14);
        assert!(max_abs(&(ab.reduce(&["B"]).unwrap().matrix() - b.matrix())) < 1e-14);
        let swapped = ab.reduce(&["B", "A"]).unwrap();
        assert_eq!(swapped.space().labels(), vec!["B", "A"]);
        assert!((swapped.purity() - ab.purity()).abs() < 1e-14);
        let v = ab.validity();
        assert!(v.is_valid());
    }

    #[test]
    fn hermite_orthonormal() {
        let mw = 1.7;
        let n = 12;
        let pts: Vec<f64> = (0..2001).map(|k| -8.0 + 16.0 * k as f64 / 2000.0).collect();
        let h = 16.0 / 2000.0;
        let table: Vec<Vec<f64>> = pts.iter().map(|&x| hermite_functions(n, mw, x)).collect();
        for a in 0..n {
            for b in 0..n {
                let s: f64 = table.iter().map(|row| row[a] * row[b]).sum::<f64>() * h;
                assert!((s - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10, "{a} {b} {s}");
            }
        }
    }

    #[test]
    fn overlap_closed_form_against_oracle() {
        // two displaced thermal states with a common covariance
        let sc = ModeScale::new(1.0, 1.0).unwrap();
        let (d, big) = (60, 80);
        let layout = PhaseSpaceLayout::new(["S"]).unwrap();
        let g = GaussianState::thermal(&layout, &[(sc, 0.7)]).unwrap();
        let ga = g.displaced(&CoherentAmplitude::new("S", 0.6, 0.0)).unwrap();
        let gb = g.displaced(&CoherentAmplitude::new("S", -0.4, 0.3)).unwrap();
        // oracle: conjugate by exp(−i(x0 p − p0 x)) on a larger space, then truncate
        let ops = ModeOperators::new(big, sc);
        let (th, _) = thermal_density(big, sc, 0.7).unwrap();
        let make = |x0: f64, p0: f64| {
            let gen = &ops.p * c(x0) - &ops.x * c(p0);
            let eig = SymmetricEigen::new(gen);
            let u = &eig.eigenvectors
                * CMatrix::from_diagonal(&eig.eigenvalues.map(|e| Complex64::from_polar(1.0, -e)))
                * eig.eigenvectors.adjoint();
            let rho = (&u * &th * u.adjoint()).view((0, 0), (d, d)).into_owned();
            let t = rho.trace();
            DensityMatrix::new(one_mode(d, sc), (&rho + rho.adjoint()) * c(0.5) / t).unwrap()
        };
        let (oa, ob) = (make(0.6, 0.0), make(-0.4, 0.3));
        let (ma, _) = oa.moments();
        assert!((ma[0] - 0.6).abs() < 1e-8);
        let oracle = normalized_overlap(&oa, &ob).unwrap();
        let closed = gaussian_overlap(&ga, &gb).unwrap();
        assert!((oracle - closed).abs() < 1e-6, "{oracle} {closed}");
    }

    #[test]
    fn decoupled_crosscheck_exact() {
        let s = CrosscheckScenario {
            params: TwoModeParams { m_s: 1.0, m_e: 1.0, omega: 1.0, coupling: 0.0 },
            system_frequency: 0.3,
            system_basis_frequency: 0.3,
            env_temperature: 0.0,
            alpha: (0.5, 0.0),
            beta: (-0.5, 0.0),
            cutoff: 24,
            times: vec![0.0, 0.5, 1.0],
            negativity: None,
        };
        let r = gaussian_crosscheck(&s).unwrap();
        assert!(r.max_mean_dev < 1e-8 && r.max_cov_dev < 1e-8 && r.max_overlap_dev < 1e-8, "{r:?}");
        assert!(r.rows.iter().all(|row| (row.overlap_oracle - 1.0).abs() < 1e-10));
    }

    #[test]
    fn deviations_shrink_with_cutoff() {
        let run = |d: usize| {
            gaussian_crosscheck(&CrosscheckScenario {
                params: TwoModeParams { m_s: 1.0, m_e: 1.0, omega: 1.0, coupling: 0.25 },
                system_frequency: 1.0,
                system_basis_frequency: 1.0,
                env_temperature: 0.0,
                alpha: (0.5, 0.0),
                beta: (-0.5, 0.0),
                cutoff: d,
                times: vec![1.0, 2.0],
                negativity: None,
            })
            .unwrap()
        };
        let (a, b, c) = (run(8), run(12), run(16));
        assert!(b.max_cov_dev < a.max_cov_dev && c.max_cov_dev < b.max_cov_dev);
        assert!(b.max_mean_dev < a.max_mean_dev && c.max_mean_dev < b.max_mean_dev);
    }

    #[test]
    fn negativity_of_separable_product_is_zero() {
        // equal-frequency vacua are a product in CM|R as well
        let s1 = ModeScale::new(1.0, 1.0).unwrap();
        let s2 = ModeScale::new(3.0, 1.0).unwrap();
        let space = FockSpace::new(vec![FockMode::new("S", 12, s1), FockMode::new("E", 12, s2)]).unwrap();
        let mut v = DVector::from_element(144, ZERO);
        v[0] = ONE;
        let rho = DensityMatrix::pure(space, &v).unwrap();
        let n = cm_relative_negativity(&rho, [1.0, 3.0], ProjectionGrid::default()).unwrap();
        assert!(n.log_negativity.abs() < 1e-8, "{n:?}");
        assert!((n.captured_norm - 1.0).abs() < 1e-8);
    }

    #[test]
    fn negativity_matches_gaussian_for_mismatched_vacua() {
        let s1 = ModeScale::new(1.0, 2.0).unwrap();
        let s2 = ModeScale::new(3.0, 1.0).unwrap();
        let space = FockSpace::new(vec![FockMode::new("S", 12, s1), FockMode::new("E", 12, s2)]).unwrap();
        let (a, _) = coherent_vector(12, s1, 0.4, 0.2);
        let (b, _) = coherent_vector(12, s2, -0.3, 0.1);
        let rho = DensityMatrix::pure(space, &a.kronecker(&b)).unwrap();
        let oracle = cm_relative_negativity(&rho, [1.0, 3.0], ProjectionGrid::default()).unwrap();
        let layout = TwoModeParams::layout();
        let g = GaussianState::vacuum(&layout, &[s1, s2]).unwrap();
        let t = crate::decomposition::cm_relative_transform(&layout, &[1.0, 3.0], crate::decomposition::WeightFamily::Jacobi)
            .unwrap();
        let cm = crate::decomposition::transform_state(&g, &t).unwrap();
        let gauss = cm.log_negativity(&["CM"], &["R1"]).unwrap();
        assert!(gauss > 0.01);
        assert!(oracle.min_partial_transpose_eigenvalue < 0.0);
        assert!((oracle.log_negativity - gauss).abs() < 1e-6, "{oracle:?} {gauss}");
    }
}
