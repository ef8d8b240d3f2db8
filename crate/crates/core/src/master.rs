//! Position-measurement master equation on one mode,
//! `dρ/dt = −i[H, ρ] − Λ[x, [x, ρ]]`, integrated with fixed-step RK4 in a
//! truncated Fock basis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{coherent_vector, hermite_functions, max_abs, DensityMatrix, FockMode, FockSpace, ModeOperators};
use crate::phase_space::ModeScale;

type CMatrix = DMatrix<Complex64>;

/// Trace drift that triggers a step-halving retry.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;
pub const MAX_HALVINGS: u32 = 6;
/// Most negative eigenvalue tolerated before a sample is flagged.
pub const POSITIVITY_TOL: f64 = 1e-6;

const MODE_LABEL: &str = "S";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemHamiltonian {
    /// `H = 0`: pure dephasing.
    Zero,
    Free { mass: f64 },
    Harmonic { scale: ModeScale },
}

impl SystemHamiltonian {
    fn operator(&self, ops: &ModeOperators) -> CMatrix {
        let d = ops.x.nrows();
        match *self {
            SystemHamiltonian::Zero => CMatrix::zeros(d, d),
            SystemHamiltonian::Free { mass } => &ops.p2 / Complex64::new(2.0 * mass, 0.0),
            SystemHamiltonian::Harmonic { scale } => {
                let k = scale.mass * scale.frequency * scale.frequency;
                &ops.p2 / Complex64::new(2.0 * scale.mass, 0.0) + &ops.x2 * Complex64::new(k / 2.0, 0.0)
            }
        }
    }

    /// Classical phase-space flow over time `t`.
    pub fn flow(&self, x: f64, p: f64, t: f64) -> (f64, f64) {
        match *self {
            SystemHamiltonian::Zero => (x, p),
            SystemHamiltonian::Free { mass } => (x + p * t / mass, p),
            SystemHamiltonian::Harmonic { scale } => {
                let (m, w) = (scale.mass, scale.frequency);
                let (s, c) = (w * t).sin_cos();
                (x * c + p * s / (m * w), p * c - m * w * x * s)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SystemHamiltonian::Free { mass } if !(mass > 0.0 && mass.is_finite()) => {
                Err(Error::InvalidParameter(format!("mass must be positive, got {mass}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterEqScenario {
    pub hamiltonian: SystemHamiltonian,
    /// Dephasing rate `Λ` (inverse time per squared length).
    pub lambda: f64,
    pub cutoff: usize,
    /// Oscillator defining the Fock basis and the position operator's scale.
    pub basis: ModeScale,
    pub step: f64,
    pub times: Vec<f64>,
}

impl MasterEqScenario {
    pub fn validate(&self) -> Result<()> {
        self.hamiltonian.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("Λ must be non-negative, got {}", self.lambda)));
        }
        if self.cutoff < 2 {
            return Err(Error::InvalidParameter("basis cutoff must be at least 2".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {}", self.step)));
        }
        if self.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("time grid must be non-negative and non-decreasing".into()));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<FockSpace> {
        FockSpace::new(vec![FockMode::new(MODE_LABEL, self.cutoff, self.basis)])
    }
}

#[derive(Debug, Clone)]
pub struct MasterSample {
    pub time: f64,
    pub state: DensityMatrix,
    pub trace_error: f64,
    /// `max |ρ − ρ†|` of the integrated matrix, before symmetrisation.
    pub hermiticity: f64,
    pub min_eigenvalue: f64,
    pub positivity_flag: bool,
}

#[derive(Debug, Clone)]
pub struct MasterRun {
    pub samples: Vec<MasterSample>,
    pub step: f64,
    pub halvings: u32,
}

impl MasterRun {
    pub fn max_trace_error(&self) -> f64 {
        self.samples.iter().map(|s| s.trace_error).fold(0.0, f64::max)
    }

    pub fn positivity_flagged(&self) -> bool {
        self.samples.iter().any(|s| s.positivity_flag)
    }
}

/// A complex matrix as its real and imaginary parts; `H` and `x` are real here,
/// so every product stays on the fast real path.
#[derive(Clone)]
struct Split {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl Split {
    fn from_complex(m: &CMatrix) -> Self {
        Split { re: m.map(|c| c.re), im: m.map(|c| c.im) }
    }

    fn to_complex(&self) -> CMatrix {
        self.re.zip_map(&self.im, Complex64::new)
    }

    fn axpy(&self, a: f64, other: &Split) -> Split {
        Split { re: &self.re + &other.re * a, im: &self.im + &other.im * a }
    }

    fn commutator(op: &DMatrix<f64>, m: &Split) -> Split {
        Split { re: op * &m.re - &m.re * op, im: op * &m.im - &m.im * op }
    }

    fn trace(&self) -> f64 {
        self.re.trace()
    }

    fn max_abs(&self) -> f64 {
        self.re.zip_map(&self.im, |a, b| a.hypot(b)).amax()
    }
}

struct Generator {
    h: DMatrix<f64>,
    x: DMatrix<f64>,
    lambda: f64,
}

impl Generator {
    fn new(h: &CMatrix, x: &CMatrix, lambda: f64) -> Result<Self> {
        let real = |m: &CMatrix| -> Result<DMatrix<f64>> {
            if m.iter().any(|c| c.im != 0.0) {
                return Err(Error::Unsupported("master equation expects real H and x in the Fock basis".into()));
            }
            Ok(m.map(|c| c.re))
        };
        Ok(Generator { h: real(h)?, x: real(x)?, lambda })
    }

    fn apply(&self, rho: &Split) -> Split {
        // −i[H, ρ]
        let c = Split::commutator(&self.h, rho);
        let mut out = Split { re: c.im, im: -c.re };
        if self.lambda > 0.0 {
            let dd = Split::commutator(&self.x, &Split::commutator(&self.x, rho));
            out = out.axpy(-self.lambda, &dd);
        }
        out
    }

    fn rk4(&self, rho: &Split, h: f64) -> Split {
        let k1 = self.apply(rho);
        let k2 = self.apply(&rho.axpy(h / 2.0, &k1));
        let k3 = self.apply(&rho.axpy(h / 2.0, &k2));
        let k4 = self.apply(&rho.axpy(h, &k3));
        rho.axpy(h / 6.0, &k1).axpy(h / 3.0, &k2).axpy(h / 3.0, &k3).axpy(h / 6.0, &k4)
    }
}

/// Drift measure for the retry logic: trace error, plus any entry growing past
/// the bound `|ρ_ij| ≤ 1` that a valid state respects.
fn drift(rho: &Split) -> f64 {
    (rho.trace() - 1.0).abs().max(rho.max_abs() - 1.0).max(0.0)
}

fn integrate(gen: &Generator, rho0: &CMatrix, times: &[f64], step: f64) -> std::result::Result<Vec<CMatrix>, f64> {
    let mut rho = Split::from_complex(rho0);
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let span = t - now;
        if span > 0.0 {
            let n = (span / step).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for _ in 0..n {
                rho = gen.rk4(&rho, h);
                let d = drift(&rho);
                if !d.is_finite() || d > TRACE_DRIFT_LIMIT {
                    return Err(d);
                }
            }
            now = t;
        }
        out.push(rho.to_complex());
    }
    Ok(out)
}

/// Integrates from `t = 0` and samples at every grid time. On drift beyond
/// [`TRACE_DRIFT_LIMIT`] the whole run is repeated with half the step, at most
/// [`MAX_HALVINGS`] times.
pub fn evolve_master(rho0: &DensityMatrix, scn: &MasterEqScenario) -> Result<MasterRun> {
    scn.validate()?;
    let space = scn.space()?;
    if rho0.space() != &space {
        return Err(Error::InvalidState("initial state is not on the scenario's Fock basis".into()));
    }
    let ops = ModeOperators::new(scn.cutoff, scn.basis);
    let gen = Generator::new(&scn.hamiltonian.operator(&ops), &ops.x, scn.lambda)?;
    let mut step = scn.step;
    let mut last = 0.0;
    for halvings in 0..=MAX_HALVINGS {
        match integrate(&gen, rho0.matrix(), &scn.times, step) {
            Ok(mats) => {
                let samples = mats
                    .into_iter()
                    .zip(&scn.times)
                    .map(|(m, &time)| {
                        let hermiticity = max_abs(&(&m - m.adjoint()));
                        let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
                        let state = DensityMatrix::new(space.clone(), m)?;
                        let min_eigenvalue = state.min_eigenvalue();
                        Ok(MasterSample {
                            time,
                            trace_error: (state.trace() - 1.0).abs(),
                            hermiticity,
                            positivity_flag: min_eigenvalue < -POSITIVITY_TOL,
                            min_eigenvalue,
                            state,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                return Ok(MasterRun { samples, step, halvings });
            }
            Err(d) => {
                last = d;
                step /= 2.0;
            }
        }
    }
    Err(Error::IntegrationUnstable { halvings: MAX_HALVINGS, drift: last })
}

/// Normalised `(|x0⟩ + |−x0⟩)` of coherent states of `scale`, in its own basis.
pub fn cat_state(cutoff: usize, scale: ModeScale, x0: f64) -> Result<DensityMatrix> {
    let (a, _) = coherent_vector(cutoff, scale, x0, 0.0);
    let (b, _) = coherent_vector(cutoff, scale, -x0, 0.0);
    let space = FockSpace::new(vec![FockMode::new(MODE_LABEL, cutoff, scale)])?;
    DensityMatrix::pure(space, &(a + b))
}

/// `ρ(x, x')` on a position grid, from the Hermite functions of the basis.
pub fn position_density(state: &DensityMatrix, grid: &[f64]) -> Result<CMatrix> {
    let modes = state.space().modes();
    if modes.len() != 1 {
        return Err(Error::Unsupported("position density needs a single-mode state".into()));
    }
    let d = modes[0].cutoff;
    let mw = modes[0].scale.m_omega();
    let phi = CMatrix::from_fn(grid.len(), d, |k, n| Complex64::new(hermite_functions(n + 1, mw, grid[k])[n], 0.0));
    Ok(&phi * state.matrix() * phi.transpose())
}

/// A coherent-state window centred at `(x, p)` in phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePatch {
    pub x: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPair {
    pub a: PhasePatch,
    pub b: PhasePatch,
}

impl PatchPair {
    /// The pair carried along the classical flow of `h` for time `t`.
    pub fn moved(&self, h: &SystemHamiltonian, t: f64) -> PatchPair {
        let mv = |q: PhasePatch| {
            let (x, p) = h.flow(q.x, q.p, t);
            PhasePatch { x, p }
        };
        PatchPair { a: mv(self.a), b: mv(self.b) }
    }
}

/// `|⟨a|ρ|b⟩| / √(⟨a|ρ|a⟩⟨b|ρ|b⟩)` for coherent windows `a`, `b` of the basis
/// oscillator. With `co_moving` the windows follow the classical flow of `h`.
pub fn coherence_profile(
    run: &MasterRun,
    h: &SystemHamiltonian,
    pair: PatchPair,
    co_moving: bool,
) -> Result<Vec<f64>> {
    run.samples
        .iter()
        .map(|s| {
            let mode = &s.state.space().modes()[0];
            let pr = if co_moving { pair.moved(h, s.time) } else { pair };
            let window = |q: PhasePatch| -> DVector<Complex64> { coherent_vector(mode.cutoff, mode.scale, q.x, q.p).0 };
            let (a, b) = (window(pr.a), window(pr.b));
            let rho = s.state.matrix();
            let form = |u: &DVector<Complex64>, v: &DVector<Complex64>| (u.adjoint() * rho * v)[(0, 0)];
            let (aa, bb) = (form(&a, &a).re, form(&b, &b).re);
            if aa <= 1e-14 || bb <= 1e-14 {
                return Err(Error::VanishingWeight);
            }
            Ok(form(&a, &b).norm() / (aa * bb).sqrt())
        })
        .collect()
}
