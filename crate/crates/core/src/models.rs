//! Hamiltonian builders: the two-mode model and the Caldeira–Leggett model with a
//! free or harmonic open system, plus an Ohmic bath discretisation.

use nalgebra::DMatrix;

use crate::decomposition::normal_mode_transform;
use crate::error::{Error, Result};
use crate::phase_space::{ModeScale, PhaseSpaceLayout, QuadraticHamiltonian};

pub const SYSTEM_LABEL: &str = "S";
pub const ENV_LABEL: &str = "E";

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `H = p_S²/2m_S + p_E²/2m_E + m_E ω² x_E²/2 − C x_S x_E`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeParams {
    pub m_s: f64,
    pub m_e: f64,
    pub omega: f64,
    pub coupling: f64,
}

impl TwoModeParams {
    pub fn validate(&self) -> Result<()> {
        positive("m_S", self.m_s)?;
        positive("m_E", self.m_e)?;
        positive("omega", self.omega)?;
        if !self.coupling.is_finite() {
            return Err(Error::InvalidParameter("coupling C must be finite".into()));
        }
        let bound = self.confinement_bound();
        if self.coupling >= bound {
            return Err(Error::Constraint(format!(
                "C < m_E ω²/2 required for confinement, got C = {} with m_E ω²/2 = {bound}",
                self.coupling
            )));
        }
        Ok(())
    }

    pub fn confinement_bound(&self) -> f64 {
        self.m_e * self.omega * self.omega / 2.0
    }

    pub fn layout() -> PhaseSpaceLayout {
        PhaseSpaceLayout::new([SYSTEM_LABEL, ENV_LABEL]).expect("static labels")
    }

    pub fn masses(&self) -> [f64; 2] {
        [self.m_s, self.m_e]
    }
}

pub fn build_two_mode(p: &TwoModeParams) -> Result<QuadraticHamiltonian> {
    p.validate()?;
    let mut h = DMatrix::zeros(4, 4);
    h[(1, 1)] = p.m_e * p.omega * p.omega;
    h[(0, 1)] = -p.coupling;
    h[(1, 0)] = -p.coupling;
    h[(2, 2)] = 1.0 / p.m_s;
    h[(3, 3)] = 1.0 / p.m_e;
    QuadraticHamiltonian::new(TwoModeParams::layout(), h, "two_mode")
}

/// Sign in front of `x_S Σ κ_i x_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingSign {
    Plus,
    #[default]
    Minus,
}

impl CouplingSign {
    pub fn factor(self) -> f64 {
        match self {
            CouplingSign::Plus => 1.0,
            CouplingSign::Minus => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CouplingSign::Plus => "plus",
            CouplingSign::Minus => "minus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathOscillator {
    pub mass: f64,
    pub frequency: f64,
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathParams {
    pub oscillators: Vec<BathOscillator>,
    pub sign: CouplingSign,
}

impl BathParams {
    pub fn validate(&self) -> Result<()> {
        if self.oscillators.is_empty() {
            return Err(Error::InvalidParameter("bath must contain at least one oscillator".into()));
        }
        for (i, o) in self.oscillators.iter().enumerate() {
            positive(&format!("bath mass m_{}", i + 1), o.mass)?;
            positive(&format!("bath frequency ω_{}", i + 1), o.frequency)?;
            if !o.coupling.is_finite() {
                return Err(Error::InvalidParameter(format!("bath coupling κ_{} must be finite", i + 1)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.oscillators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oscillators.is_empty()
    }

    pub fn scales(&self) -> Vec<ModeScale> {
        self.oscillators.iter().map(|o| ModeScale { mass: o.mass, frequency: o.frequency }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemPotential {
    FreeParticle,
    Harmonic { omega_s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaldeiraLeggettParams {
    pub m_s: f64,
    pub potential: SystemPotential,
    pub bath: BathParams,
}

impl CaldeiraLeggettParams {
    pub fn validate(&self) -> Result<()> {
        positive("m_S", self.m_s)?;
        if let SystemPotential::Harmonic { omega_s } = self.potential {
            positive("omega_S", omega_s)?;
        }
        self.bath.validate()
    }

    pub fn layout(&self) -> PhaseSpaceLayout {
        PhaseSpaceLayout::with_environment(SYSTEM_LABEL, ENV_LABEL, self.bath.len()).expect("generated labels")
    }

    /// Masses in layout order, the open system first.
    pub fn masses(&self) -> Vec<f64> {
        std::iter::once(self.m_s).chain(self.bath.oscillators.iter().map(|o| o.mass)).collect()
    }

    pub fn system_stiffness(&self) -> f64 {
        match self.potential {
            SystemPotential::FreeParticle => 0.0,
            SystemPotential::Harmonic { omega_s } => self.m_s * omega_s * omega_s,
        }
    }

    /// The Hamiltonian split into kinetic, system-potential, bath-potential and
    /// coupling matrices; their sum is the full `h`.
    pub fn parts(&self) -> Result<ModelParts> {
        self.validate()?;
        let n = self.bath.len() + 1;
        let d = 2 * n;
        let mut kinetic = DMatrix::zeros(d, d);
        let mut system_potential = DMatrix::zeros(d, d);
        let mut bath_potential = DMatrix::zeros(d, d);
        let mut coupling = DMatrix::zeros(d, d);
        kinetic[(n, n)] = 1.0 / self.m_s;
        system_potential[(0, 0)] = self.system_stiffness();
        let s = self.bath.sign.factor();
        for (i, o) in self.bath.oscillators.iter().enumerate() {
            let k = i + 1;
            kinetic[(n + k, n + k)] = 1.0 / o.mass;
            bath_potential[(k, k)] = o.mass * o.frequency * o.frequency;
            coupling[(0, k)] = s * o.coupling;
            coupling[(k, 0)] = s * o.coupling;
        }
        Ok(ModelParts { layout: self.layout(), kinetic, system_potential, bath_potential, coupling })
    }
}

/// Additive pieces of a Caldeira–Leggett `h` matrix, all in the `½ zᵀ h z` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub layout: PhaseSpaceLayout,
    pub kinetic: DMatrix<f64>,
    pub system_potential: DMatrix<f64>,
    pub bath_potential: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
}

impl ModelParts {
    pub fn total(&self) -> DMatrix<f64> {
        &self.kinetic + &self.system_potential + &self.bath_potential + &self.coupling
    }

    pub fn map(&self, layout: PhaseSpaceLayout, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            layout,
            kinetic: f(&self.kinetic),
            system_potential: f(&self.system_potential),
            bath_potential: f(&self.bath_potential),
            coupling: f(&self.coupling),
        }
    }
}

/// `H = p_S²/2m_S + V(x_S) + Σ_i (p_i²/2m_i + m_i ω_i² x_i²/2) ± x_S Σ_i κ_i x_i`.
pub fn build_caldeira_leggett(params: &CaldeiraLeggettParams) -> Result<QuadraticHamiltonian> {
    let parts = params.parts()?;
    let tag = match params.potential {
        SystemPotential::FreeParticle => "caldeira_leggett_free",
        SystemPotential::Harmonic { .. } => "caldeira_leggett_harmonic",
    };
    QuadraticHamiltonian::new(parts.layout.clone(), parts.total(), tag)
}

/// Uniform-bin Ohmic bath: `ω_i = iΔ`, `m_i = 1`, `κ_i = √(2 m_i ω_i · η ω_i Δ)`,
/// `Δ = ω_c/N`, so that `Σ_i κ_i²/(2 m_i ω_i) δ(ω − ω_i)` samples `J(ω) = ηω`.
pub fn discretize_ohmic_bath(n: usize, omega_cutoff: f64, eta: f64, sign: CouplingSign) -> Result<BathParams> {
    if n == 0 {
        return Err(Error::InvalidParameter("bath size N must be at least 1".into()));
    }
    positive("omega_cutoff", omega_cutoff)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("eta must be non-negative, got {eta}")));
    }
    let delta = omega_cutoff / n as f64;
    let oscillators = (1..=n)
        .map(|i| {
            let w = i as f64 * delta;
            let mass = 1.0;
            BathOscillator { mass, frequency: w, coupling: (2.0 * mass * w * eta * w * delta).sqrt() }
        })
        .collect();
    Ok(BathParams { oscillators, sign })
}

/// A normal mode of the environment and its coupling: `X Σ_l λ_l Q_l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralLine {
    pub frequency: f64,
    pub coupling: f64,
}

/// Frequencies and effective couplings of the environment seen by `open_mode`,
/// after bringing the environment to normal form.
pub fn coupling_spectrum(h: &QuadraticHamiltonian, open_mode: &str) -> Result<Vec<SpectralLine>> {
    let layout = h.layout();
    let open = layout.index_of(open_mode)?;
    let (_, normal) = normal_mode_transform(h, &layout.complement(&[open_mode]))?;
    let n = layout.n_modes();
    let m = normal.matrix();
    let freqs = crate::decomposition::diagonal_frequencies(&normal, &normal.layout().complement(&[open_mode]))?;
    Ok((0..n)
        .filter(|&k| k != open)
        .zip(freqs)
        .map(|(k, frequency)| SpectralLine { frequency, coupling: m[(open, k)] })
        .collect())
}
