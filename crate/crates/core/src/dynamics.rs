//! Exact Gaussian evolution under quadratic Hamiltonians.
//!
//! Hamilton's equations `ż = J(hz + l)` are integrated in closed form with a
//! matrix exponential; means move as `m → M m + c` and covariances as
//! `σ → M σ Mᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phase_space::{
    symplectic_form, symplectic_residual, CoherentAmplitude, GaussianState, ModeScale, PhaseSpaceLayout,
    QuadraticHamiltonian,
};

/// Upper bound on `|t|·‖h‖₂` for which propagators are computed.
pub const MAX_TIME_NORM: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticPropagator {
    layout: PhaseSpaceLayout,
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
    time: f64,
}

impl SymplecticPropagator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Drift of the mean produced by the linear term of the Hamiltonian.
    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn layout(&self) -> &PhaseSpaceLayout {
        &self.layout
    }

    pub fn symplectic_residual(&self) -> f64 {
        symplectic_residual(&self.matrix)
    }

    pub fn apply(&self, state: &GaussianState) -> Result<GaussianState> {
        self.layout.ensure_same(state.layout())?;
        let m = &self.matrix;
        let mean = m * state.mean() + &self.offset;
        let cov = m * state.covariance() * m.transpose();
        GaussianState::new_unchecked(self.layout.clone(), mean, (&cov + cov.transpose()) * 0.5)
    }
}

fn spectral_norm(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone()).eigenvalues.amax()
}

/// `M(t) = exp(t J h)`, with the linear term folded in through an augmented
/// generator.
pub fn propagator(h: &QuadraticHamiltonian, t: f64) -> Result<SymplecticPropagator> {
    if !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time must be finite, got {t}")));
    }
    let budget = t.abs() * spectral_norm(h.matrix());
    if budget > MAX_TIME_NORM {
        return Err(Error::PropagatorRange(budget));
    }
    let d = h.layout().dim();
    let j = symplectic_form(h.n_modes());
    let generator = &j * h.matrix() * t;
    let drift = &j * h.linear_term() * t;
    let (matrix, offset) = if drift.iter().all(|v| *v == 0.0) {
        (generator.exp(), DVector::zeros(d))
    } else {
        let mut aug = DMatrix::zeros(d + 1, d + 1);
        aug.view_mut((0, 0), (d, d)).copy_from(&generator);
        aug.view_mut((0, d), (d, 1)).copy_from(&drift);
        let e = aug.exp();
        (e.view((0, 0), (d, d)).clone_owned(), e.view((0, d), (d, 1)).column(0).clone_owned())
    };
    if !matrix.iter().all(|v| v.is_finite()) {
        return Err(Error::PropagatorRange(budget));
    }
    Ok(SymplecticPropagator { layout: h.layout().clone(), matrix, offset, time: t })
}

pub fn evolve(state: &GaussianState, h: &QuadraticHamiltonian, t: f64) -> Result<GaussianState> {
    h.layout().ensure_same(state.layout())?;
    propagator(h, t)?.apply(state)
}

/// Evolves one state to every time of an explicit grid; grid points are independent.
pub fn evolve_grid(state: &GaussianState, h: &QuadraticHamiltonian, t_grid: &[f64]) -> Result<Vec<GaussianState>> {
    h.layout().ensure_same(state.layout())?;
    t_grid.par_iter().map(|&t| propagator(h, t)?.apply(state)).collect()
}

/// Two branches of a superposition: the same global state displaced on the open
/// mode by `alpha` or by `beta`, evolved with the same propagator.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPair {
    pub time: f64,
    pub alpha: GaussianState,
    pub beta: GaussianState,
    pub amp_alpha: CoherentAmplitude,
    pub amp_beta: CoherentAmplitude,
    pub symplectic_residual: f64,
}

/// Branches built from `vacuum(open) ⊗ env`.
pub fn evolve_branches(
    alpha: &CoherentAmplitude,
    beta: &CoherentAmplitude,
    open_scale: ModeScale,
    env: &GaussianState,
    h: &QuadraticHamiltonian,
    t_grid: &[f64],
) -> Result<Vec<BranchPair>> {
    if alpha.mode != beta.mode {
        return Err(Error::InvalidParameter(format!(
            "branch amplitudes act on different modes `{}` and `{}`",
            alpha.mode, beta.mode
        )));
    }
    let layout = h.layout();
    layout.index_of(&alpha.mode)?;
    let open_layout = PhaseSpaceLayout::new([alpha.mode.as_str()])?;
    let vac = GaussianState::vacuum(&open_layout, &[open_scale])?;
    let base = GaussianState::product(layout, &[&vac, env])?;
    evolve_displaced_branches(&base, alpha, beta, h, t_grid)
}

/// Branches built by displacing an arbitrary global state on the open mode.
pub fn evolve_displaced_branches(
    base: &GaussianState,
    alpha: &CoherentAmplitude,
    beta: &CoherentAmplitude,
    h: &QuadraticHamiltonian,
    t_grid: &[f64],
) -> Result<Vec<BranchPair>> {
    h.layout().ensure_same(base.layout())?;
    let a0 = base.displaced(alpha)?;
    let b0 = base.displaced(beta)?;
    t_grid
        .par_iter()
        .map(|&t| {
            let prop = propagator(h, t)?;
            Ok(BranchPair {
                time: t,
                alpha: prop.apply(&a0)?,
                beta: prop.apply(&b0)?,
                amp_alpha: alpha.clone(),
                amp_beta: beta.clone(),
                symplectic_residual: prop.symplectic_residual(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{cm_relative_transform, transform_hamiltonian, transform_state, WeightFamily};
    use crate::models::{
        build_caldeira_leggett, build_two_mode, discretize_ohmic_bath, CaldeiraLeggettParams, CouplingSign,
        SystemPotential, TwoModeParams,
    };
    use std::f64::consts::PI;

    fn single(h: [f64; 4]) -> QuadraticHamiltonian {
        let l = PhaseSpaceLayout::new(["S"]).unwrap();
        QuadraticHamiltonian::new(l, DMatrix::from_row_slice(2, 2, &h), "single").unwrap()
    }

    fn reference_cl(n: usize, temperature: f64) -> (CaldeiraLeggettParams, QuadraticHamiltonian, GaussianState) {
        let bath = discretize_ohmic_bath(n, 5.0, 0.1, CouplingSign::Minus).unwrap();
        let p = CaldeiraLeggettParams { m_s: 1.0, potential: SystemPotential::Harmonic { omega_s: 2.0 }, bath };
        let h = build_caldeira_leggett(&p).unwrap();
        let scales: Vec<(ModeScale, f64)> = std::iter::once((ModeScale::new(1.0, 2.0).unwrap(), 0.0))
            .chain(p.bath.scales().into_iter().map(|s| (s, temperature)))
            .collect();
        let st = GaussianState::thermal(h.layout(), &scales)
            .unwrap()
            .displaced(&CoherentAmplitude::new("S", 1.0, 0.5))
            .unwrap();
        (p, h, st)
    }

    #[test]
    fn zero_time_is_identity() {
        let (_, h, _) = reference_cl(4, 1.0);
        let m = propagator(&h, 0.0).unwrap();
        assert_eq!(m.matrix(), &DMatrix::identity(10, 10));
    }

    #[test]
    fn free_particle_flow() {
        let m = 2.0;
        let h = single([0.0, 0.0, 0.0, 1.0 / m]);
        let prop = propagator(&h, 3.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 0.0, 1.0]);
        assert!((prop.matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn oscillator_full_period() {
        let h = single([1.0, 0.0, 0.0, 1.0]);
        let prop = propagator(&h, 2.0 * PI).unwrap();
        assert!((prop.matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-9);
        let quarter = propagator(&h, PI / 2.0).unwrap();
        // x → p, p → −x
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((quarter.matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn linear_term_shifts_equilibrium() {
        // H = (x − 1)²/2 + p²/2 − ½ ⇒ l = (−1, 0); equilibrium at x = 1
        let l = PhaseSpaceLayout::new(["S"]).unwrap();
        let h = QuadraticHamiltonian::with_linear(
            l.clone(),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, 0.0]),
            "shifted",
        )
        .unwrap();
        let st = GaussianState::new(l, DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2) * 0.5).unwrap();
        let out = evolve(&st, &h, 1.7).unwrap();
        assert!((out.mean()[0] - 1.0).abs() < 1e-12 && out.mean()[1].abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_budget_times() {
        let h = single([100.0, 0.0, 0.0, 1.0]);
        assert!(matches!(propagator(&h, 20.0), Err(Error::PropagatorRange(_))));
        assert!(propagator(&h, f64::NAN).is_err());
    }

    #[test]
    fn thermal_bath_is_stationary() {
        let bath = discretize_ohmic_bath(6, 3.0, 0.1, CouplingSign::Minus).unwrap();
        let labels: Vec<String> = (1..=6).map(|i| format!("E{i}")).collect();
        let layout = PhaseSpaceLayout::new(labels).unwrap();
        let mut h = DMatrix::zeros(12, 12);
        for (i, o) in bath.oscillators.iter().enumerate() {
            h[(i, i)] = o.mass * o.frequency * o.frequency;
            h[(6 + i, 6 + i)] = 1.0 / o.mass;
        }
        let h = QuadraticHamiltonian::new(layout.clone(), h, "bath").unwrap();
        let st = GaussianState::thermal(&layout, &bath.scales().into_iter().map(|s| (s, 2.5)).collect::<Vec<_>>())
            .unwrap();
        for t in [0.3, 1.0, 7.0] {
            let out = evolve(&st, &h, t).unwrap();
            assert!((out.covariance() - st.covariance()).amax() < 1e-9);
        }
    }

    #[test]
    fn conservation_and_symplecticity() {
        let (_, h, st) = reference_cl(16, 10.0);
        let p0 = st.purity().unwrap();
        let e0 = h.expectation(&st);
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        for (t, out) in grid.iter().zip(evolve_grid(&st, &h, &grid).unwrap()) {
            assert!((out.purity().unwrap() - p0).abs() < 1e-8, "t={t}");
            assert!((h.expectation(&out) - e0).abs() < 1e-8 * e0.abs());
            assert!(propagator(&h, *t).unwrap().symplectic_residual() < 1e-9);
        }
    }

    #[test]
    fn composition() {
        let (_, h, _) = reference_cl(8, 0.0);
        let m1 = propagator(&h, 0.7).unwrap();
        let m2 = propagator(&h, 1.9).unwrap();
        let m12 = propagator(&h, 2.6).unwrap();
        assert!((m2.matrix() * m1.matrix() - m12.matrix()).amax() < 1e-9);
    }

    #[test]
    fn evolution_commutes_with_frame_change() {
        let (p, h, st) = reference_cl(8, 3.0);
        let t = cm_relative_transform(h.layout(), &p.masses(), WeightFamily::Jacobi).unwrap();
        let hp = transform_hamiltonian(&h, &t).unwrap();
        for time in [0.5, 2.0, 5.0] {
            let a = transform_state(&evolve(&st, &h, time).unwrap(), &t).unwrap();
            let b = evolve(&transform_state(&st, &t).unwrap(), &hp, time).unwrap();
            assert!((a.mean() - b.mean()).amax() < 1e-9);
            assert!((a.covariance() - b.covariance()).amax() < 1e-9 * a.covariance().amax().max(1.0));
        }
    }

    #[test]
    fn open_system_purity_drops() {
        let (_, h, _) = reference_cl(32, 10.0);
        let env_layout = PhaseSpaceLayout::new(h.layout().complement(&["S"])).unwrap();
        let bath = discretize_ohmic_bath(32, 5.0, 0.1, CouplingSign::Minus).unwrap();
        let env = GaussianState::thermal(&env_layout, &bath.scales().into_iter().map(|s| (s, 10.0)).collect::<Vec<_>>())
            .unwrap();
        let s = GaussianState::vacuum(&PhaseSpaceLayout::new(["S"]).unwrap(), &[ModeScale::new(1.0, 2.0).unwrap()]).unwrap();
        let global = GaussianState::product(h.layout(), &[&s, &env]).unwrap();
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let purities: Vec<f64> = evolve_grid(&global, &h, &grid)
            .unwrap()
            .iter()
            .map(|g| g.reduce(&["S"]).unwrap().purity().unwrap())
            .collect();
        assert!((purities[0] - 1.0).abs() < 1e-12);
        assert!(purities.windows(2).all(|w| w[1] < w[0]), "{purities:?}");
    }

    #[test]
    fn branches() {
        let p = TwoModeParams { m_s: 1.0, m_e: 1.0, omega: 1.0, coupling: 0.25 };
        let h = build_two_mode(&p).unwrap();
        let env = GaussianState::vacuum(&PhaseSpaceLayout::new(["E"]).unwrap(), &[ModeScale::unit()]).unwrap();
        let a = CoherentAmplitude::new("S", 1.0, 0.0);
        let b = CoherentAmplitude::new("S", -1.0, 0.0);
        let grid = [0.0, 0.5, 1.0];
        let same = evolve_branches(&a, &a, ModeScale::unit(), &env, &h, &grid).unwrap();
        assert!(same.iter().all(|bp| bp.alpha == bp.beta));
        let pairs = evolve_branches(&a, &b, ModeScale::unit(), &env, &h, &grid).unwrap();
        assert!(pairs.iter().all(|bp| bp.alpha.covariance() == bp.beta.covariance()));
        let sep: Vec<f64> = pairs
            .iter()
            .map(|bp| (bp.alpha.reduce(&["E"]).unwrap().mean() - bp.beta.reduce(&["E"]).unwrap().mean()).norm())
            .collect();
        assert_eq!(sep[0], 0.0);
        assert!(sep[1] > 0.0 && sep[2] > sep[1]);
        let bad = CoherentAmplitude::new("X", 0.0, 0.0);
        assert!(evolve_branches(&bad, &bad, ModeScale::unit(), &env, &h, &grid).is_err());
    }
}
