//! Scenario orchestration: resolve a config into a model and initial state, run
//! one pipeline stage (or all of them) and write the results.

use std::path::{Path, PathBuf};

use pardec_core::config::{
    CmAmplitudes, MasterHamiltonian, ModelConfig, ScenarioConfig, Structures,
};
use pardec_core::decomposition::{
    analytic_transformed_constants, cm_relative_transform, is_global, normal_mode_transform, transform_hamiltonian,
    transform_parts, verify_component_constants, verify_constants, ConstantReport, LinearCoordinateTransform,
    ModelParams, TransformedConstants, CM_LABEL,
};
use pardec_core::dynamics::propagator;
use pardec_core::fock::{gaussian_crosscheck, CrosscheckScenario, ProjectionGrid};
use pardec_core::master::{
    cat_state, coherence_profile, evolve_master, MasterEqScenario, PatchPair, PhasePatch, SystemHamiltonian,
};
use pardec_core::metrics::{
    decoherence_report, parallel_compare, DecoherenceReport, Decomposition, ParallelComparison, ParallelSetup,
    DECOHERENCE_THRESHOLD,
};
use pardec_core::models::{
    build_caldeira_leggett, build_two_mode, BathOscillator, BathParams, CaldeiraLeggettParams, CouplingSign,
    ModelParts, SystemPotential, TwoModeParams, SYSTEM_LABEL,
};
use pardec_core::phase_space::{
    symplectic_residual, CoherentAmplitude, GaussianState, ModeScale, QuadraticHamiltonian,
};
use pardec_core::{config::ConfigErrors, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::output::{num, opt, pair, Sink};

/// Relative conservation tolerance for purity and energy on unitary runs.
pub const CONSERVATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Build,
    Transform,
    Evolve,
    Decohere,
    Compare,
    Oracle,
    MasterEq,
    /// Build, transform, evolve, then compare (or decohere for a single structure).
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Build => "build",
            Stage::Transform => "transform",
            Stage::Evolve => "evolve",
            Stage::Decohere => "decohere",
            Stage::Compare => "compare",
            Stage::Oracle => "oracle",
            Stage::MasterEq => "master-eq",
            Stage::All => "run",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Used instead of `output.dir`; not recorded in the manifest.
    pub out: Option<PathBuf>,
    /// Also run the Fock-space crosscheck.
    pub oracle: bool,
    /// Overrides `run.seed`.
    pub seed: Option<u64>,
    /// Appended to the output directory, so that several scenarios can share one.
    pub subdir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("{0}")]
    Invalid(String),
    #[error("{stage}: {source}")]
    Core { stage: &'static str, source: Error },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 2 for failures of numerical trust, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Core { source, .. } if is_numerical(source) => 2,
            _ => 1,
        }
    }
}

fn is_numerical(e: &Error) -> bool {
    match e {
        Error::Tagged { source, .. } => is_numerical(source),
        Error::IntegrationUnstable { .. } | Error::PropagatorRange(_) | Error::IllConditioned(_) => true,
        _ => false,
    }
}

fn at(stage: Stage) -> impl Fn(Error) -> RunError {
    move |source| RunError::Core { stage: stage.name(), source }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub manifest_hash: String,
    pub files: Vec<PathBuf>,
    /// Leakage, positivity and conservation flags raised during the run.
    pub trust_issues: Vec<String>,
}

impl RunReport {
    pub fn exit_code(&self) -> u8 {
        if self.trust_issues.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Model and initial state resolved from a config.
pub struct Resolved {
    pub cfg: ScenarioConfig,
    pub h: QuadraticHamiltonian,
    pub masses: Vec<f64>,
    pub params: ModelParams,
    pub parts: Option<ModelParts>,
    /// Natural scale and initial temperature of each mode, in layout order.
    pub modes: Vec<(ModeScale, f64)>,
    pub initial: GaussianState,
    pub times: Vec<f64>,
}

impl Resolved {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, RunError> {
        let stage = at(Stage::Build);
        let ic = &cfg.initial;
        let (h, masses, params, parts, env): (_, _, _, _, Vec<ModeScale>) = match &cfg.model {
            ModelConfig::TwoMode(p) => (
                build_two_mode(p).map_err(&stage)?,
                p.masses().to_vec(),
                ModelParams::TwoMode(*p),
                None,
                vec![ModeScale::new(p.m_e, p.omega).map_err(&stage)?],
            ),
            ModelConfig::CaldeiraLeggett { .. } => {
                let p = cfg.model.caldeira_leggett().map_err(&stage)?.expect("caldeira_leggett");
                let h = build_caldeira_leggett(&p).map_err(&stage)?;
                let parts = p.parts().map_err(&stage)?;
                let env = p.bath.scales();
                (h, p.masses(), ModelParams::CaldeiraLeggett(p), Some(parts), env)
            }
        };
        let s_scale = ModeScale::new(masses[0], ic.system_frequency).map_err(&stage)?;
        let modes: Vec<(ModeScale, f64)> =
            std::iter::once((s_scale, 0.0)).chain(env.into_iter().map(|s| (s, ic.env_temperature))).collect();
        let initial = GaussianState::thermal(h.layout(), &modes).map_err(&stage)?;
        let times = cfg.time.points();
        Ok(Resolved { cfg, h, masses, params, parts, modes, initial, times })
    }

    /// Vacuum-width scale of the open mode in the original frame.
    pub fn system_scale(&self) -> Result<ModeScale, Error> {
        self.h.mode_scale(SYSTEM_LABEL, self.cfg.initial.system_frequency)
    }

    /// CM branch amplitudes, either explicit or carried over from `S` at equal
    /// vacuum-scaled displacement.
    pub fn cm_amplitudes(&self, h_cm: &QuadraticHamiltonian) -> Result<[(f64, f64); 2], Error> {
        let ic = &self.cfg.initial;
        match ic.cm {
            CmAmplitudes::Explicit { alpha, beta } => Ok([alpha, beta]),
            CmAmplitudes::Matched => {
                let s = self.system_scale()?.m_omega();
                let cm = h_cm.mode_scale(CM_LABEL, ic.system_frequency)?.m_omega();
                let carry = |(x, p): (f64, f64)| (x * (s / cm).sqrt(), p * (cm / s).sqrt());
                Ok([carry(ic.alpha), carry(ic.beta)])
            }
        }
    }

    pub fn parallel_setup(&self, h_cm: &QuadraticHamiltonian) -> Result<ParallelSetup, Error> {
        let [cm_alpha, cm_beta] = self.cm_amplitudes(h_cm)?;
        Ok(ParallelSetup {
            hamiltonian: self.h.clone(),
            masses: self.masses.clone(),
            family: self.cfg.decomposition.family,
            initial: self.initial.clone(),
            s_alpha: self.cfg.initial.alpha,
            s_beta: self.cfg.initial.beta,
            cm_alpha,
            cm_beta,
            reference_frequency: self.cfg.initial.system_frequency,
            times: self.times.clone(),
            allow_positivity_violation: self.cfg.decomposition.allow_positivity_violation,
        })
    }

    fn to_cm(&self) -> Result<(LinearCoordinateTransform, QuadraticHamiltonian), Error> {
        let t = cm_relative_transform(self.h.layout(), &self.masses, self.cfg.decomposition.family)?;
        let h_cm = transform_hamiltonian(&self.h, &t)?;
        Ok((t, h_cm))
    }
}

/// Parses `text`, applies the option overrides and runs `stage`, writing into
/// the resolved output directory.
pub fn run_scenario(text: &str, stage: Stage, opts: &RunOptions) -> Result<RunReport, RunError> {
    let mut cfg = ScenarioConfig::parse(text)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if opts.oracle && !matches!(cfg.model, ModelConfig::TwoMode(_)) {
        return Err(RunError::Invalid("the Fock-space crosscheck needs model.kind = two_mode".into()));
    }
    if stage == Stage::Oracle && !matches!(cfg.model, ModelConfig::TwoMode(_)) {
        return Err(RunError::Invalid("`oracle` needs model.kind = two_mode".into()));
    }
    if stage == Stage::Compare && cfg.decomposition.structures != Structures::Both {
        return Err(RunError::Invalid("`compare` needs decomposition.structures = both".into()));
    }
    // the location is not part of the scenario, so it stays out of the manifest
    let mut dir = opts.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    if let Some(sub) = &opts.subdir {
        dir.push(sub);
    }
    let resolved = Resolved::new(cfg)?;
    run_resolved(&resolved, stage, opts.oracle, &dir)
}

pub fn run_resolved(r: &Resolved, stage: Stage, oracle: bool, dir: &Path) -> Result<RunReport, RunError> {
    let mut sink = Sink::create(dir, &r.cfg)?;
    let mut issues = Vec::new();
    match stage {
        Stage::Build => build(r, &mut sink)?,
        Stage::Transform => transform(r, &mut sink)?,
        Stage::Evolve => evolve(r, &mut sink, &mut issues)?,
        Stage::Decohere => decohere(r, &mut sink)?,
        Stage::Compare => compare(r, &mut sink)?,
        Stage::Oracle => {}
        Stage::MasterEq => master_eq(r, &mut sink, &mut issues)?,
        Stage::All => {
            build(r, &mut sink)?;
            transform(r, &mut sink)?;
            evolve(r, &mut sink, &mut issues)?;
            if r.cfg.decomposition.structures == Structures::Both {
                compare(r, &mut sink)?;
            } else {
                decohere(r, &mut sink)?;
            }
        }
    }
    if stage == Stage::Oracle || oracle {
        crosscheck(r, &mut sink, &mut issues)?;
    }
    Ok(RunReport {
        dir: dir.to_path_buf(),
        manifest_hash: sink.hash().to_string(),
        files: sink.written().to_vec(),
        trust_issues: issues,
    })
}

fn coordinate_names(labels: &[String]) -> Vec<String> {
    labels.iter().map(|l| format!("x_{l}")).chain(labels.iter().map(|l| format!("p_{l}"))).collect()
}

fn matrix_rows(names: &[String], cols: usize, get: impl Fn(usize, usize) -> f64) -> Vec<Vec<String>> {
    names
        .iter()
        .enumerate()
        .map(|(i, name)| std::iter::once(name.clone()).chain((0..cols).map(|j| num(get(i, j)))).collect())
        .collect()
}

fn write_hamiltonian(sink: &mut Sink, name: &str, h: &QuadraticHamiltonian) -> std::io::Result<()> {
    let names = coordinate_names(h.layout().labels());
    let header: Vec<&str> = std::iter::once("row").chain(names.iter().map(String::as_str)).collect();
    let m = h.matrix();
    sink.table(name, &header, &matrix_rows(&names, m.ncols(), |i, j| m[(i, j)]))
}

fn write_transform(sink: &mut Sink, name: &str, t: &LinearCoordinateTransform) -> std::io::Result<()> {
    let cols: Vec<String> = t.source().labels().iter().map(|l| format!("x_{l}")).collect();
    let rows: Vec<String> = t.target().labels().iter().map(|l| format!("x_{l}")).collect();
    let header: Vec<&str> = std::iter::once("row").chain(cols.iter().map(String::as_str)).collect();
    let a = t.position_matrix();
    sink.table(name, &header, &matrix_rows(&rows, a.ncols(), |i, j| a[(i, j)]))
}

fn build(r: &Resolved, sink: &mut Sink) -> Result<(), RunError> {
    write_hamiltonian(sink, "hamiltonian.csv", &r.h)?;
    let m = r.h.matrix();
    let rows = r
        .h
        .layout()
        .labels()
        .iter()
        .zip(&r.modes)
        .enumerate()
        .map(|(k, (label, (scale, temp)))| {
            vec![
                label.clone(),
                num(r.masses[k]),
                num(scale.frequency),
                if k == 0 { String::new() } else { num(m[(0, k)]) },
                num(*temp),
            ]
        })
        .collect::<Vec<_>>();
    sink.table("modes.csv", &["mode", "mass", "frequency", "coupling_to_S", "temperature"], &rows)?;
    Ok(())
}

fn constant_rows(set: &str, report: &ConstantReport, out: &mut Vec<Vec<String>>) {
    for c in &report.residuals {
        out.push(vec![set.to_string(), c.name.clone(), num(c.analytic), num(c.matrix), num(c.abs())]);
    }
}

/// Closed-form constants against the matrix route for one model.
pub fn constant_report(params: &ModelParams, family: pardec_core::decomposition::WeightFamily) -> Result<ConstantReport, Error> {
    let (h, masses, parts) = match params {
        ModelParams::TwoMode(p) => (build_two_mode(p)?, p.masses().to_vec(), None),
        ModelParams::CaldeiraLeggett(p) => (build_caldeira_leggett(p)?, p.masses(), Some(p.parts()?)),
    };
    let t = cm_relative_transform(h.layout(), &masses, family)?;
    let k = analytic_transformed_constants(params, family)?;
    let mut report = verify_constants(&transform_hamiltonian(&h, &t)?, &k)?;
    if let (TransformedConstants::ManyMode(c), Some(parts)) = (&k, parts) {
        report.extend(verify_component_constants(&transform_parts(&parts, &t)?, c)?);
    }
    Ok(report)
}

/// Random valid two-mode parameters.
pub fn random_two_mode(rng: &mut impl Rng) -> TwoModeParams {
    let m_e = rng.gen_range(0.3..3.0);
    let omega = rng.gen_range(0.3..3.0);
    let bound = m_e * omega * omega / 2.0;
    TwoModeParams { m_s: rng.gen_range(0.3..3.0), m_e, omega, coupling: rng.gen_range(-bound..0.99 * bound) }
}

/// Random Caldeira–Leggett parameters with `n` bath oscillators.
pub fn random_caldeira_leggett(rng: &mut impl Rng, n: usize, harmonic: bool) -> CaldeiraLeggettParams {
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
        bath: BathParams {
            oscillators,
            sign: if rng.gen_bool(0.5) { CouplingSign::Plus } else { CouplingSign::Minus },
        },
    }
}

fn transform(r: &Resolved, sink: &mut Sink) -> Result<(), RunError> {
    let stage = at(Stage::Transform);
    let family = r.cfg.decomposition.family;
    let (to_cm, h_cm) = r.to_cm().map_err(|e| stage(e.tagged("CM+R")))?;
    let diag = h_cm.matrix().diagonal();
    let violated: Vec<String> =
        (0..h_cm.n_modes()).filter(|&k| diag[k] <= 0.0).map(|k| h_cm.layout().labels()[k].clone()).collect();
    if !violated.is_empty() && !r.cfg.decomposition.allow_positivity_violation {
        return Err(stage(
            Error::Constraint(format!(
                "non-positive confinement on [{}]; set decomposition.allow_positivity_violation = true to proceed",
                violated.join(",")
            ))
            .tagged("CM+R"),
        ));
    }
    let env_r = h_cm.layout().complement(&[CM_LABEL]);
    let (to_normal, h_normal) = normal_mode_transform(&h_cm, &env_r).map_err(|e| stage(e.tagged("CM+R")))?;
    let env_s = r.h.layout().complement(&[SYSTEM_LABEL]);
    let (s_normal, h_s_normal) = normal_mode_transform(&r.h, &env_s).map_err(|e| stage(e.tagged("S+E")))?;

    write_transform(sink, "cm_transform.csv", &to_cm)?;
    write_transform(sink, "cm_normal_transform.csv", &to_normal)?;
    write_transform(sink, "s_normal_transform.csv", &s_normal)?;
    write_hamiltonian(sink, "cm_hamiltonian.csv", &h_cm)?;
    write_hamiltonian(sink, "cm_normal_hamiltonian.csv", &h_normal)?;
    write_hamiltonian(sink, "s_normal_hamiltonian.csv", &h_s_normal)?;

    let checks = [("cm_relative", &to_cm, &h_cm, None), ("cm_normal", &to_normal, &h_normal, Some(CM_LABEL)), (
        "s_normal",
        &s_normal,
        &h_s_normal,
        Some(SYSTEM_LABEL),
    )]
    .iter()
    .map(|(name, t, h, open)| {
        let cross = open.map(|o| env_cross_coupling(h, o)).transpose().map_err(&stage)?;
        Ok(vec![
            name.to_string(),
            num(symplectic_residual(&t.symplectic())),
            num(t.condition_number()),
            is_global(t).to_string(),
            opt(cross),
        ])
    })
    .collect::<Result<Vec<_>, RunError>>()?;
    sink.table(
        "transform_checks.csv",
        &["transform", "symplectic_residual", "condition_number", "global", "max_env_cross_coupling"],
        &checks,
    )?;

    let mut rows = Vec::new();
    constant_rows("scenario", &constant_report(&r.params, family).map_err(&stage)?, &mut rows);
    let mut rng = ChaCha8Rng::seed_from_u64(r.cfg.seed);
    for k in 0..r.cfg.random_sets {
        let p = ModelParams::TwoMode(random_two_mode(&mut rng));
        constant_rows(&format!("random_two_mode_{k}"), &constant_report(&p, family).map_err(&stage)?, &mut rows);
        for n in [2, 3, 5] {
            let harmonic = k % 2 == 0;
            let p = ModelParams::CaldeiraLeggett(random_caldeira_leggett(&mut rng, n, harmonic));
            let set = format!("random_cl_n{n}_{k}");
            constant_rows(&set, &constant_report(&p, family).map_err(&stage)?, &mut rows);
        }
    }
    sink.table("constants.csv", &["set", "name", "analytic", "matrix", "residual"], &rows)?;
    Ok(())
}

/// Largest environment–environment position or momentum cross term after a
/// normal-mode transform that kept `open` aside.
pub fn env_cross_coupling(h: &QuadraticHamiltonian, open: &str) -> Result<f64, Error> {
    let n = h.n_modes();
    let o = h.layout().index_of(open)?;
    let m = h.matrix();
    let mut worst: f64 = 0.0;
    for a in (0..n).filter(|&a| a != o) {
        for b in (0..n).filter(|&b| b != o && b != a) {
            worst = worst.max(m[(a, b)].abs()).max(m[(n + a, n + b)].abs());
        }
        for b in 0..n {
            worst = worst.max(m[(a, n + b)].abs());
        }
    }
    Ok(worst)
}

fn evolve(r: &Resolved, sink: &mut Sink, issues: &mut Vec<String>) -> Result<(), RunError> {
    let stage = at(Stage::Evolve);
    let alpha = CoherentAmplitude::new(SYSTEM_LABEL, r.cfg.initial.alpha.0, r.cfg.initial.alpha.1);
    let start = r.initial.displaced(&alpha).map_err(&stage)?;
    let p0 = start.purity().map_err(&stage)?;
    let e0 = r.h.expectation(&start);
    let labels = r.h.layout().labels().to_vec();
    let mut moments = Vec::new();
    let mut conservation = Vec::new();
    let (mut worst_purity, mut worst_energy): (f64, f64) = (0.0, 0.0);
    for &t in &r.times {
        let prop = propagator(&r.h, t).map_err(&stage)?;
        let s = prop.apply(&start).map_err(&stage)?;
        for l in &labels {
            let red = s.reduce(&[l.as_str()]).map_err(&stage)?;
            let (m, c) = (red.mean(), red.covariance());
            moments.push(vec![
                num(t),
                l.clone(),
                num(m[0]),
                num(m[1]),
                num(c[(0, 0)]),
                num(c[(1, 1)]),
                num(c[(0, 1)]),
                num(red.purity().map_err(&stage)?),
            ]);
        }
        let purity = s.purity().map_err(&stage)?;
        let energy = r.h.expectation(&s);
        worst_purity = worst_purity.max((purity / p0 - 1.0).abs());
        worst_energy = worst_energy.max((energy - e0).abs() / e0.abs().max(1.0));
        conservation.push(vec![num(t), num(purity), num(energy), num(prop.symplectic_residual())]);
    }
    sink.table("moments.csv", &["t", "mode", "mean_x", "mean_p", "var_x", "var_p", "cov_xp", "purity"], &moments)?;
    sink.table("conservation.csv", &["t", "purity", "energy", "symplectic_residual"], &conservation)?;
    if worst_purity > CONSERVATION_TOL {
        issues.push(format!("global purity drifted by {worst_purity:.3e} (relative)"));
    }
    if worst_energy > CONSERVATION_TOL {
        issues.push(format!("energy drifted by {worst_energy:.3e} (relative)"));
    }
    Ok(())
}

const DECOHERENCE_HEADER: &[&str] = &["t", "gamma", "lambda", "decomposition", "alpha", "beta", "saturated"];
const SUMMARY_HEADER: &[&str] = &[
    "decomposition",
    "open_mode",
    "open_mass",
    "open_frequency",
    "distance_sq",
    "threshold",
    "tau",
    "saturated_samples",
    "max_symplectic_residual",
    "fingerprint",
];

fn report_rows(rep: &DecoherenceReport, rows: &mut Vec<Vec<String>>) {
    let a = pair((rep.alpha.x0, rep.alpha.p0));
    let b = pair((rep.beta.x0, rep.beta.p0));
    for k in 0..rep.times.len() {
        rows.push(vec![
            num(rep.times[k]),
            num(rep.gamma[k]),
            num(rep.lambda[k]),
            rep.decomposition.tag().to_string(),
            a.clone(),
            b.clone(),
            rep.saturated[k].to_string(),
        ]);
    }
}

fn summary_row(rep: &DecoherenceReport) -> Vec<String> {
    vec![
        rep.decomposition.tag().to_string(),
        rep.open_mode.clone(),
        num(rep.open_scale.mass),
        num(rep.open_scale.frequency),
        num(rep.distance_sq),
        num(DECOHERENCE_THRESHOLD),
        opt(rep.tau),
        rep.saturated.iter().filter(|s| **s).count().to_string(),
        num(rep.max_symplectic_residual),
        rep.fingerprint.clone(),
    ]
}

fn write_reports(sink: &mut Sink, reports: &[&DecoherenceReport]) -> std::io::Result<()> {
    let mut rows = Vec::new();
    for rep in reports {
        report_rows(rep, &mut rows);
    }
    sink.table("decoherence.csv", DECOHERENCE_HEADER, &rows)?;
    let summary: Vec<Vec<String>> = reports.iter().map(|r| summary_row(r)).collect();
    sink.table("decoherence_summary.csv", SUMMARY_HEADER, &summary)
}

fn run_parallel(r: &Resolved, stage: Stage) -> Result<ParallelComparison, RunError> {
    let (_, h_cm) = r.to_cm().map_err(|e| at(stage)(e.tagged("CM+R")))?;
    let setup = r.parallel_setup(&h_cm).map_err(at(stage))?;
    parallel_compare(&setup).map_err(at(stage))
}

fn decohere(r: &Resolved, sink: &mut Sink) -> Result<(), RunError> {
    let structures = r.cfg.decomposition.structures;
    if structures.cm_relative() {
        let cmp = run_parallel(r, Stage::Decohere)?;
        let reports: Vec<&DecoherenceReport> = match structures {
            Structures::Both => vec![&cmp.system, &cmp.center_of_mass],
            _ => vec![&cmp.center_of_mass],
        };
        write_reports(sink, &reports)?;
    } else {
        let stage = at(Stage::Decohere);
        let ic = &r.cfg.initial;
        let rep = decoherence_report(
            Decomposition::SystemEnvironment,
            &r.h,
            &r.initial,
            &CoherentAmplitude::new(SYSTEM_LABEL, ic.alpha.0, ic.alpha.1),
            &CoherentAmplitude::new(SYSTEM_LABEL, ic.beta.0, ic.beta.1),
            r.system_scale().map_err(&stage)?,
            &r.times,
        )
        .map_err(|e| stage(e.tagged("S+E")))?;
        write_reports(sink, &[&rep])?;
    }
    Ok(())
}

/// Samples in the first tenth of the grid, the window over which both `Γ`
/// curves must fall strictly.
pub fn initial_decade(len: usize) -> usize {
    (len - 1) / 10 + 1
}

fn compare(r: &Resolved, sink: &mut Sink) -> Result<(), RunError> {
    let cmp = run_parallel(r, Stage::Compare)?;
    write_reports(sink, &[&cmp.system, &cmp.center_of_mass])?;
    let decade = initial_decade(r.times.len());
    let row = vec![
        opt(cmp.system.tau),
        opt(cmp.center_of_mass.tau),
        opt(cmp.tau_ratio),
        cmp.flag().to_string(),
        num(cmp.frame_residual),
        decade.to_string(),
        cmp.system.strictly_decreasing_over(decade).to_string(),
        cmp.center_of_mass.strictly_decreasing_over(decade).to_string(),
        num(symplectic_residual(&cmp.transform.symplectic())),
    ];
    sink.table(
        "comparison.csv",
        &[
            "tau_s",
            "tau_cm",
            "tau_ratio",
            "flag",
            "frame_residual",
            "initial_samples",
            "s_strictly_decreasing",
            "cm_strictly_decreasing",
            "transform_symplectic_residual",
        ],
        &[row],
    )?;
    Ok(())
}

fn crosscheck(r: &Resolved, sink: &mut Sink, issues: &mut Vec<String>) -> Result<(), RunError> {
    let stage = at(Stage::Oracle);
    let ModelConfig::TwoMode(params) = r.cfg.model else {
        return Err(RunError::Invalid("the Fock-space crosscheck needs model.kind = two_mode".into()));
    };
    let o = &r.cfg.oracle;
    let scn = CrosscheckScenario {
        params,
        system_frequency: r.cfg.initial.system_frequency,
        system_basis_frequency: o.system_basis_frequency,
        env_temperature: r.cfg.initial.env_temperature,
        alpha: r.cfg.initial.alpha,
        beta: r.cfg.initial.beta,
        cutoff: o.cutoff,
        times: r.times.clone(),
        negativity: o.negativity.then_some(ProjectionGrid { points: o.negativity_points, cutoff: o.negativity_cutoff }),
    };
    let rep = gaussian_crosscheck(&scn).map_err(stage)?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|row| {
            vec![
                num(row.time),
                num(row.mean_dev),
                num(row.cov_dev),
                num(row.purity_dev),
                num(row.overlap_gaussian),
                num(row.overlap_oracle),
                num((row.overlap_gaussian - row.overlap_oracle).abs()),
                opt(row.log_neg_gaussian),
                opt(row.log_neg_oracle),
                num(row.leakage),
                (row.leakage < pardec_core::fock::LEAKAGE_THRESHOLD).to_string(),
            ]
        })
        .collect();
    sink.table(
        "oracle_deviation.csv",
        &[
            "t",
            "mean_dev",
            "cov_dev",
            "purity_dev",
            "overlap_gaussian",
            "overlap_oracle",
            "overlap_dev",
            "log_neg_gaussian",
            "log_neg_oracle",
            "leakage",
            "trusted",
        ],
        &rows,
    )?;
    sink.table(
        "oracle_summary.csv",
        &[
            "cutoff",
            "max_mean_dev",
            "max_cov_dev",
            "max_purity_dev",
            "max_overlap_dev",
            "max_log_neg_dev",
            "max_leakage",
            "env_truncation",
            "coherent_truncation",
            "trusted",
        ],
        &[vec![
            o.cutoff.to_string(),
            num(rep.max_mean_dev),
            num(rep.max_cov_dev),
            num(rep.max_purity_dev),
            num(rep.max_overlap_dev),
            opt(rep.max_log_neg_dev),
            num(rep.max_leakage),
            num(rep.env_truncation),
            num(rep.coherent_truncation),
            rep.trusted.to_string(),
        ]],
    )?;
    if !rep.trusted {
        issues.push(format!(
            "oracle leakage {:.3e} exceeds {:.0e} at cutoff {}",
            rep.max_leakage,
            pardec_core::fock::LEAKAGE_THRESHOLD,
            o.cutoff
        ));
    }
    Ok(())
}

/// Least-squares slope through the origin of `−ln V(t)`.
pub fn fitted_decay_rate(times: &[f64], visibility: &[f64]) -> f64 {
    let (num_, den) = times
        .iter()
        .zip(visibility)
        .fold((0.0, 0.0), |(n, d), (t, v)| (n + t * (-v.ln()), d + t * t));
    if den > 0.0 {
        num_ / den
    } else {
        0.0
    }
}

fn master_eq(r: &Resolved, sink: &mut Sink, issues: &mut Vec<String>) -> Result<(), RunError> {
    let stage = at(Stage::MasterEq);
    let m = &r.cfg.master;
    let basis = ModeScale::new(m.mass, m.omega).map_err(&stage)?;
    let hamiltonian = match m.hamiltonian {
        MasterHamiltonian::Zero => SystemHamiltonian::Zero,
        MasterHamiltonian::Free => SystemHamiltonian::Free { mass: m.mass },
        MasterHamiltonian::Harmonic => SystemHamiltonian::Harmonic { scale: basis },
    };
    let times: Vec<f64> = (0..=m.steps).map(|k| m.stop * k as f64 / m.steps as f64).collect();
    let scn = MasterEqScenario { hamiltonian, lambda: m.lambda, cutoff: m.cutoff, basis, step: m.step, times: times.clone() };
    let rho0 = cat_state(m.cutoff, basis, m.x0).map_err(&stage)?;
    let run = evolve_master(&rho0, &scn).map_err(&stage)?;
    let pair = PatchPair { a: PhasePatch { x: m.x0, p: 0.0 }, b: PhasePatch { x: -m.x0, p: 0.0 } };
    let vis = coherence_profile(&run, &hamiltonian, pair, true).map_err(&stage)?;
    let rows: Vec<Vec<String>> = run
        .samples
        .iter()
        .zip(&vis)
        .map(|(s, v)| {
            vec![
                num(s.time),
                num(*v),
                num(s.trace_error),
                num(s.hermiticity),
                num(s.min_eigenvalue),
                s.positivity_flag.to_string(),
            ]
        })
        .collect();
    sink.table(
        "visibility.csv",
        &["t", "visibility", "trace_error", "hermiticity", "min_eigenvalue", "positivity_flag"],
        &rows,
    )?;
    let predicted = 4.0 * m.lambda * m.x0 * m.x0;
    sink.table(
        "master_summary.csv",
        &["lambda", "x0", "predicted_rate", "fitted_rate", "step", "halvings", "max_trace_error"],
        &[vec![
            num(m.lambda),
            num(m.x0),
            num(predicted),
            num(fitted_decay_rate(&times, &vis)),
            num(run.step),
            run.halvings.to_string(),
            num(run.max_trace_error()),
        ]],
    )?;
    if run.positivity_flagged() {
        issues.push("master-equation state lost positivity".into());
    }
    Ok(())
}
