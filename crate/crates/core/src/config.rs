//! Scenario files: flat `section.key = value` lines, `#` comments.
//!
//! Parsing reports every problem at once. Keys that are unknown, or that do not
//! apply to the chosen variant (bath keys on a two-mode model, say), are errors.
//! [`ScenarioConfig::manifest`] writes the fully resolved configuration in a
//! canonical order and parses back to an equal value.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use sha2::{Digest, Sha256};

use crate::decomposition::{closed_frequencies_sq, WeightFamily};
use crate::models::{
    discretize_ohmic_bath, BathOscillator, BathParams, CaldeiraLeggettParams, CouplingSign, SystemPotential,
    TwoModeParams,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: `{k}`: {}", self.message),
            (None, Some(k)) => write!(f, "`{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

/// All problems found in one scenario file.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} configuration error(s):\n{}", .0.len(), .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
pub struct ConfigErrors(pub Vec<ConfigError>);

#[derive(Debug, Clone, PartialEq)]
pub enum BathConfig {
    Ohmic { n: usize, omega_cutoff: f64, eta: f64, sign: CouplingSign },
    Explicit(BathParams),
}

impl BathConfig {
    pub fn resolve(&self) -> crate::Result<BathParams> {
        match self {
            BathConfig::Ohmic { n, omega_cutoff, eta, sign } => discretize_ohmic_bath(*n, *omega_cutoff, *eta, *sign),
            BathConfig::Explicit(b) => Ok(b.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    TwoMode(TwoModeParams),
    CaldeiraLeggett { m_s: f64, potential: SystemPotential, bath: BathConfig },
}

impl ModelConfig {
    pub fn caldeira_leggett(&self) -> crate::Result<Option<CaldeiraLeggettParams>> {
        match self {
            ModelConfig::TwoMode(_) => Ok(None),
            ModelConfig::CaldeiraLeggett { m_s, potential, bath } => {
                Ok(Some(CaldeiraLeggettParams { m_s: *m_s, potential: *potential, bath: bath.resolve()? }))
            }
        }
    }
}

/// CM branch amplitudes: explicit, or the S amplitudes carried over at equal
/// vacuum-scaled displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CmAmplitudes {
    Matched,
    Explicit { alpha: (f64, f64), beta: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConfig {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub cm: CmAmplitudes,
    pub env_temperature: f64,
    /// Width of the open system's initial state, and its vacuum scale when it has
    /// no confinement of its own.
    pub system_frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structures {
    Original,
    CmRelative,
    Both,
}

impl Structures {
    pub fn name(self) -> &'static str {
        match self {
            Structures::Original => "original",
            Structures::CmRelative => "cm_relative",
            Structures::Both => "both",
        }
    }

    pub fn original(self) -> bool {
        self != Structures::CmRelative
    }

    pub fn cm_relative(self) -> bool {
        self != Structures::Original
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionConfig {
    pub structures: Structures,
    pub family: WeightFamily,
    pub allow_positivity_violation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimeGrid {
    Uniform { start: f64, stop: f64, steps: usize },
    Explicit(Vec<f64>),
}

impl TimeGrid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            TimeGrid::Uniform { start, stop, steps } => {
                (0..=*steps).map(|k| start + (stop - start) * k as f64 / *steps as f64).collect()
            }
            TimeGrid::Explicit(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub cutoff: usize,
    pub system_basis_frequency: f64,
    pub negativity: bool,
    pub negativity_cutoff: usize,
    pub negativity_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MasterHamiltonian {
    Zero,
    Free,
    Harmonic,
}

impl MasterHamiltonian {
    pub fn name(self) -> &'static str {
        match self {
            MasterHamiltonian::Zero => "zero",
            MasterHamiltonian::Free => "free",
            MasterHamiltonian::Harmonic => "harmonic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterConfig {
    pub hamiltonian: MasterHamiltonian,
    pub mass: f64,
    pub omega: f64,
    pub lambda: f64,
    pub cutoff: usize,
    pub step: f64,
    pub x0: f64,
    pub stop: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub initial: InitialConfig,
    pub decomposition: DecompositionConfig,
    pub time: TimeGrid,
    pub output_dir: String,
    pub seed: u64,
    /// Random parameter sets checked against the analytic constants by `transform`.
    pub random_sets: usize,
    pub oracle: OracleConfig,
    pub master: MasterConfig,
}

/// Every key the format knows, in manifest order.
pub const KNOWN_KEYS: &[&str] = &[
    "model.kind",
    "model.m_s",
    "model.m_e",
    "model.omega",
    "model.coupling",
    "model.potential",
    "model.omega_s",
    "bath.kind",
    "bath.n",
    "bath.omega_cutoff",
    "bath.eta",
    "bath.sign",
    "bath.masses",
    "bath.frequencies",
    "bath.couplings",
    "initial.alpha",
    "initial.beta",
    "initial.cm_alpha",
    "initial.cm_beta",
    "initial.env_temperature",
    "initial.system_frequency",
    "decomposition.structures",
    "decomposition.family",
    "decomposition.allow_positivity_violation",
    "time.start",
    "time.stop",
    "time.steps",
    "time.grid",
    "output.dir",
    "run.seed",
    "transform.random_sets",
    "oracle.cutoff",
    "oracle.system_basis_frequency",
    "oracle.negativity",
    "oracle.negativity_cutoff",
    "oracle.negativity_points",
    "master.hamiltonian",
    "master.mass",
    "master.omega",
    "master.lambda",
    "master.cutoff",
    "master.step",
    "master.x0",
    "master.stop",
    "master.steps",
];

struct Entry {
    value: String,
    line: usize,
}

struct Reader {
    entries: BTreeMap<String, Entry>,
    errors: Vec<ConfigError>,
}

trait FromValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
}

impl FromValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("expected a number, got `{s}`"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("expected a finite number, got `{s}`"))
        }
    }
}

impl FromValue for usize {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
}

impl FromValue for u64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
}

impl FromValue for bool {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected `true` or `false`, got `{s}`")),
        }
    }
}

impl FromValue for String {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            Err("empty value".into())
        } else {
            Ok(s.to_string())
        }
    }
}

impl FromValue for (f64, f64) {
    fn parse_value(s: &str) -> Result<Self, String> {
        let parts = parse_list(s)?;
        match parts.as_slice() {
            [x, p] => Ok((*x, *p)),
            _ => Err(format!("expected `x0,p0`, got `{s}`")),
        }
    }
}

impl FromValue for Vec<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        parse_list(s)
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|p| f64::parse_value(p.trim())).collect()
}

impl Reader {
    fn new(text: &str) -> Self {
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                errors.push(ConfigError { line: Some(line), key: None, message: "expected `key = value`".into() });
                continue;
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KNOWN_KEYS.contains(&k.as_str()) {
                errors.push(ConfigError { line: Some(line), key: Some(k), message: "unknown key".into() });
                continue;
            }
            if let Some(prev) = entries.get(&k) {
                let prev: &Entry = prev;
                errors.push(ConfigError {
                    line: Some(line),
                    key: Some(k.clone()),
                    message: format!("duplicate key (first set on line {})", prev.line),
                });
                continue;
            }
            entries.insert(k, Entry { value: v, line });
        }
        Reader { entries, errors }
    }

    fn error(&mut self, key: &str, message: impl Into<String>) {
        let line = self.entries.get(key).map(|e| e.line);
        self.errors.push(ConfigError { line, key: Some(key.to_string()), message: message.into() });
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn get<T: FromValue>(&mut self, key: &str) -> Option<T> {
        let entry = self.entries.remove(key)?;
        match T::parse_value(&entry.value) {
            Ok(v) => Some(v),
            Err(m) => {
                self.errors.push(ConfigError { line: Some(entry.line), key: Some(key.to_string()), message: m });
                None
            }
        }
    }

    fn or<T: FromValue>(&mut self, key: &str, default: T) -> T {
        let present = self.has(key);
        match self.get(key) {
            Some(v) => v,
            None if present => default,
            None => default,
        }
    }

    fn required<T: FromValue>(&mut self, key: &str, fallback: T) -> T {
        if !self.has(key) {
            self.errors.push(ConfigError { line: None, key: Some(key.to_string()), message: "missing required key".into() });
            return fallback;
        }
        self.or(key, fallback)
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)], default: T) -> T {
        let Some(s) = self.get::<String>(key) else { return default };
        match options.iter().find(|(n, _)| *n == s) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.error(key, format!("expected one of {}, got `{s}`", names.join("|")));
                default
            }
        }
    }

    fn positive(&mut self, key: &str, v: f64) {
        if !(v > 0.0) {
            self.error(key, format!("must be positive, got {v}"));
        }
    }

    fn reject_section(&mut self, prefix: &str, why: &str) {
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        for k in keys {
            let line = self.entries.remove(&k).map(|e| e.line);
            self.errors.push(ConfigError { line, key: Some(k), message: why.to_string() });
        }
    }

    fn reject_keys(&mut self, keys: &[&str], why: &str) {
        for k in keys {
            if let Some(e) = self.entries.remove(*k) {
                self.errors.push(ConfigError { line: Some(e.line), key: Some(k.to_string()), message: why.to_string() });
            }
        }
    }
}

const SIGNS: &[(&str, CouplingSign)] = &[("minus", CouplingSign::Minus), ("plus", CouplingSign::Plus)];

fn parse_model(r: &mut Reader) -> ModelConfig {
    let kind = r.required::<String>("model.kind", "two_mode".into());
    match kind.as_str() {
        "two_mode" => {
            r.reject_keys(&["model.potential", "model.omega_s"], "not used by model.kind = two_mode");
            r.reject_section("bath.", "two_mode has a single environment oscillator; bath keys do not apply");
            let p = TwoModeParams {
                m_s: r.or("model.m_s", 1.0),
                m_e: r.or("model.m_e", 1.0),
                omega: r.or("model.omega", 1.0),
                coupling: r.required("model.coupling", 0.0),
            };
            if let Err(e) = p.validate() {
                let key = if matches!(e, crate::Error::Constraint(_)) { "model.coupling" } else { "model" };
                r.error(key, e.to_string());
            }
            ModelConfig::TwoMode(p)
        }
        "caldeira_leggett" => {
            r.reject_keys(&["model.m_e", "model.omega", "model.coupling"], "not used by model.kind = caldeira_leggett");
            let m_s = r.or("model.m_s", 1.0);
            r.positive("model.m_s", m_s);
            let potential = match r.choice("model.potential", &[("harmonic", true), ("free", false)], true) {
                true => {
                    let w = r.or("model.omega_s", 2.0);
                    r.positive("model.omega_s", w);
                    SystemPotential::Harmonic { omega_s: w }
                }
                false => {
                    r.reject_keys(&["model.omega_s"], "not used by model.potential = free");
                    SystemPotential::FreeParticle
                }
            };
            let bath = parse_bath(r);
            let model = ModelConfig::CaldeiraLeggett { m_s, potential, bath };
            if r.errors.is_empty() {
                let built = model.caldeira_leggett().and_then(|p| crate::models::build_caldeira_leggett(&p.expect("cl")));
                match built.and_then(|h| closed_frequencies_sq(&h)) {
                    Ok(w2) => {
                        // a free particle has a flat direction by construction; a harmonic one must stay bounded
                        if matches!(potential, SystemPotential::Harmonic { .. }) && w2[0] <= 0.0 {
                            r.error(
                                "model.omega_s",
                                format!("closed dynamics unbounded: lowest squared normal frequency {:.4e}; need m_S ω_S² above the bath reorganisation Σκ²/(mω²)", w2[0]),
                            );
                        }
                    }
                    Err(e) => r.error("model", e.to_string()),
                }
            }
            model
        }
        other => {
            r.error("model.kind", format!("expected two_mode|caldeira_leggett, got `{other}`"));
            ModelConfig::TwoMode(TwoModeParams { m_s: 1.0, m_e: 1.0, omega: 1.0, coupling: 0.0 })
        }
    }
}

fn parse_bath(r: &mut Reader) -> BathConfig {
    let explicit = r.choice("bath.kind", &[("ohmic", false), ("explicit", true)], false);
    let sign = r.choice("bath.sign", SIGNS, CouplingSign::Minus);
    if explicit {
        r.reject_keys(&["bath.n", "bath.omega_cutoff", "bath.eta"], "not used by bath.kind = explicit");
        let masses: Vec<f64> = r.required("bath.masses", Vec::new());
        let freqs: Vec<f64> = r.required("bath.frequencies", Vec::new());
        let couplings: Vec<f64> = r.required("bath.couplings", Vec::new());
        if masses.len() != freqs.len() || masses.len() != couplings.len() {
            r.error(
                "bath",
                format!(
                    "bath.masses, bath.frequencies and bath.couplings must have equal lengths ({}, {}, {})",
                    masses.len(),
                    freqs.len(),
                    couplings.len()
                ),
            );
        }
        let oscillators = masses
            .iter()
            .zip(&freqs)
            .zip(&couplings)
            .map(|((&mass, &frequency), &coupling)| BathOscillator { mass, frequency, coupling })
            .collect();
        let b = BathParams { oscillators, sign };
        if let Err(e) = b.validate() {
            r.error("bath", e.to_string());
        }
        BathConfig::Explicit(b)
    } else {
        r.reject_keys(&["bath.masses", "bath.frequencies", "bath.couplings"], "not used by bath.kind = ohmic");
        let n = r.or("bath.n", 32usize);
        let omega_cutoff = r.or("bath.omega_cutoff", 5.0);
        let eta = r.or("bath.eta", 0.1);
        if n == 0 {
            r.error("bath.n", "must be at least 1");
        }
        r.positive("bath.omega_cutoff", omega_cutoff);
        if eta < 0.0 {
            r.error("bath.eta", format!("must be non-negative, got {eta}"));
        }
        BathConfig::Ohmic { n, omega_cutoff, eta, sign }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigErrors> {
        let mut r = Reader::new(text);
        let model = parse_model(&mut r);

        let default_freq = match &model {
            ModelConfig::TwoMode(p) => p.omega,
            ModelConfig::CaldeiraLeggett { potential: SystemPotential::Harmonic { omega_s }, .. } => *omega_s,
            ModelConfig::CaldeiraLeggett { .. } => 1.0,
        };
        let alpha = r.or("initial.alpha", (1.0, 0.0));
        let beta = r.or("initial.beta", (-alpha.0, -alpha.1));
        let cm = match (r.has("initial.cm_alpha"), r.has("initial.cm_beta")) {
            (false, false) => CmAmplitudes::Matched,
            _ => {
                let cm_alpha = r.get::<String>("initial.cm_alpha");
                let cm_beta = r.get::<String>("initial.cm_beta");
                match (cm_alpha.as_deref(), cm_beta.as_deref()) {
                    (Some("matched"), Some("matched")) => CmAmplitudes::Matched,
                    (Some(a), Some(b)) => match (<(f64, f64)>::parse_value(a), <(f64, f64)>::parse_value(b)) {
                        (Ok(alpha), Ok(beta)) => CmAmplitudes::Explicit { alpha, beta },
                        (a, b) => {
                            for (key, res) in [("initial.cm_alpha", a), ("initial.cm_beta", b)] {
                                if let Err(m) = res {
                                    r.error(key, m);
                                }
                            }
                            CmAmplitudes::Matched
                        }
                    },
                    _ => {
                        r.error("initial.cm_alpha", "initial.cm_alpha and initial.cm_beta must be given together");
                        CmAmplitudes::Matched
                    }
                }
            }
        };
        let env_temperature = r.or("initial.env_temperature", 0.0);
        if env_temperature < 0.0 {
            r.error("initial.env_temperature", format!("must be non-negative, got {env_temperature}"));
        }
        let system_frequency = r.or("initial.system_frequency", default_freq);
        r.positive("initial.system_frequency", system_frequency);
        let initial = InitialConfig { alpha, beta, cm, env_temperature, system_frequency };

        let decomposition = DecompositionConfig {
            structures: r.choice(
                "decomposition.structures",
                &[("both", Structures::Both), ("original", Structures::Original), ("cm_relative", Structures::CmRelative)],
                Structures::Both,
            ),
            family: r.choice(
                "decomposition.family",
                &[("jacobi", WeightFamily::Jacobi), ("relative_to_first", WeightFamily::RelativeToFirst)],
                WeightFamily::Jacobi,
            ),
            allow_positivity_violation: r.or("decomposition.allow_positivity_violation", false),
        };

        let time = if r.has("time.grid") {
            r.reject_keys(&["time.start", "time.stop", "time.steps"], "conflicts with time.grid");
            let g: Vec<f64> = r.or("time.grid", vec![0.0]);
            if g.iter().any(|t| *t < 0.0) || g.windows(2).any(|w| w[1] < w[0]) {
                r.error("time.grid", "times must be non-negative and non-decreasing");
            }
            TimeGrid::Explicit(g)
        } else {
            let start = r.or("time.start", 0.0);
            let stop = r.or("time.stop", 1.0);
            let steps = r.or("time.steps", 10usize);
            if start < 0.0 || stop < start {
                r.error("time.stop", format!("need 0 ≤ time.start ≤ time.stop, got {start}..{stop}"));
            }
            if steps == 0 {
                r.error("time.steps", "must be at least 1");
            }
            TimeGrid::Uniform { start, stop, steps }
        };

        let output_dir = r.or("output.dir", "out".to_string());
        let seed = r.or("run.seed", 0u64);
        let random_sets = r.or("transform.random_sets", 0usize);

        let oracle = OracleConfig {
            cutoff: r.or("oracle.cutoff", 24usize),
            system_basis_frequency: r.or("oracle.system_basis_frequency", system_frequency),
            negativity: r.or("oracle.negativity", true),
            negativity_cutoff: r.or("oracle.negativity_cutoff", 20usize),
            negativity_points: r.or("oracle.negativity_points", 160usize),
        };
        if oracle.cutoff < 2 {
            r.error("oracle.cutoff", "must be at least 2");
        }
        r.positive("oracle.system_basis_frequency", oracle.system_basis_frequency);

        let master = MasterConfig {
            hamiltonian: r.choice(
                "master.hamiltonian",
                &[("harmonic", MasterHamiltonian::Harmonic), ("free", MasterHamiltonian::Free), ("zero", MasterHamiltonian::Zero)],
                MasterHamiltonian::Harmonic,
            ),
            mass: r.or("master.mass", 1.0),
            omega: r.or("master.omega", 1.0),
            lambda: r.or("master.lambda", 0.01),
            cutoff: r.or("master.cutoff", 40usize),
            step: r.or("master.step", 0.005),
            x0: r.or("master.x0", 3.0),
            stop: r.or("master.stop", 0.2),
            steps: r.or("master.steps", 10usize),
        };
        r.positive("master.mass", master.mass);
        r.positive("master.omega", master.omega);
        r.positive("master.step", master.step);
        if master.lambda < 0.0 {
            r.error("master.lambda", format!("must be non-negative, got {}", master.lambda));
        }
        if master.cutoff < 2 {
            r.error("master.cutoff", "must be at least 2");
        }
        if master.steps == 0 || master.stop < 0.0 {
            r.error("master.steps", "need master.steps ≥ 1 and master.stop ≥ 0");
        }

        // anything left was known but not consumed by the chosen variants
        let leftover: Vec<String> = r.entries.keys().cloned().collect();
        for k in leftover {
            let line = r.entries.remove(&k).map(|e| e.line);
            r.errors.push(ConfigError { line, key: Some(k), message: "does not apply to this scenario".into() });
        }
        if r.errors.is_empty() {
            Ok(ScenarioConfig { model, initial, decomposition, time, output_dir, seed, random_sets, oracle, master })
        } else {
            r.errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
            Err(ConfigErrors(r.errors))
        }
    }

    /// Canonical text of the resolved configuration.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let pair = |p: (f64, f64)| format!("{},{}", p.0, p.1);
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match &self.model {
            ModelConfig::TwoMode(p) => {
                kv("model.kind", "two_mode".into());
                kv("model.m_s", p.m_s.to_string());
                kv("model.m_e", p.m_e.to_string());
                kv("model.omega", p.omega.to_string());
                kv("model.coupling", p.coupling.to_string());
            }
            ModelConfig::CaldeiraLeggett { m_s, potential, bath } => {
                kv("model.kind", "caldeira_leggett".into());
                kv("model.m_s", m_s.to_string());
                match potential {
                    SystemPotential::Harmonic { omega_s } => {
                        kv("model.potential", "harmonic".into());
                        kv("model.omega_s", omega_s.to_string());
                    }
                    SystemPotential::FreeParticle => kv("model.potential", "free".into()),
                }
                match bath {
                    BathConfig::Ohmic { n, omega_cutoff, eta, sign } => {
                        kv("bath.kind", "ohmic".into());
                        kv("bath.n", n.to_string());
                        kv("bath.omega_cutoff", omega_cutoff.to_string());
                        kv("bath.eta", eta.to_string());
                        kv("bath.sign", sign.name().into());
                    }
                    BathConfig::Explicit(b) => {
                        kv("bath.kind", "explicit".into());
                        kv("bath.sign", b.sign.name().into());
                        let col = |f: fn(&BathOscillator) -> f64| b.oscillators.iter().map(f).collect::<Vec<_>>();
                        kv("bath.masses", list(&col(|o| o.mass)));
                        kv("bath.frequencies", list(&col(|o| o.frequency)));
                        kv("bath.couplings", list(&col(|o| o.coupling)));
                    }
                }
            }
        }
        let i = &self.initial;
        kv("initial.alpha", pair(i.alpha));
        kv("initial.beta", pair(i.beta));
        match i.cm {
            CmAmplitudes::Matched => {
                kv("initial.cm_alpha", "matched".into());
                kv("initial.cm_beta", "matched".into());
            }
            CmAmplitudes::Explicit { alpha, beta } => {
                kv("initial.cm_alpha", pair(alpha));
                kv("initial.cm_beta", pair(beta));
            }
        }
        kv("initial.env_temperature", i.env_temperature.to_string());
        kv("initial.system_frequency", i.system_frequency.to_string());
        let d = &self.decomposition;
        kv("decomposition.structures", d.structures.name().into());
        kv("decomposition.family", d.family.name().into());
        kv("decomposition.allow_positivity_violation", d.allow_positivity_violation.to_string());
        match &self.time {
            TimeGrid::Uniform { start, stop, steps } => {
                kv("time.start", start.to_string());
                kv("time.stop", stop.to_string());
                kv("time.steps", steps.to_string());
            }
            TimeGrid::Explicit(g) => kv("time.grid", list(g)),
        }
        kv("output.dir", self.output_dir.clone());
        kv("run.seed", self.seed.to_string());
        kv("transform.random_sets", self.random_sets.to_string());
        let o = &self.oracle;
        kv("oracle.cutoff", o.cutoff.to_string());
        kv("oracle.system_basis_frequency", o.system_basis_frequency.to_string());
        kv("oracle.negativity", o.negativity.to_string());
        kv("oracle.negativity_cutoff", o.negativity_cutoff.to_string());
        kv("oracle.negativity_points", o.negativity_points.to_string());
        let m = &self.master;
        kv("master.hamiltonian", m.hamiltonian.name().into());
        kv("master.mass", m.mass.to_string());
        kv("master.omega", m.omega.to_string());
        kv("master.lambda", m.lambda.to_string());
        kv("master.cutoff", m.cutoff.to_string());
        kv("master.step", m.step.to_string());
        kv("master.x0", m.x0.to_string());
        kv("master.stop", m.stop.to_string());
        kv("master.steps", m.steps.to_string());
        out
    }

    /// SHA-256 of [`ScenarioConfig::manifest`], hex encoded.
    pub fn manifest_hash(&self) -> String {
        Sha256::digest(self.manifest().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_two_mode_gets_defaults() {
        let c = ScenarioConfig::parse("model.kind = two_mode\nmodel.coupling = 0.25\n").unwrap();
        assert_eq!(c.model, ModelConfig::TwoMode(TwoModeParams { m_s: 1.0, m_e: 1.0, omega: 1.0, coupling: 0.25 }));
        assert_eq!(c.initial.alpha, (1.0, 0.0));
        assert_eq!(c.initial.beta, (-1.0, 0.0));
        assert_eq!(c.initial.cm, CmAmplitudes::Matched);
        assert_eq!(c.decomposition.structures, Structures::Both);
        assert_eq!(c.time.points().len(), 11);
        assert_eq!(c.oracle.cutoff, 24);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn confinement_violation_quotes_constraint() {
        let e = ScenarioConfig::parse("model.kind = two_mode\nmodel.coupling = 0.6\n").unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert!(e.0[0].message.contains("C < m_E ω²/2"), "{e}");
        assert_eq!(e.0[0].key.as_deref(), Some("model.coupling"));
    }

    #[test]
    fn collects_every_error() {
        let text = "model.kind = two_mode\nmodel.coupling = 0.1\nmodel.colour = red\nbath.n = 4\ntime.steps = x\nmaster.lambda = -1\nnonsense\n";
        let e = ScenarioConfig::parse(text).unwrap_err();
        let keys: Vec<Option<&str>> = e.0.iter().map(|x| x.key.as_deref()).collect();
        assert!(keys.contains(&Some("model.colour")));
        assert!(keys.contains(&Some("bath.n")));
        assert!(keys.contains(&Some("time.steps")));
        assert!(keys.contains(&Some("master.lambda")));
        assert!(e.0.iter().any(|x| x.line == Some(7) && x.key.is_none()));
        assert_eq!(e.0.len(), 5);
    }

    #[test]
    fn missing_and_duplicate_keys() {
        let e = ScenarioConfig::parse("model.kind = two_mode\n").unwrap_err();
        assert_eq!(e.0[0].message, "missing required key");
        let e = ScenarioConfig::parse("model.kind = two_mode\nmodel.coupling = 0.1\nmodel.coupling = 0.2\n").unwrap_err();
        assert!(e.0[0].message.contains("duplicate"));
    }

    #[test]
    fn manifest_round_trip() {
        let texts = [
            "model.kind = two_mode\nmodel.coupling = 0.25\nmodel.m_e = 3\ntime.grid = 0,0.5,1.25\n",
            "model.kind = caldeira_leggett\nbath.n = 8\ninitial.env_temperature = 10\ninitial.cm_alpha = 0.1,0\ninitial.cm_beta = -0.1,0\nrun.seed = 7\n",
            "model.kind = caldeira_leggett\nmodel.potential = free\nbath.kind = explicit\nbath.masses = 1,2\nbath.frequencies = 0.5,1.5\nbath.couplings = 0.1,0.2\nbath.sign = plus\n",
        ];
        for t in texts {
            let a = ScenarioConfig::parse(t).unwrap();
            let b = ScenarioConfig::parse(&a.manifest()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.manifest(), b.manifest());
            assert_eq!(a.manifest_hash(), b.manifest_hash());
        }
    }

    #[test]
    fn unstable_bath_rejected() {
        // κ² / (m ω²) summed over the bath exceeds m_S ω_S²
        let t = "model.kind = caldeira_leggett\nmodel.omega_s = 0.5\nbath.n = 16\nbath.eta = 1\n";
        let e = ScenarioConfig::parse(t).unwrap_err();
        assert_eq!(e.0.len(), 1);
    }

    #[test]
    fn comments_and_whitespace() {
        let c = ScenarioConfig::parse("# header\n\n  model.kind=two_mode   # trailing\nmodel.coupling= 0.1\n").unwrap();
        assert!(matches!(c.model, ModelConfig::TwoMode(_)));
    }
}
