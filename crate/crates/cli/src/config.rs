//! Run configuration: a flat `key = value` file with `[model]`, `[solver]`,
//! `[output]` and `[sweep]` sections, overridden by command-line flags.
//!
//! ```text
//! # two cells aiming at |5>|5>
//! [model]
//! targets = 5, 5
//! theta   = 0.9
//! gamma   = 1e-6          # both cells; `1e-6, 2e-6` sets them separately
//!
//! [sweep]
//! target_list = 1,1; 5,5
//! ```
//!
//! Keys are unique across sections, so the section header is optional; a
//! key placed under the wrong header is an error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use phonon_forge::dynamics::SteadyOptions;
use phonon_forge::experiments::{gamma_over_kappa_grid, theta_grid, FIG4_T_FINAL};
use phonon_forge::measures::LogBase;
use phonon_forge::model::{ModelInputs, Scenario};
use serde::Serialize;
use serde_json::{json, Value};

pub const THREADS_ENV: &str = "PHONON_FORGE_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Section {
    Model,
    Solver,
    Output,
    Sweep,
}

impl Section {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "model" => Some(Self::Model),
            "solver" => Some(Self::Solver),
            "output" => Some(Self::Output),
            "sweep" => Some(Self::Sweep),
            _ => None,
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Model => "model",
            Self::Solver => "solver",
            Self::Output => "output",
            Self::Sweep => "sweep",
        })
    }
}

/// `(section, key, expected type)`; the type string is shown in errors.
pub const KEYS: &[(Section, &str, &str)] = &[
    (Section::Model, "theta", "real"),
    (Section::Model, "targets", "pair of non-negative integers"),
    (Section::Model, "chi_bar", "positive real"),
    (Section::Model, "kappa", "real or pair of reals"),
    (Section::Model, "gamma", "real or pair of reals"),
    (Section::Model, "nbar", "real or pair of reals"),
    (Section::Model, "scenario", "IR or SR"),
    (Section::Model, "d_m", "positive integer"),
    (Section::Model, "d_c", "positive integer"),
    (Section::Model, "eta_free", "positive real"),
    (Section::Model, "omega_drive", "real or pair of reals"),
    (Section::Solver, "tol", "positive real"),
    (Section::Solver, "first_checkpoint", "positive real"),
    (Section::Solver, "max_time", "positive real"),
    (Section::Solver, "atol", "positive real"),
    (Section::Solver, "rtol", "positive real"),
    (Section::Solver, "max_steps", "positive integer"),
    (Section::Solver, "t_final", "positive real"),
    (Section::Solver, "dt_out", "positive real"),
    (Section::Solver, "threads", "positive integer"),
    (Section::Solver, "seed", "integer"),
    (Section::Output, "output_dir", "path"),
    (Section::Output, "log_base", "natural or 2"),
    (Section::Output, "audit", "true or false"),
    (Section::Sweep, "preset", "fig2a, fig2b, fig3, fig4, fig5 or fig6"),
    (Section::Sweep, "m_max", "positive integer"),
    (Section::Sweep, "large", "true or false"),
    (Section::Sweep, "thetas", "comma-separated reals"),
    (Section::Sweep, "target_list", "`;`-separated integer pairs"),
    (Section::Sweep, "gamma_over_kappa", "comma-separated reals"),
    (Section::Sweep, "thermal_nbar", "non-negative real"),
    (Section::Sweep, "n_samples", "positive integer"),
];

#[derive(Debug)]
pub enum ConfigError {
    Syntax { line: usize, message: String },
    UnknownKey { key: String, suggestion: Option<String> },
    WrongSection { key: String, found: Section, expected: Section },
    Type { key: String, value: String, expected: &'static str },
    Duplicate { key: String, line: usize },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Syntax { line, message } => write!(f, "line {line}: {message}"),
            Self::UnknownKey { key, suggestion: Some(s) } => {
                write!(f, "unknown key `{key}`; did you mean `{s}`?")
            }
            Self::UnknownKey { key, suggestion: None } => write!(f, "unknown key `{key}`"),
            Self::WrongSection { key, found, expected } => {
                write!(f, "key `{key}` belongs in [{expected}], not [{found}]")
            }
            Self::Type { key, value, expected } => {
                write!(f, "`{key} = {value}`: expected {expected}")
            }
            Self::Duplicate { key, line } => write!(f, "line {line}: `{key}` set twice"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn lookup(key: &str) -> Result<(Section, &'static str), ConfigError> {
    if let Some(&(section, _, ty)) = KEYS.iter().find(|(_, k, _)| *k == key) {
        return Ok((section, ty));
    }
    let suggestion = KEYS
        .iter()
        .map(|(_, k, _)| (strsim::levenshtein(key, k), *k))
        .min()
        .filter(|(d, k)| *d <= 2.max(k.len() / 3))
        .map(|(_, k)| k.to_string());
    Err(ConfigError::UnknownKey {
        key: key.to_string(),
        suggestion,
    })
}

/// Raw, validated-by-name assignments; later layers overwrite earlier ones.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<&'static str, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: line_no,
                    message: format!("unterminated section header `{line}`"),
                })?;
                section = Some(Section::parse(name.trim()).ok_or_else(|| ConfigError::Syntax {
                    line: line_no,
                    message: format!("unknown section [{}] (expected model, solver, output or sweep)", name.trim()),
                })?);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            let (home, _) = lookup(key)?;
            if let Some(found) = section {
                if found != home {
                    return Err(ConfigError::WrongSection {
                        key: key.to_string(),
                        found,
                        expected: home,
                    });
                }
            }
            let canonical = KEYS.iter().find(|(_, k, _)| *k == key).unwrap().1;
            if values.insert(canonical, value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line: line_no,
                });
            }
        }
        Ok(Self { values })
    }

    /// Sets `key` (from a flag), replacing any file value.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        lookup(key)?;
        let canonical = KEYS.iter().find(|(_, k, _)| *k == key).unwrap().1;
        self.values.insert(canonical, value.into());
        Ok(())
    }

    /// `key=value` as given to `--set`.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            message: format!("--set expects key=value, found `{assignment}`"),
        })?;
        self.set(k.trim(), v.trim())
    }

    fn typed<T>(&self, key: &'static str, parse: impl FnOnce(&str) -> Option<T>) -> Result<Option<T>, ConfigError> {
        let Some(raw) = self.values.get(key) else {
            return Ok(None);
        };
        let (_, expected) = lookup(key)?;
        parse(raw).map(Some).ok_or_else(|| ConfigError::Type {
            key: key.to_string(),
            value: raw.clone(),
            expected,
        })
    }

    /// Resolves defaults and types. `env_threads` is the value of
    /// [`THREADS_ENV`], used only when no thread count was configured.
    pub fn resolve(&self, env_threads: Option<&str>) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let m = &mut cfg.model;
        if let Some(v) = self.typed("theta", real)? {
            m.theta = v;
        }
        if let Some(v) = self.typed("targets", int_pair)? {
            m.targets = v;
        }
        if let Some(v) = self.typed("chi_bar", positive)? {
            m.chi_bar = v;
        }
        if let Some(v) = self.typed("kappa", real_pair)? {
            m.kappa = v;
        }
        if let Some(v) = self.typed("gamma", real_pair)? {
            m.gamma = v;
        }
        if let Some(v) = self.typed("nbar", real_pair)? {
            m.nbar = v;
        }
        if let Some(v) = self.typed("scenario", |s| s.parse::<Scenario>().ok())? {
            m.scenario = v;
        }
        if let Some(v) = self.typed("d_m", positive_int)? {
            m.d_m = Some(v);
        }
        if let Some(v) = self.typed("d_c", positive_int)? {
            m.d_c = v;
        }
        if let Some(v) = self.typed("eta_free", positive)? {
            m.eta_free = v;
        }
        if let Some(v) = self.typed("omega_drive", real_pair)? {
            m.drive_override = Some(v);
        }

        let s = &mut cfg.solver;
        if let Some(v) = self.typed("tol", positive)? {
            s.tol = Some(v);
        }
        if let Some(v) = self.typed("first_checkpoint", positive)? {
            s.first_checkpoint = Some(v);
        }
        if let Some(v) = self.typed("max_time", positive)? {
            s.max_time = Some(v);
        }
        if let Some(v) = self.typed("atol", positive)? {
            s.atol = Some(v);
        }
        if let Some(v) = self.typed("rtol", positive)? {
            s.rtol = Some(v);
        }
        if let Some(v) = self.typed("max_steps", positive_int)? {
            s.max_steps = Some(v);
        }
        if let Some(v) = self.typed("t_final", positive)? {
            s.t_final = v;
        }
        if let Some(v) = self.typed("dt_out", positive)? {
            s.dt_out = v;
        }
        if let Some(v) = self.typed("seed", |x| x.parse::<i64>().ok())? {
            cfg.seed = v;
        }
        cfg.threads = match self.typed("threads", positive_int)? {
            Some(v) => Some(v),
            None => match env_threads.map(str::trim).filter(|s| !s.is_empty()) {
                Some(raw) => Some(positive_int(raw).ok_or_else(|| ConfigError::Type {
                    key: THREADS_ENV.to_string(),
                    value: raw.to_string(),
                    expected: "positive integer",
                })?),
                None => None,
            },
        };

        if let Some(v) = self.typed("output_dir", |x| Some(PathBuf::from(x)))? {
            cfg.output_dir = v;
        }
        if let Some(v) = self.typed("log_base", |x| match x {
            "natural" | "e" => Some(LogBase::Natural),
            "2" | "two" => Some(LogBase::Two),
            _ => None,
        })? {
            cfg.log_base = v;
        }
        if let Some(v) = self.typed("audit", boolean)? {
            cfg.audit = v;
        }

        let w = &mut cfg.sweep;
        if let Some(v) = self.typed("preset", |x| Preset::parse(x))? {
            w.preset = Some(v);
        }
        if let Some(v) = self.typed("large", boolean)? {
            w.large = v;
        }
        if let Some(v) = self.typed("m_max", positive_int)? {
            w.m_max = Some(v);
        }
        if let Some(v) = self.typed("thetas", real_list)? {
            w.thetas = v;
        }
        if let Some(v) = self.typed("target_list", pair_list)? {
            w.target_list = Some(v);
        }
        if let Some(v) = self.typed("gamma_over_kappa", real_list)? {
            w.gamma_over_kappa = Some(v);
        }
        if let Some(v) = self.typed("thermal_nbar", |x| real(x).filter(|v| *v >= 0.0))? {
            w.thermal_nbar = v;
        }
        if let Some(v) = self.typed("n_samples", positive_int)? {
            w.n_samples = v;
        }
        Ok(cfg)
    }
}

fn real(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn positive(s: &str) -> Option<f64> {
    real(s).filter(|v| *v > 0.0)
}

fn positive_int(s: &str) -> Option<usize> {
    s.trim().parse::<usize>().ok().filter(|v| *v > 0)
}

fn boolean(s: &str) -> Option<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn real_list(s: &str) -> Option<Vec<f64>> {
    let v: Option<Vec<f64>> = s.split(',').map(real).collect();
    v.filter(|v| !v.is_empty())
}

/// One value for both cells, or one per cell.
fn real_pair(s: &str) -> Option<[f64; 2]> {
    match real_list(s)?.as_slice() {
        [x] => Some([*x, *x]),
        [x, y] => Some([*x, *y]),
        _ => None,
    }
}

fn int_pair(s: &str) -> Option<[usize; 2]> {
    let v: Option<Vec<usize>> = s.split(',').map(|x| x.trim().parse().ok()).collect();
    match v?.as_slice() {
        [x] => Some([*x, *x]),
        [x, y] => Some([*x, *y]),
        _ => None,
    }
}

fn pair_list(s: &str) -> Option<Vec<[usize; 2]>> {
    let v: Option<Vec<[usize; 2]>> = s.split(';').map(int_pair).collect();
    v.filter(|v| !v.is_empty())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig2a,
    Fig2b,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "fig2a" => Some(Self::Fig2a),
            "fig2b" => Some(Self::Fig2b),
            "fig3" => Some(Self::Fig3),
            "fig4" => Some(Self::Fig4),
            "fig5" => Some(Self::Fig5),
            "fig6" => Some(Self::Fig6),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub first_checkpoint: Option<f64>,
    pub max_time: Option<f64>,
    pub atol: Option<f64>,
    pub rtol: Option<f64>,
    pub max_steps: Option<usize>,
    /// End time of `evolve`.
    pub t_final: f64,
    /// Output spacing of `evolve`.
    pub dt_out: f64,
}

impl SolverConfig {
    /// Steady-state options, or `None` when nothing was configured so that
    /// presets derive them from `kappa`.
    pub fn steady_options(&self, kappa: f64) -> Option<SteadyOptions> {
        if self.tol.is_none()
            && self.first_checkpoint.is_none()
            && self.max_time.is_none()
            && self.atol.is_none()
            && self.rtol.is_none()
            && self.max_steps.is_none()
        {
            return None;
        }
        let mut o = SteadyOptions::for_kappa(kappa);
        if let Some(v) = self.tol {
            o.tol = v;
        }
        if let Some(v) = self.first_checkpoint {
            o.first_checkpoint = v;
        }
        if let Some(v) = self.max_time {
            o.max_time = v;
        }
        if let Some(v) = self.atol {
            o.integrator.atol = v;
        }
        if let Some(v) = self.rtol {
            o.integrator.rtol = v;
        }
        if let Some(v) = self.max_steps {
            o.integrator.max_steps = v;
        }
        Some(o)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepConfig {
    pub preset: Option<Preset>,
    pub large: bool,
    /// `fig2a` grid edge; defaults to 5, or 8 with `large`.
    pub m_max: Option<usize>,
    pub thetas: Vec<f64>,
    pub target_list: Option<Vec<[usize; 2]>>,
    pub gamma_over_kappa: Option<Vec<f64>>,
    pub thermal_nbar: f64,
    pub n_samples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            preset: None,
            large: false,
            m_max: None,
            thetas: theta_grid(),
            target_list: None,
            gamma_over_kappa: None,
            thermal_nbar: 0.3,
            n_samples: 100,
        }
    }
}

impl SweepConfig {
    pub fn m_max(&self) -> usize {
        self.m_max.unwrap_or(if self.large { 8 } else { 5 })
    }

    /// Target pairs of the θ sweeps (Figs. 2b and 5).
    pub fn theta_targets(&self) -> Vec<[usize; 2]> {
        self.target_list.clone().unwrap_or_else(|| {
            let mut v = vec![[1, 1], [3, 3], [5, 5]];
            if self.large {
                v.push([8, 8]);
            }
            v
        })
    }

    /// Target pairs of the reservoir sweeps (Figs. 3 and 4).
    pub fn reservoir_targets(&self) -> Vec<[usize; 2]> {
        self.target_list.clone().unwrap_or_else(|| {
            if self.large {
                vec![[5, 5], [8, 8]]
            } else {
                vec![[5, 5]]
            }
        })
    }

    pub fn fig3_grid(&self) -> Vec<f64> {
        self.gamma_over_kappa.clone().unwrap_or_else(gamma_over_kappa_grid)
    }

    pub fn fig4_grid(&self) -> Vec<f64> {
        self.gamma_over_kappa.clone().unwrap_or_else(|| vec![1e-5, 1e-4, 1e-3])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub model: ModelInputs,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
    /// `None` leaves the choice to the thread pool.
    pub threads: Option<usize>,
    /// Reserved for stochastic methods; recorded but unused.
    pub seed: i64,
    #[serde(serialize_with = "log_base_name")]
    pub log_base: LogBase,
    pub audit: bool,
}

fn log_base_name<S: serde::Serializer>(b: &LogBase, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(match b {
        LogBase::Natural => "natural",
        LogBase::Two => "2",
    })
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelInputs::default(),
            solver: SolverConfig {
                t_final: FIG4_T_FINAL,
                dt_out: FIG4_T_FINAL / 100.0,
                ..Default::default()
            },
            sweep: SweepConfig::default(),
            output_dir: PathBuf::from("."),
            threads: None,
            seed: 0,
            log_base: LogBase::Natural,
            audit: true,
        }
    }
}

impl RunConfig {
    /// Snapshot stored in every sidecar.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or_else(|e| json!({ "unserializable": e.to_string() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RawConfig::parse("").unwrap().resolve(None).unwrap();
        assert_eq!(cfg.model, ModelInputs::default());
        assert_eq!(cfg.model.chi_bar, 1e-3);
        assert_eq!(cfg.model.kappa, [1e-3; 2]);
        assert_eq!(cfg.model.gamma, [0.0; 2]);
        assert_eq!(cfg.model.nbar, [0.0; 2]);
        assert_eq!(cfg.model.theta, std::f64::consts::FRAC_PI_4);
        assert_eq!(cfg.model.scenario, Scenario::Individual);
        assert_eq!(cfg.threads, None);
    }

    #[test]
    fn sections_comments_and_pairs() {
        let text = "# header\n[model]\ntargets = 5, 4  # trailing\ngamma = 1e-6, 2e-6\nscenario = SR\n\n[sweep]\ntarget_list = 1,1; 3,2\n";
        let cfg = RawConfig::parse(text).unwrap().resolve(None).unwrap();
        assert_eq!(cfg.model.targets, [5, 4]);
        assert_eq!(cfg.model.gamma, [1e-6, 2e-6]);
        assert_eq!(cfg.model.scenario, Scenario::Shared);
        assert_eq!(cfg.sweep.target_list, Some(vec![[1, 1], [3, 2]]));
    }

    #[test]
    fn flag_overrides_file() {
        let mut raw = RawConfig::parse("[model]\ntheta = 0.5\n").unwrap();
        raw.set("theta", "0.9").unwrap();
        assert_eq!(raw.resolve(None).unwrap().model.theta, 0.9);
    }

    #[test]
    fn misspelled_key_suggests_nearest() {
        let err = RawConfig::parse("gamm = 0.1").unwrap_err();
        match &err {
            ConfigError::UnknownKey { suggestion, .. } => assert_eq!(suggestion.as_deref(), Some("gamma")),
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("did you mean `gamma`"));
        assert!(matches!(
            RawConfig::parse("zzzzzzzz = 1").unwrap_err(),
            ConfigError::UnknownKey { suggestion: None, .. }
        ));
    }

    #[test]
    fn type_errors_name_the_expected_type() {
        let err = RawConfig::parse("d_m = many").unwrap().resolve(None).unwrap_err();
        assert!(err.to_string().contains("positive integer"), "{err}");
        assert!(RawConfig::parse("targets = 1,2,3").unwrap().resolve(None).is_err());
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            RawConfig::parse("[solver]\ntheta = 1").unwrap_err(),
            ConfigError::WrongSection { .. }
        ));
        assert!(matches!(RawConfig::parse("[physics]").unwrap_err(), ConfigError::Syntax { .. }));
        assert!(matches!(RawConfig::parse("theta 1").unwrap_err(), ConfigError::Syntax { .. }));
        assert!(matches!(
            RawConfig::parse("theta = 1\ntheta = 2").unwrap_err(),
            ConfigError::Duplicate { line: 2, .. }
        ));
    }

    #[test]
    fn thread_env_is_a_fallback() {
        let raw = RawConfig::parse("").unwrap();
        assert_eq!(raw.resolve(Some("3")).unwrap().threads, Some(3));
        let raw = RawConfig::parse("threads = 2").unwrap();
        assert_eq!(raw.resolve(Some("3")).unwrap().threads, Some(2));
        assert!(RawConfig::parse("").unwrap().resolve(Some("0")).is_err());
    }
}
