mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phonon_forge::experiments::{
    evolve_mechanical, first_mode_wln, measure, mechanical_steady_state, run_fig2a, run_fig2b, run_fig3, run_fig4,
    run_fig5, run_fig6, Cell, ResultTable, SweepOptions,
};
use phonon_forge::model::{calibrate, calibrate_unchecked, ModelParams};
use phonon_forge::validate::run_fixtures;
use serde_json::{json, Value};

use config::{ConfigError, Preset, RawConfig, RunConfig, THREADS_ENV};

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_FAILED_CHECKS: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_IO: u8 = 4;

/// Steady states, trajectories and figure sweeps for two-membrane phonon
/// Fock-state engineering. All quantities are in units of the mechanical
/// frequency.
#[derive(Parser, Debug)]
#[command(name = "phonon-forge", version)]
struct Cli {
    /// Configuration file (`key = value` lines in [model], [solver],
    /// [output] and [sweep] sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    output_dir: Option<String>,
    /// Worker threads (falls back to PHONON_FORGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    theta: Option<String>,
    /// Target Fock numbers, `M1,M2` (or one value for both).
    #[arg(long, global = true)]
    targets: Option<String>,
    /// IR (individual reservoirs) or SR (shared reservoir).
    #[arg(long, global = true)]
    scenario: Option<String>,
    #[arg(long, global = true)]
    chi_bar: Option<String>,
    #[arg(long, global = true)]
    kappa: Option<String>,
    #[arg(long, global = true)]
    gamma: Option<String>,
    #[arg(long, global = true)]
    nbar: Option<String>,
    #[arg(long, global = true)]
    d_m: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mechanical steady state from the vacuum and its measures.
    Steady,
    /// Negativity and purity trajectories from the vacuum (individual reservoirs).
    Evolve {
        #[arg(long)]
        t_final: Option<String>,
        #[arg(long)]
        dt_out: Option<String>,
    },
    /// Run a figure preset and write `<preset>.csv` plus a JSON sidecar.
    Sweep {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        m_max: Option<String>,
        /// Full-size grids (M up to 8).
        #[arg(long)]
        large: bool,
    },
    /// Print the calibrated couplings, drives, detunings and regime checks.
    Calibrate,
    /// Run the built-in oracle fixtures.
    Validate,
}

/// A failure with its exit code, reported as JSON on stderr.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    details: Value,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
            details: Value::Null,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, "config", e.to_string())
    }
}

impl From<phonon_forge::Error> for Failure {
    fn from(e: phonon_forge::Error) -> Self {
        use phonon_forge::Error as E;
        let (code, kind) = match &e {
            E::Io(_) => (EXIT_IO, "io"),
            E::Stiffness { .. } | E::NonConvergence { .. } | E::Linalg(_) | E::GridTooSmall { .. } => {
                (EXIT_SOLVER, "solver")
            }
            E::Calibration(_) | E::NegativeRate { .. } | E::NoRoot => (EXIT_CONFIG, "calibration"),
            _ => (EXIT_CONFIG, "invalid-input"),
        };
        Failure::new(code, kind, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let report = json!({
                "error": { "kind": f.kind, "message": f.message, "exit_code": f.code, "details": f.details }
            });
            eprintln!("{report}");
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut raw = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::new(EXIT_IO, "io", format!("{}: {e}", path.display())))?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    for a in &cli.set {
        raw.set_assignment(a)?;
    }
    let flags = [
        ("output_dir", &cli.output_dir),
        ("threads", &cli.threads),
        ("theta", &cli.theta),
        ("targets", &cli.targets),
        ("scenario", &cli.scenario),
        ("chi_bar", &cli.chi_bar),
        ("kappa", &cli.kappa),
        ("gamma", &cli.gamma),
        ("nbar", &cli.nbar),
        ("d_m", &cli.d_m),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            raw.set(key, v.as_str())?;
        }
    }
    match &cli.command {
        Command::Evolve { t_final, dt_out } => {
            if let Some(v) = t_final {
                raw.set("t_final", v.as_str())?;
            }
            if let Some(v) = dt_out {
                raw.set("dt_out", v.as_str())?;
            }
        }
        Command::Sweep { preset, m_max, large } => {
            if let Some(v) = preset {
                raw.set("preset", v.as_str())?;
            }
            if let Some(v) = m_max {
                raw.set("m_max", v.as_str())?;
            }
            if *large {
                raw.set("large", "true")?;
            }
        }
        _ => {}
    }
    let env = std::env::var(THREADS_ENV).ok();
    Ok(raw.resolve(env.as_deref())?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Steady => steady(&cfg),
        Command::Evolve { .. } => evolve(&cfg),
        Command::Sweep { .. } => sweep(&cfg),
        Command::Calibrate => calibrate_report(&cfg),
        Command::Validate => validate(),
    }
}

fn sweep_options(cfg: &RunConfig) -> SweepOptions {
    SweepOptions {
        base: cfg.model.clone(),
        threads: cfg.threads,
        audit: cfg.audit,
        log_base: cfg.log_base,
        steady: cfg.solver.steady_options(cfg.model.kappa[0].max(cfg.model.kappa[1])),
    }
}

/// Writes the table (the only place files are written) and prints a summary.
fn emit(cfg: &RunConfig, mut table: ResultTable, summary: Value) -> Result<(), Failure> {
    table.meta.insert("config".into(), cfg.to_json());
    let (csv, side) = table.write_to_dir(&cfg.output_dir)?;
    let failed = failed_rows(&table);
    say!(
        "{}",
        json!({
            "preset": table.preset,
            "csv": csv,
            "sidecar": side,
            "rows": table.rows.len(),
            "failed_rows": failed.len(),
            "summary": summary,
        })
    );
    if failed.is_empty() {
        Ok(())
    } else {
        let mut f = Failure::new(
            EXIT_SOLVER,
            "solver",
            format!("{} of {} rows failed; see the status column", failed.len(), table.rows.len()),
        );
        f.details = json!(failed);
        Err(f)
    }
}

fn failed_rows(table: &ResultTable) -> Vec<Value> {
    let Ok(k) = table.column("status") else {
        return Vec::new();
    };
    table
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match r[k].as_str() {
            Some(s) if s.starts_with("error") => Some(json!({ "row": i, "status": s })),
            _ => None,
        })
        .collect()
}

fn steady(cfg: &RunConfig) -> Result<(), Failure> {
    let params = calibrate(&cfg.model)?;
    let opts = sweep_options(cfg);
    let steady_opts = opts
        .steady
        .unwrap_or_else(|| phonon_forge::dynamics::SteadyOptions::for_kappa(params.kappa[0].max(params.kappa[1])));
    let sol = mechanical_steady_state(&params, &steady_opts)?;
    let m = measure(&sol.mech, params.theta)?;
    let wln = first_mode_wln(&sol.mech, params.theta, cfg.log_base)?;
    let mut table = ResultTable::new(
        "steady",
        &[
            ("M1", "-"),
            ("M2", "-"),
            ("theta", "rad"),
            ("scenario", "-"),
            ("N_inf", "-"),
            ("P_inf", "-"),
            ("WLN", "-"),
            ("residual", "omega_m"),
            ("method", "-"),
        ],
    );
    let method = match sol.method {
        phonon_forge::dynamics::SteadyMethod::TimeMarching => "time-marching",
        phonon_forge::dynamics::SteadyMethod::Nullspace => "nullspace",
    };
    table.push(vec![
        params.targets[0].into(),
        params.targets[1].into(),
        params.theta.into(),
        params.scenario.to_string().into(),
        m.negativity.into(),
        m.purity.into(),
        wln.into(),
        sol.residual.into(),
        method.into(),
    ]);
    table.meta.insert("params".into(), json!(params));
    table.meta.insert("max_trace_error".into(), json!(sol.max_trace_error));
    table
        .meta
        .insert("max_hermiticity_defect".into(), json!(sol.max_hermiticity_defect));
    let summary = json!({ "N_inf": m.negativity, "P_inf": m.purity, "WLN": wln, "residual": sol.residual });
    emit(cfg, table, summary)
}

fn evolve(cfg: &RunConfig) -> Result<(), Failure> {
    let params = calibrate(&cfg.model)?;
    let traj = evolve_mechanical(&params, cfg.solver.t_final, cfg.solver.dt_out)?;
    let mut table = ResultTable::new("evolve", &[("t", "1/omega_m"), ("N_t", "-"), ("P_t", "-")]);
    for (t, rho) in traj.times.iter().zip(&traj.states) {
        let m = measure(rho, params.theta)?;
        table.push(vec![(*t).into(), m.negativity.into(), m.purity.into()]);
    }
    table.meta.insert("params".into(), json!(params));
    table.meta.insert("max_trace_error".into(), json!(traj.max_trace_error));
    table
        .meta
        .insert("max_hermiticity_defect".into(), json!(traj.max_hermiticity_defect));
    table.meta.insert("final_residual".into(), json!(traj.final_residual));
    let summary = json!({ "samples": traj.times.len(), "final_residual": traj.final_residual });
    emit(cfg, table, summary)
}

/// Runs a single-target preset for each target and stacks the tables behind
/// `M1, M2` columns.
fn per_target(
    preset: &str,
    targets: &[[usize; 2]],
    mut run: impl FnMut([usize; 2]) -> phonon_forge::Result<ResultTable>,
) -> Result<ResultTable, Failure> {
    let mut out: Option<ResultTable> = None;
    let mut runs = Vec::new();
    for &target in targets {
        let t = run(target)?;
        let merged = out.get_or_insert_with(|| {
            let mut cols: Vec<(String, String)> = vec![("M1".into(), "-".into()), ("M2".into(), "-".into())];
            cols.extend(t.columns.iter().map(|c| (c.name.clone(), c.unit.clone())));
            let refs: Vec<(&str, &str)> = cols.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            ResultTable::new(preset, &refs)
        });
        for row in &t.rows {
            let mut r: Vec<Cell> = vec![target[0].into(), target[1].into()];
            r.extend(row.iter().cloned());
            merged.push(r);
        }
        runs.push(json!({ "target": target, "meta": t.meta }));
    }
    let mut table = out.ok_or_else(|| Failure::new(EXIT_CONFIG, "config", "no targets given"))?;
    let worst = |key: &str| {
        runs.iter()
            .filter_map(|r| r["meta"][key].as_f64())
            .fold(0.0, f64::max)
    };
    table.meta.insert("max_trace_error".into(), json!(worst("max_trace_error")));
    table
        .meta
        .insert("max_hermiticity_defect".into(), json!(worst("max_hermiticity_defect")));
    table.meta.insert("runs".into(), json!(runs));
    Ok(table)
}

fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let preset = cfg.sweep.preset.ok_or_else(|| {
        Failure::new(
            EXIT_CONFIG,
            "config",
            "sweep needs a preset (--preset fig2a|fig2b|fig3|fig4|fig5|fig6)",
        )
    })?;
    let opts = sweep_options(cfg);
    let s = &cfg.sweep;
    let table = match preset {
        Preset::Fig2a => run_fig2a(s.m_max(), cfg.model.theta, &opts)?,
        Preset::Fig2b => run_fig2b(&s.theta_targets(), &s.thetas, &opts)?,
        Preset::Fig3 => per_target("fig3", &s.reservoir_targets(), |t| run_fig3(t, &s.fig3_grid(), &opts))?,
        Preset::Fig4 => per_target("fig4", &s.reservoir_targets(), |t| {
            run_fig4(t, s.thermal_nbar, &s.fig4_grid(), cfg.solver.t_final, s.n_samples, &opts)
        })?,
        Preset::Fig5 => run_fig5(&s.theta_targets(), &s.thetas, &opts)?,
        Preset::Fig6 => run_fig6(s.m_max.unwrap_or(10))?,
    };
    let summary = json!({ "max_trace_error": table.meta.get("max_trace_error") });
    emit(cfg, table, summary)
}

fn params_report(p: &ModelParams) -> Value {
    json!({
        "targets": p.targets,
        "eta": p.eta,
        "omega_drive": p.omega_drive,
        "delta": p.delta,
        "g": [p.g(0), p.g(1)],
        "chi_bar": p.chi_bar,
        "d_m": p.d_m,
        "scenario": p.scenario.to_string(),
        "checks": p.checks(),
    })
}

fn calibrate_report(cfg: &RunConfig) -> Result<(), Failure> {
    let params = calibrate_unchecked(&cfg.model)?;
    let report = params_report(&params);
    say!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    let failed: Vec<String> = params.checks().into_iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_CONFIG,
            "calibration",
            format!("regime checks failed: {}", failed.join(", ")),
        ))
    }
}

fn validate() -> Result<(), Failure> {
    let fixtures = run_fixtures()?;
    let mut failed = 0;
    for f in &fixtures {
        say!(
            "{} {:<28} value {:.10e} expected {:.10e} tolerance {:.1e}",
            if f.passed { "PASS" } else { "FAIL" },
            f.name,
            f.value,
            f.expected,
            f.tolerance
        );
        failed += usize::from(!f.passed);
    }
    say!("{} of {} fixtures passed", fixtures.len() - failed, fixtures.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_FAILED_CHECKS,
            "validation",
            format!("{failed} fixtures failed"),
        ))
    }
}
