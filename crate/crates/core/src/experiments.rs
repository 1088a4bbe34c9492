//! Parameter sweeps behind each figure, persisted as [`ResultTable`]s.
//!
//! With individual reservoirs the two cells never interact, so every preset
//! solves them separately and forms the mechanical state as a product of the
//! per-cell reduced states. The steady state does not depend on θ, which only
//! enters through the final rotation, so angle sweeps reuse one solve per target.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dynamics::{build_liouvillian, evolve, steady_state, SteadyMethod, SteadyOptions, MAX_LU_UNKNOWNS};
use crate::error::{Error, Result};
use crate::fock::{partial_trace, DensityMatrix};
use crate::laguerre::eta_for_target;
use crate::measures::{negativity, purity, rotate_to_uncoupled, wln_base, LogBase, WignerGrid, UNCOUPLED};
use crate::model::{
    build_dissipators, build_effective_hamiltonian, calibrate, initial_state, ModelInputs, ModelParams,
    Scenario,
};

/// `2^{ln 2} = e^{(ln 2)^2}`, the two-mode-squeezing stability bound on 𝒩.
pub fn tms_bound() -> f64 {
    std::f64::consts::LN_2.powi(2).exp()
}

/// Population on the top phonon level above which a row is re-run with a
/// larger truncation.
pub const AUDIT_THRESHOLD: f64 = 1e-6;
/// Extra phonon levels used by the audit.
pub const AUDIT_EXTRA_LEVELS: usize = 2;

/// One table cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) if f.is_nan() => "NaN".into(),
            Cell::Float(f) => format!("{f:.11e}"),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(f) => Some(*f),
            Cell::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

/// Rows of parameter points and measures plus run metadata.
#[derive(Clone, Debug, Serialize)]
pub struct ResultTable {
    pub preset: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub meta: BTreeMap<String, Value>,
}

impl ResultTable {
    pub fn new(preset: &str, columns: &[(&str, &str)]) -> Self {
        Self {
            preset: preset.to_string(),
            columns: columns
                .iter()
                .map(|(n, u)| Column {
                    name: n.to_string(),
                    unit: u.to_string(),
                })
                .collect(),
            rows: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match the schema");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("table `{}` has no column `{name}`", self.preset)))
    }

    /// Numeric values of a column (NaN for text cells).
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[k].as_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn texts(&self, name: &str) -> Result<Vec<String>> {
        let k = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[k].render()).collect())
    }

    /// Sorts rows by the given key columns, in order.
    pub fn sort_by(&mut self, keys: &[&str]) -> Result<()> {
        let idx: Vec<usize> = keys.iter().map(|k| self.column(k)).collect::<Result<_>>()?;
        self.rows.sort_by(|a, b| {
            for &k in &idx {
                let ord = match (&a[k], &b[k]) {
                    (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
                    (x, y) => x
                        .as_f64()
                        .unwrap_or(f64::NAN)
                        .total_cmp(&y.as_f64().unwrap_or(f64::NAN)),
                };
                if ord.is_ne() {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        });
        Ok(())
    }

    /// First row whose named columns all equal the given values.
    pub fn find(&self, matches: &[(&str, f64)]) -> Option<&[Cell]> {
        let idx: Vec<(usize, f64)> = matches
            .iter()
            .map(|(n, v)| self.column(n).map(|k| (k, *v)))
            .collect::<Result<_>>()
            .ok()?;
        self.rows
            .iter()
            .find(|r| idx.iter().all(|(k, v)| r[*k].as_f64() == Some(*v)))
            .map(|r| r.as_slice())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {}: all frequencies, rates and times in units of omega_m = 1", self.preset)?;
        let header: Vec<String> = self
            .columns
            .iter()
            .map(|c| format!("{} [{}]", c.name, c.unit))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Sidecar metadata: schema, row count and everything in `meta`.
    pub fn sidecar(&self) -> Value {
        let mut v = json!({
            "preset": self.preset,
            "version": env!("CARGO_PKG_VERSION"),
            "vectorization": "column-stacking",
            "units": "omega_m = 1",
            "columns": self.columns,
            "rows": self.rows.len(),
        });
        if let Some(obj) = v.as_object_mut() {
            for (k, val) in &self.meta {
                obj.insert(k.clone(), val.clone());
            }
        }
        v
    }

    /// Writes `<preset>.csv` and `<preset>.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.preset));
        let side = dir.join(format!("{}.json", self.preset));
        fs::write(&csv, self.to_csv_string())?;
        let text = serde_json::to_string_pretty(&self.sidecar()).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&side, text + "\n")?;
        Ok((csv, side))
    }
}

/// Settings shared by all presets.
#[derive(Clone, Debug)]
pub struct SweepOptions {
    /// Base model; each preset overrides the fields it sweeps.
    pub base: ModelInputs,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
    /// Re-run rows with population on the top phonon level.
    pub audit: bool,
    pub log_base: LogBase,
    /// Steady-state solver settings; `None` derives them from `kappa`.
    pub steady: Option<SteadyOptions>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            base: ModelInputs::default(),
            threads: None,
            audit: true,
            log_base: LogBase::Natural,
            steady: None,
        }
    }
}

impl SweepOptions {
    fn steady_for(&self, params: &ModelParams) -> SteadyOptions {
        self.steady
            .unwrap_or_else(|| SteadyOptions::for_kappa(params.kappa[0].max(params.kappa[1])))
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Default angle grid: `θ_k = (9 + k) π / 72`, `k = 1..25`, strictly inside
/// `(π/8, π/2)` and containing `π/4`.
pub fn theta_grid() -> Vec<f64> {
    (1..=25)
        .map(|k| (9 + k) as f64 * std::f64::consts::PI / 72.0)
        .collect()
}

/// Default decoherence grid: half decades over `[1e-4, 1e-1]`.
pub fn gamma_over_kappa_grid() -> Vec<f64> {
    (0..7).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect()
}

/// Reduced normal-mode steady state `ρ_{B1 B2}` with solver diagnostics.
#[derive(Clone, Debug)]
pub struct MechanicalSolution {
    pub mech: DensityMatrix,
    pub residual: f64,
    pub method: SteadyMethod,
    pub max_trace_error: f64,
    pub max_hermiticity_defect: f64,
}

fn method_for(gamma: f64) -> SteadyMethod {
    // without mechanical damping the fixed point depends on the initial state
    if gamma == 0.0 {
        SteadyMethod::TimeMarching
    } else {
        SteadyMethod::Nullspace
    }
}

/// Steady state of one cell (`cell` is 0 or 1) from the vacuum, reduced to `B{cell+1}`.
pub fn cell_steady_state(params: &ModelParams, cell: usize, opts: &SteadyOptions) -> Result<MechanicalSolution> {
    let layout = params.cell_layout(cell);
    let h = build_effective_hamiltonian(params, &layout)?;
    let l = build_liouvillian(&h, &build_dissipators(params, &layout)?)?;
    let rho0 = initial_state(params, &layout, &[], false)?;
    let ss = steady_state(&l, &rho0, method_for(params.gamma[cell]), opts)?;
    let label = format!("B{}", cell + 1);
    Ok(MechanicalSolution {
        mech: partial_trace(&ss.rho, &[label.as_str()])?,
        residual: ss.residual,
        method: ss.method,
        max_trace_error: ss.max_trace_error,
        max_hermiticity_defect: ss.max_hermiticity_defect,
    })
}

/// Steady state of the whole system from the vacuum, reduced to `[B1, B2]`,
/// without the per-cell factorisation.
pub fn joint_steady_state(params: &ModelParams, opts: &SteadyOptions) -> Result<MechanicalSolution> {
    let layout = params.layout();
    let h = build_effective_hamiltonian(params, &layout)?;
    let l = build_liouvillian(&h, &build_dissipators(params, &layout)?)?;
    let rho0 = initial_state(params, &layout, &[], false)?;
    let method = method_for(params.gamma[0].min(params.gamma[1]));
    let ss = steady_state(&l, &rho0, method, opts)?;
    Ok(MechanicalSolution {
        mech: partial_trace(&ss.rho, &["B1", "B2"])?,
        residual: ss.residual,
        method: ss.method,
        max_trace_error: ss.max_trace_error,
        max_hermiticity_defect: ss.max_hermiticity_defect,
    })
}

/// Mechanical steady state, using the per-cell fast path for individual
/// reservoirs.
pub fn mechanical_steady_state(params: &ModelParams, opts: &SteadyOptions) -> Result<MechanicalSolution> {
    match params.scenario {
        Scenario::Shared => joint_steady_state(params, opts),
        Scenario::Individual => {
            let c1 = cell_steady_state(params, 0, opts)?;
            let c2 = cell_steady_state(params, 1, opts)?;
            Ok(combine(&c1, &c2)?)
        }
    }
}

fn combine(c1: &MechanicalSolution, c2: &MechanicalSolution) -> Result<MechanicalSolution> {
    let method = if c1.method == SteadyMethod::TimeMarching || c2.method == SteadyMethod::TimeMarching {
        SteadyMethod::TimeMarching
    } else {
        SteadyMethod::Nullspace
    };
    Ok(MechanicalSolution {
        mech: c1.mech.tensor(&c2.mech)?,
        residual: c1.residual.max(c2.residual),
        method,
        max_trace_error: c1.max_trace_error.max(c2.max_trace_error),
        max_hermiticity_defect: c1.max_hermiticity_defect.max(c2.max_hermiticity_defect),
    })
}

/// Negativity and purity in the uncoupled basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measures {
    pub negativity: f64,
    pub purity: f64,
}

pub fn measure(mech: &DensityMatrix, theta: f64) -> Result<Measures> {
    let rotated = rotate_to_uncoupled(mech, theta)?;
    Ok(Measures {
        negativity: negativity(&rotated)?,
        purity: purity(&rotated),
    })
}

/// WLN of the first uncoupled mode.
pub fn first_mode_wln(mech: &DensityMatrix, theta: f64, base: LogBase) -> Result<f64> {
    let rotated = rotate_to_uncoupled(mech, theta)?;
    let b1 = partial_trace(&rotated, &[UNCOUPLED[0]])?;
    wln_base(&b1, &WignerGrid::for_state(&b1), base)
}

/// Largest population on the top Fock level of either normal mode.
pub fn top_level_population(mech: &DensityMatrix) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for label in ["B1", "B2"] {
        let r = partial_trace(mech, &[label])?;
        worst = worst.max(r.get(r.dim() - 1, r.dim() - 1).re);
    }
    Ok(worst)
}

/// Measures at `d_m + 2` minus measures at `d_m` when the top level is
/// populated; NaN when the truncation is not suspect. The second value is the
/// row status: the audit is skipped when the enlarged joint space is too big
/// for the sparse LU.
fn audit_shift(params: &ModelParams, sol: &MechanicalSolution, opts: &SweepOptions) -> Result<(f64, &'static str)> {
    if !opts.audit || top_level_population(&sol.mech)? <= AUDIT_THRESHOLD {
        return Ok((f64::NAN, "ok"));
    }
    let mut bigger = params.clone();
    bigger.d_m += AUDIT_EXTRA_LEVELS;
    if bigger.scenario == Scenario::Shared && bigger.layout().total_dim().pow(2) > MAX_LU_UNKNOWNS {
        return Ok((f64::NAN, "ok; audit skipped (joint space too large)"));
    }
    let base = measure(&sol.mech, params.theta)?;
    let wide = measure(&mechanical_steady_state(&bigger, &opts.steady_for(&bigger))?.mech, params.theta)?;
    let shift = (wide.negativity - base.negativity)
        .abs()
        .max((wide.purity - base.purity).abs());
    Ok((shift, "ok"))
}

fn calibrated(opts: &SweepOptions, targets: [usize; 2], edit: impl FnOnce(&mut ModelInputs)) -> Result<ModelParams> {
    let mut inputs = opts.base.clone();
    inputs.targets = targets;
    inputs.d_m = None;
    edit(&mut inputs);
    calibrate(&inputs)
}

fn status(err: &Error) -> Cell {
    Cell::Text(format!("error: {}", err).replace(',', ";"))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn stamp(table: &mut ResultTable, opts: &SweepOptions, started: f64, clock: Instant, extra: Value) {
    let residuals = table.floats("residual").unwrap_or_default();
    let max_res = residuals.iter().cloned().filter(|r| r.is_finite()).fold(0.0, f64::max);
    table.meta.insert("base_inputs".into(), serde_json::to_value(&opts.base).unwrap_or(Value::Null));
    table.meta.insert("audit".into(), json!(opts.audit));
    table.meta.insert("preset_args".into(), extra);
    table.meta.insert("started_unix".into(), json!(started));
    table.meta.insert("finished_unix".into(), json!(unix_now()));
    table.meta.insert("duration_s".into(), json!(clock.elapsed().as_secs_f64()));
    table.meta.insert("max_residual".into(), json!(max_res));
    table
        .meta
        .insert("residuals".into(), json!(residuals.iter().map(|r| if r.is_finite() { json!(r) } else { Value::Null }).collect::<Vec<_>>()));
}

/// Records the worst trace error and Hermiticity defect seen by the solver
/// runs behind a table.
fn record_conservation(table: &mut ResultTable, diag: impl IntoIterator<Item = (f64, f64)>) {
    let (tr, herm) = diag
        .into_iter()
        .fold((0.0f64, 0.0f64), |(a, b), (x, y)| (a.max(x), b.max(y)));
    table.meta.insert("max_trace_error".into(), json!(tr));
    table.meta.insert("max_hermiticity_defect".into(), json!(herm));
}

fn solved_diagnostics<'a>(
    solved: &'a BTreeMap<[usize; 2], std::result::Result<(ModelParams, MechanicalSolution), String>>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    solved
        .values()
        .filter_map(|r| r.as_ref().ok())
        .map(|(_, s)| (s.max_trace_error, s.max_hermiticity_defect))
}

/// Cell solutions for every distinct `(target, d_m)` of a set of target
/// pairs at zero mechanical damping, solved in parallel.
fn solve_targets(
    pairs: &[[usize; 2]],
    opts: &SweepOptions,
) -> Result<BTreeMap<[usize; 2], std::result::Result<(ModelParams, MechanicalSolution), String>>> {
    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    let mut params_of = BTreeMap::new();
    for &pair in pairs {
        match calibrated(opts, pair, |_| {}) {
            Ok(p) => {
                for n in 0..2 {
                    let key = (pair[n], p.d_m, n);
                    if !cells.contains(&key) {
                        cells.push(key);
                    }
                }
                params_of.insert(pair, Ok(p));
            }
            Err(e) => {
                params_of.insert(pair, Err(e.to_string()));
            }
        }
    }
    let solved: Vec<((usize, usize, usize), std::result::Result<MechanicalSolution, String>)> = opts.run(|| {
        cells
            .par_iter()
            .map(|&(m, d_m, n)| {
                let mut t = [m, m];
                t[1 - n] = 0;
                let sol = calibrated(opts, t, |i| i.d_m = Some(d_m))
                    .and_then(|p| cell_steady_state(&p, n, &opts.steady_for(&p)))
                    .map_err(|e| e.to_string());
                ((m, d_m, n), sol)
            })
            .collect()
    })?;
    let solved: BTreeMap<_, _> = solved.into_iter().collect();
    let mut out = BTreeMap::new();
    for (pair, p) in params_of {
        let entry = p.and_then(|p| {
            let c1 = solved[&(pair[0], p.d_m, 0)].clone()?;
            let c2 = solved[&(pair[1], p.d_m, 1)].clone()?;
            let sol = combine(&c1, &c2).map_err(|e| e.to_string())?;
            Ok((p, sol))
        });
        out.insert(pair, entry);
    }
    Ok(out)
}

/// Steady-state negativity over targets `1..=m_max` in both cells.
pub fn run_fig2a(m_max: usize, theta: f64, opts: &SweepOptions) -> Result<ResultTable> {
    if m_max == 0 {
        return Err(Error::InvalidState("fig2a needs M_max >= 1".into()));
    }
    let started = unix_now();
    let clock = Instant::now();
    let pairs: Vec<[usize; 2]> = (1..=m_max)
        .flat_map(|a| (1..=m_max).map(move |b| [a, b]))
        .collect();
    let opts_zero = zero_damping(opts);
    let solved = solve_targets(&pairs, &opts_zero)?;
    let mut table = ResultTable::new(
        "fig2a",
        &[
            ("M1", "-"),
            ("M2", "-"),
            ("theta", "rad"),
            ("d_m", "levels"),
            ("N_inf", "-"),
            ("P_inf", "-"),
            ("residual", "omega_m"),
            ("audit_shift", "-"),
            ("status", "-"),
        ],
    );
    let rows: Vec<Vec<Cell>> = opts.run(|| {
        pairs
            .par_iter()
            .map(|pair| {
                let row = |p: &ModelParams, sol: &MechanicalSolution| -> Result<Vec<Cell>> {
                    let mut p = p.clone();
                    p.theta = theta;
                    let m = measure(&sol.mech, theta)?;
                    let (shift, note) = audit_shift(&p, sol, &opts_zero)?;
                    Ok(vec![
                        pair[0].into(),
                        pair[1].into(),
                        theta.into(),
                        p.d_m.into(),
                        m.negativity.into(),
                        m.purity.into(),
                        sol.residual.into(),
                        shift.into(),
                        note.into(),
                    ])
                };
                let failed = |msg: String, d_m: usize| {
                    vec![
                        pair[0].into(),
                        pair[1].into(),
                        theta.into(),
                        d_m.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                        Cell::Text(format!("error: {msg}").replace(',', ";")),
                    ]
                };
                match &solved[pair] {
                    Ok((p, sol)) => row(p, sol).unwrap_or_else(|e| failed(e.to_string(), p.d_m)),
                    Err(msg) => failed(msg.clone(), 0),
                }
            })
            .collect()
    })?;
    for r in rows {
        table.push(r);
    }
    table.sort_by(&["M1", "M2"])?;
    stamp(&mut table, &opts_zero, started, clock, json!({"m_max": m_max, "theta": theta}));
    record_conservation(&mut table, solved_diagnostics(&solved));
    Ok(table)
}

fn zero_damping(opts: &SweepOptions) -> SweepOptions {
    let mut o = opts.clone();
    o.base.gamma = [0.0; 2];
    o
}

/// Steady-state negativity over an angle grid for each target.
pub fn run_fig2b(targets: &[[usize; 2]], thetas: &[f64], opts: &SweepOptions) -> Result<ResultTable> {
    let started = unix_now();
    let clock = Instant::now();
    let opts_zero = zero_damping(opts);
    let solved = solve_targets(targets, &opts_zero)?;
    let mut table = ResultTable::new(
        "fig2b",
        &[
            ("M1", "-"),
            ("M2", "-"),
            ("theta", "rad"),
            ("pi_over_theta", "-"),
            ("N_inf", "-"),
            ("P_inf", "-"),
            ("residual", "omega_m"),
            ("status", "-"),
        ],
    );
    let jobs: Vec<([usize; 2], f64)> = targets
        .iter()
        .flat_map(|t| thetas.iter().map(move |th| (*t, *th)))
        .collect();
    let rows: Vec<Vec<Cell>> = opts.run(|| {
        jobs.par_iter()
            .map(|(pair, theta)| {
                let head: Vec<Cell> = vec![
                    pair[0].into(),
                    pair[1].into(),
                    (*theta).into(),
                    (std::f64::consts::PI / theta).into(),
                ];
                let tail = match &solved[pair] {
                    Ok((_, sol)) => match measure(&sol.mech, *theta) {
                        Ok(m) => vec![m.negativity.into(), m.purity.into(), sol.residual.into(), "ok".into()],
                        Err(e) => vec![f64::NAN.into(), f64::NAN.into(), sol.residual.into(), status(&e)],
                    },
                    Err(msg) => vec![
                        f64::NAN.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                        Cell::Text(format!("error: {msg}").replace(',', ";")),
                    ],
                };
                head.into_iter().chain(tail).collect()
            })
            .collect()
    })?;
    for r in rows {
        table.push(r);
    }
    table.sort_by(&["M1", "M2", "theta"])?;
    stamp(&mut table, &opts_zero, started, clock, json!({"targets": targets, "thetas": thetas}));
    record_conservation(&mut table, solved_diagnostics(&solved));
    Ok(table)
}

/// Steady-state negativity and purity versus mechanical damping for both
/// reservoir configurations, at zero temperature.
pub fn run_fig3(target: [usize; 2], gamma_over_kappa: &[f64], opts: &SweepOptions) -> Result<ResultTable> {
    let started = unix_now();
    let clock = Instant::now();
    let mut table = ResultTable::new(
        "fig3",
        &[
            ("scenario", "-"),
            ("gamma_over_kappa", "-"),
            ("N_inf", "-"),
            ("P_inf", "-"),
            ("residual", "omega_m"),
            ("method", "-"),
            ("audit_shift", "-"),
            ("status", "-"),
        ],
    );
    let jobs: Vec<(Scenario, f64)> = [Scenario::Individual, Scenario::Shared]
        .into_iter()
        .flat_map(|s| gamma_over_kappa.iter().map(move |g| (s, *g)))
        .collect();
    let rows: Vec<(Vec<Cell>, Option<(f64, f64)>)> = opts.run(|| {
        jobs.par_iter()
            .map(|&(scenario, ratio)| {
                let result = calibrated(opts, target, |i| {
                    i.scenario = scenario;
                    i.nbar = [0.0; 2];
                    i.gamma = [ratio * i.kappa[0], ratio * i.kappa[1]];
                })
                .and_then(|p| {
                    let sol = mechanical_steady_state(&p, &opts.steady_for(&p))?;
                    let m = measure(&sol.mech, p.theta)?;
                    let shift = audit_shift(&p, &sol, opts)?;
                    Ok((sol, m, shift))
                });
                let head: Vec<Cell> = vec![scenario.to_string().into(), ratio.into()];
                let diag = result
                    .as_ref()
                    .ok()
                    .map(|(sol, _, _)| (sol.max_trace_error, sol.max_hermiticity_defect));
                let tail: Vec<Cell> = match result {
                    Ok((sol, m, (shift, note))) => vec![
                        m.negativity.into(),
                        m.purity.into(),
                        sol.residual.into(),
                        method_name(sol.method).into(),
                        shift.into(),
                        note.into(),
                    ],
                    Err(e) => vec![
                        f64::NAN.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                        "-".into(),
                        f64::NAN.into(),
                        status(&e),
                    ],
                };
                (head.into_iter().chain(tail).collect(), diag)
            })
            .collect()
    })?;
    let mut diags = Vec::new();
    for (r, d) in rows {
        table.push(r);
        diags.extend(d);
    }
    record_conservation(&mut table, diags);
    table.sort_by(&["scenario", "gamma_over_kappa"])?;
    stamp(&mut table, opts, started, clock, json!({"target": target, "gamma_over_kappa": gamma_over_kappa}));
    Ok(table)
}

fn method_name(m: SteadyMethod) -> &'static str {
    match m {
        SteadyMethod::TimeMarching => "time-marching",
        SteadyMethod::Nullspace => "nullspace",
    }
}

/// Time-resolved normal-mode state of the individual-reservoir system from
/// the vacuum, built from per-cell trajectories.
#[derive(Clone, Debug)]
pub struct MechanicalTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub max_trace_error: f64,
    pub max_hermiticity_defect: f64,
    pub final_residual: f64,
}

pub fn evolve_mechanical(params: &ModelParams, t_final: f64, dt_out: f64) -> Result<MechanicalTrajectory> {
    if params.scenario != Scenario::Individual {
        return Err(Error::Unsupported(
            "per-cell trajectories need individual reservoirs".into(),
        ));
    }
    let mut per_cell = Vec::new();
    for cell in 0..2 {
        let layout = params.cell_layout(cell);
        let h = build_effective_hamiltonian(params, &layout)?;
        let l = build_liouvillian(&h, &build_dissipators(params, &layout)?)?;
        let rho0 = initial_state(params, &layout, &[], false)?;
        per_cell.push(evolve(&rho0, &l, t_final, dt_out, 1e-10)?);
    }
    let (a, b) = (&per_cell[0], &per_cell[1]);
    let mut states = Vec::with_capacity(a.states.len());
    for (sa, sb) in a.states.iter().zip(&b.states) {
        let ra = partial_trace(sa, &["B1"])?;
        let rb = partial_trace(sb, &["B2"])?;
        states.push(ra.tensor(&rb)?);
    }
    Ok(MechanicalTrajectory {
        times: a.times.clone(),
        states,
        max_trace_error: a.max_trace_error.max(b.max_trace_error),
        max_hermiticity_defect: a.max_hermiticity_defect.max(b.max_hermiticity_defect),
        final_residual: a.final_residual.max(b.final_residual),
    })
}

/// Default end time of the thermal runs; inside `10/κ ≤ t ≤ 0.1/(n̄ γ)` for the
/// default grid.
pub const FIG4_T_FINAL: f64 = 1e5;

/// Negativity and purity trajectories at finite temperature.
pub fn run_fig4(
    target: [usize; 2],
    nbar: f64,
    gamma_over_kappa: &[f64],
    t_final: f64,
    n_samples: usize,
    opts: &SweepOptions,
) -> Result<ResultTable> {
    let started = unix_now();
    let clock = Instant::now();
    let dt_out = t_final / n_samples.max(1) as f64;
    let mut table = ResultTable::new(
        "fig4",
        &[
            ("gamma_over_kappa", "-"),
            ("t", "1/omega_m"),
            ("gamma_t", "-"),
            ("N_t", "-"),
            ("P_t", "-"),
            ("residual", "omega_m"),
            ("status", "-"),
        ],
    );
    let mut window = Vec::new();
    let curves: Vec<(f64, Result<(ModelParams, MechanicalTrajectory, Vec<Measures>)>)> = opts.run(|| {
        gamma_over_kappa
            .par_iter()
            .map(|&ratio| {
                let res = calibrated(opts, target, |i| {
                    i.scenario = Scenario::Individual;
                    i.nbar = [nbar; 2];
                    i.gamma = [ratio * i.kappa[0], ratio * i.kappa[1]];
                })
                .and_then(|p| {
                    let traj = evolve_mechanical(&p, t_final, dt_out)?;
                    let ms = traj
                        .states
                        .iter()
                        .map(|s| measure(s, p.theta))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((p, traj, ms))
                });
                (ratio, res)
            })
            .collect()
    })?;
    let mut diagnostics = Vec::new();
    for (ratio, res) in curves {
        match res {
            Ok((p, traj, ms)) => {
                let kappa = p.kappa[0].max(p.kappa[1]);
                let gamma = p.gamma[0].max(p.gamma[1]);
                window.push(json!({
                    "gamma_over_kappa": ratio,
                    "lower": 10.0 / kappa,
                    "upper": if nbar * gamma > 0.0 { 0.1 / (nbar * gamma) } else { f64::INFINITY },
                    "respected": t_final >= 10.0 / kappa && (nbar * gamma == 0.0 || t_final <= 0.1 / (nbar * gamma)),
                }));
                diagnostics.push(json!({
                    "gamma_over_kappa": ratio,
                    "max_trace_error": traj.max_trace_error,
                    "max_hermiticity_defect": traj.max_hermiticity_defect,
                }));
                for (t, m) in traj.times.iter().zip(&ms) {
                    table.push(vec![
                        ratio.into(),
                        (*t).into(),
                        (gamma * t).into(),
                        m.negativity.into(),
                        m.purity.into(),
                        traj.final_residual.into(),
                        "ok".into(),
                    ]);
                }
            }
            Err(e) => table.push(vec![
                ratio.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                status(&e),
            ]),
        }
    }
    table.sort_by(&["gamma_over_kappa", "t"])?;
    stamp(
        &mut table,
        opts,
        started,
        clock,
        json!({"target": target, "nbar": nbar, "gamma_over_kappa": gamma_over_kappa, "t_final": t_final, "n_samples": n_samples}),
    );
    table.meta.insert("protocol_window".into(), json!(window));
    let worst: Vec<(f64, f64)> = diagnostics
        .iter()
        .map(|d| {
            (
                d["max_trace_error"].as_f64().unwrap_or(f64::NAN),
                d["max_hermiticity_defect"].as_f64().unwrap_or(f64::NAN),
            )
        })
        .collect();
    table.meta.insert("trajectory_checks".into(), json!(diagnostics));
    record_conservation(&mut table, worst);
    Ok(table)
}

/// Wigner log-negativity of the first uncoupled mode over an angle grid.
pub fn run_fig5(targets: &[[usize; 2]], thetas: &[f64], opts: &SweepOptions) -> Result<ResultTable> {
    let started = unix_now();
    let clock = Instant::now();
    let opts_zero = zero_damping(opts);
    let solved = solve_targets(targets, &opts_zero)?;
    let mut table = ResultTable::new(
        "fig5",
        &[
            ("M1", "-"),
            ("M2", "-"),
            ("theta", "rad"),
            ("WLN", match opts.log_base {
                LogBase::Natural => "nat",
                LogBase::Two => "bit",
            }),
            ("residual", "omega_m"),
            ("status", "-"),
        ],
    );
    let jobs: Vec<([usize; 2], f64)> = targets
        .iter()
        .flat_map(|t| thetas.iter().map(move |th| (*t, *th)))
        .collect();
    let rows: Vec<Vec<Cell>> = opts.run(|| {
        jobs.par_iter()
            .map(|(pair, theta)| {
                let head: Vec<Cell> = vec![pair[0].into(), pair[1].into(), (*theta).into()];
                let tail = match &solved[pair] {
                    Ok((_, sol)) => match first_mode_wln(&sol.mech, *theta, opts.log_base) {
                        Ok(w) => vec![w.into(), sol.residual.into(), "ok".into()],
                        Err(e) => vec![f64::NAN.into(), sol.residual.into(), status(&e)],
                    },
                    Err(msg) => vec![
                        f64::NAN.into(),
                        f64::NAN.into(),
                        Cell::Text(format!("error: {msg}").replace(',', ";")),
                    ],
                };
                head.into_iter().chain(tail).collect()
            })
            .collect()
    })?;
    for r in rows {
        table.push(r);
    }
    table.sort_by(&["M1", "M2", "theta"])?;
    stamp(&mut table, &opts_zero, started, clock, json!({"targets": targets, "thetas": thetas}));
    record_conservation(&mut table, solved_diagnostics(&solved));
    Ok(table)
}

/// Coupling `η = g/ω_m` needed to slice the ladder at each `M = 1..=m_max`.
pub fn run_fig6(m_max: usize) -> Result<ResultTable> {
    if m_max == 0 {
        return Err(Error::InvalidState("fig6 needs M_max >= 1".into()));
    }
    let started = unix_now();
    let clock = Instant::now();
    let mut table = ResultTable::new("fig6", &[("M", "-"), ("eta", "-"), ("residual", "-")]);
    for m in 1..=m_max {
        let eta = eta_for_target(m)?;
        let r = crate::laguerre::laguerre_assoc(m, eta * eta).abs();
        table.push(vec![m.into(), eta.into(), r.into()]);
    }
    table.meta.insert("preset_args".into(), json!({"m_max": m_max}));
    table.meta.insert("started_unix".into(), json!(started));
    table.meta.insert("finished_unix".into(), json!(unix_now()));
    table.meta.insert("duration_s".into(), json!(clock.elapsed().as_secs_f64()));
    Ok(table)
}

/// A row beating the two-mode-squeezing bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundExcess {
    pub m1: usize,
    pub m2: usize,
    pub theta: f64,
    pub negativity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TmsReport {
    pub bound: f64,
    pub exceeding: Vec<BoundExcess>,
    pub max_negativity: f64,
}

/// Rows of a negativity table with `N_inf` strictly above `2^{ln 2}`.
pub fn compare_tms_bound(table: &ResultTable) -> Result<TmsReport> {
    let m1 = table.floats("M1")?;
    let m2 = table.floats("M2")?;
    let th = table.floats("theta")?;
    let n = table.floats("N_inf")?;
    let bound = tms_bound();
    let exceeding = (0..n.len())
        .filter(|&i| n[i] > bound)
        .map(|i| BoundExcess {
            m1: m1[i] as usize,
            m2: m2[i] as usize,
            theta: th[i],
            negativity: n[i],
        })
        .collect();
    Ok(TmsReport {
        bound,
        exceeding,
        max_negativity: n.iter().cloned().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max),
    })
}
