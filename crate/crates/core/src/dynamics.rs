//! Vectorised master-equation generator, adaptive time evolution and
//! steady-state solvers.
//!
//! Density matrices are vectorised by stacking columns:
//! `vec(rho)[col * D + row] = rho[row, col]`, so `vec(A X B) = (B^T ⊗ A) vec(X)`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::sparse::{SparseColMat, Triplet};
use faer::linalg::solvers::Solve;
use faer::{c64, Mat, Side};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, ModeLayout, Operator};
use crate::model::LindbladTerm;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// Compressed-sparse-row complex matrix, used for fast matrix-vector products.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<c64>,
}

impl SparseMatrix {
    /// Assembles from `(row, col, value)` entries; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize, c64)>) -> Self {
        let mut map: BTreeMap<(usize, usize), c64> = BTreeMap::new();
        for (r, c, v) in entries {
            assert!(r < n && c < n, "entry ({r}, {c}) outside a {n}x{n} matrix");
            *map.entry((r, c)).or_insert(ZERO) += v;
        }
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(map.len());
        let mut vals = Vec::with_capacity(map.len());
        for ((r, c), v) in map {
            if v == ZERO {
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            vals.push(v);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(row, col, value)` of every stored entry, row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, c64)> + '_ {
        (0..self.n).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.vals[k]))
        })
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[c64], y: &mut [c64]) {
        for r in 0..self.n {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn mul_vec(&self, x: &[c64]) -> Vec<c64> {
        let mut y = vec![ZERO; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|r| {
                self.vals[self.row_ptr[r]..self.row_ptr[r + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<c64> {
        let mut m = Mat::zeros(self.n, self.n);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }
}

/// Generator `L` of `d vec(rho)/dt = L vec(rho)`.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    matrix: SparseMatrix,
    layout: ModeLayout,
}

fn nonzeros(m: &Mat<c64>) -> Vec<(usize, usize, c64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != ZERO {
                out.push((i, j, v));
            }
        }
    }
    out
}

fn identity_entries(n: usize) -> Vec<(usize, usize, c64)> {
    (0..n).map(|i| (i, i, c64::new(1.0, 0.0))).collect()
}

fn push_kron(
    out: &mut Vec<(usize, usize, c64)>,
    a: &[(usize, usize, c64)],
    b: &[(usize, usize, c64)],
    n: usize,
    scale: c64,
) {
    for &(ia, ja, va) in a {
        let sa = scale * va;
        for &(ib, jb, vb) in b {
            out.push((ia * n + ib, ja * n + jb, sa * vb));
        }
    }
}

/// `-i[H, .] + sum rate * (2 O . O^dagger - {O^dagger O, .})`.
pub fn build_liouvillian(h: &Operator, terms: &[LindbladTerm]) -> Result<Liouvillian> {
    let layout = h.layout().clone();
    for t in terms {
        if t.jump.layout() != &layout {
            return Err(Error::LayoutMismatch(format!(
                "jump `{}` lives on {} but the Hamiltonian on {layout}",
                t.label,
                t.jump.layout()
            )));
        }
    }
    let d = layout.total_dim();
    let id = identity_entries(d);
    let mut entries = Vec::new();
    push_kron(&mut entries, &id, &nonzeros(h.matrix()), d, c64::new(0.0, -1.0));
    push_kron(&mut entries, &nonzeros(h.transpose().matrix()), &id, d, c64::new(0.0, 1.0));
    for t in terms {
        if t.rate == 0.0 {
            continue;
        }
        let o = &t.jump;
        let odo = &o.adjoint() * o;
        let r = c64::new(t.rate, 0.0);
        push_kron(&mut entries, &nonzeros(o.conjugate().matrix()), &nonzeros(o.matrix()), d, r * 2.0);
        push_kron(&mut entries, &id, &nonzeros(odo.matrix()), d, -r);
        push_kron(&mut entries, &nonzeros(odo.transpose().matrix()), &id, d, -r);
    }
    Ok(Liouvillian {
        matrix: SparseMatrix::from_entries(d * d, entries),
        layout,
    })
}

/// Column-stacked vector of a square operator.
pub fn vectorize(op: &Operator) -> Vec<c64> {
    let d = op.dim();
    let m = op.matrix();
    let mut v = Vec::with_capacity(d * d);
    for c in 0..d {
        for r in 0..d {
            v.push(m[(r, c)]);
        }
    }
    v
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &[c64], layout: &ModeLayout) -> Result<Operator> {
    let d = layout.total_dim();
    if v.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: v.len(),
        });
    }
    Ok(Operator::from_fn(layout, |r, c| v[c * d + r]))
}

fn vec_trace(v: &[c64], d: usize) -> c64 {
    (0..d).map(|k| v[k * d + k]).sum()
}

fn hermiticity_defect_vec(v: &[c64], d: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for c in 0..d {
        for r in 0..=c {
            worst = worst.max((v[c * d + r] - v[r * d + c].conj()).norm());
        }
    }
    worst
}

fn max_abs(v: &[c64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// `(rho + rho^dagger) / 2` as a density matrix (trace and positivity are
/// monitored, not enforced).
fn to_state(v: &[c64], layout: &ModeLayout) -> DensityMatrix {
    let op = unvectorize(v, layout).expect("length checked by caller");
    DensityMatrix::from_operator_unchecked(op.hermitian_part())
}

impl Liouvillian {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    /// Hilbert-space dimension `D` (the generator is `D^2 x D^2`).
    pub fn hilbert_dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        self.matrix.mul_vec(v)
    }

    /// `|| L vec(rho) ||_inf`.
    pub fn residual(&self, rho: &Operator) -> f64 {
        max_abs(&self.apply(&vectorize(rho)))
    }

    /// Largest deviation of `1^T L` from zero, i.e. of trace preservation.
    pub fn trace_defect(&self) -> f64 {
        let d = self.hilbert_dim();
        let mut col_sums = vec![ZERO; d * d];
        for (r, c, v) in self.matrix.entries() {
            if r % d == r / d {
                col_sums[c] += v;
            }
        }
        max_abs(&col_sums)
    }

    fn check_state(&self, rho: &Operator) -> Result<()> {
        if rho.layout() != &self.layout {
            return Err(Error::LayoutMismatch(format!(
                "state on {} but generator on {}",
                rho.layout(),
                self.layout
            )));
        }
        Ok(())
    }
}

/// Adaptive Dormand–Prince 5(4) settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Step count after which integration gives up.
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-8,
            max_steps: 50_000_000,
        }
    }
}

// Dormand–Prince tableau; the generator is autonomous so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order weights minus embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrator state carried across calls so that marching in segments does
/// not restart the step-size controller.
struct Stepper<'a> {
    l: &'a SparseMatrix,
    opts: IntegratorOptions,
    t: f64,
    h: f64,
    y: Vec<c64>,
    k: [Vec<c64>; 7],
    tmp: Vec<c64>,
    steps: usize,
}

impl<'a> Stepper<'a> {
    fn new(l: &'a SparseMatrix, y: Vec<c64>, opts: IntegratorOptions, h_hint: f64) -> Self {
        let n = y.len();
        let mut k: [Vec<c64>; 7] = std::array::from_fn(|_| vec![ZERO; n]);
        l.mul_vec_into(&y, &mut k[0]);
        let norm = l.norm_inf();
        let h = if norm > 0.0 { 0.5 / norm } else { h_hint };
        Self {
            l,
            opts,
            t: 0.0,
            h: h.min(h_hint).max(f64::MIN_POSITIVE),
            y,
            k,
            tmp: vec![ZERO; n],
            steps: 0,
        }
    }

    /// Advances exactly to `t_end`.
    fn advance_to(&mut self, t_end: f64) -> Result<()> {
        let n = self.y.len();
        while self.t < t_end {
            if self.steps >= self.opts.max_steps {
                return Err(Error::Stiffness { t: self.t, h: self.h });
            }
            let last = self.h >= t_end - self.t;
            let h = if last { t_end - self.t } else { self.h };
            for s in 1..7 {
                let (done, rest) = self.k.split_at_mut(s);
                for i in 0..n {
                    let mut acc = ZERO;
                    for (kj, a) in done.iter().zip(&A[s][..s]) {
                        if *a != 0.0 {
                            acc += kj[i] * *a;
                        }
                    }
                    self.tmp[i] = self.y[i] + acc * h;
                }
                self.l.mul_vec_into(&self.tmp, &mut rest[0]);
            }
            // the last stage was evaluated at the 5th-order solution (FSAL)
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut e = ZERO;
                for (kj, w) in self.k.iter().zip(&E) {
                    if *w != 0.0 {
                        e += kj[i] * *w;
                    }
                }
                let sc = self.opts.atol + self.opts.rtol * self.y[i].norm().max(self.tmp[i].norm());
                err = err.max((e * h).norm() / sc);
            }
            self.steps += 1;
            if !err.is_finite() {
                return Err(Error::Stiffness { t: self.t, h });
            }
            if err <= 1.0 {
                std::mem::swap(&mut self.y, &mut self.tmp);
                self.k.swap(0, 6);
                self.t = if last { t_end } else { self.t + h };
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // a step shortened to land on t_end says nothing about the next one
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if self.h < 1e-14 * self.t.abs().max(1.0) {
                    return Err(Error::Stiffness { t: self.t, h: self.h });
                }
            }
        }
        Ok(())
    }

    fn residual(&self) -> f64 {
        // k[0] always holds L y at the current time
        max_abs(&self.k[0])
    }
}

/// Sampled solution of the master equation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub converged: bool,
    pub final_residual: f64,
    /// Largest `|Tr rho - 1|` seen at any output time.
    pub max_trace_error: f64,
    /// Largest `|rho - rho^dagger|` entry seen before symmetrisation.
    pub max_hermiticity_defect: f64,
    pub steps: usize,
}

/// Integrates from `rho0` over `[0, t_final]`, sampling every `dt_out`
/// (the final time is always included). `converged` reports whether the
/// final residual `|| L vec(rho) ||_inf` is below `tol`.
pub fn evolve(
    rho0: &DensityMatrix,
    l: &Liouvillian,
    t_final: f64,
    dt_out: f64,
    tol: f64,
) -> Result<Trajectory> {
    evolve_with(rho0, l, t_final, dt_out, tol, IntegratorOptions::default())
}

pub fn evolve_with(
    rho0: &DensityMatrix,
    l: &Liouvillian,
    t_final: f64,
    dt_out: f64,
    tol: f64,
    opts: IntegratorOptions,
) -> Result<Trajectory> {
    l.check_state(rho0)?;
    if !(t_final >= 0.0) || !(dt_out > 0.0) {
        return Err(Error::InvalidState(format!(
            "need t_final >= 0 and dt_out > 0, got {t_final} and {dt_out}"
        )));
    }
    let d = l.hilbert_dim();
    let mut stepper = Stepper::new(&l.matrix, vectorize(rho0), opts, dt_out);
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        converged: false,
        final_residual: f64::NAN,
        max_trace_error: 0.0,
        max_hermiticity_defect: 0.0,
        steps: 0,
    };
    let n_out = (t_final / dt_out).ceil() as usize;
    for k in 0..=n_out {
        let t = (k as f64 * dt_out).min(t_final);
        if k > 0 && t <= *traj.times.last().unwrap() {
            break;
        }
        stepper.advance_to(t)?;
        let y = &stepper.y;
        traj.max_trace_error = traj.max_trace_error.max((vec_trace(y, d) - 1.0).norm());
        traj.max_hermiticity_defect = traj.max_hermiticity_defect.max(hermiticity_defect_vec(y, d));
        traj.times.push(t);
        traj.states.push(to_state(y, &l.layout));
    }
    traj.final_residual = stepper.residual();
    traj.converged = traj.final_residual < tol;
    traj.steps = stepper.steps;
    Ok(traj)
}

/// Steady-state strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyMethod {
    /// Integrate from the initial state until the residual is small.
    TimeMarching,
    /// Solve `L x = 0` with the trace constraint; falls back to time marching
    /// when the kernel is degenerate.
    Nullspace,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyOptions {
    /// Residual `|| L vec(rho) ||_inf` regarded as stationary.
    pub tol: f64,
    /// First convergence checkpoint; later ones double.
    pub first_checkpoint: f64,
    pub max_time: f64,
    pub integrator: IntegratorOptions,
}

impl SteadyOptions {
    /// Checkpoints starting at `10 / kappa`.
    pub fn for_kappa(kappa: f64) -> Self {
        Self {
            first_checkpoint: 10.0 / kappa,
            ..Default::default()
        }
    }
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            first_checkpoint: 1e4,
            max_time: 1e10,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// Stationary state with solver diagnostics.
#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    pub residual: f64,
    /// Method that produced `rho` (after any fallback).
    pub method: SteadyMethod,
    /// Simulated time reached when marching, zero otherwise.
    pub time: f64,
    /// `(time, residual)` at each marching checkpoint.
    pub checkpoints: Vec<(f64, f64)>,
    pub max_trace_error: f64,
    pub max_hermiticity_defect: f64,
    /// Why a nullspace solve was abandoned, if it was.
    pub fallback_reason: Option<String>,
}

/// Largest generator (`D^2` unknowns) handed to the sparse LU; fill-in beyond
/// this needs several GB. Larger problems use time marching.
pub const MAX_LU_UNKNOWNS: usize = 20_000;

pub fn steady_state(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    method: SteadyMethod,
    opts: &SteadyOptions,
) -> Result<SteadyState> {
    l.check_state(rho0)?;
    match method {
        SteadyMethod::TimeMarching => time_marching(l, rho0, opts),
        SteadyMethod::Nullspace => match nullspace_solve(l) {
            Ok(rho) => {
                let residual = l.residual(&rho);
                let d = l.hilbert_dim();
                let v = vectorize(&rho);
                Ok(SteadyState {
                    residual,
                    method: SteadyMethod::Nullspace,
                    time: 0.0,
                    checkpoints: Vec::new(),
                    max_trace_error: (vec_trace(&v, d) - 1.0).norm(),
                    max_hermiticity_defect: hermiticity_defect_vec(&v, d),
                    fallback_reason: None,
                    rho: DensityMatrix::from_operator_unchecked(rho.hermitian_part()),
                })
            }
            Err(reason) => {
                let mut out = time_marching(l, rho0, opts)?;
                out.fallback_reason = Some(reason);
                Ok(out)
            }
        },
    }
}

fn time_marching(l: &Liouvillian, rho0: &DensityMatrix, opts: &SteadyOptions) -> Result<SteadyState> {
    let d = l.hilbert_dim();
    let mut stepper = Stepper::new(&l.matrix, vectorize(rho0), opts.integrator, opts.first_checkpoint);
    let mut checkpoints = vec![(0.0, stepper.residual())];
    let mut max_trace_error = (vec_trace(&stepper.y, d) - 1.0).norm();
    let mut max_herm = hermiticity_defect_vec(&stepper.y, d);
    let mut next = opts.first_checkpoint;
    while checkpoints.last().unwrap().1 >= opts.tol {
        if next > opts.max_time {
            let (t, residual) = *checkpoints.last().unwrap();
            return Err(Error::NonConvergence {
                t,
                residual,
                slowest_rate: slowest_rate(&checkpoints),
            });
        }
        stepper.advance_to(next)?;
        max_trace_error = max_trace_error.max((vec_trace(&stepper.y, d) - 1.0).norm());
        max_herm = max_herm.max(hermiticity_defect_vec(&stepper.y, d));
        checkpoints.push((next, stepper.residual()));
        next *= 2.0;
    }
    let (time, residual) = *checkpoints.last().unwrap();
    Ok(SteadyState {
        rho: to_state(&stepper.y, &l.layout),
        residual,
        method: SteadyMethod::TimeMarching,
        time,
        checkpoints,
        max_trace_error,
        max_hermiticity_defect: max_herm,
        fallback_reason: None,
    })
}

/// Decay rate implied by the last two checkpoint residuals.
fn slowest_rate(checkpoints: &[(f64, f64)]) -> f64 {
    match checkpoints {
        [.., (t0, r0), (t1, r1)] if *r0 > 0.0 && *r1 > 0.0 && t1 > t0 => (r0 / r1).ln() / (t1 - t0),
        _ => f64::NAN,
    }
}

/// Kernel of `L` normalised to unit trace, by sparse LU with the equation for
/// `rho[0,0]` replaced by `Tr rho = 1`. Errors (as a reason string) when the
/// kernel is degenerate or the solution is not a valid state.
fn nullspace_solve(l: &Liouvillian) -> std::result::Result<Operator, String> {
    let d = l.hilbert_dim();
    let n = d * d;
    if n > MAX_LU_UNKNOWNS {
        return Err(format!("{n} unknowns exceed the sparse LU budget of {MAX_LU_UNKNOWNS}"));
    }
    let mut trips: Vec<Triplet<usize, usize, c64>> = l
        .matrix
        .entries()
        .filter(|(r, _, _)| *r != 0)
        .map(|(r, c, v)| Triplet::new(r, c, v))
        .collect();
    for k in 0..d {
        trips.push(Triplet::new(0, k * d + k, c64::new(1.0, 0.0)));
    }
    let a = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| format!("sparse assembly failed: {e:?}"))?;
    let lu = a.sp_lu().map_err(|e| format!("sparse LU failed: {e:?}"))?;

    let mut rhs = Mat::<c64>::zeros(n, 1);
    rhs[(0, 0)] = c64::new(1.0, 0.0);
    lu.solve_in_place(rhs.as_mut());
    let x: Vec<c64> = (0..n).map(|i| rhs[(i, 0)]).collect();

    // A density matrix has |rho_ij| <= 1; a (near-)singular system does not
    // respect that. Inverse iteration on a generic vector backs this up.
    let mut probe = Mat::<c64>::from_fn(n, 1, |i, _| {
        c64::new(((i * 7919) % 101) as f64 / 101.0 - 0.5, ((i * 104729) % 97) as f64 / 97.0 - 0.5)
    });
    let probe_norm = (0..n).map(|i| probe[(i, 0)].norm()).fold(0.0, f64::max);
    lu.solve_in_place(probe.as_mut());
    let growth = (0..n).map(|i| probe[(i, 0)].norm()).fold(0.0, f64::max) / probe_norm;
    if !growth.is_finite() || growth > 1e12 {
        return Err(format!("kernel looks degenerate (inverse growth {growth:.2e})"));
    }
    let biggest = max_abs(&x);
    if !biggest.is_finite() || biggest > 1.0 + 1e-6 {
        return Err(format!("solution entry of size {biggest:.3e} is not a state"));
    }
    let rho = unvectorize(&x, &l.layout).map_err(|e| e.to_string())?;
    let herm = rho.hermitian_part();
    let min_eig = herm
        .hermitian_eigenvalues()
        .map_err(|e| e.to_string())?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-6 {
        return Err(format!("solution has eigenvalue {min_eig:.3e}"));
    }
    Ok(rho)
}

/// Number of singular values of the dense generator below `rel_tol * sigma_max`.
/// Only for small spaces (`D^2 <= 2500`).
pub fn nullspace_dimension(l: &Liouvillian, rel_tol: f64) -> Result<usize> {
    let n = l.matrix.dim();
    if n > 2500 {
        return Err(Error::Unsupported(format!(
            "dense kernel analysis of a {n}x{n} generator"
        )));
    }
    let sv = l
        .matrix
        .to_dense()
        .singular_values()
        .map_err(|e| Error::Linalg(format!("{e:?}")))?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    Ok(sv.iter().filter(|s| **s <= rel_tol * smax).count())
}

/// Eigenvalues of the dense generator, for spectral spot checks on small spaces.
pub fn spectrum(l: &Liouvillian) -> Result<Vec<c64>> {
    let n = l.matrix.dim();
    if n > 2500 {
        return Err(Error::Unsupported(format!("dense spectrum of a {n}x{n} generator")));
    }
    l.matrix
        .to_dense()
        .eigenvalues()
        .map_err(|e| Error::Linalg(format!("{e:?}")))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PFCKPT\0\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Saved integration state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub layout: ModeLayout,
    pub time: f64,
    /// Column-stacked density matrix.
    pub state: Vec<c64>,
}

/// Binary layout: magic, `u32` version, `u64` length + JSON layout
/// descriptor, `f64` time, `u64` length + interleaved `(re, im)` pairs.
/// All little-endian.
pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let d = ck.layout.total_dim();
    if ck.state.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: ck.state.len(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    let desc = serde_json::to_vec(&ck.layout).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(desc.len() as u64).to_le_bytes())?;
    w.write_all(&desc)?;
    w.write_all(&ck.time.to_le_bytes())?;
    w.write_all(&(ck.state.len() as u64).to_le_bytes())?;
    for z in &ck.state {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    if len > 1 << 20 {
        return Err(Error::Format("oversized layout descriptor".into()));
    }
    let mut desc = vec![0u8; len];
    r.read_exact(&mut desc)?;
    let layout: ModeLayout = serde_json::from_slice(&desc).map_err(|e| Error::Format(e.to_string()))?;
    r.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let d = layout.total_dim();
    if n != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: n,
        });
    }
    let mut state = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        let re = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        state.push(c64::new(re, f64::from_le_bytes(b8)));
    }
    Ok(Checkpoint { layout, time, state })
}

impl Checkpoint {
    pub fn from_state(rho: &DensityMatrix, time: f64) -> Self {
        Self {
            layout: rho.layout().clone(),
            time,
            state: vectorize(rho),
        }
    }

    pub fn to_state(&self) -> Result<DensityMatrix> {
        DensityMatrix::with_psd_tolerance(unvectorize(&self.state, &self.layout)?, 1e-6)
    }
}

/// Smallest eigenvalue of a Hermitian operator.
pub fn min_eigenvalue(op: &Operator) -> Result<f64> {
    let m = op.hermitian_part();
    let ev = m
        .matrix()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("{e:?}")))?;
    Ok(ev.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{destroy, number, partial_trace};
    use crate::model::{
        build_dissipators, build_effective_hamiltonian, calibrate, initial_state, MechanicalState,
        ModelInputs,
    };

    fn decay(kappa: f64, dim: usize) -> (Liouvillian, ModeLayout) {
        let a = destroy(dim).unwrap();
        let layout = a.layout().clone();
        let h = Operator::zeros(&layout);
        let l = build_liouvillian(&h, &[LindbladTerm::new(kappa / 2.0, a, "decay").unwrap()]).unwrap();
        (l, layout)
    }

    #[test]
    fn vectorisation_round_trip_and_convention() {
        let layout = ModeLayout::single("m", 3).unwrap();
        let op = Operator::from_fn(&layout, |i, j| c64::new(i as f64, j as f64));
        let v = vectorize(&op);
        assert_eq!(v[1], op.get(1, 0));
        assert_eq!(v[3], op.get(0, 1));
        assert!(unvectorize(&v, &layout).unwrap().max_abs_diff(&op) == 0.0);
    }

    #[test]
    fn generator_matches_direct_master_equation() {
        let p = calibrate(&ModelInputs {
            gamma: [1e-4; 2],
            nbar: [0.3; 2],
            ..Default::default()
        })
        .unwrap();
        let layout = p.cell_layout(0);
        let h = build_effective_hamiltonian(&p, &layout).unwrap();
        let terms = build_dissipators(&p, &layout).unwrap();
        let l = build_liouvillian(&h, &terms).unwrap();
        let rho = Operator::from_fn(&layout, |i, j| {
            c64::new(((i * 3 + j * 5) % 7) as f64 * 0.1, (i as f64 - j as f64) * 0.05)
        })
        .hermitian_part();
        let i = c64::new(0.0, 1.0);
        let mut direct = (&(&h * &rho) - &(&rho * &h)).scale(-i);
        for t in &terms {
            let o = &t.jump;
            let od = o.adjoint();
            let odo = &od * o;
            let d = &(&(&(o * &rho) * &od).scale_real(2.0) - &(&rho * &odo)) - &(&odo * &rho);
            direct = &direct + &d.scale_real(t.rate);
        }
        let via_l = unvectorize(&l.apply(&vectorize(&rho)), &layout).unwrap();
        assert!(via_l.max_abs_diff(&direct) < 1e-15);
        assert!(l.trace_defect() < 1e-10);
    }

    #[test]
    fn photon_number_decays_at_kappa() {
        let kappa = 1e-3;
        let (l, layout) = decay(kappa, 4);
        let rho = DensityMatrix::fock(&layout, &[1]).unwrap();
        let dn = unvectorize(&l.apply(&vectorize(&rho)), &layout).unwrap();
        let n = number(4).unwrap();
        let rate = (0..4).map(|k| dn.get(k, k).re * n.get(k, k).re).sum::<f64>();
        assert!((rate + kappa).abs() < 1e-15);

        let traj = evolve(&rho, &l, 3000.0, 500.0, 1e-10).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let mean = s.expectation(&n).re;
            assert!((mean - (-kappa * t).exp()).abs() < 1e-6, "t = {t}");
        }
        assert!(traj.max_trace_error < 1e-10);
        assert!(traj.max_hermiticity_defect < 1e-12);
        assert_eq!(traj.times.len(), 7);
    }

    #[test]
    fn zero_generator_is_constant() {
        let layout = ModeLayout::single("m", 3).unwrap();
        let l = build_liouvillian(&Operator::zeros(&layout), &[]).unwrap();
        let rho = DensityMatrix::maximally_mixed(&layout);
        let traj = evolve(&rho, &l, 10.0, 2.5, 1e-12).unwrap();
        assert!(traj.converged);
        for s in &traj.states {
            assert_eq!(s.max_abs_diff(&rho), 0.0);
        }
    }

    #[test]
    fn decay_steady_state_is_vacuum_both_ways() {
        let (l, layout) = decay(1e-3, 5);
        let rho = DensityMatrix::fock(&layout, &[3]).unwrap();
        let vac = DensityMatrix::fock(&layout, &[0]).unwrap();
        for m in [SteadyMethod::TimeMarching, SteadyMethod::Nullspace] {
            let ss = steady_state(&l, &rho, m, &SteadyOptions::for_kappa(1e-3)).unwrap();
            assert_eq!(ss.method, m);
            assert!(ss.rho.max_abs_diff(&vac) < 1e-8, "{m:?}");
            assert!(ss.residual < 1e-10);
        }
    }

    #[test]
    fn single_cell_reaches_dark_state() {
        let p = calibrate(&ModelInputs::default()).unwrap();
        let layout = p.cell_layout(0);
        let h = build_effective_hamiltonian(&p, &layout).unwrap();
        let l = build_liouvillian(&h, &build_dissipators(&p, &layout).unwrap()).unwrap();

        let dark = initial_state(&p, &layout, &[MechanicalState::Fock(1)], false).unwrap();
        assert!(l.residual(&dark) < 1e-10);

        let vac = initial_state(&p, &layout, &[], false).unwrap();
        let ss = steady_state(&l, &vac, SteadyMethod::TimeMarching, &SteadyOptions::for_kappa(1e-3)).unwrap();
        let mech = partial_trace(&ss.rho, &["B1"]).unwrap();
        assert!(mech.get(1, 1).re > 0.99);
        assert!(ss.max_trace_error < 1e-6);
        assert!(ss.max_hermiticity_defect < 1e-8);
        // residuals shrink once the transient is over
        for w in ss.checkpoints.windows(2).skip(1) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn degenerate_kernel_falls_back_to_marching() {
        let p = calibrate(&ModelInputs {
            d_m: Some(5),
            ..Default::default()
        })
        .unwrap();
        let layout = p.cell_layout(0);
        let h = build_effective_hamiltonian(&p, &layout).unwrap();
        let l = build_liouvillian(&h, &build_dissipators(&p, &layout).unwrap()).unwrap();
        assert!(nullspace_dimension(&l, 1e-12).unwrap() > 1);
        let vac = initial_state(&p, &layout, &[], false).unwrap();
        let ss = steady_state(&l, &vac, SteadyMethod::Nullspace, &SteadyOptions::for_kappa(1e-3)).unwrap();
        assert_eq!(ss.method, SteadyMethod::TimeMarching);
        assert!(ss.fallback_reason.is_some());
        let mech = partial_trace(&ss.rho, &["B1"]).unwrap();
        assert!(mech.get(1, 1).re > 0.99);
    }

    #[test]
    fn damped_cell_has_unique_stationary_state() {
        let p = calibrate(&ModelInputs {
            gamma: [1e-5; 2],
            ..Default::default()
        })
        .unwrap();
        let layout = p.cell_layout(0);
        let h = build_effective_hamiltonian(&p, &layout).unwrap();
        let l = build_liouvillian(&h, &build_dissipators(&p, &layout).unwrap()).unwrap();
        assert_eq!(nullspace_dimension(&l, 1e-12).unwrap(), 1);
        let spec = spectrum(&l).unwrap();
        assert!(spec.iter().all(|z| z.re < 1e-12));
        let vac = initial_state(&p, &layout, &[], false).unwrap();
        let ns = steady_state(&l, &vac, SteadyMethod::Nullspace, &SteadyOptions::for_kappa(1e-3)).unwrap();
        assert_eq!(ns.method, SteadyMethod::Nullspace);
        assert!(ns.residual < 1e-12);
        assert!((ns.rho.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let layout = ModeLayout::new([("a1", 2), ("B1", 3)]).unwrap();
        let rho = DensityMatrix::maximally_mixed(&layout);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        write_checkpoint(&path, &Checkpoint::from_state(&rho, 12.5)).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.layout, layout);
        assert_eq!(back.time, 12.5);
        assert_eq!(back.to_state().unwrap().max_abs_diff(&rho), 0.0);

        std::fs::write(&path, b"garbage!").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    }
}
