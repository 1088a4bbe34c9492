//! Entanglement, purity and phase-space non-Gaussianity of mechanical states.
//!
//! Phase-space convention: `[q, p] = i`, vacuum variance 1/2, and the Wigner
//! function is normalised to `∫ W dq dp = 1`.

use std::io::Write;

use faer::c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{beam_splitter_unitary, partial_transpose, DensityMatrix, ModeLayout, Operator};

/// Labels of the uncoupled mechanical modes produced by [`rotate_to_uncoupled`].
pub const UNCOUPLED: [&str; 2] = ["b1", "b2"];

/// Maps a normal-mode state back to the uncoupled membrane modes.
///
/// Each mode is first zero-padded from `d` to `2d - 1` levels so that every
/// total-number sector occupied by the input fits the truncation; the
/// rotation is then exact rather than clipped at the edge. The result lives
/// on `[b1, b2]` with `2d - 1` levels each.
pub fn rotate_to_uncoupled(rho: &DensityMatrix, theta: f64) -> Result<DensityMatrix> {
    let layout = rho.layout();
    if layout.len() != 2 {
        return Err(Error::LayoutMismatch(format!(
            "expected two mechanical modes, got {layout}"
        )));
    }
    let (d1, d2) = (layout.modes()[0].dim, layout.modes()[1].dim);
    if d1 != d2 {
        return Err(Error::DimensionMismatch {
            expected: d1,
            found: d2,
        });
    }
    let d = d1;
    let big = 2 * d - 1;
    let padded_layout = ModeLayout::new([(UNCOUPLED[0], big), (UNCOUPLED[1], big)])?;
    let lift = |i: usize| (i / d) * big + i % d;
    let mut padded = Operator::zeros(&padded_layout).into_matrix();
    for j in 0..d * d {
        for i in 0..d * d {
            padded[(lift(i), lift(j))] = rho.get(i, j);
        }
    }
    let u = beam_splitter_unitary(theta, &padded_layout)?;
    let padded = DensityMatrix::from_operator_unchecked(Operator::new(padded, padded_layout)?);
    Ok(padded.transform(&u))
}

/// `sum (|e| - e) / 2` over the spectrum of the partial transpose.
pub fn negativity(rho: &DensityMatrix) -> Result<f64> {
    let second = rho
        .layout()
        .modes()
        .get(1)
        .map(|m| m.label.clone())
        .ok_or_else(|| Error::LayoutMismatch(format!("negativity needs two modes, got {}", rho.layout())))?;
    let pt = partial_transpose(rho, &second)?;
    let ev = pt.hermitian_eigenvalues()?;
    Ok(ev.iter().map(|e| (e.abs() - e) / 2.0).sum())
}

/// `Tr rho^2`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    let mut acc = c64::new(0.0, 0.0);
    for i in 0..m.nrows() {
        for k in 0..m.ncols() {
            acc += m[(i, k)] * m[(k, i)];
        }
    }
    acc.re
}

/// `||a - b||_1 / 2`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.layout() != b.layout() {
        return Err(Error::LayoutMismatch(format!(
            "{} versus {}",
            a.layout(),
            b.layout()
        )));
    }
    let diff = a.as_operator() - b.as_operator();
    Ok(diff.hermitian_eigenvalues()?.iter().map(|e| e.abs()).sum::<f64>() / 2.0)
}

/// `<a^dagger a>` of a single-mode state.
pub fn mean_occupation(rho: &DensityMatrix) -> f64 {
    rho.populations()
        .iter()
        .enumerate()
        .map(|(n, p)| n as f64 * p)
        .sum()
}

/// Square phase-space grid `q, p ∈ [-extent, extent]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub extent: f64,
    pub n_points: usize,
}

/// Largest `|W|` tolerated on the grid boundary.
pub const BOUNDARY_TOL: f64 = 1e-8;
/// Allowed deviation of `∫ W` from one.
pub const NORMALISATION_TOL: f64 = 1e-3;

impl WignerGrid {
    pub fn new(extent: f64, n_points: usize) -> Result<Self> {
        if n_points < 65 || n_points % 2 == 0 {
            return Err(Error::InvalidDimension {
                dim: n_points,
                reason: "Wigner grids need an odd number of at least 65 points",
            });
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::GridTooSmall {
                reason: format!("extent {extent} must be positive"),
                suggested_extent: 6.0,
            });
        }
        Ok(Self { extent, n_points })
    }

    /// `L = max(6, 3 sqrt(2<n> + 1))` with 129 points per axis.
    pub fn for_state(rho: &DensityMatrix) -> Self {
        let n = mean_occupation(rho).max(0.0);
        Self {
            extent: 6f64.max(3.0 * (2.0 * n + 1.0).sqrt()),
            n_points: 129,
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / (self.n_points - 1) as f64
    }

    pub fn axis(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_points)
            .map(|i| -self.extent + i as f64 * h)
            .collect()
    }

    /// Same extent, `2(n - 1) + 1` points.
    pub fn refined(&self) -> Self {
        Self {
            extent: self.extent,
            n_points: 2 * (self.n_points - 1) + 1,
        }
    }

    /// Trapezoid rule over values stored row-major (`q` outer, `p` inner).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let n = self.n_points;
        let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let mut acc = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| w(j) * values[i * n + j]).sum();
            acc += w(i) * row;
        }
        acc * self.spacing().powi(2)
    }
}

/// Wigner function sampled on a grid, row-major with `q` as the outer index.
#[derive(Clone, Debug)]
pub struct WignerSamples {
    pub grid: WignerGrid,
    pub values: Vec<f64>,
}

impl WignerSamples {
    pub fn at(&self, iq: usize, ip: usize) -> f64 {
        self.values[iq * self.grid.n_points + ip]
    }

    /// `q,p,W` rows for plotting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# Wigner function, units omega_m = 1, [q, p] = i")?;
        writeln!(out, "q,p,W")?;
        let axis = self.grid.axis();
        for (i, q) in axis.iter().enumerate() {
            for (j, p) in axis.iter().enumerate() {
                writeln!(out, "{q:.11e},{p:.11e},{:.11e}", self.at(i, j))?;
            }
        }
        Ok(())
    }
}

/// `sqrt(n! / (n+k)!)` for `n + k < dim`.
fn factorial_ratios(dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|n| {
            let mut r = 1.0;
            let mut row = vec![1.0];
            for k in 1..dim - n {
                r /= ((n + k) as f64).sqrt();
                row.push(r);
            }
            row
        })
        .collect()
}

/// `W(q, p) = (1/π) sum_{nm} rho_nm (-1)^n <m|D(β)|n>`, `β = sqrt(2)(q + ip)`,
/// with the exact Laguerre form of the displacement matrix elements.
fn wigner_point(rho: &DensityMatrix, ratios: &[Vec<f64>], q: f64, p: f64) -> f64 {
    let dim = rho.dim();
    let beta = c64::new(q, p) * std::f64::consts::SQRT_2;
    let x = beta.norm_sqr();
    let gauss = (-x / 2.0).exp();
    let minus_conj = -beta.conj();
    let mut acc = c64::new(0.0, 0.0);
    let mut beta_k = c64::new(1.0, 0.0);
    let mut mconj_k = c64::new(1.0, 0.0);
    for k in 0..dim {
        // L_n^{(k)}(x) for n = 0..dim-k by the three-term recurrence
        let kf = k as f64;
        let (mut l_prev, mut l_cur) = (0.0, 1.0);
        for n in 0..dim - k {
            if n > 0 {
                let nf = n as f64;
                let next = ((2.0 * nf - 1.0 + kf - x) * l_cur - (nf - 1.0 + kf) * l_prev) / nf;
                l_prev = l_cur;
                l_cur = next;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let amp = ratios[n][k] * l_cur;
            // <n+k|D|n> with parity (-1)^n
            acc += rho.get(n, n + k) * beta_k * (sign * amp);
            if k > 0 {
                // <n|D|n+k> with parity (-1)^{n+k}
                let sign_k = if (n + k) % 2 == 0 { 1.0 } else { -1.0 };
                acc += rho.get(n + k, n) * mconj_k * (sign_k * amp);
            }
        }
        beta_k *= beta;
        mconj_k *= minus_conj;
    }
    acc.re * gauss / std::f64::consts::PI
}

/// Samples the Wigner function of a single-mode state and checks that the
/// grid holds it: boundary values below [`BOUNDARY_TOL`] and unit normalisation.
pub fn wigner(rho: &DensityMatrix, grid: &WignerGrid) -> Result<WignerSamples> {
    if rho.layout().len() != 1 {
        return Err(Error::LayoutMismatch(format!(
            "Wigner function of a single mode, got {}",
            rho.layout()
        )));
    }
    let grid = WignerGrid::new(grid.extent, grid.n_points)?;
    let ratios = factorial_ratios(rho.dim());
    let axis = grid.axis();
    let values: Vec<f64> = axis
        .par_iter()
        .flat_map_iter(|&q| {
            let ratios = &ratios;
            axis.iter().map(move |&p| wigner_point(rho, ratios, q, p))
        })
        .collect();
    let samples = WignerSamples { grid, values };

    let n = grid.n_points;
    let boundary = (0..n)
        .flat_map(|i| [samples.at(0, i), samples.at(n - 1, i), samples.at(i, 0), samples.at(i, n - 1)])
        .map(f64::abs)
        .fold(0.0, f64::max);
    let suggested = WignerGrid::for_state(rho).extent.max(grid.extent * 1.5);
    if boundary > BOUNDARY_TOL {
        return Err(Error::GridTooSmall {
            reason: format!("|W| reaches {boundary:.2e} on the boundary"),
            suggested_extent: suggested,
        });
    }
    let norm = grid.integrate(&samples.values);
    let trace = rho.trace().re;
    if (norm - trace).abs() > NORMALISATION_TOL {
        return Err(Error::GridTooSmall {
            reason: format!("Wigner function integrates to {norm:.6} for trace {trace:.6}"),
            suggested_extent: suggested,
        });
    }
    Ok(samples)
}

/// Base of the logarithm in the Wigner log-negativity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

/// `max(0, log ∫ |W| dq dp)`.
pub fn wln(rho: &DensityMatrix, grid: &WignerGrid) -> Result<f64> {
    wln_base(rho, grid, LogBase::Natural)
}

pub fn wln_base(rho: &DensityMatrix, grid: &WignerGrid, base: LogBase) -> Result<f64> {
    let samples = wigner(rho, grid)?;
    let abs: Vec<f64> = samples.values.iter().map(|w| w.abs()).collect();
    let v = grid.integrate(&abs).ln().max(0.0);
    Ok(match base {
        LogBase::Natural => v,
        LogBase::Two => v / std::f64::consts::LN_2,
    })
}
