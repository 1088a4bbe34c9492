//! Truncated Fock-space algebra.
//!
//! Operators are dense complex matrices bound to a [`ModeLayout`], which fixes
//! the tensor-product ordering: the first mode is the slowest-varying index,
//! i.e. the leftmost Kronecker factor.

use std::fmt;
use std::ops::{Add, Deref, Mul, Sub};

use faer::{c64, Mat, Scale, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm;

/// Maximum `|rho - rho^dagger|` entry accepted for a density matrix.
pub const TOL_HERMITIAN: f64 = 1e-10;
/// Maximum `|Tr rho - 1|` accepted for a density matrix.
pub const TOL_TRACE: f64 = 1e-8;
/// Most negative eigenvalue accepted for a density matrix.
pub const TOL_PSD: f64 = 1e-8;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
const ONE: c64 = c64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mode {
    pub label: String,
    pub dim: usize,
}

/// Ordered registry of the subsystems making up a Hilbert space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeLayout {
    modes: Vec<Mode>,
    total_dim: usize,
}

impl ModeLayout {
    pub fn new<S: Into<String>>(modes: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut out: Vec<Mode> = Vec::new();
        for (label, dim) in modes {
            let label = label.into();
            if dim == 0 {
                return Err(Error::InvalidDimension {
                    dim,
                    reason: "mode dimensions must be positive",
                });
            }
            if out.iter().any(|m| m.label == label) {
                return Err(Error::DuplicateLabel(label));
            }
            out.push(Mode { label, dim });
        }
        if out.is_empty() {
            return Err(Error::LayoutMismatch("a layout needs at least one mode".into()));
        }
        let total_dim = out.iter().map(|m| m.dim).product();
        Ok(Self {
            modes: out,
            total_dim,
        })
    }

    pub fn single(label: &str, dim: usize) -> Result<Self> {
        Self::new([(label, dim)])
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.modes.iter().map(|m| m.label.as_str())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.modes.iter().any(|m| m.label == label)
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.modes[self.index_of(label)?].dim)
    }

    /// Index strides of each mode in the flattened basis.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.modes.len()];
        for k in (0..self.modes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.modes[k + 1].dim;
        }
        strides
    }

    /// Per-mode occupation numbers of a flattened basis index.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.modes.len()];
        for k in (0..self.modes.len()).rev() {
            digits[k] = index % self.modes[k].dim;
            index /= self.modes[k].dim;
        }
        digits
    }

    /// Flattened basis index of per-mode occupation numbers.
    pub fn index(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(&self.modes)
            .fold(0, |acc, (&d, m)| acc * m.dim + d)
    }

    /// Sub-layout of the kept labels, in this layout's order.
    pub fn sub_layout(&self, keep: &[&str]) -> Result<ModeLayout> {
        for label in keep {
            self.index_of(label)?;
        }
        ModeLayout::new(
            self.modes
                .iter()
                .filter(|m| keep.contains(&m.label.as_str()))
                .map(|m| (m.label.clone(), m.dim)),
        )
    }

    /// Concatenation `self ⊗ other`.
    pub fn concat(&self, other: &ModeLayout) -> Result<ModeLayout> {
        ModeLayout::new(
            self.modes
                .iter()
                .chain(other.modes.iter())
                .map(|m| (m.label.clone(), m.dim)),
        )
    }
}

impl fmt::Display for ModeLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .modes
            .iter()
            .map(|m| format!("{}:{}", m.label, m.dim))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// A complex square matrix acting on the space described by its layout.
#[derive(Clone, Debug)]
pub struct Operator {
    matrix: Mat<c64>,
    layout: ModeLayout,
}

impl Operator {
    pub fn new(matrix: Mat<c64>, layout: ModeLayout) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                found: matrix.nrows(),
            });
        }
        Ok(Self { matrix, layout })
    }

    pub fn zeros(layout: &ModeLayout) -> Self {
        let n = layout.total_dim();
        Self {
            matrix: Mat::zeros(n, n),
            layout: layout.clone(),
        }
    }

    pub fn identity(layout: &ModeLayout) -> Self {
        let n = layout.total_dim();
        Self {
            matrix: Mat::identity(n, n),
            layout: layout.clone(),
        }
    }

    pub fn from_fn(layout: &ModeLayout, f: impl FnMut(usize, usize) -> c64) -> Self {
        let n = layout.total_dim();
        Self {
            matrix: Mat::from_fn(n, n, f),
            layout: layout.clone(),
        }
    }

    pub fn diagonal(layout: &ModeLayout, entries: &[f64]) -> Result<Self> {
        if entries.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                found: entries.len(),
            });
        }
        Ok(Self::from_fn(layout, |i, j| {
            if i == j {
                c64::new(entries[i], 0.0)
            } else {
                ZERO
            }
        }))
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.matrix
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> c64 {
        self.matrix[(row, col)]
    }

    /// Same matrix, relabelled onto a layout of equal total dimension.
    pub fn with_layout(self, layout: ModeLayout) -> Result<Self> {
        Self::new(self.matrix, layout)
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint().to_owned(),
            layout: self.layout.clone(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            matrix: self.matrix.transpose().to_owned(),
            layout: self.layout.clone(),
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            matrix: self.matrix.conjugate().to_owned(),
            layout: self.layout.clone(),
        }
    }

    pub fn scale(&self, factor: c64) -> Self {
        Self {
            matrix: Scale(factor) * &self.matrix,
            layout: self.layout.clone(),
        }
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(c64::new(factor, 0.0))
    }

    pub fn trace(&self) -> c64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        &(self * other) - &(other * self)
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.matrix.norm_max()
    }

    /// `max |A - B|` over all entries.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim(), other.dim(), "operator dimensions differ");
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                worst = worst.max((self.matrix[(i, j)] - other.matrix[(i, j)]).norm());
            }
        }
        worst
    }

    /// `max |A - A^dagger|` over all entries.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `max |U^dagger U - I|` over all entries.
    pub fn unitarity_defect(&self) -> f64 {
        let prod = self.adjoint().matrix * &self.matrix;
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((prod[(i, j)] - target).norm());
            }
        }
        worst
    }

    /// `(A + A^dagger) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let n = self.dim();
        let m = &self.matrix;
        Self {
            matrix: Mat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5),
            layout: self.layout.clone(),
        }
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        self.hermitian_part()
            .matrix
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Linalg(format!("Hermitian eigensolver failed: {e:?}")))
    }

    /// Kronecker product `self ⊗ other` on the concatenated layout.
    pub fn kron(&self, other: &Operator) -> Result<Operator> {
        let layout = self.layout.concat(&other.layout)?;
        Ok(Operator {
            matrix: kron_mat(&self.matrix, &other.matrix),
            layout,
        })
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        assert_eq!(v.len(), self.dim(), "vector length does not match operator");
        let n = self.dim();
        let mut out = vec![ZERO; n];
        for (j, &vj) in v.iter().enumerate() {
            if vj == ZERO {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.matrix[(i, j)] * vj;
            }
        }
        out
    }

    /// Similarity transform `U self U^dagger`.
    pub fn conjugate_by(&self, unitary: &Operator) -> Operator {
        let tmp = &unitary.matrix * &self.matrix;
        Operator {
            matrix: tmp * unitary.matrix.adjoint(),
            layout: self.layout.clone(),
        }
    }
}

fn check_same_layout(a: &Operator, b: &Operator) {
    assert!(
        a.layout == b.layout,
        "operator layouts differ: {} vs {}",
        a.layout,
        b.layout
    );
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        check_same_layout(self, rhs);
        Operator {
            matrix: &self.matrix + &rhs.matrix,
            layout: self.layout.clone(),
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        check_same_layout(self, rhs);
        Operator {
            matrix: &self.matrix - &rhs.matrix,
            layout: self.layout.clone(),
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        check_same_layout(self, rhs);
        Operator {
            matrix: &self.matrix * &rhs.matrix,
            layout: self.layout.clone(),
        }
    }
}

pub(crate) fn kron_mat(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    let mut out = Mat::<c64>::zeros(ar * br, ac * bc);
    for ja in 0..ac {
        for ia in 0..ar {
            let va = a[(ia, ja)];
            if va == ZERO {
                continue;
            }
            for jb in 0..bc {
                for ib in 0..br {
                    out[(ia * br + ib, ja * bc + jb)] = va * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Label given to the mode of single-mode operators built here.
pub const SINGLE_MODE: &str = "mode";

/// Bosonic annihilation operator truncated to `dim` Fock levels.
pub fn destroy(dim: usize) -> Result<Operator> {
    if dim < 2 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "a bosonic mode needs at least two Fock levels",
        });
    }
    let layout = ModeLayout::single(SINGLE_MODE, dim)?;
    Ok(Operator::from_fn(&layout, |i, j| {
        if j == i + 1 {
            c64::new((j as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    }))
}

/// Number operator `a^dagger a` truncated to `dim` levels.
pub fn number(dim: usize) -> Result<Operator> {
    let a = destroy(dim)?;
    Ok(&a.adjoint() * &a)
}

/// Places a single-mode operator into the `target` slot of `layout`,
/// with identities on every other mode.
pub fn embed(op: &Operator, layout: &ModeLayout, target: &str) -> Result<Operator> {
    let k = layout.index_of(target)?;
    let d = layout.modes()[k].dim;
    if op.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: op.dim(),
        });
    }
    let left: usize = layout.modes()[..k].iter().map(|m| m.dim).product();
    let right: usize = layout.modes()[k + 1..].iter().map(|m| m.dim).product();
    let n = layout.total_dim();
    let mut out = Mat::<c64>::zeros(n, n);
    for b in 0..d {
        for a in 0..d {
            let v = op.matrix[(a, b)];
            if v == ZERO {
                continue;
            }
            for l in 0..left {
                for r in 0..right {
                    out[((l * d + a) * right + r, (l * d + b) * right + r)] = v;
                }
            }
        }
    }
    Operator::new(out, layout.clone())
}

/// `exp(alpha a^dagger - alpha^* a)` in a `dim`-level truncation.
///
/// Unitary by construction (the truncated generator is anti-Hermitian) but it
/// only reproduces the infinite-dimensional matrix elements when
/// `|alpha|^2` is well below `dim`.
pub fn displacement(alpha: c64, dim: usize) -> Result<Operator> {
    let a = destroy(dim)?;
    let generator = &a.adjoint().scale(alpha) - &a.scale(alpha.conj());
    let m = expm(generator.matrix());
    Operator::new(m, a.layout().clone())
}

/// Normal-mode rotation unitary `U` on a two-mode layout with equal dims.
///
/// `U^dagger b1 U = cos θ b1 + sin θ b2` and
/// `U^dagger b2 U = sin θ b1 - cos θ b2`. The mode matrix has determinant -1,
/// so `U` is a number-conserving mixer `exp(θ (b2^dagger b1 - b1^dagger b2))`
/// followed by the parity flip `(-1)^{n2}` on the second mode. The identities
/// hold exactly on every total-number sector that fits inside the truncation.
pub fn beam_splitter_unitary(theta: f64, layout: &ModeLayout) -> Result<Operator> {
    if layout.len() != 2 {
        return Err(Error::LayoutMismatch(format!(
            "beam splitter needs a two-mode layout, got {layout}"
        )));
    }
    let (m1, m2) = (&layout.modes()[0], &layout.modes()[1]);
    if m1.dim != m2.dim {
        return Err(Error::DimensionMismatch {
            expected: m1.dim,
            found: m2.dim,
        });
    }
    let a = destroy(m1.dim)?;
    let b1 = embed(&a, layout, &m1.label)?;
    let b2 = embed(&a, layout, &m2.label)?;
    let generator = (&(&b2.adjoint() * &b1) - &(&b1.adjoint() * &b2)).scale_real(theta);
    let mixer = expm(generator.matrix());
    let d = m1.dim;
    let parity: Vec<f64> = (0..layout.total_dim())
        .map(|i| if (i % d) % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let mut u = mixer;
    for (j, &p) in parity.iter().enumerate() {
        if p < 0.0 {
            for i in 0..u.nrows() {
                u[(i, j)] = -u[(i, j)];
            }
        }
    }
    Operator::new(u, layout.clone())
}

/// A Hermitian, unit-trace, positive semidefinite operator.
#[derive(Clone, Debug)]
pub struct DensityMatrix(Operator);

impl Deref for DensityMatrix {
    type Target = Operator;
    fn deref(&self) -> &Operator {
        &self.0
    }
}

impl DensityMatrix {
    /// Validates with the default tolerances.
    pub fn new(op: Operator) -> Result<Self> {
        Self::with_psd_tolerance(op, TOL_PSD)
    }

    /// Validates Hermiticity and trace at the default tolerances and the
    /// minimum eigenvalue against `-psd_tol`.
    pub fn with_psd_tolerance(op: Operator, psd_tol: f64) -> Result<Self> {
        let herm = op.hermiticity_defect();
        if herm > TOL_HERMITIAN {
            return Err(Error::InvalidState(format!(
                "Hermiticity defect {herm:e} exceeds {TOL_HERMITIAN:e}"
            )));
        }
        let tr = op.trace();
        if (tr - ONE).norm() > TOL_TRACE {
            return Err(Error::InvalidState(format!(
                "trace {} + {}i differs from 1 by more than {TOL_TRACE:e}",
                tr.re, tr.im
            )));
        }
        let min = op.hermitian_eigenvalues()?.first().copied().unwrap_or(0.0);
        if min < -psd_tol {
            return Err(Error::InvalidState(format!(
                "minimum eigenvalue {min:e} below -{psd_tol:e}"
            )));
        }
        Ok(Self(op))
    }

    /// Wraps an operator produced by a validity-preserving map.
    pub(crate) fn from_operator_unchecked(op: Operator) -> Self {
        Self(op)
    }

    /// `|psi><psi|` for the normalised amplitudes.
    pub fn from_pure(layout: &ModeLayout, amplitudes: &[c64]) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                found: amplitudes.len(),
            });
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let psi: Vec<c64> = amplitudes.iter().map(|a| a / norm).collect();
        Ok(Self(Operator::from_fn(layout, |i, j| psi[i] * psi[j].conj())))
    }

    /// Product Fock state with the given occupation per mode.
    pub fn fock(layout: &ModeLayout, levels: &[usize]) -> Result<Self> {
        if levels.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} occupation numbers for layout {layout}",
                levels.len()
            )));
        }
        for (m, &n) in layout.modes().iter().zip(levels) {
            if n >= m.dim {
                return Err(Error::InvalidDimension {
                    dim: m.dim,
                    reason: "Fock level outside the truncation",
                });
            }
        }
        let idx = layout.index(levels);
        Ok(Self(Operator::from_fn(layout, |i, j| {
            if i == idx && j == idx {
                ONE
            } else {
                ZERO
            }
        })))
    }

    pub fn maximally_mixed(layout: &ModeLayout) -> Self {
        let p = 1.0 / layout.total_dim() as f64;
        Self(Operator::from_fn(layout, |i, j| {
            if i == j {
                c64::new(p, 0.0)
            } else {
                ZERO
            }
        }))
    }

    pub fn as_operator(&self) -> &Operator {
        &self.0
    }

    pub fn into_operator(self) -> Operator {
        self.0
    }

    /// `self ⊗ other`.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        Ok(Self(self.0.kron(&other.0)?))
    }

    /// Diagonal of the matrix (real parts).
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0.matrix[(i, i)].re).collect()
    }

    /// `Tr(rho A)`.
    pub fn expectation(&self, op: &Operator) -> c64 {
        assert_eq!(op.dim(), self.dim(), "operator dimension mismatch");
        let n = self.dim();
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.0.matrix[(i, k)] * op.matrix[(k, i)];
            }
        }
        acc
    }

    /// Relabels the state onto a layout of equal total dimension.
    pub fn with_layout(self, layout: ModeLayout) -> Result<Self> {
        Ok(Self(self.0.with_layout(layout)?))
    }

    /// `U rho U^dagger`.
    pub fn transform(&self, unitary: &Operator) -> DensityMatrix {
        Self(self.0.conjugate_by(unitary))
    }
}

/// Reduced state on the modes listed in `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: &[&str]) -> Result<DensityMatrix> {
    if keep.is_empty() {
        return Err(Error::LayoutMismatch("partial trace needs a non-empty keep set".into()));
    }
    let layout = rho.layout();
    let kept = layout.sub_layout(keep)?;
    let kept_flags: Vec<bool> = layout
        .labels()
        .map(|l| keep.contains(&l))
        .collect();
    let traced_dims: Vec<usize> = layout
        .modes()
        .iter()
        .zip(&kept_flags)
        .filter(|(_, &k)| !k)
        .map(|(m, _)| m.dim)
        .collect();
    let traced_total: usize = traced_dims.iter().product();
    let dk = kept.total_dim();

    // full[k * traced_total + t] = flattened index of (kept k, traced t)
    let mut full = vec![0usize; dk * traced_total];
    for (idx, slot) in (0..layout.total_dim()).map(|i| (i, layout.digits(i))) {
        let mut k = 0;
        let mut t = 0;
        let mut ti = 0;
        for (mode_i, (&digit, &is_kept)) in slot.iter().zip(&kept_flags).enumerate() {
            if is_kept {
                k = k * layout.modes()[mode_i].dim + digit;
            } else {
                t = t * traced_dims[ti] + digit;
                ti += 1;
            }
        }
        full[k * traced_total + t] = idx;
    }

    let m = rho.matrix();
    let reduced = Mat::from_fn(dk, dk, |k1, k2| {
        let mut acc = ZERO;
        for t in 0..traced_total {
            acc += m[(full[k1 * traced_total + t], full[k2 * traced_total + t])];
        }
        acc
    });
    Ok(DensityMatrix::from_operator_unchecked(Operator::new(reduced, kept)?))
}

/// Partial transpose on the named mode of a two-mode state.
pub fn partial_transpose(rho: &DensityMatrix, label: &str) -> Result<Operator> {
    partial_transpose_op(rho.as_operator(), label)
}

pub(crate) fn partial_transpose_op(rho: &Operator, label: &str) -> Result<Operator> {
    let layout = rho.layout();
    if layout.len() != 2 {
        return Err(Error::LayoutMismatch(format!(
            "partial transpose needs a two-mode layout, got {layout}"
        )));
    }
    let which = layout.index_of(label)?;
    let d1 = layout.modes()[0].dim;
    let d2 = layout.modes()[1].dim;
    let m = rho.matrix();
    let out = Mat::from_fn(d1 * d2, d1 * d2, |row, col| {
        let (i1, i2) = (row / d2, row % d2);
        let (j1, j2) = (col / d2, col % d2);
        if which == 0 {
            m[(j1 * d2 + i2, i1 * d2 + j2)]
        } else {
            m[(i1 * d2 + j2, j1 * d2 + i2)]
        }
    });
    Operator::new(out, layout.clone())
}
