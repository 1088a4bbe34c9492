//! Physical model of the two-cell system: calibration, Hamiltonians,
//! dissipators and admissible initial states.
//!
//! Layout labels: photonic modes are `a1`, `a2` (individual reservoirs) or a
//! single shared `a`; normal mechanical modes are `B1`, `B2`. Cells are laid
//! out cell-major, `[a1, B1, a2, B2]`.

use std::fmt;
use std::str::FromStr;

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{destroy, displacement, embed, number, DensityMatrix, ModeLayout, Operator, SINGLE_MODE};
use crate::laguerre::{eta_for_target, laguerre_assoc};

/// Tolerance on `|L_M^{(1)}(eta^2)|` accepted by calibration.
pub const ROOT_TOL: f64 = 1e-12;
/// Amplitudes below this are treated as absent when checking support.
const SUPPORT_TOL: f64 = 1e-12;

/// Reservoir configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Each normal mode has its own cavity.
    #[serde(rename = "IR")]
    Individual,
    /// Both normal modes share one cavity.
    #[serde(rename = "SR")]
    Shared,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Individual => "IR",
            Scenario::Shared => "SR",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IR" | "INDIVIDUAL" => Ok(Scenario::Individual),
            "SR" | "SHARED" => Ok(Scenario::Shared),
            _ => Err(Error::Format(format!("unknown scenario `{s}` (expected IR or SR)"))),
        }
    }
}

/// User-facing knobs; everything else is derived by [`calibrate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInputs {
    pub theta: f64,
    pub targets: [usize; 2],
    pub chi_bar: f64,
    pub kappa: [f64; 2],
    pub gamma: [f64; 2],
    pub nbar: [f64; 2],
    pub scenario: Scenario,
    /// Phonon truncation; `None` picks `max(M1, M2) + 3`.
    pub d_m: Option<usize>,
    pub d_c: usize,
    /// Coupling used for a cell whose target is the vacuum (no root exists).
    pub eta_free: f64,
    /// Replaces the drive amplitudes derived from `chi_bar`.
    pub drive_override: Option<[f64; 2]>,
}

impl Default for ModelInputs {
    fn default() -> Self {
        Self {
            theta: std::f64::consts::FRAC_PI_4,
            targets: [1, 1],
            chi_bar: 1e-3,
            kappa: [1e-3; 2],
            gamma: [0.0; 2],
            nbar: [0.0; 2],
            scenario: Scenario::Individual,
            d_m: None,
            d_c: 2,
            eta_free: 1.0,
            drive_override: None,
        }
    }
}

/// Fully calibrated parameters, in units of the mechanical frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub omega_m: f64,
    pub theta: f64,
    pub targets: [usize; 2],
    pub eta: [f64; 2],
    pub chi_bar: f64,
    pub kappa: [f64; 2],
    pub gamma: [f64; 2],
    pub nbar: [f64; 2],
    pub scenario: Scenario,
    pub d_m: usize,
    pub d_c: usize,
    pub omega_drive: [f64; 2],
    pub delta: [f64; 2],
}

/// Outcome of one calibration inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Fills in couplings, drives and detunings and validates the regime.
pub fn calibrate(inputs: &ModelInputs) -> Result<ModelParams> {
    let params = calibrate_unchecked(inputs)?;
    let failed: Vec<String> = params
        .checks()
        .into_iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    if failed.is_empty() {
        Ok(params)
    } else {
        Err(Error::Calibration(failed))
    }
}

/// As [`calibrate`] but without enforcing the regime inequalities, for
/// reporting them.
pub fn calibrate_unchecked(inputs: &ModelInputs) -> Result<ModelParams> {
    for (what, vals) in [
        ("kappa", inputs.kappa),
        ("gamma", inputs.gamma),
        ("nbar", inputs.nbar),
    ] {
        for rate in vals {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(Error::NegativeRate { what, rate });
            }
        }
    }
    if !(inputs.chi_bar >= 0.0) {
        return Err(Error::NegativeRate {
            what: "chi_bar",
            rate: inputs.chi_bar,
        });
    }
    if inputs.d_c < 2 {
        return Err(Error::InvalidDimension {
            dim: inputs.d_c,
            reason: "photon truncation needs at least two levels",
        });
    }
    let omega_m = 1.0;
    let mut eta = [0.0; 2];
    let mut omega_drive = [0.0; 2];
    for n in 0..2 {
        if inputs.targets[n] == 0 {
            eta[n] = inputs.eta_free;
            omega_drive[n] = 0.0;
        } else {
            eta[n] = eta_for_target(inputs.targets[n])?;
            omega_drive[n] = inputs.chi_bar * (eta[n] * eta[n] / 2.0).exp() / eta[n];
        }
    }
    if let Some(drive) = inputs.drive_override {
        omega_drive = drive;
    }
    let delta = eta.map(|e| omega_m - e * e * omega_m);
    let d_m = inputs
        .d_m
        .unwrap_or(inputs.targets[0].max(inputs.targets[1]) + 3);
    if d_m < 2 {
        return Err(Error::InvalidDimension {
            dim: d_m,
            reason: "phonon truncation needs at least two levels",
        });
    }
    Ok(ModelParams {
        omega_m,
        theta: inputs.theta,
        targets: inputs.targets,
        eta,
        chi_bar: inputs.chi_bar,
        kappa: inputs.kappa,
        gamma: inputs.gamma,
        nbar: inputs.nbar,
        scenario: inputs.scenario,
        d_m,
        d_c: inputs.d_c,
        omega_drive,
        delta,
    })
}

impl ModelParams {
    /// Single-photon coupling `g_n = eta_n omega_m`.
    pub fn g(&self, cell: usize) -> f64 {
        self.eta[cell] * self.omega_m
    }

    /// Regime inequalities and root residuals, in a fixed order.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for n in 0..2 {
            let c = n + 1;
            let m = self.targets[n];
            if m > 0 {
                let r = laguerre_assoc(m, self.eta[n] * self.eta[n]);
                out.push(Check {
                    name: format!("laguerre_root_{c}"),
                    passed: r.abs() < ROOT_TOL,
                    detail: format!("|L_{m}^(1)(eta^2)| = {:.3e} < {ROOT_TOL:e}", r.abs()),
                });
            }
            let ge = self.g(n) * self.eta[n];
            out.push(Check {
                name: format!("blockade_{c}"),
                passed: self.kappa[n] < 0.1 * ge,
                detail: format!("kappa = {:.3e} < 0.1 g eta = {:.3e}", self.kappa[n], 0.1 * ge),
            });
            out.push(Check {
                name: format!("sideband_{c}"),
                passed: self.kappa[n] < 0.1 * self.omega_m,
                detail: format!("kappa = {:.3e} < 0.1 omega_m", self.kappa[n]),
            });
            out.push(Check {
                name: format!("weak_drive_{c}"),
                passed: self.omega_drive[n].abs() < 0.1 * self.omega_m,
                detail: format!("Omega = {:.3e} < 0.1 omega_m", self.omega_drive[n]),
            });
            out.push(Check {
                name: format!("truncation_{c}"),
                passed: self.d_m >= m + 3,
                detail: format!("d_m = {} >= M + 3 = {}", self.d_m, m + 3),
            });
        }
        out
    }

    /// Joint layout: `[a1, B1, a2, B2]` (IR) or `[a, B1, B2]` (SR).
    pub fn layout(&self) -> ModeLayout {
        let (dc, dm) = (self.d_c, self.d_m);
        match self.scenario {
            Scenario::Individual => ModeLayout::new([("a1", dc), ("B1", dm), ("a2", dc), ("B2", dm)]),
            Scenario::Shared => ModeLayout::new([("a", dc), ("B1", dm), ("B2", dm)]),
        }
        .expect("positive dims and distinct labels")
    }

    /// Layout of one cell (`cell` is 0 or 1): `[a{n}, B{n}]`.
    pub fn cell_layout(&self, cell: usize) -> ModeLayout {
        let n = cell + 1;
        ModeLayout::new([(format!("a{n}"), self.d_c), (format!("B{n}"), self.d_m)])
            .expect("positive dims and distinct labels")
    }

    /// The two normal mechanical modes, `[B1, B2]`.
    pub fn mechanical_layout(&self) -> ModeLayout {
        ModeLayout::new([("B1", self.d_m), ("B2", self.d_m)]).expect("positive dims")
    }

    /// Thermal energy `T / omega_m` from the Bose occupation; zero at `nbar = 0`.
    pub fn temperature(&self, cell: usize) -> f64 {
        temperature_from_occupation(self.nbar[cell])
    }
}

/// Inverts `nbar = 1 / (exp(omega_m / T) - 1)` for `T / omega_m`.
pub fn temperature_from_occupation(nbar: f64) -> f64 {
    if nbar <= 0.0 {
        0.0
    } else {
        1.0 / (1.0 + 1.0 / nbar).ln()
    }
}

/// Diagonal operator-valued coupling
/// `chi_k = eta Omega exp(-eta^2/2) L_k^{(1)}(eta^2) / (k+1)`.
pub fn chi_operator(eta: f64, omega_drive: f64, d_m: usize) -> Result<Operator> {
    if d_m < 2 {
        return Err(Error::InvalidDimension {
            dim: d_m,
            reason: "phonon truncation needs at least two levels",
        });
    }
    let x = eta * eta;
    let pre = eta * omega_drive * (-x / 2.0).exp();
    let entries: Vec<f64> = (0..d_m)
        .map(|k| pre * laguerre_assoc(k, x) / (k as f64 + 1.0))
        .collect();
    Operator::diagonal(&ModeLayout::single(SINGLE_MODE, d_m)?, &entries)
}

/// Per-cell photon/phonon label pairs present in `layout`.
fn cells_in(layout: &ModeLayout) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for n in 0..2 {
        let b = format!("B{}", n + 1);
        if !layout.contains(&b) {
            continue;
        }
        let own = format!("a{}", n + 1);
        let photon = if layout.contains(&own) {
            own
        } else if layout.contains("a") {
            "a".to_string()
        } else {
            return Err(Error::LayoutMismatch(format!(
                "no photonic mode for {b} in {layout}"
            )));
        };
        out.push((n, photon, b));
    }
    if out.is_empty() {
        return Err(Error::LayoutMismatch(format!(
            "layout {layout} has no mechanical normal mode"
        )));
    }
    Ok(out)
}

fn check_mech_dim(params: &ModelParams, layout: &ModeLayout, label: &str) -> Result<()> {
    let d = layout.dim_of(label)?;
    if d != params.d_m {
        return Err(Error::LayoutMismatch(format!(
            "{label} has {d} levels but the parameters say d_m = {}",
            params.d_m
        )));
    }
    Ok(())
}

/// Blockade-regime Hamiltonian
/// `sum_n sigma_-^(n) chi^(n) B_n + B_n^dagger chi^(n) sigma_+^(n)`.
///
/// With a shared cavity the single two-level photon couples to both normal
/// modes through the same structure.
pub fn build_effective_hamiltonian(params: &ModelParams, layout: &ModeLayout) -> Result<Operator> {
    let mut h = Operator::zeros(layout);
    for (n, photon, mech) in cells_in(layout)? {
        if layout.dim_of(&photon)? != 2 {
            return Err(Error::LayoutMismatch(format!(
                "effective model needs a two-level {photon}, layout is {layout}"
            )));
        }
        check_mech_dim(params, layout, &mech)?;
        let chi = chi_operator(params.eta[n], params.omega_drive[n], params.d_m)?;
        let chi_b = &chi * &destroy(params.d_m)?;
        let term = &embed(&destroy(2)?, layout, &photon)? * &embed(&chi_b, layout, &mech)?;
        h = &h + &(&term + &term.adjoint());
    }
    Ok(h)
}

/// Frame of the full Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Normal-mode basis as written: `-g a^dagger a (B + B^dagger)` coupling.
    Lab,
    /// Conjugated by the polaron unitary `exp(eta n_a (B^dagger - B))`, the
    /// frame in which the dissipators (and the effective model) are written.
    Dressed,
}

/// Driven, linearised-free Hamiltonian of each cell in the normal-mode basis:
/// `-Delta a^dagger a + omega_m B^dagger B - g a^dagger a (B + B^dagger) + Omega (a + a^dagger)`.
pub fn build_full_hamiltonian(params: &ModelParams, layout: &ModeLayout) -> Result<Operator> {
    build_full_hamiltonian_in(params, layout, Frame::Lab)
}

/// The full Hamiltonian in either frame. In the dressed frame it reads
/// `-Delta n_a - (g^2/omega_m) n_a^2 + omega_m B^dagger B + Omega (D(eta) a + h.c.)`,
/// with `D` the phonon displacement; pairing it with plain photon decay
/// reproduces the dressed-state master equation without the blockade and
/// rotating-wave approximations.
pub fn build_full_hamiltonian_in(params: &ModelParams, layout: &ModeLayout, frame: Frame) -> Result<Operator> {
    if params.scenario == Scenario::Shared || layout.contains("a") {
        return Err(Error::Unsupported(
            "the full Hamiltonian is only defined for individual cavities".into(),
        ));
    }
    let mut h = Operator::zeros(layout);
    for (n, photon, mech) in cells_in(layout)? {
        let dc = layout.dim_of(&photon)?;
        if dc < 3 {
            return Err(Error::InvalidDimension {
                dim: dc,
                reason: "the full model needs at least three photon levels",
            });
        }
        check_mech_dim(params, layout, &mech)?;
        let a = embed(&destroy(dc)?, layout, &photon)?;
        let na = embed(&number(dc)?, layout, &photon)?;
        let nb = embed(&number(params.d_m)?, layout, &mech)?;
        let g = params.g(n);
        let cell = match frame {
            Frame::Lab => {
                let b = embed(&destroy(params.d_m)?, layout, &mech)?;
                let x_b = &b + &b.adjoint();
                let x_a = &a + &a.adjoint();
                &(&(&na.scale_real(-params.delta[n]) + &nb.scale_real(params.omega_m))
                    - &(&na * &x_b).scale_real(g))
                    + &x_a.scale_real(params.omega_drive[n])
            }
            Frame::Dressed => {
                let shift = g * g / params.omega_m;
                let d = embed(&truncated_displacement(params.eta[n], params.d_m)?, layout, &mech)?;
                let drive = (&d * &a).scale_real(params.omega_drive[n]);
                &(&(&na.scale_real(-params.delta[n]) - &(&na * &na).scale_real(shift))
                    + &nb.scale_real(params.omega_m))
                    + &(&drive + &drive.adjoint())
            }
        };
        h = &h + &cell;
    }
    Ok(h)
}

/// Top-left `dim x dim` block of the displacement by a real `alpha`, computed
/// in a space large enough for the block to be exact to machine precision.
fn truncated_displacement(alpha: f64, dim: usize) -> Result<Operator> {
    let big = dim + 40 + (4.0 * alpha * alpha).ceil() as usize;
    let d = displacement(c64::new(alpha, 0.0), big)?;
    Ok(Operator::from_fn(&ModeLayout::single(SINGLE_MODE, dim)?, |i, j| d.get(i, j)))
}

/// One dissipator `rate * D[jump]` with `D[O] rho = 2 O rho O^dagger - {O^dagger O, rho}`.
#[derive(Clone, Debug)]
pub struct LindbladTerm {
    pub rate: f64,
    pub jump: Operator,
    pub label: String,
}

impl LindbladTerm {
    pub fn new(rate: f64, jump: Operator, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::NegativeRate {
                what: "lindblad rate",
                rate,
            });
        }
        Ok(Self { rate, jump, label })
    }
}

/// Dressed dissipators of each cell; terms with zero rate are omitted.
///
/// Mechanical jumps act on the normal modes and are shifted by the photon
/// number, `B - eta a^dagger a`. With a shared cavity the same photon number
/// enters both cells' jumps and cavity decay appears once, at `kappa_1`.
pub fn build_dissipators(params: &ModelParams, layout: &ModeLayout) -> Result<Vec<LindbladTerm>> {
    let mut terms = Vec::new();
    let mut decayed: Vec<String> = Vec::new();
    for (n, photon, mech) in cells_in(layout)? {
        let c = n + 1;
        check_mech_dim(params, layout, &mech)?;
        let dc = layout.dim_of(&photon)?;
        let a = embed(&destroy(dc)?, layout, &photon)?;
        let na = embed(&number(dc)?, layout, &photon)?;
        let b = embed(&destroy(params.d_m)?, layout, &mech)?;
        let shift = na.scale_real(params.eta[n]);
        let (kappa, gamma, nbar) = (params.kappa[n], params.gamma[n], params.nbar[n]);
        let candidates = [
            (kappa / 2.0, a.clone(), format!("photon decay {photon}")),
            (
                gamma * (1.0 + nbar) / 2.0,
                &b - &shift,
                format!("phonon loss {mech}"),
            ),
            (
                gamma * nbar / 2.0,
                &b.adjoint() - &shift,
                format!("phonon gain {mech}"),
            ),
            (
                params.temperature(n) * 4.0 * params.eta[n].powi(2) * gamma,
                na.clone(),
                format!("dephasing {photon} (cell {c})"),
            ),
        ];
        for (k, (rate, jump, label)) in candidates.into_iter().enumerate() {
            if k == 0 {
                if decayed.contains(&photon) {
                    continue;
                }
                decayed.push(photon.clone());
            }
            let term = LindbladTerm::new(rate, jump, label)?;
            if term.rate > 0.0 {
                terms.push(term);
            }
        }
    }
    Ok(terms)
}

/// Initial state of one normal mechanical mode.
#[derive(Clone, Debug, PartialEq)]
pub enum MechanicalState {
    Vacuum,
    Fock(usize),
    /// Unnormalised Fock amplitudes `c_0, c_1, ...`.
    Pure(Vec<c64>),
}

impl MechanicalState {
    fn amplitudes(&self, dim: usize) -> Result<Vec<c64>> {
        let mut v = vec![c64::new(0.0, 0.0); dim];
        match self {
            MechanicalState::Vacuum => v[0] = c64::new(1.0, 0.0),
            MechanicalState::Fock(n) => {
                if *n >= dim {
                    return Err(Error::InvalidState(format!(
                        "Fock level {n} outside a {dim}-level truncation"
                    )));
                }
                v[*n] = c64::new(1.0, 0.0);
            }
            MechanicalState::Pure(c) => {
                if c.iter().skip(dim).any(|x| x.norm() > SUPPORT_TOL) {
                    return Err(Error::InvalidState(format!(
                        "amplitudes beyond the {dim}-level truncation"
                    )));
                }
                for (slot, x) in v.iter_mut().zip(c) {
                    *slot = *x;
                }
            }
        }
        Ok(v)
    }

    fn highest_level(&self) -> Option<usize> {
        match self {
            MechanicalState::Vacuum => Some(0),
            MechanicalState::Fock(n) => Some(*n),
            MechanicalState::Pure(c) => c.iter().rposition(|x| x.norm() > SUPPORT_TOL),
        }
    }
}

/// Photonic vacuum times the given normal-mode states (vacuum for modes not
/// listed; `mech[k]` belongs to `B{k+1}`).
///
/// The protocol only reaches the target from states without support above
/// `M_n`; such states are refused unless `allow_excess` is set.
pub fn initial_state(
    params: &ModelParams,
    layout: &ModeLayout,
    mech: &[MechanicalState],
    allow_excess: bool,
) -> Result<DensityMatrix> {
    if mech.len() > 2 {
        return Err(Error::InvalidState(format!(
            "{} mechanical states for two normal modes",
            mech.len()
        )));
    }
    for (k, state) in mech.iter().enumerate() {
        let top = state
            .highest_level()
            .ok_or_else(|| Error::InvalidState(format!("B{} state is zero", k + 1)))?;
        if top > params.targets[k] && !allow_excess {
            return Err(Error::SupportConstraint(format!(
                "B{} has support on |{top}> above the target |{}>",
                k + 1,
                params.targets[k]
            )));
        }
    }
    let mut psi = vec![c64::new(1.0, 0.0)];
    for mode in layout.modes() {
        let local = match mode.label.strip_prefix('B').and_then(|s| s.parse::<usize>().ok()) {
            Some(n) if (1..=2).contains(&n) => mech
                .get(n - 1)
                .unwrap_or(&MechanicalState::Vacuum)
                .amplitudes(mode.dim)?,
            _ => MechanicalState::Vacuum.amplitudes(mode.dim)?,
        };
        psi = psi
            .iter()
            .flat_map(|x| local.iter().map(move |y| x * y))
            .collect();
    }
    DensityMatrix::from_pure(layout, &psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::partial_trace;

    fn params(targets: [usize; 2]) -> ModelParams {
        calibrate(&ModelInputs {
            targets,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn calibration_closed_form_for_single_phonon() {
        let p = params([1, 1]);
        let expect = 1e-3 * std::f64::consts::E / 2f64.sqrt();
        for n in 0..2 {
            assert!((p.eta[n] - 2f64.sqrt()).abs() < 1e-12);
            assert!((p.omega_drive[n] - expect).abs() < 1e-15);
            assert!((p.omega_drive[n] - 1.922e-3).abs() < 1e-6);
            // blue sideband: Delta + g eta = omega_m
            assert!((p.delta[n] + p.g(n) * p.eta[n] - 1.0).abs() < 1e-14);
        }
        assert_eq!(p.d_m, 4);
        assert!(p.checks().iter().all(|c| c.passed));
    }

    #[test]
    fn strong_drive_is_rejected() {
        let err = calibrate(&ModelInputs {
            chi_bar: 0.5,
            ..Default::default()
        })
        .unwrap_err();
        match err {
            Error::Calibration(list) => assert!(list.iter().any(|s| s.starts_with("weak_drive"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loose_blockade_and_short_truncation_are_rejected() {
        let err = calibrate(&ModelInputs {
            kappa: [0.5, 1e-3],
            d_m: Some(3),
            ..Default::default()
        })
        .unwrap_err();
        let Error::Calibration(list) = err else { panic!() };
        assert!(list.iter().any(|s| s.starts_with("blockade_1")));
        assert!(list.iter().any(|s| s.starts_with("truncation_")));
        assert!(!list.iter().any(|s| s.starts_with("blockade_2")));
    }

    #[test]
    fn vacuum_target_is_undriven() {
        let p = params([0, 2]);
        assert_eq!(p.omega_drive[0], 0.0);
        assert_eq!(p.eta[0], 1.0);
        assert!(p.omega_drive[1] > 0.0);
    }

    #[test]
    fn negative_rates_are_rejected() {
        let err = calibrate(&ModelInputs {
            gamma: [-1e-6, 0.0],
            ..Default::default()
        });
        assert!(matches!(err, Err(Error::NegativeRate { what: "gamma", .. })));
    }

    #[test]
    fn chi_vanishes_at_target_and_is_nonzero_below() {
        for m in 1..=8 {
            let p = params([m, m]);
            let chi = chi_operator(p.eta[0], p.omega_drive[0], p.d_m).unwrap();
            assert!((chi.get(0, 0).re - p.chi_bar).abs() < 1e-15);
            assert!(chi.get(m, m).norm() < 1e-12, "M = {m}");
            for k in 0..m {
                assert!(chi.get(k, k).re > 0.0, "k = {k} below the root");
            }
            // past the smallest root every entry up to the next root is negative
            assert!(chi.get(m + 1, m + 1).re < 0.0);
        }
    }

    #[test]
    fn effective_hamiltonian_structure() {
        let p = params([2, 2]);
        let cell = p.cell_layout(0);
        let h = build_effective_hamiltonian(&p, &cell).unwrap();
        assert!(h.hermiticity_defect() < 1e-12);
        let chi = chi_operator(p.eta[0], p.omega_drive[0], p.d_m).unwrap();
        // <1, M| H |0, M-1> = chi_{M-1} sqrt(M), by expanding sigma_+ B^dagger chi.
        let m = 2;
        let row = cell.index(&[1, m]);
        let col = cell.index(&[0, m - 1]);
        let expect = chi.get(m - 1, m - 1).re * (m as f64).sqrt();
        assert!((h.get(row, col).re - expect).abs() < 1e-15);
        assert!(h.get(row, col).im.abs() < 1e-15);

        for layout in [p.layout(), cell.clone()] {
            let h = build_effective_hamiltonian(&p, &layout).unwrap();
            for (_, photon, mech) in cells_in(&layout).unwrap() {
                let na = embed(&number(2).unwrap(), &layout, &photon).unwrap();
                let nb = embed(&number(p.d_m).unwrap(), &layout, &mech).unwrap();
                assert!(h.commutator(&(&na - &nb)).max_abs() < 1e-15);
            }
        }
    }

    #[test]
    fn target_product_state_is_dark() {
        for targets in [[1, 1], [2, 3], [5, 4]] {
            for scenario in [Scenario::Individual, Scenario::Shared] {
                let p = calibrate(&ModelInputs {
                    targets,
                    scenario,
                    ..Default::default()
                })
                .unwrap();
                let layout = p.layout();
                let h = build_effective_hamiltonian(&p, &layout).unwrap();
                let rho = initial_state(
                    &p,
                    &layout,
                    &[MechanicalState::Fock(targets[0]), MechanicalState::Fock(targets[1])],
                    false,
                )
                .unwrap();
                let idx = (0..layout.total_dim())
                    .find(|&i| rho.get(i, i).re > 0.5)
                    .unwrap();
                let mut e = vec![c64::new(0.0, 0.0); layout.total_dim()];
                e[idx] = c64::new(1.0, 0.0);
                let out = h.apply(&e);
                assert!(out.iter().all(|x| x.norm() < 1e-12));
            }
        }
    }

    #[test]
    fn full_hamiltonian_limits() {
        let mut p = calibrate(&ModelInputs {
            d_c: 3,
            ..Default::default()
        })
        .unwrap();
        let layout = p.cell_layout(0);
        let h = build_full_hamiltonian(&p, &layout).unwrap();
        assert!(h.hermiticity_defect() < 1e-12);

        // one-photon block: omega_m B^dagger B - g (B + B^dagger) - Delta
        let dm = p.d_m;
        let b = destroy(dm).unwrap();
        let block = &(&(&b.adjoint() * &b) - &(&b + &b.adjoint()).scale_real(p.g(0)))
            - &Operator::identity(b.layout()).scale_real(p.delta[0]);
        for i in 0..dm {
            for j in 0..dm {
                let hij = h.get(layout.index(&[1, i]), layout.index(&[1, j]));
                assert!((hij - block.get(i, j)).norm() < 1e-14);
            }
        }

        p.omega_drive = [0.0; 2];
        p.eta = [0.0; 2];
        let h0 = build_full_hamiltonian(&p, &layout).unwrap();
        for i in 0..layout.total_dim() {
            let d = layout.digits(i);
            let expect = -p.delta[0] * d[0] as f64 + d[1] as f64;
            assert!((h0.get(i, i).re - expect).abs() < 1e-14);
            for j in 0..layout.total_dim() {
                if i != j {
                    assert_eq!(h0.get(i, j), c64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn full_hamiltonian_refuses_two_level_photon_and_shared_cavity() {
        let p = params([1, 1]);
        assert!(matches!(
            build_full_hamiltonian(&p, &p.cell_layout(0)),
            Err(Error::InvalidDimension { .. })
        ));
        let p = calibrate(&ModelInputs {
            scenario: Scenario::Shared,
            d_c: 3,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(
            build_full_hamiltonian(&p, &p.layout()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dissipator_bookkeeping() {
        let p = params([1, 1]);
        let terms = build_dissipators(&p, &p.layout()).unwrap();
        assert_eq!(terms.len(), 2);
        assert!(terms.iter().all(|t| (t.rate - 5e-4).abs() < 1e-18));

        let p = calibrate(&ModelInputs {
            gamma: [1e-5; 2],
            ..Default::default()
        })
        .unwrap();
        let terms = build_dissipators(&p, &p.layout()).unwrap();
        // per cell: photon decay + phonon loss; gain and dephasing vanish at nbar = 0
        assert_eq!(terms.len(), 4);

        let p = calibrate(&ModelInputs {
            gamma: [1e-5; 2],
            nbar: [0.3; 2],
            ..Default::default()
        })
        .unwrap();
        assert_eq!(build_dissipators(&p, &p.layout()).unwrap().len(), 8);
        assert!((p.temperature(0) - 1.0 / (13.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((p.temperature(0) - 0.6820).abs() < 1e-4);

        let p = calibrate(&ModelInputs {
            gamma: [1e-5; 2],
            nbar: [0.3; 2],
            scenario: Scenario::Shared,
            ..Default::default()
        })
        .unwrap();
        let terms = build_dissipators(&p, &p.layout()).unwrap();
        assert_eq!(terms.len(), 7, "one shared cavity decay");
    }

    #[test]
    fn initial_states() {
        let p = params([2, 1]);
        let layout = p.layout();
        let vac = initial_state(&p, &layout, &[], false).unwrap();
        assert!((vac.get(0, 0).re - 1.0).abs() < 1e-15);

        let rho = initial_state(
            &p,
            &layout,
            &[MechanicalState::Fock(2), MechanicalState::Fock(1)],
            false,
        )
        .unwrap();
        let expect = DensityMatrix::fock(&layout, &[0, 2, 0, 1]).unwrap();
        assert!(rho.max_abs_diff(&expect) < 1e-15);

        let sup = MechanicalState::Pure(vec![c64::new(1.0, 0.0), c64::new(0.0, 1.0)]);
        let rho = initial_state(&p, &layout, &[MechanicalState::Vacuum, sup], false).unwrap();
        let b2 = partial_trace(&rho, &["B2"]).unwrap();
        assert!((b2.get(1, 0) - c64::new(0.0, 0.5)).norm() < 1e-15);

        let err = initial_state(&p, &layout, &[MechanicalState::Fock(3)], false);
        assert!(matches!(err, Err(Error::SupportConstraint(_))));
        assert!(initial_state(&p, &layout, &[MechanicalState::Fock(3)], true).is_ok());
    }

    #[test]
    fn scenario_round_trip() {
        for s in [Scenario::Individual, Scenario::Shared] {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert!("XR".parse::<Scenario>().is_err());
    }

    #[test]
    fn dressed_frame_sidebands_match_effective_couplings() {
        for m in [1usize, 2, 3] {
            let p = calibrate(&ModelInputs {
                targets: [m, m],
                d_c: 3,
                ..Default::default()
            })
            .unwrap();
            let layout = p.cell_layout(0);
            let h = build_full_hamiltonian_in(&p, &layout, Frame::Dressed).unwrap();
            assert!(h.hermiticity_defect() < 1e-12);
            let idx = |na: usize, nb: usize| layout.index(&[na, nb]);
            // photon creation with one phonon, k -> k+1, carries chi_k sqrt(k+1)
            let chi = chi_operator(p.eta[0], p.omega_drive[0], p.d_m).unwrap();
            for k in 0..=m {
                let elem = h.get(idx(1, k + 1), idx(0, k)).norm();
                let expect = chi.get(k, k).norm() * ((k + 1) as f64).sqrt();
                assert!((elem - expect).abs() < 1e-12, "M={m} k={k}: {elem} vs {expect}");
            }
            assert!((h.get(idx(1, 1), idx(0, 0)).norm() - p.chi_bar).abs() < 1e-12);
            assert!(h.get(idx(1, m + 1), idx(0, m)).norm() < 1e-12);
            // polaron-shifted photon energies
            let e1 = h.get(idx(1, 0), idx(1, 0)).re;
            assert!((e1 - (-p.delta[0] - p.eta[0] * p.eta[0])).abs() < 1e-12);
        }
    }
}
