//! Fixed-step integrators for the conditioned hierarchy: Euler–Maruyama in
//! Ito form (one real/complex increment per monitored mode per step, jumps
//! handled as threshold crossings), and a Heun predictor–corrector for the
//! single-mode Stratonovich form driven by the physical current.

use num_complex::Complex;

use crate::noise::JumpDriver;
use crate::operators::{C64, OperatorMatrix};
use crate::{Error, Result};

use super::terms::{
    a_expectation, add_drift, add_feedback, add_heterodyne_stoch, add_homodyne_stoch,
    add_photodetect_det, dynamic_lambda, photon_number_unchecked, quadrature_unchecked,
};
use super::{Detection, EngineOps, FeedbackLaw, FeedbackSpec, HierarchyState};

const ONE: C64 = C64::new(1.0, 0.0);
const JUMP_RATE_MIN: f64 = 1e-12;

/// Per-mode stochastic increment for one Ito step. `None` means the mode is
/// averaged over (no conditioning), which is how the deterministic
/// equations are recovered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeIncrement {
    None,
    Real(f64),
    Complex(C64),
}

/// What happened during one step.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    /// Modes on which a jump fired.
    pub jumped: Vec<usize>,
    /// Feedback strength used this step, if feedback is active.
    pub lambda: Option<f64>,
    /// Current samples per mode (real homodyne currents have zero imaginary
    /// part; heterodyne currents are complex; None elsewhere).
    pub currents: Vec<Option<C64>>,
}

/// Reusable integrator workspace; single-owner per trajectory.
#[derive(Debug, Default)]
pub struct Stepper {
    delta: Vec<OperatorMatrix>,
    pred: Vec<OperatorMatrix>,
    k1: Vec<OperatorMatrix>,
    last_lambda: f64,
}

impl Stepper {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(buf: &mut Vec<OperatorMatrix>, len: usize, dim: usize) {
        if buf.len() != len || buf.first().map(|m| m.dim()) != Some(dim) {
            *buf = vec![OperatorMatrix::zeros(dim); len];
        } else {
            for m in buf.iter_mut() {
                m.set_zero();
            }
        }
    }

    /// One Euler–Maruyama step of the conditioned hierarchy, followed by
    /// whole-hierarchy renormalization.
    ///
    /// `increments[k]` must match mode k's detection scheme (Real for
    /// homodyne, Complex for heterodyne, None for photodetect/unmonitored);
    /// `None` on a diffusive mode averages it. `jump_drivers[k]` is
    /// consulted only for photodetect modes.
    #[allow(clippy::too_many_arguments)]
    pub fn step_ito(
        &mut self,
        state: &mut HierarchyState,
        ops: &EngineOps,
        fb: Option<&FeedbackSpec>,
        theta: f64,
        dt: f64,
        increments: &[ModeIncrement],
        jump_drivers: &mut [Option<JumpDriver>],
        step_index: usize,
    ) -> Result<StepReport> {
        assert!(dt > 0.0);
        assert_eq!(increments.len(), ops.n_modes());
        let space = state.space.clone();
        let dim = state.atom_dim();
        Self::ensure(&mut self.delta, space.len(), dim);
        let mats = &state.matrices;
        let mut report = StepReport {
            currents: vec![None; ops.n_modes()],
            ..Default::default()
        };

        add_drift(&space, mats, ops, C64::new(dt, 0.0), &mut self.delta);

        let mut jump_rates: Vec<Option<f64>> = vec![None; ops.n_modes()];
        for (k, mode) in ops.modes.iter().enumerate() {
            match (mode.detection, increments[k]) {
                (Detection::Homodyne, ModeIncrement::Real(dw)) => {
                    add_homodyne_stoch(&space, mats, ops, k, dw, &mut self.delta);
                    if space.k_max >= 1 {
                        let x = quadrature_unchecked(&space, mats, ops, k);
                        let j = (2.0 * mode.kappa).sqrt() * x + dw / dt;
                        report.currents[k] = Some(C64::new(j, 0.0));
                    }
                }
                (Detection::Heterodyne, ModeIncrement::Complex(dwc)) => {
                    add_heterodyne_stoch(&space, mats, ops, k, dwc, &mut self.delta);
                    if space.k_max >= 1 {
                        let a = a_expectation(&space, mats, ops, k);
                        report.currents[k] =
                            Some((2.0 * mode.kappa).sqrt() * a + dwc / dt);
                    }
                }
                (Detection::Photodetect, ModeIncrement::None) => {
                    add_photodetect_det(&space, mats, ops, k, theta, C64::new(dt, 0.0), &mut self.delta);
                    jump_rates[k] =
                        Some(2.0 * mode.kappa * photon_number_unchecked(&space, mats, ops, k, theta));
                }
                (Detection::Unmonitored, ModeIncrement::None) => {}
                // averaged diffusive mode: drift only
                (Detection::Homodyne | Detection::Heterodyne, ModeIncrement::None) => {}
                (det, inc) => {
                    return Err(Error::DimensionMismatch(format!(
                        "mode {k}: increment {inc:?} does not fit detection {det:?}"
                    )));
                }
            }
        }

        if let Some(fb) = fb {
            let lambda = match &fb.law {
                FeedbackLaw::Schedule(s) => s.value(state.time),
                FeedbackLaw::Dynamic { corr_op, denom_op, hold_last } => {
                    match dynamic_lambda(state, ops, fb.mode_index, corr_op, denom_op) {
                        Ok(l) => l,
                        Err(Error::FeedbackSingular) if *hold_last => self.last_lambda,
                        Err(e) => return Err(e),
                    }
                }
            };
            self.last_lambda = lambda;
            report.lambda = Some(lambda);
            let dw = match increments[fb.mode_index] {
                ModeIncrement::Real(dw) => dw,
                // averaged feedback run: keep the deterministic terms only
                ModeIncrement::None => 0.0,
                ModeIncrement::Complex(_) => {
                    return Err(Error::FeedbackModeNotHomodyne(fb.mode_index));
                }
            };
            let lambda_eff = lambda / (2.0 * ops.modes[fb.mode_index].kappa).sqrt();
            add_feedback(&space, mats, ops, fb, lambda_eff, dt, dw, &mut self.delta);
        }

        for (m, d) in state.matrices.iter_mut().zip(self.delta.iter()) {
            m.axpy(ONE, d);
        }

        for (k, rate) in jump_rates.iter().enumerate() {
            let Some(rate) = rate else { continue };
            let Some(driver) = jump_drivers.get_mut(k).and_then(|d| d.as_mut()) else {
                continue;
            };
            if driver.advance(rate * dt, step_index) {
                apply_jump(state, ops, k, theta)?;
                report.jumped.push(k);
            }
        }

        state.renormalize()?;
        state.time += dt;
        Ok(report)
    }

    /// Heun (predictor–corrector) step of the single-mode Stratonovich
    /// hierarchy, driven by the physical homodyne current sample for this
    /// step. Renormalizes like the Ito path.
    pub fn step_stratonovich(
        &mut self,
        state: &mut HierarchyState,
        ops: &EngineOps,
        dt: f64,
        j_hom: f64,
    ) -> Result<()> {
        if ops.n_modes() != 1 || ops.modes[0].detection != Detection::Homodyne {
            return Err(Error::MultimodeStratonovich);
        }
        let space = state.space.clone();
        let dim = state.atom_dim();
        Self::ensure(&mut self.k1, space.len(), dim);
        stratonovich_rhs(&space, &state.matrices, ops, j_hom, &mut self.k1);

        // predictor
        Self::ensure(&mut self.pred, space.len(), dim);
        for ((p, x), k1) in self.pred.iter_mut().zip(&state.matrices).zip(&self.k1) {
            p.axpy(ONE, x);
            p.axpy(C64::new(dt, 0.0), k1);
        }
        Self::ensure(&mut self.delta, space.len(), dim);
        stratonovich_rhs(&space, &self.pred, ops, j_hom, &mut self.delta);

        let half = C64::new(0.5 * dt, 0.0);
        for ((x, k1), k2) in state.matrices.iter_mut().zip(&self.k1).zip(&self.delta) {
            x.axpy(half, k1);
            x.axpy(half, k2);
        }
        state.renormalize()?;
        state.time += dt;
        Ok(())
    }
}

/// Down-shift of the whole hierarchy when a photon is detected on mode k:
/// rho^(n,m) <- rho^(n+e,m+e) / (g^2 <a^dag a>_N), truncated sources read
/// as zero.
pub(super) fn apply_jump(
    state: &mut HierarchyState,
    ops: &EngineOps,
    k: usize,
    theta: f64,
) -> Result<()> {
    let space = state.space.clone();
    let nbar = photon_number_unchecked(&space, &state.matrices, ops, k, theta);
    if nbar < JUMP_RATE_MIN {
        return Err(Error::JumpFromEmptyMode);
    }
    let g = ops.modes[k].g;
    let scale = C64::new(1.0 / (g * g * nbar), 0.0);
    let old = state.matrices.clone();
    for (i, m) in state.matrices.iter_mut().enumerate() {
        match space.up_nm(i, k) {
            Some(j) => {
                m.set_zero();
                m.axpy(scale, &old[j]);
            }
            None => m.set_zero(),
        }
    }
    Ok(())
}

/// Right-hand side of the Stratonovich hierarchy for one homodyne mode:
/// the deterministic drift plus the current-driven line, the second-order
/// auxiliary couplings, and the -2 Re N(t) normalization term.
fn stratonovich_rhs(
    space: &super::HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    j_hom: f64,
    out: &mut [OperatorMatrix],
) {
    for m in out.iter_mut() {
        m.set_zero();
    }
    add_drift(space, mats, ops, ONE, out);
    let mode = &ops.modes[0];
    let g = mode.g;
    let kappa = mode.kappa;
    let sqrt2k = (2.0 * kappa).sqrt();

    // moments entering N(t); untracked indices read as zero
    let x = quadrature_unchecked(space, mats, ops, 0);
    let g2 = g * g;
    let tr_at = |pos: Option<usize>| pos.map(|p| mats[p].trace()).unwrap_or(Complex::new(0.0, 0.0));
    let p10 = space.first_level(0, false);
    let p01 = space.first_level(0, true);
    let p11 = p10.and_then(|p| space.up_m(p, 0));
    let p20 = p10.and_then(|p| space.up_n(p, 0));
    let p02 = p01.and_then(|p| space.up_m(p, 0));
    let n_mean = if g != 0.0 { tr_at(p11).re / g2 } else { 0.0 };
    let a2_mean = if g != 0.0 { -tr_at(p20) / g2 } else { Complex::new(0.0, 0.0) };
    let adag2_mean = if g != 0.0 { -tr_at(p02) / g2 } else { Complex::new(0.0, 0.0) };
    let n_t = kappa * (n_mean + 0.5 * (a2_mean + adag2_mean).re)
        - (kappa / 2.0_f64).sqrt() * j_hom * x;

    let cur_coef = if g != 0.0 {
        C64::new(0.0, 1.0) / g * sqrt2k * j_hom
    } else {
        Complex::new(0.0, 0.0)
    };
    let second_coef = if g != 0.0 {
        C64::new(kappa / g2, 0.0)
    } else {
        Complex::new(0.0, 0.0)
    };
    let norm_coef = C64::new(-2.0 * n_t, 0.0);
    for (i, acc) in out.iter_mut().enumerate() {
        if g != 0.0 {
            if let Some(j) = space.up_m(i, 0) {
                acc.axpy(cur_coef, &mats[j]);
            }
            if let Some(j) = space.up_n(i, 0) {
                acc.axpy(-cur_coef, &mats[j]);
            }
            if let Some(j) = space.up2_n(i, 0) {
                acc.axpy(second_coef, &mats[j]);
            }
            if let Some(j) = space.up2_m(i, 0) {
                acc.axpy(second_coef, &mats[j]);
            }
            if let Some(j) = space.up_nm(i, 0) {
                acc.axpy(-2.0 * second_coef, &mats[j]);
            }
        }
        acc.axpy(norm_coef, &mats[i]);
    }
}
