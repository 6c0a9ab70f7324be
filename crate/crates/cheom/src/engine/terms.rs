//! Assembly of the hierarchy evolution equations: deterministic drift,
//! per-scheme stochastic terms, feedback contributions, and the moment
//! formulas that extract cavity expectations from the auxiliaries.
//!
//! Neighbor references outside the truncation read as zero. All functions
//! are pure gathers from the previous state, so per-index evaluation order
//! never affects the result.

use rayon::prelude::*;

use crate::operators::{commutator_acc, matmul_acc, C64, OperatorMatrix};
use crate::{Error, Result};

use super::{Detection, EngineOps, FeedbackSpec, HierarchySpace, HierarchyState, MultiIndex};

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);

// Above this per-step work estimate (complex mults), drift evaluation goes
// data-parallel across indices.
const PAR_WORK_THRESHOLD: usize = 8_000_000;

/// Deterministic part of the hierarchy equations, evaluated for every
/// retained index. Linear in the hierarchy.
pub fn heom_drift(state: &HierarchyState, ops: &EngineOps) -> Result<Vec<OperatorMatrix>> {
    check_dims(state, ops)?;
    let mut out = vec![OperatorMatrix::zeros(state.atom_dim()); state.space.len()];
    add_drift(&state.space, &state.matrices, ops, ONE, &mut out);
    Ok(out)
}

fn check_dims(state: &HierarchyState, ops: &EngineOps) -> Result<()> {
    if ops.h_a.dim() != state.atom_dim() {
        return Err(Error::DimensionMismatch(format!(
            "H_A dim {} vs hierarchy atom dim {}",
            ops.h_a.dim(),
            state.atom_dim()
        )));
    }
    if ops.n_modes() != state.space.n_modes {
        return Err(Error::DimensionMismatch(format!(
            "{} modes declared but hierarchy indexes {}",
            ops.n_modes(),
            state.space.n_modes
        )));
    }
    Ok(())
}

pub(super) fn add_drift(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    scale: C64,
    out: &mut [OperatorMatrix],
) {
    let dim = mats[0].dim();
    let work = space.len() * dim * dim * dim * (2 + 6 * space.n_modes);
    let body = |(i, acc): (usize, &mut OperatorMatrix)| {
        let ix = &space.indices[i];
        let rho = &mats[i];
        // -i [H_A, rho]
        commutator_acc(acc, -I * scale, &ops.h_a, rho);
        // -(w.n + w*.m) rho
        let mut damp = C64::new(0.0, 0.0);
        for (k, mode) in ops.modes.iter().enumerate() {
            let w = mode.w();
            damp += w * ix.n[k] as f64 + w.conj() * ix.m[k] as f64;
        }
        acc.axpy(-damp * scale, rho);
        for (k, mode) in ops.modes.iter().enumerate() {
            let g2 = mode.g * mode.g;
            if ix.n[k] > 0 {
                if let Some(j) = space.down_n(i, k) {
                    // g^2 n_k L_k rho^(n-e,m)
                    matmul_acc(acc, scale * (g2 * ix.n[k] as f64), &mode.coupling_op, &mats[j]);
                }
            }
            if ix.m[k] > 0 {
                if let Some(j) = space.down_m(i, k) {
                    // g^2 m_k rho^(n,m-e) L_k^dag
                    matmul_acc(acc, scale * (g2 * ix.m[k] as f64), &mats[j], ops.l_dag(k));
                }
            }
            if let Some(j) = space.up_n(i, k) {
                // [rho^(n+e,m), L^dag]
                matmul_acc(acc, scale, &mats[j], ops.l_dag(k));
                matmul_acc(acc, -scale, ops.l_dag(k), &mats[j]);
            }
            if let Some(j) = space.up_m(i, k) {
                // [L, rho^(n,m+e)]
                matmul_acc(acc, scale, &mode.coupling_op, &mats[j]);
                matmul_acc(acc, -scale, &mats[j], &mode.coupling_op);
            }
        }
    };
    if work > PAR_WORK_THRESHOLD {
        out.par_iter_mut().enumerate().for_each(|(i, acc)| body((i, acc)));
    } else {
        for (i, acc) in out.iter_mut().enumerate() {
            body((i, acc));
        }
    }
}

/// Trace of the first-level auxiliary (e_k, 0) divided by (i g_k), i.e. the
/// conditioned <a_k>. Zero when the mode is uncoupled or k_max = 0.
pub(super) fn a_expectation(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    k: usize,
) -> C64 {
    let g = ops.modes[k].g;
    if g == 0.0 {
        return C64::new(0.0, 0.0);
    }
    match space.first_level(k, false) {
        Some(p) => mats[p].trace() / (I * g),
        None => C64::new(0.0, 0.0),
    }
}

fn adag_expectation(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    k: usize,
) -> C64 {
    let g = ops.modes[k].g;
    if g == 0.0 {
        return C64::new(0.0, 0.0);
    }
    match space.first_level(k, true) {
        Some(p) => mats[p].trace() / (-I * g),
        None => C64::new(0.0, 0.0),
    }
}

/// Conditioned quadrature <X_k> = <a_k + a_k^dag> from the first-level
/// auxiliaries. Errors when no first level is retained.
pub fn quadrature_expectation(state: &HierarchyState, ops: &EngineOps, k: usize) -> Result<f64> {
    if state.space.k_max == 0 {
        return Err(Error::FirstLevelRequired);
    }
    Ok(quadrature_unchecked(&state.space, &state.matrices, ops, k))
}

pub(super) fn quadrature_unchecked(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    k: usize,
) -> f64 {
    let z = a_expectation(space, mats, ops, k) + adag_expectation(space, mats, ops, k);
    debug_assert!(
        z.im.abs() < 1e-6 * (1.0 + z.re.abs()),
        "quadrature picked up imaginary residue {}",
        z.im
    );
    z.re
}

/// Conditioned cavity moment per the auxiliary-trace formula:
/// tr rho^(n,m) / prod_k (i g_k)^{n_k} (-i g_k)^{m_k}.
///
/// The value is the normally ordered <(a^dag)^m a^n>; modes with g = 0
/// contribute zero to any nontrivial moment.
pub fn moments(state: &HierarchyState, ops: &EngineOps, ix: &MultiIndex) -> Result<C64> {
    let pos = state
        .space
        .position_of(ix)
        .ok_or_else(|| Error::IndexNotRetained(ix.to_string()))?;
    let mut divisor = ONE;
    for k in 0..state.space.n_modes {
        let order = ix.n[k] as u32 + ix.m[k] as u32;
        if order == 0 {
            continue;
        }
        let g = ops.modes[k].g;
        if g == 0.0 {
            return Ok(C64::new(0.0, 0.0));
        }
        divisor *= (I * g).powu(ix.n[k] as u32) * (-I * g).powu(ix.m[k] as u32);
    }
    Ok(state.matrices[pos].trace() / divisor)
}

/// Conditioned photon number <a_k^dag a_k> = tr rho^(e,e)/g^2 - theta,
/// clamped at zero; used as the photodetection jump rate divided by 2 kappa.
pub fn photon_number(state: &HierarchyState, ops: &EngineOps, k: usize, theta: f64) -> f64 {
    photon_number_unchecked(&state.space, &state.matrices, ops, k, theta)
}

pub(super) fn photon_number_unchecked(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    k: usize,
    theta: f64,
) -> f64 {
    let g = ops.modes[k].g;
    if g == 0.0 {
        return 0.0;
    }
    let zero = 0usize;
    let Some(p1) = space.up_n(zero, k) else { return 0.0 };
    let Some(p11) = space.up_m(p1, k) else { return 0.0 };
    (mats[p11].trace().re / (g * g) - theta).max(0.0)
}

/// Homodyne stochastic increment matrices for the given per-mode real
/// increments; non-homodyne modes contribute nothing.
pub fn homodyne_stochastic_term(
    state: &HierarchyState,
    ops: &EngineOps,
    dw: &[f64],
) -> Result<Vec<OperatorMatrix>> {
    check_dims(state, ops)?;
    let mut out = vec![OperatorMatrix::zeros(state.atom_dim()); state.space.len()];
    for (k, mode) in ops.modes.iter().enumerate() {
        if mode.detection == Detection::Homodyne {
            add_homodyne_stoch(&state.space, &state.matrices, ops, k, dw[k], &mut out);
        }
    }
    Ok(out)
}

pub(super) fn add_homodyne_stoch(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    k: usize,
    dw: f64,
    out: &mut [OperatorMatrix],
) {
    let mode = &ops.modes[k];
    if mode.g == 0.0 || dw == 0.0 {
        return;
    }
    let sqrt2k = (2.0 * mode.kappa).sqrt();
    let x = quadrature_unchecked(space, mats, ops, k);
    let aux_coef = I / mode.g * sqrt2k * dw;
    let meas_coef = C64::new(-sqrt2k * x * dw, 0.0);
    for (i, acc) in out.iter_mut().enumerate() {
        acc.axpy(meas_coef, &mats[i]);
        if let Some(j) = space.up_m(i, k) {
            acc.axpy(aux_coef, &mats[j]);
        }
        if let Some(j) = space.up_n(i, k) {
            acc.axpy(-aux_coef, &mats[j]);
        }
    }
}

/// Heterodyne stochastic increment matrices for complex per-mode increments.
pub fn heterodyne_stochastic_term(
    state: &HierarchyState,
    ops: &EngineOps,
    dwc: &[C64],
) -> Result<Vec<OperatorMatrix>> {
    check_dims(state, ops)?;
    let mut out = vec![OperatorMatrix::zeros(state.atom_dim()); state.space.len()];
    for (k, mode) in ops.modes.iter().enumerate() {
        if mode.detection == Detection::Heterodyne {
            add_heterodyne_stoch(&state.space, &state.matrices, ops, k, dwc[k], &mut out);
        }
    }
    Ok(out)
}

pub(super) fn add_heterodyne_stoch(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    k: usize,
    dwc: C64,
    out: &mut [OperatorMatrix],
) {
    let mode = &ops.modes[k];
    if mode.g == 0.0 || (dwc.re == 0.0 && dwc.im == 0.0) {
        return;
    }
    let sqrt2k = (2.0 * mode.kappa).sqrt();
    let a_mean = a_expectation(space, mats, ops, k);
    let adag_mean = adag_expectation(space, mats, ops, k);
    // sqrt(2k)(-<a> dWc - <a^dag> dWc*) rho
    let meas_coef = -sqrt2k * (a_mean * dwc + adag_mean * dwc.conj());
    // -(i sqrt(2k)/g) rho^(n+e,m) dWc + (i sqrt(2k)/g) rho^(n,m+e) dWc*
    let up_n_coef = -(I * sqrt2k / mode.g) * dwc;
    let up_m_coef = (I * sqrt2k / mode.g) * dwc.conj();
    for (i, acc) in out.iter_mut().enumerate() {
        acc.axpy(meas_coef, &mats[i]);
        if let Some(j) = space.up_n(i, k) {
            acc.axpy(up_n_coef, &mats[j]);
        }
        if let Some(j) = space.up_m(i, k) {
            acc.axpy(up_m_coef, &mats[j]);
        }
    }
}

/// Photodetection no-jump deterministic extras:
/// (2 kappa <a^dag a>_N rho^(n,m) - (2 kappa / g^2) rho^(n+e,m+e)) dt.
pub(super) fn add_photodetect_det(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    k: usize,
    theta: f64,
    scale: C64,
    out: &mut [OperatorMatrix],
) {
    let mode = &ops.modes[k];
    if mode.g == 0.0 {
        return;
    }
    let two_k = 2.0 * mode.kappa;
    let nbar = photon_number_unchecked(space, mats, ops, k, theta);
    let diag_coef = scale * (two_k * nbar);
    let up_coef = -scale * (two_k / (mode.g * mode.g));
    for (i, acc) in out.iter_mut().enumerate() {
        acc.axpy(diag_coef, &mats[i]);
        if let Some(j) = space.up_nm(i, k) {
            acc.axpy(up_coef, &mats[j]);
        }
    }
}

/// Feedback contribution for mode k with effective operator
/// F(t) = lambda(t)/sqrt(2 kappa_k) * fb.operator:
/// (F rho F - {F^2, rho}/2 + (sqrt(2k)/g)([rho^(n+e,m), F] + [F, rho^(n,m+e)])) dt
/// - i [F, rho^(n,m)] dW.
pub fn feedback_increment(
    state: &HierarchyState,
    ops: &EngineOps,
    fb: &FeedbackSpec,
    lambda: f64,
    dw: f64,
    dt: f64,
) -> Result<Vec<OperatorMatrix>> {
    check_dims(state, ops)?;
    fb.validate(&ops.modes)?;
    let mut out = vec![OperatorMatrix::zeros(state.atom_dim()); state.space.len()];
    let lambda_eff = lambda / (2.0 * ops.modes[fb.mode_index].kappa).sqrt();
    add_feedback(&state.space, &state.matrices, ops, fb, lambda_eff, dt, dw, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn add_feedback(
    space: &HierarchySpace,
    mats: &[OperatorMatrix],
    ops: &EngineOps,
    fb: &FeedbackSpec,
    lambda_eff: f64,
    dt: f64,
    dw: f64,
    out: &mut [OperatorMatrix],
) {
    if lambda_eff == 0.0 {
        return;
    }
    let k = fb.mode_index;
    let mode = &ops.modes[k];
    let f_op = &fb.operator;
    let f_sq = ops.fb_op_sq().expect("feedback operator cache");
    let sqrt2k = (2.0 * mode.kappa).sqrt();
    let sandwich = C64::new(lambda_eff * lambda_eff * dt, 0.0);
    let anticomm = C64::new(-0.5 * lambda_eff * lambda_eff * dt, 0.0);
    let coupling = if mode.g != 0.0 {
        C64::new(lambda_eff * sqrt2k / mode.g * dt, 0.0)
    } else {
        C64::new(0.0, 0.0)
    };
    let stoch = -I * lambda_eff * dw;
    for (i, acc) in out.iter_mut().enumerate() {
        let rho = &mats[i];
        // F rho F
        let mut frho = OperatorMatrix::zeros(rho.dim());
        matmul_acc(&mut frho, ONE, f_op, rho);
        matmul_acc(acc, sandwich, &frho, f_op);
        // -1/2 {F^2, rho}
        matmul_acc(acc, anticomm, f_sq, rho);
        matmul_acc(acc, anticomm, rho, f_sq);
        // (sqrt(2k)/g)([rho^(n+e,m), F] + [F, rho^(n,m+e)])
        if coupling.re != 0.0 {
            if let Some(j) = space.up_n(i, k) {
                commutator_acc(acc, coupling, &mats[j], f_op);
            }
            if let Some(j) = space.up_m(i, k) {
                commutator_acc(acc, -coupling, &mats[j], f_op);
            }
        }
        // -i [F, rho] dW
        if dw != 0.0 {
            commutator_acc(acc, stoch, f_op, rho);
        }
    }
}

/// Homodyne current sample J = sqrt(2 kappa) <X_k> + dW/dt.
pub fn homodyne_current(
    state: &HierarchyState,
    ops: &EngineOps,
    k: usize,
    dw: f64,
    dt: f64,
) -> Result<f64> {
    let x = quadrature_expectation(state, ops, k)?;
    Ok((2.0 * ops.modes[k].kappa).sqrt() * x + dw / dt)
}

/// Dynamic feedback strength
/// lambda = 2 kappa (<corr X> - <corr><X>) / <denom>, all expectations
/// conditioned on the hierarchy itself.
///
/// The covariance form cancels the stochastic shift of <corr> exactly at
/// every state; dropping the <corr><X> correction (valid only on the
/// <X> = 0 manifold) lets the shift re-enter once fluctuations move the
/// state off that manifold.
pub fn dynamic_lambda(
    state: &HierarchyState,
    ops: &EngineOps,
    k: usize,
    corr_op: &OperatorMatrix,
    denom_op: &OperatorMatrix,
) -> Result<f64> {
    if state.space.k_max == 0 {
        return Err(Error::FirstLevelRequired);
    }
    let denom = denom_op.expectation(state.physical());
    if denom.abs() < 1e-9 {
        return Err(Error::FeedbackSingular);
    }
    let corr_x = operator_quadrature_correlation(state, ops, k, corr_op);
    let corr_mean = corr_op.expectation(state.physical());
    let x = quadrature_unchecked(&state.space, &state.matrices, ops, k);
    Ok(2.0 * ops.modes[k].kappa * (corr_x - corr_mean * x) / denom)
}

/// Conditioned correlation <A X_k> = tr(A (rho^(e,0) - rho^(0,e)))/(i g_k)
/// for Hermitian atom operator A.
pub fn operator_quadrature_correlation(
    state: &HierarchyState,
    ops: &EngineOps,
    k: usize,
    a_op: &OperatorMatrix,
) -> f64 {
    let space = &state.space;
    let g = ops.modes[k].g;
    if g == 0.0 {
        return 0.0;
    }
    let (Some(p), Some(q)) = (space.first_level(k, false), space.first_level(k, true)) else {
        return 0.0;
    };
    let z = (a_op.trace_of_product(&state.matrices[p])
        - a_op.trace_of_product(&state.matrices[q]))
        / (I * g);
    debug_assert!(z.im.abs() < 1e-6 * (1.0 + z.re.abs()));
    z.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Detection, HierarchySpace, ModeSpec};
    use crate::noise::JumpDriver;

    fn two_level_ops(detection: Detection) -> EngineOps {
        let mut h = OperatorMatrix::zeros(2);
        h[(0, 0)] = C64::new(-0.5, 0.0);
        h[(1, 1)] = C64::new(0.5, 0.0);
        let mut l = OperatorMatrix::zeros(2);
        l[(0, 1)] = ONE;
        let mode = ModeSpec { g: 2.0, delta: 1.0, kappa: 3.0, coupling_op: l, detection };
        EngineOps::new(h, vec![mode], None).unwrap()
    }

    fn excited_state(k_max: usize) -> HierarchyState {
        let space = HierarchySpace::new(1, k_max).unwrap();
        let mut rho = OperatorMatrix::zeros(2);
        rho[(1, 1)] = ONE;
        HierarchyState::vacuum(space, rho)
    }

    #[test]
    fn quadrature_requires_first_level() {
        let ops = two_level_ops(Detection::Homodyne);
        let state = excited_state(0);
        assert!(matches!(
            quadrature_expectation(&state, &ops, 0),
            Err(crate::Error::FirstLevelRequired)
        ));
        // vacuum hierarchy: first level exists and reads zero
        let state = excited_state(2);
        assert_eq!(quadrature_expectation(&state, &ops, 0).unwrap(), 0.0);
    }

    #[test]
    fn moments_trivial_and_error_cases() {
        let ops = two_level_ops(Detection::Homodyne);
        let state = excited_state(2);
        let zero = MultiIndex { n: vec![0], m: vec![0] };
        assert!((moments(&state, &ops, &zero).unwrap() - ONE).norm() < 1e-15);
        let one = MultiIndex { n: vec![1], m: vec![0] };
        assert_eq!(moments(&state, &ops, &one).unwrap(), C64::new(0.0, 0.0));
        let deep = MultiIndex { n: vec![5], m: vec![0] };
        assert!(matches!(
            moments(&state, &ops, &deep),
            Err(crate::Error::IndexNotRetained(_))
        ));
    }

    #[test]
    fn homodyne_current_is_shot_noise_on_vacuum() {
        let ops = two_level_ops(Detection::Homodyne);
        let state = excited_state(2);
        let dt = 1e-3;
        assert_eq!(homodyne_current(&state, &ops, 0, 0.0, dt).unwrap(), 0.0);
        let w = 0.02;
        assert!((homodyne_current(&state, &ops, 0, w, dt).unwrap() - w / dt).abs() < 1e-12);
    }

    #[test]
    fn dynamic_lambda_zero_on_uncorrelated_product_state() {
        // vacuum x spin-like state: <corr X> = 0 at t = 0
        let ops = two_level_ops(Detection::Homodyne);
        let mut plus = OperatorMatrix::zeros(2);
        for i in 0..2 {
            for j in 0..2 {
                plus[(i, j)] = C64::new(0.5, 0.0);
            }
        }
        let space = HierarchySpace::new(1, 2).unwrap();
        let state = HierarchyState::vacuum(space, plus);
        let mut corr = OperatorMatrix::zeros(2);
        corr[(0, 0)] = C64::new(-1.0, 0.0);
        corr[(1, 1)] = ONE;
        let mut denom = OperatorMatrix::zeros(2);
        denom[(0, 1)] = ONE;
        denom[(1, 0)] = ONE;
        let lambda = dynamic_lambda(&state, &ops, 0, &corr, &denom).unwrap();
        assert_eq!(lambda, 0.0);
        // singular denominator errors
        let mut up = OperatorMatrix::zeros(2);
        up[(1, 1)] = ONE;
        let state = HierarchyState::vacuum(HierarchySpace::new(1, 2).unwrap(), up);
        assert!(matches!(
            dynamic_lambda(&state, &ops, 0, &corr, &denom),
            Err(crate::Error::FeedbackSingular)
        ));
    }

    #[test]
    fn forced_jump_on_empty_mode_errors() {
        let ops = two_level_ops(Detection::Photodetect);
        let mut state = excited_state(2);
        let mut stepper = crate::engine::Stepper::new();
        // flags force a jump at step 0 while the hierarchy has no photon
        let mut drivers = vec![Some(JumpDriver::from_flags(vec![1]))];
        let err = stepper.step_ito(
            &mut state,
            &ops,
            None,
            0.0,
            1e-3,
            &[crate::engine::ModeIncrement::None],
            &mut drivers,
            0,
        );
        assert!(matches!(err, Err(crate::Error::JumpFromEmptyMode)));
    }

    #[test]
    fn feedback_increment_trivial_cases() {
        use crate::engine::{FeedbackLaw, FeedbackSpec, LambdaSchedule};
        let mut h = OperatorMatrix::zeros(2);
        h[(1, 1)] = ONE;
        let mut l = OperatorMatrix::zeros(2);
        l[(0, 1)] = ONE;
        let mode = ModeSpec {
            g: 2.0,
            delta: 1.0,
            kappa: 3.0,
            coupling_op: l,
            detection: Detection::Homodyne,
        };
        let fb = FeedbackSpec {
            mode_index: 0,
            operator: OperatorMatrix::identity(2),
            law: FeedbackLaw::Schedule(LambdaSchedule::constant(0.7)),
        };
        let ops = EngineOps::new(h, vec![mode], Some(&fb)).unwrap();
        let state = excited_state(2);
        // lambda = 0: everything vanishes
        let inc = feedback_increment(&state, &ops, &fb, 0.0, 0.01, 1e-3).unwrap();
        assert!(inc.iter().all(|m| m.max_abs() == 0.0));
        // identity feedback direction: deterministic part is inert
        let inc = feedback_increment(&state, &ops, &fb, 0.7, 0.0, 1e-3).unwrap();
        assert!(inc.iter().all(|m| m.max_abs() < 1e-15));
        // non-Hermitian direction rejected
        let mut bad = OperatorMatrix::zeros(2);
        bad[(0, 1)] = ONE;
        let fb_bad = FeedbackSpec {
            mode_index: 0,
            operator: bad,
            law: FeedbackLaw::Schedule(LambdaSchedule::constant(0.7)),
        };
        assert!(matches!(
            feedback_increment(&state, &ops, &fb_bad, 0.7, 0.0, 1e-3),
            Err(crate::Error::FeedbackNotHermitian)
        ));
    }
}
