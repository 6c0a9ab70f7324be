//! Exact full atom+cavity stochastic solvers on truncated Fock spaces — the
//! independent ground truth against which every hierarchy equation is
//! validated on shared noise paths.
//!
//! The increment consumption order (per step, modes in declared order, one
//! draw per monitored mode) is the replay contract shared with the
//! hierarchy integrators.

use num_complex::Complex;

use crate::engine::{Detection, EngineOps, HierarchySpace, HierarchyState, ModeSpec};
use crate::noise::JumpDriver;
use crate::operators::{
    kron_compose, matmul_acc, partial_trace, C64, HilbertSpaceLayout, OperatorMatrix,
};
use crate::{Error, Result};

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);
const LEAKAGE_LIMIT: f64 = 1e-4;
const JUMP_RATE_MIN: f64 = 1e-12;

/// Full atom+cavity state: a pure vector (SSE) or a density matrix (SME).
#[derive(Debug, Clone)]
pub enum FullState {
    Pure(Vec<C64>),
    Density(OperatorMatrix),
}

impl FullState {
    pub fn dim(&self) -> usize {
        match self {
            FullState::Pure(v) => v.len(),
            FullState::Density(m) => m.dim(),
        }
    }

    /// Density-matrix view (projector for pure states).
    pub fn density(&self) -> OperatorMatrix {
        match self {
            FullState::Pure(v) => OperatorMatrix::projector(v),
            FullState::Density(m) => m.clone(),
        }
    }
}

/// Precomposed operators of the full atom + modes space.
#[derive(Debug, Clone)]
pub struct FullOps {
    pub layout: HilbertSpaceLayout,
    pub modes: Vec<ModeSpec>,
    pub cutoffs: Vec<usize>,
    pub h_full: OperatorMatrix,
    a_ops: Vec<OperatorMatrix>,
    n_ops: Vec<OperatorMatrix>,
    atom_dim: usize,
}

impl FullOps {
    /// Builds the composite space atom ⊗ mode_0 ⊗ ... with `cutoffs[k]` Fock
    /// levels on mode k (top level used as the leakage sentinel).
    pub fn new(h_a: &OperatorMatrix, modes: &[ModeSpec], cutoffs: &[usize]) -> Result<Self> {
        if modes.len() != cutoffs.len() {
            return Err(Error::DimensionMismatch(
                "one Fock cutoff per mode required".into(),
            ));
        }
        let mut factors = vec![("atom".to_string(), h_a.dim())];
        for (k, c) in cutoffs.iter().enumerate() {
            if *c < 2 {
                return Err(Error::DimensionMismatch(format!(
                    "mode {k} cutoff must be >= 2"
                )));
            }
            factors.push((format!("mode{k}"), *c));
        }
        let layout = HilbertSpaceLayout::new(factors)?;
        let mut a_ops = Vec::with_capacity(modes.len());
        let mut n_ops = Vec::with_capacity(modes.len());
        for (k, c) in cutoffs.iter().enumerate() {
            let a = crate::operators::annihilation_op(*c);
            let a_full = layout.embed(&a, &format!("mode{k}"))?;
            let n_full = a_full.adjoint().matmul(&a_full);
            a_ops.push(a_full);
            n_ops.push(n_full);
        }
        let mut h_full = layout.embed(h_a, "atom")?;
        for (k, mode) in modes.iter().enumerate() {
            h_full.axpy(C64::new(mode.delta, 0.0), &n_ops[k]);
            if mode.g != 0.0 {
                let l_full = layout.embed(&mode.coupling_op, "atom")?;
                let ldag_full = layout.embed(&mode.coupling_op.adjoint(), "atom")?;
                // g (L^dag a + L a^dag)
                matmul_acc(&mut h_full, C64::new(mode.g, 0.0), &ldag_full, &a_ops[k]);
                matmul_acc(
                    &mut h_full,
                    C64::new(mode.g, 0.0),
                    &l_full,
                    &a_ops[k].adjoint(),
                );
            }
        }
        Ok(Self {
            layout,
            modes: modes.to_vec(),
            cutoffs: cutoffs.to_vec(),
            h_full,
            a_ops,
            n_ops,
            atom_dim: h_a.dim(),
        })
    }

    pub fn full_dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn a_op(&self, k: usize) -> &OperatorMatrix {
        &self.a_ops[k]
    }

    pub fn n_op(&self, k: usize) -> &OperatorMatrix {
        &self.n_ops[k]
    }

    /// Initial product state atom ⊗ vacuum ⊗ ... ⊗ vacuum.
    pub fn vacuum_pure(&self, atom_vec: &[C64]) -> FullState {
        assert_eq!(atom_vec.len(), self.atom_dim);
        let fock: usize = self.cutoffs.iter().product();
        let mut v = vec![Complex::new(0.0, 0.0); self.full_dim()];
        // vacuum of every mode is index 0 of each Fock factor
        for (i, amp) in atom_vec.iter().enumerate() {
            v[i * fock] = *amp;
        }
        FullState::Pure(v)
    }

    pub fn vacuum_density(&self, rho_atom: &OperatorMatrix) -> Result<FullState> {
        let mut vac = OperatorMatrix::zeros(self.cutoffs.iter().product());
        vac[(0, 0)] = ONE;
        Ok(FullState::Density(kron_compose(&[rho_atom, &vac])?))
    }

    /// Population of the top Fock level of mode k; the cutoff guard.
    pub fn top_level_population(&self, state: &FullState, k: usize) -> f64 {
        let dims: Vec<usize> = self.layout.factors().iter().map(|(_, d)| *d).collect();
        let mut stride = vec![1usize; dims.len()];
        for f in (0..dims.len() - 1).rev() {
            stride[f] = stride[f + 1] * dims[f + 1];
        }
        let factor = k + 1;
        let top = dims[factor] - 1;
        let full = self.full_dim();
        let mut pop = 0.0;
        for idx in 0..full {
            if (idx / stride[factor]) % dims[factor] == top {
                pop += match state {
                    FullState::Pure(v) => v[idx].norm_sqr(),
                    FullState::Density(m) => m[(idx, idx)].re,
                };
            }
        }
        pop
    }

    fn check_leakage(&self, state: &FullState) -> Result<()> {
        for k in 0..self.modes.len() {
            let pop = self.top_level_population(state, k);
            if pop > LEAKAGE_LIMIT {
                return Err(Error::CutoffTooSmall { mode: k, pop });
            }
        }
        Ok(())
    }

    fn expect_pure(op: &OperatorMatrix, v: &[C64]) -> C64 {
        let av = op.apply(v);
        v.iter().zip(av.iter()).map(|(x, y)| x.conj() * y).sum()
    }

    /// <op> on either state form.
    pub fn expectation(&self, op: &OperatorMatrix, state: &FullState) -> C64 {
        match state {
            FullState::Pure(v) => Self::expect_pure(op, v),
            FullState::Density(rho) => op.trace_of_product(rho),
        }
    }
}

fn normalize_pure(v: &mut [C64]) -> Result<f64> {
    let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if !n2.is_finite() || n2 < 0.25 {
        return Err(Error::Diverged(n2));
    }
    let inv = 1.0 / n2.sqrt();
    for z in v.iter_mut() {
        *z *= inv;
    }
    Ok(n2)
}

/// One Euler–Maruyama step of the homodyne stochastic Schrödinger equation;
/// consumes one real increment per homodyne mode, in mode order.
pub fn sse_homodyne_step(
    state: &mut FullState,
    ops: &FullOps,
    dt: f64,
    dw: &[f64],
) -> Result<()> {
    let FullState::Pure(v) = state else {
        return Err(Error::DimensionMismatch("SSE step needs a pure state".into()));
    };
    let mut delta: Vec<C64> = ops.h_full.apply(v).into_iter().map(|z| -I * z * dt).collect();
    let mut wi = 0usize;
    for (k, mode) in ops.modes.iter().enumerate() {
        if mode.detection != Detection::Homodyne {
            continue;
        }
        let kappa = mode.kappa;
        let sqrt2k = (2.0 * kappa).sqrt();
        let a_v = ops.a_ops[k].apply(v);
        let n_v = ops.n_ops[k].apply(v);
        let a_mean = FullOps::expect_pure(&ops.a_ops[k], v);
        let x = 2.0 * a_mean.re;
        let dwk = dw[wi];
        wi += 1;
        for i in 0..v.len() {
            delta[i] += dt
                * (C64::new(-kappa, 0.0) * n_v[i]
                    + C64::new(kappa * x, 0.0) * a_v[i]
                    + C64::new(-kappa / 4.0 * x * x, 0.0) * v[i]);
            delta[i] +=
                dwk * (C64::new(sqrt2k, 0.0) * a_v[i] - C64::new(0.5 * sqrt2k * x, 0.0) * v[i]);
        }
    }
    debug_assert_eq!(wi, dw.len());
    for (x, d) in v.iter_mut().zip(delta.iter()) {
        *x += d;
    }
    normalize_pure(v)?;
    ops.check_leakage(state)
}

/// One Euler–Maruyama step of the homodyne stochastic master equation;
/// `dw[k] = None` drops mode k's stochastic line (unmonitored / averaged),
/// which recovers the Lindblad equation.
pub fn sme_homodyne_step(
    state: &mut FullState,
    ops: &FullOps,
    dt: f64,
    dw: &[Option<f64>],
) -> Result<()> {
    let FullState::Density(rho) = state else {
        return Err(Error::DimensionMismatch("SME step needs a density matrix".into()));
    };
    assert_eq!(dw.len(), ops.modes.len());
    let dim = rho.dim();
    let mut delta = OperatorMatrix::zeros(dim);
    lindblad_rhs_acc(ops, rho, C64::new(dt, 0.0), &mut delta);
    for (k, mode) in ops.modes.iter().enumerate() {
        let Some(dwk) = dw[k] else { continue };
        if dwk == 0.0 {
            continue;
        }
        let sqrt2k = (2.0 * mode.kappa).sqrt();
        let a_mean = ops.a_ops[k].trace_of_product(rho);
        let x = 2.0 * a_mean.re;
        let coef = C64::new(sqrt2k * dwk, 0.0);
        // sqrt(2k)((a - <a>) rho + rho (a^dag - <a^dag>)) dW
        matmul_acc(&mut delta, coef, &ops.a_ops[k], rho);
        matmul_acc(&mut delta, coef, rho, &ops.a_ops[k].adjoint());
        delta.axpy(-coef * x, rho);
    }
    rho.axpy(ONE, &delta);
    let tr = rho.trace().re;
    if !tr.is_finite() || tr < 0.5 {
        return Err(Error::Diverged(tr));
    }
    rho.scale_mut(C64::new(1.0 / tr, 0.0));
    ops.check_leakage(state)
}

/// scale * (-i[H, rho] + sum_k kappa_k (2 a rho a^dag - {a^dag a, rho}))
fn lindblad_rhs_acc(ops: &FullOps, rho: &OperatorMatrix, scale: C64, out: &mut OperatorMatrix) {
    crate::operators::commutator_acc(out, -I * scale, &ops.h_full, rho);
    for (k, mode) in ops.modes.iter().enumerate() {
        let kappa = C64::new(mode.kappa, 0.0);
        let mut a_rho = OperatorMatrix::zeros(rho.dim());
        matmul_acc(&mut a_rho, ONE, &ops.a_ops[k], rho);
        matmul_acc(out, 2.0 * kappa * scale, &a_rho, &ops.a_ops[k].adjoint());
        matmul_acc(out, -kappa * scale, &ops.n_ops[k], rho);
        matmul_acc(out, -kappa * scale, rho, &ops.n_ops[k]);
    }
}

/// Classical fourth-order step of the deterministic Lindblad equation; the
/// unbiased reference for ensemble averages.
pub fn lindblad_rk4_step(rho: &mut OperatorMatrix, ops: &FullOps, dt: f64) {
    let dim = rho.dim();
    let mut k1 = OperatorMatrix::zeros(dim);
    lindblad_rhs_acc(ops, rho, ONE, &mut k1);
    let mut tmp = rho.clone();
    tmp.axpy(C64::new(0.5 * dt, 0.0), &k1);
    let mut k2 = OperatorMatrix::zeros(dim);
    lindblad_rhs_acc(ops, &tmp, ONE, &mut k2);
    tmp = rho.clone();
    tmp.axpy(C64::new(0.5 * dt, 0.0), &k2);
    let mut k3 = OperatorMatrix::zeros(dim);
    lindblad_rhs_acc(ops, &tmp, ONE, &mut k3);
    tmp = rho.clone();
    tmp.axpy(C64::new(dt, 0.0), &k3);
    let mut k4 = OperatorMatrix::zeros(dim);
    lindblad_rhs_acc(ops, &tmp, ONE, &mut k4);
    rho.axpy(C64::new(dt / 6.0, 0.0), &k1);
    rho.axpy(C64::new(dt / 3.0, 0.0), &k2);
    rho.axpy(C64::new(dt / 3.0, 0.0), &k3);
    rho.axpy(C64::new(dt / 6.0, 0.0), &k4);
}

/// One Euler–Maruyama step of the heterodyne SSE; one complex increment per
/// heterodyne mode, in mode order.
pub fn sse_heterodyne_step(
    state: &mut FullState,
    ops: &FullOps,
    dt: f64,
    dwc: &[C64],
) -> Result<()> {
    let FullState::Pure(v) = state else {
        return Err(Error::DimensionMismatch("SSE step needs a pure state".into()));
    };
    let mut delta: Vec<C64> = ops.h_full.apply(v).into_iter().map(|z| -I * z * dt).collect();
    let mut wi = 0usize;
    for (k, mode) in ops.modes.iter().enumerate() {
        if mode.detection != Detection::Heterodyne {
            continue;
        }
        let kappa = mode.kappa;
        let sqrt2k = (2.0 * kappa).sqrt();
        let a_v = ops.a_ops[k].apply(v);
        let n_v = ops.n_ops[k].apply(v);
        let a_mean = FullOps::expect_pure(&ops.a_ops[k], v);
        let dwck = dwc[wi];
        wi += 1;
        let drift_scalar = C64::new(-kappa * a_mean.norm_sqr(), 0.0);
        let gain = 2.0 * kappa * a_mean.conj();
        for i in 0..v.len() {
            delta[i] +=
                dt * (C64::new(-kappa, 0.0) * n_v[i] + gain * a_v[i] + drift_scalar * v[i]);
            delta[i] += sqrt2k * dwck * (a_v[i] - a_mean * v[i]);
        }
    }
    debug_assert_eq!(wi, dwc.len());
    for (x, d) in v.iter_mut().zip(delta.iter()) {
        *x += d;
    }
    normalize_pure(v)?;
    ops.check_leakage(state)
}

/// One Euler–Maruyama step of the heterodyne SME (used for shared-path
/// image checks): noise line sqrt(2k)((a - <a>) rho dWc + rho (a^dag -
/// <a^dag>) dWc*).
pub fn sme_heterodyne_step(
    state: &mut FullState,
    ops: &FullOps,
    dt: f64,
    dwc: &[Option<C64>],
) -> Result<()> {
    let FullState::Density(rho) = state else {
        return Err(Error::DimensionMismatch("SME step needs a density matrix".into()));
    };
    let dim = rho.dim();
    let mut delta = OperatorMatrix::zeros(dim);
    lindblad_rhs_acc(ops, rho, C64::new(dt, 0.0), &mut delta);
    for (k, mode) in ops.modes.iter().enumerate() {
        let Some(dwck) = dwc[k] else { continue };
        let sqrt2k = (2.0 * mode.kappa).sqrt();
        let a_mean = ops.a_ops[k].trace_of_product(rho);
        let cw = C64::new(sqrt2k, 0.0) * dwck;
        matmul_acc(&mut delta, cw, &ops.a_ops[k], rho);
        delta.axpy(-cw * a_mean, rho);
        let cwc = C64::new(sqrt2k, 0.0) * dwck.conj();
        matmul_acc(&mut delta, cwc, rho, &ops.a_ops[k].adjoint());
        delta.axpy(-cwc * a_mean.conj(), rho);
    }
    rho.axpy(ONE, &delta);
    let tr = rho.trace().re;
    if !tr.is_finite() || tr < 0.5 {
        return Err(Error::Diverged(tr));
    }
    rho.scale_mut(C64::new(1.0 / tr, 0.0));
    ops.check_leakage(state)
}

/// One Euler–Maruyama step of the homodyne SME with instantaneous
/// current feedback H_fb = J_hom F on mode `fb_mode` (F given on the full
/// space): adds -i[F, sqrt(2k)(a rho + rho a^dag)] dt + (F rho F
/// - {F^2, rho}/2) dt - i[F, rho] dW on top of [`sme_homodyne_step`].
pub fn sme_homodyne_feedback_step(
    state: &mut FullState,
    ops: &FullOps,
    fb_mode: usize,
    f_full: &OperatorMatrix,
    dt: f64,
    dw: &[Option<f64>],
) -> Result<()> {
    let FullState::Density(rho) = state else {
        return Err(Error::DimensionMismatch("SME step needs a density matrix".into()));
    };
    let dim = rho.dim();
    let mut delta = OperatorMatrix::zeros(dim);
    lindblad_rhs_acc(ops, rho, C64::new(dt, 0.0), &mut delta);
    for (k, mode) in ops.modes.iter().enumerate() {
        let Some(dwk) = dw[k] else { continue };
        let sqrt2k = (2.0 * mode.kappa).sqrt();
        let a_mean = ops.a_ops[k].trace_of_product(rho);
        let x = 2.0 * a_mean.re;
        let coef = C64::new(sqrt2k * dwk, 0.0);
        matmul_acc(&mut delta, coef, &ops.a_ops[k], rho);
        matmul_acc(&mut delta, coef, rho, &ops.a_ops[k].adjoint());
        delta.axpy(-coef * x, rho);
    }
    // feedback terms
    let mode = &ops.modes[fb_mode];
    let sqrt2k = (2.0 * mode.kappa).sqrt();
    let mut flow = OperatorMatrix::zeros(dim);
    // sqrt(2k)(a rho + rho a^dag)
    matmul_acc(&mut flow, C64::new(sqrt2k, 0.0), &ops.a_ops[fb_mode], rho);
    matmul_acc(&mut flow, C64::new(sqrt2k, 0.0), rho, &ops.a_ops[fb_mode].adjoint());
    crate::operators::commutator_acc(&mut delta, -I * C64::new(dt, 0.0), f_full, &flow);
    let mut f_rho = OperatorMatrix::zeros(dim);
    matmul_acc(&mut f_rho, ONE, f_full, rho);
    matmul_acc(&mut delta, C64::new(dt, 0.0), &f_rho, f_full);
    let f_sq = f_full.matmul(f_full);
    matmul_acc(&mut delta, C64::new(-0.5 * dt, 0.0), &f_sq, rho);
    matmul_acc(&mut delta, C64::new(-0.5 * dt, 0.0), rho, &f_sq);
    if let Some(dwk) = dw[fb_mode] {
        crate::operators::commutator_acc(&mut delta, -I * dwk, f_full, rho);
    }
    rho.axpy(ONE, &delta);
    let tr = rho.trace().re;
    if !tr.is_finite() || tr < 0.5 {
        return Err(Error::Diverged(tr));
    }
    rho.scale_mut(C64::new(1.0 / tr, 0.0));
    ops.check_leakage(state)
}

/// One step of the photodetection SSE: piecewise-deterministic non-Hermitian
/// evolution; a jump applies the annihilation operator and renormalizes.
/// Rates use the left-endpoint state. Returns the modes that jumped.
pub fn sse_jump_step(
    state: &mut FullState,
    ops: &FullOps,
    dt: f64,
    drivers: &mut [Option<JumpDriver>],
    step_index: usize,
) -> Result<Vec<usize>> {
    let FullState::Pure(v) = state else {
        return Err(Error::DimensionMismatch("SSE step needs a pure state".into()));
    };
    let mut rates = vec![0.0; ops.modes.len()];
    for (k, mode) in ops.modes.iter().enumerate() {
        if mode.detection == Detection::Photodetect {
            rates[k] = 2.0 * mode.kappa * FullOps::expect_pure(&ops.n_ops[k], v).re;
        }
    }
    let mut delta: Vec<C64> = ops.h_full.apply(v).into_iter().map(|z| -I * z * dt).collect();
    for (k, mode) in ops.modes.iter().enumerate() {
        if mode.detection != Detection::Photodetect {
            continue;
        }
        let n_v = ops.n_ops[k].apply(v);
        let mean_n = rates[k] / (2.0 * mode.kappa);
        for i in 0..v.len() {
            delta[i] += dt * C64::new(mode.kappa, 0.0) * (C64::new(mean_n, 0.0) * v[i] - n_v[i]);
        }
    }
    for (x, d) in v.iter_mut().zip(delta.iter()) {
        *x += d;
    }
    let mut jumped = Vec::new();
    for (k, mode) in ops.modes.iter().enumerate() {
        if mode.detection != Detection::Photodetect {
            continue;
        }
        let Some(driver) = drivers.get_mut(k).and_then(|d| d.as_mut()) else { continue };
        if driver.advance(rates[k] * dt, step_index) {
            let mean_n = FullOps::expect_pure(&ops.n_ops[k], v).re;
            if mean_n < JUMP_RATE_MIN {
                return Err(Error::JumpFromEmptyMode);
            }
            let new_v = ops.a_ops[k].apply(v);
            v.copy_from_slice(&new_v);
            // the jump map renormalizes by construction: psi -> a psi / sqrt(<n>)
            let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            let inv = 1.0 / n2.sqrt();
            for z in v.iter_mut() {
                *z *= inv;
            }
            jumped.push(k);
        }
    }
    normalize_pure(v)?;
    ops.check_leakage(state)?;
    Ok(jumped)
}

/// Reduced atom state tr_C of a full state.
pub fn reduced_state(state: &FullState, ops: &FullOps) -> Result<OperatorMatrix> {
    partial_trace(&state.density(), &ops.layout, &["atom"])
}

/// The moment map from a full density matrix onto the hierarchy:
/// rho^(n,m) = prod_k (i g_k)^{n_k} (-i g_k)^{m_k} tr_C [a^n rho a^dag^m].
///
/// This is the exact image the conditioned hierarchy evolves, so it turns
/// the full-system solvers into an oracle for every auxiliary matrix.
pub fn hierarchy_image(
    state: &FullState,
    ops: &FullOps,
    engine_ops: &EngineOps,
    space: &std::sync::Arc<HierarchySpace>,
) -> Result<HierarchyState> {
    let rho_full = state.density();
    let mut mats = Vec::with_capacity(space.len());
    for ix in &space.indices {
        let mut m = rho_full.clone();
        let mut coef = ONE;
        for k in 0..space.n_modes {
            let g = engine_ops.modes[k].g;
            for _ in 0..ix.n[k] {
                m = ops.a_ops[k].matmul(&m);
                coef *= I * g;
            }
            if ix.m[k] > 0 {
                let adag = ops.a_ops[k].adjoint();
                for _ in 0..ix.m[k] {
                    m = m.matmul(&adag);
                    coef *= -I * g;
                }
            }
        }
        let mut reduced = partial_trace(&m, &ops.layout, &["atom"])?;
        reduced.scale_mut(coef);
        mats.push(reduced);
    }
    Ok(HierarchyState::from_matrices(space.clone(), mats, 0.0))
}
