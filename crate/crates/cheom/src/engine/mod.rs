//! The conditioned hierarchy: auxiliary atom-space density matrices indexed
//! by per-mode excitation multi-indices, evolved under multimode homodyne /
//! heterodyne / photodetection monitoring with optional instantaneous
//! feedback, in Ito or Stratonovich form, plus the Redfield and bad-cavity
//! reductions.
//!
//! The physical conditioned state of the atoms is the matrix at the zero
//! multi-index; everything else carries mode-excitation information. In a
//! trajectory the whole hierarchy is rescaled by 1/tr rho^(0,0) after each
//! step, which removes integrator trace drift without distorting moment
//! ratios (the moment formula is homogeneous of degree one).

use std::collections::HashMap;
use std::sync::Arc;

use crate::operators::{C64, OperatorMatrix};
use crate::{Error, Result};

mod redfield;
mod stepper;
mod terms;

pub use redfield::{
    bad_cavity_pure_step, bad_cavity_step, conditioned_redfield_step, redfield_operator,
};
pub use stepper::{ModeIncrement, StepReport, Stepper};
pub use terms::{
    dynamic_lambda, feedback_increment, heom_drift, heterodyne_stochastic_term, homodyne_current,
    homodyne_stochastic_term, moments, operator_quadrature_correlation, photon_number,
    quadrature_expectation,
};

/// How a mode's output field is monitored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Homodyne,
    Heterodyne,
    Photodetect,
    Unmonitored,
}

/// Physical parameters of one lossy bosonic mode coupled to the atoms.
#[derive(Debug, Clone)]
pub struct ModeSpec {
    /// Coupling strength (real; complex phases are absorbed into the
    /// coupling operator).
    pub g: f64,
    /// Detuning.
    pub delta: f64,
    /// Decay rate, > 0.
    pub kappa: f64,
    /// Atom-space coupling operator L_k.
    pub coupling_op: OperatorMatrix,
    pub detection: Detection,
}

impl ModeSpec {
    /// Complex rate w = kappa + i delta appearing in the hierarchy damping.
    pub fn w(&self) -> C64 {
        C64::new(self.kappa, self.delta)
    }
}

/// Hierarchy multi-index: one (n_k, m_k) pair per mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    pub n: Vec<u16>,
    pub m: Vec<u16>,
}

impl MultiIndex {
    pub fn zero(n_modes: usize) -> Self {
        Self { n: vec![0; n_modes], m: vec![0; n_modes] }
    }

    pub fn depth(&self) -> u32 {
        self.n.iter().chain(self.m.iter()).map(|&x| x as u32).sum()
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n={:?}, m={:?}", self.n, self.m)
    }
}

/// Closed-form count of retained auxiliaries,
/// K = (2M + k_max)! / ((2M)! k_max!).
pub fn auxiliary_count(n_modes: usize, k_max: usize) -> Result<u128> {
    // binomial(2M + k, k) with overflow checks
    let mut acc: u128 = 1;
    let two_m = 2 * n_modes as u128;
    for i in 1..=(k_max as u128) {
        acc = acc
            .checked_mul(two_m + i)
            .ok_or_else(|| Error::IndexCountOverflow(format!("M={n_modes}, k_max={k_max}")))?;
        acc /= i; // exact at every step: product of i consecutive integers
    }
    Ok(acc)
}

/// All multi-indexes with total depth <= k_max in graded lexicographic
/// order (by depth, then lexicographically on the concatenated (n, m)
/// vector), plus the closed-form count.
pub fn enumerate_indices(n_modes: usize, k_max: usize) -> Result<(Vec<MultiIndex>, u128)> {
    assert!(n_modes >= 1);
    let k = auxiliary_count(n_modes, k_max)?;
    if k > usize::MAX as u128 {
        return Err(Error::IndexCountOverflow(format!(
            "K = {k} exceeds addressable size"
        )));
    }
    let slots = 2 * n_modes;
    let mut out: Vec<MultiIndex> = Vec::with_capacity(k as usize);
    let mut current = vec![0u16; slots];
    for depth in 0..=k_max as u32 {
        emit_compositions(&mut out, &mut current, 0, depth, n_modes);
    }
    debug_assert_eq!(out.len() as u128, k);
    Ok((out, k))
}

fn emit_compositions(
    out: &mut Vec<MultiIndex>,
    current: &mut Vec<u16>,
    slot: usize,
    remaining: u32,
    n_modes: usize,
) {
    let slots = current.len();
    if slot == slots {
        if remaining == 0 {
            out.push(MultiIndex {
                n: current[..n_modes].to_vec(),
                m: current[n_modes..].to_vec(),
            });
        }
        return;
    }
    if slot == slots - 1 {
        current[slot] = remaining as u16;
        emit_compositions(out, current, slot + 1, 0, n_modes);
        current[slot] = 0;
        return;
    }
    for v in 0..=remaining {
        current[slot] = v as u16;
        emit_compositions(out, current, slot + 1, remaining - v, n_modes);
    }
    current[slot] = 0;
}

const NONE: usize = usize::MAX;

/// Immutable index bookkeeping shared by all states of one scenario:
/// the retained multi-indexes in canonical order and, per index and mode,
/// the positions of every neighbor the evolution equations reference.
/// Neighbors outside the truncation read as `None` and contribute zero.
#[derive(Debug)]
pub struct HierarchySpace {
    pub n_modes: usize,
    pub k_max: usize,
    pub indices: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
    // flattened [index * n_modes + mode]
    up_n: Vec<usize>,
    up_m: Vec<usize>,
    down_n: Vec<usize>,
    down_m: Vec<usize>,
    up_nm: Vec<usize>,
    up2_n: Vec<usize>,
    up2_m: Vec<usize>,
}

impl HierarchySpace {
    pub fn new(n_modes: usize, k_max: usize) -> Result<Arc<Self>> {
        let (indices, _) = enumerate_indices(n_modes, k_max)?;
        let position: HashMap<MultiIndex, usize> =
            indices.iter().enumerate().map(|(i, ix)| (ix.clone(), i)).collect();
        let len = indices.len() * n_modes;
        let mut space = Self {
            n_modes,
            k_max,
            indices,
            position,
            up_n: vec![NONE; len],
            up_m: vec![NONE; len],
            down_n: vec![NONE; len],
            down_m: vec![NONE; len],
            up_nm: vec![NONE; len],
            up2_n: vec![NONE; len],
            up2_m: vec![NONE; len],
        };
        let lookup = |pos: &HashMap<MultiIndex, usize>, ix: &MultiIndex| -> usize {
            pos.get(ix).copied().unwrap_or(NONE)
        };
        for i in 0..space.indices.len() {
            for k in 0..n_modes {
                let base = space.indices[i].clone();
                let slot = i * n_modes + k;
                let mut ix = base.clone();
                ix.n[k] += 1;
                space.up_n[slot] = lookup(&space.position, &ix);
                ix.n[k] += 1;
                space.up2_n[slot] = lookup(&space.position, &ix);
                let mut ix = base.clone();
                ix.m[k] += 1;
                space.up_m[slot] = lookup(&space.position, &ix);
                ix.m[k] += 1;
                space.up2_m[slot] = lookup(&space.position, &ix);
                let mut ix = base.clone();
                ix.n[k] += 1;
                ix.m[k] += 1;
                space.up_nm[slot] = lookup(&space.position, &ix);
                if base.n[k] > 0 {
                    let mut ix = base.clone();
                    ix.n[k] -= 1;
                    space.down_n[slot] = lookup(&space.position, &ix);
                }
                if base.m[k] > 0 {
                    let mut ix = base.clone();
                    ix.m[k] -= 1;
                    space.down_m[slot] = lookup(&space.position, &ix);
                }
            }
        }
        Ok(Arc::new(space))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position_of(&self, ix: &MultiIndex) -> Option<usize> {
        self.position.get(ix).copied()
    }

    #[inline]
    fn nb(&self, table: &[usize], i: usize, k: usize) -> Option<usize> {
        let v = table[i * self.n_modes + k];
        (v != NONE).then_some(v)
    }

    #[inline]
    pub fn up_n(&self, i: usize, k: usize) -> Option<usize> {
        self.nb(&self.up_n, i, k)
    }

    #[inline]
    pub fn up_m(&self, i: usize, k: usize) -> Option<usize> {
        self.nb(&self.up_m, i, k)
    }

    #[inline]
    pub fn down_n(&self, i: usize, k: usize) -> Option<usize> {
        self.nb(&self.down_n, i, k)
    }

    #[inline]
    pub fn down_m(&self, i: usize, k: usize) -> Option<usize> {
        self.nb(&self.down_m, i, k)
    }

    #[inline]
    pub fn up_nm(&self, i: usize, k: usize) -> Option<usize> {
        self.nb(&self.up_nm, i, k)
    }

    #[inline]
    pub fn up2_n(&self, i: usize, k: usize) -> Option<usize> {
        self.nb(&self.up2_n, i, k)
    }

    #[inline]
    pub fn up2_m(&self, i: usize, k: usize) -> Option<usize> {
        self.nb(&self.up2_m, i, k)
    }

    /// Position of the first-level index (e_k, 0) / (0, e_k).
    pub fn first_level(&self, k: usize, conjugate: bool) -> Option<usize> {
        if self.k_max == 0 {
            return None;
        }
        let zero = 0usize; // index 0 is always (0,0) in graded order
        if conjugate {
            self.up_m(zero, k)
        } else {
            self.up_n(zero, k)
        }
    }
}

/// The object evolved by the conditioned hierarchy: one atom-space matrix
/// per retained multi-index, plus the current time.
#[derive(Debug, Clone)]
pub struct HierarchyState {
    pub space: Arc<HierarchySpace>,
    pub matrices: Vec<OperatorMatrix>,
    pub time: f64,
}

impl HierarchyState {
    /// Vacuum-cavity initial condition: rho^(0,0) = `rho_atom`, all higher
    /// auxiliaries zero.
    pub fn vacuum(space: Arc<HierarchySpace>, rho_atom: OperatorMatrix) -> Self {
        let dim = rho_atom.dim();
        let mut matrices = vec![OperatorMatrix::zeros(dim); space.len()];
        matrices[0] = rho_atom;
        Self { space, matrices, time: 0.0 }
    }

    pub fn from_matrices(
        space: Arc<HierarchySpace>,
        matrices: Vec<OperatorMatrix>,
        time: f64,
    ) -> Self {
        assert_eq!(matrices.len(), space.len());
        Self { space, matrices, time }
    }

    pub fn atom_dim(&self) -> usize {
        self.matrices[0].dim()
    }

    /// The physical conditioned reduced state rho^(0,0).
    pub fn physical(&self) -> &OperatorMatrix {
        &self.matrices[0]
    }

    pub fn matrix(&self, ix: &MultiIndex) -> Result<&OperatorMatrix> {
        let pos = self
            .space
            .position_of(ix)
            .ok_or_else(|| Error::IndexNotRetained(ix.to_string()))?;
        Ok(&self.matrices[pos])
    }

    /// Rescales the whole hierarchy by 1/tr rho^(0,0).
    pub fn renormalize(&mut self) -> Result<f64> {
        let tr = self.matrices[0].trace().re;
        if !tr.is_finite() || tr < 0.5 {
            return Err(Error::Diverged(tr));
        }
        let s = C64::new(1.0 / tr, 0.0);
        for m in &mut self.matrices {
            m.scale_mut(s);
        }
        Ok(tr)
    }

    /// Largest Hermitian-pairing defect max_k ||rho^(m,n) - rho^(n,m)^dag||.
    pub fn pairing_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, ix) in self.space.indices.iter().enumerate() {
            let swapped = MultiIndex { n: ix.m.clone(), m: ix.n.clone() };
            if let Some(j) = self.space.position_of(&swapped) {
                if j < i {
                    continue;
                }
                let d = self.matrices[j].sub(&self.matrices[i].adjoint()).max_abs();
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// Piecewise-constant feedback strength schedule; the last piece extends to
/// infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSchedule {
    /// (until_time, lambda) pairs with strictly increasing times.
    pieces: Vec<(f64, f64)>,
}

impl LambdaSchedule {
    pub fn constant(lambda: f64) -> Self {
        Self { pieces: vec![(f64::INFINITY, lambda)] }
    }

    /// `switch_points` are (until, lambda) pairs; the final lambda applies
    /// from the last switch time onward.
    pub fn piecewise(mut pieces: Vec<(f64, f64)>, final_lambda: f64) -> Self {
        pieces.push((f64::INFINITY, final_lambda));
        Self { pieces }
    }

    pub fn value(&self, t: f64) -> f64 {
        for &(until, lambda) in &self.pieces {
            if t < until {
                return lambda;
            }
        }
        self.pieces.last().map(|&(_, l)| l).unwrap_or(0.0)
    }
}

/// How the feedback strength is chosen each step.
#[derive(Debug, Clone)]
pub enum FeedbackLaw {
    Schedule(LambdaSchedule),
    /// lambda(t) = 2 kappa <corr_op X> / <denom_op>, evaluated on the
    /// hierarchy itself. When the denominator expectation falls below the
    /// guard, `hold_last` keeps the previous finite lambda instead of
    /// erroring mid-run.
    Dynamic {
        corr_op: OperatorMatrix,
        denom_op: OperatorMatrix,
        hold_last: bool,
    },
}

/// Instantaneous feedback driven by the homodyne current of one mode:
/// H_fb = J_hom * lambda(t)/sqrt(2 kappa) * operator.
#[derive(Debug, Clone)]
pub struct FeedbackSpec {
    pub mode_index: usize,
    /// Hermitian feedback direction (e.g. J_y); the effective operator is
    /// lambda(t)/sqrt(2 kappa) times this.
    pub operator: OperatorMatrix,
    pub law: FeedbackLaw,
}

impl FeedbackSpec {
    pub fn validate(&self, modes: &[ModeSpec]) -> Result<()> {
        if !self.operator.is_hermitian_within(1e-12) {
            return Err(Error::FeedbackNotHermitian);
        }
        match modes.get(self.mode_index) {
            Some(m) if m.detection == Detection::Homodyne => Ok(()),
            _ => Err(Error::FeedbackModeNotHomodyne(self.mode_index)),
        }
    }
}

/// Immutable per-scenario operator cache shared across trajectories.
#[derive(Debug, Clone)]
pub struct EngineOps {
    pub h_a: OperatorMatrix,
    pub modes: Vec<ModeSpec>,
    mode_l_dag: Vec<OperatorMatrix>,
    fb_op_sq: Option<OperatorMatrix>,
}

impl EngineOps {
    pub fn new(h_a: OperatorMatrix, modes: Vec<ModeSpec>, fb: Option<&FeedbackSpec>) -> Result<Self> {
        let dim = h_a.dim();
        for (k, m) in modes.iter().enumerate() {
            if m.coupling_op.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "coupling operator of mode {k} has dim {} but H_A has dim {dim}",
                    m.coupling_op.dim()
                )));
            }
            if !(m.kappa > 0.0) {
                return Err(Error::DimensionMismatch(format!(
                    "mode {k} must have kappa > 0"
                )));
            }
        }
        if let Some(fb) = fb {
            fb.validate(&modes)?;
            if fb.operator.dim() != dim {
                return Err(Error::DimensionMismatch(
                    "feedback operator dimension mismatch".into(),
                ));
            }
        }
        let mode_l_dag = modes.iter().map(|m| m.coupling_op.adjoint()).collect();
        let fb_op_sq = fb.map(|f| f.operator.matmul(&f.operator));
        Ok(Self { h_a, modes, mode_l_dag, fb_op_sq })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn l_dag(&self, k: usize) -> &OperatorMatrix {
        &self.mode_l_dag[k]
    }

    pub(crate) fn fb_op_sq(&self) -> Option<&OperatorMatrix> {
        self.fb_op_sq.as_ref()
    }
}
