//! Scenario builders, trajectory and ensemble execution with deterministic
//! parallel seeding, the deterministic feedback master equation, and the
//! benchmark studies.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::engine::{
    Detection, EngineOps, FeedbackLaw, FeedbackSpec, HierarchySpace, HierarchyState,
    LambdaSchedule, ModeIncrement, ModeSpec, Stepper,
};
use crate::noise::{draw_complex_wiener, draw_wiener, mode_seed, JumpDriver, NoiseStream};
use crate::operators::{
    collective_spin, unitary_from_hermitian, C64, HilbertSpaceLayout,
    OperatorMatrix, SpinAxis,
};
use crate::{Error, Result};

mod ensemble;
mod observables;
mod studies;

pub use ensemble::{run_ensemble, EnsembleStats};
pub use observables::Observable;
pub use studies::{
    feedback_master_equation, lambda_scan, oracle_compare, switching_protocol, DeterministicRun,
    OracleComparison, ScanPoint,
};

/// Collective-spin bookkeeping for scenarios whose atoms form one symmetric
/// spin sector.
#[derive(Debug, Clone)]
pub struct SpinContext {
    pub n_atoms: usize,
    pub jx: OperatorMatrix,
    pub jy: OperatorMatrix,
    pub jz: OperatorMatrix,
}

impl SpinContext {
    fn new(n_atoms: usize) -> Self {
        Self {
            n_atoms,
            jx: collective_spin(n_atoms, SpinAxis::X),
            jy: collective_spin(n_atoms, SpinAxis::Y),
            jz: collective_spin(n_atoms, SpinAxis::Z),
        }
    }
}

/// Complete declarative description of one experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// Which base frequency all rates are expressed in ("omega" or "Omega").
    pub unit_frequency: String,
    pub h_a: OperatorMatrix,
    pub modes: Vec<ModeSpec>,
    pub initial_rho: OperatorMatrix,
    /// Pure-state form of the initial atom state when one exists (needed by
    /// the SSE oracle).
    pub initial_pure: Option<Vec<C64>>,
    /// Cluster structure of the atom space, when there is one.
    pub atom_layout: Option<HilbertSpaceLayout>,
    pub spin: Option<SpinContext>,
    pub k_max: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Record observables every this many steps.
    pub sample_every: usize,
    pub feedback: Option<FeedbackSpec>,
    pub trajectories: usize,
    pub master_seed: u64,
    pub outputs: Vec<Observable>,
    /// Jump-rate ordering switch of the auxiliary-trace photon number.
    pub theta: f64,
    /// Per-mode Fock cutoffs for oracle comparisons.
    pub fock_cutoffs: Vec<usize>,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }

    pub fn engine_ops(&self) -> Result<EngineOps> {
        EngineOps::new(self.h_a.clone(), self.modes.clone(), self.feedback.as_ref())
    }

    pub fn space(&self) -> Result<Arc<HierarchySpace>> {
        HierarchySpace::new(self.modes.len(), self.k_max)
    }

    /// Sampled time grid (step 0 included).
    pub fn sample_grid(&self) -> Vec<f64> {
        let steps = self.steps();
        (0..=steps)
            .filter(|s| s % self.sample_every == 0)
            .map(|s| s as f64 * self.dt)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config { path: "dt".into(), message: "must be positive".into() });
        }
        if !(self.t_final > 0.0) {
            return Err(Error::Config {
                path: "t_final".into(),
                message: "must be positive".into(),
            });
        }
        if self.sample_every == 0 {
            return Err(Error::Config {
                path: "sample_every".into(),
                message: "must be >= 1".into(),
            });
        }
        for (k, m) in self.modes.iter().enumerate() {
            if !(m.kappa > 0.0) {
                return Err(Error::Config {
                    path: format!("modes[{k}].kappa"),
                    message: "must be positive".into(),
                });
            }
            if !m.g.is_finite() || !m.delta.is_finite() {
                return Err(Error::Config {
                    path: format!("modes[{k}]"),
                    message: "non-finite parameters".into(),
                });
            }
            if m.coupling_op.dim() != self.h_a.dim() {
                return Err(Error::Config {
                    path: format!("modes[{k}].coupling_op"),
                    message: "dimension mismatch with H_A".into(),
                });
            }
        }
        if let Some(fb) = &self.feedback {
            fb.validate(&self.modes)?;
        }
        for obs in &self.outputs {
            obs.validate(self)?;
        }
        Ok(())
    }
}

/// Single-atom basis (|0>, |1>) operators for the Jaynes–Cummings builders.
pub fn pauli(axis: SpinAxis) -> OperatorMatrix {
    let mut m = OperatorMatrix::zeros(2);
    match axis {
        SpinAxis::X => {
            m[(0, 1)] = C64::new(1.0, 0.0);
            m[(1, 0)] = C64::new(1.0, 0.0);
        }
        SpinAxis::Y => {
            m[(0, 1)] = C64::new(0.0, -1.0);
            m[(1, 0)] = C64::new(0.0, 1.0);
        }
        SpinAxis::Z => {
            m[(0, 0)] = C64::new(-1.0, 0.0);
            m[(1, 1)] = C64::new(1.0, 0.0);
        }
    }
    m
}

fn sigma_minus() -> OperatorMatrix {
    let mut m = OperatorMatrix::zeros(2);
    m[(0, 1)] = C64::new(1.0, 0.0);
    m
}

/// How the atoms start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomInitial {
    /// Excited two-level atom |1>.
    Excited,
    /// Ground two-level atom |0>.
    Ground,
    /// (|0> + |1>)/sqrt(2).
    Plus,
    /// All spins down: product of |j, -j> per cluster.
    AllDown,
    /// Coherent spin state along +x (per cluster when clustered).
    CoherentX,
}

/// Single-mode monitored Jaynes–Cummings scenario; epsilon = 0 is the
/// undriven model.
pub fn build_jaynes_cummings(
    omega: f64,
    epsilon: f64,
    g: f64,
    delta: f64,
    kappa: f64,
    initial: AtomInitial,
) -> Result<Scenario> {
    let mut h_a = pauli(SpinAxis::Z).scaled(C64::new(omega / 2.0, 0.0));
    if epsilon != 0.0 {
        h_a.axpy(C64::new(epsilon / 2.0, 0.0), &pauli(SpinAxis::X));
    }
    let mode = ModeSpec {
        g,
        delta,
        kappa,
        coupling_op: sigma_minus(),
        detection: Detection::Homodyne,
    };
    let pure: Vec<C64> = match initial {
        AtomInitial::Excited => vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        AtomInitial::Ground => vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        AtomInitial::Plus => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            vec![C64::new(s, 0.0), C64::new(s, 0.0)]
        }
        other => {
            return Err(Error::Config {
                path: "system.initial".into(),
                message: format!("{other:?} is not a two-level initial state"),
            })
        }
    };
    Ok(Scenario {
        name: "jaynes_cummings".into(),
        unit_frequency: "omega".into(),
        h_a,
        modes: vec![mode],
        initial_rho: OperatorMatrix::projector(&pure),
        initial_pure: Some(pure),
        atom_layout: None,
        spin: None,
        k_max: 6,
        dt: 1e-3,
        t_final: 5.0,
        sample_every: 10,
        feedback: None,
        trajectories: 100,
        master_seed: 1,
        outputs: vec![Observable::Purity, Observable::Entropy],
        theta: 0.0,
        fock_cutoffs: vec![8],
    })
}

/// Clusters of collectively coupled atoms in a multimode cavity. The
/// interaction sum_ik g_ik J_i^x (a_k + a_k^dag) maps onto per-mode
/// couplings with g_k = max_i |g_ik| and Hermitian L_k = sum_i
/// (g_ik/g_k) J_i^x; modes in `monitored_modes` are homodyned, the rest are
/// unmonitored.
#[allow(clippy::too_many_arguments)]
pub fn build_dicke_clusters(
    omega_big: f64,
    n_clusters: usize,
    n_atoms: usize,
    g_matrix: &[Vec<f64>],
    delta: f64,
    kappa: f64,
    monitored_modes: &[usize],
    initial: AtomInitial,
) -> Result<Scenario> {
    if g_matrix.len() != n_clusters {
        return Err(Error::Config {
            path: "system.g_matrix".into(),
            message: format!("{} rows but {} clusters", g_matrix.len(), n_clusters),
        });
    }
    let n_modes = g_matrix.first().map(|r| r.len()).unwrap_or(0);
    if n_modes == 0 || g_matrix.iter().any(|r| r.len() != n_modes) {
        return Err(Error::Config {
            path: "system.g_matrix".into(),
            message: "rows must be nonempty and of equal length".into(),
        });
    }
    for m in monitored_modes {
        if *m >= n_modes {
            return Err(Error::Config {
                path: "system.monitored_modes".into(),
                message: format!("mode {m} out of range (n_modes = {n_modes})"),
            });
        }
    }
    let spin_dim = n_atoms + 1;
    let layout = HilbertSpaceLayout::new(
        (0..n_clusters).map(|i| (format!("c{}", i + 1), spin_dim)).collect(),
    )?;
    let jz = collective_spin(n_atoms, SpinAxis::Z);
    let jx = collective_spin(n_atoms, SpinAxis::X);
    let dim = layout.total_dim();
    let mut h_a = OperatorMatrix::zeros(dim);
    let mut jx_embedded = Vec::with_capacity(n_clusters);
    for i in 0..n_clusters {
        let label = format!("c{}", i + 1);
        h_a.axpy(C64::new(omega_big, 0.0), &layout.embed(&jz, &label)?);
        jx_embedded.push(layout.embed(&jx, &label)?);
    }
    let mut modes = Vec::with_capacity(n_modes);
    for k in 0..n_modes {
        let g_k = g_matrix.iter().map(|r| r[k].abs()).fold(0.0, f64::max);
        let mut l_k = OperatorMatrix::zeros(dim);
        if g_k > 0.0 {
            for (i, row) in g_matrix.iter().enumerate() {
                if row[k] != 0.0 {
                    l_k.axpy(C64::new(row[k] / g_k, 0.0), &jx_embedded[i]);
                }
            }
        }
        modes.push(ModeSpec {
            g: g_k,
            delta,
            kappa,
            coupling_op: l_k,
            detection: if monitored_modes.contains(&k) {
                Detection::Homodyne
            } else {
                Detection::Unmonitored
            },
        });
    }
    // per-cluster initial state
    let single: Vec<C64> = match initial {
        AtomInitial::AllDown => {
            let mut v = vec![C64::new(0.0, 0.0); spin_dim];
            v[spin_dim - 1] = C64::new(1.0, 0.0); // |j, -j> is last in m-descending order
            v
        }
        AtomInitial::CoherentX => {
            let jy = collective_spin(n_atoms, SpinAxis::Y);
            let u = unitary_from_hermitian(&jy, std::f64::consts::FRAC_PI_2)?;
            let mut v = vec![C64::new(0.0, 0.0); spin_dim];
            v[0] = C64::new(1.0, 0.0);
            u.apply(&v)
        }
        other => {
            return Err(Error::Config {
                path: "system.initial".into(),
                message: format!("{other:?} is not a cluster initial state"),
            })
        }
    };
    let mut pure = vec![C64::new(1.0, 0.0)];
    for _ in 0..n_clusters {
        let mut next = vec![C64::new(0.0, 0.0); pure.len() * spin_dim];
        for (i, a) in pure.iter().enumerate() {
            for (j, b) in single.iter().enumerate() {
                next[i * spin_dim + j] = a * b;
            }
        }
        pure = next;
    }
    let outputs = if n_clusters >= 3 {
        vec![
            Observable::Entropy,
            Observable::ClusterEntropy(vec![0, 2]),
            Observable::MutualInfo(0, 2),
            Observable::Negativity(0, 2),
        ]
    } else {
        vec![Observable::Entropy]
    };
    Ok(Scenario {
        name: "dicke_clusters".into(),
        unit_frequency: "Omega".into(),
        h_a,
        modes,
        initial_rho: OperatorMatrix::projector(&pure),
        initial_pure: Some(pure),
        atom_layout: Some(layout),
        spin: None,
        k_max: 3,
        dt: 1e-3,
        t_final: 3.0,
        sample_every: 100,
        feedback: None,
        trajectories: 300,
        master_seed: 1,
        outputs,
        theta: 0.0,
        fock_cutoffs: vec![4; n_modes],
    })
}

/// Feedback strength selection for the spin-squeezing builder.
#[derive(Debug, Clone)]
pub enum FeedbackChoice {
    None,
    Constant(f64),
    Schedule(LambdaSchedule),
    Dynamic { hold_last: bool },
}

/// Collective spin monitored through one cavity mode,
/// H = Omega Jz - i g Jz (a - a^dag), i.e. H_A = Omega Jz, L = i Jz,
/// Delta = 0; the initial state is the coherent spin state along +x and
/// the feedback operator direction is J_y.
pub fn build_spin_squeezing(
    omega_big: f64,
    n_atoms: usize,
    g: f64,
    kappa: f64,
    feedback: FeedbackChoice,
) -> Result<Scenario> {
    if n_atoms < 2 {
        return Err(Error::Config {
            path: "system.n_atoms".into(),
            message: "need at least 2 atoms".into(),
        });
    }
    let spin = SpinContext::new(n_atoms);
    let h_a = spin.jz.scaled(C64::new(omega_big, 0.0));
    let l = spin.jz.scaled(C64::new(0.0, 1.0)); // L = i Jz
    let mode = ModeSpec {
        g,
        delta: 0.0,
        kappa,
        coupling_op: l,
        detection: Detection::Homodyne,
    };
    let dim = n_atoms + 1;
    let u = unitary_from_hermitian(&spin.jy, std::f64::consts::FRAC_PI_2)?;
    let mut top = vec![C64::new(0.0, 0.0); dim];
    top[0] = C64::new(1.0, 0.0);
    let pure = u.apply(&top);
    let law = match feedback {
        FeedbackChoice::None => None,
        FeedbackChoice::Constant(lambda) => {
            Some(FeedbackLaw::Schedule(LambdaSchedule::constant(lambda)))
        }
        FeedbackChoice::Schedule(s) => Some(FeedbackLaw::Schedule(s)),
        FeedbackChoice::Dynamic { hold_last } => Some(FeedbackLaw::Dynamic {
            corr_op: spin.jz.clone(),
            denom_op: spin.jx.clone(),
            hold_last,
        }),
    };
    let feedback = law.map(|law| FeedbackSpec { mode_index: 0, operator: spin.jy.clone(), law });
    Ok(Scenario {
        name: "spin_squeezing".into(),
        unit_frequency: "Omega".into(),
        h_a,
        modes: vec![mode],
        initial_rho: OperatorMatrix::projector(&pure),
        initial_pure: Some(pure),
        atom_layout: None,
        spin: Some(spin),
        k_max: 6,
        dt: 1e-3,
        t_final: 6.0,
        sample_every: 10,
        feedback,
        trajectories: 300,
        master_seed: 1,
        outputs: vec![
            Observable::SpinSqueezing,
            Observable::SpinMean(SpinAxis::X),
            Observable::SpinMean(SpinAxis::Z),
            Observable::SpinVarZ,
            Observable::Quadrature(0),
            Observable::CorrJzX(0),
            Observable::Lambda,
        ],
        theta: 0.0,
        fock_cutoffs: vec![8],
    })
}

/// Everything one trajectory produced: the sampled time grid, named
/// observable series, per-mode current samples, jump times, and the seeds
/// that reproduce it.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub t: Vec<f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    /// (mode, component) -> sampled current values; homodyne currents have
    /// a "re" component only.
    pub currents: BTreeMap<String, Vec<f64>>,
    pub jump_times: Vec<(usize, f64)>,
    pub trajectory_index: u64,
    pub master_seed: u64,
    /// Sampled conditioned states rho^(0,0) on the same grid.
    pub states: Vec<OperatorMatrix>,
}

/// Runs one conditioned trajectory, deterministic in
/// (master_seed, trajectory_index).
pub fn run_trajectory(scenario: &Scenario, trajectory_index: u64) -> Result<RunRecord> {
    scenario.validate()?;
    let ops = scenario.engine_ops()?;
    let space = scenario.space()?;
    let mut state = HierarchyState::vacuum(space, scenario.initial_rho.clone());
    let mut stepper = Stepper::new();
    let steps = scenario.steps();
    let mut streams: Vec<NoiseStream> = (0..scenario.modes.len() as u64)
        .map(|k| NoiseStream::new(mode_seed(scenario.master_seed, trajectory_index, k)))
        .collect();
    let mut jump_drivers: Vec<Option<JumpDriver>> = scenario
        .modes
        .iter()
        .enumerate()
        .map(|(k, m)| {
            (m.detection == Detection::Photodetect)
                .then(|| JumpDriver::from_stream(streams[k].clone()))
        })
        .collect();

    let mut record = RunRecord {
        t: Vec::new(),
        series: BTreeMap::new(),
        currents: BTreeMap::new(),
        jump_times: Vec::new(),
        trajectory_index,
        master_seed: scenario.master_seed,
        states: Vec::new(),
    };
    for obs in &scenario.outputs {
        record.series.insert(obs.column_name(), Vec::new());
    }
    let mut last_report = crate::engine::StepReport {
        currents: vec![None; scenario.modes.len()],
        ..Default::default()
    };

    observables::sample(scenario, &ops, &state, &last_report, &mut record)?;
    for step in 0..steps {
        let mut incs = Vec::with_capacity(scenario.modes.len());
        for (k, mode) in scenario.modes.iter().enumerate() {
            incs.push(match mode.detection {
                Detection::Homodyne => {
                    ModeIncrement::Real(draw_wiener(&mut streams[k], scenario.dt))
                }
                Detection::Heterodyne => {
                    ModeIncrement::Complex(draw_complex_wiener(&mut streams[k], scenario.dt))
                }
                Detection::Photodetect | Detection::Unmonitored => ModeIncrement::None,
            });
        }
        let report = stepper.step_ito(
            &mut state,
            &ops,
            scenario.feedback.as_ref(),
            scenario.theta,
            scenario.dt,
            &incs,
            &mut jump_drivers,
            step,
        )?;
        for &k in &report.jumped {
            record.jump_times.push((k, state.time));
        }
        if (step + 1) % scenario.sample_every == 0 {
            observables::sample(scenario, &ops, &state, &report, &mut record)?;
        }
        last_report = report;
    }
    let _ = last_report;
    Ok(record)
}
