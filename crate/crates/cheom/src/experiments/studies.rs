//! The benchmark studies: deterministic feedback master equation, constant-
//! feedback scans, the switching protocol, and shared-path comparisons of
//! every reduced description against the full-system oracle.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::engine::{
    bad_cavity_step, conditioned_redfield_step, redfield_operator, Detection, FeedbackLaw,
    FeedbackSpec, HierarchyState, LambdaSchedule, ModeIncrement, Stepper,
};
use crate::measures::trace_distance;
use crate::noise::{draw_wiener, mode_seed, NoiseStream};
use crate::operators::OperatorMatrix;
use crate::oracle::{reduced_state, sme_homodyne_step, FullOps};
use crate::{Error, Result};

use super::{Observable, Scenario};

/// Deterministic (noise-averaged) run: the sampled grid, the averaged state
/// series, and derived observable series.
#[derive(Debug, Clone)]
pub struct DeterministicRun {
    pub t: Vec<f64>,
    pub states: Vec<OperatorMatrix>,
    pub series: BTreeMap<String, Vec<f64>>,
}

impl DeterministicRun {
    /// Minimum of a series and the time where it is attained.
    pub fn minimum(&self, column: &str) -> Option<(f64, f64)> {
        let series = self.series.get(column)?;
        let (i, v) = series
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        Some((*v, self.t[i]))
    }
}

/// Integrates the deterministic feedback master equation: the hierarchy
/// drift plus the feedback drift terms, no stochastic terms. The feedback
/// strength must be a (piecewise-)constant schedule — the dynamic rule needs
/// conditioned quantities that do not exist in the averaged picture.
pub fn feedback_master_equation(scenario: &Scenario) -> Result<DeterministicRun> {
    let fb = scenario.feedback.as_ref();
    if let Some(fb) = fb {
        if matches!(fb.law, FeedbackLaw::Dynamic { .. }) {
            return Err(Error::DynamicLambdaInDeterministicRun);
        }
    }
    run_deterministic(scenario)
}

/// Averaged hierarchy evolution (all stochastic increments dropped);
/// photodetect and heterodyne modes average to plain drift.
pub(crate) fn run_deterministic(scenario: &Scenario) -> Result<DeterministicRun> {
    let mut scenario = scenario.clone();
    for m in &mut scenario.modes {
        if matches!(m.detection, Detection::Photodetect | Detection::Heterodyne) {
            m.detection = Detection::Unmonitored;
        }
    }
    scenario.validate()?;
    let ops = scenario.engine_ops()?;
    let space = scenario.space()?;
    let mut state = HierarchyState::vacuum(space, scenario.initial_rho.clone());
    let mut stepper = Stepper::new();
    let steps = scenario.steps();
    let incs = vec![ModeIncrement::None; scenario.modes.len()];
    let mut drivers = vec![None; scenario.modes.len()];
    let mut run = DeterministicRun {
        t: Vec::new(),
        states: Vec::new(),
        series: scenario.outputs.iter().map(|o| (o.column_name(), Vec::new())).collect(),
    };
    let sample = |state: &HierarchyState,
                      report: &crate::engine::StepReport,
                      run: &mut DeterministicRun|
     -> Result<()> {
        run.t.push(state.time);
        run.states.push(state.physical().clone());
        for obs in &scenario.outputs {
            let v = obs.evaluate(&scenario, &ops, state, report)?;
            run.series.get_mut(&obs.column_name()).expect("preallocated").push(v);
        }
        Ok(())
    };
    let report0 = crate::engine::StepReport {
        currents: vec![None; scenario.modes.len()],
        ..Default::default()
    };
    sample(&state, &report0, &mut run)?;
    for step in 0..steps {
        let report = stepper.step_ito(
            &mut state,
            &ops,
            scenario.feedback.as_ref(),
            scenario.theta,
            scenario.dt,
            &incs,
            &mut drivers,
            step,
        )?;
        if (step + 1) % scenario.sample_every == 0 {
            sample(&state, &report, &mut run)?;
        }
    }
    Ok(run)
}

/// One point of the constant-feedback scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub lambda: f64,
    pub min_xi2: f64,
    pub t_at_min: f64,
}

/// Scans constant feedback strengths through the deterministic feedback
/// master equation and reports min-over-time spin squeezing per strength.
pub fn lambda_scan(scenario: &Scenario, lambdas: &[f64]) -> Result<Vec<ScanPoint>> {
    let spin = scenario.spin.as_ref().ok_or_else(|| Error::Config {
        path: "system".into(),
        message: "lambda scan needs a collective-spin scenario".into(),
    })?;
    let fb_operator = scenario
        .feedback
        .as_ref()
        .map(|f| f.operator.clone())
        .unwrap_or_else(|| spin.jy.clone());
    let fb_mode = scenario.feedback.as_ref().map(|f| f.mode_index).unwrap_or(0);
    let points: Vec<Result<ScanPoint>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let mut s = scenario.clone();
            s.feedback = Some(FeedbackSpec {
                mode_index: fb_mode,
                operator: fb_operator.clone(),
                law: FeedbackLaw::Schedule(LambdaSchedule::constant(lambda)),
            });
            if !s.outputs.contains(&Observable::SpinSqueezing) {
                s.outputs.push(Observable::SpinSqueezing);
            }
            let run = feedback_master_equation(&s)?;
            let (min_xi2, t_at_min) = run.minimum("xi2").expect("xi2 recorded");
            Ok(ScanPoint { lambda, min_xi2, t_at_min })
        })
        .collect();
    points.into_iter().collect()
}

/// Alternating-sign feedback sequence lambda_plus -> lambda_minus ->
/// lambda_plus with switches at t1 < t2, through the deterministic feedback
/// master equation.
pub fn switching_protocol(
    scenario: &Scenario,
    lambda_plus: f64,
    lambda_minus: f64,
    t1: f64,
    t2: f64,
) -> Result<DeterministicRun> {
    if !(0.0 < t1 && t1 < t2 && t2 < scenario.t_final) {
        return Err(Error::Config {
            path: "switching".into(),
            message: format!("need 0 < t1 < t2 < t_final, got t1={t1}, t2={t2}"),
        });
    }
    let spin = scenario.spin.as_ref().ok_or_else(|| Error::Config {
        path: "system".into(),
        message: "switching protocol needs a collective-spin scenario".into(),
    })?;
    let mut s = scenario.clone();
    let operator = scenario
        .feedback
        .as_ref()
        .map(|f| f.operator.clone())
        .unwrap_or_else(|| spin.jy.clone());
    let mode_index = scenario.feedback.as_ref().map(|f| f.mode_index).unwrap_or(0);
    s.feedback = Some(FeedbackSpec {
        mode_index,
        operator,
        law: FeedbackLaw::Schedule(LambdaSchedule::piecewise(
            vec![(t1, lambda_plus), (t2, lambda_minus)],
            lambda_plus,
        )),
    });
    if !s.outputs.contains(&Observable::SpinSqueezing) {
        s.outputs.push(Observable::SpinSqueezing);
    }
    feedback_master_equation(&s)
}

/// Mean trace distance to the exact conditioned state, per method, on the
/// sampled grid.
#[derive(Debug, Clone)]
pub struct OracleComparison {
    pub t: Vec<f64>,
    pub mean_distance: BTreeMap<String, Vec<f64>>,
    pub trajectories: usize,
}

impl OracleComparison {
    pub fn time_average(&self, method: &str) -> Option<f64> {
        let d = self.mean_distance.get(method)?;
        Some(d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// Shared-path comparison of truncated hierarchies (one per requested
/// k_max), the conditioned Redfield equation, and the bad-cavity limit
/// against the exact conditioned master equation, for single-homodyne-mode
/// scenarios. Every method consumes the identical per-trajectory Wiener
/// path.
pub fn oracle_compare(
    scenario: &Scenario,
    m_trajectories: usize,
    k_max_list: &[usize],
    include_baselines: bool,
) -> Result<OracleComparison> {
    if scenario.modes.len() != 1 || scenario.modes[0].detection != Detection::Homodyne {
        return Err(Error::Config {
            path: "compare".into(),
            message: "oracle comparison is single-homodyne-mode only".into(),
        });
    }
    scenario.validate()?;
    let mode = scenario.modes[0].clone();
    let steps = scenario.steps();
    let full_ops = FullOps::new(&scenario.h_a, &[mode.clone()], &[scenario.fock_cutoffs[0]])?;
    // Redfield operator series on the full step grid
    let t_grid: Vec<f64> = (0..=steps).map(|s| s as f64 * scenario.dt).collect();
    let lbar_series = if include_baselines {
        redfield_operator(&scenario.h_a, &mode.coupling_op, mode.g, mode.delta, mode.kappa, &t_grid)?
    } else {
        Vec::new()
    };

    let mut methods: Vec<String> = k_max_list.iter().map(|k| format!("kmax{k}")).collect();
    if include_baselines {
        methods.push("redfield".into());
        methods.push("bad_cavity".into());
    }
    let sample_count = scenario.sample_grid().len();

    let traj_result: Vec<Result<BTreeMap<String, Vec<f64>>>> = (0..m_trajectories as u64)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&traj| {
            let mut sums: BTreeMap<String, Vec<f64>> =
                methods.iter().map(|m| (m.clone(), Vec::with_capacity(sample_count))).collect();
            let mut stream = NoiseStream::new(mode_seed(scenario.master_seed, traj, 0));
            let mut oracle = full_ops.vacuum_density(&scenario.initial_rho)?;
            let mut hierarchies: Vec<(String, HierarchyState, Stepper)> = k_max_list
                .iter()
                .map(|&k| {
                    let space = crate::engine::HierarchySpace::new(1, k)?;
                    Ok((
                        format!("kmax{k}"),
                        HierarchyState::vacuum(space, scenario.initial_rho.clone()),
                        Stepper::new(),
                    ))
                })
                .collect::<Result<_>>()?;
            let engine_ops = scenario.engine_ops()?;
            let mut redfield = scenario.initial_rho.clone();
            let mut badcav = scenario.initial_rho.clone();

            let record = |sums: &mut BTreeMap<String, Vec<f64>>,
                              oracle: &crate::oracle::FullState,
                              hierarchies: &[(String, HierarchyState, Stepper)],
                              redfield: &OperatorMatrix,
                              badcav: &OperatorMatrix|
             -> Result<()> {
                let exact = reduced_state(oracle, &full_ops)?;
                for (name, h, _) in hierarchies {
                    sums.get_mut(name)
                        .expect("method")
                        .push(trace_distance(h.physical(), &exact)?);
                }
                if include_baselines {
                    sums.get_mut("redfield").expect("method").push(trace_distance(redfield, &exact)?);
                    sums.get_mut("bad_cavity").expect("method").push(trace_distance(badcav, &exact)?);
                }
                Ok(())
            };
            record(&mut sums, &oracle, &hierarchies, &redfield, &badcav)?;
            for step in 0..steps {
                let dw = draw_wiener(&mut stream, scenario.dt);
                sme_homodyne_step(&mut oracle, &full_ops, scenario.dt, &[Some(dw)])?;
                for (_, h, stepper) in hierarchies.iter_mut() {
                    stepper.step_ito(
                        h,
                        &engine_ops,
                        None,
                        scenario.theta,
                        scenario.dt,
                        &[ModeIncrement::Real(dw)],
                        &mut [None],
                        step,
                    )?;
                }
                if include_baselines {
                    conditioned_redfield_step(
                        &mut redfield,
                        &scenario.h_a,
                        &mode.coupling_op,
                        &lbar_series[step],
                        mode.kappa,
                        mode.g,
                        scenario.dt,
                        dw,
                    )?;
                    bad_cavity_step(
                        &mut badcav,
                        &scenario.h_a,
                        &mode.coupling_op,
                        mode.g,
                        mode.kappa,
                        scenario.dt,
                        dw,
                    )?;
                }
                if (step + 1) % scenario.sample_every == 0 {
                    record(&mut sums, &oracle, &hierarchies, &redfield, &badcav)?;
                }
            }
            Ok(sums)
        })
        .collect();

    let mut mean: BTreeMap<String, Vec<f64>> =
        methods.iter().map(|m| (m.clone(), vec![0.0; sample_count])).collect();
    for traj in traj_result {
        let traj = traj?;
        for (name, values) in traj {
            let dst = mean.get_mut(&name).expect("method");
            for (i, v) in values.iter().enumerate() {
                dst[i] += v;
            }
        }
    }
    for values in mean.values_mut() {
        for v in values.iter_mut() {
            *v /= m_trajectories as f64;
        }
    }
    Ok(OracleComparison {
        t: scenario.sample_grid(),
        mean_distance: mean,
        trajectories: m_trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{
        build_jaynes_cummings, build_spin_squeezing, AtomInitial, FeedbackChoice,
    };

    #[test]
    fn fme_rejects_dynamic_lambda() {
        let s = build_spin_squeezing(1.0, 4, 0.5, 1.0, FeedbackChoice::Dynamic {
            hold_last: true,
        })
        .unwrap();
        assert!(matches!(
            feedback_master_equation(&s),
            Err(Error::DynamicLambdaInDeterministicRun)
        ));
    }

    #[test]
    fn fme_lambda_zero_equals_unmonitored_average() {
        let mut with_fb =
            build_spin_squeezing(1.0, 4, 0.5, 1.0, FeedbackChoice::Constant(0.0)).unwrap();
        with_fb.t_final = 1.0;
        with_fb.k_max = 4;
        let mut without = with_fb.clone();
        without.feedback = None;
        without.outputs = with_fb.outputs.clone();
        // lambda observable needs feedback; drop it on the plain run
        without.outputs.retain(|o| *o != Observable::Lambda);
        with_fb.outputs.retain(|o| *o != Observable::Lambda);
        let a = feedback_master_equation(&with_fb).unwrap();
        let b = run_deterministic(&without).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert!(x.sub(y).max_abs() < 1e-12);
        }
    }

    #[test]
    fn switching_degenerate_schedule_matches_constant() {
        let mut s =
            build_spin_squeezing(1.0, 4, 0.5, 1.0, FeedbackChoice::Constant(0.2)).unwrap();
        s.t_final = 2.0;
        s.k_max = 4;
        let constant = feedback_master_equation(&s).unwrap();
        let switched = switching_protocol(&s, 0.2, 0.2, 0.5, 1.0).unwrap();
        for (x, y) in constant.states.iter().zip(switched.states.iter()) {
            assert!(x.sub(y).max_abs() < 1e-12);
        }
    }

    #[test]
    fn switching_validates_times() {
        let s = build_spin_squeezing(1.0, 4, 0.5, 1.0, FeedbackChoice::None).unwrap();
        assert!(switching_protocol(&s, 0.2, -0.2, 3.0, 2.0).is_err());
        assert!(switching_protocol(&s, 0.2, -0.2, 0.0, 2.0).is_err());
    }

    #[test]
    fn oracle_compare_zero_coupling_all_methods_exact() {
        let mut s = build_jaynes_cummings(1.0, 0.0, 0.0, 1.0, 3.0, AtomInitial::Plus).unwrap();
        s.t_final = 0.5;
        s.fock_cutoffs = vec![2];
        let cmp = oracle_compare(&s, 2, &[1, 2], true).unwrap();
        for (name, d) in &cmp.mean_distance {
            for v in d {
                assert!(*v < 1e-8, "{name} deviates: {v}");
            }
        }
    }
}
