//! The dynamic feedback rule must cancel the stochastic shift of <Jz> on
//! single trajectories: with lambda = 2 kappa <Jz X>/<Jx>, the dW
//! coefficient of d<Jz> vanishes, so per-step increments drop from
//! O(sqrt(dt)) to O(dt) and <Jz> stays pinned where the no-feedback run
//! random-walks away.

use cheom::engine::{HierarchyState, ModeIncrement, Stepper};
use cheom::experiments::FeedbackChoice;
use cheom::noise::{draw_wiener, mode_seed, NoiseStream};

fn run_jz_track(feedback: bool, steps: usize, dt: f64) -> (Vec<f64>, f64) {
    let choice = if feedback {
        FeedbackChoice::Dynamic { hold_last: true }
    } else {
        FeedbackChoice::None
    };
    let s = cheom::experiments::build_spin_squeezing(1.0, 10, 0.5, 10.0, choice).unwrap();
    let ops = s.engine_ops().unwrap();
    let space = s.space().unwrap();
    let mut state = HierarchyState::vacuum(space, s.initial_rho.clone());
    let mut stepper = Stepper::new();
    let mut stream = NoiseStream::new(mode_seed(7, 3, 0));
    let jz = &s.spin.as_ref().unwrap().jz;
    let mut track = vec![jz.expectation(state.physical())];
    let mut max_step_incr = 0.0_f64;
    for step in 0..steps {
        let dw = draw_wiener(&mut stream, dt);
        stepper
            .step_ito(
                &mut state,
                &ops,
                s.feedback.as_ref(),
                0.0,
                dt,
                &[ModeIncrement::Real(dw)],
                &mut [None],
                step,
            )
            .unwrap();
        let v = jz.expectation(state.physical());
        max_step_incr = max_step_incr.max((v - track.last().unwrap()).abs());
        track.push(v);
    }
    (track, max_step_incr)
}

#[test]
fn dynamic_lambda_cancels_stochastic_jz_shift() {
    // window before measurement-induced localization collapses <Jx> (the
    // dynamic rule legitimately diverges once the state squeezes hard and
    // the mean spin shrinks)
    let dt = 1e-3;
    let steps = 600;
    let (with_fb, incr_fb) = run_jz_track(true, steps, dt);
    let (without, incr_free) = run_jz_track(false, steps, dt);
    // per-step increments: O(dt)-ish with cancellation, O(sqrt dt) without
    assert!(
        incr_fb < 0.05 * incr_free,
        "cancellation failed: per-step shift {incr_fb:.2e} vs free {incr_free:.2e}"
    );
    // <Jz> pinned near zero with feedback, walking without
    let max_fb = with_fb.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let max_free = without.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    // the surviving motion is the bounded deterministic feedback drift
    // (-lambda <Jx X> dt per step), not a diffusive walk
    assert!(max_fb < 0.05, "<Jz> drifted to {max_fb} despite dynamic feedback");
    assert!(max_free > 10.0 * max_fb, "no-feedback walk {max_free} vs pinned {max_fb}");
    // the dW coefficient cancels identically, so per-step residues are
    // deterministic-drift scale O(dt), orders below the free walk's
    // sqrt(2k)<JzX> sqrt(dt) ~ 3.5e-2
    assert!(incr_fb < 2e-3, "per-step residue {incr_fb:.2e}");
}
