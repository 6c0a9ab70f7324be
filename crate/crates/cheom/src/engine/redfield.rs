//! Second-order (weak-coupling) baselines: the time-dependent Redfield
//! operator, the conditioned Redfield stochastic master equation it enters,
//! and the bad-cavity limit where the dressed operator is frozen at
//! g^2 L / kappa.

use crate::operators::{commutator_acc, matmul_acc, C64, OperatorMatrix};
use crate::{Error, Result};

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Time series of the dressed coupling operator, obtained by co-integrating
///
///   dLbar/dt = g^2 L - (i Delta + kappa) Lbar - i [H_A, Lbar],  Lbar(0) = 0,
///
/// the differential form of Lbar(t) = Int_0^t ds g^2 e^{-(i Delta+kappa) s}
/// e^{-i H_A s} L e^{i H_A s}, which is the definition the first-level
/// hierarchy closure fixes. One fourth-order step per grid interval.
pub fn redfield_operator(
    h_a: &OperatorMatrix,
    l: &OperatorMatrix,
    g: f64,
    delta: f64,
    kappa: f64,
    t_grid: &[f64],
) -> Result<Vec<OperatorMatrix>> {
    if h_a.dim() != l.dim() {
        return Err(Error::DimensionMismatch(format!(
            "H_A dim {} vs L dim {}",
            h_a.dim(),
            l.dim()
        )));
    }
    if t_grid.is_empty() || t_grid[0] != 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DimensionMismatch(
            "t_grid must ascend from 0".into(),
        ));
    }
    let dim = l.dim();
    let w = C64::new(kappa, delta); // i Delta + kappa
    let g2 = C64::new(g * g, 0.0);
    let rhs = |lbar: &OperatorMatrix, out: &mut OperatorMatrix| {
        out.set_zero();
        out.axpy(g2, l);
        out.axpy(-w, lbar);
        commutator_acc(out, -I, h_a, lbar);
    };
    let mut series = Vec::with_capacity(t_grid.len());
    let mut lbar = OperatorMatrix::zeros(dim);
    series.push(lbar.clone());
    let mut k1 = OperatorMatrix::zeros(dim);
    let mut k2 = OperatorMatrix::zeros(dim);
    let mut k3 = OperatorMatrix::zeros(dim);
    let mut k4 = OperatorMatrix::zeros(dim);
    let mut tmp = OperatorMatrix::zeros(dim);
    for step in 1..t_grid.len() {
        let h = t_grid[step] - t_grid[step - 1];
        rhs(&lbar, &mut k1);
        tmp = assign_axpy(tmp, &lbar, 0.5 * h, &k1);
        rhs(&tmp, &mut k2);
        tmp = assign_axpy(tmp, &lbar, 0.5 * h, &k2);
        rhs(&tmp, &mut k3);
        tmp = assign_axpy(tmp, &lbar, h, &k3);
        rhs(&tmp, &mut k4);
        lbar.axpy(C64::new(h / 6.0, 0.0), &k1);
        lbar.axpy(C64::new(h / 3.0, 0.0), &k2);
        lbar.axpy(C64::new(h / 3.0, 0.0), &k3);
        lbar.axpy(C64::new(h / 6.0, 0.0), &k4);
        series.push(lbar.clone());
    }
    Ok(series)
}

fn assign_axpy(
    mut dst: OperatorMatrix,
    base: &OperatorMatrix,
    scale: f64,
    add: &OperatorMatrix,
) -> OperatorMatrix {
    dst.set_zero();
    dst.axpy(ONE, base);
    dst.axpy(C64::new(scale, 0.0), add);
    dst
}

/// One Euler–Maruyama step of the conditioned Redfield master equation
///
///   d rho = (-i[H_A, rho] + [Lbar rho, L^dag] + [L, rho Lbar^dag]) dt
///         + (i/g) sqrt(2 kappa) (rho (Lbar^dag - <Lbar^dag>)
///                                - (Lbar - <Lbar>) rho) dW,
///
/// followed by renormalization.
#[allow(clippy::too_many_arguments)]
pub fn conditioned_redfield_step(
    rho: &mut OperatorMatrix,
    h_a: &OperatorMatrix,
    l: &OperatorMatrix,
    lbar: &OperatorMatrix,
    kappa: f64,
    g: f64,
    dt: f64,
    dw: f64,
) -> Result<()> {
    let dim = rho.dim();
    let dtc = C64::new(dt, 0.0);
    let mut delta = OperatorMatrix::zeros(dim);
    // -i [H_A, rho] dt
    commutator_acc(&mut delta, -I * dtc, h_a, rho);
    // [Lbar rho, L^dag] + [L, rho Lbar^dag]
    let l_dag = l.adjoint();
    let lbar_dag = lbar.adjoint();
    let mut lbar_rho = OperatorMatrix::zeros(dim);
    matmul_acc(&mut lbar_rho, ONE, lbar, rho);
    commutator_acc(&mut delta, dtc, &lbar_rho, &l_dag);
    let mut rho_lbar_dag = OperatorMatrix::zeros(dim);
    matmul_acc(&mut rho_lbar_dag, ONE, rho, &lbar_dag);
    commutator_acc(&mut delta, dtc, l, &rho_lbar_dag);
    // stochastic line; g = 0 carries no measurement backaction
    if dw != 0.0 && g != 0.0 {
        let coef = I / g * (2.0 * kappa).sqrt() * dw;
        let lbar_mean = lbar_rho.trace();
        // rho Lbar^dag - <Lbar^dag> rho - Lbar rho + <Lbar> rho
        delta.axpy(coef, &rho_lbar_dag);
        delta.axpy(-coef * lbar_mean.conj(), rho);
        delta.axpy(-coef, &lbar_rho);
        delta.axpy(coef * lbar_mean, rho);
    }
    rho.axpy(ONE, &delta);
    let tr = rho.trace().re;
    if !tr.is_finite() || tr < 0.5 {
        return Err(Error::Diverged(tr));
    }
    rho.scale_mut(C64::new(1.0 / tr, 0.0));
    Ok(())
}

/// Bad-cavity step: the conditioned Redfield equation with the dressed
/// operator frozen at its adiabatic value g^2 L / kappa.
#[allow(clippy::too_many_arguments)]
pub fn bad_cavity_step(
    rho: &mut OperatorMatrix,
    h_a: &OperatorMatrix,
    l: &OperatorMatrix,
    g: f64,
    kappa: f64,
    dt: f64,
    dw: f64,
) -> Result<()> {
    let lbar = l.scaled(C64::new(g * g / kappa, 0.0));
    conditioned_redfield_step(rho, h_a, l, &lbar, kappa, g, dt, dw)
}

/// Pure-state form of the bad-cavity limit: in this approximation the atom
/// is a standard homodyne unraveling with effective jump operator
/// c = -i sqrt(2 g^2 / kappa) L, so the conditioned state stays on the
/// Bloch sphere by construction. Normalizes after each step.
#[allow(clippy::too_many_arguments)]
pub fn bad_cavity_pure_step(
    psi: &mut [C64],
    h_a: &OperatorMatrix,
    l: &OperatorMatrix,
    g: f64,
    kappa: f64,
    dt: f64,
    dw: f64,
) -> Result<()> {
    let c_op = l.scaled(C64::new(0.0, -(2.0 * g * g / kappa).sqrt()));
    let h_psi = h_a.apply(psi);
    let c_psi = c_op.apply(psi);
    let cdc_psi = c_op.adjoint().apply(&c_psi);
    let c_mean: C64 = psi.iter().zip(c_psi.iter()).map(|(a, b)| a.conj() * b).sum();
    let x = 2.0 * c_mean.re;
    for i in 0..psi.len() {
        let drift = -I * h_psi[i] - 0.5 * cdc_psi[i] + (0.5 * x) * c_psi[i]
            - C64::new(x * x / 8.0, 0.0) * psi[i];
        let noise = c_psi[i] - C64::new(0.5 * x, 0.0) * psi[i];
        psi[i] += drift * dt + noise * dw;
    }
    let n2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if !n2.is_finite() || n2 < 0.25 {
        return Err(Error::Diverged(n2));
    }
    let inv = 1.0 / n2.sqrt();
    for z in psi.iter_mut() {
        *z *= inv;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sigma_minus() -> OperatorMatrix {
        // basis (|0>, |1>): sigma_- = |0><1|
        let mut m = OperatorMatrix::zeros(2);
        m[(0, 1)] = c(1., 0.);
        m
    }

    fn jc_h(omega: f64) -> OperatorMatrix {
        let mut m = OperatorMatrix::zeros(2);
        m[(0, 0)] = c(-omega / 2.0, 0.);
        m[(1, 1)] = c(omega / 2.0, 0.);
        m
    }

    fn grid(dt: f64, t_final: f64) -> Vec<f64> {
        let steps = (t_final / dt).round() as usize;
        (0..=steps).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn starts_at_zero() {
        let series =
            redfield_operator(&jc_h(1.0), &sigma_minus(), 2.0, 1.0, 3.0, &grid(1e-3, 1.0))
                .unwrap();
        assert!(series[0].max_abs() == 0.0);
    }

    #[test]
    fn free_atom_closed_form() {
        // H_A = 0: Lbar(t) = g^2 L (1 - e^{-(i Delta + kappa) t})/(i Delta + kappa)
        let (g, delta, kappa) = (1.7, 0.8, 2.3);
        let h0 = OperatorMatrix::zeros(2);
        let l = sigma_minus();
        let t_grid = grid(1e-3, 2.0);
        let series = redfield_operator(&h0, &l, g, delta, kappa, &t_grid).unwrap();
        for (i, t) in t_grid.iter().enumerate().step_by(400) {
            let w = c(kappa, delta);
            let factor = c(g * g, 0.) * (c(1., 0.) - (-w * t).exp()) / w;
            let expect = l.scaled(factor);
            assert!(
                series[i].sub(&expect).max_abs() < 1e-9,
                "mismatch at t={t}: {:?}",
                series[i].sub(&expect).max_abs()
            );
        }
    }

    #[test]
    fn adiabatic_limit_reaches_g2_l_over_kappa() {
        // kappa = 100 omega: long-time Lbar within 1% of g^2 L / kappa
        let omega = 1.0;
        let (g, delta, kappa) = (0.5, 0.0, 100.0);
        let l = sigma_minus();
        let t_grid = grid(1e-3, 2.0);
        let series = redfield_operator(&jc_h(omega), &l, g, delta, kappa, &t_grid).unwrap();
        let target = l.scaled(c(g * g / kappa, 0.));
        let last = series.last().unwrap();
        let rel = last.sub(&target).max_abs() / target.max_abs();
        assert!(rel < 0.01, "relative deviation {rel}");
    }

    #[test]
    fn zero_lbar_is_unitary_step() {
        let h = jc_h(1.0);
        let zero = OperatorMatrix::zeros(2);
        let l = sigma_minus();
        let mut rho = OperatorMatrix::zeros(2);
        rho[(0, 0)] = c(0.5, 0.);
        rho[(1, 1)] = c(0.5, 0.);
        rho[(0, 1)] = c(0.3, 0.1);
        rho[(1, 0)] = c(0.3, -0.1);
        let mut expect = rho.clone();
        let dt = 1e-4;
        conditioned_redfield_step(&mut rho, &h, &l, &zero, 3.0, 2.0, dt, 0.123).unwrap();
        // exact unitary increment to first order
        let mut delta = OperatorMatrix::zeros(2);
        commutator_acc(&mut delta, -I * c(dt, 0.), &h, &expect);
        expect.axpy(ONE, &delta);
        assert!(rho.sub(&expect).max_abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grid() {
        let h = jc_h(1.0);
        let l = sigma_minus();
        assert!(redfield_operator(&h, &l, 1., 0., 1., &[0.1, 0.2]).is_err());
        assert!(redfield_operator(&h, &l, 1., 0., 1., &[0.0, 0.0]).is_err());
    }

    #[test]
    fn bad_cavity_g_zero_is_unitary() {
        let h = jc_h(1.0);
        let l = sigma_minus();
        let mut rho = OperatorMatrix::zeros(2);
        rho[(1, 1)] = c(1., 0.);
        let before = rho.clone();
        for step in 0..100 {
            bad_cavity_step(&mut rho, &h, &l, 0.0, 3.0, 1e-3, if step % 2 == 0 { 0.01 } else { -0.01 })
                .unwrap();
        }
        // |1><1| is an H_A eigenstate; with g = 0 nothing moves
        assert!(rho.sub(&before).max_abs() < 1e-12);
    }
}
