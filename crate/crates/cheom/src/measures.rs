//! Information-theoretic and entanglement diagnostics on conditioned states:
//! entropy, trace distance, mutual information, negativity, spin squeezing.
//!
//! All entropies are in nats. Conditioned states coming out of
//! Euler–Maruyama steps carry O(dt) spectral perturbations, so eigenvalues
//! below 1e-14 are clipped to zero for the entropy and the negativity is
//! floored at -1e-10.

use crate::operators::{
    collective_spin, hermitian_eigvals, partial_trace, partial_transpose, HilbertSpaceLayout,
    OperatorMatrix, SpinAxis,
};
use crate::{Error, Result};

const EIG_CLIP: f64 = 1e-14;
const NEGATIVE_EIG_TOL: f64 = 1e-10;
const NEGATIVITY_FLOOR: f64 = -1e-10;
const SQUEEZING_DENOM_MIN: f64 = 1e-12;

/// Spin squeezing parameter and the moments it is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezingReport {
    pub xi2: f64,
    pub var_jz: f64,
    pub mean_jx: f64,
    pub mean_jy: f64,
    pub mean_jz: f64,
}

/// Projects an integrator-perturbed density matrix back onto the state
/// space: eigenvalues in [-tol, 0) are clipped to zero and the spectrum is
/// renormalized. Errors if any eigenvalue is below -tol.
///
/// Euler–Maruyama steps perturb the spectrum at O(dt), which is far beyond
/// the strict preconditions of the measures; callers evaluating
/// diagnostics on raw integrator output go through here first.
pub fn project_to_state(rho: &OperatorMatrix, tol: f64) -> Result<OperatorMatrix> {
    use crate::operators::{hermitian_eig, C64};
    let (vals, vecs) = hermitian_eig(rho)?;
    if vals[0] < -tol {
        return Err(Error::NotAState(format!(
            "negative eigenvalue {} beyond integrator tolerance {tol}",
            vals[0]
        )));
    }
    if vals[0] >= 0.0 && (rho.trace().re - 1.0).abs() < 1e-12 {
        return Ok(rho.clone());
    }
    let clipped: Vec<f64> = vals.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let dim = rho.dim();
    let mut out = OperatorMatrix::zeros(dim);
    for (k, l) in clipped.iter().enumerate() {
        if *l == 0.0 {
            continue;
        }
        let w = C64::new(l / total, 0.0);
        for i in 0..dim {
            for j in 0..dim {
                out[(i, j)] += w * vecs[(i, k)] * vecs[(j, k)].conj();
            }
        }
    }
    Ok(out)
}

/// Von Neumann entropy S = -sum lambda_i ln lambda_i, with 0 ln 0 = 0.
pub fn von_neumann_entropy(rho: &OperatorMatrix) -> Result<f64> {
    let tr = rho.trace().re;
    if (tr - 1.0).abs() > 1e-8 {
        return Err(Error::NotAState(format!("trace {tr} differs from 1")));
    }
    let vals = hermitian_eigvals(rho)?;
    let mut s = 0.0;
    for l in vals {
        if l < -NEGATIVE_EIG_TOL {
            return Err(Error::NotAState(format!("negative eigenvalue {l}")));
        }
        if l > EIG_CLIP {
            s -= l * l.ln();
        }
    }
    Ok(s.max(0.0))
}

/// Trace norm ||m||_1 = sum of |eigenvalues| for Hermitian `m`.
pub fn trace_norm(m: &OperatorMatrix) -> Result<f64> {
    Ok(hermitian_eigvals(m)?.iter().map(|l| l.abs()).sum())
}

/// Trace distance ||rho - sigma||_1 between two Hermitian operators.
pub fn trace_distance(rho: &OperatorMatrix, sigma: &OperatorMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch(format!(
            "trace_distance: {} vs {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    trace_norm(&rho.sub(sigma))
}

/// Mutual information I = S[rho_A] + S[rho_B] - S[rho_AB] on a state over
/// exactly the two named factors.
pub fn mutual_information(
    rho: &OperatorMatrix,
    layout: &HilbertSpaceLayout,
    part_a: &str,
    part_b: &str,
) -> Result<f64> {
    let rho_a = partial_trace(rho, layout, &[part_a])?;
    let rho_b = partial_trace(rho, layout, &[part_b])?;
    let i = von_neumann_entropy(&rho_a)? + von_neumann_entropy(&rho_b)?
        - von_neumann_entropy(rho)?;
    Ok(i)
}

/// Negativity (||rho^Gamma||_1 - 1)/2 with small negatives clipped to zero.
pub fn negativity(
    rho: &OperatorMatrix,
    layout: &HilbertSpaceLayout,
    part: &str,
) -> Result<f64> {
    let pt = partial_transpose(rho, layout, part)?;
    let n = (trace_norm(&pt)? - 1.0) / 2.0;
    if n < NEGATIVITY_FLOOR {
        Ok(n)
    } else {
        Ok(n.max(0.0))
    }
}

/// Spin squeezing parameter xi_z^2 = N (Delta Jz)^2 / (<Jx>^2 + <Jy>^2) on
/// the symmetric sector of `n_atoms` spins.
pub fn spin_squeezing(rho: &OperatorMatrix, n_atoms: usize) -> Result<SqueezingReport> {
    let jx = collective_spin(n_atoms, SpinAxis::X);
    let jy = collective_spin(n_atoms, SpinAxis::Y);
    let jz = collective_spin(n_atoms, SpinAxis::Z);
    spin_squeezing_with_ops(rho, n_atoms, &jx, &jy, &jz)
}

/// As [`spin_squeezing`] but with caller-supplied collective operators, for
/// hot loops that hold them cached.
pub fn spin_squeezing_with_ops(
    rho: &OperatorMatrix,
    n_atoms: usize,
    jx: &OperatorMatrix,
    jy: &OperatorMatrix,
    jz: &OperatorMatrix,
) -> Result<SqueezingReport> {
    if rho.dim() != n_atoms + 1 {
        return Err(Error::DimensionMismatch(format!(
            "state dim {} does not match symmetric sector dim {}",
            rho.dim(),
            n_atoms + 1
        )));
    }
    let mean_jx = jx.expectation(rho);
    let mean_jy = jy.expectation(rho);
    let mean_jz = jz.expectation(rho);
    let jz2 = jz.matmul(jz).expectation(rho);
    let var_jz = (jz2 - mean_jz * mean_jz).max(0.0);
    let denom = mean_jx * mean_jx + mean_jy * mean_jy;
    if denom < SQUEEZING_DENOM_MIN {
        return Err(Error::UndefinedSqueezingDirection);
    }
    Ok(SqueezingReport {
        xi2: n_atoms as f64 * var_jz / denom,
        var_jz,
        mean_jx,
        mean_jy,
        mean_jz,
    })
}

/// Expected information gain from monitoring: S[<rho>] - <S[rho]>.
pub fn information_gain(mean_of_entropies: f64, entropy_of_mean: f64) -> f64 {
    entropy_of_mean - mean_of_entropies
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{kron_compose, unitary_from_hermitian, C64};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn diag2(a: f64, b: f64) -> OperatorMatrix {
        OperatorMatrix::from_rows(&[vec![c(a, 0.), c(0., 0.)], vec![c(0., 0.), c(b, 0.)]])
    }

    fn bell() -> OperatorMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        OperatorMatrix::projector(&[c(s, 0.), c(0., 0.), c(0., 0.), c(s, 0.)])
    }

    fn two_qubit_layout() -> HilbertSpaceLayout {
        HilbertSpaceLayout::new(vec![("a".into(), 2), ("b".into(), 2)]).unwrap()
    }

    fn random_density(dim: usize, seed: u64) -> OperatorMatrix {
        let mut s = seed | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let g = OperatorMatrix::from_fn(dim, |_, _| C64::new(next(), next()));
        let mut rho = g.matmul(&g.adjoint());
        let tr = rho.trace().re;
        rho.scale_mut(c(1.0 / tr, 0.));
        rho
    }

    #[test]
    fn entropy_pure_and_mixed() {
        assert!(von_neumann_entropy(&diag2(1.0, 0.0)).unwrap().abs() < 1e-12);
        let i4 = OperatorMatrix::identity(4).scaled(c(0.25, 0.));
        assert!((von_neumann_entropy(&i4).unwrap() - 4.0_f64.ln()).abs() < 1e-12);
        let expect = -(0.7_f64 * 0.7_f64.ln() + 0.3 * 0.3_f64.ln());
        assert!((von_neumann_entropy(&diag2(0.7, 0.3)).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.6109).abs() < 1e-4);
    }

    #[test]
    fn entropy_rejects_nonstate() {
        assert!(von_neumann_entropy(&diag2(1.2, -0.2)).is_err());
        assert!(von_neumann_entropy(&diag2(0.7, 0.7)).is_err());
    }

    #[test]
    fn trace_distance_cases() {
        let r = random_density(3, 5);
        assert!(trace_distance(&r, &r).unwrap() < 1e-12);
        assert!((trace_distance(&diag2(1., 0.), &diag2(0., 1.)).unwrap() - 2.0).abs() < 1e-12);
        let half = OperatorMatrix::identity(2).scaled(c(0.5, 0.));
        assert!((trace_distance(&diag2(1., 0.), &half).unwrap() - 1.0).abs() < 1e-12);
        assert!(trace_distance(&r, &random_density(4, 5)).is_err());
    }

    #[test]
    fn trace_distance_symmetric_and_triangle() {
        for seed in 0..6u64 {
            let a = random_density(4, 3 * seed + 1);
            let b = random_density(4, 3 * seed + 2);
            let cc = random_density(4, 3 * seed + 3);
            let dab = trace_distance(&a, &b).unwrap();
            let dba = trace_distance(&b, &a).unwrap();
            assert!((dab - dba).abs() < 1e-12);
            let dac = trace_distance(&a, &cc).unwrap();
            let dcb = trace_distance(&cc, &b).unwrap();
            assert!(dab <= dac + dcb + 1e-10);
        }
    }

    #[test]
    fn mutual_information_cases() {
        let layout = two_qubit_layout();
        let prod = kron_compose(&[&random_density(2, 7), &random_density(2, 9)]).unwrap();
        assert!(mutual_information(&prod, &layout, "a", "b").unwrap().abs() < 1e-10);
        let mi = mutual_information(&bell(), &layout, "a", "b").unwrap();
        assert!((mi - 2.0 * 2.0_f64.ln()).abs() < 1e-10);
        // classically correlated (|00><00| + |11><11|)/2
        let mut cl = OperatorMatrix::zeros(4);
        cl[(0, 0)] = c(0.5, 0.);
        cl[(3, 3)] = c(0.5, 0.);
        let mi = mutual_information(&cl, &layout, "a", "b").unwrap();
        assert!((mi - 2.0_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn mutual_information_symmetric_in_parts() {
        let layout = two_qubit_layout();
        let rho = random_density(4, 33);
        let ab = mutual_information(&rho, &layout, "a", "b").unwrap();
        let ba = mutual_information(&rho, &layout, "b", "a").unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn negativity_cases() {
        let layout = two_qubit_layout();
        let prod = kron_compose(&[&random_density(2, 11), &random_density(2, 13)]).unwrap();
        assert!(negativity(&prod, &layout, "a").unwrap().abs() < 1e-10);
        assert!((negativity(&bell(), &layout, "a").unwrap() - 0.5).abs() < 1e-10);
        // Werner state at the separability boundary p = 1/3
        let mut werner = OperatorMatrix::identity(4).scaled(c((1.0 - 1.0 / 3.0) / 4.0, 0.));
        werner.axpy(c(1.0 / 3.0, 0.), &bell());
        assert!(negativity(&werner, &layout, "a").unwrap().abs() < 1e-8);
    }

    #[test]
    fn negativity_local_unitary_invariant() {
        let layout = two_qubit_layout();
        let rho = bell();
        let ha = random_density(2, 17); // any Hermitian generator works
        let hb = random_density(2, 19);
        let ua = unitary_from_hermitian(&ha, 1.3).unwrap();
        let ub = unitary_from_hermitian(&hb, -0.7).unwrap();
        let u = kron_compose(&[&ua, &ub]).unwrap();
        let rotated = u.matmul(&rho).matmul(&u.adjoint());
        let n0 = negativity(&rho, &layout, "a").unwrap();
        let n1 = negativity(&rotated, &layout, "a").unwrap();
        assert!((n0 - n1).abs() < 1e-10);
    }

    #[test]
    fn entropy_concavity_on_random_pairs() {
        for seed in 0..8u64 {
            let a = random_density(4, 100 + seed);
            let b = random_density(4, 200 + seed);
            let mut mix = a.clone();
            mix.axpy(c(1.0, 0.), &b);
            mix.scale_mut(c(0.5, 0.));
            let s_mix = von_neumann_entropy(&mix).unwrap();
            let s_avg = 0.5 * (von_neumann_entropy(&a).unwrap() + von_neumann_entropy(&b).unwrap());
            assert!(s_mix >= s_avg - 1e-10);
        }
    }

    #[test]
    fn squeezing_coherent_state_along_x() {
        // CSS along x: minimum uncertainty, (Delta Jz)^2 = j/2, <Jx> = j
        let n = 10;
        let jy = collective_spin(n, SpinAxis::Y);
        let u = unitary_from_hermitian(&jy, std::f64::consts::FRAC_PI_2).unwrap();
        let mut v = vec![c(0., 0.); n + 1];
        v[0] = c(1., 0.);
        let rho = OperatorMatrix::projector(&u.apply(&v));
        let rep = spin_squeezing(&rho, n).unwrap();
        assert!((rep.xi2 - 1.0).abs() < 1e-10);
        assert!((rep.var_jz - 2.5).abs() < 1e-10);
        assert!((rep.mean_jx - 5.0).abs() < 1e-10);
    }

    #[test]
    fn squeezing_undefined_for_jz_eigenstate() {
        let n = 10;
        let mut v = vec![c(0., 0.); n + 1];
        v[0] = c(1., 0.); // |j, m = j> of Jz
        let rho = OperatorMatrix::projector(&v);
        assert!(matches!(
            spin_squeezing(&rho, n),
            Err(Error::UndefinedSqueezingDirection)
        ));
    }

    #[test]
    fn squeezing_one_axis_twisting_squeezes() {
        // e^{-i chi Jz^2 t} |CSS_x> squeezes a quadrature in the y-z plane;
        // Var Jz itself is twist-invariant ([Jz^2, Jz] = 0), so rotate about
        // x to bring the squeezed direction onto z before evaluating xi_z^2.
        let n = 10;
        let jx = collective_spin(n, SpinAxis::X);
        let jy = collective_spin(n, SpinAxis::Y);
        let jz = collective_spin(n, SpinAxis::Z);
        let u = unitary_from_hermitian(&jy, std::f64::consts::FRAC_PI_2).unwrap();
        let mut v = vec![c(0., 0.); n + 1];
        v[0] = c(1., 0.);
        let css = u.apply(&v);
        let jz2 = jz.matmul(&jz);
        let twisted = unitary_from_hermitian(&jz2, 0.05).unwrap().apply(&css);
        let mut best = f64::INFINITY;
        for k in 0..64 {
            let theta = std::f64::consts::PI * k as f64 / 64.0;
            let rot = unitary_from_hermitian(&jx, theta).unwrap();
            let rho = OperatorMatrix::projector(&rot.apply(&twisted));
            if let Ok(rep) = spin_squeezing(&rho, n) {
                best = best.min(rep.xi2);
            }
        }
        assert!(best < 1.0, "one-axis twisting must squeeze, got {best}");
        // and the unrotated state keeps Var Jz = j/2 exactly
        let rep = spin_squeezing(&OperatorMatrix::projector(&twisted), n).unwrap();
        assert!((rep.var_jz - 2.5).abs() < 1e-10);
    }

    #[test]
    fn information_gain_cases() {
        assert_eq!(information_gain(0.0, 0.0), 0.0);
        assert!((information_gain(0.0, 2.0_f64.ln()) - 2.0_f64.ln()).abs() < 1e-15);
        // ensemble {diag(0.9,0.1), diag(0.1,0.9)} with equal weights
        let s_member = von_neumann_entropy(&diag2(0.9, 0.1)).unwrap();
        let s_mean = von_neumann_entropy(&diag2(0.5, 0.5)).unwrap();
        let gain = information_gain(s_member, s_mean);
        assert!((gain - (2.0_f64.ln() - 0.3251)).abs() < 1e-4);
        assert!((gain - 0.368).abs() < 1e-3);
    }
}
