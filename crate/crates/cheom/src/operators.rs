//! Dense complex operator algebra on composite Hilbert spaces.
//!
//! Everything here is dense and row-major: hierarchy matrices at desk scale
//! (atom dimension <= 64) never justify sparse formats, and the SDE inner
//! loops want cache-friendly layouts. All values are immutable after
//! construction and safe to share across threads.

use num_complex::Complex;

use crate::{Error, Result};

pub type C64 = Complex<f64>;

mod eig;
pub use eig::{hermitian_eig, hermitian_eigvals};

/// Dense complex square matrix with dimension metadata, row-major storage.
#[derive(Clone, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl std::fmt::Debug for OperatorMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "OperatorMatrix (dim {})", self.dim)?;
        for i in 0..self.dim.min(8) {
            for j in 0..self.dim.min(8) {
                write!(f, "{:+.3}{:+.3}i  ", self[(i, j)].re, self[(i, j)].im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for OperatorMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for OperatorMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl OperatorMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "operator dimension must be positive");
        Self { dim, data: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from rows of (re, im) pairs; panics on ragged input.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "row {i} has wrong length");
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    /// Projector |v><v| of a (not necessarily normalized) vector.
    pub fn projector(v: &[C64]) -> Self {
        let dim = v.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = v[i] * v[j].conj();
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn entries_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn set_zero(&mut self) {
        self.data.fill(C64::new(0.0, 0.0));
    }

    pub fn scale_mut(&mut self, s: C64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.scale_mut(s);
        out
    }

    /// self += alpha * x
    pub fn axpy(&mut self, alpha: C64, x: &Self) {
        debug_assert_eq!(self.dim, x.dim);
        for (a, b) in self.data.iter_mut().zip(x.data.iter()) {
            *a += alpha * b;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.dim);
        matmul_acc(&mut out, C64::new(1.0, 0.0), self, other);
        out
    }

    /// Matrix-vector product self * v.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        debug_assert_eq!(v.len(), self.dim);
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            let mut acc = C64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(v.iter()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest |m_ij - conj(m_ji)| over all entries.
    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                d = d.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        d
    }

    /// Hermitian within `tol` relative to the largest entry magnitude.
    pub fn is_hermitian_within(&self, tol: f64) -> bool {
        let scale = self.max_abs().max(1.0);
        self.hermitian_defect() <= tol * scale
    }

    /// Replaces self by (self + self^dagger)/2.
    pub fn symmetrize_mut(&mut self) {
        for i in 0..self.dim {
            for j in i..self.dim {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)].conj());
                self[(i, j)] = avg;
                self[(j, i)] = avg.conj();
            }
        }
    }

    /// tr(self * other), evaluated without forming the product.
    pub fn trace_of_product(&self, other: &Self) -> C64 {
        debug_assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * other.data[k * n + i];
            }
        }
        acc
    }

    /// Real expectation value tr(op * rho) for Hermitian `op` and state `rho`.
    pub fn expectation(&self, rho: &Self) -> f64 {
        self.trace_of_product(rho).re
    }
}

/// out += alpha * a * b
pub fn matmul_acc(out: &mut OperatorMatrix, alpha: C64, a: &OperatorMatrix, b: &OperatorMatrix) {
    let n = a.dim;
    debug_assert_eq!(b.dim, n);
    debug_assert_eq!(out.dim, n);
    if n >= 24 {
        // matrixmultiply expects complex entries as [f64; 2]; Complex<f64> is
        // repr(C) with that exact layout.
        unsafe {
            matrixmultiply::zgemm(
                matrixmultiply::CGemmOption::Standard,
                matrixmultiply::CGemmOption::Standard,
                n,
                n,
                n,
                [alpha.re, alpha.im],
                a.data.as_ptr() as *const [f64; 2],
                n as isize,
                1,
                b.data.as_ptr() as *const [f64; 2],
                n as isize,
                1,
                [1.0, 0.0],
                out.data.as_mut_ptr() as *mut [f64; 2],
                n as isize,
                1,
            );
        }
        return;
    }
    for i in 0..n {
        let arow = &a.data[i * n..(i + 1) * n];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, aik) in arow.iter().enumerate() {
            let s = alpha * aik;
            if s.re == 0.0 && s.im == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, bkj) in orow.iter_mut().zip(brow.iter()) {
                *o += s * bkj;
            }
        }
    }
}

/// out += alpha * [a, b]
pub fn commutator_acc(
    out: &mut OperatorMatrix,
    alpha: C64,
    a: &OperatorMatrix,
    b: &OperatorMatrix,
) {
    matmul_acc(out, alpha, a, b);
    matmul_acc(out, -alpha, b, a);
}

/// Kronecker product of the operands in the given order.
pub fn kron_compose(ops: &[&OperatorMatrix]) -> Result<OperatorMatrix> {
    if ops.is_empty() {
        return Err(Error::NoOperands);
    }
    let mut acc = ops[0].clone();
    for op in &ops[1..] {
        acc = kron_pair(&acc, op);
    }
    Ok(acc)
}

fn kron_pair(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    let (da, db) = (a.dim, b.dim);
    let dim = da * db;
    let mut out = OperatorMatrix::zeros(dim);
    for i in 0..da {
        for j in 0..da {
            let aij = a[(i, j)];
            if aij.re == 0.0 && aij.im == 0.0 {
                continue;
            }
            for k in 0..db {
                for l in 0..db {
                    out[(i * db + k, j * db + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Which collective spin component to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinAxis {
    X,
    Y,
    Z,
}

/// Collective spin operator on the symmetric (maximal-j) sector of
/// `n_atoms` spin-1/2 particles, j = n_atoms/2, dimension n_atoms + 1.
///
/// Basis ordering is |j, j>, |j, j-1>, ..., |j, -j>, so the z component is
/// diag(j, j-1, ..., -j).
pub fn collective_spin(n_atoms: usize, axis: SpinAxis) -> OperatorMatrix {
    assert!(n_atoms >= 1, "n_atoms must be >= 1");
    let dim = n_atoms + 1;
    let j = n_atoms as f64 / 2.0;
    let m_of = |b: usize| j - b as f64;
    match axis {
        SpinAxis::Z => OperatorMatrix::from_fn(dim, |i, k| {
            if i == k {
                C64::new(m_of(i), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }),
        SpinAxis::X | SpinAxis::Y => {
            // J+ |j,m> = sqrt(j(j+1) - m(m+1)) |j,m+1>; raising decreases the
            // basis index by one in this ordering.
            let mut plus = OperatorMatrix::zeros(dim);
            for b in 1..dim {
                let m = m_of(b);
                let c = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
                plus[(b - 1, b)] = C64::new(c, 0.0);
            }
            let minus = plus.adjoint();
            let mut out = OperatorMatrix::zeros(dim);
            match axis {
                SpinAxis::X => {
                    out.axpy(C64::new(0.5, 0.0), &plus);
                    out.axpy(C64::new(0.5, 0.0), &minus);
                }
                SpinAxis::Y => {
                    out.axpy(C64::new(0.0, -0.5), &plus);
                    out.axpy(C64::new(0.0, 0.5), &minus);
                }
                SpinAxis::Z => unreachable!(),
            }
            out
        }
    }
}

/// Bosonic annihilation operator truncated at `fock_dim` levels:
/// a[n-1, n] = sqrt(n).
pub fn annihilation_op(fock_dim: usize) -> OperatorMatrix {
    assert!(fock_dim >= 2, "fock_dim must be >= 2");
    let mut a = OperatorMatrix::zeros(fock_dim);
    for n in 1..fock_dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Ordered tensor-factor structure of a composite Hilbert space.
///
/// Factor ordering is fixed at construction; operators must be built on a
/// declared layout so dimension mismatches surface immediately.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertSpaceLayout {
    factors: Vec<(String, usize)>,
}

impl HilbertSpaceLayout {
    pub fn new(factors: Vec<(String, usize)>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::NoOperands);
        }
        for (label, dim) in &factors {
            if *dim == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "factor `{label}` has zero dimension"
                )));
            }
        }
        for i in 0..factors.len() {
            for k in i + 1..factors.len() {
                if factors[i].0 == factors[k].0 {
                    return Err(Error::DimensionMismatch(format!(
                        "duplicate factor label `{}`",
                        factors[i].0
                    )));
                }
            }
        }
        Ok(Self { factors })
    }

    pub fn of_dims(dims: &[usize]) -> Result<Self> {
        Self::new(
            dims.iter()
                .enumerate()
                .map(|(i, d)| (format!("f{i}"), *d))
                .collect(),
        )
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|(_, d)| d).product()
    }

    pub fn factors(&self) -> &[(String, usize)] {
        &self.factors
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|(l, _)| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|(_, d)| *d).collect()
    }

    fn check_dim(&self, m: &OperatorMatrix) -> Result<()> {
        if m.dim() != self.total_dim() {
            return Err(Error::DimensionMismatch(format!(
                "operator dim {} does not match layout dim {}",
                m.dim(),
                self.total_dim()
            )));
        }
        Ok(())
    }

    /// Places `op` on the named factor, identity elsewhere.
    pub fn embed(&self, op: &OperatorMatrix, label: &str) -> Result<OperatorMatrix> {
        let pos = self.position(label)?;
        if op.dim() != self.factors[pos].1 {
            return Err(Error::DimensionMismatch(format!(
                "operator dim {} does not match factor `{label}` dim {}",
                op.dim(),
                self.factors[pos].1
            )));
        }
        let parts: Vec<OperatorMatrix> = self
            .factors
            .iter()
            .enumerate()
            .map(|(i, (_, d))| {
                if i == pos {
                    op.clone()
                } else {
                    OperatorMatrix::identity(*d)
                }
            })
            .collect();
        kron_compose(&parts.iter().collect::<Vec<_>>())
    }
}

/// Partial trace of `rho` over all factors not in `keep`; the result lives
/// on the kept factors in layout order.
pub fn partial_trace(
    rho: &OperatorMatrix,
    layout: &HilbertSpaceLayout,
    keep: &[&str],
) -> Result<OperatorMatrix> {
    layout.check_dim(rho)?;
    if keep.is_empty() {
        return Err(Error::NoOperands);
    }
    let mut keep_pos: Vec<usize> = Vec::with_capacity(keep.len());
    for label in keep {
        keep_pos.push(layout.position(label)?);
    }
    keep_pos.sort_unstable();
    keep_pos.dedup();

    let dims = layout.dims();
    let nf = dims.len();
    let trace_pos: Vec<usize> = (0..nf).filter(|p| !keep_pos.contains(p)).collect();
    let dk: usize = keep_pos.iter().map(|&p| dims[p]).product();
    let dt: usize = trace_pos.iter().map(|&p| dims[p]).product();

    // Row-major strides over the full space.
    let mut stride = vec![1usize; nf];
    for f in (0..nf.saturating_sub(1)).rev() {
        stride[f] = stride[f + 1] * dims[f + 1];
    }
    let full = layout.total_dim();

    // Offsets of every kept and traced multi-index in the full space.
    let offsets = |positions: &[usize], count: usize| -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        let pdims: Vec<usize> = positions.iter().map(|&p| dims[p]).collect();
        let mut idx = vec![0usize; positions.len()];
        loop {
            let off: usize = positions
                .iter()
                .zip(idx.iter())
                .map(|(&p, &i)| i * stride[p])
                .sum();
            out.push(off);
            // mixed-radix increment
            let mut f = positions.len();
            loop {
                if f == 0 {
                    return out;
                }
                f -= 1;
                idx[f] += 1;
                if idx[f] < pdims[f] {
                    break;
                }
                idx[f] = 0;
            }
        }
    };
    let keep_off = offsets(&keep_pos, dk);
    let trace_off = offsets(&trace_pos, dt);

    let mut out = OperatorMatrix::zeros(dk);
    for (r, &ro) in keep_off.iter().enumerate() {
        for (c, &co) in keep_off.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &to in &trace_off {
                acc += rho.entries()[(ro + to) * full + (co + to)];
            }
            out[(r, c)] = acc;
        }
    }
    Ok(out)
}

/// Partial transpose of `rho` on the named factor.
pub fn partial_transpose(
    rho: &OperatorMatrix,
    layout: &HilbertSpaceLayout,
    part: &str,
) -> Result<OperatorMatrix> {
    layout.check_dim(rho)?;
    let pos = layout.position(part)?;
    let dims = layout.dims();
    let nf = dims.len();
    let mut stride = vec![1usize; nf];
    for f in (0..nf.saturating_sub(1)).rev() {
        stride[f] = stride[f + 1] * dims[f + 1];
    }
    let full = layout.total_dim();
    let dp = dims[pos];
    let sp = stride[pos];

    let mut out = OperatorMatrix::zeros(full);
    for row in 0..full {
        let ri = (row / sp) % dp;
        let row_base = row - ri * sp;
        for col in 0..full {
            let ci = (col / sp) % dp;
            let col_base = col - ci * sp;
            // swap the sub-indices of the transposed factor
            let src_row = row_base + ci * sp;
            let src_col = col_base + ri * sp;
            out.entries_mut()[row * full + col] = rho.entries()[src_row * full + src_col];
        }
    }
    Ok(out)
}

/// e^{-i t H} for Hermitian `h`, via spectral decomposition.
pub fn unitary_from_hermitian(h: &OperatorMatrix, t: f64) -> Result<OperatorMatrix> {
    let (vals, vecs) = hermitian_eig(h)?;
    let n = h.dim();
    let mut out = OperatorMatrix::zeros(n);
    // out = V e^{-i t diag} V^dagger
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                let phase = C64::from_polar(1.0, -t * vals[k]);
                acc += vecs[(i, k)] * phase * vecs[(j, k)].conj();
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    pub(crate) fn sigma_x() -> OperatorMatrix {
        OperatorMatrix::from_rows(&[vec![c(0., 0.), c(1., 0.)], vec![c(1., 0.), c(0., 0.)]])
    }

    pub(crate) fn sigma_z() -> OperatorMatrix {
        OperatorMatrix::from_rows(&[vec![c(1., 0.), c(0., 0.)], vec![c(0., 0.), c(-1., 0.)]])
    }

    #[test]
    fn kron_identity_case() {
        let i2 = OperatorMatrix::identity(2);
        let i3 = OperatorMatrix::identity(3);
        let k = kron_compose(&[&i2, &i3]).unwrap();
        assert_eq!(k.dim(), 6);
        assert!((k.sub(&OperatorMatrix::identity(6))).max_abs() < 1e-15);
    }

    #[test]
    fn kron_sigma_z_i2() {
        let k = kron_compose(&[&sigma_z(), &OperatorMatrix::identity(2)]).unwrap();
        let expect = [1.0, 1.0, -1.0, -1.0];
        for (i, e) in expect.iter().enumerate() {
            assert!((k[(i, i)] - c(*e, 0.)).norm() < 1e-15);
        }
    }

    #[test]
    fn kron_sigma_x_pair_flips_00_to_11() {
        // hand-expanded 4x4 product: (sx ox sx) |00> = |11>
        let k = kron_compose(&[&sigma_x(), &sigma_x()]).unwrap();
        let v = k.apply(&[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]);
        assert!((v[3] - c(1., 0.)).norm() < 1e-15);
        assert!(v[0].norm() + v[1].norm() + v[2].norm() < 1e-15);
    }

    #[test]
    fn kron_empty_errors() {
        assert!(matches!(kron_compose(&[]), Err(Error::NoOperands)));
    }

    #[test]
    fn kron_associative() {
        let a = sigma_x();
        let b = sigma_z();
        let cc = annihilation_op(3);
        let left = kron_compose(&[&kron_compose(&[&a, &b]).unwrap(), &cc]).unwrap();
        let right = kron_compose(&[&a, &b, &cc]).unwrap();
        assert!(left.sub(&right).max_abs() < 1e-14);
    }

    #[test]
    fn collective_spin_half() {
        let jz = collective_spin(1, SpinAxis::Z);
        assert_eq!(jz.dim(), 2);
        assert!((jz[(0, 0)] - c(0.5, 0.)).norm() < 1e-15);
        assert!((jz[(1, 1)] - c(-0.5, 0.)).norm() < 1e-15);
    }

    #[test]
    fn collective_spin_one_z() {
        let jz = collective_spin(2, SpinAxis::Z);
        for (i, e) in [1.0, 0.0, -1.0].iter().enumerate() {
            assert!((jz[(i, i)] - c(*e, 0.)).norm() < 1e-15);
        }
    }

    #[test]
    fn collective_spin_ten_algebra() {
        let jx = collective_spin(10, SpinAxis::X);
        let jy = collective_spin(10, SpinAxis::Y);
        let jz = collective_spin(10, SpinAxis::Z);
        let vals = hermitian_eigvals(&jx).unwrap();
        assert!((vals.last().unwrap() - 5.0).abs() < 1e-12);
        // [Jx, Jy] = i Jz entrywise
        let mut comm = OperatorMatrix::zeros(11);
        commutator_acc(&mut comm, c(1., 0.), &jx, &jy);
        comm.axpy(c(0., -1.), &jz);
        assert!(comm.max_abs() < 1e-12);
    }

    #[test]
    fn su2_algebra_and_casimir_up_to_12() {
        for n in 1..=12usize {
            let jx = collective_spin(n, SpinAxis::X);
            let jy = collective_spin(n, SpinAxis::Y);
            let jz = collective_spin(n, SpinAxis::Z);
            let j = n as f64 / 2.0;
            let triples = [(&jx, &jy, &jz), (&jy, &jz, &jx), (&jz, &jx, &jy)];
            for (a, b, cc) in triples {
                let mut comm = OperatorMatrix::zeros(n + 1);
                commutator_acc(&mut comm, c(1., 0.), a, b);
                comm.axpy(c(0., -1.), cc);
                assert!(comm.max_abs() < 1e-12, "SU(2) algebra failed at n={n}");
            }
            let mut casimir = jx.matmul(&jx);
            casimir.axpy(c(1., 0.), &jy.matmul(&jy));
            casimir.axpy(c(1., 0.), &jz.matmul(&jz));
            casimir.axpy(c(-j * (j + 1.0), 0.), &OperatorMatrix::identity(n + 1));
            assert!(casimir.max_abs() < 1e-12, "Casimir failed at n={n}");
        }
    }

    #[test]
    fn annihilation_small() {
        let a = annihilation_op(2);
        assert!((a[(0, 1)] - c(1., 0.)).norm() < 1e-15);
        assert!(a[(0, 0)].norm() + a[(1, 0)].norm() + a[(1, 1)].norm() < 1e-15);
    }

    #[test]
    fn number_operator_from_annihilation() {
        let a = annihilation_op(4);
        let n = a.adjoint().matmul(&a);
        for (i, e) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
            assert!((n[(i, i)] - c(*e, 0.)).norm() < 1e-14);
        }
    }

    #[test]
    fn truncated_commutator_artifact() {
        // [a, a+] at fock_dim = 6 is the identity except entry (5,5) = -5,
        // a documented truncation artifact.
        let a = annihilation_op(6);
        let mut comm = OperatorMatrix::zeros(6);
        commutator_acc(&mut comm, c(1., 0.), &a, &a.adjoint());
        for i in 0..5 {
            assert!((comm[(i, i)] - c(1., 0.)).norm() < 1e-14);
        }
        assert!((comm[(5, 5)] - c(-5., 0.)).norm() < 1e-14);
    }

    fn random_density(dim: usize, seed: u64) -> OperatorMatrix {
        // quick LCG-based pseudo-random state; tests only
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut g = OperatorMatrix::from_fn(dim, |_, _| C64::new(next(), next()));
        let gh = g.adjoint();
        g = g.matmul(&gh);
        let tr = g.trace().re;
        g.scale_mut(c(1.0 / tr, 0.0));
        g
    }

    #[test]
    fn partial_trace_product_state() {
        let rho1 = random_density(2, 7);
        let rho2 = random_density(3, 9);
        let layout =
            HilbertSpaceLayout::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        let joint = kron_compose(&[&rho1, &rho2]).unwrap();
        let red = partial_trace(&joint, &layout, &["a"]).unwrap();
        assert!(red.sub(&rho1).max_abs() < 1e-14);
        let red_b = partial_trace(&joint, &layout, &["b"]).unwrap();
        assert!(red_b.sub(&rho2).max_abs() < 1e-14);
    }

    #[test]
    fn partial_trace_bell_state() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = OperatorMatrix::projector(&[c(s, 0.), c(0., 0.), c(0., 0.), c(s, 0.)]);
        let layout =
            HilbertSpaceLayout::new(vec![("q1".into(), 2), ("q2".into(), 2)]).unwrap();
        let red = partial_trace(&bell, &layout, &["q1"]).unwrap();
        let half = OperatorMatrix::identity(2).scaled(c(0.5, 0.));
        assert!(red.sub(&half).max_abs() < 1e-14);
    }

    #[test]
    fn partial_trace_vs_index_sum_oracle() {
        // independent brute-force double-loop contraction on a 3-qubit state
        let rho = random_density(8, 21);
        let layout = HilbertSpaceLayout::new(vec![
            ("1".into(), 2),
            ("2".into(), 2),
            ("3".into(), 2),
        ])
        .unwrap();
        let red = partial_trace(&rho, &layout, &["1", "3"]).unwrap();
        // oracle: index (i1 i2 i3), keep 1 and 3, sum over i2
        let mut oracle = OperatorMatrix::zeros(4);
        for i1 in 0..2usize {
            for i3 in 0..2usize {
                for j1 in 0..2usize {
                    for j3 in 0..2usize {
                        let mut acc = c(0., 0.);
                        for i2 in 0..2usize {
                            let row = i1 * 4 + i2 * 2 + i3;
                            let col = j1 * 4 + i2 * 2 + j3;
                            acc += rho[(row, col)];
                        }
                        oracle[(i1 * 2 + i3, j1 * 2 + j3)] = acc;
                    }
                }
            }
        }
        assert!(red.sub(&oracle).max_abs() < 1e-12);
        assert!((red.trace() - rho.trace()).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_unknown_label() {
        let rho = random_density(4, 3);
        let layout =
            HilbertSpaceLayout::new(vec![("a".into(), 2), ("b".into(), 2)]).unwrap();
        assert!(matches!(
            partial_trace(&rho, &layout, &["zz"]),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn partial_transpose_involutive_and_spectrum() {
        let layout =
            HilbertSpaceLayout::new(vec![("a".into(), 2), ("b".into(), 2)]).unwrap();
        let rho = random_density(4, 5);
        let pt = partial_transpose(&rho, &layout, "a").unwrap();
        let back = partial_transpose(&pt, &layout, "a").unwrap();
        assert!(back.sub(&rho).max_abs() < 1e-15);
        assert!((pt.trace() - rho.trace()).norm() < 1e-14);

        // product state: spectrum unchanged
        let r1 = random_density(2, 11);
        let r2 = random_density(2, 13);
        let prod = kron_compose(&[&r1, &r2]).unwrap();
        let pt = partial_transpose(&prod, &layout, "a").unwrap();
        let mut ev_a = hermitian_eigvals(&prod).unwrap();
        let mut ev_b = hermitian_eigvals(&pt).unwrap();
        ev_a.sort_by(f64::total_cmp);
        ev_b.sort_by(f64::total_cmp);
        for (x, y) in ev_a.iter().zip(ev_b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn partial_transpose_bell_negative_eigenvalue() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = OperatorMatrix::projector(&[c(s, 0.), c(0., 0.), c(0., 0.), c(s, 0.)]);
        let layout =
            HilbertSpaceLayout::new(vec![("a".into(), 2), ("b".into(), 2)]).unwrap();
        let pt = partial_transpose(&bell, &layout, "a").unwrap();
        let evs = hermitian_eigvals(&pt).unwrap();
        assert!((evs[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_recovers_kron_factors() {
        let r1 = random_density(3, 17);
        let r2 = random_density(2, 19);
        let layout =
            HilbertSpaceLayout::new(vec![("x".into(), 3), ("y".into(), 2)]).unwrap();
        let joint = kron_compose(&[&r1, &r2]).unwrap();
        assert!(partial_trace(&joint, &layout, &["x"]).unwrap().sub(&r1).max_abs() < 1e-14);
        assert!(partial_trace(&joint, &layout, &["y"]).unwrap().sub(&r2).max_abs() < 1e-14);
    }

    #[test]
    fn embed_matches_kron() {
        let layout = HilbertSpaceLayout::new(vec![("atom".into(), 2), ("mode".into(), 3)])
            .unwrap();
        let a = annihilation_op(3);
        let e = layout.embed(&a, "mode").unwrap();
        let direct = kron_compose(&[&OperatorMatrix::identity(2), &a]).unwrap();
        assert!(e.sub(&direct).max_abs() < 1e-15);
    }

    #[test]
    fn unitary_from_hermitian_rotates_spin() {
        // e^{-i (pi/2) Jy} |j, j>_z is the coherent state along +x: <Jx> = j
        let n = 10;
        let jy = collective_spin(n, SpinAxis::Y);
        let jx = collective_spin(n, SpinAxis::X);
        let u = unitary_from_hermitian(&jy, std::f64::consts::FRAC_PI_2).unwrap();
        let mut v = vec![c(0., 0.); n + 1];
        v[0] = c(1., 0.);
        let css = u.apply(&v);
        let rho = OperatorMatrix::projector(&css);
        assert!((jx.expectation(&rho) - 5.0).abs() < 1e-10);
    }

    #[test]
    fn zgemm_and_naive_agree() {
        // exercise both kernel paths on either side of the size threshold
        for n in [23usize, 25] {
            let a = random_density(n, 31);
            let b = random_density(n, 37);
            let fast = a.matmul(&b);
            let mut slow = OperatorMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    let mut acc = c(0., 0.);
                    for k in 0..n {
                        acc += a[(i, k)] * b[(k, j)];
                    }
                    slow[(i, j)] = acc;
                }
            }
            assert!(fast.sub(&slow).max_abs() < 1e-13);
        }
    }
}
