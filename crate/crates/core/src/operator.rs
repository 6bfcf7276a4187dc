//! Dense complex matrix primitives with toleranced positivity and ordering.
//!
//! Matrices are `nalgebra` dense matrices over `Complex<f64>`. Hermitian
//! spectral routines hermitize their input as `(X + X*)/2` once it is within
//! `eq_tol` of Hermitian; inputs further away are rejected.

use nalgebra::{Complex, DMatrix, SymmetricEigen, SVD};

use crate::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Default pseudoinverse cutoff, relative to the largest singular value.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Absolute slacks for eigenvalue and equality comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub eig_tol: f64,
    pub eq_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { eig_tol: 1e-9, eq_tol: 1e-9 }
    }
}

impl Tolerance {
    pub fn new(eig_tol: f64, eq_tol: f64) -> Result<Self> {
        for (name, v) in [("eig_tol", eig_tol), ("eq_tol", eq_tol)] {
            if !(v > 0.0 && v <= 1e-3) {
                return Err(Error::InvalidTolerance(format!("{name}={v} must lie in (0, 1e-3]")));
            }
        }
        Ok(Tolerance { eig_tol, eq_tol })
    }

    /// Both slacks set to the same value.
    pub fn uniform(tol: f64) -> Result<Self> {
        Self::new(tol, tol)
    }

    /// Scales both slacks, saturating at the 1e-3 ceiling.
    pub fn scaled(&self, factor: f64) -> Self {
        Tolerance { eig_tol: (self.eig_tol * factor).min(1e-3), eq_tol: (self.eq_tol * factor).min(1e-3) }
    }
}

pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Builds a matrix from row-major entries, rejecting bad shapes and NaN/Inf.
pub fn from_row_major(rows: usize, cols: usize, entries: &[C64]) -> Result<CMatrix> {
    if entries.len() != rows * cols {
        return Err(Error::EntryCount { expected: rows * cols, found: entries.len() });
    }
    if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(CMatrix::from_row_slice(rows, cols, entries))
}

pub fn real_diag(values: &[f64]) -> CMatrix {
    let n = values.len();
    CMatrix::from_fn(n, n, |i, j| if i == j { c64(values[i], 0.0) } else { C64::new(0.0, 0.0) })
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn zeros(dim: usize) -> CMatrix {
    CMatrix::zeros(dim, dim)
}

/// `|v><v|` for a column vector given by its entries.
pub fn ket_bra(v: &[C64]) -> CMatrix {
    let n = v.len();
    CMatrix::from_fn(n, n, |i, j| v[i] * v[j].conj())
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dist(a: &CMatrix, b: &CMatrix) -> f64 {
    frobenius(&(a - b))
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().iter().sum()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn ensure_square(a: &CMatrix) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(a.nrows())
}

fn ensure_same_dim(a: &CMatrix, b: &CMatrix) -> Result<usize> {
    let n = ensure_square(a)?;
    let m = ensure_square(b)?;
    if n != m {
        return Err(Error::DimensionMismatch { expected: n, found: m });
    }
    Ok(n)
}

/// `||A - A*||_F`.
pub fn hermitian_deviation(a: &CMatrix) -> f64 {
    dist(a, &a.adjoint())
}

pub fn hermitize(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Spectral decomposition of a (near-)Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Columns are orthonormal eigenvectors, in the order of `values`.
    pub vectors: CMatrix,
}

impl Eigh {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Rebuilds `V f(Λ) V*`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let s = f(lambda);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        hermitize(&(scaled * self.vectors.adjoint()))
    }

    /// Eigenvectors whose eigenvalue exceeds `threshold`, as columns.
    pub fn support(&self, threshold: f64) -> (Vec<f64>, CMatrix) {
        let keep: Vec<usize> = (0..self.values.len()).filter(|&j| self.values[j] > threshold).collect();
        let vals = keep.iter().map(|&j| self.values[j]).collect();
        let cols = CMatrix::from_fn(self.vectors.nrows(), keep.len(), |i, k| self.vectors[(i, keep[k])]);
        (vals, cols)
    }
}

pub fn eigh(a: &CMatrix, tol: &Tolerance) -> Result<Eigh> {
    ensure_square(a)?;
    let dev = hermitian_deviation(a);
    if dev > tol.eq_tol {
        return Err(Error::NotHermitian(dev));
    }
    Ok(eigh_unchecked(&hermitize(a)))
}

/// Eigendecomposition of a matrix already known to be Hermitian.
pub(crate) fn eigh_unchecked(h: &CMatrix) -> Eigh {
    let n = h.nrows();
    if n == 0 {
        return Eigh { values: vec![], vectors: CMatrix::zeros(0, 0) };
    }
    let se = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let values = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| se.eigenvectors[(r, order[c])]);
    Eigh { values, vectors }
}

pub fn min_eigenvalue(a: &CMatrix, tol: &Tolerance) -> Result<f64> {
    Ok(eigh(a, tol)?.min())
}

/// Largest eigenvalue of a Hermitian matrix (checked at the default tolerance).
pub fn max_eigenvalue(a: &CMatrix) -> Result<f64> {
    Ok(eigh(a, &Tolerance::default())?.max())
}

pub fn is_psd(a: &CMatrix, tol: &Tolerance) -> Result<bool> {
    Ok(min_eigenvalue(a, tol)? >= -tol.eig_tol)
}

/// True iff `e` is Hermitian within `eq_tol` with spectrum in `[-eig_tol, 1 + eig_tol]`.
pub fn check_effect(e: &CMatrix, tol: &Tolerance) -> Result<bool> {
    ensure_square(e)?;
    if hermitian_deviation(e) > tol.eq_tol {
        return Ok(false);
    }
    let eig = eigh_unchecked(&hermitize(e));
    Ok(eig.min() >= -tol.eig_tol && eig.max() <= 1.0 + tol.eig_tol)
}

/// Löwner order `a <= b` up to `eig_tol`.
pub fn loewner_leq(a: &CMatrix, b: &CMatrix, tol: &Tolerance) -> Result<bool> {
    ensure_same_dim(a, b)?;
    Ok(min_eigenvalue(&(b - a), tol)? >= -tol.eig_tol)
}

/// Principal square root of a PSD matrix; eigenvalues in `[-eig_tol, 0)` are clipped.
pub fn sqrt_psd(a: &CMatrix, tol: &Tolerance) -> Result<CMatrix> {
    let eig = eigh(a, tol)?;
    if eig.min() < -tol.eig_tol {
        return Err(Error::NotPsd(eig.min()));
    }
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// Moore–Penrose pseudoinverse; singular values below `cutoff * σ_max` count as zero.
pub fn pinv(a: &CMatrix, cutoff: f64) -> CMatrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return CMatrix::zeros(n, m);
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = CMatrix::zeros(n, m);
    if smax == 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff * smax {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..n {
            let vik = v_t[(k, i)].conj() * inv;
            for j in 0..m {
                out[(i, j)] += vik * u[(j, k)].conj();
            }
        }
    }
    out
}

/// Orthogonal projection onto the closure of `ran a`.
pub fn range_projector(a: &CMatrix) -> CMatrix {
    a * pinv(a, PINV_CUTOFF)
}

/// Factor `b = a* c a` with `0 <= c <= I` supported on `ran a`.
///
/// `a` maps H to K (a `dim K x dim H` matrix) and `b` acts on H. Requires
/// `0 <= b <= a* a` up to `eig_tol`.
pub fn douglas_factor(a: &CMatrix, b: &CMatrix, tol: &Tolerance) -> Result<CMatrix> {
    let d = ensure_square(b)?;
    if a.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: a.ncols() });
    }
    let lower = min_eigenvalue(b, tol)?;
    if lower < -tol.eig_tol {
        return Err(Error::OrderViolation(lower));
    }
    let upper = min_eigenvalue(&(a.adjoint() * a - b), tol)?;
    if upper < -tol.eig_tol {
        return Err(Error::OrderViolation(upper));
    }
    let a_plus = pinv(a, PINV_CUTOFF);
    let c = a_plus.adjoint() * hermitize(b) * &a_plus;
    // a⁺ already annihilates (ran a)⊥; the sandwich keeps c on ran a exactly.
    let q = a * &a_plus;
    Ok(hermitize(&(&q * c * &q)))
}

/// Kronecker product, row index `i_a * rows(b) + i_b`.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `tr_A X` for `X` on `H_A ⊗ H_B` under the [`tensor`] index convention.
pub fn partial_trace_first(x: &CMatrix, dim_a: usize, dim_b: usize) -> Result<CMatrix> {
    let n = ensure_square(x)?;
    if n != dim_a * dim_b {
        return Err(Error::DimensionMismatch { expected: dim_a * dim_b, found: n });
    }
    Ok(CMatrix::from_fn(dim_b, dim_b, |j, l| (0..dim_a).map(|i| x[(i * dim_b + j, i * dim_b + l)]).sum()))
}

/// `tr_B X`, used for reduced states on the first factor.
pub fn partial_trace_second(x: &CMatrix, dim_a: usize, dim_b: usize) -> Result<CMatrix> {
    let n = ensure_square(x)?;
    if n != dim_a * dim_b {
        return Err(Error::DimensionMismatch { expected: dim_a * dim_b, found: n });
    }
    Ok(CMatrix::from_fn(dim_a, dim_a, |i, k| (0..dim_b).map(|j| x[(i * dim_b + j, k * dim_b + j)]).sum()))
}

/// Numerical rank counting eigenvalues above `threshold`.
pub fn psd_rank(a: &CMatrix, threshold: f64) -> usize {
    eigh_unchecked(&hermitize(a)).values.iter().filter(|&&l| l > threshold).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn counterexample_effects() -> (CMatrix, CMatrix, CMatrix, CMatrix) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e1 = real_diag(&[4.0 / 7.0, 0.0]);
        let e2 = real_diag(&[0.0, 4.0 / 7.0]);
        let e3 = identity(2) - &e1 - &e2;
        let f1 = ket_bra(&[c64(s, 0.0), c64(-s, 0.0)]).scale(4.0 / 7.0);
        (e1, e2, e3, f1)
    }

    fn pauli_z() -> CMatrix {
        real_diag(&[1.0, -1.0])
    }

    #[test]
    fn effect_checks() {
        let (e1, ..) = counterexample_effects();
        assert!(check_effect(&e1, &tol()).unwrap());
        assert!(check_effect(&identity(2), &tol()).unwrap());
        assert!(!check_effect(&identity(2).scale(2.0), &tol()).unwrap());
        let rect = CMatrix::zeros(2, 3);
        assert!(matches!(check_effect(&rect, &tol()), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn loewner_examples() {
        let (e1, e2, e3, f1) = counterexample_effects();
        let psd = ket_bra(&[c64(0.3, 0.1), c64(-0.2, 0.5)]);
        assert!(loewner_leq(&zeros(2), &psd, &tol()).unwrap());
        assert!(!loewner_leq(&(&e1 + &e2 + &f1), &identity(2), &tol()).unwrap());
        assert!(loewner_leq(&(&e3 + &f1), &identity(2), &tol()).unwrap());
        assert!(loewner_leq(&zeros(2), &zeros(3), &tol()).is_err());
    }

    #[test]
    fn max_eigenvalue_examples() {
        let (e1, e2, e3, f1) = counterexample_effects();
        let top = max_eigenvalue(&(&e1 + &e2 + &f1)).unwrap();
        assert!((top - 8.0 / 7.0).abs() <= 1e-12 * 8.0 / 7.0);
        assert!((max_eigenvalue(&identity(5)).unwrap() - 1.0).abs() < 1e-14);
        // trace 2, det 1/2 scaled by 4/7: (4/7)(1 ± 1/√2)
        let expect = 4.0 / 7.0 * (1.0 + std::f64::consts::FRAC_1_SQRT_2);
        assert!((max_eigenvalue(&(&e1 + &f1)).unwrap() - expect).abs() < 1e-12);
        // E_3 + F_1 = (3/7) I + (4/7)|ψ><ψ| has spectrum {3/7, 1}
        let eig = eigh(&(&e3 + &f1), &tol()).unwrap();
        assert!((eig.values[0] - 3.0 / 7.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);
        let skew = from_row_major(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(-1.0, 0.0), c64(0.0, 0.0)]).unwrap();
        assert!(matches!(max_eigenvalue(&skew), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn sqrt_examples() {
        let r = sqrt_psd(&real_diag(&[4.0, 9.0]), &tol()).unwrap();
        assert!(dist(&r, &real_diag(&[2.0, 3.0])) < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p = ket_bra(&[c64(s, 0.0), c64(0.0, -s)]);
        assert!(dist(&sqrt_psd(&p, &tol()).unwrap(), &p) < 1e-12);
        let (_, _, _, f1) = counterexample_effects();
        let psi = ket_bra(&[c64(s, 0.0), c64(-s, 0.0)]);
        assert!(dist(&sqrt_psd(&f1, &tol()).unwrap(), &psi.scale(2.0 / 7f64.sqrt())) < 1e-12);
        assert!(matches!(sqrt_psd(&real_diag(&[1.0, -0.1]), &tol()), Err(Error::NotPsd(_))));
        // roundoff-scale negatives are clipped
        assert!(sqrt_psd(&real_diag(&[1.0, -1e-12]), &tol()).is_ok());
    }

    #[test]
    fn pinv_examples() {
        assert!(dist(&pinv(&real_diag(&[2.0, 0.0]), PINV_CUTOFF), &real_diag(&[0.5, 0.0])) < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = from_row_major(2, 2, &[c64(s, 0.0), c64(0.0, s), c64(0.0, s), c64(s, 0.0)]).unwrap();
        assert!(dist(&pinv(&u, PINV_CUTOFF), &u.adjoint()) < 1e-14);
        assert!(dist(&pinv(&identity(2).scale(2.0), PINV_CUTOFF), &identity(2).scale(0.5)) < 1e-14);
        let rect = CMatrix::from_fn(3, 2, |i, j| c64((i + 2 * j) as f64, 0.5 * i as f64));
        let p = pinv(&rect, PINV_CUTOFF);
        assert_eq!(p.shape(), (2, 3));
        assert!(dist(&(&rect * &p * &rect), &rect) < 1e-12);
    }

    #[test]
    fn douglas_examples() {
        let (e1, ..) = counterexample_effects();
        let c = douglas_factor(&identity(2), &e1, &tol()).unwrap();
        assert!(dist(&c, &e1) < 1e-12);
        let c = douglas_factor(&identity(2).scale(2.0), &identity(2), &tol()).unwrap();
        assert!(dist(&c, &identity(2).scale(0.25)) < 1e-12);
        assert!(matches!(douglas_factor(&identity(2), &identity(2).scale(1.5), &tol()), Err(Error::OrderViolation(_))));
    }

    #[test]
    fn douglas_vanishes_off_range() {
        // a: C^1 -> C^3 with range spanned by e_0 + e_1
        let a = CMatrix::from_column_slice(3, 1, &[c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0)]);
        let b = real_diag(&[1.2]);
        let c = douglas_factor(&a, &b, &tol()).unwrap();
        assert!(dist(&(a.adjoint() * &c * &a), &b) < 1e-12);
        let e2 = CMatrix::from_column_slice(3, 1, &[c64(0.0, 0.0), c64(0.0, 0.0), c64(1.0, 0.0)]);
        assert!(frobenius(&(&c * &e2)) < 1e-14);
    }

    #[test]
    fn tensor_examples() {
        assert!(dist(&tensor(&identity(2), &identity(2)), &identity(4)) < 1e-15);
        let p0 = real_diag(&[1.0, 0.0]);
        assert!(dist(&tensor(&p0, &identity(2)), &real_diag(&[1.0, 1.0, 0.0, 0.0])) < 1e-15);
        assert!(dist(&tensor(&pauli_z(), &pauli_z()), &real_diag(&[1.0, -1.0, -1.0, 1.0])) < 1e-15);
    }

    #[test]
    fn partial_trace_examples() {
        let ra = real_diag(&[0.25, 0.75]);
        let rb = from_row_major(2, 2, &[c64(0.6, 0.0), c64(0.1, 0.2), c64(0.1, -0.2), c64(0.4, 0.0)]).unwrap();
        let pt = partial_trace_first(&tensor(&ra, &rb), 2, 2).unwrap();
        assert!(dist(&pt, &rb) < 1e-15);
        assert!(dist(&partial_trace_first(&identity(4), 2, 2).unwrap(), &identity(2).scale(2.0)) < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phi = ket_bra(&[c64(s, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(s, 0.0)]);
        assert!(dist(&partial_trace_first(&phi, 2, 2).unwrap(), &identity(2).scale(0.5)) < 1e-15);
        assert!(partial_trace_first(&identity(4), 3, 2).is_err());
    }

    #[test]
    fn tolerance_bounds() {
        assert!(Tolerance::new(0.0, 1e-9).is_err());
        assert!(Tolerance::new(1e-9, 1e-2).is_err());
        assert!(Tolerance::new(1e-3, 1e-3).is_ok());
    }

    fn arb_matrix(n: usize) -> impl Strategy<Value = CMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n)
            .prop_map(move |v| CMatrix::from_fn(n, n, |i, j| c64(v[i * n + j].0, v[i * n + j].1)))
    }

    fn arb_psd() -> impl Strategy<Value = CMatrix> {
        (1usize..6).prop_flat_map(arb_matrix).prop_map(|g| &g * g.adjoint())
    }

    proptest! {
        #[test]
        fn sqrt_squares_back(a in arb_psd()) {
            let r = sqrt_psd(&a, &tol()).unwrap();
            prop_assert!(dist(&(&r * &r), &a) <= 1e-9);
            prop_assert!(is_psd(&r, &tol()).unwrap());
        }

        #[test]
        fn douglas_factor_postconditions(
            (g, w) in (1usize..5, 1usize..5).prop_flat_map(|(d, k)| {
                (proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d * k),
                 proptest::collection::vec(-1.0f64..1.0, d * d))
                    .prop_map(move |(a, w)| {
                        (CMatrix::from_fn(k, d, |i, j| c64(a[i * d + j].0, a[i * d + j].1)),
                         CMatrix::from_fn(d, d, |i, j| c64(w[i * d + j], 0.0)))
                    })
            })
        ) {
            // b = a* c0 a for a random 0 <= c0 <= I built from a contraction
            let k = g.nrows();
            let c0 = {
                let h = CMatrix::from_fn(k, k, |i, j| w[(i % w.nrows(), j % w.ncols())] * c64(0.3, 0.0));
                let h = hermitize(&(&h * h.adjoint()));
                let top = eigh_unchecked(&h).max().max(1.0);
                h.scale(1.0 / top)
            };
            let b = hermitize(&(g.adjoint() * &c0 * &g));
            let c = douglas_factor(&g, &b, &tol()).unwrap();
            prop_assert!(dist(&(g.adjoint() * &c * &g), &b) <= 1e-9);
            prop_assert!(eigh_unchecked(&c).min() >= -1e-9);
            prop_assert!(eigh_unchecked(&c).max() <= 1.0 + 1e-9);
            let q = range_projector(&g);
            prop_assert!(dist(&(&q * &c * &q), &c) <= 1e-9);
        }

        #[test]
        fn loewner_partial_order(a in (1usize..5).prop_flat_map(arb_matrix), b in (1usize..5).prop_flat_map(arb_matrix)) {
            let ha = hermitize(&a);
            prop_assert!(loewner_leq(&ha, &ha, &tol()).unwrap());
            if a.nrows() == b.nrows() {
                let hb = hermitize(&b);
                if loewner_leq(&ha, &hb, &tol()).unwrap() && loewner_leq(&hb, &ha, &tol()).unwrap() {
                    prop_assert!(dist(&ha, &hb) <= ha.nrows() as f64 * tol().eig_tol);
                }
            }
        }

        #[test]
        fn partial_trace_is_adjoint_of_tensoring(
            x in arb_matrix(6), y in arb_matrix(3)
        ) {
            let lhs = trace(&(partial_trace_first(&x, 2, 3).unwrap() * &y));
            let rhs = trace(&(&x * tensor(&identity(2), &y)));
            let scale = 1.0 + lhs.norm().max(rhs.norm());
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
        }
    }
}
