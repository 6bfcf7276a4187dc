//! Block-PSD feasibility by Dykstra's alternating projections.
//!
//! A [`FeasibilityProblem`] asks for Hermitian blocks `X_b ⪰ 0` (optionally
//! `X_b ⪯ U_b`) satisfying real-linear equality constraints
//! `Σ_terms coeff · map(X_b) = T`. Each Hermitian block is flattened onto an
//! orthonormal real basis so that the Frobenius inner product becomes the
//! Euclidean one; the affine set is then handled through one SVD of the
//! stacked constraint matrix, and the cone through per-block eigenvalue
//! clipping.
//!
//! The verdict is three-valued. `Feasible` always comes with a point that
//! satisfies the constraints within `feas_tol`; `NumericallyInfeasible` means
//! either a separating functional was found (exact up to roundoff) or the
//! distance between the two sets stalled well above `feas_tol`; anything else
//! is `Undecided`.

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::operator::{c64, eigh, eigh_unchecked, ensure_square, hermitian_deviation, hermitize, CMatrix, Tolerance};
use crate::{Error, Result};

mod small;

/// Smallest `feas_tol` the engine will certify against; below this roundoff
/// in the affine projection dominates and every run is reported undecided.
pub const MIN_FEAS_TOL: f64 = 1e-12;

const STALL_WINDOW: usize = 100;
/// Iterations between attempts to certify infeasibility by a separating functional.
const FARKAS_EVERY: usize = 50;
const STALL_REL_CHANGE: f64 = 1e-10;
const RANK_CUTOFF: f64 = 1e-12;
const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Block {
    pub dim: usize,
    pub upper: Option<CMatrix>,
}

#[derive(Debug, Clone)]
pub enum TermMap {
    /// `X` itself; block and target dimensions agree.
    Identity,
    /// `x · H` for a 1×1 block `x`.
    ScalarTimes(CMatrix),
    /// `B* X B`, with `B` of shape `block dim × target dim`.
    Congruence(CMatrix),
}

#[derive(Debug, Clone)]
pub struct Term {
    pub block: usize,
    pub coeff: f64,
    pub map: TermMap,
}

impl Term {
    pub fn identity(block: usize) -> Self {
        Term { block, coeff: 1.0, map: TermMap::Identity }
    }

    pub fn scaled(block: usize, coeff: f64) -> Self {
        Term { block, coeff, map: TermMap::Identity }
    }

    pub fn scalar_times(block: usize, h: CMatrix) -> Self {
        Term { block, coeff: 1.0, map: TermMap::ScalarTimes(h) }
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub terms: Vec<Term>,
    pub target: CMatrix,
}

#[derive(Debug, Clone, Default)]
pub struct FeasibilityProblem {
    blocks: Vec<Block>,
    constraints: Vec<Constraint>,
}

impl FeasibilityProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, dim: usize) -> usize {
        self.blocks.push(Block { dim, upper: None });
        self.blocks.len() - 1
    }

    /// Block constrained to `0 ⪯ X ⪯ upper`.
    pub fn add_bounded_block(&mut self, upper: CMatrix) -> Result<usize> {
        let dim = ensure_square(&upper)?;
        let dev = hermitian_deviation(&upper);
        if dev > 1e-9 {
            return Err(Error::NotHermitian(dev));
        }
        self.blocks.push(Block { dim, upper: Some(hermitize(&upper)) });
        Ok(self.blocks.len() - 1)
    }

    pub fn add_constraint(&mut self, terms: Vec<Term>, target: CMatrix) -> Result<()> {
        let t = ensure_square(&target)?;
        let dev = hermitian_deviation(&target);
        if dev > 1e-9 {
            return Err(Error::NotHermitian(dev));
        }
        for term in &terms {
            let block = self.blocks.get(term.block).ok_or_else(|| {
                Error::Precondition(format!("term refers to block {} of {}", term.block, self.blocks.len()))
            })?;
            let ok = match &term.map {
                TermMap::Identity => block.dim == t,
                TermMap::ScalarTimes(h) => block.dim == 1 && h.nrows() == t && h.ncols() == t,
                TermMap::Congruence(b) => b.nrows() == block.dim && b.ncols() == t,
            };
            if !ok {
                return Err(Error::DimensionMismatch { expected: t, found: block.dim });
            }
        }
        self.constraints.push(Constraint { terms, target: hermitize(&target) });
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Constraint residual `‖Σ terms - target‖_F` summed over constraints, for any point.
    pub fn constraint_residual(&self, point: &[CMatrix]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let mut acc = -c.target.clone();
                for term in &c.terms {
                    acc += apply_term(term, &point[term.block]);
                }
                acc.iter().map(|z| z.norm_sqr()).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Largest violation of `0 ⪯ X_b (⪯ U_b)` over all blocks.
    pub fn cone_violation(&self, point: &[CMatrix]) -> f64 {
        self.blocks
            .iter()
            .zip(point)
            .map(|(b, x)| {
                let eig = eigh_unchecked(&hermitize(x));
                let mut v = (-eig.min()).max(0.0);
                if let Some(u) = &b.upper {
                    v = v.max((-eigh_unchecked(&hermitize(&(u - x))).min()).max(0.0));
                }
                v
            })
            .fold(0.0, f64::max)
    }
}

fn apply_term(term: &Term, x: &CMatrix) -> CMatrix {
    let out = match &term.map {
        TermMap::Identity => x.clone(),
        TermMap::ScalarTimes(h) => h.scale(x[(0, 0)].re),
        TermMap::Congruence(b) => b.adjoint() * x * b,
    };
    out.scale(term.coeff)
}

fn herm_len(n: usize) -> usize {
    n * n
}

/// Orthonormal real coordinates of a Hermitian matrix: diagonal, then
/// `√2·Re`, `√2·Im` of each upper off-diagonal entry.
pub(crate) fn herm_to_vec(x: &CMatrix, out: &mut [f64]) {
    let n = x.nrows();
    let s = std::f64::consts::SQRT_2;
    for i in 0..n {
        out[i] = x[(i, i)].re;
    }
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            out[k] = s * x[(i, j)].re;
            out[k + 1] = s * x[(i, j)].im;
            k += 2;
        }
    }
}

pub(crate) fn vec_to_herm(v: &[f64], n: usize) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut x = CMatrix::zeros(n, n);
    for i in 0..n {
        x[(i, i)] = c64(v[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            let z = c64(s * v[k], s * v[k + 1]);
            x[(i, j)] = z;
            x[(j, i)] = z.conj();
            k += 2;
        }
    }
    x
}

/// Hermitian Cholesky with strictly positive pivots; a PD block is its own
/// cone projection, so this spares the eigendecomposition.
fn is_positive_definite(x: &CMatrix) -> bool {
    let n = x.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = x[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d.is_nan() || d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = c64(d, 0.0);
        for i in j + 1..n {
            let mut v = x[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / d;
        }
    }
    true
}

/// Projection onto `{X ⪰ 0}`, or approximately onto `{0 ⪯ X ⪯ U}`.
///
/// With an upper bound the matrix is moved into the Löwner frame of `U`
/// (restricted to the support of `U`), clipped to `[0, 1]` there and mapped
/// back; this is exact when `U` is a multiple of a projection and `X`
/// commutes with it.
pub fn project_psd(x: &CMatrix, upper: Option<&CMatrix>, tol: &Tolerance) -> Result<CMatrix> {
    let eig = eigh(x, tol)?;
    match upper {
        None => Ok(eig.map(|l| l.max(0.0))),
        Some(u) => {
            if u.nrows() != x.nrows() {
                return Err(Error::DimensionMismatch { expected: x.nrows(), found: u.nrows() });
            }
            Ok(project_box(&hermitize(x), &hermitize(u)))
        }
    }
}

fn project_box(x: &CMatrix, u: &CMatrix) -> CMatrix {
    let ue = eigh_unchecked(u);
    let scale = ue.max().max(0.0);
    let (vals, v) = ue.support(1e-12 * scale.max(1e-300));
    if vals.is_empty() {
        return CMatrix::zeros(x.nrows(), x.ncols());
    }
    let half: Vec<f64> = vals.iter().map(|l| l.sqrt()).collect();
    let r = vals.len();
    let mut w = v.adjoint() * x * &v;
    for i in 0..r {
        for j in 0..r {
            w[(i, j)] /= c64(half[i] * half[j], 0.0);
        }
    }
    let clipped = eigh_unchecked(&hermitize(&w)).map(|l| l.clamp(0.0, 1.0));
    let mut back = clipped;
    for i in 0..r {
        for j in 0..r {
            back[(i, j)] *= c64(half[i] * half[j], 0.0);
        }
    }
    hermitize(&(&v * back * v.adjoint()))
}

/// The problem in flattened real coordinates with a factored affine map.
#[derive(Debug, Clone)]
pub struct CompiledProblem {
    offsets: Vec<usize>,
    dims: Vec<usize>,
    uppers: Vec<Option<CMatrix>>,
    n: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Orthonormal basis of the row space of `a`, as columns.
    row_basis: DMatrix<f64>,
    x_min: DVector<f64>,
    sigma_max: f64,
    inconsistency: f64,
}

impl CompiledProblem {
    pub fn new(problem: &FeasibilityProblem) -> Self {
        let mut offsets = Vec::with_capacity(problem.blocks.len());
        let mut n = 0;
        for b in &problem.blocks {
            offsets.push(n);
            n += herm_len(b.dim);
        }
        let m: usize = problem.constraints.iter().map(|c| herm_len(c.target.nrows())).sum();
        let mut a = DMatrix::<f64>::zeros(m, n);
        let mut b = DVector::<f64>::zeros(m);
        let mut row = 0;
        for c in &problem.constraints {
            let t = c.target.nrows();
            let len = herm_len(t);
            herm_to_vec(&c.target, &mut b.as_mut_slice()[row..row + len]);
            let mut img = vec![0.0; len];
            for term in &c.terms {
                let nb = problem.blocks[term.block].dim;
                let mut basis = vec![0.0; herm_len(nb)];
                for k in 0..herm_len(nb) {
                    basis.iter_mut().for_each(|v| *v = 0.0);
                    basis[k] = 1.0;
                    let e = vec_to_herm(&basis, nb);
                    herm_to_vec(&apply_term(term, &e), &mut img);
                    for (r, v) in img.iter().enumerate() {
                        a[(row + r, offsets[term.block] + k)] += v;
                    }
                }
            }
            row += len;
        }

        let (row_basis, x_min, sigma_max) = if m == 0 || n == 0 {
            (DMatrix::zeros(n, 0), DVector::zeros(n), 0.0)
        } else {
            let svd = SVD::new(a.clone(), true, true);
            let u = svd.u.as_ref().expect("u requested");
            let v_t = svd.v_t.as_ref().expect("v_t requested");
            let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
            let keep: Vec<usize> =
                (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > RANK_CUTOFF * smax).collect();
            let basis = DMatrix::from_fn(n, keep.len(), |i, c| v_t[(keep[c], i)]);
            let mut x_min = DVector::zeros(n);
            for &k in &keep {
                let coeff = u.column(k).dot(&b) / svd.singular_values[k];
                x_min += v_t.row(k).transpose() * coeff;
            }
            (basis, x_min, smax)
        };
        let inconsistency = (&a * &x_min - &b).norm();
        CompiledProblem {
            offsets,
            dims: problem.blocks.iter().map(|b| b.dim).collect(),
            uppers: problem.blocks.iter().map(|b| b.upper.clone()).collect(),
            n,
            a,
            b,
            row_basis,
            x_min,
            sigma_max,
            inconsistency,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.inconsistency <= CONSISTENCY_TOL * (1.0 + self.b.norm())
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn flatten(&self, point: &[CMatrix]) -> DVector<f64> {
        let mut v = DVector::zeros(self.n);
        for (k, x) in point.iter().enumerate() {
            let len = herm_len(self.dims[k]);
            herm_to_vec(x, &mut v.as_mut_slice()[self.offsets[k]..self.offsets[k] + len]);
        }
        v
    }

    pub fn unflatten(&self, v: &DVector<f64>) -> Vec<CMatrix> {
        (0..self.dims.len())
            .map(|k| {
                let len = herm_len(self.dims[k]);
                vec_to_herm(&v.as_slice()[self.offsets[k]..self.offsets[k] + len], self.dims[k])
            })
            .collect()
    }

    /// Euclidean projection onto `{x : A x = b}` (least squares when inconsistent).
    pub fn project_affine_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let coeffs = self.row_basis.tr_mul(x);
        x - &self.row_basis * coeffs + &self.x_min
    }

    pub fn project_cone_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for k in 0..self.dims.len() {
            let (off, d) = (self.offsets[k], self.dims[k]);
            let len = herm_len(d);
            let seg = &x.as_slice()[off..off + len];
            let dst = &mut out.as_mut_slice()[off..off + len];
            if d == 1 {
                let mut v = seg[0].max(0.0);
                if let Some(u) = &self.uppers[k] {
                    v = v.min(u[(0, 0)].re.max(0.0));
                }
                dst[0] = v;
                continue;
            }
            if self.uppers[k].is_none() && d <= small::MAX_DIM {
                small::project_psd_flat(seg, d, dst);
                continue;
            }
            let xm = vec_to_herm(seg, d);
            if self.uppers[k].is_none() && is_positive_definite(&xm) {
                dst.copy_from_slice(seg);
                continue;
            }
            let p = match &self.uppers[k] {
                None => eigh_unchecked(&xm).map(|l| l.max(0.0)),
                Some(u) => project_box(&xm, u),
            };
            herm_to_vec(&p, dst);
        }
        out
    }

    pub fn affine_residual_vec(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).norm()
    }

    fn row_space_part(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.row_basis * self.row_basis.tr_mul(v)
    }

    /// Tries to turn `direction` into a separating functional `w` in the row
    /// space of the constraints: `<w, z>` is constant on the affine set and
    /// bounded below on the cone by a strictly larger value. Blocks with a
    /// slightly negative spectrum are repaired with the row-space part of the
    /// block identities. Returns the normalized separation on success.
    pub fn farkas_separation(&self, direction: &DVector<f64>) -> Option<f64> {
        let mut w = self.row_space_part(direction);
        let mut ones = DVector::zeros(self.n);
        for (k, &d) in self.dims.iter().enumerate() {
            for i in 0..d {
                ones[self.offsets[k] + i] = 1.0;
            }
        }
        let w0 = self.row_space_part(&ones);
        let block = |v: &DVector<f64>, k: usize| {
            vec_to_herm(&v.as_slice()[self.offsets[k]..self.offsets[k] + herm_len(self.dims[k])], self.dims[k])
        };
        let mut shift: f64 = 0.0;
        for k in (0..self.dims.len()).filter(|&k| self.uppers[k].is_none()) {
            let low = eigh_unchecked(&block(&w, k)).min();
            if low < 0.0 {
                let base = eigh_unchecked(&block(&w0, k)).min();
                if base <= 0.0 {
                    return None;
                }
                shift = shift.max(-low / base);
            }
        }
        if shift > 0.0 {
            w += &w0 * (shift * (1.0 + 1e-6));
        }
        let scale = w.norm();
        if scale == 0.0 {
            return None;
        }
        let mut lower = 0.0;
        for k in 0..self.dims.len() {
            let eig = eigh_unchecked(&block(&w, k));
            match &self.uppers[k] {
                None if eig.min() < -1e-12 * scale => return None,
                None => {}
                Some(u) => {
                    let top = eigh_unchecked(u).max().max(0.0);
                    lower -= top * eig.values.iter().filter(|&&l| l < 0.0).map(|l| -l).sum::<f64>();
                }
            }
        }
        let on_affine = w.dot(&self.x_min);
        let margin = lower - on_affine;
        (margin > 1e-9 * scale * (1.0 + self.x_min.norm())).then(|| margin / scale)
    }
}

/// Projects a block tuple onto the affine solution set of `problem`.
pub fn project_affine(problem: &FeasibilityProblem, point: &[CMatrix]) -> Result<Vec<CMatrix>> {
    if point.len() != problem.blocks.len() {
        return Err(Error::DimensionMismatch { expected: problem.blocks.len(), found: point.len() });
    }
    for (b, x) in problem.blocks.iter().zip(point) {
        if x.nrows() != b.dim || x.ncols() != b.dim {
            return Err(Error::DimensionMismatch { expected: b.dim, found: x.nrows() });
        }
    }
    let compiled = CompiledProblem::new(problem);
    if !compiled.is_consistent() {
        return Err(Error::NotApplicable(format!(
            "constraint system is inconsistent (least-squares residual {:.3e})",
            compiled.inconsistency
        )));
    }
    Ok(compiled.unflatten(&compiled.project_affine_vec(&compiled.flatten(point))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeasibilityStatus {
    Feasible,
    NumericallyInfeasible,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub feas_tol: f64,
    /// Keep the per-iteration gap sequence in the verdict.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iter: 50_000, feas_tol: 1e-8, record_trace: false }
    }
}

impl SolverOptions {
    pub fn with_tol(feas_tol: f64) -> Self {
        SolverOptions { feas_tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityVerdict {
    pub status: FeasibilityStatus,
    #[serde(skip)]
    pub point: Option<Vec<CMatrix>>,
    pub residual: f64,
    pub separation_gap: Option<f64>,
    pub structurally_infeasible: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub gap_trace: Vec<f64>,
    pub note: Option<String>,
}

impl FeasibilityVerdict {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }

    pub fn is_infeasible(&self) -> bool {
        self.status == FeasibilityStatus::NumericallyInfeasible
    }
}

/// Runs Dykstra's alternating projections between the block cone and the
/// affine set, starting from the minimum-norm affine point.
pub fn dykstra_solve(problem: &FeasibilityProblem, opts: &SolverOptions) -> FeasibilityVerdict {
    let compiled = CompiledProblem::new(problem);
    dykstra_compiled(&compiled, opts)
}

pub fn dykstra_compiled(c: &CompiledProblem, opts: &SolverOptions) -> FeasibilityVerdict {
    let mut verdict = FeasibilityVerdict {
        status: FeasibilityStatus::Undecided,
        point: None,
        residual: f64::INFINITY,
        separation_gap: None,
        structurally_infeasible: false,
        iterations: 0,
        gap_trace: Vec::new(),
        note: None,
    };
    if !c.is_consistent() {
        verdict.status = FeasibilityStatus::NumericallyInfeasible;
        verdict.structurally_infeasible = true;
        verdict.residual = c.inconsistency;
        verdict.note = Some(format!("equality constraints are inconsistent (residual {:.3e})", c.inconsistency));
        return verdict;
    }
    if opts.feas_tol.is_nan() || opts.feas_tol < MIN_FEAS_TOL {
        verdict.note = Some(format!("feas_tol {:e} is below the certifiable floor {MIN_FEAS_TOL:e}", opts.feas_tol));
        return verdict;
    }
    let tol = opts.feas_tol;
    let residual_gate = tol * c.sigma_max.max(1.0);
    let mut x = c.x_min.clone();
    let mut p = DVector::<f64>::zeros(c.n);
    let mut window: Vec<f64> = Vec::new();
    let mut gap = f64::INFINITY;
    for k in 0..opts.max_iter {
        let shifted = &x + &p;
        let y = c.project_cone_vec(&shifted);
        p = shifted - &y;
        x = c.project_affine_vec(&y);
        gap = (&y - &x).norm();
        verdict.iterations = k + 1;
        if opts.record_trace {
            verdict.gap_trace.push(gap);
        }
        if gap <= residual_gate {
            let residual = c.affine_residual_vec(&y);
            if residual <= tol {
                verdict.status = FeasibilityStatus::Feasible;
                verdict.residual = residual;
                verdict.point = Some(c.unflatten(&y));
                return verdict;
            }
        }
        if gap > 10.0 * tol && (k + 1) % FARKAS_EVERY == 0 {
            if let Some(sep) = c.farkas_separation(&(&y - &x)) {
                verdict.status = FeasibilityStatus::NumericallyInfeasible;
                verdict.separation_gap = Some(gap);
                verdict.residual = gap;
                verdict.note = Some(format!("separating functional with margin {sep:.3e}"));
                return verdict;
            }
        }
        window.push(gap);
        if window.len() > STALL_WINDOW {
            let old = window[window.len() - 1 - STALL_WINDOW];
            if gap > 10.0 * tol && (old - gap).abs() <= STALL_REL_CHANGE * old {
                verdict.status = FeasibilityStatus::NumericallyInfeasible;
                verdict.separation_gap = Some(gap);
                verdict.residual = gap;
                return verdict;
            }
            if window.len() > 4 * STALL_WINDOW {
                window.drain(..window.len() - 2 * STALL_WINDOW);
            }
        }
    }
    verdict.residual = gap;
    verdict.separation_gap = Some(gap);
    verdict.note = Some(format!("no decision after {} iterations", opts.max_iter));
    verdict
}
