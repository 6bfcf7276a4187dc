//! Minimal Naimark dilations and the commutant extremality test.
//!
//! The dilation space is `K = ⊕_i supp(A_i)`. Writing `A_i = V_i Λ_i V_i*`
//! over its support, the isometry stacks the blocks `B_i = √Λ_i V_i*`, so
//! `J*P_iJ = B_i*B_i = A_i` and `dim K = Σ_i rank A_i`.
//!
//! `A` is extreme iff the only block-diagonal Hermitian `D = ⊕ D_i` with
//! `Σ_i B_i* D_i B_i = 0` is `D = 0`.

use nalgebra::{DMatrix, SVD};
use serde::Serialize;

use crate::feasibility::{herm_to_vec, vec_to_herm};
use crate::observable::DiscreteObservable;
use crate::operator::{dist, eigh_unchecked, frobenius, hermitize, identity, CMatrix, Tolerance};
use crate::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const KERNEL_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct NaimarkDilation {
    pub dilation_dim: usize,
    /// `dim K × dim H`.
    pub isometry: CMatrix,
    /// Orthogonal projections on `K`, one per outcome.
    pub blocks: Vec<CMatrix>,
}

impl NaimarkDilation {
    /// The rows of `J` selected by block `i`, i.e. `B_i`.
    pub fn block_rows(&self, i: usize) -> CMatrix {
        let rows = self.block_range(i);
        self.isometry.rows(rows.start, rows.len()).into_owned()
    }

    /// Coordinates of block `i` in `K`; blocks are coordinate projections.
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        let p = &self.blocks[i];
        let on: Vec<usize> = (0..p.nrows()).filter(|&k| p[(k, k)].re > 0.5).collect();
        match (on.first(), on.last()) {
            (Some(&a), Some(&b)) => a..b + 1,
            _ => 0..0,
        }
    }
}

pub fn dilate_minimal(a: &DiscreteObservable, tol: &Tolerance) -> NaimarkDilation {
    let d = a.dim();
    let mut rows: Vec<CMatrix> = Vec::with_capacity(a.len());
    for e in a.effects() {
        let (vals, vecs) = eigh_unchecked(&hermitize(e)).support(tol.eig_tol);
        let mut b = vecs.adjoint();
        for (k, v) in vals.iter().enumerate() {
            b.row_mut(k).scale_mut(v.sqrt());
        }
        rows.push(b);
    }
    let dim_k: usize = rows.iter().map(|b| b.nrows()).sum();
    let mut isometry = CMatrix::zeros(dim_k, d);
    let mut blocks = Vec::with_capacity(rows.len());
    let mut offset = 0;
    for b in &rows {
        let r = b.nrows();
        isometry.rows_mut(offset, r).copy_from(b);
        let mut p = CMatrix::zeros(dim_k, dim_k);
        for k in offset..offset + r {
            p[(k, k)] = crate::operator::c64(1.0, 0.0);
        }
        blocks.push(p);
        offset += r;
    }
    NaimarkDilation { dilation_dim: dim_k, isometry, blocks }
}

#[derive(Debug, Clone, Serialize)]
pub struct DilationDiagnostics {
    /// `‖J*J - I‖_F`.
    pub isometry_residual: f64,
    /// Worst of `‖P_i² - P_i‖`, `‖P_i* - P_i‖` and `‖P_iP_j‖` (i ≠ j).
    pub projection_residual: f64,
    /// `‖Σ P_i - I_K‖_F`.
    pub completeness_residual: f64,
    /// Worst `‖J*P_iJ - A_i‖_F`; blocks beyond the outcome count compare with 0.
    pub reconstruction_residual: f64,
    pub dilation_dim: usize,
    pub rank_sum: usize,
    pub minimal: bool,
}

impl DilationDiagnostics {
    pub fn max_residual(&self) -> f64 {
        self.isometry_residual
            .max(self.projection_residual)
            .max(self.completeness_residual)
            .max(self.reconstruction_residual)
    }

    pub fn passes(&self, bound: f64) -> bool {
        self.minimal && self.max_residual() <= bound
    }
}

pub fn verify_dilation(a: &DiscreteObservable, dil: &NaimarkDilation, tol: &Tolerance) -> Result<DilationDiagnostics> {
    let k = dil.isometry.nrows();
    if dil.isometry.ncols() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: dil.isometry.ncols() });
    }
    if let Some(p) = dil.blocks.iter().find(|p| p.shape() != (k, k)) {
        return Err(Error::DimensionMismatch { expected: k, found: p.nrows() });
    }
    let j = &dil.isometry;
    let isometry_residual = dist(&(j.adjoint() * j), &identity(a.dim()));
    let mut projection_residual: f64 = 0.0;
    let mut sum = CMatrix::zeros(k, k);
    for (i, p) in dil.blocks.iter().enumerate() {
        projection_residual = projection_residual.max(dist(&(p * p), p)).max(dist(&p.adjoint(), p));
        for q in &dil.blocks[i + 1..] {
            projection_residual = projection_residual.max(frobenius(&(p * q)));
        }
        sum += p;
    }
    let completeness_residual = dist(&sum, &identity(k));
    let zero = CMatrix::zeros(a.dim(), a.dim());
    let n = dil.blocks.len().max(a.len());
    let reconstruction_residual = (0..n)
        .map(|i| {
            let target = if i < a.len() { a.effect(i) } else { &zero };
            match dil.blocks.get(i) {
                Some(p) => dist(&(j.adjoint() * p * j), target),
                None => frobenius(target),
            }
        })
        .fold(0.0, f64::max);
    let rank_sum: usize = a.ranks(tol).iter().sum();
    Ok(DilationDiagnostics {
        isometry_residual,
        projection_residual,
        completeness_residual,
        reconstruction_residual,
        dilation_dim: dil.dilation_dim,
        rank_sum,
        minimal: dil.dilation_dim == rank_sum && k == rank_sum,
    })
}

#[derive(Debug, Clone)]
pub struct ExtremalityReport {
    pub is_extreme: bool,
    pub kernel_dim: usize,
    /// Block-diagonal Hermitian operators on `K`, unit Frobenius norm.
    pub kernel_basis: Vec<CMatrix>,
    pub singular_values: Vec<f64>,
    pub dilation: NaimarkDilation,
}

impl ExtremalityReport {
    /// Per-outcome `J*P_i D P_i J` for kernel element `k`; these sum to zero.
    pub fn perturbation(&self, k: usize) -> Vec<CMatrix> {
        let d = &self.kernel_basis[k];
        let j = &self.dilation.isometry;
        self.dilation.blocks.iter().map(|p| hermitize(&(j.adjoint() * p * d * p * j))).collect()
    }
}

pub fn is_extreme(a: &DiscreteObservable, tol: &Tolerance) -> ExtremalityReport {
    let dil = dilate_minimal(a, tol);
    let d = a.dim();
    let bs: Vec<CMatrix> = (0..dil.blocks.len()).map(|i| dil.block_rows(i)).collect();
    let cols: usize = bs.iter().map(|b| b.nrows() * b.nrows()).sum();
    // Pad with zero rows so the thin SVD exposes the full right null space.
    let rows = (d * d).max(cols);
    let mut map = DMatrix::<f64>::zeros(rows, cols);
    let mut col = 0;
    let mut unit = vec![0.0; d * d];
    for b in &bs {
        let r = b.nrows();
        for e in 0..r * r {
            let mut coords = vec![0.0; r * r];
            coords[e] = 1.0;
            let image = b.adjoint() * vec_to_herm(&coords, r) * b;
            herm_to_vec(&image, &mut unit);
            for (row, v) in unit.iter().enumerate() {
                map[(row, col)] = *v;
            }
            col += 1;
        }
    }
    let mut singular_values = Vec::new();
    let mut kernel_basis = Vec::new();
    if cols > 0 {
        let svd = SVD::new(map, false, true);
        let v_t = svd.v_t.expect("v_t requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        singular_values = svd.singular_values.iter().cloned().collect();
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > KERNEL_CUTOFF * smax {
                continue;
            }
            let coords: Vec<f64> = v_t.row(k).iter().cloned().collect();
            kernel_basis.push(assemble(&dil, &bs, &coords));
        }
        singular_values.sort_by(|x, y| y.total_cmp(x));
    }
    ExtremalityReport {
        is_extreme: kernel_basis.is_empty(),
        kernel_dim: kernel_basis.len(),
        kernel_basis,
        singular_values,
        dilation: dil,
    }
}

fn assemble(dil: &NaimarkDilation, bs: &[CMatrix], coords: &[f64]) -> CMatrix {
    let k = dil.dilation_dim;
    let mut out = CMatrix::zeros(k, k);
    let mut at = 0;
    let mut offset = 0;
    for b in bs {
        let r = b.nrows();
        let block = vec_to_herm(&coords[at..at + r * r], r);
        out.view_mut((offset, offset), (r, r)).copy_from(&block);
        at += r * r;
        offset += r;
    }
    let n = frobenius(&out);
    if n > 0.0 {
        out.scale(1.0 / n)
    } else {
        out
    }
}
