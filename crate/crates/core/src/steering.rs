//! Assemblages and local-hidden-state models.
//!
//! Alice measures `A_k` on her half of `ρ_AB`, leaving Bob with
//! `σ_{x|k} = tr_A[(A_k(x) ⊗ I) ρ]`. An LHS model is a family `ρ_λ ⪰ 0`
//! indexed by deterministic strategies `λ: k ↦ x` with
//! `σ_{x|k} = Σ_{λ(k)=x} ρ_λ`.

use serde::Serialize;

use crate::feasibility::{
    dykstra_solve, FeasibilityProblem, FeasibilityStatus, FeasibilityVerdict, SolverOptions, Term,
};
use crate::observable::DiscreteObservable;
use crate::operator::{
    dist, ensure_square, hermitian_deviation, hermitize, identity, min_eigenvalue, partial_trace_first, tensor, trace,
    CMatrix, Tolerance,
};
use crate::{Error, Result};

pub const MAX_STRATEGIES: usize = 4096;

#[derive(Debug, Clone)]
pub struct BipartiteState {
    dim_a: usize,
    dim_b: usize,
    rho: CMatrix,
}

impl BipartiteState {
    pub fn new(dim_a: usize, dim_b: usize, rho: CMatrix, tol: &Tolerance) -> Result<Self> {
        let n = ensure_square(&rho)?;
        if n != dim_a * dim_b || n == 0 {
            return Err(Error::InvalidState(format!("{n}x{n} density matrix for dims [{dim_a}, {dim_b}]")));
        }
        let dev = hermitian_deviation(&rho);
        if dev > tol.eq_tol {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {dev:.3e})")));
        }
        let low = min_eigenvalue(&rho, tol)?;
        if low < -tol.eig_tol {
            return Err(Error::InvalidState(format!("not PSD (min eigenvalue {low:.3e})")));
        }
        let tr = trace(&rho);
        if (tr.re - 1.0).abs() > tol.eq_tol || tr.im.abs() > tol.eq_tol {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        Ok(BipartiteState { dim_a, dim_b, rho: hermitize(&rho) })
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn dim_b(&self) -> usize {
        self.dim_b
    }

    pub fn rho(&self) -> &CMatrix {
        &self.rho
    }

    pub fn reduced_b(&self) -> CMatrix {
        partial_trace_first(&self.rho, self.dim_a, self.dim_b).expect("dims checked at construction")
    }

    /// `tr_A[(E ⊗ I) ρ]`.
    pub fn conditional(&self, e: &CMatrix) -> Result<CMatrix> {
        if e.nrows() != self.dim_a {
            return Err(Error::DimensionMismatch { expected: self.dim_a, found: e.nrows() });
        }
        let op = tensor(e, &identity(self.dim_b)) * &self.rho;
        Ok(hermitize(&partial_trace_first(&op, self.dim_a, self.dim_b)?))
    }
}

/// `σ_{x|k}` with Alice's outcome labels.
#[derive(Debug, Clone)]
pub struct Assemblage {
    pub dim_b: usize,
    pub settings: Vec<Vec<(String, CMatrix)>>,
}

impl Assemblage {
    pub fn outcome_counts(&self) -> Vec<usize> {
        self.settings.iter().map(Vec::len).collect()
    }

    /// Largest deviation of `Σ_x σ_{x|k}` from the first setting's sum.
    pub fn no_signaling_residual(&self) -> f64 {
        let sums: Vec<CMatrix> = self.settings.iter().map(|s| sum(self.dim_b, s.iter().map(|(_, m)| m))).collect();
        sums.iter().skip(1).map(|s| dist(s, &sums[0])).fold(0.0, f64::max)
    }
}

fn sum<'a>(d: usize, ms: impl Iterator<Item = &'a CMatrix>) -> CMatrix {
    ms.fold(CMatrix::zeros(d, d), |acc, m| acc + m)
}

pub fn assemblage_from(state: &BipartiteState, measurements: &[DiscreteObservable]) -> Result<Assemblage> {
    let settings = measurements
        .iter()
        .map(|m| {
            if m.dim() != state.dim_a() {
                return Err(Error::DimensionMismatch { expected: state.dim_a(), found: m.dim() });
            }
            m.outcomes().iter().map(|o| Ok((o.label.clone(), state.conditional(&o.effect)?))).collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Assemblage { dim_b: state.dim_b(), settings })
}

#[derive(Debug, Clone, Serialize)]
pub struct LhsModel {
    /// `λ` as the outcome index chosen for each setting.
    pub strategies: Vec<Vec<usize>>,
    #[serde(serialize_with = "crate::io::serialize_matrices")]
    pub operators: Vec<CMatrix>,
}

impl LhsModel {
    /// `ρ_λ = tr_A[(G_λ ⊗ I)ρ]` from a joint observable whose outcome `t` has
    /// marginal indices `tuples[t]`.
    pub fn from_joint(state: &BipartiteState, joint: &DiscreteObservable, tuples: &[Vec<usize>]) -> Result<Self> {
        let operators = joint.effects().map(|g| state.conditional(g)).collect::<Result<Vec<_>>>()?;
        Ok(LhsModel { strategies: tuples.to_vec(), operators })
    }

    /// Worst `‖Σ_{λ(k)=x} ρ_λ - σ_{x|k}‖_F`.
    pub fn reconstruction_residual(&self, assemblage: &Assemblage) -> f64 {
        let d = assemblage.dim_b;
        let mut worst: f64 = 0.0;
        for (k, setting) in assemblage.settings.iter().enumerate() {
            for (x, (_, sigma)) in setting.iter().enumerate() {
                let s = sum(d, self.strategies.iter().zip(&self.operators).filter(|(l, _)| l[k] == x).map(|(_, r)| r));
                worst = worst.max(dist(&s, sigma));
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self, tol: &Tolerance) -> Result<f64> {
        self.operators.iter().map(|r| min_eigenvalue(r, tol)).try_fold(f64::INFINITY, |m, v| Ok(m.min(v?)))
    }
}

/// All deterministic strategies in lexicographic order.
pub fn strategies(counts: &[usize]) -> Result<Vec<Vec<usize>>> {
    let total = counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c)).unwrap_or(usize::MAX);
    if total > MAX_STRATEGIES {
        return Err(Error::CapExceeded(format!("{total} deterministic strategies exceed the cap of {MAX_STRATEGIES}")));
    }
    let mut out = vec![vec![]];
    for &c in counts {
        out = out.into_iter().flat_map(|p: Vec<usize>| (0..c).map(move |x| [p.clone(), vec![x]].concat())).collect();
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LhsResult {
    pub verdict: FeasibilityVerdict,
    pub model: Option<LhsModel>,
}

pub fn lhs_check(assemblage: &Assemblage, opts: &SolverOptions) -> Result<LhsResult> {
    let lambdas = strategies(&assemblage.outcome_counts())?;
    let d = assemblage.dim_b;
    let mut p = FeasibilityProblem::new();
    let blocks: Vec<usize> = lambdas.iter().map(|_| p.add_block(d)).collect();
    for (k, setting) in assemblage.settings.iter().enumerate() {
        for (x, (_, sigma)) in setting.iter().enumerate() {
            let terms =
                lambdas.iter().zip(&blocks).filter(|(l, _)| l[k] == x).map(|(_, &b)| Term::identity(b)).collect();
            p.add_constraint(terms, sigma.clone())?;
        }
    }
    let verdict = dykstra_solve(&p, opts);
    let model = verdict
        .point
        .as_ref()
        .filter(|_| verdict.is_feasible())
        .map(|pt| LhsModel { strategies: lambdas.clone(), operators: pt.clone() });
    Ok(LhsResult { verdict, model })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SteeringStatus {
    Steerable,
    Unsteerable,
    Undecided,
}

#[derive(Debug, Clone)]
pub struct SteeringVerdict {
    pub status: SteeringStatus,
    pub lhs: LhsResult,
    pub assemblage: Assemblage,
}

pub fn steerable(
    state: &BipartiteState,
    measurements: &[DiscreteObservable],
    opts: &SolverOptions,
) -> Result<SteeringVerdict> {
    let assemblage = assemblage_from(state, measurements)?;
    let lhs = lhs_check(&assemblage, opts)?;
    let status = match lhs.verdict.status {
        FeasibilityStatus::Feasible => SteeringStatus::Unsteerable,
        FeasibilityStatus::NumericallyInfeasible => SteeringStatus::Steerable,
        FeasibilityStatus::Undecided => SteeringStatus::Undecided,
    };
    Ok(SteeringVerdict { status, lhs, assemblage })
}
