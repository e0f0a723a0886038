//! Regularizers: values, dual values, and the scaled linear minimization
//! step each one admits in closed form.
//!
//! The step associated with a regularizer g at scale ε is a minimizer of
//! ⟨grad, z⟩ over {g(z) ≤ ε}. For norms this lands on an extreme point of
//! the scaled unit ball and factors through the dual norm: the step is an
//! element of −ε·∂g*(grad). Each kind below spells that out concretely.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, StagewiseError};
use crate::linalg::{cholesky, cholesky_banded, chol_solve, singular_values, BandedChol, SymEigen};
use crate::state::State;

// ---------------------------------------------------------------------------
// Group partitions

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupNorm {
    L2,
    Linf,
    L1,
}

/// Disjoint index groups covering 0..p, each with a weight and a within-group
/// norm. The regularizer value is the weighted sum of per-group norms.
#[derive(Clone, Debug)]
pub struct GroupPartition {
    p: usize,
    groups: Vec<Vec<usize>>,
    weights: Vec<f64>,
    norms: Vec<GroupNorm>,
}

impl GroupPartition {
    pub fn new(
        p: usize,
        groups: Vec<Vec<usize>>,
        weights: Vec<f64>,
        norms: Vec<GroupNorm>,
    ) -> Result<Self> {
        if groups.len() != weights.len() || groups.len() != norms.len() {
            return Err(StagewiseError::Input(format!(
                "group count mismatch: {} groups, {} weights, {} norms",
                groups.len(),
                weights.len(),
                norms.len()
            )));
        }
        if groups.is_empty() {
            return Err(StagewiseError::Input("partition needs at least one group".into()));
        }
        let mut seen = vec![false; p];
        for g in &groups {
            for &i in g {
                if i >= p {
                    return Err(StagewiseError::Input(format!("index {i} outside 0..{p}")));
                }
                if seen[i] {
                    return Err(StagewiseError::Input(format!("index {i} appears in two groups")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(StagewiseError::Input("groups must cover every index".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(StagewiseError::Input("group weights must be finite and nonnegative".into()));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(StagewiseError::Input("at least one group weight must be positive".into()));
        }
        Ok(GroupPartition { p, groups, weights, norms })
    }

    /// Contiguous near-even split into `n_groups` blocks, unit weights,
    /// the same norm everywhere.
    pub fn contiguous(p: usize, n_groups: usize, norm: GroupNorm) -> Result<Self> {
        if n_groups == 0 || n_groups > p {
            return Err(StagewiseError::Input(format!(
                "cannot split {p} indices into {n_groups} groups"
            )));
        }
        let base = p / n_groups;
        let extra = p % n_groups;
        let mut groups = Vec::with_capacity(n_groups);
        let mut start = 0;
        for g in 0..n_groups {
            let size = base + usize::from(g < extra);
            groups.push((start..start + size).collect());
            start += size;
        }
        GroupPartition::new(p, groups, vec![1.0; n_groups], vec![norm; n_groups])
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn norms(&self) -> &[GroupNorm] {
        &self.norms
    }

    pub fn all_l2(&self) -> bool {
        self.norms.iter().all(|&n| n == GroupNorm::L2)
    }
}

fn block_norm(x: &Array1<f64>, idx: &[usize], norm: GroupNorm) -> f64 {
    match norm {
        GroupNorm::L2 => idx.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt(),
        GroupNorm::Linf => idx.iter().fold(0.0f64, |m, &i| m.max(x[i].abs())),
        GroupNorm::L1 => idx.iter().map(|&i| x[i].abs()).sum(),
    }
}

fn dual_of(norm: GroupNorm) -> GroupNorm {
    match norm {
        GroupNorm::L2 => GroupNorm::L2,
        GroupNorm::Linf => GroupNorm::L1,
        GroupNorm::L1 => GroupNorm::Linf,
    }
}

// ---------------------------------------------------------------------------
// Power method

/// Settings for the leading-singular-pair power iteration used by the trace
/// kind. `tol` bounds the accepted singular-pair residual relative to σ.
#[derive(Clone, Copy, Debug)]
pub struct PowerMethodConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerMethodConfig {
    fn default() -> Self {
        PowerMethodConfig { tol: 1e-8, max_iter: 20_000, seed: 0x5eed }
    }
}

// Rayleigh-quotient relative change below this counts as converged.
const RAYLEIGH_RTOL: f64 = 1e-10;

// The singular-pair residual is also probed on this stride even before the
// Rayleigh quotient settles: with (nearly) tied top singular values the
// iterate wanders inside the top subspace and the Rayleigh test never fires,
// yet any vector in that subspace already forms an acceptable pair.
const RESIDUAL_CHECK_STRIDE: usize = 8;

/// A rank-one step Δ = scale · u vᵀ, kept factored so callers can apply it
/// without materializing the outer product when they prefer.
#[derive(Clone, Debug)]
pub struct RankOneUpdate {
    pub sigma: f64,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub scale: f64,
}

impl RankOneUpdate {
    pub fn zero(m: usize, n: usize) -> Self {
        RankOneUpdate { sigma: 0.0, u: Array1::zeros(m), v: Array1::zeros(n), scale: 0.0 }
    }

    pub fn dense(&self) -> Array2<f64> {
        let (m, n) = (self.u.len(), self.v.len());
        Array2::from_shape_fn((m, n), |(i, j)| self.scale * self.u[i] * self.v[j])
    }
}

/// Leading singular triple (σ, u, v) of `a` by power iteration on the smaller
/// Gram matrix (applied implicitly as two matvecs per step). The remaining
/// vector comes from one extra multiply, which pins the sign: u = Av/‖Av‖
/// gives uᵀAv = ‖Av‖ ≥ 0, and symmetrically for v.
fn power_top_pair(
    a: &Array2<f64>,
    pm: &PowerMethodConfig,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let (m, n) = (a.nrows(), a.ncols());
    let left_smaller = m <= n;
    let k = if left_smaller { m } else { n };
    let mut rng = ChaCha8Rng::seed_from_u64(pm.seed);
    let mut w = random_unit(k, &mut rng);
    let mut rho_prev = f64::NAN;
    let mut last_residual = f64::INFINITY;
    for it in 1..=pm.max_iter {
        let bw = if left_smaller {
            a.dot(&a.t().dot(&w))
        } else {
            a.t().dot(&a.dot(&w))
        };
        let nb = bw.dot(&bw).sqrt();
        if nb == 0.0 {
            // start vector landed in the null space; redraw deterministically
            w = random_unit(k, &mut rng);
            rho_prev = f64::NAN;
            continue;
        }
        let rho = w.dot(&bw);
        w = bw / nb;
        let rayleigh_settled = (rho - rho_prev).abs() <= RAYLEIGH_RTOL * rho.abs();
        if rayleigh_settled || it % RESIDUAL_CHECK_STRIDE == 0 {
            // the Rayleigh quotient converges faster than the vector itself,
            // so only accept once the singular-pair residual is tight too
            let (sigma, u, v, residual) = assemble_pair(a, &w, left_smaller);
            last_residual = residual;
            if residual <= pm.tol * sigma {
                return Ok((sigma, u, v));
            }
        }
        rho_prev = rho;
    }
    Err(StagewiseError::Convergence {
        what: format!("power iteration did not settle in {} iterations", pm.max_iter),
        residual: last_residual,
    })
}

/// Complete the converged Gram-iteration vector into a full singular pair and
/// measure the two-sided residual. The extra multiply pins the sign: with
/// v = Aᵀu/‖Aᵀu‖ we get uᵀAv = ‖Aᵀu‖ ≥ 0.
fn assemble_pair(
    a: &Array2<f64>,
    w: &Array1<f64>,
    left_smaller: bool,
) -> (f64, Array1<f64>, Array1<f64>, f64) {
    let (m, n) = (a.nrows(), a.ncols());
    let (sigma, u, v) = if left_smaller {
        let u = w.clone();
        let atu = a.t().dot(&u);
        let sigma = atu.dot(&atu).sqrt();
        let v = if sigma > 0.0 { atu / sigma } else { Array1::zeros(n) };
        (sigma, u, v)
    } else {
        let v = w.clone();
        let av = a.dot(&v);
        let sigma = av.dot(&av).sqrt();
        let u = if sigma > 0.0 { av / sigma } else { Array1::zeros(m) };
        (sigma, u, v)
    };
    let r_right = {
        let d = &a.dot(&v) - &(&u * sigma);
        d.dot(&d).sqrt()
    };
    let r_left = {
        let d = &a.t().dot(&u) - &(&v * sigma);
        d.dot(&d).sqrt()
    };
    (sigma, u, v, r_right.max(r_left))
}

fn random_unit(k: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(k, |_| rng.random::<f64>() * 2.0 - 1.0);
        let norm = v.dot(&v).sqrt();
        if norm > 1e-3 {
            return v / norm;
        }
    }
}

// ---------------------------------------------------------------------------
// Quadratic forms

/// How a quadratic penalty matrix is stored and factored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadStructure {
    Dense,
    Banded { bandwidth: usize },
    /// Q = DᵀD held by its factor; solves go through the identity
    /// (DᵀD)⁺ = Dᵀ(DDᵀ)⁻²D.
    DifferenceProduct { rows: usize },
}

#[derive(Clone, Debug)]
enum QuadSolver {
    Chol { q: Array2<f64>, l: Array2<f64> },
    Banded { q: Array2<f64>, chol: BandedChol },
    Eigen { q: Array2<f64>, eig: SymEigen },
    DiffProduct { d: Array2<f64>, ddt_l: Array2<f64>, null_basis: Array2<f64> },
}

/// A positive semidefinite penalty x ↦ xᵀQx with a one-time factorization
/// reused across every step and solve.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    p: usize,
    structure: QuadStructure,
    solver: QuadSolver,
}

const SYMMETRY_TOL: f64 = 1e-12;
const RANK_REL_THRESHOLD: f64 = 1e-10;

fn check_symmetric(q: &Array2<f64>) -> Result<()> {
    let p = q.nrows();
    if q.ncols() != p {
        return Err(StagewiseError::Input("penalty matrix must be square".into()));
    }
    for i in 0..p {
        for j in i + 1..p {
            if (q[[i, j]] - q[[j, i]]).abs() > SYMMETRY_TOL {
                return Err(StagewiseError::Input(format!(
                    "penalty matrix asymmetric at ({i}, {j}): {} vs {}",
                    q[[i, j]],
                    q[[j, i]]
                )));
            }
        }
    }
    Ok(())
}

impl QuadraticForm {
    /// General symmetric PSD matrix. Positive definite instances get a
    /// Cholesky fast path; singular ones a rank-revealing eigendecomposition
    /// with threshold 1e-10 · max|Q_ij|.
    pub fn dense(q: Array2<f64>) -> Result<Self> {
        check_symmetric(&q)?;
        let p = q.nrows();
        if p <= 50 {
            let eig = SymEigen::new(&q, RANK_REL_THRESHOLD);
            if eig.vals.iter().any(|&w| w < -1e-10) {
                return Err(StagewiseError::Input(format!(
                    "penalty matrix has negative eigenvalue {:.3e}",
                    eig.vals[0]
                )));
            }
            if eig.rank() == p {
                if let Ok(l) = cholesky(&q) {
                    return Ok(QuadraticForm {
                        p,
                        structure: QuadStructure::Dense,
                        solver: QuadSolver::Chol { q, l },
                    });
                }
            }
            return Ok(QuadraticForm {
                p,
                structure: QuadStructure::Dense,
                solver: QuadSolver::Eigen { q, eig },
            });
        }
        match cholesky(&q) {
            Ok(l) => Ok(QuadraticForm {
                p,
                structure: QuadStructure::Dense,
                solver: QuadSolver::Chol { q, l },
            }),
            Err(_) => {
                let eig = SymEigen::new(&q, RANK_REL_THRESHOLD);
                let scale = q.iter().fold(1.0f64, |acc, &x| acc.max(x.abs()));
                if eig.vals.iter().any(|&w| w < -1e-10 * scale) {
                    return Err(StagewiseError::Input(
                        "penalty matrix is not positive semidefinite".into(),
                    ));
                }
                Ok(QuadraticForm {
                    p,
                    structure: QuadStructure::Dense,
                    solver: QuadSolver::Eigen { q, eig },
                })
            }
        }
    }

    /// Positive definite matrix with known bandwidth; factorization failure
    /// means the claim was wrong and surfaces as a numeric error.
    pub fn banded(q: Array2<f64>, bandwidth: usize) -> Result<Self> {
        check_symmetric(&q)?;
        let p = q.nrows();
        let chol = cholesky_banded(&q, bandwidth)?;
        Ok(QuadraticForm {
            p,
            structure: QuadStructure::Banded { bandwidth },
            solver: QuadSolver::Banded { q, chol },
        })
    }

    /// Q = DᵀD for a full-row-rank factor D (typically a difference
    /// operator). The null space has the known dimension p − rows(D); its
    /// basis is built by projecting coordinate vectors off row(D).
    pub fn difference_product(d: Array2<f64>) -> Result<Self> {
        let rows = d.nrows();
        let p = d.ncols();
        if rows == 0 || rows >= p {
            return Err(StagewiseError::Input(format!(
                "difference factor must have 1..p-1 rows, got {rows} rows for p={p}"
            )));
        }
        let ddt = d.dot(&d.t());
        let ddt_l = cholesky(&ddt).map_err(|_| StagewiseError::Numeric {
            what: "difference factor is not full row rank (DDᵀ not positive definite)".into(),
            step: None,
        })?;
        let nullity = p - rows;
        let null_basis = build_null_basis(&d, &ddt_l, nullity)?;
        Ok(QuadraticForm {
            p,
            structure: QuadStructure::DifferenceProduct { rows },
            solver: QuadSolver::DiffProduct { d, ddt_l, null_basis },
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn structure(&self) -> QuadStructure {
        self.structure
    }

    pub fn difference_factor(&self) -> Option<&Array2<f64>> {
        match &self.solver {
            QuadSolver::DiffProduct { d, .. } => Some(d),
            _ => None,
        }
    }

    /// Q x.
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        match &self.solver {
            QuadSolver::Chol { q, .. } | QuadSolver::Banded { q, .. } | QuadSolver::Eigen { q, .. } => {
                q.dot(x)
            }
            QuadSolver::DiffProduct { d, .. } => d.t().dot(&d.dot(x)),
        }
    }

    /// xᵀQx (for the factored form, ‖Dx‖², which is cheaper and exact).
    pub fn value(&self, x: &Array1<f64>) -> f64 {
        match &self.solver {
            QuadSolver::DiffProduct { d, .. } => {
                let dx = d.dot(x);
                dx.dot(&dx)
            }
            _ => x.dot(&self.apply(x)),
        }
    }

    /// Q⁺ g. For full-rank factorizations this is the plain solve; the
    /// eigen and factored forms drop the null-space component of g.
    pub fn pinv_apply(&self, g: &Array1<f64>) -> Array1<f64> {
        match &self.solver {
            QuadSolver::Chol { l, .. } => chol_solve(l, g),
            QuadSolver::Banded { chol, .. } => chol.solve(g),
            QuadSolver::Eigen { eig, .. } => eig.pinv_apply(g),
            QuadSolver::DiffProduct { d, ddt_l, .. } => {
                let dg = d.dot(g);
                let once = chol_solve(ddt_l, &dg);
                let twice = chol_solve(ddt_l, &once);
                d.t().dot(&twice)
            }
        }
    }

    /// Orthogonal projection of g onto row(Q).
    pub fn project_row_space(&self, g: &Array1<f64>) -> Array1<f64> {
        match &self.solver {
            QuadSolver::Chol { .. } | QuadSolver::Banded { .. } => g.clone(),
            QuadSolver::Eigen { eig, .. } => {
                let null = eig.null_basis();
                let mut out = g.clone();
                for c in 0..null.ncols() {
                    let col = null.column(c);
                    let coef = col.dot(g);
                    out.scaled_add(-coef, &col);
                }
                out
            }
            QuadSolver::DiffProduct { d, ddt_l, .. } => {
                let dg = d.dot(g);
                let solved = chol_solve(ddt_l, &dg);
                d.t().dot(&solved)
            }
        }
    }

    pub fn nullity(&self) -> usize {
        match &self.solver {
            QuadSolver::Chol { .. } | QuadSolver::Banded { .. } => 0,
            QuadSolver::Eigen { eig, .. } => self.p - eig.rank(),
            QuadSolver::DiffProduct { null_basis, .. } => null_basis.ncols(),
        }
    }

    /// Orthonormal basis of null(Q), p × nullity (zero columns if full rank).
    pub fn null_basis(&self) -> Array2<f64> {
        match &self.solver {
            QuadSolver::Chol { .. } | QuadSolver::Banded { .. } => Array2::zeros((self.p, 0)),
            QuadSolver::Eigen { eig, .. } => eig.null_basis(),
            QuadSolver::DiffProduct { null_basis, .. } => null_basis.clone(),
        }
    }

    /// √(zᵀQ⁺z); a diagnostic quantity, not a dual norm.
    pub fn dual_value(&self, z: &Array1<f64>) -> f64 {
        z.dot(&self.pinv_apply(z)).max(0.0).sqrt()
    }
}

fn build_null_basis(d: &Array2<f64>, ddt_l: &Array2<f64>, nullity: usize) -> Result<Array2<f64>> {
    let p = d.ncols();
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(nullity);
    for j in 0..p {
        if basis.len() == nullity {
            break;
        }
        let mut e = Array1::<f64>::zeros(p);
        e[j] = 1.0;
        // remove row-space component, then previously accepted directions
        let de = d.dot(&e);
        let solved = chol_solve(ddt_l, &de);
        let mut r = &e - &d.t().dot(&solved);
        for b in &basis {
            let coef = b.dot(&r);
            r.scaled_add(-coef, b);
        }
        let norm = r.dot(&r).sqrt();
        if norm > 1e-8 {
            basis.push(r / norm);
        }
    }
    if basis.len() != nullity {
        return Err(StagewiseError::Numeric {
            what: format!(
                "null-space extraction found {} directions, expected {nullity}",
                basis.len()
            ),
            step: None,
        });
    }
    let mut out = Array2::<f64>::zeros((p, nullity));
    for (c, b) in basis.iter().enumerate() {
        for r in 0..p {
            out[[r, c]] = b[r];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// LMO free functions

/// Step for g = ‖·‖₁: all weight on the largest-magnitude gradient
/// coordinate, smallest index on ties, opposite sign. Zero gradient → zero.
pub fn l1_lmo(grad: &Array1<f64>, eps: f64) -> Array1<f64> {
    debug_assert!(eps > 0.0);
    let mut best = 0usize;
    let mut best_abs = 0.0f64;
    for (i, &g) in grad.iter().enumerate() {
        let a = g.abs();
        if a > best_abs {
            best_abs = a;
            best = i;
        }
    }
    let mut delta = Array1::zeros(grad.len());
    if best_abs > 0.0 {
        delta[best] = -eps * grad[best].signum();
    }
    delta
}

fn select_group(grad: &Array1<f64>, part: &GroupPartition) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for (j, idx) in part.groups().iter().enumerate() {
        let dual_norm = block_norm(grad, idx, dual_of(part.norms()[j]));
        if dual_norm == 0.0 {
            continue;
        }
        let w = part.weights()[j];
        let score = if w > 0.0 { dual_norm / w } else { f64::INFINITY };
        let better = match best {
            None => true,
            Some((_, s)) => score > s,
        };
        if better {
            best = Some((j, score));
        }
    }
    if let Some((j, score)) = best {
        if score.is_infinite() {
            return Err(StagewiseError::UnboundedDirection(format!(
                "group {j} has zero weight but nonzero gradient block; the step is unbounded"
            )));
        }
        Ok(Some((j, score)))
    } else {
        Ok(None)
    }
}

/// Step for weighted group-ℓ2: the group with the largest ‖grad block‖₂/w
/// takes the whole budget along its negative normalized gradient block.
pub fn group_l2_lmo(grad: &Array1<f64>, eps: f64, part: &GroupPartition) -> Result<Array1<f64>> {
    if !part.all_l2() {
        return Err(StagewiseError::Input(
            "group_l2_lmo requires every group norm to be l2; use group_general_lmo".into(),
        ));
    }
    group_general_lmo(grad, eps, part)
}

/// Step for weighted group norms with per-group ℓ2, ℓ∞, or ℓ1 blocks: score
/// each group by its dual block norm over its weight, then move along a
/// (minimal-support) subgradient of that dual norm, scaled by −ε/w.
pub fn group_general_lmo(
    grad: &Array1<f64>,
    eps: f64,
    part: &GroupPartition,
) -> Result<Array1<f64>> {
    debug_assert!(eps > 0.0);
    if grad.len() != part.p() {
        return Err(StagewiseError::Input(format!(
            "gradient length {} does not match partition over {}",
            grad.len(),
            part.p()
        )));
    }
    let mut delta = Array1::zeros(grad.len());
    let Some((i, _)) = select_group(grad, part)? else {
        return Ok(delta);
    };
    let idx = &part.groups()[i];
    let w = part.weights()[i];
    let coef = -eps / w;
    match part.norms()[i] {
        GroupNorm::L2 => {
            let n2 = block_norm(grad, idx, GroupNorm::L2);
            for &k in idx {
                delta[k] = coef * (grad[k] / n2);
            }
        }
        GroupNorm::Linf => {
            // dual is ℓ1; its subgradient is the componentwise sign,
            // zero where the gradient is zero
            for &k in idx {
                if grad[k] != 0.0 {
                    delta[k] = coef * grad[k].signum();
                }
            }
        }
        GroupNorm::L1 => {
            // dual is ℓ∞; minimal-support subgradient is a single signed
            // coordinate at the in-group argmax
            let mut best_k = idx[0];
            let mut best_abs = 0.0f64;
            for &k in idx {
                let a = grad[k].abs();
                if a > best_abs {
                    best_abs = a;
                    best_k = k;
                }
            }
            delta[best_k] = coef * grad[best_k].signum();
        }
    }
    Ok(delta)
}

/// Rank-one step for the trace norm: −ε·uvᵀ with (u, v) the leading singular
/// pair of the gradient.
pub fn trace_lmo(grad: &Array2<f64>, eps: f64, pm: &PowerMethodConfig) -> Result<RankOneUpdate> {
    debug_assert!(eps > 0.0);
    if grad.iter().all(|&g| g == 0.0) {
        return Ok(RankOneUpdate::zero(grad.nrows(), grad.ncols()));
    }
    // Iterative fast path; a spectrum whose top two singular values are too
    // close for power iteration to separate falls back to the dense solver.
    let (sigma, u, v) = match power_top_pair(grad, pm) {
        Ok(triple) => triple,
        Err(StagewiseError::Convergence { .. }) => crate::linalg::top_singular_triple(grad),
        Err(e) => return Err(e),
    };
    Ok(RankOneUpdate { sigma, u, v, scale: -eps })
}

/// Step for g(x) = xᵀQx: −√ε · Q⁺g / √(gᵀQ⁺g), which lies in row(Q) and
/// saturates the constraint. A gradient orthogonal to row(Q) gives zero.
pub fn quad_lmo(grad: &Array1<f64>, eps: f64, qf: &QuadraticForm) -> Result<Array1<f64>> {
    debug_assert!(eps > 0.0);
    if grad.len() != qf.dim() {
        return Err(StagewiseError::Input(format!(
            "gradient length {} does not match penalty dimension {}",
            grad.len(),
            qf.dim()
        )));
    }
    let y = qf.pinv_apply(grad);
    let denom = grad.dot(&y);
    if !(denom > 0.0) {
        return Ok(Array1::zeros(grad.len()));
    }
    let scale = -(eps.sqrt()) / denom.sqrt();
    Ok(y * scale)
}

// ---------------------------------------------------------------------------
// Regularizer façade

/// A regularizer kind bundled with whatever precomputation its step needs.
#[derive(Clone, Debug)]
pub enum Regularizer {
    L1,
    Group(GroupPartition),
    Trace(PowerMethodConfig),
    Quadratic(QuadraticForm),
}

impl Regularizer {
    pub fn kind(&self) -> &'static str {
        match self {
            Regularizer::L1 => "l1",
            Regularizer::Group(_) => "group",
            Regularizer::Trace(_) => "trace",
            Regularizer::Quadratic(_) => "quadratic",
        }
    }

    /// True for the norm kinds (where g is positively homogeneous of degree
    /// one and the sub-optimality theory applies); false for quadratic.
    pub fn is_norm(&self) -> bool {
        !matches!(self, Regularizer::Quadratic(_))
    }

    pub fn value(&self, x: &State) -> Result<f64> {
        match (self, x) {
            (Regularizer::L1, State::Vector(v)) => Ok(v.iter().map(|a| a.abs()).sum()),
            (Regularizer::Group(part), State::Vector(v)) => {
                if v.len() != part.p() {
                    return Err(StagewiseError::Input("state length does not match partition".into()));
                }
                Ok(part
                    .groups()
                    .iter()
                    .enumerate()
                    .map(|(j, idx)| part.weights()[j] * block_norm(v, idx, part.norms()[j]))
                    .sum())
            }
            (Regularizer::Trace(_), State::Matrix(m)) => Ok(singular_values(m).sum()),
            (Regularizer::Quadratic(qf), State::Vector(v)) => {
                if v.len() != qf.dim() {
                    return Err(StagewiseError::Input("state length does not match penalty".into()));
                }
                Ok(qf.value(v))
            }
            _ => Err(StagewiseError::Input(format!(
                "state shape {:?} incompatible with {} regularizer",
                x.shape(),
                self.kind()
            ))),
        }
    }

    /// Dual norm g*(z) for the norm kinds; √(zᵀQ⁺z) (diagnostic) for
    /// quadratic. A zero-weight group with a nonzero block returns infinity.
    pub fn dual_value(&self, z: &State) -> Result<f64> {
        match (self, z) {
            (Regularizer::L1, State::Vector(v)) => {
                Ok(v.iter().fold(0.0f64, |m, a| m.max(a.abs())))
            }
            (Regularizer::Group(part), State::Vector(v)) => {
                if v.len() != part.p() {
                    return Err(StagewiseError::Input("state length does not match partition".into()));
                }
                let mut best = 0.0f64;
                for (j, idx) in part.groups().iter().enumerate() {
                    let dn = block_norm(v, idx, dual_of(part.norms()[j]));
                    if dn == 0.0 {
                        continue;
                    }
                    let w = part.weights()[j];
                    if w == 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    best = best.max(dn / w);
                }
                Ok(best)
            }
            (Regularizer::Trace(_), State::Matrix(m)) => {
                Ok(singular_values(m).get(0).copied().unwrap_or(0.0))
            }
            (Regularizer::Quadratic(qf), State::Vector(v)) => Ok(qf.dual_value(v)),
            _ => Err(StagewiseError::Input(format!(
                "state shape {:?} incompatible with {} regularizer",
                z.shape(),
                self.kind()
            ))),
        }
    }

    /// The ε-scaled minimization step for this kind.
    pub fn lmo(&self, grad: &State, eps: f64) -> Result<State> {
        if !(eps > 0.0) {
            return Err(StagewiseError::Input(format!("step scale must be positive, got {eps}")));
        }
        if !grad.all_finite() {
            return Err(StagewiseError::Input("gradient contains non-finite entries".into()));
        }
        match (self, grad) {
            (Regularizer::L1, State::Vector(g)) => Ok(State::Vector(l1_lmo(g, eps))),
            (Regularizer::Group(part), State::Vector(g)) => {
                Ok(State::Vector(group_general_lmo(g, eps, part)?))
            }
            (Regularizer::Trace(pm), State::Matrix(g)) => {
                Ok(State::Matrix(trace_lmo(g, eps, pm)?.dense()))
            }
            (Regularizer::Quadratic(qf), State::Vector(g)) => {
                Ok(State::Vector(quad_lmo(g, eps, qf)?))
            }
            _ => Err(StagewiseError::Input(format!(
                "gradient shape {:?} incompatible with {} regularizer",
                grad.shape(),
                self.kind()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn chain_difference(p: usize) -> Array2<f64> {
        let mut d = Array2::<f64>::zeros((p - 1, p));
        for i in 0..p - 1 {
            d[[i, i]] = -1.0;
            d[[i, i + 1]] = 1.0;
        }
        d
    }

    #[test]
    fn l1_picks_largest_magnitude_coordinate() {
        // budget 0.1 lands entirely on coordinate 0, against its sign
        let delta = l1_lmo(&array![3.0, -1.0, 2.0], 0.1);
        assert_eq!(delta, array![-0.1, 0.0, 0.0]);
    }

    #[test]
    fn l1_zero_gradient_gives_zero_step() {
        let delta = l1_lmo(&array![0.0, 0.0], 1.0);
        assert!(delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn l1_ties_break_to_smallest_index() {
        let delta = l1_lmo(&array![-2.0, 2.0, 2.0], 1.0);
        assert_eq!(delta, array![1.0, 0.0, 0.0]);
    }

    #[test]
    fn l1_beats_every_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps = 0.7;
        for _ in 0..20 {
            let grad = Array1::from_shape_fn(6, |_| rng.random::<f64>() * 2.0 - 1.0);
            let delta = l1_lmo(&grad, eps);
            let at = grad.dot(&delta);
            for j in 0..6 {
                for s in [-1.0, 1.0] {
                    let mut z = Array1::<f64>::zeros(6);
                    z[j] = s * eps;
                    assert!(
                        at <= grad.dot(&z) + 1e-12,
                        "vertex ({j}, {s}) beats the step"
                    );
                }
            }
        }
    }

    #[test]
    fn group_l2_example_from_lemma() {
        let part = GroupPartition::new(
            3,
            vec![vec![0, 1], vec![2]],
            vec![1.0, 1.0],
            vec![GroupNorm::L2; 2],
        )
        .unwrap();
        let delta = group_l2_lmo(&array![3.0, 4.0, 2.0], 1.0, &part).unwrap();
        assert!((delta[0] - (-0.6)).abs() < 1e-15);
        assert!((delta[1] - (-0.8)).abs() < 1e-15);
        assert_eq!(delta[2], 0.0);
    }

    #[test]
    fn single_group_is_normalized_steepest_descent() {
        let part = GroupPartition::contiguous(4, 1, GroupNorm::L2).unwrap();
        let grad = array![1.0, -2.0, 0.5, 1.5];
        let eps = 0.3;
        let delta = group_l2_lmo(&grad, eps, &part).unwrap();
        let norm = grad.dot(&grad).sqrt();
        for k in 0..4 {
            assert!((delta[k] - (-eps / 1.0) * (grad[k] / norm)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weight_group_with_signal_is_unbounded() {
        let part = GroupPartition::new(
            2,
            vec![vec![0], vec![1]],
            vec![0.0, 1.0],
            vec![GroupNorm::L2; 2],
        )
        .unwrap();
        let err = group_l2_lmo(&array![1.0, 1.0], 1.0, &part).unwrap_err();
        assert!(matches!(err, StagewiseError::UnboundedDirection(_)));
        // but a zero block under the zero weight is fine
        let delta = group_l2_lmo(&array![0.0, 2.0], 1.0, &part).unwrap();
        assert_eq!(delta, array![0.0, -1.0]);
    }

    #[test]
    fn linf_group_takes_sign_vector_step() {
        let part = GroupPartition::new(
            3,
            vec![vec![0, 1], vec![2]],
            vec![1.0, 1.0],
            vec![GroupNorm::Linf; 2],
        )
        .unwrap();
        let eps = 0.25;
        // ℓ1 scores: 3 for the pair, 2.5 for the singleton
        let delta = group_general_lmo(&array![1.0, -2.0, 2.5], eps, &part).unwrap();
        assert_eq!(delta, array![-eps, eps, 0.0]);
    }

    #[test]
    fn linf_group_zero_component_stays_zero() {
        let part = GroupPartition::contiguous(3, 1, GroupNorm::Linf).unwrap();
        let delta = group_general_lmo(&array![2.0, 0.0, -1.0], 0.5, &part).unwrap();
        assert_eq!(delta, array![-0.5, 0.0, 0.5]);
    }

    #[test]
    fn l1_group_takes_single_coordinate() {
        let part = GroupPartition::new(
            4,
            vec![vec![0, 1], vec![2, 3]],
            vec![1.0, 1.0],
            vec![GroupNorm::L1; 2],
        )
        .unwrap();
        // ℓ∞ scores: 3 in group 0 (index 1), 2.5 in group 1
        let delta = group_general_lmo(&array![1.0, -3.0, 2.5, 0.5], 0.5, &part).unwrap();
        assert_eq!(delta, array![0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn group_step_beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let part = GroupPartition::new(
            8,
            vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7]],
            vec![1.0, 2.0, 0.5],
            vec![GroupNorm::L2, GroupNorm::Linf, GroupNorm::L1],
        )
        .unwrap();
        let reg = Regularizer::Group(part.clone());
        let eps = 0.9;
        for _ in 0..20 {
            let grad = Array1::from_shape_fn(8, |_| rng.random::<f64>() * 2.0 - 1.0);
            let delta = group_general_lmo(&grad, eps, &part).unwrap();
            let at = grad.dot(&delta);
            for _ in 0..500 {
                let z = Array1::from_shape_fn(8, |_| rng.random::<f64>() * 2.0 - 1.0);
                let gz = reg.value(&State::Vector(z.clone())).unwrap();
                if gz == 0.0 {
                    continue;
                }
                let z = z * (eps / gz);
                assert!(at <= grad.dot(&z) + 1e-9, "feasible point beats the step");
            }
        }
    }

    #[test]
    fn trace_step_on_diagonal_gradient() {
        let grad = array![[2.0, 0.0], [0.0, 1.0]];
        let pm = PowerMethodConfig { tol: 1e-12, ..PowerMethodConfig::default() };
        let upd = trace_lmo(&grad, 0.5, &pm).unwrap();
        let dense = upd.dense();
        assert!((dense[[0, 0]] - (-0.5)).abs() < 1e-9);
        for (i, j) in [(0, 1), (1, 0), (1, 1)] {
            assert!(dense[[i, j]].abs() < 1e-9);
        }
        assert!(upd.u.dot(&grad.dot(&upd.v)) > 0.0);
    }

    #[test]
    fn trace_step_recovers_rank_one_gradient() {
        let u = array![0.6, -0.8];
        let v = array![0.0, 1.0, 0.0];
        let grad = Array2::from_shape_fn((2, 3), |(i, j)| 3.0 * u[i] * v[j]);
        let upd = trace_lmo(&grad, 1.0, &PowerMethodConfig::default()).unwrap();
        let dense = upd.dense();
        for ((i, j), &d) in dense.indexed_iter() {
            assert!((d - (-u[i] * v[j])).abs() < 1e-8, "entry ({i}, {j})");
        }
    }

    #[test]
    fn trace_step_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let grad = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
            let upd = trace_lmo(&grad, 1.0, &PowerMethodConfig::default()).unwrap();
            let (sigma_ref, u_ref, v_ref) = crate::linalg::top_singular_triple(&grad);
            assert!((upd.sigma - sigma_ref).abs() < 1e-7 * sigma_ref.max(1.0));
            // outer products are sign-flip invariant
            for i in 0..6 {
                for j in 0..4 {
                    let got = upd.u[i] * upd.v[j];
                    let want = u_ref[i] * v_ref[j];
                    assert!((got - want).abs() < 1e-7, "outer product entry ({i}, {j})");
                }
            }
        }
    }

    #[test]
    fn quad_identity_matrix_reduces_to_scaled_descent() {
        let qf = QuadraticForm::dense(Array2::eye(2)).unwrap();
        let delta = quad_lmo(&array![3.0, 4.0], 0.04, &qf).unwrap();
        assert!((delta[0] - (-0.12)).abs() < 1e-15);
        assert!((delta[1] - (-0.16)).abs() < 1e-15);
    }

    #[test]
    fn quad_constant_gradient_in_null_space_gives_zero() {
        let qf = QuadraticForm::difference_product(chain_difference(4)).unwrap();
        let delta = quad_lmo(&array![2.5, 2.5, 2.5, 2.5], 1.0, &qf).unwrap();
        assert!(delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn quad_step_saturates_constraint_and_aligns_with_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..10 {
            let b = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>() - 0.5);
            let q = b.t().dot(&b) + Array2::<f64>::eye(6) * 0.3;
            let qf = QuadraticForm::dense(q.clone()).unwrap();
            let grad = Array1::from_shape_fn(6, |_| rng.random::<f64>() * 2.0 - 1.0);
            let eps = 0.7;
            let delta = quad_lmo(&grad, eps, &qf).unwrap();
            let active = delta.dot(&q.dot(&delta));
            assert!((active - eps).abs() < 1e-9, "constraint value {active}");
            // angle between delta and -Q^{-1} grad
            let dir = qf.pinv_apply(&grad);
            let cosine = -delta.dot(&dir) / (delta.dot(&delta).sqrt() * dir.dot(&dir).sqrt());
            assert!((cosine - 1.0).abs() < 1e-9, "cosine {cosine}");
        }
    }

    #[test]
    fn factored_pinv_matches_dense_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let p = rng.random_range(4..=12);
            // random full-row-rank banded factor: bidiagonal with entries
            // bounded away from zero
            let mut d = Array2::<f64>::zeros((p - 1, p));
            for i in 0..p - 1 {
                let a = 0.5 + rng.random::<f64>();
                let b = 0.5 + rng.random::<f64>();
                d[[i, i]] = if rng.random::<bool>() { a } else { -a };
                d[[i, i + 1]] = b;
            }
            let qf = QuadraticForm::difference_product(d.clone()).unwrap();
            let q = d.t().dot(&d);
            let eig = SymEigen::new(&q, 1e-10);
            let mut frob2 = 0.0f64;
            for j in 0..p {
                let mut e = Array1::<f64>::zeros(p);
                e[j] = 1.0;
                let diff = &qf.pinv_apply(&e) - &eig.pinv_apply(&e);
                frob2 += diff.dot(&diff);
            }
            assert!(frob2.sqrt() < 1e-8, "pinv mismatch {:.3e}", frob2.sqrt());
        }
    }

    #[test]
    fn null_basis_spans_constants_for_chain_penalty() {
        let qf = QuadraticForm::difference_product(chain_difference(6)).unwrap();
        assert_eq!(qf.nullity(), 1);
        let basis = qf.null_basis();
        // the single null direction is the constant vector
        let first = basis[[0, 0]];
        assert!(first.abs() > 0.1);
        for r in 1..6 {
            assert!((basis[[r, 0]] - first).abs() < 1e-10);
        }
    }

    #[test]
    fn banded_and_dense_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let p = 10;
        let mut q = Array2::<f64>::eye(p) * 2.0;
        for i in 0..p - 1 {
            let v = rng.random::<f64>() * 0.5;
            q[[i, i + 1]] = v;
            q[[i + 1, i]] = v;
        }
        let dense = QuadraticForm::dense(q.clone()).unwrap();
        let banded = QuadraticForm::banded(q, 1).unwrap();
        let grad = Array1::from_shape_fn(p, |_| rng.random::<f64>() - 0.5);
        let a = quad_lmo(&grad, 0.5, &dense).unwrap();
        let b = quad_lmo(&grad, 0.5, &banded).unwrap();
        for k in 0..p {
            assert!((a[k] - b[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn values_and_duals_on_spec_points() {
        let l1 = Regularizer::L1;
        assert_eq!(l1.value(&State::Vector(array![1.0, -2.0])).unwrap(), 3.0);
        assert_eq!(l1.dual_value(&State::Vector(array![1.0, -2.0])).unwrap(), 2.0);
        let trace = Regularizer::Trace(PowerMethodConfig::default());
        let d = State::Matrix(array![[2.0, 0.0], [0.0, 1.0]]);
        assert!((trace.value(&d).unwrap() - 3.0).abs() < 1e-10);
        assert!((trace.dual_value(&d).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_weight_group_dual_is_infinite() {
        let part = GroupPartition::new(
            2,
            vec![vec![0], vec![1]],
            vec![0.0, 1.0],
            vec![GroupNorm::L2; 2],
        )
        .unwrap();
        let reg = Regularizer::Group(part);
        let dv = reg.dual_value(&State::Vector(array![1.0, 0.0])).unwrap();
        assert!(dv.is_infinite());
        let dv0 = reg.dual_value(&State::Vector(array![0.0, 3.0])).unwrap();
        assert_eq!(dv0, 3.0);
    }

    #[test]
    fn partition_validation_rejects_bad_input() {
        assert!(GroupPartition::new(3, vec![vec![0, 1]], vec![1.0], vec![GroupNorm::L2]).is_err());
        assert!(GroupPartition::new(
            2,
            vec![vec![0, 1], vec![1]],
            vec![1.0, 1.0],
            vec![GroupNorm::L2; 2]
        )
        .is_err());
        assert!(GroupPartition::new(2, vec![vec![0], vec![1]], vec![0.0, 0.0], vec![GroupNorm::L2; 2])
            .is_err());
    }

    fn small_grad() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 6)
    }

    fn mixed_partition() -> GroupPartition {
        GroupPartition::new(
            6,
            vec![vec![0, 1], vec![2, 3], vec![4, 5]],
            vec![1.0, 0.7, 1.4],
            vec![GroupNorm::L2, GroupNorm::Linf, GroupNorm::L1],
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        // ⟨grad, Δ⟩ = −ε·g*(grad) for the norm kinds
        #[test]
        fn step_value_matches_dual_norm(g in small_grad(), eps in 0.1f64..3.0) {
            let grad = Array1::from(g);
            for reg in [Regularizer::L1, Regularizer::Group(mixed_partition())] {
                let gs = State::Vector(grad.clone());
                let delta = reg.lmo(&gs, eps).unwrap();
                let inner = gs.dot(&delta);
                let dual = reg.dual_value(&gs).unwrap();
                prop_assert!((inner - (-eps) * dual).abs() <= 1e-9 * (1.0 + dual),
                    "inner {inner} vs -eps*dual {}", -eps * dual);
            }
        }

        // g(Δ) = ε whenever grad ≠ 0
        #[test]
        fn step_saturates_budget(g in small_grad(), eps in 0.1f64..3.0) {
            let grad = Array1::from(g);
            prop_assume!(grad.iter().any(|&x| x.abs() > 1e-6));
            for reg in [Regularizer::L1, Regularizer::Group(mixed_partition())] {
                let gs = State::Vector(grad.clone());
                let delta = reg.lmo(&gs, eps).unwrap();
                let gd = reg.value(&delta).unwrap();
                prop_assert!((gd - eps).abs() <= 1e-9 * (1.0 + eps), "g(delta) {gd} vs eps {eps}");
            }
        }

        // scaling ε by a dyadic factor scales the step exactly
        #[test]
        fn step_scales_exactly_with_dyadic_budgets(g in small_grad(), eps in 0.1f64..1.0) {
            let grad = Array1::from(g);
            for reg in [Regularizer::L1, Regularizer::Group(mixed_partition())] {
                let gs = State::Vector(grad.clone());
                let one = reg.lmo(&gs, eps).unwrap();
                let four = reg.lmo(&gs, 4.0 * eps).unwrap();
                for (a, b) in one.iter().zip(four.iter()) {
                    prop_assert_eq!(4.0 * a, *b);
                }
            }
        }

        // |⟨z, x⟩| ≤ g*(z) g(x)
        #[test]
        fn holder_inequality(z in small_grad(), x in small_grad()) {
            let z = State::Vector(Array1::from(z));
            let x = State::Vector(Array1::from(x));
            for reg in [Regularizer::L1, Regularizer::Group(mixed_partition())] {
                let lhs = z.dot(&x).abs();
                let rhs = reg.dual_value(&z).unwrap() * reg.value(&x).unwrap();
                prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs));
            }
        }

        // quadratic: dyadic ε ratio scales the step by the exact square root
        #[test]
        fn quad_step_scales_with_sqrt_of_budget(g in small_grad(), eps in 0.1f64..1.0) {
            let grad = Array1::from(g);
            prop_assume!(grad.iter().any(|&x| x.abs() > 1e-6));
            let qf = QuadraticForm::dense(Array2::eye(6) + Array2::from_diag(&array![0.5, 0.0, 0.25, 0.0, 0.1, 0.0])).unwrap();
            let one = quad_lmo(&grad, eps, &qf).unwrap();
            let four = quad_lmo(&grad, 4.0 * eps, &qf).unwrap();
            for (a, b) in one.iter().zip(four.iter()) {
                prop_assert_eq!(2.0 * a, *b);
            }
        }
    }
}
