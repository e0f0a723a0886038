//! The stagewise path driver and its bookkeeping.
//!
//! One driver serves both the pure and the shrunken update: the iterate is
//! multiplied by α (a no-op when α = 1, taken literally so the pure path is
//! bit-reproducible) and then the ε-scaled minimization step is added. The
//! static parameter advances as t_k = t₀ + kε (pure) or t_k = αt_{k−1} + ε
//! (shrunken), and each step records the static parameter, the dynamic
//! g-value, the loss, and optionally a state snapshot.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::error::{Result, StagewiseError};
use crate::linalg::{cholesky, chol_solve, SymEigen};
use crate::losses::{glm_value_grad, Dataset, GlmFamily, LossFunction};
use crate::regularizers::{QuadraticForm, Regularizer};
use crate::state::State;

// ---------------------------------------------------------------------------
// Configuration

/// Shrink factor α applied to the iterate before each step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShrinkFactor {
    /// α = 1: pure stagewise.
    One,
    /// Explicit α in (0, 1].
    Value(f64),
    /// 1 − α = ε/10, tying the shrink amount to the step size.
    Auto,
}

impl ShrinkFactor {
    pub fn resolve(self, epsilon: f64) -> Result<f64> {
        let a = match self {
            ShrinkFactor::One => 1.0,
            ShrinkFactor::Value(a) => a,
            ShrinkFactor::Auto => 1.0 - epsilon / 10.0,
        };
        if !(a > 0.0 && a <= 1.0) {
            return Err(StagewiseError::Input(format!(
                "shrink factor must lie in (0, 1], resolved to {a}"
            )));
        }
        Ok(a)
    }
}

/// Which steps keep a full state snapshot. The final state is always kept so
/// a finished path can seed a restart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordStates {
    All,
    EveryK(usize),
    Endpoints,
}

#[derive(Clone, Debug)]
pub struct StagewiseConfig {
    pub epsilon: f64,
    pub max_steps: usize,
    pub alpha: ShrinkFactor,
    pub t0: f64,
    /// Starting state; `None` means the zero state (valid when t0 = 0).
    pub x0: Option<State>,
    /// Stop once |g(x^k) − g(x^{k−1})| stays below this for 5 straight steps.
    pub stop_g_stall: Option<f64>,
    pub record_states: RecordStates,
}

impl StagewiseConfig {
    /// Defaults: pure stagewise from zero with snapshot thinning that keeps
    /// roughly 500 states.
    pub fn new(epsilon: f64, max_steps: usize) -> Self {
        StagewiseConfig {
            epsilon,
            max_steps,
            alpha: ShrinkFactor::One,
            t0: 0.0,
            x0: None,
            stop_g_stall: None,
            record_states: RecordStates::EveryK((max_steps / 500).max(1)),
        }
    }

    /// The same configuration, restarted from the end of a finished path.
    pub fn restarted_from(&self, path: &Path) -> Result<StagewiseConfig> {
        let last = path.records.last().ok_or_else(|| {
            StagewiseError::Input("cannot restart from an empty path".into())
        })?;
        let state = last.state.clone().ok_or_else(|| {
            StagewiseError::Input("final path record carries no state snapshot".into())
        })?;
        let mut cfg = self.clone();
        cfg.t0 = last.t_static;
        cfg.x0 = Some(state);
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(StagewiseError::Input(format!(
                "step size must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.max_steps == 0 {
            return Err(StagewiseError::Input("max_steps must be at least 1".into()));
        }
        if !(self.t0 >= 0.0) {
            return Err(StagewiseError::Input(format!("t0 must be nonnegative, got {}", self.t0)));
        }
        if let Some(s) = self.stop_g_stall {
            if !(s > 0.0) {
                return Err(StagewiseError::Input("g-stall threshold must be positive".into()));
            }
        }
        if let RecordStates::EveryK(0) = self.record_states {
            return Err(StagewiseError::Input("snapshot stride must be at least 1".into()));
        }
        Ok(())
    }

    fn hash_value(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.epsilon.to_bits().hash(&mut h);
        self.max_steps.hash(&mut h);
        match self.alpha {
            ShrinkFactor::One => 0u8.hash(&mut h),
            ShrinkFactor::Value(a) => {
                1u8.hash(&mut h);
                a.to_bits().hash(&mut h);
            }
            ShrinkFactor::Auto => 2u8.hash(&mut h),
        }
        self.t0.to_bits().hash(&mut h);
        match self.stop_g_stall {
            None => 0u8.hash(&mut h),
            Some(s) => {
                1u8.hash(&mut h);
                s.to_bits().hash(&mut h);
            }
        }
        match self.record_states {
            RecordStates::All => 0usize.hash(&mut h),
            RecordStates::EveryK(k) => (1usize, k).hash(&mut h),
            RecordStates::Endpoints => 2usize.hash(&mut h),
        }
        h.finish()
    }
}

// ---------------------------------------------------------------------------
// Path records

#[derive(Clone, Debug)]
pub struct PathRecord {
    pub step: usize,
    pub t_static: f64,
    pub g_dynamic: f64,
    pub loss: f64,
    pub state: Option<State>,
    pub wall_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    /// The step came back zero (gradient in the regularizer's kernel of
    /// improvement, typically ∇f = 0).
    Stationary,
    GStall,
}

/// Which way the path walks. The primal drivers relax the constraint (t
/// grows); the dual fused-penalty route moves toward more regularization,
/// so plots over t should order it descending.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathDirection {
    Relaxing,
    Regularizing,
}

#[derive(Clone, Debug)]
pub struct PathDescriptor {
    pub loss_kind: String,
    pub reg_kind: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub t0: f64,
    pub direction: PathDirection,
    pub config_hash: u64,
}

#[derive(Clone, Debug)]
pub struct Path {
    pub records: Vec<PathRecord>,
    pub descriptor: PathDescriptor,
    pub stop: StopReason,
}

impl Path {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_record(&self) -> &PathRecord {
        self.records.last().expect("a path always has its starting record")
    }

    pub fn final_state(&self) -> Option<&State> {
        self.final_record().state.as_ref()
    }

    /// (t, state) pairs for every record that kept a snapshot.
    pub fn snapshots(&self) -> Vec<(f64, &State)> {
        self.records
            .iter()
            .filter_map(|r| r.state.as_ref().map(|s| (r.t_static, s)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Drivers

/// Pure stagewise: x^(k) = x^(k−1) + Δ with Δ the ε-scaled step, t_k = t₀+kε.
pub fn run_stagewise(loss: &LossFunction, reg: &Regularizer, cfg: &StagewiseConfig) -> Result<Path> {
    let alpha = cfg.alpha.resolve(cfg.epsilon)?;
    if alpha != 1.0 {
        return Err(StagewiseError::Input(format!(
            "run_stagewise requires shrink factor 1, got {alpha}; use run_shrunken"
        )));
    }
    drive(loss, reg, cfg, 1.0)
}

/// Shrunken stagewise: x^(k) = αx^(k−1) + Δ, t_k = αt_{k−1} + ε. The α = 1
/// boundary is exactly the pure path and is delegated accordingly.
pub fn run_shrunken(loss: &LossFunction, reg: &Regularizer, cfg: &StagewiseConfig) -> Result<Path> {
    let alpha = cfg.alpha.resolve(cfg.epsilon)?;
    if alpha == 1.0 {
        return drive(loss, reg, cfg, 1.0);
    }
    drive(loss, reg, cfg, alpha)
}

const G_STALL_PATIENCE: usize = 5;
const FEASIBILITY_SLACK: f64 = 1e-9;

fn drive(loss: &LossFunction, reg: &Regularizer, cfg: &StagewiseConfig, alpha: f64) -> Result<Path> {
    cfg.validate()?;
    let shape = loss.domain_shape();
    let mut x = match &cfg.x0 {
        Some(s) => {
            if s.shape() != shape {
                return Err(StagewiseError::Input(format!(
                    "starting state shape {:?} does not match loss domain {:?}",
                    s.shape(),
                    shape
                )));
            }
            s.clone()
        }
        None => shape.zeros(),
    };
    let g0 = reg.value(&x)?;
    if g0 > cfg.t0 + FEASIBILITY_SLACK {
        return Err(StagewiseError::Input(format!(
            "starting state is infeasible: g(x0) = {g0} exceeds t0 = {}",
            cfg.t0
        )));
    }
    let descriptor = PathDescriptor {
        loss_kind: loss.kind().to_string(),
        reg_kind: reg.kind().to_string(),
        epsilon: cfg.epsilon,
        alpha,
        t0: cfg.t0,
        direction: PathDirection::Relaxing,
        config_hash: cfg.hash_value(),
    };

    let clock = Instant::now();
    let snapshot_at = |k: usize| match cfg.record_states {
        RecordStates::All => true,
        RecordStates::EveryK(j) => k % j == 0,
        RecordStates::Endpoints => k == 0,
    };

    let (mut f_cur, mut grad_cur) = loss.value_grad(&x)?;
    if !f_cur.is_finite() {
        return Err(StagewiseError::Numeric {
            what: format!("loss value {f_cur} at the starting state"),
            step: Some(0),
        });
    }
    let mut records = vec![PathRecord {
        step: 0,
        t_static: cfg.t0,
        g_dynamic: g0,
        loss: f_cur,
        state: snapshot_at(0).then(|| x.clone()),
        wall_ns: clock.elapsed().as_nanos() as u64,
    }];

    let mut t = cfg.t0;
    let mut g_prev = g0;
    let mut stall_run = 0usize;
    let mut stop = StopReason::MaxSteps;
    for k in 1..=cfg.max_steps {
        let delta = reg.lmo(&grad_cur, cfg.epsilon)?;
        if delta.is_zero() {
            stop = StopReason::Stationary;
            break;
        }
        x.shrink_add(alpha, &delta);
        t = if alpha == 1.0 { cfg.t0 + (k as f64) * cfg.epsilon } else { alpha * t + cfg.epsilon };
        let (f_new, grad_new) = loss.value_grad(&x)?;
        if !f_new.is_finite() {
            return Err(StagewiseError::Numeric {
                what: format!("loss value {f_new}"),
                step: Some(k),
            });
        }
        let g_new = reg.value(&x)?;
        records.push(PathRecord {
            step: k,
            t_static: t,
            g_dynamic: g_new,
            loss: f_new,
            state: snapshot_at(k).then(|| x.clone()),
            wall_ns: clock.elapsed().as_nanos() as u64,
        });
        if let Some(th) = cfg.stop_g_stall {
            if (g_new - g_prev).abs() < th {
                stall_run += 1;
                if stall_run >= G_STALL_PATIENCE {
                    stop = StopReason::GStall;
                    break;
                }
            } else {
                stall_run = 0;
            }
        }
        g_prev = g_new;
        f_cur = f_new;
        grad_cur = grad_new;
    }
    let _ = (f_cur, g_prev, grad_cur);
    // the last record always carries the state, so the path can be resumed
    if let Some(last) = records.last_mut() {
        if last.state.is_none() {
            last.state = Some(x);
        }
    }
    Ok(Path { records, descriptor, stop })
}

// ---------------------------------------------------------------------------
// Null-space initialization for seminorm penalties

/// Minimize the loss over null(Q), the set the penalty cannot see. Needed
/// before running with a singular quadratic penalty: started elsewhere, the
/// step direction could pick up an unpenalized unbounded component.
///
/// Least squares reduces to a k-dimensional normal system over the null
/// basis; GLMs take damped Newton in the reduced coordinates.
pub fn init_null_space(loss: &LossFunction, qf: &QuadraticForm) -> Result<Array1<f64>> {
    let p = qf.dim();
    let nullity = qf.nullity();
    if nullity == 0 {
        return Ok(Array1::zeros(p));
    }
    let basis = qf.null_basis();
    match loss {
        LossFunction::LeastSquares(data) => {
            check_design(data, p)?;
            let m = data.x.dot(&basis);
            let theta = least_squares_minnorm(&m, &data.y)?;
            Ok(basis.dot(&theta))
        }
        LossFunction::Glm { data, family } => {
            check_design(data, p)?;
            let m = data.x.dot(&basis);
            let theta = glm_newton(&m, &data.y, *family)?;
            Ok(basis.dot(&theta))
        }
        _ => Err(StagewiseError::Unsupported(format!(
            "null-space initialization supports least-squares and GLM losses, not {}",
            loss.kind()
        ))),
    }
}

fn check_design(data: &Dataset, p: usize) -> Result<()> {
    if data.p() != p {
        return Err(StagewiseError::Input(format!(
            "penalty dimension {p} does not match {} predictors",
            data.p()
        )));
    }
    Ok(())
}

fn least_squares_minnorm(m: &Array2<f64>, y: &Array1<f64>) -> Result<Array1<f64>> {
    let mtm = m.t().dot(m);
    let mty = m.t().dot(y);
    match cholesky(&mtm) {
        Ok(l) => Ok(chol_solve(&l, &mty)),
        Err(_) => {
            let eig = SymEigen::new(&mtm, 1e-12);
            Ok(eig.solve_minnorm(&mty))
        }
    }
}

fn glm_newton(m: &Array2<f64>, y: &Array1<f64>, family: GlmFamily) -> Result<Array1<f64>> {
    let k = m.ncols();
    let data = Dataset::new(m.clone(), y.clone())?;
    let mut theta = Array1::<f64>::zeros(k);
    let (mut value, mut grad) = glm_value_grad(&theta, &data, family)?;
    for _ in 0..200 {
        if grad.iter().fold(0.0f64, |a, g| a.max(g.abs())) <= 1e-10 {
            return Ok(theta);
        }
        // Fisher weights at the current linear predictor
        let eta = m.dot(&theta).mapv(|e| e.clamp(-30.0, 30.0));
        let w = eta.mapv(|e| match family {
            GlmFamily::Logistic => {
                let mu = 1.0 / (1.0 + (-e).exp());
                mu * (1.0 - mu)
            }
            GlmFamily::Poisson => e.exp(),
        });
        let mut hess = Array2::<f64>::zeros((k, k));
        for i in 0..m.nrows() {
            let wi = w[i];
            for a in 0..k {
                for b in 0..k {
                    hess[[a, b]] += wi * m[[i, a]] * m[[i, b]];
                }
            }
        }
        let dir = match cholesky(&hess) {
            Ok(l) => chol_solve(&l, &grad),
            Err(_) => SymEigen::new(&hess, 1e-12).solve_minnorm(&grad),
        };
        // backtrack until the value actually drops
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta - &(&dir * step);
            let (v, g) = glm_value_grad(&cand, &data, family)?;
            if v < value {
                theta = cand;
                value = v;
                grad = g;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent left at machine precision; accept if the gradient
            // is small enough to call stationary
            let gnorm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            if gnorm <= 1e-8 {
                return Ok(theta);
            }
            return Err(StagewiseError::Convergence {
                what: "null-space Newton stalled before reaching tolerance".into(),
                residual: gnorm,
            });
        }
    }
    let gnorm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    if gnorm <= 1e-10 {
        Ok(theta)
    } else {
        Err(StagewiseError::Convergence {
            what: "null-space Newton did not converge in 200 iterations".into(),
            residual: gnorm,
        })
    }
}

// ---------------------------------------------------------------------------
// Step-size diagnostics

/// Where a path's monotone progress broke down, if anywhere.
#[derive(Clone, Debug)]
pub struct DiagnosticReport {
    pub clean: bool,
    /// First step where the loss failed to decrease or g failed to increase.
    pub first_flag_step: Option<usize>,
    /// Length of the strictly sign-alternating run of loss differences
    /// starting at the flagged step.
    pub alternation_len: usize,
    pub recommendation: Option<String>,
}

/// Scan a path for the onset of the stall-and-alternate pattern that an
/// oversized step produces: from some step on, f stops decreasing and g
/// stops increasing, and the loss differences flip sign back and forth.
pub fn step_size_diagnostic(path: &Path) -> DiagnosticReport {
    const SLACK: f64 = 1e-12;
    let r = &path.records;
    let mut flagged = None;
    for k in 1..r.len() {
        let f_ok = r[k].loss < r[k - 1].loss - SLACK;
        let g_ok = r[k].g_dynamic > r[k - 1].g_dynamic + SLACK;
        if !f_ok || !g_ok {
            flagged = Some(k);
            break;
        }
    }
    match flagged {
        None => DiagnosticReport {
            clean: true,
            first_flag_step: None,
            alternation_len: 0,
            recommendation: None,
        },
        Some(k) => {
            let mut run = 0usize;
            let mut prev_diff: Option<f64> = None;
            for j in k..r.len() {
                let d = r[j].loss - r[j - 1].loss;
                match prev_diff {
                    Some(pd) if pd * d < 0.0 => run += 1,
                    Some(_) => break,
                    None => {}
                }
                prev_diff = Some(d);
            }
            let restart = r[k].step.saturating_sub(1);
            DiagnosticReport {
                clean: false,
                first_flag_step: Some(r[k].step),
                alternation_len: run,
                recommendation: Some(format!(
                    "halve the step size and restart from step {restart}, the last monotone state"
                )),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Interpolation and derived sequences

/// State at parameter `t`, linearly interpolated between the two snapshot
/// records whose static parameters bracket it.
pub fn interpolate_path(path: &Path, t: f64) -> Result<State> {
    let snaps = path.snapshots();
    if snaps.is_empty() {
        return Err(StagewiseError::Range("path has no state snapshots".into()));
    }
    for &(tk, s) in &snaps {
        if tk == t {
            return Ok(s.clone());
        }
    }
    for w in snaps.windows(2) {
        let (t_lo, lo) = w[0];
        let (t_hi, hi) = w[1];
        if t_lo < t && t < t_hi {
            let weight = (t - t_lo) / (t_hi - t_lo);
            return Ok(State::lerp(lo, hi, weight));
        }
    }
    Err(StagewiseError::Range(format!(
        "t = {t} lies outside the recorded range [{}, {}]",
        snaps.first().unwrap().0,
        snaps.last().unwrap().0
    )))
}

/// One entry of the effective-Lagrange sequence: the dual-norm value of the
/// gradient at a recorded state, the multiplier an exact solution at that
/// constraint level would carry.
#[derive(Clone, Copy, Debug)]
pub struct LagrangePoint {
    pub step: usize,
    pub t: f64,
    pub lambda: f64,
    /// λ/t; infinite at t = 0 by IEEE convention.
    pub ratio: f64,
}

pub fn effective_lagrange(
    path: &Path,
    loss: &LossFunction,
    reg: &Regularizer,
) -> Result<Vec<LagrangePoint>> {
    let mut out = Vec::new();
    for rec in &path.records {
        let Some(state) = &rec.state else { continue };
        let (_, grad) = loss.value_grad(state)?;
        let lambda = reg.dual_value(&grad)?;
        out.push(LagrangePoint {
            step: rec.step,
            t: rec.t_static,
            lambda,
            ratio: lambda / rec.t_static,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sub-optimality bound audit

#[derive(Clone, Copy, Debug)]
pub struct BoundMargin {
    pub step: usize,
    pub t: f64,
    pub bound: f64,
    /// f(x^(k)) − f_reference(t_k).
    pub excess: f64,
    /// bound − excess; nonnegative when the guarantee holds.
    pub margin: f64,
}

/// Audit the path against the guarantee
/// f(x^(k)) − f(x̂(t_k)) ≤ L(t_k² − t₀²) + L(t_k − t₀)ε,
/// given reference objective values at selected steps. Quadratic penalties
/// are outside the guarantee (g must be a norm) and return an empty audit.
pub fn theorem1_check(
    path: &Path,
    reg: &Regularizer,
    lipschitz: f64,
    reference: &[(usize, f64)],
) -> Result<Vec<BoundMargin>> {
    if !reg.is_norm() {
        return Ok(Vec::new());
    }
    let eps = path.descriptor.epsilon;
    let t0 = path.descriptor.t0;
    let mut out = Vec::with_capacity(reference.len());
    for &(step, f_ref) in reference {
        let rec = path.records.iter().find(|r| r.step == step).ok_or_else(|| {
            StagewiseError::Input(format!("no path record at step {step}"))
        })?;
        let t = rec.t_static;
        let bound = lipschitz * (t * t - t0 * t0) + lipschitz * (t - t0) * eps;
        let excess = rec.loss - f_ref;
        out.push(BoundMargin { step, t, bound, excess, margin: bound - excess });
    }
    Ok(out)
}

/// The curvature constant L = max_u g*(XᵀXu)/g(u) for the least-squares
/// loss. Exact for ℓ1 (the maximum is attained at a coordinate vector, so it
/// is the largest absolute entry of XᵀX); sampled plus block-wise lower
/// bounds for group-ℓ2, reported uncertified.
#[derive(Clone, Copy, Debug)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub certified: bool,
}

pub fn lipschitz_ls(x: &Array2<f64>, reg: &Regularizer) -> Result<LipschitzEstimate> {
    let xtx = x.t().dot(x);
    match reg {
        Regularizer::L1 => {
            let value = xtx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            Ok(LipschitzEstimate { value, certified: true })
        }
        Regularizer::Group(part) if part.all_l2() => {
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            let p = xtx.nrows();
            if part.p() != p {
                return Err(StagewiseError::Input(
                    "partition does not match design dimension".into(),
                ));
            }
            let reg_state = |v: &Array1<f64>| -> f64 {
                reg.value(&State::Vector(v.clone())).unwrap_or(f64::INFINITY)
            };
            let dual_state = |v: &Array1<f64>| -> f64 {
                reg.dual_value(&State::Vector(v.clone())).unwrap_or(0.0)
            };
            let mut best = 0.0f64;
            // single-group directions: the restricted supremum is the
            // spectral norm of each column block pair, scaled by the weights
            for (j, idx_j) in part.groups().iter().enumerate() {
                let wj = part.weights()[j];
                if wj == 0.0 {
                    continue;
                }
                for (l, idx_l) in part.groups().iter().enumerate() {
                    let wl = part.weights()[l];
                    if wl == 0.0 {
                        continue;
                    }
                    let block = Array2::from_shape_fn((idx_l.len(), idx_j.len()), |(a, b)| {
                        xtx[[idx_l[a], idx_j[b]]]
                    });
                    let sigma = crate::linalg::spectral_norm(&block);
                    best = best.max(sigma / (wl * wj));
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(0x11b5);
            for _ in 0..100_000 {
                let u = Array1::from_shape_fn(p, |_| rng.random::<f64>() * 2.0 - 1.0);
                let gu = reg_state(&u);
                if !(gu > 0.0) || !gu.is_finite() {
                    continue;
                }
                let ratio = dual_state(&xtx.dot(&u)) / gu;
                best = best.max(ratio);
            }
            Ok(LipschitzEstimate { value: best, certified: false })
        }
        _ => Err(StagewiseError::Unsupported(format!(
            "no curvature constant routine for the {} regularizer",
            reg.kind()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Serialization

/// Render a path as CSV: `step,t_static,g_dynamic,loss,wall_ns`, plus state
/// columns `x1..xp` when requested (blank on records without snapshots).
/// Floats carry 17 significant digits so a rerun can be compared bit-level.
pub fn path_csv(path: &Path, include_states: bool) -> String {
    let mut out = String::new();
    let state_len = if include_states {
        path.snapshots().first().map(|(_, s)| s.len()).unwrap_or(0)
    } else {
        0
    };
    out.push_str("step,t_static,g_dynamic,loss,wall_ns");
    for i in 1..=state_len {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for r in &path.records {
        let _ = write!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{}",
            r.step, r.t_static, r.g_dynamic, r.loss, r.wall_ns
        );
        if state_len > 0 {
            match &r.state {
                Some(s) => {
                    for v in s.iter() {
                        let _ = write!(out, ",{v:.16e}");
                    }
                }
                None => {
                    for _ in 0..state_len {
                        out.push(',');
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::Dataset;
    use crate::regularizers::{GroupNorm, GroupPartition, PowerMethodConfig};
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_lasso(n: usize, p: usize, seed: u64) -> LossFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0 - 1.0);
        LossFunction::LeastSquares(Dataset::new(x, y).unwrap())
    }

    #[test]
    fn stationary_start_gives_single_record() {
        let loss = LossFunction::GaussianSignal { y: Array1::zeros(4) };
        let cfg = StagewiseConfig::new(0.1, 50);
        let path = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.stop, StopReason::Stationary);
        assert!(path.final_state().is_some());
    }

    #[test]
    fn static_parameter_is_exact_multiple() {
        let loss = random_lasso(12, 5, 31);
        let mut cfg = StagewiseConfig::new(0.01, 40);
        cfg.record_states = RecordStates::All;
        let path = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        for r in &path.records {
            assert_eq!(r.t_static, (r.step as f64) * 0.01);
        }
    }

    #[test]
    fn iterates_stay_feasible_and_g_grows_slowly() {
        let loss = random_lasso(15, 6, 32);
        let part = GroupPartition::contiguous(6, 3, GroupNorm::L2).unwrap();
        for reg in [Regularizer::L1, Regularizer::Group(part)] {
            let mut cfg = StagewiseConfig::new(0.05, 60);
            cfg.record_states = RecordStates::All;
            let path = run_stagewise(&loss, &reg, &cfg).unwrap();
            for w in path.records.windows(2) {
                assert!(w[1].g_dynamic <= w[1].t_static + 1e-9, "feasibility violated");
                assert!(
                    w[1].g_dynamic <= w[0].g_dynamic + cfg.epsilon + 1e-9,
                    "g jumped by more than the step budget"
                );
            }
        }
    }

    #[test]
    fn shrunken_with_unit_alpha_matches_pure_run() {
        let loss = random_lasso(10, 4, 33);
        let mut cfg = StagewiseConfig::new(0.02, 30);
        cfg.record_states = RecordStates::All;
        let pure = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        cfg.alpha = ShrinkFactor::Value(1.0);
        let shrunk = run_shrunken(&loss, &Regularizer::L1, &cfg).unwrap();
        assert_eq!(pure.len(), shrunk.len());
        for (a, b) in pure.records.iter().zip(shrunk.records.iter()) {
            assert_eq!(a.t_static, b.t_static);
            assert_eq!(a.g_dynamic, b.g_dynamic);
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.state, b.state);
        }
    }

    #[test]
    fn first_shrunken_step_ignores_alpha_from_zero() {
        let loss = random_lasso(10, 4, 34);
        let mut cfg = StagewiseConfig::new(0.02, 1);
        cfg.alpha = ShrinkFactor::Value(0.5);
        cfg.record_states = RecordStates::All;
        let path = run_shrunken(&loss, &Regularizer::L1, &cfg).unwrap();
        // x^(1) = α·0 + Δ = Δ: one coordinate at ±ε
        let State::Vector(x1) = path.records[1].state.clone().unwrap() else { panic!() };
        let nonzero: Vec<f64> = x1.iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].abs(), 0.02);
    }

    #[test]
    fn shrunken_parameter_recursion_holds() {
        let loss = random_lasso(10, 4, 35);
        let mut cfg = StagewiseConfig::new(0.05, 25);
        cfg.alpha = ShrinkFactor::Value(0.9);
        cfg.record_states = RecordStates::All;
        let path = run_shrunken(&loss, &Regularizer::L1, &cfg).unwrap();
        let mut t = 0.0;
        for r in &path.records {
            if r.step > 0 {
                t = 0.9 * t + 0.05;
            }
            assert_eq!(r.t_static, t);
            assert!(r.g_dynamic <= r.t_static + 1e-9);
        }
    }

    #[test]
    fn auto_shrink_ties_alpha_to_epsilon() {
        assert_eq!(ShrinkFactor::Auto.resolve(1e-3).unwrap(), 1.0 - 1e-4);
        assert!(ShrinkFactor::Auto.resolve(20.0).is_err());
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let loss = random_lasso(8, 3, 36);
        let mut cfg = StagewiseConfig::new(0.1, 10);
        cfg.x0 = Some(State::Vector(array![1.0, 0.0, 0.0]));
        cfg.t0 = 0.5;
        assert!(run_stagewise(&loss, &Regularizer::L1, &cfg).is_err());
    }

    #[test]
    fn restart_continues_where_the_path_stopped() {
        let loss = random_lasso(12, 5, 37);
        let mut cfg = StagewiseConfig::new(0.01, 20);
        cfg.record_states = RecordStates::All;
        let full_cfg = StagewiseConfig { max_steps: 40, ..cfg.clone() };
        let full = run_stagewise(&loss, &Regularizer::L1, &full_cfg).unwrap();
        let head = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        let tail_cfg = cfg.restarted_from(&head).unwrap();
        let tail_cfg = StagewiseConfig { max_steps: 20, ..tail_cfg };
        let tail = run_stagewise(&loss, &Regularizer::L1, &tail_cfg).unwrap();
        let full_last = full.final_record();
        let tail_last = tail.final_record();
        assert_eq!(full_last.loss, tail_last.loss);
        assert_eq!(full_last.state, tail_last.state);
        assert!((full_last.t_static - tail_last.t_static).abs() < 1e-12);
    }

    #[test]
    fn matches_directly_coded_coordinate_selection() {
        // the classic incremental procedure: move the coordinate most
        // correlated with the residual by ±ε
        let n = 10;
        let p = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0 - 1.0);
        let eps = 0.01;
        let steps = 50;

        let mut beta = Array1::<f64>::zeros(p);
        let mut direct = vec![beta.clone()];
        for _ in 0..steps {
            let resid = &y - &x.dot(&beta);
            let corr = x.t().dot(&resid);
            let mut best = 0;
            let mut best_abs = 0.0f64;
            for (i, &c) in corr.iter().enumerate() {
                if c.abs() > best_abs {
                    best_abs = c.abs();
                    best = i;
                }
            }
            if best_abs == 0.0 {
                break;
            }
            beta[best] += eps * corr[best].signum();
            direct.push(beta.clone());
        }

        let loss = LossFunction::LeastSquares(Dataset::new(x, y).unwrap());
        let mut cfg = StagewiseConfig::new(eps, steps);
        cfg.record_states = RecordStates::All;
        let path = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        assert_eq!(path.len(), direct.len());
        for (rec, d) in path.records.iter().zip(direct.iter()) {
            let State::Vector(v) = rec.state.as_ref().unwrap() else { panic!() };
            for (a, b) in v.iter().zip(d.iter()) {
                assert!(a.to_bits() == b.to_bits(), "drift at step {}", rec.step);
            }
        }
    }

    #[test]
    fn null_init_chain_is_the_mean() {
        let y = array![1.0, 3.0, 5.0, 3.0];
        let mut d = Array2::<f64>::zeros((3, 4));
        for i in 0..3 {
            d[[i, i]] = -1.0;
            d[[i, i + 1]] = 1.0;
        }
        let qf = QuadraticForm::difference_product(d).unwrap();
        let loss = LossFunction::LeastSquares(Dataset::new(Array2::eye(4), y).unwrap());
        let b0 = init_null_space(&loss, &qf).unwrap();
        for v in b0.iter() {
            assert!((v - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn null_init_order_two_is_the_line_fit() {
        let p = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let y = Array1::from_shape_fn(p, |i| 0.3 * i as f64 + rng.random::<f64>());
        // order-2 differences: rows (1, -2, 1)
        let mut d = Array2::<f64>::zeros((p - 2, p));
        for i in 0..p - 2 {
            d[[i, i]] = 1.0;
            d[[i, i + 1]] = -2.0;
            d[[i, i + 2]] = 1.0;
        }
        let qf = QuadraticForm::difference_product(d).unwrap();
        let loss = LossFunction::LeastSquares(Dataset::new(Array2::eye(p), y.clone()).unwrap());
        let b0 = init_null_space(&loss, &qf).unwrap();
        // closed-form simple linear regression on index
        let xs: Vec<f64> = (0..p).map(|i| i as f64).collect();
        let xbar = xs.iter().sum::<f64>() / p as f64;
        let ybar = y.sum() / p as f64;
        let slope: f64 = xs.iter().zip(y.iter()).map(|(x, v)| (x - xbar) * (v - ybar)).sum::<f64>()
            / xs.iter().map(|x| (x - xbar) * (x - xbar)).sum::<f64>();
        let icept = ybar - slope * xbar;
        for (i, v) in b0.iter().enumerate() {
            let want = icept + slope * i as f64;
            assert!((v - want).abs() < 1e-8, "index {i}: {v} vs {want}");
        }
    }

    #[test]
    fn null_init_positive_definite_is_zero() {
        let qf = QuadraticForm::dense(Array2::eye(3)).unwrap();
        let loss = random_lasso(5, 3, 40);
        let b0 = init_null_space(&loss, &qf).unwrap();
        assert!(b0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn null_init_logistic_matches_gradient_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = 6;
        let n = 40;
        let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = Array1::from_shape_fn(n, |_| f64::from(rng.random::<bool>()));
        let mut d = Array2::<f64>::zeros((p - 1, p));
        for i in 0..p - 1 {
            d[[i, i]] = -1.0;
            d[[i, i + 1]] = 1.0;
        }
        let qf = QuadraticForm::difference_product(d).unwrap();
        let loss = LossFunction::Glm {
            data: Dataset::new(x.clone(), y.clone()).unwrap(),
            family: GlmFamily::Logistic,
        };
        let b0 = init_null_space(&loss, &qf).unwrap();
        // gradient projected onto null(Q) must vanish
        let (_, grad) = loss.value_grad(&State::Vector(b0)).unwrap();
        let State::Vector(g) = grad else { panic!() };
        let basis = qf.null_basis();
        for c in 0..basis.ncols() {
            let proj = basis.column(c).dot(&g);
            assert!(proj.abs() < 1e-8, "null-space gradient component {proj}");
        }
    }

    fn hand_path(f: &[f64], g: &[f64]) -> Path {
        let records = f
            .iter()
            .zip(g.iter())
            .enumerate()
            .map(|(k, (&loss, &gv))| PathRecord {
                step: k,
                t_static: k as f64 * 0.1,
                g_dynamic: gv,
                loss,
                state: None,
                wall_ns: 0,
            })
            .collect();
        Path {
            records,
            descriptor: PathDescriptor {
                loss_kind: "least_squares".into(),
                reg_kind: "l1".into(),
                epsilon: 0.1,
                alpha: 1.0,
                t0: 0.0,
                direction: PathDirection::Relaxing,
                config_hash: 0,
            },
            stop: StopReason::MaxSteps,
        }
    }

    #[test]
    fn diagnostic_clean_on_monotone_path() {
        let path = hand_path(&[5.0, 4.0, 3.2, 2.9], &[0.0, 0.1, 0.2, 0.3]);
        let rep = step_size_diagnostic(&path);
        assert!(rep.clean);
        assert!(rep.first_flag_step.is_none());
    }

    #[test]
    fn diagnostic_flags_constant_path_at_step_one() {
        let path = hand_path(&[2.0, 2.0, 2.0], &[0.5, 0.5, 0.5]);
        let rep = step_size_diagnostic(&path);
        assert!(!rep.clean);
        assert_eq!(rep.first_flag_step, Some(1));
    }

    #[test]
    fn diagnostic_measures_alternation_run() {
        // monotone for 3 steps, then f bounces up/down/up/down
        let f = [5.0, 4.0, 3.0, 3.4, 3.0, 3.4, 3.0];
        let g = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let rep = step_size_diagnostic(&hand_path(&f, &g));
        assert!(!rep.clean);
        assert_eq!(rep.first_flag_step, Some(3));
        assert_eq!(rep.alternation_len, 3);
        assert!(rep.recommendation.unwrap().contains("step 2"));
    }

    #[test]
    fn interpolation_hits_snapshots_and_midpoints() {
        let loss = random_lasso(10, 4, 42);
        let mut cfg = StagewiseConfig::new(0.05, 10);
        cfg.record_states = RecordStates::All;
        let path = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        let exact = interpolate_path(&path, path.records[3].t_static).unwrap();
        assert_eq!(&exact, path.records[3].state.as_ref().unwrap());
        let mid_t = 0.5 * (path.records[3].t_static + path.records[4].t_static);
        let mid = interpolate_path(&path, mid_t).unwrap();
        let want = State::lerp(
            path.records[3].state.as_ref().unwrap(),
            path.records[4].state.as_ref().unwrap(),
            0.5,
        );
        assert!(mid.max_abs_diff(&want) < 1e-15);
        assert!(matches!(
            interpolate_path(&path, 99.0),
            Err(StagewiseError::Range(_))
        ));
    }

    #[test]
    fn effective_lagrange_unfolds_to_residual_correlation() {
        let loss = random_lasso(12, 5, 43);
        let mut cfg = StagewiseConfig::new(0.02, 15);
        cfg.record_states = RecordStates::All;
        let path = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        let seq = effective_lagrange(&path, &loss, &Regularizer::L1).unwrap();
        let LossFunction::LeastSquares(data) = &loss else { panic!() };
        for pt in &seq {
            let State::Vector(beta) = path.records[pt.step].state.as_ref().unwrap() else {
                panic!()
            };
            let resid = &data.y - &data.x.dot(beta);
            let want = data.x.t().dot(&resid).iter().fold(0.0f64, |a, c| a.max(c.abs()));
            assert!((pt.lambda - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_margin_is_zero_at_the_start() {
        let loss = random_lasso(8, 3, 44);
        let cfg = StagewiseConfig::new(0.01, 5);
        let path = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        let f0 = path.records[0].loss;
        let audit = theorem1_check(&path, &Regularizer::L1, 3.0, &[(0, f0)]).unwrap();
        assert_eq!(audit.len(), 1);
        assert_eq!(audit[0].bound, 0.0);
        assert_eq!(audit[0].margin, 0.0);
    }

    #[test]
    fn quadratic_kind_is_excluded_from_bound_audit() {
        let loss = random_lasso(8, 3, 45);
        let cfg = StagewiseConfig::new(0.01, 5);
        let path = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        let qf = QuadraticForm::dense(Array2::eye(3)).unwrap();
        let audit = theorem1_check(&path, &Regularizer::Quadratic(qf), 3.0, &[(0, 0.0)]).unwrap();
        assert!(audit.is_empty());
    }

    #[test]
    fn curvature_constant_for_identity_design() {
        let est = lipschitz_ls(&Array2::eye(6), &Regularizer::L1).unwrap();
        assert_eq!(est.value, 1.0);
        assert!(est.certified);
    }

    #[test]
    fn curvature_constant_is_max_abs_gram_entry() {
        // X with XᵀX = [[2,1],[1,2]]
        let x = array![
            [1.0, 1.0],
            [1.0, 0.0],
            [0.0, 1.0],
        ];
        let xtx = x.t().dot(&x);
        assert_eq!(xtx, array![[2.0, 1.0], [1.0, 2.0]]);
        let est = lipschitz_ls(&x, &Regularizer::L1).unwrap();
        assert_eq!(est.value, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let xr = Array2::from_shape_fn((8, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let est = lipschitz_ls(&xr, &Regularizer::L1).unwrap();
        let gram = xr.t().dot(&xr);
        let mut brute = 0.0f64;
        for j in 0..4 {
            for i in 0..4 {
                brute = brute.max(gram[[i, j]].abs());
            }
        }
        assert_eq!(est.value, brute);
    }

    #[test]
    fn trace_regularizer_runs_on_matrix_states() {
        let obs = crate::losses::ObservedMatrix::from_triplets(
            (4, 4),
            &[(0, 0, 1.0), (1, 1, -2.0), (2, 3, 0.5), (3, 0, 1.5), (0, 2, -0.7)],
        )
        .unwrap();
        let loss = LossFunction::MatrixCompletion(obs);
        let reg = Regularizer::Trace(PowerMethodConfig::default());
        let mut cfg = StagewiseConfig::new(0.05, 30);
        cfg.record_states = RecordStates::All;
        let path = run_stagewise(&loss, &reg, &cfg).unwrap();
        assert!(path.len() > 5);
        for w in path.records.windows(2) {
            assert!(w[1].g_dynamic <= w[1].t_static + 1e-9);
        }
        // loss decreases at small step sizes early on
        assert!(path.records[5].loss < path.records[0].loss);
    }

    #[test]
    fn csv_has_header_step_rows_and_17_digit_floats() {
        let loss = random_lasso(8, 3, 47);
        let mut cfg = StagewiseConfig::new(0.02, 4);
        cfg.record_states = RecordStates::All;
        let path = run_stagewise(&loss, &Regularizer::L1, &cfg).unwrap();
        let csv = path_csv(&path, true);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "step,t_static,g_dynamic,loss,wall_ns,x1,x2,x3");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert!(row[1].contains('e'));
        // mantissa: leading digit + 16 decimals
        let mantissa = row[1].split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.split('.').nth(1).unwrap().len(), 16);
        assert_eq!(csv.lines().count(), path.len() + 1);
    }
}
