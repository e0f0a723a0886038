//! Convex losses with exact gradients.
//!
//! Every loss exposes `value_grad` on a [`State`] so the path engine and the
//! certifying solver can stay generic over vector and matrix parameters. Free
//! functions give direct access for callers that already know the shape.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::error::{Result, StagewiseError};
use crate::state::{State, StateShape};

/// Regression data: predictors by row, one response per row.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(StagewiseError::Input(format!(
                "predictor rows ({}) must match response length ({})",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(StagewiseError::Input("dataset contains non-finite entries".into()));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Partially observed matrix: dimensions plus a map of observed entries.
/// BTreeMap keeps iteration order deterministic.
#[derive(Clone, Debug)]
pub struct ObservedMatrix {
    dims: (usize, usize),
    entries: BTreeMap<(usize, usize), f64>,
}

impl ObservedMatrix {
    pub fn new(dims: (usize, usize), entries: BTreeMap<(usize, usize), f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(StagewiseError::Input("observed matrix needs at least one entry".into()));
        }
        for (&(i, j), &v) in &entries {
            if i >= dims.0 || j >= dims.1 {
                return Err(StagewiseError::Input(format!(
                    "observed entry ({i}, {j}) outside {}x{} matrix",
                    dims.0, dims.1
                )));
            }
            if !v.is_finite() {
                return Err(StagewiseError::Input(format!("non-finite observation at ({i}, {j})")));
            }
        }
        Ok(ObservedMatrix { dims, entries })
    }

    pub fn from_triplets(dims: (usize, usize), triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let entries = triplets.iter().map(|&(i, j, v)| ((i, j), v)).collect();
        ObservedMatrix::new(dims, entries)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.entries.contains_key(&(i, j))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlmFamily {
    Logistic,
    Poisson,
}

// Linear predictors are clamped here before exponentiation; the value uses
// the same clamped predictor so value and gradient remain a consistent pair.
const LINPRED_CLAMP: f64 = 30.0;

/// A loss together with its data. `kind` distinguishes the five supported
/// objectives; logistic and Poisson share the GLM data layout.
#[derive(Clone, Debug)]
pub enum LossFunction {
    LeastSquares(Dataset),
    Glm { data: Dataset, family: GlmFamily },
    MatrixCompletion(ObservedMatrix),
    GaussianSignal { y: Array1<f64> },
}

impl LossFunction {
    pub fn kind(&self) -> &'static str {
        match self {
            LossFunction::LeastSquares(_) => "least_squares",
            LossFunction::Glm { family: GlmFamily::Logistic, .. } => "logistic",
            LossFunction::Glm { family: GlmFamily::Poisson, .. } => "poisson",
            LossFunction::MatrixCompletion(_) => "matrix_completion",
            LossFunction::GaussianSignal { .. } => "gaussian_signal",
        }
    }

    /// Shape of the parameter this loss is defined over.
    pub fn domain_shape(&self) -> StateShape {
        match self {
            LossFunction::LeastSquares(d) => StateShape::Vector(d.p()),
            LossFunction::Glm { data, .. } => StateShape::Vector(data.p()),
            LossFunction::MatrixCompletion(o) => {
                let (m, n) = o.dims();
                StateShape::Matrix(m, n)
            }
            LossFunction::GaussianSignal { y } => StateShape::Vector(y.len()),
        }
    }

    pub fn value_grad(&self, x: &State) -> Result<(f64, State)> {
        if x.shape() != self.domain_shape() {
            return Err(StagewiseError::Input(format!(
                "parameter shape {:?} does not match loss domain {:?}",
                x.shape(),
                self.domain_shape()
            )));
        }
        match (self, x) {
            (LossFunction::LeastSquares(d), State::Vector(beta)) => {
                let (v, g) = least_squares_value_grad(beta, d)?;
                Ok((v, State::Vector(g)))
            }
            (LossFunction::Glm { data, family }, State::Vector(beta)) => {
                let (v, g) = glm_value_grad(beta, data, *family)?;
                Ok((v, State::Vector(g)))
            }
            (LossFunction::MatrixCompletion(o), State::Matrix(b)) => {
                let (v, g) = matcomp_value_grad(b, o)?;
                Ok((v, State::Matrix(g)))
            }
            (LossFunction::GaussianSignal { y }, State::Vector(beta)) => {
                let (v, g, _) = gaussian_signal_value_grad_conj(beta, y)?;
                Ok((v, State::Vector(g)))
            }
            _ => unreachable!("shape check above guarantees matching variants"),
        }
    }

    pub fn value(&self, x: &State) -> Result<f64> {
        Ok(self.value_grad(x)?.0)
    }
}

/// ½‖y − Xβ‖² with gradient −Xᵀ(y − Xβ).
pub fn least_squares_value_grad(beta: &Array1<f64>, data: &Dataset) -> Result<(f64, Array1<f64>)> {
    if beta.len() != data.p() {
        return Err(StagewiseError::Input(format!(
            "coefficient length {} does not match {} predictors",
            beta.len(),
            data.p()
        )));
    }
    let resid = &data.y - &data.x.dot(beta);
    let value = 0.5 * resid.dot(&resid);
    let grad = -data.x.t().dot(&resid);
    Ok((value, grad))
}

/// Negative log-likelihood (constants in β dropped) and gradient −Xᵀ(y − μ).
pub fn glm_value_grad(
    beta: &Array1<f64>,
    data: &Dataset,
    family: GlmFamily,
) -> Result<(f64, Array1<f64>)> {
    if beta.len() != data.p() {
        return Err(StagewiseError::Input(format!(
            "coefficient length {} does not match {} predictors",
            beta.len(),
            data.p()
        )));
    }
    match family {
        GlmFamily::Logistic => {
            if data.y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(StagewiseError::Input("logistic responses must lie in {0, 1}".into()));
            }
        }
        GlmFamily::Poisson => {
            if data.y.iter().any(|&v| v < 0.0) {
                return Err(StagewiseError::Input("poisson responses must be nonnegative".into()));
            }
        }
    }
    let eta = data.x.dot(beta).mapv(|e| e.clamp(-LINPRED_CLAMP, LINPRED_CLAMP));
    let mut value = 0.0;
    let mut mu = Array1::<f64>::zeros(data.n());
    for i in 0..data.n() {
        let e = eta[i];
        match family {
            GlmFamily::Logistic => {
                // log(1 + exp(e)) - y*e, computed without overflow
                value += e.max(0.0) + (-e.abs()).exp().ln_1p() - data.y[i] * e;
                mu[i] = 1.0 / (1.0 + (-e).exp());
            }
            GlmFamily::Poisson => {
                let m = e.exp();
                value += m - data.y[i] * e;
                mu[i] = m;
            }
        }
    }
    let grad = -data.x.t().dot(&(&data.y - &mu));
    Ok((value, grad))
}

/// ½ Σ_{(i,j)∈Ω} (Y_ij − B_ij)²; gradient lives only on Ω, exact zeros elsewhere.
pub fn matcomp_value_grad(b: &Array2<f64>, data: &ObservedMatrix) -> Result<(f64, Array2<f64>)> {
    let (m, n) = data.dims();
    if b.nrows() != m || b.ncols() != n {
        return Err(StagewiseError::Input(format!(
            "estimate is {}x{} but observations are {m}x{n}",
            b.nrows(),
            b.ncols()
        )));
    }
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((m, n));
    for (i, j, y) in data.entries() {
        let r = b[[i, j]] - y;
        value += 0.5 * r * r;
        grad[[i, j]] = r;
    }
    Ok((value, grad))
}

/// The conjugate-gradient map of the signal approximation loss: z ↦ y + z,
/// so that applying it to ∇f(β) = β − y returns β.
#[derive(Clone, Debug)]
pub struct ConjGradMap {
    y: Array1<f64>,
}

impl ConjGradMap {
    pub fn apply(&self, z: &Array1<f64>) -> Array1<f64> {
        &self.y + z
    }
}

/// ½‖y − β‖² with grad β − y, plus the closed-form conjugate-gradient map.
pub fn gaussian_signal_value_grad_conj(
    beta: &Array1<f64>,
    y: &Array1<f64>,
) -> Result<(f64, Array1<f64>, ConjGradMap)> {
    if beta.len() != y.len() {
        return Err(StagewiseError::Input(format!(
            "signal estimate length {} does not match data length {}",
            beta.len(),
            y.len()
        )));
    }
    let resid = beta - y;
    let value = 0.5 * resid.dot(&resid);
    Ok((value, resid, ConjGradMap { y: y.clone() }))
}
