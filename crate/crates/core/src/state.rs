//! Parameter states.
//!
//! The engine is agnostic to whether the optimization variable is a vector
//! (regression coefficients, signals) or a matrix (completion problems), so
//! both layouts share one enum and a handful of linear-space operations.

use ndarray::{Array1, Array2};

/// Shape of the optimization domain, as reported by a loss function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateShape {
    Vector(usize),
    Matrix(usize, usize),
}

impl StateShape {
    pub fn zeros(self) -> State {
        match self {
            StateShape::Vector(p) => State::Vector(Array1::zeros(p)),
            StateShape::Matrix(m, n) => State::Matrix(Array2::zeros((m, n))),
        }
    }

    /// Total number of scalar components.
    pub fn len(self) -> usize {
        match self {
            StateShape::Vector(p) => p,
            StateShape::Matrix(m, n) => m * n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

/// A point in the optimization domain.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Vector(Array1<f64>),
    Matrix(Array2<f64>),
}

impl State {
    pub fn shape(&self) -> StateShape {
        match self {
            State::Vector(v) => StateShape::Vector(v.len()),
            State::Matrix(m) => StateShape::Matrix(m.nrows(), m.ncols()),
        }
    }

    pub fn as_vector(&self) -> Option<&Array1<f64>> {
        match self {
            State::Vector(v) => Some(v),
            State::Matrix(_) => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&Array2<f64>> {
        match self {
            State::Matrix(m) => Some(m),
            State::Vector(_) => None,
        }
    }

    pub fn into_vector(self) -> Option<Array1<f64>> {
        match self {
            State::Vector(v) => Some(v),
            State::Matrix(_) => None,
        }
    }

    pub fn into_matrix(self) -> Option<Array2<f64>> {
        match self {
            State::Matrix(m) => Some(m),
            State::Vector(_) => None,
        }
    }

    /// Iterate the scalar components in a fixed (row-major) order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        match self {
            State::Vector(v) => Box::new(v.iter()),
            State::Matrix(m) => Box::new(m.iter()),
        }
    }

    pub fn len(&self) -> usize {
        self.shape().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when every component is exactly 0.0 (or -0.0).
    pub fn is_zero(&self) -> bool {
        self.iter().all(|&x| x == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// Euclidean inner product; shapes must match.
    pub fn dot(&self, other: &State) -> f64 {
        match (self, other) {
            (State::Vector(a), State::Vector(b)) => a.dot(b),
            (State::Matrix(a), State::Matrix(b)) => {
                a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
            }
            _ => panic!("state shape mismatch in dot"),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.iter().fold(0.0, |acc, &x| acc.max(x.abs()))
    }

    /// self += other, componentwise.
    pub fn add_assign(&mut self, other: &State) {
        match (self, other) {
            (State::Vector(a), State::Vector(b)) => *a += b,
            (State::Matrix(a), State::Matrix(b)) => *a += b,
            _ => panic!("state shape mismatch in add_assign"),
        }
    }

    /// self = alpha * self + other. With alpha == 1.0 the multiply is skipped
    /// so pure stagewise updates stay bit-identical to a plain addition.
    pub fn shrink_add(&mut self, alpha: f64, other: &State) {
        if alpha != 1.0 {
            match self {
                State::Vector(a) => a.mapv_inplace(|x| alpha * x),
                State::Matrix(a) => a.mapv_inplace(|x| alpha * x),
            }
        }
        self.add_assign(other);
    }

    /// Componentwise a + w * (b - a); used for path interpolation.
    pub fn lerp(a: &State, b: &State, w: f64) -> State {
        match (a, b) {
            (State::Vector(x), State::Vector(y)) => {
                State::Vector(x + &((y - x).mapv(|d| w * d)))
            }
            (State::Matrix(x), State::Matrix(y)) => {
                State::Matrix(x + &((y - x).mapv(|d| w * d)))
            }
            _ => panic!("state shape mismatch in lerp"),
        }
    }

    /// Componentwise (1 - gamma) * self + gamma * other (Frank-Wolfe mix).
    pub fn convex_combine(&mut self, gamma: f64, other: &State) {
        let keep = 1.0 - gamma;
        match (self, other) {
            (State::Vector(a), State::Vector(b)) => {
                for (x, &d) in a.iter_mut().zip(b.iter()) {
                    *x = keep * *x + gamma * d;
                }
            }
            (State::Matrix(a), State::Matrix(b)) => {
                for (x, &d) in a.iter_mut().zip(b.iter()) {
                    *x = keep * *x + gamma * d;
                }
            }
            _ => panic!("state shape mismatch in convex_combine"),
        }
    }

    /// Maximum absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &State) -> f64 {
        self.iter()
            .zip(other.iter())
            .fold(0.0, |acc, (&a, &b)| acc.max((a - b).abs()))
    }
}

impl From<Array1<f64>> for State {
    fn from(v: Array1<f64>) -> Self {
        State::Vector(v)
    }
}

impl From<Array2<f64>> for State {
    fn from(m: Array2<f64>) -> Self {
        State::Matrix(m)
    }
}
