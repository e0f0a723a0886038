//! Small dense linear algebra kernels.
//!
//! Everything here targets desk scale (dimensions in the low hundreds), where
//! textbook algorithms are plenty: unblocked Cholesky, a banded Cholesky that
//! exploits penalty bandwidth, and cyclic Jacobi for symmetric
//! eigendecompositions. Jacobi is slow compared to LAPACK but is dependency
//! free, deterministic, and accurate to a few ulps on symmetric input, which
//! is what the certification tests care about.

use ndarray::{Array1, Array2};

use crate::error::{Result, StagewiseError};

/// Unblocked lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(StagewiseError::Input(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(StagewiseError::Numeric {
                        what: format!("cholesky pivot {sum:.3e} at index {i}; matrix not positive definite"),
                        step: None,
                    });
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve L L^T x = b given the lower factor from [`cholesky`].
pub fn chol_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let mut x = b.clone();
    // forward: L y = b
    for i in 0..n {
        let mut sum = x[i];
        for k in 0..i {
            sum -= l[[i, k]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    // backward: L^T x = y
    for i in (0..n).rev() {
        let mut sum = x[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Lower Cholesky factor of a banded SPD matrix, stored by diagonals:
/// `band[[i, d]]` holds L[i, i-d] for d = 0..=bandwidth.
#[derive(Clone, Debug)]
pub struct BandedChol {
    band: Array2<f64>,
    bandwidth: usize,
}

/// Banded Cholesky in O(p * bandwidth^2). Entries of `a` outside the band are
/// ignored; the caller asserts the band structure by choosing the tag.
pub fn cholesky_banded(a: &Array2<f64>, bandwidth: usize) -> Result<BandedChol> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(StagewiseError::Input("banded cholesky needs a square matrix".into()));
    }
    let bw = bandwidth.min(n.saturating_sub(1));
    let mut band = Array2::<f64>::zeros((n, bw + 1));
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        for j in lo..=i {
            let mut sum = a[[i, j]];
            let kstart = lo.max(j.saturating_sub(bw));
            for k in kstart..j {
                sum -= band[[i, i - k]] * band[[j, j - k]];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(StagewiseError::Numeric {
                        what: format!("banded cholesky pivot {sum:.3e} at index {i}"),
                        step: None,
                    });
                }
                band[[i, 0]] = sum.sqrt();
            } else {
                band[[i, i - j]] = sum / band[[j, 0]];
            }
        }
    }
    Ok(BandedChol { band, bandwidth: bw })
}

impl BandedChol {
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.band.nrows();
        let bw = self.bandwidth;
        let mut x = b.clone();
        for i in 0..n {
            let mut sum = x[i];
            for k in i.saturating_sub(bw)..i {
                sum -= self.band[[i, i - k]] * x[k];
            }
            x[i] = sum / self.band[[i, 0]];
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                sum -= self.band[[k, k - i]] * x[k];
            }
            x[i] = sum / self.band[[i, 0]];
        }
        x
    }
}

/// Symmetric eigendecomposition A = V diag(w) V^T by cyclic Jacobi rotations.
/// Eigenvalues come back ascending, eigenvectors as matching columns of V.
pub fn jacobi_eigh(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    if n <= 1 {
        let w = Array1::from_iter((0..n).map(|i| m[[i, i]]));
        return (w, v);
    }
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = (frob * 1e-15).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if (2.0 * off).sqrt() <= stop {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                // classic stable rotation computation
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut w: Vec<(f64, usize)> = (0..n).map(|i| (m[[i, i]], i)).collect();
    w.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let vals = Array1::from_iter(w.iter().map(|&(x, _)| x));
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (new, &(_, old)) in w.iter().enumerate() {
        for r in 0..n {
            vecs[[r, new]] = v[[r, old]];
        }
    }
    (vals, vecs)
}

/// Eigendecomposition wrapper that remembers a rank threshold. Used for
/// pseudo-inverse applications and null-space extraction of PSD matrices.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub vals: Array1<f64>,
    pub vecs: Array2<f64>,
    pub threshold: f64,
}

impl SymEigen {
    /// Decompose with rank threshold `rel_threshold * max_abs_entry(a)`.
    pub fn new(a: &Array2<f64>, rel_threshold: f64) -> Self {
        let (vals, vecs) = jacobi_eigh(a);
        let scale = a.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
        SymEigen {
            vals,
            vecs,
            threshold: rel_threshold * scale.max(f64::MIN_POSITIVE),
        }
    }

    pub fn rank(&self) -> usize {
        self.vals.iter().filter(|&&w| w.abs() > self.threshold).count()
    }

    /// Columns spanning the numerical null space.
    pub fn null_basis(&self) -> Array2<f64> {
        let n = self.vals.len();
        let null_idx: Vec<usize> = (0..n).filter(|&i| self.vals[i].abs() <= self.threshold).collect();
        let mut basis = Array2::<f64>::zeros((n, null_idx.len()));
        for (c, &i) in null_idx.iter().enumerate() {
            for r in 0..n {
                basis[[r, c]] = self.vecs[[r, i]];
            }
        }
        basis
    }

    /// Pseudo-inverse application: sum over eigenpairs above threshold.
    pub fn pinv_apply(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.vals.len();
        let mut out = Array1::<f64>::zeros(n);
        for i in 0..n {
            let w = self.vals[i];
            if w.abs() <= self.threshold {
                continue;
            }
            let col = self.vecs.column(i);
            let coef = col.dot(b) / w;
            out.scaled_add(coef, &col);
        }
        out
    }

    /// Minimum-norm solution of A x = b (components in the null space dropped).
    pub fn solve_minnorm(&self, b: &Array1<f64>) -> Array1<f64> {
        self.pinv_apply(b)
    }
}

/// Singular values of a general matrix, descending, via the smaller Gram
/// matrix. Adequate for trace-norm values at desk scale.
pub fn singular_values(a: &Array2<f64>) -> Array1<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    let gram = if m <= n {
        a.dot(&a.t())
    } else {
        a.t().dot(a)
    };
    let (vals, _) = jacobi_eigh(&gram);
    let mut sv: Vec<f64> = vals.iter().map(|&w| w.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Array1::from(sv)
}

pub fn spectral_norm(a: &Array2<f64>) -> f64 {
    singular_values(a).get(0).copied().unwrap_or(0.0)
}

/// Dense reference for the leading singular triple (sigma, u, v), used to
/// validate the power-method implementation. Sign fixed so u^T A v > 0.
pub fn top_singular_triple(a: &Array2<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let (m, n) = (a.nrows(), a.ncols());
    if m <= n {
        let gram = a.dot(&a.t());
        let (vals, vecs) = jacobi_eigh(&gram);
        let top = vals.len() - 1;
        let sigma = vals[top].max(0.0).sqrt();
        let u = vecs.column(top).to_owned();
        let atu = a.t().dot(&u);
        let norm = atu.dot(&atu).sqrt();
        let v = if norm > 0.0 { atu / norm } else { Array1::zeros(n) };
        orient(a, sigma, u, v)
    } else {
        let gram = a.t().dot(a);
        let (vals, vecs) = jacobi_eigh(&gram);
        let top = vals.len() - 1;
        let sigma = vals[top].max(0.0).sqrt();
        let v = vecs.column(top).to_owned();
        let av = a.dot(&v);
        let norm = av.dot(&av).sqrt();
        let u = if norm > 0.0 { av / norm } else { Array1::zeros(m) };
        orient(a, sigma, u, v)
    }
}

fn orient(
    a: &Array2<f64>,
    sigma: f64,
    u: Array1<f64>,
    mut v: Array1<f64>,
) -> (f64, Array1<f64>, Array1<f64>) {
    if u.dot(&a.dot(&v)) < 0.0 {
        v.mapv_inplace(|x| -x);
    }
    (sigma, u, v)
}

/// Thin SVD `a = u diag(s) v^T` with `s` descending.
///
/// Eigendecomposes the Gram matrix on the smaller side and recovers the
/// other factor by one multiply, so cost is dominated by the
/// `min(m, n)`-sized eigenproblem. Singular values below
/// `max_sigma * 1e-12` are clamped to zero and the matching columns of
/// the recovered factor are zeroed rather than filled with noise;
/// callers that need a full orthonormal basis must check for them.
pub fn svd_thin(a: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let (m, n) = a.dim();
    let k = m.min(n);
    let tall = m >= n;
    // Gram on the smaller side: A^T A if tall, A A^T otherwise.
    let gram = if tall { a.t().dot(a) } else { a.dot(&a.t()) };
    let (vals, vecs) = jacobi_eigh(&gram);

    let mut sigmas = Array1::zeros(k);
    let mut small = Array2::zeros((k, k));
    for j in 0..k {
        // eigh returns ascending order; take columns from the top down.
        let src = k - 1 - j;
        sigmas[j] = vals[src].max(0.0).sqrt();
        small.column_mut(j).assign(&vecs.column(src));
    }

    let cutoff = sigmas[0] * 1e-12;
    // Recover the large-side factor: each column is A q / sigma.
    let mut large = if tall { a.dot(&small) } else { a.t().dot(&small) };
    for j in 0..k {
        if sigmas[j] > cutoff {
            let inv = 1.0 / sigmas[j];
            large.column_mut(j).mapv_inplace(|x| x * inv);
        } else {
            sigmas[j] = 0.0;
            large.column_mut(j).fill(0.0);
        }
    }

    if tall {
        (large, sigmas, small)
    } else {
        (small, sigmas, large)
    }
}
