//! Dense linear-algebra and statistics kernels.
//!
//! Everything here is a pure function over immutable inputs. Matrices are
//! `nalgebra` dense matrices; eigen- and Cholesky factorizations delegate to
//! `nalgebra`, the discrete Lyapunov solver is a Smith doubling iteration.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Power-iteration budget for the Lyapunov stability guard.
pub const RADIUS_POWER_ITERS: usize = 200;
pub const RADIUS_POWER_TOL: f64 = 1e-6;
/// Lyapunov solves are rejected at or above this estimated spectral radius.
pub const RADIUS_REJECT: f64 = 0.999;
const MAX_DOUBLINGS: usize = 64;

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains NaN or Inf")))
    }
}

fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == m.ncols() && m.nrows() > 0 {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending
/// order. Eigenvectors are the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vector,
    pub vectors: Matrix,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn top_vector(&self) -> Vector {
        self.vectors.column(0).into_owned()
    }

    pub fn reconstruct(&self) -> Matrix {
        &self.vectors * Matrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

/// Flip `v` so its largest-magnitude entry is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    ensure_square(a, "sym_eig input")?;
    ensure_finite(a, "sym_eig input")?;
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in the factorization's order.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        fix_sign(&mut col);
        vectors.set_column(dst, &Vector::from_vec(col));
    }
    Ok(SymEig { values, vectors })
}

/// Symmetric square root of a symmetric PSD matrix (negative eigenvalues
/// from rounding are clamped to zero).
pub fn sym_sqrt(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(a)?;
    let d = eig.values.map(|v| v.max(0.0).sqrt());
    Ok(&eig.vectors * Matrix::from_diagonal(&d) * eig.vectors.transpose())
}

/// Inverse symmetric square root of a symmetric positive-definite matrix.
pub fn sym_inv_sqrt(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(a)?;
    if eig.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::Singular("inverse square root of a non-positive-definite matrix".into()));
    }
    let d = eig.values.map(|v| 1.0 / v.sqrt());
    Ok(&eig.vectors * Matrix::from_diagonal(&d) * eig.vectors.transpose())
}

/// Spectral-radius estimate by power iteration: the geometric-mean growth
/// rate of `‖Wᵏx‖` over the second half of the iterations. Handles complex
/// dominant pairs, where the one-step ratio oscillates.
pub fn spectral_radius_estimate(w: &Matrix, iters: usize, tol: f64) -> Result<f64> {
    ensure_square(w, "spectral radius input")?;
    ensure_finite(w, "spectral radius input")?;
    let n = w.nrows();
    let mut x = Vector::from_iterator(n, (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64));
    x /= x.norm();
    let mut log_growth = Vec::with_capacity(iters);
    let mut last = f64::NAN;
    for it in 0..iters {
        let y = w * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        log_growth.push(norm.ln());
        x = y / norm;
        if it >= 20 && it % 10 == 0 {
            let half = &log_growth[log_growth.len() / 2..];
            let est = (half.iter().sum::<f64>() / half.len() as f64).exp();
            if (est - last).abs() < tol {
                return Ok(est);
            }
            last = est;
        }
    }
    let half = &log_growth[log_growth.len() / 2..];
    Ok((half.iter().sum::<f64>() / half.len() as f64).exp())
}

/// Exact spectral radius from the (complex) eigenvalues via a Schur form.
pub fn spectral_radius(w: &Matrix) -> Result<f64> {
    ensure_square(w, "spectral radius input")?;
    ensure_finite(w, "spectral radius input")?;
    Ok(w.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Solve `Σ = W Σ Wᵀ + Q` by Smith doubling: `Σ ← Σ + A Σ Aᵀ`, `A ← A²`.
pub fn solve_discrete_lyapunov(w: &Matrix, q: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_square(w, "W")?;
    ensure_square(q, "Q")?;
    if w.nrows() != q.nrows() {
        return Err(Error::dim(format!("W is {0}x{0} but Q is {1}x{1}", w.nrows(), q.nrows())));
    }
    ensure_finite(w, "W")?;
    ensure_finite(q, "Q")?;
    let radius = spectral_radius_estimate(w, RADIUS_POWER_ITERS, RADIUS_POWER_TOL)?;
    if radius >= RADIUS_REJECT {
        return Err(Error::Divergence { radius });
    }
    let q_norm = q.norm();
    let residual = |s: &Matrix| (s - w * s * w.transpose() - q).norm();
    let mut sigma = q.clone();
    let mut a = w.clone();
    let mut res = residual(&sigma);
    for _ in 0..MAX_DOUBLINGS {
        if res <= tol * q_norm {
            return Ok(symmetrize(&sigma));
        }
        sigma += &a * &sigma * a.transpose();
        a = &a * &a;
        res = residual(&sigma);
        if !res.is_finite() {
            return Err(Error::Divergence { radius });
        }
    }
    if res <= tol * q_norm {
        Ok(symmetrize(&sigma))
    } else {
        Err(Error::Convergence { iterations: MAX_DOUBLINGS, residual: res })
    }
}

/// `(S + εI)⁻¹` with `ε = eps_rel · trace(S) / dim`.
pub fn regularized_inverse(s: &Matrix, eps_rel: f64) -> Result<Matrix> {
    ensure_square(s, "S")?;
    ensure_finite(s, "S")?;
    if !(eps_rel >= 0.0) {
        return Err(Error::invalid(format!("eps_rel must be nonnegative, got {eps_rel}")));
    }
    let n = s.nrows();
    let eps = eps_rel * s.trace() / n as f64;
    let shifted = symmetrize(s) + Matrix::identity(n, n) * eps;
    let chol = Cholesky::new(shifted)
        .ok_or_else(|| Error::Singular(format!("S + {eps:e}·I is not positive definite")))?;
    let inv = chol.inverse();
    ensure_finite(&inv, "regularized inverse")?;
    Ok(symmetrize(&inv))
}

/// Streaming mean/covariance accumulator. Samples are buffered and folded in
/// with a matrix product around a fixed shift (the first sample), which keeps
/// the sums well conditioned for observations with a large offset.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    dim: usize,
    count: usize,
    shift: Option<Vector>,
    sum: Vector,
    cross: Matrix,
    buffer: Vec<f64>,
    buffered: usize,
}

const COV_CHUNK: usize = 512;

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            shift: None,
            sum: Vector::zeros(dim),
            cross: Matrix::zeros(dim, dim),
            buffer: Vec::with_capacity(dim * COV_CHUNK),
            buffered: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.dim {
            return Err(Error::dim(format!(
                "sample has dimension {}, expected {}",
                sample.len(),
                self.dim
            )));
        }
        let shift = self.shift.get_or_insert_with(|| Vector::from_column_slice(sample));
        self.buffer.extend(sample.iter().zip(shift.iter()).map(|(x, s)| x - s));
        self.buffered += 1;
        self.count += 1;
        if self.buffered == COV_CHUNK {
            self.flush();
        }
        Ok(())
    }

    fn flush(&mut self) {
        if self.buffered == 0 {
            return;
        }
        // Column-major dim × buffered block: each column is one sample.
        let block = Matrix::from_column_slice(self.dim, self.buffered, &self.buffer);
        self.sum += block.column_sum();
        self.cross.gemm(1.0, &block, &block.transpose(), 1.0);
        self.buffer.clear();
        self.buffered = 0;
    }

    /// Mean and unbiased (n−1) covariance of everything pushed so far.
    pub fn finish(&self) -> Result<(Vector, Matrix)> {
        if self.count < 2 {
            return Err(Error::InsufficientData(format!(
                "covariance needs at least 2 samples, got {}",
                self.count
            )));
        }
        let mut acc = self.clone();
        acc.flush();
        let n = acc.count as f64;
        let centered_mean = &acc.sum / n;
        let cov = (&acc.cross - &centered_mean * centered_mean.transpose() * n) / (n - 1.0);
        let mean = centered_mean + acc.shift.as_ref().expect("shift set by first sample");
        Ok((mean, symmetrize(&cov)))
    }
}

pub fn centered_covariance<S: AsRef<[f64]>>(samples: &[S]) -> Result<(Vector, Matrix)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no samples".into()))?;
    let mut acc = CovarianceAccumulator::new(first.as_ref().len());
    for s in samples {
        acc.push(s.as_ref())?;
    }
    acc.finish()
}

fn mean_and_centered_ss(x: &[f64]) -> (f64, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum())
}

fn check_pair(y: &[f64], target: &[f64]) -> Result<()> {
    if y.len() != target.len() {
        return Err(Error::dim(format!("series lengths differ: {} vs {}", y.len(), target.len())));
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 points".into()));
    }
    Ok(())
}

/// Squared Pearson correlation. Returns 0 when `y` is constant.
pub fn pearson_corr_sq(y: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(y, target)?;
    let (my, syy) = mean_and_centered_ss(y);
    let (mt, stt) = mean_and_centered_ss(target);
    if stt <= 0.0 {
        return Err(Error::UndefinedTarget);
    }
    if syy <= 0.0 {
        return Ok(0.0);
    }
    let syt: f64 = y.iter().zip(target).map(|(a, b)| (a - my) * (b - mt)).sum();
    Ok((syt * syt / (syy * stt)).clamp(0.0, 1.0))
}

/// Coefficient of determination `1 − SSE/SST`; negative for predictions
/// worse than the target mean.
pub fn coeff_determination(prediction: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(prediction, target)?;
    let (_, stt) = mean_and_centered_ss(target);
    if stt <= 0.0 {
        return Err(Error::UndefinedTarget);
    }
    let sse: f64 = prediction.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - sse / stt)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n−1); zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let (_, ss) = mean_and_centered_ss(x);
    (ss / (x.len() - 1) as f64).sqrt()
}
