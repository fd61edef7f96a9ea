//! Gaussian-process posteriors.
//!
//! [`BatchedPosterior`] is the weighted form used inside a phase: every
//! distinct action appears once with a repetition weight, and the
//! regularizer enters as `λ W⁻¹`. [`StandardPosterior`] is the textbook
//! per-round form and serves as the reference it must agree with.
//! [`DomainPosterior`] is the per-round form specialised to a finite point
//! set with rank-one updates, for algorithms that run thousands of rounds.
//! [`IncrementalPosterior`] is the per-round form grown one history entry
//! at a time, as used by the unbatched ablation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::linalg::jittered_cholesky;

/// Posterior over merged batches: actions `A_h`, weights `W_h` and a cached
/// factorization of `K_{A_h A_h} + λ W_h⁻¹`.
#[derive(Debug, Clone)]
pub struct BatchedPosterior {
    kernel: Kernel,
    lambda: f64,
    actions: Vec<Vec<f64>>,
    weights: Vec<u64>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl BatchedPosterior {
    pub fn new(kernel: Kernel, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(BatchedPosterior {
            kernel,
            lambda,
            actions: Vec::new(),
            weights: Vec::new(),
            factor: None,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Adds `count` plays of `action`. An action already present (bitwise
    /// equal coordinates) has its weight increased instead of being
    /// duplicated. Returns the position of the action.
    pub fn append(&mut self, action: &[f64], count: u64) -> Result<usize> {
        if count == 0 {
            return Err(Error::invalid("count", "batch count must be >= 1"));
        }
        let pos = match self.position(action) {
            Some(pos) => {
                self.weights[pos] += count;
                pos
            }
            None => {
                if let Some(first) = self.actions.first() {
                    self.kernel.eval(first, action)?;
                } else {
                    self.kernel.eval(action, action)?;
                }
                self.actions.push(action.to_vec());
                self.weights.push(count);
                self.actions.len() - 1
            }
        };
        self.refactor()?;
        Ok(pos)
    }

    fn position(&self, action: &[f64]) -> Option<usize> {
        self.actions.iter().position(|a| {
            a.len() == action.len() && a.iter().zip(action).all(|(p, q)| p.to_bits() == q.to_bits())
        })
    }

    fn refactor(&mut self) -> Result<()> {
        let h = self.actions.len();
        let mut m = DMatrix::zeros(h, h);
        for i in 0..h {
            for j in 0..=i {
                let v = self.kernel.eval_unchecked(&self.actions[i], &self.actions[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            m[(i, i)] += self.lambda / self.weights[i] as f64;
        }
        self.factor = Some(jittered_cholesky(&m)?);
        Ok(())
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.actions.len(),
            self.actions.iter().map(|a| self.kernel.eval_unchecked(x, a)),
        )
    }

    /// `Σ_h²(x) = k(x,x) − k(x,A)ᵀ (K_AA + λW⁻¹)⁻¹ k(x,A)`; the prior
    /// variance when nothing has been appended.
    pub fn variance(&self, x: &[f64]) -> f64 {
        let prior = self.kernel.eval_unchecked(x, x);
        let Some(factor) = &self.factor else {
            return prior;
        };
        let kx = self.cross(x);
        let mut v = kx.clone();
        factor.l_dirty().solve_lower_triangular_mut(&mut v);
        // the triangular solve only touches the lower part
        let reduction = v.norm_squared();
        (prior - reduction).max(0.0)
    }

    /// Solves `(K_AA + λW⁻¹) c = ȳ`; the mean is then `k(x,A)ᵀ c`.
    pub fn mean_coefficients(&self, ybar: &[f64]) -> Result<DVector<f64>> {
        if ybar.len() != self.actions.len() {
            return Err(Error::LengthMismatch {
                expected: self.actions.len(),
                actual: ybar.len(),
            });
        }
        if ybar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("aggregated feedback"));
        }
        match &self.factor {
            Some(factor) => Ok(factor.solve(&DVector::from_column_slice(ybar))),
            None => Ok(DVector::zeros(0)),
        }
    }

    /// `k(x,A)ᵀ c` for coefficients from [`Self::mean_coefficients`].
    pub fn mean_from_coefficients(&self, x: &[f64], coeffs: &DVector<f64>) -> f64 {
        if self.actions.is_empty() {
            return 0.0;
        }
        self.cross(x).dot(coeffs)
    }

    /// `μ̄(x) = k(x,A)ᵀ (K_AA + λW⁻¹)⁻¹ ȳ`.
    pub fn mean(&self, x: &[f64], ybar: &[f64]) -> Result<f64> {
        let coeffs = self.mean_coefficients(ybar)?;
        Ok(self.mean_from_coefficients(x, &coeffs))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid("lambda", format!("must be positive, got {lambda}")));
    }
    Ok(())
}

/// Per-round posterior `μ_t, σ_t²` over an explicit history.
#[derive(Debug, Clone)]
pub struct StandardPosterior {
    kernel: Kernel,
    lambda: f64,
    history: Vec<Vec<f64>>,
    observations: Vec<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
    alpha: Option<DVector<f64>>,
}

impl StandardPosterior {
    pub fn new(kernel: Kernel, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(StandardPosterior {
            kernel,
            lambda,
            history: Vec::new(),
            observations: Vec::new(),
            factor: None,
            alpha: None,
        })
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Appends one round `(x, y)` and refactors `K + λI`.
    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.extend(std::iter::once((x.to_vec(), y)))
    }

    pub fn extend<I: IntoIterator<Item = (Vec<f64>, f64)>>(&mut self, rounds: I) -> Result<()> {
        for (x, y) in rounds {
            self.kernel.eval(&x, &x)?;
            if let Some(first) = self.history.first() {
                self.kernel.eval(first, &x)?;
            }
            self.history.push(x);
            self.observations.push(y);
        }
        let t = self.history.len();
        if t == 0 {
            return Ok(());
        }
        let mut m = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..=i {
                let v = self.kernel.eval_unchecked(&self.history[i], &self.history[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            m[(i, i)] += self.lambda;
        }
        let factor = jittered_cholesky(&m)?;
        self.alpha = Some(factor.solve(&DVector::from_column_slice(&self.observations)));
        self.factor = Some(factor);
        Ok(())
    }

    /// `(μ_t(x), σ_t²(x))`; the prior `(0, k(x,x))` for an empty history.
    pub fn mean_var(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.kernel.eval_unchecked(x, x);
        let (Some(factor), Some(alpha)) = (&self.factor, &self.alpha) else {
            return (0.0, prior);
        };
        let kx = DVector::from_iterator(
            self.history.len(),
            self.history.iter().map(|h| self.kernel.eval_unchecked(x, h)),
        );
        let mean = kx.dot(alpha);
        let mut v = kx;
        factor.l_dirty().solve_lower_triangular_mut(&mut v);
        (mean, (prior - v.norm_squared()).max(0.0))
    }
}

/// Per-round posterior restricted to a fixed finite point set, updated with
/// rank-one conditioning. Equal to [`StandardPosterior`] at every point of
/// the set; cost per observation is `O(n²)` regardless of history length.
#[derive(Debug, Clone)]
pub struct DomainPosterior {
    lambda: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    scratch: Vec<f64>,
}

impl DomainPosterior {
    /// `gram` is the prior covariance over the point set.
    pub fn new(gram: DMatrix<f64>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let n = gram.nrows();
        Ok(DomainPosterior {
            lambda,
            mean: DVector::zeros(n),
            cov: gram,
            scratch: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.cov[(i, i)].max(0.0)
    }

    /// Index of the largest posterior variance (lowest index on ties).
    pub fn argmax_variance(&self) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let v = self.cov[(i, i)];
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    }

    /// Conditions on `y` observed at point `i` with noise variance `λ`.
    pub fn observe(&mut self, i: usize, y: f64) {
        self.condition(i, Some(y));
    }

    /// Conditions on an observation at `i` without touching the mean; the
    /// covariance update does not depend on the observed value.
    pub fn observe_location(&mut self, i: usize) {
        self.condition(i, None);
    }

    fn condition(&mut self, i: usize, y: Option<f64>) {
        let n = self.len();
        let denom = self.lambda + self.cov[(i, i)].max(0.0);
        for (k, s) in self.scratch.iter_mut().enumerate() {
            *s = self.cov[(k, i)];
        }
        if let Some(y) = y {
            let resid = (y - self.mean[i]) / denom;
            for k in 0..n {
                self.mean[k] += self.scratch[k] * resid;
            }
        }
        for j in 0..n {
            let cj = self.scratch[j] / denom;
            if cj == 0.0 {
                continue;
            }
            for k in 0..n {
                self.cov[(k, j)] -= self.scratch[k] * cj;
            }
        }
    }
}

/// Per-round posterior over a fixed candidate set with a growing history,
/// computed from the Cholesky factor `L` of `K_XX + λI` without storing it.
///
/// For every candidate `x` the vector `v_x = L⁻¹ k(X, x)` is kept; playing
/// candidate `j` appends one entry to every `v_x`. Variances are
/// `k(x,x) − ‖v_x‖²`; once the observations are known, `z = L⁻¹ y` gives the
/// mean `v_xᵀ z`. A round costs `O(n·t)` for `n` candidates after `t` rounds.
#[derive(Debug, Clone)]
pub struct IncrementalPosterior {
    gram: DMatrix<f64>,
    lambda: f64,
    v: Vec<Vec<f64>>,
    sq_norm: Vec<f64>,
    history: Vec<usize>,
    diag: Vec<f64>,
}

impl IncrementalPosterior {
    /// `gram` is the prior covariance over the candidates.
    pub fn new(gram: DMatrix<f64>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let n = gram.nrows();
        Ok(IncrementalPosterior {
            gram,
            lambda,
            v: vec![Vec::new(); n],
            sq_norm: vec![0.0; n],
            history: Vec::new(),
            diag: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn history(&self) -> &[usize] {
        &self.history
    }

    pub fn variance(&self, i: usize) -> f64 {
        (self.gram[(i, i)] - self.sq_norm[i]).max(0.0)
    }

    /// Candidate with the largest variance (lowest index on ties).
    pub fn argmax_variance(&self) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..self.gram.nrows() {
            let v = self.variance(i);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    }

    /// Adds one round played at candidate `j`.
    pub fn push(&mut self, j: usize) {
        let d = (self.gram[(j, j)] + self.lambda - self.sq_norm[j]).max(self.lambda).sqrt();
        let vj = self.v[j].clone();
        for x in 0..self.gram.nrows() {
            let dot: f64 = vj.iter().zip(&self.v[x]).map(|(a, b)| a * b).sum();
            let e = (self.gram[(j, x)] - dot) / d;
            self.v[x].push(e);
            self.sq_norm[x] += e * e;
        }
        self.history.push(j);
        self.diag.push(d);
    }

    /// `z = L⁻¹ y` for observations aligned with the history.
    pub fn whiten(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.history.len() {
            return Err(Error::LengthMismatch {
                expected: self.history.len(),
                actual: y.len(),
            });
        }
        let mut z: Vec<f64> = Vec::with_capacity(y.len());
        for (t, (&j, &yt)) in self.history.iter().zip(y).enumerate() {
            let dot: f64 = self.v[j][..t].iter().zip(&z).map(|(a, b)| a * b).sum();
            z.push((yt - dot) / self.diag[t]);
        }
        Ok(z)
    }

    /// Posterior mean at candidate `i` given whitened observations.
    pub fn mean(&self, i: usize, z: &[f64]) -> f64 {
        self.v[i].iter().zip(z).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn se() -> Kernel {
        Kernel::squared_exponential(0.2).unwrap()
    }

    #[test]
    fn append_and_merge() {
        let mut p = BatchedPosterior::new(se(), 1.0).unwrap();
        p.append(&[0.3], 1).unwrap();
        assert_eq!(p.actions(), &[vec![0.3]]);
        assert_eq!(p.weights(), &[1]);

        let mut p = BatchedPosterior::new(se(), 1.0).unwrap();
        p.append(&[0.3], 2).unwrap();
        p.append(&[0.3], 3).unwrap();
        assert_eq!(p.weights(), &[5]);
        assert_eq!(p.len(), 1);
        assert!(p.append(&[0.3], 0).is_err());
    }

    #[test]
    fn scalar_variance_cases() {
        let p = BatchedPosterior::new(se(), 1.0).unwrap();
        assert_eq!(p.variance(&[0.7]), 1.0);

        let mut p = BatchedPosterior::new(se(), 1.0).unwrap();
        p.append(&[0.2], 1).unwrap();
        assert_relative_eq!(p.variance(&[0.2]), 0.5, epsilon = 1e-15);

        for w in 1..6u64 {
            let mut p = BatchedPosterior::new(se(), 1.0).unwrap();
            p.append(&[0.2], w).unwrap();
            assert_relative_eq!(p.variance(&[0.2]), 1.0 / (w as f64 + 1.0), epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_mean_cases() {
        let mut p = BatchedPosterior::new(se(), 1.0).unwrap();
        p.append(&[0.2], 1).unwrap();
        assert_relative_eq!(p.mean(&[0.2], &[2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(p.mean(&[0.9], &[0.0]).unwrap(), 0.0);
        assert!(matches!(
            p.mean(&[0.2], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn standard_scalar_cases() {
        let p = StandardPosterior::new(se(), 1.0).unwrap();
        assert_eq!(p.mean_var(&[0.4]), (0.0, 1.0));
        let mut p = StandardPosterior::new(se(), 1.0).unwrap();
        p.push(&[0.4], 3.0).unwrap();
        let (m, v) = p.mean_var(&[0.4]);
        assert_relative_eq!(m, 1.5, epsilon = 1e-15);
        assert_relative_eq!(v, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn duplicated_round_matches_weight_two() {
        let mut s = StandardPosterior::new(se(), 0.3).unwrap();
        s.push(&[0.1], 0.8).unwrap();
        s.push(&[0.1], 0.8).unwrap();
        let mut b = BatchedPosterior::new(se(), 0.3).unwrap();
        b.append(&[0.1], 2).unwrap();
        for x in [0.0, 0.1, 0.25, 0.6] {
            let (m, v) = s.mean_var(&[x]);
            assert_relative_eq!(b.variance(&[x]), v, max_relative = 1e-10);
            assert_relative_eq!(b.mean(&[x], &[0.8]).unwrap(), m, max_relative = 1e-10);
        }
    }

    #[test]
    fn domain_posterior_matches_standard() {
        let k = se();
        let pts: Vec<Vec<f64>> = vec![vec![0.0], vec![0.15], vec![0.4], vec![0.9]];
        let g = crate::kernels::gram(&k, &pts).unwrap();
        let mut d = DomainPosterior::new(g, 0.05).unwrap();
        let mut s = StandardPosterior::new(k, 0.05).unwrap();
        for (i, y) in [(1usize, 0.3), (2, -0.1), (1, 0.5), (3, 1.0)] {
            d.observe(i, y);
            s.push(&pts[i], y).unwrap();
        }
        for (i, p) in pts.iter().enumerate() {
            let (m, v) = s.mean_var(p);
            assert_relative_eq!(d.mean(i), m, max_relative = 1e-9, epsilon = 1e-12);
            assert_relative_eq!(d.variance(i), v, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn incremental_matches_standard() {
        let k = Kernel::squared_exponential(0.3).unwrap();
        let pts: Vec<Vec<f64>> = vec![vec![0.0], vec![0.2], vec![0.5], vec![0.9]];
        let g = crate::kernels::gram(&k, &pts).unwrap();
        let mut inc = IncrementalPosterior::new(g, 0.1).unwrap();
        let mut std = StandardPosterior::new(k, 0.1).unwrap();
        let plays = [1usize, 1, 3, 0, 1, 2];
        let ys = [0.3, 0.1, -0.4, 0.8, 0.25, 0.0];
        for (&j, &y) in plays.iter().zip(&ys) {
            inc.push(j);
            std.push(&pts[j], y).unwrap();
        }
        let z = inc.whiten(&ys).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let (m, v) = std.mean_var(p);
            assert!((inc.mean(i, &z) - m).abs() < 1e-10);
            assert!((inc.variance(i) - v).abs() < 1e-10);
        }
    }
}
