//! Kernel functions, Gram matrices, decision sets and the greedy estimate of
//! the maximum information gain.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matérn smoothness values with closed-form kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl Smoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        match nu {
            v if v == 0.5 => Ok(Smoothness::Half),
            v if v == 1.5 => Ok(Smoothness::ThreeHalves),
            v if v == 2.5 => Ok(Smoothness::FiveHalves),
            other => Err(Error::invalid(
                "nu",
                format!("Matérn smoothness {other} unsupported; use 0.5, 1.5 or 2.5"),
            )),
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
            Smoothness::FiveHalves => 2.5,
        }
    }
}

/// Covariance over a finite, indexed point set given as an explicit matrix.
///
/// Points are addressed by their index encoded as a one-dimensional
/// coordinate, i.e. point `i` is `[i as f64]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalKernel {
    matrix: Arc<DMatrix<f64>>,
}

impl EmpiricalKernel {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::invalid("matrix", "empirical kernel must be square and nonempty"));
        }
        for i in 0..matrix.nrows() {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-9 * (1.0 + matrix[(i, j)].abs()) {
                    return Err(Error::invalid("matrix", "empirical kernel must be symmetric"));
                }
            }
        }
        Ok(EmpiricalKernel {
            matrix: Arc::new(matrix),
        })
    }

    /// Loads a row-major CSV (no header) aligned to the decision-set order.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Config(format!("{}: bad number {s:?}: {e}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!(
                "{}: empirical kernel matrix must be square",
                path.display()
            )));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat))
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn index_of(&self, x: &[f64]) -> Result<usize> {
        if x.len() != 1 {
            return Err(Error::NotInIndexedSet);
        }
        let v = x[0];
        if v < 0.0 || v.fract() != 0.0 || v >= self.len() as f64 {
            return Err(Error::NotInIndexedSet);
        }
        Ok(v as usize)
    }
}

/// Positive-definite covariance function.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    SquaredExponential { lengthscale: f64 },
    Matern { lengthscale: f64, nu: Smoothness },
    Linear,
    Empirical(EmpiricalKernel),
}

/// Config-level description of a kernel: `{type, lengthscale?, nu?, matrix_path?}`.
///
/// The lengthscale defaults to 0.2 and the Matérn smoothness to ν = 2.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(rename = "type")]
    pub kind: KernelType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelType {
    #[serde(alias = "squared_exponential")]
    Se,
    Matern,
    Linear,
    Empirical,
}

pub const DEFAULT_LENGTHSCALE: f64 = 0.2;
pub const DEFAULT_MATERN_NU: f64 = 2.5;

impl KernelSpec {
    pub fn squared_exponential(lengthscale: f64) -> Self {
        KernelSpec {
            kind: KernelType::Se,
            lengthscale: Some(lengthscale),
            nu: None,
            matrix_path: None,
        }
    }

    /// Builds the kernel; relative `matrix_path`s are resolved against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<Kernel> {
        match self.kind {
            KernelType::Se => Kernel::squared_exponential(self.lengthscale.unwrap_or(DEFAULT_LENGTHSCALE)),
            KernelType::Matern => Kernel::matern(
                self.lengthscale.unwrap_or(DEFAULT_LENGTHSCALE),
                self.nu.unwrap_or(DEFAULT_MATERN_NU),
            ),
            KernelType::Linear => Ok(Kernel::Linear),
            KernelType::Empirical => {
                let rel = self
                    .matrix_path
                    .as_deref()
                    .ok_or_else(|| Error::Config("empirical kernel requires matrix_path".into()))?;
                let path = match base {
                    Some(b) if Path::new(rel).is_relative() => b.join(rel),
                    _ => Path::new(rel).to_path_buf(),
                };
                Ok(Kernel::Empirical(EmpiricalKernel::from_csv(&path)?))
            }
        }
    }
}

impl Kernel {
    pub fn squared_exponential(lengthscale: f64) -> Result<Self> {
        check_lengthscale(lengthscale)?;
        Ok(Kernel::SquaredExponential { lengthscale })
    }

    pub fn matern(lengthscale: f64, nu: f64) -> Result<Self> {
        check_lengthscale(lengthscale)?;
        Ok(Kernel::Matern {
            lengthscale,
            nu: Smoothness::from_nu(nu)?,
        })
    }

    /// Evaluates `k(x, x2)`.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        match self {
            Kernel::Empirical(emp) => {
                let i = emp.index_of(x)?;
                let j = emp.index_of(x2)?;
                Ok(emp.matrix[(i, j)])
            }
            _ => {
                if x.len() != x2.len() {
                    return Err(Error::DimensionMismatch {
                        expected: x.len(),
                        actual: x2.len(),
                    });
                }
                Ok(self.eval_unchecked(x, x2))
            }
        }
    }

    /// Evaluation without dimension checks; callers guarantee matching
    /// dimensions (and valid indices for the empirical variant).
    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self {
            Kernel::SquaredExponential { lengthscale } => {
                let d2 = sq_dist(x, x2);
                (-d2 / (2.0 * lengthscale * lengthscale)).exp()
            }
            Kernel::Matern { lengthscale, nu } => {
                let r = sq_dist(x, x2).sqrt() / lengthscale;
                match nu {
                    Smoothness::Half => (-r).exp(),
                    Smoothness::ThreeHalves => {
                        let s = 3f64.sqrt() * r;
                        (1.0 + s) * (-s).exp()
                    }
                    Smoothness::FiveHalves => {
                        let s = 5f64.sqrt() * r;
                        (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
                    }
                }
            }
            Kernel::Linear => x.iter().zip(x2).map(|(a, b)| a * b).sum(),
            Kernel::Empirical(emp) => emp.matrix[(x[0] as usize, x2[0] as usize)],
        }
    }

    /// `max_x k(x, x)` over the given points (the bound κ²).
    pub fn kappa_sq(&self, points: &DecisionSet) -> f64 {
        points
            .iter()
            .map(|x| self.eval_unchecked(x, x))
            .fold(0.0, f64::max)
    }
}

fn check_lengthscale(l: f64) -> Result<()> {
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::invalid("lengthscale", format!("must be positive, got {l}")));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ordered finite set of distinct points sharing one dimension.
///
/// Indices are stable for the lifetime of the set; every tie in an argmax is
/// broken towards the lowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl DecisionSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(|p| p.len())
            .ok_or_else(|| Error::invalid("points", "decision set must be nonempty"))?;
        if dim == 0 {
            return Err(Error::invalid("points", "points must have dimension >= 1"));
        }
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("decision point"));
            }
            let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::invalid("points", "decision points must be distinct"));
            }
        }
        Ok(DecisionSet { points, dim })
    }

    /// `n` points drawn uniformly from `[0, 1]^d`.
    pub fn uniform<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("num_points", "need at least one point of dimension >= 1"));
        }
        let points = (0..n)
            .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
            .collect();
        Self::new(points)
    }

    /// Points `[0], [1], …, [n-1]`, the index set of an empirical kernel.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| vec![i as f64]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(|p| p.as_slice())
    }

    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.points.iter().position(|p| p.as_slice() == x)
    }

    /// Checks that the kernel accepts these points (dimension or index range).
    pub fn check_kernel(&self, kernel: &Kernel) -> Result<()> {
        if let Some(p) = self.points.first() {
            kernel.eval(p, p)?;
        }
        if let Some(p) = self.points.last() {
            kernel.eval(p, p)?;
        }
        if let Kernel::Empirical(emp) = kernel {
            if emp.len() != self.len() {
                return Err(Error::LengthMismatch {
                    expected: emp.len(),
                    actual: self.len(),
                });
            }
        }
        Ok(())
    }
}

/// Gram matrix `K[i][j] = k(X[i], X[j])`, symmetric by construction.
pub fn gram(kernel: &Kernel, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("points", "gram needs at least one point"));
    }
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&points[i], &points[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Gram matrix over a whole decision set.
pub fn decision_gram(kernel: &Kernel, set: &DecisionSet) -> Result<DMatrix<f64>> {
    gram(kernel, set.points())
}

/// Greedy estimate of the maximum information gain
/// `γ_t = max_{|X| = t} ½ log det(I + λ⁻¹ K_XX)` over multisets of `D`.
///
/// Requests beyond `budget` points fail; the default budget is `10·|D|`.
#[derive(Debug, Clone)]
pub struct InfoGainEstimator {
    gram: DMatrix<f64>,
    lambda: f64,
    budget: usize,
}

impl InfoGainEstimator {
    pub fn new(kernel: &Kernel, set: &DecisionSet, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid("lambda", format!("must be positive, got {lambda}")));
        }
        Ok(InfoGainEstimator {
            gram: decision_gram(kernel, set)?,
            lambda,
            budget: 10 * set.len(),
        })
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// `γ̂_t` for a single `t`.
    pub fn estimate(&self, t: usize) -> Result<f64> {
        Ok(*self.curve(t)?.last().expect("curve has t+1 entries"))
    }

    /// `[γ̂_0, γ̂_1, …, γ̂_t]`; each step adds the point of maximal current
    /// posterior variance, which maximizes the marginal log-det increase.
    pub fn curve(&self, t: usize) -> Result<Vec<f64>> {
        if t > self.budget {
            return Err(Error::InfoGainBudget {
                requested: t,
                budget: self.budget,
            });
        }
        let n = self.gram.nrows();
        let mut cov = self.gram.clone();
        let mut out = Vec::with_capacity(t + 1);
        let mut total = 0.0;
        out.push(0.0);
        let mut col = vec![0.0; n];
        for _ in 0..t {
            let best = argmax_diag(&cov);
            let var = cov[(best, best)].max(0.0);
            total += 0.5 * (1.0 + var / self.lambda).ln();
            out.push(total);
            let denom = self.lambda + var;
            for (i, c) in col.iter_mut().enumerate() {
                *c = cov[(i, best)];
            }
            for j in 0..n {
                let cj = col[j] / denom;
                if cj == 0.0 {
                    continue;
                }
                for i in 0..n {
                    cov[(i, j)] -= col[i] * cj;
                }
            }
        }
        Ok(out)
    }
}

fn argmax_diag(m: &DMatrix<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..m.nrows() {
        let v = m[(i, i)];
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Greedy `γ̂_t` with the default budget of `10·|D|`.
pub fn empirical_info_gain(kernel: &Kernel, set: &DecisionSet, t: usize, lambda: f64) -> Result<f64> {
    InfoGainEstimator::new(kernel, set, lambda)?.estimate(t)
}

/// `½ log det(I + λ⁻¹ K_XX)` for the multiset that takes point `i` of the
/// Gram `k_dd` exactly `counts[i]` times, via the weighted `|D|×|D|` form
/// `det(I + λ⁻¹ W^{1/2} K W^{1/2})`.
pub fn multiset_log_det(k_dd: &DMatrix<f64>, counts: &[usize], lambda: f64) -> Result<f64> {
    let n = k_dd.nrows();
    if counts.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: counts.len(),
        });
    }
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += (counts[i] as f64 * counts[j] as f64).sqrt() * k_dd[(i, j)] / lambda;
        }
    }
    let chol = crate::linalg::jittered_cholesky(&m)?;
    let l = chol.l();
    Ok((0..n).map(|i| l[(i, i)].ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn se_examples() {
        let k = Kernel::squared_exponential(0.2).unwrap();
        assert_eq!(k.eval(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
        assert_relative_eq!(
            k.eval(&[0.0, 0.0], &[0.2, 0.0]).unwrap(),
            0.606_530_659_712_633_4,
            epsilon = 1e-14
        );
    }

    #[test]
    fn linear_is_dot_product() {
        assert_eq!(Kernel::Linear.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let k = Kernel::squared_exponential(0.2).unwrap();
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empirical_lookup() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let k = Kernel::Empirical(EmpiricalKernel::new(m).unwrap());
        assert_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.5);
        assert!(matches!(k.eval(&[2.0], &[0.0]), Err(Error::NotInIndexedSet)));
        assert!(matches!(k.eval(&[0.5], &[0.0]), Err(Error::NotInIndexedSet)));
        let set = DecisionSet::indexed(2).unwrap();
        assert_eq!(k.kappa_sq(&set), 2.0);
    }

    #[test]
    fn matern_closed_forms() {
        for nu in [0.5, 1.5, 2.5] {
            let k = Kernel::matern(0.3, nu).unwrap();
            assert_eq!(k.eval(&[0.1, 0.4], &[0.1, 0.4]).unwrap(), 1.0);
            let v = k.eval(&[0.0, 0.0], &[0.3, 0.0]).unwrap();
            let expected = match nu {
                n if n == 0.5 => (-1f64).exp(),
                n if n == 1.5 => (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp(),
                _ => (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp(),
            };
            assert_relative_eq!(v, expected, epsilon = 1e-14);
        }
        assert!(Kernel::matern(0.3, 1.0).is_err());
    }

    #[test]
    fn gram_diagonal_and_duplicates() {
        let k = Kernel::squared_exponential(0.2).unwrap();
        let g = gram(&k, &[vec![0.4, 0.1]]).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        let g = gram(&k, &[vec![0.4, 0.1], vec![0.4, 0.1]]).unwrap();
        assert!(g.iter().all(|v| *v == 1.0));
        assert!(gram(&k, &[]).is_err());
    }

    #[test]
    fn gram_matches_pairwise_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Kernel::squared_exponential(0.2).unwrap();
        let pts: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let g = gram(&k, &pts).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g[(i, j)], k.eval(&pts[i], &pts[j]).unwrap());
                assert!((g[(i, j)] - g[(j, i)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn decision_set_rejects_duplicates() {
        assert!(DecisionSet::new(vec![vec![0.1], vec![0.1]]).is_err());
        assert!(DecisionSet::new(vec![vec![0.1], vec![0.1, 0.2]]).is_err());
        assert!(DecisionSet::new(vec![]).is_err());
    }

    #[test]
    fn info_gain_small_cases() {
        let k = Kernel::squared_exponential(0.2).unwrap();
        let set = DecisionSet::new(vec![vec![0.0], vec![0.5]]).unwrap();
        assert_eq!(empirical_info_gain(&k, &set, 0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            empirical_info_gain(&k, &set, 1, 1.0).unwrap(),
            0.5 * 2f64.ln(),
            epsilon = 1e-14
        );
        let est = InfoGainEstimator::new(&k, &set, 1.0).unwrap();
        assert_eq!(est.budget(), 20);
        assert!(matches!(est.estimate(21), Err(Error::InfoGainBudget { .. })));
    }
}
