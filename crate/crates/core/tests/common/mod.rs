//! Reference computations shared by the integration tests. They use dense
//! inverses and determinants directly instead of the library's factorized
//! code paths.
#![allow(dead_code)]

use kband::kernels::{DecisionSet, Kernel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn kernel_matrix(kernel: &Kernel, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel.eval(&a[i], &b[j]).unwrap())
}

/// Textbook posterior after the rounds `history` with observations `y`.
pub fn standard_mean_var(kernel: &Kernel, lambda: f64, history: &[Vec<f64>], y: &[f64], x: &[f64]) -> (f64, f64) {
    let prior = kernel.eval(x, x).unwrap();
    if history.is_empty() {
        return (0.0, prior);
    }
    let t = history.len();
    let m = kernel_matrix(kernel, history, history) + DMatrix::identity(t, t) * lambda;
    let inv = m.try_inverse().expect("regularized Gram is invertible");
    let kx = kernel_matrix(kernel, &[x.to_vec()], history).transpose();
    let mean = (kx.transpose() * &inv * DVector::from_column_slice(y))[(0, 0)];
    let var = prior - (kx.transpose() * &inv * &kx)[(0, 0)];
    (mean, var)
}

/// `½ log det(I + λ⁻¹ K)` of an explicit point list.
pub fn half_log_det(kernel: &Kernel, lambda: f64, xs: &[Vec<f64>]) -> f64 {
    let t = xs.len();
    let m = DMatrix::identity(t, t) + kernel_matrix(kernel, xs, xs) / lambda;
    0.5 * m.determinant().ln()
}

/// Every multiset of size `t` over `0..n`, as counts.
pub fn multisets(n: usize, t: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            go(n, left - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(n, t, &mut Vec::new(), &mut out);
    out
}

/// Maximum information gain by enumeration of all size-`t` multisets.
pub fn exhaustive_gamma(kernel: &Kernel, set: &DecisionSet, t: usize, lambda: f64) -> f64 {
    if t == 0 {
        return 0.0;
    }
    multisets(set.len(), t)
        .into_iter()
        .map(|counts| {
            let xs: Vec<Vec<f64>> = counts
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| std::iter::repeat(set.point(i).to_vec()).take(c))
                .collect();
            half_log_det(kernel, lambda, &xs)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn random_set<R: Rng>(rng: &mut R, n: usize, d: usize) -> DecisionSet {
    loop {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        if let Ok(s) = DecisionSet::new(pts) {
            return s;
        }
    }
}

pub fn random_kernel<R: Rng>(rng: &mut R) -> Kernel {
    if rng.gen_bool(0.5) {
        Kernel::squared_exponential(rng.gen_range(0.1..1.0)).unwrap()
    } else {
        Kernel::Linear
    }
}

/// `(κ², σ², H, |U|, ε, δ, σ_nc)` evaluated by a separate script with an
/// even split of `δ`.
pub const SIGMA_NC_GRID: [(f64, f64, usize, usize, f64, f64, f64); 20] = [
    (1.039, 0.1508, 167, 396, 0.5, 1e-08, 4.420654383168375),
    (1.16, 0.058, 130, 1759, 0.5, 1e-08, 0.8839403579436138),
    (1.358, 0.0699, 24, 4515, 10.0, 1e-08, 0.007731406573072916),
    (2.498, 0.1238, 58, 4776, 0.5, 0.01, 0.10881172408379619),
    (0.244, 0.2211, 143, 1091, 5.0, 0.01, 0.03288599038690175),
    (0.518, 0.1178, 79, 4590, 30.0, 1e-06, 0.0024718499262151687),
    (0.399, 0.5712, 49, 3051, 0.5, 1e-08, 0.2736647248224506),
    (1.737, 0.619, 128, 4356, 10.0, 0.0001, 0.01410352663125145),
    (1.45, 0.9234, 93, 2456, 1.0, 1e-06, 0.291731625832637),
    (2.127, 0.2441, 148, 2460, 15.0, 0.01, 0.011184694390636797),
    (2.638, 0.7294, 74, 4989, 0.5, 1e-08, 0.3864798898665119),
    (1.585, 0.165, 88, 1246, 10.0, 0.01, 0.0214172049455934),
    (0.214, 0.6682, 196, 4572, 15.0, 0.0001, 0.006876144725944276),
    (1.086, 0.3502, 128, 4751, 30.0, 0.01, 0.0020819140381529784),
    (0.299, 0.0936, 70, 3884, 20.0, 1e-08, 0.004116812608623981),
    (0.276, 0.7015, 166, 4735, 20.0, 0.01, 0.0029789516818275654),
    (0.925, 0.3858, 172, 2843, 0.5, 0.01, 0.23430409216009518),
    (1.131, 0.6109, 127, 483, 1.0, 0.0001, 1.0891282759435386),
    (0.475, 0.2476, 101, 4068, 0.5, 1e-06, 0.20297837633504376),
    (1.403, 0.5494, 36, 3527, 30.0, 0.0001, 0.0026855107333629024),
];

