//! Simulated world: the global reward function, a population of biased
//! users drawn from `GP(f, v²k)`, noisy local observations and the
//! communication-cost bookkeeping of one phase.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{decision_gram, DecisionSet, Kernel};
use crate::linalg::psd_sqrt;

/// Standard global-optimization test functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Sphere,
    SixHumpCamel,
    Michalewicz,
}

const MICHALEWICZ_M: i32 = 10;

impl Benchmark {
    /// Closed form on the function's native domain.
    pub fn raw(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Sphere => x.iter().map(|v| v * v).sum(),
            Benchmark::SixHumpCamel => {
                let (x1, x2) = (x[0], x[1]);
                (4.0 - 2.1 * x1 * x1 + x1.powi(4) / 3.0) * x1 * x1 + x1 * x2 + (-4.0 + 4.0 * x2 * x2) * x2 * x2
            }
            Benchmark::Michalewicz => -x
                .iter()
                .enumerate()
                .map(|(i, &xi)| {
                    let idx = (i + 1) as f64;
                    xi.sin() * (idx * xi * xi / PI).sin().powi(2 * MICHALEWICZ_M)
                })
                .sum::<f64>(),
        }
    }

    /// Affine map from the unit cube to the native domain
    /// (sphere `[-1,1]^d`, camel `[-3,3]×[-2,2]`, Michalewicz `[0,π]^d`).
    pub fn to_native(self, u: &[f64]) -> Vec<f64> {
        match self {
            Benchmark::Sphere => u.iter().map(|v| 2.0 * v - 1.0).collect(),
            Benchmark::SixHumpCamel => vec![6.0 * u[0] - 3.0, 4.0 * u[1] - 2.0],
            Benchmark::Michalewicz => u.iter().map(|v| PI * v).collect(),
        }
    }

    pub fn check_dim(self, d: usize) -> Result<()> {
        match (self, d) {
            (Benchmark::SixHumpCamel, 2) => Ok(()),
            (Benchmark::SixHumpCamel, _) => Err(Error::invalid("dim", "six_hump_camel is two-dimensional")),
            (_, 0) => Err(Error::invalid("dim", "dimension must be >= 1")),
            _ => Ok(()),
        }
    }
}

/// The population-level reward `f`.
#[derive(Debug, Clone)]
pub enum GlobalFunction {
    /// `f(x) = Σᵢ aᵢ k(x̂ᵢ, x)`.
    SyntheticRkhs {
        centers: Vec<Vec<f64>>,
        coefficients: Vec<f64>,
        kernel: Kernel,
    },
    /// Benchmark evaluated on the unit cube, rescaled so that its minimum
    /// and maximum over the decision set are −1 and +1.
    Benchmark { kind: Benchmark, min: f64, max: f64 },
    /// Values attached to the indexed decision set `[0], [1], …`.
    Tabular { values: Vec<f64> },
}

impl GlobalFunction {
    /// Draws `m = 30d` centers uniformly on `[0,1]^d` and coefficients
    /// uniformly on `[-1, 1]`.
    pub fn make_synthetic<R: Rng + ?Sized>(d: usize, kernel: Kernel, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dim", "dimension must be >= 1"));
        }
        let m = 30 * d;
        let centers: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let coefficients: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Ok(GlobalFunction::SyntheticRkhs {
            centers,
            coefficients,
            kernel,
        })
    }

    /// Benchmark with scaling constants computed over `set`.
    pub fn benchmark(kind: Benchmark, set: &DecisionSet) -> Result<Self> {
        kind.check_dim(set.dim())?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in set.iter() {
            check_unit_cube(x)?;
            let v = kind.raw(&kind.to_native(x));
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok(GlobalFunction::Benchmark { kind, min: lo, max: hi })
    }

    /// Loads `(index, value)` rows, with an optional header line; indices
    /// must cover `0..n` exactly once.
    pub fn tabular_from_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(csv_err)?;
            if row == 0 && record.len() == 2 && record[1].parse::<f64>().is_err() {
                continue;
            }
            if record.len() != 2 {
                return Err(Error::Config(format!("{}: expected `index,value` rows", path.display())));
            }
            let parse_err = |e: String| Error::Config(format!("{}: {e}", path.display()));
            let idx = record[0].parse::<usize>().map_err(|e| parse_err(e.to_string()))?;
            let val = record[1].parse::<f64>().map_err(|e| parse_err(e.to_string()))?;
            rows.push((idx, val));
        }
        let n = rows.len();
        let mut values = vec![f64::NAN; n];
        for (idx, val) in rows {
            if idx >= n || !values[idx].is_nan() {
                return Err(Error::Config(format!(
                    "{}: indices must cover 0..{n} exactly once",
                    path.display()
                )));
            }
            values[idx] = val;
        }
        Ok(GlobalFunction::Tabular { values })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            GlobalFunction::SyntheticRkhs {
                centers,
                coefficients,
                kernel,
            } => {
                let mut sum = 0.0;
                for (c, a) in centers.iter().zip(coefficients) {
                    sum += a * kernel.eval(c, x)?;
                }
                Ok(sum)
            }
            GlobalFunction::Benchmark { kind, min, max } => {
                kind.check_dim(x.len())?;
                check_unit_cube(x)?;
                let raw = kind.raw(&kind.to_native(x));
                if max > min {
                    Ok(2.0 * (raw - min) / (max - min) - 1.0)
                } else {
                    Ok(0.0)
                }
            }
            GlobalFunction::Tabular { values } => {
                if x.len() != 1 || x[0] < 0.0 || x[0].fract() != 0.0 || x[0] >= values.len() as f64 {
                    return Err(Error::NotInDecisionSet);
                }
                Ok(values[x[0] as usize])
            }
        }
    }

    /// The RKHS-norm bound `B` handed to the algorithms: the exact norm for
    /// synthetic functions, 1 for rescaled benchmarks and `max |f|` for
    /// tabular data.
    pub fn rkhs_norm(&self) -> f64 {
        match self {
            GlobalFunction::SyntheticRkhs {
                centers,
                coefficients,
                kernel,
            } => {
                let mut q = 0.0;
                for (ci, ai) in centers.iter().zip(coefficients) {
                    for (cj, aj) in centers.iter().zip(coefficients) {
                        q += ai * aj * kernel.eval_unchecked(ci, cj);
                    }
                }
                q.max(0.0).sqrt()
            }
            GlobalFunction::Benchmark { .. } => 1.0,
            GlobalFunction::Tabular { values } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Values over every point of `set`.
    pub fn values_on(&self, set: &DecisionSet) -> Result<Vec<f64>> {
        set.iter().map(|x| self.eval(x)).collect()
    }
}

fn check_unit_cube(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::NotInDecisionSet)
    }
}

/// One sampled user: a draw of `f_u` restricted to `support` (indices into
/// the decision set).
#[derive(Debug, Clone)]
pub struct Participant {
    id: u64,
    support: Arc<[usize]>,
    values: Vec<f64>,
}

impl Participant {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Local values aligned with [`Self::support`].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, index: usize) -> Option<f64> {
        self.support.iter().position(|&i| i == index).map(|p| self.values[p])
    }
}

/// Infinite population of users whose local functions are fresh draws from
/// `GP(f, v²k)` restricted to the decision set.
#[derive(Debug, Clone)]
pub struct UserPopulation {
    global: Vec<f64>,
    gram: DMatrix<f64>,
    v_sq: f64,
    sigma: f64,
    full_sqrt: Option<DMatrix<f64>>,
    next_id: u64,
}

impl UserPopulation {
    pub fn new(global: &GlobalFunction, set: &DecisionSet, kernel: &Kernel, v_sq: f64, sigma_sq: f64) -> Result<Self> {
        let values = global.values_on(set)?;
        Self::from_values(values, decision_gram(kernel, set)?, v_sq, sigma_sq)
    }

    /// Population over precomputed global values and Gram `K_DD`.
    pub fn from_values(global: Vec<f64>, gram: DMatrix<f64>, v_sq: f64, sigma_sq: f64) -> Result<Self> {
        if gram.nrows() != global.len() || gram.ncols() != global.len() {
            return Err(Error::LengthMismatch {
                expected: global.len(),
                actual: gram.nrows(),
            });
        }
        if !(v_sq >= 0.0 && v_sq.is_finite()) {
            return Err(Error::invalid("v_sq", "bias scale must be nonnegative"));
        }
        if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
            return Err(Error::invalid("sigma_sq", "noise variance must be nonnegative"));
        }
        Ok(UserPopulation {
            global,
            gram,
            v_sq,
            sigma: sigma_sq.sqrt(),
            full_sqrt: None,
            next_id: 0,
        })
    }

    pub fn global_values(&self) -> &[f64] {
        &self.global
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn v_sq(&self) -> f64 {
        self.v_sq
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// Index of the best action (lowest index on ties) and its value `f*`.
    pub fn best(&self) -> (usize, f64) {
        let mut best = 0;
        for (i, v) in self.global.iter().enumerate() {
            if *v > self.global[best] {
                best = i;
            }
        }
        (best, self.global[best])
    }

    /// `n` participants with local values over the whole decision set.
    pub fn sample_participants<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<Vec<Participant>> {
        if n == 0 {
            return Err(Error::invalid("n", "need at least one participant"));
        }
        if self.full_sqrt.is_none() {
            self.full_sqrt = Some(psd_sqrt(&(&self.gram * self.v_sq))?);
        }
        let support: Arc<[usize]> = (0..self.len()).collect();
        let sqrt = self.full_sqrt.take().expect("just computed");
        let out = self.draw(&support, &sqrt, n, rng);
        self.full_sqrt = Some(sqrt);
        Ok(out)
    }

    /// `n` participants with local values on `support` only; the marginal of
    /// a full draw on those indices.
    pub fn sample_participants_on<R: Rng + ?Sized>(
        &mut self,
        support: &[usize],
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Participant>> {
        if n == 0 {
            return Err(Error::invalid("n", "need at least one participant"));
        }
        if let Some(&bad) = support.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid("support", format!("index {bad} outside the decision set")));
        }
        let s = support.len();
        let sub = DMatrix::from_fn(s, s, |i, j| self.v_sq * self.gram[(support[i], support[j])]);
        let sqrt = psd_sqrt(&sub)?;
        let support: Arc<[usize]> = support.into();
        Ok(self.draw(&support, &sqrt, n, rng))
    }

    fn draw<R: Rng + ?Sized>(
        &mut self,
        support: &Arc<[usize]>,
        sqrt: &DMatrix<f64>,
        n: usize,
        rng: &mut R,
    ) -> Vec<Participant> {
        let s = support.len();
        let mut z = vec![0.0; s];
        (0..n)
            .map(|_| {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                let values = (0..s)
                    .map(|i| {
                        let mut v = self.global[support[i]];
                        for (j, zj) in z.iter().enumerate().take(i + 1) {
                            v += sqrt[(i, j)] * zj;
                        }
                        v
                    })
                    .collect();
                let id = self.next_id;
                self.next_id += 1;
                Participant {
                    id,
                    support: Arc::clone(support),
                    values,
                }
            })
            .collect()
    }

    /// One noisy local reward `f_u(x) + η`, `η ~ N(0, σ²)`.
    pub fn observe<R: Rng + ?Sized>(&self, participant: &Participant, index: usize, rng: &mut R) -> Result<f64> {
        let base = participant.value_at(index).ok_or(Error::NotInDecisionSet)?;
        Ok(base + self.sigma * rng.sample::<f64, _>(StandardNormal))
    }
}

/// Feedback of one phase: per-participant vectors aligned with the
/// schedule, plus the number of scalars sent.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFeedback {
    pub per_participant: Vec<Vec<f64>>,
    pub cost: u64,
}

impl PhaseFeedback {
    pub fn dim(&self) -> usize {
        self.per_participant.first().map_or(0, Vec::len)
    }

    /// Coordinate-wise average over participants.
    pub fn average(&self) -> Vec<f64> {
        let n = self.per_participant.len().max(1) as f64;
        let mut out = vec![0.0; self.dim()];
        for v in &self.per_participant {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

fn check_schedule(schedule: &[(usize, u64)]) -> Result<()> {
    for (k, &(a, c)) in schedule.iter().enumerate() {
        if c == 0 {
            return Err(Error::invalid("schedule", "counts must be >= 1"));
        }
        if schedule[..k].iter().any(|&(b, _)| b == a) {
            return Err(Error::invalid("schedule", "scheduled actions must be distinct"));
        }
    }
    Ok(())
}

/// Local average rewards `y_l^u(a)` for every participant and scheduled
/// action.
///
/// The average of `count` i.i.d. `N(f_u(a), σ²)` observations is drawn
/// directly as `f_u(a) + (σ/√count)·z`, which has exactly the same
/// distribution as averaging `count` calls to [`UserPopulation::observe`].
pub fn phase_feedback<R: Rng + ?Sized>(
    population: &UserPopulation,
    participants: &[Participant],
    schedule: &[(usize, u64)],
    rng: &mut R,
) -> Result<PhaseFeedback> {
    check_schedule(schedule)?;
    let sigma = population.sigma();
    let mut per_participant = Vec::with_capacity(participants.len());
    for p in participants {
        let mut v = Vec::with_capacity(schedule.len());
        for &(a, count) in schedule {
            let base = p.value_at(a).ok_or(Error::NotInDecisionSet)?;
            let z: f64 = rng.sample(StandardNormal);
            v.push(base + sigma / (count as f64).sqrt() * z);
        }
        per_participant.push(v);
    }
    Ok(PhaseFeedback {
        per_participant,
        cost: (participants.len() * schedule.len()) as u64,
    })
}

/// Same as [`phase_feedback`] but literally averages `count` observations.
pub fn phase_feedback_by_observation<R: Rng + ?Sized>(
    population: &UserPopulation,
    participants: &[Participant],
    schedule: &[(usize, u64)],
    rng: &mut R,
) -> Result<PhaseFeedback> {
    check_schedule(schedule)?;
    let mut per_participant = Vec::with_capacity(participants.len());
    for p in participants {
        let mut v = Vec::with_capacity(schedule.len());
        for &(a, count) in schedule {
            let mut sum = 0.0;
            for _ in 0..count {
                sum += population.observe(p, a, rng)?;
            }
            v.push(sum / count as f64);
        }
        per_participant.push(v);
    }
    Ok(PhaseFeedback {
        per_participant,
        cost: (participants.len() * schedule.len()) as u64,
    })
}

/// One simulated world: decision set, kernel, user population and the
/// constants `κ²` and `B` derived from them.
#[derive(Debug, Clone)]
pub struct Instance {
    pub set: DecisionSet,
    pub kernel: Kernel,
    pub population: UserPopulation,
    pub kappa_sq: f64,
    pub rkhs_norm: f64,
}

impl Instance {
    pub fn new(set: DecisionSet, kernel: Kernel, global: &GlobalFunction, v_sq: f64, sigma_sq: f64) -> Result<Self> {
        set.check_kernel(&kernel)?;
        let population = UserPopulation::new(global, &set, &kernel, v_sq, sigma_sq)?;
        Ok(Instance {
            kappa_sq: kernel.kappa_sq(&set),
            rkhs_norm: global.rkhs_norm(),
            set,
            kernel,
            population,
        })
    }

    /// Instance over given global values instead of a function.
    pub fn from_values(set: DecisionSet, kernel: Kernel, values: Vec<f64>, v_sq: f64, sigma_sq: f64) -> Result<Self> {
        set.check_kernel(&kernel)?;
        if values.len() != set.len() {
            return Err(Error::LengthMismatch {
                expected: set.len(),
                actual: values.len(),
            });
        }
        let rkhs_norm = values.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let population = UserPopulation::from_values(values, decision_gram(&kernel, &set)?, v_sq, sigma_sq)?;
        Ok(Instance {
            kappa_sq: kernel.kappa_sq(&set),
            rkhs_norm,
            set,
            kernel,
            population,
        })
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        self.population.global_values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn synthetic_center_count_and_determinism() {
        let k = Kernel::squared_exponential(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = GlobalFunction::make_synthetic(3, k.clone(), &mut rng).unwrap();
        let GlobalFunction::SyntheticRkhs { centers, .. } = &f else {
            panic!()
        };
        assert_eq!(centers.len(), 90);
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let g = GlobalFunction::make_synthetic(3, k, &mut rng2).unwrap();
        assert_eq!(f.eval(&[0.2, 0.3, 0.4]).unwrap(), g.eval(&[0.2, 0.3, 0.4]).unwrap());
        assert!(f.rkhs_norm() > 0.0);
    }

    #[test]
    fn zero_coefficients_give_zero_function() {
        let k = Kernel::squared_exponential(0.2).unwrap();
        let f = GlobalFunction::SyntheticRkhs {
            centers: vec![vec![0.1], vec![0.7]],
            coefficients: vec![0.0, 0.0],
            kernel: k,
        };
        assert_eq!(f.eval(&[0.4]).unwrap(), 0.0);
        assert_eq!(f.rkhs_norm(), 0.0);
    }

    #[test]
    fn single_center_value() {
        let f = GlobalFunction::SyntheticRkhs {
            centers: vec![vec![0.3, 0.6]],
            coefficients: vec![1.0],
            kernel: Kernel::squared_exponential(0.2).unwrap(),
        };
        assert_eq!(f.eval(&[0.3, 0.6]).unwrap(), 1.0);
        assert_relative_eq!(f.rkhs_norm(), 1.0);
    }

    #[test]
    fn sphere_minimum_and_scaling() {
        assert_eq!(Benchmark::Sphere.raw(&[0.0, 0.0, 0.0]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [Benchmark::Sphere, Benchmark::SixHumpCamel, Benchmark::Michalewicz] {
            let set = DecisionSet::uniform(50, 2, &mut rng).unwrap();
            let f = GlobalFunction::benchmark(kind, &set).unwrap();
            let vals = f.values_on(&set).unwrap();
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_relative_eq!(hi, 1.0, epsilon = 1e-12);
            assert_relative_eq!(lo, -1.0, epsilon = 1e-12);
            assert!(matches!(f.eval(&[1.5, 0.0]), Err(Error::NotInDecisionSet)));
        }
    }

    #[test]
    fn camel_needs_two_dims() {
        let set = DecisionSet::new(vec![vec![0.1, 0.2, 0.3]]).unwrap();
        assert!(GlobalFunction::benchmark(Benchmark::SixHumpCamel, &set).is_err());
    }

    #[test]
    fn degenerate_bias_reproduces_global() {
        let k = Kernel::squared_exponential(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = DecisionSet::uniform(10, 2, &mut rng).unwrap();
        let f = GlobalFunction::make_synthetic(2, k.clone(), &mut rng).unwrap();
        let mut pop = UserPopulation::new(&f, &set, &k, 0.0, 0.0).unwrap();
        let ps = pop.sample_participants(5, &mut rng).unwrap();
        for p in &ps {
            assert_eq!(p.values(), pop.global_values());
            assert_eq!(pop.observe(p, 3, &mut rng).unwrap(), pop.global_values()[3]);
        }
        let ids: Vec<u64> = ps.iter().map(Participant::id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn exact_feedback_and_cost() {
        let k = Kernel::squared_exponential(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = DecisionSet::uniform(8, 1, &mut rng).unwrap();
        let f = GlobalFunction::make_synthetic(1, k.clone(), &mut rng).unwrap();
        let mut pop = UserPopulation::new(&f, &set, &k, 0.0, 0.0).unwrap();
        let schedule = [(1usize, 3u64), (4, 1), (6, 7)];
        let ps = pop.sample_participants_on(&[1, 4, 6], 4, &mut rng).unwrap();
        let fb = phase_feedback(&pop, &ps, &schedule, &mut rng).unwrap();
        assert_eq!(fb.cost, 12);
        for v in &fb.per_participant {
            for (&(a, _), y) in schedule.iter().zip(v) {
                assert_eq!(*y, pop.global_values()[a]);
            }
        }
        assert!(phase_feedback(&pop, &ps, &[(1, 0)], &mut rng).is_err());
        assert!(phase_feedback(&pop, &ps, &[(1, 1), (1, 2)], &mut rng).is_err());
    }
}
