//! Privatizers for the per-phase feedback: central and local Gaussian
//! mechanisms and the shuffle-model vector summation protocol.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::environment::PhaseFeedback;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyModel {
    #[default]
    None,
    Central,
    Local,
    Shuffle,
}

/// `(ε, δ₁, δ₂)` with `δ = δ₁ + δ₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl PrivacyBudget {
    /// Splits `δ` evenly unless both halves are given explicitly.
    pub fn new(epsilon: f64, delta: f64, delta1: Option<f64>, delta2: Option<f64>) -> Result<Self> {
        if !(epsilon > 0.0) || epsilon.is_nan() {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        let (d1, d2) = match (delta1, delta2) {
            (None, None) => (delta / 2.0, delta / 2.0),
            (Some(d1), None) => (d1, delta - d1),
            (None, Some(d2)) => (delta - d2, d2),
            (Some(d1), Some(d2)) => {
                if ((d1 + d2) - delta).abs() > 1e-12 * delta.max(1e-300) {
                    return Err(Error::invalid("delta1", "delta1 + delta2 must equal delta"));
                }
                (d1, d2)
            }
        };
        if !(d1 > 0.0 && d2 > 0.0) {
            return Err(Error::invalid("delta1", "delta1 and delta2 must be positive"));
        }
        Ok(PrivacyBudget {
            epsilon,
            delta1: d1,
            delta2: d2,
        })
    }
}

/// How the aggregated feedback of a phase is protected.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Privatizer {
    #[default]
    None,
    Central(PrivacyBudget),
    Local(PrivacyBudget),
    Shuffle(PrivacyBudget),
}

impl Privatizer {
    pub fn from_model(model: PrivacyModel, budget: Option<PrivacyBudget>) -> Result<Self> {
        let need = || budget.ok_or_else(|| Error::Config("privacy model needs epsilon and delta".into()));
        Ok(match model {
            PrivacyModel::None => Privatizer::None,
            PrivacyModel::Central => Privatizer::Central(need()?),
            PrivacyModel::Local => Privatizer::Local(need()?),
            PrivacyModel::Shuffle => Privatizer::Shuffle(need()?),
        })
    }

    pub fn model(&self) -> PrivacyModel {
        match self {
            Privatizer::None => PrivacyModel::None,
            Privatizer::Central(_) => PrivacyModel::Central,
            Privatizer::Local(_) => PrivacyModel::Local,
            Privatizer::Shuffle(_) => PrivacyModel::Shuffle,
        }
    }

    /// Protects one phase of feedback and returns the (noisy) aggregate
    /// together with the width contribution `σ_n`.
    ///
    /// `rng` drives the noise; `shuffler` only permutes shuffle messages.
    pub fn apply<R: Rng + ?Sized, S: Rng + ?Sized>(
        &self,
        feedback: &PhaseFeedback,
        ctx: &PrivacyContext,
        rng: &mut R,
        shuffler: &mut S,
    ) -> Result<Privatized> {
        let users = feedback.per_participant.len();
        let h = feedback.dim();
        if users == 0 || h == 0 {
            return Err(Error::invalid("feedback", "empty phase feedback"));
        }
        let two_c2_gamma = 2.0 * ctx.c * ctx.c * ctx.gamma_t;
        match self {
            Privatizer::None => Ok(Privatized {
                ybar: feedback.average(),
                sigma_n: 0.0,
                clipped: 0,
            }),
            Privatizer::Central(b) => {
                let sigma_nc = central_noise_scale(ctx.kappa_sq, ctx.sigma_sq, h, users, b)?;
                let mut ybar = feedback.average();
                add_gaussian(&mut ybar, sigma_nc, rng)?;
                Ok(Privatized {
                    ybar,
                    sigma_n: sigma_nc * two_c2_gamma.sqrt(),
                    clipped: 0,
                })
            }
            Privatizer::Local(b) => {
                let sigma_nl = local_noise_scale(ctx.kappa_sq, ctx.sigma_sq, h, b)?;
                let mut ybar = vec![0.0; h];
                let mut y = vec![0.0; h];
                for v in &feedback.per_participant {
                    y.copy_from_slice(v);
                    add_gaussian(&mut y, sigma_nl, rng)?;
                    for (o, x) in ybar.iter_mut().zip(&y) {
                        *o += x;
                    }
                }
                ybar.iter_mut().for_each(|o| *o /= users as f64);
                Ok(Privatized {
                    ybar,
                    sigma_n: (two_c2_gamma * sigma_nl * sigma_nl / users as f64).sqrt(),
                    clipped: 0,
                })
            }
            Privatizer::Shuffle(b) => {
                let params = ShuffleParams::new(h, users, b.epsilon, b.delta2)?;
                let delta = shuffle_clip_bound(ctx.rkhs_norm, ctx.kappa_sq, ctx.sigma_sq, h, b.delta1)?;
                let out = shuffle_roundtrip(&feedback.per_participant, delta, &params, rng, shuffler)?;
                let sigma_ns = params.worst_case_variance(delta).sqrt();
                Ok(Privatized {
                    ybar: out.average,
                    sigma_n: sigma_ns * two_c2_gamma.sqrt(),
                    clipped: out.clipped,
                })
            }
        }
    }
}

/// Problem constants the privatizers need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyContext {
    pub kappa_sq: f64,
    pub sigma_sq: f64,
    pub rkhs_norm: f64,
    pub c: f64,
    pub gamma_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Privatized {
    pub ybar: Vec<f64>,
    pub sigma_n: f64,
    /// Number of user vectors clipped to the shuffle bound.
    pub clipped: usize,
}

/// `2·sqrt(2(κ²+σ²)·H·ln(2H/δ₁)·ln(1.25/δ₂)) / ε`, the per-user Gaussian
/// scale that makes an `H`-dimensional feedback vector `(ε, δ)`-private.
pub fn local_noise_scale(kappa_sq: f64, sigma_sq: f64, h: usize, budget: &PrivacyBudget) -> Result<f64> {
    if h == 0 {
        return Err(Error::invalid("h", "feedback dimension must be >= 1"));
    }
    if !(budget.delta1 > 0.0 && budget.delta2 > 0.0) {
        return Err(Error::invalid("delta1", "delta1 and delta2 must be positive"));
    }
    let h = h as f64;
    let inner = 2.0 * (kappa_sq + sigma_sq) * h * (2.0 * h / budget.delta1).ln() * (1.25 / budget.delta2).ln();
    Ok(2.0 * inner.max(0.0).sqrt() / budget.epsilon)
}

/// Central scale `σ_nc = σ_nl / |U|`: the aggregator adds noise once to the
/// average of `users` vectors.
pub fn central_noise_scale(
    kappa_sq: f64,
    sigma_sq: f64,
    h: usize,
    users: usize,
    budget: &PrivacyBudget,
) -> Result<f64> {
    if users == 0 {
        return Err(Error::invalid("users", "need at least one participant"));
    }
    Ok(local_noise_scale(kappa_sq, sigma_sq, h, budget)? / users as f64)
}

fn add_gaussian<R: Rng + ?Sized>(v: &mut [f64], scale: f64, rng: &mut R) -> Result<()> {
    if scale == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, scale).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    for x in v.iter_mut() {
        *x += normal.sample(rng);
    }
    Ok(())
}

/// Adds i.i.d. `N(0, σ_nc²)` to an aggregate in place.
pub fn central_privatize<R: Rng + ?Sized>(ybar: &mut [f64], sigma_nc: f64, rng: &mut R) -> Result<()> {
    add_gaussian(ybar, sigma_nc, rng)
}

/// Adds i.i.d. `N(0, σ_nl²)` to one user's vector in place.
pub fn local_privatize<R: Rng + ?Sized>(y: &mut [f64], sigma_nl: f64, rng: &mut R) -> Result<()> {
    add_gaussian(y, sigma_nl, rng)
}

/// Parameters of the shuffle protocol for `s`-dimensional vectors from
/// `users` participants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuffleParams {
    pub eps_hat: f64,
    pub g: u64,
    pub b: u64,
    pub p: f64,
    pub s: usize,
    pub users: usize,
}

impl ShuffleParams {
    /// `ε̂ = ε / (18 sqrt(ln(2/δ₂)))`,
    /// `g = max{ε̂√n / (6 sqrt(5 ln(4s/δ₂))), √s, 10}` rounded up to an integer,
    /// `b = ⌈180 g² ln(4s/δ₂) / (ε̂² n)⌉`, `p = 90 g² ln(4s/δ₂) / (b ε̂² n)`.
    pub fn new(s: usize, users: usize, epsilon: f64, delta2: f64) -> Result<Self> {
        if s == 0 || users == 0 {
            return Err(Error::invalid("s", "dimension and user count must be >= 1"));
        }
        if !(epsilon > 0.0) || !(delta2 > 0.0 && delta2 < 1.0) {
            return Err(Error::invalid("epsilon", "need epsilon > 0 and delta2 in (0, 1)"));
        }
        let n = users as f64;
        let log_term = (4.0 * s as f64 / delta2).ln();
        let eps_hat = epsilon / (18.0 * (2.0 / delta2).ln().sqrt());
        let g_real = (eps_hat * n.sqrt() / (6.0 * (5.0 * log_term).sqrt()))
            .max((s as f64).sqrt())
            .max(10.0);
        let g = g_real.ceil() as u64;
        let g2 = (g as f64) * (g as f64);
        let b = (180.0 * g2 * log_term / (eps_hat * eps_hat * n)).ceil().max(1.0) as u64;
        let p = 90.0 * g2 * log_term / (b as f64 * eps_hat * eps_hat * n);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("p", format!("bit probability {p} outside [0, 1]")));
        }
        Ok(ShuffleParams {
            eps_hat,
            g,
            b,
            p,
            s,
            users,
        })
    }

    /// Scale `2Δ / (g |U|)` that maps bit counts back to the data range.
    pub fn scale(&self, delta: f64) -> f64 {
        2.0 * delta / (self.g as f64 * self.users as f64)
    }

    /// Variance of one coordinate of the analyzer output around the true
    /// average, given the summed rounding variance `Σ_u r_u(1 − r_u)` of the
    /// randomized-rounding step.
    pub fn coordinate_variance(&self, delta: f64, rounding_var_sum: f64) -> f64 {
        let binom = self.users as f64 * self.b as f64 * self.p * (1.0 - self.p);
        self.scale(delta).powi(2) * (rounding_var_sum + binom)
    }

    /// [`Self::coordinate_variance`] with every user at the worst-case
    /// rounding variance 1/4; this is the `σ_ns²` fed to the width.
    pub fn worst_case_variance(&self, delta: f64) -> f64 {
        self.coordinate_variance(delta, 0.25 * self.users as f64)
    }
}

/// Clip bound `Δ = Bκ√H + sqrt(2(κ²+σ²) H ln(2H/δ₁))` on a user's feedback
/// vector norm.
pub fn shuffle_clip_bound(rkhs_norm: f64, kappa_sq: f64, sigma_sq: f64, h: usize, delta1: f64) -> Result<f64> {
    if h == 0 || !(delta1 > 0.0) {
        return Err(Error::invalid("delta1", "need h >= 1 and delta1 > 0"));
    }
    let hf = h as f64;
    let d = rkhs_norm * kappa_sq.sqrt() * hf.sqrt() + (2.0 * (kappa_sq + sigma_sq) * hf * (2.0 * hf / delta1).ln()).sqrt();
    if d > 0.0 && d.is_finite() {
        Ok(d)
    } else {
        Err(Error::invalid("delta", "clip bound must be positive"))
    }
}

/// Fractional part `r` of `(y + Δ) g / (2Δ)` for one coordinate; the
/// randomized rounding of that coordinate has variance `r(1 − r)`.
pub fn rounding_fraction(y: f64, delta: f64, g: u64) -> f64 {
    let w = (y + delta) * g as f64 / (2.0 * delta);
    w - w.floor()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleOutcome {
    /// Analyzer estimate of the average vector.
    pub average: Vec<f64>,
    /// Users whose vector was scaled down to norm `Δ`.
    pub clipped: usize,
    /// Bits received by the analyzer for each coordinate.
    pub bits_per_coordinate: Vec<u64>,
    /// One-bits received for each coordinate.
    pub ones_per_coordinate: Vec<u64>,
}

/// Above this many bits per coordinate the shuffled message is not
/// materialized; the analyzer only needs the one-count, which a
/// permutation preserves.
pub const MATERIALIZE_LIMIT: u64 = 1 << 22;

/// Randomizer, shuffler and analyzer of the shuffle protocol. `rng` drives
/// the randomizer, `shuffler` the permutation.
pub fn shuffle_roundtrip<R: Rng + ?Sized, S: Rng + ?Sized>(
    vectors: &[Vec<f64>],
    delta: f64,
    params: &ShuffleParams,
    rng: &mut R,
    shuffler: &mut S,
) -> Result<ShuffleOutcome> {
    let users = vectors.len();
    if users != params.users {
        return Err(Error::LengthMismatch {
            expected: params.users,
            actual: users,
        });
    }
    let s = params.s;
    if let Some(v) = vectors.iter().find(|v| v.len() != s) {
        return Err(Error::LengthMismatch {
            expected: s,
            actual: v.len(),
        });
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shuffle input"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", "clip bound must be positive"));
    }
    let g = params.g;
    let b = params.b;
    let binomial = Binomial::new(b, params.p).map_err(|e| Error::invalid("p", e.to_string()))?;

    // randomizer: one (g + b)-bit message per user and coordinate
    let mut clipped = 0;
    let mut ones = vec![vec![0u64; s]; users];
    for (u, y) in vectors.iter().enumerate() {
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let factor = if norm > delta {
            clipped += 1;
            delta / norm
        } else {
            1.0
        };
        for j in 0..s {
            let w = (y[j] * factor + delta).clamp(0.0, 2.0 * delta);
            let scaled = w * g as f64 / (2.0 * delta);
            let floor = scaled.floor().min(g as f64);
            let gamma1 = u64::from(rng.gen::<f64>() < scaled - floor);
            let gamma2 = binomial.sample(rng);
            ones[u][j] = (floor as u64 + gamma1).min(g) + gamma2;
        }
    }

    // shuffler and analyzer
    let total_bits = (g + b) * users as u64;
    let mut average = Vec::with_capacity(s);
    let mut ones_per_coordinate = Vec::with_capacity(s);
    for j in 0..s {
        let count: u64 = if total_bits <= MATERIALIZE_LIMIT {
            let mut bits: Vec<u8> = Vec::with_capacity(total_bits as usize);
            for row in &ones {
                let k = row[j] as usize;
                bits.extend(std::iter::repeat(1u8).take(k));
                bits.extend(std::iter::repeat(0u8).take((g + b) as usize - k));
            }
            bits.shuffle(shuffler);
            bits.iter().map(|&x| u64::from(x)).sum()
        } else {
            ones.iter().map(|row| row[j]).sum()
        };
        let centred = count as f64 - b as f64 * users as f64 * params.p;
        average.push(params.scale(delta) * centred - delta);
        ones_per_coordinate.push(count);
    }
    Ok(ShuffleOutcome {
        average,
        clipped,
        bits_per_coordinate: vec![total_bits; s],
        ones_per_coordinate,
    })
}
