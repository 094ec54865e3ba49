//! Closed-form diffusion quantities.
//!
//! Time runs over `t = 1..=T`; `alpha_bar(0) = 1`. All Gaussians are
//! isotropic, so a variance is a single scalar.

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{CategorySequence, LatentSequence};
use crate::error::{invalid, GmcdError, Result};
use crate::geometry::PackingResult;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// Indexed by `t`, with entry 0 equal to 1.
    alpha_bars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    #[serde(rename = "T")]
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl From<NoiseSchedule> for ScheduleRepr {
    fn from(s: NoiseSchedule) -> Self {
        Self {
            steps: s.betas.len(),
            alphas: s.alphas,
            alpha_bars: s.alpha_bars[1..].to_vec(),
            betas: s.betas,
        }
    }
}

impl TryFrom<ScheduleRepr> for NoiseSchedule {
    type Error = GmcdError;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        let s = NoiseSchedule::from_betas(r.betas)?;
        if r.steps != s.steps() || r.alphas != s.alphas || r.alpha_bars != s.alpha_bars[1..] {
            return Err(GmcdError::Integrity("schedule tables are inconsistent with betas".into()));
        }
        Ok(s)
    }
}

impl NoiseSchedule {
    /// Requires `0 < beta_1 < ... < beta_T < 1`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return invalid("schedule needs at least one step");
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return invalid("betas must lie in (0, 1)");
        }
        if betas.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("betas must be strictly increasing");
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_bar(t)` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return invalid(format!("t={t} outside [{min}, {}]", self.steps()));
        }
        Ok(())
    }

    /// Weights on `z0`, on `z_t`, and the variance of `q(z_{t-1} | z_t, z0)`.
    /// Defined for every `t >= 1`; at `t = 1` the result is `(1, 0, 0)`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64, f64) {
        coefficients(self.alpha_bar(t - 1), self.alpha(t))
    }
}

fn coefficients(ab_prev: f64, alpha: f64) -> (f64, f64, f64) {
    let beta = 1.0 - alpha;
    let denom = 1.0 - ab_prev * alpha;
    (
        ab_prev.sqrt() * beta / denom,
        alpha.sqrt() * (1.0 - ab_prev) / denom,
        (1.0 - ab_prev) / denom * beta,
    )
}

/// Betas linearly spaced between the bounds, both inclusive.
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return invalid("linear schedule needs T >= 2");
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return invalid("need 0 < beta_start < beta_end < 1");
    }
    let step = (beta_end - beta_start) / (steps - 1) as f64;
    let mut betas: Vec<f64> = (0..steps).map(|i| beta_start + step * i as f64).collect();
    betas[steps - 1] = beta_end;
    NoiseSchedule::from_betas(betas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, variance: f64) -> Self {
        Self { mean, variance }
    }

    /// Log density of the isotropic Gaussian at `x`.
    pub fn log_density(&self, x: ArrayView1<'_, f64>) -> f64 {
        let d = self.mean.len() as f64;
        let sq: f64 = x.iter().zip(&self.mean).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * d * (2.0 * std::f64::consts::PI * self.variance).ln() - sq / (2.0 * self.variance)
    }
}

/// `sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps` for supplied noise.
pub fn forward_sample_with_noise(
    z0: &LatentSequence,
    t: usize,
    sched: &NoiseSchedule,
    eps: &Array2<f64>,
) -> Result<LatentSequence> {
    sched.check_t(t, 1)?;
    if eps.dim() != z0.0.dim() {
        return invalid("noise shape differs from latent shape");
    }
    let ab = sched.alpha_bar(t);
    Ok(LatentSequence(&z0.0 * ab.sqrt() + eps * (1.0 - ab).sqrt()))
}

pub fn forward_sample(z0: &LatentSequence, t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Result<LatentSequence> {
    sched.check_t(t, 1)?;
    let eps = Array2::from_shape_simple_fn(z0.0.dim(), || rng.sample(StandardNormal));
    forward_sample_with_noise(z0, t, sched, &eps)
}

/// One application of `N(sqrt(1 - beta_t) z, beta_t I)`.
pub fn forward_step(z_prev: &LatentSequence, t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Result<LatentSequence> {
    sched.check_t(t, 1)?;
    let beta = sched.beta(t);
    let mut out = &z_prev.0 * (1.0 - beta).sqrt();
    for v in out.iter_mut() {
        *v += beta.sqrt() * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(LatentSequence(out))
}

fn combine(a: f64, x: &[f64], b: f64, y: ArrayView1<'_, f64>) -> Vec<f64> {
    x.iter().zip(y.iter()).map(|(x, y)| a * x + b * y).collect()
}

/// `q(z_{t-1} | z_t, z0)` for one position.
pub fn forward_posterior(
    z0_s: ArrayView1<'_, f64>,
    zt_s: ArrayView1<'_, f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<GaussianParams> {
    sched.check_t(t, 2)?;
    if z0_s.len() != zt_s.len() {
        return invalid("z0 and z_t dimensions differ");
    }
    let (c0, ct, var) = sched.posterior_coefficients(t);
    let z0: Vec<f64> = z0_s.to_vec();
    Ok(GaussianParams::new(combine(c0, &z0, ct, zt_s), var))
}

/// Law of `z_{t-1}` given `z_t` and category `k`, with `z0` marginalized
/// over the encoder Gaussian. Accepts `t = 1`, where it reduces to the
/// encoder law `N(mu_k, sigma^2 I)`.
pub fn category_posterior(
    zt_s: ArrayView1<'_, f64>,
    k: usize,
    t: usize,
    sched: &NoiseSchedule,
    pack: &PackingResult,
) -> Result<GaussianParams> {
    sched.check_t(t, 1)?;
    if k >= pack.num_categories {
        return invalid(format!("category {k} out of range for K={}", pack.num_categories));
    }
    if zt_s.len() != pack.latent_dim {
        return invalid("z_t dimension differs from packing dimension");
    }
    let (c0, ct, var) = sched.posterior_coefficients(t);
    let extra = c0 * pack.sigma;
    Ok(GaussianParams::new(
        combine(c0, &pack.means[k], ct, zt_s),
        var + extra * extra,
    ))
}

/// Closed-form `KL(p || q)` for isotropic Gaussians in `d` dimensions.
pub fn gaussian_kl_isotropic(p: &GaussianParams, q: &GaussianParams, d: usize) -> Result<f64> {
    if p.mean.len() != d || q.mean.len() != d {
        return invalid("gaussian dimensions do not match d");
    }
    if !(p.variance > 0.0) {
        return invalid("KL from a point mass diverges; p.variance must be > 0");
    }
    if !(q.variance > 0.0) {
        return Ok(f64::INFINITY);
    }
    let ratio = p.variance / q.variance;
    let sq: f64 = p.mean.iter().zip(&q.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let kl = 0.5 * d as f64 * (ratio - 1.0 - ratio.ln()) + sq / (2.0 * q.variance);
    Ok(kl.max(0.0))
}

/// `-KL(q(.|z_t, z0) || N(mu_k^{z_t,t}, sigma_t^2 I))` for every category.
pub fn mixture_log_weights(
    zt_s: ArrayView1<'_, f64>,
    z0_s: ArrayView1<'_, f64>,
    t: usize,
    sched: &NoiseSchedule,
    pack: &PackingResult,
) -> Result<Vec<f64>> {
    let target = forward_posterior(z0_s, zt_s, t, sched)?;
    (0..pack.num_categories)
        .map(|k| {
            let comp = category_posterior(zt_s, k, t, sched, pack)?;
            Ok(-gaussian_kl_isotropic(&target, &comp, pack.latent_dim)?)
        })
        .collect()
}

/// Unnormalized weights `w_k = exp(-KL_k)`, each in `(0, 1]`.
pub fn mixture_weights(
    zt_s: ArrayView1<'_, f64>,
    z0_s: ArrayView1<'_, f64>,
    t: usize,
    sched: &NoiseSchedule,
    pack: &PackingResult,
) -> Result<Vec<f64>> {
    Ok(mixture_log_weights(zt_s, z0_s, t, sched, pack)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log density of the factorized mixture denoiser at `z_prev`.
pub fn denoise_density(
    z_prev: &LatentSequence,
    zt: &LatentSequence,
    probs: &Array2<f64>,
    t: usize,
    sched: &NoiseSchedule,
    pack: &PackingResult,
) -> Result<f64> {
    let (len, k_count) = (zt.len(), pack.num_categories);
    if z_prev.0.dim() != zt.0.dim() || probs.dim() != (len, k_count) || zt.dim() != pack.latent_dim {
        return invalid("denoise_density shape mismatch");
    }
    let mut total = 0.0;
    for s in 0..len {
        let mut terms = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let p = probs[[s, k]];
            if p > 0.0 {
                let comp = category_posterior(zt.row(s), k, t, sched, pack)?;
                if !(comp.variance > 0.0) {
                    return invalid("denoiser component has zero variance");
                }
                terms.push(p.ln() + comp.log_density(z_prev.row(s)));
            }
        }
        total += log_sum_exp(terms.into_iter());
    }
    Ok(total)
}

/// Sharpening exponent for augmentation targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Omega {
    Finite(f64),
    Infinite,
}

impl Omega {
    pub fn validate(&self) -> Result<()> {
        match self {
            Omega::Finite(w) if !(*w > 0.0) || !w.is_finite() => invalid("omega must be > 0 or infinite"),
            _ => Ok(()),
        }
    }
}

impl Serialize for Omega {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Omega::Finite(w) => s.serialize_f64(*w),
            Omega::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Omega {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) if w.is_infinite() && w > 0.0 => Ok(Omega::Infinite),
            Raw::Num(w) => Ok(Omega::Finite(w)),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => Ok(Omega::Infinite),
            Raw::Text(t) => t
                .parse::<f64>()
                .map(Omega::Finite)
                .map_err(|_| serde::de::Error::custom(format!("invalid omega {t:?}"))),
        }
    }
}

impl std::str::FromStr for Omega {
    type Err = GmcdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Infinity" => Ok(Omega::Infinite),
            other => other
                .parse::<f64>()
                .map(Omega::Finite)
                .map_err(|_| GmcdError::InvalidArgument(format!("invalid omega {other:?}"))),
        }
    }
}

/// Normalizes `w^omega` given log-weights.
pub fn sharpen(log_weights: &[f64], omega: f64) -> Vec<f64> {
    let mut row: Vec<f64> = log_weights.iter().map(|l| omega * l).collect();
    crate::codec::softmax_in_place(&mut row);
    row
}

/// Soft training target: row `s` proportional to `w_s^omega`. Infinite
/// omega, and `t = 1`, give the one-hot rows of `x`.
pub fn augmentation_dist(
    zt: &LatentSequence,
    z0: &LatentSequence,
    x: &CategorySequence,
    t: usize,
    omega: Omega,
    sched: &NoiseSchedule,
    pack: &PackingResult,
) -> Result<Array2<f64>> {
    omega.validate()?;
    sched.check_t(t, 1)?;
    x.check(pack.num_categories)?;
    if zt.len() != x.len() || z0.len() != x.len() {
        return invalid("augmentation inputs have mismatched lengths");
    }
    let mut out = Array2::zeros((x.len(), pack.num_categories));
    match omega {
        Omega::Finite(w) if t >= 2 => {
            for s in 0..x.len() {
                let logw = mixture_log_weights(zt.row(s), z0.row(s), t, sched, pack)?;
                for (k, v) in sharpen(&logw, w).into_iter().enumerate() {
                    out[[s, k]] = v;
                }
            }
        }
        _ => {
            for (s, &k) in x.as_slice().iter().enumerate() {
                out[[s, k]] = 1.0;
            }
        }
    }
    Ok(out)
}
