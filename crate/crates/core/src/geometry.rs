//! Placement of category means on the unit hypersphere.
//!
//! Means are spread by simulated annealing over single-point perturbations,
//! and the encoder standard deviation is derived from the smallest squared
//! pairwise distance of the result.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{seeded, Rng};

/// Quantity the annealer maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PackingObjective {
    /// Sum of pairwise Euclidean distances. Uniquely maximized by the
    /// regular simplex whenever `K <= d + 1`.
    #[default]
    DistanceSum,
    /// Sum of pairwise squared distances, see [`packing_energy`]. On the unit
    /// sphere this equals `K^2 - |sum of means|^2`, so it only pins the
    /// centroid at the origin.
    SquaredDistanceSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackingConfig {
    pub num_categories: usize,
    pub latent_dim: usize,
    pub initial_temperature: f64,
    pub cooling_factor: f64,
    pub steps_per_temperature: usize,
    pub convergence_delta: f64,
    pub min_steps: usize,
    /// Hard cap on annealing moves.
    pub max_steps: usize,
    pub objective: PackingObjective,
    /// Replaces the derived encoder standard deviation when set.
    pub sigma_override: Option<f64>,
    pub rng_seed: u64,
}

impl Default for PackingConfig {
    fn default() -> Self {
        Self {
            num_categories: 2,
            latent_dim: 2,
            initial_temperature: 10.0,
            cooling_factor: 0.9,
            steps_per_temperature: 100,
            convergence_delta: 1e-3,
            min_steps: 500,
            max_steps: 1_000_000,
            objective: PackingObjective::default(),
            sigma_override: None,
            rng_seed: 0,
        }
    }
}

impl PackingConfig {
    pub fn new(num_categories: usize, latent_dim: usize, rng_seed: u64) -> Self {
        Self {
            num_categories,
            latent_dim,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return invalid(format!("K must be >= 2, got {}", self.num_categories));
        }
        if self.latent_dim < 1 {
            return invalid("latent dimension must be >= 1");
        }
        if !(self.initial_temperature > 0.0) {
            return invalid("initial temperature must be positive");
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return invalid("cooling factor must lie in (0, 1)");
        }
        if self.steps_per_temperature == 0 || self.min_steps == 0 {
            return invalid("step counts must be positive");
        }
        if !(self.convergence_delta > 0.0) {
            return invalid("convergence delta must be positive");
        }
        if self.max_steps < self.min_steps {
            return invalid("max_steps must be >= min_steps");
        }
        if let Some(s) = self.sigma_override {
            if !(s >= 0.0) || !s.is_finite() {
                return invalid("sigma override must be finite and >= 0");
            }
        }
        Ok(())
    }
}

/// Category means on the unit sphere plus the derived encoder deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingResult {
    #[serde(rename = "K")]
    pub num_categories: usize,
    #[serde(rename = "d")]
    pub latent_dim: usize,
    pub means: Vec<Vec<f64>>,
    pub min_pair_sq_dist: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl PackingResult {
    /// Builds a packing from explicit means, deriving `sigma` with
    /// [`encoder_sigma`]. Means need not be unit norm.
    pub fn from_means(means: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if means.len() < 2 {
            return invalid("need at least two means");
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return invalid("means must share a positive dimension");
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("means must be finite");
        }
        let min_pair_sq_dist = min_pair_sq_dist(&means);
        let sigma = encoder_sigma(min_pair_sq_dist, means.len(), d)?;
        Ok(Self {
            num_categories: means.len(),
            latent_dim: d,
            means,
            min_pair_sq_dist,
            sigma,
            seed,
        })
    }

    /// Same packing with a different encoder deviation (may be 0).
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return invalid("sigma must be finite and >= 0");
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 || self.means.len() != self.num_categories {
            return invalid("packing must hold K >= 2 means");
        }
        if self.means.iter().any(|m| m.len() != self.latent_dim) {
            return invalid("packing means do not match its dimension");
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return invalid("packing sigma must be finite and >= 0");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Squared distances for every unordered pair `i < j`, row-major by `i`.
pub fn pairwise_sq_distances(means: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(means.len() * means.len().saturating_sub(1) / 2);
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            out.push(sq_dist(&means[i], &means[j]));
        }
    }
    out
}

pub fn min_pair_sq_dist(means: &[Vec<f64>]) -> f64 {
    pairwise_sq_distances(means)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Sum over unordered pairs of squared Euclidean distances.
pub fn packing_energy(means: &[Vec<f64>]) -> Result<f64> {
    if means.len() < 2 {
        return invalid("packing energy needs at least two means");
    }
    if means.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("means must be finite");
    }
    Ok(pairwise_sq_distances(means).into_iter().sum())
}

fn objective_value(objective: PackingObjective, means: &[Vec<f64>]) -> f64 {
    let sq = pairwise_sq_distances(means).into_iter();
    match objective {
        PackingObjective::DistanceSum => sq.map(f64::sqrt).sum(),
        PackingObjective::SquaredDistanceSum => sq.sum(),
    }
}

/// Change in the objective when mean `k` moves from `old` to `new`.
fn objective_delta(
    objective: PackingObjective,
    means: &[Vec<f64>],
    k: usize,
    old: &[f64],
    new: &[f64],
) -> f64 {
    let mut delta = 0.0;
    for (j, m) in means.iter().enumerate() {
        if j == k {
            continue;
        }
        let (a, b) = (sq_dist(new, m), sq_dist(old, m));
        delta += match objective {
            PackingObjective::DistanceSum => a.sqrt() - b.sqrt(),
            PackingObjective::SquaredDistanceSum => a - b,
        };
    }
    delta
}

/// Moves mean `k` by `0.1 * (eps - 0.5)` per coordinate and projects it back
/// to the unit sphere. `eps` must hold one value per coordinate.
pub fn perturb_with_noise(means: &[Vec<f64>], k: usize, eps: &[f64]) -> Result<Vec<Vec<f64>>> {
    if k >= means.len() {
        return invalid(format!("mean index {k} out of range for K={}", means.len()));
    }
    if eps.len() != means[k].len() {
        return invalid("perturbation noise must match the latent dimension");
    }
    let mut out = means.to_vec();
    for (x, e) in out[k].iter_mut().zip(eps) {
        *x += 0.1 * (e - 0.5);
    }
    normalize(&mut out[k]);
    Ok(out)
}

fn draw_eps(rng: &mut Rng, d: usize) -> Vec<f64> {
    // (0, 1]
    (0..d).map(|_| 1.0 - rng.random::<f64>()).collect()
}

pub fn perturb(means: &[Vec<f64>], k: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if k >= means.len() {
        return invalid(format!("mean index {k} out of range for K={}", means.len()));
    }
    let eps = draw_eps(rng, means[k].len());
    perturb_with_noise(means, k, &eps)
}

/// Uniform points on the unit sphere via normalized Gaussian draws.
pub fn random_unit_vectors(k: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            if v.iter().any(|x| *x != 0.0) {
                normalize(&mut v);
                break v;
            }
        })
        .collect()
}

/// `d_mu / (2 K 3^(1/d))`, with `d_mu` the minimum squared pairwise distance.
pub fn encoder_sigma(min_pair_sq_dist: f64, num_categories: usize, latent_dim: usize) -> Result<f64> {
    if !(min_pair_sq_dist > 0.0) || num_categories == 0 || latent_dim == 0 {
        return invalid("encoder sigma needs positive distance, K and d");
    }
    let radius = 3f64.powf(1.0 / latent_dim as f64);
    Ok(min_pair_sq_dist / (2.0 * num_categories as f64 * radius))
}

/// Annealing trace, exposed for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct AnnealOutcome {
    pub result: PackingResult,
    pub initial_means: Vec<Vec<f64>>,
    pub steps: usize,
    pub converged: bool,
}

pub fn pack_sphere(config: &PackingConfig) -> Result<PackingResult> {
    Ok(anneal(config)?.result)
}

pub fn anneal(config: &PackingConfig) -> Result<AnnealOutcome> {
    config.validate()?;
    let (k_count, d) = (config.num_categories, config.latent_dim);
    let mut rng = seeded(config.rng_seed);
    let initial = random_unit_vectors(k_count, d, &mut rng);

    let mut current = initial.clone();
    let mut energy = objective_value(config.objective, &current);
    let mut best = current.clone();
    let mut best_energy = energy;

    let window = 100usize;
    let mut recent = vec![f64::INFINITY; window];
    let mut recent_sum = f64::INFINITY;
    let mut temperature = config.initial_temperature;
    let mut count = 0usize;
    let mut converged = false;
    let mut step = 0usize;

    while step < config.max_steps {
        let k = rng.random_range(0..k_count);
        let eps = draw_eps(&mut rng, d);
        let mut proposal = current[k].clone();
        for (x, e) in proposal.iter_mut().zip(&eps) {
            *x += 0.1 * (e - 0.5);
        }
        normalize(&mut proposal);

        let delta = objective_delta(config.objective, &current, k, &current[k], &proposal);
        let accept = delta > 0.0 || rng.random::<f64>() < (-delta.abs() / temperature).exp();
        // The convergence window tracks the realized change, zero on rejection.
        let realized = if accept {
            current[k] = proposal;
            energy += delta;
            if energy > best_energy {
                best_energy = energy;
                best.clone_from(&current);
            }
            delta.abs()
        } else {
            0.0
        };

        let slot = step % window;
        recent[slot] = realized;
        if step + 1 >= window {
            recent_sum = recent.iter().sum();
        }

        count += 1;
        if count >= config.steps_per_temperature {
            temperature *= config.cooling_factor;
            count = 0;
        }

        step += 1;
        if step > config.min_steps && recent_sum / (window as f64) < config.convergence_delta {
            converged = true;
            break;
        }
    }

    let min_d = min_pair_sq_dist(&best);
    let sigma = match config.sigma_override {
        Some(s) => s,
        None => encoder_sigma(min_d, k_count, d)?,
    };
    Ok(AnnealOutcome {
        result: PackingResult {
            num_categories: k_count,
            latent_dim: d,
            means: best,
            min_pair_sq_dist: min_d,
            sigma,
            seed: config.rng_seed,
        },
        initial_means: initial,
        steps: step,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_energy(m: &[Vec<f64>]) -> f64 {
        let mut e = 0.0;
        for i in 0..m.len() {
            for j in 0..m.len() {
                if i < j {
                    for c in 0..m[i].len() {
                        e += (m[i][c] - m[j][c]).powi(2);
                    }
                }
            }
        }
        e
    }

    #[test]
    fn energy_of_antipodal_pair_and_triangle() {
        let pair = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(packing_energy(&pair).unwrap(), 4.0);
        let tri: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        assert!((packing_energy(&tri).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn energy_matches_pairwise_loop() {
        let mut rng = seeded(11);
        for _ in 0..20 {
            let m = random_unit_vectors(4, 5, &mut rng);
            assert!((packing_energy(&m).unwrap() - brute_energy(&m)).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_rejects_single_mean() {
        assert!(packing_energy(&[vec![1.0]]).is_err());
    }

    #[test]
    fn neutral_noise_leaves_mean_unchanged() {
        let mut rng = seeded(3);
        let m = random_unit_vectors(3, 4, &mut rng);
        let out = perturb_with_noise(&m, 1, &[0.5; 4]).unwrap();
        for (a, b) in out[1].iter().zip(&m[1]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn perturb_touches_only_one_mean_and_stays_on_sphere() {
        let mut rng = seeded(5);
        let m = random_unit_vectors(5, 3, &mut rng);
        let out = perturb(&m, 2, &mut rng).unwrap();
        for i in 0..5 {
            if i != 2 {
                assert_eq!(out[i], m[i]);
            }
        }
        let norm: f64 = out[2].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(perturb(&m, 5, &mut rng).is_err());
    }

    #[test]
    fn sigma_substitutions() {
        assert!((encoder_sigma(4.0, 2, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let s = encoder_sigma(3.0, 3, 2).unwrap();
        assert!((s - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-15);
        assert!((s - 0.288_675).abs() < 1e-6);
        // 0.5 / (42 * 3^(1/18)) evaluated independently through logs.
        let s = encoder_sigma(0.5, 21, 18).unwrap();
        let expected = (0.5f64.ln() - 42f64.ln() - 3f64.ln() / 18.0).exp();
        assert!((s - expected).abs() < 1e-15);
        assert!(encoder_sigma(0.0, 2, 2).is_err());
        assert!(encoder_sigma(1.0, 0, 2).is_err());
    }

    #[test]
    fn two_points_become_antipodal() {
        let r = pack_sphere(&PackingConfig::new(2, 2, 1)).unwrap();
        assert!(sq_dist(&r.means[0], &r.means[1]) >= 3.96);
    }

    #[test]
    fn three_points_in_plane_reach_triangle() {
        let r = pack_sphere(&PackingConfig::new(3, 2, 2)).unwrap();
        assert!(r.min_pair_sq_dist >= 0.95 * 3.0);
    }

    #[test]
    fn means_are_unit_norm_and_sigma_consistent() {
        let r = pack_sphere(&PackingConfig::new(6, 4, 9)).unwrap();
        for m in &r.means {
            let n: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert_eq!(r.min_pair_sq_dist, min_pair_sq_dist(&r.means));
        assert_eq!(r.sigma, encoder_sigma(r.min_pair_sq_dist, 6, 4).unwrap());
    }

    #[test]
    fn packing_is_reproducible() {
        let cfg = PackingConfig::new(5, 3, 42);
        assert_eq!(pack_sphere(&cfg).unwrap(), pack_sphere(&cfg).unwrap());
    }

    #[test]
    fn improves_on_random_initialisation() {
        let mut wins = 0;
        for seed in 0..100 {
            let out = anneal(&PackingConfig::new(8, 8, seed)).unwrap();
            if out.result.min_pair_sq_dist >= min_pair_sq_dist(&out.initial_means) {
                wins += 1;
            }
        }
        assert!(wins >= 95, "only {wins}/100 runs improved");
    }

    #[test]
    fn spreads_21_means_in_18_dims() {
        fn spread(v: &[f64]) -> f64 {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        }
        let out = anneal(&PackingConfig::new(21, 18, 4)).unwrap();
        let before = pairwise_sq_distances(&out.initial_means);
        let after = pairwise_sq_distances(&out.result.means);
        assert!(spread(&after) < spread(&before));
        assert!(min_pair_sq_dist(&out.result.means) > min_pair_sq_dist(&out.initial_means));
    }

    #[test]
    fn config_validation() {
        assert!(PackingConfig::new(1, 2, 0).validate().is_err());
        assert!(PackingConfig::new(2, 0, 0).validate().is_err());
        let mut c = PackingConfig::new(3, 2, 0);
        c.cooling_factor = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn override_sigma_is_used() {
        let mut c = PackingConfig::new(3, 2, 0);
        c.sigma_override = Some(0.05);
        assert_eq!(pack_sphere(&c).unwrap().sigma, 0.05);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let r = pack_sphere(&PackingConfig::new(4, 3, 8)).unwrap();
        let text = r.to_json().unwrap();
        assert!(text.contains("\"K\"") && text.contains("\"min_pair_sq_dist\""));
        assert_eq!(PackingResult::from_json(&text).unwrap(), r);
    }
}
