//! Ancestral sampling through the mixture denoiser.

use ndarray::{s, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{argmax, decode_sample, sample_categorical, CategorySequence, LatentSequence};
use crate::diffusion::{category_posterior, NoiseSchedule};
use crate::error::{invalid, Result};
use crate::geometry::PackingResult;
use crate::predictor::Predictor;
use crate::rng::{self, domain, Rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleRequest {
    pub num_samples: usize,
    pub seed: u64,
    pub record_entropy: bool,
    /// Keep every latent `z_T, ..., z_0` of every chain.
    pub record_trajectory: bool,
    /// Take the most probable category at each step instead of drawing one.
    pub map_intermediate: bool,
}

impl Default for SampleRequest {
    fn default() -> Self {
        Self {
            num_samples: 1,
            seed: 0,
            record_entropy: false,
            record_trajectory: false,
            map_intermediate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: Vec<CategorySequence>,
    /// Entry `t - 1` is the mean entropy (nats) of the predictor rows at step `t`.
    pub entropy: Option<Vec<f64>>,
    /// Per chain, latents from `z_T` down to `z_0`.
    pub trajectories: Option<Vec<Vec<LatentSequence>>>,
}

/// Chains per batched forward pass. Fixed, so output does not depend on
/// the worker count.
const CHAINS_PER_CHUNK: usize = 64;

struct ChainResult {
    sample: CategorySequence,
    entropy: Vec<f64>,
    trajectory: Vec<LatentSequence>,
}

fn check_compat(predictor: &Predictor, pack: &PackingResult) -> Result<()> {
    let c = predictor.config();
    if c.num_categories != pack.num_categories || c.latent_dim != pack.latent_dim {
        return invalid("predictor K or d does not match the packing");
    }
    Ok(())
}

fn entropy(row: ndarray::ArrayView1<'_, f64>) -> f64 {
    row.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

fn run_chains(
    predictor: &Predictor,
    pack: &PackingResult,
    sched: &NoiseSchedule,
    rngs: &mut [Rng],
    map: bool,
    keep_trajectory: bool,
) -> Result<Vec<ChainResult>> {
    let n = rngs.len();
    let len = predictor.config().seq_len;
    let d = pack.latent_dim;
    let steps = sched.steps();
    let mut z = Array2::zeros((n * len, d));
    for (c, r) in rngs.iter_mut().enumerate() {
        for v in z.slice_mut(s![c * len..(c + 1) * len, ..]).iter_mut() {
            *v = r.sample(StandardNormal);
        }
    }
    let mut entropies = vec![vec![0.0; steps]; n];
    let mut trajectories: Vec<Vec<LatentSequence>> = vec![Vec::new(); n];
    let block = |z: &Array2<f64>, c: usize| LatentSequence(z.slice(s![c * len..(c + 1) * len, ..]).to_owned());
    if keep_trajectory {
        for (c, tr) in trajectories.iter_mut().enumerate() {
            tr.push(block(&z, c));
        }
    }
    for t in (1..=steps).rev() {
        let probs = predictor.predict_batch(z.view(), &vec![t; n])?;
        let mut next = Array2::zeros(z.dim());
        for (c, r) in rngs.iter_mut().enumerate() {
            let mut h = 0.0;
            for s in 0..len {
                let row_idx = c * len + s;
                let row = probs.row(row_idx);
                h += entropy(row);
                let k = if map { argmax(row) } else { sample_categorical(row, r) };
                let g = category_posterior(z.row(row_idx), k, t, sched, pack)?;
                let sd = g.variance.sqrt();
                for (j, m) in g.mean.iter().enumerate() {
                    next[[row_idx, j]] = m + sd * r.sample::<f64, _>(StandardNormal);
                }
            }
            entropies[c][t - 1] = h / len as f64;
        }
        z = next;
        if keep_trajectory {
            for (c, tr) in trajectories.iter_mut().enumerate() {
                tr.push(block(&z, c));
            }
        }
    }
    rngs.iter_mut()
        .zip(entropies)
        .zip(trajectories)
        .enumerate()
        .map(|(c, ((r, entropy), trajectory))| {
            Ok(ChainResult {
                sample: decode_sample(&block(&z, c), pack, r)?,
                entropy,
                trajectory,
            })
        })
        .collect()
}

/// One chain driven entirely by `rng`.
pub fn sample_one(predictor: &Predictor, pack: &PackingResult, sched: &NoiseSchedule, rng: &mut Rng) -> Result<CategorySequence> {
    check_compat(predictor, pack)?;
    let mut rngs = [rng.clone()];
    let out = run_chains(predictor, pack, sched, &mut rngs, false, false)?;
    *rng = rngs[0].clone();
    Ok(out.into_iter().next().expect("one chain").sample)
}

/// Chain `i` uses the stream `(req.seed, SAMPLE_CHAIN, i)`.
pub fn sample_many(predictor: &Predictor, pack: &PackingResult, sched: &NoiseSchedule, req: &SampleRequest) -> Result<SampleOutput> {
    check_compat(predictor, pack)?;
    if req.num_samples == 0 {
        return invalid("num_samples must be at least 1");
    }
    let chunks: Vec<_> = (0..req.num_samples.div_ceil(CHAINS_PER_CHUNK))
        .map(|c| c * CHAINS_PER_CHUNK..((c + 1) * CHAINS_PER_CHUNK).min(req.num_samples))
        .collect();
    let results: Vec<Vec<ChainResult>> = chunks
        .into_par_iter()
        .map(|range| {
            let mut rngs: Vec<Rng> = range
                .map(|i| rng::substream(req.seed, domain::SAMPLE_CHAIN, i as u64))
                .collect();
            run_chains(predictor, pack, sched, &mut rngs, req.map_intermediate, req.record_trajectory)
        })
        .collect::<Result<_>>()?;
    let steps = sched.steps();
    let mut samples = Vec::with_capacity(req.num_samples);
    let mut mean_entropy = vec![0.0; steps];
    let mut trajectories = Vec::new();
    for chain in results.into_iter().flatten() {
        samples.push(chain.sample);
        for (acc, h) in mean_entropy.iter_mut().zip(chain.entropy) {
            *acc += h;
        }
        if req.record_trajectory {
            trajectories.push(chain.trajectory);
        }
    }
    mean_entropy.iter_mut().for_each(|h| *h /= req.num_samples as f64);
    Ok(SampleOutput {
        samples,
        entropy: req.record_entropy.then_some(mean_entropy),
        trajectories: req.record_trajectory.then_some(trajectories),
    })
}

/// Mean predictor entropy per step over `n_chains` chains.
pub fn entropy_trajectory(
    predictor: &Predictor,
    pack: &PackingResult,
    sched: &NoiseSchedule,
    n_chains: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_chains == 0 {
        return invalid("need at least one chain");
    }
    let req = SampleRequest {
        num_samples: n_chains,
        seed,
        record_entropy: true,
        ..SampleRequest::default()
    };
    Ok(sample_many(predictor, pack, sched, &req)?.entropy.expect("entropy requested"))
}

/// `t,mean_entropy` rows.
pub fn entropy_csv(entropy: &[f64]) -> String {
    let mut out = String::from("t,mean_entropy\n");
    for (i, h) in entropy.iter().enumerate() {
        out.push_str(&format!("{},{h}\n", i + 1));
    }
    out
}
