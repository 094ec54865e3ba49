//! The denoising network `p(X | z_t, t)`: a row-stochastic `S x K` output
//! per noisy sequence, trained by cross-entropy with hand-written gradients.

mod layout;
mod mlp;
mod ops;
mod radam;
mod transformer;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use layout::{Layout, TensorSpec};
pub use radam::{RAdam, RAdamConfig};

use crate::codec::LatentSequence;
use crate::error::{invalid, GmcdError, Result};
use crate::rng::{self, Rng};
use mlp::MlpNet;
use transformer::TransformerNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    Mlp,
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub arch: Arch,
    pub hidden_size: usize,
    pub depth: usize,
    /// Transformer only.
    pub num_heads: usize,
    /// Transformer feed-forward width.
    pub ffn_size: usize,
    pub time_embed_dim: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub latent_dim: usize,
    pub num_categories: usize,
    pub init_seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Mlp,
            hidden_size: 64,
            depth: 2,
            num_heads: 8,
            ffn_size: 128,
            time_embed_dim: 16,
            dropout: 0.0,
            seq_len: 0,
            latent_dim: 0,
            num_categories: 0,
            init_seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn new(arch: Arch, seq_len: usize, latent_dim: usize, num_categories: usize) -> Self {
        Self {
            arch,
            seq_len,
            latent_dim,
            num_categories,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden_size", self.hidden_size),
            ("depth", self.depth),
            ("time_embed_dim", self.time_embed_dim),
            ("seq_len", self.seq_len),
            ("latent_dim", self.latent_dim),
            ("num_categories", self.num_categories),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return invalid(format!("predictor {name} must be positive"));
        }
        if self.time_embed_dim % 2 != 0 {
            return invalid("time_embed_dim must be even");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid("dropout must lie in [0, 1)");
        }
        if self.arch == Arch::Transformer {
            if self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
                return invalid("num_heads must divide hidden_size");
            }
            if self.ffn_size == 0 {
                return invalid("ffn_size must be positive");
            }
        }
        Ok(())
    }
}

/// `[sin(t / 10000^(2i/dim)) ..., cos(t / 10000^(2i/dim)) ...]`.
pub fn time_embed(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return invalid(format!("time embedding dim must be even and positive, got {dim}"));
    }
    let half = dim / 2;
    let tf = t as f64;
    let freqs: Vec<f64> = (0..half)
        .map(|i| tf / 10_000f64.powf(2.0 * i as f64 / dim as f64))
        .collect();
    Ok(freqs.iter().map(|a| a.sin()).chain(freqs.iter().map(|a| a.cos())).collect())
}

pub(crate) fn init_normal(mut view: ArrayViewMut2<'_, f64>, std: f64, rng: &mut Rng) {
    view.mapv_inplace(|_| std * rng.sample::<f64, _>(StandardNormal));
}

/// Stacked network input: `seqs * len` rows of latents plus one time
/// embedding row per sequence.
pub(crate) struct StepInput<'a> {
    pub z: ArrayView2<'a, f64>,
    pub temb: Array2<f64>,
    pub seqs: usize,
    pub len: usize,
}

/// A stack of noisy sequences with their steps and soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(B * S) x d`, sequence-major.
    pub z: Array2<f64>,
    pub t: Vec<usize>,
    /// `(B * S) x K`.
    pub target: Array2<f64>,
}

impl Batch {
    pub fn seqs(&self) -> usize {
        self.t.len()
    }

    fn chunk(&self, range: std::ops::Range<usize>, len: usize) -> (ArrayView2<'_, f64>, &[usize], ArrayView2<'_, f64>) {
        let rows = range.start * len..range.end * len;
        (
            self.z.slice(ndarray::s![rows.clone(), ..]),
            &self.t[range],
            self.target.slice(ndarray::s![rows, ..]),
        )
    }
}

/// Dropout is active only in training mode, with a seed for its masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone)]
enum Net {
    Mlp(MlpNet),
    Transformer(TransformerNet),
}

enum Cache {
    Mlp(mlp::MlpCache),
    Transformer(transformer::TransformerCache),
}

/// Sequences per gradient work unit. Fixed, so results do not depend on
/// the worker count.
const CHUNK: usize = 32;

#[derive(Debug, Clone)]
pub struct Predictor {
    config: PredictorConfig,
    layout: Layout,
    net: Net,
    params: Vec<f64>,
}

impl Predictor {
    /// Fresh parameters drawn from `config.init_seed`.
    pub fn new(config: PredictorConfig) -> Result<Self> {
        let mut p = Self::empty(config)?;
        let mut r = rng::seeded(p.config.init_seed);
        match &p.net {
            Net::Mlp(n) => n.init(&p.layout, &mut p.params, &mut r),
            Net::Transformer(n) => n.init(&p.layout, &mut p.params, &mut r),
        }
        Ok(p)
    }

    pub fn from_params(config: PredictorConfig, params: Vec<f64>) -> Result<Self> {
        let mut p = Self::empty(config)?;
        if params.len() != p.params.len() {
            return invalid(format!(
                "parameter vector has {} entries, layout needs {}",
                params.len(),
                p.params.len()
            ));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(GmcdError::Numeric("non-finite parameter".into()));
        }
        p.params = params;
        Ok(p)
    }

    fn empty(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = Layout::default();
        let net = match config.arch {
            Arch::Mlp => Net::Mlp(MlpNet::build(&config, &mut layout)),
            Arch::Transformer => Net::Transformer(TransformerNet::build(&config, &mut layout)),
        };
        let params = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            net,
            params,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes the output layer, making every prediction uniform.
    pub fn zero_head(&mut self) {
        for name in ["head.w", "head.b"] {
            let spec = self.layout.find(name).expect("head present").clone();
            self.params[spec.offset..spec.offset + spec.rows * spec.cols].fill(0.0);
        }
    }

    fn check_z(&self, z: ArrayView2<'_, f64>, seqs: usize) -> Result<()> {
        let want = (seqs * self.config.seq_len, self.config.latent_dim);
        if z.dim() != want {
            return invalid(format!("latent block has shape {:?}, expected {want:?}", z.dim()));
        }
        Ok(())
    }

    fn input<'a>(&self, z: ArrayView2<'a, f64>, t: &[usize]) -> StepInput<'a> {
        let e = self.config.time_embed_dim;
        let mut temb = Array2::zeros((t.len(), e));
        for (mut row, &ti) in temb.rows_mut().into_iter().zip(t) {
            row.assign(&ndarray::Array1::from(time_embed(ti, e).expect("validated dim")));
        }
        StepInput {
            z,
            temb,
            seqs: t.len(),
            len: self.config.seq_len,
        }
    }

    fn forward(&self, input: &StepInput<'_>, dropout: Option<(f64, &mut Rng)>) -> Result<(Array2<f64>, Cache)> {
        let (logits, cache) = match &self.net {
            Net::Mlp(n) => {
                let (l, c) = n.forward(&self.layout, &self.params, input, dropout);
                (l, Cache::Mlp(c))
            }
            Net::Transformer(n) => {
                let (l, c) = n.forward(&self.layout, &self.params, input, dropout);
                (l, Cache::Transformer(c))
            }
        };
        if let Some(((r, c), v)) = logits.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GmcdError::Numeric(format!("non-finite logit {v} at row {r}, category {c}")));
        }
        Ok((logits, cache))
    }

    fn backward(&self, cache: &Cache, dlogits: &Array2<f64>, grad: &mut [f64]) {
        match (&self.net, cache) {
            (Net::Mlp(n), Cache::Mlp(c)) => n.backward(&self.layout, &self.params, c, dlogits, grad),
            (Net::Transformer(n), Cache::Transformer(c)) => n.backward(&self.layout, &self.params, c, dlogits, grad),
            _ => unreachable!("cache built by the same network"),
        }
    }

    /// Probabilities for a stack of sequences, dropout off.
    pub fn predict_batch(&self, z: ArrayView2<'_, f64>, t: &[usize]) -> Result<Array2<f64>> {
        self.check_z(z, t.len())?;
        let (mut logits, _) = self.forward(&self.input(z, t), None)?;
        ops::softmax_rows(&mut logits);
        Ok(logits)
    }

    pub fn predict(&self, zt: &LatentSequence, t: usize) -> Result<Array2<f64>> {
        self.predict_batch(zt.0.view(), &[t])
    }

    fn check_target(&self, target: ArrayView2<'_, f64>, rows: usize) -> Result<()> {
        if target.dim() != (rows, self.config.num_categories) {
            return invalid(format!("target has shape {:?}", target.dim()));
        }
        for (r, row) in target.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return invalid(format!("target row {r} is not a probability vector"));
            }
        }
        Ok(())
    }

    /// Summed cross-entropy over rows with its gradient, scaled by `scale`.
    fn chunk_loss_grad(
        &self,
        z: ArrayView2<'_, f64>,
        t: &[usize],
        target: ArrayView2<'_, f64>,
        scale: f64,
        dropout: Option<&mut Rng>,
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let input = self.input(z, t);
        let p = self.config.dropout;
        let drop = dropout.filter(|_| p > 0.0).map(|r| (p, r));
        let (logits, cache) = self.forward(&input, drop)?;
        let mut probs = logits.clone();
        let mut loss = 0.0;
        for ((lrow, trow), mut prow) in logits.rows().into_iter().zip(target.rows()).zip(probs.rows_mut()) {
            let max = lrow.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + lrow.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for ((&l, &tv), pv) in lrow.iter().zip(trow.iter()).zip(prow.iter_mut()) {
                if tv > 0.0 {
                    loss -= tv * (l - lse);
                }
                *pv = (l - lse).exp();
            }
        }
        if !loss.is_finite() {
            return Err(GmcdError::Numeric(format!("non-finite loss {loss}")));
        }
        if !want_grad {
            return Ok((loss * scale, None));
        }
        let dlogits = (probs - &target) * scale;
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&cache, &dlogits, &mut grad);
        Ok((loss * scale, Some(grad)))
    }

    /// One sequence: summed cross-entropy against `target` and its exact
    /// gradient, dropout off.
    pub fn loss_and_grad(&self, zt: &LatentSequence, t: usize, target: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
        self.check_z(zt.0.view(), 1)?;
        self.check_target(target.view(), self.config.seq_len)?;
        let (loss, grad) = self.chunk_loss_grad(zt.0.view(), &[t], target.view(), 1.0, None, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    fn batch_eval(&self, batch: &Batch, mode: Mode, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let seqs = batch.seqs();
        if seqs == 0 {
            return invalid("empty batch");
        }
        self.check_z(batch.z.view(), seqs)?;
        self.check_target(batch.target.view(), seqs * self.config.seq_len)?;
        let scale = 1.0 / seqs as f64;
        let len = self.config.seq_len;
        let chunks: Vec<_> = (0..seqs.div_ceil(CHUNK))
            .map(|c| c * CHUNK..((c + 1) * CHUNK).min(seqs))
            .collect();
        let parts: Vec<(f64, Option<Vec<f64>>)> = chunks
            .into_par_iter()
            .enumerate()
            .map(|(ci, range)| {
                let (z, t, target) = batch.chunk(range, len);
                let mut r = match mode {
                    Mode::Train { dropout_seed } => Some(rng::substream(dropout_seed, rng::domain::DROPOUT, ci as u64)),
                    Mode::Eval => None,
                };
                self.chunk_loss_grad(z, t, target, scale, r.as_mut(), want_grad)
            })
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; self.params.len()]);
        for (l, g) in parts {
            loss += l;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        Ok((loss, grad))
    }

    /// Mean over sequences of the summed cross-entropy, with its gradient.
    pub fn batch_loss_and_grad(&self, batch: &Batch, mode: Mode) -> Result<(f64, Vec<f64>)> {
        let (l, g) = self.batch_eval(batch, mode, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    /// Mean loss without gradients, dropout off.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        Ok(self.batch_eval(batch, Mode::Eval, false)?.0)
    }
}
