//! Per-position network with shared weights over
//! `[z_s | time embedding | mean of z over the sequence]`.

use ndarray::{s, Array2, Axis};

use super::layout::{Layout, TensorId};
use super::ops::{affine, affine_backward, dropout_mask, gelu, gelu_grad};
use super::{init_normal, PredictorConfig, StepInput};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct MlpNet {
    hidden: Vec<(TensorId, TensorId)>,
    head: (TensorId, TensorId),
}

pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

impl MlpNet {
    pub fn build(cfg: &PredictorConfig, layout: &mut Layout) -> Self {
        let mut width = 2 * cfg.latent_dim + cfg.time_embed_dim;
        let mut hidden = Vec::new();
        for l in 0..cfg.depth {
            let w = layout.add(format!("mlp.{l}.w"), width, cfg.hidden_size);
            let b = layout.add(format!("mlp.{l}.b"), 1, cfg.hidden_size);
            hidden.push((w, b));
            width = cfg.hidden_size;
        }
        let head = (
            layout.add("head.w", width, cfg.num_categories),
            layout.add("head.b", 1, cfg.num_categories),
        );
        Self { hidden, head }
    }

    pub fn init(&self, layout: &Layout, params: &mut [f64], rng: &mut Rng) {
        for &(w, _) in &self.hidden {
            let fan_in = layout.spec(w).rows as f64;
            init_normal(layout.view_mut(params, w), (1.0 / fan_in).sqrt(), rng);
        }
        let fan_in = layout.spec(self.head.0).rows as f64;
        init_normal(layout.view_mut(params, self.head.0), 0.1 / fan_in.sqrt(), rng);
    }

    fn input(input: &StepInput<'_>) -> Array2<f64> {
        let (n, d) = input.z.dim();
        let e = input.temb.ncols();
        let len = input.len;
        let mut u = Array2::zeros((n, 2 * d + e));
        u.slice_mut(s![.., ..d]).assign(&input.z);
        for b in 0..input.seqs {
            let rows = b * len..(b + 1) * len;
            let mean = input.z.slice(s![rows.clone(), ..]).mean_axis(Axis(0)).expect("non-empty sequence");
            let mut block = u.slice_mut(s![rows, ..]);
            for mut row in block.rows_mut() {
                row.slice_mut(s![d..d + e]).assign(&input.temb.row(b));
                row.slice_mut(s![d + e..]).assign(&mean);
            }
        }
        u
    }

    pub fn forward(
        &self,
        layout: &Layout,
        params: &[f64],
        input: &StepInput<'_>,
        dropout: Option<(f64, &mut Rng)>,
    ) -> (Array2<f64>, MlpCache) {
        let mut x = Self::input(input);
        let mut cache = MlpCache {
            inputs: Vec::new(),
            pre: Vec::new(),
            masks: Vec::new(),
        };
        let mut dropout = dropout;
        for &(w, b) in &self.hidden {
            let pre = affine(&x, layout.view(params, w), layout.row(params, b));
            let mut act = pre.mapv(gelu);
            let mask = dropout.as_mut().map(|(p, rng)| dropout_mask(act.nrows(), act.ncols(), *p, rng));
            if let Some(m) = &mask {
                act *= m;
            }
            cache.inputs.push(std::mem::replace(&mut x, act));
            cache.pre.push(pre);
            cache.masks.push(mask);
        }
        let logits = affine(&x, layout.view(params, self.head.0), layout.row(params, self.head.1));
        cache.inputs.push(x);
        (logits, cache)
    }

    pub fn backward(&self, layout: &Layout, params: &[f64], cache: &MlpCache, dlogits: &Array2<f64>, grad: &mut [f64]) {
        let last = cache.inputs.len() - 1;
        let mut dx = {
            let (w, b) = self.head;
            let (mut dw, mut db) = layout.weight_bias_mut(grad, w, b);
            affine_backward(
                &cache.inputs[last],
                layout.view(params, w),
                dlogits,
                &mut dw,
                &mut db,
                !self.hidden.is_empty(),
            )
        };
        for (l, &(w, b)) in self.hidden.iter().enumerate().rev() {
            let mut d = dx.take().expect("hidden gradient");
            if let Some(m) = &cache.masks[l] {
                d *= m;
            }
            ndarray::Zip::from(&mut d).and(&cache.pre[l]).for_each(|g, &p| *g *= gelu_grad(p));
            let (mut dw, mut db) = layout.weight_bias_mut(grad, w, b);
            dx = affine_backward(&cache.inputs[l], layout.view(params, w), &d, &mut dw, &mut db, l > 0);
        }
    }
}
