//! Pre-norm transformer encoder over the positions of one sequence, with a
//! learned positional embedding and bidirectional attention.

use ndarray::{s, Array2, ArrayView2};

use super::layout::{Layout, TensorId};
use super::ops::{
    affine, affine_backward, dropout_mask, gelu, gelu_grad, layer_norm, layer_norm_backward, softmax_rows,
    LayerNormCache,
};
use super::{init_normal, PredictorConfig, StepInput};
use crate::rng::Rng;

#[derive(Debug, Clone)]
struct Block {
    ln1: (TensorId, TensorId),
    qkv: (TensorId, TensorId),
    out: (TensorId, TensorId),
    ln2: (TensorId, TensorId),
    ff1: (TensorId, TensorId),
    ff2: (TensorId, TensorId),
}

#[derive(Debug, Clone)]
pub struct TransformerNet {
    hidden: usize,
    heads: usize,
    input: (TensorId, TensorId),
    pos: TensorId,
    blocks: Vec<Block>,
    ln_f: (TensorId, TensorId),
    head: (TensorId, TensorId),
}

struct BlockCache {
    ln1: LayerNormCache,
    a: Array2<f64>,
    qkv: Array2<f64>,
    /// One `S x S` attention matrix per (sequence, head), sequence-major.
    probs: Vec<Array2<f64>>,
    att: Array2<f64>,
    mask1: Option<Array2<f64>>,
    ln2: LayerNormCache,
    m: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    mask2: Option<Array2<f64>>,
}

pub struct TransformerCache {
    x_in: Array2<f64>,
    blocks: Vec<BlockCache>,
    ln_f: LayerNormCache,
    h_f: Array2<f64>,
    seqs: usize,
    len: usize,
}

fn pair(layout: &mut Layout, name: &str, rows: usize, cols: usize) -> (TensorId, TensorId) {
    (
        layout.add(format!("{name}.w"), rows, cols),
        layout.add(format!("{name}.b"), 1, cols),
    )
}

fn norm(layout: &mut Layout, name: &str, h: usize) -> (TensorId, TensorId) {
    (
        layout.add(format!("{name}.g"), 1, h),
        layout.add(format!("{name}.b"), 1, h),
    )
}

impl TransformerNet {
    pub fn build(cfg: &PredictorConfig, layout: &mut Layout) -> Self {
        let h = cfg.hidden_size;
        let input = pair(layout, "in", cfg.latent_dim + cfg.time_embed_dim, h);
        let pos = layout.add("pos", cfg.seq_len, h);
        let blocks = (0..cfg.depth)
            .map(|l| Block {
                ln1: norm(layout, &format!("block.{l}.ln1"), h),
                qkv: pair(layout, &format!("block.{l}.qkv"), h, 3 * h),
                out: pair(layout, &format!("block.{l}.out"), h, h),
                ln2: norm(layout, &format!("block.{l}.ln2"), h),
                ff1: pair(layout, &format!("block.{l}.ff1"), h, cfg.ffn_size),
                ff2: pair(layout, &format!("block.{l}.ff2"), cfg.ffn_size, h),
            })
            .collect();
        let ln_f = norm(layout, "ln_f", h);
        let head = pair(layout, "head", h, cfg.num_categories);
        Self {
            hidden: h,
            heads: cfg.num_heads,
            input,
            pos,
            blocks,
            ln_f,
            head,
        }
    }

    pub fn init(&self, layout: &Layout, params: &mut [f64], rng: &mut Rng) {
        let fan = |id: TensorId| (layout.spec(id).rows as f64).sqrt();
        let residual = (2.0 * self.blocks.len() as f64).sqrt();
        init_normal(layout.view_mut(params, self.input.0), 1.0 / fan(self.input.0), rng);
        init_normal(layout.view_mut(params, self.pos), 0.5, rng);
        for b in &self.blocks {
            layout.view_mut(params, b.ln1.0).fill(1.0);
            layout.view_mut(params, b.ln2.0).fill(1.0);
            init_normal(layout.view_mut(params, b.qkv.0), 1.0 / fan(b.qkv.0), rng);
            init_normal(layout.view_mut(params, b.out.0), 1.0 / (fan(b.out.0) * residual), rng);
            init_normal(layout.view_mut(params, b.ff1.0), 1.0 / fan(b.ff1.0), rng);
            init_normal(layout.view_mut(params, b.ff2.0), 1.0 / (fan(b.ff2.0) * residual), rng);
        }
        layout.view_mut(params, self.ln_f.0).fill(1.0);
        init_normal(layout.view_mut(params, self.head.0), 0.1 / fan(self.head.0), rng);
    }

    fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn forward(
        &self,
        layout: &Layout,
        params: &[f64],
        input: &StepInput<'_>,
        mut dropout: Option<(f64, &mut Rng)>,
    ) -> (Array2<f64>, TransformerCache) {
        let (n, d) = input.z.dim();
        let (seqs, len) = (input.seqs, input.len);
        let e = input.temb.ncols();
        let mut x_in = Array2::zeros((n, d + e));
        x_in.slice_mut(s![.., ..d]).assign(&input.z);
        for (r, mut row) in x_in.rows_mut().into_iter().enumerate() {
            row.slice_mut(s![d..]).assign(&input.temb.row(r / len));
        }
        let mut h = affine(&x_in, layout.view(params, self.input.0), layout.row(params, self.input.1));
        let pos = layout.view(params, self.pos);
        for (r, mut row) in h.rows_mut().into_iter().enumerate() {
            row += &pos.row(r % len);
        }

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (a, ln1) = layer_norm(&h, layout.row(params, b.ln1.0), layout.row(params, b.ln1.1));
            let qkv = affine(&a, layout.view(params, b.qkv.0), layout.row(params, b.qkv.1));
            let (att, probs) = self.attention(&qkv, seqs, len);
            let mut y = affine(&att, layout.view(params, b.out.0), layout.row(params, b.out.1));
            let mask1 = dropout.as_mut().map(|(p, rng)| dropout_mask(n, self.hidden, *p, rng));
            if let Some(mk) = &mask1 {
                y *= mk;
            }
            h += &y;
            let (m, ln2) = layer_norm(&h, layout.row(params, b.ln2.0), layout.row(params, b.ln2.1));
            let u = affine(&m, layout.view(params, b.ff1.0), layout.row(params, b.ff1.1));
            let g = u.mapv(gelu);
            let mut f = affine(&g, layout.view(params, b.ff2.0), layout.row(params, b.ff2.1));
            let mask2 = dropout.as_mut().map(|(p, rng)| dropout_mask(n, self.hidden, *p, rng));
            if let Some(mk) = &mask2 {
                f *= mk;
            }
            h += &f;
            blocks.push(BlockCache {
                ln1,
                a,
                qkv,
                probs,
                att,
                mask1,
                ln2,
                m,
                u,
                g,
                mask2,
            });
        }
        let (h_f, ln_f) = layer_norm(&h, layout.row(params, self.ln_f.0), layout.row(params, self.ln_f.1));
        let logits = affine(&h_f, layout.view(params, self.head.0), layout.row(params, self.head.1));
        (
            logits,
            TransformerCache {
                x_in,
                blocks,
                ln_f,
                h_f,
                seqs,
                len,
            },
        )
    }

    fn qkv_parts<'a>(&self, qkv: &'a Array2<f64>, rows: std::ops::Range<usize>, head: usize) -> [ArrayView2<'a, f64>; 3] {
        let dh = self.head_dim();
        let c = head * dh;
        let h = self.hidden;
        [0, h, 2 * h].map(|off| qkv.slice(s![rows.clone(), off + c..off + c + dh]))
    }

    fn attention(&self, qkv: &Array2<f64>, seqs: usize, len: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut att = Array2::zeros((seqs * len, self.hidden));
        let mut probs = Vec::with_capacity(seqs * self.heads);
        for b in 0..seqs {
            let rows = b * len..(b + 1) * len;
            for hd in 0..self.heads {
                let [q, k, v] = self.qkv_parts(qkv, rows.clone(), hd);
                let mut p = q.dot(&k.t()) * scale;
                softmax_rows(&mut p);
                att.slice_mut(s![rows.clone(), hd * dh..(hd + 1) * dh]).assign(&p.dot(&v));
                probs.push(p);
            }
        }
        (att, probs)
    }

    fn attention_backward(&self, qkv: &Array2<f64>, probs: &[Array2<f64>], datt: &Array2<f64>, seqs: usize, len: usize) -> Array2<f64> {
        let dh = self.head_dim();
        let h = self.hidden;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dqkv = Array2::zeros(qkv.dim());
        for b in 0..seqs {
            let rows = b * len..(b + 1) * len;
            for hd in 0..self.heads {
                let p = &probs[b * self.heads + hd];
                let [q, k, v] = self.qkv_parts(qkv, rows.clone(), hd);
                let c = hd * dh;
                let dout = datt.slice(s![rows.clone(), c..c + dh]);
                let dp = dout.dot(&v.t());
                let dv = p.t().dot(&dout);
                let mut ds = dp;
                for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
                    ndarray::Zip::from(&mut ds_row).and(&p_row).for_each(|g, &pv| *g = pv * (*g - dot) * scale);
                }
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![rows.clone(), c..c + dh]).assign(&dq);
                dqkv.slice_mut(s![rows.clone(), h + c..h + c + dh]).assign(&dk);
                dqkv.slice_mut(s![rows.clone(), 2 * h + c..2 * h + c + dh]).assign(&dv);
            }
        }
        dqkv
    }

    pub fn backward(&self, layout: &Layout, params: &[f64], cache: &TransformerCache, dlogits: &Array2<f64>, grad: &mut [f64]) {
        let dhf = {
            let (mut dw, mut db) = layout.weight_bias_mut(grad, self.head.0, self.head.1);
            affine_backward(&cache.h_f, layout.view(params, self.head.0), dlogits, &mut dw, &mut db, true).unwrap()
        };
        let mut dh = ln_back(layout, params, grad, self.ln_f, &dhf, &cache.ln_f);

        for (b, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            // Feed-forward branch.
            let mut df = dh.clone();
            if let Some(mk) = &bc.mask2 {
                df *= mk;
            }
            let mut dg = {
                let (mut dw, mut db) = layout.weight_bias_mut(grad, b.ff2.0, b.ff2.1);
                affine_backward(&bc.g, layout.view(params, b.ff2.0), &df, &mut dw, &mut db, true).unwrap()
            };
            ndarray::Zip::from(&mut dg).and(&bc.u).for_each(|g, &u| *g *= gelu_grad(u));
            let dm = {
                let (mut dw, mut db) = layout.weight_bias_mut(grad, b.ff1.0, b.ff1.1);
                affine_backward(&bc.m, layout.view(params, b.ff1.0), &dg, &mut dw, &mut db, true).unwrap()
            };
            dh += &ln_back(layout, params, grad, b.ln2, &dm, &bc.ln2);

            // Attention branch.
            let mut dy = dh.clone();
            if let Some(mk) = &bc.mask1 {
                dy *= mk;
            }
            let datt = {
                let (mut dw, mut db) = layout.weight_bias_mut(grad, b.out.0, b.out.1);
                affine_backward(&bc.att, layout.view(params, b.out.0), &dy, &mut dw, &mut db, true).unwrap()
            };
            let dqkv = self.attention_backward(&bc.qkv, &bc.probs, &datt, cache.seqs, cache.len);
            let da = {
                let (mut dw, mut db) = layout.weight_bias_mut(grad, b.qkv.0, b.qkv.1);
                affine_backward(&bc.a, layout.view(params, b.qkv.0), &dqkv, &mut dw, &mut db, true).unwrap()
            };
            dh += &ln_back(layout, params, grad, b.ln1, &da, &bc.ln1);
        }

        {
            let mut dpos = layout.view_mut(grad, self.pos);
            for (r, row) in dh.rows().into_iter().enumerate() {
                let mut target = dpos.row_mut(r % cache.len);
                target += &row;
            }
        }
        let (mut dw, mut db) = layout.weight_bias_mut(grad, self.input.0, self.input.1);
        affine_backward(&cache.x_in, layout.view(params, self.input.0), &dh, &mut dw, &mut db, false);
    }
}

fn ln_back(
    layout: &Layout,
    params: &[f64],
    grad: &mut [f64],
    ids: (TensorId, TensorId),
    dy: &Array2<f64>,
    cache: &LayerNormCache,
) -> Array2<f64> {
    let (dx, dg, db) = layer_norm_backward(dy, cache, layout.row(params, ids.0));
    let mut g = layout.row_mut(grad, ids.0);
    g += &dg;
    let mut b = layout.row_mut(grad, ids.1);
    b += &db;
    dx
}
