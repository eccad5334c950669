//! Decoder-only transformer with hand-written forward and backward passes.
//!
//! Pre-norm blocks, learned absolute positions, causal attention over the
//! whole packed window, GELU MLP, untied unembedding. Everything is f64 and
//! single-threaded, so a fixed seed gives a bitwise-identical run.

use ndarray::{s, Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::invalid("model config", "dims must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(
                "model config",
                format!(
                    "d_model {} not divisible by n_heads {}",
                    self.d_model, self.n_heads
                ),
            ));
        }
        if self.context_len == 0 || self.vocab_size == 0 {
            return Err(Error::invalid(
                "model config",
                "context_len and vocab_size must be positive",
            ));
        }
        Ok(())
    }

    /// Analytic weight count excluding the token-embedding tables (input
    /// embedding and unembedding) and the positional table.
    pub fn nonembedding_params(&self) -> usize {
        let d = self.d_model;
        let f = self.d_ff;
        self.n_layers * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d
    }

    pub fn embedding_params(&self) -> usize {
        let d = self.d_model;
        self.vocab_size * d + self.context_len * d + d * self.vocab_size
    }

    pub fn total_params(&self) -> usize {
        self.nonembedding_params() + self.embedding_params()
    }

    /// Train-FLOPs accounting convention used for every plot in this crate:
    /// 6 x non-embedding parameters per token.
    pub fn flops_per_token(&self) -> f64 {
        6.0 * self.nonembedding_params() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w_fc1: Array2<f64>,
    pub b_fc1: Array1<f64>,
    pub w_fc2: Array2<f64>,
    pub b_fc2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub unembed: Array2<f64>,
}

enum TensorRef<'a> {
    A1(&'a Array1<f64>),
    A2(&'a Array2<f64>),
}

impl ModelParams {
    /// N(0, 0.02) weights with the residual-output projections scaled by
    /// 1/sqrt(n_layers); zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let std = 0.02;
        let res_std = std / (cfg.n_layers as f64).sqrt();
        let mut normal = |rows: usize, cols: usize, sd: f64| -> Array2<f64> {
            Array2::from_shape_simple_fn((rows, cols), || {
                let z: f64 = rng.sample(StandardNormal);
                z * sd
            })
        };
        let blocks = (0..cfg.n_layers)
            .map(|_| Block {
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                w_qkv: normal(d, 3 * d, std),
                b_qkv: Array1::zeros(3 * d),
                w_o: normal(d, d, res_std),
                b_o: Array1::zeros(d),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
                w_fc1: normal(d, f, std),
                b_fc1: Array1::zeros(f),
                w_fc2: normal(f, d, res_std),
                b_fc2: Array1::zeros(d),
            })
            .collect();
        Ok(ModelParams {
            tok_emb: normal(cfg.vocab_size, d, std),
            pos_emb: normal(cfg.context_len, d, std),
            blocks,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
            unembed: normal(d, cfg.vocab_size, std),
            cfg: cfg.clone(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.cfg.d_model;
        let f = self.cfg.d_ff;
        ModelParams {
            cfg: self.cfg.clone(),
            tok_emb: Array2::zeros((self.cfg.vocab_size, d)),
            pos_emb: Array2::zeros((self.cfg.context_len, d)),
            blocks: (0..self.cfg.n_layers)
                .map(|_| Block {
                    ln1_g: Array1::zeros(d),
                    ln1_b: Array1::zeros(d),
                    w_qkv: Array2::zeros((d, 3 * d)),
                    b_qkv: Array1::zeros(3 * d),
                    w_o: Array2::zeros((d, d)),
                    b_o: Array1::zeros(d),
                    ln2_g: Array1::zeros(d),
                    ln2_b: Array1::zeros(d),
                    w_fc1: Array2::zeros((d, f)),
                    b_fc1: Array1::zeros(f),
                    w_fc2: Array2::zeros((f, d)),
                    b_fc2: Array1::zeros(d),
                })
                .collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            unembed: Array2::zeros((d, self.cfg.vocab_size)),
        }
    }

    fn tensor_refs(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out: Vec<(String, TensorRef<'_>)> = vec![
            ("tok_emb".into(), TensorRef::A2(&self.tok_emb)),
            ("pos_emb".into(), TensorRef::A2(&self.pos_emb)),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.ln1_g"), TensorRef::A1(&b.ln1_g)));
            out.push((format!("block{i}.ln1_b"), TensorRef::A1(&b.ln1_b)));
            out.push((format!("block{i}.w_qkv"), TensorRef::A2(&b.w_qkv)));
            out.push((format!("block{i}.b_qkv"), TensorRef::A1(&b.b_qkv)));
            out.push((format!("block{i}.w_o"), TensorRef::A2(&b.w_o)));
            out.push((format!("block{i}.b_o"), TensorRef::A1(&b.b_o)));
            out.push((format!("block{i}.ln2_g"), TensorRef::A1(&b.ln2_g)));
            out.push((format!("block{i}.ln2_b"), TensorRef::A1(&b.ln2_b)));
            out.push((format!("block{i}.w_fc1"), TensorRef::A2(&b.w_fc1)));
            out.push((format!("block{i}.b_fc1"), TensorRef::A1(&b.b_fc1)));
            out.push((format!("block{i}.w_fc2"), TensorRef::A2(&b.w_fc2)));
            out.push((format!("block{i}.b_fc2"), TensorRef::A1(&b.b_fc2)));
        }
        out.push(("lnf_g".into(), TensorRef::A1(&self.lnf_g)));
        out.push(("lnf_b".into(), TensorRef::A1(&self.lnf_b)));
        out.push(("unembed".into(), TensorRef::A2(&self.unembed)));
        out
    }

    /// Canonical (name, shape) listing; fixes the on-disk tensor order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.tensor_refs()
            .into_iter()
            .map(|(name, t)| {
                let shape = match t {
                    TensorRef::A1(a) => vec![a.len()],
                    TensorRef::A2(a) => a.shape().to_vec(),
                };
                (name, shape)
            })
            .collect()
    }

    /// Flat views of every tensor in canonical order.
    pub fn flat(&self) -> Vec<&[f64]> {
        self.tensor_refs()
            .into_iter()
            .map(|(_, t)| match t {
                TensorRef::A1(a) => a.as_slice().unwrap(),
                TensorRef::A2(a) => a.as_slice().unwrap(),
            })
            .collect()
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.tok_emb.as_slice_mut().unwrap(),
            self.pos_emb.as_slice_mut().unwrap(),
        ];
        for b in &mut self.blocks {
            out.push(b.ln1_g.as_slice_mut().unwrap());
            out.push(b.ln1_b.as_slice_mut().unwrap());
            out.push(b.w_qkv.as_slice_mut().unwrap());
            out.push(b.b_qkv.as_slice_mut().unwrap());
            out.push(b.w_o.as_slice_mut().unwrap());
            out.push(b.b_o.as_slice_mut().unwrap());
            out.push(b.ln2_g.as_slice_mut().unwrap());
            out.push(b.ln2_b.as_slice_mut().unwrap());
            out.push(b.w_fc1.as_slice_mut().unwrap());
            out.push(b.b_fc1.as_slice_mut().unwrap());
            out.push(b.w_fc2.as_slice_mut().unwrap());
            out.push(b.b_fc2.as_slice_mut().unwrap());
        }
        out.push(self.lnf_g.as_slice_mut().unwrap());
        out.push(self.lnf_b.as_slice_mut().unwrap());
        out.push(self.unembed.as_slice_mut().unwrap());
        out
    }

    /// Parameter count via an explicit walk over the stored tensors,
    /// excluding the embedding tables; must equal the analytic formula.
    pub fn walked_nonembedding_params(&self) -> usize {
        self.tensor_refs()
            .iter()
            .filter(|(name, _)| !matches!(name.as_str(), "tok_emb" | "pos_emb" | "unembed"))
            .map(|(_, t)| match t {
                TensorRef::A1(a) => a.len(),
                TensorRef::A2(a) => a.len(),
            })
            .sum()
    }

    pub fn num_tensors(&self) -> usize {
        self.cfg.n_layers * 12 + 5
    }
}

fn layer_norm(
    x: &Array2<f64>,
    g: &Array1<f64>,
    b: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * *inv);
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        row.zip_mut_with(&g.view(), |v, &gi| *v *= gi);
        row.zip_mut_with(&b.view(), |v, &bi| *v += bi);
    }
    (y, xhat, inv_std)
}

/// dL/dx for layer norm; accumulates parameter grads into `dg`/`db`.
fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    inv_std: &Array1<f64>,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    for (dy_row, xhat_row) in dy.rows().into_iter().zip(xhat.rows()) {
        for i in 0..dy_row.len() {
            dg[i] += dy_row[i] * xhat_row[i];
            db[i] += dy_row[i];
        }
    }
    let mut dx = Array2::zeros(dy.raw_dim());
    for ((dy_row, xhat_row), (mut dx_row, &inv)) in dy
        .rows()
        .into_iter()
        .zip(xhat.rows())
        .zip(dx.rows_mut().into_iter().zip(inv_std.iter()))
    {
        let mut dxhat = Array1::zeros(dy_row.len());
        for i in 0..dy_row.len() {
            dxhat[i] = dy_row[i] * g[i];
        }
        let mean_dxhat = dxhat.sum() / d;
        let mean_dxhat_xhat = dxhat
            .iter()
            .zip(xhat_row.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        for i in 0..dy_row.len() {
            dx_row[i] = inv * (dxhat[i] - mean_dxhat - xhat_row[i] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

struct BlockCache {
    x_in: Array2<f64>,
    ln1_xhat: Array2<f64>,
    ln1_inv: Array1<f64>,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    /// softmax attention weights, one [T, T] matrix per (batch, head)
    att: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2_xhat: Array2<f64>,
    ln2_inv: Array1<f64>,
    h2: Array2<f64>,
    a1: Array2<f64>,
}

/// Forward-pass state retained for the backward pass. `hidden` is the
/// post-final-norm representation that both the LM unembedding and detector
/// readouts consume.
pub struct ForwardCache {
    pub batch: usize,
    pub seq_len: usize,
    ids: Array2<usize>,
    blocks: Vec<BlockCache>,
    lnf_xhat: Array2<f64>,
    lnf_inv: Array1<f64>,
    pub hidden: Array2<f64>,
}

impl ModelParams {
    /// Runs the transformer on a [B, T] batch of token IDs, returning cached
    /// activations and the final hidden states ([B*T, d], post final norm).
    pub fn forward(&self, ids: &Array2<usize>) -> ForwardCache {
        let (batch, seq_len) = ids.dim();
        assert!(seq_len <= self.cfg.context_len, "sequence exceeds context");
        let d = self.cfg.d_model;
        let n = batch * seq_len;

        let mut x = Array2::zeros((n, d));
        for b in 0..batch {
            for t in 0..seq_len {
                let id = ids[(b, t)];
                let mut row = x.row_mut(b * seq_len + t);
                row.assign(&self.tok_emb.row(id));
                row += &self.pos_emb.row(t);
            }
        }

        let mut blocks = Vec::with_capacity(self.cfg.n_layers);
        for blk in &self.blocks {
            let x_in = x;
            let (h1, ln1_xhat, ln1_inv) = layer_norm(&x_in, &blk.ln1_g, &blk.ln1_b);
            let mut qkv = h1.dot(&blk.w_qkv);
            for mut row in qkv.rows_mut() {
                row += &blk.b_qkv.view();
            }
            let (att, ctx) = self.attention(&qkv, batch, seq_len);
            let mut attn_out = ctx.dot(&blk.w_o);
            for mut row in attn_out.rows_mut() {
                row += &blk.b_o.view();
            }
            let x_mid = &x_in + &attn_out;
            let (h2, ln2_xhat, ln2_inv) = layer_norm(&x_mid, &blk.ln2_g, &blk.ln2_b);
            let mut a1 = h2.dot(&blk.w_fc1);
            for mut row in a1.rows_mut() {
                row += &blk.b_fc1.view();
            }
            let act = a1.mapv(gelu);
            let mut mlp = act.dot(&blk.w_fc2);
            for mut row in mlp.rows_mut() {
                row += &blk.b_fc2.view();
            }
            x = &x_mid + &mlp;
            blocks.push(BlockCache {
                x_in,
                ln1_xhat,
                ln1_inv,
                h1,
                qkv,
                att,
                ctx,
                ln2_xhat,
                ln2_inv,
                h2,
                a1,
            });
        }

        let (hidden, lnf_xhat, lnf_inv) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        ForwardCache {
            batch,
            seq_len,
            ids: ids.clone(),
            blocks,
            lnf_xhat,
            lnf_inv,
            hidden,
        }
    }

    fn attention(
        &self,
        qkv: &Array2<f64>,
        batch: usize,
        seq_len: usize,
    ) -> (Vec<Array2<f64>>, Array2<f64>) {
        let d = self.cfg.d_model;
        let heads = self.cfg.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Array2::zeros((batch * seq_len, d));
        let mut att_all = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let r0 = b * seq_len;
            let r1 = (b + 1) * seq_len;
            for h in 0..heads {
                let q = qkv.slice(s![r0..r1, h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![r0..r1, d + h * dh..d + (h + 1) * dh]);
                let v = qkv.slice(s![r0..r1, 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let mut scores = q.dot(&k.t());
                scores *= scale;
                // causal mask + row softmax
                for i in 0..seq_len {
                    let mut row = scores.row_mut(i);
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=i {
                        max = max.max(row[j]);
                    }
                    let mut sum = 0.0;
                    for j in 0..seq_len {
                        if j <= i {
                            row[j] = (row[j] - max).exp();
                            sum += row[j];
                        } else {
                            row[j] = 0.0;
                        }
                    }
                    for j in 0..=i {
                        row[j] /= sum;
                    }
                }
                let head_ctx = scores.dot(&v);
                ctx.slice_mut(s![r0..r1, h * dh..(h + 1) * dh])
                    .assign(&head_ctx);
                att_all.push(scores);
            }
        }
        (att_all, ctx)
    }

    /// Logits from hidden states: `hidden @ unembed`.
    pub fn logits(&self, hidden: &Array2<f64>) -> Array2<f64> {
        hidden.dot(&self.unembed)
    }

    /// Backpropagates from a gradient on `hidden` (the post-final-norm
    /// states), accumulating parameter gradients into `grads`. The gradient
    /// w.r.t. the unembedding is the caller's job (it owns dlogits).
    pub fn backward(&self, cache: &ForwardCache, d_hidden: &Array2<f64>, grads: &mut ModelParams) {
        let d = self.cfg.d_model;
        let heads = self.cfg.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let batch = cache.batch;
        let seq_len = cache.seq_len;

        let mut dx = layer_norm_backward(
            d_hidden,
            &cache.lnf_xhat,
            &cache.lnf_inv,
            &self.lnf_g,
            &mut grads.lnf_g,
            &mut grads.lnf_b,
        );

        for (bi, (blk, cacheb)) in self
            .blocks
            .iter()
            .zip(cache.blocks.iter())
            .enumerate()
            .rev()
        {
            let gblk = &mut grads.blocks[bi];
            // MLP branch
            let act = cacheb.a1.mapv(gelu);
            gblk.w_fc2 += &act.t().dot(&dx);
            gblk.b_fc2 += &dx.sum_axis(Axis(0));
            let mut d_a1 = dx.dot(&blk.w_fc2.t());
            d_a1.zip_mut_with(&cacheb.a1, |g, &a| *g *= gelu_grad(a));
            gblk.w_fc1 += &cacheb.h2.t().dot(&d_a1);
            gblk.b_fc1 += &d_a1.sum_axis(Axis(0));
            let d_h2 = d_a1.dot(&blk.w_fc1.t());
            let d_from_ln2 = layer_norm_backward(
                &d_h2,
                &cacheb.ln2_xhat,
                &cacheb.ln2_inv,
                &blk.ln2_g,
                &mut gblk.ln2_g,
                &mut gblk.ln2_b,
            );
            let d_xmid = &dx + &d_from_ln2;

            // Attention branch
            gblk.w_o += &cacheb.ctx.t().dot(&d_xmid);
            gblk.b_o += &d_xmid.sum_axis(Axis(0));
            let d_ctx = d_xmid.dot(&blk.w_o.t());
            let mut d_qkv = Array2::zeros((batch * seq_len, 3 * d));
            for b in 0..batch {
                let r0 = b * seq_len;
                let r1 = (b + 1) * seq_len;
                for h in 0..heads {
                    let att = &cacheb.att[b * heads + h];
                    let q = cacheb.qkv.slice(s![r0..r1, h * dh..(h + 1) * dh]);
                    let k = cacheb.qkv.slice(s![r0..r1, d + h * dh..d + (h + 1) * dh]);
                    let v = cacheb
                        .qkv
                        .slice(s![r0..r1, 2 * d + h * dh..2 * d + (h + 1) * dh]);
                    let d_head_ctx = d_ctx.slice(s![r0..r1, h * dh..(h + 1) * dh]);
                    let d_att = d_head_ctx.dot(&v.t());
                    let d_v = att.t().dot(&d_head_ctx);
                    // softmax backward per row; masked entries have att = 0
                    let mut d_scores = Array2::zeros((seq_len, seq_len));
                    for i in 0..seq_len {
                        let a_row = att.row(i);
                        let da_row = d_att.row(i);
                        let dot = a_row
                            .iter()
                            .zip(da_row.iter())
                            .map(|(a, g)| a * g)
                            .sum::<f64>();
                        for j in 0..=i {
                            d_scores[(i, j)] = a_row[j] * (da_row[j] - dot) * scale;
                        }
                    }
                    let d_q = d_scores.dot(&k);
                    let d_k = d_scores.t().dot(&q);
                    d_qkv
                        .slice_mut(s![r0..r1, h * dh..(h + 1) * dh])
                        .assign(&d_q);
                    d_qkv
                        .slice_mut(s![r0..r1, d + h * dh..d + (h + 1) * dh])
                        .assign(&d_k);
                    d_qkv
                        .slice_mut(s![r0..r1, 2 * d + h * dh..2 * d + (h + 1) * dh])
                        .assign(&d_v);
                }
            }
            gblk.w_qkv += &cacheb.h1.t().dot(&d_qkv);
            gblk.b_qkv += &d_qkv.sum_axis(Axis(0));
            let d_h1 = d_qkv.dot(&blk.w_qkv.t());
            let d_from_ln1 = layer_norm_backward(
                &d_h1,
                &cacheb.ln1_xhat,
                &cacheb.ln1_inv,
                &blk.ln1_g,
                &mut gblk.ln1_g,
                &mut gblk.ln1_b,
            );
            dx = &d_xmid + &d_from_ln1;
        }

        // Embedding gradients
        for b in 0..batch {
            for t in 0..seq_len {
                let id = cache.ids[(b, t)];
                let d_row = dx.row(b * seq_len + t);
                let mut emb_row = grads.tok_emb.row_mut(id);
                emb_row += &d_row;
                let mut pos_row = grads.pos_emb.row_mut(t);
                pos_row += &d_row;
            }
        }
    }

    /// Forward-only feature extraction for head detectors: the residual
    /// stream after 1-based block `tap`, or the post-final-norm hidden
    /// states when `tap == n_layers` (the same representation the LM readout
    /// sees).
    pub fn features(&self, ids: &Array2<usize>, tap: usize) -> Array2<f64> {
        assert!(tap >= 1 && tap <= self.cfg.n_layers, "tap out of range");
        let cache = self.forward(ids);
        if tap == self.cfg.n_layers {
            cache.hidden
        } else {
            cache.blocks[tap].x_in.clone()
        }
    }
}

/// Next-token cross-entropy over a [B, T] batch. `mask[b, t]` marks
/// positions whose *target* (the token at t+1) participates; the final
/// position of each row never does. Returns (mean loss over masked targets,
/// dlogits scaled for that mean).
pub fn lm_loss(
    logits: &Array2<f64>,
    ids: &Array2<usize>,
    mask: &Array2<bool>,
) -> (f64, Array2<f64>, usize) {
    let (batch, seq_len) = ids.dim();
    let vocab = logits.ncols();
    let mut n_targets = 0usize;
    for b in 0..batch {
        for t in 0..seq_len - 1 {
            if mask[(b, t)] {
                n_targets += 1;
            }
        }
    }
    let mut dlogits = Array2::zeros(logits.raw_dim());
    if n_targets == 0 {
        return (0.0, dlogits, 0);
    }
    let inv_n = 1.0 / n_targets as f64;
    let mut loss = 0.0;
    for b in 0..batch {
        for t in 0..seq_len - 1 {
            if !mask[(b, t)] {
                continue;
            }
            let row = logits.row(b * seq_len + t);
            let target = ids[(b, t + 1)];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &z in row.iter() {
                sum += (z - max).exp();
            }
            let log_z = max + sum.ln();
            loss += log_z - row[target];
            let mut d_row = dlogits.row_mut(b * seq_len + t);
            for j in 0..vocab {
                d_row[j] = ((row[j] - max).exp() / sum) * inv_n;
            }
            d_row[target] -= inv_n;
        }
    }
    (loss * inv_n, dlogits, n_targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            context_len: 12,
            vocab_size: 23,
            seed: 7,
        }
    }

    fn tiny_batch(cfg: &ModelConfig) -> (Array2<usize>, Array2<bool>) {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (b, t) = (2, cfg.context_len);
        let ids = Array2::from_shape_simple_fn((b, t), || rng.gen_range(0..cfg.vocab_size));
        let mask = Array2::from_elem((b, t), true);
        (ids, mask)
    }

    fn loss_of(params: &ModelParams, ids: &Array2<usize>, mask: &Array2<bool>) -> f64 {
        let cache = params.forward(ids);
        let logits = params.logits(&cache.hidden);
        lm_loss(&logits, ids, mask).0
    }

    #[test]
    fn param_count_matches_walk() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        assert_eq!(cfg.nonembedding_params(), params.walked_nonembedding_params());
        let flat_total: usize = params.flat().iter().map(|s| s.len()).sum();
        assert_eq!(flat_total, cfg.total_params());
    }

    #[test]
    fn flops_per_token_is_six_n() {
        let mut cfg = tiny_cfg();
        cfg.d_ff = 100;
        let n = cfg.nonembedding_params();
        assert_eq!(cfg.flops_per_token(), 6.0 * n as f64);
        // doubling d_ff adds exactly 6 x the added parameters
        let mut cfg2 = cfg.clone();
        cfg2.d_ff = 200;
        let added = cfg2.nonembedding_params() - n;
        assert_eq!(cfg2.flops_per_token() - cfg.flops_per_token(), 6.0 * added as f64);
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (ids, mask) = tiny_batch(&cfg);
        let loss = loss_of(&params, &ids, &mask);
        let uniform = (cfg.vocab_size as f64).ln();
        assert!(
            (loss - uniform).abs() <= 0.05 * uniform,
            "initial loss {loss} not within 5% of ln(V) = {uniform}"
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (ids, _) = tiny_batch(&cfg);
        let cache = params.forward(&ids);
        for att in &cache.blocks[0].att {
            for (i, row) in att.rows().into_iter().enumerate() {
                let sum: f64 = row.sum();
                assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
                for j in i + 1..row.len() {
                    assert_eq!(row[j], 0.0, "causal mask violated at ({i}, {j})");
                }
            }
        }
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let cfg = tiny_cfg();
        let mut params = ModelParams::init(&cfg).unwrap();
        let (ids, mask) = tiny_batch(&cfg);

        let mut grads = params.zeros_like();
        let cache = params.forward(&ids);
        let logits = params.logits(&cache.hidden);
        let (_, dlogits, _) = lm_loss(&logits, &ids, &mask);
        grads.unembed += &cache.hidden.t().dot(&dlogits);
        let d_hidden = dlogits.dot(&params.unembed.t());
        params.backward(&cache, &d_hidden, &mut grads);

        let lens: Vec<usize> = params.flat().iter().map(|s| s.len()).collect();
        let total: usize = lens.iter().sum();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        while checked < 120 {
            let flat_idx = rng.gen_range(0..total);
            let mut ti = 0;
            let mut off = flat_idx;
            while off >= lens[ti] {
                off -= lens[ti];
                ti += 1;
            }
            let analytic = grads.flat()[ti][off];
            let eps = 1e-5;
            let orig = params.flat()[ti][off];
            params.flat_mut()[ti][off] = orig + eps;
            let up = loss_of(&params, &ids, &mask);
            params.flat_mut()[ti][off] = orig - eps;
            let down = loss_of(&params, &ids, &mask);
            params.flat_mut()[ti][off] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            worst = worst.max(rel);
            assert!(
                rel <= 1e-4,
                "tensor {ti} offset {off}: analytic {analytic} vs numeric {numeric} (rel {rel})"
            );
            checked += 1;
        }
        assert!(checked >= 100, "checked only {checked} parameters");
        assert!(worst < 1e-4);
    }

    #[test]
    fn loss_is_equivariant_under_vocab_relabeling() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (ids, mask) = tiny_batch(&cfg);
        let base = loss_of(&params, &ids, &mask);

        // permute vocabulary ids and the embedding/unembedding rows/cols
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut perm: Vec<usize> = (0..cfg.vocab_size).collect();
        perm.shuffle(&mut rng);
        let mut permuted = params.clone();
        for v in 0..cfg.vocab_size {
            permuted.tok_emb.row_mut(perm[v]).assign(&params.tok_emb.row(v));
            permuted
                .unembed
                .column_mut(perm[v])
                .assign(&params.unembed.column(v));
        }
        let ids_perm = ids.mapv(|v| perm[v]);
        let with_perm = loss_of(&permuted, &ids_perm, &mask);
        assert!(
            (base - with_perm).abs() <= 1e-10 * base.abs().max(1.0),
            "loss changed under relabeling: {base} vs {with_perm}"
        );
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (ids, mask) = tiny_batch(&cfg);
        let a = loss_of(&params, &ids, &mask);
        let b = loss_of(&params, &ids, &mask);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
