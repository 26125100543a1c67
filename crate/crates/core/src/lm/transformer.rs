//! Pre-norm decoder-only transformer in `f64` with a hand-written backward
//! pass.
//!
//! All parameters live in one flat vector; [`Layout`] records where each
//! tensor starts. The order of tensors in the vector is the order they are
//! written to checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_ids, CausalLM, Capabilities, DifferentiableLM};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl TransformerConfig {
    /// 2 layers, 2 heads, d_model 64, d_ff 256, context 256.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ff: 256,
            max_len: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.vocab_size,
            self.n_layers,
            self.n_heads,
            self.d_model,
            self.d_ff,
            self.max_len,
        ];
        if positive.contains(&0) {
            return Err(Error::invalid(format!("transformer sizes must be positive: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid("d_model must be divisible by n_heads"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w_fc: usize,
    b_fc: usize,
    w_proj: usize,
    b_proj: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(c: &TransformerConfig) -> Self {
        let d = c.d_model;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok_emb = take(c.vocab_size * d);
        let pos_emb = take(c.max_len * d);
        let layers = (0..c.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * c.d_ff),
                b_fc: take(c.d_ff),
                w_proj: take(c.d_ff * d),
                b_proj: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let w_out = take(d * c.vocab_size);
        let b_out = take(c.vocab_size);
        Layout {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            total: at,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TinyTransformerLM {
    config: TransformerConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for TinyTransformerLM {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl TinyTransformerLM {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let residual = Normal::new(0.0, INIT_STD / (2.0 * config.n_layers as f64).sqrt()).expect("valid std");
        let d = config.d_model;
        let mut fill = |params: &mut [f64], dist: &Normal<f64>| {
            for p in params {
                *p = dist.sample(&mut rng);
            }
        };
        fill(&mut params[layout.tok_emb..layout.tok_emb + config.vocab_size * d], &normal);
        fill(&mut params[layout.pos_emb..layout.pos_emb + config.max_len * d], &normal);
        for l in &layout.layers {
            params[l.ln1_g..l.ln1_g + d].fill(1.0);
            params[l.ln2_g..l.ln2_g + d].fill(1.0);
            fill(&mut params[l.w_qkv..l.w_qkv + 3 * d * d], &normal);
            fill(&mut params[l.w_o..l.w_o + d * d], &residual);
            fill(&mut params[l.w_fc..l.w_fc + d * config.d_ff], &normal);
            fill(&mut params[l.w_proj..l.w_proj + d * config.d_ff], &residual);
        }
        params[layout.lnf_g..layout.lnf_g + d].fill(1.0);
        fill(&mut params[layout.w_out..layout.w_out + d * config.vocab_size], &normal);
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub(crate) fn from_params(config: TransformerConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    /// `(name, element count)` for each tensor, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, usize)> {
        let c = &self.config;
        let d = c.d_model;
        let mut out = vec![
            ("tok_emb".to_string(), c.vocab_size * d),
            ("pos_emb".to_string(), c.max_len * d),
        ];
        for i in 0..c.n_layers {
            for (name, n) in [
                ("ln1_g", d),
                ("ln1_b", d),
                ("w_qkv", 3 * d * d),
                ("b_qkv", 3 * d),
                ("w_o", d * d),
                ("b_o", d),
                ("ln2_g", d),
                ("ln2_b", d),
                ("w_fc", d * c.d_ff),
                ("b_fc", c.d_ff),
                ("w_proj", c.d_ff * d),
                ("b_proj", d),
            ] {
                out.push((format!("layer{i}.{name}"), n));
            }
        }
        out.push(("lnf_g".to_string(), d));
        out.push(("lnf_b".to_string(), d));
        out.push(("w_out".to_string(), d * c.vocab_size));
        out.push(("b_out".to_string(), c.vocab_size));
        out
    }

    fn check_input(&self, ids: &[TokenId]) -> Result<()> {
        check_ids(ids, self.config.vocab_size)?;
        if ids.len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "sequence of {} tokens exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        Ok(())
    }

    fn forward(&self, input: &[TokenId]) -> Forward {
        let c = &self.config;
        let (n, d) = (input.len(), c.d_model);
        let p = &self.params;
        let mut x = vec![0.0; n * d];
        for (t, &id) in input.iter().enumerate() {
            let tok = &p[self.layout.tok_emb + id as usize * d..][..d];
            let pos = &p[self.layout.pos_emb + t * d..][..d];
            for ((o, a), b) in x[t * d..(t + 1) * d].iter_mut().zip(tok).zip(pos) {
                *o = a + b;
            }
        }
        let mut layers = Vec::with_capacity(c.n_layers);
        for l in &self.layout.layers {
            let (cache, out) = self.layer_forward(l, x, n);
            layers.push(cache);
            x = out;
        }
        let lnf = layer_norm(&x, n, d, &p[self.layout.lnf_g..][..d], &p[self.layout.lnf_b..][..d]);
        let mut logp = linear(
            &lnf.out,
            n,
            d,
            &p[self.layout.w_out..][..d * c.vocab_size],
            &p[self.layout.b_out..][..c.vocab_size],
            c.vocab_size,
        );
        for row in logp.chunks_mut(c.vocab_size) {
            log_softmax_in_place(row);
        }
        Forward { layers, lnf, logp }
    }

    fn layer_forward(&self, l: &LayerOffsets, x_in: Vec<f64>, n: usize) -> (LayerCache, Vec<f64>) {
        let c = &self.config;
        let p = &self.params;
        let d = c.d_model;
        let h = c.n_heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();

        let ln1 = layer_norm(&x_in, n, d, &p[l.ln1_g..][..d], &p[l.ln1_b..][..d]);
        let qkv = linear(&ln1.out, n, d, &p[l.w_qkv..][..3 * d * d], &p[l.b_qkv..][..3 * d], 3 * d);

        let mut att = vec![0.0; h * n * n];
        let mut att_out = vec![0.0; n * d];
        for head in 0..h {
            let (qo, ko, vo) = (head * dh, d + head * dh, 2 * d + head * dh);
            for i in 0..n {
                let q = &qkv[i * 3 * d + qo..][..dh];
                let row = &mut att[(head * n + i) * n..][..n];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let s = dot(q, &qkv[j * 3 * d + ko..][..dh]) * scale;
                    row[j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for r in &mut row[..=i] {
                    *r = (*r - max).exp();
                    z += *r;
                }
                let out = &mut att_out[i * d + head * dh..][..dh];
                for j in 0..=i {
                    row[j] /= z;
                    axpy(out, row[j], &qkv[j * 3 * d + vo..][..dh]);
                }
            }
        }

        let proj = linear(&att_out, n, d, &p[l.w_o..][..d * d], &p[l.b_o..][..d], d);
        let x_mid: Vec<f64> = x_in.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let ln2 = layer_norm(&x_mid, n, d, &p[l.ln2_g..][..d], &p[l.ln2_b..][..d]);
        let fc_pre = linear(&ln2.out, n, d, &p[l.w_fc..][..d * c.d_ff], &p[l.b_fc..][..c.d_ff], c.d_ff);
        let fc_act: Vec<f64> = fc_pre.iter().map(|&v| gelu(v)).collect();
        let mlp = linear(&fc_act, n, c.d_ff, &p[l.w_proj..][..c.d_ff * d], &p[l.b_proj..][..d], d);
        let out: Vec<f64> = x_mid.iter().zip(&mlp).map(|(a, b)| a + b).collect();
        (
            LayerCache {
                ln1,
                qkv,
                att,
                att_out,
                ln2,
                fc_pre,
                fc_act,
            },
            out,
        )
    }

    fn layer_backward(
        &self,
        l: &LayerOffsets,
        cache: &LayerCache,
        dx: Vec<f64>,
        n: usize,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let c = &self.config;
        let p = &self.params;
        let d = c.d_model;
        let h = c.n_heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();

        // MLP branch.
        let mut dfc = linear_backward(
            &cache.fc_act,
            &dx,
            n,
            c.d_ff,
            d,
            &p[l.w_proj..][..c.d_ff * d],
            grad,
            l.w_proj,
            l.b_proj,
        );
        for (g, &pre) in dfc.iter_mut().zip(&cache.fc_pre) {
            *g *= gelu_grad(pre);
        }
        let dln2 = linear_backward(&cache.ln2.out, &dfc, n, d, c.d_ff, &p[l.w_fc..][..d * c.d_ff], grad, l.w_fc, l.b_fc);
        let mut dx_mid = dx;
        layer_norm_backward(&cache.ln2, &dln2, n, d, &p[l.ln2_g..][..d], grad, l.ln2_g, l.ln2_b, &mut dx_mid);

        // Attention branch.
        let datt_out = linear_backward(&cache.att_out, &dx_mid, n, d, d, &p[l.w_o..][..d * d], grad, l.w_o, l.b_o);
        let qkv = &cache.qkv;
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        for head in 0..h {
            let (qo, ko, vo) = (head * dh, d + head * dh, 2 * d + head * dh);
            let ho = head * dh;
            for i in 0..n {
                let probs = &cache.att[(head * n + i) * n..][..=i];
                let dout = &datt_out[i * d + ho..][..dh];
                let mut weighted = 0.0;
                for j in 0..=i {
                    dp[j] = dot(dout, &qkv[j * 3 * d + vo..][..dh]);
                    weighted += probs[j] * dp[j];
                    axpy(&mut dv[j * d + ho..][..dh], probs[j], dout);
                }
                let q = &qkv[i * 3 * d + qo..][..dh];
                for j in 0..=i {
                    let ds = probs[j] * (dp[j] - weighted) * scale;
                    axpy(&mut dq[i * d + ho..][..dh], ds, &qkv[j * 3 * d + ko..][..dh]);
                    axpy(&mut dk[j * d + ho..][..dh], ds, q);
                }
            }
        }
        let mut dqkv = Vec::with_capacity(n * 3 * d);
        for t in 0..n {
            dqkv.extend_from_slice(&dq[t * d..(t + 1) * d]);
            dqkv.extend_from_slice(&dk[t * d..(t + 1) * d]);
            dqkv.extend_from_slice(&dv[t * d..(t + 1) * d]);
        }
        let dln1 = linear_backward(&cache.ln1.out, &dqkv, n, d, 3 * d, &p[l.w_qkv..][..3 * d * d], grad, l.w_qkv, l.b_qkv);
        let mut dx_in = dx_mid;
        layer_norm_backward(&cache.ln1, &dln1, n, d, &p[l.ln1_g..][..d], grad, l.ln1_g, l.ln1_b, &mut dx_in);
        dx_in
    }
}

struct LnCache {
    out: Vec<f64>,
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    ln1: LnCache,
    qkv: Vec<f64>,
    /// Attention probabilities `[head][i][j]`, valid for `j <= i`.
    att: Vec<f64>,
    att_out: Vec<f64>,
    ln2: LnCache,
    fc_pre: Vec<f64>,
    fc_act: Vec<f64>,
}

struct Forward {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    /// Log-softmax rows `[position][vocab]`.
    logp: Vec<f64>,
}

impl CausalLM for TinyTransformerLM {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::invalid("prefix must be nonempty"));
        }
        self.check_input(prefix)?;
        let f = self.forward(prefix);
        let v = self.config.vocab_size;
        Ok(f.logp[(prefix.len() - 1) * v..].to_vec())
    }

    fn token_logprobs(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        self.check_input(ids)?;
        if ids.len() < 2 {
            return Ok(vec![0.0; ids.len()]);
        }
        let f = self.forward(&ids[..ids.len() - 1]);
        Ok(gather(&f.logp, ids, self.config.vocab_size))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            trainable: true,
            differentiable: true,
        }
    }

    fn as_differentiable(&self) -> Option<&dyn DifferentiableLM> {
        Some(self)
    }
}

fn gather(logp: &[f64], ids: &[TokenId], v: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len());
    out.push(0.0);
    for (t, &target) in ids[1..].iter().enumerate() {
        out.push(logp[t * v + target as usize]);
    }
    out
}

impl DifferentiableLM for TinyTransformerLM {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn accumulate_grad(&self, ids: &[TokenId], weights: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        self.check_input(ids)?;
        if weights.len() != ids.len() {
            return Err(Error::invalid("one weight per position required"));
        }
        if grad.len() != self.params.len() {
            return Err(Error::invalid("gradient buffer has the wrong size"));
        }
        if ids.len() < 2 {
            return Ok(vec![0.0; ids.len()]);
        }
        let c = &self.config;
        let (v, d) = (c.vocab_size, c.d_model);
        let input = &ids[..ids.len() - 1];
        let n = input.len();
        let f = self.forward(input);
        let lp = gather(&f.logp, ids, v);

        // d(w · log softmax[target]) / dlogits = w (onehot - softmax)
        let mut dlogits = vec![0.0; n * v];
        for t in 0..n {
            let w = weights[t + 1];
            if w == 0.0 {
                continue;
            }
            let row = &mut dlogits[t * v..(t + 1) * v];
            for (g, &l) in row.iter_mut().zip(&f.logp[t * v..(t + 1) * v]) {
                *g = -w * l.exp();
            }
            row[ids[t + 1] as usize] += w;
        }
        let lo = &self.layout;
        let dlnf = linear_backward(&f.lnf.out, &dlogits, n, d, v, &self.params[lo.w_out..][..d * v], grad, lo.w_out, lo.b_out);
        let mut dx = vec![0.0; n * d];
        layer_norm_backward(&f.lnf, &dlnf, n, d, &self.params[lo.lnf_g..][..d], grad, lo.lnf_g, lo.lnf_b, &mut dx);
        for (l, cache) in lo.layers.iter().zip(&f.layers).rev() {
            dx = self.layer_backward(l, cache, dx, n, grad);
        }
        for (t, &id) in input.iter().enumerate() {
            let row = &dx[t * d..(t + 1) * d];
            axpy(&mut grad[lo.tok_emb + id as usize * d..][..d], 1.0, row);
            axpy(&mut grad[lo.pos_emb + t * d..][..d], 1.0, row);
        }
        Ok(lp)
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[c * 4 + k] * b[c * 4 + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `x[n×k] · w[k×m] + b`.
fn linear(x: &[f64], n: usize, k: usize, w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        out.extend_from_slice(b);
        let row = &mut out[i * m..(i + 1) * m];
        for (kk, &a) in x[i * k..(i + 1) * k].iter().enumerate() {
            if a != 0.0 {
                axpy(row, a, &w[kk * m..(kk + 1) * m]);
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients at `w_off`/`b_off` and returns the
/// input gradient.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    dout: &[f64],
    n: usize,
    k: usize,
    m: usize,
    w: &[f64],
    grad: &mut [f64],
    w_off: usize,
    b_off: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * k];
    for i in 0..n {
        let drow = &dout[i * m..(i + 1) * m];
        axpy(&mut grad[b_off..b_off + m], 1.0, drow);
        let xrow = &x[i * k..(i + 1) * k];
        for kk in 0..k {
            let wrow = &w[kk * m..(kk + 1) * m];
            dx[i * k + kk] = dot(drow, wrow);
            if xrow[kk] != 0.0 {
                axpy(&mut grad[w_off + kk * m..w_off + (kk + 1) * m], xrow[kk], drow);
            }
        }
    }
    dx
}

fn layer_norm(x: &[f64], n: usize, d: usize, g: &[f64], b: &[f64]) -> LnCache {
    let mut out = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for t in 0..n {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[t] = r;
        for i in 0..d {
            let xh = (row[i] - mean) * r;
            xhat[t * d + i] = xh;
            out[t * d + i] = g[i] * xh + b[i];
        }
    }
    LnCache { out, xhat, rstd }
}

/// Adds the input gradient into `dx` and parameter gradients into `grad`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    cache: &LnCache,
    dout: &[f64],
    n: usize,
    d: usize,
    g: &[f64],
    grad: &mut [f64],
    g_off: usize,
    b_off: usize,
    dx: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for t in 0..n {
        let dy = &dout[t * d..(t + 1) * d];
        let xh = &cache.xhat[t * d..(t + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..d {
            grad[g_off + i] += dy[i] * xh[i];
            grad[b_off + i] += dy[i];
            dxhat[i] = dy[i] * g[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let r = cache.rstd[t];
        for i in 0..d {
            dx[t * d + i] += r * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    let lz = max + z.ln();
    for v in row {
        *v -= lz;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
