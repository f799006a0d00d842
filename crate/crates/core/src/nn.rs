//! Hand-rolled neural building blocks with explicit backward passes.
//!
//! No autograd: every forward returns the cache its backward needs, and every
//! backward accumulates parameter gradients in place and returns the input
//! gradient. All gradients are verified against central finite differences in
//! tests, which is the contract the rest of the workspace relies on.

use crate::mat::{softmax_rows, Mat};
use rand::Rng;

/// A learnable tensor with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Mat,
    pub grad: Mat,
    adam_m: Mat,
    adam_v: Mat,
}

impl Param {
    pub fn new(value: Mat) -> Self {
        let grad = Mat::zeros(value.rows(), value.cols());
        let adam_m = grad.clone();
        let adam_v = grad.clone();
        Param { value, grad, adam_m, adam_v }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Replaces the value (e.g. from a checkpoint) and resets transient state.
    pub fn load(&mut self, value: Mat) {
        assert_eq!(
            (value.rows(), value.cols()),
            (self.value.rows(), self.value.cols()),
            "checkpoint tensor shape mismatch"
        );
        self.grad = Mat::zeros(value.rows(), value.cols());
        self.adam_m = self.grad.clone();
        self.adam_v = self.grad.clone();
        self.value = value;
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0 }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for p in params {
            for i in 0..p.value.rows() {
                for j in 0..p.value.cols() {
                    let g = p.grad.get(i, j);
                    let m = self.beta1 * p.adam_m.get(i, j) + (1.0 - self.beta1) * g;
                    let v = self.beta2 * p.adam_v.get(i, j) + (1.0 - self.beta2) * g * g;
                    p.adam_m.set(i, j, m);
                    p.adam_v.set(i, j, v);
                    let update = (m / bc1) / ((v / bc2).sqrt() + self.eps);
                    p.value.set(i, j, p.value.get(i, j) - self.lr * update);
                }
            }
        }
    }
}

/// Dense layer `y = x · Wᵀ (+ b)`; `W` is `out×in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, std: f64, bias: bool, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::new(Mat::randn(out_dim, in_dim, std, rng)),
            bias: if bias { Some(Param::new(Mat::zeros(1, out_dim))) } else { None },
        }
    }

    /// Rectangular identity weight plus optional Gaussian jitter.
    pub fn near_identity(
        in_dim: usize,
        out_dim: usize,
        jitter: f64,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = Mat::eye(out_dim, in_dim);
        if jitter > 0.0 {
            w.add_assign(&Mat::randn(out_dim, in_dim, jitter, rng));
        }
        Linear {
            weight: Param::new(w),
            bias: if bias { Some(Param::new(Mat::zeros(1, out_dim))) } else { None },
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.matmul_nt(&self.weight.value);
        if let Some(b) = &self.bias {
            y.add_row_vec(b.value.row(0));
        }
        y
    }

    /// Accumulates dW (and db), returns dx.
    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        // y = x Wᵀ  →  dW = dyᵀ x,  dx = dy W.
        self.weight.grad.add_assign(&dy.matmul_tn(x));
        if let Some(b) = &mut self.bias {
            for i in 0..dy.rows() {
                for (j, &g) in dy.row(i).iter().enumerate() {
                    b.grad.add_at(0, j, g);
                }
            }
        }
        dy.matmul(&self.weight.value)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
        out
    }
}

/// Per-row layer normalization with learnable gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

pub struct LayerNormCache {
    normalized: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Mat::from_fn(1, dim, |_, _| 1.0)),
            beta: Param::new(Mat::zeros(1, dim)),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.cols();
        let mut normalized = Mat::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        let mut out = Mat::zeros(x.rows(), d);
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std.push(istd);
            for j in 0..d {
                let xhat = (row[j] - mean) * istd;
                normalized.set(i, j, xhat);
                out.set(i, j, self.gamma.value.get(0, j) * xhat + self.beta.value.get(0, j));
            }
        }
        (out, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Mat) -> Mat {
        let d = dy.cols();
        let mut dx = Mat::zeros(dy.rows(), d);
        for i in 0..dy.rows() {
            let xhat = cache.normalized.row(i);
            let dyr = dy.row(i);
            let mut dxhat = vec![0.0; d];
            for j in 0..d {
                self.gamma.grad.add_at(0, j, dyr[j] * xhat[j]);
                self.beta.grad.add_at(0, j, dyr[j]);
                dxhat[j] = dyr[j] * self.gamma.value.get(0, j);
            }
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat =
                dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for j in 0..d {
                dx.set(
                    i,
                    j,
                    cache.inv_std[i] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat),
                );
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Scaled-dot multi-head attention (projections without biases, so zeroing a
/// value projection nulls the path exactly).
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

pub struct AttentionCache {
    q: Mat,
    k: Mat,
    v: Mat,
    /// Per head: row-softmaxed weights (query_len × key_len).
    weights: Vec<Mat>,
    concat: Mat,
    causal: bool,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads >= 1 && dim % heads == 0, "dim must divide evenly into heads");
        let std = (1.0 / dim as f64).sqrt();
        MultiHeadAttention {
            wq: Linear::new(dim, dim, std, false, rng),
            wk: Linear::new(dim, dim, std, false, rng),
            wv: Linear::new(dim, dim, std, false, rng),
            wo: Linear::new(dim, dim, std, false, rng),
            heads,
        }
    }

    /// `query_in` attends over `kv_in`. With `causal`, position i only sees
    /// kv positions ≤ i (valid for self-attention where lengths match).
    pub fn forward(&self, query_in: &Mat, kv_in: &Mat, causal: bool) -> (Mat, AttentionCache) {
        let dim = self.wq.out_dim();
        let hd = dim / self.heads;
        let q = self.wq.forward(query_in);
        let k = self.wk.forward(kv_in);
        let v = self.wv.forward(kv_in);
        let scale = 1.0 / (hd as f64).sqrt();
        let mut concat = Mat::zeros(q.rows(), dim);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * hd;
            let mut scores = Mat::zeros(q.rows(), k.rows());
            for i in 0..q.rows() {
                for j in 0..k.rows() {
                    if causal && j > i {
                        scores.set(i, j, f64::NEG_INFINITY);
                        continue;
                    }
                    let mut s = 0.0;
                    for p in 0..hd {
                        s += q.get(i, off + p) * k.get(j, off + p);
                    }
                    scores.set(i, j, s * scale);
                }
            }
            softmax_rows(&mut scores);
            for i in 0..q.rows() {
                for p in 0..hd {
                    let mut s = 0.0;
                    for j in 0..k.rows() {
                        s += scores.get(i, j) * v.get(j, off + p);
                    }
                    concat.set(i, off + p, s);
                }
            }
            weights.push(scores);
        }
        let out = self.wo.forward(&concat);
        (out, AttentionCache { q, k, v, weights, concat, causal })
    }

    /// Returns (d_query_in, d_kv_in).
    pub fn backward(
        &mut self,
        query_in: &Mat,
        kv_in: &Mat,
        cache: &AttentionCache,
        dout: &Mat,
    ) -> (Mat, Mat) {
        let dim = self.wq.out_dim();
        let hd = dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let dconcat = self.wo.backward(&cache.concat, dout);
        let mut dq = Mat::zeros(cache.q.rows(), dim);
        let mut dk = Mat::zeros(cache.k.rows(), dim);
        let mut dv = Mat::zeros(cache.v.rows(), dim);
        for h in 0..self.heads {
            let off = h * hd;
            let w = &cache.weights[h];
            // dV and dW from concat = W · V_head.
            let mut dw = Mat::zeros(w.rows(), w.cols());
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    let mut s = 0.0;
                    for p in 0..hd {
                        s += dconcat.get(i, off + p) * cache.v.get(j, off + p);
                    }
                    dw.set(i, j, s);
                    let wij = w.get(i, j);
                    if wij != 0.0 {
                        for p in 0..hd {
                            dv.add_at(j, off + p, wij * dconcat.get(i, off + p));
                        }
                    }
                }
            }
            // Softmax backward per row, then into q/k.
            for i in 0..w.rows() {
                let wr = w.row(i);
                let dwr = dw.row(i);
                let inner: f64 = wr.iter().zip(dwr).map(|(a, b)| a * b).sum();
                for j in 0..w.cols() {
                    if cache.causal && j > i {
                        continue;
                    }
                    let dscore = wr[j] * (dwr[j] - inner) * scale;
                    if dscore == 0.0 {
                        continue;
                    }
                    for p in 0..hd {
                        dq.add_at(i, off + p, dscore * cache.k.get(j, off + p));
                        dk.add_at(j, off + p, dscore * cache.q.get(i, off + p));
                    }
                }
            }
        }
        let dq_in = self.wq.backward(query_in, &dq);
        let dk_in = self.wk.backward(kv_in, &dk);
        let dv_in = self.wv.backward(kv_in, &dv);
        (dq_in, dk_in.add(&dv_in))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.wq.params_mut();
        out.extend(self.wk.params_mut());
        out.extend(self.wv.params_mut());
        out.extend(self.wo.params_mut());
        out
    }
}

/// Two-layer ReLU feed-forward.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

pub struct FeedForwardCache {
    hidden_pre: Mat,
    hidden: Mat,
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            lin1: Linear::new(dim, hidden, (1.0 / dim as f64).sqrt(), true, rng),
            lin2: Linear::new(hidden, dim, (1.0 / hidden as f64).sqrt(), true, rng),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, FeedForwardCache) {
        let hidden_pre = self.lin1.forward(x);
        let hidden = hidden_pre.map(|v| v.max(0.0));
        let out = self.lin2.forward(&hidden);
        (out, FeedForwardCache { hidden_pre, hidden })
    }

    pub fn backward(&mut self, x: &Mat, cache: &FeedForwardCache, dy: &Mat) -> Mat {
        let dhidden = self.lin2.backward(&cache.hidden, dy);
        let mut dpre = dhidden;
        for i in 0..dpre.rows() {
            for j in 0..dpre.cols() {
                if cache.hidden_pre.get(i, j) <= 0.0 {
                    dpre.set(i, j, 0.0);
                }
            }
        }
        self.lin1.backward(x, &dpre)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.lin1.params_mut();
        out.extend(self.lin2.params_mut());
        out
    }
}

/// Post-norm transformer encoder block: `ln1(x + attn(x))`, `ln2(h + ff(h))`.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

pub struct EncoderBlockCache {
    input: Mat,
    attn: AttentionCache,
    ln1: LayerNormCache,
    h: Mat,
    ff: FeedForwardCache,
    ln2: LayerNormCache,
}

impl EncoderBlock {
    pub fn new(dim: usize, heads: usize, ff_hidden: usize, rng: &mut impl Rng) -> Self {
        EncoderBlock {
            attn: MultiHeadAttention::new(dim, heads, rng),
            ln1: LayerNorm::new(dim),
            ff: FeedForward::new(dim, ff_hidden, rng),
            ln2: LayerNorm::new(dim),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, EncoderBlockCache) {
        let (attn_out, attn_cache) = self.attn.forward(x, x, false);
        let res1 = x.add(&attn_out);
        let (h, ln1_cache) = self.ln1.forward(&res1);
        let (ff_out, ff_cache) = self.ff.forward(&h);
        let res2 = h.add(&ff_out);
        let (out, ln2_cache) = self.ln2.forward(&res2);
        (
            out,
            EncoderBlockCache {
                input: x.clone(),
                attn: attn_cache,
                ln1: ln1_cache,
                h,
                ff: ff_cache,
                ln2: ln2_cache,
            },
        )
    }

    pub fn backward(&mut self, cache: &EncoderBlockCache, dy: &Mat) -> Mat {
        let dres2 = self.ln2.backward(&cache.ln2, dy);
        let dff_in = self.ff.backward(&cache.h, &cache.ff, &dres2);
        let dh = dres2.add(&dff_in);
        let dres1 = self.ln1.backward(&cache.ln1, &dh);
        let (dq, dkv) = self.attn.backward(&cache.input, &cache.input, &cache.attn, &dres1);
        dres1.add(&dq).add(&dkv)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.attn.params_mut();
        out.extend(self.ln1.params_mut());
        out.extend(self.ff.params_mut());
        out.extend(self.ln2.params_mut());
        out
    }
}

/// Softmax cross-entropy over logits rows against target ids.
/// Returns (mean loss, dlogits).
pub fn softmax_cross_entropy(logits: &Mat, targets: &[usize]) -> (f64, Mat) {
    assert_eq!(logits.rows(), targets.len());
    let n = targets.len() as f64;
    let mut probs = logits.clone();
    softmax_rows(&mut probs);
    let mut loss = 0.0;
    let mut dlogits = probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        let p = probs.get(i, t).max(1e-300);
        loss -= p.ln();
        dlogits.add_at(i, t, -1.0);
    }
    (loss / n, dlogits.scale(1.0 / n))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
