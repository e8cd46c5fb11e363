use ndarray::{s, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{softmax_rows, Linear, LinearCache, TensorSet};

/// Multi-head self-attention over a (seq × width) token matrix.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

pub struct AttentionCache {
    cq: LinearCache,
    ck: LinearCache,
    cv: LinearCache,
    co: LinearCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
}

impl AttentionCache {
    /// Per-head row-stochastic attention matrices, for visualization.
    pub fn attention_probs(&self) -> &[Array2<f64>] {
        &self.probs
    }
}

impl MultiHeadAttention {
    pub fn init<R: Rng>(width: usize, heads: usize, rng: &mut R) -> Self {
        assert!(width % heads == 0, "heads must divide width");
        MultiHeadAttention {
            wq: Linear::init(width, width, rng),
            wk: Linear::init(width, width, rng),
            wv: Linear::init(width, width, rng),
            wo: Linear::init(width, width, rng),
            heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        MultiHeadAttention {
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
            heads: self.heads,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let (s_len, width) = x.dim();
        let dh = width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let (q, cq) = self.wq.forward(x);
        let (k, ck) = self.wk.forward(x);
        let (v, cv) = self.wv.forward(x);

        let mut ctx = Array2::zeros((s_len, width));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()) * scale;
            let p = softmax_rows(&scores);
            let ctx_h = p.dot(&vh);
            ctx.slice_mut(cols).assign(&ctx_h);
            probs.push(p);
        }
        let (y, co) = self.wo.forward(&ctx);
        (y, AttentionCache { cq, ck, cv, co, q, k, v, probs })
    }

    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy: &Array2<f64>,
        grad: &mut MultiHeadAttention,
    ) -> Array2<f64> {
        let (s_len, width) = dy.dim();
        let dh = width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let dctx = self.wo.backward(&cache.co, dy, &mut grad.wo);

        let mut dq = Array2::zeros((s_len, width));
        let mut dk = Array2::zeros((s_len, width));
        let mut dv = Array2::zeros((s_len, width));
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &cache.probs[h];
            let vh = cache.v.slice(cols);
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let dctx_h = dctx.slice(cols);

            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let dp = dctx_h.dot(&vh.t());

            // softmax rows: ds = p ⊙ (dp − Σ_j dp ⊙ p)
            let row_dot = (&dp * p).sum_axis(Axis(1));
            let mut dscores = dp;
            dscores -= &row_dot.insert_axis(Axis(1));
            dscores *= p;
            dscores *= scale;

            dq.slice_mut(cols).assign(&dscores.dot(&kh));
            dk.slice_mut(cols).assign(&dscores.t().dot(&qh));
        }

        let mut dx = self.wq.backward(&cache.cq, &dq, &mut grad.wq);
        dx += &self.wk.backward(&cache.ck, &dk, &mut grad.wk);
        dx += &self.wv.backward(&cache.cv, &dv, &mut grad.wv);
        dx
    }
}

impl TensorSet for MultiHeadAttention {
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (prefix, l) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            for (name, t) in l.named_tensors() {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        out.extend(self.wq.tensors_mut());
        out.extend(self.wk.tensors_mut());
        out.extend(self.wv.tensors_mut());
        out.extend(self.wo.tensors_mut());
        out
    }
}
