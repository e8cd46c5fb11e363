use ndarray::{Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::{gelu, gelu_backward, AttentionCache, LayerNorm, Linear, LinearCache, MultiHeadAttention, NormCache, TensorSet};

/// Pre-norm transformer encoder block:
/// `x + attn(norm1(x))` followed by `· + mlp(norm2(·))`.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct BlockCache {
    n1: NormCache,
    attn: AttentionCache,
    n2: NormCache,
    c1: LinearCache,
    pre_act: Array2<f64>,
    c2: LinearCache,
}

impl BlockCache {
    pub fn attention(&self) -> &AttentionCache {
        &self.attn
    }
}

impl EncoderBlock {
    pub fn init<R: Rng>(width: usize, heads: usize, mlp_ratio: usize, rng: &mut R) -> Self {
        EncoderBlock {
            norm1: LayerNorm::new(width),
            attn: MultiHeadAttention::init(width, heads, rng),
            norm2: LayerNorm::new(width),
            fc1: Linear::init(width * mlp_ratio, width, rng),
            fc2: Linear::init(width, width * mlp_ratio, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderBlock {
            norm1: self.norm1.zeros_like(),
            attn: self.attn.zeros_like(),
            norm2: self.norm2.zeros_like(),
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, BlockCache) {
        let (a, n1) = self.norm1.forward(x);
        let (attn_out, attn) = self.attn.forward(&a);
        let x1 = x + &attn_out;

        let (m, n2) = self.norm2.forward(&x1);
        let (pre_act, c1) = self.fc1.forward(&m);
        let act = gelu(&pre_act);
        let (mlp_out, c2) = self.fc2.forward(&act);
        let y = &x1 + &mlp_out;
        (y, BlockCache { n1, attn, n2, c1, pre_act, c2 })
    }

    pub fn backward(&self, cache: &BlockCache, dy: &Array2<f64>, grad: &mut EncoderBlock) -> Array2<f64> {
        // mlp branch
        let d_act = self.fc2.backward(&cache.c2, dy, &mut grad.fc2);
        let d_pre = gelu_backward(&cache.pre_act, &d_act);
        let d_m = self.fc1.backward(&cache.c1, &d_pre, &mut grad.fc1);
        let mut dx1 = self.norm2.backward(&cache.n2, &d_m, &mut grad.norm2);
        dx1 += dy; // residual

        // attention branch
        let d_a = self.attn.backward(&cache.attn, &dx1, &mut grad.attn);
        let mut dx = self.norm1.backward(&cache.n1, &d_a, &mut grad.norm1);
        dx += &dx1; // residual
        dx
    }
}

impl TensorSet for EncoderBlock {
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (name, t) in self.norm1.named_tensors() {
            out.push((format!("norm1.{name}"), t));
        }
        for (name, t) in self.attn.named_tensors() {
            out.push((format!("attn.{name}"), t));
        }
        for (name, t) in self.norm2.named_tensors() {
            out.push((format!("norm2.{name}"), t));
        }
        for (name, t) in self.fc1.named_tensors() {
            out.push((format!("fc1.{name}"), t));
        }
        for (name, t) in self.fc2.named_tensors() {
            out.push((format!("fc2.{name}"), t));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        out.extend(self.norm1.tensors_mut());
        out.extend(self.attn.tensors_mut());
        out.extend(self.norm2.tensors_mut());
        out.extend(self.fc1.tensors_mut());
        out.extend(self.fc2.tensors_mut());
        out
    }
}
