//! Hand-rolled neural-network layers with explicit backward passes.
//!
//! Every layer follows the same contract: `forward` returns the output plus
//! a cache of whatever the backward pass needs, `backward` consumes the
//! cache and an upstream gradient, accumulates parameter gradients into a
//! same-typed gradient holder, and returns the input gradient. Gradients
//! are stored in zero-initialized clones of the parameter structs, so the
//! optimizer walks (param, grad, m, v) tuples over one canonical tensor
//! order.
//!
//! Everything is f64: desk-scale models are small, and finite-difference
//! checks stay meaningful at tight tolerances.

mod activation;
mod attention;
mod backbone;
mod block;
mod linear;
mod norm;
mod optim;

pub use activation::{
    gelu, gelu_backward, relu, relu_backward, softmax_cross_entropy, softmax_rows,
};
pub use attention::{AttentionCache, MultiHeadAttention};
pub use backbone::{
    image_to_patches, patches_to_image_grad, Backbone, BackboneCache, BackboneConfig,
};
pub use block::{BlockCache, EncoderBlock};
pub use linear::{Linear, LinearCache};
pub use norm::{LayerNorm, NormCache};
pub use optim::{Optimizer, OptimizerKind, OptimizerParams};

use ndarray::{ArrayViewD, ArrayViewMutD};

/// Walks a model's tensors in a fixed order. A parameter struct and its
/// gradient holder are the same type, so zipping two walks pairs
/// corresponding tensors.
pub trait TensorSet {
    /// Immutable views with stable dotted names, canonical order.
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    /// Mutable views in exactly the [`TensorSet::named_tensors`] order.
    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;

    /// Total parameter count.
    fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Elementwise `self += other`, used to reduce per-chunk gradients.
    fn add_assign(&mut self, other: &Self) {
        let theirs = other.named_tensors();
        for (mine, (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            ndarray::Zip::from(mine).and(&t).for_each(|a, b| *a += b);
        }
    }

    /// Elementwise scale, used to average summed gradients.
    fn scale(&mut self, s: f64) {
        for mut t in self.tensors_mut() {
            t.mapv_inplace(|v| v * s);
        }
    }

    /// True if any tensor holds a NaN or infinity.
    fn any_non_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .any(|(_, t)| t.iter().any(|v| !v.is_finite()))
    }
}

/// SHA-256 over the canonical tensor bytes; the freeze contract compares
/// these before and after head training.
pub fn tensor_checksum<T: TensorSet>(set: &T) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for (name, t) in set.named_tensors() {
        hasher.update(name.as_bytes());
        for v in t.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
