use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BlockCache, EncoderBlock, LayerNorm, Linear, LinearCache, NormCache, TensorSet};
use crate::error::{Error, Result};

/// Architecture of the vision-transformer trunk shared by the classifier
/// and the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Pixels per side (images are square).
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    /// Encoder block count.
    pub depth: usize,
    /// Hidden dimension.
    pub width: usize,
    pub heads: usize,
    pub num_classes: usize,
}

impl BackboneConfig {
    /// CPU-trainable desk default; the full-scale 224×224 variant is a
    /// config choice, not a different code path.
    pub fn desk_default() -> Self {
        BackboneConfig {
            image_size: 32,
            channels: 3,
            patch_size: 8,
            depth: 3,
            width: 96,
            heads: 4,
            num_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("depth", self.depth),
            ("width", self.width),
            ("heads", self.heads),
            ("num_classes", self.num_classes),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads {} does not divide width {}",
                self.heads, self.width
            )));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    /// Sequence length including the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }
}

/// Flatten non-overlapping patches row-major over the grid; each patch is
/// channel-major (c, py, px).
pub fn image_to_patches(img: &Array3<f64>, patch: usize) -> Array2<f64> {
    let (c, h, w) = img.dim();
    let (gy, gx) = (h / patch, w / patch);
    let mut out = Array2::zeros((gy * gx, c * patch * patch));
    for py in 0..gy {
        for px in 0..gx {
            let mut col = 0;
            let row = py * gx + px;
            for ch in 0..c {
                for iy in 0..patch {
                    for ix in 0..patch {
                        out[[row, col]] = img[[ch, py * patch + iy, px * patch + ix]];
                        col += 1;
                    }
                }
            }
        }
    }
    out
}

/// Scatter patch gradients back onto the image grid (patches are disjoint).
pub fn patches_to_image_grad(
    dpatches: &Array2<f64>,
    channels: usize,
    side: usize,
    patch: usize,
) -> Array3<f64> {
    let g = side / patch;
    let mut out = Array3::zeros((channels, side, side));
    for py in 0..g {
        for px in 0..g {
            let mut col = 0;
            let row = py * g + px;
            for ch in 0..channels {
                for iy in 0..patch {
                    for ix in 0..patch {
                        out[[ch, py * patch + iy, px * patch + ix]] = dpatches[[row, col]];
                        col += 1;
                    }
                }
            }
        }
    }
    out
}

/// The transformer trunk: patch projection, class token, learned position
/// embeddings, encoder blocks, final norm. Heads attach on top of the
/// class-token row of the output sequence.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub patch_proj: Linear,
    pub cls_token: Array1<f64>,
    pub pos_embed: Array2<f64>,
    pub blocks: Vec<EncoderBlock>,
    pub final_norm: LayerNorm,
}

pub struct BackboneCache {
    patch_cache: LinearCache,
    blocks: Vec<BlockCache>,
    final_cache: NormCache,
}

impl BackboneCache {
    /// Per-head attention of the last encoder block.
    pub fn last_attention(&self) -> &[Array2<f64>] {
        self.blocks
            .last()
            .expect("depth >= 1")
            .attention()
            .attention_probs()
    }
}

impl Backbone {
    pub fn init<R: Rng>(cfg: &BackboneConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let token_std = 0.02;
        let patch_proj = Linear::init(cfg.width, cfg.patch_dim(), rng);
        let cls_token = Array1::from_shape_fn(cfg.width, |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * token_std
        });
        let pos_embed = Array2::from_shape_fn((cfg.seq_len(), cfg.width), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * token_std
        });
        let blocks = (0..cfg.depth)
            .map(|_| EncoderBlock::init(cfg.width, cfg.heads, 4, rng))
            .collect();
        Ok(Backbone {
            cfg: *cfg,
            patch_proj,
            cls_token,
            pos_embed,
            blocks,
            final_norm: LayerNorm::new(cfg.width),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Backbone {
            cfg: self.cfg,
            patch_proj: self.patch_proj.zeros_like(),
            cls_token: Array1::zeros(self.cls_token.raw_dim()),
            pos_embed: Array2::zeros(self.pos_embed.raw_dim()),
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
            final_norm: self.final_norm.zeros_like(),
        }
    }

    pub fn check_image(&self, img: &Array3<f64>) -> Result<()> {
        let want = (self.cfg.channels, self.cfg.image_size, self.cfg.image_size);
        if img.dim() != want {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", img.dim())));
        }
        Ok(())
    }

    /// Forward to the normalized token sequence (seq_len × width).
    pub fn forward(&self, img: &Array3<f64>) -> (Array2<f64>, BackboneCache) {
        let patches = image_to_patches(img, self.cfg.patch_size);
        let (tok, patch_cache) = self.patch_proj.forward(&patches);

        let mut seq = Array2::zeros((self.cfg.seq_len(), self.cfg.width));
        seq.row_mut(0).assign(&self.cls_token);
        seq.slice_mut(ndarray::s![1.., ..]).assign(&tok);
        seq += &self.pos_embed;

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&seq);
            seq = next;
            blocks.push(cache);
        }
        let (out, final_cache) = self.final_norm.forward(&seq);
        (out, BackboneCache { patch_cache, blocks, final_cache })
    }

    /// Backward from a sequence gradient; accumulates into `grad` and
    /// returns the image gradient (used by the attacks).
    pub fn backward(
        &self,
        cache: &BackboneCache,
        dseq: &Array2<f64>,
        grad: &mut Backbone,
    ) -> Array3<f64> {
        let mut d = self.final_norm.backward(&cache.final_cache, dseq, &mut grad.final_norm);
        for ((block, bcache), bgrad) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(&mut grad.blocks)
            .rev()
        {
            d = block.backward(bcache, &d, bgrad);
        }
        grad.pos_embed += &d;
        grad.cls_token += &d.row(0);
        let dtok = d.slice(ndarray::s![1.., ..]).to_owned();
        let dpatches = self.patch_proj.backward(&cache.patch_cache, &dtok, &mut grad.patch_proj);
        patches_to_image_grad(
            &dpatches,
            self.cfg.channels,
            self.cfg.image_size,
            self.cfg.patch_size,
        )
    }

    /// Class-token features (width) for a single image, no cache.
    pub fn features(&self, img: &Array3<f64>) -> Array1<f64> {
        self.forward(img).0.index_axis(Axis(0), 0).to_owned()
    }
}

impl TensorSet for Backbone {
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (name, t) in self.patch_proj.named_tensors() {
            out.push((format!("patch_proj.{name}"), t));
        }
        out.push(("cls_token".into(), self.cls_token.view().into_dyn()));
        out.push(("pos_embed".into(), self.pos_embed.view().into_dyn()));
        for (i, block) in self.blocks.iter().enumerate() {
            for (name, t) in block.named_tensors() {
                out.push((format!("blocks.{i}.{name}"), t));
            }
        }
        for (name, t) in self.final_norm.named_tensors() {
            out.push((format!("final_norm.{name}"), t));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        out.extend(self.patch_proj.tensors_mut());
        out.push(self.cls_token.view_mut().into_dyn());
        out.push(self.pos_embed.view_mut().into_dyn());
        for block in &mut self.blocks {
            out.extend(block.tensors_mut());
        }
        out.extend(self.final_norm.tensors_mut());
        out
    }
}
