//! Model assembly: the classifier, the detector derived from it, the
//! detection head, and attention-map extraction.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointPayload, StageTag};

use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Backbone, BackboneCache, Linear, LinearCache, TensorSet};
use crate::par::par_map;

pub use crate::nn::BackboneConfig;

/// One image: (channels, height, width) in [0, 1].
pub type Image = Array3<f64>;

/// Replaces the classifier's final layer to produce embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHead {
    /// Hidden dimension the head consumes; must equal the backbone width.
    pub input_width: usize,
    /// Embedding dimension.
    pub d: usize,
}

impl EmbeddingHead {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("embedding dimension {} < 2", self.d)));
        }
        Ok(())
    }
}

/// Detection-head shape: exactly three linear layers, the last one sized to
/// the 2/3/5-class scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionHeadConfig {
    pub layer_dims: [usize; 3],
}

impl DetectionHeadConfig {
    /// Monotone width reduction onto the scheme's class count.
    pub fn for_scheme(scheme: usize) -> Result<Self> {
        let cfg = DetectionHeadConfig { layer_dims: [64, 32, scheme] };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let out = self.layer_dims[2];
        if !matches!(out, 2 | 3 | 5) {
            return Err(Error::Config(format!(
                "detection scheme {out} not in {{2, 3, 5}}"
            )));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("detection head layer width 0".into()));
        }
        Ok(())
    }

    pub fn scheme(&self) -> usize {
        self.layer_dims[2]
    }
}

/// Backbone plus a `width → num_classes` linear head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub backbone: Backbone,
    pub head: Linear,
}

pub struct ClassifierCache {
    pub backbone: BackboneCache,
    head: LinearCache,
}

impl Classifier {
    pub fn init(cfg: &BackboneConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::init(cfg, &mut rng)?;
        let head = Linear::init(cfg.num_classes, cfg.width, &mut rng);
        Ok(Classifier { backbone, head })
    }

    pub fn zeros_like(&self) -> Self {
        Classifier { backbone: self.backbone.zeros_like(), head: self.head.zeros_like() }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.backbone.cfg
    }

    /// Logits for one image, with the cache needed for a backward pass.
    pub fn forward_one(&self, img: &Image) -> Result<(Array1<f64>, ClassifierCache)> {
        self.backbone.check_image(img)?;
        let (seq, backbone) = self.backbone.forward(img);
        let cls = seq.row(0).insert_axis(Axis(0)).to_owned();
        let (logits, head) = self.head.forward(&cls);
        Ok((logits.row(0).to_owned(), ClassifierCache { backbone, head }))
    }

    /// Backward from a logit gradient; accumulates parameter gradients and
    /// returns the image gradient.
    pub fn backward_one(
        &self,
        cache: &ClassifierCache,
        dlogits: &Array1<f64>,
        grad: &mut Classifier,
    ) -> Image {
        let dl = dlogits.view().insert_axis(Axis(0)).to_owned();
        let dcls = self.head.backward(&cache.head, &dl, &mut grad.head);
        let mut dseq = Array2::zeros((self.backbone.cfg.seq_len(), self.backbone.cfg.width));
        dseq.row_mut(0).assign(&dcls.row(0));
        self.backbone.backward(&cache.backbone, &dseq, &mut grad.backbone)
    }
}

/// Batch logits (eval mode, deterministic). Parallel over images.
pub fn forward_classify(model: &Classifier, images: &[Image]) -> Result<Array2<f64>> {
    let rows: Vec<Result<Array1<f64>>> = par_map(images.iter().collect(), |img| {
        model.forward_one(img).map(|(logits, _)| logits)
    });
    let mut out = Array2::zeros((images.len(), model.config().num_classes));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row?);
    }
    Ok(out)
}

impl TensorSet for Classifier {
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<'_, f64>)> = self
            .backbone
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("backbone.{n}"), t))
            .collect();
        out.extend(
            self.head
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (format!("head.{n}"), t)),
        );
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = self.backbone.tensors_mut();
        out.extend(self.head.tensors_mut());
        out
    }
}

/// Backbone plus a `width → d` embedding layer; produced from a trained
/// classifier by replacing its final layer.
#[derive(Debug, Clone)]
pub struct Detector {
    pub backbone: Backbone,
    pub embed: Linear,
}

pub struct DetectorCache {
    pub backbone: BackboneCache,
    embed: LinearCache,
}

impl Detector {
    pub fn embed_dim(&self) -> usize {
        self.embed.out_dim()
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.backbone.cfg
    }

    pub fn zeros_like(&self) -> Self {
        Detector { backbone: self.backbone.zeros_like(), embed: self.embed.zeros_like() }
    }

    pub fn forward_one(&self, img: &Image) -> Result<(Array1<f64>, DetectorCache)> {
        self.backbone.check_image(img)?;
        let (seq, backbone) = self.backbone.forward(img);
        let cls = seq.row(0).insert_axis(Axis(0)).to_owned();
        let (e, embed) = self.embed.forward(&cls);
        Ok((e.row(0).to_owned(), DetectorCache { backbone, embed }))
    }

    pub fn backward_one(
        &self,
        cache: &DetectorCache,
        dembed: &Array1<f64>,
        grad: &mut Detector,
    ) -> Image {
        let de = dembed.view().insert_axis(Axis(0)).to_owned();
        let dcls = self.embed.backward(&cache.embed, &de, &mut grad.embed);
        let mut dseq = Array2::zeros((self.backbone.cfg.seq_len(), self.backbone.cfg.width));
        dseq.row_mut(0).assign(&dcls.row(0));
        self.backbone.backward(&cache.backbone, &dseq, &mut grad.backbone)
    }
}

impl TensorSet for Detector {
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<'_, f64>)> = self
            .backbone
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("backbone.{n}"), t))
            .collect();
        out.extend(
            self.embed
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (format!("embed.{n}"), t)),
        );
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = self.backbone.tensors_mut();
        out.extend(self.embed.tensors_mut());
        out
    }
}

/// Copies the trained classifier's backbone bit-for-bit and replaces the
/// final layer with a fresh `width → d` projection.
pub fn init_detector_from_classifier(
    classifier: &Classifier,
    head: EmbeddingHead,
    seed: u64,
) -> Result<Detector> {
    head.validate()?;
    let width = classifier.config().width;
    if head.input_width != width {
        return Err(Error::Config(format!(
            "embedding head expects input width {}, backbone width is {width}",
            head.input_width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Detector {
        backbone: classifier.backbone.clone(),
        embed: Linear::init(head.d, width, &mut rng),
    })
}

/// Batch embeddings (eval mode, deterministic). Parallel over images.
pub fn forward_embed(detector: &Detector, images: &[Image]) -> Result<Array2<f64>> {
    let rows: Vec<Result<Array1<f64>>> = par_map(images.iter().collect(), |img| {
        detector.forward_one(img).map(|(e, _)| e)
    });
    let mut out = Array2::zeros((images.len(), detector.embed_dim()));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row?);
    }
    Ok(out)
}

/// Three trainable linear layers on top of the frozen detector.
#[derive(Debug, Clone)]
pub struct DetectionHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
}

pub struct DetectionHeadCache {
    c1: LinearCache,
    pre1: Array2<f64>,
    c2: LinearCache,
    pre2: Array2<f64>,
    c3: LinearCache,
}

impl DetectionHead {
    pub fn init(embed_dim: usize, cfg: &DetectionHeadConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(DetectionHead {
            fc1: Linear::init(cfg.layer_dims[0], embed_dim, &mut rng),
            fc2: Linear::init(cfg.layer_dims[1], cfg.layer_dims[0], &mut rng),
            fc3: Linear::init(cfg.layer_dims[2], cfg.layer_dims[1], &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        DetectionHead {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
            fc3: self.fc3.zeros_like(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.fc3.out_dim()
    }

    pub fn forward(&self, e: &Array2<f64>) -> (Array2<f64>, DetectionHeadCache) {
        let (pre1, c1) = self.fc1.forward(e);
        let a1 = relu(&pre1);
        let (pre2, c2) = self.fc2.forward(&a1);
        let a2 = relu(&pre2);
        let (logits, c3) = self.fc3.forward(&a2);
        (logits, DetectionHeadCache { c1, pre1, c2, pre2, c3 })
    }

    pub fn apply(&self, e: &Array2<f64>) -> Array2<f64> {
        self.forward(e).0
    }

    pub fn backward(
        &self,
        cache: &DetectionHeadCache,
        dlogits: &Array2<f64>,
        grad: &mut DetectionHead,
    ) -> Array2<f64> {
        let da2 = self.fc3.backward(&cache.c3, dlogits, &mut grad.fc3);
        let dpre2 = relu_backward(&cache.pre2, &da2);
        let da1 = self.fc2.backward(&cache.c2, &dpre2, &mut grad.fc2);
        let dpre1 = relu_backward(&cache.pre1, &da1);
        self.fc1.backward(&cache.c1, &dpre1, &mut grad.fc1)
    }
}

impl TensorSet for DetectionHead {
    fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (prefix, l) in [("fc1", &self.fc1), ("fc2", &self.fc2), ("fc3", &self.fc3)] {
            for (n, t) in l.named_tensors() {
                out.push((format!("{prefix}.{n}"), t));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = self.fc1.tensors_mut();
        out.extend(self.fc2.tensors_mut());
        out.extend(self.fc3.tensors_mut());
        out
    }
}

/// Stage-2 assembly: frozen detector plus the trainable head.
#[derive(Debug, Clone)]
pub struct DetectorWithHead {
    pub detector: Detector,
    pub head: DetectionHead,
    /// Set at attach time; the trainer verifies it with checksums.
    pub backbone_frozen: bool,
}

impl DetectorWithHead {
    /// Detection logits for a batch of images.
    pub fn classify(&self, images: &[Image]) -> Result<Array2<f64>> {
        let e = forward_embed(&self.detector, images)?;
        Ok(self.head.apply(&e))
    }

    pub fn scheme(&self) -> usize {
        self.head.num_classes()
    }
}

/// Attaches a fresh 3-layer head for the given scheme; the detector's
/// parameters are treated as frozen from here on.
pub fn attach_detection_head(detector: &Detector, scheme: usize, seed: u64) -> Result<DetectorWithHead> {
    let cfg = DetectionHeadConfig::for_scheme(scheme)?;
    Ok(DetectorWithHead {
        detector: detector.clone(),
        head: DetectionHead::init(detector.embed_dim(), &cfg, seed)?,
        backbone_frozen: true,
    })
}

/// Attention weights of one layer, row-stochastic over token positions.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub layer_index: usize,
    /// Per-head (seq × seq) matrices.
    pub weights: Vec<Array2<f64>>,
    /// (rows, cols) of the patch grid the class-token row maps onto.
    pub patch_grid: (usize, usize),
}

impl AttentionRecord {
    /// Class-token attention onto the patch grid, averaged over heads.
    pub fn class_token_heatmap(&self) -> Array2<f64> {
        let (gr, gc) = self.patch_grid;
        let heads = self.weights.len() as f64;
        let mut grid = Array2::zeros((gr, gc));
        for w in &self.weights {
            let row = w.row(0);
            for r in 0..gr {
                for c in 0..gc {
                    grid[[r, c]] += row[1 + r * gc + c] / heads;
                }
            }
        }
        grid
    }
}

/// Pulls the last encoder block's attention for one image.
pub fn extract_attention_map(backbone: &Backbone, img: &Image) -> Result<AttentionRecord> {
    backbone.check_image(img)?;
    if backbone.blocks.is_empty() {
        return Err(Error::Config("model has no attention layers".into()));
    }
    let (_, cache) = backbone.forward(img);
    let weights: Vec<Array2<f64>> = cache.last_attention().to_vec();
    let side = backbone.cfg.grid_side();
    Ok(AttentionRecord {
        layer_index: backbone.blocks.len() - 1,
        weights,
        patch_grid: (side, side),
    })
}
