//! Small residual convolutional encoder with a projection head for pretext
//! training and a linear classifier head for fine-tuning.
//!
//! Topology (all convolutions bias-free, each followed by normalization):
//!
//! ```text
//! stem:   conv3x3(C_in -> w0, stride = stem_stride) -> norm -> relu
//! stage s, block b (stride 2 on the first block of every stage s > 0):
//!         h   = relu(norm1(conv3x3(x)))
//!         h   = norm2(conv3x3(h))            norm2 scale starts at zero
//!         skip = x, or norm(conv1x1(x)) when stride or width changes
//!         out = relu(h + skip)
//! pool:   global average -> [B, w_last]
//! embed:  linear(w_last -> embedding_dim)
//! ```
//!
//! Trainable parameter count (buffers excluded), with `k = 9`:
//!
//! ```text
//! stem  = k*C_in*w0 + 2*w0
//! block = k*in*out + 2*out + k*out*out + 2*out (+ in*out + 2*out if projected skip)
//! embed = w_last*d + d
//! proj  = d*h + h (+ 2*h with batch norm) + h*o + o
//! cls   = d*n + n
//! ```

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, StageTag, CHECKPOINT_MAGIC};
pub use params::{fan_in_uniform, he_uniform, Bound, Param, ParamKind, ParamSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint;
use crate::numerics::{normalize, NormMode, Rng, Tensor};

const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormKind {
    Group { groups: usize },
    Batch,
}

impl Default for NormKind {
    fn default() -> Self {
        NormKind::Group { groups: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// (height, width, channels)
    pub input_size: (usize, usize, usize),
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub embedding_dim: usize,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default = "default_stem_stride")]
    pub stem_stride: usize,
}

fn default_stem_stride() -> usize {
    2
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_size: (32, 32, 3),
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![2, 2, 2],
            embedding_dim: 64,
            norm: NormKind::default(),
            stem_stride: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_size;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Contract(format!("input_size {:?} has a zero extent", self.input_size)));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return Err(Error::Contract(format!(
                "stage_widths ({}) and blocks_per_stage ({}) must be non-empty and equally long",
                self.stage_widths.len(),
                self.blocks_per_stage.len()
            )));
        }
        if self.blocks_per_stage.iter().any(|&b| b == 0) || self.stage_widths.iter().any(|&w| w == 0) {
            return Err(Error::Contract("stage widths and block counts must be positive".into()));
        }
        if self.embedding_dim < 8 {
            return Err(Error::Contract(format!("embedding_dim {} < 8", self.embedding_dim)));
        }
        if self.stem_stride == 0 {
            return Err(Error::Contract("stem_stride must be positive".into()));
        }
        if let NormKind::Group { groups } = self.norm {
            if let Some(w) = self.stage_widths.iter().find(|&&w| groups == 0 || w % groups != 0) {
                return Err(Error::Contract(format!("width {w} is not divisible into {groups} groups")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let k = 9;
        let c_in = self.input_size.2;
        let mut total = k * c_in * self.stage_widths[0] + 2 * self.stage_widths[0];
        let mut prev = self.stage_widths[0];
        for (s, (&width, &blocks)) in self.stage_widths.iter().zip(&self.blocks_per_stage).enumerate() {
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                total += k * prev * width + 2 * width + k * width * width + 2 * width;
                if stride != 1 || prev != width {
                    total += prev * width + 2 * width;
                }
                prev = width;
            }
        }
        total + prev * self.embedding_dim + self.embedding_dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub hidden_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub use_batch_norm: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            hidden_dim: 128,
            output_dim: 64,
            use_batch_norm: false,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.output_dim == 0 || self.output_dim > self.hidden_dim {
            return Err(Error::Contract(format!(
                "projection output_dim {} must be in 1..={}",
                self.output_dim, self.hidden_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self, embedding_dim: usize) -> usize {
        let (h, o) = (self.hidden_dim, self.output_dim);
        embedding_dim * h + h + if self.use_batch_norm { 2 * h } else { 0 } + h * o + o
    }
}

/// Architecture shared by every stage of a pipeline; its hash is the
/// checkpoint fingerprint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub projection: ProjectionConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.projection.validate()
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        fingerprint::short_hash(json.as_bytes())
    }
}

/// Output of a projection or classification forward pass.
pub struct Forward {
    pub embeddings: Tensor,
    pub output: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Class names of the classifier head, empty when there is none.
    pub classes: Vec<String>,
}

fn check_finite(t: &Tensor, layer: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        let bad = t.data().iter().filter(|v| !v.is_finite()).count();
        Err(Error::NumericInstability {
            layer: layer.to_string(),
            detail: format!("{bad} non-finite values in output of shape {:?}", t.shape()),
        })
    }
}

impl Model {
    /// Fresh encoder and projection head; no classifier.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Model> {
        config.validate()?;
        let mut model = Model {
            config,
            params: ParamSet::new(),
            classes: Vec::new(),
        };
        model.init_encoder(rng);
        model.init_projection(rng);
        Ok(model)
    }

    fn push_norm(&mut self, prefix: &str, chans: usize, scale: f32) {
        self.params
            .push(format!("{prefix}.gamma"), &[chans], ParamKind::Norm, vec![scale; chans]);
        self.params
            .push(format!("{prefix}.beta"), &[chans], ParamKind::Norm, vec![0.0; chans]);
        if self.config.encoder.norm == NormKind::Batch {
            self.params
                .push(format!("{prefix}.running_mean"), &[chans], ParamKind::Buffer, vec![0.0; chans]);
            self.params
                .push(format!("{prefix}.running_var"), &[chans], ParamKind::Buffer, vec![1.0; chans]);
        }
    }

    fn push_conv(&mut self, name: String, out_c: usize, in_c: usize, k: usize, rng: &mut Rng) {
        let fan_in = in_c * k * k;
        let w = he_uniform(rng, out_c * fan_in, fan_in);
        self.params.push(name, &[out_c, in_c, k, k], ParamKind::Weight, w);
    }

    fn init_encoder(&mut self, rng: &mut Rng) {
        let enc = self.config.encoder.clone();
        let c_in = enc.input_size.2;
        self.push_conv("stem.conv".into(), enc.stage_widths[0], c_in, 3, rng);
        self.push_norm("stem.norm", enc.stage_widths[0], 1.0);
        let mut prev = enc.stage_widths[0];
        for (s, (&width, &blocks)) in enc.stage_widths.iter().zip(&enc.blocks_per_stage).enumerate() {
            for b in 0..blocks {
                let p = format!("s{s}.b{b}");
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                self.push_conv(format!("{p}.conv1"), width, prev, 3, rng);
                self.push_norm(&format!("{p}.norm1"), width, 1.0);
                self.push_conv(format!("{p}.conv2"), width, width, 3, rng);
                self.push_norm(&format!("{p}.norm2"), width, 0.0);
                if stride != 1 || prev != width {
                    self.push_conv(format!("{p}.skip.conv"), width, prev, 1, rng);
                    self.push_norm(&format!("{p}.skip.norm"), width, 1.0);
                }
                prev = width;
            }
        }
        let d = enc.embedding_dim;
        self.params
            .push("embed.weight", &[prev, d], ParamKind::Weight, fan_in_uniform(rng, prev * d, prev));
        self.params
            .push("embed.bias", &[d], ParamKind::Bias, fan_in_uniform(rng, d, prev));
    }

    /// (Re)initializes the projection head.
    pub fn init_projection(&mut self, rng: &mut Rng) {
        self.params.remove_prefix("proj.");
        let d = self.config.encoder.embedding_dim;
        let ProjectionConfig {
            hidden_dim: h,
            output_dim: o,
            use_batch_norm,
        } = self.config.projection;
        self.params
            .push("proj.fc1.weight", &[d, h], ParamKind::Weight, fan_in_uniform(rng, d * h, d));
        self.params
            .push("proj.fc1.bias", &[h], ParamKind::Bias, fan_in_uniform(rng, h, d));
        if use_batch_norm {
            self.params.push("proj.bn.gamma", &[h], ParamKind::Norm, vec![1.0; h]);
            self.params.push("proj.bn.beta", &[h], ParamKind::Norm, vec![0.0; h]);
            self.params
                .push("proj.bn.running_mean", &[h], ParamKind::Buffer, vec![0.0; h]);
            self.params
                .push("proj.bn.running_var", &[h], ParamKind::Buffer, vec![1.0; h]);
        }
        self.params
            .push("proj.fc2.weight", &[h, o], ParamKind::Weight, fan_in_uniform(rng, h * o, h));
        self.params
            .push("proj.fc2.bias", &[o], ParamKind::Bias, fan_in_uniform(rng, o, h));
    }

    /// (Re)initializes the classifier head for `classes`.
    pub fn init_classifier(&mut self, classes: &[String], rng: &mut Rng) -> Result<()> {
        if classes.is_empty() {
            return Err(Error::Contract("classifier needs at least one class".into()));
        }
        self.params.remove_prefix("cls.");
        let d = self.config.encoder.embedding_dim;
        let n = classes.len();
        self.params
            .push("cls.weight", &[d, n], ParamKind::Weight, fan_in_uniform(rng, d * n, d));
        self.params.push("cls.bias", &[n], ParamKind::Bias, vec![0.0; n]);
        self.classes = classes.to_vec();
        Ok(())
    }

    /// Classifier whose weight is the (rectangular) identity: logits are the
    /// embedding truncated or zero-padded to the class count.
    pub fn init_identity_classifier(&mut self, classes: &[String]) -> Result<()> {
        let mut rng = Rng::new(0);
        self.init_classifier(classes, &mut rng)?;
        let d = self.config.encoder.embedding_dim;
        let n = classes.len();
        let w = self.params.get_mut("cls.weight").expect("just created");
        w.value.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d.min(n) {
            w.value[i * n + i] = 1.0;
        }
        Ok(())
    }

    pub fn has_classifier(&self) -> bool {
        !self.classes.is_empty() && self.params.get("cls.weight").is_some()
    }

    fn norm(&self, bound: &Bound, prefix: &str, x: &Tensor, training: bool) -> Result<Tensor> {
        let gamma = bound.get(&format!("{prefix}.gamma"))?;
        let beta = bound.get(&format!("{prefix}.beta"))?;
        let batch_norm = self.params.get(&format!("{prefix}.running_mean")).is_some();
        let mode = if !batch_norm {
            match self.config.encoder.norm {
                NormKind::Group { groups } => NormMode::Group(groups),
                NormKind::Batch => NormMode::Batch,
            }
        } else if training {
            NormMode::Batch
        } else {
            let get = |n: &str| -> Vec<f64> {
                self.params
                    .get(&format!("{prefix}.{n}"))
                    .map(|p| p.value.iter().map(|&v| v as f64).collect())
                    .unwrap_or_default()
            };
            NormMode::Fixed {
                mean: get("running_mean"),
                var: get("running_var"),
            }
        };
        let (y, stats) = normalize(x, gamma, beta, &mode, NORM_EPS)?;
        if batch_norm && training {
            bound
                .running
                .borrow_mut()
                .push((prefix.to_string(), stats.mean, stats.var));
        }
        check_finite(&y, prefix)?;
        Ok(y)
    }

    fn conv(&self, bound: &Bound, name: &str, x: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let y = x.conv2d(bound.get(name)?, stride, pad)?;
        check_finite(&y, name)?;
        Ok(y)
    }

    /// `[B, C, H, W]` images → `[B, embedding_dim]` embeddings.
    pub fn encode(&self, bound: &Bound, images: &Tensor, training: bool) -> Result<Tensor> {
        let enc = &self.config.encoder;
        let (h, w, c) = enc.input_size;
        match images.shape() {
            &[_, ic, ih, iw] if (ih, iw, ic) == (h, w, c) => {}
            other => {
                return Err(Error::Shape(format!(
                    "encoder expects [B, {c}, {h}, {w}] images, got {other:?}"
                )))
            }
        }
        let mut x = self.conv(bound, "stem.conv", images, enc.stem_stride, 1)?;
        x = self.norm(bound, "stem.norm", &x, training)?.relu();
        let mut prev = enc.stage_widths[0];
        for (s, (&width, &blocks)) in enc.stage_widths.iter().zip(&enc.blocks_per_stage).enumerate() {
            for b in 0..blocks {
                let p = format!("s{s}.b{b}");
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let mut hdn = self.conv(bound, &format!("{p}.conv1"), &x, stride, 1)?;
                hdn = self.norm(bound, &format!("{p}.norm1"), &hdn, training)?.relu();
                hdn = self.conv(bound, &format!("{p}.conv2"), &hdn, 1, 1)?;
                hdn = self.norm(bound, &format!("{p}.norm2"), &hdn, training)?;
                let skip = if stride != 1 || prev != width {
                    let sk = self.conv(bound, &format!("{p}.skip.conv"), &x, stride, 0)?;
                    self.norm(bound, &format!("{p}.skip.norm"), &sk, training)?
                } else {
                    x.clone()
                };
                x = hdn.add(&skip)?.relu();
                prev = width;
            }
        }
        let pooled = x.global_avg_pool()?;
        let emb = pooled
            .matmul(bound.get("embed.weight")?)?
            .add(bound.get("embed.bias")?)?;
        check_finite(&emb, "embed")?;
        Ok(emb)
    }

    fn check_embedding(&self, emb: &Tensor) -> Result<()> {
        let d = self.config.encoder.embedding_dim;
        match emb.shape() {
            &[_, e] if e == d => Ok(()),
            other => Err(Error::Contract(format!(
                "head expects [B, {d}] embeddings, got {other:?}"
            ))),
        }
    }

    /// Projection head: `[B, d]` → `[B, output_dim]`.
    pub fn project(&self, bound: &Bound, emb: &Tensor, training: bool) -> Result<Tensor> {
        self.check_embedding(emb)?;
        let mut h = emb
            .matmul(bound.get("proj.fc1.weight")?)?
            .add(bound.get("proj.fc1.bias")?)?;
        if self.config.projection.use_batch_norm {
            h = self.norm(bound, "proj.bn", &h, training)?;
        }
        let out = h
            .relu()
            .matmul(bound.get("proj.fc2.weight")?)?
            .add(bound.get("proj.fc2.bias")?)?;
        check_finite(&out, "proj")?;
        Ok(out)
    }

    /// Classifier head: `[B, d]` → unnormalized `[B, num_classes]` logits.
    pub fn classify(&self, bound: &Bound, emb: &Tensor) -> Result<Tensor> {
        self.check_embedding(emb)?;
        if !self.has_classifier() {
            return Err(Error::Contract("model has no classifier head".into()));
        }
        let out = emb
            .matmul(bound.get("cls.weight")?)?
            .add(bound.get("cls.bias")?)?;
        check_finite(&out, "cls")?;
        Ok(out)
    }

    pub fn forward_projection(&self, bound: &Bound, images: &Tensor, training: bool) -> Result<Forward> {
        let embeddings = self.encode(bound, images, training)?;
        let output = self.project(bound, &embeddings, training)?;
        Ok(Forward { embeddings, output })
    }

    pub fn forward_logits(&self, bound: &Bound, images: &Tensor, training: bool) -> Result<Forward> {
        let embeddings = self.encode(bound, images, training)?;
        let output = self.classify(bound, &embeddings)?;
        Ok(Forward { embeddings, output })
    }

    /// Folds batch statistics gathered during a training forward pass into
    /// the running buffers (exponential average, momentum 0.1, biased batch variance).
    pub fn update_running_stats(&mut self, bound: &Bound) {
        for (prefix, mean, var) in bound.running.borrow_mut().drain(..) {
            if let Some(rm) = self.params.get_mut(&format!("{prefix}.running_mean")) {
                for (r, m) in rm.value.iter_mut().zip(&mean) {
                    *r = ((1.0 - BN_MOMENTUM) * *r as f64 + BN_MOMENTUM * m) as f32;
                }
            }
            if let Some(rv) = self.params.get_mut(&format!("{prefix}.running_var")) {
                for (r, v) in rv.value.iter_mut().zip(&var) {
                    *r = ((1.0 - BN_MOMENTUM) * *r as f64 + BN_MOMENTUM * v) as f32;
                }
            }
        }
    }

    /// Trainable scalars in the encoder only.
    pub fn encoder_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.trainable() && !p.name.starts_with("proj.") && !p.name.starts_with("cls.") && !p.name.starts_with("swav."))
            .map(|p| p.value.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                input_size: (16, 16, 3),
                stage_widths: vec![8, 16],
                blocks_per_stage: vec![1, 1],
                embedding_dim: 8,
                norm: NormKind::Group { groups: 4 },
                stem_stride: 2,
            },
            projection: ProjectionConfig {
                hidden_dim: 16,
                output_dim: 8,
                use_batch_norm: false,
            },
        }
    }

    #[test]
    fn param_count_matches_hand_count() {
        // stem 9*3*8 + 16 = 232; s0.b0 (8->8) 576+16+576+16 = 1184;
        // s1.b0 (8->16, stride 2) 1152+32+2304+32 + skip 128+32 = 3680; embed 16*8+8 = 136.
        let cfg = small_config();
        assert_eq!(cfg.encoder.param_count(), 5232);
        let model = Model::new(cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(model.encoder_param_count(), 5232);
        assert_eq!(
            model.params.trainable_count(),
            5232 + model.config.projection.param_count(8)
        );
    }

    #[test]
    fn zero_image_gives_finite_deterministic_embedding() {
        let model = Model::new(small_config(), &mut Rng::new(3)).unwrap();
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        let b = model.params.bind(false);
        let e1 = model.encode(&b, &x, false).unwrap();
        let e2 = model.encode(&b, &x, false).unwrap();
        assert_eq!(e1.shape(), &[2, 8]);
        assert!(e1.is_finite());
        assert_eq!(e1.data(), e2.data());
    }

    #[test]
    fn zero_parameters_give_zero_pool() {
        let mut model = Model::new(small_config(), &mut Rng::new(3)).unwrap();
        model.params.zero_all();
        let mut rng = Rng::new(5);
        let x = Tensor::new(&[2, 3, 16, 16], (0..2 * 3 * 256).map(|_| rng.normal()).collect()).unwrap();
        let e = model.encode(&model.params.bind(false), &x, false).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_extent_is_rejected() {
        let model = Model::new(small_config(), &mut Rng::new(3)).unwrap();
        let err = model.encode(&model.params.bind(false), &Tensor::zeros(&[1, 3, 8, 8]), false);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn identity_classifier_truncates_and_pads() {
        let mut model = Model::new(small_config(), &mut Rng::new(3)).unwrap();
        let names = |n: usize| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>();
        let e = Tensor::new(&[1, 8], (1..=8).map(|v| v as f64).collect()).unwrap();
        model.init_identity_classifier(&names(5)).unwrap();
        let logits = model.classify(&model.params.bind(false), &e).unwrap();
        assert_eq!(logits.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        model.init_identity_classifier(&names(10)).unwrap();
        let logits = model.classify(&model.params.bind(false), &e).unwrap();
        assert_eq!(logits.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn logits_shape_and_softmax() {
        let mut model = Model::new(small_config(), &mut Rng::new(3)).unwrap();
        let names: Vec<String> = (0..8).map(|i| format!("c{i}")).collect();
        model.init_classifier(&names, &mut Rng::new(4)).unwrap();
        let mut rng = Rng::new(6);
        let e = Tensor::new(&[4, 8], (0..32).map(|_| rng.normal()).collect()).unwrap();
        let logits = model.classify(&model.params.bind(false), &e).unwrap();
        assert_eq!(logits.shape(), &[4, 8]);
        for row in logits.softmax_values().chunks(8) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let bad = Tensor::zeros(&[4, 7]);
        assert!(matches!(model.classify(&model.params.bind(false), &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_input_reports_layer() {
        let model = Model::new(small_config(), &mut Rng::new(3)).unwrap();
        let mut v = vec![0.0; 3 * 256];
        v[10] = f64::NAN;
        let x = Tensor::new(&[1, 3, 16, 16], v).unwrap();
        match model.encode(&model.params.bind(false), &x, false) {
            Err(Error::NumericInstability { layer, .. }) => assert_eq!(layer, "stem.conv"),
            other => panic!("expected instability error, got {other:?}"),
        }
    }

    #[test]
    fn batch_norm_flag_adds_buffers_and_runs() {
        let mut cfg = small_config();
        cfg.encoder.norm = NormKind::Batch;
        cfg.projection.use_batch_norm = true;
        let mut model = Model::new(cfg, &mut Rng::new(3)).unwrap();
        assert!(model.params.get("stem.norm.running_mean").is_some());
        let mut rng = Rng::new(1);
        let x = Tensor::new(&[4, 3, 16, 16], (0..4 * 3 * 256).map(|_| rng.normal()).collect()).unwrap();
        let b = model.params.bind(true);
        let f = model.forward_projection(&b, &x, true).unwrap();
        assert!(f.output.is_finite());
        model.update_running_stats(&b);
        let rm = &model.params.get("stem.norm.running_mean").unwrap().value;
        assert!(rm.iter().any(|&v| v != 0.0));
        let eval = model.forward_projection(&model.params.bind(false), &x, false).unwrap();
        assert!(eval.output.is_finite());
    }
}
