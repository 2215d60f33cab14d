//! Pre-norm transformer blocks, full-model assembly, and prediction heads.
//!
//! A block computes `x1 = x + MSA(Norm(x), p)` followed by
//! `x2 = x1 + MLP(Norm(x1))`; the model runs the stems, `L` blocks, and a
//! final normalization: `Y = Norm(X_L)`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{multi_head, AttentionKind, AttentionParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::norm::{apply_token_norm, NormKind, NormParams};
use crate::pe::{inject_aux_features, rrwp, spe_encode};
use crate::rng::Rng;
use crate::stem::{node_stem_forward, pe_stem_forward, NodeStemParams, PeStemParams};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Sum,
    Mean,
    /// Node-level prediction; forbids graph-level heads.
    Node,
}

impl Pooling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pooling::Sum => "sum",
            Pooling::Mean => "mean",
            Pooling::Node => "node",
        }
    }
}

/// Full hyperparameter record for one model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub ffn_expansion: usize,
    pub norm_kind: NormKind,
    pub attention_kind: AttentionKind,
    /// Random-walk steps K: RRWP channels are `I, W, ..., W^{K-1}`.
    pub k_walk: usize,
    /// Sinusoidal bases S; 0 disables the expansion.
    pub spe_bases: usize,
    pub d_pe: usize,
    pub stem_mlp_dim: usize,
    pub n_stem_ffn: usize,
    pub pooling: Pooling,
    pub head_depth: usize,
    pub out_dim: usize,
    pub seed: u64,
    pub attn_dropout: f64,
}

impl Default for ModelConfig {
    /// The default small configuration used throughout the experiments:
    /// 4 layers, width 32, 4 heads, K = 3, S = 3.
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            model_dim: 32,
            n_heads: 4,
            ffn_expansion: 2,
            norm_kind: NormKind::Adarmsn,
            attention_kind: AttentionKind::Sl2Urpe,
            k_walk: 3,
            spe_bases: 3,
            d_pe: 16,
            stem_mlp_dim: 32,
            n_stem_ffn: 1,
            pooling: Pooling::Sum,
            head_depth: 2,
            out_dim: 1,
            seed: 0,
            attn_dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// A deliberately tiny configuration for gradient checking.
    pub fn tiny(seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            model_dim: 8,
            n_heads: 2,
            d_pe: 4,
            stem_mlp_dim: 6,
            spe_bases: 1,
            seed,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.k_walk < 1 {
            return Err(Error::Config("k_walk must be at least 1".into()));
        }
        // Token-wise norms only in the backbone; batch norm belongs to the
        // autoencoder case study.
        if self.norm_kind == NormKind::Bn {
            return Err(Error::Config(
                "backbone norm must be token-wise (ln, rmsn, adarmsn)".into(),
            ));
        }
        if self.head_depth < 1 {
            return Err(Error::Config("head_depth must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return Err(Error::Config(format!(
                "attn_dropout {} outside [0, 1)",
                self.attn_dropout
            )));
        }
        Ok(())
    }

    /// Channel count entering the PE stem: K(1 + 2S) + 3 injected channels.
    pub fn pe_in_dim(&self) -> usize {
        self.k_walk * (1 + 2 * self.spe_bases) + 3
    }
}

/// One transformer layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub norm1: NormParams,
    pub attention: AttentionParams,
    pub norm2: NormParams,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
}

/// All parameters of one model instance.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub node_stem: NodeStemParams,
    pub pe_stem: PeStemParams,
    pub layers: Vec<LayerParams>,
    pub final_norm: NormParams,
    /// Head MLP layers, `(weight, bias)` pairs applied with relu between.
    pub head: Vec<(Tensor, Tensor)>,
}

impl ModelParams {
    /// Initialize from the config seed. Backbone and head linear weights are
    /// truncated-normal (sigma 0.02) with zero biases; stem layers use
    /// Kaiming-uniform; adarmsn layers start at `alpha = 0`, `beta = 1`.
    pub fn init(config: &ModelConfig, attr_dim: Option<usize>, edge_dim: Option<usize>) -> Result<ModelParams> {
        config.validate()?;
        let rng = Rng::seed(config.seed);
        let dm = config.model_dim;
        let hidden = config.ffn_expansion * dm;
        let layers = (0..config.n_layers)
            .map(|l| {
                let mut lr = rng.child(&format!("layer{l}"));
                let mut attention = AttentionParams::init(
                    config.attention_kind,
                    dm,
                    config.n_heads,
                    config.d_pe,
                    &mut lr,
                );
                attention.dropout = config.attn_dropout;
                LayerParams {
                    norm1: NormParams::new(config.norm_kind, dm),
                    attention,
                    norm2: NormParams::new(config.norm_kind, dm),
                    mlp_w1: Tensor::trunc_normal(vec![dm, hidden], 0.02, &mut lr),
                    mlp_b1: Tensor::zeros(vec![hidden]),
                    mlp_w2: Tensor::trunc_normal(vec![hidden, dm], 0.02, &mut lr),
                    mlp_b2: Tensor::zeros(vec![dm]),
                }
            })
            .collect();
        let mut head_rng = rng.child("head");
        let mut head = Vec::with_capacity(config.head_depth);
        for d in 0..config.head_depth {
            let (w_in, w_out) = if d + 1 == config.head_depth {
                (dm, config.out_dim)
            } else {
                (dm, dm)
            };
            head.push((
                Tensor::trunc_normal(vec![w_in, w_out], 0.02, &mut head_rng),
                Tensor::zeros(vec![w_out]),
            ));
        }
        Ok(ModelParams {
            node_stem: NodeStemParams::init(attr_dim, config.k_walk, dm, &mut rng.child("stem")),
            pe_stem: PeStemParams::init(
                config.pe_in_dim(),
                config.stem_mlp_dim,
                config.d_pe,
                edge_dim,
                config.n_stem_ffn,
                config.ffn_expansion,
                config.norm_kind,
                &mut rng.child("stem"),
            ),
            layers,
            final_norm: NormParams::new(config.norm_kind, dm),
            head,
        })
    }

    /// Initialization matching a specific graph's attribute dimensions.
    pub fn init_for(config: &ModelConfig, g: &Graph) -> Result<ModelParams> {
        let attr_dim = g.node_attrs().map(|a| a.first().map_or(0, |r| r.len()));
        let edge_dim = g.edge_attrs().map(|a| a.first().map_or(0, |r| r.len()));
        ModelParams::init(config, attr_dim, edge_dim)
    }

    pub fn trainable(&self) -> Vec<(String, Tensor)> {
        let mut out = self.node_stem.trainable();
        out.extend(self.pe_stem.trainable());
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.norm1.trainable() {
                out.push((format!("layer{l}.norm1.{name}"), t));
            }
            for (name, t) in layer.attention.trainable() {
                out.push((format!("layer{l}.attn.{name}"), t));
            }
            for (name, t) in layer.norm2.trainable() {
                out.push((format!("layer{l}.norm2.{name}"), t));
            }
            out.push((format!("layer{l}.mlp_w1"), layer.mlp_w1.clone()));
            out.push((format!("layer{l}.mlp_b1"), layer.mlp_b1.clone()));
            out.push((format!("layer{l}.mlp_w2"), layer.mlp_w2.clone()));
            out.push((format!("layer{l}.mlp_b2"), layer.mlp_b2.clone()));
        }
        for (name, t) in self.final_norm.trainable() {
            out.push((format!("final_norm.{name}"), t));
        }
        for (d, (w, b)) in self.head.iter().enumerate() {
            out.push((format!("head{d}.w"), w.clone()));
            out.push((format!("head{d}.b"), b.clone()));
        }
        out
    }

    pub fn set_trainable(&mut self, tensors: Vec<Tensor>) {
        let mut it = tensors.into_iter();
        self.node_stem.set_trainable(&mut it);
        self.pe_stem.set_trainable(&mut it);
        for layer in &mut self.layers {
            let n = layer.norm1.trainable().len();
            let ts: Vec<Tensor> = (0..n).map(|_| it.next().expect("norm1")).collect();
            layer.norm1.set_trainable(&ts);
            layer.attention.set_trainable(&mut it);
            let n = layer.norm2.trainable().len();
            let ts: Vec<Tensor> = (0..n).map(|_| it.next().expect("norm2")).collect();
            layer.norm2.set_trainable(&ts);
            layer.mlp_w1 = it.next().expect("mlp_w1");
            layer.mlp_b1 = it.next().expect("mlp_b1");
            layer.mlp_w2 = it.next().expect("mlp_w2");
            layer.mlp_b2 = it.next().expect("mlp_b2");
        }
        let n = self.final_norm.trainable().len();
        let ts: Vec<Tensor> = (0..n).map(|_| it.next().expect("final_norm")).collect();
        self.final_norm.set_trainable(&ts);
        for (w, b) in &mut self.head {
            *w = it.next().expect("head w");
            *b = it.next().expect("head b");
        }
        assert!(it.next().is_none(), "set_trainable: extra tensors");
    }

    /// Copy of the parameters with every trainable tensor tracked on `tape`,
    /// plus the tracked leaves in `trainable` order.
    pub fn watched(&self, tape: &Tape) -> (ModelParams, Vec<Tensor>) {
        let leaves: Vec<Tensor> = self.trainable().iter().map(|(_, t)| tape.watch(t)).collect();
        let mut copy = self.clone();
        copy.set_trainable(leaves.clone());
        (copy, leaves)
    }
}

/// One pre-norm block: `x1 = x + MSA(Norm(x), p)`, `x2 = x1 + MLP(Norm(x1))`.
pub fn block_forward(x: &Tensor, p: Option<&Tensor>, layer: &LayerParams) -> Result<Tensor> {
    let attended = multi_head(
        &apply_token_norm(x, &layer.norm1)?,
        p,
        &layer.attention,
        None,
        None,
    )?;
    let x1 = x.add(&attended)?;
    let inner = apply_token_norm(&x1, &layer.norm2)?
        .matmul(&layer.mlp_w1)?
        .add(&layer.mlp_b1)?
        .relu()
        .matmul(&layer.mlp_w2)?
        .add(&layer.mlp_b2)?;
    x1.add(&inner)
}

/// Full forward pass: RRWP, SPE, auxiliary injection, stems, `L` blocks, and
/// the final normalization. Returns per-node embeddings `[N, model_dim]`.
pub fn model_forward(g: &Graph, config: &ModelConfig, params: &ModelParams) -> Result<Tensor> {
    let raw = rrwp(g, config.k_walk);
    let expanded = spe_encode(&raw, config.spe_bases);
    let (node_aux, p_aug) = inject_aux_features(g, &expanded);
    let node_attrs = g.node_attrs().map(|rows| {
        let f = rows.first().map_or(0, |r| r.len());
        Tensor::from_vec(vec![g.n(), f], rows.iter().flatten().copied().collect())
            .expect("attr matrix")
    });
    let x0 = node_stem_forward(node_attrs.as_ref(), &raw, &node_aux, &params.node_stem)?;
    let p0 = pe_stem_forward(&p_aug, g, &params.pe_stem)?;
    let mut x = x0;
    for layer in &params.layers {
        x = block_forward(&x, Some(&p0), layer)?;
    }
    apply_token_norm(&x, &params.final_norm)
}

/// Sum- or mean-pool node embeddings into one graph embedding.
pub fn pooled_embedding(y: &Tensor, pooling: Pooling) -> Result<Tensor> {
    let n = y.shape()[0];
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let pooled = y.segment_sum(&vec![0; n], 1)?;
    let pooled = match pooling {
        Pooling::Sum => pooled,
        Pooling::Mean => pooled.scale(1.0 / n as f64),
        Pooling::Node => {
            return Err(Error::Config("node pooling has no graph embedding".into()))
        }
    };
    pooled.reshape(vec![y.shape()[1]])
}

fn run_mlp(x: &Tensor, layers: &[(Tensor, Tensor)]) -> Result<Tensor> {
    let mut h = x.clone();
    for (i, (w, b)) in layers.iter().enumerate() {
        h = h.matmul(w)?.add(b)?;
        if i + 1 < layers.len() {
            h = h.relu();
        }
    }
    Ok(h)
}

/// Graph-level prediction: pool then MLP. Errors on an empty graph or a
/// node-pooling config.
pub fn graph_head(y: &Tensor, config: &ModelConfig, params: &ModelParams) -> Result<Tensor> {
    let pooled = pooled_embedding(y, config.pooling)?;
    let v = pooled.reshape(vec![1, y.shape()[1]])?;
    run_mlp(&v, &params.head)?.reshape(vec![config.out_dim])
}

/// Node-level prediction: the head MLP applied to every row of `Y`.
pub fn node_head(y: &Tensor, params: &ModelParams) -> Result<Tensor> {
    run_mlp(y, &params.head)
}

/// Convenience: forward plus pooling.
pub fn graph_embedding(g: &Graph, config: &ModelConfig, params: &ModelParams) -> Result<Tensor> {
    pooled_embedding(&model_forward(g, config, params)?, config.pooling)
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TensorManifest {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// JSON manifest stored beside the flat f64 checkpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub seed: u64,
    pub config: ModelConfig,
    tensors: Vec<TensorManifest>,
}

/// Write all trainable tensors as flat little-endian f64 plus a JSON
/// manifest mapping names to shapes and offsets.
pub fn save_checkpoint(params: &ModelParams, config: &ModelConfig, path: &Path) -> Result<()> {
    let named = params.trainable();
    let mut manifest = CheckpointManifest {
        seed: config.seed,
        config: config.clone(),
        tensors: Vec::with_capacity(named.len()),
    };
    let mut file = std::fs::File::create(path)?;
    let mut offset = 0usize;
    for (name, t) in &named {
        manifest.tensors.push(TensorManifest {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        for v in t.data() {
            file.write_all(&v.to_le_bytes())?;
        }
        offset += t.numel();
    }
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Load a checkpoint saved by [`save_checkpoint`]. The manifest's config is
/// used to rebuild the parameter skeleton; shapes must match exactly.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = ModelParams::init(&manifest.config, None, None)?;
    let skeleton = params.trainable();
    if skeleton.len() != manifest.tensors.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, model expects {}",
            manifest.tensors.len(),
            skeleton.len()
        )));
    }
    let mut tensors = Vec::with_capacity(skeleton.len());
    for ((name, t), entry) in skeleton.iter().zip(&manifest.tensors) {
        if name != &entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::Config(format!(
                "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                entry.name,
                entry.shape,
                name,
                t.shape()
            )));
        }
        let end = entry.offset + t.numel();
        if end > values.len() {
            return Err(Error::Config("checkpoint file truncated".into()));
        }
        tensors.push(Tensor::from_vec(
            entry.shape.clone(),
            values[entry.offset..end].to_vec(),
        )?);
    }
    params.set_trainable(tensors);
    Ok((manifest.config, params))
}
