//! The toy decoder-only transformer: configuration, parameters, and the
//! component inventory (attention heads and MLP neurons).
//!
//! Layers are numbered 1-based everywhere public (names, component ids,
//! score files); `Z_0` is the embedding stream and `Z_l` the residual state
//! after layer `l`.

use crate::error::{Error, Result};
use crate::tensor::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Architecture of the toy decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::InvalidConfig("zero-sized dimension".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_kv_heads == 0 || self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if self.d_head() % 2 != 0 {
            return Err(Error::InvalidConfig(format!("head dim {} is odd (RoPE needs pairs)", self.d_head())));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::InvalidConfig("vocab_size and max_seq_len must be positive".into()));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Query heads per KV head.
    pub fn kv_group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    /// KV group a query head belongs to.
    pub fn kv_group(&self, head: usize) -> usize {
        head / self.kv_group_size()
    }
}

/// One layer's weights, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParamsT<T> {
    /// `[d_model, n_heads * d_head]`
    pub w_q: Vec<T>,
    /// `[d_model, n_kv_heads * d_head]`
    pub w_k: Vec<T>,
    /// `[d_model, n_kv_heads * d_head]`
    pub w_v: Vec<T>,
    /// `[n_heads * d_head, d_model]`
    pub w_o: Vec<T>,
    /// `[d_model, d_ff]`
    pub w_gate: Vec<T>,
    /// `[d_model, d_ff]`
    pub w_up: Vec<T>,
    /// `[d_ff, d_model]`
    pub w_down: Vec<T>,
    /// `[d_model]`
    pub attn_norm: Vec<T>,
    /// `[d_model]`
    pub mlp_norm: Vec<T>,
}

pub type LayerParams = LayerParamsT<f32>;

/// Full parameter set with a total named-tensor directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParamsT<T> {
    pub config: ModelConfig,
    /// `[vocab_size, d_model]`
    pub token_embedding: Vec<T>,
    pub layers: Vec<LayerParamsT<T>>,
    /// `[d_model]`
    pub final_norm: Vec<T>,
    /// `[d_model, vocab_size]` (untied from the embedding)
    pub lm_head: Vec<T>,
}

pub type ModelParams = ModelParamsT<f32>;

/// Per-layer tensor short names, in directory order.
pub const LAYER_TENSORS: [&str; 9] =
    ["w_q", "w_k", "w_v", "w_o", "w_gate", "w_up", "w_down", "attn_norm", "mlp_norm"];

/// Stable full tensor-name directory: embedding, then each layer's tensors,
/// then the final norm and output head.
pub fn tensor_names(config: &ModelConfig) -> Vec<String> {
    let mut names = vec!["token_embedding".to_string()];
    for l in 1..=config.n_layers {
        for t in LAYER_TENSORS {
            names.push(format!("layers.{l}.{t}"));
        }
    }
    names.push("final_norm".to_string());
    names.push("lm_head".to_string());
    names
}

/// Shape of a named tensor.
pub fn tensor_shape(config: &ModelConfig, name: &str) -> Result<(usize, usize)> {
    let d = config.d_model;
    let dk = config.d_head();
    if name == "token_embedding" {
        return Ok((config.vocab_size, d));
    }
    if name == "final_norm" {
        return Ok((1, d));
    }
    if name == "lm_head" {
        return Ok((d, config.vocab_size));
    }
    let rest = name
        .strip_prefix("layers.")
        .ok_or_else(|| Error::UnknownComponent(name.to_string()))?;
    let (l, t) = rest
        .split_once('.')
        .ok_or_else(|| Error::UnknownComponent(name.to_string()))?;
    let l: usize = l.parse().map_err(|_| Error::UnknownComponent(name.to_string()))?;
    if l == 0 || l > config.n_layers {
        return Err(Error::UnknownComponent(name.to_string()));
    }
    match t {
        "w_q" => Ok((d, config.n_heads * dk)),
        "w_k" | "w_v" => Ok((d, config.n_kv_heads * dk)),
        "w_o" => Ok((config.n_heads * dk, d)),
        "w_gate" | "w_up" => Ok((d, config.d_ff)),
        "w_down" => Ok((config.d_ff, d)),
        "attn_norm" | "mlp_norm" => Ok((1, d)),
        _ => Err(Error::UnknownComponent(name.to_string())),
    }
}

impl<T: Real> ModelParamsT<T> {
    /// Look up a tensor by directory name.
    pub fn tensor(&self, name: &str) -> Result<&[T]> {
        self.tensor_ref(name).map(|t| &**t)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Vec<T>> {
        // Split borrows: resolve the layer index first.
        if name == "token_embedding" {
            return Ok(&mut self.token_embedding);
        }
        if name == "final_norm" {
            return Ok(&mut self.final_norm);
        }
        if name == "lm_head" {
            return Ok(&mut self.lm_head);
        }
        let (l, t) = parse_layer_tensor(name, self.config.n_layers)?;
        let layer = &mut self.layers[l - 1];
        Ok(match t {
            "w_q" => &mut layer.w_q,
            "w_k" => &mut layer.w_k,
            "w_v" => &mut layer.w_v,
            "w_o" => &mut layer.w_o,
            "w_gate" => &mut layer.w_gate,
            "w_up" => &mut layer.w_up,
            "w_down" => &mut layer.w_down,
            "attn_norm" => &mut layer.attn_norm,
            "mlp_norm" => &mut layer.mlp_norm,
            _ => unreachable!(),
        })
    }

    fn tensor_ref(&self, name: &str) -> Result<&Vec<T>> {
        if name == "token_embedding" {
            return Ok(&self.token_embedding);
        }
        if name == "final_norm" {
            return Ok(&self.final_norm);
        }
        if name == "lm_head" {
            return Ok(&self.lm_head);
        }
        let (l, t) = parse_layer_tensor(name, self.config.n_layers)?;
        let layer = &self.layers[l - 1];
        Ok(match t {
            "w_q" => &layer.w_q,
            "w_k" => &layer.w_k,
            "w_v" => &layer.w_v,
            "w_o" => &layer.w_o,
            "w_gate" => &layer.w_gate,
            "w_up" => &layer.w_up,
            "w_down" => &layer.w_down,
            "attn_norm" => &layer.attn_norm,
            "mlp_norm" => &layer.mlp_norm,
            _ => unreachable!(),
        })
    }

    pub fn cast<U: Real>(&self) -> ModelParamsT<U> {
        let c = |v: &[T]| v.iter().map(|&x| U::of_f64(x.as_f64())).collect::<Vec<U>>();
        ModelParamsT {
            config: self.config,
            token_embedding: c(&self.token_embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParamsT {
                    w_q: c(&l.w_q),
                    w_k: c(&l.w_k),
                    w_v: c(&l.w_v),
                    w_o: c(&l.w_o),
                    w_gate: c(&l.w_gate),
                    w_up: c(&l.w_up),
                    w_down: c(&l.w_down),
                    attn_norm: c(&l.attn_norm),
                    mlp_norm: c(&l.mlp_norm),
                })
                .collect(),
            final_norm: c(&self.final_norm),
            lm_head: c(&self.lm_head),
        }
    }
}

fn parse_layer_tensor(name: &str, n_layers: usize) -> Result<(usize, &str)> {
    let rest = name
        .strip_prefix("layers.")
        .ok_or_else(|| Error::UnknownComponent(name.to_string()))?;
    let (l, t) = rest
        .split_once('.')
        .ok_or_else(|| Error::UnknownComponent(name.to_string()))?;
    let l: usize = l.parse().map_err(|_| Error::UnknownComponent(name.to_string()))?;
    if l == 0 || l > n_layers || !LAYER_TENSORS.contains(&t) {
        return Err(Error::UnknownComponent(name.to_string()));
    }
    Ok((l, t))
}

/// Deterministic init: scaled normal (std 0.02) for weight matrices and
/// embeddings, unit norm gains.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 0.02).expect("valid std");
    let mut fill = |n: usize| -> Vec<f32> { (0..n).map(|_| normal.sample(&mut rng)).collect() };

    let d = config.d_model;
    let dk = config.d_head();
    let token_embedding = fill(config.vocab_size * d);
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        layers.push(LayerParams {
            w_q: fill(d * config.n_heads * dk),
            w_k: fill(d * config.n_kv_heads * dk),
            w_v: fill(d * config.n_kv_heads * dk),
            w_o: fill(config.n_heads * dk * d),
            w_gate: fill(d * config.d_ff),
            w_up: fill(d * config.d_ff),
            w_down: fill(config.d_ff * d),
            attn_norm: vec![1.0; d],
            mlp_norm: vec![1.0; d],
        });
    }
    let final_norm = vec![1.0; d];
    let lm_head = fill(d * config.vocab_size);
    Ok(ModelParams { config: *config, token_embedding, layers, final_norm, lm_head })
}

/// Basic intervention unit: an attention head or an MLP neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Head,
    Neuron,
}

impl ComponentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ComponentKind::Head => "head",
            ComponentKind::Neuron => "neuron",
        }
    }
}

/// Identifies one head `H(l,h)` or neuron `N(l,j)`; `layer` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId {
    pub kind: ComponentKind,
    pub layer: usize,
    pub index: usize,
}

impl ComponentId {
    pub fn head(layer: usize, index: usize) -> Self {
        ComponentId { kind: ComponentKind::Head, layer, index }
    }

    pub fn neuron(layer: usize, index: usize) -> Self {
        ComponentId { kind: ComponentKind::Neuron, layer, index }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let ok = self.layer >= 1
            && self.layer <= config.n_layers
            && match self.kind {
                ComponentKind::Head => self.index < config.n_heads,
                ComponentKind::Neuron => self.index < config.d_ff,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::UnknownComponent(self.to_string()))
        }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ComponentKind::Head => write!(f, "H({},{})", self.layer, self.index),
            ComponentKind::Neuron => write!(f, "N({},{})", self.layer, self.index),
        }
    }
}

/// Candidate component set, layer-major with heads before neurons.
pub fn enumerate_components(config: &ModelConfig) -> Vec<ComponentId> {
    let mut out = Vec::with_capacity(config.n_layers * (config.n_heads + config.d_ff));
    for l in 1..=config.n_layers {
        for h in 0..config.n_heads {
            out.push(ComponentId::head(l, h));
        }
        for j in 0..config.d_ff {
            out.push(ComponentId::neuron(l, j));
        }
    }
    out
}

pub fn test_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        n_kv_heads: 2,
        d_ff: 32,
        vocab_size: 64,
        max_seq_len: 32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_invariants() {
        let mut c = test_config();
        assert!(c.validate().is_ok());
        c.n_kv_heads = 3;
        assert!(c.validate().is_err());
        c.n_kv_heads = 2;
        c.d_model = 17;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let c = test_config();
        let a = init_model(&c, 7).unwrap();
        let b = init_model(&c, 7).unwrap();
        assert_eq!(a, b);
        let other = init_model(&c, 8).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn directory_is_total_and_counts_tensors() {
        // 9 tensors per layer (7 matrices + 2 norm gains) plus embedding,
        // final norm, and lm head.
        let c = test_config();
        let names = tensor_names(&c);
        assert_eq!(names.len(), 2 * 9 + 3);
        let params = init_model(&c, 0).unwrap();
        for name in &names {
            let (r, cols) = tensor_shape(&c, name).unwrap();
            assert_eq!(params.tensor(name).unwrap().len(), r * cols, "{name}");
        }
        assert!(params.tensor("layers.3.w_q").is_err());
        assert!(params.tensor("layers.1.bogus").is_err());
    }

    #[test]
    fn component_enumeration_order_and_count() {
        let c = ModelConfig { n_layers: 2, n_heads: 4, d_ff: 8, ..test_config() };
        let comps = enumerate_components(&c);
        assert_eq!(comps.len(), 2 * 4 + 2 * 8);
        assert_eq!(comps[0], ComponentId::head(1, 0));
        assert_eq!(comps[4], ComponentId::neuron(1, 0));
        assert_eq!(comps[12], ComponentId::head(2, 0));

        let single = ModelConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 1,
            n_kv_heads: 1,
            d_ff: 1,
            vocab_size: 8,
            max_seq_len: 8,
        };
        assert_eq!(enumerate_components(&single).len(), 2);
    }

    #[test]
    fn llama_3b_shape_has_672_heads() {
        let c = ModelConfig {
            n_layers: 28,
            d_model: 3072,
            n_heads: 24,
            n_kv_heads: 8,
            d_ff: 8192,
            vocab_size: 128_256,
            max_seq_len: 4096,
        };
        assert!(c.validate().is_ok());
        assert_eq!(c.kv_group_size(), 3);
        let heads = enumerate_components(&c)
            .iter()
            .filter(|cid| cid.kind == ComponentKind::Head)
            .count();
        assert_eq!(heads, 28 * 24);
    }
}
