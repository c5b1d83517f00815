//! A small post-layer-norm transformer encoder that exposes every layer's
//! hidden states, plus a tied-weight masked-token prediction head.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Graph, Rng, Scalar, Segment, Tensor, Var};
use crate::tokenizer::TokenizedInstance;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
/// Instances per packed forward pass at inference time.
const INFERENCE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 4,
            heads: 4,
            dim: 64,
            ffn_dim: 256,
            dropout: 0.1,
            vocab_size: 512,
            max_positions: crate::tokenizer::MAX_SEQ_LEN,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.ffn_dim == 0 {
            return fail("ffn_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.vocab_size <= crate::tokenizer::Vocab::NUM_SPECIAL {
            return fail(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if self.max_positions < 3 {
            return fail("max_positions must be >= 3".into());
        }
        Ok(())
    }

    /// Closed-form parameter count of the declared architecture.
    pub fn param_count(&self) -> usize {
        let (v, p, d, f) = (self.vocab_size, self.max_positions, self.dim, self.ffn_dim);
        let embeddings = v * d + p * d + 2 * d;
        let attention = 4 * (d * d + d) + 2 * d;
        let ffn = d * f + f + f * d + d + 2 * d;
        let mlm_head = d * d + d + 2 * d + v;
        embeddings + self.layers * (attention + ffn) + mlm_head
    }

    /// Ordered `(name, shape)` of every parameter; this is also the on-disk order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (v, p, d, f) = (self.vocab_size, self.max_positions, self.dim, self.ffn_dim);
        let mut out = vec![
            ("embeddings.token".to_string(), vec![v, d]),
            ("embeddings.position".to_string(), vec![p, d]),
            ("embeddings.norm.gamma".to_string(), vec![d]),
            ("embeddings.norm.beta".to_string(), vec![d]),
        ];
        for l in 0..self.layers {
            let shapes: [(&str, Vec<usize>); PER_LAYER] = [
                ("attn.query.weight", vec![d, d]),
                ("attn.query.bias", vec![d]),
                ("attn.key.weight", vec![d, d]),
                ("attn.key.bias", vec![d]),
                ("attn.value.weight", vec![d, d]),
                ("attn.value.bias", vec![d]),
                ("attn.output.weight", vec![d, d]),
                ("attn.output.bias", vec![d]),
                ("attn.norm.gamma", vec![d]),
                ("attn.norm.beta", vec![d]),
                ("ffn.input.weight", vec![d, f]),
                ("ffn.input.bias", vec![f]),
                ("ffn.output.weight", vec![f, d]),
                ("ffn.output.bias", vec![d]),
                ("ffn.norm.gamma", vec![d]),
                ("ffn.norm.beta", vec![d]),
            ];
            out.extend(shapes.into_iter().map(|(n, s)| (format!("layer{l}.{n}"), s)));
        }
        out.extend([
            ("mlm.transform.weight".to_string(), vec![d, d]),
            ("mlm.transform.bias".to_string(), vec![d]),
            ("mlm.norm.gamma".to_string(), vec![d]),
            ("mlm.norm.beta".to_string(), vec![d]),
            ("mlm.output.bias".to_string(), vec![v]),
        ]);
        out
    }
}

const EMB_TOKEN: usize = 0;
const EMB_POSITION: usize = 1;
const EMB_GAMMA: usize = 2;
const EMB_BETA: usize = 3;
const LAYER_BASE: usize = 4;
const PER_LAYER: usize = 16;

fn layer_param(layer: usize, offset: usize) -> usize {
    LAYER_BASE + layer * PER_LAYER + offset
}

fn mlm_param(cfg: &EncoderConfig, offset: usize) -> usize {
    LAYER_BASE + cfg.layers * PER_LAYER + offset
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<T: Scalar = f32> {
    pub config: EncoderConfig,
    params: Vec<Tensor<T>>,
}

/// Hidden states of one instance: the embedding output followed by each
/// transformer layer's output, each `[tokens x dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStates<T: Scalar = f32> {
    layers: Vec<Tensor<T>>,
}

impl<T: Scalar> LayerStates<T> {
    pub fn new(layers: Vec<Tensor<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Data("layer states must contain the embedding layer".into()));
        }
        let shape = layers[0].shape().to_vec();
        if layers.iter().any(|l| l.shape() != shape.as_slice()) {
            return Err(Error::shape("layer_states", "layers disagree in shape"));
        }
        Ok(LayerStates { layers })
    }

    /// `L + 1`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &Tensor<T> {
        &self.layers[i]
    }

    pub fn layers(&self) -> &[Tensor<T>] {
        &self.layers
    }

    pub fn tokens(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols()
    }
}

/// Packed forward output on a graph: one `[total_tokens x dim]` node per layer.
#[derive(Debug)]
pub struct Forward {
    pub layers: Vec<Var>,
    pub segments: Vec<Segment>,
}

impl<T: Scalar> EncoderModel<T> {
    /// Normal(0, 0.02) weights, zero biases, unit layer-norm gains.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let params = config
            .param_layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with("gamma") {
                    vec![T::one(); n]
                } else if name.ends_with("weight") || name.starts_with("embeddings.") && shape.len() == 2 {
                    (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
                } else {
                    vec![T::zero(); n]
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderModel { config, params })
    }

    pub fn from_params(config: EncoderConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != params.len() {
            return Err(Error::Data(format!("expected {} parameter arrays, got {}", layout.len(), params.len())));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Data(format!("{name}: expected shape {shape:?}, got {:?}", p.shape())));
            }
        }
        Ok(EncoderModel { config, params })
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> EncoderModel<U> {
        EncoderModel {
            config: self.config.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Place every parameter on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    fn check_input(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Data("empty input".into()));
        }
        if ids.len() > self.config.max_positions {
            return Err(Error::Data(format!(
                "input of {} tokens exceeds max_positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Data(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Run the encoder over a batch of id sequences packed into one graph.
    ///
    /// In training mode dropout is applied after the embedding layer norm, to
    /// the attention probabilities, to the attention output projection and to
    /// the feed-forward output.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        batch: &[&[u32]],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let mut segments = Vec::with_capacity(batch.len());
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for seq in batch {
            self.check_input(seq)?;
            segments.push(Segment {
                start: ids.len(),
                len: seq.len(),
            });
            ids.extend(seq.iter().map(|&i| i as usize));
            positions.extend(0..seq.len());
        }
        let train = mode == Mode::Train;
        let p = cfg.dropout;

        let tok = g.gather_rows(params[EMB_TOKEN], &ids)?;
        let pos = g.gather_rows(params[EMB_POSITION], &positions)?;
        let x = g.add(tok, pos)?;
        let x = g.layer_norm(x, params[EMB_GAMMA], params[EMB_BETA], LN_EPS)?;
        let mut x = g.dropout(x, p, rng, train)?;
        let mut layers = vec![x];

        for l in 0..cfg.layers {
            let w = |o| params[layer_param(l, o)];
            let q = g.matmul(x, w(0))?;
            let q = g.add_row(q, w(1))?;
            let k = g.matmul(x, w(2))?;
            let k = g.add_row(k, w(3))?;
            let v = g.matmul(x, w(4))?;
            let v = g.add_row(v, w(5))?;
            let attn_drop = if train && p > 0.0 { Some((p, &mut *rng)) } else { None };
            let a = g.attention(q, k, v, &segments, cfg.heads, attn_drop)?;
            let o = g.matmul(a, w(6))?;
            let o = g.add_row(o, w(7))?;
            let o = g.dropout(o, p, rng, train)?;
            let h = g.add(x, o)?;
            let h = g.layer_norm(h, w(8), w(9), LN_EPS)?;

            let f = g.matmul(h, w(10))?;
            let f = g.add_row(f, w(11))?;
            let f = g.gelu(f)?;
            let f = g.matmul(f, w(12))?;
            let f = g.add_row(f, w(13))?;
            let f = g.dropout(f, p, rng, train)?;
            let y = g.add(h, f)?;
            x = g.layer_norm(y, w(14), w(15), LN_EPS)?;
            layers.push(x);
        }
        Ok(Forward { layers, segments })
    }

    /// Vocabulary logits for the given rows of `hidden`, through the MLM
    /// transform and the tied token-embedding decoder.
    pub fn mlm_logits(&self, g: &mut Graph<T>, params: &[Var], hidden: Var, rows: &[usize]) -> Result<Var> {
        let cfg = &self.config;
        let h = g.gather_rows(hidden, rows)?;
        let h = g.matmul(h, params[mlm_param(cfg, 0)])?;
        let h = g.add_row(h, params[mlm_param(cfg, 1)])?;
        let h = g.gelu(h)?;
        let h = g.layer_norm(h, params[mlm_param(cfg, 2)], params[mlm_param(cfg, 3)], LN_EPS)?;
        let logits = g.matmul_t(h, params[EMB_TOKEN], true)?;
        g.add_row(logits, params[mlm_param(cfg, 4)])
    }

    /// Encode one instance.
    pub fn encode(&self, instance: &TokenizedInstance, mode: Mode, rng: &mut Rng) -> Result<LayerStates<T>> {
        Ok(self.encode_ids(&[instance.ids.as_slice()], mode, rng)?.remove(0))
    }

    /// Encode many instances, packed in chunks.
    pub fn encode_batch(
        &self,
        instances: &[&TokenizedInstance],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Vec<LayerStates<T>>> {
        let ids: Vec<&[u32]> = instances.iter().map(|i| i.ids.as_slice()).collect();
        self.encode_ids(&ids, mode, rng)
    }

    pub fn encode_ids(&self, batch: &[&[u32]], mode: Mode, rng: &mut Rng) -> Result<Vec<LayerStates<T>>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
            let fwd = self.forward(&mut g, &params, chunk, mode, rng)?;
            let d = self.config.dim;
            for seg in &fwd.segments {
                let layers = fwd
                    .layers
                    .iter()
                    .map(|&v| {
                        let data = g.value(v).data()[seg.start * d..(seg.start + seg.len) * d].to_vec();
                        Tensor::new(vec![seg.len, d], data)
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(LayerStates { layers });
            }
        }
        Ok(out)
    }
}
