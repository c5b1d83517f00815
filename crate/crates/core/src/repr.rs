//! Word-in-context features: the mean over the top-n layers of the mean over
//! the target's tokens. The same extraction is used during contrastive
//! training and at evaluation time.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderModel, Forward, LayerStates, Mode};
use crate::error::{Error, Result};
use crate::numeric::{Graph, Rng, Scalar, Var};
use crate::tokenizer::{TargetedSentence, Vocab};

/// Which hidden layers feed the representation.
///
/// `n` counts from the top. The embedding output only counts when
/// `include_embedding` is set. `layer` pins a single layer index
/// (0 = embedding output) and overrides `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub n: usize,
    #[serde(default)]
    pub include_embedding: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
}

impl Default for LayerSpec {
    fn default() -> Self {
        LayerSpec::top(4)
    }
}

impl LayerSpec {
    pub fn top(n: usize) -> Self {
        LayerSpec {
            n,
            include_embedding: false,
            layer: None,
        }
    }

    pub fn single(layer: usize) -> Self {
        LayerSpec {
            n: 1,
            include_embedding: layer == 0,
            layer: Some(layer),
        }
    }

    /// Indices into [`LayerStates`] for a model with `num_states = L + 1` states.
    /// `n` larger than the available layers is clamped with a warning.
    pub fn resolve(&self, num_states: usize) -> Result<Vec<usize>> {
        if let Some(l) = self.layer {
            if l >= num_states {
                return Err(Error::Config(format!("layer {l} out of range for {num_states} states")));
            }
            return Ok(vec![l]);
        }
        if self.n == 0 {
            return Err(Error::Config("layer spec n must be >= 1".into()));
        }
        let available = if self.include_embedding { num_states } else { num_states - 1 };
        let n = if self.n > available {
            log::warn!("averaging {} layers requested, model has {available}; clamping", self.n);
            available
        } else {
            self.n
        };
        Ok((num_states - n..num_states).collect())
    }
}

/// Layer-mean then token-mean over the inclusive token span `(a, b)`.
pub fn extract_wic<T: Scalar>(states: &LayerStates<T>, span: (usize, usize), spec: &LayerSpec) -> Result<Vec<T>> {
    let (a, b) = span;
    if a > b || b >= states.tokens() {
        return Err(Error::shape("extract_wic", format!("span ({a},{b}) for {} tokens", states.tokens())));
    }
    let layers = spec.resolve(states.num_layers())?;
    let d = states.dim();
    let mut acc = vec![0.0f64; d];
    for &l in &layers {
        let t = states.layer(l);
        for r in a..=b {
            for (x, &v) in acc.iter_mut().zip(t.row(r)) {
                *x += v.to_f64().unwrap();
            }
        }
    }
    let denom = (layers.len() * (b - a + 1)) as f64;
    Ok(acc.into_iter().map(|x| T::of(x / denom)).collect())
}

/// Cosine similarity. Zero vectors are an error.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", format!("{} vs {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.to_f64().unwrap(), b.to_f64().unwrap());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// WiC features on a graph for a packed forward pass: one row per instance,
/// `spans` given relative to each instance.
pub fn wic_features<T: Scalar>(
    g: &mut Graph<T>,
    fwd: &Forward,
    spans: &[(usize, usize)],
    spec: &LayerSpec,
) -> Result<Var> {
    if spans.len() != fwd.segments.len() {
        return Err(Error::shape("wic_features", "one span per instance required"));
    }
    let absolute: Vec<(usize, usize)> = fwd
        .segments
        .iter()
        .zip(spans)
        .map(|(s, &(a, b))| (s.start + a, s.start + b))
        .collect();
    let layers = spec.resolve(fwd.layers.len())?;
    let mut acc: Option<Var> = None;
    for &l in &layers {
        let m = g.span_mean(fwd.layers[l], &absolute)?;
        acc = Some(match acc {
            Some(a) => g.add(a, m)?,
            None => m,
        });
    }
    let acc = acc.expect("at least one layer");
    if layers.len() == 1 {
        Ok(acc)
    } else {
        g.scale(acc, T::of(1.0 / layers.len() as f64))
    }
}

/// Anything that maps a targeted sentence to a WiC vector.
pub trait Embedder {
    fn embed_batch(&self, items: &[TargetedSentence]) -> Result<Vec<Vec<f32>>>;

    fn embed(&self, sentence: &str, span: (usize, usize)) -> Result<Vec<f32>> {
        let item = TargetedSentence {
            sentence: sentence.to_string(),
            span,
        };
        Ok(self.embed_batch(std::slice::from_ref(&item))?.remove(0))
    }
}

/// Wraps a per-context function, for oracles and baselines.
pub struct FnEmbedder<F>(pub F);

impl<F> Embedder for FnEmbedder<F>
where
    F: Fn(&TargetedSentence) -> Result<Vec<f32>>,
{
    fn embed_batch(&self, items: &[TargetedSentence]) -> Result<Vec<Vec<f32>>> {
        items.iter().map(&self.0).collect()
    }
}

/// Inference-mode WiC embeddings from an encoder.
#[derive(Clone, Copy, Debug)]
pub struct ModelEmbedder<'a> {
    pub model: &'a EncoderModel,
    pub vocab: &'a Vocab,
    pub spec: LayerSpec,
}

impl<'a> ModelEmbedder<'a> {
    pub fn new(model: &'a EncoderModel, vocab: &'a Vocab, spec: LayerSpec) -> Self {
        ModelEmbedder { model, vocab, spec }
    }
}

impl Embedder for ModelEmbedder<'_> {
    fn embed_batch(&self, items: &[TargetedSentence]) -> Result<Vec<Vec<f32>>> {
        let instances = items
            .iter()
            .map(|t| self.vocab.encode_with_target(&t.sentence, t.span))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = instances.iter().collect();
        // inference ignores the stream
        let states = self.model.encode_batch(&refs, Mode::Inference, &mut Rng::new(0))?;
        states
            .iter()
            .zip(&instances)
            .map(|(s, i)| extract_wic(s, i.target, &self.spec))
            .collect()
    }
}

/// One line of an embedding dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub word: String,
    pub layer_spec: LayerSpec,
    pub vector: Vec<f32>,
}

pub fn format_embeddings(records: &[EmbeddingRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_embeddings(text: &str) -> Result<Vec<EmbeddingRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn write_embeddings(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(format_embeddings(records)?.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn states(layers: Vec<Vec<f64>>, tokens: usize) -> LayerStates<f64> {
        let d = layers[0].len() / tokens;
        LayerStates::new(layers.into_iter().map(|l| Tensor::matrix(tokens, d, l).unwrap()).collect()).unwrap()
    }

    #[test]
    fn single_layer_single_token_is_that_vector() {
        let s = states(vec![vec![0.0; 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], 3);
        let v = extract_wic(&s, (1, 1), &LayerSpec::top(1)).unwrap();
        assert_eq!(v, vec![3.0, 4.0]);
    }

    #[test]
    fn two_layer_mean() {
        // span-token means [1,0] and [0,1] in the top two layers
        let s = states(vec![vec![9.0, 9.0], vec![1.0, 0.0], vec![0.0, 1.0]], 1);
        let v = extract_wic(&s, (0, 0), &LayerSpec::top(2)).unwrap();
        assert_eq!(v, vec![0.5, 0.5]);
    }

    #[test]
    fn identical_span_vectors_give_layer_mean() {
        let s = states(vec![vec![0.0; 6], vec![2.0, 4.0, 2.0, 4.0, 2.0, 4.0], vec![6.0, 0.0, 6.0, 0.0, 6.0, 0.0]], 3);
        let v = extract_wic(&s, (0, 2), &LayerSpec::top(2)).unwrap();
        assert_eq!(v, vec![4.0, 2.0]);
    }

    #[test]
    fn clamps_and_all_layer_mean() {
        let s = states(vec![vec![3.0], vec![1.0], vec![2.0]], 1);
        // n beyond available transformer layers clamps to L = 2
        assert_eq!(extract_wic(&s, (0, 0), &LayerSpec::top(9)).unwrap(), vec![1.5]);
        let all = LayerSpec { n: 3, include_embedding: true, layer: None };
        assert_eq!(extract_wic(&s, (0, 0), &all).unwrap(), vec![2.0]);
        assert_eq!(extract_wic(&s, (0, 0), &LayerSpec::single(0)).unwrap(), vec![3.0]);
    }

    #[test]
    fn extraction_is_linear() {
        let base = vec![vec![0.5, -1.0, 2.0, 0.25], vec![1.5, 3.0, -2.0, 0.75]];
        let doubled: Vec<Vec<f64>> = base.iter().map(|l| l.iter().map(|x| 2.0 * x).collect()).collect();
        let a = extract_wic(&states(base, 2), (0, 1), &LayerSpec::top(1)).unwrap();
        let b = extract_wic(&states(doubled, 2), (0, 1), &LayerSpec::top(1)).unwrap();
        assert_eq!(b, a.iter().map(|x| 2.0 * x).collect::<Vec<_>>());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn cosine_cases() {
        assert!((cosine(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0f32, 0.0], &[1.0, 1.0]).unwrap() - 0.70711).abs() < 1e-5);
        assert!(matches!(cosine(&[0.0f64, 0.0], &[1.0, 1.0]), Err(Error::Degenerate(_))));
        let u = [0.3f64, -1.2, 0.8];
        let v = [2.0f64, 0.1, -0.5];
        let scaled: Vec<f64> = u.iter().map(|x| x * 7.5).collect();
        assert!((cosine(&scaled, &v).unwrap() - cosine(&u, &v).unwrap()).abs() < 1e-15);
        assert_eq!(cosine(&u, &v).unwrap(), cosine(&v, &u).unwrap());
    }

    #[test]
    fn graph_features_match_extract_wic() {
        use crate::encoder::EncoderConfig;
        let cfg = EncoderConfig { layers: 3, heads: 2, dim: 8, ffn_dim: 16, dropout: 0.0, vocab_size: 20, max_positions: 10 };
        let m = EncoderModel::<f64>::init(cfg, 2).unwrap();
        let seqs: Vec<Vec<u32>> = vec![vec![3, 5, 6, 7, 4], vec![3, 8, 9, 4]];
        let spans = [(1, 2), (2, 2)];
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
        let fwd = m.forward(&mut g, &p, &refs, Mode::Inference, &mut Rng::new(0)).unwrap();
        let feats = wic_features(&mut g, &fwd, &spans, &LayerSpec::default()).unwrap();
        let states = m.encode_ids(&refs, Mode::Inference, &mut Rng::new(0)).unwrap();
        for (i, s) in states.iter().enumerate() {
            let direct = extract_wic(s, spans[i], &LayerSpec::default()).unwrap();
            for (a, b) in direct.iter().zip(g.value(feats).row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
