//! Embedding-geometry diagnostics: isotropy score, random-word similarity,
//! intra-sentence similarity and layer-wise sweeps.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderModel, LayerStates, Mode};
use crate::error::{Error, Result};
use crate::eval::LayerResult;
use crate::numeric::Rng;
use crate::repr::{cosine, extract_wic, LayerSpec};
use crate::tokenizer::Vocab;

/// Mean and population variance over repeated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stat {
    pub mean: f64,
    pub variance: f64,
    pub samples: Vec<f64>,
}

impl Stat {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Degenerate("no samples".into()));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(Stat { mean, variance, samples })
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(min Z / max Z)` with `Z(c) = sum_v exp(c . v)` over the eigenvectors of
/// `V^T V`. Each eigenvector is oriented toward the mean of `V`; when it is
/// orthogonal to the mean, its largest component is made positive.
pub fn isotropy_score(vectors: &[Vec<f64>]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(Error::Degenerate(format!("isotropy needs at least 2 vectors, got {}", vectors.len())));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::shape("isotropy_score", "vectors must share a non-zero dimension"));
    }
    let v = DMatrix::from_fn(vectors.len(), d, |r, c| vectors[r][c]);
    let gram = v.transpose() * &v;
    let scale = gram.amax();
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Degenerate("rank-0 vector set".into()));
    }
    let eig = SymmetricEigen::new(gram);
    let mean = v.row_mean();
    let mut log_z = Vec::with_capacity(d);
    for k in 0..d {
        let mut c = eig.eigenvectors.column(k).into_owned();
        let along = mean.dot(&c.transpose());
        let flip = if along.abs() > 1e-12 * mean.norm().max(1e-300) {
            along < 0.0
        } else {
            let (i, _) = c.iter().enumerate().fold((0, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1 + 1e-12 {
                    (i, x.abs())
                } else {
                    best
                }
            });
            c[i] < 0.0
        };
        if flip {
            c = -c;
        }
        let proj = &v * &c;
        log_z.push(log_sum_exp(proj.iter().cloned()));
    }
    let lo = log_z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = log_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite { op: "isotropy_score" });
    }
    Ok((lo - hi).min(0.0))
}

/// Word-token vectors for one layer spec, grouped by sentence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenVectors {
    /// Per sentence: `(word id, vector)` for every word token.
    pub sentences: Vec<Vec<(u32, Vec<f64>)>>,
}

impl TokenVectors {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Hidden states of a corpus, computed once and reused for every layer.
pub struct ContextualStates {
    sentences: Vec<(Vec<u32>, LayerStates)>,
}

impl ContextualStates {
    pub fn encode<S: AsRef<str>>(model: &EncoderModel, vocab: &Vocab, corpus: &[S]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("empty analysis corpus".into()));
        }
        let instances = corpus.iter().map(|s| vocab.encode(s.as_ref())).collect::<Result<Vec<_>>>()?;
        let ids: Vec<&[u32]> = instances.iter().map(|i| i.ids.as_slice()).collect();
        let states = model.encode_ids(&ids, Mode::Inference, &mut Rng::new(0))?;
        Ok(ContextualStates {
            sentences: instances.into_iter().map(|i| i.ids).zip(states).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_word_tokens(&self, vocab: &Vocab) -> usize {
        self.sentences.iter().map(|(ids, _)| ids.iter().filter(|&&id| vocab.is_word(id)).count()).sum()
    }

    pub fn num_states(&self) -> usize {
        self.sentences[0].1.num_layers()
    }

    /// Every in-vocabulary word token as its own one-token span.
    /// Special tokens, punctuation and unknown words are skipped.
    pub fn vectors(&self, vocab: &Vocab, spec: &LayerSpec) -> Result<TokenVectors> {
        let mut out = Vec::with_capacity(self.sentences.len());
        for (ids, states) in &self.sentences {
            let mut words = Vec::new();
            for (p, &id) in ids.iter().enumerate() {
                if vocab.is_word(id) {
                    let v = extract_wic(states, (p, p), spec)?;
                    words.push((id, v.into_iter().map(f64::from).collect()));
                }
            }
            out.push(words);
        }
        Ok(TokenVectors { sentences: out })
    }
}

/// Isotropy of word-token vectors drawn from `sample_sentences` random
/// sentences (all of them when fewer exist), repeated `repetitions` times.
pub fn sampled_isotropy(tokens: &TokenVectors, sample_sentences: usize, repetitions: usize, rng: &mut Rng) -> Result<Stat> {
    if repetitions == 0 || sample_sentences == 0 {
        return Err(Error::Config("isotropy sampling needs repetitions and sentences >= 1".into()));
    }
    let n = tokens.sentences.len();
    let take = sample_sentences.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        rng.shuffle(&mut order);
        let vs: Vec<Vec<f64>> = order[..take]
            .iter()
            .flat_map(|&i| tokens.sentences[i].iter().map(|(_, v)| v.clone()))
            .collect();
        samples.push(isotropy_score(&vs)?);
    }
    Stat::from_samples(samples)
}

/// Per word type, the mean of its contextual vectors. Sorted by word id.
pub fn word_type_vectors(tokens: &TokenVectors) -> Vec<(u32, Vec<f64>)> {
    let mut acc: HashMap<u32, (Vec<f64>, usize)> = HashMap::new();
    for (id, v) in tokens.sentences.iter().flatten() {
        let e = acc.entry(*id).or_insert_with(|| (vec![0.0; v.len()], 0));
        for (a, x) in e.0.iter_mut().zip(v) {
            *a += x;
        }
        e.1 += 1;
    }
    let mut out: Vec<(u32, Vec<f64>)> = acc
        .into_iter()
        .map(|(id, (s, c))| (id, s.into_iter().map(|x| x / c as f64).collect()))
        .collect();
    out.sort_by_key(|(id, _)| *id);
    out
}

/// Mean pairwise cosine among `n_words` random word types, over `n_samples`
/// independent draws.
pub fn random_word_similarity(tokens: &TokenVectors, n_samples: usize, n_words: usize, rng: &mut Rng) -> Result<Stat> {
    if n_samples == 0 || n_words < 2 {
        return Err(Error::Config("random-word similarity needs n_samples >= 1 and n_words >= 2".into()));
    }
    let words = word_type_vectors(tokens);
    if words.len() < n_words {
        return Err(Error::Data(format!(
            "random-word similarity needs {n_words} distinct words, corpus has {} ({} short)",
            words.len(),
            n_words - words.len()
        )));
    }
    let mut order: Vec<usize> = (0..words.len()).collect();
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        rng.shuffle(&mut order);
        let chosen = &order[..n_words];
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, &a) in chosen.iter().enumerate() {
            for &b in &chosen[i + 1..] {
                sum += cosine(&words[a].1, &words[b].1)?;
                count += 1;
            }
        }
        samples.push(sum / count as f64);
    }
    Stat::from_samples(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntraSentence {
    pub raw: f64,
    pub baseline: f64,
    pub adjusted: f64,
    pub sentences: usize,
}

/// Mean cosine of each word to its sentence's mean vector, averaged over
/// sentences with at least two words, then shifted by `baseline`.
pub fn intra_sentence_similarity(tokens: &TokenVectors, baseline: f64) -> Result<IntraSentence> {
    let (mut total, mut used) = (0.0, 0usize);
    for words in &tokens.sentences {
        if words.len() < 2 {
            continue;
        }
        let d = words[0].1.len();
        let mut mean = vec![0.0; d];
        for (_, v) in words {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / words.len() as f64;
            }
        }
        let mut s = 0.0;
        for (_, v) in words {
            s += cosine(v, &mean)?;
        }
        total += s / words.len() as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Data("no sentence with two or more words".into()));
    }
    let raw = total / used as f64;
    Ok(IntraSentence {
        raw,
        baseline,
        adjusted: raw - baseline,
        sentences: used,
    })
}

/// Run `eval` once per layer spec, in order.
pub fn layer_sweep<F>(specs: &[LayerSpec], mut eval: F) -> Result<Vec<LayerResult>>
where
    F: FnMut(&LayerSpec) -> Result<f64>,
{
    specs
        .iter()
        .map(|s| {
            Ok(LayerResult {
                layer_spec: *s,
                value: eval(s)?,
            })
        })
        .collect()
}

/// One single-layer spec per transformer layer (`1..=layers`).
pub fn single_layer_specs(layers: usize, include_embedding: bool) -> Vec<LayerSpec> {
    let first = if include_embedding { 0 } else { 1 };
    (first..=layers).map(LayerSpec::single).collect()
}

pub fn spec_label(spec: &LayerSpec) -> String {
    match spec.layer {
        Some(l) => l.to_string(),
        None if spec.include_embedding => format!("top{}+emb", spec.n),
        None => format!("top{}", spec.n),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryOptions {
    pub sample_sentences: usize,
    pub repetitions: usize,
    pub word_samples: usize,
    pub words_per_sample: usize,
    pub include_embedding: bool,
    /// Also report the averaged feature space used for WiC.
    pub feature_spec: Option<LayerSpec>,
    pub seed: u64,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        GeometryOptions {
            sample_sentences: 10_000,
            repetitions: 5,
            word_samples: 5,
            words_per_sample: 200,
            include_embedding: true,
            feature_spec: Some(LayerSpec::default()),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerGeometry {
    pub layer: String,
    pub layer_spec: LayerSpec,
    pub isotropy: Stat,
    pub random_word: Stat,
    pub intra_sentence: IntraSentence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryReport {
    pub options: GeometryOptions,
    pub sentences: usize,
    pub tokens: usize,
    pub layers: Vec<LayerGeometry>,
}

impl GeometryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `layer,metric,value,variance`; variance is empty for single values.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,metric,value,variance\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},isotropy,{},{}", l.layer, l.isotropy.mean, l.isotropy.variance);
            let _ = writeln!(s, "{},random_word,{},{}", l.layer, l.random_word.mean, l.random_word.variance);
            let _ = writeln!(s, "{},intra_raw,{},", l.layer, l.intra_sentence.raw);
            let _ = writeln!(s, "{},intra_adjusted,{},", l.layer, l.intra_sentence.adjusted);
        }
        s
    }

    pub fn layer(&self, label: &str) -> Option<&LayerGeometry> {
        self.layers.iter().find(|l| l.layer == label)
    }
}

/// Geometry of one layer spec from precomputed states.
pub fn layer_geometry(
    states: &ContextualStates,
    vocab: &Vocab,
    spec: &LayerSpec,
    options: &GeometryOptions,
    rng: &Rng,
) -> Result<LayerGeometry> {
    let tokens = states.vectors(vocab, spec)?;
    let isotropy = sampled_isotropy(&tokens, options.sample_sentences, options.repetitions, &mut rng.derive(1))?;
    let random_word = random_word_similarity(&tokens, options.word_samples, options.words_per_sample, &mut rng.derive(2))?;
    let intra_sentence = intra_sentence_similarity(&tokens, random_word.mean)?;
    Ok(LayerGeometry {
        layer: spec_label(spec),
        layer_spec: *spec,
        isotropy,
        random_word,
        intra_sentence,
    })
}

/// Per-layer geometry for every single layer plus the optional feature space.
pub fn geometry_report<S: AsRef<str>>(
    model: &EncoderModel,
    vocab: &Vocab,
    corpus: &[S],
    options: &GeometryOptions,
) -> Result<GeometryReport> {
    let states = ContextualStates::encode(model, vocab, corpus)?;
    let mut specs = single_layer_specs(model.config.layers, options.include_embedding);
    specs.extend(options.feature_spec);
    let root = Rng::new(options.seed);
    let mut layers = Vec::with_capacity(specs.len());
    for spec in &specs {
        // Same samples for every layer: the stream depends only on the seed.
        let g = layer_geometry(&states, vocab, spec, options, &root)?;
        log::debug!("geometry {}: IS {:.4}", g.layer, g.isotropy.mean);
        layers.push(g);
    }
    Ok(GeometryReport {
        options: options.clone(),
        sentences: states.len(),
        tokens: states.num_word_tokens(vocab),
        layers,
    })
}
