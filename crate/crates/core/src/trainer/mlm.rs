//! Masked-language-model pretraining, which stands in for an off-the-shelf
//! pretrained encoder.

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderModel, Mode};
use crate::error::{Error, Result};
use crate::numeric::{Graph, Rng, Var};
use crate::tokenizer::Vocab;

use super::finetune::{sample_corpus, TrainOutcome};
use super::optim::{linear_schedule, AdamW};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlmConfig {
    pub mask_prob: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sentences per batch.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub max_sentences: usize,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            mask_prob: 0.15,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            weight_decay: 0.01,
            warmup_steps: 50,
            max_sentences: 100_000,
            seed: 0,
        }
    }
}

impl MlmConfig {
    /// Enough epochs for the small synthetic corpora to leave the unigram
    /// plateau.
    pub fn toy() -> Self {
        MlmConfig {
            epochs: 30,
            ..MlmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::Config(format!("mask_prob must be in (0, 1), got {}", self.mask_prob)));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 || self.max_sentences == 0 {
            return Err(Error::Config("learning_rate, epochs, batch_size and max_sentences must be positive".into()));
        }
        Ok(())
    }
}

/// A masked input with the positions to predict and their original ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmExample {
    pub input: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Select each non-special position with probability `prob` (at least one);
/// of those 80% become `[MASK]`, 10% a random word and 10% stay unchanged.
pub fn mlm_mask(ids: &[u32], vocab_size: usize, prob: f64, rng: &mut Rng) -> MlmExample {
    let candidates: Vec<usize> = (0..ids.len()).filter(|&i| !Vocab::is_special(ids[i])).collect();
    let mut positions: Vec<usize> = candidates.iter().copied().filter(|_| rng.uniform() < prob).collect();
    if positions.is_empty() && !candidates.is_empty() {
        positions.push(candidates[rng.below(candidates.len())]);
    }
    let mut input = ids.to_vec();
    let words = vocab_size - Vocab::NUM_SPECIAL;
    for &p in &positions {
        let r = rng.uniform();
        if r < 0.8 {
            input[p] = Vocab::MASK_ID;
        } else if r < 0.9 && words > 0 {
            input[p] = (Vocab::NUM_SPECIAL + rng.below(words)) as u32;
        }
    }
    let targets = positions.iter().map(|&p| ids[p]).collect();
    MlmExample { input, positions, targets }
}

fn batch_logits(
    model: &EncoderModel,
    g: &mut Graph,
    params: &[Var],
    batch: &[MlmExample],
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Var, Vec<usize>)> {
    let ids: Vec<&[u32]> = batch.iter().map(|e| e.input.as_slice()).collect();
    let fwd = model.forward(g, params, &ids, mode, rng)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (e, seg) in batch.iter().zip(&fwd.segments) {
        rows.extend(e.positions.iter().map(|p| seg.start + p));
        targets.extend(e.targets.iter().map(|&t| t as usize));
    }
    let top = *fwd.layers.last().expect("at least one layer");
    Ok((model.mlm_logits(g, params, top, &rows)?, targets))
}

pub fn mlm_pretrain<S: AsRef<str>>(
    model: &EncoderModel,
    vocab: &Vocab,
    corpus: &[S],
    cfg: &MlmConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Data("model and vocabulary sizes differ".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut data_rng = root.derive(1);
    let mut mask_rng = root.derive(2);
    let mut dropout_rng = root.derive(3);
    let sentences = sample_corpus(corpus, cfg.max_sentences, &mut data_rng);
    let encoded: Vec<Vec<u32>> = sentences
        .iter()
        .filter_map(|s| vocab.encode(s).ok())
        .map(|i| i.ids)
        .filter(|ids| ids.len() > 2)
        .collect();
    if encoded.is_empty() {
        return Err(Error::Data("no usable sentences for pretraining".into()));
    }
    let mut trained = model.clone();
    let mut opt = AdamW::new(trained.params(), cfg.weight_decay);
    let total = encoded.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut losses = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for _ in 0..cfg.epochs {
        data_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<MlmExample> = chunk
                .iter()
                .map(|&i| mlm_mask(&encoded[i], vocab.len(), cfg.mask_prob, &mut mask_rng))
                .collect();
            let mut g = Graph::new();
            let params = trained.bind(&mut g);
            let (logits, targets) = batch_logits(&trained, &mut g, &params, &batch, Mode::Train, &mut dropout_rng)?;
            let loss = g.cross_entropy(logits, &targets)?;
            losses.push(g.scalar(loss) as f64);
            g.backward(loss)?;
            let grads: Vec<_> = params.iter().map(|&p| g.take_grad(p)).collect();
            let lr = linear_schedule(cfg.learning_rate, opt.steps() as usize, cfg.warmup_steps, total);
            opt.step(trained.params_mut(), &grads, lr)?;
        }
    }
    Ok(TrainOutcome { model: trained, losses })
}

/// Top-1 accuracy at masked positions, every selected position replaced by
/// `[MASK]`, inference mode.
pub fn mlm_accuracy<S: AsRef<str>>(model: &EncoderModel, vocab: &Vocab, corpus: &[S], mask_prob: f64, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut batch = Vec::new();
    for s in corpus {
        let ids = vocab.encode(s.as_ref())?.ids;
        let mut e = mlm_mask(&ids, vocab.len(), mask_prob, &mut rng);
        for &p in &e.positions {
            e.input[p] = Vocab::MASK_ID;
        }
        if !e.positions.is_empty() {
            batch.push(e);
        }
    }
    if batch.is_empty() {
        return Err(Error::Data("no maskable tokens".into()));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for chunk in batch.chunks(128) {
        let mut g = Graph::new();
        let params: Vec<Var> = model.params().iter().map(|p| g.constant(p.clone())).collect();
        let (logits, targets) = batch_logits(model, &mut g, &params, chunk, Mode::Inference, &mut rng)?;
        let l = g.value(logits);
        for (r, &t) in targets.iter().enumerate() {
            let row = l.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hits += usize::from(best == t);
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}
