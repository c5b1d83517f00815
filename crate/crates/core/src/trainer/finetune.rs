//! Contrastive fine-tuning on duplicated word-in-context instances.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderModel, Mode};
use crate::error::{Error, Result};
use crate::numeric::{Graph, Rng, Scalar, Var};
use crate::repr::{wic_features, LayerSpec};
use crate::tokenizer::{TokenizedInstance, Vocab};

use super::loss::contrastive_loss;
use super::masking::apply_span_mask;
use super::optim::{linear_schedule, AdamW};
use super::pairs::{build_pair_dataset, PairOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tau: f64,
    /// Span-mask length per side of the target.
    pub span_k: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Instances per batch, two per pair.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub max_sentences: usize,
    pub include_positive_in_denominator: bool,
    /// Share of the most frequent word types excluded as targets.
    pub exclude_top_fraction: f64,
    pub layer_spec: LayerSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.04,
            span_k: 10,
            dropout: 0.4,
            learning_rate: 2e-5,
            epochs: 1,
            batch_size: 200,
            weight_decay: 0.01,
            warmup_steps: 0,
            max_sentences: 10_000,
            include_positive_in_denominator: false,
            exclude_top_fraction: 0.01,
            layer_spec: LayerSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the small synthetic corpora: sentences are short, so the
    /// mask span shrinks, and a randomly initialised toy encoder needs a far
    /// larger step size than a real pretrained model.
    pub fn toy() -> Self {
        TrainConfig {
            tau: 0.3,
            span_k: 2,
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size < 4 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("batch_size must be even and >= 4, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.max_sentences == 0 {
            return Err(Error::Config("learning_rate, epochs and max_sentences must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.exclude_top_fraction) {
            return Err(Error::Config("exclude_top_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Views laid out as `[x_1, x̄_1, x_2, x̄_2, ..]`; only the `x̄` views are masked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainBatch {
    pub views: Vec<TokenizedInstance>,
    pub positives: Vec<usize>,
    pub masked: Vec<bool>,
}

impl TrainBatch {
    pub fn new(pairs: &[&TokenizedInstance], k: usize, rng: &mut Rng) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::Data(format!("a batch needs at least 2 pairs, got {}", pairs.len())));
        }
        let mut views = Vec::with_capacity(2 * pairs.len());
        let mut masked = Vec::with_capacity(2 * pairs.len());
        for inst in pairs {
            views.push((*inst).clone());
            views.push(apply_span_mask(inst, k, rng));
            masked.extend([false, true]);
        }
        Ok(TrainBatch {
            positives: (0..views.len()).map(|i| i ^ 1).collect(),
            views,
            masked,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.views.len() / 2
    }

    /// Every view other than the anchor and its positive.
    pub fn negatives(&self, anchor: usize) -> Vec<usize> {
        (0..self.views.len()).filter(|&j| j != anchor && j != self.positives[anchor]).collect()
    }

    pub fn spans(&self) -> Vec<(usize, usize)> {
        self.views.iter().map(|v| v.target).collect()
    }
}

/// Contrastive loss of one batch on `g`, both views encoded in training mode.
pub fn batch_loss<T: Scalar>(
    model: &EncoderModel<T>,
    g: &mut Graph<T>,
    params: &[Var],
    batch: &TrainBatch,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Var> {
    let ids: Vec<&[u32]> = batch.views.iter().map(|v| v.ids.as_slice()).collect();
    let fwd = model.forward(g, params, &ids, Mode::Train, rng)?;
    let feats = wic_features(g, &fwd, &batch.spans(), &cfg.layer_spec)?;
    contrastive_loss(g, feats, &batch.positives, cfg.tau, cfg.include_positive_in_denominator)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    /// One loss value per optimizer step.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        loss_csv(&self.losses)
    }
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

/// Deduplicate, then keep a seeded random subset of at most `cap` sentences.
pub fn sample_corpus<S: AsRef<str>>(corpus: &[S], cap: usize, rng: &mut Rng) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out: Vec<String> = corpus
        .iter()
        .map(|s| s.as_ref())
        .filter(|s| seen.insert(*s))
        .map(String::from)
        .collect();
    if out.len() > cap {
        rng.shuffle(&mut out);
        out.truncate(cap);
    }
    out
}

/// One optimizer step per batch of shuffled pairs; a tail of fewer than two
/// pairs is dropped. All parameters the loss reaches are updated.
pub fn finetune<S: AsRef<str>>(
    model: &EncoderModel,
    vocab: &Vocab,
    corpus: &[S],
    cfg: &TrainConfig,
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
    let options = PairOptions {
        exclude_top_fraction: cfg.exclude_top_fraction,
    };
    let dataset = build_pair_dataset(&sentences, vocab, &options, &mut data_rng)?;

    let mut trained = model.clone();
    trained.config.dropout = cfg.dropout;
    let pairs_per_batch = cfg.batch_size / 2;
    let full = dataset.num_pairs() / pairs_per_batch;
    let tail = dataset.num_pairs() % pairs_per_batch;
    let per_epoch = full + usize::from(tail >= 2);
    if per_epoch == 0 {
        return Err(Error::Data("fewer than two pairs to train on".into()));
    }
    let total = per_epoch * cfg.epochs;
    let mut opt = AdamW::new(trained.params(), cfg.weight_decay);
    let mut losses = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..dataset.num_pairs()).collect();
    for _ in 0..cfg.epochs {
        data_rng.shuffle(&mut order);
        for chunk in order.chunks(pairs_per_batch).filter(|c| c.len() >= 2) {
            let pairs: Vec<&TokenizedInstance> = chunk.iter().map(|&i| dataset.pair(i)).collect();
            let batch = TrainBatch::new(&pairs, cfg.span_k, &mut mask_rng)?;
            let mut g = Graph::new();
            let params = trained.bind(&mut g);
            let loss = batch_loss(&trained, &mut g, &params, &batch, cfg, &mut dropout_rng)?;
            losses.push(g.scalar(loss) as f64);
            g.backward(loss)?;
            let grads: Vec<_> = params.iter().map(|&p| g.take_grad(p)).collect();
            let lr = linear_schedule(cfg.learning_rate, opt.steps() as usize, cfg.warmup_steps, total);
            opt.step(trained.params_mut(), &grads, lr)?;
        }
    }
    trained.config.dropout = model.config.dropout;
    Ok(TrainOutcome { model: trained, losses })
}
