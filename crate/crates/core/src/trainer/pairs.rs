//! Duplicated word-in-context instances for contrastive fine-tuning.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::tokenizer::{tokenize, TokenizedInstance, Vocab, MAX_SEQ_LEN};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub instance: TokenizedInstance,
    pub pair_id: usize,
}

/// Every sentence appears twice, consecutively, under one pair id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairDataset {
    entries: Vec<PairEntry>,
}

impl PairDataset {
    pub fn from_instances(instances: Vec<TokenizedInstance>) -> Self {
        let entries = instances
            .into_iter()
            .enumerate()
            .flat_map(|(pair_id, instance)| {
                [
                    PairEntry {
                        instance: instance.clone(),
                        pair_id,
                    },
                    PairEntry { instance, pair_id },
                ]
            })
            .collect();
        PairDataset { entries }
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_pairs(&self) -> usize {
        self.entries.len() / 2
    }

    /// The shared instance of pair `id`.
    pub fn pair(&self, id: usize) -> &TokenizedInstance {
        &self.entries[2 * id].instance
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOptions {
    /// Share of the most frequent word types that may not be targets.
    pub exclude_top_fraction: f64,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            exclude_top_fraction: 0.01,
        }
    }
}

/// Word types barred as targets: the top `fraction` of types by corpus frequency.
pub fn frequent_words<S: AsRef<str>>(corpus: &[S], fraction: f64) -> HashSet<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in corpus {
        for w in tokenize(s.as_ref()).into_iter().filter(|w| !w.is_punctuation()) {
            *counts.entry(w.text).or_default() += 1;
        }
    }
    let n = (counts.len() as f64 * fraction).floor() as usize;
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(w, _)| w).collect()
}

/// Pick one random content word per distinct sentence and duplicate it.
/// Sentences with no eligible word are skipped and counted in the log.
pub fn build_pair_dataset<S: AsRef<str>>(
    corpus: &[S],
    vocab: &Vocab,
    options: &PairOptions,
    rng: &mut Rng,
) -> Result<PairDataset> {
    let banned = frequent_words(corpus, options.exclude_top_fraction);
    let mut seen = HashSet::new();
    let mut instances = Vec::new();
    let mut skipped = 0usize;
    for s in corpus {
        let s = s.as_ref();
        if !seen.insert(s) {
            continue;
        }
        let words = tokenize(s);
        let eligible: Vec<usize> = words
            .iter()
            .enumerate()
            .take(MAX_SEQ_LEN - 2)
            .filter(|(_, w)| !w.is_punctuation() && !banned.contains(&w.text))
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            skipped += 1;
            continue;
        }
        let t = eligible[rng.below(eligible.len())];
        instances.push(vocab.instance_from_words(s, &words, (t, t))?);
    }
    if skipped > 0 {
        log::info!("skipped {skipped} sentences without an eligible target");
    }
    if instances.is_empty() {
        return Err(Error::Data("no sentence has an eligible target word".into()));
    }
    Ok(PairDataset::from_instances(instances))
}
