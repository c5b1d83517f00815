//! Evaluation protocols over any [`Embedder`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::{cosine, Embedder, LayerSpec};
use crate::tokenizer::TargetedSentence;

use super::data::{Exemplar, Label, SimPair, WicPair, WsdInstance};
use super::metrics::{auc, binary_eval, spearman, threshold_search};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layer_spec: Option<LayerSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold: Option<f64>,
    pub instances: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_layer: Vec<LayerResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerResult {
    pub layer_spec: LayerSpec,
    pub value: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Embed every context once; duplicates share a vector.
fn embed_all<E: Embedder + ?Sized>(embedder: &E, contexts: &[&TargetedSentence]) -> Result<Vec<Vec<f32>>> {
    let mut index: HashMap<(&str, (usize, usize)), usize> = HashMap::new();
    let mut unique: Vec<TargetedSentence> = Vec::new();
    let slots: Vec<usize> = contexts
        .iter()
        .map(|c| {
            *index.entry((c.sentence.as_str(), c.span)).or_insert_with(|| {
                unique.push((*c).clone());
                unique.len() - 1
            })
        })
        .collect();
    let vectors = embedder.embed_batch(&unique)?;
    Ok(slots.into_iter().map(|i| vectors[i].clone()).collect())
}

fn pair_cosines<'a, E: Embedder + ?Sized>(
    embedder: &E,
    pairs: impl Iterator<Item = (&'a TargetedSentence, &'a TargetedSentence)>,
) -> Result<Vec<f64>> {
    let flat: Vec<&TargetedSentence> = pairs.flat_map(|(a, b)| [a, b]).collect();
    let v = embed_all(embedder, &flat)?;
    v.chunks(2).map(|c| cosine(&c[0], &c[1])).collect()
}

/// Cosine between the two contexts of each pair.
pub fn wic_similarities<E: Embedder + ?Sized>(embedder: &E, pairs: &[WicPair]) -> Result<Vec<f64>> {
    pair_cosines(embedder, pairs.iter().map(|p| (&p.first, &p.second)))
}

fn known_labels(pairs: &[WicPair], what: &str) -> Result<Vec<bool>> {
    pairs
        .iter()
        .map(|p| p.label.as_bool())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Data(format!("{what} set has unlabelled pairs")))
}

/// Tune a threshold on `dev`, report accuracy and AUC on `test`.
pub fn wic_task_eval<E: Embedder + ?Sized>(embedder: &E, dev: &[WicPair], test: &[WicPair]) -> Result<EvalReport> {
    let dev_labels = known_labels(dev, "dev")?;
    let test_labels = known_labels(test, "test")?;
    let dev_sims = wic_similarities(embedder, dev)?;
    let tuned = threshold_search(&dev_sims, &dev_labels)?;
    let test_sims = wic_similarities(embedder, test)?;
    let both = test_labels.iter().any(|&l| l) && test_labels.iter().any(|&l| !l);
    Ok(EvalReport {
        task: "wic".into(),
        accuracy: Some(binary_eval(&test_sims, &test_labels, tuned.threshold)?),
        dev_accuracy: Some(tuned.accuracy),
        auc: if both { Some(auc(&test_sims, &test_labels)?) } else { None },
        threshold: Some(tuned.threshold),
        instances: test.len(),
        ..EvalReport::default()
    })
}

/// Threshold predictions for possibly unlabelled pairs.
pub fn wic_predict<E: Embedder + ?Sized>(embedder: &E, pairs: &[WicPair], threshold: f64) -> Result<Vec<Label>> {
    Ok(wic_similarities(embedder, pairs)?
        .into_iter()
        .map(|s| Label::from(s >= threshold))
        .collect())
}

/// Spearman correlation between cosines and gold scores.
pub fn similarity_eval<E: Embedder + ?Sized>(embedder: &E, pairs: &[SimPair]) -> Result<EvalReport> {
    let sims = pair_cosines(embedder, pairs.iter().map(|p| (&p.first, &p.second)))?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    Ok(EvalReport {
        task: "similarity".into(),
        spearman: Some(spearman(&sims, &gold)?),
        instances: pairs.len(),
        ..EvalReport::default()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WsdOutcome {
    pub accuracy: f64,
    pub predictions: Vec<String>,
}

/// Nearest exemplar among each instance's candidates; ties go to the earlier candidate.
pub fn one_shot_wsd<E: Embedder + ?Sized>(embedder: &E, exemplars: &[Exemplar], test: &[WsdInstance]) -> Result<WsdOutcome> {
    if test.is_empty() {
        return Err(Error::Data("no WSD instances".into()));
    }
    let mut by_sense: HashMap<&str, usize> = HashMap::new();
    for (i, e) in exemplars.iter().enumerate() {
        if by_sense.insert(e.sense_id.as_str(), i).is_some() {
            return Err(Error::Data(format!("sense {} has more than one exemplar", e.sense_id)));
        }
    }
    for t in test {
        if t.candidates.is_empty() {
            return Err(Error::Data(format!("instance of {} has no candidate senses", t.word)));
        }
        if let Some(c) = t.candidates.iter().find(|c| !by_sense.contains_key(c.as_str())) {
            return Err(Error::Data(format!("candidate sense {c} has no exemplar")));
        }
    }
    let ex_vecs = embed_all(embedder, &exemplars.iter().map(|e| &e.context).collect::<Vec<_>>())?;
    let test_vecs = embed_all(embedder, &test.iter().map(|t| &t.context).collect::<Vec<_>>())?;
    let mut predictions = Vec::with_capacity(test.len());
    let mut hits = 0;
    for (t, v) in test.iter().zip(&test_vecs) {
        let mut best: Option<(f64, &String)> = None;
        for c in &t.candidates {
            let s = cosine(v, &ex_vecs[by_sense[c.as_str()]])?;
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, c));
            }
        }
        let pred = best.expect("non-empty candidates").1.clone();
        hits += usize::from(pred == t.gold);
        predictions.push(pred);
    }
    Ok(WsdOutcome {
        accuracy: hits as f64 / test.len() as f64,
        predictions,
    })
}

pub const WORD_SLOT: &str = "{word}";
pub const FILLER_SLOT: &str = "{filler}";

/// Fill `template` and locate the target word, e.g. `"{word} means {filler}"`.
pub fn instantiate_template(word: &str, template: &str, filler: &str) -> Result<TargetedSentence> {
    for slot in [WORD_SLOT, FILLER_SLOT] {
        let n = template.matches(slot).count();
        if n != 1 {
            return Err(Error::Config(format!("template must contain {slot} exactly once, found {n}: {template:?}")));
        }
    }
    let w = template.find(WORD_SLOT).expect("checked");
    let f = template.find(FILLER_SLOT).expect("checked");
    let mut sentence = String::new();
    let start;
    if w < f {
        sentence.push_str(&template[..w]);
        start = sentence.chars().count();
        sentence.push_str(word);
        sentence.push_str(&template[w + WORD_SLOT.len()..f]);
        sentence.push_str(filler);
        sentence.push_str(&template[f + FILLER_SLOT.len()..]);
    } else {
        sentence.push_str(&template[..f]);
        sentence.push_str(filler);
        sentence.push_str(&template[f + FILLER_SLOT.len()..w]);
        start = sentence.chars().count();
        sentence.push_str(word);
        sentence.push_str(&template[w + WORD_SLOT.len()..]);
    }
    Ok(TargetedSentence {
        span: (start, start + word.chars().count()),
        sentence,
    })
}

/// WiC embedding of `word` inside the instantiated template.
pub fn embed_with_template<E: Embedder + ?Sized>(embedder: &E, word: &str, template: &str, filler: &str) -> Result<Vec<f32>> {
    let t = instantiate_template(word, template, filler)?;
    embedder.embed(&t.sentence, t.span)
}
