//! Controllable polysemy corpora with gold senses.
//!
//! Every ambiguous word has a few senses, each tied to its own topical
//! vocabulary. A sentence places one ambiguous word among words from the
//! chosen sense's topic and Zipf-distributed filler, so the sense can only be
//! read off the context.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Exemplar, Label, SimPair, WicPair, WsdInstance};
use crate::numeric::Rng;
use crate::tokenizer::{tokenize, TargetedSentence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Distinct word types: ambiguous words, topical words and filler.
    pub vocab_size: usize,
    pub ambiguous_words: usize,
    pub senses_per_word: usize,
    pub topic_words_per_sense: usize,
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_topical: usize,
    pub max_topical: usize,
    /// Probability that a topical slot draws from another sense of the same word.
    pub topic_overlap: f64,
    pub zipf_exponent: f64,
    /// Required occurrences of every (word, sense).
    pub min_occurrences: usize,
    /// Seeds the lexicon, shared by every corpus drawn with this config.
    pub lexicon_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 500,
            ambiguous_words: 10,
            senses_per_word: 2,
            topic_words_per_sense: 5,
            sentences: 2000,
            min_len: 8,
            max_len: 14,
            min_topical: 3,
            max_topical: 5,
            topic_overlap: 0.0,
            zipf_exponent: 1.0,
            min_occurrences: 50,
            lexicon_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ambiguous_words == 0 || self.senses_per_word < 2 {
            return bad("need at least one ambiguous word with at least two senses".into());
        }
        if self.topic_words_per_sense == 0 {
            return bad("topic_words_per_sense must be positive".into());
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return bad(format!("invalid sentence length range {}..={}", self.min_len, self.max_len));
        }
        if self.max_len > crate::tokenizer::MAX_SEQ_LEN - 3 {
            return bad(format!("max_len {} leaves no room for framing tokens", self.max_len));
        }
        if self.min_topical > self.max_topical || self.max_topical >= self.min_len {
            return bad("topical word counts must satisfy min <= max < min_len".into());
        }
        if !(0.0..=1.0).contains(&self.topic_overlap) || !(self.zipf_exponent >= 0.0) {
            return bad("topic_overlap must be in [0, 1] and zipf_exponent >= 0".into());
        }
        if self.filler_words() == 0 {
            return bad(format!(
                "vocab_size {} leaves no filler words after {} ambiguous and topical words",
                self.vocab_size,
                self.ambiguous_words * (1 + self.senses_per_word * self.topic_words_per_sense)
            ));
        }
        let senses = self.ambiguous_words * self.senses_per_word;
        if self.sentences / senses < self.min_occurrences {
            return bad(format!(
                "{} sentences cannot give each of {senses} senses {} occurrences",
                self.sentences, self.min_occurrences
            ));
        }
        Ok(())
    }

    fn filler_words(&self) -> usize {
        let used = self.ambiguous_words * (1 + self.senses_per_word * self.topic_words_per_sense);
        self.vocab_size.saturating_sub(used)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sense {
    pub id: String,
    pub topic: Vec<String>,
    pub min_occurrences: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseSpec {
    pub word: String,
    pub senses: Vec<Sense>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub words: Vec<SenseSpec>,
    /// Ordered by rank; earlier entries are drawn more often.
    pub filler: Vec<String>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_word(rng: &mut Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS[rng.below(ONSETS.len())], VOWELS[rng.below(VOWELS.len())]))
        .collect()
}

impl Lexicon {
    pub fn generate(cfg: &SynthConfig) -> Result<Lexicon> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.lexicon_seed);
        let mut used = HashSet::new();
        let mut fresh = |rng: &mut Rng, syllables: usize| loop {
            let w = pseudo_word(rng, syllables);
            if used.insert(w.clone()) {
                return w;
            }
        };
        let words = (0..cfg.ambiguous_words)
            .map(|_| {
                let word = fresh(&mut rng, 2);
                let senses = (0..cfg.senses_per_word)
                    .map(|k| Sense {
                        id: format!("{word}.{k}"),
                        topic: (0..cfg.topic_words_per_sense).map(|_| fresh(&mut rng, 3)).collect(),
                        min_occurrences: cfg.min_occurrences,
                    })
                    .collect();
                SenseSpec { word, senses }
            })
            .collect();
        let filler = (0..cfg.filler_words())
            .map(|i| fresh(&mut rng, if i < 40 { 1 } else { 2 }))
            .collect();
        Ok(Lexicon { words, filler })
    }

    /// Topical word to the id of the sense it belongs to.
    pub fn topic_of(&self) -> HashMap<&str, &str> {
        let mut m = HashMap::new();
        for w in &self.words {
            for s in &w.senses {
                for t in &s.topic {
                    m.insert(t.as_str(), s.id.as_str());
                }
            }
        }
        m
    }

    pub fn sense_ids(&self) -> Vec<&str> {
        self.words.iter().flat_map(|w| w.senses.iter().map(|s| s.id.as_str())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub word: String,
    pub sense: String,
    /// Character span `[start, end)`.
    pub span: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSentence {
    pub text: String,
    pub occurrences: Vec<Occurrence>,
    pub topical: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldCorpus {
    pub config: SynthConfig,
    pub seed: u64,
    pub lexicon: Lexicon,
    pub sentences: Vec<GoldSentence>,
}

impl GoldCorpus {
    pub fn texts(&self) -> Vec<String> {
        self.sentences.iter().map(|s| s.text.clone()).collect()
    }

    /// One targeted line per ambiguous-word occurrence.
    pub fn targeted(&self) -> Vec<TargetedSentence> {
        self.sentences
            .iter()
            .flat_map(|s| {
                s.occurrences.iter().map(|o| TargetedSentence {
                    sentence: s.text.clone(),
                    span: o.span,
                })
            })
            .collect()
    }

    /// Sentence indices per (word, sense), senses in lexicon order.
    pub fn index(&self) -> BTreeMap<(String, String), Vec<usize>> {
        let mut m: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for w in &self.lexicon.words {
            for s in &w.senses {
                m.insert((w.word.clone(), s.id.clone()), Vec::new());
            }
        }
        for (i, s) in self.sentences.iter().enumerate() {
            for o in &s.occurrences {
                m.entry((o.word.clone(), o.sense.clone())).or_default().push(i);
            }
        }
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = (1..=n)
            .map(|r| {
                acc += 1.0 / (r as f64).powf(s);
                acc
            })
            .collect();
        Zipf { cumulative }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform() * self.cumulative.last().copied().unwrap_or(0.0);
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// Draw a corpus. Senses are visited round-robin so every quota is met.
pub fn gen_corpus(cfg: &SynthConfig, seed: u64) -> Result<GoldCorpus> {
    let lexicon = Lexicon::generate(cfg)?;
    let mut rng = Rng::new(seed);
    let zipf = Zipf::new(lexicon.filler.len(), cfg.zipf_exponent);
    let senses: Vec<(usize, usize)> = (0..lexicon.words.len())
        .flat_map(|w| (0..cfg.senses_per_word).map(move |s| (w, s)))
        .collect();
    let mut sentences = Vec::with_capacity(cfg.sentences);
    for i in 0..cfg.sentences {
        let (w, s) = senses[i % senses.len()];
        let spec = &lexicon.words[w];
        let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
        let target = rng.below(len);
        let n_topical = cfg.min_topical + rng.below(cfg.max_topical - cfg.min_topical + 1);
        let mut others: Vec<usize> = (0..len).filter(|&p| p != target).collect();
        rng.shuffle(&mut others);
        let topical_slots: HashSet<usize> = others[..n_topical].iter().copied().collect();
        let mut words = Vec::with_capacity(len);
        let mut topical = Vec::new();
        for p in 0..len {
            if p == target {
                words.push(spec.word.clone());
            } else if topical_slots.contains(&p) {
                let mut sense = s;
                if cfg.topic_overlap > 0.0 && rng.uniform() < cfg.topic_overlap {
                    sense = (s + 1 + rng.below(cfg.senses_per_word - 1)) % cfg.senses_per_word;
                }
                let topic = &spec.senses[sense].topic;
                let t = topic[rng.below(topic.len())].clone();
                topical.push(t.clone());
                words.push(t);
            } else {
                words.push(lexicon.filler[zipf.sample(&mut rng)].clone());
            }
        }
        let start: usize = words[..target].iter().map(|x| x.chars().count() + 1).sum();
        let text = format!("{} .", words.join(" "));
        sentences.push(GoldSentence {
            occurrences: vec![Occurrence {
                word: spec.word.clone(),
                sense: spec.senses[s].id.clone(),
                span: (start, start + spec.word.chars().count()),
            }],
            text,
            topical,
        });
    }
    Ok(GoldCorpus {
        config: cfg.clone(),
        seed,
        lexicon,
        sentences,
    })
}

fn check_occurrences(corpus: &GoldCorpus, min: usize) -> Result<BTreeMap<(String, String), Vec<usize>>> {
    let index = corpus.index();
    for ((word, sense), occ) in &index {
        if occ.len() < min {
            return Err(Error::Data(format!(
                "word {word} has {} occurrences of sense {sense}, need {min}",
                occ.len()
            )));
        }
    }
    Ok(index)
}

fn senses_of<'a>(index: &'a BTreeMap<(String, String), Vec<usize>>, word: &str) -> Vec<&'a Vec<usize>> {
    index.iter().filter(|((w, _), _)| w == word).map(|(_, v)| v).collect()
}

fn context(corpus: &GoldCorpus, i: usize) -> TargetedSentence {
    let s = &corpus.sentences[i];
    TargetedSentence {
        sentence: s.text.clone(),
        span: s.occurrences[0].span,
    }
}

/// Two distinct occurrences drawn from `a` and `b` with different texts.
fn draw_two(corpus: &GoldCorpus, a: &[usize], b: &[usize], rng: &mut Rng) -> Option<(usize, usize)> {
    for _ in 0..100 {
        let (i, j) = (a[rng.below(a.len())], b[rng.below(b.len())]);
        if i != j && corpus.sentences[i].text != corpus.sentences[j].text {
            return Some((i, j));
        }
    }
    None
}

/// Balanced same-sense / different-sense pairs over distinct sentences.
pub fn gen_wic_pairs(corpus: &GoldCorpus, n_pairs: usize, rng: &mut Rng) -> Result<Vec<WicPair>> {
    let index = check_occurrences(corpus, 2)?;
    let words = &corpus.lexicon.words;
    let mut pairs = Vec::with_capacity(n_pairs);
    for k in 0..n_pairs {
        let spec = &words[rng.below(words.len())];
        let senses = senses_of(&index, &spec.word);
        let same = k % 2 == 0;
        let s1 = rng.below(senses.len());
        let s2 = if same { s1 } else { (s1 + 1 + rng.below(senses.len() - 1)) % senses.len() };
        let (i, j) = draw_two(corpus, senses[s1], senses[s2], rng)
            .ok_or_else(|| Error::Data(format!("word {} lacks distinct contexts for a pair", spec.word)))?;
        pairs.push(WicPair {
            word: spec.word.clone(),
            first: context(corpus, i),
            second: context(corpus, j),
            label: Label::from(same),
        });
    }
    rng.shuffle(&mut pairs);
    Ok(pairs)
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: BTreeSet<&String> = a.iter().collect();
    let b: BTreeSet<&String> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Graded pairs: same-sense indicator plus half the topical-word Jaccard overlap.
pub fn gen_sim_pairs(corpus: &GoldCorpus, n_pairs: usize, rng: &mut Rng) -> Result<Vec<SimPair>> {
    let index = check_occurrences(corpus, 2)?;
    let words = &corpus.lexicon.words;
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let spec = &words[rng.below(words.len())];
        let all: Vec<usize> = senses_of(&index, &spec.word).into_iter().flatten().copied().collect();
        let (i, j) = draw_two(corpus, &all, &all, rng)
            .ok_or_else(|| Error::Data(format!("word {} lacks distinct contexts for a pair", spec.word)))?;
        let (a, b) = (&corpus.sentences[i], &corpus.sentences[j]);
        let same = a.occurrences[0].sense == b.occurrences[0].sense;
        pairs.push(SimPair {
            word: spec.word.clone(),
            first: context(corpus, i),
            second: context(corpus, j),
            score: f64::from(u8::from(same)) + 0.5 * jaccard(&a.topical, &b.topical),
        });
    }
    Ok(pairs)
}

/// Hold out one occurrence per (word, sense) as its exemplar; the rest, up to
/// `max_test`, become test instances.
pub fn gen_wsd(corpus: &GoldCorpus, max_test: usize, rng: &mut Rng) -> Result<(Vec<Exemplar>, Vec<WsdInstance>)> {
    let index = check_occurrences(corpus, 2)?;
    let mut exemplars = Vec::new();
    let mut test = Vec::new();
    for spec in &corpus.lexicon.words {
        let candidates: Vec<String> = spec.senses.iter().map(|s| s.id.clone()).collect();
        for sense in &spec.senses {
            let occ = &index[&(spec.word.clone(), sense.id.clone())];
            let held = rng.below(occ.len());
            exemplars.push(Exemplar {
                sense_id: sense.id.clone(),
                context: context(corpus, occ[held]),
            });
            for (_, &i) in occ.iter().enumerate().filter(|&(k, _)| k != held) {
                test.push(WsdInstance {
                    word: spec.word.clone(),
                    context: context(corpus, i),
                    candidates: candidates.clone(),
                    gold: sense.id.clone(),
                });
            }
        }
    }
    rng.shuffle(&mut test);
    test.truncate(max_test);
    Ok((exemplars, test))
}

/// Predict "same sense" iff both contexts contain topical words of a common sense.
pub fn topical_oracle(lexicon: &Lexicon, pair: &WicPair) -> bool {
    let topic = lexicon.topic_of();
    let senses = |t: &TargetedSentence| -> HashSet<&str> {
        tokenize(&t.sentence)
            .iter()
            .filter_map(|w| topic.get(w.text.as_str()).copied())
            .collect()
    };
    !senses(&pair.first).is_disjoint(&senses(&pair.second))
}
