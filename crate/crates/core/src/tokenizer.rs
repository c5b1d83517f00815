//! Word-level tokenization, vocabulary construction and target-span alignment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const SPECIALS: [&str; 5] = [PAD, UNK, MASK, CLS, SEP];

/// Maximum encoded length including `[CLS]` and `[SEP]`.
pub const MAX_SEQ_LEN: usize = 50;

/// A word-level token with its character offsets `[start, end)` in the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Word {
    pub fn is_punctuation(&self) -> bool {
        !self.text.chars().any(char::is_alphanumeric)
    }
}

/// Lowercases and splits on whitespace; each punctuation character is its own
/// token. Offsets count Unicode scalar values, not bytes.
pub fn tokenize(sentence: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut pos = 0;
    for ch in sentence.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            current.get_or_insert_with(|| (pos, String::new())).1.extend(ch.to_lowercase());
        } else {
            if let Some((start, text)) = current.take() {
                words.push(Word { text, start, end: pos });
            }
            if !ch.is_whitespace() {
                words.push(Word {
                    text: ch.to_lowercase().collect(),
                    start: pos,
                    end: pos + 1,
                });
            }
        }
        pos += 1;
    }
    if let Some((start, text)) = current {
        words.push(Word { text, start, end: pos });
    }
    words
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// A sentence encoded for the model with a marked target span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedInstance {
    /// `[CLS] w_1 .. w_n [SEP]`
    pub ids: Vec<u32>,
    /// Inclusive token positions of the target within `ids`.
    pub target: (usize, usize),
    pub text: String,
    /// Character span `[start, end)` of the target in `text`.
    pub char_span: (usize, usize),
}

impl TokenizedInstance {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Case-folded surface form of the target.
    pub fn target_text(&self) -> String {
        self.text
            .chars()
            .skip(self.char_span.0)
            .take(self.char_span.1 - self.char_span.0)
            .flat_map(char::to_lowercase)
            .collect()
    }
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;
    pub const MASK_ID: u32 = 2;
    pub const CLS_ID: u32 = 3;
    pub const SEP_ID: u32 = 4;
    pub const NUM_SPECIAL: usize = SPECIALS.len();

    /// Keep the most frequent tokens, up to `max_size` entries including the
    /// special tokens. Frequency ties go to the lexicographically smaller token.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize, min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        if max_size < Self::NUM_SPECIAL {
            return Err(Error::Config(format!(
                "max_size {max_size} is smaller than the {} special tokens",
                Self::NUM_SPECIAL
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for w in tokenize(line.as_ref()) {
                *counts.entry(w.text).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - Self::NUM_SPECIAL);
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuild from an id-ordered token list (e.g. a checkpoint header).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < Self::NUM_SPECIAL || tokens[..Self::NUM_SPECIAL] != SPECIALS {
            return Err(Error::Data("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < Self::NUM_SPECIAL
    }

    /// True for in-vocabulary tokens containing at least one alphanumeric char.
    pub fn is_word(&self, id: u32) -> bool {
        !Self::is_special(id) && self.tokens[id as usize].chars().any(char::is_alphanumeric)
    }

    /// SHA-256 over the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Encode `sentence` marking the target at character span `[start, end)`.
    pub fn encode_with_target(&self, sentence: &str, span: (usize, usize)) -> Result<TokenizedInstance> {
        let words = tokenize(sentence);
        if words.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        let first = words.iter().position(|w| w.start == span.0);
        let last = words.iter().position(|w| w.end == span.1);
        match (first, last) {
            (Some(a), Some(b)) if a <= b => self.instance_from_words(sentence, &words, (a, b)),
            _ => Err(Error::Alignment {
                start: span.0,
                end: span.1,
                sentence: sentence.to_string(),
            }),
        }
    }

    /// Build an instance from pre-tokenized words with the target covering
    /// word indices `a..=b`.
    pub fn instance_from_words(
        &self,
        sentence: &str,
        words: &[Word],
        (a, b): (usize, usize),
    ) -> Result<TokenizedInstance> {
        let capacity = MAX_SEQ_LEN - 2;
        if b >= capacity {
            return Err(Error::Data(format!(
                "target ends at word {b}, beyond the {capacity}-word limit: {sentence:?}"
            )));
        }
        let mut ids = Vec::with_capacity(words.len().min(capacity) + 2);
        ids.push(Self::CLS_ID);
        ids.extend(words.iter().take(capacity).map(|w| self.id(&w.text)));
        ids.push(Self::SEP_ID);
        Ok(TokenizedInstance {
            ids,
            target: (a + 1, b + 1),
            text: sentence.to_string(),
            char_span: (words[a].start, words[b].end),
        })
    }

    /// Encode with every word as a potential target; the target is set to the
    /// first word.
    pub fn encode(&self, sentence: &str) -> Result<TokenizedInstance> {
        let words = tokenize(sentence);
        if words.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        self.instance_from_words(sentence, &words, (0, 0))
    }
}

/// Read a one-sentence-per-line corpus, skipping blank lines.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn write_corpus<S: AsRef<str>>(path: impl AsRef<Path>, sentences: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in sentences {
        out.push_str(s.as_ref());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parse `start:end`.
pub fn parse_span(field: &str) -> Result<(usize, usize)> {
    let (s, e) = field
        .split_once(':')
        .ok_or_else(|| Error::Data(format!("expected start:end, got {field:?}")))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("bad offset {x:?} in {field:?}")))
    };
    let (s, e) = (parse(s)?, parse(e)?);
    if s >= e {
        return Err(Error::Data(format!("empty span {field:?}")));
    }
    Ok((s, e))
}

/// A sentence with a character-offset target, one line of a targeted corpus.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TargetedSentence {
    pub sentence: String,
    pub span: (usize, usize),
}

/// Parse `sentence<TAB>start:end` lines.
pub fn parse_targeted(text: &str) -> Result<Vec<TargetedSentence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (sentence, span) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Data(format!("line {}: expected sentence<TAB>start:end", n + 1)))?;
            Ok(TargetedSentence {
                sentence: sentence.to_string(),
                span: parse_span(span)?,
            })
        })
        .collect()
}

pub fn format_targeted(items: &[TargetedSentence]) -> String {
    items
        .iter()
        .map(|t| format!("{}\t{}:{}\n", t.sentence, t.span.0, t.span.1))
        .collect()
}
