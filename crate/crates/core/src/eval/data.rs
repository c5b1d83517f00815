//! Evaluation data sets and their tab-separated file formats.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{parse_span, TargetedSentence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "T")]
    True,
    #[serde(rename = "F")]
    False,
    #[serde(rename = "?")]
    Unknown,
}

impl Label {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Label::True => Some(true),
            Label::False => Some(false),
            Label::Unknown => None,
        }
    }
}

impl From<bool> for Label {
    fn from(b: bool) -> Self {
        if b {
            Label::True
        } else {
            Label::False
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::True => "T",
            Label::False => "F",
            Label::Unknown => "?",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" => Ok(Label::True),
            "F" => Ok(Label::False),
            "?" => Ok(Label::Unknown),
            other => Err(Error::Data(format!("label must be T, F or ?, got {other:?}"))),
        }
    }
}

/// Two contexts of the same target word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WicPair {
    pub word: String,
    pub first: TargetedSentence,
    pub second: TargetedSentence,
    pub label: Label,
}

/// Two contexts with a graded similarity score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPair {
    pub word: String,
    pub first: TargetedSentence,
    pub second: TargetedSentence,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WsdInstance {
    pub word: String,
    pub context: TargetedSentence,
    pub candidates: Vec<String>,
    pub gold: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub sense_id: String,
    pub context: TargetedSentence,
}

fn fields(line: &str, n: usize, lineno: usize, what: &str) -> Result<Vec<String>> {
    let f: Vec<String> = line.split('\t').map(String::from).collect();
    if f.len() != n {
        return Err(Error::Data(format!("{what} line {lineno}: expected {n} tab-separated fields, got {}", f.len())));
    }
    Ok(f)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn ctx(sentence: &str, span: &str) -> Result<TargetedSentence> {
    Ok(TargetedSentence {
        sentence: sentence.to_string(),
        span: parse_span(span)?,
    })
}

fn at_line<T>(r: Result<T>, what: &str, lineno: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{what} line {lineno}: {m}")),
        other => other,
    })
}

/// `word  s1:e1  s2:e2  sentence1  sentence2  label`
pub fn parse_wic_tsv(text: &str) -> Result<Vec<WicPair>> {
    data_lines(text)
        .map(|(n, line)| {
            at_line(
                (|| {
                    let f = fields(line, 6, n, "WiC")?;
                    Ok(WicPair {
                        word: f[0].clone(),
                        first: ctx(&f[3], &f[1])?,
                        second: ctx(&f[4], &f[2])?,
                        label: f[5].parse()?,
                    })
                })(),
                "WiC",
                n,
            )
        })
        .collect()
}

pub fn format_wic_tsv(pairs: &[WicPair]) -> String {
    pairs
        .iter()
        .map(|p| {
            format!(
                "{}\t{}:{}\t{}:{}\t{}\t{}\t{}\n",
                p.word, p.first.span.0, p.first.span.1, p.second.span.0, p.second.span.1, p.first.sentence, p.second.sentence, p.label
            )
        })
        .collect()
}

/// Same layout as the WiC file with a numeric score in the last column.
pub fn parse_sim_tsv(text: &str) -> Result<Vec<SimPair>> {
    data_lines(text)
        .map(|(n, line)| {
            at_line(
                (|| {
                    let f = fields(line, 6, n, "similarity")?;
                    let score: f64 = f[5]
                        .trim()
                        .parse()
                        .map_err(|_| Error::Data(format!("bad score {:?}", f[5])))?;
                    if !score.is_finite() {
                        return Err(Error::Data(format!("non-finite score {score}")));
                    }
                    Ok(SimPair {
                        word: f[0].clone(),
                        first: ctx(&f[3], &f[1])?,
                        second: ctx(&f[4], &f[2])?,
                        score,
                    })
                })(),
                "similarity",
                n,
            )
        })
        .collect()
}

pub fn format_sim_tsv(pairs: &[SimPair]) -> String {
    pairs
        .iter()
        .map(|p| {
            format!(
                "{}\t{}:{}\t{}:{}\t{}\t{}\t{}\n",
                p.word, p.first.span.0, p.first.span.1, p.second.span.0, p.second.span.1, p.first.sentence, p.second.sentence, p.score
            )
        })
        .collect()
}

/// `word  start:end  sentence  cand1,cand2,..  gold`
pub fn parse_wsd_tsv(text: &str) -> Result<Vec<WsdInstance>> {
    data_lines(text)
        .map(|(n, line)| {
            at_line(
                (|| {
                    let f = fields(line, 5, n, "WSD")?;
                    let candidates: Vec<String> = f[3].split(',').map(|c| c.trim().to_string()).collect();
                    if candidates.iter().any(String::is_empty) {
                        return Err(Error::Data("empty candidate sense id".into()));
                    }
                    Ok(WsdInstance {
                        word: f[0].clone(),
                        context: ctx(&f[2], &f[1])?,
                        candidates,
                        gold: f[4].clone(),
                    })
                })(),
                "WSD",
                n,
            )
        })
        .collect()
}

pub fn format_wsd_tsv(items: &[WsdInstance]) -> String {
    items
        .iter()
        .map(|w| {
            format!(
                "{}\t{}:{}\t{}\t{}\t{}\n",
                w.word,
                w.context.span.0,
                w.context.span.1,
                w.context.sentence,
                w.candidates.join(","),
                w.gold
            )
        })
        .collect()
}

/// `sense_id  start:end  context`
pub fn parse_exemplars_tsv(text: &str) -> Result<Vec<Exemplar>> {
    data_lines(text)
        .map(|(n, line)| {
            at_line(
                (|| {
                    let f = fields(line, 3, n, "exemplar")?;
                    Ok(Exemplar {
                        sense_id: f[0].clone(),
                        context: ctx(&f[2], &f[1])?,
                    })
                })(),
                "exemplar",
                n,
            )
        })
        .collect()
}

pub fn format_exemplars_tsv(items: &[Exemplar]) -> String {
    items
        .iter()
        .map(|e| format!("{}\t{}:{}\t{}\n", e.sense_id, e.context.span.0, e.context.span.1, e.context.sentence))
        .collect()
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
