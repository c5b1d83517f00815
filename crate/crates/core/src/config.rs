//! Run configuration shared by every command: strict JSON, dotted-path
//! overrides, and a resolved copy written next to the outputs.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::GeometryOptions;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::repr::LayerSpec;
use crate::synth::SynthConfig;
use crate::trainer::{MlmConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Architecture and vocabulary settings; the vocabulary size itself comes
/// from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_vocab: usize,
    pub min_freq: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let e = EncoderConfig::default();
        ModelConfig {
            layers: e.layers,
            heads: e.heads,
            dim: e.dim,
            ffn_dim: e.ffn_dim,
            dropout: e.dropout,
            max_vocab: 1000,
            min_freq: 1,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            vocab_size,
            max_positions: crate::tokenizer::MAX_SEQ_LEN,
        }
    }
}

/// Sizes of the generated evaluation sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub eval_sentences: usize,
    pub wic_dev_pairs: usize,
    pub wic_test_pairs: usize,
    pub sim_pairs: usize,
    pub wsd_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            eval_sentences: 2000,
            wic_dev_pairs: 1000,
            wic_test_pairs: 1000,
            sim_pairs: 500,
            wsd_test: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKnob {
    Dropout,
    SpanK,
    Layers,
    CorpusSize,
}

impl SweepKnob {
    pub fn name(self) -> &'static str {
        match self {
            SweepKnob::Dropout => "dropout",
            SweepKnob::SpanK => "span_k",
            SweepKnob::Layers => "layers",
            SweepKnob::CorpusSize => "corpus_size",
        }
    }
}

impl std::str::FromStr for SweepKnob {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.replace('-', "_")))
            .map_err(|_| Error::Config(format!("unknown sweep knob {s:?}; expected dropout, span_k, layers or corpus_size")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub knob: SweepKnob,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            knob: SweepKnob::Dropout,
            values: vec![0.0, 0.2, 0.4, 0.6, 0.8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    /// Drives every stage; stage-level seeds are overwritten from it.
    pub seed: u64,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub mlm: MlmConfig,
    pub finetune: TrainConfig,
    /// Feature layers used at evaluation time.
    pub layer_spec: LayerSpec,
    pub analysis: GeometryOptions,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: CONFIG_VERSION,
            seed: 0,
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            mlm: MlmConfig::toy(),
            finetune: TrainConfig::toy(),
            layer_spec: LayerSpec::default(),
            analysis: GeometryOptions::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Split `a.b.c=value`. The value is read as JSON when it parses, otherwise
/// as a plain string.
pub fn parse_override(arg: &str) -> Result<(String, Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override {arg:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Recursively overlay `patch` on `base`; non-object values replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("cannot set {key:?}: {:?} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

impl RunConfig {
    /// Strict parse of a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::resolve(Some(text), &[])
    }

    /// Defaults, overlaid with the file contents (if any), then overrides in
    /// order, then strict parsing and validation. Partial sections keep the
    /// run defaults for the keys they omit.
    pub fn resolve(file: Option<&str>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default())?;
        if let Some(t) = file {
            let patch: Value =
                serde_json::from_str(t).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
            if !patch.is_object() {
                return Err(Error::Config("config must be a JSON object".into()));
            }
            merge(&mut doc, patch);
        }
        for (k, v) in overrides {
            set_path(&mut doc, k, v.clone())?;
        }
        let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.format_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "format_version {} is not supported (expected {CONFIG_VERSION})",
                cfg.format_version
            )));
        }
        cfg.mlm.seed = cfg.seed;
        cfg.finetune.seed = cfg.seed;
        cfg.analysis.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.encoder(self.model.max_vocab).validate()?;
        self.mlm.validate()?;
        self.finetune.validate()?;
        if self.sweep.values.is_empty() {
            return Err(Error::Config("sweep.values must not be empty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_json(r#"{"finetune": {"temperature": 0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("temperature"), "{err}");
        assert_eq!(err.exit_code(), 1);
        let err = RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn overrides_beat_file_values() {
        let o = vec![parse_override("finetune.tau=0.5").unwrap(), parse_override("seed=7").unwrap()];
        let cfg = RunConfig::resolve(Some(r#"{"finetune": {"tau": 0.1, "epochs": 2}}"#), &o).unwrap();
        assert_eq!(cfg.finetune.tau, 0.5);
        assert_eq!(cfg.finetune.epochs, 2);
        // omitted keys keep the run defaults, not the section type's defaults
        assert_eq!(cfg.finetune.batch_size, RunConfig::default().finetune.batch_size);
        assert_eq!(cfg.finetune.seed, 7);
        assert_eq!(cfg.mlm.seed, 7);
    }

    #[test]
    fn resolved_config_reparses() {
        let o = vec![parse_override("sweep.knob=span_k").unwrap()];
        let cfg = RunConfig::resolve(None, &o).unwrap();
        assert_eq!(cfg.sweep.knob, SweepKnob::SpanK);
        assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn bad_overrides() {
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
        assert!(RunConfig::resolve(None, &[parse_override("seed.x=1").unwrap()]).is_err());
        assert!(RunConfig::resolve(None, &[parse_override("finetune.dropout=1.5").unwrap()]).is_err());
    }

    #[test]
    fn knob_names() {
        for k in [SweepKnob::Dropout, SweepKnob::SpanK, SweepKnob::Layers, SweepKnob::CorpusSize] {
            assert_eq!(k.name().parse::<SweepKnob>().unwrap(), k);
        }
        assert!("corpus-size".parse::<SweepKnob>().is_ok());
        assert!("tau".parse::<SweepKnob>().is_err());
    }
}
