//! End-to-end stages: in-memory functions used by tests and examples, and
//! file-level commands used by the `wic` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{geometry_report, layer_sweep, single_layer_specs, GeometryReport};
use crate::checkpoint;
use crate::config::{RunConfig, SweepKnob, CONFIG_VERSION};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::eval::{
    format_exemplars_tsv, format_sim_tsv, format_wic_tsv, format_wsd_tsv, one_shot_wsd, parse_exemplars_tsv,
    parse_sim_tsv, parse_wic_tsv, parse_wsd_tsv, similarity_eval, wic_task_eval, EvalReport, Exemplar, SimPair,
    WicPair, WsdInstance,
};
use crate::eval::data::{read_text, write_text};
use crate::numeric::Rng;
use crate::repr::{EmbeddingRecord, Embedder, LayerSpec, ModelEmbedder};
use crate::synth::{gen_corpus, gen_sim_pairs, gen_wic_pairs, gen_wsd, GoldCorpus, SynthConfig};
use crate::tokenizer::{format_targeted, parse_targeted, read_corpus, write_corpus, TargetedSentence, Vocab};
use crate::trainer::{finetune, mlm_pretrain, TrainOutcome};

pub const CONFIG_FILE: &str = "config.json";
pub const RUN_FILE: &str = "run.json";
pub const PRETRAIN_CORPUS: &str = "pretrain.txt";
pub const TRAIN_CORPUS: &str = "train.txt";
pub const EVAL_CORPUS: &str = "eval.txt";
pub const EVAL_TARGETED: &str = "eval_targeted.tsv";
pub const GOLD: &str = "gold.json";
pub const WIC_DEV: &str = "wic_dev.tsv";
pub const WIC_TEST: &str = "wic_test.tsv";
pub const SIM_PAIRS: &str = "sim.tsv";
pub const WSD_EXEMPLARS: &str = "wsd_exemplars.tsv";
pub const WSD_TEST: &str = "wsd_test.tsv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const LOSSES: &str = "loss.csv";
pub const REPORT: &str = "report.json";
pub const GEOMETRY_JSON: &str = "geometry.json";
pub const GEOMETRY_CSV: &str = "geometry.csv";
pub const EMBEDDINGS: &str = "embeddings.jsonl";
pub const SWEEP_CSV: &str = "sweep.csv";

/// Every generated split of a synthetic run.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub pretrain: GoldCorpus,
    pub train: GoldCorpus,
    pub eval: GoldCorpus,
    pub wic_dev: Vec<WicPair>,
    pub wic_test: Vec<WicPair>,
    pub sim: Vec<SimPair>,
    pub exemplars: Vec<Exemplar>,
    pub wsd_test: Vec<WsdInstance>,
}

/// Three corpora over one lexicon (pretraining, fine-tuning, evaluation) and
/// the evaluation sets drawn from the last one.
pub fn synth_data(cfg: &RunConfig) -> Result<SynthData> {
    let root = Rng::new(cfg.seed);
    let pretrain = gen_corpus(&cfg.synth, root.derive(11).seed())?;
    let train = gen_corpus(&cfg.synth, root.derive(12).seed())?;
    let eval_cfg = SynthConfig {
        sentences: cfg.data.eval_sentences,
        min_occurrences: 0,
        ..cfg.synth.clone()
    };
    let eval = gen_corpus(&eval_cfg, root.derive(13).seed())?;
    let mut rng = root.derive(14);
    let wic_dev = gen_wic_pairs(&eval, cfg.data.wic_dev_pairs, &mut rng)?;
    let wic_test = gen_wic_pairs(&eval, cfg.data.wic_test_pairs, &mut rng)?;
    let sim = gen_sim_pairs(&eval, cfg.data.sim_pairs, &mut rng)?;
    let (exemplars, wsd_test) = gen_wsd(&eval, cfg.data.wsd_test, &mut rng)?;
    Ok(SynthData {
        pretrain,
        train,
        eval,
        wic_dev,
        wic_test,
        sim,
        exemplars,
        wsd_test,
    })
}

/// Build the vocabulary from `corpus`, initialise an encoder and run masked
/// language modelling on it.
pub fn pretrain<S: AsRef<str>>(cfg: &RunConfig, corpus: &[S]) -> Result<(TrainOutcome, Vocab)> {
    let vocab = Vocab::build(corpus, cfg.model.max_vocab, cfg.model.min_freq)?;
    let model = EncoderModel::init(cfg.model.encoder(vocab.len()), Rng::new(cfg.seed).derive(21).seed())?;
    let out = mlm_pretrain(&model, &vocab, corpus, &cfg.mlm)?;
    Ok((out, vocab))
}

pub fn eval_wic(cfg: &RunConfig, model: &EncoderModel, vocab: &Vocab, dev: &[WicPair], test: &[WicPair], per_layer: bool) -> Result<EvalReport> {
    let mut report = wic_task_eval(&ModelEmbedder::new(model, vocab, cfg.layer_spec), dev, test)?;
    report.layer_spec = Some(cfg.layer_spec);
    if per_layer {
        let specs = single_layer_specs(model.config.layers, false);
        report.per_layer = layer_sweep(&specs, |s| {
            let r = wic_task_eval(&ModelEmbedder::new(model, vocab, *s), dev, test)?;
            Ok(r.dev_accuracy.expect("set by wic_task_eval"))
        })?;
    }
    Ok(report)
}

pub fn eval_sim(cfg: &RunConfig, model: &EncoderModel, vocab: &Vocab, pairs: &[SimPair]) -> Result<EvalReport> {
    let mut report = similarity_eval(&ModelEmbedder::new(model, vocab, cfg.layer_spec), pairs)?;
    report.layer_spec = Some(cfg.layer_spec);
    Ok(report)
}

pub fn eval_wsd(cfg: &RunConfig, model: &EncoderModel, vocab: &Vocab, exemplars: &[Exemplar], test: &[WsdInstance]) -> Result<EvalReport> {
    let outcome = one_shot_wsd(&ModelEmbedder::new(model, vocab, cfg.layer_spec), exemplars, test)?;
    Ok(EvalReport {
        task: "wsd".into(),
        layer_spec: Some(cfg.layer_spec),
        accuracy: Some(outcome.accuracy),
        instances: test.len(),
        ..EvalReport::default()
    })
}

pub fn dump_embeddings(spec: LayerSpec, model: &EncoderModel, vocab: &Vocab, items: &[TargetedSentence]) -> Result<Vec<EmbeddingRecord>> {
    let vectors = ModelEmbedder::new(model, vocab, spec).embed_batch(items)?;
    Ok(items
        .iter()
        .zip(vectors)
        .enumerate()
        .map(|(i, (t, vector))| EmbeddingRecord {
            id: i.to_string(),
            word: t.sentence.chars().skip(t.span.0).take(t.span.1 - t.span.0).collect(),
            layer_spec: spec,
            vector,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knob: SweepKnob,
    pub value: f64,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub auc: f64,
    pub final_loss: f64,
}

fn whole(knob: SweepKnob, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("sweep value {v} for {} must be a non-negative integer", knob.name())))
    }
}

/// The run config with one knob set to `value`.
pub fn with_knob(cfg: &RunConfig, knob: SweepKnob, value: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match knob {
        SweepKnob::Dropout => c.finetune.dropout = value,
        SweepKnob::SpanK => c.finetune.span_k = whole(knob, value)?,
        SweepKnob::Layers => {
            let n = whole(knob, value)?;
            c.finetune.layer_spec = LayerSpec::top(n);
            c.layer_spec = LayerSpec::top(n);
        }
        SweepKnob::CorpusSize => c.finetune.max_sentences = whole(knob, value)?,
    }
    c.validate()?;
    Ok(c)
}

/// Fine-tune the pretrained model once per knob value and evaluate on WiC.
pub fn sweep<S: AsRef<str>>(
    cfg: &RunConfig,
    model: &EncoderModel,
    vocab: &Vocab,
    corpus: &[S],
    dev: &[WicPair],
    test: &[WicPair],
) -> Result<Vec<SweepRow>> {
    let knob = cfg.sweep.knob;
    cfg.sweep
        .values
        .iter()
        .map(|&value| {
            let c = with_knob(cfg, knob, value)?;
            let out = finetune(model, vocab, corpus, &c.finetune)?;
            let r = eval_wic(&c, &out.model, vocab, dev, test, false)?;
            log::info!("sweep {}={value}: dev {:.4}", knob.name(), r.dev_accuracy.unwrap_or(f64::NAN));
            Ok(SweepRow {
                knob,
                value,
                dev_accuracy: r.dev_accuracy.expect("set by wic_task_eval"),
                test_accuracy: r.accuracy.expect("set by wic_task_eval"),
                auc: r.auc.expect("set by wic_task_eval"),
                final_loss: out.losses.last().copied().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("knob,value,dev_accuracy,test_accuracy,auc,final_loss\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.knob.name(), r.value, r.dev_accuracy, r.test_accuracy, r.auc, r.final_loss);
    }
    s
}

/// Index of the best dev accuracy; ties go to the earlier row.
pub fn best_row(rows: &[SweepRow]) -> Option<usize> {
    (0..rows.len()).reduce(|b, i| if rows[i].dev_accuracy > rows[b].dev_accuracy { i } else { b })
}

// ---------------------------------------------------------------------------
// file-level commands

/// Record of a command invocation, written as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub format_version: u32,
    pub command: String,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<String>,
}

/// An output directory with the resolved config already written.
pub struct OutDir {
    dir: PathBuf,
    command: String,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<String>,
}

impl OutDir {
    pub fn create(dir: impl Into<PathBuf>, command: &str, cfg: &RunConfig) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_text(dir.join(CONFIG_FILE), &cfg.to_json()?)?;
        Ok(OutDir {
            dir,
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: vec![CONFIG_FILE.to_string()],
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.push((role.to_string(), path.to_path_buf()));
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(self.path(name), text)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn save_model(&mut self, model: &EncoderModel, vocab: &Vocab) -> Result<()> {
        checkpoint::save(self.path(CHECKPOINT), model, vocab)?;
        self.outputs.push(CHECKPOINT.to_string());
        Ok(())
    }

    /// Write `run.json` and return the output paths.
    pub fn finish(self) -> Result<Vec<PathBuf>> {
        let record = RunRecord {
            format_version: CONFIG_VERSION,
            command: self.command,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        write_text(self.dir.join(RUN_FILE), &(serde_json::to_string_pretty(&record)? + "\n"))?;
        let mut files: Vec<PathBuf> = record.outputs.iter().map(|o| self.dir.join(o)).collect();
        files.push(self.dir.join(RUN_FILE));
        Ok(files)
    }
}

fn load_model(out: &mut OutDir, path: &Path) -> Result<(EncoderModel, Vocab)> {
    out.input("checkpoint", path);
    checkpoint::load(path)
}

fn load_corpus(out: &mut OutDir, role: &str, path: &Path) -> Result<Vec<String>> {
    out.input(role, path);
    let c = read_corpus(path)?;
    if c.is_empty() {
        return Err(Error::Data(format!("{}: no sentences", path.display())));
    }
    Ok(c)
}

fn load_wic(out: &mut OutDir, role: &str, path: &Path) -> Result<Vec<WicPair>> {
    out.input(role, path);
    parse_wic_tsv(&read_text(path)?)
}

pub fn cmd_gen_synth(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = synth_data(cfg)?;
    let mut out = OutDir::create(out_dir, "gen-synth", cfg)?;
    for (name, corpus) in [(PRETRAIN_CORPUS, &data.pretrain), (TRAIN_CORPUS, &data.train), (EVAL_CORPUS, &data.eval)] {
        write_corpus(out.path(name), &corpus.texts())?;
        out.outputs.push(name.to_string());
    }
    out.write(EVAL_TARGETED, &format_targeted(&data.eval.targeted()))?;
    out.write(GOLD, &data.eval.to_json()?)?;
    out.write(WIC_DEV, &format_wic_tsv(&data.wic_dev))?;
    out.write(WIC_TEST, &format_wic_tsv(&data.wic_test))?;
    out.write(SIM_PAIRS, &format_sim_tsv(&data.sim))?;
    out.write(WSD_EXEMPLARS, &format_exemplars_tsv(&data.exemplars))?;
    out.write(WSD_TEST, &format_wsd_tsv(&data.wsd_test))?;
    out.finish()
}

pub fn cmd_pretrain(cfg: &RunConfig, corpus: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutDir::create(out_dir, "pretrain", cfg)?;
    let sentences = load_corpus(&mut out, "corpus", corpus)?;
    let (trained, vocab) = pretrain(cfg, &sentences)?;
    out.save_model(&trained.model, &vocab)?;
    out.write(LOSSES, &trained.loss_csv())?;
    out.finish()
}

pub fn cmd_finetune(cfg: &RunConfig, checkpoint: &Path, corpus: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutDir::create(out_dir, "finetune", cfg)?;
    let (model, vocab) = load_model(&mut out, checkpoint)?;
    let sentences = load_corpus(&mut out, "corpus", corpus)?;
    let trained = finetune(&model, &vocab, &sentences, &cfg.finetune)?;
    out.save_model(&trained.model, &vocab)?;
    out.write(LOSSES, &trained.loss_csv())?;
    out.finish()
}

pub fn cmd_eval_wic(cfg: &RunConfig, checkpoint: &Path, dev: &Path, test: &Path, per_layer: bool, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutDir::create(out_dir, "eval-wic", cfg)?;
    let (model, vocab) = load_model(&mut out, checkpoint)?;
    let dev = load_wic(&mut out, "dev", dev)?;
    let test = load_wic(&mut out, "test", test)?;
    let report = eval_wic(cfg, &model, &vocab, &dev, &test, per_layer)?;
    out.write(REPORT, &report.to_json()?)?;
    out.finish()
}

pub fn cmd_eval_sim(cfg: &RunConfig, checkpoint: &Path, pairs: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutDir::create(out_dir, "eval-sim", cfg)?;
    let (model, vocab) = load_model(&mut out, checkpoint)?;
    out.input("pairs", pairs);
    let pairs = parse_sim_tsv(&read_text(pairs)?)?;
    out.write(REPORT, &eval_sim(cfg, &model, &vocab, &pairs)?.to_json()?)?;
    out.finish()
}

pub fn cmd_eval_wsd(cfg: &RunConfig, checkpoint: &Path, exemplars: &Path, test: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutDir::create(out_dir, "eval-wsd", cfg)?;
    let (model, vocab) = load_model(&mut out, checkpoint)?;
    out.input("exemplars", exemplars);
    out.input("test", test);
    let exemplars = parse_exemplars_tsv(&read_text(exemplars)?)?;
    let test = parse_wsd_tsv(&read_text(test)?)?;
    out.write(REPORT, &eval_wsd(cfg, &model, &vocab, &exemplars, &test)?.to_json()?)?;
    out.finish()
}

pub fn cmd_analyze(cfg: &RunConfig, checkpoint: &Path, corpus: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutDir::create(out_dir, "analyze", cfg)?;
    let (model, vocab) = load_model(&mut out, checkpoint)?;
    let sentences = load_corpus(&mut out, "corpus", corpus)?;
    let report: GeometryReport = geometry_report(&model, &vocab, &sentences, &cfg.analysis)?;
    out.write(GEOMETRY_JSON, &report.to_json()?)?;
    out.write(GEOMETRY_CSV, &report.to_csv())?;
    out.finish()
}

pub fn cmd_dump_embeddings(cfg: &RunConfig, checkpoint: &Path, input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutDir::create(out_dir, "dump-embeddings", cfg)?;
    let (model, vocab) = load_model(&mut out, checkpoint)?;
    out.input("targets", input);
    let items = parse_targeted(&read_text(input)?)?;
    let records = dump_embeddings(cfg.layer_spec, &model, &vocab, &items)?;
    out.write(EMBEDDINGS, &crate::repr::format_embeddings(&records)?)?;
    out.finish()
}

pub fn cmd_sweep(cfg: &RunConfig, checkpoint: &Path, corpus: &Path, dev: &Path, test: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutDir::create(out_dir, "sweep", cfg)?;
    let (model, vocab) = load_model(&mut out, checkpoint)?;
    let sentences = load_corpus(&mut out, "corpus", corpus)?;
    let dev = load_wic(&mut out, "dev", dev)?;
    let test = load_wic(&mut out, "test", test)?;
    let rows = sweep(cfg, &model, &vocab, &sentences, &dev, &test)?;
    out.write(SWEEP_CSV, &sweep_csv(&rows))?;
    out.finish()
}
