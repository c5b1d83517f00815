//! Masked-language-model pretraining of a small encoder on a synthetic corpus.

use wic_contrast::config::RunConfig;
use wic_contrast::pipeline::{pretrain, synth_data};
use wic_contrast::trainer::mlm_accuracy;

fn main() -> wic_contrast::Result<()> {
    // the default run: 2000 sentences, 4 layers of width 64, 30 epochs (a couple of minutes)
    let cfg = RunConfig::default();
    let data = synth_data(&cfg)?;
    let corpus = data.pretrain.texts();
    let (out, vocab) = pretrain(&cfg, &corpus)?;
    let per_epoch = out.losses.len() / cfg.mlm.epochs;
    for (e, chunk) in out.losses.chunks(per_epoch.max(1)).enumerate().step_by(3) {
        println!("epoch {e}: mean loss {:.3}", chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    let held_out = data.eval.texts();
    println!("masked-token accuracy on held-out text: {:.3}", mlm_accuracy(&out.model, &vocab, &held_out, 0.15, 1)?);
    Ok(())
}
