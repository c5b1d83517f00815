//! Per-layer isotropy, random-word and intra-sentence similarity of a small
//! encoder, before and after contrastive fine-tuning.

use wic_contrast::analysis::geometry_report;
use wic_contrast::config::RunConfig;
use wic_contrast::pipeline::{pretrain, synth_data};
use wic_contrast::trainer::finetune;

fn main() -> wic_contrast::Result<()> {
    let cfg = RunConfig::from_json(r#"{"data": {"eval_sentences": 1000}}"#)?;
    let data = synth_data(&cfg)?;
    let (pre, vocab) = pretrain(&cfg, &data.pretrain.texts())?;
    let tuned = finetune(&pre.model, &vocab, &data.train.texts(), &cfg.finetune)?;
    let eval = data.eval.texts();
    let before = geometry_report(&pre.model, &vocab, &eval, &cfg.analysis)?;
    let after = geometry_report(&tuned.model, &vocab, &eval, &cfg.analysis)?;
    println!("{:>9} {:>15} {:>15} {:>15}", "layer", "IS", "random-word", "intra (adj)");
    for (b, a) in before.layers.iter().zip(&after.layers) {
        println!(
            "{:>9} {:>7.3}->{:<7.3} {:>7.3}->{:<7.3} {:>7.3}->{:<7.3}",
            b.layer,
            b.isotropy.mean,
            a.isotropy.mean,
            b.random_word.mean,
            a.random_word.mean,
            b.intra_sentence.adjusted,
            a.intra_sentence.adjusted
        );
    }
    Ok(())
}
