//! Pretrain, then contrastive fine-tuning on raw sentences; WiC, similarity
//! and one-shot WSD before and after.

use wic_contrast::config::RunConfig;
use wic_contrast::pipeline::{eval_sim, eval_wic, eval_wsd, pretrain, synth_data};
use wic_contrast::trainer::finetune;

fn main() -> wic_contrast::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    // default run settings; takes a few minutes
    let cfg = RunConfig::resolve(None, &[("seed".into(), seed.into())])?;
    let data = synth_data(&cfg)?;
    let (pre, vocab) = pretrain(&cfg, &data.pretrain.texts())?;
    let tuned = finetune(&pre.model, &vocab, &data.train.texts(), &cfg.finetune)?;
    println!("fine-tuning loss {:.3} -> {:.3}", tuned.losses[0], tuned.losses.last().unwrap());

    for (name, model) in [("mlm only", &pre.model), ("contrastive", &tuned.model)] {
        let wic = eval_wic(&cfg, model, &vocab, &data.wic_dev, &data.wic_test, false)?;
        let sim = eval_sim(&cfg, model, &vocab, &data.sim)?;
        let wsd = eval_wsd(&cfg, model, &vocab, &data.exemplars, &data.wsd_test)?;
        println!(
            "{name:>12}: wic dev {:.3} test {:.3} auc {:.3} | sim rho {:.3} | wsd {:.3}",
            wic.dev_accuracy.unwrap(),
            wic.accuracy.unwrap(),
            wic.auc.unwrap(),
            sim.spearman.unwrap(),
            wsd.accuracy.unwrap()
        );
    }
    Ok(())
}
