//! Sweep the fine-tuning dropout rate on one pretrained model.

use wic_contrast::config::RunConfig;
use wic_contrast::pipeline::{best_row, pretrain, sweep, sweep_csv, synth_data};

fn main() -> wic_contrast::Result<()> {
    // five fine-tuning runs on the default setup; several minutes
    let cfg = RunConfig::from_json(r#"{"sweep": {"knob": "dropout", "values": [0.0, 0.2, 0.4, 0.6, 0.8]}}"#)?;
    let data = synth_data(&cfg)?;
    let (pre, vocab) = pretrain(&cfg, &data.pretrain.texts())?;
    let rows = sweep(&cfg, &pre.model, &vocab, &data.train.texts(), &data.wic_dev, &data.wic_test)?;
    print!("{}", sweep_csv(&rows));
    if let Some(i) = best_row(&rows) {
        println!("best dropout {}", rows[i].value);
    }
    Ok(())
}
