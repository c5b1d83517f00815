//! Resolve a run config: defaults, then a JSON document, then dotted overrides.

use wic_contrast::config::{parse_override, RunConfig};

fn main() -> wic_contrast::Result<()> {
    let file = r#"{"seed": 4, "finetune": {"tau": 0.1}, "model": {"layers": 2}}"#;
    let overrides = vec![parse_override("finetune.dropout=0.2")?, parse_override("sweep.knob=span_k")?];
    let cfg = RunConfig::resolve(Some(file), &overrides)?;
    println!("tau {} dropout {} batch {} (kept)", cfg.finetune.tau, cfg.finetune.dropout, cfg.finetune.batch_size);
    println!("stage seeds follow the run seed: {} {}", cfg.mlm.seed, cfg.finetune.seed);

    match RunConfig::from_json(r#"{"finetune": {"temprature": 0.1}}"#) {
        Ok(_) => unreachable!(),
        Err(e) => println!("exit code {}: {e}", e.exit_code()),
    }
    print!("{}", cfg.to_json()?);
    Ok(())
}
