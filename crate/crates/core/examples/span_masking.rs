//! Span masking around a target: up to K tokens per side, target untouched.

use wic_contrast::numeric::Rng;
use wic_contrast::tokenizer::Vocab;
use wic_contrast::trainer::apply_span_mask;

fn main() -> wic_contrast::Result<()> {
    let s = "we walked along the bank of the slow brown river at dusk";
    let vocab = Vocab::build(&[s], 100, 1)?;
    let inst = vocab.encode_with_target(s, (20, 24))?;
    let show = |ids: &[u32]| ids.iter().map(|&i| vocab.token(i)).collect::<Vec<_>>().join(" ");
    println!("original   {}", show(&inst.ids));

    let mut rng = Rng::new(7);
    for k in 0..=3 {
        for _ in 0..2 {
            let m = apply_span_mask(&inst, k, &mut rng);
            println!("K={k}        {}", show(&m.ids));
        }
    }
    Ok(())
}
