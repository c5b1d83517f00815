//! Seeded synthetic corpus with ambiguous words and topical sense cues.

use wic_contrast::numeric::Rng;
use wic_contrast::synth::{gen_corpus, gen_wic_pairs, topical_oracle, SynthConfig};

fn main() -> wic_contrast::Result<()> {
    let cfg = SynthConfig::default();
    let corpus = gen_corpus(&cfg, 1)?;
    println!("{} sentences, {} sense ids", corpus.sentences.len(), corpus.lexicon.sense_ids().len());
    for s in corpus.sentences.iter().take(4) {
        println!("  {}", s.text);
        for o in &s.occurrences {
            println!("    {o:?}");
        }
    }

    let pairs = gen_wic_pairs(&corpus, 400, &mut Rng::new(2))?;
    let agree = pairs
        .iter()
        .filter(|p| topical_oracle(&corpus.lexicon, p) == (p.label == wic_contrast::eval::Label::True))
        .count();
    println!("topical-cue oracle agrees with gold on {agree}/{} pairs", pairs.len());

    // same seed, same corpus
    assert_eq!(gen_corpus(&cfg, 1)?.texts(), corpus.texts());
    Ok(())
}
