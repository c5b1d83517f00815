//! One-shot WSD by nearest exemplar, here with a bag-of-cue-words embedder
//! instead of an encoder.

use std::collections::HashMap;

use wic_contrast::eval::one_shot_wsd;
use wic_contrast::numeric::Rng;
use wic_contrast::repr::FnEmbedder;
use wic_contrast::synth::{gen_corpus, gen_wsd, SynthConfig};
use wic_contrast::tokenizer::{tokenize, TargetedSentence};

fn main() -> wic_contrast::Result<()> {
    let corpus = gen_corpus(&SynthConfig::default(), 5)?;
    let (exemplars, test) = gen_wsd(&corpus, 300, &mut Rng::new(6))?;
    println!("{} exemplars, {} test contexts", exemplars.len(), test.len());

    // one dimension per topical word
    let topics = corpus.lexicon.topic_of();
    let mut dims: Vec<&str> = topics.keys().copied().collect();
    dims.sort_unstable();
    let index: HashMap<&str, usize> = dims.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let embed = FnEmbedder(|t: &TargetedSentence| {
        let mut v = vec![0.0f32; dims.len() + 1];
        v[dims.len()] = 1e-3;
        for w in tokenize(&t.sentence) {
            if let Some(&i) = index.get(w.text.as_str()) {
                v[i] += 1.0;
            }
        }
        Ok(v)
    });
    let out = one_shot_wsd(&embed, &exemplars, &test)?;
    println!("accuracy {:.3} (chance about 0.5)", out.accuracy);
    for (inst, pred) in test.iter().zip(&out.predictions).take(3) {
        println!("  {:?} -> {pred} (gold {})", inst.context.sentence, inst.gold);
    }
    Ok(())
}
