//! Tokenize a sentence, build a vocabulary and locate a target word's tokens.

use wic_contrast::tokenizer::{tokenize, Vocab};

fn main() -> wic_contrast::Result<()> {
    let corpus = ["She sat on the bank of the river.", "The bank approved the loan, finally."];
    for w in tokenize(corpus[1]) {
        println!("{:>10} [{}, {})", w.text, w.start, w.end);
    }

    let vocab = Vocab::build(&corpus, 100, 1)?;
    println!("vocab: {} entries, hash {}", vocab.len(), &vocab.hash()[..12]);

    // character span of "bank" in the second sentence
    let inst = vocab.encode_with_target(corpus[1], (4, 8))?;
    let toks: Vec<&str> = inst.ids.iter().map(|&i| vocab.token(i)).collect();
    println!("{toks:?}");
    println!("target tokens {:?} -> {:?}", inst.target, inst.target_text());

    // spans must line up with word boundaries
    match vocab.encode_with_target(corpus[1], (5, 8)) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
