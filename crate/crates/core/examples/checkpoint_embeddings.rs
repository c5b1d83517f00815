//! Save and reload a checkpoint, then dump WiC embeddings as JSON lines.

use wic_contrast::checkpoint;
use wic_contrast::encoder::EncoderModel;
use wic_contrast::pipeline::dump_embeddings;
use wic_contrast::repr::{parse_embeddings, LayerSpec};
use wic_contrast::tokenizer::{TargetedSentence, Vocab};

fn main() -> wic_contrast::Result<()> {
    let corpus = ["the bank raised its rates", "they fished from the bank", "rates fell at the bank"];
    let vocab = Vocab::build(&corpus, 100, 1)?;
    let cfg = wic_contrast::config::ModelConfig {
        layers: 2,
        heads: 2,
        dim: 16,
        ffn_dim: 32,
        ..Default::default()
    };
    let model = EncoderModel::init(cfg.encoder(vocab.len()), 9)?;

    let dir = std::env::temp_dir().join("wic_checkpoint_example");
    std::fs::create_dir_all(&dir).map_err(|e| wic_contrast::Error::Data(e.to_string()))?;
    let path = dir.join("model.ckpt");
    checkpoint::save(&path, &model, &vocab)?;
    let (back, vocab2) = checkpoint::load(&path)?;
    let same = back.params().iter().zip(model.params()).all(|(a, b)| a.data() == b.data());
    println!("{} parameters reloaded identically: {same}", back.num_params());

    let items: Vec<TargetedSentence> = corpus
        .iter()
        .map(|s| {
            let start = s.find("bank").unwrap();
            TargetedSentence {
                sentence: s.to_string(),
                span: (start, start + 4),
            }
        })
        .collect();
    let records = dump_embeddings(LayerSpec::top(2), &back, &vocab2, &items)?;
    let text = wic_contrast::repr::format_embeddings(&records)?;
    print!("{}", text.lines().next().map(|l| &l[..l.len().min(120)]).unwrap_or(""));
    println!(" ...");
    assert_eq!(parse_embeddings(&text)?, records);
    Ok(())
}
