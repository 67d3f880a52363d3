//! Train a small tagger on a handful of sentences, save it and reload it.

use bioext::corpus::whitespace_tokens;
use bioext::tagger::{load_model, save_model, train, LabeledSentence, SequenceTagger, TaggerConfig, TaggerModel};

fn sentence(text: &str, tags: &str) -> LabeledSentence {
    LabeledSentence {
        tokens: whitespace_tokens(text),
        tags: tags.split_whitespace().map(str::to_string).collect(),
    }
}

fn main() -> bioext::Result<()> {
    let data = vec![
        sentence("Vibrio salmonicida infects salmon .", "B-Microorganism E-Microorganism O S-Habitat O"),
        sentence("Listeria grows in cheese .", "S-Microorganism O O S-Habitat O"),
        sentence("Escherichia coli lives in the human gut .", "B-Microorganism E-Microorganism O O O B-Habitat E-Habitat O"),
        sentence("Bacillus subtilis was found in soil .", "B-Microorganism E-Microorganism O O O S-Habitat O"),
    ];
    let config = TaggerConfig {
        char_dim: 8,
        char_hidden: 8,
        word_dim: 16,
        word_hidden: 16,
        lm_vocab_size: 20,
        learning_rate: 0.05,
        dropout: 0.0,
        epochs: 40,
        patience: 5,
        ..TaggerConfig::default()
    };
    let model = TaggerModel::new(config, &data, std::iter::empty(), None)?;
    let (model, report) = train(model, &data, &[])?;
    println!("best epoch {} macro-F1 {:.3}", report.best_epoch, report.best_dev_macro_f1);

    let path = std::env::temp_dir().join("bioext-example-tagger.bin");
    save_model(&model, &path)?;
    let reloaded = load_model(&path)?;
    let tokens = whitespace_tokens("Listeria lives in soil .");
    println!("{:?}", reloaded.tag(&tokens));
    std::fs::remove_file(&path).ok();
    Ok(())
}
