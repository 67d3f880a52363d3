//! Two-level tagging of nested entities: outer spans first, then inner spans
//! inside each of them.

use bioext::corpus::{parse_brat, whitespace_tokens};
use bioext::nested::{level1_instances, level2_instances, predict_nested, train_level2};
use bioext::tagger::{train, TaggerConfig, TaggerModel};

const TEXT: &str = "Samples from Atlantic salmon farms were positive .\nWater of trout ponds was tested .\n";
const ANN: &str = "\
T1\tHabitat 13 34\tAtlantic salmon farms
T2\tHabitat 13 28\tAtlantic salmon
T3\tHabitat 60 71\ttrout ponds
T4\tHabitat 60 65\ttrout
";

fn main() -> bioext::Result<()> {
    let mut doc = parse_brat("d1", TEXT, ANN)?;
    let mut offset = 0;
    for line in TEXT.lines() {
        let mut toks = whitespace_tokens(line);
        for t in &mut toks {
            t.char_start += offset;
            t.char_end += offset;
        }
        doc.sentences.push(toks);
        offset += line.chars().count() + 1;
    }
    let docs = vec![doc];
    for s in level1_instances(&docs)? {
        println!("level 1: {:?}", s.tags);
    }
    for s in level2_instances(&docs)? {
        println!("level 2: {:?}", s.tags);
    }

    let config = TaggerConfig {
        char_dim: 4,
        char_hidden: 4,
        word_dim: 8,
        word_hidden: 8,
        learning_rate: 0.05,
        dropout: 0.0,
        epochs: 60,
        patience: 10,
        ..TaggerConfig::default()
    };
    let outer_set = level1_instances(&docs)?;
    let outer = TaggerModel::new(config.clone(), &outer_set, std::iter::empty(), None)?;
    let (outer, _) = train(outer, &outer_set, &[])?;
    let (inner, _) = train_level2(&docs, &[], config, std::iter::empty())?;

    let tokens = &docs[0].sentences[0];
    for span in predict_nested(&outer, &inner, tokens).spans() {
        let words: Vec<&str> = tokens[span.start..=span.end].iter().map(|t| t.surface.as_str()).collect();
        println!("{} {:?}", span.entity_type, words.join(" "));
    }
    Ok(())
}
