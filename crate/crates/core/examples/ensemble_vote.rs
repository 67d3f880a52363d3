//! Token-level majority vote over three taggers followed by boundary repair.

use bioext::tags::{decode_spans, majority_vote, repair_boundaries, Scheme, TagSequence};

fn seq(s: &str) -> TagSequence {
    s.split_whitespace().map(str::to_string).collect()
}

fn main() -> bioext::Result<()> {
    let tokens = "Presence of fish pathogen Vibrio salmonicida in fish farm .";
    // the first model is the confident one: it wins ties
    let models = [
        seq("O O I-H I-H B-M I-M B-H B-H I-H O"),
        seq("O O B-H I-P B-M O O O O O"),
        seq("O B-H I-H I-P B-M I-M O B-H I-M O"),
    ];
    let voted = majority_vote(&models, 0)?;
    let fixed = repair_boundaries(&voted, Scheme::Bio);
    for ((tok, v), f) in tokens.split(' ').zip(&voted).zip(&fixed) {
        println!("{tok:>12} {v:>5} {f:>5}");
    }
    for span in decode_spans(&fixed, Scheme::Bio) {
        println!("{span}");
    }
    Ok(())
}
