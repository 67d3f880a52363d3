//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use bioext::corpus::whitespace_tokens;
use bioext::tagger::{LabeledSentence, TaggerConfig};
use bioext::tags::{encode_iobes, SpanSet, TokenSpan};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MICROBES: [&str; 6] = [
    "Vibrio salmonicida",
    "Escherichia coli",
    "Bacillus subtilis",
    "Listeria monocytogenes",
    "Salmonella enterica",
    "Streptomyces",
];
pub const HABITATS: [&str; 6] = ["fish farm", "soil", "hospital", "cheese", "river water", "human gut"];
pub const PHENOTYPES: [&str; 3] = ["pathogen", "thermophilic", "halophilic"];

/// One sentence as tokens plus inclusive token spans.
pub struct Synthetic {
    pub tokens: Vec<String>,
    pub spans: Vec<(usize, usize, &'static str)>,
    /// Relation type and indices into `spans`.
    pub relations: Vec<(&'static str, usize, usize)>,
}

impl Synthetic {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn labeled(&self) -> LabeledSentence {
        let tokens = whitespace_tokens(&self.text());
        let set: SpanSet = self.spans.iter().map(|&(s, e, t)| TokenSpan::new(s, e, t)).collect();
        let tags = encode_iobes(&set, tokens.len()).unwrap();
        LabeledSentence { tokens, tags }
    }
}

fn push(out: &mut Synthetic, phrase: &str, ty: Option<&'static str>) {
    let start = out.tokens.len();
    out.tokens.extend(phrase.split_whitespace().map(str::to_string));
    if let Some(t) = ty {
        out.spans.push((start, out.tokens.len() - 1, t));
    }
}

pub fn sentence(rng: &mut ChaCha8Rng) -> Synthetic {
    let m = *MICROBES.choose(rng).unwrap();
    let h = *HABITATS.choose(rng).unwrap();
    let p = *PHENOTYPES.choose(rng).unwrap();
    let mut s = Synthetic {
        tokens: Vec::new(),
        spans: Vec::new(),
        relations: Vec::new(),
    };
    match rng.gen_range(0..4) {
        0 => {
            push(&mut s, m, Some("Microorganism"));
            push(&mut s, "was isolated from", None);
            push(&mut s, h, Some("Habitat"));
            s.relations.push(("Lives_In", 0, 1));
        }
        1 => {
            push(&mut s, m, Some("Microorganism"));
            push(&mut s, "is a", None);
            push(&mut s, p, Some("Phenotype"));
            push(&mut s, "bacterium found in", None);
            push(&mut s, h, Some("Habitat"));
            s.relations.push(("Exhibits", 0, 1));
        }
        2 => {
            push(&mut s, "We detected", None);
            push(&mut s, m, Some("Microorganism"));
            push(&mut s, "in", None);
            push(&mut s, h, Some("Habitat"));
            push(&mut s, "samples", None);
        }
        _ => {
            push(&mut s, "Strains of", None);
            push(&mut s, m, Some("Microorganism"));
            push(&mut s, "colonize", None);
            push(&mut s, h, Some("Habitat"));
            s.relations.push(("Lives_In", 0, 1));
        }
    }
    push(&mut s, ".", None);
    s
}

pub fn sentences(n: usize, seed: u64) -> Vec<Synthetic> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sentence(&mut rng)).collect()
}

/// Writes `docs` documents of `per_doc` sentences each as `.txt` + `.ann`,
/// relations included.
pub fn write_corpus(dir: &Path, docs: usize, per_doc: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let all = sentences(docs * per_doc, seed);
    for (d, chunk) in all.chunks(per_doc).enumerate() {
        let mut text = String::new();
        let mut ann = String::new();
        let mut k = 0;
        let mut r = 0;
        for s in chunk {
            let first = k + 1;
            let mut offsets = Vec::new();
            let base = text.chars().count();
            let mut at = base;
            for t in &s.tokens {
                offsets.push((at, at + t.chars().count()));
                at += t.chars().count() + 1;
            }
            text.push_str(&s.text());
            text.push('\n');
            for &(a, b, ty) in &s.spans {
                k += 1;
                let (cs, ce) = (offsets[a].0, offsets[b].1);
                let surface: String = text.chars().skip(cs).take(ce - cs).collect();
                ann.push_str(&format!("T{k}\t{ty} {cs} {ce}\t{surface}\n"));
            }
            for &(rel, a, b) in &s.relations {
                r += 1;
                let (ra, rb) = if rel == "Lives_In" { ("Microorganism", "Location") } else { ("Arg1", "Arg2") };
                ann.push_str(&format!("R{r}\t{rel} {ra}:T{} {rb}:T{}\n", first + a, first + b));
            }
        }
        fs::write(dir.join(format!("doc{d:02}.txt")), text).unwrap();
        fs::write(dir.join(format!("doc{d:02}.ann")), ann).unwrap();
    }
}

pub fn tiny_config() -> TaggerConfig {
    TaggerConfig {
        char_dim: 3,
        char_hidden: 2,
        word_dim: 4,
        word_hidden: 3,
        pos_dim: 2,
        ortho_dim: 2,
        cap_dim: 2,
        affix_dim: 2,
        length_dim: 2,
        sdp_rel_dim: 2,
        lm_vocab_size: 6,
        ..TaggerConfig::default()
    }
}
