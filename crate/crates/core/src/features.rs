//! Word-level features for the tagger and the frozen lookup tables that map
//! them to embedding rows.

use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Token;
use crate::error::{Error, Result};

/// Longest word length with its own length embedding; longer words share it.
pub const MAX_LENGTH_BUCKET: usize = 20;

/// Index reserved for values never seen while building a table.
pub const UNK: usize = 0;

/// Character shape: upper → `C`, lower → `c`, digit → `n`, other → `p`.
pub fn ortho_shape(word: &str) -> Result<String> {
    if word.is_empty() {
        return Err(Error::Argument("ortho_shape of an empty word".into()));
    }
    Ok(word
        .chars()
        .map(|c| {
            if c.is_uppercase() {
                'C'
            } else if c.is_lowercase() {
                'c'
            } else if c.is_numeric() {
                'n'
            } else {
                'p'
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CapClass {
    AllLower,
    AllCaps,
    InitCap,
    Mixed,
    Other,
}

impl CapClass {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn cap_class(word: &str) -> Result<CapClass> {
    if word.is_empty() {
        return Err(Error::Argument("cap_class of an empty word".into()));
    }
    let letters: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).collect();
    let Some((first, rest)) = letters.split_first() else {
        return Ok(CapClass::Other);
    };
    Ok(if letters.iter().all(|c| c.is_uppercase()) {
        CapClass::AllCaps
    } else if letters.iter().all(|c| !c.is_uppercase()) {
        CapClass::AllLower
    } else if first.is_uppercase() && rest.iter().all(|c| !c.is_uppercase()) {
        CapClass::InitCap
    } else {
        CapClass::Mixed
    })
}

/// String → index table with [`UNK`] at 0. Frozen once built.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocab { items, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.items
    }
}

impl Vocab {
    /// Table over `values` in first-seen order, `<unk>` first.
    pub fn build<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::from(vec!["<unk>".to_string()]);
        for s in values {
            let s = s.as_ref();
            if !v.index.contains_key(s) {
                v.index.insert(s.to_string(), v.items.len());
                v.items.push(s.to_string());
            }
        }
        v
    }

    pub fn get(&self, s: &str) -> usize {
        self.index.get(s).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, s: &str) -> bool {
        self.index.contains_key(s)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// User-supplied patterns behind the two alpha flags.
#[derive(Debug, Clone)]
pub struct AlphaPatterns {
    sources: Vec<String>,
    compiled: Vec<Regex>,
}

impl AlphaPatterns {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let compiled = patterns
            .iter()
            .map(|p| Regex::new(p.as_ref()).map_err(|e| Error::Config(format!("alpha pattern: {e}"))))
            .collect::<Result<_>>()?;
        Ok(AlphaPatterns {
            sources: patterns.iter().map(|p| p.as_ref().to_string()).collect(),
            compiled,
        })
    }

    /// Words containing a digit or a hyphen. These are a guess; tune them
    /// per corpus through the config.
    pub fn default_patterns() -> Vec<String> {
        vec![r"\d".to_string(), "-".to_string()]
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn matches(&self, word: &str) -> bool {
        self.compiled.iter().any(|r| r.is_match(word))
    }
}

impl PartialEq for AlphaPatterns {
    fn eq(&self, other: &Self) -> bool {
        self.sources == other.sources
    }
}

impl Default for AlphaPatterns {
    fn default() -> Self {
        AlphaPatterns::new(&Self::default_patterns()).expect("default patterns compile")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFeatures {
    pub word_id: usize,
    pub char_ids: Vec<usize>,
    pub cap_class: CapClass,
    pub pos_id: usize,
    pub ortho_id: usize,
    /// 3-character prefix and suffix.
    pub trigram_ids: [usize; 2],
    /// 5-character prefix and suffix.
    pub fivegram_ids: [usize; 2],
    /// 1..=20.
    pub length_bucket: usize,
    pub sdp_rel_id: usize,
    /// (pattern in this word, pattern in the next word)
    pub alpha_flags: [u8; 2],
}

/// Lookup tables built from training sentences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureTables {
    pub words: Vocab,
    pub chars: Vocab,
    pub pos: Vocab,
    pub ortho: Vocab,
    pub trigrams: Vocab,
    pub fivegrams: Vocab,
    pub sdp_rel: Vocab,
}

fn affixes(word: &str, n: usize) -> [String; 2] {
    let chars: Vec<char> = word.chars().collect();
    let m = n.min(chars.len());
    [
        format!("p:{}", chars[..m].iter().collect::<String>()),
        format!("s:{}", chars[chars.len() - m..].iter().collect::<String>()),
    ]
}

/// Key under which a word is stored in the word table.
pub fn word_key(surface: &str) -> String {
    surface.to_lowercase()
}

/// Relation label used for tokens without a dependency relation.
pub const NO_REL: &str = "<none>";

impl FeatureTables {
    /// Build all tables from `sentences`; `extra_words` (e.g. pretrained
    /// embedding vocabulary restricted to the corpus) also enter the word
    /// table.
    pub fn build<'a, I, W>(sentences: I, extra_words: W) -> Self
    where
        I: IntoIterator<Item = &'a [Token]> + Clone,
        W: IntoIterator<Item = String>,
    {
        let toks = || sentences.clone().into_iter().flatten();
        let mut words: Vec<String> = toks().map(|t| word_key(&t.surface)).collect();
        words.extend(extra_words);
        FeatureTables {
            words: Vocab::build(words),
            chars: Vocab::build(toks().flat_map(|t| t.surface.chars().map(String::from).collect::<Vec<_>>())),
            pos: Vocab::build(toks().map(|t| t.pos.clone())),
            ortho: Vocab::build(toks().filter_map(|t| ortho_shape(&t.surface).ok())),
            trigrams: Vocab::build(toks().flat_map(|t| affixes(&t.surface.to_lowercase(), 3))),
            fivegrams: Vocab::build(toks().flat_map(|t| affixes(&t.surface.to_lowercase(), 5))),
            sdp_rel: Vocab::build(
                std::iter::once(NO_REL.to_string()).chain(toks().filter_map(|t| t.dep_rel.clone())),
            ),
        }
    }
}

/// Map every token of a sentence to table indices. Unseen values map to
/// [`UNK`].
pub fn featurize_sentence(tokens: &[Token], tables: &FeatureTables, patterns: &AlphaPatterns) -> Vec<TokenFeatures> {
    let hits: Vec<bool> = tokens.iter().map(|t| patterns.matches(&t.surface)).collect();
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let lower = t.surface.to_lowercase();
            let tri = affixes(&lower, 3);
            let five = affixes(&lower, 5);
            let len = t.surface.chars().count();
            TokenFeatures {
                word_id: tables.words.get(&word_key(&t.surface)),
                char_ids: t.surface.chars().map(|c| tables.chars.get(c.encode_utf8(&mut [0; 4]))).collect(),
                cap_class: cap_class(&t.surface).unwrap_or(CapClass::Other),
                pos_id: tables.pos.get(&t.pos),
                ortho_id: ortho_shape(&t.surface).map(|s| tables.ortho.get(&s)).unwrap_or(UNK),
                trigram_ids: [tables.trigrams.get(&tri[0]), tables.trigrams.get(&tri[1])],
                fivegram_ids: [tables.fivegrams.get(&five[0]), tables.fivegrams.get(&five[1])],
                length_bucket: len.clamp(1, MAX_LENGTH_BUCKET),
                sdp_rel_id: tables.sdp_rel.get(t.dep_rel.as_deref().unwrap_or(NO_REL)),
                alpha_flags: [u8::from(hits[i]), u8::from(hits.get(i + 1).copied().unwrap_or(false))],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::whitespace_tokens;

    #[test]
    fn shapes() {
        assert_eq!(ortho_shape("Egg").unwrap(), "Ccc");
        assert_eq!(ortho_shape("97").unwrap(), "nn");
        assert_eq!(ortho_shape("Pulp,").unwrap(), "Ccccp");
        assert!(ortho_shape("").is_err());
    }

    #[test]
    fn capitalization() {
        assert_eq!(cap_class("DNA").unwrap(), CapClass::AllCaps);
        assert_eq!(cap_class("Vibrio").unwrap(), CapClass::InitCap);
        assert_eq!(cap_class("97").unwrap(), CapClass::Other);
        assert_eq!(cap_class("fish").unwrap(), CapClass::AllLower);
        assert_eq!(cap_class("mRNA").unwrap(), CapClass::Mixed);
        assert!(cap_class("").is_err());
    }

    #[test]
    fn alpha_flags_look_ahead() {
        let toks = whitespace_tokens("fish pathogen");
        let tables = FeatureTables::build([toks.as_slice()], []);
        let pats = AlphaPatterns::new(&["pathogen"]).unwrap();
        let f = featurize_sentence(&toks, &tables, &pats);
        assert_eq!(f[0].alpha_flags, [0, 1]);
        assert_eq!(f[1].alpha_flags, [1, 0]);
    }

    #[test]
    fn length_cap_and_unknowns() {
        let train = whitespace_tokens("short words");
        let tables = FeatureTables::build([train.as_slice()], []);
        let mut test = whitespace_tokens(&"x".repeat(37));
        test[0].pos = "NEVER-SEEN".into();
        let f = featurize_sentence(&test, &tables, &AlphaPatterns::default());
        assert_eq!(f[0].length_bucket, 20);
        assert_eq!(f[0].pos_id, UNK);
        assert_eq!(f[0].word_id, UNK);
    }

    #[test]
    fn deterministic_ids() {
        let a = whitespace_tokens("Vibrio salmonicida in fish-97 farms");
        let tables = FeatureTables::build([a.as_slice()], []);
        let p = AlphaPatterns::default();
        assert_eq!(featurize_sentence(&a, &tables, &p), featurize_sentence(&a, &tables, &p));
        let f = featurize_sentence(&a, &tables, &p);
        assert_eq!(f[3].alpha_flags, [1, 0]);
        assert!(f.iter().all(|t| t.word_id != UNK && t.ortho_id != UNK));
    }
}
