//! Ontology linking and dictionary tagging.
//!
//! Mentions are resolved against two indices: a taxonomy of
//! microorganisms and a habitat/phenotype ontology. Microorganism mentions
//! only look at the taxonomy (exact, then fuzzy). Any other mention first
//! tries the taxonomy too and is relabelled as a microorganism on success;
//! otherwise it goes to the second ontology (exact, then embedding search).

mod brute;
mod index;

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force_tag, DictMatch, DictionaryMatcher};
pub use index::{bounded_levenshtein, cmp_ids, similarity, Candidate, IndexedSurface, OntologyIndex, INDEX_MAGIC, INDEX_VERSION};

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};

pub const MICROORGANISM: &str = "Microorganism";
pub const NCBI_RESOURCE: &str = "NCBI_Taxonomy";
pub const OBT_RESOURCE: &str = "OntoBiotope";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizerConfig {
    pub fuzzy_threshold: f64,
    pub semantic_threshold: f64,
    pub top_k: usize,
    /// Include synonyms in concept vectors for embedding search.
    pub embed_synonyms: bool,
    pub cache: bool,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            fuzzy_threshold: 0.85,
            semantic_threshold: 0.5,
            top_k: 5,
            embed_synonyms: false,
            cache: true,
        }
    }
}

impl NormalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(Error::Config(format!("fuzzy_threshold = {} not in [0, 1]", self.fuzzy_threshold)));
        }
        if !(-1.0..=1.0).contains(&self.semantic_threshold) {
            return Err(Error::Config(format!(
                "semantic_threshold = {} not in [-1, 1]",
                self.semantic_threshold
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be positive".into()));
        }
        Ok(())
    }
}

/// Lowercase, collapse whitespace and strip surrounding punctuation.
pub fn normalize_mention(s: &str) -> String {
    let lower = s.to_lowercase();
    let squashed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    squashed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Exact,
    Fuzzy,
    Semantic,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub ref_id: Option<String>,
    /// Resource of `ref_id`.
    pub resource: Option<String>,
    pub candidates: Vec<Candidate>,
    /// Set when a non-microorganism mention was found in the taxonomy.
    pub relabeled_type: Option<String>,
    pub method: Method,
}

impl Resolution {
    fn none() -> Self {
        Resolution {
            ref_id: None,
            resource: None,
            candidates: Vec::new(),
            relabeled_type: None,
            method: Method::None,
        }
    }

    fn found(index: &OntologyIndex, candidates: Vec<Candidate>, method: Method) -> Option<Self> {
        let first = candidates.first()?.id.clone();
        Some(Resolution {
            ref_id: Some(first),
            resource: Some(index.resource.clone()),
            candidates,
            relabeled_type: None,
            method,
        })
    }
}

fn exact_candidates(index: &OntologyIndex, mention: &str) -> Vec<Candidate> {
    index
        .exact_ids(mention)
        .iter()
        .take(index.config.top_k)
        .map(|&i| Candidate {
            id: index.concepts[i].id.clone(),
            score: 1.0,
        })
        .collect()
}

pub struct Normalizer {
    pub ncbi: OntologyIndex,
    pub obt: OntologyIndex,
    pub embeddings: Option<EmbeddingTable>,
    cache: Option<Mutex<HashMap<(String, String), Resolution>>>,
}

impl Normalizer {
    pub fn new(ncbi: OntologyIndex, obt: OntologyIndex, embeddings: Option<EmbeddingTable>, cache: bool) -> Self {
        Normalizer {
            ncbi,
            obt,
            embeddings,
            cache: cache.then(|| Mutex::new(HashMap::new())),
        }
    }

    /// Number of cached resolutions.
    pub fn cache_len(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.lock().expect("cache lock").len())
    }

    pub fn normalize(&self, mention: &str, entity_type: &str) -> Resolution {
        let key = (normalize_mention(mention), entity_type.to_string());
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lock().expect("cache lock").get(&key) {
                return hit.clone();
            }
        }
        let r = self.resolve(mention, entity_type);
        if let Some(cache) = &self.cache {
            cache.lock().expect("cache lock").insert(key, r.clone());
        }
        r
    }

    fn resolve(&self, mention: &str, entity_type: &str) -> Resolution {
        let taxonomy = Resolution::found(&self.ncbi, exact_candidates(&self.ncbi, mention), Method::Exact)
            .or_else(|| Resolution::found(&self.ncbi, self.ncbi.fuzzy_match(mention), Method::Fuzzy));
        if entity_type == MICROORGANISM {
            return taxonomy.unwrap_or_else(Resolution::none);
        }
        if let Some(mut r) = taxonomy {
            r.relabeled_type = Some(MICROORGANISM.to_string());
            return r;
        }
        if let Some(r) = Resolution::found(&self.obt, exact_candidates(&self.obt, mention), Method::Exact) {
            return r;
        }
        self.embeddings
            .as_ref()
            .and_then(|emb| Resolution::found(&self.obt, self.obt.semantic_search(mention, emb), Method::Semantic))
            .unwrap_or_else(Resolution::none)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Concept;

    #[test]
    fn mention_normalization() {
        assert_eq!(normalize_mention("  (Fish   Farm). "), "fish farm");
        assert_eq!(normalize_mention("E. coli"), "e. coli");
        assert_eq!(normalize_mention("..."), "");
    }

    #[test]
    fn routing() {
        let cfg = NormalizerConfig::default();
        let ncbi = OntologyIndex::build(
            NCBI_RESOURCE,
            vec![Concept::new("80854", "Vibrio salmonicida"), Concept::new("562", "Escherichia coli")],
            cfg.clone(),
            None,
        )
        .unwrap();
        let obt = OntologyIndex::build(OBT_RESOURCE, vec![Concept::new("OBT:001", "fish")], cfg, None).unwrap();
        let n = Normalizer::new(ncbi, obt, None, true);
        let r = n.normalize("Vibrio salmonicida", MICROORGANISM);
        assert_eq!((r.ref_id.as_deref(), r.method, r.relabeled_type), (Some("80854"), Method::Exact, None));
        let r = n.normalize("Escherichia coli", "Habitat");
        assert_eq!(r.relabeled_type.as_deref(), Some(MICROORGANISM));
        let r = n.normalize("fish", "Habitat");
        assert_eq!((r.ref_id.as_deref(), r.resource.as_deref()), (Some("OBT:001"), Some(OBT_RESOURCE)));
        assert_eq!(n.normalize("fish", "Habitat"), r);
        assert_eq!(n.cache_len(), 3);
    }
}
