use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{normalize_mention, NormalizerConfig};
use crate::corpus::{Concept, EmbeddingTable};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"BIOXIDX\0";
pub const INDEX_VERSION: u32 = 1;

/// Concept ids compare numerically when both are plain numbers (taxonomy
/// ids), otherwise as strings.
pub fn cmp_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedSurface {
    pub text: String,
    pub concept: usize,
}

/// Searchable view of one ontology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyIndex {
    /// Resource name written next to ids, e.g. `NCBI_Taxonomy`.
    pub resource: String,
    /// Non-obsolete concepts sorted by id.
    pub concepts: Vec<Concept>,
    /// Normalized surface → concept indices (ascending).
    pub exact: BTreeMap<String, Vec<usize>>,
    /// Every (normalized surface, concept) pair.
    pub surfaces: Vec<IndexedSurface>,
    /// Surface length in chars → indices into `surfaces`.
    pub buckets: BTreeMap<usize, Vec<usize>>,
    /// Per-concept mean word vector, `None` without in-vocabulary words.
    pub embed: Vec<Option<Vec<f64>>>,
    pub config: NormalizerConfig,
}

/// Levenshtein distance over chars, or `None` once it must exceed `max`.
pub fn bounded_levenshtein(a: &[char], b: &[char], max: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > max {
        return None;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        let mut row_min = cur[0];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
            row_min = row_min.min(cur[j + 1]);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= max).then_some(d)
}

/// `1 − distance / max length`; two empty strings are identical.
pub fn similarity(distance: usize, a_len: usize, b_len: usize) -> f64 {
    let m = a_len.max(b_len);
    if m == 0 {
        1.0
    } else {
        1.0 - distance as f64 / m as f64
    }
}

fn mean_vector(text: &str, emb: &EmbeddingTable) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; emb.dim()];
    let mut n = 0usize;
    for w in text.split_whitespace() {
        if let Some(v) = emb.get(w) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            n += 1;
        }
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl OntologyIndex {
    /// Build the index. With `embeddings`, concept vectors are the mean of
    /// the in-vocabulary words of the normalized name (and synonyms when
    /// `config.embed_synonyms` is set).
    pub fn build(
        resource: &str,
        concepts: Vec<Concept>,
        config: NormalizerConfig,
        embeddings: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        let mut concepts: Vec<Concept> = concepts.into_iter().filter(|c| !c.obsolete).collect();
        concepts.sort_by(|a, b| cmp_ids(&a.id, &b.id));
        if let Some(w) = concepts.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Format(format!("duplicate concept id {} in {resource}", w[0].id)));
        }
        let mut exact: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut surfaces = Vec::new();
        for (ci, c) in concepts.iter().enumerate() {
            let mut seen: Vec<String> = Vec::new();
            for s in c.surfaces() {
                let n = normalize_mention(s);
                if n.is_empty() || seen.contains(&n) {
                    continue;
                }
                exact.entry(n.clone()).or_default().push(ci);
                surfaces.push(IndexedSurface {
                    text: n.clone(),
                    concept: ci,
                });
                seen.push(n);
            }
        }
        let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in surfaces.iter().enumerate() {
            buckets.entry(s.text.chars().count()).or_default().push(i);
        }
        let embed = concepts
            .iter()
            .map(|c| {
                let emb = embeddings?;
                if config.embed_synonyms {
                    let joined = c.surfaces().iter().map(|s| normalize_mention(s)).collect::<Vec<_>>().join(" ");
                    mean_vector(&joined, emb)
                } else {
                    mean_vector(&normalize_mention(&c.name), emb)
                }
            })
            .collect();
        Ok(OntologyIndex {
            resource: resource.to_string(),
            concepts,
            exact,
            surfaces,
            buckets,
            embed,
            config,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.concepts
            .binary_search_by(|c| cmp_ids(&c.id, id))
            .ok()
            .map(|i| &self.concepts[i])
    }

    /// Concepts whose normalized surface equals the normalized mention,
    /// lowest id first.
    pub fn exact_ids(&self, mention: &str) -> &[usize] {
        self.exact.get(&normalize_mention(mention)).map_or(&[], Vec::as_slice)
    }

    pub fn exact_match(&self, mention: &str) -> Option<&str> {
        self.exact_ids(mention).first().map(|&i| self.concepts[i].id.as_str())
    }

    fn rank(&self, mut scored: Vec<(usize, f64)>) -> Vec<Candidate> {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(self.config.top_k)
            .map(|(ci, score)| Candidate {
                id: self.concepts[ci].id.clone(),
                score,
            })
            .collect()
    }

    /// Surfaces within the similarity threshold, best score per concept.
    pub fn fuzzy_match(&self, mention: &str) -> Vec<Candidate> {
        let q: Vec<char> = normalize_mention(mention).chars().collect();
        if q.is_empty() {
            return Vec::new();
        }
        let t = self.config.fuzzy_threshold;
        let lq = q.len() as f64;
        // |la − lb| ≤ (1 − t)·max(la, lb) bounds the usable lengths; widened
        // by one on each side since the exact test follows.
        let lo = ((t * lq).floor() as usize).saturating_sub(1);
        let hi = if t > 0.0 { (lq / t).ceil() as usize + 1 } else { usize::MAX };
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        for (&len, ids) in self.buckets.range(lo..=hi) {
            let max_len = len.max(q.len());
            let budget = ((1.0 - t) * max_len as f64).floor() as usize + 1;
            for &si in ids {
                let s = &self.surfaces[si];
                let chars: Vec<char> = s.text.chars().collect();
                let Some(d) = bounded_levenshtein(&q, &chars, budget) else {
                    continue;
                };
                let sim = similarity(d, q.len(), chars.len());
                if sim >= t {
                    let e = best.entry(s.concept).or_insert(sim);
                    if sim > *e {
                        *e = sim;
                    }
                }
            }
        }
        self.rank(best.into_iter().collect())
    }

    /// Concepts by cosine similarity with the mention's mean word vector;
    /// only those at or above the threshold are returned.
    pub fn semantic_search(&self, mention: &str, embeddings: &EmbeddingTable) -> Vec<Candidate> {
        let Some(q) = mean_vector(&normalize_mention(mention), embeddings) else {
            return Vec::new();
        };
        let scored = self
            .embed
            .iter()
            .enumerate()
            .filter_map(|(ci, v)| v.as_ref().map(|v| (ci, cosine(&q, v))))
            .filter(|&(_, s)| s >= self.config.semantic_threshold)
            .collect();
        self.rank(scored)
    }

    /// Versioned binary form: magic, u32 LE version, u64 LE payload length,
    /// JSON payload. Identical inputs give identical bytes.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Format(format!("index: {e}")))?;
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 20];
        r.read_exact(&mut head)
            .map_err(|e| Error::Format(format!("index header: {e}")))?;
        if &head[..8] != INDEX_MAGIC {
            return Err(Error::Format("not an ontology index (bad magic)".into()));
        }
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("index version {version}, expected {INDEX_VERSION}")));
        }
        let len = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|e| Error::Format(format!("index truncated: {e}")))?;
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("index: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::OovStrategy;

    fn concept(id: &str, name: &str, syn: &[&str]) -> Concept {
        let mut c = Concept::new(id, name);
        c.synonyms = syn.iter().map(|s| s.to_string()).collect();
        c
    }

    fn ncbi() -> OntologyIndex {
        OntologyIndex::build(
            "NCBI_Taxonomy",
            vec![
                concept("562", "Escherichia coli", &["bacterium coli", "E. coli"]),
                concept("80854", "Vibrio salmonicida", &[]),
                concept("1423", "Bacillus subtilis", &["E. coli"]),
            ],
            NormalizerConfig::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn exact_lookup() {
        let idx = ncbi();
        assert_eq!(idx.exact_match("ESCHERICHIA   coli"), Some("562"));
        assert_eq!(idx.exact_match("bacterium coli."), Some("562"));
        // ambiguous surface resolves to the lowest id
        assert_eq!(idx.exact_match("e. coli"), Some("562"));
        assert_eq!(idx.exact_match("fish"), None);
    }

    #[test]
    fn fuzzy_examples() {
        let idx = ncbi();
        let c = idx.fuzzy_match("Bacteriumcoli");
        assert_eq!(c[0].id, "562");
        assert!((c[0].score - (1.0 - 1.0 / 14.0)).abs() < 1e-12);
        let c = idx.fuzzy_match("Vibrio salmonicida");
        assert_eq!((c[0].id.as_str(), c[0].score), ("80854", 1.0));
        assert!(idx.fuzzy_match("zzzzzzzz").is_empty());
    }

    #[test]
    fn levenshtein_bound() {
        let a: Vec<char> = "kitten".chars().collect();
        let b: Vec<char> = "sitting".chars().collect();
        assert_eq!(bounded_levenshtein(&a, &b, 3), Some(3));
        assert_eq!(bounded_levenshtein(&a, &b, 2), None);
    }

    #[test]
    fn semantic_order_follows_cosines() {
        let emb = EmbeddingTable::from_rows(
            vec![
                ("a".into(), vec![1.0, 0.0, 0.0]),
                ("b".into(), vec![0.0, 1.0, 0.0]),
                ("c".into(), vec![0.0, 0.0, 1.0]),
                ("d".into(), vec![1.0, 1.0, 0.0]),
                ("e".into(), vec![1.0, 0.2, 0.0]),
            ],
            OovStrategy::Zero,
        )
        .unwrap();
        let concepts = ["a", "b", "c", "d", "e"]
            .iter()
            .enumerate()
            .map(|(i, n)| concept(&format!("OBT:{i}"), n, &[]))
            .collect();
        let idx = OntologyIndex::build("OntoBiotope", concepts, NormalizerConfig::default(), Some(&emb)).unwrap();
        let c = idx.semantic_search("a", &emb);
        let ids: Vec<&str> = c.iter().map(|c| c.id.as_str()).collect();
        // cos(a, ·): a 1, e 0.98, d 0.707; b and c are orthogonal
        assert_eq!(ids, ["OBT:0", "OBT:4", "OBT:3"]);
        assert!(idx.semantic_search("unknownword", &emb).is_empty());
    }

    #[test]
    fn serialization_is_deterministic() {
        let mut a = Vec::new();
        ncbi().write(&mut a).unwrap();
        let mut b = Vec::new();
        ncbi().write(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(OntologyIndex::read(a.as_slice()).unwrap(), ncbi());
    }
}
