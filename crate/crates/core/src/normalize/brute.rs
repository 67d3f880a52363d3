use serde::{Deserialize, Serialize};

use super::index::OntologyIndex;
use crate::corpus::Token;
use crate::tags::TokenSpan;

/// A dictionary hit with its concept.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DictMatch {
    pub span: TokenSpan,
    pub id: String,
    pub resource: String,
}

#[derive(Debug, Clone, Default)]
struct Node {
    /// Sorted by char.
    next: Vec<(char, usize)>,
    /// Concept index and type when a surface ends here.
    hit: Option<(usize, String)>,
}

/// Character trie over the normalized surfaces of one ontology.
#[derive(Debug, Clone)]
pub struct DictionaryMatcher<'a> {
    index: &'a OntologyIndex,
    nodes: Vec<Node>,
}

fn lower_tokens(tokens: &[Token]) -> Vec<Vec<char>> {
    tokens.iter().map(|t| t.surface.to_lowercase().chars().collect()).collect()
}

impl<'a> DictionaryMatcher<'a> {
    /// Surfaces whose concepts carry no entity type fall back to
    /// `default_type`; without one they are not matched.
    pub fn new(index: &'a OntologyIndex, default_type: Option<&str>) -> Self {
        let mut nodes = vec![Node::default()];
        for (surface, ids) in &index.exact {
            let typed = ids.iter().find_map(|&ci| {
                index.concepts[ci]
                    .entity_type
                    .as_deref()
                    .or(default_type)
                    .map(|t| (ci, t.to_string()))
            });
            let Some(hit) = typed else { continue };
            let mut at = 0;
            for c in surface.chars() {
                at = match nodes[at].next.binary_search_by_key(&c, |e| e.0) {
                    Ok(i) => nodes[at].next[i].1,
                    Err(i) => {
                        nodes.push(Node::default());
                        let id = nodes.len() - 1;
                        nodes[at].next.insert(i, (c, id));
                        id
                    }
                };
            }
            nodes[at].hit = Some(hit);
        }
        DictionaryMatcher { index, nodes }
    }

    fn step(&self, at: usize, c: char) -> Option<usize> {
        let n = &self.nodes[at];
        n.next.binary_search_by_key(&c, |e| e.0).ok().map(|i| n.next[i].1)
    }

    /// Longest token-aligned match starting at token `start`: last token
    /// index and the hit.
    fn longest_at(&self, toks: &[Vec<char>], start: usize) -> Option<(usize, &(usize, String))> {
        let mut at = 0;
        let mut best = None;
        'tokens: for (j, tok) in toks.iter().enumerate().skip(start) {
            let sep = (j > start).then_some(' ');
            for c in sep.into_iter().chain(tok.iter().copied()) {
                match self.step(at, c) {
                    Some(next) => at = next,
                    None => break 'tokens,
                }
            }
            if let Some(hit) = &self.nodes[at].hit {
                best = Some((j, hit));
            }
        }
        best
    }

    /// Greedy left-to-right longest matches, non-overlapping.
    pub fn tag(&self, tokens: &[Token]) -> Vec<DictMatch> {
        let toks = lower_tokens(tokens);
        let mut out = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            match self.longest_at(&toks, i) {
                Some((j, (ci, ty))) => {
                    out.push(DictMatch {
                        span: TokenSpan::new(i, j, ty),
                        id: self.index.concepts[*ci].id.clone(),
                        resource: self.index.resource.clone(),
                    });
                    i = j + 1;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Dictionary matches of every ontology; each ontology is matched
/// independently, so spans of different ontologies may overlap.
pub fn brute_force_tag(tokens: &[Token], matchers: &[DictionaryMatcher<'_>]) -> Vec<DictMatch> {
    let mut out: Vec<DictMatch> = matchers.iter().flat_map(|m| m.tag(tokens)).collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{whitespace_tokens, Concept};
    use crate::normalize::NormalizerConfig;

    fn index(resource: &str, names: &[(&str, &str, Option<&str>)]) -> OntologyIndex {
        let concepts = names
            .iter()
            .map(|(id, n, t)| {
                let mut c = Concept::new(id, n);
                c.entity_type = t.map(str::to_string);
                c
            })
            .collect();
        OntologyIndex::build(resource, concepts, NormalizerConfig::default(), None).unwrap()
    }

    #[test]
    fn longest_match_wins() {
        let ncbi = index(
            "NCBI_Taxonomy",
            &[("1", "Vibrio", Some("Microorganism")), ("2", "Vibrio salmonicida", Some("Microorganism"))],
        );
        let obt = index("OntoBiotope", &[("OBT:1", "fish", Some("Habitat"))]);
        let ms = [DictionaryMatcher::new(&ncbi, None), DictionaryMatcher::new(&obt, None)];
        let tokens = whitespace_tokens("Vibrio salmonicida in fish farm");
        let got = brute_force_tag(&tokens, &ms);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].span, TokenSpan::new(0, 1, "Microorganism"));
        assert_eq!(got[0].id, "2");
        assert_eq!(got[1].span, TokenSpan::new(3, 3, "Habitat"));
        assert!(brute_force_tag(&whitespace_tokens("nothing here"), &ms).is_empty());
    }

    #[test]
    fn matches_are_token_aligned() {
        let obt = index("OntoBiotope", &[("OBT:1", "fish", Some("Habitat"))]);
        let m = DictionaryMatcher::new(&obt, None);
        assert!(m.tag(&whitespace_tokens("fisheries and catfish")).is_empty());
        let untyped = index("OntoBiotope", &[("OBT:1", "fish", None)]);
        assert!(DictionaryMatcher::new(&untyped, None).tag(&whitespace_tokens("fish")).is_empty());
        assert_eq!(DictionaryMatcher::new(&untyped, Some("Habitat")).tag(&whitespace_tokens("fish")).len(), 1);
    }
}
