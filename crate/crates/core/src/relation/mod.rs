//! Intra-sentence binary relation extraction.

mod svm;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::BufRead;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use svm::{rbf, smo, sparse_dot, svm_predict, svm_train, BinarySolution, Machine, SparseVec, SvmConfig, SvmModel, NEGATIVE};

use crate::corpus::{Document, Span, Token};
use crate::error::{Error, Result};
use crate::eval::{Average, PrfReport};

/// Valid `(arg1 type, arg2 type, relation)` combinations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub combos: BTreeSet<(String, String, String)>,
    /// Argument role names per relation, default `Arg1` / `Arg2`.
    pub roles: BTreeMap<String, (String, String)>,
}

impl RelationSchema {
    /// Tab- or space-separated lines `ARG1_TYPE ARG2_TYPE RELATION
    /// [ROLE1 ROLE2]`; `#` starts a comment. Direction matters: the first
    /// column is always the first argument.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut schema = RelationSchema::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let cols: Vec<&str> = body.split_whitespace().collect();
            match cols.as_slice() {
                [a, b, r] => {
                    schema.combos.insert((a.to_string(), b.to_string(), r.to_string()));
                }
                [a, b, r, ra, rb] => {
                    schema.combos.insert((a.to_string(), b.to_string(), r.to_string()));
                    let roles = (ra.to_string(), rb.to_string());
                    if let Some(prev) = schema.roles.insert(r.to_string(), roles.clone()) {
                        if prev != roles {
                            return Err(Error::parse(i + 1, format!("conflicting roles for {r}")));
                        }
                    }
                }
                _ => return Err(Error::parse(i + 1, "expected 3 or 5 columns")),
            }
        }
        if schema.combos.is_empty() {
            return Err(Error::Config("relation schema has no combinations".into()));
        }
        Ok(schema)
    }

    pub fn entity_types(&self) -> BTreeSet<&str> {
        self.combos.iter().flat_map(|(a, b, _)| [a.as_str(), b.as_str()]).collect()
    }

    pub fn relation_types(&self) -> BTreeSet<&str> {
        self.combos.iter().map(|(_, _, r)| r.as_str()).collect()
    }

    pub fn allows(&self, t1: &str, t2: &str, rel: &str) -> bool {
        self.combos.contains(&(t1.to_string(), t2.to_string(), rel.to_string()))
    }

    /// Whether any relation links these types in this direction.
    pub fn pair_valid(&self, t1: &str, t2: &str) -> bool {
        self.combos.iter().any(|(a, b, _)| a == t1 && b == t2)
    }

    pub fn roles_of(&self, rel: &str) -> (&str, &str) {
        self.roles
            .get(rel)
            .map_or(("Arg1", "Arg2"), |(a, b)| (a.as_str(), b.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateMode {
    /// Positives plus negatives from sentences without any gold relation.
    Train,
    /// Every valid pair.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidatePair {
    pub doc_id: String,
    pub sentence: usize,
    /// Indices into `doc.gold_spans`.
    pub e1: usize,
    pub e2: usize,
    /// Inclusive token ranges.
    pub e1_tokens: (usize, usize),
    pub e2_tokens: (usize, usize),
    pub token_distance: usize,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<CandidatePair>,
    /// Gold relations lost to the distance filter.
    pub dropped_gold: usize,
    /// Gold relations whose arguments sit in different sentences.
    pub cross_sentence_gold: usize,
}

/// Tokens strictly between two inclusive ranges; 0 when they touch or
/// overlap.
pub fn token_distance(a: (usize, usize), b: (usize, usize)) -> usize {
    if a.1 < b.0 {
        b.0 - a.1 - 1
    } else if b.1 < a.0 {
        a.0 - b.1 - 1
    } else {
        0
    }
}

pub fn generate_candidates(doc: &Document, schema: &RelationSchema, tau: usize, mode: CandidateMode) -> CandidateSet {
    let mut gold: BTreeMap<(usize, usize), BTreeSet<&str>> = BTreeMap::new();
    let index_of = |ann: &str| doc.gold_spans.iter().position(|s| s.ann_id == ann);
    let mut related_sentences = BTreeSet::new();
    let mut out = CandidateSet::default();
    for r in &doc.gold_relations {
        let (Some(a), Some(b)) = (index_of(r.arg1()), index_of(r.arg2())) else { continue };
        let (sa, sb) = (doc.sentence_of(&doc.gold_spans[a]), doc.sentence_of(&doc.gold_spans[b]));
        match (sa, sb) {
            (Some(x), Some(y)) if x == y => {
                related_sentences.insert(x);
                gold.entry((a, b)).or_default().insert(&r.rel_type);
            }
            _ => out.cross_sentence_gold += 1,
        }
    }

    for (si, sent) in doc.sentences.iter().enumerate() {
        let ents: Vec<(usize, (usize, usize))> = doc
            .gold_spans
            .iter()
            .enumerate()
            .filter(|(_, s)| doc.sentence_of(s) == Some(si))
            .filter_map(|(i, s)| Document::token_range(sent, s).map(|r| (i, r)))
            .collect();
        let negatives_allowed = mode == CandidateMode::Eval || !related_sentences.contains(&si);
        for &(i, ri) in &ents {
            for &(j, rj) in &ents {
                if i == j {
                    continue;
                }
                let (t1, t2) = (&doc.gold_spans[i].entity_type, &doc.gold_spans[j].entity_type);
                let labels = gold.get(&(i, j));
                if !schema.pair_valid(t1, t2) {
                    continue;
                }
                let label = labels
                    .and_then(|ls| ls.iter().find(|r| schema.allows(t1, t2, r)))
                    .map_or(NEGATIVE.to_string(), |r| r.to_string());
                let dist = token_distance(ri, rj);
                if dist > tau {
                    if label != NEGATIVE {
                        out.dropped_gold += 1;
                    }
                    continue;
                }
                if label == NEGATIVE && !negatives_allowed {
                    continue;
                }
                out.candidates.push(CandidatePair {
                    doc_id: doc.doc_id.clone(),
                    sentence: si,
                    e1: i,
                    e2: j,
                    e1_tokens: ri,
                    e2_tokens: rj,
                    token_distance: dist,
                    label,
                });
            }
        }
    }
    out
}

/// Resources consulted by [`featurize_pair`].
#[derive(Debug, Clone, Default)]
pub struct FeatureContext<'a> {
    pub embeddings: Option<&'a crate::corpus::EmbeddingTable>,
    /// Relation type → lowercase keywords.
    pub keywords: BTreeMap<String, Vec<String>>,
    /// Named regexes tested on the text around and between the pair.
    pub patterns: Vec<(String, Regex)>,
}

pub type NamedFeatures = BTreeMap<String, f64>;

fn bucket(v: usize, edges: &[(usize, &'static str)], last: &'static str) -> &'static str {
    edges.iter().find(|(hi, _)| v <= *hi).map_or(last, |(_, n)| n)
}

/// Token of an inclusive range whose head lies outside it (the last such
/// token), else the last token.
fn head_token(sent: &[Token], r: (usize, usize)) -> usize {
    (r.0..=r.1)
        .rev()
        .find(|&i| sent[i].dep_head.is_none_or(|h| h < r.0 || h > r.1))
        .unwrap_or(r.1)
}

/// Shortest path between two tokens in the undirected dependency graph,
/// as the list of visited tokens (both ends included).
pub fn shortest_dependency_path(sent: &[Token], from: usize, to: usize) -> Option<Vec<usize>> {
    let n = sent.len();
    let mut adj = vec![Vec::new(); n];
    for (i, t) in sent.iter().enumerate() {
        if let Some(h) = t.dep_head.filter(|&h| h < n && h != i) {
            adj[i].push(h);
            adj[h].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        if u == to {
            let mut path = vec![to];
            let mut at = to;
            while at != from {
                at = prev[at];
                path.push(at);
            }
            path.reverse();
            return Some(path);
        }
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    None
}

/// Named, unscaled features of a candidate pair.
pub fn featurize_pair(cand: &CandidatePair, doc: &Document, ctx: &FeatureContext<'_>) -> NamedFeatures {
    let sent = &doc.sentences[cand.sentence];
    let mut f = NamedFeatures::new();
    let add = |f: &mut NamedFeatures, k: String, v: f64| *f.entry(k).or_insert(0.0) += v;
    let lower = |t: &Token| t.surface.to_lowercase();
    let (first, second) = if cand.e1_tokens.0 <= cand.e2_tokens.0 {
        (cand.e1_tokens, cand.e2_tokens)
    } else {
        (cand.e2_tokens, cand.e1_tokens)
    };
    let between: Vec<usize> = (first.1 + 1..second.0).collect();
    let window: Vec<usize> = (first.0.saturating_sub(3)..first.0).chain(second.1 + 1..(second.1 + 4).min(sent.len())).collect();

    for t in sent {
        add(&mut f, format!("bow={}", lower(t)), 1.0);
        if let Some(l) = &t.lemma {
            add(&mut f, format!("lemma={}", l.to_lowercase()), 1.0);
        }
    }
    for &i in &between {
        add(&mut f, format!("between={}", lower(&sent[i])), 1.0);
        add(&mut f, format!("pos_between={}", sent[i].pos), 1.0);
    }
    for &i in &window {
        add(&mut f, format!("window={}", lower(&sent[i])), 1.0);
    }

    let (s1, s2) = (&doc.gold_spans[cand.e1], &doc.gold_spans[cand.e2]);
    let (h1, h2) = (head_token(sent, cand.e1_tokens), head_token(sent, cand.e2_tokens));
    add(&mut f, format!("e1_pos={}", sent[h1].pos), 1.0);
    add(&mut f, format!("e2_pos={}", sent[h2].pos), 1.0);
    add(&mut f, format!("e1_type={}", s1.entity_type), 1.0);
    add(&mut f, format!("e2_type={}", s2.entity_type), 1.0);
    if s1.entity_type == s2.entity_type {
        add(&mut f, "same_type".into(), 1.0);
    }
    add(&mut f, "dist".into(), cand.token_distance as f64);
    let dist_cat = bucket(
        cand.token_distance,
        &[(0, "0"), (2, "1-2"), (5, "3-5"), (10, "6-10"), (20, "11-20")],
        ">20",
    );
    add(&mut f, format!("dist_cat={dist_cat}"), 1.0);

    let others: Vec<(&Span, (usize, usize))> = doc
        .gold_spans
        .iter()
        .enumerate()
        .filter(|&(i, s)| i != cand.e1 && i != cand.e2 && doc.sentence_of(s) == Some(cand.sentence))
        .filter_map(|(_, s)| Document::token_range(sent, s).map(|r| (s, r)))
        .collect();
    let inside = others.iter().filter(|(_, r)| r.0 > first.1 && r.1 < second.0).count();
    add(&mut f, "ent_between".into(), inside as f64);
    let count_cat = bucket(inside, &[(0, "0"), (1, "1"), (2, "2")], ">=3");
    add(&mut f, format!("ent_between_cat={count_cat}"), 1.0);

    if let Some(path) = shortest_dependency_path(sent, h1, h2) {
        add(&mut f, "sdp_len".into(), (path.len() - 1) as f64);
        for &i in &path {
            add(&mut f, format!("sdp={}", lower(&sent[i])), 1.0);
        }
        for w in path.windows(2) {
            // the edge label sits on the dependent
            let child = if sent[w[0]].dep_head == Some(w[1]) { w[0] } else { w[1] };
            let rel = sent[child].dep_rel.as_deref().unwrap_or("dep");
            add(&mut f, format!("sdp_rel={rel}"), 1.0);
        }
        let on_path: BTreeSet<usize> = path.iter().copied().collect();
        for (s, r) in &others {
            if (r.0..=r.1).any(|i| on_path.contains(&i)) {
                add(&mut f, "sdp_entities".into(), 1.0);
                add(&mut f, format!("sdp_entity_type={}", s.entity_type), 1.0);
            }
        }
        if let Some(emb) = ctx.embeddings {
            let vecs: Vec<&[f64]> = path.iter().filter_map(|&i| emb.get(&lower(&sent[i]))).collect();
            if !vecs.is_empty() {
                for d in 0..emb.dim() {
                    let mean = vecs.iter().map(|v| v[d]).sum::<f64>() / vecs.len() as f64;
                    add(&mut f, format!("emb_sdp_{d:04}"), mean);
                }
            }
        }
    }

    let words: Vec<String> = sent.iter().map(lower).collect();
    let joined = format!(" {} ", words.join(" "));
    for (rel, kws) in &ctx.keywords {
        if kws.iter().any(|k| joined.contains(&format!(" {} ", k.to_lowercase()))) {
            add(&mut f, format!("kw={rel}"), 1.0);
        }
    }
    let vicinity: Vec<&str> = window
        .iter()
        .chain(&between)
        .map(|&i| sent[i].surface.as_str())
        .collect();
    let vicinity = vicinity.join(" ");
    for (name, re) in &ctx.patterns {
        if re.is_match(&vicinity) {
            add(&mut f, format!("pattern={name}"), 1.0);
        }
    }
    f.retain(|_, v| *v != 0.0);
    f
}

/// Feature name → column, frozen after training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub columns: BTreeMap<String, usize>,
}

impl FeatureSpace {
    /// Columns in name order, so the numbering does not depend on the
    /// order candidates were seen in.
    pub fn build<'a>(features: impl IntoIterator<Item = &'a NamedFeatures>) -> Self {
        let names: BTreeSet<&String> = features.into_iter().flat_map(|f| f.keys()).collect();
        FeatureSpace {
            columns: names.into_iter().enumerate().map(|(i, n)| (n.clone(), i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Unknown names are dropped.
    pub fn vectorize(&self, f: &NamedFeatures) -> SparseVec {
        let mut v: SparseVec = f.iter().filter_map(|(k, &x)| self.columns.get(k).map(|&c| (c, x))).collect();
        v.sort_by_key(|e| e.0);
        v
    }
}

/// Repeat every non-NEGATIVE example `factor` times in total.
pub fn oversample(x: &[SparseVec], y: &[String], factor: usize) -> (Vec<SparseVec>, Vec<String>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (xi, yi) in x.iter().zip(y) {
        let reps = if yi == NEGATIVE { 1 } else { factor.max(1) };
        for _ in 0..reps {
            xs.push(xi.clone());
            ys.push(yi.clone());
        }
    }
    (xs, ys)
}

/// Micro P/R/F1 over non-NEGATIVE labels of parallel prediction lists.
pub fn label_prf(pred: &[String], gold: &[String]) -> PrfReport {
    let items = |labels: &[String]| {
        labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.as_str() != NEGATIVE)
            .map(|(i, l)| (l.clone(), i))
            .collect::<Vec<_>>()
    };
    PrfReport::from_items(items(pred), items(gold), Average::Micro)
}

/// One training/evaluation split for [`grid_search_c`].
pub struct GridFold<'a> {
    pub train_x: &'a [SparseVec],
    pub train_y: &'a [String],
    pub dev_x: &'a [SparseVec],
    pub dev_y: &'a [String],
}

/// Pick `C` by fold-averaged micro-F1; ties keep the smaller value.
pub fn grid_search_c(
    folds: &[GridFold<'_>],
    grid: &[f64],
    base: &SvmConfig,
    feature_count: usize,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() || folds.is_empty() {
        return Err(Error::Argument("grid search needs at least one C value and one fold".into()));
    }
    let mut scores = Vec::new();
    for &c in grid {
        let cfg = SvmConfig { c, ..base.clone() };
        let mut total = 0.0;
        for fold in folds {
            let model = svm_train(fold.train_x, fold.train_y, &cfg, feature_count)?;
            let pred: Vec<String> = fold.dev_x.iter().map(|x| svm_predict(&model, x).0).collect();
            total += label_prf(&pred, fold.dev_y).f1;
        }
        let mean = total / folds.len() as f64;
        log::info!("C = {c}: mean F1 {mean:.4}");
        scores.push((c, mean));
    }
    let mut best = scores[0];
    for &(c, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && c < best.0) {
            best = (c, s);
        }
    }
    Ok((best.0, scores))
}

/// Per-candidate majority over fold models; without a majority the first
/// (confident) fold decides.
pub fn ensemble_vote_relations<K: PartialEq + Clone>(per_fold: &[Vec<(K, String)>]) -> Result<Vec<(K, String)>> {
    let Some(first) = per_fold.first() else {
        return Ok(Vec::new());
    };
    for (f, preds) in per_fold.iter().enumerate().skip(1) {
        if preds.len() != first.len() || preds.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(Error::Argument(format!("fold {} scored a different candidate list", f + 1)));
        }
    }
    Ok(first
        .iter()
        .enumerate()
        .map(|(i, (key, confident))| {
            let labels: Vec<&String> = per_fold.iter().map(|p| &p[i].1).collect();
            let count = |l: &String| labels.iter().filter(|x| **x == l).count();
            let best = labels.iter().map(|l| count(l)).max().unwrap_or(0);
            let label = if count(confident) == best {
                confident.clone()
            } else {
                // fold order among the tied labels
                labels.iter().find(|l| count(l) == best).map_or_else(|| confident.clone(), |l| l.to_string())
            };
            (key.clone(), label)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_brat, whitespace_tokens};

    fn schema() -> RelationSchema {
        RelationSchema::parse("Gene\tProtein\tBinds_To\n# comment\nProtein Protein Interacts_With Agent Target\n".as_bytes()).unwrap()
    }

    fn doc(text: &str, ann: &str) -> Document {
        let mut d = parse_brat("d", text, ann).unwrap();
        d.sentences = vec![whitespace_tokens(text)];
        d
    }

    #[test]
    fn schema_parsing() {
        let s = schema();
        assert_eq!(s.relation_types().len(), 2);
        assert_eq!(s.roles_of("Interacts_With"), ("Agent", "Target"));
        assert_eq!(s.roles_of("Binds_To"), ("Arg1", "Arg2"));
        assert!(RelationSchema::parse("a b\n".as_bytes()).is_err());
    }

    #[test]
    fn distance_filter_and_validity() {
        let mut text = String::from("G1");
        for _ in 0..25 {
            text.push_str(" x");
        }
        text.push_str(" P1 G2");
        let ann = format!("T1\tGene 0 2\tG1\nT2\tProtein {} {}\tP1\nT3\tOther {} {}\tG2\n", 53, 55, 56, 58);
        let d = doc(&text, &ann);
        let c20 = generate_candidates(&d, &schema(), 20, CandidateMode::Eval);
        // G1→P1 is 25 tokens apart; no combo involves Other.
        assert!(c20.candidates.is_empty());
        let c30 = generate_candidates(&d, &schema(), 30, CandidateMode::Eval);
        assert_eq!(c30.candidates.len(), 1);
    }

    #[test]
    fn train_mode_negatives() {
        let text = "G1 binds P1 . G2 and P2";
        let ann = "T1\tGene 0 2\tG1\nT2\tProtein 9 11\tP1\nT3\tGene 14 16\tG2\nT4\tProtein 21 23\tP2\nR1\tBinds_To Arg1:T1 Arg2:T2\n";
        let mut d = parse_brat("d", text, ann).unwrap();
        let toks = whitespace_tokens(text);
        d.sentences = vec![toks[..4].to_vec(), toks[4..].to_vec()];
        let train = generate_candidates(&d, &schema(), 20, CandidateMode::Train);
        let labels: Vec<&str> = train.candidates.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, ["Binds_To", NEGATIVE]);
        assert_eq!(train.candidates[1].sentence, 1);
        let eval = generate_candidates(&d, &schema(), 20, CandidateMode::Eval);
        assert_eq!(eval.candidates.len(), 2);
    }

    #[test]
    fn adjacent_pair_features() {
        let d = doc("G1 P1 here", "T1\tGene 0 2\tG1\nT2\tProtein 3 5\tP1\n");
        let c = &generate_candidates(&d, &schema(), 20, CandidateMode::Eval).candidates[0];
        let f = featurize_pair(c, &d, &FeatureContext::default());
        assert_eq!(f.get("dist"), None);
        assert_eq!(f["dist_cat=0"], 1.0);
        assert!(!f.keys().any(|k| k.starts_with("between=")));
        assert!(!f.contains_key("same_type"));
        let d = doc("P1 P2", "T1\tProtein 0 2\tP1\nT2\tProtein 3 5\tP2\n");
        let c = &generate_candidates(&d, &schema(), 20, CandidateMode::Eval).candidates[0];
        assert_eq!(featurize_pair(c, &d, &FeatureContext::default())["same_type"], 1.0);
    }

    #[test]
    fn voting() {
        let v = |labels: [&str; 3]| {
            let folds: Vec<Vec<(usize, String)>> = labels.iter().map(|l| vec![(0, l.to_string())]).collect();
            ensemble_vote_relations(&folds).unwrap()[0].1.clone()
        };
        assert_eq!(v(["R", "R", NEGATIVE]), "R");
        assert_eq!(v([NEGATIVE, "R", "R"]), "R");
        assert_eq!(v(["R1", "R2", "R3"]), "R1");
        assert_eq!(v(["R", "R", "R"]), "R");
        let bad = vec![vec![(0, "R".to_string())], vec![(1, "R".to_string())]];
        assert!(ensemble_vote_relations(&bad).is_err());
    }
}
