//! Precision/recall/F1 with strict matching and slot error rate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::{decode_spans, Scheme, TagSequence};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub average: Average,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Pooled over every type.
    pub counts: Counts,
    pub per_type: BTreeMap<String, Counts>,
}

impl PrfReport {
    /// Score `pred` against `gold`, both given as `(type, key)` items where
    /// the key carries everything that must match exactly.
    pub fn from_items<K: Ord>(pred: Vec<(String, K)>, gold: Vec<(String, K)>, average: Average) -> PrfReport {
        let pred: BTreeSet<(String, K)> = pred.into_iter().collect();
        let gold: BTreeSet<(String, K)> = gold.into_iter().collect();
        let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
        for item in &pred {
            let c = per_type.entry(item.0.clone()).or_default();
            if gold.contains(item) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for item in gold.difference(&pred) {
            per_type.entry(item.0.clone()).or_default().fn_ += 1;
        }
        let mut counts = Counts::default();
        for c in per_type.values() {
            counts.tp += c.tp;
            counts.fp += c.fp;
            counts.fn_ += c.fn_;
        }
        let (precision, recall, f1) = match average {
            Average::Micro => (counts.precision(), counts.recall(), counts.f1()),
            Average::Macro if per_type.is_empty() => (0.0, 0.0, 0.0),
            Average::Macro => {
                let n = per_type.len() as f64;
                let mean = |f: fn(&Counts) -> f64| per_type.values().map(f).sum::<f64>() / n;
                (mean(Counts::precision), mean(Counts::recall), mean(Counts::f1))
            }
        };
        PrfReport {
            average,
            precision,
            recall,
            f1,
            counts,
            per_type,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<24} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}\n", "type", "tp", "fp", "fn", "P", "R", "F1");
        for (t, c) in &self.per_type {
            let _ = writeln!(
                out,
                "{t:<24} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f1()
            );
        }
        let label = match self.average {
            Average::Micro => "micro",
            Average::Macro => "macro",
        };
        let _ = writeln!(
            out,
            "{label:<24} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            self.counts.tp, self.counts.fp, self.counts.fn_, self.precision, self.recall, self.f1
        );
        out
    }

    pub fn to_key_values(&self, prefix: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{prefix}.precision={}", self.precision);
        let _ = writeln!(out, "{prefix}.recall={}", self.recall);
        let _ = writeln!(out, "{prefix}.f1={}", self.f1);
        let _ = writeln!(out, "{prefix}.tp={}", self.counts.tp);
        let _ = writeln!(out, "{prefix}.fp={}", self.counts.fp);
        let _ = writeln!(out, "{prefix}.fn={}", self.counts.fn_);
        for (t, c) in &self.per_type {
            let _ = writeln!(out, "{prefix}.type.{t}.f1={}", c.f1());
        }
        out
    }
}

/// A character-offset entity for scoring.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvalSpan {
    pub doc_id: String,
    pub char_start: usize,
    pub char_end: usize,
    pub entity_type: String,
    pub norm_id: Option<String>,
}

impl EvalSpan {
    pub fn new(doc_id: &str, char_start: usize, char_end: usize, entity_type: &str) -> Self {
        EvalSpan {
            doc_id: doc_id.to_string(),
            char_start,
            char_end,
            entity_type: entity_type.to_string(),
            norm_id: None,
        }
    }

    pub fn with_norm(mut self, id: &str) -> Self {
        self.norm_id = Some(id.to_string());
        self
    }
}

/// Strict span scoring: offsets and type must be identical.
pub fn span_prf(pred: &[EvalSpan], gold: &[EvalSpan], average: Average) -> PrfReport {
    let key = |s: &EvalSpan| (s.entity_type.clone(), (s.doc_id.clone(), s.char_start, s.char_end));
    PrfReport::from_items(pred.iter().map(key).collect(), gold.iter().map(key).collect(), average)
}

/// Strict span scoring over parallel tag sequences (one per sentence).
pub fn tag_prf(pred: &[TagSequence], gold: &[TagSequence], scheme: Scheme, average: Average) -> PrfReport {
    let items = |seqs: &[TagSequence]| {
        seqs.iter()
            .enumerate()
            .flat_map(|(i, tags)| {
                decode_spans(tags, scheme)
                    .into_iter()
                    .map(move |s| (s.entity_type.clone(), (i, s.start, s.end)))
            })
            .collect::<Vec<_>>()
    };
    PrfReport::from_items(items(pred), items(gold), average)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvalRelation {
    pub doc_id: String,
    pub rel_type: String,
    pub arg1: (usize, usize),
    pub arg2: (usize, usize),
}

/// Micro P/R/F1 over `(doc, type, arg1, arg2)` tuples.
pub fn relation_prf(pred: &[EvalRelation], gold: &[EvalRelation]) -> PrfReport {
    let key = |r: &EvalRelation| (r.rel_type.clone(), (r.doc_id.clone(), r.arg1, r.arg2));
    PrfReport::from_items(pred.iter().map(key).collect(), gold.iter().map(key).collect(), Average::Micro)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SerConfig {
    /// Score of a matched pair whose identifiers differ.
    pub w_norm: f64,
}

impl Default for SerConfig {
    fn default() -> Self {
        SerConfig { w_norm: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SerReport {
    pub substitutions: f64,
    pub insertions: usize,
    pub deletions: usize,
    pub reference: usize,
    pub ser: f64,
}

impl SerReport {
    pub fn to_table(&self) -> String {
        format!(
            "{:>10} {:>10} {:>10} {:>10} {:>8}\n{:>10.4} {:>10} {:>10} {:>10} {:>8.4}\n",
            "S", "I", "D", "N", "SER", self.substitutions, self.insertions, self.deletions, self.reference, self.ser
        )
    }

    pub fn to_key_values(&self, prefix: &str) -> String {
        format!(
            "{prefix}.substitutions={}\n{prefix}.insertions={}\n{prefix}.deletions={}\n{prefix}.reference={}\n{prefix}.ser={}\n",
            self.substitutions, self.insertions, self.deletions, self.reference, self.ser
        )
    }
}

fn jaccard(a: &EvalSpan, b: &EvalSpan) -> f64 {
    let inter = a.char_end.min(b.char_end).saturating_sub(a.char_start.max(b.char_start));
    let union = a.char_end.max(b.char_end) - a.char_start.min(b.char_start);
    if inter == 0 || union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pair score: character Jaccard × type match × identifier agreement.
pub fn pair_score(gold: &EvalSpan, pred: &EvalSpan, cfg: &SerConfig) -> f64 {
    if gold.doc_id != pred.doc_id || gold.entity_type != pred.entity_type {
        return 0.0;
    }
    let norm = if gold.norm_id == pred.norm_id { 1.0 } else { cfg.w_norm };
    jaccard(gold, pred) * norm
}

/// Above this many cells the assignment falls back to greedy matching.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 500 * 500;

/// Maximum-weight assignment of rows to columns; `None` for unassigned rows.
pub fn max_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = weights.len();
    let m = weights.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| weights[i][j]).collect()).collect();
        let cols = max_assignment(&t);
        let mut out = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return out;
    }
    if n * m > EXACT_ASSIGNMENT_LIMIT {
        return greedy_assignment(weights);
    }
    hungarian(weights)
}

fn greedy_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let mut cells: Vec<(usize, usize)> = (0..weights.len())
        .flat_map(|i| (0..weights[i].len()).map(move |j| (i, j)))
        .filter(|&(i, j)| weights[i][j] > 0.0)
        .collect();
    cells.sort_by(|a, b| weights[b.0][b.1].total_cmp(&weights[a.0][a.1]).then(a.cmp(b)));
    let mut out = vec![None; weights.len()];
    let mut used = vec![false; weights[0].len()];
    for (i, j) in cells {
        if out[i].is_none() && !used[j] {
            out[i] = Some(j);
            used[j] = true;
        }
    }
    out
}

/// Shortest augmenting path assignment with potentials, `n ≤ m`.
fn hungarian(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = weights.len();
    let m = weights[0].len();
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Slot error rate with an optimal one-to-one matching per document.
pub fn ser(pred: &[EvalSpan], gold: &[EvalSpan], cfg: &SerConfig) -> Result<SerReport> {
    if gold.is_empty() {
        return Err(Error::Argument("SER is undefined without reference entities".into()));
    }
    let mut docs: BTreeMap<&str, (Vec<&EvalSpan>, Vec<&EvalSpan>)> = BTreeMap::new();
    for g in gold {
        docs.entry(&g.doc_id).or_default().0.push(g);
    }
    for p in pred {
        docs.entry(&p.doc_id).or_default().1.push(p);
    }
    let mut s_total = 0.0;
    let mut matched = 0usize;
    for (gs, ps) in docs.values() {
        if gs.is_empty() || ps.is_empty() {
            continue;
        }
        // Sort so the outcome does not depend on input order.
        let mut gs = gs.clone();
        let mut ps = ps.clone();
        gs.sort();
        ps.sort();
        let scores: Vec<Vec<f64>> = gs.iter().map(|g| ps.iter().map(|p| pair_score(g, p, cfg)).collect()).collect();
        // A positive pair is worth one error less than leaving both sides
        // unmatched, so ties in total score prefer more matches.
        let weights: Vec<Vec<f64>> = scores
            .iter()
            .map(|row| row.iter().map(|&s| if s > 0.0 { s + 1.0 } else { 0.0 }).collect())
            .collect();
        for (i, j) in max_assignment(&weights).into_iter().enumerate() {
            if let Some(j) = j {
                if scores[i][j] > 0.0 {
                    s_total += 1.0 - scores[i][j];
                    matched += 1;
                }
            }
        }
    }
    let insertions = pred.len() - matched;
    let deletions = gold.len() - matched;
    Ok(SerReport {
        substitutions: s_total,
        insertions,
        deletions,
        reference: gold.len(),
        ser: (s_total + insertions as f64 + deletions as f64) / gold.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_empty() {
        let gold = vec![EvalSpan::new("d", 0, 4, "H"), EvalSpan::new("d", 5, 9, "M")];
        let r = span_prf(&gold, &gold, Average::Macro);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = span_prf(&[], &gold, Average::Micro);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn macro_vs_micro_six_spans() {
        // H: 3 gold, all found. M: 1 gold missed, 2 spurious.
        let gold = vec![
            EvalSpan::new("d", 0, 1, "H"),
            EvalSpan::new("d", 2, 3, "H"),
            EvalSpan::new("d", 4, 5, "H"),
            EvalSpan::new("d", 6, 7, "M"),
        ];
        let mut pred = gold[..3].to_vec();
        pred.push(EvalSpan::new("d", 8, 9, "M"));
        pred.push(EvalSpan::new("d", 10, 11, "M"));
        let macro_r = span_prf(&pred, &gold, Average::Macro);
        assert_eq!(macro_r.f1, 0.5);
        let micro = span_prf(&pred, &gold, Average::Micro);
        // tp 3, fp 2, fn 1: P 3/5, R 3/4, F1 2/3.
        assert!((micro.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn relations_with_spurious() {
        let rel = |i: usize| EvalRelation {
            doc_id: "d".into(),
            rel_type: "Lives_In".into(),
            arg1: (i, i + 1),
            arg2: (i + 2, i + 3),
        };
        let gold: Vec<_> = (0..8).map(|i| rel(i * 10)).collect();
        let mut pred = gold[..6].to_vec();
        pred.push(rel(1000));
        let r = relation_prf(&pred, &gold);
        assert_eq!(r.precision, 6.0 / 7.0);
        assert_eq!(r.recall, 6.0 / 8.0);
    }

    #[test]
    fn ser_cases() {
        let cfg = SerConfig::default();
        let gold = vec![EvalSpan::new("d", 0, 4, "H").with_norm("OBT:1")];
        assert_eq!(ser(&gold, &gold, &cfg).unwrap().ser, 0.0);
        assert_eq!(ser(&[], &gold, &cfg).unwrap().ser, 1.0);
        let half = vec![EvalSpan::new("d", 2, 4, "H").with_norm("OBT:1")];
        assert_eq!(ser(&half, &gold, &cfg).unwrap().ser, 0.5);
        assert!(ser(&gold, &[], &cfg).is_err());
    }

    #[test]
    fn hungarian_beats_greedy() {
        let w = vec![vec![0.9, 0.8], vec![0.85, 0.0]];
        assert_eq!(max_assignment(&w), vec![Some(1), Some(0)]);
        assert_eq!(greedy_assignment(&w), vec![Some(0), None]);
        let tall = vec![vec![0.1], vec![0.7], vec![0.3]];
        assert_eq!(max_assignment(&tall), vec![None, Some(0), None]);
    }
}
