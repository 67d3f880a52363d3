//! Tag-sequence algebra: IOBES / BIO encoding, boundary repair, ensemble
//! voting and span aggregation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One label per token, e.g. `["O", "B-Habitat", "E-Habitat"]`.
pub type TagSequence = Vec<String>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Iobes,
    Bio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prefix {
    B,
    I,
    E,
    S,
}

impl Prefix {
    fn as_char(self) -> char {
        match self {
            Prefix::B => 'B',
            Prefix::I => 'I',
            Prefix::E => 'E',
            Prefix::S => 'S',
        }
    }
}

/// Parsed label. `None` for `O`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag<'a> {
    pub prefix: Prefix,
    pub entity_type: &'a str,
}

/// Parse a label. Anything that is not `O` or `<B|I|E|S>-<type>` is an error.
pub fn parse_tag(label: &str) -> Result<Option<Tag<'_>>> {
    if label == "O" {
        return Ok(None);
    }
    let (p, t) = label
        .split_once('-')
        .filter(|(_, t)| !t.is_empty())
        .ok_or_else(|| Error::Encoding(format!("label `{label}` is neither O nor <prefix>-<type>")))?;
    let prefix = match p {
        "B" => Prefix::B,
        "I" => Prefix::I,
        "E" => Prefix::E,
        "S" => Prefix::S,
        _ => return Err(Error::Encoding(format!("unknown prefix in `{label}`"))),
    };
    Ok(Some(Tag { prefix, entity_type: t }))
}

/// Lenient parse used by the total functions: bad labels read as `O`.
fn lenient(label: &str) -> Option<Tag<'_>> {
    parse_tag(label).ok().flatten()
}

fn format_tag(prefix: Prefix, entity_type: &str) -> String {
    format!("{}-{}", prefix.as_char(), entity_type)
}

/// Entity type of a label (`None` for `O`).
pub fn tag_type(label: &str) -> Option<&str> {
    lenient(label).map(|t| t.entity_type)
}

/// Token span, both ends inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize, entity_type: &str) -> Self {
        TokenSpan {
            start,
            end,
            entity_type: entity_type.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    /// Strictly inside `outer`: contained and not equal as a range.
    pub fn strictly_within(&self, outer: &TokenSpan) -> bool {
        outer.start <= self.start && self.end <= outer.end && (self.start, self.end) != (outer.start, outer.end)
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.start, self.end, self.entity_type)
    }
}

pub type SpanSet = BTreeSet<TokenSpan>;

/// Encode non-overlapping spans as a tag sequence of length `n_tokens`.
pub fn encode(spans: &SpanSet, n_tokens: usize, scheme: Scheme) -> Result<TagSequence> {
    let mut tags: TagSequence = vec!["O".to_string(); n_tokens];
    let mut owner: Vec<Option<&TokenSpan>> = vec![None; n_tokens];
    for span in spans {
        if span.start > span.end || span.end >= n_tokens {
            return Err(Error::Encoding(format!("span {span} outside {n_tokens} tokens")));
        }
        for i in span.start..=span.end {
            if let Some(other) = owner[i] {
                return Err(Error::Encoding(format!("spans {other} and {span} overlap at token {i}")));
            }
            owner[i] = Some(span);
        }
        let t = &span.entity_type;
        match scheme {
            Scheme::Iobes if span.start == span.end => tags[span.start] = format_tag(Prefix::S, t),
            Scheme::Iobes => {
                tags[span.start] = format_tag(Prefix::B, t);
                for tag in &mut tags[span.start + 1..span.end] {
                    *tag = format_tag(Prefix::I, t);
                }
                tags[span.end] = format_tag(Prefix::E, t);
            }
            Scheme::Bio => {
                tags[span.start] = format_tag(Prefix::B, t);
                for tag in &mut tags[span.start + 1..=span.end] {
                    *tag = format_tag(Prefix::I, t);
                }
            }
        }
    }
    Ok(tags)
}

/// Shorthand for [`encode`] with IOBES.
pub fn encode_iobes(spans: &SpanSet, n_tokens: usize) -> Result<TagSequence> {
    encode(spans, n_tokens, Scheme::Iobes)
}

/// Make `tags` a valid sequence under `scheme` by editing prefixes only.
///
/// An I/E continues an entity only when the previous token carries the same
/// type with an open prefix (B or I); otherwise it begins one. A token ends
/// its entity when its own prefix closes it (E/S), the next token has a
/// different type, or the next token begins a new entity.
pub fn repair_boundaries(tags: &[String], scheme: Scheme) -> TagSequence {
    let parsed: Vec<Option<Tag<'_>>> = tags
        .iter()
        .map(|l| {
            lenient(l).map(|t| match scheme {
                Scheme::Iobes => t,
                // E/S have no meaning in BIO
                Scheme::Bio => Tag {
                    prefix: match t.prefix {
                        Prefix::S => Prefix::B,
                        Prefix::E => Prefix::I,
                        p => p,
                    },
                    entity_type: t.entity_type,
                },
            })
        })
        .collect();
    let n = parsed.len();
    let begins: Vec<bool> = (0..n)
        .map(|i| match &parsed[i] {
            None => false,
            Some(t) => {
                matches!(t.prefix, Prefix::B | Prefix::S)
                    || i == 0
                    || match &parsed[i - 1] {
                        Some(prev) => {
                            prev.entity_type != t.entity_type || !matches!(prev.prefix, Prefix::B | Prefix::I)
                        }
                        None => true,
                    }
            }
        })
        .collect();
    (0..n)
        .map(|i| match &parsed[i] {
            None => "O".to_string(),
            Some(t) => {
                let ends = matches!(t.prefix, Prefix::E | Prefix::S)
                    || i + 1 == n
                    || begins[i + 1]
                    || parsed[i + 1].as_ref().map(|x| x.entity_type) != Some(t.entity_type);
                let prefix = match (scheme, begins[i], ends) {
                    (Scheme::Bio, true, _) => Prefix::B,
                    (Scheme::Bio, false, _) => Prefix::I,
                    (Scheme::Iobes, true, true) => Prefix::S,
                    (Scheme::Iobes, true, false) => Prefix::B,
                    (Scheme::Iobes, false, true) => Prefix::E,
                    (Scheme::Iobes, false, false) => Prefix::I,
                };
                format_tag(prefix, t.entity_type)
            }
        })
        .collect()
}

/// Whether `tags` is already valid under `scheme`.
pub fn is_valid(tags: &[String], scheme: Scheme) -> bool {
    tags.iter().all(|t| parse_tag(t).is_ok()) && repair_boundaries(tags, scheme) == tags
}

/// Spans of a tag sequence; invalid input is repaired first.
pub fn decode_spans(tags: &[String], scheme: Scheme) -> SpanSet {
    let fixed = repair_boundaries(tags, scheme);
    let mut out = SpanSet::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, label) in fixed.iter().enumerate() {
        let Some(t) = lenient(label) else { continue };
        if matches!(t.prefix, Prefix::B | Prefix::S) {
            open = Some((i, t.entity_type));
        }
        let closes = match scheme {
            Scheme::Iobes => matches!(t.prefix, Prefix::E | Prefix::S),
            Scheme::Bio => fixed
                .get(i + 1)
                .and_then(|l| lenient(l))
                .is_none_or(|next| next.prefix == Prefix::B || next.entity_type != t.entity_type),
        };
        if closes {
            if let Some((s, ty)) = open.take() {
                out.insert(TokenSpan::new(s, i, ty));
            }
        }
    }
    out
}

/// Token-level ensemble vote: the class (entity type, or O) is decided
/// first by majority, then the boundary prefix by majority among the models
/// that voted for that class. Ties at either stage go to the model at
/// `confident_index` when it took part in the tie, otherwise to the tied
/// option proposed by the earliest model. The result is repaired.
pub fn vote(tag_seqs: &[TagSequence], confident_index: usize, scheme: Scheme) -> Result<TagSequence> {
    Ok(repair_boundaries(&majority_vote(tag_seqs, confident_index)?, scheme))
}

/// The per-token vote of [`vote`] without the final repair; the output may
/// violate the scheme.
pub fn majority_vote(tag_seqs: &[TagSequence], confident_index: usize) -> Result<TagSequence> {
    let first = tag_seqs
        .first()
        .ok_or_else(|| Error::Argument("vote needs at least one tag sequence".into()))?;
    if confident_index >= tag_seqs.len() {
        return Err(Error::Argument(format!(
            "confident model {confident_index} out of range for {} models",
            tag_seqs.len()
        )));
    }
    let n = first.len();
    if let Some(bad) = tag_seqs.iter().position(|s| s.len() != n) {
        return Err(Error::Argument(format!(
            "sequence {bad} has length {}, expected {n}",
            tag_seqs[bad].len()
        )));
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let tags: Vec<Option<Tag<'_>>> = tag_seqs.iter().map(|s| lenient(&s[i])).collect();
        let classes: Vec<Option<&str>> = tags.iter().map(|t| t.as_ref().map(|t| t.entity_type)).collect();
        let class = majority(&classes, confident_index);
        let label = match class {
            None => "O".to_string(),
            Some(ty) => {
                let prefixes: Vec<Option<Prefix>> = tags
                    .iter()
                    .map(|t| t.as_ref().filter(|t| t.entity_type == ty).map(|t| t.prefix))
                    .collect();
                let pool: Vec<Prefix> = prefixes.iter().flatten().copied().collect();
                let best = majority_among(&prefixes, &pool, confident_index);
                format_tag(best, ty)
            }
        };
        out.push(label);
    }
    Ok(out)
}

/// Majority over `options` (one per model). Ties resolved as documented on
/// [`vote`].
fn majority<T: PartialEq + Copy>(options: &[T], confident: usize) -> T {
    let count = |v: &T| options.iter().filter(|o| *o == v).count();
    let best = options.iter().map(count).max().unwrap_or(0);
    let tied: Vec<T> = options.iter().copied().filter(|o| count(o) == best).collect();
    if tied.contains(&options[confident]) {
        options[confident]
    } else {
        tied[0]
    }
}

/// Like [`majority`] but only over models that voted (`Some`); `pool` is the
/// flattened list of their choices in model order.
fn majority_among(per_model: &[Option<Prefix>], pool: &[Prefix], confident: usize) -> Prefix {
    let count = |v: &Prefix| pool.iter().filter(|o| *o == v).count();
    let best = pool.iter().map(count).max().unwrap_or(0);
    match per_model[confident] {
        Some(p) if count(&p) == best => p,
        _ => *pool.iter().find(|p| count(p) == best).expect("at least one voter"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateMode {
    /// Plain set union; overlapping spans from different sources all survive.
    #[default]
    Union,
    /// Earlier sets win; a span overlapping an already-kept span is dropped.
    NonOverlapping,
}

/// Combine span sets from several sources over one sentence.
pub fn aggregate_spans(span_sets: &[SpanSet], mode: AggregateMode) -> SpanSet {
    match mode {
        AggregateMode::Union => span_sets.iter().flatten().cloned().collect(),
        AggregateMode::NonOverlapping => {
            let mut kept = SpanSet::new();
            for set in span_sets {
                for span in set {
                    if !kept.iter().any(|k| k.overlaps(span)) {
                        kept.insert(span.clone());
                    }
                }
            }
            kept
        }
    }
}

/// Greedy maximal non-overlapping subset, preferring longer then earlier
/// spans. Used to derive flat training targets from nested annotations.
pub fn outermost(spans: &SpanSet) -> SpanSet {
    let mut order: Vec<&TokenSpan> = spans.iter().collect();
    order.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let mut kept = SpanSet::new();
    for s in order {
        if !kept.iter().any(|k| k.overlaps(s)) {
            kept.insert(s.clone());
        }
    }
    kept
}

/// Type-collapsed version of a tag sequence (`B-Habitat` → `B`), used as the
/// detection target.
pub fn collapse_types(tags: &[String]) -> Vec<String> {
    tags.iter()
        .map(|l| match lenient(l) {
            None => "O".to_string(),
            Some(t) => t.prefix.as_char().to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> TagSequence {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn set(spans: &[(usize, usize, &str)]) -> SpanSet {
        spans.iter().map(|&(s, e, t)| TokenSpan::new(s, e, t)).collect()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_iobes(&SpanSet::new(), 3).unwrap(), seq("O O O"));
        assert_eq!(encode_iobes(&set(&[(1, 1, "Habitat")]), 3).unwrap(), seq("O S-Habitat O"));
        assert_eq!(
            encode_iobes(&set(&[(0, 1, "Habitat"), (2, 3, "Microorganism")]), 5).unwrap(),
            seq("B-Habitat E-Habitat B-Microorganism E-Microorganism O")
        );
        assert_eq!(
            encode(&set(&[(0, 2, "H")]), 3, Scheme::Bio).unwrap(),
            seq("B-H I-H I-H")
        );
    }

    #[test]
    fn encode_rejects_overlap() {
        let err = encode_iobes(&set(&[(0, 1, "H"), (1, 2, "P")]), 3).unwrap_err();
        assert!(err.to_string().contains("overlap"));
        assert!(encode_iobes(&set(&[(0, 3, "H")]), 3).is_err());
    }

    #[test]
    fn decode_examples() {
        assert!(decode_spans(&seq("O O"), Scheme::Iobes).is_empty());
        assert_eq!(decode_spans(&seq("B-H E-H"), Scheme::Iobes), set(&[(0, 1, "H")]));
        assert_eq!(repair_boundaries(&seq("I-H O"), Scheme::Iobes), seq("S-H O"));
        assert_eq!(decode_spans(&seq("I-H O"), Scheme::Iobes), set(&[(0, 0, "H")]));
        assert_eq!(decode_spans(&seq("B-H I-H O B-P"), Scheme::Bio), set(&[(0, 1, "H"), (3, 3, "P")]));
    }

    #[test]
    fn repair_rules() {
        // orphan I after O
        assert_eq!(repair_boundaries(&seq("O I-H I-H"), Scheme::Iobes), seq("O B-H E-H"));
        // type switch mid-entity
        assert_eq!(repair_boundaries(&seq("B-H I-P"), Scheme::Iobes), seq("S-H S-P"));
        assert_eq!(repair_boundaries(&seq("I-H I-P"), Scheme::Bio), seq("B-H B-P"));
        // dangling B at the end
        assert_eq!(repair_boundaries(&seq("O B-H"), Scheme::Iobes), seq("O S-H"));
        // B followed by B
        assert_eq!(repair_boundaries(&seq("B-H B-H E-H"), Scheme::Iobes), seq("S-H B-H E-H"));
        // unparseable labels read as O
        assert_eq!(repair_boundaries(&seq("junk S-H"), Scheme::Iobes), seq("O S-H"));
        let valid = seq("B-H I-H E-H O S-P");
        assert_eq!(repair_boundaries(&valid, Scheme::Iobes), valid);
    }

    #[test]
    fn vote_examples() {
        let v = vote(&[seq("I-H"), seq("I-P"), seq("I-P")], 0, Scheme::Bio).unwrap();
        assert_eq!(v, seq("B-P"));
        // three-way tie goes to the confident model, here with valid context
        let ctx = [seq("B-H I-H"), seq("O O"), seq("B-H I-M")];
        assert_eq!(vote(&ctx, 0, Scheme::Bio).unwrap(), seq("B-H I-H"));
        let same = [seq("B-H E-H O"), seq("B-H E-H O")];
        assert_eq!(vote(&same, 1, Scheme::Iobes).unwrap(), seq("B-H E-H O"));
        assert!(vote(&[seq("O"), seq("O O")], 0, Scheme::Iobes).is_err());
        assert!(vote(&[], 0, Scheme::Iobes).is_err());
        assert!(vote(&[seq("O")], 3, Scheme::Iobes).is_err());
    }

    #[test]
    fn boundary_tie_uses_confident_then_earliest() {
        // class H unanimous among 2 voters, prefixes tied
        let v = vote(&[seq("O B-H"), seq("O I-H"), seq("O O")], 2, Scheme::Bio).unwrap();
        assert_eq!(v, seq("O B-H"));
        let v = vote(&[seq("S-H"), seq("B-H"), seq("O")], 1, Scheme::Iobes).unwrap();
        // confident model picks B, repair closes it into S
        assert_eq!(v, seq("S-H"));
    }

    #[test]
    fn aggregate_modes() {
        let a = set(&[(0, 1, "H")]);
        let b = set(&[(1, 2, "M"), (4, 4, "H")]);
        assert_eq!(aggregate_spans(&[a.clone(), SpanSet::new()], AggregateMode::Union), a);
        assert_eq!(aggregate_spans(&[a.clone(), a.clone()], AggregateMode::Union), a);
        assert_eq!(aggregate_spans(&[a.clone(), b.clone()], AggregateMode::Union).len(), 3);
        assert_eq!(
            aggregate_spans(&[a, b], AggregateMode::NonOverlapping),
            set(&[(0, 1, "H"), (4, 4, "H")])
        );
    }

    #[test]
    fn outermost_prefers_longest() {
        let s = set(&[(0, 1, "P"), (0, 0, "H"), (3, 3, "M")]);
        assert_eq!(outermost(&s), set(&[(0, 1, "P"), (3, 3, "M")]));
    }

    #[test]
    fn collapse() {
        assert_eq!(collapse_types(&seq("B-H E-H O S-P")), seq("B E O S"));
    }

    fn arb_tags() -> impl Strategy<Value = TagSequence> {
        let label = prop_oneof![
            Just("O".to_string()),
            (0..4usize, 0..3usize).prop_map(|(p, t)| format!("{}-{}", ["B", "I", "E", "S"][p], ["H", "P", "M"][t])),
            Just("garbage".to_string()),
        ];
        proptest::collection::vec(label, 0..12)
    }

    proptest! {
        #[test]
        fn repair_idempotent_and_type_preserving(tags in arb_tags(), bio in any::<bool>()) {
            let scheme = if bio { Scheme::Bio } else { Scheme::Iobes };
            let once = repair_boundaries(&tags, scheme);
            prop_assert_eq!(&repair_boundaries(&once, scheme), &once);
            prop_assert!(is_valid(&once, scheme));
            for (a, b) in tags.iter().zip(&once) {
                prop_assert_eq!(tag_type(a), tag_type(b));
            }
        }

        #[test]
        fn single_model_vote_is_repair(tags in arb_tags()) {
            prop_assert_eq!(vote(std::slice::from_ref(&tags), 0, Scheme::Iobes).unwrap(),
                            repair_boundaries(&tags, Scheme::Iobes));
        }

        #[test]
        fn vote_only_proposed_types(a in arb_tags(), b in arb_tags(), c in arb_tags()) {
            let n = a.len().min(b.len()).min(c.len());
            let models = [a[..n].to_vec(), b[..n].to_vec(), c[..n].to_vec()];
            let v = vote(&models, 0, Scheme::Iobes).unwrap();
            for (i, label) in v.iter().enumerate() {
                if let Some(t) = tag_type(label) {
                    prop_assert!(models.iter().any(|m| tag_type(&m[i]) == Some(t)));
                }
            }
        }
    }
}
