//! Two-level nested entity recognition.
//!
//! Level 1 tags the outermost entities of a sentence. Every predicted parent
//! is then re-tagged in isolation by a Level 2 model trained on the inner
//! entities of gold parents. Only one level of nesting is produced.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Span, Token};
use crate::error::{Error, Result};
use crate::tagger::{train, LabeledSentence, SequenceTagger, TaggerConfig, TaggerModel, TrainReport, MODEL_SCHEME};
use crate::tags::{decode_spans, encode, outermost, SpanSet, TokenSpan};

/// Gold spans of sentence `si` as token spans. Spans not contained in the
/// sentence are skipped.
pub fn sentence_token_spans(doc: &Document, si: usize) -> Vec<(TokenSpan, &Span)> {
    let sent = &doc.sentences[si];
    doc.gold_spans
        .iter()
        .filter(|s| doc.sentence_of(s) == Some(si))
        .filter_map(|s| Document::token_range(sent, s).map(|(a, b)| (TokenSpan::new(a, b, &s.entity_type), s)))
        .collect()
}

/// One instance per sentence, labelled with its outermost gold spans.
pub fn level1_instances(docs: &[Document]) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    for doc in docs {
        for (si, tokens) in doc.sentences.iter().enumerate() {
            let spans: SpanSet = sentence_token_spans(doc, si).into_iter().map(|(t, _)| t).collect();
            out.push(LabeledSentence {
                tokens: tokens.clone(),
                tags: encode(&outermost(&spans), tokens.len(), MODEL_SCHEME)?,
            });
        }
    }
    Ok(out)
}

/// Token sub-sequences of gold parents holding at least one strictly inner
/// gold span, labelled with those inner spans (outermost first when they
/// overlap each other).
pub fn level2_instances(docs: &[Document]) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    for doc in docs {
        for (si, tokens) in doc.sentences.iter().enumerate() {
            let spans: SpanSet = sentence_token_spans(doc, si).into_iter().map(|(t, _)| t).collect();
            for parent in &spans {
                let inner: SpanSet = spans
                    .iter()
                    .filter(|s| s.strictly_within(parent))
                    .map(|s| TokenSpan::new(s.start - parent.start, s.end - parent.start, &s.entity_type))
                    .collect();
                if inner.is_empty() {
                    continue;
                }
                let sub = tokens[parent.start..=parent.end].to_vec();
                out.push(LabeledSentence {
                    tags: encode(&outermost(&inner), sub.len(), MODEL_SCHEME)?,
                    tokens: sub,
                });
            }
        }
    }
    Ok(out)
}

/// Train the Level 2 model. Auxiliary objectives are always disabled.
pub fn train_level2(
    train_docs: &[Document],
    dev_docs: &[Document],
    mut config: TaggerConfig,
    extra_words: impl IntoIterator<Item = String>,
) -> Result<(TaggerModel, TrainReport)> {
    let instances = level2_instances(train_docs)?;
    if instances.is_empty() {
        return Err(Error::Training(
            "training corpus has no nested entities; disable the nested level".into(),
        ));
    }
    let dev = level2_instances(dev_docs)?;
    config.multitask = false;
    let model = TaggerModel::new(config, &instances, extra_words, None)?;
    train(model, &instances, &dev)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NestedPrediction {
    pub parents: SpanSet,
    /// Inner spans per parent, relative to the parent's first token.
    pub nested: Vec<(TokenSpan, SpanSet)>,
}

impl NestedPrediction {
    /// Parents and inner spans in sentence coordinates.
    pub fn spans(&self) -> SpanSet {
        let mut out = self.parents.clone();
        for (parent, inner) in &self.nested {
            for s in inner {
                out.insert(TokenSpan::new(s.start + parent.start, s.end + parent.start, &s.entity_type));
            }
        }
        out
    }
}

/// Level 1 spans plus the Level 2 spans found inside each of them.
pub fn predict_nested(level1: &dyn SequenceTagger, level2: &dyn SequenceTagger, tokens: &[Token]) -> NestedPrediction {
    let parents = decode_spans(&level1.tag(tokens), MODEL_SCHEME);
    let mut nested = Vec::new();
    for parent in &parents {
        let sub = &tokens[parent.start..=parent.end];
        let inner: SpanSet = decode_spans(&level2.tag(sub), MODEL_SCHEME)
            .into_iter()
            .filter(|s| !(s.start == 0 && s.end + 1 == sub.len()))
            .collect();
        if !inner.is_empty() {
            nested.push((parent.clone(), inner));
        }
    }
    NestedPrediction { parents, nested }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_brat, whitespace_tokens};
    use std::cell::Cell;

    struct Fixed(Vec<(usize, Vec<&'static str>)>, Cell<usize>);

    impl SequenceTagger for Fixed {
        fn tag(&self, tokens: &[Token]) -> Vec<String> {
            self.1.set(self.1.get() + 1);
            let tags = self
                .0
                .iter()
                .find(|(n, _)| *n == tokens.len())
                .map(|(_, t)| t.clone())
                .unwrap_or_else(|| vec!["O"; tokens.len()]);
            tags.into_iter().map(String::from).collect()
        }
    }

    fn fixed(rules: Vec<(usize, Vec<&'static str>)>) -> Fixed {
        Fixed(rules, Cell::new(0))
    }

    fn doc() -> Document {
        let text = "fish pathogen Vibrio";
        let ann = "T1\tPhenotype 0 13\tfish pathogen\nT2\tHabitat 0 4\tfish\nT3\tMicroorganism 14 20\tVibrio\n";
        let mut d = parse_brat("d", text, ann).unwrap();
        d.sentences = vec![whitespace_tokens(text)];
        d
    }

    #[test]
    fn level2_instance_from_parent() {
        let inst = level2_instances(&[doc()]).unwrap();
        assert_eq!(inst.len(), 1);
        let words: Vec<&str> = inst[0].tokens.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(words, ["fish", "pathogen"]);
        assert_eq!(inst[0].tags, ["S-Habitat", "O"]);
        let l1 = level1_instances(&[doc()]).unwrap();
        assert_eq!(l1[0].tags, ["B-Phenotype", "E-Phenotype", "S-Microorganism"]);
    }

    #[test]
    fn no_nested_entities_is_an_error() {
        let mut d = doc();
        d.gold_spans.retain(|s| s.ann_id != "T2");
        let err = train_level2(&[d], &[], TaggerConfig::default(), []).unwrap_err();
        assert!(err.to_string().contains("nested"));
    }

    #[test]
    fn offsets_and_short_circuit() {
        let tokens = whitespace_tokens("fish pathogen here");
        let l1 = fixed(vec![(3, vec!["B-Phenotype", "E-Phenotype", "O"])]);
        let l2 = fixed(vec![(2, vec!["S-Habitat", "O"])]);
        let p = predict_nested(&l1, &l2, &tokens);
        let expected: SpanSet = [TokenSpan::new(0, 1, "Phenotype"), TokenSpan::new(0, 0, "Habitat")].into_iter().collect();
        assert_eq!(p.spans(), expected);

        let none = fixed(vec![]);
        let l2 = fixed(vec![]);
        assert!(predict_nested(&none, &l2, &tokens).spans().is_empty());
        assert_eq!(l2.1.get(), 0);
    }

    #[test]
    fn inner_equal_to_parent_is_dropped() {
        let tokens = whitespace_tokens("fish pathogen");
        let l1 = fixed(vec![(2, vec!["B-Phenotype", "E-Phenotype"])]);
        let l2 = fixed(vec![(2, vec!["B-Habitat", "E-Habitat"])]);
        let p = predict_nested(&l1, &l2, &tokens);
        assert_eq!(p.spans().len(), 1);
    }
}
