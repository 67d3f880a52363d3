//! Dictionary tagging of a sentence and its union with tagger output.

use bioext::corpus::{whitespace_tokens, Concept};
use bioext::normalize::{brute_force_tag, DictionaryMatcher, NormalizerConfig, OntologyIndex};
use bioext::tags::{aggregate_spans, AggregateMode, SpanSet, TokenSpan};

fn concept(id: &str, name: &str, ty: &str) -> Concept {
    let mut c = Concept::new(id, name);
    c.entity_type = Some(ty.to_string());
    c
}

fn main() -> bioext::Result<()> {
    let cfg = NormalizerConfig::default();
    let taxa = OntologyIndex::build(
        "NCBI_Taxonomy",
        vec![concept("662", "Vibrio", "Microorganism"), concept("80854", "Vibrio salmonicida", "Microorganism")],
        cfg.clone(),
        None,
    )?;
    let habitats = OntologyIndex::build("OntoBiotope", vec![concept("OBT:000001", "fish farm", "Habitat")], cfg, None)?;
    let matchers = [DictionaryMatcher::new(&taxa, None), DictionaryMatcher::new(&habitats, None)];

    let tokens = whitespace_tokens("Vibrio salmonicida was isolated in a Fish Farm in Norway .");
    let hits = brute_force_tag(&tokens, &matchers);
    for m in &hits {
        println!("{} -> {}:{}", m.span, m.resource, m.id);
    }

    // pretend a tagger found "Norway" as a habitat
    let tagger: SpanSet = [TokenSpan::new(9, 9, "Habitat")].into_iter().collect();
    let dictionary: SpanSet = hits.into_iter().map(|m| m.span).collect();
    for s in aggregate_spans(&[tagger, dictionary], AggregateMode::Union) {
        println!("union: {s}");
    }
    Ok(())
}
