//! Relation extraction: candidate pairs, named features, an RBF SVM and
//! prediction.

use bioext::corpus::{parse_brat, whitespace_tokens, Document};
use bioext::relation::{
    featurize_pair, generate_candidates, svm_predict, svm_train, CandidateMode, FeatureContext, FeatureSpace,
    RelationSchema, SvmConfig,
};

fn document(id: &str, text: &str, ann: &str) -> bioext::Result<Document> {
    let mut doc = parse_brat(id, text, ann)?;
    doc.sentences = vec![whitespace_tokens(text)];
    Ok(doc)
}

fn main() -> bioext::Result<()> {
    let schema = RelationSchema::parse("Microorganism Habitat Lives_In Microorganism Location\n".as_bytes())?;
    let train_docs = vec![
        document(
            "a",
            "Listeria lives in cheese but not in water",
            "T1\tMicroorganism 0 8\tListeria\nT2\tHabitat 18 24\tcheese\nT3\tHabitat 36 41\twater\nR1\tLives_In Microorganism:T1 Location:T2\n",
        )?,
        document(
            "b",
            "Vibrio lives in seawater",
            "T1\tMicroorganism 0 6\tVibrio\nT2\tHabitat 16 24\tseawater\nR1\tLives_In Microorganism:T1 Location:T2\n",
        )?,
        document(
            "c",
            "Bacillus was absent from soil",
            "T1\tMicroorganism 0 8\tBacillus\nT2\tHabitat 25 29\tsoil\n",
        )?,
    ];
    let ctx = FeatureContext::default();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for doc in &train_docs {
        for c in generate_candidates(doc, &schema, 20, CandidateMode::Train).candidates {
            feats.push(featurize_pair(&c, doc, &ctx));
            labels.push(c.label.clone());
        }
    }
    let space = FeatureSpace::build(&feats);
    let x: Vec<_> = feats.iter().map(|f| space.vectorize(f)).collect();
    let model = svm_train(&x, &labels, &SvmConfig::default(), space.len())?;
    println!("{} training pairs, {} features, classes {:?}", x.len(), space.len(), model.classes);

    let test = document(
        "t",
        "Salmonella lives in poultry",
        "T1\tMicroorganism 0 10\tSalmonella\nT2\tHabitat 20 27\tpoultry\n",
    )?;
    for c in generate_candidates(&test, &schema, 20, CandidateMode::Eval).candidates {
        let (label, margins) = svm_predict(&model, &space.vectorize(&featurize_pair(&c, &test, &ctx)));
        println!("T{} -> T{}: {label} {margins:.3?}", c.e1 + 1, c.e2 + 1);
    }
    Ok(())
}
