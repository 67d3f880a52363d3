//! Link mentions to a taxonomy and a habitat ontology: exact, fuzzy and
//! embedding search, with type relabelling.

use bioext::corpus::{load_embeddings, load_ncbi_names, load_obo, NcbiNameClasses, OovStrategy};
use bioext::normalize::{Normalizer, NormalizerConfig, OntologyIndex, NCBI_RESOURCE, OBT_RESOURCE};

const NAMES: &str = "\
562\t|\tEscherichia coli\t|\t\t|\tscientific name\t|
562\t|\tE. coli\t|\t\t|\tcommon name\t|
80854\t|\tVibrio salmonicida\t|\t\t|\tscientific name\t|
";

const OBO: &str = "\
[Term]
id: OBT:000001
name: fish farm
namespace: Habitat
synonym: \"fish hatchery\" EXACT []

[Term]
id: OBT:000002
name: hospital
namespace: Habitat
";

const VECTORS: &str = "\
fish 1.0 0.0 0.0
farm 0.0 1.0 0.0
hospital 0.0 0.0 1.0
aquaculture 0.8 0.7 0.0
";

fn main() -> bioext::Result<()> {
    let cfg = NormalizerConfig::default();
    let emb = load_embeddings(VECTORS.as_bytes(), OovStrategy::Zero)?;
    let ncbi = OntologyIndex::build(NCBI_RESOURCE, load_ncbi_names(NAMES.as_bytes(), &NcbiNameClasses::All)?, cfg.clone(), None)?;
    let obt = OntologyIndex::build(OBT_RESOURCE, load_obo(OBO.as_bytes())?, cfg, Some(&emb))?;
    let normalizer = Normalizer::new(ncbi, obt, Some(emb), true);

    for (mention, ty) in [
        ("E. coli", "Microorganism"),
        ("Vibrio salmonicda", "Microorganism"),
        ("Escherichia coli", "Habitat"),
        ("fish hatchery", "Habitat"),
        ("aquaculture", "Habitat"),
        ("unknown place", "Habitat"),
    ] {
        let r = normalizer.normalize(mention, ty);
        println!(
            "{mention:>18} [{ty}] -> {:?} {:?} via {:?}{}",
            r.resource,
            r.ref_id,
            r.method,
            r.relabeled_type.map(|t| format!(", relabelled {t}")).unwrap_or_default()
        );
    }
    println!("{} cached resolutions", normalizer.cache_len());
    Ok(())
}
