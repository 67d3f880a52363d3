//! Biomedical information extraction toolkit.
//!
//! The crate covers the whole extraction pipeline:
//!
//! * [`corpus`]: brat standoff, CoNLL-style token files, OBO ontologies,
//!   NCBI `names.dmp`, text embeddings and bagging folds.
//! * [`tags`]: IOBES/BIO encoding, boundary repair, class-then-boundary
//!   ensemble voting and span aggregation.
//! * [`features`]: word-level features for the tagger.
//! * [`crf`]: linear-chain CRF scoring, forward algorithm, Viterbi and
//!   exact NLL gradients.
//! * [`tagger`]: the BiGRU-CRF tagger with hybrid CRF + ranking loss and
//!   auxiliary detection / language-model heads.
//! * [`nested`]: two-level nested entity recognition.
//! * [`normalize`]: exact / fuzzy / semantic ontology linking and the
//!   dictionary ("brute-force") tagger.
//! * [`relation`]: candidate generation, pair features and a weighted
//!   RBF-kernel SVM trained with SMO.
//! * [`eval`]: span and relation P/R/F1 and slot error rate.
//! * [`pipeline`]: config file handling and the batch commands behind the
//!   `bioext` binary.

pub mod corpus;
pub mod crf;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod nested;
pub mod normalize;
pub mod pipeline;
pub mod relation;
pub mod tagger;
pub mod tags;

pub use error::{Error, Result};
