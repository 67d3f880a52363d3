//! BiGRU-CRF sequence tagger.
//!
//! Each token is represented by its word embedding, a character-level
//! bidirectional GRU summary and embeddings of the word-level features in
//! [`crate::features`]. A word-level bidirectional GRU produces the context
//! matrix `H`, which feeds
//!
//! * the NER emission projection decoded by a linear-chain CRF,
//! * a type-less detection head (softmax over `O B I E S`), and
//! * forward / backward language-model heads,
//!
//! the last two only during training.

mod checkpoint;
pub mod gru;
pub mod loss;
mod network;
pub mod params;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{hybrid_loss, ranking_loss, HybridOutput, RankingConfig};
pub use network::{LossBreakdown, NED_TAGS};
pub use params::{DenseParams, EmbTable, Gradients, TaggerParams};
pub use train::{train, EpochLog, TrainReport};

use crate::corpus::{EmbeddingTable, Token};
use crate::crf;
use crate::error::{Error, Result};
use crate::features::{featurize_sentence, word_key, AlphaPatterns, CapClass, FeatureTables, Vocab, MAX_LENGTH_BUCKET};
use crate::linalg::Matrix;
use crate::tags::{self, parse_tag, Scheme, TagSequence};
use gru::Gru;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaggerConfig {
    pub learning_rate: f64,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_dim: usize,
    pub word_hidden: usize,
    pub pos_dim: usize,
    pub ortho_dim: usize,
    pub cap_dim: usize,
    /// Dimension of each prefix/suffix n-gram embedding.
    pub affix_dim: usize,
    pub length_dim: usize,
    pub sdp_rel_dim: usize,
    pub ranking: RankingConfig,
    pub multitask: bool,
    pub aux_loss_weight: f64,
    /// Most frequent training words kept by the LM heads.
    pub lm_vocab_size: usize,
    pub epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub alpha_patterns: Vec<String>,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig::bb_norm_ner()
    }
}

impl TaggerConfig {
    /// Settings for English biomedical NER + normalization.
    pub fn bb_norm_ner() -> Self {
        TaggerConfig {
            learning_rate: 0.005,
            char_dim: 25,
            char_hidden: 25,
            word_dim: 200,
            word_hidden: 200,
            pos_dim: 25,
            ortho_dim: 25,
            cap_dim: 5,
            affix_dim: 25,
            length_dim: 10,
            sdp_rel_dim: 10,
            ranking: RankingConfig::default(),
            multitask: true,
            aux_loss_weight: 0.1,
            lm_vocab_size: 7500,
            epochs: 100,
            patience: 25,
            seed: 42,
            clip_norm: 5.0,
            dropout: 0.5,
            alpha_patterns: AlphaPatterns::default_patterns(),
        }
    }

    /// Settings for Spanish pharmacological NER.
    pub fn pharmaconer() -> Self {
        TaggerConfig {
            word_dim: 100,
            word_hidden: 100,
            pos_dim: 50,
            ortho_dim: 50,
            ..TaggerConfig::bb_norm_ner()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.ranking;
        if !(0.0..=1.0).contains(&r.alpha) {
            return Err(Error::Config(format!("ranking.alpha = {} not in [0, 1]", r.alpha)));
        }
        if r.gamma <= 0.0 {
            return Err(Error::Config(format!("ranking.gamma = {} must be positive", r.gamma)));
        }
        let dims = [
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("word_dim", self.word_dim),
            ("word_hidden", self.word_hidden),
            ("pos_dim", self.pos_dim),
            ("ortho_dim", self.ortho_dim),
            ("cap_dim", self.cap_dim),
            ("affix_dim", self.affix_dim),
            ("length_dim", self.length_dim),
            ("sdp_rel_dim", self.sdp_rel_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout = {} not in [0, 1)", self.dropout)));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        AlphaPatterns::new(&self.alpha_patterns)?;
        Ok(())
    }

    /// Width of the per-token vector fed to the word-level GRU.
    pub fn input_dim(&self) -> usize {
        self.word_dim
            + 2 * self.char_hidden
            + self.pos_dim
            + self.ortho_dim
            + self.cap_dim
            + 4 * self.affix_dim
            + self.length_dim
            + self.sdp_rel_dim
            + 2
    }
}

/// Tokens with their gold tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<Token>,
    pub tags: TagSequence,
}

/// Anything that assigns a tag sequence to a sentence.
pub trait SequenceTagger {
    fn tag(&self, tokens: &[Token]) -> TagSequence;
}

/// Tagging scheme the model is trained with.
pub const MODEL_SCHEME: Scheme = Scheme::Iobes;

/// LM vocabulary entries for the sentence boundaries.
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub config: TaggerConfig,
    pub tables: FeatureTables,
    /// Output labels of the NER head.
    pub labels: Vec<String>,
    pub lm_vocab: Vocab,
    pub params: TaggerParams,
    patterns: AlphaPatterns,
}

/// IOBES label inventory for `entity_types`: `O` then `B/I/E/S` per type.
pub fn label_inventory<S: AsRef<str>>(entity_types: &[S]) -> Vec<String> {
    let mut types: Vec<&str> = entity_types.iter().map(AsRef::as_ref).collect();
    types.sort_unstable();
    types.dedup();
    let mut out = vec!["O".to_string()];
    for t in types {
        for p in ["B", "I", "E", "S"] {
            out.push(format!("{p}-{t}"));
        }
    }
    out
}

impl TaggerModel {
    /// Fresh model whose tables and label set come from `train`. Words of
    /// `extra_words` enter the word table too; `embeddings`, when given,
    /// initialise matching word rows and must have dimension `word_dim`.
    pub fn new(
        config: TaggerConfig,
        train: &[LabeledSentence],
        extra_words: impl IntoIterator<Item = String>,
        embeddings: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        let mut types = Vec::new();
        for s in train {
            if s.tags.len() != s.tokens.len() {
                return Err(Error::Argument(format!(
                    "{} tags for {} tokens",
                    s.tags.len(),
                    s.tokens.len()
                )));
            }
            for t in &s.tags {
                if let Some(tag) = parse_tag(t)? {
                    types.push(tag.entity_type.to_string());
                }
            }
        }
        let labels = label_inventory(&types);
        let tables = FeatureTables::build(train.iter().map(|s| s.tokens.as_slice()), extra_words);

        let mut counts: std::collections::HashMap<String, (usize, usize)> = Default::default();
        for (order, t) in train.iter().flat_map(|s| &s.tokens).enumerate() {
            counts.entry(word_key(&t.surface)).or_insert((0, order)).0 += 1;
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let keep = if config.multitask { config.lm_vocab_size } else { 0 };
        let lm_vocab = Vocab::build(
            [BOS.to_string(), EOS.to_string()]
                .into_iter()
                .chain(ranked.into_iter().take(keep).map(|(w, _)| w)),
        );

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let table = |rows: usize, dim: usize, rng: &mut ChaCha8Rng| {
            let mut m = Matrix::zeros(rows, dim);
            TaggerParams::init_uniform(&mut m, (3.0 / dim as f64).sqrt(), rng);
            m
        };
        let mut tables_p = vec![
            table(tables.words.len(), c.word_dim, &mut rng),
            table(tables.chars.len(), c.char_dim, &mut rng),
            table(tables.pos.len(), c.pos_dim, &mut rng),
            table(tables.ortho.len(), c.ortho_dim, &mut rng),
            table(CapClass::COUNT, c.cap_dim, &mut rng),
            table(tables.trigrams.len(), c.affix_dim, &mut rng),
            table(tables.fivegrams.len(), c.affix_dim, &mut rng),
            table(MAX_LENGTH_BUCKET + 1, c.length_dim, &mut rng),
            table(tables.sdp_rel.len(), c.sdp_rel_dim, &mut rng),
        ];
        if let Some(emb) = embeddings {
            if emb.dim() != c.word_dim {
                return Err(Error::Config(format!(
                    "embedding dimension {} differs from word_dim {}",
                    emb.dim(),
                    c.word_dim
                )));
            }
            let words = &mut tables_p[EmbTable::Word as usize];
            for (i, w) in tables.words.items().iter().enumerate() {
                if let Some(v) = emb.get(w) {
                    words.row_mut(i).copy_from_slice(v);
                }
            }
        }
        let h = c.word_hidden;
        let k = labels.len();
        let linear = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let mut m = Matrix::zeros(rows, cols);
            TaggerParams::init_uniform(&mut m, (6.0 / (rows + cols) as f64).sqrt(), rng);
            m
        };
        let dense = DenseParams {
            char_fwd: Gru::random(c.char_dim, c.char_hidden, &mut rng),
            char_bwd: Gru::random(c.char_dim, c.char_hidden, &mut rng),
            word_fwd: Gru::random(c.input_dim(), h, &mut rng),
            word_bwd: Gru::random(c.input_dim(), h, &mut rng),
            ner_w: linear(k, 2 * h, &mut rng),
            ner_b: Matrix::zeros(k, 1),
            ned_w: linear(NED_TAGS.len(), 2 * h, &mut rng),
            ned_b: Matrix::zeros(NED_TAGS.len(), 1),
            lm_fwd_w: linear(lm_vocab.len(), h, &mut rng),
            lm_fwd_b: Matrix::zeros(lm_vocab.len(), 1),
            lm_bwd_w: linear(lm_vocab.len(), h, &mut rng),
            lm_bwd_b: Matrix::zeros(lm_vocab.len(), 1),
            transitions: crf::constrained_transitions(&labels, MODEL_SCHEME),
        };
        let patterns = AlphaPatterns::new(&config.alpha_patterns)?;
        Ok(TaggerModel {
            config,
            tables,
            labels,
            lm_vocab,
            params: TaggerParams {
                tables: tables_p,
                dense,
            },
            patterns,
        })
    }

    /// Reassemble a model from its parts (used by the checkpoint reader).
    pub fn from_parts(
        config: TaggerConfig,
        tables: FeatureTables,
        labels: Vec<String>,
        lm_vocab: Vocab,
        params: TaggerParams,
    ) -> Result<Self> {
        let patterns = AlphaPatterns::new(&config.alpha_patterns)?;
        Ok(TaggerModel {
            config,
            tables,
            labels,
            lm_vocab,
            params,
            patterns,
        })
    }

    pub fn patterns(&self) -> &AlphaPatterns {
        &self.patterns
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Gold label indices for `tags`.
    pub fn gold_indices(&self, tags: &[String]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.label_index(t)
                    .ok_or_else(|| Error::Argument(format!("label `{t}` not in the model's tag set")))
            })
            .collect()
    }

    /// Context matrix `H` (`n × 2·word_hidden`), dropout disabled.
    pub fn encode(&self, tokens: &[Token]) -> Result<Matrix> {
        let feats = featurize_sentence(tokens, &self.tables, &self.patterns);
        let enc = network::encode(self, &feats, None)?;
        Ok(Matrix::from_rows(&enc.h))
    }

    /// NER emission scores (`n × labels`).
    pub fn emissions(&self, tokens: &[Token]) -> Result<Matrix> {
        let feats = featurize_sentence(tokens, &self.tables, &self.patterns);
        let enc = network::encode(self, &feats, None)?;
        Ok(network::emissions(self, &enc.h))
    }

    /// Viterbi decode followed by boundary repair.
    pub fn predict(&self, tokens: &[Token]) -> Result<TagSequence> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let p = self.emissions(tokens)?;
        let (path, _) = crf::viterbi(&p, &self.params.dense.transitions)?;
        let labels: Vec<String> = path.into_iter().map(|i| self.labels[i].clone()).collect();
        Ok(tags::repair_boundaries(&labels, MODEL_SCHEME))
    }

    /// Total training loss of one sentence and its gradient. `dropout_seed`
    /// selects a dropout mask; `None` disables dropout.
    pub fn loss_and_gradients(
        &self,
        sentence: &LabeledSentence,
        dropout_seed: Option<u64>,
    ) -> Result<(LossBreakdown, Gradients)> {
        network::loss_and_gradients(self, sentence, dropout_seed)
    }

    /// Auxiliary detection + LM loss for a sentence given its context matrix.
    pub fn multitask_loss(&self, h: &Matrix, sentence: &LabeledSentence) -> Result<f64> {
        let rows: Vec<Vec<f64>> = (0..h.rows).map(|i| h.row(i).to_vec()).collect();
        let mut scratch = Gradients::zeros_for(&self.params);
        let (loss, _) = network::multitask(self, &rows, sentence, &mut scratch)?;
        Ok(loss)
    }
}

impl SequenceTagger for TaggerModel {
    fn tag(&self, tokens: &[Token]) -> TagSequence {
        self.predict(tokens)
            .unwrap_or_else(|_| vec!["O".to_string(); tokens.len()])
    }
}
