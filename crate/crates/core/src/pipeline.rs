//! Config handling and the batch commands behind the `bioext` binary.
//!
//! Everything a command produces lands under `work_dir`:
//!
//! ```text
//! folds.json
//! models/ner-fold<k>.bin       models/nested-fold<k>.bin
//! models/ner-fold<k>.report.json
//! pred/fold<k>/<doc>.a2        pred/ensemble/<doc>.a2
//! norm/<doc>.a2                brute/<doc>.a2
//! rel/fold<k>/<doc>.a2         rel/fold<k>/predictions.json
//! rel/ensemble/<doc>.a2
//! ```
//!
//! Ontology indices are cached in `$BIOEXT_CACHE_DIR` (default
//! `work_dir/cache`).

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, assign_types_by_root, list_documents, load_embeddings, load_ncbi_names, load_obo, make_folds, read_document,
    write_brat, Document, EmbeddingTable, FoldSplit, NcbiNameClasses, OovStrategy, Relation, RelationKind, Span, Token,
};
use crate::error::{Error, Result};
use crate::eval::{relation_prf, ser, span_prf, Average, EvalRelation, EvalSpan, SerConfig};
use crate::nested::{level1_instances, predict_nested, train_level2};
use crate::normalize::{
    brute_force_tag, DictionaryMatcher, Normalizer, NormalizerConfig, OntologyIndex, MICROORGANISM, NCBI_RESOURCE,
    OBT_RESOURCE,
};
use crate::relation::{
    featurize_pair, generate_candidates, grid_search_c, oversample, svm_predict, svm_train, CandidateMode, FeatureContext,
    FeatureSpace, GridFold, RelationSchema, SparseVec, SvmConfig, NEGATIVE,
};
use crate::tagger::{load_model, train, write_model, SequenceTagger, TaggerConfig, TaggerModel, MODEL_SCHEME};
use crate::tags::{aggregate_spans, decode_spans, vote, AggregateMode, SpanSet, TagSequence, TokenSpan};

pub const CACHE_ENV: &str = "BIOEXT_CACHE_DIR";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Pharmaco,
    #[default]
    BbNormNer,
    Seedev,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Annotated training documents.
    pub corpus: Option<PathBuf>,
    /// Documents to tag, normalize or relate; gold for `eval`.
    pub test_corpus: Option<PathBuf>,
    pub work_dir: PathBuf,
    /// NCBI `names.dmp`.
    pub ncbi_names: Option<PathBuf>,
    /// OntoBiotope OBO file.
    pub obt: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Directory of `<Relation>.txt` keyword lists.
    pub keywords_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    pub nested: bool,
    pub brute_force: bool,
    /// How dictionary and tagger spans are combined by `tag`.
    pub ensemble_mode: AggregateMode,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            nested: false,
            brute_force: false,
            ensemble_mode: AggregateMode::Union,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OntologyOptions {
    /// OBO root id → entity type, for ontologies without namespaces.
    pub type_roots: BTreeMap<String, String>,
    /// Type of OBO concepts left untyped.
    pub default_type: Option<String>,
    /// Only `scientific name` rows of the taxonomy when set.
    pub scientific_names_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelationOptions {
    pub tau: usize,
    pub svm: SvmConfig,
    /// Candidate values for C; more than one triggers a grid search.
    pub c_grid: Vec<f64>,
    /// Copies of each positive example; 1 disables oversampling.
    pub oversample: usize,
    /// Named regexes for the pattern flags.
    pub patterns: BTreeMap<String, String>,
}

impl Default for RelationOptions {
    fn default() -> Self {
        RelationOptions {
            tau: 20,
            svm: SvmConfig::default(),
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            oversample: 1,
            patterns: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub ser: SerConfig,
    pub min_f1: Option<f64>,
    pub min_relation_f1: Option<f64>,
    pub max_ser: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    pub seed: u64,
    pub folds: usize,
    pub paths: Paths,
    pub flags: Flags,
    pub tagger: TaggerConfig,
    pub normalizer: NormalizerConfig,
    pub ontology: OntologyOptions,
    pub relation: RelationOptions,
    pub eval: EvalOptions,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_dotted(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut at = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let table = at
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(p.to_string(), value);
            return Ok(());
        }
        at = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::Config(format!("empty override key `{key}`")))
}

const TOP_LEVEL: [&str; 10] = [
    "task", "seed", "folds", "paths", "flags", "tagger", "normalizer", "ontology", "relation", "eval",
];

/// Keys that do not start with a config section are tagger settings, so
/// `ranking.alpha` means `tagger.ranking.alpha`.
fn qualify(key: &str) -> String {
    let head = key.split('.').next().unwrap_or_default();
    if TOP_LEVEL.contains(&head) {
        key.to_string()
    } else {
        format!("tagger.{key}")
    }
}

/// `key.path=value`; the value is read as TOML, falling back to a string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl PipelineConfig {
    /// Parse `text`, apply `overrides` and fill unset keys from the task
    /// presets. Unknown keys are rejected.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_dotted(&mut user, &qualify(&k), v)?;
        }
        let task: Task = match user.get("task") {
            Some(t) => t.clone().try_into().map_err(|e| Error::Config(format!("task: {e}")))?,
            None => Task::default(),
        };
        let tagger = match task {
            Task::Pharmaco => TaggerConfig::pharmaconer(),
            _ => TaggerConfig::bb_norm_ner(),
        };
        let defaults = PipelineConfig {
            task,
            seed: 42,
            folds: 3,
            paths: Paths {
                work_dir: PathBuf::from("work"),
                ..Default::default()
            },
            flags: Flags::default(),
            tagger,
            normalizer: NormalizerConfig::default(),
            ontology: OntologyOptions::default(),
            relation: RelationOptions::default(),
            eval: EvalOptions::default(),
        };
        let mut base = toml::Value::try_from(&defaults).map_err(|e| Error::Internal(e.to_string()))?;
        merge(&mut base, user);
        let mut cfg: PipelineConfig = base.try_into().map_err(|e| Error::Config(e.to_string()))?;
        // a top-level seed drives the tagger unless set explicitly
        let explicit_tagger_seed = toml::from_str::<toml::Value>(text)
            .ok()
            .and_then(|v| v.get("tagger").and_then(|t| t.get("seed")).cloned())
            .is_some()
            || overrides
                .iter()
                .filter_map(|o| parse_override(o).ok())
                .any(|(k, _)| qualify(&k) == "tagger.seed");
        if !explicit_tagger_seed {
            cfg.tagger.seed = cfg.seed;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    /// Field-level checks; referenced input paths must exist.
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds = {} must be at least 2", self.folds)));
        }
        self.tagger.validate().map_err(|e| Error::Config(format!("tagger: {e}")))?;
        self.normalizer
            .validate()
            .map_err(|e| Error::Config(format!("normalizer: {e}")))?;
        self.relation
            .svm
            .validate()
            .map_err(|e| Error::Config(format!("relation.svm: {e}")))?;
        if self.relation.c_grid.iter().any(|c| *c <= 0.0) {
            return Err(Error::Config("relation.c_grid values must be positive".into()));
        }
        for (name, re) in &self.relation.patterns {
            Regex::new(re).map_err(|e| Error::Config(format!("relation.patterns.{name}: {e}")))?;
        }
        if !(0.0..=1.0).contains(&self.eval.ser.w_norm) {
            return Err(Error::Config("eval.ser.w_norm must be in [0, 1]".into()));
        }
        let p = &self.paths;
        let named = [
            ("paths.corpus", &p.corpus),
            ("paths.test_corpus", &p.test_corpus),
            ("paths.ncbi_names", &p.ncbi_names),
            ("paths.obt", &p.obt),
            ("paths.embeddings", &p.embeddings),
            ("paths.schema", &p.schema),
            ("paths.keywords_dir", &p.keywords_dir),
        ];
        for (name, path) in named {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!("{name}: {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("{key} must be set for this command")))
    }

    fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.paths.work_dir.join("cache"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "bioext", version, about = "Biomedical entity, normalization and relation extraction")]
pub struct Cli {
    /// Pipeline config file (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `-o ranking.alpha=0`. Repeatable.
    #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Validate the config and print it without running anything.
    #[arg(long)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Split the training corpus into bagging folds.
    Folds,
    /// Train the entity tagger (and the nested level when enabled).
    TrainNer {
        /// Only this fold; all folds by default.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Tag the test corpus.
    Tag {
        #[arg(long, conflicts_with = "ensemble")]
        fold: Option<usize>,
        /// Vote over all fold models.
        #[arg(long)]
        ensemble: bool,
    },
    /// Link tagged entities to the ontologies.
    Normalize {
        /// Directory of predicted `.a2` files, relative to the work dir.
        #[arg(long, default_value = "pred/ensemble")]
        input: PathBuf,
    },
    /// Dictionary tagging of the test corpus.
    BruteForce,
    /// Train relation classifiers and predict on the test corpus.
    Relate {
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Vote relation predictions over folds.
    Ensemble,
    /// Score predictions against gold annotations.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Gold directory; `paths.test_corpus` by default.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
}

/// Result of a command that completed without error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    /// Human-readable report, if any.
    pub report: String,
    /// A configured evaluation threshold was not met.
    pub threshold_violated: bool,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::MissingArtifact { .. } => EXIT_MISSING,
        _ => 1,
    }
}

/// Entry point of the binary.
pub fn main_with(cli: Cli) -> i32 {
    let result = PipelineConfig::load(&cli.config, &cli.overrides).and_then(|cfg| {
        cfg.validate()?;
        if cli.dry_run {
            let text = toml::to_string(&cfg).map_err(|e| Error::Internal(e.to_string()))?;
            return Ok(Outcome {
                report: text,
                threshold_violated: false,
            });
        }
        run(&cli.command, &cfg)
    });
    match result {
        Ok(out) => {
            print!("{}", out.report);
            if out.threshold_violated {
                eprintln!("evaluation threshold violated");
                EXIT_THRESHOLD
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command, cfg: &PipelineConfig) -> Result<Outcome> {
    log::info!(
        "resolved config (seed {}):\n{}",
        cfg.seed,
        toml::to_string(cfg).unwrap_or_default()
    );
    match command {
        Command::Folds => cmd_folds(cfg),
        Command::TrainNer { fold } => cmd_train_ner(cfg, *fold),
        Command::Tag { fold, ensemble } => cmd_tag(cfg, *fold, *ensemble),
        Command::Normalize { input } => cmd_normalize(cfg, input),
        Command::BruteForce => cmd_brute_force(cfg),
        Command::Relate { fold } => cmd_relate(cfg, *fold),
        Command::Ensemble => cmd_ensemble(cfg),
        Command::Eval { pred, gold } => cmd_eval(cfg, pred, gold.as_deref()),
    }
}

// ---------------------------------------------------------------------------
// helpers

fn missing(path: &Path, reason: &str) -> Error {
    Error::MissingArtifact {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn store_model(model: &TaggerModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    write_file(path, buf)
}

fn read_docs(dir: &Path) -> Result<Vec<Document>> {
    if !dir.is_dir() {
        return Err(missing(dir, "document directory not found"));
    }
    list_documents(dir)?.iter().map(|id| read_document(dir, id)).collect()
}

fn folds_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.work_dir.join("folds.json")
}

fn load_folds(cfg: &PipelineConfig) -> Result<Vec<FoldSplit>> {
    let p = folds_path(cfg);
    let text = fs::read_to_string(&p).map_err(|_| missing(&p, "run `folds` first"))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}

fn selected_folds(cfg: &PipelineConfig, fold: Option<usize>) -> Result<Vec<FoldSplit>> {
    let folds = load_folds(cfg)?;
    match fold {
        None => Ok(folds),
        Some(k) => folds
            .into_iter()
            .find(|f| f.fold_id == k)
            .map(|f| vec![f])
            .ok_or_else(|| Error::Argument(format!("no fold {k} in folds.json"))),
    }
}

fn model_path(cfg: &PipelineConfig, level: &str, fold: usize) -> PathBuf {
    cfg.paths.work_dir.join("models").join(format!("{level}-fold{fold}.bin"))
}

fn load_embedding_file(cfg: &PipelineConfig) -> Result<Option<EmbeddingTable>> {
    match &cfg.paths.embeddings {
        None => Ok(None),
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
            load_embeddings(BufReader::new(f), OovStrategy::Mean).map(Some)
        }
    }
}

fn to_char_span(tokens: &[Token], s: &TokenSpan) -> Span {
    Span::new(tokens[s.start].char_start, tokens[s.end].char_end, &s.entity_type)
}

/// Document holding `spans` (renumbered in offset order) and `relations`.
fn prediction_doc(doc: &Document, mut spans: Vec<Span>) -> Document {
    spans.sort_by(|a, b| {
        (a.char_start, a.char_end, &a.entity_type).cmp(&(b.char_start, b.char_end, &b.entity_type))
    });
    spans.dedup_by(|a, b| (a.char_start, a.char_end, &a.entity_type) == (b.char_start, b.char_end, &b.entity_type));
    for (i, s) in spans.iter_mut().enumerate() {
        s.ann_id = format!("T{}", i + 1);
        s.fragment_group = None;
    }
    Document {
        doc_id: doc.doc_id.clone(),
        text: doc.text.clone(),
        sentences: Vec::new(),
        gold_spans: spans,
        gold_relations: Vec::new(),
    }
}

/// Majority vote over several taggers (first one is the confident model).
struct VotedTagger<'a>(Vec<&'a TaggerModel>);

impl SequenceTagger for VotedTagger<'_> {
    fn tag(&self, tokens: &[Token]) -> TagSequence {
        let seqs: Vec<TagSequence> = self.0.iter().map(|m| m.tag(tokens)).collect();
        if seqs.len() == 1 {
            return seqs.into_iter().next().unwrap_or_default();
        }
        vote(&seqs, 0, MODEL_SCHEME).unwrap_or_else(|_| seqs[0].clone())
    }
}

fn file_hash(paths: &[&Path], extra: &str) -> Result<String> {
    let mut h = DefaultHasher::new();
    for p in paths {
        fs::read(p).map_err(|e| Error::io(*p, e))?.hash(&mut h);
    }
    extra.hash(&mut h);
    Ok(format!("{:016x}", h.finish()))
}

struct Indices {
    ncbi: OntologyIndex,
    obt: OntologyIndex,
}

fn cached_index(cfg: &PipelineConfig, name: &str, sources: &[&Path], build: impl FnOnce() -> Result<OntologyIndex>) -> Result<OntologyIndex> {
    let key = file_hash(sources, &serde_json::to_string(&(&cfg.normalizer, &cfg.ontology)).unwrap_or_default())?;
    let path = cfg.cache_dir().join(format!("{name}-{key}.idx"));
    if let Ok(f) = fs::File::open(&path) {
        if let Ok(idx) = OntologyIndex::read(BufReader::new(f)) {
            log::info!("loaded cached index {}", path.display());
            return Ok(idx);
        }
    }
    let idx = build()?;
    let mut buf = Vec::new();
    idx.write(&mut buf)?;
    write_file(&path, buf)?;
    Ok(idx)
}

fn load_indices(cfg: &PipelineConfig, embeddings: Option<&EmbeddingTable>) -> Result<Indices> {
    let ncbi_path = cfg.require(&cfg.paths.ncbi_names, "paths.ncbi_names")?;
    let obt_path = cfg.require(&cfg.paths.obt, "paths.obt")?;
    let ncbi = cached_index(cfg, "ncbi", &[ncbi_path], || {
        let f = fs::File::open(ncbi_path).map_err(|e| Error::io(ncbi_path, e))?;
        let classes = if cfg.ontology.scientific_names_only {
            NcbiNameClasses::ScientificOnly
        } else {
            NcbiNameClasses::All
        };
        let concepts = load_ncbi_names(BufReader::new(f), &classes)?;
        OntologyIndex::build(NCBI_RESOURCE, concepts, cfg.normalizer.clone(), None)
    })?;
    let mut obt_sources = vec![obt_path];
    if let Some(e) = &cfg.paths.embeddings {
        obt_sources.push(e);
    }
    let obt = cached_index(cfg, "obt", &obt_sources, || {
        let f = fs::File::open(obt_path).map_err(|e| Error::io(obt_path, e))?;
        let mut concepts = load_obo(BufReader::new(f))?;
        let roots: Vec<(&str, &str)> = cfg
            .ontology
            .type_roots
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        if !roots.is_empty() {
            assign_types_by_root(&mut concepts, &roots);
        }
        if let Some(t) = &cfg.ontology.default_type {
            for c in concepts.iter_mut().filter(|c| c.entity_type.is_none()) {
                c.entity_type = Some(t.clone());
            }
        }
        OntologyIndex::build(OBT_RESOURCE, concepts, cfg.normalizer.clone(), embeddings)
    })?;
    Ok(Indices { ncbi, obt })
}

// ---------------------------------------------------------------------------
// commands

fn cmd_folds(cfg: &PipelineConfig) -> Result<Outcome> {
    let corpus = cfg.require(&cfg.paths.corpus, "paths.corpus")?;
    if !corpus.is_dir() {
        return Err(missing(corpus, "training corpus not found"));
    }
    let ids = list_documents(corpus)?;
    let folds = make_folds(&ids, cfg.folds, cfg.seed)?;
    let json = serde_json::to_string_pretty(&folds).map_err(|e| Error::Internal(e.to_string()))?;
    write_file(&folds_path(cfg), json + "\n")?;
    let mut report = String::new();
    for f in &folds {
        report.push_str(&format!(
            "fold {}: {} train, {} dev\n",
            f.fold_id,
            f.train_doc_ids.len(),
            f.dev_doc_ids.len()
        ));
    }
    Ok(Outcome {
        report,
        threshold_violated: false,
    })
}

fn pick(docs: &[Document], ids: &[String]) -> Vec<Document> {
    docs.iter().filter(|d| ids.contains(&d.doc_id)).cloned().collect()
}

fn cmd_train_ner(cfg: &PipelineConfig, fold: Option<usize>) -> Result<Outcome> {
    let corpus = cfg.require(&cfg.paths.corpus, "paths.corpus")?;
    let folds = selected_folds(cfg, fold)?;
    let docs = read_docs(corpus)?;
    let embeddings = load_embedding_file(cfg)?;
    let extra: Vec<String> = embeddings.as_ref().map(|e| e.words().to_vec()).unwrap_or_default();
    let mut report = String::new();
    for f in folds {
        let train_docs = pick(&docs, &f.train_doc_ids);
        let dev_docs = pick(&docs, &f.dev_doc_ids);
        let train_set = level1_instances(&train_docs)?;
        let dev_set = level1_instances(&dev_docs)?;
        log::info!("fold {}: {} training sentences", f.fold_id, train_set.len());
        let model = TaggerModel::new(cfg.tagger.clone(), &train_set, extra.iter().cloned(), embeddings.as_ref())?;
        let (model, rep) = train(model, &train_set, &dev_set)?;
        store_model(&model, &model_path(cfg, "ner", f.fold_id))?;
        let rep_json = serde_json::to_string_pretty(&rep).map_err(|e| Error::Internal(e.to_string()))?;
        write_file(
            &cfg.paths.work_dir.join("models").join(format!("ner-fold{}.report.json", f.fold_id)),
            rep_json + "\n",
        )?;
        report.push_str(&format!(
            "fold {}: best epoch {} dev macro-F1 {:.4}\n",
            f.fold_id, rep.best_epoch, rep.best_dev_macro_f1
        ));
        if cfg.flags.nested {
            let (nested, rep2) = train_level2(&train_docs, &dev_docs, cfg.tagger.clone(), extra.iter().cloned())?;
            store_model(&nested, &model_path(cfg, "nested", f.fold_id))?;
            report.push_str(&format!(
                "fold {} nested: best epoch {} dev macro-F1 {:.4}\n",
                f.fold_id, rep2.best_epoch, rep2.best_dev_macro_f1
            ));
        }
    }
    Ok(Outcome {
        report,
        threshold_violated: false,
    })
}

fn dictionary_spans(doc: &Document, matchers: &[DictionaryMatcher<'_>]) -> Vec<Span> {
    let mut out = Vec::new();
    for sent in &doc.sentences {
        for m in brute_force_tag(sent, matchers) {
            let mut s = to_char_span(sent, &m.span);
            s.norm_id = Some(m.id);
            s.norm_resource = Some(m.resource);
            out.push(s);
        }
    }
    out
}

fn matchers<'a>(cfg: &PipelineConfig, idx: &'a Indices) -> Vec<DictionaryMatcher<'a>> {
    vec![
        DictionaryMatcher::new(&idx.ncbi, Some(MICROORGANISM)),
        DictionaryMatcher::new(&idx.obt, cfg.ontology.default_type.as_deref()),
    ]
}

fn cmd_tag(cfg: &PipelineConfig, fold: Option<usize>, ensemble: bool) -> Result<Outcome> {
    let test = cfg.require(&cfg.paths.test_corpus, "paths.test_corpus")?;
    let fold_ids: Vec<usize> = if ensemble {
        load_folds(cfg)?.iter().map(|f| f.fold_id).collect()
    } else {
        vec![fold.unwrap_or(1)]
    };
    let load = |level: &str| -> Result<Vec<TaggerModel>> {
        fold_ids
            .iter()
            .map(|&k| {
                let p = model_path(cfg, level, k);
                if !p.exists() {
                    return Err(missing(&p, "run `train-ner` first"));
                }
                load_model(&p)
            })
            .collect()
    };
    let level1 = load("ner")?;
    let level2 = if cfg.flags.nested { Some(load("nested")?) } else { None };
    let docs = read_docs(test)?;
    let indices = if cfg.flags.brute_force {
        Some(load_indices(cfg, None)?)
    } else {
        None
    };
    let dict = indices.as_ref().map(|i| matchers(cfg, i));
    let out_dir = cfg.paths.work_dir.join("pred").join(if ensemble {
        "ensemble".to_string()
    } else {
        format!("fold{}", fold_ids[0])
    });
    let l1 = VotedTagger(level1.iter().collect());
    let l2 = level2.as_ref().map(|m| VotedTagger(m.iter().collect()));
    let mut n_spans = 0;
    for doc in &docs {
        let mut spans = Vec::new();
        for sent in &doc.sentences {
            let tagged: SpanSet = match &l2 {
                Some(l2) => predict_nested(&l1, l2, sent).spans(),
                None => decode_spans(&l1.tag(sent), MODEL_SCHEME),
            };
            let combined = match &dict {
                Some(ms) => {
                    let found: SpanSet = brute_force_tag(sent, ms).into_iter().map(|m| m.span).collect();
                    aggregate_spans(&[tagged, found], cfg.flags.ensemble_mode)
                }
                None => tagged,
            };
            spans.extend(combined.iter().map(|s| to_char_span(sent, s)));
        }
        n_spans += spans.len();
        let pred = prediction_doc(doc, spans);
        write_file(&out_dir.join(format!("{}.a2", doc.doc_id)), write_brat(&pred))?;
    }
    Ok(Outcome {
        report: format!("{} documents, {n_spans} entities -> {}\n", docs.len(), out_dir.display()),
        threshold_violated: false,
    })
}

fn cmd_normalize(cfg: &PipelineConfig, input: &Path) -> Result<Outcome> {
    let test = cfg.require(&cfg.paths.test_corpus, "paths.test_corpus")?;
    let input = cfg.paths.work_dir.join(input);
    if !input.is_dir() {
        return Err(missing(&input, "run `tag` first"));
    }
    let embeddings = load_embedding_file(cfg)?;
    let idx = load_indices(cfg, embeddings.as_ref())?;
    let normalizer = Normalizer::new(idx.ncbi, idx.obt, embeddings, cfg.normalizer.cache);
    let out_dir = cfg.paths.work_dir.join("norm");
    let mut linked = 0;
    let mut total = 0;
    for id in list_documents(test)? {
        let text = fs::read_to_string(test.join(format!("{id}.txt"))).map_err(|e| Error::io(test, e))?;
        let ann_path = input.join(format!("{id}.a2"));
        let ann = fs::read_to_string(&ann_path).map_err(|_| missing(&ann_path, "prediction missing"))?;
        let pred = corpus::parse_brat(&id, &text, &ann)?;
        let mut spans = Vec::new();
        for mut s in pred.gold_spans {
            let mention = corpus::char_slice(&text, s.char_start, s.char_end).unwrap_or("");
            let r = normalizer.normalize(mention, &s.entity_type);
            total += 1;
            if let Some(t) = r.relabeled_type {
                s.entity_type = t;
            }
            if let Some(rid) = r.ref_id {
                linked += 1;
                s.norm_id = Some(rid);
                s.norm_resource = r.resource;
            }
            spans.push(s);
        }
        let doc = prediction_doc(&pred_doc_stub(&id, &text), spans);
        write_file(&out_dir.join(format!("{id}.a2")), write_brat(&doc))?;
    }
    Ok(Outcome {
        report: format!("{linked} of {total} entities linked -> {}\n", out_dir.display()),
        threshold_violated: false,
    })
}

fn pred_doc_stub(id: &str, text: &str) -> Document {
    Document {
        doc_id: id.to_string(),
        text: text.to_string(),
        ..Default::default()
    }
}

fn cmd_brute_force(cfg: &PipelineConfig) -> Result<Outcome> {
    let test = cfg.require(&cfg.paths.test_corpus, "paths.test_corpus")?;
    let idx = load_indices(cfg, None)?;
    let ms = matchers(cfg, &idx);
    let out_dir = cfg.paths.work_dir.join("brute");
    let docs = read_docs(test)?;
    let mut n = 0;
    for doc in &docs {
        let spans = dictionary_spans(doc, &ms);
        n += spans.len();
        write_file(&out_dir.join(format!("{}.a2", doc.doc_id)), write_brat(&prediction_doc(doc, spans)))?;
    }
    Ok(Outcome {
        report: format!("{n} dictionary matches -> {}\n", out_dir.display()),
        threshold_violated: false,
    })
}

fn load_keywords(cfg: &PipelineConfig) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    let Some(dir) = &cfg.paths.keywords_dir else { return Ok(out) };
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            let rel = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let terms = text
                .lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect();
            out.insert(rel, terms);
        }
    }
    Ok(out)
}

struct RelationData {
    features: Vec<crate::relation::NamedFeatures>,
    labels: Vec<String>,
}

fn relation_data(
    docs: &[Document],
    schema: &RelationSchema,
    ctx: &FeatureContext<'_>,
    tau: usize,
    mode: CandidateMode,
) -> (RelationData, Vec<(usize, crate::relation::CandidatePair)>) {
    let mut data = RelationData {
        features: Vec::new(),
        labels: Vec::new(),
    };
    let mut cands = Vec::new();
    let mut dropped = 0;
    for (di, doc) in docs.iter().enumerate() {
        let set = generate_candidates(doc, schema, tau, mode);
        dropped += set.dropped_gold;
        for c in set.candidates {
            data.features.push(featurize_pair(&c, doc, ctx));
            data.labels.push(c.label.clone());
            cands.push((di, c));
        }
    }
    if dropped > 0 {
        log::info!("{dropped} gold relations beyond tau = {tau} dropped");
    }
    (data, cands)
}

fn vectors(space: &FeatureSpace, data: &RelationData) -> Vec<SparseVec> {
    data.features.iter().map(|f| space.vectorize(f)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct RelPrediction {
    doc_id: String,
    arg1: String,
    arg2: String,
    label: String,
}

fn write_relations(schema: &RelationSchema, docs: &[Document], preds: &[RelPrediction], dir: &Path) -> Result<()> {
    for doc in docs {
        let mut out = doc.clone();
        out.gold_relations = preds
            .iter()
            .filter(|p| p.doc_id == doc.doc_id && p.label != NEGATIVE)
            .enumerate()
            .map(|(k, p)| {
                let (r1, r2) = schema.roles_of(&p.label);
                Relation {
                    id: format!("R{}", k + 1),
                    kind: RelationKind::Relation,
                    rel_type: p.label.clone(),
                    args: [(r1.to_string(), p.arg1.clone()), (r2.to_string(), p.arg2.clone())],
                }
            })
            .collect();
        for s in &mut out.gold_spans {
            s.norm_id = None;
        }
        write_file(&dir.join(format!("{}.a2", doc.doc_id)), write_brat(&out))?;
    }
    Ok(())
}

fn cmd_relate(cfg: &PipelineConfig, fold: Option<usize>) -> Result<Outcome> {
    let corpus = cfg.require(&cfg.paths.corpus, "paths.corpus")?;
    let test = cfg.require(&cfg.paths.test_corpus, "paths.test_corpus")?;
    let schema_path = cfg.require(&cfg.paths.schema, "paths.schema")?;
    let schema_file = fs::File::open(schema_path).map_err(|e| Error::io(schema_path, e))?;
    let schema = RelationSchema::parse(BufReader::new(schema_file))?;
    let all_folds = load_folds(cfg)?;
    let folds = selected_folds(cfg, fold)?;
    let docs = read_docs(corpus)?;
    let test_docs = read_docs(test)?;
    let embeddings = load_embedding_file(cfg)?;
    let patterns = cfg
        .relation
        .patterns
        .iter()
        .map(|(n, r)| Regex::new(r).map(|re| (n.clone(), re)).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let ctx = FeatureContext {
        embeddings: embeddings.as_ref(),
        keywords: load_keywords(cfg)?,
        patterns,
    };
    let tau = cfg.relation.tau;

    // Per-fold training data, shared by the grid search and the final models.
    let mut per_fold = Vec::new();
    for f in &all_folds {
        let (train_data, _) = relation_data(&pick(&docs, &f.train_doc_ids), &schema, &ctx, tau, CandidateMode::Train);
        let (dev_data, _) = relation_data(&pick(&docs, &f.dev_doc_ids), &schema, &ctx, tau, CandidateMode::Eval);
        let space = FeatureSpace::build(&train_data.features);
        let tx = vectors(&space, &train_data);
        let (tx, ty) = oversample(&tx, &train_data.labels, cfg.relation.oversample);
        let dx = vectors(&space, &dev_data);
        per_fold.push((f.fold_id, space, tx, ty, dx, dev_data.labels));
    }
    let mut svm_cfg = cfg.relation.svm.clone();
    let mut report = String::new();
    if cfg.relation.c_grid.len() > 1 {
        let grid_folds: Vec<GridFold<'_>> = per_fold
            .iter()
            .map(|(_, _, tx, ty, dx, dy)| GridFold {
                train_x: tx,
                train_y: ty,
                dev_x: dx,
                dev_y: dy,
            })
            .collect();
        // every fold shares one gamma so the C values are comparable
        let width = per_fold.iter().map(|p| p.1.len()).max().unwrap_or(1);
        let (best, scores) = grid_search_c(&grid_folds, &cfg.relation.c_grid, &svm_cfg, width)?;
        for (c, s) in scores {
            report.push_str(&format!("C = {c}: mean dev F1 {s:.4}\n"));
        }
        report.push_str(&format!("selected C = {best}\n"));
        svm_cfg.c = best;
    } else if let Some(&c) = cfg.relation.c_grid.first() {
        svm_cfg.c = c;
    }

    let (test_data, test_cands) = relation_data(&test_docs, &schema, &ctx, tau, CandidateMode::Eval);
    for f in &folds {
        let (_, space, tx, ty, _, _) = per_fold
            .iter()
            .find(|p| p.0 == f.fold_id)
            .ok_or_else(|| Error::Internal("fold data missing".into()))?;
        let model = svm_train(tx, ty, &svm_cfg, space.len())?;
        let preds: Vec<RelPrediction> = test_cands
            .iter()
            .zip(vectors(space, &test_data))
            .map(|((di, c), x)| RelPrediction {
                doc_id: test_docs[*di].doc_id.clone(),
                arg1: test_docs[*di].gold_spans[c.e1].ann_id.clone(),
                arg2: test_docs[*di].gold_spans[c.e2].ann_id.clone(),
                label: svm_predict(&model, &x).0,
            })
            .collect();
        let dir = cfg.paths.work_dir.join("rel").join(format!("fold{}", f.fold_id));
        write_relations(&schema, &test_docs, &preds, &dir)?;
        let json = serde_json::to_string_pretty(&preds).map_err(|e| Error::Internal(e.to_string()))?;
        write_file(&dir.join("predictions.json"), json + "\n")?;
        let positives = preds.iter().filter(|p| p.label != NEGATIVE).count();
        report.push_str(&format!("fold {}: {positives} relations -> {}\n", f.fold_id, dir.display()));
    }
    Ok(Outcome {
        report,
        threshold_violated: false,
    })
}

fn cmd_ensemble(cfg: &PipelineConfig) -> Result<Outcome> {
    let test = cfg.require(&cfg.paths.test_corpus, "paths.test_corpus")?;
    let schema_path = cfg.require(&cfg.paths.schema, "paths.schema")?;
    let schema_file = fs::File::open(schema_path).map_err(|e| Error::io(schema_path, e))?;
    let schema = RelationSchema::parse(BufReader::new(schema_file))?;
    let folds = load_folds(cfg)?;
    let mut per_fold = Vec::new();
    for f in &folds {
        let p = cfg
            .paths
            .work_dir
            .join("rel")
            .join(format!("fold{}", f.fold_id))
            .join("predictions.json");
        let text = fs::read_to_string(&p).map_err(|_| missing(&p, "run `relate` first"))?;
        let preds: Vec<RelPrediction> = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        per_fold.push(
            preds
                .into_iter()
                .map(|p| ((p.doc_id, p.arg1, p.arg2), p.label))
                .collect::<Vec<_>>(),
        );
    }
    let voted = crate::relation::ensemble_vote_relations(&per_fold)?;
    let preds: Vec<RelPrediction> = voted
        .into_iter()
        .map(|((doc_id, arg1, arg2), label)| RelPrediction {
            doc_id,
            arg1,
            arg2,
            label,
        })
        .collect();
    let test_docs = read_docs(test)?;
    let dir = cfg.paths.work_dir.join("rel").join("ensemble");
    write_relations(&schema, &test_docs, &preds, &dir)?;
    let positives = preds.iter().filter(|p| p.label != NEGATIVE).count();
    Ok(Outcome {
        report: format!("{positives} voted relations -> {}\n", dir.display()),
        threshold_violated: false,
    })
}

fn eval_spans(doc: &Document) -> Vec<EvalSpan> {
    doc.gold_spans
        .iter()
        .map(|s| EvalSpan {
            doc_id: doc.doc_id.clone(),
            char_start: s.char_start,
            char_end: s.char_end,
            entity_type: s.entity_type.clone(),
            norm_id: s.norm_id.clone(),
        })
        .collect()
}

fn eval_relations(doc: &Document) -> Vec<EvalRelation> {
    doc.gold_relations
        .iter()
        .filter_map(|r| {
            let a = doc.span_by_ann(r.arg1())?;
            let b = doc.span_by_ann(r.arg2())?;
            Some(EvalRelation {
                doc_id: doc.doc_id.clone(),
                rel_type: r.rel_type.clone(),
                arg1: (a.char_start, a.char_end),
                arg2: (b.char_start, b.char_end),
            })
        })
        .collect()
}

fn cmd_eval(cfg: &PipelineConfig, pred: &Path, gold: Option<&Path>) -> Result<Outcome> {
    let gold_dir = match gold {
        Some(g) => g,
        None => cfg.require(&cfg.paths.test_corpus, "paths.test_corpus")?,
    };
    let pred_dir = if pred.is_absolute() || pred.exists() {
        pred.to_path_buf()
    } else {
        cfg.paths.work_dir.join(pred)
    };
    if !pred_dir.is_dir() {
        return Err(missing(&pred_dir, "prediction directory not found"));
    }
    let (mut gs, mut ps, mut gr, mut pr) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for id in list_documents(gold_dir)? {
        let g = read_document(gold_dir, &id)?;
        let ann = ["a2", "ann"]
            .iter()
            .find_map(|ext| fs::read_to_string(pred_dir.join(format!("{id}.{ext}"))).ok())
            .unwrap_or_default();
        let p = corpus::parse_brat(&id, &g.text, &ann)?;
        gs.extend(eval_spans(&g));
        ps.extend(eval_spans(&p));
        gr.extend(eval_relations(&g));
        pr.extend(eval_relations(&p));
    }
    let mut report = String::new();
    let mut kv = String::new();
    let micro = span_prf(&ps, &gs, Average::Micro);
    let macro_r = span_prf(&ps, &gs, Average::Macro);
    report.push_str("entities (strict)\n");
    report.push_str(&micro.to_table());
    report.push_str(&format!("macro F1 {:.4}\n", macro_r.f1));
    kv.push_str(&micro.to_key_values("entities.micro"));
    kv.push_str(&format!("entities.macro.f1={}\n", macro_r.f1));
    let mut violated = cfg.eval.min_f1.is_some_and(|m| micro.f1 < m);

    if gs.iter().any(|s| s.norm_id.is_some()) && !gs.is_empty() {
        let s = ser(&ps, &gs, &cfg.eval.ser)?;
        report.push_str("slot error rate\n");
        report.push_str(&s.to_table());
        kv.push_str(&s.to_key_values("ser"));
        violated |= cfg.eval.max_ser.is_some_and(|m| s.ser > m);
    }
    if !gr.is_empty() || !pr.is_empty() {
        let r = relation_prf(&pr, &gr);
        report.push_str("relations\n");
        report.push_str(&r.to_table());
        kv.push_str(&r.to_key_values("relations"));
        violated |= cfg.eval.min_relation_f1.is_some_and(|m| r.f1 < m);
    }
    report.push('\n');
    report.push_str(&kv);
    Ok(Outcome {
        report,
        threshold_violated: violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = PipelineConfig::from_toml("task = \"pharmaco\"\n[tagger]\nepochs = 3\n", &["ranking.alpha=0".into()]).unwrap();
        assert_eq!(cfg.tagger.word_dim, 100);
        assert_eq!(cfg.tagger.epochs, 3);
        assert_eq!(cfg.tagger.ranking.alpha, 0.0);
        assert_eq!(cfg.tagger.seed, 42);
        assert!(matches!(
            PipelineConfig::from_toml("[tagger]\nbogus = 1\n", &[]),
            Err(Error::Config(_))
        ));
        assert!(PipelineConfig::from_toml("", &["paths.work_dir=out/x".into()]).unwrap().paths.work_dir == Path::new("out/x"));
    }

    #[test]
    fn validation_checks_paths() {
        let cfg = PipelineConfig::from_toml("[paths]\ncorpus = \"/definitely/not/here\"\n", &[]).unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        assert!(err.to_string().contains("paths.corpus"));
    }
}
