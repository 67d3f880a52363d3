//! Readers and writers for the external data formats, plus fold creation.
//!
//! All offsets are character (code point) offsets, matching brat.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub char_start: usize,
    pub char_end: usize,
    pub pos: String,
    /// Index of the head token within the sentence, `None` for the root.
    pub dep_head: Option<usize>,
    pub dep_rel: Option<String>,
    pub lemma: Option<String>,
}

impl Token {
    /// Token with only a surface and offsets; used by tests and examples.
    pub fn bare(surface: &str, char_start: usize) -> Self {
        Token {
            surface: surface.to_string(),
            char_start,
            char_end: char_start + surface.chars().count(),
            pos: String::new(),
            dep_head: None,
            dep_rel: None,
            lemma: None,
        }
    }
}

/// Whitespace tokenization of `text` into bare tokens. Handy for fixtures.
pub fn whitespace_tokens(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    let mut word = String::new();
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token::bare(&word, s));
                word.clear();
            }
        } else {
            if start.is_none() {
                start = Some(i);
            }
            word.push(c);
        }
    }
    if let Some(s) = start {
        out.push(Token::bare(&word, s));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub char_start: usize,
    pub char_end: usize,
    pub entity_type: String,
    pub norm_id: Option<String>,
    /// Ontology name the `norm_id` belongs to, e.g. `OntoBiotope`.
    pub norm_resource: Option<String>,
    /// Shared by all fragments of one discontinuous annotation.
    pub fragment_group: Option<String>,
    /// Annotation id (`T3`) this span came from.
    pub ann_id: String,
}

impl Span {
    pub fn new(char_start: usize, char_end: usize, entity_type: &str) -> Self {
        Span {
            char_start,
            char_end,
            entity_type: entity_type.to_string(),
            norm_id: None,
            norm_resource: None,
            fragment_group: None,
            ann_id: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    /// `R` lines.
    Relation,
    /// Trigger-less `E` lines (SeeDev style binary events).
    Event,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    pub kind: RelationKind,
    pub rel_type: String,
    /// `(role, annotation id)` of the two arguments, in file order.
    pub args: [(String, String); 2],
}

impl Relation {
    pub fn arg1(&self) -> &str {
        &self.args[0].1
    }

    pub fn arg2(&self) -> &str {
        &self.args[1].1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub sentences: Vec<Vec<Token>>,
    pub gold_spans: Vec<Span>,
    pub gold_relations: Vec<Relation>,
}

/// Character-offset slice of `text`. Returns `None` when out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[b_start..b_end])
}

fn squash_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Document {
    /// Token range `(first, last)` inclusive of sentence `sent` covered by
    /// `span`, or `None` when the span touches no token of that sentence.
    pub fn token_range(sentence: &[Token], span: &Span) -> Option<(usize, usize)> {
        let mut first = None;
        let mut last = None;
        for (i, t) in sentence.iter().enumerate() {
            if t.char_start < span.char_end && span.char_start < t.char_end {
                first.get_or_insert(i);
                last = Some(i);
            }
        }
        Some((first?, last?))
    }

    /// Index of the sentence containing `span`, if it lies in exactly one.
    pub fn sentence_of(&self, span: &Span) -> Option<usize> {
        let mut hit = None;
        for (si, sent) in self.sentences.iter().enumerate() {
            if Self::token_range(sent, span).is_some() {
                if hit.is_some() {
                    return None;
                }
                hit = Some(si);
            }
        }
        hit
    }

    pub fn span_by_ann(&self, ann_id: &str) -> Option<&Span> {
        self.gold_spans.iter().find(|s| s.ann_id == ann_id)
    }
}

fn parse_offsets(line_no: usize, spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(';')
        .map(|frag| {
            let mut it = frag.split_whitespace();
            let s = it.next().and_then(|v| v.parse::<usize>().ok());
            let e = it.next().and_then(|v| v.parse::<usize>().ok());
            match (s, e, it.next()) {
                (Some(s), Some(e), None) if s < e => Ok((s, e)),
                (Some(_), Some(_), None) => Err(Error::parse(line_no, format!("empty or inverted fragment `{frag}`"))),
                _ => Err(Error::parse(line_no, format!("bad offsets `{frag}`"))),
            }
        })
        .collect()
}

/// Parse a brat standoff annotation against its document text.
pub fn parse_brat(doc_id: &str, text: &str, ann: &str) -> Result<Document> {
    let n_chars = text.chars().count();
    let mut doc = Document {
        doc_id: doc_id.to_string(),
        text: text.to_string(),
        ..Default::default()
    };
    let mut norms: Vec<(usize, String, String, String)> = Vec::new();

    for (idx, raw) in ann.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let id = cols.next().unwrap_or_default();
        let body = cols
            .next()
            .ok_or_else(|| Error::parse(line_no, "missing tab-separated body"))?;
        match id.chars().next() {
            Some('T') => {
                let surface = cols
                    .next()
                    .ok_or_else(|| Error::parse(line_no, "text-bound annotation without surface column"))?;
                let (etype, offsets) = body
                    .split_once(' ')
                    .ok_or_else(|| Error::parse(line_no, "expected `<TYPE> <start> <end>`"))?;
                let frags = parse_offsets(line_no, offsets)?;
                let mut pieces = Vec::new();
                for &(s, e) in &frags {
                    if e > n_chars {
                        return Err(Error::Offset(format!(
                            "line {line_no}: fragment {s}-{e} exceeds text length {n_chars}"
                        )));
                    }
                    pieces.push(char_slice(text, s, e).unwrap_or_default());
                }
                if squash_ws(&pieces.join(" ")) != squash_ws(surface) {
                    return Err(Error::Offset(format!(
                        "line {line_no}: text at {offsets} is `{}`, annotation says `{surface}`",
                        pieces.join(" ")
                    )));
                }
                let group = (frags.len() > 1).then(|| id.to_string());
                for (s, e) in frags {
                    let mut span = Span::new(s, e, etype);
                    span.fragment_group = group.clone();
                    span.ann_id = id.to_string();
                    doc.gold_spans.push(span);
                }
            }
            Some('N') => {
                // `Reference T1 NCBI_Taxonomy:562` or `OntoBiotope Annotation:T1 Referent:OBT:000001`
                let parts: Vec<&str> = body.split_whitespace().collect();
                let parsed = match parts.as_slice() {
                    [_, target, reference] if !target.contains(':') => reference
                        .split_once(':')
                        .map(|(res, rid)| (target.to_string(), res.to_string(), rid.to_string())),
                    [resource, target, referent] => {
                        let target = target.strip_prefix("Annotation:");
                        let rid = referent.strip_prefix("Referent:");
                        target.zip(rid).map(|(t, r)| (t.to_string(), resource.to_string(), r.to_string()))
                    }
                    _ => None,
                };
                let (target, res, rid) =
                    parsed.ok_or_else(|| Error::parse(line_no, format!("malformed normalization `{body}`")))?;
                norms.push((line_no, target, res, rid));
            }
            Some('R') | Some('E') => {
                let parts: Vec<&str> = body.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::parse(line_no, "relation must have a type and exactly two arguments"));
                }
                let rel_type = parts[0].split(':').next().unwrap_or_default().to_string();
                let mut args = Vec::with_capacity(2);
                for a in &parts[1..] {
                    let (role, target) = a
                        .split_once(':')
                        .ok_or_else(|| Error::parse(line_no, format!("argument `{a}` lacks a role")))?;
                    args.push((role.to_string(), target.to_string()));
                }
                let kind = if id.starts_with('R') {
                    RelationKind::Relation
                } else {
                    RelationKind::Event
                };
                let a2 = args.pop().unwrap();
                let a1 = args.pop().unwrap();
                doc.gold_relations.push(Relation {
                    id: id.to_string(),
                    kind,
                    rel_type,
                    args: [a1, a2],
                });
            }
            // attributes and notes carry nothing we use
            Some('A') | Some('M') => {}
            _ => return Err(Error::parse(line_no, format!("unknown annotation id `{id}`"))),
        }
    }

    for (line_no, target, res, rid) in norms {
        let mut hit = false;
        for span in doc.gold_spans.iter_mut().filter(|s| s.ann_id == target) {
            hit = true;
            if span.norm_id.is_none() {
                span.norm_id = Some(rid.clone());
                span.norm_resource = Some(res.clone());
            }
        }
        if !hit {
            return Err(Error::parse(line_no, format!("normalization refers to unknown `{target}`")));
        }
    }
    for rel in &doc.gold_relations {
        for (_, target) in &rel.args {
            let known = doc.gold_spans.iter().any(|s| &s.ann_id == target)
                || doc.gold_relations.iter().any(|r| &r.id == target);
            if !known {
                return Err(Error::Format(format!("relation {} refers to unknown `{target}`", rel.id)));
            }
        }
    }
    Ok(doc)
}

/// Serialize spans, normalizations and relations back to standoff text.
///
/// Spans without an `ann_id` are numbered after the highest existing id.
pub fn write_brat(doc: &Document) -> String {
    let mut out = String::new();
    let mut groups: Vec<(String, Vec<&Span>)> = Vec::new();
    let mut next_free = doc
        .gold_spans
        .iter()
        .filter_map(|s| s.ann_id.strip_prefix('T')?.parse::<usize>().ok())
        .max()
        .unwrap_or(0)
        + 1;
    for span in &doc.gold_spans {
        let key = if span.ann_id.is_empty() {
            let id = format!("T{next_free}");
            next_free += 1;
            id
        } else {
            span.ann_id.clone()
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(span),
            None => groups.push((key, vec![span])),
        }
    }
    let chars: Vec<char> = doc.text.chars().collect();
    let mut norm_k = 1;
    for (id, spans) in &groups {
        let first = spans[0];
        let offsets = spans
            .iter()
            .map(|s| format!("{} {}", s.char_start, s.char_end))
            .collect::<Vec<_>>()
            .join(";");
        let surface = spans
            .iter()
            .map(|s| {
                let end = s.char_end.min(chars.len());
                let start = s.char_start.min(end);
                chars[start..end].iter().collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(out, "{id}\t{} {offsets}\t{}", first.entity_type, squash_ws(&surface));
        if let Some(nid) = &first.norm_id {
            let res = first.norm_resource.as_deref().unwrap_or("Reference");
            let _ = writeln!(out, "N{norm_k}\tReference {id} {res}:{nid}");
            norm_k += 1;
        }
    }
    for rel in &doc.gold_relations {
        let _ = writeln!(
            out,
            "{}\t{} {}:{} {}:{}",
            rel.id, rel.rel_type, rel.args[0].0, rel.args[0].1, rel.args[1].0, rel.args[1].1
        );
    }
    out
}

/// Parse a CoNLL-style token file and align the surfaces to `text`.
///
/// Columns (tab-separated): surface, POS, head, relation, lemma. Only the
/// surface is required; `_` means absent. Heads are 1-based with 0 for the
/// root. Sentences are separated by blank lines.
pub fn parse_conll(text: &str, conll: &str) -> Result<Vec<Vec<Token>>> {
    let chars: Vec<char> = text.chars().collect();
    let mut cursor = 0usize;
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut heads: Vec<(usize, usize)> = Vec::new();

    let finish = |current: &mut Vec<Token>, heads: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<Token>>| -> Result<()> {
        if current.is_empty() {
            return Ok(());
        }
        for &(line_no, h) in heads.iter() {
            if h > current.len() {
                return Err(Error::parse(line_no, format!("head {h} outside sentence of {} tokens", current.len())));
            }
        }
        out.push(std::mem::take(current));
        heads.clear();
        Ok(())
    };

    for (idx, raw) in conll.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut current, &mut heads, &mut sentences)?;
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let col = |i: usize| cols.get(i).copied().filter(|c| !c.is_empty() && *c != "_");
        let surface = cols[0];
        let surf_chars: Vec<char> = surface.chars().collect();
        if surf_chars.is_empty() {
            return Err(Error::parse(line_no, "empty token surface"));
        }
        let mut found = None;
        let mut s = cursor;
        while s + surf_chars.len() <= chars.len() {
            if chars[s..s + surf_chars.len()] == surf_chars[..] {
                found = Some(s);
                break;
            }
            s += 1;
        }
        let start = found.ok_or_else(|| {
            Error::Offset(format!("line {line_no}: token `{surface}` not found in text after offset {cursor}"))
        })?;
        cursor = start + surf_chars.len();
        let dep_head = match col(2) {
            None => None,
            Some(h) => {
                let h: usize = h
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("head `{h}` is not an integer")))?;
                heads.push((line_no, h));
                h.checked_sub(1)
            }
        };
        current.push(Token {
            surface: surface.to_string(),
            char_start: start,
            char_end: cursor,
            pos: col(1).unwrap_or_default().to_string(),
            dep_head,
            dep_rel: col(3).map(str::to_string),
            lemma: col(4).map(str::to_string),
        });
    }
    finish(&mut current, &mut heads, &mut sentences)?;
    Ok(sentences)
}

/// Inverse of [`parse_conll`].
pub fn write_conll(sentences: &[Vec<Token>]) -> String {
    let mut out = String::new();
    for sent in sentences {
        for t in sent {
            let head = t.dep_head.map(|h| (h + 1).to_string()).unwrap_or_else(|| "0".into());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                t.surface,
                if t.pos.is_empty() { "_" } else { &t.pos },
                head,
                t.dep_rel.as_deref().unwrap_or("_"),
                t.lemma.as_deref().unwrap_or("_")
            );
        }
        out.push('\n');
    }
    out
}

/// Load `<doc_id>.txt`, its annotations (`.ann`, or `.a1` + `.a2`) and
/// tokens (`.conll`, falling back to whitespace tokens as one sentence per
/// line) from `dir`.
pub fn read_document(dir: &Path, doc_id: &str) -> Result<Document> {
    let read = |ext: &str| -> Result<Option<String>> {
        let p = dir.join(format!("{doc_id}.{ext}"));
        match fs::read_to_string(&p) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(p, e)),
        }
    };
    let text = read("txt")?.ok_or_else(|| Error::MissingArtifact {
        path: dir.join(format!("{doc_id}.txt")),
        reason: "document text missing".into(),
    })?;
    let ann = match read("ann")? {
        Some(a) => a,
        None => {
            let mut a = read("a1")?.unwrap_or_default();
            if let Some(a2) = read("a2")? {
                if !a.is_empty() && !a.ends_with('\n') {
                    a.push('\n');
                }
                a.push_str(&a2);
            }
            a
        }
    };
    let mut doc = parse_brat(doc_id, &text, &ann)?;
    doc.sentences = match read("conll")? {
        Some(c) => parse_conll(&text, &c)?,
        None => line_sentences(&text),
    };
    Ok(doc)
}

fn line_sentences(text: &str) -> Vec<Vec<Token>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split('\n') {
        let toks: Vec<Token> = whitespace_tokens(line)
            .into_iter()
            .map(|mut t| {
                t.char_start += offset;
                t.char_end += offset;
                t
            })
            .collect();
        if !toks.is_empty() {
            out.push(toks);
        }
        offset += line.chars().count() + 1;
    }
    out
}

/// Sorted ids of all documents (`*.txt`) in `dir`.
pub fn list_documents(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

// ---------------------------------------------------------------------------
// Ontologies

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub synonyms: Vec<String>,
    pub obsolete: bool,
    /// `is_a` parents.
    pub parents: Vec<String>,
    /// Entity type the concept links to (`Habitat`, `Phenotype`, ...).
    pub entity_type: Option<String>,
}

impl Concept {
    pub fn new(id: &str, name: &str) -> Self {
        Concept {
            id: id.to_string(),
            name: name.to_string(),
            synonyms: Vec::new(),
            obsolete: false,
            parents: Vec::new(),
            entity_type: None,
        }
    }

    /// Name followed by synonyms, without duplicates.
    pub fn surfaces(&self) -> Vec<&str> {
        let mut out = vec![self.name.as_str()];
        for s in &self.synonyms {
            if !out.contains(&s.as_str()) {
                out.push(s);
            }
        }
        out
    }
}

fn unquote_synonym(value: &str) -> &str {
    let v = value.trim();
    if let Some(rest) = v.strip_prefix('"') {
        let mut escaped = false;
        for (i, c) in rest.char_indices() {
            match c {
                '\\' if !escaped => escaped = true,
                '"' if !escaped => return &rest[..i],
                _ => escaped = false,
            }
        }
        rest
    } else {
        v
    }
}

/// Parse an OBO 1.2 flat file. Every `[Term]` stanza becomes a concept;
/// obsolete terms are kept but flagged.
pub fn load_obo<R: Read>(reader: R) -> Result<Vec<Concept>> {
    let mut concepts = Vec::new();
    let mut current: Option<(usize, Concept, bool)> = None;
    let mut in_term = false;

    fn flush(current: &mut Option<(usize, Concept, bool)>, out: &mut Vec<Concept>) -> Result<()> {
        if let Some((line, c, has_id)) = current.take() {
            if !has_id {
                return Err(Error::parse(line, "[Term] stanza without id"));
            }
            out.push(c);
        }
        Ok(())
    }

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('!') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            flush(&mut current, &mut concepts)?;
            in_term = line == "[Term]";
            if in_term {
                current = Some((line_no, Concept::new("", ""), false));
            }
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            if in_term {
                return Err(Error::parse(line_no, format!("expected `tag: value`, got `{line}`")));
            }
            continue;
        };
        let Some((_, concept, has_id)) = current.as_mut() else {
            continue;
        };
        // trailing modifiers and comments
        let value = value.split(" ! ").next().unwrap_or_default().trim();
        match key.trim() {
            "id" => {
                concept.id = value.to_string();
                *has_id = true;
            }
            "name" => concept.name = value.to_string(),
            "synonym" => {
                let syn = unquote_synonym(value).to_string();
                if !syn.is_empty() && !concept.synonyms.contains(&syn) {
                    concept.synonyms.push(syn);
                }
            }
            "is_a" => concept
                .parents
                .push(value.split_whitespace().next().unwrap_or_default().to_string()),
            "is_obsolete" => concept.obsolete = value == "true",
            "namespace" => concept.entity_type = Some(value.to_string()),
            _ => {}
        }
    }
    flush(&mut current, &mut concepts)?;
    Ok(concepts)
}

/// Assign `entity_type` to every concept below one of `roots` through `is_a`
/// links. Concepts under several roots take the first root listed.
pub fn assign_types_by_root(concepts: &mut [Concept], roots: &[(&str, &str)]) {
    let by_id: HashMap<String, Vec<String>> = concepts
        .iter()
        .map(|c| (c.id.clone(), c.parents.clone()))
        .collect();
    for c in concepts.iter_mut() {
        let mut stack = vec![c.id.clone()];
        let mut seen = std::collections::HashSet::new();
        let mut reached = Vec::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(pos) = roots.iter().position(|(r, _)| *r == id) {
                reached.push(pos);
            }
            if let Some(ps) = by_id.get(&id) {
                stack.extend(ps.iter().cloned());
            }
        }
        if let Some(pos) = reached.into_iter().min() {
            c.entity_type = Some(roots[pos].1.to_string());
        }
    }
}

/// Which NCBI name classes to index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NcbiNameClasses {
    #[default]
    All,
    ScientificOnly,
    Only(Vec<String>),
}

impl NcbiNameClasses {
    fn accepts(&self, class: &str) -> bool {
        match self {
            NcbiNameClasses::All => true,
            NcbiNameClasses::ScientificOnly => class == "scientific name",
            NcbiNameClasses::Only(list) => class == "scientific name" || list.iter().any(|c| c == class),
        }
    }
}

/// Parse NCBI `names.dmp` rows, grouped by tax id (ascending).
pub fn load_ncbi_names<R: Read>(reader: R, classes: &NcbiNameClasses) -> Result<Vec<Concept>> {
    let mut grouped: BTreeMap<u64, (Option<String>, Vec<String>)> = BTreeMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('|').map(str::trim).collect();
        if cols.len() < 4 {
            return Err(Error::parse(line_no, "expected 4 pipe-delimited columns"));
        }
        let tax_id: u64 = cols[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("tax id `{}` is not an integer", cols[0])))?;
        let (name, class) = (cols[1], cols[3]);
        if name.is_empty() || !classes.accepts(class) {
            continue;
        }
        let entry = grouped.entry(tax_id).or_default();
        if class == "scientific name" && entry.0.is_none() {
            entry.0 = Some(name.to_string());
        } else if !entry.1.iter().any(|s| s == name) {
            entry.1.push(name.to_string());
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(tax_id, (sci, mut others))| {
            let name = match sci {
                Some(n) => n,
                None => others.remove(0),
            };
            others.retain(|s| *s != name);
            let mut c = Concept::new(&tax_id.to_string(), &name);
            c.synonyms = others;
            c.entity_type = Some("Microorganism".into());
            c
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Embeddings

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovStrategy {
    /// Mean of all in-vocabulary vectors.
    #[default]
    Mean,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    oov: Vec<f64>,
    strategy: OovStrategy,
}

impl EmbeddingTable {
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>, strategy: OovStrategy) -> Result<Self> {
        let dim = rows.first().map(|r| r.1.len()).unwrap_or(0);
        let mut table = EmbeddingTable {
            dim,
            words: Vec::with_capacity(rows.len()),
            index: HashMap::with_capacity(rows.len()),
            data: Vec::with_capacity(rows.len() * dim),
            oov: vec![0.0; dim],
            strategy,
        };
        for (word, vec) in rows {
            if vec.len() != dim {
                return Err(Error::Format(format!(
                    "vector for `{word}` has dimension {}, expected {dim}",
                    vec.len()
                )));
            }
            if table.index.contains_key(&word) {
                continue;
            }
            table.index.insert(word.clone(), table.words.len());
            table.words.push(word);
            table.data.extend(vec);
        }
        table.set_oov_strategy(strategy);
        Ok(table)
    }

    pub fn set_oov_strategy(&mut self, strategy: OovStrategy) {
        self.strategy = strategy;
        self.oov = vec![0.0; self.dim];
        if strategy == OovStrategy::Mean && !self.words.is_empty() {
            for row in self.data.chunks(self.dim.max(1)) {
                for (o, v) in self.oov.iter_mut().zip(row) {
                    *o += v;
                }
            }
            let n = self.words.len() as f64;
            self.oov.iter_mut().for_each(|o| *o /= n);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        let i = *self.index.get(word)?;
        Some(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Vector for `word`, or the OOV vector.
    pub fn lookup(&self, word: &str) -> &[f64] {
        self.get(word).unwrap_or(&self.oov)
    }

    pub fn oov_vector(&self) -> &[f64] {
        &self.oov
    }

    /// Feature-wise concatenation over the union of both vocabularies.
    /// Words missing from one side take that side's OOV vector.
    pub fn concat(&self, other: &EmbeddingTable) -> Result<EmbeddingTable> {
        let mut rows = Vec::with_capacity(self.len() + other.len());
        let mut order: Vec<&String> = self.words.iter().collect();
        order.extend(other.words.iter().filter(|w| !self.index.contains_key(*w)));
        for w in order {
            let mut v = self.lookup(w).to_vec();
            v.extend_from_slice(other.lookup(w));
            rows.push((w.clone(), v));
        }
        let mut t = EmbeddingTable::from_rows(rows, self.strategy)?;
        if t.is_empty() {
            t.dim = self.dim + other.dim;
            t.set_oov_strategy(self.strategy);
        }
        Ok(t)
    }
}

/// Read a whitespace-delimited embedding text file with an optional
/// `<count> <dim>` header.
pub fn load_embeddings<R: Read>(reader: R, strategy: OovStrategy) -> Result<EmbeddingTable> {
    let mut rows = Vec::new();
    let mut header: Option<(usize, usize)> = None;
    let mut dim: Option<usize> = None;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if idx == 0 && parts.len() == 2 {
            if let (Ok(c), Ok(d)) = (parts[0].parse::<usize>(), parts[1].parse::<usize>()) {
                header = Some((c, d));
                dim = Some(d);
                continue;
            }
        }
        let vals = parts[1..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(line_no, format!("non-numeric component for `{}`", parts[0])))?;
        match dim {
            Some(d) if d != vals.len() => {
                return Err(Error::Format(format!(
                    "line {line_no}: `{}` has {} components, expected {d}",
                    parts[0],
                    vals.len()
                )))
            }
            None => dim = Some(vals.len()),
            _ => {}
        }
        rows.push((parts[0].to_string(), vals));
    }
    if let Some((count, _)) = header {
        if count != rows.len() {
            return Err(Error::Format(format!("header announces {count} vectors, found {}", rows.len())));
        }
    }
    let mut table = EmbeddingTable::from_rows(rows, strategy)?;
    if table.is_empty() {
        table.dim = dim.unwrap_or(0);
        table.set_oov_strategy(strategy);
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Folds

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    /// 1-based. Fold 1 is the "confident" model used to break ties.
    pub fold_id: usize,
    pub train_doc_ids: Vec<String>,
    pub dev_doc_ids: Vec<String>,
}

/// Shuffle documents with `seed` and cut them into `n` dev blocks.
pub fn make_folds(doc_ids: &[String], n: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {n}")));
    }
    if doc_ids.len() < n {
        return Err(Error::Argument(format!("{} documents cannot fill {n} folds", doc_ids.len())));
    }
    let mut ids = doc_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < n {
        return Err(Error::Argument(format!("{} distinct documents cannot fill {n} folds", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let base = ids.len() / n;
    let extra = ids.len() % n;
    let mut blocks = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        blocks.push(ids[start..start + size].to_vec());
        start += size;
    }
    Ok((0..n)
        .map(|i| FoldSplit {
            fold_id: i + 1,
            dev_doc_ids: blocks[i].clone(),
            train_doc_ids: blocks
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, b)| b.iter().cloned())
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_text_bound_line() {
        let doc = parse_brat("d", "fish pathogen Vibrio", "T1\tHabitat 0 4\tfish").unwrap();
        assert_eq!(doc.gold_spans.len(), 1);
        let s = &doc.gold_spans[0];
        assert_eq!((s.char_start, s.char_end, s.entity_type.as_str()), (0, 4, "Habitat"));
        assert_eq!(s.fragment_group, None);
    }

    #[test]
    fn discontinuous_entity_becomes_fragments() {
        let text = "fish and some fish";
        let doc = parse_brat("d", text, "T2\tHabitat 0 4;14 18\tfish fish").unwrap();
        assert_eq!(doc.gold_spans.len(), 2);
        assert_eq!(doc.gold_spans[0].fragment_group, Some("T2".into()));
        assert_eq!(doc.gold_spans[0].fragment_group, doc.gold_spans[1].fragment_group);
        let again = parse_brat("d", text, &write_brat(&doc)).unwrap();
        assert_eq!(again.gold_spans, doc.gold_spans);
    }

    #[test]
    fn out_of_range_offset() {
        let err = parse_brat("d", "0123456789", "T1\tHabitat 0 999\tx").unwrap_err();
        assert!(matches!(err, Error::Offset(_)), "{err}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse_brat("d", "fish", "T1\tHabitat 0 4\tfish\nT2 Habitat 0 4").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn surface_mismatch_is_offset_error() {
        let err = parse_brat("d", "fish farm", "T1\tHabitat 0 4\tfarm").unwrap_err();
        assert!(matches!(err, Error::Offset(_)));
    }

    #[test]
    fn normalizations_and_relations() {
        let text = "Vibrio lives in fish";
        let ann = "T1\tMicroorganism 0 6\tVibrio\nT2\tHabitat 16 20\tfish\n\
                   N1\tReference T1 NCBI_Taxonomy:662\n\
                   N2\tOntoBiotope Annotation:T2 Referent:OBT:000001\n\
                   R1\tLives_In Microorganism:T1 Location:T2\n";
        let doc = parse_brat("d", text, ann).unwrap();
        assert_eq!(doc.gold_spans[0].norm_id.as_deref(), Some("662"));
        assert_eq!(doc.gold_spans[0].norm_resource.as_deref(), Some("NCBI_Taxonomy"));
        assert_eq!(doc.gold_spans[1].norm_id.as_deref(), Some("OBT:000001"));
        assert_eq!(doc.gold_relations[0].arg1(), "T1");
        assert_eq!(doc.gold_relations[0].args[1].0, "Location");
        let round = parse_brat("d", text, &write_brat(&doc)).unwrap();
        assert_eq!(round.gold_spans, doc.gold_spans);
        assert_eq!(round.gold_relations, doc.gold_relations);
    }

    #[test]
    fn conll_alignment_and_heads() {
        let text = "Vibrio  lives in fish.";
        let conll = "Vibrio\tNNP\t2\tnsubj\tvibrio\nlives\tVBZ\t0\troot\tlive\nin\tIN\t4\tcase\t_\nfish\tNN\t2\tobl\tfish\n.\t.\t2\tpunct\t.\n";
        let sents = parse_conll(text, conll).unwrap();
        assert_eq!(sents.len(), 1);
        let s = &sents[0];
        assert_eq!((s[1].char_start, s[1].char_end), (8, 13));
        assert_eq!(s[0].dep_head, Some(1));
        assert_eq!(s[1].dep_head, None);
        assert_eq!(s[2].lemma, None);
        assert_eq!(s[4].surface, ".");
        for t in s {
            assert_eq!(char_slice(text, t.char_start, t.char_end).unwrap(), t.surface);
        }
        assert_eq!(parse_conll(text, &write_conll(&sents)).unwrap(), sents);
    }

    #[test]
    fn conll_unknown_token_is_error() {
        assert!(parse_conll("abc", "xyz\n").is_err());
    }

    #[test]
    fn obo_stanza_fields() {
        let obo = "format-version: 1.2\n\n[Term]\nid: OBT:000001\nname: X\n\
                   synonym: \"first\" EXACT []\nsynonym: \"second\" RELATED []\n\n\
                   [Term]\nid: OBT:000002\nname: gone\nis_obsolete: true\n\n[Typedef]\nid: part_of\n";
        let cs = load_obo(obo.as_bytes()).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].surfaces(), vec!["X", "first", "second"]);
        assert!(cs[1].obsolete);
    }

    #[test]
    fn obo_empty_and_missing_id() {
        assert!(load_obo("".as_bytes()).unwrap().is_empty());
        let err = load_obo("[Term]\nname: nameless\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn obo_types_by_root() {
        let obo = "[Term]\nid: R1\nname: habitat\n\n[Term]\nid: A\nname: a\nis_a: R1 ! habitat\n\n\
                   [Term]\nid: B\nname: b\nis_a: A\n\n[Term]\nid: R2\nname: phenotype\n";
        let mut cs = load_obo(obo.as_bytes()).unwrap();
        assign_types_by_root(&mut cs, &[("R1", "Habitat"), ("R2", "Phenotype")]);
        let types: Vec<_> = cs.iter().map(|c| c.entity_type.as_deref()).collect();
        assert_eq!(types, vec![Some("Habitat"), Some("Habitat"), Some("Habitat"), Some("Phenotype")]);
    }

    #[test]
    fn ncbi_grouping_and_dedup() {
        let dmp = "562\t|\tEscherichia coli\t|\t\t|\tscientific name\t|\n\
                   562\t|\tBacillus coli\t|\t\t|\tsynonym\t|\n\
                   562\t|\tBacterium coli\t|\t\t|\tsynonym\t|\n\
                   562\t|\tBacterium coli\t|\t\t|\tsynonym\t|\n";
        let cs = load_ncbi_names(dmp.as_bytes(), &NcbiNameClasses::All).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].name, "Escherichia coli");
        assert_eq!(cs[0].surfaces().len(), 3);
        let sci = load_ncbi_names(dmp.as_bytes(), &NcbiNameClasses::ScientificOnly).unwrap();
        assert_eq!(sci[0].surfaces().len(), 1);
        assert!(load_ncbi_names("x\t|\ty\t|\t\t|\tsynonym\t|\n".as_bytes(), &NcbiNameClasses::All).is_err());
    }

    #[test]
    fn embeddings_header_and_dims() {
        let t = load_embeddings("a 1 2 3\nb 4 5 6\n".as_bytes(), OovStrategy::Mean).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert_eq!(t.lookup("zzz"), &[2.5, 3.5, 4.5]);
        let err = load_embeddings("5 100\na 1\nb 1\nc 1\nd 1\n".as_bytes(), OovStrategy::Mean).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(load_embeddings("a 1 2\nb 1\n".as_bytes(), OovStrategy::Zero).is_err());
    }

    #[test]
    fn embeddings_concat_dimension() {
        let a = load_embeddings("x 1 2\ny 3 4\n".as_bytes(), OovStrategy::Zero).unwrap();
        let b = load_embeddings("x 5\ny 6\n".as_bytes(), OovStrategy::Zero).unwrap();
        let c = a.concat(&b).unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.lookup("y"), &[3.0, 4.0, 6.0]);
    }

    #[test]
    fn folds_partition_and_determinism() {
        let ids: Vec<String> = (0..6).map(|i| format!("d{i}")).collect();
        let folds = make_folds(&ids, 3, 7).unwrap();
        for id in &ids {
            let dev = folds.iter().filter(|f| f.dev_doc_ids.contains(id)).count();
            let train = folds.iter().filter(|f| f.train_doc_ids.contains(id)).count();
            assert_eq!((dev, train), (1, 2));
        }
        assert_eq!(folds, make_folds(&ids, 3, 7).unwrap());
        assert!(make_folds(&ids[..2], 3, 7).is_err());
    }
}
