use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{Gru, GRU_PARTS};
use crate::linalg::Matrix;

/// Embedding tables, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbTable {
    Word,
    Char,
    Pos,
    Ortho,
    Cap,
    Trigram,
    Fivegram,
    Length,
    SdpRel,
}

impl EmbTable {
    pub const ALL: [EmbTable; 9] = [
        EmbTable::Word,
        EmbTable::Char,
        EmbTable::Pos,
        EmbTable::Ortho,
        EmbTable::Cap,
        EmbTable::Trigram,
        EmbTable::Fivegram,
        EmbTable::Length,
        EmbTable::SdpRel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmbTable::Word => "emb.word",
            EmbTable::Char => "emb.char",
            EmbTable::Pos => "emb.pos",
            EmbTable::Ortho => "emb.ortho",
            EmbTable::Cap => "emb.cap",
            EmbTable::Trigram => "emb.trigram",
            EmbTable::Fivegram => "emb.fivegram",
            EmbTable::Length => "emb.length",
            EmbTable::SdpRel => "emb.sdp_rel",
        }
    }
}

/// Every non-embedding parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub char_fwd: Gru,
    pub char_bwd: Gru,
    pub word_fwd: Gru,
    pub word_bwd: Gru,
    pub ner_w: Matrix,
    pub ner_b: Matrix,
    pub ned_w: Matrix,
    pub ned_b: Matrix,
    pub lm_fwd_w: Matrix,
    pub lm_fwd_b: Matrix,
    pub lm_bwd_w: Matrix,
    pub lm_bwd_b: Matrix,
    pub transitions: Matrix,
}

impl DenseParams {
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (prefix, g) in [
            ("char_fwd", &self.char_fwd),
            ("char_bwd", &self.char_bwd),
            ("word_fwd", &self.word_fwd),
            ("word_bwd", &self.word_bwd),
        ] {
            for (part, m) in GRU_PARTS.iter().zip(g.mats()) {
                out.push((format!("{prefix}.{part}"), m));
            }
        }
        out.extend([
            ("ner.w".to_string(), &self.ner_w),
            ("ner.b".to_string(), &self.ner_b),
            ("ned.w".to_string(), &self.ned_w),
            ("ned.b".to_string(), &self.ned_b),
            ("lm_fwd.w".to_string(), &self.lm_fwd_w),
            ("lm_fwd.b".to_string(), &self.lm_fwd_b),
            ("lm_bwd.w".to_string(), &self.lm_bwd_w),
            ("lm_bwd.b".to_string(), &self.lm_bwd_b),
            ("crf.transitions".to_string(), &self.transitions),
        ]);
        out
    }

    /// Same order as [`DenseParams::named`].
    pub fn mats_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.extend(self.char_fwd.mats_mut());
        out.extend(self.char_bwd.mats_mut());
        out.extend(self.word_fwd.mats_mut());
        out.extend(self.word_bwd.mats_mut());
        out.extend([
            &mut self.ner_w,
            &mut self.ner_b,
            &mut self.ned_w,
            &mut self.ned_b,
            &mut self.lm_fwd_w,
            &mut self.lm_fwd_b,
            &mut self.lm_bwd_w,
            &mut self.lm_bwd_b,
            &mut self.transitions,
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        DenseParams {
            char_fwd: self.char_fwd.zeros_like(),
            char_bwd: self.char_bwd.zeros_like(),
            word_fwd: self.word_fwd.zeros_like(),
            word_bwd: self.word_bwd.zeros_like(),
            ner_w: self.ner_w.zeros_like(),
            ner_b: self.ner_b.zeros_like(),
            ned_w: self.ned_w.zeros_like(),
            ned_b: self.ned_b.zeros_like(),
            lm_fwd_w: self.lm_fwd_w.zeros_like(),
            lm_fwd_b: self.lm_fwd_b.zeros_like(),
            lm_bwd_w: self.lm_bwd_w.zeros_like(),
            lm_bwd_b: self.lm_bwd_b.zeros_like(),
            transitions: self.transitions.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerParams {
    /// Indexed by [`EmbTable`] discriminant.
    pub tables: Vec<Matrix>,
    pub dense: DenseParams,
}

impl TaggerParams {
    pub fn table(&self, t: EmbTable) -> &Matrix {
        &self.tables[t as usize]
    }

    pub fn table_mut(&mut self, t: EmbTable) -> &mut Matrix {
        &mut self.tables[t as usize]
    }

    /// All tensors with stable names: embedding tables first, then dense.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = EmbTable::ALL
            .iter()
            .map(|t| (t.name().to_string(), self.table(*t)))
            .collect();
        out.extend(self.dense.named());
        out
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.tables.iter_mut().collect();
        out.extend(self.dense.mats_mut());
        out
    }

    /// Every entry, set to zero.
    pub fn zero(&mut self) {
        for m in self.mats_mut() {
            m.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub(crate) fn init_uniform<R: Rng>(m: &mut Matrix, scale: f64, rng: &mut R) {
        m.data.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

/// Gradient of the training loss. Embedding tables are sparse by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tables: Vec<BTreeMap<usize, Vec<f64>>>,
    pub dense: DenseParams,
}

impl Gradients {
    pub fn zeros_for(params: &TaggerParams) -> Self {
        Gradients {
            tables: vec![BTreeMap::new(); params.tables.len()],
            dense: params.dense.zeros_like(),
        }
    }

    pub(crate) fn table_row(&mut self, t: EmbTable, row: usize, dim: usize) -> &mut Vec<f64> {
        self.tables[t as usize].entry(row).or_insert_with(|| vec![0.0; dim])
    }

    /// Gradient entry for tensor `tensor` (index into [`TaggerParams::named`])
    /// at flat position `idx`.
    pub fn entry(&self, params: &TaggerParams, tensor: usize, idx: usize) -> f64 {
        let n_tables = self.tables.len();
        if tensor < n_tables {
            let cols = params.tables[tensor].cols;
            self.tables[tensor]
                .get(&(idx / cols))
                .map_or(0.0, |row| row[idx % cols])
        } else {
            self.dense.named()[tensor - n_tables].1.data[idx]
        }
    }

    pub fn sq_norm(&self) -> f64 {
        let sparse: f64 = self.tables.iter().flat_map(|t| t.values()).flatten().map(|v| v * v).sum();
        sparse + self.dense.named().iter().map(|(_, m)| m.sq_norm()).sum::<f64>()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tables {
            t.values_mut().flatten().for_each(|v| *v *= factor);
        }
        for m in self.dense.mats_mut() {
            m.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sq_norm().is_finite()
    }

    /// `params -= lr · self`
    pub fn apply_sgd(&self, params: &mut TaggerParams, lr: f64) {
        for (t, rows) in self.tables.iter().enumerate() {
            let table = &mut params.tables[t];
            for (&r, g) in rows {
                for (p, g) in table.row_mut(r).iter_mut().zip(g) {
                    *p -= lr * g;
                }
            }
        }
        let grads = self.dense.named();
        for (p, (_, g)) in params.dense.mats_mut().into_iter().zip(grads) {
            for (p, g) in p.data.iter_mut().zip(&g.data) {
                *p -= lr * g;
            }
        }
    }
}
