//! Model checkpoint container.
//!
//! ```text
//! magic        8 bytes  "BIOXTAG\0"
//! version      u32 LE
//! header_len   u64 LE
//! header       JSON: config, feature tables, labels, LM vocabulary and
//!              the tensor directory [{name, rows, cols}]
//! tensors      for each directory entry, rows·cols f64 LE, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gru::Gru;
use super::params::{DenseParams, TaggerParams};
use super::{TaggerConfig, TaggerModel};
use crate::error::{Error, Result};
use crate::features::{FeatureTables, Vocab};
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BIOXTAG\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TaggerConfig,
    tables: FeatureTables,
    labels: Vec<String>,
    lm_vocab: Vocab,
    tensors: Vec<TensorEntry>,
}

pub fn write_model<W: Write>(model: &TaggerModel, mut w: W) -> Result<()> {
    let named = model.params.named();
    let header = Header {
        config: model.config.clone(),
        tables: model.tables.clone(),
        labels: model.labels.clone(),
        lm_vocab: model.lm_vocab.clone(),
        tensors: named
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows,
                cols: m.cols,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, m) in named {
        for v in &m.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("checkpoint truncated in {what}: {e}")))?;
    Ok(buf)
}

pub fn read_model<R: Read>(mut r: R) -> Result<TaggerModel> {
    if read_exact(&mut r, 8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a tagger checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(read_exact(&mut r, 8, "header length")?.try_into().unwrap());
    let json = read_exact(&mut r, len as usize, "header")?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut mats = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let bytes = read_exact(&mut r, t.rows * t.cols * 8, &t.name)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        mats.push(Matrix {
            rows: t.rows,
            cols: t.cols,
            data,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after tensors", rest.len())));
    }

    // Rebuild the parameter struct and check the directory against it.
    let c = &header.config;
    let template_gru = |i, h| Gru::zeros(i, h);
    let mut params = TaggerParams {
        tables: vec![Matrix::zeros(0, 0); super::EmbTable::ALL.len()],
        dense: DenseParams {
            char_fwd: template_gru(c.char_dim, c.char_hidden),
            char_bwd: template_gru(c.char_dim, c.char_hidden),
            word_fwd: template_gru(c.input_dim(), c.word_hidden),
            word_bwd: template_gru(c.input_dim(), c.word_hidden),
            ner_w: Matrix::zeros(0, 0),
            ner_b: Matrix::zeros(0, 0),
            ned_w: Matrix::zeros(0, 0),
            ned_b: Matrix::zeros(0, 0),
            lm_fwd_w: Matrix::zeros(0, 0),
            lm_fwd_b: Matrix::zeros(0, 0),
            lm_bwd_w: Matrix::zeros(0, 0),
            lm_bwd_b: Matrix::zeros(0, 0),
            transitions: Matrix::zeros(0, 0),
        },
    };
    let expected: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let found: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if expected != found {
        return Err(Error::Format("checkpoint tensor directory does not match the model layout".into()));
    }
    for (slot, (m, t)) in params.mats_mut().into_iter().zip(mats.into_iter().zip(&header.tensors)) {
        // Only the recurrent templates carry a shape implied by the config.
        let templated = !slot.data.is_empty();
        if templated && (slot.rows, slot.cols) != (m.rows, m.cols) {
            return Err(Error::Format(format!(
                "tensor {} is {}x{}, config implies {}x{}",
                t.name, m.rows, m.cols, slot.rows, slot.cols
            )));
        }
        *slot = m;
    }
    TaggerModel::from_parts(header.config, header.tables, header.labels, header.lm_vocab, params)
}

pub fn save_model(model: &TaggerModel, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(model, BufWriter::new(f))
}

pub fn load_model(path: &Path) -> Result<TaggerModel> {
    let f = File::open(path).map_err(|e| Error::MissingArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    read_model(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::super::LabeledSentence;
    use super::*;
    use crate::corpus::whitespace_tokens;

    #[test]
    fn round_trip_is_bit_exact() {
        let s = LabeledSentence {
            tokens: whitespace_tokens("Vibrio lives in fish"),
            tags: ["S-M", "O", "O", "S-H"].map(String::from).to_vec(),
        };
        let m = TaggerModel::new(tiny_config(), std::slice::from_ref(&s), [], None).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let before = m.emissions(&s.tokens).unwrap();
        let after = back.emissions(&s.tokens).unwrap();
        assert!(before.data.iter().zip(&after.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_model(&b"NOTAMODEL..."[..]).is_err());
        let s = LabeledSentence {
            tokens: whitespace_tokens("fish"),
            tags: vec!["S-H".into()],
        };
        let m = TaggerModel::new(tiny_config(), std::slice::from_ref(&s), [], None).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_model(buf.as_slice()).is_err());
    }
}
