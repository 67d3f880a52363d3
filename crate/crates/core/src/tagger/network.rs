use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gru::GruStep;
use super::loss::hybrid_loss;
use super::params::{EmbTable, Gradients};
use super::{LabeledSentence, TaggerModel, BOS, EOS};
use crate::error::{Error, Result};
use crate::features::{featurize_sentence, word_key, TokenFeatures};
use crate::linalg::{softmax_xent, Matrix};
use crate::tags::collapse_types;

/// Output classes of the detection head.
pub const NED_TAGS: [&str; 5] = ["O", "B", "I", "E", "S"];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub crf: f64,
    pub ranking: f64,
    /// Already multiplied by the auxiliary weight.
    pub multitask: f64,
}

pub(crate) struct Encoded {
    pub h: Vec<Vec<f64>>,
    feats: Vec<TokenFeatures>,
    char_fwd: Vec<Vec<GruStep>>,
    char_bwd: Vec<Vec<GruStep>>,
    masks: Option<Vec<Vec<f64>>>,
    word_fwd: Vec<GruStep>,
    word_bwd: Vec<GruStep>,
}

/// Embedding lookups of one token in input-vector order, excluding the
/// character summary (which sits right after the word vector).
fn lookups(f: &TokenFeatures) -> [(EmbTable, usize); 9] {
    [
        (EmbTable::Pos, f.pos_id),
        (EmbTable::Ortho, f.ortho_id),
        (EmbTable::Cap, f.cap_class.index()),
        (EmbTable::Trigram, f.trigram_ids[0]),
        (EmbTable::Trigram, f.trigram_ids[1]),
        (EmbTable::Fivegram, f.fivegram_ids[0]),
        (EmbTable::Fivegram, f.fivegram_ids[1]),
        (EmbTable::Length, f.length_bucket),
        (EmbTable::SdpRel, f.sdp_rel_id),
    ]
}

fn check_bounds(model: &TaggerModel, f: &TokenFeatures) -> Result<()> {
    let p = &model.params;
    let mut all = vec![(EmbTable::Word, f.word_id)];
    all.extend(lookups(f));
    all.extend(f.char_ids.iter().map(|&c| (EmbTable::Char, c)));
    for (t, id) in all {
        if id >= p.table(t).rows {
            return Err(Error::Internal(format!(
                "{} index {id} outside table of {} rows (vocabulary drift)",
                t.name(),
                p.table(t).rows
            )));
        }
    }
    Ok(())
}

pub(crate) fn encode(model: &TaggerModel, feats: &[TokenFeatures], mut dropout: Option<&mut ChaCha8Rng>) -> Result<Encoded> {
    let p = &model.params;
    let d = &p.dense;
    let ch = model.config.char_hidden;
    let mut xs = Vec::with_capacity(feats.len());
    let mut char_fwd = Vec::with_capacity(feats.len());
    let mut char_bwd = Vec::with_capacity(feats.len());
    for f in feats {
        check_bounds(model, f)?;
        let chars: Vec<Vec<f64>> = f.char_ids.iter().map(|&c| p.table(EmbTable::Char).row(c).to_vec()).collect();
        let rev: Vec<Vec<f64>> = chars.iter().rev().cloned().collect();
        let (fs, fsteps) = d.char_fwd.forward(&chars);
        let (bs, bsteps) = d.char_bwd.forward(&rev);
        let mut x = p.table(EmbTable::Word).row(f.word_id).to_vec();
        x.extend(fs.last().cloned().unwrap_or_else(|| vec![0.0; ch]));
        x.extend(bs.last().cloned().unwrap_or_else(|| vec![0.0; ch]));
        for (t, id) in lookups(f) {
            x.extend_from_slice(p.table(t).row(id));
        }
        x.push(f64::from(f.alpha_flags[0]));
        x.push(f64::from(f.alpha_flags[1]));
        debug_assert_eq!(x.len(), model.config.input_dim());
        xs.push(x);
        char_fwd.push(fsteps);
        char_bwd.push(bsteps);
    }

    let rate = model.config.dropout;
    let masks = match dropout.as_deref_mut() {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let masks: Vec<Vec<f64>> = xs
                .iter()
                .map(|x| x.iter().map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect())
                .collect();
            for (x, m) in xs.iter_mut().zip(&masks) {
                x.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
            }
            Some(masks)
        }
        _ => None,
    };

    let (fs, word_fwd) = d.word_fwd.forward(&xs);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let (mut bs, word_bwd) = d.word_bwd.forward(&rev);
    bs.reverse();
    let h = fs
        .into_iter()
        .zip(bs)
        .map(|(mut f, b)| {
            f.extend(b);
            f
        })
        .collect();
    Ok(Encoded {
        h,
        feats: feats.to_vec(),
        char_fwd,
        char_bwd,
        masks,
        word_fwd,
        word_bwd,
    })
}

pub(crate) fn emissions(model: &TaggerModel, h: &[Vec<f64>]) -> Matrix {
    let d = &model.params.dense;
    let k = model.labels.len();
    let mut p = Matrix::zeros(h.len(), k);
    for (i, hi) in h.iter().enumerate() {
        let row = p.row_mut(i);
        row.copy_from_slice(&d.ner_b.data);
        d.ner_w.matvec_acc(hi, row);
    }
    p
}

fn backward_encoder(model: &TaggerModel, enc: &Encoded, dh: &[Vec<f64>], grads: &mut Gradients) {
    let p = &model.params;
    let d = &p.dense;
    let cfg = &model.config;
    let hd = cfg.word_hidden;
    let n = dh.len();
    let df: Vec<Vec<f64>> = dh.iter().map(|g| g[..hd].to_vec()).collect();
    let db_rev: Vec<Vec<f64>> = dh.iter().rev().map(|g| g[hd..].to_vec()).collect();
    let dx_f = d.word_fwd.backward(&enc.word_fwd, &df, &mut grads.dense.word_fwd);
    let dx_b = d.word_bwd.backward(&enc.word_bwd, &db_rev, &mut grads.dense.word_bwd);

    for i in 0..n {
        let mut dx: Vec<f64> = dx_f[i].iter().zip(&dx_b[n - 1 - i]).map(|(a, b)| a + b).collect();
        if let Some(m) = &enc.masks {
            dx.iter_mut().zip(&m[i]).for_each(|(g, m)| *g *= m);
        }
        let f = &enc.feats[i];
        let mut off = 0;
        let mut take = |len: usize| {
            let s = off;
            off += len;
            s..off
        };
        let w = take(cfg.word_dim);
        let row = grads.table_row(EmbTable::Word, f.word_id, cfg.word_dim);
        row.iter_mut().zip(&dx[w]).for_each(|(g, v)| *g += v);

        let cf = take(cfg.char_hidden);
        let cb = take(cfg.char_hidden);
        let m = f.char_ids.len();
        if m > 0 {
            let mut ds_f = vec![vec![0.0; cfg.char_hidden]; m];
            ds_f[m - 1] = dx[cf].to_vec();
            let mut ds_b = vec![vec![0.0; cfg.char_hidden]; m];
            ds_b[m - 1] = dx[cb].to_vec();
            let dc_f = d.char_fwd.backward(&enc.char_fwd[i], &ds_f, &mut grads.dense.char_fwd);
            let dc_b = d.char_bwd.backward(&enc.char_bwd[i], &ds_b, &mut grads.dense.char_bwd);
            for (j, &c) in f.char_ids.iter().enumerate() {
                let row = grads.table_row(EmbTable::Char, c, cfg.char_dim);
                for ((g, a), b) in row.iter_mut().zip(&dc_f[j]).zip(&dc_b[m - 1 - j]) {
                    *g += a + b;
                }
            }
        }
        for (t, id) in lookups(f) {
            let dim = p.table(t).cols;
            let r = take(dim);
            let row = grads.table_row(t, id, dim);
            row.iter_mut().zip(&dx[r]).for_each(|(g, v)| *g += v);
        }
    }
}

/// Weighted detection + bidirectional LM loss and its gradient w.r.t. `h`.
pub(crate) fn multitask(
    model: &TaggerModel,
    h: &[Vec<f64>],
    sentence: &LabeledSentence,
    grads: &mut Gradients,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = h.len();
    let two_h = 2 * model.config.word_hidden;
    let mut dh = vec![vec![0.0; two_h]; n];
    if !model.config.multitask || n == 0 {
        return Ok((0.0, dh));
    }
    let w = model.config.aux_loss_weight;
    let d = &model.params.dense;
    let g = &mut grads.dense;
    let hd = model.config.word_hidden;
    let ned: Vec<usize> = collapse_types(&sentence.tags)
        .iter()
        .map(|t| NED_TAGS.iter().position(|x| x == t).unwrap_or(0))
        .collect();
    let lm_ids: Vec<usize> = sentence
        .tokens
        .iter()
        .map(|t| model.lm_vocab.get(&word_key(&t.surface)))
        .collect();
    let (bos, eos) = (model.lm_vocab.get(BOS), model.lm_vocab.get(EOS));

    let head = |wm: &Matrix, bm: &Matrix, gw: &mut Matrix, gb: &mut Matrix, x: &[f64], target: usize, dx: &mut [f64]| {
        let mut logits = bm.data.clone();
        wm.matvec_acc(x, &mut logits);
        let (l, mut dl) = softmax_xent(&logits, target);
        dl.iter_mut().for_each(|v| *v *= w);
        gw.outer_acc(&dl, x);
        gb.data.iter_mut().zip(&dl).for_each(|(g, v)| *g += v);
        wm.matvec_t_acc(&dl, dx);
        l
    };

    let mut total = 0.0;
    for i in 0..n {
        total += head(&d.ned_w, &d.ned_b, &mut g.ned_w, &mut g.ned_b, &h[i], ned[i], &mut dh[i]);
        let next = if i + 1 < n { lm_ids[i + 1] } else { eos };
        let (df, db) = dh[i].split_at_mut(hd);
        total += head(&d.lm_fwd_w, &d.lm_fwd_b, &mut g.lm_fwd_w, &mut g.lm_fwd_b, &h[i][..hd], next, df);
        let prev = if i > 0 { lm_ids[i - 1] } else { bos };
        total += head(&d.lm_bwd_w, &d.lm_bwd_b, &mut g.lm_bwd_w, &mut g.lm_bwd_b, &h[i][hd..], prev, db);
    }
    Ok((w * total, dh))
}

pub(crate) fn loss_and_gradients(
    model: &TaggerModel,
    sentence: &LabeledSentence,
    dropout_seed: Option<u64>,
) -> Result<(LossBreakdown, Gradients)> {
    let gold = model.gold_indices(&sentence.tags)?;
    if gold.len() != sentence.tokens.len() {
        return Err(Error::Argument(format!(
            "{} tags for {} tokens",
            gold.len(),
            sentence.tokens.len()
        )));
    }
    let mut grads = Gradients::zeros_for(&model.params);
    if gold.is_empty() {
        return Ok((LossBreakdown::default(), grads));
    }
    let feats = featurize_sentence(&sentence.tokens, &model.tables, model.patterns());
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let enc = encode(model, &feats, rng.as_mut())?;
    let p = emissions(model, &enc.h);
    let d = &model.params.dense;
    let hybrid = hybrid_loss(&p, &d.transitions, &gold, &model.config.ranking)?;

    grads
        .dense
        .transitions
        .data
        .iter_mut()
        .zip(&hybrid.d_transitions.data)
        .for_each(|(g, v)| *g += v);
    let mut dh = vec![vec![0.0; 2 * model.config.word_hidden]; enc.h.len()];
    for (i, hi) in enc.h.iter().enumerate() {
        let dp = hybrid.d_emissions.row(i);
        grads.dense.ner_w.outer_acc(dp, hi);
        grads.dense.ner_b.data.iter_mut().zip(dp).for_each(|(g, v)| *g += v);
        d.ner_w.matvec_t_acc(dp, &mut dh[i]);
    }
    let (mt, dh_mt) = multitask(model, &enc.h, sentence, &mut grads)?;
    for (a, b) in dh.iter_mut().zip(&dh_mt) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
    backward_encoder(model, &enc, &dh, &mut grads);
    Ok((
        LossBreakdown {
            total: hybrid.loss + mt,
            crf: hybrid.crf_loss,
            ranking: hybrid.ranking_loss,
            multitask: mt,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::super::{LabeledSentence, TaggerModel};
    use super::*;
    use crate::corpus::whitespace_tokens;
    use crate::crf;

    fn sent(text: &str, tags: &str) -> LabeledSentence {
        LabeledSentence {
            tokens: whitespace_tokens(text),
            tags: tags.split_whitespace().map(str::to_string).collect(),
        }
    }

    #[test]
    fn multitask_off_equals_hybrid() {
        let s = sent("fish pathogen in farm", "B-H E-H O S-H");
        let mut cfg = tiny_config();
        cfg.multitask = false;
        let m = TaggerModel::new(cfg, std::slice::from_ref(&s), [], None).unwrap();
        let (loss, _) = m.loss_and_gradients(&s, None).unwrap();
        let p = m.emissions(&s.tokens).unwrap();
        let gold = m.gold_indices(&s.tags).unwrap();
        let h = hybrid_loss(&p, &m.params.dense.transitions, &gold, &m.config.ranking).unwrap();
        assert_eq!(loss.total, h.loss);
        assert_eq!(loss.multitask, 0.0);
    }

    #[test]
    fn uniform_lm_heads_cost_log_vocab() {
        let s = sent("fish", "S-H");
        let mut cfg = tiny_config();
        cfg.aux_loss_weight = 1.0;
        let mut m = TaggerModel::new(cfg, std::slice::from_ref(&s), [], None).unwrap();
        for mat in [&mut m.params.dense.lm_fwd_w, &mut m.params.dense.lm_bwd_w, &mut m.params.dense.ned_w] {
            mat.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let h = m.encode(&s.tokens).unwrap();
        let v = m.lm_vocab.len() as f64;
        let expected = 5f64.ln() + 2.0 * v.ln();
        let got = m.multitask_loss(&h, &s).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn crf_part_matches_module() {
        let s = sent("a b c", "O S-H O");
        let m = TaggerModel::new(tiny_config(), std::slice::from_ref(&s), [], None).unwrap();
        let (loss, _) = m.loss_and_gradients(&s, None).unwrap();
        let p = m.emissions(&s.tokens).unwrap();
        let gold = m.gold_indices(&s.tags).unwrap();
        let nll = crf::nll(&p, &m.params.dense.transitions, &gold).unwrap();
        assert_eq!(loss.crf, nll.loss);
    }

    #[test]
    fn dropout_seed_changes_training_loss_only() {
        let s = sent("fish pathogen", "B-H E-H");
        let m = TaggerModel::new(tiny_config(), std::slice::from_ref(&s), [], None).unwrap();
        let (a, _) = m.loss_and_gradients(&s, Some(1)).unwrap();
        let (b, _) = m.loss_and_gradients(&s, Some(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.predict(&s.tokens).unwrap(), m.predict(&s.tokens).unwrap());
    }
}
