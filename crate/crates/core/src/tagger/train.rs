use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledSentence, TaggerModel, MODEL_SCHEME};
use crate::error::{Error, Result};
use crate::eval::{tag_prf, Average};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Strict macro-F1 on the selection set.
    pub dev_macro_f1: f64,
    pub dev_micro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_macro_f1: f64,
    pub stopped_early: bool,
}

/// Strict macro and micro F1 of `model` on `sentences`.
pub fn score(model: &TaggerModel, sentences: &[LabeledSentence]) -> Result<(f64, f64)> {
    let mut pred = Vec::with_capacity(sentences.len());
    for s in sentences {
        pred.push(model.predict(&s.tokens)?);
    }
    let gold: Vec<_> = sentences.iter().map(|s| s.tags.clone()).collect();
    let macro_f1 = tag_prf(&pred, &gold, MODEL_SCHEME, Average::Macro).f1;
    let micro_f1 = tag_prf(&pred, &gold, MODEL_SCHEME, Average::Micro).f1;
    Ok((macro_f1, micro_f1))
}

/// Per-sentence SGD with gradient-norm clipping. The model with the best
/// strict macro-F1 on `dev` is returned; with an empty `dev` the training
/// set is used for selection.
pub fn train(
    mut model: TaggerModel,
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
) -> Result<(TaggerModel, TrainReport)> {
    let cfg = model.config.clone();
    cfg.validate()?;
    let selection = if dev.is_empty() { train } else { dev };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut best = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut step = 0u64;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            step += 1;
            let dropout_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step);
            let (loss, mut grads) = model.loss_and_gradients(&train[i], Some(dropout_seed))?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss or gradient at step {step} (epoch {epoch}, sentence {i})"
                )));
            }
            let norm = grads.sq_norm().sqrt();
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            grads.apply_sgd(&mut model.params, cfg.learning_rate);
            total += loss.total;
        }
        let (macro_f1, micro_f1) = score(&model, selection)?;
        let mean_loss = if train.is_empty() { 0.0 } else { total / train.len() as f64 };
        log::info!("epoch {epoch}: loss {mean_loss:.4} dev macro-F1 {macro_f1:.4} micro-F1 {micro_f1:.4}");
        report.epochs.push(EpochLog {
            epoch,
            mean_loss,
            dev_macro_f1: macro_f1,
            dev_micro_f1: micro_f1,
        });
        if macro_f1 > best_f1 {
            best_f1 = macro_f1;
            best = model.clone();
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("no improvement for {stale} epochs, stopping");
                report.stopped_early = true;
                break;
            }
        }
    }
    report.best_dev_macro_f1 = best_f1.max(0.0);
    if cfg.epochs == 0 {
        return Ok((model, report));
    }
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::corpus::whitespace_tokens;

    fn corpus() -> Vec<LabeledSentence> {
        [("fish pathogen", "B-H E-H"), ("Vibrio in fish", "S-M O S-H")]
            .iter()
            .map(|(t, g)| LabeledSentence {
                tokens: whitespace_tokens(t),
                tags: g.split_whitespace().map(str::to_string).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = corpus();
        let mut cfg = tiny_config();
        cfg.learning_rate = 0.0;
        cfg.epochs = 1;
        let m = TaggerModel::new(cfg, &data, [], None).unwrap();
        let (trained, report) = train(m.clone(), &data, &[]).unwrap();
        assert_eq!(trained.params, m.params);
        assert_eq!(report.epochs.len(), 1);
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = corpus();
        let mut cfg = tiny_config();
        cfg.epochs = 3;
        let m = TaggerModel::new(cfg, &data, [], None).unwrap();
        let (a, _) = train(m.clone(), &data, &data).unwrap();
        let (b, _) = train(m, &data, &data).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn divergence_names_the_step() {
        let data = corpus();
        let mut cfg = tiny_config();
        cfg.epochs = 1;
        let mut m = TaggerModel::new(cfg, &data, [], None).unwrap();
        m.params.dense.ner_b.data[0] = f64::NAN;
        let err = train(m, &data, &[]).unwrap_err().to_string();
        assert!(err.contains("step 1"), "{err}");
    }
}
