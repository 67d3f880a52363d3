//! Ranking loss on emission scores and the hybrid CRF + ranking objective.

use serde::{Deserialize, Serialize};

use crate::crf;
use crate::error::Result;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankingConfig {
    /// Weight of the ranking term, in `[0, 1]`.
    pub alpha: f64,
    /// Scaling factor on both margin terms.
    pub gamma: f64,
    pub margin_pos: f64,
    pub margin_neg: f64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            alpha: 1.0,
            gamma: 1.0,
            margin_pos: 2.5,
            margin_neg: 0.5,
        }
    }
}

/// Sum over tokens of `max(0, 1 + γ(m⁺ − y⁺) + γ(m⁻ + c⁻))`, where `y⁺` is
/// the gold tag's score and `c⁻` the best competing score (lowest index on
/// ties). Returns the loss and its subgradient w.r.t. `p`.
pub fn ranking_loss(p: &Matrix, gold: &[usize], gamma: f64, margin_pos: f64, margin_neg: f64) -> (f64, Matrix) {
    let mut grad = p.zeros_like();
    let mut total = 0.0;
    for (i, &g) in gold.iter().enumerate() {
        let row = p.row(i);
        let Some((c, c_score)) = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != g)
            .fold(None, |best: Option<(usize, f64)>, (j, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((j, v)),
            })
        else {
            continue;
        };
        let l = 1.0 + gamma * (margin_pos - row[g]) + gamma * (margin_neg + c_score);
        if l > 0.0 {
            total += l;
            grad.add_at(i, g, -gamma);
            grad.add_at(i, c, gamma);
        }
    }
    (total, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub loss: f64,
    pub crf_loss: f64,
    pub ranking_loss: f64,
    pub d_emissions: Matrix,
    pub d_transitions: Matrix,
}

/// `nll + α · ranking`. With `α = 0` the ranking term is not evaluated, so
/// the loss is exactly the CRF NLL.
pub fn hybrid_loss(p: &Matrix, a: &Matrix, gold: &[usize], cfg: &RankingConfig) -> Result<HybridOutput> {
    let crf = crf::nll(p, a, gold)?;
    let mut d_emissions = crf.d_emissions;
    if cfg.alpha == 0.0 {
        return Ok(HybridOutput {
            loss: crf.loss,
            crf_loss: crf.loss,
            ranking_loss: 0.0,
            d_emissions,
            d_transitions: crf.d_transitions,
        });
    }
    let (rank, d_rank) = ranking_loss(p, gold, cfg.gamma, cfg.margin_pos, cfg.margin_neg);
    for (d, r) in d_emissions.data.iter_mut().zip(&d_rank.data) {
        *d += cfg.alpha * r;
    }
    Ok(HybridOutput {
        loss: crf.loss + cfg.alpha * rank,
        crf_loss: crf.loss,
        ranking_loss: rank,
        d_emissions,
        d_transitions: crf.d_transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One token, gold tag 0 scoring `y_pos`, single competitor `c_neg`.
    fn one(y_pos: f64, c_neg: f64, gamma: f64) -> f64 {
        let p = Matrix::from_rows(&[vec![y_pos, c_neg]]);
        ranking_loss(&p, &[0], gamma, 2.5, 0.5).0
    }

    #[test]
    fn worked_examples() {
        assert_eq!(one(4.5, -2.5, 1.0), 0.0);
        assert_eq!(one(0.0, 0.0, 1.0), 4.0);
        assert_eq!(one(0.0, 0.0, 2.0), 7.0);
    }

    #[test]
    fn subgradient_targets_gold_and_competitor() {
        let p = Matrix::from_rows(&[vec![0.0, 0.3, 0.7]]);
        let (_, g) = ranking_loss(&p, &[1], 1.0, 2.5, 0.5);
        assert_eq!(g.data, vec![0.0, -1.0, 1.0]);
    }

    #[test]
    fn alpha_zero_is_crf() {
        let p = Matrix::from_rows(&[vec![0.1, -0.4], vec![1.3, 0.2]]);
        let a = Matrix::from_rows(&[vec![0.2; 4], vec![-0.3; 4], vec![0.5; 4], vec![0.0; 4]]);
        let cfg = RankingConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let h = hybrid_loss(&p, &a, &[0, 1], &cfg).unwrap();
        let c = crf::nll(&p, &a, &[0, 1]).unwrap();
        assert_eq!(h.loss.to_bits(), c.loss.to_bits());
        assert_eq!(h.d_emissions, c.d_emissions);
    }
}
