//! Gated recurrent unit with an explicit backward pass.
//!
//! ```text
//! z = σ(Wz x + Uz h₋ + bz)
//! r = σ(Wr x + Ur h₋ + br)
//! ĥ = tanh(Wh x + Uh (r ⊙ h₋) + bh)
//! h = (1 − z) ⊙ h₋ + z ⊙ ĥ
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub wz: Matrix,
    pub wr: Matrix,
    pub wh: Matrix,
    pub uz: Matrix,
    pub ur: Matrix,
    pub uh: Matrix,
    pub bz: Matrix,
    pub br: Matrix,
    pub bh: Matrix,
}

pub const GRU_PARTS: [&str; 9] = ["wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"];

/// Per-step values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
}

impl Gru {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Gru {
            wz: Matrix::zeros(hidden, input),
            wr: Matrix::zeros(hidden, input),
            wh: Matrix::zeros(hidden, input),
            uz: Matrix::zeros(hidden, hidden),
            ur: Matrix::zeros(hidden, hidden),
            uh: Matrix::zeros(hidden, hidden),
            bz: Matrix::zeros(hidden, 1),
            br: Matrix::zeros(hidden, 1),
            bh: Matrix::zeros(hidden, 1),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut g = Gru::zeros(input, hidden);
        let wx = (6.0 / (input + hidden) as f64).sqrt();
        let wu = (3.0 / hidden as f64).sqrt();
        for m in [&mut g.wz, &mut g.wr, &mut g.wh] {
            m.data.iter_mut().for_each(|v| *v = rng.gen_range(-wx..wx));
        }
        for m in [&mut g.uz, &mut g.ur, &mut g.uh] {
            m.data.iter_mut().for_each(|v| *v = rng.gen_range(-wu..wu));
        }
        g
    }

    pub fn hidden(&self) -> usize {
        self.wz.rows
    }

    pub fn input(&self) -> usize {
        self.wz.cols
    }

    pub fn mats(&self) -> [&Matrix; 9] {
        [&self.wz, &self.wr, &self.wh, &self.uz, &self.ur, &self.uh, &self.bz, &self.br, &self.bh]
    }

    pub fn mats_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.wz,
            &mut self.wr,
            &mut self.wh,
            &mut self.uz,
            &mut self.ur,
            &mut self.uh,
            &mut self.bz,
            &mut self.br,
            &mut self.bh,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        Gru::zeros(self.input(), self.hidden())
    }

    /// Run over `xs` from a zero state; returns every hidden state.
    pub fn forward(&self, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<GruStep>) {
        let h_dim = self.hidden();
        let mut h = vec![0.0; h_dim];
        let mut states = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let mut az = self.bz.data.clone();
            self.wz.matvec_acc(x, &mut az);
            self.uz.matvec_acc(&h, &mut az);
            let mut ar = self.br.data.clone();
            self.wr.matvec_acc(x, &mut ar);
            self.ur.matvec_acc(&h, &mut ar);
            let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
            let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();
            let rh: Vec<f64> = r.iter().zip(&h).map(|(r, h)| r * h).collect();
            let mut ah = self.bh.data.clone();
            self.wh.matvec_acc(x, &mut ah);
            self.uh.matvec_acc(&rh, &mut ah);
            let cand: Vec<f64> = ah.iter().map(|a| a.tanh()).collect();
            let next: Vec<f64> = (0..h_dim).map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j]).collect();
            steps.push(GruStep {
                x: x.clone(),
                h_prev: h,
                z,
                r,
                cand,
                rh,
            });
            states.push(next.clone());
            h = next;
        }
        (states, steps)
    }

    /// Backpropagate `d_states` (gradient w.r.t. every emitted state) through
    /// the recorded steps. Accumulates parameter gradients into `grad` and
    /// returns the gradient w.r.t. each input.
    pub fn backward(&self, steps: &[GruStep], d_states: &[Vec<f64>], grad: &mut Gru) -> Vec<Vec<f64>> {
        let h_dim = self.hidden();
        let mut dxs = vec![Vec::new(); steps.len()];
        let mut carry = vec![0.0; h_dim];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let dh: Vec<f64> = d_states[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
            let mut dh_prev: Vec<f64> = (0..h_dim).map(|j| dh[j] * (1.0 - s.z[j])).collect();
            let da_z: Vec<f64> = (0..h_dim)
                .map(|j| dh[j] * (s.cand[j] - s.h_prev[j]) * s.z[j] * (1.0 - s.z[j]))
                .collect();
            let da_h: Vec<f64> = (0..h_dim)
                .map(|j| dh[j] * s.z[j] * (1.0 - s.cand[j] * s.cand[j]))
                .collect();
            let mut d_rh = vec![0.0; h_dim];
            self.uh.matvec_t_acc(&da_h, &mut d_rh);
            let da_r: Vec<f64> = (0..h_dim)
                .map(|j| d_rh[j] * s.h_prev[j] * s.r[j] * (1.0 - s.r[j]))
                .collect();
            for j in 0..h_dim {
                dh_prev[j] += d_rh[j] * s.r[j];
            }
            self.uz.matvec_t_acc(&da_z, &mut dh_prev);
            self.ur.matvec_t_acc(&da_r, &mut dh_prev);

            grad.wz.outer_acc(&da_z, &s.x);
            grad.wr.outer_acc(&da_r, &s.x);
            grad.wh.outer_acc(&da_h, &s.x);
            grad.uz.outer_acc(&da_z, &s.h_prev);
            grad.ur.outer_acc(&da_r, &s.h_prev);
            grad.uh.outer_acc(&da_h, &s.rh);
            for j in 0..h_dim {
                grad.bz.data[j] += da_z[j];
                grad.br.data[j] += da_r[j];
                grad.bh.data[j] += da_h[j];
            }

            let mut dx = vec![0.0; self.input()];
            self.wz.matvec_t_acc(&da_z, &mut dx);
            self.wr.matvec_t_acc(&da_r, &mut dx);
            self.wh.matvec_t_acc(&da_h, &mut dx);
            dxs[t] = dx;
            carry = dh_prev;
        }
        dxs
    }
}
