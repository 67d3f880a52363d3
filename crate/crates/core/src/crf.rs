//! Linear-chain CRF over `k` tags.
//!
//! Emissions are an `n × k` matrix. Transitions are `(k+2) × (k+2)`: rows
//! and columns `0..k` are tags, `k` is the start state and `k+1` the end
//! state. A sequence `y` scores
//!
//! ```text
//! A[start, y₀] + Σᵢ P[i, yᵢ] + Σᵢ A[yᵢ, yᵢ₊₁] + A[yₙ₋₁, end]
//! ```
//!
//! All dynamic programming runs in log space.

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Matrix};
use crate::tags::{parse_tag, Prefix, Scheme};

/// Score used for forbidden transitions.
pub const FORBIDDEN: f64 = -1e4;

fn check_shapes(p: &Matrix, a: &Matrix) -> Result<usize> {
    let k = p.cols;
    if a.rows != k + 2 || a.cols != k + 2 {
        return Err(Error::Argument(format!(
            "transition matrix is {}×{}, expected {}×{} for {k} tags",
            a.rows,
            a.cols,
            k + 2,
            k + 2
        )));
    }
    Ok(k)
}

pub fn score_sequence(p: &Matrix, a: &Matrix, y: &[usize]) -> Result<f64> {
    let k = check_shapes(p, a)?;
    if y.len() != p.rows {
        return Err(Error::Argument(format!("{} tags for {} tokens", y.len(), p.rows)));
    }
    if let Some(bad) = y.iter().find(|&&t| t >= k) {
        return Err(Error::Argument(format!("tag index {bad} out of range for {k} tags")));
    }
    let (start, end) = (k, k + 1);
    let Some(&last) = y.last() else {
        return Ok(a.get(start, end));
    };
    let mut s = a.get(start, y[0]) + a.get(last, end);
    for (i, &t) in y.iter().enumerate() {
        s += p.get(i, t);
        if i + 1 < y.len() {
            s += a.get(t, y[i + 1]);
        }
    }
    Ok(s)
}

/// Forward log-messages `alpha[i][j]`: log-sum of all prefixes ending in tag
/// `j` at token `i`, emission included.
fn forward(p: &Matrix, a: &Matrix, k: usize) -> Vec<Vec<f64>> {
    let n = p.rows;
    let mut alpha = vec![vec![0.0; k]; n];
    for j in 0..k {
        alpha[0][j] = a.get(k, j) + p.get(0, j);
    }
    for i in 1..n {
        for j in 0..k {
            let prev = &alpha[i - 1];
            alpha[i][j] = p.get(i, j) + log_sum_exp((0..k).map(|u| prev[u] + a.get(u, j)));
        }
    }
    alpha
}

/// Backward log-messages `beta[i][j]`: log-sum of all suffixes after token
/// `i` given tag `j` there, end transition included.
fn backward(p: &Matrix, a: &Matrix, k: usize) -> Vec<Vec<f64>> {
    let n = p.rows;
    let mut beta = vec![vec![0.0; k]; n];
    for j in 0..k {
        beta[n - 1][j] = a.get(j, k + 1);
    }
    for i in (0..n - 1).rev() {
        for u in 0..k {
            let next = &beta[i + 1];
            beta[i][u] = log_sum_exp((0..k).map(|v| a.get(u, v) + p.get(i + 1, v) + next[v]));
        }
    }
    beta
}

/// `log Σ_y exp s(y)` over all `kⁿ` sequences.
pub fn log_partition(p: &Matrix, a: &Matrix) -> Result<f64> {
    let k = check_shapes(p, a)?;
    if p.rows == 0 {
        return Ok(a.get(k, k + 1));
    }
    if k == 0 {
        return Err(Error::Argument("no tags".into()));
    }
    let alpha = forward(p, a, k);
    Ok(log_sum_exp((0..k).map(|j| alpha[p.rows - 1][j] + a.get(j, k + 1))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllOutput {
    pub loss: f64,
    pub d_emissions: Matrix,
    pub d_transitions: Matrix,
}

/// Negative log-likelihood of `y` and its exact gradients
/// (expected counts minus observed counts).
pub fn nll(p: &Matrix, a: &Matrix, y: &[usize]) -> Result<NllOutput> {
    let gold = score_sequence(p, a, y)?;
    let k = p.cols;
    let n = p.rows;
    let mut d_emissions = p.zeros_like();
    let mut d_transitions = a.zeros_like();
    if n == 0 {
        return Ok(NllOutput {
            loss: 0.0,
            d_emissions,
            d_transitions,
        });
    }
    let alpha = forward(p, a, k);
    let beta = backward(p, a, k);
    let log_z = log_sum_exp((0..k).map(|j| alpha[n - 1][j] + a.get(j, k + 1)));

    for i in 0..n {
        for j in 0..k {
            let m = (alpha[i][j] + beta[i][j] - log_z).exp();
            d_emissions.add_at(i, j, m);
        }
        d_emissions.add_at(i, y[i], -1.0);
    }
    for j in 0..k {
        d_transitions.add_at(k, j, d_emissions.get(0, j) + f64::from(u8::from(y[0] == j)));
        d_transitions.add_at(j, k + 1, d_emissions.get(n - 1, j) + f64::from(u8::from(y[n - 1] == j)));
    }
    d_transitions.add_at(k, y[0], -1.0);
    d_transitions.add_at(y[n - 1], k + 1, -1.0);
    for i in 0..n - 1 {
        for u in 0..k {
            for v in 0..k {
                let m = (alpha[i][u] + a.get(u, v) + p.get(i + 1, v) + beta[i + 1][v] - log_z).exp();
                d_transitions.add_at(u, v, m);
            }
        }
        d_transitions.add_at(y[i], y[i + 1], -1.0);
    }
    Ok(NllOutput {
        loss: (log_z - gold).max(0.0),
        d_emissions,
        d_transitions,
    })
}

/// Highest-scoring sequence and its score. Ties go to the lowest tag index.
pub fn viterbi(p: &Matrix, a: &Matrix) -> Result<(Vec<usize>, f64)> {
    let k = check_shapes(p, a)?;
    let n = p.rows;
    if n == 0 {
        return Ok((Vec::new(), a.get(k, k + 1)));
    }
    if k == 0 {
        return Err(Error::Argument("no tags".into()));
    }
    let argmax = |vals: &mut dyn Iterator<Item = f64>| -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, v) in vals.enumerate() {
            if v > best.1 || i == 0 {
                best = (i, v);
            }
        }
        best
    };
    let mut delta: Vec<f64> = (0..k).map(|j| a.get(k, j) + p.get(0, j)).collect();
    let mut back = vec![vec![0usize; k]; n];
    for i in 1..n {
        let mut next = vec![0.0; k];
        for j in 0..k {
            let (u, v) = argmax(&mut (0..k).map(|u| delta[u] + a.get(u, j)));
            back[i][j] = u;
            next[j] = v + p.get(i, j);
        }
        delta = next;
    }
    let (mut best, score) = argmax(&mut (0..k).map(|j| delta[j] + a.get(j, k + 1)));
    let mut path = vec![0; n];
    for i in (0..n).rev() {
        path[i] = best;
        best = back[i][best];
    }
    Ok((path, score))
}

/// Whether `to` may follow `from` (`None` = outside / sequence boundary).
pub fn transition_allowed(from: Option<&str>, to: Option<&str>, scheme: Scheme) -> bool {
    fn parse(l: Option<&str>) -> Option<crate::tags::Tag<'_>> {
        l.and_then(|l| parse_tag(l).ok().flatten())
    }
    let (f, t) = (parse(from), parse(to));
    let open = |x: &Option<crate::tags::Tag<'_>>| match scheme {
        Scheme::Iobes => matches!(x, Some(t) if matches!(t.prefix, Prefix::B | Prefix::I)),
        Scheme::Bio => x.is_some(),
    };
    let continues = |x: &Option<crate::tags::Tag<'_>>| match scheme {
        Scheme::Iobes => matches!(x, Some(t) if matches!(t.prefix, Prefix::I | Prefix::E)),
        Scheme::Bio => matches!(x, Some(t) if t.prefix == Prefix::I),
    };
    if continues(&t) {
        return open(&f) && f.as_ref().map(|x| x.entity_type) == t.as_ref().map(|x| x.entity_type);
    }
    // an open IOBES entity must be continued
    !(scheme == Scheme::Iobes && open(&f))
}

/// Transition matrix with [`FORBIDDEN`] on every transition that would make
/// the tag sequence invalid, zero elsewhere.
pub fn constrained_transitions(labels: &[String], scheme: Scheme) -> Matrix {
    let k = labels.len();
    let mut a = Matrix::zeros(k + 2, k + 2);
    let label = |i: usize| -> Option<&str> {
        if i < k {
            let l = labels[i].as_str();
            (l != "O").then_some(l)
        } else {
            None
        }
    };
    for u in 0..k + 2 {
        for v in 0..k + 2 {
            let ok = match (u, v) {
                (u, _) if u == k + 1 => false,
                (_, v) if v == k => false,
                (u, v) if u == k && v == k + 1 => true,
                (u, v) if u == k => transition_allowed(None, label(v), scheme) || labels[v] == "O",
                (u, v) if v == k + 1 => transition_allowed(label(u), None, scheme),
                (u, v) => transition_allowed(label(u), label(v), scheme),
            };
            if !ok {
                a.set(u, v, FORBIDDEN);
            }
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let p = Matrix::zeros(1, 1);
        let a = Matrix::zeros(3, 3);
        assert_eq!(score_sequence(&p, &a, &[0]).unwrap(), 0.0);

        let p = Matrix::zeros(2, 2);
        let mut a = Matrix::zeros(4, 4);
        a.set(2, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 3, 3.0);
        assert_eq!(score_sequence(&p, &a, &[0, 1]).unwrap(), 6.0);
        assert!(score_sequence(&p, &a, &[0]).is_err());
        assert!(score_sequence(&p, &a, &[0, 5]).is_err());
    }

    #[test]
    fn partition_examples() {
        let z1 = log_partition(&Matrix::zeros(1, 2), &Matrix::zeros(4, 4)).unwrap();
        assert!((z1 - 2f64.ln()).abs() < 1e-12);
        let z2 = log_partition(&Matrix::zeros(2, 2), &Matrix::zeros(4, 4)).unwrap();
        assert!((z2 - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn partition_is_stable_for_large_scores() {
        let p = Matrix::filled(3, 2, 1e4);
        let z = log_partition(&p, &Matrix::zeros(4, 4)).unwrap();
        assert!((z - (3e4 + 8f64.ln())).abs() < 1e-6);
    }

    #[test]
    fn nll_examples() {
        let out = nll(&Matrix::zeros(1, 2), &Matrix::zeros(4, 4), &[1]).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
        let mut p = Matrix::filled(3, 2, -50.0);
        for i in 0..3 {
            p.set(i, 1, 50.0);
        }
        let out = nll(&p, &Matrix::zeros(4, 4), &[1, 1, 1]).unwrap();
        assert!(out.loss < 1e-30);
    }

    #[test]
    fn viterbi_single_tag_and_ties() {
        let (path, _) = viterbi(&Matrix::from_rows(&[vec![0.3], vec![-1.0]]), &Matrix::zeros(3, 3)).unwrap();
        assert_eq!(path, vec![0, 0]);
        let (path, score) = viterbi(&Matrix::zeros(3, 3), &Matrix::zeros(5, 5)).unwrap();
        assert_eq!((path, score), (vec![0, 0, 0], 0.0));
    }

    #[test]
    fn constraints_block_inside_after_outside() {
        let labels: Vec<String> = ["O", "B-H", "I-H", "E-H", "S-H"].iter().map(|s| s.to_string()).collect();
        let a = constrained_transitions(&labels, Scheme::Iobes);
        let (o, b, i, e, s, start, end) = (0, 1, 2, 3, 4, 5, 6);
        assert_eq!(a.get(o, i), FORBIDDEN);
        assert_eq!(a.get(start, e), FORBIDDEN);
        assert_eq!(a.get(b, end), FORBIDDEN);
        assert_eq!(a.get(b, o), FORBIDDEN);
        for (u, v) in [(o, b), (b, i), (i, e), (e, s), (s, o), (start, o), (e, end), (o, end)] {
            assert_eq!(a.get(u, v), 0.0, "{u}->{v}");
        }
        // emissions favour I-H everywhere, constraints keep the path valid
        let mut p = Matrix::zeros(3, 5);
        for t in 0..3 {
            p.set(t, i, 5.0);
        }
        let (path, _) = viterbi(&p, &a).unwrap();
        let tags: Vec<String> = path.iter().map(|&t| labels[t].clone()).collect();
        assert!(crate::tags::is_valid(&tags, Scheme::Iobes), "{tags:?}");
    }
}
