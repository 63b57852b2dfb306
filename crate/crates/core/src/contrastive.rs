//! Similarity, the symmetric video-text objective, and the classification
//! readouts (zero-shot, linear head, multi-view).

use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::params::ParamStore;
use crate::tensor::{Rng, Tape, Tensor, Var};

/// Initial temperature `τ`; the trained parameter is `ln(1/τ)`.
pub const TAU_INIT: f64 = 0.07;
/// Upper clamp on `ln(1/τ)`.
pub const MAX_LOGIT_SCALE: f64 = 4.605_170_185_988_092; // ln 100

pub const LOGIT_SCALE: &str = "logit_scale";

pub fn init_logit_scale(store: &mut ParamStore) {
    store.init_const(LOGIT_SCALE, (1.0 / TAU_INIT).ln());
}

/// `⟨a, b⟩ / (‖a‖‖b‖)`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cosine of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Cosine similarity of `v` (`1 × d`) with every row of `texts` (`K × d`), as `1 × K`.
pub fn similarity_row(tape: &mut Tape, v: Var, texts: Var) -> Result<Var> {
    let vn = tape.normalize_rows(v)?;
    let tn = tape.normalize_rows(texts)?;
    tape.matmul_bt(vn, tn, "sim")
}

/// Symmetric cross-entropy over a `B × B` similarity matrix with matched
/// pairs on the diagonal: `½·(CE_rows + CE_cols)` of `sims · inv_tau`.
pub fn contrastive_loss(tape: &mut Tape, sims: Var, inv_tau: Var) -> Result<Var> {
    let (r, c) = (tape.value(sims).rows(), tape.value(sims).cols());
    if r != c {
        return Err(Error::shape(format!(
            "similarity matrix must be square, got {r}×{c}"
        )));
    }
    let targets: Vec<usize> = (0..r).collect();
    let logits = tape.mul_scalar(sims, inv_tau)?;
    let rows = tape.cross_entropy(logits, &targets)?;
    let logits_t = tape.transpose(logits)?;
    let cols = tape.cross_entropy(logits_t, &targets)?;
    let both = tape.add(rows, cols)?;
    tape.scale(both, 0.5)
}

/// Loss value for a fixed matrix and temperature.
pub fn contrastive_loss_value(sims: &Tensor, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    let mut tape = Tape::new();
    let s = tape.constant(sims.clone())?;
    let inv = tape.constant(Tensor::scalar(1.0 / tau))?;
    let loss = contrastive_loss(&mut tape, s, inv)?;
    Ok(tape.value(loss).item())
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Predicted label index and the cosine score against every label embedding.
pub fn classify_zero_shot(v: &[f64], label_embeddings: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    if label_embeddings.is_empty() {
        return Err(Error::invalid("empty label set"));
    }
    let scores = label_embeddings
        .iter()
        .map(|c| cosine_sim(v, c))
        .collect::<Result<Vec<_>>>()?;
    let best = argmax(&scores).expect("non-empty");
    Ok((best, scores))
}

/// Fully-connected classification head used in place of the text tower.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn init(store: &mut ParamStore, dim: usize, classes: usize, rng: &mut Rng) {
        Linear::init(store, "head", dim, classes, rng);
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            linear: Linear::bind(tape, store, "head")?,
        })
    }

    /// `v·W + b` for each row of `v`.
    pub fn logits(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        self.linear.forward(tape, v, "head")
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    crate::tensor::softmax_in_place(&mut out);
    out
}

/// Mean of per-view softmax probabilities.
pub fn multi_view_aggregate(views: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = views
        .first()
        .ok_or_else(|| Error::invalid("no views to aggregate"))?;
    let n = first.len();
    if n == 0 || views.iter().any(|v| v.len() != n) {
        return Err(Error::shape("views must be non-empty and of equal length"));
    }
    let mut acc = vec![0.0; n];
    for v in views {
        for (a, p) in acc.iter_mut().zip(softmax(v)) {
            *a += p;
        }
    }
    let k = views.len() as f64;
    Ok(acc.into_iter().map(|a| a / k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        let u = [1.0, 2.0, -0.5];
        assert!((cosine_sim(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine_sim(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_sim(&u, &[0.0; 3]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn non_square_rejected() {
        let s = Tensor::zeros(&[2, 3]);
        assert!(contrastive_loss_value(&s, 1.0).is_err());
    }

    #[test]
    fn aggregate_errors() {
        assert!(multi_view_aggregate(&[]).is_err());
        assert!(multi_view_aggregate(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
