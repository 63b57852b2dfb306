//! Scalar reference implementations used as independent oracles.
#![allow(dead_code)]

use crossframe::nn::ParamStore;
use crossframe::tensor::{Rng, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn rand_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.normal()).collect())
        .collect()
}

/// Overwrites every parameter with N(0, std²) draws so no term is trivially zero.
pub fn randomize(store: &mut ParamStore, std: f64, rng: &mut Rng) {
    for (_, p) in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.normal() * std;
        }
    }
}

pub fn linear(x: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let w = store.get(&format!("{prefix}.w")).unwrap();
    let b = store.get(&format!("{prefix}.b")).unwrap();
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| b.data()[j] + (0..w.rows()).map(|i| row[i] * w.get2(i, j)).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn layer_norm(x: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let g = store.get(&format!("{prefix}.g")).unwrap().data();
    let b = store.get(&format!("{prefix}.b")).unwrap().data();
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let r = 1.0 / (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * r * g[j] + b[j])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Multi-head attention with explicit loops over queries, keys and heads.
pub fn attention(q_src: &Mat, kv_src: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> Mat {
    let q = linear(q_src, store, &format!("{prefix}.q"));
    let k = linear(kv_src, store, &format!("{prefix}.k"));
    let v = linear(kv_src, store, &format!("{prefix}.v"));
    let d = q[0].len();
    let dh = d / heads;
    let mut merged = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                merged[i][c] = e.iter().zip(&v).map(|(p, vj)| p / z * vj[c]).sum();
            }
        }
    }
    linear(&merged, store, &format!("{prefix}.o"))
}

/// Pre-norm block: `x + Attn(LN1 x)` then `+ FFN(LN2 ·)`.
pub fn block(x: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> Mat {
    let a = attend(x, store, prefix, heads);
    feed_forward(&a, store, prefix)
}

pub fn attend(x: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> Mat {
    let n = layer_norm(x, store, &format!("{prefix}.ln1"));
    add(
        x,
        &attention(&n, &n, store, &format!("{prefix}.attn"), heads),
    )
}

pub fn feed_forward(x: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let n = layer_norm(x, store, &format!("{prefix}.ln2"));
    let h: Mat = linear(&n, store, &format!("{prefix}.mlp.fc1"))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    add(x, &linear(&h, store, &format!("{prefix}.mlp.fc2")))
}

pub fn mean_rows(x: &Mat) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x[0].len())
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}
