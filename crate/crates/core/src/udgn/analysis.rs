//! Correlation between channel weights and dependency types.

use crate::error::{Error, Result};

/// Pearson correlation with population moments; `None` when either
/// column has zero variance.
pub fn pearson(a: &[f64], y: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = a.iter().zip(y).map(|(x, z)| (x - ma) * (z - my)).sum::<f64>() / n;
    let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n;
    let vy = y.iter().map(|z| (z - my) * (z - my)).sum::<f64>() / n;
    if va <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vy.sqrt()))
}

/// `rho[k][l]` between channel `k` weights and indicator `l`, over edges.
/// `channel_probs[e][k]` and `types[e][l]` are per gold edge.
pub fn channel_type_pcc(channel_probs: &[Vec<f64>], types: &[Vec<f64>]) -> Result<Vec<Vec<Option<f64>>>> {
    if channel_probs.len() != types.len() {
        return Err(Error::contract("one type row per edge is required"));
    }
    if channel_probs.len() < 2 {
        return Err(Error::contract("correlation needs at least 2 edges"));
    }
    let nk = channel_probs[0].len();
    let nl = types[0].len();
    if channel_probs.iter().any(|r| r.len() != nk) || types.iter().any(|r| r.len() != nl) {
        return Err(Error::contract("ragged channel or type rows"));
    }
    let col = |m: &[Vec<f64>], c: usize| m.iter().map(|r| r[c]).collect::<Vec<_>>();
    Ok((0..nk)
        .map(|k| {
            let a = col(channel_probs, k);
            (0..nl).map(|l| pearson(&a, &col(types, l))).collect()
        })
        .collect())
}
