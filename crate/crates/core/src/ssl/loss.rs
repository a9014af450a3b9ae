use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One-sided InfoNCE: `-log(e^{q.k+/t} / (e^{q.k+/t} + sum_i e^{q.k-_i/t}))`.
pub fn loss_contrastive(q: &[f64], k_pos: &[f64], k_negs: &[Vec<f64>], tau: f64) -> Result<f64> {
    if k_negs.is_empty() {
        return Err(Error::Insufficient("contrastive loss needs at least one negative".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::config("ssl.temperature", "must be positive"));
    }
    let mut logits = vec![dot(q, k_pos) / tau];
    logits.extend(k_negs.iter().map(|k| dot(q, k) / tau));
    Ok(log_sum_exp(&logits) - logits[0])
}

/// Softmax cross-entropy of each row of `m` against its diagonal entry, averaged.
fn diag_ce(m: &[Vec<f64>]) -> f64 {
    m.iter().enumerate().map(|(i, row)| log_sum_exp(row) - row[i]).sum::<f64>() / m.len() as f64
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).collect()).collect()
}

/// Bidirectional in-batch loss between radio embeddings `qr[i]` and vision embeddings `qv[i]`.
pub fn loss_contrastive_batch(qr: &[Vec<f64>], qv: &[Vec<f64>], tau: f64) -> Result<f64> {
    if qr.len() != qv.len() || qr.len() < 2 {
        return Err(Error::Insufficient(format!("batch of {} / {} embeddings", qr.len(), qv.len())));
    }
    let logits: Vec<Vec<f64>> = qr.iter().map(|a| qv.iter().map(|b| dot(a, b) / tau).collect()).collect();
    Ok((diag_ce(&logits) + diag_ce(&transpose(&logits))) / 2.0)
}

/// Spatial contrastive loss from the `B x B` attention-score matrix,
/// `scores[i][j] = S(r_i, v_j)`.
pub fn loss_scl(scores: &[Vec<f64>], tau: f64) -> Result<f64> {
    if scores.len() < 2 || scores.iter().any(|r| r.len() != scores.len()) {
        return Err(Error::Insufficient(format!("SCL needs a square score matrix of size >= 2, got {}", scores.len())));
    }
    let logits: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|s| s / tau).collect()).collect();
    Ok((diag_ce(&logits) + diag_ce(&transpose(&logits))) / 2.0)
}
