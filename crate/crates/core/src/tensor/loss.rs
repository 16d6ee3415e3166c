use super::TensorError;

const PROB_CLAMP: f64 = 1e-12;

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64, TensorError> {
    if a.len() != b.len() {
        return Err(TensorError::Shape(format!(
            "dot of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// `σ(a·b)`.
pub fn dot_score(a: &[f64], b: &[f64]) -> Result<f64, TensorError> {
    dot(a, b).map(sigmoid)
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64, TensorError> {
    if p.len() != y.len() || p.is_empty() {
        return Err(TensorError::Shape(format!(
            "{} probabilities for {} labels",
            p.len(),
            y.len()
        )));
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Cross-entropy of `σ(logit)` against `y` and its derivative in `logit`.
pub fn bce_with_logits(logit: f64, y: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}
