use super::ModelError;

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean positive-weighted binary cross-entropy on logits and its gradient
/// with respect to each logit.
///
/// Per item: `w·y·softplus(−z) + (1 − y)·softplus(z)`, which equals
/// `−w·y·ln σ(z) − (1 − y)·ln(1 − σ(z))`.
pub fn weighted_bce(logits: &[f64], labels: &[u8], pos_weight: f64) -> Result<(f64, Vec<f64>), ModelError> {
    if logits.len() != labels.len() {
        return Err(ModelError::Shape {
            expected: format!("{} labels", logits.len()),
            found: format!("{} labels", labels.len()),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(ModelError::NonBinaryLabel(l));
    }
    if !(pos_weight > 0.0 && pos_weight.is_finite()) {
        return Err(ModelError::PosWeight(pos_weight));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        if y == 1 {
            loss += pos_weight * softplus(-z);
            grad.push(pos_weight * (sigmoid(z) - 1.0) / n);
        } else {
            loss += softplus(z);
            grad.push(sigmoid(z) / n);
        }
    }
    Ok((if logits.is_empty() { 0.0 } else { loss / n }, grad))
}
