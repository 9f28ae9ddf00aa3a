use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean softmax cross-entropy over a B×C batch of logits.
///
/// Returns the loss and its gradient `(softmax − onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (b, c) = match *logits.shape() {
        [b, c] => (b, c),
        _ => {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits must be B×C, got {:?}", logits.shape()),
            ))
        }
    };
    if labels.len() != b {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for a batch of {b}", labels.len()),
        ));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::Data(format!("sample {i} has label {l}, outside [0, {c})")));
    }
    let inv_b = T::from_f64(1.0 / b as f64);
    let mut grad = Vec::with_capacity(b * c);
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let max = row.iter().copied().fold(row[0], Scalar::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        // log-sum-exp form keeps saturated rows exact
        loss += total.to_f64().ln() - (row[label] - max).to_f64();
        for (k, &e) in exps.iter().enumerate() {
            let p = e / total;
            let target = if k == label { T::ONE } else { T::ZERO };
            grad.push((p - target) * inv_b);
        }
    }
    let loss = loss / b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "softmax_cross_entropy".into(),
        });
    }
    Ok((loss, Tensor::new(vec![b, c], grad)?))
}

/// Row-wise softmax, used for reporting per-class scores.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    let c = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect()
}
