//! Central finite-difference verification of every layer's backward pass.
//!
//! Each check draws random double-precision inputs and parameters, reduces
//! the layer output to a scalar with a fixed random projection, and compares
//! analytic gradients against `(L(θ+h) − L(θ−h)) / 2h` on random coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::softmax_cross_entropy;
use super::model::{ArchitectureConfig, ConvBlockSpec, DenseSpec, Mode, Model};
use super::ops;
use crate::error::Result;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
pub const COORDS_PER_LAYER: usize = 12;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub layer: String,
    pub coordinates: usize,
    pub worst_relative_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst_relative_error < TOLERANCE && self.coordinates >= 10
    }
}

/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Compares analytic gradients of `inputs` against central differences of
/// `loss`, sampling `COORDS_PER_LAYER` coordinates spread over the inputs.
fn compare(
    layer: &str,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    loss: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport> {
    let mut worst: f64 = 0.0;
    for k in 0..COORDS_PER_LAYER {
        let which = k % inputs.len();
        let idx = rng.random_range(0..inputs[which].len());
        let mut plus = inputs.to_vec();
        plus[which].data_mut()[idx] += STEP;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[idx] -= STEP;
        let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[which].data()[idx], numeric));
    }
    Ok(GradCheckReport {
        layer: layer.to_string(),
        coordinates: COORDS_PER_LAYER,
        worst_relative_error: worst,
    })
}

pub fn check_conv(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[2, 2, 5, 5], rng);
    let w = random_tensor(&[3, 2, 3, 3], rng);
    let b = random_tensor(&[3], rng);
    let r = random_tensor(&[2, 3, 3, 3], rng);
    let (stride, pad) = (2, 1);
    let g = ops::conv2d_backward(&r, &x, &w, stride, pad)?;
    compare(
        "conv2d",
        &[x, w, b],
        &[g.input, g.weight, g.bias],
        |t| Ok(project(&ops::conv2d_forward(&t[0], &t[1], &t[2], stride, pad)?, &r)),
        rng,
    )
}

pub fn check_batchnorm(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<GradCheckReport> {
    let c = shape[1];
    let x = random_tensor(shape, rng);
    let gamma = random_tensor(&[c], rng).map(|v| v + 1.5);
    let beta = random_tensor(&[c], rng);
    let r = random_tensor(shape, rng);
    let (_, cache, _) = ops::batchnorm_train_forward(&x, &gamma, &beta, 1e-5)?;
    let g = ops::batchnorm_backward(&r, &cache, &gamma)?;
    compare(
        &format!("batchnorm(rank {})", shape.len()),
        &[x, gamma, beta],
        &[g.input, g.gamma, g.beta],
        |t| Ok(project(&ops::batchnorm_train_forward(&t[0], &t[1], &t[2], 1e-5)?.0, &r)),
        rng,
    )
}

pub fn check_relu(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    // keep inputs away from the kink at zero
    let x = random_tensor(&[4, 6], rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let r = random_tensor(&[4, 6], rng);
    let g = ops::relu_backward(&r, &x)?;
    compare("relu", &[x], &[g], |t| Ok(project(&ops::relu_forward(&t[0]), &r)), rng)
}

pub fn check_maxpool(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[2, 2, 4, 6], rng);
    let r = random_tensor(&[2, 2, 2, 3], rng);
    let (_, argmax) = ops::maxpool2_forward(&x)?;
    let g = ops::maxpool2_backward(&r, &argmax, x.shape())?;
    compare("maxpool2", &[x], &[g], |t| Ok(project(&ops::maxpool2_forward(&t[0])?.0, &r)), rng)
}

pub fn check_global_avg_pool(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[2, 3, 3, 4], rng);
    let r = random_tensor(&[2, 3], rng);
    let g = ops::global_avg_pool_backward(&r, x.shape())?;
    compare(
        "global_avg_pool",
        &[x],
        &[g],
        |t| Ok(project(&ops::global_avg_pool_forward(&t[0])?, &r)),
        rng,
    )
}

pub fn check_linear(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[3, 5], rng);
    let w = random_tensor(&[4, 5], rng);
    let b = random_tensor(&[4], rng);
    let r = random_tensor(&[3, 4], rng);
    let g = ops::linear_backward(&r, &x, &w)?;
    compare(
        "linear",
        &[x, w, b],
        &[g.input, g.weight, g.bias],
        |t| Ok(project(&ops::linear_forward(&t[0], &t[1], &t[2])?, &r)),
        rng,
    )
}

pub fn check_dropout(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[4, 8], rng);
    let r = random_tensor(&[4, 8], rng);
    let mask_seed: u64 = rng.random();
    let forward = |x: &Tensor<f64>| ops::dropout_train_forward(x, 0.5, &mut ChaCha8Rng::seed_from_u64(mask_seed));
    let (_, mask) = forward(&x)?;
    let g = ops::dropout_backward(&r, &mask)?;
    compare("dropout", &[x], &[g], |t| Ok(project(&forward(&t[0])?.0, &r)), rng)
}

pub fn check_cross_entropy(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let logits = random_tensor(&[4, 6], rng).map(|v| 3.0 * v);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..6)).collect();
    let (_, g) = softmax_cross_entropy(&logits, &labels)?;
    compare(
        "softmax_cross_entropy",
        &[logits],
        &[g],
        |t| Ok(softmax_cross_entropy(&t[0], &labels)?.0),
        rng,
    )
}

/// End-to-end check of a tiny model in train mode (fixed dropout mask).
pub fn check_model(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let arch = ArchitectureConfig {
        input_edge: 6,
        in_channels: 3,
        backbone: vec![
            ConvBlockSpec { out_channels: 3, batch_norm: true, pool: true },
            ConvBlockSpec { out_channels: 4, batch_norm: true, pool: false },
        ],
        head: vec![DenseSpec::hidden(5, 0.3), DenseSpec::logits(3)],
    };
    let model = Model::<f64>::init(&arch, rng)?;
    let x = random_tensor(&[4, 3, 6, 6], rng);
    let labels: Vec<usize> = (0..4).map(|i| i % 3).collect();
    let mask_seed: u64 = rng.random();
    let loss_of = |m: &mut Model<f64>| -> Result<(f64, Tensor<f64>)> {
        let logits = m.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
        softmax_cross_entropy(&logits, &labels)
    };
    let mut m = model.clone();
    let (_, grad_logits) = loss_of(&mut m)?;
    let grads = m.backward(&grad_logits)?;
    let names: Vec<String> = grads.keys().cloned().collect();
    let mut worst: f64 = 0.0;
    for k in 0..COORDS_PER_LAYER.max(names.len()) {
        let name = &names[k % names.len()];
        let idx = rng.random_range(0..grads[name].len());
        let eval = |delta: f64| -> Result<f64> {
            let mut m = model.clone();
            m.params.param_mut(name).expect("known parameter").value.data_mut()[idx] += delta;
            Ok(loss_of(&mut m)?.0)
        };
        let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
        worst = worst.max(relative_error(grads[name].data()[idx], numeric));
    }
    Ok(GradCheckReport {
        layer: "model(end-to-end)".into(),
        coordinates: COORDS_PER_LAYER.max(names.len()),
        worst_relative_error: worst,
    })
}

/// Runs every layer check with a single seed.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        check_conv(&mut rng)?,
        check_batchnorm(&mut rng, &[4, 3, 3, 3])?,
        check_batchnorm(&mut rng, &[5, 4])?,
        check_relu(&mut rng)?,
        check_maxpool(&mut rng)?,
        check_global_avg_pool(&mut rng)?,
        check_linear(&mut rng)?,
        check_dropout(&mut rng)?,
        check_cross_entropy(&mut rng)?,
        check_model(&mut rng)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for report in run_suite(17).unwrap() {
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn conv_meets_tighter_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = check_conv(&mut rng).unwrap();
        assert!(r.worst_relative_error < 1e-6, "{r:?}");
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[3, 5], &mut rng);
        let w = random_tensor(&[4, 5], &mut rng);
        let b = random_tensor(&[4], &mut rng);
        let r = random_tensor(&[3, 4], &mut rng);
        let g = ops::linear_backward(&r, &x, &w).unwrap();
        let wrong = g.weight.map(|v| v * 1.01 + 0.01);
        let report = compare(
            "linear(broken)",
            &[w.clone()],
            &[wrong],
            |t| Ok(project(&ops::linear_forward(&x, &t[0], &b)?, &r)),
            &mut rng,
        )
        .unwrap();
        assert!(!report.passed());
    }
}
