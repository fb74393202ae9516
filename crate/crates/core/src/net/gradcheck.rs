use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::RecurrentModel;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms; central differences cannot resolve them relative to the loss.
const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
}

/// Compares [`RecurrentModel::backward_window`] against central finite
/// differences of the squared error for every parameter of a random model on
/// a random window. The differences use only the forward pass.
pub fn gradient_check(
    seed: u64,
    input_dim: usize,
    hidden_dim: usize,
    frames: usize,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut model = RecurrentModel::init(input_dim, hidden_dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let window: Vec<f64> = (0..frames * input_dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let target = rng.random_range(1.0..5.0);
    let (_, analytic) = model.backward_window(&window, target)?;

    let loss = |m: &RecurrentModel| -> Result<f64> {
        let p = m.forward_window(&window)?;
        Ok((p - target) * (p - target))
    };
    let mut max_relative_error = 0.0;
    let mut worst_index = 0;
    for i in 0..analytic.len() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + eps;
        let plus = loss(&model)?;
        model.params_mut()[i] = orig - eps;
        let minus = loss(&model)?;
        model.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_relative_error {
            max_relative_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        seed,
        parameters_checked: analytic.len(),
        max_relative_error,
        worst_index,
    })
}
