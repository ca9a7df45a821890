//! Adam with bias correction.

use super::params::{ParamKind, ParamState};
use super::AutodiffError;
use ndarray::ArrayD;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..Default::default() }
    }
}

/// One optimizer step over the entries named in `grads`.
///
/// Buffers are never updated. Entries without a gradient this step are left
/// untouched (their moments included), so a mask that is absent from the
/// graph — or whose pruned entries carry exact zero gradient from a zeroed
/// support — never moves.
pub fn adam_step(
    state: &mut ParamState,
    grads: &[(usize, ArrayD<f64>)],
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    if !(cfg.learning_rate > 0.0
        && cfg.beta1 > 0.0
        && cfg.beta1 < 1.0
        && cfg.beta2 > 0.0
        && cfg.beta2 < 1.0)
    {
        return Err(AutodiffError::Format(format!(
            "optimizer config out of range: lr {}, beta1 {}, beta2 {}",
            cfg.learning_rate, cfg.beta1, cfg.beta2
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (idx, grad) in grads {
        let entry = &mut state.entries[*idx];
        if entry.kind == ParamKind::Buffer {
            continue;
        }
        if entry.value.shape() != grad.shape() {
            return Err(AutodiffError::ShapeMismatch {
                expected: format!("{:?} for {}", entry.value.shape(), entry.name),
                got: format!("{:?}", grad.shape()),
            });
        }
        ndarray::Zip::from(&mut entry.adam_m).and(grad).for_each(|m, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        });
        ndarray::Zip::from(&mut entry.adam_v).and(grad).for_each(|v, &g| {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        });
        ndarray::Zip::from(&mut entry.value)
            .and(&entry.adam_m)
            .and(&entry.adam_v)
            .for_each(|p, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            });
    }
    Ok(())
}
