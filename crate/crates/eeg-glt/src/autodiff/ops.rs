//! Layer-level operations with validated contracts.
//!
//! These compose tape primitives and enforce the shape/finiteness rules the
//! layers promise; the primitives themselves assert internally.

use super::tape::{as1, as2, Tape, Var};
use super::AutodiffError;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;

/// Train/eval switch shared by batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn all_finite(a: &ArrayD<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Chebyshev graph convolution over a batch.
///
/// `out[b] = sum_k T_k . x[b] . theta[k] + bias` with `x: B x N x F_in`,
/// `theta: K x F_in x F_out`, `bias: N x F_out`, and `terms` holding the
/// `K` polynomial matrices (constants for a fixed adjacency, tape nodes
/// when the adjacency is trainable).
pub fn cheb_conv_forward(
    tape: &mut Tape,
    x: Var,
    terms: &[Var],
    theta: Var,
    bias: Var,
) -> Result<Var, AutodiffError> {
    let xs = tape.value(x).shape().to_vec();
    let ts = tape.value(theta).shape().to_vec();
    if xs.len() != 3 || ts.len() != 3 {
        return Err(AutodiffError::ShapeMismatch {
            expected: "x: B x N x F_in, theta: K x F_in x F_out".into(),
            got: format!("x: {xs:?}, theta: {ts:?}"),
        });
    }
    if ts[0] != terms.len() || ts[1] != xs[2] {
        return Err(AutodiffError::ShapeMismatch {
            expected: format!("theta: {} x {} x F_out", terms.len(), xs[2]),
            got: format!("{ts:?}"),
        });
    }
    let bs = tape.value(bias).shape().to_vec();
    // Per-node bias (N x F_out) is the default; a plain per-feature vector
    // (F_out) is accepted as the alternative convention.
    if bs != [xs[1], ts[2]] && bs != [ts[2]] {
        return Err(AutodiffError::ShapeMismatch {
            expected: format!("bias: {} x {} (or {})", xs[1], ts[2], ts[2]),
            got: format!("{bs:?}"),
        });
    }
    let mut acc: Option<Var> = None;
    for (k, &term) in terms.iter().enumerate() {
        let mixed = tape.bmm_left(term, x);
        let theta_k = tape.slice_k(theta, k);
        let projected = tape.bmm_right(mixed, theta_k);
        acc = Some(match acc {
            None => projected,
            Some(a) => tape.add(a, projected),
        });
    }
    let acc = acc.expect("K >= 1");
    let out = if bs.len() == 2 {
        tape.add_bias_nf(acc, bias)
    } else {
        tape.add_bias_feat(acc, bias)
    };
    if !all_finite(tape.value(out)) {
        return Err(AutodiffError::NonFiniteValue("cheb_conv_forward"));
    }
    Ok(out)
}

/// Running statistics for one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        BatchNormState { running_mean: vec![0.0; features], running_var: vec![1.0; features] }
    }
}

/// Batch normalization over the batch axis per feature.
///
/// Rank-3 input `B x N x F` normalizes each feature over batch and node
/// axes together; rank-2 input `B x D` over the batch axis. Train mode uses
/// batch statistics (biased variance) and folds them into the running
/// estimates; eval mode reads the running estimates.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<Var, AutodiffError> {
    let shape = tape.value(x).shape().to_vec();
    let (rows, features) = match shape.len() {
        2 => (shape[0], shape[1]),
        3 => (shape[0] * shape[1], shape[2]),
        _ => {
            return Err(AutodiffError::ShapeMismatch {
                expected: "rank 2 or 3".into(),
                got: format!("{shape:?}"),
            })
        }
    };
    if tape.value(gamma).len() != features || tape.value(beta).len() != features {
        return Err(AutodiffError::ShapeMismatch {
            expected: format!("gamma/beta of length {features}"),
            got: format!(
                "{} / {}",
                tape.value(gamma).len(),
                tape.value(beta).len()
            ),
        });
    }
    if mode == Mode::Train && shape[0] < 2 {
        return Err(AutodiffError::BatchTooSmall(shape[0]));
    }
    if state.running_mean.len() != features {
        return Err(AutodiffError::ShapeMismatch {
            expected: format!("running stats of length {features}"),
            got: format!("{}", state.running_mean.len()),
        });
    }

    let xv = tape.value(x).as_slice().expect("contiguous").to_vec();
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0_f64; features];
            for r in 0..rows {
                for f in 0..features {
                    mean[f] += xv[r * features + f];
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0_f64; features];
            for r in 0..rows {
                for f in 0..features {
                    let d = xv[r * features + f] - mean[f];
                    var[f] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            for f in 0..features {
                state.running_mean[f] = (1.0 - momentum) * state.running_mean[f] + momentum * mean[f];
                state.running_var[f] = (1.0 - momentum) * state.running_var[f] + momentum * var[f];
            }
            (mean, var)
        }
        Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0_f64; rows * features];
    for r in 0..rows {
        for f in 0..features {
            xhat[r * features + f] = (xv[r * features + f] - mean[f]) * inv_std[f];
        }
    }
    let gv = as1(tape.value(gamma)).to_vec();
    let bv = as1(tape.value(beta)).to_vec();
    let mut out = vec![0.0_f64; rows * features];
    for r in 0..rows {
        for f in 0..features {
            out[r * features + f] = gv[f] * xhat[r * features + f] + bv[f];
        }
    }
    let out = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("same shape");

    let x_id = x.0;
    let gamma_id = gamma.0;
    let beta_id = beta.0;
    let batch_stats = mode == Mode::Train;
    let back = move |g: &ArrayD<f64>, _vals: &[ArrayD<f64>]| {
        let gs = g.as_slice().expect("contiguous");
        let mut dgamma = vec![0.0_f64; features];
        let mut dbeta = vec![0.0_f64; features];
        for r in 0..rows {
            for f in 0..features {
                dgamma[f] += gs[r * features + f] * xhat[r * features + f];
                dbeta[f] += gs[r * features + f];
            }
        }
        let mut dx = vec![0.0_f64; rows * features];
        if batch_stats {
            // d/dx of (x - mean)/std with mean/var both functions of x.
            let rf = rows as f64;
            for f in 0..features {
                let sum_g: f64 = (0..rows).map(|r| gs[r * features + f]).sum();
                let sum_gx: f64 =
                    (0..rows).map(|r| gs[r * features + f] * xhat[r * features + f]).sum();
                for r in 0..rows {
                    let i = r * features + f;
                    dx[i] = gv[f] * inv_std[f] / rf
                        * (rf * gs[i] - sum_g - xhat[i] * sum_gx);
                }
            }
        } else {
            for r in 0..rows {
                for f in 0..features {
                    let i = r * features + f;
                    dx[i] = gs[i] * gv[f] * inv_std[f];
                }
            }
        }
        let shape_dyn = g.raw_dim();
        vec![
            (x_id, ArrayD::from_shape_vec(shape_dyn, dx).unwrap()),
            (
                gamma_id,
                ArrayD::from_shape_vec(IxDyn(&[features]), dgamma).unwrap(),
            ),
            (
                beta_id,
                ArrayD::from_shape_vec(IxDyn(&[features]), dbeta).unwrap(),
            ),
        ]
    };
    Ok(tape.push_custom(out, Some(Box::new(back))))
}

/// Elementwise `max(0, x)`.
pub fn relu(tape: &mut Tape, x: Var) -> Var {
    tape.relu(x)
}

/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by `1/(1-rate)`; eval mode is the identity.
pub fn dropout<R: Rng>(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var, AutodiffError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(AutodiffError::InvalidRate(rate));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask = ArrayD::from_shape_fn(tape.value(x).raw_dim(), |_| {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    });
    Ok(tape.apply_mask(x, mask))
}

/// Mean over the node axis: `B x N x F -> B x F`.
pub fn global_mean_pool(tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(AutodiffError::ShapeMismatch {
            expected: "B x N x F with N >= 1".into(),
            got: format!("{shape:?}"),
        });
    }
    Ok(tape.mean_nodes(x))
}

/// `x . W + b` for `x: B x D_in`.
pub fn fully_connected(
    tape: &mut Tape,
    x: Var,
    weight: Var,
    bias: Var,
) -> Result<Var, AutodiffError> {
    let xs = tape.value(x).shape().to_vec();
    let ws = tape.value(weight).shape().to_vec();
    let bs = tape.value(bias).shape().to_vec();
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
        return Err(AutodiffError::ShapeMismatch {
            expected: "x: B x D_in, W: D_in x D_out, b: D_out".into(),
            got: format!("x: {xs:?}, W: {ws:?}, b: {bs:?}"),
        });
    }
    let prod = tape.matmul(x, weight);
    Ok(tape.add_bias_row(prod, bias))
}

/// Row-wise softmax with log-sum-exp stabilization (plain function, not a
/// tape op; predictions and tests use it).
pub fn softmax(logits: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy between logits and one-hot labels.
///
/// Returns a scalar node; the gradient with respect to the logits is
/// `(softmax(logits) - labels) / B`.
pub fn softmax_cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels_one_hot: &ndarray::Array2<f64>,
) -> Result<Var, AutodiffError> {
    let ls = tape.value(logits).shape().to_vec();
    if ls.len() != 2 || ls[1] < 2 {
        return Err(AutodiffError::ShapeMismatch {
            expected: "logits: B x O with O >= 2".into(),
            got: format!("{ls:?}"),
        });
    }
    if labels_one_hot.dim() != (ls[0], ls[1]) {
        return Err(AutodiffError::ShapeMismatch {
            expected: format!("labels: {} x {}", ls[0], ls[1]),
            got: format!("{:?}", labels_one_hot.dim()),
        });
    }
    let mut label_idx = Vec::with_capacity(ls[0]);
    for (r, row) in labels_one_hot.rows().into_iter().enumerate() {
        let mut hot = None;
        for (i, &v) in row.iter().enumerate() {
            if v == 1.0 {
                if hot.replace(i).is_some() {
                    return Err(AutodiffError::InvalidLabel(r));
                }
            } else if v != 0.0 {
                return Err(AutodiffError::InvalidLabel(r));
            }
        }
        label_idx.push(hot.ok_or(AutodiffError::InvalidLabel(r))?);
    }
    Ok(softmax_cross_entropy_indexed(tape, logits, &label_idx))
}

/// Cross-entropy against class indices; the form the training loop uses.
pub fn softmax_cross_entropy_indexed(tape: &mut Tape, logits: Var, labels: &[usize]) -> Var {
    let lv = as2(tape.value(logits)).to_owned();
    let bsz = lv.nrows();
    assert_eq!(labels.len(), bsz, "one label per row");
    let probs = softmax(&lv);
    let mut loss = 0.0_f64;
    for (b, &y) in labels.iter().enumerate() {
        let max = lv.row(b).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.row(b).iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - lv[[b, y]];
    }
    loss /= bsz as f64;
    let logits_id = logits.0;
    let labels = labels.to_vec();
    let back = move |g: &ArrayD<f64>, _vals: &[ArrayD<f64>]| {
        let gscale = g.iter().next().copied().unwrap_or(1.0);
        let mut dl = probs.clone();
        for (b, &y) in labels.iter().enumerate() {
            dl[[b, y]] -= 1.0;
        }
        dl.mapv_inplace(|v| v * gscale / bsz as f64);
        vec![(logits_id, dl.into_dyn())]
    };
    tape.push_custom(
        ArrayD::from_elem(IxDyn(&[]), loss),
        Some(Box::new(back)),
    )
}
