//! The generalized GCN classifier and its six named settings.
//!
//! Every network is (graph conv -> batch norm -> ReLU) repeated, a global
//! mean pool, then a fully-connected block. Models C and D go straight from
//! the pool to the output layer; the others interleave batch norm, ReLU and
//! dropout between hidden FC layers.

mod metrics;

pub use metrics::{confusion_matrix, ConfusionMatrix, MetricsReport};

use crate::autodiff::{
    adam_step, batch_norm, cheb_conv_forward, dropout, fully_connected, global_mean_pool, relu,
    softmax_cross_entropy_indexed, AdamConfig, AutodiffError, BatchNormState, Grads, Mode,
    ParamKind, ParamState, Tape, Var,
};
use crate::graph::{ChebBasis, GraphError, LambdaMaxMode};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("empty evaluation split")]
    EmptySplit,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One of the six published model settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelPreset {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl ModelPreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Self::A),
            "B" => Some(Self::B),
            "C" => Some(Self::C),
            "D" => Some(Self::D),
            "E" => Some(Self::E),
            "F" => Some(Self::F),
            _ => None,
        }
    }

    pub fn letter(&self) -> &'static str {
        match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::D => "D",
            Self::E => "E",
            Self::F => "F",
        }
    }

    pub fn all() -> [ModelPreset; 6] {
        [Self::A, Self::B, Self::C, Self::D, Self::E, Self::F]
    }
}

/// Layer plan: filter counts and polynomial orders per conv layer, hidden
/// widths for the FC block (ending at the class count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub conv_filters: Vec<usize>,
    pub conv_orders: Vec<usize>,
    pub fc_nodes: Vec<usize>,
    pub has_bn_fc: bool,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    /// Conv bias is per node by default (`N x F`); this switches to a plain
    /// per-feature vector.
    #[serde(default)]
    pub per_feature_conv_bias: bool,
}

fn default_dropout() -> f64 {
    0.5
}

impl ModelSpec {
    pub fn preset(preset: ModelPreset, n_nodes: usize) -> Self {
        let (filters, order, fc, bn_fc): (Vec<usize>, usize, Vec<usize>, bool) = match preset {
            ModelPreset::A => (vec![16, 32, 64, 128, 256, 512], 5, vec![1024, 2048, 4], true),
            ModelPreset::B => (vec![16, 32, 64, 128, 256, 512], 2, vec![1024, 2048, 4], true),
            ModelPreset::C => (vec![16, 32, 64, 128, 256], 5, vec![4], false),
            ModelPreset::D => (vec![16, 32, 64, 128, 256], 2, vec![4], false),
            ModelPreset::E => (vec![64, 128, 256, 512, 1024], 5, vec![512, 128, 4], true),
            ModelPreset::F => (vec![64, 128, 256, 512, 1024], 2, vec![512, 128, 4], true),
        };
        let orders = vec![order; filters.len()];
        ModelSpec {
            n_nodes,
            n_classes: 4,
            conv_filters: filters,
            conv_orders: orders,
            fc_nodes: fc,
            has_bn_fc: bn_fc,
            dropout_rate: 0.5,
            per_feature_conv_bias: false,
        }
    }

    /// A small five-layer, order-2 variant for desk-scale runs: the Model D
    /// shape with `filters` channels per layer.
    pub fn shrunken(n_nodes: usize, filters: usize) -> Self {
        ModelSpec {
            n_nodes,
            n_classes: 4,
            conv_filters: vec![filters; 5],
            conv_orders: vec![2; 5],
            fc_nodes: vec![4],
            has_bn_fc: false,
            dropout_rate: 0.5,
            per_feature_conv_bias: false,
        }
    }

    /// Parses a JSON model description: `{"letter": "D"}` picks a named
    /// setting, explicit `conv_filters` / `conv_orders` / `fc_nodes` lists
    /// build a custom one. `n_nodes` defaults to `default_nodes`.
    pub fn from_json(text: &str, default_nodes: usize) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct SpecFile {
            letter: Option<String>,
            n_nodes: Option<usize>,
            n_classes: Option<usize>,
            conv_filters: Option<Vec<usize>>,
            conv_orders: Option<Vec<usize>>,
            fc_nodes: Option<Vec<usize>>,
            has_bn_fc: Option<bool>,
            dropout_rate: Option<f64>,
            per_feature_conv_bias: Option<bool>,
        }
        let file: SpecFile = serde_json::from_str(text)
            .map_err(|e| ModelError::InvalidSpec(format!("model spec json: {e}")))?;
        let n_nodes = file.n_nodes.unwrap_or(default_nodes);
        let mut spec = match &file.letter {
            Some(letter) => {
                let preset = ModelPreset::parse(letter).ok_or_else(|| {
                    ModelError::InvalidSpec(format!("unknown model letter {letter:?}"))
                })?;
                ModelSpec::preset(preset, n_nodes)
            }
            None => {
                let conv_filters = file.conv_filters.clone().ok_or_else(|| {
                    ModelError::InvalidSpec("need a letter or explicit conv_filters".into())
                })?;
                let conv_orders = file.conv_orders.clone().ok_or_else(|| {
                    ModelError::InvalidSpec("explicit specs need conv_orders".into())
                })?;
                let fc_nodes = file.fc_nodes.clone().ok_or_else(|| {
                    ModelError::InvalidSpec("explicit specs need fc_nodes".into())
                })?;
                ModelSpec {
                    n_nodes,
                    n_classes: file.n_classes.unwrap_or(4),
                    conv_filters,
                    conv_orders,
                    fc_nodes,
                    has_bn_fc: file.has_bn_fc.unwrap_or(false),
                    dropout_rate: 0.5,
                    per_feature_conv_bias: false,
                }
            }
        };
        if let Some(rate) = file.dropout_rate {
            spec.dropout_rate = rate;
        }
        if let Some(flag) = file.per_feature_conv_bias {
            spec.per_feature_conv_bias = flag;
        }
        if file.letter.is_some()
            && (file.conv_filters.is_some()
                || file.conv_orders.is_some()
                || file.fc_nodes.is_some())
        {
            return Err(ModelError::InvalidSpec(
                "give either a letter or explicit lists, not both".into(),
            ));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_filters.is_empty() {
            return Err(ModelError::InvalidSpec("no conv layers".into()));
        }
        if self.conv_filters.len() != self.conv_orders.len() {
            return Err(ModelError::InvalidSpec(format!(
                "{} filter counts vs {} polynomial orders",
                self.conv_filters.len(),
                self.conv_orders.len()
            )));
        }
        if self.fc_nodes.last() != Some(&self.n_classes) {
            return Err(ModelError::InvalidSpec(format!(
                "last FC width must equal the class count {}",
                self.n_classes
            )));
        }
        if self.n_nodes == 0
            || self.n_classes < 2
            || self.conv_filters.iter().any(|&f| f == 0)
            || self.conv_orders.iter().any(|&k| k == 0)
            || self.fc_nodes.iter().any(|&h| h == 0)
        {
            return Err(ModelError::InvalidSpec("all counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidSpec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn max_order(&self) -> usize {
        *self.conv_orders.iter().max().unwrap_or(&1)
    }
}

struct ConvLayer {
    theta: usize,
    bias: usize,
    bn_gamma: usize,
    bn_beta: usize,
    bn_mean: usize,
    bn_var: usize,
    order: usize,
}

struct FcLayer {
    weight: usize,
    bias: usize,
    /// gamma, beta, running mean, running var — present on hidden layers of
    /// BN-equipped FC blocks.
    bn: Option<(usize, usize, usize, usize)>,
}

/// Where the adjacency feeding the conv layers comes from.
pub enum GraphSource<'a> {
    /// Precomputed Chebyshev terms of a fixed adjacency (PCC or geodesic).
    FixedBasis(&'a ChebBasis),
    /// Trainable mask: the `mask` parameter gated by a binary support, run
    /// through degree normalization and the recurrence on the tape.
    TrainableMask { support: &'a Array2<f64>, lambda_max: LambdaMaxMode },
}

/// A built network: spec, parameters (with rewind snapshots), layer handles.
pub struct NetworkInstance {
    pub spec: ModelSpec,
    pub params: ParamState,
    conv_layers: Vec<ConvLayer>,
    fc_layers: Vec<FcLayer>,
    mask_param: Option<usize>,
}

/// Result of one recorded forward pass.
pub struct ForwardPass {
    pub logits: Var,
    /// Parameter index -> tape leaf, for routing gradients back.
    pub leaves: Vec<(usize, Var)>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> f64 {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (rng.random::<f64>() * 2.0 - 1.0) * limit
}

/// Allocates and initializes parameters for a spec.
///
/// Weights are Glorot-uniform per coefficient matrix, batch-norm scale 1 /
/// shift 0, biases 0. `trainable_mask` registers the `mask` parameter
/// (all ones off the diagonal) for mask-training runs. The snapshot for the
/// later rewinds is taken here.
pub fn build_model(
    spec: ModelSpec,
    seed: u64,
    trainable_mask: bool,
) -> Result<NetworkInstance, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamState::new();
    let n = spec.n_nodes;

    let mut conv_layers = Vec::new();
    let mut f_in = 1usize;
    for (i, (&f_out, &order)) in spec.conv_filters.iter().zip(&spec.conv_orders).enumerate() {
        let theta = ArrayD::from_shape_fn(IxDyn(&[order, f_in, f_out]), |_| {
            glorot(&mut rng, f_in, f_out)
        });
        let bias_shape: &[usize] =
            if spec.per_feature_conv_bias { &[f_out] } else { &[n, f_out] };
        let layer = ConvLayer {
            theta: params.push(format!("conv{i}.theta"), ParamKind::Weight, theta),
            bias: params.push(
                format!("conv{i}.bias"),
                ParamKind::Weight,
                ArrayD::zeros(IxDyn(bias_shape)),
            ),
            bn_gamma: params.push(
                format!("conv{i}.bn.gamma"),
                ParamKind::Weight,
                ArrayD::ones(IxDyn(&[f_out])),
            ),
            bn_beta: params.push(
                format!("conv{i}.bn.beta"),
                ParamKind::Weight,
                ArrayD::zeros(IxDyn(&[f_out])),
            ),
            bn_mean: params.push(
                format!("conv{i}.bn.running_mean"),
                ParamKind::Buffer,
                ArrayD::zeros(IxDyn(&[f_out])),
            ),
            bn_var: params.push(
                format!("conv{i}.bn.running_var"),
                ParamKind::Buffer,
                ArrayD::ones(IxDyn(&[f_out])),
            ),
            order,
        };
        conv_layers.push(layer);
        f_in = f_out;
    }

    let mut fc_layers = Vec::new();
    let mut d_in = *spec.conv_filters.last().unwrap();
    for (j, &d_out) in spec.fc_nodes.iter().enumerate() {
        let weight = ArrayD::from_shape_fn(IxDyn(&[d_in, d_out]), |_| {
            glorot(&mut rng, d_in, d_out)
        });
        let weight = params.push(format!("fc{j}.weight"), ParamKind::Weight, weight);
        let bias =
            params.push(format!("fc{j}.bias"), ParamKind::Weight, ArrayD::zeros(IxDyn(&[d_out])));
        let hidden = j + 1 < spec.fc_nodes.len();
        let bn = if hidden && spec.has_bn_fc {
            Some((
                params.push(
                    format!("fc{j}.bn.gamma"),
                    ParamKind::Weight,
                    ArrayD::ones(IxDyn(&[d_out])),
                ),
                params.push(
                    format!("fc{j}.bn.beta"),
                    ParamKind::Weight,
                    ArrayD::zeros(IxDyn(&[d_out])),
                ),
                params.push(
                    format!("fc{j}.bn.running_mean"),
                    ParamKind::Buffer,
                    ArrayD::zeros(IxDyn(&[d_out])),
                ),
                params.push(
                    format!("fc{j}.bn.running_var"),
                    ParamKind::Buffer,
                    ArrayD::ones(IxDyn(&[d_out])),
                ),
            ))
        } else {
            None
        };
        fc_layers.push(FcLayer { weight, bias, bn });
        d_in = d_out;
    }

    let mask_param = if trainable_mask {
        let mut ones = Array2::<f64>::ones((n, n));
        for i in 0..n {
            ones[[i, i]] = 0.0;
        }
        Some(params.push("mask", ParamKind::Mask, ones.into_dyn()))
    } else {
        None
    };

    Ok(NetworkInstance { spec, params, conv_layers, fc_layers, mask_param })
}

impl NetworkInstance {
    pub fn mask_param(&self) -> Option<usize> {
        self.mask_param
    }

    /// Builds the Chebyshev term nodes up to the model's maximum order.
    fn build_terms(
        &self,
        tape: &mut Tape,
        source: &GraphSource,
        leaves: &mut Vec<(usize, Var)>,
    ) -> Result<Vec<Var>, ModelError> {
        let k_max = self.spec.max_order();
        let n = self.spec.n_nodes;
        match source {
            GraphSource::FixedBasis(basis) => {
                if basis.order < k_max {
                    return Err(ModelError::InvalidSpec(format!(
                        "basis order {} below required {k_max}",
                        basis.order
                    )));
                }
                Ok(basis.terms[..k_max]
                    .iter()
                    .map(|t| tape.constant(t.clone().into_dyn()))
                    .collect())
            }
            GraphSource::TrainableMask { support, lambda_max } => {
                let mask_idx = self.mask_param.ok_or_else(|| {
                    ModelError::InvalidSpec("network was built without a trainable mask".into())
                })?;
                if support.dim() != (n, n) {
                    return Err(ModelError::InvalidSpec(format!(
                        "support shape {:?}, expected {n} x {n}",
                        support.dim()
                    )));
                }
                let mask_var = tape.leaf(self.params.value(mask_idx).clone());
                leaves.push((mask_idx, mask_var));
                // Gate by the binary support (zero diagonal): pruned entries
                // contribute nothing and receive zero gradient.
                let mut gate = (*support).clone();
                for i in 0..n {
                    gate[[i, i]] = 0.0;
                }
                let adj = tape.mul_const(mask_var, &gate.into_dyn());
                let degrees = tape.row_sum(adj);
                let dinv_sqrt = tape.rsqrt_or_zero(degrees);
                let normalized = tape.scale_sym(adj, dinv_sqrt);
                let laplacian = tape.affine_identity(normalized, -1.0, 1.0);
                let lam = match lambda_max {
                    LambdaMaxMode::Fixed2 => 2.0,
                    // The estimate is treated as a constant: gradients do
                    // not flow through lambda_max.
                    LambdaMaxMode::PowerIteration => {
                        let lv = crate::graph::power_iteration_lambda_max(
                            &crate::autodiff::view2(tape.value(laplacian)),
                        );
                        if lv.abs() < 1e-9 {
                            2.0
                        } else {
                            lv
                        }
                    }
                };
                let scaled = tape.affine_identity(laplacian, 2.0 / lam, -1.0);
                let mut terms = Vec::with_capacity(k_max);
                terms.push(tape.constant(Array2::<f64>::eye(n).into_dyn()));
                if k_max >= 2 {
                    terms.push(scaled);
                }
                for k in 2..k_max {
                    let prod = tape.matmul(scaled, terms[k - 1]);
                    terms.push(tape.lincomb(2.0, prod, -1.0, terms[k - 2]));
                }
                Ok(terms)
            }
        }
    }

    /// One forward pass over a batch. In train mode, dropout consumes the
    /// RNG and batch norm folds batch statistics into its running buffers.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: &Array3<f64>,
        source: &GraphSource,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass, ModelError> {
        let (_bsz, n, f) = x.dim();
        if n != self.spec.n_nodes || f != 1 {
            return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
                expected: format!("B x {} x 1", self.spec.n_nodes),
                got: format!("{:?}", x.dim()),
            }));
        }
        let mut leaves = Vec::new();
        let terms = self.build_terms(tape, source, &mut leaves)?;

        let mut h = tape.constant(x.clone().into_dyn());
        for li in 0..self.conv_layers.len() {
            let (theta_idx, bias_idx, order) = {
                let l = &self.conv_layers[li];
                (l.theta, l.bias, l.order)
            };
            let theta = tape.leaf(self.params.value(theta_idx).clone());
            let bias = tape.leaf(self.params.value(bias_idx).clone());
            leaves.push((theta_idx, theta));
            leaves.push((bias_idx, bias));
            h = cheb_conv_forward(tape, h, &terms[..order], theta, bias)?;
            h = self.apply_bn(
                tape,
                h,
                (
                    self.conv_layers[li].bn_gamma,
                    self.conv_layers[li].bn_beta,
                    self.conv_layers[li].bn_mean,
                    self.conv_layers[li].bn_var,
                ),
                mode,
                &mut leaves,
            )?;
            h = relu(tape, h);
        }
        h = global_mean_pool(tape, h)?;

        let n_fc = self.fc_layers.len();
        for fi in 0..n_fc {
            let (w_idx, b_idx, bn) = {
                let l = &self.fc_layers[fi];
                (l.weight, l.bias, l.bn)
            };
            let w = tape.leaf(self.params.value(w_idx).clone());
            let b = tape.leaf(self.params.value(b_idx).clone());
            leaves.push((w_idx, w));
            leaves.push((b_idx, b));
            h = fully_connected(tape, h, w, b)?;
            if let Some(bn_handles) = bn {
                h = self.apply_bn(tape, h, bn_handles, mode, &mut leaves)?;
                h = relu(tape, h);
                h = dropout(tape, h, self.spec.dropout_rate, mode, rng)?;
            }
        }
        if !tape.value(h).iter().all(|v| v.is_finite()) {
            return Err(ModelError::Autodiff(AutodiffError::NonFiniteValue("forward")));
        }
        Ok(ForwardPass { logits: h, leaves })
    }

    fn apply_bn(
        &mut self,
        tape: &mut Tape,
        x: Var,
        (gamma_idx, beta_idx, mean_idx, var_idx): (usize, usize, usize, usize),
        mode: Mode,
        leaves: &mut Vec<(usize, Var)>,
    ) -> Result<Var, ModelError> {
        let gamma = tape.leaf(self.params.value(gamma_idx).clone());
        let beta = tape.leaf(self.params.value(beta_idx).clone());
        leaves.push((gamma_idx, gamma));
        leaves.push((beta_idx, beta));
        let mut state = BatchNormState {
            running_mean: self.params.value(mean_idx).iter().copied().collect(),
            running_var: self.params.value(var_idx).iter().copied().collect(),
        };
        let out = batch_norm(tape, x, gamma, beta, &mut state, mode, 1e-5, 0.1)?;
        if mode == Mode::Train {
            self.params
                .value_mut(mean_idx)
                .iter_mut()
                .zip(&state.running_mean)
                .for_each(|(dst, src)| *dst = *src);
            self.params
                .value_mut(var_idx)
                .iter_mut()
                .zip(&state.running_var)
                .for_each(|(dst, src)| *dst = *src);
        }
        Ok(out)
    }

    /// Cross-entropy training step on one batch. Returns the loss.
    pub fn train_step(
        &mut self,
        x: &Array3<f64>,
        y: &[usize],
        source: &GraphSource,
        cfg: &AdamConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, x, source, Mode::Train, rng)?;
        let loss = softmax_cross_entropy_indexed(&mut tape, pass.logits, y);
        let loss_value = *tape.value(loss).iter().next().unwrap();
        let mut grads = tape.backward(loss);
        let updates = collect_updates(&pass, &mut grads);
        adam_step(&mut self.params, &updates, cfg)?;
        Ok(loss_value)
    }

    /// Eval-mode logits for a batch (no recording, no stat updates).
    pub fn infer(
        &mut self,
        x: &Array3<f64>,
        source: &GraphSource,
    ) -> Result<Array2<f64>, ModelError> {
        let mut tape = Tape::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = self.forward(&mut tape, x, source, Mode::Eval, &mut rng)?;
        Ok(crate::autodiff::view2(tape.value(pass.logits)))
    }

    /// Argmax predictions for a batch.
    pub fn predict(
        &mut self,
        x: &Array3<f64>,
        source: &GraphSource,
    ) -> Result<Vec<usize>, ModelError> {
        let logits = self.infer(x, source)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}

/// Pulls per-parameter gradients out of a finished backward pass.
pub fn collect_updates(pass: &ForwardPass, grads: &mut Grads) -> Vec<(usize, ArrayD<f64>)> {
    let mut updates = Vec::with_capacity(pass.leaves.len());
    for &(param_idx, var) in &pass.leaves {
        if let Some(g) = grads.take(var) {
            updates.push((param_idx, g));
        }
    }
    updates
}

/// Accuracy, macro sensitivity/precision/F1 and the confusion matrix of a
/// network over a labeled split, evaluated in batches.
pub fn predict_metrics(
    net: &mut NetworkInstance,
    x: &Array3<f64>,
    y: &[usize],
    source: &GraphSource,
    batch_size: usize,
) -> Result<MetricsReport, ModelError> {
    let m = x.dim().0;
    if m == 0 || y.len() != m {
        return Err(ModelError::EmptySplit);
    }
    let mut pairs = Vec::with_capacity(m);
    let mut start = 0;
    while start < m {
        let end = (start + batch_size).min(m);
        let slice = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let preds = net.predict(&slice, source)?;
        for (offset, pred) in preds.into_iter().enumerate() {
            pairs.push((y[start + offset], pred));
        }
        start = end;
    }
    let confusion = confusion_matrix(net.spec.n_classes, pairs.iter().copied());
    Ok(MetricsReport::from_confusion(confusion))
}

#[cfg(test)]
mod tests;
