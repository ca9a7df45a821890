use super::*;
use crate::graph::{chebyshev_basis, laplacian_bundle, Graph};
use ndarray::Array3;
use rand::Rng;

fn random_graph(n: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let w = rng.random::<f64>();
            a[[i, j]] = w;
            a[[j, i]] = w;
        }
    }
    Graph::from_adjacency(a).unwrap()
}

fn fixed_basis(graph: &Graph, order: usize) -> ChebBasis {
    let bundle = laplacian_bundle(graph, LambdaMaxMode::Fixed2, true).unwrap();
    chebyshev_basis(&bundle, order).unwrap()
}

#[test]
fn preset_d_shape() {
    let spec = ModelSpec::preset(ModelPreset::D, 64);
    assert_eq!(spec.conv_filters, vec![16, 32, 64, 128, 256]);
    assert_eq!(spec.conv_orders, vec![2; 5]);
    assert_eq!(spec.fc_nodes, vec![4]);
    assert!(!spec.has_bn_fc);
    let net = build_model(spec, 1, false).unwrap();
    assert_eq!(net.conv_layers.len(), 5);
    assert_eq!(net.fc_layers.len(), 1);
    assert!(net.fc_layers[0].bn.is_none());
    assert_eq!(net.params.value(net.fc_layers[0].weight).shape(), &[256, 4]);
}

#[test]
fn preset_a_shape() {
    let spec = ModelSpec::preset(ModelPreset::A, 64);
    assert_eq!(spec.conv_filters, vec![16, 32, 64, 128, 256, 512]);
    assert_eq!(spec.conv_orders, vec![5; 6]);
    assert_eq!(spec.fc_nodes, vec![1024, 2048, 4]);
    assert!(spec.has_bn_fc);
    let net = build_model(spec, 1, false).unwrap();
    assert_eq!(net.conv_layers.len(), 6);
    assert_eq!(net.fc_layers.len(), 3);
    assert!(net.fc_layers[0].bn.is_some());
    assert!(net.fc_layers[1].bn.is_some());
    assert!(net.fc_layers[2].bn.is_none());
}

#[test]
fn mismatched_spec_is_rejected() {
    let mut spec = ModelSpec::preset(ModelPreset::A, 64);
    spec.conv_orders.pop();
    assert!(matches!(build_model(spec, 1, false), Err(ModelError::InvalidSpec(_))));

    let mut spec = ModelSpec::preset(ModelPreset::C, 64);
    spec.fc_nodes = vec![8];
    assert!(matches!(build_model(spec, 1, false), Err(ModelError::InvalidSpec(_))));
}

#[test]
fn every_preset_emits_batch_by_four_logits() {
    let n = 64;
    let graph = random_graph(n, 5);
    let basis = fixed_basis(&graph, 5);
    let x = Array3::from_shape_fn((7, n, 1), |(b, i, _)| ((b + i) % 5) as f64 * 0.1);
    for preset in ModelPreset::all() {
        let spec = ModelSpec::preset(preset, n);
        let mut net = build_model(spec, 2, false).unwrap();
        let logits = net.infer(&x, &GraphSource::FixedBasis(&basis)).unwrap();
        assert_eq!(logits.dim(), (7, 4), "model {}", preset.letter());
        assert!(logits.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn zero_input_gives_batch_constant_logits() {
    let n = 8;
    let graph = random_graph(n, 6);
    let basis = fixed_basis(&graph, 2);
    let spec = ModelSpec::shrunken(n, 2);
    let mut net = build_model(spec, 3, false).unwrap();
    let x = Array3::<f64>::zeros((5, n, 1));
    let logits = net.infer(&x, &GraphSource::FixedBasis(&basis)).unwrap();
    for b in 1..5 {
        for o in 0..4 {
            assert_eq!(logits[[b, o]], logits[[0, o]]);
        }
    }
}

#[test]
fn eval_outputs_ignore_batch_order() {
    let n = 8;
    let graph = random_graph(n, 7);
    let basis = fixed_basis(&graph, 2);
    let mut net = build_model(ModelSpec::shrunken(n, 2), 4, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array3::from_shape_fn((6, n, 1), |_| rng.random::<f64>());
    let logits = net.infer(&x, &GraphSource::FixedBasis(&basis)).unwrap();
    let perm = [3usize, 0, 5, 1, 4, 2];
    let xp = Array3::from_shape_fn((6, n, 1), |(b, i, c)| x[[perm[b], i, c]]);
    let logits_p = net.infer(&xp, &GraphSource::FixedBasis(&basis)).unwrap();
    for (b, &src) in perm.iter().enumerate() {
        for o in 0..4 {
            assert_eq!(logits_p[[b, o]], logits[[src, o]]);
        }
    }
}

#[test]
fn node_relabeling_leaves_logits_unchanged() {
    let n = 8;
    let graph = random_graph(n, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Array3::from_shape_fn((3, n, 1), |_| rng.random::<f64>());

    // Freshly built nets have zero conv biases, so per-node biases do not
    // break the symmetry.
    let mut net = build_model(ModelSpec::shrunken(n, 3), 11, false).unwrap();
    let basis = fixed_basis(&graph, 2);
    let logits = net.infer(&x, &GraphSource::FixedBasis(&basis)).unwrap();

    let perm: Vec<usize> = vec![4, 2, 7, 0, 6, 1, 3, 5];
    let mut a_perm = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a_perm[[i, j]] = graph.adjacency[[perm[i], perm[j]]];
        }
    }
    let graph_perm = Graph::from_adjacency(a_perm).unwrap();
    let basis_perm = fixed_basis(&graph_perm, 2);
    let x_perm = Array3::from_shape_fn((3, n, 1), |(b, i, c)| x[[b, perm[i], c]]);
    let logits_perm = net.infer(&x_perm, &GraphSource::FixedBasis(&basis_perm)).unwrap();
    for (a, b) in logits.iter().zip(logits_perm.iter()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn trainable_parameter_counts_match_closed_form() {
    // Closed form per the architecture table: conv weights F_in*F_out*K,
    // conv bias N*F, batch-norm gamma+beta, FC D_in*D_out + D_out.
    let n = 64u64;
    let closed_form = |spec: &ModelSpec| -> u64 {
        let mut total = 0u64;
        let mut f_in = 1u64;
        for (&f, &k) in spec.conv_filters.iter().zip(&spec.conv_orders) {
            let f = f as u64;
            total += f_in * f * k as u64;
            total += n * f;
            total += 2 * f;
            f_in = f;
        }
        let mut d_in = *spec.conv_filters.last().unwrap() as u64;
        for (j, &h) in spec.fc_nodes.iter().enumerate() {
            let h = h as u64;
            total += d_in * h + h;
            if spec.has_bn_fc && j + 1 < spec.fc_nodes.len() {
                total += 2 * h;
            }
            d_in = h;
        }
        total
    };
    let expected: [(ModelPreset, u64); 6] = [
        (ModelPreset::A, 3_578_420),
        (ModelPreset::B, 3_054_596),
        (ModelPreset::C, 251_444),
        (ModelPreset::D, 120_836),
        (ModelPreset::E, 4_205_124),
        (ModelPreset::F, 2_115_972),
    ];
    for (preset, count) in expected {
        let spec = ModelSpec::preset(preset, n as usize);
        assert_eq!(closed_form(&spec), count, "closed form for model {}", preset.letter());
        let net = build_model(spec, 1, false).unwrap();
        let trainable: u64 = net
            .params
            .entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.len() as u64)
            .sum();
        assert_eq!(trainable, count, "allocated params for model {}", preset.letter());
    }
}

#[test]
fn model_spec_json_parses_letters_and_explicit_lists() {
    let spec = ModelSpec::from_json(r#"{"letter": "D"}"#, 64).unwrap();
    assert_eq!(spec, ModelSpec::preset(ModelPreset::D, 64));

    let spec = ModelSpec::from_json(r#"{"letter": "A", "n_nodes": 16}"#, 64).unwrap();
    assert_eq!(spec.n_nodes, 16);
    assert_eq!(spec.conv_orders, vec![5; 6]);

    let spec = ModelSpec::from_json(
        r#"{
            "conv_filters": [4, 8],
            "conv_orders": [2, 3],
            "fc_nodes": [16, 4],
            "has_bn_fc": true,
            "per_feature_conv_bias": true
        }"#,
        10,
    )
    .unwrap();
    assert_eq!(spec.n_nodes, 10);
    assert!(spec.has_bn_fc);
    assert!(spec.per_feature_conv_bias);
    build_model(spec, 1, false).unwrap();

    assert!(matches!(
        ModelSpec::from_json(r#"{"letter": "Z"}"#, 64),
        Err(ModelError::InvalidSpec(_))
    ));
    assert!(matches!(
        ModelSpec::from_json(r#"{"conv_filters": [4]}"#, 64),
        Err(ModelError::InvalidSpec(_))
    ));
    assert!(matches!(
        ModelSpec::from_json(r#"{"letter": "A", "fc_nodes": [4]}"#, 64),
        Err(ModelError::InvalidSpec(_))
    ));
}

#[test]
fn per_feature_bias_variant_runs_and_differs_in_allocation() {
    let mut spec = ModelSpec::shrunken(6, 2);
    spec.per_feature_conv_bias = true;
    let net = build_model(spec, 3, false).unwrap();
    let bias_idx = net.params.index_of("conv0.bias").unwrap();
    assert_eq!(net.params.value(bias_idx).shape(), &[2]);
    let graph = random_graph(6, 8);
    let basis = fixed_basis(&graph, 2);
    let mut net = net;
    let x = Array3::from_shape_fn((2, 6, 1), |(b, i, _)| (b + i) as f64 * 0.1);
    let logits = net.infer(&x, &GraphSource::FixedBasis(&basis)).unwrap();
    assert_eq!(logits.dim(), (2, 4));
}

#[test]
fn power_iteration_mask_source_runs() {
    let n = 6;
    let mut net = build_model(ModelSpec::shrunken(n, 2), 5, true).unwrap();
    let mut support = Array2::<f64>::ones((n, n));
    for i in 0..n {
        support[[i, i]] = 0.0;
    }
    let source = GraphSource::TrainableMask {
        support: &support,
        lambda_max: LambdaMaxMode::PowerIteration,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Array3::from_shape_fn((3, n, 1), |_| rng.random::<f64>());
    let y = vec![0usize, 1, 2];
    let loss = net
        .train_step(&x, &y, &source, &crate::autodiff::AdamConfig::default(), &mut rng)
        .unwrap();
    assert!(loss.is_finite());
}

#[test]
fn same_seed_builds_identical_networks() {
    let spec = ModelSpec::shrunken(8, 2);
    let a = build_model(spec.clone(), 42, true).unwrap();
    let b = build_model(spec, 42, true).unwrap();
    for (ea, eb) in a.params.entries.iter().zip(&b.params.entries) {
        assert_eq!(ea.name, eb.name);
        assert_eq!(ea.value, eb.value);
    }
}

#[test]
fn mask_gradients_flow_and_respect_support() {
    let n = 5;
    let spec = ModelSpec {
        n_nodes: n,
        n_classes: 4,
        conv_filters: vec![2, 2],
        conv_orders: vec![2, 3],
        fc_nodes: vec![4],
        has_bn_fc: false,
        dropout_rate: 0.0,
        per_feature_conv_bias: false,
    };
    let template = build_model(spec, 13, true).unwrap();
    let mask_idx = template.mask_param().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Array3::from_shape_fn((3, n, 1), |_| rng.random::<f64>() * 2.0 - 1.0);
    let y = vec![0usize, 2, 3];
    let mut support = Array2::<f64>::ones((n, n));
    for i in 0..n {
        support[[i, i]] = 0.0;
    }
    support[[0, 3]] = 0.0;
    support[[4, 1]] = 0.0;

    let loss_of = |mask_values: &ArrayD<f64>| -> f64 {
        let mut net = template_clone(&template);
        net.params.value_mut(mask_idx).assign(mask_values);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let source = GraphSource::TrainableMask { support: &support, lambda_max: LambdaMaxMode::Fixed2 };
        let pass = net.forward(&mut tape, &x, &source, Mode::Train, &mut rng).unwrap();
        let loss = softmax_cross_entropy_indexed(&mut tape, pass.logits, &y);
        *tape.value(loss).iter().next().unwrap()
    };

    // Analytic gradient.
    let mut net = template_clone(&template);
    let mut tape = Tape::new();
    let mut frng = ChaCha8Rng::seed_from_u64(99);
    let source = GraphSource::TrainableMask { support: &support, lambda_max: LambdaMaxMode::Fixed2 };
    let pass = net.forward(&mut tape, &x, &source, Mode::Train, &mut frng).unwrap();
    let loss = softmax_cross_entropy_indexed(&mut tape, pass.logits, &y);
    let mut grads = tape.backward(loss);
    let mask_var = pass.leaves.iter().find(|(p, _)| *p == mask_idx).unwrap().1;
    let analytic = grads.take(mask_var).unwrap();

    let base = template.params.value(mask_idx).clone();
    let h = 1e-5;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = analytic[[i, j]];
            if support[[i, j]] == 0.0 {
                assert_eq!(a, 0.0, "pruned entry ({i},{j}) must have zero gradient");
                continue;
            }
            let mut plus = base.clone();
            plus[[i, j]] += h;
            let mut minus = base.clone();
            minus[[i, j]] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() / denom < 1e-4,
                "mask entry ({i},{j}): analytic {a} vs numeric {numeric}"
            );
        }
    }
}

fn template_clone(net: &NetworkInstance) -> NetworkInstance {
    NetworkInstance {
        spec: net.spec.clone(),
        params: net.params.clone(),
        conv_layers: net
            .conv_layers
            .iter()
            .map(|l| ConvLayer {
                theta: l.theta,
                bias: l.bias,
                bn_gamma: l.bn_gamma,
                bn_beta: l.bn_beta,
                bn_mean: l.bn_mean,
                bn_var: l.bn_var,
                order: l.order,
            })
            .collect(),
        fc_layers: net
            .fc_layers
            .iter()
            .map(|l| FcLayer { weight: l.weight, bias: l.bias, bn: l.bn })
            .collect(),
        mask_param: net.mask_param,
    }
}

// ---- metrics ----

#[test]
fn metrics_perfect_predictions() {
    let pairs = (0..40).map(|i| (i % 4, i % 4));
    let report = MetricsReport::from_confusion(confusion_matrix(4, pairs));
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.macro_f1, 1.0);
    assert_eq!(report.macro_sensitivity, 1.0);
    assert_eq!(report.macro_precision, 1.0);
}

#[test]
fn metrics_two_class_hand_arithmetic() {
    // Confusion [[3, 1], [1, 3]]: accuracy 0.75, F1 0.75.
    let pairs = vec![
        (0, 0),
        (0, 0),
        (0, 0),
        (0, 1),
        (1, 0),
        (1, 1),
        (1, 1),
        (1, 1),
    ];
    let report = MetricsReport::from_confusion(confusion_matrix(2, pairs.into_iter()));
    assert_eq!(report.accuracy, 0.75);
    assert_eq!(report.macro_f1, 0.75);
    assert_eq!(report.macro_sensitivity, 0.75);
    assert_eq!(report.macro_precision, 0.75);
}

#[test]
fn metrics_match_counting_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let pairs: Vec<(usize, usize)> =
        (0..200).map(|_| (rng.random_range(0..4), rng.random_range(0..4))).collect();
    let report = MetricsReport::from_confusion(confusion_matrix(4, pairs.iter().copied()));

    // Independent oracle: direct counting, no confusion matrix.
    let total = pairs.len() as f64;
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    assert_eq!(report.accuracy, correct / total);
    let mut sens = 0.0;
    let mut prec = 0.0;
    let mut f1 = 0.0;
    for c in 0..4usize {
        let tp = pairs.iter().filter(|(t, p)| *t == c && *p == c).count() as f64;
        let fn_ = pairs.iter().filter(|(t, p)| *t == c && *p != c).count() as f64;
        let fp = pairs.iter().filter(|(t, p)| *t != c && *p == c).count() as f64;
        let s = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        sens += s;
        prec += p;
        f1 += if p + s > 0.0 { 2.0 * p * s / (p + s) } else { 0.0 };
    }
    assert_eq!(report.macro_sensitivity, sens / 4.0);
    assert_eq!(report.macro_precision, prec / 4.0);
    assert_eq!(report.macro_f1, f1 / 4.0);
}

#[test]
fn predict_metrics_rejects_empty_split() {
    let n = 8;
    let graph = random_graph(n, 16);
    let basis = fixed_basis(&graph, 2);
    let mut net = build_model(ModelSpec::shrunken(n, 2), 17, false).unwrap();
    let x = Array3::<f64>::zeros((0, n, 1));
    assert!(matches!(
        predict_metrics(&mut net, &x, &[], &GraphSource::FixedBasis(&basis), 16),
        Err(ModelError::EmptySplit)
    ));
}
