//! Seeded synthetic data.
//!
//! Two generators back the desk-scale loops: planted-graph classification
//! tasks whose labels come from a sparse teacher network (so a sparse mask
//! genuinely helps), and surrogate multichannel recordings with
//! subject-specific channel mixing for exercising the full ingest pipeline
//! without the real corpus.

use crate::data::{add_annotation_signal, EdfAnnotation, EdfRecording, EdfSignal};
use crate::graph::{laplacian_bundle, Graph, LambdaMaxMode};
use crate::prune::{LabeledSet, TrainData};
use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub n_nodes: usize,
    /// Fraction of the off-diagonal entries that carry class information.
    pub edge_fraction: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Rejection margin around the label thresholds, in units of the
    /// feature spread; larger margins make the task easier.
    pub margin: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_nodes: 8,
            edge_fraction: 0.2,
            train_per_class: 128,
            val_per_class: 32,
            test_per_class: 32,
            margin: 0.5,
            seed: 7,
        }
    }
}

/// A planted-graph task: data splits plus the generating support.
#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub data: TrainData,
    pub test: LabeledSet,
    /// The sparse directed support the teacher used.
    pub support: Array2<f64>,
}

struct Teacher {
    scaled_laplacian: Array2<f64>,
    theta0: [f64; 2],
    theta1: [f64; 2],
    thresholds: [f64; 2],
    /// Reciprocal feature spreads, so margins are in spread units and the
    /// task difficulty does not depend on the node count.
    inv_spread: [f64; 2],
    /// Regression of feature 2 on feature 1; the label uses the residual,
    /// since both relu-means ride the overall signal energy and would
    /// otherwise starve two quadrants.
    beta: f64,
}

impl Teacher {
    /// Two pooled conv features of the sparse graph.
    fn features(&self, x: &Array1<f64>) -> [f64; 2] {
        let n = x.len();
        let mixed = self.scaled_laplacian.dot(x);
        let mut pooled = [0.0_f64; 2];
        for (feat, p) in pooled.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..n {
                let v = self.theta0[feat] * x[i] + self.theta1[feat] * mixed[i];
                acc += v.max(0.0);
            }
            *p = acc / n as f64;
        }
        pooled
    }

    /// Quadrant code of the two (decorrelated) features against their
    /// thresholds; `None` when either sits within `margin` spreads of its
    /// threshold.
    fn label(&self, x: &Array1<f64>, margin: f64) -> Option<usize> {
        let pooled = self.features(x);
        let g0 = pooled[0];
        let g1 = pooled[1] - self.beta * pooled[0];
        let d0 = (g0 - self.thresholds[0]) * self.inv_spread[0];
        let d1 = (g1 - self.thresholds[1]) * self.inv_spread[1];
        if d0.abs() < margin || d1.abs() < margin {
            return None;
        }
        Some(((d0 > 0.0) as usize) * 2 + ((d1 > 0.0) as usize))
    }
}

/// Generates a task where class structure flows through a sparse set of
/// planted edges. Labels are the quadrant code of two pooled
/// graph-convolution features of a random sparse-graph teacher, thresholds
/// sitting at the feature medians; sampling rejects low-margin points and
/// balances classes.
pub fn planted_task(cfg: &PlantedConfig) -> PlantedTask {
    let n = cfg.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut off_diag: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let n_edges = ((cfg.edge_fraction * off_diag.len() as f64).ceil() as usize).max(1);

    // Retry teacher draws until every quadrant shows up reasonably often
    // at the demanded margin.
    let mut teacher_seed = cfg.seed;
    let mut attempts = 0;
    let (support, teacher) = loop {
        attempts += 1;
        assert!(attempts < 10_000, "no feasible teacher for {cfg:?}");
        teacher_seed = teacher_seed.wrapping_add(1);
        let mut trng = ChaCha8Rng::seed_from_u64(teacher_seed);
        off_diag.shuffle(&mut trng);
        let mut support = Array2::<f64>::zeros((n, n));
        for &(i, j) in off_diag.iter().take(n_edges) {
            support[[i, j]] = 1.0;
        }
        let graph = Graph::from_adjacency(support.clone()).expect("square support");
        let bundle = laplacian_bundle(&graph, LambdaMaxMode::Fixed2, false)
            .expect("lenient bundle cannot fail");
        let sign = |r: &mut ChaCha8Rng| if r.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        let mut teacher = Teacher {
            scaled_laplacian: bundle.laplacian_scaled.clone(),
            // Neighbor aggregation dominates so the graph matters.
            theta0: [
                0.3 * (trng.random::<f64>() * 2.0 - 1.0),
                0.3 * (trng.random::<f64>() * 2.0 - 1.0),
            ],
            theta1: [
                sign(&mut trng) * (1.5 + trng.random::<f64>()),
                sign(&mut trng) * (1.5 + trng.random::<f64>()),
            ],
            thresholds: [0.0, 0.0],
            inv_spread: [1.0, 1.0],
            beta: 0.0,
        };
        // Probe batch: regression coefficient, then medians and spreads of
        // the decorrelated features so margins are scale-free.
        let probes: Vec<[f64; 2]> = (0..512)
            .map(|_| {
                let x = Array1::from_shape_fn(n, |_| gauss(&mut trng));
                teacher.features(&x)
            })
            .collect();
        let mean0 = probes.iter().map(|p| p[0]).sum::<f64>() / probes.len() as f64;
        let mean1 = probes.iter().map(|p| p[1]).sum::<f64>() / probes.len() as f64;
        let var0 =
            probes.iter().map(|p| (p[0] - mean0) * (p[0] - mean0)).sum::<f64>() / probes.len() as f64;
        let cov01 = probes.iter().map(|p| (p[0] - mean0) * (p[1] - mean1)).sum::<f64>()
            / probes.len() as f64;
        teacher.beta = if var0 > 1e-12 { cov01 / var0 } else { 0.0 };
        let mut probe0: Vec<f64> = probes.iter().map(|p| p[0]).collect();
        let mut probe1: Vec<f64> = probes.iter().map(|p| p[1] - teacher.beta * p[0]).collect();
        probe0.sort_by(|a, b| a.partial_cmp(b).unwrap());
        probe1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        teacher.thresholds = [probe0[256], probe1[256]];
        let spread = |v: &[f64]| (v[384] - v[128]).max(1e-9);
        teacher.inv_spread = [1.0 / spread(&probe0), 1.0 / spread(&probe1)];

        let mut hits = [0usize; 4];
        for _ in 0..2000 {
            let x = Array1::from_shape_fn(n, |_| gauss(&mut trng));
            if let Some(label) = teacher.label(&x, cfg.margin) {
                hits[label] += 1;
            }
        }
        if hits.iter().all(|&h| h >= 100) {
            break (support, teacher);
        }
    };

    let mut draw_set = |per_class: usize| -> LabeledSet {
        let mut buckets: Vec<Vec<Array1<f64>>> = vec![Vec::new(); 4];
        while buckets.iter().any(|b| b.len() < per_class) {
            let x = Array1::from_shape_fn(n, |_| gauss(&mut rng));
            if let Some(label) = teacher.label(&x, cfg.margin) {
                if buckets[label].len() < per_class {
                    buckets[label].push(x);
                }
            }
        }
        let m = per_class * 4;
        let mut x = Array3::<f64>::zeros((m, n, 1));
        let mut y = Vec::with_capacity(m);
        // Interleave classes so any batch slicing stays balanced.
        for s in 0..per_class {
            for (label, bucket) in buckets.iter().enumerate() {
                let row = y.len();
                for i in 0..n {
                    x[[row, i, 0]] = bucket[s][i];
                }
                y.push(label);
            }
        }
        LabeledSet { x, y }
    };

    let train = draw_set(cfg.train_per_class);
    let val = draw_set(cfg.val_per_class);
    let test = draw_set(cfg.test_per_class);
    PlantedTask { data: TrainData { train, val }, test, support }
}

/// A two-class task whose label is the sign of the coupling along one
/// planted edge: `x[target] = sign * x[source] + noise`, all other nodes
/// independent. Per-node marginals match across classes, so separating
/// them requires mixing the two nodes.
pub fn single_edge_task(
    n_nodes: usize,
    source: usize,
    target: usize,
    noise: f64,
    samples_per_class: usize,
    seed: u64,
) -> TrainData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut build = |per_class: usize| -> LabeledSet {
        let m = per_class * 2;
        let mut x = Array3::<f64>::zeros((m, n_nodes, 1));
        let mut y = Vec::with_capacity(m);
        for s in 0..m {
            let label = s % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            for i in 0..n_nodes {
                x[[s, i, 0]] = gauss(&mut rng);
            }
            x[[s, target, 0]] = sign * x[[s, source, 0]] + noise * gauss(&mut rng);
            y.push(label);
        }
        LabeledSet { x, y }
    };
    TrainData { train: build(samples_per_class), val: build((samples_per_class / 4).max(4)) }
}

/// Surrogate 64-channel recording in the shape of the real corpus: 160 Hz,
/// one-second records, alternating T1/T2 trials, channels produced by a
/// subject-specific mixing of shared band-limited sources. Different
/// subjects get different mixings (and so different channel correlations);
/// all runs of one subject share theirs.
pub fn surrogate_recording(subject: u64, run: usize, n_trials: usize) -> EdfRecording {
    let fs = 160usize;
    let n_channels = 64usize;
    let n_sources = 6usize;
    let trial_spacing_s = 6.0;
    let n_records = (1.0 + n_trials as f64 * trial_spacing_s).ceil() as usize;
    let n_samples = n_records * fs;

    let mut mix_rng =
        ChaCha8Rng::seed_from_u64(subject.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mixing =
        Array2::from_shape_fn((n_channels, n_sources), |_| mix_rng.random::<f64>() * 2.0 - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(subject.wrapping_mul(31).wrapping_add(run as u64));

    // Shared sources: slow oscillations with random phases plus noise.
    let freqs = [2.0, 5.0, 8.0, 11.0, 17.0, 23.0];
    let phases: Vec<f64> =
        (0..n_sources).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    let trial_onsets: Vec<f64> = (0..n_trials).map(|t| 0.5 + t as f64 * trial_spacing_s).collect();
    let events: Vec<EdfAnnotation> = trial_onsets
        .iter()
        .enumerate()
        .map(|(t, &onset)| EdfAnnotation {
            onset_s: onset,
            duration_s: Some(4.1),
            text: if t % 2 == 0 { "T1".into() } else { "T2".into() },
        })
        .collect();
    let mut sources = Array2::<f64>::zeros((n_sources, n_samples));
    for s in 0..n_sources {
        for k in 0..n_samples {
            let t = k as f64 / fs as f64;
            // Trial-dependent amplitude modulation distinguishes classes.
            let mut class_gain = 1.0;
            for (ti, &onset) in trial_onsets.iter().enumerate() {
                if t >= onset && t < onset + 4.0 {
                    let sign = if ti % 2 == 0 { 1.0 } else { -1.0 };
                    class_gain = 1.0 + 0.5 * sign * if s % 2 == 0 { 1.0 } else { -1.0 };
                }
            }
            sources[[s, k]] = class_gain
                * (std::f64::consts::TAU * freqs[s] * t + phases[s]).sin()
                + 0.1 * gauss(&mut rng);
        }
    }

    let physical_min = -200.0;
    let physical_max = 200.0;
    let gain = (physical_max - physical_min) / 65535.0;
    let mut digital: Vec<Vec<i16>> = Vec::with_capacity(n_channels);
    for ch in 0..n_channels {
        let mut samples = Vec::with_capacity(n_samples);
        for k in 0..n_samples {
            let mut v = 0.0;
            for s in 0..n_sources {
                v += mixing[[ch, s]] * sources[[s, k]];
            }
            v = 20.0 * v + 2.0 * gauss(&mut rng);
            let dig = ((v - physical_min) / gain - 32768.0).round().clamp(-32768.0, 32767.0);
            samples.push(dig as i16);
        }
        digital.push(samples);
    }

    let channel_names = crate::graph::ElectrodeLayout::standard_64().names;
    let signals: Vec<EdfSignal> = channel_names
        .iter()
        .map(|name| EdfSignal {
            label: format!("{name}."),
            transducer: "surrogate".into(),
            physical_dimension: "uV".into(),
            physical_min,
            physical_max,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record: fs,
        })
        .collect();

    let mut rec = EdfRecording {
        version: "0".into(),
        patient_id: format!("S{subject:03}"),
        recording_id: format!("surrogate run {run}"),
        start_date: "01.01.24".into(),
        start_time: "00.00.00".into(),
        reserved: "EDF+C".into(),
        n_records,
        record_duration_s: 1.0,
        signals,
        digital,
        annotations: Vec::new(),
    };
    add_annotation_signal(&mut rec, &events, 32).expect("annotation budget");
    rec
}
