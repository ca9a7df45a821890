//! Data assembly and run execution shared by the subcommands.

use crate::CliError;
use eeg_glt::data::{
    build_timepoint_dataset, label_trials, load_csv_trials, parse_edf, pcc_input_signal,
    write_edf, Split, TimepointDataset, TrialEpoch,
};
use eeg_glt::graph::{
    chebyshev_basis, laplacian_bundle, pcc_adjacency, ChebBasis, ElectrodeLayout, Graph,
    LambdaMaxMode,
};
use eeg_glt::model::{ModelPreset, ModelSpec};
use eeg_glt::prune::{LabeledSet, TrainData};
use eeg_glt::synth::{planted_task, surrogate_recording, PlantedConfig};
use ndarray::Array2;
use std::path::{Path, PathBuf};

pub const MI_RUNS: [usize; 6] = [4, 6, 8, 10, 12, 14];

/// Where the samples come from.
pub enum DataSource {
    /// PhysioNet-layout directory of EDF files.
    EdfDir(PathBuf),
    /// In-memory surrogate recordings.
    Surrogate,
    /// Planted-graph synthetic task (no recordings involved).
    Planted { nodes: usize },
}

pub struct PreparedData {
    pub dataset: Option<TimepointDataset>,
    pub epochs: Vec<TrialEpoch>,
    pub train: TrainData,
    pub test: LabeledSet,
    pub n_nodes: usize,
}

/// Subject ids look like `S1` / `S014`; the numeric part drives surrogate
/// seeds and file names.
pub fn subject_number(subject: &str) -> Result<u64, CliError> {
    subject
        .trim()
        .trim_start_matches(['S', 's'])
        .parse::<u64>()
        .map_err(|_| CliError::args(format!("cannot parse subject id {subject:?}")))
}

fn edf_path(dir: &Path, subject: u64, run: usize) -> PathBuf {
    dir.join(format!("S{subject:03}")).join(format!("S{subject:03}R{run:02}.edf"))
}

pub fn load_epochs(
    source: &DataSource,
    subject: &str,
    notch_hz: f64,
    notch_q: f64,
) -> Result<Vec<TrialEpoch>, CliError> {
    let number = subject_number(subject)?;
    let mut epochs = Vec::new();
    match source {
        DataSource::EdfDir(dir) => {
            // A trials.csv sidecar switches the directory to the CSV
            // fallback layout (one file per trial).
            if dir.join("trials.csv").is_file() {
                return load_csv_trials(dir, notch_hz, notch_q)
                    .map_err(|e| CliError::data(format!("{}: {e}", dir.display())));
            }
            for run in MI_RUNS {
                let path = edf_path(dir, number, run);
                let bytes = std::fs::read(&path).map_err(|e| {
                    CliError::data(format!("cannot read {}: {e}", path.display()))
                })?;
                let rec = parse_edf(&bytes)
                    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
                let mut trials = label_trials(&rec, run, notch_hz, notch_q)
                    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
                epochs.append(&mut trials);
            }
        }
        DataSource::Surrogate => {
            for run in MI_RUNS {
                // Write/parse the surrogate bytes so the whole ingest path
                // is exercised.
                let rec = surrogate_recording(number, run, 8);
                let bytes = write_edf(&rec).map_err(|e| CliError::data(e.to_string()))?;
                let rec = parse_edf(&bytes).map_err(|e| CliError::data(e.to_string()))?;
                let mut trials = label_trials(&rec, run, notch_hz, notch_q)
                    .map_err(|e| CliError::data(e.to_string()))?;
                epochs.append(&mut trials);
            }
        }
        DataSource::Planted { .. } => {
            return Err(CliError::args("planted data has no recordings".into()))
        }
    }
    Ok(epochs)
}

/// Assembles train/val/test tensors for a subject from any source.
pub fn prepare_data(
    source: &DataSource,
    subject: &str,
    ratios: (f64, f64, f64),
    seed: u64,
    notch_hz: f64,
    notch_q: f64,
    desk_scale: bool,
) -> Result<PreparedData, CliError> {
    match source {
        DataSource::Planted { nodes } => {
            let cfg = PlantedConfig {
                n_nodes: *nodes,
                seed: seed ^ subject_number(subject)?,
                train_per_class: if desk_scale { 256 } else { 512 },
                val_per_class: 128,
                test_per_class: 128,
                ..Default::default()
            };
            let task = planted_task(&cfg);
            Ok(PreparedData {
                dataset: None,
                epochs: Vec::new(),
                n_nodes: *nodes,
                train: task.data,
                test: task.test,
            })
        }
        _ => {
            let epochs = load_epochs(source, subject, notch_hz, notch_q)?;
            let dataset = build_timepoint_dataset(subject, &epochs, ratios, seed)
                .map_err(|e| CliError::data(e.to_string()))?;
            let (train_x, train_y) = dataset.split_set(Split::Train);
            let (val_x, val_y) = dataset.split_set(Split::Val);
            let (test_x, test_y) = dataset.split_set(Split::Test);
            Ok(PreparedData {
                n_nodes: dataset.n_channels,
                train: TrainData {
                    train: LabeledSet { x: train_x, y: train_y },
                    val: LabeledSet { x: val_x, y: val_y },
                },
                test: LabeledSet { x: test_x, y: test_y },
                dataset: Some(dataset),
                epochs,
            })
        }
    }
}

/// The adjacency behind a fixed-graph run.
pub fn fixed_adjacency(
    method: &str,
    prepared: &PreparedData,
    layout: &ElectrodeLayout,
) -> Result<Graph, CliError> {
    match method {
        "geodesic" => {
            if prepared.n_nodes != layout.len() {
                return Err(CliError::args(format!(
                    "geodesic adjacency needs {} electrodes, data has {} channels",
                    layout.len(),
                    prepared.n_nodes
                )));
            }
            eeg_glt::graph::geodesic_adjacency(layout, true)
                .map_err(|e| CliError::data(e.to_string()))
        }
        "pcc" => {
            let signal: Array2<f64> = match &prepared.dataset {
                Some(dataset) => pcc_input_signal(&prepared.epochs, dataset)
                    .map_err(|e| CliError::data(e.to_string()))?,
                // Planted data has no raw recordings: the training-split
                // sample matrix plays the signal role.
                None => {
                    let x = &prepared.train.train.x;
                    let (m, n, _) = x.dim();
                    Array2::from_shape_fn((n, m), |(ch, s)| x[[s, ch, 0]])
                }
            };
            pcc_adjacency(&signal).map_err(|e| CliError::data(e.to_string()))
        }
        other => Err(CliError::args(format!(
            "unknown adjacency method {other:?} (expected geodesic, pcc or eeg-glt)"
        ))),
    }
}

pub fn basis_for(graph: &Graph, order: usize) -> Result<ChebBasis, CliError> {
    let bundle = laplacian_bundle(graph, LambdaMaxMode::Fixed2, false)
        .map_err(|e| CliError::numeric(e.to_string()))?;
    if !bundle.isolated_nodes.is_empty() {
        eprintln!("warning: isolated nodes {:?} contribute nothing", bundle.isolated_nodes);
    }
    chebyshev_basis(&bundle, order).map_err(|e| CliError::numeric(e.to_string()))
}

/// A model is a letter A-F, `shrunken`, or the path of a JSON spec file.
pub fn resolve_model(model: &str, n_nodes: usize, desk_scale: bool) -> Result<ModelSpec, CliError> {
    if model.eq_ignore_ascii_case("shrunken") {
        return Ok(ModelSpec::shrunken(n_nodes, 2));
    }
    if model.ends_with(".json") {
        let text = std::fs::read_to_string(model)
            .map_err(|e| CliError::data(format!("model spec {model}: {e}")))?;
        return ModelSpec::from_json(&text, n_nodes).map_err(|e| CliError::args(e.to_string()));
    }
    let preset = ModelPreset::parse(model).ok_or_else(|| {
        CliError::args(format!("unknown model {model:?} (A-F, shrunken, or a .json spec)"))
    })?;
    if desk_scale && n_nodes <= 16 {
        return Ok(ModelSpec::shrunken(n_nodes, 2));
    }
    Ok(ModelSpec::preset(preset, n_nodes))
}

pub fn load_layout(path: Option<&Path>) -> Result<ElectrodeLayout, CliError> {
    match path {
        None => Ok(ElectrodeLayout::standard_64()),
        Some(p) => {
            let file = std::fs::File::open(p)
                .map_err(|e| CliError::data(format!("cannot open layout {}: {e}", p.display())))?;
            ElectrodeLayout::from_csv(std::io::BufReader::new(file), 1.0)
                .map_err(|e| CliError::data(format!("layout {}: {e}", p.display())))
        }
    }
}
