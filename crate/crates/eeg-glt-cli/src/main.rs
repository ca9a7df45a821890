//! Command-line driver: adjacency construction, baseline training, mask
//! pruning searches and MACs reports, all emitting plot-ready CSV/JSON.
//!
//! Exit codes: 0 success, 2 argument/config error, 3 data error, 4 numeric
//! failure.

mod config;
mod exec;

use clap::{Args, Parser, Subcommand};
use config::{merge_opt, FileConfig};
use eeg_glt::autodiff::save_named_tensors;
use eeg_glt::graph::write_adjacency_csv;
use eeg_glt::macs::{
    count_model_macs, deviation_fraction, reference_macs, savings_fraction, MacsConvention,
};
use eeg_glt::model::{build_model, predict_metrics, GraphSource, MetricsReport, ModelPreset};
use eeg_glt::prune::{
    density_schedule, find_ticket, train_fixed, write_runlog, write_ticket_artifacts, PruneConfig,
};
use exec::{fixed_adjacency, load_layout, prepare_data, resolve_model, DataSource, PreparedData};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn args(message: String) -> Self {
        CliError { code: 2, message }
    }
    fn data(message: String) -> Self {
        CliError { code: 3, message }
    }
    fn numeric(message: String) -> Self {
        CliError { code: 4, message }
    }
}

#[derive(Parser)]
#[command(name = "eeg-glt", version, about = "Graph lottery tickets for EEG motor-imagery classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Subject id, e.g. S1.
    #[arg(long)]
    subject: Option<String>,
    /// Model letter A-F (or `shrunken` for the small desk variant).
    #[arg(long)]
    model: Option<String>,
    /// Adjacency method: geodesic, pcc or eeg-glt.
    #[arg(long)]
    method: Option<String>,
    /// Directory of EDF recordings (or set EEG_GLT_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output root; runs land in out/<subject>/<model>/<method>/.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shrink epochs/batch/model for a fast loop.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    prune_rate: Option<f64>,
    #[arg(long)]
    density_floor: Option<f64>,
    /// How lambda_max is obtained during mask training: fixed2 or
    /// power-iteration.
    #[arg(long)]
    lambda_max: Option<String>,
    /// Notch frequency in Hz.
    #[arg(long)]
    notch_hz: Option<f64>,
    #[arg(long)]
    notch_q: Option<f64>,
    /// Use in-memory surrogate recordings instead of EDF files.
    #[arg(long)]
    surrogate: bool,
    /// Use the planted-graph synthetic task (no recordings).
    #[arg(long)]
    planted: bool,
    /// Node count for planted data.
    #[arg(long)]
    nodes: Option<usize>,
    /// Electrode layout CSV (name,x,y,z); built-in 64-channel layout when
    /// omitted.
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build an adjacency matrix and write it as CSV.
    Adjacency {
        #[command(flatten)]
        run: RunArgs,
        /// Output file (default adjacency.csv in the output tree).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model against a fixed adjacency and report metrics.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the iterative mask-pruning search and emit tickets.
    Glt {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Multiply-accumulate counts per model and density.
    Macs {
        /// Model letter A-F, or `all`.
        #[arg(long, default_value = "all")]
        model: String,
        /// Densities to tabulate (repeatable).
        #[arg(long = "density")]
        densities: Vec<f64>,
        /// Counting convention: recurrence (K-1 products) or per-term (K).
        #[arg(long, default_value = "per-term")]
        convention: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Node count of the graph.
        #[arg(long, default_value_t = 64)]
        nodes: usize,
    },
    /// Percentage saving between two MACs totals.
    Savings {
        /// Baseline total MACs (e.g. 291.62e6), or compute via --baseline-model.
        #[arg(long)]
        baseline: Option<f64>,
        #[arg(long)]
        ticket: Option<f64>,
        #[arg(long)]
        baseline_model: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        baseline_density: f64,
        #[arg(long)]
        ticket_model: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        ticket_density: f64,
        #[arg(long, default_value = "per-term")]
        convention: String,
    },
    /// Write the built-in electrode layout as CSV.
    Layout {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and save a dataset cache for a subject.
    Dataset {
        #[command(flatten)]
        run: RunArgs,
        /// Cache directory to write.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Adjacency { run, out } => cmd_adjacency(run, out),
        Command::Train { run } => cmd_train(run),
        Command::Glt { run } => cmd_glt(run),
        Command::Macs { model, densities, convention, out, nodes } => {
            cmd_macs(&model, &densities, &convention, out.as_deref(), nodes)
        }
        Command::Savings {
            baseline,
            ticket,
            baseline_model,
            baseline_density,
            ticket_model,
            ticket_density,
            convention,
        } => cmd_savings(
            baseline,
            ticket,
            baseline_model.as_deref(),
            baseline_density,
            ticket_model.as_deref(),
            ticket_density,
            &convention,
        ),
        Command::Layout { out } => {
            let layout = eeg_glt::graph::ElectrodeLayout::standard_64();
            let file = std::fs::File::create(&out)
                .map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
            layout
                .to_csv(std::io::BufWriter::new(file))
                .map_err(|e| CliError::data(e.to_string()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Dataset { run, out } => cmd_dataset(run, &out),
    }
}

/// Everything a run needs, with file config and defaults folded in.
struct Resolved {
    subject: String,
    model: String,
    method: String,
    out_dir: PathBuf,
    seed: u64,
    desk_scale: bool,
    source: DataSource,
    prune: PruneConfig,
    notch_hz: f64,
    notch_q: f64,
    ratios: (f64, f64, f64),
    layout: Option<PathBuf>,
}

fn resolve(mut run: RunArgs) -> Result<Resolved, CliError> {
    let file = match &run.config {
        Some(path) => FileConfig::load(path).map_err(CliError::args)?,
        None => FileConfig::default(),
    };
    merge_opt!(run.subject, file.subject);
    merge_opt!(run.model, file.model);
    merge_opt!(run.method, file.method);
    merge_opt!(run.data_dir, file.data_dir);
    merge_opt!(run.out_dir, file.out_dir);
    merge_opt!(run.seed, file.seed);
    merge_opt!(run.epochs, file.epochs);
    merge_opt!(run.batch_size, file.batch_size);
    merge_opt!(run.learning_rate, file.learning_rate);
    merge_opt!(run.prune_rate, file.prune_rate);
    merge_opt!(run.density_floor, file.density_floor);
    merge_opt!(run.notch_hz, file.notch_hz);
    merge_opt!(run.notch_q, file.notch_q);
    merge_opt!(run.nodes, file.nodes);
    let desk_scale = run.desk_scale || file.desk_scale.unwrap_or(false);
    let surrogate = run.surrogate || file.surrogate.unwrap_or(false);
    let planted = run.planted || file.planted.unwrap_or(false);

    let subject = run.subject.unwrap_or_else(|| "S1".into());
    let seed = run.seed.unwrap_or(0);
    let data_dir = run
        .data_dir
        .or_else(|| std::env::var_os("EEG_GLT_DATA_DIR").map(PathBuf::from));
    let source = if planted {
        DataSource::Planted { nodes: run.nodes.unwrap_or(8) }
    } else if surrogate {
        DataSource::Surrogate
    } else {
        let dir = data_dir.ok_or_else(|| {
            CliError::args(
                "no data source: pass --data-dir (or EEG_GLT_DATA_DIR), --surrogate or --planted"
                    .into(),
            )
        })?;
        if !dir.is_dir() {
            return Err(CliError::data(format!("data directory {} not found", dir.display())));
        }
        DataSource::EdfDir(dir)
    };

    let mut prune = if desk_scale { PruneConfig::desk_scale(seed) } else { PruneConfig::default() };
    prune.seed = seed;
    if let Some(e) = run.epochs {
        prune.epochs_per_round = e;
    }
    if let Some(b) = run.batch_size {
        prune.batch_size = b;
    }
    if let Some(lr) = run.learning_rate {
        prune.learning_rate = lr;
    }
    if let Some(p) = run.prune_rate {
        prune.prune_rate = p;
    }
    if let Some(f) = run.density_floor {
        prune.density_floor = f;
    }
    if let Some(mode) = &run.lambda_max {
        prune.lambda_max = match mode.trim().to_ascii_lowercase().as_str() {
            "fixed2" | "fixed_2" => eeg_glt::graph::LambdaMaxMode::Fixed2,
            "power-iteration" | "power_iteration" => {
                eeg_glt::graph::LambdaMaxMode::PowerIteration
            }
            other => return Err(CliError::args(format!("unknown lambda-max mode {other:?}"))),
        };
    }

    let ratios = (
        file.train_ratio.unwrap_or(0.7),
        file.val_ratio.unwrap_or(0.15),
        file.test_ratio.unwrap_or(0.15),
    );
    Ok(Resolved {
        subject,
        model: run.model.unwrap_or_else(|| "D".into()),
        method: run.method.unwrap_or_else(|| "pcc".into()),
        out_dir: run.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        seed,
        desk_scale,
        source,
        prune,
        notch_hz: run.notch_hz.unwrap_or(50.0),
        notch_q: run.notch_q.unwrap_or(30.0),
        ratios,
        layout: run.layout,
    })
}

impl Resolved {
    fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.subject).join(&self.model).join(&self.method)
    }

    fn prepare(&self) -> Result<PreparedData, CliError> {
        prepare_data(
            &self.source,
            &self.subject,
            self.ratios,
            self.seed,
            self.notch_hz,
            self.notch_q,
            self.desk_scale,
        )
    }
}

fn cmd_adjacency(run: RunArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = resolve(run)?;
    let layout = load_layout(cfg.layout.as_deref())?;
    let graph = match cfg.method.as_str() {
        "geodesic" => eeg_glt::graph::geodesic_adjacency(&layout, true)
            .map_err(|e| CliError::data(e.to_string()))?,
        "pcc" => {
            let prepared = cfg.prepare()?;
            fixed_adjacency("pcc", &prepared, &layout)?
        }
        other => {
            return Err(CliError::args(format!(
                "adjacency method {other:?} not constructible here (use geodesic or pcc; eeg-glt masks come from the glt command)"
            )))
        }
    };
    let path = match out {
        Some(p) => p,
        None => {
            let dir = cfg.run_dir();
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
            dir.join("adjacency.csv")
        }
    };
    let file = std::fs::File::create(&path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    write_adjacency_csv(&graph.adjacency, std::io::BufWriter::new(file))
        .map_err(|e| CliError::data(e.to_string()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_metrics_csv(path: &Path, rows: &[(&str, MetricsReport)]) -> Result<(), CliError> {
    let mut out = String::from("split,accuracy,macro_sensitivity,macro_precision,macro_f1\n");
    for (split, report) in rows {
        out.push_str(&format!(
            "{split},{:.6},{:.6},{:.6},{:.6}\n",
            report.accuracy, report.macro_sensitivity, report.macro_precision, report.macro_f1
        ));
    }
    std::fs::write(path, out).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn cmd_train(run: RunArgs) -> Result<(), CliError> {
    let cfg = resolve(run)?;
    if cfg.method == "eeg-glt" {
        return Err(CliError::args("the eeg-glt method trains through the glt command".into()));
    }
    let prepared = cfg.prepare()?;
    let layout = load_layout(cfg.layout.as_deref())?;
    let graph = fixed_adjacency(&cfg.method, &prepared, &layout)?;
    let spec = resolve_model(&cfg.model, prepared.n_nodes, cfg.desk_scale)?;
    let order = spec.max_order();
    let basis = exec::basis_for(&graph, order)?;
    let mut net = build_model(spec, cfg.seed, false).map_err(|e| CliError::args(e.to_string()))?;

    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let result = train_fixed(&mut net, &basis, &prepared.train, &cfg.prune)
        .map_err(|e| CliError::numeric(e.to_string()))?;
    write_runlog(&dir.join("runlog.jsonl"), &result.epoch_logs)
        .map_err(|e| CliError::data(e.to_string()))?;

    // Final and best checkpoints.
    net.params
        .save_checkpoint(&dir.join("final.ckpt"))
        .map_err(|e| CliError::data(e.to_string()))?;
    save_named_tensors(&dir.join("best.ckpt"), &result.best_params)
        .map_err(|e| CliError::data(e.to_string()))?;

    let source = GraphSource::FixedBasis(&basis);
    let train_report = predict_metrics(
        &mut net,
        &prepared.train.train.x,
        &prepared.train.train.y,
        &source,
        cfg.prune.batch_size,
    )
    .map_err(|e| CliError::numeric(e.to_string()))?;
    let val_report = predict_metrics(
        &mut net,
        &prepared.train.val.x,
        &prepared.train.val.y,
        &source,
        cfg.prune.batch_size,
    )
    .map_err(|e| CliError::numeric(e.to_string()))?;
    let test_report =
        predict_metrics(&mut net, &prepared.test.x, &prepared.test.y, &source, cfg.prune.batch_size)
            .map_err(|e| CliError::numeric(e.to_string()))?;
    write_metrics_csv(
        &dir.join("metrics.csv"),
        &[("train", train_report), ("val", val_report), ("test", test_report)],
    )?;

    let file = std::fs::File::create(dir.join("adjacency.csv"))
        .map_err(|e| CliError::data(e.to_string()))?;
    write_adjacency_csv(&graph.adjacency, std::io::BufWriter::new(file))
        .map_err(|e| CliError::data(e.to_string()))?;
    println!(
        "trained {} model {} ({}): best val accuracy {:.4} at epoch {}; outputs in {}",
        cfg.subject,
        cfg.model,
        cfg.method,
        result.best_val_accuracy,
        result.best_epoch,
        dir.display()
    );
    Ok(())
}

fn cmd_glt(run: RunArgs) -> Result<(), CliError> {
    let mut run = run;
    run.method = Some("eeg-glt".into());
    let cfg = resolve(run)?;
    let prepared = cfg.prepare()?;
    let spec = resolve_model(&cfg.model, prepared.n_nodes, cfg.desk_scale)?;
    let mut net = build_model(spec, cfg.seed, true).map_err(|e| CliError::args(e.to_string()))?;

    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let search = find_ticket(&mut net, &prepared.train, &cfg.prune).map_err(|e| match e {
        eeg_glt::prune::PruneError::NonFiniteLoss { .. } => CliError::numeric(e.to_string()),
        eeg_glt::prune::PruneError::InvalidConfig(_) => CliError::args(e.to_string()),
        other => CliError::data(other.to_string()),
    })?;
    let n = prepared.n_nodes;
    let schedule = density_schedule(n * n - n, cfg.prune.prune_rate, cfg.prune.density_floor);
    let manifest = write_ticket_artifacts(
        &dir.join("tickets"),
        &search,
        &schedule,
        &cfg.subject,
        &cfg.model,
        cfg.seed,
    )
    .map_err(|e| CliError::data(e.to_string()))?;
    write_runlog(&dir.join("runlog.jsonl"), &search.epoch_logs)
        .map_err(|e| CliError::data(e.to_string()))?;

    // The selected ticket's support doubles as the run's adjacency export.
    let selected = search.selected_record();
    let file = std::fs::File::create(dir.join("adjacency.csv"))
        .map_err(|e| CliError::data(e.to_string()))?;
    write_adjacency_csv(&selected.support, std::io::BufWriter::new(file))
        .map_err(|e| CliError::data(e.to_string()))?;

    // Accuracy-vs-density curve, plot-ready.
    let mut curve = String::from("round,density,best_val_accuracy,best_epoch\n");
    for r in &search.records {
        curve.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            r.round, r.density, r.best_val_accuracy, r.best_epoch
        ));
    }
    std::fs::write(dir.join("accuracy_vs_density.csv"), curve)
        .map_err(|e| CliError::data(e.to_string()))?;

    println!(
        "ticket search {} model {}: selected round {} (density {:.4}) val accuracy {:.4}; outputs in {}",
        cfg.subject,
        cfg.model,
        manifest.selected_round,
        manifest.selected_density,
        manifest.selected_val_accuracy,
        dir.display()
    );
    Ok(())
}

fn parse_convention(name: &str) -> Result<MacsConvention, CliError> {
    MacsConvention::parse(name)
        .ok_or_else(|| CliError::args(format!("unknown convention {name:?}")))
}

fn cmd_macs(
    model: &str,
    densities: &[f64],
    convention: &str,
    out: Option<&Path>,
    nodes: usize,
) -> Result<(), CliError> {
    let convention = parse_convention(convention)?;
    let presets: Vec<ModelPreset> = if model.eq_ignore_ascii_case("all") {
        ModelPreset::all().to_vec()
    } else {
        vec![ModelPreset::parse(model)
            .ok_or_else(|| CliError::args(format!("unknown model {model:?}")))?]
    };
    let densities: Vec<f64> = if densities.is_empty() { vec![1.0] } else { densities.to_vec() };
    let mut csv = String::from(
        "model,density,convention,graph_macs,proj_macs,fc_macs,total,paper_reference_total,deviation_pct\n",
    );
    for preset in &presets {
        let spec = eeg_glt::model::ModelSpec::preset(*preset, nodes);
        for &density in &densities {
            let breakdown = count_model_macs(&spec, density, convention)
                .map_err(|e| CliError::args(e.to_string()))?;
            let (reference, deviation) = match reference_macs(*preset, density) {
                Some(reference) if nodes == 64 => (
                    format!("{reference}"),
                    format!("{:.2}", deviation_fraction(breakdown.total, reference) * 100.0),
                ),
                _ => (String::new(), String::new()),
            };
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                preset.letter(),
                density,
                convention.name(),
                breakdown.graph_total(),
                breakdown.projection_total(),
                breakdown.fc_total(),
                breakdown.total,
                reference,
                deviation
            ));
        }
    }
    match out {
        Some(path) => std::fs::write(path, &csv)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?,
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| CliError::data(e.to_string()))?,
    }
    Ok(())
}

fn cmd_savings(
    baseline: Option<f64>,
    ticket: Option<f64>,
    baseline_model: Option<&str>,
    baseline_density: f64,
    ticket_model: Option<&str>,
    ticket_density: f64,
    convention: &str,
) -> Result<(), CliError> {
    let convention = parse_convention(convention)?;
    let total_for = |model: Option<&str>, density: f64| -> Result<Option<f64>, CliError> {
        match model {
            None => Ok(None),
            Some(m) => {
                let preset = ModelPreset::parse(m)
                    .ok_or_else(|| CliError::args(format!("unknown model {m:?}")))?;
                let spec = eeg_glt::model::ModelSpec::preset(preset, 64);
                let b = count_model_macs(&spec, density, convention)
                    .map_err(|e| CliError::args(e.to_string()))?;
                Ok(Some(b.total as f64))
            }
        }
    };
    let baseline = match (baseline, total_for(baseline_model, baseline_density)?) {
        (Some(v), _) => v,
        (None, Some(v)) => v,
        (None, None) => return Err(CliError::args("need --baseline or --baseline-model".into())),
    };
    let ticket = match (ticket, total_for(ticket_model, ticket_density)?) {
        (Some(v), _) => v,
        (None, Some(v)) => v,
        (None, None) => return Err(CliError::args("need --ticket or --ticket-model".into())),
    };
    if baseline <= 0.0 {
        return Err(CliError::numeric(format!("baseline {baseline} must be positive")));
    }
    println!("baseline_macs,ticket_macs,saving_pct");
    println!("{baseline},{ticket},{:.2}", savings_fraction(baseline, ticket) * 100.0);
    Ok(())
}

fn cmd_dataset(run: RunArgs, out: &Path) -> Result<(), CliError> {
    let cfg = resolve(run)?;
    let prepared = cfg.prepare()?;
    let dataset = prepared
        .dataset
        .ok_or_else(|| CliError::args("planted data has no dataset cache".into()))?;
    eeg_glt::data::save_dataset(&dataset, out).map_err(|e| CliError::data(e.to_string()))?;
    println!(
        "wrote dataset cache for {} ({} samples, {} channels) to {}",
        dataset.subject,
        dataset.len(),
        dataset.n_channels,
        out.display()
    );
    Ok(())
}
