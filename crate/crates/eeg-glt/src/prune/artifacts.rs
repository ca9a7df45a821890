//! On-disk layout of a ticket search: one binary mask CSV per round plus a
//! JSON manifest and a JSON-lines run log.

use super::{EpochLog, PruneError, ScheduleEntry, TicketSearch};
use crate::graph::write_adjacency_csv;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TicketManifest {
    pub subject: String,
    pub model: String,
    pub seed: u64,
    pub schedule: Vec<ScheduleEntry>,
    pub rounds: Vec<ManifestRound>,
    pub selected_round: usize,
    pub selected_density: f64,
    pub selected_val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRound {
    pub round: usize,
    pub density: f64,
    pub density_pct: String,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub mask_file: String,
}

pub fn density_pct(density: f64) -> String {
    format!("{:.2}", density * 100.0)
}

/// Writes `round_<s>_density_<pct>.mask.csv` per round, `tickets.json` and
/// `runlog.jsonl` under `dir`.
pub fn write_ticket_artifacts(
    dir: &Path,
    search: &TicketSearch,
    schedule: &[ScheduleEntry],
    subject: &str,
    model: &str,
    seed: u64,
) -> Result<TicketManifest, PruneError> {
    fs::create_dir_all(dir)?;
    let mut rounds = Vec::with_capacity(search.records.len());
    for record in &search.records {
        let mask_file = format!(
            "round_{}_density_{}.mask.csv",
            record.round,
            density_pct(record.density)
        );
        let file = fs::File::create(dir.join(&mask_file))?;
        write_adjacency_csv(&record.support, std::io::BufWriter::new(file))
            .map_err(|e| PruneError::Io(std::io::Error::other(e)))?;
        rounds.push(ManifestRound {
            round: record.round,
            density: record.density,
            density_pct: density_pct(record.density),
            best_val_accuracy: record.best_val_accuracy,
            best_epoch: record.best_epoch,
            mask_file,
        });
    }
    let selected = search.selected_record();
    let manifest = TicketManifest {
        subject: subject.to_string(),
        model: model.to_string(),
        seed,
        schedule: schedule.to_vec(),
        rounds,
        selected_round: selected.round,
        selected_density: selected.density,
        selected_val_accuracy: selected.best_val_accuracy,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("tickets.json"), json + "\n")?;
    write_runlog(&dir.join("runlog.jsonl"), &search.epoch_logs)?;
    Ok(manifest)
}

pub fn write_runlog(path: &Path, logs: &[EpochLog]) -> Result<(), PruneError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for log in logs {
        let line = serde_json::to_string(log)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}
