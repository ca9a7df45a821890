//! Recording ingestion: EDF parsing, the preprocessing notch, trial
//! windowing and per-time-point dataset assembly.

mod dataset;
mod edf;
mod filter;

pub use dataset::{
    build_timepoint_dataset, label_trials, load_csv_trials, load_dataset, pcc_input_signal,
    save_dataset,
    NormalizationStats, Split, TaskLabel, TimepointDataset, TrialEpoch, TrialMeta, EEG_CHANNELS,
    SAMPLE_RATE_HZ, WINDOW_COLUMNS,
};
pub use edf::{
    add_annotation_signal, parse_edf, write_edf, EdfAnnotation, EdfRecording, EdfSignal,
    ANNOTATION_LABEL,
};
pub use filter::{filtfilt, notch_filter, Biquad};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("truncated file: need {needed} bytes, got {got}")]
    TruncatedFile { needed: usize, got: usize },
    #[error("bad version field {0:?} (expected \"0\")")]
    BadMagic(String),
    #[error("inconsistent header: {0}")]
    InconsistentHeader(String),
    #[error("run {0} is not an imagined-movement run")]
    UnknownRun(usize),
    #[error("run {0} carries no task annotations")]
    MissingAnnotation(usize),
    #[error("notch frequency {f0} Hz invalid for sample rate {fs} Hz")]
    InvalidFrequency { f0: f64, fs: f64 },
    #[error("no trials supplied")]
    EmptyInput,
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("empty split")]
    EmptySplit,
    #[error("channel {0} has zero variance in the training split")]
    ZeroVarianceChannel(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding: {0}")]
    Encode(#[from] serde_json::Error),
}
