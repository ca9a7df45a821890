//! Trial windowing and per-time-point dataset assembly.
//!
//! Imagined-movement runs map annotation codes to the four classes
//! (runs 4/8/12: T1 = left fist, T2 = right fist; runs 6/10/14: T1 = both
//! fists, T2 = both feet; T0 rest is discarded). Each trial keeps the
//! window from 1 s to 3 s after its onset, and every time column becomes
//! one sample. Trials — not time points — are split train/val/test so no
//! trial leaks across splits, and normalization statistics come from the
//! training split alone.

use super::edf::EdfRecording;
use super::filter::notch_filter;
use super::DataError;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const EEG_CHANNELS: usize = 64;
pub const SAMPLE_RATE_HZ: f64 = 160.0;
/// Columns of one trial window: 2 s at 160 Hz.
pub const WINDOW_COLUMNS: usize = 320;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskLabel {
    LeftFist,
    RightFist,
    BothFists,
    BothFeet,
}

impl TaskLabel {
    pub fn class_index(&self) -> usize {
        match self {
            TaskLabel::LeftFist => 0,
            TaskLabel::RightFist => 1,
            TaskLabel::BothFists => 2,
            TaskLabel::BothFeet => 3,
        }
    }

    pub fn from_class_index(idx: usize) -> Option<Self> {
        match idx {
            0 => Some(TaskLabel::LeftFist),
            1 => Some(TaskLabel::RightFist),
            2 => Some(TaskLabel::BothFists),
            3 => Some(TaskLabel::BothFeet),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TaskLabel::LeftFist => "left_fist",
            TaskLabel::RightFist => "right_fist",
            TaskLabel::BothFists => "both_fists",
            TaskLabel::BothFeet => "both_feet",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag.trim() {
            "left_fist" => Some(TaskLabel::LeftFist),
            "right_fist" => Some(TaskLabel::RightFist),
            "both_fists" => Some(TaskLabel::BothFists),
            "both_feet" => Some(TaskLabel::BothFeet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One windowed trial: channels x time.
#[derive(Debug, Clone)]
pub struct TrialEpoch {
    pub run: usize,
    pub trial_in_run: usize,
    pub label: TaskLabel,
    pub samples: Array2<f64>,
}

fn is_mi_run(run: usize) -> bool {
    matches!(run, 4 | 6 | 8 | 10 | 12 | 14)
}

fn label_for(run: usize, code: &str) -> Option<TaskLabel> {
    match (run, code) {
        (4 | 8 | 12, "T1") => Some(TaskLabel::LeftFist),
        (4 | 8 | 12, "T2") => Some(TaskLabel::RightFist),
        (6 | 10 | 14, "T1") => Some(TaskLabel::BothFists),
        (6 | 10 | 14, "T2") => Some(TaskLabel::BothFeet),
        _ => None,
    }
}

/// Extracts labeled, notch-filtered, windowed trials from one recording.
///
/// `run_number` must be an imagined-movement run. The 50 Hz notch runs over
/// each whole channel before windowing; trials whose window would pass the
/// end of the recording are skipped.
pub fn label_trials(
    rec: &EdfRecording,
    run_number: usize,
    notch_f0: f64,
    notch_q: f64,
) -> Result<Vec<TrialEpoch>, DataError> {
    if !is_mi_run(run_number) {
        return Err(DataError::UnknownRun(run_number));
    }
    let channels = rec.data_signals();
    if channels.is_empty() {
        return Err(DataError::InconsistentHeader("no data signals".into()));
    }
    if rec.annotations.iter().all(|a| !a.text.starts_with('T')) {
        return Err(DataError::MissingAnnotation(run_number));
    }
    let fs = rec.sample_rate(channels[0]);
    for &c in &channels {
        if (rec.sample_rate(c) - fs).abs() > 1e-9 {
            return Err(DataError::InconsistentHeader(
                "data signals disagree on the sampling rate".into(),
            ));
        }
    }
    let filtered: Vec<Vec<f64>> = channels
        .iter()
        .map(|&c| notch_filter(&rec.physical(c), fs, notch_f0, notch_q))
        .collect::<Result<_, _>>()?;
    let n_samples = filtered[0].len();
    let window = (2.0 * fs).round() as usize;
    let offset = fs.round() as usize;

    let mut trials = Vec::new();
    let mut trial_in_run = 0usize;
    for event in &rec.annotations {
        let Some(label) = label_for(run_number, event.text.trim()) else {
            continue;
        };
        let onset = (event.onset_s * fs).round() as usize;
        let start = onset + offset;
        let end = start + window;
        if end > n_samples {
            continue;
        }
        let mut samples = Array2::<f64>::zeros((channels.len(), window));
        for (row, chan) in filtered.iter().enumerate() {
            for (col, value) in chan[start..end].iter().enumerate() {
                samples[[row, col]] = *value;
            }
        }
        trials.push(TrialEpoch { run: run_number, trial_in_run, label, samples });
        trial_in_run += 1;
    }
    Ok(trials)
}

/// CSV fallback input: a directory holding one file per trial (rows are
/// time points, columns are channels, no header) plus a `trials.csv`
/// sidecar with `file,run,trial_in_run,label` rows. The notch runs over
/// each trial's channels.
pub fn load_csv_trials(
    dir: &std::path::Path,
    notch_f0: f64,
    notch_q: f64,
) -> Result<Vec<TrialEpoch>, DataError> {
    let sidecar = dir.join("trials.csv");
    let reader = std::io::BufReader::new(std::fs::File::open(&sidecar)?);
    let mut epochs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(DataError::InconsistentHeader(format!(
                "trials.csv line {}: expected file,run,trial_in_run,label",
                lineno + 1
            )));
        }
        let parse_num = |s: &str| {
            s.parse::<usize>().map_err(|e| {
                DataError::InconsistentHeader(format!("trials.csv line {}: {e}", lineno + 1))
            })
        };
        let run = parse_num(fields[1])?;
        let trial_in_run = parse_num(fields[2])?;
        let label = TaskLabel::parse(fields[3]).ok_or_else(|| {
            DataError::InconsistentHeader(format!(
                "trials.csv line {}: unknown label {:?}",
                lineno + 1,
                fields[3]
            ))
        })?;

        let trial_path = dir.join(fields[0]);
        let trial_reader = std::io::BufReader::new(std::fs::File::open(&trial_path)?);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for t_line in trial_reader.lines() {
            let t_line = t_line?;
            if t_line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> =
                t_line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|e| {
                DataError::InconsistentHeader(format!("{}: {e}", trial_path.display()))
            })?);
        }
        if rows.is_empty() {
            return Err(DataError::InconsistentHeader(format!(
                "{}: empty trial",
                trial_path.display()
            )));
        }
        let n_channels = rows[0].len();
        if rows.iter().any(|r| r.len() != n_channels) {
            return Err(DataError::InconsistentHeader(format!(
                "{}: ragged rows",
                trial_path.display()
            )));
        }
        // Rows are time; transpose into channels x time and notch.
        let mut samples = Array2::<f64>::zeros((n_channels, rows.len()));
        for ch in 0..n_channels {
            let stream: Vec<f64> = rows.iter().map(|r| r[ch]).collect();
            let filtered = notch_filter(&stream, SAMPLE_RATE_HZ, notch_f0, notch_q)?;
            for (t, v) in filtered.into_iter().enumerate() {
                samples[[ch, t]] = v;
            }
        }
        epochs.push(TrialEpoch { run, trial_in_run, label, samples });
    }
    if epochs.is_empty() {
        return Err(DataError::EmptyInput);
    }
    Ok(epochs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialMeta {
    pub run: usize,
    pub trial_in_run: usize,
    pub label: TaskLabel,
    pub split: Split,
}

/// Per-channel standardization statistics fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-time-point samples with labels, split tags and trial provenance.
#[derive(Debug, Clone)]
pub struct TimepointDataset {
    pub subject: String,
    pub n_channels: usize,
    /// `M x N x 1` normalized feature tensors.
    pub x: Array3<f64>,
    pub y: Vec<usize>,
    pub split: Vec<Split>,
    /// Index into `trials` for every sample.
    pub trial_of_sample: Vec<usize>,
    pub trials: Vec<TrialMeta>,
    pub stats: NormalizationStats,
}

impl TimepointDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Copies one split out as `(x, y)` tensors.
    pub fn split_set(&self, split: Split) -> (Array3<f64>, Vec<usize>) {
        let idx: Vec<usize> =
            (0..self.len()).filter(|&i| self.split[i] == split).collect();
        let n = self.n_channels;
        let x = Array3::from_shape_fn((idx.len(), n, 1), |(b, i, c)| self.x[[idx[b], i, c]]);
        let y = idx.iter().map(|&i| self.y[i]).collect();
        (x, y)
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for s in &self.split {
            match s {
                Split::Train => counts.0 += 1,
                Split::Val => counts.1 += 1,
                Split::Test => counts.2 += 1,
            }
        }
        counts
    }
}

/// Assigns trials to splits, stratified by class: per-class trial lists
/// are shuffled, interleaved round-robin across classes, and the resulting
/// sequence is cut into contiguous blocks sized by largest-remainder
/// rounding of the split ratios. The interleaving keeps per-split class
/// counts within one trial of each other.
fn assign_splits(
    trials_by_class: &[Vec<usize>],
    ratios: (f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, Split)> {
    let mut queues: Vec<Vec<usize>> = trials_by_class.to_vec();
    for q in &mut queues {
        q.shuffle(rng);
        q.reverse();
    }
    let total: usize = queues.iter().map(Vec::len).sum();
    let mut interleaved = Vec::with_capacity(total);
    while interleaved.len() < total {
        for q in &mut queues {
            if let Some(t) = q.pop() {
                interleaved.push(t);
            }
        }
    }

    let ratio = [ratios.0, ratios.1, ratios.2];
    let mut counts = [0usize; 3];
    let mut floors_sum = 0usize;
    let mut remainders = [0.0_f64; 3];
    for s in 0..3 {
        let ideal = ratio[s] * total as f64;
        counts[s] = ideal.floor() as usize;
        remainders[s] = ideal - ideal.floor();
        floors_sum += counts[s];
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| remainders[b].partial_cmp(&remainders[a]).unwrap());
    for s in order.into_iter().cycle().take(total - floors_sum) {
        counts[s] += 1;
    }

    let splits = [Split::Train, Split::Val, Split::Test];
    let mut out = Vec::with_capacity(total);
    let mut cursor = 0;
    for s in 0..3 {
        for _ in 0..counts[s] {
            out.push((interleaved[cursor], splits[s]));
            cursor += 1;
        }
    }
    out
}

/// Builds the per-time-point dataset from windowed trials.
///
/// Every time column of every trial becomes one `N x 1` sample carrying the
/// trial's label. Whole trials are assigned to splits, stratified by class
/// and seeded; normalization is fitted on the training split and applied
/// everywhere.
pub fn build_timepoint_dataset(
    subject: &str,
    epochs: &[TrialEpoch],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<TimepointDataset, DataError> {
    if epochs.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let sum = ratios.0 + ratios.1 + ratios.2;
    if !(ratios.0 > 0.0 && ratios.1 >= 0.0 && ratios.2 >= 0.0 && (sum - 1.0).abs() < 1e-9) {
        return Err(DataError::DegenerateSplit(format!(
            "ratios {:?} must be non-negative and sum to 1",
            ratios
        )));
    }
    let n_channels = epochs[0].samples.nrows();
    if epochs.iter().any(|e| e.samples.nrows() != n_channels) {
        return Err(DataError::InconsistentHeader("trials disagree on channel count".into()));
    }

    // Deterministic trial order regardless of caller ordering.
    let mut order: Vec<usize> = (0..epochs.len()).collect();
    order.sort_by_key(|&i| (epochs[i].run, epochs[i].trial_in_run));

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for &i in &order {
        by_class[epochs[i].label.class_index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = assign_splits(&by_class, ratios, &mut rng);
    let mut split_of_epoch = vec![Split::Train; epochs.len()];
    for (epoch_idx, split) in assignment {
        split_of_epoch[epoch_idx] = split;
    }

    let trials: Vec<TrialMeta> = order
        .iter()
        .map(|&i| TrialMeta {
            run: epochs[i].run,
            trial_in_run: epochs[i].trial_in_run,
            label: epochs[i].label,
            split: split_of_epoch[i],
        })
        .collect();
    let (n_train, n_val, n_test) = trials.iter().fold((0, 0, 0), |mut acc, t| {
        match t.split {
            Split::Train => acc.0 += 1,
            Split::Val => acc.1 += 1,
            Split::Test => acc.2 += 1,
        }
        acc
    });
    if n_train == 0 || (ratios.1 > 0.0 && n_val == 0) || (ratios.2 > 0.0 && n_test == 0) {
        return Err(DataError::DegenerateSplit(format!(
            "trial counts per split: train {n_train}, val {n_val}, test {n_test}"
        )));
    }

    let total_samples: usize = order.iter().map(|&i| epochs[i].samples.ncols()).sum();
    let mut x = Array3::<f64>::zeros((total_samples, n_channels, 1));
    let mut y = Vec::with_capacity(total_samples);
    let mut split = Vec::with_capacity(total_samples);
    let mut trial_of_sample = Vec::with_capacity(total_samples);
    let mut row = 0;
    for (trial_idx, &i) in order.iter().enumerate() {
        let epoch = &epochs[i];
        for col in 0..epoch.samples.ncols() {
            for ch in 0..n_channels {
                x[[row, ch, 0]] = epoch.samples[[ch, col]];
            }
            y.push(epoch.label.class_index());
            split.push(split_of_epoch[i]);
            trial_of_sample.push(trial_idx);
            row += 1;
        }
    }

    // Standardize with training-split statistics.
    let train_rows: Vec<usize> =
        (0..total_samples).filter(|&r| split[r] == Split::Train).collect();
    let mut mean = vec![0.0_f64; n_channels];
    for &r in &train_rows {
        for ch in 0..n_channels {
            mean[ch] += x[[r, ch, 0]];
        }
    }
    mean.iter_mut().for_each(|m| *m /= train_rows.len() as f64);
    let mut var = vec![0.0_f64; n_channels];
    for &r in &train_rows {
        for ch in 0..n_channels {
            let d = x[[r, ch, 0]] - mean[ch];
            var[ch] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= train_rows.len() as f64);
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    if let Some(ch) = std.iter().position(|s| *s < 1e-12) {
        return Err(DataError::ZeroVarianceChannel(ch));
    }
    for r in 0..total_samples {
        for ch in 0..n_channels {
            x[[r, ch, 0]] = (x[[r, ch, 0]] - mean[ch]) / std[ch];
        }
    }

    Ok(TimepointDataset {
        subject: subject.to_string(),
        n_channels,
        x,
        y,
        split,
        trial_of_sample,
        trials,
        stats: NormalizationStats { mean, std },
    })
}

/// The channels-by-time matrix feeding the correlation adjacency:
/// training-split trial windows (already notch-filtered, not normalized)
/// concatenated per channel in (run, trial) order.
pub fn pcc_input_signal(
    epochs: &[TrialEpoch],
    dataset: &TimepointDataset,
) -> Result<Array2<f64>, DataError> {
    let mut order: Vec<usize> = (0..epochs.len()).collect();
    order.sort_by_key(|&i| (epochs[i].run, epochs[i].trial_in_run));
    let picked: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|(trial_idx, _)| dataset.trials[*trial_idx].split == Split::Train)
        .map(|(_, &i)| i)
        .collect();
    if picked.is_empty() {
        return Err(DataError::EmptySplit);
    }
    let n = epochs[picked[0]].samples.nrows();
    let t_total: usize = picked.iter().map(|&i| epochs[i].samples.ncols()).sum();
    let mut out = Array2::<f64>::zeros((n, t_total));
    let mut col0 = 0;
    for &i in &picked {
        let e = &epochs[i];
        for ch in 0..n {
            for c in 0..e.samples.ncols() {
                out[[ch, col0 + c]] = e.samples[[ch, c]];
            }
        }
        col0 += e.samples.ncols();
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheMeta {
    version: u32,
    subject: String,
    n_channels: usize,
    n_samples: usize,
    trials: Vec<TrialMeta>,
}

const CACHE_VERSION: u32 = 1;

/// Writes the dataset as a directory bundle: `meta.json` (version, subject,
/// trial table), `stats.csv` (per-channel mean and std, full precision),
/// `x.csv` (one row per sample) and `labels.csv` (`class,split,trial`).
pub fn save_dataset(dataset: &TimepointDataset, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let meta = CacheMeta {
        version: CACHE_VERSION,
        subject: dataset.subject.clone(),
        n_channels: dataset.n_channels,
        n_samples: dataset.len(),
        trials: dataset.trials.clone(),
    };
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).map_err(DataError::Encode)? + "\n",
    )?;
    // Stats live in CSV: the shortest-round-trip float formatting restores
    // them bit-exactly.
    let mut sw = std::io::BufWriter::new(std::fs::File::create(dir.join("stats.csv"))?);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
    writeln!(sw, "{}", fmt(&dataset.stats.mean))?;
    writeln!(sw, "{}", fmt(&dataset.stats.std))?;
    drop(sw);
    let mut xw = std::io::BufWriter::new(std::fs::File::create(dir.join("x.csv"))?);
    for r in 0..dataset.len() {
        let row: Vec<String> =
            (0..dataset.n_channels).map(|c| format!("{}", dataset.x[[r, c, 0]])).collect();
        writeln!(xw, "{}", row.join(","))?;
    }
    let mut lw = std::io::BufWriter::new(std::fs::File::create(dir.join("labels.csv"))?);
    writeln!(lw, "class,split,trial")?;
    for r in 0..dataset.len() {
        writeln!(
            lw,
            "{},{},{}",
            dataset.y[r],
            dataset.split[r].tag(),
            dataset.trial_of_sample[r]
        )?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<TimepointDataset, DataError> {
    let meta: CacheMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)
            .map_err(DataError::Encode)?;
    if meta.version != CACHE_VERSION {
        return Err(DataError::InconsistentHeader(format!(
            "dataset cache version {} (expected {CACHE_VERSION})",
            meta.version
        )));
    }
    let stats_text = std::fs::read_to_string(dir.join("stats.csv"))?;
    let mut stats_lines = stats_text.lines();
    let parse_row = |line: Option<&str>, what: &str| -> Result<Vec<f64>, DataError> {
        line.ok_or_else(|| DataError::InconsistentHeader(format!("stats.csv missing {what}")))?
            .split(',')
            .map(|f| {
                f.trim().parse().map_err(|e| {
                    DataError::InconsistentHeader(format!("stats.csv {what}: {e}"))
                })
            })
            .collect()
    };
    let stats = NormalizationStats {
        mean: parse_row(stats_lines.next(), "mean")?,
        std: parse_row(stats_lines.next(), "std")?,
    };
    let mut x = Array3::<f64>::zeros((meta.n_samples, meta.n_channels, 1));
    let xr = std::io::BufReader::new(std::fs::File::open(dir.join("x.csv"))?);
    let mut rows = 0usize;
    for (r, line) in xr.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        for (c, field) in line.split(',').enumerate() {
            x[[r, c, 0]] = field.trim().parse().map_err(|e| {
                DataError::InconsistentHeader(format!("x.csv row {r}: {e}"))
            })?;
        }
        rows += 1;
    }
    if rows != meta.n_samples {
        return Err(DataError::InconsistentHeader(format!(
            "x.csv holds {rows} rows, meta says {}",
            meta.n_samples
        )));
    }
    let lr = std::io::BufReader::new(std::fs::File::open(dir.join("labels.csv"))?);
    let mut y = Vec::with_capacity(meta.n_samples);
    let mut split = Vec::with_capacity(meta.n_samples);
    let mut trial_of_sample = Vec::with_capacity(meta.n_samples);
    for (lineno, line) in lr.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(DataError::InconsistentHeader(format!(
                "labels.csv line {}",
                lineno + 1
            )));
        }
        y.push(fields[0].trim().parse().map_err(|e| {
            DataError::InconsistentHeader(format!("labels.csv line {}: {e}", lineno + 1))
        })?);
        split.push(Split::from_tag(fields[1].trim()).ok_or_else(|| {
            DataError::InconsistentHeader(format!("bad split tag {:?}", fields[1]))
        })?);
        trial_of_sample.push(fields[2].trim().parse().map_err(|e| {
            DataError::InconsistentHeader(format!("labels.csv line {}: {e}", lineno + 1))
        })?);
    }
    Ok(TimepointDataset {
        subject: meta.subject,
        n_channels: meta.n_channels,
        x,
        y,
        split,
        trial_of_sample,
        trials: meta.trials,
        stats,
    })
}
