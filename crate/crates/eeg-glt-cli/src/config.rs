//! Run configuration: JSON file merged under command-line overrides.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Every knob a run can carry. All fields are optional in the file; flags
/// override file values; defaults fill the rest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub subject: Option<String>,
    pub model: Option<String>,
    pub method: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub desk_scale: Option<bool>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub prune_rate: Option<f64>,
    pub density_floor: Option<f64>,
    pub notch_hz: Option<f64>,
    pub notch_q: Option<f64>,
    pub nodes: Option<usize>,
    pub surrogate: Option<bool>,
    pub planted: Option<bool>,
    pub train_ratio: Option<f64>,
    pub val_ratio: Option<f64>,
    pub test_ratio: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }
}

/// Fills each `None` option from the config file.
macro_rules! merge_opt {
    ($flag:expr, $file:expr) => {
        if $flag.is_none() {
            $flag = $file.clone();
        }
    };
}
pub(crate) use merge_opt;
