//! Named parameter storage with rewind snapshots and Adam moments.

use super::AutodiffError;
use ndarray::{ArrayD, IxDyn};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// What a stored tensor is, which decides how rewind and the optimizer
/// treat it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable network weight; rewound to its snapshot.
    Weight,
    /// Non-trainable state (batch-norm running stats); rewound with the
    /// weights so a fresh round starts from a clean slate.
    Buffer,
    /// The trainable adjacency mask; updated by the optimizer but never
    /// rewound.
    Mask,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayD<f64>,
    /// Snapshot taken at registration time.
    pub initial: ArrayD<f64>,
    pub(crate) adam_m: ArrayD<f64>,
    pub(crate) adam_v: ArrayD<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamState {
    pub entries: Vec<ParamEntry>,
    pub step: u64,
}

impl ParamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: ArrayD<f64>) -> usize {
        let zeros = ArrayD::zeros(value.raw_dim());
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            initial: value.clone(),
            value,
            adam_m: zeros.clone(),
            adam_v: zeros,
        });
        self.entries.len() - 1
    }

    pub fn value(&self, idx: usize) -> &ArrayD<f64> {
        &self.entries[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut ArrayD<f64> {
        &mut self.entries[idx].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Restores every weight and buffer to its snapshot bit-exactly and
    /// zeroes all optimizer state. Mask entries keep their values.
    pub fn rewind(&mut self) -> Result<(), AutodiffError> {
        for entry in &mut self.entries {
            if entry.initial.shape() != entry.value.shape() {
                return Err(AutodiffError::MissingSnapshot(entry.name.clone()));
            }
            if entry.kind != ParamKind::Mask {
                entry.value.assign(&entry.initial);
            }
            entry.adam_m.fill(0.0);
            entry.adam_v.fill(0.0);
        }
        self.step = 0;
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Writes `name -> shape -> values` for every entry. The format is a
    /// little-endian binary bundle that round-trips f64 bits exactly.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), AutodiffError> {
        let items: Vec<(String, ArrayD<f64>)> =
            self.entries.iter().map(|e| (e.name.clone(), e.value.clone())).collect();
        save_named_tensors(path, &items)
    }

    /// Loads values into matching entries; every checkpoint tensor must
    /// match an entry by name and shape.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), AutodiffError> {
        let items = load_named_tensors(path)?;
        for (name, value) in items {
            let idx = self
                .index_of(&name)
                .ok_or_else(|| AutodiffError::Format(format!("unknown tensor {name}")))?;
            if self.entries[idx].value.shape() != value.shape() {
                return Err(AutodiffError::Format(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    self.entries[idx].value.shape(),
                    value.shape()
                )));
            }
            self.entries[idx].value = value;
        }
        Ok(())
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"EGLTCKP1";

pub fn save_named_tensors(path: &Path, items: &[(String, ArrayD<f64>)]) -> Result<(), AutodiffError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(items.len() as u32).to_le_bytes())?;
    for (name, value) in items {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        let shape = value.shape();
        w.write_all(&(shape.len() as u8).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in value.iter() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_named_tensors(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>, AutodiffError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Format("bad checkpoint magic".into()));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let count = u32::from_le_bytes(buf4) as usize;
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let mut buf2 = [0u8; 2];
        r.read_exact(&mut buf2)?;
        let name_len = u16::from_le_bytes(buf2) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| AutodiffError::Format(format!("tensor name: {e}")))?;
        let mut buf1 = [0u8; 1];
        r.read_exact(&mut buf1)?;
        let ndim = buf1[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut buf8 = [0u8; 8];
        for _ in 0..ndim {
            r.read_exact(&mut buf8)?;
            shape.push(u64::from_le_bytes(buf8) as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf8)?;
            values.push(f64::from_bits(u64::from_le_bytes(buf8)));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|e| AutodiffError::Format(format!("tensor {name}: {e}")))?;
        items.push((name, arr));
    }
    Ok(items)
}
