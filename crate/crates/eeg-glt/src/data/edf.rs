//! European Data Format (EDF/EDF+) reader and writer.
//!
//! The layout is a 256-byte fixed ASCII header, one 256-byte header block
//! per signal stored field-major, then data records of 16-bit little-endian
//! two's-complement samples. EDF+ annotations ride in signals labeled
//! "EDF Annotations" as time-stamped annotation lists: each entry is
//! `+onset[<0x15>duration]<0x14>text<0x14>` and entries end with a NUL.

use super::DataError;

pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct EdfSignal {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl EdfSignal {
    pub fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }

    /// Physical units per digital step.
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn digital_to_physical(&self, digital: i16) -> f64 {
        (digital as i32 - self.digital_min) as f64 * self.gain() + self.physical_min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfAnnotation {
    pub onset_s: f64,
    pub duration_s: Option<f64>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfRecording {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub reserved: String,
    pub n_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<EdfSignal>,
    /// Raw digital samples per signal, concatenated across records.
    pub digital: Vec<Vec<i16>>,
    /// Events decoded from annotation signals, in file order.
    pub annotations: Vec<EdfAnnotation>,
}

impl EdfRecording {
    pub fn sample_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.record_duration_s
    }

    /// Indices of ordinary (non-annotation) signals.
    pub fn data_signals(&self) -> Vec<usize> {
        (0..self.signals.len()).filter(|&i| !self.signals[i].is_annotation()).collect()
    }

    /// Physical-unit samples of one signal.
    pub fn physical(&self, signal: usize) -> Vec<f64> {
        let s = &self.signals[signal];
        self.digital[signal].iter().map(|&d| s.digital_to_physical(d)).collect()
    }
}

fn ascii_field(bytes: &[u8]) -> Result<String, DataError> {
    if !bytes.iter().all(|b| (0x20..=0x7e).contains(b)) {
        return Err(DataError::InconsistentHeader("non-ASCII header field".into()));
    }
    Ok(String::from_utf8_lossy(bytes).trim_end().to_string())
}

fn parse_num<T: std::str::FromStr>(bytes: &[u8], what: &str) -> Result<T, DataError> {
    let text = ascii_field(bytes)?;
    text.trim().parse::<T>().map_err(|_| {
        DataError::InconsistentHeader(format!("cannot parse {what} from {text:?}"))
    })
}

/// Parses an EDF/EDF+ byte stream.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfRecording, DataError> {
    if bytes.len() < 256 {
        return Err(DataError::TruncatedFile { needed: 256, got: bytes.len() });
    }
    let version = ascii_field(&bytes[0..8])?;
    if version.trim() != "0" {
        return Err(DataError::BadMagic(version));
    }
    let patient_id = ascii_field(&bytes[8..88])?;
    let recording_id = ascii_field(&bytes[88..168])?;
    let start_date = ascii_field(&bytes[168..176])?;
    let start_time = ascii_field(&bytes[176..184])?;
    let header_bytes: usize = parse_num(&bytes[184..192], "header size")?;
    let reserved = ascii_field(&bytes[192..236])?;
    let n_records: i64 = parse_num(&bytes[236..244], "record count")?;
    let record_duration_s: f64 = parse_num(&bytes[244..252], "record duration")?;
    let n_signals: usize = parse_num(&bytes[252..256], "signal count")?;
    if n_signals == 0 {
        return Err(DataError::InconsistentHeader("zero signals".into()));
    }
    let expected_header = 256 * (1 + n_signals);
    if header_bytes != expected_header {
        return Err(DataError::InconsistentHeader(format!(
            "header claims {header_bytes} bytes, {n_signals} signals imply {expected_header}"
        )));
    }
    if bytes.len() < expected_header {
        return Err(DataError::TruncatedFile { needed: expected_header, got: bytes.len() });
    }

    // Signal headers are stored field-major.
    let field = |width: usize, base: &mut usize| {
        let start = *base;
        *base += width * n_signals;
        move |i: usize| &bytes[start + i * width..start + (i + 1) * width]
    };
    let mut offset = 256;
    let labels = field(16, &mut offset);
    let transducers = field(80, &mut offset);
    let dimensions = field(8, &mut offset);
    let phys_mins = field(8, &mut offset);
    let phys_maxs = field(8, &mut offset);
    let dig_mins = field(8, &mut offset);
    let dig_maxs = field(8, &mut offset);
    let prefilters = field(80, &mut offset);
    let samples_counts = field(8, &mut offset);
    let _reserved = field(32, &mut offset);
    debug_assert_eq!(offset, expected_header);

    let mut signals = Vec::with_capacity(n_signals);
    for i in 0..n_signals {
        let digital_min: i32 = parse_num(dig_mins(i), "digital min")?;
        let digital_max: i32 = parse_num(dig_maxs(i), "digital max")?;
        if digital_max <= digital_min {
            return Err(DataError::InconsistentHeader(format!(
                "signal {i}: digital range [{digital_min}, {digital_max}]"
            )));
        }
        signals.push(EdfSignal {
            label: ascii_field(labels(i))?,
            transducer: ascii_field(transducers(i))?,
            physical_dimension: ascii_field(dimensions(i))?,
            physical_min: parse_num(phys_mins(i), "physical min")?,
            physical_max: parse_num(phys_maxs(i), "physical max")?,
            digital_min,
            digital_max,
            prefiltering: ascii_field(prefilters(i))?,
            samples_per_record: parse_num(samples_counts(i), "samples per record")?,
        });
    }

    let record_samples: usize = signals.iter().map(|s| s.samples_per_record).sum();
    let record_bytes = record_samples * 2;
    let payload = &bytes[expected_header..];
    let n_records = if n_records >= 0 {
        let needed = expected_header + n_records as usize * record_bytes;
        if bytes.len() < needed {
            return Err(DataError::TruncatedFile { needed, got: bytes.len() });
        }
        if bytes.len() != needed {
            return Err(DataError::InconsistentHeader(format!(
                "file is {} bytes, header implies {needed}",
                bytes.len()
            )));
        }
        n_records as usize
    } else {
        // Unknown record count: infer from the payload length.
        if record_bytes == 0 || payload.len() % record_bytes != 0 {
            return Err(DataError::InconsistentHeader(
                "payload is not a whole number of records".into(),
            ));
        }
        payload.len() / record_bytes
    };

    let mut digital: Vec<Vec<i16>> =
        signals.iter().map(|s| Vec::with_capacity(s.samples_per_record * n_records)).collect();
    let mut pos = 0;
    for _ in 0..n_records {
        for (i, signal) in signals.iter().enumerate() {
            for _ in 0..signal.samples_per_record {
                let sample = i16::from_le_bytes([payload[pos], payload[pos + 1]]);
                digital[i].push(sample);
                pos += 2;
            }
        }
    }

    let mut annotations = Vec::new();
    for (i, signal) in signals.iter().enumerate() {
        if signal.is_annotation() {
            let per_record = signal.samples_per_record;
            for r in 0..n_records {
                let chunk = &digital[i][r * per_record..(r + 1) * per_record];
                let bytes: Vec<u8> =
                    chunk.iter().flat_map(|s| s.to_le_bytes()).collect();
                parse_tal_block(&bytes, &mut annotations)?;
            }
        }
    }

    Ok(EdfRecording {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        reserved,
        n_records,
        record_duration_s,
        signals,
        digital,
        annotations,
    })
}

/// Decodes one record's annotation bytes, appending events with nonempty
/// text. Timekeeping entries (empty text) are skipped.
fn parse_tal_block(bytes: &[u8], out: &mut Vec<EdfAnnotation>) -> Result<(), DataError> {
    for tal in bytes.split(|&b| b == 0x00) {
        if tal.is_empty() {
            continue;
        }
        let mut fields = tal.split(|&b| b == 0x14);
        let head = fields.next().unwrap_or(&[]);
        let head_text = String::from_utf8_lossy(head);
        let (onset_text, duration_text) = match head_text.split_once('\u{15}') {
            Some((o, d)) => (o.to_string(), Some(d.to_string())),
            None => (head_text.to_string(), None),
        };
        if onset_text.is_empty() {
            continue;
        }
        let onset_s: f64 = onset_text.parse().map_err(|_| {
            DataError::InconsistentHeader(format!("bad annotation onset {onset_text:?}"))
        })?;
        let duration_s = match duration_text {
            Some(d) => Some(d.parse().map_err(|_| {
                DataError::InconsistentHeader(format!("bad annotation duration {d:?}"))
            })?),
            None => None,
        };
        for text in fields {
            if text.is_empty() {
                continue;
            }
            out.push(EdfAnnotation {
                onset_s,
                duration_s,
                text: String::from_utf8_lossy(text).to_string(),
            });
        }
    }
    Ok(())
}

fn write_field(dst: &mut Vec<u8>, text: &str, width: usize) {
    let mut bytes = text.as_bytes().to_vec();
    bytes.truncate(width);
    bytes.resize(width, b' ');
    dst.extend_from_slice(&bytes);
}

fn format_f64_field(value: f64, width: usize) -> String {
    let mut s = format!("{value}");
    if s.len() > width {
        // Trim precision until the field fits.
        for prec in (0..width).rev() {
            s = format!("{value:.prec$}");
            if s.len() <= width {
                break;
            }
        }
    }
    s
}

/// Serializes a recording back to EDF bytes. Digital samples are written
/// verbatim; parse(write(rec)) reproduces header fields and samples.
pub fn write_edf(rec: &EdfRecording) -> Result<Vec<u8>, DataError> {
    let n_signals = rec.signals.len();
    for (i, signal) in rec.signals.iter().enumerate() {
        if rec.digital[i].len() != signal.samples_per_record * rec.n_records {
            return Err(DataError::InconsistentHeader(format!(
                "signal {i} holds {} samples, expected {}",
                rec.digital[i].len(),
                signal.samples_per_record * rec.n_records
            )));
        }
    }
    let mut out = Vec::new();
    write_field(&mut out, &rec.version, 8);
    write_field(&mut out, &rec.patient_id, 80);
    write_field(&mut out, &rec.recording_id, 80);
    write_field(&mut out, &rec.start_date, 8);
    write_field(&mut out, &rec.start_time, 8);
    write_field(&mut out, &format!("{}", 256 * (1 + n_signals)), 8);
    write_field(&mut out, &rec.reserved, 44);
    write_field(&mut out, &format!("{}", rec.n_records), 8);
    write_field(&mut out, &format_f64_field(rec.record_duration_s, 8), 8);
    write_field(&mut out, &format!("{n_signals}"), 4);

    for s in &rec.signals {
        write_field(&mut out, &s.label, 16);
    }
    for s in &rec.signals {
        write_field(&mut out, &s.transducer, 80);
    }
    for s in &rec.signals {
        write_field(&mut out, &s.physical_dimension, 8);
    }
    for s in &rec.signals {
        write_field(&mut out, &format_f64_field(s.physical_min, 8), 8);
    }
    for s in &rec.signals {
        write_field(&mut out, &format_f64_field(s.physical_max, 8), 8);
    }
    for s in &rec.signals {
        write_field(&mut out, &format!("{}", s.digital_min), 8);
    }
    for s in &rec.signals {
        write_field(&mut out, &format!("{}", s.digital_max), 8);
    }
    for s in &rec.signals {
        write_field(&mut out, &s.prefiltering, 80);
    }
    for s in &rec.signals {
        write_field(&mut out, &format!("{}", s.samples_per_record), 8);
    }
    for _ in &rec.signals {
        write_field(&mut out, "", 32);
    }

    for r in 0..rec.n_records {
        for (i, signal) in rec.signals.iter().enumerate() {
            let chunk =
                &rec.digital[i][r * signal.samples_per_record..(r + 1) * signal.samples_per_record];
            for sample in chunk {
                out.extend_from_slice(&sample.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Encodes events into an EDF+ annotation signal and appends it to the
/// recording. Every record starts with its timekeeping entry; each event
/// lands in the record covering its onset.
pub fn add_annotation_signal(
    rec: &mut EdfRecording,
    events: &[EdfAnnotation],
    samples_per_record: usize,
) -> Result<(), DataError> {
    let budget = samples_per_record * 2;
    let mut per_record: Vec<Vec<u8>> = vec![Vec::new(); rec.n_records];
    for (r, block) in per_record.iter_mut().enumerate() {
        let onset = r as f64 * rec.record_duration_s;
        block.extend_from_slice(format!("+{onset}\u{14}\u{14}\0").as_bytes());
    }
    for event in events {
        let r = ((event.onset_s / rec.record_duration_s).floor() as usize)
            .min(rec.n_records.saturating_sub(1));
        let mut tal = format!("+{}", event.onset_s);
        if let Some(d) = event.duration_s {
            tal.push('\u{15}');
            tal.push_str(&format!("{d}"));
        }
        tal.push('\u{14}');
        tal.push_str(&event.text);
        tal.push('\u{14}');
        tal.push('\0');
        per_record[r].extend_from_slice(tal.as_bytes());
    }
    for (r, block) in per_record.iter_mut().enumerate() {
        if block.len() > budget {
            return Err(DataError::InconsistentHeader(format!(
                "annotations for record {r} need {} bytes, budget is {budget}",
                block.len()
            )));
        }
        block.resize(budget, 0);
    }
    let samples: Vec<i16> = per_record
        .concat()
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    rec.signals.push(EdfSignal {
        label: ANNOTATION_LABEL.to_string(),
        transducer: String::new(),
        physical_dimension: String::new(),
        physical_min: -1.0,
        physical_max: 1.0,
        digital_min: -32768,
        digital_max: 32767,
        prefiltering: String::new(),
        samples_per_record,
    });
    rec.digital.push(samples);
    rec.annotations.extend(events.iter().cloned());
    Ok(())
}
