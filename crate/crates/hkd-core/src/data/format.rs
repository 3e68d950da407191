//! Bit-exact trial file format and the dataset directory layout.
//!
//! One `.eegt` file holds one trial (all integers and floats
//! little-endian):
//!
//! ```text
//! offset  0  magic        b"EEGT"
//! offset  4  version      u16  = 1
//! offset  6  subject id   u16
//! offset  8  paradigm     u8   (0 = motor imagery, 1 = speech imagery)
//! offset  9  class index  u8
//! offset 10  channels     u16  = 24
//! offset 12  samples      u32  = 1000
//! offset 16  payload      24·1000 × f32, row-major by channel
//! ```
//!
//! A dataset directory contains `subject_<k>/trial_<n>.eegt` plus a
//! `manifest.txt` listing the relative path of every trial, one per line,
//! in dataset order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, LabeledTrial, Paradigm, N_CHANNELS, N_SAMPLES};

pub const MAGIC: [u8; 4] = *b"EEGT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 16;
pub const FILE_LEN: u64 = HEADER_LEN + (N_CHANNELS * N_SAMPLES * 4) as u64;

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn save_trial(trial: &LabeledTrial, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&trial.subject.to_le_bytes())?;
    w.write_all(&[trial.paradigm.index() as u8])?;
    w.write_all(&[trial.class_index as u8])?;
    w.write_all(&(N_CHANNELS as u16).to_le_bytes())?;
    w.write_all(&(N_SAMPLES as u32).to_le_bytes())?;
    for &v in &trial.samples {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_trial(path: &Path) -> Result<LabeledTrial, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::with_capacity(FILE_LEN as usize);
    r.read_to_end(&mut bytes)?;
    decode_trial(&bytes)
}

/// Decodes one trial record, reporting the offset of the first bad byte.
pub fn decode_trial(bytes: &[u8]) -> Result<LabeledTrial, DataError> {
    if bytes.len() < HEADER_LEN as usize {
        return Err(DataError::Truncated { expected: FILE_LEN, actual: bytes.len() as u64 });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(DataError::BadMagic { got: magic });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().expect("length checked"));
    if version != VERSION {
        return Err(DataError::BadVersion { got: version });
    }
    let subject = u16::from_le_bytes(bytes[6..8].try_into().expect("length checked"));
    let paradigm = match bytes[8] {
        0 => Paradigm::Mi,
        1 => Paradigm::Si,
        other => return Err(DataError::BadParadigm { got: other }),
    };
    let class_index = bytes[9] as usize;
    if class_index >= paradigm.classes() {
        return Err(DataError::BadClassIndex { class: class_index, classes: paradigm.classes() });
    }
    let channels = u16::from_le_bytes(bytes[10..12].try_into().expect("length checked"));
    if channels as usize != N_CHANNELS {
        return Err(DataError::BadChannelCount { got: channels });
    }
    let samples = u32::from_le_bytes(bytes[12..16].try_into().expect("length checked"));
    if samples as usize != N_SAMPLES {
        return Err(DataError::BadSampleCount { expected: N_SAMPLES, got: samples as usize });
    }
    if bytes.len() as u64 != FILE_LEN {
        return Err(DataError::Truncated { expected: FILE_LEN, actual: bytes.len() as u64 });
    }
    let mut values = Vec::with_capacity(N_CHANNELS * N_SAMPLES);
    for i in 0..N_CHANNELS * N_SAMPLES {
        let at = HEADER_LEN as usize + i * 4;
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("length checked"));
        if !v.is_finite() {
            return Err(DataError::NonFiniteAtOffset { offset: at as u64 });
        }
        values.push(v);
    }
    LabeledTrial::new(values, paradigm, class_index, subject)
}

/// Writes the dataset as `subject_<k>/trial_<n>.eegt` under `dir` and a
/// manifest enumerating the files in dataset order.
pub fn save_dataset(dir: &Path, trials: &[LabeledTrial]) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut per_subject = std::collections::BTreeMap::<u16, usize>::new();
    for trial in trials {
        let n = per_subject.entry(trial.subject).or_insert(0);
        let rel = format!("subject_{}/trial_{}.eegt", trial.subject, n);
        *n += 1;
        let path = dir.join(&rel);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        save_trial(trial, &path)?;
        manifest.push_str(&rel);
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

/// Loads every trial listed in the directory's manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledTrial>, DataError> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut trials = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.contains("..") || line.starts_with('/') {
            return Err(DataError::BadManifestPath { line: i + 1, path: line.to_string() });
        }
        trials.push(load_trial(&dir.join(line))?);
    }
    Ok(trials)
}
