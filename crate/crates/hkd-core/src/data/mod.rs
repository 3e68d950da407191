//! Trial representation, class-balanced subsampling, and
//! leave-one-subject-out splitting. File I/O lives in [`format`], the
//! synthetic generator in [`synth`].

pub mod format;
pub mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Electrode names of the 24-channel montage shared by both recordings,
/// in storage order.
pub const CHANNEL_NAMES: [&str; 24] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "T8", "CP5", "CP1", "CP2", "CP6", "O2", "AF7", "AF3",
    "AF4", "AF8", "C1", "C2", "C6", "TP7", "PO3", "POz", "PO4", "PO8",
];

pub const N_CHANNELS: usize = 24;
pub const N_SAMPLES: usize = 1000;

/// Imagery paradigm of a trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Paradigm {
    /// Motor imagery: three grasp classes.
    Mi,
    /// Speech imagery: five word classes.
    Si,
}

impl Paradigm {
    pub fn classes(self) -> usize {
        match self {
            Paradigm::Mi => 3,
            Paradigm::Si => 5,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Paradigm::Mi => 0,
            Paradigm::Si => 1,
        }
    }
}

/// Joint 8-class label space: indices 0–2 are the motor-imagery classes
/// (cylindrical, lumbrical, spherical grasp), 3–7 the speech-imagery
/// classes.
pub fn joint_label(paradigm: Paradigm, class_index: usize) -> usize {
    match paradigm {
        Paradigm::Mi => class_index,
        Paradigm::Si => 3 + class_index,
    }
}

/// Inverse of [`joint_label`].
pub fn split_joint_label(joint: usize) -> (Paradigm, usize) {
    if joint < 3 {
        (Paradigm::Mi, joint)
    } else {
        (Paradigm::Si, joint - 3)
    }
}

/// One EEG trial: 24 electrodes × 1000 samples, row-major by channel.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrial {
    pub samples: Vec<f32>,
    pub paradigm: Paradigm,
    pub class_index: usize,
    pub subject: u16,
}

impl LabeledTrial {
    pub fn new(samples: Vec<f32>, paradigm: Paradigm, class_index: usize, subject: u16) -> Result<Self, DataError> {
        if samples.len() != N_CHANNELS * N_SAMPLES {
            return Err(DataError::BadSampleCount { expected: N_CHANNELS * N_SAMPLES, got: samples.len() });
        }
        if class_index >= paradigm.classes() {
            return Err(DataError::BadClassIndex { class: class_index, classes: paradigm.classes() });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteSample { index: i });
        }
        Ok(Self { samples, paradigm, class_index, subject })
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.samples[ch * N_SAMPLES..(ch + 1) * N_SAMPLES]
    }

    pub fn joint_label(&self) -> usize {
        joint_label(self.paradigm, self.class_index)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic at offset 0: expected \"EEGT\", got {got:?}")]
    BadMagic { got: [u8; 4] },
    #[error("unsupported trial format version {got} at offset 4")]
    BadVersion { got: u16 },
    #[error("invalid paradigm byte {got} at offset 8")]
    BadParadigm { got: u8 },
    #[error("class index {class} out of range for {classes} classes (offset 9)")]
    BadClassIndex { class: usize, classes: usize },
    #[error("channel count {got} at offset 10, this format stores 24")]
    BadChannelCount { got: u16 },
    #[error("sample payload of {got} values, expected {expected}")]
    BadSampleCount { expected: usize, got: usize },
    #[error("file truncated: expected {expected} bytes, found {actual} (first missing byte at offset {actual})")]
    Truncated { expected: u64, actual: u64 },
    #[error("non-finite sample value at sample index {index}")]
    NonFiniteSample { index: usize },
    #[error("non-finite sample value at byte offset {offset}")]
    NonFiniteAtOffset { offset: u64 },
    #[error("subject {0} not present in the dataset")]
    UnknownSubject(u16),
    #[error("subsample target {target} exceeds the {available} available trials")]
    TargetTooLarge { target: usize, available: usize },
    #[error("manifest line {line} escapes the dataset directory: {path}")]
    BadManifestPath { line: usize, path: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 64-bit mix used to derive independent sub-seeds from a master seed.
/// This is the splitmix64 finalizer; a fixed constant stream keeps every
/// derived generator decoupled from the others.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th child stream of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Uniform stratified subsample without replacement, `target` trials in
/// total. Strata are the `(paradigm, class)` pairs; the target is spread as
/// evenly as floor division allows, remainders landing on the lowest class
/// keys first, and spill from exhausted strata redistributes to the rest.
pub fn balance_subsample(
    trials: &[LabeledTrial],
    target: usize,
    seed: u64,
) -> Result<Vec<LabeledTrial>, DataError> {
    if target > trials.len() {
        return Err(DataError::TargetTooLarge { target, available: trials.len() });
    }
    let mut strata: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        strata.entry((t.paradigm.index(), t.class_index)).or_default().push(i);
    }
    let keys: Vec<(usize, usize)> = strata.keys().copied().collect();
    let sizes: Vec<usize> = keys.iter().map(|k| strata[k].len()).collect();
    let quotas = fair_quotas(&sizes, target);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(target);
    for (key, quota) in keys.iter().zip(quotas) {
        let mut idx = strata[key].clone();
        idx.shuffle(&mut rng);
        idx.truncate(quota);
        idx.sort_unstable(); // keep original relative order within a stratum
        out.extend(idx.into_iter().map(|i| trials[i].clone()));
    }
    Ok(out)
}

/// Splits `target` across strata of the given sizes: as even as possible,
/// remainder to the lowest indices, capped by each stratum's size with the
/// spill redistributed.
fn fair_quotas(sizes: &[usize], target: usize) -> Vec<usize> {
    let mut quota = vec![0usize; sizes.len()];
    let mut capped = vec![false; sizes.len()];
    let mut remaining = target;
    loop {
        let free: Vec<usize> = (0..sizes.len()).filter(|&i| !capped[i]).collect();
        if free.is_empty() || remaining == 0 {
            break;
        }
        let base = remaining / free.len();
        let extra = remaining % free.len();
        let mut overflow = false;
        for (pos, &i) in free.iter().enumerate() {
            let want = base + usize::from(pos < extra);
            if sizes[i] < want {
                quota[i] = sizes[i];
                capped[i] = true;
                overflow = true;
            }
        }
        if !overflow {
            for (pos, &i) in free.iter().enumerate() {
                quota[i] = base + usize::from(pos < extra);
            }
            break;
        }
        remaining = target - quota.iter().zip(&capped).filter(|(_, &c)| c).map(|(q, _)| *q).sum::<usize>();
    }
    quota
}

/// Index sets of one leave-one-subject-out fold.
#[derive(Clone, Debug)]
pub struct LosoSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Holds out every trial of `held_out`; the remaining trials split 85/15
/// into train/validation, stratified by `(paradigm, class)` and shuffled
/// deterministically by `split_seed`.
pub fn loso_split(
    dataset: &[LabeledTrial],
    held_out: u16,
    split_seed: u64,
) -> Result<LosoSplit, DataError> {
    if !dataset.iter().any(|t| t.subject == held_out) {
        return Err(DataError::UnknownSubject(held_out));
    }
    let mut test = Vec::new();
    let mut strata: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in dataset.iter().enumerate() {
        if t.subject == held_out {
            test.push(i);
        } else {
            strata.entry((t.paradigm.index(), t.class_index)).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for idx in strata.into_values() {
        let mut idx = idx;
        idx.shuffle(&mut rng);
        // integer-rounded 15% validation share
        let n_valid = (idx.len() * 15 + 50) / 100;
        valid.extend(idx.drain(..n_valid));
        train.extend(idx);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok(LosoSplit { train, valid, test })
}

pub fn subject_ids(dataset: &[LabeledTrial]) -> Vec<u16> {
    let mut ids: Vec<u16> = dataset.iter().map(|t| t.subject).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

#[cfg(test)]
mod tests {
    use super::synth::SyntheticConfig;
    use super::*;

    #[test]
    fn joint_label_mapping() {
        assert_eq!(joint_label(Paradigm::Mi, 2), 2);
        assert_eq!(joint_label(Paradigm::Si, 0), 3);
        assert_eq!(joint_label(Paradigm::Si, 4), 7);
        for j in 0..8 {
            let (p, c) = split_joint_label(j);
            assert_eq!(joint_label(p, c), j);
        }
    }

    #[test]
    fn balance_spreads_evenly_with_floor_remainder() {
        // 150 single-paradigm trials, 50 per class → 80 picked as 27/27/26
        let cfg = SyntheticConfig::default();
        let mut trials = Vec::new();
        for class in 0..3 {
            for _ in 0..50 {
                trials.push(
                    LabeledTrial::new(vec![0.0; N_CHANNELS * N_SAMPLES], Paradigm::Mi, class, 0)
                        .unwrap(),
                );
            }
        }
        let picked = balance_subsample(&trials, 80, cfg.master_seed).unwrap();
        assert_eq!(picked.len(), 80);
        let mut counts = [0usize; 3];
        for t in &picked {
            counts[t.class_index] += 1;
        }
        assert_eq!(counts, [27, 27, 26]);
    }

    #[test]
    fn balance_full_target_is_permutation() {
        let mut trials = Vec::new();
        for (i, &class) in [0, 0, 1, 1, 1, 2].iter().enumerate() {
            let mut s = vec![0.0; N_CHANNELS * N_SAMPLES];
            s[0] = i as f32;
            trials.push(LabeledTrial::new(s, Paradigm::Mi, class, 0).unwrap());
        }
        let picked = balance_subsample(&trials, trials.len(), 9).unwrap();
        assert_eq!(picked.len(), trials.len());
        let mut orig: Vec<f32> = trials.iter().map(|t| t.samples[0]).collect();
        let mut got: Vec<f32> = picked.iter().map(|t| t.samples[0]).collect();
        orig.sort_by(f32::total_cmp);
        got.sort_by(f32::total_cmp);
        assert_eq!(orig, got);
    }

    #[test]
    fn balance_is_deterministic_and_bounded() {
        let cfg = SyntheticConfig { n_subjects: 2, trials_per_paradigm: 12, ..SyntheticConfig::default() };
        let data = synth::generate_synthetic_dataset(&cfg);
        let a = balance_subsample(&data, 17, 5).unwrap();
        let b = balance_subsample(&data, 17, 5).unwrap();
        assert_eq!(a, b);

        // class counts differ by at most 1 when strata are deep enough
        let mi_only: Vec<LabeledTrial> = data.iter().filter(|t| t.paradigm == Paradigm::Mi).cloned().collect();
        let picked = balance_subsample(&mi_only, 7, 1).unwrap();
        let mut counts = [0usize; 3];
        for t in &picked {
            counts[t.class_index] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");

        assert!(matches!(
            balance_subsample(&mi_only, mi_only.len() + 1, 0),
            Err(DataError::TargetTooLarge { .. })
        ));
    }

    #[test]
    fn loso_is_a_subject_disjoint_partition() {
        let cfg = SyntheticConfig { n_subjects: 4, trials_per_paradigm: 10, ..SyntheticConfig::default() };
        let data = synth::generate_synthetic_dataset(&cfg);
        for subject in subject_ids(&data) {
            let split = loso_split(&data, subject, 77).unwrap();
            let mut all: Vec<usize> =
                split.train.iter().chain(&split.valid).chain(&split.test).copied().collect();
            all.sort_unstable();
            let expect: Vec<usize> = (0..data.len()).collect();
            assert_eq!(all, expect, "not a partition");
            for &i in split.train.iter().chain(&split.valid) {
                assert_ne!(data[i].subject, subject);
            }
            for &i in &split.test {
                assert_eq!(data[i].subject, subject);
            }
        }
        assert!(matches!(loso_split(&data, 99, 0), Err(DataError::UnknownSubject(99))));
    }

    #[test]
    fn loso_default_test_fold_size() {
        let cfg = SyntheticConfig { n_subjects: 4, ..SyntheticConfig::default() };
        let data = synth::generate_synthetic_dataset(&cfg);
        let split = loso_split(&data, 3, 1).unwrap();
        assert_eq!(split.test.len(), 160); // 2 paradigms × 80
    }

    #[test]
    fn derive_seed_decorrelates() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
