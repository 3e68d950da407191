//! Synthetic hybrid-paradigm EEG.
//!
//! Stand-in for the original recordings, which are not distributable. Each
//! trial is a band-limited sinusoidal burst on a paradigm-specific channel
//! group — motor imagery in the 8–13 Hz range over central electrodes,
//! speech imagery in 2–8 Hz over frontal/temporal electrodes — with the
//! class encoded by the burst frequency offset and by a class-specific
//! channel weighting. Every signal component scales with
//! `class_separation`, so zero separation degenerates to pure noise and
//! chance-level decoding. A per-subject random spatial mixing matrix makes
//! the leave-one-subject-out problem genuinely cross-subject.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, LabeledTrial, Paradigm, N_CHANNELS, N_SAMPLES};
use crate::parallel::{map_indices, Execution};

/// Central electrodes carrying the motor-imagery rhythm
/// (CP5 CP1 CP2 CP6 C1 C2 C6).
pub const MI_CHANNELS: [usize; 7] = [7, 8, 9, 10, 16, 17, 18];

/// Frontal/temporal electrodes carrying the speech-imagery rhythm
/// (Fp1 Fp2 F7 F3 Fz F4 T8 AF7 AF3 AF4 AF8 TP7).
pub const SI_CHANNELS: [usize; 12] = [0, 1, 2, 3, 4, 5, 6, 12, 13, 14, 15, 19];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    /// Trials per paradigm per subject, spread over the paradigm's classes
    /// as evenly as possible (remainder to the lowest class indices).
    pub trials_per_paradigm: usize,
    /// Scales every class- and paradigm-revealing signal component.
    pub class_separation: f64,
    pub mi_band_hz: (f64, f64),
    pub si_band_hz: (f64, f64),
    pub noise_sigma: f64,
    pub sample_rate_hz: f64,
    /// Strength of the per-subject random spatial mixing.
    pub subject_mixing: f64,
    pub master_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            trials_per_paradigm: 80,
            class_separation: 1.0,
            mi_band_hz: (8.0, 13.0),
            si_band_hz: (2.0, 8.0),
            noise_sigma: 1.0,
            sample_rate_hz: 200.0,
            subject_mixing: 0.3,
            master_seed: 0,
        }
    }
}

/// Base burst amplitude at `class_separation = 1`.
const BURST_AMPLITUDE: f64 = 1.6;
/// Relative frequency jitter applied per trial within a class slot.
const FREQ_JITTER: f64 = 0.1;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Class-specific weighting over the paradigm's channel group, unit RMS.
fn class_pattern(class: usize, group_len: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..group_len)
        .map(|i| {
            1.0 + 0.8
                * (std::f64::consts::TAU * ((class + 1) * (i + 1)) as f64 / group_len as f64).sin()
        })
        .collect();
    let rms = (w.iter().map(|v| v * v).sum::<f64>() / group_len as f64).sqrt();
    for v in &mut w {
        *v /= rms;
    }
    w
}

fn class_counts(total: usize, classes: usize) -> Vec<usize> {
    (0..classes).map(|c| total / classes + usize::from(c < total % classes)).collect()
}

fn subject_trials(cfg: &SyntheticConfig, subject: usize) -> Vec<LabeledTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, subject as u64));

    // spatial mixing: I + m·G with G ~ N(0, 1/√24) per entry
    let mut mixing = vec![0.0f64; N_CHANNELS * N_CHANNELS];
    let g_scale = 1.0 / (N_CHANNELS as f64).sqrt();
    for (i, m) in mixing.iter_mut().enumerate() {
        let diag = i / N_CHANNELS == i % N_CHANNELS;
        *m = f64::from(diag) + cfg.subject_mixing * g_scale * normal(&mut rng);
    }

    let mut trials = Vec::with_capacity(2 * cfg.trials_per_paradigm);
    for paradigm in [Paradigm::Mi, Paradigm::Si] {
        let (band, group): (_, &[usize]) = match paradigm {
            Paradigm::Mi => (cfg.mi_band_hz, &MI_CHANNELS),
            Paradigm::Si => (cfg.si_band_hz, &SI_CHANNELS),
        };
        let classes = paradigm.classes();
        let slot_width = (band.1 - band.0) / classes as f64;
        for (class, &count) in class_counts(cfg.trials_per_paradigm, classes).iter().enumerate() {
            let pattern = class_pattern(class, group.len());
            for _ in 0..count {
                let f = band.0
                    + (class as f64 + 0.5) * slot_width
                    + rng.gen_range(-FREQ_JITTER..FREQ_JITTER) * slot_width;
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let amp = cfg.class_separation * BURST_AMPLITUDE;

                let mut clean = vec![0.0f64; N_CHANNELS * N_SAMPLES];
                for t in 0..N_SAMPLES {
                    // raised-cosine envelope over the whole trial
                    let env = (std::f64::consts::PI * t as f64 / N_SAMPLES as f64).sin().powi(2);
                    let carrier =
                        (std::f64::consts::TAU * f * t as f64 / cfg.sample_rate_hz + phase).sin();
                    let v = amp * env * carrier;
                    for (gi, &ch) in group.iter().enumerate() {
                        clean[ch * N_SAMPLES + t] = pattern[gi] * v;
                    }
                }

                // mix spatially, then add sensor noise
                let mut samples = vec![0.0f32; N_CHANNELS * N_SAMPLES];
                for ch in 0..N_CHANNELS {
                    for t in 0..N_SAMPLES {
                        let mut acc = 0.0f64;
                        for src in 0..N_CHANNELS {
                            let w = mixing[ch * N_CHANNELS + src];
                            if w != 0.0 {
                                acc += w * clean[src * N_SAMPLES + t];
                            }
                        }
                        samples[ch * N_SAMPLES + t] = acc as f32;
                    }
                }
                for s in samples.iter_mut() {
                    *s += (cfg.noise_sigma * normal(&mut rng)) as f32;
                }

                trials.push(
                    LabeledTrial::new(samples, paradigm, class, subject as u16)
                        .expect("generated trials are well-formed"),
                );
            }
        }
    }
    trials
}

/// Deterministic in `master_seed`; subjects are generated from independent
/// derived sub-seeds, so the parallel and sequential paths agree bitwise.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Vec<LabeledTrial> {
    generate_with(cfg, Execution::default())
}

pub fn generate_with(cfg: &SyntheticConfig, exec: Execution) -> Vec<LabeledTrial> {
    let per_subject = map_indices(exec, cfg.n_subjects, |s| subject_trials(cfg, s));
    per_subject.into_iter().flatten().collect()
}
