//! Synthetic polysomnograms with planted desaturations and controllable
//! delta-band EEG effects.
//!
//! Each EEG channel is 1/f Gaussian noise plus an independent component
//! restricted to 0.5–4 Hz with the same spectral shape. Scaling that second
//! component by `g` in an epoch raises the epoch's delta-band power by
//! `10·log10(1 + g²)` dB, which is how effects are planted.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cohort::{write_demographics, Class, Demographics, GroupId, SubjectRecord};
use crate::experiment::epoch_has_desat;
use crate::psg::{
    format_annotations, overlaps_by_sample, stage_blocks, write_edf, AnnotationEvent, AnnotationKind, Interval, Recording,
    RecordingHeader, SignalDef, SignalTrace, SleepStage, StageLabelMap, EEG_CHANNELS, EEG_RATE_HZ, EPOCH_SECONDS, SPO2_CHANNEL,
};
use crate::{seed, tsv, Error, Result};

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid synth config: {0}")]
pub struct SynthError(pub String);

/// Subject counts of one group, overriding `subjects_per_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupCount {
    pub group: String,
    pub desaturated: usize,
    pub undesaturated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects_per_class: usize,
    pub group_counts: Vec<GroupCount>,
    /// Seconds; a multiple of 30.
    pub night_duration: f64,
    /// One sleep cycle as `(stage, epochs)` runs, repeated to fill the night.
    pub stage_cycle: Vec<(SleepStage, usize)>,
    /// Each run length is perturbed by up to this many epochs.
    pub stage_jitter: usize,
    /// Desaturation events per hour for desaturated subjects.
    pub desat_rate: f64,
    /// Delta-band boost of epochs overlapping a desaturation.
    pub desat_effect_db: f64,
    /// Delta-band boost of every epoch of desaturated subjects.
    pub latent_effect_db: f64,
    /// Power spectral density falls as `1/f^noise_exponent`.
    pub noise_exponent: f64,
    pub eeg_rms_uv: f64,
    /// Amplitude of the 60 Hz interference; 120 Hz gets half.
    pub line_noise_uv: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        use SleepStage::*;
        SynthConfig {
            subjects_per_class: 6,
            group_counts: Vec::new(),
            night_duration: 3600.0,
            stage_cycle: vec![(Wake, 2), (N1, 4), (N2, 12), (N3, 8), (N2, 6), (Rem, 8)],
            stage_jitter: 1,
            desat_rate: 15.0,
            desat_effect_db: 6.0,
            latent_effect_db: 0.0,
            noise_exponent: 1.0,
            eeg_rms_uv: 30.0,
            line_noise_uv: 2.0,
            seed: 0,
        }
    }
}

/// Stage scaling of the EEG amplitude.
fn stage_gain(stage: SleepStage) -> f64 {
    match stage {
        SleepStage::Wake => 0.8,
        SleepStage::N1 => 0.9,
        SleepStage::N2 => 1.0,
        SleepStage::N3 => 1.4,
        SleepStage::Rem => 0.85,
    }
}

const DELTA_BAND: (f64, f64) = (0.5, 4.0);
const LINE_PERIOD: usize = 64;
/// Below this frequency the 1/f shape is held flat.
const FLAT_BELOW_HZ: f64 = 0.5;
const EEG_PHYSICAL: (f64, f64) = (-3276.8, 3276.7);
const SPO2_RATE_HZ: f64 = 1.0;
const MIN_EVENT_GAP_S: u64 = 5;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError(m));
        let epochs = self.night_duration / EPOCH_SECONDS;
        if !(self.night_duration > 0.0) || epochs.fract() != 0.0 {
            return bad(format!("night_duration must be a positive multiple of 30 s, got {}", self.night_duration));
        }
        if self.stage_cycle.is_empty() || self.stage_cycle.iter().any(|&(_, n)| n == 0) {
            return bad("stage_cycle needs at least one run and every run >= 1 epoch".into());
        }
        if !(self.desat_rate >= 0.0 && self.desat_rate.is_finite()) {
            return bad(format!("desat_rate must be >= 0, got {}", self.desat_rate));
        }
        for (name, v) in [("desat_effect_db", self.desat_effect_db), ("latent_effect_db", self.latent_effect_db)] {
            if !(v >= 0.0 && v <= 40.0) {
                return bad(format!("{name} must be in [0, 40], got {v}"));
            }
        }
        if !(self.noise_exponent.is_finite() && self.noise_exponent >= 0.0) {
            return bad("noise_exponent must be >= 0".into());
        }
        if !(self.eeg_rms_uv > 0.0 && self.eeg_rms_uv < 300.0) || !(self.line_noise_uv >= 0.0 && self.line_noise_uv < 300.0) {
            return bad("eeg_rms_uv must be in (0, 300) and line_noise_uv in [0, 300)".into());
        }
        for gc in &self.group_counts {
            gc.group
                .parse::<GroupId>()
                .map_err(|e| SynthError(format!("group_counts: {e}")))?;
        }
        Ok(())
    }

    fn counts(&self, group: GroupId) -> (usize, usize) {
        self.group_counts
            .iter()
            .find(|gc| gc.group.parse::<GroupId>().ok() == Some(group))
            .map_or((self.subjects_per_class, self.subjects_per_class), |gc| (gc.desaturated, gc.undesaturated))
    }

    /// Subjects to generate: ids `S0001…` ordered by group, desaturated
    /// subjects before undesaturated ones.
    pub fn plan(&self) -> Vec<(String, GroupId, Class)> {
        let mut out = Vec::new();
        for group in GroupId::all() {
            let (d, u) = self.counts(group);
            for class in std::iter::repeat_n(Class::Desaturated, d).chain(std::iter::repeat_n(Class::Undesaturated, u)) {
                out.push((format!("S{:04}", out.len() + 1), group, class));
            }
        }
        out
    }
}

/// One generated subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub record: SubjectRecord,
    pub recording: Recording,
    pub group: GroupId,
    pub class: Class,
    /// Stage-block indices overlapping a desaturation below 90 %.
    pub planted_desat_epochs: Vec<usize>,
}

/// Ground-truth row for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub subject_id: String,
    pub group: GroupId,
    pub class: Class,
    pub planted_desat_epochs: Vec<usize>,
    /// Delta-band boost of the desaturation epochs relative to the
    /// subject's clean epochs; 0 for undesaturated subjects.
    pub effect_db: f64,
}

pub const GROUND_TRUTH_COLUMNS: [&str; 5] = ["subject_id", "group", "class", "planted_desat_epochs", "effect_db"];

/// Reusable generator; holds the inverse FFT plan for the night length.
pub struct Generator {
    cfg: SynthConfig,
    n: usize,
    ifft: Arc<dyn Fft<f64>>,
    /// Spectral amplitude per bin `0..=n/2`, scaled for the target RMS.
    amp: Vec<f64>,
}

impl Generator {
    pub fn new(cfg: SynthConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let n = (cfg.night_duration * EEG_RATE_HZ).round() as usize;
        let ifft = FftPlanner::new().plan_fft_inverse(n);
        let half = n / 2;
        let mut amp: Vec<f64> = (0..=half)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    let f = k as f64 * EEG_RATE_HZ / n as f64;
                    f.max(FLAT_BELOW_HZ).powf(-cfg.noise_exponent / 2.0)
                }
            })
            .collect();
        // Var x[t] = (Σ_k E|X_k|²) / n² over the full Hermitian spectrum.
        let power: f64 = amp
            .iter()
            .enumerate()
            .map(|(k, a)| if n % 2 == 0 && k == half { a * a } else { 2.0 * a * a })
            .sum();
        let scale = cfg.eeg_rms_uv / (power.sqrt() / n as f64);
        amp.iter_mut().for_each(|a| *a *= scale);
        Ok(Generator { cfg, n, ifft, amp })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Draws the spectrum of one real Gaussian noise signal into the real
    /// (`part = 1`) or imaginary (`part = i`) component of `spec`, limited
    /// to bins whose frequency lies in `band` when given.
    fn draw_spectrum(&self, rng: &mut ChaCha8Rng, band: Option<(f64, f64)>, spec: &mut [Complex64], part: Complex64) {
        let n = self.n;
        let half = n / 2;
        for k in 1..=half {
            let f = k as f64 * EEG_RATE_HZ / n as f64;
            if band.is_some_and(|(lo, hi)| f < lo || f > hi) {
                continue;
            }
            let a = self.amp[k];
            if n % 2 == 0 && k == half {
                let re: f64 = rng.sample(StandardNormal);
                spec[k] += part * (a * re);
            } else {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let z = Complex64::new(re, im) * (a / 2f64.sqrt());
                spec[k] += part * z;
                spec[n - k] += part * z.conj();
            }
        }
    }

    /// Broadband noise with the generator's spectrum and an independent
    /// copy restricted to the delta band. Both Hermitian spectra share one
    /// complex inverse FFT: the real part of the result is the first signal
    /// and the imaginary part the second.
    fn colored_pair(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let mut spec = vec![Complex64::new(0.0, 0.0); self.n];
        self.draw_spectrum(rng, None, &mut spec, Complex64::new(1.0, 0.0));
        self.draw_spectrum(rng, Some(DELTA_BAND), &mut spec, Complex64::new(0.0, 1.0));
        self.ifft.process(&mut spec);
        let scale = 1.0 / self.n as f64;
        spec.iter().map(|z| (z.re * scale, z.im * scale)).unzip()
    }

    pub fn generate_subject(&self, subject_id: &str, group: GroupId, class: Class) -> SynthSubject {
        let cfg = &self.cfg;
        let mut rng = seed::rng(cfg.seed, &["subject", subject_id]);
        let desat_class = class == Class::Desaturated;

        let (lo, hi) = group.age_band.bounds();
        let age = ((lo + rng.random::<f64>() * (hi - lo)) * 100.0).floor() / 100.0;
        let age = age.clamp(lo, hi - 0.01);

        let mut annotations = stage_annotations(cfg, &mut rng);
        let blocks = stage_blocks(&annotations);
        let seconds = cfg.night_duration as u64;

        let events = if desat_class { desat_events(cfg, &blocks, seconds, &mut rng) } else { Vec::new() };
        let baseline = if desat_class { rng.random_range(95.0..98.0) } else { rng.random_range(97.0..99.0) };
        let mut spo2: Vec<f64> = (0..seconds).map(|_| baseline + rng.random_range(-0.5..0.5)).collect();
        for &(onset, dur) in &events {
            let nadir = rng.random_range(84.0..88.0);
            let mid = onset + dur / 2;
            let half_span = (mid - onset).max(onset + dur - mid) as f64;
            for t in onset..=(onset + dur).min(seconds - 1) {
                let frac = 1.0 - (t as f64 - mid as f64).abs() / half_span;
                let v = baseline - (baseline - nadir) * frac;
                spo2[t as usize] = spo2[t as usize].min(v);
            }
        }
        for &(onset, dur) in &events {
            let apnea_onset = onset.saturating_sub(10);
            annotations.push(AnnotationEvent {
                onset: apnea_onset as f64,
                duration: rng.random_range(10..=20) as f64,
                kind: AnnotationKind::Apnea,
            });
            annotations.push(AnnotationEvent {
                onset: onset as f64,
                duration: dur as f64,
                kind: AnnotationKind::Desaturation,
            });
        }
        annotations.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        let spo2 = SignalTrace::new(SPO2_CHANNEL, SPO2_RATE_HZ, spo2);

        let desat_annots: Vec<AnnotationEvent> =
            annotations.iter().filter(|e| e.kind == AnnotationKind::Desaturation).cloned().collect();
        let planted: Vec<usize> = blocks
            .iter()
            .filter(|b| epoch_has_desat(b.interval, &desat_annots, &spo2, 90.0))
            .map(|b| b.index)
            .collect();

        let latent = if desat_class { cfg.latent_effect_db } else { 0.0 };
        let per_block: Vec<(usize, usize, f64, f64)> = blocks
            .iter()
            .map(|b| {
                let start = (b.interval.start * EEG_RATE_HZ).round() as usize;
                let end = ((b.interval.end * EEG_RATE_HZ).round() as usize).min(self.n);
                let db = latent + if planted.contains(&b.index) { cfg.desat_effect_db } else { 0.0 };
                (start, end, stage_gain(b.stage), (10f64.powf(db / 10.0) - 1.0).max(0.0).sqrt())
            })
            .collect();

        let mut traces = Vec::with_capacity(EEG_CHANNELS.len() + 1);
        for label in EEG_CHANNELS {
            let (base, delta) = self.colored_pair(&mut rng);
            let phase60 = rng.random_range(0.0..2.0 * PI);
            let phase120 = rng.random_range(0.0..2.0 * PI);
            // 60 and 120 Hz both complete whole cycles every 64 samples.
            let line: Vec<f64> = (0..LINE_PERIOD)
                .map(|i| {
                    let t = i as f64 / EEG_RATE_HZ;
                    cfg.line_noise_uv * (2.0 * PI * 60.0 * t + phase60).sin()
                        + 0.5 * cfg.line_noise_uv * (2.0 * PI * 120.0 * t + phase120).sin()
                })
                .collect();
            let mut x = base;
            for &(start, end, gain, g) in &per_block {
                for i in start..end {
                    x[i] = gain * (x[i] + g * delta[i]);
                }
            }
            for (i, v) in x.iter_mut().enumerate() {
                *v = (*v + line[i % LINE_PERIOD]).clamp(EEG_PHYSICAL.0, EEG_PHYSICAL.1);
            }
            traces.push(SignalTrace::new(label, EEG_RATE_HZ, x));
        }
        traces.push(spo2.clone());

        let eeg_def = |label: &str| SignalDef {
            label: label.into(),
            sample_rate: EEG_RATE_HZ,
            physical_dimension: "uV".into(),
            physical_min: EEG_PHYSICAL.0,
            physical_max: EEG_PHYSICAL.1,
            digital_min: -32768,
            digital_max: 32767,
            samples_per_record: EEG_RATE_HZ as usize,
        };
        let mut signals: Vec<SignalDef> = EEG_CHANNELS.iter().map(|l| eeg_def(l)).collect();
        signals.push(SignalDef {
            label: SPO2_CHANNEL.into(),
            sample_rate: SPO2_RATE_HZ,
            physical_dimension: "%".into(),
            physical_min: 0.0,
            physical_max: 100.0,
            digital_min: -32768,
            digital_max: 32767,
            samples_per_record: 1,
        });
        let recording = Recording {
            header: RecordingHeader {
                subject_id: subject_id.into(),
                recording_id: "synthetic".into(),
                record_count: seconds as usize,
                record_duration: 1.0,
                signals,
            },
            traces,
        };
        SynthSubject {
            record: SubjectRecord {
                subject_id: subject_id.into(),
                age,
                gender: group.gender,
                annotations,
                spo2,
            },
            recording,
            group,
            class,
            planted_desat_epochs: planted,
        }
    }
}

/// Stage runs filling the night, merged into one annotation per run.
fn stage_annotations(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<AnnotationEvent> {
    let total = (cfg.night_duration / EPOCH_SECONDS).round() as usize;
    let mut runs: Vec<(SleepStage, usize)> = Vec::new();
    let mut filled = 0;
    'outer: loop {
        for &(stage, len) in &cfg.stage_cycle {
            let j = cfg.stage_jitter as i64;
            let len = (len as i64 + rng.random_range(-j..=j)).max(1) as usize;
            let len = len.min(total - filled);
            match runs.last_mut() {
                Some((s, n)) if *s == stage => *n += len,
                _ => runs.push((stage, len)),
            }
            filled += len;
            if filled == total {
                break 'outer;
            }
        }
    }
    let mut at = 0usize;
    runs.into_iter()
        .map(|(stage, n)| {
            let e = AnnotationEvent {
                onset: at as f64 * EPOCH_SECONDS,
                duration: n as f64 * EPOCH_SECONDS,
                kind: AnnotationKind::SleepStage(stage),
            };
            at += n;
            e
        })
        .collect()
}

/// Non-overlapping `(onset, duration)` pairs in whole seconds. Poisson
/// placement first, then one extra event inside each analysis stage that
/// no event touches yet.
fn desat_events(cfg: &SynthConfig, blocks: &[crate::psg::StageBlock], seconds: u64, rng: &mut ChaCha8Rng) -> Vec<(u64, u64)> {
    let mut events: Vec<(u64, u64)> = Vec::new();
    let free = |events: &[(u64, u64)], onset: u64, dur: u64| {
        events
            .iter()
            .all(|&(o, d)| onset + dur + MIN_EVENT_GAP_S <= o || o + d + MIN_EVENT_GAP_S <= onset)
    };
    let mean = cfg.desat_rate * cfg.night_duration / 3600.0;
    let count = if mean > 0.0 {
        Poisson::new(mean).map_or(0, |p| p.sample(rng) as usize)
    } else {
        0
    };
    for _ in 0..count {
        for _ in 0..100 {
            let dur = rng.random_range(10..=40u64);
            if dur + 1 >= seconds {
                break;
            }
            let onset = rng.random_range(0..seconds - dur - 1);
            if free(&events, onset, dur) {
                events.push((onset, dur));
                break;
            }
        }
    }
    if cfg.desat_rate > 0.0 {
        for stage in SleepStage::ANALYSIS {
            let stage_blocks: Vec<Interval> = blocks.iter().filter(|b| b.stage == stage).map(|b| b.interval).collect();
            if stage_blocks.is_empty() {
                continue;
            }
            let touched = events.iter().any(|&(o, d)| {
                let iv = Interval::new(o as f64, (o + d) as f64);
                stage_blocks.iter().any(|b| overlaps_by_sample(iv, *b, EEG_RATE_HZ))
            });
            if touched {
                continue;
            }
            for _ in 0..100 {
                let b = stage_blocks[rng.random_range(0..stage_blocks.len())];
                let dur = rng.random_range(10..=20u64);
                let onset = b.start as u64 + rng.random_range(0..=(EPOCH_SECONDS as u64 - dur));
                if onset + dur < seconds && free(&events, onset, dur) {
                    events.push((onset, dur));
                    break;
                }
            }
        }
    }
    events.sort_unstable();
    events
}

/// Writes `<id>.edf` and `<id>.tsv` for one subject.
pub fn write_subject(dir: &Path, subject: &SynthSubject) -> Result<()> {
    let id = &subject.record.subject_id;
    let edf = write_edf(&subject.recording)?;
    let edf_path = dir.join(format!("{id}.edf"));
    fs::write(&edf_path, edf).map_err(|e| Error::io(&edf_path, e))?;
    let tsv_path = dir.join(format!("{id}.tsv"));
    let text = format_annotations(&subject.record.annotations, &StageLabelMap::default());
    fs::write(&tsv_path, text).map_err(|e| Error::io(&tsv_path, e))
}

/// Generates every planned subject into `dir` together with
/// `demographics.tsv` and `ground_truth.tsv`.
pub fn generate_cohort(cfg: &SynthConfig, dir: &Path) -> Result<Vec<GroundTruth>> {
    let generator = Generator::new(cfg.clone())?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut demographics = Vec::new();
    let mut truth = Vec::new();
    for (id, group, class) in cfg.plan() {
        let subject = generator.generate_subject(&id, group, class);
        write_subject(dir, &subject)?;
        demographics.push(Demographics {
            subject_id: id.clone(),
            age: subject.record.age,
            gender: subject.record.gender,
        });
        truth.push(GroundTruth {
            subject_id: id,
            group,
            class,
            planted_desat_epochs: subject.planted_desat_epochs,
            effect_db: if class == Class::Desaturated { cfg.desat_effect_db } else { 0.0 },
        });
    }
    write_demographics(&dir.join("demographics.tsv"), &demographics)?;
    write_ground_truth(&dir.join("ground_truth.tsv"), &truth)?;
    Ok(truth)
}

/// Planted epochs are written comma-separated, `-` when there are none.
pub fn write_ground_truth(path: &Path, rows: &[GroundTruth]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|g| {
            let planted = if g.planted_desat_epochs.is_empty() {
                "-".to_string()
            } else {
                g.planted_desat_epochs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            vec![g.subject_id.clone(), g.group.to_string(), g.class.to_string(), planted, g.effect_db.to_string()]
        })
        .collect();
    tsv::write(path, &GROUND_TRUTH_COLUMNS, &rows)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let table = tsv::read(path, &GROUND_TRUTH_COLUMNS)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, f) in table.rows {
        let bad = |msg: String| Error::Format {
            path: path.into(),
            line,
            msg,
        };
        let planted = if f[3] == "-" {
            Vec::new()
        } else {
            f[3].split(',')
                .map(|s| tsv::field(path, line, "planted_desat_epochs", s))
                .collect::<Result<Vec<usize>>>()?
        };
        out.push(GroundTruth {
            subject_id: f[0].clone(),
            group: f[1].parse().map_err(|e: crate::cohort::CohortError| bad(e.to_string()))?,
            class: f[2].parse().map_err(|e: crate::cohort::CohortError| bad(e.to_string()))?,
            planted_desat_epochs: planted,
            effect_db: tsv::field(path, line, "effect_db", &f[4])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{classify_stage, min_spo2_during, AgeBand, CohortRules, Gender};
    use crate::dsp::{stft, StftConfig};

    fn short(minutes: f64) -> SynthConfig {
        SynthConfig {
            night_duration: minutes * 60.0,
            ..SynthConfig::default()
        }
    }

    fn group() -> GroupId {
        GroupId {
            age_band: AgeBand::A5to8,
            gender: Gender::F,
        }
    }

    #[test]
    fn config_validation_and_plan() {
        assert!(SynthConfig::default().validate().is_ok());
        assert!(short(0.75).validate().is_err());
        assert!(SynthConfig { desat_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { desat_effect_db: -3.0, ..Default::default() }.validate().is_err());
        let plan = SynthConfig::default().plan();
        assert_eq!(plan.len(), 120);
        assert_eq!(plan[0].0, "S0001");
        let cfg = SynthConfig {
            group_counts: vec![GroupCount {
                group: "0-2_M".into(),
                desaturated: 1,
                undesaturated: 0,
            }],
            ..Default::default()
        };
        assert_eq!(cfg.plan().len(), 109);
    }

    #[test]
    fn stages_cover_the_night() {
        let cfg = short(60.0);
        let events = stage_annotations(&cfg, &mut seed::rng(1, &[]));
        let blocks = stage_blocks(&events);
        assert_eq!(blocks.len(), 120);
        for st in SleepStage::ANALYSIS {
            assert!(blocks.iter().any(|b| b.stage == st), "{st}");
        }
    }

    #[test]
    fn classes_and_spo2() {
        let g = Generator::new(short(40.0)).unwrap();
        let rules = CohortRules::default();
        let d = g.generate_subject("S0001", group(), Class::Desaturated);
        let u = g.generate_subject("S0002", group(), Class::Undesaturated);
        assert!(u.record.spo2.samples.iter().all(|&v| v >= 96.0));
        assert!(!u.record.annotations.iter().any(|e| e.kind == AnnotationKind::Apnea));
        assert!(u.planted_desat_epochs.is_empty());
        assert!(!d.planted_desat_epochs.is_empty());
        for e in d.record.annotations.iter().filter(|e| e.kind == AnnotationKind::Desaturation) {
            assert!(min_spo2_during(e, &d.record.spo2).unwrap() < 90.0);
        }
        for st in SleepStage::ANALYSIS {
            assert_eq!(classify_stage(&u.record, st, &rules).class, Class::Undesaturated);
            assert_eq!(classify_stage(&d.record, st, &rules).class, Class::Desaturated);
        }
        let (lo, hi) = group().age_band.bounds();
        assert!(d.record.age >= lo && d.record.age < hi);
        assert_eq!(d.recording.traces.len(), 8);
        assert_eq!(d.recording.traces[0].samples.len(), 2400 * 256);
    }

    #[test]
    fn deterministic() {
        let g = Generator::new(short(10.0)).unwrap();
        let a = g.generate_subject("S0003", group(), Class::Desaturated);
        let b = g.generate_subject("S0003", group(), Class::Desaturated);
        assert_eq!(a, b);
        let c = g.generate_subject("S0004", group(), Class::Desaturated);
        assert_ne!(a.recording.traces[0].samples, c.recording.traces[0].samples);
    }

    fn delta_power(x: &[f64]) -> f64 {
        let spec = stft(x, &StftConfig::default()).unwrap();
        let mut p = 0.0;
        for frame in 0..spec.frames {
            for bin in 1..=4 {
                p += spec.at(bin, frame).norm_sqr();
            }
        }
        p
    }

    #[test]
    fn planted_delta_boost_and_rms() {
        let cfg = SynthConfig {
            desat_effect_db: 6.0,
            latent_effect_db: 0.0,
            desat_rate: 30.0,
            line_noise_uv: 0.0,
            ..short(60.0)
        };
        let g = Generator::new(cfg).unwrap();
        let s = g.generate_subject("S0005", group(), Class::Desaturated);
        let blocks = stage_blocks(&s.record.annotations);
        let (mut on, mut off) = (Vec::new(), Vec::new());
        for b in blocks.iter().filter(|b| b.stage == SleepStage::N2) {
            let start = (b.interval.start * 256.0) as usize;
            let p: f64 = (0..7)
                .map(|c| delta_power(&s.recording.traces[c].samples[start..start + 7680]))
                .sum();
            if s.planted_desat_epochs.contains(&b.index) {
                on.push(p);
            } else {
                off.push(p);
            }
        }
        assert!(on.len() >= 3 && off.len() >= 3, "{} {}", on.len(), off.len());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let db = 10.0 * (mean(&on) / mean(&off)).log10();
        assert!((db - 6.0).abs() < 1.0, "{db}");
    }

    #[test]
    fn unit_rms_scaling() {
        let cfg = SynthConfig {
            line_noise_uv: 0.0,
            ..short(10.0)
        };
        let g = Generator::new(cfg).unwrap();
        let (x, d) = g.colored_pair(&mut seed::rng(3, &[]));
        let rms = |v: &[f64]| (v.iter().map(|v| v * v).sum::<f64>() / v.len() as f64).sqrt();
        assert!((rms(&x) / 30.0 - 1.0).abs() < 0.1, "{}", rms(&x));
        assert!(rms(&d) > 1.0 && rms(&d) < rms(&x));
        let corr = x.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / (x.len() as f64 * rms(&x) * rms(&d));
        assert!(corr.abs() < 0.1, "{corr}");
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            GroundTruth {
                subject_id: "S0001".into(),
                group: group(),
                class: Class::Desaturated,
                planted_desat_epochs: vec![3, 7],
                effect_db: 6.0,
            },
            GroundTruth {
                subject_id: "S0002".into(),
                group: group(),
                class: Class::Undesaturated,
                planted_desat_epochs: vec![],
                effect_db: 0.0,
            },
        ];
        let p = dir.path().join("gt.tsv");
        write_ground_truth(&p, &rows).unwrap();
        assert_eq!(read_ground_truth(&p).unwrap(), rows);
    }
}
