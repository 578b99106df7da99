//! The `desatscan` subcommands over a shared run configuration.
//!
//! Layout of `out_dir`:
//!
//! ```text
//! config.toml                 effective configuration
//! epochs.tsv                  one row per featurized epoch
//! tensors/<id>_<stage>.dstf   [epochs, 7, 129, 61] per subject and stage
//! cohort.tsv  splits.tsv  runs.tsv  report.tsv  report.txt
//! models/<run>.dsck  logs/<run>.tsv  predictions/<run>.tsv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::cohort::{read_demographics, Cohort, CohortRules, SubjectRecord};
use crate::config::{ConfigError, PipelineConfig};
use crate::dsp::{denoise_with, segment_epochs, Featurizer, NotchConfig, TENSOR_DIMS, TENSOR_LEN};
use crate::experiment::{build, epoch_has_desat, EpochRecord};
use crate::metrics::{self, RunResult};
use crate::nn::{predict, save_checkpoint, train_samples, EpochStats, Model, Samples, TrainHistory};
use crate::psg::{
    parse_annotations, parse_edf, required_channels_check, AnnotationKind, Recording, SleepStage, StageLabelMap, EEG_CHANNELS,
    SPO2_CHANNEL,
};
use crate::split::{plan, read_splits, write_splits, CohortSplit};
use crate::{dstf, synth, tsv, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Preprocess,
    Cohort,
    Split,
    Train,
    Report,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Synth(_) => EXIT_CONFIG,
        Error::MissingInput(_) => EXIT_MISSING_INPUT,
        _ => EXIT_RUNTIME,
    }
}

/// Reads and validates a configuration file, applying a seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<PipelineConfig> {
    if !path.exists() {
        return Err(Error::MissingInput(path.into()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = PipelineConfig::from_toml(&text, path)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one subcommand. The configuration is validated before any file is
/// read or written.
pub fn run(command: Command, cfg: &PipelineConfig, force: bool) -> Result<()> {
    cfg.validate()?;
    match command {
        Command::Synth => cmd_synth(cfg, force),
        Command::Preprocess => cmd_preprocess(cfg),
        Command::Cohort => cmd_cohort(cfg),
        Command::Split => cmd_split(cfg),
        Command::Train => cmd_train(cfg),
        Command::Report => cmd_report(cfg).map(|text| print!("{text}")),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.into()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn save_config(cfg: &PipelineConfig) -> Result<()> {
    write_file(&cfg.out_dir.join("config.toml"), cfg.to_toml())
}

/// Generates the synthetic cohort into `data_dir`. A non-empty `data_dir`
/// is only overwritten with `force`.
pub fn cmd_synth(cfg: &PipelineConfig, force: bool) -> Result<()> {
    let dir = &cfg.data_dir;
    let occupied = dir.is_dir() && fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
    if occupied && !force {
        return Err(ConfigError::Invalid(format!("{} is not empty; pass --force to overwrite", dir.display())).into());
    }
    let truth = synth::generate_cohort(&cfg.synth, dir)?;
    eprintln!("synth: wrote {} subjects to {}", truth.len(), dir.display());
    Ok(())
}

/// One subject's recording and annotations from `data_dir`.
pub fn load_subject(data_dir: &Path, subject_id: &str, age: f64, gender: crate::cohort::Gender) -> Result<(Recording, SubjectRecord)> {
    let edf_path = data_dir.join(format!("{subject_id}.edf"));
    let tsv_path = data_dir.join(format!("{subject_id}.tsv"));
    let (recording, _) = parse_edf(&read_file(&edf_path)?)?;
    let text = String::from_utf8(read_file(&tsv_path)?).map_err(|_| Error::Format {
        path: tsv_path.clone(),
        line: 0,
        msg: "not UTF-8".into(),
    })?;
    let annotations = parse_annotations(&text, &StageLabelMap::default())?;
    let spo2 = recording
        .trace(SPO2_CHANNEL)
        .cloned()
        .ok_or_else(|| Error::MissingChannels {
            path: edf_path.clone(),
            channels: vec![SPO2_CHANNEL.into()],
        })?;
    Ok((
        recording,
        SubjectRecord {
            subject_id: subject_id.into(),
            age,
            gender,
            annotations,
            spo2,
        },
    ))
}

/// Denoises the EEG channels and featurizes every staged epoch of
/// `stages`, flagging epochs that overlap a desaturation below
/// `rules.desat_spo2`.
pub fn featurize_subject(
    recording: &Recording,
    subject: &SubjectRecord,
    stages: &[SleepStage],
    notch: &NotchConfig,
    featurizer: &Featurizer,
    rules: &CohortRules,
) -> Result<Vec<(EpochRecord, f64)>> {
    let missing = required_channels_check(&recording.header, &EEG_CHANNELS);
    if !missing.is_empty() {
        return Err(Error::MissingChannels {
            path: PathBuf::from(format!("{}.edf", subject.subject_id)),
            channels: missing,
        });
    }
    let mut clean = Recording {
        header: recording.header.clone(),
        traces: Vec::with_capacity(EEG_CHANNELS.len()),
    };
    for label in EEG_CHANNELS {
        let trace = recording.trace(label).expect("checked above");
        clean.traces.push(denoise_with(trace, notch)?);
    }
    clean.header.subject_id = subject.subject_id.clone();
    let desats: Vec<_> = subject
        .annotations
        .iter()
        .filter(|e| e.kind == AnnotationKind::Desaturation)
        .cloned()
        .collect();
    let (segments, _) = segment_epochs(&clean, &subject.annotations, stages);
    let mut out = Vec::with_capacity(segments.len());
    for seg in &segments {
        let tensor = featurizer.epoch_spectrogram(seg)?;
        let has_desat = epoch_has_desat(seg.interval, &desats, &subject.spo2, rules.desat_spo2);
        out.push((EpochRecord { tensor, has_desat }, seg.interval.start));
    }
    Ok(out)
}

pub const EPOCH_COLUMNS: [&str; 7] = ["subject_id", "stage", "epoch_index", "onset", "has_desat", "file", "row"];

fn tensor_file(subject_id: &str, stage: SleepStage) -> String {
    format!("tensors/{subject_id}_{stage}.dstf")
}

pub fn cmd_preprocess(cfg: &PipelineConfig) -> Result<()> {
    let demographics = read_demographics(&cfg.data_dir.join("demographics.tsv"))?;
    let featurizer = Featurizer::new(cfg.spectrogram.clone())?;
    save_config(cfg)?;
    let mut rows = Vec::new();
    for d in &demographics {
        let (recording, subject) = load_subject(&cfg.data_dir, &d.subject_id, d.age, d.gender)?;
        let epochs = featurize_subject(&recording, &subject, &cfg.stages, &cfg.notch, &featurizer, &cfg.thresholds)?;
        let mut by_stage: BTreeMap<SleepStage, Vec<&(EpochRecord, f64)>> = BTreeMap::new();
        for e in &epochs {
            by_stage.entry(e.0.tensor.stage).or_default().push(e);
        }
        for (stage, items) in by_stage {
            let file = tensor_file(&d.subject_id, stage);
            let mut data = Vec::with_capacity(items.len() * TENSOR_LEN);
            for (row, (rec, onset)) in items.iter().enumerate() {
                data.extend_from_slice(&rec.tensor.data);
                rows.push(vec![
                    d.subject_id.clone(),
                    stage.to_string(),
                    rec.tensor.epoch_index.to_string(),
                    onset.to_string(),
                    u8::from(rec.has_desat).to_string(),
                    file.clone(),
                    row.to_string(),
                ]);
            }
            let [c, h, w] = TENSOR_DIMS;
            let bytes = dstf::encode(&[items.len(), c, h, w], &data).map_err(|e| Error::Pipeline(e.to_string()))?;
            write_file(&cfg.out_dir.join(&file), bytes)?;
        }
        eprintln!("preprocess: {} ({} epochs)", d.subject_id, epochs.len());
    }
    tsv::write(&cfg.out_dir.join("epochs.tsv"), &EPOCH_COLUMNS, &rows)
}

/// Featurized epochs of `stage` listed in `out_dir/epochs.tsv`.
pub fn load_epochs(out_dir: &Path, stage: SleepStage) -> Result<Vec<EpochRecord>> {
    let index = out_dir.join("epochs.tsv");
    let table = tsv::read(&index, &EPOCH_COLUMNS)?;
    let mut files: BTreeMap<String, Vec<Arc<[f32]>>> = BTreeMap::new();
    let mut out = Vec::new();
    for (line, f) in table.rows {
        let row_stage = SleepStage::from_str(&f[1]).map_err(|msg| Error::Format {
            path: index.clone(),
            line,
            msg,
        })?;
        if row_stage != stage {
            continue;
        }
        if !files.contains_key(&f[5]) {
            let path = out_dir.join(&f[5]);
            let (dims, data) = dstf::decode(&read_file(&path)?).map_err(|e| Error::Format {
                path: path.clone(),
                line: 0,
                msg: e.to_string(),
            })?;
            if dims.len() != 4 || dims[1..] != TENSOR_DIMS {
                return Err(Error::Format {
                    path,
                    line: 0,
                    msg: format!("expected [n, 7, 129, 61], found {dims:?}"),
                });
            }
            files.insert(f[5].clone(), data.chunks(TENSOR_LEN).map(Arc::from).collect());
        }
        let row: usize = tsv::field(&index, line, "row", &f[6])?;
        let data = files[&f[5]].get(row).cloned().ok_or_else(|| Error::Format {
            path: index.clone(),
            line,
            msg: format!("row {row} beyond {}", f[5]),
        })?;
        let has_desat: u8 = tsv::field(&index, line, "has_desat", &f[4])?;
        out.push(EpochRecord {
            tensor: crate::dsp::EpochTensor {
                subject_id: f[0].clone(),
                stage,
                epoch_index: tsv::field(&index, line, "epoch_index", &f[2])?,
                label: 0,
                data,
            },
            has_desat: has_desat == 1,
        });
    }
    Ok(out)
}

pub fn cmd_cohort(cfg: &PipelineConfig) -> Result<()> {
    let demographics = read_demographics(&cfg.data_dir.join("demographics.tsv"))?;
    save_config(cfg)?;
    let mut subjects = Vec::with_capacity(demographics.len());
    for d in &demographics {
        subjects.push(load_subject(&cfg.data_dir, &d.subject_id, d.age, d.gender)?.1);
    }
    let cohort = Cohort::build(&subjects, &cfg.stages, &cfg.thresholds);
    cohort.write_tsv(&cfg.out_dir.join("cohort.tsv"))?;
    for stage in &cfg.stages {
        let groups = cohort.groups(*stage);
        let d: usize = groups.values().map(|g| g.desaturated.len()).sum();
        let u: usize = groups.values().map(|g| g.undesaturated.len()).sum();
        eprintln!("cohort: {stage}: {d} desaturated, {u} undesaturated");
    }
    Ok(())
}

pub fn cmd_split(cfg: &PipelineConfig) -> Result<()> {
    let cohort = Cohort::read_tsv(&cfg.out_dir.join("cohort.tsv"))?;
    save_config(cfg)?;
    let mut splits = Vec::new();
    for &stage in &cfg.stages {
        splits.extend(plan(&cohort.groups(stage), stage, cfg.scheme, cfg.repeats, cfg.seed));
    }
    write_splits(&cfg.out_dir.join("splits.tsv"), &splits)
}

/// Name of one trained model's artifacts.
pub fn run_name(cfg: &PipelineConfig, split: &CohortSplit) -> String {
    format!("{}_{}_{}_r{}", cfg.experiment, split.stage, split.scheme, split.repeat)
}

/// Outcome of one training run.
pub struct TrainedRun {
    pub result: RunResult,
    pub model: Model<f32>,
    pub history: TrainHistory,
    /// `(subject_id, epoch_index, label, score)` per validation item.
    pub predictions: Vec<(String, usize, u8, f64)>,
}

/// Builds the configured experiment's datasets for `split`, trains with
/// checkpoint selection on the test split and scores the validation split.
pub fn train_split(
    cfg: &PipelineConfig,
    cohort: &Cohort,
    split: &CohortSplit,
    epochs: &[EpochRecord],
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainedRun> {
    let data = build(cfg.experiment, cohort, split, epochs, cfg.pos_weight)?;
    let (model, history) = train_samples(
        &Samples::from_dataset(&data.train),
        &Samples::from_dataset(&data.test),
        data.train.pos_weight,
        &cfg.model,
        on_epoch,
    )?;
    let val = &data.validation;
    let scores = predict(&model, val)?;
    let labels = val.labels();
    let result = RunResult {
        experiment: cfg.experiment,
        stage: split.stage,
        scheme: split.scheme,
        repeat: split.repeat,
        subjects: data.subject_counts(),
        ba: metrics::balanced_accuracy(&scores, &labels, 0.5).map_err(|e| validation_error(split, e))?,
        auc: metrics::roc_auc(&scores, &labels).map_err(|e| validation_error(split, e))?,
    };
    let predictions = val
        .items
        .iter()
        .zip(&scores)
        .map(|(t, &s)| (t.subject_id.clone(), t.epoch_index, t.label, s))
        .collect();
    Ok(TrainedRun {
        result,
        model,
        history,
        predictions,
    })
}

fn validation_error(split: &CohortSplit, e: metrics::MetricError) -> Error {
    Error::Pipeline(format!("{} {} repeat {}: validation split: {e}", split.stage, split.scheme, split.repeat))
}

const LOG_COLUMNS: [&str; 4] = ["epoch", "train_loss", "test_ba", "test_auc"];
const PREDICTION_COLUMNS: [&str; 4] = ["subject_id", "epoch_index", "label", "score"];

pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let cohort = Cohort::read_tsv(&cfg.out_dir.join("cohort.tsv"))?;
    let splits = read_splits(&cfg.out_dir.join("splits.tsv"))?;
    let index = cfg.out_dir.join("epochs.tsv");
    if !index.exists() {
        return Err(Error::MissingInput(index));
    }
    save_config(cfg)?;
    let mut results = Vec::new();
    for &stage in &cfg.stages {
        let chosen: Vec<&CohortSplit> = splits.iter().filter(|s| s.stage == stage && s.scheme == cfg.scheme).collect();
        if chosen.is_empty() {
            return Err(Error::Pipeline(format!(
                "splits.tsv has no {} splits for {stage}; rerun `split`",
                cfg.scheme
            )));
        }
        let epochs = load_epochs(&cfg.out_dir, stage)?;
        for split in chosen {
            let name = run_name(cfg, split);
            let mut log = Vec::new();
            let run = train_split(cfg, &cohort, split, &epochs, |s| {
                log.push(vec![s.epoch.to_string(), s.train_loss.to_string(), s.test_ba.to_string(), s.test_auc.to_string()]);
            })?;
            tsv::write(&cfg.out_dir.join(format!("logs/{name}.tsv")), &LOG_COLUMNS, &log)?;
            write_file(&cfg.out_dir.join(format!("models/{name}.dsck")), save_checkpoint(&run.model))?;
            let preds: Vec<Vec<String>> = run
                .predictions
                .iter()
                .map(|(id, e, l, s)| vec![id.clone(), e.to_string(), l.to_string(), s.to_string()])
                .collect();
            tsv::write(&cfg.out_dir.join(format!("predictions/{name}.tsv")), &PREDICTION_COLUMNS, &preds)?;
            eprintln!(
                "train: {name}: best epoch {}, validation BA {:.3}, AUC {:.3}",
                run.history.best_epoch, run.result.ba, run.result.auc
            );
            results.push(run.result);
        }
    }
    let runs_path = cfg.out_dir.join("runs.tsv");
    let mut runs = if runs_path.exists() { metrics::read_runs(&runs_path)? } else { Vec::new() };
    runs.retain(|r| !results.iter().any(|n| (n.experiment, n.stage, n.scheme) == (r.experiment, r.stage, r.scheme)));
    runs.extend(results);
    runs.sort_by(|a, b| (a.experiment, a.stage, a.scheme, a.repeat).cmp(&(b.experiment, b.stage, b.scheme, b.repeat)));
    metrics::write_runs(&runs_path, &runs)
}

/// Aggregates `runs.tsv` (absent means no runs yet) into `report.tsv` and
/// `report.txt`; returns the rendered tables.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<String> {
    let runs_path = cfg.out_dir.join("runs.tsv");
    let runs = if runs_path.exists() { metrics::read_runs(&runs_path)? } else { Vec::new() };
    let report = metrics::make_report(&runs, cfg.ci)?;
    let text = metrics::render_tables(&report);
    metrics::write_report_tsv(&cfg.out_dir.join("report.tsv"), &report)?;
    write_file(&cfg.out_dir.join("report.txt"), &text)?;
    Ok(text)
}
