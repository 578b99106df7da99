//! The three labeled epoch datasets built from a cohort, a split and the
//! featurized epochs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{min_spo2_during, Class, Cohort};
use crate::dsp::EpochTensor;
use crate::psg::{overlaps_by_sample, AnnotationEvent, AnnotationKind, Interval, SignalTrace, SleepStage, EEG_RATE_HZ};
use crate::split::{CohortSplit, Split};
use crate::{tsv, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Experiment {
    /// Desaturation epochs of desaturating subjects vs. all epochs of
    /// non-desaturating subjects.
    CrossPatient,
    /// Desaturation vs. clean epochs, desaturating subjects only.
    WithinPatient,
    /// Clean epochs of desaturating subjects vs. all epochs of
    /// non-desaturating subjects.
    LatentMarker,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::CrossPatient, Experiment::WithinPatient, Experiment::LatentMarker];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::CrossPatient => "CrossPatient",
            Experiment::WithinPatient => "WithinPatient",
            Experiment::LatentMarker => "LatentMarker",
        }
    }

    /// Label of an epoch, or `None` when the construction leaves it out.
    pub fn label(self, class: Class, has_desat: bool) -> Option<u8> {
        match (self, class) {
            (_, Class::Excluded) => None,
            (Experiment::CrossPatient, Class::Desaturated) => has_desat.then_some(1),
            (Experiment::CrossPatient, Class::Undesaturated) => Some(0),
            (Experiment::WithinPatient, Class::Desaturated) => Some(u8::from(has_desat)),
            (Experiment::WithinPatient, Class::Undesaturated) => None,
            (Experiment::LatentMarker, Class::Desaturated) => (!has_desat).then_some(1),
            (Experiment::LatentMarker, Class::Undesaturated) => Some(0),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DatasetError {
    #[error("{experiment} {stage}: training split has no {missing} epochs")]
    SingleClassTrain {
        experiment: Experiment,
        stage: SleepStage,
        missing: &'static str,
    },
    #[error("Wake epochs are not analysed")]
    WakeStage,
}

/// How positive terms of the loss are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PosWeight {
    /// `N_total / N_pos`.
    #[default]
    TotalOverPositive,
    /// `N_neg / N_pos`.
    NegativeOverPositive,
}

impl PosWeight {
    pub fn compute(self, total: usize, positives: usize) -> f64 {
        let pos = positives as f64;
        match self {
            PosWeight::TotalOverPositive => total as f64 / pos,
            PosWeight::NegativeOverPositive => (total - positives) as f64 / pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub experiment: Experiment,
    pub stage: SleepStage,
    pub split: Split,
    pub items: Vec<EpochTensor>,
    /// Computed on the training split and shared by all three.
    pub pos_weight: f64,
}

impl LabeledDataset {
    pub fn positives(&self) -> usize {
        self.items.iter().filter(|t| t.label == 1).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|t| t.label).collect()
    }

    pub fn subject_count(&self) -> usize {
        self.items.iter().map(|t| t.subject_id.as_str()).collect::<BTreeSet<_>>().len()
    }
}

/// A featurized epoch together with its desaturation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub tensor: EpochTensor,
    pub has_desat: bool,
}

/// Train, test and validation datasets of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub validation: LabeledDataset,
    /// Split members that contributed no epochs after labeling.
    pub dropped_subjects: usize,
}

impl ExperimentData {
    pub fn get(&self, split: Split) -> &LabeledDataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Validation => &self.validation,
        }
    }

    /// Subjects contributing epochs, per split.
    pub fn subject_counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.get(s).subject_count())
    }
}

/// Whether a desaturation event reaching below `threshold` overlaps the
/// epoch by at least one 256 Hz sample.
pub fn epoch_has_desat(epoch: Interval, events: &[AnnotationEvent], spo2: &SignalTrace, threshold: f64) -> bool {
    events.iter().any(|e| {
        e.kind == AnnotationKind::Desaturation
            && overlaps_by_sample(Interval::of_event(e), epoch, EEG_RATE_HZ)
            && min_spo2_during(e, spo2).is_ok_and(|m| m < threshold)
    })
}

/// Labels every epoch of the split's stage.
pub fn build(
    experiment: Experiment,
    cohort: &Cohort,
    split: &CohortSplit,
    epochs: &[EpochRecord],
    pos_weight: PosWeight,
) -> Result<ExperimentData, DatasetError> {
    let stage = split.stage;
    if stage == SleepStage::Wake {
        return Err(DatasetError::WakeStage);
    }
    let classes: BTreeMap<&str, Class> = cohort
        .entries
        .iter()
        .filter(|e| e.stage == stage)
        .map(|e| (e.subject_id.as_str(), e.class))
        .collect();
    let mut items: BTreeMap<Split, Vec<EpochTensor>> = BTreeMap::new();
    for rec in epochs.iter().filter(|r| r.tensor.stage == stage) {
        let id = rec.tensor.subject_id.as_str();
        let (Some(sp), Some(&class)) = (split.split_of(id), classes.get(id)) else {
            continue;
        };
        if let Some(label) = experiment.label(class, rec.has_desat) {
            items.entry(sp).or_default().push(rec.tensor.with_label(label));
        }
    }
    let contributing: BTreeSet<&str> = items.values().flatten().map(|t| t.subject_id.as_str()).collect();
    let dropped_subjects = split.assignment.keys().filter(|id| !contributing.contains(id.as_str())).count();

    let train = items.remove(&Split::Train).unwrap_or_default();
    let positives = train.iter().filter(|t| t.label == 1).count();
    let missing = if positives == 0 {
        Some("positive")
    } else if positives == train.len() {
        Some("negative")
    } else {
        None
    };
    if let Some(missing) = missing {
        return Err(DatasetError::SingleClassTrain {
            experiment,
            stage,
            missing,
        });
    }
    let w = pos_weight.compute(train.len(), positives);
    let make = |split: Split, items: Vec<EpochTensor>| LabeledDataset {
        experiment,
        stage,
        split,
        items,
        pos_weight: w,
    };
    let train = make(Split::Train, train);
    let test = make(Split::Test, items.remove(&Split::Test).unwrap_or_default());
    let validation = make(Split::Validation, items.remove(&Split::Validation).unwrap_or_default());
    Ok(ExperimentData {
        train,
        test,
        validation,
        dropped_subjects,
    })
}

pub fn build_cross_patient(cohort: &Cohort, split: &CohortSplit, epochs: &[EpochRecord]) -> Result<ExperimentData, DatasetError> {
    build(Experiment::CrossPatient, cohort, split, epochs, PosWeight::default())
}

pub fn build_within_patient(cohort: &Cohort, split: &CohortSplit, epochs: &[EpochRecord]) -> Result<ExperimentData, DatasetError> {
    build(Experiment::WithinPatient, cohort, split, epochs, PosWeight::default())
}

pub fn build_latent(cohort: &Cohort, split: &CohortSplit, epochs: &[EpochRecord]) -> Result<ExperimentData, DatasetError> {
    build(Experiment::LatentMarker, cohort, split, epochs, PosWeight::default())
}

pub const MANIFEST_COLUMNS: [&str; 7] = ["experiment", "stage", "split", "subject_id", "epoch_index", "label", "tensor"];

/// Writes one manifest row per item; `tensor_ref` names where the item's
/// tensor is stored.
pub fn write_manifest(path: &Path, data: &ExperimentData, tensor_ref: impl Fn(&EpochTensor) -> String) -> Result<()> {
    let mut rows = Vec::new();
    for split in Split::ALL {
        let ds = data.get(split);
        for t in &ds.items {
            rows.push(vec![
                ds.experiment.to_string(),
                ds.stage.to_string(),
                split.to_string(),
                t.subject_id.clone(),
                t.epoch_index.to_string(),
                t.label.to_string(),
                tensor_ref(t),
            ]);
        }
    }
    tsv::write(path, &MANIFEST_COLUMNS, &rows)
}
