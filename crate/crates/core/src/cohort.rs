//! Desaturated / undesaturated subject selection per sleep stage and
//! age/gender grouping.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::psg::{overlaps_by_sample, stage_blocks, AnnotationEvent, AnnotationKind, Interval, SignalTrace, SleepStage, EEG_RATE_HZ};
use crate::{tsv, Error, Result};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CohortError {
    #[error("no SpO2 samples in [{start}, {end}] s (trace covers {covered} s)")]
    NoSpo2Samples { start: f64, end: f64, covered: f64 },
    #[error("invalid thresholds: need 0 < desat ({desat}) < undesat ({undesat}) < 100")]
    Thresholds { desat: f64, undesat: f64 },
    #[error("unknown {what} {value:?}")]
    Parse { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

impl FromStr for Gender {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self, CohortError> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Ok(Gender::M),
            "F" | "FEMALE" => Ok(Gender::F),
            _ => Err(CohortError::Parse {
                what: "gender",
                value: s.into(),
            }),
        }
    }
}

/// Pediatric age bands, half-open in years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBand {
    A0to2,
    A2to5,
    A5to8,
    A8to12,
    A12to18,
}

impl AgeBand {
    pub const ALL: [AgeBand; 5] = [AgeBand::A0to2, AgeBand::A2to5, AgeBand::A5to8, AgeBand::A8to12, AgeBand::A12to18];

    /// `[lo, hi)` in years.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            AgeBand::A0to2 => (0.0, 2.0),
            AgeBand::A2to5 => (2.0, 5.0),
            AgeBand::A5to8 => (5.0, 8.0),
            AgeBand::A8to12 => (8.0, 12.0),
            AgeBand::A12to18 => (12.0, 18.0),
        }
    }

    pub fn of_age(age: f64) -> Option<AgeBand> {
        AgeBand::ALL.into_iter().find(|b| {
            let (lo, hi) = b.bounds();
            lo <= age && age < hi
        })
    }
}

impl fmt::Display for AgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.bounds();
        write!(f, "{lo}-{hi}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId {
    pub age_band: AgeBand,
    pub gender: Gender,
}

impl GroupId {
    pub fn all() -> impl Iterator<Item = GroupId> {
        AgeBand::ALL
            .into_iter()
            .flat_map(|age_band| [Gender::M, Gender::F].map(|gender| GroupId { age_band, gender }))
    }
}

/// Renders as e.g. `2-5_F`.
impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.age_band, self.gender)
    }
}

impl FromStr for GroupId {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self, CohortError> {
        let bad = || CohortError::Parse {
            what: "group",
            value: s.into(),
        };
        let (band, gender) = s.rsplit_once('_').ok_or_else(bad)?;
        let age_band = AgeBand::ALL.into_iter().find(|b| b.to_string() == band).ok_or_else(bad)?;
        Ok(GroupId {
            age_band,
            gender: gender.parse().map_err(|_| bad())?,
        })
    }
}

/// `None` for ages outside `[0, 18)`.
pub fn assign_group(age: f64, gender: Gender) -> Option<GroupId> {
    AgeBand::of_age(age).map(|age_band| GroupId { age_band, gender })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    Desaturated,
    Undesaturated,
    Excluded,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Desaturated => "Desaturated",
            Class::Undesaturated => "Undesaturated",
            Class::Excluded => "Excluded",
        })
    }
}

impl FromStr for Class {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self, CohortError> {
        match s {
            "Desaturated" => Ok(Class::Desaturated),
            "Undesaturated" => Ok(Class::Undesaturated),
            "Excluded" => Ok(Class::Excluded),
            _ => Err(CohortError::Parse {
                what: "class",
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageClass {
    pub stage: SleepStage,
    pub class: Class,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub age: f64,
    pub gender: Gender,
    pub annotations: Vec<AnnotationEvent>,
    pub spo2: SignalTrace,
}

/// Where the undesaturated group's 95 % floor is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UndesatFloor {
    /// Minimum of the whole SpO2 trace.
    #[default]
    WholeTrace,
    /// Only inside annotated desaturation events.
    EventsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortRules {
    /// A qualifying desaturation reaches strictly below this percentage.
    pub desat_spo2: f64,
    /// Undesaturated subjects never go below this percentage.
    pub undesat_spo2: f64,
    pub undesat_floor: UndesatFloor,
}

impl Default for CohortRules {
    fn default() -> Self {
        CohortRules {
            desat_spo2: 90.0,
            undesat_spo2: 95.0,
            undesat_floor: UndesatFloor::WholeTrace,
        }
    }
}

impl CohortRules {
    pub fn validate(&self) -> Result<(), CohortError> {
        let ok = 0.0 < self.desat_spo2 && self.desat_spo2 < self.undesat_spo2 && self.undesat_spo2 < 100.0;
        if ok {
            Ok(())
        } else {
            Err(CohortError::Thresholds {
                desat: self.desat_spo2,
                undesat: self.undesat_spo2,
            })
        }
    }
}

/// Lowest SpO2 sample with timestamp in the closed window
/// `[onset, onset + duration]`.
pub fn min_spo2_during(event: &AnnotationEvent, spo2: &SignalTrace) -> Result<f64, CohortError> {
    let fs = spo2.sample_rate;
    let (start, end) = (event.onset, event.end());
    let first = (start * fs).ceil().max(0.0) as usize;
    let last = (end * fs).floor();
    let none = || CohortError::NoSpo2Samples {
        start,
        end,
        covered: spo2.duration(),
    };
    if last < 0.0 || !(fs > 0.0) {
        return Err(none());
    }
    let last = (last as usize).min(spo2.samples.len().saturating_sub(1));
    if spo2.samples.is_empty() || first > last {
        return Err(none());
    }
    Ok(spo2.samples[first..=last].iter().copied().fold(f64::INFINITY, f64::min))
}

fn desaturations(annotations: &[AnnotationEvent]) -> impl Iterator<Item = &AnnotationEvent> {
    annotations.iter().filter(|e| e.kind == AnnotationKind::Desaturation)
}

fn has_apnea(annotations: &[AnnotationEvent]) -> bool {
    annotations.iter().any(|e| e.kind == AnnotationKind::Apnea)
}

/// Classifies one subject for one stage.
///
/// Both classes also require at least one scored block of `stage`, so a
/// subject never lands in a group it cannot contribute epochs to.
pub fn classify_stage(subject: &SubjectRecord, stage: SleepStage, rules: &CohortRules) -> StageClass {
    let blocks: Vec<Interval> = stage_blocks(&subject.annotations)
        .into_iter()
        .filter(|b| b.stage == stage)
        .map(|b| b.interval)
        .collect();
    let class = if blocks.is_empty() {
        Class::Excluded
    } else if has_apnea(&subject.annotations) {
        let qualifying = desaturations(&subject.annotations).any(|e| {
            let iv = Interval::of_event(e);
            blocks.iter().any(|b| overlaps_by_sample(iv, *b, EEG_RATE_HZ))
                && min_spo2_during(e, &subject.spo2).is_ok_and(|m| m < rules.desat_spo2)
        });
        if qualifying {
            Class::Desaturated
        } else {
            Class::Excluded
        }
    } else {
        let events_clear = desaturations(&subject.annotations)
            .all(|e| min_spo2_during(e, &subject.spo2).map_or(true, |m| m >= rules.undesat_spo2));
        let trace_clear = match rules.undesat_floor {
            UndesatFloor::EventsOnly => true,
            UndesatFloor::WholeTrace => subject.spo2.samples.iter().all(|&v| v >= rules.undesat_spo2),
        };
        if events_clear && trace_clear {
            Class::Undesaturated
        } else {
            Class::Excluded
        }
    };
    StageClass { stage, class }
}

/// One row of the cohort table. `group` is `None` for out-of-range ages,
/// whose class is always [`Class::Excluded`].
#[derive(Debug, Clone, PartialEq)]
pub struct CohortEntry {
    pub subject_id: String,
    pub age: f64,
    pub gender: Gender,
    pub group: Option<GroupId>,
    pub stage: SleepStage,
    pub class: Class,
}

/// Desaturated and undesaturated subject ids of one group.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupMembers {
    pub desaturated: Vec<String>,
    pub undesaturated: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    pub entries: Vec<CohortEntry>,
}

pub const COHORT_COLUMNS: [&str; 6] = ["subject_id", "age", "gender", "group", "stage", "class"];

impl Cohort {
    /// Classifies every subject for every stage in `stages`.
    pub fn build(subjects: &[SubjectRecord], stages: &[SleepStage], rules: &CohortRules) -> Cohort {
        let mut entries = Vec::with_capacity(subjects.len() * stages.len());
        for s in subjects {
            let group = assign_group(s.age, s.gender);
            for &stage in stages {
                let class = match group {
                    Some(_) => classify_stage(s, stage, rules).class,
                    None => Class::Excluded,
                };
                entries.push(CohortEntry {
                    subject_id: s.subject_id.clone(),
                    age: s.age,
                    gender: s.gender,
                    group,
                    stage,
                    class,
                });
            }
        }
        Cohort { entries }
    }

    pub fn class_of(&self, subject_id: &str, stage: SleepStage) -> Option<Class> {
        self.entries
            .iter()
            .find(|e| e.stage == stage && e.subject_id == subject_id)
            .map(|e| e.class)
    }

    /// Members per group for `stage`, ids in table order.
    pub fn groups(&self, stage: SleepStage) -> BTreeMap<GroupId, GroupMembers> {
        let mut out: BTreeMap<GroupId, GroupMembers> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.stage == stage) {
            let Some(g) = e.group else { continue };
            let m = out.entry(g).or_default();
            match e.class {
                Class::Desaturated => m.desaturated.push(e.subject_id.clone()),
                Class::Undesaturated => m.undesaturated.push(e.subject_id.clone()),
                Class::Excluded => {}
            }
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| {
                vec![
                    e.subject_id.clone(),
                    e.age.to_string(),
                    e.gender.to_string(),
                    e.group.map_or_else(|| "NA".to_string(), |g| g.to_string()),
                    e.stage.to_string(),
                    e.class.to_string(),
                ]
            })
            .collect();
        tsv::write(path, &COHORT_COLUMNS, &rows)
    }

    pub fn read_tsv(path: &Path) -> Result<Cohort> {
        let table = tsv::read(path, &COHORT_COLUMNS)?;
        let bad = |line: usize, msg: String| Error::Format {
            path: path.into(),
            line,
            msg,
        };
        let mut entries = Vec::with_capacity(table.rows.len());
        for (line, f) in table.rows {
            let group = match f[3].as_str() {
                "NA" => None,
                g => Some(g.parse::<GroupId>().map_err(|e| bad(line, e.to_string()))?),
            };
            entries.push(CohortEntry {
                subject_id: f[0].clone(),
                age: tsv::field(path, line, "age", &f[1])?,
                gender: f[2].parse().map_err(|e: CohortError| bad(line, e.to_string()))?,
                group,
                stage: f[4].parse().map_err(|e: String| bad(line, e))?,
                class: f[5].parse().map_err(|e: CohortError| bad(line, e.to_string()))?,
            });
        }
        Ok(Cohort { entries })
    }
}

pub const DEMOGRAPHICS_COLUMNS: [&str; 3] = ["subject_id", "age", "gender"];

/// One row of a data directory's `demographics.tsv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Demographics {
    pub subject_id: String,
    pub age: f64,
    pub gender: Gender,
}

pub fn write_demographics(path: &Path, rows: &[Demographics]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|d| vec![d.subject_id.clone(), d.age.to_string(), d.gender.to_string()])
        .collect();
    tsv::write(path, &DEMOGRAPHICS_COLUMNS, &rows)
}

pub fn read_demographics(path: &Path) -> Result<Vec<Demographics>> {
    let table = tsv::read(path, &DEMOGRAPHICS_COLUMNS)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, f) in table.rows {
        out.push(Demographics {
            subject_id: f[0].clone(),
            age: tsv::field(path, line, "age", &f[1])?,
            gender: f[2].parse().map_err(|e: CohortError| Error::Format {
                path: path.into(),
                line,
                msg: e.to_string(),
            })?,
        });
    }
    Ok(out)
}
