//! Train / test / validation subject splits under the two age/gender
//! matching schemes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cohort::{GroupId, GroupMembers};
use crate::psg::SleepStage;
use crate::{seed, tsv, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Validation];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "Train",
            Split::Test => "Test",
            Split::Validation => "Validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    MaxSubjects,
    EqualSubjects,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::MaxSubjects => "MaxSubjects",
            Scheme::EqualSubjects => "EqualSubjects",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Scheme::MaxSubjects, Scheme::EqualSubjects]
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheme {s:?}"))
    }
}

/// Subject assignment for one (stage, scheme, repeat).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortSplit {
    pub stage: SleepStage,
    pub scheme: Scheme,
    pub repeat: usize,
    pub assignment: BTreeMap<String, Split>,
}

impl CohortSplit {
    pub fn split_of(&self, subject_id: &str) -> Option<Split> {
        self.assignment.get(subject_id).copied()
    }

    pub fn subjects(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment.iter().filter(move |(_, s)| **s == split).map(|(id, _)| id.as_str())
    }

    /// Subject counts for (Train, Test, Validation).
    pub fn counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.subjects(s).count())
    }
}

/// Seed for one (stage, scheme, repeat, group, class) shuffle.
fn shuffled(ids: &[String], base: u64, stage: SleepStage, scheme: Scheme, repeat: usize, group: GroupId, class: &str) -> Vec<String> {
    let mut v = ids.to_vec();
    v.sort();
    let mut rng = seed::rng(
        base,
        &[stage.as_str(), scheme.as_str(), &repeat.to_string(), &group.to_string(), class],
    );
    v.shuffle(&mut rng);
    v
}

/// Round-robin Train → Test → Validation, so Train gets remainders first.
fn deal(ids: Vec<String>, into: &mut BTreeMap<String, Split>) {
    for (i, id) in ids.into_iter().enumerate() {
        into.insert(id, Split::ALL[i % 3]);
    }
}

/// Uses every classified subject.
pub fn max_subjects_split(groups: &BTreeMap<GroupId, GroupMembers>, stage: SleepStage, seed: u64) -> CohortSplit {
    let scheme = Scheme::MaxSubjects;
    let mut assignment = BTreeMap::new();
    for (&g, m) in groups {
        deal(shuffled(&m.desaturated, seed, stage, scheme, 0, g, "desat"), &mut assignment);
        deal(shuffled(&m.undesaturated, seed, stage, scheme, 0, g, "undesat"), &mut assignment);
    }
    CohortSplit {
        stage,
        scheme,
        repeat: 0,
        assignment,
    }
}

/// Per group, `n = min(#desat, #undesat)` subjects of each class, dealt in
/// step so every split holds equal class counts.
pub fn equal_subjects_split(
    groups: &BTreeMap<GroupId, GroupMembers>,
    stage: SleepStage,
    seed: u64,
    repeat: usize,
) -> CohortSplit {
    let scheme = Scheme::EqualSubjects;
    let mut assignment = BTreeMap::new();
    for (&g, m) in groups {
        let n = m.desaturated.len().min(m.undesaturated.len());
        let mut d = shuffled(&m.desaturated, seed, stage, scheme, repeat, g, "desat");
        let mut u = shuffled(&m.undesaturated, seed, stage, scheme, repeat, g, "undesat");
        d.truncate(n);
        u.truncate(n);
        deal(d, &mut assignment);
        deal(u, &mut assignment);
    }
    CohortSplit {
        stage,
        scheme,
        repeat,
        assignment,
    }
}

/// All splits for one stage: a single MaxSubjects split, or `repeats`
/// EqualSubjects splits.
pub fn plan(groups: &BTreeMap<GroupId, GroupMembers>, stage: SleepStage, scheme: Scheme, repeats: usize, seed: u64) -> Vec<CohortSplit> {
    match scheme {
        Scheme::MaxSubjects => vec![max_subjects_split(groups, stage, seed)],
        Scheme::EqualSubjects => (0..repeats).map(|r| equal_subjects_split(groups, stage, seed, r)).collect(),
    }
}

pub const SPLIT_COLUMNS: [&str; 5] = ["stage", "scheme", "repeat", "subject_id", "split"];

pub fn write_splits(path: &Path, splits: &[CohortSplit]) -> Result<()> {
    let mut rows = Vec::new();
    for s in splits {
        for (id, split) in &s.assignment {
            rows.push(vec![
                s.stage.to_string(),
                s.scheme.to_string(),
                s.repeat.to_string(),
                id.clone(),
                split.to_string(),
            ]);
        }
    }
    tsv::write(path, &SPLIT_COLUMNS, &rows)
}

/// Reads splits back, ordered by (stage, scheme, repeat).
pub fn read_splits(path: &Path) -> Result<Vec<CohortSplit>> {
    let table = tsv::read(path, &SPLIT_COLUMNS)?;
    let bad = |line: usize, msg: String| Error::Format {
        path: path.into(),
        line,
        msg,
    };
    let mut by_key: BTreeMap<(SleepStage, Scheme, usize), BTreeMap<String, Split>> = BTreeMap::new();
    for (line, f) in table.rows {
        let stage: SleepStage = f[0].parse().map_err(|e| bad(line, e))?;
        let scheme: Scheme = f[1].parse().map_err(|e| bad(line, e))?;
        let repeat: usize = tsv::field(path, line, "repeat", &f[2])?;
        let split: Split = f[4].parse().map_err(|e| bad(line, e))?;
        if by_key.entry((stage, scheme, repeat)).or_default().insert(f[3].clone(), split).is_some() {
            return Err(bad(line, format!("subject {} assigned twice", f[3])));
        }
    }
    Ok(by_key
        .into_iter()
        .map(|((stage, scheme, repeat), assignment)| CohortSplit {
            stage,
            scheme,
            repeat,
            assignment,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{AgeBand, Gender};

    fn members(d: usize, u: usize, tag: &str) -> GroupMembers {
        GroupMembers {
            desaturated: (0..d).map(|i| format!("{tag}d{i:03}")).collect(),
            undesaturated: (0..u).map(|i| format!("{tag}u{i:03}")).collect(),
        }
    }

    fn one_group(d: usize, u: usize) -> BTreeMap<GroupId, GroupMembers> {
        let g = GroupId {
            age_band: AgeBand::A5to8,
            gender: Gender::M,
        };
        BTreeMap::from([(g, members(d, u, ""))])
    }

    fn count(s: &CohortSplit, prefix: &str) -> [usize; 3] {
        Split::ALL.map(|sp| s.subjects(sp).filter(|id| id.starts_with(prefix)).count())
    }

    #[test]
    fn max_subjects_deals_evenly() {
        let s = max_subjects_split(&one_group(75, 6), SleepStage::N2, 1);
        assert_eq!(count(&s, "d"), [25, 25, 25]);
        assert_eq!(count(&s, "u"), [2, 2, 2]);
        let s = max_subjects_split(&one_group(7, 0), SleepStage::N2, 1);
        assert_eq!(count(&s, "d"), [3, 2, 2]);
        assert_eq!(s, max_subjects_split(&one_group(7, 0), SleepStage::N2, 1));
    }

    #[test]
    fn equal_subjects_matches_counts() {
        let s = equal_subjects_split(&one_group(75, 6), SleepStage::N2, 1, 0);
        assert_eq!(count(&s, "d"), [2, 2, 2]);
        assert_eq!(count(&s, "u"), [2, 2, 2]);
        let s = equal_subjects_split(&one_group(69, 2), SleepStage::N2, 1, 0);
        assert_eq!(count(&s, "d"), [1, 1, 0]);
        assert_eq!(count(&s, "u"), [1, 1, 0]);
    }

    #[test]
    fn repeats_differ() {
        let splits = plan(&one_group(75, 6), SleepStage::N2, Scheme::EqualSubjects, 11, 3);
        assert_eq!(splits.len(), 11);
        for i in 0..11 {
            for j in i + 1..11 {
                assert_ne!(splits[i].assignment, splits[j].assignment);
            }
        }
    }

    #[test]
    fn tsv_round_trip() {
        let groups = one_group(10, 7);
        let mut splits = plan(&groups, SleepStage::N1, Scheme::EqualSubjects, 3, 9);
        splits.extend(plan(&groups, SleepStage::Rem, Scheme::MaxSubjects, 1, 9));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splits.tsv");
        write_splits(&path, &splits).unwrap();
        let mut back = read_splits(&path).unwrap();
        back.sort_by_key(|s| (s.stage, s.scheme, s.repeat));
        splits.sort_by_key(|s| (s.stage, s.scheme, s.repeat));
        assert_eq!(back, splits);
    }
}
