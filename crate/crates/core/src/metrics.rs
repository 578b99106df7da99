//! Balanced accuracy, ROC AUC, confidence intervals over repeats and the
//! result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::experiment::Experiment;
use crate::psg::SleepStage;
use crate::split::Scheme;
use crate::{tsv, Error, Result};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("label {0} is not 0 or 1")]
    NonBinary(u8),
    #[error("non-finite score")]
    NonFinite,
    #[error("confidence interval needs at least 2 values, got {0}")]
    TooFewRepeats(usize),
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricError::NonBinary(bad));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// `(TPR + TNR) / 2`, predicting positive when `score >= threshold`.
pub fn balanced_accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64, MetricError> {
    let (pos, neg) = check(scores, labels)?;
    let (mut tp, mut tn) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            _ => {}
        }
    }
    Ok((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

/// Area under the ROC curve via the Mann-Whitney statistic; tied
/// positive/negative pairs count one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the pair count, kept integral so ties stay exact.
    let mut twice_wins: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let tie = &order[i..j];
        let p = tie.iter().filter(|&&k| labels[k] == 1).count() as u64;
        let n = tie.len() as u64 - p;
        twice_wins += 2 * p * negatives_below + p * n;
        negatives_below += n;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CiMethod {
    #[default]
    StudentT,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ci {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Two-sided 95 % interval of the mean, clamped to `[0, 1]`.
pub fn ci95(values: &[f64], method: CiMethod) -> Result<Ci, MetricError> {
    let r = values.len();
    if r < 2 {
        return Err(MetricError::TooFewRepeats(r));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n = r as f64;
    // Shifted by the first value so identical inputs give exactly that value.
    let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let q = match method {
        CiMethod::StudentT => StudentsT::new(0.0, 1.0, n - 1.0).expect("df >= 1").inverse_cdf(0.975),
        CiMethod::Normal => Normal::standard().inverse_cdf(0.975),
    };
    let half = q * (var / n).sqrt();
    Ok(Ci {
        mean,
        lo: (mean - half).clamp(0.0, 1.0).min(mean),
        hi: (mean + half).clamp(0.0, 1.0).max(mean),
    })
}

/// Validation metrics of one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub experiment: Experiment,
    pub stage: SleepStage,
    pub scheme: Scheme,
    pub repeat: usize,
    /// Contributing subjects in (Train, Test, Validation).
    pub subjects: [usize; 3],
    pub ba: f64,
    pub auc: f64,
}

pub const RUN_COLUMNS: [&str; 9] = ["experiment", "stage", "scheme", "repeat", "n_train", "n_test", "n_validation", "ba", "auc"];

pub fn write_runs(path: &Path, runs: &[RunResult]) -> Result<()> {
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.experiment.to_string(),
                r.stage.to_string(),
                r.scheme.to_string(),
                r.repeat.to_string(),
                r.subjects[0].to_string(),
                r.subjects[1].to_string(),
                r.subjects[2].to_string(),
                r.ba.to_string(),
                r.auc.to_string(),
            ]
        })
        .collect();
    tsv::write(path, &RUN_COLUMNS, &rows)
}

pub fn read_runs(path: &Path) -> Result<Vec<RunResult>> {
    let table = tsv::read(path, &RUN_COLUMNS)?;
    let bad = |line: usize, msg: String| Error::Format {
        path: path.into(),
        line,
        msg,
    };
    table
        .rows
        .into_iter()
        .map(|(line, f)| {
            Ok(RunResult {
                experiment: f[0].parse().map_err(|e| bad(line, e))?,
                stage: f[1].parse().map_err(|e| bad(line, e))?,
                scheme: f[2].parse().map_err(|e| bad(line, e))?,
                repeat: tsv::field(path, line, "repeat", &f[3])?,
                subjects: [
                    tsv::field(path, line, "n_train", &f[4])?,
                    tsv::field(path, line, "n_test", &f[5])?,
                    tsv::field(path, line, "n_validation", &f[6])?,
                ],
                ba: tsv::field(path, line, "ba", &f[7])?,
                auc: tsv::field(path, line, "auc", &f[8])?,
            })
        })
        .collect()
}

/// A point value, with an interval when it aggregates repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub ci: Option<(f64, f64)>,
}

impl Estimate {
    /// `0.732` or `0.732 (0.680, 0.784)`.
    pub fn render(&self) -> String {
        match self.ci {
            Some((lo, hi)) => format!("{:.3} ({:.3}, {:.3})", self.mean, lo, hi),
            None => format!("{:.3}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub experiment: Experiment,
    pub stage: SleepStage,
    pub scheme: Scheme,
    /// Subject counts of repeat 0.
    pub subjects: [usize; 3],
    pub repeats: usize,
    pub ba: Estimate,
    pub auc: Estimate,
}

/// Aggregates runs per (experiment, stage, scheme). MaxSubjects rows and
/// single-repeat rows carry bare values; EqualSubjects rows with two or
/// more repeats carry a mean and interval.
pub fn make_report(runs: &[RunResult], method: CiMethod) -> Result<Vec<EvalReport>, MetricError> {
    let mut groups: BTreeMap<(Experiment, Scheme, SleepStage), Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.experiment, r.scheme, r.stage)).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((experiment, scheme, stage), mut rs) in groups {
        rs.sort_by_key(|r| r.repeat);
        let ba: Vec<f64> = rs.iter().map(|r| r.ba).collect();
        let auc: Vec<f64> = rs.iter().map(|r| r.auc).collect();
        let estimate = |v: &[f64]| -> Result<Estimate, MetricError> {
            if scheme == Scheme::EqualSubjects && v.len() >= 2 {
                let c = ci95(v, method)?;
                Ok(Estimate {
                    mean: c.mean,
                    ci: Some((c.lo, c.hi)),
                })
            } else {
                Ok(Estimate {
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    ci: None,
                })
            }
        };
        out.push(EvalReport {
            experiment,
            stage,
            scheme,
            subjects: rs[0].subjects,
            repeats: rs.len(),
            ba: estimate(&ba)?,
            auc: estimate(&auc)?,
        });
    }
    Ok(out)
}

pub const REPORT_COLUMNS: [&str; 13] = [
    "experiment",
    "stage",
    "scheme",
    "repeats",
    "n_train",
    "n_test",
    "n_validation",
    "ba",
    "ba_lo",
    "ba_hi",
    "auc",
    "auc_lo",
    "auc_hi",
];

pub fn write_report_tsv(path: &Path, report: &[EvalReport]) -> Result<()> {
    let ci = |e: &Estimate| match e.ci {
        Some((lo, hi)) => [format!("{lo:.6}"), format!("{hi:.6}")],
        None => ["NA".to_string(), "NA".to_string()],
    };
    let rows: Vec<Vec<String>> = report
        .iter()
        .map(|r| {
            let [bl, bh] = ci(&r.ba);
            let [al, ah] = ci(&r.auc);
            vec![
                r.experiment.to_string(),
                r.stage.to_string(),
                r.scheme.to_string(),
                r.repeats.to_string(),
                r.subjects[0].to_string(),
                r.subjects[1].to_string(),
                r.subjects[2].to_string(),
                format!("{:.6}", r.ba.mean),
                bl,
                bh,
                format!("{:.6}", r.auc.mean),
                al,
                ah,
            ]
        })
        .collect();
    tsv::write(path, &REPORT_COLUMNS, &rows)
}

/// Aligned plain-text tables, one per (experiment, scheme).
pub fn render_tables(report: &[EvalReport]) -> String {
    let mut sections: BTreeMap<(Experiment, Scheme), Vec<&EvalReport>> = BTreeMap::new();
    for r in report {
        sections.entry((r.experiment, r.scheme)).or_default().push(r);
    }
    let mut out = String::new();
    for ((experiment, scheme), rows) in sections {
        let repeats = rows.iter().map(|r| r.repeats).max().unwrap_or(0);
        let _ = writeln!(out, "{experiment} / {scheme} ({repeats} repeat{})", if repeats == 1 { "" } else { "s" });
        let header = ["Sleep Type", "# Subjects", "Validation BA", "Validation AUC"];
        let body: Vec<[String; 4]> = rows
            .iter()
            .map(|r| {
                [
                    r.stage.table_name().to_string(),
                    format!("{}/{}/{}", r.subjects[0], r.subjects[1], r.subjects[2]),
                    r.ba.render(),
                    r.auc.render(),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..4)
            .map(|c| body.iter().map(|row| row[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[&str]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_string()
        };
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", line(&rule.iter().map(String::as_str).collect::<Vec<_>>()));
        for row in &body {
            let _ = writeln!(out, "{}", line(&row.iter().map(String::as_str).collect::<Vec<_>>()));
        }
        out.push('\n');
    }
    out
}
