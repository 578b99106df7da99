use serde::{Deserialize, Serialize};

use super::{AnnotationEvent, AnnotationKind, IngestError, SleepStage};

/// Description → kind mapping for annotation files. Matching is
/// case-insensitive on trimmed descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageLabelMap {
    pub stages: Vec<(String, SleepStage)>,
    pub desaturation: Vec<String>,
    /// Any description containing this substring is an apnea event.
    pub apnea_substring: String,
}

impl Default for StageLabelMap {
    fn default() -> Self {
        let stages = [
            ("Sleep stage N1", SleepStage::N1),
            ("Sleep stage N2", SleepStage::N2),
            ("Sleep stage N3", SleepStage::N3),
            ("Sleep stage R", SleepStage::Rem),
            ("REM", SleepStage::Rem),
            ("Sleep stage W", SleepStage::Wake),
        ];
        StageLabelMap {
            stages: stages.iter().map(|(s, st)| (s.to_string(), *st)).collect(),
            desaturation: vec!["Oxygen Desaturation".into()],
            apnea_substring: "apnea".into(),
        }
    }
}

impl StageLabelMap {
    pub fn classify(&self, description: &str) -> AnnotationKind {
        let d = description.trim().to_lowercase();
        if self.desaturation.iter().any(|l| l.to_lowercase() == d) {
            return AnnotationKind::Desaturation;
        }
        if let Some((_, stage)) = self.stages.iter().find(|(l, _)| l.to_lowercase() == d) {
            return AnnotationKind::SleepStage(*stage);
        }
        if !self.apnea_substring.is_empty() && d.contains(&self.apnea_substring.to_lowercase()) {
            return AnnotationKind::Apnea;
        }
        AnnotationKind::Other(description.trim().to_string())
    }

    /// Description written for `kind`; inverse of [`classify`](Self::classify).
    pub fn describe(&self, kind: &AnnotationKind) -> String {
        match kind {
            AnnotationKind::SleepStage(st) => self
                .stages
                .iter()
                .find(|(_, s)| s == st)
                .map(|(l, _)| l.clone())
                .unwrap_or_else(|| format!("Sleep stage {st}")),
            AnnotationKind::Desaturation => self.desaturation.first().cloned().unwrap_or_else(|| "Oxygen Desaturation".into()),
            AnnotationKind::Apnea => "Obstructive Apnea".into(),
            AnnotationKind::Other(s) => s.clone(),
        }
    }
}

/// Parses `onset<TAB>duration<TAB>description` lines. A leading
/// `onset\tduration\tdescription` header is detected and skipped.
pub fn parse_annotations(text: &str, map: &StageLabelMap) -> Result<Vec<AnnotationEvent>, IngestError> {
    let mut events = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if first {
            first = false;
            if fields[0].trim().eq_ignore_ascii_case("onset") {
                continue;
            }
        }
        if fields.len() < 3 {
            return Err(IngestError::Annotation {
                line: line_no,
                msg: "expected onset, duration and description".into(),
            });
        }
        let num = |name: &str, v: &str| -> Result<f64, IngestError> {
            let x: f64 = v.trim().parse().map_err(|_| IngestError::Annotation {
                line: line_no,
                msg: format!("non-numeric {name} {v:?}"),
            })?;
            if !x.is_finite() {
                return Err(IngestError::Annotation {
                    line: line_no,
                    msg: format!("non-finite {name}"),
                });
            }
            Ok(x)
        };
        let onset = num("onset", fields[0])?;
        let duration = num("duration", fields[1])?;
        if onset < 0.0 {
            return Err(IngestError::Annotation {
                line: line_no,
                msg: format!("negative onset {onset}"),
            });
        }
        if duration < 0.0 {
            return Err(IngestError::Annotation {
                line: line_no,
                msg: format!("negative duration {duration}"),
            });
        }
        events.push(AnnotationEvent {
            onset,
            duration,
            kind: map.classify(fields[2]),
        });
    }
    Ok(events)
}

/// Renders events in the format read by [`parse_annotations`], with header.
pub fn format_annotations(events: &[AnnotationEvent], map: &StageLabelMap) -> String {
    let mut out = String::from("onset\tduration\tdescription\n");
    for e in events {
        out.push_str(&format!("{}\t{}\t{}\n", e.onset, e.duration, map.describe(&e.kind)));
    }
    out
}
