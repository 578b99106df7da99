//! Time intervals, sample-grid overlap and 30 s stage tiling.

use super::{AnnotationEvent, AnnotationKind, SleepStage};

/// Length of one scored epoch.
pub const EPOCH_SECONDS: f64 = 30.0;

/// Half-open interval `[start, end)` in seconds from recording start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn of_event(event: &AnnotationEvent) -> Self {
        Interval::new(event.onset, event.end())
    }
}

/// Whether sample `index` of a grid at rate `fs` lies in `iv`.
pub fn sample_in(index: u64, fs: f64, iv: Interval) -> bool {
    let t = index as f64 / fs;
    iv.start <= t && t < iv.end
}

/// Whether both intervals contain at least one common sample instant of a
/// grid at rate `fs` starting at t = 0.
pub fn overlaps_by_sample(a: Interval, b: Interval, fs: f64) -> bool {
    let lo = a.start.max(b.start).max(0.0);
    let hi = a.end.min(b.end);
    if !(lo < hi) {
        return false;
    }
    // First grid index with t >= lo; the floor guess can be off by one
    // either way in floating point.
    let mut i = ((lo * fs).floor() as u64).saturating_sub(1);
    while (i as f64 / fs) < lo {
        i += 1;
    }
    sample_in(i, fs, a) && sample_in(i, fs, b)
}

/// One 30 s scored block. `index` is its position in [`stage_blocks`] order
/// and identifies the epoch throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageBlock {
    pub index: usize,
    pub stage: SleepStage,
    pub interval: Interval,
}

/// Tiles every stage annotation into whole 30 s blocks from its onset.
/// A trailing partial block (< 30 s) is dropped. Blocks are ordered by onset.
pub fn stage_blocks(events: &[AnnotationEvent]) -> Vec<StageBlock> {
    let mut stages: Vec<(f64, f64, SleepStage)> = events
        .iter()
        .filter_map(|e| match e.kind {
            AnnotationKind::SleepStage(s) => Some((e.onset, e.duration, s)),
            _ => None,
        })
        .collect();
    stages.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut blocks = Vec::new();
    for (onset, duration, stage) in stages {
        // Tolerate durations like 29.999999 from text round trips.
        let whole = ((duration + 1e-6) / EPOCH_SECONDS).floor() as usize;
        for k in 0..whole {
            let start = onset + k as f64 * EPOCH_SECONDS;
            blocks.push(StageBlock {
                index: blocks.len(),
                stage,
                interval: Interval::new(start, start + EPOCH_SECONDS),
            });
        }
    }
    blocks
}
