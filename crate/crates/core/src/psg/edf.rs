//! Classic EDF with 16-bit little-endian samples.
//!
//! Layout: a 256-byte fixed header, 256 bytes of per-signal header fields
//! (stored field-major), then `record_count` data records, each holding
//! `samples_per_record` samples of every signal in header order.

use std::collections::HashSet;

use super::{normalize_label, IngestError, Recording, RecordingHeader, SignalDef, SignalTrace};

const FIXED_HEADER: usize = 256;
const PER_SIGNAL: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdfWarnings {
    /// Digital samples outside `[digital_min, digital_max]`, clamped.
    pub clamped_samples: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a str {
        let raw = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        // Non-ASCII header bytes are tolerated in free-text fields.
        std::str::from_utf8(raw).unwrap_or("").trim()
    }

    fn take_each(&mut self, n: usize, count: usize) -> Vec<&'a str> {
        (0..count).map(|_| self.take(n)).collect()
    }
}

fn number<T: std::str::FromStr>(field: &'static str, value: &str) -> Result<T, IngestError> {
    value.trim().parse().map_err(|_| IngestError::BadField {
        field,
        value: value.to_string(),
    })
}

/// Parses a complete EDF byte stream into physical-unit traces.
pub fn parse_edf(bytes: &[u8]) -> Result<(Recording, EdfWarnings), IngestError> {
    if bytes.len() < FIXED_HEADER {
        return Err(IngestError::TruncatedHeader {
            needed: FIXED_HEADER,
            available: bytes.len(),
        });
    }
    let mut cur = Cursor { bytes, pos: 0 };
    let _version = cur.take(8);
    let subject_id = cur.take(80).to_string();
    let recording_id = cur.take(80).to_string();
    let _start_date = cur.take(8);
    let _start_time = cur.take(8);
    let header_bytes: usize = number("header_bytes", cur.take(8))?;
    let _reserved = cur.take(44);
    let records: i64 = number("record_count", cur.take(8))?;
    let record_duration: f64 = number("record_duration", cur.take(8))?;
    let ns: usize = number("signal_count", cur.take(4))?;
    if ns == 0 {
        return Err(IngestError::BadField {
            field: "signal_count",
            value: "0".into(),
        });
    }
    if !(record_duration > 0.0) || !record_duration.is_finite() {
        return Err(IngestError::BadField {
            field: "record_duration",
            value: record_duration.to_string(),
        });
    }
    let needed = FIXED_HEADER + PER_SIGNAL * ns;
    if bytes.len() < needed {
        return Err(IngestError::TruncatedHeader {
            needed,
            available: bytes.len(),
        });
    }
    if header_bytes != needed {
        return Err(IngestError::BadField {
            field: "header_bytes",
            value: header_bytes.to_string(),
        });
    }

    let labels = cur.take_each(16, ns);
    let _transducers = cur.take_each(80, ns);
    let dims = cur.take_each(8, ns);
    let phys_min = cur.take_each(8, ns);
    let phys_max = cur.take_each(8, ns);
    let dig_min = cur.take_each(8, ns);
    let dig_max = cur.take_each(8, ns);
    let _prefilter = cur.take_each(80, ns);
    let n_samples = cur.take_each(8, ns);

    let mut signals = Vec::with_capacity(ns);
    let mut seen = HashSet::new();
    for i in 0..ns {
        let label = labels[i].to_string();
        if !seen.insert(normalize_label(&label)) {
            return Err(IngestError::DuplicateLabel(label));
        }
        let digital_min: i32 = number("digital_min", dig_min[i])?;
        let digital_max: i32 = number("digital_max", dig_max[i])?;
        if digital_min == digital_max {
            return Err(IngestError::DegenerateCalibration {
                label,
                digital: digital_min,
            });
        }
        if digital_min > digital_max {
            return Err(IngestError::BadField {
                field: "digital_min",
                value: dig_min[i].to_string(),
            });
        }
        let physical_min: f64 = number("physical_min", phys_min[i])?;
        let physical_max: f64 = number("physical_max", phys_max[i])?;
        if !(physical_min < physical_max) {
            return Err(IngestError::BadPhysicalRange { label });
        }
        let samples_per_record: usize = number("samples_per_record", n_samples[i])?;
        if samples_per_record == 0 {
            return Err(IngestError::BadField {
                field: "samples_per_record",
                value: "0".into(),
            });
        }
        signals.push(SignalDef {
            label,
            sample_rate: samples_per_record as f64 / record_duration,
            physical_dimension: dims[i].to_string(),
            physical_min,
            physical_max,
            digital_min,
            digital_max,
            samples_per_record,
        });
    }

    let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let data = &bytes[needed..];
    let record_count = if records < 0 {
        // -1 marks an unknown count (recording still open); infer it.
        if records != -1 || data.len() % record_bytes != 0 {
            return Err(IngestError::InconsistentRecords {
                data_bytes: data.len(),
                records,
                record_bytes,
            });
        }
        data.len() / record_bytes
    } else {
        if data.len() != records as usize * record_bytes {
            return Err(IngestError::InconsistentRecords {
                data_bytes: data.len(),
                records,
                record_bytes,
            });
        }
        records as usize
    };

    let mut warnings = EdfWarnings::default();
    let mut traces: Vec<SignalTrace> = signals
        .iter()
        .map(|s| SignalTrace::new(s.label.clone(), s.sample_rate, Vec::with_capacity(record_count * s.samples_per_record)))
        .collect();
    for record in data.chunks_exact(record_bytes) {
        let mut offset = 0;
        for (sig, trace) in signals.iter().zip(traces.iter_mut()) {
            let raw = &record[offset..offset + sig.samples_per_record * 2];
            offset += raw.len();
            trace.samples.extend(raw.chunks_exact(2).map(|b| {
                let d = i32::from(i16::from_le_bytes([b[0], b[1]]));
                let clamped = d.clamp(sig.digital_min, sig.digital_max);
                if clamped != d {
                    warnings.clamped_samples += 1;
                }
                sig.to_physical(clamped)
            }));
        }
    }

    let header = RecordingHeader {
        subject_id,
        recording_id,
        record_count,
        record_duration,
        signals,
    };
    Ok((Recording { header, traces }, warnings))
}

fn ascii_field(out: &mut Vec<u8>, value: &str, width: usize) -> Result<(), IngestError> {
    if !value.is_ascii() || value.len() > width {
        return Err(IngestError::Encode(format!("{value:?} does not fit a {width}-byte ASCII field")));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal rendering of `x` that fits in 8 characters.
fn fit8(x: f64) -> Result<String, IngestError> {
    let plain = format!("{x}");
    if plain.len() <= 8 {
        return Ok(plain);
    }
    for decimals in (0..8).rev() {
        let s = format!("{x:.decimals$}");
        if s.len() <= 8 {
            return Ok(s);
        }
    }
    Err(IngestError::Encode(format!("{x} does not fit an 8-byte field")))
}

/// Encodes a recording. Each trace must hold exactly
/// `record_count * samples_per_record` samples of its signal.
///
/// Physical values are quantized against the header calibration as it will
/// be read back, so a round trip is exact to within one digital step.
pub fn write_edf(recording: &Recording) -> Result<Vec<u8>, IngestError> {
    let header = &recording.header;
    let ns = header.signals.len();
    if ns == 0 || ns != recording.traces.len() {
        return Err(IngestError::Encode("signal/trace count mismatch".into()));
    }
    let mut out = Vec::with_capacity(FIXED_HEADER + PER_SIGNAL * ns);
    ascii_field(&mut out, "0", 8)?;
    ascii_field(&mut out, &header.subject_id, 80)?;
    ascii_field(&mut out, &header.recording_id, 80)?;
    ascii_field(&mut out, "01.01.00", 8)?;
    ascii_field(&mut out, "00.00.00", 8)?;
    ascii_field(&mut out, &(FIXED_HEADER + PER_SIGNAL * ns).to_string(), 8)?;
    ascii_field(&mut out, "", 44)?;
    ascii_field(&mut out, &header.record_count.to_string(), 8)?;
    ascii_field(&mut out, &fit8(header.record_duration)?, 8)?;
    ascii_field(&mut out, &ns.to_string(), 4)?;

    let mut calib = Vec::with_capacity(ns);
    for s in &header.signals {
        ascii_field(&mut out, &s.label, 16)?;
    }
    for _ in &header.signals {
        ascii_field(&mut out, "", 80)?;
    }
    for s in &header.signals {
        ascii_field(&mut out, &s.physical_dimension, 8)?;
    }
    let mut pmins = Vec::with_capacity(ns);
    for s in &header.signals {
        let text = fit8(s.physical_min)?;
        pmins.push(text.parse::<f64>().unwrap_or(s.physical_min));
        ascii_field(&mut out, &text, 8)?;
    }
    for (s, pmin) in header.signals.iter().zip(&pmins) {
        let text = fit8(s.physical_max)?;
        let pmax = text.parse::<f64>().unwrap_or(s.physical_max);
        ascii_field(&mut out, &text, 8)?;
        let mut def = s.clone();
        def.physical_min = *pmin;
        def.physical_max = pmax;
        calib.push(def);
    }
    for s in &header.signals {
        ascii_field(&mut out, &s.digital_min.to_string(), 8)?;
    }
    for s in &header.signals {
        ascii_field(&mut out, &s.digital_max.to_string(), 8)?;
    }
    for _ in &header.signals {
        ascii_field(&mut out, "", 80)?;
    }
    for s in &header.signals {
        ascii_field(&mut out, &s.samples_per_record.to_string(), 8)?;
    }
    for _ in &header.signals {
        ascii_field(&mut out, "", 32)?;
    }

    for (s, t) in calib.iter().zip(&recording.traces) {
        if s.digital_min >= s.digital_max || s.digital_min < i32::from(i16::MIN) || s.digital_max > i32::from(i16::MAX) {
            return Err(IngestError::Encode(format!("signal {:?}: invalid digital range", s.label)));
        }
        if t.samples.len() != header.record_count * s.samples_per_record {
            return Err(IngestError::Encode(format!(
                "signal {:?}: {} samples, expected {}",
                s.label,
                t.samples.len(),
                header.record_count * s.samples_per_record
            )));
        }
    }

    let record_bytes: usize = calib.iter().map(|s| s.samples_per_record * 2).sum();
    out.reserve(record_bytes * header.record_count);
    for r in 0..header.record_count {
        for (s, t) in calib.iter().zip(&recording.traces) {
            let chunk = &t.samples[r * s.samples_per_record..(r + 1) * s.samples_per_record];
            for &x in chunk {
                let d = ((x - s.physical_min) / s.quantum()).round() + f64::from(s.digital_min);
                let d = d.clamp(f64::from(s.digital_min), f64::from(s.digital_max)) as i16;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_signal(records: usize, digital: i16) -> Vec<u8> {
        let def = SignalDef {
            label: "EEG".into(),
            sample_rate: 4.0,
            physical_dimension: "uV".into(),
            physical_min: -100.0,
            physical_max: 100.0,
            digital_min: -1000,
            digital_max: 1000,
            samples_per_record: 4,
        };
        let recording = Recording {
            header: RecordingHeader {
                subject_id: "X".into(),
                recording_id: String::new(),
                record_count: records,
                record_duration: 1.0,
                signals: vec![def.clone()],
            },
            traces: vec![SignalTrace::new("EEG", 4.0, vec![def.to_physical(i32::from(digital)); records * 4])],
        };
        write_edf(&recording).unwrap()
    }

    #[test]
    fn constant_mid_scale_signal() {
        let bytes = single_signal(10, 0);
        let (rec, warn) = parse_edf(&bytes).unwrap();
        assert_eq!(warn.clamped_samples, 0);
        assert_eq!(rec.header.signal_count(), 1);
        assert_eq!(rec.traces[0].samples.len(), 40);
        assert!(rec.traces[0].samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hundred_bytes_is_truncated() {
        assert_eq!(
            parse_edf(&[b' '; 100]),
            Err(IngestError::TruncatedHeader {
                needed: 256,
                available: 100
            })
        );
    }

    #[test]
    fn signal_header_truncation() {
        let bytes = single_signal(1, 0);
        assert!(matches!(parse_edf(&bytes[..300]), Err(IngestError::TruncatedHeader { needed: 512, .. })));
    }

    #[test]
    fn degenerate_calibration_rejected() {
        let mut bytes = single_signal(1, 0);
        // digital_max field of signal 0 sits after label/transducer/dim/pmin/pmax/dmin.
        let off = 256 + 16 + 80 + 8 + 8 + 8 + 8;
        bytes[off..off + 8].copy_from_slice(b"-1000   ");
        assert!(matches!(parse_edf(&bytes), Err(IngestError::DegenerateCalibration { .. })));
    }

    #[test]
    fn record_size_mismatch_rejected() {
        let mut bytes = single_signal(3, 0);
        bytes.pop();
        assert!(matches!(parse_edf(&bytes), Err(IngestError::InconsistentRecords { .. })));
    }

    #[test]
    fn out_of_range_samples_clamp_with_warning() {
        let mut bytes = single_signal(1, 0);
        let n = bytes.len();
        bytes[n - 2..].copy_from_slice(&5000i16.to_le_bytes());
        let (rec, warn) = parse_edf(&bytes).unwrap();
        assert_eq!(warn.clamped_samples, 1);
        assert_eq!(*rec.traces[0].samples.last().unwrap(), 100.0);
    }

    #[test]
    fn unknown_record_count_is_inferred() {
        let mut bytes = single_signal(5, 3);
        bytes[236..244].copy_from_slice(b"-1      ");
        let (rec, _) = parse_edf(&bytes).unwrap();
        assert_eq!(rec.header.record_count, 5);
    }

    #[test]
    fn fit8_keeps_values_short() {
        assert_eq!(fit8(-3276.8).unwrap(), "-3276.8");
        assert_eq!(fit8(256.0).unwrap(), "256");
        assert!(fit8(1.0 / 3.0).unwrap().len() <= 8);
    }
}
