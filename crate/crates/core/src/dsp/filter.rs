//! Butterworth bandstop design and zero-phase second-order-section filtering.
//!
//! The analog Butterworth prototype (poles on the unit circle in the left
//! half s-plane) is transformed to a bandstop with `s → B·s / (s² + ω0²)`
//! using prewarped band edges, then mapped to z with the bilinear transform.
//! A prototype of order N yields 2N poles and N biquads.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::DspError;
use crate::psg::SignalTrace;

/// One biquad, `a0` normalized to 1:
/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Transposed direct form II update.
    #[inline(always)]
    fn step(&self, x: f64, z: &mut [f64; 2]) -> f64 {
        let out = self.b0 * x + z[0];
        z[0] = self.b1 * x - self.a1 * out + z[1];
        z[1] = self.b2 * x - self.a2 * out;
        out
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    /// Roots of `z² + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    /// Transposed direct form II state for a constant unit input.
    fn steady_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b0, self.b2 - self.a2 * g]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Complex frequency response at `freq` Hz for sample rate `fs`.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Digital filter order (2 per section).
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Samples for the slowest pole's impulse response to decay below 1e-6.
    pub fn settle_len(&self) -> usize {
        let r = self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        if r <= 0.0 {
            return self.order();
        }
        ((1e-6f64).ln() / r.ln()).ceil() as usize
    }

    /// Causal filtering with per-section initial state `zi`.
    pub fn apply(&self, x: &[f64], zi: &[[f64; 2]]) -> Vec<f64> {
        // One pass over the samples with every section's state live, so
        // successive sections pipeline instead of waiting on full passes.
        // Fixed section counts keep the state in registers.
        match self.sections.len() {
            1 => cascade::<1>(&self.sections, zi, x),
            2 => cascade::<2>(&self.sections, zi, x),
            3 => cascade::<3>(&self.sections, zi, x),
            4 => cascade::<4>(&self.sections, zi, x),
            6 => cascade::<6>(&self.sections, zi, x),
            _ => {
                let mut y = x.to_vec();
                for (s, z) in self.sections.iter().zip(zi) {
                    let mut z = *z;
                    for v in y.iter_mut() {
                        *v = s.step(*v, &mut z);
                    }
                }
                y
            }
        }
    }

    /// Initial state at which a constant input `x0` produces no transient.
    pub fn steady_state(&self, x0: f64) -> Vec<[f64; 2]> {
        let mut level = x0;
        self.sections
            .iter()
            .map(|s| {
                let [a, b] = s.steady_state();
                let zi = [a * level, b * level];
                level *= s.dc_gain();
                zi
            })
            .collect()
    }
}

fn cascade<const N: usize>(sections: &[Biquad], zi: &[[f64; 2]], x: &[f64]) -> Vec<f64> {
    let sections: [Biquad; N] = sections.try_into().expect("section count");
    let mut state: [[f64; 2]; N] = zi.try_into().expect("state count");
    x.iter()
        .map(|&v| {
            let mut v = v;
            for k in 0..N {
                v = sections[k].step(v, &mut state[k]);
            }
            v
        })
        .collect()
}

/// Designs an order-`order` Butterworth bandstop with −3 dB edges at `lo`
/// and `hi` Hz.
pub fn design_bandstop(order: usize, lo: f64, hi: f64, fs: f64) -> Result<SosFilter, DspError> {
    if order == 0 || !(fs > 0.0) || !(lo > 0.0) || !(lo < hi) || !(hi < fs / 2.0) {
        return Err(DspError::InvalidBand { lo, hi, fs });
    }
    let two_fs = 2.0 * fs;
    let w_lo = two_fs * (PI * lo / fs).tan();
    let w_hi = two_fs * (PI * hi / fs).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = bw / (2.0 * p);
        let disc = (half * half - w0_sq).sqrt();
        for s in [half + disc, half - disc] {
            poles.push((two_fs + s) / (two_fs - s));
        }
    }

    // Zeros of every section: the bilinear image of ±jω0, on the unit circle.
    let zero_angle = 2.0 * (w0_sq.sqrt() / two_fs).atan();
    let (zb1, zb2) = (-2.0 * zero_angle.cos(), 1.0);

    let mut denominators: Vec<(f64, f64, f64)> = Vec::with_capacity(order);
    let mut reals: Vec<f64> = Vec::new();
    for p in &poles {
        if p.im > 1e-12 {
            denominators.push((-2.0 * p.re, p.norm_sqr(), p.norm()));
        } else if p.im.abs() <= 1e-12 {
            reals.push(p.re);
        }
    }
    reals.sort_by(f64::total_cmp);
    for pair in reals.chunks(2) {
        let (p, q) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        denominators.push((-(p + q), p * q, p.abs().max(q.abs())));
    }
    // Poles closest to the unit circle last.
    denominators.sort_by(|a, b| a.2.total_cmp(&b.2));

    let sections = denominators
        .into_iter()
        .map(|(a1, a2, _)| {
            let g = (1.0 + a1 + a2) / (1.0 + zb1 + zb2);
            Biquad {
                b0: g,
                b1: g * zb1,
                b2: g * zb2,
                a1,
                a2,
            }
        })
        .collect();
    Ok(SosFilter { sections })
}

/// Burg estimate of an AR(`order`) predictor: `x[n] ≈ -Σ a[i]·x[n-i]`,
/// `a[0] = 1`. Stops early once the signal is perfectly predictable.
fn burg(x: &[f64], order: usize) -> Vec<f64> {
    let n = x.len();
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    if n < 2 {
        return a;
    }
    let mut f = x.to_vec();
    let mut b = x.to_vec();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let mut d = 2.0 * energy - x[0] * x[0] - x[n - 1] * x[n - 1];
    let floor = 1e-12 * energy;
    for k in 0..order.min(n - 1) {
        if d <= floor {
            break;
        }
        let mut mu = 0.0;
        for i in 0..n - k - 1 {
            mu += f[i + k + 1] * b[i];
        }
        mu *= -2.0 / d;
        // |mu| >= 1 only arises from roundoff once the residual is gone, and
        // would make the predictor unstable.
        if !(mu.abs() < 1.0) {
            break;
        }
        for i in 0..=(k + 1) / 2 {
            let (lo, hi) = (a[i], a[k + 1 - i]);
            a[i] = lo + mu * hi;
            a[k + 1 - i] = hi + mu * lo;
        }
        for i in 0..n - k - 1 {
            let (fi, bi) = (f[i + k + 1], b[i]);
            f[i + k + 1] = fi + mu * bi;
            b[i] = bi + mu * fi;
        }
        d = (1.0 - mu * mu) * d - f[k + 1] * f[k + 1] - b[n - k - 2] * b[n - k - 2];
    }
    a
}

/// `len` samples continuing `x` forward, predicted by an AR model fitted to
/// its tail.
fn predict_forward(x: &[f64], len: usize) -> Vec<f64> {
    let fit = &x[x.len().saturating_sub(PREDICTION_FIT_LEN)..];
    let order = PREDICTION_ORDER.min(fit.len() / 4).max(1);
    let mean = fit.iter().sum::<f64>() / fit.len() as f64;
    let centered: Vec<f64> = fit.iter().map(|v| v - mean).collect();
    let a = burg(&centered, order);
    let mut hist = centered;
    for _ in 0..len {
        let m = hist.len();
        let next = -(1..a.len()).filter(|&i| i <= m).map(|i| a[i] * hist[m - i]).sum::<f64>();
        hist.push(next);
    }
    hist[hist.len() - len..].iter().map(|v| v + mean).collect()
}

const PREDICTION_ORDER: usize = 32;
const PREDICTION_FIT_LEN: usize = 1024;

/// Zero-phase forward-backward filtering of raw samples.
///
/// Both ends are extended over the filter's settling length by linear
/// prediction, so narrow notches see a stop-band tone continue without a
/// phase jump at the edges, and each pass starts from the steady state of
/// its first sample.
pub fn filtfilt_samples(x: &[f64], filter: &SosFilter) -> Result<Vec<f64>, DspError> {
    let n = x.len();
    let min_len = 3 * filter.order();
    if n <= min_len {
        return Err(DspError::TraceTooShort { len: n, min: min_len + 1 });
    }
    let pad = filter.settle_len().max(1);
    let reversed: Vec<f64> = x.iter().rev().copied().collect();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend(predict_forward(&reversed, pad).into_iter().rev());
    ext.extend_from_slice(x);
    ext.extend(predict_forward(x, pad));

    let forward = filter.apply(&ext, &filter.steady_state(ext[0]));
    let mut rev: Vec<f64> = forward.into_iter().rev().collect();
    rev = filter.apply(&rev, &filter.steady_state(rev[0]));
    rev.reverse();
    Ok(rev[pad..pad + n].to_vec())
}

pub fn filtfilt(trace: &SignalTrace, filter: &SosFilter) -> Result<SignalTrace, DspError> {
    Ok(SignalTrace::new(trace.label.clone(), trace.sample_rate, filtfilt_samples(&trace.samples, filter)?))
}

/// Line-noise notches applied by [`denoise`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NotchConfig {
    pub order: usize,
    /// `(lo, hi)` stop bands in Hz, applied in order.
    pub bands: Vec<(f64, f64)>,
}

impl Default for NotchConfig {
    fn default() -> Self {
        NotchConfig {
            order: 3,
            bands: vec![(59.0, 61.0), (119.0, 121.0)],
        }
    }
}

/// Removes 60 Hz and 120 Hz power-line noise with zero-phase bandstops.
pub fn denoise(trace: &SignalTrace) -> Result<SignalTrace, DspError> {
    denoise_with(trace, &NotchConfig::default())
}

/// All bands are cascaded into one filter and applied in a single
/// forward-backward pass.
pub fn denoise_with(trace: &SignalTrace, cfg: &NotchConfig) -> Result<SignalTrace, DspError> {
    let mut sections = Vec::new();
    for &(lo, hi) in &cfg.bands {
        sections.extend(design_bandstop(cfg.order, lo, hi, trace.sample_rate)?.sections);
    }
    if sections.is_empty() {
        return Ok(trace.clone());
    }
    let samples = filtfilt_samples(&trace.samples, &SosFilter { sections })?;
    Ok(SignalTrace::new(trace.label.clone(), trace.sample_rate, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn notch_zero_and_passband() {
        let f = design_bandstop(3, 59.0, 61.0, 256.0).unwrap();
        assert_eq!(f.sections.len(), 3);
        assert!(f.response(60.0, 256.0).norm() < 1e-3);
        assert!(f.response(30.0, 256.0).norm() > 0.99);
        assert!((f.response(0.0, 256.0).norm() - 1.0).abs() < 1e-12);
        assert!(f.is_stable());
    }

    #[test]
    fn minus_3db_edges() {
        let f = design_bandstop(3, 59.0, 61.0, 256.0).unwrap();
        let target = 0.5f64.sqrt();
        // Scan 1 mHz steps for the crossings around each edge.
        let crossing = |from: f64, to: f64| {
            let steps = ((to - from) / 1e-3) as usize;
            (0..steps)
                .map(|k| from + k as f64 * 1e-3)
                .find(|&fr| (f.response(fr, 256.0).norm() - target).signum() != (f.response(from, 256.0).norm() - target).signum())
                .unwrap()
        };
        assert!((crossing(57.0, 60.0) - 59.0).abs() < 0.1);
        assert!((crossing(60.0, 63.0) - 61.0).abs() < 0.1);
    }

    #[test]
    fn invalid_bands() {
        assert!(design_bandstop(3, 61.0, 59.0, 256.0).is_err());
        assert!(design_bandstop(3, 100.0, 128.0, 256.0).is_err());
        assert!(design_bandstop(3, 0.0, 10.0, 256.0).is_err());
    }

    #[test]
    fn wide_band_has_real_poles_and_stays_stable() {
        let f = design_bandstop(3, 1.0, 100.0, 256.0).unwrap();
        assert_eq!(f.sections.len(), 3);
        assert!(f.is_stable());
        assert!(f.response(40.0, 256.0).norm() < 0.1);
    }

    #[test]
    fn passband_tone_preserved_without_phase_shift() {
        let f = design_bandstop(3, 59.0, 61.0, 256.0).unwrap();
        let x = tone(10.0, 7680, 256.0);
        let y = filtfilt_samples(&x, &f).unwrap();
        assert!((rms(&y) / rms(&x) - 1.0).abs() < 0.01);
        // Least-squares fit of y = a sin + b cos around mid-signal: b ≈ 0.
        let mid = 3840..4096;
        let (mut ss, mut sc) = (0.0, 0.0);
        for i in mid {
            let ph = 2.0 * PI * 10.0 * i as f64 / 256.0;
            ss += y[i] * ph.sin();
            sc += y[i] * ph.cos();
        }
        assert!((sc / ss).abs() < 1e-3);
    }

    #[test]
    fn stopband_tone_removed() {
        let f = design_bandstop(3, 59.0, 61.0, 256.0).unwrap();
        let x = tone(60.0, 7680, 256.0);
        let y = filtfilt_samples(&x, &f).unwrap();
        assert!(rms(&y) < 0.01 * rms(&x));
        // Phase at the edges must not matter.
        let c: Vec<f64> = (0..7000).map(|i| (2.0 * PI * 60.0 * i as f64 / 256.0 + 0.7).cos()).collect();
        let yc = filtfilt_samples(&c, &f).unwrap();
        assert!(rms(&yc) < 0.01 * rms(&c));
    }

    #[test]
    fn constant_passes_unchanged() {
        let f = design_bandstop(3, 59.0, 61.0, 256.0).unwrap();
        let y = filtfilt_samples(&vec![3.25; 1000], &f).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-9 * 3.25));
    }

    #[test]
    fn short_trace_rejected() {
        let f = design_bandstop(3, 59.0, 61.0, 256.0).unwrap();
        assert!(matches!(filtfilt_samples(&[1.0; 18], &f), Err(DspError::TraceTooShort { .. })));
        assert!(filtfilt_samples(&[1.0; 19], &f).is_ok());
    }

    #[test]
    fn denoise_mixture_and_zero() {
        let n = 7680;
        let mix: Vec<f64> = tone(60.0, n, 256.0).iter().zip(tone(120.0, n, 256.0)).map(|(a, b)| a + b).collect();
        let out = denoise(&SignalTrace::new("x", 256.0, mix.clone())).unwrap();
        assert!(rms(&out.samples) < 0.02 * rms(&mix));
        let keep = denoise(&SignalTrace::new("x", 256.0, tone(10.0, n, 256.0))).unwrap();
        assert!((rms(&keep.samples) / 0.5f64.sqrt() - 1.0).abs() < 0.01);
        let zero = denoise(&SignalTrace::new("x", 256.0, vec![0.0; n])).unwrap();
        assert!(zero.samples.iter().all(|&v| v == 0.0));
    }
}
