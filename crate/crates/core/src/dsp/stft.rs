use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::DspError;

/// Framing for the short-time Fourier transform. The defaults turn a 30 s,
/// 256 Hz epoch into 129 frequency bins × 61 frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub fft_length: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_length: 256,
            hop: 128,
            fft_length: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.window_length == 0 || self.hop == 0 || self.hop > self.window_length || self.fft_length < self.window_length {
            return Err(DspError::InvalidStft(*self));
        }
        Ok(())
    }

    /// Zeros added at each end of the signal.
    pub fn boundary_pad(&self) -> usize {
        self.window_length / 2
    }

    pub fn bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    pub fn frames(&self, signal_len: usize) -> usize {
        let padded = (signal_len + 2 * self.boundary_pad()).max(self.window_length);
        1 + (padded - self.window_length) / self.hop
    }
}

/// One-sided STFT, `bins × frames`, row-major by bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }
}

/// Reusable STFT plan.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        // Periodic Hann.
        let n = cfg.window_length;
        let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let scale = 1.0 / window.iter().sum::<f64>();
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_length);
        Ok(Stft { cfg, window, scale, fft })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn transform(&self, signal: &[f64]) -> Result<Spectrum, DspError> {
        if signal.is_empty() {
            return Err(DspError::EmptySignal);
        }
        let cfg = &self.cfg;
        let pad = cfg.boundary_pad();
        let frames = cfg.frames(signal.len());
        let bins = cfg.bins();
        let mut data = vec![Complex64::default(); bins * frames];
        let mut buf = vec![Complex64::default(); cfg.fft_length];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            buf.fill(Complex64::default());
            let start = f * cfg.hop;
            for (k, w) in self.window.iter().enumerate() {
                // Position in the unpadded signal.
                let pos = (start + k).wrapping_sub(pad);
                if let Some(&x) = signal.get(pos) {
                    buf[k] = Complex64::new(x * w, 0.0);
                }
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for b in 0..bins {
                data[b * frames + f] = buf[b] * self.scale;
            }
        }
        Ok(Spectrum { bins, frames, data })
    }
}

pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<Spectrum, DspError> {
    Stft::new(*cfg)?.transform(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_shape() {
        let s = stft(&vec![0.0; 7680], &StftConfig::default()).unwrap();
        assert_eq!((s.bins, s.frames), (129, 61));
    }

    #[test]
    fn dc_input_stays_in_window_main_lobe() {
        // A periodic Hann window is 0.5 - 0.5 cos, so a constant maps to
        // bin 0 (weight 1) and bin 1 (weight 1/2) and nothing else.
        let s = stft(&vec![1.0; 7680], &StftConfig::default()).unwrap();
        for f in 1..s.frames - 1 {
            assert!((s.at(0, f).norm() - 1.0).abs() < 1e-12);
            assert!((s.at(1, f).norm() - 0.5).abs() < 1e-12);
            for b in 2..s.bins {
                assert!(s.at(b, f).norm() < 1e-12, "bin {b} frame {f}");
            }
        }
    }

    #[test]
    fn sinusoid_peak_bin() {
        let x: Vec<f64> = (0..7680).map(|i| (2.0 * PI * 64.0 * i as f64 / 256.0).sin()).collect();
        let s = stft(&x, &StftConfig::default()).unwrap();
        for f in 1..s.frames - 1 {
            let argmax = (0..s.bins).max_by(|&a, &b| s.at(a, f).norm().total_cmp(&s.at(b, f).norm())).unwrap();
            assert_eq!(argmax, 64);
            assert!((s.at(64, f).norm() - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_and_invalid() {
        assert_eq!(stft(&[], &StftConfig::default()), Err(DspError::EmptySignal));
        let bad = StftConfig { hop: 300, ..StftConfig::default() };
        assert!(stft(&[1.0], &bad).is_err());
        let bad = StftConfig { fft_length: 128, ..StftConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn short_signal_still_one_frame() {
        let s = stft(&[1.0], &StftConfig::default()).unwrap();
        assert_eq!(s.frames, 1);
    }
}
