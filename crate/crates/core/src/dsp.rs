//! Waveform conditioning and short-time power spectra.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::corpus::Waveform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    Hann,
    Hamming,
    Rectangular,
}

impl Window {
    /// Symmetric window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let denom = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / denom;
                match self {
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Hamming => "hamming",
            Window::Rectangular => "rectangular",
        })
    }
}

impl FromStr for Window {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Window::Hann),
            "hamming" => Ok(Window::Hamming),
            "rectangular" | "rect" => Ok(Window::Rectangular),
            other => Err(Error::InvalidParam(format!(
                "unknown window {other:?} (expected hann, hamming or rectangular)"
            ))),
        }
    }
}

/// Framing parameters. Defaults are 25 ms frames with a 10 ms hop at 16 kHz,
/// clips conditioned to 10 s.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameParams {
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub pre_emphasis: f64,
    pub window: Window,
    pub target_duration: f64,
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams {
            frame_len: 400,
            hop: 160,
            n_fft: 512,
            pre_emphasis: 0.97,
            window: Window::Hann,
            target_duration: 10.0,
        }
    }
}

impl FrameParams {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len || self.frame_len > self.n_fft {
            return Err(Error::InvalidParam(format!(
                "need 0 < hop ({}) <= frame_len ({}) <= n_fft ({})",
                self.hop, self.frame_len, self.n_fft
            )));
        }
        if !self.n_fft.is_power_of_two() {
            return Err(Error::InvalidParam(format!(
                "n_fft {} is not a power of two",
                self.n_fft
            )));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::InvalidParam(format!(
                "pre-emphasis {} outside [0, 1)",
                self.pre_emphasis
            )));
        }
        if !(self.target_duration > 0.0 && self.target_duration.is_finite()) {
            return Err(Error::InvalidParam("target duration must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for `n_samples` conditioned samples.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            1 + (n_samples - self.frame_len) / self.hop
        }
    }
}

/// `(n_fft/2 + 1) x T` matrix of squared DFT magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub values: Matrix,
    pub params: FrameParams,
    pub sample_rate: u32,
}

impl PowerSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.cols()
    }
}

/// Zero-pads or truncates at the end to `round(target_duration * sample_rate)`.
pub fn condition(w: &Waveform, target_duration: f64) -> Result<Waveform> {
    if !(target_duration > 0.0) {
        return Err(Error::InvalidParam("target duration must be positive".into()));
    }
    if w.is_empty() {
        return Err(Error::EmptyInput("waveform has no samples"));
    }
    let target = (target_duration * w.sample_rate as f64).round() as usize;
    let mut samples = w.samples.clone();
    samples.resize(target, 0.0);
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// First-order pre-emphasis; the first sample is scaled by `1 - alpha`.
pub fn pre_emphasize(w: &Waveform, alpha: f64) -> Result<Waveform> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParam(format!("pre-emphasis {alpha} outside [0, 1)")));
    }
    if w.is_empty() {
        return Err(Error::EmptyInput("waveform has no samples"));
    }
    let x = &w.samples;
    let mut y = Vec::with_capacity(x.len());
    y.push(x[0] * (1.0 - alpha));
    y.extend(x.windows(2).map(|p| p[1] - alpha * p[0]));
    Ok(Waveform {
        samples: y,
        sample_rate: w.sample_rate,
    })
}

/// Short-time power spectrum of an already conditioned signal.
pub fn stft_power(w: &Waveform, p: &FrameParams) -> Result<PowerSpectrogram> {
    p.validate()?;
    let n = w.len();
    if n < p.frame_len {
        return Err(Error::TooShort {
            samples: n,
            frame_len: p.frame_len,
        });
    }
    let n_frames = p.n_frames(n);
    let n_bins = p.n_bins();
    let window = p.window.coefficients(p.frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(p.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); p.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    // Filled bin-major so that rows are FFT bins and columns are frames.
    let mut values = Matrix::zeros(n_bins, n_frames);
    for t in 0..n_frames {
        let frame = &w.samples[t * p.hop..t * p.hop + p.frame_len];
        for (dst, (&s, &c)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *dst = Complex::new(s * c, 0.0);
        }
        buf[p.frame_len..].fill(Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(n_bins).enumerate() {
            values.set(k, t, c.norm_sqr());
        }
    }
    Ok(PowerSpectrogram {
        values,
        params: p.clone(),
        sample_rate: w.sample_rate,
    })
}

/// Conditioning, pre-emphasis and STFT in one call.
pub fn power_spectrogram(w: &Waveform, p: &FrameParams) -> Result<PowerSpectrogram> {
    let conditioned = condition(w, p.target_duration)?;
    let emphasized = pre_emphasize(&conditioned, p.pre_emphasis)?;
    stft_power(&emphasized, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16_000).unwrap()
    }

    /// O(n^2) DFT power of a zero-padded windowed frame.
    fn direct_dft_power(frame: &[f64], window: &[f64], n_fft: usize) -> Vec<f64> {
        (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, (&x, &c)) in frame.iter().zip(window).enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                    re += x * c * ang.cos();
                    im += x * c * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn condition_exact_pad_and_truncate() {
        let w = wave(vec![0.25; 160_000]);
        assert_eq!(condition(&w, 10.0).unwrap(), w);

        let short = condition(&wave(vec![0.5; 80_000]), 10.0).unwrap();
        assert_eq!(short.len(), 160_000);
        assert!(short.samples[80_000..].iter().all(|&s| s == 0.0));
        assert!(short.samples[..80_000].iter().all(|&s| s == 0.5));

        let long_samples: Vec<f64> = (0..200_000).map(|i| (i as f64 * 0.01).sin()).collect();
        let long = condition(&wave(long_samples.clone()), 10.0).unwrap();
        assert_eq!(long.samples[..], long_samples[..160_000]);

        assert!(matches!(condition(&wave(vec![]), 10.0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn pre_emphasis_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(pre_emphasize(&wave(x.clone()), 0.0).unwrap().samples, x);

        let c = 0.4;
        let y = pre_emphasize(&wave(vec![c; 10]), 0.97).unwrap().samples;
        for v in y {
            assert!((v - 0.03 * c).abs() < 1e-15);
        }

        let y = pre_emphasize(&wave(x.clone()), 0.97).unwrap().samples;
        let mut expected = vec![x[0] * 0.03];
        for t in 1..x.len() {
            expected.push(x[t] - 0.97 * x[t - 1]);
        }
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(pre_emphasize(&wave(x), 1.0).is_err());
    }

    #[test]
    fn bin_centered_sinusoid_concentrates() {
        let p = FrameParams {
            frame_len: 64,
            hop: 64,
            n_fft: 64,
            window: Window::Rectangular,
            ..FrameParams::default()
        };
        let k = 5;
        let x: Vec<f64> = (0..256)
            .map(|n| (2.0 * PI * k as f64 * n as f64 / 64.0).cos())
            .collect();
        let spec = stft_power(&wave(x), &p).unwrap();
        for t in 0..spec.n_frames() {
            let total: f64 = (0..p.n_bins()).map(|b| spec.values.get(b, t)).sum();
            assert!(spec.values.get(k, t) / total >= 0.99);
        }
    }

    #[test]
    fn parseval_on_one_sided_spectrum() {
        let p = FrameParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = stft_power(&wave(x.clone()), &p).unwrap();
        let win = p.window.coefficients(p.frame_len);
        let half = p.n_fft / 2;
        for t in 0..spec.n_frames() {
            let time: f64 = x[t * p.hop..t * p.hop + p.frame_len]
                .iter()
                .zip(&win)
                .map(|(s, c)| (s * c) * (s * c))
                .sum();
            let col = |k: usize| spec.values.get(k, t);
            let freq = (col(0) + col(half) + 2.0 * (1..half).map(col).sum::<f64>()) / p.n_fft as f64;
            assert!((time - freq).abs() <= 1e-10 * time, "frame {t}: {time} vs {freq}");
        }
    }

    #[test]
    fn zero_in_zero_out_and_frame_count() {
        let spec = power_spectrogram(&wave(vec![0.0; 1000]), &FrameParams::default()).unwrap();
        assert_eq!(spec.values.shape(), (257, 998));
        assert!(spec.values.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(FrameParams::default().n_frames(160_000), 998);
    }

    #[test]
    fn too_short_and_bad_params() {
        let p = FrameParams::default();
        assert!(matches!(
            stft_power(&wave(vec![0.1; 399]), &p),
            Err(Error::TooShort { samples: 399, frame_len: 400 })
        ));
        let bad = FrameParams { n_fft: 500, ..p.clone() };
        assert!(bad.validate().is_err());
        let bad = FrameParams { hop: 0, ..p.clone() };
        assert!(bad.validate().is_err());
        let bad = FrameParams { hop: 401, ..p };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn matches_direct_dft_on_small_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(frame_len, hop, n_fft, window) in &[
            (64, 32, 64, Window::Hann),
            (48, 16, 64, Window::Hamming),
            (30, 30, 32, Window::Rectangular),
            (7, 3, 8, Window::Hann),
        ] {
            let p = FrameParams {
                frame_len,
                hop,
                n_fft,
                window,
                ..FrameParams::default()
            };
            let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
            let spec = stft_power(&wave(x.clone()), &p).unwrap();
            let win = window.coefficients(frame_len);
            for t in 0..spec.n_frames() {
                let oracle = direct_dft_power(&x[t * hop..t * hop + frame_len], &win, n_fft);
                let scale = oracle.iter().cloned().fold(0.0, f64::max);
                for (k, &o) in oracle.iter().enumerate() {
                    let got = spec.values.get(k, t);
                    assert!((got - o).abs() <= 1e-9 * scale, "{got} vs {o}");
                }
            }
        }
    }
}
