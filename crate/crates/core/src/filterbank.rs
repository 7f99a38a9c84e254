//! Filter banks over FFT power spectra.
//!
//! Three layouts are supported:
//!
//! * `ofb`: triangular filters with edges equally spaced on the HTK mel scale,
//!   the conventional FBank front end.
//! * `mfb`: triangular filters with edges equally spaced in Hz, so every
//!   filter has the same bandwidth and high frequencies get the same
//!   resolution as low ones.
//! * `gfb`: 4th-order gammatone magnitude responses centred on an ERB-rate
//!   grid.
//!
//! Triangles have peak 1 (no area normalization unless requested).

use std::fmt;
use std::str::FromStr;

use crate::dsp::PowerSpectrogram;
use crate::enhance::Enhancement;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default log floor applied before `ln`.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Ofb,
    Mfb,
    Gfb,
}

impl FilterKind {
    pub fn code(self) -> u8 {
        match self {
            FilterKind::Ofb => 0,
            FilterKind::Mfb => 1,
            FilterKind::Gfb => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FilterKind::Ofb),
            1 => Some(FilterKind::Mfb),
            2 => Some(FilterKind::Gfb),
            _ => None,
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Ofb => "ofb",
            FilterKind::Mfb => "mfb",
            FilterKind::Gfb => "gfb",
        })
    }
}

impl FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ofb" => Ok(FilterKind::Ofb),
            "mfb" => Ok(FilterKind::Mfb),
            "gfb" => Ok(FilterKind::Gfb),
            other => Err(Error::InvalidParam(format!(
                "unknown feature kind {other:?} (expected ofb, mfb or gfb)"
            ))),
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Glasberg & Moore ERB-rate (number of ERBs below `f`).
pub fn hz_to_erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// Equivalent rectangular bandwidth at `f` Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

fn check_range(n_filters: usize, f_min: f64, f_max: f64) -> Result<()> {
    if n_filters == 0 {
        return Err(Error::InvalidParam("need at least one filter".into()));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max.is_finite()) {
        return Err(Error::Range(format!("need 0 <= f_min ({f_min}) < f_max ({f_max})")));
    }
    Ok(())
}

fn spaced_on(n_filters: usize, f_min: f64, f_max: f64, fwd: fn(f64) -> f64, inv: fn(f64) -> f64) -> Vec<f64> {
    let (lo, hi) = (fwd(f_min), fwd(f_max));
    let steps = (n_filters + 1) as f64;
    let mut edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| inv(lo + (hi - lo) * i as f64 / steps))
        .collect();
    edges[0] = f_min;
    edges[n_filters + 1] = f_max;
    edges
}

/// `n_filters + 2` edge frequencies equally spaced on the mel scale.
pub fn mel_edges(n_filters: usize, f_min: f64, f_max: f64) -> Result<Vec<f64>> {
    check_range(n_filters, f_min, f_max)?;
    Ok(spaced_on(n_filters, f_min, f_max, hz_to_mel, mel_to_hz))
}

/// `n_filters + 2` edge frequencies equally spaced in Hz.
pub fn uniform_edges(n_filters: usize, f_min: f64, f_max: f64) -> Result<Vec<f64>> {
    check_range(n_filters, f_min, f_max)?;
    Ok(spaced_on(n_filters, f_min, f_max, |f| f, |f| f))
}

/// `n_filters + 2` points equally spaced on the ERB-rate scale.
pub fn erb_edges(n_filters: usize, f_min: f64, f_max: f64) -> Result<Vec<f64>> {
    check_range(n_filters, f_min, f_max)?;
    Ok(spaced_on(n_filters, f_min, f_max, hz_to_erb_rate, erb_rate_to_hz))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `n_filters x (n_fft/2 + 1)`, nonnegative.
    pub weights: Matrix,
    pub kind: FilterKind,
    pub f_min: f64,
    pub f_max: f64,
    pub center_freqs: Vec<f64>,
    /// Per filter, the half-open range of bins with nonzero weight.
    support: Vec<(usize, usize)>,
}

impl FilterBank {
    fn new(weights: Matrix, kind: FilterKind, f_min: f64, f_max: f64, center_freqs: Vec<f64>) -> Self {
        let support = (0..weights.rows())
            .map(|j| {
                let row = weights.row(j);
                match row.iter().position(|&w| w != 0.0) {
                    Some(first) => {
                        let last = row.iter().rposition(|&w| w != 0.0).unwrap();
                        (first, last + 1)
                    }
                    None => (0, 0),
                }
            })
            .collect();
        FilterBank {
            weights,
            kind,
            f_min,
            f_max,
            center_freqs,
            support,
        }
    }

    pub fn n_filters(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    /// Indices of filters that have no nonzero weight.
    pub fn empty_filters(&self) -> Vec<usize> {
        self.support
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a == b)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Options for [`build_triangular_bank`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularOptions {
    pub kind: FilterKind,
    /// Scale each triangle by `2 / (right - left)` (Slaney style).
    pub area_normalize: bool,
    /// Keep filters whose support holds no FFT bin as all-zero rows instead
    /// of failing. Needed for 128 mel bands over a 512-point FFT, where the
    /// lowest bands are narrower than one bin.
    pub allow_empty: bool,
}

impl TriangularOptions {
    pub fn new(kind: FilterKind) -> Self {
        TriangularOptions {
            kind,
            area_normalize: false,
            allow_empty: false,
        }
    }
}

pub fn bin_frequencies(n_fft: usize, sample_rate: u32) -> Vec<f64> {
    (0..=n_fft / 2)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect()
}

/// Triangular weight of a filter with the given left edge, peak and right edge.
#[inline]
pub fn triangle(f: f64, left: f64, center: f64, right: f64) -> f64 {
    if f <= left || f >= right {
        0.0
    } else if f < center {
        (f - left) / (center - left)
    } else if f > center {
        (right - f) / (right - center)
    } else {
        1.0
    }
}

fn check_bank_inputs(n_fft: usize, sample_rate: u32) -> Result<()> {
    if n_fft < 2 || sample_rate == 0 {
        return Err(Error::InvalidParam(format!(
            "need n_fft >= 2 and positive sample rate, got {n_fft} / {sample_rate}"
        )));
    }
    Ok(())
}

/// Builds triangles sharing edges: filter `j` rises on `(edges[j], edges[j+1])`
/// and falls on `(edges[j+1], edges[j+2])`.
pub fn build_triangular_bank(
    edges: &[f64],
    n_fft: usize,
    sample_rate: u32,
    opts: &TriangularOptions,
) -> Result<FilterBank> {
    check_bank_inputs(n_fft, sample_rate)?;
    if edges.len() < 3 {
        return Err(Error::Construction(format!(
            "need at least 3 edges, got {}",
            edges.len()
        )));
    }
    if let Some(i) = edges.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Construction(format!(
            "edges not strictly increasing at index {} ({} -> {})",
            i + 1,
            edges[i],
            edges[i + 1]
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let last = edges[edges.len() - 1];
    if last > nyquist {
        return Err(Error::Range(format!("upper edge {last} Hz above Nyquist {nyquist} Hz")));
    }
    if edges[0] < 0.0 {
        return Err(Error::Range(format!("lower edge {} Hz is negative", edges[0])));
    }

    let freqs = bin_frequencies(n_fft, sample_rate);
    let n_filters = edges.len() - 2;
    let mut weights = Matrix::zeros(n_filters, freqs.len());
    for j in 0..n_filters {
        let (left, center, right) = (edges[j], edges[j + 1], edges[j + 2]);
        let scale = if opts.area_normalize {
            2.0 / (right - left)
        } else {
            1.0
        };
        let row = weights.row_mut(j);
        let mut any = false;
        for (w, &f) in row.iter_mut().zip(&freqs) {
            if f > left && f < right {
                any = true;
            }
            *w = triangle(f, left, center, right) * scale;
        }
        if !any && !opts.allow_empty {
            return Err(Error::DegenerateFilter { index: j, left, right });
        }
    }
    if opts.allow_empty {
        let bank = FilterBank::new(weights, opts.kind, edges[0], last, edges[1..=n_filters].to_vec());
        let empty = bank.empty_filters();
        if !empty.is_empty() {
            log::debug!("{} filter bank has {} empty filters: {:?}", opts.kind, empty.len(), empty);
        }
        return Ok(bank);
    }
    Ok(FilterBank::new(weights, opts.kind, edges[0], last, edges[1..=n_filters].to_vec()))
}

/// Squared magnitude of a 4th-order gammatone centred at `fc`, relative to
/// its peak: `(1 + ((f - fc) / b)^2)^-4` with `b = 1.019 * ERB(fc)`.
pub fn gammatone_power(f: f64, fc: f64) -> f64 {
    let b = 1.019 * erb(fc);
    let x = (f - fc) / b;
    (1.0 + x * x).powi(-4)
}

/// Gammatone bank with centres on an ERB-rate grid, each row scaled so its
/// largest sampled weight is 1.
pub fn build_gammatone_bank(
    n_filters: usize,
    f_min: f64,
    f_max: f64,
    n_fft: usize,
    sample_rate: u32,
) -> Result<FilterBank> {
    check_bank_inputs(n_fft, sample_rate)?;
    let nyquist = sample_rate as f64 / 2.0;
    if f_max > nyquist {
        return Err(Error::Range(format!("f_max {f_max} Hz above Nyquist {nyquist} Hz")));
    }
    let points = erb_edges(n_filters, f_min, f_max)?;
    let centers = points[1..=n_filters].to_vec();
    let freqs = bin_frequencies(n_fft, sample_rate);
    let mut weights = Matrix::zeros(n_filters, freqs.len());
    for (j, &fc) in centers.iter().enumerate() {
        let row = weights.row_mut(j);
        for (w, &f) in row.iter_mut().zip(&freqs) {
            *w = gammatone_power(f, fc);
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::DegenerateFilter {
                index: j,
                left: f_min,
                right: f_max,
            });
        }
        row.iter_mut().for_each(|w| *w /= peak);
    }
    Ok(FilterBank::new(weights, FilterKind::Gfb, f_min, f_max, centers))
}

/// Filter-bank layout plus the knobs the pipeline exposes.
#[derive(Debug, Clone, PartialEq)]
pub struct BankSpec {
    pub kind: FilterKind,
    pub n_filters: usize,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
    pub area_normalize: bool,
    pub allow_empty: bool,
}

impl Default for BankSpec {
    fn default() -> Self {
        BankSpec {
            kind: FilterKind::Mfb,
            n_filters: 128,
            f_min: 0.0,
            f_max: None,
            area_normalize: false,
            allow_empty: true,
        }
    }
}

impl BankSpec {
    pub fn build(&self, n_fft: usize, sample_rate: u32) -> Result<FilterBank> {
        let f_max = self.f_max.unwrap_or(sample_rate as f64 / 2.0);
        let tri = |edges: Vec<f64>| {
            let opts = TriangularOptions {
                kind: self.kind,
                area_normalize: self.area_normalize,
                allow_empty: self.allow_empty,
            };
            build_triangular_bank(&edges, n_fft, sample_rate, &opts)
        };
        match self.kind {
            FilterKind::Ofb => tri(mel_edges(self.n_filters, self.f_min, f_max)?),
            FilterKind::Mfb => tri(uniform_edges(self.n_filters, self.f_min, f_max)?),
            FilterKind::Gfb => build_gammatone_bank(self.n_filters, self.f_min, f_max, n_fft, sample_rate),
        }
    }
}

/// Log filter-bank energies, `n_filters x T`, natural log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Matrix,
    pub kind: FilterKind,
    pub enhancement: Enhancement,
}

impl LogMelSpectrogram {
    pub fn n_filters(&self) -> usize {
        self.values.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.cols()
    }
}

/// `values[j][t] = ln(max(sum_k weights[j][k] * spec[k][t], floor))`.
pub fn apply_log_fbank(spec: &PowerSpectrogram, bank: &FilterBank, floor: f64) -> Result<LogMelSpectrogram> {
    let power = &spec.values;
    if bank.n_bins() != power.rows() {
        return Err(Error::Dimension(format!(
            "filter bank has {} bins, spectrogram has {}",
            bank.n_bins(),
            power.rows()
        )));
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidParam(format!("log floor must be positive, got {floor}")));
    }
    let n_frames = power.cols();
    let mut out = Matrix::zeros(bank.n_filters(), n_frames);
    for j in 0..bank.n_filters() {
        let (lo, hi) = bank.support[j];
        let w = bank.weights.row(j);
        let acc = out.row_mut(j);
        for k in lo..hi {
            let wk = w[k];
            if wk == 0.0 {
                continue;
            }
            for (a, &p) in acc.iter_mut().zip(power.row(k)) {
                *a += wk * p;
            }
        }
        acc.iter_mut().for_each(|v| *v = v.max(floor).ln());
    }
    Ok(LogMelSpectrogram {
        values: out,
        kind: bank.kind,
        enhancement: Enhancement::None,
    })
}
