//! Synthetic machine-sound corpus in the DCASE directory layout.
//!
//! Every machine type has a seeded tonal bed (a fundamental with decaying
//! harmonics plus a few fixed high partials, slowly amplitude modulated)
//! over white noise. Target-domain clips raise the noise floor by
//! `domain_shift_db`. Anomalous test clips add one perturbation on top of an
//! otherwise normal clip.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::corpus::{write_wav, ClipMetadata, Condition, Domain, Split, WavEncoding, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyKind {
    /// Fundamental moved by 3-6 %.
    ToneShift,
    /// Short broadband bursts.
    Transient,
    /// A narrow tone at a uniformly random frequency below Nyquist.
    BandNoise,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [AnomalyKind::ToneShift, AnomalyKind::Transient, AnomalyKind::BandNoise];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::ToneShift => "tone-shift",
            AnomalyKind::Transient => "transient",
            AnomalyKind::BandNoise => "band-noise",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidParam(format!(
                    "unknown anomaly kind {s:?} (expected tone-shift, transient or band-noise)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub machines: usize,
    /// Train clips per machine; one in ten (at least one) is target domain.
    pub train_clips: usize,
    /// Test clips per machine, split evenly over domain and condition.
    pub test_clips: usize,
    pub anomaly: AnomalyKind,
    pub domain_shift_db: f64,
    pub seed: u64,
    pub duration: f64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            machines: 3,
            train_clips: 60,
            test_clips: 40,
            anomaly: AnomalyKind::Transient,
            domain_shift_db: 6.0,
            seed: 0,
            duration: 10.0,
            sample_rate: 16_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.machines == 0 {
            return Err(Error::InvalidParam("--machines must be at least 1".into()));
        }
        if self.train_clips == 0 {
            return Err(Error::InvalidParam(
                "--clips-per-machine is 0: the train split would be empty".into(),
            ));
        }
        if self.train_clips < 2 {
            return Err(Error::InvalidParam(
                "--clips-per-machine must be at least 2 so both domains have train clips".into(),
            ));
        }
        if self.test_clips < 4 || self.test_clips % 4 != 0 {
            return Err(Error::InvalidParam(format!(
                "--test-clips must be a positive multiple of 4, got {}",
                self.test_clips
            )));
        }
        if !self.domain_shift_db.is_finite() {
            return Err(Error::InvalidParam("--domain-shift must be finite".into()));
        }
        if !(self.duration > 0.0) || self.sample_rate == 0 {
            return Err(Error::InvalidParam("duration and sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn target_train_clips(&self) -> usize {
        (self.train_clips / 10).max(1)
    }
}

const MACHINE_NAMES: [&str; 8] = ["bearing", "fan", "gearbox", "pump", "slider", "ToyCar", "ToyTrain", "valve"];

pub fn machine_name(index: usize) -> String {
    MACHINE_NAMES
        .get(index)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("machine{index:02}"))
}

/// Per-machine sound recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineProfile {
    pub name: String,
    pub f0: f64,
    /// (harmonic number, amplitude)
    pub harmonics: Vec<(f64, f64)>,
    /// (frequency in Hz, amplitude)
    pub partials: Vec<(f64, f64)>,
    pub noise_sigma: f64,
    /// Speed attribute values; each maps to an amplitude-modulation rate.
    pub speeds: Vec<u32>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn machine_profile(seed: u64, index: usize, sample_rate: u32) -> MachineProfile {
    let mut rng = rng_for(seed, 1 << 40 | index as u64);
    let nyquist = sample_rate as f64 / 2.0;
    let f0 = rng.random_range(80.0..320.0);
    let n_harm = rng.random_range(6..=12);
    let harmonics = (1..=n_harm)
        .map(|k| (k as f64, 0.12 * rng.random_range(0.5..1.0) / (k as f64).powf(0.8)))
        .filter(|&(k, _)| k * f0 < 0.45 * nyquist)
        .collect();
    let partials = (0..3)
        .map(|_| (rng.random_range(0.2 * nyquist..0.7 * nyquist), rng.random_range(0.004..0.012)))
        .collect();
    let speeds = (0..2).map(|i| 20 + 6 * i + rng.random_range(0..4)).collect();
    MachineProfile {
        name: machine_name(index),
        f0,
        harmonics,
        partials,
        noise_sigma: rng.random_range(0.008..0.015),
        speeds,
    }
}

/// What to synthesize for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPlan {
    pub meta: ClipMetadata,
    pub machine: usize,
    pub stream: u64,
}

impl ClipPlan {
    pub fn anomalous(&self) -> bool {
        self.meta.condition == Condition::Anomaly
    }
}

fn plan_clip(
    profile: &MachineProfile,
    machine: usize,
    split: Split,
    domain: Domain,
    condition: Condition,
    index: usize,
) -> ClipPlan {
    let speed = profile.speeds[index % profile.speeds.len()];
    let mut meta = ClipMetadata {
        machine_type: profile.name.clone(),
        section: 0,
        split,
        domain,
        condition,
        index: format!("{index:04}"),
        attributes: vec![("spd".to_string(), format!("{speed}V"))],
        clip_id: String::new(),
    };
    meta.clip_id = meta.format_path();
    let split_bit = u64::from(split == Split::Test);
    ClipPlan {
        meta,
        machine,
        stream: (machine as u64) << 32 | split_bit << 31 | index as u64,
    }
}

/// Lists every clip of the corpus in clip-id order.
pub fn plan_corpus(cfg: &SynthConfig) -> Result<(Vec<MachineProfile>, Vec<ClipPlan>)> {
    cfg.validate()?;
    let profiles: Vec<MachineProfile> = (0..cfg.machines)
        .map(|m| machine_profile(cfg.seed, m, cfg.sample_rate))
        .collect();
    let mut plans = Vec::new();
    for (m, profile) in profiles.iter().enumerate() {
        let n_target = cfg.target_train_clips();
        for i in 0..cfg.train_clips {
            let domain = if i < cfg.train_clips - n_target { Domain::Source } else { Domain::Target };
            plans.push(plan_clip(profile, m, Split::Train, domain, Condition::Normal, i));
        }
        let quarter = cfg.test_clips / 4;
        let mut i = 0;
        for domain in [Domain::Source, Domain::Target] {
            for condition in [Condition::Normal, Condition::Anomaly] {
                for _ in 0..quarter {
                    plans.push(plan_clip(profile, m, Split::Test, domain, condition, i));
                    i += 1;
                }
            }
        }
    }
    plans.sort_by(|a, b| a.meta.clip_id.cmp(&b.meta.clip_id));
    Ok((profiles, plans))
}

/// Relative half-width of the per-clip fundamental spread.
const OPERATING_SPREAD: f64 = 0.02;

fn add_tone(out: &mut [f64], freq: f64, amp: f64, phase: f64, sr: f64) {
    let step = 2.0 * PI * freq / sr;
    for (n, v) in out.iter_mut().enumerate() {
        *v += amp * (step * n as f64 + phase).sin();
    }
}

pub fn synthesize_clip(profile: &MachineProfile, plan: &ClipPlan, cfg: &SynthConfig) -> Result<Waveform> {
    let sr = cfg.sample_rate as f64;
    let n = (cfg.duration * sr).round() as usize;
    let mut rng = rng_for(cfg.seed, plan.stream);
    let jitter = Normal::new(0.0, 0.003).expect("valid sigma");

    // Operating point: each clip runs at a slightly different speed.
    let mut f0 = profile.f0 * (1.0 + rng.random_range(-OPERATING_SPREAD..OPERATING_SPREAD) + jitter.sample(&mut rng));
    if plan.anomalous() && cfg.anomaly == AnomalyKind::ToneShift {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        f0 *= 1.0 + sign * rng.random_range(0.03..0.06);
    }

    let mut tonal = vec![0.0; n];
    for &(k, amp) in &profile.harmonics {
        let a = amp * rng.random_range(0.8..1.2);
        add_tone(&mut tonal, k * f0, a, rng.random_range(0.0..2.0 * PI), sr);
    }
    for &(f, amp) in &profile.partials {
        let a = amp * rng.random_range(0.9..1.1);
        let freq = f * (1.0 + jitter.sample(&mut rng) * 0.5);
        add_tone(&mut tonal, freq, a, rng.random_range(0.0..2.0 * PI), sr);
    }
    let speed: f64 = plan.meta.attributes[0].1.trim_end_matches('V').parse().unwrap_or(24.0);
    let am_rate = speed / 4.0;
    let am_phase = rng.random_range(0.0..2.0 * PI);
    for (i, v) in tonal.iter_mut().enumerate() {
        *v *= 1.0 + 0.2 * (2.0 * PI * am_rate * i as f64 / sr + am_phase).sin();
    }

    let gain = match plan.meta.domain {
        Domain::Source => 1.0,
        Domain::Target => 10f64.powf(cfg.domain_shift_db / 20.0),
    };
    let noise = Normal::new(0.0, profile.noise_sigma * gain)
        .map_err(|e| Error::InvalidParam(format!("noise level: {e}")))?;
    let mut samples: Vec<f64> = tonal.iter().map(|&t| t + noise.sample(&mut rng)).collect();

    if plan.anomalous() {
        match cfg.anomaly {
            AnomalyKind::ToneShift => {}
            AnomalyKind::Transient => add_bursts(&mut samples, &tonal, sr, &mut rng),
            AnomalyKind::BandNoise => add_band_tone(&mut samples, profile.noise_sigma * gain, sr, &mut rng),
        }
    }
    for v in &mut samples {
        *v = v.clamp(-1.0, 1.0);
    }
    Waveform::new(samples, cfg.sample_rate)
}

fn add_bursts(samples: &mut [f64], tonal: &[f64], sr: f64, rng: &mut ChaCha8Rng) {
    let rms = (tonal.iter().map(|v| v * v).sum::<f64>() / tonal.len() as f64).sqrt();
    let white = Normal::new(0.0, 1.0).expect("valid sigma");
    let count = rng.random_range(4..=8);
    for _ in 0..count {
        let len = (rng.random_range(0.02..0.06) * sr) as usize;
        let start = rng.random_range(0..samples.len().saturating_sub(len).max(1));
        let amp = 4.0 * rms * rng.random_range(0.8..1.2);
        let tau = 0.01 * sr;
        let end = (start + len).min(samples.len());
        for (j, v) in samples[start..end].iter_mut().enumerate() {
            *v += amp * (-(j as f64) / tau).exp() * white.sample(rng);
        }
    }
}

fn add_band_tone(samples: &mut [f64], noise_sigma: f64, sr: f64, rng: &mut ChaCha8Rng) {
    let nyquist = sr / 2.0;
    let fc = rng.random_range(0.01 * nyquist..0.99 * nyquist);
    let amp = noise_sigma * rng.random_range(0.5..1.0);
    // Slow vibrato of +-0.5 % keeps the tone narrow but not a pure line.
    let depth = 0.005 * fc;
    let rate = rng.random_range(0.2..1.0);
    let (mut phase, phase0) = (0.0, rng.random_range(0.0..2.0 * PI));
    for (n, v) in samples.iter_mut().enumerate() {
        let f = fc + depth * (2.0 * PI * rate * n as f64 / sr).sin();
        phase += 2.0 * PI * f / sr;
        *v += amp * (phase + phase0).sin();
    }
}

/// Writes the corpus under `root` as PCM16 WAV files and returns the clip
/// metadata in clip-id order. Clips are synthesized in parallel on the
/// current rayon pool; every clip has its own random stream so the bytes do
/// not depend on scheduling.
pub fn generate_corpus(root: &Path, cfg: &SynthConfig) -> Result<Vec<ClipMetadata>> {
    let (profiles, plans) = plan_corpus(cfg)?;
    for profile in &profiles {
        for split in [Split::Train, Split::Test] {
            let dir = root.join(&profile.name).join(split.as_str());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    plans.par_iter().try_for_each(|plan| {
        let wave = synthesize_clip(&profiles[plan.machine], plan, cfg)?;
        write_wav(root.join(&plan.meta.clip_id), &wave, WavEncoding::Pcm16)
    })?;
    Ok(plans.into_iter().map(|p| p.meta).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_clip_name;
    use crate::dsp::{power_spectrogram, FrameParams};

    fn short(anomaly: AnomalyKind) -> SynthConfig {
        SynthConfig {
            machines: 2,
            train_clips: 10,
            test_clips: 8,
            anomaly,
            duration: 2.0,
            ..SynthConfig::default()
        }
    }

    fn frame_energies(w: &Waveform) -> Vec<f64> {
        let p = FrameParams {
            target_duration: w.duration_secs(),
            ..FrameParams::default()
        };
        let spec = power_spectrogram(w, &p).unwrap();
        (0..spec.n_frames())
            .map(|t| (0..spec.values.rows()).map(|k| spec.values.get(k, t)).sum())
            .collect()
    }

    #[test]
    fn plan_layout_and_names_parse() {
        let cfg = short(AnomalyKind::Transient);
        let (_, plans) = plan_corpus(&cfg).unwrap();
        assert_eq!(plans.len(), 2 * (10 + 8));
        for p in &plans {
            assert_eq!(parse_clip_name(&p.meta.clip_id).unwrap(), p.meta);
        }
        let m0: Vec<_> = plans.iter().filter(|p| p.machine == 0).collect();
        let train_target = m0
            .iter()
            .filter(|p| p.meta.split == Split::Train && p.meta.domain == Domain::Target)
            .count();
        assert_eq!(train_target, 1);
        let anomalies = m0.iter().filter(|p| p.anomalous()).count();
        assert_eq!(anomalies, 4);
        let mut streams: Vec<u64> = plans.iter().map(|p| p.stream).collect();
        streams.sort();
        streams.dedup();
        assert_eq!(streams.len(), plans.len());
    }

    #[test]
    fn empty_split_is_rejected() {
        let cfg = SynthConfig {
            train_clips: 0,
            ..SynthConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("empty"), "{err}");
        assert!(SynthConfig { test_clips: 6, ..SynthConfig::default() }.validate().is_err());
    }

    #[test]
    fn same_seed_same_samples() {
        let cfg = short(AnomalyKind::BandNoise);
        let (profiles, plans) = plan_corpus(&cfg).unwrap();
        let plan = plans.iter().find(|p| p.anomalous()).unwrap();
        let a = synthesize_clip(&profiles[plan.machine], plan, &cfg).unwrap();
        let b = synthesize_clip(&profiles[plan.machine], plan, &cfg).unwrap();
        assert_eq!(a, b);
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        let (profiles2, plans2) = plan_corpus(&other).unwrap();
        let plan2 = plans2.iter().find(|p| p.meta.clip_id == plan.meta.clip_id).unwrap();
        assert_ne!(a, synthesize_clip(&profiles2[plan2.machine], plan2, &other).unwrap());
    }

    #[test]
    fn transient_bursts_dominate_frame_energy() {
        let cfg = short(AnomalyKind::Transient);
        let (profiles, plans) = plan_corpus(&cfg).unwrap();
        for m in 0..cfg.machines {
            let normal = plans.iter().find(|p| p.machine == m && p.meta.split == Split::Test && !p.anomalous()).unwrap();
            let mut e = frame_energies(&synthesize_clip(&profiles[m], normal, &cfg).unwrap());
            e.sort_by(f64::total_cmp);
            let median = e[e.len() / 2];
            for anomalous in plans.iter().filter(|p| p.machine == m && p.anomalous()) {
                let a = frame_energies(&synthesize_clip(&profiles[m], anomalous, &cfg).unwrap());
                let max = a.iter().cloned().fold(0.0, f64::max);
                assert!(max >= 2.0 * median, "{}: {max} vs median {median}", anomalous.meta.clip_id);
            }
        }
    }

    #[test]
    fn target_domain_raises_noise_floor() {
        let cfg = SynthConfig {
            domain_shift_db: 12.0,
            ..short(AnomalyKind::Transient)
        };
        let (profiles, plans) = plan_corpus(&cfg).unwrap();
        let top_band = |p: &ClipPlan| {
            let w = synthesize_clip(&profiles[0], p, &cfg).unwrap();
            let spec = power_spectrogram(&w, &FrameParams { target_duration: 2.0, ..FrameParams::default() }).unwrap();
            // 7.5-8 kHz holds only noise for every profile
            let rows = spec.values.rows();
            (rows - 16..rows)
                .flat_map(|k| spec.values.row(k).to_vec())
                .sum::<f64>()
        };
        let pick = |d: Domain| {
            plans
                .iter()
                .find(|p| p.machine == 0 && p.meta.split == Split::Train && p.meta.domain == d)
                .unwrap()
        };
        let ratio = top_band(pick(Domain::Target)) / top_band(pick(Domain::Source));
        // 12 dB is a factor of about 15.8 in power
        assert!((ratio / 15.85 - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn corpus_written_to_disk_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            machines: 1,
            train_clips: 2,
            test_clips: 4,
            duration: 0.5,
            ..SynthConfig::default()
        };
        let metas = generate_corpus(dir.path(), &cfg).unwrap();
        let clips = crate::corpus::scan_corpus(dir.path()).unwrap();
        assert_eq!(clips.iter().map(|c| c.meta.clone()).collect::<Vec<_>>(), metas);
        let w = crate::corpus::read_wav(&clips[0].path).unwrap();
        assert_eq!(w.len(), 8000);
    }
}
