//! Dual-domain 1-NN detectors with per-domain score normalization.
//!
//! Each machine type gets one reference set per domain. A test clip's raw
//! score against a domain is the cosine distance to its nearest reference.
//! Raw scores are z-normalized per domain detector and the final score is
//! the smaller of the two normalized scores.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::embed::{Embedding, EmbeddingSet};
use crate::error::{Error, Result};

/// Standard deviations below this are treated as 1 (pure mean-centering).
pub const SIGMA_FLOOR: f64 = 1e-12;

/// `1 - a.b / (|a| |b|)`, clamped to `[0, 2]`. A zero vector against a
/// nonzero one is at distance 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na > 0.0, nb > 0.0) {
        (false, false) => Err(Error::UndefinedDistance),
        (true, true) => Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)),
        _ => Ok(1.0),
    }
}

/// Distance from `e` to its nearest neighbour in `refs` (k = 1).
pub fn knn_raw_score(refs: &EmbeddingSet, e: &Embedding) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::EmptyInput("reference set is empty"));
    }
    if refs.dim() != e.dim() {
        return Err(Error::Dimension(format!(
            "reference dimension {} vs test dimension {}",
            refs.dim(),
            e.dim()
        )));
    }
    let mut best = f64::INFINITY;
    for r in refs.iter() {
        best = best.min(cosine_distance(&e.vector, &r.vector)?);
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct DetectorPair {
    pub machine_type: String,
    pub source_refs: EmbeddingSet,
    pub target_refs: EmbeddingSet,
}

impl DetectorPair {
    pub fn new(machine_type: impl Into<String>, source_refs: EmbeddingSet, target_refs: EmbeddingSet) -> Result<Self> {
        let machine_type = machine_type.into();
        if source_refs.is_empty() || target_refs.is_empty() {
            return Err(Error::EmptyInput("detector needs references in both domains"));
        }
        if source_refs.dim() != target_refs.dim() {
            return Err(Error::Dimension(format!(
                "{machine_type}: source dimension {} vs target dimension {}",
                source_refs.dim(),
                target_refs.dim()
            )));
        }
        Ok(DetectorPair {
            machine_type,
            source_refs,
            target_refs,
        })
    }

    pub fn dim(&self) -> usize {
        self.source_refs.dim()
    }
}

/// Population over which the normalization statistics are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatsPopulation {
    /// Raw scores of the batch being scored.
    Batch,
    /// Leave-one-out nearest-neighbour distances among the references.
    LeaveOneOut,
}

impl fmt::Display for StatsPopulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatsPopulation::Batch => "batch",
            StatsPopulation::LeaveOneOut => "loo",
        })
    }
}

impl FromStr for StatsPopulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(StatsPopulation::Batch),
            "loo" => Ok(StatsPopulation::LeaveOneOut),
            other => Err(Error::InvalidParam(format!(
                "unknown statistics population {other:?} (expected batch or loo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendParams {
    /// When false, the final score is the minimum of the raw scores.
    pub normalize: bool,
    pub stats: StatsPopulation,
}

impl Default for BackendParams {
    fn default() -> Self {
        BackendParams {
            normalize: true,
            stats: StatsPopulation::Batch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainStats {
    pub mu_s: f64,
    pub sigma_s: f64,
    pub mu_t: f64,
    pub sigma_t: f64,
}

impl DomainStats {
    pub const IDENTITY: DomainStats = DomainStats {
        mu_s: 0.0,
        sigma_s: 1.0,
        mu_t: 0.0,
        sigma_t: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScore {
    pub clip_id: String,
    pub raw_source: f64,
    pub raw_target: f64,
    pub norm_source: f64,
    pub norm_target: f64,
    pub final_score: f64,
}

/// Population mean and standard deviation. Values are summed in sorted order
/// so the result does not depend on input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = sorted.iter().map(|&v| (v - mean) * (v - mean)).collect();
    sq.sort_by(f64::total_cmp);
    (mean, (sq.iter().sum::<f64>() / n).sqrt())
}

/// `(raw - mu) / sigma`, with `sigma < SIGMA_FLOOR` replaced by 1.
pub fn z_normalize(raw: f64, mu: f64, sigma: f64) -> f64 {
    let sigma = if sigma < SIGMA_FLOOR { 1.0 } else { sigma };
    (raw - mu) / sigma
}

fn leave_one_out_stats(refs: &EmbeddingSet) -> Result<(f64, f64)> {
    if refs.len() < 2 {
        return Err(Error::InvalidParam(
            "leave-one-out statistics need at least two references per domain".into(),
        ));
    }
    let entries = refs.entries();
    let mut dists = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, r) in entries.iter().enumerate() {
            if i != j {
                best = best.min(cosine_distance(&e.vector, &r.vector)?);
            }
        }
        dists.push(best);
    }
    Ok(mean_std(&dists))
}

/// Reference-side statistics, fixed at fit time.
pub fn reference_stats(pair: &DetectorPair) -> Result<DomainStats> {
    let (mu_s, sigma_s) = leave_one_out_stats(&pair.source_refs)?;
    let (mu_t, sigma_t) = leave_one_out_stats(&pair.target_refs)?;
    Ok(DomainStats {
        mu_s,
        sigma_s,
        mu_t,
        sigma_t,
    })
}

pub fn score_batch(pair: &DetectorPair, tests: &EmbeddingSet) -> Result<(Vec<AnomalyScore>, DomainStats)> {
    score_batch_with(pair, tests, &BackendParams::default())
}

/// Two-phase scoring: raw distances for every clip first, then statistics,
/// then normalization and the per-clip minimum.
pub fn score_batch_with(
    pair: &DetectorPair,
    tests: &EmbeddingSet,
    params: &BackendParams,
) -> Result<(Vec<AnomalyScore>, DomainStats)> {
    if tests.is_empty() {
        return Err(Error::EmptyInput("test batch is empty"));
    }
    let mut raw = Vec::with_capacity(tests.len());
    for e in tests.iter() {
        raw.push((knn_raw_score(&pair.source_refs, e)?, knn_raw_score(&pair.target_refs, e)?));
    }

    let stats = if !params.normalize {
        DomainStats::IDENTITY
    } else {
        match params.stats {
            StatsPopulation::Batch => {
                let (mu_s, sigma_s) = mean_std(&raw.iter().map(|r| r.0).collect::<Vec<_>>());
                let (mu_t, sigma_t) = mean_std(&raw.iter().map(|r| r.1).collect::<Vec<_>>());
                DomainStats {
                    mu_s,
                    sigma_s,
                    mu_t,
                    sigma_t,
                }
            }
            StatsPopulation::LeaveOneOut => reference_stats(pair)?,
        }
    };

    let scores = tests
        .iter()
        .zip(raw)
        .map(|(e, (rs, rt))| {
            let norm_source = z_normalize(rs, stats.mu_s, stats.sigma_s);
            let norm_target = z_normalize(rt, stats.mu_t, stats.sigma_t);
            AnomalyScore {
                clip_id: e.clip_id.clone(),
                raw_source: rs,
                raw_target: rt,
                norm_source,
                norm_target,
                final_score: norm_source.min(norm_target),
            }
        })
        .collect();
    Ok((scores, stats))
}

/// Formats like C's `%.9g`.
pub fn format_sig9(v: f64) -> String {
    const P: i32 = 9;
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if exp < -4 || exp >= P {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Header-free `clip_id,final_score` lines.
pub fn scores_csv(scores: &[AnomalyScore]) -> String {
    let mut out = String::new();
    for s in scores {
        out.push_str(&s.clip_id);
        out.push(',');
        out.push_str(&format_sig9(s.final_score));
        out.push('\n');
    }
    out
}

pub fn write_scores_csv(path: &Path, scores: &[AnomalyScore]) -> Result<()> {
    crate::codec::write_file(path, scores_csv(scores).as_bytes())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let (id, score) = line.rsplit_once(',').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: expected clip_id,score", i + 1),
            })?;
            let score = score.trim().parse::<f64>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: bad score {score:?}", i + 1),
            })?;
            Ok((id.to_string(), score))
        })
        .collect()
}
