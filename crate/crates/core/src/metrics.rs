//! AUC, partial AUC, domain-wise AUC and harmonic-mean summaries.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::Domain;
use crate::error::{Error, Result};

pub const DEFAULT_PAUC_P: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScore {
    pub clip_id: String,
    pub machine_type: String,
    pub domain: Domain,
    pub anomaly: bool,
    pub score: f64,
}

fn class_counts(scores: &[(f64, bool)]) -> Result<(u64, u64)> {
    let pos = scores.iter().filter(|s| s.1).count() as u64;
    let neg = scores.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {pos} anomalies and {neg} normals"
        )));
    }
    Ok((pos, neg))
}

fn sorted_groups(scores: &[(f64, bool)], descending: bool) -> Vec<(u64, u64)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| if descending { b.0.total_cmp(&a.0) } else { a.0.total_cmp(&b.0) });
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for (s, anomaly) in sorted {
        if last.map_or(true, |l| l.total_cmp(&s).is_ne()) {
            groups.push((0, 0));
            last = Some(s);
        }
        let g = groups.last_mut().unwrap();
        if anomaly {
            g.1 += 1;
        } else {
            g.0 += 1;
        }
    }
    groups
}

/// Mann-Whitney AUC: the fraction of (anomaly, normal) pairs where the
/// anomaly scores higher, ties counting one half. `true` marks an anomaly.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    let (pos, neg) = class_counts(scores)?;
    // twice the number of correctly ordered pairs, so ties stay integral
    let mut twice: u64 = 0;
    let mut normals_below: u64 = 0;
    for (n_norm, n_anom) in sorted_groups(scores, false) {
        twice += n_anom * (2 * normals_below + n_norm);
        normals_below += n_norm;
    }
    Ok(twice as f64 / (2 * pos * neg) as f64)
}

/// ROC as (FPR, TPR) points from the strictest threshold down, tied scores
/// forming a single step.
pub fn roc_curve(scores: &[(f64, bool)]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = class_counts(scores)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0u64, 0u64);
    for (n_norm, n_anom) in sorted_groups(scores, true) {
        fp += n_norm;
        tp += n_anom;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Area under the ROC curve for FPR in `[0, p]`, divided by `p` (no McClish
/// correction). The curve is interpolated linearly at FPR = p.
pub fn pauc(scores: &[(f64, bool)], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParam(format!("pAUC bound must be in (0, 1], got {p}")));
    }
    let roc = roc_curve(scores)?;
    let mut area = 0.0;
    for seg in roc.windows(2) {
        let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
        if x0 >= p {
            break;
        }
        if x1 <= p {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let yp = y0 + (y1 - y0) * (p - x0) / (x1 - x0);
            area += (p - x0) * (y0 + yp) / 2.0;
            break;
        }
    }
    Ok(area / p)
}

/// AUC of the normals from `domain` against the anomalies of both domains.
pub fn domain_auc(scores: &[LabeledScore], domain: Domain) -> Result<f64> {
    let subset: Vec<(f64, bool)> = scores
        .iter()
        .filter(|s| s.anomaly || s.domain == domain)
        .map(|s| (s.score, s.anomaly))
        .collect();
    auc(&subset).map_err(|e| match e {
        Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{domain} domain: {m}")),
        other => other,
    })
}

pub fn harmonic_score(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no values for the harmonic mean"));
    }
    let mut inv = 0.0;
    for &v in values {
        if !(v > 0.0) {
            return Err(Error::NonPositive(v));
        }
        inv += 1.0 / v;
    }
    Ok(values.len() as f64 / inv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineReport {
    pub machine_type: String,
    pub auc_source: f64,
    pub auc_target: f64,
    pub pauc: f64,
}

impl MachineReport {
    pub fn values(&self) -> [f64; 3] {
        [self.auc_source, self.auc_target, self.pauc]
    }
}

pub fn machine_report(machine_type: &str, scores: &[LabeledScore], p: f64) -> Result<MachineReport> {
    let all: Vec<(f64, bool)> = scores.iter().map(|s| (s.score, s.anomaly)).collect();
    let wrap = |e: Error| match e {
        Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{machine_type}: {m}")),
        other => other,
    };
    Ok(MachineReport {
        machine_type: machine_type.to_string(),
        auc_source: domain_auc(scores, Domain::Source).map_err(wrap)?,
        auc_target: domain_auc(scores, Domain::Target).map_err(wrap)?,
        pauc: pauc(&all, p).map_err(wrap)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    /// Sorted by machine type.
    pub machines: Vec<MachineReport>,
    pub dev_score: Option<f64>,
    pub eval_score: Option<f64>,
    pub all_score: f64,
}

fn pooled(reports: &[&MachineReport]) -> Result<Option<f64>> {
    if reports.is_empty() {
        return Ok(None);
    }
    let values: Vec<f64> = reports.iter().flat_map(|r| r.values()).collect();
    harmonic_score(&values).map(Some)
}

/// Per-machine reports plus harmonic means over the pooled
/// `(AUC_s, AUC_t, pAUC)` triples of the dev machines (those not in
/// `eval_machines`), the eval machines, and all machines.
pub fn summarize(scores: &[LabeledScore], eval_machines: &BTreeSet<String>, p: f64) -> Result<SummaryReport> {
    let mut by_machine: BTreeMap<&str, Vec<LabeledScore>> = BTreeMap::new();
    for s in scores {
        by_machine.entry(&s.machine_type).or_default().push(s.clone());
    }
    if by_machine.is_empty() {
        return Err(Error::EmptyInput("no scores to summarize"));
    }
    let machines = by_machine
        .iter()
        .map(|(m, s)| machine_report(m, s, p))
        .collect::<Result<Vec<_>>>()?;
    let (eval, dev): (Vec<&MachineReport>, Vec<&MachineReport>) =
        machines.iter().partition(|r| eval_machines.contains(&r.machine_type));
    let all: Vec<&MachineReport> = machines.iter().collect();
    Ok(SummaryReport {
        dev_score: pooled(&dev)?,
        eval_score: pooled(&eval)?,
        all_score: pooled(&all)?.expect("non-empty"),
        machines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_oracle(scores: &[(f64, bool)]) -> f64 {
        let mut num = 0.0;
        let (mut p, mut n) = (0.0, 0.0);
        for a in scores.iter().filter(|s| s.1) {
            p += 1.0;
            for b in scores.iter().filter(|s| !s.1) {
                if a.0 > b.0 {
                    num += 1.0;
                } else if a.0 == b.0 {
                    num += 0.5;
                }
            }
        }
        for _ in scores.iter().filter(|s| !s.1) {
            n += 1.0;
        }
        num / (p * n)
    }

    /// Explicit threshold sweep: one ROC point per distinct score.
    fn sweep_pauc(scores: &[(f64, bool)], p: f64) -> f64 {
        let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let pos = scores.iter().filter(|s| s.1).count() as f64;
        let neg = scores.len() as f64 - pos;
        let mut pts = vec![(0.0, 0.0)];
        for t in thresholds {
            let tp = scores.iter().filter(|s| s.1 && s.0 >= t).count() as f64;
            let fp = scores.iter().filter(|s| !s.1 && s.0 >= t).count() as f64;
            pts.push((fp / neg, tp / pos));
        }
        let mut area = 0.0;
        for i in 1..pts.len() {
            let (x0, y0) = pts[i - 1];
            let (x1, y1) = pts[i];
            let lo = x0.min(p);
            let hi = x1.min(p);
            if hi <= lo {
                continue;
            }
            let at = |x: f64| y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            area += (hi - lo) * (at(lo) + at(hi)) / 2.0;
        }
        area / p
    }

    #[test]
    fn auc_basics() {
        let s = [(0.9, true), (0.8, true), (0.1, false), (0.2, false)];
        assert_eq!(auc(&s).unwrap(), 1.0);
        let ties = [(0.3, true), (0.3, false), (0.3, true), (0.3, false)];
        assert_eq!(auc(&ties).unwrap(), 0.5);
        assert!(matches!(auc(&[(0.1, true)]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn pauc_basics() {
        let s = [(0.9, true), (0.8, true), (0.1, false), (0.2, false)];
        for p in [0.05, 0.1, 0.5, 1.0] {
            assert_eq!(pauc(&s, p).unwrap(), 1.0);
        }
        assert!(pauc(&s, 0.0).is_err());
        assert!(pauc(&s, 1.5).is_err());
        // one normal ranked first of five: FPR 0.2 before any TP
        let s = [(5.0, false), (4.0, true), (3.0, false), (2.0, false), (1.0, false), (0.5, false), (4.5, true)];
        assert_eq!(pauc(&s, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn domain_auc_uses_all_anomalies() {
        let mk = |d, a, s| LabeledScore {
            clip_id: String::new(),
            machine_type: "m".into(),
            domain: d,
            anomaly: a,
            score: s,
        };
        let v = vec![
            mk(Domain::Source, false, 0.1),
            mk(Domain::Source, false, 0.2),
            mk(Domain::Target, false, 0.9),
            mk(Domain::Target, true, 0.5),
        ];
        assert_eq!(domain_auc(&v, Domain::Source).unwrap(), 1.0);
        assert_eq!(domain_auc(&v, Domain::Target).unwrap(), 0.0);
        let src_only: Vec<LabeledScore> = v.iter().filter(|s| s.domain == Domain::Source).cloned().collect();
        assert!(domain_auc(&src_only, Domain::Source).is_err());
    }

    #[test]
    fn harmonic_cases() {
        assert!((harmonic_score(&[0.7; 5]).unwrap() - 0.7).abs() < 1e-15);
        assert!((harmonic_score(&[1.0, 0.5]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(harmonic_score(&[0.5, 0.0]), Err(Error::NonPositive(_))));
        assert!(harmonic_score(&[]).is_err());
    }

    fn labeled(machine: &str, rows: &[(Domain, bool, f64)]) -> Vec<LabeledScore> {
        rows.iter()
            .enumerate()
            .map(|(i, &(domain, anomaly, score))| LabeledScore {
                clip_id: format!("{machine}/{i}"),
                machine_type: machine.into(),
                domain,
                anomaly,
                score,
            })
            .collect()
    }

    #[test]
    fn summarize_pools_triples() {
        use Domain::*;
        let a = labeled("a", &[(Source, false, 0.1), (Target, false, 0.4), (Source, true, 0.3), (Target, true, 0.9)]);
        let b = labeled("b", &[(Source, false, 0.2), (Target, false, 0.1), (Source, true, 0.5), (Target, true, 0.15)]);
        let c = labeled("c", &[(Source, false, 0.5), (Target, false, 0.6), (Source, true, 0.55), (Target, true, 0.7)]);
        let all: Vec<LabeledScore> = [a.clone(), b.clone(), c.clone()].concat();
        let eval: BTreeSet<String> = ["c".to_string()].into();
        let rep = summarize(&all, &eval, 0.1).unwrap();
        let mut triples = Vec::new();
        for set in [&a, &b, &c] {
            let pairs: Vec<(f64, bool)> = set.iter().map(|s| (s.score, s.anomaly)).collect();
            let src: Vec<(f64, bool)> = set.iter().filter(|s| s.anomaly || s.domain == Source).map(|s| (s.score, s.anomaly)).collect();
            let tgt: Vec<(f64, bool)> = set.iter().filter(|s| s.anomaly || s.domain == Target).map(|s| (s.score, s.anomaly)).collect();
            triples.push([pair_oracle(&src), pair_oracle(&tgt), sweep_pauc(&pairs, 0.1)]);
        }
        let direct = |ts: &[[f64; 3]]| {
            let vals: Vec<f64> = ts.iter().flatten().copied().collect();
            vals.len() as f64 / vals.iter().map(|v| 1.0 / v).sum::<f64>()
        };
        assert!((rep.all_score - direct(&triples)).abs() < 1e-12);
        assert!((rep.dev_score.unwrap() - direct(&triples[..2])).abs() < 1e-12);
        assert!((rep.eval_score.unwrap() - direct(&triples[2..])).abs() < 1e-12);
        assert_eq!(rep.machines.len(), 3);

        let one = summarize(&a, &BTreeSet::new(), 0.1).unwrap();
        assert!((one.all_score - direct(&triples[..1])).abs() < 1e-12);
        assert_eq!(one.eval_score, None);
    }

    #[test]
    fn identical_machines_idempotent() {
        use Domain::*;
        let rows = [(Source, false, 0.1), (Target, false, 0.35), (Source, true, 0.3), (Target, true, 0.9), (Source, false, 0.6)];
        let one = summarize(&labeled("a", &rows), &BTreeSet::new(), 0.1).unwrap();
        let three: Vec<LabeledScore> = ["a", "b", "c"].iter().flat_map(|m| labeled(m, &rows)).collect();
        let many = summarize(&three, &BTreeSet::new(), 0.1).unwrap();
        assert!((one.all_score - many.all_score).abs() < 1e-15);
    }

    fn arb_scores() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec((prop_oneof![(-3.0f64..3.0), (0i32..5).prop_map(|v| v as f64)], any::<bool>()), 2..80)
            .prop_filter("both classes", |v| v.iter().any(|s| s.1) && v.iter().any(|s| !s.1))
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(s in arb_scores()) {
            prop_assert_eq!(auc(&s).unwrap(), pair_oracle(&s));
            prop_assert!((pauc(&s, 1.0).unwrap() - auc(&s).unwrap()).abs() < 1e-12);
            prop_assert!((pauc(&s, 0.1).unwrap() - sweep_pauc(&s, 0.1)).abs() < 1e-12);
            prop_assert!(pauc(&s, 0.1).unwrap() <= 1.0);
        }

        #[test]
        fn auc_order_and_transform_invariant(s in arb_scores()) {
            let a = auc(&s).unwrap();
            let mut rev = s.clone();
            rev.reverse();
            prop_assert_eq!(auc(&rev).unwrap(), a);
            let warped: Vec<(f64, bool)> = s.iter().map(|&(v, l)| (v.exp() * 3.0 + 1.0, l)).collect();
            prop_assert_eq!(auc(&warped).unwrap(), a);
            let neg: Vec<(f64, bool)> = s.iter().map(|&(v, l)| (-v, l)).collect();
            let mut distinct: Vec<f64> = s.iter().map(|x| x.0).collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() == s.len() {
                prop_assert!((a + auc(&neg).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn harmonic_le_arithmetic(v in prop::collection::vec(0.01f64..10.0, 1..30)) {
            let h = harmonic_score(&v).unwrap();
            let a = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!(h <= a * (1.0 + 1e-12));
        }
    }
}
