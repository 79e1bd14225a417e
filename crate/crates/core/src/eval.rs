//! Place-recognition metrics, per-neuron precision analysis and the
//! sum-of-absolute-differences baseline.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ensemble::{expert_responses, fuse_responses, EnsembleModel, MatchResult};
use crate::error::{Error, Result};
use crate::imaging::ImageGray;

/// Outcome of one query. Ground truth must match exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub truth: usize,
    /// Places with scores, best first.
    pub ranking: Vec<(usize, u64)>,
    pub no_evidence: bool,
}

impl EvalRecord {
    pub fn from_match(truth: usize, m: MatchResult) -> Self {
        Self {
            truth,
            ranking: m.ranking,
            no_evidence: m.no_evidence,
        }
    }

    pub fn top1(&self) -> Option<usize> {
        self.ranking.first().map(|&(p, _)| p)
    }

    pub fn confidence(&self) -> u64 {
        self.ranking.first().map_or(0, |&(_, s)| s)
    }

    pub fn is_correct(&self) -> bool {
        self.top1() == Some(self.truth)
    }

    pub fn correct_within(&self, n: usize) -> bool {
        self.ranking.iter().take(n).any(|&(p, _)| p == self.truth)
    }
}

fn require_records(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::config("no evaluation records"));
    }
    Ok(())
}

/// Fraction of queries whose forced top-1 match is the true place.
pub fn precision_at_100_recall(records: &[EvalRecord]) -> Result<f64> {
    require_records(records)?;
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

pub fn recall_at_n(records: &[EvalRecord], n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::config("N must be >= 1"));
    }
    require_records(records)?;
    let hits = records.iter().filter(|r| r.correct_within(n)).count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: u64,
    pub precision: f64,
    pub recall: f64,
}

/// Sweep an acceptance threshold over top-1 scores, highest first. A query
/// is accepted when its score is at least the threshold. Recall is relative
/// to the queries whose top-1 match is correct, so the last point accepts
/// everything and has recall 1 (or 0 if nothing is correct).
pub fn pr_curve(records: &[EvalRecord]) -> Vec<PrPoint> {
    let mut thresholds: Vec<u64> = records.iter().map(EvalRecord::confidence).collect();
    thresholds.sort_unstable_by(|a, b| b.cmp(a));
    thresholds.dedup();
    let correctable = records.iter().filter(|r| r.is_correct()).count();
    thresholds
        .into_iter()
        .map(|t| {
            let accepted = records.iter().filter(|r| r.confidence() >= t);
            let (mut n, mut hit) = (0usize, 0usize);
            for r in accepted {
                n += 1;
                hit += usize::from(r.is_correct());
            }
            PrPoint {
                threshold: t,
                precision: hit as f64 / n as f64,
                recall: if correctable == 0 { 0.0 } else { hit as f64 / correctable as f64 },
            }
        })
        .collect()
}

/// Per-query, per-expert spike counts captured while evaluating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiringLog {
    pub truth: usize,
    pub responses: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<EvalRecord>,
    pub logs: Vec<FiringLog>,
    pub seconds: f64,
}

/// Run every `(place id, image)` query through the ensemble. The place id
/// is both the ground truth and the query seed index.
pub fn evaluate_queries(model: &EnsembleModel, queries: &[(usize, ImageGray)]) -> Result<Evaluation> {
    if !model.is_regularized() {
        return Err(Error::State("model has not been regularized".into()));
    }
    let start = Instant::now();
    let mut records = Vec::with_capacity(queries.len());
    let mut logs = Vec::with_capacity(queries.len());
    for (truth, img) in queries {
        if *truth >= model.global_place_count {
            return Err(Error::config(format!(
                "query place {truth} outside the model's {} places",
                model.global_place_count
            )));
        }
        if img.len() != model.input_count() {
            return Err(Error::config(format!(
                "query has {} pixels, model expects {}",
                img.len(),
                model.input_count()
            )));
        }
        let train = model.encode_query(img, *truth);
        let responses = expert_responses(model, &train)?;
        let m = fuse_responses(model, &responses)?;
        records.push(EvalRecord::from_match(*truth, m));
        logs.push(FiringLog {
            truth: *truth,
            responses,
        });
    }
    Ok(Evaluation {
        records,
        logs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Re-fuse captured responses under the model's current filter.
pub fn refuse_logs(model: &EnsembleModel, logs: &[FiringLog]) -> Result<Vec<EvalRecord>> {
    logs.iter()
        .map(|l| Ok(EvalRecord::from_match(l.truth, fuse_responses(model, &l.responses)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronPrecisionRecord {
    pub expert: usize,
    pub neuron: usize,
    pub assigned_place: usize,
    /// Spikes emitted on queries of the assigned place.
    pub correct_spikes: u64,
    pub total_spikes: u64,
    pub precision: f64,
    pub hyperactive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl GroupSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
        })
    }
}

/// Linear interpolation between closest ranks.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for the first sample tending larger.
    pub p_greater: f64,
    pub p_two_sided: f64,
}

/// Mann-Whitney U test, normal approximation with tie and continuity
/// correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::config("Mann-Whitney test needs two non-empty samples"));
    }
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let mut all: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_a += all[i..=j].iter().filter(|x| x.1).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)).max(1.0));
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    if var <= 0.0 {
        return Ok(MannWhitney {
            u,
            z: 0.0,
            p_greater: 1.0,
            p_two_sided: 1.0,
        });
    }
    let sd = var.sqrt();
    let z = (u - mean) / sd;
    let z_greater = (u - mean - 0.5) / sd;
    let z_abs = ((u - mean).abs() - 0.5).max(0.0) / sd;
    Ok(MannWhitney {
        u,
        z,
        p_greater: 1.0 - normal.cdf(z_greater),
        p_two_sided: (2.0 * (1.0 - normal.cdf(z_abs))).min(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronPrecisionReport {
    pub records: Vec<NeuronPrecisionRecord>,
    /// Assigned neurons that never fired on any query.
    pub never_fired: usize,
    pub unassigned: usize,
    pub hyperactive: Option<GroupSummary>,
    pub non_hyperactive: Option<GroupSummary>,
    /// Non-hyperactive precision tested against hyperactive precision.
    pub mann_whitney: Option<MannWhitney>,
}

impl NeuronPrecisionReport {
    pub fn precisions(&self, hyperactive: bool) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.hyperactive == hyperactive)
            .map(|r| r.precision)
            .collect()
    }
}

/// Precision of every assigned neuron: spikes emitted on queries of its
/// assigned place over all spikes it emitted.
pub fn neuron_precision_analysis(model: &EnsembleModel, logs: &[FiringLog]) -> Result<NeuronPrecisionReport> {
    let mut records = Vec::new();
    let mut never_fired = 0;
    let mut unassigned = 0;
    for log in logs {
        if log.responses.len() != model.experts.len() {
            return Err(Error::Internal("firing log does not match the ensemble".into()));
        }
    }
    for (x, ex) in model.experts.iter().enumerate() {
        for e in 0..ex.exc_count {
            let Some(place) = ex.global_assignment(e) else {
                unassigned += 1;
                continue;
            };
            let (mut correct, mut total) = (0u64, 0u64);
            for log in logs {
                let c = u64::from(*log.responses[x].get(e).ok_or_else(|| {
                    Error::Internal(format!("firing log of expert {x} is too short"))
                })?);
                total += c;
                if log.truth == place {
                    correct += c;
                }
            }
            if total == 0 {
                never_fired += 1;
                continue;
            }
            records.push(NeuronPrecisionRecord {
                expert: x,
                neuron: e,
                assigned_place: place,
                correct_spikes: correct,
                total_spikes: total,
                precision: correct as f64 / total as f64,
                hyperactive: ex.hyperactive[e],
            });
        }
    }
    let mut report = NeuronPrecisionReport {
        records,
        never_fired,
        unassigned,
        hyperactive: None,
        non_hyperactive: None,
        mann_whitney: None,
    };
    let hyp = report.precisions(true);
    let clean = report.precisions(false);
    report.hyperactive = GroupSummary::of(&hyp);
    report.non_hyperactive = GroupSummary::of(&clean);
    if !hyp.is_empty() && !clean.is_empty() {
        report.mann_whitney = Some(mann_whitney_u(&clean, &hyp)?);
    }
    Ok(report)
}

pub fn sad_distance(a: &ImageGray, b: &ImageGray) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::config(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .sum())
}

/// Places ranked by ascending distance; with several reference traverses a
/// place scores its closest image. Ties go to the lower place id.
pub fn sad_match(query: &ImageGray, reference: &[Vec<ImageGray>]) -> Result<Vec<(usize, f64)>> {
    let places = reference.first().map_or(0, Vec::len);
    if places == 0 || reference.iter().any(|t| t.len() != places) {
        return Err(Error::config("reference traverses must be non-empty and equally long"));
    }
    let mut ranking = Vec::with_capacity(places);
    for p in 0..places {
        let mut best = f64::INFINITY;
        for trav in reference {
            best = best.min(sad_distance(query, &trav[p])?);
        }
        ranking.push((p, best));
    }
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranking)
}

/// SAD rankings as records; the score column holds the negated distance
/// rounded to an integer so that higher is better.
pub fn sad_records(queries: &[(usize, ImageGray)], reference: &[Vec<ImageGray>]) -> Result<Vec<EvalRecord>> {
    queries
        .iter()
        .map(|(truth, q)| {
            let ranking = sad_match(q, reference)?;
            let worst = ranking.last().map_or(0.0, |r| r.1);
            Ok(EvalRecord {
                truth: *truth,
                ranking: ranking
                    .into_iter()
                    .map(|(p, d)| (p, (worst - d).round() as u64))
                    .collect(),
                no_evidence: false,
            })
        })
        .collect()
}

pub fn pr_curve_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        let _ = writeln!(out, "{},{:.6},{:.6}", p.threshold, p.precision, p.recall);
    }
    out
}

/// N values reported by default: 1, 5, 10, 15, 20, 25 and so on, capped at
/// the place count.
pub fn default_recall_ns(places: usize) -> Vec<usize> {
    let mut ns = vec![1];
    ns.extend((5..=places).step_by(5));
    if *ns.last().expect("non-empty") != places {
        ns.push(places);
    }
    ns.retain(|&n| n <= places.max(1));
    ns
}

pub fn recall_at_n_csv(records: &[EvalRecord], ns: &[usize]) -> Result<String> {
    let mut out = String::from("n,recall\n");
    for &n in ns {
        let _ = writeln!(out, "{n},{:.6}", recall_at_n(records, n)?);
    }
    Ok(out)
}

pub fn neuron_precision_csv(report: &NeuronPrecisionReport) -> String {
    let mut out = String::from("expert,neuron,assigned_place,correct_spikes,total_spikes,precision,hyperactive\n");
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{}",
            r.expert, r.neuron, r.assigned_place, r.correct_spikes, r.total_spikes, r.precision, r.hyperactive
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub queries: usize,
    pub places: usize,
    pub experts: usize,
    pub filter: crate::ensemble::HyperactivityFilter,
    pub hyperactive_neurons: usize,
    pub p_at_100r: f64,
    pub recall_at_n: Vec<(usize, f64)>,
    pub no_evidence_queries: usize,
    pub sad_p_at_100r: Option<f64>,
    pub neuron_precision_hyperactive: Option<GroupSummary>,
    pub neuron_precision_non_hyperactive: Option<GroupSummary>,
    pub never_fired_neurons: usize,
    pub unassigned_neurons: usize,
    pub mann_whitney: Option<MannWhitney>,
    pub query_fingerprint: Option<crate::store::DatasetFingerprint>,
}

pub fn summarize(
    model: &EnsembleModel,
    records: &[EvalRecord],
    neurons: &NeuronPrecisionReport,
    sad: Option<&[EvalRecord]>,
) -> Result<EvalSummary> {
    let ns = default_recall_ns(model.global_place_count);
    Ok(EvalSummary {
        queries: records.len(),
        places: model.global_place_count,
        experts: model.experts.len(),
        filter: model.filter,
        hyperactive_neurons: model.hyperactive_count(),
        p_at_100r: precision_at_100_recall(records)?,
        recall_at_n: ns
            .iter()
            .map(|&n| Ok((n, recall_at_n(records, n)?)))
            .collect::<Result<_>>()?,
        no_evidence_queries: records.iter().filter(|r| r.no_evidence).count(),
        sad_p_at_100r: sad.map(precision_at_100_recall).transpose()?,
        neuron_precision_hyperactive: neurons.hyperactive,
        neuron_precision_non_hyperactive: neurons.non_hyperactive,
        never_fired_neurons: neurons.never_fired,
        unassigned_neurons: neurons.unassigned,
        mann_whitney: neurons.mann_whitney,
        query_fingerprint: None,
    })
}

/// Write `pr_curve.csv`, `recall_at_n.csv`, `neuron_precision.csv`,
/// `scaling.csv` and `summary.json` into `dir`.
pub fn write_report(
    dir: &Path,
    records: &[EvalRecord],
    neurons: &NeuronPrecisionReport,
    scaling_csv: &str,
    summary: &EvalSummary,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ns: Vec<usize> = summary.recall_at_n.iter().map(|&(n, _)| n).collect();
    let files = [
        ("pr_curve.csv", pr_curve_csv(&pr_curve(records))),
        ("recall_at_n.csv", recall_at_n_csv(records, &ns)?),
        ("neuron_precision.csv", neuron_precision_csv(neurons)),
        ("scaling.csv", scaling_csv.to_string()),
        (
            "summary.json",
            serde_json::to_string_pretty(summary).map_err(|e| Error::Internal(e.to_string()))? + "\n",
        ),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn records() -> impl Strategy<Value = Vec<EvalRecord>> {
        (2usize..8).prop_flat_map(|places| {
            proptest::collection::vec(
                (0..places, proptest::collection::vec(0u64..20, places)),
                1..30,
            )
            .prop_map(move |rows| {
                rows.into_iter()
                    .map(|(truth, scores)| {
                        let mut ranking: Vec<(usize, u64)> = scores.into_iter().enumerate().collect();
                        ranking.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                        EvalRecord { truth, ranking, no_evidence: false }
                    })
                    .collect()
            })
        })
    }

    fn image(len: usize) -> impl Strategy<Value = ImageGray> {
        proptest::collection::vec(-3.0f32..3.0, len).prop_map(move |px| ImageGray::new(len, 1, px).unwrap())
    }

    proptest! {
        #[test]
        fn p100r_is_recall_at_1(r in records()) {
            prop_assert_eq!(precision_at_100_recall(&r).unwrap(), recall_at_n(&r, 1).unwrap());
        }

        #[test]
        fn recall_monotone_and_curve_endpoint(r in records()) {
            let places = r[0].ranking.len();
            let mut prev = 0.0;
            for n in 1..=places {
                let v = recall_at_n(&r, n).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
            prop_assert_eq!(prev, 1.0);
            let curve = pr_curve(&r);
            prop_assert_eq!(curve.last().unwrap().precision, precision_at_100_recall(&r).unwrap());
            prop_assert!(curve.windows(2).all(|w| w[0].threshold > w[1].threshold));
        }

        #[test]
        fn permutation_invariance(r in records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut s = r.clone();
            s.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(precision_at_100_recall(&r).unwrap(), precision_at_100_recall(&s).unwrap());
            prop_assert_eq!(pr_curve(&r), pr_curve(&s));
        }

        #[test]
        fn sad_metric_axioms(a in image(6), b in image(6), c in image(6)) {
            let ab = sad_distance(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(sad_distance(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(ab, sad_distance(&b, &a).unwrap());
            prop_assert!(sad_distance(&a, &c).unwrap() <= ab + sad_distance(&b, &c).unwrap() + 1e-9);
        }
    }
}
