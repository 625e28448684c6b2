//! AUC (overall, given types, missed types), pseudo-label precision curves
//! over score percentiles, and multi-seed aggregation.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnomalyType, Dataset, Label};
use crate::error::{Result, SpadeError};
use crate::pseudo_labeler::PseudoLabeler;
use crate::thresholding::ScoreSet;

/// Rank-based AUC: the chance a random anomaly outscores a random normal,
/// ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SpadeError::DimensionMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SpadeError::NonFinite("AUC scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SpadeError::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based mid-ranks of the positives, kept doubled to stay integral
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_sum += mid2 * pos_in_run;
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = rank2_sum - np * (np + 1);
    Ok(u2 as f64 / (2 * np * n_neg as u128) as f64)
}

/// AUCs on one test set. `given` and `missed` are absent when the test set
/// holds no anomalies of that kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAuc {
    pub overall: f64,
    pub given: Option<f64>,
    pub missed: Option<f64>,
}

pub fn evaluate_splits(scores: &[f64], test: &Dataset, given_types: &BTreeSet<AnomalyType>) -> Result<SplitAuc> {
    if test.is_empty() {
        return Err(SpadeError::invalid("empty test set"));
    }
    if scores.len() != test.len() {
        return Err(SpadeError::DimensionMismatch {
            expected: test.len(),
            actual: scores.len(),
        });
    }
    let samples = test.samples();
    if samples.iter().any(|s| s.label == Label::Unlabeled) {
        return Err(SpadeError::invalid("test set has unlabeled samples"));
    }
    let labels: Vec<bool> = samples.iter().map(|s| s.label == Label::Anomalous).collect();
    let overall = auc(scores, &labels)?;
    let subset = |keep: &dyn Fn(Option<AnomalyType>) -> bool| -> Result<Option<f64>> {
        let (mut s, mut l) = (Vec::new(), Vec::new());
        for (i, smp) in samples.iter().enumerate() {
            if !labels[i] || keep(smp.anomaly_type) {
                s.push(scores[i]);
                l.push(labels[i]);
            }
        }
        if l.iter().any(|&b| b) {
            auc(&s, &l).map(Some)
        } else {
            Ok(None)
        }
    };
    let is_given = |t: Option<AnomalyType>| t.is_some_and(|t| given_types.contains(&t));
    Ok(SplitAuc {
        overall,
        given: subset(&is_given)?,
        missed: subset(&|t| !is_given(t))?,
    })
}

/// Default percentile grid: 50, 55, ..., 95, 99.
pub fn default_percentile_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (0..10).map(|i| 50.0 + 5.0 * i as f64).collect();
    g.push(99.0);
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub percentile: f64,
    /// Truly anomalous fraction among samples above the percentile.
    pub anomalous: Option<f64>,
    /// Truly normal fraction among samples below the percentile.
    pub normal: Option<f64>,
    pub n_above: usize,
    pub n_below: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCurves {
    pub points: Vec<PrecisionPoint>,
    /// Per-model threshold positions as percentiles of that model's scores.
    pub eta_p_percentile: Vec<f64>,
    pub eta_n_percentile: Vec<f64>,
}

/// Precision of score-percentile rules on the unlabeled pool. `scores` is
/// `[sample][model]`; each sample's position is its mean percentile across
/// models.
pub fn precision_curve(
    pl: &PseudoLabeler,
    truth: &[Label],
    scores: &[Vec<f64>],
    grid: &[f64],
) -> Result<PrecisionCurves> {
    if scores.is_empty() {
        return Err(SpadeError::invalid("precision curve needs unlabeled samples"));
    }
    if truth.len() != scores.len() {
        return Err(SpadeError::DimensionMismatch {
            expected: scores.len(),
            actual: truth.len(),
        });
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SpadeError::invalid("percentile grid must be strictly increasing"));
    }
    let k = pl.k();
    if scores.iter().any(|r| r.len() != k) {
        return Err(SpadeError::invalid("score rows must have one entry per model"));
    }
    let per_model: Vec<ScoreSet> = (0..k)
        .map(|j| ScoreSet::new(scores.iter().map(|r| r[j]).collect()))
        .collect::<Result<_>>()?;
    let position: Vec<f64> = scores
        .iter()
        .map(|r| r.iter().zip(&per_model).map(|(&s, set)| set.rank_percent(s)).sum::<f64>() / k as f64)
        .collect();
    let points = grid
        .iter()
        .map(|&p| {
            let (mut above, mut above_hit, mut below, mut below_hit) = (0, 0, 0, 0);
            for (&pos, &t) in position.iter().zip(truth) {
                if pos > p {
                    above += 1;
                    above_hit += (t == Label::Anomalous) as usize;
                } else if pos < p {
                    below += 1;
                    below_hit += (t == Label::Normal) as usize;
                }
            }
            let frac = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
            PrecisionPoint {
                percentile: p,
                anomalous: frac(above_hit, above),
                normal: frac(below_hit, below),
                n_above: above,
                n_below: below,
            }
        })
        .collect();
    Ok(PrecisionCurves {
        points,
        eta_p_percentile: pl.eta_p().iter().zip(&per_model).map(|(&e, s)| s.rank_percent(e)).collect(),
        eta_n_percentile: pl.eta_n().iter().zip(&per_model).map(|(&e, s)| s.rank_percent(e)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_seeds: usize,
    pub overall_auc: Stat,
    pub given_auc: Option<Stat>,
    pub missed_auc: Option<Stat>,
    pub runs: Vec<SplitAuc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_curves: Option<PrecisionCurves>,
}

impl EvalReport {
    pub fn single(auc: SplitAuc, precision_curves: Option<PrecisionCurves>) -> Self {
        let mut r = aggregate_runs(&[auc]).expect("one run");
        r.precision_curves = precision_curves;
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Mean and population std of each metric across runs. A metric absent in
/// some runs is summarized over the runs that have it.
pub fn aggregate_runs(runs: &[SplitAuc]) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(SpadeError::invalid("nothing to aggregate"));
    }
    let pick = |f: fn(&SplitAuc) -> Option<f64>| Stat::of(&runs.iter().filter_map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        n_seeds: runs.len(),
        overall_auc: pick(|r| Some(r.overall)).expect("nonempty"),
        given_auc: pick(|r| r.given),
        missed_auc: pick(|r| r.missed),
        runs: runs.to_vec(),
        precision_curves: None,
    })
}

/// Merges already aggregated reports by pooling their runs.
pub fn merge_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    let runs: Vec<SplitAuc> = reports.iter().flat_map(|r| r.runs.iter().copied()).collect();
    aggregate_runs(&runs)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// One row per run plus a `mean` and a `std` row.
pub fn write_auc_csv<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "overall", "given", "missed"])?;
    for (i, r) in report.runs.iter().enumerate() {
        w.write_record([i.to_string(), r.overall.to_string(), opt(r.given), opt(r.missed)])?;
    }
    let (g, m) = (report.given_auc, report.missed_auc);
    w.write_record([
        "mean".into(),
        report.overall_auc.mean.to_string(),
        opt(g.map(|s| s.mean)),
        opt(m.map(|s| s.mean)),
    ])?;
    w.write_record([
        "std".into(),
        report.overall_auc.std.to_string(),
        opt(g.map(|s| s.std)),
        opt(m.map(|s| s.std)),
    ])?;
    w.flush().map_err(|e| SpadeError::io("<csv output>", e))?;
    Ok(())
}

pub fn write_precision_csv<W: Write>(out: W, curves: &PrecisionCurves) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["percentile", "anomalous_precision", "normal_precision", "n_above", "n_below"])?;
    for p in &curves.points {
        w.write_record([
            p.percentile.to_string(),
            opt(p.anomalous),
            opt(p.normal),
            p.n_above.to_string(),
            p.n_below.to_string(),
        ])?;
    }
    w.flush().map_err(|e| SpadeError::io("<csv output>", e))?;
    Ok(())
}
