//! Generators for labeled/unlabeled distribution-mismatch scenarios.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_fraction, rng, AnomalyType, Dataset, Label, Scaler, ScenarioSplit};
use crate::error::{Result, SpadeError};
use crate::neuralnet::{fit_logistic, LogisticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    NewAnomalies,
    Easiness,
    PositiveUnlabeled,
    HighRisk,
    Temporal,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::NewAnomalies => "new-anomalies",
            ScenarioKind::Easiness => "easiness",
            ScenarioKind::PositiveUnlabeled => "pu",
            ScenarioKind::HighRisk => "high-risk",
            ScenarioKind::Temporal => "temporal",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = SpadeError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "new-anomalies" | "new_anomalies" => ScenarioKind::NewAnomalies,
            "easiness" => ScenarioKind::Easiness,
            "pu" | "positive-unlabeled" => ScenarioKind::PositiveUnlabeled,
            "high-risk" | "high_risk" => ScenarioKind::HighRisk,
            "temporal" => ScenarioKind::Temporal,
            other => return Err(SpadeError::Config(format!("unknown scenario kind `{other}`"))),
        })
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn complement(n: usize, chosen: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut mark = vec![false; n];
    for &i in chosen {
        mark[i] = true;
    }
    let inside = (0..n).filter(|&i| mark[i]).collect();
    let outside = (0..n).filter(|&i| !mark[i]).collect();
    (inside, outside)
}

fn build(
    train: &Dataset,
    chosen: &[usize],
    test: &Dataset,
    given_types: BTreeSet<AnomalyType>,
    seed: u64,
    kind: ScenarioKind,
    fractions: Vec<(String, f64)>,
) -> Result<ScenarioSplit> {
    let (lab, unl) = complement(train.len(), chosen);
    if lab.is_empty() {
        return Err(SpadeError::invalid("scenario produced an empty labeled set"));
    }
    ScenarioSplit::new(
        train.select(&lab),
        train.select(&unl),
        test.clone(),
        given_types,
        seed,
        kind,
        fractions,
    )
}

fn validate_given(train: &Dataset, given_types: &BTreeSet<AnomalyType>) -> Result<()> {
    if train.samples().iter().any(|s| s.label == Label::Unlabeled) {
        return Err(SpadeError::invalid("training data must carry normal/anomalous labels"));
    }
    let present = train.anomaly_types();
    if given_types.is_empty() {
        return Err(SpadeError::invalid("given_types is empty"));
    }
    if let Some(t) = given_types.iter().find(|t| !present.contains(t)) {
        return Err(SpadeError::invalid(format!("given anomaly type {t} does not occur in training data")));
    }
    Ok(())
}

fn is_given(s: &super::Sample, given: &BTreeSet<AnomalyType>) -> bool {
    s.label == Label::Anomalous && s.anomaly_type.is_some_and(|t| given.contains(&t))
}

/// Labels a `label_frac` share of `train`, drawn uniformly from normals and
/// anomalies of `given_types`. Other anomaly types stay unlabeled.
pub fn scenario_new_anomalies(
    train: &Dataset,
    test: &Dataset,
    given_types: &BTreeSet<AnomalyType>,
    label_frac: f64,
    seed: u64,
) -> Result<ScenarioSplit> {
    check_fraction("label_frac", label_frac, false)?;
    validate_given(train, given_types)?;
    let mut eligible: Vec<usize> = (0..train.len())
        .filter(|&i| {
            let s = &train.samples()[i];
            s.label == Label::Normal || is_given(s, given_types)
        })
        .collect();
    let n_label = (label_frac * train.len() as f64).round() as usize;
    if n_label == 0 || n_label > eligible.len() {
        return Err(SpadeError::invalid(format!(
            "cannot label {n_label} samples from an eligible pool of {}",
            eligible.len()
        )));
    }
    eligible.shuffle(&mut rng(seed));
    let chosen = &eligible[..n_label];
    if !chosen.iter().any(|&i| train.samples()[i].label == Label::Anomalous) {
        return Err(SpadeError::invalid(format!(
            "label_frac {label_frac} with seed {seed} yields no labeled anomalies"
        )));
    }
    build(
        train,
        chosen,
        test,
        given_types.clone(),
        seed,
        ScenarioKind::NewAnomalies,
        vec![("label_frac".into(), label_frac)],
    )
}

/// Positive-unlabeled variant: labels `floor(label_frac * #given-type
/// anomalies)` anomalies and no normals.
pub fn scenario_pu(
    train: &Dataset,
    test: &Dataset,
    given_types: &BTreeSet<AnomalyType>,
    label_frac: f64,
    seed: u64,
) -> Result<ScenarioSplit> {
    check_fraction("label_frac", label_frac, true)?;
    validate_given(train, given_types)?;
    let mut eligible: Vec<usize> = (0..train.len())
        .filter(|&i| is_given(&train.samples()[i], given_types))
        .collect();
    let n_label = (label_frac * eligible.len() as f64).floor() as usize;
    if n_label == 0 {
        return Err(SpadeError::invalid("PU scenario yields no labeled anomalies"));
    }
    eligible.shuffle(&mut rng(seed));
    build(
        train,
        &eligible[..n_label],
        test,
        given_types.clone(),
        seed,
        ScenarioKind::PositiveUnlabeled,
        vec![("label_frac".into(), label_frac)],
    )
}

/// Probability of being anomalous from a logistic regression trained on the
/// full training labels (standardized features).
fn oracle_scores(train: &Dataset) -> Result<Vec<f64>> {
    let x = train.features();
    let scaler = Scaler::fit(&x)?;
    let z = scaler.transform(&x)?;
    let y: Vec<f64> = train
        .samples()
        .iter()
        .map(|s| {
            s.label
                .target()
                .ok_or_else(|| SpadeError::invalid("oracle training needs fully labeled data"))
        })
        .collect::<Result<_>>()?;
    let model = fit_logistic(&z, &y, &LogisticConfig::default())?;
    Ok(model.predict_proba(&z))
}

/// Indices sorted by descending key; equal keys keep ascending index order.
fn rank_desc(idx: &mut [usize], key: &[f64]) {
    idx.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b)));
}

fn labeled_types(train: &Dataset, chosen: &[usize]) -> BTreeSet<AnomalyType> {
    chosen
        .iter()
        .map(|&i| &train.samples()[i])
        .filter(|s| s.label == Label::Anomalous)
        .filter_map(|s| s.anomaly_type)
        .collect()
}

/// Labels, per class, the `top_frac` most confidently and correctly
/// classified samples under a logistic-regression oracle.
pub fn scenario_easiness(train: &Dataset, test: &Dataset, top_frac: f64, seed: u64) -> Result<ScenarioSplit> {
    check_fraction("top_frac", top_frac, true)?;
    let p = oracle_scores(train)?;
    let mut chosen = Vec::new();
    for label in [Label::Normal, Label::Anomalous] {
        let class: Vec<usize> = (0..train.len()).filter(|&i| train.samples()[i].label == label).collect();
        let want = (top_frac * class.len() as f64).round() as usize;
        let conf: Vec<f64> = p
            .iter()
            .map(|&pi| if label == Label::Anomalous { pi } else { 1.0 - pi })
            .collect();
        let mut correct: Vec<usize> = class.into_iter().filter(|&i| conf[i] > 0.5).collect();
        rank_desc(&mut correct, &conf);
        correct.truncate(want);
        chosen.extend(correct);
    }
    let given = labeled_types(train, &chosen);
    build(
        train,
        &chosen,
        test,
        given,
        seed,
        ScenarioKind::Easiness,
        vec![("top_frac".into(), top_frac)],
    )
}

/// Labels a uniform `label_frac_of_risky` share of the `risk_frac`
/// highest-scoring samples under a logistic-regression oracle.
pub fn scenario_high_risk(
    train: &Dataset,
    test: &Dataset,
    risk_frac: f64,
    label_frac_of_risky: f64,
    seed: u64,
) -> Result<ScenarioSplit> {
    check_fraction("risk_frac", risk_frac, true)?;
    check_fraction("label_frac_of_risky", label_frac_of_risky, true)?;
    let p = oracle_scores(train)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    rank_desc(&mut order, &p);
    let n_risky = (risk_frac * train.len() as f64).round() as usize;
    if n_risky == 0 {
        return Err(SpadeError::invalid("risky set is empty"));
    }
    let mut risky = order[..n_risky].to_vec();
    risky.shuffle(&mut rng(seed));
    let n_label = (label_frac_of_risky * n_risky as f64).round() as usize;
    if n_label == 0 {
        return Err(SpadeError::invalid("no risky samples selected for labeling"));
    }
    let chosen = &risky[..n_label];
    let given = labeled_types(train, chosen);
    build(
        train,
        chosen,
        test,
        given,
        seed,
        ScenarioKind::HighRisk,
        vec![
            ("risk_frac".into(), risk_frac),
            ("label_frac_of_risky".into(), label_frac_of_risky),
        ],
    )
}

/// Time-ordered split: newest `test_frac` is the test set, the oldest
/// `label_frac` of the remainder is labeled and the rest is unlabeled.
/// All-equal timestamps are rejected since they define no order.
pub fn temporal_split(ds: &Dataset, test_frac: f64, label_frac: f64) -> Result<ScenarioSplit> {
    check_fraction("test_frac", test_frac, false)?;
    check_fraction("label_frac", label_frac, false)?;
    let ts: Vec<f64> = ds
        .samples()
        .iter()
        .map(|s| {
            s.timestamp
                .ok_or_else(|| SpadeError::invalid(format!("sample {} has no timestamp", s.id)))
        })
        .collect::<Result<_>>()?;
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(SpadeError::NonFinite("timestamps".into()));
    }
    if ts.iter().all(|&t| t == ts[0]) {
        return Err(SpadeError::invalid("all timestamps are equal; no temporal order"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]).then(a.cmp(&b)));
    let n_test = (test_frac * ds.len() as f64).round() as usize;
    let train_part = &order[..ds.len() - n_test];
    let test_part = &order[ds.len() - n_test..];
    let n_label = (label_frac * train_part.len() as f64).round() as usize;
    if n_label == 0 || n_test == 0 || n_label == train_part.len() {
        return Err(SpadeError::invalid("temporal split leaves a part empty"));
    }
    let labeled = ds.select(&train_part[..n_label]);
    let unlabeled = ds.select(&train_part[n_label..]);
    let test = ds.select(test_part);
    let given = labeled.anomaly_types();
    ScenarioSplit::new(
        labeled,
        unlabeled,
        test,
        given,
        0,
        ScenarioKind::Temporal,
        vec![("test_frac".into(), test_frac), ("label_frac".into(), label_frac)],
    )
}
