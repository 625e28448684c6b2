//! Tabular datasets, anomaly relabeling, and labeled/unlabeled scenario
//! generation.

mod io;
mod scenario;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadeError};
use crate::linalg::Matrix;

pub use io::{load_csv, read_scenario_dir, write_scenario_dir, CsvSchema, Delimiter, Manifest};
pub use scenario::{
    scenario_easiness, scenario_high_risk, scenario_new_anomalies, scenario_pu, temporal_split,
    ScenarioKind,
};

/// Anomaly type id. `0` is reserved for the normal class once a dataset has
/// been converted with [`to_anomaly_labels`].
pub type AnomalyType = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomalous,
    Unlabeled,
}

impl Label {
    pub fn code(self) -> i8 {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
            Label::Unlabeled => -1,
        }
    }

    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Anomalous),
            -1 => Ok(Label::Unlabeled),
            other => Err(SpadeError::invalid(format!("label code {other} not in {{-1,0,1}}"))),
        }
    }

    /// Binary target for a known label.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Normal => Some(0.0),
            Label::Anomalous => Some(1.0),
            Label::Unlabeled => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Row identity in the source file; survives every split.
    pub id: usize,
    pub features: Vec<f64>,
    pub label: Label,
    pub anomaly_type: Option<AnomalyType>,
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    samples: Vec<Sample>,
}

impl Dataset {
    /// A nonempty dataset whose samples all share `feature_names.len()` features.
    pub fn new(name: impl Into<String>, feature_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(SpadeError::invalid("dataset has no samples"));
        }
        Self::subset(name, feature_names, samples)
    }

    /// Like [`Dataset::new`] but allows zero samples; used for views such as an
    /// empty labeled-normal pool.
    pub fn subset(name: impl Into<String>, feature_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let dim = feature_names.len();
        if dim == 0 {
            return Err(SpadeError::invalid("dataset needs at least one feature"));
        }
        for s in &samples {
            if s.features.len() != dim {
                return Err(SpadeError::DimensionMismatch {
                    expected: dim,
                    actual: s.features.len(),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            feature_names,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn features(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.dim());
        for (i, s) in self.samples.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&s.features);
        }
        m
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.id).collect()
    }

    /// New dataset holding the samples at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn filter(&self, pred: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            samples: self.samples.iter().filter(|s| pred(s)).cloned().collect(),
        }
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Distinct nonzero anomaly types carried by anomalous samples.
    pub fn anomaly_types(&self) -> BTreeSet<AnomalyType> {
        self.samples
            .iter()
            .filter(|s| s.label == Label::Anomalous)
            .filter_map(|s| s.anomaly_type)
            .collect()
    }

    pub(crate) fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            samples,
        }
    }
}

/// Ground-truth labels of the unlabeled pool. Training code only ever sees
/// the unlabeled [`Dataset`]; this is read through [`ShadowLabels::reveal`]
/// by evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowLabels {
    labels: Vec<Label>,
    anomaly_types: Vec<Option<AnomalyType>>,
}

impl ShadowLabels {
    pub(crate) fn new(labels: Vec<Label>, anomaly_types: Vec<Option<AnomalyType>>) -> Self {
        debug_assert_eq!(labels.len(), anomaly_types.len());
        ShadowLabels {
            labels,
            anomaly_types,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Evaluation-only access to the hidden labels.
    pub fn reveal(&self) -> (&[Label], &[Option<AnomalyType>]) {
        (&self.labels, &self.anomaly_types)
    }
}

/// Labeled / unlabeled / test partition of a source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSplit {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
    pub given_types: BTreeSet<AnomalyType>,
    pub seed: u64,
    pub kind: ScenarioKind,
    pub fractions: Vec<(String, f64)>,
    pub(crate) truth: ShadowLabels,
}

impl ScenarioSplit {
    /// Builds a split, moving the true labels of `unlabeled` into the shadow
    /// channel and blanking them on the samples themselves.
    pub fn new(
        labeled: Dataset,
        unlabeled: Dataset,
        test: Dataset,
        given_types: BTreeSet<AnomalyType>,
        seed: u64,
        kind: ScenarioKind,
        fractions: Vec<(String, f64)>,
    ) -> Result<Self> {
        if labeled.samples.iter().any(|s| s.label == Label::Unlabeled) {
            return Err(SpadeError::invalid("labeled set contains an unlabeled sample"));
        }
        for s in labeled.samples.iter().filter(|s| s.label == Label::Anomalous) {
            if let Some(t) = s.anomaly_type {
                if !given_types.contains(&t) {
                    return Err(SpadeError::invalid(format!(
                        "labeled anomaly type {t} is not among the given types"
                    )));
                }
            }
        }
        let truth = ShadowLabels::new(
            unlabeled.samples.iter().map(|s| s.label).collect(),
            unlabeled.samples.iter().map(|s| s.anomaly_type).collect(),
        );
        let hidden = unlabeled
            .samples
            .iter()
            .map(|s| Sample {
                label: Label::Unlabeled,
                anomaly_type: None,
                ..s.clone()
            })
            .collect();
        let unlabeled = unlabeled.with_samples(hidden);
        Ok(ScenarioSplit {
            labeled,
            unlabeled,
            test,
            given_types,
            seed,
            kind,
            fractions,
            truth,
        })
    }

    pub(crate) fn from_parts(
        labeled: Dataset,
        unlabeled: Dataset,
        test: Dataset,
        given_types: BTreeSet<AnomalyType>,
        seed: u64,
        kind: ScenarioKind,
        fractions: Vec<(String, f64)>,
        truth: ShadowLabels,
    ) -> Self {
        ScenarioSplit {
            labeled,
            unlabeled,
            test,
            given_types,
            seed,
            kind,
            fractions,
            truth,
        }
    }

    pub fn truth(&self) -> &ShadowLabels {
        &self.truth
    }

    pub fn labeled_positives(&self) -> Dataset {
        self.labeled.filter(|s| s.label == Label::Anomalous)
    }

    pub fn labeled_negatives(&self) -> Dataset {
        self.labeled.filter(|s| s.label == Label::Normal)
    }
}

/// Per-feature z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

impl Scaler {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(SpadeError::invalid("cannot fit a scaler on zero rows"));
        }
        if !x.is_finite() {
            return Err(SpadeError::NonFinite("scaler input".into()));
        }
        let mean = x.column_means();
        let mut var = vec![0.0; x.cols()];
        for r in x.row_iter() {
            for ((v, &xi), &m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let n = x.rows() as f64;
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Scaler { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(SpadeError::DimensionMismatch {
                expected: self.dim(),
                actual: x.cols(),
            });
        }
        Ok(())
    }
}

/// Relabels a multi-class dataset: classes in `normal_classes` become
/// normal (type 0), every other class becomes an anomaly of that type.
pub fn to_anomaly_labels(ds: &Dataset, normal_classes: &BTreeSet<AnomalyType>) -> Result<Dataset> {
    let present: BTreeSet<AnomalyType> = ds
        .samples
        .iter()
        .map(|s| {
            s.anomaly_type
                .ok_or_else(|| SpadeError::invalid(format!("sample {} has no class value", s.id)))
        })
        .collect::<Result<_>>()?;
    if normal_classes.is_empty() {
        return Err(SpadeError::invalid("no normal classes given"));
    }
    if let Some(c) = normal_classes.iter().find(|c| !present.contains(c)) {
        return Err(SpadeError::invalid(format!("normal class {c} does not occur in the data")));
    }
    if present.iter().all(|c| normal_classes.contains(c)) {
        return Err(SpadeError::invalid("every class is marked normal; no anomalies remain"));
    }
    if present.contains(&0) && !normal_classes.contains(&0) {
        return Err(SpadeError::invalid("class 0 cannot be an anomaly type (0 is reserved for normal)"));
    }
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let class = s.anomaly_type.expect("checked above");
            let normal = normal_classes.contains(&class);
            Sample {
                label: if normal { Label::Normal } else { Label::Anomalous },
                anomaly_type: Some(if normal { 0 } else { class }),
                ..s.clone()
            }
        })
        .collect();
    Ok(ds.with_samples(samples))
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_fraction(name: &str, f: f64, allow_one: bool) -> Result<()> {
    let ok = f > 0.0 && (f < 1.0 || (allow_one && f == 1.0));
    if !ok {
        return Err(SpadeError::invalid(format!("{name} = {f} is outside its allowed range")));
    }
    Ok(())
}

/// Stratified random train/test split. Each label stratum sends
/// `round(test_frac * count)` samples to the test side; both outputs keep the
/// source order.
pub fn split_train_test(ds: &Dataset, test_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    check_fraction("test_frac", test_frac, false)?;
    let mut rng = rng(seed);
    let mut test_idx = Vec::new();
    for label in [Label::Normal, Label::Anomalous, Label::Unlabeled] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].label == label).collect();
        if idx.is_empty() {
            continue;
        }
        if label == Label::Anomalous && idx.len() < 2 {
            return Err(SpadeError::invalid(format!(
                "only {} anomalies; need at least 2 to stratify",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = (test_frac * idx.len() as f64).round() as usize;
        test_idx.extend_from_slice(&idx[..n_test]);
    }
    let mut in_test = vec![false; ds.len()];
    for &i in &test_idx {
        in_test[i] = true;
    }
    let train: Vec<usize> = (0..ds.len()).filter(|&i| !in_test[i]).collect();
    let test: Vec<usize> = (0..ds.len()).filter(|&i| in_test[i]).collect();
    if train.is_empty() || test.is_empty() {
        return Err(SpadeError::invalid("split leaves one side empty"));
    }
    Ok((ds.select(&train), ds.select(&test)))
}

/// Balanced random partition of `0..n` into `k` index sets whose sizes
/// differ by at most one.
pub fn partition_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(SpadeError::invalid("partition count must be at least 1"));
    }
    if k > n {
        return Err(SpadeError::invalid(format!("cannot split {n} samples into {k} nonempty parts")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(seed));
    let mut parts = vec![Vec::with_capacity(n / k + 1); k];
    for (j, i) in perm.into_iter().enumerate() {
        parts[j % k].push(i);
    }
    Ok(parts)
}

/// Splits `unlabeled` into `k` disjoint, balanced subsets.
pub fn partition_disjoint(unlabeled: &Dataset, k: usize, seed: u64) -> Result<Vec<Dataset>> {
    Ok(partition_indices(unlabeled.len(), k, seed)?
        .iter()
        .map(|idx| unlabeled.select(idx))
        .collect())
}
