//! Configured experiments: data source, scenario, method and training
//! settings resolved from JSON, run over several seeds, plus parameter and
//! ablation sweeps.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::{
    load_csv, scenario_easiness, scenario_high_risk, scenario_new_anomalies, scenario_pu, split_train_test,
    temporal_split, to_anomaly_labels, AnomalyType, CsvSchema, Dataset, ScenarioKind, ScenarioSplit,
};
use crate::error::{Result, SpadeError};
use crate::evaluation::{
    aggregate_runs, default_percentile_grid, evaluate_splits, precision_curve, EvalReport, PrecisionCurves,
    SplitAuc,
};
use crate::par;
use crate::pseudo_labeler::{ThresholdRule, Vote};
use crate::synthetic::{self, SyntheticConfig, TYPE_A};
use crate::trainer::{train_method, Method, TrainConfig, TrainedModel};

/// Fixed percentiles substituted for partial matching by the
/// `no-partial-matching` ablation.
pub const FIXED_POSITIVE_PERCENTILE: f64 = 90.0;
pub const FIXED_NEGATIVE_PERCENTILE: f64 = 50.0;

fn default_test_frac() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// Class-labeled CSV; classes in `normal_classes` are normal, every
    /// other class is an anomaly type. Without `test` the file is split
    /// with `test_frac` per seed.
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        schema: CsvSchema,
        normal_classes: BTreeSet<AnomalyType>,
        #[serde(default = "default_test_frac")]
        test_frac: f64,
    },
    /// The two-cluster benchmark, redrawn for every seed.
    Synthetic {
        #[serde(default)]
        config: SyntheticConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioSpec {
    NewAnomalies {
        given_types: BTreeSet<AnomalyType>,
        label_frac: f64,
    },
    PositiveUnlabeled {
        given_types: BTreeSet<AnomalyType>,
        label_frac: f64,
    },
    Easiness {
        top_frac: f64,
    },
    HighRisk {
        risk_frac: f64,
        label_frac_of_risky: f64,
    },
    /// Uses the whole training source ordered by timestamp; an explicit
    /// test file is rejected.
    Temporal {
        test_frac: f64,
        label_frac: f64,
    },
}

impl ScenarioSpec {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            ScenarioSpec::NewAnomalies { .. } => ScenarioKind::NewAnomalies,
            ScenarioSpec::PositiveUnlabeled { .. } => ScenarioKind::PositiveUnlabeled,
            ScenarioSpec::Easiness { .. } => ScenarioKind::Easiness,
            ScenarioSpec::HighRisk { .. } => ScenarioKind::HighRisk,
            ScenarioSpec::Temporal { .. } => ScenarioKind::Temporal,
        }
    }

    /// Switches to `kind`, keeping given types and label fraction where
    /// both variants have them and filling the rest with defaults.
    pub fn with_kind(&self, kind: ScenarioKind) -> ScenarioSpec {
        if kind == self.kind() {
            return self.clone();
        }
        let (given_types, label_frac) = match self {
            ScenarioSpec::NewAnomalies { given_types, label_frac }
            | ScenarioSpec::PositiveUnlabeled { given_types, label_frac } => (given_types.clone(), *label_frac),
            ScenarioSpec::Temporal { label_frac, .. } => ([TYPE_A].into(), *label_frac),
            _ => ([TYPE_A].into(), 0.05),
        };
        match kind {
            ScenarioKind::NewAnomalies => ScenarioSpec::NewAnomalies { given_types, label_frac },
            ScenarioKind::PositiveUnlabeled => ScenarioSpec::PositiveUnlabeled { given_types, label_frac },
            ScenarioKind::Easiness => ScenarioSpec::Easiness { top_frac: 0.05 },
            ScenarioKind::HighRisk => ScenarioSpec::HighRisk {
                risk_frac: 0.1,
                label_frac_of_risky: 0.5,
            },
            ScenarioKind::Temporal => ScenarioSpec::Temporal {
                test_frac: default_test_frac(),
                label_frac,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub scenario: ScenarioSpec,
    pub method: Method,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// The synthetic benchmark with its training profile over seeds 0..5.
impl Default for ExperimentConfig {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        ExperimentConfig {
            scenario: ScenarioSpec::NewAnomalies {
                given_types: [TYPE_A].into(),
                label_frac: syn.label_frac,
            },
            data: DataSource::Synthetic { config: syn },
            method: Method::Spade,
            train: synthetic::benchmark_train_config(0),
            seeds: (0..5).collect(),
            out: None,
        }
    }
}

/// Rejects method/scenario pairs that cannot be trained: the plain
/// supervised and one-class baselines need labeled normals, which the PU
/// scenario never provides.
pub fn check_compatible(method: Method, kind: ScenarioKind) -> Result<()> {
    if kind == ScenarioKind::PositiveUnlabeled && matches!(method, Method::Occ | Method::Supervised) {
        return Err(SpadeError::invalid(format!(
            "method {method} needs labeled normals and cannot run on a {} scenario",
            kind.as_str()
        )));
    }
    Ok(())
}

/// Split-level check behind [`check_compatible`].
pub fn check_split(method: Method, split: &ScenarioSplit) -> Result<()> {
    check_compatible(method, split.kind)?;
    let needs_normals = matches!(method, Method::Occ | Method::Supervised);
    if needs_normals && split.labeled_negatives().is_empty() {
        return Err(SpadeError::invalid(format!("method {method} needs labeled normals")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        check_compatible(self.method, self.scenario.kind())?;
        if self.seeds.is_empty() {
            return Err(SpadeError::invalid("no seeds given"));
        }
        let mut seen = BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(SpadeError::invalid(format!("seed {s} listed twice")));
        }
        if let (DataSource::Csv { test: Some(_), .. }, ScenarioSpec::Temporal { .. }) = (&self.data, &self.scenario) {
            return Err(SpadeError::invalid("temporal scenarios derive their own test set"));
        }
        Ok(())
    }

    /// Training settings for one seed.
    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn to_value(&self) -> Result<Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Loads the source as `(train, test)`. `test` is `None` when the scenario
/// is temporal and needs the untouched source.
fn load_source(data: &DataSource, scenario: &ScenarioSpec, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    let temporal = matches!(scenario, ScenarioSpec::Temporal { .. });
    match data {
        DataSource::Synthetic { config } => {
            let ds = synthetic::generate(config, seed)?;
            if temporal {
                return Ok((ds, None));
            }
            let (train, test) = split_train_test(&ds, config.test_frac, seed)?;
            Ok((train, Some(test)))
        }
        DataSource::Csv {
            train,
            test,
            schema,
            normal_classes,
            test_frac,
        } => {
            let load = |p: &PathBuf| load_csv(p, schema).and_then(|d| to_anomaly_labels(&d, normal_classes));
            let ds = load(train)?;
            match test {
                Some(t) => Ok((ds, Some(load(t)?))),
                None if temporal => Ok((ds, None)),
                None => {
                    let (tr, te) = split_train_test(&ds, *test_frac, seed)?;
                    Ok((tr, Some(te)))
                }
            }
        }
    }
}

/// Builds the labeled / unlabeled / test split for one seed.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<ScenarioSplit> {
    let (train, test) = load_source(&cfg.data, &cfg.scenario, seed)?;
    match (&cfg.scenario, test) {
        (ScenarioSpec::Temporal { test_frac, label_frac }, _) => temporal_split(&train, *test_frac, *label_frac),
        (_, None) => unreachable!("non-temporal sources always yield a test set"),
        (ScenarioSpec::NewAnomalies { given_types, label_frac }, Some(test)) => {
            scenario_new_anomalies(&train, &test, given_types, *label_frac, seed)
        }
        (ScenarioSpec::PositiveUnlabeled { given_types, label_frac }, Some(test)) => {
            scenario_pu(&train, &test, given_types, *label_frac, seed)
        }
        (ScenarioSpec::Easiness { top_frac }, Some(test)) => scenario_easiness(&train, &test, *top_frac, seed),
        (
            ScenarioSpec::HighRisk {
                risk_frac,
                label_frac_of_risky,
            },
            Some(test),
        ) => scenario_high_risk(&train, &test, *risk_frac, *label_frac_of_risky, seed),
    }
}

/// Trains `method` on a prepared split after checking compatibility.
pub fn train_on(method: Method, split: &ScenarioSplit, cfg: &TrainConfig) -> Result<TrainedModel> {
    check_split(method, split)?;
    train_method(method, split, cfg)
}

/// Precision curves of the final pseudo-labeler on the unlabeled pool, for
/// models that keep one.
pub fn pseudo_label_precision(model: &TrainedModel, split: &ScenarioSplit) -> Result<Option<PrecisionCurves>> {
    let TrainedModel::Network(m) = model else {
        return Ok(None);
    };
    let Some(pl) = &m.pseudo_labeler else {
        return Ok(None);
    };
    if split.unlabeled.is_empty() {
        return Ok(None);
    }
    let reps = m.encode(&split.unlabeled.features())?;
    let scores = pl.score_matrix(&reps)?;
    let (truth, _) = split.truth().reveal();
    precision_curve(pl, truth, &scores, &default_percentile_grid()).map(Some)
}

pub fn evaluate_model(model: &TrainedModel, split: &ScenarioSplit) -> Result<SplitAuc> {
    let scores = model.scores(&split.test.features())?;
    evaluate_splits(&scores, &split.test, &split.given_types)
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub split: ScenarioSplit,
    pub model: TrainedModel,
    pub auc: SplitAuc,
    pub precision: Option<PrecisionCurves>,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let split = prepare(cfg, seed)?;
    let model = train_on(cfg.method, &split, &cfg.train_for(seed))?;
    let auc = evaluate_model(&model, &split)?;
    let precision = pseudo_label_precision(&model, &split)?;
    Ok(SeedRun {
        seed,
        split,
        model,
        auc,
        precision,
    })
}

/// Runs every seed (in parallel) and aggregates the test AUCs. The report
/// carries the precision curves of the first seed.
pub fn run(cfg: &ExperimentConfig) -> Result<(EvalReport, Vec<SeedRun>)> {
    cfg.validate()?;
    let runs = par::map_slice(&cfg.seeds, |&s| run_seed(cfg, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut report = aggregate_runs(&runs.iter().map(|r| r.auc).collect::<Vec<_>>())?;
    report.precision_curves = runs[0].precision.clone();
    Ok((report, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    /// Fixed unlabeled-score percentiles instead of partial matching.
    NoPartialMatching,
    /// A single one-class model.
    NoEnsemble,
    /// `beta = 0`.
    NoReconstruction,
    /// One-class models see only their unlabeled subset.
    NoNormalsInOcc,
    MajorityVote,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoPartialMatching,
        Ablation::NoEnsemble,
        Ablation::NoReconstruction,
        Ablation::NoNormalsInOcc,
        Ablation::MajorityVote,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoPartialMatching => "no-partial-matching",
            Ablation::NoEnsemble => "no-ensemble",
            Ablation::NoReconstruction => "no-reconstruction",
            Ablation::NoNormalsInOcc => "no-normals-in-occ",
            Ablation::MajorityVote => "majority-vote",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Ablation::Full => {}
            Ablation::NoPartialMatching => {
                cfg.pseudo.thresholds = ThresholdRule::FixedPercentile {
                    positive: FIXED_POSITIVE_PERCENTILE,
                    negative: FIXED_NEGATIVE_PERCENTILE,
                }
            }
            Ablation::NoEnsemble => cfg.pseudo.k = 1,
            Ablation::NoReconstruction => cfg.beta = 0.0,
            Ablation::NoNormalsInOcc => cfg.pseudo.fit_on_labeled_normals = false,
            Ablation::MajorityVote => cfg.pseudo.vote = Vote::Majority,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = SpadeError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().replace('_', "-");
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| SpadeError::invalid(format!("unknown ablation {s:?}")))
    }
}

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Alpha(Vec<f64>),
    Beta(Vec<f64>),
    K(Vec<usize>),
    Ablation(Vec<Ablation>),
}

impl SweepAxis {
    /// Parses `name` with comma-separated `values`.
    pub fn parse(name: &str, values: &str) -> Result<Self> {
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if items.is_empty() {
            return Err(SpadeError::invalid("sweep needs at least one value"));
        }
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| SpadeError::invalid(format!("bad sweep value {v:?}")))
        };
        Ok(match name {
            "alpha" => SweepAxis::Alpha(items.iter().map(|v| num(v)).collect::<Result<_>>()?),
            "beta" => SweepAxis::Beta(items.iter().map(|v| num(v)).collect::<Result<_>>()?),
            "k" => SweepAxis::K(
                items
                    .iter()
                    .map(|v| v.parse().map_err(|_| SpadeError::invalid(format!("bad k {v:?}"))))
                    .collect::<Result<_>>()?,
            ),
            "ablation" => SweepAxis::Ablation(items.iter().map(|v| v.parse()).collect::<Result<_>>()?),
            other => return Err(SpadeError::invalid(format!("cannot sweep {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Alpha(_) => "alpha",
            SweepAxis::Beta(_) => "beta",
            SweepAxis::K(_) => "k",
            SweepAxis::Ablation(_) => "ablation",
        }
    }

    /// `(label, config)` per sweep point.
    fn points(&self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let with = |label: String, f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c.train);
            (label, c)
        };
        match self {
            SweepAxis::Alpha(v) => v.iter().map(|&a| with(a.to_string(), &|t| t.alpha = a)).collect(),
            SweepAxis::Beta(v) => v.iter().map(|&b| with(b.to_string(), &|t| t.beta = b)).collect(),
            SweepAxis::K(v) => v.iter().map(|&k| with(k.to_string(), &|t| t.pseudo.k = k)).collect(),
            SweepAxis::Ablation(v) => v.iter().map(|&a| with(a.to_string(), &|t| a.apply(t))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub report: EvalReport,
}

/// One multi-seed run per sweep point, in the order given.
pub fn sweep(base: &ExperimentConfig, axis: &SweepAxis) -> Result<Vec<SweepRow>> {
    let points = axis.points(base);
    for (_, c) in &points {
        c.validate()?;
    }
    points
        .into_iter()
        .map(|(value, c)| {
            let (report, _) = run(&c)?;
            Ok(SweepRow {
                parameter: axis.name().to_string(),
                value,
                report,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "parameter",
        "value",
        "n_seeds",
        "overall_mean",
        "overall_std",
        "given_mean",
        "given_std",
        "missed_mean",
        "missed_std",
    ])?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for r in rows {
        let rep = &r.report;
        w.write_record([
            r.parameter.clone(),
            r.value.clone(),
            rep.n_seeds.to_string(),
            rep.overall_auc.mean.to_string(),
            rep.overall_auc.std.to_string(),
            cell(rep.given_auc.map(|s| s.mean)),
            cell(rep.given_auc.map(|s| s.std)),
            cell(rep.missed_auc.map(|s| s.mean)),
            cell(rep.missed_auc.map(|s| s.std)),
        ])?;
    }
    w.flush().map_err(|e| SpadeError::invalid(e.to_string()))?;
    Ok(())
}

/// Turns `{"train.alpha": 1}` into `{"train": {"alpha": 1}}`, recursively.
pub fn expand_dotted(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut out = Value::Object(Map::new());
            for (k, v) in map {
                set_path(&mut out, &k, expand_dotted(v));
            }
            out
        }
        other => other,
    }
}

/// Objects merge key by key; anything else replaces. An object whose
/// `kind` or `source` tag changes replaces the old one wholesale so stale
/// variant fields do not leak across.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retagged = ["kind", "source"]
                .iter()
                .any(|t| o.get(*t).is_some_and(|nv| b.get(*t).is_some_and(|ov| ov != nv)));
            if retagged {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `value` at a dotted `path`, creating objects along the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) {
    let mut over = value;
    for key in path.rsplit('.') {
        let mut m = Map::new();
        m.insert(key.to_string(), over);
        over = Value::Object(m);
    }
    merge(root, over);
}

/// Defaults, then the config file (dotted or nested keys), then
/// `overrides` in order, validated.
pub fn resolve_config(file: Option<Value>, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let cfg = resolve_unchecked(file, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// [`resolve_config`] without the final validation, for callers that
/// adjust the result further.
pub fn resolve_unchecked(file: Option<Value>, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let mut v = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(f) = file {
        if !f.is_object() {
            return Err(SpadeError::invalid("config file must hold a JSON object"));
        }
        merge(&mut v, expand_dotted(f));
    }
    for (path, value) in overrides {
        set_path(&mut v, path, value.clone());
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(v).map_err(|e| SpadeError::invalid(format!("invalid config: {e}")))?;
    Ok(cfg)
}
