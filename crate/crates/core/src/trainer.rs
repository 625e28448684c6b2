//! Training loop: each epoch encodes the training data, rebuilds the
//! pseudo-labeler on those representations, then makes one mini-batch pass
//! over `L_Yl + alpha * L_Yu + beta * L_R`. Also the supervised, negative
//! supervised and one-class baselines.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, Sample, Scaler, ScenarioSplit};
use crate::error::{Result, SpadeError};
use crate::linalg::Matrix;
use crate::neuralnet::{bce_with_logits, mse_loss, sigmoid, Activation, Adam, AdamConfig, Gradients, Mlp};
use crate::occ::{GaussianOcc, GdeConfig};
use crate::pseudo_labeler::{AssignCounts, PseudoLabel, PseudoLabeler, PseudoLabelerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Minimum drop in epoch loss that counts as an improvement.
    pub min_delta: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Encoder width; `None` means half the input dimension, rounded up.
    pub hidden_dim: Option<usize>,
    /// Build the first epoch's pseudo-labeler on standardized inputs instead
    /// of the untrained encoder's output.
    pub warmup_raw: bool,
    pub pseudo: PseudoLabelerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            patience: 5,
            max_epochs: 200,
            min_delta: 1e-6,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
            hidden_dim: None,
            warmup_raw: false,
            pseudo: PseudoLabelerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SpadeError::Config(m.into()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("alpha and beta must be finite and non-negative");
        }
        if self.pseudo.k == 0 {
            return bad("k must be at least 1");
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return bad("patience, max_epochs and batch_size must be positive");
        }
        if self.hidden_dim == Some(0) {
            return bad("hidden_dim must be positive");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    fn hidden(&self, d: usize) -> usize {
        self.hidden_dim.unwrap_or(d.div_ceil(2))
    }
}

/// Encoder `h`, predictor `q` (one logit) and reconstruction head `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub encoder: Mlp,
    pub predictor: Mlp,
    pub decoder: Mlp,
}

impl Networks {
    pub fn init(d: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::init(&[d, hidden, hidden], &[Activation::Relu, Activation::Identity], &mut rng)?;
        let predictor = Mlp::init(&[hidden, 1], &[Activation::Identity], &mut rng)?;
        let decoder = Mlp::init(&[hidden, d], &[Activation::Identity], &mut rng)?;
        Ok(Networks {
            encoder,
            predictor,
            decoder,
        })
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder.predict(x)
    }

    /// `q(h(x))` as probabilities.
    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        let logits = self.predictor.predict(&self.encode(x)?)?;
        Ok(logits.as_slice().iter().map(|&z| sigmoid(z)).collect())
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.param_slices().iter().map(|s| s.len()).collect()
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        [&self.encoder, &self.predictor, &self.decoder]
            .iter()
            .flat_map(|m| {
                m.layers()
                    .iter()
                    .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// What a batch row contributes to the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowTarget {
    Labeled(f64),
    /// Unlabeled row with its pseudo-label.
    Unlabeled(PseudoLabel),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l_yl: f64,
    pub l_yu: f64,
    pub l_r: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct ObjectiveGrads {
    pub encoder: Gradients,
    pub predictor: Gradients,
    pub decoder: Gradients,
}

/// Batch objective and its gradients. `L_Yl` averages over labeled rows,
/// `L_Yu` over unlabeled rows with a known pseudo-label, `L_R` over every
/// entry of the batch.
pub fn objective(
    nets: &Networks,
    x: &Matrix,
    targets: &[RowTarget],
    alpha: f64,
    beta: f64,
) -> Result<(LossParts, ObjectiveGrads)> {
    let n = x.rows();
    if targets.len() != n {
        return Err(SpadeError::DimensionMismatch {
            expected: n,
            actual: targets.len(),
        });
    }
    let enc = nets.encoder.forward(x)?;
    let r = enc.output();
    let pred = nets.predictor.forward(r)?;
    let logits = pred.output().as_slice();

    let mut y_l = vec![0.0; n];
    let mut w_l = vec![0.0; n];
    let mut y_u = vec![0.0; n];
    let mut w_u = vec![0.0; n];
    for (i, t) in targets.iter().enumerate() {
        match *t {
            RowTarget::Labeled(y) => {
                y_l[i] = y;
                w_l[i] = 1.0;
            }
            RowTarget::Unlabeled(p) => {
                if let Some(y) = p.target() {
                    y_u[i] = y;
                    w_u[i] = 1.0;
                }
            }
        }
    }
    let (l_yl, g_l) = bce_with_logits(logits, &y_l, &w_l)?;
    let (l_yu, g_u) = bce_with_logits(logits, &y_u, &w_u)?;
    let up_logit: Vec<f64> = g_l.iter().zip(&g_u).map(|(a, b)| a + alpha * b).collect();
    let (g_pred, mut d_r) = nets.predictor.backward(&pred, &Matrix::from_vec(n, 1, up_logit)?)?;

    let (l_r, g_dec) = if beta > 0.0 {
        let dec = nets.decoder.forward(r)?;
        let (l_r, mut up) = mse_loss(dec.output(), x)?;
        up.as_mut_slice().iter_mut().for_each(|g| *g *= beta);
        let (g_dec, d_r2) = nets.decoder.backward(&dec, &up)?;
        for (a, b) in d_r.as_mut_slice().iter_mut().zip(d_r2.as_slice()) {
            *a += b;
        }
        (l_r, g_dec)
    } else {
        let dec = nets.decoder.forward(r)?;
        let (l_r, _) = mse_loss(dec.output(), x)?;
        let zero = Matrix::zeros(n, nets.decoder.out_dim());
        (l_r, nets.decoder.backward(&dec, &zero)?.0)
    };
    let (g_enc, _) = nets.encoder.backward(&enc, &d_r)?;
    let parts = LossParts {
        l_yl,
        l_yu,
        l_r,
        total: l_yl + alpha * l_yu + beta * l_r,
    };
    Ok((
        parts,
        ObjectiveGrads {
            encoder: g_enc,
            predictor: g_pred,
            decoder: g_dec,
        },
    ))
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossParts,
    pub counts: AssignCounts,
    pub eta_p: Vec<f64>,
    pub eta_n: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spade,
    Supervised,
    NegativeSupervised,
    Occ,
    NegativeOcc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Spade,
        Method::Supervised,
        Method::NegativeSupervised,
        Method::Occ,
        Method::NegativeOcc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Spade => "spade",
            Method::Supervised => "supervised",
            Method::NegativeSupervised => "negative_supervised",
            Method::Occ => "occ",
            Method::NegativeOcc => "negative_occ",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = SpadeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| SpadeError::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpadeModel {
    pub method: Method,
    pub scaler: Scaler,
    pub nets: Networks,
    /// Pseudo-labeler refit on the final representations.
    pub pseudo_labeler: Option<PseudoLabeler>,
    pub trace: Vec<EpochRecord>,
    pub config: TrainConfig,
}

impl SpadeModel {
    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    /// Representations of raw (unscaled) inputs.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.nets.encode(&self.scaler.transform(x)?)
    }
}

/// Anomaly scores in `[0, 1]`; the pseudo-labeler plays no part.
pub fn predict_scores(model: &SpadeModel, x: &Matrix) -> Result<Vec<f64>> {
    model.nets.score(&model.scaler.transform(x)?)
}

/// A fitted one-class baseline on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccModel {
    pub method: Method,
    pub scaler: Scaler,
    pub occ: GaussianOcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Network(SpadeModel),
    Occ(OccModel),
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Network(m) => m.method,
            TrainedModel::Occ(m) => m.method,
        }
    }

    pub fn scores(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Network(m) => predict_scores(m, x),
            TrainedModel::Occ(m) => m.occ.score_batch(&m.scaler.transform(x)?),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Scaler fit on every training feature vector (labels unused).
pub fn pool_scaler(split: &ScenarioSplit) -> Result<Scaler> {
    Scaler::fit(&split.labeled.features().vstack(&split.unlabeled.features())?)
}

fn labeled_targets(ds: &Dataset) -> Result<Vec<f64>> {
    ds.samples()
        .iter()
        .map(|s| {
            s.label
                .target()
                .ok_or_else(|| SpadeError::invalid(format!("labeled sample {} has no label", s.id)))
        })
        .collect()
}

struct Run<'a> {
    x_l: Matrix,
    y_l: Vec<f64>,
    pos_idx: Vec<usize>,
    neg_idx: Vec<usize>,
    x_u: Matrix,
    use_pseudo: bool,
    cfg: &'a TrainConfig,
}

fn training_loop(run: Run<'_>, scaler: Scaler, method: Method) -> Result<SpadeModel> {
    let cfg = run.cfg;
    cfg.validate()?;
    let d = run.x_l.cols();
    let mut nets = Networks::init(d, cfg.hidden(d), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam, &nets.param_sizes());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let n_l = run.x_l.rows();
    let n_u = run.x_u.rows();
    let x_all = run.x_l.vstack(&run.x_u)?;
    let alpha = if run.use_pseudo { cfg.alpha } else { 0.0 };
    let beta = if run.use_pseudo { cfg.beta } else { 0.0 };
    // with both weights at zero unlabeled rows would add nothing but noise to batch composition
    let n_batch_rows = if alpha == 0.0 && beta == 0.0 { n_l } else { n_l + n_u };

    let build_pl = |nets: &Networks, epoch: usize, raw: bool| -> Result<PseudoLabeler> {
        let reps = if raw { x_all.clone() } else { nets.encode(&x_all)? };
        let l = reps.select_rows(&(0..n_l).collect::<Vec<_>>());
        let u = reps.select_rows(&(n_l..n_l + n_u).collect::<Vec<_>>());
        PseudoLabeler::build(
            &l.select_rows(&run.pos_idx),
            &l.select_rows(&run.neg_idx),
            &u,
            &cfg.pseudo,
            cfg.seed.wrapping_add(epoch as u64),
        )
        .map_err(|e| SpadeError::Epoch {
            epoch,
            source: Box::new(e),
        })
    };

    let mut trace: Vec<EpochRecord> = Vec::new();
    let mut best = f64::INFINITY;
    let mut stall = 0;
    let mut order: Vec<usize> = (0..n_batch_rows).collect();
    for epoch in 0..cfg.max_epochs {
        let (pseudo, counts, eta_p, eta_n) = if run.use_pseudo {
            let pl = build_pl(&nets, epoch, cfg.warmup_raw && epoch == 0)?;
            let reps_u = if cfg.warmup_raw && epoch == 0 {
                run.x_u.clone()
            } else {
                nets.encode(&run.x_u)?
            };
            let (labels, counts) = pl.assign_batch(&reps_u)?;
            (labels, counts, pl.eta_p().to_vec(), pl.eta_n().to_vec())
        } else {
            (vec![PseudoLabel::Unknown; n_u], AssignCounts::default(), vec![], vec![])
        };

        order.shuffle(&mut shuffle_rng);
        let mut sum = LossParts::default();
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_all.select_rows(chunk);
            let targets: Vec<RowTarget> = chunk
                .iter()
                .map(|&i| {
                    if i < n_l {
                        RowTarget::Labeled(run.y_l[i])
                    } else {
                        RowTarget::Unlabeled(pseudo[i - n_l])
                    }
                })
                .collect();
            let (parts, grads) = objective(&nets, &xb, &targets, alpha, beta)?;
            if !parts.total.is_finite() {
                return Err(SpadeError::Diverged {
                    epoch,
                    trace: trace_to_string(&trace)?,
                });
            }
            sum.l_yl += parts.l_yl;
            sum.l_yu += parts.l_yu;
            sum.l_r += parts.l_r;
            sum.total += parts.total;
            n_batches += 1;

            let g: Vec<&[f64]> = [&grads.encoder, &grads.predictor, &grads.decoder]
                .iter()
                .flat_map(|g| g.slices())
                .collect();
            let mut params: Vec<&mut [f64]> = Vec::new();
            params.extend(nets.encoder.param_slices_mut());
            params.extend(nets.predictor.param_slices_mut());
            params.extend(nets.decoder.param_slices_mut());
            adam.step(&mut params, &g)?;
        }
        let nb = n_batches.max(1) as f64;
        let loss = LossParts {
            l_yl: sum.l_yl / nb,
            l_yu: sum.l_yu / nb,
            l_r: sum.l_r / nb,
            total: sum.total / nb,
        };
        trace.push(EpochRecord {
            epoch,
            loss,
            counts,
            eta_p,
            eta_n,
        });
        if loss.total < best - cfg.min_delta {
            best = loss.total;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                break;
            }
        }
    }
    let pseudo_labeler = if run.use_pseudo {
        Some(build_pl(&nets, trace.len(), false)?)
    } else {
        None
    };
    Ok(SpadeModel {
        method,
        scaler,
        nets,
        pseudo_labeler,
        trace,
        config: cfg.clone(),
    })
}

fn scaled(scaler: &Scaler, ds: &Dataset) -> Result<Matrix> {
    if ds.is_empty() {
        return Ok(Matrix::zeros(0, scaler.dim()));
    }
    scaler.transform(&ds.features())
}

pub fn train_spade(split: &ScenarioSplit, cfg: &TrainConfig) -> Result<SpadeModel> {
    if split.unlabeled.is_empty() {
        return Err(SpadeError::invalid("SPADE needs unlabeled data"));
    }
    if split.labeled.is_empty() {
        return Err(SpadeError::invalid("SPADE needs at least one labeled sample"));
    }
    let scaler = pool_scaler(split)?;
    let x_l = scaled(&scaler, &split.labeled)?;
    let y_l = labeled_targets(&split.labeled)?;
    let pos_idx = (0..y_l.len()).filter(|&i| y_l[i] == 1.0).collect();
    let neg_idx = (0..y_l.len()).filter(|&i| y_l[i] == 0.0).collect();
    let run = Run {
        x_l,
        y_l,
        pos_idx,
        neg_idx,
        x_u: scaled(&scaler, &split.unlabeled)?,
        use_pseudo: true,
        cfg,
    };
    training_loop(run, scaler, Method::Spade)
}

/// Supervised MLP on the labeled set with a given standardization.
pub fn train_supervised_with(labeled: &Dataset, scaler: Scaler, cfg: &TrainConfig) -> Result<SpadeModel> {
    supervised(labeled, scaler, cfg, Method::Supervised)
}

fn supervised(labeled: &Dataset, scaler: Scaler, cfg: &TrainConfig, method: Method) -> Result<SpadeModel> {
    let y_l = labeled_targets(labeled)?;
    if !y_l.contains(&1.0) {
        return Err(SpadeError::invalid("supervised training needs labeled anomalies"));
    }
    if !y_l.contains(&0.0) {
        return Err(SpadeError::invalid("supervised training needs labeled normals"));
    }
    let run = Run {
        x_l: scaled(&scaler, labeled)?,
        y_l,
        pos_idx: vec![],
        neg_idx: vec![],
        x_u: Matrix::zeros(0, scaler.dim()),
        use_pseudo: false,
        cfg,
    };
    training_loop(run, scaler, method)
}

/// Supervised MLP on the labeled set, standardized by its own statistics.
pub fn train_supervised(labeled: &Dataset, cfg: &TrainConfig) -> Result<SpadeModel> {
    if labeled.is_empty() {
        return Err(SpadeError::invalid("empty labeled set"));
    }
    let scaler = Scaler::fit(&labeled.features())?;
    train_supervised_with(labeled, scaler, cfg)
}

fn as_normals(labeled: &Dataset, unlabeled: &Dataset) -> Result<Dataset> {
    let mut samples: Vec<Sample> = labeled.samples().to_vec();
    samples.extend(unlabeled.samples().iter().map(|s| Sample {
        label: Label::Normal,
        anomaly_type: Some(0),
        ..s.clone()
    }));
    Dataset::subset(labeled.name.clone(), labeled.feature_names.clone(), samples)
}

/// Supervised MLP treating every unlabeled sample as a labeled normal.
pub fn train_negative_supervised_with(
    labeled: &Dataset,
    unlabeled: &Dataset,
    scaler: Scaler,
    cfg: &TrainConfig,
) -> Result<SpadeModel> {
    supervised(&as_normals(labeled, unlabeled)?, scaler, cfg, Method::NegativeSupervised)
}

pub fn train_negative_supervised(labeled: &Dataset, unlabeled: &Dataset, cfg: &TrainConfig) -> Result<SpadeModel> {
    let pool = as_normals(labeled, unlabeled)?;
    if pool.is_empty() {
        return Err(SpadeError::invalid("empty training set"));
    }
    let scaler = Scaler::fit(&labeled.features())?;
    supervised(&pool, scaler, cfg, Method::NegativeSupervised)
}

/// Gaussian fit on labeled normals.
pub fn occ_baseline(labeled_normals: &Matrix, cfg: &GdeConfig) -> Result<GaussianOcc> {
    if labeled_normals.rows() == 0 {
        return Err(SpadeError::invalid("no labeled normals for the one-class baseline"));
    }
    GaussianOcc::fit(labeled_normals, cfg)
}

/// Gaussian fit on labeled normals plus all unlabeled samples.
pub fn negative_occ_baseline(labeled_normals: &Matrix, unlabeled: &Matrix, cfg: &GdeConfig) -> Result<GaussianOcc> {
    let pool = if labeled_normals.rows() == 0 {
        unlabeled.clone()
    } else {
        labeled_normals.vstack(unlabeled)?
    };
    if pool.rows() == 0 {
        return Err(SpadeError::invalid("empty pool for the negative one-class baseline"));
    }
    GaussianOcc::fit(&pool, cfg)
}

/// Trains `method` on a split. Every method standardizes with statistics of
/// all training features.
pub fn train_method(method: Method, split: &ScenarioSplit, cfg: &TrainConfig) -> Result<TrainedModel> {
    let scaler = pool_scaler(split)?;
    Ok(match method {
        Method::Spade => TrainedModel::Network(train_spade(split, cfg)?),
        Method::Supervised => TrainedModel::Network(train_supervised_with(&split.labeled, scaler, cfg)?),
        Method::NegativeSupervised => TrainedModel::Network(train_negative_supervised_with(
            &split.labeled,
            &split.unlabeled,
            scaler,
            cfg,
        )?),
        Method::Occ | Method::NegativeOcc => {
            let normals = scaled(&scaler, &split.labeled_negatives())?;
            let occ = if method == Method::Occ {
                occ_baseline(&normals, &cfg.pseudo.gde)?
            } else {
                negative_occ_baseline(&normals, &scaled(&scaler, &split.unlabeled)?, &cfg.pseudo.gde)?
            };
            TrainedModel::Occ(OccModel { method, scaler, occ })
        }
    })
}

/// Trace CSV: losses, pseudo-label counts and per-model thresholds per
/// epoch, with the loss weights repeated on every row.
pub fn write_trace_csv<W: Write>(out: W, model: &SpadeModel) -> Result<()> {
    let k = model.trace.first().map_or(0, |r| r.eta_p.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "epoch", "alpha", "beta", "l_yl", "l_yu", "l_r", "total", "n_pos", "n_neg", "n_unknown", "conflicts",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..k).map(|i| format!("eta_p_{i}")));
    header.extend((0..k).map(|i| format!("eta_n_{i}")));
    w.write_record(&header)?;
    let (alpha, beta) = match model.method {
        Method::Spade => (model.config.alpha, model.config.beta),
        _ => (0.0, 0.0),
    };
    for r in &model.trace {
        let mut row = vec![
            r.epoch.to_string(),
            alpha.to_string(),
            beta.to_string(),
            r.loss.l_yl.to_string(),
            r.loss.l_yu.to_string(),
            r.loss.l_r.to_string(),
            r.loss.total.to_string(),
            r.counts.n_pos.to_string(),
            r.counts.n_neg.to_string(),
            r.counts.n_unknown.to_string(),
            r.counts.conflicts.to_string(),
        ];
        row.extend(r.eta_p.iter().chain(&r.eta_n).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SpadeError::io("<trace>", e))?;
    Ok(())
}

/// Per-epoch pseudo-labeler diagnostics, one JSON object per line.
pub fn write_pseudo_label_log<W: Write>(mut out: W, model: &SpadeModel) -> Result<()> {
    for r in &model.trace {
        let v = serde_json::json!({
            "epoch": r.epoch,
            "eta_p": r.eta_p,
            "eta_n": r.eta_n,
            "counts": r.counts,
            "conflicts": r.counts.conflicts,
        });
        writeln!(out, "{v}").map_err(|e| SpadeError::io("<pseudo-label log>", e))?;
    }
    Ok(())
}

fn trace_to_string(trace: &[EpochRecord]) -> Result<String> {
    let mut s = String::from("epoch,total\n");
    for r in trace {
        s.push_str(&format!("{},{}\n", r.epoch, r.loss.total));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ScenarioKind;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::collections::BTreeSet;

    fn sample(id: usize, x: Vec<f64>, label: Label, t: i64) -> Sample {
        Sample {
            id,
            features: x,
            label,
            anomaly_type: Some(t),
            timestamp: None,
        }
    }

    /// Normals around the origin in 4-D, anomalies shifted by 4 in every
    /// coordinate.
    fn toy_split(seed: u64) -> ScenarioSplit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shift: f64| -> Vec<f64> {
            (0..4).map(|_| shift + { let v: f64 = StandardNormal.sample(&mut rng); v }).collect::<Vec<f64>>()
        };
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let mut id = 0;
        let mut make = |n_norm: usize, n_anom: usize, draw: &mut dyn FnMut(f64) -> Vec<f64>| {
            let mut v = Vec::new();
            for _ in 0..n_norm {
                v.push(sample(id, draw(0.0), Label::Normal, 0));
                id += 1;
            }
            for _ in 0..n_anom {
                v.push(sample(id, draw(4.0), Label::Anomalous, 1));
                id += 1;
            }
            v
        };
        let labeled = make(30, 6, &mut draw);
        let unlabeled = make(300, 30, &mut draw);
        let test = make(200, 20, &mut draw);
        ScenarioSplit::new(
            Dataset::new("toy", names.clone(), labeled).unwrap(),
            Dataset::new("toy", names.clone(), unlabeled).unwrap(),
            Dataset::new("toy", names, test).unwrap(),
            BTreeSet::from([1]),
            seed,
            ScenarioKind::NewAnomalies,
            vec![],
        )
        .unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            max_epochs: 15,
            batch_size: 32,
            hidden_dim: Some(8),
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn spade_learns_and_is_deterministic() {
        let split = toy_split(1);
        let m = train_spade(&split, &quick()).unwrap();
        let s = predict_scores(&m, &split.test.features()).unwrap();
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        let labels = split.test.labels();
        let mean = |want: Label| {
            let v: Vec<f64> = s.iter().zip(&labels).filter(|(_, l)| **l == want).map(|(s, _)| *s).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(Label::Anomalous) > mean(Label::Normal));
        let again = train_spade(&split, &quick()).unwrap();
        assert_eq!(m.trace, again.trace);
        assert_eq!(m.nets, again.nets);
        assert!(m.pseudo_labeler.is_some());
    }

    #[test]
    fn early_stopping_respects_patience() {
        let split = toy_split(2);
        let cfg = TrainConfig {
            max_epochs: 200,
            patience: 2,
            min_delta: 10.0,
            ..quick()
        };
        let m = train_spade(&split, &cfg).unwrap();
        // first epoch improves on infinity, the next two cannot beat it by 10
        assert_eq!(m.trace.len(), 3);
    }

    #[test]
    fn duplicated_rows_get_equal_scores() {
        let split = toy_split(3);
        let m = train_spade(&split, &TrainConfig { max_epochs: 2, ..quick() }).unwrap();
        let row = split.test.samples()[0].features.clone();
        let x = Matrix::from_rows(&[row.clone(), row]).unwrap();
        let s = predict_scores(&m, &x).unwrap();
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn zero_weights_match_supervised() {
        let split = toy_split(4);
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            ..quick()
        };
        let spade = train_spade(&split, &cfg).unwrap();
        let sup = train_supervised_with(&split.labeled, spade.scaler.clone(), &cfg).unwrap();
        assert_eq!(spade.nets.encoder, sup.nets.encoder);
        assert_eq!(spade.nets.predictor, sup.nets.predictor);
        let lt: Vec<f64> = spade.trace.iter().map(|r| r.loss.total).collect();
        let st: Vec<f64> = sup.trace.iter().map(|r| r.loss.total).collect();
        assert_eq!(lt, st);
    }

    #[test]
    fn objective_decomposes_and_ignores_unknowns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nets = Networks::init(3, 2, 9).unwrap();
        let mut x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let targets = [
            RowTarget::Labeled(1.0),
            RowTarget::Labeled(0.0),
            RowTarget::Unlabeled(PseudoLabel::Anomalous),
            RowTarget::Unlabeled(PseudoLabel::Normal),
            RowTarget::Unlabeled(PseudoLabel::Unknown),
            RowTarget::Unlabeled(PseudoLabel::Normal),
        ];
        let (alpha, beta) = (0.7, 1.3);
        let (p, _) = objective(&nets, &x, &targets, alpha, beta).unwrap();

        let probs = nets.score(&x).unwrap();
        let bce = |i: usize, y: f64| -(y * probs[i].ln() + (1.0 - y) * (1.0 - probs[i]).ln());
        let l_yl = (bce(0, 1.0) + bce(1, 0.0)) / 2.0;
        let l_yu = (bce(2, 1.0) + bce(3, 0.0) + bce(5, 0.0)) / 3.0;
        let recon = nets.decoder.predict(&nets.encode(&x).unwrap()).unwrap();
        let l_r = recon.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 18.0;
        assert!((p.total - (l_yl + alpha * l_yu + beta * l_r)).abs() < 1e-8);
        assert!((p.l_yu - l_yu).abs() < 1e-12);

        x.row_mut(4)[0] += 3.0;
        let (q, _) = objective(&nets, &x, &targets, alpha, beta).unwrap();
        assert_eq!(q.l_yu, p.l_yu);
        assert_eq!(q.l_yl, p.l_yl);
        assert_ne!(q.l_r, p.l_r);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nets = Networks::init(3, 2, 1).unwrap();
        let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let targets = [
            RowTarget::Labeled(1.0),
            RowTarget::Unlabeled(PseudoLabel::Anomalous),
            RowTarget::Unlabeled(PseudoLabel::Unknown),
            RowTarget::Labeled(0.0),
            RowTarget::Unlabeled(PseudoLabel::Normal),
        ];
        let (_, g) = objective(&nets, &x, &targets, 0.8, 1.2).unwrap();
        let analytic: Vec<f64> = [&g.encoder, &g.predictor, &g.decoder]
            .iter()
            .flat_map(|g| g.slices().concat())
            .collect();
        let h = 1e-5;
        let mut idx = 0;
        for net in 0..3 {
            let mut probe = nets.clone();
            let sizes: Vec<usize> = [&mut probe.encoder, &mut probe.predictor, &mut probe.decoder][net]
                .param_slices_mut()
                .iter()
                .map(|p| p.len())
                .collect();
            for (s, &size) in sizes.iter().enumerate() {
                for j in 0..size {
                    let eval = |delta: f64| {
                        let mut n = nets.clone();
                        [&mut n.encoder, &mut n.predictor, &mut n.decoder][net].param_slices_mut()[s][j] += delta;
                        objective(&n, &x, &targets, 0.8, 1.2).unwrap().0.total
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let a = analytic[idx];
                    assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3), "{net}/{s}/{j}: {a} vs {fd}");
                    idx += 1;
                }
            }
        }
        assert_eq!(idx, analytic.len());
    }

    #[test]
    fn baselines() {
        let split = toy_split(7);
        let cfg = quick();
        let sup = train_supervised(&split.labeled, &cfg).unwrap();
        assert!(sup.pseudo_labeler.is_none());
        let neg = train_negative_supervised(&split.labeled, &split.unlabeled, &cfg).unwrap();
        assert_eq!(neg.method, Method::NegativeSupervised);
        let empty = Dataset::subset("e", split.labeled.feature_names.clone(), vec![]).unwrap();
        let neg_empty = train_negative_supervised(&split.labeled, &empty, &cfg).unwrap();
        assert_eq!(neg_empty.nets, sup.nets);

        let only_normals = split.labeled.filter(|s| s.label == Label::Normal);
        assert!(train_supervised(&only_normals, &cfg).is_err());
        assert!(occ_baseline(&Matrix::zeros(0, 4), &GdeConfig::default()).is_err());

        for m in Method::ALL {
            let model = train_method(m, &split, &cfg).unwrap();
            let json = model.to_json().unwrap();
            let back = TrainedModel::from_json(&json).unwrap();
            let x = split.test.features();
            let (a, b) = (model.scores(&x).unwrap(), back.scores(&x).unwrap());
            assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-10), "{m}");
        }
    }

    #[test]
    fn trace_outputs() {
        let split = toy_split(8);
        let m = train_spade(&split, &TrainConfig { max_epochs: 3, ..quick() }).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &m).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,alpha,beta,l_yl"));
        assert!(text.lines().next().unwrap().contains("eta_n_4"));
        assert_eq!(text.lines().count(), m.trace.len() + 1);
        let mut log = Vec::new();
        write_pseudo_label_log(&mut log, &m).unwrap();
        let first: serde_json::Value = serde_json::from_str(String::from_utf8(log).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(first["eta_p"].as_array().unwrap().len(), 5);
    }
}
