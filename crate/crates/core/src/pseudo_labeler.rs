//! Ensemble-of-OCCs pseudo-labeler.
//!
//! Each of the K Gaussian estimators is fit on one disjoint slice of the
//! unlabeled representations plus every labeled normal. Per-model thresholds
//! come from partial matching against the labeled scores, or from Otsu's
//! method for a class without labels. A sample is pseudo-anomalous only if
//! every model scores it above its η^p, pseudo-normal only if every model
//! scores it below its η^n, and unknown otherwise.

use serde::{Deserialize, Serialize};

use crate::dataset::partition_indices;
use crate::error::{Result, SpadeError};
use crate::linalg::Matrix;
use crate::occ::{GaussianOcc, GdeConfig};
use crate::par;
use crate::thresholding::{
    otsu_threshold, partial_match_negative, partial_match_positive, ScoreSet, DEFAULT_OTSU_BINS,
};

/// Pseudo-label of one unlabeled sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PseudoLabel {
    Normal,
    Anomalous,
    Unknown,
}

impl PseudoLabel {
    pub fn code(self) -> i8 {
        match self {
            PseudoLabel::Normal => 0,
            PseudoLabel::Anomalous => 1,
            PseudoLabel::Unknown => -1,
        }
    }

    pub fn target(self) -> Option<f64> {
        match self {
            PseudoLabel::Normal => Some(0.0),
            PseudoLabel::Anomalous => Some(1.0),
            PseudoLabel::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Partial matching where the class has labels, Otsu otherwise.
    PartialMatching,
    /// Fixed percentiles of each model's unlabeled scores.
    FixedPercentile { positive: f64, negative: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Vote {
    Unanimous,
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLabelerConfig {
    pub k: usize,
    pub thresholds: ThresholdRule,
    pub vote: Vote,
    /// Add labeled normals to every model's training data.
    pub fit_on_labeled_normals: bool,
    pub gde: GdeConfig,
    pub otsu_bins: usize,
}

impl Default for PseudoLabelerConfig {
    fn default() -> Self {
        PseudoLabelerConfig {
            k: 5,
            thresholds: ThresholdRule::PartialMatching,
            vote: Vote::Unanimous,
            fit_on_labeled_normals: true,
            gde: GdeConfig::default(),
            otsu_bins: DEFAULT_OTSU_BINS,
        }
    }
}

/// How a threshold was chosen, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdSource {
    PartialMatching,
    Otsu,
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeler {
    occs: Vec<GaussianOcc>,
    eta_p: Vec<f64>,
    eta_n: Vec<f64>,
    vote: Vote,
    pub epoch_seed: u64,
    pub positive_source: ThresholdSource,
    pub negative_source: ThresholdSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignCounts {
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_unknown: usize,
    /// Samples that met both the positive and the negative condition.
    pub conflicts: usize,
}

fn score_set(occ: &GaussianOcc, x: &Matrix) -> Result<Option<ScoreSet>> {
    if x.rows() == 0 {
        return Ok(None);
    }
    ScoreSet::new(occ.score_batch(x)?).map(Some)
}

impl PseudoLabeler {
    /// Assembles a labeler from fitted parts. All three lists must have the
    /// same nonzero length and finite thresholds.
    pub fn from_parts(occs: Vec<GaussianOcc>, eta_p: Vec<f64>, eta_n: Vec<f64>, vote: Vote) -> Result<Self> {
        let k = occs.len();
        if k == 0 || eta_p.len() != k || eta_n.len() != k {
            return Err(SpadeError::invalid("occs, eta_p and eta_n must have equal nonzero length"));
        }
        if eta_p.iter().chain(&eta_n).any(|v| !v.is_finite()) {
            return Err(SpadeError::NonFinite("pseudo-labeler thresholds".into()));
        }
        let d = occs[0].dim();
        if occs.iter().any(|o| o.dim() != d) {
            return Err(SpadeError::invalid("OCCs disagree on dimension"));
        }
        Ok(PseudoLabeler {
            occs,
            eta_p,
            eta_n,
            vote,
            epoch_seed: 0,
            positive_source: ThresholdSource::PartialMatching,
            negative_source: ThresholdSource::PartialMatching,
        })
    }

    /// Fits the ensemble on representation matrices (rows are samples).
    pub fn build(
        labeled_pos: &Matrix,
        labeled_neg: &Matrix,
        unlabeled: &Matrix,
        cfg: &PseudoLabelerConfig,
        seed: u64,
    ) -> Result<Self> {
        if unlabeled.rows() == 0 {
            return Err(SpadeError::invalid("pseudo-labeler needs unlabeled data"));
        }
        if labeled_pos.rows() == 0 && labeled_neg.rows() == 0 {
            return Err(SpadeError::invalid("pseudo-labeler needs labeled positives or negatives"));
        }
        let d = unlabeled.cols();
        for m in [labeled_pos, labeled_neg] {
            if m.rows() > 0 && m.cols() != d {
                return Err(SpadeError::DimensionMismatch {
                    expected: d,
                    actual: m.cols(),
                });
            }
        }
        let parts = partition_indices(unlabeled.rows(), cfg.k, seed)?;
        let use_neg = cfg.fit_on_labeled_normals && labeled_neg.rows() > 0;

        struct Fitted {
            occ: GaussianOcc,
            eta_p: f64,
            eta_n: f64,
            pos_src: ThresholdSource,
            neg_src: ThresholdSource,
        }

        let fit_one = |k: usize| -> Result<Fitted> {
            let wrap = |e: SpadeError| SpadeError::OccFit { k, source: Box::new(e) };
            let mut train = unlabeled.select_rows(&parts[k]);
            if use_neg {
                train = train.vstack(labeled_neg).map_err(wrap)?;
            }
            let occ = GaussianOcc::fit(&train, &cfg.gde).map_err(wrap)?;
            let u = score_set(&occ, unlabeled).map_err(wrap)?.expect("nonempty");
            let (eta_p, pos_src, eta_n, neg_src) = match cfg.thresholds {
                ThresholdRule::PartialMatching => {
                    let (p, ps) = match score_set(&occ, labeled_pos).map_err(wrap)? {
                        Some(l) => (partial_match_positive(&l, &u), ThresholdSource::PartialMatching),
                        None => (otsu_threshold(&u, cfg.otsu_bins), ThresholdSource::Otsu),
                    };
                    let (n, ns) = match score_set(&occ, labeled_neg).map_err(wrap)? {
                        Some(l) => (partial_match_negative(&l, &u), ThresholdSource::PartialMatching),
                        None => (otsu_threshold(&u, cfg.otsu_bins), ThresholdSource::Otsu),
                    };
                    (p.map_err(wrap)?, ps, n.map_err(wrap)?, ns)
                }
                ThresholdRule::FixedPercentile { positive, negative } => (
                    u.percentile(positive),
                    ThresholdSource::Percentile,
                    u.percentile(negative),
                    ThresholdSource::Percentile,
                ),
            };
            Ok(Fitted {
                occ,
                eta_p,
                eta_n,
                pos_src,
                neg_src,
            })
        };

        let fitted = par::map_range(cfg.k, fit_one)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let positive_source = fitted[0].pos_src;
        let negative_source = fitted[0].neg_src;
        let mut occs = Vec::with_capacity(cfg.k);
        let mut eta_p = Vec::with_capacity(cfg.k);
        let mut eta_n = Vec::with_capacity(cfg.k);
        for f in fitted {
            occs.push(f.occ);
            eta_p.push(f.eta_p);
            eta_n.push(f.eta_n);
        }
        let mut pl = Self::from_parts(occs, eta_p, eta_n, cfg.vote)?;
        pl.epoch_seed = seed;
        pl.positive_source = positive_source;
        pl.negative_source = negative_source;
        Ok(pl)
    }

    pub fn k(&self) -> usize {
        self.occs.len()
    }

    pub fn dim(&self) -> usize {
        self.occs[0].dim()
    }

    pub fn occs(&self) -> &[GaussianOcc] {
        &self.occs
    }

    pub fn eta_p(&self) -> &[f64] {
        &self.eta_p
    }

    pub fn eta_n(&self) -> &[f64] {
        &self.eta_n
    }

    pub fn vote(&self) -> Vote {
        self.vote
    }

    /// Per-model scores of one representation.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.occs.iter().map(|o| o.score(x)).collect()
    }

    /// Label from per-model scores; the flag reports a positive/negative
    /// conflict (resolved as unknown).
    pub fn decide(&self, scores: &[f64]) -> (PseudoLabel, bool) {
        let k = self.k();
        let pos = scores.iter().zip(&self.eta_p).filter(|(s, e)| s > e).count();
        let neg = scores.iter().zip(&self.eta_n).filter(|(s, e)| s < e).count();
        let (is_pos, is_neg) = match self.vote {
            Vote::Unanimous => (pos == k, neg == k),
            Vote::Majority => (2 * pos > k, 2 * neg > k),
        };
        match (is_pos, is_neg) {
            (true, true) => (PseudoLabel::Unknown, true),
            (true, false) => (PseudoLabel::Anomalous, false),
            (false, true) => (PseudoLabel::Normal, false),
            (false, false) => (PseudoLabel::Unknown, false),
        }
    }

    pub fn assign(&self, x: &[f64]) -> Result<PseudoLabel> {
        if x.len() != self.dim() {
            return Err(SpadeError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self.decide(&self.scores(x)?).0)
    }

    pub fn assign_batch(&self, x: &Matrix) -> Result<(Vec<PseudoLabel>, AssignCounts)> {
        if x.rows() > 0 && x.cols() != self.dim() {
            return Err(SpadeError::DimensionMismatch {
                expected: self.dim(),
                actual: x.cols(),
            });
        }
        let decided = par::map_range(x.rows(), |i| {
            self.decide(&self.scores(x.row(i)).expect("dimension checked"))
        });
        let mut counts = AssignCounts::default();
        let labels = decided
            .into_iter()
            .map(|(l, conflict)| {
                match l {
                    PseudoLabel::Anomalous => counts.n_pos += 1,
                    PseudoLabel::Normal => counts.n_neg += 1,
                    PseudoLabel::Unknown => counts.n_unknown += 1,
                }
                counts.conflicts += conflict as usize;
                l
            })
            .collect();
        Ok((labels, counts))
    }

    /// Per-model scores for each row, `[row][k]`.
    pub fn score_matrix(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        if x.rows() > 0 && x.cols() != self.dim() {
            return Err(SpadeError::DimensionMismatch {
                expected: self.dim(),
                actual: x.cols(),
            });
        }
        Ok(par::map_range(x.rows(), |i| self.scores(x.row(i)).expect("dimension checked")))
    }
}
