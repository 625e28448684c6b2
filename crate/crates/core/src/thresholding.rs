//! Threshold selection for pseudo-labeling.
//!
//! Partial matching picks the unlabeled-score cut whose retained side is
//! closest, in 1-D Wasserstein distance, to the scores of the labeled class.
//! Otsu's method covers the class that has no labels.

use std::io::Write;

use crate::error::{Result, SpadeError};
use crate::par;

/// Nonempty, finite, ascending scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet(Vec<f64>);

impl ScoreSet {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SpadeError::invalid("score set is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpadeError::NonFinite("scores".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(ScoreSet(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Value below which `p` percent of the scores lie (linear interpolation).
    pub fn percentile(&self, p: f64) -> f64 {
        let v = &self.0;
        let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }

    /// Percent of scores strictly below `x`.
    pub fn rank_percent(&self, x: f64) -> f64 {
        100.0 * self.0.partition_point(|&v| v < x) as f64 / self.0.len() as f64
    }
}

/// W₁ between two sorted samples; both nonempty.
fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    // Quantile levels of `a` sit at multiples of m, those of `b` at multiples
    // of n, on a common integer axis of length n*m.
    let (n, m) = (a.len() as u128, b.len() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut q: u128 = 0;
    let mut total = 0.0;
    while (i as u128) < n && (j as u128) < m {
        let qa = (i as u128 + 1) * m;
        let qb = (j as u128 + 1) * n;
        let next = qa.min(qb);
        total += (next - q) as f64 * (a[i] - b[j]).abs();
        q = next;
        if qa == next {
            i += 1;
        }
        if qb == next {
            j += 1;
        }
    }
    total / (n * m) as f64
}

/// 1-Wasserstein distance between two empirical distributions, the integral
/// over `q` of `|F_a⁻¹(q) − F_b⁻¹(q)|`.
pub fn wasserstein1(a: &ScoreSet, b: &ScoreSet) -> f64 {
    w1_sorted(a.values(), b.values())
}

/// Which side of the threshold the unlabeled subset is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `{u > η}`; ties prefer the larger η.
    Above,
    /// `{u < η}`; ties prefer the smaller η.
    Below,
}

/// One point of a partial-matching scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPoint {
    pub eta: f64,
    /// Number of unlabeled scores on the retained side.
    pub retained: usize,
    /// `None` when the retained side is empty.
    pub distance: Option<f64>,
}

/// Candidate thresholds: one point below the minimum, midpoints between
/// consecutive distinct scores, one point above the maximum.
pub fn candidate_grid(unlabeled: &ScoreSet) -> Vec<f64> {
    let v = unlabeled.values();
    let (lo, hi) = (unlabeled.min(), unlabeled.max());
    let pad = (hi - lo).max(lo.abs().max(hi.abs())).max(1.0);
    let mut grid = Vec::with_capacity(v.len() + 1);
    grid.push(lo - pad);
    for w in v.windows(2) {
        if w[1] > w[0] {
            grid.push(w[0] + (w[1] - w[0]) / 2.0);
        }
    }
    grid.push(hi + pad);
    grid
}

/// W₁ against the labeled scores for every candidate threshold.
pub fn match_curve(labeled: &ScoreSet, unlabeled: &ScoreSet, side: Side) -> Vec<MatchPoint> {
    let grid = candidate_grid(unlabeled);
    let u = unlabeled.values();
    par::map_slice(&grid, |&eta| {
        let subset = match side {
            Side::Above => &u[u.partition_point(|&x| x <= eta)..],
            Side::Below => &u[..u.partition_point(|&x| x < eta)],
        };
        MatchPoint {
            eta,
            retained: subset.len(),
            distance: (!subset.is_empty()).then(|| w1_sorted(labeled.values(), subset)),
        }
    })
}

fn argmin(curve: &[MatchPoint], side: Side) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    // The grid is ascending; `Above` keeps the last minimum, `Below` the first.
    for p in curve {
        let Some(d) = p.distance else { continue };
        let better = match best {
            None => true,
            Some((bd, _)) => match side {
                Side::Above => d <= bd,
                Side::Below => d < bd,
            },
        };
        if better {
            best = Some((d, p.eta));
        }
    }
    best.map(|(_, eta)| eta).ok_or(SpadeError::NoFeasibleThreshold)
}

/// Threshold η^p minimizing W₁(labeled positives, `{u > η}`).
pub fn partial_match_positive(labeled_pos: &ScoreSet, unlabeled: &ScoreSet) -> Result<f64> {
    argmin(&match_curve(labeled_pos, unlabeled, Side::Above), Side::Above)
}

/// Threshold η^n minimizing W₁(labeled negatives, `{u < η}`).
pub fn partial_match_negative(labeled_neg: &ScoreSet, unlabeled: &ScoreSet) -> Result<f64> {
    argmin(&match_curve(labeled_neg, unlabeled, Side::Below), Side::Below)
}

pub const DEFAULT_OTSU_BINS: usize = 256;

/// Interior bin edges of an equal-width histogram over `[min, max]`.
pub fn otsu_edges(scores: &ScoreSet, bins: usize) -> Vec<f64> {
    let (lo, hi) = (scores.min(), scores.max());
    let width = (hi - lo) / bins as f64;
    (1..bins).map(|i| lo + width * i as f64).collect()
}

/// Otsu threshold: the bin edge maximizing between-class variance of the
/// raw scores split at that edge (`< edge` vs `>= edge`). Ties go to the
/// smallest edge.
pub fn otsu_threshold(scores: &ScoreSet, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(SpadeError::invalid("Otsu needs at least 2 bins"));
    }
    if scores.min() == scores.max() {
        return Err(SpadeError::invalid("Otsu needs at least two distinct scores"));
    }
    let edges = otsu_edges(scores, bins);
    let mut count = vec![0usize; bins];
    let mut sum = vec![0.0f64; bins];
    for &v in scores.values() {
        let b = edges.partition_point(|&e| e <= v);
        count[b] += 1;
        sum[b] += v;
    }
    let n = scores.len() as f64;
    let total: f64 = sum.iter().sum();
    let (mut w0, mut s0) = (0usize, 0.0f64);
    let mut best = (f64::NEG_INFINITY, edges[0]);
    for (i, &edge) in edges.iter().enumerate() {
        w0 += count[i];
        s0 += sum[i];
        let w1 = scores.len() - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let (p0, p1) = (w0 as f64 / n, w1 as f64 / n);
        let (m0, m1) = (s0 / w0 as f64, (total - s0) / w1 as f64);
        let between = p0 * p1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, edge);
        }
    }
    Ok(best.1)
}

/// Writes an `(eta, retained, w1)` scan as CSV; infeasible points have an
/// empty distance field.
pub fn write_match_curve<W: Write>(out: W, curve: &[MatchPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eta", "retained", "w1"])?;
    for p in curve {
        w.write_record([
            p.eta.to_string(),
            p.retained.to_string(),
            p.distance.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| SpadeError::io("<match curve>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> ScoreSet {
        ScoreSet::new(v.to_vec()).unwrap()
    }

    /// Midpoint-rule integral of |F_a⁻¹ − F_b⁻¹| on a 0.001 grid.
    fn w1_grid(a: &ScoreSet, b: &ScoreSet) -> f64 {
        let q = |v: &[f64], p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        (0..1000)
            .map(|k| {
                let p = (k as f64 + 0.5) / 1000.0;
                (q(a.values(), p) - q(b.values(), p)).abs()
            })
            .sum::<f64>()
            / 1000.0
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1(&s(&[3.0, 1.0, 2.0]), &s(&[1.0, 2.0, 3.0])), 0.0);
        assert!((wasserstein1(&s(&[0.0, 1.0]), &s(&[1.0, 2.0])) - 1.0).abs() < 1e-15);
        let a = s(&[0.0]);
        let b = s(&[0.0, 0.0, 10.0]);
        assert!((wasserstein1(&a, &b) - 10.0 / 3.0).abs() < 1e-12);
        assert!((w1_grid(&a, &b) - 10.0 / 3.0).abs() < 1e-2);
    }

    #[test]
    fn empty_rejected() {
        assert!(ScoreSet::new(vec![]).is_err());
        assert!(ScoreSet::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn positive_match_finds_top_cluster() {
        let eta = partial_match_positive(&s(&[10.0, 11.0]), &s(&[0.0, 1.0, 10.0, 11.0])).unwrap();
        assert!(eta > 1.0 && eta <= 10.0, "{eta}");
    }

    #[test]
    fn negative_match_finds_bottom_cluster() {
        let eta = partial_match_negative(&s(&[0.0, 1.0]), &s(&[0.0, 1.0, 10.0, 11.0])).unwrap();
        assert!((1.0..10.0).contains(&eta), "{eta}");
    }

    #[test]
    fn same_distribution_keeps_everything() {
        let u = s(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let grid = candidate_grid(&u);
        assert_eq!(partial_match_positive(&u, &u).unwrap(), grid[0]);
        assert_eq!(partial_match_negative(&u, &u).unwrap(), *grid.last().unwrap());
    }

    #[test]
    fn single_negative_at_minimum() {
        let u = s(&[1.0, 2.0, 3.0, 4.0]);
        let eta = partial_match_negative(&s(&[1.0]), &u).unwrap();
        assert_eq!(eta, 1.5);
    }

    #[test]
    fn gap_below_labeled_picks_topmost() {
        let u = s(&[0.0, 1.0, 2.0, 3.0]);
        let eta = partial_match_positive(&s(&[100.0, 101.0]), &u).unwrap();
        assert_eq!(eta, 2.5);
    }

    #[test]
    fn otsu_bimodal() {
        let sc = s(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0]);
        let t = otsu_threshold(&sc, 256).unwrap();
        assert!(t > 0.0 && t < 10.0);
        assert!(sc.values().iter().all(|&v| (v < t) == (v == 0.0)));
        assert!(otsu_threshold(&s(&[2.0, 2.0]), 256).is_err());
    }

    #[test]
    fn curve_csv_has_header() {
        let curve = match_curve(&s(&[1.0]), &s(&[0.0, 1.0]), Side::Above);
        let mut buf = Vec::new();
        write_match_curve(&mut buf, &curve).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("eta,retained,w1\n"));
        assert_eq!(text.lines().count(), curve.len() + 1);
    }

    #[test]
    fn percentile_helpers() {
        let v = s(&[0.0, 10.0, 20.0, 30.0, 40.0]);
        assert_eq!(v.percentile(50.0), 20.0);
        assert_eq!(v.percentile(90.0), 36.0);
        assert_eq!(v.rank_percent(25.0), 60.0);
    }

    fn vals(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-50.0f64..50.0, 1..max_len)
    }

    proptest! {
        #[test]
        fn w1_metric_axioms(a in vals(30), b in vals(30), c in vals(30), shift in -10.0f64..10.0) {
            let (sa, sb, sc) = (s(&a), s(&b), s(&c));
            let ab = wasserstein1(&sa, &sb);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - wasserstein1(&sb, &sa)).abs() < 1e-9);
            prop_assert!(wasserstein1(&sa, &sc) <= ab + wasserstein1(&sb, &sc) + 1e-9);
            prop_assert_eq!(wasserstein1(&sa, &sa), 0.0);
            let shifted = |v: &[f64]| s(&v.iter().map(|x| x + shift).collect::<Vec<_>>());
            prop_assert!((wasserstein1(&shifted(&a), &shifted(&b)) - ab).abs() < 1e-9);
        }

        #[test]
        fn equal_sizes_pair_sorted(a in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let b: Vec<f64> = a.iter().map(|x| x * 1.7 - 0.3).collect();
            let (sa, sb) = (s(&a), s(&b));
            let direct = sa.values().iter().zip(sb.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
            prop_assert!((wasserstein1(&sa, &sb) - direct).abs() < 1e-12);
        }

        #[test]
        fn partial_match_is_grid_optimal(l in vals(20), u in vals(200), pos in any::<bool>()) {
            let (sl, su) = (s(&l), s(&u));
            let grid = candidate_grid(&su);
            let eta = if pos { partial_match_positive(&sl, &su) } else { partial_match_negative(&sl, &su) }.unwrap();
            prop_assert!(grid.contains(&eta));
            let dist = |e: f64| {
                let sub: Vec<f64> = u.iter().copied().filter(|&x| if pos { x > e } else { x < e }).collect();
                (!sub.is_empty()).then(|| wasserstein1(&sl, &s(&sub)))
            };
            let chosen = dist(eta).unwrap();
            for &g in &grid {
                if let Some(d) = dist(g) {
                    prop_assert!(chosen <= d + 1e-12);
                }
            }
        }
    }
}
