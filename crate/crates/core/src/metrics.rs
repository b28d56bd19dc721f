//! Ranking and error metrics for the direct and enduring predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Direct-propensity AUC.
    pub auc: f64,
    /// Spearman correlation of predicted and realized enduring amount.
    pub corr: f64,
    /// Normalized Gini coefficient of the enduring amount.
    pub coeff: f64,
    pub nrmse: f64,
    pub nmae: f64,
}

impl MetricReport {
    /// All five metrics from direct scores/labels and amount
    /// predictions/actuals.
    pub fn compute(direct_scores: &[f64], direct_labels: &[bool], amount_pred: &[f64], amount_actual: &[f64]) -> Result<Self> {
        let (nrmse, nmae) = error_metrics(amount_pred, amount_actual)?;
        Ok(Self {
            auc: auc(direct_scores, direct_labels)?,
            corr: spearman(amount_pred, amount_actual)?,
            coeff: normalized_gini(amount_pred, amount_actual)?,
            nrmse,
            nmae,
        })
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("length {a} vs {b}")));
    }
    Ok(())
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Mann–Whitney AUC; tied positive/negative pairs count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    check_finite(scores, "auc scores")?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::UndefinedMetric("spearman needs at least two points".into()));
    }
    check_finite(x, "spearman x")?;
    check_finite(y, "spearman y")?;
    pearson(&average_ranks(x), &average_ranks(y)).ok_or_else(|| Error::UndefinedMetric("spearman of a constant vector".into()))
}

/// Unnormalized Gini of `actuals` visited in descending `key` order. Within
/// a group of tied keys each actual is replaced by the group mean, which
/// equals the average over all orderings of the group.
fn gini(key: &[f64], actuals: &[f64]) -> f64 {
    let n = actuals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key[b].total_cmp(&key[a]));
    let total: f64 = actuals.iter().sum();
    let mut cum = 0.0;
    let mut lorenz = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && key[order[end]] == key[order[start]] {
            end += 1;
        }
        let mean = order[start..end].iter().map(|&k| actuals[k]).sum::<f64>() / (end - start) as f64;
        for _ in start..end {
            cum += mean;
            lorenz += cum / total;
        }
        start = end;
    }
    let nf = n as f64;
    lorenz / nf - (nf + 1.0) / (2.0 * nf)
}

/// Gini of actuals ranked by prediction over Gini of actuals ranked by
/// themselves.
pub fn normalized_gini(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), actuals.len())?;
    check_finite(predictions, "gini predictions")?;
    check_finite(actuals, "gini actuals")?;
    if actuals.iter().any(|&a| a < 0.0) {
        return Err(Error::Domain("gini actuals must be nonnegative".into()));
    }
    if actuals.iter().sum::<f64>() <= 0.0 {
        return Err(Error::UndefinedMetric("gini of all-zero actuals".into()));
    }
    let best = gini(actuals, actuals);
    if best <= 0.0 {
        return Err(Error::UndefinedMetric("gini of constant actuals".into()));
    }
    Ok(gini(predictions, actuals) / best)
}

/// `(RMSE, MAE)` divided by the mean of `actuals`.
pub fn error_metrics(predictions: &[f64], actuals: &[f64]) -> Result<(f64, f64)> {
    check_lengths(predictions.len(), actuals.len())?;
    check_finite(predictions, "error predictions")?;
    check_finite(actuals, "error actuals")?;
    if actuals.is_empty() {
        return Err(Error::UndefinedMetric("error metrics of an empty sample".into()));
    }
    let n = actuals.len() as f64;
    let mean = actuals.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(Error::UndefinedMetric("error metrics need a positive mean actual".into()));
    }
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, a) in predictions.iter().zip(actuals) {
        se += (p - a) * (p - a);
        ae += (p - a).abs();
    }
    Ok(((se / n).sqrt() / mean, ae / n / mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_hand_cases() {
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.2, 0.9], &[true, true, false]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        // Pairs (pos, neg): (0.6,0.3)=1, (0.6,0.7)=0, (0.3,0.3)=1/2, (0.3,0.7)=0.
        assert_eq!(auc(&[0.6, 0.3, 0.3, 0.7], &[true, true, false, false]).unwrap(), 0.375);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[0.1], &[true, false]), Err(Error::Shape(_))));
    }

    #[test]
    fn spearman_hand_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedMetric(_))));
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn gini_hand_cases() {
        let actual = [4.0, 0.0, 3.0, 1.0];
        assert_eq!(normalized_gini(&actual, &actual).unwrap(), 1.0);
        assert_eq!(normalized_gini(&[7.0; 4], &actual).unwrap(), 0.0);
        // Predicted order visits 3,1,0,4: Lorenz 3/8,4/8,4/8,8/8 → 0.59375 − 0.625.
        // Perfect order 4,3,1,0: 4/8,7/8,8/8,8/8 → 0.84375 − 0.625.
        let g = normalized_gini(&[0.1, 0.2, 0.4, 0.3], &actual).unwrap();
        assert!((g - (-0.03125 / 0.21875)).abs() < 1e-15);
        assert!(normalized_gini(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(normalized_gini(&[1.0, 2.0], &[-1.0, 2.0]).is_err());
    }

    #[test]
    fn error_metric_hand_cases() {
        assert_eq!(error_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(error_metrics(&[5.0, 5.0], &[0.0, 10.0]).unwrap(), (1.0, 1.0));
        assert!(matches!(error_metrics(&[1.0], &[0.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn report_bundles_everything() {
        let r = MetricReport::compute(&[0.9, 0.1], &[true, false], &[5.0, 5.0], &[0.0, 10.0]);
        // Constant amount predictions: correlation undefined.
        assert!(r.is_err());
        let r = MetricReport::compute(&[0.9, 0.1], &[true, false], &[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.auc, r.nrmse, r.nmae, r.coeff), (1.0, 0.0, 0.0, 1.0));
        assert!((r.corr - 1.0).abs() < 1e-15);
    }

    fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(any::<bool>(), n).prop_filter("both classes", |l| l.iter().any(|&b| b) && l.iter().any(|&b| !b)),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_is_invariant_to_monotone_transforms((s, l) in scores_and_labels()) {
            let a = auc(&s, &l).unwrap();
            let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - auc(&t, &l).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn spearman_depends_only_on_ranks(x in prop::collection::vec(-5.0f64..5.0, 3..30), seed in 0u64..1000) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + ((i as u64 * 2654435761 + seed) % 7) as f64).collect();
            if let Ok(r) = spearman(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
                let ty: Vec<f64> = y.iter().map(|v| (v / 2.0).exp()).collect();
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((r - spearman(&tx, &ty).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn error_metrics_are_scale_invariant(
            p in prop::collection::vec(0.0f64..50.0, 1..30),
            k in 0.01f64..100.0,
        ) {
            let a: Vec<f64> = p.iter().rev().map(|v| v + 0.5).collect();
            let (r, m) = error_metrics(&p, &a).unwrap();
            let sp: Vec<f64> = p.iter().map(|v| v * k).collect();
            let sa: Vec<f64> = a.iter().map(|v| v * k).collect();
            let (r2, m2) = error_metrics(&sp, &sa).unwrap();
            prop_assert!((r - r2).abs() <= 1e-9 * r.max(1.0));
            prop_assert!((m - m2).abs() <= 1e-9 * m.max(1.0));
        }

        #[test]
        fn gini_is_bounded(p in prop::collection::vec(0.0f64..10.0, 2..30), a in prop::collection::vec(0.0f64..10.0, 2..30)) {
            let n = p.len().min(a.len());
            if let Ok(g) = normalized_gini(&p[..n], &a[..n]) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&g));
                let rev: Vec<f64> = a[..n].iter().map(|v| -v).collect();
                prop_assert!(normalized_gini(&rev, &a[..n]).unwrap() >= -1.0 - 1e-12);
            }
        }
    }
}
