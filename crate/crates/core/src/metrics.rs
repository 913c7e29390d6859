//! Ranking and reconstruction metrics.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::DepthFrame;

/// Area under the ROC curve as the normalized Mann-Whitney U statistic:
/// `P(score_pos > score_neg) + 0.5 * P(tie)`.
///
/// Ranks are handled in doubled integer form so that the statistic is an
/// exact integer before the single final division.
pub fn auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled average rank of a tie block spanning 1-based ranks lo..=hi is lo + hi
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum2 += doubled;
            }
        }
        i = j + 1;
    }
    // 2U = 2R - n_pos(n_pos + 1)
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// ROC operating points `(false positive rate, true positive rate)` from
/// the strictest threshold down, one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::with_capacity(order.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Peak signal-to-noise ratio for unit-range frames, in dB. Identical
/// frames give `f64::INFINITY`.
pub fn psnr(a: &DepthFrame, b: &DepthFrame) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let x = a.normalized_or_err("psnr")?;
    let y = b.normalized_or_err("psnr")?;
    Ok(psnr_from_mse(mse(x, y)))
}

pub fn mse(x: &[f32], y: &[f32]) -> f64 {
    let sum: f64 = x
        .iter()
        .zip(y)
        .map(|(p, q)| {
            let d = *p as f64 - *q as f64;
            d * d
        })
        .sum();
    sum / x.len() as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(1.0 / mse)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Provenance;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(auc_binary(&s, &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc_binary(&s, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(auc_binary(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auc_binary(&s, &[true; 4]), Err(Error::UndefinedAuc));
        assert!(auc_binary(&s, &[true]).is_err());
    }

    #[test]
    fn psnr_values() {
        let a = DepthFrame::normalized(2, 1, vec![0.2, 0.4], Provenance::Synthetic).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        let b = DepthFrame::normalized(2, 1, vec![0.3, 0.5], Provenance::Synthetic).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        let c = DepthFrame::normalized(1, 2, vec![0.3, 0.5], Provenance::Synthetic).unwrap();
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    proptest! {
        #[test]
        fn auc_is_symmetric_under_label_flip(raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..60)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = auc_binary(&scores, &labels).unwrap();
            let b = auc_binary(&scores, &flipped).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn psnr_symmetric_and_shift_invariant(vals in proptest::collection::vec((0.1f32..0.8, 0.1f32..0.8), 1..40), c in 0.0f32..0.19) {
            let n = vals.len();
            let a: Vec<f32> = vals.iter().map(|v| v.0).collect();
            let b: Vec<f32> = vals.iter().map(|v| v.1).collect();
            let fa = DepthFrame::normalized(n, 1, a.clone(), Provenance::Synthetic).unwrap();
            let fb = DepthFrame::normalized(n, 1, b.clone(), Provenance::Synthetic).unwrap();
            prop_assert_eq!(psnr(&fa, &fb).unwrap(), psnr(&fb, &fa).unwrap());
            let sa: Vec<f32> = a.iter().map(|v| v + c).collect();
            let sb: Vec<f32> = b.iter().map(|v| v + c).collect();
            let shifted = psnr_from_mse(mse(&sa, &sb));
            let base = psnr_from_mse(mse(&a, &b));
            prop_assert!((shifted - base).abs() < 1e-3 || (shifted.is_infinite() && base.is_infinite()));
        }
    }
}
