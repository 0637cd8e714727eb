//! Small numeric helpers with deterministic summation order.

/// Neumaier-compensated sum, evaluated in slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(compensated_sum(values) / values.len() as f64)
    }
}

/// Sample (n - 1) standard deviation; `None` for fewer than two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    Some((compensated_sum(&sq) / (values.len() - 1) as f64).sqrt())
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive scores above a random negative, ties counting one
/// half. Uses average ranks over the pooled sample. `None` when either class
/// is empty.
pub fn rank_auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    let (n_pos, n_neg) = (positives.len(), negatives.len());
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut pooled: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of (doubled) ranks of positives; doubling keeps tie averages integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the average (i + j + 2) / 2.
        let avg2 = (i + j + 2) as u128;
        let pos_in_group = pooled[i..=j].iter().filter(|p| p.1).count() as u128;
        rank_sum2 += avg2 * pos_in_group;
        i = j + 1;
    }
    let n_pos_u = n_pos as u128;
    // U = R - n_pos (n_pos + 1) / 2, doubled.
    let u2 = rank_sum2 - n_pos_u * (n_pos_u + 1);
    Some(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Pearson correlation; `None` when fewer than two points or either side
/// has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sxy = compensated_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    let sxx = compensated_sum(&dx.iter().map(|a| a * a).collect::<Vec<_>>());
    let syy = compensated_sum(&dy.iter().map(|b| b * b).collect::<Vec<_>>());
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut s = 0.0;
        for &p in pos {
            for &n in neg {
                s += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn mean_and_std() {
        assert!((mean(&[0.8, 0.9]).unwrap() - 0.85).abs() < 1e-15);
        assert_eq!(mean(&[0.5, 1.0]), Some(0.75));
        let s = sample_std(&[0.8, 0.9]).unwrap();
        assert!((s - 0.1 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sample_std(&[1.0]), None);
        assert_eq!(mean(&[]), None);
    }

    #[test]
    fn compensated_sum_handles_cancellation() {
        assert_eq!(compensated_sum(&[1e16, 1.0, -1e16]), 1.0);
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(rank_auc(&[1.0, 1.0], &[0.0, 0.0, 0.0]), Some(1.0));
        assert_eq!(rank_auc(&[0.3; 4], &[0.3; 7]), Some(0.5));
        assert_eq!(rank_auc(&[], &[1.0]), None);
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), None);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_enumeration(
            pos in proptest::collection::vec(0u8..6, 1..40),
            neg in proptest::collection::vec(0u8..6, 1..40),
        ) {
            let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
            let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
            let got = rank_auc(&pos, &neg).unwrap();
            prop_assert!((got - brute_auc(&pos, &neg)).abs() < 1e-12);
        }
    }
}
