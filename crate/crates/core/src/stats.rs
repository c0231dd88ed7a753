//! Small statistics helpers shared by the estimators and the reports.

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `samples` and the uniform distribution on `[lo, hi)`.
///
/// For `lo = 0, hi = 1` this is the star discrepancy of the point set.
pub fn ks_uniform(samples: &[f64], lo: f64, hi: f64) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let mut sorted: Vec<f64> = samples.iter().map(|x| (x - lo) / (hi - lo)).collect();
    sorted.sort_by(f64::total_cmp);
    ks_uniform_sorted(&sorted)
}

/// As [`ks_uniform`] for samples already sorted and mapped to `[0, 1)`.
pub fn ks_uniform_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let below = i as f64 / n;
        let above = (i + 1) as f64 / n;
        sup = sup.max((x - below).abs()).max((above - x).abs());
    }
    sup
}

/// Weighted KS distance to the uniform law on `[lo, hi)` for points sorted by
/// coordinate. Weights need not be normalized.
pub fn ks_uniform_weighted(points: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let total: f64 = points.iter().map(|p| p.1).sum();
    if total <= 0.0 {
        return 1.0;
    }
    let mut acc = 0.0;
    let mut sup = 0.0f64;
    for &(x, w) in points {
        let u = (x - lo) / (hi - lo);
        sup = sup.max((u - acc / total).abs());
        acc += w;
        sup = sup.max((acc / total - u).abs());
    }
    sup
}

/// Median of a slice (mean of the two central values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Population coefficient of variation `std / mean`.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return f64::INFINITY;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

/// Total-variation distance between two histograms after normalizing each to
/// unit mass.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    if sp <= 0.0 || sq <= 0.0 {
        return 1.0;
    }
    0.5 * p.iter().zip(q).map(|(a, b)| (a / sp - b / sq).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_midpoints_is_half_spacing() {
        let n = 100;
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!((ks_uniform(&pts, 0.0, 1.0) - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn weighted_ks_matches_unweighted() {
        let pts: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 / 50.0 + 0.003).collect();
        let mut sorted = pts.clone();
        sorted.sort_by(f64::total_cmp);
        let weighted: Vec<(f64, f64)> = sorted.iter().map(|&x| (x, 2.0)).collect();
        let a = ks_uniform(&pts, 0.0, 1.0);
        let b = ks_uniform_weighted(&weighted, 0.0, 1.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cv_and_median() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]), 0.0);
        assert!((coefficient_of_variation(&[1.0, 3.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tv_of_disjoint_histograms_is_one() {
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 5.0]), 1.0);
        assert_eq!(total_variation(&[1.0, 1.0], &[3.0, 3.0]), 0.0);
    }
}
