//! Statistical evaluation: RMSE, cross correlation, and the similarity
//! between two wind-speed/power joint distributions.

use crate::error::{Error, Result};

/// Root mean squared error between predictions and observations.
pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != obs.len() {
        return Err(Error::Size(format!(
            "rmse: lengths {} and {} (need equal, nonzero)",
            pred.len(),
            obs.len()
        )));
    }
    let sum: f64 = pred.iter().zip(obs).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Pearson correlation coefficient.
pub fn cross_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Size("cross_correlation: need equal lengths >= 2".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("cross_correlation: constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Shared bin edges for a pair of 2-D histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl BinEdges {
    /// Equal-width bins spanning the union range of both point sets.
    pub fn spanning(a: &[(f64, f64)], b: &[(f64, f64)], bins_x: usize, bins_y: usize) -> Result<Self> {
        if bins_x < 2 || bins_y < 2 {
            return Err(Error::Config("need at least 2 bins per axis".into()));
        }
        if a.is_empty() || b.is_empty() {
            return Err(Error::Size("cannot bin empty point sets".into()));
        }
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for (x, y) in a.iter().chain(b) {
            x_min = x_min.min(*x);
            x_max = x_max.max(*x);
            y_min = y_min.min(*y);
            y_max = y_max.max(*y);
        }
        // Degenerate axes get a token width so every point lands in a bin.
        if x_max <= x_min {
            x_max = x_min + 1.0;
        }
        if y_max <= y_min {
            y_max = y_min + 1.0;
        }
        let edges = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
        };
        Ok(Self { x: edges(x_min, x_max, bins_x), y: edges(y_min, y_max, bins_y) })
    }

    fn locate(edges: &[f64], v: f64) -> Option<usize> {
        let n = edges.len() - 1;
        if v < edges[0] || v > edges[n] {
            return None;
        }
        if v == edges[n] {
            return Some(n - 1);
        }
        let w = (edges[n] - edges[0]) / n as f64;
        let i = (((v - edges[0]) / w) as usize).min(n - 1);
        // Float rounding can land one bin off; nudge into place.
        if v < edges[i] {
            Some(i - 1)
        } else if v >= edges[i + 1] {
            Some(i + 1)
        } else {
            Some(i)
        }
    }
}

/// Normalized 2-D histogram over (wind speed, power) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDensity {
    pub edges: BinEdges,
    /// Row-major masses, rows indexed by x bin; sums to 1.
    pub mass: Vec<f64>,
}

impl JointDensity {
    pub fn from_points(points: &[(f64, f64)], edges: &BinEdges) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Size("cannot estimate a density from no points".into()));
        }
        let nx = edges.x.len() - 1;
        let ny = edges.y.len() - 1;
        let mut mass = vec![0.0; nx * ny];
        let mut kept = 0usize;
        for (x, y) in points {
            if let (Some(i), Some(j)) = (BinEdges::locate(&edges.x, *x), BinEdges::locate(&edges.y, *y)) {
                mass[i * ny + j] += 1.0;
                kept += 1;
            }
        }
        if kept == 0 {
            return Err(Error::Size("no points fall inside the bin range".into()));
        }
        for m in &mut mass {
            *m /= kept as f64;
        }
        Ok(Self { edges: edges.clone(), mass })
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Jensen-Shannon divergence with base-2 logarithms, so the result lies
/// in [0, 1]. Empty bins follow the 0·log 0 = 0 convention.
pub fn jensen_shannon_divergence(p: &JointDensity, q: &JointDensity) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::Config("densities use different bin edges".into()));
    }
    let mut jsd = 0.0;
    for (a, b) in p.mass.iter().zip(&q.mass) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            jsd += 0.5 * a * (a / m).log2();
        }
        if *b > 0.0 {
            jsd += 0.5 * b * (b / m).log2();
        }
    }
    Ok(jsd.clamp(0.0, 1.0))
}

/// Power-curve similarity: `1 - JSD` between the joint densities of two
/// (wind speed, power) samples on shared equal-width bins.
pub fn power_curve_similarity(
    reference: &[(f64, f64)],
    candidate: &[(f64, f64)],
    bins_x: usize,
    bins_y: usize,
) -> Result<f64> {
    let edges = BinEdges::spanning(reference, candidate, bins_x, bins_y)?;
    let p = JointDensity::from_points(reference, &edges)?;
    let q = JointDensity::from_points(candidate, &edges)?;
    Ok(1.0 - jensen_shannon_divergence(&p, &q)?)
}

/// Pairs a wind-speed series with a power series for density estimation.
pub fn pair_series(v: &[f64], p: &[f64]) -> Result<Vec<(f64, f64)>> {
    if v.len() != p.len() || v.is_empty() {
        return Err(Error::Size("pair_series: need equal nonzero lengths".into()));
    }
    Ok(v.iter().zip(p).map(|(a, b)| (*a, *b)).collect())
}

/// Default binning used when nothing else is configured.
pub const DEFAULT_BINS: usize = 30;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let v = rmse(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((v - 5.0_f64.sqrt()).abs() < 1e-12);
        // Constant offset c gives rmse = |c|.
        let pred = [3.5, 4.5, 10.5];
        let obs = [3.0, 4.0, 10.0];
        assert!((rmse(&pred, &obs).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rmse_empty_is_error() {
        assert!(matches!(rmse(&[], &[]), Err(Error::Size(_))));
    }

    #[test]
    fn correlation_examples() {
        let x = [1.0, 2.0, 3.0];
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((cross_correlation(&x, &affine).unwrap() - 1.0).abs() < 1e-12);
        let negated: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cross_correlation(&x, &negated).unwrap() + 1.0).abs() < 1e-12);
        let r = cross_correlation(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn correlation_constant_series_undefined() {
        assert!(matches!(
            cross_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn identical_samples_have_similarity_one() {
        let pts: Vec<(f64, f64)> = (0..500).map(|i| (i as f64 * 0.01, (i as f64 * 0.02).sin())).collect();
        let s = power_curve_similarity(&pts, &pts, 20, 20).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_samples_have_similarity_zero() {
        let a: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 * 0.001, 0.0)).collect();
        let b: Vec<(f64, f64)> = (0..100).map(|i| (100.0 + i as f64 * 0.001, 1.0)).collect();
        let s = power_curve_similarity(&a, &b, 10, 10).unwrap();
        assert!(s.abs() < 1e-12, "similarity {s}");
    }

    #[test]
    fn similarity_is_symmetric_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<(f64, f64)> = (0..400).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..1.0))).collect();
        let b: Vec<(f64, f64)> = (0..400).map(|_| (rng.random_range(2.0..12.0), rng.random_range(0.0..1.0))).collect();
        let ab = power_curve_similarity(&a, &b, 15, 15).unwrap();
        let ba = power_curve_similarity(&b, &a, 15, 15).unwrap();
        assert!((ab - ba).abs() < 1e-12);

        let mut shuffled = a.clone();
        shuffled.reverse();
        let s2 = power_curve_similarity(&shuffled, &b, 15, 15).unwrap();
        assert!((ab - s2).abs() < 1e-12);
    }

    #[test]
    fn two_draws_from_same_process_are_similar() {
        // Sampling oracle: two seeded draws from one synthetic power
        // curve remain close in distribution.
        let draw = |seed: u64| -> Vec<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10_000)
                .map(|_| {
                    let v: f64 = rng.random_range(0.0..20.0);
                    let p = (v.powi(3) / 1728.0).clamp(0.0, 1.0) + rng.random_range(-0.02..0.02);
                    (v, p)
                })
                .collect()
        };
        let s = power_curve_similarity(&draw(7), &draw(8), DEFAULT_BINS, DEFAULT_BINS).unwrap();
        assert!(s > 0.9, "similarity {s}");
    }

    #[test]
    fn degenerate_binning_rejected() {
        let pts = vec![(0.0, 0.0), (1.0, 1.0)];
        assert!(matches!(
            power_curve_similarity(&pts, &pts, 1, 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn density_mass_sums_to_one() {
        let pts: Vec<(f64, f64)> = (0..97).map(|i| (i as f64, (i * i) as f64)).collect();
        let edges = BinEdges::spanning(&pts, &pts, 13, 7).unwrap();
        let d = JointDensity::from_points(&pts, &edges).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        assert!(d.mass.iter().all(|m| *m >= 0.0));
    }
}
