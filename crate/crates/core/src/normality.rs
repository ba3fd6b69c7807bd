//! Gaussianity inspection of a class: projections onto the leading principal
//! axes and standard-normal Q-Q pairs, ready for histogram / Q-Q plotting.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::prototype::sample_moments;

#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    /// 0 for the leading axis.
    pub index: usize,
    /// Sample variance of the projections.
    pub variance: f64,
    /// Projections of the centered data, in input row order.
    pub projections: Vec<f64>,
    /// `(theoretical, sample)` quantile pairs of the standardized projections.
    pub qq_points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalityReport {
    pub requested: usize,
    pub rank: usize,
    pub components: Vec<ComponentReport>,
}

impl NormalityReport {
    /// Pearson correlation between theoretical and sample quantiles.
    pub fn qq_correlation(&self, component: usize) -> f64 {
        let pts = &self.components[component].qq_points;
        let n = pts.len() as f64;
        let (mx, my) = pts
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in pts {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        sxy / (sxx * syy).sqrt()
    }
}

/// Projects `rows` onto their top-`k` principal axes. `k` is clamped to the
/// numerical rank with a warning; constant data yields an empty report.
pub fn principal_component_report(rows: &[&[f64]], k: usize) -> Result<NormalityReport> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::EmptyInput(format!(
            "normality report needs at least 3 vectors, got {n}"
        )));
    }
    let (mean, _) = sample_moments(rows)?;
    let d = mean.len();
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let rank = if top > 0.0 {
        order
            .iter()
            .filter(|&&i| svd.singular_values[i] > top * 1e-7)
            .count()
    } else {
        0
    };
    if k > rank {
        log::warn!("requested {k} principal components but the data has rank {rank}");
    }
    let k_eff = k.min(rank);
    let normal = Normal::standard();
    let theoretical: Vec<f64> = (1..=n)
        .map(|i| normal.inverse_cdf((i as f64 - 0.5) / n as f64))
        .collect();

    let components = order[..k_eff]
        .iter()
        .enumerate()
        .map(|(index, &i)| {
            let axis = v_t.row(i).transpose();
            let projections: Vec<f64> = (&centered * &axis).iter().copied().collect();
            let m = projections.iter().sum::<f64>() / n as f64;
            let variance =
                projections.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / (n - 1) as f64;
            let sd = variance.sqrt();
            let mut standardized: Vec<f64> = projections.iter().map(|p| (p - m) / sd).collect();
            standardized.sort_by(f64::total_cmp);
            let qq_points = theoretical.iter().copied().zip(standardized).collect();
            ComponentReport {
                index,
                variance,
                projections,
                qq_points,
            }
        })
        .collect();
    Ok(NormalityReport {
        requested: k,
        rank,
        components,
    })
}
