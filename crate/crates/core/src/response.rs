//! Weighted response means and their conditional variance.
//!
//! `μ̂ₖ = Σwy/Σw` and `var(μ̂ₖ) = s²ₖ / ESSₖ`, where `s²ₖ` is the unweighted response
//! variance of study `k` with divisor `nₖ` (not `nₖ − 1`). Since `ESSₖ ≤ nₖ` this never
//! undercuts the uniform-weight variance `s²ₖ/nₖ`. Intervals use the normal approximation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::balance::{self, BalanceError};
use crate::data::CovariateTable;
use crate::propensity::quantile_sorted;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResponseError {
    #[error("the table has no response column")]
    NoResponseColumn,
    #[error("study {study}: {source}")]
    Weights { study: u8, source: BalanceError },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResponse {
    pub n: usize,
    pub mean: f64,
    /// Unweighted response variance, divisor `n`.
    pub s2: f64,
    pub ess: f64,
    pub var_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEstimate {
    pub studies: [StudyResponse; 2],
    /// `μ̂₁ − μ̂₀`
    pub difference: f64,
    pub std_error: f64,
    pub ci_level: f64,
    pub ci: [f64; 2],
}

fn study_response(y: &[f64], w: &[f64], study: u8) -> Result<StudyResponse, ResponseError> {
    let err = |source| ResponseError::Weights { study, source };
    let mean = balance::weighted_mean(y, w).map_err(err)?;
    let n = y.len();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let s2 = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / n as f64;
    let sum: f64 = w.iter().sum();
    let ess = sum * sum / w.iter().map(|v| v * v).sum::<f64>();
    Ok(StudyResponse {
        n,
        mean,
        s2,
        ess,
        var_mean: s2 / ess,
    })
}

/// Two-sided normal quantile `z` with `P(|Z| ≤ z) = level`.
pub fn normal_critical(level: f64) -> Result<f64, ResponseError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ResponseError::InvalidLevel(level));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Estimates from explicit per-study responses and weights.
pub fn estimate_from(
    y: [&[f64]; 2],
    w: [&[f64]; 2],
    ci_level: f64,
) -> Result<ResponseEstimate, ResponseError> {
    let z = normal_critical(ci_level)?;
    let studies = [
        study_response(y[0], w[0], 0)?,
        study_response(y[1], w[1], 1)?,
    ];
    let difference = studies[1].mean - studies[0].mean;
    let std_error = (studies[0].var_mean + studies[1].var_mean).sqrt();
    Ok(ResponseEstimate {
        studies,
        difference,
        std_error,
        ci_level,
        ci: [difference - z * std_error, difference + z * std_error],
    })
}

pub fn estimate_response(
    table: &CovariateTable,
    weights: &[Vec<f64>; 2],
    ci_level: f64,
) -> Result<ResponseEstimate, ResponseError> {
    let y = table
        .response_by_study()
        .ok_or(ResponseError::NoResponseColumn)?;
    estimate_from([&y[0], &y[1]], [&weights[0], &weights[1]], ci_level)
}

/// Distribution of a quantity over replications; `None` entries count as NA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub na_count: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
    /// Sample SD (divisor `count − 1`); `None` below two values.
    pub sd: Option<f64>,
}

/// Min, quartiles (linear interpolation), mean, max and sample SD of the non-NA values.
pub fn difference_summary(values: &[Option<f64>]) -> DistributionSummary {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    let na_count = values.len() - v.len();
    v.sort_by(f64::total_cmp);
    let count = v.len();
    if count == 0 {
        return DistributionSummary {
            count,
            na_count,
            min: None,
            q1: None,
            median: None,
            mean: None,
            q3: None,
            max: None,
            sd: None,
        };
    }
    let mean = v.iter().sum::<f64>() / count as f64;
    let sd = (count > 1)
        .then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt());
    DistributionSummary {
        count,
        na_count,
        min: Some(v[0]),
        q1: Some(quantile_sorted(&v, 0.25)),
        median: Some(quantile_sorted(&v, 0.5)),
        mean: Some(mean),
        q3: Some(quantile_sorted(&v, 0.75)),
        max: Some(v[count - 1]),
        sd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_weights_reduce_to_plain_estimates() {
        let y0 = [1.0, 2.0, 3.0, 6.0];
        let y1 = [2.0, 2.5];
        let e = estimate_from([&y0, &y1], [&[1.0; 4], &[0.3; 2]], 0.95).unwrap();
        assert_abs_diff_eq!(e.studies[0].mean, 3.0);
        // s² with divisor n: (4 + 1 + 0 + 9)/4
        assert_abs_diff_eq!(e.studies[0].s2, 3.5);
        assert_abs_diff_eq!(e.studies[0].var_mean, 3.5 / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.difference, 2.25 - 3.0, epsilon = 1e-14);
    }

    #[test]
    fn unequal_weights_inflate_variance() {
        let y = [1.0, 2.0, 3.0];
        let e = estimate_from([&y, &y], [&[2.0, 1.0, 1.0], &[1.0; 3]], 0.95).unwrap();
        let s2 = 2.0 / 3.0;
        assert_abs_diff_eq!(e.studies[0].ess, 16.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.studies[0].var_mean, 6.0 / 16.0 * s2, epsilon = 1e-12);
        assert_abs_diff_eq!(e.studies[0].mean, 7.0 / 4.0);
    }

    #[test]
    fn ci_matches_classical_two_sample_interval() {
        let y0 = [0.2, 1.1, -0.3, 0.8, 0.5];
        let y1 = [1.5, 0.9, 2.2];
        let e = estimate_from([&y0, &y1], [&[1.0; 5], &[1.0; 3]], 0.9).unwrap();
        let var = |y: &[f64]| {
            let m = y.iter().sum::<f64>() / y.len() as f64;
            y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64 / y.len() as f64
        };
        let se = (var(&y0) + var(&y1)).sqrt();
        let z = 1.6448536269514722;
        assert_abs_diff_eq!(e.ci[0], e.difference - z * se, epsilon = 1e-12);
        assert_abs_diff_eq!(e.ci[1], e.difference + z * se, epsilon = 1e-12);
    }

    #[test]
    fn invalid_level_is_rejected() {
        assert_eq!(normal_critical(1.0), Err(ResponseError::InvalidLevel(1.0)));
    }

    #[test]
    fn summary_examples() {
        let one = difference_summary(&[Some(0.4)]);
        assert_eq!(
            (one.min, one.q1, one.median, one.q3, one.max),
            (Some(0.4), Some(0.4), Some(0.4), Some(0.4), Some(0.4))
        );
        assert_eq!(one.sd, None);

        let two = difference_summary(&[Some(-1.0), None, Some(1.0)]);
        assert_eq!(two.na_count, 1);
        assert_abs_diff_eq!(two.mean.unwrap(), 0.0);
        assert_abs_diff_eq!(two.sd.unwrap(), 2.0_f64.sqrt(), epsilon = 1e-15);

        let empty = difference_summary(&[None]);
        assert_eq!((empty.count, empty.na_count, empty.mean), (0, 1, None));
    }
}
