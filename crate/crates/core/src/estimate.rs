//! Point estimators, the rerandomization variance approximation and the
//! block variance estimator behind the Wald intervals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::ExperimentTrajectory;
use crate::numerics::{self, MahalanobisMetric, Matrix, NumericsError, SymmetricMatrix};

pub const DEFAULT_BLOCK_SIZE: usize = 8;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("assignment column at period {period} has {treated} treated of {units}")]
    Unbalanced {
        period: usize,
        treated: usize,
        units: usize,
    },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("carryover estimator needs at least two periods")]
    TooFewPeriods,
    #[error("every period had an empty stay group")]
    NoUsablePeriods,
    #[error("block size {block} invalid for {periods} periods")]
    BlockSize { block: usize, periods: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, EstimateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    NoCarryover,
    FirstOrder,
}

/// Scaling of the stay-group contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StayScaling {
    /// `4/N`, exact for stay groups of size `N/4`.
    #[default]
    Fixed,
    /// Divide by the realized stay-group sizes.
    Ratio,
}

/// Per-period contrasts and their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimates {
    pub regime: Regime,
    /// Number of periods in the experiment.
    pub n_periods: usize,
    /// 1-based period of each entry of `per_period`.
    pub periods: Vec<usize>,
    pub per_period: Vec<f64>,
    pub estimate: f64,
}

impl PeriodEstimates {
    pub fn new(regime: Regime, n_periods: usize, periods: Vec<usize>, per_period: Vec<f64>) -> Result<Self> {
        if periods.len() != per_period.len() || per_period.is_empty() {
            return Err(EstimateError::Length(format!(
                "{} periods for {} estimates",
                periods.len(),
                per_period.len()
            )));
        }
        let estimate = per_period.iter().sum::<f64>() / per_period.len() as f64;
        Ok(Self {
            regime,
            n_periods,
            periods,
            per_period,
            estimate,
        })
    }

    /// Estimates for every period starting at the regime's first period.
    pub fn from_series(regime: Regime, series: Vec<f64>) -> Result<Self> {
        let first = match regime {
            Regime::NoCarryover => 1,
            Regime::FirstOrder => 2,
        };
        let n_periods = series.len() + first - 1;
        let periods = (first..=n_periods).collect();
        Self::new(regime, n_periods, periods, series)
    }
}

fn check_balanced(w: &[u8], period: usize) -> Result<()> {
    let treated = w.iter().filter(|&&b| b == 1).count();
    if 2 * treated != w.len() {
        return Err(EstimateError::Unbalanced {
            period,
            treated,
            units: w.len(),
        });
    }
    Ok(())
}

/// Treated mean minus control mean for a balanced column.
pub fn diff_in_means_period(y: &[f64], w: &[u8]) -> Result<f64> {
    if y.len() != w.len() {
        return Err(EstimateError::Length(format!(
            "{} outcomes for {} assignments",
            y.len(),
            w.len()
        )));
    }
    check_balanced(w, 0)?;
    let scale = 2.0 / y.len() as f64;
    let (mut treated, mut control) = (0.0, 0.0);
    for (&v, &b) in y.iter().zip(w) {
        if b == 1 {
            treated += v;
        } else {
            control += v;
        }
    }
    Ok(scale * treated - scale * control)
}

pub fn sate_no_carryover(trajectory: &ExperimentTrajectory) -> Result<PeriodEstimates> {
    let mut series = Vec::with_capacity(trajectory.n_periods);
    for t in 0..trajectory.n_periods {
        let w = trajectory.assignment.column(t);
        check_balanced(&w, t + 1)?;
        series.push(diff_in_means_period(&trajectory.outcome_column(t), &w)?);
    }
    PeriodEstimates::from_series(Regime::NoCarryover, series)
}

/// Stay-group contrast at one period; `None` when the ratio variant meets
/// an empty stay group.
pub fn stay_contrast(y: &[f64], w_prev: &[u8], w: &[u8], scaling: StayScaling) -> Option<f64> {
    let n = y.len();
    let (mut s11, mut s00, mut n11, mut n00) = (0.0, 0.0, 0usize, 0usize);
    for i in 0..n {
        match (w_prev[i], w[i]) {
            (1, 1) => {
                s11 += y[i];
                n11 += 1;
            }
            (0, 0) => {
                s00 += y[i];
                n00 += 1;
            }
            _ => {}
        }
    }
    match scaling {
        StayScaling::Fixed => {
            let scale = 4.0 / n as f64;
            Some(scale * s11 - scale * s00)
        }
        StayScaling::Ratio => {
            (n11 > 0 && n00 > 0).then(|| s11 / n11 as f64 - s00 / n00 as f64)
        }
    }
}

/// Stay-group estimator averaged over periods `2..=T`.
pub fn sate_carryover(trajectory: &ExperimentTrajectory, scaling: StayScaling) -> Result<PeriodEstimates> {
    let periods = trajectory.n_periods;
    if periods < 2 {
        return Err(EstimateError::TooFewPeriods);
    }
    let mut prev = trajectory.assignment.column(0);
    let mut used = Vec::new();
    let mut series = Vec::new();
    for t in 1..periods {
        let w = trajectory.assignment.column(t);
        match stay_contrast(&trajectory.outcome_column(t), &prev, &w, scaling) {
            Some(v) => {
                used.push(t + 1);
                series.push(v);
            }
            None => log::warn!("period {}: empty stay group, skipped", t + 1),
        }
        prev = w;
    }
    if series.is_empty() {
        return Err(EstimateError::NoUsablePeriods);
    }
    PeriodEstimates::new(Regime::FirstOrder, periods, used, series)
}

/// `P(chi2_{d+2} <= c) / P(chi2_d <= c)`.
pub fn variance_reduction_factor(d: usize, c: f64) -> Result<f64> {
    if d < 1 || !(c > 0.0) {
        return Err(EstimateError::Invalid(format!(
            "need d >= 1 and c > 0, got d = {d}, c = {c}"
        )));
    }
    if c.is_infinite() {
        return Ok(1.0);
    }
    let den = numerics::chi2_cdf(c, d)?;
    if den == 0.0 {
        // both probabilities underflow; the ratio tends to 0 as c -> 0
        return Ok(0.0);
    }
    Ok((numerics::chi2_cdf(c, d + 2)? / den).min(1.0))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample covariance (divisor `n - 1`) between the columns of `h` restricted
/// to `rows` and `y` on the same rows.
fn cross_covariance(h: &Matrix, y: &[f64], rows: &[usize]) -> Vec<f64> {
    let d = h.cols();
    let m = rows.len() as f64;
    let y_bar = rows.iter().map(|&i| y[i]).sum::<f64>() / m;
    (0..d)
        .map(|k| {
            let h_bar = rows.iter().map(|&i| h.get(i, k)).sum::<f64>() / m;
            rows.iter()
                .map(|&i| (h.get(i, k) - h_bar) * (y[i] - y_bar))
                .sum::<f64>()
                / (m - 1.0)
        })
        .collect()
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Plug-in large-sample variance of the period contrast under
/// rerandomization at threshold `c`, with the unidentifiable effect variance
/// replaced by its projection on `H` (conservative).
pub fn conditional_variance_approx(y: &[f64], h: &Matrix, w: &[u8], c: f64) -> Result<f64> {
    let n = y.len();
    if h.rows() != n || w.len() != n {
        return Err(EstimateError::Length(format!(
            "{n} outcomes, {} balancing rows, {} assignments",
            h.rows(),
            w.len()
        )));
    }
    check_balanced(w, 0)?;
    if n < 6 {
        return Err(EstimateError::Invalid("need at least 3 units per arm".into()));
    }
    let treated: Vec<usize> = (0..n).filter(|&i| w[i] == 1).collect();
    let control: Vec<usize> = (0..n).filter(|&i| w[i] == 0).collect();
    let y1: Vec<f64> = treated.iter().map(|&i| y[i]).collect();
    let y0: Vec<f64> = control.iter().map(|&i| y[i]).collect();
    let (s1, s0) = (sample_variance(&y1), sample_variance(&y0));

    let d = h.cols();
    let (explained, s_tau_h) = if d == 0 {
        (0.0, 0.0)
    } else {
        // full-sample S_H with divisor N - 1
        let scaled = numerics::scaled_covariance(h)?;
        let factor = (n * n) as f64 / (4.0 * (n as f64 - 1.0));
        let s_h = SymmetricMatrix::from_upper(d, |i, j| scaled.get(i, j) * factor)?;
        let metric = MahalanobisMetric::new(&s_h);
        let z1 = metric.whiten(&cross_covariance(h, y, &treated));
        let z0 = metric.whiten(&cross_covariance(h, y, &control));
        let sq = |z: &[f64]| z.iter().map(|x| x * x).sum::<f64>();
        let diff: Vec<f64> = z1.iter().zip(&z0).map(|(a, b)| a - b).collect();
        let s_tau_h = sq(&diff);
        (2.0 * sq(&z1) + 2.0 * sq(&z0) - s_tau_h, s_tau_h)
    };
    let v_tt = (2.0 * s1 + 2.0 * s0 - s_tau_h).max(0.0);
    if v_tt == 0.0 {
        return Ok(0.0);
    }
    let r2 = (explained / v_tt).clamp(0.0, 1.0);
    let v = if d == 0 { 1.0 } else { variance_reduction_factor(d, c)? };
    Ok(v_tt / n as f64 * (1.0 - (1.0 - v) * r2))
}

/// Predictor of each block's residual sum from earlier estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    /// Block length times the mean of all earlier estimates.
    #[default]
    ScaledAverage,
    /// As `ScaledAverage` with weights `decay^(age - 1)`.
    WeightedRecency { decay: f64 },
    /// Block length times a fixed value, including the first block.
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub regime: Regime,
    pub estimate: f64,
    pub v_squared: f64,
    /// Estimated variance of `estimate`.
    pub variance: f64,
    pub block_size: usize,
    /// 1-based first period of each block.
    pub block_starts: Vec<usize>,
    /// Blocks whose predictor had no earlier estimates and was set to zero.
    pub unpredicted_blocks: Vec<usize>,
    pub predictor: Predictor,
    pub level: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl VarianceReport {
    pub fn ci_length(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }
}

/// Two-sided standard normal critical value at confidence `level`.
pub fn wald_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimateError::Invalid(format!("level must be in (0, 1), got {level}")));
    }
    Ok(numerics::chi2_quantile(level, 1)?.sqrt())
}

/// Prediction-based block variance over blocks of `block_size` periods.
///
/// Blocks start at periods `1, b + 1, 2b + 1, ...`; the last block may be
/// shorter. Each block contributes the squared difference between the sum of
/// its estimates after the block start and the predictor built from the
/// estimates before the block start.
pub fn block_conservative_variance(
    estimates: &PeriodEstimates,
    block_size: usize,
    predictor: Predictor,
    level: f64,
) -> Result<VarianceReport> {
    let periods = estimates.n_periods;
    if block_size < 2 || block_size > periods {
        return Err(EstimateError::BlockSize {
            block: block_size,
            periods,
        });
    }
    if let Predictor::WeightedRecency { decay } = predictor {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(EstimateError::Invalid(format!("decay must be in (0, 1], got {decay}")));
        }
    }
    let z = wald_critical_value(level)?;
    let value_at = |t: usize| -> Option<f64> {
        estimates
            .periods
            .binary_search(&t)
            .ok()
            .map(|k| estimates.per_period[k])
    };

    let block_starts: Vec<usize> = (1..=periods).step_by(block_size).collect();
    let mut unpredicted = Vec::new();
    let mut v_squared = 0.0;
    for (j, &start) in block_starts.iter().enumerate() {
        let end = block_starts.get(j + 1).copied().unwrap_or(periods + 1);
        let len = (end - start - 1) as f64;
        let block_sum: f64 = (start + 1..end).filter_map(value_at).sum();
        let past: Vec<(usize, f64)> = estimates
            .periods
            .iter()
            .zip(&estimates.per_period)
            .filter(|(&t, _)| t < start)
            .map(|(&t, &v)| (t, v))
            .collect();
        let m = match predictor {
            Predictor::Constant { value } => len * value,
            _ if past.is_empty() => {
                unpredicted.push(j + 1);
                0.0
            }
            Predictor::ScaledAverage => len * past.iter().map(|p| p.1).sum::<f64>() / past.len() as f64,
            Predictor::WeightedRecency { decay } => {
                let (mut num, mut den) = (0.0, 0.0);
                for &(t, v) in &past {
                    let wgt = decay.powi((start - 1 - t) as i32);
                    num += wgt * v;
                    den += wgt;
                }
                len * num / den
            }
        };
        v_squared += (block_sum - m).powi(2);
    }

    let divisor = match estimates.regime {
        Regime::NoCarryover => periods as f64,
        Regime::FirstOrder => (periods - 1) as f64,
    };
    let variance = v_squared / (divisor * divisor);
    let half = z * v_squared.sqrt() / divisor;
    Ok(VarianceReport {
        regime: estimates.regime,
        estimate: estimates.estimate,
        v_squared,
        variance,
        block_size,
        block_starts,
        unpredicted_blocks: unpredicted,
        predictor,
        level,
        ci_lo: estimates.estimate - half,
        ci_hi: estimates.estimate + half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_in_means_hand_cases() {
        assert_eq!(diff_in_means_period(&[3.0, 1.0], &[1, 0]).unwrap(), 2.0);
        assert_eq!(diff_in_means_period(&[7.0; 4], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(
            diff_in_means_period(&[5.0, 1.0, 2.0, 4.0], &[1, 0, 0, 1]).unwrap(),
            3.0
        );
        assert!(matches!(
            diff_in_means_period(&[1.0, 2.0], &[1, 1]),
            Err(EstimateError::Unbalanced { .. })
        ));
    }

    #[test]
    fn stay_contrast_singletons() {
        let y = [10.0, 20.0, 30.0, 40.0];
        let v = stay_contrast(&y, &[1, 1, 0, 0], &[1, 0, 0, 1], StayScaling::Fixed).unwrap();
        assert_eq!(v, 10.0 - 30.0);
        assert_eq!(stay_contrast(&y, &[1, 1, 0, 0], &[0, 0, 1, 1], StayScaling::Ratio), None);
        assert_eq!(stay_contrast(&y, &[1, 1, 0, 0], &[0, 0, 1, 1], StayScaling::Fixed), Some(0.0));
    }

    #[test]
    fn reduction_factor_closed_forms() {
        let closed = |c: f64| {
            let e = (-c / 2.0).exp();
            (1.0 - e * (1.0 + c / 2.0)) / (1.0 - e)
        };
        for c in [0.020101, 0.5, 1.386294, 5.0, 20.0] {
            let v = variance_reduction_factor(2, c).unwrap();
            assert!((v - closed(c)).abs() < 1e-10, "c = {c}");
        }
        assert!((variance_reduction_factor(2, 0.020101).unwrap() - 0.005025).abs() < 1e-4);
        assert!((variance_reduction_factor(2, 1.386294).unwrap() - 0.30685).abs() < 1e-4);
        assert_eq!(variance_reduction_factor(3, f64::INFINITY).unwrap(), 1.0);
        assert!(variance_reduction_factor(0, 1.0).is_err());
        assert!(variance_reduction_factor(1, 0.0).is_err());
    }

    #[test]
    fn block_variance_hand_series() {
        let est = PeriodEstimates::from_series(Regime::NoCarryover, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]).unwrap();
        let r = block_conservative_variance(&est, 3, Predictor::ScaledAverage, 0.95).unwrap();
        assert_eq!(r.block_starts, vec![1, 4]);
        assert_eq!(r.unpredicted_blocks, vec![1]);
        // block 1: (1 + 1 - 0)^2; block 2: (2 + 2 - 2/3 * 3)^2
        assert!((r.v_squared - 8.0).abs() < 1e-12);
        assert!((r.variance - 8.0 / 36.0).abs() < 1e-12);
        assert!(r.covers(r.estimate));
    }

    #[test]
    fn block_variance_exact_predictor_is_zero() {
        for regime in [Regime::NoCarryover, Regime::FirstOrder] {
            let est = PeriodEstimates::from_series(regime, vec![0.7; 23]).unwrap();
            let r = block_conservative_variance(&est, 8, Predictor::Constant { value: 0.7 }, 0.9).unwrap();
            assert!(r.v_squared.abs() < 1e-24);
            assert!(r.unpredicted_blocks.is_empty());
        }
    }

    #[test]
    fn block_variance_ragged_last_block() {
        // T = 7, b = 3: blocks {1,2,3}, {4,5,6}, {7}
        let est = PeriodEstimates::from_series(Regime::NoCarryover, vec![1.0; 7]).unwrap();
        let r = block_conservative_variance(&est, 3, Predictor::ScaledAverage, 0.95).unwrap();
        assert_eq!(r.block_starts, vec![1, 4, 7]);
        // only the unpredicted first block contributes
        assert!((r.v_squared - 4.0).abs() < 1e-12);
    }

    #[test]
    fn block_variance_rejects_bad_sizes() {
        let est = PeriodEstimates::from_series(Regime::NoCarryover, vec![1.0; 4]).unwrap();
        assert!(block_conservative_variance(&est, 5, Predictor::ScaledAverage, 0.95).is_err());
        assert!(block_conservative_variance(&est, 1, Predictor::ScaledAverage, 0.95).is_err());
    }

    #[test]
    fn wald_half_width_contract() {
        let est = PeriodEstimates::from_series(Regime::FirstOrder, vec![0.3, -0.2, 0.9, 0.1, 0.4, 0.0, 1.1]).unwrap();
        let r = block_conservative_variance(&est, 2, Predictor::ScaledAverage, 0.95).unwrap();
        let half = 1.959963984540054 * r.v_squared.sqrt() / 7.0;
        assert!(((r.ci_hi - r.ci_lo) / 2.0 - half).abs() < 1e-9);
    }

    #[test]
    fn conditional_variance_limits() {
        let y: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let w: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let h = Matrix::column(&(0..20).map(|i| ((i * 3) % 5) as f64).collect::<Vec<_>>());
        let free = conditional_variance_approx(&y, &h, &w, f64::INFINITY).unwrap();
        let none = conditional_variance_approx(&y, &Matrix::zeros(20, 0), &w, 0.01).unwrap();
        let tight = conditional_variance_approx(&y, &h, &w, 0.01).unwrap();
        assert!(tight <= free + 1e-12);
        assert!(none > 0.0);
        // H constant within each arm explains nothing
        let y2: Vec<f64> = (0..20).map(|i| if i % 4 < 2 { 1.0 } else { -1.0 }).collect();
        let h2 = Matrix::column(&(0..20).map(|i| (i % 2) as f64).collect::<Vec<_>>());
        let a = conditional_variance_approx(&y2, &h2, &w, 0.01).unwrap();
        let b = conditional_variance_approx(&y2, &h2, &w, f64::INFINITY).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
