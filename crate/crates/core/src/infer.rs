//! Randomization inference for constant additive sharp nulls.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{self, DesignError, DesignPolicy, ExperimentTrajectory};
use crate::estimate::{self, EstimateError};
use crate::population::{CarryoverOrder, OutcomeTable, Population, PopulationError};
use crate::stream::StreamKey;

/// Relative slack under which a replayed statistic counts as tied with the
/// observed one; absorbs rounding in otherwise equal sums.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum InferError {
    #[error(
        "randomization inference is only available without carryover; \
         the trajectory was generated under {0:?} carryover"
    )]
    CarryoverRegime(CarryoverOrder),
    #[error("number of draws must be >= 1")]
    NoDraws,
    #[error("empty or unsorted grid")]
    BadGrid,
    #[error("alpha must be in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Population(#[from] PopulationError),
}

pub type Result<T> = std::result::Result<T, InferError>;

/// `H0: Y_it(1) - Y_it(0) = delta` for every unit and period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpNull {
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiOptions {
    pub draws: usize,
    pub alternative: Alternative,
    /// Two-sided statistic `|tau - delta|` instead of `|tau|`.
    pub centered: bool,
}

impl RiOptions {
    pub fn new(draws: usize) -> Self {
        Self {
            draws,
            alternative: Alternative::TwoSided,
            centered: false,
        }
    }

    fn statistic(&self, tau: f64, delta: f64) -> f64 {
        match self.alternative {
            Alternative::TwoSided if self.centered => (tau - delta).abs(),
            Alternative::TwoSided => tau.abs(),
            Alternative::Greater => tau,
            Alternative::Less => -tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RIResult {
    pub delta: f64,
    pub alternative: Alternative,
    pub centered: bool,
    /// Observed point estimate.
    pub estimate: f64,
    /// Observed test statistic.
    pub statistic: f64,
    pub draws: usize,
    /// Test statistic of each replayed experiment, in replicate order.
    pub simulated: Vec<f64>,
    pub exceedances: usize,
    pub p_value: f64,
}

fn require_no_carryover(trajectory: &ExperimentTrajectory) -> Result<()> {
    match trajectory.carryover {
        CarryoverOrder::None => Ok(()),
        other => Err(InferError::CarryoverRegime(other)),
    }
}

/// Completes the potential-outcome table implied by the sharp null.
pub fn impute_sharp_null(trajectory: &ExperimentTrajectory, null: SharpNull) -> Result<Population> {
    require_no_carryover(trajectory)?;
    let cells = trajectory.n_units * trajectory.n_periods;
    let mut y0 = Vec::with_capacity(cells);
    let mut y1 = Vec::with_capacity(cells);
    for i in 0..trajectory.n_units {
        for t in 0..trajectory.n_periods {
            let y = trajectory.outcome(i, t);
            if trajectory.assignment.get(i, t) == 1 {
                y0.push(y - null.delta);
                y1.push(y);
            } else {
                y0.push(y);
                y1.push(y + null.delta);
            }
        }
    }
    Ok(Population::new(
        trajectory.n_units,
        trajectory.n_periods,
        trajectory.covariate_dim,
        trajectory.covariates.clone(),
        OutcomeTable::NoCarryover { y0, y1 },
    )?)
}

/// Monte Carlo p-value from replaying the whole design on the imputed table.
/// Replicate `m` draws from `key.child(m)`, so results do not depend on the
/// number of worker threads.
pub fn randomization_pvalue(
    trajectory: &ExperimentTrajectory,
    null: SharpNull,
    policy: &DesignPolicy,
    options: RiOptions,
    key: StreamKey,
) -> Result<RIResult> {
    require_no_carryover(trajectory)?;
    if options.draws == 0 {
        return Err(InferError::NoDraws);
    }
    if *policy != trajectory.policy {
        log::warn!("replay policy differs from the one recorded in the trajectory");
    }
    let imputed = impute_sharp_null(trajectory, null)?;
    let estimate = estimate::sate_no_carryover(trajectory)?.estimate;
    let statistic = options.statistic(estimate, null.delta);

    let simulated = (0..options.draws)
        .into_par_iter()
        .map(|m| -> Result<f64> {
            let mut rng = key.child(m as u64).rng();
            let replay = design::run_experiment(&imputed, policy, &mut rng)?;
            let tau = estimate::sate_no_carryover(&replay)?.estimate;
            Ok(options.statistic(tau, null.delta))
        })
        .collect::<Result<Vec<f64>>>()?;

    let floor = statistic - TIE_TOLERANCE * statistic.abs().max(1.0);
    let exceedances = simulated.iter().filter(|&&s| s >= floor).count();
    Ok(RIResult {
        delta: null.delta,
        alternative: options.alternative,
        centered: options.centered,
        estimate,
        statistic,
        draws: options.draws,
        simulated,
        exceedances,
        p_value: (1 + exceedances) as f64 / (1 + options.draws) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub alpha: f64,
    /// Grid values with `p > alpha`.
    pub retained: Vec<f64>,
    pub grid: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Largest spacing of the grid; the set is only known to this precision.
    pub resolution: f64,
}

/// Test inversion over a sorted grid of null effects.
pub fn invert_test(
    trajectory: &ExperimentTrajectory,
    policy: &DesignPolicy,
    grid: &[f64],
    alpha: f64,
    options: RiOptions,
    key: StreamKey,
) -> Result<ConfidenceSet> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(InferError::BadGrid);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferError::BadAlpha(alpha));
    }
    let mut p_values = Vec::with_capacity(grid.len());
    for &delta in grid {
        p_values.push(randomization_pvalue(trajectory, SharpNull { delta }, policy, options, key)?.p_value);
    }
    let retained = grid
        .iter()
        .zip(&p_values)
        .filter(|(_, &p)| p > alpha)
        .map(|(&d, _)| d)
        .collect();
    let resolution = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(ConfidenceSet {
        alpha,
        retained,
        grid: grid.to_vec(),
        p_values,
        resolution,
    })
}
