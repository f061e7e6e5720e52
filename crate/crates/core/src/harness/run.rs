use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, ScenarioConfig, Target};
use super::HarnessError;
use crate::design::{self, ExperimentTrajectory};
use crate::estimate::{self, PeriodEstimates};
use crate::infer::{self, RiOptions, SharpNull};
use crate::population::{Population, TrueEstimands};
use crate::stream::{ids, StreamKey};

pub const SCHEMA_VERSION: u32 = 1;

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub design: String,
    pub axis: String,
    pub axis_value: f64,
    pub bias: f64,
    /// Population variance of the estimates, so `rmse^2 = bias^2 + variance`.
    pub variance: f64,
    pub rmse: f64,
    pub ci_length: f64,
    pub coverage: f64,
    pub fallback_rate: f64,
    pub mean_draws: f64,
    pub seconds: f64,
}

/// Monte Carlo precision and auxiliary statistics for a summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowExtras {
    pub design: String,
    pub axis_value: f64,
    pub replications: usize,
    pub mean_target: f64,
    pub mean_estimate: f64,
    pub bias_se: f64,
    pub variance_se: f64,
    pub rmse_se: f64,
    pub coverage_se: f64,
    /// Mean of the block variance estimates.
    pub mean_variance_estimate: f64,
    pub ri_rejection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub schema_version: u32,
    pub scenario: String,
    pub config: ScenarioConfig,
    /// SHA-256 of each grid point's population snapshot (first replicate's
    /// population when populations are redrawn).
    pub population_digests: Vec<String>,
    pub rows: Vec<SummaryRow>,
    pub extras: Vec<RowExtras>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub grid_index: usize,
    pub axis_value: f64,
    pub design: String,
    pub replicate: usize,
    pub estimate: f64,
    pub target: f64,
    pub variance_estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
    pub fallback_periods: usize,
    pub total_draws: usize,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SavedTrajectory {
    pub grid_index: usize,
    pub design: String,
    pub trajectory: ExperimentTrajectory,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub table: SummaryTable,
    pub details: Vec<ReplicateRecord>,
    pub trajectories: Vec<SavedTrajectory>,
}

/// Mean and population-variance helpers shared with the acceptance suite.
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn population_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Delta-method standard error of `sqrt(mean(e^2))`.
pub fn rmse_standard_error(errors: &[f64]) -> f64 {
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let rmse = mean(&sq).sqrt();
    if rmse == 0.0 {
        return 0.0;
    }
    population_variance(&sq).sqrt() / (2.0 * rmse * (errors.len() as f64).sqrt())
}

/// Large-sample standard error of the sample variance.
pub fn variance_standard_error(values: &[f64]) -> f64 {
    let m = mean(values);
    let dev: Vec<f64> = values.iter().map(|x| (x - m) * (x - m)).collect();
    (population_variance(&dev) / values.len() as f64).sqrt()
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn slope_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64), HarnessError> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(HarnessError::Degenerate("slope fit needs at least 3 paired points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(HarnessError::Degenerate("non-finite value in slope fit".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Degenerate("all grid values are equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Log-log slope of RMSE against the grid value for one design.
pub fn rmse_slope(rows: &[SummaryRow], design: &str) -> Result<f64, HarnessError> {
    let picked: Vec<&SummaryRow> = rows.iter().filter(|r| r.design == design).collect();
    let x: Vec<f64> = picked.iter().map(|r| r.axis_value.ln()).collect();
    let y: Vec<f64> = picked.iter().map(|r| r.rmse.ln()).collect();
    Ok(slope_fit(&x, &y)?.0)
}

fn target_of(truth: &TrueEstimands, target: Option<Target>) -> Result<f64, HarnessError> {
    match target {
        Some(Target::Sate) => Ok(truth.sate),
        Some(Target::TotalEffect) => truth.total_effect.ok_or_else(|| {
            HarnessError::Config(ConfigError::new(
                "estimator.target",
                "this population does not define a total effect",
            ))
        }),
        None => Ok(truth.total_effect.unwrap_or(truth.sate)),
    }
}

struct ReplicateOutput {
    record: ReplicateRecord,
    trajectory: Option<ExperimentTrajectory>,
}

/// Runs every grid point and design. Replicate `r` of design `d` at grid
/// point `g` draws from the stream keyed `(seed, g, d, r)`; populations are
/// keyed by the seed alone, so every design at a grid point, and every grid
/// point, share the same random ingredients.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    config.validate()?;
    let seed = config.seed()?;
    let root = StreamKey::new(seed);
    let carryover = config.uses_carryover_estimator();
    let reps = config.replications;
    let axis = config.grid.axis;

    let mut rows = Vec::new();
    let mut extras = Vec::new();
    let mut digests = Vec::new();
    let mut details = Vec::new();
    let mut trajectories = Vec::new();

    for (g, &value) in config.grid.values.iter().enumerate() {
        let dgp = config.dgp.at(axis, value)?;
        let fixed = if config.redraw_population {
            None
        } else {
            Some(dgp.build(seed)?)
        };
        let population_for = |r: usize| -> Result<(Population, TrueEstimands), HarnessError> {
            Ok(dgp.build(root.children(&[ids::POPULATION, g as u64, r as u64]).value())?)
        };
        digests.push(match &fixed {
            Some((p, _)) => p.digest(),
            None => population_for(0)?.0.digest(),
        });

        for (d, design_cfg) in config.designs.iter().enumerate() {
            let policy = design_cfg.policy(dgp.model.covariate_dim())?;
            let started = Instant::now();
            let outputs = (0..reps)
                .into_par_iter()
                .map(|r| -> Result<ReplicateOutput, HarnessError> {
                    let owned;
                    let (pop, truth) = match &fixed {
                        Some((p, t)) => (p, t),
                        None => {
                            owned = population_for(r)?;
                            (&owned.0, &owned.1)
                        }
                    };
                    let key = [g as u64, d as u64, r as u64];
                    let mut rng = root.child(ids::EXPERIMENT).children(&key).rng();
                    let trajectory = design::run_experiment(pop, &policy, &mut rng)?;
                    let estimates: PeriodEstimates = if carryover {
                        estimate::sate_carryover(&trajectory, config.estimator.stay_scaling)?
                    } else {
                        estimate::sate_no_carryover(&trajectory)?
                    };
                    let target = target_of(truth, config.estimator.target)?;
                    let report = estimate::block_conservative_variance(
                        &estimates,
                        config.inference.block_size,
                        config.inference.predictor,
                        config.inference.level,
                    )?;
                    let p_value = if config.inference.ri_draws > 0 {
                        let delta = config.inference.ri_delta.unwrap_or(target);
                        let ri_key = root.child(ids::RANDOMIZATION_INFERENCE).children(&key);
                        Some(
                            infer::randomization_pvalue(
                                &trajectory,
                                SharpNull { delta },
                                &policy,
                                RiOptions::new(config.inference.ri_draws),
                                ri_key,
                            )?
                            .p_value,
                        )
                    } else {
                        None
                    };
                    let record = ReplicateRecord {
                        grid_index: g,
                        axis_value: value,
                        design: design_cfg.name.clone(),
                        replicate: r,
                        estimate: estimates.estimate,
                        target,
                        variance_estimate: report.variance,
                        ci_lo: report.ci_lo,
                        ci_hi: report.ci_hi,
                        covered: report.covers(target),
                        fallback_periods: trajectory.fallback_count(),
                        total_draws: trajectory.total_draws(),
                        p_value,
                    };
                    let keep = config.output.trajectories && r == 0;
                    Ok(ReplicateOutput {
                        record,
                        trajectory: keep.then_some(trajectory),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let seconds = started.elapsed().as_secs_f64();

            let records: Vec<ReplicateRecord> = outputs
                .into_iter()
                .map(|o| {
                    if let Some(t) = o.trajectory {
                        trajectories.push(SavedTrajectory {
                            grid_index: g,
                            design: design_cfg.name.clone(),
                            trajectory: t,
                        });
                    }
                    o.record
                })
                .collect();
            let (row, extra) = summarize(config, design_cfg.name.as_str(), value, dgp.n_periods, &records, seconds);
            rows.push(row);
            extras.push(extra);
            details.extend(records);
        }
    }

    Ok(ScenarioResult {
        table: SummaryTable {
            schema_version: SCHEMA_VERSION,
            scenario: config.name.clone(),
            config: config.clone(),
            population_digests: digests,
            rows,
            extras,
        },
        details,
        trajectories,
    })
}

fn summarize(
    config: &ScenarioConfig,
    design: &str,
    axis_value: f64,
    n_periods: usize,
    records: &[ReplicateRecord],
    seconds: f64,
) -> (SummaryRow, RowExtras) {
    let m = records.len() as f64;
    let estimates: Vec<f64> = records.iter().map(|r| r.estimate).collect();
    let errors: Vec<f64> = records.iter().map(|r| r.estimate - r.target).collect();
    let bias = mean(&errors);
    let variance = population_variance(&estimates);
    let rmse = mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt();
    let coverage = records.iter().filter(|r| r.covered).count() as f64 / m;
    let cells = m * n_periods as f64;
    let row = SummaryRow {
        scenario: config.name.clone(),
        design: design.to_string(),
        axis: config.grid.axis.name().to_string(),
        axis_value,
        bias,
        variance,
        rmse,
        ci_length: mean(&records.iter().map(|r| r.ci_hi - r.ci_lo).collect::<Vec<_>>()),
        coverage,
        fallback_rate: records.iter().map(|r| r.fallback_periods as f64).sum::<f64>() / cells,
        mean_draws: records.iter().map(|r| r.total_draws as f64).sum::<f64>() / cells,
        seconds,
    };
    let ri_rejection_rate = (config.inference.ri_draws > 0).then(|| {
        records
            .iter()
            .filter(|r| r.p_value.is_some_and(|p| p <= config.inference.ri_alpha))
            .count() as f64
            / m
    });
    let extra = RowExtras {
        design: design.to_string(),
        axis_value,
        replications: records.len(),
        mean_target: mean(&records.iter().map(|r| r.target).collect::<Vec<_>>()),
        mean_estimate: mean(&estimates),
        bias_se: (population_variance(&errors) / m).sqrt(),
        variance_se: variance_standard_error(&estimates),
        rmse_se: rmse_standard_error(&errors),
        coverage_se: (coverage * (1.0 - coverage) / m).sqrt(),
        mean_variance_estimate: mean(&records.iter().map(|r| r.variance_estimate).collect::<Vec<_>>()),
        ri_rejection_rate,
    };
    (row, extra)
}
