//! Fixed finite populations of potential outcomes.
//!
//! A [`Population`] freezes every stochastic ingredient at construction and
//! answers outcome queries `(unit, period, own treatment path prefix)`. The
//! query signature itself rules out anticipation and cross-unit spillover;
//! the stored variant decides how much of the path prefix is read.
//!
//! Periods are 0-based in code: period `t` is the `(t+1)`-th period and a
//! path prefix for period `t` has length `t + 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::stream::{ids, StreamKey};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, PopulationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarryoverOrder {
    None,
    FirstOrder,
    FullPath,
}

/// Frozen outcome tables, each `n_units * n_periods`, unit-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeTable {
    /// `Y(w_t)`.
    NoCarryover { y0: Vec<f64>, y1: Vec<f64> },
    /// `Y(w_{t-1}, w_t)`; the lagged assignment before the first period is 0.
    FirstOrder {
        y00: Vec<f64>,
        y01: Vec<f64>,
        y10: Vec<f64>,
        y11: Vec<f64>,
    },
    /// Latent-state model: `S_1 = 0`, `S_t = rho S_{t-1} + w_{t-1} + nu_t`,
    /// `Y_t = base_t + 0.5 tanh(S_t) + 0.5 w_t tanh(S_t) + xi_t`.
    LatentState {
        base: Vec<f64>,
        rho: f64,
        state_shock: Vec<f64>,
        outcome_shock: Vec<f64>,
    },
}

/// The fixed set of potential outcomes and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    version: u32,
    n_units: usize,
    n_periods: usize,
    covariate_dim: usize,
    /// `n_units * n_periods * covariate_dim`, unit-major then period.
    covariates: Vec<f64>,
    outcomes: OutcomeTable,
}

/// Per-period effects and their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEstimands {
    /// 0-based period of `per_period[0]` (0 without carryover, 1 otherwise).
    pub first_period: usize,
    pub per_period: Vec<f64>,
    pub sate: f64,
    /// All-ones versus all-zeros path contrast, for full-path populations.
    pub total_effect: Option<f64>,
}

impl TrueEstimands {
    fn from_per_period(first_period: usize, per_period: Vec<f64>) -> Self {
        let sate = per_period.iter().sum::<f64>() / per_period.len() as f64;
        Self {
            first_period,
            per_period,
            sate,
            total_effect: None,
        }
    }
}

impl Population {
    pub fn new(
        n_units: usize,
        n_periods: usize,
        covariate_dim: usize,
        covariates: Vec<f64>,
        outcomes: OutcomeTable,
    ) -> Result<Self> {
        if n_units == 0 || n_periods == 0 {
            return Err(PopulationError::InvalidDimensions(
                "population needs at least one unit and one period".into(),
            ));
        }
        let cells = n_units * n_periods;
        if covariates.len() != cells * covariate_dim {
            return Err(PopulationError::InvalidDimensions(format!(
                "covariate array has {} entries, expected {}",
                covariates.len(),
                cells * covariate_dim
            )));
        }
        let tables: Vec<&Vec<f64>> = match &outcomes {
            OutcomeTable::NoCarryover { y0, y1 } => vec![y0, y1],
            OutcomeTable::FirstOrder { y00, y01, y10, y11 } => vec![y00, y01, y10, y11],
            OutcomeTable::LatentState {
                base,
                state_shock,
                outcome_shock,
                ..
            } => vec![base, state_shock, outcome_shock],
        };
        if tables.iter().any(|t| t.len() != cells) {
            return Err(PopulationError::InvalidDimensions(format!(
                "outcome tables must have {cells} entries"
            )));
        }
        Ok(Self {
            version: SNAPSHOT_VERSION,
            n_units,
            n_periods,
            covariate_dim,
            covariates,
            outcomes,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn outcomes(&self) -> &OutcomeTable {
        &self.outcomes
    }

    pub fn carryover_order(&self) -> CarryoverOrder {
        match self.outcomes {
            OutcomeTable::NoCarryover { .. } => CarryoverOrder::None,
            OutcomeTable::FirstOrder { .. } => CarryoverOrder::FirstOrder,
            OutcomeTable::LatentState { .. } => CarryoverOrder::FullPath,
        }
    }

    /// Covariate vector `X_{unit, t}`.
    #[inline]
    pub fn covariate(&self, unit: usize, t: usize) -> &[f64] {
        let start = (unit * self.n_periods + t) * self.covariate_dim;
        &self.covariates[start..start + self.covariate_dim]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    /// `Y_{unit, t}(path)`, where `path` is the unit's own assignment history
    /// for periods `0..=t` (entries 0 or 1).
    pub fn outcome(&self, unit: usize, t: usize, path: &[u8]) -> f64 {
        assert_eq!(path.len(), t + 1, "path prefix must cover periods 0..=t");
        let cell = unit * self.n_periods + t;
        let w = path[t];
        match &self.outcomes {
            OutcomeTable::NoCarryover { y0, y1 } => {
                if w == 1 {
                    y1[cell]
                } else {
                    y0[cell]
                }
            }
            OutcomeTable::FirstOrder { y00, y01, y10, y11 } => {
                let prev = if t == 0 { 0 } else { path[t - 1] };
                match (prev, w) {
                    (0, 0) => y00[cell],
                    (0, _) => y01[cell],
                    (_, 0) => y10[cell],
                    _ => y11[cell],
                }
            }
            OutcomeTable::LatentState {
                base,
                rho,
                state_shock,
                outcome_shock,
            } => {
                let row = unit * self.n_periods;
                let mut s = 0.0;
                for k in 1..=t {
                    s = rho * s + path[k - 1] as f64 + state_shock[row + k];
                }
                let th = s.tanh();
                base[cell] + 0.5 * th + 0.5 * w as f64 * th + outcome_shock[cell]
            }
        }
    }

    /// Estimands recomputed by querying the population directly.
    pub fn true_estimands(&self) -> TrueEstimands {
        let n = self.n_units as f64;
        match self.carryover_order() {
            CarryoverOrder::None => {
                let per = (0..self.n_periods)
                    .map(|t| {
                        (0..self.n_units)
                            .map(|i| {
                                let mut p = vec![0u8; t + 1];
                                p[t] = 1;
                                let y1 = self.outcome(i, t, &p);
                                p[t] = 0;
                                y1 - self.outcome(i, t, &p)
                            })
                            .sum::<f64>()
                            / n
                    })
                    .collect();
                TrueEstimands::from_per_period(0, per)
            }
            CarryoverOrder::FirstOrder | CarryoverOrder::FullPath => {
                let per = (1..self.n_periods)
                    .map(|t| {
                        let ones = vec![1u8; t + 1];
                        let zeros = vec![0u8; t + 1];
                        (0..self.n_units)
                            .map(|i| self.outcome(i, t, &ones) - self.outcome(i, t, &zeros))
                            .sum::<f64>()
                            / n
                    })
                    .collect();
                let mut est = TrueEstimands::from_per_period(1, per);
                if self.carryover_order() == CarryoverOrder::FullPath {
                    est.total_effect = Some(est.sate);
                }
                est
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("population serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pop: Population =
            serde_json::from_str(text).map_err(|e| PopulationError::Snapshot(e.to_string()))?;
        if pop.version != SNAPSHOT_VERSION {
            return Err(PopulationError::Snapshot(format!(
                "unsupported snapshot version {}",
                pop.version
            )));
        }
        Population::new(
            pop.n_units,
            pop.n_periods,
            pop.covariate_dim,
            pop.covariates,
            pop.outcomes,
        )
    }

    /// SHA-256 of the JSON snapshot, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// Keyed draws
// ---------------------------------------------------------------------------

fn normal(key: StreamKey, stream: u64, a: usize, b: usize) -> f64 {
    key.children(&[stream, a as u64, b as u64])
        .rng()
        .sample(StandardNormal)
}

fn uniform(key: StreamKey, stream: u64, a: usize, b: usize) -> f64 {
    key.children(&[stream, a as u64, b as u64])
        .rng()
        .random::<f64>()
}

fn bernoulli(key: StreamKey, stream: u64, a: usize, b: usize, p: f64) -> f64 {
    if uniform(key, stream, a, b) < p {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Autoregressive panels
// ---------------------------------------------------------------------------

/// How the pre-sample value `U_{i,0}` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Draw from the stationary distribution of the recursion.
    #[default]
    Stationary,
    Zero,
}

/// `U_t = persistence * U_{t-1} + covariate_coef * X_t + eps_t` with
/// `X ~ N(0, covariate_var)` and `eps ~ N(0, noise_var)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Process {
    pub persistence: f64,
    pub covariate_coef: f64,
    pub covariate_var: f64,
    pub noise_var: f64,
    #[serde(default)]
    pub initial: InitialState,
}

impl Ar1Process {
    pub fn stationary_variance(&self) -> f64 {
        (self.covariate_coef.powi(2) * self.covariate_var + self.noise_var)
            / (1.0 - self.persistence.powi(2))
    }

    fn validate(&self) -> Result<()> {
        if !(self.persistence.abs() < 1.0) {
            return Err(PopulationError::InvalidParameter(
                "AR(1) persistence must satisfy |phi| < 1".into(),
            ));
        }
        if self.covariate_var < 0.0 || self.noise_var < 0.0 {
            return Err(PopulationError::InvalidParameter(
                "variances must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Returns `(U, X)`, both unit-major `n * t`.
    fn simulate(&self, key: StreamKey, n: usize, periods: usize) -> (Vec<f64>, Vec<f64>) {
        let sd_x = self.covariate_var.sqrt();
        let sd_e = self.noise_var.sqrt();
        let sd_0 = self.stationary_variance().sqrt();
        let mut u = vec![0.0; n * periods];
        let mut x = vec![0.0; n * periods];
        for i in 0..n {
            let mut prev = match self.initial {
                InitialState::Stationary => sd_0 * normal(key, ids::INITIAL, i, 0),
                InitialState::Zero => 0.0,
            };
            for t in 0..periods {
                let xi = sd_x * normal(key, ids::COVARIATE, i, t);
                let e = sd_e * normal(key, ids::NOISE, i, t);
                let cur = self.persistence * prev + self.covariate_coef * xi + e;
                u[i * periods + t] = cur;
                x[i * periods + t] = xi;
                prev = cur;
            }
        }
        (u, x)
    }
}

fn check_units(n: usize, periods: usize, multiple: usize, min_periods: usize) -> Result<()> {
    if n == 0 || n % multiple != 0 {
        return Err(PopulationError::InvalidDimensions(format!(
            "number of units must be a positive multiple of {multiple}, got {n}"
        )));
    }
    if periods < min_periods {
        return Err(PopulationError::InvalidDimensions(format!(
            "need at least {min_periods} periods, got {periods}"
        )));
    }
    Ok(())
}

/// No-carryover AR(1) population: `Y(0) = U`, `Y(1) = U + effect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1NoCarryoverParams {
    pub process: Ar1Process,
    pub effect: f64,
}

impl Ar1NoCarryoverParams {
    /// Defaults of the no-carryover AR(1) study with covariate loading `rho`.
    pub fn standard(rho: f64) -> Self {
        Self {
            process: Ar1Process {
                persistence: 0.8,
                covariate_coef: rho,
                covariate_var: 1.0,
                noise_var: 0.25,
                initial: InitialState::Stationary,
            },
            effect: 0.5,
        }
    }

    pub fn build(&self, n: usize, periods: usize, seed: u64) -> Result<(Population, TrueEstimands)> {
        check_units(n, periods, 2, 1)?;
        self.process.validate()?;
        let key = StreamKey::new(seed).child(ids::POPULATION);
        let (u, x) = self.process.simulate(key, n, periods);
        let y1 = u.iter().map(|v| v + self.effect).collect();
        let pop = Population::new(n, periods, 1, x, OutcomeTable::NoCarryover { y0: u, y1 })?;
        let est = TrueEstimands::from_per_period(0, vec![self.effect; periods]);
        Ok((pop, est))
    }
}

pub fn make_ar1_no_carryover(
    n: usize,
    periods: usize,
    rho: f64,
    seed: u64,
) -> Result<(Population, TrueEstimands)> {
    Ar1NoCarryoverParams::standard(rho).build(n, periods, seed)
}

/// First-order carryover AR(1) population with fixed arm offsets
/// `[Y(0,0), Y(0,1), Y(1,0), Y(1,1)] - U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1FirstOrderParams {
    pub process: Ar1Process,
    pub offsets: [f64; 4],
}

impl Ar1FirstOrderParams {
    pub fn standard() -> Self {
        Self {
            process: carryover_process(),
            offsets: [0.0, 1.0, 0.5, 3.5],
        }
    }

    pub fn build(&self, n: usize, periods: usize, seed: u64) -> Result<(Population, TrueEstimands)> {
        check_units(n, periods, 4, 2)?;
        self.process.validate()?;
        let key = StreamKey::new(seed).child(ids::POPULATION);
        let (u, x) = self.process.simulate(key, n, periods);
        let arm = |k: usize| u.iter().map(|v| v + self.offsets[k]).collect::<Vec<_>>();
        let table = OutcomeTable::FirstOrder {
            y00: arm(0),
            y01: arm(1),
            y10: arm(2),
            y11: arm(3),
        };
        let pop = Population::new(n, periods, 1, x, table)?;
        let effect = self.offsets[3] - self.offsets[0];
        let est = TrueEstimands::from_per_period(1, vec![effect; periods - 1]);
        Ok((pop, est))
    }
}

fn carryover_process() -> Ar1Process {
    Ar1Process {
        persistence: 0.7,
        covariate_coef: 1.0,
        covariate_var: 1.0,
        noise_var: 0.25,
        initial: InitialState::Stationary,
    }
}

pub fn make_ar1_first_order_carryover(
    n: usize,
    periods: usize,
    seed: u64,
) -> Result<(Population, TrueEstimands)> {
    Ar1FirstOrderParams::standard().build(n, periods, seed)
}

/// Heterogeneous first-order carryover: offsets `0, 2 B1, B2, 7 B3` with
/// `B_k ~ Bernoulli(bernoulli_p)` drawn per unit and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneousCarryoverParams {
    pub process: Ar1Process,
    pub bernoulli_p: f64,
}

impl HeterogeneousCarryoverParams {
    pub fn standard() -> Self {
        Self {
            process: carryover_process(),
            bernoulli_p: 0.5,
        }
    }

    pub fn build(&self, n: usize, periods: usize, seed: u64) -> Result<(Population, TrueEstimands)> {
        check_units(n, periods, 4, 2)?;
        self.process.validate()?;
        if !(0.0..=1.0).contains(&self.bernoulli_p) {
            return Err(PopulationError::InvalidParameter(
                "bernoulli_p must lie in [0, 1]".into(),
            ));
        }
        let key = StreamKey::new(seed).child(ids::POPULATION);
        let (u, x) = self.process.simulate(key, n, periods);
        let cells = n * periods;
        let (mut y01, mut y10, mut y11) = (vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]);
        // per-period sums of the 7 B3 effects, accumulated in integers
        let mut b3_count = vec![0u64; periods];
        for i in 0..n {
            for t in 0..periods {
                let c = i * periods + t;
                let b1 = bernoulli(key, ids::BERNOULLI_1, i, t, self.bernoulli_p);
                let b2 = bernoulli(key, ids::BERNOULLI_2, i, t, self.bernoulli_p);
                let b3 = bernoulli(key, ids::BERNOULLI_3, i, t, self.bernoulli_p);
                y01[c] = u[c] + 2.0 * b1;
                y10[c] = u[c] + b2;
                y11[c] = u[c] + 7.0 * b3;
                b3_count[t] += b3 as u64;
            }
        }
        let table = OutcomeTable::FirstOrder {
            y00: u,
            y01,
            y10,
            y11,
        };
        let pop = Population::new(n, periods, 1, x, table)?;
        let per = (1..periods)
            .map(|t| 7.0 * b3_count[t] as f64 / n as f64)
            .collect();
        Ok((pop, TrueEstimands::from_per_period(1, per)))
    }
}

pub fn make_heterogeneous_carryover(
    n: usize,
    periods: usize,
    seed: u64,
) -> Result<(Population, TrueEstimands)> {
    HeterogeneousCarryoverParams::standard().build(n, periods, seed)
}

// ---------------------------------------------------------------------------
// Latent factor model
// ---------------------------------------------------------------------------

/// Dynamics of the time factors `v_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeFactors {
    /// `v_t ~ N(0, I)` independently.
    Iid,
    /// `v_1 ~ N(0, I)`, `v_t = v_{t-1} + step_sd * eta_t`.
    RandomWalk { step_sd: f64 },
}

/// Which arms are built on top of the baseline outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectScheme {
    /// `Y(0) = base`, `Y(1) = base + tau`.
    NoCarryover,
    /// `Y(0,0) = Y(1,0) = base`, `Y(0,1) = base + tau`, `Y(1,1) = base + 2 tau`.
    FirstOrder,
}

/// Baseline `Y^base = L + e`: `L = U V^T` of rank `n_factors`, `e` an AR(2)
/// path per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelParams {
    pub n_factors: usize,
    pub time_factors: TimeFactors,
    pub ar2_coeffs: [f64; 2],
    pub innovation_sd: f64,
    pub tau: f64,
    pub scheme: EffectScheme,
}

/// AR(2) burn-in length before the first recorded period.
const AR2_BURN_IN: usize = 100;

impl FactorModelParams {
    pub fn standard(tau: f64, scheme: EffectScheme) -> Self {
        Self {
            n_factors: 2,
            time_factors: TimeFactors::Iid,
            ar2_coeffs: [0.5, 0.2],
            innovation_sd: 0.1,
            tau,
            scheme,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_factors == 0 {
            return Err(PopulationError::InvalidParameter("n_factors must be >= 1".into()));
        }
        let [a, b] = self.ar2_coeffs;
        // stationarity triangle
        if !(b.abs() < 1.0 && a + b < 1.0 && b - a < 1.0) {
            return Err(PopulationError::InvalidParameter(
                "AR(2) coefficients are not stationary".into(),
            ));
        }
        if self.innovation_sd < 0.0 {
            return Err(PopulationError::InvalidParameter("innovation_sd must be >= 0".into()));
        }
        Ok(())
    }

    /// Low-rank part and AR(2) residual, each unit-major `n * periods`.
    pub fn components(&self, n: usize, periods: usize, seed: u64) -> Result<FactorComponents> {
        self.validate()?;
        let key = StreamKey::new(seed).child(ids::POPULATION);
        let r = self.n_factors;
        let unit: Vec<f64> = (0..n)
            .flat_map(|i| (0..r).map(move |k| (i, k)))
            .map(|(i, k)| normal(key, ids::UNIT_FACTOR, i, k))
            .collect();
        let mut time = vec![0.0; periods * r];
        for t in 0..periods {
            for k in 0..r {
                let z = normal(key, ids::TIME_FACTOR, t, k);
                time[t * r + k] = match self.time_factors {
                    TimeFactors::Iid => z,
                    TimeFactors::RandomWalk { step_sd } if t > 0 => {
                        time[(t - 1) * r + k] + step_sd * z
                    }
                    TimeFactors::RandomWalk { .. } => z,
                };
            }
        }
        let mut low_rank = vec![0.0; n * periods];
        for i in 0..n {
            for t in 0..periods {
                low_rank[i * periods + t] = (0..r).map(|k| unit[i * r + k] * time[t * r + k]).sum();
            }
        }
        let [a, b] = self.ar2_coeffs;
        let mut residual = vec![0.0; n * periods];
        for i in 0..n {
            let (mut e1, mut e2) = (0.0, 0.0);
            for s in 0..AR2_BURN_IN + periods {
                let e = a * e1 + b * e2 + self.innovation_sd * normal(key, ids::RESIDUAL, i, s);
                e2 = e1;
                e1 = e;
                if s >= AR2_BURN_IN {
                    residual[i * periods + s - AR2_BURN_IN] = e;
                }
            }
        }
        Ok(FactorComponents {
            n_units: n,
            n_periods: periods,
            low_rank,
            residual,
        })
    }

    pub fn build(&self, n: usize, periods: usize, seed: u64) -> Result<(Population, TrueEstimands)> {
        if n < 4 || n % 2 != 0 {
            return Err(PopulationError::InvalidDimensions(format!(
                "factor model needs an even number of units >= 4, got {n}"
            )));
        }
        if periods < 2 {
            return Err(PopulationError::InvalidDimensions("need at least 2 periods".into()));
        }
        let base = self.components(n, periods, seed)?.baseline();
        let shift = |k: f64| base.iter().map(|v| v + k * self.tau).collect::<Vec<_>>();
        let (table, est) = match self.scheme {
            EffectScheme::NoCarryover => (
                OutcomeTable::NoCarryover {
                    y0: base.clone(),
                    y1: shift(1.0),
                },
                TrueEstimands::from_per_period(0, vec![self.tau; periods]),
            ),
            EffectScheme::FirstOrder => (
                OutcomeTable::FirstOrder {
                    y00: base.clone(),
                    y01: shift(1.0),
                    y10: base.clone(),
                    y11: shift(2.0),
                },
                TrueEstimands::from_per_period(1, vec![2.0 * self.tau; periods - 1]),
            ),
        };
        let pop = Population::new(n, periods, 0, Vec::new(), table)?;
        Ok((pop, est))
    }
}

#[derive(Debug, Clone)]
pub struct FactorComponents {
    pub n_units: usize,
    pub n_periods: usize,
    pub low_rank: Vec<f64>,
    pub residual: Vec<f64>,
}

impl FactorComponents {
    pub fn baseline(&self) -> Vec<f64> {
        self.low_rank
            .iter()
            .zip(&self.residual)
            .map(|(l, e)| l + e)
            .collect()
    }
}

pub fn make_synthetic_factor_model(
    n: usize,
    periods: usize,
    params: &FactorModelParams,
    seed: u64,
) -> Result<(Population, TrueEstimands)> {
    params.build(n, periods, seed)
}

// ---------------------------------------------------------------------------
// Markov latent-state carryover
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovLatentParams {
    /// Baseline generator; its `tau` and `scheme` are ignored.
    pub base: FactorModelParams,
    pub rho: f64,
    /// Variance of both the state and the outcome shocks.
    pub shock_var: f64,
}

impl MarkovLatentParams {
    pub fn standard(rho: f64) -> Self {
        Self {
            base: FactorModelParams::standard(0.0, EffectScheme::NoCarryover),
            rho,
            shock_var: 0.16,
        }
    }

    pub fn build(&self, n: usize, periods: usize, seed: u64) -> Result<(Population, TrueEstimands)> {
        if n < 4 || n % 2 != 0 {
            return Err(PopulationError::InvalidDimensions(format!(
                "latent-state model needs an even number of units >= 4, got {n}"
            )));
        }
        if periods < 2 {
            return Err(PopulationError::InvalidDimensions("need at least 2 periods".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(PopulationError::InvalidParameter("|rho| must be < 1".into()));
        }
        if self.shock_var < 0.0 {
            return Err(PopulationError::InvalidParameter("shock_var must be >= 0".into()));
        }
        let base = self.base.components(n, periods, seed)?.baseline();
        let key = StreamKey::new(seed).child(ids::POPULATION);
        let sd = self.shock_var.sqrt();
        let draw = |stream: u64| -> Vec<f64> {
            (0..n)
                .flat_map(|i| (0..periods).map(move |t| (i, t)))
                .map(|(i, t)| sd * normal(key, stream, i, t))
                .collect()
        };
        let table = OutcomeTable::LatentState {
            base,
            rho: self.rho,
            state_shock: draw(ids::STATE_SHOCK),
            outcome_shock: draw(ids::OUTCOME_SHOCK),
        };
        let pop = Population::new(n, periods, 0, Vec::new(), table)?;
        let est = pop.true_estimands();
        Ok((pop, est))
    }
}

pub fn make_markov_latent_carryover(
    n: usize,
    periods: usize,
    params: &MarkovLatentParams,
    seed: u64,
) -> Result<(Population, TrueEstimands)> {
    params.build(n, periods, seed)
}
