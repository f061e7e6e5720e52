use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{BalanceSpec, DesignKind, DesignPolicy, DistanceKind, FirstPeriodRule, DEFAULT_MAX_DRAWS};
use crate::estimate::{Predictor, StayScaling, DEFAULT_BLOCK_SIZE, DEFAULT_LEVEL};
use crate::numerics;
use crate::population::{
    self, Ar1NoCarryoverParams, EffectScheme, FactorModelParams, MarkovLatentParams, Population,
    TimeFactors, TrueEstimands,
};

/// A validation failure, located by the dotted path of the offending field.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn default_replications() -> usize {
    500
}

fn default_max_draws() -> usize {
    DEFAULT_MAX_DRAWS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Master seed; required before running.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Draw a fresh population for every replicate instead of one per grid point.
    #[serde(default)]
    pub redraw_population: bool,
    pub dgp: DgpConfig,
    pub grid: GridConfig,
    pub designs: Vec<DesignConfig>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    #[serde(flatten)]
    pub model: DgpModel,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_shock_var() -> f64 {
    0.16
}
fn default_time_factors() -> TimeFactors {
    TimeFactors::Iid
}
fn default_scheme() -> EffectScheme {
    EffectScheme::NoCarryover
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpModel {
    /// AR(1) with a covariate loading `rho` and a constant effect.
    Ar1NoCarryover {
        #[serde(default = "one")]
        rho: f64,
        #[serde(default = "half")]
        effect: f64,
    },
    /// AR(1) with fixed first-order carryover offsets.
    Ar1FirstOrder,
    HeterogeneousCarryover {
        #[serde(default = "half")]
        bernoulli_p: f64,
    },
    FactorModel {
        #[serde(default)]
        tau: f64,
        #[serde(default = "default_scheme")]
        scheme: EffectScheme,
        #[serde(default = "default_time_factors")]
        time_factors: TimeFactors,
    },
    MarkovLatent {
        #[serde(default)]
        rho: f64,
        #[serde(default = "default_shock_var")]
        shock_var: f64,
        #[serde(default = "default_time_factors")]
        time_factors: TimeFactors,
    },
}

impl DgpModel {
    pub fn covariate_dim(&self) -> usize {
        match self {
            DgpModel::FactorModel { .. } | DgpModel::MarkovLatent { .. } => 0,
            _ => 1,
        }
    }

    fn has_carryover(&self) -> bool {
        match self {
            DgpModel::Ar1NoCarryover { .. } => false,
            DgpModel::FactorModel { scheme, .. } => *scheme == EffectScheme::FirstOrder,
            _ => true,
        }
    }
}

impl DgpConfig {
    /// Copy with the grid axis set to `value`.
    pub fn at(&self, axis: GridAxis, value: f64) -> Result<DgpConfig, ConfigError> {
        let mut out = self.clone();
        let path = "grid.axis";
        match axis {
            GridAxis::N => out.n_units = value as usize,
            GridAxis::T => out.n_periods = value as usize,
            GridAxis::Rho => match &mut out.model {
                DgpModel::Ar1NoCarryover { rho, .. } | DgpModel::MarkovLatent { rho, .. } => *rho = value,
                _ => return Err(ConfigError::new(path, "rho axis needs ar1_no_carryover or markov_latent")),
            },
            GridAxis::Tau => match &mut out.model {
                DgpModel::FactorModel { tau, .. } => *tau = value,
                DgpModel::Ar1NoCarryover { effect, .. } => *effect = value,
                _ => return Err(ConfigError::new(path, "tau axis needs factor_model or ar1_no_carryover")),
            },
        }
        Ok(out)
    }

    pub fn build(&self, seed: u64) -> Result<(Population, TrueEstimands), population::PopulationError> {
        let (n, t) = (self.n_units, self.n_periods);
        match &self.model {
            DgpModel::Ar1NoCarryover { rho, effect } => {
                let mut p = Ar1NoCarryoverParams::standard(*rho);
                p.effect = *effect;
                p.build(n, t, seed)
            }
            DgpModel::Ar1FirstOrder => population::make_ar1_first_order_carryover(n, t, seed),
            DgpModel::HeterogeneousCarryover { bernoulli_p } => {
                let mut p = population::HeterogeneousCarryoverParams::standard();
                p.bernoulli_p = *bernoulli_p;
                p.build(n, t, seed)
            }
            DgpModel::FactorModel {
                tau,
                scheme,
                time_factors,
            } => {
                let mut p = FactorModelParams::standard(*tau, *scheme);
                p.time_factors = *time_factors;
                p.build(n, t, seed)
            }
            DgpModel::MarkovLatent {
                rho,
                shock_var,
                time_factors,
            } => {
                let mut p = MarkovLatentParams::standard(*rho);
                p.shock_var = *shock_var;
                p.base.time_factors = *time_factors;
                p.build(n, t, seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    N,
    T,
    Rho,
    Tau,
}

impl GridAxis {
    pub fn name(self) -> &'static str {
        match self {
            GridAxis::N => "N",
            GridAxis::T => "T",
            GridAxis::Rho => "rho",
            GridAxis::Tau => "tau",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub axis: GridAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub name: String,
    pub kind: DesignKind,
    /// Explicit acceptance threshold.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Threshold as the `alpha` quantile of chi-square with the balancing
    /// dimension; 0.01 when neither is given.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub balance: Option<BalanceSpec>,
    #[serde(default = "default_max_draws")]
    pub max_draws: usize,
    #[serde(default)]
    pub first_period: Option<FirstPeriodRule>,
    #[serde(default)]
    pub distance: DistanceKind,
}

impl DesignConfig {
    pub fn complete_randomization(name: &str) -> Self {
        Self::new(name, DesignKind::CompleteRandomization)
    }

    pub fn new(name: &str, kind: DesignKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            threshold: None,
            alpha: None,
            balance: None,
            max_draws: DEFAULT_MAX_DRAWS,
            first_period: None,
            distance: DistanceKind::Mahalanobis,
        }
    }

    pub fn with_balance(mut self, balance: BalanceSpec) -> Self {
        self.balance = Some(balance);
        self
    }

    fn balance_spec(&self) -> BalanceSpec {
        self.balance.clone().unwrap_or(BalanceSpec::lagged(true, 1))
    }

    /// Policy for a population with `covariate_dim` covariates.
    pub fn policy(&self, covariate_dim: usize) -> Result<DesignPolicy, ConfigError> {
        let mut policy = match self.kind {
            DesignKind::CompleteRandomization => DesignPolicy::complete_randomization(),
            DesignKind::BlockedCompleteRandomization => DesignPolicy::blocked_complete_randomization(),
            DesignKind::Srsb | DesignKind::BlockedSrsb => {
                let balance = self.balance_spec();
                let threshold = match (self.threshold, self.alpha) {
                    (Some(c), _) => c,
                    (None, alpha) => {
                        let d = balance.nominal_dim(covariate_dim).max(1);
                        numerics::chi2_quantile(alpha.unwrap_or(0.01), d)
                            .map_err(|e| ConfigError::new("alpha", e.to_string()))?
                    }
                };
                let mut p = if self.kind == DesignKind::Srsb {
                    DesignPolicy::srsb(threshold, balance)
                } else {
                    DesignPolicy::blocked_srsb(threshold, balance)
                };
                p.max_draws = self.max_draws;
                p
            }
        };
        if let Some(rule) = self.first_period {
            policy.first_period = rule;
        }
        policy.distance = self.distance;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    DiffInMeans,
    StayGroups,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Sate,
    TotalEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Defaults to stay groups for carryover populations.
    #[serde(default)]
    pub kind: Option<EstimatorKind>,
    #[serde(default)]
    pub stay_scaling: StayScaling,
    /// Defaults to the total effect when the population defines one.
    #[serde(default)]
    pub target: Option<Target>,
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}
fn default_level() -> f64 {
    DEFAULT_LEVEL
}
fn default_ri_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub predictor: Predictor,
    /// Randomization-inference draws per replicate; 0 disables it.
    #[serde(default)]
    pub ri_draws: usize,
    /// Null effect tested; defaults to the target.
    #[serde(default)]
    pub ri_delta: Option<f64>,
    #[serde(default = "default_ri_alpha")]
    pub ri_alpha: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            level: DEFAULT_LEVEL,
            predictor: Predictor::default(),
            ri_draws: 0,
            ri_delta: None,
            ri_alpha: 0.05,
        }
    }
}

fn default_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    /// Also write per-replicate records.
    #[serde(default)]
    pub detail: bool,
    /// Also write the first replicate's trajectory for every grid point and design.
    #[serde(default)]
    pub trajectories: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            detail: false,
            trajectories: false,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!(" at bytes {}..{}", s.start, s.end)).unwrap_or_default();
            ConfigError::new("<toml>", format!("{}{span}", e.message()))
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed
            .ok_or_else(|| ConfigError::new("seed", "missing; set it in the config or pass --seed"))
    }

    pub fn uses_carryover_estimator(&self) -> bool {
        match self.estimator.kind {
            Some(k) => k == EstimatorKind::StayGroups,
            None => self.dgp.model.has_carryover(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() {
            return Err(ConfigError::new("name", "must not be empty"));
        }
        self.seed()?;
        if self.replications == 0 {
            return Err(ConfigError::new("replications", "must be >= 1"));
        }
        if self.grid.values.is_empty() {
            return Err(ConfigError::new("grid.values", "must not be empty"));
        }
        if self.designs.is_empty() {
            return Err(ConfigError::new("designs", "at least one design is required"));
        }
        let blocked = self.designs.iter().any(|d| d.kind.is_blocked());
        let carryover = self.uses_carryover_estimator();
        for (k, &value) in self.grid.values.iter().enumerate() {
            let path = format!("grid.values[{k}]");
            if !value.is_finite() {
                return Err(ConfigError::new(path, "must be finite"));
            }
            if matches!(self.grid.axis, GridAxis::N | GridAxis::T) && (value < 1.0 || value.fract() != 0.0) {
                return Err(ConfigError::new(path, "must be a positive integer"));
            }
            let dgp = self.dgp.at(self.grid.axis, value)?;
            let (n, t) = (dgp.n_units, dgp.n_periods);
            let field = |f: &str| match self.grid.axis {
                GridAxis::N if f == "n_units" => path.clone(),
                GridAxis::T if f == "n_periods" => path.clone(),
                _ => format!("dgp.{f}"),
            };
            if n < 4 || n % 2 != 0 {
                return Err(ConfigError::new(field("n_units"), format!("N = {n} must be even and >= 4")));
            }
            if blocked && n % 4 != 0 {
                return Err(ConfigError::new(
                    field("n_units"),
                    format!("N = {n} must be divisible by 4 for blocked designs"),
                ));
            }
            if carryover && t < 2 {
                return Err(ConfigError::new(field("n_periods"), "carryover estimation needs T >= 2"));
            }
            if self.inference.block_size > t {
                return Err(ConfigError::new(
                    "inference.block_size",
                    format!("block size {} exceeds T = {t}", self.inference.block_size),
                ));
            }
        }
        if self.inference.block_size < 2 {
            return Err(ConfigError::new("inference.block_size", "must be >= 2"));
        }
        if !(self.inference.level > 0.0 && self.inference.level < 1.0) {
            return Err(ConfigError::new("inference.level", "must be in (0, 1)"));
        }
        if !(self.inference.ri_alpha > 0.0 && self.inference.ri_alpha < 1.0) {
            return Err(ConfigError::new("inference.ri_alpha", "must be in (0, 1)"));
        }
        if self.inference.ri_draws > 0 && carryover {
            return Err(ConfigError::new(
                "inference.ri_draws",
                "randomization inference is unavailable with the carryover estimator",
            ));
        }
        for (k, d) in self.designs.iter().enumerate() {
            let path = |f: &str| format!("designs[{k}].{f}");
            if d.name.is_empty() {
                return Err(ConfigError::new(path("name"), "must not be empty"));
            }
            if self.designs[..k].iter().any(|o| o.name == d.name) {
                return Err(ConfigError::new(path("name"), format!("duplicate design name {:?}", d.name)));
            }
            if let Some(c) = d.threshold {
                if !(c > 0.0) {
                    return Err(ConfigError::new(path("threshold"), "must be > 0"));
                }
            }
            if let Some(a) = d.alpha {
                if !(a > 0.0 && a < 1.0) {
                    return Err(ConfigError::new(path("alpha"), "must be in (0, 1)"));
                }
            }
            if d.max_draws == 0 {
                return Err(ConfigError::new(path("max_draws"), "must be >= 1"));
            }
            if let Some(b) = &d.balance {
                b.validate().map_err(|e| ConfigError::new(path("balance"), e.to_string()))?;
            }
            d.policy(self.dgp.model.covariate_dim())
                .map_err(|e| ConfigError::new(path(&e.path), e.message))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "demo"
seed = 7
replications = 3

[dgp]
kind = "ar1_no_carryover"
n_units = 20
n_periods = 10

[grid]
axis = "n"
values = [20, 40]

[[designs]]
name = "CR"
kind = "complete_randomization"

[[designs]]
name = "SRSB"
kind = "srsb"
alpha = 0.01
balance = { kind = "lagged_outcomes", include_covariates = true, n_lags = 1 }
"#;

    #[test]
    fn parses_and_roundtrips() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.designs.len(), 2);
        assert_eq!(cfg.inference.block_size, 8);
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        let policy = cfg.designs[1].policy(1).unwrap();
        assert!((policy.threshold - numerics::chi2_quantile(0.01, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.grid.values = vec![20.0, 21.0];
        assert_eq!(cfg.validate().unwrap_err().path, "grid.values[1]");

        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.designs[1].alpha = Some(1.5);
        assert_eq!(cfg.validate().unwrap_err().path, "designs[1].alpha");

        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.seed = None;
        assert_eq!(cfg.validate().unwrap_err().path, "seed");

        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.designs[0].kind = DesignKind::BlockedCompleteRandomization;
        cfg.grid.values = vec![20.0, 22.0];
        assert_eq!(cfg.validate().unwrap_err().path, "grid.values[1]");

        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.inference.block_size = 11;
        assert_eq!(cfg.validate().unwrap_err().path, "inference.block_size");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("replications = 3", "replications = 3\nbogus = 1");
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }

    #[test]
    fn axis_application() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert!(cfg.dgp.at(GridAxis::Rho, 0.5).is_ok());
        let mut fo = cfg.dgp.clone();
        fo.model = DgpModel::Ar1FirstOrder;
        assert!(fo.at(GridAxis::Tau, 0.5).is_err());
    }
}
