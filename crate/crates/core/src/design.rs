//! Assignment policies and the sequential experiment loop.
//!
//! Each period the loop builds balancing variables from the history visible
//! before assignment, draws the period's assignment under the policy, then
//! observes outcomes from the population.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, MahalanobisMetric, Matrix, NumericsError};
use crate::population::{CarryoverOrder, Population};
use crate::stream::StreamRng;

pub const TRAJECTORY_VERSION: u32 = 1;
pub const DEFAULT_MAX_DRAWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("number of units must be even, got {0}")]
    OddUnits(usize),
    #[error("blocked designs need a number of units divisible by 4, got {0}")]
    NotDivisibleByFour(usize),
    #[error("previous assignment is not balanced: {treated} of {units} treated")]
    UnbalancedPrevious { treated: usize, units: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("trajectory: {0}")]
    Trajectory(String),
}

pub type Result<T> = std::result::Result<T, DesignError>;

/// Serde adapter mapping non-finite floats to `null` and back to `+inf`.
pub(crate) mod non_finite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter()
                .map(|x| x.is_finite().then_some(*x))
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?
                .into_iter()
                .map(|x| x.unwrap_or(f64::INFINITY))
                .collect())
        }
    }
}

// ---------------------------------------------------------------------------
// Assignments
// ---------------------------------------------------------------------------

/// Binary `N x T` assignment, stored unit-major so a unit's path prefix is a
/// contiguous slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    n_units: usize,
    n_periods: usize,
    w: Vec<u8>,
}

impl AssignmentMatrix {
    pub fn zeros(n_units: usize, n_periods: usize) -> Self {
        Self {
            n_units,
            n_periods,
            w: vec![0; n_units * n_periods],
        }
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    #[inline]
    pub fn get(&self, unit: usize, t: usize) -> u8 {
        self.w[unit * self.n_periods + t]
    }

    pub fn unit_path(&self, unit: usize) -> &[u8] {
        &self.w[unit * self.n_periods..(unit + 1) * self.n_periods]
    }

    pub fn column(&self, t: usize) -> Vec<u8> {
        (0..self.n_units).map(|i| self.get(i, t)).collect()
    }

    pub fn set_column(&mut self, t: usize, column: &[u8]) {
        assert_eq!(column.len(), self.n_units);
        for (i, &v) in column.iter().enumerate() {
            self.w[i * self.n_periods + t] = v;
        }
    }

    pub fn column_sum(&self, t: usize) -> usize {
        (0..self.n_units).map(|i| self.get(i, t) as usize).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct AssignmentRepr {
    n_units: usize,
    n_periods: usize,
    /// One string of '0'/'1' per unit.
    rows: Vec<String>,
}

impl Serialize for AssignmentMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = (0..self.n_units)
            .map(|i| {
                self.unit_path(i)
                    .iter()
                    .map(|&b| if b == 1 { '1' } else { '0' })
                    .collect()
            })
            .collect();
        AssignmentRepr {
            n_units: self.n_units,
            n_periods: self.n_periods,
            rows,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AssignmentMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let repr = AssignmentRepr::deserialize(d)?;
        if repr.rows.len() != repr.n_units {
            return Err(D::Error::custom("row count does not match n_units"));
        }
        let mut w = Vec::with_capacity(repr.n_units * repr.n_periods);
        for row in &repr.rows {
            if row.len() != repr.n_periods {
                return Err(D::Error::custom("row length does not match n_periods"));
            }
            for ch in row.chars() {
                w.push(match ch {
                    '0' => 0,
                    '1' => 1,
                    other => return Err(D::Error::custom(format!("invalid bit {other:?}"))),
                });
            }
        }
        Ok(AssignmentMatrix {
            n_units: repr.n_units,
            n_periods: repr.n_periods,
            w,
        })
    }
}

// ---------------------------------------------------------------------------
// Balancing variables
// ---------------------------------------------------------------------------

/// Information visible just before assigning period `t`: covariates through
/// `t` and outcomes through `t - 1`. Any other read panics.
pub struct History<'a> {
    t: usize,
    n_units: usize,
    n_periods: usize,
    covariate_dim: usize,
    covariates: &'a [f64],
    outcomes: &'a [f64],
}

impl<'a> History<'a> {
    /// `covariates` is unit-major `N x T x d_x`; `outcomes` is unit-major `N x T`.
    pub fn new(
        t: usize,
        n_units: usize,
        n_periods: usize,
        covariate_dim: usize,
        covariates: &'a [f64],
        outcomes: &'a [f64],
    ) -> Self {
        assert!(t < n_periods);
        assert_eq!(covariates.len(), n_units * n_periods * covariate_dim);
        assert_eq!(outcomes.len(), n_units * n_periods);
        Self {
            t,
            n_units,
            n_periods,
            covariate_dim,
            covariates,
            outcomes,
        }
    }

    pub fn period(&self) -> usize {
        self.t
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn covariate(&self, unit: usize, s: usize) -> &[f64] {
        assert!(
            s <= self.t,
            "balancing read covariate at period {s} while assigning period {}",
            self.t
        );
        let start = (unit * self.n_periods + s) * self.covariate_dim;
        &self.covariates[start..start + self.covariate_dim]
    }

    pub fn outcome(&self, unit: usize, s: usize) -> f64 {
        assert!(
            s < self.t,
            "balancing read outcome at period {s} while assigning period {}",
            self.t
        );
        self.outcomes[unit * self.n_periods + s]
    }
}

/// Recipe for the balancing variables of each period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BalanceSpec {
    /// `(X_t, Y_{t-1}, ..., Y_{t-n_lags})`; lags before the first period are dropped.
    LaggedOutcomes {
        include_covariates: bool,
        n_lags: usize,
    },
    /// `(X_t, Y_1, ..., Y_{t-1})`.
    AllPastOutcomes { include_covariates: bool },
    CovariatesOnly,
}

impl BalanceSpec {
    pub fn lagged(include_covariates: bool, n_lags: usize) -> Self {
        BalanceSpec::LaggedOutcomes {
            include_covariates,
            n_lags,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let BalanceSpec::LaggedOutcomes { n_lags: 0, .. } = self {
            return Err(DesignError::InvalidPolicy("n_lags must be >= 1".into()));
        }
        Ok(())
    }

    /// Dimension once every requested lag is available.
    pub fn nominal_dim(&self, covariate_dim: usize) -> usize {
        match *self {
            BalanceSpec::LaggedOutcomes {
                include_covariates,
                n_lags,
            } => covariate_dim * include_covariates as usize + n_lags,
            BalanceSpec::AllPastOutcomes { include_covariates } => {
                // grows with t; one lag is the steady minimum
                covariate_dim * include_covariates as usize + 1
            }
            BalanceSpec::CovariatesOnly => covariate_dim,
        }
    }

    fn includes_covariates(&self) -> bool {
        match *self {
            BalanceSpec::LaggedOutcomes {
                include_covariates, ..
            }
            | BalanceSpec::AllPastOutcomes { include_covariates } => include_covariates,
            BalanceSpec::CovariatesOnly => true,
        }
    }

    /// Outcome periods used at period `t`, most recent first.
    fn lags(&self, t: usize) -> Vec<usize> {
        match *self {
            BalanceSpec::LaggedOutcomes { n_lags, .. } => {
                (1..=n_lags.min(t)).map(|k| t - k).collect()
            }
            BalanceSpec::AllPastOutcomes { .. } => (0..t).collect(),
            BalanceSpec::CovariatesOnly => Vec::new(),
        }
    }

    /// Balancing matrix for the history's period; may have zero columns.
    pub fn build(&self, history: &History<'_>) -> Matrix {
        let t = history.period();
        let dx = if self.includes_covariates() {
            history.covariate_dim()
        } else {
            0
        };
        let lags = self.lags(t);
        let d = dx + lags.len();
        let n = history.n_units();
        let mut h = Matrix::zeros(n, d);
        for i in 0..n {
            if dx > 0 {
                for (k, v) in history.covariate(i, t).iter().enumerate() {
                    h.set(i, k, *v);
                }
            }
            for (k, &s) in lags.iter().enumerate() {
                h.set(i, dx + k, history.outcome(i, s));
            }
        }
        h
    }
}

pub fn lagged_outcome_balance_spec(include_covariate: bool, n_lags: usize) -> BalanceSpec {
    BalanceSpec::lagged(include_covariate, n_lags)
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    CompleteRandomization,
    BlockedCompleteRandomization,
    Srsb,
    BlockedSrsb,
}

impl DesignKind {
    pub fn is_blocked(self) -> bool {
        matches!(
            self,
            DesignKind::BlockedCompleteRandomization | DesignKind::BlockedSrsb
        )
    }
}

/// Period-1 rule for the blocked designs, which have no previous assignment
/// to block on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FirstPeriodRule {
    CompleteRandomization,
    #[default]
    Rerandomize,
}

/// Acceptance distance between treated and control balancing means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Mahalanobis,
    /// Plain squared Euclidean norm of the imbalance vector.
    Euclidean,
}

#[derive(Debug, Clone)]
enum Metric {
    Mahalanobis(MahalanobisMetric),
    Euclidean,
}

impl Metric {
    fn new(kind: DistanceKind, h: &Matrix) -> Result<Self> {
        Ok(match kind {
            DistanceKind::Mahalanobis => {
                Metric::Mahalanobis(MahalanobisMetric::new(&numerics::scaled_covariance(h)?))
            }
            DistanceKind::Euclidean => Metric::Euclidean,
        })
    }

    #[inline]
    fn distance(&self, theta: &[f64]) -> f64 {
        match self {
            Metric::Mahalanobis(m) => m.distance(theta),
            Metric::Euclidean => theta.iter().map(|x| x * x).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPolicy {
    pub kind: DesignKind,
    /// Acceptance threshold `c`; `null` in JSON means no threshold.
    #[serde(with = "non_finite")]
    pub threshold: f64,
    pub max_draws: usize,
    pub balance: BalanceSpec,
    #[serde(default)]
    pub first_period: FirstPeriodRule,
    #[serde(default)]
    pub distance: DistanceKind,
}

impl DesignPolicy {
    pub fn complete_randomization() -> Self {
        Self {
            kind: DesignKind::CompleteRandomization,
            threshold: f64::INFINITY,
            max_draws: 1,
            balance: BalanceSpec::CovariatesOnly,
            first_period: FirstPeriodRule::CompleteRandomization,
            distance: DistanceKind::Mahalanobis,
        }
    }

    pub fn blocked_complete_randomization() -> Self {
        Self {
            kind: DesignKind::BlockedCompleteRandomization,
            ..Self::complete_randomization()
        }
    }

    pub fn srsb(threshold: f64, balance: BalanceSpec) -> Self {
        Self {
            kind: DesignKind::Srsb,
            threshold,
            max_draws: DEFAULT_MAX_DRAWS,
            balance,
            first_period: FirstPeriodRule::Rerandomize,
            distance: DistanceKind::Mahalanobis,
        }
    }

    pub fn blocked_srsb(threshold: f64, balance: BalanceSpec) -> Self {
        Self {
            kind: DesignKind::BlockedSrsb,
            ..Self::srsb(threshold, balance)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(DesignError::InvalidPolicy(format!(
                "threshold must be > 0, got {}",
                self.threshold
            )));
        }
        if self.max_draws == 0 {
            return Err(DesignError::InvalidPolicy("max_draws must be >= 1".into()));
        }
        self.balance.validate()
    }
}

// ---------------------------------------------------------------------------
// Per-period assignment rules
// ---------------------------------------------------------------------------

/// One period's outcome of an assignment rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodDraw {
    pub assignment: Vec<u8>,
    /// Accepted distance; two entries (previously treated block first) for
    /// the blocked rule.
    pub distances: Vec<f64>,
    pub draws: usize,
    pub fallback: bool,
}

/// Chooses `k` of the first `len` entries of `perm` uniformly into `perm[..k]`.
#[inline]
fn partial_shuffle(perm: &mut [usize], k: usize, rng: &mut StreamRng) {
    let len = perm.len();
    for i in 0..k {
        let j = rng.random_range(i..len);
        perm.swap(i, j);
    }
}

fn fill_mask(mask: &mut [f64], chosen: &[usize]) {
    mask.iter_mut().for_each(|m| *m = 0.0);
    for &i in chosen {
        mask[i] = 1.0;
    }
}

/// `(2/n) sum_{treated} h_i - (2/n) sum_{control} h_i` with `mask` in {0, 1}.
/// Both sums run in index order, so complementing the mask negates the
/// result exactly.
#[inline]
fn imbalance_into(h: &Matrix, mask: &[f64], theta: &mut [f64]) {
    let d = h.cols();
    let n = h.rows();
    let data = h.as_slice();
    let scale = 2.0 / n as f64;
    for (k, th) in theta.iter_mut().enumerate() {
        let mut treated = 0.0;
        let mut control = 0.0;
        for i in 0..n {
            let v = data[i * d + k];
            let m = mask[i];
            treated += v * m;
            control += v * (1.0 - m);
        }
        *th = scale * treated - scale * control;
    }
}

/// Imbalance vector of the balancing matrix under assignment `w`.
pub fn imbalance_vector(h: &Matrix, w: &[u8]) -> Result<Vec<f64>> {
    if w.len() != h.rows() {
        return Err(DesignError::Dimension(format!(
            "assignment has {} entries for {} units",
            w.len(),
            h.rows()
        )));
    }
    let mask: Vec<f64> = w.iter().map(|&b| b as f64).collect();
    let mut theta = vec![0.0; h.cols()];
    imbalance_into(h, &mask, &mut theta);
    Ok(theta)
}

/// Uniform draw over the balanced columns with exactly `n/2` treated.
pub fn draw_complete_randomization(n: usize, rng: &mut StreamRng) -> Result<Vec<u8>> {
    if n % 2 != 0 {
        return Err(DesignError::OddUnits(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    partial_shuffle(&mut perm, n / 2, rng);
    let mut w = vec![0u8; n];
    for &i in &perm[..n / 2] {
        w[i] = 1;
    }
    Ok(w)
}

/// Sequential rerandomization for one period: uniform balanced candidates
/// until one has distance `< threshold`, else the minimum-distance
/// candidate after `max_draws` draws.
pub fn rerandomize_period(
    h: &Matrix,
    threshold: f64,
    max_draws: usize,
    distance: DistanceKind,
    rng: &mut StreamRng,
) -> Result<PeriodDraw> {
    let n = h.rows();
    if n % 2 != 0 {
        return Err(DesignError::OddUnits(n));
    }
    if max_draws == 0 {
        return Err(DesignError::InvalidPolicy("max_draws must be >= 1".into()));
    }
    if h.cols() == 0 {
        return Ok(PeriodDraw {
            assignment: draw_complete_randomization(n, rng)?,
            distances: vec![0.0],
            draws: 1,
            fallback: false,
        });
    }
    let metric = Metric::new(distance, h)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut mask = vec![0.0; n];
    let mut theta = vec![0.0; h.cols()];
    let mut best = f64::INFINITY;
    let mut best_mask: Option<Vec<f64>> = None;

    for m in 0..max_draws {
        partial_shuffle(&mut perm, n / 2, rng);
        fill_mask(&mut mask, &perm[..n / 2]);
        imbalance_into(h, &mask, &mut theta);
        let dist = metric.distance(&theta);
        if dist < threshold {
            return Ok(PeriodDraw {
                assignment: mask.iter().map(|&x| x as u8).collect(),
                distances: vec![dist],
                draws: m + 1,
                fallback: false,
            });
        }
        if dist < best || best_mask.is_none() {
            best = dist;
            best_mask = Some(mask.clone());
        }
    }
    Ok(PeriodDraw {
        assignment: best_mask.unwrap().iter().map(|&x| x as u8).collect(),
        distances: vec![best],
        draws: max_draws,
        fallback: true,
    })
}

/// Fraction of `candidates` uniform balanced candidates whose distance is
/// below `threshold`.
pub fn candidate_acceptance_rate(
    h: &Matrix,
    threshold: f64,
    candidates: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    let n = h.rows();
    if n % 2 != 0 {
        return Err(DesignError::OddUnits(n));
    }
    let metric = Metric::new(DistanceKind::Mahalanobis, h)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut mask = vec![0.0; n];
    let mut theta = vec![0.0; h.cols()];
    let mut accepted = 0usize;
    for _ in 0..candidates {
        partial_shuffle(&mut perm, n / 2, rng);
        fill_mask(&mut mask, &perm[..n / 2]);
        imbalance_into(h, &mask, &mut theta);
        if metric.distance(&theta) < threshold {
            accepted += 1;
        }
    }
    Ok(accepted as f64 / candidates as f64)
}

/// Blocked rerandomization for one period: units are split by their previous
/// assignment and exactly a quarter of all units is treated inside each
/// block. A candidate is accepted when both blockwise distances are below the
/// threshold; the fallback minimizes their sum.
pub fn blocked_rerandomize_period(
    h: &Matrix,
    previous: &[u8],
    threshold: f64,
    max_draws: usize,
    distance: DistanceKind,
    rng: &mut StreamRng,
) -> Result<PeriodDraw> {
    let n = h.rows();
    if n % 4 != 0 {
        return Err(DesignError::NotDivisibleByFour(n));
    }
    if previous.len() != n {
        return Err(DesignError::Dimension(format!(
            "previous assignment has {} entries for {n} units",
            previous.len()
        )));
    }
    let treated = previous.iter().filter(|&&b| b == 1).count();
    if treated != n / 2 {
        return Err(DesignError::UnbalancedPrevious { treated, units: n });
    }
    if max_draws == 0 {
        return Err(DesignError::InvalidPolicy("max_draws must be >= 1".into()));
    }
    let groups: [Vec<usize>; 2] = [
        (0..n).filter(|&i| previous[i] == 1).collect(),
        (0..n).filter(|&i| previous[i] == 0).collect(),
    ];
    let half = n / 2;
    let quarter = n / 4;
    let balancing = h.cols() > 0;
    let blocks: Vec<Matrix> = groups.iter().map(|g| h.select_rows(g)).collect();
    let metrics = if balancing {
        Some([
            Metric::new(distance, &blocks[0])?,
            Metric::new(distance, &blocks[1])?,
        ])
    } else {
        None
    };

    let mut perms: [Vec<usize>; 2] = [(0..half).collect(), (0..half).collect()];
    let mut masks = [vec![0.0; half], vec![0.0; half]];
    let mut theta = vec![0.0; h.cols()];
    let mut dists = [0.0; 2];
    let mut best = f64::INFINITY;
    let mut best_state: Option<([Vec<f64>; 2], [f64; 2])> = None;

    let assemble = |masks: &[Vec<f64>; 2]| -> Vec<u8> {
        let mut w = vec![0u8; n];
        for (g, group) in groups.iter().enumerate() {
            for (k, &unit) in group.iter().enumerate() {
                w[unit] = masks[g][k] as u8;
            }
        }
        w
    };

    for m in 0..max_draws {
        for g in 0..2 {
            partial_shuffle(&mut perms[g], quarter, rng);
            fill_mask(&mut masks[g], &perms[g][..quarter]);
            dists[g] = match &metrics {
                Some(ms) => {
                    imbalance_into(&blocks[g], &masks[g], &mut theta);
                    ms[g].distance(&theta)
                }
                None => 0.0,
            };
        }
        if dists[0] < threshold && dists[1] < threshold {
            return Ok(PeriodDraw {
                assignment: assemble(&masks),
                distances: dists.to_vec(),
                draws: m + 1,
                fallback: false,
            });
        }
        let total = dists[0] + dists[1];
        if total < best || best_state.is_none() {
            best = total;
            best_state = Some((masks.clone(), dists));
        }
    }
    let (masks, dists) = best_state.unwrap();
    Ok(PeriodDraw {
        assignment: assemble(&masks),
        distances: dists.to_vec(),
        draws: max_draws,
        fallback: true,
    })
}

// ---------------------------------------------------------------------------
// Experiment loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodDiagnostics {
    pub balance_dim: usize,
    #[serde(with = "non_finite::vec")]
    pub distances: Vec<f64>,
    pub draws: usize,
    pub fallback: bool,
}

/// Everything observed in one run of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTrajectory {
    pub version: u32,
    pub n_units: usize,
    pub n_periods: usize,
    pub carryover: CarryoverOrder,
    pub policy: DesignPolicy,
    pub covariate_dim: usize,
    /// Unit-major `N x T x d_x`.
    pub covariates: Vec<f64>,
    pub assignment: AssignmentMatrix,
    /// Unit-major `N x T`.
    pub outcomes: Vec<f64>,
    pub diagnostics: Vec<PeriodDiagnostics>,
}

impl ExperimentTrajectory {
    #[inline]
    pub fn outcome(&self, unit: usize, t: usize) -> f64 {
        self.outcomes[unit * self.n_periods + t]
    }

    pub fn outcome_column(&self, t: usize) -> Vec<f64> {
        (0..self.n_units).map(|i| self.outcome(i, t)).collect()
    }

    pub fn total_draws(&self) -> usize {
        self.diagnostics.iter().map(|d| d.draws).sum()
    }

    pub fn fallback_count(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.fallback).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tr: ExperimentTrajectory =
            serde_json::from_str(text).map_err(|e| DesignError::Trajectory(e.to_string()))?;
        if tr.version != TRAJECTORY_VERSION {
            return Err(DesignError::Trajectory(format!(
                "unsupported trajectory version {}",
                tr.version
            )));
        }
        let cells = tr.n_units * tr.n_periods;
        if tr.outcomes.len() != cells
            || tr.covariates.len() != cells * tr.covariate_dim
            || tr.assignment.n_units() != tr.n_units
            || tr.assignment.n_periods() != tr.n_periods
            || tr.diagnostics.len() != tr.n_periods
        {
            return Err(DesignError::Trajectory("inconsistent dimensions".into()));
        }
        Ok(tr)
    }
}

/// Runs the policy on the population, strictly in period order.
pub fn run_experiment(
    population: &Population,
    policy: &DesignPolicy,
    rng: &mut StreamRng,
) -> Result<ExperimentTrajectory> {
    policy.validate()?;
    let n = population.n_units();
    let periods = population.n_periods();
    if n % 2 != 0 {
        return Err(DesignError::OddUnits(n));
    }
    if policy.kind.is_blocked() && n % 4 != 0 {
        return Err(DesignError::NotDivisibleByFour(n));
    }
    let dx = population.covariate_dim();
    let covariates = population.covariates();
    let mut assignment = AssignmentMatrix::zeros(n, periods);
    let mut outcomes = vec![0.0; n * periods];
    let mut diagnostics = Vec::with_capacity(periods);
    let mut previous: Vec<u8> = Vec::new();

    for t in 0..periods {
        let balancing = matches!(policy.kind, DesignKind::Srsb | DesignKind::BlockedSrsb);
        let h = if balancing {
            let history = History::new(t, n, periods, dx, covariates, &outcomes);
            policy.balance.build(&history)
        } else {
            Matrix::zeros(n, 0)
        };
        let draw = match policy.kind {
            DesignKind::CompleteRandomization => PeriodDraw {
                assignment: draw_complete_randomization(n, rng)?,
                distances: vec![0.0],
                draws: 1,
                fallback: false,
            },
            DesignKind::Srsb => {
                rerandomize_period(&h, policy.threshold, policy.max_draws, policy.distance, rng)?
            }
            DesignKind::BlockedCompleteRandomization | DesignKind::BlockedSrsb if t == 0 => {
                let rerandomize = policy.kind == DesignKind::BlockedSrsb
                    && policy.first_period == FirstPeriodRule::Rerandomize;
                if rerandomize {
                    rerandomize_period(&h, policy.threshold, policy.max_draws, policy.distance, rng)?
                } else {
                    PeriodDraw {
                        assignment: draw_complete_randomization(n, rng)?,
                        distances: vec![0.0],
                        draws: 1,
                        fallback: false,
                    }
                }
            }
            DesignKind::BlockedCompleteRandomization => blocked_rerandomize_period(
                &h,
                &previous,
                f64::INFINITY,
                1,
                policy.distance,
                rng,
            )?,
            DesignKind::BlockedSrsb => blocked_rerandomize_period(
                &h,
                &previous,
                policy.threshold,
                policy.max_draws,
                policy.distance,
                rng,
            )?,
        };
        assignment.set_column(t, &draw.assignment);
        for i in 0..n {
            outcomes[i * periods + t] = population.outcome(i, t, &assignment.unit_path(i)[..=t]);
        }
        diagnostics.push(PeriodDiagnostics {
            balance_dim: h.cols(),
            distances: draw.distances,
            draws: draw.draws,
            fallback: draw.fallback,
        });
        previous = draw.assignment;
    }

    Ok(ExperimentTrajectory {
        version: TRAJECTORY_VERSION,
        n_units: n,
        n_periods: periods,
        carryover: population.carryover_order(),
        policy: policy.clone(),
        covariate_dim: dx,
        covariates: covariates.to_vec(),
        assignment,
        outcomes,
        diagnostics,
    })
}
