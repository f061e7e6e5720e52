//! Exhaustive path enumeration shared by the oracle tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use switchlab::estimate::{diff_in_means_period, stay_contrast, StayScaling};
use switchlab::population::{make_heterogeneous_carryover, OutcomeTable, Population};

/// All 0/1 columns of length `n` with exactly `n / 2` ones.
pub fn balanced_columns(n: usize) -> Vec<Vec<u8>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == n / 2)
        .map(|m| (0..n).map(|i| ((m >> i) & 1) as u8).collect())
        .collect()
}

/// Columns treating exactly half of each block defined by `prev`.
pub fn blocked_columns(prev: &[u8]) -> Vec<Vec<u8>> {
    balanced_columns(prev.len())
        .into_iter()
        .filter(|w| {
            let ones_in = |g: u8| (0..prev.len()).filter(|&i| prev[i] == g && w[i] == 1).count();
            let size = |g: u8| prev.iter().filter(|&&p| p == g).count();
            2 * ones_in(1) == size(1) && 2 * ones_in(0) == size(0)
        })
        .collect()
}

/// Assignment paths as period-major columns.
pub type Path = Vec<Vec<u8>>;

pub fn cr_paths(n: usize, periods: usize) -> Vec<Path> {
    let mut paths: Vec<Path> = vec![Vec::new()];
    for _ in 0..periods {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                balanced_columns(n).into_iter().map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    paths
}

/// Complete randomization in the first period, blocked by the previous
/// column afterwards.
pub fn blocked_cr_paths(n: usize, periods: usize) -> Vec<Path> {
    let mut paths: Vec<Path> = balanced_columns(n).into_iter().map(|c| vec![c]).collect();
    for _ in 1..periods {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                let last = p.last().unwrap().clone();
                blocked_columns(&last).into_iter().map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    paths
}

pub fn observed_column(pop: &Population, path: &Path, t: usize) -> Vec<f64> {
    (0..pop.n_units())
        .map(|i| {
            let own: Vec<u8> = path[..=t].iter().map(|c| c[i]).collect();
            pop.outcome(i, t, &own)
        })
        .collect()
}

/// Per-period difference in means along a path, averaged over periods.
pub fn no_carryover_estimate(pop: &Population, path: &Path) -> f64 {
    let periods = path.len();
    (0..periods)
        .map(|t| diff_in_means_period(&observed_column(pop, path, t), &path[t]).unwrap())
        .sum::<f64>()
        / periods as f64
}

pub fn stay_estimate_at(pop: &Population, path: &Path, t: usize) -> f64 {
    stay_contrast(&observed_column(pop, path, t), &path[t - 1], &path[t], StayScaling::Fixed).unwrap()
}

pub fn carryover_estimate(pop: &Population, path: &Path) -> f64 {
    let periods = path.len();
    (1..periods).map(|t| stay_estimate_at(pop, path, t)).sum::<f64>() / (periods - 1) as f64
}

fn atom(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

/// Probability mass of values rounded to 1e-9.
pub fn histogram(values: &[f64]) -> BTreeMap<i64, f64> {
    let mut h = BTreeMap::new();
    let w = 1.0 / values.len() as f64;
    for &v in values {
        *h.entry(atom(v)).or_insert(0.0) += w;
    }
    h
}

pub fn total_variation(a: &BTreeMap<i64, f64>, b: &BTreeMap<i64, f64>) -> f64 {
    let keys: std::collections::BTreeSet<i64> = a.keys().chain(b.keys()).copied().collect();
    0.5 * keys
        .iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn standard_error(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Four-unit, two-period no-carryover table with unit-specific effects.
pub fn heterogeneous_no_carryover() -> Population {
    let y0 = vec![0.3, -1.2, 0.8, 0.1, 2.0, 1.1, -0.4, 0.9];
    let effects = [1.0, -0.5, 2.5, 0.25];
    let y1 = y0.iter().enumerate().map(|(c, y)| y + effects[c / 2] + 0.1 * (c % 2) as f64).collect();
    Population::new(4, 2, 0, Vec::new(), OutcomeTable::NoCarryover { y0, y1 }).unwrap()
}

/// Four-unit, three-period heterogeneous first-order population.
pub fn small_carryover() -> Population {
    make_heterogeneous_carryover(4, 3, 2024).unwrap().0
}
