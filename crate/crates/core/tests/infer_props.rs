use proptest::prelude::*;

use switchlab::design::{run_experiment, BalanceSpec, DesignPolicy, ExperimentTrajectory};
use switchlab::infer::{invert_test, randomization_pvalue, Alternative, InferError, RiOptions, SharpNull};
use switchlab::numerics::chi2_quantile;
use switchlab::population::{make_ar1_first_order_carryover, Ar1NoCarryoverParams};
use switchlab::stream::StreamKey;

fn policy() -> DesignPolicy {
    DesignPolicy::srsb(chi2_quantile(0.05, 2).unwrap(), BalanceSpec::lagged(true, 1))
}

fn observed(effect: f64, seed: u64) -> ExperimentTrajectory {
    let mut params = Ar1NoCarryoverParams::standard(1.0);
    params.effect = effect;
    let (pop, _) = params.build(20, 5, seed).unwrap();
    run_experiment(&pop, &policy(), &mut StreamKey::new(seed).child(9).rng()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn p_value_lies_in_unit_interval(delta in -2.0f64..2.0, seed in 0u64..1000, draws in 1usize..60) {
        let tr = observed(0.3, seed);
        let r = randomization_pvalue(&tr, SharpNull { delta }, &tr.policy, RiOptions::new(draws), StreamKey::new(seed)).unwrap();
        prop_assert!(r.p_value >= 1.0 / (draws + 1) as f64 && r.p_value <= 1.0);
        prop_assert_eq!(r.simulated.len(), draws);
        prop_assert_eq!(r.p_value, (1 + r.exceedances) as f64 / (1 + draws) as f64);
    }

    #[test]
    fn adding_a_constant_to_all_outcomes_keeps_the_p_value(shift in -8i32..8, seed in 0u64..1000) {
        let tr = observed(0.5, seed);
        let mut moved = tr.clone();
        for y in &mut moved.outcomes {
            *y += shift as f64 * 0.25;
        }
        let key = StreamKey::new(seed ^ 7);
        let a = randomization_pvalue(&tr, SharpNull { delta: 0.2 }, &tr.policy, RiOptions::new(40), key).unwrap();
        let b = randomization_pvalue(&moved, SharpNull { delta: 0.2 }, &moved.policy, RiOptions::new(40), key).unwrap();
        prop_assert!((a.estimate - b.estimate).abs() < 1e-9);
        prop_assert!((a.p_value - b.p_value).abs() <= 1.0 / 41.0 + 1e-12, "{} vs {}", a.p_value, b.p_value);
    }
}

#[test]
fn zero_statistic_gives_p_value_one() {
    let mut tr = observed(0.0, 3);
    for y in &mut tr.outcomes {
        *y = 1.5;
    }
    let r = randomization_pvalue(&tr, SharpNull { delta: 0.0 }, &tr.policy, RiOptions::new(50), StreamKey::new(1)).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn result_does_not_depend_on_thread_count() {
    let tr = observed(0.4, 12);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            randomization_pvalue(&tr, SharpNull { delta: 0.0 }, &tr.policy, RiOptions::new(64), StreamKey::new(5)).unwrap()
        })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn large_effect_is_rejected_and_true_effect_retained() {
    let mut centered = RiOptions::new(99);
    centered.centered = true;
    let (mut rejected_zero, mut rejected_truth) = (0, 0);
    let runs = 40usize;
    for seed in 0..runs {
        let tr = observed(2.0, 100 + seed as u64);
        let key = StreamKey::new(seed as u64);
        rejected_zero += (randomization_pvalue(&tr, SharpNull { delta: 0.0 }, &tr.policy, RiOptions::new(99), key)
            .unwrap()
            .p_value
            <= 0.05) as usize;
        rejected_truth += (randomization_pvalue(&tr, SharpNull { delta: 2.0 }, &tr.policy, centered, key)
            .unwrap()
            .p_value
            <= 0.05) as usize;
    }
    println!("rejected zero {rejected_zero}/{runs}, rejected truth {rejected_truth}/{runs}");
    assert_eq!(rejected_zero, runs);
    // Binomial(40, 0.05) exceeds 6 with probability about 0.003
    assert!(rejected_truth <= 6);
}

#[test]
fn one_sided_alternatives_mirror_each_other() {
    let tr = observed(0.3, 8);
    let mut greater = RiOptions::new(99);
    greater.alternative = Alternative::Greater;
    let mut less = greater;
    less.alternative = Alternative::Less;
    let key = StreamKey::new(3);
    let g = randomization_pvalue(&tr, SharpNull { delta: 0.3 }, &tr.policy, greater, key).unwrap();
    let l = randomization_pvalue(&tr, SharpNull { delta: 0.3 }, &tr.policy, less, key).unwrap();
    for (a, b) in g.simulated.iter().zip(&l.simulated) {
        assert_eq!(*a, -*b);
    }
    // every replay lands on one side or is tied
    assert!(g.exceedances + l.exceedances >= 99);
}

#[test]
fn inverted_test_contains_the_estimate() {
    let tr = observed(1.0, 6);
    let grid: Vec<f64> = (0..41).map(|k| -1.0 + 0.1 * k as f64).collect();
    let mut options = RiOptions::new(99);
    options.centered = true;
    let set = invert_test(&tr, &tr.policy, &grid, 0.05, options, StreamKey::new(4)).unwrap();
    let estimate = switchlab::estimate::sate_no_carryover(&tr).unwrap().estimate;
    assert!(!set.retained.is_empty());
    let lo = set.retained.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = set.retained.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo - 0.1 <= estimate && estimate <= hi + 0.1, "[{lo}, {hi}] vs {estimate}");
    assert!(!set.retained.contains(&-1.0));
    assert_eq!(set.p_values.len(), grid.len());
}

#[test]
fn invalid_requests_are_errors() {
    let tr = observed(0.0, 1);
    assert!(matches!(
        randomization_pvalue(&tr, SharpNull { delta: 0.0 }, &tr.policy, RiOptions::new(0), StreamKey::new(1)),
        Err(InferError::NoDraws)
    ));
    assert!(invert_test(&tr, &tr.policy, &[0.5, 0.1], 0.05, RiOptions::new(5), StreamKey::new(1)).is_err());
    assert!(invert_test(&tr, &tr.policy, &[0.1], 1.5, RiOptions::new(5), StreamKey::new(1)).is_err());

    let (pop, _) = make_ar1_first_order_carryover(8, 4, 2).unwrap();
    let carry = run_experiment(&pop, &DesignPolicy::complete_randomization(), &mut StreamKey::new(1).rng()).unwrap();
    assert!(matches!(
        randomization_pvalue(&carry, SharpNull { delta: 0.0 }, &carry.policy, RiOptions::new(5), StreamKey::new(1)),
        Err(InferError::CarryoverRegime(_))
    ));
}
