//! Acceptance criteria, run end to end through the public API. Each check
//! prints one PASS/FAIL line; the test fails if any criterion fails.

mod common;

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use switchlab::design::{
    candidate_acceptance_rate, imbalance_vector, run_experiment, BalanceSpec, DesignPolicy,
};
use switchlab::estimate::{sate_carryover, sate_no_carryover, variance_reduction_factor, StayScaling};
use switchlab::harness::{preset, rmse_slope, run_scenario, RowExtras, ScenarioConfig, SummaryRow, SummaryTable};
use switchlab::infer::{randomization_pvalue, RiOptions, SharpNull};
use switchlab::numerics::{chi2_cdf, chi2_quantile, scaled_covariance, MahalanobisMetric, Matrix};
use switchlab::population::{make_ar1_no_carryover, Ar1NoCarryoverParams};
use switchlab::stream::StreamKey;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &str, started: Instant, outcome: &Outcome) {
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "criterion {id:>2} {}: {title} [{:.0}s] {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        outcome.detail
    )
    .unwrap();
}

fn run_preset(name: &str, replications: Option<usize>) -> SummaryTable {
    let mut cfg: ScenarioConfig = preset(name).unwrap();
    if let Some(m) = replications {
        cfg.replications = m;
    }
    run_scenario(&cfg).unwrap().table
}

fn row<'a>(t: &'a SummaryTable, design: &str, value: f64) -> (&'a SummaryRow, &'a RowExtras) {
    let k = t
        .rows
        .iter()
        .position(|r| r.design == design && r.axis_value == value)
        .unwrap_or_else(|| panic!("no row for {design} at {value}"));
    (&t.rows[k], &t.extras[k])
}

fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn criterion_1(t: &SummaryTable) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [100.0, 200.0, 400.0, 800.0] {
        let (cr, cr_x) = row(t, "CR", n);
        let (s, s_x) = row(t, "SRSB", n);
        let gap = (cr.rmse - s.rmse) / combined(cr_x.rmse_se, s_x.rmse_se);
        let ok = s.rmse < cr.rmse && (n < 200.0 || gap > 3.0);
        pass &= ok;
        parts.push(format!("N={n}: CR {:.4} SRSB {:.4} gap {gap:.1} SE", cr.rmse, s.rmse));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn criterion_2(by_n: &SummaryTable, by_t: &SummaryTable) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, table) in [("N", by_n), ("T", by_t)] {
        for design in ["CR", "SRSB"] {
            let slope = rmse_slope(&table.rows, design).unwrap();
            pass &= (-0.65..=-0.35).contains(&slope);
            parts.push(format!("{design} vs log {label}: {slope:.3}"));
        }
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn criterion_3(t: &SummaryTable) -> Outcome {
    let rhos = [0.5, 1.0, 1.5];
    let mut reduction = Vec::new();
    let mut se = Vec::new();
    for rho in rhos {
        let (cr, cr_x) = row(t, "CR", rho);
        let (s, s_x) = row(t, "SRSB", rho);
        let ratio = s.rmse / cr.rmse;
        reduction.push(1.0 - ratio);
        se.push(ratio * combined(s_x.rmse_se / s.rmse, cr_x.rmse_se / cr.rmse));
    }
    let mut inversions = 0;
    let mut pass = true;
    for k in 1..rhos.len() {
        if reduction[k] <= reduction[k - 1] {
            inversions += 1;
            pass &= reduction[k - 1] - reduction[k] <= combined(se[k], se[k - 1]);
        }
    }
    pass &= inversions <= 1;
    let detail = rhos
        .iter()
        .zip(&reduction)
        .map(|(r, v)| format!("rho={r}: {v:.3}"))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { pass, detail }
}

fn criterion_4(t: &SummaryTable) -> Outcome {
    let value = t.rows[0].axis_value;
    let (cr, cr_x) = row(t, "CR", value);
    let (s, s_x) = row(t, "SRSB", value);
    let (b, b_x) = row(t, "BlockedSRSB", value);
    let gap_bs = (s.rmse - b.rmse) / combined(s_x.rmse_se, b_x.rmse_se);
    let gap_sc = (cr.rmse - s.rmse) / combined(cr_x.rmse_se, s_x.rmse_se);
    Outcome {
        pass: gap_bs > 2.0 && gap_sc > 2.0,
        detail: format!(
            "BlockedSRSB {:.4} < SRSB {:.4} ({gap_bs:.1} SE) < CR {:.4} ({gap_sc:.1} SE)",
            b.rmse, s.rmse, cr.rmse
        ),
    }
}

fn criterion_5(t: &SummaryTable) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, x) in t.rows.iter().zip(&t.extras) {
        let ok = r.coverage >= 0.95 - 0.02;
        pass &= ok;
        parts.push(format!(
            "{} tau={}: {:.3}{}",
            r.design,
            r.axis_value,
            r.coverage,
            if ok { "" } else { " (low)" }
        ));
        assert_eq!(x.replications, 500);
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn criterion_6(t: &SummaryTable) -> Outcome {
    let rhos = [0.0, 0.2, 0.4];
    let designs = ["CR", "SRSB", "BlockedSRSB"];
    let mut pass = true;
    let mut parts = Vec::new();
    for d in designs {
        let bias: Vec<f64> = rhos.iter().map(|&r| row(t, d, r).0.bias.abs()).collect();
        pass &= bias[0] < bias[1] && bias[1] < bias[2];
        let (r0, x0) = row(t, d, 0.0);
        pass &= r0.bias.abs() <= 3.0 * x0.bias_se;
        parts.push(format!(
            "{d} |bias| {:.4}/{:.4}/{:.4} (rho=0: {:.1} SE)",
            bias[0],
            bias[1],
            bias[2],
            r0.bias.abs() / x0.bias_se
        ));
    }
    for rho in rhos {
        let cr = row(t, "CR", rho).0.variance;
        for d in ["SRSB", "BlockedSRSB"] {
            pass &= row(t, d, rho).0.variance < cr;
        }
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn criterion_7() -> Outcome {
    let delta = 0.3;
    let mut params = Ar1NoCarryoverParams::standard(1.0);
    params.effect = delta;
    let (pop, _) = params.build(50, 10, 70_001).unwrap();
    let policy = DesignPolicy::srsb(chi2_quantile(0.01, 2).unwrap(), BalanceSpec::lagged(true, 1));
    let root = StreamKey::new(70_002);
    let outer = 300;
    let rejections = (0..outer)
        .filter(|&r| {
            let tr = run_experiment(&pop, &policy, &mut root.children(&[1, r]).rng()).unwrap();
            let res = randomization_pvalue(&tr, SharpNull { delta }, &policy, RiOptions::new(199), root.children(&[2, r]))
                .unwrap();
            res.p_value <= 0.05
        })
        .count();
    let rate = rejections as f64 / outer as f64;
    Outcome {
        pass: rate <= 0.07,
        detail: format!("rejection rate {rate:.3} ({rejections}/{outer})"),
    }
}

fn criterion_8() -> Outcome {
    use common::*;
    let m = 10_000;
    let pop = heterogeneous_no_carryover();
    let exact: Vec<f64> = cr_paths(4, 2).iter().map(|p| no_carryover_estimate(&pop, p)).collect();
    let policy = DesignPolicy::complete_randomization();
    let sim: Vec<f64> = (0..m)
        .map(|r| {
            let tr = run_experiment(&pop, &policy, &mut StreamKey::new(80_001).child(r).rng()).unwrap();
            sate_no_carryover(&tr).unwrap().estimate
        })
        .collect();
    let tv1 = total_variation(&histogram(&exact), &histogram(&sim));
    let z1 = (mean(&sim) - mean(&exact)).abs() / standard_error(&sim);

    let pop = small_carryover();
    let exact: Vec<f64> = blocked_cr_paths(4, 3).iter().map(|p| carryover_estimate(&pop, p)).collect();
    let policy = DesignPolicy::blocked_complete_randomization();
    let sim: Vec<f64> = (0..m)
        .map(|r| {
            let tr = run_experiment(&pop, &policy, &mut StreamKey::new(80_002).child(r).rng()).unwrap();
            sate_carryover(&tr, StayScaling::Fixed).unwrap().estimate
        })
        .collect();
    let tv2 = total_variation(&histogram(&exact), &histogram(&sim));
    let z2 = (mean(&sim) - mean(&exact)).abs() / standard_error(&sim);
    Outcome {
        pass: tv1 < 0.05 && tv2 < 0.05 && z1 <= 3.0 && z2 <= 3.0,
        detail: format!(
            "N=4,T=2: TV {tv1:.4}, mean gap {z1:.2} SE; N=4,T=3 blocked: TV {tv2:.4}, mean gap {z2:.2} SE"
        ),
    }
}

fn gaussian(n: usize, d: usize, key: StreamKey) -> Matrix {
    let mut rng = key.rng();
    Matrix::from_rows(n, d, (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn criterion_9() -> Outcome {
    let root = StreamKey::new(90_001);
    let mut parts = Vec::new();

    // complement symmetry
    let mut symmetric = true;
    for k in 0..500u64 {
        let key = root.children(&[1, k]);
        let (n, d) = (2 * (2 + k as usize % 40), 1 + k as usize % 4);
        let h = gaussian(n, d, key);
        let w = switchlab::design::draw_complete_randomization(n, &mut key.child(1).rng()).unwrap();
        let flipped: Vec<u8> = w.iter().map(|b| 1 - b).collect();
        let metric = MahalanobisMetric::new(&scaled_covariance(&h).unwrap());
        let (a, b) = (imbalance_vector(&h, &w).unwrap(), imbalance_vector(&h, &flipped).unwrap());
        symmetric &= a.iter().zip(&b).all(|(x, y)| *x == -*y);
        symmetric &= metric.distance(&a).to_bits() == metric.distance(&b).to_bits();
    }
    parts.push(format!("complement symmetry {}", if symmetric { "exact" } else { "broken" }));

    // exact counts and marginal probability
    let (pop, _) = make_ar1_no_carryover(20, 4, 1.0, 90_002).unwrap();
    let c = chi2_quantile(0.01, 2).unwrap();
    let mut counts_ok = true;
    let mut worst_z: f64 = 0.0;
    for policy in [DesignPolicy::srsb(c, BalanceSpec::lagged(true, 1)), DesignPolicy::blocked_srsb(c, BalanceSpec::lagged(true, 1))] {
        let m = 2000;
        let mut treated = vec![0usize; 80];
        for r in 0..m {
            let tr = run_experiment(&pop, &policy, &mut root.children(&[2, policy.kind as u64, r]).rng()).unwrap();
            for t in 0..4 {
                counts_ok &= tr.assignment.column_sum(t) == 10;
                if policy.kind.is_blocked() && t > 0 {
                    for g in [0u8, 1] {
                        let k = (0..20)
                            .filter(|&i| tr.assignment.get(i, t - 1) == g && tr.assignment.get(i, t) == 1)
                            .count();
                        counts_ok &= k == 5;
                    }
                }
                for i in 0..20 {
                    treated[i * 4 + t] += tr.assignment.get(i, t) as usize;
                }
            }
        }
        let se = (0.25 / m as f64).sqrt();
        for &k in &treated {
            worst_z = worst_z.max((k as f64 / m as f64 - 0.5).abs() / se);
        }
    }
    parts.push(format!("counts {}", if counts_ok { "exact" } else { "wrong" }));
    parts.push(format!("max |P(W=1) - 0.5| = {worst_z:.2} SE"));

    // acceptance rate with Gaussian balancing variables
    let h = gaussian(200, 2, root.child(3));
    let rate = candidate_acceptance_rate(&h, c, 100_000, &mut root.child(4).rng()).unwrap();
    parts.push(format!("acceptance rate {rate:.4}"));

    Outcome {
        pass: symmetric && counts_ok && worst_z <= 4.0 && (0.003..=0.03).contains(&rate),
        detail: parts.join("; "),
    }
}

fn criterion_10() -> Outcome {
    let mut worst_roundtrip: f64 = 0.0;
    for d in 1..=50 {
        for p in [1e-6, 1e-3, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 0.999, 0.999_999] {
            let q = chi2_quantile(p, d).unwrap();
            worst_roundtrip = worst_roundtrip.max((chi2_cdf(q, d).unwrap() - p).abs());
        }
    }
    let v1 = variance_reduction_factor(2, 0.020101).unwrap();
    let v2 = variance_reduction_factor(2, 1.386294).unwrap();
    let closed_ok = (v1 - 0.005025).abs() <= 1e-4 && (v2 - 0.30685).abs() <= 1e-4;

    let key = StreamKey::new(100_001);
    let mut worst_affine: f64 = 0.0;
    for k in 0..200u64 {
        let d = 1 + k as usize % 5;
        let n = 50;
        let h = gaussian(n, d, key.children(&[1, k]));
        let a = gaussian(d, d, key.children(&[2, k]));
        let shift = gaussian(1, d, key.children(&[3, k]));
        let mut moved = Vec::with_capacity(n * d);
        for i in 0..n {
            for r in 0..d {
                let v: f64 = (0..d).map(|c| a.get(r, c) * h.get(i, c)).sum();
                moved.push(v + shift.get(0, r));
            }
        }
        let h2 = Matrix::from_rows(n, d, moved).unwrap();
        let w = switchlab::design::draw_complete_randomization(n, &mut key.children(&[4, k]).rng()).unwrap();
        let before = MahalanobisMetric::new(&scaled_covariance(&h).unwrap()).distance(&imbalance_vector(&h, &w).unwrap());
        let after = MahalanobisMetric::new(&scaled_covariance(&h2).unwrap()).distance(&imbalance_vector(&h2, &w).unwrap());
        worst_affine = worst_affine.max((before - after).abs() / before);
    }
    Outcome {
        pass: worst_roundtrip <= 1e-8 && closed_ok && worst_affine <= 1e-8,
        detail: format!(
            "max roundtrip error {worst_roundtrip:.1e}; v(2, 0.020101) = {v1:.6}, v(2, 1.386294) = {v2:.5}; max affine relative error {worst_affine:.1e}"
        ),
    }
}

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let mut check = |id: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = f();
        report(id, title, started, &outcome);
        if !outcome.pass {
            failed.push(id);
        }
    };

    let by_n = run_preset("ar1_vary_n", None);
    let by_t = run_preset("ar1_vary_t", None);
    check(1, "SRSB beats CR in RMSE for every N", &mut || criterion_1(&by_n));
    check(2, "RMSE slopes against N and T near -1/2", &mut || criterion_2(&by_n, &by_t));
    check(3, "RMSE reduction grows with rho", &mut || criterion_3(&run_preset("ar1_vary_rho", None)));
    check(4, "blocked SRSB < SRSB < CR under first-order carryover", &mut || {
        criterion_4(&run_preset("carryover_designs", Some(200)))
    });
    check(5, "Wald coverage of the block variance on the factor carryover scenario", &mut || {
        criterion_5(&run_preset("factor_first_order", Some(500)))
    });
    check(6, "latent-state bias and variance pattern", &mut || criterion_6(&run_preset("markov_latent", Some(200))));
    check(7, "randomization test size", &mut criterion_7);
    check(8, "simulation matches exhaustive enumeration", &mut criterion_8);
    check(9, "design invariants", &mut criterion_9);
    check(10, "numerics", &mut criterion_10);

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
