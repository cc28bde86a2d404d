//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N ... PASS|FAIL` line with the measured quantities.

use std::time::{Duration, Instant};

use fpa_core::competition::{crra_lower_bound, hill_n_lower, identify_competition, identify_from_jumps, HillConfig};
use fpa_core::detect::{detect_jumps, DetectionConfig};
use fpa_core::endogenous::{entry_cost, identify_reserve_unknown_n_atoms, solve_gamma_system};
use fpa_core::equilibrium::{
    bid_quantile_from_value, value_from_bid_quantile, winning_bid_mixture, CompetitionPmf, ValueQuantile, WinningBidLaw,
};
use fpa_core::numeric::{adaptive_integral, chebyshev_grid};
use fpa_core::participation::{
    lower_tail_divergence_check, lower_tail_tabulation, outcome_distribution, ConditionalFamily, EntryModel,
    InfoRegime, ParticipationModel, ReserveModel, Schedule,
};
use fpa_core::recovery::{iterate_recovery, RecoveryConfig};
use fpa_core::simulate::{simulate, write_csv, ModelSpec, SimConfig, Status, ValueSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

fn report(id: u32, name: &str, pass: bool, start: Instant, budget: Duration, detail: String) {
    let elapsed = start.elapsed();
    let ok = pass && elapsed <= budget;
    println!(
        "criterion {id:>2} {name}: {} ({detail}; {:.2}s of {:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(elapsed <= budget, "criterion {id} over its time budget");
}

fn sqrt_v() -> ValueQuantile<f64> {
    ValueQuantile::power(0.0, 1.0, 0.5).unwrap()
}

fn half_half() -> CompetitionPmf<f64> {
    CompetitionPmf::new(2, vec![0.5, 0.5]).unwrap()
}

fn sqrt_model() -> ModelSpec<f64> {
    ModelSpec::Benchmark {
        value: ValueSpec::Power { lo: 0.0, hi: 1.0, exponent: 0.5 },
        n_lo: 2,
        weights: vec![0.5, 0.5],
        theta: 1.0,
    }
}

#[test]
fn criterion_01_closed_form_equilibrium() {
    let start = Instant::now();
    let g = chebyshev_grid(1001);
    let b2 = bid_quantile_from_value(&sqrt_v(), 2, 1.0, &g).unwrap().b_hi();
    let b3 = bid_quantile_from_value(&sqrt_v(), 3, 1.0, &g).unwrap().b_hi();
    let (e2, e3) = ((b2 - 2.0 / 3.0).abs(), (b3 - 0.8).abs());
    let pass = e2 <= 1e-10 && e3 <= 1e-10;
    report(
        1,
        "closed-form equilibrium",
        pass,
        start,
        Duration::from_secs(1),
        format!("|b2 - 2/3| = {e2:.1e}, |b3 - 4/5| = {e3:.1e}"),
    );
}

#[test]
fn criterion_02_jump_formula() {
    let start = Instant::now();
    let mix = winning_bid_mixture(&sqrt_v(), &half_half(), 1.0, &chebyshev_grid(1001)).unwrap();
    let j = mix.jump_points();
    let (e2, e3) = ((j[0].size - 3.0).abs(), (j[1].size - 3.75).abs());
    let pass = e2 <= 1e-8 && e3 <= 1e-8;
    report(
        2,
        "jump formula",
        pass,
        start,
        Duration::from_secs(1),
        format!("|D2 - 3| = {e2:.1e}, |D3 - 15/4| = {e3:.1e}"),
    );
}

#[test]
fn criterion_03_identification_inversion() {
    let start = Instant::now();
    let est = identify_competition(&[2.0 / 3.0f64, 0.8], &[3.0, 3.75], 2, 1.0).unwrap();
    let ev = (est.v_hi - 1.0).abs();
    let ep = est.weights.iter().map(|p| (p - 0.5).abs()).fold(0.0, f64::max);
    let pass = ev <= 1e-10 && ep <= 1e-10 && est.diagnostics.passed;
    report(
        3,
        "identification inversion",
        pass,
        start,
        Duration::from_secs(1),
        format!("|v - 1| = {ev:.1e}, max |p - 1/2| = {ep:.1e}"),
    );
}

#[test]
fn criterion_04_iterative_recovery() {
    let start = Instant::now();
    let mix = winning_bid_mixture(&sqrt_v(), &half_half(), 1.0, &chebyshev_grid(4001)).unwrap();
    let est = identify_competition(&[2.0 / 3.0, 0.8], &[3.0, 3.75], 2, 1.0).unwrap();
    let run = |k: usize| iterate_recovery(&mix, &est, &RecoveryConfig { max_iter: k, ..Default::default() }).unwrap();
    let sup = |r: &fpa_core::recovery::RecoveredValue<f64>| {
        r.alpha.iter().zip(&r.value).map(|(a, v)| (v - a.sqrt()).abs()).fold(0.0, f64::max)
    };
    let r12 = run(12);
    let e1 = (r12.alpha_seq[0] - 25.0 / 36.0).abs();
    let e2 = (r12.alpha_seq[1] - 625.0 / 1296.0).abs();
    let (s8, s10, s12) = (sup(&run(8)), sup(&run(10)), sup(&r12));
    let pass = e1 <= 1e-8 && e2 <= 1e-8 && s8 < 1e-3 && s10 < 1e-3;
    report(
        4,
        "iterative recovery",
        pass,
        start,
        Duration::from_secs(10),
        format!(
            "|a1 - 25/36| = {e1:.1e}, |a2 - 625/1296| = {e2:.1e}, sup K=8 {s8:.1e}, K=10 {s10:.1e} (K=12 {s12:.1e}, a_12 = {:.4})",
            r12.alpha_floor()
        ),
    );
}

#[test]
fn criterion_05_monte_carlo_round_trip() {
    let start = Instant::now();
    let sample = simulate(&SimConfig::new(sqrt_model(), 100_000, 7)).unwrap();
    let w = sample.competitive_bids();
    let jumps = detect_jumps(&w, &DetectionConfig { h0: 0.3, ..Default::default() }).unwrap();
    let loc = jumps.locations();
    let located = loc.len() == 2 && (loc[0] - 2.0 / 3.0).abs() <= 0.02 && (loc[1] - 0.8).abs() <= 0.02;
    let (p2, v_hi) = if loc.len() >= 2 {
        let est = identify_from_jumps(&jumps, 2, 1.0).unwrap();
        (est.weights[0], est.v_hi)
    } else {
        (f64::NAN, f64::NAN)
    };
    let hill = hill_n_lower(&sample, &HillConfig::default()).unwrap();
    let pass_jumps = located && (0.45..=0.55).contains(&p2) && (0.95..=1.05).contains(&v_hi);
    let pass_hill = hill.n_lo == 2;
    report(
        5,
        "Monte-Carlo round trip",
        pass_jumps && pass_hill,
        start,
        Duration::from_secs(120),
        format!(
            "jumps {loc:.4?}, p2 = {p2:.4}, v = {v_hi:.4}, Hill n_lo = {} [jumps {}, Hill {}]",
            hill.n_lo,
            if pass_jumps { "ok" } else { "fail" },
            if pass_hill { "ok" } else { "fail" }
        ),
    );
}

#[test]
fn criterion_06_reserve_atoms() {
    let start = Instant::now();
    let model = ModelSpec::Reserve {
        value: ValueSpec::Uniform { lo: 0.0, hi: 1.0 },
        n_potential: 2,
        reserve: Schedule::constant(0.5),
        info: InfoRegime::KnownN,
    };
    let sample = simulate(&SimConfig::new(model, 1_000_000, 6)).unwrap();
    let l = sample.len() as f64;
    let not_sold = sample.records.iter().filter(|r| r.status == Status::NotSold).count() as f64 / l;
    let atom = sample.records.iter().filter(|r| matches!(r.status, Status::SoldAtAtom(_))).count() as f64 / l;
    let pass = (not_sold - 0.25).abs() <= 0.002 && (atom - 0.5).abs() <= 0.002;
    report(6, "reserve atoms", pass, start, Duration::from_secs(60), format!("not sold {not_sold:.4}, atom {atom:.4}"));
}

#[test]
fn criterion_07_phi_inversion_and_gamma_system() {
    let start = Instant::now();
    let atoms = identify_reserve_unknown_n_atoms(0.25f64, 0.5).unwrap();
    let ea = (atoms.screening - 0.5).abs();
    // γ(z) from the model's sale-price law: (1 - P(not sold)) times the density at the top
    let grid = chebyshev_grid(1001);
    let points: Vec<(f64, f64)> = [0.5, 0.6]
        .iter()
        .map(|&r| {
            let model = ParticipationModel::Reserve(
                ReserveModel::new(
                    ValueQuantile::uniform(0.0, 1.0).unwrap(),
                    2,
                    Schedule::constant(r),
                    InfoRegime::UnknownN,
                )
                .unwrap(),
            );
            let d = outcome_distribution(&model, None, &grid).unwrap();
            let top = d.sold.support().1;
            (top, (1.0 - d.p_not_sold) * d.sold.density_left(top))
        })
        .collect();
    let closed: Vec<(f64, f64)> =
        [0.5f64, 0.6].iter().map(|r| ((1.0 + r * r) / 2.0, 2.0 / (1.0 - (1.0 + r * r) / 2.0))).collect();
    let model_sys = solve_gamma_system(&points).unwrap();
    let closed_sys = solve_gamma_system(&closed).unwrap();
    let ev = (closed_sys.v_hi - 1.0).abs().max((model_sys.v_hi - 1.0).abs());
    let pass = ea <= 1e-8
        && atoms.n_potential == 2
        && ev <= 1e-6
        && closed_sys.n_potential == 2
        && model_sys.n_potential == 2
        && closed_sys.residual <= 1e-6
        && model_sys.residual <= 1e-6;
    report(
        7,
        "phi inversion and gamma system",
        pass,
        start,
        Duration::from_secs(1),
        format!(
            "F(R) err {ea:.1e}, n = {}; gamma {:.6?}; v err {ev:.1e}, n residual {:.1e}",
            atoms.n_potential,
            points.iter().map(|p| p.1).collect::<Vec<_>>(),
            model_sys.residual.max(closed_sys.residual)
        ),
    );
}

fn kappa_of(sorted: &[f64], fraction: f64) -> f64 {
    let tab = lower_tail_tabulation(sorted, None, fraction);
    lower_tail_divergence_check(&tab, sorted[0]).unwrap()
}

#[test]
fn criterion_08_divergence_exponent() {
    let start = Instant::now();
    let reserve = ModelSpec::Reserve {
        value: ValueSpec::Uniform { lo: 0.0, hi: 1.0 },
        n_potential: 2,
        reserve: Schedule::constant(0.5),
        info: InfoRegime::UnknownN,
    };
    let ru = simulate(&SimConfig::new(reserve, 200_000, 8)).unwrap().competitive_bids();
    let bench = ModelSpec::Benchmark {
        value: ValueSpec::Uniform { lo: 0.0, hi: 1.0 },
        n_lo: 2,
        weights: vec![0.5, 0.5],
        theta: 1.0,
    };
    let bu = simulate(&SimConfig::new(bench, 200_000, 8)).unwrap().competitive_bids();
    let sq = simulate(&SimConfig::new(sqrt_model(), 200_000, 8)).unwrap().competitive_bids();
    let (k_res, k_bench, k_sqrt) = (kappa_of(&ru, 0.02), kappa_of(&bu, 0.02), kappa_of(&sq, 0.02));
    let pass = (0.45..=0.55).contains(&k_res) && (1.8..=2.2).contains(&k_bench);
    report(
        8,
        "divergence exponent",
        pass,
        start,
        Duration::from_secs(60),
        format!("unknown-N reserve {k_res:.3}, uniform benchmark {k_bench:.3} (sqrt benchmark {k_sqrt:.3})"),
    );
}

/// Smallest θ on a uniform grid with every `p_n(θ)` in [0, 1] and `v̄(θ)` above
/// the largest discontinuity, written out from the definitions.
fn theta_grid_search(loc: &[f64], size: &[f64], n_lo: usize, points: usize) -> f64 {
    let w: Vec<f64> = size.iter().enumerate().map(|(i, d)| (n_lo + i - 1) as f64 / (n_lo + i) as f64 * d).collect();
    let s: f64 = w.iter().sum();
    let m: f64 = w.iter().zip(loc).map(|(a, b)| a * b).sum::<f64>() / s;
    let top = loc[loc.len() - 1];
    (1..=points)
        .map(|i| i as f64 / points as f64)
        .find(|&t| {
            let p_ok = w.iter().zip(loc).all(|(&wn, &bn)| {
                let p = wn / s + wn * (m - bn) / t;
                (0.0..=1.0).contains(&p)
            });
            p_ok && t / s + m > top
        })
        .unwrap_or(f64::NAN)
}

#[test]
fn criterion_09_crra_bound() {
    let start = Instant::now();
    let (loc, size) = ([2.0 / 3.0, 0.8], [3.0, 3.75]);
    let bound = crra_lower_bound(&loc, &size, 2).unwrap();
    let grid = theta_grid_search(&loc, &size, 2, 1_000_000);
    let exact_ok = (bound.lower - 0.2).abs() <= 1e-12 && (grid - bound.lower).abs() <= 1e-6 + 1e-12;
    let mut runner = TestRunner::new(Config { cases: 24, failure_persistence: None, ..Config::default() });
    let worst = std::cell::Cell::new(0.0f64);
    let prop =
        runner.run(&(0.3f64..3.0, 2usize..4, proptest::collection::vec(0.05f64..1.0, 2..4)), |(p, n_lo, raw)| {
            let total: f64 = raw.iter().sum();
            let pmf = CompetitionPmf::new(n_lo, raw.iter().map(|x| x / total).collect()).unwrap();
            let v = ValueQuantile::power(0.0, 1.0, p).unwrap();
            let mix = winning_bid_mixture(&v, &pmf, 1.0, &chebyshev_grid(201)).unwrap();
            let j = mix.jump_points();
            let loc: Vec<f64> = j.iter().map(|x| x.location).collect();
            let size: Vec<f64> = j.iter().map(|x| x.size).collect();
            let b = crra_lower_bound(&loc, &size, n_lo).unwrap();
            worst.set(worst.get().max(b.lower));
            prop_assert!(b.lower <= 1.0 + 1e-9);
            Ok(())
        });
    let pass = exact_ok && prop.is_ok();
    report(
        9,
        "CRRA bound",
        pass,
        start,
        Duration::from_secs(1),
        format!("bound {:.12}, grid {grid:.6}, largest bound on risk-neutral data {:.6}", bound.lower, worst.get()),
    );
}

#[test]
fn criterion_10_entry_cost_round_trip() {
    let start = Instant::now();
    let c = entry_cost(|v: f64| v, |v| v, 0.5, 2, 1.0);
    let model = EntryModel::new(
        ConditionalFamily::SignalFree { lo: 0.0, hi: 1.0 },
        2,
        Schedule::constant(c),
        InfoRegime::KnownN,
    )
    .unwrap();
    let s = model.threshold(None).unwrap().s();
    let (ec, es) = ((c - 1.0 / 3.0).abs(), (s - 0.5).abs());
    let pass = ec <= 1e-10 && es <= 1e-8;
    report(
        10,
        "entry cost round trip",
        pass,
        start,
        Duration::from_secs(1),
        format!("|c - 1/3| = {ec:.1e}, |s - 1/2| = {es:.1e}"),
    );
}

#[test]
fn criterion_11_property_suites() {
    let start = Instant::now();
    let cfg = || Config { cases: 100, failure_persistence: None, ..Config::default() };
    let grid = chebyshev_grid(401);
    let mut outcomes = Vec::new();

    let support = TestRunner::new(cfg()).run(&(0.3f64..3.0, 0.0f64..2.0, 2usize..6), |(p, lo, n)| {
        let v = ValueQuantile::power(lo, lo + 1.0, p).unwrap();
        let bn = bid_quantile_from_value(&v, n, 1.0, &grid).unwrap();
        let bm = bid_quantile_from_value(&v, n + 1, 1.0, &grid).unwrap();
        prop_assert!((bn.eval(0.0) - lo).abs() < 1e-12 && (bm.eval(0.0) - lo).abs() < 1e-12);
        for &a in grid.iter().skip(1).filter(|&&a| v.eval(a) - lo > 1e-9) {
            prop_assert!(bn.eval(a) < bm.eval(a) && bm.eval(a) < v.eval(a));
        }
        prop_assert!(bn.b_hi() < bm.b_hi() && bm.b_hi() < v.v_hi());
        Ok(())
    });
    outcomes.push(("support monotonicity", support.map_err(|e| e.to_string())));

    let fine = chebyshev_grid(1001);
    let round_trip = TestRunner::new(cfg()).run(&(0.3f64..3.0, 2usize..6, 0.3f64..=1.0), |(p, n, theta)| {
        let v = ValueQuantile::power(0.0, 1.0, p).unwrap();
        let b = bid_quantile_from_value(&v, n, theta, &fine).unwrap();
        let back = value_from_bid_quantile(&b).unwrap();
        for k in 0..=200 {
            let a = 0.01 + 0.99 * k as f64 / 200.0;
            prop_assert!((back.eval(a) - v.eval(a)).abs() < 1e-4, "alpha {a}: {} vs {}", back.eval(a), v.eval(a));
        }
        Ok(())
    });
    outcomes.push(("value/bid round trip", round_trip.map_err(|e| e.to_string())));

    let normalization = TestRunner::new(cfg()).run(
        &(0.3f64..3.0, 2usize..4, proptest::collection::vec(0.05f64..1.0, 1..4)),
        |(p, n_lo, raw)| {
            let total: f64 = raw.iter().sum();
            let pmf = CompetitionPmf::new(n_lo, raw.iter().map(|x| x / total).collect()).unwrap();
            let v = ValueQuantile::power(0.0, 1.0, p).unwrap();
            let mix = winning_bid_mixture(&v, &pmf, 1.0, &grid).unwrap();
            let mut cuts = vec![0.0];
            cuts.extend(mix.jump_points().iter().map(|j| j.location));
            let mass: f64 = cuts
                .windows(2)
                .map(|c| {
                    if c[0] == 0.0 {
                        // b = c1 t^4 tames the integrable singularity at the bottom of the support
                        let f = |t: f64| 4.0 * c[1] * t.powi(3) * mix.pdf(c[1] * t.powi(4));
                        adaptive_integral(&f, 0.0, 1.0, 1e-8).unwrap()
                    } else {
                        adaptive_integral(&|b| mix.pdf(b), c[0], c[1], 1e-8).unwrap()
                    }
                })
                .sum();
            prop_assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
            Ok(())
        },
    );
    outcomes.push(("mixture pdf normalization", normalization.map_err(|e| e.to_string())));

    let scale = TestRunner::new(cfg()).run(&(0.1f64..50.0, any::<u64>()), |(c, seed)| {
        let mut config = SimConfig::new(sqrt_model(), 4000, seed);
        config.grid_size = 401;
        let w = simulate(&config).unwrap().competitive_bids();
        let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
        let det = DetectionConfig { h0: 0.3, ..Default::default() };
        let a = detect_jumps(&w, &det).unwrap();
        let b = detect_jumps(&scaled, &det).unwrap();
        prop_assert_eq!(a.jumps.len(), b.jumps.len());
        for (x, y) in a.jumps.iter().zip(&b.jumps) {
            prop_assert_eq!(x.index, y.index);
            prop_assert!((y.location - c * x.location).abs() <= 1e-12 * c.max(1.0));
            prop_assert!((y.size * c - x.size).abs() <= 1e-9 * x.size.abs().max(1.0));
        }
        Ok(())
    });
    outcomes.push(("detector scale equivariance", scale.map_err(|e| e.to_string())));

    let determinism = TestRunner::new(cfg()).run(&(any::<u64>(), 1usize..300), |(seed, size)| {
        let mut config = SimConfig::new(sqrt_model(), size, seed);
        config.grid_size = 401;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_csv(&simulate(&config).unwrap(), &mut a).unwrap();
        write_csv(&simulate(&config).unwrap(), &mut b).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    });
    outcomes.push(("seed determinism", determinism.map_err(|e| e.to_string())));

    let failed: Vec<String> =
        outcomes.iter().filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}"))).collect();
    let names: Vec<&str> = outcomes.iter().map(|o| o.0).collect();
    report(
        11,
        "property suites",
        failed.is_empty(),
        start,
        Duration::from_secs(120),
        if failed.is_empty() {
            format!("{} suites x 100 cases: {}", names.len(), names.join(", "))
        } else {
            failed.join("; ")
        },
    );
}
