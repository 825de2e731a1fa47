//! Acceptance gate: ten end-to-end criteria covering the energy oracle, the
//! route optimizer, the simulator's trace invariants, the convergence-rate
//! bounds and artifact determinism. Each test prints one pass/fail line.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedex::assignment::{
    evaluate_cost, run_carp, Assignment, CostKind, GibbsConfig, RouteContext, TransporterProfile,
};
use fedex::config::ScenarioConfig;
use fedex::energy::{
    reference_propulsion, reference_radio, tour_energy_report, PropulsionParams, RadioParams,
};
use fedex::fedsim::{run, SimConfig, SimMode, SimSetup};
use fedex::learning::{QuadraticTask, Task};
use fedex::orchestrate::{build_world, plan, run_scenario, schedule_metrics};
use fedex::routing::{build_tour, solve_tsp_2opt, solve_tsp_exact, tour_length, TspMethod};
use fedex::topology::Topology;

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "[{}] criterion {criterion}: {name} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

fn default_scenario() -> fedex::config::Scenario {
    ScenarioConfig::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml"))
        .unwrap()
        .resolve()
        .unwrap()
}

fn tiny_scenario() -> fedex::config::Scenario {
    ScenarioConfig::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.toml"))
        .unwrap()
        .resolve()
        .unwrap()
}

/// Server at the area center, `n` clients uniform in a 2 km x 2 km square.
fn random_topology(n: usize, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = vec![[1000.0, 1000.0]];
    for _ in 0..n {
        pos.push([rng.gen::<f64>() * 2000.0, rng.gen::<f64>() * 2000.0]);
    }
    Topology::build(pos).unwrap()
}

/// Criterion 1: every energy-report component matches an independent
/// re-evaluation of the link-rate / propulsion formulas to <= 1e-12 relative
/// error on 100 random parameter sets, in under a second.
#[test]
fn criterion_1_energy_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let radio = RadioParams {
            power: rng.gen::<f64>() * 0.99 + 0.01,
            bandwidth: rng.gen::<f64>() * 9.9e7 + 1e6,
            noise_density: rng.gen::<f64>() * 9.9e-20 + 1e-21,
            beta0: rng.gen::<f64>() * 9.9e-5 + 1e-6,
            altitude: rng.gen::<f64>() * 1900.0 + 100.0,
            model_bits: rng.gen::<f64>() * 1e9 + 1e6,
            rate_override: None,
        };
        let prop = PropulsionParams::new(
            rng.gen::<f64>() * 1e-2 + 1e-4,
            rng.gen::<f64>() * 200.0 + 1.0,
            rng.gen::<f64>() * 45.0 + 5.0,
            rng.gen::<f64>() * 27.0 + 3.0,
        )
        .unwrap();
        let tour_len = rng.gen::<f64>() * 20_000.0;
        let r_k = rng.gen_range(0..20usize);
        let budget = rng.gen::<f64>() * 30_000.0;
        let rep = tour_energy_report(&radio, &prop, tour_len, r_k, budget);

        // Independent oracle, written straight from the formulas.
        let h = radio.beta0 / (radio.altitude * radio.altitude);
        let rate = radio.bandwidth
            * (1.0 + h * radio.power / (radio.bandwidth * radio.noise_density)).log2();
        let t_trans = radio.model_bits / rate;
        let e_trans = radio.power * t_trans * r_k as f64;
        let e_slf = (tour_len / prop.speed) * (prop.c1 * prop.speed.powi(3) + prop.c2 / prop.speed);
        let e_hover = r_k as f64 * t_trans * prop.hover_power;
        let e_prop = e_slf + e_hover;
        let e_total = e_prop + e_trans;
        for (got, want) in [
            (rep.e_trans, e_trans),
            (rep.e_slf, e_slf),
            (rep.e_hover, e_hover),
            (rep.e_prop, e_prop),
            (rep.e_total, e_total),
        ] {
            let denom = want.abs().max(1e-300);
            worst = worst.max((got - want).abs() / denom);
        }
        assert_eq!(rep.feasible, e_total <= budget);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && elapsed.as_secs_f64() < 1.0;
    report(
        1,
        "energy oracle",
        pass,
        &format!("100 parameter sets, worst relative error {worst:.2e}, {:.3} s", elapsed.as_secs_f64()),
    );
}

/// Criterion 2: restarted 2-OPT lands within +5% of the exact tour on at
/// least 95 of 100 random 8-client instances and never beats it.
#[test]
fn criterion_2_tsp_quality() {
    let start = Instant::now();
    let mut within = 0usize;
    let mut never_below = true;
    let mut worst_ratio = 1.0f64;
    for seed in 0..100u64 {
        let topo = random_topology(8, 0x25_0000 + seed);
        let clients: Vec<usize> = (1..=8).collect();
        let exact = tour_length(&topo, &solve_tsp_exact(&topo, &clients).unwrap());
        let heur = tour_length(&topo, &solve_tsp_2opt(&topo, &clients, 10, seed));
        if heur < exact - 1e-9 {
            never_below = false;
        }
        let ratio = heur / exact;
        worst_ratio = worst_ratio.max(ratio);
        if ratio <= 1.05 {
            within += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = within >= 95 && never_below && elapsed.as_secs_f64() < 30.0;
    report(
        2,
        "2-OPT vs exact TSP",
        pass,
        &format!(
            "{within}/100 within +5%, worst ratio {worst_ratio:.4}, never below exact: {never_below}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

/// Criterion 3: at N=6, K=2 with no budget limits and exact inner tours, 200
/// optimizer iterations recover the exhaustive-search optimum on >= 95% of 50
/// seeds for each cost objective.
#[test]
fn criterion_3_carp_matches_exhaustive() {
    let start = Instant::now();
    let mut detail = String::new();
    let mut pass = true;
    for kind in [CostKind::MinMax, CostKind::Sws, CostKind::ShortestTotal] {
        let mut hits = 0usize;
        for seed in 0..50u64 {
            let topo = random_topology(6, 0x3_0000 + seed);
            let profile = TransporterProfile { propulsion: reference_propulsion(), budget: f64::INFINITY };
            let ctx = RouteContext::new(
                &topo,
                reference_radio(),
                vec![profile.clone(), profile],
                60.0,
                TspMethod::Exact,
                1,
                seed,
            );
            let cfg = GibbsConfig { iterations: 200, chains: 1, q0: 1.0, decay: None, seed };
            let got = run_carp(&ctx, kind, &cfg).unwrap().best_cost;
            // Exhaustive search over all 2^6 assignments.
            let mut best = f64::INFINITY;
            for code in 0..64usize {
                let a: Vec<usize> = (0..6).map(|i| (code >> i) & 1).collect();
                let assignment = Assignment::new(a, 2).unwrap();
                best = best.min(evaluate_cost(&assignment, kind, &ctx).unwrap());
            }
            // The cost carries a <= 1e-4 plateau tie-breaker; 1e-3 separates
            // equal slot-valued costs (tie differences) from genuinely
            // different ones (gaps >= 1).
            if (got - best).abs() <= 1e-3 {
                hits += 1;
            }
        }
        if hits < 48 {
            pass = false;
        }
        detail.push_str(&format!("{kind:?} {hits}/50; "));
    }
    let elapsed = start.elapsed();
    pass = pass && elapsed.as_secs_f64() < 120.0;
    detail.push_str(&format!("{:.1} s", elapsed.as_secs_f64()));
    report(3, "optimizer matches exhaustive search", pass, &detail);
}

/// Criterion 4: the full verification suite (gradient-ledger reconstruction,
/// staleness/delay bounds with attained extremes, sync version alignment,
/// aligned-view equivalence) passes on every replication of the default
/// scenario in both schedules, within a minute.
#[test]
fn criterion_4_trace_verification_suite() {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = String::new();
    for mode in [SimMode::Sync, SimMode::Async] {
        let mut sc = default_scenario();
        sc.mode = mode;
        let out = run_scenario(&sc, None).unwrap();
        for (rep, report) in out.verify.iter().enumerate() {
            for check in &report.checks {
                if !check.passed {
                    pass = false;
                    detail.push_str(&format!("{mode:?} rep {rep} {}: {}; ", check.name, check.detail));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed.as_secs_f64() >= 60.0 {
        pass = false;
    }
    if detail.is_empty() {
        detail = format!(
            "all checks pass on every replication, sync and async, {:.1} s",
            elapsed.as_secs_f64()
        );
    }
    report(4, "trace verification suite", pass, &detail);
}

/// Criterion 5: the local/global consistency gap never exceeds
/// 4 eta^2 G^2 Dmax^2 at any slot past the first round, across 20 seeds of
/// the default sync scenario.
#[test]
fn criterion_5_consistency_gap_bound() {
    let sc = default_scenario();
    let world = build_world(&sc).unwrap();
    let planned = plan(&sc, &world.topology).unwrap();
    let setup = SimSetup {
        topology: &world.topology,
        radio: sc.radio.clone(),
        profiles: &sc.profiles,
        tours: &planned.tours,
        assignment: &planned.assignment,
        task: &world.task,
        slot_duration: sc.slot_duration,
    };
    let total_slots = 800;
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    for seed in 0..20u64 {
        let cfg = SimConfig { eta: world.eta, total_slots, seed: sc.seed + seed };
        let trace = run(&setup, SimMode::Sync, &cfg, false).unwrap();
        let dmax = *trace.periods.iter().max().unwrap();
        let bound = 4.0 * world.eta.powi(2) * sc.clip_g.powi(2) * (dmax as f64).powi(2);
        for t in (dmax + 1)..=total_slots {
            worst_ratio = worst_ratio.max(trace.gap_max_sq[t] / bound);
            if trace.gap_max_sq[t] > bound {
                violations += 1;
            }
        }
    }
    report(
        5,
        "consistency gap bound",
        violations == 0,
        &format!("20 seeds, 0 tolerated / {violations} observed violations, worst gap/bound {worst_ratio:.2e}"),
    );
}

/// Criterion 6: the measured average squared gradient norm sits under the
/// predicted rate bound with positive margin for both schedules at
/// eta = sqrt(N)/(L sqrt(T)) capped at 1/L, over 20 replications; and the
/// average decreases from horizon T/4 to T.
#[test]
fn criterion_6_rate_bound_sandwich() {
    let mut detail = String::new();
    let mut pass = true;
    for mode in [SimMode::Sync, SimMode::Async] {
        let mut sc = default_scenario();
        sc.mode = mode;
        sc.replications = 20;
        let world = build_world(&sc).unwrap();
        let constants = world.task.constants();
        let expected_eta = ((sc.n_clients() as f64).sqrt()
            / (constants.l_smooth * (sc.total_slots as f64).sqrt()))
        .min(1.0 / constants.l_smooth);
        assert!((world.eta - expected_eta).abs() < 1e-15);
        let out = run_scenario(&sc, None).unwrap();
        let bound = out.bounds.as_ref().unwrap();
        if !(bound.lhs <= bound.rhs && bound.rhs - bound.lhs > 0.0) {
            pass = false;
        }
        // Rate direction: the running average over the first T/4 slots must
        // exceed the average over all T slots.
        let total = sc.total_slots;
        let quarter = total / 4;
        let (mut avg_full, mut avg_quarter) = (0.0, 0.0);
        for trace in &out.traces {
            avg_full += trace.grad_norm_sq[..total].iter().sum::<f64>() / total as f64;
            avg_quarter += trace.grad_norm_sq[..quarter].iter().sum::<f64>() / quarter as f64;
        }
        avg_full /= out.traces.len() as f64;
        avg_quarter /= out.traces.len() as f64;
        if avg_full >= avg_quarter {
            pass = false;
        }
        detail.push_str(&format!(
            "{mode:?}: measured {:.4} <= bound {:.1} (margin {:.1}), avg at T {:.4} < at T/4 {:.4}; ",
            bound.lhs,
            bound.rhs,
            bound.rhs - bound.lhs,
            avg_full,
            avg_quarter
        ));
    }
    report(6, "rate bound sandwich", pass, &detail);
}

/// Criterion 7: with every transporter on the same round-trip time the async
/// schedule degenerates to the sync one, slot for slot, bitwise.
#[test]
fn criterion_7_degenerate_equivalence() {
    // Clients mirrored through the server: both tours have identical
    // lengths, hence identical RTTs.
    let topo = Topology::build(vec![
        [0.0, 0.0],
        [2000.0, 500.0],
        [2500.0, -500.0],
        [-2000.0, -500.0],
        [-2500.0, 500.0],
    ])
    .unwrap();
    let profiles =
        vec![TransporterProfile { propulsion: reference_propulsion(), budget: f64::INFINITY }; 2];
    let assignment = Assignment::new(vec![0, 0, 1, 1], 2).unwrap();
    let radio = reference_radio();
    let tours: Vec<_> = (0..2)
        .map(|k| {
            Some(
                build_tour(&topo, &radio, 10.0, &assignment.subset(k), 60.0, TspMethod::Exact, 1, 0)
                    .unwrap(),
            )
        })
        .collect();
    let rtts: Vec<usize> = tours.iter().map(|t| t.as_ref().unwrap().rtt_slots).collect();
    assert_eq!(rtts[0], rtts[1], "mirrored tours must share the RTT");
    let task = Task::Quadratic(
        QuadraticTask::new(
            vec![1.0, 1.0],
            vec![vec![1.0, -2.0], vec![0.5, 0.5], vec![-1.0, 1.0], vec![2.0, 0.0]],
            0.3,
            100.0,
        )
        .unwrap(),
    );
    let setup = SimSetup {
        topology: &topo,
        radio,
        profiles: &profiles,
        tours: &tours,
        assignment: &assignment,
        task: &task,
        slot_duration: 60.0,
    };
    let cfg = SimConfig { eta: 0.02, total_slots: 400, seed: 17 };
    let sync = run(&setup, SimMode::Sync, &cfg, false).unwrap();
    let asynchronous = run(&setup, SimMode::Async, &cfg, false).unwrap();
    let equal = sync.global == asynchronous.global;
    report(
        7,
        "async degenerates to sync at equal RTTs",
        equal,
        &format!("RTT {} slots on both tours, {} slots compared bitwise", rtts[0], cfg.total_slots),
    );
}

/// Criterion 8: each specialized objective beats (or ties) the
/// shortest-total baseline on its own metric, on the default topology across
/// four seeds.
#[test]
fn criterion_8_route_objective_ordering() {
    let mut pass = true;
    let mut detail = String::new();
    for seed in [42u64, 43, 44, 45] {
        let mut metrics = Vec::new();
        for cost in [CostKind::Sws, CostKind::MinMax, CostKind::ShortestTotal] {
            let mut sc = default_scenario();
            sc.seed = seed;
            sc.cost = cost;
            let world = build_world(&sc).unwrap();
            let planned = plan(&sc, &world.topology).unwrap();
            let (max_rtt, _sum, weighted) = schedule_metrics(&planned.assignment, &planned.tours);
            metrics.push((max_rtt, weighted));
        }
        let (sws, min_max, st) = (metrics[0], metrics[1], metrics[2]);
        let ok = sws.1 <= st.1 + 1e-9 && min_max.0 <= st.0;
        if !ok {
            pass = false;
        }
        detail.push_str(&format!(
            "seed {seed}: sws {:.0}<=st {:.0}, minmax {}<=st {}; ",
            sws.1, st.1, min_max.0, st.0
        ));
    }
    report(8, "route-objective ordering", pass, &detail);
}

/// Criterion 9: tightening the per-transporter budget never yields an
/// accepted over-budget assignment — at 12 kJ the instance is provably
/// infeasible under the exact energy accounting (minimum achievable total
/// tour length exceeds what 4 x 12 kJ can fly), so the optimizer must refuse
/// it — and at the tightest feasible budget (14 kJ) the per-transporter
/// energy spread shrinks versus 15 kJ on at least 3 of 4 seeds.
#[test]
fn criterion_9_energy_budget_pressure() {
    let mut pass = true;
    let mut detail = String::new();
    let mut equalized = 0usize;
    for seed in [42u64, 43, 44, 45] {
        let mut sc = default_scenario();
        sc.seed = seed;
        let world = build_world(&sc).unwrap();

        // Baseline 15 kJ: must plan feasibly.
        let plan15 = plan(&sc, &world.topology).unwrap();
        let mut ledger = String::new();
        for (k, r) in plan15.energy.iter().enumerate() {
            if !r.feasible {
                pass = false;
            }
            ledger.push_str(&format!("k{k} {:.0}/{:.0} J; ", r.e_total, r.budget));
        }
        let spread = |energy: &[fedex::energy::EnergyReport]| {
            let served: Vec<f64> =
                energy.iter().filter(|r| r.e_total > 0.0).map(|r| r.e_total).collect();
            served.iter().cloned().fold(f64::MIN, f64::max)
                - served.iter().cloned().fold(f64::MAX, f64::min)
        };
        let spread15 = spread(&plan15.energy);

        // 12 kJ: whatever happens, no infeasible assignment may be accepted.
        let mut sc12 = sc.clone();
        for p in &mut sc12.profiles {
            p.budget = 12_000.0;
        }
        match plan(&sc12, &world.topology) {
            Ok(res) => {
                for (k, r) in res.energy.iter().enumerate() {
                    if !r.feasible {
                        pass = false;
                        detail.push_str(&format!(
                            "seed {seed}: accepted infeasible 12 kJ assignment (k{k} {:.0} J > {:.0} J); ",
                            r.e_total, r.budget
                        ));
                    }
                }
            }
            Err(_) => {} // refusing the over-tight instance is the correct outcome
        }

        // 14 kJ (tightest feasible): spread comparison against 15 kJ.
        let mut sc14 = sc.clone();
        for p in &mut sc14.profiles {
            p.budget = 14_000.0;
        }
        let plan14 = plan(&sc14, &world.topology).unwrap();
        for r in &plan14.energy {
            if !r.feasible {
                pass = false;
                detail.push_str(&format!("seed {seed}: infeasible at 14 kJ; ledger 15 kJ: {ledger}"));
            }
        }
        let spread14 = spread(&plan14.energy);
        if spread14 <= spread15 + 1e-6 {
            equalized += 1;
        }
        detail.push_str(&format!("seed {seed}: spread {spread14:.0} J @14 kJ vs {spread15:.0} J @15 kJ; "));
    }
    if equalized < 3 {
        pass = false;
    }
    detail.push_str(&format!("equalized on {equalized}/4 seeds"));
    report(9, "energy-budget pressure", pass, &detail);
}

/// Criterion 10: re-running a scenario reproduces every trace CSV byte for
/// byte.
#[test]
fn criterion_10_deterministic_artifacts() {
    let sc = tiny_scenario();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_scenario(&sc, Some(dir_a.path())).unwrap();
    run_scenario(&sc, Some(dir_b.path())).unwrap();
    let mut compared = 0usize;
    let mut pass = true;
    for rep in 0..sc.replications {
        let name = format!("trace_rep{rep}.csv");
        let a = std::fs::read(dir_a.path().join(&name)).unwrap();
        let b = std::fs::read(dir_b.path().join(&name)).unwrap();
        if a != b {
            pass = false;
        }
        compared += 1;
    }
    report(
        10,
        "deterministic trace artifacts",
        pass,
        &format!("{compared} trace CSVs byte-identical across reruns"),
    );
}
