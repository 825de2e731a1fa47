//! Property-based invariants of the energy model, topology metric, route
//! solvers and sampler plumbing.

use fedex::assignment::gibbs_probabilities;
use fedex::energy::{
    dbm_to_watts, slf_energy, slf_time, tour_energy_report, transmission_energy,
    transmission_rate, transmission_time, PropulsionParams, RadioParams,
};
use fedex::routing::{
    assemble_tour, is_two_opt_stable, solve_tsp_2opt, solve_tsp_exact, tour_length,
};
use fedex::topology::Topology;
use proptest::prelude::*;

fn radio_strategy() -> impl Strategy<Value = RadioParams> {
    (
        0.01f64..1.0,
        1e6f64..1e8,
        1e-21f64..1e-19,
        1e-7f64..1e-4,
        100f64..2000.0,
        1e6f64..1e9,
    )
        .prop_map(|(power, bandwidth, noise_density, beta0, altitude, model_bits)| RadioParams {
            power,
            bandwidth,
            noise_density,
            beta0,
            altitude,
            model_bits,
            rate_override: None,
        })
}

fn propulsion_strategy() -> impl Strategy<Value = PropulsionParams> {
    (1e-3f64..0.1, 10f64..500.0, 5f64..100.0, 5f64..20.0)
        .prop_map(|(c1, c2, hover, speed)| PropulsionParams::new(c1, c2, hover, speed).unwrap())
}

fn positions_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    proptest::collection::vec((0f64..4000.0, 0f64..4000.0).prop_map(|(x, y)| [x, y]), min..=max)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn energy_report_components_sum(
        radio in radio_strategy(),
        prop in propulsion_strategy(),
        tour in 0f64..50_000.0,
        r_k in 0usize..64,
        budget in 0f64..1e6,
    ) {
        let rep = tour_energy_report(&radio, &prop, tour, r_k, budget);
        prop_assert!(rel_close(rep.e_prop, rep.e_slf + rep.e_hover, 1e-12));
        prop_assert!(rel_close(rep.e_total, rep.e_trans + rep.e_slf + rep.e_hover, 1e-12));
        prop_assert_eq!(rep.feasible, rep.e_total <= rep.budget);
        prop_assert!(rep.e_trans >= 0.0 && rep.e_slf >= 0.0 && rep.e_hover >= 0.0);
    }

    #[test]
    fn transmission_energy_additive_in_clients(
        radio in radio_strategy(),
        r1 in 0usize..40,
        r2 in 0usize..40,
    ) {
        let lhs = transmission_energy(&radio, r1 + r2);
        let rhs = transmission_energy(&radio, r1) + transmission_energy(&radio, r2);
        prop_assert!(rel_close(lhs, rhs, 1e-12));
        // Per-client cost is power * time on the link.
        let per = radio.power * transmission_time(&radio);
        prop_assert!(rel_close(transmission_energy(&radio, 1), per, 1e-12));
    }

    #[test]
    fn slf_energy_additive_in_length(
        prop in propulsion_strategy(),
        l1 in 0f64..20_000.0,
        l2 in 0f64..20_000.0,
    ) {
        let lhs = slf_energy(&prop, l1 + l2);
        let rhs = slf_energy(&prop, l1) + slf_energy(&prop, l2);
        prop_assert!(rel_close(lhs, rhs, 1e-12));
        prop_assert!(rel_close(slf_time(&prop, l1), l1 / prop.speed, 1e-12));
    }

    #[test]
    fn transmission_rate_positive_and_monotone_in_power(radio in radio_strategy()) {
        let r = transmission_rate(&radio);
        prop_assert!(r > 0.0 && r.is_finite());
        let mut boosted = radio.clone();
        boosted.power *= 2.0;
        prop_assert!(transmission_rate(&boosted) > r);
    }

    #[test]
    fn distance_is_a_metric(positions in positions_strategy(3, 10)) {
        let topo = Topology::build(positions).unwrap();
        let n = topo.n_devices();
        for i in 0..n {
            prop_assert_eq!(topo.distance(i, i), 0.0);
            for j in 0..n {
                prop_assert!(rel_close(topo.distance(i, j), topo.distance(j, i), 1e-12));
                prop_assert!(topo.distance(i, j) >= 0.0);
                for k in 0..n {
                    prop_assert!(
                        topo.distance(i, k) <= topo.distance(i, j) + topo.distance(j, k) + 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn tour_length_reversal_invariant(positions in positions_strategy(4, 10)) {
        let topo = Topology::build(positions).unwrap();
        let order: Vec<usize> = (1..topo.n_devices()).collect();
        let rev: Vec<usize> = order.iter().rev().copied().collect();
        prop_assert!(rel_close(tour_length(&topo, &order), tour_length(&topo, &rev), 1e-12));
    }

    #[test]
    fn exact_tsp_dominates_other_orders(
        positions in positions_strategy(4, 8),
        seed in any::<u64>(),
    ) {
        let topo = Topology::build(positions).unwrap();
        let clients: Vec<usize> = (1..topo.n_devices()).collect();
        let exact = solve_tsp_exact(&topo, &clients).unwrap();
        let exact_len = tour_length(&topo, &exact);
        // No other visiting order beats the exact solution.
        prop_assert!(exact_len <= tour_length(&topo, &clients) + 1e-9);
        let local = solve_tsp_2opt(&topo, &clients, 3, seed);
        prop_assert!(is_two_opt_stable(&topo, &local));
        prop_assert!(tour_length(&topo, &local) >= exact_len - 1e-9);
    }

    #[test]
    fn rtt_slots_cover_rtt_seconds(
        radio in radio_strategy(),
        positions in positions_strategy(3, 8),
        speed in 5f64..20.0,
        slot in 10f64..600.0,
    ) {
        let topo = Topology::build(positions).unwrap();
        let order: Vec<usize> = (1..topo.n_devices()).collect();
        let tour = assemble_tour(&topo, &radio, speed, order, slot);
        prop_assert!(tour.rtt_slots >= 1);
        prop_assert!(tour.rtt_slots as f64 * slot >= tour.rtt_seconds - 1e-9);
        if tour.rtt_slots > 1 {
            prop_assert!((tour.rtt_slots - 1) as f64 * slot < tour.rtt_seconds);
        }
    }

    #[test]
    fn gibbs_probabilities_form_a_distribution(
        costs in proptest::collection::vec(0f64..1e4, 1..8),
        q in 1e-3f64..1e3,
    ) {
        let probs = gibbs_probabilities(&costs, q);
        prop_assert_eq!(probs.len(), costs.len());
        let sum: f64 = probs.iter().sum();
        prop_assert!(rel_close(sum, 1.0, 1e-9));
        prop_assert!(probs.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        // The cheapest option is never the least likely.
        let (imin, _) = costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        prop_assert!(probs[imin] >= probs.iter().copied().fold(f64::INFINITY, f64::min) - 1e-12);
    }

    #[test]
    fn dbm_conversion_monotone(a in -30f64..40.0, b in -30f64..40.0) {
        if a < b {
            prop_assert!(dbm_to_watts(a) < dbm_to_watts(b));
        }
        prop_assert!(rel_close(dbm_to_watts(20.0), 0.1, 1e-12));
    }
}
