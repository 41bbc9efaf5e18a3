//! Property tests for the model invariants: the potential identity,
//! conservation of generated and rounded flows, toll clipping, the exchange
//! property of the potential, projection idempotence, and format round
//! trips.

mod common;

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use flowtoll::cli_io::{self, GenFamily, GenKind};
use flowtoll::game_core::{
    average_cost, is_unsatisfied, marginal_toll, potential, IntegralFlow, Latency, RoutingInstance,
    TollSchedule,
};
use flowtoll::oracles::enumerate_simple_paths;
use flowtoll::private_opt::{psrr, FlowProjector};

fn arb_instance() -> impl Strategy<Value = RoutingInstance> {
    let kinds = prop_oneof![
        Just(GenKind::ParallelLinks),
        Just(GenKind::Grid),
        Just(GenKind::LayeredDag),
    ];
    let families = prop_oneof![
        Just(GenFamily::Affine),
        Just(GenFamily::Quadratic),
        Just(GenFamily::Mixed),
    ];
    (kinds, families, 1usize..5, 2usize..9, any::<u64>()).prop_map(|(kind, fam, n, m, seed)| {
        cli_io::generate_instance(kind, n, m, fam, seed)
            .expect("generator")
            .instance
    })
}

/// A random feasible unsplittable flow: one enumerated path per player.
fn random_flow(inst: &RoutingInstance, seed: u64) -> IntegralFlow {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let paths: Vec<Vec<usize>> = (0..inst.num_players())
        .map(|i| {
            let (s, t) = inst.demand(i);
            let choices = enumerate_simple_paths(inst, i, s, t).expect("enumerable");
            choices[rng.gen_range(0..choices.len())].clone()
        })
        .collect();
    IntegralFlow::from_paths(inst, &paths).expect("feasible by construction")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potential_identity(inst in arb_instance(), seed in any::<u64>()) {
        let x = random_flow(&inst, seed);
        let psi = potential(&inst, &x).unwrap();
        let phi = average_cost(&inst, &x).unwrap();
        prop_assert!((psi - inst.num_players() as f64 * phi).abs() <= 1e-9);
    }

    #[test]
    fn generated_flows_conserve(inst in arb_instance(), seed in any::<u64>()) {
        let x = random_flow(&inst, seed);
        prop_assert!(x.validate(&inst).is_ok());
    }

    #[test]
    fn latencies_monotone_and_tolls_clipped(inst in arb_instance(), load in 0.0f64..1.0) {
        let n = inst.num_players() as f64;
        let cap = inst.toll_cap();
        for e in 0..inst.num_edges() {
            let lat = inst.latency(e);
            let y1 = load * n;
            let y2 = (load * n + 0.5).min(n);
            prop_assert!(lat.eval(y1) <= lat.eval(y2) + 1e-12);
            let tau = marginal_toll(lat, y1, cap);
            prop_assert!((0.0..=cap + 1e-12).contains(&tau));
        }
    }

    /// Switching an unsatisfied player onto the returned path decreases the
    /// potential by exactly the reported gain when the congestion is exact
    /// and tolls are the functional marginal-cost tolls.
    #[test]
    fn exchange_property(inst in arb_instance(), seed in any::<u64>(), player_pick in any::<u64>()) {
        let x = random_flow(&inst, seed);
        let i = (player_pick % inst.num_players() as u64) as usize;
        let y = x.congestion(&inst);
        let r = is_unsatisfied(&inst, &x, i, &y, &TollSchedule::MarginalCost, 0.0).unwrap();
        let switched = x.with_player_path(&inst, i, &r.best_path).unwrap();
        let psi_old = potential(&inst, &x).unwrap();
        let psi_new = potential(&inst, &switched).unwrap();
        prop_assert!(
            (psi_old - psi_new - r.gain).abs() <= 1e-9,
            "potential drop {} vs gain {}", psi_old - psi_new, r.gain
        );
    }

    #[test]
    fn psrr_outputs_feasible_paths(inst in arb_instance(), seed in any::<u64>()) {
        // random path mixture per player, then round it many times
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for i in 0..inst.num_players() {
            let (s, t) = inst.demand(i);
            let paths = enumerate_simple_paths(&inst, i, s, t).unwrap();
            let mut weights: Vec<f64> = (0..paths.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let mut row = vec![0.0; inst.num_edges()];
            for (p, w) in paths.iter().zip(&weights) {
                for &e in p {
                    row[e] += w;
                }
            }
            for k in 0..8 {
                let mut sample_rng = ChaCha20Rng::seed_from_u64(seed ^ (k + 1));
                let path = psrr(&inst, i, &row, &mut sample_rng).unwrap();
                // must be one feasible simple path for this demand
                let mut single = inst.with_demands(vec![(s, t)]).unwrap();
                let flow = IntegralFlow::from_paths(&mut single, &[path]).unwrap();
                prop_assert!(flow.validate(&single).is_ok());
            }
        }
    }

    #[test]
    fn projection_is_idempotent(inst in arb_instance(), seed in any::<u64>()) {
        let projector = FlowProjector::new(&inst);
        let x = random_flow(&inst, seed);
        for i in 0..inst.num_players() {
            let row: Vec<f64> = x.row(i).iter().map(|&v| v as f64).collect();
            let projected = projector.project(i, inst.demand(i), &row).unwrap();
            for (a, b) in projected.iter().zip(&row) {
                prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn instance_roundtrip(inst in arb_instance()) {
        let doc = common::doc_of(inst);
        let text = cli_io::serialize_instance(&doc);
        let parsed = cli_io::parse_instance(&text).unwrap();
        prop_assert_eq!(parsed.instance.vertex_names(), doc.instance.vertex_names());
        prop_assert_eq!(parsed.instance.edges(), doc.instance.edges());
        prop_assert_eq!(parsed.instance.latencies(), doc.instance.latencies());
        prop_assert_eq!(parsed.instance.demands(), doc.instance.demands());
        prop_assert_eq!(cli_io::serialize_instance(&parsed), text);
    }

    #[test]
    fn congestion_entries_capped_by_n(inst in arb_instance(), seed in any::<u64>()) {
        let x = random_flow(&inst, seed);
        let y = x.congestion(&inst);
        let n = inst.num_players() as f64;
        for &v in y.values() {
            prop_assert!((0.0..=n).contains(&v));
        }
    }
}

#[test]
fn latency_display_roundtrips_families() {
    for lat in [
        Latency::Affine { a: 0.25, b: 0.75 },
        Latency::constant(2.0),
        Latency::Monomial {
            a: 0.125,
            k: 3,
            b: 0.5,
        },
    ] {
        let text = format!(
            "flowtoll-instance v1\nvertex s\nvertex t\nedge s t {lat}\ndemand s t\n"
        );
        let doc = cli_io::parse_instance(&text).unwrap();
        assert_eq!(doc.instance.latency(0), &lat);
    }
}
