mod common;

use std::collections::BTreeSet;
use std::f64::consts::E;

use ecogrid::eco_matrix::{
    build_eco_matrix, conservation_report, EcoFlowMatrix, FlowType, RedundancyMode,
};
use ecogrid::metrics;
use ecogrid::powerflow::{
    build_admittance, jacobian, power_injections, solve, SolverOptions, VoltageState,
};
use ecogrid::OutageSet;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sparse_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (3usize..=9).prop_flat_map(|n| {
        prop::collection::vec(prop_oneof![3 => Just(0.0), 2 => 1e-3f64..1e4], n * n)
            .prop_map(move |v| DMatrix::from_vec(n, n, v))
            .prop_filter("nonzero", |t| t.sum() > 0.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_bounds_and_scaling(t in sparse_matrix(), c in prop::sample::select(vec![1e-3, 1.0, 1e3])) {
        let m = metrics::metrics(&t).unwrap();
        prop_assert!(m.asc >= 0.0);
        prop_assert!(m.asc <= m.dc * (1.0 + 1e-12));
        prop_assert!((0.0..=1.0 / E).contains(&m.robustness));
        let s = metrics::metrics(&(&t * c)).unwrap();
        prop_assert!((s.ratio - m.ratio).abs() <= 1e-12);
        prop_assert!((s.robustness - m.robustness).abs() <= 1e-12);
        prop_assert!((s.tstp - c * m.tstp).abs() <= 1e-9 * s.tstp);
    }

    #[test]
    fn matrices_conserve_flow(seed in any::<u64>()) {
        let net = common::random_network(seed);
        let sol = solve(&net, &SolverOptions::default()).unwrap();
        for flow in FlowType::ALL {
            for mode in RedundancyMode::ALL {
                let m = build_eco_matrix(&net, &sol, flow, mode).unwrap();
                prop_assert!(m.flows.iter().all(|&v| v >= 0.0));
                let r = conservation_report(&m, 1e-6);
                prop_assert!(r.is_balanced(), "{flow}/{mode}: {:?}", r.violations());
                prop_assert_eq!(EcoFlowMatrix::from_csv(&m.to_csv()).unwrap(), m);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(seed in any::<u64>(), shake in 0u64..1000) {
        let net = common::random_network(seed);
        let y = build_admittance(&net).unwrap();
        let n = y.dim();
        let mut state = VoltageState::flat(n);
        for i in 0..n {
            let w = ((shake + i as u64 * 37) % 100) as f64 / 100.0;
            state.magnitude[i] = 0.95 + 0.1 * w;
            state.angle[i] = 0.2 * (w - 0.5);
        }
        let pvpq: Vec<usize> = (1..n).collect();
        let pq: Vec<usize> = (1..n).filter(|i| i % 2 == 1).collect();
        let jac = jacobian(&y, &state, &pvpq, &pq);
        let h = 1e-7;
        let f = |s: &VoltageState| {
            let inj = power_injections(&y, s);
            pvpq.iter().map(|&i| inj[i].re).chain(pq.iter().map(|&i| inj[i].im)).collect::<Vec<f64>>()
        };
        let base = f(&state);
        let columns = pvpq.iter().map(|&k| (k, true)).chain(pq.iter().map(|&k| (k, false)));
        for (c, (k, is_angle)) in columns.enumerate() {
            let mut s = state.clone();
            if is_angle { s.angle[k] += h } else { s.magnitude[k] += h }
            let bumped = f(&s);
            for r in 0..base.len() {
                let fd = (bumped[r] - base[r]) / h;
                prop_assert!((fd - jac[(r, c)]).abs() < 1e-5, "J[{r},{c}] {} vs {fd}", jac[(r, c)]);
            }
        }
    }

    #[test]
    fn outages_are_idempotent_and_commute(seed in any::<u64>(), a in 0usize..20, b in 0usize..20) {
        let net = common::random_network(seed);
        let nb = net.branches.len();
        let s1 = OutageSet::branches([(a % nb) as u32 + 1]);
        let mut s2 = OutageSet::branches([(b % nb) as u32 + 1]);
        s2.generator_ids.insert((b % net.generators.len()) as u32 + 1);
        let once = net.apply_outage(&s1).unwrap();
        prop_assert_eq!(once.apply_outage(&s1).unwrap(), once.clone());
        let ab = once.apply_outage(&s2).unwrap();
        let ba = net.apply_outage(&s2).unwrap().apply_outage(&s1).unwrap();
        prop_assert_eq!(&ab, &ba);
        prop_assert_eq!(ab, net.apply_outage(&s1.union(&s2)).unwrap());
    }

    #[test]
    fn islands_partition_buses(seed in any::<u64>(), mask in any::<u32>()) {
        let net = common::random_network(seed);
        let out_ids = net.branches.iter().filter(|br| mask >> (br.id % 32) & 1 == 1).map(|br| br.id);
        let out = net.apply_outage(&OutageSet::branches(out_ids)).unwrap();
        let islands = out.connected_components();
        let mut seen = BTreeSet::new();
        for isl in &islands {
            prop_assert!(!isl.is_empty());
            for &b in isl {
                prop_assert!(seen.insert(b), "bus {b} in two islands");
            }
        }
        let all: BTreeSet<u32> = net.buses.iter().map(|b| b.id).collect();
        prop_assert_eq!(seen, all);
    }
}
