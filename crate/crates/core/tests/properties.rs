//! Property tests over the public API: workload accounting, analytical
//! model monotonicity and search soundness.

use photonic_tdm::arch::{max_power, simulate_baseline, simulate_inference};
use photonic_tdm::dse::{enumerate, explore, Aggregate};
use photonic_tdm::workload::{LayerShape, LayerSpec};
use photonic_tdm::{ArchConfig, BaselineSpec, DeviceCatalog, SearchSpace, WorkloadModel};
use proptest::prelude::*;

fn layer() -> impl Strategy<Value = LayerSpec> {
    let conv =
        (1u64..=5, 1u64..=16, 1u64..=24, 5u64..=20, 1u64..=2, 0u64..=2).prop_map(|(k, cin, cout, hw, stride, pad)| {
            LayerShape::Conv {
                in_channels: cin,
                out_channels: cout,
                kernel_h: k,
                kernel_w: k,
                in_height: hw,
                in_width: hw,
                stride,
                padding: pad,
            }
        });
    let fc = (1u64..=300, 1u64..=120).prop_map(|(i, o)| LayerShape::Fc {
        in_features: i,
        out_features: o,
    });
    (prop_oneof![conv, fc], 1u32..=16, 1u32..=16).prop_map(|(shape, w, a)| LayerSpec {
        index: 0,
        shape,
        weight_bits: w,
        act_bits: a,
    })
}

fn workload(max_layers: usize) -> impl Strategy<Value = WorkloadModel> {
    prop::collection::vec(layer(), 1..=max_layers)
        .prop_map(|layers| WorkloadModel::new("m", layers, None, 1.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn footprint_ratio_is_bitwidth_ratio(m in workload(6), q1 in 1u32..=16, q2 in 1u32..=16) {
        let f1 = m.with_homogeneous_bits(q1, q1).weight_footprint_bits();
        let f2 = m.with_homogeneous_bits(q2, q2).weight_footprint_bits();
        prop_assert_eq!(f1 * u64::from(q2), f2 * u64::from(q1));
    }

    #[test]
    fn counts_permutation_invariant_and_additive(a in workload(5), b in workload(5), seed in any::<u64>()) {
        let mut shuffled = a.layers.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed % n as u64) as usize);
        shuffled.reverse();
        let p = WorkloadModel::new("p", shuffled, None, 1.0).unwrap();
        prop_assert_eq!(p.param_count(), a.param_count());
        prop_assert_eq!(p.mac_count(), a.mac_count());

        let joined = WorkloadModel::new("ab", a.layers.iter().chain(&b.layers).cloned().collect(), None, 1.0).unwrap();
        prop_assert_eq!(joined.param_count(), a.param_count() + b.param_count());
        prop_assert_eq!(joined.mac_count(), a.mac_count() + b.mac_count());
    }

    #[test]
    fn workload_file_round_trip(m in workload(6)) {
        prop_assert_eq!(WorkloadModel::from_json_str(&m.to_json_string()).unwrap(), m);
    }

    #[test]
    fn more_mvus_never_slow_or_cost_more(
        m in workload(4),
        v in 2u64..=16,
        k in 2u64..=16,
        b in prop::sample::select(vec![1u32, 2, 4, 8]),
        fc in 1u64..=8,
        conv in 1u64..=8,
        extra_fc in 0u64..=8,
        extra_conv in 0u64..=8,
    ) {
        let cat = DeviceCatalog::default();
        let small = ArchConfig::new(v, k, b, fc, conv);
        let big = ArchConfig::new(v, k, b, fc + extra_fc, conv + extra_conv);
        let (rs, rb) = (simulate_inference(&m, &small, &cat).unwrap(), simulate_inference(&m, &big, &cat).unwrap());
        prop_assert!(rb.latency_s <= rs.latency_s * (1.0 + 1e-12));
        prop_assert!(rb.energy_j <= rs.energy_j * (1.0 + 1e-12));
        prop_assert!(rb.total_time_steps <= rs.total_time_steps);
        prop_assert!(max_power(&big, &cat).unwrap() >= max_power(&small, &cat).unwrap());
    }

    #[test]
    fn report_totals_are_layer_sums(m in workload(5), b in prop::sample::select(vec![1u32, 2, 4, 8])) {
        let r = simulate_inference(&m, &ArchConfig::new(8, 9, b, 4, 4), &DeviceCatalog::default()).unwrap();
        let energy: f64 = r.layers.iter().map(|l| l.energy_j).sum();
        prop_assert_eq!(r.energy_j, energy);
        prop_assert_eq!(r.macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        prop_assert_eq!(r.macs, m.mac_count());
        prop_assert_eq!(r.total_time_steps, r.layers.iter().map(|l| l.time_steps).sum::<u64>());
        prop_assert_eq!(r.verified_dots, m.layers.len() as u64);
    }

    #[test]
    fn wide_slices_degenerate_to_single_step(m in workload(4), p in 1u32..=8, b in 8u32..=16) {
        let m = m.with_homogeneous_bits(p, p);
        let cfg = ArchConfig::new(6, 9, b, 3, 3);
        let cat = DeviceCatalog::default();
        let ours = simulate_inference(&m, &cfg, &cat).unwrap();
        let single = simulate_baseline(&m, &cfg, &BaselineSpec::new("flat", p, p), &cat).unwrap();
        prop_assert_eq!(ours.total_time_steps, single.total_time_steps);
    }

    #[test]
    fn search_best_unbeaten_and_within_cap(
        m in workload(3),
        vs in prop::collection::vec(2u64..=12, 1..=3),
        ks in prop::collection::vec(2u64..=12, 1..=2),
        bs in prop::collection::vec(prop::sample::select(vec![1u32, 2, 4, 8]), 1..=2),
        cap in prop::option::of(0.05f64..2.0),
    ) {
        let cat = DeviceCatalog::default();
        let mut space = SearchSpace::grid(&vs, &ks, &bs, &[1, 3], &[1, 2]);
        space.constraints.max_power_w = cap;
        let models = [m];
        let r = explore(&models, &space, &cat, Aggregate::Geomean).unwrap();
        prop_assert_eq!(r.ranked.len() + r.infeasible_count, enumerate(&space).len());
        for c in &r.ranked {
            prop_assert!(cap.is_none_or(|cap| c.max_power_w <= cap));
        }
        if let Some(best) = &r.best {
            for cfg in enumerate(&space) {
                if cap.is_some_and(|cap| max_power(&cfg, &cat).unwrap() > cap) {
                    continue;
                }
                let score = simulate_inference(&models[0], &cfg, &cat).unwrap().gops_per_epb;
                prop_assert!(score <= best.score * (1.0 + 1e-12));
            }
        }
        let again = explore(&models, &space, &cat, Aggregate::Geomean).unwrap();
        prop_assert_eq!(again.to_csv(), r.to_csv());

        let mut tighter = space.clone();
        tighter.constraints.max_power_w = Some(cap.unwrap_or(f64::INFINITY) * 0.5);
        let t = explore(&models, &tighter, &cat, Aggregate::Geomean).unwrap();
        prop_assert!(t.ranked.iter().all(|c| r.position(c.config.key()).is_some()));
    }
}
