//! Property tests for the invariants that must hold on every input, with
//! shrinking to a minimal counterexample when they do not: influence
//! identities, the distance on configuration pairs, absorption of the grand
//! coupling, and bit-exact instance round trips.

use eadyn_core::dynamics::{block_distance, coupled_block_step};
use eadyn_core::gibbs::SpinConfig;
use eadyn_core::influence::{aggregate_influence, edge_influence, WeightParams};
use eadyn_core::instance::{gen, load, save};
use eadyn_core::partition::BlockPartition;
use eadyn_core::rng::{stream, PURPOSE_TEST};
use proptest::prelude::*;

fn small_instance() -> impl Strategy<Value = eadyn_core::Instance> {
    (2usize..=16, 0.5f64..4.0, 0.05f64..3.0, 0u64..1000)
        .prop_map(|(n, d, beta, seed)| gen(n, d, beta, seed).expect("instance"))
}

fn singleton_partition(instance: &eadyn_core::Instance) -> BlockPartition {
    let params = WeightParams::from_formulas(0.5, 2.0, instance.n().max(2)).expect("params");
    BlockPartition::all_singletons(instance, &params)
}

proptest! {
    /// The influence of an edge is |tanh(beta J / 2)|: in [0, 1], even in J,
    /// monotone in |J|, and equal to 1 only where the implementation's
    /// positive-exponent form rounds e^(-beta|J|) below one ulp.
    #[test]
    fn edge_influence_identity(beta in 1e-6f64..10.0, j in -20.0f64..20.0) {
        let gamma = edge_influence(beta, j).unwrap();
        prop_assert!((0.0..=1.0).contains(&gamma));
        prop_assert!(gamma < 1.0 || (-beta * j.abs()).exp() < f64::EPSILON);
        let tanh_form = (beta * j / 2.0).tanh().abs();
        prop_assert!((gamma - tanh_form).abs() <= 1e-12);
        let mirrored = edge_influence(beta, -j).unwrap();
        prop_assert!((gamma - mirrored).abs() <= 1e-12);
        let stronger = edge_influence(beta, 1.125 * j).unwrap();
        prop_assert!(stronger >= gamma - 1e-15);
    }

    /// Saving and loading an instance reproduces every bit of it.
    #[test]
    fn instance_io_round_trips(instance in small_instance()) {
        let mut buf = Vec::new();
        save(&instance, &mut buf).unwrap();
        let back = load(&buf[..]).unwrap();
        prop_assert_eq!(back.n(), instance.n());
        prop_assert_eq!(back.beta().to_bits(), instance.beta().to_bits());
        prop_assert_eq!(back.graph.edges(), instance.graph.edges());
        for (a, b) in back.couplings().iter().zip(instance.couplings()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// The weighted disagreement distance is a symmetric pseudometric:
    /// zero on equal pairs, positive whenever some disagreeing vertex
    /// carries outward influence, zero only when every disagreement sits on
    /// a zero-influence singleton (isolated vertices, in practice).
    #[test]
    fn block_distance_separates_configurations(
        instance in small_instance(),
        bits_x in any::<u64>(),
        bits_y in any::<u64>(),
    ) {
        let n = instance.n();
        let partition = singleton_partition(&instance);
        let table = aggregate_influence(&instance, Some(&partition)).unwrap();
        let agg_out = table.agg_out.as_ref().unwrap();
        let x = SpinConfig::from_bits(n, bits_x);
        let y = SpinConfig::from_bits(n, bits_y);

        let d_xy = block_distance(&instance, &partition, &table, &x, &y).unwrap();
        let d_yx = block_distance(&instance, &partition, &table, &y, &x).unwrap();
        prop_assert_eq!(d_xy.to_bits(), d_yx.to_bits());
        prop_assert_eq!(
            block_distance(&instance, &partition, &table, &x, &x).unwrap(),
            0.0
        );
        let weighted_disagreement = (0..n as u32)
            .any(|v| x.get(v) != y.get(v) && agg_out[v as usize] > 0.0);
        if weighted_disagreement {
            prop_assert!(d_xy > 0.0, "weighted disagreement at distance {d_xy}");
        } else {
            prop_assert_eq!(d_xy, 0.0);
        }
    }

    /// Coalescence is absorbing: once the coupled chains agree, every
    /// further coupled step keeps them equal.
    #[test]
    fn grand_coupling_is_absorbing(
        instance in small_instance(),
        bits in any::<u64>(),
        seed in 0u64..1000,
        steps in 1u64..32,
    ) {
        let n = instance.n();
        let partition = singleton_partition(&instance);
        let mut x = SpinConfig::from_bits(n, bits);
        let mut y = x.clone();
        let mut rng = stream(seed, PURPOSE_TEST, 1);
        for _ in 0..steps {
            coupled_block_step(&instance, &partition, &mut x, &mut y, &mut rng).unwrap();
            prop_assert_eq!(x.disagreements(&y), 0);
        }
    }
}
