use lbopt_core::compressors::{identity, perm_k, rand_k, stream_view, SparseMessage};
use lbopt_core::oracle;
use lbopt_core::rng::substream;
use lbopt_core::worstcase::{build_instance, prog, InstanceParams, Variant, WorstCaseFn};
use proptest::prelude::*;

// Mix of coordinates near the kernel break points, exact zeros and generic values.
fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![
        2 => Just(0.0),
        1 => 0.45f64..0.6,
        1 => 0.9f64..1.3,
        1 => -40.0f64..-2.0,
        2 => -3.0f64..3.0,
    ]
}

fn point(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(coord(), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn prog_is_monotone_in_window(x in point(40), k in 1usize..8) {
        prop_assert!(prog(&x, k + 1) <= prog(&x, k));
        prop_assert!(prog(&x, k) <= prog(&x, 1));
        prop_assert!(prog(&x, 1) <= x.len());
    }

    #[test]
    fn gradient_support_is_zero_respecting(x in point(30), k in 1usize..6, a in 1.05f64..2.7) {
        let t = x.len();
        let k = k.min(t);
        for f in [WorstCaseFn::new(t, k, a, Variant::New).unwrap(), WorstCaseFn::classic(t).unwrap()] {
            let g = f.grad(&x).unwrap();
            let reach = prog(&x, f.k());
            for (i, (&gi, &xi)) in g.iter().zip(&x).enumerate() {
                if gi != 0.0 {
                    prop_assert!(i <= reach || xi != 0.0, "coordinate {} lit outside support", i + 1);
                }
            }
            prop_assert!(prog(&g, 1).max(prog(&x, 1)) <= prog(&x, 1).max(reach + 1));
        }
    }

    #[test]
    fn gradient_and_value_are_finite(x in point(30), k in 1usize..6) {
        let t = x.len();
        let f = WorstCaseFn::new(t, k.min(t), 1.0 + 1.0 / k as f64, Variant::New).unwrap();
        prop_assert!(f.eval(&x).unwrap().is_finite());
        prop_assert!(f.grad(&x).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn message_bytes_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 0..40), scale in 0.1f64..64.0, seed in any::<u64>()) {
        let mut rng = substream(seed, &[]);
        let m = if vals.is_empty() {
            SparseMessage::empty()
        } else {
            let k = 1 + (seed as usize) % vals.len();
            let mut m = rand_k(&vals, k, &mut rng).unwrap();
            m.scale = scale;
            m
        };
        prop_assert_eq!(SparseMessage::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn rand_k_keeps_k_distinct_entries(vals in prop::collection::vec(-10.0f64..10.0, 1..50), seed in any::<u64>()) {
        let d = vals.len();
        let k = 1 + (seed as usize) % d;
        let m = rand_k(&vals, k, &mut substream(seed, &[1])).unwrap();
        prop_assert_eq!(m.payload_size(), k);
        prop_assert!((m.scale - d as f64 / k as f64).abs() < 1e-12);
        for &(i, v) in &m.entries {
            prop_assert_eq!(vals[i as usize - 1], v);
        }
        prop_assert!(SparseMessage::new(m.entries.clone(), m.scale).is_ok());
    }

    #[test]
    fn perm_k_blocks_cover_once(vals in prop::collection::vec(-10.0f64..10.0, 1..60), n in 1usize..9, seed in any::<u64>()) {
        prop_assume!(n <= vals.len());
        let mut hits = vec![0u8; vals.len()];
        for part in 0..n {
            let m = perm_k(&vals, part, n, &mut substream(seed, &[2])).unwrap();
            for &(i, _) in &m.entries {
                hits[i as usize - 1] += 1;
            }
        }
        prop_assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn stream_offsets_are_consecutive(sizes in prop::collection::vec(0usize..6, 1..6), tau in 0.0f64..3.0) {
        let msgs: Vec<SparseMessage> = sizes.iter().map(|&s| identity(&vec![1.0; s])).collect();
        let view = stream_view(&msgs, tau);
        prop_assert_eq!(view.len(), sizes.iter().sum::<usize>());
        for (m, &(_, t)) in view.iter().enumerate() {
            prop_assert_eq!(t, (m + 1) as f64 * tau);
        }
    }

    #[test]
    fn oracle_reveals_at_most_one_coordinate(m in 0usize..7, sigma2 in 0.0f64..1e6, seed in any::<u64>()) {
        let inst = build_instance(InstanceParams::new(1.0, 3648.0 * 6.0, 1.0, 1, sigma2, 9, Variant::Classic)).unwrap();
        let mut x = vec![0.0; inst.d()];
        for v in &mut x[..m] {
            *v = 1.1 * inst.lambda;
        }
        let mut rng = substream(seed, &[3]);
        for _ in 0..8 {
            let draw = oracle::draw(&inst, &x, &mut rng).unwrap();
            prop_assert!(prog(&draw.result, 1) <= m + 1);
            prop_assert!(draw.result[inst.t..].iter().all(|&v| v == 0.0));
        }
    }
}
