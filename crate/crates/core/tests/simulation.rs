use lbopt_core::algorithms::{batch_sync_sgd, greedy_chaser, AlgKind, Multipliers};
use lbopt_core::compressors::rand_k;
use lbopt_core::rng::substream;
use lbopt_core::simulator::{audit_zero_respecting, run, Protocol, SimConfig, SimOutcome, StopReason, TimingModel};
use lbopt_core::stats::Moments;
use lbopt_core::worstcase::{build_instance, constants, window_for, InstanceParams, ObjectiveInstance, Variant};
use lbopt_core::kernels::KernelParam;

fn classic(n: usize, t: usize, d: usize, sigma2: f64) -> ObjectiveInstance {
    build_instance(InstanceParams::new(1.0, 3648.0 * t as f64, 1.0, n, sigma2, d, Variant::Classic)).unwrap()
}

/// New-variant instance with chain length `t` and masking probability `p_sigma`.
fn windowed(n: usize, t: usize, d: usize, p_sigma: f64) -> ObjectiveInstance {
    let k = window_for(n);
    let c = constants(k, KernelParam::new(1.0 + 1.0 / k as f64).unwrap(), Variant::New);
    let delta = 2.0 * c.delta0 * c.ell1 * (t as f64 + 0.5);
    let sigma2 = 2.0 * c.gamma_inf * c.gamma_inf / p_sigma;
    let inst = build_instance(InstanceParams::new(1.0, delta, 1.0, n, sigma2, d, Variant::New)).unwrap();
    assert_eq!(inst.t, t);
    inst
}

fn simulate(kind: AlgKind, inst: &ObjectiveInstance, protocol: Protocol, timing: TimingModel, budget: f64, seed: u64) -> SimOutcome {
    let mut alg = kind.build(inst, &timing, &Multipliers::default()).unwrap();
    let mut cfg = SimConfig::new(protocol, timing, budget, seed);
    cfg.record_trace = true;
    cfg.stop_at_eps = false;
    run(&cfg, inst, alg.as_mut()).unwrap()
}

#[test]
fn sync_sgd_matches_gradient_descent() {
    for n in [1usize, 2, 4] {
        let inst = classic(n, 3, 12, 0.0);
        let timing = TimingModel::new(1.0, 0.0, 0.0).unwrap();
        let mut alg = batch_sync_sgd(&inst, &timing, &Multipliers::default()).record_iterates();
        assert_eq!(alg.batch(), 1);
        let gamma = alg.gamma();
        let mut cfg = SimConfig::new(Protocol::P1, timing, 40.5, 3);
        cfg.stop_at_eps = false;
        let out = run(&cfg, &inst, &mut alg).unwrap();
        assert_eq!(out.record.grads_computed, 40 * n as u64);
        let iterates = alg.iterates();
        assert_eq!(iterates.len(), 41);
        let mut x = vec![0.0; inst.d()];
        for (k, got) in iterates.iter().enumerate() {
            for (a, b) in got.iter().zip(&x) {
                // the n-term sum may round once per addition when n is not a power of two
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "n={n} step {k}: {a} vs {b}");
            }
            let g = inst.grad_scaled(&x).unwrap();
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= gamma * gi;
            }
        }
        if n <= 2 {
            assert_eq!(iterates[40], {
                let mut x = vec![0.0; inst.d()];
                for _ in 0..40 {
                    let g = inst.grad_scaled(&x).unwrap();
                    x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= gamma * gi);
                }
                x
            });
        }
    }
}

#[test]
fn runs_are_reproducible() {
    let inst = windowed(2, 6, 40, 0.3);
    let timing = TimingModel::new(1.0, 0.25, 0.5).unwrap();
    for kind in AlgKind::ALL {
        for protocol in [Protocol::P1, Protocol::P2] {
            let a = simulate(kind, &inst, protocol, timing, 60.0, 9);
            let b = simulate(kind, &inst, protocol, timing, 60.0, 9);
            assert_eq!(a.record, b.record, "{}", kind.name());
            assert_eq!(a.trace, b.trace, "{}", kind.name());
        }
    }
    let discovered: Vec<_> = (0..6)
        .map(|s| simulate(AlgKind::GreedyChaser, &inst, Protocol::P2, timing, 60.0, s).record.discovery_times)
        .collect();
    assert!(discovered.iter().any(|d| *d != discovered[0]), "seed has no effect");
}

#[test]
fn counters_match_the_trace() {
    let inst = windowed(3, 8, 40, 0.3);
    let timing = TimingModel::new(1.0, 0.25, 0.5).unwrap();
    for kind in AlgKind::ALL {
        for protocol in [Protocol::P1, Protocol::P2] {
            let out = simulate(kind, &inst, protocol, timing, 80.0, 4);
            let trace = out.trace.unwrap();
            let count = |k: &str| trace.iter().filter(|e| e.kind == k).count() as u64;
            let delivered = |to_server: bool| -> u64 {
                trace
                    .iter()
                    .filter(|e| e.kind == "deliver" && (e.node == "S") == to_server)
                    .map(|e| e.payload_size as u64)
                    .sum()
            };
            let r = &out.record;
            assert_eq!(r.grads_computed, count("grad_done"), "{}", kind.name());
            assert_eq!(r.points, count("propose"));
            assert_eq!(r.coords_s2w, delivered(false));
            assert_eq!(r.coords_w2s, delivered(true));
            if protocol == Protocol::P1 {
                assert_eq!(r.coords_w2s, 0);
                assert_eq!(count("grad_share"), r.grads_computed);
            }
            // every coordinate sent is eventually delivered or still in flight
            let sent: u64 = trace.iter().filter(|e| e.kind == "send").map(|e| e.payload_size as u64).sum();
            assert!(sent >= r.coords_s2w + r.coords_w2s);
            assert!(trace.windows(2).all(|w| w[0].t <= w[1].t));
        }
    }
}

#[test]
fn bundled_algorithms_pass_the_audit() {
    let inst = windowed(4, 10, 64, 0.2);
    for timing in [
        TimingModel::new(1.0, 0.1, 0.1).unwrap(),
        TimingModel::new(0.5, 1.0, 2.0).unwrap(),
    ] {
        for kind in AlgKind::ALL {
            for protocol in [Protocol::P1, Protocol::P2] {
                let out = simulate(kind, &inst, protocol, timing, 150.0, 21);
                assert!(out.violations.is_empty());
                let trace = out.trace.unwrap();
                assert!(audit_zero_respecting(&trace).is_empty(), "{} {protocol:?}", kind.name());
            }
        }
    }
}

#[test]
fn chaser_discovers_in_chain_order() {
    let inst = windowed(2, 12, 48, 0.5);
    let timing = TimingModel::new(1.0, 0.5, 0.5).unwrap();
    for protocol in [Protocol::P1, Protocol::P2] {
        for seed in 0..5 {
            let mut alg = greedy_chaser(&inst, &timing, &Multipliers::default()).unwrap();
            let mut cfg = SimConfig::new(protocol, timing, 1e5, seed);
            cfg.stop_at_eps = false;
            cfg.stop_at_full_discovery = true;
            let out = run(&cfg, &inst, &mut alg).unwrap();
            assert_eq!(out.record.stop, StopReason::FullDiscovery);
            let times: Vec<f64> = out.record.discovery_times.iter().map(|t| t.unwrap()).collect();
            assert!(times.windows(2).all(|w| w[0] <= w[1]), "{times:?}");
            assert!(times[0] >= timing.h);
            assert_eq!(out.record.last_discovery(), times.last().copied());
        }
    }
}

#[test]
fn qsgd_messages_average_to_the_batch_sum() {
    // m RandK(1) uploads of one vector, averaged with the 1/m server weight
    let sum = [2.0, -1.0, 0.0, 4.0, 0.5];
    let m = 3;
    let mut rng = substream(77, &[]);
    let mut coords = vec![Moments::default(); sum.len()];
    for _ in 0..30_000 {
        let mut agg = vec![0.0; sum.len()];
        for _ in 0..m {
            rand_k(&sum, 1, &mut rng).unwrap().accumulate(&mut agg, 1.0 / m as f64);
        }
        for (c, v) in coords.iter_mut().zip(&agg) {
            c.push(*v);
        }
    }
    for (j, c) in coords.iter().enumerate() {
        assert!((c.mean() - sum[j]).abs() <= 4.5 * c.std_err() + 1e-12, "coord {j}");
    }
}

#[test]
fn epsilon_stop_records_first_hit() {
    let inst = classic(1, 1, 4, 0.0);
    let timing = TimingModel::new(1.0, 0.0, 0.0).unwrap();
    let mut alg = AlgKind::LocalSgd.build(&inst, &timing, &Multipliers::default()).unwrap();
    let cfg = SimConfig::new(Protocol::P2, timing, 1e6, 0);
    let out = run(&cfg, &inst, alg.as_mut()).unwrap();
    assert_eq!(out.record.stop, StopReason::Epsilon);
    let t = out.record.time_to_eps.unwrap();
    assert!(out.record.best_grad_sq <= inst.eps());
    assert_eq!(t, out.record.grads_computed as f64 * timing.h);
}
