//! Monte-Carlo checks with fixed seeds. Bands are wide (4.5 sigma, p > 1e-4)
//! so a correct sampler essentially never trips them.

use std::collections::HashMap;

use lbopt_core::compressors::{perm_k, rand_k};
use lbopt_core::lowerbound::{sample_eta, sample_mu_block};
use lbopt_core::oracle;
use lbopt_core::rng::substream;
use lbopt_core::stats::{chi_square_pvalue, within_binomial_band, Moments};
use lbopt_core::worstcase::{build_instance, InstanceParams, Variant};
use statrs::function::factorial::binomial;

const SIGMAS: f64 = 4.5;
const MIN_P: f64 = 1e-4;

#[test]
fn oracle_is_unbiased_with_bounded_variance() {
    // p_sigma = 0.25 on a classic chain of length 6
    let inst0 = build_instance(InstanceParams::new(1.0, 3648.0 * 6.0, 1.0, 1, 1.0, 8, Variant::Classic)).unwrap();
    let sigma2 = 2.0 * inst0.constants.gamma_inf.powi(2) / 0.25;
    let inst = build_instance(InstanceParams::new(1.0, 3648.0 * 6.0, 1.0, 1, sigma2, 8, Variant::Classic)).unwrap();
    assert!((inst.p_sigma - 0.25).abs() < 1e-12);
    let mut x = vec![0.0; inst.d()];
    x[0] = 1.2 * inst.lambda;
    x[1] = 0.8 * inst.lambda;
    let g = inst.grad_scaled(&x).unwrap();
    let trials = 40_000u64;
    let mut rng = substream(11, &[1]);
    let mut coords = vec![Moments::default(); inst.d()];
    let mut sq = Moments::default();
    let mut fired = 0;
    for _ in 0..trials {
        let draw = oracle::draw(&inst, &x, &mut rng).unwrap();
        fired += draw.bernoulli as u64;
        let mut err = 0.0;
        for (j, (&v, m)) in draw.result.iter().zip(&mut coords).enumerate() {
            m.push(v);
            err += (v - g[j]).powi(2);
        }
        sq.push(err);
    }
    assert!(within_binomial_band(fired, trials, inst.p_sigma, SIGMAS));
    for (j, m) in coords.iter().enumerate() {
        let tol = SIGMAS * m.std_err() + 1e-12 * g[j].abs();
        assert!((m.mean() - g[j]).abs() <= tol, "coordinate {j}: {} vs {}", m.mean(), g[j]);
    }
    let var = oracle::exact_variance(&inst, &x).unwrap();
    assert!(var > 0.0 && var <= sigma2);
    assert!((sq.mean() - var).abs() <= SIGMAS * sq.std_err(), "{} vs {var}", sq.mean());
}

#[test]
fn rand_k_is_unbiased_with_known_second_moment() {
    let x = [1.0, -2.0, 0.5, 3.0, 0.0, -1.5, 2.5];
    let d = x.len();
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    for k in [1usize, 3, 7] {
        let mut rng = substream(12, &[k as u64]);
        let mut coords = vec![Moments::default(); d];
        let mut sq = Moments::default();
        for _ in 0..40_000 {
            let c = rand_k(&x, k, &mut rng).unwrap().decode(d);
            sq.push(c.iter().map(|v| v * v).sum());
            for (m, v) in coords.iter_mut().zip(&c) {
                m.push(*v);
            }
        }
        for (j, m) in coords.iter().enumerate() {
            assert!((m.mean() - x[j]).abs() <= SIGMAS * m.std_err() + 1e-12, "K={k} coord {j}");
        }
        let want = d as f64 / k as f64 * norm2;
        assert!((sq.mean() - want).abs() <= SIGMAS * sq.std_err() + 1e-9, "K={k}: {} vs {want}", sq.mean());
    }
}

#[test]
fn rand_k_subsets_are_uniform() {
    for (d, k) in [(4usize, 1usize), (5, 2), (6, 3)] {
        let x = vec![1.0; d];
        let mut rng = substream(13, &[d as u64, k as u64]);
        let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
        let trials = 30_000u64;
        for _ in 0..trials {
            let mut s: Vec<u32> = rand_k(&x, k, &mut rng).unwrap().entries.iter().map(|e| e.0).collect();
            s.sort_unstable();
            *counts.entry(s).or_default() += 1;
        }
        let subsets = binomial(d as u64, k as u64) as usize;
        assert_eq!(counts.len(), subsets);
        let observed: Vec<u64> = counts.values().copied().collect();
        let expected = vec![trials as f64 / subsets as f64; subsets];
        let p = chi_square_pvalue(&observed, &expected);
        assert!(p > MIN_P, "d={d} K={k}: p={p}");
    }
}

#[test]
fn perm_k_average_is_exact_and_blocks_uniform() {
    let x = [3.0, -1.0, 2.0, 0.5, 4.0, -2.0];
    let n = 3;
    let trials = 30_000u64;
    // which block coordinate 1 lands in; each block equally likely
    let mut owner = [0u64; 3];
    let mut worker0 = vec![Moments::default(); x.len()];
    for t in 0..trials {
        let mut avg = vec![0.0; x.len()];
        for part in 0..n {
            let m = perm_k(&x, part, n, &mut substream(14, &[t])).unwrap();
            m.accumulate(&mut avg, 1.0 / n as f64);
            if m.entries.iter().any(|e| e.0 == 1) {
                owner[part] += 1;
            }
            if part == 0 {
                for (mm, v) in worker0.iter_mut().zip(m.decode(x.len())) {
                    mm.push(v);
                }
            }
        }
        for (a, b) in avg.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let p = chi_square_pvalue(&owner, &[trials as f64 / 3.0; 3]);
    assert!(p > MIN_P, "p={p}");
    for (j, m) in worker0.iter().enumerate() {
        assert!((m.mean() - x[j]).abs() <= SIGMAS * m.std_err(), "coord {j}");
    }
}

#[test]
fn eta_matches_geometric_cdf() {
    for p in [0.05, 0.3, 1.0] {
        let mut rng = substream(15, &[(p * 100.0) as u64]);
        let trials = 20_000u64;
        let draws: Vec<u64> = (0..trials).map(|_| sample_eta(p, &mut rng).unwrap()).collect();
        assert!(draws.iter().all(|&e| e >= 1));
        for m in [1u64, 2, 5, 20] {
            let cdf = 1.0 - (1.0 - p).powi(m as i32);
            let hits = draws.iter().filter(|&&e| e <= m).count() as u64;
            if cdf >= 1.0 {
                assert_eq!(hits, trials);
            } else {
                assert!(within_binomial_band(hits, trials, cdf, SIGMAS), "p={p} m={m}");
            }
        }
    }
}

#[test]
fn mu_matches_without_replacement_cdf() {
    let (d, k) = (40usize, 4usize);
    let trials = 20_000u64;
    let mut rng = substream(16, &[]);
    let mut first = Vec::new();
    let mut last = Vec::new();
    for _ in 0..trials {
        let gaps = sample_mu_block(d, k, k, &mut rng).unwrap();
        assert!(gaps.iter().all(|&g| g >= 1));
        first.push(gaps[0]);
        last.push(gaps.iter().sum::<u64>());
    }
    let choose = |a: usize, b: usize| binomial(a as u64, b as u64);
    for m in [1usize, 5, 10, 20, 35] {
        // first hit <= m; all k hits <= m
        let p_first = 1.0 - choose(d - m, k) / choose(d, k);
        let p_last = if m >= k { choose(m, k) / choose(d, k) } else { 0.0 };
        let h1 = first.iter().filter(|&&g| g as usize <= m).count() as u64;
        let h2 = last.iter().filter(|&&g| g as usize <= m).count() as u64;
        assert!(within_binomial_band(h1, trials, p_first, SIGMAS), "first m={m}");
        if p_last > 0.0 {
            assert!(within_binomial_band(h2, trials, p_last, SIGMAS), "last m={m}");
        } else {
            assert_eq!(h2, 0);
        }
    }
}
