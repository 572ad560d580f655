//! Random-sum models behind the lower bound, their closed-form thresholds,
//! Monte-Carlo verification, and the closed-form runtime predictions.
//!
//! Two discovery processes compete for each chain coordinate:
//!
//! * `η`: gradient draws until the masking Bernoulli fires, `Geometric(p_σ)`.
//! * `μ`: stream positions until a target coordinate shows up in a uniformly
//!   random without-replacement stream over `[d]`.

use std::f64::consts::E;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, substream};
use crate::stats::{wilson, Z99};
use crate::worstcase::ObjectiveInstance;

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {p}")));
    }
    Ok(())
}

/// Number of Bernoulli(`p_sigma`) trials up to and including the first success.
pub fn sample_eta<R: Rng + ?Sized>(p_sigma: f64, rng: &mut R) -> Result<u64> {
    check_prob("p_sigma", p_sigma)?;
    let g = Geometric::new(p_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(g.sample(rng) + 1)
}

/// Gaps between the first `count` hits of a fixed `k`-coordinate window in a
/// uniform without-replacement stream over `[d]`.
pub fn sample_mu_block<R: Rng + ?Sized>(d: usize, k: usize, count: usize, rng: &mut R) -> Result<Vec<u64>> {
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!("mu block needs 1 <= K <= d, got K={k}, d={d}")));
    }
    if count > k {
        return Err(Error::InvalidParameter(format!("cannot take {count} hits from a window of {k}")));
    }
    // stream positions (1-based) of the window's coordinates
    let mut pos: Vec<u64> = index::sample(rng, d, k).into_iter().map(|p| p as u64 + 1).collect();
    pos.sort_unstable();
    let mut prev = 0;
    Ok(pos[..count]
        .iter()
        .map(|&p| {
            let gap = p - prev;
            prev = p;
            gap
        })
        .collect())
}

/// Parameters of the compute/s2w block sum and its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSumParams {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub p_sigma: f64,
    pub h: f64,
    pub tau_s: f64,
    pub delta: f64,
}

impl BlockSumParams {
    pub fn p_k(&self) -> f64 {
        2.0 * self.k as f64 / self.d as f64
    }

    /// Reads `n, d, K, p_σ` off a built instance, with `B = ⌊T/K⌋`.
    pub fn from_instance(inst: &ObjectiveInstance, h: f64, tau_s: f64, delta: f64) -> Self {
        Self {
            n: inst.n(),
            d: inst.d(),
            k: inst.k,
            b: inst.t / inst.k,
            p_sigma: inst.p_sigma,
            h,
            tau_s,
            delta,
        }
    }

    /// Terms per block and per process; `K/2`, rounded up for odd `K`.
    pub fn half_window(&self) -> usize {
        self.k.div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.b == 0 || self.k == 0 || self.k > self.d {
            return Err(Error::InvalidParameter(format!(
                "need n, B >= 1 and 1 <= K <= d, got n={}, B={}, K={}, d={}",
                self.n, self.b, self.k, self.d
            )));
        }
        check_prob("p_sigma", self.p_sigma)?;
        check_prob("delta", self.delta)?;
        if !(self.h >= 0.0 && self.tau_s >= 0.0) {
            return Err(Error::InvalidParameter("h and tau_s must be >= 0".into()));
        }
        Ok(())
    }
}

/// One sample of `Σ_b min_i min{h Σ_k η_{b,i,k}, τ_s Σ_k μ_{b,i,k}}`.
pub fn t_b<R: Rng + ?Sized>(p: &BlockSumParams, rng: &mut R) -> Result<f64> {
    p.validate()?;
    let half = p.half_window();
    let mut total = 0.0;
    for _ in 0..p.b {
        let mut best = f64::INFINITY;
        for _ in 0..p.n {
            let mut eta = 0u64;
            for _ in 0..half {
                eta += sample_eta(p.p_sigma, rng)?;
            }
            let mu: u64 = sample_mu_block(p.d, p.k, half, rng)?.iter().sum();
            best = best.min((p.h * eta as f64).min(p.tau_s * mu as f64));
        }
        total += best;
    }
    Ok(total)
}

/// `(BK + log δ) / (e⁴ (2n)^{2/K} (4 + (2/K) log 2n)) · min{h/p_σ, τ_s/p_K}`.
pub fn t_bar_lemma6(p: &BlockSumParams) -> Result<f64> {
    p.validate()?;
    let k = p.k as f64;
    let two_n = 2.0 * p.n as f64;
    let num = p.b as f64 * k + p.delta.ln();
    if num <= 0.0 {
        return Err(Error::NonpositiveNumerator(num));
    }
    let den = E.powi(4) * two_n.powf(2.0 / k) * (4.0 + 2.0 / k * two_n.ln());
    Ok(num / den * (p.h / p.p_sigma).min(p.tau_s / p.p_k()))
}

/// Parameters of the compute/w2s recursion and its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecursionParams {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub p_sigma: f64,
    pub h: f64,
    pub tau_w: f64,
    pub delta: f64,
}

impl RecursionParams {
    pub fn from_instance(inst: &ObjectiveInstance, h: f64, tau_w: f64, delta: f64) -> Self {
        Self {
            n: inst.n(),
            d: inst.d(),
            t: inst.t,
            p_sigma: inst.p_sigma,
            h,
            tau_w,
            delta,
        }
    }

    pub fn p_d(&self) -> f64 {
        2.0 / self.d as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.t == 0 {
            return Err(Error::InvalidParameter("n, d and T must be positive".into()));
        }
        check_prob("p_sigma", self.p_sigma)?;
        check_prob("delta", self.delta)?;
        if !(self.h >= 0.0 && self.tau_w >= 0.0) {
            return Err(Error::InvalidParameter("h and tau_w must be >= 0".into()));
        }
        Ok(())
    }
}

/// One sample of `y_T` from `y_{k,i} = min_j {h η_{k,j} + 1[i≠j] τ_w μ_{k,j} + y_{k-1,j}}`.
pub fn y_t<R: Rng + ?Sized>(p: &RecursionParams, rng: &mut R) -> Result<f64> {
    p.validate()?;
    let n = p.n;
    let mut y = vec![0.0; n];
    let mut own = vec![0.0; n];
    for _ in 0..p.t {
        // own[j] = h η + y_prev; relayed through the server adds τ_w μ
        let (mut best, mut best_at, mut second) = (f64::INFINITY, usize::MAX, f64::INFINITY);
        for j in 0..n {
            own[j] = p.h * sample_eta(p.p_sigma, rng)? as f64 + y[j];
            let mu = rng.random_range(1..=p.d as u64);
            let relayed = own[j] + p.tau_w * mu as f64;
            if relayed < best {
                second = best;
                best = relayed;
                best_at = j;
            } else if relayed < second {
                second = relayed;
            }
        }
        for i in 0..n {
            let other = if i == best_at { second } else { best };
            y[i] = own[i].min(other);
        }
    }
    Ok(y.into_iter().fold(f64::INFINITY, f64::min))
}

/// `(T - log n + log δ)/(32 log 8n) · min{max{h/(p_σ n), τ_w/(p_d n), √(hτ_w/(p_σ p_d n)), h, τ_w}, h/p_σ}`.
pub fn t_bar_lemma8(p: &RecursionParams) -> Result<f64> {
    p.validate()?;
    let n = p.n as f64;
    let num = p.t as f64 - n.ln() + p.delta.ln();
    if num <= 0.0 {
        return Err(Error::NonpositiveNumerator(num));
    }
    let (h, tw, ps, pd) = (p.h, p.tau_w, p.p_sigma, p.p_d());
    let inner = [h / (ps * n), tw / (pd * n), (h * tw / (ps * pd * n)).sqrt(), h, tw]
        .into_iter()
        .fold(0.0, f64::max);
    Ok(num / (32.0 * (8.0 * n).ln()) * inner.min(h / ps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "lowercase")]
pub enum Bound {
    Lemma6(BlockSumParams),
    Lemma8(RecursionParams),
}

impl Bound {
    pub fn name(&self) -> &'static str {
        match self {
            Bound::Lemma6(_) => "lemma6",
            Bound::Lemma8(_) => "lemma8",
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            Bound::Lemma6(p) => p.delta,
            Bound::Lemma8(p) => p.delta,
        }
    }

    pub fn threshold(&self) -> Result<f64> {
        match self {
            Bound::Lemma6(p) => t_bar_lemma6(p),
            Bound::Lemma8(p) => t_bar_lemma8(p),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            Bound::Lemma6(p) => t_b(p, rng),
            Bound::Lemma8(p) => y_t(p, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub params: Bound,
    pub trials: u64,
    pub seed: u64,
    pub t_bar: f64,
    pub hits: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub median: f64,
    pub pass: bool,
}

pub const MIN_TRIALS: u64 = 1000;

/// Runs `f` on a pool capped by `LBOPT_THREADS` when that variable is set.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var("LBOPT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(k) if k > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map(|pool| pool.install(f))
            .unwrap_or_else(|_| panic!("failed to build a {k}-thread pool")),
        _ => f(),
    }
}

/// Estimates `P(sum <= t̄)` and passes iff the 99% Wilson upper edge is `<= δ`.
pub fn mc_verify(bound: &Bound, trials: u64, seed: u64) -> Result<McReport> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidParameter(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let t_bar = bound.threshold()?;
    let mut samples: Vec<f64> = with_thread_cap(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| bound.sample(&mut substream(seed, &[purpose::TRIAL, i])))
            .collect::<Result<Vec<f64>>>()
    })?;
    let hits = samples.iter().filter(|&&s| s <= t_bar).count() as u64;
    samples.sort_by(f64::total_cmp);
    let median = samples[samples.len() / 2];
    let (ci_low, ci_high) = wilson(hits, trials, Z99);
    Ok(McReport {
        params: *bound,
        trials,
        seed,
        t_bar,
        hits,
        p_hat: hits as f64 / trials as f64,
        ci_low,
        ci_high,
        median,
        pass: ci_high <= bound.delta(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryModel {
    Eq3,
    Eq4,
    Eq5,
    #[serde(rename = "eq8-min")]
    Eq8Min,
    /// Single-node SGD, `hLΔ/ε + hσ²LΔ/ε²`.
    Local,
}

impl std::str::FromStr for TheoryModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq3" => Ok(TheoryModel::Eq3),
            "eq4" => Ok(TheoryModel::Eq4),
            "eq5" => Ok(TheoryModel::Eq5),
            "eq8-min" => Ok(TheoryModel::Eq8Min),
            "local" => Ok(TheoryModel::Local),
            other => Err(Error::InvalidParameter(format!("unknown theory model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub eps: f64,
    pub sigma2: f64,
    pub n: usize,
    pub d: usize,
    pub h: f64,
    pub tau_s: f64,
    pub tau_w: f64,
}

/// Predicted runtime with all hidden constants equal to one.
pub fn theory_time(model: TheoryModel, p: &TheoryInputs) -> f64 {
    let r = p.l * p.delta / p.eps;
    let n = p.n as f64;
    let d = p.d as f64;
    let stat = p.sigma2 / (n * p.eps);
    let eq4 = p.h * (1.0 + stat) * r + p.tau_w * (d / n + 1.0) * r + (d * p.tau_w * p.h * stat).sqrt() * r;
    let eq5 = eq4 + p.tau_s * d * r;
    let local = p.h * r + p.h * p.sigma2 * r / p.eps;
    match model {
        TheoryModel::Eq3 => p.h * (r + p.sigma2 * r / (n * p.eps)) + p.tau_w * d * r,
        TheoryModel::Eq4 => eq4,
        TheoryModel::Eq5 => eq5,
        TheoryModel::Eq8Min => eq5.min(local),
        TheoryModel::Local => local,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lemma6_example() -> BlockSumParams {
        BlockSumParams {
            n: 2,
            d: 800,
            k: 4,
            b: 10,
            p_sigma: 0.1,
            h: 1.0,
            tau_s: 1.0,
            delta: 0.5,
        }
    }

    #[test]
    fn eta_degenerate() {
        let mut rng = substream(1, &[]);
        assert!((0..100).all(|_| sample_eta(1.0, &mut rng).unwrap() == 1));
        assert!(sample_eta(0.0, &mut rng).is_err());
    }

    #[test]
    fn mu_block_shapes() {
        let mut rng = substream(1, &[]);
        assert_eq!(sample_mu_block(4, 4, 2, &mut rng).unwrap(), vec![1, 1]);
        for _ in 0..100 {
            let g = sample_mu_block(50, 6, 6, &mut rng).unwrap();
            assert!(g.iter().all(|&v| v >= 1));
            assert!(g.iter().sum::<u64>() <= 50);
        }
        assert!(sample_mu_block(3, 4, 1, &mut rng).is_err());
    }

    #[test]
    fn t_b_degenerate_cases() {
        let mut rng = substream(2, &[]);
        let p = BlockSumParams {
            n: 1,
            d: 10,
            k: 2,
            b: 1,
            p_sigma: 1.0,
            h: 1.5,
            tau_s: 1e12,
            delta: 0.5,
        };
        assert_eq!(t_b(&p, &mut rng).unwrap(), 1.5);
        let p = BlockSumParams { tau_s: 0.0, ..lemma6_example() };
        assert_eq!(t_b(&p, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn lemma6_threshold_example() {
        let p = lemma6_example();
        assert!((p.p_k() - 0.01).abs() < 1e-15);
        let expected = (40.0 + 0.5f64.ln()) / (E.powi(4) * 2.0 * (4.0 + 0.5 * 4f64.ln())) * 10.0;
        let got = t_bar_lemma6(&p).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.767).abs() < 5e-4);
        let p1 = BlockSumParams { delta: 1.0, ..p };
        let scale = E.powi(4) * 2.0 * (4.0 + 0.5 * 4f64.ln()) / 10.0;
        assert!((t_bar_lemma6(&p1).unwrap() * scale - 40.0).abs() < 1e-9);
    }

    #[test]
    fn lemma6_threshold_nonincreasing_in_n() {
        let mut prev = f64::INFINITY;
        for n in 1..200 {
            let v = t_bar_lemma6(&BlockSumParams { n, ..lemma6_example() }).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn nonpositive_numerators() {
        let p = BlockSumParams {
            b: 1,
            k: 1,
            delta: 0.1,
            ..lemma6_example()
        };
        assert!(matches!(t_bar_lemma6(&p), Err(Error::NonpositiveNumerator(_))));
        let q = RecursionParams {
            n: 8,
            d: 10,
            t: 2,
            p_sigma: 0.5,
            h: 1.0,
            tau_w: 1.0,
            delta: 0.5,
        };
        assert!(matches!(t_bar_lemma8(&q), Err(Error::NonpositiveNumerator(_))));
    }

    #[test]
    fn lemma8_threshold_example() {
        let p = RecursionParams {
            n: 1,
            d: 100,
            t: 100,
            p_sigma: 0.1,
            h: 1.0,
            tau_w: 1.0,
            delta: 0.5,
        };
        let expected = (100.0 + 0.5f64.ln()) / (32.0 * 8f64.ln()) * 10.0;
        let got = t_bar_lemma8(&p).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 14.924).abs() < 1e-3);
        let mut prev = 0.0;
        for t in 1..300 {
            if let Ok(v) = t_bar_lemma8(&RecursionParams { t, ..p }) {
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn y_t_degenerate_cases() {
        let p = RecursionParams {
            n: 1,
            d: 20,
            t: 7,
            p_sigma: 1.0,
            h: 2.0,
            tau_w: 5.0,
            delta: 0.5,
        };
        let mut rng = substream(3, &[]);
        assert_eq!(y_t(&p, &mut rng).unwrap(), 14.0);
        let p = RecursionParams { n: 3, tau_w: 0.0, ..p };
        assert_eq!(y_t(&p, &mut rng).unwrap(), 14.0);
    }

    #[test]
    fn mc_verify_degenerate_point_mass() {
        let p = BlockSumParams {
            n: 1,
            d: 10,
            k: 1,
            b: 1,
            p_sigma: 1.0,
            h: 1.0,
            tau_s: 1e12,
            delta: 0.5,
        };
        let r = mc_verify(&Bound::Lemma6(p), 1000, 5).unwrap();
        assert!(r.t_bar < 1.0);
        assert_eq!(r.hits, 0);
        assert!(r.pass);
        assert!(mc_verify(&Bound::Lemma6(p), 999, 5).is_err());
    }

    #[test]
    fn theory_examples() {
        let base = TheoryInputs {
            l: 2.0,
            delta: 5.0,
            eps: 0.5,
            sigma2: 0.0,
            n: 4,
            d: 100,
            h: 3.0,
            tau_s: 0.0,
            tau_w: 0.0,
        };
        assert!((theory_time(TheoryModel::Eq3, &base) - 3.0 * 20.0).abs() < 1e-12);
        let p = TheoryInputs {
            sigma2: 8.0,
            tau_w: 0.1,
            tau_s: 0.2,
            ..base
        };
        let eq4 = theory_time(TheoryModel::Eq4, &p);
        let eq5 = theory_time(TheoryModel::Eq5, &p);
        assert!((eq5 - eq4 - 0.2 * 100.0 * 20.0).abs() < 1e-9);
        let stat = |n: usize| {
            let q = TheoryInputs { n, ..p };
            theory_time(TheoryModel::Eq3, &q) - theory_time(TheoryModel::Eq3, &TheoryInputs { sigma2: 0.0, ..q })
        };
        assert!((stat(4) / stat(8) - 2.0).abs() < 1e-12);
        let local = theory_time(TheoryModel::Local, &p);
        assert_eq!(theory_time(TheoryModel::Eq8Min, &p), eq5.min(local));
    }
}
