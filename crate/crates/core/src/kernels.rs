//! Scalar building blocks of the chain functions.
//!
//! * `psi` is the smooth gate `Ψ_a`: zero for `x <= 1/2`, rising to `a` as `x -> inf`.
//! * `phi` is the scaled Gaussian integral `Φ(x) = sqrt(e) * ∫_{-inf}^x exp(-t²/2) dt`.
//! * `gamma_fn` is the barrier `Γ`: zero for `x >= 0`, `-x exp(1/x + 1)` for `x < 0`.
//!
//! All functions are total over `f64`. Arguments are clamped to `±ARG_LIMIT`
//! before any exponent is formed.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs beyond this magnitude are clamped before exponentiation.
pub const ARG_LIMIT: f64 = 1e10;

/// `sqrt(e)`, the value of `Φ'(0)`.
pub const SQRT_E: f64 = 1.648_721_270_700_128_2;

/// `sup Φ = sqrt(2πe)`.
pub const PHI_SUP: f64 = 4.132_731_354_122_493;

/// Bound on `|Φ''|`.
pub const PHI_D2_BOUND: f64 = 27.0;

/// `inf Γ' = -e` (approached as `x -> -inf`, never attained).
pub const GAMMA_D1_INF: f64 = -E;

/// `max Γ'' = 27 e^-2`, attained at `x = -1/3`.
pub const GAMMA_D2_MAX: f64 = 27.0 * 0.135_335_283_236_612_7;

#[inline]
fn clamp_arg(x: f64) -> f64 {
    x.clamp(-ARG_LIMIT, ARG_LIMIT)
}

/// Shape parameter `a` of `Ψ_a`, restricted to `1 < a <= e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct KernelParam {
    a: f64,
    log_a: f64,
}

impl KernelParam {
    pub fn new(a: f64) -> Result<Self> {
        // `a == e` must be accepted even when it arrives as `E` with rounding.
        if !(a > 1.0 && a <= E * (1.0 + 4.0 * f64::EPSILON)) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel parameter a must satisfy 1 < a <= e, got {a}"
            )));
        }
        let a = a.min(E);
        Ok(Self { a, log_a: a.ln() })
    }

    /// The classic gate, `a = e`.
    pub fn e() -> Self {
        Self { a: E, log_a: 1.0 }
    }

    pub fn value(&self) -> f64 {
        self.a
    }

    pub fn log(&self) -> f64 {
        self.log_a
    }

    /// `2e / sqrt(log a)`, the sup of `Ψ'_a`.
    pub fn psi_d1_bound(&self) -> f64 {
        2.0 * E / self.log_a.sqrt()
    }

    /// `56e / log a`, the bound on `|Ψ''_a|`.
    pub fn psi_d2_bound(&self) -> f64 {
        56.0 * E / self.log_a
    }
}

impl TryFrom<f64> for KernelParam {
    type Error = Error;

    fn try_from(a: f64) -> Result<Self> {
        Self::new(a)
    }
}

impl From<KernelParam> for f64 {
    fn from(p: KernelParam) -> f64 {
        p.a
    }
}

/// Returns `(1/(2x-1), Ψ_a(x))` on the rising branch, or `None` where `Ψ_a` vanishes.
#[inline]
fn psi_branch(a: KernelParam, x: f64) -> Option<(f64, f64)> {
    let x = clamp_arg(x);
    if x <= 0.5 {
        return None;
    }
    let inv = 1.0 / (2.0 * x - 1.0);
    let value = (a.log_a * (1.0 - inv * inv)).exp();
    if value == 0.0 {
        None
    } else {
        Some((inv, value))
    }
}

pub fn psi(a: KernelParam, x: f64) -> f64 {
    psi_branch(a, x).map_or(0.0, |(_, v)| v)
}

pub fn psi_d1(a: KernelParam, x: f64) -> f64 {
    match psi_branch(a, x) {
        Some((inv, v)) => 4.0 * a.log_a * inv * inv * inv * v,
        None => 0.0,
    }
}

pub fn psi_d2(a: KernelParam, x: f64) -> f64 {
    match psi_branch(a, x) {
        Some((inv, v)) => {
            let inv2 = inv * inv;
            // -8 log a (3 s² - 2 log a) / s⁶ with s = 2x - 1
            -8.0 * a.log_a * (3.0 - 2.0 * a.log_a * inv2) * inv2 * inv2 * v
        }
        None => 0.0,
    }
}

/// `Φ(x)` through the complementary error function.
pub fn phi(x: f64) -> f64 {
    let x = clamp_arg(x);
    // sqrt(e) * sqrt(2π) * P(N(0,1) <= x)
    SQRT_E * (2.0 * PI).sqrt() * 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn phi_d1(x: f64) -> f64 {
    let x = clamp_arg(x);
    SQRT_E * (-0.5 * x * x).exp()
}

pub fn phi_d2(x: f64) -> f64 {
    let x = clamp_arg(x);
    -x * phi_d1(x)
}

#[inline]
fn gamma_exp(x: f64) -> Option<f64> {
    if x >= 0.0 {
        return None;
    }
    let v = (1.0 / x + 1.0).exp();
    if v == 0.0 {
        None
    } else {
        Some(v)
    }
}

pub fn gamma_fn(x: f64) -> f64 {
    let x = clamp_arg(x);
    gamma_exp(x).map_or(0.0, |v| -x * v)
}

pub fn gamma_d1(x: f64) -> f64 {
    let x = clamp_arg(x);
    gamma_exp(x).map_or(0.0, |v| v * (1.0 / x - 1.0))
}

pub fn gamma_d2(x: f64) -> f64 {
    let x = clamp_arg(x);
    gamma_exp(x).map_or(0.0, |v| -v / (x * x * x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
    }

    const AS: [f64; 5] = [1.1, 1.25, 1.5, 2.0, E];

    #[test]
    fn param_range() {
        assert!(KernelParam::new(1.0).is_err());
        assert!(KernelParam::new(3.0).is_err());
        assert!(KernelParam::new(f64::NAN).is_err());
        assert_eq!(KernelParam::new(E).unwrap().log(), 1.0);
        let p: KernelParam = serde_json::from_str("1.5").unwrap();
        assert_eq!(p.value(), 1.5);
        assert!(serde_json::from_str::<KernelParam>("0.5").is_err());
    }

    #[test]
    fn psi_examples() {
        let a = KernelParam::new(1.5).unwrap();
        assert_eq!(psi(a, 0.5), 0.0);
        assert_eq!(psi(KernelParam::e(), 1.0), 1.0);
        // exp(1 - 1/361)
        let expected = (1.0f64 - 1.0 / 361.0).exp();
        assert!((psi(KernelParam::e(), 10.0) - expected).abs() < 1e-14);
        assert!((expected - 2.710_762).abs() < 1e-6);
    }

    #[test]
    fn psi_derivative_examples() {
        let a = KernelParam::new(1.5).unwrap();
        assert_eq!(psi_d1(a, 0.4), 0.0);
        assert_eq!(psi_d2(a, 0.4), 0.0);
        assert!((psi_d1(KernelParam::e(), 1.0) - 4.0).abs() < 1e-14);
        let max = grid(0.5, 5.0, 20_001)
            .map(|x| psi_d1(KernelParam::e(), x))
            .fold(0.0, f64::max);
        assert!(max <= 2.0 * E);
    }

    #[test]
    fn phi_examples() {
        assert!((phi_d1(0.0) - 1.648_72).abs() < 1e-5);
        assert_eq!(phi_d1(0.0), SQRT_E);
        let half = SQRT_E * (2.0 * PI).sqrt() / 2.0;
        assert!((phi(0.0) - half).abs() < 1e-14);
        assert!((phi(0.0) - 2.066_37).abs() < 1e-5);
        assert!((phi(40.0) - PHI_SUP).abs() < 1e-14);
        assert!((PHI_SUP - (2.0 * PI * E).sqrt()).abs() < 1e-15);
        assert_eq!(phi(-1e300), 0.0);
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_fn(0.7), 0.0);
        assert!((gamma_fn(-1.0) - 1.0).abs() < 1e-15);
        assert!((gamma_d1(-1.0) + 2.0).abs() < 1e-15);
        assert!((GAMMA_D2_MAX - 27.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((gamma_d2(-1.0 / 3.0) - GAMMA_D2_MAX).abs() < 1e-12);
    }

    #[test]
    fn extreme_arguments_stay_finite() {
        for &x in &[-1e300, -1e12, -1e-300, -0.0, 0.0, 1e-300, 0.5 + 1e-16, 1e12, 1e300] {
            for &a in &AS {
                let a = KernelParam::new(a).unwrap();
                assert!(psi(a, x).is_finite());
                assert!(psi_d1(a, x).is_finite());
                assert!(psi_d2(a, x).is_finite());
            }
            assert!(phi(x).is_finite() && phi_d1(x).is_finite() && phi_d2(x).is_finite());
            assert!(gamma_fn(x).is_finite() && gamma_d1(x).is_finite() && gamma_d2(x).is_finite());
        }
        // limits survive the clamp
        assert!((psi(KernelParam::e(), 1e300) - E).abs() < 1e-12);
        assert!((gamma_d1(-1e300) - GAMMA_D1_INF).abs() < 1e-9);
    }

    #[test]
    fn bounds_on_dense_grid() {
        for &a in &AS {
            let p = KernelParam::new(a).unwrap();
            let mut prev = 0.0;
            for x in grid(-10.0, 10.0, 10_001) {
                let v = psi(p, x);
                assert!((0.0..a).contains(&v), "psi({a},{x}) = {v}");
                assert!(v >= prev);
                prev = v;
                let d1 = psi_d1(p, x);
                assert!(d1 >= 0.0 && d1 <= p.psi_d1_bound());
                assert!(psi_d2(p, x).abs() <= p.psi_d2_bound());
                if x >= 1.0 {
                    assert!(v >= 1.0);
                }
            }
        }
        for x in grid(-10.0, 10.0, 10_001) {
            assert!(phi_d2(x).abs() <= PHI_D2_BOUND);
            let g2 = gamma_d2(x);
            assert!((0.0..=GAMMA_D2_MAX + 1e-12).contains(&g2));
            let g1 = gamma_d1(x);
            assert!(g1 > GAMMA_D1_INF && g1 <= 0.0);
            if x.abs() <= 0.99 {
                assert!(phi_d1(x) >= 1.0 + 1e-3);
            }
        }
    }
}
