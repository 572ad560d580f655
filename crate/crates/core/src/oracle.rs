//! The adversarial stochastic-gradient oracle.
//!
//! Coordinates up to `prog¹(x)` are returned exactly. All later coordinates are
//! multiplied by a single shared `ξ/p_σ` with `ξ ~ Bernoulli(p_σ)`, so the
//! next chain coordinate is revealed with probability `p_σ` per call.

use rand::Rng;

use crate::error::{Error, Result};
use crate::worstcase::{prog, ObjectiveInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleDraw {
    pub point: Vec<f64>,
    pub bernoulli: bool,
    pub result: Vec<f64>,
}

fn check_point(inst: &ObjectiveInstance, x: &[f64]) -> Result<()> {
    if x.len() != inst.d() {
        return Err(Error::DimensionMismatch {
            expected: inst.d(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("oracle point must be finite".into()));
    }
    Ok(())
}

/// Writes one stochastic gradient into `out` and returns the drawn `ξ`.
pub fn draw_into<R: Rng + ?Sized>(
    inst: &ObjectiveInstance,
    x: &[f64],
    rng: &mut R,
    out: &mut [f64],
) -> Result<bool> {
    check_point(inst, x)?;
    inst.grad_scaled_into(x, out)?;
    let xi = rng.random_bool(inst.p_sigma);
    let known = prog(x, 1);
    let factor = if xi { 1.0 / inst.p_sigma } else { 0.0 };
    if factor != 1.0 {
        let start = known.min(out.len());
        for g in &mut out[start..] {
            *g *= factor;
        }
    }
    debug_assert!(prog(out, 1) <= known + 1, "oracle revealed more than one coordinate");
    Ok(xi)
}

pub fn draw<R: Rng + ?Sized>(inst: &ObjectiveInstance, x: &[f64], rng: &mut R) -> Result<OracleDraw> {
    let mut result = vec![0.0; inst.d()];
    let bernoulli = draw_into(inst, x, rng, &mut result)?;
    Ok(OracleDraw {
        point: x.to_vec(),
        bernoulli,
        result,
    })
}

/// `E‖∇f(x; ξ) - ∇f(x)‖² = Σ_{j > prog¹(x)} ∇_j f(x)² (1 - p_σ)/p_σ`.
pub fn exact_variance(inst: &ObjectiveInstance, x: &[f64]) -> Result<f64> {
    check_point(inst, x)?;
    if inst.p_sigma <= 0.0 {
        return Err(Error::InvalidParameter("p_sigma must be positive".into()));
    }
    let g = inst.grad_scaled(x)?;
    let known = prog(x, 1);
    let tail: f64 = g[known..].iter().map(|v| v * v).sum();
    Ok(tail * (1.0 - inst.p_sigma) / inst.p_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::worstcase::{build_instance, InstanceParams, Variant};

    fn instance(sigma2: f64) -> ObjectiveInstance {
        build_instance(InstanceParams::new(1.0, 3648.0 * 6.0, 1.0, 2, sigma2, 10, Variant::Classic)).unwrap()
    }

    fn chain_point(inst: &ObjectiveInstance, m: usize) -> Vec<f64> {
        let mut x = vec![0.0; inst.d()];
        for v in &mut x[..m] {
            *v = 1.3 * inst.lambda;
        }
        x
    }

    #[test]
    fn deterministic_when_p_sigma_is_one() {
        let inst = instance(0.0);
        let x = chain_point(&inst, 2);
        let mut rng = substream(1, &[0]);
        for _ in 0..20 {
            let d = draw(&inst, &x, &mut rng).unwrap();
            assert!(d.bernoulli);
            assert_eq!(d.result, inst.grad_scaled(&x).unwrap());
        }
        assert_eq!(exact_variance(&inst, &x).unwrap(), 0.0);
    }

    #[test]
    fn zero_bernoulli_masks_the_tail() {
        let inst = instance(1e5);
        assert!(inst.p_sigma < 0.1);
        let x = chain_point(&inst, 2);
        let g = inst.grad_scaled(&x).unwrap();
        assert!(g[2] != 0.0);
        let mut rng = substream(2, &[0]);
        let mut seen = [false, false];
        for _ in 0..2000 {
            let d = draw(&inst, &x, &mut rng).unwrap();
            seen[d.bernoulli as usize] = true;
            assert_eq!(&d.result[..2], &g[..2]);
            if d.bernoulli {
                assert!((d.result[2] - g[2] / inst.p_sigma).abs() <= 1e-12 * d.result[2].abs());
            } else {
                assert!(d.result[2..].iter().all(|&v| v == 0.0));
            }
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn fully_known_point_has_no_variance() {
        let inst = instance(1e5);
        let mut x = chain_point(&inst, inst.t);
        *x.last_mut().unwrap() = 1.0;
        assert_eq!(exact_variance(&inst, &x).unwrap(), 0.0);
    }

    #[test]
    fn variance_closed_form_below_sigma2() {
        for sigma2 in [1e3, 1e4, 1e6] {
            let inst = instance(sigma2);
            for m in 0..inst.t {
                let x = chain_point(&inst, m);
                assert!(exact_variance(&inst, &x).unwrap() <= sigma2);
            }
        }
    }

    #[test]
    fn rejects_bad_points() {
        let inst = instance(0.0);
        let mut rng = substream(0, &[]);
        assert!(draw(&inst, &[0.0; 3], &mut rng).is_err());
        let mut x = vec![0.0; inst.d()];
        x[0] = f64::NAN;
        assert!(draw(&inst, &x, &mut rng).is_err());
    }
}
