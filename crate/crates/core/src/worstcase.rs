//! Chain-structured worst-case functions and their scaled instances.
//!
//! Two variants share one interface:
//!
//! * `Classic`: `F_T(x) = Σ_i [Ψ(-x_{i-1})Φ(-x_i) - Ψ(x_{i-1})Φ(x_i)]` with the
//!   `a = e` gate and a single-coordinate window.
//! * `New`: `F_{T,K,a}(x) = -Σ_i Ψ_a(x_{i-K})…Ψ_a(x_{i-1})Φ(x_i) + Σ_i Γ(x_i)`.
//!
//! Coordinates `x_0 = … = x_{1-K}` are an implied all-ones prefix and are never
//! stored. Public indices are 1-based; slices are 0-based internally.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, KernelParam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Classic,
    New,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(Variant::Classic),
            "new" => Ok(Variant::New),
            other => Err(Error::InvalidParameter(format!("unknown variant {other:?}"))),
        }
    }
}

/// Closed-form constants bounding the function's range, smoothness and gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    /// Per-link bound on `F(0) - inf F`.
    pub delta0: f64,
    /// Smoothness constant.
    pub ell1: f64,
    /// Bound on `‖∇F‖_∞`.
    pub gamma_inf: f64,
}

pub fn constants(k: usize, a: KernelParam, variant: Variant) -> LemmaConstants {
    match variant {
        Variant::Classic => LemmaConstants {
            delta0: 12.0,
            ell1: 152.0,
            gamma_inf: 23.0,
        },
        Variant::New => {
            let k = k as f64;
            let ak = a.value().powf(k);
            let s2pi = (2.0 * PI).sqrt();
            LemmaConstants {
                delta0: (2.0 * PI * E).sqrt() * ak,
                ell1: 12.0 * s2pi * E.powf(2.5) * k * k * ak / a.log(),
                gamma_inf: 6.0 * s2pi * E.powf(1.5) * k * ak / a.log().sqrt(),
            }
        }
    }
}

/// `prog^K(x)`: the largest `i >= 0` with `x_i, …, x_{i-K+1}` all nonzero,
/// counting the implied prefix as nonzero.
pub fn prog(x: &[f64], k: usize) -> usize {
    let k = k.max(1);
    let mut run = k;
    let mut best = 0;
    for (idx, &v) in x.iter().enumerate() {
        if v != 0.0 {
            run += 1;
            if run >= k {
                best = idx + 1;
            }
        } else {
            run = 0;
        }
    }
    best
}

/// A worst-case chain function on `R^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseFn {
    t: usize,
    k: usize,
    a: KernelParam,
    variant: Variant,
}

impl WorstCaseFn {
    pub fn new(t: usize, k: usize, a: f64, variant: Variant) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidParameter("chain length T must be positive".into()));
        }
        if k == 0 || k > t {
            return Err(Error::InvalidParameter(format!(
                "window K must satisfy 1 <= K <= T, got K={k}, T={t}"
            )));
        }
        let a = KernelParam::new(a)?;
        if variant == Variant::Classic && (k != 1 || a.value() != E) {
            return Err(Error::InvalidParameter(
                "classic variant requires K = 1 and a = e".into(),
            ));
        }
        Ok(Self { t, k, a, variant })
    }

    pub fn classic(t: usize) -> Result<Self> {
        Self::new(t, 1, E, Variant::Classic)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn a(&self) -> KernelParam {
        self.a
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn constants(&self) -> LemmaConstants {
        constants(self.k, self.a, self.variant)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.t {
            return Err(Error::DimensionMismatch {
                expected: self.t,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(match self.variant {
            Variant::Classic => self.eval_classic(x),
            Variant::New => self.eval_new(x),
        })
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.t];
        self.grad_into(x, &mut out)?;
        Ok(out)
    }

    /// Writes `∇F(x)` into `out` (length `T`).
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(x)?;
        self.check_len(out)?;
        out.iter_mut().for_each(|g| *g = 0.0);
        match self.variant {
            Variant::Classic => self.grad_classic(x, out),
            Variant::New => self.grad_new(x, out),
        }
        Ok(())
    }

    fn eval_classic(&self, x: &[f64]) -> f64 {
        let a = self.a;
        let mut prev = 1.0;
        let mut total = 0.0;
        for &xi in x {
            total += kernels::psi(a, -prev) * kernels::phi(-xi) - kernels::psi(a, prev) * kernels::phi(xi);
            prev = xi;
        }
        total
    }

    fn grad_classic(&self, x: &[f64], out: &mut [f64]) {
        let a = self.a;
        let t = self.t;
        for j in 0..t {
            let prev = if j == 0 { 1.0 } else { x[j - 1] };
            let xj = x[j];
            let mut g = -kernels::psi(a, -prev) * kernels::phi_d1(-xj)
                - kernels::psi(a, prev) * kernels::phi_d1(xj);
            if j + 1 < t {
                let next = x[j + 1];
                g += -kernels::psi_d1(a, -xj) * kernels::phi(-next)
                    - kernels::psi_d1(a, xj) * kernels::phi(next);
            }
            out[j] = g;
        }
    }

    fn eval_new(&self, x: &[f64]) -> f64 {
        let a = self.a;
        let k = self.k;
        let gates: Vec<f64> = x.iter().map(|&v| kernels::psi(a, v)).collect();
        let mut total = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            // window covers 0-based indices i-k .. i-1; negative ones are the prefix
            let lo = i.saturating_sub(k);
            let prod: f64 = gates[lo..i].iter().product();
            total -= prod * kernels::phi(xi);
            total += kernels::gamma_fn(xi);
        }
        total
    }

    fn grad_new(&self, x: &[f64], out: &mut [f64]) {
        let a = self.a;
        let k = self.k;
        let gates: Vec<f64> = x.iter().map(|&v| kernels::psi(a, v)).collect();
        let slopes: Vec<f64> = x.iter().map(|&v| kernels::psi_d1(a, v)).collect();
        let mut prefix = vec![1.0; k + 1];
        let mut suffix = vec![1.0; k + 1];
        for (i, &xi) in x.iter().enumerate() {
            let lo = i.saturating_sub(k);
            let window = &gates[lo..i];
            let w = window.len();
            prefix[0] = 1.0;
            for m in 0..w {
                prefix[m + 1] = prefix[m] * window[m];
            }
            suffix[w] = 1.0;
            for m in (0..w).rev() {
                suffix[m] = suffix[m + 1] * window[m];
            }
            out[i] -= prefix[w] * kernels::phi_d1(xi);
            let phi_i = kernels::phi(xi);
            for m in 0..w {
                let l = lo + m;
                if slopes[l] != 0.0 {
                    out[l] -= prefix[m] * suffix[m + 1] * slopes[l] * phi_i;
                }
            }
        }
        for (g, &v) in out.iter_mut().zip(x) {
            *g += kernels::gamma_d1(v);
        }
    }

    /// Finite-difference Hessian (central differences of the analytic gradient)
    /// stored as a `(2K+1)`-band. Only for `T <= 2000`.
    pub fn hessian_band(&self, x: &[f64]) -> Result<BandMatrix> {
        self.check_len(x)?;
        if self.t > HESSIAN_MAX_T {
            return Err(Error::Guard(format!(
                "hessian_band is limited to T <= {HESSIAN_MAX_T}, got {}",
                self.t
            )));
        }
        let t = self.t;
        let k = self.k;
        let mut band = BandMatrix::zeros(t, k);
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; t];
        let mut gm = vec![0.0; t];
        for j in 0..t {
            let orig = xp[j];
            xp[j] = orig + HESSIAN_STEP;
            self.grad_into(&xp, &mut gp)?;
            xp[j] = orig - HESSIAN_STEP;
            self.grad_into(&xp, &mut gm)?;
            xp[j] = orig;
            let lo = j.saturating_sub(k);
            let hi = (j + k).min(t - 1);
            for i in lo..=hi {
                band.set(i, j, (gp[i] - gm[i]) / (2.0 * HESSIAN_STEP));
            }
        }
        Ok(band)
    }
}

pub const HESSIAN_MAX_T: usize = 2000;
pub const HESSIAN_STEP: f64 = 1e-5;

/// Square matrix with nonzeros confined to `|i - j| <= k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            data: vec![0.0; n * (2 * k + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.k {
            return 0.0;
        }
        self.data[i * (2 * self.k + 1) + (j + self.k - i)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let w = 2 * self.k + 1;
        self.data[i * w + (j + self.k - i)] = v;
    }

    /// Largest `|i - j|` among nonzero entries.
    pub fn observed_half_bandwidth(&self) -> usize {
        let mut widest = 0;
        for i in 0..self.n {
            for j in i.saturating_sub(self.k)..(i + self.k + 1).min(self.n) {
                if self.get(i, j) != 0.0 {
                    widest = widest.max(i.abs_diff(j));
                }
            }
        }
        widest
    }

    /// Symmetric part `(H + Hᵀ)/2` as a dense matrix.
    pub fn to_dense_symmetric(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }

    fn sym_matvec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            let lo = i.saturating_sub(self.k);
            let hi = (i + self.k + 1).min(self.n);
            (lo..hi)
                .map(|j| 0.5 * (self.get(i, j) + self.get(j, i)) * v[j])
                .sum()
        })
    }

    /// Spectral norm of the symmetric part: dense eigensolve up to 200 rows,
    /// power iteration above.
    pub fn spectral_norm(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        if self.n <= 200 {
            let eig = self.to_dense_symmetric().symmetric_eigen();
            return eig.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        let mut v = DVector::from_fn(self.n, |i, _| 1.0 + (i % 7) as f64 * 0.1);
        v /= v.norm();
        let mut est = 0.0;
        for _ in 0..2000 {
            let w = self.sym_matvec(&v);
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let next = w / norm;
            let converged = (norm - est).abs() <= 1e-12 * norm;
            est = norm;
            v = next;
            if converged {
                break;
            }
        }
        est
    }
}

/// Inputs of a scaled instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceParams {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub eps: f64,
    pub n: usize,
    pub sigma2: f64,
    pub d: usize,
    pub variant: Variant,
    /// Overrides the window chosen from `n` (new variant only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Overrides `a = 1 + 1/K` (new variant only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

impl InstanceParams {
    pub fn new(l: f64, delta: f64, eps: f64, n: usize, sigma2: f64, d: usize, variant: Variant) -> Self {
        Self {
            l,
            delta,
            eps,
            n,
            sigma2,
            d,
            variant,
            k: None,
            a: None,
        }
    }

    /// Unit `L` and `ε`, with `Δ` and `σ²` picked so the built instance has
    /// chain length `t` and masking probability `p_sigma` (1 means `σ² = 0`).
    pub fn for_chain(n: usize, t: usize, p_sigma: f64, d: usize, variant: Variant) -> Result<Self> {
        if t == 0 || !(p_sigma > 0.0 && p_sigma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need T >= 1 and p_sigma in (0, 1], got T={t}, p_sigma={p_sigma}"
            )));
        }
        let (k, a) = match variant {
            Variant::Classic => (1, KernelParam::e()),
            Variant::New => {
                let k = window_for(n);
                (k, KernelParam::new(1.0 + 1.0 / k as f64)?)
            }
        };
        let c = constants(k, a, variant);
        // half a step above the boundary keeps the floor away from rounding
        let delta = 2.0 * c.delta0 * c.ell1 * (t as f64 + 0.5);
        let sigma2 = if p_sigma == 1.0 {
            0.0
        } else {
            2.0 * c.gamma_inf * c.gamma_inf / p_sigma
        };
        Ok(Self::new(1.0, delta, 1.0, n, sigma2, d, variant))
    }
}

/// Window `K = 2⌈2 log(2n)⌉` used by the lower-bound construction.
pub fn window_for(n: usize) -> usize {
    2 * (2.0 * (2.0 * n.max(1) as f64).ln()).ceil() as usize
}

/// A fully parameterized scaled problem `f(x) = (Lλ²/ℓ₁) F(x_[T]/λ)` on `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveInstance {
    pub params: InstanceParams,
    #[serde(rename = "fn")]
    pub func: WorstCaseFn,
    pub constants: LemmaConstants,
    pub lambda: f64,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub a: f64,
    pub p_sigma: f64,
    #[serde(rename = "p_K")]
    pub p_k: f64,
}

pub fn build_instance(params: InstanceParams) -> Result<ObjectiveInstance> {
    let InstanceParams {
        l,
        delta,
        eps,
        n,
        sigma2,
        d,
        variant,
        ..
    } = params;
    for (name, v) in [("L", l), ("Delta", delta), ("eps", eps)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("n and d must be positive".into()));
    }
    let (k, a) = match variant {
        Variant::Classic => (1, E),
        Variant::New => {
            let k = params.k.unwrap_or_else(|| window_for(n));
            let a = params.a.unwrap_or(1.0 + 1.0 / k as f64);
            (k, a)
        }
    };
    if k == 0 {
        return Err(Error::InvalidParameter("window K must be positive".into()));
    }
    let kp = KernelParam::new(a)?;
    let c = constants(k, kp, variant);
    let ratio = l * delta / eps;
    let t_real = (ratio / (2.0 * c.delta0 * c.ell1 * 1.0)).floor();
    if t_real < 1.0 {
        return Err(Error::TZero { ratio });
    }
    let t = t_real as usize;
    if d < t {
        return Err(Error::DimTooSmall { d, t });
    }
    let func = WorstCaseFn::new(t, k, a, variant)?;
    let lambda = (2.0 * eps).sqrt() * c.ell1 / l;
    let p_sigma = if sigma2 == 0.0 {
        1.0
    } else {
        (2.0 * eps * c.gamma_inf * c.gamma_inf / sigma2).min(1.0)
    };
    Ok(ObjectiveInstance {
        params,
        func,
        constants: c,
        lambda,
        t,
        k,
        a: kp.value(),
        p_sigma,
        p_k: (2 * k) as f64 / d as f64,
    })
}

impl ObjectiveInstance {
    pub fn d(&self) -> usize {
        self.params.d
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn l(&self) -> f64 {
        self.params.l
    }

    pub fn eps(&self) -> f64 {
        self.params.eps
    }

    pub fn sigma2(&self) -> f64 {
        self.params.sigma2
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn rescaled(&self, x: &[f64]) -> Vec<f64> {
        x[..self.t].iter().map(|v| v / self.lambda).collect()
    }

    pub fn eval_scaled(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        let scale = self.l() * self.lambda * self.lambda / self.constants.ell1;
        Ok(scale * self.func.eval(&self.rescaled(x))?)
    }

    pub fn grad_scaled(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d()];
        self.grad_scaled_into(x, &mut out)?;
        Ok(out)
    }

    /// `∇f(x)`; coordinates past `T` are exactly zero.
    pub fn grad_scaled_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(x)?;
        if out.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: out.len(),
            });
        }
        let (head, tail) = out.split_at_mut(self.t);
        self.func.grad_into(&self.rescaled(x), head)?;
        let scale = self.l() * self.lambda / self.constants.ell1;
        head.iter_mut().for_each(|g| *g *= scale);
        tail.iter_mut().for_each(|g| *g = 0.0);
        Ok(())
    }

    /// `‖∇f(x)‖²`.
    pub fn grad_norm_sq(&self, x: &[f64]) -> Result<f64> {
        let g = self.grad_scaled(x)?;
        Ok(g.iter().map(|v| v * v).sum())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    /// Parses a document produced by [`ObjectiveInstance::to_json`], rebuilding the
    /// derived quantities from the stored inputs and checking they agree.
    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            params: InstanceParams,
            #[serde(rename = "T")]
            t: usize,
            #[serde(rename = "K")]
            k: usize,
            lambda: f64,
            p_sigma: f64,
        }
        let doc: Doc = serde_json::from_str(s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let inst = build_instance(doc.params)?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
        if inst.t != doc.t || inst.k != doc.k || !close(inst.lambda, doc.lambda) || !close(inst.p_sigma, doc.p_sigma) {
            return Err(Error::InvalidParameter(
                "instance document is inconsistent with its parameters".into(),
            ));
        }
        Ok(inst)
    }
}
