//! Verification suites behind the `verify-*` subcommands.

use std::f64::consts::{E, PI};

use lbopt_core::compressors::{perm_k, rand_k, stream_view, SparseMessage};
use lbopt_core::kernels::{self, KernelParam, GAMMA_D2_MAX, PHI_D2_BOUND, PHI_SUP};
use lbopt_core::oracle;
use lbopt_core::rng::{purpose, substream, Stream};
use lbopt_core::stats::{chi_square_pvalue, within_binomial_band, Moments};
use lbopt_core::worstcase::{build_instance, prog, ObjectiveInstance, WorstCaseFn};
use rand::Rng;

use crate::config::{CompressorConfig, FunctionCase, FunctionConfig, OracleConfig};
use crate::report::{Report, Tally};
use crate::CliError;

/// Tolerance for closed-form kernel bounds.
pub const BOUND_TOL: f64 = 1e-9;
/// Kernel derivatives against central differences, relative to `max(|f'|, 1)`.
pub const KERNEL_FD_TOL: f64 = 1e-6;
/// One-sided difference step and tolerance at the kernel break points.
pub const BREAK_STEP: f64 = 1e-5;
pub const BREAK_TOL: f64 = 1e-3;
/// Function gradient against central differences, relative to `max(|g|, 1)`.
pub const GRAD_FD_TOL: f64 = 1e-5;
/// Relative step for gradient finite differences.
pub const GRAD_FD_STEP: f64 = 1e-6;
/// Monte-Carlo bands, in standard errors.
pub const SIGMAS: f64 = 4.0;
/// Smallest acceptable chi-square p-value.
pub const MIN_PVALUE: f64 = 1e-3;

/// The multiplier applied by `--inject-grad-bug` to one gradient coordinate.
pub const PLANTED_GRAD_FACTOR: f64 = 1.001;

// Fourth-order five-point stencil; Ψ near 1/2 is too curved for the
// three-point rule at steps where round-off is still negligible.
fn central(f: impl Fn(f64) -> f64, x: f64, step: f64) -> f64 {
    (8.0 * (f(x + step) - f(x - step)) - (f(x + 2.0 * step) - f(x - 2.0 * step))) / (12.0 * step)
}

fn rel_err(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(1.0)
}

fn grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| -10.0 + 20.0 * i as f64 / (n - 1) as f64).collect()
}

// Central differences at distance below this from a break point straddle it
// and are replaced by the one-sided checks.
fn near_break(x: f64, step: f64, breaks: &[f64]) -> bool {
    breaks.iter().any(|b| (x - b).abs() < 4.0 * step)
}

fn kernel_fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Scalar kernel bounds and derivative consistency on a uniform grid over `[-10, 10]`.
pub fn kernel_suite(cfg: &FunctionConfig) -> Result<Report, CliError> {
    let mut report = Report::new("kernels", cfg.seed);
    let xs = grid(cfg.kernel_grid);

    let mut closed = Tally::new("kernel-closed-forms");
    let known = [
        ("psi_e(1)", kernels::psi(KernelParam::e(), 1.0), 1.0),
        ("psi_e'(1)", kernels::psi_d1(KernelParam::e(), 1.0), 4.0),
        ("psi(1/2)", kernels::psi(KernelParam::new(1.5)?, 0.5), 0.0),
        ("phi(0)", kernels::phi(0.0), (2.0 * PI * E).sqrt() / 2.0),
        ("phi'(0)", kernels::phi_d1(0.0), E.sqrt()),
        ("phi(40)", kernels::phi(40.0), PHI_SUP),
        ("gamma(-1)", kernels::gamma_fn(-1.0), 1.0),
        ("gamma'(-1)", kernels::gamma_d1(-1.0), -2.0),
        ("gamma(0.7)", kernels::gamma_fn(0.7), 0.0),
    ];
    for (what, got, want) in known {
        let err = (got - want).abs();
        closed.record(err <= BOUND_TOL * want.abs().max(1.0), err, || format!("{what} = {got}, expected {want}"));
    }
    report.push(closed.finish());

    let mut range = Tally::new("psi-range");
    let mut monotone = Tally::new("psi-nondecreasing");
    let mut floor = Tally::new("psi-at-least-one-beyond-1");
    let mut d1 = Tally::new("psi-d1-bound");
    let mut d2 = Tally::new("psi-d2-bound");
    let mut fd1 = Tally::new("psi-d1-finite-difference");
    let mut fd2 = Tally::new("psi-d2-finite-difference");
    let mut brk = Tally::new("psi-break-point-smoothness");
    for &av in &cfg.kernel_a {
        let a = KernelParam::new(av)?;
        let psi = |x| kernels::psi(a, x);
        let psi_d1 = |x| kernels::psi_d1(a, x);
        let (b1, b2) = (a.psi_d1_bound(), a.psi_d2_bound());
        let mut prev = f64::NEG_INFINITY;
        for &x in &xs {
            let v = psi(x);
            range.record(v >= 0.0 && v < av, v / av, || format!("a={av}, x={x}: psi={v}"));
            monotone.record(v >= prev, (prev - v).max(0.0), || format!("a={av}, x={x}: psi decreased"));
            prev = v;
            if x >= 1.0 {
                floor.record(v >= 1.0 - BOUND_TOL, 1.0 - v, || format!("a={av}, x={x}: psi={v}"));
            }
            let g1 = psi_d1(x);
            d1.record(g1 >= 0.0 && g1 <= b1 * (1.0 + BOUND_TOL), g1 / b1, || format!("a={av}, x={x}: psi'={g1} > {b1}"));
            let g2 = kernels::psi_d2(a, x);
            d2.record(g2.abs() <= b2 * (1.0 + BOUND_TOL), g2.abs() / b2, || format!("a={av}, x={x}: |psi''|={} > {b2}", g2.abs()));
            let s = kernel_fd_step(x);
            if !near_break(x, s, &[0.5]) {
                let e1 = rel_err(central(psi, x, s), g1);
                fd1.record(e1 <= KERNEL_FD_TOL, e1, || format!("a={av}, x={x}: rel err {e1:.2e}"));
                let e2 = rel_err(central(psi_d1, x, s), g2);
                fd2.record(e2 <= KERNEL_FD_TOL, e2, || format!("a={av}, x={x}: rel err {e2:.2e}"));
            }
        }
        one_sided(&mut brk, &psi, &psi_d1, 0.5, &format!("psi a={av}"));
        let psi_d2 = |x| kernels::psi_d2(a, x);
        one_sided(&mut brk, &psi_d1, &psi_d2, 0.5, &format!("psi' a={av}"));
    }
    for t in [range, monotone, floor, d1, d2, fd1, fd2, brk] {
        report.push(t.finish());
    }

    let mut range = Tally::new("phi-range");
    let mut inside = Tally::new("phi-d1-above-one-inside");
    let mut d2 = Tally::new("phi-d2-bound");
    let mut fd1 = Tally::new("phi-d1-finite-difference");
    let mut fd2 = Tally::new("phi-d2-finite-difference");
    let mut grange = Tally::new("gamma-nonnegative");
    let mut gd1 = Tally::new("gamma-d1-range");
    let mut gd2 = Tally::new("gamma-d2-range");
    let mut gfd1 = Tally::new("gamma-d1-finite-difference");
    let mut gfd2 = Tally::new("gamma-d2-finite-difference");
    let mut gbrk = Tally::new("gamma-break-point-smoothness");
    for &x in &xs {
        let v = kernels::phi(x);
        range.record(v >= 0.0 && v <= PHI_SUP * (1.0 + BOUND_TOL), v / PHI_SUP, || format!("x={x}: phi={v}"));
        let p1 = kernels::phi_d1(x);
        if x.abs() <= 0.99 {
            inside.record(p1 >= 1.0 + 1e-3, -p1, || format!("x={x}: phi'={p1}"));
        }
        let p2 = kernels::phi_d2(x);
        d2.record(p2.abs() <= PHI_D2_BOUND, p2.abs() / PHI_D2_BOUND, || format!("x={x}: |phi''|={}", p2.abs()));
        let s = kernel_fd_step(x);
        let e1 = rel_err(central(phi_tail_form, x, s), p1);
        fd1.record(e1 <= KERNEL_FD_TOL, e1, || format!("x={x}: rel err {e1:.2e}"));
        let e2 = rel_err(central(kernels::phi_d1, x, s), p2);
        fd2.record(e2 <= KERNEL_FD_TOL, e2, || format!("x={x}: rel err {e2:.2e}"));

        let g = kernels::gamma_fn(x);
        grange.record(g >= 0.0, -g, || format!("x={x}: gamma={g}"));
        let g1 = kernels::gamma_d1(x);
        gd1.record(g1 > -E && g1 <= 0.0, g1.abs() / E, || format!("x={x}: gamma'={g1}"));
        let g2 = kernels::gamma_d2(x);
        gd2.record((0.0..=GAMMA_D2_MAX + 1e-12).contains(&g2), g2 / GAMMA_D2_MAX, || format!("x={x}: gamma''={g2}"));
        if !near_break(x, s, &[0.0]) {
            let e1 = rel_err(central(kernels::gamma_fn, x, s), g1);
            gfd1.record(e1 <= KERNEL_FD_TOL, e1, || format!("x={x}: rel err {e1:.2e}"));
            let e2 = rel_err(central(kernels::gamma_d1, x, s), g2);
            gfd2.record(e2 <= KERNEL_FD_TOL, e2, || format!("x={x}: rel err {e2:.2e}"));
        }
    }
    one_sided(&mut gbrk, &kernels::gamma_fn, &kernels::gamma_d1, 0.0, "gamma");
    one_sided(&mut gbrk, &kernels::gamma_d1, &kernels::gamma_d2, 0.0, "gamma'");
    for t in [range, inside, d2, fd1, fd2, grange, gd1, gd2, gfd1, gfd2, gbrk] {
        report.push(t.finish());
    }
    Ok(report)
}

/// `Φ` written through its upper tail, so that differences for large positive
/// `x` do not cancel against the constant `√(2πe)`.
fn phi_tail_form(x: f64) -> f64 {
    if x > 0.0 {
        PHI_SUP - kernels::phi(-x)
    } else {
        kernels::phi(x)
    }
}

/// One-sided differences of `f` on both sides of `x0` against `df(x0)`.
fn one_sided(t: &mut Tally, f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, x0: f64, what: &str) {
    let h = BREAK_STEP;
    let want = df(x0);
    let right = (f(x0 + h) - f(x0)) / h;
    let left = (f(x0) - f(x0 - h)) / h;
    for (side, got) in [("right", right), ("left", left)] {
        let err = (got - want).abs();
        t.record(err <= BREAK_TOL, err, || format!("{what} at {x0} ({side}): {got} vs {want}"));
    }
}

/// Draws one coordinate from a mixture that stresses the kernel branches.
fn mixed_value(rng: &mut Stream) -> f64 {
    match rng.random_range(0..6) {
        0 => rng.random_range(0.9..1.3),
        1 => rng.random_range(0.45..0.65),
        2 => rng.random_range(-40.0..-2.0),
        3 => rng.random_range(1.0..10.0),
        4 => rng.random_range(-1.0..0.0),
        _ => rng.random_range(-3.0..3.0),
    }
}

/// A point whose first `m` coordinates are nonzero, followed by a mostly
/// zero tail with a few stray nonzeros.
fn sparse_point(rng: &mut Stream, t: usize) -> Vec<f64> {
    let m = rng.random_range(0..=t);
    let mut x = vec![0.0; t];
    for v in &mut x[..m] {
        *v = mixed_value(rng);
    }
    for v in x.iter_mut().skip(m + 1) {
        if rng.random_bool(0.2) {
            *v = mixed_value(rng);
        }
    }
    x
}

fn case_label(c: &FunctionCase) -> String {
    format!("{:?} T={} K={} a={:.4}", c.variant, c.t, c.k, c.a).to_lowercase()
}

/// Gradient, bounds, Hessian structure and progress checks for the chain functions.
pub fn function_suite(cfg: &FunctionConfig, inject_grad_bug: bool) -> Result<Report, CliError> {
    let mut report = Report::new("function", cfg.seed);
    let mut fd = Tally::new("gradient-finite-difference");
    let mut large = Tally::new("large-gradient-before-discovery");
    let mut inf = Tally::new("gradient-sup-norm-bound");
    let mut lower = Tally::new("value-lower-bound");
    let mut progress = Tally::new("progress-support-containment");
    let mut offband = Tally::new("hessian-off-band-exact-zero");
    let mut width = Tally::new("hessian-bandwidth-attained");
    let mut norm = Tally::new("hessian-spectral-norm-bound");
    for (ci, case) in cfg.cases.iter().enumerate() {
        let f = WorstCaseFn::new(case.t, case.k, case.a, case.variant)?;
        let c = f.constants();
        let label = case_label(case);
        let mut rng = substream(cfg.seed, &[purpose::SUITE, 1, ci as u64]);
        for _ in 0..cfg.points {
            let x = sparse_point(&mut rng, case.t);
            let mut g = f.grad(&x)?;
            if inject_grad_bug {
                if let Some(j) = g.iter().position(|&v| v != 0.0) {
                    g[j] *= PLANTED_GRAD_FACTOR;
                }
            }
            let value = f.eval(&x)?;

            let mut xs = x.clone();
            let mut worst = 0.0f64;
            let mut worst_j = 0;
            for j in 0..case.t {
                let s = GRAD_FD_STEP * x[j].abs().max(1.0);
                xs[j] = x[j] + s;
                let fp = f.eval(&xs)?;
                xs[j] = x[j] - s;
                let fm = f.eval(&xs)?;
                let step = (x[j] + s) - (x[j] - s);
                xs[j] = x[j];
                let e = rel_err((fp - fm) / step, g[j]);
                if e > worst {
                    worst = e;
                    worst_j = j;
                }
            }
            fd.record(worst <= GRAD_FD_TOL, worst, || format!("{label}: coordinate {} rel err {worst:.2e}", worst_j + 1));

            let reach = prog(&x, case.k);
            let norm2 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if reach < case.t {
                large.record(norm2 > 1.0, -norm2, || format!("{label}: prog^K={reach}, |grad|={norm2}"));
            }
            let sup = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            inf.record(sup <= c.gamma_inf, sup / c.gamma_inf, || format!("{label}: |grad|_inf={sup} > {}", c.gamma_inf));
            let floor = -c.delta0 * case.t as f64;
            lower.record(value >= floor, value / floor, || format!("{label}: F={value} < {floor}"));
            let bound = (reach + 1).max(prog(&x, 1));
            let got = prog(&g, 1);
            progress.record(got <= bound, got as f64 - bound as f64, || {
                format!("{label}: prog1(grad)={got} > max(prog^K+1, prog1)={bound}")
            });

            // columns of a finite-difference Hessian from the analytic gradient
            let h = f.hessian_band(&x)?;
            let mut xs = x.clone();
            let mut stray = 0usize;
            for j in 0..case.t {
                let s = 1e-5 * x[j].abs().max(1.0);
                xs[j] = x[j] + s;
                let gp = f.grad(&xs)?;
                xs[j] = x[j] - s;
                let gm = f.grad(&xs)?;
                xs[j] = x[j];
                stray += (0..case.t)
                    .filter(|&i| i.abs_diff(j) > case.k && gp[i] - gm[i] != 0.0)
                    .count();
            }
            offband.record(stray == 0, stray as f64, || format!("{label}: {stray} nonzero entries outside the band"));
            let sn = h.spectral_norm();
            norm.record(sn <= c.ell1, sn / c.ell1, || format!("{label}: |H|={sn} > {}", c.ell1));
        }
        let ones = vec![1.0; case.t];
        let hb = f.hessian_band(&ones)?.observed_half_bandwidth();
        let want = case.k.min(case.t - 1);
        width.record(hb == want, hb as f64, || format!("{label}: half bandwidth {hb}, expected {want}"));
    }
    for t in [fd, large, inf, lower, progress, offband, width, norm] {
        report.push(t.finish());
    }
    Ok(report)
}

/// A random point on the instance's chain: a scaled prefix plus stray coordinates.
fn oracle_point(rng: &mut Stream, inst: &ObjectiveInstance) -> Vec<f64> {
    let mut x = vec![0.0; inst.d()];
    let chain = sparse_point(rng, inst.t);
    for (v, c) in x.iter_mut().zip(chain) {
        *v = c * inst.lambda;
    }
    x
}

/// Variance bound, unbiasedness and the masking law of the stochastic oracle.
pub fn oracle_suite(cfg: &OracleConfig) -> Result<Report, CliError> {
    let mut report = Report::new("oracle", cfg.seed);
    let mut variance = Tally::new("variance-at-most-sigma2");
    let mut unbiased = Tally::new("oracle-unbiased");
    let mut fired = Tally::new("bernoulli-rate");
    let mut exact = Tally::new("masked-values-exact");
    let mut masked = Tally::new("masked-coordinate-zero-rate");
    for (ii, params) in cfg.instances.iter().enumerate() {
        let inst = build_instance(*params)?;
        let label = format!("instance {} (T={}, d={}, p_sigma={:.3})", ii + 1, inst.t, inst.d(), inst.p_sigma);
        let sigma2 = inst.sigma2();
        let mut rng = substream(cfg.seed, &[purpose::SUITE, 2, ii as u64]);
        for _ in 0..cfg.points {
            let x = oracle_point(&mut rng, &inst);
            let v = oracle::exact_variance(&inst, &x)?;
            let ok = if sigma2 == 0.0 { v == 0.0 } else { v <= sigma2 };
            variance.record(ok, if sigma2 > 0.0 { v / sigma2 } else { v }, || format!("{label}: variance {v} > {sigma2}"));
        }

        // a chain point a third of the way along, with the next coordinate hidden
        let mut x = vec![0.0; inst.d()];
        for v in &mut x[..inst.t.div_ceil(3)] {
            *v = 1.1 * inst.lambda;
        }
        let known = prog(&x, 1);
        let g = inst.grad_scaled(&x)?;
        let factor = 1.0 / inst.p_sigma;
        let mut moments = vec![Moments::default(); inst.d()];
        let mut zeros = vec![0u64; inst.d()];
        let mut ones = 0u64;
        let mut mismatches = 0u64;
        let mut out = vec![0.0; inst.d()];
        let mut stream = substream(cfg.seed, &[purpose::SUITE, 3, ii as u64]);
        for _ in 0..cfg.draws {
            let xi = oracle::draw_into(&inst, &x, &mut stream, &mut out)?;
            ones += xi as u64;
            for (j, (&r, m)) in out.iter().zip(&mut moments).enumerate() {
                m.push(r);
                let want = if j < known {
                    g[j]
                } else if xi {
                    g[j] * factor
                } else {
                    0.0
                };
                mismatches += (r.to_bits() != want.to_bits() && !(r == 0.0 && want == 0.0)) as u64;
                zeros[j] += (r == 0.0) as u64;
            }
        }
        exact.record(mismatches == 0, mismatches as f64, || format!("{label}: {mismatches} coordinates off the masking law"));
        let p = inst.p_sigma;
        if p < 1.0 {
            fired.record(within_binomial_band(ones, cfg.draws, p, SIGMAS), ones as f64 / cfg.draws as f64, || {
                format!("{label}: {ones} of {} draws fired", cfg.draws)
            });
        }
        for j in 0..inst.d() {
            let m = &moments[j];
            let err = (m.mean() - g[j]).abs();
            let tol = SIGMAS * m.std_err() + 1e-12 * g[j].abs();
            unbiased.record(err <= tol, err / tol.max(f64::MIN_POSITIVE), || {
                format!("{label}: coordinate {} mean {} vs {}", j + 1, m.mean(), g[j])
            });
            if j >= known && g[j] != 0.0 && p < 1.0 {
                masked.record(within_binomial_band(zeros[j], cfg.draws, 1.0 - p, SIGMAS), zeros[j] as f64 / cfg.draws as f64, || {
                    format!("{label}: coordinate {} zero {} times", j + 1, zeros[j])
                });
            }
        }
    }
    fired.note("binomial band on the shared masking coin");
    for t in [variance, unbiased, fired, exact, masked] {
        report.push(t.finish());
    }
    Ok(report)
}

/// Unbiasedness, variance and sampling-law checks for the sparsifiers.
pub fn compressor_suite(cfg: &CompressorConfig) -> Result<Report, CliError> {
    let mut report = Report::new("compressors", cfg.seed);
    let d = cfg.d;
    let mut unbiased = Tally::new("randk-unbiased");
    let mut variance = Tally::new("randk-variance-factor");
    for &k in &cfg.ks {
        for v in 0..cfg.vectors {
            let mut rng = substream(cfg.seed, &[purpose::SUITE, 4, k as u64, v as u64]);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let norm2: f64 = x.iter().map(|a| a * a).sum();
            let mut coords = vec![Moments::default(); d];
            let mut err2 = Moments::default();
            let mut c = vec![0.0; d];
            for _ in 0..cfg.draws {
                c.iter_mut().for_each(|a| *a = 0.0);
                rand_k(&x, k, &mut rng)?.accumulate(&mut c, 1.0);
                let mut e = 0.0;
                for j in 0..d {
                    coords[j].push(c[j]);
                    e += (c[j] - x[j]).powi(2);
                }
                err2.push(e);
            }
            for j in 0..d {
                let m = &coords[j];
                let err = (m.mean() - x[j]).abs();
                let tol = SIGMAS * m.std_err() + 1e-12 * x[j].abs().max(1.0);
                unbiased.record(err <= tol, err / tol, || format!("K={k} vector {v} coordinate {}: mean {} vs {}", j + 1, m.mean(), x[j]));
            }
            let bound = (d as f64 / k as f64 - 1.0) * norm2;
            let slack = SIGMAS * err2.std_err() + 1e-9 * norm2;
            variance.record(err2.mean() <= bound + slack, err2.mean() / bound.max(f64::MIN_POSITIVE), || {
                format!("K={k} vector {v}: E|C(x)-x|^2 = {} > {bound}", err2.mean())
            });
        }
    }
    report.push(unbiased.finish());
    report.push(variance.finish());

    let mut uniform = Tally::new("randk-subset-uniformity");
    for &(dd, k) in &cfg.subsets {
        if dd > 6 || k == 0 || k > dd {
            return Err(CliError::Config(format!("subset test needs 1 <= K <= d <= 6, got d={dd}, K={k}")));
        }
        let ones = vec![1.0; dd];
        let mut counts = std::collections::BTreeMap::<u32, u64>::new();
        let mut rng = substream(cfg.seed, &[purpose::SUITE, 5, dd as u64, k as u64]);
        for _ in 0..cfg.draws {
            let mask = rand_k(&ones, k, &mut rng)?.entries.iter().fold(0u32, |m, e| m | 1 << (e.0 - 1));
            *counts.entry(mask).or_default() += 1;
        }
        let subsets = binomial(dd, k);
        let mut observed: Vec<u64> = counts.values().copied().collect();
        observed.resize(subsets, 0);
        let expected = vec![cfg.draws as f64 / subsets as f64; subsets];
        let p = if subsets > 1 { chi_square_pvalue(&observed, &expected) } else { 1.0 };
        let ok = counts.len() == subsets && p > MIN_PVALUE;
        uniform.record(ok, -p, || format!("d={dd} K={k}: {} subsets seen, p-value {p:.2e}", counts.len()));
    }
    report.push(uniform.finish());

    let mut partition = Tally::new("permk-partition");
    let mut average = Tally::new("permk-average-exact");
    let mut perm_unbiased = Tally::new("permk-unbiased");
    for &n in &cfg.perm_n {
        let mut rng = substream(cfg.seed, &[purpose::SUITE, 6, n as u64]);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut first = vec![Moments::default(); d];
        let trials = (cfg.draws / 10).max(100);
        for t in 0..trials {
            let mut hits = vec![0u32; d];
            let mut avg = vec![0.0; d];
            for part in 0..n {
                let m = perm_k(&x, part, n, &mut substream(cfg.seed, &[purpose::SUITE, 7, n as u64, t]))?;
                m.accumulate(&mut avg, 1.0 / n as f64);
                for e in &m.entries {
                    hits[e.0 as usize - 1] += 1;
                }
                if part == 0 {
                    for (mm, v) in first.iter_mut().zip(m.decode(d)) {
                        mm.push(v);
                    }
                }
            }
            partition.record(hits.iter().all(|&h| h == 1), 0.0, || format!("n={n}: blocks overlap or miss coordinates"));
            let err = avg.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            average.record(err <= 1e-12, err, || format!("n={n}: average off by {err:.2e}"));
        }
        // with a remainder the blocks differ in size, so only the average is unbiased
        if !d.is_multiple_of(n) {
            perm_unbiased.note(format!("per-block check skipped for n={n}, d={d}"));
            continue;
        }
        for (j, m) in first.iter().enumerate() {
            let err = (m.mean() - x[j]).abs();
            let tol = SIGMAS * m.std_err() + 1e-12;
            perm_unbiased.record(err <= tol, err / tol, || format!("n={n} coordinate {}: {} vs {}", j + 1, m.mean(), x[j]));
        }
    }
    for t in [partition, average, perm_unbiased] {
        report.push(t.finish());
    }

    let mut stream = Tally::new("stream-view-offsets");
    let one = SparseMessage::new(vec![(3, 1.0), (1, 2.0), (2, 0.5)], 1.0)?;
    let got = stream_view(std::slice::from_ref(&one), 2.0);
    stream.record(got == [(3, 2.0), (1, 4.0), (2, 6.0)], 0.0, || format!("{got:?}"));
    stream.record(stream_view(&[SparseMessage::empty()], 2.0).is_empty(), 0.0, || "empty message produced items".into());
    let two = SparseMessage::new(vec![(5, 1.0)], 1.0)?;
    let got = stream_view(&[SparseMessage::new(vec![(4, 1.0), (2, 1.0)], 1.0)?, two], 1.5);
    stream.record(got == [(4, 1.5), (2, 3.0), (5, 4.5)], 0.0, || format!("{got:?}"));
    report.push(stream.finish());
    Ok(report)
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}
