//! Small numeric utilities: adaptive quadrature and probability mass
//! recurrences shared by the statistics oracles.

use crate::scalar::Real;

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
///
/// `tol` is an absolute tolerance for the whole interval; discontinuous
/// integrands (threshold kernels) are handled by bisection down to
/// `max_depth`.
pub fn adaptive_simpson<F: Real>(f: &impl Fn(F) -> F, a: F, b: F, tol: F, max_depth: u32) -> F {
    if a == b {
        return F::zero();
    }
    let fa = f(a);
    let fb = f(b);
    let m = mid(a, b);
    let fm = f(m);
    simpson_rec(f, a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, max_depth)
}

fn mid<F: Real>(a: F, b: F) -> F {
    (a + b) / F::from_f64(2.0)
}

fn simpson<F: Real>(a: F, b: F, fa: F, fm: F, fb: F) -> F {
    (b - a) / F::from_f64(6.0) * (fa + F::from_f64(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Real>(
    f: &impl Fn(F) -> F,
    a: F,
    b: F,
    fa: F,
    fm: F,
    fb: F,
    whole: F,
    tol: F,
    depth: u32,
) -> F {
    let m = mid(a, b);
    let lm = mid(a, m);
    let rm = mid(m, b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= F::from_f64(15.0) * tol {
        left + right + delta / F::from_f64(15.0)
    } else {
        let half_tol = tol / F::from_f64(2.0);
        simpson_rec(f, a, m, fa, flm, fm, left, half_tol, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, half_tol, depth - 1)
    }
}

/// Poisson pmf table `P(X = k)` for `k = 0..=k_max`, by the stable upward
/// recurrence from `e^{-mean}`.
pub fn poisson_pmf_table(mean: f64, k_max: usize) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(k_max + 1);
    if mean == 0.0 {
        pmf.push(1.0);
        pmf.resize(k_max + 1, 0.0);
        return pmf;
    }
    // For large means start the recurrence in log space to dodge underflow.
    let mut log_p = -mean;
    let mut logs = Vec::with_capacity(k_max + 1);
    logs.push(log_p);
    for k in 1..=k_max {
        log_p += mean.ln() - (k as f64).ln();
        logs.push(log_p);
    }
    for l in logs {
        pmf.push(l.exp());
    }
    pmf
}

/// Binomial pmf table `P(Bin(n, p) = k)` for `k = 0..=k_max`.
pub fn binomial_pmf_table(n: u64, p: f64, k_max: usize) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&p));
    let mut pmf = vec![0.0; k_max + 1];
    if p == 0.0 {
        pmf[0] = 1.0;
        return pmf;
    }
    if p == 1.0 {
        if (n as usize) <= k_max {
            pmf[n as usize] = 1.0;
        }
        return pmf;
    }
    let mut log_p = n as f64 * (1.0 - p).ln();
    pmf[0] = log_p.exp();
    let ratio = (p / (1.0 - p)).ln();
    for k in 1..=k_max.min(n as usize) {
        log_p += ((n - k as u64 + 1) as f64 / k as f64).ln() + ratio;
        pmf[k] = log_p.exp();
    }
    pmf
}

/// Mean and standard error of a sample.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
