//! Weight distributions and the hyperbolic radial/angular transform.
//!
//! A `WeightLaw` is the limiting weight distribution of a model; sampled
//! weight vectors cache their total because the finite GIRG kernel normalizes
//! by the realized sum.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("invalid parameter for {law}: {reason}")]
    InvalidParameter { law: &'static str, reason: String },
    #[error("empirical sequence has {have} entries, {need} requested")]
    EmpiricalTooShort { have: usize, need: usize },
    #[error("law has no reference CDF")]
    NoReferenceCdf,
    #[error("point count must be at least 1")]
    EmptySample,
    #[error("input out of range: {0}")]
    OutOfRange(String),
}

/// Weight distribution selector.
///
/// `PowerLawTail` is realized as a Pareto with tail exponent `beta_g - 1` on
/// `[1, inf)`, the simplest law whose tail satisfies the GIRG bracket with
/// unit constants; the bracket constants are accepted for bound checks but do
/// not change sampling. `HrgRadial` is the weight induced by the hyperbolic
/// radial law through `w = exp((R_n - r)/2)`; `r_n` is supplied by the caller
/// so the law is explicit about its `n`-dependence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum WeightLaw<F> {
    Constant(F),
    Uniform01,
    Pareto { exponent: F },
    PowerLawTail { beta_g: F, c_g: F, big_c_g: F },
    Empirical(Arc<Vec<F>>),
    HrgRadial { alpha_h: F, r_n: F },
}

impl<F: Real> WeightLaw<F> {
    pub fn pareto(exponent: F) -> Result<Self, WeightError> {
        if !(exponent > F::zero()) {
            return Err(WeightError::InvalidParameter {
                law: "Pareto",
                reason: format!("tail exponent must be positive, got {exponent}"),
            });
        }
        Ok(WeightLaw::Pareto { exponent })
    }

    pub fn power_law_tail(beta_g: F) -> Result<Self, WeightError> {
        if !(beta_g > F::from_f64(2.0)) {
            return Err(WeightError::InvalidParameter {
                law: "PowerLawTail",
                reason: format!("beta_G must exceed 2, got {beta_g}"),
            });
        }
        Ok(WeightLaw::PowerLawTail {
            beta_g,
            c_g: F::one(),
            big_c_g: F::one(),
        })
    }

    pub fn hrg_radial(alpha_h: F, r_n: F) -> Result<Self, WeightError> {
        if !(alpha_h > F::from_f64(0.5)) || !(r_n > F::zero()) {
            return Err(WeightError::InvalidParameter {
                law: "HrgRadial",
                reason: format!("need alpha_H > 1/2 and R_n > 0, got ({alpha_h}, {r_n})"),
            });
        }
        Ok(WeightLaw::HrgRadial { alpha_h, r_n })
    }

    pub fn empirical(values: Vec<F>) -> Result<Self, WeightError> {
        if values.is_empty() {
            return Err(WeightError::InvalidParameter {
                law: "Empirical",
                reason: "sequence must be nonempty".into(),
            });
        }
        Ok(WeightLaw::Empirical(Arc::new(values)))
    }

    /// One i.i.d. draw.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        match self {
            WeightLaw::Constant(c) => *c,
            WeightLaw::Uniform01 => F::unit_uniform(rng),
            WeightLaw::Pareto { exponent } => pareto_draw(*exponent, rng),
            WeightLaw::PowerLawTail { beta_g, .. } => pareto_draw(*beta_g - F::one(), rng),
            WeightLaw::Empirical(_) => {
                panic!("Empirical law has no i.i.d. sampler; use sample_weights")
            }
            WeightLaw::HrgRadial { alpha_h, r_n } => {
                let u = F::unit_uniform(rng);
                let r = hrg_radial_inverse_cdf(u, *alpha_h, *r_n);
                ((*r_n - r) / F::from_f64(2.0)).exp()
            }
        }
    }

    /// Reference CDF, defined for every variant except `Empirical`.
    pub fn cdf(&self, x: F) -> Result<F, WeightError> {
        Ok(match self {
            WeightLaw::Constant(c) => {
                if x >= *c {
                    F::one()
                } else {
                    F::zero()
                }
            }
            WeightLaw::Uniform01 => x.max(F::zero()).min(F::one()),
            WeightLaw::Pareto { exponent } => pareto_cdf(x, *exponent),
            WeightLaw::PowerLawTail { beta_g, .. } => pareto_cdf(x, *beta_g - F::one()),
            WeightLaw::Empirical(_) => return Err(WeightError::NoReferenceCdf),
            WeightLaw::HrgRadial { alpha_h, r_n } => {
                // P(W <= x) = P(r >= R_n - 2 log x).
                if x < F::one() {
                    F::zero()
                } else {
                    let r = *r_n - F::from_f64(2.0) * x.ln();
                    F::one() - hrg_radial_cdf(r, *alpha_h, *r_n)
                }
            }
        })
    }

    /// Atom locations of the CDF (excluded from the empirical-CDF statistic:
    /// convergence is only required at continuity points).
    pub fn atoms(&self) -> Vec<F> {
        match self {
            WeightLaw::Constant(c) => vec![*c],
            _ => Vec::new(),
        }
    }

    /// Mean of the law, `None` when infinite or unavailable.
    pub fn mean(&self) -> Option<F> {
        match self {
            WeightLaw::Constant(c) => Some(*c),
            WeightLaw::Uniform01 => Some(F::from_f64(0.5)),
            WeightLaw::Pareto { exponent } => pareto_mean(*exponent),
            WeightLaw::PowerLawTail { beta_g, .. } => pareto_mean(*beta_g - F::one()),
            WeightLaw::Empirical(vals) => {
                let n = F::from_f64(vals.len() as f64);
                Some(vals.iter().fold(F::zero(), |a, &b| a + b) / n)
            }
            WeightLaw::HrgRadial { alpha_h, r_n } => {
                // E[W] = int_0^{R_n} exp((R_n - r)/2) dF(r), by quadrature.
                let f = |r: F| {
                    let dens = hrg_radial_density(r, *alpha_h, *r_n);
                    ((*r_n - r) / F::from_f64(2.0)).exp() * dens
                };
                Some(crate::numeric::adaptive_simpson(
                    &f,
                    F::zero(),
                    *r_n,
                    F::from_f64(1e-10),
                    48,
                ))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            WeightLaw::Constant(c) => format!("constant({c})"),
            WeightLaw::Uniform01 => "uniform01".into(),
            WeightLaw::Pareto { exponent } => format!("pareto({exponent})"),
            WeightLaw::PowerLawTail { beta_g, .. } => format!("powerlaw({beta_g})"),
            WeightLaw::Empirical(v) => format!("empirical({})", v.len()),
            WeightLaw::HrgRadial { alpha_h, r_n } => format!("hrg-radial({alpha_h},{r_n})"),
        }
    }
}

fn pareto_draw<F: Real, R: Rng + ?Sized>(exponent: F, rng: &mut R) -> F {
    // Inverse CDF of P(W > w) = w^{-exponent} on [1, inf).
    let u = F::unit_uniform(rng);
    (F::one() - u).powf(-F::one() / exponent)
}

fn pareto_cdf<F: Real>(x: F, exponent: F) -> F {
    if x <= F::one() {
        F::zero()
    } else {
        F::one() - x.powf(-exponent)
    }
}

fn pareto_mean<F: Real>(exponent: F) -> Option<F> {
    if exponent > F::one() {
        Some(exponent / (exponent - F::one()))
    } else {
        None
    }
}

/// Realized per-vertex weights with the cached total `sum_i W_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<F> {
    values: Vec<F>,
    total: F,
}

impl<F: Real> WeightVector<F> {
    pub fn new(values: Vec<F>) -> Self {
        let total = values.iter().fold(F::zero(), |a, &b| a + b);
        WeightVector { values, total }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn get(&self, i: usize) -> F {
        self.values[i]
    }

    pub fn total(&self) -> F {
        self.total
    }

    pub fn max(&self) -> F {
        self.values
            .iter()
            .fold(F::neg_infinity(), |a, &b| a.max(b))
    }

    pub fn min(&self) -> F {
        self.values.iter().fold(F::infinity(), |a, &b| a.min(b))
    }
}

/// Draw `n` weights: i.i.d. for distributional variants, the first `n`
/// entries for `Empirical`.
pub fn sample_weights<F: Real, R: Rng + ?Sized>(
    law: &WeightLaw<F>,
    n: usize,
    rng: &mut R,
) -> Result<WeightVector<F>, WeightError> {
    if n == 0 {
        return Err(WeightError::EmptySample);
    }
    let values = match law {
        WeightLaw::Empirical(seq) => {
            if seq.len() < n {
                return Err(WeightError::EmpiricalTooShort {
                    have: seq.len(),
                    need: n,
                });
            }
            seq[..n].to_vec()
        }
        _ => (0..n).map(|_| law.sample_one(rng)).collect(),
    };
    Ok(WeightVector::new(values))
}

/// Kolmogorov-Smirnov-style sup distance between the empirical CDF of
/// `values` and the law's CDF, taken over the sample points and skipping the
/// law's atoms.
pub fn empirical_cdf_distance<F: Real>(
    values: &WeightVector<F>,
    law: &WeightLaw<F>,
) -> Result<F, WeightError> {
    let mut sorted: Vec<F> = values.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("weights must be comparable"));
    let atoms = law.atoms();
    let n = F::from_f64(sorted.len() as f64);
    let mut sup = F::zero();
    for (i, &x) in sorted.iter().enumerate() {
        if atoms.iter().any(|&a| a == x) {
            continue;
        }
        let f = law.cdf(x)?;
        let hi = F::from_f64((i + 1) as f64) / n;
        let lo = F::from_f64(i as f64) / n;
        sup = sup.max((hi - f).abs()).max((lo - f).abs());
    }
    Ok(sup)
}

/// Inverse of the hyperbolic radial CDF
/// `F(r) = (cosh(a r) - 1) / (cosh(a R_n) - 1)` on `[0, R_n]`.
pub fn hrg_radial_inverse_cdf<F: Real>(u: F, alpha_h: F, r_n: F) -> F {
    debug_assert!(u >= F::zero() && u <= F::one());
    let denom = (alpha_h * r_n).cosh() - F::one();
    (F::one() + u * denom).acosh() / alpha_h
}

/// Forward hyperbolic radial CDF.
pub fn hrg_radial_cdf<F: Real>(r: F, alpha_h: F, r_n: F) -> F {
    if r < F::zero() {
        F::zero()
    } else if r > r_n {
        F::one()
    } else {
        ((alpha_h * r).cosh() - F::one()) / ((alpha_h * r_n).cosh() - F::one())
    }
}

fn hrg_radial_density<F: Real>(r: F, alpha_h: F, r_n: F) -> F {
    if r < F::zero() || r > r_n {
        F::zero()
    } else {
        alpha_h * (alpha_h * r).sinh() / ((alpha_h * r_n).cosh() - F::one())
    }
}

/// Map a hyperbolic polar coordinate to SIRG coordinates:
/// `x = theta / (2 pi)` in `[-1/2, 1/2]` and `w = exp((R_n - r)/2)`.
pub fn hrg_transform<F: Real>(r: F, theta: F, r_n: F) -> Result<(F, F), WeightError> {
    let pi = F::PI();
    if theta < -pi || theta > pi {
        return Err(WeightError::OutOfRange(format!(
            "theta = {theta} outside [-pi, pi]"
        )));
    }
    if r < F::zero() || r > r_n {
        return Err(WeightError::OutOfRange(format!(
            "r = {r} outside [0, R_n = {r_n}]"
        )));
    }
    let x = theta / (F::from_f64(2.0) * pi);
    let w = ((r_n - r) / F::from_f64(2.0)).exp();
    Ok((x, w))
}

/// `R_n = 2 log(n / nu)`, the hyperbolic disk radius of the `n`-vertex model.
pub fn hrg_disk_radius<F: Real>(n: usize, nu: F) -> F {
    F::from_f64(2.0) * (F::from_f64(n as f64) / nu).ln()
}

/// Load an empirical weight sequence from a one-value-per-line text file.
pub fn load_empirical_weights(path: &std::path::Path) -> Result<WeightLaw<f64>, std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        values.push(v);
    }
    WeightLaw::empirical(values)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};
    use approx::assert_relative_eq;

    #[test]
    fn constant_weights() {
        let mut rng = stream(1, StreamKind::Weights);
        let w = sample_weights(&WeightLaw::Constant(1.0), 5, &mut rng).unwrap();
        assert_eq!(w.values(), &[1.0; 5]);
        assert_eq!(w.total(), 5.0);
    }

    #[test]
    fn pareto_exceedance_matches_tail() {
        // P(W > 2) = 2^{-2} = 0.25 for beta = 2; binomial 3 sigma band.
        let n = 100_000;
        let mut rng = stream(2, StreamKind::Weights);
        let law = WeightLaw::pareto(2.0).unwrap();
        let w = sample_weights(&law, n, &mut rng).unwrap();
        let exceed = w.values().iter().filter(|&&x| x > 2.0).count() as f64 / n as f64;
        let tol = 3.0 * (0.25 * 0.75 / n as f64).sqrt();
        assert!((exceed - 0.25).abs() < tol, "exceedance {exceed}");
    }

    #[test]
    fn uniform_mean() {
        let n = 100_000;
        let mut rng = stream(3, StreamKind::Weights);
        let w = sample_weights(&WeightLaw::<f64>::Uniform01, n, &mut rng).unwrap();
        let mean = w.total() / n as f64;
        let tol = 3.0 / (12.0 * n as f64).sqrt();
        assert!((mean - 0.5).abs() < tol);
    }

    #[test]
    fn empirical_law_is_prefix_and_errors_when_short() {
        let law = WeightLaw::empirical(vec![3.0, 1.0, 4.0]).unwrap();
        let mut rng = stream(4, StreamKind::Weights);
        let w = sample_weights(&law, 2, &mut rng).unwrap();
        assert_eq!(w.values(), &[3.0, 1.0]);
        assert!(matches!(
            sample_weights(&law, 4, &mut rng),
            Err(WeightError::EmpiricalTooShort { have: 3, need: 4 })
        ));
        assert!(matches!(
            empirical_cdf_distance(&w, &law),
            Err(WeightError::NoReferenceCdf)
        ));
    }

    #[test]
    fn ks_band_for_own_samples() {
        // Asymptotic 99% KS band 1.63 / sqrt(n).
        let n = 100_000;
        let mut rng = stream(5, StreamKind::Weights);
        for law in [
            WeightLaw::Uniform01,
            WeightLaw::pareto(2.0).unwrap(),
            WeightLaw::power_law_tail(2.5).unwrap(),
            WeightLaw::hrg_radial(0.9, hrg_disk_radius(10_000, 1.0)).unwrap(),
        ] {
            let w = sample_weights(&law, n, &mut rng).unwrap();
            let d = empirical_cdf_distance(&w, &law).unwrap();
            assert!(d <= 1.63 / (n as f64).sqrt(), "{}: d = {d}", law.name());
        }
    }

    #[test]
    fn ks_on_quantile_grid_is_tiny() {
        let n = 1_000usize;
        let law = WeightLaw::pareto(2.0).unwrap();
        // Quantiles at (i - 1/2)/n: F^{-1}(u) = (1-u)^{-1/2}.
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                (1.0 - u).powf(-0.5)
            })
            .collect();
        let w = WeightVector::new(values);
        let d = empirical_cdf_distance(&w, &law).unwrap();
        assert!(d <= 1.0 / n as f64 + 1e-12, "d = {d}");
    }

    #[test]
    fn ks_for_constant_law_respects_atom_convention() {
        let law = WeightLaw::Constant(2.5);
        let w = WeightVector::new(vec![2.5; 100]);
        let d = empirical_cdf_distance(&w, &law).unwrap();
        assert!(d <= 0.01, "d = {d}");
    }

    #[test]
    fn radial_inverse_cdf_boundaries_and_roundtrip() {
        let (a, rn) = (1.0f64, 10.0f64);
        assert_relative_eq!(hrg_radial_inverse_cdf(0.0, a, rn), 0.0);
        assert_relative_eq!(hrg_radial_inverse_cdf(1.0, a, rn), rn, max_relative = 1e-12);
        let r = hrg_radial_inverse_cdf(0.5, a, rn);
        assert_relative_eq!(r, (1.0 + 0.5 * (10.0f64.cosh() - 1.0)).acosh(), max_relative = 1e-12);
        assert_relative_eq!(hrg_radial_cdf(r, a, rn), 0.5, max_relative = 1e-12);
        // Identity on a u-grid to 1e-10 relative tolerance.
        for k in 0..=1000 {
            let u = k as f64 / 1000.0;
            let back = hrg_radial_cdf(hrg_radial_inverse_cdf(u, 0.8, 18.0), 0.8, 18.0);
            assert!((back - u).abs() <= 1e-10 * u.max(1e-3), "u {u} back {back}");
        }
    }

    #[test]
    fn transform_boundaries() {
        let rn = hrg_disk_radius(100usize, 1.0f64);
        assert_relative_eq!(rn, 2.0 * 100.0f64.ln(), max_relative = 1e-15);
        let (x, w) = hrg_transform(0.0, std::f64::consts::PI, rn).unwrap();
        assert_relative_eq!(x, 0.5);
        assert_relative_eq!(w, 100.0, max_relative = 1e-12);
        let (x, w) = hrg_transform(rn, -std::f64::consts::PI, rn).unwrap();
        assert_relative_eq!(x, -0.5);
        assert_relative_eq!(w, 1.0);
        assert!(hrg_transform(-0.1, 0.0, rn).is_err());
        assert!(hrg_transform(0.0, 4.0, rn).is_err());
    }

    #[test]
    fn hrg_weight_tail_has_exponent_two_alpha() {
        // Tail P(W > z) should behave like z^{-2 alpha_H} over a decade.
        let alpha_h = 0.9;
        let n = 200_000;
        let rn = hrg_disk_radius(100_000usize, 1.0f64);
        let law = WeightLaw::hrg_radial(alpha_h, rn).unwrap();
        let mut rng = stream(9, StreamKind::Weights);
        let w = sample_weights(&law, n, &mut rng).unwrap();
        let mut ratios = Vec::new();
        for &z in &[2.0f64, 3.0, 5.0, 10.0, 20.0] {
            let p = w.values().iter().filter(|&&x| x > z).count() as f64 / n as f64;
            ratios.push(p * z.powf(2.0 * alpha_h));
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo < 4.0, "tail not bracketed: {ratios:?}");
    }

    #[test]
    fn totals_are_recomputable() {
        let mut rng = stream(10, StreamKind::Weights);
        let w = sample_weights(&WeightLaw::pareto(1.5).unwrap(), 1000, &mut rng).unwrap();
        let sum: f64 = w.values().iter().sum();
        assert_eq!(sum, w.total());
    }
}
