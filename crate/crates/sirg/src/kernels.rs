//! Connection functions.
//!
//! A kernel maps `(distance, weight, weight)` to an edge probability in
//! `[0, 1]`, symmetric in the weights. Every kernel exists in two forms: the
//! finite-`n` form `eval_finite`, which takes distances in blown-up
//! coordinates (between points of `I_n`), and the limiting form `eval_limit`
//! used by the infinite ensemble. Kernels additionally declare a tail bound
//! `E[kappa(t, W, W')] <= A t^{-alpha}` that the experiments validate
//! empirically rather than symbolically.
//!
//! Conventions fixed here:
//! * threshold-type kernels use the closed inequality `t <= cutoff`;
//! * at `t = 0` every kernel returns its supremum over `t`;
//! * weights are passed through unchanged (they may be nonpositive for
//!   exotic inputs), and results are clamped into `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::weights::WeightLaw;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("GIRG kernel needs the realized total weight")]
    MissingTotalWeight,
    #[error("kernel needs the mean limiting weight")]
    MissingMeanWeight,
    #[error("weight law has no finite mean")]
    InfiniteMeanWeight,
    #[error("no tail bound declared for this kernel")]
    NoTailBound,
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
}

/// Declared tail bound `E[kappa(t, W, W')] <= prefactor * t^{-alpha}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound<F> {
    pub alpha: F,
    pub prefactor: F,
}

/// The connection-function families shipped with the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelForm<F> {
    /// Degenerate constant kernel (useful fixtures: `p = 0` empty,
    /// `p = 1` complete).
    Constant { p: F },
    /// Hard geometric threshold: connect iff `t <= radius`.
    Threshold { radius: F },
    /// Product kernel `1 ^ f(t) g(x, y)` with a power profile
    /// `f(t) = fs * t^{-fe}` and coupler `g(x, y) = gs * (x y)^{ge}`.
    ProductPsirg {
        profile_scale: F,
        profile_exponent: F,
        coupler_scale: F,
        coupler_exponent: F,
    },
    /// Geometric inhomogeneous random graph; `alpha_g` may be infinity for
    /// the indicator branch.
    Girg { alpha_g: F, dimension: u32 },
    /// Limiting threshold hyperbolic kernel `1{t <= nu x y / pi}`; the finite
    /// form routes through the transformed hyperbolic rule.
    ThrgLimit { nu: F },
    /// Limiting parametrized hyperbolic kernel
    /// `(1 + (pi t / (nu x y))^{1/T_H})^{-1}`.
    PhrgLimit { nu: F, t_h: F },
    /// Continuum scale-free percolation `1 - exp(-lambda x y / t^alpha)`.
    Csfp { lambda: F, alpha: F },
    /// Weight-dependent random connection model with the shipped family
    /// `rho(u) = 1 ^ u^{-eta}`, `h(s, t, v) = v^d (s t)^{gamma}`; here vertex
    /// marks `s` in `[0, 1]` play the role of weights (inverse strength).
    Wdrcm { eta: F, gamma: F, dimension: u32 },
}

/// A kernel form plus its declared tail bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<F> {
    form: KernelForm<F>,
    tail: Option<TailBound<F>>,
}

impl<F: Real> KernelSpec<F> {
    pub fn constant(p: F) -> Result<Self, KernelError> {
        if !(p >= F::zero() && p <= F::one()) {
            return Err(KernelError::InvalidParameter(format!(
                "constant kernel needs p in [0,1], got {p}"
            )));
        }
        let tail = if p == F::zero() {
            Some(TailBound {
                alpha: F::infinity(),
                prefactor: F::one(),
            })
        } else {
            None
        };
        Ok(KernelSpec {
            form: KernelForm::Constant { p },
            tail,
        })
    }

    pub fn threshold(radius: F) -> Result<Self, KernelError> {
        if !(radius >= F::zero()) {
            return Err(KernelError::InvalidParameter(format!(
                "threshold radius must be nonnegative, got {radius}"
            )));
        }
        Ok(KernelSpec {
            form: KernelForm::Threshold { radius },
            tail: Some(TailBound {
                alpha: F::infinity(),
                prefactor: F::one(),
            }),
        })
    }

    /// `declared_alpha_p` and `declared_beta_p` are the product-kernel
    /// exponents; the stored tail exponent is `min(alpha_p, alpha_p beta_p)`.
    pub fn product_psirg(
        profile_scale: F,
        profile_exponent: F,
        coupler_scale: F,
        coupler_exponent: F,
        declared_alpha_p: F,
        declared_beta_p: F,
    ) -> Result<Self, KernelError> {
        if !(profile_scale >= F::zero() && coupler_scale >= F::zero()) {
            return Err(KernelError::InvalidParameter(
                "PSIRG scales must be nonnegative".into(),
            ));
        }
        if !(declared_alpha_p > F::one()) || !(declared_beta_p > F::zero()) {
            return Err(KernelError::InvalidParameter(format!(
                "PSIRG needs alpha_p > 1 and beta_p > 0, got ({declared_alpha_p}, {declared_beta_p})"
            )));
        }
        Ok(KernelSpec {
            form: KernelForm::ProductPsirg {
                profile_scale,
                profile_exponent,
                coupler_scale,
                coupler_exponent,
            },
            tail: Some(TailBound {
                alpha: declared_alpha_p.min(declared_alpha_p * declared_beta_p),
                prefactor: F::one(),
            }),
        })
    }

    pub fn girg(alpha_g: F, dimension: u32) -> Result<Self, KernelError> {
        if !(alpha_g > F::one()) {
            return Err(KernelError::InvalidParameter(format!(
                "GIRG needs alpha_G > 1 (possibly infinite), got {alpha_g}"
            )));
        }
        if dimension == 0 {
            return Err(KernelError::InvalidParameter("dimension must be >= 1".into()));
        }
        let tail = if alpha_g.is_finite() {
            Some(TailBound {
                alpha: F::from_f64(dimension as f64) * alpha_g,
                prefactor: F::one(),
            })
        } else {
            None // depends on the weight tail; declare via with_tail
        };
        Ok(KernelSpec {
            form: KernelForm::Girg { alpha_g, dimension },
            tail,
        })
    }

    pub fn thrg_limit(nu: F) -> Result<Self, KernelError> {
        if !(nu > F::zero()) {
            return Err(KernelError::InvalidParameter(format!(
                "THRG needs nu > 0, got {nu}"
            )));
        }
        Ok(KernelSpec {
            form: KernelForm::ThrgLimit { nu },
            tail: None, // tail exponent 2 alpha_H comes from the weight law
        })
    }

    pub fn phrg_limit(nu: F, t_h: F) -> Result<Self, KernelError> {
        if !(nu > F::zero()) || !(t_h > F::zero() && t_h < F::one()) {
            return Err(KernelError::InvalidParameter(format!(
                "PHRG needs nu > 0 and 0 < T_H < 1, got ({nu}, {t_h})"
            )));
        }
        Ok(KernelSpec {
            form: KernelForm::PhrgLimit { nu, t_h },
            tail: Some(TailBound {
                alpha: F::one() / t_h,
                prefactor: F::one(),
            }),
        })
    }

    pub fn csfp(lambda: F, alpha: F) -> Result<Self, KernelError> {
        if !(lambda > F::zero()) || !(alpha > F::zero()) {
            return Err(KernelError::InvalidParameter(format!(
                "CSFP needs lambda > 0 and alpha > 0, got ({lambda}, {alpha})"
            )));
        }
        Ok(KernelSpec {
            form: KernelForm::Csfp { lambda, alpha },
            tail: Some(TailBound {
                alpha,
                prefactor: F::one(),
            }),
        })
    }

    pub fn wdrcm(eta: F, gamma: F, dimension: u32) -> Result<Self, KernelError> {
        if !(eta > F::zero()) || !(gamma >= F::zero()) || dimension == 0 {
            return Err(KernelError::InvalidParameter(format!(
                "WDRCM needs eta > 0, gamma >= 0, d >= 1, got ({eta}, {gamma}, {dimension})"
            )));
        }
        Ok(KernelSpec {
            form: KernelForm::Wdrcm {
                eta,
                gamma,
                dimension,
            },
            tail: Some(TailBound {
                alpha: F::from_f64(dimension as f64) * eta,
                prefactor: F::one(),
            }),
        })
    }

    /// Override the declared tail bound; the prefactor must be at least 1.
    pub fn with_tail(mut self, alpha: F, prefactor: F) -> Result<Self, KernelError> {
        if !(alpha > F::zero()) || !(prefactor >= F::one()) {
            return Err(KernelError::InvalidParameter(format!(
                "tail bound needs alpha > 0 and prefactor >= 1, got ({alpha}, {prefactor})"
            )));
        }
        self.tail = Some(TailBound { alpha, prefactor });
        Ok(self)
    }

    pub fn form(&self) -> &KernelForm<F> {
        &self.form
    }

    pub fn tail(&self) -> Option<TailBound<F>> {
        self.tail
    }

    pub fn name(&self) -> String {
        match &self.form {
            KernelForm::Constant { p } => format!("constant({p})"),
            KernelForm::Threshold { radius } => format!("threshold({radius})"),
            KernelForm::ProductPsirg {
                profile_scale,
                profile_exponent,
                coupler_scale,
                coupler_exponent,
            } => format!(
                "psirg(f={profile_scale}*t^-{profile_exponent},g={coupler_scale}*(xy)^{coupler_exponent})"
            ),
            KernelForm::Girg { alpha_g, dimension } => format!("girg({alpha_g},d={dimension})"),
            KernelForm::ThrgLimit { nu } => format!("thrg({nu})"),
            KernelForm::PhrgLimit { nu, t_h } => format!("phrg({nu},{t_h})"),
            KernelForm::Csfp { lambda, alpha } => format!("csfp({lambda},{alpha})"),
            KernelForm::Wdrcm { eta, gamma, dimension } => {
                format!("wdrcm({eta},{gamma},d={dimension})")
            }
        }
    }

    /// Finite-`n` edge probability at blown-up distance `t`.
    ///
    /// The GIRG form divides by the realized `total_weight`; the hyperbolic
    /// forms evaluate the transformed native rule with `R_n = 2 log(n/nu)`.
    pub fn eval_finite(
        &self,
        n: usize,
        t: F,
        w1: F,
        w2: F,
        total_weight: Option<F>,
    ) -> Result<F, KernelError> {
        if t < F::zero() {
            return Err(KernelError::NegativeDistance(t.as_f64()));
        }
        let v = match &self.form {
            KernelForm::Girg { alpha_g, dimension } => {
                let total = total_weight.ok_or(KernelError::MissingTotalWeight)?;
                if !(total > F::zero()) {
                    return Err(KernelError::InvalidParameter(format!(
                        "total weight must be positive, got {total}"
                    )));
                }
                let inv_scale = F::from_f64(n as f64).powf(-F::one() / F::from_f64(*dimension as f64));
                girg_prob(*alpha_g, *dimension, w1 * w2 / total, inv_scale * t)
            }
            KernelForm::ThrgLimit { nu } => {
                let r_n = crate::weights::hrg_disk_radius(n, *nu);
                let angle = F::from_f64(2.0) * F::PI() * t / F::from_f64(n as f64);
                thrg_native_prob(angle, radius_from_weight(w1, r_n), radius_from_weight(w2, r_n), r_n)
            }
            KernelForm::PhrgLimit { nu, t_h } => {
                let r_n = crate::weights::hrg_disk_radius(n, *nu);
                let angle = F::from_f64(2.0) * F::PI() * t / F::from_f64(n as f64);
                phrg_native_prob(
                    angle,
                    radius_from_weight(w1, r_n),
                    radius_from_weight(w2, r_n),
                    r_n,
                    *t_h,
                )
            }
            // The remaining kernels are stationary in blown-up coordinates.
            _ => return self.eval_limit(t, w1, w2, None),
        };
        Ok(clamp01(v))
    }

    /// Limiting edge probability at distance `t`; `mean_weight` is only
    /// consulted by the GIRG form.
    pub fn eval_limit(
        &self,
        t: F,
        w1: F,
        w2: F,
        mean_weight: Option<F>,
    ) -> Result<F, KernelError> {
        if t < F::zero() {
            return Err(KernelError::NegativeDistance(t.as_f64()));
        }
        let v = match &self.form {
            KernelForm::Constant { p } => *p,
            KernelForm::Threshold { radius } => indicator(t <= *radius),
            KernelForm::ProductPsirg {
                profile_scale,
                profile_exponent,
                coupler_scale,
                coupler_exponent,
            } => {
                let g = *coupler_scale * pos_pow(w1 * w2, *coupler_exponent);
                if t == F::zero() {
                    if *profile_exponent > F::zero() {
                        indicator(g > F::zero())
                    } else {
                        (*profile_scale * g).min(F::one())
                    }
                } else {
                    (*profile_scale * t.powf(-*profile_exponent) * g).min(F::one())
                }
            }
            KernelForm::Girg { alpha_g, dimension } => {
                let mean = mean_weight.ok_or(KernelError::MissingMeanWeight)?;
                if !(mean > F::zero()) {
                    return Err(KernelError::InvalidParameter(format!(
                        "mean weight must be positive, got {mean}"
                    )));
                }
                girg_prob(*alpha_g, *dimension, w1 * w2 / mean, t)
            }
            KernelForm::ThrgLimit { nu } => indicator(t <= *nu * w1 * w2 / F::PI()),
            KernelForm::PhrgLimit { nu, t_h } => {
                let xy = w1 * w2;
                if xy <= F::zero() {
                    F::zero()
                } else if t == F::zero() {
                    F::one()
                } else {
                    let ratio = F::PI() * t / (*nu * xy);
                    F::one() / (F::one() + ratio.powf(F::one() / *t_h))
                }
            }
            KernelForm::Csfp { lambda, alpha } => {
                let xy = w1 * w2;
                if t == F::zero() {
                    indicator(*lambda * xy > F::zero())
                } else {
                    F::one() - (-*lambda * xy / t.powf(*alpha)).exp()
                }
            }
            KernelForm::Wdrcm { eta, gamma, dimension } => {
                let u = t.powi(*dimension as i32) * pos_pow(w1 * w2, *gamma);
                if u <= F::zero() {
                    F::one()
                } else {
                    u.powf(-*eta).min(F::one())
                }
            }
        };
        Ok(clamp01(v))
    }

    /// Monte Carlo estimate of `E[kappa(t, W1, W2)]` over i.i.d. weight
    /// pairs, with its standard error.
    pub fn tail_expectation<R: Rng + ?Sized>(
        &self,
        t: F,
        law: &WeightLaw<F>,
        samples: usize,
        rng: &mut R,
    ) -> Result<(F, F), KernelError> {
        if samples < 2 {
            return Err(KernelError::TooFewSamples(2));
        }
        let mean_weight = self.limit_mean_weight(law)?;
        let mut sum = F::zero();
        let mut sum_sq = F::zero();
        for _ in 0..samples {
            let w1 = law.sample_one(rng);
            let w2 = law.sample_one(rng);
            let v = self.eval_limit(t, w1, w2, mean_weight)?;
            sum += v;
            sum_sq += v * v;
        }
        let n = F::from_f64(samples as f64);
        let mean = sum / n;
        let var = ((sum_sq - sum * sum / n) / (n - F::one())).max(F::zero());
        Ok((mean, (var / n).sqrt()))
    }

    /// Check the declared tail bound on a grid of distances: each point
    /// passes iff `estimate - 3 stderr <= prefactor * t^{-(alpha - epsilon)}`.
    pub fn verify_tail_bound<R: Rng + ?Sized>(
        &self,
        law: &WeightLaw<F>,
        t_grid: &[F],
        epsilon: F,
        samples: usize,
        rng: &mut R,
    ) -> Result<TailBoundReport<F>, KernelError> {
        let tail = self.tail.ok_or(KernelError::NoTailBound)?;
        let mut rows = Vec::with_capacity(t_grid.len());
        let mut all = true;
        for &t in t_grid {
            let (estimate, stderr) = self.tail_expectation(t, law, samples, rng)?;
            let exponent = if tail.alpha.is_finite() {
                tail.alpha - epsilon
            } else {
                tail.alpha
            };
            let bound = if exponent.is_infinite() {
                if t > F::one() {
                    F::zero()
                } else {
                    F::infinity()
                }
            } else {
                tail.prefactor * t.powf(-exponent)
            };
            let pass = estimate - F::from_f64(3.0) * stderr <= bound;
            all &= pass;
            rows.push(TailBoundRow {
                t,
                estimate,
                stderr,
                bound,
                pass,
            });
        }
        Ok(TailBoundReport { rows, pass: all })
    }

    /// Mean limiting weight when the GIRG form needs it, `None` otherwise.
    pub fn limit_mean_weight(&self, law: &WeightLaw<F>) -> Result<Option<F>, KernelError> {
        match self.form {
            KernelForm::Girg { .. } => law
                .mean()
                .map(Some)
                .ok_or(KernelError::InfiniteMeanWeight),
            _ => Ok(None),
        }
    }

    /// Extremal weight for dominating the kernel over a weight range:
    /// every shipped kernel is monotone in each weight, increasing for all
    /// forms except WDRCM (whose mark `s` scales inversely).
    pub fn dominating_weight(&self, min_w: F, max_w: F) -> F {
        match self.form {
            KernelForm::Wdrcm { .. } => min_w,
            _ => max_w,
        }
    }
}

/// Hyperbolic-plane distance between polar points `(r1, theta1)` and
/// `(r2, theta2)`, by the hyperbolic law of cosines.
pub fn hyperbolic_distance<F: Real>(r1: F, theta1: F, r2: F, theta2: F) -> F {
    let cosh_d = r1.cosh() * r2.cosh() - r1.sinh() * r2.sinh() * (theta1 - theta2).cos();
    cosh_d.max(F::one()).acosh()
}

/// THRG native rule: connect iff `d_H < R_n` (strict, matching the model).
pub fn thrg_native_prob<F: Real>(delta_theta: F, r1: F, r2: F, r_n: F) -> F {
    indicator(hyperbolic_distance(r1, F::zero(), r2, delta_theta) < r_n)
}

/// PHRG native rule: logistic in `(d_H - R_n) / (2 T_H)`.
pub fn phrg_native_prob<F: Real>(delta_theta: F, r1: F, r2: F, r_n: F, t_h: F) -> F {
    let d = hyperbolic_distance(r1, F::zero(), r2, delta_theta);
    F::one() / (F::one() + ((d - r_n) / (F::from_f64(2.0) * t_h)).exp())
}

/// Invert the weight transform: `g_n(w) = R_n - 2 log w`.
fn radius_from_weight<F: Real>(w: F, r_n: F) -> F {
    if w <= F::zero() {
        F::infinity()
    } else {
        r_n - F::from_f64(2.0) * w.ln()
    }
}

fn girg_prob<F: Real>(alpha_g: F, dimension: u32, ratio: F, t: F) -> F {
    let ratio = ratio.max(F::zero());
    let d = F::from_f64(dimension as f64);
    if alpha_g.is_infinite() {
        indicator(ratio.powf(F::one() / d) > t)
    } else if t == F::zero() {
        indicator(ratio > F::zero())
    } else {
        (ratio.powf(alpha_g) * t.powf(-d * alpha_g)).min(F::one())
    }
}

fn pos_pow<F: Real>(base: F, exponent: F) -> F {
    if exponent == F::zero() {
        F::one()
    } else {
        base.max(F::zero()).powf(exponent)
    }
}

fn indicator<F: Real>(cond: bool) -> F {
    if cond {
        F::one()
    } else {
        F::zero()
    }
}

fn clamp01<F: Real>(v: F) -> F {
    if v.is_nan() {
        F::zero()
    } else {
        v.max(F::zero()).min(F::one())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TailBoundRow<F> {
    pub t: F,
    pub estimate: F,
    pub stderr: F,
    pub bound: F,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailBoundReport<F> {
    pub rows: Vec<TailBoundRow<F>>,
    pub pass: bool,
}
