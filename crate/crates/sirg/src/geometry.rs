//! Boxes, balls, metrics, and point sampling.
//!
//! Finite ensembles live on the centered box `I_n = [-n^{1/d}/2, n^{1/d}/2]^d`
//! so the point density is one per unit volume; the limiting ensemble lives on
//! a Euclidean ball around the origin, with Poisson-many uniform points.

use rand::distr::Uniform;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box side must be positive, got {0}")]
    NonPositiveSide(f64),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("point count must be at least 1")]
    EmptySample,
    #[error("Poisson intensity must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("ball radius must be nonnegative, got {0}")]
    NegativeRadius(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Axis-aligned centered box `[-side/2, side/2]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec<F> {
    dimension: u32,
    side: F,
}

impl<F: Real> BoxSpec<F> {
    pub fn new(dimension: u32, side: F) -> Result<Self, GeometryError> {
        if dimension == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        if !(side > F::zero()) {
            return Err(GeometryError::NonPositiveSide(side.as_f64()));
        }
        Ok(BoxSpec { dimension, side })
    }

    /// The blown-up box `I_n` with side `n^{1/d}`, holding `n` points at unit
    /// density.
    pub fn blown_up(n: usize, dimension: u32) -> Result<Self, GeometryError> {
        if n == 0 {
            return Err(GeometryError::EmptySample);
        }
        let side = F::from_f64((n as f64).powf(1.0 / dimension as f64));
        BoxSpec::new(dimension, side)
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn side(&self) -> F {
        self.side
    }

    pub fn half_side(&self) -> F {
        self.side / F::from_f64(2.0)
    }

    pub fn contains(&self, point: &[F]) -> bool {
        let h = self.half_side();
        point.len() == self.dimension as usize && point.iter().all(|&c| c.abs() <= h)
    }
}

/// Where a point cloud was sampled: a box or a centered ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain<F> {
    Box(BoxSpec<F>),
    Ball { radius: F, dimension: u32 },
}

impl<F: Real> Domain<F> {
    pub fn dimension(&self) -> u32 {
        match self {
            Domain::Box(b) => b.dimension(),
            Domain::Ball { dimension, .. } => *dimension,
        }
    }
}

/// `n` points in `d` dimensions, stored flat (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud<F> {
    dimension: u32,
    coords: Vec<F>,
    domain: Domain<F>,
}

impl<F: Real> PointCloud<F> {
    pub fn new(dimension: u32, coords: Vec<F>, domain: Domain<F>) -> Self {
        assert_eq!(coords.len() % dimension as usize, 0);
        PointCloud {
            dimension,
            coords,
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dimension as usize
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn domain(&self) -> &Domain<F> {
        &self.domain
    }

    pub fn point(&self, i: usize) -> &[F] {
        let d = self.dimension as usize;
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn coords(&self) -> &[F] {
        &self.coords
    }
}

/// Distance convention: plain Euclidean, or Euclidean on the torus obtained
/// by gluing opposite faces of a box with the given side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metric<F> {
    Euclidean,
    Torus { side: F },
}

impl<F: Real> Metric<F> {
    pub fn distance(&self, p: &[F], q: &[F]) -> Result<F, GeometryError> {
        if p.len() != q.len() {
            return Err(GeometryError::DimensionMismatch(p.len(), q.len()));
        }
        Ok(match self {
            Metric::Euclidean => euclidean_distance(p, q),
            Metric::Torus { side } => torus_distance(p, q, *side),
        })
    }
}

pub fn euclidean_distance<F: Real>(p: &[F], q: &[F]) -> F {
    let mut acc = F::zero();
    for (&a, &b) in p.iter().zip(q) {
        let d = a - b;
        acc += d * d;
    }
    acc.sqrt()
}

/// L2 distance after reducing each coordinate difference modulo `side` into
/// `[-side/2, side/2]`.
pub fn torus_distance<F: Real>(p: &[F], q: &[F], side: F) -> F {
    let half = side / F::from_f64(2.0);
    let mut acc = F::zero();
    for (&a, &b) in p.iter().zip(q) {
        let mut d = (a - b).abs() % side;
        if d > half {
            d = side - d;
        }
        acc += d * d;
    }
    acc.sqrt()
}

/// Volume of the `d`-dimensional Euclidean ball of radius `r`:
/// `pi^{d/2} r^d / Gamma(d/2 + 1)`.
///
/// Computed by the volume recurrence `v_d = 2 pi v_{d-2} / d` so no gamma
/// function is needed.
pub fn ball_volume<F: Real>(dimension: u32, radius: F) -> F {
    assert!(radius >= F::zero(), "radius must be nonnegative");
    let unit = unit_ball_volume_f64(dimension);
    F::from_f64(unit) * radius.powi(dimension as i32)
}

fn unit_ball_volume_f64(dimension: u32) -> f64 {
    let mut even = 1.0; // v_0
    let mut odd = 2.0; // v_1
    if dimension == 0 {
        return even;
    }
    if dimension == 1 {
        return odd;
    }
    for d in 2..=dimension {
        let v = 2.0 * std::f64::consts::PI / d as f64 * if d % 2 == 0 { even } else { odd };
        if d % 2 == 0 {
            even = v;
        } else {
            odd = v;
        }
        if d == dimension {
            return v;
        }
    }
    unreachable!()
}

/// `n` i.i.d. uniform points in the box; deterministic given the RNG state.
pub fn sample_uniform_box<F: Real, R: Rng + ?Sized>(
    n: usize,
    bx: &BoxSpec<F>,
    rng: &mut R,
) -> Result<PointCloud<F>, GeometryError> {
    if n == 0 {
        return Err(GeometryError::EmptySample);
    }
    let h = bx.half_side();
    let dist = Uniform::new_inclusive(-h, h).expect("valid uniform bounds");
    let d = bx.dimension() as usize;
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        coords.push(dist.sample(rng));
    }
    Ok(PointCloud::new(bx.dimension(), coords, Domain::Box(*bx)))
}

/// Poisson(rate * ball volume) many i.i.d. uniform points in the centered
/// ball of the given radius.
///
/// Points are generated as a normalized Gaussian direction scaled by
/// `radius * U^{1/d}`, which is exact in any dimension.
pub fn sample_poisson_ball<F: Real, R: Rng + ?Sized>(
    rate: f64,
    radius: F,
    dimension: u32,
    rng: &mut R,
) -> Result<PointCloud<F>, GeometryError> {
    if dimension == 0 {
        return Err(GeometryError::ZeroDimension);
    }
    if !(rate > 0.0) {
        return Err(GeometryError::NonPositiveRate(rate));
    }
    if radius < F::zero() {
        return Err(GeometryError::NegativeRadius(radius.as_f64()));
    }
    let mean = rate * ball_volume(dimension, radius).as_f64();
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive Poisson mean").sample(rng) as usize
    } else {
        0
    };
    let coords = sample_in_ball(count, radius, dimension, rng);
    Ok(PointCloud::new(
        dimension,
        coords,
        Domain::Ball { radius, dimension },
    ))
}

/// Exactly `count` i.i.d. uniform points in the centered ball.
pub fn sample_in_ball<F: Real, R: Rng + ?Sized>(
    count: usize,
    radius: F,
    dimension: u32,
    rng: &mut R,
) -> Vec<F> {
    let d = dimension as usize;
    let mut coords = Vec::with_capacity(count * d);
    let inv_d = F::one() / F::from_f64(d as f64);
    for _ in 0..count {
        let mut dir = vec![F::zero(); d];
        let mut norm2 = F::zero();
        loop {
            for c in dir.iter_mut() {
                *c = F::standard_normal(rng);
                norm2 += *c * *c;
            }
            if norm2 > F::zero() {
                break;
            }
            norm2 = F::zero();
        }
        let u = F::unit_uniform(rng);
        let scale = radius * u.powf(inv_d) / norm2.sqrt();
        for c in dir {
            coords.push(c * scale);
        }
    }
    coords
}
