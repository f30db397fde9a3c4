//! Graph statistics and their limiting oracles: degree histograms against
//! the mixed-Poisson law, wedge/triangle clustering measures, typical
//! distances, and distribution comparison.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::generator::{sample_limit_ball, GeneratorError, SpatialGraph};
use crate::geometry::ball_volume;
use crate::kernels::{KernelError, KernelSpec};
use crate::numeric::{adaptive_simpson, mean_stderr, poisson_pmf_table};
use crate::rng::{replica_seed, stream, StreamKind};
use crate::scalar::Real;
use crate::weights::WeightLaw;

/// Sentinel for infinite graph distance (disconnected pairs).
pub const INF_DISTANCE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("mixing integral diverges: declared tail alpha {alpha} <= d = {d}")]
    DivergentMixing { alpha: f64, d: u32 },
    #[error("kernel declares no tail bound")]
    NoTailBound,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

// ---------------------------------------------------------------------------
// Degrees
// ---------------------------------------------------------------------------

/// Exact degree counts of one or more pooled graphs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeHistogram {
    counts: Vec<u64>,
    n: u64,
}

impl DegreeHistogram {
    pub fn empty() -> Self {
        DegreeHistogram {
            counts: Vec::new(),
            n: 0,
        }
    }

    pub fn record(&mut self, degree: usize) {
        if self.counts.len() <= degree {
            self.counts.resize(degree + 1, 0);
        }
        self.counts[degree] += 1;
        self.n += 1;
    }

    pub fn merge(&mut self, other: &DegreeHistogram) {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (k, &c) in other.counts.iter().enumerate() {
            self.counts[k] += c;
        }
        self.n += other.n;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, k: usize) -> u64 {
        self.counts.get(k).copied().unwrap_or(0)
    }

    pub fn max_degree(&self) -> usize {
        self.counts.len().saturating_sub(1)
    }

    pub fn proportion(&self, k: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.count(k) as f64 / self.n as f64
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| k as f64 * c as f64)
            .sum::<f64>()
            / self.n as f64
    }

    /// Second factorial moment `sum_v d_v (d_v - 1) / n`.
    pub fn second_factorial_moment(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| (k * k.saturating_sub(1)) as f64 * c as f64)
            .sum::<f64>()
            / self.n as f64
    }

    /// Truncated first moment `E[D 1{D > m}]`.
    pub fn truncated_mean(&self, m: usize) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.counts
            .iter()
            .enumerate()
            .skip(m + 1)
            .map(|(k, &c)| k as f64 * c as f64)
            .sum::<f64>()
            / self.n as f64
    }

    /// Total variation distance to another degree histogram.
    pub fn tv(&self, other: &DegreeHistogram) -> f64 {
        let kmax = self.counts.len().max(other.counts.len());
        (0..kmax)
            .map(|k| (self.proportion(k) - other.proportion(k)).abs())
            .sum::<f64>()
            / 2.0
    }

    /// Total variation distance to a pmf table covering `0..pmf.len()`; any
    /// pmf mass beyond the table is assumed disjoint from the sample.
    pub fn tv_vs_pmf(&self, pmf: &[f64]) -> f64 {
        let kmax = self.counts.len().max(pmf.len());
        let mut acc = 0.0;
        for k in 0..kmax {
            let q = pmf.get(k).copied().unwrap_or(0.0);
            acc += (self.proportion(k) - q).abs();
        }
        let remainder = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
        (acc + remainder) / 2.0
    }
}

pub fn degree_histogram<F: Real>(g: &SpatialGraph<F>) -> DegreeHistogram {
    let mut h = DegreeHistogram::empty();
    for v in 0..g.n() as u32 {
        h.record(g.adj.degree(v));
    }
    h
}

// ---------------------------------------------------------------------------
// Mixed-Poisson oracle
// ---------------------------------------------------------------------------

/// Controls for the mixing-parameter quadrature.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    /// Absolute tolerance of the adaptive Simpson rule per segment.
    pub tol: f64,
    pub max_depth: u32,
    /// Monte Carlo size of the inner weight expectation (ignored when the
    /// law is a point mass).
    pub inner_samples: usize,
    /// Initial radial cutoff; doubled until the declared tail bound is below
    /// `tail_rel` times the running estimate.
    pub initial_cutoff: f64,
    pub tail_rel: f64,
    pub max_cutoff: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            tol: 1e-10,
            max_depth: 48,
            inner_samples: 2000,
            initial_cutoff: 16.0,
            tail_rel: 1e-6,
            max_cutoff: 1e9,
        }
    }
}

/// Mixing parameter estimate with its analytic tail bound at the cutoff.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MixingEstimate {
    pub value: f64,
    pub cutoff: f64,
    pub tail_bound: f64,
}

/// Surface area of the unit sphere in `R^d`.
fn sphere_area(d: u32) -> f64 {
    d as f64 * ball_volume(d, 1.0f64)
}

/// The conditional mean degree of a root with weight `w0`:
/// `Lambda(w0) = s_{d-1} int_0^T t^{d-1} E_{W1}[kappa(t, w0, W1)] dt`,
/// with the cutoff `T` chosen so the declared tail bound is negligible.
pub fn mixing_parameter<F: Real, R: Rng + ?Sized>(
    kernel: &KernelSpec<F>,
    w0: F,
    law: &WeightLaw<F>,
    dimension: u32,
    quad: &QuadratureSpec,
    rng: &mut R,
) -> Result<MixingEstimate, StatsError> {
    let tail = kernel.tail().ok_or(StatsError::NoTailBound)?;
    let alpha = tail.alpha.as_f64();
    if alpha <= dimension as f64 {
        return Err(StatsError::DivergentMixing {
            alpha,
            d: dimension,
        });
    }
    let inner: Vec<F> = match law {
        WeightLaw::Constant(c) => vec![*c],
        _ => (0..quad.inner_samples).map(|_| law.sample_one(rng)).collect(),
    };
    let mean_weight = kernel.limit_mean_weight(law)?;
    lambda_with_inner(kernel, w0, &inner, mean_weight, dimension, quad, alpha, tail.prefactor.as_f64())
}

#[allow(clippy::too_many_arguments)]
fn lambda_with_inner<F: Real>(
    kernel: &KernelSpec<F>,
    w0: F,
    inner: &[F],
    mean_weight: Option<F>,
    dimension: u32,
    quad: &QuadratureSpec,
    alpha: f64,
    prefactor: f64,
) -> Result<MixingEstimate, StatsError> {
    let s = sphere_area(dimension);
    let d_f = dimension as f64;
    let integrand = |t: f64| -> f64 {
        let tf = F::from_f64(t);
        let mut acc = 0.0;
        for &w1 in inner {
            acc += kernel
                .eval_limit(tf, w0, w1, mean_weight)
                .expect("validated kernel")
                .as_f64();
        }
        t.powf(d_f - 1.0) * acc / inner.len() as f64
    };
    let tail_at = |t: f64| -> f64 {
        if alpha.is_infinite() {
            0.0
        } else {
            s * prefactor * t.powf(d_f - alpha) / (alpha - d_f)
        }
    };
    let mut cutoff = quad.initial_cutoff;
    let mut value = s * adaptive_simpson(&integrand, 0.0, cutoff, quad.tol, quad.max_depth);
    while tail_at(cutoff) > quad.tail_rel * value.max(1e-12) && cutoff < quad.max_cutoff {
        let next = cutoff * 2.0;
        value += s * adaptive_simpson(&integrand, cutoff, next, quad.tol, quad.max_depth);
        cutoff = next;
    }
    Ok(MixingEstimate {
        value,
        cutoff,
        tail_bound: tail_at(cutoff),
    })
}

/// Mixed-Poisson pmf table: `P(D = k) = E_{W0}[ Poi(Lambda(W0))(k) ]` for
/// `k = 0..=k_max`,估 by Monte Carlo over `w0_samples` root weights with the
/// mixing parameter from quadrature. Returns `(value, stderr)` per `k`.
#[allow(clippy::too_many_arguments)]
pub fn mixed_poisson_pmf_table<F: Real>(
    kernel: &KernelSpec<F>,
    law: &WeightLaw<F>,
    k_max: usize,
    w0_samples: usize,
    dimension: u32,
    quad: &QuadratureSpec,
    seed: u64,
) -> Result<Vec<(f64, f64)>, StatsError> {
    let tail = kernel.tail().ok_or(StatsError::NoTailBound)?;
    let alpha = tail.alpha.as_f64();
    if alpha <= dimension as f64 {
        return Err(StatsError::DivergentMixing {
            alpha,
            d: dimension,
        });
    }
    let mut rng = stream(seed, StreamKind::Sampling);
    // Common random numbers: one inner sample shared by every Lambda(w0).
    let inner: Vec<F> = match law {
        WeightLaw::Constant(c) => vec![*c],
        _ => (0..quad.inner_samples).map(|_| law.sample_one(&mut rng)).collect(),
    };
    let w0s: Vec<F> = match law {
        WeightLaw::Constant(c) => vec![*c],
        _ => (0..w0_samples).map(|_| law.sample_one(&mut rng)).collect(),
    };
    let mean_weight = kernel.limit_mean_weight(law)?;
    let prefactor = tail.prefactor.as_f64();
    let tables: Vec<Vec<f64>> = w0s
        .par_iter()
        .map(|&w0| {
            let lambda = lambda_with_inner(
                kernel, w0, &inner, mean_weight, dimension, quad, alpha, prefactor,
            )?
            .value;
            Ok(poisson_pmf_table(lambda, k_max))
        })
        .collect::<Result<_, StatsError>>()?;
    let m = tables.len() as f64;
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let vals: Vec<f64> = tables.iter().map(|t| t[k]).collect();
        let (mean, se) = mean_stderr(&vals);
        out.push((mean, if vals.len() > 1 { se } else { 0.0 }));
    }
    debug_assert!(m >= 1.0);
    Ok(out)
}

/// Single-`k` mixed-Poisson probability with standard error.
#[allow(clippy::too_many_arguments)]
pub fn mixed_poisson_pmf<F: Real>(
    kernel: &KernelSpec<F>,
    law: &WeightLaw<F>,
    k: usize,
    w0_samples: usize,
    dimension: u32,
    quad: &QuadratureSpec,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    Ok(mixed_poisson_pmf_table(kernel, law, k, w0_samples, dimension, quad, seed)?[k])
}

// ---------------------------------------------------------------------------
// Wedges, triangles, clustering
// ---------------------------------------------------------------------------

/// `(sum_v d_v (d_v - 1), six times the triangle count)`.
pub fn wedge_triangle_counts<F: Real>(g: &SpatialGraph<F>) -> (u64, u64) {
    let wedges: u64 = (0..g.n() as u32)
        .map(|v| {
            let d = g.adj.degree(v) as u64;
            d * (d - 1).max(0)
        })
        .sum();
    let triangles: u64 = triangle_count(g);
    (wedges, 6 * triangles)
}

/// Number of unordered triangles, by sorted-neighbor intersection over edges
/// `(i < j)` counting common neighbors above `j`.
fn triangle_count<F: Real>(g: &SpatialGraph<F>) -> u64 {
    (0..g.n() as u32)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0u64;
            let ni = g.adj.neighbors(i);
            for &j in ni.iter().filter(|&&j| j > i) {
                acc += count_common_above(ni, g.adj.neighbors(j), j);
            }
            acc
        })
        .sum()
}

fn count_common_above(a: &[u32], b: &[u32], above: u32) -> u64 {
    let mut ia = a.partition_point(|&x| x <= above);
    let mut ib = b.partition_point(|&x| x <= above);
    let mut acc = 0;
    while ia < a.len() && ib < b.len() {
        match a[ia].cmp(&b[ib]) {
            std::cmp::Ordering::Less => ia += 1,
            std::cmp::Ordering::Greater => ib += 1,
            std::cmp::Ordering::Equal => {
                acc += 1;
                ia += 1;
                ib += 1;
            }
        }
    }
    acc
}

/// Twice the number of triangles containing each vertex.
pub fn triangles_per_vertex<F: Real>(g: &SpatialGraph<F>) -> Vec<u64> {
    let mut delta = vec![0u64; g.n()];
    for i in 0..g.n() as u32 {
        let ni = g.adj.neighbors(i);
        for &j in ni.iter().filter(|&&j| j > i) {
            let nj = g.adj.neighbors(j);
            let mut ia = ni.partition_point(|&x| x <= j);
            let mut ib = nj.partition_point(|&x| x <= j);
            while ia < ni.len() && ib < nj.len() {
                match ni[ia].cmp(&nj[ib]) {
                    std::cmp::Ordering::Less => ia += 1,
                    std::cmp::Ordering::Greater => ib += 1,
                    std::cmp::Ordering::Equal => {
                        let k = ni[ia];
                        delta[i as usize] += 2;
                        delta[j as usize] += 2;
                        delta[k as usize] += 2;
                        ia += 1;
                        ib += 1;
                    }
                }
            }
        }
    }
    delta
}

/// Global clustering coefficient `Delta_G / W_G` (0 when there are no
/// wedges).
pub fn global_clustering<F: Real>(g: &SpatialGraph<F>) -> f64 {
    let (w, t) = wedge_triangle_counts(g);
    if w == 0 {
        0.0
    } else {
        t as f64 / w as f64
    }
}

/// Mean over vertices of `Delta_v / (d_v (d_v - 1))` (0 for degree < 2).
pub fn local_clustering<F: Real>(g: &SpatialGraph<F>) -> f64 {
    if g.n() == 0 {
        return 0.0;
    }
    let delta = triangles_per_vertex(g);
    let mut acc = 0.0;
    for v in 0..g.n() {
        let d = g.adj.degree(v as u32) as u64;
        if d >= 2 {
            acc += delta[v] as f64 / (d * (d - 1)) as f64;
        }
    }
    acc / g.n() as f64
}

/// Clustering function at degree `k`: mean of `Delta_v / (k (k-1))` over
/// vertices of degree `k` (0 when `k < 2` or no such vertex).
pub fn clustering_function<F: Real>(g: &SpatialGraph<F>, k: usize) -> f64 {
    if k < 2 {
        return 0.0;
    }
    let delta = triangles_per_vertex(g);
    let mut acc = 0.0;
    let mut hits = 0u64;
    for v in 0..g.n() {
        if g.adj.degree(v as u32) == k {
            acc += delta[v] as f64 / (k * (k - 1)) as f64;
            hits += 1;
        }
    }
    if hits == 0 {
        0.0
    } else {
        acc / hits as f64
    }
}

/// Full clustering summary of one graph.
#[derive(Debug, Clone, Serialize)]
pub struct ClusteringReport {
    pub wedges: u64,
    pub triangles6: u64,
    pub global: f64,
    pub local: f64,
    pub by_degree: BTreeMap<usize, f64>,
}

pub fn clustering_report<F: Real>(g: &SpatialGraph<F>, ks: &[usize]) -> ClusteringReport {
    let (wedges, triangles6) = wedge_triangle_counts(g);
    ClusteringReport {
        wedges,
        triangles6,
        global: if wedges == 0 {
            0.0
        } else {
            triangles6 as f64 / wedges as f64
        },
        local: local_clustering(g),
        by_degree: ks
            .iter()
            .map(|&k| (k, clustering_function(g, k)))
            .collect(),
    }
}

/// Monte Carlo estimates of the limit quantities in the clustering
/// corollaries: `E[Delta_0]`, `E[D(D-1)]`, `E[Delta_0 / (D(D-1))]`, and the
/// conditional `E[Delta_0 | D=k] / (k(k-1))`.
#[derive(Debug, Clone, Serialize)]
pub struct LimitClustering {
    pub e_delta0: (f64, f64),
    pub e_dd1: (f64, f64),
    pub e_local: (f64, f64),
    /// Per requested degree: (estimate, stderr, replica hits); fewer than 30
    /// hits is flagged low-confidence by the caller.
    pub conditional: BTreeMap<usize, (f64, f64, u64)>,
}

#[allow(clippy::too_many_arguments)]
pub fn limit_clustering_estimates<F: Real>(
    kernel: &KernelSpec<F>,
    law: &WeightLaw<F>,
    radius: F,
    replicas: usize,
    dimension: u32,
    mean_weight: Option<F>,
    seed: u64,
    ks: &[usize],
) -> Result<LimitClustering, StatsError> {
    let samples: Vec<(f64, f64, f64, usize)> = (0..replicas as u64)
        .into_par_iter()
        .map(|rep| {
            let g = sample_limit_ball(
                kernel,
                law,
                radius,
                dimension,
                mean_weight,
                replica_seed(seed, rep),
            )?;
            let root_nb = g.adj.neighbors(0);
            let d = root_nb.len();
            let mut delta0 = 0.0;
            for (s, &u) in root_nb.iter().enumerate() {
                for &v in &root_nb[s + 1..] {
                    if g.adj.has_edge(u, v) {
                        delta0 += 2.0;
                    }
                }
            }
            let dd1 = (d * d.saturating_sub(1)) as f64;
            let local = if d >= 2 { delta0 / dd1 } else { 0.0 };
            Ok((delta0, dd1, local, d))
        })
        .collect::<Result<_, StatsError>>()?;
    let deltas: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let dd1s: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let locals: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let mut conditional = BTreeMap::new();
    for &k in ks {
        let hits: Vec<f64> = samples
            .iter()
            .filter(|s| s.3 == k)
            .map(|s| {
                if k >= 2 {
                    s.0 / (k * (k - 1)) as f64
                } else {
                    0.0
                }
            })
            .collect();
        let (mean, se) = mean_stderr(&hits);
        conditional.insert(k, (mean, se, hits.len() as u64));
    }
    Ok(LimitClustering {
        e_delta0: mean_stderr(&deltas),
        e_dd1: mean_stderr(&dd1s),
        e_local: mean_stderr(&locals),
        conditional,
    })
}

// ---------------------------------------------------------------------------
// Typical distances
// ---------------------------------------------------------------------------

/// Graph distances between `pairs` independent uniform ordered pairs of
/// distinct vertices (resampled while equal); `INF_DISTANCE` when
/// disconnected.
pub fn typical_distances<F: Real, R: Rng + ?Sized>(
    g: &SpatialGraph<F>,
    pairs: usize,
    rng: &mut R,
) -> Vec<u32> {
    let n = g.n() as u32;
    let sampled: Vec<(u32, u32)> = (0..pairs)
        .map(|_| loop {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v {
                return (u, v);
            }
        })
        .collect();
    sampled
        .par_iter()
        .map(|&(u, v)| bfs_distance(g, u, v))
        .collect()
}

/// BFS distance from `source` to `target`.
pub fn bfs_distance<F: Real>(g: &SpatialGraph<F>, source: u32, target: u32) -> u32 {
    if source == target {
        return 0;
    }
    let mut dist = vec![INF_DISTANCE; g.n()];
    dist[source as usize] = 0;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(source);
    while let Some(v) = queue.pop_front() {
        let dv = dist[v as usize];
        for &u in g.adj.neighbors(v) {
            if dist[u as usize] == INF_DISTANCE {
                if u == target {
                    return dv + 1;
                }
                dist[u as usize] = dv + 1;
                queue.push_back(u);
            }
        }
    }
    INF_DISTANCE
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceReport {
    /// Fraction of sampled distances exceeding `C log log n` (infinite ones
    /// count as exceeding).
    pub exceedance: f64,
    pub threshold: f64,
    /// The theorem's critical constant `1 / log(alpha / (alpha - d))`.
    pub critical_c: f64,
    pub finite_fraction: f64,
    pub finite_mean: f64,
}

/// Exceedance of the doubly-logarithmic bound `d > C log log n`.
pub fn distance_threshold_fraction(
    samples: &[u32],
    n: usize,
    c: f64,
    alpha: f64,
    d: u32,
) -> Result<DistanceReport, StatsError> {
    if alpha <= d as f64 {
        return Err(StatsError::InvalidParameter(format!(
            "need alpha > d, got alpha = {alpha}, d = {d}"
        )));
    }
    if n < 16 {
        return Err(StatsError::InvalidParameter(
            "need n >= 16 so log log n > 0".into(),
        ));
    }
    if samples.is_empty() {
        return Err(StatsError::InvalidParameter("no distance samples".into()));
    }
    let threshold = c * (n as f64).ln().ln();
    let exceed = samples
        .iter()
        .filter(|&&s| s == INF_DISTANCE || s as f64 > threshold)
        .count() as f64
        / samples.len() as f64;
    let finite: Vec<f64> = samples
        .iter()
        .filter(|&&s| s != INF_DISTANCE)
        .map(|&s| s as f64)
        .collect();
    let critical_c = 1.0 / (alpha / (alpha - d as f64)).ln();
    Ok(DistanceReport {
        exceedance: exceed,
        threshold,
        critical_c,
        finite_fraction: finite.len() as f64 / samples.len() as f64,
        finite_mean: if finite.is_empty() {
            0.0
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_finite, Csr, FiniteParams, SampleMode};
    use crate::geometry::Metric;
    use approx::assert_relative_eq;

    /// Build a graph with prescribed edges on n isolated-position vertices.
    fn fixture(n: usize, edges: &[(u32, u32)]) -> SpatialGraph<f64> {
        let p = FiniteParams {
            n,
            dimension: 1,
            kernel: KernelSpec::constant(0.0).unwrap(),
            weight_law: WeightLaw::Constant(1.0),
            metric: Metric::Euclidean,
            mode: SampleMode::Exact,
        };
        let mut g = generate_finite(&p, 1).unwrap();
        g.adj = Csr::from_edges(n, edges);
        g
    }

    #[test]
    fn degree_histogram_hand_counts() {
        let tri = fixture(3, &[(0, 1), (1, 2), (0, 2)]);
        let h = degree_histogram(&tri);
        assert_eq!(h.count(2), 3);
        assert_relative_eq!(h.mean(), 2.0);
        let empty = fixture(4, &[]);
        let h = degree_histogram(&empty);
        assert_eq!(h.count(0), 4);
        let star = fixture(4, &[(0, 1), (0, 2), (0, 3)]);
        let h = degree_histogram(&star);
        assert_eq!((h.count(3), h.count(1)), (1, 3));
        assert_relative_eq!(h.mean(), 1.5);
        assert_relative_eq!(h.second_factorial_moment(), 6.0 / 4.0);
    }

    #[test]
    fn truncated_moments() {
        let tri = fixture(3, &[(0, 1), (1, 2), (0, 2)]);
        let h = degree_histogram(&tri);
        // All degrees 2: E[D 1{D>1}] = 2, E[D 1{D>2}] = 0, M=0 -> mean.
        assert_relative_eq!(h.truncated_mean(1), 2.0);
        assert_relative_eq!(h.truncated_mean(2), 0.0);
        assert_relative_eq!(h.truncated_mean(0), h.mean());
    }

    #[test]
    fn wedge_triangle_hand_counts() {
        let k3 = fixture(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(wedge_triangle_counts(&k3), (6, 6));
        let path = fixture(3, &[(0, 1), (1, 2)]);
        assert_eq!(wedge_triangle_counts(&path), (2, 0));
        let k4 = fixture(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(wedge_triangle_counts(&k4), (24, 24));
        // K4 minus an edge: W = 2*6 + 2*2 = 16, 2 triangles -> 12.
        let k4m = fixture(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]);
        assert_eq!(wedge_triangle_counts(&k4m), (16, 12));
        assert_relative_eq!(global_clustering(&k4m), 0.75);
        assert_relative_eq!(global_clustering(&k3), 1.0);
        assert_relative_eq!(global_clustering(&path), 0.0);
    }

    #[test]
    fn local_clustering_hand_values() {
        let k3 = fixture(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_relative_eq!(local_clustering(&k3), 1.0);
        assert_relative_eq!(clustering_function(&k3, 2), 1.0);
        assert_relative_eq!(clustering_function(&k3, 1), 0.0);
        let star = fixture(4, &[(0, 1), (0, 2), (0, 3)]);
        assert_relative_eq!(local_clustering(&star), 0.0);
        // K4 minus an edge: vertices 2,3 have degree 3... recompute: edges
        // (01)(02)(03)(12)(13): degrees 3,3,2,2; CC(0)=2*2/6, CC(2)=1.
        let k4m = fixture(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]);
        assert_relative_eq!(local_clustering(&k4m), (2.0 * (4.0 / 6.0) + 2.0 * 1.0) / 4.0);
        // Disjoint triangles: CC_{G,2} = 1 exactly.
        let two_k3 = fixture(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]);
        assert_relative_eq!(clustering_function(&two_k3, 2), 1.0);
    }

    #[test]
    fn invariance_under_relabeling() {
        let g1 = fixture(5, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4)]);
        let g2 = fixture(5, &[(4, 3), (3, 2), (4, 2), (2, 1), (1, 0)]);
        assert_eq!(wedge_triangle_counts(&g1), wedge_triangle_counts(&g2));
        assert_relative_eq!(local_clustering(&g1), local_clustering(&g2));
        let (w, t) = wedge_triangle_counts(&g1);
        assert!(t <= w);
    }

    #[test]
    fn mixing_parameter_closed_forms() {
        let quad = QuadratureSpec::default();
        let mut rng = stream(1, StreamKind::Sampling);
        // Threshold(r0), d=1: Lambda = 2 r0 exactly.
        let k = KernelSpec::threshold(1.0).unwrap();
        let est = mixing_parameter(&k, 1.0, &WeightLaw::Constant(1.0), 1, &quad, &mut rng).unwrap();
        assert!((est.value - 2.0).abs() < 1e-8, "{est:?}");
        // GIRG limit alpha_G=2, d=1, constant weights: Lambda = 4.
        let k = KernelSpec::girg(2.0, 1).unwrap();
        let est = mixing_parameter(&k, 1.0, &WeightLaw::Constant(1.0), 1, &quad, &mut rng).unwrap();
        assert!((est.value - 4.0).abs() <= est.tail_bound + 1e-8, "{est:?}");
        // Zero kernel.
        let k = KernelSpec::constant(0.0).unwrap();
        let est = mixing_parameter(&k, 1.0, &WeightLaw::Constant(1.0), 1, &quad, &mut rng).unwrap();
        assert!(est.value.abs() < 1e-12);
        // Divergent declaration refused.
        let k = KernelSpec::csfp(1.0, 3.0).unwrap().with_tail(0.5, 1.0).unwrap();
        assert!(matches!(
            mixing_parameter(&k, 1.0, &WeightLaw::Constant(1.0), 1, &quad, &mut rng),
            Err(StatsError::DivergentMixing { .. })
        ));
    }

    #[test]
    fn mixed_poisson_threshold_is_exact_poisson() {
        // Degenerate mixing: matches Poisson(2) to quadrature tolerance.
        let k = KernelSpec::threshold(1.0).unwrap();
        let quad = QuadratureSpec::default();
        let table =
            mixed_poisson_pmf_table(&k, &WeightLaw::pareto(2.0).unwrap(), 12, 50, 1, &quad, 3)
                .unwrap();
        let poisson = poisson_pmf_table(2.0, 12);
        for (kk, &(v, _)) in table.iter().enumerate() {
            assert!((v - poisson[kk]).abs() < 1e-8, "k={kk}: {v}");
        }
        // P(D=0) = e^{-2}.
        assert!((table[0].0 - (-2.0f64).exp()).abs() < 1e-8);
        // Sums close to 1 (Poisson tail beyond 12 at mean 2 is tiny).
        let total: f64 = table.iter().map(|t| t.0).sum();
        assert!(total > 1.0 - 2e-5, "total {total}");
    }

    #[test]
    fn mixed_poisson_zero_kernel() {
        let k = KernelSpec::constant(0.0).unwrap();
        let quad = QuadratureSpec::default();
        let (p0, _) =
            mixed_poisson_pmf(&k, &WeightLaw::Uniform01, 0, 20, 1, &quad, 3).unwrap();
        assert!((p0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_poisson_csfp_cross_validates_against_ball_sampler() {
        // P(D=0) two ways: quadrature oracle vs root degree of the limit
        // ball with a large radius; agreement within 3 joint sigma.
        let kernel = KernelSpec::csfp(1.0, 3.0).unwrap();
        let law = WeightLaw::pareto(2.0).unwrap();
        // The oracle error floor is the inner-MC noise, so a loose quadrature
        // tolerance is appropriate here.
        let quad = QuadratureSpec {
            tol: 1e-6,
            inner_samples: 2000,
            ..QuadratureSpec::default()
        };
        let (p_oracle, se_oracle) =
            mixed_poisson_pmf(&kernel, &law, 0, 1500, 1, &quad, 5).unwrap();
        let reps = 2000u64;
        let mut zero = 0usize;
        for rep in 0..reps {
            let g = sample_limit_ball(&kernel, &law, 1e3, 1, None, replica_seed(77, rep)).unwrap();
            if g.adj.degree(0) == 0 {
                zero += 1;
            }
        }
        let p_mc = zero as f64 / reps as f64;
        let se_mc = (p_mc * (1.0 - p_mc) / reps as f64).sqrt();
        let joint = (se_oracle * se_oracle + se_mc * se_mc).sqrt();
        assert!(
            (p_oracle - p_mc).abs() <= 3.0 * joint.max(2e-3),
            "oracle {p_oracle} +- {se_oracle} vs MC {p_mc} +- {se_mc}"
        );
    }

    #[test]
    fn limit_clustering_threshold_quadrature_oracles() {
        // Threshold(1), d=1: E[Delta_0] = 3 (2-d quadrature), E[D(D-1)] = 4.
        let kernel = KernelSpec::threshold(1.0).unwrap();
        let est = limit_clustering_estimates(
            &kernel,
            &WeightLaw::Constant(1.0),
            8.0,
            20_000,
            1,
            None,
            21,
            &[2],
        )
        .unwrap();
        // Midpoint-grid quadrature oracle for the double integral.
        let grid = 1000;
        let mut integral = 0.0;
        for a in 0..grid {
            let z1 = -1.0 + 2.0 * (a as f64 + 0.5) / grid as f64;
            for b in 0..grid {
                let z2 = -1.0 + 2.0 * (b as f64 + 0.5) / grid as f64;
                if (z1 - z2).abs() <= 1.0 {
                    integral += (2.0 / grid as f64) * (2.0 / grid as f64);
                }
            }
        }
        assert!((integral - 3.0).abs() < 0.01, "quadrature {integral}");
        assert!(
            (est.e_delta0.0 - integral).abs() <= 3.0 * est.e_delta0.1,
            "{:?} vs {integral}",
            est.e_delta0
        );
        assert!(
            (est.e_dd1.0 - 4.0).abs() <= 3.0 * est.e_dd1.1,
            "{:?}",
            est.e_dd1
        );
    }

    #[test]
    fn distances_hand_cases() {
        let mut rng = stream(2, StreamKind::Sampling);
        let complete = fixture(5, &[(0,1),(0,2),(0,3),(0,4),(1,2),(1,3),(1,4),(2,3),(2,4),(3,4)]);
        let d = typical_distances(&complete, 50, &mut rng);
        assert!(d.iter().all(|&x| x == 1));
        let empty = fixture(5, &[]);
        let d = typical_distances(&empty, 50, &mut rng);
        assert!(d.iter().all(|&x| x == INF_DISTANCE));
        let path = fixture(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(bfs_distance(&path, 0, 3), 3);
        assert_eq!(bfs_distance(&path, 0, 0), 0);
    }

    #[test]
    fn bfs_triangle_inequality_on_random_triples() {
        let p = FiniteParams {
            n: 300,
            dimension: 1,
            kernel: KernelSpec::csfp(1.0, 3.0).unwrap(),
            weight_law: WeightLaw::pareto(2.0).unwrap(),
            metric: Metric::Euclidean,
            mode: SampleMode::Grid,
        };
        let g = generate_finite(&p, 3).unwrap();
        let mut rng = stream(3, StreamKind::Sampling);
        for _ in 0..40 {
            let a = rng.random_range(0..300u32);
            let b = rng.random_range(0..300u32);
            let c = rng.random_range(0..300u32);
            let dab = bfs_distance(&g, a, b);
            let dbc = bfs_distance(&g, b, c);
            let dac = bfs_distance(&g, a, c);
            if dab != INF_DISTANCE && dbc != INF_DISTANCE {
                assert!(dac as u64 <= dab as u64 + dbc as u64);
            }
        }
    }

    #[test]
    fn exceedance_hand_cases() {
        // All infinite: fraction 1.
        let r = distance_threshold_fraction(&[INF_DISTANCE; 10], 100, 1.0, 3.0, 1).unwrap();
        assert_relative_eq!(r.exceedance, 1.0);
        assert_relative_eq!(r.finite_fraction, 0.0);
        // alpha = 2d: critical constant 1/log 2.
        let r = distance_threshold_fraction(&[3; 5], 10_000, 1.0, 2.0, 1).unwrap();
        assert_relative_eq!(r.critical_c, 1.0 / 2.0f64.ln(), max_relative = 1e-12);
        // n = 10^4: threshold ~ 2.22 < 3, so everything exceeds.
        assert_relative_eq!(r.exceedance, 1.0);
        assert!(distance_threshold_fraction(&[1], 100, 1.0, 0.5, 1).is_err());
        assert!(distance_threshold_fraction(&[1], 8, 1.0, 3.0, 1).is_err());
    }

    #[test]
    fn tv_degree_hand_values() {
        let mut a = DegreeHistogram::empty();
        let mut b = DegreeHistogram::empty();
        a.record(0);
        a.record(1);
        b.record(0);
        b.record(0);
        assert_relative_eq!(a.tv(&b), 0.5);
        assert_relative_eq!(a.tv(&a), 0.0);
        assert_relative_eq!(a.tv_vs_pmf(&[1.0]), 0.5);
        // Remainder mass beyond the pmf table counts fully.
        assert_relative_eq!(b.tv_vs_pmf(&[0.5]), 0.5);
    }
}
