//! Graph sampling: finite blown-up ensembles, the infinite limit restricted
//! to a ball, and native hyperbolic graphs.
//!
//! Edge randomness is counter-based: the accept/reject uniform for pair
//! `{i, j}` is a pure function of `(seed, i, j)` (see [`crate::rng`]), so
//! exact mode, grid mode, and any parallel schedule draw the same uniform for
//! the same pair. Grid mode partitions the box into cells of side at least 1:
//! adjacent cell pairs are tested pair by pair, and farther cells are grouped
//! into distance-doubling bands swept with geometric skipping under a
//! cell-distance envelope `p_bar >= sup kappa`. The rejection scheme is
//! distribution-exact, never approximate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    ball_volume, sample_in_ball, sample_uniform_box, BoxSpec, Domain, GeometryError, Metric,
    PointCloud,
};
use crate::kernels::{KernelError, KernelForm, KernelSpec};
use crate::rng::{pair_uniform, stream, BlockUniforms, StreamKind};
use crate::scalar::Real;
use crate::weights::{sample_weights, WeightError, WeightLaw, WeightVector};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// How pairwise edges are sampled; both modes produce the same distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleMode {
    /// Loop over all n(n-1)/2 pairs.
    Exact,
    /// Cell grid with banded geometric skipping; falls back to exact (with a
    /// warning on the graph) when the kernel/metric combination does not
    /// expose a distance-monotone envelope.
    Grid,
}

/// Compressed sorted adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut deg = vec![0usize; n];
        for &(i, j) in edges {
            deg[i as usize] += 1;
            deg[j as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut targets = vec![0u32; offsets[n]];
        let mut cursor = offsets.clone();
        for &(i, j) in edges {
            targets[cursor[i as usize]] = j;
            cursor[i as usize] += 1;
            targets[cursor[j as usize]] = i;
            cursor[j as usize] += 1;
        }
        for v in 0..n {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Csr { offsets, targets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.targets[self.offsets[v as usize]..self.offsets[v as usize + 1]]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.offsets[v as usize + 1] - self.offsets[v as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn has_edge(&self, i: u32, j: u32) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.len() as u32).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }
}

/// Provenance carried by a generated graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta<F> {
    pub kernel_id: String,
    pub seed: u64,
    pub metric: Metric<F>,
    /// Ensemble size the finite kernel was evaluated with (None for limit
    /// balls).
    pub ensemble_n: Option<usize>,
    pub mode: String,
    pub warnings: Vec<String>,
}

/// Undirected simple graph with per-vertex locations and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph<F> {
    pub points: PointCloud<F>,
    pub weights: WeightVector<F>,
    pub adj: Csr,
    pub meta: GraphMeta<F>,
    pub root: Option<u32>,
    /// Native hyperbolic coordinates `(r, theta)` when the graph came from
    /// the HRG sampler.
    pub polar: Option<Vec<(F, F)>>,
}

impl<F: Real> SpatialGraph<F> {
    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn location(&self, v: u32) -> &[F] {
        self.points.point(v as usize)
    }

    pub fn weight(&self, v: u32) -> F {
        self.weights.get(v as usize)
    }
}

/// Pairwise edge-probability model handed to the sampling engine.
pub trait PairProb<F: Real>: Sync {
    /// Edge probability at distance `t` for weights `(w1, w2)`.
    fn prob(&self, t: F, w1: F, w2: F) -> F;

    /// Upper bound on `prob` over all pairs at distance >= `t_min` where one
    /// endpoint has weight `w1` and the other any weight in the realized
    /// range; `w_dom` is the dominating partner weight chosen by
    /// [`KernelSpec::dominating_weight`].
    fn envelope(&self, t_min: F, w1: F, w_dom: F) -> F;

    /// Whether `envelope` is valid under the given metric (hyperbolic finite
    /// kernels need the circular metric to stay distance-monotone).
    fn grid_compatible(&self, metric: &Metric<F>) -> bool;
}

/// Finite-`n` kernel context.
pub struct FiniteKernel<'a, F> {
    pub kernel: &'a KernelSpec<F>,
    pub ensemble_n: usize,
    pub total_weight: Option<F>,
}

impl<F: Real> PairProb<F> for FiniteKernel<'_, F> {
    fn prob(&self, t: F, w1: F, w2: F) -> F {
        self.kernel
            .eval_finite(self.ensemble_n, t, w1, w2, self.total_weight)
            .expect("validated kernel evaluation")
    }

    fn envelope(&self, t_min: F, w1: F, w_dom: F) -> F {
        self.prob(t_min, w1, w_dom)
    }

    fn grid_compatible(&self, metric: &Metric<F>) -> bool {
        match self.kernel.form() {
            KernelForm::ThrgLimit { .. } | KernelForm::PhrgLimit { .. } => {
                matches!(metric, Metric::Torus { .. })
            }
            _ => true,
        }
    }
}

/// Limiting kernel context.
pub struct LimitKernel<'a, F> {
    pub kernel: &'a KernelSpec<F>,
    pub mean_weight: Option<F>,
}

impl<F: Real> PairProb<F> for LimitKernel<'_, F> {
    fn prob(&self, t: F, w1: F, w2: F) -> F {
        self.kernel
            .eval_limit(t, w1, w2, self.mean_weight)
            .expect("validated kernel evaluation")
    }

    fn envelope(&self, t_min: F, w1: F, w_dom: F) -> F {
        self.prob(t_min, w1, w_dom)
    }

    fn grid_compatible(&self, _metric: &Metric<F>) -> bool {
        true
    }
}

/// Sample the edge set over the given points/weights. Returns `(i, j)` pairs
/// with `i < j` plus any mode-fallback warnings.
pub fn sample_edges<F: Real, P: PairProb<F>>(
    points: &PointCloud<F>,
    weights: &WeightVector<F>,
    metric: &Metric<F>,
    ctx: &P,
    kernel: &KernelSpec<F>,
    edge_seed: u64,
    mode: SampleMode,
) -> (Vec<(u32, u32)>, Vec<String>) {
    let n = points.len();
    let mut warnings = Vec::new();
    let mode = match mode {
        SampleMode::Exact => SampleMode::Exact,
        SampleMode::Grid => {
            let mut ok = ctx.grid_compatible(metric);
            if !ok {
                warnings.push(
                    "grid mode needs the torus metric for hyperbolic finite kernels; \
                     falling back to exact"
                        .into(),
                );
            }
            if ok && weights.min() < F::zero() {
                ok = false;
                warnings.push(
                    "grid mode needs nonnegative weights for its envelope; falling back to exact"
                        .into(),
                );
            }
            if ok && points.dimension() > 3 {
                ok = false;
                warnings.push("grid mode supports d <= 3; falling back to exact".into());
            }
            if ok && n >= 2 {
                SampleMode::Grid
            } else {
                SampleMode::Exact
            }
        }
    };
    let edges = match mode {
        SampleMode::Exact => sample_exact(points, weights, metric, ctx, edge_seed),
        SampleMode::Grid => sample_grid(points, weights, metric, ctx, kernel, edge_seed),
    };
    (edges, warnings)
}

fn sample_exact<F: Real, P: PairProb<F>>(
    points: &PointCloud<F>,
    weights: &WeightVector<F>,
    metric: &Metric<F>,
    ctx: &P,
    edge_seed: u64,
) -> Vec<(u32, u32)> {
    let n = points.len() as u32;
    let mut blocks: Vec<Vec<(u32, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            let pi = points.point(i as usize);
            let wi = weights.get(i as usize);
            for j in (i + 1)..n {
                let t = metric
                    .distance(pi, points.point(j as usize))
                    .expect("equal dimensions");
                let p = ctx.prob(t, wi, weights.get(j as usize));
                if F::from_f64(pair_uniform(edge_seed, i, j)) < p {
                    out.push((i, j));
                }
            }
            out
        })
        .collect();
    blocks.drain(..).flatten().collect()
}

// ---------------------------------------------------------------------------
// Grid mode
// ---------------------------------------------------------------------------

const MAX_GRID_DIM: usize = 3;

struct Grid<F> {
    dim: usize,
    ncpd: i64,
    cell_side: F,
    half: F,
    torus: bool,
    /// Vertex ids grouped by cell.
    order: Vec<u32>,
    cell_start: Vec<usize>,
    /// Cumulative point counts for box queries.
    prefix: Vec<u64>,
}

impl<F: Real> Grid<F> {
    fn build(points: &PointCloud<F>, side: F, torus: bool) -> Self {
        let dim = points.dimension() as usize;
        assert!((1..=MAX_GRID_DIM).contains(&dim));
        let side_f = side.as_f64();
        let ncpd = (side_f.floor() as i64).max(1);
        let cell_side = side / F::from_f64(ncpd as f64);
        let half = side / F::from_f64(2.0);
        let n = points.len();
        let ncells = (ncpd as usize).pow(dim as u32);

        let cell_of = |v: usize| -> usize {
            let p = points.point(v);
            let mut lin = 0usize;
            for k in 0..dim {
                let c = ((p[k] + half) / cell_side).as_f64().floor() as i64;
                let c = c.clamp(0, ncpd - 1) as usize;
                lin = lin * ncpd as usize + c;
            }
            lin
        };

        let mut counts = vec![0usize; ncells];
        for v in 0..n {
            counts[cell_of(v)] += 1;
        }
        let mut cell_start = Vec::with_capacity(ncells + 1);
        cell_start.push(0);
        for c in &counts {
            cell_start.push(cell_start.last().unwrap() + c);
        }
        let mut order = vec![0u32; n];
        let mut cursor = cell_start.clone();
        for v in 0..n {
            let c = cell_of(v);
            order[cursor[c]] = v as u32;
            cursor[c] += 1;
        }
        for c in 0..ncells {
            order[cell_start[c]..cell_start[c + 1]].sort_unstable();
        }

        // Prefix table over cell indices: the entry at multi-index
        // (i_1..i_d) counts points in cells strictly below it in every
        // coordinate.
        let m = ncpd as usize + 1;
        let table_len = m.pow(dim as u32);
        let mut prefix = vec![0u64; table_len];
        let idx = |coords: &[usize]| -> usize {
            let mut lin = 0usize;
            for &c in coords {
                lin = lin * m + c;
            }
            lin
        };
        match dim {
            1 => {
                for i in 1..m {
                    prefix[i] = prefix[i - 1] + counts[i - 1] as u64;
                }
            }
            2 => {
                for i in 1..m {
                    for j in 1..m {
                        prefix[idx(&[i, j])] = counts[(i - 1) * ncpd as usize + (j - 1)] as u64
                            + prefix[idx(&[i - 1, j])]
                            + prefix[idx(&[i, j - 1])]
                            - prefix[idx(&[i - 1, j - 1])];
                    }
                }
            }
            3 => {
                for i in 1..m {
                    for j in 1..m {
                        for k in 1..m {
                            let cell =
                                ((i - 1) * ncpd as usize + (j - 1)) * ncpd as usize + (k - 1);
                            prefix[idx(&[i, j, k])] = counts[cell] as u64
                                + prefix[idx(&[i - 1, j, k])]
                                + prefix[idx(&[i, j - 1, k])]
                                + prefix[idx(&[i, j, k - 1])]
                                - prefix[idx(&[i - 1, j - 1, k])]
                                - prefix[idx(&[i - 1, j, k - 1])]
                                - prefix[idx(&[i, j - 1, k - 1])]
                                + prefix[idx(&[i - 1, j - 1, k - 1])];
                        }
                    }
                }
            }
            _ => unreachable!(),
        }

        Grid {
            dim,
            ncpd,
            cell_side,
            half,
            torus,
            order,
            cell_start,
            prefix,
        }
    }

    fn ncells(&self) -> usize {
        (self.ncpd as usize).pow(self.dim as u32)
    }

    fn cell_coords(&self, lin: usize) -> [i64; MAX_GRID_DIM] {
        let mut c = [0i64; MAX_GRID_DIM];
        let mut rest = lin;
        for k in (0..self.dim).rev() {
            c[k] = (rest % self.ncpd as usize) as i64;
            rest /= self.ncpd as usize;
        }
        c
    }

    fn lin_of(&self, coords: &[i64; MAX_GRID_DIM]) -> usize {
        let mut lin = 0usize;
        for k in 0..self.dim {
            lin = lin * self.ncpd as usize + coords[k] as usize;
        }
        lin
    }

    fn vertex_cell(&self, points: &PointCloud<F>, v: u32) -> [i64; MAX_GRID_DIM] {
        let p = points.point(v as usize);
        let mut coords = [0i64; MAX_GRID_DIM];
        for k in 0..self.dim {
            let c = ((p[k] + self.half) / self.cell_side).as_f64().floor() as i64;
            coords[k] = c.clamp(0, self.ncpd - 1);
        }
        coords
    }

    fn cell_points(&self, lin: usize) -> &[u32] {
        &self.order[self.cell_start[lin]..self.cell_start[lin + 1]]
    }

    fn cell_count(&self, lin: usize) -> u64 {
        (self.cell_start[lin + 1] - self.cell_start[lin]) as u64
    }

    /// Offset range per dimension for a Chebyshev radius `k`; canonical torus
    /// representatives so no cell appears twice.
    fn offset_range(&self, k: i64) -> (i64, i64) {
        if self.torus {
            (-k.min((self.ncpd - 1) / 2), k.min(self.ncpd / 2))
        } else {
            (-k, k)
        }
    }

    /// Prefix-table count over an index box (inclusive, already in range).
    fn count_index_box(&self, lo: &[i64; MAX_GRID_DIM], hi: &[i64; MAX_GRID_DIM]) -> u64 {
        let m = self.ncpd as usize + 1;
        let idx = |coords: &[usize; MAX_GRID_DIM]| -> usize {
            let mut lin = 0usize;
            for coord in coords.iter().take(self.dim) {
                lin = lin * m + coord;
            }
            lin
        };
        let mut total: i64 = 0;
        for corner in 0..(1usize << self.dim) {
            let mut coords = [0usize; MAX_GRID_DIM];
            let mut sign = 1i64;
            for k in 0..self.dim {
                if corner & (1 << k) != 0 {
                    coords[k] = (hi[k] + 1) as usize;
                } else {
                    coords[k] = lo[k] as usize;
                    sign = -sign;
                }
            }
            total += sign * self.prefix[idx(&coords)] as i64;
        }
        total.max(0) as u64
    }

    /// Count points within Chebyshev cell distance <= k of `center`.
    fn count_cheb_ball(&self, center: &[i64; MAX_GRID_DIM], k: i64) -> u64 {
        if k < 0 {
            return 0;
        }
        let (off_lo, off_hi) = self.offset_range(k);
        let mut ranges: [[Option<(i64, i64)>; 2]; MAX_GRID_DIM] = Default::default();
        for dim_k in 0..self.dim {
            ranges[dim_k] = self.resolve_range(center[dim_k] + off_lo, center[dim_k] + off_hi);
        }
        // Cartesian product of up to two segments per dimension.
        let mut total = 0u64;
        let mut pick = [0usize; MAX_GRID_DIM];
        loop {
            let mut lo = [0i64; MAX_GRID_DIM];
            let mut hi = [0i64; MAX_GRID_DIM];
            let mut valid = true;
            for k2 in 0..self.dim {
                match ranges[k2][pick[k2]] {
                    Some((a, b)) => {
                        lo[k2] = a;
                        hi[k2] = b;
                    }
                    None => {
                        valid = false;
                        break;
                    }
                }
            }
            if valid {
                total += self.count_index_box(&lo, &hi);
            }
            let mut k2 = 0;
            loop {
                if k2 == self.dim {
                    return total;
                }
                pick[k2] += 1;
                if pick[k2] < 2 {
                    break;
                }
                pick[k2] = 0;
                k2 += 1;
            }
        }
    }

    /// Map a raw inclusive index range to one or two in-range segments
    /// (wrapping on the torus, clipping otherwise).
    fn resolve_range(&self, lo: i64, hi: i64) -> [Option<(i64, i64)>; 2] {
        if self.torus {
            if hi - lo + 1 >= self.ncpd {
                return [Some((0, self.ncpd - 1)), None];
            }
            let a = lo.rem_euclid(self.ncpd);
            let b = hi.rem_euclid(self.ncpd);
            if a <= b {
                [Some((a, b)), None]
            } else {
                [Some((a, self.ncpd - 1)), Some((0, b))]
            }
        } else {
            let a = lo.max(0);
            let b = hi.min(self.ncpd - 1);
            if a > b {
                [None, None]
            } else {
                [Some((a, b)), None]
            }
        }
    }

    /// Visit annulus cells `lo_d <= cheb distance <= hi_d` around `center` in
    /// a fixed order; `f` returns false to stop early.
    fn walk_annulus(
        &self,
        center: &[i64; MAX_GRID_DIM],
        lo_d: i64,
        hi_d: i64,
        mut f: impl FnMut(usize) -> bool,
    ) {
        let (off_lo, off_hi) = self.offset_range(hi_d);
        let mut off = [0i64; MAX_GRID_DIM];
        self.walk_rec(center, lo_d, off_lo, off_hi, 0, &mut off, &mut f);
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_rec(
        &self,
        center: &[i64; MAX_GRID_DIM],
        lo_d: i64,
        off_lo: i64,
        off_hi: i64,
        k: usize,
        off: &mut [i64; MAX_GRID_DIM],
        f: &mut impl FnMut(usize) -> bool,
    ) -> bool {
        if k == self.dim {
            let cheb = (0..self.dim).map(|k2| off[k2].abs()).max().unwrap_or(0);
            if cheb < lo_d {
                return true;
            }
            let mut coords = [0i64; MAX_GRID_DIM];
            for k2 in 0..self.dim {
                let raw = center[k2] + off[k2];
                coords[k2] = if self.torus {
                    raw.rem_euclid(self.ncpd)
                } else if raw < 0 || raw >= self.ncpd {
                    return true; // outside the box
                } else {
                    raw
                };
            }
            return f(self.lin_of(&coords));
        }
        for o in off_lo..=off_hi {
            off[k] = o;
            if !self.walk_rec(center, lo_d, off_lo, off_hi, k + 1, off, f) {
                return false;
            }
        }
        true
    }

    fn max_cheb(&self) -> i64 {
        if self.torus {
            self.ncpd / 2
        } else {
            self.ncpd - 1
        }
    }
}

fn sample_grid<F: Real, P: PairProb<F>>(
    points: &PointCloud<F>,
    weights: &WeightVector<F>,
    metric: &Metric<F>,
    ctx: &P,
    kernel: &KernelSpec<F>,
    edge_seed: u64,
) -> Vec<(u32, u32)> {
    let side = match points.domain() {
        Domain::Box(b) => b.side(),
        Domain::Ball { radius, .. } => *radius * F::from_f64(2.0),
    };
    let torus = matches!(metric, Metric::Torus { .. });
    let grid = Grid::build(points, side, torus);
    let w_dom = kernel.dominating_weight(weights.min(), weights.max());

    // Near work: ordered cell pairs at Chebyshev distance <= 1, every pair
    // tested against its own uniform.
    let near: Vec<Vec<(u32, u32)>> = (0..grid.ncells())
        .into_par_iter()
        .map(|a| {
            let mut out = Vec::new();
            let ca = grid.cell_coords(a);
            let mut partners = std::collections::BTreeSet::new();
            grid.walk_annulus(&ca, 0, 1, |b| {
                partners.insert(b);
                true
            });
            for &b in &partners {
                if b < a {
                    continue;
                }
                let pa = grid.cell_points(a);
                if b == a {
                    for (s, &i) in pa.iter().enumerate() {
                        for &j in &pa[s + 1..] {
                            test_pair(points, weights, metric, ctx, edge_seed, i, j, &mut out);
                        }
                    }
                } else {
                    for &i in pa {
                        for &j in grid.cell_points(b) {
                            test_pair(points, weights, metric, ctx, edge_seed, i, j, &mut out);
                        }
                    }
                }
            }
            out
        })
        .collect();

    // Far work: per source vertex, distance-doubling bands of cells at
    // Chebyshev distance >= 2, swept with geometric skipping.
    let max_d = grid.max_cheb();
    let far: Vec<Vec<(u32, u32)>> = (0..points.len() as u32)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            if max_d < 2 {
                return out;
            }
            let cell = grid.vertex_cell(points, i);
            let wi = weights.get(i as usize);
            let mut lo_d: i64 = 2;
            let mut band = 0u64;
            while lo_d <= max_d {
                let hi_d = (2 * lo_d - 1).min(max_d);
                let count =
                    grid.count_cheb_ball(&cell, hi_d) - grid.count_cheb_ball(&cell, lo_d - 1);
                if count > 0 {
                    let t_min = F::from_f64((lo_d - 1) as f64) * grid.cell_side;
                    let p_bar = ctx.envelope(t_min, wi, w_dom);
                    if p_bar > F::zero() {
                        sweep_band(
                            &grid,
                            points,
                            weights,
                            metric,
                            ctx,
                            edge_seed,
                            i,
                            &cell,
                            lo_d,
                            hi_d,
                            count,
                            p_bar.min(F::one()).as_f64(),
                            band,
                            &mut out,
                        );
                    }
                }
                band += 1;
                lo_d = hi_d + 1;
            }
            out
        })
        .collect();

    let mut edges: Vec<(u32, u32)> = near.into_iter().chain(far).flatten().collect();
    edges.sort_unstable();
    edges
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn test_pair<F: Real, P: PairProb<F>>(
    points: &PointCloud<F>,
    weights: &WeightVector<F>,
    metric: &Metric<F>,
    ctx: &P,
    edge_seed: u64,
    i: u32,
    j: u32,
    out: &mut Vec<(u32, u32)>,
) {
    let t = metric
        .distance(points.point(i as usize), points.point(j as usize))
        .expect("equal dimensions");
    let p = ctx.prob(t, weights.get(i as usize), weights.get(j as usize));
    if F::from_f64(pair_uniform(edge_seed, i, j)) < p {
        out.push((i.min(j), i.max(j)));
    }
}

/// Sweep one (source vertex, band) block: propose candidates with geometric
/// jumps under the constant envelope `p_bar`, then accept each proposal with
/// probability `p / p_bar` using the pair's own uniform. Candidates with id
/// below the source are decided from the other side and skipped here.
#[allow(clippy::too_many_arguments)]
fn sweep_band<F: Real, P: PairProb<F>>(
    grid: &Grid<F>,
    points: &PointCloud<F>,
    weights: &WeightVector<F>,
    metric: &Metric<F>,
    ctx: &P,
    edge_seed: u64,
    i: u32,
    cell: &[i64; MAX_GRID_DIM],
    lo_d: i64,
    hi_d: i64,
    count: u64,
    p_bar: f64,
    band: u64,
    out: &mut Vec<(u32, u32)>,
) {
    let mut block = BlockUniforms::new(edge_seed, ((i as u64) << 8) | band);
    let mut next: u64 = 0;
    let mut proposals: Vec<u64> = Vec::new();
    loop {
        let jump = if p_bar >= 1.0 {
            0
        } else {
            let u = block.next_uniform();
            ((1.0 - u).ln() / (1.0 - p_bar).ln()).floor() as u64
        };
        next = next.saturating_add(jump);
        if next >= count {
            break;
        }
        proposals.push(next);
        next += 1;
    }
    if proposals.is_empty() {
        return;
    }
    // Locate proposal positions with one ordered walk over the band's cells.
    let mut prop_idx = 0usize;
    let mut seen: u64 = 0;
    let pbar_f = F::from_f64(p_bar);
    let pi = points.point(i as usize);
    let wi = weights.get(i as usize);
    grid.walk_annulus(cell, lo_d, hi_d, |lin| {
        let c = grid.cell_count(lin);
        while prop_idx < proposals.len() && proposals[prop_idx] < seen + c {
            let j = grid.cell_points(lin)[(proposals[prop_idx] - seen) as usize];
            prop_idx += 1;
            if j <= i {
                continue;
            }
            let t = metric
                .distance(pi, points.point(j as usize))
                .expect("equal dimensions");
            let p = ctx.prob(t, wi, weights.get(j as usize));
            let u = F::from_f64(pair_uniform(edge_seed, i, j));
            if u * pbar_f < p {
                out.push((i, j));
            }
        }
        seen += c;
        prop_idx < proposals.len()
    });
    debug_assert!(prop_idx >= proposals.len(), "band walk missed proposals");
}

// ---------------------------------------------------------------------------
// Public generators
// ---------------------------------------------------------------------------

/// Parameters of a finite blown-up ensemble.
#[derive(Debug, Clone)]
pub struct FiniteParams<F> {
    pub n: usize,
    pub dimension: u32,
    pub kernel: KernelSpec<F>,
    pub weight_law: WeightLaw<F>,
    pub metric: Metric<F>,
    pub mode: SampleMode,
}

/// Sample one finite SIRG: locations uniform on `I_n`, weights from the law,
/// each pair joined independently with the finite kernel probability.
pub fn generate_finite<F: Real>(
    params: &FiniteParams<F>,
    seed: u64,
) -> Result<SpatialGraph<F>, GeneratorError> {
    let n = params.n;
    if n == 0 {
        return Err(GeneratorError::InvalidParameter("n must be >= 1".into()));
    }
    if matches!(
        params.kernel.form(),
        KernelForm::ThrgLimit { .. } | KernelForm::PhrgLimit { .. }
    ) && params.dimension != 1
    {
        return Err(GeneratorError::InvalidParameter(
            "hyperbolic kernels are one-dimensional".into(),
        ));
    }
    let bx = BoxSpec::blown_up(n, params.dimension)?;
    let points = sample_uniform_box(n, &bx, &mut stream(seed, StreamKind::Locations))?;
    let weights = sample_weights(&params.weight_law, n, &mut stream(seed, StreamKind::Weights))?;
    let total = match params.kernel.form() {
        KernelForm::Girg { .. } => {
            let t = weights.total();
            if !(t > F::zero()) {
                return Err(GeneratorError::InvalidParameter(format!(
                    "GIRG needs a positive total weight, got {t}"
                )));
            }
            Some(t)
        }
        _ => None,
    };
    let ctx = FiniteKernel {
        kernel: &params.kernel,
        ensemble_n: n,
        total_weight: total,
    };
    // Validate one evaluation up front so the hot loop can unwrap.
    params
        .kernel
        .eval_finite(n, F::zero(), weights.get(0), weights.get(0), total)?;
    let (edges, warnings) = sample_edges(
        &points,
        &weights,
        &params.metric,
        &ctx,
        &params.kernel,
        seed,
        params.mode,
    );
    let adj = Csr::from_edges(n, &edges);
    Ok(SpatialGraph {
        points,
        weights,
        adj,
        meta: GraphMeta {
            kernel_id: params.kernel.name(),
            seed,
            metric: params.metric,
            ensemble_n: Some(n),
            mode: format!("{:?}", params.mode),
            warnings,
        },
        root: None,
        polar: None,
    })
}

/// Sample the infinite SIRG restricted to the centered ball of radius `r`:
/// a root at the origin with an independent weight, Poisson(vol) further
/// uniform points with i.i.d. weights, and limiting-kernel edges (root
/// included). The root is marked.
pub fn sample_limit_ball<F: Real>(
    kernel: &KernelSpec<F>,
    weight_law: &WeightLaw<F>,
    radius: F,
    dimension: u32,
    mean_weight: Option<F>,
    seed: u64,
) -> Result<SpatialGraph<F>, GeneratorError> {
    if !(radius > F::zero()) {
        return Err(GeneratorError::InvalidParameter(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    let mean_weight = match mean_weight {
        Some(m) => Some(m),
        None => kernel.limit_mean_weight(weight_law)?,
    };
    let vol = ball_volume(dimension, radius).as_f64();
    let count = {
        use rand_distr::Distribution;
        let mut rng = stream(seed, StreamKind::BallCount);
        rand_distr::Poisson::new(vol)
            .expect("positive ball volume")
            .sample(&mut rng) as usize
    };
    let mut coords = vec![F::zero(); dimension as usize];
    coords.extend(sample_in_ball(
        count,
        radius,
        dimension,
        &mut stream(seed, StreamKind::BallPoints),
    ));
    let points = PointCloud::new(dimension, coords, Domain::Ball { radius, dimension });
    let root_weight = weight_law.sample_one(&mut stream(seed, StreamKind::RootWeight));
    let mut weight_values = vec![root_weight];
    if count > 0 {
        weight_values.extend(
            sample_weights(weight_law, count, &mut stream(seed, StreamKind::Weights))?
                .values()
                .iter()
                .copied(),
        );
    }
    let weights = WeightVector::new(weight_values);
    let ctx = LimitKernel {
        kernel,
        mean_weight,
    };
    kernel.eval_limit(F::zero(), root_weight, root_weight, mean_weight)?;
    let n = count + 1;
    let mode = if n <= 256 {
        SampleMode::Exact
    } else {
        SampleMode::Grid
    };
    let (edges, warnings) = sample_edges(
        &points,
        &weights,
        &Metric::Euclidean,
        &ctx,
        kernel,
        seed,
        mode,
    );
    let adj = Csr::from_edges(n, &edges);
    Ok(SpatialGraph {
        points,
        weights,
        adj,
        meta: GraphMeta {
            kernel_id: format!("limit:{}", kernel.name()),
            seed,
            metric: Metric::Euclidean,
            ensemble_n: None,
            mode: format!("{mode:?}"),
            warnings,
        },
        root: Some(0),
        polar: None,
    })
}

/// Hyperbolic variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HrgVariant<F> {
    Threshold,
    Parametrized { t_h: F },
}

/// Sample a native hyperbolic random graph: angles uniform on `[-pi, pi]`,
/// radii from the hyperbolic radial law, edges by the native rule on
/// hyperbolic distances. The stored graph carries the transformed blown-up
/// SIRG coordinates (locations `n x` on the circle of circumference `n`,
/// weights `exp((R_n - r)/2)`) plus the polar originals, so it doubles as a
/// one-dimensional SIRG sample.
pub fn generate_hrg_native<F: Real>(
    n: usize,
    alpha_h: F,
    nu: F,
    variant: HrgVariant<F>,
    seed: u64,
) -> Result<SpatialGraph<F>, GeneratorError> {
    if n == 0 {
        return Err(GeneratorError::InvalidParameter("n must be >= 1".into()));
    }
    if !(alpha_h > F::from_f64(0.5)) || !(nu > F::zero()) {
        return Err(GeneratorError::InvalidParameter(format!(
            "HRG needs alpha_H > 1/2 and nu > 0, got ({alpha_h}, {nu})"
        )));
    }
    if let HrgVariant::Parametrized { t_h } = variant {
        if !(t_h > F::zero() && t_h < F::one()) {
            return Err(GeneratorError::InvalidParameter(format!(
                "PHRG needs 0 < T_H < 1, got {t_h}"
            )));
        }
    }
    let r_n = crate::weights::hrg_disk_radius(n, nu);
    let mut angle_rng = stream(seed, StreamKind::HrgAngles);
    let mut radius_rng = stream(seed, StreamKind::HrgRadii);
    let pi = F::PI();
    let two = F::from_f64(2.0);
    let mut polar = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    let mut weight_values = Vec::with_capacity(n);
    let n_f = F::from_f64(n as f64);
    for _ in 0..n {
        let theta = (F::unit_uniform(&mut angle_rng) * two - F::one()) * pi;
        let r =
            crate::weights::hrg_radial_inverse_cdf(F::unit_uniform(&mut radius_rng), alpha_h, r_n);
        let (x, w) = crate::weights::hrg_transform(r, theta, r_n).map_err(GeneratorError::Weights)?;
        polar.push((r, theta));
        coords.push(x * n_f);
        weight_values.push(w);
    }
    let bx = BoxSpec::blown_up(n, 1)?;
    let points = PointCloud::new(1, coords, Domain::Box(bx));
    let weights = WeightVector::new(weight_values);

    // Native pairwise rule on hyperbolic distances, sharing the pair uniforms
    // with the transformed route. Plain pair loop; the fast path for large n
    // is the transformed route through grid mode.
    let mut blocks: Vec<Vec<(u32, u32)>> = (0..n as u32)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            let (ri, thi) = polar[i as usize];
            for j in (i + 1)..n as u32 {
                let (rj, thj) = polar[j as usize];
                let p = match variant {
                    HrgVariant::Threshold => {
                        crate::kernels::thrg_native_prob(thi - thj, ri, rj, r_n)
                    }
                    HrgVariant::Parametrized { t_h } => {
                        crate::kernels::phrg_native_prob(thi - thj, ri, rj, r_n, t_h)
                    }
                };
                if F::from_f64(pair_uniform(seed, i, j)) < p {
                    out.push((i, j));
                }
            }
            out
        })
        .collect();
    let edges: Vec<(u32, u32)> = blocks.drain(..).flatten().collect();
    let adj = Csr::from_edges(n, &edges);
    let kernel_id = match variant {
        HrgVariant::Threshold => format!("thrg-native({alpha_h},{nu})"),
        HrgVariant::Parametrized { t_h } => format!("phrg-native({alpha_h},{nu},{t_h})"),
    };
    Ok(SpatialGraph {
        points,
        weights,
        adj,
        meta: GraphMeta {
            kernel_id,
            seed,
            metric: Metric::Torus { side: bx.side() },
            ensemble_n: Some(n),
            mode: "Exact".into(),
            warnings: Vec::new(),
        },
        root: None,
        polar: Some(polar),
    })
}
