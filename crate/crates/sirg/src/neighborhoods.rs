//! Rooted neighborhoods: graph balls, Euclidean balls, canonical codes for
//! rooted-isomorphism classes, empirical neighborhood histograms, and the
//! spatial/graph coupling diagnostic.
//!
//! Canonical codes are computed by color refinement that keeps the root in
//! its own cell, followed by individualization backtracking over the
//! remaining ambiguity (with twin pruning so cliques and leaf bundles stay
//! cheap); the minimum relabeled adjacency encoding over all branches is the
//! code. Equal codes hold exactly for rooted-isomorphic graphs, which the
//! test suite pins against the brute-force permutation oracle in
//! [`reference`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::generator::{sample_limit_ball, GeneratorError, SpatialGraph};
use crate::kernels::KernelSpec;
use crate::rng::replica_seed;
use crate::scalar::Real;
use crate::weights::WeightLaw;

/// Default cap on ball sizes before they are binned as "oversized".
pub const DEFAULT_BALL_CAP: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum NeighborhoodError {
    #[error("vertex {0} out of range")]
    BadVertex(u32),
    #[error("rooted graph exceeds the {0}-vertex cap")]
    Oversized(usize),
    #[error("histogram tags differ: {0} vs {1}")]
    TagMismatch(String, String),
    #[error("coupling radius overflows for (a, m, K) = ({a}, {m}, {k})")]
    RadiusOverflow { a: f64, m: f64, k: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Small rooted graph with bitset adjacency; at most 64 vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootedGraph {
    n: usize,
    rows: Vec<u64>,
    root: usize,
    depth: Option<Vec<u8>>,
}

impl RootedGraph {
    pub fn new(n: usize, edges: &[(usize, usize)], root: usize) -> Self {
        assert!(n >= 1 && n <= 64 && root < n);
        let mut rows = vec![0u64; n];
        for &(a, b) in edges {
            assert!(a < n && b < n && a != b);
            rows[a] |= 1 << b;
            rows[b] |= 1 << a;
        }
        RootedGraph {
            n,
            rows,
            root,
            depth: None,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.rows[a] >> b & 1 == 1
    }

    pub fn degree(&self, v: usize) -> u32 {
        self.rows[v].count_ones()
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum::<usize>() / 2
    }

    pub fn depths(&self) -> Option<&[u8]> {
        self.depth.as_deref()
    }

    /// Graph ball of radius `k` around the root, inside this graph.
    pub fn ball(&self, k: u32) -> RootedGraph {
        let mut depth = vec![u8::MAX; self.n];
        depth[self.root] = 0;
        let mut frontier = vec![self.root];
        let mut members = vec![self.root];
        for level in 1..=k.min(64) as u8 {
            let mut next = Vec::new();
            for &v in &frontier {
                let mut nb = self.rows[v];
                while nb != 0 {
                    let u = nb.trailing_zeros() as usize;
                    nb &= nb - 1;
                    if depth[u] == u8::MAX {
                        depth[u] = level;
                        next.push(u);
                        members.push(u);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        members.sort_unstable();
        let mut local = vec![usize::MAX; self.n];
        let root_pos = members.iter().position(|&v| v == self.root).unwrap();
        members.swap(0, root_pos);
        for (idx, &v) in members.iter().enumerate() {
            local[v] = idx;
        }
        let mut rows = vec![0u64; members.len()];
        for (idx, &v) in members.iter().enumerate() {
            let mut nb = self.rows[v];
            while nb != 0 {
                let u = nb.trailing_zeros() as usize;
                nb &= nb - 1;
                if local[u] != usize::MAX {
                    rows[idx] |= 1 << local[u];
                }
            }
        }
        RootedGraph {
            n: members.len(),
            rows,
            root: 0,
            depth: Some(members.iter().map(|&v| depth[v]).collect()),
        }
    }
}

/// Outcome of a ball extraction: either a small rooted graph or the
/// distinguished oversized bucket.
#[derive(Debug, Clone, PartialEq)]
pub enum BallOutcome {
    Ball(RootedGraph),
    Oversized,
}

impl BallOutcome {
    pub fn code(&self) -> CanonicalCode {
        match self {
            BallOutcome::Ball(g) => canonical_code(g),
            BallOutcome::Oversized => CanonicalCode::oversized(),
        }
    }

    pub fn unwrap_ball(self) -> RootedGraph {
        match self {
            BallOutcome::Ball(g) => g,
            BallOutcome::Oversized => panic!("ball exceeded the cap"),
        }
    }
}

/// BFS ball of graph-distance `k` around `root`, as an induced rooted
/// subgraph with the root relabeled to 0. Exceeding `cap` yields the
/// oversized outcome.
pub fn graph_ball<F: Real>(
    g: &SpatialGraph<F>,
    root: u32,
    k: u32,
    cap: usize,
) -> Result<BallOutcome, NeighborhoodError> {
    if (root as usize) >= g.n() {
        return Err(NeighborhoodError::BadVertex(root));
    }
    let cap = cap.min(64);
    let mut depth: BTreeMap<u32, u8> = BTreeMap::new();
    depth.insert(root, 0);
    let mut frontier = vec![root];
    for level in 1..=k.min(255) as u8 {
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in g.adj.neighbors(v) {
                if let std::collections::btree_map::Entry::Vacant(e) = depth.entry(u) {
                    e.insert(level);
                    next.push(u);
                    if depth.len() > cap {
                        return Ok(BallOutcome::Oversized);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(BallOutcome::Ball(induced_rooted(g, &depth, root)))
}

/// Induced subgraph on the vertices whose location lies strictly within
/// spatial distance `r` of the root's location (open ball, root included),
/// rooted at the root; possibly disconnected. Distances use the graph's own
/// metric.
pub fn euclidean_ball_subgraph<F: Real>(
    g: &SpatialGraph<F>,
    root: u32,
    r: F,
    cap: usize,
) -> Result<BallOutcome, NeighborhoodError> {
    if (root as usize) >= g.n() {
        return Err(NeighborhoodError::BadVertex(root));
    }
    let cap = cap.min(64);
    let mut members: BTreeMap<u32, u8> = BTreeMap::new();
    let root_loc = g.location(root);
    for v in 0..g.n() as u32 {
        let d = g
            .meta
            .metric
            .distance(root_loc, g.location(v))
            .expect("same dimension");
        if v == root || d < r {
            members.insert(v, 0);
            if members.len() > cap {
                return Ok(BallOutcome::Oversized);
            }
        }
    }
    let mut out = induced_rooted(g, &members, root);
    out.depth = None;
    Ok(BallOutcome::Ball(out))
}

fn induced_rooted<F: Real>(
    g: &SpatialGraph<F>,
    members: &BTreeMap<u32, u8>,
    root: u32,
) -> RootedGraph {
    let mut ids: Vec<u32> = members.keys().copied().collect();
    let root_pos = ids.iter().position(|&v| v == root).unwrap();
    ids.swap(0, root_pos);
    let local: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut rows = vec![0u64; ids.len()];
    for (idx, &v) in ids.iter().enumerate() {
        for &u in g.adj.neighbors(v) {
            if let Some(&j) = local.get(&u) {
                rows[idx] |= 1 << j;
            }
        }
    }
    RootedGraph {
        n: ids.len(),
        rows,
        root: 0,
        depth: Some(ids.iter().map(|v| members[v]).collect()),
    }
}

// ---------------------------------------------------------------------------
// Canonical codes
// ---------------------------------------------------------------------------

/// Total-order key for rooted-isomorphism classes: equal codes if and only if
/// the rooted graphs are rooted-isomorphic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalCode(Vec<u8>);

impl CanonicalCode {
    pub fn oversized() -> Self {
        CanonicalCode(vec![0xFF])
    }

    pub fn is_oversized(&self) -> bool {
        self.0 == [0xFF]
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    /// Vertex count encoded in the code (None for the oversized bucket).
    pub fn vertex_count(&self) -> Option<usize> {
        if self.is_oversized() {
            None
        } else {
            Some(self.0[0] as usize)
        }
    }
}

/// Code of the single-vertex rooted graph (an isolated root).
pub fn isolated_root_code() -> CanonicalCode {
    canonical_code(&RootedGraph::new(1, &[], 0))
}

/// Compute the canonical code of a rooted graph.
pub fn canonical_code(g: &RootedGraph) -> CanonicalCode {
    let mut best: Option<Vec<u8>> = None;
    let initial = if g.n == 1 {
        vec![vec![g.root]]
    } else {
        vec![
            vec![g.root],
            (0..g.n).filter(|&v| v != g.root).collect::<Vec<_>>(),
        ]
    };
    search(g, refine(g, initial), &mut best);
    CanonicalCode(best.expect("at least one labeling"))
}

/// True iff a root-preserving isomorphism exists; implemented as code
/// equality.
pub fn rooted_isomorphic(a: &RootedGraph, b: &RootedGraph) -> bool {
    if a.n != b.n || a.edge_count() != b.edge_count() {
        return false;
    }
    canonical_code(a) == canonical_code(b)
}

/// Stable color refinement: split cells by multisets of neighbor counts per
/// cell until stable. Cell order is isomorphism-invariant.
fn refine(g: &RootedGraph, mut cells: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    loop {
        let masks: Vec<u64> = cells
            .iter()
            .map(|c| c.iter().fold(0u64, |m, &v| m | 1 << v))
            .collect();
        let mut next: Vec<Vec<usize>> = Vec::with_capacity(cells.len());
        let mut split = false;
        for cell in &cells {
            if cell.len() == 1 {
                next.push(cell.clone());
                continue;
            }
            let mut tagged: Vec<(Vec<u32>, usize)> = cell
                .iter()
                .map(|&v| {
                    let sig = masks
                        .iter()
                        .map(|&m| (g.rows[v] & m).count_ones())
                        .collect::<Vec<_>>();
                    (sig, v)
                })
                .collect();
            tagged.sort();
            let mut start = 0;
            for i in 1..=tagged.len() {
                if i == tagged.len() || tagged[i].0 != tagged[start].0 {
                    next.push(tagged[start..i].iter().map(|t| t.1).collect());
                    if i - start != cell.len() {
                        split = true;
                    }
                    start = i;
                }
            }
        }
        cells = next;
        if !split {
            return cells;
        }
    }
}

fn search(g: &RootedGraph, cells: Vec<Vec<usize>>, best: &mut Option<Vec<u8>>) {
    if let Some(target) = cells.iter().position(|c| c.len() > 1) {
        // Twin pruning: vertices in the target cell with identical
        // neighborhoods (up to each other) are exchanged by an automorphism,
        // so one branch per twin class suffices.
        let cell = &cells[target];
        let mut reps: Vec<usize> = Vec::new();
        'cand: for &v in cell {
            for &u in &reps {
                let mu = !(1u64 << u | 1u64 << v);
                if g.rows[u] & mu == g.rows[v] & mu {
                    continue 'cand;
                }
            }
            reps.push(v);
        }
        for v in reps {
            let mut child: Vec<Vec<usize>> = Vec::with_capacity(cells.len() + 1);
            for (i, c) in cells.iter().enumerate() {
                if i == target {
                    child.push(vec![v]);
                    child.push(c.iter().copied().filter(|&u| u != v).collect());
                } else {
                    child.push(c.clone());
                }
            }
            search(g, refine(g, child), best);
        }
    } else {
        // Discrete partition: cells give the relabeling.
        let mut label = vec![0usize; g.n];
        for (i, c) in cells.iter().enumerate() {
            label[c[0]] = i;
        }
        let code = encode(g, &label);
        match best {
            Some(b) if *b <= code => {}
            _ => *best = Some(code),
        }
    }
}

/// Byte encoding of the relabeled graph: vertex count then the packed upper
/// triangle in row-major order.
fn encode(g: &RootedGraph, label: &[usize]) -> Vec<u8> {
    let n = g.n;
    let mut adj = vec![0u64; n];
    for v in 0..n {
        let mut nb = g.rows[v];
        while nb != 0 {
            let u = nb.trailing_zeros() as usize;
            nb &= nb - 1;
            adj[label[v]] |= 1 << label[u];
        }
    }
    let mut out = Vec::with_capacity(1 + n * (n - 1) / 16 + 1);
    out.push(n as u8);
    let mut acc = 0u8;
    let mut bits = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc = (acc << 1) | (adj[i] >> j & 1) as u8;
            bits += 1;
            if bits == 8 {
                out.push(acc);
                acc = 0;
                bits = 0;
            }
        }
    }
    if bits > 0 {
        out.push(acc << (8 - bits));
    }
    out
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// What kind of ball a histogram was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BallKind {
    Graph,
    Euclidean,
}

/// Histogram over canonical codes of rooted balls.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodHistogram {
    counts: BTreeMap<CanonicalCode, u64>,
    total: u64,
    pub kind: BallKind,
    /// Graph-ball radius `K`, or the spatial radius for Euclidean balls.
    pub radius: f64,
}

impl NeighborhoodHistogram {
    pub fn new(kind: BallKind, radius: f64) -> Self {
        NeighborhoodHistogram {
            counts: BTreeMap::new(),
            total: 0,
            kind,
            radius,
        }
    }

    pub fn record(&mut self, code: CanonicalCode) {
        *self.counts.entry(code).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, code: &CanonicalCode) -> u64 {
        self.counts.get(code).copied().unwrap_or(0)
    }

    pub fn proportion(&self, code: &CanonicalCode) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(code) as f64 / self.total as f64
        }
    }

    pub fn codes(&self) -> impl Iterator<Item = (&CanonicalCode, u64)> {
        self.counts.iter().map(|(c, &n)| (c, n))
    }

    pub fn oversized_mass(&self) -> f64 {
        self.proportion(&CanonicalCode::oversized())
    }

    fn tag(&self) -> String {
        format!("{:?}@{}", self.kind, self.radius)
    }

    /// Merge another histogram with identical tags into this one.
    pub fn merge(&mut self, other: &NeighborhoodHistogram) -> Result<(), NeighborhoodError> {
        if self.kind != other.kind || self.radius != other.radius {
            return Err(NeighborhoodError::TagMismatch(self.tag(), other.tag()));
        }
        for (code, n) in &other.counts {
            *self.counts.entry(code.clone()).or_insert(0) += n;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": format!("{:?}", self.kind),
            "radius": self.radius,
            "total": self.total,
            "entries": self
                .counts
                .iter()
                .map(|(code, &count)| {
                    serde_json::json!({
                        "code": code.to_hex(),
                        "count": count,
                        "proportion": count as f64 / self.total.max(1) as f64,
                    })
                })
                .collect::<Vec<_>>(),
        })
    }
}

/// Total variation distance over the union of supports; tags must agree.
pub fn tv_distance(
    a: &NeighborhoodHistogram,
    b: &NeighborhoodHistogram,
) -> Result<f64, NeighborhoodError> {
    if a.kind != b.kind || a.radius != b.radius {
        return Err(NeighborhoodError::TagMismatch(a.tag(), b.tag()));
    }
    let mut keys: Vec<&CanonicalCode> = a.counts.keys().collect();
    keys.extend(b.counts.keys());
    keys.sort();
    keys.dedup();
    let mut total = 0.0;
    for k in keys {
        total += (a.proportion(k) - b.proportion(k)).abs();
    }
    Ok(total / 2.0)
}

/// Which vertices to sample for an empirical histogram.
#[derive(Debug, Clone, Copy)]
pub enum VertexSample {
    All,
    Uniform { count: usize, seed: u64 },
}

/// Ball mode for empirical histograms.
#[derive(Debug, Clone, Copy)]
pub enum BallMode<F> {
    Graph { k: u32 },
    Euclidean { r: F },
}

/// Histogram of ball codes over all vertices (or a uniform vertex sample).
pub fn empirical_neighborhood_distribution<F: Real>(
    g: &SpatialGraph<F>,
    mode: BallMode<F>,
    sample: VertexSample,
    cap: usize,
) -> Result<NeighborhoodHistogram, NeighborhoodError> {
    let roots: Vec<u32> = match sample {
        VertexSample::All => (0..g.n() as u32).collect(),
        VertexSample::Uniform { count, seed } => {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, crate::rng::StreamKind::Sampling);
            (0..count)
                .map(|_| rng.random_range(0..g.n() as u32))
                .collect()
        }
    };
    let codes: Vec<CanonicalCode> = roots
        .par_iter()
        .map(|&v| {
            let outcome = match mode {
                BallMode::Graph { k } => graph_ball(g, v, k, cap),
                BallMode::Euclidean { r } => euclidean_ball_subgraph(g, v, r, cap),
            };
            outcome.map(|o| o.code())
        })
        .collect::<Result<_, _>>()?;
    let mut hist = NeighborhoodHistogram::new(
        match mode {
            BallMode::Graph { .. } => BallKind::Graph,
            BallMode::Euclidean { .. } => BallKind::Euclidean,
        },
        match mode {
            BallMode::Graph { k } => k as f64,
            BallMode::Euclidean { r } => r.as_f64(),
        },
    );
    for c in codes {
        hist.record(c);
    }
    Ok(hist)
}

/// Monte Carlo estimate of the limiting K-ball law: sample the infinite
/// graph inside the ball of radius `r` and take the root's K-ball.
///
/// `r` should be at least `coupling_radius(a, m, K)` for the configured
/// coupling parameters so the truncation error is controlled.
#[allow(clippy::too_many_arguments)]
pub fn limit_neighborhood_distribution<F: Real>(
    kernel: &KernelSpec<F>,
    weight_law: &WeightLaw<F>,
    k: u32,
    r: F,
    replicas: usize,
    dimension: u32,
    mean_weight: Option<F>,
    seed: u64,
    cap: usize,
) -> Result<NeighborhoodHistogram, GeneratorError> {
    let codes: Vec<CanonicalCode> = (0..replicas as u64)
        .into_par_iter()
        .map(|rep| {
            let g = sample_limit_ball(
                kernel,
                weight_law,
                r,
                dimension,
                mean_weight,
                replica_seed(seed, rep),
            )?;
            let outcome = graph_ball(&g, 0, k, cap).expect("root exists");
            Ok(outcome.code())
        })
        .collect::<Result<_, GeneratorError>>()?;
    let mut hist = NeighborhoodHistogram::new(BallKind::Graph, k as f64);
    for c in codes {
        hist.record(c);
    }
    Ok(hist)
}

// ---------------------------------------------------------------------------
// Coupling diagnostic
// ---------------------------------------------------------------------------

/// `r(a, m, K) = a^m + a^{m^2} + ... + a^{m^K}`.
pub fn coupling_radius(a: f64, m: f64, k: u32) -> Result<f64, NeighborhoodError> {
    if !(a > 1.0) || !(m > 1.0) || k < 1 {
        return Err(NeighborhoodError::InvalidParameter(format!(
            "coupling radius needs a > 1, m > 1, K >= 1, got ({a}, {m}, {k})"
        )));
    }
    let mut r = 0.0f64;
    let mut exp = 1.0f64;
    for _ in 1..=k {
        exp *= m;
        r += a.powf(exp);
    }
    if r.is_finite() {
        Ok(r)
    } else {
        Err(NeighborhoodError::RadiusOverflow { a, m, k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingOutcome {
    /// The K-ball inside the spatial ball matches the full K-ball.
    Match,
    /// They differ: some K-path leaves the spatial ball.
    Mismatch,
    /// A ball exceeded the cap; reported separately.
    Oversized,
}

/// Compare `B^{F_r}_root(K)` with `B^G_root(K)` for `r = r(a, m, K)`.
pub fn coupling_check<F: Real>(
    g: &SpatialGraph<F>,
    root: u32,
    a: f64,
    m: f64,
    k: u32,
    cap: usize,
) -> Result<CouplingOutcome, NeighborhoodError> {
    let r = F::from_f64(coupling_radius(a, m, k)?);
    if (root as usize) >= g.n() {
        return Err(NeighborhoodError::BadVertex(root));
    }
    // BFS to depth K restricted to the open spatial ball around the root's
    // location: this is exactly the K-ball of the induced subgraph F_r,
    // without materializing F_r.
    let cap = cap.min(64);
    let root_loc = g.location(root);
    let inside = |v: u32| {
        v == root
            || g.meta
                .metric
                .distance(root_loc, g.location(v))
                .expect("same dimension")
                < r
    };
    let mut depth: BTreeMap<u32, u8> = BTreeMap::new();
    depth.insert(root, 0);
    let mut frontier = vec![root];
    for level in 1..=k.min(255) as u8 {
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in g.adj.neighbors(v) {
                if !depth.contains_key(&u) && inside(u) {
                    depth.insert(u, level);
                    next.push(u);
                    if depth.len() > cap {
                        return Ok(CouplingOutcome::Oversized);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let bf = {
        let mut sub = induced_rooted(g, &depth, root);
        sub.depth = None;
        sub
    };
    let b = match graph_ball(g, root, k, cap)? {
        BallOutcome::Ball(b) => b,
        BallOutcome::Oversized => return Ok(CouplingOutcome::Oversized),
    };
    if rooted_isomorphic(&bf, &b) {
        Ok(CouplingOutcome::Match)
    } else {
        Ok(CouplingOutcome::Mismatch)
    }
}

/// Reference implementations used as independent test oracles.
pub mod reference {
    use super::RootedGraph;

    /// Brute-force rooted isomorphism: try every root-fixing bijection.
    pub fn rooted_isomorphic_by_enumeration(a: &RootedGraph, b: &RootedGraph) -> bool {
        if a.len() != b.len() || a.edge_count() != b.edge_count() {
            return false;
        }
        let n = a.len();
        let others: Vec<usize> = (0..n).filter(|&v| v != b.root()).collect();
        let mut perm = vec![usize::MAX; n];
        perm[a.root()] = b.root();
        let mut domain: Vec<usize> = (0..n).filter(|&v| v != a.root()).collect();
        try_assign(a, b, &mut perm, &mut domain, &others, 0)
    }

    fn try_assign(
        a: &RootedGraph,
        b: &RootedGraph,
        perm: &mut Vec<usize>,
        domain: &mut Vec<usize>,
        codomain: &[usize],
        k: usize,
    ) -> bool {
        if k == domain.len() {
            return true;
        }
        let v = domain[k];
        'target: for &w in codomain {
            if perm.iter().any(|&p| p == w) {
                continue;
            }
            if a.degree(v) != b.degree(w) {
                continue;
            }
            for i in 0..k {
                let u = domain[i];
                if a.has_edge(v, u) != b.has_edge(w, perm[u]) {
                    continue 'target;
                }
            }
            if a.has_edge(v, a.root()) != b.has_edge(w, b.root()) {
                continue;
            }
            perm[v] = w;
            if try_assign(a, b, perm, domain, codomain, k + 1) {
                return true;
            }
            perm[v] = usize::MAX;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_finite, FiniteParams, SampleMode};
    use crate::geometry::Metric;
    use rand::Rng;

    fn path3() -> RootedGraph {
        RootedGraph::new(3, &[(0, 1), (1, 2)], 1)
    }

    #[test]
    fn codes_distinguish_roots_and_match_relabelings() {
        // Path rooted at an endpoint vs at the midpoint.
        let end = RootedGraph::new(3, &[(0, 1), (1, 2)], 0);
        let mid = RootedGraph::new(3, &[(0, 1), (1, 2)], 1);
        assert_ne!(canonical_code(&end), canonical_code(&mid));
        // Relabeled endpoint-rooted path.
        let end2 = RootedGraph::new(3, &[(2, 1), (1, 0)], 2);
        assert_eq!(canonical_code(&end), canonical_code(&end2));
        // Single vertex has a fixed code.
        assert_eq!(
            canonical_code(&RootedGraph::new(1, &[], 0)),
            isolated_root_code()
        );
        // Triangle vs path rooted anywhere differ (edge counts).
        let tri = RootedGraph::new(3, &[(0, 1), (1, 2), (0, 2)], 0);
        assert!(!rooted_isomorphic(&tri, &end));
        assert!(rooted_isomorphic(&tri, &tri));
    }

    #[test]
    fn codes_match_enumeration_oracle_on_random_graphs() {
        let mut rng = crate::rng::stream(9, crate::rng::StreamKind::Sampling);
        for trial in 0..300 {
            let n = rng.random_range(2..=7usize);
            let mut edges_a = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < 0.4 {
                        edges_a.push((i, j));
                    }
                }
            }
            let a = RootedGraph::new(n, &edges_a, 0);
            // A root-fixing relabeling of `a`.
            let mut full: Vec<usize> = (0..n).collect();
            for i in (2..n).rev() {
                let j = rng.random_range(1..=i);
                full.swap(i, j);
            }
            let edges_b: Vec<(usize, usize)> =
                edges_a.iter().map(|&(u, v)| (full[u], full[v])).collect();
            let b = RootedGraph::new(n, &edges_b, 0);
            assert_eq!(canonical_code(&a), canonical_code(&b), "trial {trial}");
            assert!(reference::rooted_isomorphic_by_enumeration(&a, &b));

            // An independent random graph: oracle and codes must agree.
            let mut edges_c = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < 0.4 {
                        edges_c.push((i, j));
                    }
                }
            }
            let c = RootedGraph::new(n, &edges_c, 0);
            assert_eq!(
                canonical_code(&a) == canonical_code(&c),
                reference::rooted_isomorphic_by_enumeration(&a, &c),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn codes_handle_symmetric_graphs_quickly() {
        // Cliques and stars exercise the twin pruning.
        let mut edges = Vec::new();
        for i in 0..40usize {
            for j in (i + 1)..40 {
                edges.push((i, j));
            }
        }
        let clique = RootedGraph::new(40, &edges, 3);
        let code = canonical_code(&clique);
        assert_eq!(code.vertex_count(), Some(40));
        let star_edges: Vec<(usize, usize)> = (1..50).map(|i| (0, i)).collect();
        let star = RootedGraph::new(50, &star_edges, 0);
        let leaf_rooted = RootedGraph::new(50, &star_edges, 7);
        assert_ne!(canonical_code(&star), canonical_code(&leaf_rooted));
    }

    fn small_graph(seed: u64) -> SpatialGraph<f64> {
        generate_finite(
            &FiniteParams {
                n: 200,
                dimension: 1,
                kernel: KernelSpec::csfp(1.0, 3.0).unwrap(),
                weight_law: WeightLaw::pareto(2.0).unwrap(),
                metric: Metric::Euclidean,
                mode: SampleMode::Grid,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn graph_ball_basics() {
        let g = small_graph(1);
        // K=0 is a single vertex.
        let b0 = graph_ball(&g, 5, 0, 64).unwrap().unwrap_ball();
        assert_eq!(b0.len(), 1);
        assert_eq!(canonical_code(&b0), isolated_root_code());
        // Monotone in K, with stabilization.
        let mut prev = 1;
        let mut stabilized = false;
        for k in 1..12 {
            match graph_ball(&g, 5, k, 64).unwrap() {
                BallOutcome::Ball(b) => {
                    assert!(b.len() >= prev);
                    if b.len() == prev {
                        stabilized = true;
                    } else {
                        assert!(!stabilized, "ball grew after stabilizing");
                    }
                    prev = b.len();
                }
                BallOutcome::Oversized => break,
            }
        }
    }

    #[test]
    fn ball_includes_depth_k_edges() {
        // Triangle rooted anywhere: the 1-ball is the full triangle.
        let p = FiniteParams {
            n: 3,
            dimension: 1,
            kernel: KernelSpec::constant(1.0).unwrap(),
            weight_law: WeightLaw::Constant(1.0),
            metric: Metric::Euclidean,
            mode: SampleMode::Exact,
        };
        let g = generate_finite(&p, 1).unwrap();
        let b = graph_ball(&g, 0, 1, 64).unwrap().unwrap_ball();
        assert_eq!(b.len(), 3);
        assert_eq!(b.edge_count(), 3);
    }

    #[test]
    fn euclidean_ball_is_open_and_caps() {
        let g = small_graph(2);
        // r = 0: only the root (open ball excludes everyone else).
        let b = euclidean_ball_subgraph(&g, 3, 0.0, 64)
            .unwrap()
            .unwrap_ball();
        assert_eq!(b.len(), 1);
        // Huge r at the default cap: oversized (200 vertices).
        match euclidean_ball_subgraph(&g, 3, 1e9, 64).unwrap() {
            BallOutcome::Ball(_) => panic!("200 vertices exceed the 64 cap"),
            BallOutcome::Oversized => {}
        }
    }

    #[test]
    fn euclidean_ball_hand_instance() {
        // 3 vertices at 0, 0.5, 5 on a line, complete graph, root at 0,
        // r = 1: the ball keeps {0, 0.5} and their edge.
        let p = FiniteParams {
            n: 3,
            dimension: 1,
            kernel: KernelSpec::constant(1.0).unwrap(),
            weight_law: WeightLaw::Constant(1.0),
            metric: Metric::Euclidean,
            mode: SampleMode::Exact,
        };
        let mut g = generate_finite(&p, 1).unwrap();
        g.points = crate::geometry::PointCloud::new(
            1,
            vec![0.0, 0.5, 5.0],
            crate::geometry::Domain::Box(crate::geometry::BoxSpec::new(1, 12.0).unwrap()),
        );
        let b = euclidean_ball_subgraph(&g, 0, 1.0, 64)
            .unwrap()
            .unwrap_ball();
        assert_eq!(b.len(), 2);
        assert_eq!(b.edge_count(), 1);
        assert_eq!(b.root(), 0);
    }

    #[test]
    fn histogram_hand_proportions() {
        // Path a-b-c, K=1: endpoint code 2/3, midpoint code 1/3.
        let mut g = small_graph(3);
        g.adj = crate::generator::Csr::from_edges(3, &[(0, 1), (1, 2)]);
        g.points = crate::geometry::PointCloud::new(
            1,
            vec![0.0, 1.0, 2.0],
            crate::geometry::Domain::Box(crate::geometry::BoxSpec::new(1, 10.0).unwrap()),
        );
        g.weights = crate::weights::WeightVector::new(vec![1.0; 3]);
        let h = empirical_neighborhood_distribution(
            &g,
            BallMode::Graph { k: 1 },
            VertexSample::All,
            64,
        )
        .unwrap();
        let end = canonical_code(&RootedGraph::new(2, &[(0, 1)], 0));
        let mid = canonical_code(&path3());
        assert_eq!(h.count(&end), 2);
        assert_eq!(h.count(&mid), 1);
        assert_eq!(h.total(), 3);
        let sum: f64 = h.codes().map(|(c, _)| h.proportion(c)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_merge_matches_concatenation() {
        let g1 = small_graph(4);
        let g2 = small_graph(5);
        let h1 = empirical_neighborhood_distribution(
            &g1,
            BallMode::Graph { k: 1 },
            VertexSample::All,
            64,
        )
        .unwrap();
        let h2 = empirical_neighborhood_distribution(
            &g2,
            BallMode::Graph { k: 1 },
            VertexSample::All,
            64,
        )
        .unwrap();
        let mut merged = h1.clone();
        merged.merge(&h2).unwrap();
        assert_eq!(merged.total(), h1.total() + h2.total());
        for (code, _) in merged.codes() {
            assert_eq!(merged.count(code), h1.count(code) + h2.count(code));
        }
        let mut bad = NeighborhoodHistogram::new(BallKind::Graph, 2.0);
        assert!(bad.merge(&h1).is_err());
    }

    #[test]
    fn tv_distance_hand_values() {
        let a_code = isolated_root_code();
        let b_code = canonical_code(&RootedGraph::new(2, &[(0, 1)], 0));
        let mut h1 = NeighborhoodHistogram::new(BallKind::Graph, 1.0);
        let mut h2 = NeighborhoodHistogram::new(BallKind::Graph, 1.0);
        h1.record(a_code.clone());
        h1.record(b_code.clone());
        h2.record(a_code.clone());
        h2.record(a_code.clone());
        // {a: .5, b: .5} vs {a: 1.0} -> 0.5
        assert!((tv_distance(&h1, &h2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(tv_distance(&h1, &h1).unwrap(), 0.0);
        // Disjoint supports -> 1.
        let mut h3 = NeighborhoodHistogram::new(BallKind::Graph, 1.0);
        h3.record(canonical_code(&path3()));
        assert!((tv_distance(&h2, &h3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tv_is_a_metric_on_random_histograms() {
        // Symmetry and triangle inequality on random triples.
        let mut rng = crate::rng::stream(17, crate::rng::StreamKind::Sampling);
        let codes: Vec<CanonicalCode> = vec![
            isolated_root_code(),
            canonical_code(&RootedGraph::new(2, &[(0, 1)], 0)),
            canonical_code(&path3()),
            canonical_code(&RootedGraph::new(3, &[(0, 1), (1, 2), (0, 2)], 0)),
        ];
        for _ in 0..50 {
            let mut hs = Vec::new();
            for _ in 0..3 {
                let mut h = NeighborhoodHistogram::new(BallKind::Graph, 1.0);
                for _ in 0..30 {
                    h.record(codes[rng.random_range(0..codes.len())].clone());
                }
                hs.push(h);
            }
            let d01 = tv_distance(&hs[0], &hs[1]).unwrap();
            let d10 = tv_distance(&hs[1], &hs[0]).unwrap();
            let d02 = tv_distance(&hs[0], &hs[2]).unwrap();
            let d12 = tv_distance(&hs[1], &hs[2]).unwrap();
            assert_eq!(d01, d10);
            assert!(d01 <= d02 + d12 + 1e-12);
            assert!((0.0..=1.0).contains(&d01));
        }
    }

    #[test]
    fn limit_histogram_zero_kernel_is_isolated_root() {
        let kernel = KernelSpec::constant(0.0).unwrap();
        let h = limit_neighborhood_distribution(
            &kernel,
            &WeightLaw::Uniform01,
            1,
            4.0,
            200,
            1,
            None,
            11,
            64,
        )
        .unwrap();
        assert_eq!(h.count(&isolated_root_code()), 200);
    }

    #[test]
    fn limit_histogram_isolated_root_mass_matches_void_probability() {
        // Threshold(r0), d=1: P(isolated root) = e^{-2 r0}.
        let r0 = 1.0;
        let kernel = KernelSpec::threshold(r0).unwrap();
        let reps = 20_000;
        let h = limit_neighborhood_distribution(
            &kernel,
            &WeightLaw::Constant(1.0),
            1,
            8.0,
            reps,
            1,
            None,
            12,
            64,
        )
        .unwrap();
        let p = h.proportion(&isolated_root_code());
        let expect = (-2.0f64 * r0).exp();
        let tol = 3.0 * (expect * (1.0 - expect) / reps as f64).sqrt();
        assert!((p - expect).abs() < tol, "p = {p} vs {expect}");
    }

    #[test]
    fn limit_histogram_pendant_mass_matches_rejection_oracle() {
        // Threshold(1), d=1, K=1: the "root with exactly one neighbor and no
        // neighbor-neighbor edge" class is just one pendant point, whose
        // probability is P(Poisson(2) = 1) = 2 e^{-2}. Check the ball sampler
        // against a direct rejection-style simulation of the point process.
        use rand::Rng;
        let reps = 20_000;
        let kernel = KernelSpec::threshold(1.0).unwrap();
        let h = limit_neighborhood_distribution(
            &kernel,
            &WeightLaw::Constant(1.0),
            1,
            8.0,
            reps,
            1,
            None,
            13,
            64,
        )
        .unwrap();
        let pendant = canonical_code(&RootedGraph::new(2, &[(0, 1)], 0));
        let p_sampler = h.proportion(&pendant);

        // Independent oracle: simulate Poisson points on [-8, 8], count the
        // replicas with exactly one point in [-1, 1].
        let mut rng = crate::rng::stream(99, crate::rng::StreamKind::Sampling);
        let mut hits = 0usize;
        for _ in 0..reps {
            let count: f64 = rand_distr::Distribution::sample(
                &rand_distr::Poisson::new(16.0f64).unwrap(),
                &mut rng,
            );
            let inside = (0..count as usize)
                .filter(|_| {
                    let x: f64 = rng.random_range(-8.0..8.0);
                    x.abs() <= 1.0
                })
                .count();
            if inside == 1 {
                hits += 1;
            }
        }
        let p_oracle = hits as f64 / reps as f64;
        let expect = 2.0 * (-2.0f64).exp();
        let tol = 4.0 * (expect * (1.0 - expect) / reps as f64).sqrt();
        assert!((p_sampler - expect).abs() < tol, "sampler {p_sampler}");
        assert!((p_oracle - expect).abs() < tol, "oracle {p_oracle}");
    }

    #[test]
    fn coupling_radius_values() {
        assert_eq!(coupling_radius(2.0, 2.0, 3).unwrap(), 4.0 + 16.0 + 256.0);
        assert_eq!(coupling_radius(2.0, 3.0, 1).unwrap(), 8.0);
        let e = std::f64::consts::E;
        let r = coupling_radius(e, 1.5, 2).unwrap();
        assert!((r - (e.powf(1.5) + e.powf(2.25))).abs() < 1e-12);
        assert!(matches!(
            coupling_radius(10.0, 10.0, 12),
            Err(NeighborhoodError::RadiusOverflow { .. })
        ));
        assert!(coupling_radius(1.0, 2.0, 1).is_err());
    }

    #[test]
    fn coupling_check_hand_cases() {
        // Isolated root: both balls are the single vertex.
        let mut g = small_graph(6);
        g.adj = crate::generator::Csr::from_edges(200, &[]);
        assert_eq!(
            coupling_check(&g, 0, 2.0, 2.0, 1, 64).unwrap(),
            CouplingOutcome::Match
        );
        // Root with one neighbor at spatial distance beyond a^m: a bad edge.
        let p = FiniteParams {
            n: 2,
            dimension: 1,
            kernel: KernelSpec::constant(1.0).unwrap(),
            weight_law: WeightLaw::Constant(1.0),
            metric: Metric::Euclidean,
            mode: SampleMode::Exact,
        };
        let mut g = generate_finite(&p, 1).unwrap();
        g.points = crate::geometry::PointCloud::new(
            1,
            vec![0.0, 5.0],
            crate::geometry::Domain::Box(crate::geometry::BoxSpec::new(1, 20.0).unwrap()),
        );
        assert_eq!(
            coupling_check(&g, 0, 2.0, 2.0, 1, 64).unwrap(),
            CouplingOutcome::Mismatch
        );
        // Same graph, neighbor within a^m = 4: fine.
        g.points = crate::geometry::PointCloud::new(
            1,
            vec![0.0, 3.0],
            crate::geometry::Domain::Box(crate::geometry::BoxSpec::new(1, 20.0).unwrap()),
        );
        assert_eq!(
            coupling_check(&g, 0, 2.0, 2.0, 1, 64).unwrap(),
            CouplingOutcome::Match
        );
    }

    #[test]
    fn coupling_failure_rate_nonincreasing_in_m() {
        let g = small_graph(7);
        let mut rates = Vec::new();
        for m in [2.0, 3.0] {
            let mut fail = 0;
            for v in 0..g.n() as u32 {
                match coupling_check(&g, v, 2.0, m, 2, 64).unwrap() {
                    CouplingOutcome::Match => {}
                    _ => fail += 1,
                }
            }
            rates.push(fail as f64 / g.n() as f64);
        }
        let n = g.n() as f64;
        let sigma = (2.0 * rates[0].max(rates[1]) * (1.0 - rates[1].min(rates[0])) / n)
            .sqrt()
            .max(1.0 / n);
        assert!(
            rates[1] <= rates[0] + 2.0 * sigma,
            "rates not nonincreasing: {rates:?}"
        );
    }
}
