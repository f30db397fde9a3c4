//! Experiment harness: flat key/value configs, seeded parallel replication,
//! and the headline convergence studies (neighborhoods, degree law,
//! clustering, distances, coupling, kernel tail bounds).
//!
//! Determinism contract: for a fixed (config, seed) the emitted records are
//! byte-identical regardless of the worker count. Replica `k` draws from the
//! substream derived from `(seed, k)`, and all aggregation is sequential in
//! replica order.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::generator::{
    generate_finite, generate_hrg_native, FiniteParams, GeneratorError, HrgVariant, SampleMode,
    SpatialGraph,
};
use crate::geometry::Metric;
use crate::io::{config_digest, IoError, ResultRecord};
use crate::kernels::{KernelError, KernelSpec};
use crate::neighborhoods::{
    coupling_check, coupling_radius, empirical_neighborhood_distribution, isolated_root_code,
    limit_neighborhood_distribution, tv_distance, BallMode, CouplingOutcome, NeighborhoodError,
    NeighborhoodHistogram, VertexSample, DEFAULT_BALL_CAP,
};
use crate::numeric::mean_stderr;
use crate::rng::{replica_seed, stream, StreamKind};
use crate::stats::{
    degree_histogram, distance_threshold_fraction, global_clustering, limit_clustering_estimates,
    local_clustering, mixed_poisson_pmf_table, typical_distances, DegreeHistogram, QuadratureSpec,
    StatsError,
};
use crate::weights::{WeightError, WeightLaw};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Neighborhood(#[from] NeighborhoodError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Parsed experiment configuration.
///
/// The config file is a flat TOML document; every key is scalar or an array
/// of scalars. Unknown keys are rejected so typos fail loudly.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: String,
    pub dimension: u32,
    pub metric: Metric<f64>,
    pub kernel: KernelSpec<f64>,
    pub weight_law: WeightLaw<f64>,
    pub mode: SampleMode,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub limit_replicas: usize,
    pub k_ball: u32,
    pub coupling_a: f64,
    pub coupling_m: f64,
    pub coupling_m_grid: Vec<f64>,
    pub ball_radius: Option<f64>,
    pub ball_cap: usize,
    pub c_list: Vec<f64>,
    pub distance_pairs: usize,
    pub t_grid: Vec<f64>,
    pub epsilon: f64,
    pub tail_samples: usize,
    pub w0_samples: usize,
    pub inner_samples: usize,
    pub quad_tol: f64,
    pub clustering_ks: Vec<usize>,
    pub allow_gcc_below_2d: bool,
    pub seed: u64,
    pub workers: usize,
    pub timestamp: Option<String>,
    pub digest: String,
    raw: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "model",
    "dimension",
    "metric",
    "mode",
    "p",
    "r0",
    "lambda",
    "alpha",
    "alpha_g",
    "beta_g",
    "nu",
    "t_h",
    "alpha_h",
    "eta",
    "gamma",
    "profile_scale",
    "profile_exponent",
    "coupler_scale",
    "coupler_exponent",
    "alpha_p",
    "beta_p",
    "tail_alpha",
    "tail_prefactor",
    "weight_law",
    "weight_const",
    "weight_beta",
    "weights_file",
    "n_grid",
    "replicas",
    "limit_replicas",
    "k_ball",
    "coupling_a",
    "coupling_m",
    "coupling_m_grid",
    "ball_radius",
    "ball_cap",
    "c_list",
    "distance_pairs",
    "t_grid",
    "epsilon",
    "tail_samples",
    "w0_samples",
    "inner_samples",
    "quad_tol",
    "clustering_ks",
    "allow_gcc_below_2d",
    "seed",
    "workers",
    "timestamp",
];

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| ExperimentError::Config(format!("TOML parse error: {e}")))?;
        Self::from_table(table)
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn from_table(table: toml::Table) -> Result<Self, ExperimentError> {
        for key in table.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ExperimentError::Config(format!("unknown key `{key}`")));
            }
        }
        let raw: BTreeMap<String, String> = table
            .iter()
            .map(|(k, v)| (k.clone(), toml_scalar(v)))
            .collect();
        let get_str = |k: &str, default: &str| -> String {
            raw.get(k).cloned().unwrap_or_else(|| default.to_string())
        };
        let get_f64 = |k: &str, default: f64| -> Result<f64, ExperimentError> {
            match table.get(k) {
                None => Ok(default),
                Some(v) => v
                    .as_float()
                    .or_else(|| v.as_integer().map(|i| i as f64))
                    .ok_or_else(|| ExperimentError::Config(format!("`{k}` must be a number"))),
            }
        };
        let get_usize = |k: &str, default: usize| -> Result<usize, ExperimentError> {
            match table.get(k) {
                None => Ok(default),
                Some(v) => v
                    .as_integer()
                    .map(|i| i as usize)
                    .ok_or_else(|| ExperimentError::Config(format!("`{k}` must be an integer"))),
            }
        };
        let get_list = |k: &str, default: Vec<f64>| -> Result<Vec<f64>, ExperimentError> {
            match table.get(k) {
                None => Ok(default),
                Some(toml::Value::Array(a)) => a
                    .iter()
                    .map(|v| {
                        v.as_float()
                            .or_else(|| v.as_integer().map(|i| i as f64))
                            .ok_or_else(|| {
                                ExperimentError::Config(format!("`{k}` must be numeric"))
                            })
                    })
                    .collect(),
                Some(_) => Err(ExperimentError::Config(format!("`{k}` must be an array"))),
            }
        };

        let model = get_str("model", "csfp");
        let dimension = get_usize("dimension", 1)? as u32;
        if dimension == 0 {
            return Err(ExperimentError::Config("dimension must be >= 1".into()));
        }
        let n_grid: Vec<usize> = get_list("n_grid", vec![100.0, 1000.0, 10_000.0])?
            .into_iter()
            .map(|x| x as usize)
            .collect();
        if n_grid.is_empty() || n_grid.iter().any(|&n| n == 0) {
            return Err(ExperimentError::Config("n_grid must be nonempty, all >= 1".into()));
        }

        // Kernel.
        let kernel = match model.as_str() {
            "constant" => KernelSpec::constant(get_f64("p", 0.5)?)?,
            "threshold" => KernelSpec::threshold(get_f64("r0", 1.0)?)?,
            "csfp" => KernelSpec::csfp(get_f64("lambda", 1.0)?, get_f64("alpha", 3.0)?)?,
            "girg" => KernelSpec::girg(get_f64("alpha_g", 2.0)?, dimension)?,
            "thrg" => KernelSpec::thrg_limit(get_f64("nu", 1.0)?)?,
            "phrg" => KernelSpec::phrg_limit(get_f64("nu", 1.0)?, get_f64("t_h", 0.5)?)?,
            "psirg" => KernelSpec::product_psirg(
                get_f64("profile_scale", 1.0)?,
                get_f64("profile_exponent", 2.0)?,
                get_f64("coupler_scale", 1.0)?,
                get_f64("coupler_exponent", 0.0)?,
                get_f64("alpha_p", get_f64("profile_exponent", 2.0)?)?,
                get_f64("beta_p", 1.0)?,
            )?,
            "wdrcm" => KernelSpec::wdrcm(
                get_f64("eta", 2.0)?,
                get_f64("gamma", 0.5)?,
                dimension,
            )?,
            other => {
                return Err(ExperimentError::Config(format!("unknown model `{other}`")))
            }
        };
        let kernel = match (table.get("tail_alpha"), table.get("tail_prefactor")) {
            (None, None) => kernel,
            _ => kernel.with_tail(
                get_f64("tail_alpha", 0.0)?,
                get_f64("tail_prefactor", 1.0)?,
            )?,
        };

        // Weight law. Hyperbolic models force the induced radial law so the
        // transformed SIRG is the real model.
        let weight_law = match model.as_str() {
            "thrg" | "phrg" => {
                let alpha_h = get_f64("alpha_h", 0.9)?;
                let nu = get_f64("nu", 1.0)?;
                if !(alpha_h > 0.5) {
                    return Err(ExperimentError::Config(
                        "HRG needs alpha_h > 1/2".into(),
                    ));
                }
                // R_n depends on n; resolved per ensemble below, so store the
                // largest grid entry for the limiting-law checks.
                let n_max = *n_grid.iter().max().unwrap();
                WeightLaw::hrg_radial(alpha_h, crate::weights::hrg_disk_radius(n_max, nu))?
            }
            _ => match get_str("weight_law", "constant").as_str() {
                "constant" => WeightLaw::Constant(get_f64("weight_const", 1.0)?),
                "uniform01" => WeightLaw::Uniform01,
                "pareto" => WeightLaw::pareto(get_f64("weight_beta", 2.0)?)?,
                "powerlaw" => WeightLaw::power_law_tail(get_f64("beta_g", 2.5)?)?,
                "empirical" => {
                    let file = get_str("weights_file", "");
                    if file.is_empty() {
                        return Err(ExperimentError::Config(
                            "empirical weights need `weights_file`".into(),
                        ));
                    }
                    crate::weights::load_empirical_weights(Path::new(&file))
                        .map_err(|e| ExperimentError::Config(e.to_string()))?
                }
                other => {
                    return Err(ExperimentError::Config(format!(
                        "unknown weight law `{other}`"
                    )))
                }
            },
        };

        let metric = match get_str("metric", "euclidean").as_str() {
            "euclidean" => Metric::Euclidean,
            "torus" => Metric::Torus { side: 0.0 }, // side resolved per n
            other => {
                return Err(ExperimentError::Config(format!("unknown metric `{other}`")))
            }
        };
        let mode = match get_str("mode", "grid").as_str() {
            "grid" => SampleMode::Grid,
            "exact" => SampleMode::Exact,
            other => return Err(ExperimentError::Config(format!("unknown mode `{other}`"))),
        };

        let coupling_m_grid = get_list("coupling_m_grid", vec![2.0, 3.0, 4.0])?;
        let cfg = ExperimentConfig {
            digest: config_digest(&raw),
            model,
            dimension,
            metric,
            kernel,
            weight_law,
            mode,
            n_grid,
            replicas: get_usize("replicas", 50)?,
            limit_replicas: get_usize("limit_replicas", 10_000)?,
            k_ball: get_usize("k_ball", 1)? as u32,
            coupling_a: get_f64("coupling_a", 2.0)?,
            coupling_m: get_f64("coupling_m", 3.0)?,
            coupling_m_grid,
            ball_radius: table.get("ball_radius").map(|_| get_f64("ball_radius", 8.0)).transpose()?,
            ball_cap: get_usize("ball_cap", DEFAULT_BALL_CAP)?,
            c_list: get_list("c_list", vec![1.2])?,
            distance_pairs: get_usize("distance_pairs", 200)?,
            t_grid: get_list("t_grid", vec![10.0, 30.0, 100.0])?,
            epsilon: get_f64("epsilon", 0.25)?,
            tail_samples: get_usize("tail_samples", 100_000)?,
            w0_samples: get_usize("w0_samples", 3000)?,
            inner_samples: get_usize("inner_samples", 2000)?,
            quad_tol: get_f64("quad_tol", 1e-8)?,
            clustering_ks: get_list("clustering_ks", vec![2.0, 3.0])?
                .into_iter()
                .map(|x| x as usize)
                .collect(),
            allow_gcc_below_2d: get_str("allow_gcc_below_2d", "false") == "true",
            seed: get_usize("seed", 1)? as u64,
            workers: get_usize("workers", 0)?,
            timestamp: raw.get("timestamp").cloned(),
            raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if let Some(tail) = self.kernel.tail() {
            if tail.alpha <= self.dimension as f64 {
                return Err(ExperimentError::Config(format!(
                    "declared tail alpha {} must exceed d = {} for limit experiments",
                    tail.alpha, self.dimension
                )));
            }
        }
        if self.replicas == 0 || self.limit_replicas == 0 {
            return Err(ExperimentError::Config("replicas must be >= 1".into()));
        }
        Ok(())
    }

    /// Metric with the torus side resolved for a given ensemble size.
    fn metric_for(&self, n: usize) -> Metric<f64> {
        match (self.metric, self.model.as_str()) {
            // Hyperbolic transformed coordinates live on the circle.
            (_, "thrg") | (_, "phrg") => Metric::Torus {
                side: (n as f64).powf(1.0 / self.dimension as f64),
            },
            (Metric::Torus { .. }, _) => Metric::Torus {
                side: (n as f64).powf(1.0 / self.dimension as f64),
            },
            (m, _) => m,
        }
    }

    fn finite_params(&self, n: usize) -> FiniteParams<f64> {
        FiniteParams {
            n,
            dimension: self.dimension,
            kernel: self.kernel.clone(),
            weight_law: self.weight_law_for(n),
            metric: self.metric_for(n),
            mode: self.mode,
        }
    }

    /// The weight law for an ensemble of size `n` (the hyperbolic radial law
    /// depends on `R_n`).
    fn weight_law_for(&self, n: usize) -> WeightLaw<f64> {
        match (&self.weight_law, self.model.as_str()) {
            (WeightLaw::HrgRadial { alpha_h, .. }, "thrg" | "phrg") => WeightLaw::HrgRadial {
                alpha_h: *alpha_h,
                r_n: crate::weights::hrg_disk_radius(n, self.nu()),
            },
            (law, _) => law.clone(),
        }
    }

    fn nu(&self) -> f64 {
        match self.kernel.form() {
            crate::kernels::KernelForm::ThrgLimit { nu } => *nu,
            crate::kernels::KernelForm::PhrgLimit { nu, .. } => *nu,
            _ => 1.0,
        }
    }

    /// Limit-ball radius: explicit override or the coupling radius for
    /// `(a, m, K)`.
    pub fn limit_ball_radius(&self, k: u32) -> Result<f64, ExperimentError> {
        match self.ball_radius {
            Some(r) if r > 0.0 => Ok(r),
            Some(r) => Err(ExperimentError::Config(format!(
                "ball_radius must be positive, got {r}"
            ))),
            None => Ok(coupling_radius(self.coupling_a, self.coupling_m, k.max(1))?),
        }
    }

    fn timestamp(&self) -> String {
        if let Some(t) = &self.timestamp {
            return t.clone();
        }
        if let Ok(epoch) = std::env::var("SOURCE_DATE_EPOCH") {
            if let Ok(secs) = epoch.parse::<i64>() {
                if let Some(dt) = chrono::DateTime::from_timestamp(secs, 0) {
                    return dt.to_rfc3339();
                }
            }
        }
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }

    fn record(&self, experiment: &str, n: usize, statistic: &str, value: f64, stderr: Option<f64>) -> ResultRecord {
        ResultRecord {
            experiment: experiment.to_string(),
            config_digest: self.digest.clone(),
            seed: self.seed,
            n: n as u64,
            statistic: statistic.to_string(),
            value,
            stderr,
            timestamp: self.timestamp(),
        }
    }

    pub fn raw_entries(&self) -> &BTreeMap<String, String> {
        &self.raw
    }
}

fn toml_scalar(v: &toml::Value) -> String {
    match v {
        toml::Value::Array(a) => a.iter().map(toml_scalar).collect::<Vec<_>>().join(";"),
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Output of one experiment run.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    /// Named JSON artifacts (histograms, pmf tables).
    pub artifacts: Vec<(String, serde_json::Value)>,
    /// False when an asserted trend or bound check failed.
    pub pass: bool,
}

/// Run a closure inside a worker pool of the configured size.
pub fn with_pool<T: Send>(
    workers: usize,
    f: impl FnOnce() -> T + Send,
) -> T {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool")
        .install(f)
}

fn generate_replicas(
    cfg: &ExperimentConfig,
    n: usize,
) -> Result<Vec<SpatialGraph<f64>>, ExperimentError> {
    let params = cfg.finite_params(n);
    match cfg.model.as_str() {
        "thrg" => (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|rep| {
                Ok(generate_hrg_native(
                    n,
                    cfg.raw_f64("alpha_h", 0.9),
                    cfg.nu(),
                    HrgVariant::Threshold,
                    replica_seed(cfg.seed, rep),
                )?)
            })
            .collect(),
        "phrg" => (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|rep| {
                Ok(generate_hrg_native(
                    n,
                    cfg.raw_f64("alpha_h", 0.9),
                    cfg.nu(),
                    HrgVariant::Parametrized {
                        t_h: cfg.raw_f64("t_h", 0.5),
                    },
                    replica_seed(cfg.seed, rep),
                )?)
            })
            .collect(),
        _ => (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|rep| Ok(generate_finite(&params, replica_seed(cfg.seed, rep))?))
            .collect(),
    }
}

impl ExperimentConfig {
    fn raw_f64(&self, key: &str, default: f64) -> f64 {
        self.raw
            .get(key)
            .and_then(|s| s.parse().ok())
            .unwrap_or(default)
    }
}

/// Jackknife standard error of the TV between a pooled empirical histogram
/// and a fixed reference, leaving out one replica at a time.
fn jackknife_tv(
    replicas: &[NeighborhoodHistogram],
    pooled: &NeighborhoodHistogram,
    reference: &NeighborhoodHistogram,
) -> (f64, f64) {
    let tv = tv_distance(pooled, reference).expect("matching tags");
    let r = replicas.len();
    if r < 2 {
        return (tv, 0.0);
    }
    let mut leave_outs = Vec::with_capacity(r);
    for skip in 0..r {
        let mut partial = NeighborhoodHistogram::new(pooled.kind, pooled.radius);
        for (i, h) in replicas.iter().enumerate() {
            if i != skip {
                partial.merge(h).expect("matching tags");
            }
        }
        leave_outs.push(tv_distance(&partial, reference).expect("matching tags"));
    }
    let mean = leave_outs.iter().sum::<f64>() / r as f64;
    let var = leave_outs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() * (r - 1) as f64
        / r as f64;
    (tv, var.sqrt())
}

/// Neighborhood-distribution convergence: per-n TV against the limit-sampler
/// histogram, plus the across-replica spread of the isolated-root
/// proportion.
pub fn run_neighborhood_convergence(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    with_pool(cfg.workers, || {
        let k = cfg.k_ball;
        let r = cfg.limit_ball_radius(k)?;
        let mean_weight = cfg.kernel.limit_mean_weight(&cfg.weight_law)?;
        let limit = limit_neighborhood_distribution(
            &cfg.kernel,
            &cfg.weight_law,
            k,
            r,
            cfg.limit_replicas,
            cfg.dimension,
            mean_weight,
            cfg.seed ^ 0x11bb,
            cfg.ball_cap,
        )?;
        let iso = isolated_root_code();
        let mut records = Vec::new();
        let mut artifacts = vec![(
            "limit_neighborhoods".to_string(),
            limit.to_json(),
        )];
        let mut tvs: Vec<(f64, f64)> = Vec::new();
        let mut spreads = Vec::new();
        for &n in &cfg.n_grid {
            let graphs = generate_replicas(cfg, n)?;
            let hists: Vec<NeighborhoodHistogram> = graphs
                .par_iter()
                .map(|g| {
                    empirical_neighborhood_distribution(
                        g,
                        BallMode::Graph { k },
                        VertexSample::All,
                        cfg.ball_cap,
                    )
                })
                .collect::<Result<_, _>>()?;
            let mut pooled = NeighborhoodHistogram::new(limit.kind, limit.radius);
            for h in &hists {
                pooled.merge(h)?;
            }
            let (tv, tv_se) = jackknife_tv(&hists, &pooled, &limit);
            let iso_props: Vec<f64> = hists.iter().map(|h| h.proportion(&iso)).collect();
            let (_, iso_se) = mean_stderr(&iso_props);
            let spread = iso_se * (iso_props.len() as f64).sqrt(); // sd, not se
            records.push(cfg.record("neighborhoods", n, "tv", tv, Some(tv_se)));
            records.push(cfg.record("neighborhoods", n, "spread_isolated_root", spread, None));
            records.push(cfg.record(
                "neighborhoods",
                n,
                "oversized_empirical",
                pooled.oversized_mass(),
                None,
            ));
            artifacts.push((format!("neighborhoods_n{n}"), pooled.to_json()));
            tvs.push((tv, tv_se));
            spreads.push(spread);
        }
        records.push(cfg.record(
            "neighborhoods",
            0,
            "oversized_limit",
            limit.oversized_mass(),
            None,
        ));
        // Trend: TV nonincreasing within 2 sigma along the grid.
        let mut pass = true;
        for w in tvs.windows(2) {
            let sigma = (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt();
            if w[1].0 > w[0].0 + 2.0 * sigma {
                pass = false;
            }
        }
        records.push(cfg.record("neighborhoods", 0, "tv_trend_pass", pass as u64 as f64, None));
        Ok(RunOutput {
            records,
            artifacts,
            pass,
        })
    })
}

/// Degree law: pooled empirical degree histogram per n against the
/// mixed-Poisson oracle, plus the truncated-moment table.
pub fn run_degree_law(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    with_pool(cfg.workers, || {
        let mut records = Vec::new();
        let mut artifacts = Vec::new();
        let mut per_n: Vec<(usize, DegreeHistogram)> = Vec::new();
        for &n in &cfg.n_grid {
            let graphs = generate_replicas(cfg, n)?;
            let mut pooled = DegreeHistogram::empty();
            for g in &graphs {
                pooled.merge(&degree_histogram(g));
            }
            per_n.push((n, pooled));
        }
        let k_max = per_n
            .iter()
            .map(|(_, h)| h.max_degree())
            .max()
            .unwrap_or(0)
            .clamp(8, 400);
        let quad = QuadratureSpec {
            tol: cfg.quad_tol,
            inner_samples: cfg.inner_samples,
            ..QuadratureSpec::default()
        };
        let oracle = mixed_poisson_pmf_table(
            &cfg.kernel,
            &cfg.weight_law,
            k_max,
            cfg.w0_samples,
            cfg.dimension,
            &quad,
            cfg.seed ^ 0x22cc,
        )?;
        let pmf: Vec<f64> = oracle.iter().map(|(v, _)| *v).collect();
        artifacts.push((
            "mixed_poisson_pmf".to_string(),
            serde_json::json!(oracle
                .iter()
                .enumerate()
                .map(|(k, (v, se))| serde_json::json!({"k": k, "p": v, "stderr": se}))
                .collect::<Vec<_>>()),
        ));
        let mut tvs = Vec::new();
        for (n, hist) in &per_n {
            let tv = hist.tv_vs_pmf(&pmf);
            records.push(cfg.record("degree-law", *n, "tv_mixed_poisson", tv, None));
            records.push(cfg.record("degree-law", *n, "mean_degree", hist.mean(), None));
            for m in [0usize, 1, 2, 4, 8, 16, 32] {
                records.push(cfg.record(
                    "degree-law",
                    *n,
                    &format!("truncated_mean_m{m}"),
                    hist.truncated_mean(m),
                    None,
                ));
            }
            tvs.push(tv);
        }
        let pass = tvs.windows(2).all(|w| w[1] <= w[0]);
        records.push(cfg.record("degree-law", 0, "tv_trend_pass", pass as u64 as f64, None));
        Ok(RunOutput {
            records,
            artifacts,
            pass,
        })
    })
}

/// Clustering: finite-n global/local/per-degree clustering against the
/// limit-sampler estimates.
pub fn run_clustering(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let tail = cfg.kernel.tail();
    let alpha = tail.map(|t| t.alpha).unwrap_or(0.0);
    if alpha <= 2.0 * cfg.dimension as f64 && !cfg.allow_gcc_below_2d {
        return Err(ExperimentError::Config(format!(
            "global clustering needs declared tail alpha > 2d = {} (got {alpha}); \
             set allow_gcc_below_2d = \"true\" to override",
            2 * cfg.dimension
        )));
    }
    with_pool(cfg.workers, || {
        let r = cfg.limit_ball_radius(1)?;
        let mean_weight = cfg.kernel.limit_mean_weight(&cfg.weight_law)?;
        let limit = limit_clustering_estimates(
            &cfg.kernel,
            &cfg.weight_law,
            r,
            cfg.limit_replicas,
            cfg.dimension,
            mean_weight,
            cfg.seed ^ 0x33dd,
            &cfg.clustering_ks,
        )?;
        let mut records = Vec::new();
        records.push(cfg.record("clustering", 0, "limit_delta0", limit.e_delta0.0, Some(limit.e_delta0.1)));
        records.push(cfg.record("clustering", 0, "limit_dd1", limit.e_dd1.0, Some(limit.e_dd1.1)));
        records.push(cfg.record("clustering", 0, "limit_lcc", limit.e_local.0, Some(limit.e_local.1)));
        for (&k, &(mean, se, hits)) in &limit.conditional {
            records.push(cfg.record("clustering", 0, &format!("limit_cc_k{k}"), mean, Some(se)));
            records.push(cfg.record("clustering", 0, &format!("limit_cc_k{k}_hits"), hits as f64, None));
        }
        let gcc_limit = if limit.e_dd1.0 > 0.0 {
            limit.e_delta0.0 / limit.e_dd1.0
        } else {
            0.0
        };
        records.push(cfg.record("clustering", 0, "limit_gcc", gcc_limit, None));

        let mut pass = true;
        for &n in &cfg.n_grid {
            let graphs = generate_replicas(cfg, n)?;
            let gccs: Vec<f64> = graphs.par_iter().map(global_clustering).collect();
            let lccs: Vec<f64> = graphs.par_iter().map(local_clustering).collect();
            let (gcc, gcc_se) = mean_stderr(&gccs);
            let (lcc, lcc_se) = mean_stderr(&lccs);
            records.push(cfg.record("clustering", n, "gcc", gcc, Some(gcc_se)));
            records.push(cfg.record("clustering", n, "lcc", lcc, Some(lcc_se)));
            for &k in &cfg.clustering_ks {
                let vals: Vec<f64> = graphs
                    .par_iter()
                    .map(|g| crate::stats::clustering_function(g, k))
                    .collect();
                let (m, se) = mean_stderr(&vals);
                records.push(cfg.record("clustering", n, &format!("cc_k{k}"), m, Some(se)));
            }
            if n == *cfg.n_grid.iter().max().unwrap() {
                let gcc_sigma = (gcc_se.powi(2)
                    + (limit.e_delta0.1 / limit.e_dd1.0.max(1e-12)).powi(2)
                    + (gcc_limit * limit.e_dd1.1 / limit.e_dd1.0.max(1e-12)).powi(2))
                .sqrt();
                let gcc_gap = (gcc - gcc_limit).abs();
                let lcc_sigma = (lcc_se.powi(2) + limit.e_local.1.powi(2)).sqrt();
                let lcc_gap = (lcc - limit.e_local.0).abs();
                records.push(cfg.record("clustering", n, "gcc_gap", gcc_gap, Some(gcc_sigma)));
                records.push(cfg.record("clustering", n, "lcc_gap", lcc_gap, Some(lcc_sigma)));
                let ok = gcc_gap <= 3.0 * gcc_sigma.max(1e-9) && lcc_gap <= 3.0 * lcc_sigma.max(1e-9);
                records.push(cfg.record("clustering", n, "gap_pass", ok as u64 as f64, None));
                pass &= ok;
            }
        }
        Ok(RunOutput {
            records,
            artifacts: Vec::new(),
            pass,
        })
    })
}

/// Typical distances: exceedance fraction of `d > C log log n` per (n, C).
pub fn run_distances(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let tail = cfg
        .kernel
        .tail()
        .ok_or_else(|| ExperimentError::Config("distances need a declared tail alpha".into()))?;
    let alpha = tail.alpha;
    with_pool(cfg.workers, || {
        let mut records = Vec::new();
        let mut pass = true;
        for &c in &cfg.c_list {
            let mut fractions: Vec<(f64, f64)> = Vec::new();
            for &n in &cfg.n_grid {
                let graphs = generate_replicas(cfg, n)?;
                let samples: Vec<u32> = graphs
                    .par_iter()
                    .enumerate()
                    .map(|(idx, g)| {
                        let mut rng = stream(
                            replica_seed(cfg.seed ^ 0x44ee, idx as u64),
                            StreamKind::Sampling,
                        );
                        typical_distances(g, cfg.distance_pairs, &mut rng)
                    })
                    .flatten()
                    .collect();
                let report = distance_threshold_fraction(&samples, n, c, alpha, cfg.dimension)?;
                let se = (report.exceedance * (1.0 - report.exceedance)
                    / samples.len() as f64)
                    .sqrt();
                records.push(cfg.record(
                    "distances",
                    n,
                    &format!("exceedance_c{c}"),
                    report.exceedance,
                    Some(se),
                ));
                records.push(cfg.record(
                    "distances",
                    n,
                    &format!("finite_fraction_c{c}"),
                    report.finite_fraction,
                    None,
                ));
                records.push(cfg.record("distances", n, "critical_c", report.critical_c, None));
                fractions.push((report.exceedance, se));
            }
            // Trend: nondecreasing within 2 sigma.
            let mut ok = true;
            for w in fractions.windows(2) {
                let sigma = (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt();
                if w[1].0 < w[0].0 - 2.0 * sigma {
                    ok = false;
                }
            }
            records.push(cfg.record(
                "distances",
                0,
                &format!("trend_pass_c{c}"),
                ok as u64 as f64,
                None,
            ));
            pass &= ok;
        }
        Ok(RunOutput {
            records,
            artifacts: Vec::new(),
            pass,
        })
    })
}

/// Coupling diagnostic: empirical failure rate of the spatial/graph ball
/// comparison per (n, m); nonincreasing in m.
pub fn run_coupling(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    // Validate the radii up front so absurd parameters fail cleanly.
    for &m in &cfg.coupling_m_grid {
        coupling_radius(cfg.coupling_a, m, cfg.k_ball.max(1))?;
    }
    with_pool(cfg.workers, || {
        let k = cfg.k_ball.max(1);
        let mut records = Vec::new();
        let mut pass = true;
        for &n in &cfg.n_grid {
            let graphs = generate_replicas(cfg, n)?;
            let mut rates: Vec<(f64, f64)> = Vec::new();
            for &m in &cfg.coupling_m_grid {
                let outcomes: Vec<(u64, u64, u64)> = graphs
                    .par_iter()
                    .enumerate()
                    .map(|(idx, g)| {
                        use rand::Rng;
                        let mut rng = stream(
                            replica_seed(cfg.seed ^ 0x55ff, idx as u64),
                            StreamKind::Sampling,
                        );
                        let mut fail = 0u64;
                        let mut oversized = 0u64;
                        let samples = cfg.distance_pairs.min(g.n());
                        for _ in 0..samples {
                            let v = rng.random_range(0..g.n() as u32);
                            match coupling_check(g, v, cfg.coupling_a, m, k, cfg.ball_cap)
                                .expect("valid root")
                            {
                                CouplingOutcome::Match => {}
                                CouplingOutcome::Mismatch => fail += 1,
                                CouplingOutcome::Oversized => oversized += 1,
                            }
                        }
                        (fail, oversized, samples as u64)
                    })
                    .collect();
                let total: u64 = outcomes.iter().map(|o| o.2).sum();
                let fails: u64 = outcomes.iter().map(|o| o.0).sum();
                let oversized: u64 = outcomes.iter().map(|o| o.1).sum();
                let rate = (fails + oversized) as f64 / total as f64;
                let se = (rate * (1.0 - rate) / total as f64).sqrt();
                records.push(cfg.record("coupling", n, &format!("failure_rate_m{m}"), rate, Some(se)));
                records.push(cfg.record(
                    "coupling",
                    n,
                    &format!("oversized_rate_m{m}"),
                    oversized as f64 / total as f64,
                    None,
                ));
                rates.push((rate, se));
            }
            let mut ok = true;
            for w in rates.windows(2) {
                let sigma = (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt();
                if w[1].0 > w[0].0 + 2.0 * sigma {
                    ok = false;
                }
            }
            records.push(cfg.record("coupling", n, "trend_pass", ok as u64 as f64, None));
            pass &= ok;
        }
        Ok(RunOutput {
            records,
            artifacts: Vec::new(),
            pass,
        })
    })
}

/// Tail-bound verification for the configured kernel and weight law.
pub fn run_verify_kernel(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    with_pool(cfg.workers, || {
        let mut rng = stream(cfg.seed ^ 0x66aa, StreamKind::Sampling);
        let t_grid: Vec<f64> = cfg.t_grid.clone();
        let report = cfg.kernel.verify_tail_bound(
            &cfg.weight_law,
            &t_grid,
            cfg.epsilon,
            cfg.tail_samples,
            &mut rng,
        )?;
        let mut records = Vec::new();
        for row in &report.rows {
            records.push(cfg.record(
                "verify-kernel",
                row.t as usize,
                "tail_estimate",
                row.estimate,
                Some(row.stderr),
            ));
            records.push(cfg.record("verify-kernel", row.t as usize, "tail_bound", row.bound, None));
            records.push(cfg.record(
                "verify-kernel",
                row.t as usize,
                "tail_pass",
                row.pass as u64 as f64,
                None,
            ));
        }
        records.push(cfg.record(
            "verify-kernel",
            0,
            "all_pass",
            report.pass as u64 as f64,
            None,
        ));
        Ok(RunOutput {
            records,
            artifacts: vec![(
                "tail_bound_report".into(),
                serde_json::to_value(&report).expect("serializable"),
            )],
            pass: report.pass,
        })
    })
}

/// Generate a single graph (first entry of the n grid) for the `generate`
/// subcommand.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<SpatialGraph<f64>, ExperimentError> {
    let n = cfg.n_grid[0];
    with_pool(cfg.workers, || match cfg.model.as_str() {
        "thrg" => Ok(generate_hrg_native(
            n,
            cfg.raw_f64("alpha_h", 0.9),
            cfg.nu(),
            HrgVariant::Threshold,
            cfg.seed,
        )?),
        "phrg" => Ok(generate_hrg_native(
            n,
            cfg.raw_f64("alpha_h", 0.9),
            cfg.nu(),
            HrgVariant::Parametrized {
                t_h: cfg.raw_f64("t_h", 0.5),
            },
            cfg.seed,
        )?),
        _ => Ok(generate_finite(&cfg.finite_params(n), cfg.seed)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    #[test]
    fn config_defaults_and_digest_stability() {
        let a = cfg("model = \"csfp\"\nlambda = 1.0\nalpha = 3.0\nseed = 7");
        let b = cfg("seed = 7\nalpha = 3.0\nmodel = \"csfp\"\nlambda = 1.0");
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.n_grid, vec![100, 1000, 10_000]);
        assert_eq!(a.replicas, 50);
        let c = cfg("model = \"csfp\"\nlambda = 1.0\nalpha = 3.0\nseed = 8");
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str("modle = \"csfp\"").is_err());
        assert!(ExperimentConfig::from_toml_str("model = \"nope\"").is_err());
        // alpha <= d fails the limit-experiment validation.
        assert!(ExperimentConfig::from_toml_str("model = \"csfp\"\nalpha = 0.5").is_err());
        // HRG parameter range.
        assert!(ExperimentConfig::from_toml_str("model = \"phrg\"\nt_h = 1.5").is_err());
        assert!(ExperimentConfig::from_toml_str("model = \"thrg\"\nalpha_h = 0.3").is_err());
    }

    #[test]
    fn zero_kernel_degree_law_is_trivial() {
        let c = cfg(
            "model = \"constant\"\np = 0.0\nn_grid = [50, 100]\nreplicas = 4\nseed = 3\n\
             timestamp = \"t0\"",
        );
        let out = run_degree_law(&c).unwrap();
        let tvs: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.statistic == "tv_mixed_poisson")
            .map(|r| r.value)
            .collect();
        assert!(tvs.iter().all(|&t| t < 1e-12), "{tvs:?}");
    }

    #[test]
    fn zero_kernel_neighborhoods_tv_is_zero() {
        let c = cfg(
            "model = \"constant\"\np = 0.0\nn_grid = [40, 80]\nreplicas = 4\n\
             limit_replicas = 100\nseed = 3\ntimestamp = \"t0\"",
        );
        let out = run_neighborhood_convergence(&c).unwrap();
        let tvs: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.statistic == "tv")
            .map(|r| r.value)
            .collect();
        assert!(tvs.iter().all(|&t| t == 0.0), "{tvs:?}");
        assert!(out.pass);
    }

    #[test]
    fn zero_kernel_coupling_never_fails() {
        let c = cfg(
            "model = \"constant\"\np = 0.0\nn_grid = [60]\nreplicas = 3\n\
             coupling_m_grid = [2.0, 3.0]\nk_ball = 2\ndistance_pairs = 30\nseed = 4\n\
             timestamp = \"t0\"",
        );
        let out = run_coupling(&c).unwrap();
        for r in out.records.iter().filter(|r| r.statistic.starts_with("failure_rate")) {
            assert_eq!(r.value, 0.0);
        }
    }

    #[test]
    fn empty_graph_distances_always_exceed() {
        let c = cfg(
            "model = \"constant\"\np = 0.0\ntail_alpha = 3.0\ntail_prefactor = 1.0\n\
             n_grid = [64, 128]\nreplicas = 3\ndistance_pairs = 20\nc_list = [1.0]\nseed = 5\n\
             timestamp = \"t0\"",
        );
        let out = run_distances(&c).unwrap();
        for r in out
            .records
            .iter()
            .filter(|r| r.statistic.starts_with("exceedance"))
        {
            assert_eq!(r.value, 1.0);
        }
        assert!(out.pass);
    }

    #[test]
    fn gcc_gate_blocks_low_alpha_unless_overridden() {
        let base = "model = \"csfp\"\nlambda = 1.0\nalpha = 1.5\nn_grid = [50]\nreplicas = 2\n\
                    limit_replicas = 50\nseed = 2\ntimestamp = \"t0\"";
        assert!(matches!(
            run_clustering(&cfg(base)),
            Err(ExperimentError::Config(_))
        ));
        let with_override = format!("{base}\nallow_gcc_below_2d = \"true\"");
        assert!(run_clustering(&cfg(&with_override)).is_ok());
    }

    #[test]
    fn determinism_across_worker_counts() {
        for workers in [1usize, 4] {
            let c = cfg(&format!(
                "model = \"csfp\"\nlambda = 1.0\nalpha = 3.0\nweight_law = \"pareto\"\n\
                 weight_beta = 2.0\nn_grid = [80, 160]\nreplicas = 6\nlimit_replicas = 300\n\
                 distance_pairs = 40\nseed = 11\nworkers = {workers}\ntimestamp = \"t0\""
            ));
            let out = run_neighborhood_convergence(&c).unwrap();
            let summary: Vec<(String, u64, String)> = out
                .records
                .iter()
                .map(|r| (r.statistic.clone(), r.n, format!("{:.17e}", r.value)))
                .collect();
            if workers == 1 {
                WORKER_SUMMARY.with(|s| *s.borrow_mut() = Some(summary));
            } else {
                WORKER_SUMMARY.with(|s| {
                    assert_eq!(s.borrow().as_ref().unwrap(), &summary);
                });
            }
        }
    }

    thread_local! {
        static WORKER_SUMMARY: std::cell::RefCell<Option<Vec<(String, u64, String)>>> =
            const { std::cell::RefCell::new(None) };
    }
}
