//! Persistence: graphs as text edge lists with a sidecar header, result
//! records as CSV or JSON, and stable config digests.
//!
//! Graph layout for `write_graph(g, "x")`:
//! * `x` — edge list, one `i j` per line, 0-based, `i < j`, sorted;
//! * `x.meta` — `key value` header (n, d, seed, kernel id, metric, domain,
//!   root, format) followed by one CSV row per vertex
//!   (`coord_1,..,coord_d,weight`) when `format csv`;
//! * `x.bin` — the same rows as little-endian f64 when `format binary`.
//!
//! Text numbers use Rust's shortest round-trip float formatting, so reading
//! reproduces every coordinate and weight bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::{Csr, GraphMeta, SpatialGraph};
use crate::geometry::{BoxSpec, Domain, Metric, PointCloud};
use crate::weights::WeightVector;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// How vertex locations and weights are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocationFormat {
    Csv,
    Binary,
}

pub fn write_graph(
    g: &SpatialGraph<f64>,
    path: &Path,
    format: LocationFormat,
) -> Result<(), IoError> {
    // Edge list.
    let f = std::fs::File::create(path).map_err(file_err(path))?;
    let mut w = BufWriter::new(f);
    for (i, j) in g.adj.edges() {
        writeln!(w, "{i} {j}").map_err(file_err(path))?;
    }
    w.flush().map_err(file_err(path))?;

    // Sidecar header.
    let meta_path = sidecar(path, "meta");
    let mut head = String::new();
    writeln!(head, "sirg-graph 1").unwrap();
    writeln!(head, "n {}", g.n()).unwrap();
    writeln!(head, "d {}", g.points.dimension()).unwrap();
    writeln!(head, "seed {}", g.meta.seed).unwrap();
    writeln!(head, "kernel {}", g.meta.kernel_id).unwrap();
    match g.meta.metric {
        Metric::Euclidean => writeln!(head, "metric euclidean").unwrap(),
        Metric::Torus { side } => writeln!(head, "metric torus {side}").unwrap(),
    }
    match g.points.domain() {
        Domain::Box(b) => writeln!(head, "domain box {}", b.side()).unwrap(),
        Domain::Ball { radius, .. } => writeln!(head, "domain ball {radius}").unwrap(),
    }
    match g.root {
        Some(r) => writeln!(head, "root {r}").unwrap(),
        None => writeln!(head, "root -").unwrap(),
    }
    match g.meta.ensemble_n {
        Some(n) => writeln!(head, "ensemble_n {n}").unwrap(),
        None => writeln!(head, "ensemble_n -").unwrap(),
    }
    writeln!(
        head,
        "format {}",
        match format {
            LocationFormat::Csv => "csv",
            LocationFormat::Binary => "binary",
        }
    )
    .unwrap();
    if format == LocationFormat::Csv {
        let d = g.points.dimension() as usize;
        for v in 0..g.n() {
            let p = g.points.point(v);
            let mut row = String::new();
            for c in p.iter().take(d) {
                write!(row, "{c},").unwrap();
            }
            write!(row, "{}", g.weights.get(v)).unwrap();
            writeln!(head, "{row}").unwrap();
        }
    }
    std::fs::write(&meta_path, head).map_err(file_err(&meta_path))?;

    if format == LocationFormat::Binary {
        let bin_path = sidecar(path, "bin");
        let mut buf = Vec::with_capacity(g.n() * (g.points.dimension() as usize + 1) * 8);
        for v in 0..g.n() {
            for c in g.points.point(v) {
                buf.extend_from_slice(&c.to_le_bytes());
            }
            buf.extend_from_slice(&g.weights.get(v).to_le_bytes());
        }
        std::fs::write(&bin_path, buf).map_err(file_err(&bin_path))?;
    }
    Ok(())
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn read_graph(path: &Path) -> Result<SpatialGraph<f64>, IoError> {
    let meta_path = sidecar(path, "meta");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(file_err(&meta_path))?;
    let mut lines = meta_text.lines().enumerate();
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut body_start = 0usize;
    for (lineno, line) in lines.by_ref() {
        let mut parts = line.splitn(2, ' ');
        let key = parts.next().unwrap_or("");
        let value = parts.next().unwrap_or("").to_string();
        header.insert(key.to_string(), value);
        if key == "format" {
            body_start = lineno + 1;
            break;
        }
    }
    let get = |k: &str| -> Result<&String, IoError> {
        header.get(k).ok_or_else(|| IoError::Invalid {
            path: meta_path.clone(),
            msg: format!("missing header key `{k}`"),
        })
    };
    let parse_err = |line: usize, msg: String| IoError::Parse {
        path: meta_path.clone(),
        line: line + 1,
        msg,
    };
    let n: usize = get("n")?
        .parse()
        .map_err(|e| parse_err(1, format!("bad n: {e}")))?;
    let d: u32 = get("d")?
        .parse()
        .map_err(|e| parse_err(2, format!("bad d: {e}")))?;
    let seed: u64 = get("seed")?.parse().unwrap_or(0);
    let kernel_id = get("kernel")?.clone();
    let metric = {
        let m = get("metric")?;
        if m == "euclidean" {
            Metric::Euclidean
        } else if let Some(side) = m.strip_prefix("torus ") {
            Metric::Torus {
                side: side.parse().map_err(|e| parse_err(0, format!("bad torus side: {e}")))?,
            }
        } else {
            return Err(IoError::Invalid {
                path: meta_path.clone(),
                msg: format!("unknown metric `{m}`"),
            });
        }
    };
    let domain = {
        let dom = get("domain")?;
        if let Some(side) = dom.strip_prefix("box ") {
            Domain::Box(
                BoxSpec::new(d, side.parse().map_err(|e| parse_err(0, format!("bad box: {e}")))?)
                    .map_err(|e| IoError::Invalid {
                        path: meta_path.clone(),
                        msg: e.to_string(),
                    })?,
            )
        } else if let Some(r) = dom.strip_prefix("ball ") {
            Domain::Ball {
                radius: r.parse().map_err(|e| parse_err(0, format!("bad ball: {e}")))?,
                dimension: d,
            }
        } else {
            return Err(IoError::Invalid {
                path: meta_path.clone(),
                msg: format!("unknown domain `{dom}`"),
            });
        }
    };
    let root = match get("root")?.as_str() {
        "-" => None,
        r => Some(r.parse().map_err(|e| parse_err(0, format!("bad root: {e}")))?),
    };
    let ensemble_n = match get("ensemble_n").map(|s| s.as_str()) {
        Ok("-") | Err(_) => None,
        Ok(v) => Some(v.parse().map_err(|e| parse_err(0, format!("bad ensemble_n: {e}")))?),
    };
    let format = match get("format")?.as_str() {
        "csv" => LocationFormat::Csv,
        "binary" => LocationFormat::Binary,
        f => {
            return Err(IoError::Invalid {
                path: meta_path.clone(),
                msg: format!("unknown format `{f}`"),
            })
        }
    };

    // Locations and weights.
    let mut coords = Vec::with_capacity(n * d as usize);
    let mut weights = Vec::with_capacity(n);
    match format {
        LocationFormat::Csv => {
            for (lineno, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != d as usize + 1 {
                    return Err(parse_err(
                        lineno,
                        format!("expected {} fields, got {}", d + 1, fields.len()),
                    ));
                }
                for c in &fields[..d as usize] {
                    coords.push(
                        c.parse::<f64>()
                            .map_err(|e| parse_err(lineno, format!("bad coordinate: {e}")))?,
                    );
                }
                weights.push(
                    fields[d as usize]
                        .parse::<f64>()
                        .map_err(|e| parse_err(lineno, format!("bad weight: {e}")))?,
                );
            }
            let _ = body_start;
        }
        LocationFormat::Binary => {
            let bin_path = sidecar(path, "bin");
            let bytes = std::fs::read(&bin_path).map_err(file_err(&bin_path))?;
            let expect = n * (d as usize + 1) * 8;
            if bytes.len() != expect {
                return Err(IoError::Invalid {
                    path: bin_path,
                    msg: format!("expected {expect} bytes, got {}", bytes.len()),
                });
            }
            for row in 0..n {
                let base = row * (d as usize + 1) * 8;
                for k in 0..d as usize {
                    let off = base + k * 8;
                    coords.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
                }
                let off = base + d as usize * 8;
                weights.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            }
        }
    }
    if weights.len() != n {
        return Err(IoError::Invalid {
            path: meta_path.clone(),
            msg: format!("expected {n} vertex rows, got {}", weights.len()),
        });
    }

    // Edge list.
    let edge_text = std::fs::read_to_string(path).map_err(file_err(path))?;
    let mut edges = Vec::new();
    for (lineno, line) in edge_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse_edge = |tok: Option<&str>| -> Result<u32, IoError> {
            tok.ok_or_else(|| IoError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "expected `i j`".into(),
            })?
            .parse()
            .map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("bad vertex index: {e}"),
            })
        };
        let i = parse_edge(parts.next())?;
        let j = parse_edge(parts.next())?;
        if i as usize >= n || j as usize >= n {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("edge ({i}, {j}) out of range for n = {n}"),
            });
        }
        if i >= j {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("edges must satisfy i < j, got ({i}, {j})"),
            });
        }
        edges.push((i, j));
    }

    Ok(SpatialGraph {
        points: PointCloud::new(d, coords, domain),
        weights: WeightVector::new(weights),
        adj: Csr::from_edges(n, &edges),
        meta: GraphMeta {
            kernel_id,
            seed,
            metric,
            ensemble_n,
            mode: "file".into(),
            warnings: Vec::new(),
        },
        root,
        polar: None,
    })
}

// ---------------------------------------------------------------------------
// Result records
// ---------------------------------------------------------------------------

/// One experiment measurement, carrying everything needed to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub config_digest: String,
    pub seed: u64,
    pub n: u64,
    pub statistic: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultFormat {
    Csv,
    Json,
}

pub const RESULT_CSV_HEADER: &str =
    "experiment,config_digest,seed,n,statistic,value,stderr,timestamp";

pub fn write_results(
    records: &[ResultRecord],
    path: &Path,
    format: ResultFormat,
) -> Result<(), IoError> {
    match format {
        ResultFormat::Csv => {
            let mut out = String::new();
            writeln!(out, "{RESULT_CSV_HEADER}").unwrap();
            for r in records {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.experiment,
                    r.config_digest,
                    r.seed,
                    r.n,
                    r.statistic,
                    r.value,
                    r.stderr.map(|s| s.to_string()).unwrap_or_default(),
                    r.timestamp
                )
                .unwrap();
            }
            std::fs::write(path, out).map_err(file_err(path))
        }
        ResultFormat::Json => {
            let text = serde_json::to_string_pretty(records).expect("serializable records");
            std::fs::write(path, text).map_err(file_err(path))
        }
    }
}

pub fn read_results_json(path: &Path) -> Result<Vec<ResultRecord>, IoError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Invalid {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Digest of a flat key/value configuration, stable under key reordering.
pub fn config_digest(entries: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in entries {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(&hasher.finalize()[..16])
}
