//! On-disk dataset bundles.
//!
//! A bundle is a directory:
//!
//! ```text
//! meta.json     {"name","n","m","f_in","classes","feature_dtype":"f32","has_masks","payload_sha256"}
//! edges.csv     "tail,head" per line, 0-based, tail < head, sorted
//! features.bin  little-endian f32, row-major, n·f_in values
//! labels.csv    one class index per line, n lines
//! masks.csv     optional, "train|val|test|none" per line, n lines
//! ```
//!
//! `payload_sha256` is the hex SHA-256 of the bytes of `edges.csv`,
//! `features.bin`, `labels.csv` and (when present) `masks.csv`,
//! concatenated in that order.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::split::SplitSpec;
use crate::graph::{Graph, GraphError};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing bundle file {0}")]
    MissingFile(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed meta.json: {0}")]
    Meta(String),
    #[error("{file} line {line}: {msg}")]
    Parse {
        file: &'static str,
        line: usize,
        msg: String,
    },
    #[error("feature row count mismatch: expected {expected} rows of {f_in}, file holds {values} values")]
    FeatureRowCount {
        expected: usize,
        f_in: usize,
        values: usize,
    },
    #[error("{field} count mismatch: expected {expected}, found {found}")]
    CountMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("label {label} at node {node} is outside 0..{classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        classes: usize,
    },
    #[error("payload checksum mismatch: meta.json says {expected}, payload hashes to {actual}")]
    Checksum { expected: String, actual: String },
    #[error("benchmark {name}: {field} is {found}, reference statistics say {expected}")]
    Benchmark {
        name: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl BundleError {
    /// Stable short code per failure class.
    pub fn code(&self) -> &'static str {
        match self {
            BundleError::MissingFile(_) => "E_MISSING_FILE",
            BundleError::Io { .. } => "E_IO",
            BundleError::Meta(_) => "E_META",
            BundleError::Parse { .. } => "E_PARSE",
            BundleError::FeatureRowCount { .. } => "E_FEATURE_ROWS",
            BundleError::CountMismatch { .. } => "E_COUNT",
            BundleError::NonFiniteFeature { .. } => "E_NAN_FEATURE",
            BundleError::LabelOutOfRange { .. } => "E_LABEL_RANGE",
            BundleError::Checksum { .. } => "E_CHECKSUM",
            BundleError::Benchmark { .. } => "E_BENCHMARK_STATS",
            BundleError::Graph(_) => "E_GRAPH",
        }
    }
}

/// Reference statistics of the citation benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkStats {
    pub name: &'static str,
    pub classes: usize,
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
}

pub const BENCHMARKS: [BenchmarkStats; 4] = [
    BenchmarkStats {
        name: "cora",
        classes: 7,
        nodes: 2708,
        edges: 5429,
        features: 1433,
    },
    BenchmarkStats {
        name: "citeseer",
        classes: 6,
        nodes: 3327,
        edges: 4732,
        features: 3703,
    },
    BenchmarkStats {
        name: "pubmed",
        classes: 3,
        nodes: 19717,
        edges: 44338,
        features: 500,
    },
    BenchmarkStats {
        name: "chameleon",
        classes: 5,
        nodes: 2277,
        edges: 36101,
        features: 2325,
    },
];

pub fn benchmark_stats(name: &str) -> Option<BenchmarkStats> {
    let lower = name.to_ascii_lowercase();
    BENCHMARKS.into_iter().find(|b| b.name == lower)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub f_in: usize,
    pub classes: usize,
    pub feature_dtype: String,
    pub has_masks: bool,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub classes: usize,
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
    /// Canonical undirected edges `(min, max)`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Standard split shipped with the data, if any. Loaded masks carry seed 0.
    pub masks: Option<SplitSpec>,
}

impl DatasetBundle {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn f_in(&self) -> usize {
        self.features.ncols()
    }

    pub fn graph(&self) -> Result<Graph, GraphError> {
        Graph::from_undirected(self.n(), self.edges.iter().copied())
    }

    /// Features scaled so that every nonzero row sums to one.
    pub fn row_normalized_features(&self) -> Array2<f32> {
        let mut f = self.features.clone();
        for mut row in f.rows_mut() {
            let s: f32 = row.sum();
            if s != 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
        f
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

struct Payload {
    edges: Vec<u8>,
    features: Vec<u8>,
    labels: Vec<u8>,
    masks: Option<Vec<u8>>,
}

impl Payload {
    fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(&self.edges);
        h.update(&self.features);
        h.update(&self.labels);
        if let Some(m) = &self.masks {
            h.update(m);
        }
        hex::encode(h.finalize())
    }
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>, BundleError> {
    let path = dir.join(name);
    fs::read(&path).map_err(|source| {
        if source.kind() == ErrorKind::NotFound {
            BundleError::MissingFile(path)
        } else {
            BundleError::Io { path, source }
        }
    })
}

fn lines<'a>(file: &'static str, bytes: &'a [u8]) -> Result<Vec<&'a str>, BundleError> {
    let text = std::str::from_utf8(bytes).map_err(|e| BundleError::Parse {
        file,
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).collect())
}

fn parse_usize(file: &'static str, line: usize, s: &str) -> Result<usize, BundleError> {
    s.trim().parse().map_err(|_| BundleError::Parse {
        file,
        line: line + 1,
        msg: format!("expected a non-negative integer, got {s:?}"),
    })
}

/// Loads and validates a bundle directory.
/// Parses `meta.json` alone, without reading or checking the payload.
pub fn read_meta(dir: impl AsRef<Path>) -> Result<BundleMeta, BundleError> {
    serde_json::from_slice(&read_file(dir.as_ref(), "meta.json")?).map_err(|e| BundleError::Meta(e.to_string()))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle, BundleError> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    if meta.feature_dtype != "f32" {
        return Err(BundleError::Meta(format!(
            "unsupported feature_dtype {:?}",
            meta.feature_dtype
        )));
    }
    let payload = Payload {
        edges: read_file(dir, "edges.csv")?,
        features: read_file(dir, "features.bin")?,
        labels: read_file(dir, "labels.csv")?,
        masks: if meta.has_masks {
            Some(read_file(dir, "masks.csv")?)
        } else {
            None
        },
    };

    let n = meta.n;
    let mut raw_edges = Vec::new();
    for (i, line) in lines("edges.csv", &payload.edges)?.into_iter().enumerate() {
        let (a, b) = line.split_once(',').ok_or_else(|| BundleError::Parse {
            file: "edges.csv",
            line: i + 1,
            msg: "expected tail,head".into(),
        })?;
        raw_edges.push((parse_usize("edges.csv", i, a)?, parse_usize("edges.csv", i, b)?));
    }
    let graph = Graph::from_undirected(n, raw_edges)?;
    if graph.m() != meta.m {
        return Err(BundleError::CountMismatch {
            field: "edge",
            expected: meta.m,
            found: graph.m(),
        });
    }

    if payload.features.len() % 4 != 0 {
        return Err(BundleError::FeatureRowCount {
            expected: n,
            f_in: meta.f_in,
            values: payload.features.len() / 4,
        });
    }
    let values: Vec<f32> = payload
        .features
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.len() != n * meta.f_in {
        return Err(BundleError::FeatureRowCount {
            expected: n,
            f_in: meta.f_in,
            values: values.len(),
        });
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(BundleError::NonFiniteFeature {
            row: k / meta.f_in.max(1),
            col: k % meta.f_in.max(1),
        });
    }
    let features = Array2::from_shape_vec((n, meta.f_in), values).expect("length checked");

    let label_lines = lines("labels.csv", &payload.labels)?;
    if label_lines.len() != n {
        return Err(BundleError::CountMismatch {
            field: "label",
            expected: n,
            found: label_lines.len(),
        });
    }
    let mut labels = Vec::with_capacity(n);
    for (i, l) in label_lines.into_iter().enumerate() {
        let label = parse_usize("labels.csv", i, l)?;
        if label >= meta.classes {
            return Err(BundleError::LabelOutOfRange {
                node: i,
                label,
                classes: meta.classes,
            });
        }
        labels.push(label);
    }

    let masks = match &payload.masks {
        None => None,
        Some(bytes) => {
            let mask_lines = lines("masks.csv", bytes)?;
            if mask_lines.len() != n {
                return Err(BundleError::CountMismatch {
                    field: "mask",
                    expected: n,
                    found: mask_lines.len(),
                });
            }
            let mut split = SplitSpec::empty(n, 0);
            for (i, l) in mask_lines.into_iter().enumerate() {
                match l.trim() {
                    "train" => split.train[i] = true,
                    "val" => split.val[i] = true,
                    "test" => split.test[i] = true,
                    "none" => {}
                    other => {
                        return Err(BundleError::Parse {
                            file: "masks.csv",
                            line: i + 1,
                            msg: format!("unknown mask {other:?}"),
                        })
                    }
                }
            }
            Some(split)
        }
    };

    let actual = payload.sha256();
    if !actual.eq_ignore_ascii_case(&meta.payload_sha256) {
        return Err(BundleError::Checksum {
            expected: meta.payload_sha256,
            actual,
        });
    }

    if let Some(stats) = benchmark_stats(&meta.name) {
        for (field, expected, found) in [
            ("node count", stats.nodes, n),
            ("feature count", stats.features, meta.f_in),
            ("class count", stats.classes, meta.classes),
        ] {
            if expected != found {
                return Err(BundleError::Benchmark {
                    name: meta.name.clone(),
                    field,
                    expected,
                    found,
                });
            }
        }
        if stats.edges != graph.m() {
            log::warn!(
                "{}: {} undirected edges after deduplication, reference statistics list {}",
                meta.name,
                graph.m(),
                stats.edges
            );
        }
    }

    Ok(DatasetBundle {
        name: meta.name,
        classes: meta.classes,
        features,
        labels,
        edges: graph.edges().to_vec(),
        masks,
    })
}

/// Writes `bundle` in the canonical layout, computing the checksum.
pub fn save_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<BundleMeta, BundleError> {
    let dir = dir.as_ref();
    let io = |path: PathBuf| move |source| BundleError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let graph = bundle.graph()?;

    let mut edges = String::with_capacity(graph.m() * 12);
    for &(t, h) in graph.edges() {
        edges.push_str(&format!("{t},{h}\n"));
    }
    let mut features = Vec::with_capacity(bundle.features.len() * 4);
    for v in bundle.features.as_standard_layout().iter() {
        features.extend_from_slice(&v.to_le_bytes());
    }
    let mut labels = String::with_capacity(bundle.n() * 2);
    for y in &bundle.labels {
        labels.push_str(&format!("{y}\n"));
    }
    let masks = bundle.masks.as_ref().map(|s| {
        let mut out = String::with_capacity(bundle.n() * 6);
        for i in 0..bundle.n() {
            out.push_str(s.role(i));
            out.push('\n');
        }
        out.into_bytes()
    });
    let payload = Payload {
        edges: edges.into_bytes(),
        features,
        labels: labels.into_bytes(),
        masks,
    };
    let meta = BundleMeta {
        name: bundle.name.clone(),
        n: bundle.n(),
        m: graph.m(),
        f_in: bundle.f_in(),
        classes: bundle.classes,
        feature_dtype: "f32".into(),
        has_masks: payload.masks.is_some(),
        payload_sha256: payload.sha256(),
    };
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io(path))
    };
    write("edges.csv", &payload.edges)?;
    write("features.bin", &payload.features)?;
    write("labels.csv", &payload.labels)?;
    match &payload.masks {
        Some(m) => write("masks.csv", m)?,
        None => {
            let _ = fs::remove_file(dir.join("masks.csv"));
        }
    }
    let mut json = serde_json::to_string_pretty(&meta).map_err(|e| BundleError::Meta(e.to_string()))?;
    json.push('\n');
    write("meta.json", json.as_bytes())?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::planted_partition;

    fn toy() -> DatasetBundle {
        planted_partition("toy", 3, 12, 5, 0.5, 0.05, 11)
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = toy();
        b.masks = Some(crate::data::split::full_split(&b, 0).unwrap());
        let meta = save_bundle(&b, dir.path()).unwrap();
        assert!(meta.has_masks);
        assert_eq!(load_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn truncated_features_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&toy(), dir.path()).unwrap();
        let path = dir.path().join("features.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 20]).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert_eq!(err.code(), "E_FEATURE_ROWS");
        assert!(err.to_string().contains("feature row count mismatch"));
    }

    #[test]
    fn distinct_errors_for_distinct_corruptions() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&toy(), dir.path()).unwrap();
        let labels = dir.path().join("labels.csv");
        let original = fs::read_to_string(&labels).unwrap();

        fs::write(&labels, original.replacen('0', "9", 1)).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "E_LABEL_RANGE");

        let fewer: String = original.lines().skip(1).map(|l| format!("{l}\n")).collect();
        fs::write(&labels, fewer).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "E_COUNT");

        fs::write(&labels, &original).unwrap();
        let feats = dir.path().join("features.bin");
        let mut bytes = fs::read(&feats).unwrap();
        bytes[..4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&feats, bytes).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "E_NAN_FEATURE");

        save_bundle(&toy(), dir.path()).unwrap();
        let mut bytes = fs::read(&feats).unwrap();
        bytes[0] ^= 1;
        fs::write(&feats, bytes).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "E_CHECKSUM");

        fs::remove_file(dir.path().join("edges.csv")).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "E_MISSING_FILE");
    }

    #[test]
    fn benchmark_names_are_checked_against_reference_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = toy();
        b.name = "Cora".into();
        save_bundle(&b, dir.path()).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert_eq!(err.code(), "E_BENCHMARK_STATS");
        assert_eq!(benchmark_stats("citeseer").unwrap().features, 3703);
    }

    #[test]
    fn row_normalization() {
        let mut b = toy();
        b.features.row_mut(0).fill(0.0);
        let f = b.row_normalized_features();
        assert_eq!(f.row(0).sum(), 0.0);
        for row in f.rows().into_iter().skip(1) {
            if row.sum() > 0.0 {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }
}
