//! Bipartite variable/cut graph encoding of a master-problem state, plus the
//! serialized dataset sample and its JSON Lines container.
//!
//! Node feature layout is uniform across node types so a single
//! message-passing stack can consume it:
//!
//! ```text
//! [node_type (0 = variable, 1 = cut), value, feasibility flag]
//! ```
//!
//! Variable nodes carry the binary value from the previous master iterate.
//! Cut nodes carry the scaled constraint right-hand side: an optimality cut
//! `mu_B >= alpha + beta . y` and a feasibility cut `alpha + beta . y <= 0`
//! both become a node with value `-alpha * RHS_SCALE`, the latter flagged.
//! Edges carry the scaled nonzero coefficients `beta[i] * EDGE_SCALE`; a
//! zero coefficient produces no edge. The scale constants tame the cut
//! magnitudes this family produces (up to a few hundred) and are recorded in
//! every trained model's metadata, so data generation, training and
//! inference cannot drift apart.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cuts::CutStore;
use crate::problem::{Assignment, NUM_Y};

/// Scale applied to cut right-hand sides in node features.
pub const RHS_SCALE: f64 = 0.01;
/// Scale applied to cut coefficients on edges.
pub const EDGE_SCALE: f64 = 0.1;
/// Width of every node feature vector.
pub const NODE_FEATURES: usize = 3;
/// Schema tag for dataset files.
pub const DATASET_SCHEMA: &str = "v1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: schema {found:?}, expected {expected:?}")]
    SchemaMismatch {
        path: String,
        found: String,
        expected: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphEdge {
    pub var: usize,
    pub cut: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BipartiteGraph {
    pub var_nodes: Vec<[f64; NODE_FEATURES]>,
    pub cut_nodes: Vec<[f64; NODE_FEATURES]>,
    pub edges: Vec<GraphEdge>,
}

impl BipartiteGraph {
    pub fn num_nodes(&self) -> usize {
        self.var_nodes.len() + self.cut_nodes.len()
    }
}

/// One raw feasibility-cut row, kept unscaled next to the graph so the
/// second training stage can compute violation scores exactly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeasCutRow {
    pub alpha: f64,
    pub beta: [f64; NUM_Y],
}

/// One expert sample: the encoded pre-solve master state and the index of
/// the exact master optimum in the canonical admissible ordering.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSample {
    pub schema: String,
    pub instance_seed: u64,
    pub iteration: usize,
    pub label_index: usize,
    pub graph: BipartiteGraph,
    pub feasibility_cuts: Vec<FeasCutRow>,
}

/// Encodes the current master state. Cut nodes appear in store order,
/// optimality cuts first.
pub fn encode(store: &CutStore, y_prev: &Assignment) -> BipartiteGraph {
    let mut var_nodes = Vec::with_capacity(NUM_Y);
    for i in 0..NUM_Y {
        var_nodes.push([0.0, y_prev.bit(i), 0.0]);
    }
    let mut cut_nodes = Vec::with_capacity(store.len());
    let mut edges = Vec::new();
    for (flag, cuts) in [(0.0, &store.optimality), (1.0, &store.feasibility)] {
        for cut in cuts {
            let cut_index = cut_nodes.len();
            cut_nodes.push([1.0, -cut.alpha * RHS_SCALE, flag]);
            for (var, b) in cut.beta.iter().enumerate() {
                if *b != 0.0 {
                    edges.push(GraphEdge {
                        var,
                        cut: cut_index,
                        weight: b * EDGE_SCALE,
                    });
                }
            }
        }
    }
    BipartiteGraph {
        var_nodes,
        cut_nodes,
        edges,
    }
}

/// Recovers the `(alpha, beta)` rows from an encoded graph by undoing the
/// feature scaling. Returns `(is_feasibility_cut, alpha, beta)` per cut node.
pub fn decode_cuts(graph: &BipartiteGraph) -> Vec<(bool, f64, [f64; NUM_Y])> {
    let mut rows: Vec<(bool, f64, [f64; NUM_Y])> = graph
        .cut_nodes
        .iter()
        .map(|feat| (feat[2] == 1.0, -feat[1] / RHS_SCALE, [0.0; NUM_Y]))
        .collect();
    for edge in &graph.edges {
        rows[edge.cut].2[edge.var] = edge.weight / EDGE_SCALE;
    }
    rows
}

pub fn write_jsonl(path: &Path, samples: &[DatasetSample]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    for sample in samples {
        serde_json::to_writer(&mut out, sample).expect("sample serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetSample>, DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: DatasetSample =
            serde_json::from_str(&line).map_err(|source| DataError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                source,
            })?;
        if sample.schema != DATASET_SCHEMA {
            return Err(DataError::SchemaMismatch {
                path: path.display().to_string(),
                found: sample.schema,
                expected: DATASET_SCHEMA.to_string(),
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Writes any serializable value as pretty JSON; used for traces, models and
/// manifests.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| DataError::Parse {
        path: path.display().to_string(),
        line: 0,
        source,
    })
}
