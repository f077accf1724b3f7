//! Dataset plumbing: edge-list files, a bundled social network, a synthetic
//! block-community generator, edge splits, and the export/persistence
//! formats consumed by external tooling.
//!
//! All numeric text output uses Rust's shortest round-trip float formatting,
//! so exporting and re-parsing reproduces in-memory values exactly.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MadError, Result};
use crate::graph::Graph;
use crate::link::{LinkModel, MadConfig};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

/// How to interpret an edge-list file.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub directed: bool,
    /// Keep `u u` lines instead of rejecting them. Kept loops join the
    /// memory but are skipped as training queries.
    pub allow_self_loops: bool,
    /// Force the node count; default is one past the largest id seen.
    pub n_nodes: Option<usize>,
}

/// A parsed edge list plus counts of lines that were tolerated but dropped.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    pub duplicates_dropped: usize,
    pub self_loops_dropped: usize,
}

fn parse_node(token: &str, source: &str, line: usize) -> Result<u32> {
    token.parse::<u32>().map_err(|_| MadError::Parse {
        path: source.to_string(),
        line,
        msg: format!("invalid node id {token:?} (expected a non-negative integer)"),
    })
}

fn parse_edge_list(text: &str, source: &str, opts: &LoadOptions) -> Result<LoadedGraph> {
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut duplicates = 0usize;
    let mut self_loops = 0usize;
    let mut max_id: Option<u32> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(MadError::Parse {
                path: source.to_string(),
                line: line_no,
                msg: format!("expected 2 node ids, found {}", tokens.len()),
            });
        }
        let u = parse_node(tokens[0], source, line_no)?;
        let v = parse_node(tokens[1], source, line_no)?;
        if u == v {
            if opts.allow_self_loops {
                self_loops += 1;
                continue;
            }
            return Err(MadError::Parse {
                path: source.to_string(),
                line: line_no,
                msg: format!("self-loop {u} -> {v} (pass allow_self_loops to tolerate)"),
            });
        }
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        let key = if opts.directed || u <= v { (u, v) } else { (v, u) };
        if !seen.insert(key) {
            duplicates += 1;
            continue;
        }
        edges.push((u, v));
    }
    if edges.is_empty() {
        return Err(MadError::EmptyInput { what: "edge list" });
    }
    let n_nodes = opts
        .n_nodes
        .unwrap_or(max_id.expect("edges imply a max id") as usize + 1);
    Ok(LoadedGraph {
        graph: Graph::new(n_nodes, edges, opts.directed)?,
        duplicates_dropped: duplicates,
        self_loops_dropped: self_loops,
    })
}

/// Parse a whitespace-separated edge list file. Lines starting with `#` and
/// blank lines are skipped; duplicate edges are collapsed and counted.
pub fn load_edge_list(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadedGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_edge_list(&text, &path.display().to_string(), opts)
}

/// Train/valid/test fractions for carving a graph's edge set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    fractions: [f64; 3],
}

impl SplitSpec {
    /// Fractions must each lie in [0, 1] and sum to 1.
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        for f in [train, valid, test] {
            if !(0.0..=1.0).contains(&f) || !f.is_finite() {
                return Err(MadError::Config(format!(
                    "split fraction {f} outside [0, 1]"
                )));
            }
        }
        let sum = train + valid + test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MadError::Config(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(SplitSpec {
            fractions: [train, valid, test],
        })
    }

    pub fn fractions(&self) -> [f64; 3] {
        self.fractions
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.9, 0.05, 0.05],
        }
    }
}

/// Shuffle the edges and cut them into train/valid/test graphs.
///
/// Boundaries are cumulative floors: with fractions `(f0, f1, f2)` over `E`
/// edges, train gets `[0, floor(E*f0))`, valid `[floor(E*f0),
/// floor(E*(f0+f1)))`, and test the rest, so rounding slack lands in test.
/// A split with a positive fraction but no edges is an error: silently
/// training without a requested holdout would invalidate any evaluation.
pub fn split_edges(graph: &Graph, spec: &SplitSpec, rng: &mut Rng) -> Result<(Graph, Graph, Graph)> {
    let mut edges: Vec<(u32, u32)> = graph.edges().to_vec();
    rng.shuffle(&mut edges);
    let e = edges.len();
    let [f0, f1, _] = spec.fractions();
    let b1 = ((e as f64) * f0).floor() as usize;
    let b2 = (((e as f64) * (f0 + f1)).floor() as usize).clamp(b1, e);
    let parts = [
        ("train", &edges[0..b1]),
        ("valid", &edges[b1..b2]),
        ("test", &edges[b2..e]),
    ];
    for ((which, part), fraction) in parts.iter().zip(spec.fractions()) {
        if fraction > 0.0 && part.is_empty() {
            return Err(MadError::EmptySplit {
                which,
                n_edges: e,
                fraction,
            });
        }
    }
    Ok((
        graph.with_edges(parts[0].1.to_vec())?,
        graph.with_edges(parts[1].1.to_vec())?,
        graph.with_edges(parts[2].1.to_vec())?,
    ))
}

/// Generate an undirected stochastic block model graph: nodes are assigned
/// to `blocks` equal contiguous groups, and each pair `i < j` is edged
/// independently with probability `p_in` (same block) or `p_out`.
///
/// Exactly one uniform draw is consumed per pair, so the random stream
/// position never depends on the probabilities.
pub fn generate_sbm(n: usize, blocks: usize, p_in: f64, p_out: f64, rng: &mut Rng) -> Result<Graph> {
    if n == 0 {
        return Err(MadError::EmptyInput { what: "nodes" });
    }
    if blocks == 0 || blocks > n {
        return Err(MadError::Config(format!(
            "{blocks} blocks is invalid for {n} nodes"
        )));
    }
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(MadError::Config(format!(
                "edge probability {p} outside [0, 1]"
            )));
        }
    }
    let block_of = |i: usize| i * blocks / n;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block_of(i) == block_of(j) { p_in } else { p_out };
            let draw = rng.next_f64();
            if draw < p {
                edges.push((i as u32, j as u32));
            }
        }
    }
    Graph::new(n, edges, false)
}

/// The bundled karate club friendship network: 34 nodes, 78 undirected
/// edges, and the post-split faction label (0 or 1) of each member.
pub fn karate() -> (Graph, Vec<u8>) {
    let loaded = parse_edge_list(
        include_str!("builtin_data/karate_edges.tsv"),
        "builtin:karate",
        &LoadOptions::default(),
    )
    .expect("bundled edge list parses");
    let mut labels = vec![0u8; loaded.graph.n_nodes()];
    let mut covered = vec![false; loaded.graph.n_nodes()];
    for (idx, raw) in include_str!("builtin_data/karate_communities.tsv")
        .lines()
        .enumerate()
    {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let node: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .unwrap_or_else(|| panic!("bad node on community line {}", idx + 1));
        let label: u8 = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .unwrap_or_else(|| panic!("bad label on community line {}", idx + 1));
        labels[node] = label;
        covered[node] = true;
    }
    assert!(covered.iter().all(|&c| c), "every member has a faction");
    (loaded.graph, labels)
}

/// Write position and differential tables as CSV, one row per node (per
/// head, with a `head` column when the model has several).
///
/// Header: `node[,head],pos_0..pos_{d-1},grad_0..grad_{d-1}`. Values use
/// shortest round-trip formatting.
pub fn export_embeddings(path: impl AsRef<Path>, model: &LinkModel, params: &ParamStore) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path.as_ref())?);
    let dim = model.cfg.dim;
    let many_heads = model.heads().n_heads() > 1;
    let mut header = String::from("node");
    if many_heads {
        header.push_str(",head");
    }
    for i in 0..dim {
        header.push_str(&format!(",pos_{i}"));
    }
    for i in 0..dim {
        header.push_str(&format!(",grad_{i}"));
    }
    writeln!(out, "{header}")?;
    for head in model.heads().iter() {
        for node in 0..model.n_nodes() as u32 {
            let pos = head.position(params, node)?;
            let grad = head.g_dst(params, node)?;
            let mut row = node.to_string();
            if many_heads {
                row.push_str(&format!(",{}", head.head()));
            }
            for x in pos.iter().chain(grad.iter()) {
                row.push_str(&format!(",{x}"));
            }
            writeln!(out, "{row}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write any metrics document as pretty-printed JSON with a trailing
/// newline. The output has no timestamps or machine-local content, so
/// identical inputs produce byte-identical files.
pub fn export_metrics<T: serde::Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

const MODEL_MAGIC: &[u8; 8] = b"MADMODL1";

/// Serialize a model's configuration and parameter tables. The format is a
/// magic tag, the JSON config, then each tensor in sorted name order as
/// `(name, shape, little-endian f64 data)`.
pub fn save_model(path: impl AsRef<Path>, cfg: &MadConfig, params: &ParamStore) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path.as_ref())?);
    out.write_all(MODEL_MAGIC)?;
    let cfg_json = serde_json::to_vec(cfg)?;
    out.write_all(&(cfg_json.len() as u64).to_le_bytes())?;
    out.write_all(&cfg_json)?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for name in params.names() {
        let tensor = params.value(name)?;
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.shape().len() as u64).to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in tensor.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct ModelReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> ModelReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(MadError::ModelFormat {
                path: self.path.clone(),
                msg: format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.offset,
                    self.bytes.len()
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn take_u64(&mut self) -> Result<u64> {
        let bytes = self.take(8)?;
        Ok(u64::from_le_bytes(bytes.try_into().expect("8 bytes")))
    }
}

/// Read back a file written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<(MadConfig, ParamStore)> {
    let path_str = path.as_ref().display().to_string();
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let bad = |msg: String| MadError::ModelFormat {
        path: path_str.clone(),
        msg,
    };
    let mut reader = ModelReader {
        bytes: &bytes,
        offset: 0,
        path: path_str.clone(),
    };
    if reader.take(8)? != MODEL_MAGIC {
        return Err(bad("not a model file (bad magic)".into()));
    }
    let cfg_len = reader.take_u64()? as usize;
    let cfg: MadConfig = serde_json::from_slice(reader.take(cfg_len)?)
        .map_err(|e| bad(format!("config block: {e}")))?;
    let n_tensors = reader.take_u64()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_tensors {
        let name_len = reader.take_u64()? as usize;
        let name = std::str::from_utf8(reader.take(name_len)?)
            .map_err(|e| bad(format!("tensor name: {e}")))?
            .to_string();
        let ndim = reader.take_u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(reader.take_u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let chunk = reader.take(8)?;
            data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| bad(format!("tensor {name:?}: {e}")))?;
        params
            .register(&name, tensor)
            .map_err(|e| bad(format!("tensor {name:?}: {e}")))?;
    }
    if reader.offset != bytes.len() {
        return Err(bad(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - reader.offset
        )));
    }
    Ok((cfg, params))
}

/// Parse a numeric CSV where each row is `x_0,...,x_{m-1},y`. Returns the
/// feature rows and targets. `#` lines and blank lines are skipped.
pub fn load_unary_csv(path: impl AsRef<Path>) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let path_str = path.as_ref().display().to_string();
    let text = fs::read_to_string(path.as_ref())?;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for token in line.split(',') {
            let value: f64 = token.trim().parse().map_err(|_| MadError::Parse {
                path: path_str.clone(),
                line: line_no,
                msg: format!("invalid number {:?}", token.trim()),
            })?;
            row.push(value);
        }
        if row.len() < 2 {
            return Err(MadError::Parse {
                path: path_str.clone(),
                line: line_no,
                msg: "need at least one feature column and a target".into(),
            });
        }
        if let Some(first) = xs.first() {
            if row.len() != first.len() + 1 {
                return Err(MadError::Parse {
                    path: path_str.clone(),
                    line: line_no,
                    msg: format!(
                        "row has {} columns, previous rows had {}",
                        row.len(),
                        first.len() + 1
                    ),
                });
            }
        }
        let y = row.pop().expect("checked len");
        xs.push(row);
        ys.push(y);
    }
    if xs.is_empty() {
        return Err(MadError::EmptyInput { what: "csv rows" });
    }
    Ok((xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_a_two_edge_file() {
        let f = write_temp("0\t1\n1\t2\n");
        let loaded = load_edge_list(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.graph.n_nodes(), 3);
        assert_eq!(loaded.graph.n_edges(), 2);
        assert_eq!(loaded.duplicates_dropped, 0);
    }

    #[test]
    fn collapses_duplicates_with_a_count() {
        let f = write_temp("0 1\n0 1\n");
        let loaded = load_edge_list(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.graph.n_edges(), 1);
        assert_eq!(loaded.duplicates_dropped, 1);
    }

    #[test]
    fn reversed_pair_is_a_duplicate_only_when_undirected() {
        let f = write_temp("0 1\n1 0\n");
        let undirected = load_edge_list(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(undirected.graph.n_edges(), 1);
        assert_eq!(undirected.duplicates_dropped, 1);
        let directed = load_edge_list(
            f.path(),
            &LoadOptions { directed: true, ..LoadOptions::default() },
        )
        .unwrap();
        assert_eq!(directed.graph.n_edges(), 2);
        assert_eq!(directed.duplicates_dropped, 0);
    }

    #[test]
    fn comments_and_blanks_are_skipped_and_line_numbers_survive() {
        let f = write_temp("# header\n0 1\n\nnot numbers\n");
        match load_edge_list(f.path(), &LoadOptions::default()) {
            Err(MadError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        for (content, expect_line) in [
            ("0 1 2\n", 1),
            ("0\n", 1),
            ("0 1\n-1 2\n", 2),
            ("0 1\n1 1.5\n", 2),
        ] {
            let f = write_temp(content);
            match load_edge_list(f.path(), &LoadOptions::default()) {
                Err(MadError::Parse { line, .. }) => assert_eq!(line, expect_line, "{content:?}"),
                other => panic!("{content:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn self_loops_error_by_default_and_drop_when_allowed() {
        let f = write_temp("0 1\n2 2\n");
        match load_edge_list(f.path(), &LoadOptions::default()) {
            Err(MadError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let loaded = load_edge_list(
            f.path(),
            &LoadOptions { allow_self_loops: true, ..LoadOptions::default() },
        )
        .unwrap();
        assert_eq!(loaded.graph.n_edges(), 1);
        assert_eq!(loaded.self_loops_dropped, 1);
    }

    #[test]
    fn node_count_can_be_overridden() {
        let f = write_temp("0 1\n");
        let loaded = load_edge_list(
            f.path(),
            &LoadOptions { n_nodes: Some(10), ..LoadOptions::default() },
        )
        .unwrap();
        assert_eq!(loaded.graph.n_nodes(), 10);
        let too_small = load_edge_list(
            f.path(),
            &LoadOptions { n_nodes: Some(1), ..LoadOptions::default() },
        );
        assert!(matches!(too_small, Err(MadError::NodeOutOfRange { .. })));
    }

    #[test]
    fn empty_files_are_an_error() {
        let f = write_temp("# nothing but comments\n");
        assert!(matches!(
            load_edge_list(f.path(), &LoadOptions::default()),
            Err(MadError::EmptyInput { .. })
        ));
    }

    #[test]
    fn bundled_network_has_the_known_shape() {
        let (graph, labels) = karate();
        assert_eq!(graph.n_nodes(), 34);
        assert_eq!(graph.n_edges(), 78);
        assert!(!graph.directed());
        assert!(graph.has_edge(0, 1));
        assert!(graph.has_edge(33, 32));
        assert!(graph.has_edge(0, 31));
        assert!(!graph.has_edge(0, 33));
        assert_eq!(labels.len(), 34);
        assert_eq!(labels[0], 0);
        assert_eq!(labels[8], 0);
        assert_eq!(labels[9], 1);
        assert_eq!(labels[33], 1);
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 17);
    }

    #[test]
    fn default_split_of_the_bundled_network_is_70_4_4() {
        let (graph, _) = karate();
        let mut rng = Rng::new(7);
        let (train, valid, test) =
            split_edges(&graph, &SplitSpec::default(), &mut rng).unwrap();
        assert_eq!(train.n_edges(), 70);
        assert_eq!(valid.n_edges(), 4);
        assert_eq!(test.n_edges(), 4);
    }

    #[test]
    fn splits_are_a_disjoint_cover() {
        let (graph, _) = karate();
        let mut rng = Rng::new(123);
        let (train, valid, test) =
            split_edges(&graph, &SplitSpec::new(0.5, 0.25, 0.25).unwrap(), &mut rng).unwrap();
        let mut all: Vec<(u32, u32)> = Vec::new();
        all.extend_from_slice(train.edges());
        all.extend_from_slice(valid.edges());
        all.extend_from_slice(test.edges());
        assert_eq!(all.len(), graph.n_edges());
        let set: HashSet<(u32, u32)> = all.into_iter().collect();
        let original: HashSet<(u32, u32)> = graph.edges().iter().copied().collect();
        assert_eq!(set, original);
        assert_eq!(train.n_nodes(), graph.n_nodes());
    }

    #[test]
    fn everything_to_train_leaves_holdouts_empty() {
        let (graph, _) = karate();
        let mut rng = Rng::new(1);
        let (train, valid, test) =
            split_edges(&graph, &SplitSpec::new(1.0, 0.0, 0.0).unwrap(), &mut rng).unwrap();
        assert_eq!(train.n_edges(), 78);
        assert_eq!(valid.n_edges(), 0);
        assert_eq!(test.n_edges(), 0);
    }

    #[test]
    fn splits_are_deterministic_per_seed() {
        let (graph, _) = karate();
        let split = |seed| {
            let mut rng = Rng::new(seed);
            let (a, b, c) = split_edges(&graph, &SplitSpec::default(), &mut rng).unwrap();
            (a.edges().to_vec(), b.edges().to_vec(), c.edges().to_vec())
        };
        assert_eq!(split(5), split(5));
        assert_ne!(split(5), split(6));
    }

    #[test]
    fn a_requested_but_empty_split_is_an_error() {
        // Ten edges at 90/5/5: the valid slice floors to zero edges.
        let edges: Vec<(u32, u32)> = (0..10u32).map(|i| (i, i + 10)).collect();
        let graph = Graph::new(20, edges, false).unwrap();
        let mut rng = Rng::new(2);
        match split_edges(&graph, &SplitSpec::default(), &mut rng) {
            Err(MadError::EmptySplit { which, n_edges, .. }) => {
                assert_eq!(which, "valid");
                assert_eq!(n_edges, 10);
            }
            other => panic!("expected empty-split error, got {other:?}"),
        }
    }

    #[test]
    fn split_fractions_are_validated() {
        assert!(SplitSpec::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitSpec::new(-0.1, 0.6, 0.5).is_err());
        assert!(SplitSpec::new(0.2, 0.3, 0.5).is_ok());
    }

    #[test]
    fn zero_probability_blocks_generate_no_edges() {
        let graph = generate_sbm(20, 2, 0.0, 0.0, &mut Rng::new(3)).unwrap();
        assert_eq!(graph.n_edges(), 0);
        assert_eq!(graph.n_nodes(), 20);
    }

    #[test]
    fn certain_intra_and_impossible_inter_gives_two_cliques() {
        let mut rng = Rng::new(4);
        let graph = generate_sbm(10, 2, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(graph.n_edges(), 2 * (5 * 4 / 2));
        assert!(graph.has_edge(0, 4));
        assert!(graph.has_edge(5, 9));
        assert!(!graph.has_edge(4, 5));
        assert!(!graph.has_edge(0, 9));
    }

    #[test]
    fn edge_count_matches_binomial_expectation() {
        // 2 blocks of 100: 9900 intra pairs at 0.15, 10000 inter at 0.02.
        // Mean 1685, variance 9900*.15*.85 + 10000*.02*.98 = 1458.25.
        let mut rng = Rng::new(5);
        let graph = generate_sbm(200, 2, 0.15, 0.02, &mut rng).unwrap();
        let mean = 1685.0;
        let sigma = 1458.25f64.sqrt();
        let e = graph.n_edges() as f64;
        assert!(
            (e - mean).abs() <= 3.0 * sigma,
            "|E| = {e}, expected {mean} +/- {:.1}",
            3.0 * sigma
        );
    }

    #[test]
    fn sbm_rejects_bad_arguments() {
        let mut rng = Rng::new(0);
        assert!(generate_sbm(10, 0, 0.5, 0.5, &mut rng).is_err());
        assert!(generate_sbm(10, 11, 0.5, 0.5, &mut rng).is_err());
        assert!(generate_sbm(10, 2, 1.5, 0.5, &mut rng).is_err());
        assert!(generate_sbm(0, 1, 0.5, 0.5, &mut rng).is_err());
    }

    fn tiny_model(dim: usize, heads: usize) -> (LinkModel, ParamStore, MadConfig) {
        let (graph, _) = karate();
        let cfg = MadConfig {
            dim,
            heads,
            k_refs: 3,
            ..MadConfig::default()
        };
        let mut params = ParamStore::new();
        let mut rng = Rng::new(11);
        let model = LinkModel::init(&cfg, &graph, &mut params, &mut rng).unwrap();
        (model, params, cfg)
    }

    #[test]
    fn embedding_export_round_trips_exactly() {
        let (model, params, _) = tiny_model(2, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.csv");
        export_embeddings(&path, &model, &params).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "node,pos_0,pos_1,grad_0,grad_1");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 34);
        for (node, row) in rows.iter().enumerate() {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 5);
            assert_eq!(cols[0].parse::<usize>().unwrap(), node);
            let head = model.heads().head(0);
            let pos = head.position(&params, node as u32).unwrap();
            let grad = head.g_dst(&params, node as u32).unwrap();
            for (i, expect) in pos.iter().chain(grad.iter()).enumerate() {
                let parsed: f64 = cols[1 + i].parse().unwrap();
                assert_eq!(parsed, *expect, "row {node} col {}", 1 + i);
            }
        }
    }

    #[test]
    fn multi_head_export_adds_a_head_column() {
        let (model, params, _) = tiny_model(2, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.csv");
        export_embeddings(&path, &model, &params).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "node,head,pos_0,pos_1,grad_0,grad_1");
        assert_eq!(lines.len(), 1 + 34 * 2);
        assert!(lines[1].starts_with("0,0,"));
        assert!(lines[35].starts_with("0,1,"));
    }

    #[test]
    fn metrics_export_parses_back() {
        use crate::trainer::{HitsByMode, LossReport};
        let reports = vec![
            LossReport { epoch: 1, mean_loss: 0.7, train_hits: None, eval_hits: None },
            LossReport {
                epoch: 2,
                mean_loss: 0.6,
                train_hits: Some(HitsByMode { random: 0.25, dynamic_nn: 0.5 }),
                eval_hits: Some(HitsByMode { random: 0.5, dynamic_nn: 0.75 }),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.json");
        export_metrics(&path, &reports).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let back: Vec<LossReport> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, reports);
    }

    #[test]
    fn model_files_round_trip() {
        let (_, params, cfg) = tiny_model(3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &cfg, &params).unwrap();
        let (cfg_back, params_back) = load_model(&path).unwrap();
        assert_eq!(
            serde_json::to_string(&cfg_back).unwrap(),
            serde_json::to_string(&cfg).unwrap()
        );
        assert_eq!(params_back, params);
    }

    #[test]
    fn model_loader_rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"definitely not a model").unwrap();
        assert!(matches!(
            load_model(&path),
            Err(MadError::ModelFormat { .. })
        ));

        let (_, params, cfg) = tiny_model(2, 1);
        let good = dir.path().join("model.bin");
        save_model(&good, &cfg, &params).unwrap();
        let bytes = fs::read(&good).unwrap();
        let cut = dir.path().join("cut.bin");
        fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_model(&cut), Err(MadError::ModelFormat { .. })));
        let padded = dir.path().join("padded.bin");
        let mut long = bytes.clone();
        long.extend_from_slice(&[0u8; 4]);
        fs::write(&padded, &long).unwrap();
        assert!(matches!(
            load_model(&padded),
            Err(MadError::ModelFormat { .. })
        ));
    }

    #[test]
    fn unary_csv_loads_features_and_targets() {
        let f = write_temp("# x0,x1,y\n1,2,3\n4,5,6\n");
        let (xs, ys) = load_unary_csv(f.path()).unwrap();
        assert_eq!(xs, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
        assert_eq!(ys, vec![3.0, 6.0]);
    }

    #[test]
    fn unary_csv_rejects_ragged_and_nonnumeric_rows() {
        let f = write_temp("1,2,3\n4,5\n");
        match load_unary_csv(f.path()) {
            Err(MadError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_temp("1,apple\n");
        assert!(matches!(
            load_unary_csv(f.path()),
            Err(MadError::Parse { line: 1, .. })
        ));
    }
}
