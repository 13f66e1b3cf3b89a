//! DeepWalk node embeddings: truncated uniform random walks, then
//! skip-gram with negative sampling over the walks.

use std::cell::Cell;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::Graph;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub seed: u64,
    /// Lock-free parallel SGD. Faster, but results depend on thread timing.
    pub parallel: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 80,
            walk_length: 40,
            window: 10,
            dim: 300,
            negatives: 5,
            epochs: 1,
            initial_lr: 0.025,
            seed: 0,
            parallel: false,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("walks_per_node", self.walks_per_node),
            ("walk_length", self.walk_length),
            ("window", self.window),
            ("dim", self.dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("walk.{name} must be positive")));
            }
        }
        // Written to reject NaN as well.
        if self.initial_lr.is_nan() || self.initial_lr <= 0.0 {
            return Err(Error::Config("walk.initial_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Walks as node-index sequences. Round `r` visits every node once in a
/// seeded shuffled order; each walk draws from its own derived stream so
/// generation can fan out without changing the result.
pub fn generate_walks(graph: &Graph, cfg: &WalkConfig) -> Vec<Vec<usize>> {
    let n = graph.node_count();
    if n == 0 {
        return Vec::new();
    }
    (0..cfg.walks_per_node)
        .into_par_iter()
        .flat_map_iter(|round| {
            let mut order: Vec<usize> = (0..n).collect();
            let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, round as u64]));
            order.shuffle(&mut shuffle_rng);
            order.into_iter().map(move |start| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2, round as u64, start as u64]));
                random_walk(graph, start, cfg.walk_length, &mut rng)
            })
        })
        .collect()
}

fn random_walk(graph: &Graph, start: usize, length: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(length);
    walk.push(start);
    let mut cur = start;
    while walk.len() < length {
        let adj = graph.neighbors(cur);
        if adj.is_empty() {
            break;
        }
        cur = adj[rng.gen_range(0..adj.len())];
        walk.push(cur);
    }
    walk
}

/// Learned vectors, one row per node, in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl NodeEmbeddings {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::Dimension(format!(
                "{} values for {} rows of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord {
                record: ids[bad / dim.max(1)].clone(),
                message: "non-finite embedding value".into(),
            });
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(NodeEmbeddings {
            ids,
            dim,
            data,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }
}

trait Weights {
    fn get(&self, i: usize) -> f64;
    fn add(&self, i: usize, delta: f64);
}

impl Weights for [Cell<f64>] {
    fn get(&self, i: usize) -> f64 {
        self[i].get()
    }
    fn add(&self, i: usize, delta: f64) {
        self[i].set(self[i].get() + delta);
    }
}

// Racy read-modify-write; lost updates are accepted in hogwild mode.
impl Weights for [AtomicU64] {
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self[i].load(Ordering::Relaxed))
    }
    fn add(&self, i: usize, delta: f64) {
        let v = Weights::get(self, i) + delta;
        self[i].store(v.to_bits(), Ordering::Relaxed);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One SGNS pass over a walk.
#[allow(clippy::too_many_arguments)]
#[allow(clippy::needless_range_loop)]
fn train_walk<W: Weights + ?Sized>(
    input: &W,
    output: &W,
    walk: &[usize],
    n_nodes: usize,
    cfg: &WalkConfig,
    lr: f64,
    rng: &mut impl Rng,
    grad: &mut [f64],
) {
    let dim = cfg.dim;
    for (pos, &center) in walk.iter().enumerate() {
        let lo = pos.saturating_sub(cfg.window);
        let hi = (pos + cfg.window + 1).min(walk.len());
        for cpos in lo..hi {
            if cpos == pos {
                continue;
            }
            let context = walk[cpos];
            grad.iter_mut().for_each(|g| *g = 0.0);
            let base_in = center * dim;
            for k in 0..=cfg.negatives {
                let (target, label) = if k == 0 {
                    (context, 1.0)
                } else {
                    let t = rng.gen_range(0..n_nodes);
                    if t == context {
                        continue;
                    }
                    (t, 0.0)
                };
                let base_out = target * dim;
                let mut dot = 0.0;
                for d in 0..dim {
                    dot += input.get(base_in + d) * output.get(base_out + d);
                }
                let g = (label - sigmoid(dot)) * lr;
                for d in 0..dim {
                    grad[d] += g * output.get(base_out + d);
                    output.add(base_out + d, g * input.get(base_in + d));
                }
            }
            for d in 0..dim {
                input.add(base_in + d, grad[d]);
            }
        }
    }
}

fn init_input(n: usize, cfg: &WalkConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3]));
    let bound = 0.5 / cfg.dim as f64;
    (0..n * cfg.dim).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Skip-gram with negative sampling. The learning rate decays linearly from
/// `initial_lr` to `initial_lr * 1e-4` over all epochs.
pub fn train_skipgram(graph: &Graph, walks: &[Vec<usize>], cfg: &WalkConfig) -> Result<NodeEmbeddings> {
    let n = graph.node_count();
    if cfg.dim == 0 {
        return Err(Error::Dimension("embedding dim must be positive".into()));
    }
    if let Some(bad) = walks.iter().flatten().find(|&&v| v >= n) {
        return Err(Error::Dimension(format!(
            "walk references node {bad} but graph has {n} nodes"
        )));
    }
    let init = init_input(n, cfg);
    let total = (walks.len() * cfg.epochs).max(1) as f64;
    let min_lr = cfg.initial_lr * 1e-4;
    let lr_at = |done: usize| (cfg.initial_lr * (1.0 - done as f64 / total)).max(min_lr);

    let data = if cfg.parallel {
        let input: Vec<AtomicU64> = init.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
        let output: Vec<AtomicU64> = (0..n * cfg.dim).map(|_| AtomicU64::new(0f64.to_bits())).collect();
        let done = AtomicUsize::new(0);
        for epoch in 0..cfg.epochs {
            walks.par_iter().enumerate().for_each(|(i, walk)| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[4, epoch as u64, i as u64]));
                let mut grad = vec![0.0; cfg.dim];
                let lr = lr_at(done.fetch_add(1, Ordering::Relaxed));
                train_walk(&input[..], &output[..], walk, n, cfg, lr, &mut rng, &mut grad);
            });
        }
        input.iter().map(|a| f64::from_bits(a.load(Ordering::Relaxed))).collect()
    } else {
        let input: Vec<Cell<f64>> = init.into_iter().map(Cell::new).collect();
        let output: Vec<Cell<f64>> = (0..n * cfg.dim).map(|_| Cell::new(0.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[4]));
        let mut grad = vec![0.0; cfg.dim];
        let mut done = 0;
        for _ in 0..cfg.epochs {
            for walk in walks {
                train_walk(&input[..], &output[..], walk, n, cfg, lr_at(done), &mut rng, &mut grad);
                done += 1;
            }
        }
        input.into_iter().map(Cell::into_inner).collect()
    };
    NodeEmbeddings::new(graph.nodes().to_vec(), cfg.dim, data)
}

/// Walks followed by skip-gram, the full DeepWalk pipeline.
pub fn deepwalk(graph: &Graph, cfg: &WalkConfig) -> Result<NodeEmbeddings> {
    cfg.validate()?;
    let walks = generate_walks(graph, cfg);
    train_skipgram(graph, &walks, cfg)
}

pub fn save_embeddings(emb: &NodeEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{} {}", emb.len(), emb.dim()).map_err(io)?;
    for (i, id) in emb.ids().iter().enumerate() {
        write!(out, "{id}").map_err(io)?;
        for v in emb.row(i) {
            write!(out, " {v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads the `<count> <dim>` text format shared by node embeddings and
/// pretrained word vectors.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<NodeEmbeddings> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), &path.display().to_string())
}

pub fn read_embeddings(reader: impl BufRead, context: &str) -> Result<NodeEmbeddings> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(context, "missing header"))?
        .map_err(|e| Error::parse(context, e))?;
    let mut parts = header.split_whitespace();
    let mut field = |name: &str| -> Result<usize> {
        parts
            .next()
            .ok_or_else(|| Error::parse(context, format!("header missing {name}")))?
            .parse()
            .map_err(|e| Error::parse(context, format!("header {name}: {e}")))
    };
    let count = field("count")?;
    let dim = field("dim")?;
    let mut ids = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::parse(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("non-empty line").to_string();
        let before = data.len();
        for tok in parts {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::parse(context, format!("line {}: {e}", lineno + 2)))?;
            data.push(v);
        }
        if data.len() - before != dim {
            return Err(Error::parse(
                context,
                format!("line {}: expected {dim} values, got {}", lineno + 2, data.len() - before),
            ));
        }
        ids.push(id);
    }
    if ids.len() != count {
        return Err(Error::parse(
            context,
            format!("header declares {count} rows but body has {}", ids.len()),
        ));
    }
    NodeEmbeddings::new(ids, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> WalkConfig {
        WalkConfig {
            walks_per_node: 10,
            walk_length: 8,
            window: 3,
            dim: 16,
            negatives: 3,
            epochs: 2,
            seed: 11,
            ..WalkConfig::default()
        }
    }

    fn path_graph() -> Graph {
        Graph::from_edges(vec!["a".into(), "b".into(), "c".into()], [(0, 1), (1, 2)])
    }

    #[test]
    fn isolated_node_walks_have_length_one() {
        let g = Graph::from_edges(vec!["solo".into()], []);
        let walks = generate_walks(&g, &small_cfg());
        assert_eq!(walks.len(), 10);
        assert!(walks.iter().all(|w| w == &vec![0]));
    }

    #[test]
    fn walks_follow_edges() {
        let g = path_graph();
        for walk in generate_walks(&g, &small_cfg()) {
            assert_eq!(walk.len(), 8);
            for pair in walk.windows(2) {
                assert!(g.has_edge(pair[0], pair[1]));
            }
        }
    }

    #[test]
    fn walk_count_is_nodes_times_rounds() {
        let ids = (0..10).map(|i| format!("n{i}")).collect();
        let g = Graph::from_edges(ids, (0..9).map(|i| (i, i + 1)));
        let cfg = WalkConfig {
            walks_per_node: 80,
            ..small_cfg()
        };
        assert_eq!(generate_walks(&g, &cfg).len(), 800);
    }

    #[test]
    fn walks_are_deterministic() {
        let g = path_graph();
        assert_eq!(generate_walks(&g, &small_cfg()), generate_walks(&g, &small_cfg()));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let g = path_graph();
        let cfg = WalkConfig {
            epochs: 0,
            ..small_cfg()
        };
        let walks = generate_walks(&g, &cfg);
        let emb = train_skipgram(&g, &walks, &cfg).unwrap();
        let init = init_input(3, &cfg);
        assert_eq!(emb.row(1), &init[16..32]);
        let bound = 0.5 / 16.0;
        assert!(init.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn single_node_graph_is_fine() {
        let g = Graph::from_edges(vec!["x".into()], []);
        let emb = deepwalk(&g, &small_cfg()).unwrap();
        assert_eq!(emb.len(), 1);
        assert!(emb.row(0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let g = path_graph();
        let a = deepwalk(&g, &small_cfg()).unwrap();
        let b = deepwalk(&g, &small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_mode_produces_finite_vectors() {
        let g = path_graph();
        let cfg = WalkConfig {
            parallel: true,
            ..small_cfg()
        };
        let emb = deepwalk(&g, &cfg).unwrap();
        assert!((0..3).all(|i| emb.row(i).iter().all(|v| v.is_finite())));
    }

    #[test]
    fn file_round_trip() {
        let g = path_graph();
        let emb = deepwalk(&g, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        save_embeddings(&emb, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back.ids(), emb.ids());
        for i in 0..3 {
            for (a, b) in back.row(i).iter().zip(emb.row(i)) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn header_count_mismatch_is_an_error() {
        let text = "3 2\na 0.1 0.2\nb 0.3 0.4\n";
        assert!(read_embeddings(text.as_bytes(), "test").is_err());
        let text = "1 2\na 0.1\n";
        assert!(read_embeddings(text.as_bytes(), "test").is_err());
    }
}
