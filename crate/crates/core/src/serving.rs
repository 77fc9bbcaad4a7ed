//! Item-vector index, per-interest maximum-inner-product search and the
//! K·N candidate merge.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{DrimError, Result};
use crate::ingest::UserSequence;
use crate::numeric::{dot, norm, DenseMatrix};
use crate::trainer::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Exact,
    Approximate,
}

impl FromStr for BackendKind {
    type Err = DrimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "approx" | "approximate" => Ok(Self::Approximate),
            other => Err(DrimError::Config(format!("unknown backend {other:?}"))),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Approximate => "approximate",
        })
    }
}

/// Inverted-file layout: items grouped by k-means cell, each cell bounded by
/// a ball around its centroid.
#[derive(Debug, Clone)]
pub struct IvfCells {
    centroids: DenseMatrix,
    radii: Vec<f64>,
    members: Vec<Vec<usize>>,
    /// Most cells visited per query.
    pub max_probe: usize,
}

#[derive(Debug, Clone)]
enum Backend {
    Exact,
    Approximate(IvfCells),
}

/// Read-only store of item vectors; row `r` holds item index `r + 1`.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    vectors: DenseMatrix,
    backend: Backend,
}

/// Merged top-N for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub user_index: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    /// Interest that produced each score.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f64,
    item: usize,
}

impl Eq for Scored {}

impl Ord for Scored {
    /// Greater means ranked earlier: higher score, then lower item.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.item.cmp(&self.item))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded selection keeping the `n` best entries.
struct TopN {
    n: usize,
    heap: BinaryHeap<std::cmp::Reverse<Scored>>,
}

impl TopN {
    fn new(n: usize) -> Self {
        Self {
            n,
            heap: BinaryHeap::with_capacity(n + 1),
        }
    }

    fn push(&mut self, s: Scored) {
        if self.heap.len() < self.n {
            self.heap.push(std::cmp::Reverse(s));
        } else if let Some(worst) = self.heap.peek() {
            if s > worst.0 {
                self.heap.pop();
                self.heap.push(std::cmp::Reverse(s));
            }
        }
    }

    fn worst(&self) -> Option<Scored> {
        if self.heap.len() < self.n {
            None
        } else {
            self.heap.peek().map(|r| r.0)
        }
    }

    fn into_sorted(self) -> Vec<Scored> {
        let mut v: Vec<Scored> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(|a, b| b.cmp(a));
        v
    }
}

fn kmeans(vectors: &DenseMatrix, cells: usize, iterations: usize, seed: u64) -> (DenseMatrix, Vec<usize>) {
    let (n, d) = vectors.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, n, cells);
    let mut centroids = DenseMatrix::zeros(cells, d);
    for (c, i) in picks.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(vectors.row(i));
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iterations {
        let next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&centroids, vectors.row(i)))
            .collect();
        let changed = next != assign;
        assign = next;
        let mut sums = DenseMatrix::zeros(cells, d);
        let mut counts = vec![0usize; cells];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(vectors.row(i)) {
                *s += x;
            }
        }
        for c in 0..cells {
            // empty cells keep their previous centroid
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (centroids, assign)
}

fn nearest(centroids: &DenseMatrix, x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, row) in centroids.iter_rows().enumerate() {
        let dist: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.0 {
            best = (dist, c);
        }
    }
    best.1
}

impl IvfCells {
    /// Cells of roughly `sqrt(n)` items each; `max_probe` defaults to half
    /// the cells, which held recall@50 above 0.95 on random Gaussian items.
    pub fn build(vectors: &DenseMatrix, seed: u64) -> Self {
        let n = vectors.rows();
        let cells = ((n as f64).sqrt().round() as usize).clamp(1, n);
        let (centroids, assign) = kmeans(vectors, cells, 20, seed);
        let mut members = vec![Vec::new(); cells];
        let mut radii = vec![0.0f64; cells];
        for (i, &c) in assign.iter().enumerate() {
            members[c].push(i);
            let r: f64 = centroids
                .row(c)
                .iter()
                .zip(vectors.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            radii[c] = radii[c].max(r);
        }
        Self {
            centroids,
            radii,
            members,
            max_probe: cells.div_ceil(2),
        }
    }

    pub fn cells(&self) -> usize {
        self.members.len()
    }

    /// Visits cells by decreasing score upper bound `q·c + ‖q‖ r`, stopping
    /// once no unvisited cell can beat the current n-th best or after
    /// `max_probe` cells.
    fn search(&self, vectors: &DenseMatrix, query: &[f64], top: &mut TopN, exclude: &dyn Fn(usize) -> bool) {
        let qn = norm(query);
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .iter_rows()
            .zip(&self.radii)
            .enumerate()
            .map(|(c, (row, r))| (dot(query, row) + qn * r, c))
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (probed, &(bound, c)) in order.iter().enumerate() {
            if probed >= self.max_probe {
                break;
            }
            if let Some(w) = top.worst() {
                if bound < w.score {
                    break;
                }
            }
            for &row in &self.members[c] {
                let item = row + 1;
                if !exclude(item) {
                    top.push(Scored {
                        score: dot(query, vectors.row(row)),
                        item,
                    });
                }
            }
        }
    }
}

impl RetrievalIndex {
    /// Index over `item_vectors`, whose row `r` is item `r + 1`.
    pub fn from_vectors(item_vectors: DenseMatrix, backend: BackendKind, seed: u64) -> Result<Self> {
        if item_vectors.rows() == 0 {
            return Err(DrimError::Precondition("cannot index an empty item set".into()));
        }
        let backend = match backend {
            BackendKind::Exact => Backend::Exact,
            BackendKind::Approximate => Backend::Approximate(IvfCells::build(&item_vectors, seed)),
        };
        Ok(Self {
            vectors: item_vectors,
            backend,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn backend(&self) -> BackendKind {
        match self.backend {
            Backend::Exact => BackendKind::Exact,
            Backend::Approximate(_) => BackendKind::Approximate,
        }
    }

    /// Probe cap of the approximate backend.
    pub fn set_max_probe(&mut self, max_probe: usize) {
        if let Backend::Approximate(ivf) = &mut self.backend {
            ivf.max_probe = max_probe.max(1);
        }
    }

    pub fn item_vector(&self, item: usize) -> &[f64] {
        self.vectors.row(item - 1)
    }

    /// Top `n` items for one query, best first, skipping excluded items.
    pub fn top_n(&self, query: &[f64], n: usize, exclude: &dyn Fn(usize) -> bool) -> Vec<(usize, f64)> {
        let mut top = TopN::new(n);
        match &self.backend {
            Backend::Exact => {
                for (row, v) in self.vectors.iter_rows().enumerate() {
                    let item = row + 1;
                    if !exclude(item) {
                        top.push(Scored {
                            score: dot(query, v),
                            item,
                        });
                    }
                }
            }
            Backend::Approximate(ivf) => ivf.search(&self.vectors, query, &mut top, exclude),
        }
        top.into_sorted().into_iter().map(|s| (s.item, s.score)).collect()
    }
}

/// Index over a model's item embedding table (padding row excluded).
pub fn build_index(model: &Model, backend: BackendKind) -> Result<RetrievalIndex> {
    let table = &model.params.item_embeddings.value;
    let n = model.items.len();
    let d = table.cols();
    let vectors = DenseMatrix::from_vec(n, d, table.as_slice()[d..].to_vec());
    RetrievalIndex::from_vectors(vectors, backend, model.config.seed)
}

/// Per-interest top-`n`, pooled, deduplicated by maximum score, sorted by
/// score (lower item first on ties) and cut to `n`.
pub fn retrieve(
    interests: &DenseMatrix,
    index: &RetrievalIndex,
    n: usize,
    exclude: &HashSet<usize>,
) -> Recommendation {
    let skip = |i: usize| exclude.contains(&i);
    let mut best: HashMap<usize, (f64, usize)> = HashMap::new();
    for (k, v) in interests.iter_rows().enumerate() {
        for (item, score) in index.top_n(v, n, &skip) {
            let e = best.entry(item).or_insert((score, k));
            if score > e.0 {
                *e = (score, k);
            }
        }
    }
    let mut pooled: Vec<(Scored, usize)> = best
        .into_iter()
        .map(|(item, (score, k))| (Scored { score, item }, k))
        .collect();
    pooled.sort_by_key(|p| std::cmp::Reverse(p.0));
    pooled.truncate(n);
    Recommendation {
        user_index: 0,
        items: pooled.iter().map(|p| p.0.item).collect(),
        scores: pooled.iter().map(|p| p.0.score).collect(),
        sources: pooled.iter().map(|p| p.1).collect(),
    }
}

/// Recommendations for every sequence, computed from its training prefix.
/// With `exclude_history` the whole training prefix is removed from the
/// candidates.
pub fn recommend(
    model: &Model,
    index: &RetrievalIndex,
    sequences: &[UserSequence],
    users: &[String],
    n: usize,
    exclude_history: bool,
) -> Result<Vec<Recommendation>> {
    sequences
        .par_iter()
        .map(|s| {
            let profile = model.profile_for_id(&users[s.user_index])?;
            let v = model.user_vectors(s.train(), &profile)?;
            let exclude: HashSet<usize> = if exclude_history {
                s.train().iter().copied().collect()
            } else {
                HashSet::new()
            };
            let mut rec = retrieve(&v, index, n, &exclude);
            rec.user_index = s.user_index;
            Ok(rec)
        })
        .collect()
}

/// Writes `user_id \t item_id \t rank \t score` rows, ranks starting at 1.
pub fn write_recommendations(path: &Path, recs: &[Recommendation], users: &[String], model: &Model) -> Result<()> {
    let file = File::create(path).map_err(|e| DrimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in recs {
        for (rank, (&item, score)) in r.items.iter().zip(&r.scores).enumerate() {
            let item_id = model.items.id_of(item).unwrap_or("?");
            writeln!(w, "{}\t{}\t{}\t{}", users[r.user_index], item_id, rank + 1, score).map_err(|e| DrimError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| DrimError::io(path, e))
}
