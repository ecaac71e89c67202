//! Ward agglomerative clustering on a distance matrix.
//!
//! Merge heights follow the scipy convention: the Lance–Williams update
//! runs on squared Euclidean distances and the reported height is its
//! square root, so for singletons `i`, `j` the first height is `d(i, j)`.

use std::io::Write;

use thiserror::Error;

use crate::rdm::Rdm;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least one item")]
    Empty,
    #[error("condensed length {len} is not n(n-1)/2 for any n")]
    CondensedLength { len: usize },
    #[error("distance at position {0} is negative or not finite")]
    InvalidDistance(usize),
    #[error("cannot cut {n} items into {k} clusters")]
    BadK { n: usize, k: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Cluster ids; `0..n` are items, `n + i` is the cluster formed by merge `i`.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.n
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// `merge_index,left,right,height,size` rows in merge order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "merge_index,left,right,height,size")?;
        for (i, m) in self.merges.iter().enumerate() {
            writeln!(out, "{i},{},{},{:.17e},{}", m.left, m.right, m.height, m.size)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Cluster label per item; labels are numbered by each cluster's lowest item.
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn write_csv<W: Write>(&self, mut out: W, item_ids: &[String]) -> std::io::Result<()> {
        writeln!(out, "item_id,cluster")?;
        for (id, l) in item_ids.iter().zip(&self.labels) {
            writeln!(out, "{id},{l}")?;
        }
        Ok(())
    }
}

/// Number of items behind a condensed vector of length `len`.
pub fn condensed_size(len: usize) -> Result<usize, ClusterError> {
    let n = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    if n * (n - 1) / 2 != len {
        return Err(ClusterError::CondensedLength { len });
    }
    Ok(n)
}

fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

/// Full symmetric matrix of squared distances.
fn squared_matrix(condensed: &[f64]) -> Result<(usize, Vec<f64>), ClusterError> {
    let n = condensed_size(condensed.len()).or_else(|e| if condensed.is_empty() { Ok(1) } else { Err(e) })?;
    if let Some(p) = condensed.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(ClusterError::InvalidDistance(p));
    }
    let mut d2 = vec![0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = condensed[condensed_index(n, i, j)];
            d2[i * n + j] = v * v;
            d2[j * n + i] = v * v;
        }
    }
    Ok((n, d2))
}

fn lance_williams(d_ki: f64, d_kj: f64, d_ij: f64, ni: usize, nj: usize, nk: usize) -> f64 {
    let (ni, nj, nk) = (ni as f64, nj as f64, nk as f64);
    (((ni + nk) * d_ki + (nj + nk) * d_kj - nk * d_ij) / (ni + nj + nk)).max(0.0)
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    next: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..2 * n - 1).collect(), size: [vec![1; n], vec![0; n - 1]].concat(), next: n }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let p = self.parent[x];
            self.parent[x] = root;
            x = p;
        }
        root
    }

    fn merge(&mut self, a: usize, b: usize) -> usize {
        let id = self.next;
        self.next += 1;
        self.parent[a] = id;
        self.parent[b] = id;
        self.size[id] = self.size[a] + self.size[b];
        id
    }
}

/// Turns raw `(item_a, item_b, height)` merges (items are slot representatives)
/// into scipy-style merges sorted by height with cluster ids.
fn relabel(n: usize, mut raw: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    // stable: equal heights keep discovery order
    raw.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut uf = UnionFind::new(n);
    raw.into_iter()
        .map(|(a, b, height)| {
            let (ra, rb) = (uf.find(a), uf.find(b));
            let (left, right) = if ra < rb { (ra, rb) } else { (rb, ra) };
            let id = uf.merge(left, right);
            Merge { left, right, height, size: uf.size[id] }
        })
        .collect()
}

/// Ward linkage by the nearest-neighbour chain algorithm, `O(n²)` time.
///
/// `condensed` holds the distances `d(i, j)` for `i < j` in row-major order.
/// Ties resolve to the lowest index.
pub fn ward_linkage(condensed: &[f64]) -> Result<Dendrogram, ClusterError> {
    let (n, mut d2) = squared_matrix(condensed)?;
    if n == 1 {
        return Ok(Dendrogram { n, merges: Vec::new() });
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n - 1);
    for _ in 0..n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster remains"));
        }
        let (a, b) = loop {
            let x = *chain.last().expect("chain is nonempty");
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for y in 0..n {
                if y != x && active[y] && d2[x * n + y] < best_d {
                    best_d = d2[x * n + y];
                    best = Some(y);
                }
            }
            // prefer the predecessor on ties so reciprocal pairs terminate
            if let Some(p) = prev {
                if d2[x * n + p] == best_d {
                    best = prev;
                }
            }
            let y = best.expect("another active cluster exists");
            if Some(y) == prev {
                chain.pop();
                chain.pop();
                break (x.min(y), x.max(y));
            }
            chain.push(y);
        };
        let d_ab = d2[a * n + b];
        raw.push((a, b, d_ab.sqrt()));
        // merged cluster lives in slot b
        active[a] = false;
        for k in 0..n {
            if !active[k] || k == b {
                continue;
            }
            let v = lance_williams(d2[k * n + a], d2[k * n + b], d_ab, size[a], size[b], size[k]);
            d2[k * n + b] = v;
            d2[b * n + k] = v;
        }
        size[b] += size[a];
    }
    Ok(Dendrogram { n, merges: relabel(n, raw) })
}

/// Ward linkage by exhaustive pair search at each step, `O(n³)` time.
pub fn ward_linkage_naive(condensed: &[f64]) -> Result<Dendrogram, ClusterError> {
    let (n, mut d2) = squared_matrix(condensed)?;
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut raw = Vec::with_capacity(n.saturating_sub(1));
    for _ in 0..n.saturating_sub(1) {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d2[i * n + j] < best.2 {
                    best = (i, j, d2[i * n + j]);
                }
            }
        }
        let (a, b, d_ab) = best;
        raw.push((a, b, d_ab.sqrt()));
        active[a] = false;
        for k in 0..n {
            if !active[k] || k == b {
                continue;
            }
            let v = lance_williams(d2[k * n + a], d2[k * n + b], d_ab, size[a], size[b], size[k]);
            d2[k * n + b] = v;
            d2[b * n + k] = v;
        }
        size[b] += size[a];
    }
    Ok(Dendrogram { n, merges: relabel(n, raw) })
}

/// Ward linkage of the items of an RDM.
pub fn ward_linkage_rdm(rdm: &Rdm) -> Result<Dendrogram, ClusterError> {
    if rdm.size() == 0 {
        return Err(ClusterError::Empty);
    }
    ward_linkage(&rdm.condensed())
}

/// Flat clustering into `k` groups by applying the first `n - k` merges.
pub fn cut_tree(d: &Dendrogram, k: usize) -> Result<ClusterAssignment, ClusterError> {
    let n = d.n;
    if k == 0 || k > n {
        return Err(ClusterError::BadK { n, k });
    }
    let mut uf = UnionFind::new(n);
    for m in &d.merges[..n - k] {
        uf.merge(m.left, m.right);
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let mut label_of = std::collections::HashMap::new();
    let labels = roots
        .iter()
        .map(|r| {
            let next = label_of.len();
            *label_of.entry(*r).or_insert(next)
        })
        .collect();
    Ok(ClusterAssignment { labels, k })
}
