#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hugat_core::autodiff::Matrix;
use hugat_core::graph::{HeterogeneousUrbanGraph, NodeId, NodeType, RelationType};
use hugat_core::metapath::MetaPath;
use rand::Rng;

/// Random typed graph with at most `max_nodes` nodes over all types and
/// random edges for every relation. Edges are not mirrored, so each
/// relation is sampled independently of its reverse.
pub fn random_hug<R: Rng>(rng: &mut R, max_nodes: usize) -> HeterogeneousUrbanGraph {
    let mut counts = BTreeMap::new();
    let regions = rng.gen_range(1..=max_nodes.min(12));
    counts.insert(NodeType::Region, regions);
    let mut left = max_nodes - regions;
    for ty in &NodeType::ALL[1..] {
        let c = rng.gen_range(0..=left.min(6));
        counts.insert(*ty, c);
        left -= c;
    }
    let nodes = counts
        .iter()
        .map(|(ty, c)| (*ty, (0..*c).map(|i| format!("{ty}{i}")).collect()))
        .collect();
    let mut g = HeterogeneousUrbanGraph::with_nodes(nodes);
    let density = rng.gen_range(0.05..0.6);
    for rel in RelationType::ALL {
        let (a, b) = rel.endpoints();
        for i in 0..counts[&a] {
            for j in 0..counts[&b] {
                if rng.gen_bool(density) {
                    g.add_edge(rel, NodeId::new(a, i), NodeId::new(b, j));
                }
            }
        }
    }
    g
}

/// Region neighbor sets found by walking every typed path instance
/// depth-first over the raw edge lists.
pub fn dfs_neighbors(g: &HeterogeneousUrbanGraph, mp: &MetaPath, include_self: bool) -> Vec<BTreeSet<usize>> {
    fn walk(g: &HeterogeneousUrbanGraph, mp: &MetaPath, step: usize, at: NodeId, out: &mut BTreeSet<usize>) {
        if step == mp.relation_sequence.len() {
            out.insert(at.index);
            return;
        }
        let rel = mp.relation_sequence[step];
        let next_ty = mp.node_sequence[step + 1];
        for (src, dst) in g.edges_of(rel) {
            if *src == at && dst.ty == next_ty {
                walk(g, mp, step + 1, *dst, out);
            }
        }
    }
    (0..g.region_count())
        .map(|i| {
            let mut out = BTreeSet::new();
            walk(g, mp, 0, NodeId::region(i), &mut out);
            if include_self {
                out.insert(i);
            }
            out
        })
        .collect()
}

/// Every partition of `n` items as a restricted growth string.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let top = if prefix.is_empty() { 0 } else { max + 1 };
        for l in 0..=top {
            prefix.push(l);
            grow(prefix, max.max(l), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::with_capacity(n), 0, n, &mut out);
    out
}

/// ARI from the four pair-agreement counts.
pub fn pair_counting_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (ss * dd - sd * ds) / denom
}

/// NMI with arithmetic-mean normalization from explicit joint and marginal
/// frequencies.
pub fn plain_nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((*x, *y)).or_default() += 1;
        *ca.entry(*x).or_default() += 1;
        *cb.entry(*y).or_default() += 1;
    }
    let p = |c: usize| c as f64 / n;
    let h = |m: &BTreeMap<usize, usize>| -m.values().map(|c| p(*c) * p(*c).ln()).sum::<f64>();
    let (ha, hb) = (h(&ca), h(&cb));
    if ca.len() == 1 && cb.len() == 1 {
        return 0.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|((x, y), c)| p(*c) * (p(*c) / (p(ca[x]) * p(cb[y]))).ln())
        .sum();
    mi / (0.5 * (ha + hb))
}

/// Least squares with an intercept via SVD. Returns (intercept, coefficients).
pub fn ols(x: &Matrix, y: &[f64]) -> (f64, Vec<f64>) {
    let (n, p) = x.shape();
    let design = nalgebra::DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
    let target = nalgebra::DVector::from_column_slice(y);
    let sol = design.svd(true, true).solve(&target, 1e-14).expect("svd solve");
    (sol[0], sol.iter().skip(1).copied().collect())
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

pub fn random_distribution<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}
