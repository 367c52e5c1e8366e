//! Synthetic graphs and toy bundles.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bundle::DatasetBundle;
use super::split::full_split_labels;
use crate::graph::Graph;

/// `rows × cols` 4-neighbour lattice, node `r * cols + c`.
pub fn make_grid_graph(rows: usize, cols: usize) -> Graph {
    let mut edges = Vec::with_capacity(rows * cols * 2);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    Graph::from_undirected(rows * cols, edges).expect("grid edges are valid")
}

/// Cycle on `n ≥ 3` nodes.
pub fn make_cycle(n: usize) -> Graph {
    assert!(n >= 3, "a cycle needs at least 3 nodes, got {n}");
    Graph::from_undirected(n, (0..n).map(|i| (i, (i + 1) % n))).expect("cycle edges are valid")
}

/// Erdős–Rényi graph: every pair joined independently with probability `p`.
pub fn make_random(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_undirected(n, edges).expect("pairs are in range")
}

/// Connected simple `d`-regular graph: a circulant graph randomized by
/// degree-preserving double-edge swaps. Needs `n·d` even and `d < n`.
pub fn make_random_regular(n: usize, d: usize, seed: u64) -> Graph {
    assert!(d < n && (n * d) % 2 == 0, "no {d}-regular graph on {n} nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n * d / 2);
    for i in 0..n {
        for k in 1..=d / 2 {
            edges.push(key(i, (i + k) % n));
        }
        if d % 2 == 1 && i < n / 2 {
            edges.push(key(i, i + n / 2));
        }
    }
    let mut present: std::collections::HashSet<(usize, usize)> = edges.iter().copied().collect();
    let swaps = 20 * edges.len();
    loop {
        for _ in 0..swaps {
            if edges.len() < 2 {
                break;
            }
            let (i, j) = (rng.random_range(0..edges.len()), rng.random_range(0..edges.len()));
            let ((a, b), (c, e)) = (edges[i], edges[j]);
            let (x, y) = if rng.random::<bool>() { (key(a, c), key(b, e)) } else { (key(a, e), key(b, c)) };
            if x.0 == x.1 || y.0 == y.1 || x == y || present.contains(&x) || present.contains(&y) {
                continue;
            }
            present.remove(&edges[i]);
            present.remove(&edges[j]);
            present.insert(x);
            present.insert(y);
            edges[i] = x;
            edges[j] = y;
        }
        let g = Graph::from_undirected(n, edges.iter().copied()).expect("simple by construction");
        if g.is_connected() {
            return g;
        }
    }
}

/// Planted-partition bundle: `classes` blocks of `per_class` nodes, edges
/// with probability `p_in` inside a block and `p_out` across. Binary
/// features fire with probability 0.6 on the class's own feature slice and
/// 0.1 elsewhere. Node `i` has label `i % classes`.
pub fn planted_partition(
    name: &str,
    classes: usize,
    per_class: usize,
    f_in: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> DatasetBundle {
    let n = classes * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let slice = f_in.div_ceil(classes).max(1);
    let features = Array2::from_shape_fn((n, f_in), |(i, k)| {
        let own = k / slice == labels[i];
        let p = if own { 0.6 } else { 0.1 };
        if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    });
    DatasetBundle {
        name: name.to_string(),
        classes,
        features,
        labels,
        edges: Graph::from_undirected(n, edges).expect("pairs are in range").edges().to_vec(),
        masks: None,
    }
}

/// Linearly separable toy: 20 nodes, 2 classes, 2 features. Each class is
/// a 10-cycle, the two cycles joined by one edge. Ships a 60/20/20 split.
pub fn separable_toy(seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 20;
    let labels: Vec<usize> = (0..n).map(|i| i / 10).collect();
    let mut edges: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let base = (i / 10) * 10;
            (i, base + (i - base + 1) % 10)
        })
        .collect();
    edges.push((0, 10));
    let features = Array2::from_shape_fn((n, 2), |(i, k)| {
        let on = k == labels[i];
        let jitter = rng.random_range(0.0..0.5f32);
        if on {
            1.0 + jitter
        } else {
            jitter
        }
    });
    DatasetBundle {
        name: "separable-toy".into(),
        classes: 2,
        features,
        masks: Some(full_split_labels(&labels, 2, seed).expect("20 nodes, 2 classes")),
        labels,
        edges: Graph::from_undirected(n, edges).expect("pairs are in range").edges().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_cycle_counts() {
        let g = make_grid_graph(2, 2);
        assert_eq!((g.n(), g.m()), (4, 4));
        let g = make_grid_graph(3, 5);
        assert_eq!(g.m(), 3 * 4 + 5 * 2);
        let c = make_cycle(5);
        assert_eq!((c.n(), c.m()), (5, 5));
    }

    #[test]
    fn random_edge_count_within_three_sigma() {
        let pairs = 100.0 * 99.0 / 2.0;
        let (mean, sd) = (pairs * 0.05, (pairs * 0.05 * 0.95f64).sqrt());
        for seed in 0..5 {
            let m = make_random(100, 0.05, seed).m() as f64;
            assert!((m - mean).abs() <= 3.0 * sd, "seed {seed}: {m} edges");
        }
        assert_eq!(make_random(30, 0.2, 9), make_random(30, 0.2, 9));
    }

    #[test]
    fn random_regular_is_regular_and_connected() {
        for (n, d) in [(100, 4), (100, 10), (10, 3)] {
            let g = make_random_regular(n, d, 7);
            assert!(g.degrees().iter().all(|&k| k == d));
            assert!(g.is_connected());
            assert_eq!(g.m(), n * d / 2);
        }
        assert_ne!(make_random_regular(100, 10, 1), make_random_regular(100, 10, 2));
    }

    #[test]
    fn toy_bundles_are_consistent() {
        let b = planted_partition("pp", 3, 10, 9, 0.4, 0.02, 1);
        assert_eq!((b.n(), b.f_in(), b.classes), (30, 9, 3));
        let t = separable_toy(0);
        assert_eq!((t.n(), t.f_in(), t.m()), (20, 2, 21));
        t.masks.as_ref().unwrap().validate().unwrap();
    }
}
