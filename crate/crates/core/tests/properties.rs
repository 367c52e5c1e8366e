use std::collections::HashMap;

use ndarray::{Array2, Axis};
use pdegnn_core::data::split::{full_split_labels, full_split_sizes, semi_split_labels};
use pdegnn_core::data::{load_bundle, save_bundle, DatasetBundle};
use pdegnn_core::oracle::dense::{DenseGraph, DenseWeights};
use pdegnn_core::oracle::verify::sparse_block_step;
use pdegnn_core::sparse::build_gradient;
use pdegnn_core::{Activation, BlockKind, Graph, GraphOperators, SparseOperator};
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n, any::<bool>()), 0..3 * n).prop_map(move |pairs| {
            let mut seen = std::collections::HashSet::new();
            let edges: Vec<(usize, usize)> = pairs
                .into_iter()
                .filter(|&(a, b, _)| a != b && seen.insert((a.min(b), a.max(b))))
                .map(|(a, b, flip)| if flip { (b, a) } else { (a, b) })
                .collect();
            Graph::from_oriented(n, edges).unwrap()
        })
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

#[derive(Debug, Clone)]
struct StepCase {
    graph: Graph,
    u: Array2<f64>,
    u_prev: Array2<f64>,
    kernel: Array2<f64>,
    activation: Activation,
    alpha: f64,
    d_diff: Vec<f64>,
    d_wave: Vec<f64>,
    h: f64,
}

fn step_case() -> impl Strategy<Value = StepCase> {
    (graph_strategy(12), 1..=3usize).prop_flat_map(|(graph, c)| {
        let (n, m) = (graph.n(), graph.m());
        (
            Just(graph),
            matrix(n, c),
            matrix(n, c),
            matrix(c, c),
            prop_oneof![
                Just(Activation::Relu),
                Just(Activation::Identity),
                Just(Activation::Elu),
                Just(Activation::Tanh)
            ],
            0.0..1.0f64,
            proptest::collection::vec(0.05..1.0f64, m),
            proptest::collection::vec(0.05..1.0f64, m),
            0.05..1.0f64,
        )
            .prop_map(|(graph, u, u_prev, kernel, activation, alpha, d_diff, d_wave, h)| StepCase {
                graph,
                u,
                u_prev,
                kernel,
                activation,
                alpha,
                d_diff,
                d_wave,
                h,
            })
    })
}

impl StepCase {
    fn weights(&self) -> DenseWeights {
        DenseWeights {
            kernel: self.kernel.clone(),
            activation: self.activation,
            alpha: self.alpha,
            d_diff: Some(self.d_diff.clone()),
            d_wave: Some(self.d_wave.clone()),
        }
    }

    fn step(&self, kind: BlockKind, u: &Array2<f64>, u_prev: &Array2<f64>) -> Array2<f64> {
        let ops = GraphOperators::new(self.graph.clone());
        sparse_block_step(kind, &ops, &self.weights(), u, u_prev, self.h, None).unwrap()
    }
}

fn column_sums(x: &Array2<f64>) -> Vec<f64> {
    x.sum_axis(Axis(0)).to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conserving_steps_preserve_column_sums(case in step_case()) {
        for kind in BlockKind::CONSERVING {
            let next = case.step(kind, &case.u, &case.u);
            for (a, b) in column_sums(&next).iter().zip(column_sums(&case.u)) {
                prop_assert!((a - b).abs() <= 1e-12, "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_is_fixed(case in step_case()) {
        let z = Array2::zeros(case.u.dim());
        for kind in BlockKind::ALL {
            let next = case.step(kind, &z, &z);
            prop_assert!(next.iter().all(|&v| v == 0.0), "{kind}");
        }
    }

    #[test]
    fn steps_commute_with_relabeling(case in step_case(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = case.graph.n();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let moved = StepCase { graph: case.graph.relabel(&perm).unwrap(), ..case.clone() };
        let permute = |x: &Array2<f64>| {
            let mut y = Array2::zeros(x.dim());
            for i in 0..n {
                y.row_mut(perm[i]).assign(&x.row(i));
            }
            y
        };
        let (pu, pp) = (permute(&case.u), permute(&case.u_prev));
        for kind in BlockKind::ALL {
            let a = permute(&case.step(kind, &case.u, &case.u_prev));
            let b = moved.step(kind, &pu, &pp);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{kind}");
            }
        }
    }

    #[test]
    fn gradient_operator_annihilates_constants(graph in graph_strategy(30), c in -5.0..5.0f64) {
        let g: SparseOperator<f64> = build_gradient(&graph);
        let ones = Array2::from_elem((graph.n(), 2), c);
        prop_assert!(g.spmm(ones.view()).unwrap().iter().all(|&v| v == 0.0));
        let dense = DenseGraph::new(&graph);
        prop_assert_eq!(g.to_dense(), dense.g);
    }

    #[test]
    fn spmm_matches_dense(entries in proptest::collection::vec((0..8usize, 0..6usize, -3.0..3.0f64), 0..40), x in matrix(6, 3), y in matrix(8, 2)) {
        let mut unique: HashMap<(usize, usize), f64> = HashMap::new();
        for (r, c, v) in entries {
            unique.insert((r, c), v);
        }
        let op = SparseOperator::from_triplets(8, 6, unique.into_iter().map(|((r, c), v)| (r, c, v)).collect()).unwrap();
        let d = op.to_dense();
        let a = op.spmm(x.view()).unwrap();
        let b = op.spmm_transposed(y.view()).unwrap();
        for (p, q) in a.iter().zip(d.dot(&x).iter()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
        for (p, q) in b.iter().zip(d.t().dot(&y).iter()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn semi_split_cardinalities_hold(hist in proptest::collection::vec(20..400usize, 2..8), seed in any::<u64>()) {
        let labels: Vec<usize> = hist.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
        let classes = hist.len();
        match semi_split_labels(&labels, classes, seed) {
            Ok(s) => {
                s.validate().unwrap();
                prop_assert_eq!(s.counts(), (20 * classes, 500, 1000));
                prop_assert_eq!(s, semi_split_labels(&labels, classes, seed).unwrap());
            }
            Err(_) => prop_assert!(labels.len() < 20 * classes + 1500),
        }
    }

    #[test]
    fn full_split_is_stratified(hist in proptest::collection::vec(3..200usize, 1..6), seed in any::<u64>()) {
        let labels: Vec<usize> = hist.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
        prop_assume!(labels.len() >= 10);
        let s = full_split_labels(&labels, hist.len(), seed).unwrap();
        s.validate().unwrap();
        for (c, &k) in hist.iter().enumerate() {
            let count = |m: &[bool]| m.iter().zip(&labels).filter(|&(&on, &y)| on && y == c).count();
            prop_assert_eq!((count(&s.train), count(&s.val), count(&s.test)), full_split_sizes(k));
        }
    }

    #[test]
    fn bundle_round_trip(n in 1..25usize, f in 1..6usize, classes in 1..4usize, seed in any::<u64>(), with_masks in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let features = Array2::from_shape_simple_fn((n, f), || rng.random_range(-2.0f32..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.3 {
                    pairs.push((i, j));
                }
            }
        }
        let masks = (with_masks && n >= 10).then(|| full_split_labels(&vec![0; n], 1, 0).unwrap());
        let bundle = DatasetBundle { name: format!("toy{seed}"), classes, features, labels, edges: pairs, masks };
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle, dir.path()).unwrap();
        prop_assert_eq!(load_bundle(dir.path()).unwrap(), bundle);
    }
}
