use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pdegnn_bench::{cora_like, model, uniform};
use pdegnn_core::{BlockKind, GraphOperators, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spmm(c: &mut Criterion) {
    let bundle = cora_like();
    let ops = GraphOperators::<f32>::new(bundle.graph().unwrap());
    let nodes = uniform::<f32>(bundle.n(), 64, 1);
    let edges = uniform::<f32>(bundle.m(), 64, 2);
    let mut g = c.benchmark_group("spmm");
    g.bench_function("gradient", |b| b.iter(|| ops.gradient.spmm(black_box(nodes.view())).unwrap()));
    g.bench_function("divergence", |b| {
        b.iter(|| ops.gradient.spmm_transposed(black_box(edges.view())).unwrap())
    });
    g.bench_function("averaging", |b| b.iter(|| ops.averaging.spmm(black_box(nodes.view())).unwrap()));
    g.bench_function("propagation", |b| b.iter(|| ops.propagation.spmm(black_box(nodes.view())).unwrap()));
    g.finish();
}

fn block_steps(c: &mut Criterion) {
    let bundle = cora_like();
    let hidden = uniform::<f32>(bundle.n(), 64, 3);
    let mut g = c.benchmark_group("block_step");
    for kind in BlockKind::ALL {
        let m = model::<f32>(&bundle, kind, 1, 64);
        g.bench_function(kind.name(), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let u = tape.constant(hidden.clone());
                black_box(m.run_blocks(&mut tape, u).unwrap());
            })
        });
    }
    g.finish();
}

fn forward_backward(c: &mut Criterion) {
    let bundle = cora_like();
    let train: Vec<bool> = (0..bundle.n()).map(|i| i % 20 == 0).collect();
    let mut g = c.benchmark_group("forward_backward");
    g.sample_size(10);
    for (kind, depth) in [(BlockKind::Gcn, 2), (BlockKind::MixAd, 2), (BlockKind::MixAd, 16), (BlockKind::MixAw, 16)] {
        let m = model::<f32>(&bundle, kind, depth, 64);
        g.bench_function(format!("{kind}/depth{depth}"), |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            b.iter(|| {
                let mut tape = Tape::new();
                let x = tape.constant(bundle.features.clone());
                let logits = m.forward(&mut tape, x, true, &mut rng).unwrap();
                let loss = tape.softmax_cross_entropy(logits, &bundle.labels, &train);
                black_box(tape.backward(loss).unwrap());
            })
        });
    }
    g.finish();
}

criterion_group!(benches, spmm, block_steps, forward_backward);
criterion_main!(benches);
