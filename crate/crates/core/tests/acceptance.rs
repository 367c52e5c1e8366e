//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 1–7 run on synthetic graphs. Criteria 8–11 train on the Cora
//! and Citeseer bundles found under `$PDEGNN_DATA/{cora,citeseer}`; without
//! them the default run prints `NOT RUN` and the `--ignored` run fails.
//!
//! ```text
//! cargo test -p pdegnn-core --test acceptance -- --nocapture
//! PDEGNN_DATA=/data cargo test --release -p pdegnn-core --test acceptance -- --ignored --nocapture
//! ```

use std::path::PathBuf;
use std::time::Instant;

use pdegnn_core::data::{load_bundle, semi_split, DatasetBundle};
use pdegnn_core::oracle::verify::{
    check_conservation, check_equivariance, check_gradients, check_mix_aw_residual, check_oracle, check_reductions,
    check_smoothing, CheckOutcome, VerifyOptions,
};
use pdegnn_core::presets::{preset, Protocol};
use pdegnn_core::{init_model, train, BlockKind, ModelConfig};

fn report(id: u32, title: &str, checks: &[CheckOutcome], seconds: f64, budget: Option<f64>) -> bool {
    let within = budget.is_none_or(|b| seconds < b);
    let ok = checks.iter().all(|c| c.passed) && within;
    let budget = budget.map(|b| format!(" (budget {b:.0}s)")).unwrap_or_default();
    println!(
        "{} [{id}] {title}: {} checks in {seconds:.1}s{budget}",
        if ok { "PASS" } else { "FAIL" },
        checks.len()
    );
    for c in checks {
        println!("      {c}");
    }
    ok
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

#[test]
fn property_criteria() {
    let opts = VerifyOptions::full();
    let mut all = true;

    let (c, s) = timed(|| check_conservation(&opts));
    all &= report(1, "per-channel sum drift <= 1e-9, 200 graphs, n<=200, depth<=64, f64", &c, s, Some(60.0));

    let (c, s) = timed(|| check_oracle(&opts));
    all &= report(2, "sparse vs dense step, 500 trials per block, rel err <= 1e-10, f64", &c, s, None);

    let (c, s) = timed(|| check_gradients(&opts));
    all &= report(3, "autodiff vs central differences, every parameter, rel err <= 1e-4", &c, s, None);

    let (c, s) = timed(|| check_reductions(&opts));
    all &= report(4, "clamped mixtures equal their pure blocks exactly, f64", &c, s, None);

    let (c, s) = timed(|| vec![check_mix_aw_residual(&opts)]);
    all &= report(5, "mixed advection-wave implicit relation residual <= 1e-10", &c, s, None);

    let (c, s) = timed(|| check_smoothing(&opts));
    all &= report(6, "50 gcn steps (W=I) drop variance >= 1e6x; 50 advection steps < 1e3x", &c, s, None);

    let (c, s) = timed(|| vec![check_equivariance(&opts)]);
    all &= report(7, "full model permutation equivariance <= 1e-6, f32, n<=30", &c, s, None);

    for (id, what) in [
        (8, "Cora semi mix_ad depth 2 >= 74.2"),
        (9, "Cora semi mix_ad depth 64 >= 77.1 and >= depth 2 - 1"),
        (10, "Cora semi gcn depth 2 >= 78 and depth 64 <= 55"),
        (11, "Citeseer semi advection depth 64 >= 72.5"),
    ] {
        let need = if id == 11 { "citeseer" } else { "cora" };
        if bundle_dir(need).is_none() {
            println!("NOT RUN [{id}] {what}: no bundle at $PDEGNN_DATA/{need}; run with --ignored once it exists");
        } else {
            println!("NOT RUN [{id}] {what}: bundle found; run with --ignored");
        }
    }
    assert!(all, "at least one property criterion failed");
}

fn bundle_dir(name: &str) -> Option<PathBuf> {
    let root = std::env::var_os("PDEGNN_DATA")?;
    let dir = PathBuf::from(root).join(name);
    dir.join("meta.json").is_file().then_some(dir)
}

fn load(name: &str) -> DatasetBundle {
    let dir = bundle_dir(name).unwrap_or_else(|| panic!("set PDEGNN_DATA so that $PDEGNN_DATA/{name}/meta.json exists"));
    let mut bundle = load_bundle(dir).expect("valid bundle");
    bundle.features = bundle.row_normalized_features();
    bundle
}

/// Best test accuracy (at best validation) over `seeds`, and the slowest
/// single run in seconds.
fn best_test(bundle: &DatasetBundle, dataset: &str, block: BlockKind, depth: usize, seeds: u64) -> (f64, f64) {
    let (mut best, mut slowest) = (0.0f64, 0.0f64);
    for seed in 0..seeds {
        let mut cfg = ModelConfig {
            block,
            depth,
            seed,
            ..ModelConfig::default()
        };
        let optim = preset(dataset, Protocol::Semi).expect("preset").apply(&mut cfg);
        let split = semi_split(bundle, seed).expect("split");
        let mut model = init_model::<f32>(&cfg, bundle.graph().expect("graph"), bundle.f_in(), bundle.classes)
            .expect("model");
        let r = train(&mut model, bundle, &split, &optim, seed).expect("training run");
        println!(
            "      {dataset} {block} depth {depth} seed {seed}: val {:.1} test {:.1} epochs {} ({:.0}s)",
            r.best_val_acc, r.test_acc, r.epochs_ran, r.wall_seconds
        );
        best = best.max(r.test_acc);
        slowest = slowest.max(r.wall_seconds);
    }
    (best, slowest)
}

fn line(id: u32, ok: bool, text: String) -> bool {
    println!("{} [{id}] {text}", if ok { "PASS" } else { "FAIL" });
    ok
}

#[test]
#[ignore = "needs converted Cora and Citeseer bundles under $PDEGNN_DATA; tens of CPU minutes"]
fn benchmark_criteria() {
    let cora = load("cora");
    let mut all = true;

    let (mix2, s) = best_test(&cora, "cora", BlockKind::MixAd, 2, 5);
    all &= line(
        8,
        mix2 >= 74.2 && s < 600.0,
        format!("Cora semi mix_ad depth 2: best test {mix2:.1} >= 74.2, slowest run {s:.0}s (budget 600s per run)"),
    );

    let (mix64, s) = best_test(&cora, "cora", BlockKind::MixAd, 64, 5);
    all &= line(
        9,
        mix64 >= 77.1 && mix64 >= mix2 - 1.0 && s < 2700.0,
        format!(
            "Cora semi mix_ad depth 64: best test {mix64:.1} >= 77.1 and >= {:.1}, slowest run {s:.0}s (budget 2700s per run)",
            mix2 - 1.0
        ),
    );

    let (gcn2, _) = best_test(&cora, "cora", BlockKind::Gcn, 2, 5);
    let (gcn64, _) = best_test(&cora, "cora", BlockKind::Gcn, 64, 5);
    all &= line(
        10,
        gcn2 >= 78.0 && gcn64 <= 55.0,
        format!("Cora semi gcn: depth 2 best test {gcn2:.1} >= 78, depth 64 best test {gcn64:.1} <= 55"),
    );

    let cite = load("citeseer");
    let (adv64, _) = best_test(&cite, "citeseer", BlockKind::Advection, 64, 5);
    all &= line(11, adv64 >= 72.5, format!("Citeseer semi advection depth 64: best test {adv64:.1} >= 72.5"));

    assert!(all, "at least one benchmark criterion failed");
}
