use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{Context, Result};
use ndarray::Array2;
use pdegnn_core::data::{benchmark_stats, full_split, load_bundle, read_meta, semi_split, DatasetBundle, SplitSpec};
use pdegnn_core::oracle::{run_suite, smoothing_profile, Fault, SmoothingProfile, VerifyOptions};
use pdegnn_core::presets::Protocol;
use pdegnn_core::trainer::{config_hash, CSV_HEADER};
use pdegnn_core::{init_model, train as train_model, Model, Real, RunResult};

use crate::config::ExperimentConfig;
use crate::output::{append_csv, write_echo};
use crate::{RunArgs, UsageError};

pub const SWEEP_DEPTHS: &str = "2,4,8,16,32,64";
pub const SMOOTHING_HEADER: &str = "dataset,block,depth,seed,layer,variance,normalized_variance,config_hash";

/// Finds the bundle directory named by `--dataset`: a directory holding
/// `meta.json`, or a name under `$PDEGNN_DATA`.
pub fn locate(dataset: Option<&str>) -> Result<PathBuf, UsageError> {
    let Some(d) = dataset else {
        return Err(UsageError(
            "no dataset given: pass --dataset <bundle dir or name under $PDEGNN_DATA> (or dataset= in --config)".into(),
        ));
    };
    let direct = PathBuf::from(d);
    if direct.join("meta.json").is_file() {
        return Ok(direct);
    }
    if let Some(root) = std::env::var_os("PDEGNN_DATA") {
        let under = PathBuf::from(root).join(d);
        if under.join("meta.json").is_file() {
            return Ok(under);
        }
    }
    Err(UsageError(format!(
        "--dataset {d}: no bundle found (no meta.json at {} or under $PDEGNN_DATA)",
        direct.display()
    )))
}

struct Prepared {
    cfg: ExperimentConfig,
    bundle: DatasetBundle,
    payload_sha: String,
}

fn prepare(args: &RunArgs, default_depths: Option<&str>) -> Result<Prepared> {
    let mut layer = args.layer()?;
    if let (Some(d), None) = (default_depths, layer.get("depths")) {
        layer.set("depths", d)?;
    }
    let dir = locate(layer.get("dataset"))?;
    let meta = read_meta(&dir).with_context(|| format!("reading {}", dir.display()))?;
    let cfg = ExperimentConfig::resolve(&layer, Some(&meta.name))?;
    let mut bundle = load_bundle(&dir).with_context(|| format!("loading bundle {}", dir.display()))?;
    if cfg.row_normalize_for(&bundle.name) {
        bundle.features = bundle.row_normalized_features();
    }
    println!("# effective config");
    for line in cfg.to_kv().lines() {
        println!("#   {line}");
    }
    println!(
        "# bundle {} at {}: n={} m={} f_in={} classes={}",
        bundle.name,
        dir.display(),
        bundle.n(),
        bundle.m(),
        bundle.f_in(),
        bundle.classes
    );
    Ok(Prepared {
        cfg,
        bundle,
        payload_sha: meta.payload_sha256,
    })
}

struct Outcome {
    result: RunResult,
    profile: Option<SmoothingProfile>,
}

fn split_for(p: &Prepared, seed: u64) -> Result<SplitSpec> {
    Ok(match p.cfg.split {
        Protocol::Semi => semi_split(&p.bundle, seed)?,
        Protocol::Full => full_split(&p.bundle, seed)?,
    })
}

/// ReLU of the input embedding, the state the block stack starts from.
fn embedded<T: Real>(model: &Model<T>, x: &Array2<T>) -> Array2<T> {
    let params = model.params();
    let w = &params.get(params.id("w_in").expect("models have w_in")).value;
    x.dot(w).mapv(|v| v.max(T::zero()))
}

fn run_typed<T: Real>(p: &Prepared, depth: usize, seed: u64, profile: bool) -> Result<Outcome> {
    let split = split_for(p, seed)?;
    let mut model = init_model::<T>(&p.cfg.model(depth, seed), p.bundle.graph()?, p.bundle.f_in(), p.bundle.classes)?;
    let mut result = train_model(&mut model, &p.bundle, &split, &p.cfg.optim(), seed)?;
    let echo = p.cfg.run_echo(&p.bundle.name, &p.payload_sha, depth, seed);
    result.config_hash = config_hash(&echo);
    write_echo(&p.cfg.out, &result.config_hash, &echo)?;
    let profile = if profile {
        let x = p.bundle.features.mapv(|v| T::of(v as f64));
        Some(smoothing_profile(&model, &embedded(&model, &x))?)
    } else {
        None
    };
    Ok(Outcome { result, profile })
}

/// Trains every (depth, seed) pair on `jobs` threads. Results come back
/// sorted by (depth, seed) regardless of completion order.
fn run_all(p: &Prepared, profile: bool) -> Result<Vec<Outcome>> {
    let mut keys: Vec<(usize, u64)> = p
        .cfg
        .depths
        .iter()
        .flat_map(|&d| p.cfg.seeds.iter().map(move |&s| (d, s)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::with_capacity(keys.len()));
    let threads = p.cfg.jobs.min(keys.len());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(depth, seed)) = keys.get(i) else { break };
                let start = Instant::now();
                let out = if p.cfg.f64 {
                    run_typed::<f64>(p, depth, seed, profile)
                } else {
                    run_typed::<f32>(p, depth, seed, profile)
                };
                if let Ok(o) = &out {
                    let r = &o.result;
                    println!(
                        "{} {} depth {depth} seed {seed}: val {:.2} test {:.2} best epoch {} of {} ({:.1}s) [{}]",
                        p.bundle.name,
                        p.cfg.block,
                        r.best_val_acc,
                        r.test_acc,
                        r.best_epoch,
                        r.epochs_ran,
                        start.elapsed().as_secs_f64(),
                        r.config_hash
                    );
                }
                done.lock().expect("no panics while holding the lock").push((i, out));
            });
        }
    });
    let mut done = done.into_inner().expect("workers finished");
    done.sort_by_key(|(i, _)| *i);
    done.into_iter()
        .map(|(i, r)| r.with_context(|| format!("depth {} seed {}", keys[i].0, keys[i].1)))
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn train(args: &RunArgs) -> Result<ExitCode> {
    let p = prepare(args, None)?;
    let outcomes = run_all(&p, false)?;
    let rows: Vec<String> = outcomes.iter().map(|o| o.result.csv_row(&p.bundle.name)).collect();
    let path = p.cfg.out.join("results.csv");
    append_csv(&path, CSV_HEADER, &rows)?;
    for &depth in &p.cfg.depths {
        let tests: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.result.config.depth == depth)
            .map(|o| o.result.test_acc)
            .collect();
        let (mean, sd) = mean_std(&tests);
        println!(
            "{} {} depth {depth}: test {mean:.2} ± {sd:.2} over {} seed(s)",
            p.bundle.name,
            p.cfg.block,
            tests.len()
        );
    }
    println!("wrote {} row(s) to {}", rows.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn sweep_depth(args: &RunArgs) -> Result<ExitCode> {
    let p = prepare(args, Some(SWEEP_DEPTHS))?;
    let outcomes = run_all(&p, true)?;
    let name = &p.bundle.name;
    let rows: Vec<String> = outcomes.iter().map(|o| o.result.csv_row(name)).collect();
    append_csv(&p.cfg.out.join("sweep.csv"), CSV_HEADER, &rows)?;

    let mut smoothing = Vec::new();
    for o in &outcomes {
        let r = &o.result;
        let prof = o.profile.as_ref().expect("sweeps record profiles");
        for (layer, (v, nv)) in prof.variance.iter().zip(&prof.normalized_variance).enumerate() {
            smoothing.push(format!(
                "{name},{},{},{},{layer},{v:.6e},{nv:.6e},{}",
                r.config.block, r.config.depth, r.seed, r.config_hash
            ));
        }
    }
    append_csv(&p.cfg.out.join("smoothing.csv"), SMOOTHING_HEADER, &smoothing)?;

    let mut depths = p.cfg.depths.clone();
    depths.sort_unstable();
    depths.dedup();
    let header = format!(
        "dataset,split,block,seeds,{}",
        depths.iter().map(|d| format!("d{d}")).collect::<Vec<_>>().join(",")
    );
    let cells: Vec<String> = depths
        .iter()
        .map(|&d| {
            let tests: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.result.config.depth == d)
                .map(|o| o.result.test_acc)
                .collect();
            format!("{:.2}", mean_std(&tests).0)
        })
        .collect();
    let seeds = p.cfg.seeds.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
    let row = format!(
        "{name},{},{},{seeds},{}",
        crate::config::protocol_name(p.cfg.split),
        p.cfg.block,
        cells.join(",")
    );
    append_csv(&p.cfg.out.join("table.csv"), &header, std::slice::from_ref(&row))?;
    println!("{header}\n{row}");
    println!(
        "wrote {} run(s) to {}/{{sweep,smoothing,table}}.csv",
        outcomes.len(),
        p.cfg.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn verify(quick: bool, seed: u64, fault: Option<Fault>) -> Result<ExitCode> {
    let mut opts = if quick { VerifyOptions::quick() } else { VerifyOptions::full() };
    opts.seed = seed;
    opts.fault = fault;
    let start = Instant::now();
    let report = run_suite(&opts);
    println!("{report}");
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn inspect(dataset: Option<&str>) -> Result<ExitCode> {
    let dir = locate(dataset.map(str::to_string).as_deref())?;
    let meta = read_meta(&dir)?;
    println!("bundle {} at {}", meta.name, dir.display());
    println!("  payload_sha256 {}", meta.payload_sha256);
    if let Some(b) = benchmark_stats(&meta.name) {
        for (field, got, want) in [
            ("nodes", meta.n, b.nodes),
            ("edges", meta.m, b.edges),
            ("features", meta.f_in, b.features),
            ("classes", meta.classes, b.classes),
        ] {
            let mark = if got == want { "=" } else { "≠" };
            println!("  {field}: {got} {mark} {want}");
        }
    }
    let bundle = match load_bundle(&dir) {
        Ok(b) => b,
        Err(e) => {
            println!("  invalid [{}]: {e}", e.code());
            return Ok(ExitCode::from(1));
        }
    };
    let graph = bundle.graph()?;
    let deg = graph.degrees();
    let isolated = deg.iter().filter(|&&d| d == 0).count();
    println!(
        "  n={} m={} f_in={} classes={}",
        bundle.n(),
        bundle.m(),
        bundle.f_in(),
        bundle.classes
    );
    println!(
        "  degree min {} mean {:.2} max {}; {isolated} isolated; connected {}",
        deg.iter().min().unwrap_or(&0),
        2.0 * bundle.m() as f64 / bundle.n().max(1) as f64,
        deg.iter().max().unwrap_or(&0),
        graph.is_connected()
    );
    println!("  class counts {:?}", bundle.class_counts());
    match &bundle.masks {
        Some(m) => {
            let (tr, va, te) = m.counts();
            println!("  masks train {tr} val {va} test {te}");
        }
        None => println!("  no masks; splits are generated per seed"),
    }
    Ok(ExitCode::SUCCESS)
}

