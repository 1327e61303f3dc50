//! The four subcommands.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use hetgrad_core::ingestion::synthetic_digits;
use hetgrad_core::layers::LayerParams;
use hetgrad_core::netdef::parse_solver;
use hetgrad_core::solver::{snapshot, Solver, TrainEvent};
use hetgrad_core::Phase;

use hetgrad_core::report;
use crate::setup::{
    build_net, devices, effective_seed, load_dataset, load_net_spec, resolve_relative,
};
use crate::CommonArgs;

pub struct TrainArgs {
    pub common: CommonArgs,
    pub solver: PathBuf,
    pub snapshot: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub max_iter: Option<u64>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub synth_train: usize,
    pub synth_test: usize,
}

fn print_event(event: &TrainEvent) {
    println!(
        "Iteration {}, lr = {:.6}, loss = {:.6} (smoothed {:.6})",
        event.iter, event.lr, event.loss, event.smoothed_loss
    );
    if let Some(outputs) = &event.test {
        for (i, (name, value)) in outputs.iter().enumerate() {
            println!("    Test net output #{}: {} = {:.6}", i, name, value);
        }
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let seed = effective_seed(&args.common);
    let text = std::fs::read_to_string(&args.solver)
        .with_context(|| format!("cannot read solver '{}'", args.solver.display()))?;
    let mut spec =
        parse_solver(&text).map_err(|e| anyhow::anyhow!("{}: {}", args.solver.display(), e))?;
    for warning in &spec.warnings {
        eprintln!("warning: {}: {}", args.solver.display(), warning);
    }
    if let Some(max_iter) = args.max_iter {
        spec.max_iter = max_iter;
    }
    if spec.max_iter == 0 {
        bail!("solver has no max_iter and none was given");
    }

    let net_path = resolve_relative(&args.solver, &spec.net);
    let net_spec = load_net_spec(&net_path)?;

    let mut dev = devices(&args.common)?;
    let mut train_net =
        build_net(&mut dev, &net_spec, Phase::Train, &args.common, seed, true)?;
    let run_tests = spec.test_interval > 0 && spec.test_iter > 0;
    let mut test_net = if run_tests {
        Some(build_net(&mut dev, &net_spec, Phase::Test, &args.common, seed, true)?)
    } else {
        None
    };

    // Datasets: IDX files when given, the synthetic digit task otherwise.
    let (train_ds, test_ds) = match (&args.common.data_images, &args.common.data_labels) {
        (Some(images), Some(labels)) => {
            let train = load_dataset(images, labels)?;
            let test = match (&args.test_images, &args.test_labels) {
                (Some(ti), Some(tl)) => load_dataset(ti, tl)?,
                _ => train.clone(),
            };
            (train, test)
        }
        (None, None) => {
            eprintln!(
                "note: no dataset given; training on {} synthetic digit images",
                args.synth_train
            );
            (
                Arc::new(synthetic_digits(args.synth_train, seed)),
                Arc::new(synthetic_digits(args.synth_test, seed.wrapping_add(1))),
            )
        }
        _ => bail!("--data-images and --data-labels must be given together"),
    };
    if train_net.has_data_layer() {
        train_net.attach_dataset(train_ds)?;
        train_net.reshape(&mut dev.rt)?;
    }
    if let Some(net) = &mut test_net {
        net.attach_dataset(test_ds)?;
        net.reshape(&mut dev.rt)?;
    }

    if let Some(weights) = &args.weights {
        snapshot::load_weights(weights, &mut dev.rt, &mut train_net)?;
        println!("Loaded weights from {}", weights.display());
    }

    let mut solver = Solver::new(&mut dev.rt, spec.clone(), train_net, test_net)?;
    if let Some(path) = &args.snapshot {
        snapshot::restore(path, &mut dev.rt, &mut solver)?;
        println!("Resumed from {} at iteration {}", path.display(), solver.iter());
    }

    let snapshot_path = |iter: u64| -> PathBuf {
        PathBuf::from(format!("{}_iter_{}.hgsnap", spec.snapshot_prefix, iter))
    };
    let display = spec.display.max(1);
    while solver.iter() < spec.max_iter {
        let remaining = spec.max_iter - solver.iter();
        let chunk = remaining.min(display);
        solver.step(&mut dev.rt, chunk, |event| {
            if event.iter % display == 0 || event.test.is_some() || event.iter == spec.max_iter {
                print_event(event);
            }
        })?;
        if spec.snapshot > 0
            && !spec.snapshot_prefix.is_empty()
            && solver.iter() % spec.snapshot == 0
        {
            let path = snapshot_path(solver.iter());
            if let Some(dir) = path.parent() {
                let _ = std::fs::create_dir_all(dir);
            }
            snapshot::save(&path, &mut dev.rt, &mut solver)?;
            println!("Snapshotting to {}", path.display());
        }
    }
    if !spec.snapshot_prefix.is_empty() {
        let path = snapshot_path(solver.iter());
        if let Some(dir) = path.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        snapshot::save(&path, &mut dev.rt, &mut solver)?;
        println!("Final snapshot: {}", path.display());
    }
    Ok(())
}

pub fn test(
    common: CommonArgs,
    model: PathBuf,
    weights: Option<PathBuf>,
    iterations: u64,
) -> Result<()> {
    let seed = effective_seed(&common);
    let net_spec = load_net_spec(&model)?;
    let mut dev = devices(&common)?;
    let mut net = build_net(&mut dev, &net_spec, Phase::Test, &common, seed, true)?;

    if net.has_data_layer() {
        let ds = match (&common.data_images, &common.data_labels) {
            (Some(images), Some(labels)) => load_dataset(images, labels)?,
            _ => Arc::new(synthetic_digits(1024, seed.wrapping_add(1))),
        };
        net.attach_dataset(ds)?;
        net.reshape(&mut dev.rt)?;
    }
    if let Some(weights) = &weights {
        snapshot::load_weights(weights, &mut dev.rt, &mut net)?;
    }

    let mut sums: Vec<(String, f64)> = Vec::new();
    for _ in 0..iterations.max(1) {
        let loss = net.forward(&mut dev.rt).map_err(|e| anyhow::anyhow!("{}", e))?;
        let mut outputs = vec![("loss".to_string(), loss)];
        for li in 0..net.layer_count() {
            let spec = net.layer(li).spec();
            if matches!(spec.params, LayerParams::Accuracy { .. }) {
                let blob = spec.tops.first().cloned().unwrap_or_default();
                if let Some(cell) = net.blob(&blob) {
                    let value = cell.borrow_mut().data.read_host(&mut dev.rt)?[0] as f64;
                    outputs.push((blob, value));
                }
            }
        }
        if sums.is_empty() {
            sums = outputs;
        } else {
            for (acc, (_, v)) in sums.iter_mut().zip(outputs) {
                acc.1 += v;
            }
        }
    }
    for (name, sum) in &sums {
        println!("{} = {:.6}", name, sum / iterations.max(1) as f64);
    }
    Ok(())
}

pub fn time(
    common: CommonArgs,
    model: PathBuf,
    iterations: u64,
    raw_layers: bool,
    test_phase: bool,
) -> Result<()> {
    let seed = effective_seed(&common);
    let net_spec = load_net_spec(&model)?;
    let mut dev = devices(&common)?;
    let phase = if test_phase { Phase::Test } else { Phase::Train };
    let mut net = build_net(&mut dev, &net_spec, phase, &common, seed, true)?;
    if net.has_data_layer() {
        if let (Some(images), Some(labels)) = (&common.data_images, &common.data_labels) {
            net.attach_dataset(load_dataset(images, labels)?)?;
            net.reshape(&mut dev.rt)?;
        }
    }

    let names = net.layer_names();
    let mut forward_sums = vec![0.0; names.len()];
    let mut backward_sums = vec![0.0; names.len()];
    for _ in 0..iterations.max(1) {
        let pass = net.timed_iteration(&mut dev.rt).map_err(|e| anyhow::anyhow!("{}", e))?;
        for i in 0..names.len() {
            forward_sums[i] += pass.forward_ms[i];
            backward_sums[i] += pass.backward_ms[i];
        }
    }
    let report = report::assemble(&names, &forward_sums, &backward_sums, iterations, raw_layers);
    match common.output.as_str() {
        "tsv" => print!("{}", report.to_tsv()),
        _ => print!("{}", report.to_text()),
    }
    Ok(())
}

pub fn trace(
    common: CommonArgs,
    model: PathBuf,
    iterations: u64,
    upload_per_iteration: bool,
    recompute_col: bool,
) -> Result<()> {
    let seed = effective_seed(&common);
    let net_spec = load_net_spec(&model)?;
    let mut dev = devices(&common)?;
    let mut net = build_net(&mut dev, &net_spec, Phase::Train, &common, seed, !recompute_col)?;
    if net.has_data_layer() {
        if let (Some(images), Some(labels)) = (&common.data_images, &common.data_labels) {
            net.attach_dataset(load_dataset(images, labels)?)?;
            net.reshape(&mut dev.rt)?;
        }
    }

    let wall0 = std::time::Instant::now();
    let exec0 = dev.rt.exec_wall_ms();
    let mut report = net
        .trace(&mut dev.rt, iterations.max(1), upload_per_iteration)
        .map_err(|e| anyhow::anyhow!("{}", e))?;
    let wall = wall0.elapsed().as_secs_f64() * 1e3;
    let exec = dev.rt.exec_wall_ms() - exec0;

    // Ratio of kernel+transfer time to the whole pass: on the emulated
    // device the pass combines virtual kernel time with real host overhead.
    let overhead = (wall - exec).max(0.0);
    let process_ms = report.total_ms + overhead;
    if process_ms > 0.0 {
        report.total_efficiency = Some(report.total_ms / process_ms);
    }

    match common.output.as_str() {
        "tsv" => print!("{}", report.to_tsv()),
        _ => print!("{}", report.to_text()),
    }
    Ok(())
}
