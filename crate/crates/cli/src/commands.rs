use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use ifdet_core::channel::ScenarioConfig;
use ifdet_core::dataset::{read_batches, FileSink, RecordSink};
use ifdet_core::eval::{evaluate, evaluate_with};
use ifdet_core::features::{N_SCALARS, RECORD_BYTES};
use ifdet_core::grid::TrafficProfile;
use ifdet_core::labeling::{classify_traffic, label_log_windows, LogEntry, TrafficLevel};
use ifdet_core::model::{derive_shapes, ModelConfig, Session, WeightBundle};
use ifdet_core::runtime::{
    cadence_jitter, run_pipeline, timing_report, LatencySample, TimingReport, TimingStats,
};
use ifdet_core::synth::{simulate_slot, Sweep};
use ifdet_core::{FeatureRecord, Label};

use crate::config::FileConfig;
use crate::{
    BenchArgs, EvalArgs, GenArgs, InferArgs, InitWeightsArgs, LabelArgs, RunArgs, ShapesArgs,
};

const GEN_CHUNK: u64 = 64;

/// Simulates `indices` on all available cores, returning records in
/// index order.
fn simulate_chunk(
    sweep: &Sweep,
    seed: u64,
    indices: std::ops::Range<u64>,
) -> Result<Vec<FeatureRecord>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()) as u64;
    let start = indices.start;
    let n = indices.end - start;
    let mut parts: Vec<Vec<(u64, FeatureRecord)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads.min(n.max(1)))
            .map(|t| {
                s.spawn(move || -> Result<Vec<(u64, FeatureRecord)>> {
                    (start + t..start + n)
                        .step_by(threads as usize)
                        .map(|i| Ok((i, sweep.simulate(seed, i)?.record)))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generator thread"))
            .collect::<Result<_>>()
    })?;
    let mut all: Vec<(u64, FeatureRecord)> = parts.drain(..).flatten().collect();
    all.sort_by_key(|(i, _)| *i);
    Ok(all.into_iter().map(|(_, r)| r).collect())
}

pub fn gen(args: &GenArgs, seed: Option<u64>) -> Result<()> {
    let cfg = FileConfig::load(args.scenarios.as_deref())?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let sweep = cfg.sweep()?;
    let mut sink =
        FileSink::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut buf = Vec::with_capacity(RECORD_BYTES);
    let mut per_label = [0u64; 3];
    let mut chunk_start = 0;
    while chunk_start < args.count {
        let end = (chunk_start + GEN_CHUNK).min(args.count);
        for rec in simulate_chunk(&sweep, seed, chunk_start..end)? {
            per_label[rec.envelope.label.code() as usize] += 1;
            buf.clear();
            rec.encode_into(&mut buf);
            sink.write_record(&buf)?;
        }
        chunk_start = end;
    }
    sink.finish(args.count)?;
    println!(
        "wrote {} records to {} (seed {seed}): {} CLEAN, {} INTERF",
        args.count,
        args.out.display(),
        per_label[Label::Clean.code() as usize],
        per_label[Label::Interf.code() as usize]
    );
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(t), Some(c)) = (fields.next(), fields.next()) else {
            bail!(
                "{}:{}: expected timestamp_us,cb_total_count",
                path.display(),
                n + 1
            );
        };
        match (t.parse::<u64>(), c.parse::<u32>()) {
            (Ok(timestamp_us), Ok(cb_total_count)) => out.push(LogEntry {
                timestamp_us,
                cb_total_count,
            }),
            // header row
            _ if n == 0 => continue,
            _ => bail!("{}:{}: cannot parse {line:?}", path.display(), n + 1),
        }
    }
    Ok(out)
}

pub fn label(args: &LabelArgs) -> Result<()> {
    ensure!(args.window_ms > 0, "window must be positive");
    let log1 = read_log(&args.log1)?;
    let log2 = read_log(&args.log2)?;
    let (l1, l2) = label_log_windows(&log1, &log2, args.window_ms * 1000)?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    writeln!(out, "log,index,timestamp_us,cb_total_count,label")?;
    let mut counts = [0usize; 3];
    for (side, log, labels) in [(1, &log1, &l1), (2, &log2, &l2)] {
        for (i, (e, l)) in log.iter().zip(labels).enumerate() {
            counts[l.code() as usize] += 1;
            writeln!(
                out,
                "{side},{i},{},{},{l}",
                e.timestamp_us, e.cb_total_count
            )?;
        }
    }
    out.flush()?;
    println!(
        "labeled {} + {} entries: {} CLEAN, {} INTERF, {} NA -> {}",
        log1.len(),
        log2.len(),
        counts[0],
        counts[1],
        counts[2],
        args.out.display()
    );
    Ok(())
}

fn load_session(weights: &Path) -> Result<Session> {
    let bundle =
        WeightBundle::load(weights).with_context(|| format!("loading {}", weights.display()))?;
    Ok(Session::new(Arc::new(bundle))?)
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let mut session = load_session(&args.weights)?;
    let n = session.config().n_classes;
    session.warmup()?;
    let mut out = BufWriter::new(File::create(&args.report)?);
    write!(out, "slot_index,scenario_id,truth,predicted")?;
    for c in 0..n {
        write!(out, ",prob_{c}")?;
    }
    writeln!(out, ",latency_us")?;
    let mut io_err = None;
    let ev = evaluate_with(&mut session, &args.data, |rec, truth, p| {
        let mut row = format!(
            "{},{},{},{}",
            rec.envelope.slot_index,
            rec.envelope.scenario_id,
            truth.map_or(String::new(), |t| t.to_string()),
            p.argmax
        );
        for q in p.probs() {
            row.push_str(&format!(",{q:.6}"));
        }
        row.push_str(&format!(",{:.1}", p.latency_us));
        if let Err(e) = writeln!(out, "{row}") {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    out.flush()?;
    println!(
        "{} records scored ({} skipped), accuracy {:.4}; predictions in {}",
        ev.confusion.total(),
        ev.skipped,
        ev.accuracy,
        args.report.display()
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let ev = evaluate(&args.data, &args.weights)?;
    let names = ev.target.class_names();
    let confusion = ev.confusion.to_csv(&names);
    print!("{confusion}");
    println!(
        "accuracy {:.4} over {} records ({} skipped)",
        ev.accuracy,
        ev.confusion.total(),
        ev.skipped
    );
    if let Some(m) = ev.binary {
        println!(
            "recall (INTERF) {:.4}, specificity (CLEAN) {:.4}",
            m.recall, m.specificity
        );
    }
    for (name, (r, s)) in names.iter().zip(&ev.per_class) {
        println!("class {name}: recall {r:.4}, specificity {s:.4}");
    }
    if let Some(prefix) = &args.out {
        let p = prefix.to_string_lossy();
        std::fs::write(format!("{p}_confusion.csv"), confusion)?;
        std::fs::write(format!("{p}_metrics.csv"), ev.metrics_csv())?;
    }
    Ok(())
}

pub fn shapes(args: &ShapesArgs) -> Result<()> {
    let cfg = ModelConfig::new(args.alpha, args.beta, args.gamma, args.classes)?;
    println!("{}", derive_shapes(&cfg)?);
    Ok(())
}

pub fn init_weights(args: &InitWeightsArgs, seed: Option<u64>) -> Result<()> {
    let cfg = ModelConfig::new(args.alpha, args.beta, args.gamma, args.classes)?;
    let mut bundle = WeightBundle::random(&cfg, seed.unwrap_or(0))?;
    if let Some(data) = &args.stats_from {
        let (mean, std) = scalar_stats(data)?;
        bundle.scalar_mean = mean;
        bundle.scalar_std = std;
    }
    bundle.save(&args.out)?;
    println!("wrote {} weights to {}", cfg.name(), args.out.display());
    Ok(())
}

/// Per-scalar mean and standard deviation over a dataset; constant
/// features get a unit deviation.
fn scalar_stats(data: &Path) -> Result<([f32; N_SCALARS], [f32; N_SCALARS])> {
    let mut n = 0f64;
    let mut mean = [0f64; N_SCALARS];
    let mut m2 = [0f64; N_SCALARS];
    for batch in read_batches(data, 64)? {
        for rec in batch? {
            n += 1.0;
            for (j, x) in rec.scalars.as_array().iter().enumerate() {
                let x = *x as f64;
                let d = x - mean[j];
                mean[j] += d / n;
                m2[j] += d * (x - mean[j]);
            }
        }
    }
    ensure!(n > 0.0, "{} holds no records", data.display());
    let std = m2.map(|v| {
        let s = (v / n).sqrt() as f32;
        if s > 1e-6 {
            s
        } else {
            1.0
        }
    });
    Ok((mean.map(|m| m as f32), std))
}

fn print_report(r: &TimingReport) {
    print!("{}", r.summary_csv());
    println!(
        "cold calls excluded: {}, dropped slots: {}",
        r.cold_excluded, r.dropped
    );
}

pub fn bench(args: &BenchArgs, seed: Option<u64>) -> Result<()> {
    ensure!(args.iters > 0, "--iters must be at least 1");
    let mut session = load_session(&args.weights)?;
    ensure!(
        session.config().is_production(),
        "bench needs a production-shaped bundle, got {} subcarriers",
        session.config().input.subcarriers
    );
    let seed = seed.unwrap_or(0);
    let sc = ScenarioConfig {
        seed,
        n_interferers: 1,
        ..ScenarioConfig::default()
    };
    let records = [
        simulate_slot(&sc, &TrafficProfile::no_traffic(), 0, 0)?.record,
        simulate_slot(&sc, &TrafficProfile::high_traffic(), 1, 0)?.record,
    ];
    if !args.no_warmup {
        let w = session.warmup()?;
        println!(
            "warm-up {:.1} ms, workspace {:.1} MiB, {} tactic candidates timed",
            w.total_us / 1e3,
            w.workspace_bytes as f64 / (1 << 20) as f64,
            w.candidates_timed
        );
        for l in &w.layers {
            println!(
                "  {}: {:?} / {:?} ({:.1} ms)",
                l.layer,
                l.tactic.lowering,
                l.tactic.kernel,
                l.best_us / 1e3
            );
        }
    }
    let mut stats = TimingStats {
        budget_us: args.budget_us,
        ..TimingStats::default()
    };
    for i in 0..args.iters {
        // alternate traffic phases in blocks of ten calls
        let rec = &records[(i / 10) % 2];
        let p = session.forward(rec)?;
        if p.cold {
            println!("first call (cold) {:.1} ms", p.latency_us / 1e3);
        }
        stats.samples.push(LatencySample {
            slot_index: i as u64,
            latency_us: p.latency_us,
            cold: p.cold,
            traffic: classify_traffic(rec.scalars.cb_total_count as i64)
                .unwrap_or(TrafficLevel::NoUe),
        });
    }
    let report = timing_report(&stats)?;
    print_report(&report);
    if let Some(prefix) = &args.out {
        report.write_csv(prefix)?;
    }
    Ok(())
}

pub fn run(args: &RunArgs, seed: Option<u64>) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let sweep = cfg.sweep()?;
    let mut pcfg = cfg.pipeline();
    if let Some(p) = args.slot_period_us {
        pcfg.slot_period_us = p;
    }
    if args.no_warmup {
        pcfg.warmup_enabled = false;
    }
    let session = load_session(&args.weights)?;
    let n_classes = session.config().n_classes;
    let source = move |k: u64| sweep.simulate(seed, k).map(|s| s.record);
    let out = run_pipeline(source, session, &pcfg, args.slots, args.log.as_deref())?;

    let correct = out
        .predictions
        .iter()
        .filter(|p| match n_classes {
            2 => p.label != Label::Na && p.prediction.argmax == p.label.code() as usize,
            _ => p.prediction.argmax == p.n_interferers as usize,
        })
        .count();
    println!(
        "{} slots generated, {} predictions, {} dropped, {} inference errors, {correct} correct",
        out.stats.generated,
        out.predictions.len(),
        out.stats.dropped,
        out.inference_errors.len()
    );
    if let Ok(j) = cadence_jitter(&out.generation_us, pcfg.slot_period_us as f64) {
        println!(
            "slot cadence: mean |jitter| {:.1} us, p99 {:.1} us, max {:.1} us",
            j.mean_abs_us, j.p99_abs_us, j.max_abs_us
        );
    }
    if let Some(log) = out.log {
        println!(
            "logged {} of {} records ({} dropped)",
            log.persisted, log.offered, log.dropped
        );
    }
    let report = timing_report(&out.stats)?;
    print_report(&report);
    if let Some(prefix) = &args.report {
        report.write_csv(prefix)?;
    }
    Ok(())
}
