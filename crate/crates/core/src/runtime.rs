//! Slot-clocked pipeline with off-path inference and timing statistics.
//!
//! The producer generates one record per slot period on its own thread
//! and posts it to a single-slot mailbox; if the inference worker has not
//! taken the previous record yet, that record is replaced (drop-oldest).
//! Results flow to the calling thread over an unbounded channel, so
//! neither downstream role can stall generation.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::dataset::{RecordWriter, WriterStats, DEFAULT_SAMPLE_EVERY};
use crate::error::{Error, Result};
use crate::features::FeatureRecord;
use crate::labeling::{classify_traffic, Label, TrafficLevel};
use crate::model::{Prediction, Session};

pub const DEFAULT_SLOT_PERIOD_US: u64 = 500;
pub const DEFAULT_LATENCY_BUDGET_US: f64 = 1000.0;
pub const MOVING_AVERAGE_WINDOW: usize = 5;

// Sleep until this close to a slot boundary, then spin.
const SPIN_SLACK: Duration = Duration::from_micros(200);

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub slot_period_us: u64,
    pub warmup_enabled: bool,
    pub log_sample_every: u64,
    pub latency_budget_us: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            slot_period_us: DEFAULT_SLOT_PERIOD_US,
            warmup_enabled: true,
            log_sample_every: DEFAULT_SAMPLE_EVERY,
            latency_budget_us: DEFAULT_LATENCY_BUDGET_US,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slot_period_us == 0 {
            return Err(Error::Config("slot period must be positive".into()));
        }
        if self.log_sample_every == 0 {
            return Err(Error::Config("log_sample_every must be at least 1".into()));
        }
        if !(self.latency_budget_us > 0.0) {
            return Err(Error::Config("latency budget must be positive".into()));
        }
        Ok(())
    }
}

/// Produces the record for a slot.
pub trait SlotSource: Send {
    fn produce(&mut self, slot_index: u64) -> Result<FeatureRecord>;
}

impl<F: FnMut(u64) -> Result<FeatureRecord> + Send> SlotSource for F {
    fn produce(&mut self, slot_index: u64) -> Result<FeatureRecord> {
        self(slot_index)
    }
}

pub trait Inference: Send {
    fn warmup(&mut self) -> Result<()>;
    fn infer(&mut self, record: &FeatureRecord) -> Result<Prediction>;
}

impl Inference for Session {
    fn warmup(&mut self) -> Result<()> {
        Session::warmup(self).map(|_| ())
    }

    fn infer(&mut self, record: &FeatureRecord) -> Result<Prediction> {
        self.forward(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySample {
    pub slot_index: u64,
    pub latency_us: f64,
    pub cold: bool,
    pub traffic: TrafficLevel,
}

/// Per-inference latencies plus pipeline counters.
#[derive(Debug, Clone, Default)]
pub struct TimingStats {
    pub samples: Vec<LatencySample>,
    pub budget_us: f64,
    /// Records replaced in the mailbox before inference reached them.
    pub dropped: u64,
    pub generated: u64,
}

/// Nearest-rank percentile of sorted data, `p` in (0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Trailing moving average in "valid" mode: `len - window + 1` points.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Empirical CDF as (value, fraction ≤ value) with one point per distinct
/// value.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (i, x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = f,
            _ => out.push((*x, f)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
    pub misses: usize,
}

impl TimingStats {
    pub fn from_latencies(latencies: &[f64], budget_us: f64) -> Self {
        Self {
            samples: latencies
                .iter()
                .enumerate()
                .map(|(i, &l)| LatencySample {
                    slot_index: i as u64,
                    latency_us: l,
                    cold: false,
                    traffic: TrafficLevel::NoTraffic,
                })
                .collect(),
            budget_us,
            dropped: 0,
            generated: latencies.len() as u64,
        }
    }

    /// Latencies of warm inferences in arrival order.
    pub fn steady(&self) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| !s.cold)
            .map(|s| s.latency_us)
            .collect()
    }

    pub fn cold_count(&self) -> usize {
        self.samples.iter().filter(|s| s.cold).count()
    }

    /// Warm samples of one traffic phase.
    pub fn phase(&self, traffic: TrafficLevel) -> TimingStats {
        TimingStats {
            samples: self
                .samples
                .iter()
                .filter(|s| s.traffic == traffic)
                .copied()
                .collect(),
            budget_us: self.budget_us,
            dropped: 0,
            generated: 0,
        }
    }

    pub fn summary(&self) -> Result<Summary> {
        let mut v = self.steady();
        if v.is_empty() {
            return Err(Error::NoSamples);
        }
        let mean_us = v.iter().sum::<f64>() / v.len() as f64;
        let misses = v.iter().filter(|&&x| x > self.budget_us).count();
        v.sort_by(f64::total_cmp);
        Ok(Summary {
            count: v.len(),
            mean_us,
            median_us: percentile(&v, 50.0).expect("non-empty"),
            p95_us: percentile(&v, 95.0).expect("non-empty"),
            p99_us: percentile(&v, 99.0).expect("non-empty"),
            max_us: *v.last().expect("non-empty"),
            misses,
        })
    }
}

/// Plot-ready report over warm samples.
#[derive(Debug, Clone)]
pub struct TimingReport {
    pub overall: Summary,
    pub phases: Vec<(TrafficLevel, Summary)>,
    pub moving_average: Vec<f64>,
    pub cdf: Vec<(f64, f64)>,
    pub cold_excluded: usize,
    pub dropped: u64,
}

fn phase_name(t: TrafficLevel) -> &'static str {
    match t {
        TrafficLevel::NoUe => "no_ue",
        TrafficLevel::NoTraffic => "no_traffic",
        TrafficLevel::HighTraffic => "high_traffic",
    }
}

pub fn timing_report(stats: &TimingStats) -> Result<TimingReport> {
    let overall = stats.summary()?;
    let phases = [TrafficLevel::NoTraffic, TrafficLevel::HighTraffic]
        .into_iter()
        .filter_map(|t| stats.phase(t).summary().ok().map(|s| (t, s)))
        .collect();
    let steady = stats.steady();
    Ok(TimingReport {
        overall,
        phases,
        moving_average: moving_average(&steady, MOVING_AVERAGE_WINDOW),
        cdf: empirical_cdf(&steady),
        cold_excluded: stats.cold_count(),
        dropped: stats.dropped,
    })
}

impl TimingReport {
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("phase,count,mean_us,median_us,p95_us,p99_us,max_us,misses\n");
        let rows = std::iter::once(("all", &self.overall))
            .chain(self.phases.iter().map(|(t, m)| (phase_name(*t), m)));
        for (name, m) in rows {
            let _ = writeln!(
                s,
                "{name},{},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
                m.count, m.mean_us, m.median_us, m.p95_us, m.p99_us, m.max_us, m.misses
            );
        }
        s
    }

    pub fn moving_average_csv(&self) -> String {
        let mut s = String::from("index,moving_average_us\n");
        for (i, v) in self.moving_average.iter().enumerate() {
            let _ = writeln!(s, "{i},{v:.3}");
        }
        s
    }

    pub fn cdf_csv(&self) -> String {
        let mut s = String::from("latency_us,cdf\n");
        for (v, f) in &self.cdf {
            let _ = writeln!(s, "{v:.3},{f:.6}");
        }
        s
    }

    /// Writes `<prefix>_summary.csv`, `<prefix>_moving_average.csv` and
    /// `<prefix>_cdf.csv`.
    pub fn write_csv(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let prefix = prefix.as_ref().to_string_lossy().into_owned();
        std::fs::write(format!("{prefix}_summary.csv"), self.summary_csv())?;
        std::fs::write(
            format!("{prefix}_moving_average.csv"),
            self.moving_average_csv(),
        )?;
        std::fs::write(format!("{prefix}_cdf.csv"), self.cdf_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SlotPrediction {
    pub slot_index: u64,
    pub label: Label,
    pub n_interferers: u8,
    pub prediction: Prediction,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// In slot order.
    pub predictions: Vec<SlotPrediction>,
    pub stats: TimingStats,
    /// Generation start of each slot, microseconds after the clock start.
    pub generation_us: Vec<f64>,
    pub inference_errors: Vec<(u64, String)>,
    pub log: Option<WriterStats>,
}

/// Deviation of consecutive generation intervals from the slot period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub mean_abs_us: f64,
    pub p99_abs_us: f64,
    pub max_abs_us: f64,
}

pub fn cadence_jitter(generation_us: &[f64], slot_period_us: f64) -> Result<Jitter> {
    let mut dev: Vec<f64> = generation_us
        .windows(2)
        .map(|w| (w[1] - w[0] - slot_period_us).abs())
        .collect();
    if dev.is_empty() {
        return Err(Error::NoSamples);
    }
    dev.sort_by(f64::total_cmp);
    Ok(Jitter {
        mean_abs_us: dev.iter().sum::<f64>() / dev.len() as f64,
        p99_abs_us: percentile(&dev, 99.0).expect("non-empty"),
        max_abs_us: *dev.last().expect("non-empty"),
    })
}

#[derive(Default)]
struct MailState {
    pending: Option<(u64, Arc<FeatureRecord>)>,
    closed: bool,
    dropped: u64,
}

#[derive(Default)]
struct Mailbox {
    state: Mutex<MailState>,
    ready: Condvar,
}

impl Mailbox {
    fn post(&self, slot: u64, rec: Arc<FeatureRecord>) {
        let mut s = self.state.lock().expect("mailbox lock");
        if s.pending.replace((slot, rec)).is_some() {
            s.dropped += 1;
        }
        drop(s);
        self.ready.notify_one();
    }

    fn close(&self) {
        self.state.lock().expect("mailbox lock").closed = true;
        self.ready.notify_one();
    }

    fn take(&self) -> Option<(u64, Arc<FeatureRecord>)> {
        let mut s = self.state.lock().expect("mailbox lock");
        loop {
            if let Some(p) = s.pending.take() {
                return Some(p);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).expect("mailbox lock");
        }
    }
}

fn wait_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now + SPIN_SLACK {
        std::thread::sleep(deadline - now - SPIN_SLACK);
    }
    while Instant::now() < deadline {
        std::thread::yield_now();
    }
}

type WorkerMsg = (u64, Label, u8, TrafficLevel, Result<Prediction>);

/// Runs `n_slots` slots. Generation follows the slot clock regardless of
/// inference speed; `log_path` enables sampled record logging.
pub fn run_pipeline<S: SlotSource, I: Inference>(
    mut source: S,
    mut inference: I,
    config: &PipelineConfig,
    n_slots: u64,
    log_path: Option<&Path>,
) -> Result<PipelineOutput> {
    config.validate()?;
    if config.warmup_enabled {
        inference.warmup()?;
    }
    let mut writer = match log_path {
        Some(p) => Some(RecordWriter::create(p, config.log_sample_every)?),
        None => None,
    };
    let mailbox = Mailbox::default();
    let (tx, rx) = mpsc::channel::<WorkerMsg>();

    let generation_us = std::thread::scope(|scope| {
        let mb = &mailbox;
        scope.spawn(move || {
            while let Some((slot, rec)) = mb.take() {
                let traffic = classify_traffic(rec.scalars.cb_total_count as i64)
                    .unwrap_or(TrafficLevel::NoUe);
                let r = inference.infer(&rec);
                let env = rec.envelope;
                if tx
                    .send((slot, env.label, env.n_interferers, traffic, r))
                    .is_err()
                {
                    break;
                }
            }
        });
        let producer = scope.spawn(|| -> Result<Vec<f64>> {
            let mut times = Vec::with_capacity(n_slots as usize);
            let start = Instant::now();
            let result = (|| {
                for k in 0..n_slots {
                    wait_until(start + Duration::from_micros(config.slot_period_us * k));
                    times.push(start.elapsed().as_secs_f64() * 1e6);
                    let rec = Arc::new(source.produce(k)?);
                    if let Some(w) = writer.as_mut() {
                        w.append(rec.clone())?;
                    }
                    mb.post(k, rec);
                }
                Ok(())
            })();
            mb.close();
            result.map(|_| times)
        });
        producer.join().expect("producer thread")
    })?;

    let mut stats = TimingStats {
        budget_us: config.latency_budget_us,
        dropped: mailbox.state.lock().expect("mailbox lock").dropped,
        generated: generation_us.len() as u64,
        ..TimingStats::default()
    };
    let mut predictions = Vec::new();
    let mut inference_errors = Vec::new();
    for (slot, label, n_interferers, traffic, r) in rx {
        match r {
            Ok(p) => {
                stats.samples.push(LatencySample {
                    slot_index: slot,
                    latency_us: p.latency_us,
                    cold: p.cold,
                    traffic,
                });
                predictions.push(SlotPrediction {
                    slot_index: slot,
                    label,
                    n_interferers,
                    prediction: p,
                });
            }
            Err(e) => inference_errors.push((slot, e.to_string())),
        }
    }
    let log = match writer.as_mut() {
        Some(w) => Some(w.finalize()?),
        None => None,
    };
    Ok(PipelineOutput {
        predictions,
        stats,
        generation_us,
        inference_errors,
        log,
    })
}
