mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use ifdet_core::features::FeatureRecord;
use ifdet_core::model::{ModelConfig, Prediction, Session};
use ifdet_core::runtime::{cadence_jitter, run_pipeline, timing_report, Inference, PipelineConfig};
use ifdet_core::Result;

/// Inference stand-in that sleeps for a fixed time per call.
struct Delayed {
    delay: Duration,
    warmed: bool,
}

impl Inference for Delayed {
    fn warmup(&mut self) -> Result<()> {
        self.warmed = true;
        Ok(())
    }

    fn infer(&mut self, _record: &FeatureRecord) -> Result<Prediction> {
        let t = Instant::now();
        let cold = !self.warmed;
        self.warmed = true;
        std::thread::sleep(self.delay);
        Ok(Prediction::from_logits(
            &[0.0, 1.0],
            t.elapsed().as_secs_f64() * 1e6,
            cold,
        ))
    }
}

fn source() -> impl FnMut(u64) -> Result<FeatureRecord> + Send {
    let base = Arc::new(common::random_record(&mut common::rng(9)));
    move |k| {
        let mut r = (*base).clone();
        r.envelope.slot_index = k;
        Ok(r)
    }
}

fn config(period_us: u64, warmup: bool) -> PipelineConfig {
    PipelineConfig {
        slot_period_us: period_us,
        warmup_enabled: warmup,
        ..PipelineConfig::default()
    }
}

#[test]
fn fast_inference_sees_every_slot() {
    let inf = Delayed {
        delay: Duration::from_micros(100),
        warmed: false,
    };
    let out = run_pipeline(source(), inf, &config(5_000, true), 40, None).unwrap();
    assert_eq!(out.stats.dropped, 0);
    assert_eq!(out.predictions.len(), 40);
    for (k, p) in out.predictions.iter().enumerate() {
        assert_eq!(p.slot_index, k as u64);
        assert!(!p.prediction.cold);
    }
}

#[test]
fn slow_inference_drops_but_keeps_cadence() {
    let period = 2_000;
    let inf = Delayed {
        delay: Duration::from_micros(3 * period),
        warmed: false,
    };
    let out = run_pipeline(source(), inf, &config(period, true), 60, None).unwrap();
    assert_eq!(out.generation_us.len(), 60);
    assert!(out.stats.dropped > 0);
    assert_eq!(out.predictions.len() as u64 + out.stats.dropped, 60);
    // Slots are never skipped: the last one starts one period per slot in.
    let last = *out.generation_us.last().unwrap();
    assert!(
        (last - 59.0 * period as f64).abs() < 0.5 * period as f64,
        "last slot at {last} us"
    );
    let j = cadence_jitter(&out.generation_us, period as f64).unwrap();
    assert!(j.mean_abs_us < 0.25 * period as f64, "{j:?}");
}

#[test]
fn predictions_arrive_in_slot_order() {
    let inf = Delayed {
        delay: Duration::from_micros(2_500),
        warmed: false,
    };
    let out = run_pipeline(source(), inf, &config(1_000, true), 50, None).unwrap();
    assert!(out
        .predictions
        .windows(2)
        .all(|w| w[0].slot_index < w[1].slot_index));
}

#[test]
fn cold_first_prediction_is_excluded() {
    let cfg = ModelConfig::reduced(4, 8, 64, 2).unwrap();
    let session = Session::new(Arc::new(common::random_bundle(&cfg, 1))).unwrap();
    let mut r = common::rng(4);
    let iq = common::random_iq(&mut r, cfg.input.iq_len());
    let scalars = common::random_scalars(&mut r);
    let src = move |k: u64| -> Result<FeatureRecord> {
        let mut rec = common::random_record(&mut common::rng(k));
        rec.iq = iq.clone();
        rec.scalars = scalars;
        Ok(rec)
    };
    // A reduced session cannot take production records, so adapt it.
    struct Reduced(Session);
    impl Inference for Reduced {
        fn warmup(&mut self) -> Result<()> {
            self.0.warmup().map(|_| ())
        }
        fn infer(&mut self, r: &FeatureRecord) -> Result<Prediction> {
            self.0.forward_raw(&r.iq, &r.scalars.as_array())
        }
    }
    let out = run_pipeline(src, Reduced(session), &config(20_000, false), 6, None).unwrap();
    assert!(out.predictions[0].prediction.cold);
    assert!(out.predictions[1..].iter().all(|p| !p.prediction.cold));
    let report = timing_report(&out.stats).unwrap();
    assert_eq!(report.cold_excluded, 1);
    assert_eq!(report.overall.count, out.predictions.len() - 1);
}

#[test]
fn sampled_logging_during_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.ifr");
    let inf = Delayed {
        delay: Duration::from_micros(50),
        warmed: false,
    };
    let cfg = PipelineConfig {
        log_sample_every: 10,
        ..config(2_000, true)
    };
    let out = run_pipeline(source(), inf, &cfg, 30, Some(&path)).unwrap();
    let log = out.log.unwrap();
    assert_eq!(log.offered, 30);
    assert_eq!(log.persisted + log.dropped, 3);
}

#[test]
fn report_separates_traffic_phases() {
    let mut high = true;
    let src = move |k: u64| -> Result<FeatureRecord> {
        let mut r = common::random_record(&mut common::rng(k));
        high = !high;
        r.scalars.cb_total_count = if high { 4 } else { 1 };
        r.scalars.cb_err_count = 0;
        Ok(r)
    };
    let inf = Delayed {
        delay: Duration::from_micros(50),
        warmed: false,
    };
    let out = run_pipeline(src, inf, &config(2_000, true), 20, None).unwrap();
    let report = timing_report(&out.stats).unwrap();
    assert_eq!(report.phases.len(), 2);
    assert_eq!(
        report.phases.iter().map(|(_, s)| s.count).sum::<usize>(),
        20
    );
}
