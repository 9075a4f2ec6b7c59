//! Optional TOML configuration shared by `gen` and `run`.
//!
//! ```toml
//! seed = 7
//!
//! [sweep]
//! snr_db = [10.0, 30.0]
//! sir_db = [0.0, 10.0]
//! mcs_table = 0
//! mcs_indices = [0, 5, 10, 15]
//! n_interferers = [0, 1]
//! delay_profiles = ["tdl-a-like", "tdl-b-like", "tdl-c-like"]
//! doppler_hz = 10.0
//! burst_counts = [1, 2, 3, 4]
//! active_fraction = [0.2, 0.6]
//! traffic = ["no-traffic", "high-traffic"]
//!
//! [pipeline]
//! slot_period_us = 500
//! warmup = true
//! log_sample_every = 10
//! latency_budget_us = 1000.0
//! ```
//!
//! Every key is optional; missing keys keep the library defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ifdet_core::channel::TdlProfile;
use ifdet_core::grid::TrafficProfile;
use ifdet_core::runtime::PipelineConfig;
use ifdet_core::synth::Sweep;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db: Option<[f64; 2]>,
    pub sir_db: Option<[f64; 2]>,
    pub mcs_table: Option<u8>,
    pub mcs_indices: Option<Vec<u8>>,
    pub n_interferers: Option<Vec<u8>>,
    pub delay_profiles: Option<Vec<String>>,
    pub doppler_hz: Option<f64>,
    pub burst_counts: Option<Vec<usize>>,
    pub active_fraction: Option<[f64; 2]>,
    pub traffic: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub slot_period_us: Option<u64>,
    pub warmup: Option<bool>,
    pub log_sample_every: Option<u64>,
    pub latency_budget_us: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn sweep(&self) -> Result<Sweep> {
        let s = &self.sweep;
        let mut sweep = Sweep::default();
        if let Some([lo, hi]) = s.snr_db {
            sweep.snr_db = (lo, hi);
        }
        if let Some([lo, hi]) = s.sir_db {
            sweep.sir_db = (lo, hi);
        }
        if let Some(t) = s.mcs_table {
            sweep.mcs_table = t;
        }
        if let Some(v) = &s.mcs_indices {
            sweep.mcs_indices = v.clone();
        }
        if let Some(v) = &s.n_interferers {
            sweep.n_interferers = v.clone();
        }
        let doppler = s.doppler_hz.unwrap_or(10.0);
        if s.delay_profiles.is_some() || s.doppler_hz.is_some() {
            let names = s.delay_profiles.clone().unwrap_or_else(|| {
                ["tdl-a-like", "tdl-b-like", "tdl-c-like"]
                    .map(String::from)
                    .to_vec()
            });
            sweep.delay_profiles = names
                .iter()
                .map(|n| TdlProfile::preset(n, doppler))
                .collect::<ifdet_core::Result<_>>()?;
        }
        if let Some(v) = &s.burst_counts {
            sweep.burst_counts = v.clone();
        }
        if let Some([lo, hi]) = s.active_fraction {
            sweep.active_fraction = (lo, hi);
        }
        if let Some(v) = &s.traffic {
            sweep.traffic = v.iter().map(|t| traffic(t)).collect::<Result<_>>()?;
        }
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let p = &self.pipeline;
        let d = PipelineConfig::default();
        PipelineConfig {
            slot_period_us: p.slot_period_us.unwrap_or(d.slot_period_us),
            warmup_enabled: p.warmup.unwrap_or(d.warmup_enabled),
            log_sample_every: p.log_sample_every.unwrap_or(d.log_sample_every),
            latency_budget_us: p.latency_budget_us.unwrap_or(d.latency_budget_us),
        }
    }
}

fn traffic(name: &str) -> Result<TrafficProfile> {
    match name {
        "no-traffic" => Ok(TrafficProfile::no_traffic()),
        "high-traffic" => Ok(TrafficProfile::high_traffic()),
        other => bail!("unknown traffic kind {other:?} (expected no-traffic or high-traffic)"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c: FileConfig = toml::from_str("").unwrap();
        assert_eq!(c.pipeline(), PipelineConfig::default());
        assert_eq!(c.sweep().unwrap().snr_db, Sweep::default().snr_db);
    }

    #[test]
    fn full_config_parses() {
        let c: FileConfig = toml::from_str(
            r#"
            seed = 3
            [sweep]
            snr_db = [5.0, 5.0]
            n_interferers = [0, 1, 2]
            delay_profiles = ["flat"]
            traffic = ["high-traffic"]
            [pipeline]
            slot_period_us = 1000
            warmup = false
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        let s = c.sweep().unwrap();
        assert_eq!(s.snr_db, (5.0, 5.0));
        assert_eq!(s.delay_profiles[0].name, "flat");
        assert_eq!(s.traffic, vec![TrafficProfile::high_traffic()]);
        let p = c.pipeline();
        assert_eq!((p.slot_period_us, p.warmup_enabled), (1000, false));
    }

    #[test]
    fn unknown_keys_and_values_rejected() {
        assert!(toml::from_str::<FileConfig>("[sweep]\nsnr = [1.0, 2.0]").is_err());
        let c: FileConfig = toml::from_str("[sweep]\ntraffic = [\"busy\"]").unwrap();
        assert!(c.sweep().is_err());
        let c: FileConfig = toml::from_str("[sweep]\ndelay_profiles = [\"tdl-z\"]").unwrap();
        assert!(c.sweep().is_err());
    }
}
