//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use ifdet_core::f16;
use ifdet_core::features::N_SCALARS;
use ifdet_core::model::{ModelConfig, Session, Tactic, WeightBundle};
use ifdet_core::synth::{SimulatedSlot, Sweep};
use ifdet_core::Result;

/// A model at `config` with deterministic random weights.
pub fn session(config: &ModelConfig, seed: u64) -> Result<Session> {
    let bundle = Arc::new(WeightBundle::random(config, seed)?);
    Session::with_config(config, bundle)
}

/// Warmed session pinned to a single tactic for every layer.
pub fn pinned_session(config: &ModelConfig, tactic: Tactic, seed: u64) -> Result<Session> {
    let mut s = session(config, seed)?;
    s.warmup_with(tactic)?;
    Ok(s)
}

/// Input tensor and scalars sized for `config`.
pub fn raw_input(config: &ModelConfig, seed: u64) -> (Vec<f16>, [f32; N_SCALARS]) {
    let len = config.input.iq_len();
    let mut x = seed | 1;
    let iq = (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            f16::from_f32((x >> 40) as f32 / (1u64 << 23) as f32 - 1.0)
        })
        .collect();
    (iq, [1.0, -80.0, 10.0, 12.0, 0.0, 1.0, 4.0])
}

/// First synthetic slot of the default sweep.
pub fn simulated_slot(seed: u64) -> Result<SimulatedSlot> {
    Sweep::default().simulate(seed, 0)
}
