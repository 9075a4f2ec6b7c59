//! End-to-end synthesis of labeled slots: transmit grid, fading,
//! interference, receiver combining, CB errors, KPMs, record.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{
    apply_tdl, combine_at_receiver, generate_interference, GeniePowers, InterferenceMaskSpec,
    ScenarioConfig, TdlProfile,
};
use crate::error::{Error, Result};
use crate::features::{
    assemble_record, cb_error_flags, compute_kpms, segment_tb, Envelope, FeatureRecord,
};
use crate::grid::{generate_tx_slot, McsEntry, TrafficProfile};
use crate::labeling::Label;
use crate::rng;

#[derive(Debug, Clone)]
pub struct SimulatedSlot {
    pub record: FeatureRecord,
    pub genie: GeniePowers,
    pub tb_bytes: u32,
    pub cb_errors: Vec<bool>,
}

/// Ground truth for a synthetic slot: interference present at finite SIR.
pub fn synthetic_label(scenario: &ScenarioConfig) -> Label {
    if scenario.n_interferers > 0 && scenario.sir_db.is_finite() {
        Label::Interf
    } else {
        Label::Clean
    }
}

/// Simulates slot `slot_index` of `scenario`. All randomness derives from
/// `(scenario.seed, slot_index)`.
pub fn simulate_slot(
    scenario: &ScenarioConfig,
    traffic: &TrafficProfile,
    slot_index: u64,
    scenario_id: u32,
) -> Result<SimulatedSlot> {
    scenario.validate()?;
    let seed = rng::child_seed(scenario.seed, slot_index);
    let tx = generate_tx_slot(scenario, traffic, seed)?;
    let faded = apply_tdl(
        &tx.grid,
        &scenario.delay_profile,
        rng::child_seed(seed, rng::STREAM_CHANNEL),
    );
    let label = synthetic_label(scenario);
    let interference = match label {
        Label::Interf => {
            let mut spec = scenario.mask;
            spec.rng_seed = rng::child_seed(seed, rng::STREAM_MASK);
            Some(generate_interference(
                scenario.n_interferers,
                &spec,
                &scenario.interf_delay_profile,
                rng::child_seed(seed, rng::STREAM_INTERFERER),
            )?)
        }
        _ => None,
    };
    let rx = combine_at_receiver(
        &faded,
        interference.as_ref(),
        scenario.snr_db,
        scenario.sir_db,
        seed,
    );
    let (cb_total, _) = segment_tb(tx.tb_bytes as i64)?;
    let cb_errors = cb_error_flags(
        &rx.grid,
        &tx.tx_bits,
        &scenario.mcs,
        &tx.allocation,
        cb_total,
    )?;
    let n_err = cb_errors.iter().filter(|&&e| e).count() as u32;
    let scalars = compute_kpms(&rx, &tx.allocation, &scenario.mcs, tx.tb_bytes, n_err)?;
    let envelope = Envelope {
        slot_index,
        scenario_id,
        label,
        n_interferers: if label == Label::Interf {
            scenario.n_interferers
        } else {
            0
        },
    };
    Ok(SimulatedSlot {
        record: assemble_record(&rx.grid, scalars, envelope)?,
        genie: rx.genie,
        tb_bytes: tx.tb_bytes,
        cb_errors,
    })
}

/// Parameter ranges for a synthetic sweep. Each slot draws its own
/// scenario: SNR and SIR uniform in their ranges, the other fields
/// uniformly from their lists.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub snr_db: (f64, f64),
    pub sir_db: (f64, f64),
    pub mcs_table: u8,
    pub mcs_indices: Vec<u8>,
    /// 0 yields a clean slot.
    pub n_interferers: Vec<u8>,
    pub delay_profiles: Vec<TdlProfile>,
    pub interf_delay_profile: TdlProfile,
    pub burst_counts: Vec<usize>,
    pub active_fraction: (f64, f64),
    pub traffic: Vec<TrafficProfile>,
    pub base: ScenarioConfig,
}

impl Default for Sweep {
    fn default() -> Self {
        let base = ScenarioConfig::default();
        Self {
            snr_db: (10.0, 30.0),
            sir_db: (0.0, 10.0),
            mcs_table: 0,
            mcs_indices: (0..=27).collect(),
            n_interferers: vec![0, 1],
            delay_profiles: ["tdl-a-like", "tdl-b-like", "tdl-c-like"]
                .iter()
                .map(|n| TdlProfile::preset(n, 10.0).expect("preset"))
                .collect(),
            interf_delay_profile: TdlProfile::high_mobility(),
            burst_counts: vec![1, 2, 3, 4],
            active_fraction: (0.2, 0.6),
            traffic: vec![TrafficProfile::no_traffic()],
            base,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(Error::Config(format!("{name}: invalid range [{lo}, {hi}]")));
    }
    Ok(())
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

impl Sweep {
    pub fn validate(&self) -> Result<()> {
        check_range("snr_db", self.snr_db)?;
        check_range("sir_db", self.sir_db)?;
        check_range("active_fraction", self.active_fraction)?;
        for (name, empty) in [
            ("mcs_indices", self.mcs_indices.is_empty()),
            ("n_interferers", self.n_interferers.is_empty()),
            ("delay_profiles", self.delay_profiles.is_empty()),
            ("burst_counts", self.burst_counts.is_empty()),
            ("traffic", self.traffic.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
        }
        for &i in &self.mcs_indices {
            McsEntry::lookup(i, self.mcs_table)?;
        }
        Ok(())
    }

    /// Scenario and traffic for slot `index` of a sweep seeded with `seed`.
    pub fn scenario(&self, seed: u64, index: u64) -> Result<(ScenarioConfig, TrafficProfile)> {
        let mut r = rng::stream(rng::child_seed(seed, index), rng::STREAM_SCENARIO);
        let traffic = *self.traffic.choose(&mut r).expect("validated");
        let mcs = McsEntry::lookup(
            *self.mcs_indices.choose(&mut r).expect("validated"),
            self.mcs_table,
        )?;
        let sc = ScenarioConfig {
            snr_db: uniform(&mut r, self.snr_db),
            sir_db: uniform(&mut r, self.sir_db),
            mcs,
            delay_profile: self
                .delay_profiles
                .choose(&mut r)
                .expect("validated")
                .clone(),
            interf_delay_profile: self.interf_delay_profile.clone(),
            n_interferers: *self.n_interferers.choose(&mut r).expect("validated"),
            mask: InterferenceMaskSpec {
                burst_count: *self.burst_counts.choose(&mut r).expect("validated"),
                active_fraction: uniform(&mut r, self.active_fraction),
                rng_seed: 0,
            },
            seed: r.gen(),
            ..self.base.clone()
        };
        sc.validate()?;
        Ok((sc, traffic))
    }

    /// Slot `index` of the sweep.
    pub fn simulate(&self, seed: u64, index: u64) -> Result<SimulatedSlot> {
        let (sc, traffic) = self.scenario(seed, index)?;
        simulate_slot(&sc, &traffic, index, index as u32)
    }
}
