#![allow(dead_code)]

pub mod oracle;

use half::f16;
use ifdet_core::features::{Envelope, FeatureRecord, ScalarFeatures, IQ_LEN};
use ifdet_core::model::{ModelConfig, WeightBundle};
use ifdet_core::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_iq<R: Rng>(r: &mut R, len: usize) -> Vec<f16> {
    (0..len)
        .map(|_| f16::from_f32(r.gen_range(-2.0..2.0)))
        .collect()
}

pub fn random_scalars<R: Rng>(r: &mut R) -> ScalarFeatures {
    let total = r.gen_range(1..9);
    ScalarFeatures {
        rssi_db: r.gen_range(-140.0..60.0),
        rsrp_db: r.gen_range(-140.0..60.0),
        sinr_db: r.gen_range(-140.0..60.0),
        mcs_index: r.gen_range(0..28),
        mcs_table: r.gen_range(0..2),
        cb_err_count: r.gen_range(0..=total),
        cb_total_count: total,
    }
}

pub fn random_record<R: Rng>(r: &mut R) -> FeatureRecord {
    FeatureRecord {
        iq: random_iq(r, IQ_LEN),
        scalars: random_scalars(r),
        envelope: Envelope {
            slot_index: r.gen(),
            scenario_id: r.gen(),
            label: Label::from_code(r.gen_range(0..3)).unwrap(),
            n_interferers: r.gen_range(0..6),
        },
    }
}

/// Random weights plus non-trivial normalization statistics.
pub fn random_bundle(config: &ModelConfig, seed: u64) -> WeightBundle {
    let mut b = WeightBundle::random(config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for j in 0..b.scalar_mean.len() {
        b.scalar_mean[j] = r.gen_range(-20.0..20.0);
        b.scalar_std[j] = r.gen_range(0.5..30.0);
    }
    for t in &mut b.tensors {
        if t.name.ends_with(".bias") {
            t.data.iter_mut().for_each(|v| *v = r.gen_range(-0.1..0.1));
        }
    }
    b
}

/// Record with arbitrary bit patterns in every field (NaNs included);
/// only meaningful for byte-level codec checks.
pub fn fuzz_record(seed: u64) -> FeatureRecord {
    let mut r = rng(seed);
    let f = |r: &mut ChaCha8Rng| f32::from_bits(r.gen());
    FeatureRecord {
        iq: (0..IQ_LEN).map(|_| f16::from_bits(r.gen())).collect(),
        scalars: ScalarFeatures {
            rssi_db: f(&mut r),
            rsrp_db: f(&mut r),
            sinr_db: f(&mut r),
            mcs_index: r.gen(),
            mcs_table: r.gen(),
            cb_err_count: r.gen(),
            cb_total_count: r.gen(),
        },
        envelope: Envelope {
            slot_index: r.gen(),
            scenario_id: r.gen(),
            label: Label::from_code(r.gen_range(0..3)).unwrap(),
            n_interferers: r.gen(),
        },
    }
}

pub fn encoded(record: &FeatureRecord) -> Vec<u8> {
    let mut v = Vec::new();
    record.encode_into(&mut v);
    v
}
