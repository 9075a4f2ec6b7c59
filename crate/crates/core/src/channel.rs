//! Propagation and impairments: frequency-domain TDL fading with Doppler,
//! burst-masked in-band interference, and AWGN at a target SNR/SIR.

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::{Complex32, Complex64};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{
    self, Allocation, McsEntry, SlotGrid, RES_PER_SLOT, SUBCARRIERS, SUBCARRIER_SPACING_HZ,
    SYMBOLS_PER_SLOT, SYMBOL_DURATION_S,
};
use crate::rng;

pub const MAX_INTERFERERS: u8 = 5;
pub const INTERFERER_DELAY_SPREAD_S: f64 = 300e-9;
pub const INTERFERER_DOPPLER_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay_s: f64,
    pub power_db: f64,
}

/// Tapped delay line. Tap powers are normalized to 0 dB total and taps are
/// sorted by delay.
#[derive(Debug, Clone, PartialEq)]
pub struct TdlProfile {
    pub name: String,
    taps: Vec<Tap>,
    pub doppler_hz: f64,
}

impl TdlProfile {
    pub fn new(name: impl Into<String>, mut taps: Vec<Tap>, doppler_hz: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Config("TDL profile needs at least one tap".into()));
        }
        if taps
            .iter()
            .any(|t| !(t.delay_s >= 0.0) || !t.power_db.is_finite())
        {
            return Err(Error::Config(
                "TDL taps need finite power and delay >= 0".into(),
            ));
        }
        if !(doppler_hz >= 0.0) || !doppler_hz.is_finite() {
            return Err(Error::Config(format!("invalid Doppler {doppler_hz}")));
        }
        taps.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
        let total: f64 = taps.iter().map(|t| db_to_lin(t.power_db)).sum();
        let offset = 10.0 * total.log10();
        for t in &mut taps {
            t.power_db -= offset;
        }
        Ok(Self {
            name: name.into(),
            taps,
            doppler_hz,
        })
    }

    /// Single tap at zero delay.
    pub fn flat(doppler_hz: f64) -> Self {
        Self::new(
            "flat",
            vec![Tap {
                delay_s: 0.0,
                power_db: 0.0,
            }],
            doppler_hz,
        )
        .expect("valid flat profile")
    }

    /// Exponentially decaying power-delay profile scaled to the requested
    /// RMS delay spread.
    pub fn exponential(
        name: impl Into<String>,
        n_taps: usize,
        rms_delay_spread_s: f64,
        doppler_hz: f64,
    ) -> Result<Self> {
        if n_taps < 2 || !(rms_delay_spread_s > 0.0) {
            return Err(Error::Config(
                "exponential profile needs >= 2 taps and positive delay spread".into(),
            ));
        }
        let decay = n_taps as f64 / 3.0;
        let raw: Vec<(f64, f64)> = (0..n_taps)
            .map(|i| (i as f64, (-(i as f64) / decay).exp()))
            .collect();
        let unit = rms_spread(raw.iter().copied());
        let taps = raw
            .into_iter()
            .map(|(d, p)| Tap {
                delay_s: d * rms_delay_spread_s / unit,
                power_db: 10.0 * p.log10(),
            })
            .collect();
        Self::new(name, taps, doppler_hz)
    }

    /// Named presets: `flat`, `tdl-a-like` (30 ns), `tdl-b-like` (100 ns),
    /// `tdl-c-like` (300 ns).
    pub fn preset(name: &str, doppler_hz: f64) -> Result<Self> {
        match name {
            "flat" => Ok(Self::flat(doppler_hz)),
            "tdl-a-like" => Self::exponential(name, 6, 30e-9, doppler_hz),
            "tdl-b-like" => Self::exponential(name, 8, 100e-9, doppler_hz),
            "tdl-c-like" => Self::exponential(name, 12, 300e-9, doppler_hz),
            other => Err(Error::Config(format!("unknown TDL preset {other:?}"))),
        }
    }

    /// Default interferer channel: long delay spread and high Doppler.
    pub fn high_mobility() -> Self {
        Self::exponential(
            "interferer",
            12,
            INTERFERER_DELAY_SPREAD_S,
            INTERFERER_DOPPLER_HZ,
        )
        .expect("valid interferer profile")
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn rms_delay_spread_s(&self) -> f64 {
        rms_spread(self.taps.iter().map(|t| (t.delay_s, db_to_lin(t.power_db))))
    }
}

fn rms_spread(taps: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let p: f64 = taps.clone().map(|(_, p)| p).sum();
    let mean = taps.clone().map(|(d, w)| d * w).sum::<f64>() / p;
    let second = taps.map(|(d, w)| d * d * w).sum::<f64>() / p;
    (second - mean * mean).max(0.0).sqrt()
}

#[inline]
fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Time-frequency response H(symbol, subcarrier) of one TDL realization.
///
/// Each tap is a phasor with a random initial phase (the first tap is the
/// phase reference) rotated per OFDM symbol by its Doppler shift
/// `doppler_hz * cos(theta)`, theta uniform.
pub fn channel_response(profile: &TdlProfile, seed: u64) -> Vec<Complex32> {
    let mut rng = rng::stream(seed, rng::STREAM_CHANNEL);
    let mut h = vec![Complex64::new(0.0, 0.0); RES_PER_SLOT];
    let f0 = -(SUBCARRIERS as f64 / 2.0) * SUBCARRIER_SPACING_HZ;
    for (p, tap) in profile.taps.iter().enumerate() {
        let phase: f64 = if p == 0 {
            0.0
        } else {
            rng.gen::<f64>() * 2.0 * PI
        };
        let theta: f64 = rng.gen::<f64>() * 2.0 * PI;
        let fd = profile.doppler_hz * theta.cos();
        let amp = db_to_lin(tap.power_db).sqrt();
        let step = Complex64::from_polar(1.0, -2.0 * PI * SUBCARRIER_SPACING_HZ * tap.delay_s);
        for l in 0..SYMBOLS_PER_SLOT {
            let t = l as f64 * SYMBOL_DURATION_S;
            let mut ph =
                Complex64::from_polar(amp, phase + 2.0 * PI * fd * t - 2.0 * PI * f0 * tap.delay_s);
            for v in &mut h[l * SUBCARRIERS..(l + 1) * SUBCARRIERS] {
                *v += ph;
                ph *= step;
            }
        }
    }
    h.into_iter()
        .map(|v| Complex32::new(v.re as f32, v.im as f32))
        .collect()
}

/// Multiplies every RE by the channel frequency response.
pub fn apply_tdl(grid: &SlotGrid, profile: &TdlProfile, seed: u64) -> SlotGrid {
    let h = channel_response(profile, seed);
    let values = grid.values().iter().zip(&h).map(|(x, h)| x * h).collect();
    SlotGrid::from_values(values).expect("same dimensions")
}

/// Burst layout for one interferer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceMaskSpec {
    pub burst_count: usize,
    /// Share of the slot's REs covered by bursts, in (0, 1].
    pub active_fraction: f64,
    pub rng_seed: u64,
}

impl Default for InterferenceMaskSpec {
    fn default() -> Self {
        Self {
            burst_count: 3,
            active_fraction: 0.3,
            rng_seed: 0,
        }
    }
}

impl InterferenceMaskSpec {
    fn active_res(&self) -> Result<usize> {
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "mask active fraction must be in (0, 1], got {}",
                self.active_fraction
            )));
        }
        if self.burst_count == 0 {
            return Err(Error::Config("mask needs at least one burst".into()));
        }
        let active = ((self.active_fraction * RES_PER_SLOT as f64).round() as usize)
            .clamp(self.burst_count, RES_PER_SLOT);
        if RES_PER_SLOT - active < self.burst_count - 1 {
            return Err(Error::Config(format!(
                "{} bursts cannot be separated at active fraction {}",
                self.burst_count, self.active_fraction
            )));
        }
        Ok(active)
    }
}

/// On/off pattern over the slot's REs in mapping order (subcarrier first,
/// then symbol). Each burst is one contiguous run of active REs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BurstMask {
    active: Vec<bool>,
}

impl BurstMask {
    pub fn is_active(&self, symbol: usize, subcarrier: usize) -> bool {
        self.active[symbol * SUBCARRIERS + subcarrier]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Maximal runs of active REs.
    pub fn runs(&self) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &a) in self.active.iter().enumerate() {
            match (a, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push(s..self.active.len());
        }
        runs
    }
}

// Random composition of `total` into `parts` positive integers.
fn positive_composition<R: Rng + ?Sized>(rng: &mut R, total: usize, parts: usize) -> Vec<usize> {
    debug_assert!(parts >= 1 && total >= parts);
    let mut cuts: Vec<usize> = index::sample(rng, total - 1, parts - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

/// Draws the burst mask of interferer `stream` from the spec's seed.
pub fn draw_burst_mask(spec: &InterferenceMaskSpec, stream: u64) -> Result<BurstMask> {
    let active = spec.active_res()?;
    let bursts = spec.burst_count;
    let mut rng = rng::stream(spec.rng_seed, rng::STREAM_MASK + stream);

    let lengths = positive_composition(&mut rng, active, bursts);
    // bursts + 1 gaps: the outer two may be empty, inner ones hold >= 1 RE
    let spare = RES_PER_SLOT - active - (bursts - 1);
    let gaps: Vec<usize> = positive_composition(&mut rng, spare + bursts + 1, bursts + 1)
        .into_iter()
        .enumerate()
        .map(|(i, g)| g - 1 + usize::from(i > 0 && i < bursts))
        .collect();

    let mut mask = vec![false; RES_PER_SLOT];
    let mut pos = gaps[0];
    for (b, len) in lengths.into_iter().enumerate() {
        mask[pos..pos + len].iter_mut().for_each(|a| *a = true);
        pos += len + gaps[b + 1];
    }
    debug_assert_eq!(pos, RES_PER_SLOT);
    Ok(BurstMask { active: mask })
}

/// Zeroes REs outside the mask and rescales the survivors so the slot
/// average power is unchanged. Returns the amplitude scale applied.
pub fn apply_burst_mask(grid: &mut SlotGrid, mask: &BurstMask) -> Result<f64> {
    let before = grid.mean_power();
    for (v, &a) in grid.values_mut().iter_mut().zip(mask.as_slice()) {
        if !a {
            *v = Complex32::new(0.0, 0.0);
        }
    }
    let after = grid.mean_power();
    if after <= 0.0 {
        return Err(Error::Config("mask removed all interference power".into()));
    }
    let scale = (before / after).sqrt();
    let s = scale as f32;
    grid.values_mut().iter_mut().for_each(|v| *v *= s);
    Ok(scale)
}

/// Composite in-band interference from `n_interferers` UEs: each sends a
/// full-band QAM grid through `profile`, is burst-masked with power
/// preserved, and the sum is normalized to unit slot-average power.
pub fn generate_interference(
    n_interferers: u8,
    spec: &InterferenceMaskSpec,
    profile: &TdlProfile,
    seed: u64,
) -> Result<SlotGrid> {
    if n_interferers == 0 || n_interferers > MAX_INTERFERERS {
        return Err(Error::Config(format!(
            "interferer count must be in 1..={MAX_INTERFERERS}, got {n_interferers}"
        )));
    }
    spec.active_res()?;
    let mut sum = vec![Complex32::new(0.0, 0.0); RES_PER_SLOT];
    for i in 0..n_interferers as u64 {
        let ue_seed = rng::child_seed(seed, i);
        let mut ue_rng = rng::stream(ue_seed, rng::STREAM_INTERFERER);
        let order = [2u32, 4, 6][ue_rng.gen_range(0..3)];
        let bits: Vec<u8> = (0..RES_PER_SLOT * order as usize)
            .map(|_| ue_rng.gen::<bool>() as u8)
            .collect();
        let tx = SlotGrid::from_values(grid::qam_modulate(&bits, order)?)?;
        let mut rx = apply_tdl(&tx, profile, ue_seed);
        let mask = draw_burst_mask(spec, i)?;
        apply_burst_mask(&mut rx, &mask)?;
        for (acc, v) in sum.iter_mut().zip(rx.values()) {
            *acc += v;
        }
    }
    let mut out = SlotGrid::from_values(sum)?;
    let p = out.mean_power();
    if p <= 0.0 {
        return Err(Error::Config("interference has no power".into()));
    }
    let s = (1.0 / p).sqrt() as f32;
    out.values_mut().iter_mut().for_each(|v| *v *= s);
    Ok(out)
}

/// Parameters of one simulated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// `f64::INFINITY` disables thermal noise.
    pub snr_db: f64,
    /// `f64::INFINITY` disables interference regardless of `n_interferers`.
    pub sir_db: f64,
    pub mcs: McsEntry,
    pub allocation: Allocation,
    pub delay_profile: TdlProfile,
    pub interf_delay_profile: TdlProfile,
    pub n_interferers: u8,
    pub mask: InterferenceMaskSpec,
    /// Metadata only; the grid is fixed at 30 kHz spacing.
    pub numerology: u8,
    pub carrier_ghz: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            sir_db: 5.0,
            mcs: McsEntry::lookup(10, 0).expect("valid MCS"),
            allocation: Allocation::full(),
            delay_profile: TdlProfile::preset("tdl-b-like", 10.0).expect("valid preset"),
            interf_delay_profile: TdlProfile::high_mobility(),
            n_interferers: 0,
            mask: InterferenceMaskSpec::default(),
            numerology: 1,
            carrier_ghz: 3.6,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.mcs.validate()?;
        self.allocation.validate()?;
        if self.n_interferers > MAX_INTERFERERS {
            return Err(Error::Config(format!(
                "at most {MAX_INTERFERERS} interferers, got {}",
                self.n_interferers
            )));
        }
        if self.snr_db.is_nan() || self.sir_db.is_nan() {
            return Err(Error::Config("SNR/SIR must not be NaN".into()));
        }
        if self.n_interferers > 0 {
            self.mask.active_res()?;
        }
        Ok(())
    }
}

/// True per-RE component powers at the receiver. Signal power is averaged
/// over the REs the signal occupies; interference and noise over the slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeniePowers {
    pub signal: f64,
    pub interference: f64,
    pub noise: f64,
}

impl GeniePowers {
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.signal / self.noise).log10()
    }

    pub fn sir_db(&self) -> f64 {
        10.0 * (self.signal / self.interference).log10()
    }

    /// +inf when neither noise nor interference is present.
    pub fn sinr_db(&self) -> f64 {
        10.0 * (self.signal / (self.noise + self.interference)).log10()
    }
}

#[derive(Debug, Clone)]
pub struct RxSlot {
    pub grid: SlotGrid,
    pub genie: GeniePowers,
}

/// signal + sqrt(P_s 10^(-SIR/10)) * interference + CN(0, P_s 10^(-SNR/10)),
/// where P_s is the measured signal power. Interference is expected at unit
/// slot-average power.
pub fn combine_at_receiver(
    signal: &SlotGrid,
    interference: Option<&SlotGrid>,
    snr_db: f64,
    sir_db: f64,
    seed: u64,
) -> RxSlot {
    let p_sig = signal.occupied_power();
    let mut out: Vec<Complex32> = signal.values().to_vec();
    let mut p_int = 0.0;

    if let Some(intf) = interference.filter(|_| sir_db.is_finite()) {
        let measured = intf.mean_power();
        if measured > 0.0 {
            let a = (p_sig * 10f64.powf(-sir_db / 10.0) / measured).sqrt();
            let af = a as f32;
            for (o, i) in out.iter_mut().zip(intf.values()) {
                *o += i * af;
            }
            p_int = a * a * measured;
        }
    }

    let mut p_noise = 0.0;
    if snr_db.is_finite() {
        let var = p_sig * 10f64.powf(-snr_db / 10.0);
        let normal = Normal::new(0.0, (var / 2.0).sqrt()).expect("finite variance");
        let mut rng = rng::stream(seed, rng::STREAM_NOISE);
        let mut acc = 0.0;
        for o in out.iter_mut() {
            let n = Complex32::new(
                normal.sample(&mut rng) as f32,
                normal.sample(&mut rng) as f32,
            );
            acc += n.norm_sqr() as f64;
            *o += n;
        }
        p_noise = acc / RES_PER_SLOT as f64;
    }

    RxSlot {
        grid: SlotGrid::from_values(out).expect("same dimensions"),
        genie: GeniePowers {
            signal: p_sig,
            interference: p_int,
            noise: p_noise,
        },
    }
}
