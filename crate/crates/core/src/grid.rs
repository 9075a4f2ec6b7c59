//! Transmit-side PUSCH resource grid for one uplink slot.
//!
//! The grid is modeled in the frequency domain only: 14 OFDM symbols by
//! 273 PRBs x 12 subcarriers, 30 kHz subcarrier spacing. A single DMRS
//! symbol sits at index [`DMRS_SYMBOL`]; every other symbol of the
//! allocated PRBs carries Gray-mapped QAM data.

use std::sync::OnceLock;

use num_complex::Complex32;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::channel::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng;

pub const SYMBOLS_PER_SLOT: usize = 14;
pub const MAX_PRBS: usize = 273;
pub const SUBCARRIERS_PER_PRB: usize = 12;
pub const SUBCARRIERS: usize = MAX_PRBS * SUBCARRIERS_PER_PRB;
pub const RES_PER_SLOT: usize = SYMBOLS_PER_SLOT * SUBCARRIERS;
pub const DMRS_SYMBOL: usize = 2;
pub const DMRS_SYMBOLS: usize = 1;
pub const SUBCARRIER_SPACING_HZ: f64 = 30e3;
pub const SLOT_DURATION_S: f64 = 500e-6;
pub const SYMBOL_DURATION_S: f64 = SLOT_DURATION_S / SYMBOLS_PER_SLOT as f64;

/// Complex amplitudes of one slot, symbol-major (`symbol * SUBCARRIERS + subcarrier`).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGrid {
    values: Vec<Complex32>,
}

impl Default for SlotGrid {
    fn default() -> Self {
        Self::zeros()
    }
}

impl SlotGrid {
    pub fn zeros() -> Self {
        Self {
            values: vec![Complex32::new(0.0, 0.0); RES_PER_SLOT],
        }
    }

    /// Wraps a symbol-major buffer; the length must be exactly one slot.
    pub fn from_values(values: Vec<Complex32>) -> Result<Self> {
        if values.len() != RES_PER_SLOT {
            return Err(Error::Config(format!(
                "slot grid needs {RES_PER_SLOT} REs, got {}",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    #[inline]
    pub fn at(&self, symbol: usize, subcarrier: usize) -> Complex32 {
        self.values[symbol * SUBCARRIERS + subcarrier]
    }

    #[inline]
    pub fn set(&mut self, symbol: usize, subcarrier: usize, value: Complex32) {
        self.values[symbol * SUBCARRIERS + subcarrier] = value;
    }

    pub fn symbol(&self, symbol: usize) -> &[Complex32] {
        &self.values[symbol * SUBCARRIERS..(symbol + 1) * SUBCARRIERS]
    }

    pub fn symbol_mut(&mut self, symbol: usize) -> &mut [Complex32] {
        &mut self.values[symbol * SUBCARRIERS..(symbol + 1) * SUBCARRIERS]
    }

    pub fn values(&self) -> &[Complex32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex32> {
        self.values
    }

    /// Mean |x|^2 over every RE of the slot.
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.values)
    }

    /// Mean |x|^2 over REs that are not exactly zero; 0 for an empty grid.
    pub fn occupied_power(&self) -> f64 {
        let (sum, n) = self
            .values
            .iter()
            .filter(|v| v.re != 0.0 || v.im != 0.0)
            .fold((0.0f64, 0usize), |(s, n), v| {
                (s + v.norm_sqr() as f64, n + 1)
            });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

pub(crate) fn mean_power(values: &[Complex32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.norm_sqr() as f64).sum::<f64>() / values.len() as f64
}

/// Contiguous PRB allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub start_prb: usize,
    pub n_prbs: usize,
}

impl Allocation {
    pub const fn full() -> Self {
        Self {
            start_prb: 0,
            n_prbs: MAX_PRBS,
        }
    }

    pub fn new(start_prb: usize, n_prbs: usize) -> Result<Self> {
        let a = Self { start_prb, n_prbs };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_prbs == 0 {
            return Err(Error::EmptyAllocation);
        }
        if self.start_prb + self.n_prbs > MAX_PRBS {
            return Err(Error::Config(format!(
                "allocation {}+{} exceeds {MAX_PRBS} PRBs",
                self.start_prb, self.n_prbs
            )));
        }
        Ok(())
    }

    /// Smallest allocation starting at PRB 0 whose data REs carry the TB at
    /// the MCS's nominal code rate.
    pub fn fit_tb(tb_bytes: u32, mcs: &McsEntry) -> Self {
        let bits_per_prb = (SUBCARRIERS_PER_PRB * (SYMBOLS_PER_SLOT - DMRS_SYMBOLS)) as f64
            * mcs.modulation_order as f64
            * mcs.code_rate as f64;
        let n = ((tb_bytes as f64 * 8.0) / bits_per_prb).ceil() as usize;
        Self {
            start_prb: 0,
            n_prbs: n.clamp(1, MAX_PRBS),
        }
    }

    pub fn subcarriers(&self) -> std::ops::Range<usize> {
        self.start_prb * SUBCARRIERS_PER_PRB..(self.start_prb + self.n_prbs) * SUBCARRIERS_PER_PRB
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_prbs * SUBCARRIERS_PER_PRB
    }

    /// Number of data REs (all symbols except the DMRS symbol).
    pub fn data_res(&self) -> usize {
        self.n_subcarriers() * (SYMBOLS_PER_SLOT - DMRS_SYMBOLS)
    }
}

/// Data-carrying symbol indices in mapping order.
pub fn data_symbols() -> impl Iterator<Item = usize> + Clone {
    (0..SYMBOLS_PER_SLOT).filter(|&l| l != DMRS_SYMBOL)
}

/// One row of an MCS table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McsEntry {
    pub index: u8,
    pub table: u8,
    pub modulation_order: u32,
    /// Nominal code rate; carried as metadata, no channel coding is applied.
    pub code_rate: f32,
}

// (Qm, rate x 1024) for indices 0..=27.
const MCS_TABLE_64QAM: [(u32, f32); 28] = [
    (2, 120.0),
    (2, 157.0),
    (2, 193.0),
    (2, 251.0),
    (2, 308.0),
    (2, 379.0),
    (2, 449.0),
    (2, 526.0),
    (2, 602.0),
    (2, 679.0),
    (4, 340.0),
    (4, 378.0),
    (4, 434.0),
    (4, 490.0),
    (4, 553.0),
    (4, 616.0),
    (4, 658.0),
    (6, 438.0),
    (6, 466.0),
    (6, 517.0),
    (6, 567.0),
    (6, 616.0),
    (6, 666.0),
    (6, 719.0),
    (6, 772.0),
    (6, 822.0),
    (6, 873.0),
    (6, 910.0),
];

const MCS_TABLE_256QAM: [(u32, f32); 28] = [
    (2, 120.0),
    (2, 193.0),
    (2, 308.0),
    (2, 449.0),
    (2, 602.0),
    (4, 378.0),
    (4, 434.0),
    (4, 490.0),
    (4, 553.0),
    (4, 616.0),
    (4, 658.0),
    (6, 466.0),
    (6, 517.0),
    (6, 567.0),
    (6, 616.0),
    (6, 666.0),
    (6, 719.0),
    (6, 772.0),
    (6, 822.0),
    (6, 873.0),
    (8, 682.5),
    (8, 711.0),
    (8, 754.0),
    (8, 797.0),
    (8, 841.0),
    (8, 885.0),
    (8, 916.5),
    (8, 948.0),
];

impl McsEntry {
    pub fn lookup(index: u8, table: u8) -> Result<Self> {
        let rows = match table {
            0 => &MCS_TABLE_64QAM,
            1 => &MCS_TABLE_256QAM,
            t => return Err(Error::Config(format!("unknown MCS table {t}"))),
        };
        let (qm, rate) = *rows
            .get(index as usize)
            .ok_or_else(|| Error::Config(format!("MCS index {index} outside table {table}")))?;
        Ok(Self {
            index,
            table,
            modulation_order: qm,
            code_rate: rate / 1024.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::lookup(self.index, self.table)?;
        if expected.modulation_order != self.modulation_order {
            return Err(Error::Config(format!(
                "MCS {}/{} has order {}, not {}",
                self.index, self.table, expected.modulation_order, self.modulation_order
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficKind {
    NoTraffic,
    HighTraffic,
}

/// Transport block size distribution for a traffic level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficProfile {
    pub kind: TrafficKind,
    /// Upper bound for high-traffic TBs.
    pub high_max_bytes: u32,
}

pub const NO_TRAFFIC_TB_MIN: u32 = 100;
pub const NO_TRAFFIC_TB_MAX: u32 = 1056;
pub const NO_TRAFFIC_TB_TYPICAL: f64 = 185.0;

impl TrafficProfile {
    pub const fn no_traffic() -> Self {
        Self {
            kind: TrafficKind::NoTraffic,
            high_max_bytes: 8 * 1056,
        }
    }

    pub const fn high_traffic() -> Self {
        Self {
            kind: TrafficKind::HighTraffic,
            high_max_bytes: 8 * 1056,
        }
    }

    pub fn sample_tb_bytes<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self.kind {
            TrafficKind::NoTraffic => {
                // median 185 B, long right tail, clipped to the single-CB range
                let d = LogNormal::new(NO_TRAFFIC_TB_TYPICAL.ln(), 0.35).expect("valid lognormal");
                let v: f64 = d.sample(rng);
                (v.round() as u32).clamp(NO_TRAFFIC_TB_MIN, NO_TRAFFIC_TB_MAX)
            }
            TrafficKind::HighTraffic => {
                let hi = self.high_max_bytes.max(NO_TRAFFIC_TB_MAX + 1);
                rng.gen_range(NO_TRAFFIC_TB_MAX + 1..=hi)
            }
        }
    }
}

/// Output of [`generate_tx_slot`].
#[derive(Debug, Clone)]
pub struct TxSlot {
    pub grid: SlotGrid,
    pub tb_bytes: u32,
    /// Data bits in RE mapping order (frequency first, then time).
    pub tx_bits: Vec<u8>,
    pub allocation: Allocation,
}

/// Builds the transmit grid: random data bits, QAM per the scenario MCS,
/// mapped onto the allocated PRBs of every non-DMRS symbol, DMRS on
/// [`DMRS_SYMBOL`]. Data REs are rescaled to unit empirical power.
pub fn generate_tx_slot(
    scenario: &ScenarioConfig,
    traffic: &TrafficProfile,
    seed: u64,
) -> Result<TxSlot> {
    scenario.mcs.validate()?;
    let allocation = scenario.allocation;
    allocation.validate()?;

    let mut tb_rng = rng::stream(seed, rng::STREAM_TB_SIZE);
    let tb_bytes = traffic.sample_tb_bytes(&mut tb_rng);

    let order = scenario.mcs.modulation_order;
    let mut bit_rng = rng::stream(seed, rng::STREAM_TX_BITS);
    let n_bits = allocation.data_res() * order as usize;
    let tx_bits: Vec<u8> = (0..n_bits).map(|_| bit_rng.gen::<bool>() as u8).collect();
    let mut symbols = qam_modulate(&tx_bits, order)?;

    let p = mean_power(&symbols);
    let scale = (1.0 / p).sqrt() as f32;
    symbols.iter_mut().for_each(|s| *s *= scale);

    let mut grid = SlotGrid::zeros();
    let band = allocation.subcarriers();
    let mut it = symbols.into_iter();
    for l in data_symbols() {
        let row = grid.symbol_mut(l);
        for v in &mut row[band.clone()] {
            *v = it.next().expect("symbol count matches allocation");
        }
    }
    let dmrs = dmrs_sequence();
    grid.symbol_mut(DMRS_SYMBOL)[band.clone()].copy_from_slice(&dmrs[band]);

    Ok(TxSlot {
        grid,
        tb_bytes,
        tx_bits,
        allocation,
    })
}

fn check_order(order: u32) -> Result<()> {
    match order {
        2 | 4 | 6 | 8 => Ok(()),
        o => Err(Error::UnsupportedOrder(o)),
    }
}

#[inline]
fn qam_norm(order: u32) -> f32 {
    let m = (1u32 << order) as f32;
    (2.0 * (m - 1.0) / 3.0).sqrt()
}

// Gray-coded PAM amplitude from the bits of one axis, most significant first.
#[inline]
fn pam_level(bits: &[u8]) -> f32 {
    let k = bits.len();
    let mut inner = 1.0f32;
    for (i, &b) in bits.iter().enumerate().skip(1).rev() {
        let weight = (1u32 << (k - i)) as f32;
        inner = weight - (1.0 - 2.0 * b as f32) * inner;
    }
    (1.0 - 2.0 * bits[0] as f32) * inner
}

/// Gray-mapped square QAM with unit average power (38.211-style bit order:
/// even bits drive I, odd bits drive Q).
pub fn qam_modulate(bits: &[u8], order: u32) -> Result<Vec<Complex32>> {
    check_order(order)?;
    let q = order as usize;
    if !bits.len().is_multiple_of(q) {
        return Err(Error::BitLength {
            bits: bits.len(),
            order,
        });
    }
    let norm = qam_norm(order);
    let half = q / 2;
    let mut ib = [0u8; 4];
    let mut qb = [0u8; 4];
    Ok(bits
        .chunks_exact(q)
        .map(|c| {
            for j in 0..half {
                ib[j] = c[2 * j];
                qb[j] = c[2 * j + 1];
            }
            Complex32::new(pam_level(&ib[..half]) / norm, pam_level(&qb[..half]) / norm)
        })
        .collect())
}

fn pam_decide(x: f32, k: usize, out: &mut [u8]) {
    out[0] = (x < 0.0) as u8;
    let mut y = x.abs();
    for (i, o) in out.iter_mut().enumerate().take(k).skip(1) {
        let t = (1u32 << (k - i)) as f32;
        *o = (y > t) as u8;
        y = (y - t).abs();
    }
}

/// Hard-decision inverse of [`qam_modulate`], appending bits to `out`.
pub fn qam_demodulate_hard(symbols: &[Complex32], order: u32, out: &mut Vec<u8>) -> Result<()> {
    check_order(order)?;
    let norm = qam_norm(order);
    let half = order as usize / 2;
    let mut ib = [0u8; 4];
    let mut qb = [0u8; 4];
    for s in symbols {
        pam_decide(s.re * norm, half, &mut ib);
        pam_decide(s.im * norm, half, &mut qb);
        for j in 0..half {
            out.push(ib[j]);
            out.push(qb[j]);
        }
    }
    Ok(())
}

/// Length-31 Gold sequence c(n) with the standard Nc = 1600 offset.
pub fn gold_sequence(c_init: u32, len: usize) -> Vec<u8> {
    const NC: usize = 1600;
    let total = NC + len + 31;
    let mut x1 = vec![0u8; total];
    let mut x2 = vec![0u8; total];
    x1[0] = 1;
    for (i, v) in x2.iter_mut().enumerate().take(31) {
        *v = ((c_init >> i) & 1) as u8;
    }
    for n in 0..total - 31 {
        x1[n + 31] = x1[n + 3] ^ x1[n];
        x2[n + 31] = x2[n + 3] ^ x2[n + 2] ^ x2[n + 1] ^ x2[n];
    }
    (0..len).map(|n| x1[n + NC] ^ x2[n + NC]).collect()
}

/// Known QPSK DMRS over the full carrier (slot 0, N_ID 0).
pub fn dmrs_sequence() -> &'static [Complex32] {
    static SEQ: OnceLock<Vec<Complex32>> = OnceLock::new();
    SEQ.get_or_init(|| {
        let l = DMRS_SYMBOL as u32;
        let n_id = 0u32;
        let c_init = ((1u64 << 17) * (l as u64 + 1) * (2 * n_id as u64 + 1) + 2 * n_id as u64)
            % (1u64 << 31);
        let c = gold_sequence(c_init as u32, 2 * SUBCARRIERS);
        let s = std::f32::consts::FRAC_1_SQRT_2;
        (0..SUBCARRIERS)
            .map(|k| {
                Complex32::new(
                    (1.0 - 2.0 * c[2 * k] as f32) * s,
                    (1.0 - 2.0 * c[2 * k + 1] as f32) * s,
                )
            })
            .collect()
    })
}
