//! Scalar KPMs and the fixed-size inference record.
//!
//! Payload layout (little-endian, 183,484 bytes):
//!
//! | offset  | size    | field                                          |
//! |---------|---------|------------------------------------------------|
//! | 0       | 183,456 | IQ, f16, (symbol, subcarrier, re/im) order     |
//! | 183,456 | 4       | RSSI dB, f32                                   |
//! | 183,460 | 4       | RSRP dB, f32                                   |
//! | 183,464 | 4       | SINR dB, f32                                   |
//! | 183,468 | 4       | MCS index, i32                                 |
//! | 183,472 | 4       | MCS table, i32                                 |
//! | 183,476 | 4       | errored CBs, i32                               |
//! | 183,480 | 4       | total CBs, i32                                 |
//!
//! On disk each payload is preceded by a 16-byte envelope: slot index
//! (u64), scenario id (u32), label code (u8), interferer count (u8), and
//! two reserved zero bytes.

use half::f16;
use num_complex::Complex32;

use crate::channel::RxSlot;
use crate::error::{Error, Result};
use crate::grid::{
    self, Allocation, McsEntry, SlotGrid, DMRS_SYMBOL, SUBCARRIERS, SYMBOLS_PER_SLOT,
};
use crate::labeling::Label;

pub const IQ_COMPONENTS: usize = 2;
pub const IQ_LEN: usize = SYMBOLS_PER_SLOT * SUBCARRIERS * IQ_COMPONENTS;
pub const IQ_BYTES: usize = IQ_LEN * 2;
pub const N_SCALARS: usize = 7;
pub const SCALAR_BYTES: usize = N_SCALARS * 4;
pub const PAYLOAD_BYTES: usize = IQ_BYTES + SCALAR_BYTES;
pub const ENVELOPE_BYTES: usize = 16;
pub const RECORD_BYTES: usize = ENVELOPE_BYTES + PAYLOAD_BYTES;

pub const DB_FLOOR: f32 = -140.0;
pub const DB_CEIL: f32 = 60.0;

pub const CB_BYTES_BG2: u32 = 480;
pub const CB_BYTES_BG1: u32 = 1056;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseGraph {
    Bg1,
    Bg2,
}

/// Code block count and LDPC base graph for a transport block.
pub fn segment_tb(tb_bytes: i64) -> Result<(u32, BaseGraph)> {
    if tb_bytes <= 0 {
        return Err(Error::InvalidTbSize(tb_bytes));
    }
    let tb = tb_bytes as u64;
    Ok(if tb <= CB_BYTES_BG2 as u64 {
        (1, BaseGraph::Bg2)
    } else if tb <= CB_BYTES_BG1 as u64 {
        (1, BaseGraph::Bg1)
    } else {
        (tb.div_ceil(CB_BYTES_BG1 as u64) as u32, BaseGraph::Bg1)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarFeatures {
    pub rssi_db: f32,
    pub rsrp_db: f32,
    pub sinr_db: f32,
    pub mcs_index: i32,
    pub mcs_table: i32,
    pub cb_err_count: i32,
    pub cb_total_count: i32,
}

impl ScalarFeatures {
    /// Model input order, matching the wire order.
    pub fn as_array(&self) -> [f32; N_SCALARS] {
        [
            self.rssi_db,
            self.rsrp_db,
            self.sinr_db,
            self.mcs_index as f32,
            self.mcs_table as f32,
            self.cb_err_count as f32,
            self.cb_total_count as f32,
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.cb_total_count < 1
            || self.cb_err_count < 0
            || self.cb_err_count > self.cb_total_count
        {
            return Err(Error::Config(format!(
                "CB counts out of range: {} errored of {}",
                self.cb_err_count, self.cb_total_count
            )));
        }
        Ok(())
    }
}

fn clamp_db(db: f64) -> f32 {
    if db.is_nan() {
        DB_FLOOR
    } else {
        (db as f32).clamp(DB_FLOOR, DB_CEIL)
    }
}

fn power_db(p: f64) -> f32 {
    if p <= 0.0 {
        DB_FLOOR
    } else {
        clamp_db(10.0 * p.log10())
    }
}

/// RSSI over the whole slot, RSRP over the allocated DMRS REs, genie SINR,
/// and the CB counts.
pub fn compute_kpms(
    rx: &RxSlot,
    allocation: &Allocation,
    mcs: &McsEntry,
    tb_bytes: u32,
    cb_err_count: u32,
) -> Result<ScalarFeatures> {
    let (cb_total, _) = segment_tb(tb_bytes as i64)?;
    if cb_err_count > cb_total {
        return Err(Error::Config(format!(
            "{cb_err_count} errored CBs exceed {cb_total} total"
        )));
    }
    let rssi = power_db(rx.grid.mean_power());
    let rsrp = power_db(grid::mean_power(
        &rx.grid.symbol(DMRS_SYMBOL)[allocation.subcarriers()],
    ));
    Ok(ScalarFeatures {
        rssi_db: rssi,
        rsrp_db: rsrp,
        sinr_db: clamp_db(rx.genie.sinr_db()),
        mcs_index: mcs.index as i32,
        mcs_table: mcs.table as i32,
        cb_err_count: cb_err_count as i32,
        cb_total_count: cb_total as i32,
    })
}

/// RE index ranges (into the data-RE mapping order) of each code block.
pub fn cb_spans(allocation: &Allocation, cb_count: u32) -> Vec<std::ops::Range<usize>> {
    let n = allocation.data_res();
    let c = cb_count as usize;
    (0..c).map(|i| i * n / c..(i + 1) * n / c).collect()
}

/// Per-CB error flags from uncoded hard decisions after a least-squares
/// channel estimate on the DMRS symbol.
pub fn cb_error_flags(
    rx: &SlotGrid,
    tx_bits: &[u8],
    mcs: &McsEntry,
    allocation: &Allocation,
    cb_count: u32,
) -> Result<Vec<bool>> {
    if cb_count == 0 {
        return Err(Error::InvalidCbCount(0));
    }
    let order = mcs.modulation_order;
    if tx_bits.len() != allocation.data_res() * order as usize {
        return Err(Error::Config(format!(
            "{} tx bits do not fill {} data REs at order {order}",
            tx_bits.len(),
            allocation.data_res()
        )));
    }
    let band = allocation.subcarriers();
    let dmrs = grid::dmrs_sequence();
    let h: Vec<Complex32> = band
        .clone()
        .map(|k| rx.at(DMRS_SYMBOL, k) * dmrs[k].conj())
        .collect();
    let equalized: Vec<Complex32> = grid::data_symbols()
        .flat_map(|l| {
            let row = &rx.symbol(l)[band.clone()];
            row.iter().zip(&h).map(|(y, h)| {
                let g = h.norm_sqr();
                if g > 0.0 {
                    y * h.conj() / g
                } else {
                    Complex32::new(0.0, 0.0)
                }
            })
        })
        .collect();

    let q = order as usize;
    let mut bits = Vec::with_capacity(tx_bits.len() / cb_count as usize + q);
    cb_spans(allocation, cb_count)
        .into_iter()
        .map(|span| {
            bits.clear();
            grid::qam_demodulate_hard(&equalized[span.clone()], order, &mut bits)?;
            Ok(bits[..] != tx_bits[span.start * q..span.end * q])
        })
        .collect()
}

pub fn count_cb_errors(
    rx: &SlotGrid,
    tx_bits: &[u8],
    mcs: &McsEntry,
    allocation: &Allocation,
    cb_count: u32,
) -> Result<u32> {
    Ok(cb_error_flags(rx, tx_bits, mcs, allocation, cb_count)?
        .into_iter()
        .filter(|&e| e)
        .count() as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Envelope {
    pub slot_index: u64,
    pub scenario_id: u32,
    pub label: Label,
    pub n_interferers: u8,
}

impl Default for Envelope {
    fn default() -> Self {
        Self {
            slot_index: 0,
            scenario_id: 0,
            label: Label::Clean,
            n_interferers: 0,
        }
    }
}

/// One inference input plus its envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    /// `IQ_LEN` values in (symbol, subcarrier, component) order.
    pub iq: Vec<f16>,
    pub scalars: ScalarFeatures,
    pub envelope: Envelope,
}

/// Converts a received grid to the record layout. Rejects non-finite
/// samples, including values that overflow f16.
pub fn assemble_record(
    rx: &SlotGrid,
    scalars: ScalarFeatures,
    envelope: Envelope,
) -> Result<FeatureRecord> {
    scalars.validate()?;
    let mut iq = Vec::with_capacity(IQ_LEN);
    for (i, v) in rx.values().iter().enumerate() {
        let re = f16::from_f32(v.re);
        let im = f16::from_f32(v.im);
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::NonFiniteIq {
                symbol: i / SUBCARRIERS,
                subcarrier: i % SUBCARRIERS,
            });
        }
        iq.push(re);
        iq.push(im);
    }
    Ok(FeatureRecord {
        iq,
        scalars,
        envelope,
    })
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Truncated(format!(
            "{what}: need {n} bytes, have {}",
            bytes.len()
        )));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take4(bytes: &mut &[u8], what: &str) -> Result<[u8; 4]> {
    Ok(take(bytes, 4, what)?.try_into().expect("4 bytes"))
}

impl FeatureRecord {
    /// Appends the 183,484-byte payload.
    pub fn encode_payload_into(&self, out: &mut Vec<u8>) {
        debug_assert_eq!(self.iq.len(), IQ_LEN);
        out.reserve(PAYLOAD_BYTES);
        for v in &self.iq {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        let s = &self.scalars;
        out.extend_from_slice(&s.rssi_db.to_le_bytes());
        out.extend_from_slice(&s.rsrp_db.to_le_bytes());
        out.extend_from_slice(&s.sinr_db.to_le_bytes());
        for v in [s.mcs_index, s.mcs_table, s.cb_err_count, s.cb_total_count] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PAYLOAD_BYTES);
        self.encode_payload_into(&mut out);
        out
    }

    /// Appends envelope and payload (`RECORD_BYTES`).
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let e = &self.envelope;
        out.reserve(RECORD_BYTES);
        out.extend_from_slice(&e.slot_index.to_le_bytes());
        out.extend_from_slice(&e.scenario_id.to_le_bytes());
        out.push(e.label.code());
        out.push(e.n_interferers);
        out.extend_from_slice(&[0, 0]);
        self.encode_payload_into(out);
    }

    pub fn decode_payload(mut bytes: &[u8], envelope: Envelope) -> Result<Self> {
        if bytes.len() != PAYLOAD_BYTES {
            return Err(Error::Truncated(format!(
                "payload is {} bytes, expected {PAYLOAD_BYTES}",
                bytes.len()
            )));
        }
        let iq_bytes = take(&mut bytes, IQ_BYTES, "iq")?;
        let iq = iq_bytes
            .chunks_exact(2)
            .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
            .collect();
        let f = |b: &mut &[u8], w| take4(b, w).map(f32::from_le_bytes);
        let i = |b: &mut &[u8], w| take4(b, w).map(i32::from_le_bytes);
        let scalars = ScalarFeatures {
            rssi_db: f(&mut bytes, "rssi")?,
            rsrp_db: f(&mut bytes, "rsrp")?,
            sinr_db: f(&mut bytes, "sinr")?,
            mcs_index: i(&mut bytes, "mcs index")?,
            mcs_table: i(&mut bytes, "mcs table")?,
            cb_err_count: i(&mut bytes, "cb errors")?,
            cb_total_count: i(&mut bytes, "cb total")?,
        };
        Ok(Self {
            iq,
            scalars,
            envelope,
        })
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Self> {
        if bytes.len() != RECORD_BYTES {
            return Err(Error::Truncated(format!(
                "record is {} bytes, expected {RECORD_BYTES}",
                bytes.len()
            )));
        }
        let slot_index = u64::from_le_bytes(take(&mut bytes, 8, "slot index")?.try_into().unwrap());
        let scenario_id = u32::from_le_bytes(take4(&mut bytes, "scenario id")?);
        let tail = take(&mut bytes, 4, "envelope")?;
        let label = Label::from_code(tail[0])
            .ok_or_else(|| Error::Config(format!("unknown label code {}", tail[0])))?;
        let envelope = Envelope {
            slot_index,
            scenario_id,
            label,
            n_interferers: tail[1],
        };
        Self::decode_payload(bytes, envelope)
    }

    pub fn iq_at(&self, symbol: usize, subcarrier: usize) -> (f16, f16) {
        let i = (symbol * SUBCARRIERS + subcarrier) * 2;
        (self.iq[i], self.iq[i + 1])
    }
}
