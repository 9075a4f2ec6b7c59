//! Traffic-level classification and ground-truth labeling of paired gNB
//! uplink logs.

use crate::error::{Error, Result};

/// CB count above which a slot counts as high traffic.
pub const CB_COUNT_THRESHOLD: u32 = 1;
pub const DEFAULT_WINDOW_US: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrafficLevel {
    NoUe,
    NoTraffic,
    HighTraffic,
}

/// Per-record ground truth. Wire codes are stable: 0, 1, 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    Clean = 0,
    Interf = 1,
    Na = 2,
}

impl Label {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Clean),
            1 => Some(Self::Interf),
            2 => Some(Self::Na),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clean => "CLEAN",
            Self::Interf => "INTERF",
            Self::Na => "NA",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_traffic(cb_total_count: i64) -> Result<TrafficLevel> {
    if cb_total_count < 1 {
        return Err(Error::InvalidCbCount(cb_total_count));
    }
    Ok(if cb_total_count > CB_COUNT_THRESHOLD as i64 {
        TrafficLevel::HighTraffic
    } else {
        TrafficLevel::NoTraffic
    })
}

/// Label lookup for two gNBs observed over the same window.
pub fn label_pair(gnb1: TrafficLevel, gnb2: TrafficLevel) -> (Label, Label) {
    use Label::*;
    use TrafficLevel::*;
    match (gnb1, gnb2) {
        (HighTraffic, NoTraffic) => (Clean, Interf),
        (NoTraffic, HighTraffic) => (Interf, Clean),
        (HighTraffic, HighTraffic) => (Interf, Interf),
        (NoTraffic, NoTraffic) => (Clean, Clean),
        (NoUe, NoUe) => (Na, Na),
        (NoUe, _) => (Na, Clean),
        (_, NoUe) => (Clean, Na),
    }
}

/// A log entry on the common clock.
pub trait SlotLog {
    fn timestamp_us(&self) -> u64;
    fn cb_total_count(&self) -> u32;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogEntry {
    pub timestamp_us: u64,
    pub cb_total_count: u32,
}

impl SlotLog for LogEntry {
    fn timestamp_us(&self) -> u64 {
        self.timestamp_us
    }
    fn cb_total_count(&self) -> u32 {
        self.cb_total_count
    }
}

fn time_range<T: SlotLog>(log: &[T]) -> Option<(u64, u64)> {
    let min = log.iter().map(|e| e.timestamp_us()).min()?;
    let max = log.iter().map(|e| e.timestamp_us()).max()?;
    Some((min, max))
}

/// Labels every entry of two logs. Time is cut into `window_us` windows
/// starting at the earliest entry; a side's level in a window is the
/// highest level over its entries there (no entries: no UE). Returned
/// vectors are index-aligned with the inputs.
pub fn label_log_windows<A: SlotLog, B: SlotLog>(
    log1: &[A],
    log2: &[B],
    window_us: u64,
) -> Result<(Vec<Label>, Vec<Label>)> {
    if window_us == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let (Some((s1, e1)), Some((s2, e2))) = (time_range(log1), time_range(log2)) else {
        return Err(Error::DisjointLogs);
    };
    if s1 > e2 || s2 > e1 {
        return Err(Error::DisjointLogs);
    }
    let origin = s1.min(s2);
    let n_windows = ((e1.max(e2) - origin) / window_us + 1) as usize;

    let levels = |ts: &mut dyn Iterator<Item = (u64, u32)>| -> Result<Vec<TrafficLevel>> {
        let mut lv = vec![TrafficLevel::NoUe; n_windows];
        for (t, cbs) in ts {
            let w = ((t - origin) / window_us) as usize;
            lv[w] = lv[w].max(classify_traffic(cbs as i64)?);
        }
        Ok(lv)
    };
    let lv1 = levels(&mut log1.iter().map(|e| (e.timestamp_us(), e.cb_total_count())))?;
    let lv2 = levels(&mut log2.iter().map(|e| (e.timestamp_us(), e.cb_total_count())))?;
    let pairs: Vec<(Label, Label)> = lv1
        .iter()
        .zip(&lv2)
        .map(|(&a, &b)| label_pair(a, b))
        .collect();

    let window = |t: u64| ((t - origin) / window_us) as usize;
    let out1 = log1
        .iter()
        .map(|e| pairs[window(e.timestamp_us())].0)
        .collect();
    let out2 = log2
        .iter()
        .map(|e| pairs[window(e.timestamp_us())].1)
        .collect();
    Ok((out1, out2))
}
