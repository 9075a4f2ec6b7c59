//! `.ifr` record container.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                                  |
//! |-------:|-----:|----------------------------------------|
//! | 0      | 4    | magic `IFR1`                           |
//! | 4      | 4    | version (1)                            |
//! | 8      | 8    | record count                           |
//! | 16     | 12   | IQ dims: symbols, subcarriers, 2       |
//! | 28     | 4    | scalar count (7)                       |
//! | 32     | 4    | envelope size (16)                     |
//! | 36     | 4    | payload size (183,484)                 |
//! | 40     | ...  | records: envelope then payload         |
//!
//! The envelope is slot index (u64), scenario id (u32), label code (u8),
//! interferer count (u8) and two reserved zero bytes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::features::{
    FeatureRecord, ENVELOPE_BYTES, IQ_COMPONENTS, N_SCALARS, PAYLOAD_BYTES, RECORD_BYTES,
};
use crate::grid::{SUBCARRIERS, SYMBOLS_PER_SLOT};

pub const RECORD_MAGIC: [u8; 4] = *b"IFR1";
pub const RECORD_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 40;
pub const DEFAULT_SAMPLE_EVERY: u64 = 10;
pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
const COUNT_OFFSET: u64 = 8;

fn header_bytes(record_count: u64) -> [u8; HEADER_BYTES] {
    let mut h = [0u8; HEADER_BYTES];
    h[0..4].copy_from_slice(&RECORD_MAGIC);
    h[4..8].copy_from_slice(&RECORD_VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&record_count.to_le_bytes());
    let fields = [
        SYMBOLS_PER_SLOT as u32,
        SUBCARRIERS as u32,
        IQ_COMPONENTS as u32,
        N_SCALARS as u32,
        ENVELOPE_BYTES as u32,
        PAYLOAD_BYTES as u32,
    ];
    for (i, f) in fields.iter().enumerate() {
        h[16 + 4 * i..20 + 4 * i].copy_from_slice(&f.to_le_bytes());
    }
    h
}

/// Expected file size for `record_count` records.
pub fn file_size(record_count: u64) -> u64 {
    HEADER_BYTES as u64 + record_count * RECORD_BYTES as u64
}

/// Destination of encoded records.
pub trait RecordSink: Send + 'static {
    fn write_record(&mut self, bytes: &[u8]) -> io::Result<()>;
    /// Called once after the last record with the persisted count.
    fn finish(&mut self, record_count: u64) -> io::Result<()>;
}

/// Sink writing an `.ifr` file; the header count is patched on finish.
pub struct FileSink {
    out: BufWriter<File>,
}

impl FileSink {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = BufWriter::with_capacity(1 << 20, File::create(path)?);
        out.write_all(&header_bytes(0))?;
        Ok(Self { out })
    }
}

impl RecordSink for FileSink {
    fn write_record(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.out.write_all(bytes)
    }

    fn finish(&mut self, record_count: u64) -> io::Result<()> {
        self.out.flush()?;
        let f = self.out.get_mut();
        f.seek(SeekFrom::Start(COUNT_OFFSET))?;
        f.write_all(&record_count.to_le_bytes())?;
        f.sync_all()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriterStats {
    /// Records passed to `append`.
    pub offered: u64,
    /// Records selected by the 1-in-N sampling.
    pub sampled: u64,
    pub persisted: u64,
    /// Sampled records discarded because the queue was full.
    pub dropped: u64,
}

/// Streaming writer. `append` never waits on storage: sampled records go
/// through a bounded queue to a worker thread, and a full queue drops the
/// newest record.
pub struct RecordWriter {
    tx: Option<SyncSender<Arc<FeatureRecord>>>,
    worker: Option<JoinHandle<io::Result<u64>>>,
    sample_every: u64,
    stats: WriterStats,
}

impl RecordWriter {
    pub fn create(path: impl AsRef<Path>, sample_every: u64) -> Result<Self> {
        let sink = FileSink::create(path)?;
        Self::with_sink(sink, sample_every, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_sink<S: RecordSink>(
        mut sink: S,
        sample_every: u64,
        queue_capacity: usize,
    ) -> Result<Self> {
        if sample_every == 0 {
            return Err(Error::Config("sample_every must be at least 1".into()));
        }
        let (tx, rx) = sync_channel::<Arc<FeatureRecord>>(queue_capacity.max(1));
        let worker = std::thread::Builder::new()
            .name("ifr-writer".into())
            .spawn(move || {
                let mut buf = Vec::with_capacity(RECORD_BYTES);
                let mut n = 0u64;
                for rec in rx {
                    buf.clear();
                    rec.encode_into(&mut buf);
                    sink.write_record(&buf)?;
                    n += 1;
                }
                sink.finish(n)?;
                Ok(n)
            })?;
        Ok(Self {
            tx: Some(tx),
            worker: Some(worker),
            sample_every,
            stats: WriterStats::default(),
        })
    }

    /// Offers one record. Returns whether it was queued for persistence.
    pub fn append(&mut self, record: Arc<FeatureRecord>) -> Result<bool> {
        let tx = self.tx.as_ref().ok_or(Error::Finalized)?;
        let k = self.stats.offered;
        self.stats.offered += 1;
        if !k.is_multiple_of(self.sample_every) {
            return Ok(false);
        }
        self.stats.sampled += 1;
        match tx.try_send(record) {
            Ok(()) => Ok(true),
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.stats.dropped += 1;
                Ok(false)
            }
        }
    }

    /// Drains the queue, patches the header and reports counts.
    pub fn finalize(&mut self) -> Result<WriterStats> {
        drop(self.tx.take().ok_or(Error::Finalized)?);
        let worker = self.worker.take().expect("worker present until finalize");
        let persisted = worker
            .join()
            .map_err(|_| Error::Io(io::Error::other("writer thread panicked")))??;
        self.stats.persisted = persisted;
        Ok(self.stats)
    }

    pub fn stats(&self) -> WriterStats {
        self.stats
    }
}

impl Drop for RecordWriter {
    fn drop(&mut self) {
        if self.tx.is_some() {
            let _ = self.finalize();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileHeader {
    pub version: u32,
    pub record_count: u64,
}

fn parse_header(h: &[u8; HEADER_BYTES]) -> Result<FileHeader> {
    let magic: [u8; 4] = h[0..4].try_into().expect("4 bytes");
    if magic != RECORD_MAGIC {
        return Err(Error::BadMagic {
            expected: RECORD_MAGIC,
            found: magic,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != RECORD_VERSION {
        return Err(Error::BadVersion(version));
    }
    let record_count = u64::from_le_bytes(h[8..16].try_into().expect("8 bytes"));
    let dims: Vec<usize> = (0..3).map(|i| u32_at(16 + 4 * i) as usize).collect();
    let expected = vec![SYMBOLS_PER_SLOT, SUBCARRIERS, IQ_COMPONENTS];
    if dims != expected {
        return Err(Error::ShapeMismatch {
            tensor: "iq".into(),
            expected,
            found: dims,
        });
    }
    let sizes: Vec<usize> = (0..3).map(|i| u32_at(28 + 4 * i) as usize).collect();
    let expected = vec![N_SCALARS, ENVELOPE_BYTES, PAYLOAD_BYTES];
    if sizes != expected {
        return Err(Error::ShapeMismatch {
            tensor: "record layout".into(),
            expected,
            found: sizes,
        });
    }
    Ok(FileHeader {
        version,
        record_count,
    })
}

/// Sequential reader holding one record buffer.
pub struct RecordReader<R> {
    input: R,
    header: FileHeader,
    remaining: u64,
    buf: Vec<u8>,
}

impl RecordReader<BufReader<File>> {
    /// Opens and validates an `.ifr` file, including its length.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let reader = Self::new(BufReader::with_capacity(1 << 20, file))?;
        let want = file_size(reader.header.record_count);
        if len != want {
            return Err(Error::Truncated(format!(
                "file is {len} bytes, header implies {want}"
            )));
        }
        Ok(reader)
    }
}

impl<R: Read> RecordReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut h = [0u8; HEADER_BYTES];
        input.read_exact(&mut h).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Truncated("header".into()),
            _ => Error::Io(e),
        })?;
        let header = parse_header(&h)?;
        Ok(Self {
            input,
            remaining: header.record_count,
            header,
            buf: vec![0; RECORD_BYTES],
        })
    }

    pub fn header(&self) -> FileHeader {
        self.header
    }

    fn read_one(&mut self) -> Result<FeatureRecord> {
        self.input
            .read_exact(&mut self.buf)
            .map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => Error::Truncated(format!(
                    "record {} of {}",
                    self.header.record_count - self.remaining,
                    self.header.record_count
                )),
                _ => Error::Io(e),
            })?;
        FeatureRecord::decode(&self.buf)
    }

    /// Up to `batch_size` records; `None` at end of file.
    pub fn next_batch(&mut self, batch_size: usize) -> Option<Result<Vec<FeatureRecord>>> {
        if self.remaining == 0 || batch_size == 0 {
            return None;
        }
        let n = (batch_size as u64).min(self.remaining) as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            match self.next()? {
                Ok(r) => out.push(r),
                Err(e) => return Some(Err(e)),
            }
        }
        Some(Ok(out))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<FeatureRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let r = self.read_one();
        // Stop after the first error rather than reading misaligned data.
        self.remaining = if r.is_ok() { self.remaining - 1 } else { 0 };
        Some(r)
    }
}

/// Iterator over batches of an `.ifr` file.
pub struct Batches<R> {
    reader: RecordReader<R>,
    batch_size: usize,
}

impl<R: Read> Iterator for Batches<R> {
    type Item = Result<Vec<FeatureRecord>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.reader.next_batch(self.batch_size)
    }
}

pub fn read_batches(path: impl AsRef<Path>, batch_size: usize) -> Result<Batches<BufReader<File>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(Batches {
        reader: RecordReader::open(path)?,
        batch_size,
    })
}

/// Writes every record (no sampling) synchronously.
pub fn write_all(path: impl AsRef<Path>, records: &[FeatureRecord]) -> Result<()> {
    let mut sink = FileSink::create(path)?;
    let mut buf = Vec::with_capacity(RECORD_BYTES);
    for r in records {
        buf.clear();
        r.encode_into(&mut buf);
        sink.write_record(&buf)?;
    }
    sink.finish(records.len() as u64)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Envelope, ScalarFeatures};
    use crate::labeling::Label;
    use half::f16;

    fn record(i: u64) -> FeatureRecord {
        FeatureRecord {
            iq: (0..crate::features::IQ_LEN)
                .map(|k| f16::from_f32(((k as u64 + i) % 97) as f32 / 97.0))
                .collect(),
            scalars: ScalarFeatures {
                rssi_db: -3.0,
                rsrp_db: -2.5,
                sinr_db: 12.0,
                mcs_index: 5,
                mcs_table: 0,
                cb_err_count: 0,
                cb_total_count: 1,
            },
            envelope: Envelope {
                slot_index: i,
                scenario_id: 1,
                label: Label::Interf,
                n_interferers: 1,
            },
        }
    }

    #[test]
    fn header_is_forty_bytes_and_parses() {
        let h = header_bytes(7);
        assert_eq!(parse_header(&h).unwrap().record_count, 7);
    }

    #[test]
    fn sampling_keeps_one_in_n() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ifr");
        let mut w = RecordWriter::with_sink(FileSink::create(&p).unwrap(), 10, 1000).unwrap();
        let r = Arc::new(record(0));
        for _ in 0..100 {
            w.append(r.clone()).unwrap();
        }
        let s = w.finalize().unwrap();
        assert_eq!(
            (s.offered, s.sampled, s.persisted, s.dropped),
            (100, 10, 10, 0)
        );
        assert_eq!(std::fs::metadata(&p).unwrap().len(), file_size(10));
        assert!(matches!(w.append(r), Err(Error::Finalized)));
        assert!(matches!(w.finalize(), Err(Error::Finalized)));
    }

    #[test]
    fn batches_of_ten() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ifr");
        let recs: Vec<_> = (0..25).map(record).collect();
        write_all(&p, &recs).unwrap();
        let sizes: Vec<usize> = read_batches(&p, 10)
            .unwrap()
            .map(|b| b.unwrap().len())
            .collect();
        assert_eq!(sizes, vec![10, 10, 5]);
        let back: Vec<_> = RecordReader::open(&p)
            .unwrap()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(back, recs);
    }

    #[test]
    fn corrupted_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ifr");
        write_all(&p, &[record(0)]).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_batches(&p, 4), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ifr");
        write_all(&p, &[record(0), record(1)]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(RecordReader::open(&p), Err(Error::Truncated(_))));
        let mut r = RecordReader::new(&bytes[..bytes.len() - 3]).unwrap();
        assert!(r.next().unwrap().is_ok());
        assert!(matches!(r.next(), Some(Err(Error::Truncated(_)))));
        assert!(r.next().is_none());
    }

    #[test]
    fn unwritable_path() {
        assert!(RecordWriter::create("/nonexistent-dir/x.ifr", 1).is_err());
    }

    #[test]
    fn zero_sample_every_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(RecordWriter::create(dir.path().join("z.ifr"), 0).is_err());
    }
}
