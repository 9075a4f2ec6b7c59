mod common;

use std::io;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ifdet_core::dataset::{
    file_size, read_batches, RecordReader, RecordSink, RecordWriter, HEADER_BYTES,
};
use ifdet_core::features::{PAYLOAD_BYTES, RECORD_BYTES};

#[test]
fn fuzz_round_trip_thousand_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fuzz.ifr");
    let mut w = RecordWriter::with_sink(
        ifdet_core::dataset::FileSink::create(&path).unwrap(),
        1,
        2000,
    )
    .unwrap();
    for seed in 0..1000 {
        let rec = common::fuzz_record(seed);
        assert_eq!(rec.payload_bytes().len(), PAYLOAD_BYTES);
        assert!(w.append(Arc::new(rec)).unwrap());
    }
    let stats = w.finalize().unwrap();
    assert_eq!((stats.persisted, stats.dropped), (1000, 0));
    assert_eq!(std::fs::metadata(&path).unwrap().len(), file_size(1000));
    assert_eq!(
        file_size(1000),
        HEADER_BYTES as u64 + 1000 * RECORD_BYTES as u64
    );

    let mut seed = 0;
    for batch in read_batches(&path, 64).unwrap() {
        for rec in batch.unwrap() {
            assert_eq!(
                common::encoded(&rec),
                common::encoded(&common::fuzz_record(seed)),
                "record {seed}"
            );
            seed += 1;
        }
    }
    assert_eq!(seed, 1000);
}

#[test]
fn count_in_header_matches_after_finalize() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ifr");
    let mut w = RecordWriter::create(&path, 3).unwrap();
    let rec = Arc::new(common::random_record(&mut common::rng(1)));
    for _ in 0..10 {
        w.append(rec.clone()).unwrap();
    }
    let s = w.finalize().unwrap();
    assert_eq!(s.persisted, 4);
    assert_eq!(RecordReader::open(&path).unwrap().header().record_count, 4);
}

struct StallingSink {
    stall: Duration,
    written: u64,
}

impl RecordSink for StallingSink {
    fn write_record(&mut self, bytes: &[u8]) -> io::Result<()> {
        assert_eq!(bytes.len(), RECORD_BYTES);
        std::thread::sleep(self.stall);
        self.written += 1;
        Ok(())
    }

    fn finish(&mut self, record_count: u64) -> io::Result<()> {
        assert_eq!(record_count, self.written);
        Ok(())
    }
}

#[test]
fn append_does_not_wait_for_a_stalled_sink() {
    let sink = StallingSink {
        stall: Duration::from_millis(100),
        written: 0,
    };
    let mut w = RecordWriter::with_sink(sink, 1, 4).unwrap();
    let rec = Arc::new(common::random_record(&mut common::rng(2)));
    let mut worst = Duration::ZERO;
    for _ in 0..100 {
        let t = Instant::now();
        w.append(rec.clone()).unwrap();
        worst = worst.max(t.elapsed());
    }
    assert!(
        worst < Duration::from_millis(20),
        "slowest append took {worst:?}"
    );
    let s = w.finalize().unwrap();
    assert!(s.dropped > 0);
    assert_eq!(s.persisted + s.dropped, s.sampled);
    assert_eq!(s.offered, 100);
}
