//! Warm forward passes must not touch the heap. Allocations are counted
//! per thread so concurrently running tests do not interfere.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::Arc;

use ifdet_core::model::{ModelConfig, Session, Tactic};

struct Counting;

thread_local! {
    static ALLOCS: Cell<u64> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCS.with(|c| c.set(c.get() + 1));
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCS.with(|c| c.set(c.get() + 1));
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn allocations() -> u64 {
    ALLOCS.with(Cell::get)
}

fn assert_warm_forward_alloc_free(config: &ModelConfig, tactic: Option<Tactic>, calls: usize) {
    let bundle = Arc::new(common::random_bundle(config, 3));
    let mut r = common::rng(3);
    let iq = common::random_iq(&mut r, config.input.iq_len());
    let scalars = common::random_scalars(&mut r).as_array();
    let mut s = Session::new(bundle).unwrap();
    match tactic {
        Some(t) => s.warmup_with(t).map(|_| ()).unwrap(),
        None => s.warmup().map(|_| ()).unwrap(),
    }
    let before = allocations();
    for _ in 0..calls {
        let p = s.forward_raw(&iq, &scalars).unwrap();
        assert!(!p.cold);
    }
    let n = allocations() - before;
    assert_eq!(
        n, 0,
        "{n} allocations in {calls} warm forward passes ({tactic:?})"
    );
}

#[test]
fn counter_sees_allocations() {
    let before = allocations();
    let v = std::hint::black_box(vec![1u8; 64]);
    drop(v);
    assert!(allocations() > before);
}

#[test]
fn reduced_width_every_tactic() {
    let config = ModelConfig::reduced(4, 8, 64, 2).unwrap();
    for t in Tactic::candidates() {
        assert_warm_forward_alloc_free(&config, Some(t), 5);
    }
}

#[test]
fn production_width() {
    let config = ModelConfig::new(64, 128, 32, 2).unwrap();
    assert_warm_forward_alloc_free(&config, None, 2);
}

#[test]
fn record_forward_is_alloc_free() {
    let config = ModelConfig::new(64, 128, 32, 2).unwrap();
    let mut s = Session::new(Arc::new(common::random_bundle(&config, 5))).unwrap();
    s.warmup().unwrap();
    let rec = common::random_record(&mut common::rng(5));
    let before = allocations();
    s.forward(&rec).unwrap();
    assert_eq!(allocations() - before, 0);
}
