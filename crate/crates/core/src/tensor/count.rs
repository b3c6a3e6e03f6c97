//! Process-wide multiply counter.
//!
//! Only matrix products are counted: each `matmul`/`matmul_nt` call adds
//! M*K*P when counting is enabled. Elementwise work, softmax, and bias adds
//! are never counted, so the total is directly comparable with the closed
//! forms in [`crate::cost`]. There is one accumulator per process; callers
//! that want an exact reading must not interleave instrumented runs.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

static ENABLED: AtomicBool = AtomicBool::new(false);
static MULTIPLIES: AtomicU64 = AtomicU64::new(0);

pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::SeqCst);
}

pub fn reset() {
    MULTIPLIES.store(0, Ordering::SeqCst);
}

pub fn total() -> u64 {
    MULTIPLIES.load(Ordering::SeqCst)
}

#[inline]
pub(crate) fn record(multiplies: u64) {
    if ENABLED.load(Ordering::Relaxed) {
        MULTIPLIES.fetch_add(multiplies, Ordering::Relaxed);
    }
}

/// Runs `f` with the counter enabled and returns (result, multiplies).
/// The counter is restored to its previous state afterwards.
pub fn counted<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let was = ENABLED.swap(true, Ordering::SeqCst);
    let before = total();
    let out = f();
    let after = total();
    ENABLED.store(was, Ordering::SeqCst);
    (out, after - before)
}
