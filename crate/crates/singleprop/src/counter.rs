//! Thread-local instrumentation for propagation counts.
//!
//! Bound-propagation methods are compared by how many network-shaped sweeps
//! they spend per training step, so the sweep implementations report here:
//! one forward-shaped or backward-shaped pass per full traversal of the
//! network, and one matrix product per layer visited. A fused
//! positive/negative-split product (two sweeps' worth of interval work done
//! in one traversal) reports the number of plain-product equivalents it
//! performed.

use std::cell::Cell;

thread_local! {
    static FWD_PASSES: Cell<u64> = const { Cell::new(0) };
    static BWD_PASSES: Cell<u64> = const { Cell::new(0) };
    static PRODUCTS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the three counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PassCounts {
    pub fwd_passes: u64,
    pub bwd_passes: u64,
    pub products: u64,
}

impl PassCounts {
    fn current() -> Self {
        PassCounts {
            fwd_passes: FWD_PASSES.with(Cell::get),
            bwd_passes: BWD_PASSES.with(Cell::get),
            products: PRODUCTS.with(Cell::get),
        }
    }
}

/// Record one forward-shaped sweep over the network.
pub fn record_fwd_pass() {
    FWD_PASSES.with(|c| c.set(c.get() + 1));
}

/// Record `n` forward-shaped sweeps at once.
pub fn record_fwd_passes(n: u64) {
    FWD_PASSES.with(|c| c.set(c.get() + n));
}

/// Record one backward-shaped sweep over the network.
pub fn record_bwd_pass() {
    BWD_PASSES.with(|c| c.set(c.get() + 1));
}

/// Record `n` backward-shaped sweeps at once.
pub fn record_bwd_passes(n: u64) {
    BWD_PASSES.with(|c| c.set(c.get() + n));
}

/// Record `n` plain matrix-product equivalents.
pub fn record_products(n: u64) {
    PRODUCTS.with(|c| c.set(c.get() + n));
}

/// Run `f` and return its result along with the counter deltas it produced.
///
/// Counters are thread-local and the instrumented code never spawns threads,
/// so the delta is exact.
pub fn delta<R>(f: impl FnOnce() -> R) -> (R, PassCounts) {
    let before = PassCounts::current();
    let out = f();
    let after = PassCounts::current();
    (
        out,
        PassCounts {
            fwd_passes: after.fwd_passes - before.fwd_passes,
            bwd_passes: after.bwd_passes - before.bwd_passes,
            products: after.products - before.products,
        },
    )
}
