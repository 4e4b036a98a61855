//! Instrumented floating-point operation counter.
//!
//! Kernels report the operations they actually executed (loop trip counts,
//! one multiply-accumulate = 2 ops, one elementwise transform = 1 op).
//! Counting is off unless a [`measure`] scope is active on the current
//! thread, so the hot paths pay a single thread-local read per op.

use std::cell::Cell;

thread_local! {
    static ACTIVE: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Adds `ops` to the innermost active scope, if any.
pub fn record(ops: u64) {
    ACTIVE.with(|c| {
        if let Some(total) = c.get() {
            c.set(Some(total + ops));
        }
    });
}

pub fn is_active() -> bool {
    ACTIVE.with(|c| c.get().is_some())
}

/// Runs `f` and returns its result with the number of ops recorded inside.
/// Nested scopes also contribute to their parents.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = ACTIVE.with(|c| c.replace(Some(0)));
    let out = f();
    let inner = ACTIVE.with(|c| c.get()).unwrap_or(0);
    ACTIVE.with(|c| c.set(outer.map(|o| o + inner)));
    (out, inner)
}
