//! Per-thread warning counters and the epsilon floor for log/div/sqrt.
//!
//! Operations that clamp an operand (log of a non-positive value, division by
//! ~0, zero-norm normalization, degenerate crops, corrupt images) bump a
//! named counter here instead of failing.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-12;

pub const LOG_CLAMP: &str = "log_clamp";
pub const DIV_CLAMP: &str = "div_clamp";
pub const SQRT_CLAMP: &str = "sqrt_clamp";
pub const ZERO_NORM: &str = "zero_norm";
pub const VARIANCE_FLOOR: &str = "variance_floor";
pub const CROP_FALLBACK: &str = "crop_fallback";
pub const IMAGE_SKIPPED: &str = "image_skipped";

thread_local! {
    static EPSILON: Cell<f64> = const { Cell::new(DEFAULT_EPSILON_FLOOR) };
    static COUNTERS: RefCell<BTreeMap<&'static str, u64>> = const { RefCell::new(BTreeMap::new()) };
}

pub fn epsilon_floor() -> f64 {
    EPSILON.with(|e| e.get())
}

/// Sets the floor for the current thread and returns the previous value.
pub fn set_epsilon_floor(eps: f64) -> f64 {
    EPSILON.with(|e| e.replace(eps))
}

pub fn bump(name: &'static str, by: u64) {
    if by == 0 {
        return;
    }
    COUNTERS.with(|c| *c.borrow_mut().entry(name).or_insert(0) += by);
}

pub fn count(name: &str) -> u64 {
    COUNTERS.with(|c| c.borrow().get(name).copied().unwrap_or(0))
}

pub fn snapshot() -> BTreeMap<&'static str, u64> {
    COUNTERS.with(|c| c.borrow().clone())
}

pub fn reset() {
    COUNTERS.with(|c| c.borrow_mut().clear());
}
