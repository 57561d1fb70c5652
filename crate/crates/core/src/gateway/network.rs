//! Process-wide switch that forbids outbound HTTP, with a counter of
//! attempted calls so offline runs can prove they made none.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

static DENIED: AtomicBool = AtomicBool::new(false);
static ATTEMPTS: AtomicU64 = AtomicU64::new(0);

pub const DENY_ENV: &str = "TOONSCAN_DENY_NETWORK";

pub fn set_denied(denied: bool) {
    DENIED.store(denied, Ordering::SeqCst);
}

pub fn is_denied() -> bool {
    DENIED.load(Ordering::SeqCst)
}

/// Denies network access when the environment asks for it.
pub fn init_from_env() {
    if std::env::var(DENY_ENV).is_ok_and(|v| v == "1" || v.eq_ignore_ascii_case("true")) {
        set_denied(true);
    }
}

/// Number of outbound calls attempted since process start, denied or not.
pub fn attempted_calls() -> u64 {
    ATTEMPTS.load(Ordering::SeqCst)
}

pub(crate) fn record_attempt() {
    ATTEMPTS.fetch_add(1, Ordering::SeqCst);
}
