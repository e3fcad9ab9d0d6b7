//! Experiment harness around the tempered fractional DG solver:
//! configuration parsing, manufactured problems, experiment drivers and
//! their CSV / mesh-dump / SVG outputs.

pub mod config;
pub mod experiments;
pub mod manufactured;
pub mod plot;
pub mod validate;

/// Verbosity gate driven by the TEMPERED_DG_LOG environment variable
/// (any non-empty value enables progress lines on stderr).
pub fn log_enabled() -> bool {
    std::env::var("TEMPERED_DG_LOG").map_or(false, |v| !v.is_empty())
}

#[macro_export]
macro_rules! log {
    ($($arg:tt)*) => {
        if $crate::log_enabled() {
            eprintln!($($arg)*);
        }
    };
}
