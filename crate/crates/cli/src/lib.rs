//! Command-line pipeline: build systems, run scans and points, harden, sample
//! baselines, enumerate subsystems and chart the results.

pub mod args;
pub mod commands;
pub mod io;
pub mod svg;

use descspace::Error;

/// Process exit code for a failed command: 2 for divergence, 3 for a
/// hardening stall, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Diverged { .. } => 2,
                Error::HardeningStalled { .. } => 3,
                _ => 1,
            };
        }
    }
    1
}
