//! A tiny runner for named checks that prints one `PASS`/`FAIL` line each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

#[derive(Debug, Default)]
pub struct Suite {
    failed: Vec<String>,
    passed: usize,
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `check`, which returns a short detail on success and an
    /// explanation on failure. Panics count as failures.
    pub fn check(&mut self, name: &str, check: impl FnOnce() -> Result<String, String>) {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                self.passed += 1;
                println!("PASS  {name}  ({detail}; {secs:.2} s)");
            }
            Err(why) => {
                self.failed.push(name.to_string());
                println!("FAIL  {name}  ({why}; {secs:.2} s)");
            }
        }
    }

    /// Prints the tally and exits non-zero if anything failed.
    pub fn finish(self) {
        println!("{} passed, {} failed", self.passed, self.failed.len());
        if !self.failed.is_empty() {
            std::process::exit(1);
        }
    }
}

/// Fails the enclosing check with a formatted message unless `cond` holds.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}
