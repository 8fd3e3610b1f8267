//! Runner for the acceptance checks: each criterion is timed, guarded
//! against panics and reported on one line.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use pairshap::ValueFunctionSpec;

pub type Check = fn() -> Result<String, String>;

pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    /// Wall-clock limit, part of the criterion when present.
    pub limit: Option<Duration>,
    pub check: Check,
}

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

pub fn run(c: &Criterion) -> Outcome {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(c.check));
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    if let Some(limit) = c.limit {
        if elapsed > limit {
            passed = false;
            detail = format!("{detail}; exceeded time limit of {:?}", limit);
        }
    }
    Outcome {
        passed,
        detail,
        elapsed,
    }
}

/// Runs every criterion, printing one line each. Returns the number of failures.
pub fn run_all(criteria: &[Criterion]) -> usize {
    let mut failures = 0;
    for c in criteria {
        let o = run(c);
        if !o.passed {
            failures += 1;
        }
        println!(
            "criterion {:>2} [{}] {} ({:.2} s): {}",
            c.id,
            if o.passed { "PASS" } else { "FAIL" },
            c.title,
            o.elapsed.as_secs_f64(),
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {} failed",
        criteria.len() - failures,
        failures
    );
    failures
}

/// `x` rounded half away from zero to `digits` decimals, scaled to an integer.
pub fn rounded(x: f64, digits: i32) -> i64 {
    (x * 10f64.powi(digits)).round() as i64
}

/// Writes a spec into `dir` and returns its path.
pub fn write_spec(dir: &tempfile::TempDir, name: &str, spec: &ValueFunctionSpec) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, spec.to_json_value().to_string()).expect("write spec");
    path
}
