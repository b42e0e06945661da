//! PASS/FAIL reporting shared by the report-style test binaries.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

pub type Verdict = std::result::Result<String, String>;

pub struct Suite {
    only: Option<String>,
    passed: usize,
    failed: Vec<&'static str>,
}

impl Suite {
    pub fn run(&mut self, name: &'static str, budget_s: Option<f64>, f: impl FnOnce() -> Verdict) {
        if self.only.as_deref().is_some_and(|o| !name.contains(o)) {
            return;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let verdict = match (verdict, budget_s) {
            (Ok(d), Some(b)) if secs >= b => Err(format!("{d}; runtime {secs:.1}s exceeds {b}s")),
            (v, _) => v,
        };
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag}  {name:<28} {secs:>8.1}s  {detail}");
        match verdict {
            Ok(_) => self.passed += 1,
            Err(_) => self.failed.push(name),
        }
    }
}

pub fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

impl Suite {
    /// Honors `SQN_ACCEPTANCE_ONLY=<substr>`.
    pub fn from_env() -> Self {
        Self {
            only: std::env::var("SQN_ACCEPTANCE_ONLY").ok(),
            passed: 0,
            failed: Vec::new(),
        }
    }

    pub fn wants(&self, name: &str) -> bool {
        self.only.as_deref().is_none_or(|o| name.contains(o))
    }

    /// Print the summary; exit non-zero on failures only with `SQN_ACCEPTANCE_STRICT=1`.
    pub fn finish(self, title: &str) {
        println!(
            "{title}: {} passed, {} failed{}",
            self.passed,
            self.failed.len(),
            if self.failed.is_empty() {
                String::new()
            } else {
                format!(" ({})", self.failed.join(", "))
            }
        );
        let strict = std::env::var("SQN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
        if strict && !self.failed.is_empty() {
            std::process::exit(1);
        }
    }
}
