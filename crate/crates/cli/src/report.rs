//! Per-invariant results shared by all verification suites.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub evaluated: u64,
    pub failures: u64,
    /// Largest value of the check's own metric (error, ratio, ...).
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(suite: &str, seed: u64) -> Self {
        Self {
            suite: suite.to_string(),
            seed,
            checks: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "ok  " } else { "FAIL" };
            out.push_str(&format!(
                "{status} {:<32} {:>9} evaluated  {:>6} failed  worst={:.3e}",
                c.name, c.evaluated, c.failures, c.worst
            ));
            if !c.detail.is_empty() {
                out.push_str("  ");
                out.push_str(&c.detail);
            }
            out.push('\n');
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        out.push_str(&format!("{}: {verdict} (seed {})\n", self.suite, self.seed));
        out
    }
}

/// Accumulates outcomes of one named invariant.
#[derive(Debug, Clone)]
pub struct Tally {
    name: String,
    evaluated: u64,
    failures: u64,
    worst: f64,
    first_failure: Option<String>,
    note: String,
}

impl Tally {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            evaluated: 0,
            failures: 0,
            worst: 0.0,
            first_failure: None,
            note: String::new(),
        }
    }

    /// Records one evaluation. `metric` feeds `worst`; `what` describes a failure.
    pub fn record(&mut self, ok: bool, metric: f64, what: impl FnOnce() -> String) {
        self.evaluated += 1;
        if metric.is_nan() || metric > self.worst {
            self.worst = metric;
        }
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(what());
            }
        }
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.note = note.into();
    }

    pub fn merge(&mut self, other: Tally) {
        self.evaluated += other.evaluated;
        self.failures += other.failures;
        if other.worst.is_nan() || other.worst > self.worst {
            self.worst = other.worst;
        }
        if self.first_failure.is_none() {
            self.first_failure = other.first_failure;
        }
    }

    pub fn finish(self) -> Check {
        let detail = match self.first_failure {
            Some(f) => format!("first failure: {f}"),
            None => self.note,
        };
        Check {
            name: self.name,
            passed: self.failures == 0 && self.evaluated > 0,
            evaluated: self.evaluated,
            failures: self.failures,
            worst: self.worst,
            detail,
        }
    }
}
