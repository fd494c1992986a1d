//! Pass/fail reports written as `report.json`.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct Invariant {
    pub id: String,
    pub status: Status,
    /// Smallest signed margin observed; negative beyond the slack means failure.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub suite: String,
    pub pass: bool,
    pub invariants: Vec<Invariant>,
}

impl Report {
    pub fn new(suite: impl Into<String>) -> Self {
        Self {
            suite: suite.into(),
            pass: true,
            invariants: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, ok: bool, margin: f64, detail: impl Into<String>) {
        self.pass &= ok;
        self.invariants.push(Invariant {
            id: id.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            margin,
            detail: detail.into(),
        });
    }

    pub fn extend(&mut self, other: Report) {
        self.pass &= other.pass;
        self.invariants.extend(other.invariants);
    }

    pub fn failures(&self) -> impl Iterator<Item = &Invariant> {
        self.invariants.iter().filter(|i| i.status == Status::Fail)
    }

    pub fn to_json(&self) -> String {
        // margins can be infinite (e.g. empty checks); JSON has no such value
        let mut r = self.clone();
        for i in &mut r.invariants {
            if !i.margin.is_finite() {
                i.margin = if i.margin > 0.0 { f64::MAX } else { f64::MIN };
            }
        }
        serde_json::to_string_pretty(&r).expect("report serializes") + "\n"
    }

    /// One line per invariant, for the terminal.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for i in &self.invariants {
            let tag = if i.status == Status::Pass { "PASS" } else { "FAIL" };
            s.push_str(&format!("{tag} {} margin={:.3e} {}\n", i.id, i.margin, i.detail));
        }
        s.push_str(&format!("{}: {}\n", self.suite, if self.pass { "pass" } else { "FAIL" }));
        s
    }
}
