//! Answer reports and the exit-code contract shared by the property
//! subcommands: 0 the property holds, 1 it fails, 2 the run was
//! inconclusive within its budgets, 3 the input was rejected.

use clap::ValueEnum;
use serde_json::{json, Value};

pub const EXIT_HOLDS: i32 = 0;
pub const EXIT_FAILS: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

/// Output format, a global flag. `text` renders counter systems in the
/// fast style and reports as plain lines; `json` is byte-deterministic
/// for identical invocations.
#[derive(Copy, Clone, PartialEq, Eq, Debug, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// Three-valued verdict of a property query.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Outcome {
    Holds,
    Fails,
    /// Reason the run stayed inconclusive, e.g. a budget that ran out.
    Inconclusive(String),
}

impl Outcome {
    pub fn from_bool(holds: bool) -> Self {
        if holds {
            Outcome::Holds
        } else {
            Outcome::Fails
        }
    }

    pub fn word(&self) -> &'static str {
        match self {
            Outcome::Holds => "holds",
            Outcome::Fails => "fails",
            Outcome::Inconclusive(_) => "inconclusive",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Holds => EXIT_HOLDS,
            Outcome::Fails => EXIT_FAILS,
            Outcome::Inconclusive(_) => EXIT_INCONCLUSIVE,
        }
    }
}

/// One answer report. Printed as `{command, query, semantics, answer,
/// reason?, witness?, ...details}` in JSON mode and as aligned lines in
/// text mode; no field ever carries a timestamp or duration.
pub struct Report {
    pub command: &'static str,
    pub query: String,
    pub semantics: &'static str,
    pub outcome: Outcome,
    /// Structured witness for JSON output.
    pub witness: Option<Value>,
    /// One-line witness for text output.
    pub witness_text: Option<String>,
    /// Extra fields, in print order for text output.
    pub details: Vec<(&'static str, Value)>,
}

impl Report {
    pub fn new(command: &'static str, query: String, semantics: &'static str, outcome: Outcome) -> Self {
        Report { command, query, semantics, outcome, witness: None, witness_text: None, details: Vec::new() }
    }

    pub fn detail(mut self, key: &'static str, value: Value) -> Self {
        self.details.push((key, value));
        self
    }

    /// Prints the report and returns the exit code for its outcome.
    pub fn print(&self, format: Format) -> i32 {
        match format {
            Format::Json => {
                let mut doc = json!({
                    "command": self.command,
                    "query": self.query,
                    "semantics": self.semantics,
                    "answer": self.outcome.word(),
                });
                let map = doc.as_object_mut().expect("object literal");
                if let Outcome::Inconclusive(reason) = &self.outcome {
                    map.insert("reason".into(), json!(reason));
                }
                if let Some(w) = &self.witness {
                    map.insert("witness".into(), w.clone());
                }
                for (k, v) in &self.details {
                    map.insert((*k).into(), v.clone());
                }
                println!("{}", serde_json::to_string_pretty(&doc).expect("serializable report"));
            }
            Format::Text => {
                println!("{} {} [{}]: {}", self.command, self.query, self.semantics, self.outcome.word());
                if let Outcome::Inconclusive(reason) = &self.outcome {
                    println!("reason: {reason}");
                }
                if let Some(w) = &self.witness_text {
                    println!("witness: {w}");
                }
                for (k, v) in &self.details {
                    match v {
                        Value::String(s) => println!("{k}: {s}"),
                        other => println!("{k}: {other}"),
                    }
                }
            }
        }
        self.outcome.exit_code()
    }
}
