use serde::{Deserialize, Serialize};

/// Outcome of one certificate: the measured quantity against its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    /// The statement being certified.
    pub anchor: String,
    pub bound: f64,
    pub measured: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    pub fn new(name: &str, anchor: &str, bound: f64, measured: f64, pass: bool) -> Self {
        Self { name: name.into(), anchor: anchor.into(), bound, measured, pass, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}
