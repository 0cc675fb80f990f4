use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

/// A non-fatal event recorded during a run (fallbacks, overwrites, shortages).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub message: String,
}

/// Shared, cloneable warning sink. Clones append to the same log.
#[derive(Debug, Clone, Default)]
pub struct Warnings(Arc<Mutex<Vec<Warning>>>);

impl Warnings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, stage: &str, query_id: Option<&str>, message: impl Into<String>) {
        let message = message.into();
        match query_id {
            Some(q) => tracing::warn!(stage, query_id = q, "{message}"),
            None => tracing::warn!(stage, "{message}"),
        }
        self.0.lock().expect("warning log poisoned").push(Warning {
            stage: stage.to_string(),
            query_id: query_id.map(str::to_string),
            message,
        });
    }

    /// Appends an already recorded warning, e.g. one carried over from an
    /// earlier stage's manifest, without logging it again.
    pub fn record(&self, warning: Warning) {
        self.0.lock().expect("warning log poisoned").push(warning);
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("warning log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count_stage(&self, stage: &str) -> usize {
        self.0
            .lock()
            .expect("warning log poisoned")
            .iter()
            .filter(|w| w.stage == stage)
            .count()
    }

    /// Snapshot sorted by (stage, query id, message) so that logs from
    /// concurrent stages compare equal across runs.
    pub fn snapshot(&self) -> Vec<Warning> {
        let mut v = self.0.lock().expect("warning log poisoned").clone();
        v.sort_by(|a, b| {
            (&a.stage, &a.query_id, &a.message).cmp(&(&b.stage, &b.query_id, &b.message))
        });
        v
    }
}
