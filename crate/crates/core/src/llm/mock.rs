use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRequest};
use crate::error::Result;
use crate::ingest::read_jsonl;

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub tag: String,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<u32>,
    pub response: String,
}

/// What the mock answers when no fixture matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissPolicy {
    /// Return the last user message verbatim.
    #[default]
    Echo,
    /// Fail permanently.
    Fail,
}

type FixtureKey = (String, String, Option<u32>);

/// Fixture-replaying backend.
///
/// Lookup order is `(tag, query_id, pass)` then `(tag, query_id)`. The
/// answer is a pure function of the fixtures and the request; the only state
/// is instrumentation (attempt counts, in-flight high-water mark) and the
/// optional injected failures used by tests.
#[derive(Debug, Default)]
pub struct MockBackend {
    fixtures: HashMap<FixtureKey, String>,
    on_miss: MissPolicy,
    latency: Option<Duration>,
    fail_queries: HashSet<String>,
    fail_requests: HashSet<FixtureKey>,
    transient_left: Mutex<HashMap<String, u32>>,
    attempts: Mutex<BTreeMap<String, u64>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        let mut m = Self::new();
        m.extend(records);
        m
    }

    /// Loads fixture files; later files override earlier ones.
    pub fn from_files<P: AsRef<Path>>(paths: impl IntoIterator<Item = P>) -> Result<Self> {
        let mut m = Self::new();
        for p in paths {
            m.extend(read_jsonl::<FixtureRecord>(p)?);
        }
        Ok(m)
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = FixtureRecord>) {
        for r in records {
            self.fixtures.insert((r.tag, r.query_id, r.pass), r.response);
        }
    }

    pub fn with_fixture(mut self, tag: &str, query_id: &str, pass: Option<u32>, response: &str) -> Self {
        self.fixtures
            .insert((tag.to_string(), query_id.to_string(), pass), response.to_string());
        self
    }

    pub fn on_miss(mut self, policy: MissPolicy) -> Self {
        self.on_miss = policy;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    /// Every request for `query_id` fails permanently.
    pub fn failing_for(mut self, query_id: &str) -> Self {
        self.fail_queries.insert(query_id.to_string());
        self
    }

    /// Requests matching exactly `(tag, query_id, pass)` fail permanently.
    pub fn failing_request(mut self, tag: &str, query_id: &str, pass: Option<u32>) -> Self {
        self.fail_requests
            .insert((tag.to_string(), query_id.to_string(), pass));
        self
    }

    /// The first `n` attempts for `query_id` fail transiently.
    pub fn with_transient_failures(self, query_id: &str, n: u32) -> Self {
        self.transient_left
            .lock()
            .unwrap()
            .insert(query_id.to_string(), n);
        self
    }

    /// Attempts received, keyed by tag.
    pub fn attempts_by_tag(&self) -> BTreeMap<String, u64> {
        self.attempts.lock().unwrap().clone()
    }

    pub fn attempts_for(&self, tag: &str) -> u64 {
        self.attempts.lock().unwrap().get(tag).copied().unwrap_or(0)
    }

    /// Highest number of concurrently executing attempts observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn answer(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let qid = request.query_id.clone().unwrap_or_default();
        if self.fail_queries.contains(&qid)
            || self
                .fail_requests
                .contains(&(request.tag.clone(), qid.clone(), request.pass))
        {
            return Err(BackendError::permanent(format!(
                "mock: injected failure for {}/{qid}",
                request.tag
            )));
        }
        if let Some(left) = self.transient_left.lock().unwrap().get_mut(&qid) {
            if *left > 0 {
                *left -= 1;
                return Err(BackendError::transient(format!("mock: transient failure for {qid}")));
            }
        }
        let exact = (request.tag.clone(), qid.clone(), request.pass);
        let any_pass = (request.tag.clone(), qid, None);
        if let Some(text) = self.fixtures.get(&exact).or_else(|| self.fixtures.get(&any_pass)) {
            return Ok(text.clone());
        }
        match self.on_miss {
            MissPolicy::Echo => Ok(request.last_user_message().unwrap_or_default().to_string()),
            MissPolicy::Fail => Err(BackendError::permanent(format!(
                "mock: no fixture for {}/{}",
                request.tag,
                request.query_id.as_deref().unwrap_or("-")
            ))),
        }
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl CompletionBackend for MockBackend {
    fn label(&self) -> &str {
        "mock"
    }

    async fn complete_once(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        *self
            .attempts
            .lock()
            .unwrap()
            .entry(request.tag.clone())
            .or_default() += 1;
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak.fetch_max(now, Ordering::SeqCst);
        if let Some(d) = self.latency {
            tokio::time::sleep(d).await;
        }
        self.answer(request)
    }
}
