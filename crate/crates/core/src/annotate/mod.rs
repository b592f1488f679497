//! LLM workers.
//!
//! A [`LlmWorkerProfile`] fixes an endpoint, a model, a temperature, a prompt
//! template and an ordered list of [`NormalizationRule`]s. Running a profile
//! over a dataset sends one chat-completion request per instance and maps
//! each reply onto a label. Replies that no rule recognizes are logged as
//! unmatched and left out of the emitted labels.
//!
//! The shipped prompt templates and default rules are our own.

mod client;
mod normalize;
mod prompt;

pub use client::{parse_response, CallError, FixtureClient, HttpClient};
pub use normalize::{default_rules, normalize_output, CaptureMap, Normalized, NormalizationRule, RuleSet};
pub use prompt::{render_options, render_prompt};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_labels_csv, Dataset, DatasetError, LabelRecord, LLM_WORKER_PREFIX};

/// Environment variable holding the endpoint API key.
pub const API_KEY_ENV: &str = "AGGLAB_API_KEY";

/// Written in place of a label when no rule matched.
pub const UNMATCHED: &str = "UNMATCHED";

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed profile: {source}")]
    ProfileJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no API key: set {API_KEY_ENV} or use fixture mode")]
    MissingApiKey,
    #[error("instance `{0}` has no text")]
    MissingText(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Client(String),
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

fn default_concurrency() -> usize {
    4
}

fn default_backoff() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmWorkerProfile {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub prompt_template: String,
    #[serde(default = "default_rules")]
    pub rules: Vec<NormalizationRule>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

impl LlmWorkerProfile {
    pub fn load(path: &Path) -> Result<Self, AnnotateError> {
        let text = fs::read_to_string(path).map_err(|source| AnnotateError::Io { path: path.to_path_buf(), source })?;
        let profile: LlmWorkerProfile =
            serde_json::from_str(&text).map_err(|source| AnnotateError::ProfileJson { path: path.to_path_buf(), source })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), AnnotateError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AnnotateError::Profile(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if !self.prompt_template.contains("{text}") {
            return Err(AnnotateError::Profile("prompt_template must contain {text}".into()));
        }
        if self.model.trim().is_empty() {
            return Err(AnnotateError::Profile("model is empty".into()));
        }
        if self.max_concurrent == 0 {
            return Err(AnnotateError::Profile("max_concurrent must be at least 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(AnnotateError::Profile("timeout_secs must be at least 1".into()));
        }
        RuleSet::compile(&self.rules)?;
        Ok(())
    }

    /// `llm:<model>:<t>`, with `t` printed in its shortest form (`0`, `0.5`, `1`).
    pub fn worker_id(&self) -> String {
        format!("{LLM_WORKER_PREFIX}{}:{}", self.model, self.temperature)
    }

    /// File-name-safe form of the worker ID.
    pub fn slug(&self) -> String {
        self.worker_id().chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-') { c } else { '_' }).collect()
    }
}

/// Where responses come from.
#[derive(Debug, Clone)]
pub enum Backend {
    Http { api_key: Option<String> },
    Fixtures(PathBuf),
}

mod unmatched {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(label: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(label.as_deref().unwrap_or(super::UNMATCHED))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok((s != super::UNMATCHED).then_some(s))
    }
}

/// One line of the outcome log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationOutcome {
    pub instance_id: String,
    pub worker_id: String,
    pub raw_output: String,
    #[serde(with = "unmatched")]
    pub label: Option<String>,
    pub rule_used: Option<usize>,
    pub latency_ms: u64,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Result of one profile over one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerAnnotations {
    pub worker_id: String,
    pub slug: String,
    /// Matched labels in instance order.
    pub records: Vec<LabelRecord>,
    pub unmatched: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRun {
    pub workers: Vec<WorkerAnnotations>,
    /// Every (profile, instance) outcome: profiles in input order, instances in dataset order.
    pub outcomes: Vec<AnnotationOutcome>,
}

impl AnnotationRun {
    pub fn failed(&self) -> usize {
        self.workers.iter().map(|w| w.failed).sum()
    }

    pub fn unmatched(&self) -> usize {
        self.workers.iter().map(|w| w.unmatched).sum()
    }
}

enum Caller {
    Http(HttpClient),
    Fixtures(FixtureClient),
}

fn call_with_retries(
    caller: &Caller,
    profile: &LlmWorkerProfile,
    slug: &str,
    instance_id: &str,
    prompt: &str,
) -> (Result<String, CallError>, u32) {
    let mut attempt = 0;
    loop {
        attempt += 1;
        let result = match caller {
            Caller::Http(c) => c.complete(profile, prompt),
            Caller::Fixtures(c) => c.complete(slug, instance_id),
        };
        match result {
            Err(e) if e.retryable && attempt <= profile.max_retries => {
                let wait = profile.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(20));
                log::warn!("{slug} {instance_id}: attempt {attempt} failed ({}); retrying in {wait} ms", e.message);
                std::thread::sleep(Duration::from_millis(wait));
            }
            other => return (other, attempt),
        }
    }
}

fn annotate_one(
    caller: &Caller,
    profile: &LlmWorkerProfile,
    rules: &RuleSet,
    d: &Dataset,
    index: usize,
) -> Result<AnnotationOutcome, AnnotateError> {
    let instance = &d.instances[index];
    let prompt = render_prompt(profile, instance, &d.label_space)?;
    let slug = profile.slug();
    let start = Instant::now();
    let (result, attempts) = call_with_retries(caller, profile, &slug, &instance.id, &prompt);
    let latency_ms = start.elapsed().as_millis() as u64;
    let mut outcome = AnnotationOutcome {
        instance_id: instance.id.clone(),
        worker_id: profile.worker_id(),
        raw_output: String::new(),
        label: None,
        rule_used: None,
        latency_ms,
        attempts,
        failure: None,
    };
    match result {
        Ok(raw) => {
            let n = normalize_output(&raw, &d.label_space, instance, rules);
            outcome.raw_output = raw;
            outcome.label = n.label;
            outcome.rule_used = n.rule;
        }
        Err(e) => {
            log::error!("{slug} {}: {}", instance.id, e.message);
            outcome.failure = Some(e.message);
        }
    }
    Ok(outcome)
}

/// Runs every profile over every instance of `d`. Calls that still fail
/// after retries are recorded as failed outcomes and the run continues.
pub fn annotate_dataset(profiles: &[LlmWorkerProfile], d: &Dataset, backend: &Backend) -> Result<AnnotationRun, AnnotateError> {
    if let Some(inst) = d.instances.iter().find(|i| i.text.is_none()) {
        return Err(AnnotateError::MissingText(inst.id.clone()));
    }
    let mut compiled = Vec::with_capacity(profiles.len());
    for p in profiles {
        p.validate()?;
        compiled.push(RuleSet::compile(&p.rules)?);
        // Surface template problems before any request goes out.
        for inst in &d.instances {
            render_prompt(p, inst, &d.label_space)?;
        }
    }
    let caller = match backend {
        Backend::Http { api_key: None } => return Err(AnnotateError::MissingApiKey),
        Backend::Http { api_key } => Caller::Http(HttpClient::new(api_key.clone()).map_err(|e| AnnotateError::Client(e.message))?),
        Backend::Fixtures(dir) => Caller::Fixtures(FixtureClient::new(dir.clone())),
    };

    let mut run = AnnotationRun { workers: Vec::new(), outcomes: Vec::new() };
    for (profile, rules) in profiles.iter().zip(&compiled) {
        let n = d.instances.len();
        let slots: Vec<Mutex<Option<Result<AnnotationOutcome, AnnotateError>>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..profile.max_concurrent.min(n).max(1) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let out = annotate_one(&caller, profile, rules, d, i);
                    *slots[i].lock().unwrap() = Some(out);
                });
            }
        });
        let mut outcomes = Vec::with_capacity(n);
        for slot in slots {
            outcomes.push(slot.into_inner().unwrap().expect("every slot is filled")?);
        }
        let records: Vec<LabelRecord> = outcomes
            .iter()
            .filter_map(|o| o.label.as_ref().map(|l| LabelRecord::new(&o.instance_id, &o.worker_id, l)))
            .collect();
        let failed = outcomes.iter().filter(|o| o.failure.is_some()).count();
        let unmatched = outcomes.iter().filter(|o| o.failure.is_none() && o.label.is_none()).count();
        log::info!("{}: {} labels, {unmatched} unmatched, {failed} failed", profile.worker_id(), records.len());
        run.workers.push(WorkerAnnotations { worker_id: profile.worker_id(), slug: profile.slug(), records, unmatched, failed });
        run.outcomes.extend(outcomes);
    }
    Ok(run)
}

/// Writes `<slug>.csv` per worker and `outcomes.jsonl` into `dir`.
/// Returns the CSV paths in profile order.
pub fn write_annotation_run(run: &AnnotationRun, dir: &Path) -> Result<Vec<PathBuf>, AnnotateError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AnnotateError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut paths = Vec::new();
    for w in &run.workers {
        let path = dir.join(format!("{}.csv", w.slug));
        write_labels_csv(&path, &w.records)?;
        paths.push(path);
    }
    let log_path = dir.join("outcomes.jsonl");
    let mut f = fs::File::create(&log_path).map_err(io(&log_path))?;
    for o in &run.outcomes {
        let line = serde_json::to_string(o).expect("outcome serializes");
        writeln!(f, "{line}").map_err(io(&log_path))?;
    }
    Ok(paths)
}
