//! Prompt-based synthetic query generation.
//!
//! Renders task prompts from few-shot exemplars, fans requests out to a
//! completion backend, parses completions into queries, and persists the
//! resulting (query, document) training pairs together with every
//! generation failure.

mod backend;
mod stub;
mod template;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, FewShotSet};

pub use backend::{
    complete_with_retry, BackendError, CompletionBackend, CompletionRequest, RemoteBackend,
    RetryPolicy,
};
pub use stub::{stub_generate, StubBackend};
pub use template::{
    build_prompt, parse_completion, parse_zero_shot_completion, zero_shot_prompt, PromptBudget,
    PromptTemplate, ZERO_SHOT_INSTRUCTION,
};

/// Template id recorded on pairs produced by the universal zero-shot prompt.
pub const ZERO_SHOT_TEMPLATE_ID: &str = "zero-shot";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {id}: {reason}")]
    BadTemplate { id: String, reason: String },
    #[error("prompt budget {budget} tokens is too small for the bare target ({required} tokens)")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("invalid generation config: {0}")]
    BadConfig(String),
    #[error("backend {name} unreachable: no completions received ({transport_errors} transport errors)")]
    BackendUnreachable { name: String, transport_errors: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Why a completion was dropped instead of becoming a synthetic pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    MissingAnchor,
    EmptyAfterStrip,
    OverLength,
}

/// Whether a training pair came from the generator or from the human
/// few-shot exemplars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Generated,
    Fewshot,
}

/// A synthetic (query, source document) training pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub query: String,
    pub doc_id: String,
    pub origin: Origin,
    pub template_id: String,
    /// Raw completion retained in memory for audit; not part of the
    /// pairs-file schema.
    #[serde(skip)]
    pub raw_completion: String,
}

/// A completion that failed to parse into a query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub doc_id: String,
    pub raw_completion: String,
    pub reason: FailureReason,
}

/// Sampling and budget knobs for a generation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub samples_per_doc: usize,
    pub max_output_tokens: usize,
    pub prompt_token_budget: usize,
    pub example_doc_cap: usize,
    pub example_query_cap: usize,
    /// Queries longer than this many whitespace tokens are over-length
    /// failures. `None` disables the cap.
    pub max_query_words: Option<usize>,
    /// Seed for the stub backend; remote backends ignore it.
    pub seed: u64,
    /// Bound on concurrent in-flight backend requests.
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            samples_per_doc: 8,
            max_output_tokens: 64,
            prompt_token_budget: 1024,
            example_doc_cap: 128,
            example_query_cap: 64,
            max_query_words: Some(64),
            seed: 0,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if !(self.temperature >= 0.0) {
            return Err(PromptError::BadConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.samples_per_doc < 1 {
            return Err(PromptError::BadConfig("samples_per_doc must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(PromptError::BadConfig("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> PromptBudget {
        PromptBudget {
            max_tokens: self.prompt_token_budget,
            example_doc_cap: self.example_doc_cap,
            example_query_cap: self.example_query_cap,
        }
    }
}

/// Counters for one generation run. `requested = succeeded + failed` and
/// `pairs = succeeded - deduped` hold for every run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenStats {
    pub docs_total: usize,
    pub docs_skipped: usize,
    pub requested: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub deduped: usize,
    pub transport_errors: usize,
}

/// The output of a generation run: surviving pairs, every failure, counters.
#[derive(Debug, Clone)]
pub struct GenerationRun {
    pub pairs: Vec<SyntheticPair>,
    pub failures: Vec<GenerationFailure>,
    pub stats: GenStats,
}

enum PromptMode<'a> {
    FewShot {
        template: &'a PromptTemplate,
        fewshot: &'a FewShotSet,
    },
    ZeroShot,
}

impl PromptMode<'_> {
    fn template_id(&self) -> &str {
        match self {
            PromptMode::FewShot { template, .. } => &template.id,
            PromptMode::ZeroShot => ZERO_SHOT_TEMPLATE_ID,
        }
    }

    fn render(&self, doc: &Document, config: &GenerationConfig) -> Result<String, PromptError> {
        match self {
            PromptMode::FewShot { template, fewshot } => {
                build_prompt(template, fewshot, doc, &config.budget())
            }
            PromptMode::ZeroShot => Ok(zero_shot_prompt(doc)),
        }
    }

    fn parse(&self, completion: &str, config: &GenerationConfig) -> Result<String, FailureReason> {
        match self {
            PromptMode::FewShot { template, .. } => {
                parse_completion(template, completion, config.max_query_words)
            }
            PromptMode::ZeroShot => parse_zero_shot_completion(completion, config.max_query_words),
        }
    }
}

struct DocOutcome {
    pairs: Vec<(usize, SyntheticPair)>,
    failures: Vec<(usize, GenerationFailure)>,
    requested: usize,
    skipped: bool,
    transport_errors: usize,
}

fn process_doc(
    doc: &Document,
    mode: &PromptMode,
    config: &GenerationConfig,
    backend: &dyn CompletionBackend,
) -> DocOutcome {
    let mut out = DocOutcome {
        pairs: Vec::new(),
        failures: Vec::new(),
        requested: 0,
        skipped: false,
        transport_errors: 0,
    };
    let prompt = match mode.render(doc, config) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("skipping doc {}: {e}", doc.id);
            out.skipped = true;
            return out;
        }
    };
    let request = CompletionRequest {
        prompt: &prompt,
        temperature: config.temperature,
        max_tokens: config.max_output_tokens,
        n: config.samples_per_doc,
        doc,
        seed: config.seed,
    };
    let completions = match complete_with_retry(backend, &request, &config.retry) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("skipping doc {} after retry exhaustion: {e}", doc.id);
            out.skipped = true;
            out.transport_errors = 1;
            return out;
        }
    };
    for (idx, completion) in completions.into_iter().enumerate() {
        out.requested += 1;
        match mode.parse(&completion, config) {
            Ok(query) => out.pairs.push((
                idx,
                SyntheticPair {
                    query,
                    doc_id: doc.id.clone(),
                    origin: Origin::Generated,
                    template_id: mode.template_id().to_string(),
                    raw_completion: completion,
                },
            )),
            Err(reason) => out.failures.push((
                idx,
                GenerationFailure {
                    doc_id: doc.id.clone(),
                    raw_completion: completion,
                    reason,
                },
            )),
        }
    }
    out
}

fn run_generation(
    docs: &[Document],
    mode: &PromptMode,
    config: &GenerationConfig,
    backend: &dyn CompletionBackend,
) -> Result<GenerationRun, PromptError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| PromptError::BadConfig(e.to_string()))?;
    let outcomes: Vec<DocOutcome> = pool.install(|| {
        docs.par_iter()
            .map(|doc| process_doc(doc, mode, config, backend))
            .collect()
    });

    let mut stats = GenStats {
        docs_total: docs.len(),
        ..GenStats::default()
    };
    let mut tagged_pairs: Vec<(usize, SyntheticPair)> = Vec::new();
    let mut tagged_failures: Vec<(usize, GenerationFailure)> = Vec::new();
    for outcome in outcomes {
        stats.requested += outcome.requested;
        stats.transport_errors += outcome.transport_errors;
        if outcome.skipped {
            stats.docs_skipped += 1;
        }
        stats.succeeded += outcome.pairs.len();
        stats.failed += outcome.failures.len();
        tagged_pairs.extend(outcome.pairs);
        tagged_failures.extend(outcome.failures);
    }

    if stats.requested == 0 && stats.transport_errors > 0 {
        return Err(PromptError::BackendUnreachable {
            name: backend.name().to_string(),
            transport_errors: stats.transport_errors,
        });
    }

    // Deterministic output order regardless of completion scheduling.
    tagged_pairs.sort_by(|(ia, a), (ib, b)| (a.doc_id.as_str(), ia).cmp(&(b.doc_id.as_str(), ib)));
    tagged_failures.sort_by(|(ia, a), (ib, b)| (a.doc_id.as_str(), ia).cmp(&(b.doc_id.as_str(), ib)));

    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut pairs = Vec::with_capacity(tagged_pairs.len());
    for (_, pair) in tagged_pairs {
        if seen.insert((pair.query.clone(), pair.doc_id.clone())) {
            pairs.push(pair);
        } else {
            stats.deduped += 1;
        }
    }
    let failures = tagged_failures.into_iter().map(|(_, f)| f).collect();

    Ok(GenerationRun {
        pairs,
        failures,
        stats,
    })
}

/// Generates synthetic pairs for every document using the task template and
/// few-shot exemplars.
pub fn generate_synthetic(
    docs: &[Document],
    template: &PromptTemplate,
    fewshot: &FewShotSet,
    config: &GenerationConfig,
    backend: &dyn CompletionBackend,
) -> Result<GenerationRun, PromptError> {
    template.validate()?;
    run_generation(docs, &PromptMode::FewShot { template, fewshot }, config, backend)
}

/// Generates synthetic pairs with the universal zero-shot prompt.
pub fn generate_zero_shot(
    docs: &[Document],
    config: &GenerationConfig,
    backend: &dyn CompletionBackend,
) -> Result<GenerationRun, PromptError> {
    run_generation(docs, &PromptMode::ZeroShot, config, backend)
}

/// Few-shot exemplars as training pairs; they bypass consistency filtering.
pub fn fewshot_pairs(fewshot: &FewShotSet, template_id: &str) -> Vec<SyntheticPair> {
    fewshot
        .examples
        .iter()
        .map(|(q, d)| SyntheticPair {
            query: q.text.clone(),
            doc_id: d.id.clone(),
            origin: Origin::Fewshot,
            template_id: template_id.to_string(),
            raw_completion: String::new(),
        })
        .collect()
}

fn io_err(path: &Path, source: std::io::Error) -> PromptError {
    PromptError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes pairs as JSON-lines with fields `query`, `doc_id`, `origin`,
/// `template_id`.
pub fn write_pairs(path: &Path, pairs: &[SyntheticPair]) -> Result<(), PromptError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for pair in pairs {
        let line = serde_json::to_string(pair).expect("pair serializes");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_pairs(path: &Path) -> Result<Vec<SyntheticPair>, PromptError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: SyntheticPair =
            serde_json::from_str(&line).map_err(|e| PromptError::BadConfig(format!(
                "{}:{}: {e}",
                path.display(),
                idx + 1
            )))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Writes generation failures as JSON-lines with a `reason` field.
pub fn write_failures(path: &Path, failures: &[GenerationFailure]) -> Result<(), PromptError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for failure in failures {
        let line = serde_json::to_string(failure).expect("failure serializes");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document {
                id: format!("d{i:03}"),
                title: String::new(),
                text: format!("document number {i} talks about topic {}", i % 3),
            })
            .collect()
    }

    fn template() -> PromptTemplate {
        PromptTemplate::new("test", "Passage: {passage}", "Query: {query}").unwrap()
    }

    fn quick_config() -> GenerationConfig {
        GenerationConfig {
            seed: 1,
            max_in_flight: 2,
            retry: RetryPolicy {
                max_attempts: 3,
                base_delay_ms: 0,
                max_delay_ms: 0,
            },
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn ten_docs_eight_samples_gives_eighty_before_dedup() {
        let docs = docs(10);
        let config = quick_config();
        let backend = StubBackend::new(config.seed);
        let run = generate_synthetic(
            &docs,
            &template(),
            &FewShotSet::empty(Split::Test),
            &config,
            &backend,
        )
        .unwrap();
        assert_eq!(run.stats.requested, 80);
        assert_eq!(run.stats.succeeded + run.stats.failed, run.stats.requested);
        assert_eq!(run.stats.failed, 0);
        assert_eq!(run.pairs.len(), run.stats.succeeded - run.stats.deduped);
    }

    #[test]
    fn stub_runs_are_deterministic() {
        let docs = docs(6);
        let config = quick_config();
        let backend = StubBackend::new(config.seed);
        let shots = FewShotSet::empty(Split::Test);
        let a = generate_synthetic(&docs, &template(), &shots, &config, &backend).unwrap();
        let b = generate_synthetic(&docs, &template(), &shots, &config, &backend).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.failures, b.failures);
        assert_eq!(a.stats, b.stats);

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        write_pairs(&p1, &a.pairs).unwrap();
        write_pairs(&p2, &b.pairs).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    /// Backend that replies with the same completion every time.
    struct ConstantBackend;
    impl CompletionBackend for ConstantBackend {
        fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
            Ok(vec!["always the same query\n".to_string(); req.n])
        }
        fn name(&self) -> &str {
            "constant"
        }
    }

    #[test]
    fn identical_completions_dedup_to_one_pair() {
        let docs = docs(1);
        let config = quick_config();
        let run = generate_synthetic(
            &docs,
            &template(),
            &FewShotSet::empty(Split::Test),
            &config,
            &ConstantBackend,
        )
        .unwrap();
        assert_eq!(run.pairs.len(), 1);
        assert_eq!(run.stats.deduped, 7);
        assert_eq!(run.stats.failed, 0);
    }

    /// Backend that fails transport twice per doc, then succeeds.
    struct FlakyBackend {
        calls: AtomicUsize,
    }
    impl CompletionBackend for FlakyBackend {
        fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n % 3 < 2 {
                Err(BackendError::Transport("connection reset".into()))
            } else {
                Ok(vec![format!("query for {}\n", req.doc.id); req.n])
            }
        }
        fn name(&self) -> &str {
            "flaky"
        }
    }

    #[test]
    fn transport_errors_are_retried() {
        let docs = docs(2);
        let mut config = quick_config();
        config.max_in_flight = 1;
        let backend = FlakyBackend {
            calls: AtomicUsize::new(0),
        };
        let run = generate_synthetic(
            &docs,
            &template(),
            &FewShotSet::empty(Split::Test),
            &config,
            &backend,
        )
        .unwrap();
        assert_eq!(run.stats.docs_skipped, 0);
        assert_eq!(run.pairs.len(), 2); // one distinct query per doc after dedup
    }

    /// Backend that always fails.
    struct DeadBackend;
    impl CompletionBackend for DeadBackend {
        fn complete(&self, _req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
            Err(BackendError::Transport("connection refused".into()))
        }
        fn name(&self) -> &str {
            "dead"
        }
    }

    #[test]
    fn dead_backend_reports_unreachable() {
        let docs = docs(3);
        let config = quick_config();
        let err = generate_synthetic(
            &docs,
            &template(),
            &FewShotSet::empty(Split::Test),
            &config,
            &DeadBackend,
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::BackendUnreachable { .. }));
    }

    /// Backend producing one good and one malformed completion per doc.
    struct HalfBadBackend;
    impl CompletionBackend for HalfBadBackend {
        fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
            let mut out = vec![format!("good query about {}\n", req.doc.id)];
            out.push("   ".to_string());
            out.truncate(req.n);
            Ok(out)
        }
        fn name(&self) -> &str {
            "halfbad"
        }
    }

    #[test]
    fn failures_are_counted_and_kept() {
        let docs = docs(4);
        let mut config = quick_config();
        config.samples_per_doc = 2;
        let run = generate_synthetic(
            &docs,
            &template(),
            &FewShotSet::empty(Split::Test),
            &config,
            &HalfBadBackend,
        )
        .unwrap();
        assert_eq!(run.stats.requested, 8);
        assert_eq!(run.stats.succeeded, 4);
        assert_eq!(run.stats.failed, 4);
        assert_eq!(run.failures.len(), 4);
        assert!(run
            .failures
            .iter()
            .all(|f| f.reason == FailureReason::EmptyAfterStrip));
    }

    #[test]
    fn raw_completions_reparse_to_query_text() {
        let docs = docs(8);
        let config = quick_config();
        let backend = StubBackend::new(config.seed);
        let t = template();
        let run =
            generate_synthetic(&docs, &t, &FewShotSet::empty(Split::Test), &config, &backend)
                .unwrap();
        assert!(!run.pairs.is_empty());
        for pair in &run.pairs {
            let reparsed =
                parse_completion(&t, &pair.raw_completion, config.max_query_words).unwrap();
            assert_eq!(reparsed, pair.query);
        }
    }

    #[test]
    fn pairs_file_round_trip() {
        let docs = docs(3);
        let config = quick_config();
        let backend = StubBackend::new(config.seed);
        let run = generate_synthetic(
            &docs,
            &template(),
            &FewShotSet::empty(Split::Test),
            &config,
            &backend,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        write_pairs(&path, &run.pairs).unwrap();
        let loaded = load_pairs(&path).unwrap();
        assert_eq!(loaded.len(), run.pairs.len());
        for (a, b) in loaded.iter().zip(run.pairs.iter()) {
            assert_eq!(a.query, b.query);
            assert_eq!(a.doc_id, b.doc_id);
            assert_eq!(a.origin, b.origin);
            assert_eq!(a.template_id, b.template_id);
        }
    }

    #[test]
    fn zero_shot_generation_labels_template() {
        let docs = docs(2);
        let config = quick_config();
        let backend = StubBackend::new(config.seed);
        let run = generate_zero_shot(&docs, &config, &backend).unwrap();
        assert!(!run.pairs.is_empty());
        assert!(run.pairs.iter().all(|p| p.template_id == ZERO_SHOT_TEMPLATE_ID));
    }
}
