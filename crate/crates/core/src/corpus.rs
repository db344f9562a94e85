//! Retrieval corpus data model and BEIR-compatible I/O.
//!
//! Corpora and query sets are JSON-lines files (`_id`/`title`/`text`), and
//! relevance judgments are TREC-style TSV. Everything is immutable after
//! loading and safe to share across threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: malformed line: {source}")]
    MalformedLine {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("{path}:{line}: missing or empty `_id`")]
    MissingId { path: String, line: usize },
    #[error("{path}:{line}: document has neither title nor text")]
    EmptyDocument { path: String, line: usize },
    #[error("{path}:{line}: query text is empty")]
    EmptyQuery { path: String, line: usize },
    #[error("{path}:{line}: expected 3 or 4 columns, found {found}")]
    ColumnCount { path: String, line: usize, found: usize },
    #[error("{path}:{line}: grade {value:?} is not a non-negative integer")]
    BadGrade { path: String, line: usize, value: String },
    #[error("qrels references unknown query ids ({queries}) or doc ids ({docs})")]
    DanglingReference { queries: usize, docs: usize },
    #[error("requested {requested} few-shot pairs but only {available} relevant pairs exist")]
    InsufficientRelevantPairs { requested: usize, available: usize },
    #[error("few-shot sets hold at most {max} examples, requested {requested}")]
    FewShotTooLarge { max: usize, requested: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One corpus document. `title` may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub text: String,
}

impl Document {
    /// Text used downstream: `title` + single space + `text` when the title
    /// is non-empty, else `text` alone.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

/// One evaluation or exemplar query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

/// An ordered document collection with unique ids.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(CorpusError::MissingId {
                    path: "<memory>".into(),
                    line: i + 1,
                });
            }
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    path: "<memory>".into(),
                    line: i + 1,
                    id: doc.id.clone(),
                });
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|i| &self.docs[*i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn size_class(&self) -> CorpusSizeClass {
        CorpusSizeClass::from_len(self.len())
    }
}

/// An ordered query collection with unique ids.
#[derive(Debug, Clone)]
pub struct QuerySet {
    queries: Vec<Query>,
    by_id: HashMap<String, usize>,
}

impl QuerySet {
    pub fn new(queries: Vec<Query>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            if q.id.is_empty() {
                return Err(CorpusError::MissingId {
                    path: "<memory>".into(),
                    line: i + 1,
                });
            }
            if q.text.is_empty() {
                return Err(CorpusError::EmptyQuery {
                    path: "<memory>".into(),
                    line: i + 1,
                });
            }
            if by_id.insert(q.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    path: "<memory>".into(),
                    line: i + 1,
                    id: q.id.clone(),
                });
            }
        }
        Ok(Self { queries, by_id })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.by_id.get(id).map(|i| &self.queries[*i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }
}

/// Graded relevance judgments keyed by (query id, doc id).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Qrels {
    /// query id -> doc id -> grade. BTreeMaps keep iteration deterministic.
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
    /// Number of duplicate (q,d) lines that overwrote an earlier grade.
    #[serde(default)]
    overwrites: usize,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        let prev = self
            .judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
        if prev.is_some() {
            self.overwrites += 1;
        }
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id).and_then(|m| m.get(doc_id)).copied()
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &String> {
        self.judgments.keys()
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn num_judgments(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    /// Count of duplicate lines that overwrote earlier grades during loading.
    pub fn overwrite_count(&self) -> usize {
        self.overwrites
    }

    /// Distinct (query id, doc id) pairs with grade > 0, in deterministic order.
    pub fn relevant_pairs(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for (q, docs) in &self.judgments {
            for (d, grade) in docs {
                if *grade > 0 {
                    out.push((q.as_str(), d.as_str()));
                }
            }
        }
        out
    }

    /// Checks that every judgment references a known query and document.
    /// With `strict` the first violation is an error; otherwise the dangling
    /// counts are returned for the caller to log.
    pub fn validate(
        &self,
        queries: &QuerySet,
        corpus: &Corpus,
        strict: bool,
    ) -> Result<QrelsValidation, CorpusError> {
        let mut dangling_queries = 0usize;
        let mut dangling_docs = 0usize;
        for (q, docs) in &self.judgments {
            if !queries.contains(q) {
                dangling_queries += 1;
            }
            for d in docs.keys() {
                if !corpus.contains(d) {
                    dangling_docs += 1;
                }
            }
        }
        if strict && (dangling_queries > 0 || dangling_docs > 0) {
            return Err(CorpusError::DanglingReference {
                queries: dangling_queries,
                docs: dangling_docs,
            });
        }
        Ok(QrelsValidation {
            dangling_queries,
            dangling_docs,
        })
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), CorpusError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(file);
        for (q, docs) in &self.judgments {
            for (d, grade) in docs {
                writeln!(w, "{q}\t{d}\t{grade}").map_err(|e| io_err(path, e))?;
            }
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QrelsValidation {
    pub dangling_queries: usize,
    pub dangling_docs: usize,
}

/// Which split the few-shot exemplars were sampled from. Test-sourced
/// exemplars trigger the evaluation exclusion rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Test,
}

/// Maximum number of few-shot exemplars a task may carry.
pub const MAX_FEWSHOT: usize = 8;

/// The annotated (query, document) exemplars that define a task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewShotSet {
    pub examples: Vec<(Query, Document)>,
    pub source_split: Split,
}

impl FewShotSet {
    pub fn empty(source_split: Split) -> Self {
        Self {
            examples: Vec::new(),
            source_split,
        }
    }

    pub fn new(examples: Vec<(Query, Document)>, source_split: Split) -> Result<Self, CorpusError> {
        if examples.len() > MAX_FEWSHOT {
            return Err(CorpusError::FewShotTooLarge {
                max: MAX_FEWSHOT,
                requested: examples.len(),
            });
        }
        Ok(Self {
            examples,
            source_split,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Corpus size buckets that select the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSizeClass {
    Small,
    Medium,
    Large,
}

impl CorpusSizeClass {
    /// small < 50k docs, medium 50k-500k, large > 500k.
    pub fn from_len(len: usize) -> Self {
        if len < 50_000 {
            CorpusSizeClass::Small
        } else if len <= 500_000 {
            CorpusSizeClass::Medium
        } else {
            CorpusSizeClass::Large
        }
    }
}

/// Loads a JSON-lines corpus with `_id`, `title`, `text` fields.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let display = path.display().to_string();
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let raw: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                path: display.clone(),
                line: lineno,
                source,
            })?;
        if raw.get("_id").and_then(|v| v.as_str()).unwrap_or("").is_empty() {
            return Err(CorpusError::MissingId {
                path: display.clone(),
                line: lineno,
            });
        }
        let doc: Document =
            serde_json::from_value(raw).map_err(|source| CorpusError::MalformedLine {
                path: display.clone(),
                line: lineno,
                source,
            })?;
        if doc.title.is_empty() && doc.text.is_empty() {
            return Err(CorpusError::EmptyDocument {
                path: display.clone(),
                line: lineno,
            });
        }
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: display.clone(),
                line: lineno,
                id: doc.id,
            });
        }
        docs.push(doc);
    }
    Corpus::new(docs)
}

/// Writes a corpus as JSON-lines, one document per line in corpus order.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in corpus.docs() {
        let line = serde_json::to_string(doc).expect("document serializes");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Loads a JSON-lines query set with `_id` and `text` fields.
pub fn load_queries(path: &Path) -> Result<QuerySet, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let display = path.display().to_string();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let q: Query = serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
            path: display.clone(),
            line: lineno,
            source,
        })?;
        if q.id.is_empty() {
            return Err(CorpusError::MissingId {
                path: display.clone(),
                line: lineno,
            });
        }
        if q.text.is_empty() {
            return Err(CorpusError::EmptyQuery {
                path: display.clone(),
                line: lineno,
            });
        }
        if !seen.insert(q.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: display.clone(),
                line: lineno,
                id: q.id,
            });
        }
        queries.push(q);
    }
    QuerySet::new(queries)
}

/// Writes a query set as JSON-lines.
pub fn write_queries(path: &Path, queries: &QuerySet) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries.queries() {
        let line = serde_json::to_string(q).expect("query serializes");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Loads TREC qrels. Accepts `query-id<TAB>doc-id<TAB>grade`, the legacy
/// whitespace-separated 4-column `query-id 0 doc-id grade`, and an optional
/// header line. Later duplicates overwrite earlier grades; the overwrite
/// count is kept on the result and logged here.
pub fn load_qrels(path: &Path) -> Result<Qrels, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let display = path.display().to_string();
    let mut qrels = Qrels::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        let (query_id, doc_id, grade_str) = match cols.len() {
            3 => (cols[0], cols[1], cols[2]),
            4 => (cols[0], cols[2], cols[3]),
            n => {
                return Err(CorpusError::ColumnCount {
                    path: display.clone(),
                    line: lineno,
                    found: n,
                })
            }
        };
        let grade: u32 = match grade_str.parse() {
            Ok(g) => g,
            Err(_) => {
                // A single non-numeric first line is treated as a header.
                if lineno == 1 {
                    continue;
                }
                return Err(CorpusError::BadGrade {
                    path: display.clone(),
                    line: lineno,
                    value: grade_str.to_string(),
                });
            }
        };
        qrels.insert(query_id, doc_id, grade);
    }
    if qrels.overwrite_count() > 0 {
        log::warn!(
            "{display}: {} duplicate judgment lines overwrote earlier grades",
            qrels.overwrite_count()
        );
    }
    Ok(qrels)
}

/// Samples `k` relevant (query, document) exemplars uniformly without
/// replacement, deterministically for a fixed seed. Only pairs with grade > 0
/// whose ids resolve in `queries` and `corpus` are eligible.
pub fn sample_fewshot(
    qrels: &Qrels,
    queries: &QuerySet,
    corpus: &Corpus,
    k: usize,
    seed: u64,
    source_split: Split,
) -> Result<FewShotSet, CorpusError> {
    if k > MAX_FEWSHOT {
        return Err(CorpusError::FewShotTooLarge {
            max: MAX_FEWSHOT,
            requested: k,
        });
    }
    let eligible: Vec<(&str, &str)> = qrels
        .relevant_pairs()
        .into_iter()
        .filter(|(q, d)| queries.contains(q) && corpus.contains(d))
        .collect();
    if k > eligible.len() {
        return Err(CorpusError::InsufficientRelevantPairs {
            requested: k,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, eligible.len(), k);
    let examples = chosen
        .iter()
        .map(|i| {
            let (q, d) = eligible[i];
            (
                queries.get(q).expect("eligible query resolves").clone(),
                corpus.get(d).expect("eligible doc resolves").clone(),
            )
        })
        .collect();
    FewShotSet::new(examples, source_split)
}

/// Samples `min(n, |corpus|)` documents uniformly without replacement,
/// deterministically for a fixed seed. Output order is the sampling order.
pub fn sample_documents(corpus: &Corpus, n: usize, seed: u64) -> Vec<Document> {
    let amount = n.min(corpus.len());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, corpus.len(), amount)
        .iter()
        .map(|i| corpus.docs()[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_corpus_preserves_order() {
        let f = temp_file("{\"_id\":\"d1\",\"title\":\"\",\"text\":\"a\"}\n{\"_id\":\"d2\",\"title\":\"t\",\"text\":\"b\"}\n");
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.docs()[0].id, "d1");
        assert_eq!(corpus.docs()[1].id, "d2");
        assert_eq!(corpus.docs()[1].full_text(), "t b");
    }

    #[test]
    fn load_corpus_empty_file() {
        let f = temp_file("");
        let corpus = load_corpus(f.path()).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn load_corpus_duplicate_id_names_offender() {
        let f = temp_file("{\"_id\":\"d1\",\"text\":\"a\"}\n{\"_id\":\"d1\",\"text\":\"b\"}\n");
        let err = load_corpus(f.path()).unwrap_err();
        match err {
            CorpusError::DuplicateId { id, line, .. } => {
                assert_eq!(id, "d1");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_corpus_reports_line_numbers_for_bad_json() {
        let f = temp_file("{\"_id\":\"d1\",\"text\":\"a\"}\nnot json\n");
        let err = load_corpus(f.path()).unwrap_err();
        match err {
            CorpusError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_corpus_rejects_missing_id() {
        let f = temp_file("{\"title\":\"t\",\"text\":\"a\"}\n");
        assert!(matches!(
            load_corpus(f.path()).unwrap_err(),
            CorpusError::MissingId { line: 1, .. }
        ));
    }

    #[test]
    fn qrels_three_column_tab() {
        let f = temp_file("q1\td7\t2\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert_eq!(qrels.grade("q1", "d7"), Some(2));
    }

    #[test]
    fn qrels_legacy_four_column() {
        let f = temp_file("q1 0 d7 1\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert_eq!(qrels.grade("q1", "d7"), Some(1));
    }

    #[test]
    fn qrels_bad_grade_reports_line() {
        let f = temp_file("q0\td0\t1\nq1\td7\ttwo\n");
        match load_qrels(f.path()).unwrap_err() {
            CorpusError::BadGrade { line, value, .. } => {
                assert_eq!(line, 2);
                assert_eq!(value, "two");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn qrels_header_line_is_skipped() {
        let f = temp_file("query-id\tcorpus-id\tscore\nq1\td1\t1\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert_eq!(qrels.num_judgments(), 1);
    }

    #[test]
    fn qrels_duplicates_overwrite_with_count() {
        let f = temp_file("q1\td1\t1\nq1\td1\t2\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert_eq!(qrels.grade("q1", "d1"), Some(2));
        assert_eq!(qrels.overwrite_count(), 1);
    }

    #[test]
    fn qrels_wrong_column_count() {
        let f = temp_file("q1\td1\n");
        assert!(matches!(
            load_qrels(f.path()).unwrap_err(),
            CorpusError::ColumnCount { found: 2, .. }
        ));
    }

    fn toy_task() -> (Corpus, QuerySet, Qrels) {
        let docs = (0..10)
            .map(|i| Document {
                id: format!("d{i}"),
                title: String::new(),
                text: format!("text {i}"),
            })
            .collect();
        let corpus = Corpus::new(docs).unwrap();
        let queries = QuerySet::new(
            (0..10)
                .map(|i| Query {
                    id: format!("q{i}"),
                    text: format!("query {i}"),
                })
                .collect(),
        )
        .unwrap();
        let mut qrels = Qrels::new();
        for i in 0..8 {
            qrels.insert(&format!("q{i}"), &format!("d{i}"), 1);
        }
        qrels.insert("q8", "d8", 0); // judged non-relevant: never sampled
        (corpus, queries, qrels)
    }

    #[test]
    fn fewshot_k_zero_is_empty() {
        let (corpus, queries, qrels) = toy_task();
        let set = sample_fewshot(&qrels, &queries, &corpus, 0, 1, Split::Dev).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.source_split, Split::Dev);
    }

    #[test]
    fn fewshot_same_seed_same_set() {
        let (corpus, queries, qrels) = toy_task();
        let a = sample_fewshot(&qrels, &queries, &corpus, 4, 42, Split::Test).unwrap();
        let b = sample_fewshot(&qrels, &queries, &corpus, 4, 42, Split::Test).unwrap();
        assert_eq!(a.examples, b.examples);
    }

    #[test]
    fn fewshot_k_equals_pool_takes_all() {
        let (corpus, queries, qrels) = toy_task();
        let set = sample_fewshot(&qrels, &queries, &corpus, 8, 7, Split::Test).unwrap();
        assert_eq!(set.len(), 8);
        let mut ids: Vec<&str> = set.examples.iter().map(|(q, _)| q.id.as_str()).collect();
        ids.sort_unstable();
        assert_eq!(ids, ["q0", "q1", "q2", "q3", "q4", "q5", "q6", "q7"]);
    }

    #[test]
    fn fewshot_only_relevant_pairs() {
        let (corpus, queries, qrels) = toy_task();
        for seed in 0..20u64 {
            let set = sample_fewshot(&qrels, &queries, &corpus, 5, seed, Split::Test).unwrap();
            for (q, d) in &set.examples {
                assert!(qrels.grade(&q.id, &d.id).unwrap() > 0);
            }
        }
    }

    #[test]
    fn fewshot_insufficient_pairs_errors() {
        let (corpus, queries, mut qrels) = toy_task();
        qrels = {
            let mut fresh = Qrels::new();
            fresh.insert("q0", "d0", 1);
            let _ = qrels;
            fresh
        };
        assert!(matches!(
            sample_fewshot(&qrels, &queries, &corpus, 2, 0, Split::Test).unwrap_err(),
            CorpusError::InsufficientRelevantPairs { requested: 2, available: 1 }
        ));
    }

    #[test]
    fn sample_documents_full_and_empty() {
        let (corpus, _, _) = toy_task();
        assert!(sample_documents(&corpus, 0, 3).is_empty());
        let all = sample_documents(&corpus, 100, 3);
        assert_eq!(all.len(), 10);
        let mut ids: Vec<&str> = all.iter().map(|d| d.id.as_str()).collect();
        ids.sort_unstable();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn sample_documents_deterministic() {
        let (corpus, _, _) = toy_task();
        let a: Vec<String> = sample_documents(&corpus, 5, 9).into_iter().map(|d| d.id).collect();
        let b: Vec<String> = sample_documents(&corpus, 5, 9).into_iter().map(|d| d.id).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn size_class_boundaries() {
        assert_eq!(CorpusSizeClass::from_len(0), CorpusSizeClass::Small);
        assert_eq!(CorpusSizeClass::from_len(49_999), CorpusSizeClass::Small);
        assert_eq!(CorpusSizeClass::from_len(50_000), CorpusSizeClass::Medium);
        assert_eq!(CorpusSizeClass::from_len(500_000), CorpusSizeClass::Medium);
        assert_eq!(CorpusSizeClass::from_len(500_001), CorpusSizeClass::Large);
    }

    #[test]
    fn qrels_validate_flags_dangling_refs() {
        let (corpus, queries, mut qrels) = toy_task();
        qrels.insert("ghost", "d0", 1);
        qrels.insert("q0", "phantom", 1);
        let report = qrels.validate(&queries, &corpus, false).unwrap();
        assert_eq!(report.dangling_queries, 1);
        assert_eq!(report.dangling_docs, 1);
        assert!(qrels.validate(&queries, &corpus, true).is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let f = temp_file(
            "{\"_id\":\"d1\",\"title\":\"\",\"text\":\"alpha beta\"}\n{\"_id\":\"d2\",\"title\":\"T\",\"text\":\"gamma\"}\n",
        );
        let corpus = load_corpus(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_corpus(out.path(), &corpus).unwrap();
        let reloaded = load_corpus(out.path()).unwrap();
        assert_eq!(corpus.docs(), reloaded.docs());
        // A second write is byte-identical: the format is a fixed point.
        let out2 = tempfile::NamedTempFile::new().unwrap();
        write_corpus(out2.path(), &reloaded).unwrap();
        assert_eq!(
            std::fs::read(out.path()).unwrap(),
            std::fs::read(out2.path()).unwrap()
        );
    }
}
