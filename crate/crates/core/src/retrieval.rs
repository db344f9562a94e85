//! Exact maximum-inner-product retrieval over document embeddings.
//!
//! Brute-force scoring only: desk-scale corpora keep it fast, testable, and
//! exactly equal to the naive oracle. Ties break by ascending doc id so
//! rankings are a total order.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::encoder::DualEncoderModel;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("index was built with model {index_fingerprint} but search uses {model_fingerprint}")]
    FingerprintMismatch {
        index_fingerprint: String,
        model_fingerprint: String,
    },
    #[error("doc id {0:?} is not in the index")]
    UnknownDoc(String),
    #[error("index {path}: {reason}")]
    BadIndex { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> RetrievalError {
    RetrievalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One ranked result list: (doc id, score) entries with non-increasing
/// scores and no duplicate documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(d, _)| d.as_str()).collect()
    }
}

/// Dense embedding index: one row per document, in corpus order.
#[derive(Debug, Clone)]
pub struct DenseIndex<S> {
    doc_ids: Vec<String>,
    /// |D| x dim, row-major.
    embeddings: Vec<S>,
    dim: usize,
    model_fingerprint: String,
}

impl<S: Scalar> DenseIndex<S> {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn embedding_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.embeddings.len() * 4);
        for v in &self.embeddings {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
        out
    }

    /// Errors unless the model is the one the index was built with.
    pub fn verify_model(&self, model: &DualEncoderModel<S>) -> Result<(), RetrievalError> {
        let fp = model.fingerprint();
        if fp != self.model_fingerprint {
            return Err(RetrievalError::FingerprintMismatch {
                index_fingerprint: self.model_fingerprint.clone(),
                model_fingerprint: fp,
            });
        }
        Ok(())
    }

    /// All inner products against one query embedding, in corpus order.
    pub fn score_all(&self, query_embedding: &[S]) -> Vec<f64> {
        (0..self.len())
            .map(|i| dot(self.row(i), query_embedding).to_f64().unwrap_or(f64::NAN))
            .collect()
    }

    /// Rank of `doc_id` (1-based) under the (score desc, doc id asc) total
    /// order for the given query embedding.
    pub fn rank_of(&self, query_embedding: &[S], doc_id: &str) -> Result<usize, RetrievalError> {
        let target = self
            .doc_ids
            .iter()
            .position(|d| d == doc_id)
            .ok_or_else(|| RetrievalError::UnknownDoc(doc_id.to_string()))?;
        let scores = self.score_all(query_embedding);
        let target_score = scores[target];
        let mut better = 0usize;
        for (i, score) in scores.iter().enumerate() {
            if i == target {
                continue;
            }
            match score.partial_cmp(&target_score).unwrap_or(Ordering::Equal) {
                Ordering::Greater => better += 1,
                Ordering::Equal => {
                    if self.doc_ids[i] < self.doc_ids[target] {
                        better += 1;
                    }
                }
                Ordering::Less => {}
            }
        }
        Ok(better + 1)
    }
}

/// Encodes every document once. Deterministic for a fixed model; the model
/// fingerprint is recorded for the search-time guard.
pub fn build_index<S: Scalar>(
    corpus: &Corpus,
    model: &DualEncoderModel<S>,
) -> Result<DenseIndex<S>, RetrievalError> {
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let dim = model.output_dim();
    let rows: Vec<Vec<S>> = corpus
        .docs()
        .par_iter()
        .map(|doc| model.encode(&doc.full_text()))
        .collect();
    let mut embeddings = Vec::with_capacity(corpus.len() * dim);
    for row in rows {
        embeddings.extend_from_slice(&row);
    }
    Ok(DenseIndex {
        doc_ids: corpus.docs().iter().map(|d| d.id.clone()).collect(),
        embeddings,
        dim,
        model_fingerprint: model.fingerprint(),
    })
}

/// Exact top-k by inner product; ties break by ascending doc id. Requesting
/// more than |D| returns |D| entries.
pub fn search<S: Scalar>(index: &DenseIndex<S>, query_embedding: &[S], k: usize) -> Vec<(String, f64)> {
    let scores = index.score_all(query_embedding);
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| index.doc_ids[a].cmp(&index.doc_ids[b]))
    });
    order
        .into_iter()
        .take(k)
        .map(|i| (index.doc_ids[i].clone(), scores[i]))
        .collect()
}

/// Encodes the query text with the index's model and searches. This is the
/// fingerprint-guarded entry point.
pub fn search_text<S: Scalar>(
    index: &DenseIndex<S>,
    model: &DualEncoderModel<S>,
    query_id: &str,
    query_text: &str,
    k: usize,
) -> Result<RankedList, RetrievalError> {
    index.verify_model(model)?;
    if query_text.trim().is_empty() {
        log::warn!("query {query_id} has empty text; ranking is degenerate");
    }
    let embedding = model.encode(query_text);
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries: search(index, &embedding, k),
    })
}

/// A set of ranked lists, one per query, in input query order.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub run_tag: String,
    pub rankings: Vec<RankedList>,
}

/// Searches every query at depth `k` and assembles a run.
pub fn produce_run<S: Scalar>(
    index: &DenseIndex<S>,
    model: &DualEncoderModel<S>,
    queries: &[(String, String)],
    k: usize,
    run_tag: &str,
) -> Result<Run, RetrievalError> {
    index.verify_model(model)?;
    let rankings = queries
        .par_iter()
        .map(|(id, text)| {
            if text.trim().is_empty() {
                log::warn!("query {id} has empty text; ranking is degenerate");
            }
            let embedding = model.encode(text);
            RankedList {
                query_id: id.clone(),
                entries: search(index, &embedding, k),
            }
        })
        .collect();
    Ok(Run {
        run_tag: run_tag.to_string(),
        rankings,
    })
}

/// Writes a run in TREC format: `query-id Q0 doc-id rank score run-tag`,
/// ranks starting at 1, scores with 6 decimal places.
pub fn write_run(path: &Path, run: &Run) -> Result<(), RetrievalError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for ranking in &run.rankings {
        for (rank, (doc_id, score)) in ranking.entries.iter().enumerate() {
            writeln!(
                w,
                "{} Q0 {} {} {:.6} {}",
                ranking.query_id,
                doc_id,
                rank + 1,
                score,
                run.run_tag
            )
            .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize, Deserialize)]
struct IndexSidecar {
    doc_ids: Vec<String>,
    fingerprint: String,
    rows: usize,
    dim: usize,
}

const INDEX_MAGIC: &[u8; 8] = b"QFINDX01";

/// Persists the index: binary f32 matrix plus a JSON sidecar with ids,
/// fingerprint, and dimensions.
pub fn save_index<S: Scalar>(index: &DenseIndex<S>, path: &Path) -> Result<(), RetrievalError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(INDEX_MAGIC).map_err(|e| io_err(path, e))?;
    for v in &index.embeddings {
        w.write_f32::<LittleEndian>(v.to_f32_lossy())
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    let sidecar = IndexSidecar {
        doc_ids: index.doc_ids.clone(),
        fingerprint: index.model_fingerprint.clone(),
        rows: index.len(),
        dim: index.dim,
    };
    let sidecar_file = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&sidecar_file, json).map_err(|e| io_err(&sidecar_file, e))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

pub fn load_index<S: Scalar>(path: &Path) -> Result<DenseIndex<S>, RetrievalError> {
    let sidecar_file = sidecar_path(path);
    let json = std::fs::read_to_string(&sidecar_file).map_err(|e| io_err(&sidecar_file, e))?;
    let sidecar: IndexSidecar =
        serde_json::from_str(&json).map_err(|e| RetrievalError::BadIndex {
            path: sidecar_file.display().to_string(),
            reason: e.to_string(),
        })?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != INDEX_MAGIC {
        return Err(RetrievalError::BadIndex {
            path: path.display().to_string(),
            reason: "bad magic".into(),
        });
    }
    let count = sidecar.rows * sidecar.dim;
    let mut embeddings = Vec::with_capacity(count);
    for _ in 0..count {
        let v = r.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?;
        embeddings.push(S::from_f32_exact(v));
    }
    if sidecar.doc_ids.len() != sidecar.rows {
        return Err(RetrievalError::BadIndex {
            path: sidecar_file.display().to_string(),
            reason: "doc id count does not match row count".into(),
        });
    }
    Ok(DenseIndex {
        doc_ids: sidecar.doc_ids,
        embeddings,
        dim: sidecar.dim,
        model_fingerprint: sidecar.fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::encoder::Featurizer;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document {
                    id: format!("d{i:02}"),
                    title: String::new(),
                    text: (*t).to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn model(seed: u64) -> DualEncoderModel<f64> {
        DualEncoderModel::init(Featurizer::new(512, &[1, 2]), 12, 8, true, seed)
    }

    #[test]
    fn one_doc_corpus_builds_one_row() {
        let c = corpus(&["hello world"]);
        let m = model(1);
        let index = build_index(&c, &m).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.dim(), 8);
    }

    #[test]
    fn rebuild_gives_identical_bytes() {
        let c = corpus(&["alpha beta", "gamma delta", "epsilon zeta"]);
        let m = model(2);
        let a = build_index(&c, &m).unwrap();
        let b = build_index(&c, &m).unwrap();
        assert_eq!(a.embedding_bytes(), b.embedding_bytes());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let c = Corpus::new(Vec::new()).unwrap();
        assert!(matches!(build_index(&c, &model(1)), Err(RetrievalError::EmptyCorpus)));
    }

    #[test]
    fn fingerprint_mismatch_is_caught() {
        let c = corpus(&["alpha beta", "gamma delta"]);
        let m1 = model(1);
        let m2 = model(2);
        let index = build_index(&c, &m1).unwrap();
        assert!(matches!(
            search_text(&index, &m2, "q", "alpha", 5),
            Err(RetrievalError::FingerprintMismatch { .. })
        ));
        assert!(search_text(&index, &m1, "q", "alpha", 5).is_ok());
    }

    #[test]
    fn self_similarity_puts_document_first() {
        let c = corpus(&["alpha beta gamma", "delta epsilon zeta", "eta theta iota"]);
        let m = model(3);
        let index = build_index(&c, &m).unwrap();
        let q = m.encode("delta epsilon zeta");
        let top = search(&index, &q, 1);
        assert_eq!(top[0].0, "d01");
        assert!((top[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k_of_corpus_size_is_a_permutation() {
        let c = corpus(&["a b", "c d", "e f", "g h"]);
        let m = model(4);
        let index = build_index(&c, &m).unwrap();
        let got = search(&index, &m.encode("a"), 4);
        let mut ids: Vec<&str> = got.iter().map(|(d, _)| d.as_str()).collect();
        ids.sort_unstable();
        assert_eq!(ids, ["d00", "d01", "d02", "d03"]);
        // k beyond |D| clamps.
        assert_eq!(search(&index, &m.encode("a"), 100).len(), 4);
    }

    #[test]
    fn identical_embeddings_tie_break_by_doc_id() {
        let c = corpus(&["same text here", "same text here", "other thing entirely"]);
        let m = model(5);
        let index = build_index(&c, &m).unwrap();
        let got = search(&index, &m.encode("same text here"), 2);
        assert_eq!(got[0].0, "d00");
        assert_eq!(got[1].0, "d01");
        assert_eq!(got[0].1, got[1].1);
    }

    /// Independent oracle: naive double-loop scoring with the same total order.
    fn oracle_search(index: &DenseIndex<f64>, q: &[f64], k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(String, f64)> = index
            .doc_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let mut s = 0.0;
                for (a, b) in index.row(i).iter().zip(q.iter()) {
                    s += a * b;
                }
                (id.clone(), s)
            })
            .collect();
        scored.sort_by(|(ida, sa), (idb, sb)| {
            sb.partial_cmp(sa).unwrap().then_with(|| ida.cmp(idb))
        });
        scored.truncate(k);
        scored
    }

    #[test]
    fn search_matches_naive_oracle_on_random_corpora() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let vocab = [
            "sun", "moon", "star", "rock", "tree", "bird", "fish", "wind", "rain", "snow",
        ];
        for trial in 0..10 {
            let n_docs = rng.gen_range(3..40);
            let texts: Vec<String> = (0..n_docs)
                .map(|_| {
                    let len = rng.gen_range(2..12);
                    (0..len)
                        .map(|_| vocab[rng.gen_range(0..vocab.len())])
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let c = corpus(&refs);
            let m = model(trial);
            let index = build_index(&c, &m).unwrap();
            let q = m.encode(vocab[rng.gen_range(0..vocab.len())]);
            let k = rng.gen_range(1..=n_docs);
            let ours = search(&index, &q, k);
            let oracle = oracle_search(&index, &q, k);
            assert_eq!(ours.len(), oracle.len());
            for ((d1, s1), (d2, s2)) in ours.iter().zip(oracle.iter()) {
                assert_eq!(d1, d2, "trial {trial}");
                assert!((s1 - s2).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn increasing_k_preserves_prefix_and_monotone_scores() {
        let c = corpus(&["a b c", "b c d", "c d e", "d e f", "e f g"]);
        let m = model(6);
        let index = build_index(&c, &m).unwrap();
        let q = m.encode("c d");
        let small = search(&index, &q, 2);
        let large = search(&index, &q, 5);
        assert_eq!(&large[..2], &small[..]);
        for pair in large.windows(2) {
            assert!(pair[0].1 >= pair[1].1);
        }
    }

    #[test]
    fn run_file_has_trec_format_and_is_reproducible() {
        let c = corpus(&["alpha beta", "gamma delta"]);
        let m = model(7);
        let index = build_index(&c, &m).unwrap();
        let queries = vec![
            ("q1".to_string(), "alpha".to_string()),
            ("q2".to_string(), "gamma".to_string()),
        ];
        let run = produce_run(&index, &m, &queries, 10, "testrun").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.trec");
        let p2 = dir.path().join("b.trec");
        write_run(&p1, &run).unwrap();
        write_run(&p2, &produce_run(&index, &m, &queries, 10, "testrun").unwrap()).unwrap();
        let contents = std::fs::read_to_string(&p1).unwrap();
        assert_eq!(contents, std::fs::read_to_string(&p2).unwrap());

        let first = contents.lines().next().unwrap();
        let cols: Vec<&str> = first.split(' ').collect();
        assert_eq!(cols.len(), 6);
        assert_eq!(cols[0], "q1");
        assert_eq!(cols[1], "Q0");
        assert_eq!(cols[3], "1");
        assert!(cols[4].contains('.'));
        assert_eq!(cols[4].split('.').nth(1).unwrap().len(), 6);
        assert_eq!(cols[5], "testrun");
        // Grouped by query, ranks ascending from 1.
        let mut expected_rank = 1;
        let mut current_query = "q1";
        for line in contents.lines() {
            let cols: Vec<&str> = line.split(' ').collect();
            if cols[0] != current_query {
                current_query = cols[0];
                expected_rank = 1;
            }
            assert_eq!(cols[3], expected_rank.to_string());
            expected_rank += 1;
        }
    }

    #[test]
    fn index_round_trips_through_disk() {
        let c = corpus(&["alpha beta", "gamma delta", "epsilon"]);
        let m: DualEncoderModel<f32> =
            DualEncoderModel::init(Featurizer::new(256, &[1]), 8, 4, true, 11);
        let index = build_index(&c, &m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.idx");
        save_index(&index, &path).unwrap();
        let loaded: DenseIndex<f32> = load_index(&path).unwrap();
        assert_eq!(loaded.doc_ids(), index.doc_ids());
        assert_eq!(loaded.fingerprint(), index.fingerprint());
        assert_eq!(loaded.embedding_bytes(), index.embedding_bytes());
    }

    #[test]
    fn rank_of_matches_search_position() {
        let c = corpus(&["alpha beta", "beta gamma", "gamma delta", "delta epsilon"]);
        let m = model(8);
        let index = build_index(&c, &m).unwrap();
        let q = m.encode("beta gamma");
        let full = search(&index, &q, 4);
        for (pos, (doc_id, _)) in full.iter().enumerate() {
            assert_eq!(index.rank_of(&q, doc_id).unwrap(), pos + 1);
        }
        assert!(matches!(
            index.rank_of(&q, "ghost"),
            Err(RetrievalError::UnknownDoc(_))
        ));
    }
}
