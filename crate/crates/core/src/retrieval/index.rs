//! In-memory inverted index with BM25 scoring.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Document, RawDocument, RetrievalError, Retriever, ScoredDocument};
use crate::text::terms;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub doc_count: usize,
    pub avg_len: f64,
}

/// Immutable after build; safe to share across threads.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    docs: Vec<Arc<Document>>,
    by_id: HashMap<String, u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_len: Vec<u32>,
    stats: IndexStats,
}

/// Persisted form. Field order and map ordering make the bytes deterministic.
#[derive(Serialize, Deserialize)]
struct IndexFile {
    format_version: u32,
    stats: IndexStats,
    docs: Vec<RawDocument>,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl CorpusIndex {
    pub fn build(corpus: impl IntoIterator<Item = RawDocument>) -> Result<Self, RetrievalError> {
        let mut docs = Vec::new();
        let mut by_id = HashMap::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::new();
        for raw in corpus {
            let idx = docs.len() as u32;
            if by_id.insert(raw.id.clone(), idx).is_some() {
                return Err(RetrievalError::DuplicateId(raw.id));
            }
            let doc = Document::new(raw);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.terms {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push(Posting { doc: idx, tf: count });
            }
            doc_len.push(doc.terms.len() as u32);
            docs.push(Arc::new(doc));
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        let stats = IndexStats {
            doc_count: docs.len(),
            avg_len,
        };
        Ok(Self {
            docs,
            by_id,
            postings,
            doc_len,
            stats,
        })
    }

    pub fn stats(&self) -> IndexStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Document>> {
        self.by_id.get(id).map(|&i| &self.docs[i as usize])
    }

    pub fn documents(&self) -> impl Iterator<Item = &Arc<Document>> {
        self.docs.iter()
    }

    /// Ids of documents containing `term` (already normalized).
    pub fn posting_ids(&self, term: &str) -> Vec<&str> {
        self.postings
            .get(term)
            .map(|ps| ps.iter().map(|p| self.docs[p.doc as usize].id.as_str()).collect())
            .unwrap_or_default()
    }

    /// BM25 with `BM25_K1`/`BM25_B`; each distinct query term counts once.
    pub fn search(&self, query: &str, top_n: usize) -> Vec<ScoredDocument> {
        let mut query_terms = terms(query);
        query_terms.sort();
        query_terms.dedup();
        if query_terms.is_empty() || self.docs.is_empty() || top_n == 0 {
            return Vec::new();
        }
        let n = self.docs.len() as f64;
        let avg = self.stats.avg_len;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &query_terms {
            let Some(list) = self.postings.get(term) else { continue };
            let df = list.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for p in list {
                let tf = p.tf as f64;
                let dl = self.doc_len[p.doc as usize] as f64;
                let norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avg);
                *scores.entry(p.doc).or_default() += idf * tf * (BM25_K1 + 1.0) / norm;
            }
        }
        let mut ranked: Vec<ScoredDocument> = scores
            .into_iter()
            .map(|(i, score)| ScoredDocument {
                doc: self.docs[i as usize].clone(),
                score,
            })
            .collect();
        super::rank(&mut ranked);
        ranked.truncate(top_n);
        ranked
    }

    pub fn save<W: Write>(&self, out: W) -> Result<(), RetrievalError> {
        let file = IndexFile {
            format_version: INDEX_FORMAT_VERSION,
            stats: self.stats,
            docs: self.docs.iter().map(|d| d.raw()).collect(),
            postings: self.postings.clone(),
        };
        serde_json::to_writer(out, &file).map_err(|e| RetrievalError::Corrupt(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let file: IndexFile = serde_json::from_reader(reader).map_err(|e| RetrievalError::Corrupt(e.to_string()))?;
        if file.format_version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::Corrupt(format!(
                "unsupported index version {}",
                file.format_version
            )));
        }
        let postings = file.postings;
        let index = Self::build(file.docs)?;
        if index.postings != postings || index.stats.doc_count != file.stats.doc_count {
            return Err(RetrievalError::Corrupt("postings do not match stored documents".into()));
        }
        Ok(index)
    }
}

impl Retriever for CorpusIndex {
    fn retrieve(&self, query: &str, top_n: usize) -> Result<Vec<ScoredDocument>, RetrievalError> {
        Ok(self.search(query, top_n))
    }
}

/// Read a JSON Lines corpus of `{id, title, text}` records.
pub fn read_corpus(path: &Path) -> Result<Vec<RawDocument>, RetrievalError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| RetrievalError::BadRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus<W: Write>(mut out: W, docs: &[RawDocument]) -> std::io::Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, title: &str, text: &str) -> RawDocument {
        RawDocument {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    fn ids(results: &[ScoredDocument]) -> Vec<&str> {
        results.iter().map(|s| s.doc.id.as_str()).collect()
    }

    /// Independent scorer: recount every term per document from its text.
    fn brute_force(docs: &[RawDocument], query: &str) -> Vec<(String, f64)> {
        let streams: Vec<Vec<String>> = docs.iter().map(|d| terms(&format!("{} {}", d.title, d.text))).collect();
        let n = docs.len() as f64;
        let avg = streams.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let mut q = terms(query);
        q.sort();
        q.dedup();
        let mut out = Vec::new();
        for (d, s) in docs.iter().zip(&streams) {
            let mut score = 0.0;
            let mut hit = false;
            for t in &q {
                let tf = s.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                hit = true;
                let df = streams.iter().filter(|s| s.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += idf * (tf * 2.2) / (tf + 1.2 * (0.25 + 0.75 * s.len() as f64 / avg));
            }
            if hit {
                out.push((d.id.clone(), score));
            }
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        out
    }

    #[test]
    fn shared_term_posting_lists_both() {
        let idx = CorpusIndex::build([
            raw("a", "Paris", "capital"),
            raw("b", "", "paris is big"),
            raw("c", "", "rome"),
        ])
        .unwrap();
        assert_eq!(idx.posting_ids("paris"), ["a", "b"]);
        assert_eq!(idx.stats().doc_count, 3);
    }

    #[test]
    fn empty_corpus_and_empty_query() {
        let idx = CorpusIndex::build(Vec::new()).unwrap();
        assert!(idx.is_empty());
        assert!(idx.search("anything", 10).is_empty());
        let idx = CorpusIndex::build([raw("a", "t", "x")]).unwrap();
        assert!(idx.search("?!", 10).is_empty());
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = CorpusIndex::build([raw("a", "", "x"), raw("a", "", "y")]).unwrap_err();
        assert!(err.to_string().contains("`a`"), "{err}");
    }

    #[test]
    fn craig_newmark_ranks_first_and_matches_oracle() {
        let docs = vec![
            raw("d1", "Craigslist", "Craigslist is a classified advertisements website."),
            raw(
                "d2",
                "Craig Newmark",
                "Craig Newmark is an American internet entrepreneur born in 1952.",
            ),
            raw("d3", "Craig David", "Craig David is an English singer."),
        ];
        let idx = CorpusIndex::build(docs.clone()).unwrap();
        let got = idx.search("craig newmark", 10);
        assert_eq!(got[0].doc.id, "d2");
        let oracle = brute_force(&docs, "craig newmark");
        assert_eq!(ids(&got), oracle.iter().map(|o| o.0.as_str()).collect::<Vec<_>>());
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g.score - o.1).abs() < 1e-12);
        }
    }

    #[test]
    fn top_n_clamps_and_ties_break_by_id() {
        let idx = CorpusIndex::build([
            raw("b", "", "same words"),
            raw("a", "", "same words"),
            raw("c", "", "same words"),
        ])
        .unwrap();
        assert_eq!(ids(&idx.search("same", 10)), ["a", "b", "c"]);
        assert_eq!(ids(&idx.search("same", 2)), ["a", "b"]);
    }

    #[test]
    fn save_load_is_byte_stable() {
        let idx = CorpusIndex::build([raw("x", "T", "alpha beta"), raw("y", "U", "beta gamma")]).unwrap();
        let mut a = Vec::new();
        idx.save(&mut a).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.json");
        std::fs::write(&path, &a).unwrap();
        let back = CorpusIndex::load(&path).unwrap();
        let mut b = Vec::new();
        back.save(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(ids(&back.search("beta", 5)), ids(&idx.search("beta", 5)));
    }

    #[test]
    fn bad_corpus_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"title\":\"\",\"text\":\"x\"}\n{\"id\":\n").unwrap();
        match read_corpus(&path) {
            Err(RetrievalError::BadRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
