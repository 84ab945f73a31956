//! Document retrieval and keyword-enhanced candidate selection.
//!
//! [`hybrid_recall`] keeps every retrieved document that contains the whole
//! keyword set and always adds the `backup_k` best-scored documents, so the
//! candidate set is never empty when retrieval returned anything.

mod index;
mod remote;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{read_corpus, write_corpus, CorpusIndex, IndexStats, Posting, BM25_B, BM25_K1};
pub use remote::RemoteRetriever;

use crate::keywords::KeywordSet;
use crate::rewriter::RewrittenQuery;
use crate::text::terms;

pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_BACKUP_K: usize = 2;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("corpus line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file: {0}")]
    Corrupt(String),
    #[error("retriever transport failure talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("retriever at {endpoint} returned status {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("retriever response: {0}")]
    Malformed(String),
    #[error("retriever returned unknown document id `{0}`")]
    UnknownDocument(String),
}

/// A corpus record as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    /// Normalized term stream of title followed by text.
    pub terms: Vec<String>,
}

impl Document {
    pub fn new(raw: RawDocument) -> Self {
        let terms = terms(&format!("{} {}", raw.title, raw.text));
        Self {
            id: raw.id,
            title: raw.title,
            text: raw.text,
            terms,
        }
    }

    pub fn raw(&self) -> RawDocument {
        RawDocument {
            id: self.id.clone(),
            title: self.title.clone(),
            text: self.text.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoredDocument {
    pub doc: Arc<Document>,
    pub score: f64,
}

/// Score descending, then id ascending.
pub(crate) fn rank(docs: &mut [ScoredDocument]) {
    docs.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc.id.cmp(&b.doc.id)));
}

pub trait Retriever: Send + Sync {
    /// Up to `top_n` documents, score descending, ties by ascending id.
    fn retrieve(&self, query: &str, top_n: usize) -> Result<Vec<ScoredDocument>, RetrievalError>;
}

#[derive(Debug, Clone, Default)]
pub struct EnhancedCandidateSet {
    /// Keyword-matched documents first, then remaining backups; each group by score.
    pub docs: Vec<ScoredDocument>,
    pub keyword_matched_ids: BTreeSet<String>,
    pub backup_ids: BTreeSet<String>,
}

impl EnhancedCandidateSet {
    pub fn ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Candidate selection over an already-ranked retrieval list.
///
/// An empty keyword set matches nothing, leaving only the backups.
pub fn select_candidates(retrieved: &[ScoredDocument], keywords: &KeywordSet, backup_k: usize) -> EnhancedCandidateSet {
    let mut ranked = retrieved.to_vec();
    rank(&mut ranked);
    let (matched, rest): (Vec<_>, Vec<_>) = if keywords.is_empty() {
        (Vec::new(), ranked.iter().collect())
    } else {
        ranked.iter().partition(|d| keywords.all_contained_in(&d.doc.terms))
    };
    let backup_ids: BTreeSet<String> = ranked.iter().take(backup_k).map(|d| d.doc.id.clone()).collect();
    let keyword_matched_ids: BTreeSet<String> = matched.iter().map(|d| d.doc.id.clone()).collect();
    let docs = matched
        .into_iter()
        .chain(rest.into_iter().filter(|d| backup_ids.contains(&d.doc.id)))
        .cloned()
        .collect();
    EnhancedCandidateSet {
        docs,
        keyword_matched_ids,
        backup_ids,
    }
}

/// Retrieve `top_n` for the rewritten query, then select candidates.
pub fn hybrid_recall(
    retriever: &dyn Retriever,
    query: &RewrittenQuery,
    keywords: &KeywordSet,
    top_n: usize,
    backup_k: usize,
) -> Result<EnhancedCandidateSet, RetrievalError> {
    let retrieved = retriever.retrieve(&query.text, top_n)?;
    Ok(select_candidates(&retrieved, keywords, backup_k))
}
