use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{rank, CorpusIndex, RetrievalError, Retriever, ScoredDocument};
use crate::http::{JsonClient, PostError};

#[derive(Serialize)]
struct SearchRequest<'a> {
    query: &'a str,
    top_k: usize,
}

#[derive(Deserialize)]
struct Hit {
    id: String,
    score: f64,
}

/// Client for an external (typically dense) retriever.
///
/// The service answers `POST {query, top_k}` with `[{id, score}, ...]`; ids
/// are hydrated against the local document store.
pub struct RemoteRetriever {
    endpoint: String,
    store: Arc<CorpusIndex>,
    client: JsonClient,
}

impl RemoteRetriever {
    pub fn new(endpoint: impl Into<String>, store: Arc<CorpusIndex>, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            store,
            client: JsonClient::new(timeout, max_in_flight),
        }
    }
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, query: &str, top_n: usize) -> Result<Vec<ScoredDocument>, RetrievalError> {
        let raw = self
            .client
            .post(&self.endpoint, None, &SearchRequest { query, top_k: top_n })
            .map_err(|e| match e {
                PostError::Transport(message) => RetrievalError::Transport {
                    endpoint: self.endpoint.clone(),
                    message,
                },
                PostError::Status { status, body } => RetrievalError::Status {
                    endpoint: self.endpoint.clone(),
                    status,
                    body,
                },
            })?;
        let hits: Vec<Hit> = serde_json::from_str(&raw).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        let mut out = Vec::with_capacity(hits.len());
        for hit in hits {
            if !hit.score.is_finite() {
                return Err(RetrievalError::Malformed(format!("non-finite score for `{}`", hit.id)));
            }
            let doc = self
                .store
                .get(&hit.id)
                .ok_or_else(|| RetrievalError::UnknownDocument(hit.id.clone()))?;
            out.push(ScoredDocument {
                doc: doc.clone(),
                score: hit.score,
            });
        }
        rank(&mut out);
        out.truncate(top_n);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::serve;
    use crate::retrieval::RawDocument;

    fn store() -> Arc<CorpusIndex> {
        Arc::new(
            CorpusIndex::build(["a", "b", "c"].map(|id| RawDocument {
                id: id.into(),
                title: id.into(),
                text: "x".into(),
            }))
            .unwrap(),
        )
    }

    #[test]
    fn hydrates_and_ranks() {
        let reply = r#"[{"id":"c","score":0.5},{"id":"a","score":0.9},{"id":"b","score":0.5}]"#;
        let (base, rx, handle) = serve(vec![(200, reply.into())]);
        let r = RemoteRetriever::new(format!("{base}/search"), store(), Duration::from_secs(5), 2);
        let got = r.retrieve("who?", 10).unwrap();
        let ids: Vec<_> = got.iter().map(|d| d.doc.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(got[0].doc.title, "a");
        let req: serde_json::Value = serde_json::from_str(&rx.recv().unwrap().body).unwrap();
        assert_eq!(req, serde_json::json!({"query": "who?", "top_k": 10}));
        handle.join().unwrap();
    }

    #[test]
    fn unknown_id_is_an_error() {
        let (base, _rx, handle) = serve(vec![(200, r#"[{"id":"zz","score":1.0}]"#.into())]);
        let r = RemoteRetriever::new(format!("{base}/search"), store(), Duration::from_secs(5), 2);
        assert!(matches!(r.retrieve("q", 3), Err(RetrievalError::UnknownDocument(id)) if id == "zz"));
        handle.join().unwrap();
    }

    #[test]
    fn unreachable_is_transport() {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let r = RemoteRetriever::new(
            format!("http://127.0.0.1:{port}/search"),
            store(),
            Duration::from_secs(2),
            1,
        );
        assert!(matches!(r.retrieve("q", 3), Err(RetrievalError::Transport { .. })));
    }
}
