//! Blocking JSON-over-HTTP plumbing shared by the remote model and
//! retriever clients.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Serialize;

/// Counting limit on concurrent in-flight requests.
#[derive(Debug)]
pub struct InFlightLimit {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            available: Mutex::new(max.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limit poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("limit poisoned");
        }
        *n -= 1;
        Permit { limit: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limit.available.lock().expect("limit poisoned") += 1;
        self.limit.freed.notify_one();
    }
}

/// Why a POST did not produce a response body.
#[derive(Debug)]
pub enum PostError {
    Transport(String),
    Status { status: u16, body: String },
}

pub struct JsonClient {
    agent: ureq::Agent,
    limit: InFlightLimit,
}

impl JsonClient {
    pub fn new(timeout: Duration, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            limit: InFlightLimit::new(max_in_flight),
        }
    }

    /// POST `body` as JSON and return the raw response text on 2xx.
    /// Transport failures are retried once; status errors are not.
    pub fn post<B: Serialize>(&self, url: &str, bearer: Option<&str>, body: &B) -> Result<String, PostError> {
        let _permit = self.limit.acquire();
        let mut last = None;
        for _ in 0..2 {
            match self.post_once(url, bearer, body) {
                Err(PostError::Transport(msg)) => last = Some(msg),
                other => return other,
            }
        }
        Err(PostError::Transport(last.unwrap_or_default()))
    }

    fn post_once<B: Serialize>(&self, url: &str, bearer: Option<&str>, body: &B) -> Result<String, PostError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| PostError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| PostError::Transport(e.to_string()))?;
        if (200..300).contains(&status) {
            Ok(text)
        } else {
            Err(PostError::Status {
                status,
                body: text.chars().take(500).collect(),
            })
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn limit_bounds_concurrency() {
        let limit = Arc::new(InFlightLimit::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (limit, active, peak) = (limit.clone(), active.clone(), peak.clone());
                s.spawn(move || {
                    let _p = limit.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // bind then drop to obtain a port nobody listens on
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let client = JsonClient::new(Duration::from_secs(2), 1);
        let err = client
            .post(&format!("http://127.0.0.1:{port}/x"), None, &serde_json::json!({}))
            .unwrap_err();
        assert!(matches!(err, PostError::Transport(_)));
    }

    #[test]
    fn status_error_is_not_retried() {
        let (base, rx, handle) = testing::serve(vec![(500, "{\"error\":\"boom\"}".into())]);
        let client = JsonClient::new(Duration::from_secs(5), 1);
        match client.post(&format!("{base}/x"), Some("k"), &serde_json::json!({"a": 1})) {
            Err(PostError::Status { status, body }) => {
                assert_eq!(status, 500);
                assert!(body.contains("boom"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let got = rx.recv().unwrap();
        assert_eq!(got.path, "/x");
        assert!(got
            .headers
            .iter()
            .any(|h| h == "authorization: Bearer k" || h == "Authorization: Bearer k"));
        handle.join().unwrap();
    }
}
