use std::collections::BTreeMap;
use std::sync::Mutex;

use super::{ChatRequest, ChatResponse, Gateway, GatewayError};

/// Wraps a gateway and counts requests by the first `/`-segment of their tag.
pub struct MeteredGateway<G> {
    inner: G,
    counts: Mutex<BTreeMap<String, usize>>,
}

impl<G: Gateway> MeteredGateway<G> {
    pub fn new(inner: G) -> Self {
        MeteredGateway { inner, counts: Mutex::new(BTreeMap::new()) }
    }

    fn count(&self, request: &ChatRequest) {
        let prefix = request.tag.split('/').next().unwrap_or_default().to_string();
        *self.counts.lock().unwrap().entry(prefix).or_insert(0) += 1;
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.counts.lock().unwrap().clone()
    }

    pub fn calls(&self, prefix: &str) -> usize {
        self.counts.lock().unwrap().get(prefix).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.lock().unwrap().values().sum()
    }

    pub fn reset(&self) {
        self.counts.lock().unwrap().clear();
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }
}

impl<G: Gateway> Gateway for MeteredGateway<G> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.count(request);
        self.inner.complete(request)
    }

    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        requests.iter().for_each(|r| self.count(r));
        self.inner.complete_batch(requests)
    }
}
