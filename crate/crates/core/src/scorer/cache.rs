use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use sha2::{Digest, Sha256};

use super::{LabelDistribution, ScoreRequest, ScorerBackend};
use crate::error::BackendError;

type Key = [u8; 32];

/// Read-through cache keyed by the digest of the rendered prompt and the
/// label space.
#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<Key, LabelDistribution>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn digest(request: &ScoreRequest<'_>) -> Key {
        let mut h = Sha256::new();
        h.update(request.render().as_bytes());
        for label in request.label_space() {
            h.update([0u8]);
            h.update(label.as_str().as_bytes());
        }
        h.finalize().into()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_try_insert<E>(
        &self,
        request: &ScoreRequest<'_>,
        compute: impl FnOnce() -> Result<LabelDistribution, E>,
    ) -> Result<LabelDistribution, E> {
        let key = Self::digest(request);
        if let Some(d) = self.entries.read().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(*d);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        // Computed outside the lock; concurrent misses on one key produce
        // identical values, last writer wins.
        let d = compute()?;
        self.entries.write().expect("cache lock").insert(key, d);
        Ok(d)
    }
}

pub struct CachedBackend<B> {
    inner: B,
    cache: ScoreCache,
}

impl<B: ScorerBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        CachedBackend {
            inner,
            cache: ScoreCache::new(),
        }
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ScorerBackend> ScorerBackend for CachedBackend<B> {
    fn distribution(&self, request: &ScoreRequest<'_>) -> Result<LabelDistribution, BackendError> {
        self.cache.get_or_try_insert(request, || self.inner.distribution(request))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::AtomicUsize;

    use super::*;
    use crate::scorer::{MockScorer, PromptTemplate};

    struct Counting {
        calls: AtomicUsize,
        mock: MockScorer,
    }

    impl ScorerBackend for Counting {
        fn distribution(&self, r: &ScoreRequest<'_>) -> Result<LabelDistribution, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.mock.distribution(r)
        }
    }

    #[test]
    fn cache_is_transparent_and_counts() {
        let t = PromptTemplate::default();
        let backend = CachedBackend::new(Counting {
            calls: AtomicUsize::new(0),
            mock: MockScorer::default(),
        });
        let req = ScoreRequest {
            template: &t,
            demos: vec![],
            input_query: "a b",
            input_passage: "b c",
        };
        let direct = backend.inner().mock.distribution(&req).unwrap();
        let first = backend.distribution(&req).unwrap();
        let second = backend.distribution(&req).unwrap();
        assert_eq!(direct, first);
        assert_eq!(first, second);
        assert_eq!(backend.inner().calls.load(Ordering::SeqCst), 1);
        assert_eq!((backend.cache().hits(), backend.cache().misses()), (1, 1));
    }

    #[test]
    fn errors_are_not_cached() {
        let t = PromptTemplate::default();
        let cache = ScoreCache::new();
        let req = ScoreRequest {
            template: &t,
            demos: vec![],
            input_query: "a",
            input_passage: "b",
        };
        let r: Result<_, BackendError> = cache.get_or_try_insert(&req, || Err(BackendError::Timeout));
        assert!(r.is_err());
        assert!(cache.is_empty());
    }
}
