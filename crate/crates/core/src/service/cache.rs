//! Byte-budgeted LRU cache of image embeddings with single-flight encoding.

use std::collections::HashMap;
use std::future::Future;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use lru::LruCache;
use tokio::sync::OnceCell;

use crate::dataio::ResizeTransform;
use crate::error::Result;
use crate::model::ImageEmbedding;

/// An encoded image together with the transform needed to map masks back.
#[derive(Debug)]
pub struct EmbeddingCacheEntry {
    pub image_id: String,
    pub embedding: ImageEmbedding,
    pub transform: ResizeTransform,
    pub created_at: SystemTime,
    pub size_bytes: usize,
}

impl EmbeddingCacheEntry {
    pub fn new(image_id: String, embedding: ImageEmbedding, transform: ResizeTransform) -> Self {
        let size_bytes = embedding.size_bytes() + std::mem::size_of::<ResizeTransform>() + image_id.len();
        Self {
            image_id,
            embedding,
            transform,
            created_at: SystemTime::now(),
            size_bytes,
        }
    }
}

type Slot = Arc<OnceCell<Arc<EmbeddingCacheEntry>>>;

struct Inner {
    lru: LruCache<String, Arc<EmbeddingCacheEntry>>,
    bytes: usize,
    inflight: HashMap<String, Slot>,
}

pub struct EmbeddingCache {
    budget: usize,
    inner: Mutex<Inner>,
    encodes: AtomicUsize,
}

impl EmbeddingCache {
    pub fn new(budget_bytes: usize) -> Self {
        Self {
            budget: budget_bytes,
            inner: Mutex::new(Inner {
                lru: LruCache::unbounded(),
                bytes: 0,
                inflight: HashMap::new(),
            }),
            encodes: AtomicUsize::new(0),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Bytes currently held.
    pub fn bytes(&self) -> usize {
        self.lock().bytes
    }

    pub fn len(&self) -> usize {
        self.lock().lru.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of times an encoder ran on behalf of this cache.
    pub fn encode_count(&self) -> usize {
        self.encodes.load(Ordering::SeqCst)
    }

    /// Looks up an entry and marks it most recently used.
    pub fn get(&self, image_id: &str) -> Option<Arc<EmbeddingCacheEntry>> {
        self.lock().lru.get(image_id).cloned()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.lock().lru.contains(image_id)
    }

    /// Returns the cached entry, or runs `encode` to produce it. Concurrent
    /// callers for the same id share one encode. The flag is `true` on a
    /// cache hit.
    pub async fn get_or_encode<F, Fut>(&self, image_id: &str, encode: F) -> Result<(Arc<EmbeddingCacheEntry>, bool)>
    where
        F: FnOnce() -> Fut,
        Fut: Future<Output = Result<EmbeddingCacheEntry>>,
    {
        let slot = {
            let mut inner = self.lock();
            if let Some(entry) = inner.lru.get(image_id) {
                return Ok((entry.clone(), true));
            }
            inner.inflight.entry(image_id.to_string()).or_default().clone()
        };
        let mut ran = false;
        let result = slot
            .get_or_try_init(|| {
                ran = true;
                self.encodes.fetch_add(1, Ordering::SeqCst);
                async move { encode().await.map(Arc::new) }
            })
            .await
            .cloned();

        let mut inner = self.lock();
        if inner.inflight.get(image_id).is_some_and(|s| Arc::ptr_eq(s, &slot)) {
            inner.inflight.remove(image_id);
        }
        let entry = result?;
        if ran {
            if let Some(old) = inner.lru.put(image_id.to_string(), entry.clone()) {
                inner.bytes -= old.size_bytes;
            }
            inner.bytes += entry.size_bytes;
            while inner.bytes > self.budget {
                match inner.lru.pop_lru() {
                    Some((id, evicted)) => {
                        log::debug!("evicting embedding {id}");
                        inner.bytes -= evicted.size_bytes;
                    }
                    None => break,
                }
            }
        }
        Ok((entry, false))
    }
}
