use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::imaging::Image;
use crate::matting::{AlphaMatte, MatteParams, Trimap};
use crate::semantics::RegionMask;

pub type ContentHash = [u8; 32];

/// Trimap and matte computed for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedMatte {
    pub band: usize,
    pub trimap: Trimap,
    pub matte: AlphaMatte,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

/// Mattes keyed by a content hash of everything the solve reads.
#[derive(Debug, Default)]
pub struct MatteCache {
    entries: Mutex<HashMap<ContentHash, Arc<CachedMatte>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

pub fn image_digest(img: &Image) -> ContentHash {
    let mut h = Sha256::new();
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    h.update((img.channels() as u64).to_le_bytes());
    for v in img.data() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

/// Key for a matte of `mask` on the image with digest `image`.
pub fn matte_key(image: &ContentHash, mask: &RegionMask, band: usize, params: &MatteParams) -> ContentHash {
    let mut h = Sha256::new();
    h.update(image);
    h.update((mask.width() as u64).to_le_bytes());
    h.update((mask.height() as u64).to_le_bytes());
    // Pack mask bits eight to a byte.
    for chunk in mask.bits().chunks(8) {
        h.update([chunk.iter().enumerate().fold(0u8, |b, (i, &m)| b | ((m as u8) << i))]);
    }
    h.update((band as u64).to_le_bytes());
    for v in [params.eps, params.lambda, params.tol] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((params.max_iter as u64).to_le_bytes());
    h.finalize().into()
}

impl MatteCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached entry for `key`, counting a hit or a miss.
    pub fn lookup(&self, key: &ContentHash) -> Option<Arc<CachedMatte>> {
        let found = self.entries.lock().expect("cache lock").get(key).cloned();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Presence check that leaves the hit and miss counters alone.
    pub fn contains(&self, key: &ContentHash) -> bool {
        self.entries.lock().expect("cache lock").contains_key(key)
    }

    pub fn insert(&self, key: ContentHash, value: CachedMatte) -> Arc<CachedMatte> {
        let v = Arc::new(value);
        self.entries.lock().expect("cache lock").insert(key, v.clone());
        v
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_track_inputs() {
        let img = Image::filled(4, 4, 3, 0.5);
        let d = image_digest(&img);
        let m = RegionMask::from_fn(4, 4, |x, _| x < 2);
        let p = MatteParams::default();
        let k = matte_key(&d, &m, 2, &p);
        assert_eq!(k, matte_key(&image_digest(&img.clone()), &m, 2, &p));
        assert_ne!(k, matte_key(&d, &m, 3, &p));
        assert_ne!(k, matte_key(&d, &m.complement(), 2, &p));
        let mut other = img.clone();
        other.data_mut()[5] = 0.25;
        assert_ne!(k, matte_key(&image_digest(&other), &m, 2, &p));
    }

    #[test]
    fn hits_and_misses_are_counted() {
        let cache = MatteCache::new();
        let key = [7u8; 32];
        assert!(cache.lookup(&key).is_none());
        let t = Trimap::from_labels(1, 1, vec![crate::matting::TrimapLabel::Foreground]);
        cache.insert(
            key,
            CachedMatte {
                band: 1,
                trimap: t,
                matte: AlphaMatte::filled(1, 1, 1.0),
            },
        );
        assert!(cache.lookup(&key).is_some());
        assert!(cache.contains(&key));
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 1 });
    }
}
