//! Content-addressed provider cache and run files.

mod cache;
mod runs;

pub use cache::{cache_key, canonical_bytes, Cache, CacheKey, Sidecar};
pub use runs::{load_gap, load_run, persist_gap, persist_run, write_atomic, RUN_SCHEMA_VERSION};
