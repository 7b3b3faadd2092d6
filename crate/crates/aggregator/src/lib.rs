//! OAI-PMH aggregator and cache. Harvests source repositories into a local
//! store, rewrites datestamps to the ingestion instant, records provenance,
//! resolves identifier collisions, and re-exports everything over OAI-PMH
//! as one aggregated view plus one wrapped view per source.

pub mod aggregator;
pub mod collision;
pub mod config;
pub mod http;
pub mod ingest;
pub mod record;
pub mod serve;
pub mod store;
pub mod token;

pub use aggregator::{backoff_secs, Aggregator, AggregatorError, HarvestSummary, RegisterError};
pub use collision::{canonicalize, resolve_collision, CollisionPolicy, Decision, Fallback, Rule};
pub use config::{AggregatorConfig, RepositoryConfig};
pub use http::{router, serve, status_report, StatusReport};
pub use ingest::{ingest_record, prepare_record, IngestOutcome};
pub use record::{Reliability, RepoStatus, SourceRepository, StoredRecord};
pub use serve::{select_version, View};
pub use store::{Store, StoreError};
