//! Test harness for the relay: simulated data providers with deterministic
//! corpora and fault injection, topology assembly, brute-force oracles and
//! a scenario runner driven by a simulated clock.

pub mod corpus;
pub mod crawl;
pub mod faults;
pub mod net;
pub mod oracle;
pub mod scenario;
pub mod simdp;
pub mod topology;

pub use crawl::{crawl, Crawl};
pub use corpus::{identifier, Corpus, CorpusRecord, DcParts};
pub use faults::{FaultKind, FaultSpec};
pub use net::{bind_local, ServerTask};
pub use oracle::{exercise_verbs, list_records, oracle_direct_harvest, validate_response, OracleRecord};
pub use simdp::{Downtime, SimDp, SimDpConfig, SimDpHandle};
pub use topology::{build_diamond, AggregatorNode, DiamondSpec, GatewayNode, ProxyNode, Topology};
pub use scenario::{Assertion, Scenario, ScenarioReport, Step};
