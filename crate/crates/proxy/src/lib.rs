//! Repairing OAI-PMH proxy. Requests are forwarded to a source repository
//! and the response is repaired in flight: invalid UTF-8 is replaced, stray
//! `&` and `<` are escaped, unquoted attribute values are quoted, and any
//! record that still fails validation is cut out whole. Clean responses are
//! forwarded byte for byte.

pub mod repair;
pub mod report;
pub mod routes;
pub mod server;

pub use repair::{
    drop_bad_records, repair_entities, repair_markup, repair_response, repair_utf8, Fix,
    RepairOutcome, Verdict,
};
pub use report::{Outcome, RepairReport, ReportStore};
pub use routes::{ProxyRoute, RouteError, RoutingTable};
pub use server::{router, serve, ProxyConfig, ProxyError, ProxyMode, ProxyState};
