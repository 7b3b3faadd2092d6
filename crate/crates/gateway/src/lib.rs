//! Crawler gateway: turns an aggregator's wrapped views into linked,
//! persistent HTML pages that ordinary web crawlers can index, with a
//! per-client token bucket in front.

pub mod pages;
pub mod server;
pub mod throttle;

pub use pages::{encode_segment, index_path, record_path, DcFields};
pub use server::{router, serve, GatewayConfig, GatewayState};
pub use throttle::{Decision, Throttle, ThrottleConfig};
