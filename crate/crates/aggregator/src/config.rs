use std::net::SocketAddr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::collision::CollisionPolicy;
use crate::record::Reliability;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepositoryConfig {
    pub id: String,
    pub base_url: String,
    pub trust_rank: i64,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_secs: u64,
    #[serde(default)]
    pub reliability: Reliability,
    #[serde(default)]
    pub formats: Option<Vec<String>>,
}

fn default_poll_interval() -> u64 {
    3600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Public URL of this service, used to build baseURLs. Defaults to
    /// `http://{listen}`.
    #[serde(default)]
    pub public_url: Option<String>,
    #[serde(default = "default_name")]
    pub repository_name: String,
    #[serde(default = "default_admin_email")]
    pub admin_email: String,
    /// `None` keeps everything in memory.
    #[serde(default)]
    pub storage_dir: Option<PathBuf>,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default = "default_token_ttl")]
    pub token_ttl_secs: u64,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_tick_ms")]
    pub scheduler_tick_ms: u64,
    #[serde(default)]
    pub policy: CollisionPolicy,
    #[serde(default)]
    pub repositories: Vec<RepositoryConfig>,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8082))
}

fn default_name() -> String {
    "OAI-PMH aggregator".into()
}

fn default_admin_email() -> String {
    "admin@localhost".into()
}

fn default_page_size() -> usize {
    100
}

fn default_token_ttl() -> u64 {
    24 * 3600
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_tick_ms() -> u64 {
    1000
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            public_url: None,
            repository_name: default_name(),
            admin_email: default_admin_email(),
            storage_dir: None,
            page_size: default_page_size(),
            token_ttl_secs: default_token_ttl(),
            request_timeout_ms: default_timeout_ms(),
            scheduler_tick_ms: default_tick_ms(),
            policy: CollisionPolicy::default(),
            repositories: Vec::new(),
        }
    }
}

impl AggregatorConfig {
    pub fn public_url(&self) -> String {
        match &self.public_url {
            Some(u) => u.trim_end_matches('/').to_owned(),
            None => format!("http://{}", self.listen),
        }
    }

    pub fn aggregated_base_url(&self) -> String {
        format!("{}/oai", self.public_url())
    }

    pub fn wrapped_base_url(&self, repo: &str) -> String {
        format!("{}/oai/{repo}", self.public_url())
    }
}
