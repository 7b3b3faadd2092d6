use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProxyRoute {
    #[serde(alias = "repository_id", alias = "id")]
    pub repository_id: String,
    #[serde(alias = "base_url")]
    pub base_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("duplicate repository id {0:?}")]
    Duplicate(String),
    #[error("repository id {0:?} is not a single path segment")]
    BadId(String),
    #[error("base URL {url:?} for {id:?} is not an absolute http(s) URL")]
    BadBaseUrl { id: String, url: String },
    #[error("path {0:?} is not under the proxy prefix")]
    NotProxied(String),
    #[error("no route for repository {0:?}")]
    Unknown(String),
}

/// Repository id to base URL mapping.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    prefix: String,
    routes: Vec<ProxyRoute>,
    index: HashMap<String, usize>,
}

fn trim_slashes(s: &str) -> &str {
    s.trim_matches('/')
}

impl RoutingTable {
    pub fn new(prefix: &str, routes: Vec<ProxyRoute>) -> Result<Self, RouteError> {
        let mut index = HashMap::new();
        for (i, r) in routes.iter().enumerate() {
            if r.repository_id.is_empty() || r.repository_id.contains('/') {
                return Err(RouteError::BadId(r.repository_id.clone()));
            }
            let ok = Url::parse(&r.base_url)
                .map(|u| matches!(u.scheme(), "http" | "https") && u.has_host())
                .unwrap_or(false);
            if !ok {
                return Err(RouteError::BadBaseUrl {
                    id: r.repository_id.clone(),
                    url: r.base_url.clone(),
                });
            }
            if index.insert(r.repository_id.clone(), i).is_some() {
                return Err(RouteError::Duplicate(r.repository_id.clone()));
            }
        }
        Ok(Self {
            prefix: trim_slashes(prefix).to_owned(),
            routes,
            index,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn routes(&self) -> &[ProxyRoute] {
        &self.routes
    }

    pub fn get(&self, id: &str) -> Option<&ProxyRoute> {
        self.index.get(id).map(|&i| &self.routes[i])
    }

    /// Whether `path` addresses the prefix itself (transparent mode).
    pub fn is_prefix(&self, path: &str) -> bool {
        trim_slashes(path) == self.prefix
    }

    /// Resolves `{prefix}/{repositoryId}`.
    pub fn resolve(&self, path: &str) -> Result<&ProxyRoute, RouteError> {
        let path = trim_slashes(path);
        let rest = if self.prefix.is_empty() {
            Some(path)
        } else {
            path.strip_prefix(&self.prefix)
                .and_then(|r| r.strip_prefix('/'))
        };
        let Some(id) = rest.filter(|r| !r.is_empty() && !r.contains('/')) else {
            return Err(RouteError::NotProxied(path.to_owned()));
        };
        self.get(id).ok_or_else(|| RouteError::Unknown(id.to_owned()))
    }
}
