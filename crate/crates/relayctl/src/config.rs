//! The sectioned deployment file shared by every daemon.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use oairelay_aggregator::aggregator::valid_repository_id;
use oairelay_aggregator::AggregatorConfig;
use oairelay_gateway::GatewayConfig;
use oairelay_proxy::{ProxyConfig, RoutingTable};
use serde::Deserialize;
use url::Url;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayConfig {
    pub proxy: Option<ProxyConfig>,
    pub aggregator: Option<AggregatorConfig>,
    pub gateway: Option<GatewayConfig>,
}

/// Every problem found in a config file, one per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub problems: Vec<Problem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.problems.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            match p.line {
                Some(line) => write!(f, "{}:{line}: {}", self.path.display(), p.message)?,
                None => write!(f, "{}: {}", self.path.display(), p.message)?,
            }
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl RelayConfig {
    /// Reads, parses and validates `path`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let fail = |line, message: String| ConfigError {
            path: path.to_owned(),
            problems: vec![Problem { line, message }],
        };
        let text = std::fs::read_to_string(path).map_err(|e| fail(None, format!("cannot read: {e}")))?;
        Self::parse(&text).map_err(|mut e| {
            e.path = path.to_owned();
            e
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: RelayConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            ConfigError {
                path: PathBuf::new(),
                problems: vec![Problem {
                    line,
                    message: e.message().trim().to_owned(),
                }],
            }
        })?;
        let problems = config.problems(text);
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError {
                path: PathBuf::new(),
                problems,
            })
        }
    }

    fn problems(&self, text: &str) -> Vec<Problem> {
        let mut out = Vec::new();
        let mut at = |needle: &str, nth: usize, message: String| {
            out.push(Problem {
                line: locate(text, needle, nth),
                message,
            })
        };

        if let Some(proxy) = &self.proxy {
            let mut seen = HashMap::new();
            for r in &proxy.routes {
                let n = seen.entry(r.repository_id.as_str()).or_insert(0);
                *n += 1;
                if *n == 2 {
                    at(&r.repository_id, 2, format!("proxy: duplicate repository id {:?}", r.repository_id));
                }
            }
            if let Err(e) = RoutingTable::new(&proxy.prefix, proxy.routes.clone()) {
                if !matches!(e, oairelay_proxy::RouteError::Duplicate(_)) {
                    at("[proxy", 1, format!("proxy: {e}"));
                }
            }
        }

        if let Some(agg) = &self.aggregator {
            let mut ids = HashMap::new();
            let mut ranks: HashMap<i64, &str> = HashMap::new();
            for r in &agg.repositories {
                let n = ids.entry(r.id.as_str()).or_insert(0);
                *n += 1;
                if *n == 2 {
                    at(&r.id, 2, format!("aggregator: duplicate repository id {:?}", r.id));
                }
                if !valid_repository_id(&r.id) {
                    at(&r.id, 1, format!("aggregator: invalid repository id {:?}", r.id));
                }
                if let Some(first) = ranks.insert(r.trust_rank, &r.id) {
                    if first != r.id {
                        at(&r.id, 1, format!(
                            "aggregator: trust rank {} is used by both {first:?} and {:?}",
                            r.trust_rank, r.id
                        ));
                    }
                }
                if !is_http_url(&r.base_url) {
                    at(&r.base_url, 1, format!("aggregator: base URL {:?} is not an http(s) URL", r.base_url));
                }
            }
            if agg.page_size == 0 {
                at("page_size", 1, "aggregator: page_size must be positive".into());
            }
            if let Some(dir) = &agg.storage_dir {
                let needle = dir.to_string_lossy();
                match std::fs::metadata(dir) {
                    Err(_) => at(&needle, 1, format!("aggregator: storage directory {} does not exist", dir.display())),
                    Ok(m) if !m.is_dir() => at(&needle, 1, format!("aggregator: storage path {} is not a directory", dir.display())),
                    Ok(m) if m.permissions().readonly() => at(&needle, 1, format!("aggregator: storage directory {} is not writable", dir.display())),
                    Ok(_) => {}
                }
            }
            if let Some(proxy) = &self.proxy {
                // Sources reached through our own proxy must have a route.
                let routed: HashSet<&str> = proxy.routes.iter().map(|r| r.repository_id.as_str()).collect();
                for r in &agg.repositories {
                    if let Some(id) = proxied_repository(&r.base_url, proxy) {
                        if !routed.contains(id.as_str()) {
                            at(&r.base_url, 1, format!("aggregator: {:?} goes through the proxy but it has no route {id:?}", r.id));
                        }
                    }
                }
            }
        }

        if let Some(gw) = &self.gateway {
            if !is_http_url(&gw.aggregator_url) {
                at(&gw.aggregator_url, 1, format!("gateway: aggregator_url {:?} is not an http(s) URL", gw.aggregator_url));
            }
            if gw.page_size == 0 {
                at("[gateway", 1, "gateway: page_size must be positive".into());
            }
            if gw.throttle.capacity == 0 || !(gw.throttle.refill_per_second > 0.0) {
                at("[gateway", 1, "gateway: throttle needs a positive capacity and refill rate".into());
            }
            if let Some(agg) = &self.aggregator {
                let known: HashSet<&str> = agg.repositories.iter().map(|r| r.id.as_str()).collect();
                for ex in &gw.excluded {
                    if !known.contains(ex.as_str()) {
                        at(ex, 1, format!("gateway: excluded repository {ex:?} is not configured in the aggregator"));
                    }
                }
            }
        }

        let listeners = self.listeners();
        for (i, (name, addr)) in listeners.iter().enumerate() {
            if let Some((other, _)) = listeners[..i].iter().find(|(_, a)| a == addr) {
                at(&format!("[{name}"), 1, format!("{name} and {other} both listen on {addr}"));
            }
        }
        out
    }

    /// Listen address of every configured daemon.
    pub fn listeners(&self) -> Vec<(&'static str, SocketAddr)> {
        let mut out = Vec::new();
        if let Some(p) = &self.proxy {
            out.push(("proxy", p.listen));
        }
        if let Some(a) = &self.aggregator {
            out.push(("aggregator", a.listen));
        }
        if let Some(g) = &self.gateway {
            out.push(("gateway", g.listen));
        }
        out
    }
}

fn is_http_url(s: &str) -> bool {
    Url::parse(s).is_ok_and(|u| matches!(u.scheme(), "http" | "https") && u.host().is_some())
}

/// The route id when `base_url` is a path-mode URL on this proxy.
fn proxied_repository(base_url: &str, proxy: &ProxyConfig) -> Option<String> {
    let url = Url::parse(base_url).ok()?;
    let addrs = url.socket_addrs(|| None).ok()?;
    if !addrs.contains(&proxy.listen) {
        return None;
    }
    let prefix = proxy.prefix.trim_matches('/');
    let rest = url.path().trim_start_matches('/').strip_prefix(prefix)?;
    let id = rest.strip_prefix('/')?.trim_end_matches('/');
    (!id.is_empty()).then(|| id.to_owned())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the `nth` occurrence of `needle`, preferring quoted matches.
fn locate(text: &str, needle: &str, nth: usize) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let quoted = format!("\"{needle}\"");
    for n in [quoted.as_str(), needle] {
        if let Some((i, _)) = text.match_indices(n).nth(nth.saturating_sub(1)) {
            return Some(line_of(text, i));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problems(text: &str) -> Vec<String> {
        match RelayConfig::parse(text) {
            Ok(_) => Vec::new(),
            Err(e) => e.problems.into_iter().map(|p| format!("{:?} {}", p.line, p.message)).collect(),
        }
    }

    #[test]
    fn empty_file_is_valid() {
        assert_eq!(RelayConfig::parse("").unwrap(), RelayConfig::default());
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
[proxy]
listen = "127.0.0.1:9001"
routes = [
  { repositoryId = "arxiv", baseUrl = "http://export.example.org/oai2" },
]

[aggregator]
listen = "127.0.0.1:9002"
page_size = 50
policy = { rules = ["duplicateDiscard", "trustedSource"], fallback = "keepBoth" }

[[aggregator.repositories]]
id = "arxiv"
base_url = "http://127.0.0.1:9001/proxy/arxiv"
trust_rank = 1

[gateway]
listen = "127.0.0.1:9003"
aggregator_url = "http://127.0.0.1:9002"
excluded = ["arxiv"]
"#;
        let c = RelayConfig::parse(text).unwrap_or_else(|e| panic!("{e}"));
        assert_eq!(c.listeners().len(), 3);
        assert_eq!(c.aggregator.unwrap().repositories[0].id, "arxiv");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let p = problems("[aggregator]\npage_size = 5\nlisten = \n");
        assert_eq!(p.len(), 1);
        assert!(p[0].starts_with("Some(3)"), "{p:?}");
        let p = problems("[aggregator]\nbogus = 1\n");
        assert!(p[0].starts_with("Some(2)") && p[0].contains("bogus"), "{p:?}");
    }

    #[test]
    fn duplicate_ids_are_reported_at_the_second_occurrence() {
        let text = "[proxy]\nroutes = [\n  { repositoryId = \"a\", baseUrl = \"http://x/oai\" },\n  { repositoryId = \"a\", baseUrl = \"http://y/oai\" },\n]\n";
        let p = problems(text);
        assert_eq!(p.len(), 1, "{p:?}");
        assert!(p[0].starts_with("Some(4)") && p[0].contains("duplicate"), "{p:?}");

        let text = "[[aggregator.repositories]]\nid = \"a\"\nbase_url = \"http://x/oai\"\ntrust_rank = 1\n\
                    [[aggregator.repositories]]\nid = \"a\"\nbase_url = \"http://y/oai\"\ntrust_rank = 2\n";
        let p = problems(text);
        assert!(p[0].starts_with("Some(6)") && p[0].contains("duplicate"), "{p:?}");
    }

    #[test]
    fn missing_storage_dir_names_the_path() {
        let p = problems("[aggregator]\nstorage_dir = \"/nonexistent/relay-store\"\n");
        assert!(p[0].contains("/nonexistent/relay-store"), "{p:?}");
        assert!(p[0].starts_with("Some(2)"));
    }

    #[test]
    fn cross_section_references_are_checked() {
        let text = r#"
[proxy]
listen = "127.0.0.1:9001"
routes = []

[aggregator]
listen = "127.0.0.1:9002"
repositories = [{ id = "a", base_url = "http://127.0.0.1:9001/proxy/a", trust_rank = 1 }]

[gateway]
listen = "127.0.0.1:9002"
aggregator_url = "not a url"
excluded = ["b"]
"#;
        let p = problems(text).join("\n");
        assert!(p.contains("no route \"a\""), "{p}");
        assert!(p.contains("aggregator_url"), "{p}");
        assert!(p.contains("excluded repository \"b\""), "{p}");
        assert!(p.contains("both listen on 127.0.0.1:9002"), "{p}");
    }

    #[test]
    fn rank_clash_and_bad_ids() {
        let text = "[aggregator]\nrepositories = [\n { id = \"a b\", base_url = \"http://x/\", trust_rank = 1 },\n { id = \"c\", base_url = \"ftp://y/\", trust_rank = 1 },\n]\n";
        let p = problems(text).join("\n");
        assert!(p.contains("invalid repository id \"a b\""), "{p}");
        assert!(p.contains("trust rank 1"), "{p}");
        assert!(p.contains("ftp://y/"), "{p}");
    }
}
