//! A link-following crawler for the gateway, standing in for a search
//! engine robot.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use oairelay_core::OaiClient;

/// Status of every page reached, keyed by path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Crawl {
    pub pages: BTreeMap<String, u16>,
}

impl Crawl {
    pub fn failures(&self) -> Vec<(&str, u16)> {
        self.pages
            .iter()
            .filter(|(_, s)| **s != 200)
            .map(|(p, s)| (p.as_str(), *s))
            .collect()
    }
}

/// Local links (those starting with `/`) in an HTML page or sitemap.
pub fn links(html: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (attr, end) in [("href=\"", '"'), ("<loc>", '<')] {
        let mut rest = html;
        while let Some(i) = rest.find(attr) {
            rest = &rest[i + attr.len()..];
            let Some(j) = rest.find(end) else { break };
            let raw = rest[..j]
                .replace("&quot;", "\"")
                .replace("&lt;", "<")
                .replace("&gt;", ">")
                .replace("&amp;", "&");
            out.push(raw);
            rest = &rest[j..];
        }
    }
    out
}

/// Breadth-first crawl of `root` from `start`, staying on the same host.
/// Absolute links into `root` are followed like local ones.
pub async fn crawl(root: &str, start: &[String]) -> anyhow::Result<Crawl> {
    let client = OaiClient::new(Duration::from_secs(30));
    let root = root.trim_end_matches('/');
    let mut result = Crawl::default();
    let mut queue: VecDeque<String> = start.iter().cloned().collect();
    while let Some(path) = queue.pop_front() {
        if result.pages.contains_key(&path) {
            continue;
        }
        let raw = client.get_raw(&format!("{root}{path}")).await?;
        result.pages.insert(path, raw.status);
        if raw.status != 200 {
            continue;
        }
        for link in links(&String::from_utf8_lossy(&raw.body)) {
            let local = match link.strip_prefix(root) {
                Some(rest) => rest.to_owned(),
                None if link.starts_with('/') => link,
                None => continue,
            };
            if !result.pages.contains_key(&local) {
                queue.push_back(local);
            }
        }
    }
    Ok(result)
}
