//! Commands that talk to a running aggregator over its admin endpoints.

use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub repository: String,
    pub ingested: usize,
    pub collided: usize,
    pub dropped: usize,
    pub unchanged: usize,
    pub pages: usize,
    pub elapsed_ms: u64,
    pub error: Option<String>,
    pub next_attempt: Option<String>,
    pub consecutive_failures: u32,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Status {
    pub total_records: usize,
    pub repositories: Vec<RepoRow>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepoRow {
    pub id: String,
    pub status: String,
    pub records: usize,
    #[serde(default)]
    pub last_harvest: std::collections::BTreeMap<String, String>,
    pub consecutive_failures: u32,
    pub next_attempt: Option<String>,
    pub last_error: Option<String>,
}

fn client(timeout: Option<Duration>) -> reqwest::Client {
    let mut b = reqwest::Client::builder();
    if let Some(t) = timeout {
        b = b.timeout(t);
    }
    b.build().expect("HTTP client configuration is static")
}

/// Triggers a harvest and prints its summary. Fails on an unknown
/// repository or a failed harvest.
pub async fn harvest_now(root: &str, repo: &str, format: Format) -> Result<()> {
    let url = format!("{root}/admin/harvest/{repo}");
    let resp = client(None)
        .post(&url)
        .send()
        .await
        .with_context(|| format!("aggregator at {root} is unreachable"))?;
    let status = resp.status();
    let body = resp.bytes().await?;
    if status == reqwest::StatusCode::NOT_FOUND {
        bail!("unknown repository {repo:?}");
    }
    if !status.is_success() {
        bail!("{url} answered {status}: {}", String::from_utf8_lossy(&body).trim());
    }
    let summary: Summary = serde_json::from_slice(&body).context("decoding harvest summary")?;
    match format {
        Format::Json => println!("{}", String::from_utf8_lossy(&body)),
        Format::Table => print!("{}", render_summary(&summary)),
    }
    if let Some(e) = &summary.error {
        bail!("harvest of {repo} failed: {e}");
    }
    Ok(())
}

pub fn render_summary(s: &Summary) -> String {
    let mut out = format!(
        "{}: ingested {}, collided {}, dropped {}, unchanged {}, {} pages in {} ms\n",
        s.repository, s.ingested, s.collided, s.dropped, s.unchanged, s.pages, s.elapsed_ms
    );
    if let Some(e) = &s.error {
        out += &format!(
            "{}: failed ({} consecutive): {e}\n{}: next attempt {}\n",
            s.repository,
            s.consecutive_failures,
            s.repository,
            s.next_attempt.as_deref().unwrap_or("-")
        );
    }
    out
}

pub async fn status(root: &str, format: Format) -> Result<()> {
    let url = format!("{root}/admin/status");
    let resp = client(Some(Duration::from_secs(30)))
        .get(&url)
        .send()
        .await
        .with_context(|| format!("aggregator at {root} is unreachable"))?;
    let code = resp.status();
    let body = resp.bytes().await?;
    if !code.is_success() {
        bail!("{url} answered {code}");
    }
    match format {
        Format::Json => println!("{}", String::from_utf8_lossy(&body)),
        Format::Table => {
            let status: Status = serde_json::from_slice(&body).context("decoding status")?;
            print!("{}", render_status(&status));
        }
    }
    Ok(())
}

pub fn render_status(s: &Status) -> String {
    let mut rows = vec![[
        "REPOSITORY".to_owned(),
        "STATUS".into(),
        "RECORDS".into(),
        "LAST HARVEST".into(),
        "FAILURES".into(),
        "NEXT ATTEMPT".into(),
    ]];
    for r in &s.repositories {
        let last = if r.last_harvest.is_empty() {
            "-".to_owned()
        } else {
            r.last_harvest
                .iter()
                .map(|(p, d)| format!("{p}={d}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        rows.push([
            r.id.clone(),
            r.status.clone(),
            r.records.to_string(),
            last,
            r.consecutive_failures.to_string(),
            r.next_attempt.clone().unwrap_or_else(|| "-".into()),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out += cells.join("  ").trim_end();
        out.push('\n');
    }
    for r in s.repositories.iter().filter(|r| r.last_error.is_some()) {
        out += &format!("{}: {}\n", r.id, r.last_error.as_deref().unwrap_or_default());
    }
    out += &format!("{} records\n", s.total_records);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_table_has_one_row_per_repository() {
        let status: Status = serde_json::from_str(
            r#"{"totalRecords":7,"generation":3,"repositories":[
              {"id":"a","baseUrl":"http://a","trustRank":1,"status":"active","formats":["oai_dc"],
               "lastHarvest":{"oai_dc":"2002-01-01T00:00:00Z"},"records":7,"consecutiveFailures":0,
               "nextAttempt":null,"lastError":null},
              {"id":"b","baseUrl":"http://b","trustRank":2,"status":"pending","formats":[],
               "lastHarvest":{},"records":0,"consecutiveFailures":3,
               "nextAttempt":"2002-01-01T08:00:00Z","lastError":"connection refused"}]}"#,
        )
        .unwrap();
        let table = render_status(&status);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("REPOSITORY"));
        assert!(lines[1].starts_with("a ") && lines[1].contains("oai_dc=2002-01-01T00:00:00Z"));
        assert!(lines[2].starts_with("b ") && lines[2].contains(" 3 "));
        assert_eq!(lines[3], "b: connection refused");
        assert_eq!(lines[4], "7 records");
    }

    #[test]
    fn failed_summary_shows_backoff() {
        let s = Summary {
            repository: "x".into(),
            ingested: 0,
            collided: 0,
            dropped: 0,
            unchanged: 0,
            pages: 0,
            elapsed_ms: 4,
            error: Some("connection refused".into()),
            next_attempt: Some("2002-01-01T02:00:00Z".into()),
            consecutive_failures: 1,
        };
        let text = render_summary(&s);
        assert!(text.contains("failed (1 consecutive)"));
        assert!(text.contains("next attempt 2002-01-01T02:00:00Z"));
    }
}
