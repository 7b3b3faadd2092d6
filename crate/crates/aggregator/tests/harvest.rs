//! End-to-end harvesting against a small in-process data provider.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use chrono::{TimeZone, Utc};
use oairelay_aggregator::{
    backoff_secs, router, Aggregator, AggregatorConfig, RegisterError, RepoStatus,
    RepositoryConfig, View,
};
use oairelay_core::model::{OAI_DC_NS, OAI_NS};
use oairelay_core::{Clock, Payload, SimClock};
use tokio::net::TcpListener;

const PAGE: usize = 40;

#[derive(Debug)]
struct Dp {
    clock: SimClock,
    version: &'static str,
    up: bool,
    /// (identifier, datestamp, title)
    records: Vec<(String, String, String)>,
}

type Shared = Arc<Mutex<Dp>>;

fn envelope(now: &str, inner: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<OAI-PMH xmlns=\"{OAI_NS}\">\
         <responseDate>{now}</responseDate><request>http://mini/oai</request>{inner}</OAI-PMH>"
    )
}

fn record(id: &str, stamp: &str, title: &str) -> String {
    format!(
        "<record><header><identifier>{id}</identifier><datestamp>{stamp}</datestamp></header>\
         <metadata><oai_dc:dc xmlns:oai_dc=\"{OAI_DC_NS}\" xmlns:dc=\"http://purl.org/dc/elements/1.1/\">\
         <dc:title>{title}</dc:title></oai_dc:dc></metadata></record>"
    )
}

async fn oai(
    State(dp): State<Shared>,
    Query(q): Query<std::collections::HashMap<String, String>>,
) -> Response {
    let dp = dp.lock().unwrap();
    if !dp.up {
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    let now = dp.clock.now().format("%Y-%m-%dT%H:%M:%SZ").to_string();
    let inner = match q.get("verb").map(String::as_str) {
        Some("Identify") => format!(
            "<Identify><repositoryName>mini</repositoryName><baseURL>http://mini/oai</baseURL>\
             <protocolVersion>{}</protocolVersion><adminEmail>a@mini</adminEmail>\
             <earliestDatestamp>2002-01-01T00:00:00Z</earliestDatestamp>\
             <deletedRecord>no</deletedRecord><granularity>YYYY-MM-DDThh:mm:ssZ</granularity></Identify>",
            dp.version
        ),
        Some("ListMetadataFormats") => format!(
            "<ListMetadataFormats><metadataFormat><metadataPrefix>oai_dc</metadataPrefix>\
             <schema>http://www.openarchives.org/OAI/2.0/oai_dc.xsd</schema>\
             <metadataNamespace>{OAI_DC_NS}</metadataNamespace></metadataFormat></ListMetadataFormats>"
        ),
        Some("ListRecords") => {
            let (offset, from) = match q.get("resumptionToken") {
                Some(t) => {
                    let (o, f) = t.split_once('|').unwrap();
                    (o.parse::<usize>().unwrap(), f.to_owned())
                }
                None => (0, q.get("from").cloned().unwrap_or_default()),
            };
            let matching: Vec<_> = dp.records.iter().filter(|r| r.1 >= from).collect();
            if matching.is_empty() {
                "<error code=\"noRecordsMatch\"/>".to_owned()
            } else {
                let end = (offset + PAGE).min(matching.len());
                let mut s = String::from("<ListRecords>");
                for r in &matching[offset..end] {
                    s += &record(&r.0, &r.1, &r.2);
                }
                if end < matching.len() {
                    s += &format!("<resumptionToken>{end}|{from}</resumptionToken>");
                } else if offset > 0 {
                    s += "<resumptionToken/>";
                }
                s + "</ListRecords>"
            }
        }
        _ => "<error code=\"badVerb\"/>".to_owned(),
    };
    (
        [("content-type", "text/xml; charset=utf-8")],
        envelope(&now, &inner),
    )
        .into_response()
}

async fn spawn(app: Router) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn clock() -> SimClock {
    SimClock::new(Utc.with_ymd_and_hms(2002, 6, 1, 0, 0, 0).unwrap())
}

async fn mini_dp(clock: &SimClock, n: usize, version: &'static str) -> (String, Shared) {
    let records = (0..n)
        .map(|i| {
            (
                format!("oai:mini:{i}"),
                "2002-01-01T00:00:00Z".to_owned(),
                format!("Title {i}"),
            )
        })
        .collect();
    let dp = Arc::new(Mutex::new(Dp {
        clock: clock.clone(),
        version,
        up: true,
        records,
    }));
    let app = Router::new().route("/oai", get(oai)).with_state(dp.clone());
    (format!("http://{}/oai", spawn(app).await), dp)
}

fn repo(id: &str, base_url: &str, rank: i64) -> RepositoryConfig {
    RepositoryConfig {
        id: id.into(),
        base_url: base_url.into(),
        trust_rank: rank,
        poll_interval_secs: 600,
        reliability: Default::default(),
        formats: None,
    }
}

fn aggregator(clock: &SimClock) -> Arc<Aggregator> {
    let config = AggregatorConfig {
        page_size: 25,
        request_timeout_ms: 2000,
        ..Default::default()
    };
    Arc::new(Aggregator::new(config, Arc::new(clock.clone())).unwrap())
}

fn payload_of(agg: &Aggregator, view: View, query: &[(&str, &str)]) -> Payload {
    let pairs = query
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    agg.serve_pairs(&view, pairs).unwrap().payload
}

fn error_code(p: &Payload) -> Option<String> {
    match p {
        Payload::Errors(e) => Some(e[0].code.as_str().to_owned()),
        _ => None,
    }
}

#[tokio::test]
async fn registration_outcomes() {
    let clock = clock();
    let agg = aggregator(&clock);
    let (good, _) = mini_dp(&clock, 3, "2.0").await;
    let (old, _) = mini_dp(&clock, 3, "1.1").await;
    let (down, down_dp) = mini_dp(&clock, 3, "2.0").await;
    down_dp.lock().unwrap().up = false;

    let r = agg.register(repo("good", &good, 1)).await.unwrap();
    assert_eq!(r.status, RepoStatus::Active);
    assert_eq!(r.formats[0].prefix, "oai_dc");

    let r = agg.register(repo("down", &down, 2)).await.unwrap();
    assert_eq!(r.status, RepoStatus::Pending);
    assert_eq!(r.consecutive_failures, 1);

    let err = agg.register(repo("old", &old, 3)).await.unwrap_err();
    assert!(matches!(err, RegisterError::Rejected(_)), "{err}");
    assert!(agg.repository("old").is_none());

    let err = agg.register(repo("good", &good, 4)).await.unwrap_err();
    assert!(matches!(err, RegisterError::Duplicate(_)));

    // The pending source comes up and is activated once its retry is due.
    down_dp.lock().unwrap().up = true;
    assert!(agg.activate_pending().await.is_empty());
    clock.advance_secs(backoff_secs(600, 1) as i64);
    let activated = agg.activate_pending().await;
    assert_eq!(activated.len(), 1);
    assert_eq!(activated[0].status, RepoStatus::Active);
}

#[tokio::test]
async fn full_then_incremental_harvest() {
    let clock = clock();
    let agg = aggregator(&clock);
    let (url, dp) = mini_dp(&clock, 100, "2.0").await;
    agg.register(repo("x", &url, 1)).await.unwrap();

    let s = agg.harvest_repository("x").await.unwrap();
    assert_eq!((s.ingested, s.pages, s.error.as_deref()), (100, 3, None));
    assert_eq!(agg.store().record_count(), 100);

    clock.advance_secs(60);
    let s = agg.harvest_repository("x").await.unwrap();
    assert_eq!((s.ingested, s.error.as_deref()), (0, None));

    // A changed record replaces the stored copy from the same source.
    clock.advance_secs(60);
    dp.lock().unwrap().records[7] = ("oai:mini:7".into(), fmt(&clock), "Revised".into());
    clock.advance_secs(1);
    let ingested_at = fmt(&clock);
    let s = agg.harvest_repository("x").await.unwrap();
    assert_eq!(s.ingested, 1);
    assert_eq!(agg.store().record_count(), 100);
    let Payload::GetRecord(rec) = payload_of(
        &agg,
        View::Aggregated,
        &[("verb", "GetRecord"), ("identifier", "oai:mini:7"), ("metadataPrefix", "oai_dc")],
    ) else {
        panic!("GetRecord failed");
    };
    let meta = rec.metadata.unwrap();
    assert!(meta.as_str().unwrap().contains("Revised"));
    assert_eq!(rec.header.datestamp.to_string(), ingested_at);

    // Nothing stored after the current instant.
    clock.advance_secs(60);
    let later = fmt(&clock);
    let p = payload_of(
        &agg,
        View::Aggregated,
        &[("verb", "ListRecords"), ("metadataPrefix", "oai_dc"), ("from", &later)],
    );
    assert_eq!(error_code(&p).as_deref(), Some("noRecordsMatch"));
}

fn fmt(clock: &SimClock) -> String {
    clock.now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[tokio::test]
async fn wrapped_view_only_serves_its_source() {
    let clock = clock();
    let agg = aggregator(&clock);
    let (x, _) = mini_dp(&clock, 5, "2.0").await;
    let (y, y_dp) = mini_dp(&clock, 5, "2.0").await;
    for r in y_dp.lock().unwrap().records.iter_mut() {
        r.0 = r.0.replace("mini", "other");
    }
    agg.register(repo("x", &x, 1)).await.unwrap();
    agg.register(repo("y", &y, 2)).await.unwrap();
    agg.harvest_repository("x").await.unwrap();
    agg.harvest_repository("y").await.unwrap();

    let p = payload_of(
        &agg,
        View::Wrapped("y".into()),
        &[("verb", "GetRecord"), ("identifier", "oai:mini:1"), ("metadataPrefix", "oai_dc")],
    );
    assert_eq!(error_code(&p).as_deref(), Some("idDoesNotExist"));
    let p = payload_of(
        &agg,
        View::Wrapped("x".into()),
        &[("verb", "GetRecord"), ("identifier", "oai:mini:1"), ("metadataPrefix", "oai_dc")],
    );
    assert!(matches!(p, Payload::GetRecord(_)));
    assert!(agg
        .serve_pairs(&View::Wrapped("z".into()), vec![("verb".into(), "Identify".into())])
        .is_err());
}

#[tokio::test]
async fn failing_source_backs_off_exponentially() {
    let clock = clock();
    let agg = aggregator(&clock);
    let (url, dp) = mini_dp(&clock, 5, "2.0").await;
    agg.register(repo("x", &url, 1)).await.unwrap();
    dp.lock().unwrap().up = false;
    let mut last = None;
    for _ in 0..3 {
        if let Some(t) = last {
            clock.set(t);
        }
        let s = agg.harvest_repository("x").await.unwrap();
        assert!(s.error.is_some());
        last = s.next_attempt;
    }
    let r = agg.repository("x").unwrap();
    assert_eq!(r.consecutive_failures, 3);
    assert_eq!(
        r.next_attempt.unwrap() - clock.now(),
        chrono::Duration::seconds(600 * 8)
    );
    assert!(agg.due_repositories().is_empty());

    dp.lock().unwrap().up = true;
    clock.set(r.next_attempt.unwrap());
    let s = agg.harvest_repository("x").await.unwrap();
    assert_eq!((s.ingested, s.consecutive_failures), (5, 0));
}

#[tokio::test]
async fn scheduler_harvests_every_due_source() {
    let clock = clock();
    let agg = aggregator(&clock);
    let (x, _) = mini_dp(&clock, 4, "2.0").await;
    let (y, y_dp) = mini_dp(&clock, 6, "2.0").await;
    for r in y_dp.lock().unwrap().records.iter_mut() {
        r.0 = r.0.replace("mini", "other");
    }
    agg.register(repo("x", &x, 1)).await.unwrap();
    agg.register(repo("y", &y, 2)).await.unwrap();
    let done = agg.harvest_due().await;
    assert_eq!(done.len(), 2);
    assert_eq!(agg.store().record_count(), 10);
    assert!(agg.harvest_due().await.is_empty());
    clock.advance_secs(600);
    assert_eq!(agg.due_repositories().len(), 2);
}

#[tokio::test]
async fn admin_endpoints() {
    let clock = clock();
    let agg = aggregator(&clock);
    let (x, _) = mini_dp(&clock, 3, "2.0").await;
    let addr = spawn(router(agg.clone())).await;
    let http = reqwest::Client::new();

    let body = serde_json::to_vec(&repo("x", &x, 1)).unwrap();
    let post = |path: &str, body: Vec<u8>| http.post(format!("http://{addr}{path}")).body(body).send();
    let resp = post("/admin/repositories", body.clone()).await.unwrap();
    assert_eq!(resp.status(), 201);
    let resp = post("/admin/repositories", body).await.unwrap();
    assert_eq!(resp.status(), 409);
    let resp = post("/admin/harvest/x", Vec::new()).await.unwrap();
    assert_eq!(resp.status(), 200);
    let resp = post("/admin/harvest/y", Vec::new()).await.unwrap();
    assert_eq!(resp.status(), 404);

    let resp = http.get(format!("http://{addr}/admin/status")).send().await.unwrap();
    let status: serde_json::Value = serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap();
    assert_eq!(status["totalRecords"], 3);
    assert_eq!(status["repositories"][0]["id"], "x");

    let resp = http.get(format!("http://{addr}/oai/nope?verb=Identify")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
}
