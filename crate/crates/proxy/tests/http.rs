use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::RawQuery;
use axum::http::StatusCode;
use axum::routing::get;
use axum::Router;
use oairelay_core::model::{OAI_DC_NS, OAI_NS};
use oairelay_proxy::{
    router, ProxyConfig, ProxyMode, ProxyRoute, ProxyState, RepairReport, RoutingTable,
};
use tokio::net::TcpListener;

fn body(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<OAI-PMH xmlns=\"{OAI_NS}\">\
         <responseDate>2002-06-01T00:00:00Z</responseDate>\
         <request verb=\"GetRecord\" identifier=\"oai:t:1\" metadataPrefix=\"oai_dc\">http://t/oai</request>\
         <GetRecord><record><header><identifier>oai:t:1</identifier><datestamp>2002-01-01</datestamp></header>\
         <metadata><oai_dc:dc xmlns:oai_dc=\"{OAI_DC_NS}\" xmlns:dc=\"http://purl.org/dc/elements/1.1/\">\
         <dc:title>{title}</dc:title></oai_dc:dc></metadata></record></GetRecord></OAI-PMH>"
    )
}

async fn spawn(app: Router) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

async fn upstream() -> SocketAddr {
    let app = Router::new()
        .route("/clean", get(|| async { body("fine") }))
        .route("/dirty", get(|| async { body("Smith & Jones & Co") }))
        .route("/gone", get(|| async { (StatusCode::NOT_FOUND, "nothing here") }))
        .route(
            "/echo",
            get(|RawQuery(q): RawQuery| async move { body(&q.unwrap_or_default().replace('&', ";")) }),
        );
    spawn(app).await
}

/// A listener that accepts connections and never answers.
async fn silent() -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        let mut held = Vec::new();
        while let Ok((sock, _)) = listener.accept().await {
            held.push(sock);
        }
    });
    addr
}

async fn proxy(routes: Vec<(&str, String)>, mode: ProxyMode) -> (SocketAddr, Arc<ProxyState>) {
    let config = ProxyConfig {
        prefix: "oai-proxy/cgi/proxy".into(),
        mode,
        timeout_ms: 500,
        routes: routes
            .into_iter()
            .map(|(id, url)| ProxyRoute {
                repository_id: id.into(),
                base_url: url,
            })
            .collect(),
        ..ProxyConfig::default()
    };
    let state = Arc::new(ProxyState::new(&config).unwrap());
    (spawn(router(state.clone())).await, state)
}

#[tokio::test]
async fn path_style_routing_and_reports() {
    let up = upstream().await;
    let (addr, _) = proxy(
        vec![
            ("clean", format!("http://{up}/clean")),
            ("dirty", format!("http://{up}/dirty")),
            ("gone", format!("http://{up}/gone")),
        ],
        ProxyMode::Both,
    )
    .await;
    let base = format!("http://{addr}/oai-proxy/cgi/proxy");

    let direct = reqwest::get(format!("http://{up}/clean")).await.unwrap().bytes().await.unwrap();
    let resp = reqwest::get(format!("{base}/clean?verb=Identify")).await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["x-repair-fixes"], "0");
    assert_eq!(resp.bytes().await.unwrap(), direct);

    let resp = reqwest::get(format!("{base}/dirty")).await.unwrap();
    assert_eq!(resp.status(), 200);
    let id = resp.headers()["x-repair-report-id"].to_str().unwrap().to_owned();
    assert_eq!(resp.headers()["x-repair-fixes"], "2");
    let text = resp.text().await.unwrap();
    roxmltree::Document::parse(&text).unwrap();
    assert!(text.contains("Smith &amp; Jones &amp; Co"));

    let raw = reqwest::get(format!("http://{addr}/admin/reports/{id}"))
        .await
        .unwrap()
        .bytes()
        .await
        .unwrap();
    let report: RepairReport = serde_json::from_slice(&raw).unwrap();
    assert_eq!(report.entity_fixes.len(), 2);
    assert_eq!(report.repaired_records, ["oai:t:1"]);
    assert_eq!(report.route_id.as_deref(), Some("dirty"));

    let resp = reqwest::get(format!("{base}/gone")).await.unwrap();
    assert_eq!(resp.status(), 404);
    assert_eq!(resp.text().await.unwrap(), "nothing here");

    let resp = reqwest::get(format!("{base}/nosuch")).await.unwrap();
    assert_eq!(resp.status(), 404);
    assert!(resp.text().await.unwrap().contains("nosuch"));
}

#[tokio::test]
async fn query_is_forwarded_verbatim() {
    let up = upstream().await;
    let (addr, _) = proxy(vec![("e", format!("http://{up}/echo"))], ProxyMode::Both).await;
    let text = reqwest::get(format!(
        "http://{addr}/oai-proxy/cgi/proxy/e?verb=GetRecord&identifier=oai%3At%3A1"
    ))
    .await
    .unwrap()
    .text()
    .await
    .unwrap();
    assert!(text.contains("verb=GetRecord;identifier=oai%3At%3A1"), "{text}");
}

#[tokio::test]
async fn transparent_mode() {
    let up = upstream().await;
    let (addr, _) = proxy(vec![], ProxyMode::Both).await;
    let target = format!("http://{up}/dirty");
    let url = reqwest::Url::parse_with_params(
        &format!("http://{addr}/oai-proxy/cgi/proxy"),
        [("url", target.as_str())],
    )
    .unwrap();
    let resp = reqwest::get(url).await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["x-repair-fixes"], "2");

    let (addr, _) = proxy(vec![], ProxyMode::Path).await;
    let url = reqwest::Url::parse_with_params(
        &format!("http://{addr}/oai-proxy/cgi/proxy"),
        [("url", target.as_str())],
    )
    .unwrap();
    assert_eq!(reqwest::get(url).await.unwrap().status(), 404);
}

#[tokio::test]
async fn upstream_down_is_gateway_timeout() {
    let quiet = silent().await;
    let closed = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let (addr, _) = proxy(
        vec![
            ("quiet", format!("http://{quiet}/oai")),
            ("closed", format!("http://{closed}/oai")),
        ],
        ProxyMode::Both,
    )
    .await;
    for id in ["quiet", "closed"] {
        let resp = reqwest::get(format!("http://{addr}/oai-proxy/cgi/proxy/{id}?verb=Identify"))
            .await
            .unwrap();
        assert_eq!(resp.status(), 504, "{id}");
    }
}

#[tokio::test]
async fn routes_are_replaced_atomically() {
    let up = upstream().await;
    let (addr, state) = proxy(vec![], ProxyMode::Both).await;
    let url = format!("http://{addr}/oai-proxy/cgi/proxy/clean");
    assert_eq!(reqwest::get(&url).await.unwrap().status(), 404);
    state.replace_routes(
        RoutingTable::new(
            "oai-proxy/cgi/proxy",
            vec![ProxyRoute {
                repository_id: "clean".into(),
                base_url: format!("http://{up}/clean"),
            }],
        )
        .unwrap(),
    );
    assert_eq!(reqwest::get(&url).await.unwrap().status(), 200);

    let client = reqwest::Client::new();
    let resp = client
        .put(format!("http://{addr}/admin/routes"))
        .header("content-type", "application/json")
        .body(r#"[{"repositoryId":"a","baseUrl":"not a url"}]"#)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    assert_eq!(reqwest::get(&url).await.unwrap().status(), 200);
}
