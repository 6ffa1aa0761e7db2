mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{baseline, fire, t0, users, Nodes, PASSWORD};
use firewatch_service::http::{serve, AppState};
use firewatch_service::{IngestCore, ManualClock};
use futures::StreamExt;
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Server {
    base: String,
    client: reqwest::Client,
    clock: Arc<ManualClock>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

async fn start(core: IngestCore, registry_path: Option<std::path::PathBuf>) -> Server {
    let clock = Arc::new(ManualClock::new(t0()));
    let state = AppState::new(core, clock.clone(), registry_path);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    Server {
        base,
        client: reqwest::Client::new(),
        clock,
        shutdown: Some(tx),
    }
}

impl Server {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn login(&self, user: &str) -> String {
        let resp = self
            .client
            .post(self.url("/auth/login"))
            .json(&json!({"username": user, "password": PASSWORD}))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        resp.json::<Value>().await.unwrap()["token"]
            .as_str()
            .unwrap()
            .to_string()
    }

    async fn post_package(&self, token: &str, bytes: Vec<u8>) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(self.url("/packages"))
            .bearer_auth(token)
            .header("content-type", "application/octet-stream")
            .body(bytes)
            .send()
            .await
            .unwrap();
        (resp.status(), resp.json().await.unwrap())
    }

    async fn get(&self, token: &str, path: &str) -> (StatusCode, Value) {
        let resp = self
            .client
            .get(self.url(path))
            .bearer_auth(token)
            .send()
            .await
            .unwrap();
        (resp.status(), resp.json().await.unwrap_or(Value::Null))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SseEvent {
    id: u64,
    event: String,
    data: Value,
}

/// Reads `n` events from an open stream.
async fn read_events(resp: reqwest::Response, n: usize) -> Vec<SseEvent> {
    let mut stream = resp.bytes_stream();
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < n {
        let chunk = tokio::time::timeout(Duration::from_secs(5), stream.next())
            .await
            .expect("event stream stalled");
        buf.push_str(std::str::from_utf8(&chunk.unwrap().unwrap()).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let (mut id, mut event, mut data) = (None, String::new(), String::new());
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = Some(v.trim().parse().unwrap());
                } else if let Some(v) = line.strip_prefix("event:") {
                    event = v.trim().into();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            if let Some(id) = id {
                out.push(SseEvent {
                    id,
                    event,
                    data: serde_json::from_str(&data).unwrap(),
                });
            }
        }
    }
    out
}

#[tokio::test]
async fn login_and_role_checks() {
    let nodes = Nodes::new(8);
    let srv = start(
        IngestCore::in_memory(nodes.service_registry(), users()),
        None,
    )
    .await;

    let resp = srv
        .client
        .post(srv.url("/auth/login"))
        .json(&json!({"username": "ops", "password": "nope"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "bad-credentials");
    assert!(body["message"].is_string());

    let resp = srv.client.get(srv.url("/areas")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    assert_eq!(resp.json::<Value>().await.unwrap()["code"], "unauthorized");
    let (status, _) = srv.get("00", "/areas").await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let viewer = srv.login("viewer").await;
    let (status, body) = srv.get(&viewer, "/areas").await;
    assert_eq!((status, body), (StatusCode::OK, json!([])));
    let (status, body) = srv.post_package(&viewer, vec![1, 2, 3]).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::FORBIDDEN, Some("forbidden"))
    );
    let resp = srv
        .client
        .post(srv.url("/admin/tokens"))
        .bearer_auth(srv.login("ops").await)
        .json(&json!({"username": "gateway", "role": "operator"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::FORBIDDEN);

    srv.clock.advance(chrono::Duration::hours(9));
    let (status, body) = srv.get(&viewer, "/areas").await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::UNAUTHORIZED, Some("token-expired"))
    );

    let health: Value = srv
        .client
        .get(srv.url("/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(health["status"], "ok");
}

#[tokio::test]
async fn packages_queries_and_errors() {
    let mut nodes = Nodes::new(16);
    let srv = start(
        IngestCore::in_memory(nodes.service_registry(), users()),
        None,
    )
    .await;
    let ops = srv.login("ops").await;

    let first = nodes.package(0, "ridge", 0, baseline());
    let (status, body) = srv.post_package(&ops, first.clone()).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["status"], "accepted");
    assert_eq!(body["assessment"]["level"], "NFR");
    let (status, body) = srv.post_package(&ops, first).await;
    assert_eq!(
        (status, body["status"].as_str()),
        (StatusCode::OK, Some("duplicate"))
    );

    for i in 1..5 {
        let (status, _) = srv
            .post_package(&ops, nodes.package(0, "ridge", i * 300, baseline()))
            .await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (status, body) = srv
        .post_package(&ops, nodes.package(1, "ridge", 300, baseline()))
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("stale-measurement"))
    );
    let mut bad = nodes.package(0, "ridge", 9000, baseline());
    bad[200] ^= 0x80;
    let (status, body) = srv.post_package(&ops, bad).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::UNAUTHORIZED, Some("verification-failed"))
    );
    let (status, _) = srv.post_package(&ops, b"garbage".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, areas) = srv.get(&ops, "/areas").await;
    assert_eq!(areas[0]["area_id"], "ridge");
    assert_eq!(areas[0]["measurement_count"], 5);
    let (status, detail) = srv.get(&ops, "/areas/ridge").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(detail["history"].as_array().unwrap().len(), 5);
    assert_eq!(detail["next_window"], "all");
    let (status, body) = srv.get(&ops, "/areas/nowhere").await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("unknown-area"))
    );

    let (_, page) = srv
        .get(&ops, "/areas/ridge/measurements?limit=2&offset=1")
        .await;
    assert_eq!(page["total"], 5);
    let seqs: Vec<u64> = page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["seq"].as_u64().unwrap())
        .collect();
    assert_eq!(seqs, [4, 6]);
    let from = (t0() + chrono::Duration::seconds(600))
        .to_rfc3339()
        .replace('+', "%2B");
    let (_, page) = srv
        .get(&ops, &format!("/areas/ridge/measurements?from={from}"))
        .await;
    assert_eq!(page["total"], 3);
    let (status, _) = srv.get(&ops, "/areas/ridge/measurements?limit=0").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, health) = srv.get(&ops, "/health").await;
    assert_eq!(health["rejections"], 3);
}

#[tokio::test]
async fn declarations_and_frequency() {
    let mut nodes = Nodes::new(16);
    let srv = start(
        IngestCore::in_memory(nodes.service_registry(), users()),
        None,
    )
    .await;
    let ops = srv.login("ops").await;
    let viewer = srv.login("viewer").await;
    for i in 0..8 {
        srv.post_package(&ops, nodes.package(0, "ridge", i * 300, baseline()))
            .await;
    }

    let declare = |token: &str, area: &str, body: Value| {
        srv.client
            .post(srv.url(&format!("/areas/{area}/declarations")))
            .bearer_auth(token)
            .json(&body)
            .send()
    };
    assert_eq!(
        declare(
            &viewer,
            "ridge",
            json!({"level": "HFR", "ttl_seconds": 7200})
        )
        .await
        .unwrap()
        .status(),
        StatusCode::FORBIDDEN
    );
    assert_eq!(
        declare(
            &ops,
            "nowhere",
            json!({"level": "HFR", "ttl_seconds": 7200})
        )
        .await
        .unwrap()
        .status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        declare(&ops, "ridge", json!({"level": "NFR", "ttl_seconds": 7200}))
            .await
            .unwrap()
            .status(),
        StatusCode::BAD_REQUEST
    );
    let resp = declare(&ops, "ridge", json!({"level": "HFR", "ttl_seconds": 7200}))
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let (_, detail) = srv.get(&ops, "/areas/ridge").await;
    assert_eq!(detail["declaration_active"], true);
    assert_eq!(detail["next_window"], 5);
    let (_, body) = srv
        .post_package(&ops, nodes.package(0, "ridge", 2400, baseline()))
        .await;
    assert_eq!(body["assessment"]["samples_averaged"], 5);

    let dev = common::DEVICES[1];
    let put = |token: &str, imei: &str, period: u32| {
        srv.client
            .put(srv.url(&format!("/devices/{imei}/frequency")))
            .bearer_auth(token)
            .json(&json!({"period_seconds": period}))
            .send()
    };
    assert_eq!(
        put(&ops, dev, 5).await.unwrap().status(),
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        put(&ops, "111111111111111", 60).await.unwrap().status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        put(&ops, "12", 60).await.unwrap().status(),
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        put(&viewer, dev, 60).await.unwrap().status(),
        StatusCode::FORBIDDEN
    );
    assert_eq!(
        put(&ops, dev, 60).await.unwrap().status(),
        StatusCode::ACCEPTED
    );
    let (_, st) = srv.get(&viewer, &format!("/devices/{dev}/frequency")).await;
    assert_eq!(
        (st["period_seconds"].as_u64(), st["state"].as_str()),
        (Some(60), Some("pending"))
    );

    // Device 0 uplinks; the pending change belongs to device 1 and stays.
    let (_, body) = srv
        .post_package(&ops, nodes.package(0, "ridge", 2700, baseline()))
        .await;
    assert!(body["period_seconds"].is_null());
    // Device 1 relays a package from device 0 and picks up its change.
    let resp = srv
        .client
        .post(srv.url("/packages"))
        .bearer_auth(&ops)
        .header("x-device-id", dev)
        .body(nodes.package(0, "ridge", 3000, baseline()))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.json::<Value>().await.unwrap()["period_seconds"], 60);
    let (_, st) = srv.get(&viewer, &format!("/devices/{dev}/frequency")).await;
    assert_eq!(st["state"], "applied");
}

#[tokio::test]
async fn event_stream_delivers_in_order_and_resumes() {
    let mut nodes = Nodes::new(16);
    let srv = start(
        IngestCore::in_memory(nodes.service_registry(), users()),
        None,
    )
    .await;
    let ops = srv.login("ops").await;
    let viewer = srv.login("viewer").await;

    let resp = srv.client.get(srv.url("/events")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);

    let a = srv
        .client
        .get(srv.url("/events"))
        .bearer_auth(&viewer)
        .send()
        .await
        .unwrap();
    let b = srv
        .client
        .get(srv.url(&format!("/events?token={viewer}")))
        .send()
        .await
        .unwrap();
    assert_eq!(a.status(), StatusCode::OK);
    srv.post_package(&ops, nodes.package(0, "ridge", 0, baseline()))
        .await;
    srv.post_package(&ops, nodes.package(0, "ridge", 300, fire()))
        .await;
    let ea = read_events(a, 3).await;
    let eb = read_events(b, 3).await;
    assert_eq!(ea, eb);
    assert_eq!(
        ea.iter().map(|e| e.event.as_str()).collect::<Vec<_>>(),
        ["assessment", "assessment", "alert"]
    );
    assert!(ea.windows(2).all(|w| w[0].id < w[1].id));
    assert_eq!(ea[2].data["state"], "active");

    let resumed = srv
        .client
        .get(srv.url("/events"))
        .bearer_auth(&viewer)
        .header("Last-Event-ID", ea[0].id.to_string())
        .send()
        .await
        .unwrap();
    assert_eq!(read_events(resumed, 2).await, ea[1..]);
    let resumed = srv
        .client
        .get(srv.url(&format!("/events?after={}", ea[1].id)))
        .bearer_auth(&viewer)
        .send()
        .await
        .unwrap();
    assert_eq!(read_events(resumed, 1).await, ea[2..]);
}

#[tokio::test]
async fn admin_issues_tokens_and_reloads_registry() {
    let dir = tempfile::tempdir().unwrap();
    let reg_path = dir.path().join("registry.json");
    let mut nodes = Nodes::new(8);
    let mut partial = firewatch_crypto::Registry::default();
    partial
        .insert(nodes.registry.get(&Nodes::device(0)).unwrap().clone())
        .unwrap();
    partial.save(&reg_path).unwrap();
    let srv = start(
        IngestCore::in_memory(partial.service_view(), users()),
        Some(reg_path.clone()),
    )
    .await;
    let admin = srv.login("admin").await;

    let resp = srv
        .client
        .post(srv.url("/admin/tokens"))
        .bearer_auth(&admin)
        .json(&json!({"username": "gateway", "role": "operator", "ttl_seconds": 60}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let gateway = resp.json::<Value>().await.unwrap()["token"]
        .as_str()
        .unwrap()
        .to_string();

    let (status, _) = srv
        .post_package(&gateway, nodes.package(1, "ridge", 0, baseline()))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    nodes.registry.save(&reg_path).unwrap();
    let resp = srv
        .client
        .post(srv.url("/admin/registry/reload"))
        .bearer_auth(&admin)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.json::<Value>().await.unwrap()["devices"], 3);
    let (status, _) = srv
        .post_package(&gateway, nodes.package(1, "ridge", 300, baseline()))
        .await;
    assert_eq!(status, StatusCode::CREATED);

    srv.clock.advance(chrono::Duration::seconds(61));
    let (status, _) = srv
        .post_package(&gateway, nodes.package(1, "ridge", 600, baseline()))
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}
