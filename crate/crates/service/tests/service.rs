use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cardkit_core::catalog::Catalog;
use cardkit_core::corpus;
use cardkit_core::model::Deck;
use cardkit_core::runtime::{RunOptions, StopHandle};
use cardkit_core::sim::simulate;
use cardkit_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(config: ServiceConfig) -> Router {
    router(AppState::new(Catalog::drone(), config).unwrap())
}

fn unpaced() -> ServiceConfig {
    ServiceConfig {
        ratio: 0.0,
        max_repeats: Some(2),
        ..ServiceConfig::default()
    }
}

fn corpus_deck(name: &str) -> Deck {
    let mut deck = corpus::deck(name, &Catalog::drone()).unwrap().unwrap();
    deck.deck_id = name.to_string();
    deck
}

fn world_json(name: &str) -> Value {
    serde_json::to_value(corpus::world(name).unwrap()).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn post_deck(app: &Router, deck: &Deck) {
    let (status, body) = call(app, "POST", "/decks", Some(deck.to_canonical_json())).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["deckId"], deck.deck_id);
}

async fn start(app: &Router, body: Value) -> String {
    let (status, res) = call(app, "POST", "/executions", Some(body.to_string())).await;
    assert_eq!(status, StatusCode::CREATED, "{res}");
    res["executionId"].as_str().unwrap().to_string()
}

async fn finished(app: &Router, id: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (status, record) = call(app, "GET", &format!("/executions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if ["Completed", "Stopped", "Faulted"].contains(&record["state"].as_str().unwrap()) {
            return record;
        }
        assert!(Instant::now() < deadline, "execution {id} did not finish");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

/// Incremental reader over a `text/event-stream` body.
struct SseReader {
    body: Body,
    buf: String,
}

impl SseReader {
    async fn open(app: &Router, id: &str, last: Option<u64>) -> SseReader {
        let mut req = Request::builder().uri(format!("/executions/{id}/events"));
        if let Some(last) = last {
            req = req.header("last-event-id", last.to_string());
        }
        let res = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
        assert_eq!(res.status(), StatusCode::OK);
        assert!(res.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
        SseReader {
            body: res.into_body(),
            buf: String::new(),
        }
    }

    /// Next `(id, event)` pair, or `None` once the server closes the stream.
    async fn next(&mut self) -> Option<(u64, Value)> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut id = None;
                let mut data = None;
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("id:") {
                        id = Some(v.trim().parse().unwrap());
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data = Some(serde_json::from_str(v.trim()).unwrap());
                    }
                }
                match (id, data) {
                    (Some(id), Some(data)) => return Some((id, data)),
                    _ => continue,
                }
            }
            let frame = self.body.frame().await?.unwrap();
            if let Ok(bytes) = frame.into_data() {
                self.buf.push_str(std::str::from_utf8(&bytes).unwrap());
            }
        }
    }

    async fn rest(&mut self) -> Vec<(u64, Value)> {
        let mut out = Vec::new();
        while let Some(e) = self.next().await {
            out.push(e);
        }
        out
    }
}

#[tokio::test]
async fn gas_sweep_validates_clean() {
    let app = app(ServiceConfig::default());
    post_deck(&app, &corpus_deck("gas-sweep")).await;
    let (status, diags) = call(&app, "POST", "/decks/gas-sweep/validate", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(diags, json!([]));
    let (status, stored) = call(&app, "GET", "/decks/gas-sweep", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(Deck::from_json(&stored.to_string()).unwrap(), corpus_deck("gas-sweep"));
    let (_, ids) = call(&app, "GET", "/decks", None).await;
    assert_eq!(ids, json!(["gas-sweep"]));
}

#[tokio::test]
async fn deck_lifecycle_and_error_statuses() {
    let app = app(ServiceConfig::default());
    let (status, _) = call(&app, "POST", "/decks", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(&app, "POST", "/decks", Some(r#"{"deckId":"d","hands":[{"rule":"some"}]}"#.into())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["diagnostics"][0]["code"], "E_SCHEMA");
    assert!(body["diagnostics"][0]["path"].as_str().unwrap().starts_with("hands[0].rule"));

    for uri in ["/decks/nope", "/executions/nope", "/executions/nope/events"] {
        assert_eq!(call(&app, "GET", uri, None).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    assert_eq!(call(&app, "POST", "/decks/nope/validate", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/executions/nope/estop", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "DELETE", "/decks/nope", None).await.0, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/executions", Some(json!({"deckId": "nope"}).to_string())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    post_deck(&app, &corpus_deck("house-photo")).await;
    for body in [json!({}), json!({"deckId": 3}), json!({"deckId": "house-photo", "world": {"tick": -1}})] {
        let (status, _) = call(&app, "POST", "/executions", Some(body.to_string())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(call(&app, "DELETE", "/decks/house-photo", None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "GET", "/decks/house-photo", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_decks_cannot_run() {
    let app = app(ServiceConfig::default());
    let deck = r#"{"deckId":"bad","hands":[{"cards":[{"id":"a","card":"Action/Movement/FlyTo"}]}]}"#;
    assert_eq!(call(&app, "POST", "/decks", Some(deck.into())).await.0, StatusCode::CREATED);
    let (status, body) = call(&app, "POST", "/executions", Some(json!({"deckId": "bad"}).to_string())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["diagnostics"].as_array().unwrap().iter().any(|d| d["code"] == "E_INPUT_MISSING"));
}

#[tokio::test]
async fn catalog_lists_descriptors() {
    let app = app(ServiceConfig::default());
    let (status, list) = call(&app, "GET", "/catalog", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), Catalog::drone().contents().count());
    assert!(list.iter().any(|d| d["path"] == "Action/Movement/FlyTo"));
}

#[tokio::test]
async fn immediate_estop_ends_stopped() {
    let app = app(ServiceConfig::default());
    post_deck(&app, &corpus_deck("delivery")).await;
    let id = start(&app, json!({"deckId": "delivery", "world": world_json("default")})).await;
    let (status, _) = call(&app, "POST", &format!("/executions/{id}/estop"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let record = finished(&app, &id).await;
    assert_eq!(record["state"], "Stopped");
    let trace = record["trace"].as_array().unwrap();
    assert!(trace.iter().any(|e| e["event"] == "EmergencyStop"));
    assert_eq!(trace.last().unwrap()["event"], "DeckEnded");
    assert_eq!(trace.last().unwrap()["status"], "Stopped");
    let (status, again) = call(&app, "POST", &format!("/executions/{id}/estop"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(again["state"], "Stopped");
    assert_eq!(finished(&app, &id).await, record);
}

#[tokio::test]
async fn finished_execution_replays_then_closes() {
    let app = app(unpaced());
    post_deck(&app, &corpus_deck("house-photo")).await;
    let id = start(&app, json!({"deckId": "house-photo"})).await;
    let record = finished(&app, &id).await;
    assert_eq!(record["state"], "Completed");
    let events = SseReader::open(&app, &id, None).await.rest().await;
    let trace = record["trace"].as_array().unwrap();
    assert_eq!(events.len(), trace.len());
    for (i, ((seq, event), expected)) in events.iter().zip(trace).enumerate() {
        assert_eq!(*seq, i as u64);
        assert_eq!(event, expected);
    }
    let skeleton: Vec<&Value> = events.iter().map(|(_, e)| e).filter(|e| e["event"] != "Telemetry").collect();
    let n = skeleton.len();
    assert_eq!(skeleton[n - 2]["event"], "ImplicitLand");
    assert_eq!(skeleton[n - 1]["status"], "Completed");
}

#[tokio::test]
async fn last_event_id_resumes_after_that_event() {
    let app = app(unpaced());
    post_deck(&app, &corpus_deck("delivery")).await;
    let id = start(&app, json!({"deckId": "delivery", "world": world_json("default")})).await;
    let record = finished(&app, &id).await;
    let trace = record["trace"].as_array().unwrap();
    let resumed = SseReader::open(&app, &id, Some(5)).await.rest().await;
    assert_eq!(resumed.first().unwrap().0, 6);
    assert_eq!(resumed.iter().map(|(_, e)| e).collect::<Vec<_>>(), trace[6..].iter().collect::<Vec<_>>());
    let req = Request::builder()
        .uri(format!("/executions/{id}/events"))
        .header("last-event-id", "six")
        .body(Body::empty())
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

/// A consumer that lags behind a live run, disconnects midway and resumes,
/// still sees every event exactly once in trace order.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_consumer_sees_every_event_once() {
    let app = app(ServiceConfig {
        ratio: 200.0,
        ..ServiceConfig::default()
    });
    post_deck(&app, &corpus_deck("gas-sweep")).await;
    let id = start(&app, json!({"deckId": "gas-sweep", "world": world_json("gas-sweep-clear"), "telemetryEvery": 2})).await;
    let mut seen = Vec::new();
    let mut states = Vec::new();
    let mut reader = SseReader::open(&app, &id, None).await;
    while seen.len() < 40 {
        let (seq, event) = reader.next().await.expect("stream ended early");
        seen.push((seq, event));
        tokio::time::sleep(Duration::from_millis(3)).await;
    }
    drop(reader);
    let (_, mid) = call(&app, "GET", &format!("/executions/{id}"), None).await;
    states.push(mid["state"].as_str().unwrap().to_string());
    assert_eq!(mid["state"], "Running", "run ended before the consumer caught up");
    let mut reader = SseReader::open(&app, &id, Some(seen.last().unwrap().0)).await;
    while let Some(e) = reader.next().await {
        seen.push(e);
        if seen.len() % 10 == 0 {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }
    let record = finished(&app, &id).await;
    states.push(record["state"].as_str().unwrap().to_string());
    assert_eq!(states, ["Running", "Completed"]);
    let trace = record["trace"].as_array().unwrap();
    assert_eq!(seen.len(), trace.len());
    for (i, ((seq, event), expected)) in seen.iter().zip(trace).enumerate() {
        assert_eq!(*seq, i as u64);
        assert_eq!(event, expected);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn parallel_executions_are_isolated() {
    let config = unpaced();
    let app = app(config.clone());
    let mut runs = Vec::new();
    for entry in corpus::DECKS {
        runs.push((entry.name.to_string(), entry.name, entry.world));
    }
    runs.push(("gas-sweep-clear".to_string(), "gas-sweep", "gas-sweep-clear"));
    assert_eq!(runs.len(), 8);
    let mut ids = Vec::new();
    for (seed, (deck_id, name, world)) in runs.iter().enumerate() {
        let mut deck = corpus_deck(name);
        deck.deck_id = deck_id.clone();
        post_deck(&app, &deck).await;
        let body = json!({"deckId": deck_id, "world": world_json(world), "seed": seed, "maxSimTime": 3000.0});
        ids.push(start(&app, body).await);
    }
    for (seed, ((deck_id, name, world), id)) in runs.iter().zip(&ids).enumerate() {
        let record = finished(&app, id).await;
        assert_eq!(record["deckId"], *deck_id);
        let mut deck = corpus_deck(name);
        deck.deck_id = deck_id.clone();
        let opts = RunOptions {
            max_repeats: config.max_repeats,
            max_sim_time: Some(3000.0),
            telemetry_every: config.telemetry_every,
            ..RunOptions::default()
        };
        let (trace, _) = simulate(
            &deck,
            &Catalog::drone(),
            corpus::world(world).unwrap(),
            seed as u64,
            &opts,
            &StopHandle::new(),
            &mut (),
        )
        .unwrap();
        let expected: Vec<Value> = trace.events.iter().map(|e| serde_json::to_value(e).unwrap()).collect();
        assert_eq!(record["trace"].as_array().unwrap(), &expected, "{deck_id}");
    }
}

#[tokio::test]
async fn data_dir_snapshots_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..unpaced()
    };
    let first = app(config.clone());
    let mut deck = corpus_deck("house-photo");
    deck.deck_id = "my deck/1".into();
    post_deck(&first, &deck).await;
    let id = start(&first, json!({"deckId": "my deck/1"})).await;
    let record = finished(&first, &id).await;
    let path = dir.path().join("executions").join(format!("{id}.json"));
    let deadline = Instant::now() + Duration::from_secs(10);
    while !path.exists() {
        assert!(Instant::now() < deadline, "no execution snapshot");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }

    let second = app(config.clone());
    let (status, stored) = call(&second, "GET", "/decks/my%20deck%2F1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(Deck::from_json(&stored.to_string()).unwrap(), deck);
    assert_eq!(call(&second, "GET", &format!("/executions/{id}"), None).await.1, record);
    let replay = SseReader::open(&second, &id, None).await.rest().await;
    assert_eq!(replay.len(), record["trace"].as_array().unwrap().len());

    assert_eq!(call(&second, "DELETE", "/decks/my%20deck%2F1", None).await.0, StatusCode::NO_CONTENT);
    let third = app(config);
    assert_eq!(call(&third, "GET", "/decks", None).await.1, json!([]));
}
