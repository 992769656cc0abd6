#![allow(dead_code)]

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const G: i64 = 60;

pub async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<&str>,
) -> (StatusCode, Bytes) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(
            body.map(|b| Body::from(b.to_string()))
                .unwrap_or_else(Body::empty),
        )
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, bytes)
}

pub async fn call_json(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let text = body.map(|b| b.to_string());
    let (status, bytes) = call(app, method, uri, text.as_deref()).await;
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

pub fn points(start_index: usize, values: &[f64]) -> Value {
    Value::Array(
        values
            .iter()
            .enumerate()
            .map(|(i, v)| json!({"timestamp": (start_index + i) as i64 * G, "value": v}))
            .collect(),
    )
}

pub fn register_body(id: &str, values: &[f64]) -> Value {
    json!({"id": id, "points": points(0, values)})
}

pub fn noise(n: usize, seed: u64, level: f64, spread: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| level + rng.random_range(-spread..spread))
        .collect()
}

pub fn sine(range: std::ops::Range<usize>, period: f64, amp: f64) -> Vec<f64> {
    range
        .map(|i| amp * (2.0 * std::f64::consts::PI * i as f64 / period).sin())
        .collect()
}

pub fn flagged(v: &Value) -> Vec<usize> {
    v["labels"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.as_bool().unwrap())
        .map(|(i, _)| i)
        .collect()
}

use tsad_core::corpus::{gen_corpus, CorpusSpec};
use tsad_core::detectors::DetectorKind;
use tsad_core::features::FEATURE_DIM;
use tsad_core::gbdt::{GbdtClassifier, GbdtConfig, GbdtRegressor};
use tsad_core::selector::{train_bundle, SelectorBundle, TrainConfig};

/// A real bundle whose classifier and estimators are replaced by constants,
/// so every selection returns `kind` at `param` with confidence 0.9.
pub fn pinned_bundle(kind: DetectorKind, param: f64) -> SelectorBundle {
    let corpus = gen_corpus(&CorpusSpec::mix(2, 2, 2), 1).unwrap();
    let cfg = TrainConfig {
        gbdt: GbdtConfig {
            n_trees: 5,
            ..GbdtConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut b = train_bundle(&corpus, &cfg).unwrap();
    let mut probs = [0.05; 3];
    probs[kind.index()] = 0.9;
    b.classifier = GbdtClassifier {
        n_classes: 3,
        n_features: FEATURE_DIM,
        base: probs.iter().map(|p: &f64| p.ln()).collect(),
        rounds: Vec::new(),
        constant: None,
    };
    b.estimators = (0..3)
        .map(|_| GbdtRegressor::constant(FEATURE_DIM, param))
        .collect();
    b
}

/// Batch of `len` normal readings around `level` with `spikes` of them
/// replaced by large excursions at random positions.
pub fn spiky_batch(rng: &mut ChaCha8Rng, len: usize, spikes: usize, level: f64) -> Vec<f64> {
    let mut vals: Vec<f64> = (0..len)
        .map(|_| level + rng.random_range(-1.0..1.0))
        .collect();
    let mut placed = 0;
    while placed < spikes {
        let p = rng.random_range(0..len);
        if (vals[p] - level).abs() < 2.0 {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            vals[p] += sign * rng.random_range(30.0..90.0);
            placed += 1;
        }
    }
    vals
}

/// Trailing anomaly rate over the last `window` labels, or `None` below
/// `min_points` labels: the trigger rule recomputed from the outside.
pub fn trailing_rate(labels: &[bool], window: usize, min_points: usize) -> Option<f64> {
    let tail = &labels[labels.len().saturating_sub(window)..];
    (tail.len() >= min_points)
        .then(|| tail.iter().filter(|&&l| l).count() as f64 / tail.len() as f64)
}

pub fn json_bools(v: &Value) -> Vec<bool> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|b| b.as_bool().unwrap())
        .collect()
}

pub struct StreamTrace {
    /// Step at which the service reported a trigger.
    pub fired_at: Option<usize>,
    /// Steps where the service flag disagreed with the recomputed rule.
    pub mismatches: Vec<usize>,
    pub rates: Vec<f64>,
}

/// Registers a quiet series under a bundle pinned to HBOS, then streams
/// 5-point batches: two quiet ones followed by batches with three spikes.
pub async fn anomaly_rate_stream(app: &Router, id: &str, seed: u64) -> StreamTrace {
    let (status, _) = call_json(
        app,
        "POST",
        "/series",
        Some(register_body(id, &noise(200, seed, 10.0, 1.0))),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = 200;
    let mut seen = Vec::new();
    let mut trace = StreamTrace {
        fired_at: None,
        mismatches: Vec::new(),
        rates: Vec::new(),
    };
    for step in 0..12 {
        let vals = spiky_batch(&mut rng, 5, if step < 2 { 0 } else { 3 }, 10.0);
        let uri = format!("/series/{id}/points");
        let (status, v) = call_json(
            app,
            "POST",
            &uri,
            Some(json!({"points": points(next, &vals)})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        next += vals.len();
        seen.extend(json_bools(&v["labels"]));
        let rate = trailing_rate(&seen, 500, 10);
        let expected = rate.is_some_and(|r| r > 0.25);
        trace.rates.push(rate.unwrap_or(0.0));
        if v["reselection_triggered"].as_bool() != Some(expected)
            || (v["anomaly_rate"].as_f64().unwrap()
                - seen.iter().filter(|&&l| l).count() as f64 / seen.len() as f64)
                .abs()
                > 1e-12
        {
            trace.mismatches.push(step);
        }
        if expected {
            trace.fired_at = Some(step);
            break;
        }
    }
    trace
}

pub struct FeedbackTrace {
    pub before: Value,
    pub after: Value,
    pub false_alert_counts: Vec<u64>,
    pub triggers: Vec<bool>,
}

/// A seasonal series registered too short for its period to show, so the
/// heuristic picks SR; more cycles with spikes are appended, and ten alerts
/// get feedback, six of them marked false.
pub async fn feedback_stream(app: &Router, id: &str) -> FeedbackTrace {
    let head = sine(0..40, 24.0, 20.0);
    let (_, before) = call_json(app, "POST", "/series", Some(register_body(id, &head))).await;
    let mut more = sine(40..280, 24.0, 20.0);
    for j in (10..240).step_by(19) {
        more[j] += 30.0;
    }
    let (status, _) = call_json(
        app,
        "POST",
        &format!("/series/{id}/points"),
        Some(json!({"points": points(40, &more)})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (_, result) = call_json(app, "GET", &format!("/series/{id}/result"), None).await;
    let alerts = flagged(&result);
    assert!(alerts.len() >= 10, "only {} alerts", alerts.len());
    let mut trace = FeedbackTrace {
        before: before["choice"].clone(),
        after: Value::Null,
        false_alert_counts: Vec::new(),
        triggers: Vec::new(),
    };
    for (n, &i) in alerts.iter().take(10).enumerate() {
        let body = json!({"index": i, "is_anomaly": n >= 6});
        let (status, v) =
            call_json(app, "POST", &format!("/series/{id}/feedback"), Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        trace
            .false_alert_counts
            .push(v["false_alerts"].as_u64().unwrap());
        trace
            .triggers
            .push(v["reselection_triggered"].as_bool().unwrap());
        trace.after = v["choice"].clone();
    }
    trace
}
