use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use strokesel_app::server::{router, AppState, Models, ServiceConfig, SCHEMA_VERSION};
use strokesel_core::embed::{EmbedNet, EmbedNetConfig};
use strokesel_core::gallery::{build_gallery, rank, Embedder};
use strokesel_core::selector::{greedy_nonempty, SelectorConfig, SelectorNet};
use strokesel_core::sketch::{apply_mask, VectorSketch};
use strokesel_core::synth::{generate_dataset, Dataset, GeneratorConfig, Split};
use tower::ServiceExt;

fn dataset() -> Dataset {
    generate_dataset(24, &GeneratorConfig::default(), [0.5, 0.25, 0.25], 17).unwrap()
}

fn models(ds: &Dataset) -> Models {
    let embed = EmbedNet::new(EmbedNetConfig {
        channels: vec![4, 8],
        embed_dim: 8,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let selector = SelectorNet::new(SelectorConfig {
        hidden: 16,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let photos: Vec<(String, &_)> = ds.pairs.iter().map(|p| (p.id.clone(), &p.photo)).collect();
    Models {
        gallery: build_gallery(&embed, &photos).unwrap(),
        embed,
        selector,
        canvas_h: 256,
        canvas_w: 256,
    }
}

fn app_with(threshold: f64, timeout: Duration) -> Router {
    let ds = dataset();
    let cfg = ServiceConfig {
        threshold,
        session_timeout: timeout,
        top_k: 5,
    };
    router(Arc::new(AppState::new(models(&ds), cfg)))
}

fn app() -> Router {
    app_with(0.2, Duration::from_secs(1800))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let body = match body {
        Some(v) => Body::from(v.to_string()),
        None => Body::empty(),
    };
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body)
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap_or_else(|_| panic!("not JSON: {bytes:?}"));
    assert_eq!(v["schema_version"], json!(SCHEMA_VERSION), "{v}");
    (status, v)
}

async fn new_session(app: &Router, body: Option<Value>) -> String {
    let (s, v) = call(app, Method::POST, "/session", body).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn strokes_of(sketch: &VectorSketch) -> Vec<Value> {
    sketch
        .strokes()
        .iter()
        .map(|st| json!({ "points": st.points().iter().map(|p| [p.x, p.y]).collect::<Vec<_>>() }))
        .collect()
}

#[tokio::test]
async fn one_two_point_stroke_gives_k1_and_a_finite_score() {
    let app = app();
    let id = new_session(&app, None).await;
    let (s, v) = call(&app, Method::POST, &format!("/session/{id}/stroke"), Some(json!({"points": [[10.0, 10.0], [40.0, 60.0]]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["k"], 1);
    assert!(v["critic_score"].as_f64().unwrap().is_finite());
}

#[tokio::test]
async fn empty_sketch_conflicts_on_select_and_retrieve() {
    let app = app();
    let id = new_session(&app, None).await;
    for path in ["select", "retrieve"] {
        let (s, v) = call(&app, Method::POST, &format!("/session/{id}/{path}"), None).await;
        assert_eq!(s, StatusCode::CONFLICT, "{path}");
        assert_eq!(v["error"]["code"], "empty_sketch");
    }
    let (s, v) = call(&app, Method::GET, &format!("/session/{id}/score"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["critic_score"], Value::Null);
    assert_eq!(v["feed_recommended"], false);
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let app = app();
    let stroke = Some(json!({"points": [[1.0, 1.0]]}));
    let cases = [
        (Method::POST, "stroke", stroke.clone()),
        (Method::DELETE, "stroke", None),
        (Method::GET, "score", None),
        (Method::POST, "select", None),
        (Method::POST, "retrieve", None),
    ];
    for (m, path, body) in cases {
        let (s, v) = call(&app, m, &format!("/session/nope/{path}"), body).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{path}");
        assert_eq!(v["error"]["code"], "unknown_session");
    }
    let (s, _) = call(&app, Method::DELETE, "/session/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_strokes_are_rejected_without_changing_the_sketch() {
    let app = app();
    let id = new_session(&app, None).await;
    let uri = format!("/session/{id}/stroke");
    let bad = [
        json!({"points": []}),
        json!({"points": [[10.0, 10.0], [300.0, 5.0]]}),
        json!({"points": [[-1.0, 10.0]]}),
        json!({"points": [[1.0]]}),
        json!({"pts": [[1.0, 1.0]]}),
        json!([1, 2]),
    ];
    for b in bad {
        let (s, v) = call(&app, Method::POST, &uri, Some(b.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{b}: {v}");
    }
    let (s, _) = call(&app, Method::POST, &uri, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (_, v) = call(&app, Method::GET, &format!("/session/{id}/score"), None).await;
    assert_eq!(v["k"], 0);
}

#[tokio::test]
async fn identical_sessions_give_identical_answers() {
    let app = app();
    let ds = dataset();
    let sketch = &ds.split(Split::Test)[0].sketch.sketch;
    let (a, b) = (new_session(&app, None).await, new_session(&app, None).await);
    assert_ne!(a, b);
    for st in strokes_of(sketch) {
        let (_, va) = call(&app, Method::POST, &format!("/session/{a}/stroke"), Some(st.clone())).await;
        let (_, vb) = call(&app, Method::POST, &format!("/session/{b}/stroke"), Some(st)).await;
        assert_eq!(va, vb);
    }
    for (m, path) in [(Method::GET, "score"), (Method::POST, "select"), (Method::POST, "retrieve")] {
        let (_, va) = call(&app, m.clone(), &format!("/session/{a}/{path}"), None).await;
        let (_, vb) = call(&app, m, &format!("/session/{b}/{path}"), None).await;
        assert_eq!(va, vb, "{path}");
    }
}

#[tokio::test]
async fn select_mask_tracks_the_stroke_count() {
    let app = app();
    let ds = dataset();
    let id = new_session(&app, None).await;
    for p in ds.split(Split::Val).iter().take(2) {
        for st in strokes_of(&p.sketch.sketch) {
            let (_, added) = call(&app, Method::POST, &format!("/session/{id}/stroke"), Some(st)).await;
            let (s, v) = call(&app, Method::POST, &format!("/session/{id}/select"), None).await;
            assert_eq!(s, StatusCode::OK);
            let mask = v["mask"].as_array().unwrap();
            assert_eq!(mask.len() as u64, added["k"].as_u64().unwrap());
            assert_eq!(v["k"], added["k"]);
            let kept = mask.iter().filter(|b| b.as_bool().unwrap()).count();
            assert_eq!(v["k_selected"].as_u64().unwrap() as usize, kept);
            assert!(kept >= 1);
        }
    }
    let (s, v) = call(&app, Method::DELETE, &format!("/session/{id}/stroke"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, sel) = call(&app, Method::POST, &format!("/session/{id}/select"), None).await;
    assert_eq!(sel["mask"].as_array().unwrap().len() as u64, v["k"].as_u64().unwrap());
}

#[tokio::test]
async fn score_is_pure() {
    let app = app();
    let id = new_session(&app, None).await;
    call(&app, Method::POST, &format!("/session/{id}/stroke"), Some(json!({"points": [[5.0, 5.0], [90.0, 91.0], [120.0, 30.0]]}))).await;
    let (_, before) = call(&app, Method::POST, &format!("/session/{id}/retrieve"), None).await;
    let (_, s1) = call(&app, Method::GET, &format!("/session/{id}/score"), None).await;
    let (_, s2) = call(&app, Method::GET, &format!("/session/{id}/score"), None).await;
    assert_eq!(s1["critic_score"], s2["critic_score"]);
    assert_eq!(s1["k"], 1);
    let (_, after) = call(&app, Method::POST, &format!("/session/{id}/retrieve"), None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn feed_recommendation_compares_against_the_threshold() {
    for (tau, want) in [(-1e9, true), (1e9, false)] {
        let app = app_with(tau, Duration::from_secs(60));
        let id = new_session(&app, None).await;
        call(&app, Method::POST, &format!("/session/{id}/stroke"), Some(json!({"points": [[5.0, 5.0], [9.0, 9.0]]}))).await;
        let (_, v) = call(&app, Method::GET, &format!("/session/{id}/score"), None).await;
        assert_eq!(v["threshold"].as_f64().unwrap(), tau);
        assert_eq!(v["feed_recommended"], want);
        let score = v["critic_score"].as_f64().unwrap();
        assert_eq!(score >= tau, want);
    }
}

#[tokio::test]
async fn retrieval_lists_the_paired_photo_once_at_its_rank() {
    let app = app();
    let ds = dataset();
    let m = models(&ds);
    for p in ds.split(Split::Test) {
        let id = new_session(&app, Some(json!({"pair_id": p.id}))).await;
        for st in strokes_of(&p.sketch.sketch) {
            call(&app, Method::POST, &format!("/session/{id}/stroke"), Some(st)).await;
        }
        let uri = format!("/session/{id}/retrieve?top_k={}", m.gallery.len());
        let (s, v) = call(&app, Method::POST, &uri, None).await;
        assert_eq!(s, StatusCode::OK);
        let hits = v["results"].as_array().unwrap();
        assert_eq!(hits.len(), m.gallery.len());
        let paired: Vec<usize> = hits
            .iter()
            .enumerate()
            .filter(|(_, h)| h["photo_id"] == json!(p.id))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(paired.len(), 1);
        assert_eq!(hits.iter().filter(|h| h["is_paired"] == json!(true)).count(), 1);
        assert_eq!(hits[paired[0]]["is_paired"], true);

        // same subset through the core ranking
        let sk = &p.sketch.sketch;
        let mask = greedy_nonempty(&m.selector.encode(sk).unwrap().probs);
        let want: Vec<Value> = mask.bits().iter().map(|b| json!(b)).collect();
        assert_eq!(v["mask"].as_array().unwrap(), &want);
        let q = m.embed.embed_sketch(&apply_mask(sk, &mask).unwrap()).unwrap();
        assert_eq!(rank(&q, &m.gallery, &p.id).unwrap().rank, paired[0] + 1);
    }
}

#[tokio::test]
async fn sessions_without_a_pair_omit_the_flag() {
    let app = app();
    let id = new_session(&app, None).await;
    call(&app, Method::POST, &format!("/session/{id}/stroke"), Some(json!({"points": [[5.0, 5.0], [90.0, 91.0]]}))).await;
    let (_, v) = call(&app, Method::POST, &format!("/session/{id}/retrieve"), None).await;
    let hits = v["results"].as_array().unwrap();
    assert_eq!(hits.len(), 5);
    assert!(hits.iter().all(|h| h.get("is_paired").is_none()));
    let d: Vec<f64> = hits.iter().map(|h| h["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    let (s, _) = call(&app, Method::POST, "/session", Some(json!({"pair_id": "missing"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn deleted_and_idle_sessions_are_gone() {
    let app = app();
    let id = new_session(&app, None).await;
    let (s, v) = call(&app, Method::DELETE, &format!("/session/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["deleted"], json!(id));
    let (s, _) = call(&app, Method::GET, &format!("/session/{id}/score"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let idle = app_with(0.2, Duration::ZERO);
    let id = new_session(&idle, None).await;
    let (s, _) = call(&idle, Method::GET, &format!("/session/{id}/score"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_appends_to_one_session_are_all_kept() {
    let app = app();
    let id = new_session(&app, None).await;
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let (app, uri) = (app.clone(), format!("/session/{id}/stroke"));
            tokio::spawn(async move {
                let x = 10.0 + i as f64;
                call(&app, Method::POST, &uri, Some(json!({"points": [[x, 20.0], [x, 40.0]]}))).await.0
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, v) = call(&app, Method::GET, &format!("/session/{id}/score"), None).await;
    assert_eq!(v["k"], 16);
    let (_, h) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(h["sessions"], 1);
}
