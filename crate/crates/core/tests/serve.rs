use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use sha2::{Digest, Sha256};
use tower::ServiceExt;

use pointbc::app::serve::{router, ServeState};
use pointbc::sim::{record_demos, CameraIntrinsics, Catalog, DemoDataset, SimConfig, TaskId};
use pointbc::train::{build_dataset, scripted_reference, BuildOptions};
use pointbc::policy::ObsMode;
use pointbc::vision::{Annotation, DepthProvider};

fn demos() -> DemoDataset {
    record_demos(&Catalog::standard(), &CameraIntrinsics::tabletop(), &SimConfig::default(), TaskId::PickObject, 3, 1).unwrap()
}

fn state(dir: &std::path::Path) -> Arc<ServeState> {
    Arc::new(ServeState::new(demos(), dir.join("annotations")))
}

async fn send(state: &Arc<ServeState>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: String) -> Request<Body> {
    Request::post("/annotation")
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap()
}

fn decode_png(bytes: &[u8]) -> (u32, u32, Vec<u8>) {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Rgb);
    buf.truncate(info.buffer_size());
    (info.width, info.height, buf)
}

fn sha(bytes: &[u8]) -> Vec<u8> {
    Sha256::digest(bytes).to_vec()
}

#[tokio::test]
async fn health_and_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let (status, body) = send(&s, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&body).unwrap()["status"], "ok");
    let (status, body) = send(&s, get("/tasks")).await;
    assert_eq!(status, StatusCode::OK);
    let tasks: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(tasks[0]["task_id"], "pick_object");
    assert_eq!(tasks[0]["n_demos"], 3);
    assert_eq!(tasks[0]["frame_width"], 512);
}

#[tokio::test]
async fn frame_pixels_match_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let t = &s.demos.trajectories[1];

    let (status, body) = send(&s, get("/frame/1?scale=raster")).await;
    assert_eq!(status, StatusCode::OK);
    let (w, h, rgb) = decode_png(&body);
    assert_eq!((w, h), (t.frames[0].raster.width, t.frames[0].raster.height));
    assert_eq!(sha(&rgb), sha(&t.frames[0].raster.rgb));

    let (status, body) = send(&s, get("/frame/1")).await;
    assert_eq!(status, StatusCode::OK);
    let (w, h, rgb) = decode_png(&body);
    assert_eq!((w, h), (512, 512));
    let expected = s.renderer.render_rgb(&t.initial_state, 512, 512);
    assert_eq!(sha(&rgb), sha(&expected.rgb));
    // the stored first frame is the render of the stored initial state
    assert_eq!(s.renderer.render(&t.initial_state, 0).raster, t.frames[0].raster);
}

#[tokio::test]
async fn unknown_demo_is_404() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    assert_eq!(send(&s, get("/frame/99")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&s, get("/frame/abc")).await.0, StatusCode::NOT_FOUND);
    let mut a = scripted_reference(&s.demos, 0).unwrap();
    a.frame_ref.demo_id = 99;
    assert_eq!(send(&s, post(a.to_json())).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn valid_annotation_is_stored_and_drives_build_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let a = scripted_reference(&s.demos, 2).unwrap();
    let (status, body) = send(&s, post(a.to_json())).await;
    assert_eq!(status, StatusCode::CREATED);
    let reply: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let path = std::path::PathBuf::from(reply["path"].as_str().unwrap());
    assert!(path.starts_with(dir.path()));
    let stored = Annotation::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(stored, a);
    let data = build_dataset(&s.demos, &stored, BuildOptions::new(ObsMode::Point, DepthProvider::camera(), &s.demos.header.catalog)).unwrap();
    assert_eq!(data.trajectories.len(), 3);
    assert_eq!(data.provenance.human_annotations_used, 1);
}

#[tokio::test]
async fn invalid_annotations_are_422_with_field_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path());
    let good = scripted_reference(&s.demos, 0).unwrap();

    let mut outside = good.clone();
    outside.points[1].u = 600.0;
    let (status, body) = send(&s, post(outside.to_json())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let errors: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(errors["errors"][0]["field"], "points[1].u");

    let mut dup = good.clone();
    dup.points[2].label = dup.points[0].label.clone();
    let (status, body) = send(&s, post(dup.to_json())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(String::from_utf8(body).unwrap().contains("points[2].label"));

    let mut empty = good.clone();
    empty.points.clear();
    assert_eq!(send(&s, post(empty.to_json())).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let mut later = good.clone();
    later.frame_ref.frame_index = 3;
    assert_eq!(send(&s, post(later.to_json())).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let mut nothing = good.clone();
    nothing.points[0].u = 2.0;
    nothing.points[0].v = 2.0;
    let (status, body) = send(&s, post(nothing.to_json())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(String::from_utf8(body).unwrap().contains("points[0]"));

    for body in ["{not json", r#"{"task_id":"pick_object"}"#, r#"{"task_id":"pick_object","frame_ref":{"demo_id":0,"frame_index":0},"points":[],"extra":1}"#] {
        let (status, reply) = send(&s, post(body.to_string())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert!(serde_json::from_slice::<serde_json::Value>(&reply).unwrap()["errors"].is_array());
    }
    assert!(!dir.path().join("annotations").exists());
}
