//! Local HTTP service for the one-time point annotation: serves first
//! frames and accepts validated annotations.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::config::hash_bytes;
use crate::sim::render::RasterImage;
use crate::sim::{DemoDataset, Renderer};
use crate::vision::annotation::{default_labels, FieldError};
use crate::error::VisionError;
use crate::vision::{resolve, Annotation};

pub struct ServeState {
    pub demos: DemoDataset,
    pub renderer: Renderer,
    /// Directory receiving posted annotations.
    pub annotations_dir: PathBuf,
}

impl ServeState {
    pub fn new(demos: DemoDataset, annotations_dir: PathBuf) -> Self {
        let renderer = Renderer::new(demos.header.camera.clone(), demos.header.catalog.gripper_descriptors());
        Self {
            demos,
            renderer,
            annotations_dir,
        }
    }

    fn frame_size(&self) -> (u32, u32) {
        (self.demos.header.camera.width, self.demos.header.camera.height)
    }
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/tasks", get(tasks))
        .route("/frame/{demo_id}", get(frame))
        .route("/annotation", post(annotation))
        .with_state(state)
}

pub async fn serve(state: Arc<ServeState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn encode_png(image: &RasterImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width, image.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(&image.rgb).expect("in-memory PNG data");
    }
    out
}

#[derive(Serialize)]
struct ErrorBody {
    errors: Vec<FieldError>,
}

fn error(status: StatusCode, field: &str, message: impl Into<String>) -> Response {
    let errors = vec![FieldError {
        field: field.to_string(),
        message: message.into(),
    }];
    (status, Json(ErrorBody { errors })).into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct TaskInfo {
    task_id: crate::sim::TaskId,
    column: &'static str,
    n_demos: usize,
    frame_width: u32,
    frame_height: u32,
    suggested_labels: Vec<&'static str>,
}

async fn tasks(State(s): State<Arc<ServeState>>) -> Json<Vec<TaskInfo>> {
    let task = s.demos.header.task_id;
    let (w, h) = s.frame_size();
    Json(vec![TaskInfo {
        task_id: task,
        column: task.column(),
        n_demos: s.demos.trajectories.len(),
        frame_width: w,
        frame_height: h,
        suggested_labels: default_labels(task).to_vec(),
    }])
}

#[derive(Deserialize)]
struct FrameQuery {
    /// `raster` returns the stored low-resolution frame instead of a
    /// full-resolution render.
    scale: Option<String>,
}

async fn frame(State(s): State<Arc<ServeState>>, Path(demo_id): Path<String>, Query(q): Query<FrameQuery>) -> Response {
    let Ok(id) = demo_id.parse::<usize>() else {
        return error(StatusCode::NOT_FOUND, "demo_id", format!("no demo `{demo_id}`"));
    };
    let Some(t) = s.demos.trajectories.get(id) else {
        return error(StatusCode::NOT_FOUND, "demo_id", format!("no demo {id}"));
    };
    let image = match q.scale.as_deref() {
        None | Some("full") => {
            let (w, h) = s.frame_size();
            s.renderer.render_rgb(&t.initial_state, w, h)
        }
        Some("raster") => match t.frames.first() {
            Some(f) => f.raster.clone(),
            None => return error(StatusCode::NOT_FOUND, "demo_id", format!("demo {id} has no frames")),
        },
        Some(other) => return error(StatusCode::BAD_REQUEST, "scale", format!("unknown scale `{other}`")),
    };
    ([(header::CONTENT_TYPE, "image/png")], encode_png(&image)).into_response()
}

async fn annotation(State(s): State<Arc<ServeState>>, body: Bytes) -> Response {
    let annotation: Annotation = match serde_json::from_slice(&body) {
        Ok(a) => a,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "body", e.to_string()),
    };
    let demo_id = annotation.frame_ref.demo_id;
    let Some(t) = s.demos.trajectories.get(demo_id) else {
        return error(StatusCode::NOT_FOUND, "frame_ref.demo_id", format!("no demo {demo_id}"));
    };
    let (w, h) = s.frame_size();
    let mut errors = annotation.field_errors(w, h);
    if annotation.task_id != s.demos.header.task_id {
        errors.push(FieldError {
            field: "task_id".into(),
            message: format!("dataset task is {}", s.demos.header.task_id),
        });
    }
    if annotation.frame_ref.frame_index != 0 {
        errors.push(FieldError {
            field: "frame_ref.frame_index".into(),
            message: "only the first frame (index 0) is annotated".into(),
        });
    }
    if let (true, Some(first)) = (errors.is_empty(), t.frames.first()) {
        if let Err(e) = resolve(&annotation, first, w, h) {
            let field = match &e {
                VisionError::NothingUnderClick { label, .. } => annotation
                    .points
                    .iter()
                    .position(|p| &p.label == label)
                    .map(|i| format!("points[{i}]"))
                    .unwrap_or_else(|| "points".into()),
                _ => "points".into(),
            };
            errors.push(FieldError {
                field,
                message: e.to_string(),
            });
        }
    }
    if !errors.is_empty() {
        return (StatusCode::UNPROCESSABLE_ENTITY, Json(ErrorBody { errors })).into_response();
    }
    let json = annotation.to_json();
    let name = format!("annotation_demo{demo_id}_{}.json", &hash_bytes(json.as_bytes())[..12]);
    let path = s.annotations_dir.join(name);
    let written = std::fs::create_dir_all(&s.annotations_dir).and_then(|_| std::fs::write(&path, &json));
    match written {
        Ok(()) => (
            StatusCode::CREATED,
            Json(serde_json::json!({ "path": path, "points": annotation.points.len() })),
        )
            .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "path", e.to_string()),
    }
}
