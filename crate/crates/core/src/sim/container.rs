//! Binary dataset container.
//!
//! Layout (all integers little-endian `u32`, all numeric payloads
//! little-endian `f32`):
//!
//! ```text
//! "PBCDEMO\0"  version  header_len  header_json
//! n_trajectories
//! per trajectory:
//!     meta_len  meta_json          (task, seed, variation, initial state, keypoint ids)
//!     T  K  D  W  H
//!     descriptors   K*D            (persistent per keypoint)
//!     ee_states     T*5            (x, y, z, gripper, held object or -1)
//!     actions       T*4            (dx, dy, dz, gripper command)
//!     per frame:    K*4            (u, v, z, visible)
//!                   H*W*3          (raster RGB scaled to [0, 1])
//!                   H*W            (depth, meters)
//! [optional appended blocks, see `append_block`]
//! ```
//!
//! Appended blocks start with their own 8-byte magic followed by a
//! `u32` length, so readers that do not know a block can skip it.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::catalog::Descriptor;
use super::record::{DatasetHeader, DemoDataset, Trajectory, FORMAT_VERSION};
use super::render::{DepthImage, Frame, KeypointId, ProjectedPoint, RasterImage};
use super::tasks::{TaskId, Variation};
use super::world::{Action, EndEffectorState, HeldObject, WorldState};
use crate::error::FormatError;

pub const DEMO_MAGIC: &[u8; 8] = b"PBCDEMO\0";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryMeta {
    task: TaskId,
    rng_seed: u64,
    variation: Variation,
    initial_state: WorldState,
    success: bool,
    keypoints: Vec<KeypointId>,
    /// Exact per-step held-object bookkeeping (offsets do not fit the f32 table).
    held: Vec<Option<HeldObject>>,
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated(format!(
                "need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let b = self.bytes(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T, FormatError> {
        let n = self.u32()? as usize;
        Ok(serde_json::from_slice(self.bytes(n)?)?)
    }
}

pub(crate) fn put_json<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    let bytes = serde_json::to_vec(value).expect("serializable");
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(&bytes);
}

pub fn encode(dataset: &DemoDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DEMO_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_json(&mut out, &dataset.header);
    put_u32(&mut out, dataset.trajectories.len() as u32);
    for t in &dataset.trajectories {
        encode_trajectory(&mut out, t, dataset.header.descriptor_dim);
    }
    out
}

fn encode_trajectory(out: &mut Vec<u8>, t: &Trajectory, dim: usize) {
    let first = t.frames.first();
    let keypoints: Vec<KeypointId> = first
        .map(|f| f.points.iter().map(|p| p.id).collect())
        .unwrap_or_default();
    let meta = TrajectoryMeta {
        task: t.task,
        rng_seed: t.rng_seed,
        variation: t.variation.clone(),
        initial_state: t.initial_state.clone(),
        success: t.success,
        keypoints: keypoints.clone(),
        held: t.ee_states.iter().map(|e| e.held).collect(),
    };
    put_json(out, &meta);
    let (w, h) = first
        .map(|f| (f.raster.width, f.raster.height))
        .unwrap_or((0, 0));
    for v in [t.len() as u32, keypoints.len() as u32, dim as u32, w, h] {
        put_u32(out, v);
    }
    if let Some(f) = first {
        for p in &f.points {
            put_f32s(out, p.descriptor.as_slice().iter().map(|&v| v as f32));
        }
    }
    for e in &t.ee_states {
        let held = e.held.map(|h| h.object as f32).unwrap_or(-1.0);
        put_f32s(
            out,
            [e.position[0] as f32, e.position[1] as f32, e.position[2] as f32, e.gripper as f32, held],
        );
    }
    for a in &t.actions {
        put_f32s(out, a.to_array().map(|v| v as f32));
    }
    for f in &t.frames {
        for p in &f.points {
            put_f32s(
                out,
                [p.u as f32, p.v as f32, p.z as f32, if p.visible { 1.0 } else { 0.0 }],
            );
        }
        put_f32s(out, f.raster.rgb.iter().map(|&c| c as f32 / 255.0));
        put_f32s(out, f.depth.values.iter().copied());
    }
}

/// Decodes a container. Numeric payloads come back at `f32` precision.
pub fn decode(bytes: &[u8]) -> Result<DemoDataset, FormatError> {
    let mut c = Cursor::new(bytes);
    if c.bytes(8)? != DEMO_MAGIC {
        return Err(FormatError::BadMagic { expected: "PBCDEMO" });
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let header: DatasetHeader = c.json()?;
    let n = c.u32()? as usize;
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        trajectories.push(decode_trajectory(&mut c)?);
    }
    Ok(DemoDataset {
        header,
        trajectories,
        failed_seeds: Vec::new(),
    })
}

fn decode_trajectory(c: &mut Cursor<'_>) -> Result<Trajectory, FormatError> {
    let meta: TrajectoryMeta = c.json()?;
    let t = c.u32()? as usize;
    let k = c.u32()? as usize;
    let d = c.u32()? as usize;
    let w = c.u32()?;
    let h = c.u32()?;
    let descriptors: Vec<Descriptor> = (0..k)
        .map(|_| c.f32s(d).map(|v| Descriptor::new(v.into_iter().map(f64::from).collect())))
        .collect::<Result<_, _>>()?;
    let ee_raw = c.f32s(t * 5)?;
    let ee_states = ee_raw
        .chunks_exact(5)
        .zip(meta.held.iter())
        .map(|(e, held)| EndEffectorState {
            position: [e[0] as f64, e[1] as f64, e[2] as f64],
            gripper: e[3] as f64,
            held: *held,
        })
        .collect();
    let actions = c
        .f32s(t * 4)?
        .chunks_exact(4)
        .map(|a| Action::new([a[0] as f64, a[1] as f64, a[2] as f64], a[3] as f64))
        .collect();
    let mut frames = Vec::with_capacity(t);
    for i in 0..t {
        let pts = c.f32s(k * 4)?;
        let points = pts
            .chunks_exact(4)
            .zip(meta.keypoints.iter().zip(descriptors.iter()))
            .map(|(p, (id, desc))| ProjectedPoint {
                id: *id,
                u: p[0] as f64,
                v: p[1] as f64,
                z: p[2] as f64,
                visible: p[3] != 0.0,
                descriptor: desc.clone(),
            })
            .collect();
        let rgb = c
            .f32s((w * h * 3) as usize)?
            .into_iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        let depth = c.f32s((w * h) as usize)?;
        frames.push(Frame {
            frame_index: i,
            points,
            raster: RasterImage {
                width: w,
                height: h,
                rgb,
            },
            depth: DepthImage {
                width: w,
                height: h,
                values: depth,
            },
        });
    }
    Ok(Trajectory {
        task: meta.task,
        rng_seed: meta.rng_seed,
        variation: meta.variation,
        initial_state: meta.initial_state,
        frames,
        ee_states,
        actions,
        success: meta.success,
    })
}

/// Appends a tagged block after the demo section.
pub fn append_block(container: &mut Vec<u8>, magic: &[u8; 8], payload: &[u8]) {
    container.extend_from_slice(magic);
    put_u32(container, payload.len() as u32);
    container.extend_from_slice(payload);
}

/// Byte offset where the demo section ends (start of appended blocks).
pub fn demo_section_len(bytes: &[u8]) -> Result<usize, FormatError> {
    let mut c = Cursor::new(bytes);
    c.bytes(8)?;
    c.u32()?;
    let n = c.u32()? as usize;
    c.bytes(n)?;
    let n_traj = c.u32()? as usize;
    for _ in 0..n_traj {
        let meta_len = c.u32()? as usize;
        c.bytes(meta_len)?;
        let t = c.u32()? as usize;
        let k = c.u32()? as usize;
        let d = c.u32()? as usize;
        let w = c.u32()? as usize;
        let h = c.u32()? as usize;
        let floats = k * d + t * 5 + t * 4 + t * (k * 4 + w * h * 4);
        c.bytes(floats * 4)?;
    }
    Ok(c.pos)
}

/// Finds the payload of the first appended block tagged `magic`.
pub fn find_block<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<Option<&'a [u8]>, FormatError> {
    let mut c = Cursor::new(bytes);
    c.pos = demo_section_len(bytes)?;
    while c.remaining() > 0 {
        let tag = c.bytes(8)?;
        let len = c.u32()? as usize;
        let payload = c.bytes(len)?;
        if tag == magic {
            return Ok(Some(payload));
        }
    }
    Ok(None)
}

pub fn write_file(path: &std::path::Path, dataset: &DemoDataset) -> Result<(), FormatError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(dataset))?;
    Ok(())
}

pub fn read_file(path: &std::path::Path) -> Result<DemoDataset, FormatError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// JSON-lines debug export: one header line, then one line per frame
/// `{"trajectory", "t", "ee", "action", "points": [[u, v, z, visible], ...]}`.
pub fn export_jsonl(dataset: &DemoDataset, mut out: impl Write) -> std::io::Result<()> {
    let header = serde_json::json!({
        "task_id": dataset.header.task_id,
        "control_hz": dataset.header.control_hz,
        "capture_hz": dataset.header.capture_hz,
        "descriptor_dim": dataset.header.descriptor_dim,
        "camera": dataset.header.camera,
        "n_trajectories": dataset.trajectories.len(),
    });
    writeln!(out, "{header}")?;
    for (i, t) in dataset.trajectories.iter().enumerate() {
        for (step, ((f, e), a)) in t.frames.iter().zip(&t.ee_states).zip(&t.actions).enumerate() {
            let points: Vec<[f64; 4]> = f
                .points
                .iter()
                .map(|p| [p.u, p.v, p.z, if p.visible { 1.0 } else { 0.0 }])
                .collect();
            let line = serde_json::json!({
                "trajectory": i,
                "seed": t.rng_seed,
                "t": step,
                "ee": e.position,
                "gripper": e.gripper,
                "action": a.to_array(),
                "points": points,
            });
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
