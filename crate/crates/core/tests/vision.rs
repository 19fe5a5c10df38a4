use nalgebra::{Isometry3, Point3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointbc::error::VisionError;
use pointbc::sim::catalog::{class_of, Descriptor};
use pointbc::sim::render::{DepthImage, RasterImage};
use pointbc::sim::{
    reset_task, scripted_expert, CameraIntrinsics, Catalog, Frame, KeypointId, ObjectSet, ProjectedPoint,
    Renderer, SimConfig, Split, TaskId, Variation,
};
use pointbc::vision::annotation::{default_labels, scripted_annotation};
use pointbc::vision::{
    back_project, back_project_pixel, correspond, pipeline_first_frame, resolve, Annotation, AnnotationPoint,
    AnnotationSource, DepthProvider, FrameRef, Tracker, TrackerConfig,
};

fn test_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 256.0, 256.0, 512, 512, Isometry3::identity()).unwrap()
}

#[test]
fn back_project_principal_point() {
    let cam = test_camera();
    assert_eq!(back_project_pixel(&cam, 256.0, 256.0, 1.0), Some([0.0, 0.0, 1.0]));
}

#[test]
fn back_project_closed_form() {
    let cam = test_camera();
    let p = back_project_pixel(&cam, 756.0, 256.0, 2.0).unwrap();
    assert_eq!(p, [2.0, 0.0, 2.0]);
    let q = cam.project_camera(&Point3::new(p[0], p[1], p[2])).unwrap();
    assert_eq!((q.u, q.v, q.z), (756.0, 256.0, 2.0));
}

#[test]
fn project_back_project_round_trip_1000_points() {
    let cam = CameraIntrinsics::tabletop();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let z = rng.random_range(0.2..3.0);
        let u = rng.random_range(0.0..cam.width as f64);
        let v = rng.random_range(0.0..cam.height as f64);
        let x = (u - cam.cx) * z / cam.fx;
        let y = (v - cam.cy) * z / cam.fy;
        let world = cam.camera_to_world(&Point3::new(x, y, z));
        let px = cam.project(&world).unwrap();
        let back = back_project_pixel(&cam, px.u, px.v, px.z).unwrap();
        let back_world = cam.camera_to_world(&Point3::new(back[0], back[1], back[2]));
        worst = worst.max((back_world - world).norm());
    }
    assert!(worst <= 1e-9, "max error {worst}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

proptest! {
    #[test]
    fn back_projection_is_linear_in_depth(u in 0.0..512.0f64, v in 0.0..512.0f64, z in 0.01..10.0f64) {
        let cam = CameraIntrinsics::tabletop();
        let a = back_project_pixel(&cam, u, v, z).unwrap();
        let b = back_project_pixel(&cam, u, v, 2.0 * z).unwrap();
        for i in 0..3 {
            prop_assert_eq!(b[i], 2.0 * a[i]);
        }
    }
}

#[test]
fn predicted_depth_with_unit_bias_and_no_noise_equals_camera_depth() {
    let camera = DepthProvider::camera();
    let predicted = DepthProvider::predicted(1.0, 0.0, 99);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..200 {
        let z: f64 = rng.random_range(0.1..2.0);
        assert_eq!(camera.depth(z, i, i % 7).to_bits(), predicted.depth(z, i, i % 7).to_bits());
    }
}

#[test]
fn predicted_depth_is_seeded_and_biased() {
    let p = DepthProvider::predicted(1.02, 0.005, 7);
    assert_eq!(p.depth(1.0, 3, 2), p.depth(1.0, 3, 2));
    assert_ne!(p.depth(1.0, 3, 2), p.depth(1.0, 4, 2));
    let n = 20_000;
    let mean: f64 = (0..n).map(|i| p.depth(1.0, i, 0)).sum::<f64>() / n as f64;
    assert!((mean - 1.02).abs() < 3.0 * 0.005 / (n as f64).sqrt() + 1e-12, "{mean}");
}

#[test]
fn invalid_depth_holds_last_valid_point() {
    let cam = test_camera();
    let mut held = Vec::new();
    let first = back_project(&cam, &[(300.0, 200.0, Some(1.0)), (10.0, 10.0, None)], &mut held);
    assert_eq!(first.valid, vec![true, false]);
    let second = back_project(&cam, &[(320.0, 210.0, Some(-1.0)), (10.0, 10.0, Some(2.0))], &mut held);
    assert_eq!(second.valid, vec![false, true]);
    assert_eq!(second.point(0), first.point(0));
    assert_eq!(second.point(1), back_project_pixel(&cam, 10.0, 10.0, 2.0).unwrap());
}

fn desc(seed: u64) -> Descriptor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Descriptor::new((0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).normalized()
}

fn synthetic_frame(index: usize, points: &[(usize, [f64; 2], bool)]) -> Frame {
    Frame {
        frame_index: index,
        points: points
            .iter()
            .map(|&(i, [u, v], visible)| ProjectedPoint {
                id: KeypointId { object: Some(0), index: i },
                u,
                v,
                z: 1.0,
                visible,
                descriptor: desc(i as u64),
            })
            .collect(),
        raster: RasterImage {
            width: 0,
            height: 0,
            rgb: Vec::new(),
        },
        depth: DepthImage {
            width: 0,
            height: 0,
            values: Vec::new(),
        },
    }
}

fn reference_for(frame: &Frame, n: usize) -> pointbc::vision::Reference {
    let ann = Annotation {
        task_id: TaskId::PickObject,
        frame_ref: FrameRef {
            demo_id: 0,
            frame_index: 0,
        },
        points: frame.points[..n]
            .iter()
            .enumerate()
            .map(|(i, p)| AnnotationPoint {
                label: format!("obj_p{i}"),
                u: p.u,
                v: p.v,
            })
            .collect(),
        created_by: AnnotationSource::File,
    };
    resolve(&ann, frame, 512, 512).unwrap()
}

fn tracker_on(frame: &Frame, n: usize) -> Tracker {
    let reference = reference_for(frame, n);
    let c = correspond(&reference, frame, 0.3).unwrap();
    Tracker::init(TrackerConfig::new(0.3), &c)
}

#[test]
fn static_scene_tracks_constant() {
    let pts = [(0, [100.0, 120.0], true), (1, [300.0, 310.0], true), (2, [200.0, 50.0], true)];
    let f0 = synthetic_frame(0, &pts);
    let mut t = tracker_on(&f0, 3);
    for i in 1..20 {
        let row = t.step(&synthetic_frame(i, &pts));
        for (r, p) in row.iter().zip(&pts) {
            assert_eq!((r.u, r.v), (p.1[0], p.1[1]));
            assert!(r.visible);
        }
    }
}

#[test]
fn rigid_translation_is_tracked_exactly() {
    let base = [[100.0, 120.0], [300.0, 310.0], [200.0, 50.0], [140.0, 400.0]];
    let at = |i: usize| -> Vec<(usize, [f64; 2], bool)> {
        base.iter()
            .enumerate()
            .map(|(k, b)| (k, [b[0] + 2.0 * i as f64, b[1] + 1.0 * i as f64], true))
            .collect()
    };
    let mut t = tracker_on(&synthetic_frame(0, &at(0)), 4);
    for i in 1..60 {
        let truth = at(i);
        let row = t.step(&synthetic_frame(i, &truth));
        for (r, p) in row.iter().zip(&truth) {
            let err = (r.u - p.1[0]).hypot(r.v - p.1[1]);
            assert!(err <= 1e-6, "frame {i}: error {err}");
        }
    }
}

#[test]
fn occluded_point_coasts_and_is_reacquired() {
    let at = |i: usize, hidden: bool| -> Vec<(usize, [f64; 2], bool)> {
        vec![
            (0, [100.0 + 3.0 * i as f64, 200.0], !hidden),
            (1, [300.0, 300.0 - 2.0 * i as f64], true),
        ]
    };
    let mut t = tracker_on(&synthetic_frame(0, &at(0, false)), 2);
    for i in 1..=20 {
        let hidden = (6..11).contains(&i);
        let truth = at(i, hidden);
        let row = t.step(&synthetic_frame(i, &truth));
        assert_eq!(row[0].visible, !hidden, "frame {i}");
        if hidden {
            assert!(row[0].z.is_none());
        } else {
            let err = (row[0].u - truth[0].1[0]).hypot(row[0].v - truth[0].1[1]);
            assert!(err <= 1.0, "frame {i}: error {err}");
        }
    }
    assert_eq!(t.points[0].lost_frames, 5);
    assert_eq!(t.points[0].reacquisitions, 1);
}

#[test]
fn occluded_point_reappearing_off_prediction_is_reacquired() {
    // the point stops while hidden, so the prediction overshoots the gate
    let mut t = tracker_on(&synthetic_frame(0, &[(0, [100.0, 100.0], true)]), 1);
    for i in 1..=3 {
        t.step(&synthetic_frame(i, &[(0, [100.0 + 4.0 * i as f64, 100.0], true)]));
    }
    for i in 4..9 {
        t.step(&synthetic_frame(i, &[(0, [112.0, 100.0], false)]));
    }
    let row = t.step(&synthetic_frame(9, &[(0, [112.0, 100.0], true)]));
    assert!(row[0].visible);
    assert!((row[0].u - 112.0).abs() <= 1.0);
}

fn render_first(task: TaskId, variation: &Variation, seed: u64) -> (pointbc::sim::WorldState, Frame, Renderer) {
    let cat = Catalog::standard();
    let renderer = Renderer::new(CameraIntrinsics::tabletop(), cat.gripper_descriptors());
    let s = reset_task(&cat, task, variation, seed).unwrap();
    let f = renderer.render(&s, 0);
    (s, f, renderer)
}

fn reference_scene(task: TaskId) -> pointbc::vision::Reference {
    let (s, f, _) = render_first(task, &Variation::train(), 0);
    let ann = scripted_annotation(&s, &f, default_labels(task), FrameRef { demo_id: 0, frame_index: 0 }).unwrap();
    resolve(&ann, &f, 512, 512).unwrap()
}

#[test]
fn correspondence_on_reference_scene_is_identity() {
    let (s, f, _) = render_first(TaskId::PickObject, &Variation::train(), 0);
    let ann = scripted_annotation(&s, &f, default_labels(TaskId::PickObject), FrameRef { demo_id: 0, frame_index: 0 })
        .unwrap();
    let reference = resolve(&ann, &f, 512, 512).unwrap();
    let c = correspond(&reference, &f, Catalog::standard().reject_threshold()).unwrap();
    for (m, a) in c.points.iter().zip(&ann.points) {
        assert_eq!(m.label, a.label);
        assert_eq!((m.u, m.v), (a.u, a.v));
        assert!(m.distance.abs() < 1e-12);
    }
}

#[test]
fn novel_instances_match_every_label() {
    let cat = Catalog::standard();
    for task in TaskId::ALL {
        let reference = reference_scene(task);
        let v = Variation::sampled(ObjectSet::Novel, Split::Eval, 0);
        for seed in 0..20 {
            let (s, f, _) = render_first(task, &v, seed);
            let labels = s.keypoint_ids();
            let label_of = |id: KeypointId| labels.iter().find(|(k, _)| *k == id).unwrap().1.clone();
            let c = correspond(&reference, &f, cat.reject_threshold())
                .unwrap_or_else(|e| panic!("{task} seed {seed}: {e}"));
            for (m, r) in c.points.iter().zip(&reference.points) {
                // brute-force oracle: nearest over every candidate, visible or not
                let oracle = f
                    .points
                    .iter()
                    .min_by(|a, b| {
                        r.descriptor
                            .cosine_distance(&a.descriptor)
                            .total_cmp(&r.descriptor.cosine_distance(&b.descriptor))
                    })
                    .unwrap();
                assert_eq!(m.keypoint, oracle.id, "{task} seed {seed} {}", r.label);
                assert_eq!(label_of(m.keypoint), r.label);
            }
        }
    }
}

#[test]
fn distractor_only_scene_reports_class_missing() {
    let reference = reference_scene(TaskId::PickObject);
    let (mut s, _, renderer) = render_first(TaskId::PickObject, &Variation::sampled(ObjectSet::InDomain, Split::Eval, 3), 5);
    s.objects.retain(|o| o.model.class != "mug");
    let f = renderer.render(&s, 0);
    let err = correspond(&reference, &f, Catalog::standard().reject_threshold()).unwrap_err();
    assert!(matches!(err, VisionError::ClassMissing { ref class } if class == "mug"), "{err}");
}

#[test]
fn missing_keypoint_of_present_class_is_match_failure() {
    let cat = Catalog::standard();
    let reference = reference_scene(TaskId::PickObject);
    let f0 = render_first(TaskId::PickObject, &Variation::train(), 1).1;
    let handle = &reference.points[3];
    assert_eq!(handle.label, "mug_handle");
    let mut f = f0.clone();
    f.points.retain(|p| handle.descriptor.cosine_distance(&p.descriptor) > cat.reject_threshold());
    let err = correspond(&reference, &f, cat.reject_threshold()).unwrap_err();
    assert!(matches!(err, VisionError::MatchFailure { ref label, .. } if label == "mug_handle"), "{err}");
}

#[test]
fn annotation_validation_lists_field_errors() {
    let mut a = Annotation {
        task_id: TaskId::PickObject,
        frame_ref: FrameRef { demo_id: 0, frame_index: 0 },
        points: vec![
            AnnotationPoint { label: "mug_rim".into(), u: 100.0, v: 200.0 },
            AnnotationPoint { label: "mug_rim".into(), u: 600.0, v: -1.0 },
        ],
        created_by: AnnotationSource::HumanUi,
    };
    let errs = a.field_errors(512, 512);
    let fields: Vec<_> = errs.iter().map(|e| e.field.as_str()).collect();
    assert_eq!(fields, vec!["points[1].label", "points[1].u", "points[1].v"]);
    a.points.clear();
    assert_eq!(a.field_errors(512, 512)[0].field, "points");
    let back = Annotation::from_json(&a.to_json()).unwrap();
    assert_eq!(back, a);
    let json = r#"{"task_id":"pick_object","frame_ref":{"demo_id":2,"frame_index":0},"points":[{"label":"mug_rim","u":100,"v":200}],"created_by":"human-ui"}"#;
    let parsed = Annotation::from_json(json).unwrap();
    assert_eq!(parsed.points[0], AnnotationPoint { label: "mug_rim".into(), u: 100.0, v: 200.0 });
    assert_eq!(parsed.created_by, AnnotationSource::HumanUi);
}

#[test]
fn click_on_empty_table_is_rejected() {
    let (_, f, _) = render_first(TaskId::PickObject, &Variation::train(), 0);
    let a = Annotation {
        task_id: TaskId::PickObject,
        frame_ref: FrameRef { demo_id: 0, frame_index: 0 },
        points: vec![AnnotationPoint { label: "mug_rim".into(), u: 2.0, v: 2.0 }],
        created_by: AnnotationSource::File,
    };
    assert!(matches!(resolve(&a, &f, 512, 512), Err(VisionError::NothingUnderClick { .. })));
}

#[test]
fn novel_episode_is_tracked_through_expert_rollout() {
    let cat = Catalog::standard();
    let cfg = SimConfig::default();
    for task in [TaskId::PickObject, TaskId::ObjectOnTarget, TaskId::OpenDoor] {
        let reference = reference_scene(task);
        let v = Variation::sampled(ObjectSet::Novel, Split::Eval, 0);
        let (mut s, f0, renderer) = render_first(task, &v, 3);
        let first = pipeline_first_frame(
            &reference,
            &f0,
            &renderer.camera,
            TrackerConfig::new(cat.reject_threshold()),
            DepthProvider::camera(),
        )
        .unwrap();
        let ids: Vec<KeypointId> = first.correspondence.points.iter().map(|m| m.keypoint).collect();
        let mut stream = first.stream;
        let mut frame_index = 0;
        while !s.progress.success && frame_index < task.horizon() {
            let a = scripted_expert(&s, &cfg).unwrap();
            s = s.step(&a, &cfg);
            frame_index += 1;
            let f = renderer.render(&s, frame_index);
            let obs = stream.observe(&f);
            for (k, id) in ids.iter().enumerate() {
                let truth = f.point(*id).unwrap();
                if truth.visible && obs.valid[k] {
                    let p = obs.point(k);
                    let uv = renderer.camera.project_camera(&Point3::new(p[0], p[1], p[2])).unwrap();
                    assert!((uv.u - truth.u).hypot(uv.v - truth.v) < 1e-6, "{task} t={frame_index} point {k}");
                }
            }
        }
        assert!(s.progress.success, "{task}");
        let lost: u32 = stream.tracker.loss_counters().iter().sum();
        let total = (frame_index * ids.len()) as u32;
        assert!(lost * 4 < total, "{task}: lost {lost}/{total}");
        assert_eq!(class_of(&reference.points[0].label), "gripper");
    }
}

#[test]
fn annotated_keypoints_are_visible_at_reset() {
    let cat = Catalog::standard();
    let renderer = Renderer::new(CameraIntrinsics::tabletop(), cat.gripper_descriptors());
    for task in TaskId::ALL {
        for v in [
            Variation::train(),
            Variation::sampled(ObjectSet::Novel, Split::Eval, 0),
            Variation::sampled(ObjectSet::InDomain, Split::Eval, 3),
        ] {
            for seed in 0..50 {
                let s = reset_task(&cat, task, &v, seed).unwrap();
                let f = renderer.render(&s, 0);
                for (p, (_, label)) in f.points.iter().zip(s.keypoint_ids()) {
                    if default_labels(task).contains(&label.as_str()) {
                        assert!(p.visible, "{task} seed {seed}: {label} hidden");
                    }
                }
            }
        }
    }
}
