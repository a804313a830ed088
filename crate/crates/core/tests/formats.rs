use deltavox::geometry::{Category, FlowField, PointCloudFrame, PointLabel, Vec3};
use deltavox::io::{
    decode_flow, decode_frame, decode_tensor, encode_flow, encode_frame, encode_tensor, from_toml, load_sequence,
    to_toml, write_sequence, EvalDocument, SequenceManifest,
};
use deltavox::metrics::evaluate;
use deltavox::synth::{generate, BackgroundSpec, EgoSpec, MoverSpec, SceneSpec};
use deltavox::voxel::{SparseVoxelTensor, VoxelGridSpec};
use deltavox::Error;
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vec3> {
    [-1e4f32..1e4, -1e4f32..1e4, -1e4f32..1e4].prop_map(|v| Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64))
}

fn frame() -> impl Strategy<Value = PointCloudFrame> {
    proptest::collection::vec((vec3(), prop::option::of((0u32..1000, 0u8..4)), vec3()), 0..60).prop_flat_map(|rows| {
        (Just(rows), any::<bool>(), any::<bool>()).prop_map(|(rows, with_labels, with_flow)| {
            let mut f = PointCloudFrame::new(rows.iter().map(|r| r.0).collect(), 0.0).unwrap();
            if with_labels {
                let labels = rows
                    .iter()
                    .map(|r| {
                        r.1.map(|(id, c)| PointLabel {
                            instance: id,
                            category: Category::from_code(c).unwrap(),
                        })
                    })
                    .collect();
                f = f.with_labels(labels).unwrap();
            }
            if with_flow {
                f = f.with_gt_flow(rows.iter().map(|r| r.2).collect()).unwrap();
            }
            f
        })
    })
}

proptest! {
    #[test]
    fn frames_round_trip_bit_exactly(f in frame()) {
        let bytes = encode_frame(&f).unwrap();
        let back = decode_frame(&bytes, 0.0).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(encode_frame(&back).unwrap(), bytes);
    }

    #[test]
    fn flows_round_trip_bit_exactly(v in proptest::collection::vec(vec3(), 0..80)) {
        let f = FlowField::new(v).unwrap();
        let bytes = encode_flow(&f).unwrap();
        let back = decode_flow(&bytes).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(encode_flow(&back).unwrap(), bytes);
    }

    #[test]
    fn tensors_round_trip_bit_exactly(rows in proptest::collection::btree_map(0u64..300, proptest::array::uniform3(proptest::num::f32::NORMAL | proptest::num::f32::ZERO | proptest::num::f32::SUBNORMAL), 0..50)) {
        let spec = VoxelGridSpec::new(Vec3::new(-3.5, 2.0, 0.125), Vec3::new(0.2, 0.2, 0.3), [10, 10, 3], 3).unwrap();
        let t = SparseVoxelTensor::from_sorted_keys(spec, rows.keys().copied().collect(), rows.values().flatten().copied().collect()).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(encode_tensor(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_reported_at_the_end(f in frame(), cut in 0usize..1000) {
        let bytes = encode_frame(&f).unwrap();
        let cut = cut % bytes.len();
        match decode_frame(&bytes[..cut], 0.0) {
            Err(Error::Format { offset, .. }) => prop_assert!(offset <= cut as u64),
            other => prop_assert!(false, "expected a format error, got {:?}", other),
        }
    }
}

fn scene() -> SceneSpec {
    SceneSpec {
        seed: 21,
        n_frames: 3,
        dt: 0.1,
        extent: [30.0, 30.0, 4.0],
        background: BackgroundSpec {
            ground_points: 50,
            buildings: 1,
            building_points: 20,
        },
        movers: vec![MoverSpec {
            category: Category::Car,
            size: [4.0, 2.0, 1.5],
            points: 30,
            velocity: [6.0, 0.0, 0.0],
            position: [0.0, 5.0, 0.75],
            yaw: 0.0,
        }],
        ego: EgoSpec::Constant {
            velocity: [4.0, 0.0, 0.0],
            yaw_rate: 0.1,
            height: 1.8,
        },
    }
}

#[test]
fn sequence_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(&scene()).unwrap();
    let manifest = write_sequence(dir.path(), &seq).unwrap();
    let (m, loaded) = load_sequence(&manifest).unwrap();
    assert_eq!(m.frames.len(), 3);
    assert_eq!(m.frames[0].gt_flow.as_deref(), Some("gt/000000.dffl"));
    assert!(m.frames[2].gt_flow.is_none());

    // Everything on disk is f32, so a second write from the loaded copy is
    // byte-identical to the first.
    let dir2 = tempfile::tempdir().unwrap();
    write_sequence(dir2.path(), &loaded).unwrap();
    for rel in ["manifest.json", "frames/000001.dfpc", "gt/000001.dffl"] {
        assert!(
            std::fs::read(dir.path().join(rel)).unwrap() == std::fs::read(dir2.path().join(rel)).unwrap(),
            "{rel} differs"
        );
    }
    assert!(loaded.frames[0].labels().is_some());
}

#[test]
fn manifest_rejects_bad_poses_and_order() {
    let seq = generate(&scene()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_sequence(dir.path(), &seq).unwrap();
    let good = SequenceManifest::read(&path).unwrap();

    let mut skewed = good.clone();
    skewed.frames[1].pose[0] = 1.01;
    assert!(SequenceManifest::from_json(&skewed.to_json().unwrap()).is_err());

    let mut reordered = good.clone();
    reordered.frames.swap(0, 1);
    assert!(SequenceManifest::from_json(&reordered.to_json().unwrap()).is_err());

    assert!(matches!(
        SequenceManifest::from_json("{ not json"),
        Err(Error::Format { .. })
    ));
}

#[test]
fn eval_document_round_trip() {
    let seq = generate(&scene()).unwrap();
    let gt = seq.frames[0].gt_flow_field().unwrap();
    let doc = EvalDocument::new(
        &evaluate(&FlowField::zeros(gt.len()), &seq.frames[0], seq.dt).unwrap(),
        1,
    );
    let text = to_toml(&doc).unwrap();
    let back: EvalDocument = from_toml(&text).unwrap();
    assert_eq!(back, doc);
    assert_eq!(to_toml(&back).unwrap(), text);
}
