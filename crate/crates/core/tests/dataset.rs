use depthgaze::dataset::*;
use depthgaze::Grid;
use ndarray::Array2;
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

fn rgb_pattern(i: usize) -> [Grid; 3] {
    [0usize, 1, 2].map(|c| Grid::from_shape_fn((96, 128), |(y, x)| ((x * 7 + y * 3 + i * 11 + c * 50) % 256) as f64 / 255.0))
}

fn write_video(root: &Path, id: &str, frames: usize, depth: impl Fn(usize, usize, usize) -> u16) {
    for i in 0..frames {
        let d = Array2::from_shape_fn((96, 128), |(y, x)| depth(i, y, x));
        write_frame(root, id, i, &rgb_pattern(i), &d).unwrap();
    }
    write_fixations(root, id, &[]).unwrap();
}

fn manifest(ids: &[(&str, usize)], split: &[(&str, Split)]) -> DatasetManifest {
    DatasetManifest {
        videos: ids
            .iter()
            .map(|&(id, frames)| VideoEntry {
                id: id.into(),
                frames,
                depth_unit: DepthUnit::Mm,
                annotations: None,
            })
            .collect(),
        split: split.iter().map(|&(id, s)| (id.to_string(), s)).collect::<BTreeMap<_, _>>(),
    }
}

#[test]
fn round_trip_at_working_resolution() {
    let dir = tempfile::tempdir().unwrap();
    write_video(dir.path(), "a", 20, |i, y, x| (1000 + x + y + i) as u16);
    let v = load_video(dir.path(), "a").unwrap();
    assert_eq!(v.len(), 20);
    assert_eq!(v.dims, WORKING_DIMS);
    for (i, f) in v.frames.iter().enumerate() {
        assert_eq!(f.index, i);
        let expected = rgb_pattern(i);
        for c in 0..3 {
            let err = f.rgb[c].iter().zip(expected[c].iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1.0 / 255.0, "channel {c} error {err}");
        }
        assert_eq!(f.depth.dim(), f.rgb[0].dim());
        assert!(f.depth.iter().all(|d| (0.0..=1.0).contains(d)));
    }
    // Per-video min-max: the global extremes map to 0 and 1.
    assert_eq!(v.frames[0].depth[[0, 0]], 0.0);
    assert_eq!(v.frames[19].depth[[95, 127]], 1.0);
    assert_eq!(load_video(dir.path(), "a").unwrap(), v);
}

#[test]
fn larger_frames_are_resampled() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = [0, 1, 2].map(|c| Grid::from_shape_fn((192, 256), |(y, x)| ((x + y + c) % 2) as f64));
    write_frame(dir.path(), "b", 0, &rgb, &Array2::from_elem((192, 256), 700u16)).unwrap();
    let v = load_video(dir.path(), "b").unwrap();
    assert_eq!(v.frames[0].dims(), WORKING_DIMS);
    assert!(v.frames[0].rgb.iter().all(|g| g.iter().all(|x| (0.0..=1.0).contains(x))));
}

#[test]
fn missing_frame_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_video(dir.path(), "a", 10, |_, _, _| 900);
    std::fs::remove_file(video_dir(dir.path(), "a").join("rgb").join(frame_name(7))).unwrap();
    match load_video(dir.path(), "a") {
        Err(DatasetError::MissingFrame { index, .. }) => assert_eq!(index, 7),
        other => panic!("{other:?}"),
    }
}

#[test]
fn constant_depth_normalizes_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_video(dir.path(), "a", 3, |_, _, _| 1234);
    let v = load_video(dir.path(), "a").unwrap();
    assert!(v.frames.iter().all(|f| f.depth.iter().all(|&d| d == 0.0)));
}

#[test]
fn invalid_depth_is_filled_and_masked() {
    let dir = tempfile::tempdir().unwrap();
    write_video(dir.path(), "a", 1, |_, y, x| if (y, x) == (40, 60) { 0 } else { 1000 + x as u16 });
    let f = &load_video(dir.path(), "a").unwrap().frames[0];
    assert!(!f.valid_mask[[40, 60]]);
    assert!(f.valid_mask[[40, 61]]);
    assert!(f.depth[[40, 60]] > 0.0);
}

#[test]
fn fixation_examples() {
    let dir = tempfile::tempdir().unwrap();
    let path = video_dir(dir.path(), "a");
    std::fs::create_dir_all(&path).unwrap();
    std::fs::write(path.join("fixations.csv"), "frame,viewer,x,y\n0,v1,0.5,0.5\n").unwrap();
    let recs = load_fixations(dir.path(), "a").unwrap();
    assert_eq!(
        recs,
        vec![FixationRecord {
            frame_index: 0,
            viewer_id: "v1".into(),
            x: 0.5,
            y: 0.5
        }]
    );

    std::fs::write(path.join("fixations.csv"), "frame,viewer,x,y\n0,v1,1.2,0.5\n").unwrap();
    assert!(matches!(load_fixations(dir.path(), "a"), Err(DatasetError::OutOfRange { line: 2, .. })));

    std::fs::write(path.join("fixations.csv"), "frame,viewer,x,y\n").unwrap();
    assert!(load_fixations(dir.path(), "a").unwrap().is_empty());

    std::fs::write(path.join("fixations.csv"), "frame,who,x,y\n0,v1,0.5,0.5\n").unwrap();
    assert!(matches!(load_fixations(dir.path(), "a"), Err(DatasetError::ParseError { .. })));
}

#[test]
fn fixations_beyond_video_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_video(dir.path(), "a", 2, |_, _, _| 1);
    write_manifest(dir.path(), &manifest(&[("a", 2)], &[("a", Split::Train)])).unwrap();
    std::fs::write(video_dir(dir.path(), "a").join("fixations.csv"), "frame,viewer,x,y\n5,v1,0.5,0.5\n").unwrap();
    assert!(matches!(load_fixations(dir.path(), "a"), Err(DatasetError::FrameOutOfRange { frame: 5, .. })));
}

#[test]
fn manifest_examples() {
    let dir = tempfile::tempdir().unwrap();
    for id in ["a", "b", "c"] {
        write_video(dir.path(), id, 2, |_, y, _| 500 + y as u16);
    }
    let all = [("a", Split::Train), ("b", Split::Train), ("c", Split::Test)];
    let m = manifest(&[("a", 2), ("b", 2), ("c", 2)], &all);
    write_manifest(dir.path(), &m).unwrap();
    assert_eq!(validate_manifest(dir.path()).unwrap(), m);
    assert_eq!(m.ids(Split::Test), vec!["c".to_string()]);

    let absent = manifest(&[("a", 2), ("b", 2), ("d", 2)], &all);
    write_manifest(dir.path(), &absent).unwrap();
    assert!(matches!(validate_manifest(dir.path()), Err(DatasetError::CountMismatch { found: 0, .. })));

    let wrong_count = manifest(&[("a", 3), ("b", 2), ("c", 2)], &all);
    write_manifest(dir.path(), &wrong_count).unwrap();
    assert!(matches!(
        validate_manifest(dir.path()),
        Err(DatasetError::CountMismatch { declared: 3, found: 2, .. })
    ));

    let partial = manifest(&[("a", 2), ("b", 2), ("c", 2)], &all[..2]);
    write_manifest(dir.path(), &partial).unwrap();
    match validate_manifest(dir.path()) {
        Err(DatasetError::SplitIncomplete { missing, unknown }) => {
            assert_eq!(missing, vec!["c".to_string()]);
            assert!(unknown.is_empty());
        }
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn depth_stays_in_unit_range(lo in 1u16..30000, span in 0u16..30000, seed in 0usize..1000) {
        let dir = tempfile::tempdir().unwrap();
        write_video(dir.path(), "p", 2, |i, y, x| lo + ((x * 31 + y * 17 + i * 7 + seed) % (span as usize + 1)) as u16);
        let v = load_video(dir.path(), "p").unwrap();
        for f in &v.frames {
            prop_assert!(f.depth.iter().all(|d| (0.0..=1.0).contains(d)));
        }
    }
}
