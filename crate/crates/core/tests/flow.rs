use depthgaze::dataset::RgbdFrame;
use depthgaze::flow::*;
use depthgaze::grid::{argmax, gaussian_blur, mirror_x};
use depthgaze::synth::{render_video, SceneSpec};
use depthgaze::{Dims, Grid, Point};
use rand::{Rng, SeedableRng};

const DIMS: Dims = Dims::new(128, 96);

fn texture(seed: u64) -> Grid {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Grid::from_shape_fn(DIMS.shape(), |_| rng.random::<f64>());
    let t = gaussian_blur(&noise, 1.5);
    let (lo, hi) = t.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    t.mapv(|v| (v - lo) / (hi - lo))
}

/// Content moved `dx` pixels to the right (left edge replicated).
fn shift_right(g: &Grid, dx: usize) -> Grid {
    Grid::from_shape_fn(g.dim(), |(y, x)| g[[y, x.saturating_sub(dx)]])
}

fn gray_frame(index: usize, g: &Grid, depth: Grid) -> RgbdFrame {
    RgbdFrame::new(index, [g.clone(), g.clone(), g.clone()], depth)
}

fn flat_depth() -> Grid {
    Grid::from_elem(DIMS.shape(), 0.5)
}

#[test]
fn identical_frames_give_zero_flow() {
    let f = gray_frame(0, &texture(1), texture(2));
    for use_depth in [false, true] {
        let flow = optical_flow(&f, &f, use_depth, &FlowConfig::default()).unwrap();
        assert!(flow.mean_magnitude() < 1e-3);
        assert_eq!(flow.channels_used, if use_depth { 4 } else { 3 });
    }
}

#[test]
fn one_pixel_shift_is_recovered() {
    let t = texture(7);
    let a = gray_frame(0, &t, flat_depth());
    let b = gray_frame(1, &shift_right(&t, 1), flat_depth());
    let flow = optical_flow(&a, &b, false, &FlowConfig::default()).unwrap();
    let mut truth = FlowField::zeros(DIMS, 3);
    truth.u.fill(1.0);
    let epe = flow.endpoint_error(&truth);
    assert!(epe < 0.5, "EPE {epe}");
}

#[test]
fn depth_channel_helps_on_iso_colour_motion() {
    let mut spec = SceneSpec::depth_ambiguity(3);
    spec.frames = 21;
    for video in 0..3 {
        let v = render_video(&spec, video).unwrap();
        let frame = |t: usize| RgbdFrame::new(t, v.rgb[t].clone(), v.depth[t].clone());
        for (&t, truth) in &v.flow_gt {
            let (a, b) = (frame(t - spec.flow_interval), frame(t));
            let cfg = FlowConfig::default();
            let e3 = optical_flow(&a, &b, false, &cfg).unwrap().endpoint_error(truth);
            let e4 = optical_flow(&a, &b, true, &cfg).unwrap().endpoint_error(truth);
            assert!(e4 < e3, "video {video} frame {t}: {e4} !< {e3}");
        }
    }
}

#[test]
fn mirrored_pair_gives_mirrored_flow() {
    let t = texture(9);
    let depth = texture(10);
    let a = gray_frame(0, &t, depth.clone());
    let b = gray_frame(1, &shift_right(&t, 2), shift_right(&depth, 2));
    let mirror = |f: &RgbdFrame| RgbdFrame::new(f.index, f.rgb.clone().map(|c| mirror_x(&c)), mirror_x(&f.depth));
    for use_depth in [false, true] {
        let cfg = FlowConfig::default();
        let direct = optical_flow(&a, &b, use_depth, &cfg).unwrap().mirrored();
        let flipped = optical_flow(&mirror(&a), &mirror(&b), use_depth, &cfg).unwrap();
        for (x, y) in direct.u.iter().zip(flipped.u.iter()).chain(direct.v.iter().zip(flipped.v.iter())) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }
}

#[test]
fn stronger_smoothing_flattens_flow() {
    let t = texture(4);
    let a = gray_frame(0, &t, flat_depth());
    // Non-rigid motion: the top half moves, the bottom half stays.
    let moved = Grid::from_shape_fn(DIMS.shape(), |(y, x)| if y < 48 { t[[y, x.saturating_sub(2)]] } else { t[[y, x]] });
    let b = gray_frame(1, &moved, flat_depth());
    let variance = |g: &Grid| {
        let m = g.mean().unwrap();
        g.mapv(|v| (v - m).powi(2)).mean().unwrap()
    };
    let base = FlowConfig::default();
    let vars: Vec<f64> = [1.0, 10.0, 100.0]
        .iter()
        .map(|k| {
            let cfg = FlowConfig { alpha: base.alpha * k, ..base };
            let f = optical_flow(&a, &b, false, &cfg).unwrap();
            variance(&f.u) + variance(&f.v)
        })
        .collect();
    assert!(vars[0] > vars[1] && vars[1] > vars[2], "{vars:?}");
}

#[test]
fn flow_respects_sanity_bound() {
    let a = gray_frame(0, &texture(5), flat_depth());
    let b = gray_frame(1, &texture(6), flat_depth());
    let f = optical_flow(&a, &b, true, &FlowConfig::default()).unwrap();
    let w = DIMS.width as f64;
    assert!(f.u.iter().chain(f.v.iter()).all(|v| v.is_finite() && v.abs() <= w));
}

#[test]
fn size_mismatch_rejected() {
    let a = gray_frame(0, &texture(1), flat_depth());
    let small = Grid::zeros((48, 64));
    let b = RgbdFrame::new(1, [small.clone(), small.clone(), small.clone()], small);
    assert!(matches!(optical_flow(&a, &b, false, &FlowConfig::default()), Err(FlowError::DimensionMismatch(..))));
    let other = FlowField::zeros(Dims::new(64, 48), 3);
    assert!(motion_features(&FlowField::zeros(DIMS, 3), &other, &MotionConfig::default()).is_err());
}

#[test]
fn zero_flow_zero_features() {
    let z = FlowField::zeros(DIMS, 3);
    let m = motion_features(&z, &z, &MotionConfig::default()).unwrap();
    assert!(m.dog_u.iter().chain(m.dog_v.iter()).chain(m.dog_mag.iter()).all(|&v| v == 0.0));
}

#[test]
fn camera_pan_has_no_interior_response() {
    let mut pan = FlowField::zeros(DIMS, 3);
    pan.u.fill(1.5);
    pan.v.fill(-0.5);
    let m = motion_features(&FlowField::zeros(DIMS, 3), &pan, &MotionConfig::default()).unwrap();
    let margin = 20;
    for y in margin..DIMS.height - margin {
        for x in margin..DIMS.width - margin {
            assert!(m.dog_mag[[y, x]].abs() < 1e-6);
            assert!(m.dog_u[[y, x]].abs() < 1e-6 && m.dog_v[[y, x]].abs() < 1e-6);
        }
    }
}

#[test]
fn moving_blob_peaks_near_its_boundary() {
    // With σ1 = 2, σ2 = 4 the step response peaks √(32 ln 2 / 3) ≈ 2.7 px
    // inside the edge, so the bound is 3 px.
    let c = Point::new(64.0, 48.0);
    for r in [8.0, 10.0, 15.0] {
        let mut curr = FlowField::zeros(DIMS, 3);
        for ((y, x), u) in curr.u.indexed_iter_mut() {
            if Point::new(x as f64, y as f64).distance(c) <= r {
                *u = 1.0;
            }
        }
        let m = motion_features(&FlowField::zeros(DIMS, 3), &curr, &MotionConfig::default()).unwrap();
        let (px, py) = argmax(&m.dog_mag);
        let d = Point::new(px as f64, py as f64).distance(c);
        assert!((d - r).abs() <= 3.0, "r {r}: peak at distance {d}");
    }
}

#[test]
fn dgfl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = FlowField::zeros(DIMS, 4);
    f.u = texture(1) - 0.5;
    f.v = texture(2) * 3.0;
    let (pu, pv) = (dir.path().join("u.dgfl"), dir.path().join("v.dgfl"));
    write_flow(&pu, &pv, &f).unwrap();
    let bytes = std::fs::read(&pu).unwrap();
    assert_eq!(&bytes[..4], b"DGFL");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 128);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 96);
    assert_eq!(bytes.len(), 16 + 4 * 128 * 96);
    let back = read_flow(&pu, &pv).unwrap();
    for (a, b) in back.u.iter().zip(f.u.iter()).chain(back.v.iter().zip(f.v.iter())) {
        assert!((a - b).abs() < 1e-6);
    }
    std::fs::write(&pu, b"NOPE").unwrap();
    assert!(read_flow(&pu, &pv).is_err());
}
