use depthgaze::dataset::RgbdFrame;
use depthgaze::overlay::*;
use depthgaze::{Dims, Grid};

const DIMS: Dims = Dims::new(32, 24);

fn frame() -> RgbdFrame {
    let rgb = [0usize, 1, 2].map(|c| Grid::from_shape_fn(DIMS.shape(), |(y, x)| ((x * 8 + y * 5 + c * 60) % 256) as f64 / 255.0));
    RgbdFrame::new(0, rgb, Grid::zeros(DIMS.shape()))
}

fn read_rgb(path: &std::path::Path) -> image::RgbImage {
    image::open(path).unwrap().to_rgb8()
}

#[test]
fn zero_map_reproduces_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let f = frame();
    let paths = overlay(std::slice::from_ref(&f), &[Grid::zeros(DIMS.shape())], dir.path()).unwrap();
    assert_eq!(paths, vec![dir.path().join("000000.png")]);
    let img = read_rgb(&paths[0]);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            let v = p[c] as f64 / 255.0;
            assert!((v - f.rgb[c][[y as usize, x as usize]]).abs() <= 1.0 / 255.0);
        }
    }
}

#[test]
fn single_pixel_map_changes_one_pixel() {
    let f = frame();
    let mut map = Grid::zeros(DIMS.shape());
    map[[10, 20]] = 1.0;
    let out = blend(&f, &map);
    let hot = colormap(1.0);
    for c in 0..3 {
        let expected = (1.0 - BLEND) * f.rgb[c][[10, 20]] + BLEND * hot[c];
        assert!((out[c][[10, 20]] - expected).abs() < 1e-12);
        let changed = out[c].iter().zip(f.rgb[c].iter()).filter(|(a, b)| a != b).count();
        assert!(changed <= 1);
    }
}

#[test]
fn colormap_end_points() {
    assert_eq!(colormap(0.0), [0.0, 0.0, 1.0]);
    assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
    assert!(colormap(0.5).iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn count_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = frame();
    let err = overlay(&[f.clone(), f], &[Grid::zeros(DIMS.shape())], dir.path()).unwrap_err();
    assert!(matches!(err, OverlayError::MissingPredictions { frames: 2, maps: 1 }));
}
