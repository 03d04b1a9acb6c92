use depthgaze::dataset::RgbdFrame;
use depthgaze::grid::{argmax, mirror_x};
use depthgaze::saliency::*;
use depthgaze::{center_prior, Dims, Grid, Normalization, Point};
use proptest::prelude::*;

const DIMS: Dims = Dims::new(128, 96);

fn frame(rgb: [Grid; 3], depth: Grid) -> RgbdFrame {
    RgbdFrame::new(0, rgb, depth)
}

fn gray(v: f64) -> [Grid; 3] {
    [0, 1, 2].map(|_| Grid::from_elem(DIMS.shape(), v))
}

fn inside(rect: (usize, usize, usize, usize), p: (usize, usize)) -> bool {
    let (x0, y0, x1, y1) = rect;
    (x0..x1).contains(&p.0) && (y0..y1).contains(&p.1)
}

#[test]
fn uniform_frame_gives_flat_map() {
    for use_depth in [false, true] {
        let m = GraphSaliency::new(use_depth).saliency(&frame(gray(0.4), Grid::from_elem(DIMS.shape(), 0.3)));
        let g = m.grid();
        let (lo, hi) = g.fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(lo > 0.0 && hi / lo < 1.5, "use_depth={use_depth}: {lo}..{hi}");
    }
}

#[test]
fn bright_square_wins() {
    let rect = (80, 20, 96, 36);
    let mut rgb = gray(0.1);
    for c in rgb.iter_mut() {
        c.slice_mut(ndarray::s![rect.1..rect.3, rect.0..rect.2]).fill(0.9);
    }
    let m = GraphSaliency::new(false).saliency(&frame(rgb, Grid::zeros(DIMS.shape())));
    assert_eq!(m.normalization(), Normalization::MaxOne);
    assert!(inside(rect, argmax(m.grid())), "{:?}", argmax(m.grid()));
}

#[test]
fn depth_target_found_only_with_depth() {
    let rect = (20, 50, 36, 66);
    let mut depth = Grid::from_elem(DIMS.shape(), 0.9);
    depth.slice_mut(ndarray::s![rect.1..rect.3, rect.0..rect.2]).fill(0.1);
    let f = frame(gray(0.5), depth);
    let with = GraphSaliency::new(true).saliency(&f);
    assert!(inside(rect, argmax(with.grid())), "{:?}", argmax(with.grid()));
    let without = GraphSaliency::new(false).saliency(&f);
    let reference = GraphSaliency::new(false).saliency(&frame(gray(0.5), Grid::zeros(DIMS.shape())));
    assert_eq!(without, reference, "colour channels alone cannot see the target");
}

#[test]
fn center_prior_closed_form() {
    let m = center_prior(DIMS);
    assert_eq!(argmax(m.grid()), (64, 48));
    assert_eq!(m.grid()[[48, 64]], 1.0);
    let sigma = 0.05 * DIMS.diagonal();
    let off = depthgaze::grid::sample_bilinear(m.grid(), 64.0 + sigma, 48.0);
    // Bilinear sampling between pixels bounds the closed form.
    let lo = (-((sigma.ceil()).powi(2)) / (2.0 * sigma * sigma)).exp();
    let hi = (-((sigma.floor()).powi(2)) / (2.0 * sigma * sigma)).exp();
    assert!(off >= lo - 1e-12 && off <= hi + 1e-12);
    let exact = depthgaze::grid::gaussian_blob(DIMS, Point::new(64.0, 48.0), sigma);
    assert!((exact[[48, 64]] - 1.0).abs() < 1e-15);
    assert!(((-0.5f64).exp() - 0.6065).abs() < 1e-4);
}

#[test]
fn center_saliency_provider_is_center_prior() {
    let f = frame(gray(0.2), Grid::zeros(DIMS.shape()));
    assert_eq!(CenterSaliency.saliency(&f), center_prior(DIMS));
}

fn textured(seed: u64) -> RgbdFrame {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = |scale: f64| {
        let coarse = Grid::from_shape_fn((6, 8), |_| rng.random::<f64>() * scale);
        Grid::from_shape_fn(DIMS.shape(), |(y, x)| coarse[[y / 16, x / 16]])
    };
    let rgb = [blocks(1.0), blocks(1.0), blocks(1.0)];
    let depth = blocks(0.8);
    frame(rgb, depth)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mirroring_commutes(seed in 0u64..1000, use_depth in any::<bool>()) {
        let f = textured(seed);
        let mirrored = frame(f.rgb.clone().map(|c| mirror_x(&c)), mirror_x(&f.depth));
        let a = GraphSaliency::new(use_depth).saliency(&f);
        let b = GraphSaliency::new(use_depth).saliency(&mirrored);
        let a_m = mirror_x(a.grid());
        for (x, y) in a_m.iter().zip(b.grid().iter()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_offset_does_not_matter(seed in 0u64..1000, offset in 0.0..0.2f64) {
        let f = textured(seed);
        let shifted = frame(f.rgb.clone(), f.depth.mapv(|d| d + offset));
        let a = GraphSaliency::new(true).saliency(&f);
        let b = GraphSaliency::new(true).saliency(&shifted);
        for (x, y) in a.grid().iter().zip(b.grid().iter()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn output_is_finite_and_non_negative(seed in 0u64..1000, use_depth in any::<bool>()) {
        let m = GraphSaliency::new(use_depth).saliency(&textured(seed));
        prop_assert!(m.grid().iter().all(|v| v.is_finite() && *v >= 0.0));
        let max = m.grid().fold(0.0f64, |a, &b| a.max(b));
        prop_assert!((max - 1.0).abs() < 1e-6);
    }
}
