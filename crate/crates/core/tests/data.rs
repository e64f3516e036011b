use image::{GrayImage, Luma, RgbImage};
use lgsan::data::{derive_edge_gt, generate_sample, generate_synthetic, load_cod_dataset, save_dataset, SyntheticSpec};
use lgsan_oracles::modules::morph_edge;
use proptest::prelude::*;

const TEMPLATE: &str = "a photo of the camouflaged {category}";

fn mean_gap(n: usize, camo: f64, seed: u64) -> f64 {
    let s = generate_synthetic(&SyntheticSpec::new(n, 64, camo, seed));
    s.iter().map(|s| s.intensity_gap()).sum::<f64>() / n as f64
}

#[test]
fn camouflage_strength_sets_the_intensity_gap() {
    let easy = mean_gap(20, 0.0, 3);
    let hard = mean_gap(20, 1.0, 3);
    assert!(easy > 0.3, "gap at strength 0: {easy}");
    assert!(hard < 0.05, "gap at strength 1: {hard}");
}

#[test]
fn stronger_camouflage_means_a_smaller_gap() {
    let weak = mean_gap(100, 0.1, 11);
    let strong = mean_gap(100, 0.9, 11);
    assert!(strong < weak, "0.9: {strong}, 0.1: {weak}");
}

#[test]
fn masks_are_nonempty_and_bounded_in_area() {
    for seed in 0..3 {
        for s in generate_synthetic(&SyntheticSpec::new(40, 64, 0.5, seed)) {
            let f = s.foreground_fraction();
            assert!((0.02..=0.40).contains(&f), "{} covers {f}", s.name);
            assert_eq!(s.edge, derive_edge_gt(&s.mask, s.h, s.w));
            assert!(s.prompt.ends_with(&s.category) && s.prompt.starts_with("a photo of the camouflaged"));
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn generation_is_deterministic_and_index_addressable() {
    let spec = SyntheticSpec::new(6, 32, 0.7, 42);
    let a = generate_synthetic(&spec);
    let b = generate_synthetic(&spec);
    assert_eq!(a, b);
    let mut rev: Vec<_> = (0..6).rev().map(|i| generate_sample(&spec, i)).collect();
    rev.reverse();
    assert_eq!(a, rev);
    assert_ne!(a, generate_synthetic(&SyntheticSpec::new(6, 32, 0.7, 43)));
}

#[test]
fn square_edge_matches_the_enumerated_band() {
    let mut mask = vec![false; 64];
    for r in 2..6 {
        for c in 2..6 {
            mask[r * 8 + c] = true;
        }
    }
    // Dilation covers rows/cols 1..=6, erosion keeps only 3..=4: a two pixel
    // band around the square's outline.
    let expected: Vec<bool> = (0..64)
        .map(|i| {
            let (r, c) = (i / 8, i % 8);
            let dil = (1..=6).contains(&r) && (1..=6).contains(&c);
            let ero = (3..=4).contains(&r) && (3..=4).contains(&c);
            dil && !ero
        })
        .collect();
    assert_eq!(morph_edge(8, 8, &mask), expected);
    assert_eq!(derive_edge_gt(&mask, 8, 8), expected);
    assert_eq!(expected.iter().filter(|&&e| e).count(), 32);
}

fn mask_strategy() -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| (Just(h), Just(w), proptest::collection::vec(any::<bool>(), h * w)))
}

proptest! {
    #[test]
    fn edge_pixels_touch_the_boundary((h, w, mask) in mask_strategy()) {
        let edge = derive_edge_gt(&mask, h, w);
        prop_assert_eq!(&edge, &morph_edge(h, w, &mask));
        let at = |r: isize, c: isize| r >= 0 && c >= 0 && r < h as isize && c < w as isize && mask[r as usize * w + c as usize];
        for r in 0..h as isize {
            for c in 0..w as isize {
                if !edge[r as usize * w + c as usize] {
                    continue;
                }
                let here = at(r, c);
                let near = (-1..=1).any(|dr| (-1..=1).any(|dc| at(r + dr, c + dc) != here));
                prop_assert!(near, "edge at ({}, {}) has no differing neighbour", r, c);
            }
        }
    }
}

fn write_pair(root: &std::path::Path, stem: &str, gray: &GrayImage) {
    RgbImage::from_pixel(gray.width(), gray.height(), image::Rgb([10, 20, 30])).save(root.join("Imgs").join(format!("{stem}.png"))).unwrap();
    gray.save(root.join("GT").join(format!("{stem}.png"))).unwrap();
}

fn layout() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("Imgs")).unwrap();
    std::fs::create_dir_all(dir.path().join("GT")).unwrap();
    dir
}

#[test]
fn loader_pairs_files_and_binarizes_masks() {
    let dir = layout();
    let mut gt = GrayImage::new(6, 4);
    for (i, p) in gt.pixels_mut().enumerate() {
        *p = Luma([if i % 3 == 0 { 255 } else { 0 }]);
    }
    for stem in ["a", "b", "COD10K-CAM-1-Aquatic-3-Crab-32"] {
        write_pair(dir.path(), stem, &gt);
    }
    let ds = load_cod_dataset(dir.path(), None, TEMPLATE).unwrap();
    assert_eq!(ds.len(), 3);
    let all = ds.load_all().unwrap();
    let crab = all.iter().find(|s| s.name.starts_with("COD10K")).unwrap();
    assert_eq!(crab.category, "crab");
    assert_eq!(crab.prompt, "a photo of the camouflaged crab");
    let s = all.iter().find(|s| s.name == "a").unwrap();
    assert_eq!((s.h, s.w), (4, 6));
    assert_eq!(s.mask, (0..24).map(|i| i % 3 == 0).collect::<Vec<_>>());
    assert_eq!(s.category, "object");
}

#[test]
fn orphan_files_are_named() {
    let dir = layout();
    write_pair(dir.path(), "ok", &GrayImage::new(4, 4));
    RgbImage::new(4, 4).save(dir.path().join("Imgs/lonely.png")).unwrap();
    let err = load_cod_dataset(dir.path(), None, TEMPLATE).unwrap_err().to_string();
    assert!(err.contains("lonely.png"), "{err}");
}

#[test]
fn saved_synthetic_data_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_synthetic(&SyntheticSpec::new(3, 32, 0.4, 5));
    save_dataset(dir.path(), &samples).unwrap();
    let back = load_cod_dataset(dir.path(), None, TEMPLATE).unwrap().load_all().unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.edge, b.edge);
        assert_eq!(a.prompt, b.prompt);
        let d = a.image.iter().zip(&b.image).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
        assert!(d <= 0.5 / 255.0 + 1e-6, "quantization error {d}");
    }
    let resized = load_cod_dataset(dir.path(), Some(64), TEMPLATE).unwrap().get(1).unwrap();
    assert_eq!((resized.h, resized.w, resized.image.len()), (64, 64, 3 * 64 * 64));
}
