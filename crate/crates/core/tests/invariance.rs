//! Invariance checks for ORB and pHash against transformed copies of
//! synthetic images.

use std::f64::consts::{FRAC_PI_2, TAU};

use nearmatch::imaging::{self, Channels, Raster};
use nearmatch::orb::pca::{fit_pca, Code128, PcaConfig};
use nearmatch::orb::{self, BinaryDescriptor256, OrbFeature};
use nearmatch::{phash, synth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Checkerboard whose cells carry random gray levels, so every corner has a
/// distinct neighbourhood and descriptor matches are unambiguous.
fn random_checkerboard(size: usize, cell: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = size.div_ceil(cell);
    let levels: Vec<u8> = (0..cells * cells)
        .map(|_| rng.random_range(0..=255))
        .collect();
    let pixels = (0..size * size)
        .map(|i| levels[(i / size / cell) * cells + (i % size) / cell])
        .collect();
    Raster::new(size, size, Channels::Gray, pixels).unwrap()
}

fn mutual_matches<T>(a: &[T], b: &[T], dist: impl Fn(&T, &T) -> u32) -> Vec<(usize, usize, u32)> {
    let nearest = |f: &T, pool: &[T]| pool.iter().enumerate().map(|(j, g)| (dist(f, g), j)).min();
    a.iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let (d, j) = nearest(f, b)?;
            (nearest(&b[j], a)?.1 == i).then_some((i, j, d))
        })
        .collect()
}

fn descriptors(f: &[OrbFeature]) -> Vec<BinaryDescriptor256> {
    f.iter().map(|f| f.descriptor).collect()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[test]
fn orientation_follows_quarter_turn() {
    let img = random_checkerboard(240, 16, 11);
    let turned = imaging::rotate(&img, 90.0, [0, 0, 0]);
    let a = orb::Orb::default().extract(&img);
    let b = orb::Orb::default().extract(&turned);
    let matches = mutual_matches(&a, &b, |x, y| x.descriptor.hamming(&y.descriptor));
    assert!(matches.len() >= 20, "only {} mutual matches", matches.len());
    // A counter-clockwise turn on screen is clockwise in y-down coordinates.
    let agree = matches
        .iter()
        .filter(|&&(i, j, _)| {
            let expected = a[i].keypoint.orientation - FRAC_PI_2;
            angle_gap(b[j].keypoint.orientation, expected) <= 0.1
        })
        .count();
    assert!(
        agree * 10 >= matches.len() * 8,
        "{agree} of {} matches turned by a quarter",
        matches.len()
    );
}

#[test]
fn small_rotation_keeps_descriptors_close() {
    let img = synth::image(4, 320, 240);
    let turned = imaging::rotate(&img, 10.0, [0, 0, 0]);
    let a = descriptors(&orb::Orb::default().extract(&img));
    let b = descriptors(&orb::Orb::default().extract(&turned));
    let matches = mutual_matches(&a, &b, |x, y| x.hamming(y));
    assert!(matches.len() >= 50);
    let mean = matches.iter().map(|m| m.2 as f64).sum::<f64>() / matches.len() as f64;
    assert!(mean < 64.0, "mean matched distance {mean}");
}

#[test]
fn orientations_lie_in_range() {
    let img = synth::image(8, 200, 200);
    for f in orb::Orb::default().extract(&img) {
        assert!((0.0..TAU).contains(&f.keypoint.orientation));
    }
}

fn scaled(r: &Raster, f: f64) -> Raster {
    let w = (r.width() as f64 * f) as usize;
    let h = (r.height() as f64 * f) as usize;
    imaging::resize_bilinear(r, w, h).unwrap()
}

#[test]
fn phash_survives_resizing() {
    for i in 0..20 {
        let img = synth::corpus_image(1, i);
        let h = phash::phash(&img);
        let down = phash::phash(&scaled(&img, 0.8));
        assert!(
            h.distance(down) <= 10,
            "image {i}: 80% resize at {}",
            h.distance(down)
        );
        let up = phash::phash(&scaled(&img, 2.0));
        assert!(
            h.distance(up) <= 6,
            "image {i}: 2x resize at {}",
            h.distance(up)
        );
    }
}

#[test]
fn unrelated_images_hash_far_apart() {
    let hashes: Vec<_> = (0..20)
        .map(|i| phash::phash(&synth::corpus_image(2, i)))
        .collect();
    let mut far = 0;
    let mut total = 0;
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            if total == 100 {
                break;
            }
            total += 1;
            far += (hashes[i].distance(hashes[j]) > 16) as usize;
        }
    }
    assert_eq!(total, 100);
    assert!(far >= 95, "{far} of 100 unrelated pairs above 16");
}

#[test]
fn code128_separates_resized_copies_from_unrelated_images() {
    let images: Vec<Raster> = (0..20).map(|i| synth::corpus_image(3, i)).collect();
    let orb = orb::Orb::default();
    let raw: Vec<Vec<BinaryDescriptor256>> = images
        .iter()
        .map(|r| descriptors(&orb.extract(r)))
        .collect();
    let pooled: Vec<_> = raw.iter().flatten().copied().collect();
    let pca = fit_pca(&pooled, &PcaConfig::default()).unwrap();
    let codes =
        |d: &[BinaryDescriptor256]| -> Vec<Code128> { d.iter().map(|d| pca.encode(d)).collect() };
    let hamming = |a: &Code128, b: &Code128| -> u32 {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| (x ^ y).count_ones())
            .sum()
    };
    let mean_match = |a: &[Code128], b: &[Code128]| {
        let m = mutual_matches(a, b, hamming);
        m.iter().map(|m| m.2 as f64).sum::<f64>() / m.len().max(1) as f64
    };

    let mut same = 0.0;
    let mut other = 0.0;
    for (i, img) in images.iter().enumerate() {
        let own = codes(&raw[i]);
        let resized = codes(&descriptors(&orb.extract(&scaled(img, 0.8))));
        let unrelated = codes(&raw[(i + 1) % images.len()]);
        same += mean_match(&own, &resized);
        other += mean_match(&own, &unrelated);
    }
    assert!(same < other, "resized {same} vs unrelated {other}");
}
