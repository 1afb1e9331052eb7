//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scarecrow_core::backbone::Image;
use scarecrow_core::geometry::BoundingBox;
use scarecrow_core::multibox::Detection;

/// Normalized boxes with sides between 0.02 and 0.5.
pub fn random_boxes(n: usize, seed: u64) -> Vec<BoundingBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w = rng.random_range(0.02..0.5);
            let h = rng.random_range(0.02..0.5);
            let x = rng.random_range(0.0..1.0 - w);
            let y = rng.random_range(0.0..1.0 - h);
            BoundingBox::new(x, y, x + w, y + h).expect("box inside the unit square")
        })
        .collect()
}

/// Scored detections spread over `classes` labels.
pub fn random_detections(n: usize, classes: &[&str], seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    random_boxes(n, seed)
        .into_iter()
        .map(|bbox| Detection {
            label: classes[rng.random_range(0..classes.len())].to_string(),
            score: rng.random_range(0.0..1.0),
            bbox,
        })
        .collect()
}

/// RGB noise image.
pub fn random_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
    Image::new(width, height, data).expect("valid image")
}
