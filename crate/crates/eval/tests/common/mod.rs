#![allow(dead_code)]

use oromon_core::{AnnotationRecord, Cohort, FaceBox, FrameRef, LandmarkSet, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random faces: boxes of assorted sizes with landmarks scattered inside.
pub fn corpus(frames: usize, seed: u64) -> Vec<AnnotationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|i| {
            let (x, y) = (rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0));
            let (w, h) = (rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0));
            let points: Vec<Point> =
                (0..68).map(|_| Point::new(x + rng.gen_range(0.0..w), y + rng.gen_range(0.0..h))).collect();
            AnnotationRecord {
                frame_ref: FrameRef::Video { video_id: format!("v{}", i % 7), frame_index: i as u64 },
                face_box: FaceBox::new(x, y, w, h, 1.0).unwrap(),
                landmarks: LandmarkSet::from_points(points, i as u64).unwrap(),
                cohort: [Cohort::Healthy, Cohort::Als, Cohort::Stroke][i % 3],
                subject_id: format!("s{}", i % 5),
            }
        })
        .collect()
}
