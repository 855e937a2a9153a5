//! Normalized mean error.

use crate::{Error, FaceBox, FaceRegion, LandmarkSet, Result};

/// Mean point-to-point distance over `region`, divided by the face box
/// diagonal and expressed as a percentage.
pub fn nme(
    ground_truth: &LandmarkSet,
    predicted: &LandmarkSet,
    face_box: &FaceBox,
    region: &FaceRegion,
) -> Result<f64> {
    let diagonal = face_box.diagonal();
    if !(diagonal > 0.0) {
        return Err(Error::InvalidNormalizer("face box diagonal is zero"));
    }
    if region.is_empty() {
        return Err(Error::InvalidRegion("region has no landmarks".into()));
    }
    let total: f64 = region
        .indices()
        .iter()
        .map(|&i| ground_truth.point(i).distance(predicted.point(i)))
        .sum();
    Ok(total / region.len() as f64 / diagonal * 100.0)
}

/// Unweighted mean of per-image [`nme`] values.
pub fn dataset_nme<'a, I>(samples: I, region: &FaceRegion) -> Result<f64>
where
    I: IntoIterator<Item = (&'a LandmarkSet, &'a LandmarkSet, &'a FaceBox)>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for (gt, pred, face_box) in samples {
        sum += nme(gt, pred, face_box, region)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("dataset has no images"));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Point;

    fn flat(p: Point) -> LandmarkSet {
        LandmarkSet::from_points(std::iter::repeat(p).take(68), 0).unwrap()
    }

    #[test]
    fn identical_sets_have_zero_error() {
        let set = LandmarkSet::from_points((0..68).map(|i| Point::new(i as f64, 2.0 * i as f64)), 0)
            .unwrap();
        let b = FaceBox::new(0.0, 0.0, 100.0, 80.0, 1.0).unwrap();
        for region in FaceRegion::report_order() {
            assert_eq!(nme(&set, &set, &b, &region).unwrap(), 0.0);
        }
    }

    #[test]
    fn three_four_five() {
        let gt = flat(Point::new(0.0, 0.0));
        let pred = flat(Point::new(3.0, 4.0));
        let b = FaceBox::new(0.0, 0.0, 30.0, 40.0, 1.0).unwrap();
        let region = FaceRegion::custom("one", vec![0]).unwrap();
        assert_eq!(nme(&gt, &pred, &b, &region).unwrap(), 10.0);
    }

    #[test]
    fn dataset_mean() {
        let gt = flat(Point::new(0.0, 0.0));
        let p2 = flat(Point::new(1.0, 0.0));
        let p4 = flat(Point::new(2.0, 0.0));
        let b = FaceBox::new(0.0, 0.0, 30.0, 40.0, 1.0).unwrap();
        // 1/50*100 = 2, 2/50*100 = 4
        let v = dataset_nme([(&gt, &p2, &b), (&gt, &p4, &b)], &FaceRegion::ALL).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        let single = dataset_nme([(&gt, &p2, &b)], &FaceRegion::ALL).unwrap();
        assert_eq!(single, nme(&gt, &p2, &b, &FaceRegion::ALL).unwrap());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let empty: Vec<(&LandmarkSet, &LandmarkSet, &FaceBox)> = Vec::new();
        assert_eq!(
            dataset_nme(empty, &FaceRegion::ALL),
            Err(Error::EmptyInput("dataset has no images"))
        );
    }
}
