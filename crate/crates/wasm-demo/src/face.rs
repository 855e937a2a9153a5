//! A drawable frontal face in a 200 x 240 box.

use std::f64::consts::PI;

use oromon_core::{FaceBox, LandmarkSet, Point};

pub fn template_box() -> FaceBox {
    FaceBox::new(0.0, 0.0, 200.0, 240.0, 1.0).expect("valid box")
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize, start: f64) -> impl Iterator<Item = Point> {
    (0..n).map(move |i| {
        let t = start + 2.0 * PI * i as f64 / n as f64;
        Point::new(cx + rx * t.cos(), cy + ry * t.sin())
    })
}

pub fn template_face() -> LandmarkSet {
    gesture_face(0.0, 0)
}

/// The template with mouth corners pulled `a` pixels outward and lips
/// opened `a` pixels each way. Eye centers sit 60 pixels apart.
pub fn gesture_face(a: f64, frame_index: u64) -> LandmarkSet {
    let mut pts: Vec<Point> = Vec::with_capacity(68);
    // Jaw: lower half-ellipse from the left ear round to the right.
    pts.extend((0..17).map(|i| {
        let t = PI - PI * i as f64 / 16.0;
        Point::new(100.0 + 90.0 * t.cos(), 110.0 + 120.0 * t.sin())
    }));
    pts.extend((0..5).map(|i| Point::new(40.0 + 12.0 * i as f64, 75.0 - 3.0 * (2.0 - (i as f64 - 2.0).abs()))));
    pts.extend((0..5).map(|i| Point::new(112.0 + 12.0 * i as f64, 75.0 - 3.0 * (2.0 - (i as f64 - 2.0).abs()))));
    pts.extend((0..4).map(|i| Point::new(100.0, 90.0 + 14.0 * i as f64)));
    pts.extend((0..5).map(|i| Point::new(84.0 + 8.0 * i as f64, 140.0 + 4.0 * (1.0 - (i as f64 - 2.0).abs() / 2.0))));
    pts.extend(ellipse(70.0, 95.0, 14.0, 6.0, 6, PI));
    pts.extend(ellipse(130.0, 95.0, 14.0, 6.0, 6, PI));
    // Outer lip 48..59 from the left corner clockwise, inner lip 60..67.
    let outer: Vec<Point> = ellipse(100.0, 180.0, 30.0, 12.0, 12, PI).collect();
    let inner: Vec<Point> = ellipse(100.0, 180.0, 20.0, 4.0, 8, PI).collect();
    for (i, p) in outer.into_iter().enumerate() {
        let dx = match i {
            0 => -a,
            6 => a,
            _ => 0.0,
        };
        let dy = match i {
            3 => -a,
            9 => a,
            _ => 0.0,
        };
        pts.push(Point::new(p.x + dx, p.y + dy));
    }
    pts.extend(inner);
    LandmarkSet::from_points(pts, frame_index).expect("68 finite points")
}
