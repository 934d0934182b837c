//! Facial semantics: landmark ingestion, per-region contours and binary
//! region masks.
//!
//! Contours connect each landmark group in storage order and close the ring
//! from the last point back to the first. Masks are filled with an even-odd
//! scanline rule sampled at pixel centers.

mod landmarks;
mod mask;

pub use landmarks::{parse_landmarks, GroupPoints, LandmarkDocument, LandmarkGroup, LandmarkSet, Point2, LANDMARK_COUNT};
pub use mask::{PixelRect, RegionMask};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemanticsError {
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("OutOfBounds: {group}[{index}] = ({x}, {y}) lies outside the image")]
    OutOfBounds {
        group: &'static str,
        index: usize,
        x: f64,
        y: f64,
    },
    #[error("NoContour: region {0:?} has no landmark contour")]
    NoContour(SemanticRegion),
    #[error("SelfIntersecting: contour edges {0} and {1} cross")]
    SelfIntersecting(usize, usize),
    #[error("EmptyMask: polygon covers no pixel center")]
    EmptyMask,
}

/// Facial region that can receive makeup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticRegion {
    FaceSkin,
    LeftEyebrow,
    RightEyebrow,
    LeftEye,
    RightEye,
    Lips,
    Teeth,
    Hair,
}

impl SemanticRegion {
    pub const ALL: [SemanticRegion; 8] = [
        SemanticRegion::FaceSkin,
        SemanticRegion::LeftEyebrow,
        SemanticRegion::RightEyebrow,
        SemanticRegion::LeftEye,
        SemanticRegion::RightEye,
        SemanticRegion::Lips,
        SemanticRegion::Teeth,
        SemanticRegion::Hair,
    ];

    /// Order in which styled regions are layered onto the canvas.
    pub const COMPOSITING_ORDER: [SemanticRegion; 8] = [
        SemanticRegion::FaceSkin,
        SemanticRegion::Teeth,
        SemanticRegion::Lips,
        SemanticRegion::LeftEye,
        SemanticRegion::RightEye,
        SemanticRegion::LeftEyebrow,
        SemanticRegion::RightEyebrow,
        SemanticRegion::Hair,
    ];

    /// Landmark group whose ring bounds the region, if any.
    pub fn contour_group(self) -> Option<LandmarkGroup> {
        match self {
            SemanticRegion::FaceSkin => Some(LandmarkGroup::FaceContour),
            SemanticRegion::LeftEyebrow => Some(LandmarkGroup::LeftEyebrow),
            SemanticRegion::RightEyebrow => Some(LandmarkGroup::RightEyebrow),
            SemanticRegion::LeftEye => Some(LandmarkGroup::LeftEye),
            SemanticRegion::RightEye => Some(LandmarkGroup::RightEye),
            SemanticRegion::Lips => Some(LandmarkGroup::MouthOuter),
            SemanticRegion::Teeth => Some(LandmarkGroup::MouthInner),
            SemanticRegion::Hair => None,
        }
    }

    pub fn compositing_rank(self) -> usize {
        Self::COMPOSITING_ORDER
            .iter()
            .position(|&r| r == self)
            .expect("every region is ordered")
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticRegion::FaceSkin => "FaceSkin",
            SemanticRegion::LeftEyebrow => "LeftEyebrow",
            SemanticRegion::RightEyebrow => "RightEyebrow",
            SemanticRegion::LeftEye => "LeftEye",
            SemanticRegion::RightEye => "RightEye",
            SemanticRegion::Lips => "Lips",
            SemanticRegion::Teeth => "Teeth",
            SemanticRegion::Hair => "Hair",
        }
    }
}

impl std::fmt::Display for SemanticRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SemanticRegion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SemanticRegion::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown region {s:?}"))
    }
}

/// Closed polygon ring of a landmark-derived region.
pub fn region_contour(lm: &LandmarkSet, region: SemanticRegion) -> Result<Vec<Point2>, SemanticsError> {
    let group = region.contour_group().ok_or(SemanticsError::NoContour(region))?;
    let poly = lm.group(group).to_vec();
    check_simple(&poly)?;
    Ok(poly)
}

fn check_simple(poly: &[Point2]) -> Result<(), SemanticsError> {
    let n = poly.len();
    for i in 0..n {
        for j in i + 1..n {
            // Adjacent edges share a vertex and are allowed to touch there.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return Err(SemanticsError::SelfIntersecting(i, j));
            }
        }
    }
    Ok(())
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Signed shoelace area (positive for counter-clockwise in y-up axes).
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Even-odd scanline fill of `polygon` at pixel centers.
pub fn rasterize_mask(polygon: &[Point2], width: usize, height: usize) -> Result<RegionMask, SemanticsError> {
    if polygon.len() < 3 || polygon_area(polygon).abs() < 1.0 {
        return Err(SemanticsError::EmptyMask);
    }
    let n = polygon.len();
    let mut mask = RegionMask::new(width, height);
    let mut xs = Vec::with_capacity(n);
    for y in 0..height {
        let cy = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (p, q) = (polygon[i], polygon[(i + 1) % n]);
            if (p[1] > cy) != (q[1] > cy) {
                xs.push((q[0] - p[0]) * (cy - p[1]) / (q[1] - p[1]) + p[0]);
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // Centers cx with span[0] <= cx < span[1].
            let first = (span[0] - 0.5).ceil().max(0.0);
            let mut x = first as usize;
            while x < width && (x as f64 + 0.5) < span[1] {
                mask.set(x, y, true);
                x += 1;
            }
        }
    }
    if mask.is_empty() {
        return Err(SemanticsError::EmptyMask);
    }
    Ok(mask)
}

/// Binary mask of a landmark-derived region.
///
/// `FaceSkin` excludes the eyes, eyebrows and the whole mouth; `Lips`
/// excludes the inner mouth, which belongs to `Teeth`.
pub fn region_mask(lm: &LandmarkSet, region: SemanticRegion) -> Result<RegionMask, SemanticsError> {
    let (w, h) = (lm.width(), lm.height());
    let fill = |r: SemanticRegion| rasterize_mask(&region_contour(lm, r)?, w, h);
    let mask = match region {
        SemanticRegion::FaceSkin => {
            let mut m = fill(SemanticRegion::FaceSkin)?;
            for r in [
                SemanticRegion::LeftEye,
                SemanticRegion::RightEye,
                SemanticRegion::LeftEyebrow,
                SemanticRegion::RightEyebrow,
                SemanticRegion::Lips,
            ] {
                m = m.difference(&fill(r)?);
            }
            m
        }
        SemanticRegion::Lips => fill(SemanticRegion::Lips)?.difference(&fill(SemanticRegion::Teeth)?),
        other => fill(other)?,
    };
    if mask.is_empty() {
        return Err(SemanticsError::EmptyMask);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{FaceParams, SyntheticFace};
    use proptest::prelude::*;

    /// Crossing-number point-in-polygon test.
    fn brute_force_inside(poly: &[Point2], px: f64, py: f64) -> bool {
        let mut inside = false;
        let mut j = poly.len() - 1;
        for i in 0..poly.len() {
            let (xi, yi) = (poly[i][0], poly[i][1]);
            let (xj, yj) = (poly[j][0], poly[j][1]);
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn brute_force_mask(poly: &[Point2], w: usize, h: usize) -> RegionMask {
        RegionMask::from_fn(w, h, |x, y| brute_force_inside(poly, x as f64 + 0.5, y as f64 + 0.5))
    }

    fn fixture() -> LandmarkSet {
        SyntheticFace::render(&FaceParams::default()).landmarks
    }

    #[test]
    fn fixture_has_83_points() {
        let lm = fixture();
        assert_eq!(lm.point_count(), 83);
        let reparsed = parse_landmarks(&lm.to_json()).unwrap();
        assert_eq!(reparsed, lm);
    }

    #[test]
    fn missing_point_is_schema_error() {
        let mut doc = fixture().document().clone();
        doc.groups.nose.pop();
        let json = serde_json::to_string(&doc).unwrap();
        let err = parse_landmarks(&json).unwrap_err();
        assert!(matches!(err, SemanticsError::Schema(_)));
        assert!(err.to_string().contains("SchemaError"));
    }

    #[test]
    fn negative_coordinate_is_out_of_bounds() {
        let mut doc = fixture().document().clone();
        doc.groups.left_eye[3] = [-3.0, 10.0];
        let json = serde_json::to_string(&doc).unwrap();
        assert!(matches!(parse_landmarks(&json), Err(SemanticsError::OutOfBounds { .. })));
    }

    #[test]
    fn malformed_json_is_schema_error() {
        assert!(matches!(parse_landmarks("{\"image\": 3}"), Err(SemanticsError::Schema(_))));
    }

    #[test]
    fn left_eye_contour_has_positive_area() {
        let lm = fixture();
        let c = region_contour(&lm, SemanticRegion::LeftEye).unwrap();
        assert_eq!(c.len(), 10);
        // Shoelace oracle straight from the fixture points.
        let pts = lm.group(LandmarkGroup::LeftEye);
        let mut twice = 0.0;
        for i in 0..pts.len() {
            let j = (i + 1) % pts.len();
            twice += pts[i][0] * pts[j][1] - pts[j][0] * pts[i][1];
        }
        assert!(twice.abs() / 2.0 > 1.0);
        assert_eq!(polygon_area(&c).abs(), twice.abs() / 2.0);
    }

    #[test]
    fn hair_has_no_contour() {
        assert_eq!(
            region_contour(&fixture(), SemanticRegion::Hair),
            Err(SemanticsError::NoContour(SemanticRegion::Hair))
        );
    }

    #[test]
    fn lips_contain_teeth() {
        let lm = fixture();
        let lips = region_contour(&lm, SemanticRegion::Lips).unwrap();
        let teeth = region_contour(&lm, SemanticRegion::Teeth).unwrap();
        assert_eq!(lips.len(), 12);
        for p in &teeth {
            assert!(brute_force_inside(&lips, p[0], p[1]));
        }
    }

    #[test]
    fn self_intersecting_contour_is_rejected() {
        let mut doc = fixture().document().clone();
        doc.groups.left_eye.swap(2, 7);
        let lm = LandmarkSet::from_document(doc).unwrap();
        assert!(matches!(
            region_contour(&lm, SemanticRegion::LeftEye),
            Err(SemanticsError::SelfIntersecting(..))
        ));
    }

    #[test]
    fn square_on_six_by_six() {
        let sq = [[1.0, 1.0], [4.0, 1.0], [4.0, 4.0], [1.0, 4.0]];
        let m = rasterize_mask(&sq, 6, 6).unwrap();
        assert_eq!(m.count(), 9);
        assert_eq!(m, brute_force_mask(&sq, 6, 6));
    }

    #[test]
    fn zero_area_triangle() {
        let tri = [[0.0, 0.0], [2.0, 2.0], [4.0, 4.0]];
        assert_eq!(rasterize_mask(&tri, 8, 8), Err(SemanticsError::EmptyMask));
    }

    #[test]
    fn region_masks_of_fixture() {
        let lm = fixture();
        let face = rasterize_mask(&region_contour(&lm, SemanticRegion::FaceSkin).unwrap(), lm.width(), lm.height()).unwrap();
        let face_box = face.bbox().unwrap();
        let skin = region_mask(&lm, SemanticRegion::FaceSkin).unwrap();
        for r in SemanticRegion::ALL.into_iter().filter(|&r| r != SemanticRegion::Hair) {
            let contour = region_contour(&lm, r).unwrap();
            let raw = rasterize_mask(&contour, lm.width(), lm.height()).unwrap();
            assert!(!raw.is_empty());
            assert!(face_box.contains_rect(&raw.bbox().unwrap()), "{r} outside face box");
            let m = region_mask(&lm, r).unwrap();
            if r != SemanticRegion::FaceSkin {
                assert!(m.intersection(&skin).is_empty(), "{r} overlaps skin");
            }
        }
        assert!(matches!(region_mask(&lm, SemanticRegion::Hair), Err(SemanticsError::NoContour(_))));
    }

    #[test]
    fn contours_are_deterministic() {
        let lm = fixture();
        for r in [SemanticRegion::FaceSkin, SemanticRegion::Lips, SemanticRegion::RightEyebrow] {
            assert_eq!(region_contour(&lm, r).unwrap(), region_contour(&lm.clone(), r).unwrap());
        }
    }

    proptest! {
        #[test]
        fn fill_matches_brute_force(
            pts in prop::collection::vec((0.0f64..24.0, 0.0f64..20.0), 3..9)
        ) {
            let poly: Vec<Point2> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            match rasterize_mask(&poly, 24, 20) {
                Ok(m) => prop_assert_eq!(m, brute_force_mask(&poly, 24, 20)),
                Err(SemanticsError::EmptyMask) => {
                    prop_assert!(polygon_area(&poly).abs() < 1.0 || brute_force_mask(&poly, 24, 20).is_empty());
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
