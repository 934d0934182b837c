//! The 83-point landmark schema.

use serde::{Deserialize, Serialize};

use super::SemanticsError;

pub type Point2 = [f64; 2];

/// Named landmark groups, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LandmarkGroup {
    FaceContour,
    LeftEyebrow,
    RightEyebrow,
    LeftEye,
    RightEye,
    Nose,
    MouthOuter,
    MouthInner,
}

impl LandmarkGroup {
    pub const ALL: [LandmarkGroup; 8] = [
        LandmarkGroup::FaceContour,
        LandmarkGroup::LeftEyebrow,
        LandmarkGroup::RightEyebrow,
        LandmarkGroup::LeftEye,
        LandmarkGroup::RightEye,
        LandmarkGroup::Nose,
        LandmarkGroup::MouthOuter,
        LandmarkGroup::MouthInner,
    ];

    /// Number of points the schema fixes for this group.
    pub fn size(self) -> usize {
        match self {
            LandmarkGroup::FaceContour => 19,
            LandmarkGroup::LeftEyebrow | LandmarkGroup::RightEyebrow => 8,
            LandmarkGroup::LeftEye | LandmarkGroup::RightEye | LandmarkGroup::Nose => 10,
            LandmarkGroup::MouthOuter => 12,
            LandmarkGroup::MouthInner => 6,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            LandmarkGroup::FaceContour => "face_contour",
            LandmarkGroup::LeftEyebrow => "left_eyebrow",
            LandmarkGroup::RightEyebrow => "right_eyebrow",
            LandmarkGroup::LeftEye => "left_eye",
            LandmarkGroup::RightEye => "right_eye",
            LandmarkGroup::Nose => "nose",
            LandmarkGroup::MouthOuter => "mouth_outer",
            LandmarkGroup::MouthInner => "mouth_inner",
        }
    }
}

/// Total landmark count across all groups.
pub const LANDMARK_COUNT: usize = 83;

/// On-disk landmark document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkDocument {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub groups: GroupPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPoints {
    pub face_contour: Vec<Point2>,
    pub left_eyebrow: Vec<Point2>,
    pub right_eyebrow: Vec<Point2>,
    pub left_eye: Vec<Point2>,
    pub right_eye: Vec<Point2>,
    pub nose: Vec<Point2>,
    pub mouth_outer: Vec<Point2>,
    pub mouth_inner: Vec<Point2>,
}

impl GroupPoints {
    pub fn get(&self, group: LandmarkGroup) -> &[Point2] {
        match group {
            LandmarkGroup::FaceContour => &self.face_contour,
            LandmarkGroup::LeftEyebrow => &self.left_eyebrow,
            LandmarkGroup::RightEyebrow => &self.right_eyebrow,
            LandmarkGroup::LeftEye => &self.left_eye,
            LandmarkGroup::RightEye => &self.right_eye,
            LandmarkGroup::Nose => &self.nose,
            LandmarkGroup::MouthOuter => &self.mouth_outer,
            LandmarkGroup::MouthInner => &self.mouth_inner,
        }
    }
}

/// Validated set of 83 facial landmarks in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    doc: LandmarkDocument,
}

impl LandmarkSet {
    /// Validates a parsed document against group sizes and image bounds.
    pub fn from_document(doc: LandmarkDocument) -> Result<Self, SemanticsError> {
        let mut total = 0;
        for group in LandmarkGroup::ALL {
            let pts = doc.groups.get(group);
            if pts.len() != group.size() {
                return Err(SemanticsError::Schema(format!(
                    "group {} has {} points, expected {}",
                    group.key(),
                    pts.len(),
                    group.size()
                )));
            }
            total += pts.len();
        }
        if total != LANDMARK_COUNT {
            return Err(SemanticsError::Schema(format!("{total} points, expected {LANDMARK_COUNT}")));
        }
        let (w, h) = (doc.width as f64, doc.height as f64);
        for group in LandmarkGroup::ALL {
            for (index, &[x, y]) in doc.groups.get(group).iter().enumerate() {
                if !(x.is_finite() && y.is_finite() && (0.0..=w).contains(&x) && (0.0..=h).contains(&y)) {
                    return Err(SemanticsError::OutOfBounds {
                        group: group.key(),
                        index,
                        x,
                        y,
                    });
                }
            }
        }
        Ok(Self { doc })
    }

    pub fn image(&self) -> &str {
        &self.doc.image
    }

    pub fn width(&self) -> usize {
        self.doc.width as usize
    }

    pub fn height(&self) -> usize {
        self.doc.height as usize
    }

    pub fn group(&self, group: LandmarkGroup) -> &[Point2] {
        self.doc.groups.get(group)
    }

    pub fn point_count(&self) -> usize {
        LandmarkGroup::ALL.iter().map(|&g| self.group(g).len()).sum()
    }

    pub fn document(&self) -> &LandmarkDocument {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("landmark document serializes")
    }
}

/// Parses and validates a landmark JSON document.
pub fn parse_landmarks(json: &str) -> Result<LandmarkSet, SemanticsError> {
    let doc: LandmarkDocument =
        serde_json::from_str(json).map_err(|e| SemanticsError::Schema(e.to_string()))?;
    LandmarkSet::from_document(doc)
}
