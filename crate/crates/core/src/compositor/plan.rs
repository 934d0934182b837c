use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::semantics::SemanticRegion;
use crate::transfer::{TransferConfig, TransferOverrides};

/// Prefix marking an example reference as a catalog identifier.
pub const CATALOG_PREFIX: &str = "catalog:";

fn full_strength() -> f64 {
    1.0
}

/// One region styled from one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub region: SemanticRegion,
    /// Image path, or `catalog:<id>`.
    pub example: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_landmarks: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_mask: Option<String>,
    #[serde(default)]
    pub overrides: TransferOverrides,
    #[serde(default = "full_strength")]
    pub strength: f64,
}

impl Assignment {
    pub fn catalog_id(&self) -> Option<&str> {
        self.example.strip_prefix(CATALOG_PREFIX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MakeupPlan {
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_landmarks: Option<String>,
    /// Externally supplied subject masks, needed for regions without a contour.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub subject_masks: BTreeMap<SemanticRegion, String>,
    #[serde(default)]
    pub assignments: Vec<Assignment>,
}

/// Per-region outcome of plan validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCheck {
    pub region: SemanticRegion,
    pub ok: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanValidation {
    pub valid: bool,
    pub regions: Vec<RegionCheck>,
    /// Problems not tied to a single assignment.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub problems: Vec<String>,
}

impl PlanValidation {
    /// All problems, one line each.
    pub fn messages(&self) -> Vec<String> {
        let mut out = self.problems.clone();
        for r in &self.regions {
            out.extend(r.problems.iter().map(|p| format!("{}: {p}", r.region)));
        }
        out
    }
}

impl MakeupPlan {
    pub fn new(subject: impl Into<String>, subject_landmarks: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            subject_landmarks: Some(subject_landmarks.into()),
            subject_masks: BTreeMap::new(),
            assignments: Vec::new(),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Assignments in compositing order.
    pub fn ordered(&self) -> Vec<&Assignment> {
        let mut v: Vec<&Assignment> = self.assignments.iter().collect();
        v.sort_by_key(|a| a.region.compositing_rank());
        v
    }

    /// Structural checks. `known_catalog` decides whether a catalog id exists;
    /// pass `None` to skip that check.
    pub fn validate(&self, known_catalog: Option<&dyn Fn(&str) -> bool>) -> PlanValidation {
        let mut problems = Vec::new();
        if self.subject.trim().is_empty() {
            problems.push("subject reference is empty".to_string());
        }
        if self.subject_landmarks.is_none() && self.assignments.iter().any(|a| a.region.contour_group().is_some()) {
            problems.push("subject_landmarks are required for landmark regions".to_string());
        }
        let mut seen = BTreeSet::new();
        let mut regions = Vec::new();
        for a in &self.assignments {
            let mut p = Vec::new();
            if !seen.insert(a.region) {
                p.push("duplicate assignment for region".to_string());
            }
            if !(0.0..=1.0).contains(&a.strength) {
                p.push(format!("strength {} outside [0, 1]", a.strength));
            }
            if let Err(e) = TransferConfig::default().with_overrides(&a.overrides).validate() {
                p.push(e.to_string());
            }
            match a.catalog_id() {
                Some(id) => {
                    if let Some(known) = known_catalog {
                        if !known(id) {
                            p.push(format!("UnknownCatalogEntry: {id}"));
                        }
                    }
                }
                None => {
                    if a.example.trim().is_empty() {
                        p.push("example reference is empty".to_string());
                    }
                    if a.example_mask.is_none() && (a.example_landmarks.is_none() || a.region.contour_group().is_none()) {
                        p.push("example needs a region mask or landmarks".to_string());
                    }
                }
            }
            if a.region.contour_group().is_none() && !self.subject_masks.contains_key(&a.region) {
                p.push("region has no landmark contour; supply subject_masks entry".to_string());
            }
            regions.push(RegionCheck {
                region: a.region,
                ok: p.is_empty(),
                problems: p,
            });
        }
        PlanValidation {
            valid: problems.is_empty() && regions.iter().all(|r| r.ok),
            regions,
            problems,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lips(example: &str) -> Assignment {
        Assignment {
            region: SemanticRegion::Lips,
            example: example.into(),
            example_landmarks: Some("a.json".into()),
            example_mask: None,
            overrides: TransferOverrides::default(),
            strength: 1.0,
        }
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let json = r#"{"subject": "s.png", "subject_landmarks": "s.json",
            "assignments": [{"region": "Lips", "example": "catalog:red"}]}"#;
        let plan = MakeupPlan::from_json(json).unwrap();
        assert_eq!(plan.assignments[0].strength, 1.0);
        assert_eq!(plan.assignments[0].catalog_id(), Some("red"));
        assert_eq!(MakeupPlan::from_json(&plan.to_json()).unwrap(), plan);
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(MakeupPlan::from_json(r#"{"subject": "s.png", "colour": 1}"#).is_err());
    }

    #[test]
    fn duplicate_region_is_invalid() {
        let mut plan = MakeupPlan::new("s.png", "s.json");
        plan.assignments = vec![lips("a.png"), lips("b.png")];
        let v = plan.validate(None);
        assert!(!v.valid);
        assert!(v.regions[0].ok);
        assert!(!v.regions[1].ok);
    }

    #[test]
    fn strength_and_catalog_checks() {
        let mut plan = MakeupPlan::new("s.png", "s.json");
        let mut a = lips("catalog:nope");
        a.strength = 1.5;
        plan.assignments = vec![a];
        let known = |id: &str| id == "red";
        let v = plan.validate(Some(&known));
        assert_eq!(v.regions[0].problems.len(), 2);
    }

    #[test]
    fn hair_needs_subject_mask() {
        let mut plan = MakeupPlan::new("s.png", "s.json");
        plan.assignments = vec![Assignment {
            region: SemanticRegion::Hair,
            example_mask: Some("m.png".into()),
            ..lips("e.png")
        }];
        assert!(!plan.validate(None).valid);
        plan.subject_masks.insert(SemanticRegion::Hair, "hair.png".into());
        assert!(plan.validate(None).valid);
    }

    #[test]
    fn ordering_follows_compositing_rank() {
        let mut plan = MakeupPlan::new("s.png", "s.json");
        plan.assignments = vec![
            lips("a.png"),
            Assignment {
                region: SemanticRegion::FaceSkin,
                ..lips("b.png")
            },
        ];
        let order: Vec<_> = plan.ordered().iter().map(|a| a.region).collect();
        assert_eq!(order, vec![SemanticRegion::FaceSkin, SemanticRegion::Lips]);
    }
}
