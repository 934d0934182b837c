//! Regenerates `tests/fixtures`: synthetic faces, landmarks, masks, the
//! catalog, plans, a photo collection with tracks, and the golden render.
//!
//! `cargo run -p makeup-cli --example gen_fixtures [out_dir]`

use std::path::{Path, PathBuf};

use makeup_cli::{cmd_render, RenderArgs, StyleFlags};
use makeup_core::imaging;
use makeup_core::semantics::{region_mask, SemanticRegion};
use makeup_core::synth::{synthetic_collection, FaceParams, SyntheticFace};

fn put(dir: &Path, name: &str, bytes: &[u8]) {
    std::fs::write(dir.join(name), bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
}

fn face(dir: &Path, stem: &str, p: &FaceParams) -> SyntheticFace {
    let f = SyntheticFace::render(p);
    put(dir, &format!("{stem}.png"), &imaging::encode_png_rgb(&f.image).unwrap());
    put(dir, &format!("{stem}.json"), f.landmarks.to_json().as_bytes());
    put(dir, &format!("{stem}_hair.png"), &f.hair_mask.encode_png().unwrap());
    f
}

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));
    std::fs::create_dir_all(&dir).unwrap();

    let subject = face(&dir, "subject", &FaceParams::default());
    face(&dir, "example_a", &FaceParams::example_a());
    face(&dir, "example_b", &FaceParams::example_b());
    let lips = region_mask(&subject.landmarks, SemanticRegion::Lips).unwrap();
    put(&dir, "subject_lips.png", &lips.encode_png().unwrap());

    let catalog = r#"[
  {"id": "rouge", "image": "example_a.png", "landmarks": "example_a.json", "masks": {"Hair": "example_a_hair.png"}, "display_name": "Rouge"},
  {"id": "bronze", "image": "example_b.png", "landmarks": "example_b.json", "masks": {"Hair": "example_b_hair.png"}, "display_name": "Bronze"}
]
"#;
    put(&dir, "catalog.json", catalog.as_bytes());

    let plan = r#"{
  "subject": "subject.png",
  "subject_landmarks": "subject.json",
  "subject_masks": {"Hair": "subject_hair.png"},
  "assignments": [
    {"region": "Lips", "example": "catalog:rouge"},
    {"region": "FaceSkin", "example": "catalog:bronze", "strength": 0.8},
    {"region": "LeftEye", "example": "example_a.png", "example_landmarks": "example_a.json"},
    {"region": "Hair", "example": "catalog:bronze"}
  ]
}
"#;
    put(&dir, "plan.json", plan.as_bytes());
    let single = r#"{
  "subject": "subject.png",
  "subject_landmarks": "subject.json",
  "assignments": [{"region": "FaceSkin", "example": "catalog:bronze"}]
}
"#;
    put(&dir, "plan_single.json", single.as_bytes());
    put(&dir, "plan_empty.json", br#"{"subject": "subject.png", "subject_landmarks": "subject.json", "assignments": []}"#);

    let coll_dir = dir.join("collection");
    std::fs::create_dir_all(&coll_dir).unwrap();
    let coll = synthetic_collection(8, 96, 200, 7);
    for (name, img) in coll.tracks.images.iter().zip(&coll.images) {
        put(&coll_dir, name, &imaging::encode_png_rgb(img).unwrap());
    }
    put(&coll_dir, "tracks.json", serde_json::to_string_pretty(&coll.tracks).unwrap().as_bytes());
    let truth = serde_json::json!({ "a": coll.a, "gamma": coll.gamma });
    put(&coll_dir, "truth.json", serde_json::to_string_pretty(&truth).unwrap().as_bytes());

    let args = RenderArgs {
        plan: dir.join("plan.json"),
        assets: None,
        catalog: Some(dir.join("catalog.json")),
        out: dir.join("golden.png"),
        strength: None,
        dump_intermediates: None,
        report: None,
        style: StyleFlags {
            seed: 0,
            sigma: None,
            bins: None,
            band: None,
        },
    };
    let outcome = cmd_render(&args).expect("fixture plan renders");
    for m in outcome.messages {
        eprintln!("{m}");
    }
}
