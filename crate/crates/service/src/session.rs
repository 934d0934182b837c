//! Session state and the asset view a session renders against.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use makeup_core::compositor::{AssetError, AssetResolver, CatalogEntry, DirResolver, MakeupPlan, MatteCache, PlanValidation};
use makeup_core::imaging::{self, Image};
use makeup_core::semantics::{parse_landmarks, LandmarkSet, RegionMask};

/// Plan reference standing for the uploaded subject image.
pub const SUBJECT_REF: &str = "session:subject";
/// Plan reference standing for the uploaded subject landmarks.
pub const LANDMARKS_REF: &str = "session:landmarks";

pub(crate) fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Outcome of the most recent render.
#[derive(Debug, Clone)]
pub enum RenderOutcome {
    Done { png: Vec<u8>, report: serde_json::Value },
    Failed { status: u16, error: String },
}

#[derive(Debug)]
pub struct SessionState {
    pub subject: Image,
    pub subject_bytes: Vec<u8>,
    pub landmarks: LandmarkSet,
    pub plan: MakeupPlan,
    pub validation: PlanValidation,
    pub outcome: Option<RenderOutcome>,
    pub created: u64,
    pub updated: u64,
}

/// One interactive session. State mutations go through the mutex; the
/// matte cache lives beside it so renders never hold the lock.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub state: Mutex<SessionState>,
    pub cache: MatteCache,
    rendering: AtomicBool,
}

/// Holds a session's render slot; dropping it frees the slot, even on panic.
pub struct RenderGuard(Arc<Session>);

impl RenderGuard {
    pub fn session(&self) -> &Arc<Session> {
        &self.0
    }
}

impl Drop for RenderGuard {
    fn drop(&mut self) {
        self.0.rendering.store(false, Ordering::Release);
    }
}

impl Session {
    pub fn new(id: String, subject_bytes: Vec<u8>, subject: Image, landmarks: LandmarkSet) -> Self {
        let plan = empty_plan();
        let validation = plan.validate(None);
        let t = now_secs();
        Self {
            id,
            state: Mutex::new(SessionState {
                subject,
                subject_bytes,
                landmarks,
                plan,
                validation,
                outcome: None,
                created: t,
                updated: t,
            }),
            cache: MatteCache::new(),
            rendering: AtomicBool::new(false),
        }
    }

    pub fn is_rendering(&self) -> bool {
        self.rendering.load(Ordering::Acquire)
    }

    /// Claims the render slot; `None` when a render is already running.
    pub fn begin_render(self: &Arc<Self>) -> Option<RenderGuard> {
        self.rendering
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| RenderGuard(self.clone()))
    }

    pub fn lock(&self) -> std::sync::MutexGuard<'_, SessionState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Writes the session under `dir/<id>/`.
    pub fn persist(&self, dir: &Path) -> std::io::Result<()> {
        let root = dir.join(&self.id);
        std::fs::create_dir_all(&root)?;
        let st = self.lock();
        std::fs::write(root.join("subject"), &st.subject_bytes)?;
        std::fs::write(root.join("landmarks.json"), st.landmarks.to_json())?;
        std::fs::write(root.join("plan.json"), st.plan.to_json())?;
        if let Some(RenderOutcome::Done { png, report }) = &st.outcome {
            std::fs::write(root.join("result.png"), png)?;
            std::fs::write(root.join("report.json"), serde_json::to_string_pretty(report).unwrap_or_default())?;
        }
        Ok(())
    }

    /// Reads a session written by [`Session::persist`].
    pub fn restore(root: &Path) -> Option<Self> {
        let id = root.file_name()?.to_str()?.to_string();
        let bytes = std::fs::read(root.join("subject")).ok()?;
        let subject = imaging::decode_rgb(&bytes).ok()?;
        let landmarks = parse_landmarks(&std::fs::read_to_string(root.join("landmarks.json")).ok()?).ok()?;
        let session = Session::new(id, bytes, subject, landmarks);
        if let Some(plan) = std::fs::read_to_string(root.join("plan.json")).ok().and_then(|s| MakeupPlan::from_json(&s).ok()) {
            let mut st = session.lock();
            st.validation = plan.validate(None);
            st.plan = plan;
        }
        if let (Ok(png), Ok(report)) = (std::fs::read(root.join("result.png")), std::fs::read_to_string(root.join("report.json"))) {
            if let Ok(report) = serde_json::from_str(&report) {
                session.lock().outcome = Some(RenderOutcome::Done { png, report });
            }
        }
        Some(session)
    }
}

pub fn empty_plan() -> MakeupPlan {
    MakeupPlan::new(SUBJECT_REF, LANDMARKS_REF)
}

/// Uploaded subject in front of the shared asset directory.
pub struct SessionAssets<'a> {
    pub subject: &'a Image,
    pub landmarks: &'a LandmarkSet,
    pub dir: &'a DirResolver,
}

impl AssetResolver for SessionAssets<'_> {
    fn load_image(&self, reference: &str) -> Result<Image, AssetError> {
        if reference == SUBJECT_REF {
            return Ok(self.subject.clone());
        }
        self.dir.load_image(reference)
    }

    fn load_landmarks(&self, reference: &str) -> Result<LandmarkSet, AssetError> {
        if reference == LANDMARKS_REF {
            return Ok(self.landmarks.clone());
        }
        self.dir.load_landmarks(reference)
    }

    fn load_mask(&self, reference: &str) -> Result<RegionMask, AssetError> {
        self.dir.load_mask(reference)
    }

    fn catalog_entry(&self, id: &str) -> Option<CatalogEntry> {
        self.dir.catalog_entry(id)
    }
}

/// Session directories below `dir`.
pub fn persisted_sessions(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    out.sort();
    out
}
