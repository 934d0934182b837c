//! Plan-driven rendering: per-region mattes and transfers, alpha-blended
//! onto the subject in a fixed layering order.

mod assets;
mod cache;
mod plan;

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use assets::{AssetError, AssetResolver, Catalog, CatalogEntry, DirResolver, MemoryAssets};
pub use cache::{image_digest, matte_key, CacheStats, CachedMatte, ContentHash, MatteCache};
pub use plan::{Assignment, MakeupPlan, PlanValidation, RegionCheck, CATALOG_PREFIX};

use crate::imaging::{Image, ImagingError};
use crate::matting::{self, AlphaMatte, MatteParams, MattingError, Trimap, TrimapLabel};
use crate::numeric::NumericError;
use crate::semantics::{region_mask, LandmarkSet, RegionMask, SemanticRegion};
use crate::transfer::{self, GamutFit, TransferConfig, TransferError};

#[derive(Debug, Error)]
pub enum CompositorError {
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("strength {0} outside [0, 1]")]
    InvalidStrength(f64),
    #[error("InvalidPlan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// `(s·α)·styled + (1 − s·α)·base` per pixel and channel.
pub fn alpha_blend(base: &Image, styled: &Image, matte: &AlphaMatte, strength: f64) -> Result<Image, CompositorError> {
    if base.dims() != styled.dims() || base.channels() != styled.channels() || base.dims() != (matte.width(), matte.height()) {
        return Err(CompositorError::DimensionMismatch(format!(
            "base {:?}×{}, styled {:?}×{}, matte {:?}",
            base.dims(),
            base.channels(),
            styled.dims(),
            styled.channels(),
            (matte.width(), matte.height())
        )));
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(CompositorError::InvalidStrength(strength));
    }
    let c = base.channels();
    let mut out = base.clone();
    for (i, &a) in matte.values().iter().enumerate() {
        let w = strength * a;
        if w == 0.0 {
            continue;
        }
        for k in i * c..(i + 1) * c {
            out.data_mut()[k] = w * styled.data()[k] + (1.0 - w) * base.data()[k];
        }
    }
    Ok(out)
}

/// Settings shared by every region of a render.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub transfer: TransferConfig,
    /// Trimap band; `None` scales 4 px at 512 px to the subject size.
    pub band: Option<usize>,
    pub matte: MatteParams,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            transfer: TransferConfig::default(),
            band: None,
            matte: MatteParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WarningKind {
    NotConverged,
    Failed,
}

/// A region that was skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionWarning {
    pub region: SemanticRegion,
    pub kind: WarningKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RegionTiming {
    pub region: Option<SemanticRegion>,
    pub load_ms: f64,
    pub semantics_ms: f64,
    pub matting_ms: f64,
    pub transfer_ms: f64,
    pub matte_cached: bool,
}

/// Stage times in milliseconds. Region stages run in parallel, so stage
/// totals are sums over regions and may exceed `total_ms`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RenderTimings {
    pub load_ms: f64,
    pub semantics_ms: f64,
    pub matting_ms: f64,
    pub transfer_ms: f64,
    pub blend_ms: f64,
    pub total_ms: f64,
    pub regions: Vec<RegionTiming>,
}

/// Audit trail of one rendered region.
#[derive(Debug, Clone)]
pub struct RegionArtifacts {
    pub region: SemanticRegion,
    pub strength: f64,
    pub band: usize,
    pub mask: RegionMask,
    pub trimap: Trimap,
    pub matte: AlphaMatte,
    pub styled: Image,
    pub fit: Option<GamutFit>,
    pub matte_cached: bool,
}

#[derive(Debug, Clone)]
pub struct RenderResult {
    pub image: Image,
    /// Rendered regions in compositing order.
    pub regions: Vec<RegionArtifacts>,
    pub warnings: Vec<RegionWarning>,
    pub timings: RenderTimings,
    pub cache: CacheStats,
}

/// JSON-friendly summary of a render.
#[derive(Debug, Clone, Serialize)]
pub struct RenderReport {
    pub width: usize,
    pub height: usize,
    pub timings: RenderTimings,
    pub cache: CacheStats,
    pub warnings: Vec<RegionWarning>,
    pub regions: Vec<RegionSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionSummary {
    pub region: SemanticRegion,
    pub strength: f64,
    pub band: usize,
    pub matte_cached: bool,
    pub fit: Option<GamutFit>,
}

impl RenderResult {
    pub fn report(&self) -> RenderReport {
        RenderReport {
            width: self.image.width(),
            height: self.image.height(),
            timings: self.timings.clone(),
            cache: self.cache,
            warnings: self.warnings.clone(),
            regions: self
                .regions
                .iter()
                .map(|r| RegionSummary {
                    region: r.region,
                    strength: r.strength,
                    band: r.band,
                    matte_cached: r.matte_cached,
                    fit: r.fit,
                })
                .collect(),
        }
    }
}

/// Trimap and matte for `mask`, halving the band while erosion empties it.
///
/// The solve runs on the trimap's non-background bounding box grown by two
/// pixels, which holds every window that touches an unknown pixel.
pub fn matte_region(
    img: &Image,
    mask: &RegionMask,
    band: usize,
    params: &MatteParams,
) -> Result<CachedMatte, MattingError> {
    let mut band = band.max(1);
    let trimap = loop {
        match matting::make_trimap(mask, band) {
            Ok(t) => break t,
            Err(MattingError::EmptyForeground { .. }) if band > 1 => band /= 2,
            Err(e) => return Err(e),
        }
    };
    let (w, h) = img.dims();
    let fg_or_unknown = RegionMask::from_bits(
        w,
        h,
        trimap.labels().iter().map(|&l| l != TrimapLabel::Background).collect(),
    );
    let rect = fg_or_unknown.bbox().expect("trimap has foreground").expand(2, w, h);
    let sub_img = img.crop(rect.x0, rect.y0, rect.width(), rect.height());
    let mut labels = Vec::with_capacity(rect.width() * rect.height());
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            labels.push(trimap.get(x, y));
        }
    }
    let sub_trimap = Trimap::from_labels(rect.width(), rect.height(), labels);
    let sub = matting::solve_matte_with(&sub_img, &sub_trimap, params)?;
    let mut matte = AlphaMatte::new(w, h);
    for y in 0..rect.height() {
        for x in 0..rect.width() {
            matte.set(rect.x0 + x, rect.y0 + y, sub.get(x, y));
        }
    }
    Ok(CachedMatte { band, trimap, matte })
}

struct Job<'a> {
    subject: &'a Image,
    digest: ContentHash,
    landmarks: Option<&'a LandmarkSet>,
    plan: &'a MakeupPlan,
    assets: &'a dyn AssetResolver,
    opts: &'a RenderOptions,
    cache: Option<&'a MatteCache>,
}

enum RegionFailure {
    NotConverged(String),
    Failed(String),
}

impl From<MattingError> for RegionFailure {
    fn from(e: MattingError) -> Self {
        match e {
            MattingError::Numeric(NumericError::NotConverged { .. }) => RegionFailure::NotConverged(e.to_string()),
            _ => RegionFailure::Failed(e.to_string()),
        }
    }
}

impl From<TransferError> for RegionFailure {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::Numeric(NumericError::NotConverged { .. }) => RegionFailure::NotConverged(e.to_string()),
            _ => RegionFailure::Failed(e.to_string()),
        }
    }
}

impl From<AssetError> for RegionFailure {
    fn from(e: AssetError) -> Self {
        RegionFailure::Failed(e.to_string())
    }
}

impl Job<'_> {
    fn subject_mask(&self, region: SemanticRegion) -> Result<RegionMask, RegionFailure> {
        let mask = match (region.contour_group(), self.landmarks) {
            (Some(_), Some(lm)) => region_mask(lm, region).map_err(|e| RegionFailure::Failed(e.to_string()))?,
            (Some(_), None) => return Err(RegionFailure::Failed("subject landmarks missing".into())),
            (None, _) => {
                let r = self
                    .plan
                    .subject_masks
                    .get(&region)
                    .ok_or_else(|| RegionFailure::Failed("no subject mask supplied".into()))?;
                self.assets.load_mask(r)?
            }
        };
        if (mask.width(), mask.height()) != self.subject.dims() {
            return Err(RegionFailure::Failed("subject mask size differs from subject".into()));
        }
        if mask.is_empty() {
            return Err(RegionFailure::Failed("subject mask is empty".into()));
        }
        Ok(mask)
    }

    fn example(&self, a: &Assignment) -> Result<(Image, RegionMask), RegionFailure> {
        let (image_ref, lm_ref, mask_ref) = match a.catalog_id() {
            Some(id) => {
                let e = self
                    .assets
                    .catalog_entry(id)
                    .ok_or_else(|| AssetError::UnknownCatalogEntry(id.to_string()))?;
                let mask = a.example_mask.clone().or_else(|| e.masks.get(&a.region).cloned());
                (e.image, a.example_landmarks.clone().or(Some(e.landmarks)), mask)
            }
            None => (a.example.clone(), a.example_landmarks.clone(), a.example_mask.clone()),
        };
        let image = self.assets.load_image(&image_ref)?;
        let mask = match (mask_ref, lm_ref) {
            (Some(m), _) => self.assets.load_mask(&m)?,
            (None, Some(l)) => {
                let lm = self.assets.load_landmarks(&l)?;
                region_mask(&lm, a.region).map_err(|e| RegionFailure::Failed(format!("example: {e}")))?
            }
            (None, None) => return Err(RegionFailure::Failed("example needs a region mask or landmarks".into())),
        };
        if (mask.width(), mask.height()) != image.dims() {
            return Err(RegionFailure::Failed("example mask size differs from example image".into()));
        }
        Ok((image, mask))
    }

    fn run(&self, a: &Assignment) -> Result<(RegionArtifacts, RegionTiming), RegionFailure> {
        let mut timing = RegionTiming {
            region: Some(a.region),
            ..Default::default()
        };
        let t = Instant::now();
        let mask = self.subject_mask(a.region)?;
        timing.semantics_ms = ms(t);

        let t = Instant::now();
        let (w, h) = self.subject.dims();
        let band = self.opts.band.unwrap_or_else(|| matting::default_band(w, h));
        let key = matte_key(&self.digest, &mask, band, &self.opts.matte);
        let cached = self.cache.and_then(|c| c.lookup(&key));
        let matte_cached = cached.is_some();
        let m = match cached {
            Some(m) => (*m).clone(),
            None => {
                let m = matte_region(self.subject, &mask, band, &self.opts.matte)?;
                if let Some(c) = self.cache {
                    c.insert(key, m.clone());
                }
                m
            }
        };
        timing.matting_ms = ms(t);
        timing.matte_cached = matte_cached;

        let t = Instant::now();
        let (example, ex_mask) = self.example(a)?;
        timing.load_ms = ms(t);

        let t = Instant::now();
        let cfg = self.opts.transfer.with_overrides(&a.overrides);
        let out = transfer::transfer_region(self.subject, &example, &m.matte, &ex_mask, &cfg)?;
        timing.transfer_ms = ms(t);

        Ok((
            RegionArtifacts {
                region: a.region,
                strength: a.strength,
                band: m.band,
                mask,
                trimap: m.trimap,
                matte: m.matte,
                styled: out.styled,
                fit: out.fit,
                matte_cached,
            },
            timing,
        ))
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Whether each assignment's subject matte is already in `cache`, without
/// touching the hit and miss counters. Regions whose mask cannot be built
/// report `false`.
pub fn cached_regions(
    plan: &MakeupPlan,
    assets: &dyn AssetResolver,
    opts: &RenderOptions,
    cache: &MatteCache,
) -> Result<Vec<(SemanticRegion, bool)>, CompositorError> {
    let subject = assets.load_image(&plan.subject)?;
    let landmarks = plan.subject_landmarks.as_deref().map(|r| assets.load_landmarks(r)).transpose()?;
    let job = Job {
        subject: &subject,
        digest: image_digest(&subject),
        landmarks: landmarks.as_ref(),
        plan,
        assets,
        opts,
        cache: Some(cache),
    };
    let (w, h) = subject.dims();
    let band = opts.band.unwrap_or_else(|| matting::default_band(w, h));
    Ok(plan
        .ordered()
        .iter()
        .map(|a| {
            let hit = job
                .subject_mask(a.region)
                .map(|mask| cache.contains(&matte_key(&job.digest, &mask, band, &opts.matte)))
                .unwrap_or(false);
            (a.region, hit)
        })
        .collect())
}

/// Renders a plan without a matte cache.
pub fn apply_plan(plan: &MakeupPlan, assets: &dyn AssetResolver, opts: &RenderOptions) -> Result<RenderResult, CompositorError> {
    apply_plan_cached(plan, assets, opts, None)
}

/// Renders a plan.
///
/// Every region is matted and transferred against the original subject;
/// the styled layers are then blended in compositing order. A region that
/// fails is skipped and reported in `warnings`.
pub fn apply_plan_cached(
    plan: &MakeupPlan,
    assets: &dyn AssetResolver,
    opts: &RenderOptions,
    cache: Option<&MatteCache>,
) -> Result<RenderResult, CompositorError> {
    let start = Instant::now();
    let known = |id: &str| assets.catalog_entry(id).is_some();
    let validation = plan.validate(Some(&known));
    if !validation.valid {
        return Err(CompositorError::InvalidPlan(validation.messages()));
    }
    let t = Instant::now();
    let subject = assets.load_image(&plan.subject)?;
    let landmarks = match &plan.subject_landmarks {
        Some(r) => {
            let lm = assets.load_landmarks(r)?;
            if (lm.width(), lm.height()) != subject.dims() {
                return Err(CompositorError::DimensionMismatch(format!(
                    "landmarks {}×{} vs subject {:?}",
                    lm.width(),
                    lm.height(),
                    subject.dims()
                )));
            }
            Some(lm)
        }
        None => None,
    };
    let load_ms = ms(t);
    let stats_before = cache.map(|c| c.stats()).unwrap_or_default();

    let job = Job {
        subject: &subject,
        digest: image_digest(&subject),
        landmarks: landmarks.as_ref(),
        plan,
        assets,
        opts,
        cache,
    };
    let ordered = plan.ordered();
    let outcomes: Vec<_> = ordered.par_iter().map(|a| job.run(a)).collect();

    let mut timings = RenderTimings {
        load_ms,
        ..Default::default()
    };
    let mut regions = Vec::new();
    let mut warnings = Vec::new();
    for (a, outcome) in ordered.iter().zip(outcomes) {
        match outcome {
            Ok((art, rt)) => {
                timings.load_ms += rt.load_ms;
                timings.semantics_ms += rt.semantics_ms;
                timings.matting_ms += rt.matting_ms;
                timings.transfer_ms += rt.transfer_ms;
                timings.regions.push(rt);
                regions.push(art);
            }
            Err(f) => {
                let (kind, message) = match f {
                    RegionFailure::NotConverged(m) => (WarningKind::NotConverged, m),
                    RegionFailure::Failed(m) => (WarningKind::Failed, m),
                };
                warnings.push(RegionWarning {
                    region: a.region,
                    kind,
                    message,
                });
            }
        }
    }

    let t = Instant::now();
    let mut image = subject;
    for r in &regions {
        image = alpha_blend(&image, &r.styled, &r.matte, r.strength)?;
    }
    timings.blend_ms = ms(t);
    timings.total_ms = ms(start);
    let stats_after = cache.map(|c| c.stats()).unwrap_or_default();
    Ok(RenderResult {
        image,
        regions,
        warnings,
        timings,
        cache: CacheStats {
            hits: stats_after.hits - stats_before.hits,
            misses: stats_after.misses - stats_before.misses,
        },
    })
}
