use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, Image, ImagingError};
use crate::semantics::{parse_landmarks, LandmarkSet, RegionMask, SemanticRegion, SemanticsError};

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("unresolvable asset: {0}")]
    NotFound(String),
    #[error("UnknownCatalogEntry: {0}")]
    UnknownCatalogEntry(String),
    #[error("CatalogError: {0}")]
    Catalog(String),
    #[error("{reference}: {source}")]
    Imaging {
        reference: String,
        #[source]
        source: ImagingError,
    },
    #[error("{reference}: {source}")]
    Landmarks {
        reference: String,
        #[source]
        source: SemanticsError,
    },
}

/// Loads the images, landmark files and masks a plan refers to.
pub trait AssetResolver: Sync {
    fn load_image(&self, reference: &str) -> Result<Image, AssetError>;
    fn load_landmarks(&self, reference: &str) -> Result<LandmarkSet, AssetError>;
    fn load_mask(&self, reference: &str) -> Result<RegionMask, AssetError>;

    /// Catalog lookup for `catalog:<id>` references.
    fn catalog_entry(&self, _id: &str) -> Option<CatalogEntry> {
        None
    }
}

/// Example image stored with its semantic annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub id: String,
    pub image: String,
    pub landmarks: String,
    /// Precomputed region masks, e.g. for hair.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub masks: BTreeMap<SemanticRegion, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
}

/// Catalog file contents; paths are relative to `base_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    pub base_dir: PathBuf,
    pub entries: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn from_json(json: &str, base_dir: impl Into<PathBuf>) -> Result<Self, AssetError> {
        let entries: Vec<CatalogEntry> = serde_json::from_str(json).map_err(|e| AssetError::Catalog(e.to_string()))?;
        let mut ids = HashSet::new();
        for e in &entries {
            if !ids.insert(e.id.as_str()) {
                return Err(AssetError::Catalog(format!("duplicate identifier {}", e.id)));
            }
        }
        Ok(Self {
            base_dir: base_dir.into(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AssetError> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| AssetError::Catalog(format!("{}: {e}", path.display())))?;
        Self::from_json(&json, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn get(&self, id: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entry with every path joined onto `base_dir`.
    pub fn resolved(&self, id: &str) -> Option<CatalogEntry> {
        let join = |p: &str| self.base_dir.join(p).to_string_lossy().into_owned();
        self.get(id).map(|e| CatalogEntry {
            id: e.id.clone(),
            image: join(&e.image),
            landmarks: join(&e.landmarks),
            masks: e.masks.iter().map(|(r, p)| (*r, join(p))).collect(),
            display_name: e.display_name.clone(),
        })
    }

    /// Loads every referenced file; returns one message per problem.
    pub fn check_files(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for e in &self.entries {
            let r = self.resolved(&e.id).expect("entry exists");
            let image = match imaging::load_rgb(&r.image) {
                Ok(img) => Some(img),
                Err(err) => {
                    problems.push(format!("{}: image: {err}", e.id));
                    None
                }
            };
            match std::fs::read_to_string(&r.landmarks).map_err(|err| err.to_string()).and_then(|s| parse_landmarks(&s).map_err(|err| err.to_string())) {
                Ok(lm) => {
                    if let Some(img) = &image {
                        if (lm.width(), lm.height()) != img.dims() {
                            problems.push(format!("{}: landmark size {}×{} differs from image", e.id, lm.width(), lm.height()));
                        }
                    }
                }
                Err(err) => problems.push(format!("{}: landmarks: {err}", e.id)),
            }
            for (region, path) in &r.masks {
                if let Err(err) = imaging::load_gray(path) {
                    problems.push(format!("{}: {region} mask: {err}", e.id));
                }
            }
        }
        problems
    }
}

/// Resolves references as paths under a root directory, with an optional catalog.
#[derive(Debug, Clone)]
pub struct DirResolver {
    root: PathBuf,
    catalog: Option<Catalog>,
}

impl DirResolver {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            catalog: None,
        }
    }

    pub fn with_catalog(mut self, catalog: Catalog) -> Self {
        self.catalog = Some(catalog);
        self
    }

    pub fn catalog(&self) -> Option<&Catalog> {
        self.catalog.as_ref()
    }

    pub fn path(&self, reference: &str) -> PathBuf {
        self.root.join(reference)
    }

    fn read(&self, reference: &str) -> Result<Vec<u8>, AssetError> {
        std::fs::read(self.path(reference)).map_err(|_| AssetError::NotFound(reference.to_string()))
    }
}

impl AssetResolver for DirResolver {
    fn load_image(&self, reference: &str) -> Result<Image, AssetError> {
        imaging::decode_rgb(&self.read(reference)?).map_err(|source| AssetError::Imaging {
            reference: reference.to_string(),
            source,
        })
    }

    fn load_landmarks(&self, reference: &str) -> Result<LandmarkSet, AssetError> {
        let bytes = self.read(reference)?;
        parse_landmarks(&String::from_utf8_lossy(&bytes)).map_err(|source| AssetError::Landmarks {
            reference: reference.to_string(),
            source,
        })
    }

    fn load_mask(&self, reference: &str) -> Result<RegionMask, AssetError> {
        RegionMask::decode_png(&self.read(reference)?).map_err(|source| AssetError::Imaging {
            reference: reference.to_string(),
            source,
        })
    }

    fn catalog_entry(&self, id: &str) -> Option<CatalogEntry> {
        self.catalog.as_ref().and_then(|c| c.resolved(id))
    }
}

/// Assets held in memory under arbitrary reference names.
#[derive(Debug, Clone, Default)]
pub struct MemoryAssets {
    pub images: HashMap<String, Image>,
    pub landmarks: HashMap<String, LandmarkSet>,
    pub masks: HashMap<String, RegionMask>,
    pub catalog: HashMap<String, CatalogEntry>,
}

impl MemoryAssets {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AssetResolver for MemoryAssets {
    fn load_image(&self, reference: &str) -> Result<Image, AssetError> {
        self.images.get(reference).cloned().ok_or_else(|| AssetError::NotFound(reference.to_string()))
    }

    fn load_landmarks(&self, reference: &str) -> Result<LandmarkSet, AssetError> {
        self.landmarks.get(reference).cloned().ok_or_else(|| AssetError::NotFound(reference.to_string()))
    }

    fn load_mask(&self, reference: &str) -> Result<RegionMask, AssetError> {
        self.masks.get(reference).cloned().ok_or_else(|| AssetError::NotFound(reference.to_string()))
    }

    fn catalog_entry(&self, id: &str) -> Option<CatalogEntry> {
        self.catalog.get(id).cloned()
    }
}
