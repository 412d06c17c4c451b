//! Dataset manifest: which images to process and where their inputs live.

use std::fs;
use std::path::{Path, PathBuf};

use countseg_core::coco::AnyId;
use countseg_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: AnyId,
    /// Image file sent to the counter.
    pub file: PathBuf,
    /// Proposal file (COCO-style JSON).
    pub proposals: PathBuf,
    /// Embedding directory holding this image's mask-crop embeddings.
    pub mask_embeddings: PathBuf,
    pub width: u32,
    pub height: u32,
}

impl ImageEntry {
    pub fn image_id(&self) -> String {
        self.id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ImageEntry>,
    /// Embedding directory of category prompt texts.
    pub category_embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

impl Manifest {
    /// Reads a manifest; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve(base);
        m.validate().map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(m)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for img in &mut self.images {
            fix(&mut img.file);
            fix(&mut img.proposals);
            fix(&mut img.mask_embeddings);
        }
        fix(&mut self.category_embeddings);
        if let Some(g) = &mut self.ground_truth {
            fix(g);
        }
    }

    fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for img in &self.images {
            let id = img.image_id();
            if !seen.insert(id.clone()) {
                return Err(format!("image id {id} listed twice"));
            }
            if img.width == 0 || img.height == 0 {
                return Err(format!("image {id} has zero size"));
            }
        }
        Ok(())
    }
}
