//! Deterministic synthetic dataset on disk: images, proposals, embeddings,
//! ground truth and replayable counter audit records. Used for offline
//! end-to-end runs.

use std::fs;
use std::path::{Path, PathBuf};

use countseg_core::coco::{dataset_from_objects, AnyId, CocoImage, Segmentation};
use countseg_core::embeddings::EmbeddingStore;
use countseg_core::mask::BinaryMask;
use countseg_core::similarity::{render_prompt, DEFAULT_TEMPLATE};
use countseg_core::{Detection, Error};
use indexmap::IndexMap;
use serde_json::json;

use crate::counter::{audit_file_name, AuditRecord, Usage};
use crate::error::PipelineError;
use crate::manifest::{ImageEntry, Manifest};
use crate::prompt::{build_count_prompt, presets};

pub const SIZE: u32 = 64;
pub const CLASSES: [&str; 4] = ["airplane", "ship", "storage_tank", "vehicle"];
pub const N_IMAGES: usize = 5;
const DIM: usize = 8;

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
    pub audit_dir: PathBuf,
    pub classes: Vec<String>,
    /// Ground-truth objects in file order.
    pub objects: Vec<Detection>,
    /// Prompt the audit records were produced with.
    pub prompt: String,
}

/// Objects of class `j` in image `k`.
pub fn objects_per_image(k: usize, j: usize) -> usize {
    1 + (k + j) % 2
}

fn io(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io(path, e))
}

fn unit(i: usize) -> Vec<f32> {
    let mut v = vec![0.0; DIM];
    v[i] = 1.0;
    v
}

/// Writes the dataset under `root`:
/// `manifest.json`, `ground_truth.json`, `images/`, `proposals/`,
/// `embeddings/{text,<image>}/` and `audit/`.
pub fn write_golden(root: &Path) -> Result<SyntheticDataset, PipelineError> {
    let classes: Vec<String> = CLASSES.iter().map(|s| s.to_string()).collect();
    let prompt = build_count_prompt(&presets::custom_open_vocabulary(&classes));
    let mut images = Vec::new();
    let mut entries = Vec::new();
    let mut objects = Vec::new();
    let audit_dir = root.join("audit");

    for k in 0..N_IMAGES {
        let id = (k + 1) as i64;
        let image_id = id.to_string();
        let file = PathBuf::from(format!("images/{id}.png"));
        write(&root.join(&file), &format!("synthetic image {id}"))?;

        let mut proposals = Vec::new();
        let mut names = Vec::new();
        let mut vectors = Vec::new();
        let mut counts = IndexMap::new();
        let mut pid = 0u64;
        for (j, class) in CLASSES.iter().enumerate() {
            let n = objects_per_image(k, j);
            counts.insert(class.to_string(), n as u64);
            for slot in 0..n {
                let (x, y) = (2 + 10 * slot as u32 + k as u32, 2 + 14 * j as u32);
                let mask = BinaryMask::from_rect(SIZE, SIZE, x, y, x + 6 + j as u32, y + 6)?;
                objects.push(Detection::from_mask(image_id.clone(), *class, mask.clone())?);
                // Object crops point mostly at their class axis.
                let mut v = unit(j);
                v[j] = 0.9;
                v[4 + (slot + k) % 4] = 0.3 + 0.01 * pid as f32;
                proposals.push(json!({"id": pid, "segmentation": Segmentation::from_mask(&mask)}));
                names.push(format!("{image_id}#{pid}"));
                vectors.push(v);
                pid += 1;
            }
        }
        // Two background proposals that resemble no class.
        for b in 0..2u32 {
            let x = 40 + 10 * b;
            let mask = BinaryMask::from_rect(SIZE, SIZE, x, 50, x + 8, 60)?;
            let mut v = unit(4 + (b as usize + k) % 4);
            v[(b as usize + k) % 4] = 0.1;
            proposals.push(json!({"id": pid, "segmentation": Segmentation::from_mask(&mask),
                                  "bbox": mask.tight_bbox().expect("non-empty").to_xywh()}));
            names.push(format!("{image_id}#{pid}"));
            vectors.push(v);
            pid += 1;
        }
        counts.insert("harbor".to_string(), 0);

        let prop_file = PathBuf::from(format!("proposals/{id}.json"));
        write(&root.join(&prop_file), &serde_json::to_string_pretty(&proposals).expect("json"))?;
        let emb_dir = PathBuf::from(format!("embeddings/{id}"));
        EmbeddingStore::write(root.join(&emb_dir), &names, &vectors)?;

        let raw = format!("```json\n{}\n```", serde_json::to_string(&counts).expect("json"));
        let rec = AuditRecord {
            image_id: image_id.clone(),
            prompt: prompt.clone(),
            raw_response: raw,
            parsed: Some(counts),
            usage: Usage {
                prompt_tokens: Some(900 + k as u64),
                completion_tokens: Some(40),
            },
            latency_ms: 1000.0 + 10.0 * k as f64,
        };
        write(
            &audit_dir.join(audit_file_name(&image_id)),
            &serde_json::to_string_pretty(&rec).expect("json"),
        )?;

        images.push(CocoImage {
            id: AnyId::Int(id),
            file_name: Some(format!("{id}.png")),
            width: SIZE,
            height: SIZE,
        });
        entries.push(ImageEntry {
            id: AnyId::Int(id),
            file,
            proposals: prop_file,
            mask_embeddings: emb_dir,
            width: SIZE,
            height: SIZE,
        });
    }

    let mut text_names = Vec::new();
    let mut text_vecs = Vec::new();
    for (j, c) in CLASSES.iter().chain(["harbor"].iter()).enumerate() {
        text_names.push(render_prompt(c, DEFAULT_TEMPLATE)?);
        text_vecs.push(unit(j.min(DIM - 1)));
    }
    EmbeddingStore::write(root.join("embeddings/text"), &text_names, &text_vecs)?;

    let gt = dataset_from_objects(images, &classes, &objects)?;
    let gt_path = root.join("ground_truth.json");
    write(&gt_path, &serde_json::to_string_pretty(&gt).expect("json"))?;

    let manifest = Manifest {
        images: entries,
        category_embeddings: PathBuf::from("embeddings/text"),
        ground_truth: Some(PathBuf::from("ground_truth.json")),
    };
    let manifest_path = root.join("manifest.json");
    write(&manifest_path, &serde_json::to_string_pretty(&manifest).expect("json"))?;

    Ok(SyntheticDataset {
        root: root.to_path_buf(),
        manifest: manifest_path,
        ground_truth: gt_path,
        audit_dir,
        classes,
        objects,
        prompt,
    })
}
