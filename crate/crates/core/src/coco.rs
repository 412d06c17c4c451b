//! COCO-style JSON interchange: ground truth, result files and proposal files.
//!
//! Masks are read from uncompressed RLE, compressed RLE strings or polygons
//! and always written back as uncompressed RLE `{"size": [h, w], "counts": [...]}`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::mask::{decode_compressed_counts, rasterize_polygons, BinaryMask};
use crate::model::{Detection, MaskProposal};

/// Image ids appear as integers in some datasets and strings in others.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnyId {
    Int(i64),
    Str(String),
}

impl std::fmt::Display for AnyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnyId::Int(i) => write!(f, "{i}"),
            AnyId::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Runs(Vec<u32>),
    Compressed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Rle { size: [u32; 2], counts: RleCounts },
    Polygons(Vec<Vec<f64>>),
}

impl Segmentation {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Segmentation::Rle {
            size: [mask.height(), mask.width()],
            counts: RleCounts::Runs(mask.runs().to_vec()),
        }
    }

    /// `dims` is the `(width, height)` of the image, required for polygons.
    pub fn to_mask(&self, dims: Option<(u32, u32)>) -> Result<BinaryMask> {
        match self {
            Segmentation::Rle { size: [h, w], counts } => {
                if let Some((iw, ih)) = dims {
                    if (iw, ih) != (*w, *h) {
                        return Err(Error::Shape(format!(
                            "RLE size {w}x{h} does not match image {iw}x{ih}"
                        )));
                    }
                }
                let runs = match counts {
                    RleCounts::Runs(r) => r.clone(),
                    RleCounts::Compressed(s) => decode_compressed_counts(s)?,
                };
                BinaryMask::from_runs(*w, *h, runs)
            }
            Segmentation::Polygons(polys) => {
                let (w, h) = dims.ok_or_else(|| {
                    Error::Input("polygon segmentation needs the image width and height".into())
                })?;
                rasterize_polygons(polys, w, h)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: AnyId,
    #[serde(default)]
    pub file_name: Option<String>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default)]
    pub id: Option<AnyId>,
    pub image_id: AnyId,
    pub category_id: i64,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub segmentation: Option<Segmentation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// Ground truth resolved to names and decoded masks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub images: Vec<CocoImage>,
    /// Category names in file order.
    pub categories: Vec<String>,
    pub objects: Vec<Detection>,
}

impl GroundTruth {
    pub fn image_dims(&self) -> HashMap<String, (u32, u32)> {
        self.images
            .iter()
            .map(|i| (i.id.to_string(), (i.width, i.height)))
            .collect()
    }

    pub fn from_dataset(ds: CocoDataset) -> Result<Self> {
        let names: HashMap<i64, &str> = ds.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
        let dims: HashMap<String, (u32, u32)> = ds
            .images
            .iter()
            .map(|i| (i.id.to_string(), (i.width, i.height)))
            .collect();
        let mut objects = Vec::with_capacity(ds.annotations.len());
        for (k, a) in ds.annotations.iter().enumerate() {
            let image_id = a.image_id.to_string();
            let category = names
                .get(&a.category_id)
                .ok_or_else(|| Error::Input(format!("annotation {k}: unknown category_id {}", a.category_id)))?;
            let d = dims.get(&image_id).copied();
            if d.is_none() {
                return Err(Error::Input(format!("annotation {k}: unknown image_id {image_id}")));
            }
            let mask = a.segmentation.as_ref().map(|s| s.to_mask(d)).transpose()?;
            let bbox = BoundingBox::from_xywh(a.bbox)?;
            objects.push(Detection::new(image_id, *category, bbox, mask, None)?);
        }
        Ok(GroundTruth {
            images: ds.images,
            categories: ds.categories.into_iter().map(|c| c.name).collect(),
            objects,
        })
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    GroundTruth::from_dataset(read_json(path)?).map_err(|e| match e {
        Error::Input(m) | Error::InvalidBox(m) | Error::InvalidMask(m) | Error::Shape(m) => {
            Error::format(path, m)
        }
        other => other,
    })
}

/// One entry of a results file. Categories are referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub image_id: AnyId,
    pub category: String,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl ResultEntry {
    pub fn from_detection(d: &Detection) -> Self {
        ResultEntry {
            image_id: AnyId::Str(d.image_id.clone()),
            category: d.category.clone(),
            bbox: d.bbox.to_xywh(),
            segmentation: d.mask.as_ref().map(Segmentation::from_mask),
            score: d.score,
        }
    }

    pub fn to_detection(&self, dims: Option<(u32, u32)>) -> Result<Detection> {
        let mask = self.segmentation.as_ref().map(|s| s.to_mask(dims)).transpose()?;
        Detection::new(
            self.image_id.to_string(),
            self.category.clone(),
            BoundingBox::from_xywh(self.bbox)?,
            mask,
            self.score,
        )
    }
}

/// Parses a results array. `dims` supplies image sizes for polygon masks.
pub fn parse_results(text: &str, dims: &HashMap<String, (u32, u32)>) -> Result<Vec<Detection>, String> {
    let entries: Vec<ResultEntry> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            e.to_detection(dims.get(&e.image_id.to_string()).copied())
                .map_err(|err| format!("entry {k}: {err}"))
        })
        .collect()
}

pub fn read_results(path: impl AsRef<Path>, dims: &HashMap<String, (u32, u32)>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text, dims).map_err(|m| Error::format(path, m))
}

/// Serializes detections as a pretty-printed results array with a trailing
/// newline. Output depends only on the input order and values.
pub fn results_to_string(dets: &[Detection]) -> String {
    let entries: Vec<ResultEntry> = dets.iter().map(ResultEntry::from_detection).collect();
    let mut s = serde_json::to_string_pretty(&entries).expect("results serialize");
    s.push('\n');
    s
}

pub fn write_results(path: impl AsRef<Path>, dets: &[Detection]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, results_to_string(dets)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Deserialize)]
struct ProposalEntry {
    #[serde(default)]
    id: Option<u64>,
    segmentation: Segmentation,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProposalFile {
    List(Vec<ProposalEntry>),
    Wrapped { annotations: Vec<ProposalEntry> },
}

/// Parses a proposal file: either a bare array or an object with an
/// `annotations` array. Entries without an `id` take their position.
pub fn parse_proposals(text: &str, image_id: &str, width: u32, height: u32) -> Result<Vec<MaskProposal>, String> {
    let file: ProposalFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let entries = match file {
        ProposalFile::List(v) | ProposalFile::Wrapped { annotations: v } => v,
    };
    let mut out = Vec::with_capacity(entries.len());
    let mut seen = std::collections::HashSet::new();
    for (k, e) in entries.into_iter().enumerate() {
        let id = e.id.unwrap_or(k as u64);
        if !seen.insert(id) {
            return Err(format!("duplicate proposal id {id}"));
        }
        let build = || -> Result<MaskProposal> {
            let mask = e.segmentation.to_mask(Some((width, height)))?;
            let declared = e.bbox.map(BoundingBox::from_xywh).transpose()?;
            MaskProposal::new(id, image_id, mask, declared)
        };
        out.push(build().map_err(|err| format!("proposal {id}: {err}"))?);
    }
    Ok(out)
}

pub fn read_proposals(path: impl AsRef<Path>, image_id: &str, width: u32, height: u32) -> Result<Vec<MaskProposal>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_proposals(&text, image_id, width, height).map_err(|m| Error::format(path, m))
}

/// Builds a dataset document from named objects; category ids follow the
/// order of `categories` starting at 1.
pub fn dataset_from_objects(images: Vec<CocoImage>, categories: &[String], objects: &[Detection]) -> Result<CocoDataset> {
    let ids: HashMap<&str, i64> = categories
        .iter()
        .enumerate()
        .map(|(k, c)| (c.as_str(), k as i64 + 1))
        .collect();
    let annotations = objects
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let category_id = *ids
                .get(o.category.as_str())
                .ok_or_else(|| Error::Input(format!("object {k}: category {} not listed", o.category)))?;
            Ok(CocoAnnotation {
                id: Some(AnyId::Int(k as i64 + 1)),
                image_id: AnyId::Str(o.image_id.clone()),
                category_id,
                bbox: o.bbox.to_xywh(),
                segmentation: o.mask.as_ref().map(Segmentation::from_mask),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CocoDataset {
        images,
        annotations,
        categories: categories
            .iter()
            .enumerate()
            .map(|(k, c)| CocoCategory {
                id: k as i64 + 1,
                name: c.clone(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_accepts_all_segmentation_forms() {
        let text = r#"{
            "images": [{"id": 7, "width": 12, "height": 12}, {"id": "b", "width": 5, "height": 7}],
            "categories": [{"id": 1, "name": "ship"}, {"id": 2, "name": "harbor"}],
            "annotations": [
                {"image_id": 7, "category_id": 1, "bbox": [2, 2, 6, 6],
                 "segmentation": [[2, 2, 8, 2, 8, 8, 2, 8]]},
                {"image_id": "b", "category_id": 2, "bbox": [0, 0, 5, 7],
                 "segmentation": {"size": [7, 5], "counts": "01:2H000004"}},
                {"image_id": 7, "category_id": 2, "bbox": [0, 0, 1, 1],
                 "segmentation": {"size": [12, 12], "counts": [0, 1, 143]}}
            ]
        }"#;
        let ds: CocoDataset = serde_json::from_str(text).unwrap();
        let gt = GroundTruth::from_dataset(ds).unwrap();
        assert_eq!(gt.categories, ["ship", "harbor"]);
        assert_eq!(gt.objects[0].image_id, "7");
        assert_eq!(gt.objects[0].mask.as_ref().unwrap().area(), 36);
        assert_eq!(gt.objects[1].category, "harbor");
        assert_eq!(gt.objects[1].mask.as_ref().unwrap().width(), 5);
        assert_eq!(gt.objects[2].mask.as_ref().unwrap().area(), 1);
    }

    #[test]
    fn rle_size_must_match_image() {
        let seg = Segmentation::Rle {
            size: [4, 4],
            counts: RleCounts::Runs(vec![16]),
        };
        assert!(seg.to_mask(Some((4, 5))).is_err());
        assert!(seg.to_mask(Some((4, 4))).is_ok());
    }

    #[test]
    fn results_round_trip() {
        let mask = BinaryMask::from_rect(10, 8, 1, 2, 4, 6).unwrap();
        let d = Detection::from_mask("3", "car", mask).unwrap();
        let text = results_to_string(std::slice::from_ref(&d));
        assert!(text.contains("\"size\""));
        let back = parse_results(&text, &HashMap::new()).unwrap();
        assert_eq!(back, vec![d]);
    }

    #[test]
    fn proposals_in_both_layouts() {
        let bare = r#"[{"segmentation": {"size": [4, 4], "counts": [5, 2, 9]}}]"#;
        let wrapped = r#"{"annotations": [{"id": 9, "bbox": [1, 1, 1, 2],
            "segmentation": {"size": [4, 4], "counts": [5, 2, 9]}}]}"#;
        let a = parse_proposals(bare, "img", 4, 4).unwrap();
        let b = parse_proposals(wrapped, "img", 4, 4).unwrap();
        assert_eq!(a[0].id, 0);
        assert_eq!(b[0].id, 9);
        assert_eq!(a[0].bbox, b[0].bbox);
        assert!(parse_proposals(bare, "img", 5, 4).is_err());
    }
}
