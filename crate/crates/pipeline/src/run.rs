//! Per-image and per-dataset orchestration.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use countseg_core::coco::read_proposals;
use countseg_core::embeddings::EmbeddingStore;
use countseg_core::matcher::{solve_matching, validate_assignment, Assignment, MatchingProblem, Regime};
use countseg_core::similarity::{cosine_matrix, render_prompt, EmbeddingProvider, EmbeddingVector, DEFAULT_TEMPLATE};
use countseg_core::{CountPrediction, Detection, MaskProposal};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counter::{count_objects, AuditRecord, CountCall, Counter};
use crate::error::PipelineError;
use crate::manifest::{ImageEntry, Manifest};

/// Wall-clock time of each stage for one image, in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub image_id: String,
    pub counter_ms: Option<f64>,
    pub proposal_ingest_ms: f64,
    pub embedding_ms: f64,
    pub matching_ms: f64,
    pub total_ms: f64,
    pub proposals: usize,
    pub detections: usize,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutput {
    pub detections: Vec<Detection>,
    pub assignment: Assignment<f64>,
    pub timing: StageTiming,
    pub warnings: Vec<String>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn widen(v: Vec<EmbeddingVector<f32>>) -> Vec<EmbeddingVector<f64>> {
    v.iter().map(|e| e.cast()).collect()
}

/// Labels one image's proposals: builds the similarity matrix from the
/// embeddings, solves the counting-constrained assignment and emits one
/// unscored detection per assigned proposal, in proposal order. Zero counts
/// are ignored.
pub fn run_image(
    counts: &CountPrediction,
    proposals: &[MaskProposal],
    mask_embs: &dyn EmbeddingProvider,
    cat_embs: &dyn EmbeddingProvider,
    template: &str,
) -> Result<ImageOutput, PipelineError> {
    let start = Instant::now();
    let image_id = counts.image_id.clone();
    let positive = counts.positive();
    let mut timing = StageTiming {
        image_id: image_id.clone(),
        proposals: proposals.len(),
        ..Default::default()
    };
    let mut warnings = Vec::new();
    if let Some(p) = proposals.iter().find(|p| p.image_id != image_id) {
        return Err(PipelineError::Input(format!(
            "proposal {} belongs to image {}, not {image_id}",
            p.id, p.image_id
        )));
    }
    if positive.is_empty() || proposals.is_empty() {
        if !positive.is_empty() {
            warnings.push(format!("image {image_id}: counts are positive but there are no proposals"));
        }
        let total: u64 = positive.iter().map(|&(_, n)| n).sum();
        let regime = if proposals.len() as u64 >= total {
            Regime::CountExact
        } else {
            Regime::AllProposals
        };
        timing.total_ms = ms(start);
        return Ok(ImageOutput {
            detections: Vec::new(),
            assignment: Assignment::empty(regime),
            timing,
            warnings,
        });
    }

    let t = Instant::now();
    let mask_keys: Vec<String> = proposals.iter().map(MaskProposal::embedding_key).collect();
    let cat_keys: Vec<String> = positive
        .iter()
        .map(|(c, _)| render_prompt(c, template))
        .collect::<Result<_, _>>()?;
    let v = widen(mask_embs.embed(&mask_keys)?);
    let c = widen(cat_embs.embed(&cat_keys)?);
    let sim = cosine_matrix(&v, &c)?;
    timing.embedding_ms = ms(t);

    let t = Instant::now();
    let problem = MatchingProblem::new(sim, positive.iter().map(|&(_, n)| n as usize).collect())?;
    let assignment = solve_matching(&problem);
    timing.matching_ms = ms(t);
    let violations = validate_assignment(&problem, &assignment);
    if !violations.is_empty() {
        return Err(PipelineError::Invariant {
            image_id,
            violations: violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        });
    }

    let detections = assignment
        .pairs
        .iter()
        .map(|&(i, j)| {
            let p = &proposals[i];
            Detection::new(
                image_id.clone(),
                positive[j].0,
                p.bbox,
                Some(p.mask.clone()),
                None,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    timing.detections = detections.len();
    timing.total_ms = ms(start);
    Ok(ImageOutput {
        detections,
        assignment,
        timing,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub workers: usize,
    pub keep_going: bool,
    pub template: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            keep_going: false,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetOutput {
    /// Manifest order, then proposal order within each image.
    pub detections: Vec<Detection>,
    pub timings: Vec<StageTiming>,
    pub failures: Vec<ImageFailure>,
    pub warnings: Vec<String>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Input(format!("cannot start worker pool: {e}")))
}

/// Opens each embedding directory once, however many images share it.
#[derive(Default)]
struct StoreCache {
    stores: Mutex<HashMap<PathBuf, Arc<EmbeddingStore>>>,
}

impl StoreCache {
    fn get(&self, dir: &PathBuf) -> Result<Arc<EmbeddingStore>, PipelineError> {
        if let Some(s) = self.stores.lock().expect("store cache poisoned").get(dir) {
            return Ok(Arc::clone(s));
        }
        let store = Arc::new(EmbeddingStore::open(dir)?);
        self.stores
            .lock()
            .expect("store cache poisoned")
            .insert(dir.clone(), Arc::clone(&store));
        Ok(store)
    }
}

/// Runs the matching stage over every manifest image. `audit` supplies
/// counter latency and token usage for the timing records when available.
pub fn run_dataset(
    manifest: &Manifest,
    counts: &IndexMap<String, CountPrediction>,
    audit: &HashMap<String, AuditRecord>,
    cat_embs: &dyn EmbeddingProvider,
    opts: &RunOptions,
) -> Result<DatasetOutput, PipelineError> {
    let cache = StoreCache::default();
    let one = |img: &ImageEntry| -> Result<ImageOutput, PipelineError> {
        let image_id = img.image_id();
        let c = counts
            .get(&image_id)
            .ok_or_else(|| PipelineError::Input(format!("no counts for image {image_id}")))?;
        let t = Instant::now();
        let proposals = read_proposals(&img.proposals, &image_id, img.width, img.height)?;
        let ingest = ms(t);
        let out = if c.positive().is_empty() || proposals.is_empty() {
            run_image(c, &proposals, cat_embs, cat_embs, &opts.template)?
        } else {
            let masks = cache.get(&img.mask_embeddings)?;
            run_image(c, &proposals, &*masks, cat_embs, &opts.template)?
        };
        let mut out = out;
        out.timing.proposal_ingest_ms = ingest;
        out.timing.total_ms += ingest;
        if let Some(a) = audit.get(&image_id) {
            out.timing.counter_ms = Some(a.latency_ms);
            out.timing.total_ms += a.latency_ms;
            out.timing.prompt_tokens = a.usage.prompt_tokens;
            out.timing.completion_tokens = a.usage.completion_tokens;
        }
        Ok(out)
    };
    let results: Vec<Result<ImageOutput, PipelineError>> =
        pool(opts.workers)?.install(|| manifest.images.par_iter().map(one).collect());

    let mut out = DatasetOutput::default();
    for (img, r) in manifest.images.iter().zip(results) {
        let image_id = img.image_id();
        match r {
            Ok(o) => {
                log::info!("image {image_id}: {} detections", o.detections.len());
                out.detections.extend(o.detections);
                out.timings.push(o.timing);
                out.warnings.extend(o.warnings);
            }
            Err(e) if opts.keep_going => {
                log::error!("image {image_id}: {e}");
                out.failures.push(ImageFailure {
                    image_id,
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e.for_image(&image_id)),
        }
    }
    Ok(out)
}

/// Counter calls for a whole manifest, in manifest order.
#[derive(Debug, Default)]
pub struct CountOutput {
    pub calls: Vec<(String, Result<CountCall, String>)>,
}

/// Queries the counter for every manifest image. Transport failures are
/// fatal unless `keep_going`; parse failures always keep their audit record.
pub fn count_dataset(
    manifest: &Manifest,
    counter: &dyn Counter,
    prompt: &str,
    opts: &RunOptions,
) -> Result<CountOutput, PipelineError> {
    let results: Vec<_> = pool(opts.workers)?.install(|| {
        manifest
            .images
            .par_iter()
            .map(|img| count_objects(counter, &img.image_id(), &img.file, prompt))
            .collect()
    });
    let mut out = CountOutput::default();
    for (img, r) in manifest.images.iter().zip(results) {
        let image_id = img.image_id();
        match r {
            Ok(call) => out.calls.push((image_id, Ok(call))),
            Err(e) if opts.keep_going => {
                log::error!("image {image_id}: {e}");
                out.calls.push((image_id, Err(e.to_string())));
            }
            Err(e) => return Err(PipelineError::from(e).for_image(&image_id)),
        }
    }
    Ok(out)
}
