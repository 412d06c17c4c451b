use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use countseg_core::coco::{read_ground_truth, read_proposals, read_results, results_to_string, GroundTruth};
use countseg_core::embeddings::EmbeddingStore;
use countseg_core::geometry::crop_region;
use countseg_core::metrics::{sweep_thresholds, write_csv, IouKind, DEFAULT_IOU_THRESHOLD, DEFAULT_STEP};
use countseg_core::similarity::{EmbeddingProvider, Memoized, DEFAULT_EQUIVALENCE_THRESHOLD, DEFAULT_TEMPLATE};
use countseg_core::{CountPrediction, Error as CoreError};
use countseg_pipeline::counter::{audit_file_name, load_audit_dir, Counter};
use countseg_pipeline::embed_http::{HttpEmbeddingConfig, HttpEmbeddingProvider};
use countseg_pipeline::run::{ImageFailure, StageTiming};
use countseg_pipeline::{
    build_count_prompt, count_dataset, evaluate_detections, presets, run_dataset, CounterClientConfig, EvalSettings,
    HttpCounter, Manifest, PipelineError, PromptFormat, PromptSpec, ProposalConfig, ReplayCounter, RunOptions,
    Setting,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::required;
use crate::failure::Failure;

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    write_text(path, &s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Accepts either a file or a directory containing `default_name`.
fn file_or_dir(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    }
}

/// Run metadata. The only output that carries timestamps.
pub fn write_run_metadata<C: Serialize>(
    out: &Path,
    command: &str,
    config: &C,
    extra: Value,
    started: Instant,
) -> Result<(), Failure> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "finished_unix": now,
        "elapsed_ms": started.elapsed().as_secs_f64() * 1e3,
    });
    if let (Value::Object(m), Value::Object(x)) = (&mut meta, extra) {
        m.extend(x);
    }
    write_json(&out.join("run.json"), &meta)
}

fn parse_setting(s: &str) -> Result<Setting, Failure> {
    s.parse().map_err(Failure::usage)
}

// ---- count ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CountConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub setting: String,
    pub dataset: Option<String>,
    pub parent: Option<String>,
    pub classes: Option<Vec<String>>,
    pub prompt_file: Option<PathBuf>,
    pub format: String,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub api_key_env: Option<String>,
    pub max_concurrent: usize,
    pub workers: usize,
    pub keep_going: bool,
    pub replay: Option<PathBuf>,
}

impl Default for CountConfig {
    fn default() -> Self {
        let c = CounterClientConfig::default();
        CountConfig {
            manifest: None,
            out: None,
            setting: Setting::OpenVocabulary.to_string(),
            dataset: None,
            parent: None,
            classes: None,
            prompt_file: None,
            format: "json".into(),
            endpoint: c.endpoint,
            model: c.model,
            temperature: c.temperature,
            top_p: c.top_p,
            timeout_secs: c.timeout_secs,
            max_attempts: c.max_attempts,
            backoff_ms: c.backoff_ms,
            api_key_env: c.api_key_env,
            max_concurrent: c.max_concurrent,
            workers: 1,
            keep_going: false,
            replay: None,
        }
    }
}

fn prompt_spec(cfg: &CountConfig) -> Result<PromptSpec, Failure> {
    let format: PromptFormat = cfg.format.parse().map_err(Failure::usage)?;
    let setting = parse_setting(&cfg.setting)?;
    let spec = if let Some(p) = &cfg.prompt_file {
        read_json::<PromptSpec>(p)?
    } else if let Some(d) = &cfg.dataset {
        presets::lookup(d, setting, cfg.parent.as_deref())
            .ok_or_else(|| Failure::usage(format!("no prompt preset for dataset {d:?}; use nwpu or dior")))?
    } else if let (Some(classes), Setting::OpenVocabulary) = (&cfg.classes, setting) {
        presets::custom_open_vocabulary(classes)
    } else {
        return Err(Failure::usage(
            "no prompt: pass --prompt-file, --dataset, or --classes with the open-vocabulary setting",
        ));
    };
    Ok(spec.with_format(format))
}

pub fn count(cfg: &CountConfig) -> Result<(), Failure> {
    let started = Instant::now();
    let manifest = Manifest::load(required(&cfg.manifest, "manifest")?)?;
    let out = required(&cfg.out, "out")?;
    let prompt = build_count_prompt(&prompt_spec(cfg)?);

    let counter: Box<dyn Counter> = match &cfg.replay {
        Some(dir) => Box::new(ReplayCounter::from_dir(dir).map_err(|e| Failure::input(e.to_string()))?),
        None => Box::new(
            HttpCounter::new(CounterClientConfig {
                endpoint: cfg.endpoint.clone(),
                model: cfg.model.clone(),
                temperature: cfg.temperature,
                top_p: cfg.top_p,
                timeout_secs: cfg.timeout_secs,
                max_attempts: cfg.max_attempts,
                backoff_ms: cfg.backoff_ms,
                api_key_env: cfg.api_key_env.clone(),
                max_concurrent: cfg.max_concurrent,
            })
            .map_err(|e| Failure::input(e.to_string()))?,
        ),
    };
    let opts = RunOptions {
        workers: cfg.workers,
        keep_going: cfg.keep_going,
        ..Default::default()
    };
    let result = count_dataset(&manifest, &*counter, &prompt, &opts)?;

    write_text(&out.join("prompt.txt"), &prompt)?;
    let mut counts = Vec::new();
    let mut failures = Vec::new();
    let mut first_parse_error = None;
    for (image_id, call) in &result.calls {
        match call {
            Ok(call) => {
                write_json(&out.join("audit").join(audit_file_name(image_id)), &call.audit)?;
                match &call.prediction {
                    Ok(p) => {
                        log::info!("image {image_id}: {} categories, {} objects", p.counts.len(), p.total());
                        counts.push(p.clone());
                    }
                    Err(e) => {
                        log::error!("image {image_id}: {e}");
                        first_parse_error.get_or_insert_with(|| format!("image {image_id}: {e}"));
                        failures.push(ImageFailure {
                            image_id: image_id.clone(),
                            error: e.clone(),
                        });
                    }
                }
            }
            Err(e) => failures.push(ImageFailure {
                image_id: image_id.clone(),
                error: e.clone(),
            }),
        }
    }
    write_json(&out.join("counts.json"), &counts)?;
    if !failures.is_empty() {
        write_json(&out.join("errors.json"), &failures)?;
    }
    write_run_metadata(&out, "count", cfg, json!({"prompt_chars": prompt.len()}), started)?;
    match first_parse_error {
        Some(e) if !cfg.keep_going => Err(Failure::remote(e)),
        _ => Ok(()),
    }
}

// ---- match ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MatchConfig {
    pub manifest: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub audit: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub template: String,
    pub workers: usize,
    pub keep_going: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            manifest: None,
            counts: None,
            audit: None,
            out: None,
            template: DEFAULT_TEMPLATE.into(),
            workers: 1,
            keep_going: false,
        }
    }
}

pub fn match_(cfg: &MatchConfig, proposals: &ProposalConfig) -> Result<(), Failure> {
    let started = Instant::now();
    let manifest = Manifest::load(required(&cfg.manifest, "manifest")?)?;
    let out = required(&cfg.out, "out")?;
    let counts_path = file_or_dir(&required(&cfg.counts, "counts")?, "counts.json");
    let list: Vec<CountPrediction> = read_json(&counts_path)?;
    let mut counts = indexmap::IndexMap::new();
    for c in list {
        c.validate()
            .map_err(|e| Failure::input(format!("{}: {e}", counts_path.display())))?;
        if counts.insert(c.image_id.clone(), c).is_some() {
            return Err(Failure::input(format!("{}: duplicate image id", counts_path.display())));
        }
    }
    let audit: HashMap<_, _> = match &cfg.audit {
        Some(dir) => load_audit_dir(dir)
            .map_err(|e| Failure::input(e.to_string()))?
            .into_iter()
            .map(|r| (r.image_id.clone(), r))
            .collect(),
        None => HashMap::new(),
    };
    let text = EmbeddingStore::open(&manifest.category_embeddings)?;
    let opts = RunOptions {
        workers: cfg.workers,
        keep_going: cfg.keep_going,
        template: cfg.template.clone(),
    };
    let result = run_dataset(&manifest, &counts, &audit, &text, &opts)?;
    write_text(&out.join("detections.json"), &results_to_string(&result.detections))?;
    write_json(&out.join("timing.json"), &result.timings)?;
    write_json(
        &out.join("diagnostics.json"),
        &json!({"warnings": result.warnings, "failures": result.failures}),
    )?;
    write_run_metadata(&out, "match", cfg, json!({"proposal_generator": proposals}), started)
}

// ---- eval ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalConfig {
    pub detections: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub setting: String,
    pub classes: Option<Vec<String>>,
    pub iou: f64,
    pub mask: bool,
    pub text_embeddings: Option<PathBuf>,
    pub embedding_endpoint: Option<String>,
    pub equivalence_threshold: f64,
    pub template: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            detections: None,
            ground_truth: None,
            manifest: None,
            out: None,
            setting: Setting::OpenVocabulary.to_string(),
            classes: None,
            iou: DEFAULT_IOU_THRESHOLD,
            mask: true,
            text_embeddings: None,
            embedding_endpoint: None,
            equivalence_threshold: DEFAULT_EQUIVALENCE_THRESHOLD,
            template: DEFAULT_TEMPLATE.into(),
        }
    }
}

fn ground_truth_path(gt: &Option<PathBuf>, manifest: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    if let Some(p) = gt {
        return Ok(p.clone());
    }
    if let Some(m) = manifest {
        if let Some(p) = Manifest::load(m)?.ground_truth {
            return Ok(p);
        }
    }
    Err(Failure::usage("missing --ground-truth (or a --manifest that names one)"))
}

fn load_gt_and_results(detections: &Path, gt_path: &Path) -> Result<(GroundTruth, Vec<countseg_core::Detection>), Failure> {
    let gt = read_ground_truth(gt_path)?;
    let preds = read_results(file_or_dir(detections, "detections.json"), &gt.image_dims())?;
    Ok((gt, preds))
}

pub fn eval(cfg: &EvalConfig) -> Result<(), Failure> {
    let started = Instant::now();
    let out = required(&cfg.out, "out")?;
    let gt_path = ground_truth_path(&cfg.ground_truth, &cfg.manifest)?;
    let (gt, preds) = load_gt_and_results(&required(&cfg.detections, "detections")?, &gt_path)?;
    let setting = parse_setting(&cfg.setting)?;

    let provider: Option<Box<dyn EmbeddingProvider>> = match (&cfg.text_embeddings, &cfg.embedding_endpoint) {
        (Some(dir), _) => Some(Box::new(EmbeddingStore::open(dir)?)),
        (None, Some(url)) => Some(Box::new(Memoized::new(HttpEmbeddingProvider::new(HttpEmbeddingConfig {
            endpoint: url.clone(),
            ..Default::default()
        })?))),
        (None, None) => None,
    };
    let settings = EvalSettings {
        setting,
        classes: cfg.classes.clone(),
        iou_threshold: cfg.iou,
        masks: cfg.mask,
        equivalence_threshold: cfg.equivalence_threshold,
        template: cfg.template.clone(),
    };
    let remote = cfg.text_embeddings.is_none() && cfg.embedding_endpoint.is_some();
    let evaluation = evaluate_detections(&preds, &gt, &settings, provider.as_deref()).map_err(|e| match e {
        PipelineError::Core(CoreError::Provider { .. }) if remote => Failure::remote(e.to_string()),
        e => Failure::from(e),
    })?;
    for w in &evaluation.report.diagnostics.warnings {
        log::warn!("{w}");
    }
    write_json(&out.join("report.json"), &evaluation.report)?;
    let mut csv_buf = Vec::new();
    write_csv(&evaluation.report, &mut csv_buf)?;
    write_text(&out.join("report.csv"), &String::from_utf8(csv_buf).expect("utf-8 csv"))?;
    if let Some(map) = &evaluation.equivalence {
        write_json(&out.join("equivalence.json"), map)?;
    }
    write_run_metadata(&out, "eval", cfg, json!({}), started)
}

// ---- sweep ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepConfig {
    pub detections: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub classes: Option<Vec<String>>,
    pub iou: f64,
    pub step: f64,
    pub kind: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            detections: None,
            ground_truth: None,
            out: None,
            classes: None,
            iou: DEFAULT_IOU_THRESHOLD,
            step: DEFAULT_STEP,
            kind: "box".into(),
        }
    }
}

pub fn sweep(cfg: &SweepConfig) -> Result<(), Failure> {
    let started = Instant::now();
    let out = required(&cfg.out, "out")?;
    let (gt, preds) = load_gt_and_results(
        &required(&cfg.detections, "detections")?,
        &required(&cfg.ground_truth, "ground-truth")?,
    )?;
    let kind = match cfg.kind.as_str() {
        "box" => IouKind::Box,
        "mask" => IouKind::Mask,
        other => return Err(Failure::usage(format!("unknown --kind {other:?}; expected box or mask"))),
    };
    let classes = cfg.classes.clone().unwrap_or_else(|| gt.categories.clone());
    let s = sweep_thresholds(&preds, &gt.objects, &classes, kind, cfg.iou, cfg.step)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "mf1", "kept", "best"]).map_err(CoreError::from)?;
    for p in &s.curve {
        w.write_record([
            p.threshold.to_string(),
            p.mf1.to_string(),
            p.kept.to_string(),
            (p.threshold == s.best_threshold).to_string(),
        ])
        .map_err(CoreError::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::input(e.to_string()))?;
    write_text(&out.join("curve.csv"), &String::from_utf8(bytes).expect("utf-8 csv"))?;
    write_json(
        &out.join("sweep.json"),
        &json!({"best_threshold": s.best_threshold, "best_mf1": s.best_mf1, "step": cfg.step,
                "iou_threshold": cfg.iou, "kind": cfg.kind, "points": s.curve.len()}),
    )?;
    log::info!("best threshold {} with mF1 {}", s.best_threshold, s.best_mf1);
    write_run_metadata(&out, "sweep", cfg, json!({}), started)
}

// ---- bench ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchConfig {
    pub timings: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn bench(cfg: &BenchConfig) -> Result<(), Failure> {
    let started = Instant::now();
    let out = required(&cfg.out, "out")?;
    let path = file_or_dir(&required(&cfg.timings, "timings")?, "timing.json");
    let records: Vec<StageTiming> = read_json(&path)?;

    let mut per = csv::Writer::from_writer(Vec::new());
    per.write_record([
        "image_id",
        "proposals",
        "boxes",
        "counter_ms",
        "proposal_ingest_ms",
        "embedding_ms",
        "matching_ms",
        "total_ms",
        "prompt_tokens",
        "completion_tokens",
    ])
    .map_err(CoreError::from)?;
    for r in &records {
        per.write_record([
            r.image_id.clone(),
            r.proposals.to_string(),
            r.detections.to_string(),
            opt_cell(r.counter_ms),
            r.proposal_ingest_ms.to_string(),
            r.embedding_ms.to_string(),
            r.matching_ms.to_string(),
            r.total_ms.to_string(),
            opt_cell(r.prompt_tokens),
            opt_cell(r.completion_tokens),
        ])
        .map_err(CoreError::from)?;
    }

    let mut sum = csv::Writer::from_writer(Vec::new());
    sum.write_record(["stage", "images", "mean_ms", "total_ms"]).map_err(CoreError::from)?;
    if !records.is_empty() {
        let stages: [(&str, fn(&StageTiming) -> Option<f64>); 5] = [
            ("counter", |r| r.counter_ms),
            ("proposal_ingest", |r| Some(r.proposal_ingest_ms)),
            ("embedding", |r| Some(r.embedding_ms)),
            ("matching", |r| Some(r.matching_ms)),
            ("total", |r| Some(r.total_ms)),
        ];
        for (name, get) in stages {
            let vals: Vec<f64> = records.iter().filter_map(get).collect();
            let total: f64 = vals.iter().sum();
            let mean = if vals.is_empty() { None } else { Some(total / vals.len() as f64) };
            sum.write_record([
                name.to_string(),
                vals.len().to_string(),
                opt_cell(mean),
                if vals.is_empty() { String::new() } else { total.to_string() },
            ])
            .map_err(CoreError::from)?;
        }
    }
    let text = |w: csv::Writer<Vec<u8>>| -> Result<String, Failure> {
        Ok(String::from_utf8(w.into_inner().map_err(|e| Failure::input(e.to_string()))?).expect("utf-8 csv"))
    };
    write_text(&out.join("per_image.csv"), &text(per)?)?;
    write_text(&out.join("summary.csv"), &text(sum)?)?;
    write_run_metadata(&out, "bench", cfg, json!({}), started)
}

// ---- crops ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CropsConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub scale: f64,
}

impl Default for CropsConfig {
    fn default() -> Self {
        CropsConfig {
            manifest: None,
            out: None,
            scale: 1.2,
        }
    }
}

pub fn crops(cfg: &CropsConfig, proposals: &ProposalConfig) -> Result<(), Failure> {
    let started = Instant::now();
    let manifest = Manifest::load(required(&cfg.manifest, "manifest")?)?;
    let out = required(&cfg.out, "out")?;
    let mut rows = Vec::new();
    for img in &manifest.images {
        let id = img.image_id();
        for p in read_proposals(&img.proposals, &id, img.width, img.height)? {
            let c = crop_region(&p.bbox, cfg.scale, img.width as f64, img.height as f64)?;
            rows.push(json!({
                "key": p.embedding_key(),
                "image_id": id,
                "proposal_id": p.id,
                "file": img.file,
                "crop": [c.x_min, c.y_min, c.x_max, c.y_max],
            }));
        }
    }
    write_json(&out.join("crops.json"), &rows)?;
    write_run_metadata(&out, "crops", cfg, json!({"proposal_generator": proposals}), started)
}
