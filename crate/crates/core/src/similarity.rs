//! Cosine similarity between mask-crop and category-text embeddings, category
//! prompt templating, and synonym matching of generated category names.

use std::collections::HashMap;
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_TEMPLATE: &str = "a satellite image of a {category}";
pub const PLACEHOLDER: &str = "{category}";
pub const DEFAULT_EQUIVALENCE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension("embedding must have positive dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norm(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize<T: Scalar>(v: &EmbeddingVector<T>) -> Result<EmbeddingVector<T>> {
    let n = v.norm();
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(EmbeddingVector {
        values: v.values.iter().map(|&x| x / n).collect(),
    })
}

/// Dense row-major `n_masks x n_categories` matrix of cosine similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix<T> {
    n_masks: usize,
    n_categories: usize,
    entries: Vec<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn new(n_masks: usize, n_categories: usize, entries: Vec<T>) -> Result<Self> {
        if entries.len() != n_masks * n_categories {
            return Err(Error::Shape(format!(
                "{} entries for a {n_masks}x{n_categories} similarity matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity matrix".into()));
        }
        Ok(SimilarityMatrix {
            n_masks,
            n_categories,
            entries,
        })
    }

    /// Builds from rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged similarity rows".into()));
        }
        Self::new(rows.len(), m, rows.iter().flatten().copied().collect())
    }

    pub fn n_masks(&self) -> usize {
        self.n_masks
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn get(&self, mask: usize, category: usize) -> T {
        self.entries[mask * self.n_categories + category]
    }

    pub fn row(&self, mask: usize) -> &[T] {
        &self.entries[mask * self.n_categories..(mask + 1) * self.n_categories]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.n_categories {
            for i in 0..self.n_masks {
                entries.push(self.get(i, j));
            }
        }
        SimilarityMatrix {
            n_masks: self.n_categories,
            n_categories: self.n_masks,
            entries,
        }
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: T) -> Self {
        SimilarityMatrix {
            n_masks: self.n_masks,
            n_categories: self.n_categories,
            entries: self.entries.iter().map(|&v| v + c).collect(),
        }
    }

    /// Reorders rows: row `k` of the result is row `perm[k]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_masks {
            return Err(Error::Shape("row permutation has wrong length".into()));
        }
        let entries = perm.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self::new(self.n_masks, self.n_categories, entries)
    }
}

/// Entry `(i, j)` is the cosine of mask embedding `i` and category embedding `j`.
/// Inputs need not be normalized.
pub fn cosine_matrix<T: Scalar>(
    mask_embs: &[EmbeddingVector<T>],
    cat_embs: &[EmbeddingVector<T>],
) -> Result<SimilarityMatrix<T>> {
    if mask_embs.is_empty() || cat_embs.is_empty() {
        return Err(Error::Dimension("cosine matrix needs at least one embedding on each side".into()));
    }
    let dim = mask_embs[0].dim();
    if let Some(bad) = mask_embs.iter().chain(cat_embs).find(|v| v.dim() != dim) {
        return Err(Error::Shape(format!("embedding dimension {} vs {dim}", bad.dim())));
    }
    let masks: Vec<_> = mask_embs.iter().map(normalize).collect::<Result<_>>()?;
    let cats: Vec<_> = cat_embs.iter().map(normalize).collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(masks.len() * cats.len());
    for v in &masks {
        for t in &cats {
            entries.push(v.dot(t).max(-T::one()).min(T::one()));
        }
    }
    SimilarityMatrix::new(masks.len(), cats.len(), entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryPrompt {
    pub category: String,
    pub rendered: String,
}

pub fn render_prompt(category: &str, template: &str) -> Result<String> {
    let n = template.matches(PLACEHOLDER).count();
    if n != 1 {
        return Err(Error::Template(format!(
            "template {template:?} must contain exactly one {PLACEHOLDER} placeholder, found {n}"
        )));
    }
    Ok(template.replace(PLACEHOLDER, category))
}

pub fn render_prompts(categories: &[impl AsRef<str>], template: &str) -> Result<Vec<CategoryPrompt>> {
    categories
        .iter()
        .map(|c| {
            Ok(CategoryPrompt {
                category: c.as_ref().to_string(),
                rendered: render_prompt(c.as_ref(), template)?,
            })
        })
        .collect()
}

/// Source of embeddings for text prompts or mask crops, looked up by key.
///
/// Implementations either tolerate concurrent calls or report
/// `single_flight() == true`, in which case callers serialize requests.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, keys: &[String]) -> Result<Vec<EmbeddingVector<f32>>>;

    fn single_flight(&self) -> bool {
        false
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn embed(&self, keys: &[String]) -> Result<Vec<EmbeddingVector<f32>>> {
        (**self).embed(keys)
    }

    fn single_flight(&self) -> bool {
        (**self).single_flight()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn embed(&self, keys: &[String]) -> Result<Vec<EmbeddingVector<f32>>> {
        (**self).embed(keys)
    }

    fn single_flight(&self) -> bool {
        (**self).single_flight()
    }
}

/// Per-run memoization in front of another provider.
pub struct Memoized<P> {
    inner: P,
    cache: Mutex<HashMap<String, EmbeddingVector<f32>>>,
    gate: Mutex<()>,
}

impl<P: EmbeddingProvider> Memoized<P> {
    pub fn new(inner: P) -> Self {
        Memoized {
            inner,
            cache: Mutex::new(HashMap::new()),
            gate: Mutex::new(()),
        }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for Memoized<P> {
    fn embed(&self, keys: &[String]) -> Result<Vec<EmbeddingVector<f32>>> {
        let missing: Vec<String> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            let mut seen = std::collections::HashSet::new();
            keys.iter()
                .filter(|k| !cache.contains_key(*k) && seen.insert(k.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let _guard = self.inner.single_flight().then(|| self.gate.lock().expect("gate poisoned"));
            let fetched = self.inner.embed(&missing)?;
            if fetched.len() != missing.len() {
                return Err(Error::Provider {
                    key: None,
                    message: format!("asked for {} embeddings, got {}", missing.len(), fetched.len()),
                });
            }
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            cache.extend(missing.into_iter().zip(fetched));
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMatch {
    pub ground_truth: String,
    pub similarity: f64,
    /// True when matched by case-insensitive string equality.
    pub exact: bool,
}

/// Generated category name -> ground-truth name (or unmatched).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceMap {
    pub threshold: f64,
    pub entries: IndexMap<String, Option<CategoryMatch>>,
}

impl EquivalenceMap {
    pub fn get(&self, generated: &str) -> Option<&str> {
        self.entries
            .get(generated)
            .and_then(|m| m.as_ref())
            .map(|m| m.ground_truth.as_str())
    }

    pub fn unmatched(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(_, m)| m.is_none())
            .map(|(k, _)| k.as_str())
    }
}

/// Maps each generated name to the ground-truth name of highest cosine
/// similarity strictly above `threshold`. Case-insensitive equal names match
/// without consulting embeddings; similarity ties go to the earlier
/// ground-truth name. Text embeddings are requested for the rendered prompts.
pub fn match_generated_categories(
    generated: &[String],
    ground_truth: &[String],
    provider: &dyn EmbeddingProvider,
    threshold: f64,
    template: &str,
) -> Result<EquivalenceMap> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::Input(format!("equivalence threshold must be positive, got {threshold}")));
    }
    let mut entries = IndexMap::new();
    let mut pending = Vec::new();
    for g in generated {
        if entries.contains_key(g) {
            continue;
        }
        let needle = g.trim().to_lowercase();
        let exact = ground_truth.iter().find(|t| t.trim().to_lowercase() == needle);
        match exact {
            Some(t) => {
                entries.insert(
                    g.clone(),
                    Some(CategoryMatch {
                        ground_truth: t.clone(),
                        similarity: 1.0,
                        exact: true,
                    }),
                );
            }
            None => {
                entries.insert(g.clone(), None);
                pending.push(g.clone());
            }
        }
    }
    if pending.is_empty() || ground_truth.is_empty() {
        return Ok(EquivalenceMap { threshold, entries });
    }

    let embed = |names: &[String]| -> Result<Vec<EmbeddingVector<f64>>> {
        let keys: Vec<String> = names
            .iter()
            .map(|n| render_prompt(n, template))
            .collect::<Result<_>>()?;
        let vecs = provider.embed(&keys).map_err(|e| match e {
            p @ Error::Provider { .. } => p,
            other => Error::Provider {
                key: None,
                message: other.to_string(),
            },
        })?;
        Ok(vecs.iter().map(|v| v.cast()).collect())
    };
    let gen_embs = embed(&pending)?;
    let gt_embs = embed(ground_truth)?;
    let sims = cosine_matrix(&gen_embs, &gt_embs)?;

    for (i, g) in pending.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, &s) in sims.row(i).iter().enumerate() {
            if s > threshold && best.map_or(true, |(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        entries[g] = best.map(|(j, s)| CategoryMatch {
            ground_truth: ground_truth[j].clone(),
            similarity: s,
            exact: false,
        });
    }
    Ok(EquivalenceMap { threshold, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_cases() {
        let n = normalize(&ev(&[3.0, 4.0])).unwrap();
        assert!((n.values()[0] - 0.6).abs() < 1e-12 && (n.values()[1] - 0.8).abs() < 1e-12);
        let u = ev(&[0.6, 0.8]);
        let again = normalize(&u).unwrap();
        assert!((again.norm() - 1.0).abs() < 1e-6);
        assert_eq!(normalize(&ev(&[2.0, 0.0, 0.0])).unwrap().values(), &[1.0, 0.0, 0.0]);
        assert!(matches!(normalize(&ev(&[0.0, 0.0])), Err(Error::ZeroNorm)));
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingVector::<f32>::new(vec![]).is_err());
    }

    #[test]
    fn cosine_cases() {
        let s = cosine_matrix(&[ev(&[1.0, 0.0])], &[ev(&[1.0, 0.0]), ev(&[0.0, 2.0])]).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(0, 1), 0.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let s = cosine_matrix(&[ev(&[r, r])], &[ev(&[1.0, 0.0])]).unwrap();
        // independent route: plain dot product of the already-unit vectors
        let dot = r * 1.0 + r * 0.0;
        assert!((s.get(0, 0) - dot).abs() < 1e-12);
        assert!((s.get(0, 0) - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_matrix(&[ev(&[1.0, 0.0])], &[ev(&[1.0, 0.0, 0.0])]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            cosine_matrix(&[ev(&[0.0, 0.0])], &[ev(&[1.0, 0.0])]),
            Err(Error::ZeroNorm)
        ));
        assert!(cosine_matrix::<f64>(&[], &[ev(&[1.0])]).is_err());
    }

    #[test]
    fn prompts() {
        let p = render_prompts(&["harbor"], DEFAULT_TEMPLATE).unwrap();
        assert_eq!(p[0].rendered, "a satellite image of a harbor");
        assert!(render_prompts(&[] as &[&str], DEFAULT_TEMPLATE).unwrap().is_empty());
        assert_eq!(render_prompts(&["car"], "photo of {category}").unwrap()[0].rendered, "photo of car");
        assert!(matches!(render_prompts(&["car"], "photo"), Err(Error::Template(_))));
        assert!(render_prompts(&["car"], "{category} {category}").is_err());
    }

    #[test]
    fn similarity_matrix_shape_checked() {
        assert!(SimilarityMatrix::new(2, 2, vec![0.0f64; 3]).is_err());
        assert!(SimilarityMatrix::from_rows(&[vec![0.1f64, 0.2], vec![0.3]]).is_err());
        let s = SimilarityMatrix::from_rows(&[vec![0.1f64, 0.2], vec![0.3, 0.4]]).unwrap();
        assert_eq!(s.transpose().get(1, 0), 0.2);
        assert_eq!(s.permute_rows(&[1, 0]).unwrap().row(0), &[0.3, 0.4]);
    }

    struct Table(HashMap<String, Vec<f32>>);

    impl EmbeddingProvider for Table {
        fn embed(&self, keys: &[String]) -> Result<Vec<EmbeddingVector<f32>>> {
            keys.iter()
                .map(|k| {
                    self.0.get(k).cloned().map(EmbeddingVector::new).transpose()?.ok_or_else(|| {
                        Error::Provider {
                            key: Some(k.clone()),
                            message: "no embedding".into(),
                        }
                    })
                })
                .collect()
        }
    }

    fn table(entries: &[(&str, Vec<f32>)]) -> Table {
        Table(
            entries
                .iter()
                .map(|(k, v)| (render_prompt(k, DEFAULT_TEMPLATE).unwrap(), v.clone()))
                .collect(),
        )
    }

    #[test]
    fn exact_names_short_circuit() {
        let t = table(&[]);
        let m = match_generated_categories(
            &["Vehicle".into()],
            &["vehicle".into(), "ship".into()],
            &t,
            0.95,
            DEFAULT_TEMPLATE,
        )
        .unwrap();
        assert_eq!(m.get("Vehicle"), Some("vehicle"));
        assert!(m.entries["Vehicle"].as_ref().unwrap().exact);
    }

    #[test]
    fn orthogonal_names_unmatched() {
        let t = table(&[("tree", vec![1.0, 0.0]), ("ship", vec![0.0, 1.0])]);
        let m = match_generated_categories(&["tree".into()], &["ship".into()], &t, 0.95, DEFAULT_TEMPLATE)
            .unwrap();
        assert_eq!(m.get("tree"), None);
        assert_eq!(m.unmatched().collect::<Vec<_>>(), vec!["tree"]);
    }

    #[test]
    fn argmax_and_ties_by_ground_truth_order() {
        let t = table(&[
            ("car", vec![1.0, 0.0]),
            ("vehicle", vec![0.99, 0.141]),
            ("auto", vec![0.99, 0.141]),
            ("truck", vec![0.96, 0.28]),
        ]);
        let m = match_generated_categories(
            &["car".into()],
            &["truck".into(), "vehicle".into(), "auto".into()],
            &t,
            0.95,
            DEFAULT_TEMPLATE,
        )
        .unwrap();
        assert_eq!(m.get("car"), Some("vehicle"));
    }

    #[test]
    fn provider_errors_name_the_key() {
        let t = table(&[("vehicle", vec![1.0, 0.0])]);
        let err = match_generated_categories(&["car".into()], &["vehicle".into()], &t, 0.95, DEFAULT_TEMPLATE)
            .unwrap_err();
        match err {
            Error::Provider { key, .. } => assert_eq!(key.as_deref(), Some("a satellite image of a car")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn memoized_calls_inner_once_per_key() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Counting(AtomicUsize);
        impl EmbeddingProvider for Counting {
            fn embed(&self, keys: &[String]) -> Result<Vec<EmbeddingVector<f32>>> {
                self.0.fetch_add(keys.len(), Ordering::SeqCst);
                keys.iter().map(|k| EmbeddingVector::new(vec![k.len() as f32])).collect()
            }
        }
        let m = Memoized::new(Counting(AtomicUsize::new(0)));
        let keys = vec!["a".to_string(), "bb".to_string()];
        m.embed(&keys).unwrap();
        let again = m.embed(&keys).unwrap();
        assert_eq!(again[1].values(), &[2.0]);
        assert_eq!(m.inner.0.load(Ordering::SeqCst), 2);
    }
}
