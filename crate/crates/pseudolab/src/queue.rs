//! Dynamic pseudo-label queue.
//!
//! Image-keyed storage with a category -> image-ids inverted index used for
//! class-balanced sampling. Re-labeling an image replaces its entry wholesale;
//! entries are never evicted unless an optional capacity is configured.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::eval::{self, DetectionResult};
use crate::geometry::BoxAny;

/// One pseudo-annotation held by the queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub bbox: BoxAny,
    pub category_id: usize,
    pub confidence: f64,
}

/// Image metadata plus its current pseudo-labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub image_id: u64,
    pub path: String,
    pub labels: Vec<PseudoLabel>,
    /// Training iteration of the last update.
    pub stamp: u64,
}

/// The queue: entries in insertion order, plus the inverted category index.
///
/// Index lists are kept sorted by image id; the invariant is that the index
/// equals the inverted index recomputed from the entries after every
/// mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DynamicLabelQueue {
    entries: Vec<QueueEntry>,
    #[serde(skip)]
    by_id: HashMap<u64, usize>,
    index: BTreeMap<usize, Vec<u64>>,
    /// Optional per-category sampling weights; uniform when absent.
    pub weights: Option<BTreeMap<usize, f64>>,
    /// Optional capacity; the oldest-stamp entry is evicted on overflow.
    pub capacity: Option<usize>,
}

impl DynamicLabelQueue {
    pub fn new() -> Self {
        DynamicLabelQueue::default()
    }

    pub fn with_capacity_limit(capacity: usize) -> Self {
        DynamicLabelQueue {
            capacity: Some(capacity),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn get(&self, image_id: u64) -> Option<&QueueEntry> {
        self.by_id.get(&image_id).map(|&i| &self.entries[i])
    }

    pub fn index(&self) -> &BTreeMap<usize, Vec<u64>> {
        &self.index
    }

    /// Number of stored labels per category.
    pub fn per_category_counts(&self, n_categories: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_categories];
        for e in &self.entries {
            for l in &e.labels {
                if l.category_id < n_categories {
                    counts[l.category_id] += 1;
                }
            }
        }
        counts
    }

    /// Insert a new entry or replace the entry with the same image id. The
    /// category index is updated to reflect exactly the stored entries.
    pub fn push_or_update(&mut self, entry: QueueEntry) -> Result<()> {
        if entry.labels.is_empty() {
            return Err(Error::Queue(format!(
                "refusing to enqueue image {} with no labels",
                entry.image_id
            )));
        }
        for l in &entry.labels {
            l.bbox.validate().map_err(|e| Error::Queue(format!("image {}: {e}", entry.image_id)))?;
        }
        match self.by_id.get(&entry.image_id).copied() {
            Some(pos) => {
                let old = std::mem::replace(&mut self.entries[pos], entry);
                self.unindex(&old);
                let new = self.entries[pos].clone();
                self.index_entry(&new);
            }
            None => {
                if let Some(cap) = self.capacity {
                    if self.entries.len() >= cap {
                        self.evict_oldest();
                    }
                }
                self.by_id.insert(entry.image_id, self.entries.len());
                self.index_entry(&entry);
                self.entries.push(entry);
            }
        }
        Ok(())
    }

    fn evict_oldest(&mut self) {
        let Some(pos) = self
            .entries
            .iter()
            .enumerate()
            .min_by_key(|(_, e)| (e.stamp, e.image_id))
            .map(|(i, _)| i)
        else {
            return;
        };
        let old = self.entries.remove(pos);
        self.unindex(&old);
        self.by_id.remove(&old.image_id);
        for (id, idx) in self.by_id.iter_mut() {
            if *idx > pos {
                *idx -= 1;
            }
            debug_assert_ne!(*id, old.image_id);
        }
    }

    fn categories_of(entry: &QueueEntry) -> Vec<usize> {
        let mut cats: Vec<usize> = entry.labels.iter().map(|l| l.category_id).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    fn index_entry(&mut self, entry: &QueueEntry) {
        for cat in Self::categories_of(entry) {
            let ids = self.index.entry(cat).or_default();
            if let Err(at) = ids.binary_search(&entry.image_id) {
                ids.insert(at, entry.image_id);
            }
        }
    }

    fn unindex(&mut self, entry: &QueueEntry) {
        for cat in Self::categories_of(entry) {
            if let Some(ids) = self.index.get_mut(&cat) {
                if let Ok(at) = ids.binary_search(&entry.image_id) {
                    ids.remove(at);
                }
                if ids.is_empty() {
                    self.index.remove(&cat);
                }
            }
        }
    }

    /// Recompute the inverted index from scratch; the incremental index must
    /// always equal this.
    pub fn rebuild_index(&self) -> BTreeMap<usize, Vec<u64>> {
        let mut index: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        for e in &self.entries {
            for cat in Self::categories_of(e) {
                index.entry(cat).or_default().push(e.image_id);
            }
        }
        for ids in index.values_mut() {
            ids.sort_unstable();
            ids.dedup();
        }
        index
    }

    /// Class-balanced two-stage sampling with replacement: draw a category
    /// (uniform, or by the configured weights), then a uniform image from
    /// that category's index list.
    pub fn sample_batch(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<QueueEntry>> {
        if self.entries.is_empty() {
            return Err(Error::Queue("cannot sample from an empty queue".into()));
        }
        if n == 0 {
            return Err(Error::Queue("batch size must be positive".into()));
        }
        let cats: Vec<usize> = self.index.keys().copied().collect();
        let weights: Vec<f64> = cats
            .iter()
            .map(|c| {
                self.weights
                    .as_ref()
                    .and_then(|w| w.get(c).copied())
                    .unwrap_or(1.0)
                    .max(0.0)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Queue("sampling weights sum to zero".into()));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pick = rng.gen_range(0.0..total);
            let mut cat = cats[cats.len() - 1];
            for (c, w) in cats.iter().zip(&weights) {
                if pick < *w {
                    cat = *c;
                    break;
                }
                pick -= w;
            }
            let ids = &self.index[&cat];
            let id = ids[rng.gen_range(0..ids.len())];
            out.push(self.get(id).expect("indexed image must exist").clone());
        }
        Ok(out)
    }

    /// Serialize as one JSON record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(
                &serde_json::to_string(e).map_err(|er| Error::Queue(format!("serialize: {er}")))?,
            );
            out.push('\n');
        }
        Ok(out)
    }

    /// Rebuild a queue from its JSONL dump.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut q = DynamicLabelQueue::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: QueueEntry = serde_json::from_str(line)
                .map_err(|e| Error::Queue(format!("line {}: {e}", i + 1)))?;
            q.push_or_update(entry)?;
        }
        Ok(q)
    }

    /// Rebuild the id map after deserialization.
    pub fn restore_internal(&mut self) {
        self.by_id = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.image_id, i))
            .collect();
    }

    /// Export stored labels as detection results for metric evaluation.
    pub fn as_detections(&self) -> Vec<DetectionResult> {
        let mut out = Vec::new();
        for e in &self.entries {
            for l in &e.labels {
                out.push(DetectionResult {
                    image_id: e.image_id,
                    bbox: l.bbox,
                    category_id: l.category_id,
                    score: l.confidence,
                });
            }
        }
        out
    }
}

/// Precision/recall of the queue content against hidden ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueQuality {
    pub precision: f64,
    pub recall: f64,
    pub n_labels: usize,
    pub n_gt: usize,
}

/// Score stored pseudo-labels against ground truth at IoU 0.5. When
/// `categories` is given, both labels and ground truth are restricted to
/// those categories.
pub fn queue_quality(
    queue: &DynamicLabelQueue,
    ground_truth: &BTreeMap<u64, Vec<crate::annotations::Instance>>,
    categories: Option<&[usize]>,
) -> QueueQuality {
    let keep_cat = |c: usize| categories.map_or(true, |cats| cats.contains(&c));
    let dets: Vec<DetectionResult> = queue
        .as_detections()
        .into_iter()
        .filter(|d| keep_cat(d.category_id))
        .collect();
    let mut gt: BTreeMap<u64, Vec<crate::annotations::Instance>> = BTreeMap::new();
    for (&img, instances) in ground_truth {
        let kept: Vec<_> = instances
            .iter()
            .filter(|i| keep_cat(i.category_id))
            .cloned()
            .collect();
        if !kept.is_empty() {
            gt.insert(img, kept);
        }
    }
    let n_gt: usize = gt.values().map(|v| v.iter().filter(|i| !i.difficult).count()).sum();
    let outcome = eval::match_detections(&dets, &gt, 0.5, false);
    let tp = outcome
        .flags
        .iter()
        .filter(|f| matches!(f, eval::MatchFlag::TruePositive))
        .count();
    let fp = outcome
        .flags
        .iter()
        .filter(|f| matches!(f, eval::MatchFlag::FalsePositive))
        .count();
    QueueQuality {
        precision: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
        recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
        n_labels: dets.len(),
        n_gt,
    }
}
