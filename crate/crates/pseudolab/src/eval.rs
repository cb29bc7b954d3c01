//! Detection metrics: per-class AP/AR at IoU 0.5, base/novel means, the
//! harmonic mean, class-agnostic recall, and PR-curve export.
//!
//! AP uses all-points interpolation (area under the precision envelope).
//! Classes without ground truth are excluded from the means. Difficult
//! ground-truth objects neither match nor count.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::annotations::{Instance, Vocabulary};
use crate::error::{Error, Result};
use crate::geometry::{BoxAny, HBox, OBox};

/// One scored detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub image_id: u64,
    pub bbox: BoxAny,
    pub category_id: usize,
    pub score: f64,
}

/// Outcome of one detection in greedy matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
    /// Overlapped only difficult ground truth; excluded from the PR curve.
    Ignored,
}

/// Greedy matching result, in descending-score order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// Indices into the input detections, sorted by descending score
    /// (ties: insertion order).
    pub order: Vec<usize>,
    /// Flag per detection, aligned with `order`.
    pub flags: Vec<MatchFlag>,
    /// Non-difficult ground-truth count.
    pub n_gt: usize,
    /// Matched flags per image, aligned with each image's instance list.
    pub gt_matched: BTreeMap<u64, Vec<bool>>,
}

/// Match detections to ground truth at `iou_thresh`, greedily in descending
/// score order; each ground-truth object matches at most once. With
/// `class_agnostic` any category may match any object, otherwise categories
/// must agree.
pub fn match_detections(
    dets: &[DetectionResult],
    gts: &BTreeMap<u64, Vec<Instance>>,
    iou_thresh: f64,
    class_agnostic: bool,
) -> MatchOutcome {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));

    let mut gt_matched: BTreeMap<u64, Vec<bool>> = gts
        .iter()
        .map(|(&img, list)| (img, vec![false; list.len()]))
        .collect();
    let n_gt = gts
        .values()
        .flat_map(|l| l.iter())
        .filter(|i| !i.difficult)
        .count();

    let mut flags = Vec::with_capacity(dets.len());
    for &di in &order {
        let det = &dets[di];
        let Some(instances) = gts.get(&det.image_id) else {
            flags.push(MatchFlag::FalsePositive);
            continue;
        };
        let matched = gt_matched.get_mut(&det.image_id).expect("image present");
        let mut best: Option<usize> = None;
        let mut best_iou = iou_thresh;
        let mut overlaps_difficult = false;
        for (gi, inst) in instances.iter().enumerate() {
            if !class_agnostic && inst.category_id != det.category_id {
                continue;
            }
            let iou = det.bbox.iou(&inst.bbox);
            if iou < iou_thresh {
                continue;
            }
            if inst.difficult {
                overlaps_difficult = true;
                continue;
            }
            if matched[gi] {
                continue;
            }
            if iou >= best_iou {
                best_iou = iou;
                best = Some(gi);
            }
        }
        match best {
            Some(gi) => {
                matched[gi] = true;
                flags.push(MatchFlag::TruePositive);
            }
            None if overlaps_difficult => flags.push(MatchFlag::Ignored),
            None => flags.push(MatchFlag::FalsePositive),
        }
    }
    MatchOutcome {
        order,
        flags,
        n_gt,
        gt_matched,
    }
}

/// All-points interpolated average precision from flags in descending-score
/// order. `None` when there is no ground truth.
pub fn average_precision(flags: &[MatchFlag], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let points = pr_points(flags, n_gt);
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        ap += (recall - prev_recall) * envelope[i];
        prev_recall = recall;
    }
    Some(ap)
}

/// (recall, precision) after each counted detection.
pub fn pr_points(flags: &[MatchFlag], n_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut out = Vec::new();
    for f in flags {
        match f {
            MatchFlag::TruePositive => tp += 1,
            MatchFlag::FalsePositive => fp += 1,
            MatchFlag::Ignored => continue,
        }
        out.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    out
}

/// 2ab / (a + b); zero when both inputs are zero.
pub fn harmonic_mean(base: f64, novel: f64) -> f64 {
    if base + novel == 0.0 {
        0.0
    } else {
        2.0 * base * novel / (base + novel)
    }
}

/// Metrics for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub ap: Option<f64>,
    /// Final recall: matched ground truth over all ground truth.
    pub ar: f64,
    pub n_gt: usize,
    pub n_det: usize,
}

/// Aggregate report over a detection set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub map: f64,
    pub map_base: f64,
    pub map_novel: f64,
    pub mar: f64,
    pub mar_base: f64,
    pub mar_novel: f64,
    pub hm_ap: f64,
    pub hm_ar: f64,
    /// PR samples per class, aligned with `per_class`.
    pub pr_curves: Vec<Vec<(f64, f64)>>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Per-class AP/AR at IoU 0.5 with base/novel aggregation.
pub fn evaluate(
    dets: &[DetectionResult],
    gts: &BTreeMap<u64, Vec<Instance>>,
    vocab: &Vocabulary,
    iou_thresh: f64,
) -> Result<EvalReport> {
    for d in dets {
        if d.category_id >= vocab.len() {
            return Err(Error::Eval(format!(
                "detection category {} outside vocabulary of {}",
                d.category_id,
                vocab.len()
            )));
        }
    }
    let mut per_class = Vec::with_capacity(vocab.len());
    let mut pr_curves = Vec::with_capacity(vocab.len());
    for class in 0..vocab.len() {
        let class_dets: Vec<DetectionResult> = dets
            .iter()
            .filter(|d| d.category_id == class)
            .cloned()
            .collect();
        let mut class_gts: BTreeMap<u64, Vec<Instance>> = BTreeMap::new();
        for (&img, list) in gts {
            let kept: Vec<Instance> = list
                .iter()
                .filter(|i| i.category_id == class)
                .cloned()
                .collect();
            if !kept.is_empty() {
                class_gts.insert(img, kept);
            }
        }
        let outcome = match_detections(&class_dets, &class_gts, iou_thresh, true);
        let tp = outcome
            .flags
            .iter()
            .filter(|f| matches!(f, MatchFlag::TruePositive))
            .count();
        let ap = average_precision(&outcome.flags, outcome.n_gt);
        per_class.push(ClassMetrics {
            name: vocab.name(class).to_string(),
            ap,
            ar: if outcome.n_gt == 0 { 0.0 } else { tp as f64 / outcome.n_gt as f64 },
            n_gt: outcome.n_gt,
            n_det: class_dets.len(),
        });
        pr_curves.push(pr_points(&outcome.flags, outcome.n_gt.max(1)));
    }

    let collect = |ids: &[usize], f: &dyn Fn(&ClassMetrics) -> Option<f64>| -> Vec<f64> {
        ids.iter().filter_map(|&i| f(&per_class[i])).collect()
    };
    let ap_of = |c: &ClassMetrics| c.ap;
    let ar_of = |c: &ClassMetrics| if c.n_gt > 0 { Some(c.ar) } else { None };
    let all: Vec<usize> = (0..vocab.len()).collect();
    let map = mean(&collect(&all, &ap_of));
    let map_base = mean(&collect(&vocab.base_ids(), &ap_of));
    let map_novel = mean(&collect(&vocab.novel_ids(), &ap_of));
    let mar = mean(&collect(&all, &ar_of));
    let mar_base = mean(&collect(&vocab.base_ids(), &ar_of));
    let mar_novel = mean(&collect(&vocab.novel_ids(), &ar_of));
    Ok(EvalReport {
        per_class,
        map,
        map_base,
        map_novel,
        mar,
        mar_base,
        mar_novel,
        hm_ap: harmonic_mean(map_base, map_novel),
        hm_ar: harmonic_mean(mar_base, mar_novel),
        pr_curves,
    })
}

/// Fraction of (optionally category-restricted) ground truth covered by any
/// detection at `iou_thresh`, ignoring predicted categories.
pub fn class_agnostic_recall(
    dets: &[DetectionResult],
    gts: &BTreeMap<u64, Vec<Instance>>,
    restrict_gt: Option<&[usize]>,
    iou_thresh: f64,
) -> f64 {
    let outcome = match_detections(dets, gts, iou_thresh, true);
    let mut matched = 0usize;
    let mut total = 0usize;
    for (img, list) in gts {
        let flags = &outcome.gt_matched[img];
        for (gi, inst) in list.iter().enumerate() {
            if inst.difficult {
                continue;
            }
            if let Some(cats) = restrict_gt {
                if !cats.contains(&inst.category_id) {
                    continue;
                }
            }
            total += 1;
            if flags[gi] {
                matched += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// Flat CSV rendering of a report.
pub fn report_to_csv(report: &EvalReport) -> String {
    let fmt_ap = |ap: Option<f64>| ap.map(|v| format!("{v}")).unwrap_or_default();
    let mut out = String::from("class,ap,ar,n_gt,n_det\n");
    for c in &report.per_class {
        out.push_str(&format!("{},{},{},{},{}\n", c.name, fmt_ap(c.ap), c.ar, c.n_gt, c.n_det));
    }
    out.push_str(&format!("mAP,{},,,\n", report.map));
    out.push_str(&format!("mAP_base,{},,,\n", report.map_base));
    out.push_str(&format!("mAP_novel,{},,,\n", report.map_novel));
    out.push_str(&format!("mAR,{},,,\n", report.mar));
    out.push_str(&format!("mAR_base,{},,,\n", report.mar_base));
    out.push_str(&format!("mAR_novel,{},,,\n", report.mar_novel));
    out.push_str(&format!("HM_AP,{},,,\n", report.hm_ap));
    out.push_str(&format!("HM_AR,{},,,\n", report.hm_ar));
    out
}

/// PR samples for one class as CSV.
pub fn pr_curve_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("recall,precision\n");
    for (r, p) in points {
        out.push_str(&format!("{r},{p}\n"));
    }
    out
}

const CSV_HEADER_H: &str = "image_id,category,score,x1,y1,x2,y2";
const CSV_HEADER_O: &str = "image_id,category,score,cx,cy,w,h,a";

/// Write detections as CSV; horizontal and oriented boxes use different
/// column sets and must not be mixed in one file.
pub fn detections_to_csv(dets: &[DetectionResult], vocab: &Vocabulary) -> Result<String> {
    let oriented = match dets.first() {
        Some(d) => matches!(d.bbox, BoxAny::O(_)),
        None => false,
    };
    let mut out = String::from(if oriented { CSV_HEADER_O } else { CSV_HEADER_H });
    out.push('\n');
    for d in dets {
        let name = vocab.name(d.category_id);
        match (oriented, &d.bbox) {
            (false, BoxAny::H(b)) => out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                d.image_id, name, d.score, b.x1, b.y1, b.x2, b.y2
            )),
            (true, BoxAny::O(b)) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                d.image_id, name, d.score, b.cx, b.cy, b.w, b.h, b.a
            )),
            _ => return Err(Error::Eval("mixed box kinds in one detection file".into())),
        }
    }
    Ok(out)
}

/// Parse the detections CSV; the header decides the box kind.
pub fn detections_from_csv(text: &str, vocab: &Vocabulary) -> Result<Vec<DetectionResult>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Eval("empty detections file".into()))?;
    let oriented = match header.trim() {
        CSV_HEADER_H => false,
        CSV_HEADER_O => true,
        other => return Err(Error::Eval(format!("unrecognized header {other:?}"))),
    };
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parts: Vec<&str> = line.split(',').collect();
        let expected = if oriented { 8 } else { 7 };
        if parts.len() != expected {
            return Err(Error::Eval(format!(
                "line {lineno}: expected {expected} columns, found {}",
                parts.len()
            )));
        }
        let image_id: u64 = parts[0]
            .parse()
            .map_err(|e| Error::Eval(format!("line {lineno}: {e}")))?;
        let category_id = vocab
            .id_of(parts[1])
            .ok_or_else(|| Error::Eval(format!("line {lineno}: unknown category {:?}", parts[1])))?;
        let score: f64 = parts[2]
            .parse()
            .map_err(|e| Error::Eval(format!("line {lineno}: {e}")))?;
        let nums: Vec<f64> = parts[3..]
            .iter()
            .map(|p| p.parse::<f64>().map_err(|e| Error::Eval(format!("line {lineno}: {e}"))))
            .collect::<Result<_>>()?;
        let bbox = if oriented {
            BoxAny::O(OBox::new(nums[0], nums[1], nums[2], nums[3], nums[4])
                .map_err(|e| Error::Eval(format!("line {lineno}: {e}")))?)
        } else {
            BoxAny::H(HBox::new(nums[0], nums[1], nums[2], nums[3])
                .map_err(|e| Error::Eval(format!("line {lineno}: {e}")))?)
        };
        out.push(DetectionResult {
            image_id,
            bbox,
            category_id,
            score,
        });
    }
    Ok(out)
}
