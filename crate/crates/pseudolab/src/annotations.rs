//! DOTA-style annotations, vocabularies and dataset assembly.
//!
//! The text formats are deliberately small:
//! - annotation files: one object per line, `x1 y1 x2 y2 x3 y3 x4 y4 name 0|1`,
//!   metadata lines (`imagesource:...`, `gsd:...`) skipped;
//! - vocabulary files: one category per line, `*` suffix marks novel classes;
//! - manifests: one image per line, `id path width height annotation-path`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{shoelace, BoxAny, ConvexQuad, HBox, OBox, PatchGrid};

/// Boxes whose clamped area drops below this fraction of the original are
/// discarded during cropping.
pub const CROP_KEEP_FRACTION: f64 = 0.2;

/// Ordered category names with a base/novel split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    names: Vec<String>,
    novel: Vec<bool>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>, novel: Vec<bool>) -> Result<Self> {
        if names.len() != novel.len() {
            return Err(Error::Annotation("names/novel length mismatch".into()));
        }
        if names.is_empty() {
            return Err(Error::Annotation("empty vocabulary".into()));
        }
        for (i, a) in names.iter().enumerate() {
            if a.is_empty() || a.contains(char::is_whitespace) {
                return Err(Error::Annotation(format!("bad category name {a:?}")));
            }
            if names[..i].contains(a) {
                return Err(Error::Annotation(format!("duplicate category {a:?}")));
            }
        }
        Ok(Vocabulary { names, novel })
    }

    /// Parse `name` / `name*` lines; `*` marks a novel category.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut novel = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(base) = line.strip_suffix('*') {
                names.push(base.trim().to_string());
                novel.push(true);
            } else {
                names.push(line.to_string());
                novel.push(false);
            }
        }
        Vocabulary::new(names, novel)
    }

    pub fn write(&self) -> String {
        let mut out = String::new();
        for (name, &novel) in self.names.iter().zip(&self.novel) {
            out.push_str(name);
            if novel {
                out.push('*');
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_novel(&self, id: usize) -> bool {
        self.novel[id]
    }

    pub fn base_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.novel[i]).collect()
    }

    pub fn novel_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.novel[i]).collect()
    }
}

/// One annotated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub bbox: BoxAny,
    pub category_id: usize,
    pub difficult: bool,
}

/// Image metadata plus its annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<Instance>,
}

/// A training corpus: labeled records carry base-category annotations only,
/// unlabeled records carry none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocabulary: Vocabulary,
    pub labeled: Vec<ImageRecord>,
    pub unlabeled: Vec<ImageRecord>,
}

/// Per-category instance counts retained when labels are hidden; used only by
/// oracle-side evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStats {
    pub per_category: Vec<usize>,
    pub total: usize,
}

/// What to do with annotation lines naming a category outside the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownCategory {
    Skip,
    Fail,
}

fn is_metadata_line(line: &str) -> bool {
    // DOTA headers look like `imagesource:GoogleEarth` / `gsd:0.146`.
    match line.split_whitespace().next() {
        Some(first) => first.contains(':'),
        None => true,
    }
}

/// Fit the minimum-area enclosing rotated rectangle of a point set.
pub fn fit_min_area_rect(pts: &[[f64; 2]]) -> Result<OBox> {
    let hull = convex_hull(pts);
    if hull.len() < 3 {
        return Err(Error::Annotation(format!("degenerate quad {pts:?}")));
    }
    let mut best: Option<(f64, OBox)> = None;
    for i in 0..hull.len() {
        let p = hull[i];
        let q = hull[(i + 1) % hull.len()];
        let theta = (q[1] - p[1]).atan2(q[0] - p[0]);
        let (sin, cos) = theta.sin_cos();
        let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in &hull {
            let u = r[0] * cos + r[1] * sin;
            let v = -r[0] * sin + r[1] * cos;
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let (w, h) = (umax - umin, vmax - vmin);
        let area = w * h;
        if best.as_ref().map_or(true, |(a, _)| area < *a - 1e-12) {
            let uc = 0.5 * (umin + umax);
            let vc = 0.5 * (vmin + vmax);
            let rect = OBox {
                cx: uc * cos - vc * sin,
                cy: uc * sin + vc * cos,
                w,
                h,
                a: theta,
            };
            best = Some((area, rect.canonical()));
        }
    }
    let (_, rect) = best.unwrap();
    rect.validate()?;
    Ok(rect)
}

/// Andrew's monotone chain; returns the hull counter-clockwise.
fn convex_hull(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = pts.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Parse a DOTA-style annotation stream into oriented instances.
///
/// Quads are converted to canonical rotated boxes through a minimum-area fit
/// of the four corners. Malformed lines error with their line number; unknown
/// categories either skip the line or fail, per `on_unknown`.
pub fn parse_dota(
    text: &str,
    vocab: &Vocabulary,
    on_unknown: UnknownCategory,
) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = idx + 1;
        if line.is_empty() || is_metadata_line(line) {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 10 {
            return Err(Error::Annotation(format!(
                "line {lineno}: expected 10 fields, found {}",
                parts.len()
            )));
        }
        let mut coords = [0.0f64; 8];
        for (i, p) in parts[..8].iter().enumerate() {
            coords[i] = p
                .parse()
                .map_err(|e| Error::Annotation(format!("line {lineno}: bad coordinate {p:?}: {e}")))?;
        }
        let name = parts[8];
        let difficult = match parts[9] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Annotation(format!(
                    "line {lineno}: difficulty flag must be 0 or 1, found {other:?}"
                )))
            }
        };
        let category_id = match vocab.id_of(name) {
            Some(id) => id,
            None => match on_unknown {
                UnknownCategory::Skip => continue,
                UnknownCategory::Fail => {
                    return Err(Error::Annotation(format!(
                        "line {lineno}: unknown category {name:?}"
                    )))
                }
            },
        };
        let quad = [
            [coords[0], coords[1]],
            [coords[2], coords[3]],
            [coords[4], coords[5]],
            [coords[6], coords[7]],
        ];
        let rect = fit_min_area_rect(&quad)
            .map_err(|e| Error::Annotation(format!("line {lineno}: {e}")))?;
        out.push(Instance {
            bbox: BoxAny::O(rect),
            category_id,
            difficult,
        });
    }
    Ok(out)
}

/// Emit instances in the DOTA text format. Horizontal boxes are written as
/// their four corners.
pub fn write_dota(instances: &[Instance], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for inst in instances {
        let quad = match inst.bbox {
            BoxAny::O(b) => b.to_quad(),
            BoxAny::H(b) => b.to_obox().to_quad(),
        };
        for p in quad.pts {
            out.push_str(&format!("{} {} ", p[0], p[1]));
        }
        out.push_str(vocab.name(inst.category_id));
        out.push_str(if inst.difficult { " 1\n" } else { " 0\n" });
    }
    out
}

/// Strip instances from records, keeping metadata. Per-category counts of the
/// hidden labels are returned for oracle-side statistics.
pub fn mask_to_unlabeled(records: &[ImageRecord], n_categories: usize) -> (Vec<ImageRecord>, HiddenStats) {
    let mut per_category = vec![0usize; n_categories];
    let mut total = 0;
    let stripped = records
        .iter()
        .map(|r| {
            for inst in &r.instances {
                if inst.category_id < n_categories {
                    per_category[inst.category_id] += 1;
                }
                total += 1;
            }
            ImageRecord {
                instances: Vec::new(),
                ..r.clone()
            }
        })
        .collect();
    (stripped, HiddenStats { per_category, total })
}

/// Remove instances of novel categories from labeled records.
pub fn filter_base_annotations(records: &[ImageRecord], vocab: &Vocabulary) -> Vec<ImageRecord> {
    records
        .iter()
        .map(|r| ImageRecord {
            instances: r
                .instances
                .iter()
                .filter(|i| !vocab.is_novel(i.category_id))
                .cloned()
                .collect(),
            ..r.clone()
        })
        .collect()
}

/// Clamp an instance into a `w x h` viewport. Returns `None` when the box
/// falls outside or the clamped area shrinks below [`CROP_KEEP_FRACTION`] of
/// the original.
pub fn clamp_instance(inst: &Instance, w: f64, h: f64) -> Option<Instance> {
    let original_area = inst.bbox.area();
    let clamped = match inst.bbox {
        BoxAny::H(b) => BoxAny::H(b.clamp_to(w, h)?),
        BoxAny::O(b) => {
            let viewport = ConvexQuad {
                pts: [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]],
            };
            let clipped = crate::geometry::clip_polygon(&b.to_quad().pts, &viewport);
            if clipped.len() < 3 || shoelace(&clipped).abs() < crate::geometry::MIN_BOX_AREA {
                return None;
            }
            BoxAny::O(fit_min_area_rect(&clipped).ok()?)
        }
    };
    if clamped.area() < CROP_KEEP_FRACTION * original_area {
        return None;
    }
    Some(Instance {
        bbox: clamped,
        ..inst.clone()
    })
}

/// Project a record's instances into every patch of a grid. Patch records get
/// ids `image_id * stride + patch_index` and a `#<patch_index>` path suffix.
pub fn crop_to_patches(record: &ImageRecord, grid: &PatchGrid) -> Vec<ImageRecord> {
    let n = grid.origins.len() as u64;
    grid.origins
        .iter()
        .enumerate()
        .map(|(pi, &(ox, oy))| {
            let pw = grid.size.min(grid.width - ox) as f64;
            let ph = grid.size.min(grid.height - oy) as f64;
            let instances = record
                .instances
                .iter()
                .filter_map(|inst| {
                    let moved = Instance {
                        bbox: inst.bbox.translate(-(ox as f64), -(oy as f64)),
                        ..inst.clone()
                    };
                    clamp_instance(&moved, pw, ph)
                })
                .collect();
            ImageRecord {
                image_id: record.image_id * n + pi as u64,
                path: format!("{}#{}", record.path, pi),
                width: pw as u32,
                height: ph as u32,
                instances,
            }
        })
        .collect()
}

/// A manifest entry: image metadata plus the path of its annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: u64,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub annotation_path: String,
}

/// Parse a manifest: whitespace-separated
/// `id path width height annotation-path` lines.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(Error::Annotation(format!(
                "manifest line {lineno}: expected 5 fields, found {}",
                parts.len()
            )));
        }
        let entry = ManifestEntry {
            image_id: parts[0]
                .parse()
                .map_err(|e| Error::Annotation(format!("manifest line {lineno}: {e}")))?,
            path: parts[1].to_string(),
            width: parts[2]
                .parse()
                .map_err(|e| Error::Annotation(format!("manifest line {lineno}: {e}")))?,
            height: parts[3]
                .parse()
                .map_err(|e| Error::Annotation(format!("manifest line {lineno}: {e}")))?,
            annotation_path: parts[4].to_string(),
        };
        if let Some(previous) = seen.insert(entry.image_id, lineno) {
            return Err(Error::Annotation(format!(
                "manifest line {lineno}: image id {} already used on line {previous}",
                entry.image_id
            )));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            e.image_id, e.path, e.width, e.height, e.annotation_path
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou_r, split_patches};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::parse("plane\nship\nairport*\nwindmill*\n").unwrap()
    }

    #[test]
    fn vocabulary_round_trip_and_split() {
        let v = vocab();
        assert_eq!(v.len(), 4);
        assert_eq!(v.base_ids(), vec![0, 1]);
        assert_eq!(v.novel_ids(), vec![2, 3]);
        assert_eq!(Vocabulary::parse(&v.write()).unwrap(), v);
        assert!(Vocabulary::parse("dup\ndup\n").is_err());
    }

    #[test]
    fn parse_dota_axis_aligned_square() {
        let text = "imagesource:GoogleEarth\ngsd:0.1\n0 0 2 0 2 2 0 2 plane 0\n";
        let got = parse_dota(text, &vocab(), UnknownCategory::Fail).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].category_id, 0);
        assert!(!got[0].difficult);
        match got[0].bbox {
            BoxAny::O(b) => {
                assert_relative_eq!(b.cx, 1.0, epsilon = 1e-9);
                assert_relative_eq!(b.cy, 1.0, epsilon = 1e-9);
                assert_relative_eq!(b.w, 2.0, epsilon = 1e-9);
                assert_relative_eq!(b.h, 2.0, epsilon = 1e-9);
                assert_relative_eq!(b.a, 0.0, epsilon = 1e-9);
            }
            _ => panic!("expected oriented box"),
        }
    }

    #[test]
    fn parse_dota_empty_and_errors() {
        assert!(parse_dota("", &vocab(), UnknownCategory::Fail).unwrap().is_empty());
        let bad = "0 0 2 0 2 2 0 plane 0\n";
        let err = parse_dota(bad, &vocab(), UnknownCategory::Fail).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let unknown = "0 0 2 0 2 2 0 2 zebra 0\n";
        assert!(parse_dota(unknown, &vocab(), UnknownCategory::Fail).is_err());
        assert!(parse_dota(unknown, &vocab(), UnknownCategory::Skip).unwrap().is_empty());
    }

    #[test]
    fn quad_fit_round_trips_rotated_boxes() {
        let mut rng = crate::rng::stream(&[42, 0]);
        for _ in 0..100 {
            let b = OBox {
                cx: rng.gen_range(-20.0..20.0),
                cy: rng.gen_range(-20.0..20.0),
                w: rng.gen_range(1.0..15.0),
                h: rng.gen_range(1.0..15.0),
                a: rng.gen_range(-3.0..3.0),
            };
            let fitted = fit_min_area_rect(&b.to_quad().pts).unwrap();
            assert!(
                iou_r(&b.canonical(), &fitted) > 1.0 - 1e-6,
                "fit drifted for {b:?} -> {fitted:?}"
            );
        }
    }

    #[test]
    fn dota_write_parse_is_fixed_point() {
        let v = vocab();
        let mut rng = crate::rng::stream(&[9, 9]);
        let instances: Vec<Instance> = (0..20)
            .map(|i| Instance {
                bbox: BoxAny::O(OBox {
                    cx: rng.gen_range(10.0..90.0),
                    cy: rng.gen_range(10.0..90.0),
                    w: rng.gen_range(2.0..10.0),
                    h: rng.gen_range(2.0..10.0),
                    a: rng.gen_range(-1.5..1.5),
                }),
                category_id: i % v.len(),
                difficult: i % 7 == 0,
            })
            .collect();
        let text1 = write_dota(&instances, &v);
        let parsed1 = parse_dota(&text1, &v, UnknownCategory::Fail).unwrap();
        let text2 = write_dota(&parsed1, &v);
        let parsed2 = parse_dota(&text2, &v, UnknownCategory::Fail).unwrap();
        // parse(write(parse(write(x)))) is a fixed point of parse-write.
        assert_eq!(parsed1.len(), parsed2.len());
        for (a, b) in parsed1.iter().zip(&parsed2) {
            assert_eq!(a.category_id, b.category_id);
            assert_eq!(a.difficult, b.difficult);
            match (&a.bbox, &b.bbox) {
                (BoxAny::O(x), BoxAny::O(y)) => assert!(iou_r(x, y) > 1.0 - 1e-6),
                _ => panic!("expected oriented boxes"),
            }
        }
    }

    fn record(instances: Vec<Instance>) -> ImageRecord {
        ImageRecord {
            image_id: 1,
            path: "img1.png".into(),
            width: 100,
            height: 100,
            instances,
        }
    }

    #[test]
    fn mask_and_filter_ops() {
        let v = vocab();
        let mk = |cat: usize, x: f64| Instance {
            bbox: BoxAny::H(HBox::new(x, 10.0, x + 5.0, 20.0).unwrap()),
            category_id: cat,
            difficult: false,
        };
        let rec = record(vec![mk(0, 0.0), mk(2, 10.0), mk(3, 20.0)]);

        let (stripped, stats) = mask_to_unlabeled(&[rec.clone()], v.len());
        assert!(stripped[0].instances.is_empty());
        assert_eq!(stripped[0].path, rec.path);
        assert_eq!(stats.total, 3);
        assert_eq!(stats.per_category, vec![1, 0, 1, 1]);

        let (empty, zero_stats) = mask_to_unlabeled(&[], v.len());
        assert!(empty.is_empty());
        assert_eq!(zero_stats.total, 0);

        let filtered = filter_base_annotations(&[rec.clone()], &v);
        assert_eq!(filtered[0].instances.len(), 1);
        assert_eq!(filtered[0].instances[0].category_id, 0);

        let all_novel = record(vec![mk(2, 0.0), mk(3, 10.0)]);
        assert!(filter_base_annotations(&[all_novel], &v)[0].instances.is_empty());
    }

    #[test]
    fn filter_base_matches_per_category_scan() {
        let v = vocab();
        let mut rng = crate::rng::stream(&[17, 4]);
        let instances: Vec<Instance> = (0..50)
            .map(|_| Instance {
                bbox: BoxAny::H(
                    HBox::new(0.0, 0.0, rng.gen_range(1.0..10.0), rng.gen_range(1.0..10.0)).unwrap(),
                ),
                category_id: rng.gen_range(0..v.len()),
                difficult: false,
            })
            .collect();
        let rec = record(instances.clone());
        let filtered = filter_base_annotations(&[rec], &v);
        let expected: usize = instances
            .iter()
            .filter(|i| !v.novel_ids().contains(&i.category_id))
            .count();
        assert_eq!(filtered[0].instances.len(), expected);
    }

    #[test]
    fn clamp_drops_mostly_outside_boxes() {
        let inside = Instance {
            bbox: BoxAny::H(HBox::new(10.0, 10.0, 20.0, 20.0).unwrap()),
            category_id: 0,
            difficult: false,
        };
        assert!(clamp_instance(&inside, 100.0, 100.0).is_some());

        // 90% outside the viewport: dropped by the area rule.
        let out = Instance {
            bbox: BoxAny::H(HBox::new(-90.0, 0.0, 10.0, 10.0).unwrap()),
            category_id: 0,
            difficult: false,
        };
        assert!(clamp_instance(&out, 100.0, 100.0).is_none());

        // Half inside: kept and clamped.
        let half = Instance {
            bbox: BoxAny::H(HBox::new(-10.0, 0.0, 10.0, 10.0).unwrap()),
            category_id: 0,
            difficult: false,
        };
        let clamped = clamp_instance(&half, 100.0, 100.0).unwrap();
        match clamped.bbox {
            BoxAny::H(b) => assert_eq!(b.x1, 0.0),
            _ => panic!(),
        }
    }

    #[test]
    fn crop_to_patches_keeps_interior_objects() {
        let grid = split_patches(1848, 1024, 1024, 200).unwrap();
        let inst = Instance {
            bbox: BoxAny::H(HBox::new(900.0, 100.0, 960.0, 160.0).unwrap()),
            category_id: 0,
            difficult: false,
        };
        let rec = ImageRecord {
            image_id: 5,
            path: "scene.png".into(),
            width: 1848,
            height: 1024,
            instances: vec![inst],
        };
        let patches = crop_to_patches(&rec, &grid);
        assert_eq!(patches.len(), 2);
        // The object sits in the overlap zone: both patches carry it.
        assert_eq!(patches[0].instances.len(), 1);
        assert_eq!(patches[1].instances.len(), 1);
        match patches[1].instances[0].bbox {
            BoxAny::H(b) => assert_relative_eq!(b.x1, 900.0 - 824.0, epsilon = 1e-9),
            _ => panic!(),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry {
                image_id: 0,
                path: "images/a.png".into(),
                width: 800,
                height: 600,
                annotation_path: "labels/a.txt".into(),
            },
            ManifestEntry {
                image_id: 1,
                path: "images/b.png".into(),
                width: 1024,
                height: 1024,
                annotation_path: "labels/b.txt".into(),
            },
        ];
        let text = write_manifest(&entries);
        assert_eq!(parse_manifest(&text).unwrap(), entries);
        assert!(parse_manifest("0 a.png 10 10 a.txt\n0 b.png 10 10 b.txt\n").is_err());
    }

    proptest! {
        #[test]
        fn prop_quad_fit_has_unit_iou_with_source(
            cx in -20.0..20.0f64,
            cy in -20.0..20.0f64,
            w in 1.0..12.0f64,
            h in 1.0..12.0f64,
            a in -3.0..3.0f64,
        ) {
            let b = OBox { cx, cy, w, h, a };
            let fitted = fit_min_area_rect(&b.to_quad().pts).unwrap();
            prop_assert!(iou_r(&b, &fitted) > 1.0 - 1e-6);
        }
    }
}
