//! Horizontal and rotated box arithmetic.
//!
//! All operations here are pure functions over immutable inputs. Rotated
//! intersection uses Sutherland–Hodgman clipping of counter-clockwise quads
//! with shoelace areas, which is exact for convex quads.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Boxes with `w*h` below this are rejected as degenerate.
pub const MIN_BOX_AREA: f64 = 1e-6;

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl HBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = HBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite =
            self.x1.is_finite() && self.y1.is_finite() && self.x2.is_finite() && self.y2.is_finite();
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::Geometry(format!(
                "invalid hbox ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        if self.area() < MIN_BOX_AREA {
            return Err(Error::Geometry(format!("degenerate hbox, area {}", self.area())));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> HBox {
        HBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Clamp into `[0, w] x [0, h]`; `None` when nothing of substance is left.
    pub fn clamp_to(&self, w: f64, h: f64) -> Option<HBox> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(w);
        let y2 = self.y2.min(h);
        if x2 - x1 <= 0.0 || y2 - y1 <= 0.0 {
            return None;
        }
        let c = HBox { x1, y1, x2, y2 };
        if c.area() < MIN_BOX_AREA {
            None
        } else {
            Some(c)
        }
    }

    pub fn to_obox(&self) -> OBox {
        let (cx, cy) = self.center();
        OBox {
            cx,
            cy,
            w: self.width(),
            h: self.height(),
            a: 0.0,
        }
    }
}

/// Rotated box: center, side lengths, rotation angle in radians.
///
/// The canonical angle range is `[-pi/2, pi/2)`; rotating a rectangle by pi
/// maps it onto itself, so reduction is pi-periodic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub a: f64,
}

impl OBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, a: f64) -> Result<Self> {
        let b = OBox { cx, cy, w, h, a };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.cx.is_finite()
            && self.cy.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.a.is_finite();
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Geometry(format!(
                "invalid obox ({}, {}, {}, {}, {})",
                self.cx, self.cy, self.w, self.h, self.a
            )));
        }
        if self.area() < MIN_BOX_AREA {
            return Err(Error::Geometry(format!("degenerate obox, area {}", self.area())));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Fold the angle into `[-pi/2, pi/2)`. Idempotent; the vertex set of the
    /// induced polygon is unchanged.
    pub fn canonical(&self) -> OBox {
        let mut a = self.a.rem_euclid(PI);
        if a >= FRAC_PI_2 {
            a -= PI;
        }
        OBox { a, ..*self }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> OBox {
        OBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Corner points, counter-clockwise.
    pub fn to_quad(&self) -> ConvexQuad {
        let (sin, cos) = self.a.sin_cos();
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        let corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
        let mut pts = [[0.0; 2]; 4];
        for (i, (x, y)) in corners.iter().enumerate() {
            pts[i] = [self.cx + x * cos - y * sin, self.cy + x * sin + y * cos];
        }
        ConvexQuad { pts }
    }

    /// Smallest axis-aligned box containing this one.
    pub fn enclosing_hbox(&self) -> HBox {
        let q = self.to_quad();
        let xs = q.pts.iter().map(|p| p[0]);
        let ys = q.pts.iter().map(|p| p[1]);
        HBox {
            x1: xs.clone().fold(f64::INFINITY, f64::min),
            y1: ys.clone().fold(f64::INFINITY, f64::min),
            x2: xs.fold(f64::NEG_INFINITY, f64::max),
            y2: ys.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Four vertices in counter-clockwise order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexQuad {
    pub pts: [[f64; 2]; 4],
}

impl ConvexQuad {
    pub fn area(&self) -> f64 {
        shoelace(&self.pts).abs()
    }
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn shoelace(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x1, y1] = pts[i];
        let [x2, y2] = pts[(i + 1) % n];
        acc += x1 * y2 - x2 * y1;
    }
    0.5 * acc
}

fn inside(q: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> bool {
    // Left of (or on) the directed edge p1 -> p2 of a CCW clip polygon.
    // Points within a rounding-scale band of the edge count as inside;
    // otherwise near-coincident quads intersect near-parallel edges and the
    // intersection point blows up.
    let ex = p2[0] - p1[0];
    let ey = p2[1] - p1[1];
    let cross = ex * (q[1] - p1[1]) - ey * (q[0] - p1[0]);
    let len = (ex * ex + ey * ey).sqrt();
    let scale = 1.0 + q[0].abs().max(q[1].abs());
    cross >= -1e-12 * len * scale
}

fn edge_intersection(s: [f64; 2], e: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> [f64; 2] {
    let dc = [p1[0] - p2[0], p1[1] - p2[1]];
    let dp = [s[0] - e[0], s[1] - e[1]];
    let n1 = p1[0] * p2[1] - p1[1] * p2[0];
    let n2 = s[0] * e[1] - s[1] * e[0];
    let den = dc[0] * dp[1] - dc[1] * dp[0];
    [(n1 * dp[0] - n2 * dc[0]) / den, (n1 * dp[1] - n2 * dc[1]) / den]
}

/// Clip a convex CCW polygon by a convex CCW quad (Sutherland–Hodgman).
pub fn clip_polygon(subject: &[[f64; 2]], clip: &ConvexQuad) -> Vec<[f64; 2]> {
    let mut poly: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..4 {
        if poly.is_empty() {
            break;
        }
        let p1 = clip.pts[i];
        let p2 = clip.pts[(i + 1) % 4];
        let input = std::mem::take(&mut poly);
        let n = input.len();
        for j in 0..n {
            let s = input[(j + n - 1) % n];
            let e = input[j];
            let e_in = inside(e, p1, p2);
            let s_in = inside(s, p1, p2);
            if e_in {
                if !s_in {
                    poly.push(edge_intersection(s, e, p1, p2));
                }
                poly.push(e);
            } else if s_in {
                poly.push(edge_intersection(s, e, p1, p2));
            }
        }
    }
    poly
}

/// Intersection area of two convex quads.
pub fn quad_intersection_area(a: &ConvexQuad, b: &ConvexQuad) -> f64 {
    shoelace(&clip_polygon(&a.pts, b)).abs()
}

/// IoU of axis-aligned boxes.
pub fn iou_h(a: &HBox, b: &HBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of rotated boxes via polygon clipping.
pub fn iou_r(a: &OBox, b: &OBox) -> f64 {
    let inter = quad_intersection_area(&a.to_quad(), &b.to_quad());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A box of either kind; most of the pipeline is agnostic to the kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoxAny {
    H(HBox),
    O(OBox),
}

impl BoxAny {
    /// Regression dimensionality for this kind of box.
    pub fn k(&self) -> usize {
        match self {
            BoxAny::H(_) => 4,
            BoxAny::O(_) => 5,
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            BoxAny::H(b) => b.area(),
            BoxAny::O(b) => b.area(),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        match self {
            BoxAny::H(b) => b.center(),
            BoxAny::O(b) => (b.cx, b.cy),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BoxAny::H(b) => b.validate(),
            BoxAny::O(b) => b.validate(),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoxAny {
        match self {
            BoxAny::H(b) => BoxAny::H(b.translate(dx, dy)),
            BoxAny::O(b) => BoxAny::O(b.translate(dx, dy)),
        }
    }

    /// IoU; mixed kinds promote the horizontal side to a zero-angle rotated
    /// box.
    pub fn iou(&self, other: &BoxAny) -> f64 {
        match (self, other) {
            (BoxAny::H(a), BoxAny::H(b)) => iou_h(a, b),
            (BoxAny::O(a), BoxAny::O(b)) => iou_r(a, b),
            (BoxAny::H(a), BoxAny::O(b)) => iou_r(&a.to_obox(), b),
            (BoxAny::O(a), BoxAny::H(b)) => iou_r(a, &b.to_obox()),
        }
    }
}

/// Greedy non-maximum suppression.
///
/// Returns indices of kept detections, ordered by descending score with ties
/// broken by insertion index. When `class_aware` is set only same-category
/// pairs suppress each other. A candidate is suppressed when its IoU with an
/// already kept box strictly exceeds `iou_thresh`.
pub fn nms(dets: &[(BoxAny, f64, usize)], iou_thresh: f64, class_aware: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].1.total_cmp(&dets[i].1).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let (ref bi, _, ci) = dets[i];
        let suppressed = kept.iter().any(|&j| {
            let (ref bj, _, cj) = dets[j];
            (!class_aware || ci == cj) && bi.iou(bj) > iou_thresh
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Tiling of an image into fixed-size overlapping patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub size: u32,
    pub overlap: u32,
    pub width: u32,
    pub height: u32,
    /// Patch origins, row-major.
    pub origins: Vec<(u32, u32)>,
}

fn axis_origins(extent: u32, size: u32, stride: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut pos = 0u32;
    loop {
        if pos + size >= extent {
            out.push(extent.saturating_sub(size));
            break;
        }
        out.push(pos);
        pos += stride;
    }
    out
}

/// Tile a `width x height` image; the stride is `size - overlap` and the last
/// patch on each axis is clamped to the image border.
pub fn split_patches(width: u32, height: u32, size: u32, overlap: u32) -> Result<PatchGrid> {
    if width == 0 || height == 0 {
        return Err(Error::Geometry(format!("empty image {width}x{height}")));
    }
    if overlap >= size {
        return Err(Error::Geometry(format!(
            "overlap {overlap} must be smaller than patch size {size}"
        )));
    }
    let stride = size - overlap;
    let xs = axis_origins(width, size, stride);
    let ys = axis_origins(height, size, stride);
    let mut origins = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            origins.push((x, y));
        }
    }
    Ok(PatchGrid {
        size,
        overlap,
        width,
        height,
        origins,
    })
}

/// A detection expressed in the local frame of one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchDetection {
    pub patch_index: usize,
    pub bbox: BoxAny,
    pub score: f64,
    pub category_id: usize,
}

/// Translate per-patch detections back to image coordinates and resolve
/// cross-patch duplicates with NMS.
pub fn remap_and_merge(
    dets: &[PatchDetection],
    grid: &PatchGrid,
    iou_thresh: f64,
    class_aware: bool,
) -> Result<Vec<(BoxAny, f64, usize)>> {
    let mut global: Vec<(BoxAny, f64, usize)> = Vec::with_capacity(dets.len());
    for d in dets {
        let (ox, oy) = *grid.origins.get(d.patch_index).ok_or_else(|| {
            Error::Geometry(format!(
                "detection references unknown patch {} (grid has {})",
                d.patch_index,
                grid.origins.len()
            ))
        })?;
        global.push((d.bbox.translate(ox as f64, oy as f64), d.score, d.category_id));
    }
    let kept = nms(&global, iou_thresh, class_aware);
    Ok(kept.into_iter().map(|i| global[i]).collect())
}
