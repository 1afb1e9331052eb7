//! Box algebra and SSD-style prior boxes.
//!
//! Everything in this module works in normalized coordinates (fractions of
//! the image side) unless a caller deliberately passes pixel boxes. The
//! types validate on construction, so the arithmetic helpers never have to
//! re-check extents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate in box ({0}, {1}, {2}, {3})")]
    NonFinite(f64, f64, f64, f64),
    #[error("degenerate box: extent must be positive, got ({xmin}, {ymin}, {xmax}, {ymax})")]
    Degenerate { xmin: f64, ymin: f64, xmax: f64, ymax: f64 },
    #[error("box lies entirely outside the unit square")]
    EmptyAfterClip,
    #[error("decoded box overflowed (width {w}, height {h})")]
    DecodeOverflow { w: f64, h: f64 },
    #[error("invalid anchor config: {0}")]
    InvalidAnchorConfig(String),
    #[error("variances must be positive and finite, got ({0}, {1})")]
    InvalidVariances(f64, f64),
}

/// Axis-aligned box stored by its corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BoundingBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        if !(xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite()) {
            return Err(GeometryError::NonFinite(xmin, ymin, xmax, ymax));
        }
        if xmin >= xmax || ymin >= ymax {
            return Err(GeometryError::Degenerate { xmin, ymin, xmax, ymax });
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    pub fn ymin(&self) -> f64 {
        self.ymin
    }

    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_center(&self) -> CenterBox {
        CenterBox {
            cx: 0.5 * (self.xmin + self.xmax),
            cy: 0.5 * (self.ymin + self.ymax),
            w: self.width(),
            h: self.height(),
        }
    }

    /// Intersection over union. Always in `[0, 1]`, symmetric, and exactly 1
    /// for a box against itself.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let iw = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let ih = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    /// Clamps the box into `[0, 1]²`, failing if nothing of it remains.
    pub fn clip_to_unit(&self) -> Result<BoundingBox, GeometryError> {
        let c = |v: f64| v.clamp(0.0, 1.0);
        BoundingBox::new(c(self.xmin), c(self.ymin), c(self.xmax), c(self.ymax)).map_err(|_| GeometryError::EmptyAfterClip)
    }

    /// Divides pixel coordinates by the image dimensions.
    pub fn normalized(&self, width: f64, height: f64) -> Result<BoundingBox, GeometryError> {
        BoundingBox::new(self.xmin / width, self.ymin / height, self.xmax / width, self.ymax / height)
    }

    pub fn to_pixels(&self, width: f64, height: f64) -> Result<BoundingBox, GeometryError> {
        BoundingBox::new(self.xmin * width, self.ymin * height, self.xmax * width, self.ymax * height)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Free-function form of [`BoundingBox::iou`].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Center/size parametrization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl CenterBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite(cx, cy, w, h));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::Degenerate {
                xmin: cx - w / 2.0,
                ymin: cy - h / 2.0,
                xmax: cx + w / 2.0,
                ymax: cy + h / 2.0,
            });
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Corner form. Fails only when the center is so large that the half
    /// extent is lost to rounding.
    pub fn to_corner(&self) -> Result<BoundingBox, GeometryError> {
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        BoundingBox::new(self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }
}

/// Scaling applied to the center and size offsets during encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Variances {
    center: f64,
    size: f64,
}

impl Variances {
    pub fn new(center: f64, size: f64) -> Result<Self, GeometryError> {
        if !(center.is_finite() && size.is_finite() && center > 0.0 && size > 0.0) {
            return Err(GeometryError::InvalidVariances(center, size));
        }
        Ok(Self { center, size })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn size(&self) -> f64 {
        self.size
    }
}

impl Default for Variances {
    fn default() -> Self {
        Self { center: 0.1, size: 0.2 }
    }
}

impl TryFrom<[f64; 2]> for Variances {
    type Error = GeometryError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Variances::new(v[0], v[1])
    }
}

impl From<Variances> for [f64; 2] {
    fn from(v: Variances) -> Self {
        [v.center, v.size]
    }
}

/// Regression offsets of a box relative to an anchor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxOffsets {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxOffsets {
    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

pub fn encode(gt: &CenterBox, anchor: &CenterBox, variances: Variances) -> BoxOffsets {
    BoxOffsets {
        tx: (gt.cx - anchor.cx) / (anchor.w * variances.center),
        ty: (gt.cy - anchor.cy) / (anchor.h * variances.center),
        tw: (gt.w / anchor.w).ln() / variances.size,
        th: (gt.h / anchor.h).ln() / variances.size,
    }
}

/// Inverse of [`encode`], returned in corner form.
pub fn decode(off: &BoxOffsets, anchor: &CenterBox, variances: Variances) -> Result<BoundingBox, GeometryError> {
    decode_center(off, anchor, variances)?.to_corner()
}

/// Largest log size ratio a decoded box may have against its anchor: the
/// ratio itself must stay representable in `f32`, the precision networks
/// produce offsets in.
pub const MAX_LOG_SCALE: f64 = 88.72283905206835;

pub fn decode_center(off: &BoxOffsets, anchor: &CenterBox, variances: Variances) -> Result<CenterBox, GeometryError> {
    let lw = off.tw * variances.size;
    let lh = off.th * variances.size;
    let w = anchor.w * lw.exp();
    let h = anchor.h * lh.exp();
    if !(lw.abs() <= MAX_LOG_SCALE && lh.abs() <= MAX_LOG_SCALE) || w <= 0.0 || h <= 0.0 {
        return Err(GeometryError::DecodeOverflow { w, h });
    }
    let cx = anchor.cx + off.tx * anchor.w * variances.center;
    let cy = anchor.cy + off.ty * anchor.h * variances.center;
    CenterBox::new(cx, cy, w, h)
}

/// Aspect ratios used on each feature map.
///
/// In JSON this is either a flat list (shared by all layers) or one list per
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AspectRatios {
    Shared(Vec<f64>),
    PerLayer(Vec<Vec<f64>>),
}

impl AspectRatios {
    pub fn for_layer(&self, layer: usize) -> &[f64] {
        match self {
            AspectRatios::Shared(r) => r,
            AspectRatios::PerLayer(r) => &r[layer],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Square network input side in pixels.
    pub image_size: u32,
    pub feature_map_sizes: Vec<u32>,
    pub aspect_ratios: AspectRatios,
    pub s_min: f64,
    pub s_max: f64,
    pub add_extra_scale_box: bool,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            image_size: 160,
            feature_map_sizes: vec![10, 5],
            aspect_ratios: AspectRatios::Shared(vec![1.0, 2.0, 0.5]),
            s_min: 0.2,
            s_max: 0.9,
            add_extra_scale_box: true,
        }
    }
}

impl AnchorConfig {
    /// Returns every violated rule, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.image_size == 0 {
            out.push("image_size must be positive".to_string());
        }
        if self.feature_map_sizes.is_empty() {
            out.push("feature_map_sizes must not be empty".to_string());
        }
        if self.feature_map_sizes.contains(&0) {
            out.push("feature_map_sizes must be strictly positive".to_string());
        }
        if !(self.s_min > 0.0 && self.s_min <= self.s_max && self.s_max <= 1.0) {
            out.push(format!(
                "scales must satisfy 0 < s_min <= s_max <= 1 (got s_min={}, s_max={})",
                self.s_min, self.s_max
            ));
        }
        match &self.aspect_ratios {
            AspectRatios::PerLayer(r) if r.len() != self.feature_map_sizes.len() => {
                out.push(format!(
                    "aspect_ratios has {} layers but there are {} feature maps",
                    r.len(),
                    self.feature_map_sizes.len()
                ));
            }
            _ => {}
        }
        let all: Vec<f64> = match &self.aspect_ratios {
            AspectRatios::Shared(r) => r.clone(),
            AspectRatios::PerLayer(r) => r.iter().flatten().copied().collect(),
        };
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            out.push("every aspect ratio must be positive and finite".to_string());
        }
        let empty_layer = match &self.aspect_ratios {
            AspectRatios::Shared(r) => r.is_empty() && !self.add_extra_scale_box,
            AspectRatios::PerLayer(r) => r.iter().any(|l| l.is_empty()) && !self.add_extra_scale_box,
        };
        if empty_layer {
            out.push("a layer would produce no anchors".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(GeometryError::InvalidAnchorConfig(v.join("; ")))
        }
    }

    pub fn num_layers(&self) -> usize {
        self.feature_map_sizes.len()
    }

    /// Anchors per grid cell on `layer`.
    pub fn boxes_per_location(&self, layer: usize) -> usize {
        self.aspect_ratios.for_layer(layer).len() + usize::from(self.add_extra_scale_box)
    }

    /// Closed-form anchor count, `Σ f_k² · b_k`.
    pub fn anchor_count(&self) -> usize {
        self.feature_map_sizes
            .iter()
            .enumerate()
            .map(|(k, &f)| (f as usize) * (f as usize) * self.boxes_per_location(k))
            .sum()
    }

    /// Linear scale per layer, endpoints at `s_min` and `s_max`.
    pub fn layer_scales(&self) -> Vec<f64> {
        let m = self.num_layers();
        let denom = m.saturating_sub(1).max(1) as f64;
        (0..m)
            .map(|k| {
                let t = k as f64 / denom;
                self.s_min * (1.0 - t) + self.s_max * t
            })
            .collect()
    }
}

/// Position of an anchor in the generating grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorIndex {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    /// Index into the layer's ratio list; the extra scale box uses `ratios.len()`.
    pub ratio_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    boxes: Vec<CenterBox>,
    corners: Vec<BoundingBox>,
    index: Vec<AnchorIndex>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[CenterBox] {
        &self.boxes
    }

    /// Corner form of every anchor, in the same order.
    pub fn corners(&self) -> &[BoundingBox] {
        &self.corners
    }

    pub fn index(&self) -> &[AnchorIndex] {
        &self.index
    }

    pub fn get(&self, i: usize) -> Option<&CenterBox> {
        self.boxes.get(i)
    }

    /// Builds a set from explicit boxes, used by tests and ad-hoc matchers.
    pub fn from_boxes(boxes: Vec<CenterBox>) -> Result<Self, GeometryError> {
        let corners = boxes.iter().map(|b| b.to_corner()).collect::<Result<Vec<_>, _>>()?;
        let index = (0..boxes.len())
            .map(|i| AnchorIndex {
                layer: 0,
                row: 0,
                col: i,
                ratio_index: 0,
            })
            .collect();
        Ok(Self { boxes, corners, index })
    }

    /// CSV dump: `layer,row,col,ratio_index,cx,cy,w,h` with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,row,col,ratio_index,cx,cy,w,h\n");
        for (b, ix) in self.boxes.iter().zip(&self.index) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                ix.layer,
                ix.row,
                ix.col,
                ix.ratio_index,
                sig9(b.cx),
                sig9(b.cy),
                sig9(b.w),
                sig9(b.h)
            ));
        }
        out
    }
}

/// Formats with 9 significant digits, dropping trailing zeros.
pub(crate) fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{:.8e}", v).parse().unwrap_or(v);
    format!("{}", rounded)
}

/// Tiles anchors over every feature map: layer-major, then row, column and
/// ratio, with the extra scale box last in each cell.
pub fn generate_anchors(cfg: &AnchorConfig) -> Result<AnchorSet, GeometryError> {
    cfg.validate()?;
    let scales = cfg.layer_scales();
    let n = cfg.anchor_count();
    let mut boxes = Vec::with_capacity(n);
    let mut index = Vec::with_capacity(n);

    for (layer, &f) in cfg.feature_map_sizes.iter().enumerate() {
        let s_k = scales[layer];
        let s_next = scales.get(layer + 1).copied().unwrap_or(1.0);
        let ratios = cfg.aspect_ratios.for_layer(layer);
        let mut shapes: Vec<(f64, f64)> = ratios
            .iter()
            .map(|r| {
                let sr = r.sqrt();
                (s_k * sr, s_k / sr)
            })
            .collect();
        if cfg.add_extra_scale_box {
            let s = (s_k * s_next).sqrt();
            shapes.push((s, s));
        }
        let fs = f as f64;
        for row in 0..f as usize {
            let cy = (row as f64 + 0.5) / fs;
            for col in 0..f as usize {
                let cx = (col as f64 + 0.5) / fs;
                for (ratio_index, &(w, h)) in shapes.iter().enumerate() {
                    boxes.push(CenterBox::new(cx, cy, w, h)?);
                    index.push(AnchorIndex {
                        layer,
                        row,
                        col,
                        ratio_index,
                    });
                }
            }
        }
    }
    let corners = boxes.iter().map(|b| b.to_corner()).collect::<Result<Vec<_>, _>>()?;
    Ok(AnchorSet { boxes, corners, index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn iou_fixtures() {
        assert_eq!(bb(0., 0., 2., 2.).iou(&bb(0., 0., 2., 2.)), 1.0);
        assert_eq!(bb(0., 0., 1., 1.).iou(&bb(2., 2., 3., 3.)), 0.0);
        let v = bb(0., 0., 2., 2.).iou(&bb(1., 1., 3., 3.));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn iou_matches_cell_count_on_integer_grid() {
        // Both boxes sit on a 0.01 grid, so counting unit cells is exact.
        let a = bb(0.0, 0.0, 2.0, 2.0);
        let b = bb(1.0, 1.0, 3.0, 3.0);
        let steps = 300;
        let (mut ca, mut cb, mut both) = (0u32, 0u32, 0u32);
        for i in 0..steps {
            for j in 0..steps {
                let x = (i as f64 + 0.5) * 0.01;
                let y = (j as f64 + 0.5) * 0.01;
                let ia = x < 2.0 && y < 2.0;
                let ib = (1.0..3.0).contains(&x) && (1.0..3.0).contains(&y);
                ca += ia as u32;
                cb += ib as u32;
                both += (ia && ib) as u32;
            }
        }
        let raster = both as f64 / (ca + cb - both) as f64;
        assert!((raster - a.iou(&b)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(matches!(
            BoundingBox::new(1.0, 0.0, 1.0, 2.0),
            Err(GeometryError::Degenerate { .. })
        ));
        assert!(matches!(
            BoundingBox::new(0.0, f64::NAN, 1.0, 2.0),
            Err(GeometryError::NonFinite(..))
        ));
        assert!(CenterBox::new(0.5, 0.5, 0.0, 0.1).is_err());
    }

    #[test]
    fn center_corner_fixtures() {
        let c = bb(0., 0., 2., 2.).to_center();
        assert_eq!((c.cx(), c.cy(), c.w(), c.h()), (1.0, 1.0, 2.0, 2.0));
        let b = CenterBox::new(0.5, 0.5, 0.2, 0.2).unwrap().to_corner().unwrap();
        for (got, want) in b.to_array().iter().zip([0.4, 0.4, 0.6, 0.6]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn anchor_single_cell() {
        let cfg = AnchorConfig {
            image_size: 32,
            feature_map_sizes: vec![1],
            aspect_ratios: AspectRatios::Shared(vec![1.0]),
            s_min: 0.5,
            s_max: 0.5,
            add_extra_scale_box: false,
        };
        let set = generate_anchors(&cfg).unwrap();
        assert_eq!(set.len(), 1);
        let a = set.boxes()[0];
        assert_eq!((a.cx(), a.cy(), a.w(), a.h()), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn default_anchor_count_is_500() {
        let cfg = AnchorConfig::default();
        assert_eq!(cfg.anchor_count(), 500);
        assert_eq!(generate_anchors(&cfg).unwrap().len(), 500);
    }

    #[test]
    fn layer_scale_endpoints() {
        let cfg = AnchorConfig::default();
        let s = cfg.layer_scales();
        assert_eq!(s, vec![0.2, 0.9]);
        // Extra box of the last layer interpolates towards 1.
        let set = generate_anchors(&cfg).unwrap();
        let last = set.boxes().last().unwrap();
        assert!((last.w() - (0.9f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn anchor_order_is_layer_row_col_ratio() {
        let set = generate_anchors(&AnchorConfig::default()).unwrap();
        let ix = set.index();
        assert_eq!(
            ix[0],
            AnchorIndex {
                layer: 0,
                row: 0,
                col: 0,
                ratio_index: 0
            }
        );
        assert_eq!(
            ix[3],
            AnchorIndex {
                layer: 0,
                row: 0,
                col: 0,
                ratio_index: 3
            }
        );
        assert_eq!(
            ix[4],
            AnchorIndex {
                layer: 0,
                row: 0,
                col: 1,
                ratio_index: 0
            }
        );
        assert_eq!(
            ix[40],
            AnchorIndex {
                layer: 0,
                row: 1,
                col: 0,
                ratio_index: 0
            }
        );
        assert_eq!(
            ix[400],
            AnchorIndex {
                layer: 1,
                row: 0,
                col: 0,
                ratio_index: 0
            }
        );
        let ratio2 = set.boxes()[1];
        assert!((ratio2.w() / ratio2.h() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_anchor_configs() {
        let cfg = AnchorConfig {
            s_min: 0.95,
            feature_map_sizes: vec![0, 3],
            ..Default::default()
        };
        let v = cfg.violations();
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(generate_anchors(&cfg).is_err());
    }

    #[test]
    fn encode_fixtures() {
        let a = CenterBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let v = Variances::default();
        assert_eq!(encode(&a, &a, v), BoxOffsets::default());
        let g = CenterBox::new(0.55, 0.5, 0.2, 0.2).unwrap();
        let off = encode(&g, &a, v);
        assert!((off.tx - 2.5).abs() < 1e-12);
        assert_eq!((off.ty, off.tw, off.th), (0.0, 0.0, 0.0));
    }

    #[test]
    fn decode_fixtures() {
        let a = CenterBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let v = Variances::default();
        assert_eq!(decode(&BoxOffsets::default(), &a, v).unwrap(), a.to_corner().unwrap());
        let b = decode(&BoxOffsets::new(2.5, 0.0, 0.0, 0.0), &a, v).unwrap();
        assert!((b.to_center().cx() - 0.55).abs() < 1e-12);
        assert!(matches!(
            decode(&BoxOffsets::new(0.0, 0.0, 1000.0, 0.0), &a, v),
            Err(GeometryError::DecodeOverflow { .. })
        ));
    }

    #[test]
    fn clip_fixtures() {
        assert_eq!(bb(-0.1, 0.2, 0.5, 0.8).clip_to_unit().unwrap(), bb(0.0, 0.2, 0.5, 0.8));
        let inside = bb(0.1, 0.1, 0.9, 0.9);
        assert_eq!(inside.clip_to_unit().unwrap(), inside);
        assert_eq!(bb(1.2, 1.2, 1.5, 1.5).clip_to_unit(), Err(GeometryError::EmptyAfterClip));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cfg = AnchorConfig {
            image_size: 32,
            feature_map_sizes: vec![1],
            aspect_ratios: AspectRatios::Shared(vec![1.0]),
            s_min: 0.5,
            s_max: 0.5,
            add_extra_scale_box: false,
        };
        let csv = generate_anchors(&cfg).unwrap().to_csv();
        assert_eq!(csv, "layer,row,col,ratio_index,cx,cy,w,h\n0,0,0,0,0.5,0.5,0.5,0.5\n");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(0.2 * 2f64.sqrt()), "0.282842712");
    }

    #[test]
    fn serde_rejects_invalid_box() {
        let ok: BoundingBox = serde_json::from_str("[0.1,0.2,0.3,0.4]").unwrap();
        assert_eq!(ok, bb(0.1, 0.2, 0.3, 0.4));
        assert!(serde_json::from_str::<BoundingBox>("[0.3,0.2,0.1,0.4]").is_err());
    }

    fn unit_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..0.9f64, 0.0..0.9f64, 0.01..1.0f64, 0.01..1.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, (x + w).min(1.0).max(x + 0.005), (y + h).min(1.0).max(y + 0.005)))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in unit_box(), b in unit_box()) {
            let ab = a.iou(&b);
            prop_assert_eq!(ab, b.iou(&a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(a.iou(&a), 1.0);
        }

        #[test]
        fn corner_center_roundtrip(a in unit_box()) {
            let back = a.to_center().to_corner().unwrap();
            for (x, y) in back.to_array().iter().zip(a.to_array()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn generation_is_deterministic(
            sizes in proptest::collection::vec(1u32..6, 1..4),
            ratios in proptest::collection::vec(0.25f64..4.0, 1..4),
            extra in any::<bool>(),
        ) {
            let cfg = AnchorConfig {
                image_size: 64,
                feature_map_sizes: sizes,
                aspect_ratios: AspectRatios::Shared(ratios),
                s_min: 0.1,
                s_max: 0.8,
                add_extra_scale_box: extra,
            };
            let a = generate_anchors(&cfg).unwrap();
            let b = generate_anchors(&cfg).unwrap();
            prop_assert_eq!(a.len(), cfg.anchor_count());
            prop_assert_eq!(a, b);
        }
    }
}
