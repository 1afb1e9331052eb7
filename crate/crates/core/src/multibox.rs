//! Anchor matching, the multibox losses and detection post-processing.
//!
//! Score vectors are raw logits of length `C + 1`. Index 0 is background
//! and foreground class `c` (0-based) lives at index `c + 1`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{decode, encode, AnchorSet, BoundingBox, BoxOffsets, Variances};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MultiboxError {
    #[error("anchor set is empty")]
    EmptyAnchors,
    #[error("cannot cover {gts} ground truths with only {anchors} anchors")]
    TooFewAnchors { gts: usize, anchors: usize },
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("iou threshold must lie in (0, 1), got {0}")]
    InvalidIouThreshold(f64),
    #[error("ground truth {index} has class {class} but predictions only cover {classes} classes")]
    ClassOutOfRange { index: usize, class: usize, classes: usize },
    #[error("prediction scores must be finite")]
    NonFiniteScores,
}

/// A labelled box fed to the matcher. `class` is the 0-based foreground id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub class: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorMatch {
    pub gt_index: usize,
    pub class: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One entry per anchor; `None` is background.
    pub assignments: Vec<Option<AnchorMatch>>,
    pub n_matched: usize,
}

impl MatchResult {
    pub fn matched(&self) -> impl Iterator<Item = (usize, &AnchorMatch)> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.as_ref().map(|m| (i, m)))
    }
}

/// Two-phase matching.
///
/// Phase one hands every ground truth its own anchor by repeatedly taking
/// the highest-IoU free (ground truth, anchor) pair, ties going to the lower
/// anchor index and then the lower ground-truth index. Phase two assigns each
/// remaining anchor to its best ground truth when that IoU reaches
/// `iou_threshold`.
pub fn match_anchors(anchors: &AnchorSet, gts: &[GroundTruth], iou_threshold: f64) -> Result<MatchResult, MultiboxError> {
    if anchors.is_empty() {
        return Err(MultiboxError::EmptyAnchors);
    }
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(MultiboxError::InvalidIouThreshold(iou_threshold));
    }
    let n = anchors.len();
    let mut assignments: Vec<Option<AnchorMatch>> = vec![None; n];
    if gts.is_empty() {
        return Ok(MatchResult {
            assignments,
            n_matched: 0,
        });
    }
    if gts.len() > n {
        return Err(MultiboxError::TooFewAnchors {
            gts: gts.len(),
            anchors: n,
        });
    }

    // ious[g][a]
    let ious: Vec<Vec<f64>> = gts
        .iter()
        .map(|g| anchors.corners().iter().map(|a| g.bbox.iou(a)).collect())
        .collect();

    let mut gt_done = vec![false; gts.len()];
    let mut anchor_taken = vec![false; n];
    for _ in 0..gts.len() {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if anchor_taken[a] {
                continue;
            }
            for (g, row) in ious.iter().enumerate() {
                if gt_done[g] {
                    continue;
                }
                let v = row[a];
                // Strict comparison keeps the earliest anchor, then gt.
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, a, g));
                }
            }
        }
        let (v, a, g) = best.expect("free pair exists while gts <= anchors");
        gt_done[g] = true;
        anchor_taken[a] = true;
        assignments[a] = Some(AnchorMatch {
            gt_index: g,
            class: gts[g].class,
            iou: v,
        });
    }

    for a in 0..n {
        if anchor_taken[a] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (g, row) in ious.iter().enumerate() {
            if best.is_none_or(|(bv, _)| row[a] > bv) {
                best = Some((row[a], g));
            }
        }
        if let Some((v, g)) = best {
            if v >= iou_threshold {
                assignments[a] = Some(AnchorMatch {
                    gt_index: g,
                    class: gts[g].class,
                    iou: v,
                });
            }
        }
    }

    let n_matched = assignments.iter().filter(|m| m.is_some()).count();
    Ok(MatchResult { assignments, n_matched })
}

/// Network output for one image: offsets and logits per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictions {
    offsets: Vec<BoxOffsets>,
    logits: Vec<f64>,
    num_scores: usize,
}

impl RawPredictions {
    /// `logits` is anchor-major with `num_scores` (= C + 1) entries per anchor.
    pub fn new(offsets: Vec<BoxOffsets>, logits: Vec<f64>, num_scores: usize) -> Result<Self, MultiboxError> {
        if num_scores < 2 {
            return Err(MultiboxError::LengthMismatch {
                what: "score vector",
                got: num_scores,
                expected: 2,
            });
        }
        if logits.len() != offsets.len() * num_scores {
            return Err(MultiboxError::LengthMismatch {
                what: "logits",
                got: logits.len(),
                expected: offsets.len() * num_scores,
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(MultiboxError::NonFiniteScores);
        }
        Ok(Self {
            offsets,
            logits,
            num_scores,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Foreground class count C.
    pub fn num_classes(&self) -> usize {
        self.num_scores - 1
    }

    pub fn offsets(&self) -> &[BoxOffsets] {
        &self.offsets
    }

    pub fn logits(&self, anchor: usize) -> &[f64] {
        &self.logits[anchor * self.num_scores..(anchor + 1) * self.num_scores]
    }

    pub fn all_logits(&self) -> &[f64] {
        &self.logits
    }
}

/// Numerically stable `log(softmax(logits)[k])`.
pub fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn smooth_l1(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

fn check_len(preds: &RawPredictions, anchors: &AnchorSet) -> Result<(), MultiboxError> {
    if preds.len() != anchors.len() {
        return Err(MultiboxError::LengthMismatch {
            what: "predictions",
            got: preds.len(),
            expected: anchors.len(),
        });
    }
    Ok(())
}

/// Smooth-L1 between predicted offsets and encoded targets, summed over
/// matched anchors and divided by the match count.
pub fn localization_loss(
    preds: &RawPredictions,
    gts: &[GroundTruth],
    matches: &MatchResult,
    anchors: &AnchorSet,
    variances: Variances,
) -> Result<f64, MultiboxError> {
    check_len(preds, anchors)?;
    if matches.assignments.len() != anchors.len() {
        return Err(MultiboxError::LengthMismatch {
            what: "match result",
            got: matches.assignments.len(),
            expected: anchors.len(),
        });
    }
    if matches.n_matched == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (a, m) in matches.matched() {
        let gt = gts.get(m.gt_index).ok_or(MultiboxError::LengthMismatch {
            what: "ground truths",
            got: gts.len(),
            expected: m.gt_index + 1,
        })?;
        let target = encode(&gt.bbox.to_center(), &anchors.boxes()[a], variances);
        let pred = preds.offsets()[a];
        sum += pred
            .to_array()
            .iter()
            .zip(target.to_array())
            .map(|(p, t)| smooth_l1(p - t))
            .sum::<f64>();
    }
    Ok(sum / matches.n_matched as f64)
}

/// Softmax cross-entropy over positives plus the hardest negatives.
///
/// Negatives are unmatched anchors ranked by their background cross-entropy
/// (ties to the lower index); at most `floor(neg_pos_ratio · n_matched)` of
/// them contribute.
pub fn confidence_loss(preds: &RawPredictions, matches: &MatchResult, neg_pos_ratio: f64) -> Result<f64, MultiboxError> {
    if matches.assignments.len() != preds.len() {
        return Err(MultiboxError::LengthMismatch {
            what: "match result",
            got: matches.assignments.len(),
            expected: preds.len(),
        });
    }
    if matches.n_matched == 0 {
        return Ok(0.0);
    }
    let mut positive = 0.0;
    let mut negatives: Vec<(f64, usize)> = Vec::new();
    for (a, m) in matches.assignments.iter().enumerate() {
        let logits = preds.logits(a);
        match m {
            Some(m) => {
                if m.class + 1 >= logits.len() {
                    return Err(MultiboxError::ClassOutOfRange {
                        index: m.gt_index,
                        class: m.class,
                        classes: preds.num_classes(),
                    });
                }
                positive -= log_softmax_at(logits, m.class + 1);
            }
            None => negatives.push((-log_softmax_at(logits, 0), a)),
        }
    }
    let cap = (neg_pos_ratio.max(0.0) * matches.n_matched as f64).floor() as usize;
    let cap = cap.min(negatives.len());
    let negative: f64 = if cap == 0 {
        0.0
    } else {
        negatives.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(Ordering::Equal).then(x.1.cmp(&y.1)));
        negatives[..cap].iter().map(|(l, _)| l).sum()
    };
    Ok((positive + negative) / matches.n_matched as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub iou_threshold: f64,
    pub variances: Variances,
    pub neg_pos_ratio: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            variances: Variances::default(),
            neg_pos_ratio: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loc_loss: f64,
    pub conf_loss: f64,
    pub total: f64,
    pub n_matched: usize,
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "loc_loss={} conf_loss={} total={} n_matched={}",
            self.loc_loss, self.conf_loss, self.total, self.n_matched
        )
    }
}

/// Matches, then evaluates both loss terms. With no matches the report is
/// all zero.
pub fn total_loss(
    preds: &RawPredictions,
    gts: &[GroundTruth],
    anchors: &AnchorSet,
    cfg: &LossConfig,
) -> Result<LossReport, MultiboxError> {
    check_len(preds, anchors)?;
    for (index, g) in gts.iter().enumerate() {
        if g.class >= preds.num_classes() {
            return Err(MultiboxError::ClassOutOfRange {
                index,
                class: g.class,
                classes: preds.num_classes(),
            });
        }
    }
    let matches = match_anchors(anchors, gts, cfg.iou_threshold)?;
    let loc_loss = localization_loss(preds, gts, &matches, anchors, cfg.variances)?;
    let conf_loss = confidence_loss(preds, &matches, cfg.neg_pos_ratio)?;
    Ok(LossReport {
        loc_loss,
        conf_loss,
        total: loc_loss + conf_loss,
        n_matched: matches.n_matched,
    })
}

/// A scored, labelled box in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "class")]
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Softmax per anchor, then one detection per (anchor, foreground class)
/// whose probability reaches `score_threshold`. Boxes that decode outside
/// the image or overflow are dropped. Output is anchor-major, class-minor.
pub fn decode_detections(
    raw: &RawPredictions,
    anchors: &AnchorSet,
    variances: Variances,
    labels: &[String],
    score_threshold: f64,
) -> Result<Vec<Detection>, MultiboxError> {
    check_len(raw, anchors)?;
    if labels.len() != raw.num_classes() {
        return Err(MultiboxError::LengthMismatch {
            what: "labels",
            got: labels.len(),
            expected: raw.num_classes(),
        });
    }
    let mut out = Vec::new();
    for (a, anchor) in anchors.boxes().iter().enumerate() {
        let probs = softmax(raw.logits(a));
        let mut bbox: Option<Option<BoundingBox>> = None;
        for (c, label) in labels.iter().enumerate() {
            let p = probs[c + 1];
            if p < score_threshold {
                continue;
            }
            let b = *bbox.get_or_insert_with(|| {
                decode(&raw.offsets()[a], anchor, variances)
                    .and_then(|b| b.clip_to_unit())
                    .ok()
            });
            if let Some(b) = b {
                out.push(Detection {
                    label: label.clone(),
                    score: p.clamp(0.0, 1.0),
                    bbox: b,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub iou_threshold: f64,
    pub top_k: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.45,
            top_k: 100,
        }
    }
}

/// Per-class greedy suppression. Output is sorted by score (earlier input
/// first on ties) and cut to `top_k`.
pub fn nms(dets: &[Detection], cfg: NmsConfig) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    // Group by class, keeping score order inside each group.
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for &i in &order {
        match groups.iter_mut().find(|(l, _)| *l == dets[i].label) {
            Some((_, g)) => g.push(i),
            None => groups.push((&dets[i].label, vec![i])),
        }
    }

    let mut keep = vec![false; dets.len()];
    for (_, group) in &groups {
        let mut suppressed = vec![false; group.len()];
        for (gi, &i) in group.iter().enumerate() {
            if suppressed[gi] {
                continue;
            }
            keep[i] = true;
            for (gj, &j) in group.iter().enumerate().skip(gi + 1) {
                if !suppressed[gj] && dets[i].bbox.iou(&dets[j].bbox) >= cfg.iou_threshold {
                    suppressed[gj] = true;
                }
            }
        }
    }
    order
        .into_iter()
        .filter(|&i| keep[i])
        .take(cfg.top_k.max(1))
        .map(|i| dets[i].clone())
        .collect()
}
