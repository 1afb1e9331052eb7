//! Detection-quality metrics and the stepped evaluation harness.
//!
//! "Accuracy" is reported as `TP / (TP + FP + FN)` at the matching IoU
//! threshold. Precision, recall, per-class AP (all-point interpolation),
//! mAP, a class-only accuracy taken from the confusion matrix and the
//! fraction of perfectly handled frames are reported next to it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::backbone::{DetectError, Detector, Image};
use crate::dataset::LoadedDataset;
use crate::geometry::BoundingBox;
use crate::monitor::ppm::{read_ppm, PpmError};
use crate::multibox::Detection;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBox {
    pub label: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruePositive {
    pub detection: Detection,
    pub gt_index: usize,
    pub iou: f64,
}

/// Matching result for one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchedOutcome {
    pub true_positives: Vec<TruePositive>,
    pub false_positives: Vec<Detection>,
    /// Unmatched ground truths with their index in the input.
    pub false_negatives: Vec<(usize, LabeledBox)>,
    pub ground_truths: Vec<LabeledBox>,
    pub iou_threshold: f64,
}

impl MatchedOutcome {
    pub fn tp(&self) -> usize {
        self.true_positives.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_count(&self) -> usize {
        self.false_negatives.len()
    }
}

fn by_score_desc(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching: detections in descending score order each take the
/// unmatched same-class ground truth with the highest IoU at or above the
/// threshold (lower index on ties).
pub fn match_detections(dets: &[Detection], gts: &[LabeledBox], iou_threshold: f64) -> MatchedOutcome {
    let mut taken = vec![false; gts.len()];
    let mut out = MatchedOutcome {
        ground_truths: gts.to_vec(),
        iou_threshold,
        ..Default::default()
    };
    for i in by_score_desc(dets) {
        let d = &dets[i];
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.label != d.label {
                continue;
            }
            let v = d.bbox.iou(&gt.bbox);
            if v >= iou_threshold && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, g));
            }
        }
        match best {
            Some((iou, g)) => {
                taken[g] = true;
                out.true_positives.push(TruePositive {
                    detection: d.clone(),
                    gt_index: g,
                    iou,
                });
            }
            None => out.false_positives.push(d.clone()),
        }
    }
    out.false_negatives = gts
        .iter()
        .enumerate()
        .filter(|(g, _)| !taken[*g])
        .map(|(g, b)| (g, b.clone()))
        .collect();
    out
}

/// Square count matrix over the sorted class list plus a trailing
/// background row/column. Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn background(&self) -> usize {
        self.labels.len()
    }

    fn index(&self, label: &str) -> usize {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .expect("label collected beforehand")
    }

    pub fn get(&self, gt: Option<&str>, pred: Option<&str>) -> usize {
        let r = gt.map_or(self.background(), |l| self.index(l));
        let c = pred.map_or(self.background(), |l| self.index(l));
        self.counts[r][c]
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.labels.iter().map(|s| s.as_str()).chain(["background"]).collect();
        write!(f, "gt\\pred")?;
        for n in &names {
            write!(f, ",{n}")?;
        }
        writeln!(f)?;
        for (row, n) in self.counts.iter().zip(&names) {
            write!(f, "{n}")?;
            for v in row {
                write!(f, ",{v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// True positives sit on the diagonal. Leftover false positives are then
/// matched class-agnostically to leftover misses (greedy by score, IoU at
/// least the outcome's threshold) and counted as confusions; what remains
/// goes to the background row or column.
pub fn confusion(outcomes: &[MatchedOutcome]) -> ConfusionMatrix {
    let mut labels = BTreeSet::new();
    for o in outcomes {
        labels.extend(o.ground_truths.iter().map(|g| g.label.clone()));
        labels.extend(o.true_positives.iter().map(|t| t.detection.label.clone()));
        labels.extend(o.false_positives.iter().map(|d| d.label.clone()));
    }
    let labels: Vec<String> = labels.into_iter().collect();
    let n = labels.len() + 1;
    let mut m = ConfusionMatrix {
        labels,
        counts: vec![vec![0; n]; n],
    };
    let bg = m.background();
    for o in outcomes {
        for t in &o.true_positives {
            let i = m.index(&t.detection.label);
            m.counts[i][i] += 1;
        }
        let mut missed_taken = vec![false; o.false_negatives.len()];
        for i in by_score_desc(&o.false_positives) {
            let d = &o.false_positives[i];
            let mut best: Option<(f64, usize)> = None;
            for (k, (_, gt)) in o.false_negatives.iter().enumerate() {
                if missed_taken[k] {
                    continue;
                }
                let v = d.bbox.iou(&gt.bbox);
                if v >= o.iou_threshold && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, k));
                }
            }
            let col = m.index(&d.label);
            match best {
                Some((_, k)) => {
                    missed_taken[k] = true;
                    let row = m.index(&o.false_negatives[k].1.label);
                    m.counts[row][col] += 1;
                }
                None => m.counts[bg][col] += 1,
            }
        }
        for (k, (_, gt)) in o.false_negatives.iter().enumerate() {
            if !missed_taken[k] {
                let row = m.index(&gt.label);
                m.counts[row][bg] += 1;
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrPoint {
    pub label: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall after each detection of each class, sweeping the
/// score threshold downwards.
pub fn pr_curves(outcomes: &[MatchedOutcome]) -> Vec<PrPoint> {
    let mut out = Vec::new();
    for (label, (ranked, n_gt)) in ranked_by_class(outcomes) {
        let mut tp = 0usize;
        for (k, (score, hit)) in ranked.iter().enumerate() {
            tp += usize::from(*hit);
            out.push(PrPoint {
                label: label.clone(),
                threshold: *score,
                precision: tp as f64 / (k + 1) as f64,
                recall: if n_gt == 0 { 1.0 } else { tp as f64 / n_gt as f64 },
            });
        }
    }
    out
}

pub fn pr_curves_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("class,threshold,precision,recall\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.label, p.threshold, p.precision, p.recall));
    }
    s
}

/// Per class: detections as (score, is_tp) sorted by score descending, and
/// the ground-truth count.
fn ranked_by_class(outcomes: &[MatchedOutcome]) -> BTreeMap<String, (Vec<(f64, bool)>, usize)> {
    let mut per: BTreeMap<String, (Vec<(f64, bool)>, usize)> = BTreeMap::new();
    for o in outcomes {
        for g in &o.ground_truths {
            per.entry(g.label.clone()).or_default().1 += 1;
        }
        for t in &o.true_positives {
            per.entry(t.detection.label.clone())
                .or_default()
                .0
                .push((t.detection.score, true));
        }
        for d in &o.false_positives {
            per.entry(d.label.clone()).or_default().0.push((d.score, false));
        }
    }
    for (ranked, _) in per.values_mut() {
        // Stable, so equal scores keep image order.
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    }
    per
}

/// Area under the all-point interpolated precision/recall curve.
pub fn average_precision(ranked: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, (_, hit)) in ranked.iter().enumerate() {
        tp += usize::from(*hit);
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope from the right.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub images: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub precision: f64,
    pub recall: f64,
    /// `TP / (TP + FP + FN)`.
    pub accuracy: f64,
    /// Correctly labelled share of the ground truths some detection overlapped.
    pub classification_accuracy: f64,
    /// Share of images with no false positive and no miss.
    pub frame_hit_rate: f64,
    /// AP for every class with at least one ground truth.
    pub ap: BTreeMap<String, f64>,
    pub map: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(outcomes: &[MatchedOutcome]) -> Metrics {
    let tp: usize = outcomes.iter().map(MatchedOutcome::tp).sum();
    let fp: usize = outcomes.iter().map(MatchedOutcome::fp).sum();
    let fn_count: usize = outcomes.iter().map(MatchedOutcome::fn_count).sum();
    let hits = outcomes.iter().filter(|o| o.fp() == 0 && o.fn_count() == 0).count();

    let ap: BTreeMap<String, f64> = ranked_by_class(outcomes)
        .into_iter()
        .filter(|(_, (_, n_gt))| *n_gt > 0)
        .map(|(label, (ranked, n_gt))| (label, average_precision(&ranked, n_gt)))
        .collect();
    let map = if ap.is_empty() {
        1.0
    } else {
        ap.values().sum::<f64>() / ap.len() as f64
    };

    let confusion = confusion(outcomes);
    let bg = confusion.background();
    let diag: usize = (0..bg).map(|i| confusion.counts[i][i]).sum();
    let localized: usize = (0..bg).map(|i| confusion.counts[i][..bg].iter().sum::<usize>()).sum();

    Metrics {
        images: outcomes.len(),
        tp,
        fp,
        fn_count,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_count),
        accuracy: ratio(tp, tp + fp + fn_count),
        classification_accuracy: ratio(diag, localized),
        frame_hit_rate: ratio(hits, outcomes.len()),
        ap,
        map,
        confusion,
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "images={}", self.images)?;
        writeln!(f, "tp={}", self.tp)?;
        writeln!(f, "fp={}", self.fp)?;
        writeln!(f, "fn={}", self.fn_count)?;
        writeln!(f, "precision={:.6}", self.precision)?;
        writeln!(f, "recall={:.6}", self.recall)?;
        writeln!(f, "accuracy={:.6}", self.accuracy)?;
        writeln!(f, "classification_accuracy={:.6}", self.classification_accuracy)?;
        writeln!(f, "frame_hit_rate={:.6}", self.frame_hit_rate)?;
        for (label, ap) in &self.ap {
            writeln!(f, "ap.{label}={ap:.6}")?;
        }
        write!(f, "map={:.6}", self.map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnessConfig {
    pub steps: usize,
    pub iou_threshold: f64,
    pub score_threshold: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            iou_threshold: 0.5,
            score_threshold: 0.5,
        }
    }
}

/// One evaluation image with normalized ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub name: String,
    pub ground_truth: Vec<LabeledBox>,
    pub image: Option<Image>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("evaluation set is empty")]
    EmptyDataset,
    #[error("thresholds out of range: iou {iou}, score {score}")]
    Thresholds { iou: f64, score: f64 },
    #[error("{name}: detector needs pixels but no image was loaded")]
    MissingImage { name: String },
    #[error("{path}: {source}")]
    Image { path: String, source: PpmError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{name}: invalid annotation: {reason}")]
    Annotation { name: String, reason: String },
    #[error("detector failed at step {step}: {source}")]
    Detector { step: usize, source: DetectError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub sample: usize,
    pub detections: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} image={} detections={} tp={} fp={} fn={}",
            self.step, self.sample, self.detections, self.tp, self.fp, self.fn_count
        )
    }
}

#[derive(Debug, Clone)]
pub struct HarnessReport {
    pub metrics: Metrics,
    pub outcomes: Vec<MatchedOutcome>,
    pub log: Vec<StepRecord>,
}

/// Runs `cfg.steps` evaluation steps, cycling through `samples`. The
/// detector sees the step number as its frame index.
pub fn run_harness(cfg: &HarnessConfig, samples: &[EvalSample], detector: &dyn Detector) -> Result<HarnessReport, HarnessError> {
    if cfg.steps == 0 {
        return Err(HarnessError::NoSteps);
    }
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold < 1.0 && (0.0..=1.0).contains(&cfg.score_threshold)) {
        return Err(HarnessError::Thresholds {
            iou: cfg.iou_threshold,
            score: cfg.score_threshold,
        });
    }
    let blank = Image::filled(1, 1, [0.0; 3]);
    let mut outcomes = Vec::with_capacity(cfg.steps);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = step % samples.len();
        let sample = &samples[idx];
        let image = match (&sample.image, detector.needs_pixels()) {
            (Some(img), _) => img,
            (None, false) => &blank,
            (None, true) => {
                return Err(HarnessError::MissingImage {
                    name: sample.name.clone(),
                })
            }
        };
        let dets: Vec<Detection> = detector
            .detect(step as u64, image)
            .map_err(|source| HarnessError::Detector { step, source })?
            .into_iter()
            .filter(|d| d.score >= cfg.score_threshold)
            .collect();
        let outcome = match_detections(&dets, &sample.ground_truth, cfg.iou_threshold);
        log.push(StepRecord {
            step,
            sample: idx,
            detections: dets.len(),
            tp: outcome.tp(),
            fp: outcome.fp(),
            fn_count: outcome.fn_count(),
        });
        outcomes.push(outcome);
    }
    Ok(HarnessReport {
        metrics: compute_metrics(&outcomes),
        outcomes,
        log,
    })
}

/// Turns a loaded dataset into evaluation samples, reading the paired PPM
/// images when `with_pixels` is set.
pub fn samples_from_dataset(loaded: &LoadedDataset, with_pixels: bool) -> Result<Vec<EvalSample>, HarnessError> {
    let mut out = Vec::with_capacity(loaded.dataset.len());
    for (img, path) in loaded.dataset.images().iter().zip(&loaded.image_paths) {
        let ground_truth = img
            .objects
            .iter()
            .map(|o| {
                o.bbox
                    .normalized(img.width as f64, img.height as f64)
                    .map(|bbox| LabeledBox {
                        label: o.label.clone(),
                        bbox,
                    })
                    .map_err(|e| HarnessError::Annotation {
                        name: img.filename.clone(),
                        reason: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let image = match (with_pixels, path) {
            (false, _) => None,
            (true, None) => {
                return Err(HarnessError::MissingImage {
                    name: img.filename.clone(),
                })
            }
            (true, Some(p)) => Some(load_ppm_file(p)?),
        };
        out.push(EvalSample {
            name: img.filename.clone(),
            ground_truth,
            image,
        });
    }
    Ok(out)
}

fn load_ppm_file(path: &Path) -> Result<Image, HarnessError> {
    let shown = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| HarnessError::Io {
        path: shown.clone(),
        source,
    })?;
    read_ppm(&bytes).map_err(|source| HarnessError::Image { path: shown, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{DetectorScript, ScriptedDetector};

    fn bb(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    fn gt(label: &str, b: BoundingBox) -> LabeledBox {
        LabeledBox {
            label: label.into(),
            bbox: b,
        }
    }

    fn det(label: &str, score: f64, b: BoundingBox) -> Detection {
        Detection {
            label: label.into(),
            score,
            bbox: b,
        }
    }

    #[test]
    fn exact_detections_are_true_positives() {
        let gts = vec![gt("lion", bb(0.1, 0.1, 0.4, 0.4)), gt("cat", bb(0.5, 0.5, 0.9, 0.9))];
        let dets: Vec<_> = gts.iter().map(|g| det(&g.label, 0.9, g.bbox)).collect();
        let o = match_detections(&dets, &gts, 0.5);
        assert_eq!((o.tp(), o.fp(), o.fn_count()), (2, 0, 0));
    }

    #[test]
    fn wrong_class_is_fp_and_fn() {
        let gts = vec![gt("lion", bb(0.1, 0.1, 0.4, 0.4))];
        let o = match_detections(&[det("cheetah", 0.9, bb(0.1, 0.1, 0.4, 0.4))], &gts, 0.5);
        assert_eq!((o.tp(), o.fp(), o.fn_count()), (0, 1, 1));
    }

    /// Lexicographically best assignment in score order, by brute force.
    fn lexmax_oracle(dets: &[Detection], gts: &[LabeledBox], thr: f64) -> Vec<Option<usize>> {
        let order = by_score_desc(dets);
        type Ranked = (Vec<(f64, isize)>, Vec<Option<usize>>);
        let mut best: Option<Ranked> = None;
        let choices = gts.len() + 1;
        let total = choices.pow(dets.len() as u32);
        for code in 0..total {
            let mut c = code;
            let mut assign = vec![None; dets.len()];
            let mut used = vec![false; gts.len()];
            let mut ok = true;
            for &i in &order {
                let pick = c % choices;
                c /= choices;
                if pick < gts.len() {
                    let d = &dets[i];
                    if used[pick] || gts[pick].label != d.label || d.bbox.iou(&gts[pick].bbox) < thr {
                        ok = false;
                        break;
                    }
                    used[pick] = true;
                    assign[i] = Some(pick);
                }
            }
            if !ok {
                continue;
            }
            let key: Vec<(f64, isize)> = order
                .iter()
                .map(|&i| match assign[i] {
                    Some(g) => (dets[i].bbox.iou(&gts[g].bbox), -(g as isize)),
                    None => (-1.0, 0),
                })
                .collect();
            let better = match &best {
                None => true,
                Some((k, _)) => key.partial_cmp(k) == Some(Ordering::Greater),
            };
            if better {
                best = Some((key, assign));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn greedy_matches_exhaustive_oracle() {
        let gts = vec![gt("lion", bb(0.0, 0.0, 0.4, 0.4)), gt("lion", bb(0.2, 0.0, 0.6, 0.4))];
        let dets = vec![
            det("lion", 0.7, bb(0.05, 0.0, 0.45, 0.4)),
            det("lion", 0.9, bb(0.15, 0.0, 0.55, 0.4)),
            det("lion", 0.8, bb(0.2, 0.0, 0.6, 0.4)),
        ];
        let o = match_detections(&dets, &gts, 0.5);
        let oracle = lexmax_oracle(&dets, &gts, 0.5);
        let mut got = vec![None; dets.len()];
        for tp in &o.true_positives {
            let i = dets.iter().position(|d| *d == tp.detection).unwrap();
            got[i] = Some(tp.gt_index);
        }
        assert_eq!(got, oracle);
        // The 0.9 detection overlaps gt 1 more (0.6 vs 0.33), so the exact
        // copy of gt 1 at 0.8 is left over and gt 0 goes to the 0.7 box.
        assert_eq!(oracle, vec![Some(0), Some(1), None]);
    }

    #[test]
    fn planted_counts_give_091() {
        let mut outcomes = Vec::new();
        let b = bb(0.1, 0.1, 0.5, 0.5);
        let far = bb(0.6, 0.6, 0.9, 0.9);
        for _ in 0..91 {
            outcomes.push(match_detections(&[det("lion", 0.9, b)], &[gt("lion", b)], 0.5));
        }
        for _ in 0..5 {
            outcomes.push(match_detections(&[det("lion", 0.9, far)], &[], 0.5));
        }
        for _ in 0..4 {
            outcomes.push(match_detections(&[], &[gt("lion", b)], 0.5));
        }
        let m = compute_metrics(&outcomes);
        assert_eq!((m.tp, m.fp, m.fn_count), (91, 5, 4));
        assert_eq!(m.accuracy, 0.91);
        assert_eq!(m.frame_hit_rate, 0.91);
    }

    #[test]
    fn empty_metrics_are_one() {
        let m = compute_metrics(&[]);
        assert_eq!((m.precision, m.recall, m.accuracy, m.map), (1.0, 1.0, 1.0, 1.0));
        let m = compute_metrics(&[match_detections(&[], &[], 0.5)]);
        assert_eq!(
            (m.precision, m.recall, m.accuracy, m.map, m.frame_hit_rate),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn ap_fixtures() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, true), (0.1, false)], 2), 1.0);
        // TP, FP, TP over 2 gts: 0.5 * 1 + 0.5 * (2/3).
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2);
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        // Missing half the objects caps AP at 0.5.
        assert_eq!(average_precision(&[(0.9, true)], 2), 0.5);
    }

    #[test]
    fn confusion_fixtures() {
        let lion = bb(0.1, 0.1, 0.5, 0.5);
        let cat = bb(0.6, 0.6, 0.9, 0.9);
        let perfect = match_detections(
            &[det("lion", 0.9, lion), det("cat", 0.8, cat)],
            &[gt("lion", lion), gt("cat", cat)],
            0.5,
        );
        let m = confusion(&[perfect]);
        assert_eq!(m.labels, ["cat", "lion"]);
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 0]]);

        let swapped = match_detections(&[det("cheetah", 0.9, lion)], &[gt("lion", lion), gt("cat", cat)], 0.5);
        let m = confusion(&[swapped]);
        assert_eq!(m.get(Some("lion"), Some("cheetah")), 1);
        assert_eq!(m.get(Some("cat"), None), 1);
        assert_eq!(m.get(None, Some("cheetah")), 0);
        let metrics = compute_metrics(&[match_detections(&[det("cheetah", 0.9, lion)], &[gt("lion", lion)], 0.5)]);
        assert_eq!(metrics.classification_accuracy, 0.0);
    }

    #[test]
    fn pr_csv() {
        let b = bb(0.1, 0.1, 0.5, 0.5);
        let o = match_detections(
            &[det("lion", 0.9, b), det("lion", 0.4, bb(0.6, 0.6, 0.9, 0.9))],
            &[gt("lion", b)],
            0.5,
        );
        let csv = pr_curves_csv(&pr_curves(&[o]));
        assert_eq!(csv, "class,threshold,precision,recall\nlion,0.9,1,1\nlion,0.4,0.5,1\n");
    }

    fn lion_samples(n: usize) -> Vec<EvalSample> {
        (0..n)
            .map(|i| EvalSample {
                name: format!("img{i}"),
                ground_truth: vec![gt("lion", bb(0.2, 0.2, 0.6, 0.7))],
                image: None,
            })
            .collect()
    }

    #[test]
    fn harness_perfect_stub() {
        let samples = lion_samples(10);
        let mut script = DetectorScript {
            period: Some(10),
            ..Default::default()
        };
        for i in 0..10 {
            script
                .frames
                .insert(i, vec![det("lion", 0.95, samples[i as usize].ground_truth[0].bbox)]);
        }
        let stub = ScriptedDetector::new(script);
        let cfg = HarnessConfig {
            steps: 10,
            ..Default::default()
        };
        let r = run_harness(&cfg, &samples, &stub).unwrap();
        assert_eq!(r.metrics.accuracy, 1.0);
        assert_eq!(r.log.len(), 10);
        assert_eq!(r.log[3].to_string(), "step=3 image=3 detections=1 tp=1 fp=0 fn=0");
        assert!(matches!(
            run_harness(&HarnessConfig { steps: 0, ..cfg }, &samples, &stub),
            Err(HarnessError::NoSteps)
        ));
        assert!(matches!(run_harness(&cfg, &[], &stub), Err(HarnessError::EmptyDataset)));
    }

    #[test]
    fn harness_filters_low_scores() {
        let samples = lion_samples(1);
        let mut script = DetectorScript::default();
        script.frames.insert(0, vec![det("lion", 0.3, bb(0.0, 0.0, 0.1, 0.1))]);
        let stub = ScriptedDetector::new(script);
        let r = run_harness(
            &HarnessConfig {
                steps: 1,
                ..Default::default()
            },
            &samples,
            &stub,
        )
        .unwrap();
        assert_eq!((r.metrics.fp, r.metrics.fn_count), (0, 1));
        let r = run_harness(
            &HarnessConfig {
                steps: 1,
                score_threshold: 0.2,
                ..Default::default()
            },
            &samples,
            &stub,
        )
        .unwrap();
        assert_eq!((r.metrics.fp, r.metrics.fn_count), (1, 1));
    }
}
