//! LabelImg / Pascal-VOC annotations and dataset tooling.
//!
//! Boxes here are in pixel coordinates; callers normalize before handing
//! them to [`crate::geometry`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::BoundingBox;

/// Default minimum number of images per class.
pub const DEFAULT_MIN_PER_CLASS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct VocError {
    pub line: u32,
    pub col: u32,
    pub kind: VocErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VocErrorKind {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("root element is <{0}>, expected <annotation>")]
    WrongRoot(String),
    #[error("missing <{element}> inside <{parent}>")]
    MissingElement { parent: String, element: String },
    #[error("<{element}> is not a valid number: {text:?}")]
    InvalidNumber { element: String, text: String },
    #[error("image size must be at least 1x1, got {width}x{height}")]
    InvalidSize { width: u32, height: u32 },
    #[error("object {index} has an empty <name>")]
    EmptyLabel { index: usize },
    #[error("object {index} is degenerate: ({xmin}, {ymin}, {xmax}, {ymax})")]
    DegenerateBox {
        index: usize,
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    #[error("object {index} lies outside the {width}x{height} image")]
    BoxOutOfBounds { index: usize, width: u32, height: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedObject {
    pub label: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub objects: Vec<AnnotatedObject>,
}

impl AnnotatedImage {
    /// File stem used to pair an annotation with its image.
    pub fn stem(&self) -> &str {
        Path::new(&self.filename)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.filename)
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.objects.iter().map(|o| o.label.as_str()).collect()
    }

    fn box_in_bounds(&self, b: &BoundingBox) -> bool {
        b.xmin() >= 0.0 && b.ymin() >= 0.0 && b.xmax() <= self.width as f64 && b.ymax() <= self.height as f64
    }
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == name)
}

fn text_of<'a>(node: roxmltree::Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn position(doc: &roxmltree::Document, node: roxmltree::Node, kind: VocErrorKind) -> VocError {
    let pos = doc.text_pos_at(node.range().start);
    VocError {
        line: pos.row,
        col: pos.col,
        kind,
    }
}

fn require_child<'a, 'input>(
    doc: &roxmltree::Document,
    parent: roxmltree::Node<'a, 'input>,
    name: &str,
) -> Result<roxmltree::Node<'a, 'input>, VocError> {
    child(parent, name).ok_or_else(|| {
        position(
            doc,
            parent,
            VocErrorKind::MissingElement {
                parent: parent.tag_name().name().to_string(),
                element: name.to_string(),
            },
        )
    })
}

/// Parses one LabelImg annotation document.
pub fn parse_voc_xml(text: &str) -> Result<AnnotatedImage, VocError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        VocError {
            line: pos.row,
            col: pos.col,
            kind: VocErrorKind::Xml(e.to_string()),
        }
    })?;
    let at = |node: roxmltree::Node, kind: VocErrorKind| position(&doc, node, kind);

    let root = doc.root_element();
    if root.tag_name().name() != "annotation" {
        return Err(at(root, VocErrorKind::WrongRoot(root.tag_name().name().to_string())));
    }
    let filename = child(root, "filename").map(|n| text_of(n).to_string()).unwrap_or_default();

    let size = require_child(&doc, root, "size")?;
    let int_of = |parent: roxmltree::Node<'_, '_>, name: &str| -> Result<u32, VocError> {
        let n = require_child(&doc, parent, name)?;
        let t = text_of(n);
        // LabelImg sometimes writes sizes as "400.0".
        t.parse::<u32>()
            .ok()
            .or_else(|| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= u32::MAX as f64)
                    .map(|v| v as u32)
            })
            .ok_or_else(|| {
                at(
                    n,
                    VocErrorKind::InvalidNumber {
                        element: name.to_string(),
                        text: t.to_string(),
                    },
                )
            })
    };
    let width = int_of(size, "width")?;
    let height = int_of(size, "height")?;
    let depth = match child(size, "depth") {
        Some(_) => int_of(size, "depth")?,
        None => 3,
    };
    if width == 0 || height == 0 {
        return Err(at(size, VocErrorKind::InvalidSize { width, height }));
    }

    let mut image = AnnotatedImage {
        filename,
        width,
        height,
        depth,
        objects: Vec::new(),
    };
    for (index, obj) in root
        .children()
        .filter(|c| c.is_element() && c.tag_name().name() == "object")
        .enumerate()
    {
        let name_node = require_child(&doc, obj, "name")?;
        let label = text_of(name_node).to_string();
        if label.is_empty() {
            return Err(at(name_node, VocErrorKind::EmptyLabel { index }));
        }
        let bnd = require_child(&doc, obj, "bndbox")?;
        let coord = |name: &str| -> Result<f64, VocError> {
            let n = require_child(&doc, bnd, name)?;
            let t = text_of(n);
            t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                at(
                    n,
                    VocErrorKind::InvalidNumber {
                        element: name.to_string(),
                        text: t.to_string(),
                    },
                )
            })
        };
        let (xmin, ymin, xmax, ymax) = (coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?);
        let bbox = BoundingBox::new(xmin, ymin, xmax, ymax).map_err(|_| {
            at(
                bnd,
                VocErrorKind::DegenerateBox {
                    index,
                    xmin,
                    ymin,
                    xmax,
                    ymax,
                },
            )
        })?;
        if !image.box_in_bounds(&bbox) {
            return Err(at(bnd, VocErrorKind::BoxOutOfBounds { index, width, height }));
        }
        image.objects.push(AnnotatedObject { label, bbox });
    }
    Ok(image)
}

fn fmt_coord(v: f64) -> String {
    // Shortest representation that parses back to the same value; integral
    // coordinates stay integers the way LabelImg writes them.
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{}", v)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Writes the annotation in LabelImg's layout.
pub fn serialize_voc(a: &AnnotatedImage) -> String {
    let mut s = String::new();
    s.push_str("<annotation>\n");
    s.push_str("\t<folder>images</folder>\n");
    s.push_str(&format!("\t<filename>{}</filename>\n", escape(&a.filename)));
    s.push_str("\t<source>\n\t\t<database>Unknown</database>\n\t</source>\n");
    s.push_str(&format!(
        "\t<size>\n\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>{}</depth>\n\t</size>\n",
        a.width, a.height, a.depth
    ));
    s.push_str("\t<segmented>0</segmented>\n");
    for o in &a.objects {
        s.push_str("\t<object>\n");
        s.push_str(&format!("\t\t<name>{}</name>\n", escape(&o.label)));
        s.push_str("\t\t<pose>Unspecified</pose>\n\t\t<truncated>0</truncated>\n\t\t<difficult>0</difficult>\n");
        s.push_str(&format!(
            "\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>\n",
            fmt_coord(o.bbox.xmin()),
            fmt_coord(o.bbox.ymin()),
            fmt_coord(o.bbox.xmax()),
            fmt_coord(o.bbox.ymax())
        ));
        s.push_str("\t</object>\n");
    }
    s.push_str("</annotation>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    images: Vec<AnnotatedImage>,
    labels: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<AnnotatedImage>) -> Self {
        let labels: BTreeSet<String> = images
            .iter()
            .flat_map(|i| i.objects.iter().map(|o| o.label.clone()))
            .collect();
        Self {
            images,
            labels: labels.into_iter().collect(),
        }
    }

    pub fn images(&self) -> &[AnnotatedImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sorted unique labels; a label's position is its class id.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Warning,
    Error,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Warning => "WARNING",
            Level::Error => "ERROR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub level: Level,
    pub code: &'static str,
    pub message: String,
}

impl Finding {
    fn error(code: &'static str, message: String) -> Self {
        Self {
            level: Level::Error,
            code,
            message,
        }
    }

    fn warning(code: &'static str, message: String) -> Self {
        Self {
            level: Level::Warning,
            code,
            message,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.level, self.code, self.message)
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.level == Level::Error)
}

/// Dataset-level checks. Order: empty dataset, duplicate filenames,
/// out-of-bounds boxes (dataset order), then under-represented classes
/// (label order).
pub fn validate_dataset(d: &Dataset, min_per_class: usize) -> Vec<Finding> {
    let mut out = Vec::new();
    if d.is_empty() {
        out.push(Finding::error("empty_dataset", "dataset contains no annotated images".into()));
        return out;
    }

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for img in d.images() {
        *seen.entry(img.filename.as_str()).or_default() += 1;
    }
    for (name, n) in seen.iter().filter(|(_, n)| **n > 1) {
        out.push(Finding::error("duplicate_filename", format!("{name} appears {n} times")));
    }

    for img in d.images() {
        for (i, o) in img.objects.iter().enumerate() {
            if !img.box_in_bounds(&o.bbox) {
                out.push(Finding::error(
                    "box_out_of_bounds",
                    format!(
                        "{} object {} ({}) box ({}, {}, {}, {}) exceeds {}x{}",
                        img.filename,
                        i,
                        o.label,
                        o.bbox.xmin(),
                        o.bbox.ymin(),
                        o.bbox.xmax(),
                        o.bbox.ymax(),
                        img.width,
                        img.height
                    ),
                ));
            }
        }
    }

    let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
    for img in d.images() {
        for label in img.labels() {
            *per_class.entry(label).or_default() += 1;
        }
    }
    for (label, n) in per_class {
        if n < min_per_class {
            out.push(Finding::warning(
                "class_below_minimum",
                format!("class {label} has {n} images, below recommended {min_per_class}"),
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self, String> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(format!("train fraction must lie in (0, 1], got {train_fraction}"));
        }
        Ok(Self { train_fraction, seed })
    }
}

/// Stratification key: the image's most frequent label, ties to the
/// lexicographically smallest; images without objects share the empty key.
fn strata_key(img: &AnnotatedImage) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for o in &img.objects {
        *counts.entry(o.label.as_str()).or_default() += 1;
    }
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(l, _)| l.to_string())
        .unwrap_or_default()
}

/// Seeded shuffle followed by a prefix split. When every stratum holds at
/// least two images each one is split separately, with the per-stratum
/// train counts apportioned by largest remainder so the total stays
/// `round(fraction · n)`.
pub fn split(d: &Dataset, spec: SplitSpec) -> (Dataset, Dataset) {
    let n = d.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let target = ((spec.train_fraction * n as f64).round() as usize).min(n);

    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        strata.entry(strata_key(&d.images()[i])).or_default().push(i);
    }
    let stratified = strata.len() > 1 && strata.values().all(|s| s.len() >= 2);

    let mut train_idx = Vec::with_capacity(target);
    let mut test_idx = Vec::with_capacity(n - target);
    if stratified {
        let quotas: Vec<(usize, f64)> = strata
            .values()
            .map(|s| {
                let exact = spec.train_fraction * s.len() as f64;
                (exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| q.0).collect();
        let mut remaining = target.saturating_sub(take.iter().sum());
        let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
        by_remainder.sort_by(|&a, &b| {
            quotas[b]
                .1
                .partial_cmp(&quotas[a].1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for s in by_remainder {
            if remaining == 0 {
                break;
            }
            take[s] += 1;
            remaining -= 1;
        }
        for (members, t) in strata.values().zip(take) {
            train_idx.extend_from_slice(&members[..t]);
            test_idx.extend_from_slice(&members[t..]);
        }
    } else {
        train_idx.extend_from_slice(&order[..target]);
        test_idx.extend_from_slice(&order[target..]);
    }
    let pick = |ix: &[usize]| Dataset::new(ix.iter().map(|&i| d.images()[i].clone()).collect());
    (pick(&train_idx), pick(&test_idx))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetStats {
    /// Object count per label.
    pub counts: BTreeMap<String, usize>,
    /// Histogram of `sqrt(box area) / sqrt(image area)` over 10 equal bins.
    pub size_histogram: [usize; 10],
}

pub fn stats(d: &Dataset) -> DatasetStats {
    let mut s = DatasetStats::default();
    for img in d.images() {
        let side = ((img.width as f64) * (img.height as f64)).sqrt();
        for o in &img.objects {
            *s.counts.entry(o.label.clone()).or_default() += 1;
            let rel = o.bbox.area().sqrt() / side;
            let bin = ((rel * 10.0).floor().max(0.0) as usize).min(9);
            s.size_histogram[bin] += 1;
        }
    }
    s
}

/// A dataset read from disk together with the problems met on the way.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub findings: Vec<Finding>,
    /// Image file paired with each entry of `dataset`, when one exists.
    pub image_paths: Vec<Option<PathBuf>>,
}

/// Reads `annotations/*.xml` under `root` and pairs each with the file in
/// `images/` sharing its stem. Unparseable annotations become error findings
/// and are left out of the dataset.
pub fn load_dataset_dir(root: impl AsRef<Path>) -> std::io::Result<LoadedDataset> {
    let root = root.as_ref();
    let ann_dir = root.join("annotations");
    let mut xmls: Vec<PathBuf> = fs::read_dir(&ann_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    xmls.sort();

    let mut images_by_stem: HashMap<String, PathBuf> = HashMap::new();
    if let Ok(entries) = fs::read_dir(root.join("images")) {
        for p in entries.filter_map(|e| e.ok().map(|e| e.path())) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                images_by_stem.entry(stem.to_string()).or_insert(p);
            }
        }
    }

    let mut findings = Vec::new();
    let mut images = Vec::new();
    let mut image_paths = Vec::new();
    for path in xmls {
        let shown = path.file_name().and_then(|s| s.to_str()).unwrap_or("?").to_string();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                findings.push(Finding::error("unreadable_annotation", format!("{shown}: {e}")));
                continue;
            }
        };
        match parse_voc_xml(&text) {
            Ok(img) => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let paired = images_by_stem.get(stem).cloned();
                if paired.is_none() {
                    findings.push(Finding::warning(
                        "missing_image",
                        format!("{shown}: no file named {stem}.* in images/"),
                    ));
                }
                image_paths.push(paired);
                images.push(img);
            }
            Err(e) => findings.push(Finding::error("parse_error", format!("{shown}:{e}"))),
        }
    }
    Ok(LoadedDataset {
        dataset: Dataset::new(images),
        findings,
        image_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const LION_XML: &str = r#"<annotation>
	<folder>images</folder>
	<filename>lion_001.jpg</filename>
	<path>/home/user/scarecrow/images/lion_001.jpg</path>
	<source>
		<database>Unknown</database>
	</source>
	<size>
		<width>400</width>
		<height>400</height>
		<depth>3</depth>
	</size>
	<segmented>0</segmented>
	<object>
		<name>lion</name>
		<pose>Unspecified</pose>
		<truncated>0</truncated>
		<difficult>0</difficult>
		<bndbox>
			<xmin>48</xmin>
			<ymin>24</ymin>
			<xmax>280</xmax>
			<ymax>360</ymax>
		</bndbox>
	</object>
</annotation>
"#;

    fn img(name: &str, labels: &[&str]) -> AnnotatedImage {
        AnnotatedImage {
            filename: name.to_string(),
            width: 100,
            height: 100,
            depth: 3,
            objects: labels
                .iter()
                .map(|l| AnnotatedObject {
                    label: l.to_string(),
                    bbox: BoundingBox::new(10.0, 10.0, 50.0, 50.0).unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn parses_lion_fixture() {
        let a = parse_voc_xml(LION_XML).unwrap();
        assert_eq!(a.filename, "lion_001.jpg");
        assert_eq!((a.width, a.height, a.depth), (400, 400, 3));
        assert_eq!(a.objects.len(), 1);
        assert_eq!(a.objects[0].label, "lion");
        assert_eq!(a.objects[0].bbox, BoundingBox::new(48.0, 24.0, 280.0, 360.0).unwrap());
    }

    #[test]
    fn missing_size_is_reported_with_position() {
        let doc = "<annotation>\n  <filename>a.jpg</filename>\n</annotation>";
        let e = parse_voc_xml(doc).unwrap_err();
        assert_eq!((e.line, e.col), (1, 1));
        assert_eq!(
            e.kind,
            VocErrorKind::MissingElement {
                parent: "annotation".into(),
                element: "size".into()
            }
        );
        assert!(e.to_string().contains("size"));
    }

    #[test]
    fn degenerate_box_is_reported() {
        let doc = LION_XML
            .replace("<xmin>48</xmin>", "<xmin>100</xmin>")
            .replace("<xmax>280</xmax>", "<xmax>100</xmax>");
        let e = parse_voc_xml(&doc).unwrap_err();
        assert!(matches!(e.kind, VocErrorKind::DegenerateBox { index: 0, .. }));
        assert_eq!(e.line, 19);
    }

    #[test]
    fn other_guards() {
        let oob = LION_XML.replace("<xmax>280</xmax>", "<xmax>401</xmax>");
        assert!(matches!(
            parse_voc_xml(&oob).unwrap_err().kind,
            VocErrorKind::BoxOutOfBounds { .. }
        ));
        let missing = LION_XML.replace("<ymax>360</ymax>", "");
        assert!(matches!(
            parse_voc_xml(&missing).unwrap_err().kind,
            VocErrorKind::MissingElement { ref element, .. } if element == "ymax"
        ));
        let nan = LION_XML.replace("<ymin>24</ymin>", "<ymin>abc</ymin>");
        let e = parse_voc_xml(&nan).unwrap_err();
        assert!(matches!(e.kind, VocErrorKind::InvalidNumber { .. }));
        assert_eq!(e.line, 21);
        let broken = "<annotation><size></annotation>";
        assert!(matches!(parse_voc_xml(broken).unwrap_err().kind, VocErrorKind::Xml(_)));
        assert!(matches!(
            parse_voc_xml("<foo/>").unwrap_err().kind,
            VocErrorKind::WrongRoot(_)
        ));
    }

    #[test]
    fn roundtrip_fixtures() {
        let a = parse_voc_xml(LION_XML).unwrap();
        assert_eq!(parse_voc_xml(&serialize_voc(&a)).unwrap(), a);

        let empty = AnnotatedImage {
            objects: vec![],
            ..a.clone()
        };
        let text = serialize_voc(&empty);
        assert!(!text.contains("<object>"));
        assert_eq!(parse_voc_xml(&text).unwrap(), empty);

        let mut frac = a.clone();
        frac.objects[0].bbox = BoundingBox::new(10.125, 20.5, 30.75, 40.001).unwrap();
        let text = serialize_voc(&frac);
        assert!(text.contains("<xmin>10.125</xmin>") && text.contains("<ymax>40.001</ymax>"));
        assert_eq!(parse_voc_xml(&text).unwrap(), frac);
    }

    #[test]
    fn validation_findings() {
        let clean = Dataset::new(vec![img("a.jpg", &["lion"]), img("b.jpg", &["lion"])]);
        assert!(validate_dataset(&clean, 2).is_empty());

        let cheetahs: Vec<_> = (0..12).map(|i| img(&format!("c{i}.jpg"), &["cheetah"])).collect();
        let f = validate_dataset(&Dataset::new(cheetahs), 50);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].level, Level::Warning);
        assert!(f[0].message.contains("below recommended 50"), "{}", f[0].message);
        assert_eq!(
            f[0].to_string(),
            "WARNING\tclass_below_minimum\tclass cheetah has 12 images, below recommended 50"
        );

        let dup = Dataset::new(vec![img("a.jpg", &["lion"]), img("a.jpg", &["lion"])]);
        let f = validate_dataset(&dup, 1);
        assert_eq!(f[0].code, "duplicate_filename");
        assert!(has_errors(&f));

        let mut out = img("o.jpg", &["lion"]);
        out.objects[0].bbox = BoundingBox::new(10.0, 10.0, 150.0, 50.0).unwrap();
        let f = validate_dataset(&Dataset::new(vec![out]), 1);
        assert_eq!(f[0].code, "box_out_of_bounds");

        let f = validate_dataset(&Dataset::default(), 50);
        assert_eq!(f[0].code, "empty_dataset");
    }

    #[test]
    fn split_fixtures() {
        let d = Dataset::new((0..50).map(|i| img(&format!("{i:02}.jpg"), &["lion"])).collect());
        let spec = SplitSpec::new(0.8, 7).unwrap();
        let (train, test) = split(&d, spec);
        assert_eq!((train.len(), test.len()), (40, 10));
        assert_eq!(split(&d, spec), (train.clone(), test.clone()));
        let mut names: Vec<_> = train
            .images()
            .iter()
            .chain(test.images())
            .map(|i| i.filename.clone())
            .collect();
        names.sort();
        assert_eq!(names, d.images().iter().map(|i| i.filename.clone()).collect::<Vec<_>>());

        let (all, none) = split(&d, SplitSpec::new(1.0, 7).unwrap());
        assert_eq!((all.len(), none.len()), (50, 0));
        assert!(SplitSpec::new(0.0, 1).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let mut images: Vec<_> = (0..30).map(|i| img(&format!("l{i}.jpg"), &["lion"])).collect();
        images.extend((0..10).map(|i| img(&format!("c{i}.jpg"), &["cat"])));
        let (train, test) = split(&Dataset::new(images), SplitSpec::new(0.5, 3).unwrap());
        let cats = |d: &Dataset| d.images().iter().filter(|i| i.objects[0].label == "cat").count();
        assert_eq!((train.len(), test.len()), (20, 20));
        assert_eq!((cats(&train), cats(&test)), (5, 5));
    }

    #[test]
    fn stats_fixtures() {
        let s = stats(&Dataset::default());
        assert!(s.counts.is_empty());
        assert_eq!(s.size_histogram, [0; 10]);

        let d = Dataset::new(vec![img("a", &["lion", "lion", "cat"]), img("b", &["lion", "cat"])]);
        let s = stats(&d);
        assert_eq!(s.counts, BTreeMap::from([("cat".to_string(), 2), ("lion".to_string(), 3)]));
        // 40x40 boxes in a 100x100 image land in bin 4.
        assert_eq!(s.size_histogram[4], 5);

        let mut full = img("f", &["lion"]);
        full.objects[0].bbox = BoundingBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
        assert_eq!(stats(&Dataset::new(vec![full])).size_histogram[9], 1);
    }

    #[test]
    fn label_index_is_dense_and_sorted() {
        let d = Dataset::new(vec![img("a", &["lion", "cat"]), img("b", &["cheetah"])]);
        assert_eq!(d.labels(), ["cat", "cheetah", "lion"]);
        assert_eq!(d.class_id("lion"), Some(2));
        assert_eq!(d.class_id("capybara"), None);
    }
}
