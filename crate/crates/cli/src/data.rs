//! Images, annotation files and CSV records.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gadaboost::eval::{BBox, GroundTruthBox, ImageDetection, RocPoint};
use gadaboost::image::GrayImage;
use serde::{Deserialize, Serialize};

const IMAGE_EXTENSIONS: [&str; 4] = ["pgm", "pnm", "png", "pbm"];

pub fn load_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .with_context(|| format!("cannot decode {}", path.display()))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(GrayImage::new(w, h, img.into_raw())?)
}

pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .context("image buffer size mismatch")?;
    buf.save_with_format(path, image::ImageFormat::Pnm)
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Image files directly inside `dir`, sorted by name.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("cannot read directory {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if known && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every image in `dir`, keyed by file name. Undecodable files are
/// skipped with a warning; the second value counts them.
pub fn load_dir(dir: &Path) -> Result<(Vec<(String, GrayImage)>, usize)> {
    let mut images = Vec::new();
    let mut skipped = 0;
    for path in image_files(dir)? {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match load_image(&path) {
            Ok(img) => images.push((name, img)),
            Err(e) => {
                log::warn!("skipping {}: {e:#}", path.display());
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} unreadable image(s) skipped in {}", dir.display());
    }
    Ok((images, skipped))
}

/// One annotated image: `path n x y w h ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub path: String,
    pub boxes: Vec<BBox>,
}

fn parse_counted(line: &str, lineno: usize, per_item: usize) -> Result<(String, Vec<f64>)> {
    let mut fields = line.split_whitespace();
    let path = fields.next().context("missing path")?.to_string();
    let n: usize = fields
        .next()
        .with_context(|| format!("line {lineno}: missing count"))?
        .parse()
        .with_context(|| format!("line {lineno}: count is not an integer"))?;
    let values = fields
        .map(|f| f.parse::<f64>().with_context(|| format!("line {lineno}: bad number {f:?}")))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != n * per_item {
        bail!("line {lineno}: expected {} numbers for {n} entries, found {}", n * per_item, values.len());
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        bail!("line {lineno}: non-finite value {v}");
    }
    Ok((path, values))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in content_lines(text) {
        let (path, values) = parse_counted(line, lineno, 4)?;
        let mut boxes = Vec::new();
        for v in values.chunks(4) {
            if v[0] < 0.0 || v[1] < 0.0 || v[2] <= 0.0 || v[3] <= 0.0 {
                bail!("line {lineno}: box {v:?} must have a non-negative origin and positive size");
            }
            boxes.push(BBox::new(v[0], v[1], v[2], v[3]));
        }
        records.push(AnnotationRecord { path, boxes });
    }
    Ok(records)
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        write!(out, "{} {}", r.path, r.boxes.len()).unwrap();
        for b in &r.boxes {
            write!(out, " {} {} {} {}", b.x, b.y, b.w, b.h).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_annotations(&text).with_context(|| format!("in {}", path.display()))
}

pub fn ground_truth(records: &[AnnotationRecord]) -> Vec<GroundTruthBox> {
    records
        .iter()
        .flat_map(|r| r.boxes.iter().map(|b| GroundTruthBox { image: r.path.clone(), bbox: *b }))
        .collect()
}

/// Fraction of the side above the eye line.
const EYE_LINE: f64 = 0.3;

/// Square face box from two eye centres: the side is twice the eye distance.
pub fn box_from_eyes(left: (f64, f64), right: (f64, f64)) -> Option<BBox> {
    let (dx, dy) = (right.0 - left.0, right.1 - left.1);
    let side = 2.0 * (dx * dx + dy * dy).sqrt();
    if side <= 0.0 {
        return None;
    }
    let (cx, cy) = (0.5 * (left.0 + right.0), 0.5 * (left.1 + right.1));
    Some(BBox::new(cx - 0.5 * side, cy - EYE_LINE * side, side, side))
}

/// Converts `path n lx ly rx ry ...` lines into annotation records. Boxes
/// are clipped to the non-negative quadrant.
pub fn convert_eye_file(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in content_lines(text) {
        let (path, values) = parse_counted(line, lineno, 4)?;
        let mut boxes = Vec::new();
        for v in values.chunks(4) {
            let b = box_from_eyes((v[0], v[1]), (v[2], v[3]))
                .with_context(|| format!("line {lineno}: eyes coincide"))?;
            let (x, y) = (b.x.max(0.0), b.y.max(0.0));
            boxes.push(BBox::new(x, y, b.w - (x - b.x), b.h - (y - b.y)));
        }
        records.push(AnnotationRecord { path, boxes });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub image: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl From<&ImageDetection> for DetectionRow {
    fn from(d: &ImageDetection) -> Self {
        Self {
            image: d.image.clone(),
            x: d.bbox.x,
            y: d.bbox.y,
            w: d.bbox.w,
            h: d.bbox.h,
            score: d.score,
        }
    }
}

impl DetectionRow {
    pub fn detection(&self) -> ImageDetection {
        ImageDetection {
            image: self.image.clone(),
            bbox: BBox::new(self.x, self.y, self.w, self.h),
            score: self.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub threshold: f64,
    pub false_positives: usize,
    pub true_positive_rate: f64,
}

impl From<&RocPoint> for RocRow {
    fn from(p: &RocPoint) -> Self {
        Self {
            threshold: p.score_threshold,
            false_positives: p.false_positives,
            true_positive_rate: p.true_positive_rate,
        }
    }
}

/// Writes `rows` with a header, even when there are none.
pub fn write_csv<T: Serialize>(path: &Path, headers: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(headers)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{} row {}", path.display(), i + 1)))
        .collect()
}
