//! Video frames, occlusion masks, landmarks, and training samples.
//!
//! Frames live in `[-1, 1]` as `[T, H, W, 3]` tensors; masks are `[T, H, W]`
//! with 1 = occluded. A deterministic synthetic "face" generator (translating
//! ellipse head, eye blobs, a mouth arc whose curvature oscillates over time)
//! stands in for real footage so the whole pipeline can be exercised and
//! tested at desk scale.
//!
//! On-disk formats:
//! - frames: 8-bit RGB PNG, zero-padded numeric filenames defining order;
//! - landmarks: one text file per video, `t l row col` per line,
//!   `#`-prefixed comment lines allowed;
//! - manifest: `manifest.json` listing videos, frame paths, landmark paths,
//!   and train/val splits, all relative to the manifest's directory.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered RGB frames in `[-1, 1]`, shaped `[T, H, W, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Tensor,
    pub frame_rate: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Tensor, frame_rate: Option<f64>) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[3] != 3 || s[0] == 0 {
            return Err(Error::Data(format!("frame tensor must be [T>=1, H, W, 3], got {s:?}")));
        }
        if frames.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::Data("frame values must lie in [-1, 1]".into()));
        }
        Ok(FrameSequence { frames, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.dim(1)
    }

    pub fn width(&self) -> usize {
        self.frames.dim(2)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    /// One frame as `[H, W, 3]`.
    pub fn frame(&self, t: usize) -> Tensor {
        let (h, w) = (self.height(), self.width());
        let start = t * h * w * 3;
        Tensor::new(vec![h, w, 3], self.frames.data()[start..start + h * w * 3].to_vec())
    }

    /// Channel-first clip `[T, 3, H, W]`, the layout the networks consume.
    pub fn to_clip(&self) -> Tensor {
        let (t, h, w) = (self.len(), self.height(), self.width());
        let d = self.frames.data();
        let mut out = vec![0.0; d.len()];
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        out[((ti * 3 + c) * h + y) * w + x] = d[((ti * h + y) * w + x) * 3 + c];
                    }
                }
            }
        }
        Tensor::new(vec![t, 3, h, w], out)
    }

    /// Inverse of [`FrameSequence::to_clip`]; values are clamped to `[-1, 1]`.
    pub fn from_clip(clip: &Tensor, frame_rate: Option<f64>) -> Result<Self> {
        let s = clip.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Data(format!("clip must be [T, 3, H, W], got {s:?}")));
        }
        let (t, h, w) = (s[0], s[2], s[3]);
        let d = clip.data();
        let mut out = vec![0.0; d.len()];
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        out[((ti * h + y) * w + x) * 3 + c] =
                            d[((ti * 3 + c) * h + y) * w + x].clamp(-1.0, 1.0);
                    }
                }
            }
        }
        FrameSequence::new(Tensor::new(vec![t, h, w, 3], out), frame_rate)
    }
}

/// Pixel-space occlusion rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BBox {
    pub fn validate(&self, frame_h: usize, frame_w: usize) -> Result<()> {
        if self.height < 1 || self.width < 1 {
            return Err(Error::Parameter("bounding box sides must be >= 1".into()));
        }
        if self.top + self.height > frame_h || self.left + self.width > frame_w {
            return Err(Error::Parameter(format!(
                "bounding box {self:?} exceeds frame {frame_h}x{frame_w}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Static,
    Moving,
}

/// Binary occlusion maps, `[T, H, W]`, 1 = occluded.
///
/// The mask generators always produce at least one occluded pixel per frame;
/// masks loaded from disk at inference time may be empty (that is what lets
/// [`select_reference`] find an occlusion-free frame).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSequence {
    masks: Tensor,
    pub motion_kind: MotionKind,
}

impl MaskSequence {
    pub fn new(masks: Tensor, motion_kind: MotionKind) -> Result<Self> {
        let s = masks.shape();
        if s.len() != 3 || s[0] == 0 {
            return Err(Error::Data(format!("mask tensor must be [T>=1, H, W], got {s:?}")));
        }
        if masks.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("mask values must be exactly 0 or 1".into()));
        }
        if motion_kind == MotionKind::Static {
            let (t, hw) = (s[0], s[1] * s[2]);
            let first = &masks.data()[..hw];
            for ti in 1..t {
                if &masks.data()[ti * hw..(ti + 1) * hw] != first {
                    return Err(Error::Data("static mask sequences must repeat frame 0".into()));
                }
            }
        }
        Ok(MaskSequence { masks, motion_kind })
    }

    pub fn len(&self) -> usize {
        self.masks.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.masks.dim(1)
    }

    pub fn width(&self) -> usize {
        self.masks.dim(2)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.masks
    }

    pub fn occluded_pixels(&self, t: usize) -> usize {
        let hw = self.height() * self.width();
        self.masks.data()[t * hw..(t + 1) * hw].iter().filter(|&&v| v == 1.0).count()
    }

    pub fn frame_is_empty(&self, t: usize) -> bool {
        self.occluded_pixels(t) == 0
    }
}

/// Landmark coordinates, `[T, L, 2]` as (row, col) pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Tensor,
}

impl LandmarkSet {
    pub fn new(points: Tensor) -> Result<Self> {
        let s = points.shape();
        if s.len() != 3 || s[2] != 2 || s[1] == 0 {
            return Err(Error::Data(format!("landmarks must be [T, L>=1, 2], got {s:?}")));
        }
        Ok(LandmarkSet { points })
    }

    pub fn frames(&self) -> usize {
        self.points.dim(0)
    }

    pub fn count(&self) -> usize {
        self.points.dim(1)
    }

    pub fn point(&self, t: usize, l: usize) -> (f64, f64) {
        let base = (t * self.count() + l) * 2;
        (self.points.data()[base], self.points.data()[base + 1])
    }

    pub fn validate_bounds(&self, h: usize, w: usize) -> Result<()> {
        for t in 0..self.frames() {
            for l in 0..self.count() {
                let (r, c) = self.point(t, l);
                if !(0.0..h as f64).contains(&r) || !(0.0..w as f64).contains(&c) {
                    return Err(Error::Data(format!(
                        "landmark t={t} l={l} at ({r:.1}, {c:.1}) outside {h}x{w} frame"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gaussian-blob landmark heatmaps, `[T, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkMap {
    maps: Tensor,
}

impl LandmarkMap {
    pub fn tensor(&self) -> &Tensor {
        &self.maps
    }
}

/// Everything the generator needs for one clip.
#[derive(Clone, Debug)]
pub struct InpaintingSample {
    pub masked_frames: FrameSequence,
    pub masks: MaskSequence,
    pub landmarks: LandmarkMap,
    /// Occlusion-free anchor frame, `[H, W, 3]` in `[-1, 1]`.
    pub reference: Tensor,
    pub ground_truth: FrameSequence,
}

impl InpaintingSample {
    pub fn new(
        masked_frames: FrameSequence,
        masks: MaskSequence,
        landmarks: LandmarkMap,
        reference: Tensor,
        ground_truth: FrameSequence,
    ) -> Result<Self> {
        let (t, h, w) = (ground_truth.len(), ground_truth.height(), ground_truth.width());
        let agree = masked_frames.len() == t
            && masked_frames.height() == h
            && masked_frames.width() == w
            && masks.tensor().shape() == [t, h, w]
            && landmarks.maps.shape() == [t, h, w]
            && reference.shape() == [h, w, 3];
        if !agree {
            return Err(Error::Data("sample tensors disagree on T, H, W".into()));
        }
        // Unoccluded pixels of the masked frames must be the ground truth.
        let m = masks.tensor().data();
        let mf = masked_frames.tensor().data();
        let gt = ground_truth.tensor().data();
        for i in 0..t * h * w {
            if m[i] == 0.0 {
                for c in 0..3 {
                    if mf[i * 3 + c] != gt[i * 3 + c] {
                        return Err(Error::Data(
                            "masked frames differ from ground truth outside the mask".into(),
                        ));
                    }
                }
            }
        }
        Ok(InpaintingSample { masked_frames, masks, landmarks, reference, ground_truth })
    }
}

pub const DEFAULT_LANDMARK_SIGMA: f64 = 1.5;

// ---------------------------------------------------------------------------
// frame i/o
// ---------------------------------------------------------------------------

/// Decode, resize (bilinear), and normalize an ordered list of image files.
/// Pixels map through `p / 127.5 - 1`.
pub fn load_frames(paths: &[PathBuf], target_size: (usize, usize)) -> Result<FrameSequence> {
    if paths.is_empty() {
        return Err(Error::Data("no frame paths given".into()));
    }
    let (h, w) = target_size;
    let mut data = Vec::with_capacity(paths.len() * h * w * 3);
    for path in paths {
        let img = image::open(path)
            .map_err(|e| Error::Data(format!("cannot decode frame {}: {e}", path.display())))?
            .into_rgb8();
        let img = if (img.height() as usize, img.width() as usize) == (h, w) {
            img
        } else {
            image::imageops::resize(&img, w as u32, h as u32, image::imageops::FilterType::Triangle)
        };
        data.extend(img.pixels().flat_map(|p| p.0.iter().map(|&v| v as f64 / 127.5 - 1.0)));
    }
    FrameSequence::new(Tensor::new(vec![paths.len(), h, w, 3], data), None)
}

/// Write a sequence as 8-bit PNGs named `000000.png`, `000001.png`, ...
/// Returns the written paths in order.
pub fn save_frames(seq: &FrameSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    save_frames_named(seq, dir, &(0..seq.len()).map(|t| format!("{t:06}.png")).collect::<Vec<_>>())
}

/// Write a sequence as PNGs with caller-chosen file names.
pub fn save_frames_named(seq: &FrameSequence, dir: &Path, names: &[String]) -> Result<Vec<PathBuf>> {
    if names.len() != seq.len() {
        return Err(Error::Parameter("one file name per frame required".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (seq.height(), seq.width());
    let mut paths = Vec::with_capacity(seq.len());
    for (t, name) in names.iter().enumerate() {
        let frame = seq.frame(t);
        let bytes: Vec<u8> = frame
            .data()
            .iter()
            .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::RgbImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer sized from frame dims");
        let path = dir.join(name);
        img.save(&path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        paths.push(path);
    }
    Ok(paths)
}

/// PNG files in `dir` sorted by filename, the ordering contract for clips.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

// ---------------------------------------------------------------------------
// masks
// ---------------------------------------------------------------------------

fn sample_box(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize),
    size_range: (f64, f64),
) -> Result<BBox> {
    let (h, w) = shape;
    let (min_frac, max_frac) = size_range;
    if !(0.0 < min_frac && min_frac <= max_frac && max_frac <= 0.5) {
        return Err(Error::Parameter(format!(
            "size_range must satisfy 0 < min <= max <= 0.5, got ({min_frac}, {max_frac})"
        )));
    }
    let m = h.min(w) as f64;
    let lo = (min_frac * m).floor() as usize;
    let hi = (max_frac * m).floor() as usize;
    if lo < 1 {
        return Err(Error::Parameter(format!(
            "size_range ({min_frac}, {max_frac}) yields a degenerate 0-pixel box on {h}x{w} frames"
        )));
    }
    let bh = rng.random_range(lo..=hi);
    let bw = rng.random_range(lo..=hi);
    let top = rng.random_range(0..=h - bh);
    let left = rng.random_range(0..=w - bw);
    let bbox = BBox { top, left, height: bh, width: bw };
    bbox.validate(h, w)?;
    Ok(bbox)
}

fn rasterize_boxes(boxes: &[BBox], shape: (usize, usize), kind: MotionKind) -> Result<MaskSequence> {
    let (h, w) = shape;
    let mut data = vec![0.0; boxes.len() * h * w];
    for (t, b) in boxes.iter().enumerate() {
        for y in b.top..b.top + b.height {
            let row = (t * h + y) * w;
            data[row + b.left..row + b.left + b.width].fill(1.0);
        }
    }
    MaskSequence::new(Tensor::new(vec![boxes.len(), h, w], data), kind)
}

/// One uniformly sampled box, replicated over all `t` frames.
/// Box sides are uniform integers in `[floor(min_frac*m), floor(max_frac*m)]`
/// where `m = min(H, W)`; position is uniform over valid placements.
pub fn generate_static_mask(
    rng_seed: u64,
    t: usize,
    shape: (usize, usize),
    size_range: (f64, f64),
) -> Result<MaskSequence> {
    if t == 0 {
        return Err(Error::Parameter("mask sequence needs T >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let bbox = sample_box(&mut rng, shape, size_range)?;
    rasterize_boxes(&vec![bbox; t], shape, MotionKind::Static)
}

/// Fixed-size box whose center performs a uniform random walk with
/// per-frame displacement in `[-max_step, max_step]` per axis, clamped so
/// the box stays inside the frame.
pub fn generate_moving_mask(
    rng_seed: u64,
    t: usize,
    shape: (usize, usize),
    size_range: (f64, f64),
    max_step: usize,
) -> Result<MaskSequence> {
    if t == 0 {
        return Err(Error::Parameter("mask sequence needs T >= 1".into()));
    }
    if max_step < 1 {
        return Err(Error::Parameter("max_step must be >= 1".into()));
    }
    let (h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let first = sample_box(&mut rng, shape, size_range)?;
    let step = max_step as i64;
    let mut boxes = Vec::with_capacity(t);
    let (mut top, mut left) = (first.top as i64, first.left as i64);
    for ti in 0..t {
        if ti > 0 {
            top += rng.random_range(-step..=step);
            left += rng.random_range(-step..=step);
            top = top.clamp(0, (h - first.height) as i64);
            left = left.clamp(0, (w - first.width) as i64);
        }
        boxes.push(BBox {
            top: top as usize,
            left: left as usize,
            height: first.height,
            width: first.width,
        });
    }
    rasterize_boxes(&boxes, shape, MotionKind::Moving)
}

/// Zero out occluded pixels (0.0 is mid-gray in `[-1, 1]` space). The mask
/// itself travels alongside as an explicit channel, so the fill value is
/// informational only.
pub fn apply_mask(gt: &FrameSequence, m: &MaskSequence) -> Result<FrameSequence> {
    if (gt.len(), gt.height(), gt.width()) != (m.len(), m.height(), m.width()) {
        return Err(Error::Data("frame/mask shape mismatch".into()));
    }
    let md = m.tensor().data();
    let gd = gt.tensor().data();
    let mut out = gd.to_vec();
    for (i, &mask) in md.iter().enumerate() {
        if mask == 1.0 {
            out[i * 3..i * 3 + 3].fill(0.0);
        }
    }
    FrameSequence::new(
        Tensor::new(gt.tensor().shape().to_vec(), out),
        gt.frame_rate,
    )
}

/// Save masks as grayscale PNGs (255 = occluded), mirroring frame naming.
pub fn save_masks(m: &MaskSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (m.height(), m.width());
    let mut paths = Vec::new();
    for t in 0..m.len() {
        let hw = h * w;
        let bytes: Vec<u8> = m.tensor().data()[t * hw..(t + 1) * hw]
            .iter()
            .map(|&v| if v == 1.0 { 255u8 } else { 0u8 })
            .collect();
        let img = image::GrayImage::from_raw(w as u32, h as u32, bytes).unwrap();
        let path = dir.join(format!("{t:06}.png"));
        img.save(&path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Load grayscale mask PNGs (pixel > 127 means occluded).
pub fn load_masks(paths: &[PathBuf], motion_kind: MotionKind) -> Result<MaskSequence> {
    if paths.is_empty() {
        return Err(Error::Data("no mask paths given".into()));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for path in paths {
        let img = image::open(path)
            .map_err(|e| Error::Data(format!("cannot decode mask {}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if *dims.get_or_insert((h, w)) != (h, w) {
            return Err(Error::Data("mask frames disagree on size".into()));
        }
        data.extend(img.pixels().map(|p| if p.0[0] > 127 { 1.0 } else { 0.0 }));
    }
    let (h, w) = dims.unwrap();
    MaskSequence::new(Tensor::new(vec![paths.len(), h, w], data), motion_kind)
}

// ---------------------------------------------------------------------------
// landmarks
// ---------------------------------------------------------------------------

/// Render landmark points as a single-channel heatmap:
/// `map = clamp(sum_l exp(-d_l^2 / (2 sigma^2)), 0, 1)`.
pub fn render_landmarks(lm: &LandmarkSet, shape: (usize, usize), sigma: f64) -> Result<LandmarkMap> {
    if sigma <= 0.0 {
        return Err(Error::Parameter("landmark sigma must be positive".into()));
    }
    let (h, w) = shape;
    let t = lm.frames();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut maps = vec![0.0; t * h * w];
    for ti in 0..t {
        let frame = &mut maps[ti * h * w..(ti + 1) * h * w];
        for l in 0..lm.count() {
            let (lr, lc) = lm.point(ti, l);
            // Separable Gaussian: one exp per row and per column.
            let row_g: Vec<f64> = (0..h).map(|r| (-(r as f64 - lr).powi(2) * inv).exp()).collect();
            let col_g: Vec<f64> = (0..w).map(|c| (-(c as f64 - lc).powi(2) * inv).exp()).collect();
            for (r, &rg) in row_g.iter().enumerate() {
                if rg < 1e-300 {
                    continue;
                }
                let base = r * w;
                for (c, &cg) in col_g.iter().enumerate() {
                    frame[base + c] += rg * cg;
                }
            }
        }
        for v in frame.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(LandmarkMap { maps: Tensor::new(vec![t, h, w], maps) })
}

/// Parse a `t l row col` landmark file.
pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "{}:{}: expected `t l row col`, got {line:?}",
                path.display(),
                lineno + 1
            )));
        }
        let parse_err = |what: &str| {
            Error::Data(format!("{}:{}: cannot parse {what}", path.display(), lineno + 1))
        };
        rows.push((
            fields[0].parse().map_err(|_| parse_err("t"))?,
            fields[1].parse().map_err(|_| parse_err("l"))?,
            fields[2].parse().map_err(|_| parse_err("row"))?,
            fields[3].parse().map_err(|_| parse_err("col"))?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no landmark rows", path.display())));
    }
    let t = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let l = rows.iter().map(|r| r.1).max().unwrap() + 1;
    if rows.len() != t * l {
        return Err(Error::Data(format!(
            "{}: expected {t}x{l} = {} rows, found {}",
            path.display(),
            t * l,
            rows.len()
        )));
    }
    let mut points = vec![f64::NAN; t * l * 2];
    for (ti, li, r, c) in rows {
        points[(ti * l + li) * 2] = r;
        points[(ti * l + li) * 2 + 1] = c;
    }
    if points.iter().any(|v| v.is_nan()) {
        return Err(Error::Data(format!("{}: duplicate or missing (t, l) rows", path.display())));
    }
    LandmarkSet::new(Tensor::new(vec![t, l, 2], points))
}

pub fn save_landmarks(lm: &LandmarkSet, path: &Path) -> Result<()> {
    let mut text = String::from("# t l row col\n");
    for t in 0..lm.frames() {
        for l in 0..lm.count() {
            let (r, c) = lm.point(t, l);
            text.push_str(&format!("{t} {l} {r} {c}\n"));
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// reference selection & sample assembly
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferencePolicy {
    /// Ground truth is available (masks are synthetic): use frame 0.
    Training,
    /// Use the first frame whose mask is empty; error if none exists.
    Inference,
}

/// Pick the occlusion-free anchor frame for a clip.
pub fn select_reference(gt: &FrameSequence, m: &MaskSequence, policy: ReferencePolicy) -> Result<Tensor> {
    match policy {
        ReferencePolicy::Training => Ok(gt.frame(0)),
        ReferencePolicy::Inference => {
            for t in 0..m.len() {
                if m.frame_is_empty(t) {
                    return Ok(gt.frame(t));
                }
            }
            Err(Error::Data("no reference available: every frame is occluded".into()))
        }
    }
}

/// Bundle ground truth + masks + landmarks into a generator-ready sample.
pub fn build_sample(
    gt: &FrameSequence,
    masks: &MaskSequence,
    landmarks: &LandmarkSet,
    sigma: f64,
    policy: ReferencePolicy,
) -> Result<InpaintingSample> {
    let maps = render_landmarks(landmarks, (gt.height(), gt.width()), sigma)?;
    let masked = apply_mask(gt, masks)?;
    let reference = select_reference(gt, masks, policy)?;
    InpaintingSample::new(masked, masks.clone(), maps, reference, gt.clone())
}

// ---------------------------------------------------------------------------
// synthetic dataset
// ---------------------------------------------------------------------------

/// Parameters of one procedurally animated face; exposed so tests can verify
/// rendered landmarks against the generating geometry.
#[derive(Clone, Debug)]
pub struct SyntheticFaceParams {
    pub center0: (f64, f64),
    pub drift: (f64, f64),
    pub wobble_amp: (f64, f64),
    pub wobble_freq: f64,
    /// Ellipse semi-axes (rows, cols).
    pub axes: (f64, f64),
    pub skin: [f64; 3],
    pub background: [f64; 3],
    pub eye_color: [f64; 3],
    pub mouth_color: [f64; 3],
    /// Peak mouth curvature; the arc oscillates `sin(freq * t + phase)`.
    pub mouth_curve_max: f64,
    pub mouth_phase: f64,
    shape: (usize, usize),
}

impl SyntheticFaceParams {
    /// Face center at frame `t`, clamped so the ellipse stays in frame.
    /// On frames too small to contain the ellipse, the center pins to the
    /// middle of the (inverted) safe range.
    pub fn center(&self, t: usize) -> (f64, f64) {
        fn ordered_clamp(v: f64, lo: f64, hi: f64) -> f64 {
            if lo > hi {
                (lo + hi) / 2.0
            } else {
                v.clamp(lo, hi)
            }
        }
        let (h, w) = self.shape;
        let tf = t as f64;
        let r = self.center0.0
            + self.drift.0 * tf
            + self.wobble_amp.0 * (self.wobble_freq * tf).sin();
        let c = self.center0.1
            + self.drift.1 * tf
            + self.wobble_amp.1 * (self.wobble_freq * tf + 1.3).cos();
        (
            ordered_clamp(r, self.axes.0 + 1.0, h as f64 - self.axes.0 - 2.0),
            ordered_clamp(c, self.axes.1 + 1.0, w as f64 - self.axes.1 - 2.0),
        )
    }

    pub fn mouth_curvature(&self, t: usize) -> f64 {
        self.mouth_curve_max * (self.wobble_freq * 2.0 * t as f64 + self.mouth_phase).sin()
    }

    /// Five landmarks: eye centers, mouth corners, mouth apex.
    pub fn landmarks(&self, t: usize) -> [[f64; 2]; 5] {
        let (cr, cc) = self.center(t);
        let (ay, ax) = self.axes;
        let eye_dr = -0.25 * ay;
        let eye_dc = 0.35 * ax;
        let mouth_r = cr + 0.45 * ay;
        let half_w = 0.45 * ax;
        let apex_r = mouth_r + self.mouth_curvature(t) * 0.25 * ay;
        [
            [cr + eye_dr, cc - eye_dc],
            [cr + eye_dr, cc + eye_dc],
            [mouth_r, cc - half_w],
            [mouth_r, cc + half_w],
            [apex_r, cc],
        ]
    }

    /// True iff `(row, col)` lies inside the head ellipse at frame `t`.
    pub fn inside_head(&self, t: usize, row: f64, col: f64) -> bool {
        let (cr, cc) = self.center(t);
        let dr = (row - cr) / self.axes.0;
        let dc = (col - cc) / self.axes.1;
        dr * dr + dc * dc <= 1.0
    }
}

/// Deterministic per-video face parameters.
pub fn synthetic_face_params(seed: u64, video_idx: usize, shape: (usize, usize)) -> SyntheticFaceParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xFACE_u64 << 16) ^ video_idx as u64);
    let (h, w) = (shape.0 as f64, shape.1 as f64);
    let axes = (h * rng.random_range(0.28..0.36), w * rng.random_range(0.24..0.32));
    let center0 = (
        h * 0.5 + rng.random_range(-0.04..0.04) * h,
        w * 0.5 + rng.random_range(-0.04..0.04) * w,
    );
    let drift = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    SyntheticFaceParams {
        center0,
        drift,
        wobble_amp: (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)),
        wobble_freq: rng.random_range(0.3..0.7),
        axes,
        skin: [
            rng.random_range(0.3..0.8),
            rng.random_range(0.1..0.5),
            rng.random_range(-0.1..0.3),
        ],
        background: [
            rng.random_range(-0.9..-0.3),
            rng.random_range(-0.9..-0.3),
            rng.random_range(-0.5..0.1),
        ],
        eye_color: [-0.85, -0.85, -0.7],
        mouth_color: [0.1, -0.7, -0.6],
        mouth_curve_max: rng.random_range(0.15..0.25),
        mouth_phase: rng.random_range(0.0..std::f64::consts::TAU),
        shape,
    }
}

/// Render one synthetic face clip plus its landmark trajectory.
pub fn render_synthetic_video(
    seed: u64,
    video_idx: usize,
    t_len: usize,
    shape: (usize, usize),
) -> Result<(FrameSequence, LandmarkSet)> {
    if t_len == 0 {
        return Err(Error::Parameter("clip length must be >= 1".into()));
    }
    let params = synthetic_face_params(seed, video_idx, shape);
    let (h, w) = shape;
    let eye_radius = (0.10 * params.axes.0.min(params.axes.1)).max(1.0);
    let mouth_thickness = (0.06 * params.axes.0).max(1.0);

    let mut data = vec![0.0; t_len * h * w * 3];
    let mut points = Vec::with_capacity(t_len * 5 * 2);
    for t in 0..t_len {
        let (cr, cc) = params.center(t);
        let lms = params.landmarks(t);
        let half_w = 0.45 * params.axes.1;
        let mouth_r = cr + 0.45 * params.axes.0;
        let curve = params.mouth_curvature(t) * 0.25 * params.axes.0;
        for y in 0..h {
            for x in 0..w {
                let (ry, cx) = (y as f64, x as f64);
                let dr = (ry - cr) / params.axes.0;
                let dc = (cx - cc) / params.axes.1;
                let head = dr * dr + dc * dc;
                let mut color = if head <= 1.0 {
                    // mild shading toward the rim keeps the clip non-constant
                    let shade = 1.0 - 0.25 * head;
                    [params.skin[0] * shade, params.skin[1] * shade, params.skin[2] * shade]
                } else {
                    params.background
                };
                if head <= 1.0 {
                    for eye in &lms[..2] {
                        let d2 = (ry - eye[0]).powi(2) + (cx - eye[1]).powi(2);
                        if d2 <= eye_radius * eye_radius {
                            color = params.eye_color;
                        }
                    }
                    let u = cx - cc;
                    if u.abs() <= half_w {
                        let arc_row = mouth_r + curve * (1.0 - (u / half_w).powi(2));
                        if (ry - arc_row).abs() <= mouth_thickness {
                            color = params.mouth_color;
                        }
                    }
                }
                let base = ((t * h + y) * w + x) * 3;
                data[base] = color[0].clamp(-1.0, 1.0);
                data[base + 1] = color[1].clamp(-1.0, 1.0);
                data[base + 2] = color[2].clamp(-1.0, 1.0);
            }
        }
        for lm in lms {
            points.push(lm[0]);
            points.push(lm[1]);
        }
    }
    let frames = FrameSequence::new(Tensor::new(vec![t_len, h, w, 3], data), None)?;
    let landmarks = LandmarkSet::new(Tensor::new(vec![t_len, 5, 2], points))?;
    Ok((frames, landmarks))
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub frame_paths: Vec<PathBuf>,
    pub landmark_path: PathBuf,
    pub split: Split,
}

/// Dataset index. All paths are relative to `root`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn frame_paths(&self, entry: &ManifestEntry) -> Vec<PathBuf> {
        entry.frame_paths.iter().map(|p| self.root.join(p)).collect()
    }

    pub fn landmark_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.landmark_path)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Load `manifest.json` from `dir`, checking path existence and id
    /// uniqueness.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        manifest.root = dir.to_path_buf();
        let mut seen = std::collections::HashSet::new();
        for entry in &manifest.entries {
            if !seen.insert(entry.video_id.clone()) {
                return Err(Error::Data(format!("duplicate video_id {}", entry.video_id)));
            }
            for p in manifest.frame_paths(entry) {
                if !p.exists() {
                    return Err(Error::Data(format!("missing frame file {}", p.display())));
                }
            }
            if !manifest.landmark_path(entry).exists() {
                return Err(Error::Data(format!(
                    "missing landmark file {}",
                    manifest.landmark_path(entry).display()
                )));
            }
        }
        Ok(manifest)
    }
}

/// Write a synthetic dataset to `root`: per-video PNG clips, landmark files,
/// and a manifest. With two or more videos the last one is the `val` split.
pub fn make_synthetic_dataset(
    rng_seed: u64,
    n_videos: usize,
    t_len: usize,
    shape: (usize, usize),
    root: &Path,
) -> Result<DatasetManifest> {
    if n_videos < 1 {
        return Err(Error::Parameter("need at least one video".into()));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(n_videos);
    for idx in 0..n_videos {
        let video_id = format!("video_{idx:03}");
        let video_dir = root.join(&video_id);
        let (frames, landmarks) = render_synthetic_video(rng_seed, idx, t_len, shape)?;
        let paths = save_frames(&frames, &video_dir)?;
        let landmark_path = video_dir.join("landmarks.txt");
        save_landmarks(&landmarks, &landmark_path)?;
        entries.push(ManifestEntry {
            video_id,
            frame_paths: paths
                .iter()
                .map(|p| p.strip_prefix(root).unwrap().to_path_buf())
                .collect(),
            landmark_path: landmark_path.strip_prefix(root).unwrap().to_path_buf(),
            split: if n_videos >= 2 && idx == n_videos - 1 { Split::Val } else { Split::Train },
        });
    }
    let manifest = DatasetManifest { root: root.to_path_buf(), entries };
    manifest.save(root)?;
    Ok(manifest)
}
