//! Ground-truth ingestion, scale/crop augmentation and a synthetic word-image generator.

use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{intersection_area, GeometryError, Point, QuadBox, RotatedBox};
use crate::scalar::Scalar;
use crate::targets::{AnnotatedImage, Instance, DONT_CARE};
use crate::{Error, Result};

/// Fill value of crop padding.
pub const PAD_GRAY: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Icdar2015,
    Icdar2013,
    #[default]
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub scale_range: [f64; 2],
    pub crop_size: usize,
    /// Instances keeping less than this fraction of their area after cropping become don't-care.
    pub min_crop_overlap: f64,
    /// Always false: mirrored text is not text.
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_range: [0.5, 2.0],
            crop_size: 512,
            min_crop_overlap: 0.3,
            flip: false,
        }
    }
}

impl AugmentConfig {
    /// No scaling, crop equal to `size`.
    pub fn identity(size: usize) -> Self {
        AugmentConfig {
            scale_range: [1.0, 1.0],
            crop_size: size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "scale_range must satisfy 0 < min <= max, got {:?}",
                self.scale_range
            )));
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "crop_size must be a positive multiple of 32, got {}",
                self.crop_size
            )));
        }
        if !(0.0..=1.0).contains(&self.min_crop_overlap) {
            return Err(Error::Config("min_crop_overlap must lie in [0, 1]".into()));
        }
        if self.flip {
            return Err(Error::Config("horizontal flips are not supported".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub split: Split,
    pub format: DatasetFormat,
    pub augmentation: AugmentConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            root: PathBuf::from("data/synth"),
            split: Split::Train,
            format: DatasetFormat::Synthetic,
            augmentation: AugmentConfig::default(),
        }
    }
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn numeric_prefix(fields: &[&str], n: usize) -> Option<Vec<f64>> {
    if fields.len() < n {
        return None;
    }
    fields[..n]
        .iter()
        .map(|f| f.trim().parse::<f64>().ok())
        .collect()
}

/// Parses ICDAR ground truth text.
///
/// Each line is either `x1,y1,x2,y2,x3,y3,x4,y4,transcription` or the
/// rectangle form `x_min,y_min,x_max,y_max,transcription`; the transcription
/// may itself contain commas and may be quoted. `###` marks a don't-care
/// region. Quads that are not simple polygons are kept as don't-care.
pub fn parse_icdar_gt<F: Scalar>(text: &str, path: &str) -> Result<Vec<Instance<F>>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let (coords, rest) = if let Some(v) = numeric_prefix(&fields, 8) {
            (v, &fields[8..])
        } else if let Some(v) = numeric_prefix(&fields, 4) {
            let (x0, y0, x1, y1) = (v[0], v[1], v[2], v[3]);
            (vec![x0, y0, x1, y0, x1, y1, x0, y1], &fields[4..])
        } else {
            return Err(parse_err(
                path,
                line_no,
                "expected 8 or 4 leading numeric coordinates",
            ));
        };
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(parse_err(path, line_no, "non-finite coordinate"));
        }
        let mut transcription = rest.join(",").trim().to_string();
        if transcription.len() >= 2
            && transcription.starts_with('"')
            && transcription.ends_with('"')
        {
            transcription = transcription[1..transcription.len() - 1].to_string();
        }
        let c: [F; 8] = std::array::from_fn(|k| F::lit(coords[k]));
        match QuadBox::from_coords(c) {
            Ok(q) => out.push(Instance::new(q, transcription)),
            Err(e @ (GeometryError::NotSimple | GeometryError::Degenerate)) => {
                log::warn!("{path}:{line_no}: {e}; treating the instance as don't-care");
                let v = std::array::from_fn(|k| Point::new(c[2 * k], c[2 * k + 1]));
                out.push(Instance {
                    quad: QuadBox::raw(v),
                    text: transcription,
                    dont_care: true,
                });
            }
            Err(e) => return Err(parse_err(path, line_no, e.to_string())),
        }
    }
    Ok(out)
}

pub fn read_icdar_gt<F: Scalar>(path: &Path) -> Result<Vec<Instance<F>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_icdar_gt(&text, &path.display().to_string())
}

/// Serializes instances in the 8-coordinate form; don't-care instances are written as `###`.
pub fn format_icdar_gt<F: Scalar>(instances: &[Instance<F>]) -> String {
    let mut s = String::new();
    for inst in instances {
        let c = inst.quad.coords();
        for v in c {
            s.push_str(&format!("{},", v.as_f64()));
        }
        s.push_str(if inst.dont_care {
            DONT_CARE
        } else {
            &inst.text
        });
        s.push('\n');
    }
    s
}

/// Random scale, then a random `crop_size` square crop padded with mid-gray.
pub fn augment<F: Scalar, R: Rng + ?Sized>(
    sample: &AnnotatedImage<F>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> AnnotatedImage<F> {
    let [lo, hi] = cfg.scale_range;
    let s = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let (w0, h0) = sample.image.dimensions();
    let nw = ((w0 as f64 * s).round() as u32).max(1);
    let nh = ((h0 as f64 * s).round() as u32).max(1);
    let scaled = if (nw, nh) == (w0, h0) {
        sample.image.clone()
    } else {
        imageops::resize(&sample.image, nw, nh, imageops::FilterType::Triangle)
    };
    let (sx, sy) = (nw as f64 / w0 as f64, nh as f64 / h0 as f64);
    let c = cfg.crop_size as u32;
    let ox = if nw > c { rng.gen_range(0..=nw - c) } else { 0 };
    let oy = if nh > c { rng.gen_range(0..=nh - c) } else { 0 };
    let mut image = RgbImage::from_pixel(c, c, Rgb([PAD_GRAY; 3]));
    for y in 0..c.min(nh - oy) {
        for x in 0..c.min(nw - ox) {
            image.put_pixel(x, y, *scaled.get_pixel(x + ox, y + oy));
        }
    }
    let (fsx, fsy) = (F::lit(sx), F::lit(sy));
    let (fox, foy) = (
        F::from_u32(ox).unwrap_or_else(F::zero),
        F::from_u32(oy).unwrap_or_else(F::zero),
    );
    let cf = F::from_u32(c).unwrap_or_else(F::zero);
    let window = QuadBox::from_rect(F::zero(), F::zero(), cf, cf).expect("positive crop");
    let mut instances = Vec::new();
    for inst in &sample.instances {
        let v = inst
            .quad
            .vertices()
            .map(|p| Point::new(p.x * fsx - fox, p.y * fsy - foy));
        let Ok(q) = QuadBox::new(v) else {
            // Broken annotation geometry stays a don't-care region.
            let q = QuadBox::raw(v);
            let (x0, y0, x1, y1) = q.bounds();
            if x1 > F::zero() && y1 > F::zero() && x0 < cf && y0 < cf {
                instances.push(Instance {
                    quad: q,
                    text: DONT_CARE.to_string(),
                    dont_care: true,
                });
            }
            continue;
        };
        let survive = intersection_area(&q, &window) / q.area();
        if !(survive > F::zero()) {
            continue;
        }
        let dont_care = inst.dont_care || survive < F::lit(cfg.min_crop_overlap);
        let text = if dont_care {
            DONT_CARE.to_string()
        } else {
            inst.text.clone()
        };
        instances.push(Instance {
            quad: q,
            text,
            dont_care,
        });
    }
    AnnotatedImage { image, instances }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    #[default]
    Noise,
    Gradient,
    Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Square canvas side in pixels.
    pub canvas: usize,
    /// Inclusive range of words placed per image.
    pub words_per_image: [usize; 2],
    /// Word angles are drawn from `[-rotation_range, rotation_range]` radians.
    pub rotation_range: f64,
    /// Glyph height range in pixels.
    pub font_scale_range: [f64; 2],
    /// Inclusive range of glyphs per word.
    pub glyphs_per_word: [usize; 2],
    pub background: Background,
    pub seed: u64,
    /// Placement attempts per word before giving up on it.
    pub max_retries: usize,
    /// Minimum clearance between word boxes in pixels.
    pub spacing: f64,
    /// Skip the non-overlap check (stress testing only).
    pub allow_overlap: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            canvas: 256,
            words_per_image: [2, 4],
            rotation_range: 0.4,
            font_scale_range: [14.0, 26.0],
            glyphs_per_word: [3, 7],
            background: Background::Noise,
            seed: 0,
            max_retries: 100,
            spacing: 6.0,
            allow_overlap: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.canvas < 32 {
            return bad("canvas must be at least 32 pixels");
        }
        if self.words_per_image[0] > self.words_per_image[1] {
            return bad("words_per_image must be [min, max]");
        }
        if self.glyphs_per_word[0] < 2 || self.glyphs_per_word[0] > self.glyphs_per_word[1] {
            return bad("glyphs_per_word must be [min, max] with min >= 2");
        }
        let [a, b] = self.font_scale_range;
        if !(a >= 6.0 && a <= b && b < self.canvas as f64 / 2.0) {
            return bad("font_scale_range must satisfy 6 <= min <= max < canvas/2");
        }
        if !(self.rotation_range >= 0.0 && self.rotation_range <= std::f64::consts::FRAC_PI_4) {
            return bad("rotation_range must lie in [0, pi/4]");
        }
        if !(self.spacing >= 0.0) {
            return bad("spacing must be >= 0");
        }
        Ok(())
    }
}

const GLYPH_COLS: usize = 4;
const GLYPH_ROWS: usize = 6;

/// Fixed block bitmap for a letter; every column and the top/bottom rows carry ink.
fn glyph_bitmap(letter: u8) -> [[bool; GLYPH_COLS]; GLYPH_ROWS] {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c79_7068 ^ letter as u64);
    let mut g = [[false; GLYPH_COLS]; GLYPH_ROWS];
    for row in g.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.gen_bool(0.5);
        }
    }
    let rows: [usize; GLYPH_COLS] = std::array::from_fn(|_| rng.gen_range(0..GLYPH_ROWS));
    for (c, r) in rows.into_iter().enumerate() {
        g[r][c] = true;
    }
    g[0][rng.gen_range(0..GLYPH_COLS)] = true;
    g[GLYPH_ROWS - 1][rng.gen_range(0..GLYPH_COLS)] = true;
    g
}

struct WordLayout {
    text: String,
    glyph_h: f64,
    /// Padding between the glyph blocks and the word box.
    margin: f64,
    box_: RotatedBox<f64>,
}

impl WordLayout {
    fn glyph_w(&self) -> f64 {
        self.glyph_h * GLYPH_COLS as f64 / GLYPH_ROWS as f64
    }

    fn gap(&self) -> f64 {
        self.glyph_h * 0.25
    }

    fn size(glyph_h: f64, n: usize) -> (f64, f64) {
        let gw = glyph_h * GLYPH_COLS as f64 / GLYPH_ROWS as f64;
        let margin = glyph_h * 0.15;
        (
            n as f64 * gw + (n - 1) as f64 * glyph_h * 0.25 + 2.0 * margin,
            glyph_h + 2.0 * margin,
        )
    }

    /// Whether box-local point `(a, b)` (origin at the top-left corner) is ink.
    fn ink(&self, a: f64, b: f64, bitmaps: &[[[bool; GLYPH_COLS]; GLYPH_ROWS]]) -> bool {
        let (a, b) = (a - self.margin, b - self.margin);
        if a < 0.0 || b < 0.0 || b >= self.glyph_h {
            return false;
        }
        let pitch = self.glyph_w() + self.gap();
        let k = (a / pitch).floor() as usize;
        if k >= bitmaps.len() {
            return false;
        }
        let within = a - k as f64 * pitch;
        if within >= self.glyph_w() {
            return false;
        }
        let col = ((within / self.glyph_w()) * GLYPH_COLS as f64) as usize;
        let row = ((b / self.glyph_h) * GLYPH_ROWS as f64) as usize;
        bitmaps[k][row.min(GLYPH_ROWS - 1)][col.min(GLYPH_COLS - 1)]
    }
}

fn paint_background(img: &mut RgbImage, kind: Background, rng: &mut ChaCha8Rng) -> f64 {
    let (w, h) = img.dimensions();
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(70.0..190.0));
    match kind {
        Background::Noise => {
            for p in img.pixels_mut() {
                *p = Rgb(std::array::from_fn(|c| {
                    (base[c] + rng.gen_range(-20.0..20.0)).clamp(0.0, 255.0) as u8
                }));
            }
        }
        Background::Gradient => {
            let other: [f64; 3] = std::array::from_fn(|_| rng.gen_range(70.0..190.0));
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = ang.sin_cos();
            let norm = (w + h) as f64;
            for (x, y, p) in img.enumerate_pixels_mut() {
                let t = ((x as f64 * c + y as f64 * s) / norm + 0.5).clamp(0.0, 1.0);
                *p = Rgb(std::array::from_fn(|k| {
                    (base[k] * (1.0 - t) + other[k] * t) as u8
                }));
            }
        }
        Background::Texture => {
            let waves: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(0.02..0.2),
                        rng.gen_range(0.02..0.2),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            for (x, y, p) in img.enumerate_pixels_mut() {
                let v: f64 = waves
                    .iter()
                    .map(|(fx, fy, ph)| (x as f64 * fx + y as f64 * fy + ph).sin())
                    .sum::<f64>()
                    * 12.0;
                *p = Rgb(std::array::from_fn(|k| {
                    (base[k] + v).clamp(0.0, 255.0) as u8
                }));
            }
        }
    }
    base.iter().sum::<f64>() / 3.0
}

/// Renders image `index` of the synthetic set; identical `(cfg, index)` give identical output.
pub fn synthesize_one(cfg: &SynthConfig, index: u64) -> AnnotatedImage<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let n = cfg.canvas as u32;
    let mut image = RgbImage::new(n, n);
    let mean = paint_background(&mut image, cfg.background, &mut rng);
    let n_words = rng.gen_range(cfg.words_per_image[0]..=cfg.words_per_image[1]);
    let canvas = cfg.canvas as f64;
    let mut words: Vec<WordLayout> = Vec::new();
    let mut clearance: Vec<QuadBox<f64>> = Vec::new();
    for _ in 0..n_words {
        for _ in 0..cfg.max_retries.max(1) {
            let len = rng.gen_range(cfg.glyphs_per_word[0]..=cfg.glyphs_per_word[1]);
            let glyph_h = rng.gen_range(cfg.font_scale_range[0]..=cfg.font_scale_range[1]);
            let (bw, bh) = WordLayout::size(glyph_h, len);
            let theta = if cfg.rotation_range > 0.0 {
                rng.gen_range(-cfg.rotation_range..=cfg.rotation_range)
            } else {
                0.0
            };
            let cx = rng.gen_range(0.0..canvas);
            let cy = rng.gen_range(0.0..canvas);
            let box_ = RotatedBox {
                cx,
                cy,
                width: bw,
                height: bh,
                theta,
            };
            let inside = box_
                .corners()
                .iter()
                .all(|p| p.x >= 1.0 && p.y >= 1.0 && p.x <= canvas - 1.0 && p.y <= canvas - 1.0);
            if !inside {
                continue;
            }
            let pad = RotatedBox {
                width: bw + 2.0 * cfg.spacing,
                height: bh + 2.0 * cfg.spacing,
                ..box_
            };
            let Ok(padq) = QuadBox::new(pad.corners()) else {
                continue;
            };
            if !cfg.allow_overlap && clearance.iter().any(|o| intersection_area(o, &padq) > 0.0) {
                continue;
            }
            let text: String = (0..len)
                .map(|_| rng.gen_range(b'A'..=b'Z') as char)
                .collect();
            words.push(WordLayout {
                text,
                glyph_h,
                margin: glyph_h * 0.15,
                box_,
            });
            clearance.push(padq);
            break;
        }
    }
    let mut instances = Vec::with_capacity(words.len());
    for word in &words {
        let ink: Rgb<u8> = if mean > 128.0 {
            Rgb(std::array::from_fn(|_| rng.gen_range(0..40)))
        } else {
            Rgb(std::array::from_fn(|_| rng.gen_range(215..=255)))
        };
        let bitmaps: Vec<_> = word.text.bytes().map(glyph_bitmap).collect();
        let quad = QuadBox::new(word.box_.corners()).expect("positive word box");
        let (x0, y0, x1, y1) = quad.bounds();
        let (u, v) = word.box_.axes();
        let tl = word.box_.corners()[0];
        for y in (y0.floor().max(0.0) as u32)..(y1.ceil().min(canvas) as u32) {
            for x in (x0.floor().max(0.0) as u32)..(x1.ceil().min(canvas) as u32) {
                let d = Point::new(x as f64 + 0.5, y as f64 + 0.5) - tl;
                if word.ink(d.dot(u), d.dot(v), &bitmaps) {
                    image.put_pixel(x, y, ink);
                }
            }
        }
        instances.push(Instance::new(quad, word.text.clone()));
    }
    AnnotatedImage { image, instances }
}

/// `n` synthetic images; image `i` depends only on `(cfg, i)`.
pub fn generate_synthetic(cfg: &SynthConfig, n: usize) -> Result<Vec<AnnotatedImage<f64>>> {
    cfg.validate()?;
    Ok((0..n as u64).map(|i| synthesize_one(cfg, i)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub gt: String,
}

/// Index of a dataset directory; paths are relative to the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub format: DatasetFormat,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `images/*.png`, `gt/gt_*.txt` and a manifest.
pub fn save_dataset<F: Scalar>(
    dir: &Path,
    samples: &[AnnotatedImage<F>],
    synth: Option<&SynthConfig>,
) -> Result<Manifest> {
    for sub in ["images", "gt"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = format!("images/img_{i:05}.png");
        let gt = format!("gt/gt_img_{i:05}.txt");
        let ip = dir.join(&image);
        s.image.save(&ip).map_err(|e| Error::Image {
            path: ip.display().to_string(),
            source: e,
        })?;
        let gp = dir.join(&gt);
        fs::write(&gp, format_icdar_gt(&s.instances)).map_err(|e| Error::io(&gp, e))?;
        entries.push(ManifestEntry { image, gt });
    }
    let manifest = Manifest {
        version: 1,
        format: if synth.is_some() {
            DatasetFormat::Synthetic
        } else {
            DatasetFormat::Icdar2015
        },
        entries,
        synth: synth.cloned(),
    };
    let mp = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&mp, json + "\n").map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            source: e,
        })?
        .to_rgb8())
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Sorted image files of a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_image(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Image/ground-truth pairs of a dataset directory.
///
/// Uses the manifest when present; otherwise pairs every image `X.ext` under
/// `dir` (or `dir/images`) with `gt_X.txt` under `dir/gt` or `dir`.
pub fn dataset_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mp = dir.join(MANIFEST_FILE);
    if mp.is_file() {
        let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| parse_err(&mp.display().to_string(), e.line(), e.to_string()))?;
        return Ok(m
            .entries
            .into_iter()
            .map(|e| (dir.join(e.image), dir.join(e.gt)))
            .collect());
    }
    let img_dir = if dir.join("images").is_dir() {
        dir.join("images")
    } else {
        dir.to_path_buf()
    };
    let mut pairs = Vec::new();
    for img in list_images(&img_dir)? {
        let stem = img.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let name = format!("gt_{stem}.txt");
        let gt = [dir.join("gt").join(&name), dir.join(&name)]
            .into_iter()
            .find(|p| p.is_file());
        match gt {
            Some(gt) => pairs.push((img, gt)),
            None => {
                return Err(Error::Data(format!(
                    "no ground truth `{name}` for {}",
                    img.display()
                )))
            }
        }
    }
    Ok(pairs)
}

/// Loads every sample of a dataset directory.
pub fn load_dataset<F: Scalar>(spec: &DatasetSpec) -> Result<Vec<AnnotatedImage<F>>> {
    let split_dir = spec.root.join(match spec.split {
        Split::Train => "train",
        Split::Test => "test",
    });
    let dir = if split_dir.is_dir() {
        split_dir
    } else {
        spec.root.clone()
    };
    dataset_pairs(&dir)?
        .into_iter()
        .map(|(img, gt)| {
            Ok(AnnotatedImage {
                image: load_image(&img)?,
                instances: read_icdar_gt(&gt)?,
            })
        })
        .collect()
}
