//! Static PNG figures: line charts and image overlays.
//!
//! Drawing is done directly on an RGB raster with a built-in 3x5 pixel font,
//! so figures render identically everywhere without system fonts.

use image::{Rgb, RgbImage};
use textcontour::geometry::QuadBox;
use textcontour::grid::{Grid, Mask};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const GRID_GRAY: Rgb<u8> = Rgb([225, 225, 225]);
pub const RED: Rgb<u8> = Rgb([220, 40, 40]);
pub const GREEN: Rgb<u8> = Rgb([30, 170, 60]);
pub const BLUE: Rgb<u8> = Rgb([40, 90, 220]);
pub const ORANGE: Rgb<u8> = Rgb([240, 140, 20]);
pub const PURPLE: Rgb<u8> = Rgb([140, 60, 180]);
pub const PALETTE: [Rgb<u8>; 5] = [BLUE, RED, GREEN, ORANGE, PURPLE];

/// 3x5 glyphs, one string per row, `#` for ink.
const FONT: &[(char, [&str; 5])] = &[
    ('0', ["###", "#.#", "#.#", "#.#", "###"]),
    ('1', [".#.", "##.", ".#.", ".#.", "###"]),
    ('2', ["###", "..#", "###", "#..", "###"]),
    ('3', ["###", "..#", ".##", "..#", "###"]),
    ('4', ["#.#", "#.#", "###", "..#", "..#"]),
    ('5', ["###", "#..", "###", "..#", "###"]),
    ('6', ["###", "#..", "###", "#.#", "###"]),
    ('7', ["###", "..#", ".#.", ".#.", ".#."]),
    ('8', ["###", "#.#", "###", "#.#", "###"]),
    ('9', ["###", "#.#", "###", "..#", "###"]),
    ('A', [".#.", "#.#", "###", "#.#", "#.#"]),
    ('B', ["##.", "#.#", "##.", "#.#", "##."]),
    ('C', [".##", "#..", "#..", "#..", ".##"]),
    ('D', ["##.", "#.#", "#.#", "#.#", "##."]),
    ('E', ["###", "#..", "##.", "#..", "###"]),
    ('F', ["###", "#..", "##.", "#..", "#.."]),
    ('G', [".##", "#..", "#.#", "#.#", ".##"]),
    ('H', ["#.#", "#.#", "###", "#.#", "#.#"]),
    ('I', ["###", ".#.", ".#.", ".#.", "###"]),
    ('J', ["..#", "..#", "..#", "#.#", ".#."]),
    ('K', ["#.#", "#.#", "##.", "#.#", "#.#"]),
    ('L', ["#..", "#..", "#..", "#..", "###"]),
    ('M', ["#.#", "###", "###", "#.#", "#.#"]),
    ('N', ["##.", "#.#", "#.#", "#.#", "#.#"]),
    ('O', [".#.", "#.#", "#.#", "#.#", ".#."]),
    ('P', ["##.", "#.#", "##.", "#..", "#.."]),
    ('Q', [".#.", "#.#", "#.#", "##.", ".##"]),
    ('R', ["##.", "#.#", "##.", "#.#", "#.#"]),
    ('S', [".##", "#..", ".#.", "..#", "##."]),
    ('T', ["###", ".#.", ".#.", ".#.", ".#."]),
    ('U', ["#.#", "#.#", "#.#", "#.#", "###"]),
    ('V', ["#.#", "#.#", "#.#", "#.#", ".#."]),
    ('W', ["#.#", "#.#", "###", "###", "#.#"]),
    ('X', ["#.#", "#.#", ".#.", "#.#", "#.#"]),
    ('Y', ["#.#", "#.#", ".#.", ".#.", ".#."]),
    ('Z', ["###", "..#", ".#.", "#..", "###"]),
    ('.', ["...", "...", "...", "...", ".#."]),
    (',', ["...", "...", "...", ".#.", "#.."]),
    ('-', ["...", "...", "###", "...", "..."]),
    ('+', ["...", ".#.", "###", ".#.", "..."]),
    ('_', ["...", "...", "...", "...", "###"]),
    (':', ["...", ".#.", "...", ".#.", "..."]),
    ('=', ["...", "###", "...", "###", "..."]),
    ('/', ["..#", "..#", ".#.", "#..", "#.."]),
    ('@', [".#.", "#.#", "###", "#..", ".##"]),
    ('(', [".#.", "#..", "#..", "#..", ".#."]),
    (')', [".#.", "..#", "..#", "..#", ".#."]),
];

/// Pixel scale of the built-in font.
const TEXT_SCALE: u32 = 2;
/// Horizontal advance per character, in unscaled font pixels.
const ADVANCE: u32 = 4;

pub fn text_width(s: &str) -> u32 {
    s.chars().count() as u32 * ADVANCE * TEXT_SCALE
}

pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(w: u32, h: u32, bg: Rgb<u8>) -> Self {
        Canvas {
            img: RgbImage::from_pixel(w, h, bg),
        }
    }

    pub fn from_image(img: RgbImage) -> Self {
        Canvas { img }
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    /// Alpha-blends `c` over the pixel with weight `a` in `[0, 1]`.
    pub fn blend(&mut self, x: u32, y: u32, c: Rgb<u8>, a: f64) {
        if x < self.img.width() && y < self.img.height() {
            let p = self.img.get_pixel_mut(x, y);
            for k in 0..3 {
                p.0[k] = (p.0[k] as f64 * (1.0 - a) + c.0[k] as f64 * a).round() as u8;
            }
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    /// Bresenham segment with a square pen of side `thickness`.
    pub fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>, thickness: i64) {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return;
        }
        let (mut x, mut y) = (x0.round() as i64, y0.round() as i64);
        let (xe, ye) = (x1.round() as i64, y1.round() as i64);
        let (dx, dy) = ((xe - x).abs(), -(ye - y).abs());
        let (sx, sy) = (if x < xe { 1 } else { -1 }, if y < ye { 1 } else { -1 });
        let mut err = dx + dy;
        let lo = -(thickness - 1) / 2;
        loop {
            for oy in lo..lo + thickness {
                for ox in lo..lo + thickness {
                    self.put(x + ox, y + oy, c);
                }
            }
            if x == xe && y == ye {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], c: Rgb<u8>, thickness: i64) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], c, thickness);
        }
    }

    pub fn quad(&mut self, q: &QuadBox<f64>, scale: f64, c: Rgb<u8>, thickness: i64) {
        let v = q.vertices();
        let pts: Vec<(f64, f64)> = (0..5)
            .map(|i| (v[i % 4].x * scale, v[i % 4].y * scale))
            .collect();
        self.polyline(&pts, c, thickness);
    }

    /// Draws upper-cased `s` with its top-left corner at `(x, y)`.
    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb<u8>) {
        let k = TEXT_SCALE as i64;
        for (i, ch) in s.chars().enumerate() {
            let ch = ch.to_ascii_uppercase();
            let Some((_, rows)) = FONT.iter().find(|(g, _)| *g == ch) else {
                continue;
            };
            let ox = x + i as i64 * (ADVANCE as i64) * k;
            for (ry, row) in rows.iter().enumerate() {
                for (rx, b) in row.bytes().enumerate() {
                    if b == b'#' {
                        self.fill_rect(ox + rx as i64 * k, y + ry as i64 * k, k, k, c);
                    }
                }
            }
        }
    }

    /// Tints each pixel by a per-cell value of an output-resolution map (`stride` input pixels per cell).
    pub fn overlay_map(&mut self, map: &Grid<f64>, stride: u32, c: Rgb<u8>, max_alpha: f64) {
        for y in 0..self.img.height() {
            for x in 0..self.img.width() {
                let (gy, gx) = ((y / stride) as usize, (x / stride) as usize);
                if gy < map.h && gx < map.w {
                    let v = map.get(gy, gx).clamp(0.0, 1.0);
                    if v > 0.0 {
                        self.blend(x, y, c, v * max_alpha);
                    }
                }
            }
        }
    }

    pub fn overlay_mask(&mut self, mask: &Mask, stride: u32, c: Rgb<u8>, alpha: f64) {
        self.overlay_map(&mask.map(|v| v as f64), stride, c, alpha);
    }
}

/// Grayscale rendering of a `[0, 1]` map, each cell upscaled to `stride x stride` pixels.
pub fn heatmap(map: &Grid<f64>, stride: u32) -> RgbImage {
    let (w, h) = (map.w as u32 * stride, map.h as u32 * stride);
    RgbImage::from_fn(w, h, |x, y| {
        let v = (map
            .get((y / stride) as usize, (x / stride) as usize)
            .clamp(0.0, 1.0)
            * 255.0)
            .round() as u8;
        Rgb([v, v, v])
    })
}

/// One named polyline of a chart.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct ChartSpec<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_y: bool,
    /// Fixed y range; computed from the data when absent.
    pub y_range: Option<(f64, f64)>,
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders a line chart with axes, a light grid, min/max tick labels and a legend.
pub fn line_chart(series: &[Series], spec: &ChartSpec<'_>) -> RgbImage {
    let (w, h) = (800u32, 500u32);
    let (left, right, top, bottom) = (90i64, 20i64, 40i64, 60i64);
    let (pw, ph) = (w as i64 - left - right, h as i64 - top - bottom);
    let mut c = Canvas::new(w, h, WHITE);
    let ty = |v: f64| if spec.log_y { v.max(1e-12).log10() } else { v };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite() && (!spec.log_y || *y > 0.0))
        .collect();
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (mut y0, mut y1) = match spec.y_range {
        Some((a, b)) => (ty(a), ty(b)),
        None => pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(ty(p.1)), b.max(ty(p.1)))
            }),
    };
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left as f64 + (x - x0) / (x1 - x0) * pw as f64;
    let py = |y: f64| (top + ph) as f64 - (ty(y) - y0) / (y1 - y0) * ph as f64;

    for k in 0..=4 {
        let gy = top + ph * k / 4;
        c.line(
            (left as f64, gy as f64),
            ((left + pw) as f64, gy as f64),
            GRID_GRAY,
            1,
        );
        let gx = left + pw * k / 4;
        c.line(
            (gx as f64, top as f64),
            (gx as f64, (top + ph) as f64),
            GRID_GRAY,
            1,
        );
    }
    c.line(
        (left as f64, top as f64),
        (left as f64, (top + ph) as f64),
        BLACK,
        2,
    );
    c.line(
        (left as f64, (top + ph) as f64),
        ((left + pw) as f64, (top + ph) as f64),
        BLACK,
        2,
    );

    let untransform = |v: f64| if spec.log_y { 10f64.powf(v) } else { v };
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        let label = tick_label(untransform(v));
        let gy = top + ph - ph * k / 4;
        c.text(left - 8 - text_width(&label) as i64, gy - 5, &label, BLACK);
        let xv = x0 + (x1 - x0) * k as f64 / 4.0;
        let label = tick_label(xv);
        let gx = left + pw * k / 4;
        c.text(
            gx - text_width(&label) as i64 / 2,
            top + ph + 10,
            &label,
            BLACK,
        );
    }
    c.text(left, 12, spec.title, BLACK);
    c.text(
        left + pw / 2 - text_width(spec.x_label) as i64 / 2,
        h as i64 - 22,
        spec.x_label,
        BLACK,
    );
    let y_label = if spec.log_y {
        format!("{} (LOG)", spec.y_label)
    } else {
        spec.y_label.to_string()
    };
    c.text(4, top - 20, &y_label, BLACK);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let line: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!spec.log_y || *y > 0.0))
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        c.polyline(&line, color, 2);
        if line.len() == 1 {
            c.fill_rect(line[0].0 as i64 - 2, line[0].1 as i64 - 2, 5, 5, color);
        }
        let ly = top + 8 + 16 * i as i64;
        let lx = left + pw - 150;
        c.fill_rect(lx, ly + 3, 16, 4, color);
        c.text(lx + 22, ly, &s.name, BLACK);
    }
    c.img
}
