//! Seeded synthetic image set.
//!
//! Positives show an elongated translucent float with curved trailing
//! tentacles on a gradient background. Negatives cycle through the seven
//! negative types, each drawn as a simple distractor scene: a velella is a
//! dark disc with a sail and no tentacles, a jellyfish a dome with short
//! straight tentacles, and so on. Each image is rendered at twice the target
//! size and box-filtered down.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::image::{write_ppm, Rgb8};
use super::record::{SampleManifest, SampleRecord, Source, TypeTag};
use crate::error::{Error, Result};
use crate::rng::{self, hash64, Purpose, Rng};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 600,
            size: 32,
            seed: 0,
        }
    }
}

type Color = [f64; 3];

struct Canvas {
    n: usize,
    px: Vec<Color>,
}

impl Canvas {
    fn new(n: usize) -> Self {
        Canvas {
            n,
            px: vec![[0.0; 3]; n * n],
        }
    }

    /// Calls `f(x, y)` with pixel centers in unit coordinates.
    fn paint(&mut self, color: Color, alpha: f64, inside: impl Fn(f64, f64) -> bool) {
        let n = self.n as f64;
        for (i, p) in self.px.iter_mut().enumerate() {
            let (x, y) = (((i % self.n) as f64 + 0.5) / n, ((i / self.n) as f64 + 0.5) / n);
            if inside(x, y) {
                for c in 0..3 {
                    p[c] = p[c] * (1.0 - alpha) + color[c] * alpha;
                }
            }
        }
    }

    fn gradient(&mut self, top: Color, bottom: Color) {
        let n = self.n;
        for (i, p) in self.px.iter_mut().enumerate() {
            let t = (i / n) as f64 / (n - 1).max(1) as f64;
            for c in 0..3 {
                p[c] = top[c] * (1.0 - t) + bottom[c] * t;
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, angle: f64, color: Color, alpha: f64) {
        let (s, c) = angle.sin_cos();
        self.paint(color, alpha, |x, y| {
            let (dx, dy) = (x - cx, y - cy);
            let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
            (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
        });
    }

    fn polygon(&mut self, pts: &[(f64, f64)], color: Color, alpha: f64) {
        self.paint(color, alpha, |x, y| {
            let mut inside = false;
            let mut j = pts.len() - 1;
            for i in 0..pts.len() {
                let (xi, yi) = pts[i];
                let (xj, yj) = pts[j];
                if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
                j = i;
            }
            inside
        });
    }

    fn stroke(&mut self, pts: &[(f64, f64)], width: f64, color: Color, alpha: f64) {
        let r2 = (width / 2.0).powi(2);
        self.paint(color, alpha, |x, y| {
            pts.windows(2).any(|seg| {
                let ((ax, ay), (bx, by)) = (seg[0], seg[1]);
                let (vx, vy) = (bx - ax, by - ay);
                let len2 = vx * vx + vy * vy;
                let t = if len2 > 0.0 {
                    (((x - ax) * vx + (y - ay) * vy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (ax + t * vx - x, ay + t * vy - y);
                px * px + py * py <= r2
            })
        });
    }

    fn noise(&mut self, rng: &mut Rng, amp: f64) {
        for p in &mut self.px {
            for c in p.iter_mut() {
                *c += rng.gen_range(-amp..=amp);
            }
        }
    }

    /// 2×2 box filter down to `n/2` and quantize.
    fn downsample(&self) -> Rgb8 {
        let m = self.n / 2;
        let mut pixels = Vec::with_capacity(m * m * 3);
        for y in 0..m {
            for x in 0..m {
                for c in 0..3 {
                    let s: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| self.px[(2 * y + dy) * self.n + 2 * x + dx][c])
                        .sum();
                    pixels.push(((s / 4.0).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        Rgb8 {
            width: m,
            height: m,
            pixels,
        }
    }
}

fn jitter(rng: &mut Rng, c: Color, amp: f64) -> Color {
    c.map(|v| (v + rng.gen_range(-amp..=amp)).clamp(0.0, 1.0))
}

fn background(cv: &mut Canvas, rng: &mut Rng) {
    let sea = jitter(rng, [0.35, 0.6, 0.8], 0.15);
    let sand = jitter(rng, [0.85, 0.78, 0.6], 0.12);
    if rng.gen_bool(0.5) {
        cv.gradient(sea, sand);
    } else {
        cv.gradient(sand, jitter(rng, sand, 0.1));
    }
}

/// A smooth curve starting at `(x, y)`, heading `dir` radians, bending by a
/// random sinusoid.
fn curve(rng: &mut Rng, x: f64, y: f64, dir: f64, len: f64, bend: f64) -> Vec<(f64, f64)> {
    let (freq, phase) = (rng.gen_range(1.0..3.0), rng.gen_range(0.0..2.0 * PI));
    let steps = 12;
    let mut pts = vec![(x, y)];
    let (mut px, mut py) = (x, y);
    for i in 1..=steps {
        let t = i as f64 / steps as f64;
        let a = dir + bend * (2.0 * PI * freq * t + phase).sin();
        px += a.cos() * len / steps as f64;
        py += a.sin() * len / steps as f64;
        pts.push((px, py));
    }
    pts
}

fn draw_pmw(cv: &mut Canvas, rng: &mut Rng) {
    background(cv, rng);
    let (cx, cy) = (rng.gen_range(0.35..0.65), rng.gen_range(0.3..0.5));
    let (rx, ry) = (rng.gen_range(0.18..0.26), rng.gen_range(0.07..0.1));
    let angle = rng.gen_range(-0.5..0.5);
    let tentacle = jitter(rng, [0.2, 0.2, 0.65], 0.08);
    for _ in 0..rng.gen_range(3..6) {
        let x0 = cx + rng.gen_range(-0.6..0.6) * rx;
        let dir = PI / 2.0 + rng.gen_range(-0.6..0.6);
        let (len, bend) = (rng.gen_range(0.3..0.5), rng.gen_range(0.4..0.9));
        let pts = curve(rng, x0, cy + ry * 0.5, dir, len, bend);
        cv.stroke(&pts, rng.gen_range(0.025..0.04), tentacle, 0.9);
    }
    let float = jitter(rng, [0.6, 0.5, 0.9], 0.08);
    cv.ellipse(cx, cy, rx, ry, angle, float, 0.85);
    let crest = jitter(rng, [0.9, 0.45, 0.7], 0.08);
    cv.ellipse(cx, cy - ry * 0.6, rx * 0.8, ry * 0.35, angle, crest, 0.8);
}

fn draw_velella(cv: &mut Canvas, rng: &mut Rng) {
    background(cv, rng);
    let (cx, cy) = (rng.gen_range(0.3..0.7), rng.gen_range(0.35..0.65));
    let (rx, ry) = (rng.gen_range(0.12..0.2), rng.gen_range(0.08..0.12));
    let angle = rng.gen_range(-0.8..0.8);
    cv.ellipse(cx, cy, rx * 1.15, ry * 1.15, angle, jitter(rng, [0.15, 0.25, 0.55], 0.08), 0.9);
    cv.ellipse(cx, cy, rx, ry, angle, jitter(rng, [0.25, 0.4, 0.8], 0.08), 0.9);
    let h = rng.gen_range(0.12..0.2);
    let sail = [(cx - rx * 0.8, cy), (cx + rx * 0.8, cy), (cx + rng.gen_range(-0.05..0.05), cy - h)];
    cv.polygon(&sail, jitter(rng, [0.85, 0.88, 0.92], 0.05), 0.6);
}

fn draw_jellyfish(cv: &mut Canvas, rng: &mut Rng) {
    let water = jitter(rng, [0.1, 0.3, 0.5], 0.12);
    cv.gradient(water, jitter(rng, water, 0.1));
    let (cx, cy) = (rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.5));
    let r = rng.gen_range(0.14..0.22);
    let body = jitter(rng, [0.9, 0.75, 0.8], 0.1);
    for i in 0..rng.gen_range(6..11) {
        let x = cx - r + 2.0 * r * (i as f64 + 0.5) / 10.0;
        let len = rng.gen_range(0.15..0.3);
        cv.stroke(&[(x, cy), (x + rng.gen_range(-0.03..0.03), cy + len)], 0.015, body, 0.6);
    }
    cv.paint(body, 0.75, |x, y| y <= cy && (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
}

fn draw_person(cv: &mut Canvas, rng: &mut Rng) {
    background(cv, rng);
    let cx = rng.gen_range(0.3..0.7);
    let top = rng.gen_range(0.1..0.25);
    let skin = jitter(rng, [0.85, 0.65, 0.5], 0.15);
    let shirt = jitter(rng, [0.5, 0.5, 0.5], 0.45);
    let w = rng.gen_range(0.12..0.18);
    cv.polygon(&[(cx - w, top + 0.2), (cx + w, top + 0.2), (cx + w, top + 0.55), (cx - w, top + 0.55)], shirt, 1.0);
    let legs = jitter(rng, [0.2, 0.2, 0.35], 0.15);
    cv.stroke(&[(cx - w / 2.0, top + 0.55), (cx - w / 2.0, 0.98)], 0.07, legs, 1.0);
    cv.stroke(&[(cx + w / 2.0, top + 0.55), (cx + w / 2.0, 0.98)], 0.07, legs, 1.0);
    cv.ellipse(cx, top + 0.1, 0.08, 0.1, 0.0, skin, 1.0);
}

fn draw_ship(cv: &mut Canvas, rng: &mut Rng) {
    let horizon = rng.gen_range(0.5..0.7);
    let sky = jitter(rng, [0.7, 0.8, 0.95], 0.1);
    let sea = jitter(rng, [0.15, 0.35, 0.6], 0.1);
    cv.gradient(sky, sky);
    cv.paint(sea, 1.0, |_, y| y > horizon);
    let (cx, w) = (rng.gen_range(0.35..0.65), rng.gen_range(0.2..0.32));
    let hull = jitter(rng, [0.4, 0.25, 0.15], 0.15);
    let deck = horizon - 0.02;
    cv.polygon(&[(cx - w, deck), (cx + w, deck), (cx + w * 0.7, deck + 0.12), (cx - w * 0.7, deck + 0.12)], hull, 1.0);
    let mast_top = deck - rng.gen_range(0.3..0.45);
    cv.stroke(&[(cx, deck), (cx, mast_top)], 0.025, [0.25, 0.2, 0.15], 1.0);
    let sail = jitter(rng, [0.95, 0.95, 0.9], 0.05);
    cv.polygon(&[(cx + 0.02, mast_top + 0.03), (cx + 0.02, deck - 0.03), (cx + w * 0.9, deck - 0.03)], sail, 1.0);
}

fn draw_illustration(cv: &mut Canvas, rng: &mut Rng) {
    let paper = jitter(rng, [0.95, 0.95, 0.92], 0.05);
    cv.gradient(paper, paper);
    for _ in 0..rng.gen_range(3..6) {
        let color = [rng.gen(), rng.gen(), rng.gen()];
        let (x, y) = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
        let s = rng.gen_range(0.08..0.2);
        if rng.gen_bool(0.5) {
            cv.polygon(&[(x - s, y - s), (x + s, y - s), (x + s, y + s), (x - s, y + s)], color, 1.0);
        } else {
            cv.ellipse(x, y, s, s * rng.gen_range(0.5..1.0), 0.0, color, 1.0);
        }
    }
}

fn draw_tattoo(cv: &mut Canvas, rng: &mut Rng) {
    let skin = jitter(rng, [0.85, 0.68, 0.55], 0.12);
    cv.gradient(skin, jitter(rng, skin, 0.08));
    let ink = jitter(rng, [0.12, 0.12, 0.2], 0.08);
    for _ in 0..rng.gen_range(2..5) {
        let mut pts = vec![(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8))];
        for _ in 0..rng.gen_range(2..5) {
            let &(x, y) = pts.last().expect("non-empty");
            let (dx, dy): (f64, f64) = (rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25));
            pts.push(((x + dx).clamp(0.05, 0.95), (y + dy).clamp(0.05, 0.95)));
        }
        cv.stroke(&pts, rng.gen_range(0.015..0.03), ink, 0.9);
    }
}

fn draw_random(cv: &mut Canvas, rng: &mut Rng) {
    let a = [rng.gen(), rng.gen(), rng.gen()];
    let b = [rng.gen(), rng.gen(), rng.gen()];
    cv.gradient(a, b);
    for _ in 0..rng.gen_range(4..10) {
        let color = [rng.gen(), rng.gen(), rng.gen()];
        let (x, y) = (rng.gen(), rng.gen());
        cv.ellipse(x, y, rng.gen_range(0.03..0.15), rng.gen_range(0.03..0.15), rng.gen_range(0.0..PI), color, 0.7);
    }
}

/// Renders one image of the given type, fully determined by `(seed, index)`.
pub fn render(type_tag: TypeTag, size: usize, seed: u64, index: u64) -> Rgb8 {
    let mut rng = rng::stream(seed, Purpose::Synth, index);
    let mut cv = Canvas::new(size * 2);
    match type_tag {
        TypeTag::Pmw => draw_pmw(&mut cv, &mut rng),
        TypeTag::Velella => draw_velella(&mut cv, &mut rng),
        TypeTag::Jellyfish => draw_jellyfish(&mut cv, &mut rng),
        TypeTag::Person => draw_person(&mut cv, &mut rng),
        TypeTag::Ship => draw_ship(&mut cv, &mut rng),
        TypeTag::Illustration => draw_illustration(&mut cv, &mut rng),
        TypeTag::Tattoo => draw_tattoo(&mut cv, &mut rng),
        TypeTag::Random => draw_random(&mut cv, &mut rng),
    }
    cv.noise(&mut rng, 0.03);
    cv.downsample()
}

/// The `(type, index)` plan: `n` positives, then `n` negatives cycling
/// through the negative types.
pub fn plan(n_per_class: usize) -> Vec<TypeTag> {
    let mut out = vec![TypeTag::Pmw; n_per_class];
    out.extend((0..n_per_class).map(|i| TypeTag::NEGATIVE[i % TypeTag::NEGATIVE.len()]));
    out
}

/// Renders the whole set in memory, in plan order.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<(TypeTag, Rgb8)>> {
    if cfg.size < 8 {
        return Err(Error::Config(format!("synthetic image size {} is below 8", cfg.size)));
    }
    Ok(plan(cfg.n_per_class)
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, render(t, cfg.size, cfg.seed, i as u64)))
        .collect())
}

/// Writes `images/<type>/<index>.ppm` and `manifest.jsonl` under `dir`.
/// Manifest paths are relative to `dir`.
pub fn write_synth(dir: &Path, cfg: &SynthConfig) -> Result<SampleManifest> {
    let mut records = Vec::new();
    for (i, (t, img)) in generate(cfg)?.into_iter().enumerate() {
        let rel = format!("images/{t}/{i:05}.ppm");
        let path = dir.join(&rel);
        let parent = path.parent().expect("has parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        write_ppm(&path, &img)?;
        records.push(SampleRecord::new(rel, t, Source::Other, hash64(&super::image::encode_ppm(&img))));
    }
    let mut manifest = SampleManifest::new(records);
    manifest.notes.push(format!(
        "synthetic set: n_per_class={} size={} seed={}",
        cfg.n_per_class, cfg.size, cfg.seed
    ));
    manifest.write(&dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_sized() {
        for t in TypeTag::ALL {
            let a = render(t, 16, 3, 7);
            assert_eq!((a.width, a.height, a.pixels.len()), (16, 16, 16 * 16 * 3));
            assert_eq!(a, render(t, 16, 3, 7));
            assert_ne!(a, render(t, 16, 4, 7));
        }
    }

    #[test]
    fn plan_balances_classes() {
        let p = plan(10);
        assert_eq!(p.iter().filter(|t| **t == TypeTag::Pmw).count(), 10);
        assert_eq!(p.len(), 20);
        assert!(TypeTag::NEGATIVE.iter().all(|t| p.contains(t)));
    }
}
