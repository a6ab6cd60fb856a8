//! Deterministic renderers for the three synthetic domains.
//!
//! Natural-like images are compositions of hard-edged shapes and gradients
//! (edge-dominated statistics); textural images are stationary fields
//! (gratings, soft-thresholded noise, Gabor blobs, checkerboards, cellular
//! spots, low-pass noise); target images are seven texture classes with
//! within-class parameter jitter and additive noise, built from the same
//! primitive vocabulary as the textural domain so that texture features
//! transfer onto them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, Example, PatchSet, Split};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, tags};
use crate::tensor::{Shape4, Tensor4};

/// Domain flavor; fixes the class vocabulary of the renderer.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    NaturalLike,
    Textural,
    Target,
}

impl DomainKind {
    fn id(self) -> u64 {
        match self {
            DomainKind::NaturalLike => 0,
            DomainKind::Textural => 1,
            DomainKind::Target => 2,
        }
    }

    /// Number of class designs the renderer provides.
    pub fn max_classes(self) -> usize {
        match self {
            DomainKind::NaturalLike => 6,
            DomainKind::Textural => 6,
            DomainKind::Target => 7,
        }
    }
}

/// Declarative description of one generated domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub class_count: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Per-class train counts for imbalanced splits. `None` keeps the
    /// balanced default of `train_per_class` everywhere. Example seeds
    /// depend only on (class, index), so dialing one class up or down
    /// never changes the images the other classes receive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_counts: Option<Vec<usize>>,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 || self.class_count > self.kind.max_classes() {
            return Err(Error::Config(format!(
                "{:?} supports 2..={} classes, got {}",
                self.kind,
                self.kind.max_classes(),
                self.class_count
            )));
        }
        if self.train_per_class == 0 || self.eval_per_class == 0 {
            return Err(Error::Config("per-class example counts must be positive".into()));
        }
        if let Some(counts) = &self.train_counts {
            if counts.len() != self.class_count {
                return Err(Error::Config(format!(
                    "train_counts lists {} classes but the domain has {}",
                    counts.len(),
                    self.class_count
                )));
            }
            if counts.contains(&0) {
                return Err(Error::Config("per-class example counts must be positive".into()));
            }
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!(
                "image size {} too small to carry texture",
                self.image_size
            )));
        }
        Ok(())
    }

    fn train_count(&self, class: usize) -> usize {
        match &self.train_counts {
            Some(counts) => counts[class],
            None => self.train_per_class,
        }
    }
}

/// Renders both splits of a domain. Every example derives its own seed
/// from (spec seed, kind, class, split, index), so regeneration is
/// bit-identical and the splits never share an image.
pub fn generate_domain(spec: &DomainSpec) -> Result<Domain> {
    spec.validate()?;
    Ok(Domain {
        spec: spec.clone(),
        train: render_split(spec, Split::Train)?,
        eval: render_split(spec, Split::Eval)?,
    })
}

fn render_split(spec: &DomainSpec, split: Split) -> Result<PatchSet> {
    let size = spec.image_size;
    let mut examples = Vec::new();
    for class in 0..spec.class_count {
        let per_class = match split {
            Split::Train => spec.train_count(class),
            Split::Eval => spec.eval_per_class,
        };
        for index in 0..per_class {
            let seed = derive_seed(
                spec.seed,
                &[tags::DATA, spec.kind.id(), class as u64, split.id(), index as u64],
            );
            let mut rng = stream(seed);
            let px = match spec.kind {
                DomainKind::NaturalLike => render_natural(class, size, &mut rng),
                DomainKind::Textural => render_textural(class, size, &mut rng),
                DomainKind::Target => render_target(class, size, &mut rng),
            };
            let image = Tensor4::from_vec(Shape4::new(1, 1, size, size), px)?;
            examples.push(Example {
                image,
                label: class,
            });
        }
    }
    Ok(PatchSet {
        examples,
        split,
        class_count: spec.class_count,
    })
}

// ---------------------------------------------------------------------------
// Shared primitives
// ---------------------------------------------------------------------------

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Single-octave value noise: a coarse random grid, bilinearly sampled
/// with smoothstep easing. `cells` is the grid frequency across the image.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random()).collect();
    let scale = cells as f64 / size as f64;
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let gx = (x as f64 + 0.5) * scale;
            let gy = (y as f64 + 0.5) * scale;
            let x0 = (gx.floor() as usize).min(cells - 1);
            let y0 = (gy.floor() as usize).min(cells - 1);
            let tx = smoothstep(0.0, 1.0, gx - x0 as f64);
            let ty = smoothstep(0.0, 1.0, gy - y0 as f64);
            let a = grid[y0 * g + x0];
            let b = grid[y0 * g + x0 + 1];
            let c = grid[(y0 + 1) * g + x0];
            let d = grid[(y0 + 1) * g + x0 + 1];
            out[y * size + x] = a + (b - a) * tx + (c - a) * ty + (a - b - c + d) * tx * ty;
        }
    }
    out
}

/// Distances to the nearest and second-nearest of `sites` random points.
fn cellular_distances(rng: &mut ChaCha8Rng, size: usize, sites: usize) -> (Vec<f64>, Vec<f64>) {
    let s = size as f64;
    let pts: Vec<(f64, f64)> = (0..sites)
        .map(|_| (rng.random::<f64>() * s, rng.random::<f64>() * s))
        .collect();
    let mut d1 = vec![0.0; size * size];
    let mut d2 = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = f64::INFINITY;
            let mut second = f64::INFINITY;
            for &(sx, sy) in &pts {
                let d = ((px - sx) * (px - sx) + (py - sy) * (py - sy)).sqrt();
                if d < best {
                    second = best;
                    best = d;
                } else if d < second {
                    second = d;
                }
            }
            d1[y * size + x] = best;
            d2[y * size + x] = second;
        }
    }
    (d1, d2)
}

/// Paints `value` over every pixel whose center satisfies `inside`.
fn paint(px: &mut [f64], size: usize, value: f64, inside: impl Fn(f64, f64) -> bool) {
    for y in 0..size {
        for x in 0..size {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                px[y * size + x] = value;
            }
        }
    }
}

/// Soft disc: blends `value` in with weight 1 inside radius−soft and 0
/// outside radius+soft.
fn paint_disc(px: &mut [f64], size: usize, cx: f64, cy: f64, r: f64, soft: f64, value: f64) {
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = ((fx - cx) * (fx - cx) + (fy - cy) * (fy - cy)).sqrt();
            let w = 1.0 - smoothstep(r - soft, r + soft, d);
            if w > 0.0 {
                let i = y * size + x;
                px[i] = px[i] * (1.0 - w) + value * w;
            }
        }
    }
}

fn dist_to_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (nx, ny) = (ax + t * dx - px, ay + t * dy - py);
    (nx * nx + ny * ny).sqrt()
}

// ---------------------------------------------------------------------------
// Natural-like domain: hard-edged compositions, full contrast
// ---------------------------------------------------------------------------

fn render_natural(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let dark_bg = rng.random::<f64>() < 0.5;
    let (bg, fg_lo, fg_hi) = if dark_bg {
        (rng.random_range(0.05..0.25), 0.65, 0.95)
    } else {
        (rng.random_range(0.75..0.95), 0.05, 0.35)
    };
    let mut px = vec![bg; size * size];
    match class {
        0 => {
            // Solid triangles.
            for _ in 0..rng.random_range(2..=3usize) {
                let v: Vec<(f64, f64)> = (0..3)
                    .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s)))
                    .collect();
                let tone = rng.random_range(fg_lo..fg_hi);
                let cross = |ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64| {
                    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                };
                paint(&mut px, size, tone, |x, y| {
                    let c0 = cross(v[0].0, v[0].1, v[1].0, v[1].1, x, y);
                    let c1 = cross(v[1].0, v[1].1, v[2].0, v[2].1, x, y);
                    let c2 = cross(v[2].0, v[2].1, v[0].0, v[0].1, x, y);
                    (c0 >= 0.0 && c1 >= 0.0 && c2 >= 0.0) || (c0 <= 0.0 && c1 <= 0.0 && c2 <= 0.0)
                });
            }
        }
        1 => {
            // Rotated rectangles.
            for _ in 0..rng.random_range(2..=3usize) {
                let (cx, cy) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s));
                let (hw, hh) = (rng.random_range(0.1 * s..0.3 * s), rng.random_range(0.08 * s..0.25 * s));
                let th = rng.random_range(0.0..std::f64::consts::PI);
                let (c, sn) = (th.cos(), th.sin());
                let tone = rng.random_range(fg_lo..fg_hi);
                paint(&mut px, size, tone, |x, y| {
                    let u = (x - cx) * c + (y - cy) * sn;
                    let v = -(x - cx) * sn + (y - cy) * c;
                    u.abs() <= hw && v.abs() <= hh
                });
            }
        }
        2 => {
            // Ellipses.
            for _ in 0..rng.random_range(2..=3usize) {
                let (cx, cy) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s));
                let (a, b) = (rng.random_range(0.12 * s..0.32 * s), rng.random_range(0.08 * s..0.22 * s));
                let th = rng.random_range(0.0..std::f64::consts::PI);
                let (c, sn) = (th.cos(), th.sin());
                let tone = rng.random_range(fg_lo..fg_hi);
                paint(&mut px, size, tone, |x, y| {
                    let u = (x - cx) * c + (y - cy) * sn;
                    let v = -(x - cx) * sn + (y - cy) * c;
                    (u / a) * (u / a) + (v / b) * (v / b) <= 1.0
                });
            }
        }
        3 => {
            // Thick line segments.
            for _ in 0..rng.random_range(3..=5usize) {
                let (ax, ay) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                let (bx, by) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                let half = rng.random_range(0.6..1.4);
                let tone = rng.random_range(fg_lo..fg_hi);
                paint(&mut px, size, tone, |x, y| {
                    dist_to_segment(x, y, ax, ay, bx, by) <= half
                });
            }
        }
        4 => {
            // Linear gradient background with one hard-edged polygon.
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            let (c, sn) = (th.cos(), th.sin());
            let (g0, g1) = if dark_bg { (0.05, 0.45) } else { (0.55, 0.95) };
            for y in 0..size {
                for x in 0..size {
                    let t = ((x as f64 * c + y as f64 * sn) / (s * 1.42) + 0.5).clamp(0.0, 1.0);
                    px[y * size + x] = g0 + (g1 - g0) * t;
                }
            }
            let (cx, cy) = (rng.random_range(0.25 * s..0.75 * s), rng.random_range(0.25 * s..0.75 * s));
            let (hw, hh) = (rng.random_range(0.12 * s..0.3 * s), rng.random_range(0.12 * s..0.3 * s));
            let tone = rng.random_range(fg_lo..fg_hi);
            paint(&mut px, size, tone, |x, y| {
                (x - cx).abs() <= hw && (y - cy).abs() <= hh
            });
        }
        _ => {
            // Radial gradient with a hard-edged ring.
            let (cx, cy) = (rng.random_range(0.3 * s..0.7 * s), rng.random_range(0.3 * s..0.7 * s));
            let (g0, g1) = if dark_bg { (0.4, 0.05) } else { (0.6, 0.95) };
            for y in 0..size {
                for x in 0..size {
                    let d = (((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / (0.7 * s))
                        .clamp(0.0, 1.0);
                    px[y * size + x] = g0 + (g1 - g0) * d;
                }
            }
            let r0 = rng.random_range(0.18 * s..0.32 * s);
            let half = rng.random_range(1.0..2.0);
            let tone = rng.random_range(fg_lo..fg_hi);
            paint(&mut px, size, tone, |x, y| {
                let d = ((x - cx) * (x - cx) + (y - cy) * (y - cy)).sqrt();
                (d - r0).abs() <= half
            });
        }
    }
    px.iter_mut().for_each(|v| *v = clamp01(*v));
    px
}

// ---------------------------------------------------------------------------
// Textural domain: stationary fields, moderate contrast
// ---------------------------------------------------------------------------

fn render_textural(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let mut px = vec![0.5; size * size];
    match class {
        0 => {
            // Sinusoidal grating with random orientation, wavelength, phase.
            let th = rng.random_range(0.0..std::f64::consts::PI);
            let (c, sn) = (th.cos(), th.sin());
            let lambda = rng.random_range(0.22 * s..0.45 * s);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.12..0.22);
            for y in 0..size {
                for x in 0..size {
                    let u = x as f64 * c + y as f64 * sn;
                    px[y * size + x] =
                        0.5 + amp * (std::f64::consts::TAU * u / lambda + phase).sin();
                }
            }
        }
        1 => {
            // Soft-thresholded coarse noise blobs.
            let noise = {
                let cells = rng.random_range(3..=4usize);
                value_noise(rng, size, cells)
            };
            let (lo, hi) = (rng.random_range(0.3..0.38), rng.random_range(0.62..0.7));
            let cut = rng.random_range(0.45..0.55);
            for (p, n) in px.iter_mut().zip(&noise) {
                *p = lo + (hi - lo) * smoothstep(cut - 0.12, cut + 0.12, *n);
            }
        }
        2 => {
            // Field of Gabor-like blobs.
            let blobs = rng.random_range(5..=8usize);
            for _ in 0..blobs {
                let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                let sigma = rng.random_range(0.08 * s..0.16 * s);
                let lambda = rng.random_range(0.18 * s..0.35 * s);
                let th = rng.random_range(0.0..std::f64::consts::PI);
                let (c, sn) = (th.cos(), th.sin());
                let amp = rng.random_range(0.1..0.2);
                for y in 0..size {
                    for x in 0..size {
                        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                        let u = dx * c + dy * sn;
                        let env = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                        px[y * size + x] +=
                            amp * env * (std::f64::consts::TAU * u / lambda).cos();
                    }
                }
            }
        }
        3 => {
            // Checkerboard with jittered cell size, offset, and tones.
            let cell = rng.random_range(0.16 * s..0.3 * s);
            let (ox, oy) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            let (lo, hi) = (rng.random_range(0.34..0.42), rng.random_range(0.58..0.66));
            for y in 0..size {
                for x in 0..size {
                    let cxg = ((x as f64 + ox) / cell).floor() as i64;
                    let cyg = ((y as f64 + oy) / cell).floor() as i64;
                    px[y * size + x] = if (cxg + cyg) % 2 == 0 { lo } else { hi };
                }
            }
        }
        4 => {
            // Cellular spots: dark soft pits on a light field.
            let (d1, _) = {
                let sites = rng.random_range(6..=10usize);
                cellular_distances(rng, size, sites)
            };
            let r = rng.random_range(0.08 * s..0.14 * s);
            for (p, &d) in px.iter_mut().zip(&d1) {
                *p = 0.62 - 0.24 * (1.0 - smoothstep(0.5 * r, 1.5 * r, d));
            }
        }
        _ => {
            // Very smooth low-pass noise.
            let noise = {
                let cells = rng.random_range(2..=3usize);
                value_noise(rng, size, cells)
            };
            let amp = rng.random_range(0.25..0.4);
            for (p, n) in px.iter_mut().zip(&noise) {
                *p = 0.5 + amp * (n - 0.5);
            }
        }
    }
    px.iter_mut().for_each(|v| *v = clamp01(*v));
    px
}

// ---------------------------------------------------------------------------
// Target domain: seven jittered texture classes
// ---------------------------------------------------------------------------

fn render_target(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let mut px = vec![0.0; size * size];
    match class {
        0 => {
            // Consolidation-like: bright, nearly uniform.
            let base = rng.random_range(0.74..0.88);
            let noise = {
                let cells = rng.random_range(3..=5usize);
                value_noise(rng, size, cells)
            };
            for (p, n) in px.iter_mut().zip(&noise) {
                *p = base + 0.06 * (n - 0.5);
            }
        }
        1 => {
            // Ground-glass-like: mid intensity, hazy coarse noise.
            let base = rng.random_range(0.56..0.68);
            let noise = {
                let cells = rng.random_range(3..=5usize);
                value_noise(rng, size, cells)
            };
            for (p, n) in px.iter_mut().zip(&noise) {
                *p = base + 0.12 * (n - 0.5);
            }
        }
        2 => {
            // Honeycomb-like: bright cell walls around dark pores.
            let sites = rng.random_range(8..=13usize);
            let (d1, d2) = cellular_distances(rng, size, sites);
            let wall = rng.random_range(0.8..1.6);
            let (cell_tone, wall_tone) = (rng.random_range(0.26..0.36), rng.random_range(0.66..0.78));
            for ((p, &a), &b) in px.iter_mut().zip(&d1).zip(&d2) {
                let w = 1.0 - smoothstep(0.0, wall, b - a);
                *p = cell_tone + (wall_tone - cell_tone) * w;
            }
        }
        3 => {
            // Reticular-like: two crossing line families.
            let base = rng.random_range(0.38..0.46);
            px.iter_mut().for_each(|p| *p = base);
            let tone = rng.random_range(0.6..0.7);
            let th0 = rng.random_range(0.0..std::f64::consts::PI);
            for k in 0..2 {
                let th = th0
                    + k as f64 * (std::f64::consts::FRAC_PI_2 + rng.random_range(-0.2..0.2));
                let (c, sn) = (th.cos(), th.sin());
                let spacing = rng.random_range(0.18 * s..0.3 * s);
                let off = rng.random_range(0.0..spacing);
                let half = rng.random_range(0.6..1.1);
                for y in 0..size {
                    for x in 0..size {
                        let u = (x as f64 + 0.5) * c + (y as f64 + 0.5) * sn + off;
                        let m = u.rem_euclid(spacing);
                        let d = m.min(spacing - m);
                        let w = 1.0 - smoothstep(half * 0.5, half, d);
                        if w > 0.0 {
                            let i = y * size + x;
                            px[i] = px[i] * (1.0 - w) + tone * w;
                        }
                    }
                }
            }
        }
        4 => {
            // Emphysema-like: dark round lucencies on a mid field.
            let base = rng.random_range(0.52..0.6);
            px.iter_mut().for_each(|p| *p = base);
            for _ in 0..rng.random_range(5..=9usize) {
                let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                let r = rng.random_range(0.07 * s..0.14 * s);
                let tone = rng.random_range(0.2..0.3);
                paint_disc(&mut px, size, cx, cy, r, 1.2, tone);
            }
        }
        5 => {
            // Nodular-like: small bright discs on a mid-dark field.
            let base = rng.random_range(0.4..0.48);
            px.iter_mut().for_each(|p| *p = base);
            for _ in 0..rng.random_range(6..=12usize) {
                let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                let r = rng.random_range(0.04 * s..0.09 * s);
                let tone = rng.random_range(0.7..0.8);
                paint_disc(&mut px, size, cx, cy, r, 1.0, tone);
            }
        }
        _ => {
            // Normal-like: mid gray with fine grain.
            let base = rng.random_range(0.46..0.54);
            let noise = {
                let cells = rng.random_range(8..=11usize);
                value_noise(rng, size, cells)
            };
            for (p, n) in px.iter_mut().zip(&noise) {
                *p = base + 0.1 * (n - 0.5);
            }
        }
    }
    // Within-class nuisance: global intensity jitter plus pixel noise.
    // The jitter band overlaps the class base tones on purpose — plain
    // mean intensity must not be enough to tell the classes apart.
    let jitter = rng.random_range(-0.05..0.05);
    for p in px.iter_mut() {
        *p = clamp01(*p + jitter + (rng.random::<f64>() - 0.5) * 0.05);
    }
    px
}
