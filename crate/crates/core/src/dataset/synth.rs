//! Procedural five-category pattern generator: blue figures on white
//! ground, randomized pose and proportions, byte-identical for a fixed
//! seed.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::Result;

use super::ppm::write_ppm;
use super::{Manifest, ManifestRow, Split};

pub const CATEGORIES: [&str; 5] = ["bird", "butterfly", "drum", "fish", "plant"];

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        rot: f64,
    },
    Ring {
        r: f64,
        half_width: f64,
    },
    Triangle {
        a: (f64, f64),
        b: (f64, f64),
        c: (f64, f64),
    },
    Segment {
        a: (f64, f64),
        b: (f64, f64),
        half_width: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, rot } => {
                let (dx, dy) = (x - cx, y - cy);
                let (s, c) = rot.sin_cos();
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                (lx / rx).powi(2) + (ly / ry).powi(2) <= 1.0
            }
            Shape::Ring { r, half_width } => {
                let d = (x * x + y * y).sqrt();
                (d - r).abs() <= half_width
            }
            Shape::Triangle { a, b, c } => {
                let sign = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
                    (p.0 - r.0) * (q.1 - r.1) - (q.0 - r.0) * (p.1 - r.1)
                };
                let d1 = sign((x, y), a, b);
                let d2 = sign((x, y), b, c);
                let d3 = sign((x, y), c, a);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
            Shape::Segment { a, b, half_width } => {
                let (vx, vy) = (b.0 - a.0, b.1 - a.1);
                let len2 = vx * vx + vy * vy;
                let t = if len2 == 0.0 {
                    0.0
                } else {
                    (((x - a.0) * vx + (y - a.1) * vy) / len2).clamp(0.0, 1.0)
                };
                let (px, py) = (a.0 + t * vx, a.1 + t * vy);
                ((x - px).powi(2) + (y - py).powi(2)).sqrt() <= half_width
            }
        }
    }
}

struct Figure {
    solids: Vec<Shape>,
    holes: Vec<Shape>,
}

impl Figure {
    fn contains(&self, x: f64, y: f64) -> bool {
        self.solids.iter().any(|s| s.contains(x, y)) && !self.holes.iter().any(|s| s.contains(x, y))
    }
}

fn bird(rng: &mut ChaCha8Rng) -> Figure {
    let wing_rot = rng.gen_range(0.4..0.9);
    Figure {
        solids: vec![
            Shape::Ellipse { cx: 0.02, cy: 0.05, rx: 0.26, ry: 0.15, rot: -0.2 },
            Shape::Ellipse { cx: 0.26, cy: -0.10, rx: 0.10, ry: 0.09, rot: 0.0 },
            Shape::Triangle { a: (0.33, -0.14), b: (0.33, -0.05), c: (0.47, -0.10) },
            Shape::Ellipse { cx: -0.01, cy: -0.06, rx: 0.17, ry: 0.08, rot: wing_rot },
            Shape::Triangle { a: (-0.20, 0.02), b: (-0.22, 0.13), c: (-0.45, -0.03) },
            Shape::Segment { a: (0.06, 0.18), b: (0.09, 0.33), half_width: 0.013 },
            Shape::Segment { a: (-0.04, 0.19), b: (-0.05, 0.34), half_width: 0.013 },
        ],
        holes: vec![Shape::Ellipse { cx: 0.27, cy: -0.12, rx: 0.02, ry: 0.02, rot: 0.0 }],
    }
}

fn butterfly(rng: &mut ChaCha8Rng) -> Figure {
    let spread = rng.gen_range(0.16..0.24);
    let mut solids = vec![Shape::Ellipse { cx: 0.0, cy: 0.02, rx: 0.045, ry: 0.23, rot: 0.0 }];
    let mut holes = Vec::new();
    for side in [-1.0, 1.0] {
        solids.push(Shape::Ellipse {
            cx: side * spread,
            cy: -0.11,
            rx: 0.17,
            ry: 0.13,
            rot: side * 0.5,
        });
        solids.push(Shape::Ellipse {
            cx: side * (spread - 0.04),
            cy: 0.15,
            rx: 0.12,
            ry: 0.10,
            rot: -side * 0.4,
        });
        solids.push(Shape::Segment {
            a: (side * 0.02, -0.21),
            b: (side * 0.11, -0.36),
            half_width: 0.010,
        });
        holes.push(Shape::Ellipse {
            cx: side * (spread + 0.02),
            cy: -0.12,
            rx: 0.055,
            ry: 0.04,
            rot: side * 0.5,
        });
    }
    Figure { solids, holes }
}

fn drum(rng: &mut ChaCha8Rng) -> Figure {
    let mut solids = vec![Shape::Ellipse { cx: 0.0, cy: 0.0, rx: 0.055, ry: 0.055, rot: 0.0 }];
    // star rays around the hub
    let rays = rng.gen_range(6..=10);
    for i in 0..rays {
        let ang = i as f64 / rays as f64 * std::f64::consts::TAU;
        let (s, c) = ang.sin_cos();
        let (s1, c1) = (ang + 0.25).sin_cos();
        let (s2, c2) = (ang - 0.25).sin_cos();
        solids.push(Shape::Triangle {
            a: (0.05 * c1, 0.05 * s1),
            b: (0.05 * c2, 0.05 * s2),
            c: (0.13 * c, 0.13 * s),
        });
    }
    // concentric chime rings
    let mut r = 0.17;
    while r < 0.47 {
        solids.push(Shape::Ring {
            r: r + rng.gen_range(-0.012..0.012),
            half_width: 0.018,
        });
        r += rng.gen_range(0.085..0.105);
    }
    Figure {
        solids,
        holes: Vec::new(),
    }
}

fn fish(rng: &mut ChaCha8Rng) -> Figure {
    let tail_spread = rng.gen_range(0.08..0.14);
    Figure {
        solids: vec![
            Shape::Ellipse { cx: 0.04, cy: 0.0, rx: 0.28, ry: 0.14, rot: 0.0 },
            Shape::Triangle {
                a: (-0.22, 0.0),
                b: (-0.43, -tail_spread),
                c: (-0.43, tail_spread),
            },
            Shape::Triangle { a: (-0.06, -0.11), b: (0.03, -0.25), c: (0.13, -0.11) },
            Shape::Triangle { a: (-0.02, 0.11), b: (0.05, 0.21), c: (0.12, 0.11) },
        ],
        holes: vec![Shape::Ellipse { cx: 0.23, cy: -0.03, rx: 0.035, ry: 0.035, rot: 0.0 }],
    }
}

fn plant(rng: &mut ChaCha8Rng) -> Figure {
    let mut solids = vec![Shape::Segment {
        a: (0.0, 0.44),
        b: (0.0, -0.18),
        half_width: 0.020,
    }];
    let branches = rng.gen_range(3..=5);
    for i in 0..branches {
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        let attach_y = 0.30 - i as f64 * (0.44 / branches as f64);
        let ang: f64 = rng.gen_range(0.6..1.1);
        let len = rng.gen_range(0.13..0.20);
        let end = (side * len * ang.cos(), attach_y - len * ang.sin());
        solids.push(Shape::Segment {
            a: (0.0, attach_y),
            b: end,
            half_width: 0.014,
        });
        solids.push(Shape::Ellipse {
            cx: end.0 + side * 0.045,
            cy: end.1 - 0.03,
            rx: 0.075,
            ry: 0.038,
            rot: -side * ang * 0.8,
        });
    }
    // crown leaf
    solids.push(Shape::Ellipse { cx: 0.0, cy: -0.26, rx: 0.045, ry: 0.09, rot: 0.0 });
    Figure {
        solids,
        holes: Vec::new(),
    }
}

fn figure_for(category: usize, rng: &mut ChaCha8Rng) -> Figure {
    match category {
        0 => bird(rng),
        1 => butterfly(rng),
        2 => drum(rng),
        3 => fish(rng),
        4 => plant(rng),
        _ => unreachable!("five categories"),
    }
}

fn stable_mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders one sample: pose-jittered figure, 2x2 supersampled, blue on
/// white.
fn render(category: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let figure = figure_for(category, rng);
    let rot: f64 = rng.gen_range(-0.45..0.45);
    let scale = rng.gen_range(0.75..1.10);
    let dx = rng.gen_range(-0.06..0.06);
    let dy = rng.gen_range(-0.06..0.06);
    let blue = [
        (25 + rng.gen_range(-18i32..18)) as u8,
        (45 + rng.gen_range(-18i32..18)) as u8,
        (130 + rng.gen_range(-18i32..18)) as u8,
    ];
    let (sin, cos) = rot.sin_cos();
    let mut rgb = vec![255u8; size * size * 3];
    for py in 0..size {
        for px in 0..size {
            let mut hits = 0;
            for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let x = (px as f64 + sx) / size as f64 - 0.5 - dx;
                let y = (py as f64 + sy) / size as f64 - 0.5 - dy;
                let lx = (cos * x + sin * y) / scale;
                let ly = (-sin * x + cos * y) / scale;
                if figure.contains(lx, ly) {
                    hits += 1;
                }
            }
            if hits > 0 {
                let t = hits as f64 / 4.0;
                let base = (py * size + px) * 3;
                for ch in 0..3 {
                    let v = 255.0 + (blue[ch] as f64 - 255.0) * t;
                    rgb[base + ch] = v.round() as u8;
                }
            }
        }
    }
    rgb
}

/// Generates `per_class` images per category under `dir` (one subdirectory
/// per category) and returns the manifest, rows initially all `train`.
/// Identical arguments produce byte-identical files.
pub fn generate_synthetic(
    dir: impl AsRef<Path>,
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    if per_class < 1 {
        return Err(Error::Config("per_class must be >= 1".into()));
    }
    if size < 8 {
        return Err(Error::Config("image size must be >= 8".into()));
    }
    let mut rows = Vec::with_capacity(CATEGORIES.len() * per_class);
    for (ci, category) in CATEGORIES.iter().enumerate() {
        let subdir = dir.join(category);
        fs::create_dir_all(&subdir).map_err(|e| Error::io(subdir.display().to_string(), e))?;
        for idx in 0..per_class {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stable_mix(seed, ci as u64, idx as u64));
            let rgb = render(ci, size, &mut rng);
            let rel = format!("{category}/{idx:04}.ppm");
            write_ppm(dir.join(&rel), size, size, &rgb)?;
            rows.push(ManifestRow {
                path: rel,
                label: category.to_string(),
                split: Split::Train,
            });
        }
    }
    Ok(Manifest { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_byte_identical() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let m1 = generate_synthetic(dir1.path(), 2, 32, 77).unwrap();
        let m2 = generate_synthetic(dir2.path(), 2, 32, 77).unwrap();
        assert_eq!(m1, m2);
        for row in &m1.rows {
            let a = std::fs::read(dir1.path().join(&row.path)).unwrap();
            let b = std::fs::read(dir2.path().join(&row.path)).unwrap();
            assert_eq!(a, b, "{}", row.path);
        }
        // a different seed changes the pixels
        let dir3 = tempfile::tempdir().unwrap();
        let m3 = generate_synthetic(dir3.path(), 2, 32, 78).unwrap();
        let a = std::fs::read(dir1.path().join(&m1.rows[0].path)).unwrap();
        let b = std::fs::read(dir3.path().join(&m3.rows[0].path)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn one_per_class_yields_five_labelled_images() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(dir.path(), 1, 24, 0).unwrap();
        assert_eq!(m.rows.len(), 5);
        let labels: Vec<&str> = m.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, CATEGORIES.to_vec());
        for row in &m.rows {
            assert!(dir.path().join(&row.path).exists());
        }
    }

    #[test]
    fn label_distribution_is_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(dir.path(), 7, 24, 5).unwrap();
        for category in CATEGORIES {
            assert_eq!(m.rows.iter().filter(|r| r.label == category).count(), 7);
        }
    }

    #[test]
    fn images_are_blue_on_white() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(dir.path(), 1, 48, 3).unwrap();
        let (_, _, rgb) = super::super::ppm::read_ppm(dir.path().join("drum/0000.ppm")).unwrap();
        // corners stay background
        assert_eq!(&rgb[0..3], &[255, 255, 255]);
        // some figure pixels present, blue channel dominant over red
        let blueish = rgb
            .chunks(3)
            .filter(|p| p[2] > p[0] && p[2] > 60 && p[0] < 200)
            .count();
        assert!(blueish > 50, "only {blueish} figure pixels");
    }
}
