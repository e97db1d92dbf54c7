//! Procedural probe images with natural-image statistics.
//!
//! Each probe layers 1/f value noise (smooth shading and texture at every
//! scale) under a handful of hard-edged shapes (occlusion boundaries), then
//! applies a random tone curve. Everything is drawn from a keyed stream, so
//! a probe is a pure function of `(seed, index, size)`.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datatools::{Manifest, ManifestRow};
use crate::error::{Error, Result};
use crate::image::{write_image, ImageId, Raster};
use crate::rng::StreamKey;

struct ValueNoise {
    cells: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = (cells + 1) * (cells + 1);
        ValueNoise {
            cells,
            lattice: (0..n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(),
        }
    }

    fn at(&self, u: f32, v: f32) -> f32 {
        let fx = u * self.cells as f32;
        let fy = v * self.cells as f32;
        let x0 = (fx.floor() as usize).min(self.cells - 1);
        let y0 = (fy.floor() as usize).min(self.cells - 1);
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        let tx = smooth(fx - x0 as f32);
        let ty = smooth(fy - y0 as f32);
        let stride = self.cells + 1;
        let g = |y: usize, x: usize| self.lattice[y * stride + x];
        let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
        let bottom = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

struct Fractal {
    octaves: Vec<(ValueNoise, f32)>,
}

impl Fractal {
    fn new(base_cells: usize, octaves: usize, falloff: f32, rng: &mut ChaCha8Rng) -> Self {
        let octaves = (0..octaves)
            .map(|o| (ValueNoise::new(base_cells << o, rng), falloff.powi(o as i32)))
            .collect();
        Fractal { octaves }
    }

    fn at(&self, u: f32, v: f32) -> f32 {
        self.octaves.iter().map(|(n, a)| a * n.at(u, v)).sum()
    }
}

enum Shape {
    Ellipse { cy: f32, cx: f32, ry: f32, rx: f32 },
    Rect { y0: f32, x0: f32, y1: f32, x1: f32 },
    Stripes { freq: f32, angle: f32, y0: f32, x0: f32, y1: f32, x1: f32 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let cy = rng.random::<f32>();
        let cx = rng.random::<f32>();
        let ry = 0.04 + 0.25 * rng.random::<f32>();
        let rx = 0.04 + 0.25 * rng.random::<f32>();
        match rng.random_range(0..5) {
            0 | 1 => Shape::Ellipse { cy, cx, ry, rx },
            2 | 3 => Shape::Rect {
                y0: cy - ry,
                x0: cx - rx,
                y1: cy + ry,
                x1: cx + rx,
            },
            _ => Shape::Stripes {
                freq: 10.0 + 40.0 * rng.random::<f32>(),
                angle: std::f32::consts::PI * rng.random::<f32>(),
                y0: cy - ry,
                x0: cx - rx,
                y1: cy + ry,
                x1: cx + rx,
            },
        }
    }

    /// Coverage in `{0, 1}`, or a stripe pattern value inside the box.
    fn coverage(&self, u: f32, v: f32) -> Option<f32> {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                let d = ((v - cy) / ry).powi(2) + ((u - cx) / rx).powi(2);
                (d <= 1.0).then_some(1.0)
            }
            Shape::Rect { y0, x0, y1, x1 } => (v >= y0 && v <= y1 && u >= x0 && u <= x1).then_some(1.0),
            Shape::Stripes { freq, angle, y0, x0, y1, x1 } => {
                if v >= y0 && v <= y1 && u >= x0 && u <= x1 {
                    let t = u * angle.cos() + v * angle.sin();
                    Some(0.5 + 0.5 * (t * freq * std::f32::consts::TAU).sin())
                } else {
                    None
                }
            }
        }
    }
}

/// Generates one RGB probe of size `size x size`.
pub fn natural_probe(seed: u64, index: usize, size: usize) -> Raster {
    let key = StreamKey::new(seed, format!("probe_{index:04}"), "synth");
    let mut rng = key.rng();

    let luma = Fractal::new(2 + rng.random_range(0..3), 6, 0.55 + 0.15 * rng.random::<f32>(), &mut rng);
    let chroma_a = Fractal::new(2, 4, 0.5, &mut rng);
    let chroma_b = Fractal::new(2, 4, 0.5, &mut rng);
    let texture = Fractal::new(32, 2, 0.6, &mut rng);
    let texture_amp = 0.05 + 0.15 * rng.random::<f32>();

    let palette: [[f32; 3]; 2] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random::<f32>()));
    let n_shapes = rng.random_range(4..12);
    let shapes: Vec<(Shape, [f32; 3], f32)> = (0..n_shapes)
        .map(|_| {
            let shape = Shape::random(&mut rng);
            let color = std::array::from_fn(|_| rng.random::<f32>());
            let shade = 0.1 + 0.3 * rng.random::<f32>();
            (shape, color, shade)
        })
        .collect();
    let gamma = 0.7 + 0.6 * rng.random::<f32>();
    let lo = 0.02 + 0.08 * rng.random::<f32>();
    let hi = 0.9 + 0.08 * rng.random::<f32>();

    let mut pixel = vec![[0f32; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f32 + 0.5) / size as f32;
            let v = (y as f32 + 0.5) / size as f32;
            let l = 0.5 + 0.45 * luma.at(u, v);
            let a = chroma_a.at(u, v);
            let b = chroma_b.at(u, v);
            let tex = texture_amp * texture.at(u, v);
            let mut rgb: [f32; 3] = std::array::from_fn(|c| {
                let tint = palette[0][c] * (0.5 + 0.5 * a) + palette[1][c] * (0.5 + 0.5 * b);
                l * (0.6 + 0.4 * tint) + tex
            });
            for (shape, color, shade) in &shapes {
                if let Some(cov) = shape.coverage(u, v) {
                    for c in 0..3 {
                        let base = color[c] * (1.0 - shade) + shade * l;
                        rgb[c] = base * (0.6 + 0.4 * cov) + tex;
                    }
                }
            }
            pixel[y * size + x] = rgb;
        }
    }

    Raster::from_fn(size, size, 3, |y, x, c| {
        let v = pixel[y * size + x][c].clamp(0.0, 1.0).powf(gamma);
        lo + (hi - lo) * v
    })
    .expect("probe dimensions are positive")
}

/// `count` probes keyed `probe_0000..`.
pub fn natural_probes(seed: u64, count: usize, size: usize) -> Vec<(ImageId, Raster)> {
    (0..count)
        .map(|i| (ImageId::new(format!("probe_{i:04}")), natural_probe(seed, i, size)))
        .collect()
}

/// Writes probes as PNGs plus a `manifest.csv` into `dir`.
pub fn write_probe_dataset(dir: &Path, seed: u64, count: usize, size: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::with_capacity(count);
    for (id, img) in natural_probes(seed, count, size) {
        let file = format!("{id}.png");
        write_image(&img, dir.join(&file))?;
        rows.push(ManifestRow::unlabeled(id, file));
    }
    let manifest = Manifest::new(rows)?;
    let path = dir.join("manifest.csv");
    manifest.write_csv(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_are_deterministic_and_distinct() {
        let a = natural_probe(3, 0, 48);
        assert_eq!(a, natural_probe(3, 0, 48));
        assert_ne!(a, natural_probe(3, 1, 48));
        assert_ne!(a, natural_probe(4, 0, 48));
    }

    #[test]
    fn probes_have_usable_dynamic_range() {
        for i in 0..6 {
            let img = natural_probe(11, i, 64);
            let mean = img.mean();
            let var = img.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()
                / img.data().len() as f64;
            assert!(mean > 0.1 && mean < 0.9, "probe {i} mean {mean}");
            assert!(var.sqrt() > 0.03, "probe {i} std {}", var.sqrt());
        }
    }
}
