//! Separable resampling kernels, box/nearest block reduction and DPID.
//!
//! Pixel centers sit at `(i + 0.5) / n` in normalized coordinates. When
//! reducing, interpolating kernels are stretched by the scale factor so they
//! also act as the anti-aliasing prefilter. Nearest never prefilters.
//! Out-of-range taps are clamped to the nearest edge pixel.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Raster;

/// Keys cubic convolution parameter.
pub const BICUBIC_A: f64 = -0.5;
/// Lanczos lobes.
pub const LANCZOS_LOBES: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Nearest,
    Bilinear,
    Bicubic,
    Lanczos3,
    Box,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::Nearest,
        KernelKind::Bilinear,
        KernelKind::Bicubic,
        KernelKind::Lanczos3,
        KernelKind::Box,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Nearest => "nearest",
            KernelKind::Bilinear => "bilinear",
            KernelKind::Bicubic => "bicubic",
            KernelKind::Lanczos3 => "lanczos3",
            KernelKind::Box => "box",
        }
    }

    fn radius(self) -> f64 {
        match self {
            KernelKind::Nearest | KernelKind::Box => 0.5,
            KernelKind::Bilinear => 1.0,
            KernelKind::Bicubic => 2.0,
            KernelKind::Lanczos3 => LANCZOS_LOBES,
        }
    }

    fn eval(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            KernelKind::Nearest | KernelKind::Box => {
                if x < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelKind::Bilinear => (1.0 - x).max(0.0),
            KernelKind::Bicubic => {
                let a = BICUBIC_A;
                if x <= 1.0 {
                    ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
                } else if x < 2.0 {
                    ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
                } else {
                    0.0
                }
            }
            KernelKind::Lanczos3 => {
                if x == 0.0 {
                    1.0
                } else if x < LANCZOS_LOBES {
                    let px = PI * x;
                    LANCZOS_LOBES * px.sin() * (px / LANCZOS_LOBES).sin() / (px * px)
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" | "nn" => Ok(KernelKind::Nearest),
            "bilinear" | "linear" => Ok(KernelKind::Bilinear),
            "bicubic" | "cubic" => Ok(KernelKind::Bicubic),
            "lanczos3" | "lanczos" => Ok(KernelKind::Lanczos3),
            "box" | "area" => Ok(KernelKind::Box),
            other => Err(Error::invalid(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Integer per-axis scale factor, at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct ScaleFactor(usize);

impl ScaleFactor {
    pub const IDENTITY: ScaleFactor = ScaleFactor(1);

    pub fn new(s: usize) -> Result<Self> {
        if s == 0 {
            Err(Error::invalid("scale factor must be at least 1"))
        } else {
            Ok(ScaleFactor(s))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn reduced(self, n: usize) -> usize {
        n.div_ceil(self.0)
    }
}

impl TryFrom<usize> for ScaleFactor {
    type Error = Error;

    fn try_from(s: usize) -> Result<Self> {
        ScaleFactor::new(s)
    }
}

impl From<ScaleFactor> for usize {
    fn from(s: ScaleFactor) -> usize {
        s.0
    }
}

impl fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x", self.0)
    }
}

fn check_reducible(img: &Raster, s: ScaleFactor) -> Result<()> {
    if s.get() > img.height() || s.get() > img.width() {
        return Err(Error::InvalidScale {
            factor: s.get(),
            height: img.height(),
            width: img.width(),
        });
    }
    Ok(())
}

/// Sparse 1-D resampling matrix: for each output index, `(source index, weight)` taps.
struct Taps {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Taps {
    fn build(src_len: usize, dst_len: usize, kernel: KernelKind, stretch: f64, center: impl Fn(usize) -> f64) -> Self {
        let support = kernel.radius() * stretch;
        let rows = (0..dst_len)
            .map(|o| {
                let c = center(o);
                let lo = (c - support).floor() as i64;
                let hi = (c + support).ceil() as i64;
                let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
                for i in lo..=hi {
                    let w = kernel.eval((i as f64 - c) / stretch);
                    if w != 0.0 {
                        let idx = i.clamp(0, src_len as i64 - 1) as usize;
                        taps.push((idx, w));
                    }
                }
                let total: f64 = taps.iter().map(|t| t.1).sum();
                for t in &mut taps {
                    t.1 /= total;
                }
                taps
            })
            .collect();
        Taps { rows }
    }

    fn for_downscale(src_len: usize, s: usize, kernel: KernelKind) -> Self {
        let s_f = s as f64;
        Taps::build(src_len, src_len.div_ceil(s), kernel, s_f, |o| (o as f64 + 0.5) * s_f - 0.5)
    }

    fn for_upscale(src_len: usize, s: usize, kernel: KernelKind) -> Self {
        let s_f = s as f64;
        Taps::build(src_len, src_len * s, kernel, 1.0, |o| (o as f64 + 0.5) / s_f - 0.5)
    }
}

/// Applies `rows_taps` along y and `cols_taps` along x.
fn separable(img: &Raster, rows_taps: &Taps, cols_taps: &Taps) -> Raster {
    let (h, w, ch) = img.dims();
    let out_w = cols_taps.rows.len();
    let out_h = rows_taps.rows.len();
    let src = img.data();

    let mut horiz = vec![0.0f64; h * out_w * ch];
    for y in 0..h {
        let src_row = &src[y * w * ch..(y + 1) * w * ch];
        let dst_row = &mut horiz[y * out_w * ch..(y + 1) * out_w * ch];
        for (ox, taps) in cols_taps.rows.iter().enumerate() {
            for c in 0..ch {
                dst_row[ox * ch + c] = taps
                    .iter()
                    .map(|&(ix, wt)| wt * src_row[ix * ch + c] as f64)
                    .sum();
            }
        }
    }

    let row_len = out_w * ch;
    let mut out = vec![0.0f32; out_h * row_len];
    for (oy, taps) in rows_taps.rows.iter().enumerate() {
        let dst_row = &mut out[oy * row_len..(oy + 1) * row_len];
        for (i, d) in dst_row.iter_mut().enumerate() {
            *d = taps
                .iter()
                .map(|&(iy, wt)| wt * horiz[iy * row_len + i])
                .sum::<f64>() as f32;
        }
    }
    Raster::from_clipped(out_h, out_w, ch, out)
}

/// Visits the clamped `s x s` footprint of output pixel `(oy, ox)`.
#[inline]
fn footprint(h: usize, w: usize, s: usize, oy: usize, ox: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..s).flat_map(move |dy| {
        let y = (oy * s + dy).min(h - 1);
        (0..s).map(move |dx| (y, (ox * s + dx).min(w - 1)))
    })
}

fn box_reduce(img: &Raster, s: usize) -> Raster {
    let (h, w, ch) = img.dims();
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let n = (s * s) as f64;
    let mut out = Vec::with_capacity(oh * ow * ch);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..ch {
                let sum: f64 = footprint(h, w, s, oy, ox)
                    .map(|(y, x)| img.get(y, x, c) as f64)
                    .sum();
                out.push((sum / n) as f32);
            }
        }
    }
    Raster::from_clipped(oh, ow, ch, out)
}

fn nearest_reduce(img: &Raster, s: usize) -> Raster {
    let (h, w, ch) = img.dims();
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let mut out = Vec::with_capacity(oh * ow * ch);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..ch {
                out.push(img.get(oy * s, ox * s, c));
            }
        }
    }
    Raster::from_clipped(oh, ow, ch, out)
}

/// Reduces `img` by `s` along both axes; output dims are `ceil(h/s) x ceil(w/s)`.
pub fn downscale(img: &Raster, s: ScaleFactor, kernel: KernelKind) -> Result<Raster> {
    check_reducible(img, s)?;
    let s = s.get();
    if s == 1 {
        return Ok(img.clone());
    }
    Ok(match kernel {
        KernelKind::Nearest => nearest_reduce(img, s),
        KernelKind::Box => box_reduce(img, s),
        _ => separable(
            img,
            &Taps::for_downscale(img.height(), s, kernel),
            &Taps::for_downscale(img.width(), s, kernel),
        ),
    })
}

/// Enlarges `img` by `s`; nearest and box replicate pixels.
pub fn upscale(img: &Raster, s: ScaleFactor, kernel: KernelKind) -> Result<Raster> {
    let s = s.get();
    if s == 1 {
        return Ok(img.clone());
    }
    let (h, w, ch) = img.dims();
    Ok(match kernel {
        KernelKind::Nearest | KernelKind::Box => {
            let mut out = Vec::with_capacity(h * s * w * s * ch);
            for y in 0..h * s {
                for x in 0..w * s {
                    for c in 0..ch {
                        out.push(img.get(y / s, x / s, c));
                    }
                }
            }
            Raster::from_clipped(h * s, w * s, ch, out)
        }
        _ => separable(
            img,
            &Taps::for_upscale(h, s, kernel),
            &Taps::for_upscale(w, s, kernel),
        ),
    })
}

/// Default DPID detail exponent.
pub const DPID_DEFAULT_LAMBDA: f64 = 1.0;

/// Detail-preserving reduction.
///
/// Each output pixel is a weighted mean over its `s x s` footprint, where a
/// source pixel's weight grows with its distance from the box-reduced
/// guidance value: `w = (|I_p - g| / sqrt(C))^lambda`. A footprint whose
/// weights are all zero falls back to the plain box mean.
pub fn dpid_downscale(img: &Raster, s: ScaleFactor, lambda: f64) -> Result<Raster> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("DPID lambda must be >= 0, got {lambda}")));
    }
    check_reducible(img, s)?;
    let s = s.get();
    let guide = box_reduce(img, s);
    let (h, w, ch) = img.dims();
    let (oh, ow) = (guide.height(), guide.width());
    let norm = (ch as f64).sqrt();
    let n = (s * s) as f64;

    let mut out = Vec::with_capacity(oh * ow * ch);
    let mut acc = vec![0.0f64; ch];
    for oy in 0..oh {
        for ox in 0..ow {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut total = 0.0f64;
            for (y, x) in footprint(h, w, s, oy, ox) {
                let dist2: f64 = (0..ch)
                    .map(|c| {
                        let d = img.get(y, x, c) as f64 - guide.get(oy, ox, c) as f64;
                        d * d
                    })
                    .sum();
                let wt = (dist2.sqrt() / norm).powf(lambda);
                total += wt;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += wt * img.get(y, x, c) as f64;
                }
            }
            if total > 0.0 {
                out.extend(acc.iter().map(|a| (a / total) as f32));
            } else {
                for c in 0..ch {
                    let sum: f64 = footprint(h, w, s, oy, ox)
                        .map(|(y, x)| img.get(y, x, c) as f64)
                        .sum();
                    out.push((sum / n) as f32);
                }
            }
        }
    }
    Ok(Raster::from_clipped(oh, ow, ch, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, data: &[f32]) -> Raster {
        Raster::new(h, w, 1, data.to_vec()).unwrap()
    }

    fn sf(s: usize) -> ScaleFactor {
        ScaleFactor::new(s).unwrap()
    }

    fn noise_raster(h: usize, w: usize, ch: usize, seed: u64) -> Raster {
        let mut state = seed.wrapping_add(0x9E3779B97F4A7C15);
        Raster::from_fn(h, w, ch, |_, _, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / (1u64 << 24) as f32
        })
        .unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(KernelKind::Bicubic.eval(0.0), 1.0);
        assert_eq!(KernelKind::Bicubic.eval(1.0), 0.0);
        assert_eq!(KernelKind::Bicubic.eval(2.0), 0.0);
        // Keys a = -0.5 at x = 0.5: 1.5*0.125 - 2.5*0.25 + 1
        assert!((KernelKind::Bicubic.eval(0.5) - 0.5625).abs() < 1e-12);
        assert!((KernelKind::Bicubic.eval(1.5) + 0.0625).abs() < 1e-12);
        assert!(KernelKind::Lanczos3.eval(1.0).abs() < 1e-12);
        assert_eq!(KernelKind::Lanczos3.eval(3.0), 0.0);
    }

    #[test]
    fn constant_images_stay_constant() {
        let img = Raster::filled(13, 10, 3, 0.42).unwrap();
        for k in KernelKind::ALL {
            for s in [1, 2, 3, 4] {
                let out = downscale(&img, sf(s), k).unwrap();
                assert_eq!(out.dims(), (13usize.div_ceil(s), 10usize.div_ceil(s), 3));
                assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-6), "{k} {s}");
                let up = upscale(&img, sf(s), k).unwrap();
                assert_eq!(up.dims(), (13 * s, 10 * s, 3));
                assert!(up.data().iter().all(|&v| (v - 0.42).abs() < 1e-6), "{k} {s}");
            }
        }
    }

    #[test]
    fn box_example() {
        let out = downscale(&gray(2, 2, &[0.0, 1.0, 0.0, 1.0]), sf(2), KernelKind::Box).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn nearest_takes_top_left() {
        let out = downscale(&gray(2, 2, &[0.1, 0.9, 0.3, 0.7]), sf(2), KernelKind::Nearest).unwrap();
        assert_eq!(out.data(), &[0.1]);
    }

    #[test]
    fn scale_larger_than_image_is_rejected() {
        let img = Raster::filled(4, 8, 1, 0.5).unwrap();
        for k in KernelKind::ALL {
            assert!(matches!(
                downscale(&img, sf(5), k),
                Err(Error::InvalidScale { factor: 5, .. })
            ));
        }
        assert!(dpid_downscale(&img, sf(5), 1.0).is_err());
        assert!(ScaleFactor::new(0).is_err());
    }

    #[test]
    fn identity_at_unit_scale() {
        let img = noise_raster(7, 9, 3, 1);
        for k in KernelKind::ALL {
            assert_eq!(downscale(&img, sf(1), k).unwrap(), img);
            assert_eq!(upscale(&img, sf(1), k).unwrap(), img);
        }
    }

    #[test]
    fn non_divisible_dims_use_ceil() {
        let img = noise_raster(10, 7, 1, 2);
        for k in KernelKind::ALL {
            assert_eq!(downscale(&img, sf(3), k).unwrap().dims(), (4, 3, 1));
        }
        assert_eq!(dpid_downscale(&img, sf(3), 1.0).unwrap().dims(), (4, 3, 1));
    }

    #[test]
    fn bilinear_upscale_row() {
        let out = upscale(&gray(1, 2, &[0.0, 1.0]), sf(2), KernelKind::Bilinear).unwrap();
        assert_eq!(out.dims(), (2, 4, 1));
        let row = &out.data()[..4];
        assert_eq!(row[0], 0.0);
        assert_eq!(row[3], 1.0);
        assert!(row.windows(2).all(|p| p[0] <= p[1]));
        // Centers map to -0.25, 0.25, 0.75, 1.25 on the source grid.
        assert!((row[1] - 0.25).abs() < 1e-7);
        assert!((row[2] - 0.75).abs() < 1e-7);
    }

    #[test]
    fn dpid_examples() {
        let block = gray(2, 2, &[0.5, 0.5, 0.5, 0.9]);
        let out = dpid_downscale(&block, sf(2), 1.0).unwrap();
        assert!((out.get(0, 0, 0) - 0.7).abs() < 1e-6, "{}", out.get(0, 0, 0));

        let flat = Raster::filled(6, 6, 3, 0.3).unwrap();
        let out = dpid_downscale(&flat, sf(3), 2.5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));

        assert!(dpid_downscale(&block, sf(2), -1.0).is_err());
    }

    #[test]
    fn dpid_emphasizes_outliers_over_box() {
        let block = gray(2, 2, &[0.5, 0.5, 0.5, 0.9]);
        let boxed = downscale(&block, sf(2), KernelKind::Box).unwrap().get(0, 0, 0);
        let l1 = dpid_downscale(&block, sf(2), 1.0).unwrap().get(0, 0, 0);
        let l3 = dpid_downscale(&block, sf(2), 3.0).unwrap().get(0, 0, 0);
        assert!(boxed < l1 && l1 < l3);
    }

    #[test]
    fn monotone_response_on_constants() {
        for k in KernelKind::ALL {
            for s in [2, 3] {
                let lo = downscale(&Raster::filled(9, 9, 1, 0.3).unwrap(), sf(s), k).unwrap();
                let hi = downscale(&Raster::filled(9, 9, 1, 0.31).unwrap(), sf(s), k).unwrap();
                assert!(lo.data().iter().zip(hi.data()).all(|(a, b)| a < b));
            }
        }
    }

    proptest! {
        #[test]
        fn box_preserves_dc(seed in any::<u64>(), s in 1usize..5, by in 1usize..4, bx in 1usize..4) {
            let img = noise_raster(s * by, s * bx, 3, seed);
            let out = downscale(&img, sf(s), KernelKind::Box).unwrap();
            prop_assert!((out.mean() - img.mean()).abs() < 1e-6);
        }

        #[test]
        fn dpid_at_zero_lambda_is_box(seed in any::<u64>(), s in 1usize..5, h in 4usize..12, w in 4usize..12, gray in any::<bool>()) {
            let img = noise_raster(h, w, if gray { 1 } else { 3 }, seed);
            prop_assert_eq!(
                dpid_downscale(&img, sf(s), 0.0).unwrap(),
                downscale(&img, sf(s), KernelKind::Box).unwrap()
            );
        }

        #[test]
        fn outputs_stay_in_range(seed in any::<u64>(), s in 2usize..5, k in 0usize..5) {
            let kernel = KernelKind::ALL[k];
            let img = noise_raster(12, 12, 1, seed);
            let down = downscale(&img, sf(s), kernel).unwrap();
            let up = upscale(&img, sf(s), kernel).unwrap();
            prop_assert!(down.data().iter().chain(up.data()).all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
