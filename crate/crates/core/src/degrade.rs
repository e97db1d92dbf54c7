//! Controllable degradations and the synthetic downscalers built from them.
//!
//! A [`SyntheticDownscaler`] is a base kernel reduction composed with a
//! [`DegradationSpec`], applied either after the reduction (the default) or
//! to the high-resolution input before it.

use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{luminance, Raster};
use crate::resample::{downscale, KernelKind, ScaleFactor};
use crate::rng::StreamKey;

pub const DEFAULT_BLUR_KSIZE: usize = 3;

fn default_ksize() -> usize {
    DEFAULT_BLUR_KSIZE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Degradation {
    GaussBlur {
        sigma: f64,
        #[serde(default = "default_ksize")]
        ksize: usize,
    },
    GaussNoise {
        sigma: f64,
        #[serde(default)]
        seed_salt: u64,
    },
    Contrast {
        c: f64,
    },
    QuantizeOtsu {
        n_thresholds: usize,
    },
    Compose {
        ops: Vec<Degradation>,
    },
}

impl Degradation {
    pub fn blur(sigma: f64) -> Self {
        Degradation::GaussBlur {
            sigma,
            ksize: DEFAULT_BLUR_KSIZE,
        }
    }

    pub fn noise(sigma: f64) -> Self {
        Degradation::GaussNoise { sigma, seed_salt: 0 }
    }

    pub fn contrast(c: f64) -> Self {
        Degradation::Contrast { c }
    }

    pub fn quantize(n_thresholds: usize) -> Self {
        Degradation::QuantizeOtsu { n_thresholds }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Degradation::GaussBlur { sigma, ksize } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid(format!("blur sigma must be > 0, got {sigma}")));
                }
                if ksize % 2 == 0 {
                    return Err(Error::invalid(format!("blur kernel size must be odd, got {ksize}")));
                }
            }
            Degradation::GaussNoise { sigma, .. } => {
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
                }
            }
            Degradation::Contrast { c } => {
                if !(*c >= 0.0 && c.is_finite()) {
                    return Err(Error::invalid(format!("contrast factor must be >= 0, got {c}")));
                }
            }
            Degradation::QuantizeOtsu { n_thresholds } => {
                if !(1..=254).contains(n_thresholds) {
                    return Err(Error::invalid(format!(
                        "threshold count must be in 1..=254, got {n_thresholds}"
                    )));
                }
            }
            Degradation::Compose { ops } => {
                if ops.is_empty() {
                    return Err(Error::invalid("compose needs at least one operation"));
                }
                ops.iter().try_for_each(Degradation::validate)?;
            }
        }
        Ok(())
    }

    /// Applies the operation; `key` seeds any randomness.
    pub fn apply(&self, img: &Raster, key: &StreamKey) -> Result<Raster> {
        match self {
            Degradation::GaussBlur { sigma, ksize } => gaussian_blur(img, *sigma, *ksize),
            Degradation::GaussNoise { sigma, seed_salt } => {
                let key = if *seed_salt == 0 {
                    key.clone()
                } else {
                    key.derive(&format!("salt{seed_salt}"))
                };
                gaussian_noise(img, *sigma, &key)
            }
            Degradation::Contrast { c } => contrast(img, *c),
            Degradation::QuantizeOtsu { n_thresholds } => quantize_otsu(img, *n_thresholds),
            Degradation::Compose { ops } => apply_ops(ops, img, key),
        }
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degradation::GaussBlur { sigma, ksize } => write!(f, "blur({sigma}, k={ksize})"),
            Degradation::GaussNoise { sigma, .. } => write!(f, "noise({sigma})"),
            Degradation::Contrast { c } => write!(f, "contrast({c})"),
            Degradation::QuantizeOtsu { n_thresholds } => write!(f, "quantize({n_thresholds})"),
            Degradation::Compose { ops } => {
                let parts: Vec<String> = ops.iter().map(ToString::to_string).collect();
                write!(f, "{}", parts.join(" + "))
            }
        }
    }
}

pub fn apply_ops(ops: &[Degradation], img: &Raster, key: &StreamKey) -> Result<Raster> {
    let mut cur = img.clone();
    for (i, op) in ops.iter().enumerate() {
        cur = op.apply(&cur, &key.derive(&format!("op{i}")))?;
    }
    Ok(cur)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationOrder {
    #[default]
    #[serde(alias = "after")]
    AfterDownscale,
    #[serde(alias = "before")]
    BeforeDownscale,
}

/// Ordered list of degradations; empty means no degradation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(default)]
    pub ops: Vec<Degradation>,
    #[serde(default)]
    pub order: DegradationOrder,
}

impl DegradationSpec {
    pub fn identity() -> Self {
        DegradationSpec::default()
    }

    pub fn after(ops: Vec<Degradation>) -> Self {
        DegradationSpec {
            ops,
            order: DegradationOrder::AfterDownscale,
        }
    }

    pub fn with_order(mut self, order: DegradationOrder) -> Self {
        self.order = order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.ops.iter().try_for_each(Degradation::validate)
    }

    pub fn describe(&self) -> String {
        if self.ops.is_empty() {
            return "none".into();
        }
        let parts: Vec<String> = self.ops.iter().map(ToString::to_string).collect();
        let order = match self.order {
            DegradationOrder::AfterDownscale => "after",
            DegradationOrder::BeforeDownscale => "before",
        };
        format!("{} [{order}]", parts.join(" + "))
    }
}

/// A base kernel reduction followed (or preceded) by degradations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDownscaler {
    pub base: KernelKind,
    pub factor: ScaleFactor,
    pub spec: DegradationSpec,
}

impl SyntheticDownscaler {
    pub fn new(base: KernelKind, factor: ScaleFactor, spec: DegradationSpec) -> Self {
        SyntheticDownscaler { base, factor, spec }
    }

    pub fn bicubic(factor: ScaleFactor, spec: DegradationSpec) -> Self {
        SyntheticDownscaler::new(KernelKind::Bicubic, factor, spec)
    }

    pub fn apply(&self, img: &Raster, key: &StreamKey) -> Result<Raster> {
        apply_spec(&self.spec, self.base, self.factor, img, key)
    }
}

/// Runs `spec` around a `base` reduction by `factor`.
pub fn apply_spec(
    spec: &DegradationSpec,
    base: KernelKind,
    factor: ScaleFactor,
    img: &Raster,
    key: &StreamKey,
) -> Result<Raster> {
    spec.validate()?;
    let key = key.derive("deg");
    match spec.order {
        DegradationOrder::AfterDownscale => {
            let lr = downscale(img, factor, base)?;
            apply_ops(&spec.ops, &lr, &key)
        }
        DegradationOrder::BeforeDownscale => {
            let degraded = apply_ops(&spec.ops, img, &key)?;
            downscale(&degraded, factor, base)
        }
    }
}

/// Normalized 1-D Gaussian taps over `-(k-1)/2 ..= (k-1)/2`.
pub fn gaussian_taps(sigma: f64, ksize: usize) -> Vec<f64> {
    let half = (ksize / 2) as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|t| t / total).collect()
}

pub fn gaussian_blur(img: &Raster, sigma: f64, ksize: usize) -> Result<Raster> {
    Degradation::GaussBlur { sigma, ksize }.validate()?;
    let taps = gaussian_taps(sigma, ksize);
    let half = (ksize / 2) as i64;
    let (h, w, ch) = img.dims();
    let src = img.data();

    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                horiz[(y * w + x) * ch + c] = taps
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let xx = (x as i64 + j as i64 - half).clamp(0, w as i64 - 1) as usize;
                        t * src[(y * w + xx) * ch + c] as f64
                    })
                    .sum();
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[(y * w + x) * ch + c] = taps
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let yy = (y as i64 + j as i64 - half).clamp(0, h as i64 - 1) as usize;
                        t * horiz[(yy * w + x) * ch + c]
                    })
                    .sum::<f64>() as f32;
            }
        }
    }
    Ok(Raster::from_clipped(h, w, ch, out))
}

/// Adds i.i.d. `N(0, sigma^2)` noise drawn from the keyed stream, then clips.
pub fn gaussian_noise(img: &Raster, sigma: f64, key: &StreamKey) -> Result<Raster> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("noise sigma: {e}")))?;
    let mut rng = key.rng();
    Ok(img.map(|v| (v as f64 + normal.sample(&mut rng)) as f32))
}

/// Scales deviations from mid-gray by `c`, then clips.
pub fn contrast(img: &Raster, c: f64) -> Result<Raster> {
    Degradation::contrast(c).validate()?;
    Ok(img.map(|v| (0.5 + c * (v as f64 - 0.5)) as f32))
}

/// 256-bin histogram of 8-bit-quantized luminance.
pub fn luma_histogram(img: &Raster) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in luminance(img).data() {
        hist[(v * 255.0).round() as usize] += 1;
    }
    hist
}

/// Multilevel Otsu thresholds over a 256-bin histogram.
///
/// Returns `n` strictly increasing levels; threshold `t` closes a class, so
/// classes are `[0, t1], [t1+1, t2], ..., [tn+1, 255]`. Maximizes the
/// between-class variance, i.e. `sum_k S_k^2 / W_k` with `W_k` the class
/// count and `S_k` its level-weighted sum, via dynamic programming over class
/// boundaries. Ties resolve to the smallest last threshold, then the smallest
/// preceding ones.
pub fn otsu_thresholds(hist: &[u64; 256], n: usize) -> Result<Vec<usize>> {
    Degradation::quantize(n).validate()?;
    const L: usize = 256;
    let mut cw = [0f64; L + 1];
    let mut cs = [0f64; L + 1];
    for i in 0..L {
        cw[i + 1] = cw[i] + hist[i] as f64;
        cs[i + 1] = cs[i] + (i as f64) * hist[i] as f64;
    }
    // Class covering levels lo..=hi.
    let term = |lo: usize, hi: usize| {
        let w = cw[hi + 1] - cw[lo];
        if w == 0.0 {
            0.0
        } else {
            let s = cs[hi + 1] - cs[lo];
            s * s / w
        }
    };

    let classes = n + 1;
    // best[k][t]: first k+1 classes cover 0..=t, class k ends at t.
    let mut best = vec![vec![f64::NEG_INFINITY; L]; classes];
    let mut back = vec![vec![0usize; L]; classes];
    for t in 0..L {
        best[0][t] = term(0, t);
    }
    for k in 1..classes {
        for t in k..L {
            let mut top = f64::NEG_INFINITY;
            let mut arg = 0;
            for s in (k - 1)..t {
                let v = best[k - 1][s] + term(s + 1, t);
                if v > top {
                    top = v;
                    arg = s;
                }
            }
            best[k][t] = top;
            back[k][t] = arg;
        }
    }

    let mut thresholds = vec![0usize; n];
    let mut end = L - 1;
    for k in (1..classes).rev() {
        end = back[k][end];
        thresholds[k - 1] = end;
    }
    Ok(thresholds)
}

/// Class boundaries in intensity units for `otsu_thresholds` output.
pub fn threshold_boundaries(thresholds: &[usize]) -> Vec<f32> {
    thresholds.iter().map(|&t| (t as f32 + 0.5) / 255.0).collect()
}

/// Otsu multilevel quantization with luminance-derived thresholds.
///
/// Thresholds come from the graylevel histogram and are applied to every
/// channel; each sample becomes the midpoint of its bin in `[0, 1]`.
pub fn quantize_otsu(img: &Raster, n: usize) -> Result<Raster> {
    let thresholds = otsu_thresholds(&luma_histogram(img), n)?;
    let bounds = threshold_boundaries(&thresholds);
    let mut edges = Vec::with_capacity(bounds.len() + 2);
    edges.push(0.0f32);
    edges.extend(&bounds);
    edges.push(1.0);
    let mids: Vec<f32> = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
    Ok(img.map(|v| mids[bounds.partition_point(|&b| b <= v)]))
}
