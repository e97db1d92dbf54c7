//! Full-reference image metrics and the distortion measures used for scoring.
//!
//! SSIM follows the usual reference setup: an 11x11 Gaussian window with
//! sigma 1.5, `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, evaluated over
//! "valid" window positions only. Color images average the per-channel
//! scores. MS-SSIM uses the five standard scale weights with 2x2 average
//! pooling between scales.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Raster;
use crate::protocol::Backend;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const C1: f64 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
const C2: f64 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);

fn check_same(a: &Raster, b: &Raster) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "compared rasters differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )))
    }
}

/// Mean squared error and PSNR for peak 1.0. Identical inputs give `psnr = +inf`.
pub fn mse_psnr(a: &Raster, b: &Raster) -> Result<(f64, f64)> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sum / a.data().len() as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    };
    Ok((mse, psnr))
}

fn window_taps(size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|t| t / total).collect()
}

/// Window used for an `h x w` image: 11, or the largest odd size that fits.
pub fn ssim_window_size(h: usize, w: usize) -> usize {
    let m = h.min(w).min(SSIM_WINDOW);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Separable "valid" filtering of a dense plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * horiz[(y + j) * ow + x])
                .sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term for one plane.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let taps = window_taps(ssim_window_size(h, w));
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, oh, ow) = filter_valid(a, h, w, &taps);
    let (mu_b, _, _) = filter_valid(b, h, w, &taps);
    let (e_aa, _, _) = filter_valid(&aa, h, w, &taps);
    let (e_bb, _, _) = filter_valid(&bb, h, w, &taps);
    let (e_ab, _, _) = filter_valid(&ab, h, w, &taps);

    let n = (oh * ow) as f64;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + C2) / (va + vb + C2);
        let l = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

fn planes_f64(img: &Raster) -> Vec<Vec<f64>> {
    (0..img.channels())
        .map(|c| img.plane(c).into_iter().map(f64::from).collect())
        .collect()
}

/// Mean SSIM, averaged over channels.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    check_same(a, b)?;
    let (h, w, ch) = a.dims();
    let pa = planes_f64(a);
    let pb = planes_f64(b);
    let total: f64 = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| ssim_plane(x, y, h, w).0)
        .sum();
    Ok(total / ch as f64)
}

/// Number of MS-SSIM scales usable for a `h x w` image (0 if too small).
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    let m = h.min(w);
    (1..=MS_SSIM_WEIGHTS.len())
        .take_while(|&s| m >= SSIM_WINDOW << (s - 1))
        .last()
        .unwrap_or(0)
}

fn pool2(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]));
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM. Trailing scales that do not fit are dropped and the
/// remaining weights renormalized.
pub fn ms_ssim(a: &Raster, b: &Raster) -> Result<f64> {
    check_same(a, b)?;
    let (h, w, ch) = a.dims();
    let scales = ms_ssim_scales(h, w);
    if scales == 0 {
        return Err(Error::Dimension(format!(
            "{h}x{w} is below the {SSIM_WINDOW}-pixel minimum for MS-SSIM"
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();

    let mut total = 0.0;
    for (mut pa, mut pb) in planes_f64(a).into_iter().zip(planes_f64(b)) {
        let (mut ph, mut pw) = (h, w);
        let mut score = 1.0;
        for (j, wt) in weights.iter().enumerate() {
            let (s, cs) = ssim_plane(&pa, &pb, ph, pw);
            let term = if j + 1 == scales { s } else { cs };
            score *= term.max(0.0).powf(wt / wsum);
            if j + 1 < scales {
                let (na, nh, nw) = pool2(&pa, ph, pw);
                pa = na;
                pb = pool2(&pb, ph, pw).0;
                ph = nh;
                pw = nw;
            }
        }
        total += score;
    }
    Ok(total / ch as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Psnr,
    Ssim,
    MsSsim,
    #[serde(alias = "1-msssim")]
    OneMinusMsssim,
    LpipsRemote,
}

impl DistortionKind {
    /// Only distortion-oriented kinds (lower is better) may drive scoring.
    pub fn is_distortion(self) -> bool {
        matches!(self, DistortionKind::OneMinusMsssim | DistortionKind::LpipsRemote)
    }

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::Psnr => "psnr",
            DistortionKind::Ssim => "ssim",
            DistortionKind::MsSsim => "ms_ssim",
            DistortionKind::OneMinusMsssim => "one_minus_msssim",
            DistortionKind::LpipsRemote => "lpips_remote",
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr" => Ok(DistortionKind::Psnr),
            "ssim" => Ok(DistortionKind::Ssim),
            "ms_ssim" | "msssim" => Ok(DistortionKind::MsSsim),
            "one_minus_msssim" | "1-msssim" => Ok(DistortionKind::OneMinusMsssim),
            "lpips_remote" | "lpips" => Ok(DistortionKind::LpipsRemote),
            other => Err(Error::invalid(format!("unknown distortion kind `{other}`"))),
        }
    }
}

/// A resolved distortion measure.
#[derive(Clone)]
pub enum Distortion {
    OneMinusMsSsim,
    /// Scalar metric served by a remote backend (e.g. `"lpips"`).
    Remote { backend: Arc<Backend>, metric: String },
}

impl fmt::Debug for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl Distortion {
    pub fn describe(&self) -> String {
        match self {
            Distortion::OneMinusMsSsim => "one_minus_msssim".into(),
            Distortion::Remote { backend, metric } => {
                format!("{metric}@{}", backend.endpoint())
            }
        }
    }

    pub fn kind(&self) -> DistortionKind {
        match self {
            Distortion::OneMinusMsSsim => DistortionKind::OneMinusMsssim,
            Distortion::Remote { .. } => DistortionKind::LpipsRemote,
        }
    }

    pub fn measure(&self, reference: &Raster, candidate: &Raster) -> Result<f64> {
        match self {
            Distortion::OneMinusMsSsim => Ok((1.0 - ms_ssim(reference, candidate)?).max(0.0)),
            Distortion::Remote { backend, metric } => {
                check_same(reference, candidate)?;
                let v = backend.metric(metric, &[(reference.clone(), candidate.clone())])?;
                Ok(v[0])
            }
        }
    }
}

/// Evaluates a local distortion kind. Remote kinds need a [`Distortion::Remote`].
pub fn distortion(kind: DistortionKind, a: &Raster, b: &Raster) -> Result<f64> {
    match kind {
        DistortionKind::OneMinusMsssim => Distortion::OneMinusMsSsim.measure(a, b),
        DistortionKind::LpipsRemote => Err(Error::BackendUnavailable {
            endpoint: "<none configured>".into(),
            message: "lpips_remote requires a metric backend".into(),
        }),
        other => Err(Error::invalid(format!(
            "`{other}` is a similarity, not a distortion"
        ))),
    }
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("mean_std of an empty list"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
