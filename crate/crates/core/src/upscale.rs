//! Blind stochastic upscalers.
//!
//! An [`Upscaler`] only ever sees the low-resolution raster plus a sample
//! index and a stream key; it cannot tell which downscaler produced its
//! input. Sample `i` is a deterministic function of `(lr, i, key)`.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Raster;
use crate::protocol::Backend;
use crate::resample::{upscale, KernelKind, ScaleFactor};
use crate::rng::StreamKey;

pub const DEFAULT_TAU: f64 = 0.02;

#[derive(Clone)]
pub enum Upscaler {
    /// Plain interpolation; every sample is identical.
    Interp { kernel: KernelKind, factor: ScaleFactor },
    /// Interpolation plus `tau` times a unit-variance field that only holds
    /// frequencies above the low-resolution Nyquist limit.
    Perturbed {
        kernel: KernelKind,
        factor: ScaleFactor,
        tau: f64,
    },
    /// Samples served by an external backend.
    Remote { backend: Arc<Backend>, factor: ScaleFactor },
    /// `first` then `second`; factors multiply.
    Chain(Box<Upscaler>, Box<Upscaler>),
}

impl fmt::Debug for Upscaler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl Upscaler {
    pub fn interp(kernel: KernelKind, factor: ScaleFactor) -> Self {
        Upscaler::Interp { kernel, factor }
    }

    pub fn perturbed(kernel: KernelKind, factor: ScaleFactor, tau: f64) -> Self {
        Upscaler::Perturbed { kernel, factor, tau }
    }

    pub fn chain(first: Upscaler, second: Upscaler) -> Self {
        Upscaler::Chain(Box::new(first), Box::new(second))
    }

    pub fn factor(&self) -> ScaleFactor {
        match self {
            Upscaler::Interp { factor, .. }
            | Upscaler::Perturbed { factor, .. }
            | Upscaler::Remote { factor, .. } => *factor,
            Upscaler::Chain(a, b) => ScaleFactor::new(a.factor().get() * b.factor().get())
                .expect("product of positive factors"),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Upscaler::Interp { .. } => true,
            Upscaler::Perturbed { tau, factor, .. } => *tau == 0.0 || factor.get() == 1,
            Upscaler::Remote { .. } => false,
            Upscaler::Chain(a, b) => a.is_deterministic() && b.is_deterministic(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Upscaler::Interp { kernel, factor } => format!("interp({kernel}, {factor})"),
            Upscaler::Perturbed { kernel, factor, tau } => {
                format!("perturbed({kernel}, {factor}, tau={tau})")
            }
            Upscaler::Remote { backend, factor } => format!("remote({}, {factor})", backend.endpoint()),
            Upscaler::Chain(a, b) => format!("chain[{} -> {}]", a.describe(), b.describe()),
        }
    }

    fn check_index(i: u32) -> Result<()> {
        if i == 0 {
            Err(Error::invalid("sample indices start at 1"))
        } else {
            Ok(())
        }
    }

    /// Draws sample `i` (1-based).
    ///
    /// In a chain every stage but the last runs under a derived key, so
    /// `chain(identity, u)` reproduces `u` exactly.
    pub fn sample(&self, lr: &Raster, i: u32, key: &StreamKey) -> Result<Raster> {
        Self::check_index(i)?;
        match self {
            Upscaler::Interp { kernel, factor } => upscale(lr, *factor, *kernel),
            Upscaler::Perturbed { kernel, factor, tau } => {
                let base = upscale(lr, *factor, *kernel)?;
                if *tau == 0.0 || factor.get() == 1 {
                    return Ok(base);
                }
                let field = highpass_field(base.height(), base.width(), base.channels(), factor.get(), &key.with_sample(i));
                let tau = *tau as f32;
                let data = base
                    .data()
                    .iter()
                    .zip(&field)
                    .map(|(&v, &n)| v + tau * n)
                    .collect();
                Ok(Raster::from_clipped(base.height(), base.width(), base.channels(), data))
            }
            Upscaler::Remote { backend, factor } => {
                let n = u16::try_from(i).map_err(|_| Error::invalid("remote sample index exceeds u16"))?;
                let mut all = backend.upscale(lr, factor_u16(*factor)?, n, key.seed, &key.image)?;
                Ok(all.pop().expect("backend returned n samples"))
            }
            Upscaler::Chain(a, b) => {
                let mid = a.sample(lr, i, &key.derive("chain0"))?;
                b.sample(&mid, i, key)
            }
        }
    }

    /// Draws samples `1..=n`; equal to calling [`Upscaler::sample`] for each index.
    pub fn samples(&self, lr: &Raster, n: u32, key: &StreamKey) -> Result<Vec<Raster>> {
        match self {
            Upscaler::Remote { backend, factor } => {
                let n = u16::try_from(n).map_err(|_| Error::invalid("remote sample count exceeds u16"))?;
                backend.upscale(lr, factor_u16(*factor)?, n, key.seed, &key.image)
            }
            Upscaler::Chain(a, b) => {
                let mids = a.samples(lr, n, &key.derive("chain0"))?;
                mids.iter()
                    .zip(1..)
                    .map(|(mid, i)| b.sample(mid, i, key))
                    .collect()
            }
            _ => (1..=n).map(|i| self.sample(lr, i, key)).collect(),
        }
    }
}

fn factor_u16(f: ScaleFactor) -> Result<u16> {
    u16::try_from(f.get()).map_err(|_| Error::invalid(format!("factor {f} does not fit the wire format")))
}

/// Zero-mean, unit-variance noise with every `s x s` block mean removed.
///
/// White noise minus its block-averaged copy has no energy at or below the
/// coarse grid's Nyquist rate, and its box reduction by `s` is exactly zero.
pub fn highpass_field(h: usize, w: usize, ch: usize, s: usize, key: &StreamKey) -> Vec<f32> {
    let mut rng = key.rng();
    let mut white: Vec<f64> = (0..h * w * ch).map(|_| StandardNormal.sample(&mut rng)).collect();
    if s <= 1 {
        return vec![0.0; white.len()];
    }
    let norm = (1.0 - 1.0 / (s * s) as f64).sqrt();
    let (bh, bw) = (h.div_ceil(s), w.div_ceil(s));
    let mut block_sum = vec![0.0f64; bh * bw * ch];
    let mut block_n = vec![0.0f64; bh * bw];
    for y in 0..h {
        for x in 0..w {
            let b = (y / s) * bw + x / s;
            block_n[b] += 1.0;
            for c in 0..ch {
                block_sum[b * ch + c] += white[(y * w + x) * ch + c];
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let b = (y / s) * bw + x / s;
            for c in 0..ch {
                let i = (y * w + x) * ch + c;
                white[i] = (white[i] - block_sum[b * ch + c] / block_n[b]) / norm;
            }
        }
    }
    white.into_iter().map(|v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::mock::{mock_sample, MockBackend};
    use crate::protocol::Endpoint;
    use crate::resample::downscale;
    use crate::synth::natural_probe;
    use std::io::{BufReader, BufWriter};
    use std::net::TcpListener;

    fn sf(s: usize) -> ScaleFactor {
        ScaleFactor::new(s).unwrap()
    }

    fn key() -> StreamKey {
        StreamKey::new(5, "probe", "us")
    }

    fn lr_probe(size: usize) -> Raster {
        downscale(&natural_probe(1, 3, size * 8), sf(8), KernelKind::Bicubic).unwrap()
    }

    #[test]
    fn zero_tau_is_interp() {
        let lr = lr_probe(16);
        let interp = Upscaler::interp(KernelKind::Bicubic, sf(4));
        let flat = Upscaler::perturbed(KernelKind::Bicubic, sf(4), 0.0);
        for i in 1..=3 {
            assert_eq!(flat.sample(&lr, i, &key()).unwrap(), interp.sample(&lr, i, &key()).unwrap());
        }
        assert!(flat.is_deterministic());
        assert!(interp.sample(&lr, 0, &key()).is_err());
    }

    #[test]
    fn samples_are_deterministic_and_distinct() {
        let lr = lr_probe(16);
        let u = Upscaler::perturbed(KernelKind::Bicubic, sf(4), 0.02);
        let a = u.samples(&lr, 5, &key()).unwrap();
        assert_eq!(a, u.samples(&lr, 5, &key()).unwrap());
        assert_eq!(a[2], u.sample(&lr, 3, &key()).unwrap());
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(a[i], a[j], "samples {i} and {j}");
            }
        }
        assert_ne!(a[0], u.sample(&lr, 1, &StreamKey::new(6, "probe", "us")).unwrap());
    }

    #[test]
    fn perturbation_is_invisible_after_box_reduction() {
        let lr = downscale(&natural_probe(2, 0, 256), sf(4), KernelKind::Bicubic).unwrap();
        let u = Upscaler::perturbed(KernelKind::Bicubic, sf(4), 0.05);
        let interp = Upscaler::interp(KernelKind::Bicubic, sf(4)).sample(&lr, 1, &key()).unwrap();
        let s = u.sample(&lr, 1, &key()).unwrap();
        assert_eq!(s.dims(), (256, 256, 3));
        let a = downscale(&s, sf(4), KernelKind::Box).unwrap();
        let b = downscale(&interp, sf(4), KernelKind::Box).unwrap();
        let mad = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>()
            / a.data().len() as f64;
        assert!(mad <= 0.01, "mean abs deviation {mad}");
    }

    #[test]
    fn highpass_field_statistics() {
        let f = highpass_field(64, 64, 1, 4, &key());
        let n = f.len() as f64;
        let mean = f.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = f.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        for by in 0..16 {
            for bx in 0..16 {
                let s: f64 = (0..4)
                    .flat_map(|dy| (0..4).map(move |dx| (by * 4 + dy) * 64 + bx * 4 + dx))
                    .map(|i| f[i] as f64)
                    .sum();
                assert!(s.abs() < 1e-4);
            }
        }
        assert!(highpass_field(8, 8, 3, 1, &key()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_mean_converges_to_interp() {
        let lr = lr_probe(16);
        let tau = 0.02;
        let u = Upscaler::perturbed(KernelKind::Bicubic, sf(4), tau);
        let interp = Upscaler::interp(KernelKind::Bicubic, sf(4)).sample(&lr, 1, &key()).unwrap();
        let samples = u.samples(&lr, 64, &key()).unwrap();
        let n = interp.data().len();
        let mad = (0..n)
            .map(|j| {
                let m = samples.iter().map(|s| s.data()[j] as f64).sum::<f64>() / 64.0;
                (m - interp.data()[j] as f64).abs()
            })
            .sum::<f64>()
            / n as f64;
        assert!(mad <= tau / 4.0, "mean abs deviation {mad}");
    }

    #[test]
    fn chain_algebra() {
        let lr = lr_probe(8);
        let c = Upscaler::chain(
            Upscaler::interp(KernelKind::Bilinear, sf(2)),
            Upscaler::interp(KernelKind::Bilinear, sf(2)),
        );
        assert_eq!(c.factor(), sf(4));
        assert_eq!(c.sample(&lr, 1, &key()).unwrap().dims(), (32, 32, 3));

        let p = Upscaler::perturbed(KernelKind::Bicubic, sf(4), 0.02);
        let id_chain = Upscaler::chain(Upscaler::interp(KernelKind::Bicubic, sf(1)), p.clone());
        for i in 1..=3 {
            assert_eq!(id_chain.sample(&lr, i, &key()).unwrap(), p.sample(&lr, i, &key()).unwrap());
        }

        let pp = Upscaler::chain(p.clone(), Upscaler::perturbed(KernelKind::Bicubic, sf(2), 0.02));
        assert_eq!(pp.factor(), sf(8));
        let a = pp.samples(&lr, 3, &key()).unwrap();
        assert_eq!(a, pp.samples(&lr, 3, &key()).unwrap());
        assert_eq!(a[1], pp.sample(&lr, 2, &key()).unwrap());
        assert_ne!(a[0], a[1]);
        assert!(!pp.is_deterministic());
    }

    #[test]
    fn remote_upscaler_via_mock() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let mock = MockBackend::default();
            for s in listener.incoming() {
                let s = s.unwrap();
                let _ = mock.serve(&mut BufReader::new(s.try_clone().unwrap()), &mut BufWriter::new(s));
            }
        });
        let backend = Arc::new(
            Backend::connect(&Endpoint::Tcp {
                address: addr,
                timeout_secs: Some(10),
            })
            .unwrap(),
        );
        let lr = lr_probe(4);
        let u = Upscaler::Remote { backend, factor: sf(4) };
        let all = u.samples(&lr, 3, &key()).unwrap();
        assert_eq!(all[1], mock_sample(&lr, 4, 2));
        assert_eq!(u.sample(&lr, 3, &key()).unwrap(), all[2]);

        let chained = Upscaler::chain(u, Upscaler::interp(KernelKind::Nearest, sf(2)));
        assert_eq!(chained.sample(&lr, 1, &key()).unwrap().dims(), (32, 32, 3));
    }
}
