//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs at desk scale: 30 synthetic probes at 256x256, factor 8, the built-in
//! perturbed upscaler (tau = 0.02), D = 1 - MS-SSIM, fixed seeds.

use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use idard::datatools::{
    balance_subset, joint_entropy, random_subset, synthetic_labeled_manifest, CellTable, N_CELLS,
};
use idard::degrade::{otsu_thresholds, Degradation, DegradationOrder, DegradationSpec, SyntheticDownscaler};
use idard::image::{decode, encode, ImageFormat};
use idard::metrics::{mse_psnr, ssim, Distortion};
use idard::pipeline::{score_images, spearman, sweep, Downscaler, ImageSource, ScoreSettings, SweepFamily, SweepResult};
use idard::plugin::{run_plugin, PluginDownscaler};
use idard::protocol::{Backend, Frame, MAGIC, VERSION};
use idard::resample::{downscale, KernelKind, ScaleFactor};
use idard::synth::natural_probes;
use idard::upscale::Upscaler;
use idard::{Error, ImageId, Raster};

const SEED: u64 = 2024;
const N_X: usize = 30;
const HR: usize = 256;
const FACTOR: usize = 8;
const TAU: f64 = 0.02;
const SWEEP_BUDGET: Duration = Duration::from_secs(180);

type Outcome = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}  [{secs:.1}s]  {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {name}  [{secs:.1}s]  {detail}");
            }
        }
    }
}

fn sf(s: usize) -> ScaleFactor {
    ScaleFactor::new(s).unwrap()
}

fn probes() -> Vec<ImageSource> {
    natural_probes(SEED, N_X, HR)
        .into_iter()
        .map(|(id, r)| ImageSource::memory(id, r))
        .collect()
}

fn settings(n_q: u32, workers: usize) -> ScoreSettings {
    ScoreSettings {
        n_q,
        seed: SEED,
        workers,
        ..Default::default()
    }
}

fn upscaler(factor: usize) -> Upscaler {
    Upscaler::perturbed(KernelKind::Bicubic, sf(factor), TAU)
}

fn base(order: DegradationOrder) -> Downscaler {
    Downscaler::Synthetic(SyntheticDownscaler::bicubic(
        sf(FACTOR),
        DegradationSpec::identity().with_order(order),
    ))
}

fn synthetic(ops: Vec<Degradation>, factor: usize) -> Downscaler {
    Downscaler::Synthetic(SyntheticDownscaler::bicubic(sf(factor), DegradationSpec::after(ops)))
}

fn score(images: &[ImageSource], down: &Downscaler, up: &Upscaler, n_q: u32) -> Result<f64, String> {
    let r = score_images(images, down, up, &Distortion::OneMinusMsSsim, &settings(n_q, 0)).map_err(|(e, _)| e.to_string())?;
    r.score().ok_or_else(|| "no score".to_string())
}

struct Family {
    label: &'static str,
    family: SweepFamily,
    levels: [f64; 3],
    rho: f64,
}

const FAMILIES: [Family; 5] = [
    Family { label: "blur", family: SweepFamily::GaussBlur, levels: [1.0, 2.0, 4.0], rho: 1.0 },
    Family { label: "noise", family: SweepFamily::GaussNoise, levels: [0.05, 0.1, 0.2], rho: 1.0 },
    Family { label: "contrast_inc", family: SweepFamily::Contrast, levels: [1.5, 2.0, 2.5], rho: 1.0 },
    Family { label: "contrast_dec", family: SweepFamily::Contrast, levels: [0.75, 0.5, 0.25], rho: -1.0 },
    Family { label: "quantize", family: SweepFamily::QuantizeOtsu, levels: [15.0, 10.0, 5.0], rho: -1.0 },
];

fn run_sweep(images: &[ImageSource], f: &Family, order: DegradationOrder, workers: usize) -> Result<(SweepResult, Duration), String> {
    let start = Instant::now();
    let r = sweep(
        images,
        &base(order),
        &upscaler(FACTOR),
        &Distortion::OneMinusMsSsim,
        &settings(5, workers),
        f.family,
        &f.levels,
    )
    .map_err(|e| e.to_string())?;
    Ok((r, start.elapsed()))
}

fn fmt_scores(s: &[f64]) -> String {
    s.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(" < ")
}

fn monotonicity(images: &[ImageSource], order: DegradationOrder) -> Outcome {
    let mut lines = Vec::new();
    let mut bad = Vec::new();
    for f in &FAMILIES {
        let (r, took) = run_sweep(images, f, order, 0)?;
        let scores = r.scores();
        let line = format!(
            "{}: rho={:?} S=[{}] {:.1}s",
            f.label,
            r.rho,
            scores.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(", "),
            took.as_secs_f64()
        );
        if r.rho != Some(f.rho) || took > SWEEP_BUDGET {
            bad.push(line.clone());
        }
        lines.push(line);
    }
    if bad.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("expected rho signs not met: {}", bad.join("; ")))
    }
}

fn mixed_stacking(images: &[ImageSource]) -> Outcome {
    let steps = [
        vec![Degradation::blur(1.0)],
        vec![Degradation::blur(1.0), Degradation::noise(0.05)],
        vec![Degradation::blur(1.0), Degradation::noise(0.05), Degradation::contrast(0.75)],
        vec![
            Degradation::blur(1.0),
            Degradation::noise(0.05),
            Degradation::contrast(0.75),
            Degradation::quantize(10),
        ],
    ];
    let up = upscaler(FACTOR);
    let scores = steps
        .into_iter()
        .map(|ops| score(images, &synthetic(ops, FACTOR), &up, 5))
        .collect::<Result<Vec<f64>, String>>()?;
    if scores.windows(2).all(|w| w[0] < w[1]) {
        Ok(fmt_scores(&scores))
    } else {
        Err(format!("not strictly increasing: {scores:?}"))
    }
}

fn scale_monotonicity(images: &[ImageSource]) -> Outcome {
    let chain32 = Upscaler::chain(upscaler(8), upscaler(4));
    let mut parts = Vec::new();
    for (name, ops) in [("bicubic", vec![]), ("blur1", vec![Degradation::blur(1.0)])] {
        let s4 = score(images, &synthetic(ops.clone(), 4), &upscaler(4), 5)?;
        let s8 = score(images, &synthetic(ops.clone(), 8), &upscaler(8), 5)?;
        let s32 = score(images, &synthetic(ops, 32), &chain32, 5)?;
        let line = format!("{name}: S4={s4:.5} S8={s8:.5} S32(chain 8x4)={s32:.5}");
        if !(s8 > s4 && s32 > s8 && s32 > s4) {
            return Err(line);
        }
        parts.push(line);
    }
    Ok(parts.join("; "))
}

fn gaussian_window() -> Vec<f64> {
    let mut w = vec![0.0; 121];
    let mut total = 0.0;
    for y in 0..11 {
        for x in 0..11 {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            let v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            w[y * 11 + x] = v;
            total += v;
        }
    }
    w.iter().map(|v| v / total).collect()
}

// Direct per-window evaluation with the 2-D Gaussian, channel-averaged.
fn naive_ssim(a: &Raster, b: &Raster) -> f64 {
    let (h, w, ch) = a.dims();
    let win = gaussian_window();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for c in 0..ch {
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let g = win[dy * 11 + dx];
                        ma += g * a.get(y0 + dy, x0 + dx, c) as f64;
                        mb += g * b.get(y0 + dy, x0 + dx, c) as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let g = win[dy * 11 + dx];
                        let pa = a.get(y0 + dy, x0 + dx, c) as f64 - ma;
                        let pb = b.get(y0 + dy, x0 + dx, c) as f64 - mb;
                        va += g * pa * pa;
                        vb += g * pb * pb;
                        cov += g * pa * pb;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / ch as f64
}

fn random_raster(rng: &mut ChaCha8Rng, h: usize, w: usize, ch: usize) -> Raster {
    let data = (0..h * w * ch).map(|_| rng.random::<f32>()).collect();
    Raster::new(h, w, ch, data).unwrap()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let ch = if i % 4 == 0 { 3 } else { 1 };
        let a = random_raster(&mut rng, 32, 32, ch);
        // Correlated partner so SSIM spans a useful range.
        let mix = rng.random::<f32>();
        let noise = random_raster(&mut rng, 32, 32, ch);
        let data = a.data().iter().zip(noise.data()).map(|(x, n)| mix * x + (1.0 - mix) * n).collect();
        let b = Raster::new(32, 32, ch, data).unwrap();
        let got = ssim(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - naive_ssim(&a, &b)).abs());
    }
    if worst > 1e-6 {
        return Err(format!("SSIM vs naive oracle max error {worst:e}"));
    }

    let zeros = Raster::filled(16, 16, 1, 0.0).unwrap();
    let half = Raster::filled(16, 16, 1, 0.5).unwrap();
    let (mse, p1) = mse_psnr(&zeros, &half).unwrap();
    let a = Raster::filled(16, 16, 3, 0.3).unwrap();
    let b = Raster::filled(16, 16, 3, 0.4).unwrap();
    let (_, p2) = mse_psnr(&a, &b).unwrap();
    let (_, p3) = mse_psnr(&a, &a).unwrap();
    if (mse - 0.25).abs() > 1e-12 || (p1 - 6.0206).abs() > 1e-3 || (p2 - 20.0).abs() > 1e-3 || p3 != f64::INFINITY {
        return Err(format!("PSNR cases: mse={mse} psnr={p1} {p2} {p3}"));
    }

    let quarter = Raster::filled(32, 32, 1, 0.25).unwrap();
    let half = Raster::filled(32, 32, 1, 0.5).unwrap();
    let c = ssim(&half, &quarter).unwrap();
    let closed = (2.0 * 0.125 + 1e-4) / (0.3125 + 1e-4);
    if (c - 0.8001).abs() > 1e-3 || (c - closed).abs() > 1e-6 {
        return Err(format!("constant SSIM {c}"));
    }

    let cases = [
        (spearman(&[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3]), 1.0),
        (spearman(&[1.0, 2.0, 3.0], &[0.3, 0.2, 0.1]), -1.0),
        (spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]), -0.5),
    ];
    for (got, want) in cases {
        if got.as_ref().ok() != Some(&want) {
            return Err(format!("spearman {got:?} != {want}"));
        }
    }
    Ok(format!(
        "SSIM max |err| {worst:.2e} over 100 pairs; PSNR {p1:.4}/{p2:.4} dB; constant SSIM {c:.4}; spearman -0.5/+1/-1 exact"
    ))
}

fn between_class_variance(hist: &[u64; 256], thresholds: &[usize]) -> f64 {
    let total: f64 = hist.iter().map(|&c| c as f64).sum();
    let mu_t: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum::<f64>() / total;
    let mut bounds = vec![0usize];
    bounds.extend(thresholds.iter().map(|t| t + 1));
    bounds.push(256);
    let mut v = 0.0;
    for k in 0..bounds.len() - 1 {
        let range = bounds[k]..bounds[k + 1];
        let w: f64 = hist[range.clone()].iter().map(|&c| c as f64).sum();
        if w == 0.0 {
            continue;
        }
        let mu = range.map(|i| i as f64 * hist[i] as f64).sum::<f64>() / w;
        v += (w / total) * (mu - mu_t).powi(2);
    }
    v
}

fn otsu_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x0750);
    let mut checked = 0;
    for case in 0..50 {
        let mut hist = [0u64; 256];
        // Mixtures of a few bumps, plus sparse and flat cases.
        let bumps = 1 + case % 4;
        for _ in 0..bumps {
            let center = rng.random_range(0..256) as f64;
            let width = rng.random_range(2.0..40.0);
            let mass = rng.random_range(100.0..5000.0);
            for (i, h) in hist.iter_mut().enumerate() {
                let d = (i as f64 - center) / width;
                *h += (mass * (-0.5 * d * d).exp()) as u64;
            }
        }
        for h in hist.iter_mut() {
            *h += rng.random_range(0..3);
        }
        for n in [1usize, 2] {
            let got = otsu_thresholds(&hist, n).map_err(|e| e.to_string())?;
            let mut best = (f64::NEG_INFINITY, Vec::new());
            if n == 1 {
                for t in 0..255 {
                    let v = between_class_variance(&hist, &[t]);
                    if v > best.0 {
                        best = (v, vec![t]);
                    }
                }
            } else {
                for t2 in 1..255 {
                    for t1 in 0..t2 {
                        let v = between_class_variance(&hist, &[t1, t2]);
                        if v > best.0 {
                            best = (v, vec![t1, t2]);
                        }
                    }
                }
            }
            if got != best.1 {
                let gv = between_class_variance(&hist, &got);
                return Err(format!("case {case} n={n}: got {got:?} ({gv}), exhaustive {:?} ({})", best.1, best.0));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} threshold sets equal the exhaustive argmax"))
}

fn entropy_and_balance() -> Outcome {
    let uniform = synthetic_labeled_manifest(&[5; N_CELLS]);
    let h = joint_entropy(&CellTable::from_manifest(&uniform)).map_err(|e| e.to_string())?;
    if (h - 4.5850).abs() > 1e-4 {
        return Err(format!("uniform entropy {h}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut per_cell = [0usize; N_CELLS];
    for c in per_cell.iter_mut() {
        *c = rng.random_range(3..60);
    }
    let skewed = synthetic_labeled_manifest(&per_cell);
    let mut wins = 0;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..20 {
        let balanced = balance_subset(&skewed, 120, seed).map_err(|e| e.to_string())?;
        let hb = joint_entropy(&CellTable::from_manifest(&balanced.manifest)).map_err(|e| e.to_string())?;
        let hr = joint_entropy(&CellTable::from_manifest(&random_subset(&skewed, 120, seed))).map_err(|e| e.to_string())?;
        if hb >= hr {
            wins += 1;
        }
        worst_margin = worst_margin.min(hb - hr);
    }
    if wins != 20 {
        return Err(format!("balancer beat random on {wins}/20 seeds"));
    }
    Ok(format!("uniform-24 entropy {h:.4}; balancer >= random on 20/20 seeds (min margin {worst_margin:.4} bits)"))
}

fn determinism(images: &[ImageSource]) -> Outcome {
    let (a, _) = run_sweep(images, &FAMILIES[0], DegradationOrder::AfterDownscale, 1)?;
    let (b, _) = run_sweep(images, &FAMILIES[0], DegradationOrder::AfterDownscale, 4)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for (i, (pa, pb)) in a.points.iter().zip(&b.points).enumerate() {
        let (da, db) = (dir.path().join(format!("w1_{i}")), dir.path().join(format!("w4_{i}")));
        pa.report.write_dir(&da).map_err(|e| e.to_string())?;
        pb.report.write_dir(&db).map_err(|e| e.to_string())?;
        let ca = std::fs::read(da.join("samples.csv")).map_err(|e| e.to_string())?;
        let cb = std::fs::read(db.join("samples.csv")).map_err(|e| e.to_string())?;
        if ca != cb {
            return Err(format!("level {} samples.csv differs between 1 and 4 workers", pa.level));
        }
        bytes += ca.len();
    }
    Ok(format!("blur sweep samples.csv byte-identical for 1 vs 4 workers ({bytes} bytes over 3 levels)"))
}

fn nq_stability(images: &[ImageSource]) -> Outcome {
    let down = synthetic(vec![Degradation::blur(1.0)], FACTOR);
    let up = upscaler(FACTOR);
    let run = |n_q| {
        score_images(images, &down, &up, &Distortion::OneMinusMsSsim, &settings(n_q, 0))
            .map_err(|(e, _)| e.to_string())
    };
    let r5 = run(5)?;
    let r15 = run(15)?;
    let (a5, a15) = (r5.aggregate.unwrap(), r15.aggregate.unwrap());
    let diff = (a5.mean - a15.mean).abs();
    let bound = 2.0 * a5.sample_spread;
    let line = format!("|S5 - S15| = {diff:.2e} <= 2 x spread = {bound:.2e} (S5={:.5}, S15={:.5})", a5.mean, a15.mean);
    if diff <= bound {
        Ok(line)
    } else {
        Err(line)
    }
}

fn fuzz_frame(rng: &mut ChaCha8Rng) -> Vec<u8> {
    match rng.random_range(0..4) {
        // Raw garbage.
        0 => {
            let mut v = vec![0u8; rng.random_range(0..64)];
            rng.fill_bytes(&mut v);
            v
        }
        // Valid magic, random rest.
        1 => {
            let mut v = MAGIC.to_vec();
            let mut rest = vec![0u8; rng.random_range(0..64)];
            rng.fill_bytes(&mut rest);
            v.extend(rest);
            v
        }
        // Well-formed header, any kind, random payload of the declared length
        // (sometimes truncated).
        _ => {
            let kind: u16 = rng.random_range(1..=6);
            let len: u32 = rng.random_range(0..96);
            let mut v = MAGIC.to_vec();
            v.extend(VERSION.to_le_bytes());
            v.extend(kind.to_le_bytes());
            v.extend(len.to_le_bytes());
            let mut payload = vec![0u8; len as usize];
            rng.fill_bytes(&mut payload);
            if rng.random_bool(0.2) {
                payload.truncate(rng.random_range(0..=len as usize));
            }
            v.extend(payload);
            v
        }
    }
}

fn decode_any(frame: &Frame) -> bool {
    use idard::protocol::*;
    match frame.kind {
        FrameKind::Hello => Hello::decode(frame).is_err(),
        FrameKind::UpscaleReq => UpscaleRequest::decode(frame).is_err(),
        FrameKind::UpscaleResp => decode_upscale_response(frame).is_err(),
        FrameKind::MetricReq => MetricRequest::decode(frame).is_err(),
        FrameKind::MetricResp => decode_metric_response(frame).is_err(),
        FrameKind::Error => decode_error(frame).is_err(),
    }
}

fn protocol_and_plugin() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut crashes = 0;
    let mut unclassified = Vec::new();
    let mut payload_accepted = 0;
    for i in 0..10_000 {
        let bytes = fuzz_frame(&mut rng);
        let res = catch_unwind(|| {
            // Client handshake reading the fuzz bytes as the server's reply.
            let backend = Backend::from_streams("fuzz", Cursor::new(bytes.clone()), std::io::sink());
            let classified = matches!(backend, Err(Error::Backend { .. }));
            // Frame-level parse plus payload decoders must not panic either.
            if let Ok(f) = Frame::read_from(&mut Cursor::new(&bytes)) {
                let _ = decode_any(&f);
            }
            classified
        });
        match res {
            Err(_) => crashes += 1,
            Ok(false) => unclassified.push(i),
            Ok(true) => {}
        }
        if let Ok(f) = Frame::read_from(&mut Cursor::new(&bytes)) {
            if !decode_any(&f) {
                payload_accepted += 1;
            }
        }
    }
    if crashes > 0 || !unclassified.is_empty() {
        return Err(format!("{crashes} crashes, unclassified frames {:?}", &unclassified[..unclassified.len().min(10)]));
    }

    // Self-hosting: the harness's own CLI as an external plugin.
    let bin = env!("CARGO_BIN_EXE_idard");
    let plugin = PluginDownscaler::new(format!("'{bin}' downscale --method box --factor {{factor}} {{in}} {{out}}"));
    let images: Vec<(ImageId, Raster)> = natural_probes(SEED, 3, 64)
        .into_iter()
        .map(|(id, r)| (id, decode(&encode(&r, ImageFormat::Png)).unwrap()))
        .collect();
    let via_png = |r: &Raster| decode(&encode(r, ImageFormat::Png)).unwrap();
    for (id, img) in &images {
        let got = run_plugin(&plugin, img, sf(4)).map_err(|e| e.to_string())?;
        let want = via_png(&downscale(img, sf(4), KernelKind::Box).unwrap());
        if got != want {
            return Err(format!("plugin output for {id} differs from in-process box"));
        }
    }
    let sources: Vec<ImageSource> = images.into_iter().map(|(id, r)| ImageSource::memory(id, r)).collect();
    let builtin = Downscaler::Custom {
        name: "box".into(),
        factor: sf(4),
        func: Arc::new(move |r: &Raster| Ok(via_png(&downscale(r, sf(4), KernelKind::Box)?))),
    };
    let plug = Downscaler::Plugin { plugin, factor: sf(4) };
    let up = upscaler(4);
    let s = settings(3, 0);
    let a = score_images(&sources, &builtin, &up, &Distortion::OneMinusMsSsim, &s).map_err(|(e, _)| e.to_string())?;
    let b = score_images(&sources, &plug, &up, &Distortion::OneMinusMsSsim, &s).map_err(|(e, _)| e.to_string())?;
    if a.samples_csv() != b.samples_csv() {
        return Err("plugin scoring path differs from built-in".into());
    }
    Ok(format!(
        "10000 fuzz frames: 0 crashes, all rejected ({payload_accepted} payloads happened to decode but failed the handshake); plugin self-hosting bit-exact"
    ))
}

fn main() {
    let images = probes();
    let mut suite = Suite { failures: 0 };
    suite.check("degradation monotonicity", || monotonicity(&images, DegradationOrder::AfterDownscale));
    suite.check("mixed-degradation stacking", || mixed_stacking(&images));
    suite.check("scale-factor monotonicity", || scale_monotonicity(&images));
    suite.check("order variant (before downscale)", || monotonicity(&images, DegradationOrder::BeforeDownscale));
    suite.check("metric oracles", metric_oracles);
    suite.check("otsu oracle", otsu_oracle);
    suite.check("joint entropy and balancing", entropy_and_balance);
    suite.check("determinism across worker counts", || determinism(&images));
    suite.check("N_Q stability", || nq_stability(&images));
    suite.check("protocol robustness and plugin self-hosting", protocol_and_plugin);
    println!("{} criteria failed", suite.failures);
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
