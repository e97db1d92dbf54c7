//! The scoring engine.
//!
//! For every high-resolution image `x` the downscaler under test produces
//! `lr`; the upscaler draws `N_Q` reconstructions from `lr`; each is compared
//! with `x` under the configured distortion. The score of the downscaler is
//! the mean over images of the per-image mean distortion, and its spread is
//! the population standard deviation of those per-image means.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{Degradation, DegradationSpec, SyntheticDownscaler};
use crate::error::{Error, Result};
use crate::image::{read_image, write_image, ImageId, Raster};
use crate::metrics::{mean_std, Distortion};
use crate::plugin::{run_plugin, PluginDownscaler};
use crate::resample::{downscale, dpid_downscale, KernelKind, ScaleFactor};
use crate::rng::StreamKey;
use crate::upscale::Upscaler;

type DownscaleFn = dyn Fn(&Raster) -> Result<Raster> + Send + Sync;

/// The method under evaluation.
#[derive(Clone)]
pub enum Downscaler {
    Kernel { kernel: KernelKind, factor: ScaleFactor },
    Dpid { factor: ScaleFactor, lambda: f64 },
    Synthetic(SyntheticDownscaler),
    Plugin { plugin: PluginDownscaler, factor: ScaleFactor },
    /// In-process callback, for embedding the harness in other tools.
    Custom {
        name: String,
        factor: ScaleFactor,
        func: Arc<DownscaleFn>,
    },
}

impl fmt::Debug for Downscaler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl Downscaler {
    pub fn factor(&self) -> ScaleFactor {
        match self {
            Downscaler::Kernel { factor, .. }
            | Downscaler::Dpid { factor, .. }
            | Downscaler::Plugin { factor, .. }
            | Downscaler::Custom { factor, .. } => *factor,
            Downscaler::Synthetic(s) => s.factor,
        }
    }

    pub fn with_factor(&self, factor: ScaleFactor) -> Result<Downscaler> {
        Ok(match self.clone() {
            Downscaler::Kernel { kernel, .. } => Downscaler::Kernel { kernel, factor },
            Downscaler::Dpid { lambda, .. } => Downscaler::Dpid { factor, lambda },
            Downscaler::Synthetic(mut s) => {
                s.factor = factor;
                Downscaler::Synthetic(s)
            }
            Downscaler::Plugin { plugin, .. } => Downscaler::Plugin { plugin, factor },
            Downscaler::Custom { name, .. } => {
                return Err(Error::Config(format!(
                    "custom downscaler `{name}` has a fixed factor"
                )))
            }
        })
    }

    pub fn describe(&self) -> String {
        match self {
            Downscaler::Kernel { kernel, factor } => format!("{kernel} {factor}"),
            Downscaler::Dpid { factor, lambda } => format!("dpid(lambda={lambda}) {factor}"),
            Downscaler::Synthetic(s) => format!("{} {} + {}", s.base, s.factor, s.spec.describe()),
            Downscaler::Plugin { plugin, factor } => format!("plugin `{}` {factor}", plugin.command),
            Downscaler::Custom { name, factor, .. } => format!("{name} {factor}"),
        }
    }

    /// `key` seeds stochastic degradations; it carries the image id.
    pub fn apply(&self, img: &Raster, key: &StreamKey) -> Result<Raster> {
        match self {
            Downscaler::Kernel { kernel, factor } => downscale(img, *factor, *kernel),
            Downscaler::Dpid { factor, lambda } => dpid_downscale(img, *factor, *lambda),
            Downscaler::Synthetic(s) => s.apply(img, key),
            Downscaler::Plugin { plugin, factor } => run_plugin(plugin, img, *factor),
            Downscaler::Custom { func, factor, .. } => {
                let out = func(img)?;
                let want = (factor.reduced(img.height()), factor.reduced(img.width()), img.channels());
                if out.dims() != want {
                    return Err(Error::Dimension(format!(
                        "custom downscaler produced {:?}, expected {want:?}",
                        out.dims()
                    )));
                }
                Ok(out)
            }
        }
    }
}

/// Where an image comes from. Files are decoded inside the worker.
#[derive(Clone, Debug)]
pub enum ImageSource {
    Memory(ImageId, Arc<Raster>),
    File(ImageId, PathBuf),
}

impl ImageSource {
    pub fn id(&self) -> &ImageId {
        match self {
            ImageSource::Memory(id, _) | ImageSource::File(id, _) => id,
        }
    }

    pub fn memory(id: ImageId, img: Raster) -> Self {
        ImageSource::Memory(id, Arc::new(img))
    }

    fn load(&self) -> Result<Arc<Raster>> {
        match self {
            ImageSource::Memory(_, r) => Ok(Arc::clone(r)),
            ImageSource::File(_, p) => read_image(p).map(Arc::new),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BadImagePolicy {
    #[default]
    Abort,
    Skip,
}

#[derive(Clone, Debug)]
pub struct ScoreSettings {
    pub n_q: u32,
    pub seed: u64,
    /// Worker threads; 0 means one per core. Results do not depend on it.
    pub workers: usize,
    pub on_bad_image: BadImagePolicy,
    /// Directory to write each reconstruction into, if any.
    pub keep_samples: Option<PathBuf>,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        ScoreSettings {
            n_q: 5,
            seed: 0,
            workers: 0,
            on_bad_image: BadImagePolicy::Abort,
            keep_samples: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub load: f64,
    pub downscale: f64,
    pub upscale: f64,
    pub metric: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.load + self.downscale + self.upscale + self.metric
    }

    fn add(&mut self, o: &StageTimes) {
        self.load += o.load;
        self.downscale += o.downscale;
        self.upscale += o.upscale;
        self.metric += o.metric;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// End-to-end wall clock of the scoring call, seconds.
    pub wall: f64,
    /// Stage times summed over images (CPU-side; exceeds `wall` with >1 worker).
    pub stages: StageTimes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub distortions: Vec<f64>,
    pub mean: f64,
    /// Population std over this image's samples.
    pub sample_std: f64,
    pub timing: StageTimes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub id: ImageId,
    pub error: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean over images of the per-image mean distortion.
    pub mean: f64,
    /// Population std over the per-image means.
    pub std: f64,
    /// Mean over images of the per-image sample std.
    pub sample_spread: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub downscaler: String,
    pub upscaler: String,
    pub distortion: String,
    pub factor: usize,
    pub n_q: u32,
    pub n_x: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub aggregate: Option<Aggregate>,
    pub images: Vec<ImageRecord>,
    pub skipped: Vec<SkippedImage>,
    pub timing: Timing,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// Conventions every report records.
pub fn base_metadata() -> BTreeMap<String, serde_json::Value> {
    use serde_json::json;
    let mut m = BTreeMap::new();
    m.insert("harness_version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("intensity_domain".into(), json!("[0,1] stored values, no gamma linearization"));
    m.insert("luma_weights".into(), json!(crate::image::LUMA_WEIGHTS));
    m.insert("sample_grid".into(), json!("pixel centers at (i+0.5)/n, edge clamp"));
    m.insert(
        "antialiasing".into(),
        json!("bilinear/bicubic/lanczos3 support stretched by the factor when reducing; nearest takes the block's top-left sample; box averages the block"),
    );
    m.insert("bicubic_a".into(), json!(crate::resample::BICUBIC_A));
    m.insert("lanczos_lobes".into(), json!(crate::resample::LANCZOS_LOBES));
    m.insert("dpid_guidance".into(), json!("box reduction"));
    m.insert(
        "ssim".into(),
        json!({
            "window": crate::metrics::SSIM_WINDOW,
            "sigma": crate::metrics::SSIM_SIGMA,
            "k1": crate::metrics::SSIM_K1,
            "k2": crate::metrics::SSIM_K2,
            "padding": "valid",
        }),
    );
    m.insert(
        "ms_ssim".into(),
        json!({
            "weights": crate::metrics::MS_SSIM_WEIGHTS,
            "downsample": "2x2 average",
            "small_images": "drop trailing scales, renormalize weights",
            "negative_terms": "clamped to 0",
        }),
    );
    m.insert("std".into(), json!("population, across per-image means"));
    m.insert("contrast_pivot".into(), json!(0.5));
    m.insert("quantization_value".into(), json!("bin midpoint"));
    m.insert("noise_clipping".into(), json!("clip to [0,1] after addition"));
    m.insert("blur_edges".into(), json!("clamp"));
    m.insert(
        "rng".into(),
        json!("ChaCha8 seeded with SHA-256(seed, image id, stage, sample)"),
    );
    m.insert("non_divisible_reconstruction".into(), json!("cropped to the HR size"));
    m
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn is_load_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Decode { .. } | Error::UnsupportedFormat(_) | Error::Io { .. }
    )
}

fn crop(img: Raster, h: usize, w: usize) -> Raster {
    if img.height() == h && img.width() == w {
        return img;
    }
    let ch = img.channels();
    let mut data = Vec::with_capacity(h * w * ch);
    for y in 0..h {
        let start = y * img.width() * ch;
        data.extend_from_slice(&img.data()[start..start + w * ch]);
    }
    Raster::from_clipped(h, w, ch, data)
}

enum Outcome {
    Done(ImageRecord),
    Skipped(SkippedImage),
    Failed(ImageId, Error),
}

struct Job<'a> {
    down: &'a Downscaler,
    up: &'a Upscaler,
    dist: &'a Distortion,
    settings: &'a ScoreSettings,
}

impl Job<'_> {
    fn run(&self, src: &ImageSource) -> Outcome {
        let id = src.id().clone();
        let mut t = StageTimes::default();

        let clock = Instant::now();
        let hr = match src.load() {
            Ok(hr) => hr,
            Err(e) if self.settings.on_bad_image == BadImagePolicy::Skip && is_load_error(&e) => {
                return Outcome::Skipped(SkippedImage {
                    id,
                    error: e.to_string(),
                })
            }
            Err(e) => return Outcome::Failed(id, e),
        };
        t.load = secs(clock.elapsed());

        match self.score_one(&id, &hr, &mut t) {
            Ok(distortions) => {
                let (mean, sample_std) = mean_std(&distortions).expect("n_q >= 1");
                Outcome::Done(ImageRecord {
                    id,
                    distortions,
                    mean,
                    sample_std,
                    timing: t,
                })
            }
            Err(e) => Outcome::Failed(id, e),
        }
    }

    fn score_one(&self, id: &ImageId, hr: &Raster, t: &mut StageTimes) -> Result<Vec<f64>> {
        let seed = self.settings.seed;

        let clock = Instant::now();
        let lr = self.down.apply(hr, &StreamKey::new(seed, id.as_str(), "ds"))?;
        t.downscale = secs(clock.elapsed());

        let clock = Instant::now();
        let samples = self
            .up
            .samples(&lr, self.settings.n_q, &StreamKey::new(seed, id.as_str(), "us"))?;
        let samples: Vec<Raster> = samples
            .into_iter()
            .map(|s| {
                if s.height() < hr.height() || s.width() < hr.width() || s.channels() != hr.channels() {
                    Err(Error::Dimension(format!(
                        "reconstruction {:?} cannot cover original {:?}",
                        s.dims(),
                        hr.dims()
                    )))
                } else {
                    Ok(crop(s, hr.height(), hr.width()))
                }
            })
            .collect::<Result<_>>()?;
        t.upscale = secs(clock.elapsed());

        if let Some(dir) = &self.settings.keep_samples {
            for (i, s) in samples.iter().enumerate() {
                write_image(s, dir.join(format!("{id}_{:03}.png", i + 1)))?;
            }
        }

        let clock = Instant::now();
        let d = samples
            .iter()
            .map(|s| self.dist.measure(hr, s))
            .collect::<Result<Vec<f64>>>()?;
        t.metric = secs(clock.elapsed());
        Ok(d)
    }
}

fn aggregate(images: &[ImageRecord]) -> Option<Aggregate> {
    let means: Vec<f64> = images.iter().map(|r| r.mean).collect();
    let (mean, std) = mean_std(&means).ok()?;
    let spreads: Vec<f64> = images.iter().map(|r| r.sample_std).collect();
    let (sample_spread, _) = mean_std(&spreads).ok()?;
    Some(Aggregate {
        mean,
        std,
        sample_spread,
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Runs the estimator over `images`.
///
/// On an aborting failure the partial report (images that finished) is
/// returned alongside the error so callers can flush it.
pub fn score_images(
    images: &[ImageSource],
    down: &Downscaler,
    up: &Upscaler,
    dist: &Distortion,
    settings: &ScoreSettings,
) -> std::result::Result<ScoreReport, (Error, Box<ScoreReport>)> {
    let wall = Instant::now();
    let bare = |e: Error| (e, Box::new(empty_report(down, up, dist, settings)));
    if settings.n_q == 0 {
        return Err(bare(Error::invalid("N_Q must be at least 1")));
    }
    if up.factor() != down.factor() {
        return Err(bare(Error::Config(format!(
            "upscaler factor {} does not invert downscaler factor {}",
            up.factor(),
            down.factor()
        ))));
    }
    if let Some(dir) = &settings.keep_samples {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return Err(bare(Error::io(dir, e)));
        }
    }
    let pool = thread_pool(settings.workers).map_err(bare)?;
    let job = Job {
        down,
        up,
        dist,
        settings,
    };
    let outcomes: Vec<Outcome> = pool.install(|| images.par_iter().map(|src| job.run(src)).collect());

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut failure = None;
    for o in outcomes {
        match o {
            Outcome::Done(r) => records.push(r),
            Outcome::Skipped(s) => skipped.push(s),
            Outcome::Failed(id, e) => {
                if failure.is_none() {
                    failure = Some((id, e));
                }
            }
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    skipped.sort_by(|a, b| a.id.cmp(&b.id));

    let mut stages = StageTimes::default();
    for r in &records {
        stages.add(&r.timing);
    }
    let mut report = empty_report(down, up, dist, settings);
    report.n_x = records.len();
    report.aggregate = aggregate(&records);
    report.images = records;
    report.skipped = skipped;
    report.timing = Timing {
        wall: secs(wall.elapsed()),
        stages,
    };
    match failure {
        None => Ok(report),
        Some((id, e)) => {
            report.status = RunStatus::Aborted;
            Err((
                Error::Image {
                    id: id.0,
                    source: Box::new(e),
                },
                Box::new(report),
            ))
        }
    }
}

fn empty_report(down: &Downscaler, up: &Upscaler, dist: &Distortion, settings: &ScoreSettings) -> ScoreReport {
    let mut metadata = base_metadata();
    metadata.insert("workers".into(), serde_json::json!(settings.workers));
    if let Distortion::Remote { backend, .. } = dist {
        metadata.insert("metric_backend".into(), serde_json::to_value(backend.capabilities()).unwrap_or_default());
    }
    if let Upscaler::Remote { backend, .. } = up {
        metadata.insert("upscale_backend".into(), serde_json::to_value(backend.capabilities()).unwrap_or_default());
    }
    if let Upscaler::Chain(..) = up {
        metadata.insert("upscaler_chain".into(), serde_json::json!(chain_stages(up)));
    }
    ScoreReport {
        downscaler: down.describe(),
        upscaler: up.describe(),
        distortion: dist.describe(),
        factor: down.factor().get(),
        n_q: settings.n_q,
        n_x: 0,
        seed: settings.seed,
        status: RunStatus::Complete,
        aggregate: None,
        images: Vec::new(),
        skipped: Vec::new(),
        timing: Timing::default(),
        metadata,
    }
}

/// Stage factors of a (possibly nested) chain, in application order.
pub fn chain_stages(up: &Upscaler) -> Vec<usize> {
    match up {
        Upscaler::Chain(a, b) => {
            let mut v = chain_stages(a);
            v.extend(chain_stages(b));
            v
        }
        other => vec![other.factor().get()],
    }
}

impl ScoreReport {
    pub fn score(&self) -> Option<f64> {
        self.aggregate.map(|a| a.mean)
    }

    /// Writes `report.json` and `samples.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        let path = dir.join("report.json");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("samples.csv");
        std::fs::write(&path, self.samples_csv()).map_err(|e| Error::io(&path, e))
    }

    /// `image_id,sample_index,distortion`, distortions in shortest round-trip form.
    pub fn samples_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "sample_index", "distortion"]).expect("csv");
        for r in &self.images {
            for (i, d) in r.distortions.iter().enumerate() {
                w.write_record([r.id.as_str(), &(i + 1).to_string(), &d.to_string()])
                    .expect("csv");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SampleRow {
    pub image_id: String,
    pub sample_index: u32,
    pub distortion: f64,
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<SampleRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::invalid(format!("{}: {e}", path.display()))))
        .collect()
}

/// Rebuilds the aggregate from persisted per-sample rows.
pub fn aggregate_from_samples(rows: &[SampleRow]) -> Result<Option<Aggregate>> {
    let mut by_image: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    for r in rows {
        if !(r.distortion >= 0.0) {
            return Err(Error::invalid(format!(
                "negative distortion for {} sample {}",
                r.image_id, r.sample_index
            )));
        }
        by_image.entry(&r.image_id).or_default().push((r.sample_index, r.distortion));
    }
    let records: Vec<ImageRecord> = by_image
        .into_iter()
        .map(|(id, mut s)| {
            s.sort_by_key(|x| x.0);
            let d: Vec<f64> = s.into_iter().map(|x| x.1).collect();
            let (mean, sample_std) = mean_std(&d)?;
            Ok(ImageRecord {
                id: ImageId::new(id),
                distortions: d,
                mean,
                sample_std,
                timing: StageTimes::default(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(&records))
}

/// Per-stage timing table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub n_x: usize,
    pub wall: f64,
    pub total: StageTimes,
    pub per_image: StageTimes,
    pub stage_sum: f64,
}

pub fn timing_report(report: &ScoreReport) -> TimingTable {
    let n = report.images.len();
    let total = report.timing.stages;
    let per = |v: f64| if n == 0 { 0.0 } else { v / n as f64 };
    TimingTable {
        n_x: n,
        wall: report.timing.wall,
        total,
        per_image: StageTimes {
            load: per(total.load),
            downscale: per(total.downscale),
            upscale: per(total.upscale),
            metric: per(total.metric),
        },
        stage_sum: total.total(),
    }
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "spearman inputs differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("spearman needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::invalid("spearman input contains NaN"));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the series is constant".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Degradation families with a single scalar level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFamily {
    #[serde(alias = "blur")]
    GaussBlur,
    #[serde(alias = "noise")]
    GaussNoise,
    #[serde(alias = "contrast_inc", alias = "contrast_dec")]
    Contrast,
    #[serde(alias = "quantization", alias = "quantize")]
    QuantizeOtsu,
}

impl SweepFamily {
    pub fn degradation(self, level: f64) -> Result<Degradation> {
        let d = match self {
            SweepFamily::GaussBlur => Degradation::blur(level),
            SweepFamily::GaussNoise => Degradation::noise(level),
            SweepFamily::Contrast => Degradation::contrast(level),
            SweepFamily::QuantizeOtsu => {
                if level.fract() != 0.0 || level < 1.0 {
                    return Err(Error::invalid(format!("threshold count must be a positive integer, got {level}")));
                }
                Degradation::quantize(level as usize)
            }
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub level: f64,
    pub report: ScoreReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub family: String,
    pub points: Vec<SweepPoint>,
    /// Spearman correlation between level values and scores; `None` when
    /// either series is constant (see `rho_note`).
    pub rho: Option<f64>,
    pub rho_note: Option<String>,
}

impl SweepResult {
    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.report.score()).collect()
    }

    pub fn levels(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.level).collect()
    }

    fn finish(family: String, points: Vec<SweepPoint>) -> SweepResult {
        let levels: Vec<f64> = points.iter().map(|p| p.level).collect();
        let scores: Vec<f64> = points.iter().filter_map(|p| p.report.score()).collect();
        let (rho, rho_note) = if scores.len() != levels.len() {
            (None, Some("some levels produced no score".to_string()))
        } else {
            match spearman(&levels, &scores) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        SweepResult {
            family,
            points,
            rho,
            rho_note,
        }
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.len() < 2 {
        return Err(Error::invalid("a sweep needs at least two levels"));
    }
    let up = levels.windows(2).all(|w| w[0] <= w[1]);
    let down = levels.windows(2).all(|w| w[0] >= w[1]);
    if !(up || down) {
        return Err(Error::invalid(format!("sweep levels must be ordered, got {levels:?}")));
    }
    Ok(())
}

fn abort(pair: (Error, Box<ScoreReport>)) -> Error {
    pair.0
}

/// Scores `base` with `family(level)` appended to its degradations, per level.
///
/// `base` must be a kernel or synthetic downscaler. Levels must be ordered;
/// repeated levels are allowed and make `rho` undefined.
pub fn sweep(
    images: &[ImageSource],
    base: &Downscaler,
    up: &Upscaler,
    dist: &Distortion,
    settings: &ScoreSettings,
    family: SweepFamily,
    levels: &[f64],
) -> Result<SweepResult> {
    check_levels(levels)?;
    let synthetic = match base {
        Downscaler::Kernel { kernel, factor } => SyntheticDownscaler::new(*kernel, *factor, DegradationSpec::identity()),
        Downscaler::Synthetic(s) => s.clone(),
        other => {
            return Err(Error::Config(format!(
                "degradation sweeps need a kernel base downscaler, got {}",
                other.describe()
            )))
        }
    };
    let mut points = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut s = synthetic.clone();
        s.spec.ops.push(family.degradation(level)?);
        let report = score_images(images, &Downscaler::Synthetic(s), up, dist, settings).map_err(abort)?;
        points.push(SweepPoint { level, report });
    }
    let name = serde_json::to_value(family).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    Ok(SweepResult::finish(name, points))
}

/// Scores `base` at each factor, with an upscaler built per factor.
pub fn scale_sweep(
    images: &[ImageSource],
    base: &Downscaler,
    upscaler_for: impl Fn(ScaleFactor) -> Result<Upscaler>,
    dist: &Distortion,
    settings: &ScoreSettings,
    factors: &[usize],
) -> Result<SweepResult> {
    let levels: Vec<f64> = factors.iter().map(|&f| f as f64).collect();
    check_levels(&levels)?;
    let mut points = Vec::with_capacity(factors.len());
    for &f in factors {
        let factor = ScaleFactor::new(f)?;
        let down = base.with_factor(factor)?;
        let up = upscaler_for(factor)?;
        let report = score_images(images, &down, &up, dist, settings).map_err(abort)?;
        points.push(SweepPoint {
            level: f as f64,
            report,
        });
    }
    Ok(SweepResult::finish("scale_factor".into(), points))
}
