//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! n_q = 5
//! n_x = 30
//!
//! [dataset.synthetic]
//! count = 30
//! size = 256
//!
//! [downscale]
//! method = "bicubic"
//! factor = 8
//! [[downscale.degrade]]
//! op = "gauss_blur"
//! sigma = 1.0
//!
//! [upscale]
//! kind = "perturbed"
//! tau = 0.02
//!
//! [distortion]
//! kind = "one_minus_msssim"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datatools::Manifest;
use crate::degrade::{Degradation, DegradationOrder, DegradationSpec, SyntheticDownscaler};
use crate::error::{Error, Result};
use crate::metrics::{Distortion, DistortionKind};
use crate::pipeline::{
    score_images, BadImagePolicy, Downscaler, ImageSource, ScoreReport, ScoreSettings, SweepFamily,
};
use crate::plugin::{PluginDownscaler, DEFAULT_TIMEOUT_SECS};
use crate::protocol::{Backend, Endpoint};
use crate::resample::{KernelKind, ScaleFactor, DPID_DEFAULT_LAMBDA};
use crate::synth::natural_probes;
use crate::upscale::{Upscaler, DEFAULT_TAU};

fn default_n_q() -> u32 {
    5
}

fn default_factor() -> usize {
    8
}

fn default_kernel() -> KernelKind {
    KernelKind::Bicubic
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_n_q")]
    pub n_q: u32,
    /// Cap on the number of images scored; defaults to all of them.
    #[serde(default)]
    pub n_x: Option<usize>,
    #[serde(default)]
    pub on_bad_image: BadImagePolicy,
    pub dataset: DatasetConfig,
    pub downscale: OneOrMany<DownscaleConfig>,
    #[serde(default)]
    pub upscale: UpscaleConfig,
    #[serde(default)]
    pub distortion: DistortionConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub scale_sweep: Option<ScaleSweepConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    pub fn as_slice(&self) -> &[T] {
        match self {
            OneOrMany::One(t) => std::slice::from_ref(t),
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: Option<PathBuf>,
    pub synthetic: Option<SyntheticDataset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    pub count: usize,
    #[serde(default = "default_probe_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_probe_size() -> usize {
    256
}

/// `method` is a kernel name, `dpid` or `plugin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownscaleConfig {
    pub method: String,
    #[serde(default = "default_factor")]
    pub factor: usize,
    pub lambda: Option<f64>,
    pub command: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub order: DegradationOrder,
    #[serde(default)]
    pub degrade: Vec<Degradation>,
    pub label: Option<String>,
}

impl DownscaleConfig {
    pub fn kernel(method: KernelKind, factor: usize) -> Self {
        DownscaleConfig {
            method: method.name().into(),
            factor,
            lambda: None,
            command: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            order: DegradationOrder::AfterDownscale,
            degrade: Vec::new(),
            label: None,
        }
    }

    pub fn build(&self) -> Result<Downscaler> {
        let factor = ScaleFactor::new(self.factor)?;
        let only_kernel = |what: &str| {
            Error::Config(format!("`{what}` only applies to kernel downscalers, not `{}`", self.method))
        };
        match self.method.as_str() {
            "dpid" => {
                if !self.degrade.is_empty() {
                    return Err(only_kernel("degrade"));
                }
                let lambda = self.lambda.unwrap_or(DPID_DEFAULT_LAMBDA);
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(Error::Config(format!("dpid lambda must be >= 0, got {lambda}")));
                }
                Ok(Downscaler::Dpid { factor, lambda })
            }
            "plugin" => {
                if !self.degrade.is_empty() {
                    return Err(only_kernel("degrade"));
                }
                let command = self
                    .command
                    .clone()
                    .ok_or_else(|| Error::Config("plugin downscaler needs `command`".into()))?;
                Ok(Downscaler::Plugin {
                    plugin: PluginDownscaler::new(command).with_timeout(self.timeout_secs),
                    factor,
                })
            }
            name => {
                let kernel: KernelKind = name
                    .parse()
                    .map_err(|_| Error::Config(format!("unknown downscale method `{name}`")))?;
                if self.lambda.is_some() {
                    return Err(Error::Config("`lambda` only applies to dpid".into()));
                }
                if self.degrade.is_empty() && self.order == DegradationOrder::AfterDownscale {
                    return Ok(Downscaler::Kernel { kernel, factor });
                }
                let spec = DegradationSpec {
                    ops: self.degrade.clone(),
                    order: self.order,
                };
                spec.validate().map_err(|e| Error::Config(e.to_string()))?;
                Ok(Downscaler::Synthetic(SyntheticDownscaler::new(kernel, factor, spec)))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpscaleKind {
    Interp,
    #[default]
    Perturbed,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpscaleConfig {
    #[serde(default)]
    pub kind: UpscaleKind,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Stage factors to compose larger factors from, e.g. `[8, 4]` for 32x.
    /// Remote backends default to their declared factors.
    pub factors: Option<Vec<usize>>,
    pub endpoint: Option<String>,
}

impl Default for UpscaleConfig {
    fn default() -> Self {
        UpscaleConfig {
            kind: UpscaleKind::Perturbed,
            kernel: KernelKind::Bicubic,
            tau: DEFAULT_TAU,
            factors: None,
            endpoint: None,
        }
    }
}

/// Splits `target` into a product of `stages`, fewest stages first, larger
/// stages earlier. `None` when impossible.
pub fn decompose_factor(target: usize, stages: &[usize]) -> Option<Vec<usize>> {
    if target == 0 {
        return None;
    }
    let mut avail: Vec<usize> = stages.iter().copied().filter(|&s| s >= 2).collect();
    avail.sort_unstable_by(|a, b| b.cmp(a));
    avail.dedup();
    if target == 1 {
        return stages.contains(&1).then(|| vec![1]);
    }
    fn dfs(rest: usize, avail: &[usize], depth: usize, path: &mut Vec<usize>) -> bool {
        if rest == 1 {
            return true;
        }
        if depth == 0 {
            return false;
        }
        for &s in avail {
            if rest % s == 0 {
                path.push(s);
                if dfs(rest / s, avail, depth - 1, path) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    let max_depth = usize::BITS as usize;
    (1..=max_depth).find_map(|depth| {
        let mut path = Vec::new();
        dfs(target, &avail, depth, &mut path).then_some(path)
    })
}

/// Resolves an upscale config against a live backend, once.
pub struct UpscalerFactory {
    cfg: UpscaleConfig,
    backend: Option<Arc<Backend>>,
}

impl UpscalerFactory {
    pub fn new(cfg: &UpscaleConfig) -> Result<Self> {
        if !(cfg.tau.is_finite() && cfg.tau >= 0.0) {
            return Err(Error::Config(format!("tau must be >= 0, got {}", cfg.tau)));
        }
        let backend = match cfg.kind {
            UpscaleKind::Remote => {
                let ep = cfg
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("remote upscaler needs `endpoint`".into()))?;
                Some(Arc::new(Backend::connect(&Endpoint::parse(ep)?)?))
            }
            _ => None,
        };
        Ok(UpscalerFactory {
            cfg: cfg.clone(),
            backend,
        })
    }

    fn stage(&self, factor: usize) -> Result<Upscaler> {
        let f = ScaleFactor::new(factor)?;
        Ok(match self.cfg.kind {
            UpscaleKind::Interp => Upscaler::interp(self.cfg.kernel, f),
            UpscaleKind::Perturbed => Upscaler::perturbed(self.cfg.kernel, f, self.cfg.tau),
            UpscaleKind::Remote => Upscaler::Remote {
                backend: Arc::clone(self.backend.as_ref().expect("connected")),
                factor: f,
            },
        })
    }

    pub fn build(&self, factor: ScaleFactor) -> Result<Upscaler> {
        let stages = match (&self.cfg.factors, &self.backend) {
            (Some(list), _) => Some(list.clone()),
            (None, Some(b)) => Some(b.capabilities().factors.iter().map(|&f| f as usize).collect()),
            (None, None) => None,
        };
        let plan = match stages {
            None => vec![factor.get()],
            Some(list) => decompose_factor(factor.get(), &list).ok_or_else(|| {
                Error::Config(format!("factor {factor} cannot be composed from stages {list:?}"))
            })?,
        };
        let mut it = plan.into_iter();
        let mut up = self.stage(it.next().expect("non-empty plan"))?;
        for f in it {
            up = Upscaler::chain(up, self.stage(f)?);
        }
        Ok(up)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionConfig {
    #[serde(default = "default_distortion_kind")]
    pub kind: DistortionKind,
    pub endpoint: Option<String>,
    pub metric: Option<String>,
}

fn default_distortion_kind() -> DistortionKind {
    DistortionKind::OneMinusMsssim
}

impl Default for DistortionConfig {
    fn default() -> Self {
        DistortionConfig {
            kind: DistortionKind::OneMinusMsssim,
            endpoint: None,
            metric: None,
        }
    }
}

impl DistortionConfig {
    pub fn build(&self) -> Result<Distortion> {
        match self.kind {
            DistortionKind::OneMinusMsssim => Ok(Distortion::OneMinusMsSsim),
            DistortionKind::LpipsRemote => {
                let ep = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("remote distortion needs `endpoint`".into()))?;
                let backend = Backend::connect(&Endpoint::parse(ep)?)?;
                let metric = self.metric.clone().unwrap_or_else(|| "lpips".into());
                if !backend.capabilities().metrics.contains(&metric) {
                    return Err(Error::Config(format!(
                        "backend {ep} does not declare metric `{metric}`"
                    )));
                }
                Ok(Distortion::Remote {
                    backend: Arc::new(backend),
                    metric,
                })
            }
            other => Err(Error::Config(format!(
                "`{other}` is a similarity; scoring needs a distortion"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub keep_samples: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: String,
    pub levels: Vec<f64>,
}

impl SweepConfig {
    pub fn family(&self) -> Result<SweepFamily> {
        parse_family(&self.family)
    }
}

pub fn parse_family(name: &str) -> Result<SweepFamily> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| Error::Config(format!("unknown sweep family `{name}`")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSweepConfig {
    pub factors: Vec<usize>,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_q == 0 {
            return Err(Error::Config("n_q must be at least 1".into()));
        }
        if self.n_x == Some(0) {
            return Err(Error::Config("n_x must be at least 1".into()));
        }
        match (&self.dataset.manifest, &self.dataset.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("dataset takes `manifest` or `synthetic`, not both".into()))
            }
            (None, None) => return Err(Error::Config("dataset needs `manifest` or `synthetic`".into())),
            _ => {}
        }
        if self.downscale.as_slice().is_empty() {
            return Err(Error::Config("at least one downscaler is required".into()));
        }
        for d in self.downscale.as_slice() {
            d.build().map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::Config(other.to_string()),
            })?;
        }
        if let Some(s) = &self.sweep {
            s.family()?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn settings(&self) -> ScoreSettings {
        ScoreSettings {
            n_q: self.n_q,
            seed: self.seed,
            workers: self.workers,
            on_bad_image: self.on_bad_image,
            keep_samples: None,
        }
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.dir.as_deref().map(|d| self.resolve(d))
    }

    /// Loads (or generates) the image list, capped at `n_x`.
    pub fn images(&self) -> Result<Vec<ImageSource>> {
        if let Some(syn) = &self.dataset.synthetic {
            let count = self.n_x.map_or(syn.count, |n| n.min(syn.count));
            if self.n_x.is_some_and(|n| n > syn.count) {
                return Err(Error::Config(format!(
                    "n_x = {} exceeds the {} synthetic images",
                    self.n_x.unwrap_or(0),
                    syn.count
                )));
            }
            return Ok(natural_probes(syn.seed, count, syn.size)
                .into_iter()
                .map(|(id, r)| ImageSource::memory(id, r))
                .collect());
        }
        let path = self.resolve(self.dataset.manifest.as_deref().expect("validated"));
        let m = Manifest::read_csv(&path)?;
        let n = match self.n_x {
            Some(n) if n > m.len() => {
                return Err(Error::Config(format!(
                    "n_x = {n} exceeds the {} images in {}",
                    m.len(),
                    path.display()
                )))
            }
            Some(n) => n,
            None => m.len(),
        };
        let m = m.truncated(n);
        Ok(m.rows()
            .iter()
            .map(|r| ImageSource::File(r.id.clone(), m.resolve(r)))
            .collect())
    }

    pub fn downscalers(&self) -> Result<Vec<Downscaler>> {
        self.downscale.as_slice().iter().map(DownscaleConfig::build).collect()
    }

    pub fn downscaler(&self) -> Result<Downscaler> {
        match self.downscale.as_slice() {
            [one] => one.build(),
            many => Err(Error::Config(format!(
                "expected one downscaler, config lists {}",
                many.len()
            ))),
        }
    }
}

/// Scores the config's single downscaler. The report is written to the
/// output directory when one is configured, including on abort.
pub fn idard_score(cfg: &RunConfig) -> Result<ScoreReport> {
    let down = cfg.downscaler()?;
    score_with(cfg, &down, cfg.output_dir().as_deref())
}

/// Scores one downscaler under `cfg`, persisting into `out` if given.
pub fn score_with(cfg: &RunConfig, down: &Downscaler, out: Option<&Path>) -> Result<ScoreReport> {
    let images = cfg.images()?;
    let up = UpscalerFactory::new(&cfg.upscale)?.build(down.factor())?;
    let dist = cfg.distortion.build()?;
    let mut settings = cfg.settings();
    if cfg.output.keep_samples {
        settings.keep_samples = out.map(|d| d.join("samples"));
    }
    match score_images(&images, down, &up, &dist, &settings) {
        Ok(report) => {
            if let Some(dir) = out {
                report.write_dir(dir)?;
            }
            Ok(report)
        }
        Err((err, partial)) => {
            if let Some(dir) = out {
                if let Err(e) = partial.write_dir(dir) {
                    log::error!("could not flush partial report: {e}");
                }
            }
            Err(err)
        }
    }
}
