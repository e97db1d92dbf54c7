use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use idard::config::{parse_family, score_with, RunConfig, UpscaleConfig, UpscaleKind, UpscalerFactory};
use idard::datatools::{balance_subset, joint_entropy, CellTable, Manifest};
use idard::degrade::{apply_ops, Degradation};
use idard::error::{Error, Result};
use idard::image::{read_image, write_image};
use idard::pipeline::{
    aggregate_from_samples, read_samples_csv, scale_sweep, sweep, timing_report, Downscaler, ScoreReport, SweepResult,
};
use idard::protocol::mock::MockBackend;
use idard::resample::{KernelKind, ScaleFactor, DPID_DEFAULT_LAMBDA};
use idard::rng::StreamKey;
use idard::synth::write_probe_dataset;

#[derive(Parser)]
#[command(name = "idard", version, about = "Score image downscalers by expected reconstruction distortion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Global seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 = one per core (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory or file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Downscale one image.
    Downscale {
        #[arg(long, default_value = "bicubic")]
        method: String,
        #[arg(long)]
        factor: usize,
        /// DPID detail exponent.
        #[arg(long)]
        lambda: Option<f64>,
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Apply degradations, e.g. `--op blur=1.0 --op noise=0.05`, in order.
    Degrade {
        #[arg(long = "op", required = true)]
        ops: Vec<String>,
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Draw one reconstruction from a low-resolution image.
    Upscale {
        #[arg(long)]
        factor: usize,
        #[arg(long, default_value = "perturbed")]
        kind: String,
        #[arg(long, default_value = "bicubic")]
        kernel: String,
        #[arg(long, default_value_t = idard::upscale::DEFAULT_TAU)]
        tau: f64,
        /// Backend endpoint for `--kind remote` (`stdio:<cmd>` or `tcp:<addr>`).
        #[arg(long)]
        endpoint: Option<String>,
        /// 1-based sample index.
        #[arg(long, default_value_t = 1)]
        sample: u32,
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score the downscaler(s) of a run config.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score one degradation family over ordered levels.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        family: Option<String>,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Score one downscaler over several scale factors.
    ScaleSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
    /// Draw a label-balanced subset of a manifest.
    Balance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Joint label entropy of a manifest, in bits.
    Entropy {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize and verify a persisted score directory.
    Report {
        dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic probe dataset with a manifest.
    Synth {
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the mock backend over stdio, or TCP with --listen.
    #[command(hide = true)]
    ServeMock {
        #[arg(long, value_delimiter = ',', default_value = "4,8")]
        factors: Vec<u16>,
        #[arg(long)]
        listen: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = json!({ "error": { "code": e.code(), "message": e.to_string() } });
            eprintln!("{detail}");
            ExitCode::FAILURE
        }
    }
}

fn emit(json_mode: bool, value: &Value, human: impl FnOnce() -> String) {
    if json_mode {
        println!("{}", serde_json::to_string_pretty(value).expect("json"));
    } else {
        println!("{}", human());
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn dims_json(img: &idard::Raster) -> Value {
    json!({ "height": img.height(), "width": img.width(), "channels": img.channels() })
}

fn stem_id(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_config(path: &Path, common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = Some(std::env::current_dir().map_err(|e| Error::io(".", e))?.join(out));
    }
    Ok(cfg)
}

fn parse_op(s: &str) -> Result<Degradation> {
    let (name, level) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("degradation `{s}` must look like name=level")))?;
    let level: f64 = level
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad level in `{s}`")))?;
    parse_family(name)
        .map_err(|_| Error::InvalidArgument(format!("unknown degradation `{name}`")))?
        .degradation(level)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Downscale {
            method,
            factor,
            lambda,
            input,
            output,
            common,
        } => {
            let factor = ScaleFactor::new(factor)?;
            let down = match method.as_str() {
                "dpid" => Downscaler::Dpid {
                    factor,
                    lambda: lambda.unwrap_or(DPID_DEFAULT_LAMBDA),
                },
                k => Downscaler::Kernel {
                    kernel: k.parse()?,
                    factor,
                },
            };
            let img = read_image(&input)?;
            let key = StreamKey::new(common.seed.unwrap_or(0), stem_id(&input), "ds");
            let lr = down.apply(&img, &key)?;
            write_image(&lr, &output)?;
            let v = json!({
                "input": input, "output": output, "downscaler": down.describe(),
                "factor": factor.get(), "dims": dims_json(&lr),
            });
            emit(common.json, &v, || format!("{} -> {} ({}x{})", input.display(), output.display(), lr.width(), lr.height()));
        }
        Command::Degrade {
            ops,
            input,
            output,
            common,
        } => {
            let ops: Vec<Degradation> = ops.iter().map(|s| parse_op(s)).collect::<Result<_>>()?;
            let img = read_image(&input)?;
            let key = StreamKey::new(common.seed.unwrap_or(0), stem_id(&input), "degrade");
            let out = apply_ops(&ops, &img, &key)?;
            write_image(&out, &output)?;
            let v = json!({
                "input": input, "output": output,
                "ops": ops.iter().map(ToString::to_string).collect::<Vec<_>>(),
                "dims": dims_json(&out),
            });
            emit(common.json, &v, || format!("{} -> {}", input.display(), output.display()));
        }
        Command::Upscale {
            factor,
            kind,
            kernel,
            tau,
            endpoint,
            sample,
            input,
            output,
            common,
        } => {
            let kind = match kind.as_str() {
                "interp" => UpscaleKind::Interp,
                "perturbed" => UpscaleKind::Perturbed,
                "remote" => UpscaleKind::Remote,
                other => return Err(Error::InvalidArgument(format!("unknown upscaler kind `{other}`"))),
            };
            let cfg = UpscaleConfig {
                kind,
                kernel: kernel.parse::<KernelKind>()?,
                tau,
                factors: None,
                endpoint,
            };
            let up = UpscalerFactory::new(&cfg)?.build(ScaleFactor::new(factor)?)?;
            let lr = read_image(&input)?;
            let key = StreamKey::new(common.seed.unwrap_or(0), stem_id(&input), "us");
            let hr = up.sample(&lr, sample, &key)?;
            write_image(&hr, &output)?;
            let v = json!({
                "input": input, "output": output, "upscaler": up.describe(),
                "sample": sample, "dims": dims_json(&hr),
            });
            emit(common.json, &v, || format!("{} -> {} ({}x{})", input.display(), output.display(), hr.width(), hr.height()));
        }
        Command::Score { config, common } => {
            let cfg = load_config(&config, &common)?;
            let downs = cfg.downscalers()?;
            let out = cfg.output_dir();
            let mut reports = Vec::with_capacity(downs.len());
            for (i, (down, dc)) in downs.iter().zip(cfg.downscale.as_slice()).enumerate() {
                let dir = out.as_ref().map(|d| {
                    if downs.len() == 1 {
                        d.clone()
                    } else {
                        d.join(dc.label.clone().unwrap_or_else(|| format!("downscaler_{i}")))
                    }
                });
                reports.push(score_with(&cfg, down, dir.as_deref())?);
            }
            let v = if reports.len() == 1 {
                to_value(&reports[0])
            } else {
                to_value(&reports)
            };
            emit(common.json, &v, || {
                reports.iter().map(summary_line).collect::<Vec<_>>().join("\n")
            });
        }
        Command::Sweep {
            config,
            family,
            levels,
            common,
        } => {
            let cfg = load_config(&config, &common)?;
            let (family, levels) = match (family, levels, &cfg.sweep) {
                (Some(f), Some(l), _) => (f, l),
                (f, l, Some(s)) => (f.unwrap_or_else(|| s.family.clone()), l.unwrap_or_else(|| s.levels.clone())),
                _ => return Err(Error::Config("sweep needs a family and levels ([sweep] or flags)".into())),
            };
            let fam = parse_family(&family)?;
            let base = cfg.downscaler()?;
            let up = UpscalerFactory::new(&cfg.upscale)?.build(base.factor())?;
            let dist = cfg.distortion.build()?;
            let mut result = sweep(&cfg.images()?, &base, &up, &dist, &cfg.settings(), fam, &levels)?;
            result.family = family;
            finish_sweep(&cfg, &result, common.json)?;
        }
        Command::ScaleSweep {
            config,
            factors,
            common,
        } => {
            let cfg = load_config(&config, &common)?;
            let factors = factors
                .or_else(|| cfg.scale_sweep.as_ref().map(|s| s.factors.clone()))
                .ok_or_else(|| Error::Config("scale-sweep needs factors ([scale_sweep] or --factors)".into()))?;
            let base = cfg.downscaler()?;
            let factory = UpscalerFactory::new(&cfg.upscale)?;
            let dist = cfg.distortion.build()?;
            let result = scale_sweep(&cfg.images()?, &base, |f| factory.build(f), &dist, &cfg.settings(), &factors)?;
            finish_sweep(&cfg, &result, common.json)?;
        }
        Command::Balance { manifest, n, common } => {
            let m = Manifest::read_csv(&manifest)?;
            let subset = balance_subset(&m, n, common.seed.unwrap_or(0))?;
            if let Some(out) = &common.out {
                subset.write(out)?;
            }
            let r = &subset.report;
            emit(common.json, &to_value(r), || {
                format!("selected {} of {} requested, joint entropy {:.4}", r.selected, r.requested, r.joint_entropy)
            });
        }
        Command::Entropy { manifest, common } => {
            let m = Manifest::read_csv(&manifest)?;
            let cells = CellTable::from_manifest(&m);
            let h = joint_entropy(&cells)?;
            let v = json!({
                "manifest": manifest, "labeled": cells.total(), "counts": cells.counts.to_vec(),
                "joint_entropy": h,
            });
            emit(common.json, &v, || format!("{h:.4}"));
        }
        Command::Report { dir, common } => {
            let path = dir.join("report.json");
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let report: ScoreReport = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
            let rows = read_samples_csv(&dir.join("samples.csv"))?;
            let recomputed = aggregate_from_samples(&rows)?;
            let consistent = recomputed == report.aggregate;
            let timing = timing_report(&report);
            let v = json!({
                "dir": dir, "status": report.status, "n_x": report.n_x, "n_q": report.n_q,
                "aggregate": report.aggregate, "recomputed": recomputed, "consistent": consistent,
                "skipped": report.skipped.len(), "timing": timing,
            });
            emit(common.json, &v, || {
                let t = &timing;
                format!(
                    "{}\nconsistent with samples.csv: {consistent}\nwall {:.3}s | load {:.3}s downscale {:.3}s upscale {:.3}s metric {:.3}s (totals over {} images)",
                    summary_line(&report), t.wall, t.total.load, t.total.downscale, t.total.upscale, t.total.metric, t.n_x
                )
            });
            if !consistent {
                return Err(Error::InvalidArgument(format!(
                    "{}: aggregate does not match samples.csv",
                    dir.display()
                )));
            }
        }
        Command::Synth { count, size, common } => {
            let out = common
                .out
                .ok_or_else(|| Error::InvalidArgument("synth needs --out <dir>".into()))?;
            let seed = common.seed.unwrap_or(0);
            let manifest = write_probe_dataset(&out, seed, count, size)?;
            let v = json!({ "manifest": manifest, "count": count, "size": size, "seed": seed });
            emit(common.json, &v, || manifest.display().to_string());
        }
        Command::ServeMock { factors, listen } => {
            let mock = MockBackend { factors };
            match listen {
                None => {
                    let mut r = BufReader::new(std::io::stdin().lock());
                    let mut w = AutoFlush(BufWriter::new(std::io::stdout().lock()));
                    mock.serve(&mut r, &mut w)?;
                }
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).map_err(|e| Error::io(&addr, e))?;
                    if let Ok(local) = listener.local_addr() {
                        eprintln!("listening on {local}");
                    }
                    for stream in listener.incoming().flatten() {
                        let mock = mock.clone();
                        std::thread::spawn(move || {
                            let Ok(read_half) = stream.try_clone() else { return };
                            let mut r = BufReader::new(read_half);
                            let mut w = AutoFlush(BufWriter::new(stream));
                            if let Err(e) = mock.serve(&mut r, &mut w) {
                                log::warn!("mock session ended: {e}");
                            }
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Flushes after every frame so the peer never waits on a buffer.
struct AutoFlush<W: Write>(W);

impl<W: Write> Write for AutoFlush<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.write(buf)
    }

    fn write_all(&mut self, buf: &[u8]) -> std::io::Result<()> {
        self.0.write_all(buf)?;
        self.0.flush()
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

fn summary_line(r: &ScoreReport) -> String {
    match r.aggregate {
        Some(a) => format!(
            "{}: S = {:.6} ± {:.6} (sample spread {:.6}, N_X = {}, N_Q = {})",
            r.downscaler, a.mean, a.std, a.sample_spread, r.n_x, r.n_q
        ),
        None => format!("{}: no images scored", r.downscaler),
    }
}

fn finish_sweep(cfg: &RunConfig, result: &SweepResult, json_mode: bool) -> Result<()> {
    if let Some(dir) = cfg.output_dir() {
        for (i, p) in result.points.iter().enumerate() {
            p.report.write_dir(&dir.join(format!("level_{i}")))?;
        }
        let path = dir.join("sweep.json");
        std::fs::write(&path, serde_json::to_string_pretty(result).expect("json")).map_err(|e| Error::io(&path, e))?;
    }
    emit(json_mode, &to_value(result), || {
        let mut lines: Vec<String> = result
            .points
            .iter()
            .map(|p| format!("{:>8} {}", p.level, p.report.score().map_or("-".into(), |s| format!("{s:.6}"))))
            .collect();
        lines.push(match (result.rho, &result.rho_note) {
            (Some(r), _) => format!("rho = {r}"),
            (None, note) => format!("rho undefined: {}", note.as_deref().unwrap_or("")),
        });
        lines.join("\n")
    });
    Ok(())
}
