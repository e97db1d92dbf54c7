use idard::metrics::Distortion;
use idard::pipeline::{score_images, timing_report, Downscaler, ImageSource, ScoreSettings};
use idard::resample::{KernelKind, ScaleFactor};
use idard::synth::natural_probes;
use idard::upscale::Upscaler;

fn run(n: usize, size: usize) -> idard::ScoreReport {
    let images: Vec<ImageSource> = natural_probes(8, n, size)
        .into_iter()
        .map(|(id, r)| ImageSource::memory(id, r))
        .collect();
    let f = ScaleFactor::new(4).unwrap();
    let down = Downscaler::Kernel { kernel: KernelKind::Lanczos3, factor: f };
    let up = Upscaler::perturbed(KernelKind::Bicubic, f, 0.02);
    let settings = ScoreSettings { n_q: 3, workers: 1, ..Default::default() };
    score_images(&images, &down, &up, &Distortion::OneMinusMsSsim, &settings).unwrap()
}

#[test]
fn stages_account_for_wall_clock() {
    let r = run(8, 128);
    let t = timing_report(&r);
    assert!(t.stage_sum <= t.wall, "{t:?}");
    assert!((t.wall - t.stage_sum) / t.wall < 0.05, "{t:?}");
    assert!(t.total.metric > 0.0 && t.total.upscale > 0.0 && t.total.downscale > 0.0);
    assert!((t.per_image.metric * 8.0 - t.total.metric).abs() < 1e-9);
}

#[test]
fn timings_grow_with_image_count() {
    let a = timing_report(&run(30, 48));
    let b = timing_report(&run(60, 48));
    assert!(b.wall > a.wall, "{a:?} vs {b:?}");
    assert!(b.stage_sum > a.stage_sum);
}
