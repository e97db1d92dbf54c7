use idard::config::RunConfig;

fn readme_config() -> String {
    let readme = include_str!("../../../README.md");
    let section = readme.split("## Run configuration").nth(1).unwrap();
    let mut lines = Vec::new();
    for line in section.lines().skip_while(|l| l.is_empty()) {
        if !line.is_empty() && !line.starts_with("    ") {
            break;
        }
        lines.push(line.strip_prefix("    ").unwrap_or(line));
    }
    lines.join("\n")
}

#[test]
fn readme_config_example_is_valid() {
    let cfg = RunConfig::from_toml_str(&readme_config()).unwrap();
    assert_eq!((cfg.seed, cfg.n_q, cfg.n_x), (2024, 5, Some(30)));
    let downs = cfg.downscalers().unwrap();
    assert_eq!(downs.len(), 4);
    assert!(downs.iter().all(|d| d.factor().get() == 8));
    assert_eq!(cfg.sweep.as_ref().unwrap().levels, vec![0.0, 0.5, 1.0, 2.0]);
    assert_eq!(cfg.scale_sweep.as_ref().unwrap().factors, vec![4, 8, 16, 32]);
}
