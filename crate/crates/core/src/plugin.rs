//! External downscalers run as child processes.
//!
//! The harness writes the high-resolution input to a temporary PNG, expands
//! `{in}`, `{out}` and `{factor}` in the command template, runs it through
//! `sh -c`, and reads back `{out}`. The plugin is a black box: only its
//! output dimensions are checked.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_image, write_image, Raster};
use crate::resample::ScaleFactor;

pub const DEFAULT_TIMEOUT_SECS: u64 = 120;

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginDownscaler {
    /// Shell command template with `{in}`, `{out}` and `{factor}` placeholders.
    pub command: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl PluginDownscaler {
    pub fn new(command: impl Into<String>) -> Self {
        PluginDownscaler {
            command: command.into(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }

    pub fn with_timeout(mut self, secs: u64) -> Self {
        self.timeout_secs = secs;
        self
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

// Grandchildren of `sh` hold the stderr pipe open, so the whole group goes.
fn kill_group(child: &mut Child) {
    let _ = Command::new("kill")
        .args(["-KILL", "--", &format!("-{}", child.id())])
        .stderr(Stdio::null())
        .status();
    let _ = child.kill();
    let _ = child.wait();
}

/// Runs the plugin on `img` and returns its decoded, dimension-checked output.
pub fn run_plugin(p: &PluginDownscaler, img: &Raster, s: ScaleFactor) -> Result<Raster> {
    let fail = |message: String, exit_code: Option<i32>, stderr: String| Error::Plugin {
        command: p.command.clone(),
        message,
        exit_code,
        stderr,
    };

    let dir = tempfile::Builder::new()
        .prefix("idard-plugin-")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("in.png");
    let output = dir.path().join("out.png");
    write_image(img, &input)?;

    let cmdline = p
        .command
        .replace("{in}", &shell_quote(&input.to_string_lossy()))
        .replace("{out}", &shell_quote(&output.to_string_lossy()))
        .replace("{factor}", &s.get().to_string());

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmdline)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| fail(format!("spawn failed: {e}"), None, String::new()))?;

    let mut stderr_pipe = child.stderr.take().expect("piped stderr");
    let stderr_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr_pipe.read_to_string(&mut buf);
        buf
    });

    let deadline = Instant::now() + Duration::from_secs(p.timeout_secs);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                kill_group(&mut child);
                let stderr = stderr_reader.join().unwrap_or_default();
                return Err(fail(format!("timed out after {} s", p.timeout_secs), None, stderr));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(fail(format!("wait failed: {e}"), None, String::new())),
        }
    };
    let stderr = stderr_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(fail(
            format!("exited with {status}"),
            status.code(),
            stderr,
        ));
    }

    let out = read_image(&output).map_err(|e| fail(format!("unreadable output: {e}"), Some(0), stderr.clone()))?;
    let want = (s.reduced(img.height()), s.reduced(img.width()), img.channels());
    if out.dims() != want {
        return Err(Error::Dimension(format!(
            "plugin `{}` produced {:?}, expected {want:?}",
            p.command,
            out.dims()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> Raster {
        Raster::filled(8, 8, 3, 0.5).unwrap()
    }

    fn sf(s: usize) -> ScaleFactor {
        ScaleFactor::new(s).unwrap()
    }

    #[test]
    fn nonzero_exit_carries_code_and_stderr() {
        let p = PluginDownscaler::new("echo broken >&2; exit 3");
        match run_plugin(&p, &img(), sf(2)) {
            Err(Error::Plugin { exit_code, stderr, .. }) => {
                assert_eq!(exit_code, Some(3));
                assert!(stderr.contains("broken"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_dimensions_are_rejected() {
        // Copies the input unchanged: right format, wrong size.
        let p = PluginDownscaler::new("cp {in} {out}");
        assert!(matches!(run_plugin(&p, &img(), sf(2)), Err(Error::Dimension(_))));
        let exchanged = crate::image::decode(&crate::image::encode(&img(), crate::image::ImageFormat::Png)).unwrap();
        assert_eq!(run_plugin(&p, &img(), sf(1)).unwrap(), exchanged);
    }

    #[test]
    fn missing_output_is_a_plugin_error() {
        let p = PluginDownscaler::new("true {in} {out} {factor}");
        assert!(matches!(run_plugin(&p, &img(), sf(2)), Err(Error::Plugin { .. })));
    }

    #[test]
    fn timeout_kills_the_process() {
        let p = PluginDownscaler::new("sleep 5").with_timeout(0);
        let start = Instant::now();
        match run_plugin(&p, &img(), sf(2)) {
            Err(Error::Plugin { message, .. }) => assert!(message.contains("timed out")),
            other => panic!("{other:?}"),
        }
        assert!(start.elapsed() < Duration::from_secs(4));
    }

    #[test]
    fn placeholders_are_quoted() {
        assert_eq!(shell_quote("a b"), "'a b'");
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
    }
}
