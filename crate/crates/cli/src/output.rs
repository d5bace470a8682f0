//! Output directories are built in a sibling staging directory and renamed
//! into place at the end, so a reader never sees a half-written run.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<String>,
    pub output_dir: String,
    pub seed: u64,
    pub started_unix: f64,
    pub status: String,
    pub exit_code: Option<u8>,
    pub files: Vec<String>,
    pub timings: Vec<Timing>,
    pub wall_seconds: f64,
}

pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
    phase_clock: Instant,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl Staging {
    pub fn create(target: &Path, command: &str, config: Option<&Path>, seed: u64) -> Result<Self> {
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = RunManifest {
            tool: env!("CARGO_BIN_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: std::env::args().collect(),
            config: config.map(|p| p.display().to_string()),
            output_dir: target.display().to_string(),
            seed,
            started_unix: unix_now(),
            status: "running".into(),
            exit_code: None,
            files: Vec::new(),
            timings: Vec::new(),
            wall_seconds: 0.0,
        };
        let s = Staging {
            target: target.to_path_buf(),
            dir,
            manifest,
            clock: Instant::now(),
            phase_clock: Instant::now(),
        };
        s.write_manifest()?;
        Ok(s)
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    /// Closes the current timing phase.
    pub fn phase(&mut self, name: &str) {
        self.manifest.timings.push(Timing {
            phase: name.into(),
            seconds: self.phase_clock.elapsed().as_secs_f64(),
        });
        self.phase_clock = Instant::now();
    }

    pub fn write_with(&mut self, file: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(file);
        let mut out = BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut out).with_context(|| format!("writing {file}"))?;
        out.flush()?;
        self.manifest.files.push(file.into());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_with(file, |w| writeln!(w, "{text}"))
    }

    /// Writes the final manifest and moves the directory into place,
    /// replacing an earlier run with the same name.
    pub fn finish(mut self, status: &str, exit_code: u8) -> Result<PathBuf> {
        self.manifest.status = status.into();
        self.manifest.exit_code = Some(exit_code);
        self.manifest.wall_seconds = self.clock.elapsed().as_secs_f64();
        self.write_manifest()?;
        let old = self
            .target
            .with_file_name(format!(".{}.old-{}", self.target.file_name().unwrap_or_default().to_string_lossy(), std::process::id()));
        let had_old = self.target.exists();
        if had_old {
            fs::rename(&self.target, &old).with_context(|| format!("moving aside {}", self.target.display()))?;
        }
        fs::rename(&self.dir, &self.target).with_context(|| format!("moving output to {}", self.target.display()))?;
        if had_old {
            fs::remove_dir_all(&old).ok();
        }
        Ok(self.target.clone())
    }
}
