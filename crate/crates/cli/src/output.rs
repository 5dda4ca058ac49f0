//! Artifact persistence: atomic file writes and the run manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

/// Where a reported number comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Published reference value, carried as an input.
    Paper,
    /// Computed by this tool.
    Derived,
    /// Taken verbatim from the configuration.
    Input,
}

#[derive(Debug, Clone, Serialize)]
pub struct Reported {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_sha256: Option<String>,
    pub threads: Option<usize>,
    pub status: &'static str,
    pub error_code: Option<&'static str>,
    pub error: Option<String>,
    pub values: Vec<Reported>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub created_unix: u64,
}

/// Accumulates artifacts and reported values for one run.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    pub values: Vec<Reported>,
    pub checks: Vec<Check>,
    files: Vec<String>,
    console: String,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts {
            dir: dir.into(),
            values: Vec::new(),
            checks: Vec::new(),
            files: Vec::new(),
            console: String::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` through a temporary file and a rename.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> io::Result<()>
    where
        F: FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>,
    {
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        {
            let mut w = io::BufWriter::new(fs::File::create(&tmp)?);
            f(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, &path)?;
        if !self.files.iter().any(|n| n == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> io::Result<()> {
        self.write_with(name, |w| w.write_all(text.as_bytes()))
    }

    pub fn report(&mut self, name: &str, value: f64, provenance: Provenance) {
        self.console.push_str(&format!("{name}={}\n", human(value)));
        self.values.push(Reported {
            name: name.to_string(),
            value,
            provenance,
        });
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        let detail = detail.into();
        self.console
            .push_str(&format!("{} {name}: {detail}\n", if passed { "PASS" } else { "FAIL" }));
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn note(&mut self, line: impl AsRef<str>) {
        self.console.push_str(line.as_ref());
        self.console.push('\n');
    }

    /// Merges a sub-run whose directory is `self.dir()/name`.
    pub fn absorb(&mut self, name: &str, sub: Artifacts) {
        self.values.extend(sub.values.into_iter().map(|v| Reported {
            name: format!("{name}.{}", v.name),
            ..v
        }));
        self.checks.extend(sub.checks.into_iter().map(|c| Check {
            name: format!("{name}.{}", c.name),
            ..c
        }));
        self.files.extend(sub.files.iter().map(|f| format!("{name}/{f}")));
        self.console.push_str(&format!("[{name}]\n{}", sub.console));
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn console(&self) -> &str {
        &self.console
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn manifest(
        &self,
        subcommand: &str,
        config_sha256: Option<String>,
        threads: Option<usize>,
        error: Option<&stochabs_core::Error>,
    ) -> Manifest {
        let status = match error {
            None if self.all_passed() => "ok",
            None => "verification_failed",
            Some(stochabs_core::Error::VerificationFailed(_)) => "verification_failed",
            Some(_) => "error",
        };
        Manifest {
            tool: "stochabs",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config_sha256,
            threads,
            status,
            error_code: error.map(|e| e.code()),
            error: error.map(|e| e.to_string()),
            values: self.values.clone(),
            checks: self.checks.clone(),
            artifacts: self.files.clone(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn write_manifest(&mut self, manifest: &Manifest) -> io::Result<()> {
        let json = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
        self.write_text("manifest.json", &(json + "\n"))
    }
}

/// Console rounding: six significant digits.
pub fn human(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = (5 - v.abs().log10().floor() as i32).clamp(0, 12) as usize;
    let s = format!("{v:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
