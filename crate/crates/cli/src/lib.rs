//! Library side of the `stochabs` command-line tool: configuration,
//! subcommands and artifact handling.

pub mod commands;
pub mod config;
pub mod output;
pub mod recipes;

use std::path::{Path, PathBuf};

use stochabs_core::{Error, Result};

use crate::config::RunConfig;
use crate::output::Artifacts;

pub const SUBCOMMANDS: [&str; 7] = ["abstract", "synthesize", "bounds", "verify-barrier", "compose", "simulate", "validate"];

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "STOCHABS_OUT";

/// Process exit status of a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    VerificationFailed = 1,
    UsageError = 2,
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("stochabs-out"), PathBuf::from)
}

/// Executes a config-driven subcommand into `out`. Configuration errors
/// leave no artifacts behind; other failures still get a manifest.
pub fn execute(subcommand: &str, cfg: &RunConfig, hash: Option<String>, out: &Path, threads: Option<usize>) -> (Status, Artifacts) {
    let mut art = Artifacts::new(out);
    if let Err(e) = config::require(cfg, subcommand) {
        return (Status::UsageError, with_error(art, e));
    }
    let res = match subcommand {
        "abstract" => commands::run_abstract(cfg, &mut art),
        "synthesize" => commands::run_synthesize(cfg, &mut art),
        "bounds" => commands::run_bounds(cfg, &mut art),
        "verify-barrier" => commands::run_verify_barrier(cfg, &mut art),
        "compose" => commands::run_compose(cfg, &mut art),
        "simulate" => commands::run_simulate(cfg, &mut art),
        "validate" => commands::run_validate(cfg, &mut art),
        other => Err(Error::InvalidArgument(format!("unknown subcommand '{other}'"))),
    };
    finish(subcommand, art, res, hash, threads)
}

pub fn reproduce(section: u32, out: &Path, threads: Option<usize>) -> (Status, Artifacts) {
    let mut art = Artifacts::new(out);
    let res = recipes::run(section, &mut art);
    finish("reproduce-paper", art, res, Some(recipes::recipe_hash(section)), threads)
}

fn with_error(mut art: Artifacts, e: Error) -> Artifacts {
    art.note(format!("error[{}]: {e}", e.code()));
    art
}

fn finish(subcommand: &str, mut art: Artifacts, res: Result<()>, hash: Option<String>, threads: Option<usize>) -> (Status, Artifacts) {
    let status = match &res {
        Ok(()) if art.all_passed() => Status::Ok,
        Ok(()) | Err(Error::VerificationFailed(_)) => Status::VerificationFailed,
        Err(_) => Status::UsageError,
    };
    let err = res.err();
    // configuration problems surface before anything is written
    let write_manifest = err.is_none() || matches!(err, Some(Error::VerificationFailed(_))) || !art.files().is_empty();
    if write_manifest {
        let manifest = art.manifest(subcommand, hash, threads, err.as_ref());
        if let Err(e) = art.write_manifest(&manifest) {
            art.note(format!("error[io]: could not write manifest: {e}"));
            return (Status::UsageError, art);
        }
    }
    let art = match err {
        Some(e) => with_error(art, e),
        None => art,
    };
    (status, art)
}
