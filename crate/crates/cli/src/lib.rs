//! `segkit` command-line front end.
//!
//! Every command returns a [`CommandResult`]; `main` prints its summary and
//! exits with its code (0 success, 1 domain error, 2 usage error).

mod commands;
pub mod plots;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use segkit::Error;

pub use commands::run;

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "SEGKIT_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "segkit", version, about = "Semantic segmentation toolkit")]
pub struct Cli {
    /// Seed for every random choice; for `train` it overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving every artifact.
    #[arg(long, global = true, default_value = "segkit-out")]
    pub out_dir: PathBuf,
    /// Stop at the first malformed CSV row instead of collecting row errors.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Class and image-size histograms of an annotation CSV or dataset directory.
    Explore {
        /// CSV file or dataset directory; defaults to the data directory.
        path: Option<PathBuf>,
        /// Added to every class id on ingestion (1 for 0-based datasets); reports use the file's ids.
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        class_offset: i64,
        /// Classes listed at each end of the ranking.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Condense one image's annotations into an indexed PNG label map.
    Decode {
        csv: PathBuf,
        image_id: String,
        /// Output PNG; defaults to `<out-dir>/<image_id>_mask.png`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Side of the square output; 0 keeps the annotated size.
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        class_offset: i64,
    },
    /// Run-length encode an indexed PNG label map into annotation rows.
    Encode {
        mask: PathBuf,
        /// Image id written into the rows; defaults to the file stem.
        #[arg(long)]
        image_id: Option<String>,
        /// Output CSV; defaults to `<out-dir>/<image_id>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic shape dataset into the output directory.
    MakeToy {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// JSON toy specification; `--count`, `--size` and `--seed` still apply on top.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train according to a `key = value` configuration file.
    Train { config: PathBuf },
    /// Evaluate a checkpoint on a dataset directory or annotation CSV.
    Eval {
        checkpoint: PathBuf,
        /// Defaults to the data directory.
        data: Option<PathBuf>,
    },
    /// Predict a label map for one image.
    Predict {
        checkpoint: PathBuf,
        image: PathBuf,
        /// Output mask PNG; defaults to `<out-dir>/<stem>_pred.png`. The overlay goes beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Negate one analytic gradient to exercise the failure path.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

/// Outcome of one command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandResult {
    pub code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

impl CommandResult {
    pub fn ok(summary: String, artifacts: Vec<PathBuf>) -> Self {
        Self {
            code: 0,
            artifacts,
            summary,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            artifacts: vec![],
            summary: format!("error: {}", message.into()),
        }
    }

    /// Maps library errors onto exit codes: bad settings are usage errors.
    pub fn from_error(err: &Error) -> Self {
        let code = match err {
            Error::InvalidSetting { .. } => 2,
            _ => 1,
        };
        let mut summary = format!("error: {err}");
        let mut source = std::error::Error::source(err);
        while let Some(s) = source {
            let text = s.to_string();
            if !summary.contains(&text) {
                summary.push_str(&format!("\n  caused by: {text}"));
            }
            source = s.source();
        }
        Self {
            code,
            artifacts: vec![],
            summary,
        }
    }
}
