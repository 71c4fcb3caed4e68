//! Optional TOML config file with one table per subcommand.
//!
//! Every key mirrors a command-line flag (dashes become underscores). Values
//! given on the command line win over the file, and the file wins over
//! built-in defaults. Unknown tables and keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    #[serde(default)]
    pub decompose: DecomposeFile,
    #[serde(default)]
    pub signal: SignalFile,
    #[serde(default)]
    pub steer_extract: SteerFile,
    #[serde(default)]
    pub simulate: SimulateFile,
    #[serde(default)]
    pub report: ReportFile,
    #[serde(default)]
    pub gen: GenFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeFile {
    pub input: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalFile {
    pub trace: Option<PathBuf>,
    pub w: Option<usize>,
    pub d1: Option<usize>,
    pub d2: Option<usize>,
    pub epsilon: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerFile {
    pub calib: Option<PathBuf>,
    pub t_r1: Option<usize>,
    pub t_r2: Option<usize>,
    pub keywords: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub w: Option<usize>,
    pub d1: Option<usize>,
    pub d2: Option<usize>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub srm: Option<PathBuf>,
    pub lrm: Option<PathBuf>,
    pub t_e: Option<f64>,
    pub t_r1: Option<usize>,
    pub t_r2: Option<usize>,
    pub steer: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub mode: Option<String>,
    pub cost: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub decisions: Option<PathBuf>,
    pub config_id: Option<String>,
    pub collapse_window: Option<usize>,
    pub reset_on_route: Option<bool>,
    pub accuracy_policy: Option<String>,
    pub keywords: Option<PathBuf>,
    pub w: Option<usize>,
    pub d1: Option<usize>,
    pub d2: Option<usize>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub runs: Option<String>,
    pub baseline: Option<String>,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenFile {
    pub spec: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sidecar: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }
}

/// `flag > file > default`, failing when neither source supplies a required value.
pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::Usage(format!("missing required option --{name}")))
}
