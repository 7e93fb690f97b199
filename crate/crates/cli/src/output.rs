use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use crate::args::OutputArgs;
use crate::svg::Plot;
use crate::CliError;

/// Run directory for one command invocation.
pub struct OutputDir {
    pub path: PathBuf,
    timestamp: bool,
    written: Vec<String>,
}

impl OutputDir {
    pub fn prepare(args: &OutputArgs) -> Result<Self, CliError> {
        if args.out.exists() && !args.force {
            return Err(CliError::Validation(format!(
                "output directory {} already exists (use --force to write into it)",
                args.out.display()
            )));
        }
        fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
        Ok(Self { path: args.out.clone(), timestamp: !args.no_timestamp, written: Vec::new() })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn target(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_owned());
        self.path.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.target(name);
        ensdiv_core::io::save_record(&path, value)?;
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
        let path = self.target(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Csv { path: path.clone(), err: e })?;
        w.write_record(header).map_err(|e| CliError::Csv { path: path.clone(), err: e })?;
        for row in rows {
            w.write_record(&row).map_err(|e| CliError::Csv { path: path.clone(), err: e })?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    pub fn svg(&mut self, name: &str, plot: &Plot) -> Result<(), CliError> {
        let stamp = self
            .timestamp
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
        let path = self.target(name);
        fs::write(&path, plot.render(stamp)).map_err(|e| CliError::io(&path, e))
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Self-describing result envelope.
pub fn envelope(command: &str, seed: Option<u64>, inputs: Value, decisions: Value, result: Value) -> Value {
    json!({
        "tool": "ensdiv",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "inputs": inputs,
        "decisions": decisions,
        "result": result,
    })
}

pub fn display_path(p: &Path) -> String {
    p.display().to_string()
}
