//! Command implementations behind the `ensdiv` binary.
//!
//! Every command writes into its own output directory: one JSON result
//! carrying inputs, seed and the analysis settings in effect, plus CSV tables
//! and SVG figures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
mod commands;
mod output;
mod svg;

use std::path::{Path, PathBuf};

use ensdiv_core::data::EnsembleDef;
use ensdiv_core::PredictionStore;

pub use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] ensdiv_core::Error),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error on {}: {err}", path.display())]
    Csv { path: PathBuf, err: csv::Error },
    #[error("thread pool: {0}")]
    Threads(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

/// Files written by a command, relative to its output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

pub fn run(cli: Cli) -> Result<RunSummary, CliError> {
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Threads(e.to_string()))?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<RunSummary, CliError> {
    match command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Conditional(a) => commands::conditional(&a),
        Command::Trends(a) => commands::trends(&a),
        Command::Improve(a) => commands::improve(&a),
        Command::GpDemo(a) => commands::gp_demo(&a),
        Command::Report(a) => commands::report(&a),
    }
}

pub(crate) fn load(manifest: &Path) -> Result<PredictionStore, CliError> {
    Ok(ensdiv_core::io::load_store(manifest)?)
}

pub(crate) fn parse_pair(store: &PredictionStore, pair: Option<&str>) -> Result<(String, String), CliError> {
    let (ind, ood) = match pair {
        Some(p) => {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| CliError::Validation(format!("pair {p:?} is not of the form IND:OOD")))?;
            (a.to_owned(), b.to_owned())
        }
        None => store
            .pairs()
            .first()
            .cloned()
            .ok_or_else(|| CliError::Validation("manifest lists no dataset pairs; pass --pair".into()))?,
    };
    for id in [&ind, &ood] {
        if !store.has_dataset(id) {
            return Err(CliError::Validation(format!("dataset {id:?} is not in the manifest")));
        }
    }
    Ok((ind, ood))
}

pub(crate) fn check_datasets(store: &PredictionStore, requested: &[String]) -> Result<Vec<String>, CliError> {
    if requested.is_empty() {
        return Ok(store.dataset_ids().to_vec());
    }
    for id in requested {
        if !store.has_dataset(id) {
            return Err(CliError::Validation(format!("dataset {id:?} is not in the manifest")));
        }
    }
    Ok(requested.to_vec())
}

/// A manifest ensemble id, or member ids joined with `+`.
pub(crate) fn resolve_ensemble(store: &PredictionStore, name: &str) -> Result<EnsembleDef, CliError> {
    if let Some(def) = store.ensembles().iter().find(|e| e.ensemble_id == name) {
        return Ok(def.clone());
    }
    let members: Vec<String> = name.split('+').map(str::to_owned).collect();
    if members.len() < 2 {
        return Err(CliError::Validation(format!("{name:?} is neither a manifest ensemble nor a '+'-joined member list")));
    }
    let known = store.model_ids();
    if let Some(m) = members.iter().find(|m| !known.contains(m)) {
        return Err(CliError::Validation(format!("ensemble {name:?} references unknown model {m:?}")));
    }
    Ok(EnsembleDef::from_members(members)?)
}

/// Manifest ensembles if any, otherwise all members of each group (all
/// models when untagged).
pub(crate) fn default_ensembles(store: &PredictionStore) -> Result<Vec<EnsembleDef>, CliError> {
    if !store.ensembles().is_empty() {
        return Ok(store.ensembles().to_vec());
    }
    let groups = model_groups(store);
    let defs: Vec<EnsembleDef> = groups
        .into_iter()
        .filter(|(_, ids)| ids.len() >= 2)
        .map(|(g, ids)| EnsembleDef::new(format!("{g}-all"), ids))
        .collect::<Result<_, _>>()?;
    if defs.is_empty() {
        return Err(CliError::Validation("no group has at least 2 models to ensemble".into()));
    }
    Ok(defs)
}

/// Tagged groups, or a single `"all"` group when no model is tagged.
pub(crate) fn model_groups(store: &PredictionStore) -> Vec<(String, Vec<String>)> {
    let groups = store.groups();
    if groups.is_empty() {
        vec![("all".to_owned(), store.model_ids())]
    } else {
        groups
    }
}
