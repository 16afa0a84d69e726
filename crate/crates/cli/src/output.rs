//! Output directories, run metadata and error classification.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("IGEL_GIT_DESCRIBE"), ")");

/// Collects what a subcommand produced and stamps it on completion.
pub struct Run {
    command: &'static str,
    dir: PathBuf,
    cfg: RunConfig,
    timings: Vec<(String, f64)>,
    outputs: Vec<String>,
    started: Instant,
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    timings: serde_json::Map<String, serde_json::Value>,
    outputs: &'a [String],
}

impl Run {
    pub fn start(command: &'static str, dir: PathBuf, cfg: RunConfig) -> anyhow::Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        log::info!("{command}: writing to {}", dir.display());
        Ok(Run {
            command,
            dir,
            cfg,
            timings: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn cfg(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn cfg_mut(&mut self) -> &mut RunConfig {
        &mut self.cfg
    }

    pub fn time(&mut self, phase: &str, secs: f64) {
        self.timings.push((phase.to_owned(), secs));
    }

    /// Path of a new output file, recorded in the metadata.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_owned());
        self.dir.join(name)
    }

    pub fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes the resolved configuration and the run metadata.
    pub fn finish(mut self) -> anyhow::Result<()> {
        let cfg = self.cfg.clone();
        self.write_json("config.resolved.json", &cfg)?;
        self.time("total", self.started.elapsed().as_secs_f64());
        let meta = Metadata {
            command: self.command,
            version: VERSION,
            seed: cfg.seed,
            threads: rayon::current_num_threads(),
            timings: self
                .timings
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::json!(v)))
                .collect(),
            outputs: &self.outputs,
        };
        let path = self.dir.join("run.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| ConfigError(format!("no {what} given (flag or configuration)")).into())
}

/// Short machine-readable category of an error.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    use igel::encoder::EncoderError;
    use igel::eval::EvalError;
    use igel::graph::GraphError;
    use igel::model::ModelError;
    use igel::supervised::SupervisedError;
    use igel::unsup::TrainError;
    for cause in e.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() {
            return "config";
        }
        if cause.is::<GraphError>()
            || matches!(cause.downcast_ref(), Some(EvalError::Graph(_)))
            || matches!(cause.downcast_ref(), Some(SupervisedError::Graph(_)))
        {
            return "graph";
        }
        if cause.is::<EncoderError>() {
            return "encoder";
        }
        if cause.is::<ModelError>() {
            return "model";
        }
        if cause.is::<TrainError>() {
            return "train";
        }
        if cause.is::<SupervisedError>() {
            return "supervised";
        }
        if cause.is::<EvalError>() {
            return "eval";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}
