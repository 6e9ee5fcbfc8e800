//! Subcommand parameter sets and the shared run/manifest plumbing.

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{merge, strict};
use crate::manifest::Manifest;

pub mod ablation;
pub mod audio;
pub mod bounces;
pub mod calibrate;
pub mod simulate;
pub mod track;

/// Files a run reads and writes, by role. Every run has an `out`.
#[derive(Debug, Clone, Default)]
pub struct Io {
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
}

impl Io {
    pub fn input(&self, role: &str) -> Option<&Path> {
        self.inputs.get(role).map(PathBuf::as_path)
    }

    pub fn required_input(&self, role: &str) -> Result<&Path> {
        self.input(role).ok_or_else(|| anyhow!("missing input `{role}`"))
    }

    pub fn output(&self, role: &str) -> Option<&Path> {
        self.outputs.get(role).map(PathBuf::as_path)
    }

    pub fn out(&self) -> &Path {
        self.output("out").expect("every run has an out path")
    }
}

pub trait Job: Serialize + DeserializeOwned {
    const NAME: &'static str;

    /// Defaults, which may depend on keys the user already set (a ball
    /// preset, for example).
    fn defaults(overrides: &Value) -> Result<Self>;

    fn validate(&self) -> Result<()>;

    /// Runs the pipeline and returns a one-line summary.
    fn run(&self, seed: u64, io: &Io) -> Result<String>;
}

/// Resolves defaults under `overrides` and runs.
pub fn launch<J: Job>(overrides: Value, io: &Io) -> Result<Manifest> {
    let mut config = serde_json::to_value(J::defaults(&overrides)?)?;
    merge(&mut config, overrides);
    let seed = match config.as_object_mut().and_then(|m| m.remove("seed")) {
        None => 0,
        Some(v) => v.as_u64().ok_or_else(|| anyhow!("config field `seed`: expected a non-negative integer, got {v}"))?,
    };
    execute::<J>(config, seed, io)
}

/// Runs fully resolved parameters and writes the manifest next to `out`.
pub fn execute<J: Job>(config: Value, seed: u64, io: &Io) -> Result<Manifest> {
    let params: J = strict(config)?;
    params.validate()?;
    for (role, p) in &io.inputs {
        if !p.is_file() {
            bail!("input `{role}` {} does not exist", p.display());
        }
    }
    for p in io.outputs.values() {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let summary = params.run(seed, io)?;
    let manifest = Manifest::new(J::NAME, seed, serde_json::to_value(&params)?, &io.inputs, &io.outputs)?;
    manifest.write(&Manifest::path_for(io.out()))?;
    println!("{summary}");
    Ok(manifest)
}

/// Runs a manifest's subcommand with its recorded parameters.
pub fn execute_named(name: &str, config: Value, seed: u64, io: &Io) -> Result<Manifest> {
    match name {
        "simulate" => execute::<simulate::Simulate>(config, seed, io),
        "calibrate" => execute::<calibrate::Calibrate>(config, seed, io),
        "ablation" => execute::<ablation::Ablation>(config, seed, io),
        "synth-audio" => execute::<audio::SynthAudio>(config, seed, io),
        "localize" => execute::<audio::Localize>(config, seed, io),
        "track" => execute::<track::Track>(config, seed, io),
        "cupmap" => execute::<track::Cupmap>(config, seed, io),
        "train-transition" => execute::<track::TrainTransition>(config, seed, io),
        other => bail!("unknown subcommand {other:?} in manifest"),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}
