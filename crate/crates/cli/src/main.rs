//! `bouncekit`: simulate, calibrate, localize and track bouncing balls.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod commands;
mod config;
mod manifest;

use commands::{ablation, audio, calibrate, execute_named, launch, simulate, track, Io, Job};
use manifest::{sha256_file, Manifest};

#[derive(Parser)]
#[command(name = "bouncekit", version, about = "Stochastic bouncing-ball simulation, calibration and tracking")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// TOML file of parameter overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one parameter by dotted key, e.g. `--set toss.outlier_probability=0.2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate vertical calibration drops to a bounce table.
    Simulate(SimulateArgs),
    /// Fuse observed drops into a posterior over (e, log10 kappa).
    Calibrate(CalibrateArgs),
    /// Feature-subset ablation of the calibration model.
    Ablation(AblationArgs),
    /// Render a simulated drop to three-channel audio.
    SynthAudio(SynthAudioArgs),
    /// Detect and localize bounces in three-channel audio.
    Localize(LocalizeArgs),
    /// Run tracking trials with one controller.
    Track(TrackArgs),
    /// Ball-in-cup success counts over a drop grid.
    Cupmap(CupmapArgs),
    /// Train the transition model used by the stochastic controller.
    TrainTransition(TrainTransitionArgs),
    /// Re-run a manifest and check its outputs are reproduced.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    e: Option<f64>,
    #[arg(long)]
    log10_kappa: Option<f64>,
    #[arg(long)]
    drops: Option<usize>,
    #[arg(long)]
    height: Option<f64>,
    #[arg(long)]
    bounces: Option<usize>,
    #[arg(long)]
    position_noise: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Bounce table of observed drops.
    #[arg(long)]
    obs: PathBuf,
    /// Pretrained calibration model; skips training.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Training set size.
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthAudioArgs {
    #[arg(long)]
    e: Option<f64>,
    #[arg(long)]
    log10_kappa: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    /// WAV path; the true bounces go beside it as `<stem>.truth.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    wav: PathBuf,
    #[arg(long, value_parser = ["offline", "online"])]
    mode: Option<String>,
    /// JSON microphone array `{"positions": [[x, y, z], ...]}`.
    #[arg(long)]
    array: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long, value_parser = ["det", "stoch"])]
    controller: Option<String>,
    /// Ball preset, e.g. `ping-pong/table`.
    #[arg(long)]
    ball: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Pretrained transition model; otherwise one is trained.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CupmapArgs {
    /// Posterior JSON, as written by `calibrate`.
    #[arg(long)]
    posterior: PathBuf,
    /// Drop grid `x0:x1:nx,y0:y1:ny`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainTransitionArgs {
    #[arg(long)]
    ball: Option<String>,
    /// Posterior JSON to draw training parameters from.
    #[arg(long)]
    posterior: Option<PathBuf>,
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the reproduced outputs.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Flag overrides and file roles collected from a subcommand's arguments.
#[derive(Default)]
struct Plan {
    sets: Vec<(&'static str, Value)>,
    io: Io,
}

impl Plan {
    fn set<T: Into<Value>>(&mut self, key: &'static str, v: Option<T>) {
        if let Some(v) = v {
            self.sets.push((key, v.into()));
        }
    }

    fn input(&mut self, role: &str, p: Option<PathBuf>) {
        if let Some(p) = p {
            self.io.inputs.insert(role.into(), p);
        }
    }

    fn output(&mut self, role: &str, p: Option<PathBuf>) {
        if let Some(p) = p {
            self.io.outputs.insert(role.into(), p);
        }
    }
}

fn truth_path(wav: &Path) -> PathBuf {
    wav.with_extension("truth.csv")
}

fn plan(command: Command) -> Result<Plan> {
    let mut p = Plan::default();
    match command {
        Command::Simulate(a) => {
            p.set("restitution", a.e);
            p.set("log10_kappa", a.log10_kappa);
            p.set("drops", a.drops);
            p.set("drop.drop_height", a.height);
            p.set("drop.n_bounces", a.bounces);
            p.set("drop.position_noise_sigma", a.position_noise);
            p.output("out", Some(a.out));
        }
        Command::Calibrate(a) => {
            p.set("train_size", a.train);
            p.input("obs", Some(a.obs));
            p.input("model", a.model);
            p.output("out", Some(a.out));
            p.output("save_model", a.save_model);
        }
        Command::Ablation(a) => {
            p.set("train_size", a.train);
            p.set("test_size", a.test);
            p.output("out", Some(a.out));
        }
        Command::SynthAudio(a) => {
            p.set("restitution", a.e);
            p.set("log10_kappa", a.log10_kappa);
            p.set("snr_db", a.snr_db);
            p.output("truth", Some(truth_path(&a.out)));
            p.output("out", Some(a.out));
        }
        Command::Localize(a) => {
            p.set("mode", a.mode);
            if let Some(path) = &a.array {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let array: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                p.set("array", Some(array));
            }
            p.input("wav", Some(a.wav));
            p.input("array", a.array);
            p.output("out", Some(a.out));
        }
        Command::Track(a) => {
            p.set("controller", a.controller);
            p.set("ball", a.ball);
            p.set("trials", a.trials);
            p.input("model", a.model);
            p.output("out", Some(a.out));
        }
        Command::Cupmap(a) => {
            if let Some(spec) = &a.grid {
                let grid = bouncekit::tracking::CupGrid::parse(spec).context("--grid")?;
                p.set("grid", Some(serde_json::to_value(grid)?));
            }
            p.set("n", a.n);
            p.input("posterior", Some(a.posterior));
            p.output("out", Some(a.out));
        }
        Command::TrainTransition(a) => {
            p.set("ball", a.ball);
            p.set("sims", a.sims);
            p.input("posterior", a.posterior);
            p.output("out", Some(a.out));
        }
        Command::Replay(_) => unreachable!("replay has no plan"),
    }
    Ok(p)
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => simulate::Simulate::NAME,
        Command::Calibrate(_) => calibrate::Calibrate::NAME,
        Command::Ablation(_) => ablation::Ablation::NAME,
        Command::SynthAudio(_) => audio::SynthAudio::NAME,
        Command::Localize(_) => audio::Localize::NAME,
        Command::Track(_) => track::Track::NAME,
        Command::Cupmap(_) => track::Cupmap::NAME,
        Command::TrainTransition(_) => track::TrainTransition::NAME,
        Command::Replay(_) => "replay",
    }
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let m = Manifest::read(&args.manifest)?;
    for (role, rec) in &m.inputs {
        let now = sha256_file(&rec.path)?;
        if now != rec.sha256 {
            bail!("input `{role}` {} changed since the manifest was written", rec.path.display());
        }
    }
    let mut io = Io { inputs: m.inputs.iter().map(|(k, r)| (k.clone(), r.path.clone())).collect(), ..Io::default() };
    for (role, rec) in &m.outputs {
        let name = rec.path.file_name().with_context(|| format!("output `{role}` has no file name"))?;
        io.outputs.insert(role.clone(), args.out_dir.join(name));
    }
    let again = execute_named(&m.subcommand, m.config.clone(), m.seed, &io)?;
    let mut differ = Vec::new();
    for (role, rec) in &m.outputs {
        if again.outputs.get(role).map(|r| &r.sha256) != Some(&rec.sha256) {
            differ.push(role.as_str());
        }
    }
    if !differ.is_empty() {
        bail!("replay differs from the manifest in outputs: {}", differ.join(", "));
    }
    println!("replay reproduced {} outputs byte for byte", m.outputs.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Command::Replay(args) = &cli.command {
        return replay(args);
    }
    let mut overrides = match &cli.config {
        Some(path) => config::load_file(path)?,
        None => json!({}),
    };
    for s in &cli.set {
        let (key, value) = config::parse_set(s)?;
        config::set_path(&mut overrides, &key, value)?;
    }
    if let Some(seed) = cli.seed {
        config::set_path(&mut overrides, "seed", seed.into())?;
    }
    let name = subcommand_name(&cli.command);
    let plan = plan(cli.command)?;
    for (key, value) in plan.sets {
        config::set_path(&mut overrides, key, value)?;
    }
    match name {
        "simulate" => launch::<simulate::Simulate>(overrides, &plan.io),
        "calibrate" => launch::<calibrate::Calibrate>(overrides, &plan.io),
        "ablation" => launch::<ablation::Ablation>(overrides, &plan.io),
        "synth-audio" => launch::<audio::SynthAudio>(overrides, &plan.io),
        "localize" => launch::<audio::Localize>(overrides, &plan.io),
        "track" => launch::<track::Track>(overrides, &plan.io),
        "cupmap" => launch::<track::Cupmap>(overrides, &plan.io),
        _ => launch::<track::TrainTransition>(overrides, &plan.io),
    }?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
