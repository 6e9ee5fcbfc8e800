use anyhow::{bail, Result};
use bouncekit::acoustics::{
    detect_bounce_events, noise_std_for_snr, read_wav, synthesize_impacts, write_wav, AcousticConfig, DetectionMode, Impact,
    MicArray, OnsetPolicy,
};
use bouncekit::rng::{derive_seed, seeded};
use bouncekit::sim::{simulate_drop, BounceEvent, SimParams};
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{bounces, Io, Job};
use crate::config::field;

/// One drop at a random spot on the table, rendered to three-channel
/// audio. The true bounces go to a `.truth.csv` beside the WAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthAudio {
    pub restitution: f64,
    pub log10_kappa: f64,
    pub height: f64,
    pub init_velocity_sigma: f64,
    pub bounces: usize,
    /// Drop point ranges on the table, m.
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// Noise level relative to the first impact's mean peak power.
    pub snr_db: f64,
    /// Silence before the release and after the last impact, s.
    pub lead: f64,
    pub tail: f64,
    pub array: MicArray,
    /// `acoustic.noise_std` is replaced by the value `snr_db` implies.
    pub acoustic: AcousticConfig,
}

impl Default for SynthAudio {
    fn default() -> Self {
        SynthAudio {
            restitution: 0.85,
            log10_kappa: 3.0,
            height: 0.26,
            init_velocity_sigma: 0.01,
            bounces: 4,
            x_range: [0.2, 0.35],
            y_range: [0.2, 0.35],
            snr_db: 20.0,
            lead: 0.1,
            tail: 0.1,
            array: MicArray::default(),
            acoustic: AcousticConfig::default(),
        }
    }
}

impl Job for SynthAudio {
    const NAME: &'static str = "synth-audio";

    fn defaults(_: &Value) -> Result<Self> {
        Ok(SynthAudio::default())
    }

    fn validate(&self) -> Result<()> {
        field("restitution", SimParams::new(self.restitution, self.log10_kappa).validate())?;
        if !(self.height > 0.0) || self.bounces == 0 {
            bail!("config field `height`/`bounces`: must be positive");
        }
        for (name, r) in [("x_range", self.x_range), ("y_range", self.y_range)] {
            if !(r[0] <= r[1]) {
                bail!("config field `{name}`: lower end exceeds upper end");
            }
        }
        if !self.snr_db.is_finite() || !(self.lead >= 0.0) || !(self.tail >= 0.0) {
            bail!("config field `snr_db`/`lead`/`tail`: must be finite and non-negative");
        }
        field("array", self.array.validate())?;
        field("acoustic", self.acoustic.validate())
    }

    fn run(&self, seed: u64, io: &Io) -> Result<String> {
        let mut rng = seeded(derive_seed(seed, "synth-audio"));
        let mut u = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..=r[1]) } else { r[0] };
        let origin = Vector2::new(u(self.x_range), u(self.y_range));
        let params = SimParams::new(self.restitution, self.log10_kappa);
        let events = simulate_drop(&params, self.height, self.init_velocity_sigma, self.bounces, &mut rng)?;
        let truth: Vec<BounceEvent> = events
            .iter()
            .map(|e| BounceEvent { time: self.lead + e.time, position: e.position + origin })
            .collect();
        let impacts: Vec<Impact> = truth
            .iter()
            .map(|e| Impact { source: Vector3::new(e.position.x, e.position.y, 0.0), time: e.time })
            .collect();
        let mut cfg = self.acoustic.clone();
        cfg.noise_std = noise_std_for_snr(&impacts[0].source, &self.array, &cfg, self.snr_db);
        let duration = truth.last().map_or(0.0, |e| e.time) + self.tail + self.array.max_delay(cfg.v_sound);
        let audio = synthesize_impacts(&impacts, duration, &self.array, &cfg, &mut rng)?;
        write_wav(io.out(), &audio)?;
        if let Some(p) = io.output("truth") {
            bounces::write(p, &[truth.clone()])?;
        }
        Ok(format!("{} impacts around ({:.3}, {:.3}) m, {:.2} s of audio", truth.len(), origin.x, origin.y, duration))
    }
}

/// Bounce events from three-channel audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Localize {
    pub mode: DetectionMode,
    pub array: MicArray,
    pub acoustic: AcousticConfig,
    pub onset: OnsetPolicy,
}

impl Default for Localize {
    fn default() -> Self {
        Localize {
            mode: DetectionMode::Offline,
            array: MicArray::default(),
            acoustic: AcousticConfig::default(),
            onset: OnsetPolicy::default(),
        }
    }
}

impl Job for Localize {
    const NAME: &'static str = "localize";

    fn defaults(_: &Value) -> Result<Self> {
        Ok(Localize::default())
    }

    fn validate(&self) -> Result<()> {
        field("array", self.array.validate())?;
        field("acoustic", self.acoustic.validate())?;
        if !(self.onset.multiplier > 0.0) || !(self.onset.history >= 0.0) || !(self.onset.refractory >= 0.0) {
            bail!("config field `onset`: multiplier must be positive, durations non-negative");
        }
        Ok(())
    }

    fn run(&self, _seed: u64, io: &Io) -> Result<String> {
        let audio = read_wav(io.required_input("wav")?)?;
        if audio.sample_rate != self.acoustic.sample_rate {
            bail!(
                "config field `acoustic.sample_rate`: {} Hz does not match the recording's {} Hz",
                self.acoustic.sample_rate,
                audio.sample_rate
            );
        }
        let events = detect_bounce_events(&audio, self.mode, &self.array, &self.acoustic, &self.onset)?;
        bounces::write(io.out(), &[events.clone()])?;
        Ok(format!("{} bounce events", events.len()))
    }
}
