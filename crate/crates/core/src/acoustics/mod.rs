//! Synthetic impact audio and bounce localization from inter-microphone
//! time delays.

mod detect;
mod localize;
mod synth;
mod tde;
mod wav;

pub use detect::{detect_bounce_events, DetectionMode, OnlineDetector, OnsetPolicy, ONLINE_BUFFER_SECONDS};
pub use localize::{forward_delays, localize, LOCALIZE_MAX_ITERATIONS};
pub use synth::{noise_std_for_snr, synthesize_impact, synthesize_impacts, Impact};
pub use tde::{peak_detection_delay, phase_correlation_delay};
pub use wav::{read_wav, write_wav};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Side of the square table, m.
pub const TABLE_SIZE: f64 = 0.55;
/// Microphone height above the table, m (3 in).
pub const MIC_HEIGHT: f64 = 0.0762;
pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;
pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicArray {
    /// Microphones A, B, C.
    pub positions: [Vector3<f64>; 3],
}

impl Default for MicArray {
    /// Three corners of the table at microphone height.
    fn default() -> Self {
        MicArray {
            positions: [
                Vector3::new(0.0, 0.0, MIC_HEIGHT),
                Vector3::new(TABLE_SIZE, 0.0, MIC_HEIGHT),
                Vector3::new(0.0, TABLE_SIZE, MIC_HEIGHT),
            ],
        }
    }
}

impl MicArray {
    pub fn new(positions: [Vector3<f64>; 3]) -> Result<Self> {
        let a = MicArray { positions };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.positions.iter().flat_map(|p| p.iter()).all(|c| c.is_finite()) {
            return Err(invalid("microphone positions must be finite"));
        }
        let [a, b, c] = self.positions;
        let area = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        if area.abs() < 1e-9 {
            return Err(invalid("microphones are collinear in the horizontal plane"));
        }
        Ok(())
    }

    /// Horizontal centroid of the microphones.
    pub fn centroid(&self) -> Vector2<f64> {
        self.positions.iter().map(|p| p.xy()).sum::<Vector2<f64>>() / 3.0
    }

    /// Largest arrival-time difference between any two microphones, s.
    pub fn max_delay(&self, v_sound: f64) -> f64 {
        let [a, b, c] = self.positions;
        (a - b).norm().max((a - c).norm()).max((b - c).norm()) / v_sound
    }
}

/// Impact waveform: a damped sinusoid plus a short broadband click at the
/// onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpulseTemplate {
    pub frequency: f64,
    pub decay: f64,
    pub click_gain: f64,
    pub click_decay: f64,
    /// Peak amplitude at `reference_distance`.
    pub amplitude: f64,
    pub reference_distance: f64,
}

impl Default for ImpulseTemplate {
    fn default() -> Self {
        ImpulseTemplate {
            frequency: 4000.0,
            decay: 0.003,
            click_gain: 1.0,
            click_decay: 1e-4,
            amplitude: 0.1,
            reference_distance: 0.1,
        }
    }
}

impl ImpulseTemplate {
    /// Unit-distance waveform at `t` seconds after arrival.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let ring = (-t / self.decay).exp() * (2.0 * std::f64::consts::PI * self.frequency * t).sin();
        let click = if self.click_decay > 0.0 { self.click_gain * (-t / self.click_decay).exp() } else { 0.0 };
        self.amplitude * (ring + click)
    }

    /// Time after which the waveform is negligible.
    pub fn duration(&self) -> f64 {
        12.0 * self.decay.max(self.click_decay)
    }
}

/// A delayed, scaled copy of the direct sound on every channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    pub delay: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcousticConfig {
    pub v_sound: f64,
    pub sample_rate: u32,
    pub template: ImpulseTemplate,
    /// Standard deviation of white noise added to every channel.
    pub noise_std: f64,
    pub echoes: Vec<Echo>,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        AcousticConfig {
            v_sound: DEFAULT_SPEED_OF_SOUND,
            sample_rate: DEFAULT_SAMPLE_RATE,
            template: ImpulseTemplate::default(),
            noise_std: 0.0,
            echoes: Vec::new(),
        }
    }
}

impl AcousticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_sound > 0.0) || self.sample_rate == 0 || !(self.noise_std >= 0.0) {
            return Err(invalid("speed of sound and sample rate must be positive, noise non-negative"));
        }
        if self.echoes.iter().any(|e| !(e.delay > 0.0) || !e.gain.is_finite()) {
            return Err(invalid("echo delays must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelAudio {
    pub sample_rate: u32,
    pub channels: [Vec<f64>; 3],
}

impl MultiChannelAudio {
    pub fn new(sample_rate: u32, channels: [Vec<f64>; 3]) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if channels[1].len() != channels[0].len() || channels[2].len() != channels[0].len() {
            return Err(invalid("channels must have equal length"));
        }
        Ok(MultiChannelAudio { sample_rate, channels })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inter-microphone arrival differences `Φ_AB = t_A − t_B`, `Φ_AC = t_A − t_C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDelays {
    pub phi_ab: f64,
    pub phi_ac: f64,
}
