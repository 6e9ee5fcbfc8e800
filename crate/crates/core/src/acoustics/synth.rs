use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AcousticConfig, MicArray, MultiChannelAudio};
use crate::error::{invalid, Result};

/// Furthest supported source distance from any microphone, m.
const MAX_SOURCE_DISTANCE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impact {
    pub source: Vector3<f64>,
    pub time: f64,
}

fn add_arrival(channel: &mut [f64], arrival: f64, scale: f64, cfg: &AcousticConfig) {
    let fs = cfg.sample_rate as f64;
    let first = (arrival * fs).ceil().max(0.0) as usize;
    let last = (((arrival + cfg.template.duration()) * fs).ceil() as usize).min(channel.len());
    for (n, s) in channel.iter_mut().enumerate().take(last).skip(first) {
        *s += scale * cfg.template.value(n as f64 / fs - arrival);
    }
}

/// Renders `impacts` into `duration` seconds of three-channel audio. The
/// continuous waveform is evaluated at each sample time, so fractional
/// delays are exact.
pub fn synthesize_impacts<R: Rng + ?Sized>(
    impacts: &[Impact],
    duration: f64,
    array: &MicArray,
    cfg: &AcousticConfig,
    rng: &mut R,
) -> Result<MultiChannelAudio> {
    cfg.validate()?;
    array.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(invalid("audio duration must be positive"));
    }
    let n = (duration * cfg.sample_rate as f64).ceil() as usize;
    let mut channels: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    for imp in impacts {
        if !imp.time.is_finite() || !imp.source.iter().all(|c| c.is_finite()) {
            return Err(invalid("impact must be finite"));
        }
        for (ch, mic) in channels.iter_mut().zip(&array.positions) {
            let r = (imp.source - mic).norm();
            if r > MAX_SOURCE_DISTANCE {
                return Err(invalid(format!("source is {r:.2} m from a microphone")));
            }
            let r = r.max(1e-3);
            let arrival = imp.time + r / cfg.v_sound;
            let scale = cfg.template.reference_distance / r;
            add_arrival(ch, arrival, scale, cfg);
            for e in &cfg.echoes {
                add_arrival(ch, arrival + e.delay, scale * e.gain, cfg);
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| invalid(e.to_string()))?;
        for ch in &mut channels {
            for s in ch.iter_mut() {
                *s += noise.sample(rng);
            }
        }
    }
    MultiChannelAudio::new(cfg.sample_rate, channels)
}

/// A single impact, with enough trailing audio for the waveform to decay.
pub fn synthesize_impact<R: Rng + ?Sized>(
    source: &Vector3<f64>,
    strike_time: f64,
    array: &MicArray,
    cfg: &AcousticConfig,
    rng: &mut R,
) -> Result<MultiChannelAudio> {
    let reach = array.positions.iter().map(|m| (source - m).norm()).fold(0.0, f64::max) / cfg.v_sound;
    let echo = cfg.echoes.iter().map(|e| e.delay).fold(0.0, f64::max);
    let duration = strike_time + reach + echo + cfg.template.duration() + 0.02;
    synthesize_impacts(&[Impact { source: *source, time: strike_time }], duration, array, cfg, rng)
}

/// Noise standard deviation giving `snr_db` on the weakest channel for a
/// source at `source`. Signal power is the mean square of the direct sound
/// over its first decay constant.
pub fn noise_std_for_snr(source: &Vector3<f64>, array: &MicArray, cfg: &AcousticConfig, snr_db: f64) -> f64 {
    let fs = cfg.sample_rate as f64;
    let n = ((cfg.template.decay * fs).round() as usize).max(1);
    let unit_power = (0..n).map(|k| cfg.template.value(k as f64 / fs).powi(2)).sum::<f64>() / n as f64;
    let farthest = array.positions.iter().map(|m| (source - m).norm()).fold(0.0, f64::max).max(1e-3);
    let rms = unit_power.sqrt() * cfg.template.reference_distance / farthest;
    rms / 10f64.powf(snr_db / 20.0)
}
