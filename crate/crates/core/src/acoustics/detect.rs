//! Onset detection and end-to-end bounce localization from audio.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::localize::localize;
use super::tde::phase_correlation_delay;
use super::{AcousticConfig, MicArray, MultiChannelAudio, TimeDelays};
use crate::error::Result;
use crate::sim::BounceEvent;

/// Length of one streaming buffer, s.
pub const ONLINE_BUFFER_SECONDS: f64 = 0.011;
/// Phase-correlation analysis window, in samples (about 46 ms at 44.1 kHz).
const OFFLINE_WINDOW: usize = 2048;
/// Audio kept before the earliest onset in an offline window, s.
const OFFLINE_LEAD: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    Offline,
    Online,
}

/// Adaptive onset threshold: `max(multiplier · RMS(history), floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnsetPolicy {
    pub multiplier: f64,
    /// Length of the noise history, s.
    pub history: f64,
    pub floor: f64,
    /// Dead time on a channel after it fires, s.
    pub refractory: f64,
}

impl Default for OnsetPolicy {
    fn default() -> Self {
        OnsetPolicy { multiplier: 8.0, history: 0.05, floor: 1e-4, refractory: 0.03 }
    }
}

impl OnsetPolicy {
    pub fn threshold(&self, history: &[f64]) -> f64 {
        let rms = if history.is_empty() {
            0.0
        } else {
            (history.iter().map(|v| v * v).sum::<f64>() / history.len() as f64).sqrt()
        };
        (self.multiplier * rms).max(self.floor)
    }
}

pub(crate) fn first_crossing(buf: &[f64], threshold: f64) -> Option<usize> {
    buf.iter().position(|v| v.abs() > threshold)
}

/// Streaming onset detector. Buffers are pushed in order; each call
/// returns the absolute sample indices of onsets completed on all three
/// channels. Nothing is detected during the first `policy.history` seconds.
#[derive(Debug, Clone)]
pub struct OnlineDetector {
    policy: OnsetPolicy,
    history_len: usize,
    refractory_len: usize,
    max_lag: usize,
    history: [VecDeque<f64>; 3],
    pending: [Option<usize>; 3],
    quiet_until: [usize; 3],
    position: usize,
}

impl OnlineDetector {
    pub fn new(policy: OnsetPolicy, sample_rate: f64, array: &MicArray, v_sound: f64) -> Self {
        OnlineDetector {
            policy,
            history_len: (policy.history * sample_rate).round() as usize,
            refractory_len: (policy.refractory * sample_rate).round() as usize,
            max_lag: (array.max_delay(v_sound) * sample_rate).ceil() as usize + 2,
            history: Default::default(),
            pending: [None; 3],
            quiet_until: [0; 3],
            position: 0,
        }
    }

    pub fn push(&mut self, buffers: [&[f64]; 3]) -> Vec<[usize; 3]> {
        let len = buffers[0].len();
        let start = self.position;
        for ch in 0..3 {
            // no noise estimate until a full history has been seen
            if self.pending[ch].is_some() || self.history[ch].len() < self.history_len {
                continue;
            }
            let hist = self.history[ch].make_contiguous();
            let threshold = self.policy.threshold(hist);
            let skip = self.quiet_until[ch].saturating_sub(start).min(len);
            if let Some(i) = first_crossing(&buffers[ch][skip..], threshold) {
                self.pending[ch] = Some(start + skip + i);
            }
        }
        let mut out = Vec::new();
        if self.pending.iter().all(|p| p.is_some()) {
            let on = self.pending.map(|p| p.unwrap_or(0));
            let lo = *on.iter().min().unwrap_or(&0);
            let hi = *on.iter().max().unwrap_or(&0);
            if hi - lo <= self.max_lag {
                out.push(on);
                for ch in 0..3 {
                    self.quiet_until[ch] = on[ch] + self.refractory_len;
                }
                self.pending = [None; 3];
            } else {
                // the earliest onset cannot belong to the same impact as the latest
                let ch = on.iter().position(|&o| o == lo).unwrap_or(0);
                self.quiet_until[ch] = lo + self.refractory_len;
                self.pending[ch] = None;
            }
        }
        // drop onsets whose partners can no longer arrive
        let end = start + len;
        for ch in 0..3 {
            if let Some(p) = self.pending[ch] {
                if end > p + self.max_lag && self.pending.iter().any(|q| q.is_none()) {
                    self.pending[ch] = None;
                    self.quiet_until[ch] = p + self.refractory_len;
                }
            }
        }
        for ch in 0..3 {
            self.history[ch].extend(buffers[ch].iter().copied());
            while self.history[ch].len() > self.history_len {
                self.history[ch].pop_front();
            }
        }
        self.position = end;
        out
    }
}

/// Onset triples over the whole recording, streamed in fixed buffers.
fn stream_onsets(audio: &MultiChannelAudio, array: &MicArray, cfg: &AcousticConfig, policy: OnsetPolicy) -> Vec<[usize; 3]> {
    let fs = audio.sample_rate as f64;
    let buf = (ONLINE_BUFFER_SECONDS * fs).round().max(1.0) as usize;
    let mut det = OnlineDetector::new(policy, fs, array, cfg.v_sound);
    let mut onsets = Vec::new();
    let mut start = 0;
    while start < audio.len() {
        let end = (start + buf).min(audio.len());
        let chunk = [0, 1, 2].map(|c| &audio.channels[c][start..end]);
        onsets.extend(det.push(chunk));
        start = end;
    }
    onsets
}

/// Window of `len` samples from `start`, zero-padded past the end.
fn window(ch: &[f64], start: usize, len: usize) -> Vec<f64> {
    (start..start + len).map(|i| ch.get(i).copied().unwrap_or(0.0)).collect()
}

/// Locates every impact in `audio`. Onsets come from the streaming
/// detector in both modes; offline mode then re-estimates the delays by
/// phase correlation over a window around each onset. Events whose delays
/// cannot be localized are dropped.
pub fn detect_bounce_events(
    audio: &MultiChannelAudio,
    mode: DetectionMode,
    array: &MicArray,
    cfg: &AcousticConfig,
    policy: &OnsetPolicy,
) -> Result<Vec<BounceEvent>> {
    cfg.validate()?;
    array.validate()?;
    let fs = audio.sample_rate as f64;
    let onsets = stream_onsets(audio, array, cfg, *policy);
    let min_window = (super::tde::MIN_WINDOW_SECONDS * fs).ceil() as usize;
    let lead = (OFFLINE_LEAD * fs).round() as usize;
    let mut events: Vec<BounceEvent> = Vec::new();
    for (k, on) in onsets.iter().enumerate() {
        let delays = match mode {
            DetectionMode::Online => TimeDelays {
                phi_ab: (on[0] as f64 - on[1] as f64) / fs,
                phi_ac: (on[0] as f64 - on[2] as f64) / fs,
            },
            DetectionMode::Offline => {
                let start = on.iter().min().copied().unwrap_or(0).saturating_sub(lead);
                let next = onsets.get(k + 1).map(|n| n.iter().min().copied().unwrap_or(0).saturating_sub(lead));
                let len = next.map_or(OFFLINE_WINDOW, |n| (n - start).clamp(min_window, OFFLINE_WINDOW));
                let w = [0, 1, 2].map(|c| window(&audio.channels[c], start, len));
                let max_delay = Some(array.max_delay(cfg.v_sound));
                let ab = phase_correlation_delay(&w[0], &w[1], fs, max_delay);
                let ac = phase_correlation_delay(&w[0], &w[2], fs, max_delay);
                match (ab, ac) {
                    (Ok(phi_ab), Ok(phi_ac)) => TimeDelays { phi_ab, phi_ac },
                    _ => continue,
                }
            }
        };
        let Ok(s) = localize(&delays, array, cfg.v_sound) else { continue };
        let src = nalgebra::Vector3::new(s.x, s.y, 0.0);
        let time = on[0] as f64 / fs - (src - array.positions[0]).norm() / cfg.v_sound;
        if events.last().is_some_and(|e| time <= e.time) {
            continue;
        }
        events.push(BounceEvent { time, position: Vector2::new(s.x, s.y) });
    }
    Ok(events)
}
