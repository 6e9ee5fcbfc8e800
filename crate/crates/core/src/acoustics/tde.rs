//! Time-delay estimation between microphone channels.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::detect::{first_crossing, OnsetPolicy};
use super::TimeDelays;
use crate::error::{invalid, Error, Result};

/// Shortest analysis window accepted by the phase-correlation estimator, s.
pub const MIN_WINDOW_SECONDS: f64 = 0.02;

/// Delay `τ` with `sig_a(t) ≈ sig_b(t − τ)`, from the peak of the
/// phase-normalised cross-spectrum (GCC-PHAT), refined to sub-sample
/// precision by a parabola through the peak and its neighbours. When
/// `max_delay` is given only lags within it are searched.
pub fn phase_correlation_delay(sig_a: &[f64], sig_b: &[f64], sample_rate: f64, max_delay: Option<f64>) -> Result<f64> {
    if sig_a.len() != sig_b.len() {
        return Err(invalid("phase correlation needs equal-length windows"));
    }
    if !(sample_rate > 0.0) {
        return Err(invalid("sample rate must be positive"));
    }
    if (sig_a.len() as f64) < MIN_WINDOW_SECONDS * sample_rate - 1e-9 {
        return Err(invalid(format!("window of {} samples is shorter than 20 ms", sig_a.len())));
    }
    let energy = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
    if !(energy(sig_a) > 0.0) || !(energy(sig_b) > 0.0) {
        return Err(Error::NoSignal("silent window".into()));
    }
    let n = (2 * sig_a.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |s: &[f64]| {
        let mut buf: Vec<Complex<f64>> = s.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };
    let a = spectrum(sig_a);
    let b = spectrum(sig_b);
    let mut cross: Vec<Complex<f64>> = a.iter().zip(&b).map(|(x, y)| x * y.conj()).collect();
    let peak_mag = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if !(peak_mag > 0.0) {
        return Err(Error::NoSignal("no common spectral content".into()));
    }
    let eps = peak_mag * 1e-12;
    for c in &mut cross {
        let m = c.norm();
        *c = if m > eps { *c / m } else { Complex::new(0.0, 0.0) };
    }
    inv.process(&mut cross);
    let corr: Vec<f64> = cross.iter().map(|c| c.re).collect();

    let half = (n / 2) as i64;
    let limit = match max_delay {
        Some(d) => ((d * sample_rate).ceil() as i64 + 1).min(half - 1),
        None => half - 1,
    };
    let at = |lag: i64| corr[lag.rem_euclid(n as i64) as usize];
    let mut best = 0i64;
    for lag in -limit..=limit {
        if at(lag) > at(best) {
            best = lag;
        }
    }
    let (ym, y0, yp) = (at(best - 1), at(best), at(best + 1));
    let denom = ym - 2.0 * y0 + yp;
    let offset = if denom < 0.0 { (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Ok((best as f64 + offset) / sample_rate)
}

/// Onset-difference delays for one set of channel buffers. `history` holds
/// the audio immediately preceding each buffer and sets the threshold.
pub fn peak_detection_delay(
    buffers: [&[f64]; 3],
    history: [&[f64]; 3],
    policy: &OnsetPolicy,
    sample_rate: f64,
) -> Result<TimeDelays> {
    let mut onsets = [0usize; 3];
    for ch in 0..3 {
        let threshold = policy.threshold(history[ch]);
        onsets[ch] = first_crossing(buffers[ch], threshold).ok_or(Error::NoDetection)?;
    }
    Ok(TimeDelays {
        phi_ab: (onsets[0] as f64 - onsets[1] as f64) / sample_rate,
        phi_ac: (onsets[0] as f64 - onsets[2] as f64) / sample_rate,
    })
}
