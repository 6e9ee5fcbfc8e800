use std::path::Path;

use super::MultiChannelAudio;
use crate::error::{Error, Result};

/// Writes 16-bit PCM, interleaved A, B, C. Samples are clipped to [−1, 1].
pub fn write_wav(path: &Path, audio: &MultiChannelAudio) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 3,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for i in 0..audio.len() {
        for ch in &audio.channels {
            w.write_sample((ch[i].clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
        }
    }
    w.finalize()?;
    Ok(())
}

/// Reads a three-channel WAV (integer PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<MultiChannelAudio> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 3 {
        return Err(Error::Format(format!("expected 3 channels, found {}", spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
    };
    let mut channels: [Vec<f64>; 3] = Default::default();
    for frame in samples.chunks_exact(3) {
        for c in 0..3 {
            channels[c].push(frame[c]);
        }
    }
    MultiChannelAudio::new(spec.sample_rate, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let ch: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() * 0.5).collect();
        let audio = MultiChannelAudio::new(44100, [ch.clone(), ch.iter().map(|v| -v).collect(), vec![2.0; 100]]).unwrap();
        write_wav(&p, &audio).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate, 44100);
        for (a, b) in audio.channels[0].iter().zip(&back.channels[0]) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
        assert!(back.channels[2].iter().all(|v| (v - 32767.0 / 32768.0).abs() < 1e-12));
    }
}
