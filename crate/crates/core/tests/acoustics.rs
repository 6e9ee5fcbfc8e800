use bouncekit::acoustics::*;
use bouncekit::rng::stream;
use bouncekit::Error;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const FS: f64 = 44100.0;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn random_table_point<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(rng.random_range(0.0..TABLE_SIZE), rng.random_range(0.0..TABLE_SIZE), 0.0)
}

fn measured_delays(audio: &MultiChannelAudio, array: &MicArray) -> TimeDelays {
    let max = Some(array.max_delay(DEFAULT_SPEED_OF_SOUND));
    let [a, b, c] = &audio.channels;
    TimeDelays {
        phi_ab: phase_correlation_delay(a, b, FS, max).unwrap(),
        phi_ac: phase_correlation_delay(a, c, FS, max).unwrap(),
    }
}

#[test]
fn equidistant_source_has_zero_delays() {
    let array = MicArray::default();
    // circumcentre of the right triangle: midpoint of the hypotenuse
    let s = Vector3::new(TABLE_SIZE / 2.0, TABLE_SIZE / 2.0, 0.0);
    let audio = synthesize_impact(&s, 0.01, &array, &AcousticConfig::default(), &mut stream(0, 0)).unwrap();
    let d = measured_delays(&audio, &array);
    assert!(d.phi_ab.abs() * FS <= 0.25 && d.phi_ac.abs() * FS <= 0.25, "{d:?}");
}

#[test]
fn one_millisecond_path_difference() {
    let array = MicArray::default();
    let range_diff = |x: f64| {
        let s = Vector3::new(x, 0.0, 0.0);
        (s - array.positions[0]).norm() - (s - array.positions[1]).norm()
    };
    // bisection on the A-B edge for a range difference of -0.343 m
    let (mut lo, mut hi) = (0.0, TABLE_SIZE);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if range_diff(mid) < -0.343 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = Vector3::new(lo, 0.0, 0.0);
    let audio = synthesize_impact(&s, 0.01, &array, &AcousticConfig::default(), &mut stream(0, 0)).unwrap();
    let d = measured_delays(&audio, &array);
    assert!((d.phi_ab + 1e-3).abs() * FS <= 0.25, "phi_ab = {}", d.phi_ab);
}

#[test]
fn synthesized_pair_at_20_db() {
    let t = ImpulseTemplate::default();
    let true_delay = 0.31e-3;
    let noise_std = {
        let n = (t.decay * FS).round() as usize;
        let p = (0..n).map(|k| t.value(k as f64 / FS).powi(2)).sum::<f64>() / n as f64;
        p.sqrt() / 10.0
    };
    let noise = Normal::new(0.0, noise_std).unwrap();
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let mut rng = stream(3, trial);
        let n = 2048;
        let a: Vec<f64> = (0..n).map(|i| t.value(i as f64 / FS - 0.005 - true_delay) + noise.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|i| t.value(i as f64 / FS - 0.005) + noise.sample(&mut rng)).collect();
        let d = phase_correlation_delay(&a, &b, FS, None).unwrap();
        worst = worst.max((d - true_delay).abs());
    }
    assert!(worst < 0.05e-3, "worst error {worst}");
}

#[test]
fn onset_delays_agree_with_phase_correlation() {
    let array = MicArray::default();
    let cfg = AcousticConfig::default();
    for i in 0..20 {
        let mut rng = stream(4, i);
        let s = random_table_point(&mut rng);
        let audio = synthesize_impact(&s, 0.06, &array, &cfg, &mut rng).unwrap();
        let reference = measured_delays(&audio, &array);
        let hist = (0.05 * FS) as usize;
        let bufs = [0, 1, 2].map(|c| &audio.channels[c][hist..]);
        let history = [0, 1, 2].map(|c| &audio.channels[c][..hist]);
        let d = peak_detection_delay(bufs, history, &OnsetPolicy::default(), FS).unwrap();
        assert!((d.phi_ab - reference.phi_ab).abs() * FS <= 1.0, "{d:?} vs {reference:?}");
        assert!((d.phi_ac - reference.phi_ac).abs() * FS <= 1.0, "{d:?} vs {reference:?}");
    }
}

#[test]
fn noise_only_buffer_is_not_a_detection() {
    let mut rng = stream(5, 0);
    let noise = Normal::new(0.0, 1e-3).unwrap();
    let ch: Vec<Vec<f64>> = (0..3).map(|_| (0..2700).map(|_| noise.sample(&mut rng)).collect()).collect();
    let bufs = [0, 1, 2].map(|c| &ch[c][2205..]);
    let hist = [0, 1, 2].map(|c| &ch[c][..2205]);
    assert_eq!(peak_detection_delay(bufs, hist, &OnsetPolicy::default(), FS), Err(Error::NoDetection));
}

#[test]
fn localize_on_paper_table_geometry() {
    let array = MicArray::default();
    let s = Vector2::new(0.2, 0.3);
    let found = localize(&forward_delays(&s, &array, 343.0), &array, 343.0).unwrap();
    assert!((found - s).norm() < 1e-6);
}

proptest! {
    #[test]
    fn localize_is_exact_inside_hull(u in 0.01f64..0.99, v in 0.01f64..0.99) {
        // barycentric sample of the microphone triangle
        let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
        let array = MicArray::default();
        let [a, b, c] = array.positions.map(|p| p.xy());
        let s = a + (b - a) * u + (c - a) * v;
        let found = localize(&forward_delays(&s, &array, 343.0), &array, 343.0).unwrap();
        prop_assert!((found - s).norm() <= 1e-6);
    }
}

#[test]
fn three_impacts_round_trip() {
    let array = MicArray::default();
    let mut rng = stream(6, 0);
    let impacts: Vec<Impact> =
        [0.1, 0.45, 0.72].iter().map(|&t| Impact { source: random_table_point(&mut rng), time: t }).collect();
    let base = AcousticConfig::default();
    let cfg = AcousticConfig { noise_std: noise_std_for_snr(&impacts[0].source, &array, &base, 30.0), ..base };
    let audio = synthesize_impacts(&impacts, 1.0, &array, &cfg, &mut rng).unwrap();
    let events = detect_bounce_events(&audio, DetectionMode::Offline, &array, &cfg, &OnsetPolicy::default()).unwrap();
    assert_eq!(events.len(), 3);
    for (ev, imp) in events.iter().zip(&impacts) {
        assert!((ev.time - imp.time).abs() < 0.5e-3, "time {} vs {}", ev.time, imp.time);
        assert!((ev.position - imp.source.xy()).norm() < 7e-3);
    }
}

#[test]
fn silent_audio_has_no_events() {
    let audio = MultiChannelAudio::new(44100, [vec![0.0; 10000], vec![0.0; 10000], vec![0.0; 10000]]).unwrap();
    let ev = detect_bounce_events(&audio, DetectionMode::Online, &MicArray::default(), &AcousticConfig::default(), &OnsetPolicy::default()).unwrap();
    assert!(ev.is_empty());
}

/// Per-event position errors, matched to the nearest true impact in time.
fn event_errors(events: &[bouncekit::sim::BounceEvent], impacts: &[Impact]) -> Vec<f64> {
    events
        .iter()
        .map(|e| {
            let nearest = impacts
                .iter()
                .min_by(|a, b| (a.time - e.time).abs().total_cmp(&(b.time - e.time).abs()))
                .unwrap();
            (e.position - nearest.source.xy()).norm()
        })
        .collect()
}

/// A reverberant room: a strong early reflection plus a decaying tail.
pub fn reverberant(base: AcousticConfig) -> AcousticConfig {
    let mut echoes: Vec<Echo> = (1..=30)
        .map(|k| {
            let d = 0.001 + 0.0013 * k as f64;
            Echo { delay: d, gain: 0.6 * (-d / 0.025).exp() * if k % 2 == 0 { -1.0 } else { 1.0 } }
        })
        .collect();
    echoes.push(Echo { delay: 0.0008, gain: 0.9 });
    AcousticConfig { echoes, ..base }
}

#[test]
fn online_detection_under_reverb_has_outliers() {
    let array = MicArray::default();
    let mut rng = stream(9, 0);
    let impacts: Vec<Impact> =
        (0..40).map(|i| Impact { source: random_table_point(&mut rng), time: 0.06 + 0.07 * i as f64 }).collect();
    let base = reverberant(AcousticConfig::default());
    let centre = Vector3::new(TABLE_SIZE / 2.0, TABLE_SIZE / 2.0, 0.0);
    let cfg = AcousticConfig { noise_std: noise_std_for_snr(&centre, &array, &base, 20.0), ..base };
    let audio = synthesize_impacts(&impacts, 3.0, &array, &cfg, &mut rng).unwrap();
    let online = detect_bounce_events(&audio, DetectionMode::Online, &array, &cfg, &OnsetPolicy::default()).unwrap();
    let errs = event_errors(&online, &impacts);
    let outliers = errs.iter().filter(|e| **e > 0.03).count();
    assert!(outliers >= 1 && outliers * 5 < errs.len(), "{outliers} outliers in {}", errs.len());
}

#[test]
fn wav_round_trip_preserves_detections() {
    let array = MicArray::default();
    let s = Vector3::new(0.3, 0.2, 0.0);
    let base = AcousticConfig::default();
    let cfg = AcousticConfig { noise_std: noise_std_for_snr(&s, &array, &base, 20.0), ..base };
    let audio = synthesize_impact(&s, 0.06, &array, &cfg, &mut stream(7, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("impact.wav");
    write_wav(&path, &audio).unwrap();
    let back = read_wav(&path).unwrap();
    let ev = detect_bounce_events(&back, DetectionMode::Offline, &array, &cfg, &OnsetPolicy::default()).unwrap();
    assert_eq!(ev.len(), 1);
    assert!((ev[0].position - s.xy()).norm() < 7e-3);
}

#[test]
fn round_trip_statistics_at_20_db() {
    let array = MicArray::default();
    let base = AcousticConfig::default();
    let (mut offline, mut online, mut times) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..100 {
        let mut rng = stream(10, i);
        let s = random_table_point(&mut rng);
        let cfg = AcousticConfig { noise_std: noise_std_for_snr(&s, &array, &base, 20.0), ..base.clone() };
        let audio = synthesize_impact(&s, 0.06, &array, &cfg, &mut rng).unwrap();
        for (mode, errs) in [(DetectionMode::Offline, &mut offline), (DetectionMode::Online, &mut online)] {
            let ev = detect_bounce_events(&audio, mode, &array, &cfg, &OnsetPolicy::default()).unwrap();
            errs.push(ev.first().map_or(f64::INFINITY, |e| (e.position - s.xy()).norm()));
            if mode == DetectionMode::Offline {
                times.push(ev.first().map_or(f64::INFINITY, |e| (e.time - 0.06).abs()));
            }
        }
    }
    let (off, on) = (median(offline), median(online));
    assert!(off < 7e-3, "offline median {off}");
    assert!(off <= on, "offline {off} vs online {on}");
    assert!(median(times) < 0.5e-3);
}
