use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnn_asr::frontend::*;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

#[test]
fn one_second_gives_98_frames_of_123() {
    let feats = extract(&noise(16_000, 1), &FrontendConfig::default());
    assert_eq!(feats.len(), 98);
    assert!(feats.iter().all(|f| f.len() == FEATURE_DIM && f.iter().all(|v| v.is_finite())));
    assert_eq!(FEATURE_DIM, 123);
}

#[test]
fn energy_term_obeys_parseval() {
    let a = Analyzer::new(16_000);
    let frame = &frame_signal(&noise(400, 2), 16_000)[0];
    let power = a.power_spectrum(frame);
    let n = 512.0;
    let half = power.len() - 1;
    let spectral = (power[0] + power[half] + 2.0 * power[1..half].iter().sum::<f64>()) / n;
    let energy = a.logmel_energy(frame)[MEL_BINS];
    assert!((energy - spectral.ln()).abs() < 1e-9);
}

#[test]
fn tone_at_filter_center_dominates_neighbours() {
    let a = Analyzer::new(16_000);
    for j in [10, 20, 30] {
        let f = a.filterbank().center_hz(j);
        let tone: Vec<f64> = (0..400).map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / 16_000.0).sin()).collect();
        let out = a.logmel_energy(&frame_signal(&tone, 16_000)[0]);
        assert!(out[j] > out[j - 1] && out[j] > out[j + 1], "filter {j}: {:?}", &out[j - 1..=j + 1]);
    }
}

#[test]
fn constant_audio_gives_zero_deltas_and_zero_output() {
    let samples = vec![0.25; 16_000];
    let frames = frame_signal(&samples, 16_000);
    assert!(frames.windows(2).all(|w| w[0] == w[1]));
    let a = Analyzer::new(16_000);
    let statics: Vec<Vec<f64>> = frames.iter().map(|f| a.logmel_energy(f)).collect();
    let full = add_deltas(&statics);
    assert!(full.iter().all(|f| f[STATIC_DIM..].iter().all(|&v| v == 0.0)));
    let out = extract(&samples, &FrontendConfig::default());
    assert!(out.iter().all(|f| f.iter().all(|&v| v == 0.0)));
}

fn naive_stats(seq: &[Vec<f64>], lo: usize, hi: usize, d: usize) -> (f64, f64) {
    let n = (hi - lo) as f64;
    let mean = seq[lo..hi].iter().map(|f| f[d]).sum::<f64>() / n;
    let var = seq[lo..hi].iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

#[test]
fn interior_frames_use_their_centered_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq: Vec<Vec<f64>> = (0..700).map(|t| (0..5).map(|d| rng.gen_range(-2.0..2.0) + 0.01 * t as f64 * d as f64).collect()).collect();
    let out = sliding_normalize(&seq, 300);
    for t in [149, 300, 550] {
        let (lo, hi) = (t - 149, t + 150);
        for d in 0..5 {
            let (mean, std) = naive_stats(&seq, lo, hi, d);
            assert!((out[t][d] - (seq[t][d] - mean) / std).abs() < 1e-9);
            // the window seen through frame t's transform is standardized
            let z: Vec<f64> = seq[lo..hi].iter().map(|f| (f[d] - mean) / std).collect();
            let zm = z.iter().sum::<f64>() / z.len() as f64;
            let zv = z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / z.len() as f64;
            assert!(zm.abs() < 1e-6);
            assert!((zv - 1.0).abs() < 1e-3);
        }
    }
    // clipped at the start
    let (mean, std) = naive_stats(&seq, 0, 150, 2);
    assert!((out[0][2] - (seq[0][2] - mean) / std).abs() < 1e-9);
}

#[test]
fn renormalizing_a_constant_variance_stream_is_idempotent() {
    // period 23 divides the 299-frame span, so every full window has the same statistics
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let period: Vec<f64> = (0..23).map(|_| rng.gen_range(-1.0..1.0) * 3.0 + 7.0).collect();
    let seq: Vec<Vec<f64>> = (0..1200).map(|t| vec![period[t % 23], -period[(t + 5) % 23]]).collect();
    let once = sliding_normalize(&seq, 300);
    let twice = sliding_normalize(&once, 300);
    for t in 298..1200 - 298 {
        for d in 0..2 {
            assert!((once[t][d] - twice[t][d]).abs() < 1e-6, "frame {t}");
        }
    }
}

#[test]
fn causal_mode_has_no_lookahead() {
    let seq: Vec<Vec<f64>> = (0..50).map(|t| vec![(t as f64).sin()]).collect();
    let mut n = Normalizer::new(Normalization::Causal { window: 10 });
    assert_eq!(n.lookahead(), 0);
    let out = normalize(&seq, &Normalization::Causal { window: 10 });
    let (mean, std) = naive_stats(&seq, 30, 40, 0);
    assert!((out[39][0] - (seq[39][0] - mean) / std).abs() < 1e-12);
    assert_eq!(n.push(vec![1.0]).len(), 1);
}

#[test]
fn global_statistics_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("stats.txt");
    std::fs::write(&p, "mean 1 2\nvar 4 0\n").unwrap();
    let mode = read_global_stats(&p).unwrap();
    let out = normalize(&[vec![3.0, 2.0]], &mode);
    assert_eq!(out, vec![vec![1.0, 0.0]]);
    std::fs::write(&p, "mean 1 2\n").unwrap();
    assert!(read_global_stats(&p).is_err());
}

#[test]
fn pipeline_is_deterministic_and_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    let samples = noise(8_000, 5);
    write_wav(&wav, &samples, 16_000).unwrap();
    let (read, rate) = read_wav(&wav).unwrap();
    assert_eq!(rate, 16_000);
    assert!(read.iter().zip(&samples).all(|(a, b)| (a - b).abs() <= 0.5 / 32768.0 + 1e-12));
    let a = extract(&read, &FrontendConfig::default());
    let b = extract(&read, &FrontendConfig::default());
    assert_eq!(a, b);

    let feats = dir.path().join("a.feat");
    write_feature_file(&feats, &a).unwrap();
    let back = read_feature_file(&feats).unwrap();
    assert_eq!(back.len(), a.len());
    for (x, y) in back.iter().zip(&a) {
        assert!(x.iter().zip(y).all(|(p, q)| *p == (*q as f32) as f64));
    }
    let bytes = std::fs::read(&feats).unwrap();
    assert!(read_features(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn stereo_wav_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    let spec = hound::WavSpec { channels: 2, sample_rate: 16_000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    w.write_sample(0i16).unwrap();
    w.write_sample(0i16).unwrap();
    w.finalize().unwrap();
    assert!(matches!(read_wav(&p), Err(FrontendError::WavFormat(_))));
}
