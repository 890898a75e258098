use envdiff_core::rng::{standard_normal, stream};
use envdiff_core::spectral::{
    compress, decompress, hann_periodic, istft, read_wav, stft, write_wav, Audio, SampleFormat,
    StftConfig,
};
use envdiff_core::{ComplexSpectrogram, Error};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

/// White noise through the binomial lowpass `(1 + z⁻¹)⁸`, which has a zero at Nyquist.
fn nyquist_free_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed);
    let white: Vec<f64> = (0..len + 8).map(|_| standard_normal(&mut rng)).collect();
    let taps = [1.0, 8.0, 28.0, 56.0, 70.0, 56.0, 28.0, 8.0, 1.0];
    (0..len)
        .map(|n| taps.iter().enumerate().map(|(k, t)| t * white[n + 8 - k]).sum::<f64>() / 256.0)
        .collect()
}

fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn zeros_in_zeros_out() {
    let cfg = StftConfig::default();
    let s = stft(&vec![0.0; 16_000], &cfg).unwrap();
    assert_eq!(s.shape(), (256, 122));
    assert_eq!(s.norm_sqr(), 0.0);
    assert_eq!(istft(&s, &cfg, 16_000).unwrap(), vec![0.0; 16_000]);
}

#[test]
fn short_signal_and_bad_rows_rejected() {
    let cfg = StftConfig::default();
    assert!(matches!(stft(&[0.0; 511], &cfg), Err(Error::Argument(_))));
    let bad = ComplexSpectrogram::zeros(257, 4);
    assert!(matches!(istft(&bad, &cfg, 100), Err(Error::Dimension { .. })));
}

#[test]
fn bin_centred_sinusoid_stays_in_its_bin() {
    let cfg = StftConfig::default();
    for k in [5usize, 40, 200] {
        let f = k as f64 * 16_000.0 / 512.0;
        let x: Vec<f64> = (0..8000).map(|n| (2.0 * PI * f * n as f64 / 16_000.0 + 0.3).sin()).collect();
        let s = stft(&x, &cfg).unwrap();
        for frame in 2..s.frames() - 2 {
            let total: f64 = (0..256).map(|b| s.get(b, frame).norm_sqr()).sum();
            let near: f64 = (k - 1..=k + 1).map(|b| s.get(b, frame).norm_sqr()).sum();
            assert!(near / total >= 0.99, "k={k} frame={frame}: {}", near / total);
        }
    }
}

#[test]
fn parseval_with_direct_nyquist_term() {
    let cfg = StftConfig::default();
    let x = nyquist_free_noise(4096, 3);
    let s = stft(&x, &cfg).unwrap();
    let w = hann_periodic(512);
    for frame in 0..s.frames() {
        let seg: Vec<f64> = (0..512)
            .map(|i| x.get(frame * 128 + i).copied().unwrap_or(0.0) * w[i])
            .collect();
        let time: f64 = seg.iter().map(|v| v * v).sum();
        let nyq: f64 = seg.iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -v }).sum();
        let kept: f64 = (0..256)
            .map(|b| s.get(b, frame).norm_sqr() * if b == 0 { 1.0 } else { 2.0 })
            .sum();
        let spectral = (kept + nyq * nyq) / 512.0;
        assert!((spectral - time).abs() <= 1e-6 * time, "frame {frame}");
    }
}

#[test]
fn round_trip_reconstructs_interior() {
    let cfg = StftConfig::default();
    let x = nyquist_free_noise(16_000, 4);
    let y = istft(&stft(&x, &cfg).unwrap(), &cfg, x.len()).unwrap();
    let err = rel_rms(&y[512..16_000 - 512], &x[512..16_000 - 512]);
    assert!(err <= 1e-6, "err={err}");
}

#[test]
fn istft_is_linear() {
    let cfg = StftConfig::default();
    let a = stft(&nyquist_free_noise(4000, 5), &cfg).unwrap();
    let b = stft(&nyquist_free_noise(4000, 6), &cfg).unwrap();
    let mut mix = a.scale(0.7);
    mix.axpy(-1.3, &b).unwrap();
    let lhs = istft(&mix, &cfg, 4000).unwrap();
    let ia = istft(&a, &cfg, 4000).unwrap();
    let ib = istft(&b, &cfg, 4000).unwrap();
    for i in 0..4000 {
        assert!((lhs[i] - (0.7 * ia[i] - 1.3 * ib[i])).abs() <= 1e-9);
    }
}

#[test]
fn wav_round_trips_and_rejects_other_rates() {
    let dir = tempfile::tempdir().unwrap();
    let x = nyquist_free_noise(1000, 7).iter().map(|v| v * 0.3).collect::<Vec<_>>();
    let stereo = Audio {
        sample_rate: 16_000,
        channels: vec![x.clone(), x.iter().map(|v| -v).collect()],
    };
    let p = dir.path().join("f.wav");
    write_wav(&p, &stereo, SampleFormat::Float32).unwrap();
    let back = read_wav(&p).unwrap();
    assert_eq!(back.channels.len(), 2);
    for (a, b) in back.channels[0].iter().zip(&x) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert!(back.downmix().iter().all(|v| v.abs() < 1e-7));

    let p = dir.path().join("i.wav");
    write_wav(&p, &Audio::mono(x.clone()), SampleFormat::Int16).unwrap();
    let back = read_wav(&p).unwrap();
    assert!(back.channels[0].iter().zip(&x).all(|(a, b)| (a - b).abs() <= 0.5 / 32768.0 + 1e-12));

    let p = dir.path().join("r.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    w.write_sample(0i16).unwrap();
    w.finalize().unwrap();
    assert!(matches!(read_wav(&p), Err(Error::UnsupportedAudio(_))));
    assert!(matches!(read_wav(&dir.path().join("missing.wav")), Err(Error::Wav { .. })));
}

fn complex() -> impl Strategy<Value = Complex64> {
    (-1e3f64..1e3, -1e3f64..1e3).prop_map(|(re, im)| Complex64::new(re, im))
}

proptest! {
    #[test]
    fn compression_preserves_phase_and_inverts(c in complex()) {
        prop_assume!(c.norm() > 1e-12);
        let cfg = StftConfig::default();
        let s = ComplexSpectrogram::from_flat(vec![c]);
        let k = compress(&s, &cfg).as_slice()[0];
        prop_assert!((k.arg() - c.arg()).abs() <= 1e-15 * (1.0 + c.arg().abs()));
        let back = decompress(&compress(&s, &cfg), &cfg).as_slice()[0];
        prop_assert!((back - c).norm() <= 1e-9 * c.norm());
    }

    #[test]
    fn compression_is_monotone_in_magnitude(a in complex(), b in complex()) {
        let cfg = StftConfig::default();
        let s = ComplexSpectrogram::from_flat(vec![a, b]);
        let k = compress(&s, &cfg);
        let (ka, kb) = (k.as_slice()[0].norm(), k.as_slice()[1].norm());
        prop_assert_eq!(a.norm() < b.norm(), ka < kb);
    }
}
