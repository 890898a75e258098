//! STFT analysis/synthesis, magnitude compression and 16 kHz WAV I/O.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrogram::ComplexSpectrogram;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    /// Kept frequency rows, `frame_len/2` (the Nyquist row is dropped).
    pub kept_bins: usize,
    /// Compression amplitude A.
    pub amp_scale: f64,
    /// Compression exponent α.
    pub compress_exp: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            frame_len: 512,
            hop: 128,
            kept_bins: 256,
            amp_scale: 0.15,
            compress_exp: 0.5,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::Config(format!("frame_len must be even and positive, got {}", self.frame_len)));
        }
        if self.frame_len != 4 * self.hop {
            return Err(Error::Config(format!(
                "frame_len ({}) must be 4 x hop ({}) for Hann overlap-add",
                self.frame_len, self.hop
            )));
        }
        if self.kept_bins != self.frame_len / 2 {
            return Err(Error::Config(format!(
                "kept_bins must be frame_len/2 = {}, got {}",
                self.frame_len / 2,
                self.kept_bins
            )));
        }
        if !(self.compress_exp > 0.0 && self.compress_exp <= 1.0) {
            return Err(Error::Config(format!("compress_exp must be in (0, 1], got {}", self.compress_exp)));
        }
        if !(self.amp_scale > 0.0 && self.amp_scale.is_finite()) {
            return Err(Error::Config(format!("amp_scale must be positive, got {}", self.amp_scale)));
        }
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!("sample_rate must be {SAMPLE_RATE}, got {}", self.sample_rate)));
        }
        Ok(())
    }

    /// Frames produced for a signal of `len` samples (tail zero-padded).
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            (len - self.frame_len).div_ceil(self.hop) + 1
        }
    }

    /// Periodic Hann window of `frame_len` samples.
    pub fn window(&self) -> Vec<f64> {
        hann_periodic(self.frame_len)
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if signal.len() < cfg.frame_len {
        return Err(Error::Argument(format!(
            "signal has {} samples, shorter than one frame ({})",
            signal.len(),
            cfg.frame_len
        )));
    }
    let frames = cfg.frame_count(signal.len());
    let window = cfg.window();
    let fft = FftPlanner::new().plan_fft_forward(cfg.frame_len);
    let mut out = ComplexSpectrogram::zeros(cfg.kept_bins, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.frame_len];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = signal.get(start + i).copied().unwrap_or(0.0);
            *b = Complex64::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in buf.iter().take(cfg.kept_bins).enumerate() {
            out.set(k, f, *v);
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse; samples not covered by any window are zero.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if spec.bins() != cfg.kept_bins {
        return Err(Error::dims(format!("{} frequency rows", cfg.kept_bins), spec.bins()));
    }
    let n = cfg.frame_len;
    let window = cfg.window();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let total = (spec.frames().saturating_sub(1)) * cfg.hop + n;
    let mut acc = vec![0.0; total.max(out_len)];
    let mut norm = vec![0.0; total.max(out_len)];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..spec.frames() {
        buf.fill(Complex64::new(0.0, 0.0));
        for k in 0..cfg.kept_bins {
            let v = spec.get(k, f);
            buf[k] = v;
            if k > 0 {
                buf[n - k] = v.conj();
            }
        }
        // a DC row with an imaginary part has no real-signal counterpart
        buf[0] = Complex64::new(buf[0].re, 0.0);
        ifft.process(&mut buf);
        let start = f * cfg.hop;
        for i in 0..n {
            acc[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    Ok(acc
        .iter()
        .zip(&norm)
        .take(out_len)
        .map(|(&a, &w)| if w > 1e-8 { a / w } else { 0.0 })
        .collect())
}

/// `c̃ = A·|c|^α·e^(i∠c)`
pub fn compress(spec: &ComplexSpectrogram, cfg: &StftConfig) -> ComplexSpectrogram {
    let (a, alpha) = (cfg.amp_scale, cfg.compress_exp);
    spec.map(|c| {
        let m = c.norm();
        if m == 0.0 {
            c
        } else {
            c * (a * m.powf(alpha - 1.0))
        }
    })
}

/// `c = (|c̃|/A)^(1/α)·e^(i∠c̃)`
pub fn decompress(spec: &ComplexSpectrogram, cfg: &StftConfig) -> ComplexSpectrogram {
    let (a, alpha) = (cfg.amp_scale, cfg.compress_exp);
    spec.map(|c| {
        let m = c.norm();
        if m == 0.0 {
            c
        } else {
            c * ((m / a).powf(1.0 / alpha) / m)
        }
    })
}

/// Compressed STFT of a waveform, the representation the diffusion operates on.
pub fn analyze(signal: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    Ok(compress(&stft(signal, cfg)?, cfg))
}

/// Inverse of [`analyze`].
pub fn synthesize(spec: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize) -> Result<Vec<f64>> {
    istft(&decompress(spec, cfg), cfg, out_len)
}

/// Per-coefficient complex variance `mean |c|²` over a set of spectrograms.
pub fn coefficient_variance<'a>(specs: impl IntoIterator<Item = &'a ComplexSpectrogram>) -> f64 {
    let (sum, count) = specs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x.norm_sqr(), n + x.dim()));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Int16,
    Float32,
}

/// Decoded audio, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn mono(samples: Vec<f64>) -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            channels: vec![samples],
        }
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Average of all channels.
    pub fn downmix(&self) -> Vec<f64> {
        let k = self.channels.len() as f64;
        (0..self.len())
            .map(|i| self.channels.iter().map(|c| c[i]).sum::<f64>() / k)
            .collect()
    }
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedAudio(format!(
            "{}: sample rate {} Hz, only {SAMPLE_RATE} Hz is supported",
            path.display(),
            spec.sample_rate
        )));
    }
    let nch = spec.channels as usize;
    if !(1..=2).contains(&nch) {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {nch} channels, expected mono or stereo",
            path.display()
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedAudio(format!(
                "{}: {bits}-bit {fmt:?} samples, expected 16-bit integer or 32-bit float",
                path.display()
            )))
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / nch); nch];
    for (i, v) in interleaved.into_iter().enumerate() {
        channels[i % nch].push(v);
    }
    Ok(Audio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

pub fn write_wav(path: &Path, audio: &Audio, format: SampleFormat) -> Result<()> {
    let nch = audio.channels.len();
    if !(1..=2).contains(&nch) {
        return Err(Error::UnsupportedAudio(format!("cannot write {nch} channels")));
    }
    if audio.channels.iter().any(|c| c.len() != audio.len()) {
        return Err(Error::Argument("channels differ in length".into()));
    }
    let (bits, sample_format) = match format {
        SampleFormat::Int16 => (16, hound::SampleFormat::Int),
        SampleFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: nch as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: bits,
        sample_format,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for i in 0..audio.len() {
        for ch in &audio.channels {
            match format {
                SampleFormat::Int16 => {
                    let v = (ch[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v).map_err(wav_err)?;
                }
                SampleFormat::Float32 => writer.write_sample(ch[i] as f32).map_err(wav_err)?,
            }
        }
    }
    writer.finalize().map_err(wav_err)
}
