use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DatabaseKind, DatabaseSet};
use crate::error::{Error, Result};
use crate::spectral::{read_wav, Audio, SAMPLE_RATE};

/// Entry `entry` of database `db` (0-based, within one kind).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub db: usize,
    pub entry: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSegment {
    pub source: SourceRef,
    /// First sample of the segment; reads wrap inside `[range_start, range_end)`.
    pub offset: usize,
    pub range_start: usize,
    pub range_end: usize,
    pub brir: SourceRef,
    pub angle_deg: f64,
}

/// Which signals the SNR constraint is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrReference {
    /// Energies summed over both ears, before the downmix.
    #[default]
    Binaural,
    /// Energies of the L/R-averaged signals.
    Downmix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub seed: u64,
    pub speech: SourceRef,
    pub room: String,
    pub speech_brir: SourceRef,
    pub speech_angle_deg: f64,
    pub noises: Vec<NoiseSegment>,
    pub snr_db: f64,
    #[serde(default)]
    pub snr_reference: SnrReference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMixture {
    pub y: Vec<f64>,
    /// Direct sound and early reflections, downmixed.
    pub target: Vec<f64>,
    /// Late speech reflections plus scaled external noise, downmixed.
    pub noise_total: Vec<f64>,
    /// Two-ear components before the downmix.
    pub target_binaural: [Vec<f64>; 2],
    pub noise_binaural: [Vec<f64>; 2],
    pub gain: f64,
    /// The late reverberation alone exceeded the noise budget; `gain` is 0.
    pub infeasible: bool,
}

/// Loads and caches the audio referenced by a [`DatabaseSet`].
pub struct AudioLibrary {
    set: DatabaseSet,
    cache: RwLock<HashMap<PathBuf, Arc<Audio>>>,
}

impl AudioLibrary {
    pub fn new(set: DatabaseSet) -> Self {
        Self {
            set,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn set(&self) -> &DatabaseSet {
        &self.set
    }

    pub fn get(&self, kind: DatabaseKind, r: SourceRef) -> Result<Arc<Audio>> {
        let db = self
            .set
            .of(kind)
            .get(r.db)
            .ok_or_else(|| Error::Argument(format!("no {kind} database {}", r.db)))?;
        let entry = db
            .entries
            .get(r.entry)
            .ok_or_else(|| Error::Argument(format!("{}: no entry {}", db.name, r.entry)))?;
        let path = db.resolve(entry);
        if let Some(a) = self.cache.read().expect("cache lock").get(&path) {
            return Ok(a.clone());
        }
        let audio = Arc::new(read_wav(&path)?);
        self.cache
            .write()
            .expect("cache lock")
            .insert(path, audio.clone());
        Ok(audio)
    }
}

/// Linear convolution truncated to `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    let full = a.len() + b.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    (0..out_len)
        .map(|i| if i < full { fa[i].re * scale } else { 0.0 })
        .collect()
}

/// Splits a multichannel impulse response at the direct-sound peak plus `boundary_ms`
/// with complementary rectangular windows: samples `0..=peak+boundary` go to `early`.
pub fn split_brir(brir: &[Vec<f64>], boundary_ms: f64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if brir.is_empty() || brir.iter().all(Vec::is_empty) {
        return Err(Error::DegenerateInput("empty impulse response".into()));
    }
    let mut peak = (0usize, 0.0f64);
    for ch in brir {
        for (i, v) in ch.iter().enumerate() {
            if v.abs() > peak.1 {
                peak = (i, v.abs());
            }
        }
    }
    if peak.1 == 0.0 {
        return Err(Error::DegenerateInput("silent impulse response".into()));
    }
    let boundary = peak.0 + (boundary_ms * 1e-3 * SAMPLE_RATE as f64).round() as usize;
    let mut early = Vec::with_capacity(brir.len());
    let mut late = Vec::with_capacity(brir.len());
    for ch in brir {
        let e: Vec<f64> = ch.iter().enumerate().map(|(i, &v)| if i <= boundary { v } else { 0.0 }).collect();
        let l: Vec<f64> = ch.iter().enumerate().map(|(i, &v)| if i <= boundary { 0.0 } else { v }).collect();
        early.push(e);
        late.push(l);
    }
    Ok((early, late))
}

/// Gain γ on the external noise such that `P_target / ‖late + γ·noise‖² = 10^(snr/10)`.
/// Returns `(γ, infeasible)`; infeasible when the late energy alone reaches the budget
/// or the noise is silent.
pub fn mixing_gain(target_energy: f64, late: &[f64], noise: &[f64], snr_db: f64) -> (f64, bool) {
    let budget = target_energy / 10f64.powf(snr_db / 10.0);
    let nn: f64 = noise.iter().map(|v| v * v).sum();
    let ll: f64 = late.iter().map(|v| v * v).sum();
    let ln: f64 = late.iter().zip(noise).map(|(a, b)| a * b).sum();
    if ll >= budget || nn == 0.0 {
        return (0.0, true);
    }
    let disc = ln * ln - nn * (ll - budget);
    ((-ln + disc.sqrt()) / nn, false)
}

fn stereo(audio: &Audio) -> [Vec<f64>; 2] {
    match audio.channels.len() {
        1 => [audio.channels[0].clone(), audio.channels[0].clone()],
        _ => [audio.channels[0].clone(), audio.channels[1].clone()],
    }
}

fn mono(audio: &Audio) -> Vec<f64> {
    if audio.channels.len() == 1 {
        audio.channels[0].clone()
    } else {
        audio.downmix()
    }
}

pub const EARLY_BOUNDARY_MS: f64 = 50.0;

/// Renders one mixture. The output length equals the speech utterance length;
/// convolution tails beyond it are dropped.
pub fn render_mixture(spec: &MixtureSpec, lib: &AudioLibrary) -> Result<RenderedMixture> {
    if !(1..=3).contains(&spec.noises.len()) {
        return Err(Error::Argument(format!(
            "mixtures take 1 to 3 noise sources, got {}",
            spec.noises.len()
        )));
    }
    let speech = mono(lib.get(DatabaseKind::Speech, spec.speech)?.as_ref());
    let len = speech.len();
    if len == 0 {
        return Err(Error::DegenerateInput("empty speech utterance".into()));
    }
    let brir = stereo(lib.get(DatabaseKind::Brir, spec.speech_brir)?.as_ref());
    let (early, late) = split_brir(&brir, EARLY_BOUNDARY_MS)?;
    let target_lr = [0, 1].map(|c| fft_convolve(&speech, &early[c], len));
    let late_lr = [0, 1].map(|c| fft_convolve(&speech, &late[c], len));

    let mut noise_lr = [vec![0.0; len], vec![0.0; len]];
    for seg in &spec.noises {
        let rec = mono(lib.get(DatabaseKind::Noise, seg.source)?.as_ref());
        let end = seg.range_end.min(rec.len());
        if seg.range_start >= end || seg.offset < seg.range_start || seg.offset >= end {
            return Err(Error::Argument(format!(
                "noise segment offset {} outside [{}, {end})",
                seg.offset, seg.range_start
            )));
        }
        let span = end - seg.range_start;
        let piece: Vec<f64> = (0..len)
            .map(|i| rec[seg.range_start + (seg.offset - seg.range_start + i) % span])
            .collect();
        let h = stereo(lib.get(DatabaseKind::Brir, seg.brir)?.as_ref());
        for c in 0..2 {
            for (acc, v) in noise_lr[c].iter_mut().zip(fft_convolve(&piece, &h[c], len)) {
                *acc += v;
            }
        }
    }

    let (gain, infeasible) = match spec.snr_reference {
        SnrReference::Binaural => {
            let te: f64 = target_lr.iter().flatten().map(|v| v * v).sum();
            let late_flat: Vec<f64> = late_lr.concat();
            let noise_flat: Vec<f64> = noise_lr.concat();
            mixing_gain(te, &late_flat, &noise_flat, spec.snr_db)
        }
        SnrReference::Downmix => {
            let t = average(&target_lr);
            let te: f64 = t.iter().map(|v| v * v).sum();
            mixing_gain(te, &average(&late_lr), &average(&noise_lr), spec.snr_db)
        }
    };

    let noise_binaural = [0, 1].map(|c| {
        late_lr[c]
            .iter()
            .zip(&noise_lr[c])
            .map(|(l, n)| l + gain * n)
            .collect::<Vec<f64>>()
    });
    let target = average(&target_lr);
    let noise_total = average(&noise_binaural);
    let y = target.iter().zip(&noise_total).map(|(t, n)| t + n).collect();
    Ok(RenderedMixture {
        y,
        target,
        noise_total,
        target_binaural: target_lr,
        noise_binaural,
        gain,
        infeasible,
    })
}

fn average(lr: &[Vec<f64>; 2]) -> Vec<f64> {
    lr[0].iter().zip(&lr[1]).map(|(a, b)| 0.5 * (a + b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_at_start_is_all_early() {
        let mut ir = vec![0.0; 800];
        ir[0] = 1.0;
        let (e, l) = split_brir(&[ir.clone(), ir.clone()], 50.0).unwrap();
        assert_eq!(e[0], ir);
        assert!(l[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn late_echo_goes_to_late_part() {
        let mut ir = vec![0.0; 4000];
        ir[160] = 1.0; // 10 ms
        ir[1280] = 0.5; // 80 ms
        ir[900] = 0.2; // 56 ms, inside the early window
        let (e, l) = split_brir(&[ir.clone()], 50.0).unwrap();
        assert_eq!(e[0][160], 1.0);
        assert_eq!(e[0][900], 0.2);
        assert_eq!(e[0][1280], 0.0);
        assert_eq!(l[0][1280], 0.5);
        let sum: Vec<f64> = e[0].iter().zip(&l[0]).map(|(a, b)| a + b).collect();
        assert_eq!(sum, ir);
        assert!(matches!(split_brir(&[vec![0.0; 10]], 50.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [0.25, 0.0, -1.0];
        let direct: Vec<f64> = (0..6)
            .map(|n| {
                (0..a.len())
                    .filter(|&k| n >= k && n - k < b.len())
                    .map(|k| a[k] * b[n - k])
                    .sum()
            })
            .collect();
        let fast = fft_convolve(&a, &b, 6);
        for (x, y) in fast.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(fft_convolve(&a, &b, 8)[7], 0.0);
    }

    #[test]
    fn gain_solves_snr_equation() {
        let late = [0.1, -0.2, 0.05, 0.0];
        let noise = [1.0, 0.5, -0.3, 0.8];
        let te = 4.0;
        let (g, bad) = mixing_gain(te, &late, &noise, 3.0);
        assert!(!bad);
        let e: f64 = late.iter().zip(&noise).map(|(l, n)| (l + g * n).powi(2)).sum();
        assert!((10.0 * (te / e).log10() - 3.0).abs() < 1e-12);
        let (g, bad) = mixing_gain(0.01, &late, &noise, 10.0);
        assert!(bad && g == 0.0);
    }
}
