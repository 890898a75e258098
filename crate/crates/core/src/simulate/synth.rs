use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DatabaseKind, DatabaseManifest, DatabaseSet, ManifestEntry, DATABASES_PER_KIND};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, substream, StreamRng};
use crate::spectral::{write_wav, Audio, SampleFormat, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;

/// Sizes of the generated stand-in databases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    pub utterances: usize,
    pub min_utterance_s: f64,
    pub max_utterance_s: f64,
    pub noise_recordings: usize,
    pub noise_duration_s: f64,
    pub rooms: usize,
    pub angles_per_room: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            utterances: 40,
            min_utterance_s: 1.5,
            max_utterance_s: 3.0,
            noise_recordings: 4,
            noise_duration_s: 30.0,
            rooms: 2,
            angles_per_room: 9,
        }
    }
}

/// Generator parameters that differ between the five databases of a kind.
struct Flavour {
    f0: (f64, f64),
    formants: [f64; 3],
    syllable_s: (f64, f64),
    tilt: (f64, f64),
    t60: (f64, f64),
}

fn flavour(db: usize) -> Flavour {
    let d = db as f64;
    Flavour {
        f0: (90.0 + 25.0 * d, 140.0 + 30.0 * d),
        formants: [500.0 + 60.0 * d, 1500.0 + 150.0 * d, 2500.0 + 120.0 * d],
        syllable_s: (0.11 + 0.01 * d, 0.22 + 0.015 * d),
        tilt: (0.2 * d, 0.5 + 0.3 * d),
        t60: (0.25 + 0.1 * d, 0.45 + 0.15 * d),
    }
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Speech-like signal: voiced syllables (harmonic tones shaped by three formants,
/// occasional noise bursts) grouped into words separated by pauses.
pub fn synth_speech(rng: &mut StreamRng, db: usize, len: usize) -> Vec<f64> {
    let fl = flavour(db);
    let mut out = vec![0.0; len];
    let mut pos = (uniform(rng, (0.15, 0.3)) * FS) as usize;
    let tail = (0.2 * FS) as usize;
    while pos + tail < len {
        let syllables = rng.random_range(2..=5);
        for _ in 0..syllables {
            let n = (uniform(rng, fl.syllable_s) * FS) as usize;
            if pos + n + tail >= len {
                break;
            }
            let f0 = uniform(rng, fl.f0);
            let glide = uniform(rng, (-0.15, 0.15));
            let amp = uniform(rng, (0.4, 1.0));
            let fricative = rng.random_bool(0.3);
            let mut phase = 0.0;
            for i in 0..n {
                let u = i as f64 / n as f64;
                let env = (PI * u).sin().powi(2);
                let f = f0 * (1.0 + glide * u);
                phase += 2.0 * PI * f / FS;
                let mut v = 0.0;
                let mut k = 1.0;
                while k * f < 3800.0 {
                    let fk = k * f;
                    let w: f64 = fl
                        .formants
                        .iter()
                        .map(|&fm| 1.0 / (1.0 + ((fk - fm) / 120.0).powi(2)))
                        .sum::<f64>()
                        + 0.05;
                    v += w * (k * phase).sin();
                    k += 1.0;
                }
                if fricative && u > 0.6 {
                    v += 0.6 * standard_normal(rng);
                }
                out[pos + i] += amp * env * v;
            }
            pos += n;
        }
        pos += (uniform(rng, (0.15, 0.4)) * FS) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    out.iter()
        .map(|v| v * scale + 1e-5 * standard_normal(rng))
        .collect()
}

/// Coloured noise with power spectrum ∝ f^(−tilt) and a slow level modulation.
pub fn synth_noise(rng: &mut StreamRng, tilt: f64, len: usize) -> Vec<f64> {
    let n = len.next_power_of_two().max(2);
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(standard_normal(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k).max(1) as f64 * FS / n as f64;
        *v *= (f / 1000.0).powf(-tilt / 2.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let rate = uniform(rng, (0.1, 0.5));
    let depth = uniform(rng, (0.1, 0.4));
    let phase = uniform(rng, (0.0, 2.0 * PI));
    let raw: Vec<f64> = buf[..len]
        .iter()
        .enumerate()
        .map(|(i, v)| v.re * (1.0 + depth * (2.0 * PI * rate * i as f64 / FS + phase).sin()))
        .collect();
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    raw.iter().map(|v| 0.1 * v / rms).collect()
}

/// Stereo impulse response: delayed direct sound with interaural time and level
/// differences, sparse early reflections and an exponentially decaying tail with
/// energy decay of 60 dB over `t60` seconds.
pub fn synth_brir(rng: &mut StreamRng, angle_deg: f64, t60: f64) -> [Vec<f64>; 2] {
    let len = (1.2 * t60 * FS).ceil() as usize + 200;
    let s = angle_deg.to_radians().sin();
    let itd = (0.00066 * s.abs() * FS).round() as usize;
    let far_gain = 10f64.powf(-6.0 * s.abs() / 20.0);
    let base = 48;
    // positive angles are to the right, so the left ear is the far ear
    let (delay, gain) = if s >= 0.0 {
        ([base + itd, base], [far_gain, 1.0])
    } else {
        ([base, base + itd], [1.0, far_gain])
    };
    let decay = 3.0 * 10f64.ln() / (t60 * FS);
    let mut out = [vec![0.0; len], vec![0.0; len]];
    for c in 0..2 {
        out[c][delay[c]] = gain[c];
        for _ in 0..8 {
            let at = delay[c] + rng.random_range((0.002 * FS) as usize..(0.045 * FS) as usize);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            out[c][at] += sign * uniform(rng, (0.15, 0.5)) * gain[c];
        }
        let start = delay[c] + (0.005 * FS) as usize;
        for (i, v) in out[c].iter_mut().enumerate().skip(start) {
            let tau = (i - start) as f64;
            let onset = (tau / (0.01 * FS)).min(1.0);
            *v += 0.08 * onset * (-decay * tau).exp() * standard_normal(rng);
        }
    }
    out
}

/// Schroeder energy decay curve in dB, normalised to 0 dB at the start.
pub fn schroeder_decay_db(ir: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = ir
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| if total > 0.0 && e > 0.0 { 10.0 * (e / total).log10() } else { f64::NEG_INFINITY })
        .collect()
}

/// Generates database `db` (0..5) of `kind` under `dir` and writes its manifest to
/// `dir/<kind><db>.csv`. Output is a pure function of `(kind, db, seed, opts)`.
pub fn synth_database(
    kind: DatabaseKind,
    db: usize,
    seed: u64,
    dir: &Path,
    opts: &SynthOptions,
) -> Result<DatabaseManifest> {
    let name = format!("{kind}{}", db + 1);
    let sub = dir.join(&name);
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let fl = flavour(db);
    let mut entries = Vec::new();
    let label = format!("synth/{kind}");
    match kind {
        DatabaseKind::Speech => {
            for u in 0..opts.utterances {
                let mut rng = substream(seed, &label, (db * 100_000 + u) as u64);
                let dur = uniform(&mut rng, (opts.min_utterance_s, opts.max_utterance_s));
                let x = synth_speech(&mut rng, db, (dur * FS) as usize);
                let rel = PathBuf::from(&name).join(format!("utt{u:04}.wav"));
                write_wav(&dir.join(&rel), &Audio::mono(x), SampleFormat::Float32)?;
                entries.push(ManifestEntry {
                    path: rel,
                    id: format!("{name}-utt{u:04}"),
                    room: None,
                    angle_deg: None,
                    duration_s: None,
                });
            }
        }
        DatabaseKind::Noise => {
            for r in 0..opts.noise_recordings {
                let mut rng = substream(seed, &label, (db * 100_000 + r) as u64);
                let tilt = uniform(&mut rng, fl.tilt);
                let len = (opts.noise_duration_s * FS) as usize;
                let x = synth_noise(&mut rng, tilt, len);
                let rel = PathBuf::from(&name).join(format!("rec{r:03}.wav"));
                write_wav(&dir.join(&rel), &Audio::mono(x), SampleFormat::Float32)?;
                entries.push(ManifestEntry {
                    path: rel,
                    id: format!("{name}-rec{r:03}"),
                    room: None,
                    angle_deg: None,
                    duration_s: Some(len as f64 / FS),
                });
            }
        }
        DatabaseKind::Brir => {
            for room in 0..opts.rooms {
                let mut room_rng = substream(seed, &format!("{label}/room"), (db * 1000 + room) as u64);
                let t60 = uniform(&mut room_rng, fl.t60);
                for a in 0..opts.angles_per_room {
                    let angle = if opts.angles_per_room == 1 {
                        0.0
                    } else {
                        -90.0 + 180.0 * a as f64 / (opts.angles_per_room - 1) as f64
                    };
                    let mut rng = substream(seed, &label, (db * 100_000 + room * 1000 + a) as u64);
                    let [l, r] = synth_brir(&mut rng, angle, t60);
                    let rel = PathBuf::from(&name).join(format!("room{room}_{a:02}.wav"));
                    let audio = Audio {
                        sample_rate: SAMPLE_RATE,
                        channels: vec![l, r],
                    };
                    write_wav(&dir.join(&rel), &audio, SampleFormat::Float32)?;
                    entries.push(ManifestEntry {
                        path: rel,
                        id: format!("{name}-room{room}-{a:02}"),
                        room: Some(format!("{name}-room{room}")),
                        angle_deg: Some(angle),
                        duration_s: None,
                    });
                }
            }
        }
    }
    let manifest = DatabaseManifest {
        name: name.clone(),
        kind,
        root: dir.to_path_buf(),
        entries,
    };
    manifest.save(&dir.join(format!("{name}.csv")))?;
    Ok(manifest)
}

/// All five databases of every kind under `dir`.
pub fn synth_corpus(dir: &Path, seed: u64, opts: &SynthOptions) -> Result<DatabaseSet> {
    let mut manifests = Vec::new();
    for kind in DatabaseKind::ALL {
        for db in 0..DATABASES_PER_KIND {
            manifests.push(synth_database(kind, db, seed, dir, opts)?);
        }
    }
    DatabaseSet::from_manifests(manifests)
}
