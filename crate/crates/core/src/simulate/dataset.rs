use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_mixture, AudioLibrary, MixtureSpec, NoiseSegment, SnrReference, SourceRef};
use super::{DatabaseKind, DatabaseSet, DatabaseSplit, FoldPlan, RenderedMixture};
use crate::error::{Error, Result};
use crate::rng::{derive_u64, substream};
use crate::spectral::{write_wav, Audio, SampleFormat, SAMPLE_RATE};

const FORMAT: &str = "envdiff-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Train,
    /// Held-out splits of the training databases.
    Matched,
    /// Databases never seen in training.
    Mismatched,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Train, Condition::Matched, Condition::Mismatched];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Train => "train",
            Condition::Matched => "matched",
            Condition::Mismatched => "mismatched",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetOptions {
    pub seed: u64,
    pub train_hours: f64,
    pub test_hours: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub max_noise_sources: usize,
    pub snr_reference: SnrReference,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            train_hours: 10.0,
            test_hours: 1.0,
            snr_min_db: -5.0,
            snr_max_db: 10.0,
            max_noise_sources: 3,
            snr_reference: SnrReference::Binaural,
        }
    }
}

impl DatasetOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_hours >= 0.0 && self.test_hours >= 0.0) {
            return Err(Error::Config("dataset hours must be non-negative".into()));
        }
        if !(self.snr_min_db <= self.snr_max_db) {
            return Err(Error::Config("snr_min_db must not exceed snr_max_db".into()));
        }
        if !(1..=3).contains(&self.max_noise_sources) {
            return Err(Error::Config("max_noise_sources must be 1, 2 or 3".into()));
        }
        Ok(())
    }

    pub fn hours(&self, condition: Condition) -> f64 {
        match condition {
            Condition::Train => self.train_hours,
            _ => self.test_hours,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureFiles {
    pub mixture: PathBuf,
    pub target: PathBuf,
    pub noise: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedMixture {
    pub id: String,
    pub condition: Condition,
    pub fold: usize,
    pub duration_s: f64,
    pub spec: MixtureSpec,
    /// Filled once rendered; paths relative to the index file.
    pub files: Option<MixtureFiles>,
    pub gain: Option<f64>,
    #[serde(default)]
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub version: u32,
    pub options: DatasetOptions,
    pub fold: FoldPlan,
    /// Database names per kind in fold order.
    pub speech_databases: Vec<String>,
    pub noise_databases: Vec<String>,
    pub brir_databases: Vec<String>,
    pub mixtures: Vec<IndexedMixture>,
}

impl DatasetIndex {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if index.format != FORMAT || index.version != VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported dataset index {} v{}",
                path.display(),
                index.format,
                index.version
            )));
        }
        Ok(index)
    }

    pub fn of_condition(&self, condition: Condition) -> impl Iterator<Item = &IndexedMixture> {
        self.mixtures.iter().filter(move |m| m.condition == condition)
    }

    pub fn train_database_names(&self, kind: DatabaseKind) -> Vec<String> {
        let names = match kind {
            DatabaseKind::Speech => &self.speech_databases,
            DatabaseKind::Noise => &self.noise_databases,
            DatabaseKind::Brir => &self.brir_databases,
        };
        self.fold.of(kind).train.iter().map(|&i| names[i].clone()).collect()
    }
}

/// Candidate sources for one condition.
struct Pool {
    speech: Vec<SourceRef>,
    /// (source, range_start, range_end) in samples.
    noise: Vec<(SourceRef, usize, usize)>,
    /// BRIR db → room → entries.
    rooms: Vec<(usize, String, Vec<usize>)>,
}

fn pool(set: &DatabaseSet, plan: &FoldPlan, condition: Condition) -> Result<Pool> {
    let fs = SAMPLE_RATE as f64;
    let mut p = Pool {
        speech: Vec::new(),
        noise: Vec::new(),
        rooms: Vec::new(),
    };
    let test = condition == Condition::Matched;
    if condition == Condition::Mismatched {
        for &db in &plan.speech.held_out {
            p.speech.extend((0..set.speech[db].entries.len()).map(|entry| SourceRef { db, entry }));
        }
        for &db in &plan.noise.held_out {
            for (entry, e) in set.noise[db].entries.iter().enumerate() {
                let len = (e.duration_s.unwrap_or(0.0) * fs).round() as usize;
                p.noise.push((SourceRef { db, entry }, 0, len));
            }
        }
        for &db in &plan.brir.held_out {
            for (room, members) in set.brir[db].rooms() {
                p.rooms.push((db, room, members));
            }
        }
    } else {
        for (&db, split) in plan.speech.train.iter().zip(&plan.speech.splits) {
            if let DatabaseSplit::Speech { train, test: held } = split {
                let chosen = if test { held } else { train };
                p.speech.extend(chosen.iter().map(|&entry| SourceRef { db, entry }));
            }
        }
        for (&db, split) in plan.noise.train.iter().zip(&plan.noise.splits) {
            if let DatabaseSplit::Noise { boundary_s } = split {
                for (entry, e) in set.noise[db].entries.iter().enumerate() {
                    let len = (e.duration_s.unwrap_or(0.0) * fs).round() as usize;
                    let cut = (boundary_s[entry] * fs).floor() as usize;
                    let (a, b) = if test { (cut, len) } else { (0, cut) };
                    p.noise.push((SourceRef { db, entry }, a, b));
                }
            }
        }
        for (&db, split) in plan.brir.train.iter().zip(&plan.brir.splits) {
            if let DatabaseSplit::Brir { train, test: held } = split {
                let chosen = if test { held } else { train };
                for (room, members) in set.brir[db].rooms() {
                    let kept: Vec<usize> = members.into_iter().filter(|m| chosen.contains(m)).collect();
                    if !kept.is_empty() {
                        p.rooms.push((db, room, kept));
                    }
                }
            }
        }
    }
    p.noise.retain(|(_, a, b)| b > a);
    if p.speech.is_empty() || p.noise.is_empty() || p.rooms.is_empty() {
        return Err(Error::Config(format!(
            "{condition} pool is empty (speech {}, noise {}, rooms {})",
            p.speech.len(),
            p.noise.len(),
            p.rooms.len()
        )));
    }
    Ok(p)
}

fn wav_len(path: &Path) -> Result<usize> {
    let reader = hound::WavReader::open(path).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(reader.duration() as usize)
}

/// Draws mixture specifications for `condition` until their total duration reaches
/// the configured hours (overshoot is below one utterance).
pub fn plan_mixtures(
    set: &DatabaseSet,
    plan: &FoldPlan,
    condition: Condition,
    opts: &DatasetOptions,
) -> Result<Vec<IndexedMixture>> {
    opts.validate()?;
    let p = pool(set, plan, condition)?;
    let label = format!("mixtures/fold{}/{condition}", plan.fold_index);
    let mut order: Vec<usize> = (0..p.speech.len()).collect();
    order.shuffle(&mut substream(opts.seed, &format!("{label}/order"), 0));
    let lengths = p
        .speech
        .iter()
        .map(|r| {
            let db = &set.speech[r.db];
            wav_len(&db.resolve(&db.entries[r.entry]))
        })
        .collect::<Result<Vec<usize>>>()?;
    if lengths.iter().all(|&l| l == 0) {
        return Err(Error::DegenerateInput("all speech utterances are empty".into()));
    }

    let target_s = opts.hours(condition) * 3600.0;
    let mut total_s = 0.0;
    let mut out = Vec::new();
    let mut i = 0u64;
    while total_s < target_s {
        let k = order[i as usize % order.len()];
        let speech = p.speech[k];
        let len = lengths[k];
        let mut rng = substream(opts.seed, &label, i);
        let (brir_db, room, members) = &p.rooms[rng.random_range(0..p.rooms.len())];
        let pick_brir = |rng: &mut crate::rng::StreamRng| {
            let entry = members[rng.random_range(0..members.len())];
            let angle = set.brir[*brir_db].entries[entry].angle_deg.unwrap_or(0.0);
            (SourceRef { db: *brir_db, entry }, angle)
        };
        let (speech_brir, speech_angle_deg) = pick_brir(&mut rng);
        let n_noise = rng.random_range(1..=opts.max_noise_sources);
        let noises = (0..n_noise)
            .map(|_| {
                let (source, a, b) = p.noise[rng.random_range(0..p.noise.len())];
                let offset = rng.random_range(a..b);
                let (brir, angle_deg) = pick_brir(&mut rng);
                NoiseSegment {
                    source,
                    offset,
                    range_start: a,
                    range_end: b,
                    brir,
                    angle_deg,
                }
            })
            .collect();
        let snr_db = if opts.snr_max_db > opts.snr_min_db {
            rng.random_range(opts.snr_min_db..opts.snr_max_db)
        } else {
            opts.snr_min_db
        };
        let duration_s = len as f64 / SAMPLE_RATE as f64;
        out.push(IndexedMixture {
            id: format!("{condition}-{i:05}"),
            condition,
            fold: plan.fold_index,
            duration_s,
            spec: MixtureSpec {
                seed: derive_u64(opts.seed, &label, i),
                speech,
                room: room.clone(),
                speech_brir,
                speech_angle_deg,
                noises,
                snr_db,
                snr_reference: opts.snr_reference,
            },
            files: None,
            gain: None,
            infeasible: false,
        });
        total_s += duration_s;
        i += 1;
    }
    Ok(out)
}

/// Writes the three signals of a rendered mixture as 32-bit float WAVs. The mixture
/// file holds `target + noise` computed in f32, so the identity survives on disk.
pub fn write_rendered(r: &RenderedMixture, root: &Path, id: &str) -> Result<MixtureFiles> {
    let files = MixtureFiles {
        mixture: PathBuf::from("mixture").join(format!("{id}.wav")),
        target: PathBuf::from("target").join(format!("{id}.wav")),
        noise: PathBuf::from("noise").join(format!("{id}.wav")),
    };
    let t32: Vec<f32> = r.target.iter().map(|&v| v as f32).collect();
    let n32: Vec<f32> = r.noise_total.iter().map(|&v| v as f32).collect();
    let y32: Vec<f64> = t32.iter().zip(&n32).map(|(t, n)| f64::from(t + n)).collect();
    for (rel, samples) in [
        (&files.mixture, y32),
        (&files.target, t32.iter().map(|&v| f64::from(v)).collect()),
        (&files.noise, n32.iter().map(|&v| f64::from(v)).collect()),
    ] {
        let path = root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_wav(&path, &Audio::mono(samples), SampleFormat::Float32)?;
    }
    Ok(files)
}

/// Renders and writes one planned mixture, filling its file, gain and flag fields.
pub fn render_indexed(m: &mut IndexedMixture, lib: &AudioLibrary, root: &Path) -> Result<()> {
    let r = render_mixture(&m.spec, lib)?;
    m.files = Some(write_rendered(&r, root, &m.id)?);
    m.gain = Some(r.gain);
    m.infeasible = r.infeasible;
    Ok(())
}

/// Plans, renders and indexes the train, matched and mismatched sets of one fold
/// (sequentially; front-ends may parallelise over [`render_indexed`]).
pub fn render_dataset(
    lib: &AudioLibrary,
    plan: &FoldPlan,
    opts: &DatasetOptions,
    root: &Path,
) -> Result<DatasetIndex> {
    let mut index = new_index(lib.set(), plan, opts)?;
    for m in &mut index.mixtures {
        render_indexed(m, lib, root)?;
    }
    index.save(&root.join("index.json"))?;
    Ok(index)
}

/// Index with every condition planned but nothing rendered yet.
pub fn new_index(set: &DatabaseSet, plan: &FoldPlan, opts: &DatasetOptions) -> Result<DatasetIndex> {
    let mut mixtures = Vec::new();
    for condition in Condition::ALL {
        mixtures.extend(plan_mixtures(set, plan, condition, opts)?);
    }
    let names = |kind: DatabaseKind| set.of(kind).iter().map(|m| m.name.clone()).collect();
    Ok(DatasetIndex {
        format: FORMAT.into(),
        version: VERSION,
        options: *opts,
        fold: FoldPlan {
            train_hours: opts.train_hours,
            test_hours: opts.test_hours,
            ..plan.clone()
        },
        speech_databases: names(DatabaseKind::Speech),
        noise_databases: names(DatabaseKind::Noise),
        brir_databases: names(DatabaseKind::Brir),
        mixtures,
    })
}
