//! Mixture simulation: database manifests, cross-validation folds, BRIR splitting,
//! spatialised SNR mixing and a synthetic stand-in for the speech, noise and BRIR corpora.

mod dataset;
mod render;
mod synth;

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::spectral::SAMPLE_RATE;

pub use dataset::{
    new_index, plan_mixtures, render_dataset, render_indexed, write_rendered, Condition,
    DatasetIndex, DatasetOptions, IndexedMixture, MixtureFiles,
};
pub use render::{
    fft_convolve, mixing_gain, render_mixture, split_brir, AudioLibrary, MixtureSpec,
    NoiseSegment, RenderedMixture, SnrReference, SourceRef, EARLY_BOUNDARY_MS,
};
pub use synth::{
    schroeder_decay_db, synth_brir, synth_corpus, synth_database, synth_noise, synth_speech,
    SynthOptions,
};

pub const DATABASES_PER_KIND: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatabaseKind {
    Speech,
    Noise,
    Brir,
}

impl DatabaseKind {
    pub const ALL: [DatabaseKind; 3] = [DatabaseKind::Speech, DatabaseKind::Noise, DatabaseKind::Brir];

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "speech" => Some(Self::Speech),
            "noise" => Some(Self::Noise),
            "brir" => Some(Self::Brir),
            _ => None,
        }
    }
}

impl fmt::Display for DatabaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Speech => "speech",
            Self::Noise => "noise",
            Self::Brir => "brir",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Absolute or manifest-relative path as written in the manifest.
    pub path: PathBuf,
    /// Utterance id (speech), recording id (noise) or a free label (brir).
    pub id: String,
    /// Room id, BRIR entries only.
    pub room: Option<String>,
    /// Source angle in degrees, BRIR entries only.
    pub angle_deg: Option<f64>,
    /// Recording duration in seconds, noise entries only.
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseManifest {
    pub name: String,
    pub kind: DatabaseKind,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    kind: String,
    path: String,
    id: String,
    #[serde(default)]
    room: Option<String>,
    #[serde(default)]
    angle_deg: Option<f64>,
    #[serde(default)]
    duration_s: Option<f64>,
}

pub const MANIFEST_HEADER: &str = "kind,path,id,room,angle_deg,duration_s";

impl DatabaseManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    /// Parses a CSV manifest with header `kind,path,id,room,angle_deg,duration_s`.
    /// The database name is the file stem. With `check_files`, every referenced
    /// WAV must exist and be 16 kHz.
    pub fn load(path: &Path, check_files: bool) -> Result<Self> {
        let manifest_err = |line: u64, message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => manifest_err(1, format!("{other:?}")),
            })?;
        let mut kind = None;
        let mut entries = Vec::new();
        let headers = reader
            .headers()
            .map_err(|e| manifest_err(1, e.to_string()))?
            .clone();
        let mut record = csv::StringRecord::new();
        loop {
            match reader.read_record(&mut record) {
                Ok(true) => {}
                Ok(false) => break,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Err(manifest_err(line, e.to_string()));
                }
            }
            let line = record.position().map_or(0, |p| p.line());
            let row: ManifestRow = record
                .deserialize(Some(&headers))
                .map_err(|e| manifest_err(line, e.to_string()))?;
            let row_kind = DatabaseKind::parse(&row.kind)
                .ok_or_else(|| manifest_err(line, format!("unknown kind {:?}", row.kind)))?;
            match kind {
                None => kind = Some(row_kind),
                Some(k) if k != row_kind => {
                    return Err(manifest_err(line, format!("kind {row_kind} in a {k} manifest")))
                }
                _ => {}
            }
            if row.path.is_empty() || row.id.is_empty() {
                return Err(manifest_err(line, "path and id are required".into()));
            }
            if row_kind == DatabaseKind::Brir {
                match (&row.room, row.angle_deg) {
                    (Some(room), Some(a)) if !room.is_empty() => {
                        if !(-90.0..=90.0).contains(&a) {
                            return Err(manifest_err(line, format!("angle {a} outside [-90, 90]")));
                        }
                    }
                    _ => return Err(manifest_err(line, "brir entries need room and angle_deg".into())),
                }
            }
            if row_kind == DatabaseKind::Noise {
                match row.duration_s {
                    Some(d) if d > 0.0 => {}
                    _ => return Err(manifest_err(line, "noise entries need a positive duration_s".into())),
                }
            }
            entries.push((line, ManifestEntry {
                path: PathBuf::from(&row.path),
                id: row.id,
                room: row.room.filter(|r| !r.is_empty()),
                angle_deg: row.angle_deg,
                duration_s: row.duration_s,
            }));
        }
        let kind = kind.ok_or_else(|| manifest_err(1, "manifest has no entries".into()))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "manifest".into());
        let manifest = Self {
            name,
            kind,
            root,
            entries: entries.iter().map(|(_, e)| e.clone()).collect(),
        };
        if check_files {
            for (line, entry) in &entries {
                let file = manifest.resolve(entry);
                let reader = hound::WavReader::open(&file)
                    .map_err(|e| manifest_err(*line, format!("{}: {e}", file.display())))?;
                let rate = reader.spec().sample_rate;
                if rate != SAMPLE_RATE {
                    return Err(manifest_err(
                        *line,
                        format!("{}: {rate} Hz, expected {SAMPLE_RATE} Hz", file.display()),
                    ));
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        writer
            .write_record(MANIFEST_HEADER.split(','))
            .map_err(|e| csv_io(path, e))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            writer
                .write_record([
                    self.kind.to_string(),
                    e.path.to_string_lossy().into_owned(),
                    e.id.clone(),
                    e.room.clone().unwrap_or_default(),
                    opt(e.angle_deg),
                    opt(e.duration_s),
                ])
                .map_err(|e| csv_io(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    /// BRIR entry indices grouped by room, rooms and members in manifest order.
    pub fn rooms(&self) -> Vec<(String, Vec<usize>)> {
        let mut rooms: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            let room = e.room.clone().unwrap_or_default();
            match rooms.iter_mut().find(|(r, _)| *r == room) {
                Some((_, members)) => members.push(i),
                None => rooms.push((room, vec![i])),
            }
        }
        rooms
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Five databases of each kind, in fold order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseSet {
    pub speech: Vec<DatabaseManifest>,
    pub noise: Vec<DatabaseManifest>,
    pub brir: Vec<DatabaseManifest>,
}

impl DatabaseSet {
    pub fn from_manifests(manifests: Vec<DatabaseManifest>) -> Result<Self> {
        let mut set = Self {
            speech: Vec::new(),
            noise: Vec::new(),
            brir: Vec::new(),
        };
        for m in manifests {
            match m.kind {
                DatabaseKind::Speech => set.speech.push(m),
                DatabaseKind::Noise => set.noise.push(m),
                DatabaseKind::Brir => set.brir.push(m),
            }
        }
        for kind in DatabaseKind::ALL {
            let n = set.of(kind).len();
            if n != DATABASES_PER_KIND {
                return Err(Error::Config(format!(
                    "need exactly {DATABASES_PER_KIND} {kind} databases, got {n}"
                )));
            }
        }
        Ok(set)
    }

    pub fn of(&self, kind: DatabaseKind) -> &[DatabaseManifest] {
        match kind {
            DatabaseKind::Speech => &self.speech,
            DatabaseKind::Noise => &self.noise,
            DatabaseKind::Brir => &self.brir,
        }
    }
}

/// Training/test division of one database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatabaseSplit {
    /// Utterance indices.
    Speech { train: Vec<usize>, test: Vec<usize> },
    /// Every recording splits at 80% of its duration; `boundary_s[i]` per entry.
    Noise { boundary_s: Vec<f64> },
    /// Per room, alternating BRIRs in angle order.
    Brir { train: Vec<usize>, test: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindAssignment {
    /// Database indices (0-based) used for training and matched testing.
    pub train: Vec<usize>,
    /// Held-out database indices for mismatched testing.
    pub held_out: Vec<usize>,
    /// Splits of the training databases, parallel to `train`.
    pub splits: Vec<DatabaseSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// 1-based fold number.
    pub fold_index: usize,
    pub n_train_databases: usize,
    pub speech: KindAssignment,
    pub noise: KindAssignment,
    pub brir: KindAssignment,
    pub train_hours: f64,
    pub test_hours: f64,
}

impl FoldPlan {
    pub fn of(&self, kind: DatabaseKind) -> &KindAssignment {
        match kind {
            DatabaseKind::Speech => &self.speech,
            DatabaseKind::Noise => &self.noise,
            DatabaseKind::Brir => &self.brir,
        }
    }
}

pub const TRAIN_FRACTION: f64 = 0.8;

/// All five folds for `n` training databases per kind (`n ∈ {1, 4}`).
pub fn build_folds(set: &DatabaseSet, n: usize, seed: u64) -> Result<Vec<FoldPlan>> {
    if n != 1 && n != DATABASES_PER_KIND - 1 {
        return Err(Error::Config(format!("N must be 1 or 4, got {n}")));
    }
    (1..=DATABASES_PER_KIND)
        .map(|fold| build_fold(set, n, fold, seed))
        .collect()
}

pub fn build_fold(set: &DatabaseSet, n: usize, fold: usize, seed: u64) -> Result<FoldPlan> {
    if n != 1 && n != DATABASES_PER_KIND - 1 {
        return Err(Error::Config(format!("N must be 1 or 4, got {n}")));
    }
    if !(1..=DATABASES_PER_KIND).contains(&fold) {
        return Err(Error::Config(format!("fold must be in 1..=5, got {fold}")));
    }
    for kind in DatabaseKind::ALL {
        if set.of(kind).len() != DATABASES_PER_KIND {
            return Err(Error::Config(format!("need exactly 5 {kind} databases")));
        }
    }
    let i = fold - 1;
    let (train, held_out): (Vec<usize>, Vec<usize>) = if n == 1 {
        (vec![i], (0..DATABASES_PER_KIND).filter(|&j| j != i).collect())
    } else {
        ((0..DATABASES_PER_KIND).filter(|&j| j != i).collect(), vec![i])
    };
    let assign = |kind: DatabaseKind| -> Result<KindAssignment> {
        let splits = train
            .iter()
            .map(|&db| split_database(&set.of(kind)[db], seed, db))
            .collect::<Result<_>>()?;
        Ok(KindAssignment {
            train: train.clone(),
            held_out: held_out.clone(),
            splits,
        })
    };
    Ok(FoldPlan {
        fold_index: fold,
        n_train_databases: n,
        speech: assign(DatabaseKind::Speech)?,
        noise: assign(DatabaseKind::Noise)?,
        brir: assign(DatabaseKind::Brir)?,
        train_hours: 10.0,
        test_hours: 1.0,
    })
}

/// Deterministic split of one database; the speech shuffle depends on `(seed, db)` only,
/// so a database splits identically in every fold that trains on it.
pub fn split_database(db: &DatabaseManifest, seed: u64, db_index: usize) -> Result<DatabaseSplit> {
    match db.kind {
        DatabaseKind::Speech => {
            let mut order: Vec<usize> = (0..db.entries.len()).collect();
            order.shuffle(&mut substream(seed, &format!("speech-split/{}", db.name), db_index as u64));
            let n_train = ((order.len() as f64) * TRAIN_FRACTION).round() as usize;
            let n_train = n_train.clamp(1.min(order.len()), order.len().saturating_sub(1).max(1));
            let (train, test) = order.split_at(n_train.min(order.len()));
            let (mut train, mut test) = (train.to_vec(), test.to_vec());
            train.sort_unstable();
            test.sort_unstable();
            Ok(DatabaseSplit::Speech { train, test })
        }
        DatabaseKind::Noise => Ok(DatabaseSplit::Noise {
            boundary_s: db
                .entries
                .iter()
                .map(|e| e.duration_s.unwrap_or(0.0) * TRAIN_FRACTION)
                .collect(),
        }),
        DatabaseKind::Brir => {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (_, mut members) in db.rooms() {
                members.sort_by(|&a, &b| {
                    let angle = |i: usize| db.entries[i].angle_deg.unwrap_or(0.0);
                    angle(a).total_cmp(&angle(b)).then(a.cmp(&b))
                });
                for (k, idx) in members.into_iter().enumerate() {
                    if k % 2 == 0 {
                        train.push(idx);
                    } else {
                        test.push(idx);
                    }
                }
            }
            train.sort_unstable();
            test.sort_unstable();
            Ok(DatabaseSplit::Brir { train, test })
        }
    }
}
