//! Objective evaluation: SNR, SI-SDR, ESTOI and their improvements over the
//! unprocessed mixture.

mod estoi;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::simulate::{Condition, DatasetIndex, IndexedMixture};
use crate::spectral::read_wav;
use crate::{Error, Result};

pub use estoi::estoi;

/// Reported ceiling for SNR-type metrics. An exact reconstruction has an
/// infinite ratio.
pub const SNR_CAP_DB: f64 = 100.0;

/// `10·log₁₀(Σ ref² / Σ (est − ref)²)`. Returns `+∞` when the estimate is exact.
pub fn snr_db(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::dims(reference.len(), estimate.len()));
    }
    let signal: f64 = reference.iter().map(|r| r * r).sum();
    if signal == 0.0 {
        return Err(Error::UndefinedMetric("SNR reference is identically zero".into()));
    }
    let error: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - r).powi(2))
        .sum();
    Ok(10.0 * (signal / error).log10())
}

/// Scale-invariant SDR: the reference is first scaled to best match the estimate.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::dims(reference.len(), estimate.len()));
    }
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if rr == 0.0 {
        return Err(Error::UndefinedMetric("SI-SDR reference is identically zero".into()));
    }
    let alpha = estimate.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - alpha * r).powi(2))
        .sum();
    Ok(10.0 * (target / residual).log10())
}

pub fn cap_db(v: f64) -> f64 {
    v.min(SNR_CAP_DB)
}

/// External PESQ scorer. `{ref}` and `{deg}` in the template are replaced by
/// the reference and degraded WAV paths; the last number printed on standard
/// output is taken as the score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PesqHook {
    pub command: String,
}

impl PesqHook {
    pub fn new(command: impl Into<String>) -> Result<Self> {
        let command = command.into();
        if !command.contains("{ref}") || !command.contains("{deg}") {
            return Err(Error::Config(format!(
                "PESQ command must contain {{ref}} and {{deg}}: {command:?}"
            )));
        }
        if command.split_whitespace().next().is_none() {
            return Err(Error::Config("PESQ command is empty".into()));
        }
        Ok(PesqHook { command })
    }

    pub fn score(&self, reference: &Path, degraded: &Path) -> Result<f64> {
        let args: Vec<String> = self
            .command
            .split_whitespace()
            .map(|a| {
                a.replace("{ref}", &reference.to_string_lossy())
                    .replace("{deg}", &degraded.to_string_lossy())
            })
            .collect();
        let output = Command::new(&args[0])
            .args(&args[1..])
            .output()
            .map_err(|e| Error::io(PathBuf::from(&args[0]), e))?;
        if !output.status.success() {
            return Err(Error::UndefinedMetric(format!(
                "PESQ command exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout
            .split(|c: char| c.is_whitespace() || c == ',' || c == ';' || c == '=')
            .filter_map(|tok| tok.parse::<f64>().ok()).rfind(|v| v.is_finite())
            .ok_or_else(|| Error::UndefinedMetric(format!("no number in PESQ output {stdout:?}")))
    }
}

/// Labels attached to every row of one evaluation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalLabels {
    pub system: String,
    pub sampler: Option<String>,
    pub n_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Missing,
    Invalid,
}

/// One CSV row. Columns appear in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub system: String,
    pub sampler: Option<String>,
    pub n_steps: Option<usize>,
    pub fold: usize,
    pub condition: Condition,
    pub status: RowStatus,
    pub snr_in: Option<f64>,
    pub snr_out: Option<f64>,
    pub delta_snr: Option<f64>,
    pub estoi_in: Option<f64>,
    pub estoi_out: Option<f64>,
    pub delta_estoi: Option<f64>,
    pub si_sdr_in: Option<f64>,
    pub si_sdr_out: Option<f64>,
    pub delta_si_sdr: Option<f64>,
    pub pesq_in: Option<f64>,
    pub pesq_out: Option<f64>,
    pub delta_pesq: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 19] = [
    "id", "system", "sampler", "n_steps", "fold", "condition", "status", "snr_in", "snr_out",
    "delta_snr", "estoi_in", "estoi_out", "delta_estoi", "si_sdr_in", "si_sdr_out",
    "delta_si_sdr", "pesq_in", "pesq_out", "delta_pesq",
];

/// Metric values of the input and output signals of one mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub snr: (f64, f64),
    pub estoi: (f64, f64),
    pub si_sdr: (f64, f64),
}

/// SNR, ESTOI and SI-SDR of `mixture` and `enhanced` against `target`. SNR-type
/// values are capped at [`SNR_CAP_DB`].
pub fn score_pair(mixture: &[f64], enhanced: &[f64], target: &[f64], sample_rate: u32) -> Result<MetricPair> {
    Ok(MetricPair {
        snr: (cap_db(snr_db(mixture, target)?), cap_db(snr_db(enhanced, target)?)),
        estoi: (estoi(mixture, target, sample_rate)?, estoi(enhanced, target, sample_rate)?),
        si_sdr: (cap_db(si_sdr(mixture, target)?), cap_db(si_sdr(enhanced, target)?)),
    })
}

impl EvalRow {
    fn empty(m: &IndexedMixture, labels: &EvalLabels, status: RowStatus) -> Self {
        EvalRow {
            id: m.id.clone(),
            system: labels.system.clone(),
            sampler: labels.sampler.clone(),
            n_steps: labels.n_steps,
            fold: m.fold,
            condition: m.condition,
            status,
            snr_in: None,
            snr_out: None,
            delta_snr: None,
            estoi_in: None,
            estoi_out: None,
            delta_estoi: None,
            si_sdr_in: None,
            si_sdr_out: None,
            delta_si_sdr: None,
            pesq_in: None,
            pesq_out: None,
            delta_pesq: None,
        }
    }

    fn fill(&mut self, p: &MetricPair) {
        self.snr_in = Some(p.snr.0);
        self.snr_out = Some(p.snr.1);
        self.delta_snr = Some(p.snr.1 - p.snr.0);
        self.estoi_in = Some(p.estoi.0);
        self.estoi_out = Some(p.estoi.1);
        self.delta_estoi = Some(p.estoi.1 - p.estoi.0);
        self.si_sdr_in = Some(p.si_sdr.0);
        self.si_sdr_out = Some(p.si_sdr.1);
        self.delta_si_sdr = Some(p.si_sdr.1 - p.si_sdr.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub message: String,
}

/// Mean metrics over the `ok` rows of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub condition: Condition,
    pub fold: usize,
    pub system: String,
    pub sampler: Option<String>,
    pub n_steps: Option<usize>,
    pub count: usize,
    pub missing: usize,
    pub invalid: usize,
    pub snr_in: f64,
    pub snr_out: f64,
    pub delta_snr: f64,
    pub estoi_in: f64,
    pub estoi_out: f64,
    pub delta_estoi: f64,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub delta_si_sdr: f64,
    pub delta_pesq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<Aggregate>,
    pub problems: Vec<Problem>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub labels: EvalLabels,
    /// Restrict to these conditions; all test conditions when empty.
    pub conditions: Vec<Condition>,
    pub pesq: Option<PesqHook>,
}

/// Path of the enhanced file for a mixture inside an output directory.
pub fn enhanced_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.wav"))
}

fn first_channel(path: &Path) -> Result<(Vec<f64>, u32)> {
    let a = read_wav(path)?;
    let sr = a.sample_rate;
    Ok((a.downmix(), sr))
}

fn evaluate_one(
    m: &IndexedMixture,
    data_root: &Path,
    enhanced_dir: &Path,
    opts: &EvalOptions,
) -> (EvalRow, Option<Problem>) {
    let problem = |message: String| Problem { id: m.id.clone(), message };
    let Some(files) = &m.files else {
        return (
            EvalRow::empty(m, &opts.labels, RowStatus::Missing),
            Some(problem("mixture has not been rendered".into())),
        );
    };
    let out_path = enhanced_path(enhanced_dir, &m.id);
    if !out_path.exists() {
        return (
            EvalRow::empty(m, &opts.labels, RowStatus::Missing),
            Some(problem(format!("missing enhanced file {}", out_path.display()))),
        );
    }
    let mix_path = data_root.join(&files.mixture);
    let target_path = data_root.join(&files.target);
    let scored = (|| -> Result<MetricPair> {
        let (y, sr) = first_channel(&mix_path)?;
        let (t, _) = first_channel(&target_path)?;
        let (x, _) = first_channel(&out_path)?;
        score_pair(&y, &x, &t, sr)
    })();
    match scored {
        Ok(p) => {
            let mut row = EvalRow::empty(m, &opts.labels, RowStatus::Ok);
            row.fill(&p);
            let mut note = None;
            if let Some(hook) = &opts.pesq {
                match (hook.score(&target_path, &mix_path), hook.score(&target_path, &out_path)) {
                    (Ok(a), Ok(b)) => {
                        row.pesq_in = Some(a);
                        row.pesq_out = Some(b);
                        row.delta_pesq = Some(b - a);
                    }
                    (Err(e), _) | (_, Err(e)) => note = Some(problem(format!("PESQ: {e}"))),
                }
            }
            (row, note)
        }
        Err(e) => (
            EvalRow::empty(m, &opts.labels, RowStatus::Invalid),
            Some(problem(e.to_string())),
        ),
    }
}

/// Scores every test mixture of `index` whose enhanced output lives in
/// `enhanced_dir`. Missing or unreadable outputs are listed in
/// [`EvalResult::problems`] and their rows carry no metrics.
pub fn evaluate_batch(
    index: &DatasetIndex,
    data_root: &Path,
    enhanced_dir: &Path,
    opts: &EvalOptions,
) -> EvalResult {
    let wanted: Vec<Condition> = if opts.conditions.is_empty() {
        vec![Condition::Matched, Condition::Mismatched]
    } else {
        opts.conditions.clone()
    };
    let selected: Vec<&IndexedMixture> = index
        .mixtures
        .iter()
        .filter(|m| wanted.contains(&m.condition))
        .collect();
    let scored: Vec<(EvalRow, Option<Problem>)> = selected
        .par_iter()
        .map(|m| evaluate_one(m, data_root, enhanced_dir, opts))
        .collect();
    let mut rows = Vec::with_capacity(scored.len());
    let mut problems = Vec::new();
    for (row, p) in scored {
        rows.push(row);
        problems.extend(p);
    }
    let aggregates = aggregate(&rows);
    EvalResult { rows, aggregates, problems }
}

type GroupKey = (Condition, usize, String, Option<String>, Option<usize>);

/// Per-group means over rows with status `ok`.
pub fn aggregate(rows: &[EvalRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<GroupKey, Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.condition, r.fold, r.system.clone(), r.sampler.clone(), r.n_steps);
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((condition, fold, system, sampler, n_steps), members)| {
            let ok: Vec<&EvalRow> = members.iter().copied().filter(|r| r.status == RowStatus::Ok).collect();
            let mean = |f: fn(&EvalRow) -> Option<f64>| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            };
            let pesq: Vec<f64> = ok.iter().filter_map(|r| r.delta_pesq).collect();
            Aggregate {
                count: ok.len(),
                missing: members.iter().filter(|r| r.status == RowStatus::Missing).count(),
                invalid: members.iter().filter(|r| r.status == RowStatus::Invalid).count(),
                snr_in: mean(|r| r.snr_in),
                snr_out: mean(|r| r.snr_out),
                delta_snr: mean(|r| r.delta_snr),
                estoi_in: mean(|r| r.estoi_in),
                estoi_out: mean(|r| r.estoi_out),
                delta_estoi: mean(|r| r.delta_estoi),
                si_sdr_in: mean(|r| r.si_sdr_in),
                si_sdr_out: mean(|r| r.si_sdr_out),
                delta_si_sdr: mean(|r| r.delta_si_sdr),
                delta_pesq: (!pesq.is_empty()).then(|| pesq.iter().sum::<f64>() / pesq.len() as f64),
                condition,
                fold,
                system,
                sampler,
                n_steps,
            }
        })
        .collect()
}

pub fn write_rows_csv(rows: &[EvalRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_aggregates_csv(aggs: &[Aggregate], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for a in aggs {
        w.serialize(a).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}
