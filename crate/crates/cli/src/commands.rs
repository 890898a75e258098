use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use envdiff_core::denoiser::{
    fit_linear_denoiser, Denoiser, FitDiagnostics, GaussianDenoiser, LinearDenoiser,
    OracleDenoiser, Preconditioning, TrainingPair,
};
use envdiff_core::metrics::{
    enhanced_path, evaluate_batch, write_aggregates_csv, write_rows_csv, EvalLabels,
    EvalOptions, EvalResult, PesqHook, RowStatus,
};
use envdiff_core::pipeline::{enhance_spectrogram, enhance_waveform, noise_pair, EnhanceSetup, Enhanced};
use envdiff_core::rng::{substream, StreamRng};
use envdiff_core::sampler::{SamplerDiagnostics, SamplerKind};
use envdiff_core::schedule::ScheduleParams;
use envdiff_core::simulate::{
    build_fold, new_index, render_indexed, synth_corpus, AudioLibrary, Condition, DatabaseManifest,
    DatabaseSet, DatasetIndex, IndexedMixture,
};
use envdiff_core::spectral::{analyze, coefficient_variance, read_wav, write_wav, Audio, SampleFormat};

use crate::config::{DenoiserKind, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::report::write_report;

pub const INDEX_FILE: &str = "index.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Directory of one rendered fold below the dataset root.
pub fn fold_dir(root: &Path, n_train: usize, fold: usize) -> PathBuf {
    root.join(format!("n{n_train}-fold{fold}"))
}

fn database_set(cfg: &ExperimentConfig) -> Result<(DatabaseSet, Vec<PathBuf>)> {
    if cfg.dataset.synthetic {
        let dir = cfg.dataset.root.join("corpus");
        log::info!("generating synthetic databases in {}", dir.display());
        let set = synth_corpus(&dir, cfg.seed, &cfg.dataset.synth)?;
        let manifests = envdiff_core::simulate::DatabaseKind::ALL
            .iter()
            .flat_map(|k| (1..=5).map(move |d| format!("{k}{d}.csv")))
            .map(|name| dir.join(name))
            .collect();
        Ok((set, manifests))
    } else {
        if cfg.dataset.manifests.is_empty() {
            return Err(CliError::Config(
                "no manifests configured; pass --synthetic or set dataset.manifests".into(),
            ));
        }
        let manifests = cfg
            .dataset
            .manifests
            .iter()
            .map(|p| DatabaseManifest::load(p, true))
            .collect::<envdiff_core::Result<Vec<_>>>()?;
        Ok((DatabaseSet::from_manifests(manifests)?, cfg.dataset.manifests.clone()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub dataset: PathBuf,
    pub fold: usize,
    pub n_train: usize,
    pub mixtures: usize,
    pub hours: Vec<(Condition, f64)>,
    pub infeasible: usize,
    /// Measured std of compressed clean-target coefficients (training split).
    pub measured_sigma_data: f64,
    pub configured_sigma_data: f64,
}

/// Renders every configured fold. Returns one summary per fold directory.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Vec<SimulateSummary>> {
    cfg.validate()?;
    let (set, manifest_paths) = database_set(cfg)?;
    let lib = AudioLibrary::new(set.clone());
    let opts = cfg.dataset_options();
    let mut out = Vec::new();
    for &fold in &cfg.dataset.folds {
        let plan = build_fold(&set, cfg.dataset.n_train, fold, cfg.seed)?;
        let dir = fold_dir(&cfg.dataset.root, cfg.dataset.n_train, fold);
        create_dir(&dir)?;
        let mut index = new_index(&set, &plan, &opts)?;
        log::info!("fold {fold}: rendering {} mixtures into {}", index.mixtures.len(), dir.display());
        index
            .mixtures
            .par_iter_mut()
            .try_for_each(|m| render_indexed(m, &lib, &dir))?;
        let index_path = dir.join(INDEX_FILE);
        index.save(&index_path)?;

        let sigma = measure_sigma_data(&index, &dir, cfg)?;
        log::info!(
            "fold {fold}: measured sigma_data {sigma:.4} (configured {})",
            cfg.denoiser.sigma_data
        );
        let summary = SimulateSummary {
            dataset: dir.clone(),
            fold,
            n_train: cfg.dataset.n_train,
            mixtures: index.mixtures.len(),
            hours: Condition::ALL
                .iter()
                .map(|&c| (c, index.of_condition(c).map(|m| m.duration_s).sum::<f64>() / 3600.0))
                .collect(),
            infeasible: index.mixtures.iter().filter(|m| m.infeasible).count(),
            measured_sigma_data: sigma,
            configured_sigma_data: cfg.denoiser.sigma_data,
        };
        write_report(&dir.join("simulate-report.json"), "simulate", cfg, &manifest_paths, &summary)?;
        out.push(summary);
    }
    Ok(out)
}

/// Std of compressed target coefficients over (up to 50) training mixtures.
fn measure_sigma_data(index: &DatasetIndex, dir: &Path, cfg: &ExperimentConfig) -> Result<f64> {
    let specs = index
        .of_condition(Condition::Train)
        .take(50)
        .filter_map(|m| m.files.as_ref())
        .map(|f| {
            let t = read_wav(&dir.join(&f.target))?.downmix();
            analyze(&t, &cfg.stft)
        })
        .collect::<envdiff_core::Result<Vec<_>>>()?;
    Ok(coefficient_variance(&specs).sqrt())
}

pub fn load_index(dataset: &Path) -> Result<DatasetIndex> {
    let p = dataset.join(INDEX_FILE);
    if !p.is_file() {
        return Err(CliError::Data(format!("no dataset index at {}", p.display())));
    }
    Ok(DatasetIndex::load(&p)?)
}

fn read_pair(m: &IndexedMixture, dataset: &Path, cfg: &ExperimentConfig) -> Result<(Vec<f64>, TrainingPair)> {
    let files = m
        .files
        .as_ref()
        .ok_or_else(|| CliError::Data(format!("mixture {} was not rendered", m.id)))?;
    let y = read_wav(&dataset.join(&files.mixture))?.downmix();
    let t = read_wav(&dataset.join(&files.target))?.downmix();
    let pair = noise_pair(&y, &t, &cfg.stft)?;
    Ok((y, pair))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: PathBuf,
    pub pairs: usize,
    pub diagnostics: FitDiagnostics,
    pub measured_noise_std: f64,
}

/// Fits the linear denoiser on the training mixtures of `dataset`.
pub fn run_fit(cfg: &ExperimentConfig, dataset: &Path, model_out: &Path) -> Result<FitSummary> {
    cfg.validate()?;
    let index = load_index(dataset)?;
    let limit = cfg.fit.max_pairs.unwrap_or(usize::MAX);
    let train: Vec<&IndexedMixture> = index.of_condition(Condition::Train).take(limit).collect();
    if train.is_empty() {
        return Err(CliError::Data("dataset has no training mixtures".into()));
    }
    let pairs = train
        .par_iter()
        .map(|m| read_pair(m, dataset, cfg).map(|(_, p)| p))
        .collect::<Result<Vec<_>>>()?;
    let noise_std = coefficient_variance(pairs.iter().map(|p| &p.n0)).sqrt();
    let precond = Preconditioning { sigma_data: cfg.denoiser.sigma_data };
    let mut rng = substream(cfg.seed, "fit", 0);
    let (model, diagnostics) =
        fit_linear_denoiser(&pairs, &cfg.schedule, &precond, &cfg.fit_options(), &mut rng)?;
    if let Some(dir) = model_out.parent() {
        create_dir(dir)?;
    }
    model.save(model_out)?;
    let summary = FitSummary {
        model: model_out.to_path_buf(),
        pairs: pairs.len(),
        diagnostics,
        measured_noise_std: noise_std,
    };
    let inputs = vec![dataset.join(INDEX_FILE)];
    let report = model_out.with_extension("report.json");
    write_report(&report, "fit", cfg, &inputs, &summary)?;
    Ok(summary)
}

enum Resolved {
    Oracle,
    Gaussian(GaussianDenoiser),
    Linear(LinearDenoiser),
}

impl Resolved {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match cfg.denoiser.kind {
            DenoiserKind::Oracle => Resolved::Oracle,
            DenoiserKind::Gaussian => Resolved::Gaussian(GaussianDenoiser { sigma_prior: cfg.denoiser.sigma_prior }),
            DenoiserKind::Linear => {
                let path = cfg
                    .denoiser
                    .model
                    .as_ref()
                    .ok_or_else(|| CliError::Config("linear denoiser needs denoiser.model".into()))?;
                if !path.is_file() {
                    return Err(CliError::Data(format!("model file {} does not exist", path.display())));
                }
                Resolved::Linear(LinearDenoiser::load(path)?)
            }
        })
    }

    fn label(&self) -> String {
        match self {
            Resolved::Oracle => "oracle".into(),
            Resolved::Gaussian(g) => g.id(),
            Resolved::Linear(l) => l.id(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureRun {
    pub id: String,
    pub condition: Condition,
    pub output: Option<PathBuf>,
    pub diagnostics: Option<SamplerDiagnostics>,
    pub error: Option<String>,
    /// Exit code the failure maps to.
    #[serde(skip)]
    pub error_code: Option<i32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnhanceSummary {
    pub denoiser: String,
    pub sampler: SamplerKind,
    pub n_steps: usize,
    pub expected_evaluations: usize,
    pub runs: Vec<MixtureRun>,
    pub failures: usize,
}

/// Enhances the selected test mixtures of `dataset` into `out/<id>.wav`.
/// Per-mixture failures are recorded and the run continues.
pub fn run_enhance(cfg: &ExperimentConfig, dataset: &Path, out: &Path) -> Result<EnhanceSummary> {
    cfg.validate()?;
    let index = load_index(dataset)?;
    let denoiser = Resolved::new(cfg)?;
    let setup = cfg.enhance_setup();
    create_dir(out)?;
    let conditions = cfg.test_conditions();
    let selected: Vec<&IndexedMixture> = index
        .mixtures
        .iter()
        .filter(|m| conditions.contains(&m.condition))
        .collect();
    log::info!(
        "enhancing {} mixtures with {} / {} n_steps={}",
        selected.len(),
        denoiser.label(),
        setup.sampler.kind,
        setup.sampler.n_steps
    );
    let done = Mutex::new(0usize);
    let runs: Vec<MixtureRun> = selected
        .par_iter()
        .map(|m| {
            let result = enhance_one(m, dataset, out, cfg, &setup, &denoiser);
            let mut n = done.lock().expect("progress lock");
            *n += 1;
            log::debug!("[{}/{}] {}", *n, selected.len(), m.id);
            match result {
                Ok((path, diagnostics)) => MixtureRun {
                    id: m.id.clone(),
                    condition: m.condition,
                    output: Some(path),
                    diagnostics: Some(diagnostics),
                    error: None,
                    error_code: None,
                },
                Err(e) => {
                    log::warn!("{}: {e}", m.id);
                    MixtureRun {
                        id: m.id.clone(),
                        condition: m.condition,
                        output: None,
                        diagnostics: None,
                        error: Some(e.to_string()),
                        error_code: Some(e.exit_code()),
                    }
                }
            }
        })
        .collect();
    let summary = EnhanceSummary {
        denoiser: denoiser.label(),
        sampler: setup.sampler.kind,
        n_steps: setup.sampler.n_steps,
        expected_evaluations: setup.sampler.expected_evaluations(),
        failures: runs.iter().filter(|r| r.error.is_some()).count(),
        runs,
    };
    let mut inputs = vec![dataset.join(INDEX_FILE)];
    if let Resolved::Linear(_) = denoiser {
        inputs.extend(cfg.denoiser.model.clone());
    }
    write_report(&out.join("enhance-report.json"), "enhance", cfg, &inputs, &summary)?;
    Ok(summary)
}

fn enhance_one(
    m: &IndexedMixture,
    dataset: &Path,
    out: &Path,
    cfg: &ExperimentConfig,
    setup: &EnhanceSetup,
    denoiser: &Resolved,
) -> Result<(PathBuf, SamplerDiagnostics)> {
    let files = m
        .files
        .as_ref()
        .ok_or_else(|| CliError::Data(format!("mixture {} was not rendered", m.id)))?;
    let mut rng = substream(
        cfg.seed,
        &format!("sampler/{}/{}", setup.sampler.kind, m.id),
        setup.sampler.seed,
    );
    let enhanced = match denoiser {
        Resolved::Oracle => {
            let (y_wave, pair) = read_pair(m, dataset, cfg)?;
            let oracle = OracleDenoiser::new(vec![pair.n0])?;
            enhance_spectrogram(&oracle, &pair.y, y_wave.len(), setup, &mut rng)?
        }
        Resolved::Gaussian(d) => enhance_file(d, &dataset.join(&files.mixture), setup, &mut rng)?,
        Resolved::Linear(d) => enhance_file(d, &dataset.join(&files.mixture), setup, &mut rng)?,
    };
    if enhanced.waveform.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric(format!("{}: non-finite enhanced samples", m.id)));
    }
    let path = enhanced_path(out, &m.id);
    write_wav(&path, &Audio::mono(enhanced.waveform), SampleFormat::Float32)?;
    Ok((path, enhanced.diagnostics))
}

fn enhance_file<D: Denoiser>(d: &D, mixture: &Path, setup: &EnhanceSetup, rng: &mut StreamRng) -> Result<Enhanced> {
    let y = read_wav(mixture)?.downmix();
    Ok(enhance_waveform(d, &y, setup, rng)?)
}

/// Scores `enhanced` against the dataset targets and writes `rows.csv`,
/// `aggregates.csv` and a report into `out`.
pub fn run_evaluate(
    cfg: &ExperimentConfig,
    dataset: &Path,
    enhanced: &Path,
    labels: EvalLabels,
    out: &Path,
) -> Result<EvalResult> {
    cfg.validate()?;
    let index = load_index(dataset)?;
    let opts = EvalOptions {
        labels,
        conditions: cfg.test_conditions(),
        pesq: cfg.evaluate.pesq_command.clone().map(PesqHook::new).transpose()?,
    };
    let result = evaluate_batch(&index, dataset, enhanced, &opts);
    for p in &result.problems {
        log::warn!("{}: {}", p.id, p.message);
    }
    create_dir(out)?;
    write_rows_csv(&result.rows, &out.join("rows.csv"))?;
    write_aggregates_csv(&result.aggregates, &out.join("aggregates.csv"))?;
    write_report(
        &out.join("evaluate-report.json"),
        "evaluate",
        cfg,
        &[dataset.join(INDEX_FILE)],
        (&result.aggregates, &result.problems),
    )?;
    Ok(result)
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sampler: SamplerKind,
    pub n_steps: usize,
    pub condition: Condition,
    pub mixtures: usize,
    pub missing: usize,
    pub evaluations: Option<usize>,
    pub delta_snr: f64,
    pub delta_estoi: f64,
    pub delta_si_sdr: f64,
    pub delta_pesq: Option<f64>,
    /// Some mixtures failed or are missing; the means cover the rest.
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub denoiser: String,
}

/// Enhances and scores every (sampler, n_steps) pair of the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, dataset: &Path, out: &Path) -> Result<SweepSummary> {
    cfg.validate()?;
    let denoiser = Resolved::new(cfg)?.label();
    let mut rows = Vec::new();
    let mut all_rows = Vec::new();
    for &kind in &cfg.sweep.samplers {
        for &n in &cfg.sweep.n_steps {
            let mut run_cfg = cfg.clone();
            run_cfg.sampler.kind = kind;
            run_cfg.sampler.n_steps = n;
            let dir = out.join(format!("{kind}-n{n}"));
            let enhanced = run_enhance(&run_cfg, dataset, &dir)?;
            let labels = EvalLabels {
                system: denoiser.clone(),
                sampler: Some(kind.to_string()),
                n_steps: Some(n),
            };
            let result = run_evaluate(&run_cfg, dataset, &dir, labels, &dir)?;
            let evaluations: Vec<usize> = enhanced
                .runs
                .iter()
                .filter_map(|r| r.diagnostics.map(|d| d.evaluations))
                .collect();
            let evals = evaluations.first().copied().filter(|e| evaluations.iter().all(|x| x == e));
            for a in &result.aggregates {
                rows.push(SweepRow {
                    sampler: kind,
                    n_steps: n,
                    condition: a.condition,
                    mixtures: a.count,
                    missing: a.missing + a.invalid,
                    evaluations: evals,
                    delta_snr: a.delta_snr,
                    delta_estoi: a.delta_estoi,
                    delta_si_sdr: a.delta_si_sdr,
                    delta_pesq: a.delta_pesq,
                    flagged: a.missing + a.invalid > 0 || evals.is_none(),
                });
            }
            all_rows.extend(result.rows);
        }
    }
    create_dir(out)?;
    write_sweep_csv(&rows, &out.join("sweep.csv"))?;
    write_rows_csv(&all_rows, &out.join("rows.csv"))?;
    let summary = SweepSummary { rows, denoiser };
    let mut inputs = vec![dataset.join(INDEX_FILE)];
    if cfg.denoiser.kind == DenoiserKind::Linear {
        inputs.extend(cfg.denoiser.model.clone());
    }
    write_report(&out.join("sweep-report.json"), "sweep", cfg, &inputs, &summary)?;
    Ok(summary)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| CliError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub t: f64,
    /// Empty at t = 0 where the log-SNR is infinite.
    pub lambda: Option<f64>,
    pub sigma: f64,
    pub scale: f64,
    pub beta: f64,
    pub drift: f64,
    pub diffusion: f64,
    pub clamped_lambda: bool,
    pub clamped_beta: bool,
}

/// The schedule on `points` evenly spaced times in `[0, t_end]`.
pub fn schedule_table(schedule: &ScheduleParams, points: usize) -> Result<Vec<ScheduleRow>> {
    schedule.validate()?;
    if points < 2 {
        return Err(CliError::Config("need at least two points".into()));
    }
    (0..points)
        .map(|i| {
            let t = schedule.t_end * i as f64 / (points - 1) as f64;
            let p = schedule.eval_point(t)?;
            Ok(ScheduleRow {
                t,
                lambda: p.lambda.finite(),
                sigma: p.sigma,
                scale: p.scale,
                beta: p.beta,
                drift: p.drift_coeff,
                diffusion: p.diffusion_coeff,
                clamped_lambda: p.clamped.lambda,
                clamped_beta: p.clamped.beta,
            })
        })
        .collect()
}

/// Count of enhance rows per status, for logging.
pub fn status_counts(rows: &[envdiff_core::metrics::EvalRow]) -> (usize, usize, usize) {
    let c = |s| rows.iter().filter(|r| r.status == s).count();
    (c(RowStatus::Ok), c(RowStatus::Missing), c(RowStatus::Invalid))
}
