use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cafs_core::act::{argmax_label, regime, ActConfig, ActSample, ClassThresholds, ThresholdsReport, Top1Map};
use cafs_core::aos::{aos_plan, materialize, ClassScores, PlanReport, DEFAULT_LAMBDA};
use cafs_core::folds::{build_folds, default_n_v, FoldSpec, DEFAULT_K, DEFAULT_MAX_ATTEMPTS, DEFAULT_NV_FRACTION};
use cafs_core::metrics::{ConfusionAccumulator, ScoresReport};
use cafs_core::store::{
    load_manifest, read_label_map, read_probability_map_with, save_manifest, write_label_map, write_probability_map,
    DatasetManifest, LabelMap, LoadMode, DEFAULT_IGNORE_INDEX,
};
use cafs_core::synth::{generate_dataset, predict_indexed, ConfidenceProfile, PredictorProfile, SceneSpec};
use cafs_core::{aggregate_thresholds, run_act_samples, ActReport};
use clap::Args;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

type CliResult<T> = Result<T, CliError>;

/// `folds.json` or `folds.json:k` with a 0-based fold index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldRef {
    pub path: PathBuf,
    pub index: Option<usize>,
}

impl FromStr for FoldRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err("empty fold reference".into());
        }
        if let Some((path, k)) = s.rsplit_once(':') {
            if !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()) {
                let index = k.parse().map_err(|e| format!("fold index `{k}`: {e}"))?;
                return Ok(FoldRef {
                    path: path.into(),
                    index: Some(index),
                });
            }
        }
        Ok(FoldRef {
            path: s.into(),
            index: None,
        })
    }
}

#[derive(Clone, Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Samples per fold.
    #[arg(long, conflicts_with = "nv_fraction")]
    pub nv: Option<usize>,
    /// Fold size as a fraction of the labelled set.
    #[arg(long)]
    pub nv_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    pub max_attempts: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct ScoresArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Holds `<id>.npy` per sample: label rasters, or probability maps with `--argmax`.
    #[arg(long)]
    pub preds_dir: PathBuf,
    #[arg(long)]
    pub labels_dir: PathBuf,
    /// Restrict to one fold; all manifest samples otherwise.
    #[arg(long)]
    pub fold: Option<FoldRef>,
    #[arg(long)]
    pub argmax: bool,
    #[arg(long)]
    pub from_logits: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct ActArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub probs_dir: PathBuf,
    #[arg(long)]
    pub labels_dir: PathBuf,
    /// One fold (`folds.json:k`) or every fold (`folds.json`); all samples when absent.
    #[arg(long)]
    pub fold: Option<FoldRef>,
    #[arg(long)]
    pub min_ct: Option<f64>,
    #[arg(long)]
    pub max_ct: Option<f64>,
    /// Named range such as `0.85-0.95`, instead of `--min-ct`/`--max-ct`.
    #[arg(long, conflicts_with_all = ["min_ct", "max_ct"])]
    pub regime: Option<String>,
    #[arg(long, default_value_t = cafs_core::act::DEFAULT_MAX_CP)]
    pub max_cp: f64,
    #[arg(long, default_value_t = cafs_core::act::DEFAULT_EPSILON)]
    pub eps: f64,
    /// Defaults to round((max_ct - min_ct) / eps).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub from_logits: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct AosArgs {
    /// One scores file per fold.
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Classes left out of the sampling-threshold mean, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub exclude_classes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_plan: PathBuf,
    #[arg(long)]
    pub out_manifest: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct PseudoLabelArgs {
    #[arg(long)]
    pub probs_dir: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IGNORE_INDEX)]
    pub ignore_index: u16,
    #[arg(long)]
    pub from_logits: bool,
    /// Coverage report path; `<out-dir>/coverage.json` by default.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct SimulateArgs {
    /// Scene spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Predictor profile JSON.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn require_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    require_file(path)?;
    let bytes = fs::read(path).map_err(|e| cafs_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| cafs_core::Error::Schema(format!("{}: {e}", path.display())).into())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| {
        cafs_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut text = serde_json::to_vec_pretty(value).expect("artifact serializes");
    text.push(b'\n');
    fs::write(path, text).map_err(|e| {
        cafs_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn sample_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.npy"))
}

fn check_present(dir: &Path, ids: &[String]) -> CliResult<()> {
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !sample_file(dir, id).is_file())
        .cloned()
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingPrediction(missing))
    }
}

fn load_mode(from_logits: bool) -> LoadMode {
    if from_logits {
        LoadMode::FromLogits
    } else {
        LoadMode::Probabilities
    }
}

fn load_folds(fold: &FoldRef, manifest: &DatasetManifest) -> CliResult<FoldSpec> {
    let spec: FoldSpec = read_json(&fold.path)?;
    spec.validate(manifest)?;
    if let Some(k) = fold.index {
        if k >= spec.k {
            return Err(CliError::Usage(format!(
                "fold index {k} out of range for {} folds in {}",
                spec.k,
                fold.path.display()
            )));
        }
    }
    Ok(spec)
}

/// Sample groups selected by an optional fold reference, with their fold index.
fn selected_groups(fold: Option<&FoldRef>, manifest: &DatasetManifest) -> CliResult<Vec<(Option<usize>, Vec<String>)>> {
    let Some(fold) = fold else {
        let ids = manifest.samples().iter().map(|s| s.id.clone()).collect();
        return Ok(vec![(None, ids)]);
    };
    let spec = load_folds(fold, manifest)?;
    Ok(match fold.index {
        Some(k) => vec![(Some(k), spec.folds[k].clone())],
        None => spec
            .folds
            .into_iter()
            .enumerate()
            .map(|(k, ids)| (Some(k), ids))
            .collect(),
    })
}

pub fn cmd_split(args: &SplitArgs) -> CliResult<()> {
    require_file(&args.manifest)?;
    if let Some(f) = args.nv_fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(CliError::Usage(format!("--nv-fraction {f} must lie in (0, 1]")));
        }
    }
    let manifest = load_manifest(&args.manifest)?;
    let n_v = args
        .nv
        .unwrap_or_else(|| default_n_v(&manifest, args.nv_fraction.unwrap_or(DEFAULT_NV_FRACTION)));
    let spec = build_folds(&manifest, args.k, n_v, args.seed, args.max_attempts)?;
    log::info!("built {} folds of {} samples", spec.k, spec.n_v);
    write_json(&args.out, &spec)
}

fn prediction_label(args: &ScoresArgs, manifest: &DatasetManifest, id: &str) -> CliResult<LabelMap> {
    let path = sample_file(&args.preds_dir, id);
    Ok(if args.argmax {
        let probs = read_probability_map_with::<f64>(&path, load_mode(args.from_logits))?;
        if probs.classes() != manifest.class_count() {
            return Err(cafs_core::Error::ClassCountMismatch {
                expected: manifest.class_count(),
                found: probs.classes(),
            }
            .into());
        }
        argmax_label(&probs, manifest.ignore_index())?
    } else {
        read_label_map(&path, manifest.class_count(), manifest.ignore_index())?
    })
}

pub fn cmd_scores(args: &ScoresArgs) -> CliResult<()> {
    require_file(&args.manifest)?;
    require_dir(&args.preds_dir)?;
    require_dir(&args.labels_dir)?;
    let manifest = load_manifest(&args.manifest)?;
    let (k, ids) = selected_groups(args.fold.as_ref(), &manifest)?
        .into_iter()
        .reduce(|mut a, b| {
            a.1.extend(b.1);
            (None, a.1)
        })
        .expect("at least one group");
    if ids.is_empty() {
        return Err(cafs_core::Error::EmptyFold.into());
    }
    check_present(&args.preds_dir, &ids)?;
    let c = manifest.class_count();
    let acc = ids
        .par_iter()
        .map(|id| -> CliResult<ConfusionAccumulator> {
            let prediction = prediction_label(args, &manifest, id)?;
            let reference = read_label_map(sample_file(&args.labels_dir, id), c, manifest.ignore_index())?;
            let mut acc = ConfusionAccumulator::new(c);
            acc.accumulate(&prediction, &reference)?;
            Ok(acc)
        })
        .try_reduce(
            || ConfusionAccumulator::new(c),
            |mut a, b| {
                a.merge_from(&b)?;
                Ok(a)
            },
        )?;
    write_json(&args.out, &ScoresReport::from_accumulator(k, &acc))
}

fn act_config(args: &ActArgs) -> CliResult<ActConfig<f64>> {
    let (min_ct, max_ct) = match (&args.regime, args.min_ct, args.max_ct) {
        (Some(name), _, _) => {
            let r = regime(name).ok_or_else(|| {
                let known: Vec<&str> = cafs_core::act::THRESHOLD_REGIMES.iter().map(|r| r.name).collect();
                CliError::Usage(format!("unknown regime `{name}`; known: {}", known.join(", ")))
            })?;
            (r.min_ct, r.max_ct)
        }
        (None, Some(min), Some(max)) => (min, max),
        _ => return Err(CliError::Usage("give --regime or both --min-ct and --max-ct".into())),
    };
    let mut config = ActConfig::new(min_ct, max_ct)?
        .with_max_cp(args.max_cp)
        .with_epsilon(args.eps);
    if let Some(m) = args.iterations {
        config = config.with_iterations(m);
    }
    config.validate()?;
    Ok(config)
}

fn load_act_samples(args: &ActArgs, manifest: &DatasetManifest, ids: &[String]) -> CliResult<Vec<ActSample<f64>>> {
    let mode = load_mode(args.from_logits);
    ids.par_iter()
        .map(|id| {
            let probs = read_probability_map_with::<f64>(sample_file(&args.probs_dir, id), mode)?;
            let top1 = Top1Map::from_probabilities(&probs);
            drop(probs);
            let label = read_label_map(
                sample_file(&args.labels_dir, id),
                manifest.class_count(),
                manifest.ignore_index(),
            )?;
            Ok(ActSample::from_top1(top1, label)?)
        })
        .collect()
}

pub fn cmd_act(args: &ActArgs) -> CliResult<()> {
    let config = act_config(args)?;
    require_file(&args.manifest)?;
    require_dir(&args.probs_dir)?;
    require_dir(&args.labels_dir)?;
    let manifest = load_manifest(&args.manifest)?;
    let groups = selected_groups(args.fold.as_ref(), &manifest)?;
    let all_ids: Vec<String> = groups.iter().flat_map(|(_, ids)| ids.iter().cloned()).collect();
    check_present(&args.probs_dir, &all_ids)?;

    let mut runs: Vec<(Option<usize>, ActReport<f64>)> = Vec::with_capacity(groups.len());
    for (fold, ids) in &groups {
        let samples = load_act_samples(args, &manifest, ids)?;
        let report = run_act_samples(&samples, &config)?;
        log::info!(
            "fold {}: thresholds {:?}, coverage {:.4}",
            fold.map_or("-".to_string(), |k| k.to_string()),
            report.final_thresholds.values(),
            report.coverage
        );
        runs.push((*fold, report));
    }
    let finals: Vec<ClassThresholds<f64>> = runs.iter().map(|(_, r)| r.final_thresholds.clone()).collect();
    let aggregate = aggregate_thresholds(&finals)?;
    let refs: Vec<(Option<usize>, &ActReport<f64>)> = runs.iter().map(|(k, r)| (*k, r)).collect();
    write_json(&args.out, &ThresholdsReport::new(&config, &aggregate, &refs))
}

pub fn cmd_aos(args: &AosArgs) -> CliResult<()> {
    require_file(&args.manifest)?;
    let manifest = load_manifest(&args.manifest)?;
    if let Some(&c) = args.exclude_classes.iter().find(|&&c| c >= manifest.class_count()) {
        return Err(CliError::Usage(format!(
            "--exclude-classes names class {c}, but the manifest has {}",
            manifest.class_count()
        )));
    }
    let per_fold = args
        .scores
        .iter()
        .map(|path| {
            let report: ScoresReport = read_json(path)?;
            report
                .validate()
                .map_err(|e| cafs_core::Error::Schema(format!("{}: {e}", path.display())))?;
            Ok(report.class_iou::<f64>())
        })
        .collect::<CliResult<Vec<_>>>()?;
    let scores = ClassScores::from_folds(per_fold, &args.exclude_classes)?;
    let plan = aos_plan(&scores.s_mean, scores.st, &manifest, args.lambda)?;
    let oversampled = materialize(&plan, &manifest, args.seed)?;
    log::info!(
        "sampling threshold {:.4}; {} extra samples",
        scores.st,
        plan.extra_samples()
    );
    write_json(&args.out_plan, &PlanReport::from(&plan))?;
    if let Some(parent) = args.out_manifest.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_manifest(&oversampled, &args.out_manifest)?;
    Ok(())
}

/// Supervision statistics of one pseudo-labelled file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageFile {
    pub file: String,
    pub pixels: u64,
    pub supervised: Vec<u64>,
    pub fixed_supervised: Vec<u64>,
}

/// Coverage report of `pseudo-label`: per-class supervised pixel counts
/// under the given thresholds and under a uniform `max_ct` threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub thresholds: Vec<f64>,
    pub fixed_threshold: f64,
    pub total_pixels: u64,
    pub supervised: Vec<u64>,
    pub fixed_supervised: Vec<u64>,
    pub coverage: f64,
    pub fixed_coverage: f64,
    /// True when no file lost supervised pixels relative to the fixed threshold.
    pub coverage_not_decreased: bool,
    pub files: Vec<CoverageFile>,
}

fn npy_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| cafs_core::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "npy"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_pseudo_label(args: &PseudoLabelArgs) -> CliResult<()> {
    require_dir(&args.probs_dir)?;
    let report: ThresholdsReport = read_json(&args.thresholds)?;
    let thresholds = report.class_thresholds::<f64>()?;
    let c = thresholds.class_count();
    let fixed = ClassThresholds::uniform(c, report.max_ct, report.min_ct, report.max_ct)?;
    let files = npy_files(&args.probs_dir)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no .npy files in {}",
            args.probs_dir.display()
        )));
    }
    create_dir(&args.out_dir)?;
    let mode = load_mode(args.from_logits);

    let results: Vec<Result<CoverageFile, String>> = files
        .par_iter()
        .map(|path| {
            let name = path.file_name().expect("listed file").to_string_lossy().into_owned();
            let run = || -> cafs_core::Result<CoverageFile> {
                let probs = read_probability_map_with::<f64>(path, mode)?;
                if probs.classes() != c {
                    return Err(cafs_core::Error::ClassCountMismatch {
                        expected: c,
                        found: probs.classes(),
                    });
                }
                let top1 = Top1Map::from_probabilities(&probs);
                drop(probs);
                write_label_map(
                    &top1.pseudo_label(&thresholds, args.ignore_index)?,
                    args.out_dir.join(&name),
                )?;
                Ok(CoverageFile {
                    pixels: top1.pixels() as u64,
                    supervised: top1.supervised_counts(&thresholds)?,
                    fixed_supervised: top1.supervised_counts(&fixed)?,
                    file: name.clone(),
                })
            };
            run().map_err(|e| format!("{name}: {e}"))
        })
        .collect();
    let failures: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
    if !failures.is_empty() {
        return Err(CliError::PerFile(failures));
    }
    let files: Vec<CoverageFile> = results.into_iter().map(|r| r.expect("checked")).collect();

    let mut supervised = vec![0u64; c];
    let mut fixed_supervised = vec![0u64; c];
    for f in &files {
        for k in 0..c {
            supervised[k] += f.supervised[k];
            fixed_supervised[k] += f.fixed_supervised[k];
        }
    }
    let total_pixels: u64 = files.iter().map(|f| f.pixels).sum();
    let kept: u64 = supervised.iter().sum();
    let fixed_kept: u64 = fixed_supervised.iter().sum();
    let coverage_not_decreased = files
        .iter()
        .all(|f| f.supervised.iter().sum::<u64>() >= f.fixed_supervised.iter().sum::<u64>());
    if !coverage_not_decreased {
        log::warn!("some files lost supervised pixels against the uniform max_ct threshold");
    }
    let coverage = CoverageReport {
        thresholds: report.thresholds.clone(),
        fixed_threshold: report.max_ct,
        total_pixels,
        supervised,
        fixed_supervised,
        coverage: kept as f64 / total_pixels as f64,
        fixed_coverage: fixed_kept as f64 / total_pixels as f64,
        coverage_not_decreased,
        files,
    };
    let out = args
        .report
        .clone()
        .unwrap_or_else(|| args.out_dir.join("coverage.json"));
    write_json(&out, &coverage)
}

/// Predictor used by `simulate` when no profile is given: error rates rise
/// linearly from 0 to 0.3 across classes.
pub fn default_profile(class_count: usize) -> PredictorProfile {
    let span = (class_count.max(2) - 1) as f64;
    let rates: Vec<f64> = (0..class_count).map(|c| 0.3 * c as f64 / span).collect();
    PredictorProfile::uniform(
        &rates,
        ConfidenceProfile::new(0.9, 20.0),
        ConfidenceProfile::new(0.75, 20.0),
    )
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut spec = match &args.spec {
        Some(path) => read_json::<SceneSpec>(path)?,
        None => SceneSpec::new(args.classes.unwrap_or(3), 64, 64),
    };
    if let Some(c) = args.classes {
        spec.class_count = c;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(h) = args.height {
        spec.height = h;
    }
    if let Some(w) = args.width {
        spec.width = w;
    }
    spec.validate()?;
    let profile = match &args.profile {
        Some(path) => read_json::<PredictorProfile>(path)?,
        None => default_profile(spec.class_count),
    };
    profile.validate()?;
    if profile.class_count() != spec.class_count {
        return Err(CliError::Usage(format!(
            "profile describes {} classes, scene has {}",
            profile.class_count(),
            spec.class_count
        )));
    }

    let data = generate_dataset(&spec, args.n)?;
    create_dir(&args.out_dir)?;
    data.write(&args.out_dir)?;
    let probs_dir = args.out_dir.join("probs");
    create_dir(&probs_dir)?;
    data.manifest
        .samples()
        .par_iter()
        .zip(data.labels.par_iter())
        .enumerate()
        .try_for_each(|(i, (sample, label))| -> cafs_core::Result<()> {
            let probs = predict_indexed::<f32>(label, &profile, spec.seed, i as u64)?;
            write_probability_map(&probs, sample_file(&probs_dir, &sample.id))
        })?;
    write_json(&args.out_dir.join("scene.json"), &spec)?;
    write_json(&args.out_dir.join("profile.json"), &profile)?;
    log::info!("wrote {} samples to {}", args.n, args.out_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_reference_with_and_without_index() {
        let r: FoldRef = "out/folds.json:3".parse().unwrap();
        assert_eq!(
            r,
            FoldRef {
                path: "out/folds.json".into(),
                index: Some(3)
            }
        );
        let r: FoldRef = "folds.json".parse().unwrap();
        assert_eq!(r.index, None);
        let r: FoldRef = "C:/data/folds.json".parse().unwrap();
        assert_eq!(
            r,
            FoldRef {
                path: "C:/data/folds.json".into(),
                index: None
            }
        );
        assert!("".parse::<FoldRef>().is_err());
    }

    #[test]
    fn default_profile_is_valid_for_many_classes() {
        for c in [2, 3, 21] {
            default_profile(c).validate().unwrap();
        }
    }
}
