//! Synthetic segmentation scenes and a parametric noisy predictor.
//!
//! Label maps are Voronoi partitions whose cells draw classes from a
//! configurable distribution. The predictor stands in for a warm-up model:
//! its per-class confusion rate and confidence distributions are known, so
//! threshold and oversampling behaviour can be checked against ground truth.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Beta;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{stream_rng, Stream};
use crate::store::{
    save_manifest, write_label_map, write_probability_map, DatasetManifest, LabelMap, ProbabilityMap, SampleEntry,
    DEFAULT_IGNORE_INDEX,
};

fn default_regions() -> usize {
    8
}

/// Shape and class mix of generated scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class_count: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_regions")]
    pub regions_per_image: usize,
    #[serde(default)]
    pub seed: u64,
    /// Relative class frequencies of Voronoi cells; uniform when absent.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
}

impl SceneSpec {
    pub fn new(class_count: usize, height: usize, width: usize) -> Self {
        SceneSpec {
            class_count,
            height,
            width,
            regions_per_image: default_regions(),
            seed: 0,
            class_weights: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_regions(mut self, regions: usize) -> Self {
        self.regions_per_image = regions;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.class_weights = Some(weights);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidConfig("scenes need at least 2 classes".into()));
        }
        if self.height == 0 || self.width == 0 || self.regions_per_image == 0 {
            return Err(Error::InvalidConfig(
                "scene size and region count must be positive".into(),
            ));
        }
        if self.class_count > DEFAULT_IGNORE_INDEX as usize {
            return Err(Error::InvalidConfig(
                "class count collides with the ignore index".into(),
            ));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.class_count || w.iter().any(|v| !(*v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidConfig(
                    "class_weights needs one non-negative weight per class, not all zero".into(),
                ));
            }
        }
        Ok(())
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        let weights = self
            .class_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.class_count]);
        WeightedIndex::new(weights).expect("validated weights")
    }
}

/// Geometric long tail: class `c` gets weight `ratio^(-c / (C - 1))`.
pub fn long_tailed_weights(class_count: usize, ratio: f64) -> Vec<f64> {
    let span = (class_count.max(2) - 1) as f64;
    (0..class_count).map(|c| ratio.powf(-(c as f64) / span)).collect()
}

/// Generated labelled set.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub labels: Vec<LabelMap>,
}

impl SyntheticDataset {
    /// Write `manifest.json` and `labels/<id>.npy` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let labels_dir = dir.join("labels");
        std::fs::create_dir_all(&labels_dir).map_err(|e| Error::Io {
            path: labels_dir.clone(),
            source: e,
        })?;
        for (sample, label) in self.manifest.samples().iter().zip(&self.labels) {
            write_label_map(label, dir.join(&sample.label))?;
        }
        save_manifest(&self.manifest, dir.join("manifest.json"))
    }
}

pub fn sample_id(index: usize) -> String {
    format!("img_{index:05}")
}

/// Voronoi label map for image `index`.
pub fn generate_label(spec: &SceneSpec, index: usize) -> LabelMap {
    let mut rng = stream_rng(spec.seed, Stream::Scene, index as u64);
    let sampler = spec.sampler();
    let sites: Vec<(f64, f64, u16)> = (0..spec.regions_per_image)
        .map(|_| {
            let y = rng.random::<f64>() * spec.height as f64;
            let x = rng.random::<f64>() * spec.width as f64;
            (y, x, sampler.sample(&mut rng) as u16)
        })
        .collect();
    let mut values = Vec::with_capacity(spec.height * spec.width);
    for row in 0..spec.height {
        let py = row as f64 + 0.5;
        for col in 0..spec.width {
            let px = col as f64 + 0.5;
            let mut best = f64::INFINITY;
            let mut class = 0;
            for &(y, x, c) in &sites {
                let d = (py - y) * (py - y) + (px - x) * (px - x);
                if d < best {
                    best = d;
                    class = c;
                }
            }
            values.push(class);
        }
    }
    LabelMap::new(spec.height, spec.width, values, spec.class_count, DEFAULT_IGNORE_INDEX)
        .expect("sampled classes are in range")
}

/// Generate `n_images` scenes and a manifest with scanned class sets.
pub fn generate_dataset(spec: &SceneSpec, n_images: usize) -> Result<SyntheticDataset> {
    if n_images == 0 {
        return Err(Error::EmptyDataset);
    }
    spec.validate()?;
    let labels: Vec<LabelMap> = (0..n_images).into_par_iter().map(|i| generate_label(spec, i)).collect();
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let id = sample_id(i);
            SampleEntry {
                image: format!("probs/{id}.npy"),
                label: format!("labels/{id}.npy"),
                present_classes: label.present_classes(),
                id,
            }
        })
        .collect();
    let manifest = DatasetManifest::new(spec.class_count, DEFAULT_IGNORE_INDEX, samples)?;
    Ok(SyntheticDataset { manifest, labels })
}

/// Beta distribution given by mean and concentration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceProfile {
    pub mean: f64,
    pub strength: f64,
}

impl ConfidenceProfile {
    pub fn new(mean: f64, strength: f64) -> Self {
        ConfidenceProfile { mean, strength }
    }

    fn beta(&self) -> Beta<f64> {
        Beta::new(self.mean * self.strength, (1.0 - self.mean) * self.strength).expect("validated profile")
    }
}

/// Behaviour of the predictor for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    /// Probability that a pixel of this class's confusable partner is
    /// predicted as this class. High values make the class over-predicted
    /// and its predictions imprecise.
    pub error_rate: f64,
    /// Partner class whose pixels get confused into this one; defaults to
    /// `(c + 1) mod C`.
    #[serde(default)]
    pub confusable: Option<usize>,
    /// Top-class probability on correctly predicted pixels.
    pub correct: ConfidenceProfile,
    /// Top-class probability on pixels wrongly predicted as this class.
    pub wrong: ConfidenceProfile,
}

/// Per-class predictor behaviour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorProfile {
    pub classes: Vec<ClassProfile>,
}

impl PredictorProfile {
    /// Same confidence behaviour for every class, with the given error rates.
    pub fn uniform(error_rates: &[f64], correct: ConfidenceProfile, wrong: ConfidenceProfile) -> Self {
        PredictorProfile {
            classes: error_rates
                .iter()
                .map(|&error_rate| ClassProfile {
                    error_rate,
                    confusable: None,
                    correct,
                    wrong,
                })
                .collect(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn partner(&self, class: usize) -> usize {
        self.classes[class]
            .confusable
            .unwrap_or((class + 1) % self.classes.len())
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes.len();
        if c < 2 {
            return Err(Error::InvalidConfig("predictor needs at least 2 classes".into()));
        }
        let floor = 1.0 / c as f64;
        let mut inflow = vec![0.0; c];
        for (k, p) in self.classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.error_rate) {
                return Err(Error::InvalidConfig(format!("class {k} error_rate outside [0, 1]")));
            }
            let partner = self.partner(k);
            if partner >= c || partner == k {
                return Err(Error::InvalidConfig(format!(
                    "class {k} has invalid confusable class {partner}"
                )));
            }
            inflow[partner] += p.error_rate;
            for profile in [p.correct, p.wrong] {
                if !(profile.mean > floor && profile.mean < 1.0 && profile.strength > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "class {k} confidence mean must lie in (1/C, 1) with positive strength"
                    )));
                }
            }
        }
        if let Some(t) = inflow.iter().position(|&q| q > 1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "error rates confusing class {t} sum above 1"
            )));
        }
        Ok(())
    }
}

struct Sampler {
    classes: usize,
    /// For each true class, the classes that steal its pixels with their rates.
    thieves: Vec<Vec<(usize, f64)>>,
    correct: Vec<Beta<f64>>,
    wrong: Vec<Beta<f64>>,
}

impl Sampler {
    fn new(profile: &PredictorProfile) -> Self {
        let classes = profile.class_count();
        let mut thieves = vec![Vec::new(); classes];
        for k in 0..classes {
            thieves[profile.partner(k)].push((k, profile.classes[k].error_rate));
        }
        Sampler {
            classes,
            thieves,
            correct: profile.classes.iter().map(|p| p.correct.beta()).collect(),
            wrong: profile.classes.iter().map(|p| p.wrong.beta()).collect(),
        }
    }

    /// Fill `row` with one pixel's class probabilities.
    fn pixel<R: Rng>(&self, truth: Option<usize>, rng: &mut R, row: &mut [f64]) {
        let (predicted, correct) = match truth {
            Some(t) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut predicted = (t, true);
                for &(k, q) in &self.thieves[t] {
                    acc += q;
                    if u < acc {
                        predicted = (k, false);
                        break;
                    }
                }
                predicted
            }
            None => (rng.random_range(0..self.classes), false),
        };
        let dist = if correct {
            &self.correct[predicted]
        } else {
            &self.wrong[predicted]
        };
        let floor = 1.0 / self.classes as f64 + 1e-3;
        let top = dist.sample(rng).clamp(floor, 1.0);
        let rest = 1.0 - top;

        let mut total = 0.0;
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = if c == predicted {
                0.0
            } else {
                rng.random::<f64>() + 1e-9
            };
            total += *slot;
        }
        let mut max_other = 0.0f64;
        for (c, slot) in row.iter_mut().enumerate() {
            if c != predicted {
                *slot *= rest / total;
                max_other = max_other.max(*slot);
            }
        }
        if max_other >= top {
            let even = rest / (self.classes - 1) as f64;
            row.iter_mut().for_each(|v| *v = even);
        }
        row[predicted] = top;
    }
}

/// Simulated class probabilities for one label map.
pub fn predict<T: Scalar>(label: &LabelMap, profile: &PredictorProfile, seed: u64) -> Result<ProbabilityMap<T>> {
    predict_indexed(label, profile, seed, 0)
}

/// As [`predict`], drawing from the stream for image `index`.
pub fn predict_indexed<T: Scalar>(
    label: &LabelMap,
    profile: &PredictorProfile,
    seed: u64,
    index: u64,
) -> Result<ProbabilityMap<T>> {
    profile.validate()?;
    if profile.class_count() != label.class_count() {
        return Err(Error::ClassCountMismatch {
            expected: label.class_count(),
            found: profile.class_count(),
        });
    }
    let sampler = Sampler::new(profile);
    let mut rng = stream_rng(seed, Stream::Predict, index);
    let n = label.pixels();
    let c = profile.class_count();
    let mut values = vec![T::zero(); c * n];
    let mut row = vec![0.0f64; c];
    for j in 0..n {
        sampler.pixel(label.class_at(j), &mut rng, &mut row);
        for (k, &v) in row.iter().enumerate() {
            values[k * n + j] = T::of(v);
        }
    }
    ProbabilityMap::new(c, label.height(), label.width(), values)
}

/// Predict every label of a dataset, one seed stream per image.
pub fn predict_dataset<T: Scalar>(
    labels: &[LabelMap],
    profile: &PredictorProfile,
    seed: u64,
) -> Result<Vec<ProbabilityMap<T>>> {
    labels
        .par_iter()
        .enumerate()
        .map(|(i, l)| predict_indexed(l, profile, seed, i as u64))
        .collect()
}

/// Write `probs/<id>.npy` for every manifest sample.
pub fn write_predictions<T: Scalar>(dir: &Path, manifest: &DatasetManifest, probs: &[ProbabilityMap<T>]) -> Result<()> {
    let probs_dir = dir.join("probs");
    std::fs::create_dir_all(&probs_dir).map_err(|e| Error::Io {
        path: probs_dir.clone(),
        source: e,
    })?;
    for (sample, map) in manifest.samples().iter().zip(probs) {
        write_probability_map(map, probs_dir.join(format!("{}.npy", sample.id)))?;
    }
    Ok(())
}

/// Reference oversamplers for comparison with the IoU-driven plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMode {
    /// Random over-sampling: uniformly random duplicates.
    Ros,
    /// Statistics-based over-sampling: duplicates of samples holding the
    /// currently rarest class.
    Sos,
}

/// Append `amount` duplicates chosen by `mode`.
pub fn baseline_samplers(
    manifest: &DatasetManifest,
    mode: BaselineMode,
    amount: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if manifest.is_empty() || amount == 0 {
        return Ok(manifest.clone());
    }
    let mut rng = stream_rng(seed, Stream::Baseline, 0);
    let originals = manifest.samples();
    let mut copies = vec![0usize; originals.len()];
    let mut samples = originals.to_vec();
    let mut freq = manifest.class_frequencies();
    let tag = match mode {
        BaselineMode::Ros => "ros",
        BaselineMode::Sos => "sos",
    };
    for _ in 0..amount {
        let pick = match mode {
            BaselineMode::Ros => rng.random_range(0..originals.len()),
            BaselineMode::Sos => {
                let rarest = freq
                    .iter()
                    .enumerate()
                    .filter(|&(_, &n)| n > 0)
                    .min_by_key(|&(c, &n)| (n, c))
                    .map(|(c, _)| c);
                let holders: Vec<usize> = match rarest {
                    Some(c) => (0..originals.len()).filter(|&i| originals[i].contains(c)).collect(),
                    None => (0..originals.len()).collect(),
                };
                holders[rng.random_range(0..holders.len())]
            }
        };
        copies[pick] += 1;
        for &c in &originals[pick].present_classes {
            freq[c] += 1;
        }
        samples.push(SampleEntry {
            id: format!("{}#{tag}{}", originals[pick].id, copies[pick]),
            ..originals[pick].clone()
        });
    }
    DatasetManifest::new(manifest.class_count(), manifest.ignore_index(), samples)
}

/// Pearson correlation of paired samples; `None` if undefined.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::act::{pseudo_label, ClassThresholds};

    fn sharp() -> PredictorProfile {
        PredictorProfile::uniform(
            &[0.0; 3],
            ConfidenceProfile::new(0.99, 200.0),
            ConfidenceProfile::new(0.8, 20.0),
        )
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            generate_dataset(&SceneSpec::new(3, 8, 8), 0),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec = SceneSpec::new(4, 16, 12).with_seed(5);
        generate_dataset(&spec, 4).unwrap().write(dir_a.path()).unwrap();
        generate_dataset(&spec, 4).unwrap().write(dir_b.path()).unwrap();
        for i in 0..4 {
            let rel = format!("labels/{}.npy", sample_id(i));
            assert_eq!(
                std::fs::read(dir_a.path().join(&rel)).unwrap(),
                std::fs::read(dir_b.path().join(&rel)).unwrap()
            );
        }
        assert_eq!(
            std::fs::read(dir_a.path().join("manifest.json")).unwrap(),
            std::fs::read(dir_b.path().join("manifest.json")).unwrap()
        );
    }

    #[test]
    fn uniform_classes_all_appear() {
        let data = generate_dataset(&SceneSpec::new(3, 16, 16).with_seed(1), 50).unwrap();
        assert!(data.manifest.class_frequencies().iter().all(|&n| n >= 1));
        for (s, l) in data.manifest.samples().iter().zip(&data.labels) {
            assert_eq!(s.present_classes, l.present_classes());
        }
    }

    #[test]
    fn long_tail_weights_skew_frequencies() {
        let spec = SceneSpec::new(4, 16, 16)
            .with_seed(2)
            .with_weights(long_tailed_weights(4, 20.0));
        let data = generate_dataset(&spec, 200).unwrap();
        let f = data.manifest.class_frequencies();
        assert!(f[0] > f[3], "{f:?}");
    }

    #[test]
    fn confident_accurate_predictor_reproduces_labels() {
        let data = generate_dataset(&SceneSpec::new(3, 32, 32).with_seed(3), 10).unwrap();
        let ct = ClassThresholds::uniform(3, 0.95, 0.85, 0.95).unwrap();
        let (mut agree, mut total) = (0usize, 0usize);
        for seed in 0..10 {
            for (i, label) in data.labels.iter().enumerate() {
                let probs = predict_indexed::<f64>(label, &sharp(), seed, i as u64).unwrap();
                let pl = pseudo_label(&probs, &ct, 255).unwrap();
                agree += pl.values().iter().zip(label.values()).filter(|(a, b)| a == b).count();
                total += label.pixels();
            }
        }
        assert!(agree as f64 / total as f64 >= 0.99, "{agree}/{total}");
    }

    #[test]
    fn rows_are_normalized() {
        let label = generate_label(&SceneSpec::new(5, 20, 20).with_seed(4), 0);
        let profile = PredictorProfile::uniform(
            &[0.1, 0.3, 0.0, 0.2, 0.5],
            ConfidenceProfile::new(0.7, 5.0),
            ConfidenceProfile::new(0.5, 5.0),
        );
        let probs = predict::<f64>(&label, &profile, 11).unwrap();
        for j in 0..probs.pixels() {
            let s: f64 = (0..5).map(|c| probs.get(c, j)).sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn error_rates_flip_partner_pixels() {
        let label = LabelMap::new(50, 50, vec![1; 2500], 3, 255).unwrap();
        let profile = PredictorProfile::uniform(
            &[0.3, 0.0, 0.0],
            ConfidenceProfile::new(0.9, 50.0),
            ConfidenceProfile::new(0.9, 50.0),
        );
        let probs = predict::<f64>(&label, &profile, 0).unwrap();
        let top = crate::act::Top1Map::from_probabilities(&probs);
        let open = ClassThresholds::uniform(3, 0.34, 0.34, 0.99).unwrap();
        let counts = top.supervised_counts(&open).unwrap();
        let rate = counts[0] as f64 / 2500.0;
        assert!((rate - 0.3).abs() < 0.03, "{rate}");
        assert_eq!(counts[2], 0);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let c = ConfidenceProfile::new(0.9, 10.0);
        assert!(PredictorProfile::uniform(&[0.5], c, c).validate().is_err());
        assert!(PredictorProfile::uniform(&[1.5, 0.0], c, c).validate().is_err());
        let low = ConfidenceProfile::new(0.3, 10.0);
        assert!(PredictorProfile::uniform(&[0.0, 0.0], low, c).validate().is_err());
        let mut p = PredictorProfile::uniform(&[0.6, 0.6, 0.0], c, c);
        p.classes[1].confusable = Some(1);
        assert!(p.validate().is_err());
        p.classes[1].confusable = Some(1 + 1);
        p.classes[0].confusable = Some(2);
        assert!(p.validate().is_err(), "inflow into class 2 exceeds 1");
    }

    #[test]
    fn ros_adds_requested_count() {
        let data = generate_dataset(&SceneSpec::new(3, 8, 8), 10).unwrap();
        assert_eq!(
            baseline_samplers(&data.manifest, BaselineMode::Ros, 0, 1).unwrap(),
            data.manifest
        );
        assert_eq!(
            baseline_samplers(&data.manifest, BaselineMode::Ros, 5, 1)
                .unwrap()
                .len(),
            15
        );
    }

    #[test]
    fn sos_targets_rarest_class() {
        let spec = SceneSpec::new(4, 16, 16)
            .with_seed(8)
            .with_weights(vec![8.0, 4.0, 2.0, 0.5]);
        let data = generate_dataset(&spec, 60).unwrap();
        let before = data.manifest.class_frequencies();
        let rarest = (0..4).min_by_key(|&c| (before[c], c)).unwrap();
        let out = baseline_samplers(&data.manifest, BaselineMode::Sos, 10, 3).unwrap();
        let added = &out.samples()[data.manifest.len()..];
        assert_eq!(added.len(), 10);
        // the first copy must hold the rarest class
        assert!(added[0].contains(rarest));
        let after = out.class_frequencies();
        let gain = |c: usize| after[c] - before[c];
        assert!(gain(rarest) >= 1);
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
