//! Adaptive class-wise confidence thresholds.
//!
//! Pseudo-labels keep a pixel's argmax class only when its top probability
//! strictly exceeds that class's threshold. Thresholds start at `min_ct` and,
//! for `M` rounds, every class whose validation precision is below `max_cp`
//! moves up by `epsilon`, never past `max_ct`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ClassPrecision, ConfusionAccumulator};
use crate::scalar::Scalar;
use crate::store::{LabelMap, ProbabilityMap};

/// Precision target used in all published settings.
pub const DEFAULT_MAX_CP: f64 = 0.95;
/// Threshold increment.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// A named `[min_ct, max_ct]` range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdRegime {
    pub name: &'static str,
    pub min_ct: f64,
    pub max_ct: f64,
}

/// Ranges evaluated for the DeepLabV3+ ablation; `0.85-0.95` suits the full
/// labelled partition and `0.95-0.98` the 1/8 partition.
pub const THRESHOLD_REGIMES: [ThresholdRegime; 4] = [
    ThresholdRegime {
        name: "0.85-0.95",
        min_ct: 0.85,
        max_ct: 0.95,
    },
    ThresholdRegime {
        name: "0.85-0.98",
        min_ct: 0.85,
        max_ct: 0.98,
    },
    ThresholdRegime {
        name: "0.90-0.95",
        min_ct: 0.90,
        max_ct: 0.95,
    },
    ThresholdRegime {
        name: "0.95-0.98",
        min_ct: 0.95,
        max_ct: 0.98,
    },
];

pub fn regime(name: &str) -> Option<ThresholdRegime> {
    THRESHOLD_REGIMES.iter().copied().find(|r| r.name == name)
}

/// Per-class confidence thresholds within a `[min_ct, max_ct]` regime.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassThresholds<T> {
    values: Vec<T>,
    min_ct: T,
    max_ct: T,
}

impl<T: Scalar> ClassThresholds<T> {
    pub fn new(values: Vec<T>, min_ct: T, max_ct: T) -> Result<Self> {
        if !(min_ct < max_ct) {
            return Err(Error::InvalidConfig(format!(
                "min_ct {min_ct} must be below max_ct {max_ct}"
            )));
        }
        if values.is_empty() {
            return Err(Error::EmptyInput("threshold vector"));
        }
        if let Some(v) = values.iter().find(|&&v| !(v >= min_ct && v <= max_ct)) {
            return Err(Error::InvalidConfig(format!(
                "threshold {v} outside [{min_ct}, {max_ct}]"
            )));
        }
        Ok(ClassThresholds { values, min_ct, max_ct })
    }

    /// Every class at `value`.
    pub fn uniform(class_count: usize, value: T, min_ct: T, max_ct: T) -> Result<Self> {
        Self::new(vec![value; class_count], min_ct, max_ct)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn class_count(&self) -> usize {
        self.values.len()
    }

    pub fn min_ct(&self) -> T {
        self.min_ct
    }

    pub fn max_ct(&self) -> T {
        self.max_ct
    }

    pub fn get(&self, class: usize) -> T {
        self.values[class]
    }
}

/// Parameters of the threshold search.
#[derive(Clone, Debug, PartialEq)]
pub struct ActConfig<T> {
    pub min_ct: T,
    pub max_ct: T,
    pub max_cp: T,
    pub epsilon: T,
    /// Number of update rounds; `None` means `round((max_ct - min_ct) / epsilon)`.
    pub iterations: Option<usize>,
}

impl<T: Scalar> ActConfig<T> {
    pub fn new(min_ct: T, max_ct: T) -> Result<Self> {
        let config = ActConfig {
            min_ct,
            max_ct,
            max_cp: T::of(DEFAULT_MAX_CP),
            epsilon: T::of(DEFAULT_EPSILON),
            iterations: None,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_regime(regime: ThresholdRegime) -> Self {
        Self::new(T::of(regime.min_ct), T::of(regime.max_ct)).expect("built-in regimes are valid")
    }

    pub fn with_max_cp(mut self, max_cp: T) -> Self {
        self.max_cp = max_cp;
        self
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = Some(iterations);
        self
    }

    /// M, the number of update rounds.
    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or_else(|| {
            ((self.max_ct - self.min_ct) / self.epsilon)
                .round()
                .to_usize()
                .unwrap_or(0)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let zero = T::zero();
        let one = T::one();
        if !(self.min_ct > zero && self.min_ct < one) {
            return bad(format!("min_ct {} must lie in (0, 1)", self.min_ct));
        }
        if !(self.max_ct > self.min_ct && self.max_ct <= one) {
            return bad(format!(
                "max_ct {} must lie in (min_ct = {}, 1]",
                self.max_ct, self.min_ct
            ));
        }
        if !(self.max_cp > zero && self.max_cp <= one) {
            return bad(format!("max_cp {} must lie in (0, 1]", self.max_cp));
        }
        if !(self.epsilon > zero) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        let m = self.iterations();
        if m < 1 {
            return bad("at least one iteration is required".into());
        }
        let reach = self.min_ct.as_f64() + m as f64 * self.epsilon.as_f64();
        if reach > self.max_ct.as_f64() + 1e-9 {
            return bad(format!(
                "{m} iterations of {} overshoot max_ct {}",
                self.epsilon, self.max_ct
            ));
        }
        Ok(())
    }
}

/// Argmax class and its probability for every pixel of a probability map.
///
/// This is all the threshold search needs, so a fold can be held in memory
/// at `H × W` cost per image instead of `C × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Top1Map<T> {
    classes: usize,
    height: usize,
    width: usize,
    class: Vec<u16>,
    confidence: Vec<T>,
}

impl<T: Scalar> Top1Map<T> {
    /// Ties resolve to the lowest class index.
    pub fn from_probabilities(probs: &ProbabilityMap<T>) -> Self {
        let mut confidence = probs.plane(0).to_vec();
        let mut class = vec![0u16; probs.pixels()];
        for c in 1..probs.classes() {
            for ((best, cls), &p) in confidence.iter_mut().zip(class.iter_mut()).zip(probs.plane(c)) {
                if p > *best {
                    *best = p;
                    *cls = c as u16;
                }
            }
        }
        Top1Map {
            classes: probs.classes(),
            height: probs.height(),
            width: probs.width(),
            class,
            confidence,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.class.len()
    }

    /// Pseudo-label of one pixel, `None` for ignore.
    #[inline]
    pub fn label_at(&self, pixel: usize, thresholds: &[T]) -> Option<usize> {
        let c = self.class[pixel] as usize;
        (self.confidence[pixel] > thresholds[c]).then_some(c)
    }

    fn check(&self, thresholds: &ClassThresholds<T>) -> Result<()> {
        if thresholds.class_count() != self.classes {
            return Err(Error::ClassCountMismatch {
                expected: self.classes,
                found: thresholds.class_count(),
            });
        }
        Ok(())
    }

    /// Apply the thresholds, writing `ignore_index` where the test fails.
    pub fn pseudo_label(&self, thresholds: &ClassThresholds<T>, ignore_index: u16) -> Result<LabelMap> {
        self.check(thresholds)?;
        let values = (0..self.pixels())
            .map(|j| self.label_at(j, thresholds.values()).map_or(ignore_index, |c| c as u16))
            .collect();
        LabelMap::new(self.height, self.width, values, self.classes, ignore_index)
    }

    /// Per-class count of pixels that survive the thresholds.
    pub fn supervised_counts(&self, thresholds: &ClassThresholds<T>) -> Result<Vec<u64>> {
        self.check(thresholds)?;
        let mut counts = vec![0u64; self.classes];
        for j in 0..self.pixels() {
            if let Some(c) = self.label_at(j, thresholds.values()) {
                counts[c] += 1;
            }
        }
        Ok(counts)
    }
}

/// Class-adaptive pseudo-label of one probability map.
pub fn pseudo_label<T: Scalar>(
    probs: &ProbabilityMap<T>,
    thresholds: &ClassThresholds<T>,
    ignore_index: u16,
) -> Result<LabelMap> {
    Top1Map::from_probabilities(probs).pseudo_label(thresholds, ignore_index)
}

/// Plain argmax segmentation of a probability map, with no pixel ignored.
pub fn argmax_label<T: Scalar>(probs: &ProbabilityMap<T>, ignore_index: u16) -> Result<LabelMap> {
    let top = Top1Map::from_probabilities(probs);
    let values = top.class.clone();
    LabelMap::new(top.height, top.width, values, top.classes, ignore_index)
}

/// One validation image reduced for the threshold search.
#[derive(Clone, Debug)]
pub struct ActSample<T> {
    top1: Top1Map<T>,
    label: LabelMap,
}

impl<T: Scalar> ActSample<T> {
    pub fn new(probs: &ProbabilityMap<T>, label: LabelMap) -> Result<Self> {
        Self::from_top1(Top1Map::from_probabilities(probs), label)
    }

    pub fn from_top1(top1: Top1Map<T>, label: LabelMap) -> Result<Self> {
        if (top1.height, top1.width) != (label.height(), label.width()) {
            return Err(Error::ShapeMismatch {
                left: (top1.height, top1.width),
                right: (label.height(), label.width()),
            });
        }
        if top1.classes != label.class_count() {
            return Err(Error::ClassCountMismatch {
                expected: label.class_count(),
                found: top1.classes,
            });
        }
        Ok(ActSample { top1, label })
    }

    pub fn top1(&self) -> &Top1Map<T> {
        &self.top1
    }

    pub fn label(&self) -> &LabelMap {
        &self.label
    }

    /// Confusion of this image's pseudo-label against its reference.
    pub fn confusion(&self, thresholds: &[T]) -> ConfusionAccumulator {
        let mut acc = ConfusionAccumulator::new(self.top1.classes);
        for j in 0..self.top1.pixels() {
            acc.record(self.top1.label_at(j, thresholds), self.label.class_at(j));
        }
        acc
    }
}

/// One threshold update: raise every class whose defined precision is
/// below `max_cp` by `epsilon`, capped at `max_ct`. Classes with undefined
/// precision keep their threshold.
pub fn act_step<T: Scalar>(
    thresholds: &ClassThresholds<T>,
    precision: &ClassPrecision<T>,
    config: &ActConfig<T>,
) -> Result<ClassThresholds<T>> {
    if precision.values.len() != thresholds.class_count() {
        return Err(Error::ClassCountMismatch {
            expected: thresholds.class_count(),
            found: precision.values.len(),
        });
    }
    let values = thresholds
        .values
        .iter()
        .zip(&precision.values)
        .map(|(&ct, cp)| match cp {
            Some(cp) if *cp < config.max_cp => raise(ct, config),
            _ => ct,
        })
        .collect();
    Ok(ClassThresholds {
        values,
        min_ct: thresholds.min_ct,
        max_ct: thresholds.max_ct,
    })
}

/// `ct + epsilon`, recomputed from the step grid `min_ct + n * epsilon` when
/// `ct` lies on it so repeated steps do not accumulate rounding drift. When
/// `epsilon` is `1 / d` for an integer `d` and `min_ct` is a multiple of it,
/// grid points are evaluated as `(k + n) / d`, a single rounding, so that
/// 0.85 + 6 * 0.01 comes out as the double nearest 0.91.
fn raise<T: Scalar>(ct: T, config: &ActConfig<T>) -> T {
    let steps = (ct - config.min_ct) / config.epsilon;
    let nearest = steps.round();
    let next = if (steps - nearest).abs() <= T::of(1e-6) {
        grid_point(config, nearest + T::one())
    } else {
        ct + config.epsilon
    };
    if next >= config.max_ct - config.epsilon * T::of(1e-6) {
        config.max_ct
    } else {
        next
    }
}

fn grid_point<T: Scalar>(config: &ActConfig<T>, n: T) -> T {
    let d = (T::one() / config.epsilon).round();
    let k = (config.min_ct * d).round();
    let decimal = d > T::zero()
        && (T::one() / config.epsilon - d).abs() <= d * T::of(1e-6)
        && (config.min_ct * d - k).abs() <= T::of(1e-4);
    if decimal {
        (k + n) / d
    } else {
        config.min_ct + n * config.epsilon
    }
}

/// Snapshot of one update round.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord<T> {
    /// 1-based round index.
    pub iteration: usize,
    /// Precision measured with the thresholds in force during the round.
    pub precision: ClassPrecision<T>,
    /// Thresholds after the round's update.
    pub thresholds: Vec<T>,
}

/// Outcome of a threshold search over one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct ActReport<T> {
    pub final_thresholds: ClassThresholds<T>,
    pub per_iteration: Vec<IterationRecord<T>>,
    /// Fraction of fold pixels that are non-ignore under the final thresholds.
    pub coverage: T,
}

/// Run the threshold search over raw probability maps.
pub fn run_act<T: Scalar>(fold: &[(ProbabilityMap<T>, LabelMap)], config: &ActConfig<T>) -> Result<ActReport<T>> {
    let samples = fold
        .iter()
        .map(|(p, l)| ActSample::new(p, l.clone()))
        .collect::<Result<Vec<_>>>()?;
    run_act_samples(&samples, config)
}

/// Run the threshold search over reduced samples. Per-image confusion is
/// computed in parallel on the current rayon pool; integer sums make the
/// result independent of the pool size.
pub fn run_act_samples<T: Scalar>(samples: &[ActSample<T>], config: &ActConfig<T>) -> Result<ActReport<T>> {
    config.validate()?;
    let Some(first) = samples.first() else {
        return Err(Error::EmptyFold);
    };
    let classes = first.top1.classes;
    if let Some(bad) = samples.iter().find(|s| s.top1.classes != classes) {
        return Err(Error::ClassCountMismatch {
            expected: classes,
            found: bad.top1.classes,
        });
    }

    let mut thresholds = ClassThresholds::uniform(classes, config.min_ct, config.min_ct, config.max_ct)?;
    let mut per_iteration = Vec::with_capacity(config.iterations());
    for iteration in 1..=config.iterations() {
        let acc = fold_confusion(samples, thresholds.values(), classes);
        let precision = acc.precision::<T>();
        thresholds = act_step(&thresholds, &precision, config)?;
        per_iteration.push(IterationRecord {
            iteration,
            precision,
            thresholds: thresholds.values.clone(),
        });
    }

    let (kept, total) = samples
        .par_iter()
        .map(|s| {
            let kept: u64 = s.top1.supervised_counts(&thresholds).map_or(0, |v| v.iter().sum());
            (kept, s.top1.pixels() as u64)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    Ok(ActReport {
        final_thresholds: thresholds,
        per_iteration,
        coverage: T::of(kept as f64 / total as f64),
    })
}

fn fold_confusion<T: Scalar>(samples: &[ActSample<T>], thresholds: &[T], classes: usize) -> ConfusionAccumulator {
    samples.par_iter().map(|s| s.confusion(thresholds)).reduce(
        || ConfusionAccumulator::new(classes),
        |mut a, b| {
            a.merge_from(&b).expect("uniform class count");
            a
        },
    )
}

/// Element-wise mean of per-fold thresholds (CT_mean).
pub fn aggregate_thresholds<T: Scalar>(per_fold: &[ClassThresholds<T>]) -> Result<ClassThresholds<T>> {
    let Some(first) = per_fold.first() else {
        return Err(Error::EmptyInput("per-fold thresholds"));
    };
    for t in per_fold {
        if t.class_count() != first.class_count() {
            return Err(Error::ClassCountMismatch {
                expected: first.class_count(),
                found: t.class_count(),
            });
        }
        if t.min_ct != first.min_ct || t.max_ct != first.max_ct {
            return Err(Error::InvalidConfig("folds use different threshold regimes".into()));
        }
    }
    let k = T::of(per_fold.len() as f64);
    let values = (0..first.class_count())
        .map(|c| {
            let mean = per_fold.iter().map(|t| t.values[c]).sum::<T>() / k;
            // a mean of in-range values can round just outside the range
            mean.max(first.min_ct).min(first.max_ct)
        })
        .collect();
    ClassThresholds::new(values, first.min_ct, first.max_ct)
}

/// One trace row of the thresholds JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub fold: Option<usize>,
    pub iteration: usize,
    pub precision: Vec<Option<f64>>,
    pub thresholds: Vec<f64>,
}

/// Thresholds JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsReport {
    pub min_ct: f64,
    pub max_ct: f64,
    pub epsilon: f64,
    pub max_cp: f64,
    pub iterations: usize,
    pub thresholds: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

impl ThresholdsReport {
    /// Assemble the document from per-fold runs and their aggregate.
    pub fn new<T: Scalar>(
        config: &ActConfig<T>,
        aggregate: &ClassThresholds<T>,
        runs: &[(Option<usize>, &ActReport<T>)],
    ) -> Self {
        let trace = runs
            .iter()
            .flat_map(|(fold, report)| {
                report.per_iteration.iter().map(move |rec| TraceEntry {
                    fold: *fold,
                    iteration: rec.iteration,
                    precision: rec.precision.values.iter().map(|v| v.map(T::as_f64)).collect(),
                    thresholds: rec.thresholds.iter().map(|v| v.as_f64()).collect(),
                })
            })
            .collect();
        ThresholdsReport {
            min_ct: config.min_ct.as_f64(),
            max_ct: config.max_ct.as_f64(),
            epsilon: config.epsilon.as_f64(),
            max_cp: config.max_cp.as_f64(),
            iterations: config.iterations(),
            thresholds: aggregate.values.iter().map(|v| v.as_f64()).collect(),
            trace,
        }
    }

    /// The threshold vector, validated against the stored regime.
    pub fn class_thresholds<T: Scalar>(&self) -> Result<ClassThresholds<T>> {
        ClassThresholds::new(
            self.thresholds.iter().map(|&v| T::of(v)).collect(),
            T::of(self.min_ct),
            T::of(self.max_ct),
        )
        .map_err(|e| Error::Schema(format!("thresholds document: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pixel(p: &[f64]) -> ProbabilityMap<f64> {
        ProbabilityMap::new(p.len(), 1, 1, p.to_vec()).unwrap()
    }

    fn ct(values: &[f64], min: f64, max: f64) -> ClassThresholds<f64> {
        ClassThresholds::new(values.to_vec(), min, max).unwrap()
    }

    #[test]
    fn below_threshold_pixel_is_ignored() {
        let l = pseudo_label(&pixel(&[0.6, 0.4]), &ct(&[0.95, 0.95], 0.85, 0.95), 255).unwrap();
        assert_eq!(l.values(), &[255]);
    }

    #[test]
    fn confident_pixel_keeps_its_class() {
        let l = pseudo_label(&pixel(&[0.97, 0.03]), &ct(&[0.95, 0.95], 0.85, 0.95), 255).unwrap();
        assert_eq!(l.values(), &[0]);
    }

    #[test]
    fn argmax_class_threshold_applies() {
        let l = pseudo_label(&pixel(&[0.90, 0.10]), &ct(&[0.85, 0.95], 0.85, 0.95), 255).unwrap();
        assert_eq!(l.values(), &[0]);
        let l = pseudo_label(&pixel(&[0.10, 0.90]), &ct(&[0.85, 0.95], 0.85, 0.95), 255).unwrap();
        assert_eq!(l.values(), &[255]);
    }

    #[test]
    fn equality_at_threshold_is_ignored() {
        let l = pseudo_label(&pixel(&[0.9, 0.1]), &ct(&[0.9, 0.9], 0.85, 0.95), 255).unwrap();
        assert_eq!(l.values(), &[255]);
    }

    #[test]
    fn ties_break_to_lowest_class() {
        let top = Top1Map::from_probabilities(&pixel(&[0.25, 0.375, 0.375]));
        assert_eq!(top.class, vec![1]);
    }

    #[test]
    fn argmax_label_keeps_every_pixel() {
        let probs = ProbabilityMap::new(3, 1, 2, vec![0.2, 0.4, 0.5, 0.3, 0.3, 0.3]).unwrap();
        assert_eq!(argmax_label(&probs, 255).unwrap().values(), &[1, 0]);
    }

    #[test]
    fn class_count_mismatch_rejected() {
        assert!(matches!(
            pseudo_label(&pixel(&[0.5, 0.5]), &ct(&[0.9, 0.9, 0.9], 0.85, 0.95), 255),
            Err(Error::ClassCountMismatch { .. })
        ));
    }

    #[test]
    fn step_raises_only_imprecise_classes() {
        let config = ActConfig::new(0.85, 0.95).unwrap();
        let cp = ClassPrecision {
            values: vec![Some(0.5), Some(0.96), None],
        };
        let next = act_step(&ct(&[0.85, 0.85, 0.85], 0.85, 0.95), &cp, &config).unwrap();
        assert!((next.get(0) - 0.86).abs() < 1e-12);
        assert_eq!(next.get(1), 0.85);
        assert_eq!(next.get(2), 0.85);
    }

    #[test]
    fn step_never_exceeds_max_ct() {
        let config = ActConfig::new(0.85, 0.95).unwrap();
        let cp = ClassPrecision {
            values: vec![Some(0.0)],
        };
        let mut t = ct(&[0.85], 0.85, 0.95);
        for _ in 0..25 {
            t = act_step(&t, &cp, &config).unwrap();
        }
        assert_eq!(t.get(0), 0.95);
    }

    #[test]
    fn grid_values_are_the_nearest_doubles_to_their_decimals() {
        let cp = ClassPrecision {
            values: vec![Some(0.0)],
        };
        for r in THRESHOLD_REGIMES {
            let config = ActConfig::<f64>::from_regime(r);
            let lo = (r.min_ct * 100.0).round() as u32;
            let mut t = ClassThresholds::uniform(1, r.min_ct, r.min_ct, r.max_ct).unwrap();
            for n in 1..=config.iterations() as u32 {
                t = act_step(&t, &cp, &config).unwrap();
                let decimal: f64 = format!("0.{}", lo + n).parse().unwrap();
                assert_eq!(t.get(0), decimal, "{} after {n} steps", r.name);
            }
        }
    }

    #[test]
    fn iteration_count_formula() {
        let m = |lo: f64, hi: f64| ActConfig::new(lo, hi).unwrap().iterations();
        assert_eq!(m(0.85, 0.95), 10);
        assert_eq!(m(0.95, 0.98), 3);
        assert_eq!(m(0.85, 0.98), 13);
        assert_eq!(m(0.90, 0.95), 5);
        for r in THRESHOLD_REGIMES {
            ActConfig::<f64>::from_regime(r).validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ActConfig::new(0.95, 0.90).is_err());
        assert!(ActConfig::new(0.0, 0.90).is_err());
        let c = ActConfig::new(0.85, 0.95).unwrap();
        assert!(c.clone().with_epsilon(0.0).validate().is_err());
        assert!(c.clone().with_iterations(0).validate().is_err());
        assert!(c.clone().with_iterations(11).validate().is_err());
        assert!(c.with_max_cp(1.5).validate().is_err());
    }

    fn perfect_fold(seed: u64, classes: usize) -> Vec<(ProbabilityMap<f64>, LabelMap)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|_| {
                let labels: Vec<u16> = (0..16).map(|_| rng.random_range(0..classes as u16)).collect();
                let mut values = vec![0.0; classes * 16];
                for (j, &l) in labels.iter().enumerate() {
                    for c in 0..classes {
                        values[c * 16 + j] = if c == l as usize {
                            0.9
                        } else {
                            0.1 / (classes - 1) as f64
                        };
                    }
                }
                (
                    ProbabilityMap::new(classes, 4, 4, values).unwrap(),
                    LabelMap::new(4, 4, labels, classes, 255).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn always_correct_predictor_keeps_min_ct() {
        let config = ActConfig::new(0.85, 0.95).unwrap();
        let report = run_act(&perfect_fold(3, 3), &config).unwrap();
        assert_eq!(report.final_thresholds.values(), &[0.85; 3]);
        assert_eq!(report.per_iteration.len(), 10);
        assert_eq!(report.coverage, 1.0);
    }

    #[test]
    fn always_wrong_class_climbs_to_max_ct() {
        // every pixel is labelled 0 but predicted 1 with high confidence
        let probs = ProbabilityMap::new(2, 2, 2, vec![0.02; 4].into_iter().chain(vec![0.98; 4]).collect()).unwrap();
        let label = LabelMap::new(2, 2, vec![0; 4], 2, 255).unwrap();
        let config = ActConfig::new(0.85, 0.95).unwrap();
        let report = run_act(&[(probs, label)], &config).unwrap();
        assert_eq!(report.final_thresholds.values(), &[0.85, 0.95]);
        for (m, rec) in report.per_iteration.iter().enumerate() {
            assert_eq!(rec.precision.values, vec![None, Some(0.0)]);
            let expected = (85 + m + 1) as f64 / 100.0;
            assert_eq!(rec.thresholds[1], expected);
        }
    }

    #[test]
    fn all_ignore_fold_freezes_thresholds() {
        let probs = ProbabilityMap::new(2, 1, 2, vec![0.6, 0.5, 0.4, 0.5]).unwrap();
        let label = LabelMap::new(1, 2, vec![0, 1], 2, 255).unwrap();
        let report = run_act(&[(probs, label)], &ActConfig::new(0.85, 0.95).unwrap()).unwrap();
        assert_eq!(report.final_thresholds.values(), &[0.85, 0.85]);
        assert_eq!(report.coverage, 0.0);
    }

    #[test]
    fn empty_fold_and_mixed_classes_rejected() {
        let config = ActConfig::new(0.85, 0.95).unwrap();
        assert!(matches!(run_act::<f64>(&[], &config), Err(Error::EmptyFold)));
        let mut fold = perfect_fold(1, 3);
        fold.extend(perfect_fold(1, 4));
        assert!(matches!(run_act(&fold, &config), Err(Error::ClassCountMismatch { .. })));
    }

    #[test]
    fn aggregate_is_elementwise_mean() {
        let a = ct(&[0.85, 0.9], 0.85, 0.95);
        let b = ct(&[0.95, 0.9], 0.85, 0.95);
        let mean = aggregate_thresholds(&[a.clone(), b]).unwrap();
        assert!((mean.get(0) - 0.90).abs() < 1e-12);
        assert_eq!(aggregate_thresholds(std::slice::from_ref(&a)).unwrap(), a);
        assert!(matches!(aggregate_thresholds::<f64>(&[]), Err(Error::EmptyInput(_))));
        let c3 = ct(&[0.9, 0.9, 0.9], 0.85, 0.95);
        assert!(matches!(
            aggregate_thresholds(&[a.clone(), c3]),
            Err(Error::ClassCountMismatch { .. })
        ));
        let other = ct(&[0.96, 0.96], 0.95, 0.98);
        assert!(aggregate_thresholds(&[a, other]).is_err());
    }

    #[test]
    fn aggregate_matches_independent_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let folds: Vec<_> = (0..5)
            .map(|_| {
                let v: Vec<f64> = (0..6).map(|_| 0.85 + rng.random_range(0..=10) as f64 * 0.01).collect();
                ct(&v.iter().map(|x| x.min(0.95)).collect::<Vec<_>>(), 0.85, 0.95)
            })
            .collect();
        let mean = aggregate_thresholds(&folds).unwrap();
        for c in 0..6 {
            let mut s = 0.0;
            for f in &folds {
                s += f.get(c);
            }
            assert!((mean.get(c) - s / 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn thresholds_report_round_trip() {
        let config = ActConfig::new(0.85, 0.95).unwrap();
        let report = run_act(&perfect_fold(9, 2), &config).unwrap();
        let doc = ThresholdsReport::new(&config, &report.final_thresholds, &[(Some(0), &report)]);
        assert_eq!(doc.trace.len(), 10);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ThresholdsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.class_thresholds::<f64>().unwrap(), report.final_thresholds);
    }

    #[test]
    fn works_in_single_precision() {
        let probs = ProbabilityMap::new(2, 1, 1, vec![0.97f32, 0.03]).unwrap();
        let t = ClassThresholds::uniform(2, 0.95f32, 0.85, 0.95).unwrap();
        assert_eq!(pseudo_label(&probs, &t, 255).unwrap().values(), &[0]);
    }

    proptest! {
        #[test]
        fn raising_a_threshold_never_adds_coverage(
            raw in proptest::collection::vec(0.01f64..1.0, 3 * 16),
            base in proptest::collection::vec(0u32..=10, 3),
            class in 0usize..3,
            bump in 1u32..=10,
        ) {
            let mut values = raw;
            for j in 0..16 {
                let s: f64 = (0..3).map(|c| values[c * 16 + j]).sum();
                for c in 0..3 { values[c * 16 + j] /= s; }
            }
            let probs = ProbabilityMap::new(3, 4, 4, values).unwrap();
            let top = Top1Map::from_probabilities(&probs);
            let lo: Vec<f64> = base.iter().map(|&n| 0.5 + n as f64 * 0.04).collect();
            let mut hi = lo.clone();
            hi[class] = (hi[class] + bump as f64 * 0.04).min(0.9);
            let lo = ClassThresholds::new(lo, 0.5, 0.9).unwrap();
            let hi = ClassThresholds::new(hi, 0.5, 0.9).unwrap();
            let a: u64 = top.supervised_counts(&lo).unwrap().iter().sum();
            let b: u64 = top.supervised_counts(&hi).unwrap().iter().sum();
            prop_assert!(b <= a);
        }

        #[test]
        fn argmax_invariant_under_pixel_rescaling(
            raw in proptest::collection::vec(0.01f64..1.0, 4),
            scale in 0.1f64..10.0,
        ) {
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let scaled: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let s2: f64 = scaled.iter().sum();
            let q: Vec<f64> = scaled.iter().map(|v| v / s2).collect();
            let a = Top1Map::from_probabilities(&pixel(&p));
            let b = Top1Map::from_probabilities(&pixel(&q));
            prop_assert_eq!(a.class, b.class);
        }
    }
}
