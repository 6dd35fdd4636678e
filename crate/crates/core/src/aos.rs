//! IoU-driven class-wise oversampling.
//!
//! Per-fold class IoU vectors are averaged into `s_mean`; their mean over
//! classes is the sampling threshold `st`. A class scoring below `st`
//! contributes `ceil(lambda * (st - s_mean[c]))` extra copies of every
//! labelled sample that contains it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ClassIoU;
use crate::scalar::Scalar;
use crate::store::{DatasetManifest, SampleEntry};

pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Element-wise mean over the folds that define each class.
pub fn mean_scores<T: Scalar>(per_fold: &[ClassIoU<T>]) -> Result<Vec<Option<T>>> {
    let Some(first) = per_fold.first() else {
        return Err(Error::EmptyInput("per-fold scores"));
    };
    let classes = first.class_count();
    if let Some(bad) = per_fold.iter().find(|s| s.class_count() != classes) {
        return Err(Error::ClassCountMismatch {
            expected: classes,
            found: bad.class_count(),
        });
    }
    Ok((0..classes)
        .map(|c| {
            let defined: Vec<T> = per_fold.iter().filter_map(|s| s.values[c]).collect();
            (!defined.is_empty()).then(|| defined.iter().copied().sum::<T>() / T::of(defined.len() as f64))
        })
        .collect())
}

/// Mean of the defined entries of `s_mean`.
pub fn sampling_threshold<T: Scalar>(s_mean: &[Option<T>]) -> Result<T> {
    sampling_threshold_excluding(s_mean, &[])
}

/// Mean of the defined entries of `s_mean`, skipping `excluded` classes.
pub fn sampling_threshold_excluding<T: Scalar>(s_mean: &[Option<T>], excluded: &[usize]) -> Result<T> {
    let included: Vec<T> = s_mean
        .iter()
        .enumerate()
        .filter(|(c, _)| !excluded.contains(c))
        .filter_map(|(_, v)| *v)
        .collect();
    if included.is_empty() {
        return Err(Error::AllUndefined);
    }
    Ok(included.iter().copied().sum::<T>() / T::of(included.len() as f64))
}

/// Per-fold IoU together with its class means and sampling threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores<T> {
    pub per_fold: Vec<ClassIoU<T>>,
    pub s_mean: Vec<Option<T>>,
    pub st: T,
}

impl<T: Scalar> ClassScores<T> {
    pub fn from_folds(per_fold: Vec<ClassIoU<T>>, excluded: &[usize]) -> Result<Self> {
        let s_mean = mean_scores(&per_fold)?;
        let st = sampling_threshold_excluding(&s_mean, excluded)?;
        Ok(ClassScores { per_fold, s_mean, st })
    }
}

/// Oversampling decision for one class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassPlan {
    pub class: usize,
    /// |D_l^c|: labelled samples containing the class.
    pub base_count: usize,
    pub multiplier: usize,
    /// |D_os^c| = base_count * multiplier.
    pub oversample_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OversamplingPlan<T> {
    pub lambda: T,
    pub st: T,
    pub s_mean: Vec<Option<T>>,
    pub per_class: Vec<ClassPlan>,
}

impl<T: Scalar> OversamplingPlan<T> {
    /// Number of samples the materialized manifest adds.
    pub fn extra_samples(&self) -> usize {
        self.per_class.iter().map(|p| p.oversample_count).sum()
    }
}

/// `ceil(lambda * (st - s))` for `st > s`, else 0. Products that land within
/// floating-point noise of an integer are taken as that integer, so
/// `10 * (0.8 - 0.6)` gives 2 rather than 3, and a score equal to a
/// threshold that was averaged from it gives 0 rather than 1.
pub fn multiplier<T: Scalar>(lambda: T, st: T, s: Option<T>) -> usize {
    let Some(s) = s else { return 0 };
    if !(st > s) {
        return 0;
    }
    let x = (lambda * (st - s)).as_f64();
    let nearest = x.round();
    let value = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    value as usize
}

/// Compute the per-class oversampling plan.
pub fn aos_plan<T: Scalar>(
    s_mean: &[Option<T>],
    st: T,
    manifest: &DatasetManifest,
    lambda: T,
) -> Result<OversamplingPlan<T>> {
    if s_mean.len() != manifest.class_count() {
        return Err(Error::ClassCountMismatch {
            expected: manifest.class_count(),
            found: s_mean.len(),
        });
    }
    if !(lambda > T::zero()) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be positive")));
    }
    let base = manifest.class_frequencies();
    let per_class = s_mean
        .iter()
        .zip(base)
        .enumerate()
        .map(|(class, (&s, base_count))| {
            let m = multiplier(lambda, st, s);
            ClassPlan {
                class,
                base_count,
                multiplier: m,
                oversample_count: base_count * m,
            }
        })
        .collect();
    Ok(OversamplingPlan {
        lambda,
        st,
        s_mean: s_mean.to_vec(),
        per_class,
    })
}

/// Append the planned copies to the manifest.
///
/// For each class in index order and each multiplier unit, every sample
/// containing the class is copied once, so a sample with several boosted
/// classes is copied once per class per unit. Copies are named
/// `<id>#os<n>` with `n` counting that sample's copies from 1. `_seed` is
/// accepted for sub-sampling modes and does not affect this full plan.
pub fn materialize<T: Scalar>(
    plan: &OversamplingPlan<T>,
    manifest: &DatasetManifest,
    _seed: u64,
) -> Result<DatasetManifest> {
    if plan.per_class.len() != manifest.class_count() {
        return Err(Error::ClassCountMismatch {
            expected: manifest.class_count(),
            found: plan.per_class.len(),
        });
    }
    let mut copies = vec![0usize; manifest.len()];
    let mut samples: Vec<SampleEntry> = manifest.samples().to_vec();
    samples.reserve(plan.extra_samples());
    for p in &plan.per_class {
        for _ in 0..p.multiplier {
            for (i, sample) in manifest.samples().iter().enumerate() {
                if sample.contains(p.class) {
                    copies[i] += 1;
                    samples.push(SampleEntry {
                        id: format!("{}#os{}", sample.id, copies[i]),
                        ..sample.clone()
                    });
                }
            }
        }
    }
    DatasetManifest::new(manifest.class_count(), manifest.ignore_index(), samples)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRow {
    pub class: usize,
    pub base: usize,
    pub multiplier: usize,
    pub extra: usize,
}

/// Plan JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub lambda: f64,
    pub st: f64,
    pub s_mean: Vec<Option<f64>>,
    pub per_class: Vec<PlanRow>,
}

impl<T: Scalar> From<&OversamplingPlan<T>> for PlanReport {
    fn from(plan: &OversamplingPlan<T>) -> Self {
        PlanReport {
            lambda: plan.lambda.as_f64(),
            st: plan.st.as_f64(),
            s_mean: plan.s_mean.iter().map(|v| v.map(T::as_f64)).collect(),
            per_class: plan
                .per_class
                .iter()
                .map(|p| PlanRow {
                    class: p.class,
                    base: p.base_count,
                    multiplier: p.multiplier,
                    extra: p.oversample_count,
                })
                .collect(),
        }
    }
}
