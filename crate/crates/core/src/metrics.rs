//! Per-class confusion counts, precision and IoU over label rasters.
//!
//! Counting rules for one pixel with prediction `a` and reference `b`:
//!
//! * reference is the ignore sentinel: the pixel is skipped entirely;
//! * `a == b`: `tp[a]`, `intersection[a]` and `union_[a]` increase;
//! * `a != b`, both classes: `fp[a]`, `fn_[b]`, `union_[a]`, `union_[b]` increase;
//! * prediction is the ignore sentinel: `fn_[b]` and `union_[b]` increase.
//!
//! An abstaining prediction is therefore a miss, never a false positive.
//! IoU is accumulated over the whole dataset before dividing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::LabelMap;

/// Mergeable per-class confusion counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    class_count: usize,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub intersection: Vec<u64>,
    pub union_: Vec<u64>,
}

impl ConfusionAccumulator {
    /// The zero accumulator.
    pub fn new(class_count: usize) -> Self {
        ConfusionAccumulator {
            class_count,
            tp: vec![0; class_count],
            fp: vec![0; class_count],
            fn_: vec![0; class_count],
            intersection: vec![0; class_count],
            union_: vec![0; class_count],
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Count one pixel. `None` stands for the ignore sentinel.
    #[inline]
    pub fn record(&mut self, predicted: Option<usize>, reference: Option<usize>) {
        let Some(b) = reference else { return };
        match predicted {
            Some(a) if a == b => {
                self.tp[a] += 1;
                self.intersection[a] += 1;
                self.union_[a] += 1;
            }
            Some(a) => {
                self.fp[a] += 1;
                self.union_[a] += 1;
                self.fn_[b] += 1;
                self.union_[b] += 1;
            }
            None => {
                self.fn_[b] += 1;
                self.union_[b] += 1;
            }
        }
    }

    /// Add the confusion of one prediction/reference raster pair.
    pub fn accumulate(&mut self, prediction: &LabelMap, reference: &LabelMap) -> Result<()> {
        check_pair(prediction, reference, self.class_count)?;
        for j in 0..reference.pixels() {
            self.record(prediction.class_at(j), reference.class_at(j));
        }
        Ok(())
    }

    /// Element-wise sum of two accumulators.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        if self.class_count != other.class_count {
            return Err(Error::ClassCountMismatch {
                expected: self.class_count,
                found: other.class_count,
            });
        }
        let pairs = [
            (&mut self.tp, &other.tp),
            (&mut self.fp, &other.fp),
            (&mut self.fn_, &other.fn_),
            (&mut self.intersection, &other.intersection),
            (&mut self.union_, &other.union_),
        ];
        for (dst, src) in pairs {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        Ok(())
    }

    /// CP = TP / (TP + FP), undefined when the class was never predicted.
    pub fn precision<T: Scalar>(&self) -> ClassPrecision<T> {
        ClassPrecision {
            values: ratios(&self.tp, self.tp.iter().zip(&self.fp).map(|(t, f)| t + f)),
        }
    }

    /// Dataset-level intersection over union, undefined for an empty union.
    pub fn iou<T: Scalar>(&self) -> ClassIoU<T> {
        ClassIoU {
            values: ratios(&self.intersection, self.union_.iter().copied()),
        }
    }
}

fn ratios<T: Scalar>(num: &[u64], den: impl Iterator<Item = u64>) -> Vec<Option<T>> {
    num.iter()
        .zip(den)
        .map(|(&n, d)| (d > 0).then(|| T::of(n as f64 / d as f64)))
        .collect()
}

fn check_pair(prediction: &LabelMap, reference: &LabelMap, class_count: usize) -> Result<()> {
    let shape = |m: &LabelMap| (m.height(), m.width());
    if shape(prediction) != shape(reference) {
        return Err(Error::ShapeMismatch {
            left: shape(prediction),
            right: shape(reference),
        });
    }
    for found in [prediction.class_count(), reference.class_count()] {
        if found != class_count {
            return Err(Error::ClassCountMismatch {
                expected: class_count,
                found,
            });
        }
    }
    Ok(())
}

/// Functional form of [`ConfusionAccumulator::accumulate`].
pub fn accumulate(
    mut acc: ConfusionAccumulator,
    prediction: &LabelMap,
    reference: &LabelMap,
) -> Result<ConfusionAccumulator> {
    acc.accumulate(prediction, reference)?;
    Ok(acc)
}

/// Per-class precision; `None` where TP + FP = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrecision<T> {
    pub values: Vec<Option<T>>,
}

/// Per-class IoU; `None` where the union is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassIoU<T> {
    pub values: Vec<Option<T>>,
}

impl<T: Scalar> ClassIoU<T> {
    pub fn class_count(&self) -> usize {
        self.values.len()
    }

    /// Mean over defined classes.
    pub fn mean(&self) -> Option<T> {
        let defined: Vec<T> = self.values.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().copied().sum::<T>() / T::of(defined.len() as f64))
    }
}

/// Scores JSON document. `null` encodes an undefined value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoresReport {
    pub k: Option<usize>,
    pub iou: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
}

impl ScoresReport {
    pub fn from_accumulator(k: Option<usize>, acc: &ConfusionAccumulator) -> Self {
        ScoresReport {
            k,
            iou: acc.iou::<f64>().values,
            precision: acc.precision::<f64>().values,
            tp: acc.tp.clone(),
            fp: acc.fp.clone(),
        }
    }

    pub fn class_iou<T: Scalar>(&self) -> ClassIoU<T> {
        ClassIoU {
            values: self.iou.iter().map(|v| v.map(T::of)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.iou.len();
        if self.precision.len() != c || self.tp.len() != c || self.fp.len() != c {
            return Err(Error::Schema("scores arrays differ in length".into()));
        }
        let in_unit = |v: &Option<f64>| v.is_none_or(|x| (0.0..=1.0).contains(&x));
        if !self.iou.iter().all(in_unit) || !self.precision.iter().all(in_unit) {
            return Err(Error::Schema("scores must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const IG: u16 = 255;

    fn raster(values: &[u16], c: usize) -> LabelMap {
        let side = (values.len() as f64).sqrt() as usize;
        LabelMap::new(side, values.len() / side, values.to_vec(), c, IG).unwrap()
    }

    /// Independent per-pixel reference: every count is derived from its
    /// set definition, class by class.
    fn naive(pred: &[u16], reference: &[u16], c: usize) -> ConfusionAccumulator {
        let mut acc = ConfusionAccumulator::new(c);
        for k in 0..c {
            let k16 = k as u16;
            for j in 0..pred.len() {
                if reference[j] == IG {
                    continue;
                }
                let p = pred[j] == k16;
                let r = reference[j] == k16;
                acc.tp[k] += (p && r) as u64;
                acc.fp[k] += (p && !r) as u64;
                acc.fn_[k] += (!p && r) as u64;
                acc.intersection[k] += (p && r) as u64;
                acc.union_[k] += (p || r) as u64;
            }
        }
        acc
    }

    #[test]
    fn perfect_prediction() {
        let r = raster(&[0, 1, 2, 2, 1, 0, 0, 0, 2], 3);
        let mut acc = ConfusionAccumulator::new(3);
        acc.accumulate(&r, &r).unwrap();
        assert_eq!(acc.tp, vec![4, 2, 3]);
        assert_eq!(acc.fp, vec![0; 3]);
        assert_eq!(acc.fn_, vec![0; 3]);
        let iou = acc.iou::<f64>();
        assert_eq!(iou.values, vec![Some(1.0); 3]);
    }

    #[test]
    fn all_ignore_prediction_counts_nothing_as_predicted() {
        let r = raster(&[0, 1, 1, 0], 2);
        let p = raster(&[IG; 4], 2);
        let acc = accumulate(ConfusionAccumulator::new(2), &p, &r).unwrap();
        assert_eq!(acc.tp, vec![0, 0]);
        assert_eq!(acc.fp, vec![0, 0]);
        assert_eq!(acc.precision::<f64>().values, vec![None, None]);
    }

    #[test]
    fn four_pixel_hand_enumeration() {
        // reference [[0,0],[1,1]], prediction [[0,1],[ignore,1]]
        let r = raster(&[0, 0, 1, 1], 2);
        let p = raster(&[0, 1, IG, 1], 2);
        let acc = accumulate(ConfusionAccumulator::new(2), &p, &r).unwrap();
        assert_eq!(acc.tp, vec![1, 1]);
        assert_eq!(acc.fp, vec![0, 1]);
        // pixel (0,1) misses class 0; the abstaining pixel (1,0) misses class 1
        assert_eq!(acc.fn_, vec![1, 1]);
        assert_eq!(acc.intersection, vec![1, 1]);
        assert_eq!(acc.union_, vec![2, 3]);
    }

    #[test]
    fn precision_ratios() {
        let mut acc = ConfusionAccumulator::new(3);
        acc.tp = vec![1, 0, 3];
        acc.fp = vec![1, 0, 1];
        let cp = acc.precision::<f64>().values;
        assert_eq!(cp, vec![Some(0.5), None, Some(0.75)]);
    }

    #[test]
    fn iou_cases() {
        // class 1: prediction covers 2 pixels, reference 2, overlap 1
        let r = raster(&[1, 1, 0, 0], 2);
        let p = raster(&[0, 1, 1, 0], 2);
        let acc = accumulate(ConfusionAccumulator::new(2), &p, &r).unwrap();
        assert_eq!(acc.iou::<f64>().values[1], Some(1.0 / 3.0));

        let r = raster(&[1, 1, 0, 0], 3);
        let p = raster(&[0, 0, 1, 1], 3);
        let acc = accumulate(ConfusionAccumulator::new(3), &p, &r).unwrap();
        assert_eq!(acc.iou::<f64>().values, vec![Some(0.0), Some(0.0), None]);
    }

    #[test]
    fn mismatches_are_errors() {
        let a = raster(&[0, 1, 1, 0], 2);
        let b = LabelMap::new(1, 4, vec![0, 1, 1, 0], 2, IG).unwrap();
        let mut acc = ConfusionAccumulator::new(2);
        assert!(matches!(acc.accumulate(&a, &b), Err(Error::ShapeMismatch { .. })));
        let c3 = raster(&[0, 1, 1, 0], 3);
        assert!(matches!(acc.accumulate(&a, &c3), Err(Error::ClassCountMismatch { .. })));
        assert!(acc.merge(&ConfusionAccumulator::new(3)).is_err());
    }

    #[test]
    fn scores_report_round_trips_through_json() {
        let r = raster(&[0, 0, 1, 1], 3);
        let p = raster(&[0, 1, IG, 1], 3);
        let acc = accumulate(ConfusionAccumulator::new(3), &p, &r).unwrap();
        let report = ScoresReport::from_accumulator(Some(2), &acc);
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("\"k\":2"));
        assert!(text.contains("null"));
        let back: ScoresReport = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back, report);
    }

    fn raster_pair() -> impl Strategy<Value = (usize, Vec<u16>, Vec<u16>)> {
        (2usize..=5).prop_flat_map(|c| {
            let cell = prop_oneof![8 => 0u16..c as u16, 2 => Just(IG)];
            (
                Just(c),
                proptest::collection::vec(cell.clone(), 64),
                proptest::collection::vec(cell, 64),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_naive_double_loop((c, p, r) in raster_pair()) {
            let pm = LabelMap::new(8, 8, p.clone(), c, IG).unwrap();
            let rm = LabelMap::new(8, 8, r.clone(), c, IG).unwrap();
            let acc = accumulate(ConfusionAccumulator::new(c), &pm, &rm).unwrap();
            prop_assert_eq!(acc, naive(&p, &r, c));
        }

        #[test]
        fn reference_ignore_pixels_never_count((c, p, r) in raster_pair(), alt in 0u16..5) {
            let rm = LabelMap::new(8, 8, r.clone(), c, IG).unwrap();
            let base = accumulate(ConfusionAccumulator::new(c), &LabelMap::new(8, 8, p.clone(), c, IG).unwrap(), &rm).unwrap();
            let changed: Vec<u16> = p.iter().zip(&r)
                .map(|(&pv, &rv)| if rv == IG { alt % c as u16 } else { pv })
                .collect();
            let other = accumulate(ConfusionAccumulator::new(c), &LabelMap::new(8, 8, changed, c, IG).unwrap(), &rm).unwrap();
            prop_assert_eq!(base, other);
        }

        #[test]
        fn conservation((c, p, r) in raster_pair()) {
            let acc = accumulate(
                ConfusionAccumulator::new(c),
                &LabelMap::new(8, 8, p.clone(), c, IG).unwrap(),
                &LabelMap::new(8, 8, r.clone(), c, IG).unwrap(),
            ).unwrap();
            let counted = r.iter().filter(|&&v| v != IG).count() as u64;
            let abstained = p.iter().zip(&r).filter(|&(&pv, &rv)| rv != IG && pv == IG).count() as u64;
            let predicted: u64 = acc.tp.iter().sum::<u64>() + acc.fp.iter().sum::<u64>();
            prop_assert_eq!(predicted + abstained, counted);
            for k in 0..c {
                prop_assert!(acc.intersection[k] <= acc.union_[k]);
            }
        }

        #[test]
        fn merge_is_commutative_associative_with_identity(
            (c, p1, r1) in raster_pair(), seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut rand_acc = || {
                let p: Vec<u16> = (0..64).map(|_| rng.random_range(0..c as u16)).collect();
                let r: Vec<u16> = (0..64).map(|_| rng.random_range(0..c as u16)).collect();
                accumulate(ConfusionAccumulator::new(c),
                    &LabelMap::new(8, 8, p, c, IG).unwrap(),
                    &LabelMap::new(8, 8, r, c, IG).unwrap()).unwrap()
            };
            let a = accumulate(ConfusionAccumulator::new(c),
                &LabelMap::new(8, 8, p1, c, IG).unwrap(),
                &LabelMap::new(8, 8, r1, c, IG).unwrap()).unwrap();
            let b = rand_acc();
            let d = rand_acc();
            let zero = ConfusionAccumulator::new(c);
            prop_assert_eq!(a.merge(&zero).unwrap(), a.clone());
            prop_assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
            prop_assert_eq!(
                a.merge(&b).unwrap().merge(&d).unwrap(),
                a.merge(&b.merge(&d).unwrap()).unwrap()
            );
        }
    }
}
