//! Disjoint, class-covering validation folds over the labelled manifest.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Stream};
use crate::store::DatasetManifest;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_NV_FRACTION: f64 = 0.2;
pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

/// K validation folds and their residual training sets, as sample ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    pub n_v: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
    pub residuals: Vec<Vec<String>>,
}

impl FoldSpec {
    /// Check every fold invariant against `manifest`.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        let bad = |msg: String| Err(Error::Schema(msg));
        if self.folds.len() != self.k || self.residuals.len() != self.k {
            return bad(format!("expected {} folds and residuals", self.k));
        }
        let mut seen = HashSet::new();
        for (i, fold) in self.folds.iter().enumerate() {
            if fold.len() != self.n_v {
                return bad(format!("fold {i} holds {} samples, expected {}", fold.len(), self.n_v));
            }
            let mut covered = vec![false; manifest.class_count()];
            for id in fold {
                let Some(sample) = manifest.get(id) else {
                    return bad(format!("fold {i} names unknown sample `{id}`"));
                };
                if !seen.insert(id.as_str()) {
                    return bad(format!("sample `{id}` appears in more than one fold"));
                }
                for &c in &sample.present_classes {
                    covered[c] = true;
                }
            }
            if let Some(c) = covered.iter().position(|&v| !v) {
                return bad(format!("fold {i} has no sample containing class {c}"));
            }
            let members: HashSet<&str> = fold.iter().map(String::as_str).collect();
            let expected: Vec<&str> = manifest
                .samples()
                .iter()
                .map(|s| s.id.as_str())
                .filter(|id| !members.contains(id))
                .collect();
            if self.residuals[i] != expected {
                return bad(format!("residual {i} is not the complement of its fold"));
            }
        }
        Ok(())
    }

    /// Validation ids of fold `k`.
    pub fn fold(&self, k: usize) -> Option<&[String]> {
        self.folds.get(k).map(Vec::as_slice)
    }
}

/// `max(1, round(fraction * N_l))`.
pub fn default_n_v(manifest: &DatasetManifest, fraction: f64) -> usize {
    ((fraction * manifest.len() as f64).round() as usize).max(1)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Fold(usize),
    Pool,
}

struct Assignment<'a> {
    classes: Vec<Vec<usize>>,
    slot: Vec<Slot>,
    members: Vec<Vec<usize>>,
    counts: Vec<Vec<usize>>,
    manifest: &'a DatasetManifest,
}

impl<'a> Assignment<'a> {
    fn new(manifest: &'a DatasetManifest, k: usize, order: &[usize], n_v: usize) -> Self {
        let n = manifest.len();
        let classes: Vec<Vec<usize>> = manifest
            .samples()
            .iter()
            .map(|s| s.present_classes.iter().copied().collect())
            .collect();
        let mut slot = vec![Slot::Pool; n];
        let mut members = vec![Vec::with_capacity(n_v); k];
        let mut counts = vec![vec![0; manifest.class_count()]; k];
        for (t, &i) in order.iter().take(k * n_v).enumerate() {
            let f = t % k;
            slot[i] = Slot::Fold(f);
            members[f].push(i);
            for &c in &classes[i] {
                counts[f][c] += 1;
            }
        }
        Assignment {
            classes,
            slot,
            members,
            counts,
            manifest,
        }
    }

    fn missing(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (f, row) in self.counts.iter().enumerate() {
            for (c, &n) in row.iter().enumerate() {
                if n == 0 {
                    out.push((f, c));
                }
            }
        }
        out
    }

    /// Change in the number of uncovered (fold, class) pairs if `incoming`
    /// moves into fold `f` and `outgoing` leaves it for `incoming`'s slot.
    fn swap_delta(&self, f: usize, incoming: usize, outgoing: usize) -> isize {
        let mut delta = 0isize;
        let mut touched: Vec<usize> = self.classes[incoming].clone();
        touched.extend(&self.classes[outgoing]);
        touched.sort_unstable();
        touched.dedup();
        let has = |i: usize, c: usize| self.classes[i].binary_search(&c).is_ok() as isize;
        for c in touched {
            let change = has(incoming, c) - has(outgoing, c);
            let before = self.counts[f][c] as isize;
            delta += ((before + change == 0) as isize) - ((before == 0) as isize);
            if let Slot::Fold(g) = self.slot[incoming] {
                let before = self.counts[g][c] as isize;
                delta += ((before - change == 0) as isize) - ((before == 0) as isize);
            }
        }
        delta
    }

    fn swap(&mut self, f: usize, incoming: usize, outgoing: usize) {
        let from = self.slot[incoming];
        let pos = self.members[f]
            .iter()
            .position(|&i| i == outgoing)
            .expect("outgoing in fold");
        self.members[f][pos] = incoming;
        for &c in &self.classes[outgoing] {
            self.counts[f][c] -= 1;
        }
        for &c in &self.classes[incoming] {
            self.counts[f][c] += 1;
        }
        self.slot[incoming] = Slot::Fold(f);
        self.slot[outgoing] = from;
        if let Slot::Fold(g) = from {
            let pos = self.members[g]
                .iter()
                .position(|&i| i == incoming)
                .expect("incoming in fold");
            self.members[g][pos] = outgoing;
            for &c in &self.classes[incoming] {
                self.counts[g][c] -= 1;
            }
            for &c in &self.classes[outgoing] {
                self.counts[g][c] += 1;
            }
        }
    }

    fn find_improving_swap<R: Rng>(&self, rng: &mut R) -> Option<(usize, usize, usize)> {
        for (f, c) in self.missing() {
            let mut donors: Vec<usize> = (0..self.classes.len())
                .filter(|&i| self.slot[i] != Slot::Fold(f) && self.classes[i].binary_search(&c).is_ok())
                .collect();
            donors.shuffle(rng);
            let mut outgoing = self.members[f].clone();
            outgoing.shuffle(rng);
            for &s in &donors {
                for &t in &outgoing {
                    if self.swap_delta(f, s, t) < 0 {
                        return Some((f, s, t));
                    }
                }
            }
        }
        None
    }

    fn perturb<R: Rng>(&mut self, rng: &mut R) {
        let f = rng.random_range(0..self.members.len());
        let outside: Vec<usize> = (0..self.classes.len())
            .filter(|&i| self.slot[i] != Slot::Fold(f))
            .collect();
        if outside.is_empty() {
            return;
        }
        let s = outside[rng.random_range(0..outside.len())];
        let t = self.members[f][rng.random_range(0..self.members[f].len())];
        self.swap(f, s, t);
    }

    fn into_spec(self, k: usize, n_v: usize, seed: u64) -> FoldSpec {
        let samples = self.manifest.samples();
        let folds: Vec<Vec<String>> = self
            .members
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.sort_unstable();
                m.into_iter().map(|i| samples[i].id.clone()).collect()
            })
            .collect();
        let residuals = (0..k)
            .map(|f| {
                samples
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| self.slot[i] != Slot::Fold(f))
                    .map(|(_, s)| s.id.clone())
                    .collect()
            })
            .collect();
        FoldSpec {
            k,
            n_v,
            seed,
            folds,
            residuals,
        }
    }
}

/// Build `k` disjoint folds of exactly `n_v` samples, each containing every
/// class at least once.
///
/// Samples are shuffled with `seed` and dealt round-robin; folds missing a
/// class are then repaired by swapping in a sample that carries it, taken
/// from the unassigned pool or from another fold, whenever the swap reduces
/// the total number of uncovered (fold, class) pairs. If no such swap exists
/// a random swap is made. After `max_attempts` rounds without full coverage
/// the construction fails.
pub fn build_folds(
    manifest: &DatasetManifest,
    k: usize,
    n_v: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<FoldSpec> {
    if k == 0 || n_v == 0 {
        return Err(Error::Size(format!("k = {k} and n_v = {n_v} must both be positive")));
    }
    if k * n_v > manifest.len() {
        return Err(Error::Size(format!(
            "{k} folds of {n_v} need {} samples, manifest has {}",
            k * n_v,
            manifest.len()
        )));
    }
    let freq = manifest.class_frequencies();
    if let Some((c, &n)) = freq.iter().enumerate().find(|&(_, &n)| n < k) {
        return Err(Error::InfeasibleCoverage(format!(
            "class {c} appears in {n} samples but {k} disjoint folds each need one"
        )));
    }

    let mut rng = stream_rng(seed, Stream::Folds, 0);
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut rng);
    let mut assignment = Assignment::new(manifest, k, &order, n_v);

    let mut attempts = 0;
    while !assignment.missing().is_empty() {
        if attempts == max_attempts {
            let (f, c) = assignment.missing()[0];
            return Err(Error::InfeasibleCoverage(format!(
                "fold {f} still lacks class {c} after {max_attempts} repair attempts"
            )));
        }
        attempts += 1;
        match assignment.find_improving_swap(&mut rng) {
            Some((f, s, t)) => assignment.swap(f, s, t),
            None => assignment.perturb(&mut rng),
        }
    }
    Ok(assignment.into_spec(k, n_v, seed))
}
