//! Multi-label datasets and the phase protocol views.
//!
//! Synthetic clips are built from seeded unit prototype vectors: a clip's
//! feature vector is the sum of its label prototypes plus Gaussian noise.
//! Class sizes follow a Zipf law, extra labels co-occur by prototype
//! similarity, so the resulting problem is imbalanced and correlated like
//! the real-world tagging data it stands in for.
//!
//! Phase views restrict targets to the classes introduced at that phase;
//! evaluation views expand to everything learned so far. Both are
//! deterministic and label-tight: a target vector never encodes a class
//! outside its view.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// One clip: a feature vector plus the set of class IDs present in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub clip_id: String,
    pub x: Vector,
    pub labels: BTreeSet<usize>,
}

/// An in-memory dataset with its declared dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub feature_dim: usize,
    pub n_classes: usize,
}

/// Synthetic-data recipe. `clips_per_class` is the count for the most
/// frequent class; class `k` receives `clips_per_class / (k+1)^zipf_exponent`
/// clips (rounded, at least one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub clips_per_class: usize,
    pub zipf_exponent: f64,
    pub max_labels: usize,
    pub noise_sigma: f64,
    pub cooccur_temperature: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 10,
            feature_dim: 16,
            clips_per_class: 100,
            zipf_exponent: 1.0,
            max_labels: 3,
            noise_sigma: 0.1,
            cooccur_temperature: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("need feature_dim >= 2".into()));
        }
        if self.clips_per_class == 0 {
            return Err(Error::Config("clips_per_class must be positive".into()));
        }
        if self.max_labels == 0 || self.max_labels > self.n_classes {
            return Err(Error::Config(format!(
                "max_labels must be in [1, {}], got {}",
                self.n_classes, self.max_labels
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if self.cooccur_temperature <= 0.0 {
            return Err(Error::Config("cooccur_temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Generates a seeded synthetic dataset. Bit-identical for identical
/// configs.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let standard = Normal::new(0.0, 1.0).expect("valid normal");

    // Unit prototype per class.
    let prototypes: Vec<Vector> = (0..cfg.n_classes)
        .map(|_| {
            let mut p: Vec<f64> = (0..cfg.feature_dim).map(|_| standard.sample(&mut rng)).collect();
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut p {
                *v /= norm;
            }
            Vector::new(p)
        })
        .collect();

    // Zipf quota per class.
    let quotas: Vec<usize> = (0..cfg.n_classes)
        .map(|k| {
            let q = cfg.clips_per_class as f64 / ((k + 1) as f64).powf(cfg.zipf_exponent);
            (q.round() as usize).max(1)
        })
        .collect();

    let mut examples = Vec::with_capacity(quotas.iter().sum());
    let mut clip_counter = 0usize;
    for (class, &quota) in quotas.iter().enumerate() {
        for _ in 0..quota {
            let n_labels = rng.random_range(1..=cfg.max_labels);
            let mut labels = BTreeSet::new();
            labels.insert(class);
            while labels.len() < n_labels {
                let pick = weighted_cooccurrence_pick(
                    &prototypes,
                    class,
                    &labels,
                    cfg.cooccur_temperature,
                    &mut rng,
                );
                labels.insert(pick);
            }

            let mut x = Vector::zeros(cfg.feature_dim);
            for &l in &labels {
                x.axpy(1.0, &prototypes[l]);
            }
            if cfg.noise_sigma > 0.0 {
                for v in x.as_mut_slice() {
                    *v += cfg.noise_sigma * standard.sample(&mut rng);
                }
            }

            examples.push(Example {
                clip_id: format!("clip_{clip_counter:06}"),
                x,
                labels,
            });
            clip_counter += 1;
        }
    }

    Ok(Dataset {
        examples,
        feature_dim: cfg.feature_dim,
        n_classes: cfg.n_classes,
    })
}

/// Samples one co-occurring class: weight `exp(sim(seed, candidate)/temp)`
/// over classes not yet in the label set.
fn weighted_cooccurrence_pick(
    prototypes: &[Vector],
    seed_class: usize,
    taken: &BTreeSet<usize>,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut candidates = Vec::new();
    let mut weights = Vec::new();
    for (k, proto) in prototypes.iter().enumerate() {
        if !taken.contains(&k) {
            candidates.push(k);
            weights.push((prototypes[seed_class].dot(proto) / temperature).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return candidates[i];
        }
    }
    *candidates.last().expect("at least one candidate")
}

// ---------------------------------------------------------------------------
// Dataset file format
// ---------------------------------------------------------------------------
//
//   #cil-dataset v1 dim=<D> classes=<K>
//   <clip_id>,<f1;f2;...;fD>,<l1;l2;...>
//
// Floats are written with Rust's shortest round-trip formatting (at most 17
// significant digits), so save → load is bit-exact. `#` starts a comment.

/// Serializes a dataset to the line-oriented text format.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln_header(&mut out, dataset);
    for ex in &dataset.examples {
        if ex.clip_id.contains(',') || ex.clip_id.contains('\n') {
            return Err(Error::Config(format!(
                "clip id {:?} contains a reserved character",
                ex.clip_id
            )));
        }
        if ex.labels.is_empty() {
            return Err(Error::Config(format!("clip {:?} has no labels", ex.clip_id)));
        }
        let feats: Vec<String> = ex.x.as_slice().iter().map(|v| format!("{v}")).collect();
        let labels: Vec<String> = ex.labels.iter().map(|l| l.to_string()).collect();
        writeln!(out, "{},{},{}", ex.clip_id, feats.join(";"), labels.join(";"))
            .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn writeln_header(out: &mut String, dataset: &Dataset) {
    writeln!(
        out,
        "#cil-dataset v1 dim={} classes={}",
        dataset.feature_dim, dataset.n_classes
    )
    .expect("string write");
}

/// Parses a dataset file, reporting malformed content with its line number.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
    let (feature_dim, n_classes) = parse_header(header)?;

    let mut examples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let clip_id = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Parse { line: line_no, msg: "missing clip id".into() })?
            .to_string();
        let feats = fields
            .next()
            .ok_or_else(|| Error::Parse { line: line_no, msg: "missing feature field".into() })?;
        let labels = fields
            .next()
            .ok_or_else(|| Error::Parse { line: line_no, msg: "missing label field".into() })?;

        let x: Vec<f64> = feats
            .split(';')
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad float {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if x.len() != feature_dim {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("row has {} features, header declares {}", x.len(), feature_dim),
            });
        }

        if labels.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty label field (labels must be non-empty)".into(),
            });
        }
        let labels: BTreeSet<usize> = labels
            .split(';')
            .map(|t| {
                let l = t.parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad class id {t:?}"),
                })?;
                if l >= n_classes {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("class id {l} outside [0, {n_classes})"),
                    });
                }
                Ok(l)
            })
            .collect::<Result<_>>()?;

        examples.push(Example {
            clip_id,
            x: Vector::new(x),
            labels,
        });
    }

    Ok(Dataset {
        examples,
        feature_dim,
        n_classes,
    })
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let bad = |msg: &str| Error::Parse { line: 1, msg: msg.to_string() };
    let rest = header
        .strip_prefix("#cil-dataset v1 ")
        .ok_or_else(|| bad("expected '#cil-dataset v1 dim=<D> classes=<K>' header"))?;
    let mut dim = None;
    let mut classes = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("dim=") {
            dim = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("classes=") {
            classes = v.parse::<usize>().ok();
        }
    }
    match (dim, classes) {
        (Some(d), Some(k)) if d > 0 && k > 0 => Ok((d, k)),
        _ => Err(bad("header must carry positive dim= and classes=")),
    }
}

// ---------------------------------------------------------------------------
// Phase plan and views
// ---------------------------------------------------------------------------

/// Ordered partition of class IDs across phases; phase 0 is the base task.
/// Class order is stable: logit index `j` at phase `i` always refers to
/// `classes_so_far(i)[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    phases: Vec<Vec<usize>>,
}

impl PhasePlan {
    pub fn new(phases: Vec<Vec<usize>>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Config("plan needs at least one phase".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, phase) in phases.iter().enumerate() {
            if phase.is_empty() {
                return Err(Error::Config(format!("phase {i} has no classes")));
            }
            for &c in phase {
                if !seen.insert(c) {
                    return Err(Error::Config(format!(
                        "class {c} appears in more than one phase"
                    )));
                }
            }
        }
        Ok(PhasePlan { phases })
    }

    /// Seeded random assignment: a permutation of `0..n_classes` split into
    /// one base phase and fixed-size increments. The same seed gives the
    /// same order for every strategy.
    pub fn random(
        n_classes: usize,
        base: usize,
        increment: usize,
        n_increments: usize,
        seed: u64,
    ) -> Result<Self> {
        if base == 0 {
            return Err(Error::Config("base phase needs at least one class".into()));
        }
        if n_increments > 0 && increment == 0 {
            return Err(Error::Config("increment size must be positive".into()));
        }
        let needed = base + increment * n_increments;
        if needed > n_classes {
            return Err(Error::Config(format!(
                "plan needs {needed} classes but the dataset has {n_classes}"
            )));
        }
        let mut order: Vec<usize> = (0..n_classes).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let mut phases = vec![order[..base].to_vec()];
        for i in 0..n_increments {
            let start = base + i * increment;
            phases.push(order[start..start + increment].to_vec());
        }
        PhasePlan::new(phases)
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn phase_classes(&self, phase: usize) -> &[usize] {
        &self.phases[phase]
    }

    /// Classes of phases `0..=phase`, in introduction order.
    pub fn classes_so_far(&self, phase: usize) -> Vec<usize> {
        self.phases[..=phase].iter().flatten().copied().collect()
    }

    pub fn check_phase(&self, phase: usize) -> Result<()> {
        if phase >= self.phases.len() {
            return Err(Error::Range(format!(
                "phase {phase} outside plan with {} phases",
                self.phases.len()
            )));
        }
        Ok(())
    }
}

/// One example inside a view: feature vector plus a multi-hot target over
/// exactly the view's `target_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseExample {
    pub clip_id: String,
    pub x: Vector,
    pub targets: Vector,
}

/// A training or evaluation view: examples whose labels intersect
/// `target_classes`, targets restricted to those classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDataset {
    pub examples: Vec<PhaseExample>,
    pub target_classes: Vec<usize>,
}

impl PhaseDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

fn build_view(dataset: &Dataset, target_classes: &[usize]) -> PhaseDataset {
    let mut examples = Vec::new();
    for ex in &dataset.examples {
        let targets: Vec<f64> = target_classes
            .iter()
            .map(|c| if ex.labels.contains(c) { 1.0 } else { 0.0 })
            .collect();
        if targets.iter().any(|&t| t > 0.0) {
            examples.push(PhaseExample {
                clip_id: ex.clip_id.clone(),
                x: ex.x.clone(),
                targets: Vector::new(targets),
            });
        }
    }
    PhaseDataset {
        examples,
        target_classes: target_classes.to_vec(),
    }
}

/// Training view for one phase: every clip labeled with a class introduced
/// at this phase, targets restricted to those classes (labels from other
/// phases are ignored). A clip may therefore appear in several phases'
/// views with different targets.
pub fn phase_view(dataset: &Dataset, plan: &PhasePlan, phase: usize) -> Result<PhaseDataset> {
    plan.check_phase(phase)?;
    let view = build_view(dataset, plan.phase_classes(phase));
    for (i, &c) in view.target_classes.iter().enumerate() {
        let count = view
            .examples
            .iter()
            .filter(|e| e.targets[i] > 0.0)
            .count();
        if count == 0 {
            return Err(Error::Config(format!(
                "phase {phase}: class {c} has no clips in the dataset"
            )));
        }
    }
    Ok(view)
}

/// Like [`phase_view`] but excluding clips that already appeared in an
/// earlier phase's view (overlap-removal ablation).
pub fn phase_view_deduped(
    dataset: &Dataset,
    plan: &PhasePlan,
    phase: usize,
) -> Result<PhaseDataset> {
    plan.check_phase(phase)?;
    let mut view = phase_view(dataset, plan, phase)?;
    if phase > 0 {
        let earlier: BTreeSet<usize> = plan.classes_so_far(phase - 1).into_iter().collect();
        let by_id: BTreeMap<&str, &BTreeSet<usize>> = dataset
            .examples
            .iter()
            .map(|e| (e.clip_id.as_str(), &e.labels))
            .collect();
        view.examples.retain(|e| {
            by_id[e.clip_id.as_str()]
                .iter()
                .all(|l| !earlier.contains(l))
        });
    }
    Ok(view)
}

/// Fraction of clips (among clips used in at least one phase view) that
/// appear in two or more phase views.
pub fn phase_overlap_fraction(dataset: &Dataset, plan: &PhasePlan) -> Result<f64> {
    let mut appearances: BTreeMap<String, usize> = BTreeMap::new();
    for phase in 0..plan.n_phases() {
        for ex in phase_view(dataset, plan, phase)?.examples {
            *appearances.entry(ex.clip_id).or_insert(0) += 1;
        }
    }
    if appearances.is_empty() {
        return Ok(0.0);
    }
    let shared = appearances.values().filter(|&&n| n > 1).count();
    Ok(shared as f64 / appearances.len() as f64)
}

/// Evaluation view after `phase`: targets over everything learned so far
/// (classes of phases `0..=phase`); clips carrying none of those classes
/// are excluded. Future classes are never evaluated.
pub fn eval_view(dataset: &Dataset, plan: &PhasePlan, phase: usize) -> Result<PhaseDataset> {
    plan.check_phase(phase)?;
    Ok(build_view(dataset, &plan.classes_so_far(phase)))
}

// ---------------------------------------------------------------------------
// Balanced mini-batch sampling
// ---------------------------------------------------------------------------

/// Class-balanced batch sampler: one shuffled queue of clip indices per
/// target class; batch slots cycle classes round-robin and pop one clip
/// containing that class; an exhausted queue is reshuffled. Over any
/// prefix, per-class draw counts differ by at most one.
pub struct BalancedSampler {
    queues: Vec<Vec<usize>>,
    pools: Vec<Vec<usize>>,
    next_class: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    pub fn new(view: &PhaseDataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pools = Vec::with_capacity(view.target_classes.len());
        for (i, &c) in view.target_classes.iter().enumerate() {
            let pool: Vec<usize> = view
                .examples
                .iter()
                .enumerate()
                .filter(|(_, e)| e.targets[i] > 0.0)
                .map(|(idx, _)| idx)
                .collect();
            if pool.is_empty() {
                return Err(Error::Config(format!("class {c} has no clips to sample")));
            }
            pools.push(pool);
        }
        let queues = pools
            .iter()
            .map(|pool| {
                let mut q = pool.clone();
                q.shuffle(&mut rng);
                q
            })
            .collect();
        Ok(BalancedSampler {
            queues,
            pools,
            next_class: 0,
            batch_size,
            rng,
        })
    }

    fn next_slot(&mut self) -> usize {
        let class = self.next_class;
        self.next_class = (self.next_class + 1) % self.queues.len();
        if self.queues[class].is_empty() {
            let mut q = self.pools[class].clone();
            q.shuffle(&mut self.rng);
            self.queues[class] = q;
        }
        self.queues[class].pop().expect("refilled above")
    }

    /// Example indices (into the view) for the next batch.
    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.batch_size).map(|_| self.next_slot()).collect()
    }
}

/// Endless iterator of balanced batches over a view.
pub fn balanced_batches(
    view: &PhaseDataset,
    batch_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = Vec<usize>>> {
    let mut sampler = BalancedSampler::new(view, batch_size, seed)?;
    Ok(std::iter::from_fn(move || Some(sampler.next_batch())))
}

// ---------------------------------------------------------------------------
// Label statistics
// ---------------------------------------------------------------------------

/// Histogram of clips by number of labels within `class_subset`.
pub fn labels_histogram(examples: &[Example], class_subset: &[usize]) -> BTreeMap<usize, usize> {
    let subset: BTreeSet<usize> = class_subset.iter().copied().collect();
    let mut hist = BTreeMap::new();
    for ex in examples {
        let count = ex.labels.iter().filter(|l| subset.contains(l)).count();
        *hist.entry(count).or_insert(0) += 1;
    }
    hist
}

/// Histogram of examples by number of positive targets (same shape as
/// [`labels_histogram`] but computed from multi-hot view targets).
pub fn targets_histogram(examples: &[PhaseExample]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for ex in examples {
        let count = ex.targets.as_slice().iter().filter(|&&t| t > 0.5).count();
        *hist.entry(count).or_insert(0) += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_classes: 6,
            feature_dim: 8,
            clips_per_class: 20,
            zipf_exponent: 1.0,
            max_labels: 3,
            noise_sigma: 0.1,
            cooccur_temperature: 0.5,
            seed: 17,
        }
    }

    #[test]
    fn same_seed_gives_identical_dataset() {
        let a = gen_synthetic(&small_cfg()).unwrap();
        let b = gen_synthetic(&small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_single_label_clip_equals_prototype() {
        let cfg = SynthConfig {
            max_labels: 1,
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let data = gen_synthetic(&cfg).unwrap();
        // All clips of one class share the exact prototype vector.
        for class in 0..cfg.n_classes {
            let clips: Vec<&Example> = data
                .examples
                .iter()
                .filter(|e| e.labels.contains(&class))
                .collect();
            assert!(!clips.is_empty());
            for c in &clips {
                assert_eq!(c.labels.len(), 1);
                assert_eq!(c.x, clips[0].x);
            }
            let norm = clips[0].x.norm();
            assert!((norm - 1.0).abs() < 1e-12, "prototype norm {norm}");
        }
    }

    #[test]
    fn zipf_quota_ratio_matches_exponent() {
        let cfg = SynthConfig {
            n_classes: 10,
            clips_per_class: 100,
            zipf_exponent: 1.0,
            max_labels: 1, // quotas only, no co-occurrence noise
            ..small_cfg()
        };
        let data = gen_synthetic(&cfg).unwrap();
        let count = |class: usize| {
            data.examples
                .iter()
                .filter(|e| e.labels.contains(&class))
                .count()
        };
        assert_eq!(count(0), 100);
        assert_eq!(count(9), 10);
        assert_eq!(count(0) / count(9), 10);
    }

    #[test]
    fn infeasible_max_labels_is_rejected() {
        let cfg = SynthConfig {
            max_labels: 7,
            ..small_cfg()
        };
        assert!(gen_synthetic(&cfg).unwrap_err().is_validation());
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let data = gen_synthetic(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.cil");
        save_dataset(&data, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn row_with_wrong_dim_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cil");
        std::fs::write(
            &path,
            "#cil-dataset v1 dim=3 classes=2\nclip_a,1.0;2.0;3.0,0\nclip_b,1.0;2.0,1\n",
        )
        .unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("2 features"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_label_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cil");
        std::fs::write(&path, "#cil-dataset v1 dim=2 classes=2\nclip_a,1.0;2.0,\n").unwrap();
        assert!(matches!(
            load_dataset(&path).unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn plan_random_is_disjoint_and_stable() {
        let plan = PhasePlan::random(10, 4, 2, 3, 5).unwrap();
        assert_eq!(plan.n_phases(), 4);
        assert_eq!(plan.classes_so_far(3).len(), 10);
        let again = PhasePlan::random(10, 4, 2, 3, 5).unwrap();
        assert_eq!(plan, again);

        let mut all: Vec<usize> = plan.classes_so_far(3);
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn plan_overflow_is_rejected() {
        assert!(PhasePlan::random(9, 4, 2, 3, 5).unwrap_err().is_validation());
    }

    #[test]
    fn cross_phase_clip_gets_restricted_targets() {
        // Hand-built dataset: clip 0 carries one phase-0 and one phase-1
        // class; each view sees only its own class.
        let data = Dataset {
            examples: vec![
                Example {
                    clip_id: "both".into(),
                    x: Vector::new(vec![1.0, 0.0]),
                    labels: [0usize, 2].into_iter().collect(),
                },
                Example {
                    clip_id: "only0".into(),
                    x: Vector::new(vec![0.0, 1.0]),
                    labels: [1usize].into_iter().collect(),
                },
                Example {
                    clip_id: "only1".into(),
                    x: Vector::new(vec![1.0, 1.0]),
                    labels: [3usize].into_iter().collect(),
                },
            ],
            feature_dim: 2,
            n_classes: 4,
        };
        let plan = PhasePlan::new(vec![vec![0, 1], vec![2, 3]]).unwrap();

        let v0 = phase_view(&data, &plan, 0).unwrap();
        assert_eq!(v0.len(), 2);
        let both0 = v0.examples.iter().find(|e| e.clip_id == "both").unwrap();
        assert_eq!(both0.targets.as_slice(), &[1.0, 0.0]);

        let v1 = phase_view(&data, &plan, 1).unwrap();
        let both1 = v1.examples.iter().find(|e| e.clip_id == "both").unwrap();
        assert_eq!(both1.targets.as_slice(), &[1.0, 0.0]); // class 2 only

        // Whole-dataset view when one phase holds every class.
        let whole = PhasePlan::new(vec![vec![0, 1, 2, 3]]).unwrap();
        assert_eq!(phase_view(&data, &whole, 0).unwrap().len(), 3);

        // A phase whose classes have no clips errors out.
        let data2 = Dataset {
            n_classes: 5,
            ..data.clone()
        };
        let plan2 = PhasePlan::new(vec![vec![0, 1], vec![4]]).unwrap();
        assert!(phase_view(&data2, &plan2, 1).unwrap_err().is_validation());
    }

    #[test]
    fn view_targets_never_leak_other_phases() {
        let data = gen_synthetic(&small_cfg()).unwrap();
        let plan = PhasePlan::random(6, 2, 2, 2, 3).unwrap();
        let by_id: BTreeMap<&str, &BTreeSet<usize>> = data
            .examples
            .iter()
            .map(|e| (e.clip_id.as_str(), &e.labels))
            .collect();
        for phase in 0..plan.n_phases() {
            let view = phase_view(&data, &plan, phase).unwrap();
            for ex in &view.examples {
                let labels = by_id[ex.clip_id.as_str()];
                for (i, &c) in view.target_classes.iter().enumerate() {
                    assert_eq!(ex.targets[i] > 0.0, labels.contains(&c));
                }
                assert!(ex.targets.as_slice().iter().any(|&t| t > 0.0));
            }
        }
    }

    #[test]
    fn eval_view_expands_and_excludes_future_classes() {
        let data = gen_synthetic(&small_cfg()).unwrap();
        let plan = PhasePlan::random(6, 2, 2, 2, 3).unwrap();

        let e0 = eval_view(&data, &plan, 0).unwrap();
        assert_eq!(e0.target_classes, plan.phase_classes(0));

        let last = eval_view(&data, &plan, 2).unwrap();
        assert_eq!(last.target_classes.len(), 6);
        assert_eq!(last.len(), data.examples.len());
    }

    #[test]
    fn eval_histogram_grows_with_phases() {
        let data = gen_synthetic(&small_cfg()).unwrap();
        let plan = PhasePlan::random(6, 2, 2, 2, 3).unwrap();
        let mean = |view: &PhaseDataset| {
            let hist = targets_histogram(&view.examples);
            let total: usize = hist.iter().map(|(k, v)| k * v).sum();
            let n: usize = hist.values().sum();
            total as f64 / n as f64
        };
        let first = mean(&eval_view(&data, &plan, 0).unwrap());
        let last = mean(&eval_view(&data, &plan, 2).unwrap());
        assert!(
            last > first,
            "labels per clip should grow: phase0 {first:.3} vs final {last:.3}"
        );
    }

    #[test]
    fn deduped_views_are_disjoint() {
        let data = gen_synthetic(&small_cfg()).unwrap();
        let plan = PhasePlan::random(6, 2, 2, 2, 3).unwrap();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for phase in 0..plan.n_phases() {
            let view = phase_view_deduped(&data, &plan, phase).unwrap();
            for ex in view.examples {
                assert!(seen.insert(ex.clip_id.clone()), "{} repeated", ex.clip_id);
            }
        }
        // And the raw views do overlap on this config.
        assert!(phase_overlap_fraction(&data, &plan).unwrap() > 0.0);
    }

    #[test]
    fn balanced_two_class_batches() {
        let data = gen_synthetic(&small_cfg()).unwrap();
        let plan = PhasePlan::new(vec![vec![0, 1]]).unwrap();
        let view = phase_view(&data, &plan, 0).unwrap();
        let mut sampler = BalancedSampler::new(&view, 4, 9).unwrap();
        for _ in 0..50 {
            let batch = sampler.next_batch();
            let per_class = |class_pos: usize| {
                batch
                    .iter()
                    .filter(|&&i| view.examples[i].targets[class_pos] > 0.0)
                    .count()
            };
            // Slots alternate classes; clips may contain both, so count by
            // the slot's own class membership: each class must have at
            // least its 2 dedicated slots.
            assert!(per_class(0) >= 2);
            assert!(per_class(1) >= 2);
        }
    }

    #[test]
    fn single_class_sampler_walks_whole_pool_each_cycle() {
        let data = gen_synthetic(&small_cfg()).unwrap();
        let plan = PhasePlan::new(vec![vec![2]]).unwrap();
        let view = phase_view(&data, &plan, 0).unwrap();
        let n = view.len();
        let mut sampler = BalancedSampler::new(&view, 1, 4).unwrap();
        let mut seen: Vec<usize> = (0..n).map(|_| sampler.next_batch()[0]).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), n, "one cycle must visit every clip once");
    }

    #[test]
    fn imbalanced_view_draws_equally() {
        // 90/10 imbalance, 1000 slots → 500 draws per class.
        let mut examples = Vec::new();
        for i in 0..90 {
            examples.push(PhaseExample {
                clip_id: format!("a{i}"),
                x: Vector::new(vec![0.0]),
                targets: Vector::new(vec![1.0, 0.0]),
            });
        }
        for i in 0..10 {
            examples.push(PhaseExample {
                clip_id: format!("b{i}"),
                x: Vector::new(vec![0.0]),
                targets: Vector::new(vec![0.0, 1.0]),
            });
        }
        let view = PhaseDataset {
            examples,
            target_classes: vec![0, 1],
        };
        let mut sampler = BalancedSampler::new(&view, 1, 7).unwrap();
        let mut draws = [0usize; 2];
        for slot in 0..1000 {
            let idx = sampler.next_batch()[0];
            let class = if view.examples[idx].targets[0] > 0.0 { 0 } else { 1 };
            // Round-robin: even slots are class 0, odd slots class 1.
            assert_eq!(class, slot % 2);
            draws[class] += 1;
        }
        assert_eq!(draws, [500, 500]);
    }

    #[test]
    fn histogram_counts_subset_labels() {
        let data = gen_synthetic(&SynthConfig {
            max_labels: 1,
            ..small_cfg()
        })
        .unwrap();
        let hist = labels_histogram(&data.examples, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(hist.len(), 1);
        assert_eq!(hist[&1], data.examples.len());

        let ex = Example {
            clip_id: "x".into(),
            x: Vector::zeros(1),
            labels: [0usize, 2, 4, 5].into_iter().collect(),
        };
        let hist = labels_histogram(&[ex], &[0, 2, 4]);
        assert_eq!(hist[&3], 1);
    }

    proptest! {
        #[test]
        fn sampler_prefix_counts_differ_by_at_most_one(
            n_classes in 2usize..5,
            seed in 0u64..500,
            prefix in 1usize..120,
        ) {
            let mut examples = Vec::new();
            for c in 0..n_classes {
                for i in 0..(3 + 5 * c) {
                    let mut t = vec![0.0; n_classes];
                    t[c] = 1.0;
                    examples.push(PhaseExample {
                        clip_id: format!("c{c}_{i}"),
                        x: Vector::new(vec![0.0]),
                        targets: Vector::new(t),
                    });
                }
            }
            let view = PhaseDataset { examples, target_classes: (0..n_classes).collect() };
            let mut sampler = BalancedSampler::new(&view, 1, seed).unwrap();
            let mut counts = vec![0usize; n_classes];
            for slot in 0..prefix {
                let _ = sampler.next_batch();
                counts[slot % n_classes] += 1;
            }
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
