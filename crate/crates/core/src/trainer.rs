//! Phase orchestration: strategy recipes, the per-phase optimization loop,
//! and the full incremental run with expanding evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{eval_view, phase_view, targets_histogram, BalancedSampler, Dataset, PhaseDataset, PhasePlan};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::losses::{
    adaptive_lambda, sigmoid, total_loss, DistillConfig, LossBreakdown, LossFlags,
};
use crate::metrics::{
    average_over_phases, forgetting, macro_f1, mean_average_precision, PhaseReport, RunSummary,
};
use crate::model::{
    expand_classifier, freeze, weight_norms, ExtractorConfig, FrozenTeacher, LearnerState,
};
use crate::optim::{cosine_lr, sgd_momentum_step};
use crate::rng::{derive_seed, stream};

/// Training recipe. The incremental strategies differ only in which loss
/// terms run and what gets frozen; `At` retrains from scratch each phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Fine-tuning: new classes only, no forgetting mitigation.
    #[serde(rename = "ft")]
    Ft,
    /// Feature extraction: extractor and old-class entries frozen after
    /// the base phase.
    #[serde(rename = "fe")]
    Fe,
    /// Non-incremental upper bound: fresh learner on all classes so far.
    #[serde(rename = "at")]
    At,
    /// Masked classification loss alone.
    #[serde(rename = "indl")]
    IndlOnly,
    /// Output distillation alone (classification loss over all logits).
    #[serde(rename = "od")]
    OdOnly,
    /// Masked classification + output distillation.
    #[serde(rename = "iod")]
    Iod,
    /// Masked classification + feature distillation.
    #[serde(rename = "ifd")]
    Ifd,
    /// Masked classification + both distillation terms.
    #[serde(rename = "iodfd")]
    Iodfd,
}

/// Flag view of a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyKnobs {
    pub indl_mask: bool,
    pub use_od: bool,
    pub use_fd: bool,
    pub freeze_extractor: bool,
    pub freeze_old_classifier: bool,
    pub retrain_from_scratch: bool,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Ft,
        Strategy::Fe,
        Strategy::At,
        Strategy::IndlOnly,
        Strategy::OdOnly,
        Strategy::Iod,
        Strategy::Ifd,
        Strategy::Iodfd,
    ];

    pub fn knobs(&self) -> StrategyKnobs {
        let f = |indl, od, fd, fx, fc, scratch| StrategyKnobs {
            indl_mask: indl,
            use_od: od,
            use_fd: fd,
            freeze_extractor: fx,
            freeze_old_classifier: fc,
            retrain_from_scratch: scratch,
        };
        match self {
            Strategy::Ft => f(false, false, false, false, false, false),
            Strategy::Fe => f(true, false, false, true, true, false),
            Strategy::At => f(false, false, false, false, false, true),
            Strategy::IndlOnly => f(true, false, false, false, false, false),
            Strategy::OdOnly => f(false, true, false, false, false, false),
            Strategy::Iod => f(true, true, false, false, false, false),
            Strategy::Ifd => f(true, false, true, false, false, false),
            Strategy::Iodfd => f(true, true, true, false, false, false),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ft => "ft",
            Strategy::Fe => "fe",
            Strategy::At => "at",
            Strategy::IndlOnly => "indl",
            Strategy::OdOnly => "od",
            Strategy::Iod => "iod",
            Strategy::Ifd => "ifd",
            Strategy::Iodfd => "iodfd",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .iter()
            .find(|st| st.name() == s.to_lowercase())
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?} (expected one of ft, fe, at, indl, od, iod, ifd, iodfd)"
                ))
            })
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Extractor architecture plus classifier-unit initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Half-width of the uniform init for new classifier weights.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            embedding_dim: 32,
            init_scale: 0.01,
        }
    }
}

/// Full training configuration. Defaults mirror the reference protocol
/// (120 epochs, batch 32, momentum 0.9, LRs 0.01/0.001, Ω=Δ=2,
/// threshold 0.5); everything is overridable for desk-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Base-phase learning rate (also used by from-scratch training).
    pub lr_initial: f64,
    /// Incremental-phase learning rate.
    pub lr_incremental: f64,
    pub distill: DistillConfig,
    /// Positive-prediction threshold for F1.
    pub threshold: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 32,
            momentum: 0.9,
            lr_initial: 0.01,
            lr_incremental: 0.001,
            distill: DistillConfig::default(),
            threshold: 0.5,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_initial <= 0.0 || self.lr_incremental <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must be in [0, 1]".into()));
        }
        if self.model.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        self.distill.validate()
    }
}

/// Results of one strategy over the whole phase sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub phases: Vec<PhaseReport>,
    pub summary: RunSummary,
}

/// Runs one phase of optimization in place: `epochs` passes of balanced
/// batches through the strategy's loss, SGD-with-momentum updates under a
/// cosine schedule, honoring the strategy's freeze flags. Momentum starts
/// from zero (each phase is a fresh optimization run). Returns the
/// per-batch loss log.
pub fn train_phase(
    learner: &mut LearnerState,
    teacher: Option<&FrozenTeacher>,
    view: &PhaseDataset,
    cfg: &TrainConfig,
    strategy: Strategy,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    if view.is_empty() {
        return Err(Error::Config("train_phase: empty training view".into()));
    }
    let knobs = strategy.knobs();
    let flags = LossFlags {
        indl_mask: knobs.indl_mask,
        use_od: knobs.use_od,
        use_fd: knobs.use_fd,
    };

    // Targets padded to full logit length: view targets cover either the
    // new-class block or all classes.
    let n_classes = learner.class_count();
    let full_targets: Vec<Vector> = if view.target_classes.len() == n_classes {
        view.examples.iter().map(|e| e.targets.clone()).collect()
    } else if view.target_classes.len() == learner.new_class_count {
        view.examples
            .iter()
            .map(|e| {
                let mut y = vec![0.0; learner.old_class_count];
                y.extend_from_slice(e.targets.as_slice());
                Vector::new(y)
            })
            .collect()
    } else {
        return Err(Error::Config(format!(
            "train_phase: view covers {} classes, learner has {} new of {} total",
            view.target_classes.len(),
            learner.new_class_count,
            n_classes
        )));
    };

    let lr0 = if learner.phase_index == 0 || knobs.retrain_from_scratch {
        cfg.lr_initial
    } else {
        cfg.lr_incremental
    };
    let freeze_extractor = knobs.freeze_extractor && learner.phase_index >= 1;
    let frozen = learner.frozen_param_mask(freeze_extractor);

    let mut sampler = BalancedSampler::new(
        view,
        cfg.batch_size,
        derive_seed(cfg.seed, learner.phase_index as u64, stream::SAMPLER),
    )?;
    let steps_per_epoch = view.len().div_ceil(cfg.batch_size);

    let mut velocity = vec![0.0; learner.param_len()];
    let mut log = Vec::with_capacity(cfg.epochs * steps_per_epoch);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, lr0)?;
        for step in 0..steps_per_epoch {
            let batch = sampler.next_batch();
            let xs: Vec<&Vector> = batch.iter().map(|&i| &view.examples[i].x).collect();
            let ys: Vec<&Vector> = batch.iter().map(|&i| &full_targets[i]).collect();

            let out = total_loss(learner, teacher, &xs, &ys, &cfg.distill, flags)?;
            for (component, value) in [
                ("bce", out.breakdown.bce),
                ("od", out.breakdown.od),
                ("fd", out.breakdown.fd),
                ("total", out.breakdown.total),
            ] {
                if !value.is_finite() {
                    return Err(Error::Training {
                        phase: learner.phase_index,
                        epoch,
                        batch: step,
                        component: component.into(),
                    });
                }
            }

            let mut grads = out.grads;
            for (g, &is_frozen) in grads.iter_mut().zip(&frozen) {
                if is_frozen {
                    *g = 0.0;
                }
            }
            let params = learner.param_vector();
            let (new_params, new_velocity) =
                sgd_momentum_step(&params, &grads, &velocity, lr, cfg.momentum)?;
            velocity = new_velocity;
            learner.set_param_vector(&new_params)?;
            log.push(out.breakdown);
        }
        if let Some(last) = log.last() {
            log::debug!(
                "phase {} epoch {epoch}: lr {lr:.5} total {:.5} (bce {:.5} od {:.5} fd {:.5})",
                learner.phase_index,
                last.total,
                last.bce,
                last.od,
                last.fd
            );
        }
    }
    Ok(log)
}

/// Sigmoid scores and targets for every example of an evaluation view.
fn score_view(learner: &LearnerState, view: &PhaseDataset) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if view.target_classes.len() != learner.class_count() {
        return Err(Error::Config(format!(
            "evaluate: view covers {} classes, learner has {}",
            view.target_classes.len(),
            learner.class_count()
        )));
    }
    let mut scores = Vec::with_capacity(view.len());
    let mut targets = Vec::with_capacity(view.len());
    for ex in &view.examples {
        let (_, logits) = learner.forward(&ex.x)?;
        scores.push(logits.as_slice().iter().map(|&o| sigmoid(o)).collect());
        targets.push(ex.targets.as_slice().to_vec());
    }
    Ok((scores, targets))
}

fn evaluate_phase(
    learner: &LearnerState,
    dataset: &Dataset,
    plan: &PhasePlan,
    phase: usize,
    cfg: &TrainConfig,
    lambda: Option<f64>,
    non_incremental: bool,
    base_report: Option<&PhaseReport>,
) -> Result<PhaseReport> {
    let view = eval_view(dataset, plan, phase)?;
    let (scores, targets) = score_view(learner, &view)?;
    let (per_class_f1, macro_avg) = macro_f1(&scores, &targets, cfg.threshold)?;
    let (per_class_ap, map) = mean_average_precision(&scores, &targets)?;

    let mut report = PhaseReport {
        phase,
        classes: view.target_classes.clone(),
        per_class_f1,
        macro_f1: macro_avg,
        per_class_ap,
        map,
        fr: None,
        lambda,
        weight_norms: weight_norms(&learner.classifier),
        labels_hist: targets_histogram(&view.examples),
        non_incremental,
    };
    if let Some(base) = base_report {
        report.fr = Some(forgetting(base, &report, plan.phase_classes(0))?);
    }
    Ok(report)
}

fn extractor_config(dataset: &Dataset, model: &ModelConfig) -> ExtractorConfig {
    ExtractorConfig::new(dataset.feature_dim, model.hidden.clone(), model.embedding_dim)
}

fn fresh_learner(
    dataset: &Dataset,
    cfg: &TrainConfig,
    n_classes: usize,
    phase: usize,
) -> Result<LearnerState> {
    LearnerState::fresh(
        &extractor_config(dataset, &cfg.model),
        n_classes,
        cfg.model.init_scale,
        derive_seed(cfg.seed, phase as u64, stream::EXTRACTOR_INIT),
        derive_seed(cfg.seed, phase as u64, stream::CLASSIFIER_INIT),
    )
}

/// Trains the base phase only, returning the learner and its report.
/// Incremental strategies can share this state (and do, under
/// [`run_cil_with_base`]) since base-phase training is strategy-independent.
pub fn train_base_phase(
    dataset: &Dataset,
    plan: &PhasePlan,
    cfg: &TrainConfig,
) -> Result<(LearnerState, PhaseReport)> {
    validate_plan(dataset, plan)?;
    let mut learner = fresh_learner(dataset, cfg, plan.phase_classes(0).len(), 0)?;
    let view = phase_view(dataset, plan, 0)?;
    train_phase(&mut learner, None, &view, cfg, Strategy::Iodfd)?;
    let report = evaluate_phase(&learner, dataset, plan, 0, cfg, None, false, None)?;
    Ok((learner, report))
}

/// Runs the full class-incremental sequence for one strategy.
pub fn run_cil(
    dataset: &Dataset,
    plan: &PhasePlan,
    strategy: Strategy,
    cfg: &TrainConfig,
) -> Result<RunReport> {
    run_cil_with_base(dataset, plan, strategy, cfg, None)
}

/// Like [`run_cil`], reusing a pre-trained base-phase learner and report
/// (from [`train_base_phase`] with identical dataset/plan/config).
/// From-scratch strategies ignore the base.
pub fn run_cil_with_base(
    dataset: &Dataset,
    plan: &PhasePlan,
    strategy: Strategy,
    cfg: &TrainConfig,
    base: Option<(LearnerState, PhaseReport)>,
) -> Result<RunReport> {
    validate_plan(dataset, plan)?;
    cfg.validate()?;
    let knobs = strategy.knobs();

    let mut reports: Vec<PhaseReport> = Vec::with_capacity(plan.n_phases());
    let mut learner: Option<LearnerState> = None;

    for phase in 0..plan.n_phases() {
        let with_phase = |e: Error| match e {
            Error::Config(msg) => Error::Config(format!("phase {phase}: {msg}")),
            other => other,
        };

        if knobs.retrain_from_scratch {
            // From-scratch training on every clip of the classes seen so
            // far; evaluation data and training data coincide by protocol.
            let classes = plan.classes_so_far(phase);
            let mut fresh = fresh_learner(dataset, cfg, classes.len(), phase)?;
            fresh.phase_index = phase;
            let view = eval_view(dataset, plan, phase)?;
            train_phase(&mut fresh, None, &view, cfg, strategy).map_err(with_phase)?;
            learner = Some(fresh);
        } else if phase == 0 {
            match base {
                Some((ref base_learner, ref base_report)) => {
                    learner = Some(base_learner.clone());
                    reports.push(base_report.clone());
                    continue;
                }
                None => {
                    let mut fresh = fresh_learner(dataset, cfg, plan.phase_classes(0).len(), 0)?;
                    let view = phase_view(dataset, plan, 0)?;
                    train_phase(&mut fresh, None, &view, cfg, strategy).map_err(with_phase)?;
                    learner = Some(fresh);
                }
            }
        } else {
            let mut current = learner.take().expect("phase 0 ran first");
            let teacher = freeze(&current);

            let n_new = plan.phase_classes(phase).len();
            current.old_class_count = current.class_count();
            current.classifier = expand_classifier(
                &current.classifier,
                n_new,
                cfg.model.init_scale,
                derive_seed(cfg.seed, phase as u64, stream::CLASSIFIER_INIT),
            )?;
            if knobs.freeze_old_classifier {
                current.classifier.freeze_classes(current.old_class_count);
            }
            current.new_class_count = n_new;
            current.phase_index = phase;

            let view = phase_view(dataset, plan, phase)?;
            let teacher_ref = (knobs.use_od || knobs.use_fd).then_some(&teacher);
            train_phase(&mut current, teacher_ref, &view, cfg, strategy).map_err(with_phase)?;
            learner = Some(current);
        }

        let current = learner.as_ref().expect("set above");
        let lambda = if knobs.use_od && phase >= 1 {
            Some(adaptive_lambda(
                current.class_count(),
                plan.phase_classes(phase).len(),
                cfg.distill.omega,
            )?)
        } else {
            None
        };
        let report = evaluate_phase(
            current,
            dataset,
            plan,
            phase,
            cfg,
            lambda,
            knobs.retrain_from_scratch,
            reports.first().filter(|_| phase >= 1),
        )
        .map_err(with_phase)?;
        reports.push(report);
    }

    let summary = average_over_phases(&reports)?;
    Ok(RunReport {
        strategy: strategy.name().to_string(),
        phases: reports,
        summary,
    })
}

fn validate_plan(dataset: &Dataset, plan: &PhasePlan) -> Result<()> {
    for phase in 0..plan.n_phases() {
        for &c in plan.phase_classes(phase) {
            if c >= dataset.n_classes {
                return Err(Error::Config(format!(
                    "plan references class {c}, dataset has {} classes",
                    dataset.n_classes
                )));
            }
        }
    }
    Ok(())
}

/// The per-phase distillation weight the combined loss would use:
/// `λ_i = Ω √(|classes so far| / |new classes at phase i|)` for each
/// incremental phase.
pub fn measure_lambda_schedule(plan: &PhasePlan, omega: f64) -> Result<Vec<f64>> {
    if plan.n_phases() < 2 {
        return Err(Error::Config("lambda schedule needs at least 2 phases".into()));
    }
    (1..plan.n_phases())
        .map(|i| {
            adaptive_lambda(
                plan.classes_so_far(i).len(),
                plan.phase_classes(i).len(),
                omega,
            )
        })
        .collect()
}
