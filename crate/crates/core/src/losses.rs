//! Training objective: masked binary cross-entropy over new-class logits,
//! KL output distillation with value rescaling, cosine feature
//! distillation, and their adaptively weighted combination.
//!
//! Every loss ships with an exact analytic gradient; agreement with
//! central finite differences is enforced by the checks in
//! [`crate::checks`]. Teacher quantities are constants — no gradient ever
//! flows into the frozen teacher.
//!
//! Scalar loss functions here are per-example; [`total_loss`] reduces by
//! mean over the batch so the combination weight keeps its meaning at any
//! batch size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{classify, extract_cached, FrozenTeacher, LearnerState};

/// Knobs of the distillation terms: `delta` is the rescale exponent
/// denominator (≥ 1, larger up-weights small values), `omega` scales the
/// adaptive combination weight, `eps` floors logs and the rescale base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub delta: f64,
    pub omega: f64,
    pub eps: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            delta: 2.0,
            omega: 2.0,
            eps: 1e-8,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta < 1.0 {
            return Err(Error::Config(format!("delta must be >= 1, got {}", self.delta)));
        }
        if self.omega <= 0.0 {
            return Err(Error::Config(format!("omega must be positive, got {}", self.omega)));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Which loss terms a strategy enables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossFlags {
    /// Restrict the classification loss to new-class logits.
    pub indl_mask: bool,
    /// Output-distillation (KL) term.
    pub use_od: bool,
    /// Feature-distillation (cosine) term.
    pub use_fd: bool,
}

/// Per-batch loss components. The invariant `total = bce + fd + lambda·od`
/// holds exactly: `total` is computed from the reduced components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub od: f64,
    pub fd: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy over logits `[old_count, |C|)` only; entries below
/// `old_count` contribute nothing (and may hold anything). Computed in the
/// stable form `softplus(o) − o·y`, whose gradient is `σ(o) − y`.
pub fn bce_indl(logits: &Vector, targets: &Vector, old_count: usize) -> Result<f64> {
    validate_bce_inputs(logits, targets, old_count)?;
    let mut loss = 0.0;
    for k in old_count..logits.len() {
        loss += softplus(logits[k]) - logits[k] * targets[k];
    }
    Ok(loss)
}

fn validate_bce_inputs(logits: &Vector, targets: &Vector, old_count: usize) -> Result<()> {
    if logits.len() != targets.len() {
        return Err(Error::Config(format!(
            "bce_indl: logits ({}) and targets ({}) differ in length",
            logits.len(),
            targets.len()
        )));
    }
    if old_count >= logits.len() {
        return Err(Error::Config(format!(
            "bce_indl: old_count {} leaves no logits out of {}",
            old_count,
            logits.len()
        )));
    }
    if targets.as_slice().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Config("bce_indl: targets must be 0/1".into()));
    }
    Ok(())
}

/// Rescales a non-negative vector into a probability vector:
/// `(u_i + eps)^{1/delta} / Σ_j (u_j + eps)^{1/delta}`.
///
/// `delta > 1` compresses the ratio between large and small entries,
/// up-weighting the small ones.
pub fn rescale_pi(u: &[f64], delta: f64, eps: f64) -> Result<Vec<f64>> {
    if u.is_empty() {
        return Err(Error::Config("rescale_pi: empty input".into()));
    }
    if delta < 1.0 {
        return Err(Error::Config(format!("rescale_pi: delta must be >= 1, got {delta}")));
    }
    if u.iter().any(|&x| x < 0.0) {
        return Err(Error::Config("rescale_pi: inputs must be non-negative".into()));
    }
    if u.iter().all(|&x| x <= eps) {
        return Err(Error::DegenerateInput(
            "rescale_pi: all inputs at or below eps".into(),
        ));
    }
    let powed: Vec<f64> = u.iter().map(|&x| (x + eps).powf(1.0 / delta)).collect();
    let sum: f64 = powed.iter().sum();
    Ok(powed.into_iter().map(|p| p / sum).collect())
}

/// Output-discrepancy loss for one example: KL divergence between the
/// rescaled sigmoid outputs of teacher and student on the old classes,
/// `Σ p_i ln(p_i / q_i)` with `p` from the teacher. Empty inputs (no old
/// classes yet) return 0 by contract.
pub fn od_loss(teacher_old: &[f64], student_old: &[f64], cfg: &DistillConfig) -> Result<f64> {
    Ok(od_value_grad(teacher_old, student_old, cfg, false)?.0)
}

/// Shared forward/backward for the OD term. When `with_grad` is set the
/// second element holds `∂od/∂student_old`.
fn od_value_grad(
    teacher_old: &[f64],
    student_old: &[f64],
    cfg: &DistillConfig,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if teacher_old.len() != student_old.len() {
        return Err(Error::Config(format!(
            "od_loss: teacher ({}) and student ({}) logits differ in length",
            teacher_old.len(),
            student_old.len()
        )));
    }
    if teacher_old.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    cfg.validate()?;

    let s_teacher: Vec<f64> = teacher_old.iter().map(|&o| sigmoid(o)).collect();
    let s_student: Vec<f64> = student_old.iter().map(|&o| sigmoid(o)).collect();
    let p = rescale_pi(&s_teacher, cfg.delta, cfg.eps)?;
    let q = rescale_pi(&s_student, cfg.delta, cfg.eps)?;

    let mut kl = 0.0;
    for i in 0..p.len() {
        kl += p[i] * (p[i].ln() - q[i].ln());
    }

    let mut grad = Vec::new();
    if with_grad {
        // With a_j = (s_j + eps)^{1/delta} and S = Σ a_j:
        //   ∂kl/∂a_j = (1 − p_j/q_j) / S
        //   ∂a_j/∂s_j = (1/delta) (s_j + eps)^{1/delta − 1}
        //   ∂s_j/∂o_j = s_j (1 − s_j)
        let sum_a: f64 = s_student
            .iter()
            .map(|&s| (s + cfg.eps).powf(1.0 / cfg.delta))
            .sum();
        grad = (0..q.len())
            .map(|j| {
                let s = s_student[j];
                let da = (s + cfg.eps).powf(1.0 / cfg.delta - 1.0) / cfg.delta;
                (1.0 - p[j] / q[j]) / sum_a * da * s * (1.0 - s)
            })
            .collect();
    }
    Ok((kl, grad))
}

/// Feature-discrepancy loss for one example:
/// `1 − (v̂·v) / (‖v̂‖ ‖v‖)` over teacher features `v̂` and student
/// features `v`. Range `[0, 2]`; zero-norm inputs are rejected.
pub fn fd_loss(teacher_v: &Vector, student_v: &Vector, eps: f64) -> Result<f64> {
    Ok(fd_value_grad(teacher_v, student_v, eps, false)?.0)
}

fn fd_value_grad(
    teacher_v: &Vector,
    student_v: &Vector,
    eps: f64,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if teacher_v.len() != student_v.len() {
        return Err(Error::Config(format!(
            "fd_loss: teacher ({}) and student ({}) features differ in length",
            teacher_v.len(),
            student_v.len()
        )));
    }
    let nt = teacher_v.norm();
    let ns = student_v.norm();
    if nt <= eps || ns <= eps {
        return Err(Error::DegenerateInput(format!(
            "fd_loss: zero-norm feature vector (teacher {nt:.3e}, student {ns:.3e})"
        )));
    }
    let cos = teacher_v.dot(student_v) / (nt * ns);
    let loss = 1.0 - cos;

    let mut grad = Vec::new();
    if with_grad {
        // ∂loss/∂v = (cos·n − û) / ‖v‖ with n = v/‖v‖, û = v̂/‖v̂‖.
        grad = (0..student_v.len())
            .map(|i| (cos * student_v[i] / ns - teacher_v[i] / nt) / ns)
            .collect();
    }
    Ok((loss, grad))
}

/// Adaptive distillation weight `omega · sqrt(total_classes / new_classes)`;
/// grows as classes accumulate, never below `omega`.
pub fn adaptive_lambda(total_classes: usize, new_classes: usize, omega: f64) -> Result<f64> {
    if new_classes == 0 {
        return Err(Error::Config("adaptive_lambda: new_classes must be at least 1".into()));
    }
    if total_classes < new_classes {
        return Err(Error::Config(format!(
            "adaptive_lambda: total_classes {total_classes} below new_classes {new_classes}"
        )));
    }
    Ok(omega * (total_classes as f64 / new_classes as f64).sqrt())
}

/// Loss components plus the gradient of `total` with respect to the flat
/// learner parameter vector (same layout as `LearnerState::param_vector`).
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub grads: Vec<f64>,
}

/// Combined objective over one mini-batch: `total = bce + fd + lambda·od`
/// with each component averaged over the batch. Disabled terms contribute
/// zero; at phase 0 (no old classes) the total is BCE only.
///
/// `ys` are full-length multi-hot targets (old-class entries zero for
/// phase data). `teacher` must be present exactly when a distillation term
/// is enabled at an incremental phase.
pub fn total_loss(
    learner: &LearnerState,
    teacher: Option<&FrozenTeacher>,
    xs: &[&Vector],
    ys: &[&Vector],
    cfg: &DistillConfig,
    flags: LossFlags,
) -> Result<LossOutput> {
    cfg.validate()?;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Config(format!(
            "total_loss: batch sizes disagree or empty ({} inputs, {} targets)",
            xs.len(),
            ys.len()
        )));
    }
    let n_classes = learner.class_count();
    let old = learner.old_class_count;
    let distill_wanted = flags.use_od || flags.use_fd;
    if distill_wanted && learner.phase_index >= 1 && teacher.is_none() {
        return Err(Error::Config(
            "total_loss: distillation enabled at an incremental phase but no teacher given".into(),
        ));
    }
    if teacher.is_some() && !(distill_wanted && learner.phase_index >= 1) {
        return Err(Error::Config(
            "total_loss: teacher given but no distillation term applies".into(),
        ));
    }
    if let Some(t) = teacher {
        if t.class_count() != old {
            return Err(Error::Config(format!(
                "total_loss: teacher has {} classes, learner expects {} old classes",
                t.class_count(),
                old
            )));
        }
    }

    let distill_active = teacher.is_some() && old > 0;
    let lambda = if flags.use_od && distill_active {
        adaptive_lambda(n_classes, learner.new_class_count, cfg.omega)?
    } else {
        0.0
    };
    let bce_from = if flags.indl_mask { old } else { 0 };

    // Structured gradient accumulators, flattened at the end in
    // param_vector order.
    let mut g_layers: Vec<(Matrix, Vector)> = learner
        .extractor
        .layers()
        .iter()
        .map(|l| {
            (
                Matrix::zeros(l.weight.rows(), l.weight.cols()),
                Vector::zeros(l.bias.len()),
            )
        })
        .collect();
    let mut g_classes: Vec<(Vector, f64)> = learner
        .classifier
        .entries()
        .iter()
        .map(|e| (Vector::zeros(e.weight.len()), 0.0))
        .collect();

    let mut bce_sum = 0.0;
    let mut od_sum = 0.0;
    let mut fd_sum = 0.0;

    for (x, y) in xs.iter().zip(ys) {
        let (pre, acts) = extract_cached(&learner.extractor, x)?;
        let v = acts.last().expect("at least one layer");
        let o = classify(&learner.classifier, v)?;
        validate_bce_inputs(&o, y, bce_from)?;

        // d(total)/d(logit), accumulated across terms.
        let mut d_o = vec![0.0; n_classes];
        for k in bce_from..n_classes {
            bce_sum += softplus(o[k]) - o[k] * y[k];
            d_o[k] += sigmoid(o[k]) - y[k];
        }

        let mut d_v = Vector::zeros(v.len());
        if distill_active {
            let teacher = teacher.expect("checked above");
            let (tv, to) = teacher.forward(x)?;
            if flags.use_od {
                let (od, d_old) =
                    od_value_grad(to.as_slice(), &o.as_slice()[..old], cfg, true)?;
                od_sum += od;
                for (k, g) in d_old.iter().enumerate() {
                    d_o[k] += lambda * g;
                }
            }
            if flags.use_fd {
                let (fd, d_feat) = fd_value_grad(&tv, v, cfg.eps, true)?;
                fd_sum += fd;
                for (i, g) in d_feat.iter().enumerate() {
                    d_v[i] += g;
                }
            }
        }

        // Classifier backward: ∂o_k/∂w_k = v, ∂o_k/∂b_k = 1, and the
        // embedding receives Σ_k d_o[k]·w_k.
        for (k, entry) in learner.classifier.entries().iter().enumerate() {
            let g = d_o[k];
            if g != 0.0 {
                g_classes[k].0.axpy(g, v);
                g_classes[k].1 += g;
                d_v.axpy(g, &entry.weight);
            }
        }

        // Extractor backward.
        let mut delta = d_v;
        for (l, layer) in learner.extractor.layers().iter().enumerate().rev() {
            let mut dz = delta;
            for (dzi, zi) in dz.as_mut_slice().iter_mut().zip(pre[l].as_slice()) {
                *dzi *= layer.activation.derivative(*zi);
            }
            let input = if l == 0 { x } else { &acts[l - 1] };
            let (gw, gb) = &mut g_layers[l];
            for r in 0..layer.weight.rows() {
                let dzr = dz[r];
                if dzr != 0.0 {
                    for c in 0..layer.weight.cols() {
                        gw.set(r, c, gw.get(r, c) + dzr * input[c]);
                    }
                }
            }
            gb.axpy(1.0, &dz);
            delta = layer.weight.tr_matvec(&dz);
        }
    }

    let n = xs.len() as f64;
    let bce = bce_sum / n;
    let od = od_sum / n;
    let fd = fd_sum / n;
    let total = bce + fd + lambda * od;

    let mut grads = Vec::with_capacity(learner.param_len());
    for (gw, gb) in &g_layers {
        grads.extend(gw.as_slice().iter().map(|g| g / n));
        grads.extend(gb.as_slice().iter().map(|g| g / n));
    }
    for (gw, gb) in &g_classes {
        grads.extend(gw.as_slice().iter().map(|g| g / n));
        grads.push(gb / n);
    }
    debug_assert_eq!(grads.len(), learner.param_len());

    Ok(LossOutput {
        breakdown: LossBreakdown {
            bce,
            od,
            fd,
            lambda,
            total,
        },
        grads,
    })
}
