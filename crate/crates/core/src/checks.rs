//! The gradient-check suite: every differentiable primitive and every loss
//! shipped by this crate, each validated at randomized points against
//! central finite differences.
//!
//! Vector-valued operations are probed with a fixed random linear
//! functional `c · f(p)` (analytic gradient `Jᵀ c`); input gradients are
//! covered by folding inputs into the checked parameter vector. The last
//! item drives the full combined objective on a small three-class learner,
//! checking every extractor and classifier coordinate at once.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::diff::{grad_check, ClosureFn, DifferentiableFn};
use crate::linalg::Vector;
use crate::losses::{
    bce_indl, fd_loss, od_loss, rescale_pi, sigmoid, total_loss, DistillConfig, LossFlags,
};
use crate::model::{expand_classifier, freeze, ExtractorConfig, LearnerState};
use crate::rng::{derive_seed, stream};

/// One named checkable function with its sampled evaluation points.
pub struct CheckItem {
    pub name: &'static str,
    pub fun: Box<dyn DifferentiableFn>,
    pub points: Vec<Vec<f64>>,
}

/// Result of running one item.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    /// Worst relative error across all points, when every evaluation was
    /// finite.
    pub worst_rel_err: Option<f64>,
    pub error: Option<String>,
    pub pass: bool,
}

/// Runs `grad_check` on every item at every point. An item passes when all
/// its points stay within `tolerance`.
pub fn run_grad_checks(items: &[CheckItem], epsilon: f64, tolerance: f64) -> Vec<CheckOutcome> {
    items
        .iter()
        .map(|item| {
            let mut worst = 0.0_f64;
            for point in &item.points {
                match grad_check(item.fun.as_ref(), point, epsilon) {
                    Ok(err) => worst = worst.max(err),
                    Err(e) => {
                        return CheckOutcome {
                            name: item.name.to_string(),
                            worst_rel_err: None,
                            error: Some(e.to_string()),
                            pass: false,
                        }
                    }
                }
            }
            CheckOutcome {
                name: item.name.to_string(),
                worst_rel_err: Some(worst),
                error: None,
                pass: worst < tolerance,
            }
        })
        .collect()
}

fn sample(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(lo..hi)).collect()
}

/// Points bounded away from 0 (for kinked or singular functions): random
/// sign, magnitude in `[0.2, 1.2)`.
fn sample_off_origin(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let mag = rng.random_range(0.2..1.2);
            if rng.random_range(0.0..1.0) < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect()
}

const N_POINTS: usize = 10;

/// Builds the full suite: six differentiable primitives, the rescaling
/// map, the three loss terms, and the combined objective on a toy
/// incremental learner.
pub fn standard_check_items(seed: u64) -> Vec<CheckItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, stream::GRADCHECK));
    let mut items = Vec::new();

    // Affine layer: params = [W (3×2, row-major) | b (3) | x (2)], probe c.
    {
        let (rows, cols) = (3, 2);
        let c: Vec<f64> = sample(&mut rng, rows, -1.0, 1.0);
        let dim = rows * cols + rows + cols;
        let points = (0..N_POINTS).map(|_| sample(&mut rng, dim, -1.5, 1.5)).collect();
        let eval_c = c.clone();
        items.push(CheckItem {
            name: "affine_layer",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| {
                    let (w, rest) = p.split_at(rows * cols);
                    let (b, x) = rest.split_at(rows);
                    (0..rows)
                        .map(|r| {
                            let row = &w[r * cols..(r + 1) * cols];
                            eval_c[r] * (row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b[r])
                        })
                        .sum()
                },
                move |p: &[f64]| {
                    let (w, rest) = p.split_at(rows * cols);
                    let (_b, x) = rest.split_at(rows);
                    let mut g = vec![0.0; p.len()];
                    for r in 0..rows {
                        for col in 0..cols {
                            g[r * cols + col] = c[r] * x[col];
                        }
                        g[rows * cols + r] = c[r];
                    }
                    for col in 0..cols {
                        g[rows * cols + rows + col] =
                            (0..rows).map(|r| c[r] * w[r * cols + col]).sum();
                    }
                    g
                },
            )),
            points,
        });
    }

    // ReLU, probed; points bounded away from the kink.
    {
        let dim = 6;
        let c: Vec<f64> = sample(&mut rng, dim, -1.0, 1.0);
        let points = (0..N_POINTS).map(|_| sample_off_origin(&mut rng, dim)).collect();
        let eval_c = c.clone();
        items.push(CheckItem {
            name: "relu",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| p.iter().zip(&eval_c).map(|(x, ci)| ci * x.max(0.0)).sum(),
                move |p: &[f64]| {
                    p.iter()
                        .zip(&c)
                        .map(|(x, ci)| if *x > 0.0 { *ci } else { 0.0 })
                        .collect()
                },
            )),
            points,
        });
    }

    // Sigmoid, probed.
    {
        let dim = 6;
        let c: Vec<f64> = sample(&mut rng, dim, -1.0, 1.0);
        let points = (0..N_POINTS).map(|_| sample(&mut rng, dim, -3.0, 3.0)).collect();
        let eval_c = c.clone();
        items.push(CheckItem {
            name: "sigmoid",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| p.iter().zip(&eval_c).map(|(x, ci)| ci * sigmoid(*x)).sum(),
                move |p: &[f64]| {
                    p.iter()
                        .zip(&c)
                        .map(|(x, ci)| {
                            let s = sigmoid(*x);
                            ci * s * (1.0 - s)
                        })
                        .collect()
                },
            )),
            points,
        });
    }

    // Natural log on a positive domain, probed.
    {
        let dim = 5;
        let c: Vec<f64> = sample(&mut rng, dim, -1.0, 1.0);
        let points = (0..N_POINTS).map(|_| sample(&mut rng, dim, 0.4, 2.5)).collect();
        let eval_c = c.clone();
        items.push(CheckItem {
            name: "log",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| p.iter().zip(&eval_c).map(|(x, ci)| ci * x.ln()).sum(),
                move |p: &[f64]| p.iter().zip(&c).map(|(x, ci)| ci / x).collect(),
            )),
            points,
        });
    }

    // L2 normalization, probed.
    {
        let dim = 5;
        let c: Vec<f64> = sample(&mut rng, dim, -1.0, 1.0);
        let points = (0..N_POINTS).map(|_| sample_off_origin(&mut rng, dim)).collect();
        let eval_c = c.clone();
        items.push(CheckItem {
            name: "l2_normalize",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| {
                    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                    p.iter().zip(&eval_c).map(|(x, ci)| ci * x / norm).sum()
                },
                move |p: &[f64]| {
                    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let cp: f64 = c.iter().zip(p).map(|(ci, x)| ci * x).sum();
                    p.iter()
                        .zip(&c)
                        .map(|(x, ci)| ci / norm - cp * x / norm.powi(3))
                        .collect()
                },
            )),
            points,
        });
    }

    // Dot product of the two halves of the parameter vector.
    {
        let half = 4;
        let points = (0..N_POINTS).map(|_| sample(&mut rng, 2 * half, -2.0, 2.0)).collect();
        items.push(CheckItem {
            name: "dot_product",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| {
                    let (a, b) = p.split_at(half);
                    a.iter().zip(b).map(|(x, y)| x * y).sum()
                },
                move |p: &[f64]| {
                    let (a, b) = p.split_at(half);
                    b.iter().chain(a.iter()).copied().collect()
                },
            )),
            points,
        });
    }

    // Rescaling map over positive inputs, probed.
    {
        let dim = 4;
        let cfg = DistillConfig::default();
        let c: Vec<f64> = sample(&mut rng, dim, -1.0, 1.0);
        let points = (0..N_POINTS).map(|_| sample(&mut rng, dim, 0.05, 1.0)).collect();
        let eval_c = c.clone();
        let eval_cfg = cfg;
        items.push(CheckItem {
            name: "rescale",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| {
                    let pi = rescale_pi(p, eval_cfg.delta, eval_cfg.eps).unwrap();
                    pi.iter().zip(&eval_c).map(|(x, ci)| ci * x).sum()
                },
                move |p: &[f64]| {
                    let pi = rescale_pi(p, cfg.delta, cfg.eps).unwrap();
                    let a_prime: Vec<f64> = p
                        .iter()
                        .map(|&x| (x + cfg.eps).powf(1.0 / cfg.delta - 1.0) / cfg.delta)
                        .collect();
                    let sum_a: f64 = p.iter().map(|&x| (x + cfg.eps).powf(1.0 / cfg.delta)).sum();
                    let c_dot_pi: f64 = c.iter().zip(&pi).map(|(ci, qi)| ci * qi).sum();
                    (0..p.len())
                        .map(|j| a_prime[j] * (c[j] - c_dot_pi) / sum_a)
                        .collect()
                },
            )),
            points,
        });
    }

    // Masked binary cross-entropy over the last 3 of 5 logits.
    {
        let dim = 5;
        let old = 2;
        let y: Vec<f64> = (0..dim).map(|_| f64::from(rng.random_range(0.0..1.0) < 0.5)).collect();
        let points = (0..N_POINTS).map(|_| sample(&mut rng, dim, -3.0, 3.0)).collect();
        let eval_y = y.clone();
        items.push(CheckItem {
            name: "loss_bce_masked",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| {
                    bce_indl(&Vector::new(p.to_vec()), &Vector::new(eval_y.clone()), old).unwrap()
                },
                move |p: &[f64]| {
                    let mut g = vec![0.0; p.len()];
                    for k in old..p.len() {
                        g[k] = sigmoid(p[k]) - y[k];
                    }
                    g
                },
            )),
            points,
        });
    }

    // Output distillation w.r.t. student logits (teacher fixed).
    {
        let dim = 4;
        let cfg = DistillConfig::default();
        let teacher: Vec<f64> = sample(&mut rng, dim, -2.0, 2.0);
        let points = (0..N_POINTS).map(|_| sample(&mut rng, dim, -2.5, 2.5)).collect();
        let eval_teacher = teacher.clone();
        items.push(CheckItem {
            name: "loss_od_kl",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| od_loss(&eval_teacher, p, &cfg).unwrap(),
                move |p: &[f64]| od_numeric_free_grad(&teacher, p, &cfg),
            )),
            points,
        });
    }

    // Feature distillation w.r.t. student features (teacher fixed).
    {
        let dim = 5;
        let teacher: Vec<f64> = sample_off_origin(&mut rng, dim);
        let points = (0..N_POINTS).map(|_| sample_off_origin(&mut rng, dim)).collect();
        let eval_teacher = teacher.clone();
        items.push(CheckItem {
            name: "loss_fd_cosine",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| {
                    fd_loss(&Vector::new(eval_teacher.clone()), &Vector::new(p.to_vec()), 1e-8)
                        .unwrap()
                },
                move |p: &[f64]| fd_analytic_grad(&teacher, p),
            )),
            points,
        });
    }

    // Combined objective on a toy 3-class incremental learner: parameters
    // are the full flattened learner (extractor + classifier).
    {
        let cfg = DistillConfig::default();
        let mut base = LearnerState::fresh(&ExtractorConfig::new(3, vec![4], 3), 2, 0.05, 101, 102)
            .expect("toy learner");
        // Generic parameters (biases included) keep the toy teacher's
        // embeddings bounded away from zero on every probe input.
        let generic: Vec<f64> = base
            .param_vector()
            .iter()
            .map(|v| v + rng.random_range(-0.6..0.6))
            .collect();
        base.set_param_vector(&generic).expect("finite");
        let teacher = freeze(&base);
        let mut student = base;
        student.classifier = expand_classifier(&student.classifier, 1, 0.05, 103).unwrap();
        student.phase_index = 1;
        student.old_class_count = 2;
        student.new_class_count = 1;

        let xs: Vec<Vector> = (0..4)
            .map(|_| Vector::new(sample(&mut rng, 3, -1.0, 1.0)))
            .collect();
        let ys: Vec<Vector> = (0..4)
            .map(|_| {
                Vector::new(vec![
                    0.0,
                    0.0,
                    f64::from(rng.random_range(0.0..1.0) < 0.6),
                ])
            })
            .collect();
        let flags = LossFlags {
            indl_mask: true,
            use_od: true,
            use_fd: true,
        };

        let reference = student.param_vector();
        let points = (0..N_POINTS)
            .map(|_| {
                reference
                    .iter()
                    .map(|v| v + rng.random_range(-0.4..0.4))
                    .collect()
            })
            .collect();

        let run = move |p: &[f64], want_grads: bool| -> (f64, Vec<f64>) {
            let mut learner = student.clone();
            learner.set_param_vector(p).expect("finite point");
            let xr: Vec<&Vector> = xs.iter().collect();
            let yr: Vec<&Vector> = ys.iter().collect();
            let out = total_loss(&learner, Some(&teacher), &xr, &yr, &cfg, flags).unwrap();
            if want_grads {
                (out.breakdown.total, out.grads)
            } else {
                (out.breakdown.total, Vec::new())
            }
        };
        let run_eval = run.clone();
        items.push(CheckItem {
            name: "loss_combined_objective",
            fun: Box::new(ClosureFn::new(
                move |p: &[f64]| run_eval(p, false).0,
                move |p: &[f64]| run(p, true).1,
            )),
            points,
        });
    }

    items
}

/// Analytic OD gradient, restated here independently of the production
/// backward pass (same math, separate code path for the checker).
fn od_numeric_free_grad(teacher: &[f64], student: &[f64], cfg: &DistillConfig) -> Vec<f64> {
    let s_teacher: Vec<f64> = teacher.iter().map(|&o| sigmoid(o)).collect();
    let s: Vec<f64> = student.iter().map(|&o| sigmoid(o)).collect();
    let p = rescale_pi(&s_teacher, cfg.delta, cfg.eps).unwrap();
    let q = rescale_pi(&s, cfg.delta, cfg.eps).unwrap();
    let sum_a: f64 = s.iter().map(|&x| (x + cfg.eps).powf(1.0 / cfg.delta)).sum();
    (0..s.len())
        .map(|j| {
            let da = (s[j] + cfg.eps).powf(1.0 / cfg.delta - 1.0) / cfg.delta;
            (1.0 - p[j] / q[j]) / sum_a * da * s[j] * (1.0 - s[j])
        })
        .collect()
}

fn fd_analytic_grad(teacher: &[f64], student: &[f64]) -> Vec<f64> {
    let nt = teacher.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ns = student.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = teacher
        .iter()
        .zip(student)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / (nt * ns);
    (0..student.len())
        .map(|i| (cos * student[i] / ns - teacher[i] / nt) / ns)
        .collect()
}
