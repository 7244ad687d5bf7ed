//! Class-incremental multi-label learning engine.
//!
//! Trains an expanding classifier over a sequence of tasks that each
//! introduce new classes, combining independent learning of the new
//! classes with output (KL) and feature (cosine) distillation against the
//! frozen previous learner. Ships the standard baselines (fine-tuning,
//! feature extraction, from-scratch retraining), the phase-wise evaluation
//! protocol (macro F1, mAP, forgetting), a synthetic multi-label data
//! generator, and a finite-difference checker covering every analytic
//! gradient.
//!
//! All arithmetic is 64-bit, single-threaded per run, and bit-reproducible
//! under a seed.

pub mod checkpoint;
pub mod checks;
pub mod data;
pub mod diff;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use data::{Dataset, Example, PhaseDataset, PhasePlan, SynthConfig};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use losses::{DistillConfig, LossBreakdown};
pub use metrics::{PhaseReport, RunSummary};
pub use model::{ClassifierParams, ExtractorConfig, ExtractorParams, FrozenTeacher, LearnerState};
pub use trainer::{ModelConfig, RunReport, Strategy, TrainConfig};
