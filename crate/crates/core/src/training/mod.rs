//! Losses and training regimes for the estimation and feedback models.

pub mod config;
pub mod losses;
pub mod loops;
pub mod report;


pub use config::{Regime, Schedule, Task, TrainConfig};
pub use losses::{loss_ce, loss_ce1, loss_ce2, loss_ce_value, loss_cf, rho_tokens, LossMode};
pub use loops::{
    eigen_batch, evaluate_composed, evaluate_estimation, evaluate_feedback, precoders_lenient, train_end_to_end,
    train_feedback, train_joint, train_progressive, train_splited, ComposedEval, EstimationEval,
};
pub use report::{head_tail_medians, CurvePoint, TrainReport};
