//! Toy-scale training: schedule, optimizer, data, loop and gradient checks.

mod data;
mod gradcheck;
mod multiscale;
mod optim;
mod schedule;
mod toy;

pub use data::{synthetic_dataset, Dataset, TOY_CLASSES};
pub use gradcheck::{
    check_graph, gradcheck, relative_error, GradSample, GradcheckConfig, GradcheckReport, END_TO_END_TOLERANCE,
    FD_RELATIVE_STEP, GRAD_FLOOR, KINK_TOLERANCE,
};
pub use multiscale::{multiscale_sample, MultiScaleSampler, MultiScaleSpec};
pub use optim::{sgd_nesterov_step, OptimizerState};
pub use schedule::{poly_lr, LR_STEP_EPOCHS};
pub use toy::{
    evaluate, history_csv, pixel_accuracy, predict, train_on, train_step, train_toy, update_running_stats, EpochRecord,
    ToyConfig, ToyRun, BN_MOMENTUM,
};
