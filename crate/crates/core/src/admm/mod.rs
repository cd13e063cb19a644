//! ADMM quantization engine: penalty schedule, splitting iterations, trace.

mod engine;
mod schedule;
mod trace;

pub use engine::{
    augmented_grad, augmented_loss, augmented_loss_and_grad, penalty, q_update, run_admm,
    run_admm_from, u_update, w_update, AdmmConfig, AdmmReport, AdmmState, LayerState,
};
pub use schedule::RhoSchedule;
pub use trace::{RowKind, Trace, TraceRow, CSV_HEADER};
