//! Minimal reverse-mode differentiation over dense `f32` arrays, plus Adam.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, adam_step_store, AdamState, BETA1, BETA2, DEFAULT_LR, DEFAULT_WEIGHT_DECAY, EPSILON};
pub use gradcheck::{
    gradient_check, gradient_check_with, relative_error, GradCheckOptions, GradCheckReport, TapeFn,
    REL_ERROR_FLOOR,
};
pub use layers::{gru_cell, GruParams, Linear, Mlp};
pub use params::{Bound, ParamEntry, ParamId, ParamStore};
pub use tape::{Elementwise, Gradients, Tape, Var};
pub use tensor::{argmax, Real, Tensor};
