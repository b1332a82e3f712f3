//! Dense `f64` tensors and the reverse-mode tape used by every network in
//! the model.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    autodiff_gradients, compare_with_finite_differences, finite_diff_check, ParamError,
};
pub use params::ParamStore;
pub use tape::{Activation, Gradients, Tape, Var, EXP_CLAMP};
pub use tensor::Tensor;
