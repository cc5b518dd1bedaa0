//! Dense arrays with reverse-mode automatic differentiation.

pub mod checkpoint;
pub mod fdcheck;
mod params;
mod tape;
mod tensor;

pub use fdcheck::{finite_diff_check, relative_error, FdOptions, FdReport};
pub use params::{ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
