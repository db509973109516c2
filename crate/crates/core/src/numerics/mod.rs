//! Dense kernels, reverse-mode gradients and the finite-difference oracle.

pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use matrix::{
    argmax, cross_entropy, l2_normalize, layer_norm, linear, matmul, softmax_rows, Matrix, L2_NORM_FLOOR,
    LAYER_NORM_EPS,
};
pub use params::{ParamId, ParamStore, SplitMix64};
pub use tape::{Gradients, Tape, Var};
