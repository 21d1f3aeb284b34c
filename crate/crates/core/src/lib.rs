// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod delay_opt;
pub mod error;
pub mod h2;
pub mod iodirka;
pub mod io;
pub mod irka;
pub(crate) mod linalg;
pub mod model;
pub mod precision;

pub use error::{Error, Result};
pub use model::{
    eval_transfer, eval_transfer_derivative, impulse_response, pole_residue_from_state_space, realify_check,
    CMatrix, DelayBlock, DelayedModel, ImpulseResponse, PoleResidueModel, StateSpaceModel, Term,
};
