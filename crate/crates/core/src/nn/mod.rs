//! Minimal differentiable core over dense row-major matrices.
//!
//! Model code is written once against [`Backend`] and runs either on a
//! [`Tape`] (recording, for gradients) or on [`Eval`] (values only).

mod adam;
mod backend;
mod gradcheck;
mod layers;
mod matrix;
pub mod ops;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use backend::{Backend, Eval};
pub use gradcheck::{gradient_check, relative_error, EntryError, GradCheckOptions, GradCheckReport, Probe};
pub use layers::{attention_pool, dense, linear, mlp, NnError};
pub use matrix::{gemm_into, matmul, Matrix, Real};
pub use params::{ParamError, ParameterStore};
pub use tape::{Gradients, TVar, Tape, PROB_EPS};

/// Binary cross-entropy of one label against a clamped probability.
pub fn binary_cross_entropy(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}
