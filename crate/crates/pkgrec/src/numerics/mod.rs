//! Flat-buffer tensors, a reverse-mode gradient tape, and the Adam
//! optimizer. Everything is f64 and single-threaded; graphs are rebuilt per
//! batch on a fresh tape.

pub mod adam;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{Tape, ValueId};
pub use tensor::{dot, log_sum_exp, matvec, softmax, Tensor};
