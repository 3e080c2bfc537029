//! Minimal neural-network building blocks with hand-written backward passes.
//!
//! Every layer reads its weights from a flat [`ParamStore`] and accumulates
//! gradients into a buffer with the same layout, so optimizers, freezing and
//! finite-difference checks all work on one contiguous `f64` vector.

mod adam;
mod conv;
mod linear;
mod lstm;
pub mod ops;
mod param;

pub use adam::{Adam, AdamState};
pub use conv::{Conv2d, ConvTranspose2d};
pub use linear::Linear;
pub use lstm::{LstmCell, LstmStep};
pub use param::{ParamEntry, ParamId, ParamStore};
