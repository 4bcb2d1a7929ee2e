//! A small multilayer perceptron with hand-written reverse-mode gradients and
//! an Adam optimizer. Parameters are one flat `Vec<f64>`; gradients share the
//! same layout so the optimizer never needs to know about layers.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{from_text, load_checkpoint, save_checkpoint, to_text};
pub use mlp::{backward, forward, init_params, Activation, ForwardTrace, MlpParams, MlpSpec};
