//! Fully-connected tanh network with exact input derivatives, parameter
//! gradients through them, Glorot initialisation and Adam.

pub mod adam;
pub mod dual;
pub mod mlp;

pub use adam::AdamState;
pub use mlp::{AffineMap, Jet, JetAdjoint, JetOrder, ParamGradient, SurrogateModel};
