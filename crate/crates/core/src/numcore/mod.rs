//! Dense tensors, a reverse-mode tape, the layers the value stack is built
//! from, RMSProp, and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use gradcheck::backward_and_check;
pub use graph::{Gradients, Graph, Var};
pub use layers::{
    adjacency_sets, gcn_layer, gcn_layer_forward, gcn_layer_forward_with, gru_step, linear_forward,
    Activation, GruCell, GruState, Linear,
};
pub use optim::{RmsProp, RmsPropConfig};
pub use params::{ParamId, Parameter, ParameterStore};
pub use tensor::Tensor;
