//! A small CPU tensor engine: convolution kernels, resampling, an autograd
//! tape, parameter storage, and optimization.

pub mod conv;
pub mod functional;
pub mod gemm;
pub mod graph;
pub mod interp;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{BatchNormIds, Gradients, Graph, NormMode, Var};
pub use optim::{Adam, MultiStepLr};
pub use params::{ParamId, ParamKind, ParamStore};
