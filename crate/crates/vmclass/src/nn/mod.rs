//! From-scratch neural network core: dense grids, layer forward/backward
//! passes, a GRU with full backprop through time, Adam, the assembled
//! Conv1D + GRU classifier and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod grid;
pub mod gru;
pub mod layers;
pub mod loss;
pub mod model;

pub use adam::Adam;
pub use gradcheck::{check_gradients, GradCheckReport};
pub use grid::Grid;
pub use model::{argmax_row, Architecture, Checkpoint, Model, ParamSet, Phase};
