//! Recurrent gesture classifier written from scratch.
//!
//! A GRU or LSTM layer reads the frame tensor one time step at a time; its
//! final hidden state feeds a stack of relu dense layers ending in a softmax
//! over the ten gesture classes. Training is plain gradient descent on the
//! mean categorical cross-entropy of each batch, with gradients from
//! backpropagation through time.
//!
//! ```
//! use capstream::classifier::{Model, ModelSpec, FrameTensor};
//!
//! let model = Model::zeros(ModelSpec::default()).unwrap();
//! let x = FrameTensor::new(16, 4, vec![0.5; 64]).unwrap();
//! let p = model.forward(&x).unwrap();
//! assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

mod network;
pub mod persist;
mod tensor;
mod train;

pub use network::{loss, softmax, CellKind, Init, Model, ModelSpec, Param, Prediction};
pub use persist::{load, save, ModelSidecar};
pub use tensor::{channels_to_tensor, frame_to_tensor, resample, FrameTensor};
pub use train::{assess, backward_and_update, evaluate, stratified_split, train, train_from, EpochStats, Example, Reduction, TrainConfig, TrainHistory};
