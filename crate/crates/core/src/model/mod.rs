//! Network description, parameters, execution, training and storage.

mod exec;
pub(crate) mod io;
mod params;
mod spec;
mod train;

pub use exec::{
    apply_plain_layer, forward, logits, loss_and_gradients, CapturedLayer, Captures, Gradients,
};
pub use io::{load_net, save_net, CnnHeader, CNN_MAGIC};
pub use params::{init_net, LayerParams, NetParams};
pub use spec::{LayerSpec, NetSpec};
pub use train::{
    evaluate, first_trainable_layer, predict, train, Dataset, EvalPoint, Hyper, LrSchedule,
    TaskData, TrainHistory,
};
