//! The toy velocity transformer: double-stream blocks over text and audio
//! tokens, then single-stream blocks over the joint sequence.

mod checkpoint;
mod layers;
mod model;
mod params;
mod tap;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use layers::{attention, attention_with_probs, Mat};
pub use model::{Conditioning, Label, Net};
pub use params::{init_params, jitter, parameter_count, Layout, Linear, NetConfig, Slot};
pub use tap::{AttentionTap, QkvEntry, SlotKey, Strategy, TapMode};
pub use train::{
    gradient_check, jittered, smooth, train, Adam, FlowSample, GradCheck, TrainConfig, TrainPair, TrainReport,
};
