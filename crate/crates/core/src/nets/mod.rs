//! Parameter stores, encoder/decoder channels, initialization and checkpoints.

mod channel;
mod checkpoint;
mod store;

pub use channel::{
    build_channel, glorot_bound, init_params, Channel, ChannelPass, ChannelSpec, Head, Hidden, NetError, LOG_STD_MAX,
    LOG_STD_MIN,
};
pub use checkpoint::{
    check_compatible, checkpoint_load, checkpoint_save, decode_store, encode_store, CheckpointError, FORMAT_VERSION,
    MAGIC,
};
pub use store::{GradBuffer, ParamEntry, ParamId, ParamStore, StoreError};
