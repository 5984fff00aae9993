//! Parameter management and the standard layers the network is built from.

mod layers;
mod params;

pub use layers::{identity_kernel, BatchNorm2d, Conv2d, ConvBnRelu, LayerNorm, Linear};
pub use params::{BuildState, IdRange, Mode, ParamBuilder, ParamEntry, ParamId, ParamStore, Session};
