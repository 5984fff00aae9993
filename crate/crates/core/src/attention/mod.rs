//! Attention primitives and the blocks built from them.
//!
//! Every block maps a `(B, C, H, W)` feature map to the same shape. Inputs are
//! validated on entry: rank 4, non-zero extents, finite entries.

mod blocks;
mod dual;
mod gates;

pub use blocks::{DaBlock, MipcBlock, MipcParts, MipcVariant, PartAPrimary, PartB, PartCPrimary, PcBlock, ResidualTail};
pub use dual::{Cam, Pam};
pub use gates::{ChannelGate, PositionGate, CHANNEL_REDUCTION, POSITION_KERNEL};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Validates a feature map and returns its `(B, C, H, W)` extents.
pub fn check_feature_map<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let dims = x.dims4().map_err(|_| Error::shape(op, format!("expected (B, C, H, W), got {:?}", x.shape())))?;
    if x.shape().contains(&0) {
        return Err(Error::shape(op, format!("empty axis in {:?}", x.shape())));
    }
    x.check_finite(op)?;
    Ok(dims)
}
