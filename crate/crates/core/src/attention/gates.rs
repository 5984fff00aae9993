//! Compact channel and position summaries used as mutual-inclusion gates.

use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::{Conv2d, Linear, ParamBuilder, ParamId, Session};
use crate::scalar::Scalar;

use super::check_feature_map;

pub const CHANNEL_REDUCTION: usize = 16;
pub const POSITION_KERNEL: usize = 7;

/// Spatial average per channel, bottleneck FC pair, sigmoid.
#[derive(Clone, Debug)]
pub struct ChannelGate {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ChannelGate {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        let hidden = (channels / CHANNEL_REDUCTION).max(1);
        Self { fc1: Linear::new(&mut pb.child("fc1"), channels, hidden), fc2: Linear::new(&mut pb.child("fc2"), hidden, channels) }
    }

    /// Per-channel spatial mean, `(B, C, 1, 1)`.
    pub fn pool<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
        check_feature_map("channel_gate", x.value())?;
        x.mean_axes(&[2, 3])
    }

    /// Pre-sigmoid gate, `(B, C, 1, 1)`.
    pub fn logits<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (b, c, _, _) = check_feature_map("channel_gate", x.value())?;
        let pooled = Self::pool(x)?.reshape(&[b, c])?;
        let hidden = self.fc1.forward(s, &pooled)?.relu();
        self.fc2.forward(s, &hidden)?.reshape(&[b, c, 1, 1])
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.logits(s, x)?.sigmoid())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias].to_vec()
    }
}

/// Channel-axis max and mean, 7×7 conv, sigmoid.
#[derive(Clone, Debug)]
pub struct PositionGate {
    pub conv: Conv2d,
}

impl PositionGate {
    pub fn new(pb: &mut ParamBuilder<'_>) -> Self {
        Self { conv: Conv2d::same(&mut pb.child("conv"), 2, 1, POSITION_KERNEL, true) }
    }

    /// Channel max and mean stacked as a `(B, 2, H, W)` map.
    pub fn pool<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
        check_feature_map("position_gate", x.value())?;
        let max = x.max_axis(1)?;
        let mean = x.mean_axes(&[1])?;
        Var::concat(&[&max, &mean], 1)
    }

    /// Pre-sigmoid gate, `(B, 1, H, W)`.
    pub fn logits<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.conv.forward(s, &Self::pool(x)?)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.logits(s, x)?.sigmoid())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.conv.param_ids()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BuildState, Mode};
    use crate::tensor::Tensor;

    #[test]
    fn pooled_constant_channels_equal_their_value() {
        let x = Tensor::<f64>::from_fn(vec![1, 3, 5, 5], |i| [0.3, -1.7, 4.0][i / 25]);
        let p = ChannelGate::pool(&Var::constant(x)).unwrap();
        assert_eq!(p.value().data(), &[0.3, -1.7, 4.0]);
    }

    #[test]
    fn gates_have_expected_shapes_and_range() {
        let mut st = BuildState::new(9);
        let cg = ChannelGate::new(&mut st.root().child("cg"), 16);
        let pg = PositionGate::new(&mut st.root().child("pg"));
        let store = st.finish();
        let s = Session::inference(&store, Mode::Eval);
        let x = Var::constant(Tensor::<f64>::from_fn(vec![2, 16, 8, 8], |i| ((i as f64) * 0.91).sin() * 30.0));
        let a = cg.forward(&s, &x).unwrap();
        let b = pg.forward(&s, &x).unwrap();
        assert_eq!(a.shape(), &[2, 16, 1, 1]);
        assert_eq!(b.shape(), &[2, 1, 8, 8]);
        for v in a.value().data().iter().chain(b.value().data()) {
            assert!((0.0..=1.0).contains(v));
        }
    }
}
