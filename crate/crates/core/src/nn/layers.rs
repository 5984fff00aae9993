use super::params::{Mode, ParamBuilder, ParamId, Session};
use crate::autodiff::{Conv2dSpec, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new(pb: &mut ParamBuilder<'_>, cin: usize, cout: usize, kernel: usize, spec: Conv2dSpec, bias: bool) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = pb.kaiming_uniform("weight", &[cout, cin, kernel, kernel], fan_in);
        let bias = bias.then(|| pb.zeros("bias", &[cout]));
        Self { weight, bias, spec, cin, cout, kernel }
    }

    /// Stride-1 convolution that keeps the spatial size.
    pub fn same(pb: &mut ParamBuilder<'_>, cin: usize, cout: usize, kernel: usize, bias: bool) -> Self {
        Self::new(pb, cin, cout, kernel, Conv2dSpec::same(kernel), bias)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let bias = self.bias.map(|b| s.param(b));
        x.conv2d(&s.param(self.weight), bias.as_ref(), self.spec)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Kernel that copies input channel `i` to output channel `i` at the centre tap.
pub fn identity_kernel<T: Scalar>(channels: usize, kernel: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(vec![channels, channels, kernel, kernel]);
    let c = kernel / 2;
    for i in 0..channels {
        let off = t.offset(&[i, i, c, c]);
        t.data_mut()[off] = T::one();
    }
    t
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Separate running statistics for the first of two decoder passes.
    pub first_pass: Option<(ParamId, ParamId)>,
}

impl BatchNorm2d {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        Self::with_passes(pb, channels, 1)
    }

    pub fn with_passes(pb: &mut ParamBuilder<'_>, channels: usize, passes: usize) -> Self {
        Self {
            gamma: pb.ones("gamma", &[channels]),
            beta: pb.zeros("beta", &[channels]),
            running_mean: pb.buffer("running_mean", Tensor::zeros(vec![channels])),
            running_var: pb.buffer("running_var", Tensor::ones(vec![channels])),
            first_pass: (passes > 1).then(|| {
                (
                    pb.buffer("first_pass_running_mean", Tensor::zeros(vec![channels])),
                    pb.buffer("first_pass_running_var", Tensor::ones(vec![channels])),
                )
            }),
        }
    }

    fn running_ids<T: Scalar>(&self, s: &Session<'_, T>) -> (ParamId, ParamId) {
        match self.first_pass {
            Some(ids) if s.first_pass() => ids,
            _ => (self.running_mean, self.running_var),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (gamma, beta) = (s.param(self.gamma), s.param(self.beta));
        let eps = T::from_f64_lossy(BN_EPS);
        let (mean_id, var_id) = self.running_ids(s);
        match s.mode() {
            Mode::Eval => {
                let running = (s.buffer(mean_id), s.buffer(var_id));
                Ok(x.batch_norm2d(&gamma, &beta, Some(running), eps)?.0)
            }
            Mode::Train => {
                let (y, stats) = x.batch_norm2d(&gamma, &beta, None, eps)?;
                if let Some(stats) = stats {
                    let m = T::from_f64_lossy(BN_MOMENTUM);
                    let blend = |old: &Tensor<T>, new: &Tensor<T>| {
                        let data = old.data().iter().zip(new.data()).map(|(&o, &n)| (T::one() - m) * o + m * n).collect();
                        Tensor::new(old.shape().to_vec(), data).expect("matching running-stat shape")
                    };
                    s.record_running(mean_id, blend(s.buffer(mean_id), &stats.mean));
                    s.record_running(var_id, blend(s.buffer(var_id), &stats.var));
                }
                Ok(y)
            }
        }
    }
}

/// Conv (no bias) → batch-norm → ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(pb: &mut ParamBuilder<'_>, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        Self::with_passes(pb, cin, cout, kernel, stride, 1)
    }

    pub fn with_passes(pb: &mut ParamBuilder<'_>, cin: usize, cout: usize, kernel: usize, stride: usize, passes: usize) -> Self {
        let spec = Conv2dSpec { stride, padding: kernel / 2 };
        let conv = Conv2d::new(&mut pb.child("conv"), cin, cout, kernel, spec, false);
        let bn = BatchNorm2d::with_passes(&mut pb.child("bn"), cout, passes);
        Self { conv, bn }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.bn.forward(s, &self.conv.forward(s, x)?)?.relu())
    }
}

/// Affine map over the last axis of a rank-2 or rank-3 input.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder<'_>, fan_in: usize, fan_out: usize) -> Self {
        let weight = pb.kaiming_uniform("weight", &[fan_out, fan_in], fan_in);
        let bias = pb.zeros("bias", &[fan_out]);
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let shape = x.shape().to_vec();
        if shape.last() != Some(&self.fan_in) || !(2..=3).contains(&shape.len()) {
            return Err(Error::shape("linear", format!("input {shape:?} for fan-in {}", self.fan_in)));
        }
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = if shape.len() == 2 { x.clone() } else { x.reshape(&[rows, self.fan_in])? };
        let bias = s.param(self.bias).reshape(&[1, self.fan_out])?;
        let y = flat.matmul_t(&s.param(self.weight), false, true)?.add(&bias)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.fan_out;
        if out_shape.len() == 2 {
            Ok(y)
        } else {
            y.reshape(&out_shape)
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder<'_>, dim: usize) -> Self {
        Self { gamma: pb.ones("gamma", &[dim]), beta: pb.zeros("beta", &[dim]) }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        x.layer_norm(&s.param(self.gamma), &s.param(self.beta), T::from_f64_lossy(LN_EPS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::BuildState;

    #[test]
    fn identity_kernel_copies_input() {
        let mut st = BuildState::new(0);
        let conv = Conv2d::same(&mut st.root().child("c"), 3, 3, 3, true);
        let mut store = st.finish();
        store.set(conv.weight, identity_kernel(3, 3));
        let x = Tensor::from_fn(vec![2, 3, 5, 4], |i| (i as f64).cos());
        let s = Session::inference(&store, Mode::Eval);
        let y = conv.forward(&s, &Var::constant(x.clone())).unwrap();
        assert_eq!(y.value(), &x);
    }

    #[test]
    fn linear_on_tokens_matches_rows() {
        let mut st = BuildState::new(3);
        let lin = Linear::new(&mut st.root(), 4, 3);
        let store = st.finish();
        let s = Session::inference(&store, Mode::Eval);
        let x = Tensor::from_fn(vec![2, 5, 4], |i| i as f64 * 0.1);
        let y = lin.forward(&s, &Var::constant(x.clone())).unwrap();
        assert_eq!(y.shape(), &[2, 5, 3]);
        let w = store.get(lin.weight);
        let want: f64 = (0..4).map(|k| x.at(&[1, 2, k]) * w.at(&[2, k])).sum();
        assert!((y.value().at(&[1, 2, 2]) - want).abs() < 1e-12);
    }

    #[test]
    fn train_mode_records_running_stats() {
        let mut st = BuildState::new(0);
        let bn = BatchNorm2d::new(&mut st.root(), 2);
        let store = st.finish();
        let s = Session::with_grad(&store, Mode::Train);
        let x = Tensor::from_fn(vec![2, 2, 3, 3], |i| i as f64);
        bn.forward(&s, &s.input(x, false)).unwrap();
        let updates = s.take_running_updates();
        assert_eq!(updates.len(), 2);
        assert_eq!(updates[0].0, bn.running_mean);
        // channel 0 holds 0..9 and 18..27, mean 13; blended 0.9*0 + 0.1*13
        assert!((updates[0].1.data()[0] - 1.3).abs() < 1e-12);
    }
}
