//! Position and channel self-attention modules.

use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::{Conv2d, ParamBuilder, ParamId, Session};
use crate::scalar::Scalar;

use super::check_feature_map;

/// Position attention: every spatial position attends over all positions.
#[derive(Clone, Debug)]
pub struct Pam {
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    pub gamma: ParamId,
    pub channels: usize,
}

impl Pam {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        let reduced = (channels / 8).max(1);
        Self {
            query: Conv2d::same(&mut pb.child("query"), channels, reduced, 1, true),
            key: Conv2d::same(&mut pb.child("key"), channels, reduced, 1, true),
            value: Conv2d::same(&mut pb.child("value"), channels, channels, 1, true),
            gamma: pb.zeros("gamma", &[1]),
            channels,
        }
    }

    /// Row-softmaxed `(B, HW, HW)` affinity; row `i` holds the weights position `i` puts on every position.
    pub fn affinity<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (b, _, h, w) = check_feature_map("pam", x.value())?;
        let n = h * w;
        let q = self.query.forward(s, x)?;
        let k = self.key.forward(s, x)?;
        let cq = q.shape()[1];
        let q = q.reshape(&[b, cq, n])?;
        let k = k.reshape(&[b, cq, n])?;
        q.matmul_t(&k, true, false)?.softmax(2)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (b, c, h, w) = check_feature_map("pam", x.value())?;
        let attn = self.affinity(s, x)?;
        let v = self.value.forward(s, x)?.reshape(&[b, c, h * w])?;
        let out = v.matmul_t(&attn, false, true)?.reshape(&[b, c, h, w])?;
        mix(s, self.gamma, &out, x)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.query.param_ids();
        ids.extend(self.key.param_ids());
        ids.extend(self.value.param_ids());
        ids.push(self.gamma);
        ids
    }
}

/// Channel attention over the raw reshaped features.
#[derive(Clone, Debug)]
pub struct Cam {
    pub gamma: ParamId,
}

impl Cam {
    pub fn new(pb: &mut ParamBuilder<'_>) -> Self {
        Self { gamma: pb.zeros("gamma", &[1]) }
    }

    /// Row-softmaxed `(B, C, C)` affinity.
    ///
    /// Uses softmax(-E) for the energy E = X·Xᵀ, which equals the usual
    /// softmax(rowmax(E) - E) because softmax ignores a per-row shift.
    pub fn affinity<T: Scalar>(&self, x: &Var<T>) -> Result<Var<T>> {
        let (b, c, h, w) = check_feature_map("cam", x.value())?;
        let flat = x.reshape(&[b, c, h * w])?;
        flat.matmul_t(&flat, false, true)?.neg().softmax(2)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (b, c, h, w) = check_feature_map("cam", x.value())?;
        let attn = self.affinity(x)?;
        let flat = x.reshape(&[b, c, h * w])?;
        let out = attn.matmul(&flat)?.reshape(&[b, c, h, w])?;
        mix(s, self.gamma, &out, x)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.gamma]
    }
}

/// `gamma * out + x` with a learnable scalar.
fn mix<T: Scalar>(s: &Session<'_, T>, gamma: ParamId, out: &Var<T>, x: &Var<T>) -> Result<Var<T>> {
    let g = s.param(gamma).reshape(&[1, 1, 1, 1])?;
    out.mul(&g)?.add(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BuildState, Mode};
    use crate::tensor::Tensor;

    fn input(shape: [usize; 4]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |i| ((i * 7 + 3) as f64 * 0.37).sin())
    }

    #[test]
    fn pam_single_position_adds_value_projection() {
        let mut st = BuildState::new(1);
        let pam = Pam::new(&mut st.root().child("pam"), 4);
        let mut store = st.finish();
        store.set(pam.gamma, Tensor::new(vec![1], vec![0.5]).unwrap());
        let s = Session::inference(&store, Mode::Eval);
        let x = Var::constant(input([2, 4, 1, 1]));
        let attn = pam.affinity(&s, &x).unwrap();
        assert!(attn.value().data().iter().all(|&a| a == 1.0));
        let y = pam.forward(&s, &x).unwrap();
        let v = pam.value.forward(&s, &x).unwrap();
        for ((&yo, &xo), &vo) in y.value().data().iter().zip(x.value().data()).zip(v.value().data()) {
            assert!((yo - (xo + 0.5 * vo)).abs() < 1e-15);
        }
    }

    #[test]
    fn cam_single_channel_scales_input() {
        let mut st = BuildState::new(1);
        let cam = Cam::new(&mut st.root().child("cam"));
        let mut store = st.finish();
        store.set(cam.gamma, Tensor::new(vec![1], vec![0.25]).unwrap());
        let s = Session::inference(&store, Mode::Eval);
        let x = Var::constant(input([1, 1, 8, 8]));
        let y = cam.forward(&s, &x).unwrap();
        for (&yo, &xo) in y.value().data().iter().zip(x.value().data()) {
            assert!((yo - 1.25 * xo).abs() < 1e-15);
        }
    }

    #[test]
    fn cam_negated_energy_matches_shifted_form() {
        let mut st = BuildState::new(1);
        let cam = Cam::new(&mut st.root());
        let _store = st.finish();
        let x = input([1, 3, 4, 4]);
        let attn = cam.affinity(&Var::constant(x.clone())).unwrap();
        let flat = Var::constant(x.reshape(vec![1, 3, 16]).unwrap());
        let e = flat.matmul_t(&flat, false, true).unwrap();
        let ed = e.value().data();
        for i in 0..3 {
            let row = &ed[i * 3..i * 3 + 3];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (m - v).exp()).sum();
            for j in 0..3 {
                let want = (m - row[j]).exp() / z;
                assert!((attn.value().data()[i * 3 + j] - want).abs() < 1e-14);
            }
        }
    }
}
