use serde::{Deserialize, Serialize};

use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum buffers, one per parameter id, created on first use.
#[derive(Clone, Debug, Default)]
pub struct SgdState<T> {
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new() -> Self {
        Self { velocity: Vec::new() }
    }

    pub fn velocity(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.velocity.get(id.index()).and_then(Option::as_ref)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held a non-finite value; nothing was updated.
    Skipped { param: String },
}

/// Classical momentum with weight decay folded into the gradient:
/// g' = g + wd·θ, v ← μ·v + g', θ ← θ − lr·v.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[(ParamId, Tensor<T>)],
    state: &mut SgdState<T>,
    hyper: SgdHyper,
) -> StepOutcome {
    if let Some((id, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return StepOutcome::Skipped { param: params.entry(*id).name.clone() };
    }
    let (lr, mu, wd) = (T::from_f64_lossy(hyper.lr), T::from_f64_lossy(hyper.momentum), T::from_f64_lossy(hyper.weight_decay));
    if state.velocity.len() < params.len() {
        state.velocity.resize(params.len(), None);
    }
    for (id, g) in grads {
        assert_eq!(params.get(*id).shape(), g.shape(), "gradient shape of {}", params.entry(*id).name);
        let v = state.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let theta = params.get_mut(*id);
        for ((t, v), &g) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *v = mu * *v + g + wd * *t;
            *t -= lr * *v;
        }
    }
    StepOutcome::Applied
}
