//! Training objective: half pixelwise cross-entropy, half soft Dice.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DICE_EPS: f64 = 1e-5;

/// One-hot encoding of a (B, H, W) label map as a (B, K, H, W) tensor.
pub fn one_hot<T: Scalar>(labels: &[u8], batch: usize, classes: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let plane = height * width;
    if labels.len() != batch * plane {
        return Err(Error::shape("one_hot", format!("{} labels for batch {batch} of {height}x{width}", labels.len())));
    }
    let mut data = vec![T::zero(); batch * classes * plane];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(Error::Data(format!("label {l} outside 0..{classes}")));
        }
        let (b, p) = (i / plane, i % plane);
        data[(b * classes + l) * plane + p] = T::one();
    }
    Tensor::new(vec![batch, classes, height, width], data)
}

/// 1 − mean over foreground classes of (2Σpg + ε)/(Σp + Σg + ε), with sums
/// taken over the whole batch. `probs` and `onehot` are (B, K, H, W).
pub fn soft_dice_loss<T: Scalar>(probs: &Var<T>, onehot: &Tensor<T>) -> Result<Var<T>> {
    let (_, k, _, _) = probs.value().dims4()?;
    if probs.shape() != onehot.shape() {
        return Err(Error::shape("soft_dice_loss", format!("probs {:?} vs one-hot {:?}", probs.shape(), onehot.shape())));
    }
    if k < 2 {
        return Err(Error::shape("soft_dice_loss", "need at least one foreground class".to_string()));
    }
    let eps = T::from_f64_lossy(DICE_EPS);
    let g = Var::constant(onehot.clone());
    let axes = [0, 2, 3];
    let inter = probs.mul(&g)?.sum_axes(&axes)?.narrow(1, 1, k - 1)?;
    let p_sum = probs.sum_axes(&axes)?.narrow(1, 1, k - 1)?;
    let g_sum = Var::constant(sum_classes(onehot)).narrow(1, 1, k - 1)?;
    let num = inter.scale(T::from_f64_lossy(2.0)).add_scalar(eps);
    let den = p_sum.add(&g_sum)?.add_scalar(eps);
    let dice = num.div(&den)?.mean_all();
    Ok(dice.neg().add_scalar(T::one()))
}

fn sum_classes<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (_, k, h, w) = t.dims4().expect("caller checked rank");
    let plane = h * w;
    let mut out = vec![T::zero(); k];
    for (i, &v) in t.data().iter().enumerate() {
        out[(i / plane) % k] += v;
    }
    Tensor::from_parts(vec![1, k, 1, 1], out)
}

pub struct LossParts<T: Scalar> {
    pub total: Var<T>,
    pub ce: Var<T>,
    pub dice: Var<T>,
}

/// 0.5 · mean cross-entropy + 0.5 · soft Dice, for (B, K, H, W) logits and a
/// (B, H, W) label map.
pub fn combined_loss<T: Scalar>(logits: &Var<T>, labels: &[u8]) -> Result<LossParts<T>> {
    let (b, k, h, w) = logits.value().dims4()?;
    let onehot = one_hot::<T>(labels, b, k, h, w)?;
    let log_p = logits.log_softmax(1)?;
    let ce = log_p
        .mul(&Var::constant(onehot.clone()))?
        .sum_all()
        .scale(-T::one() / T::from_usize_lossy(b * h * w));
    let dice = soft_dice_loss(&log_p.exp(), &onehot)?;
    let half = T::from_f64_lossy(0.5);
    let total = ce.scale(half).add(&dice.scale(half))?;
    Ok(LossParts { total, ce, dice })
}
