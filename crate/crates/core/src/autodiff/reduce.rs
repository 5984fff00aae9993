use std::sync::Arc;

use super::elementwise::{expand_to, sum_to_shape};
use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

/// (outer, axis, inner) extents around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

impl<T: Scalar> Var<T> {
    /// Sum of every element, as a one-element tensor.
    pub fn sum_all(&self) -> Var<T> {
        let value = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(value, &[self], move |g, _| vec![Some(Tensor::full(shape.clone(), g.data()[0]))])
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = T::from_usize_lossy(self.value().len());
        self.sum_all().scale(T::one() / n)
    }

    /// Sums over `axes`, keeping them as unit axes.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var<T>> {
        let mut target = self.shape().to_vec();
        for &a in axes {
            check_axis("sum_axes", self.shape(), a)?;
            target[a] = 1;
        }
        let value = sum_to_shape(self.value(), &target);
        let shape = self.shape().to_vec();
        Ok(Var::from_op(value, &[self], move |g, _| vec![Some(expand_to(g, &shape))]))
    }

    /// Mean over `axes`, keeping them as unit axes.
    ///
    /// Each group is summed relative to its first element, so a constant group
    /// returns its value exactly.
    pub fn mean_axes(&self, axes: &[usize]) -> Result<Var<T>> {
        let mut target = self.shape().to_vec();
        for &a in axes {
            check_axis("mean_axes", self.shape(), a)?;
            target[a] = 1;
        }
        let x = self.value();
        let n = numel(x.shape()) / numel(&target).max(1);
        let nt = T::from_usize_lossy(n.max(1));
        let xs = strides(x.shape());
        let ts = strides(&target);
        let anchor: Vec<T> = (0..numel(&target))
            .map(|mut flat| {
                let mut off = 0;
                for (&st, &sx) in ts.iter().zip(&xs) {
                    off += (flat / st) * sx;
                    flat %= st;
                }
                x.data()[off]
            })
            .collect();
        let anchor = Tensor::from_parts(target.clone(), anchor);
        let full = expand_to(&anchor, x.shape());
        let shifted = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(full.data()).map(|(&v, &a)| v - a).collect(),
        );
        let sums = sum_to_shape(&shifted, &target);
        let data = anchor.data().iter().zip(sums.data()).map(|(&a, &s)| a + s / nt).collect();
        let shape = x.shape().to_vec();
        Ok(Var::from_op(Tensor::from_parts(target, data), &[self], move |g, _| {
            vec![Some(expand_to(g, &shape).map(|v| v / nt))]
        }))
    }

    /// Maximum along `axis`, kept as a unit axis. Gradient goes to the first maximiser.
    pub fn max_axis(&self, axis: usize) -> Result<Var<T>> {
        check_axis("max_axis", self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.value().data();
        let mut out = vec![T::zero(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let (mut best, mut bi) = (x[base], 0);
                for k in 1..n {
                    let v = x[base + k * inner];
                    if v > best {
                        best = v;
                        bi = k;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = bi;
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        let full = self.shape().to_vec();
        Ok(Var::from_op(Tensor::from_parts(shape, out), &[self], move |g, _| {
            let mut dx = Tensor::zeros(full.clone());
            let d = dx.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let j = o * inner + i;
                    d[o * n * inner + arg[j] * inner + i] = g.data()[j];
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let value = softmax_forward(self.value(), outer, n, inner);
        let y = Arc::new(value);
        Ok(Var::from_op(Arc::clone(&y), &[self], move |g, _| {
            // dx = y * (g - sum(g * y))
            let (yd, gd) = (y.data(), g.data());
            let mut dx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let mut dot = T::zero();
                    for k in 0..n {
                        dot += gd[base + k * inner] * yd[base + k * inner];
                    }
                    for k in 0..n {
                        let p = base + k * inner;
                        dx[p] = yd[p] * (gd[p] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), dx))]
        }))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<T>> {
        check_axis("log_softmax", self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.value().data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let m = (0..n).map(|k| x[base + k * inner]).fold(T::neg_infinity(), T::max);
                let lse = m + (0..n).map(|k| (x[base + k * inner] - m).exp()).sum::<T>().ln();
                for k in 0..n {
                    out[base + k * inner] = x[base + k * inner] - lse;
                }
            }
        }
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let y = Arc::new(value);
        Ok(Var::from_op(Arc::clone(&y), &[self], move |g, _| {
            // dx = g - softmax * sum(g)
            let (yd, gd) = (y.data(), g.data());
            let mut dx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let s: T = (0..n).map(|k| gd[base + k * inner]).sum();
                    for k in 0..n {
                        let p = base + k * inner;
                        dx[p] = gd[p] - yd[p].exp() * s;
                    }
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), dx))]
        }))
    }
}

pub(crate) fn softmax_forward<T: Scalar>(x: &Tensor<T>, outer: usize, n: usize, inner: usize) -> Tensor<T> {
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    if inner == 1 {
        for (row_in, row_out) in xd.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let m = row_in.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - m).exp();
                s += *o;
            }
            let inv = T::one() / s;
            row_out.iter_mut().for_each(|o| *o *= inv);
        }
    } else {
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let m = (0..n).map(|k| xd[base + k * inner]).fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for k in 0..n {
                    let e = (xd[base + k * inner] - m).exp();
                    out[base + k * inner] = e;
                    s += e;
                }
                for k in 0..n {
                    out[base + k * inner] /= s;
                }
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}
