use std::sync::Arc;

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// Strides of `shape` when viewed as broadcast to a same-rank output.
fn broadcast_strides(shape: &[usize]) -> Vec<usize> {
    strides(shape)
        .into_iter()
        .zip(shape)
        .map(|(s, &d)| if d == 1 { 0 } else { s })
        .collect()
}

/// Visits every output position of a broadcast with the matching input offsets.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let total = numel(out);
    if total == 0 {
        return;
    }
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for j in 0..last {
            f(o + j, oa + j * la, ob + j * lb);
        }
        o += last;
        // advance outer counters
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

fn zip_broadcast<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let (sa, sb) = (broadcast_strides(a.shape()), broadcast_strides(b.shape()));
    let mut data = vec![T::zero(); numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Ok(Tensor::from_parts(out, data))
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn sum_to_shape<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let st = broadcast_strides(shape);
    let zero = vec![0; shape.len()];
    let mut data = vec![T::zero(); numel(shape)];
    let gd = g.data();
    for_each_broadcast(g.shape(), &st, &zero, |o, it, _| data[it] += gd[o]);
    Tensor::from_parts(shape.to_vec(), data)
}

/// Expands `t` to `shape` by repetition along unit axes.
pub(crate) fn expand_to<T: Scalar>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if t.shape() == shape {
        return t.clone();
    }
    let st = broadcast_strides(t.shape());
    let zero = vec![0; shape.len()];
    let mut data = vec![T::zero(); numel(shape)];
    let td = t.data();
    for_each_broadcast(shape, &st, &zero, |o, it, _| data[o] = td[it]);
    Tensor::from_parts(shape.to_vec(), data)
}

fn zip_grad<T: Scalar>(g: &Tensor<T>, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    zip_broadcast("grad", g, other, f).expect("gradient shape follows forward broadcast")
}

impl<T: Scalar> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let value = zip_broadcast("add", self.value(), other.value(), |a, b| a + b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(Var::from_op(value, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| sum_to_shape(g, &sa)),
                needs[1].then(|| sum_to_shape(g, &sb)),
            ]
        }))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        let value = zip_broadcast("sub", self.value(), other.value(), |a, b| a - b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(Var::from_op(value, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| sum_to_shape(g, &sa)),
                needs[1].then(|| sum_to_shape(&g.map(|v| -v), &sb)),
            ]
        }))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let value = zip_broadcast("mul", self.value(), other.value(), |a, b| a * b)?;
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(Var::from_op(value, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| sum_to_shape(&zip_grad(g, &b, |g, b| g * b), a.shape())),
                needs[1].then(|| sum_to_shape(&zip_grad(g, &a, |g, a| g * a), b.shape())),
            ]
        }))
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        let value = zip_broadcast("div", self.value(), other.value(), |a, b| a / b)?;
        let (a, b) = (self.value_rc(), other.value_rc());
        let out = Arc::new(value);
        Ok(Var::from_op(Arc::clone(&out), &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| sum_to_shape(&zip_grad(g, &b, |g, b| g / b), a.shape())),
                needs[1].then(|| {
                    // d(a/b)/db = -(a/b)/b
                    let q = zip_grad(g, &out, |g, q| -g * q);
                    sum_to_shape(&zip_grad(&q, &b, |q, b| q / b), b.shape())
                }),
            ]
        }))
    }

    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
        // df(x, y) is the derivative given input x and output y
        let value = self.value().map(f);
        let x = self.value_rc();
        let y = Arc::new(value);
        Var::from_op(Arc::clone(&y), &[self], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(y.data()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    pub fn relu(&self) -> Var<T> {
        self.unary(|x| x.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Var<T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Var<T> {
        let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
        let k = T::from_f64_lossy(0.044715);
        let half = T::from_f64_lossy(0.5);
        let three = T::from_f64_lossy(3.0);
        self.unary(
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _| {
                let t = (c * (x + k * x * x * x)).tanh();
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
            },
        )
    }

    pub fn exp(&self) -> Var<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-T::one())
    }

    pub fn scale(&self, s: T) -> Var<T> {
        let value = self.value().map(|v| v * s);
        Var::from_op(value, &[self], move |g, _| vec![Some(g.map(|v| v * s))])
    }

    pub fn add_scalar(&self, s: T) -> Var<T> {
        let value = self.value().map(|v| v + s);
        Var::from_op(value, &[self], |g, _| vec![Some(g.clone())])
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn broadcast_gate_shapes() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 2, 2], |i| i as f64);
        let g = Tensor::<f64>::from_fn(vec![2, 3, 1, 1], |i| i as f64 + 1.0);
        let y = Var::constant(x.clone()).mul(&Var::constant(g)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 2]);
        // element (1, 2, 1, 0): x = 1*12 + 2*4 + 2 = 22, gate = 6
        assert_eq!(y.value().at(&[1, 2, 1, 0]), 22.0 * 6.0);
    }

    #[test]
    fn sum_to_shape_reduces_broadcast_axes() {
        let g = Tensor::<f64>::ones(vec![2, 3, 4, 5]);
        let r = sum_to_shape(&g, &[2, 1, 4, 1]);
        assert_eq!(r.shape(), &[2, 1, 4, 1]);
        assert!(r.data().iter().all(|&v| v == 15.0));
    }

    #[test]
    fn div_gradient() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![1], vec![2.0]).unwrap());
        let g = a.div(&b).unwrap().sum_all().backward();
        assert_eq!(g.get(&a).unwrap().data(), &[0.5, 0.5]);
        // d/db (3/b - 1/b) = -(2)/b^2
        assert!((g.get(&b).unwrap().data()[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn broadcast_rejects_incompatible() {
        let a = Var::constant(Tensor::<f32>::zeros(vec![2, 3]));
        let b = Var::constant(Tensor::<f32>::zeros(vec![2, 4]));
        assert!(a.add(&b).is_err());
    }
}
