use super::reduce::split_axis;
use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

fn permute_tensor<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    // input stride for each output axis
    let s: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let total = numel(&out_shape);
    let mut out = Vec::with_capacity(total);
    let xd = x.data();
    if total == 0 {
        return Tensor::from_parts(out_shape, out);
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let last = out_shape[rank - 1];
    let ls = s[rank - 1];
    loop {
        for j in 0..last {
            out.push(xd[off + j * ls]);
        }
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return Tensor::from_parts(out_shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            off += s[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= s[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

impl<T: Scalar> Var<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().clone().reshape(shape.to_vec())?;
        let orig = self.shape().to_vec();
        Ok(Var::from_op(value, &[self], move |g, _| {
            vec![Some(g.clone().reshape(orig.clone()).expect("same element count"))]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<T>> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let value = permute_tensor(self.value(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(Var::from_op(value, &[self], move |g, _| vec![Some(permute_tensor(g, &inverse))]))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} out of range")));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{:?} vs {:?} along axis {axis}", p.shape(), first.shape())));
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = sizes.iter().sum();
        let (outer, total, inner) = split_axis(&out_shape, axis);
        let mut out = vec![T::zero(); outer * total * inner];
        let mut start = 0;
        for (p, &n) in parts.iter().zip(&sizes) {
            let src = p.value().data();
            for o in 0..outer {
                let dst = o * total * inner + start * inner;
                out[dst..dst + n * inner].copy_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
            start += n;
        }
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        Ok(Var::from_op(Tensor::from_parts(out_shape, out), parts, move |g, needs| {
            let gd = g.data();
            let mut start = 0;
            shapes
                .iter()
                .zip(needs)
                .map(|(shape, &need)| {
                    let n = shape[axis];
                    let res = need.then(|| {
                        let mut d = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let src = o * total * inner + start * inner;
                            d.extend_from_slice(&gd[src..src + n * inner]);
                        }
                        Tensor::from_parts(shape.clone(), d)
                    });
                    start += n;
                    res
                })
                .collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("narrow", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value().data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = o * n * inner + start * inner;
            out.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(Var::from_op(Tensor::from_parts(out_shape, out), &[self], move |g, _| {
            let mut dx = Tensor::zeros(shape.clone());
            let d = dx.data_mut();
            for o in 0..outer {
                let s = o * n * inner + start * inner;
                d[s..s + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(dx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn permute_round_trip() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4, 5], |i| i as f64);
        let v = Var::constant(x.clone());
        let p = v.permute(&[0, 2, 3, 1]).unwrap();
        assert_eq!(p.shape(), &[2, 4, 5, 3]);
        assert_eq!(p.value().at(&[1, 2, 3, 0]), x.at(&[1, 0, 2, 3]));
        let back = p.permute(&[0, 3, 1, 2]).unwrap();
        assert_eq!(back.value(), &x);
    }

    #[test]
    fn concat_then_narrow_recovers_parts() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_fn(vec![2, 2, 3], |i| i as f64));
        let b = tape.leaf(Tensor::from_fn(vec![2, 1, 3], |i| 100.0 + i as f64));
        let c = Var::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        let back = c.narrow(1, 2, 1).unwrap();
        assert_eq!(back.value(), b.value());
        let g = back.sum_all().backward();
        assert!(g.get(&a).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.get(&b).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn permute_rejects_duplicates() {
        let v = Var::constant(Tensor::<f32>::zeros(vec![2, 3]));
        assert!(v.permute(&[0, 0]).is_err());
    }
}
