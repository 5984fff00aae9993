use super::Var;
use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// (batch, rows, cols) of a rank-2 or rank-3 operand.
fn mat_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [r, c] => Ok((1, r, c)),
        [b, r, c] => Ok((b, r, c)),
        _ => Err(Error::shape(op, format!("expected rank 2 or 3, got {shape:?}"))),
    }
}

impl<T: Scalar> Var<T> {
    /// Batched `op(a) · op(b)` where `op` optionally transposes the last two axes.
    pub fn matmul_t(&self, other: &Var<T>, trans_a: bool, trans_b: bool) -> Result<Var<T>> {
        let (ba, ra, ca) = mat_dims("matmul", self.shape())?;
        let (bb, rb, cb) = mat_dims("matmul", other.shape())?;
        if self.shape().len() != other.shape().len() || ba != bb {
            return Err(Error::shape("matmul", format!("batch mismatch {:?} vs {:?}", self.shape(), other.shape())));
        }
        let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims {k} vs {k2} for {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let batch = ba;
        let (sa, sb) = (ra * ca, rb * cb);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (self.value().data(), other.value().data());
            for i in 0..batch {
                let a = MatRef::stored(ad, i * sa, ra, ca, trans_a);
                let b = MatRef::stored(bd, i * sb, rb, cb, trans_b);
                gemm(T::one(), a, b, T::zero(), &mut out, i * m * n);
            }
        }
        let shape = if self.shape().len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(Var::from_op(Tensor::from_parts(shape, out), &[self, other], move |g, needs| {
            let gd = g.data();
            let (ad, bd) = (a.data(), b.data());
            let da = needs[0].then(|| {
                let mut d = vec![T::zero(); ad.len()];
                for i in 0..batch {
                    let gm = MatRef::row_major(gd, i * m * n, m, n);
                    let opb = MatRef::stored(bd, i * sb, rb, cb, trans_b);
                    if trans_a {
                        gemm(T::one(), opb, gm.t(), T::zero(), &mut d, i * sa);
                    } else {
                        gemm(T::one(), gm, opb.t(), T::zero(), &mut d, i * sa);
                    }
                }
                Tensor::from_parts(a.shape().to_vec(), d)
            });
            let db = needs[1].then(|| {
                let mut d = vec![T::zero(); bd.len()];
                for i in 0..batch {
                    let gm = MatRef::row_major(gd, i * m * n, m, n);
                    let opa = MatRef::stored(ad, i * sa, ra, ca, trans_a);
                    if trans_b {
                        gemm(T::one(), gm.t(), opa, T::zero(), &mut d, i * sb);
                    } else {
                        gemm(T::one(), opa.t(), gm, T::zero(), &mut d, i * sb);
                    }
                }
                Tensor::from_parts(b.shape().to_vec(), d)
            });
            vec![da, db]
        }))
    }

    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.matmul_t(other, false, false)
    }
}
