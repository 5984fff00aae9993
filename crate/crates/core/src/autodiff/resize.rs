use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Source taps of one output coordinate: (lower index, upper index, upper weight).
fn axis_taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, T::from_f64_lossy(src - i0 as f64))
        })
        .collect()
}

/// Half-pixel bilinear resize of the last two axes of a rank-4 tensor.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::shape("resize_bilinear", format!("{h}x{w} -> {out_h}x{out_w}")));
    }
    let (ty, tx) = (axis_taps::<T>(h, out_h), axis_taps::<T>(w, out_w));
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    for plane in xd.chunks_exact(h * w) {
        for &(y0, y1, ly) in &ty {
            let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
            for &(x0, x1, lx) in &tx {
                let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                out.push(top + (bot - top) * ly);
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, out_h, out_w], out))
}

impl<T: Scalar> Var<T> {
    /// Differentiable half-pixel bilinear resize; identity when sizes already match.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if (h, w) == (out_h, out_w) {
            return Ok(self.clone());
        }
        let value = resize_bilinear(self.value(), out_h, out_w)?;
        let (ty, tx) = (axis_taps::<T>(h, out_h), axis_taps::<T>(w, out_w));
        Ok(Var::from_op(value, &[self], move |g, _| {
            let mut dx = vec![T::zero(); b * c * h * w];
            for (plane, gp) in dx.chunks_exact_mut(h * w).zip(g.data().chunks_exact(out_h * out_w)) {
                for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                        let gv = gp[oy * out_w + ox];
                        let (top, bot) = (gv * (T::one() - ly), gv * ly);
                        plane[y0 * w + x0] += top * (T::one() - lx);
                        plane[y0 * w + x1] += top * lx;
                        plane[y1 * w + x0] += bot * (T::one() - lx);
                        plane[y1 * w + x1] += bot * lx;
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![b, c, h, w], dx))]
        }))
    }
}
