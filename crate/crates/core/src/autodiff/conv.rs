use super::Var;
use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stride and zero padding of a square-kernel 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2 }
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= kernel && self.stride > 0).then(|| (padded - kernel) / self.stride + 1)
    }
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `lo..hi` whose input column for kernel offset `kj` lies
    /// inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (s, off) = (self.spec.stride as isize, kj as isize - self.spec.padding as isize);
        // ox * s + off in [0, w)
        let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
        let hi = if off >= self.w as isize { 0 } else { ((self.w as isize - off + s - 1) / s) as usize };
        (lo.min(self.wo), hi.min(self.wo).max(lo.min(self.wo)))
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let (k, s, p) = (self.k, self.spec.stride as isize, self.spec.padding as isize);
        let cols = self.cols();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.ho {
                        let iy = oy as isize * s - p + ki as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let (lo, hi) = self.valid_cols(kj);
                        line[..lo].iter_mut().for_each(|v| *v = T::zero());
                        line[hi..].iter_mut().for_each(|v| *v = T::zero());
                        let ix0 = (lo as isize * s - p + kj as isize) as usize;
                        if s == 1 {
                            line[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                        } else {
                            for (j, v) in line[lo..hi].iter_mut().enumerate() {
                                *v = src[ix0 + j * s as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let (k, s, p) = (self.k, self.spec.stride as isize, self.spec.padding as isize);
        let cols = self.cols();
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.ho {
                        let iy = oy as isize * s - p + ki as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let (lo, hi) = self.valid_cols(kj);
                        let ix0 = (lo as isize * s - p + kj as isize) as usize;
                        let g = &src[oy * self.wo + lo..oy * self.wo + hi];
                        for (j, &v) in g.iter().enumerate() {
                            line[ix0 + j * s as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Var<T> {
    /// 2-d cross-correlation of `(B, Cin, H, W)` with a `(Cout, Cin, k, k)` kernel.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: Conv2dSpec) -> Result<Var<T>> {
        let (b, cin, h, w) = self.value().dims4()?;
        let (cout, wcin, kh, kw) = weight.value().dims4()?;
        if wcin != cin || kh != kw {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} incompatible with kernel {:?}", self.shape(), weight.shape()),
            ));
        }
        if let Some(bias) = bias {
            if bias.shape() != [cout] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {cout} outputs", bias.shape())));
            }
        }
        let (Some(ho), Some(wo)) = (spec.output_size(h, kh), spec.output_size(w, kw)) else {
            return Err(Error::shape("conv2d", format!("kernel {kh} too large for {h}x{w} with {spec:?}")));
        };
        let geo = Geometry { cin, h, w, k: kh, ho, wo, spec };
        let (rows, cols) = (geo.rows(), geo.cols());
        let xd = self.value().data();
        let wd = weight.value().data();
        let mut out = vec![T::zero(); b * cout * cols];
        let mut col = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols] };
        for bi in 0..b {
            let xb = &xd[bi * cin * h * w..(bi + 1) * cin * h * w];
            let colm = if geo.is_pointwise() {
                MatRef::row_major(xb, 0, rows, cols)
            } else {
                geo.im2col(xb, &mut col);
                MatRef::row_major(&col, 0, rows, cols)
            };
            gemm(T::one(), MatRef::row_major(wd, 0, cout, rows), colm, T::zero(), &mut out, bi * cout * cols);
        }
        if let Some(bias) = bias {
            let bd = bias.value().data();
            for (i, chunk) in out.chunks_exact_mut(cols).enumerate() {
                let bv = bd[i % cout];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::from_parts(vec![b, cout, ho, wo], out);
        let (x, wt) = (self.value_rc(), weight.value_rc());
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(Var::from_op(value, &parents, move |g, needs| {
            let gd = g.data();
            let (xd, wd) = (x.data(), wt.data());
            let mut dx = needs[0].then(|| vec![T::zero(); xd.len()]);
            let mut dw = needs[1].then(|| vec![T::zero(); wd.len()]);
            let mut col = vec![T::zero(); if geo.is_pointwise() { 0 } else { rows * cols }];
            let mut dcol = vec![T::zero(); rows * cols];
            for bi in 0..b {
                let gb = MatRef::row_major(gd, bi * cout * cols, cout, cols);
                if let Some(dw) = dw.as_mut() {
                    let xb = &xd[bi * cin * h * w..(bi + 1) * cin * h * w];
                    let colm = if geo.is_pointwise() {
                        MatRef::row_major(xb, 0, rows, cols)
                    } else {
                        geo.im2col(xb, &mut col);
                        MatRef::row_major(&col, 0, rows, cols)
                    };
                    gemm(T::one(), gb, colm.t(), T::one(), dw, 0);
                }
                if let Some(dx) = dx.as_mut() {
                    let wm = MatRef::row_major(wd, 0, cout, rows).t();
                    let dxb = &mut dx[bi * cin * h * w..(bi + 1) * cin * h * w];
                    if geo.is_pointwise() {
                        gemm(T::one(), wm, gb, T::zero(), dxb, 0);
                    } else {
                        gemm(T::one(), wm, gb, T::zero(), &mut dcol, 0);
                        geo.col2im_add(&dcol, dxb);
                    }
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(wt.shape().to_vec(), d)),
            ];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| {
                    let mut db = vec![T::zero(); cout];
                    for (i, chunk) in gd.chunks_exact(cols).enumerate() {
                        db[i % cout] += chunk.iter().copied().sum::<T>();
                    }
                    Tensor::from_parts(vec![cout], db)
                }));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    /// Direct seven-loop convolution.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, spec: Conv2dSpec) -> Tensor<f64> {
        let (b, cin, h, wd) = x.dims4().unwrap();
        let (cout, _, k, _) = w.dims4().unwrap();
        let ho = spec.output_size(h, k).unwrap();
        let wo = spec.output_size(wd, k).unwrap();
        let mut out = Tensor::zeros(vec![b, cout, ho, wo]);
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * spec.stride + ki) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kj) as isize - spec.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.at(&[bi, ci, iy as usize, ix as usize]) * w.at(&[co, ci, ki, kj]);
                                    }
                                }
                            }
                        }
                        let off = out.offset(&[bi, co, oy, ox]);
                        out.data_mut()[off] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_for_several_geometries() {
        for (k, stride, padding) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0), (7, 1, 3)] {
            let spec = Conv2dSpec { stride, padding };
            let x = Tensor::from_fn(vec![2, 3, 9, 8], |i| ((i * 31) % 17) as f64 - 8.0);
            let w = Tensor::from_fn(vec![4, 3, k, k], |i| ((i * 13) % 7) as f64 * 0.25 - 0.5);
            let y = Var::constant(x.clone()).conv2d(&Var::constant(w.clone()), None, spec).unwrap();
            assert_eq!(y.value(), &naive(&x, &w, spec), "k={k} stride={stride}");
        }
    }

    #[test]
    fn input_gradient_is_adjoint_of_forward() {
        // <conv(x), g> = <x, conv^T(g)> for linear maps
        let spec = Conv2dSpec { stride: 2, padding: 1 };
        let x = Tensor::from_fn(vec![1, 2, 7, 6], |i| (i as f64 * 0.37).sin());
        let w = Tensor::from_fn(vec![3, 2, 3, 3], |i| (i as f64 * 0.11).cos());
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = xv.conv2d(&Var::constant(w), None, spec).unwrap();
        let seed = Tensor::from_fn(y.shape().to_vec(), |i| (i as f64 * 0.73).sin());
        let lhs: f64 = y.value().data().iter().zip(seed.data()).map(|(a, b)| a * b).sum();
        let g = y.backward_with(seed);
        let rhs: f64 = x.data().iter().zip(g.get(&xv).unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
