use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch statistics observed in a training-mode batch-norm call.
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased variance.
    pub var: Tensor<T>,
}

impl<T: Scalar> Var<T> {
    /// Batch normalisation over `(B, H, W)` per channel.
    ///
    /// With `running = None` batch statistics are used and returned; otherwise
    /// the given running mean/variance normalise the input.
    pub fn batch_norm2d(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        running: Option<(&Tensor<T>, &Tensor<T>)>,
        eps: T,
    ) -> Result<(Var<T>, Option<BatchStats<T>>)> {
        let (b, c, h, w) = self.value().dims4()?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("batch_norm2d", format!("affine params for {c} channels")));
        }
        let hw = h * w;
        let n = b * hw;
        let xd = self.value().data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let stats = match running {
            Some((rm, rv)) => {
                mean.copy_from_slice(rm.data());
                var.copy_from_slice(rv.data());
                None
            }
            None => {
                let nn = T::from_usize_lossy(n);
                for bi in 0..b {
                    for ci in 0..c {
                        let s: T = xd[(bi * c + ci) * hw..(bi * c + ci + 1) * hw].iter().copied().sum();
                        mean[ci] += s;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nn);
                for bi in 0..b {
                    for ci in 0..c {
                        let m = mean[ci];
                        let s: T = xd[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]
                            .iter()
                            .map(|&v| (v - m) * (v - m))
                            .sum();
                        var[ci] += s;
                    }
                }
                var.iter_mut().for_each(|v| *v /= nn);
                let unbiased = if n > 1 {
                    var.iter().map(|&v| v * nn / (nn - T::one())).collect()
                } else {
                    var.clone()
                };
                Some(BatchStats {
                    mean: Tensor::from_parts(vec![c], mean.clone()),
                    var: Tensor::from_parts(vec![c], unbiased),
                })
            }
        };
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
                for i in r {
                    let xh = (xd[i] - mean[ci]) * invstd[ci];
                    xhat[i] = xh;
                    out[i] = gd[ci] * xh + bd[ci];
                }
            }
        }
        let training = running.is_none();
        let gamma_v = gamma.value_rc();
        let shape = self.shape().to_vec();
        let value = Tensor::from_parts(shape.clone(), out);
        let var = Var::from_op(value, &[self, gamma, beta], move |g, needs| {
            let gdata = g.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    for i in (bi * c + ci) * hw..(bi * c + ci + 1) * hw {
                        sum_g[ci] += gdata[i];
                        sum_gx[ci] += gdata[i] * xhat[i];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let gam = gamma_v.data();
                let nn = T::from_usize_lossy(n);
                let mut dx = vec![T::zero(); gdata.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let k = gam[ci] * invstd[ci];
                        for i in (bi * c + ci) * hw..(bi * c + ci + 1) * hw {
                            dx[i] = if training {
                                k * (gdata[i] - (sum_g[ci] + xhat[i] * sum_gx[ci]) / nn)
                            } else {
                                k * gdata[i]
                            };
                        }
                    }
                }
                Tensor::from_parts(shape.clone(), dx)
            });
            vec![
                dx,
                needs[1].then(|| Tensor::from_parts(vec![c], sum_gx.clone())),
                needs[2].then(|| Tensor::from_parts(vec![c], sum_g.clone())),
            ]
        });
        Ok((var, stats))
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let d = *self.shape().last().ok_or_else(|| Error::shape("layer_norm", "rank 0"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", format!("affine params for {d} features")));
        }
        let xd = self.value().data();
        let rows = xd.len() / d;
        let dd = T::from_usize_lossy(d);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut invstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let m = row.iter().copied().sum::<T>() / dd;
            let v = row.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / dd;
            let is = T::one() / (v + eps).sqrt();
            invstd[r] = is;
            for j in 0..d {
                let xh = (row[j] - m) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = gd[j] * xh + bd[j];
            }
        }
        let gamma_v = gamma.value_rc();
        let shape = self.shape().to_vec();
        Ok(Var::from_op(Tensor::from_parts(shape.clone(), out), &[self, gamma, beta], move |g, needs| {
            let gdata = g.data();
            let gam = gamma_v.data();
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            let mut dx = vec![T::zero(); gdata.len()];
            for r in 0..rows {
                let (mut sg, mut sgx) = (T::zero(), T::zero());
                for j in 0..d {
                    let i = r * d + j;
                    let gh = gdata[i] * gam[j];
                    sg += gh;
                    sgx += gh * xhat[i];
                    dgamma[j] += gdata[i] * xhat[i];
                    dbeta[j] += gdata[i];
                }
                for j in 0..d {
                    let i = r * d + j;
                    dx[i] = invstd[r] * (gdata[i] * gam[j] - (sg + xhat[i] * sgx) / dd);
                }
            }
            vec![
                needs[0].then(|| Tensor::from_parts(shape.clone(), dx)),
                needs[1].then(|| Tensor::from_parts(vec![d], dgamma)),
                needs[2].then(|| Tensor::from_parts(vec![d], dbeta)),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_mode_normalises_each_channel() {
        let x = Var::constant(Tensor::<f64>::from_fn(vec![2, 3, 4, 4], |i| (i as f64 * 1.3).sin() * 4.0 + 2.0));
        let gamma = Var::constant(Tensor::ones(vec![3]));
        let beta = Var::constant(Tensor::zeros(vec![3]));
        let (y, stats) = x.batch_norm2d(&gamma, &beta, None, 1e-5).unwrap();
        assert!(stats.is_some());
        let m = y.mean_axes(&[0, 2, 3]).unwrap();
        assert!(m.value().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_input_maps_to_beta() {
        let x = Var::constant(Tensor::<f32>::zeros(vec![1, 2, 3, 3]));
        let gamma = Var::constant(Tensor::ones(vec![2]));
        let beta = Var::constant(Tensor::new(vec![2], vec![0.0, 0.5]).unwrap());
        let (y, _) = x.batch_norm2d(&gamma, &beta, None, 1e-5).unwrap();
        assert!(y.value().data()[..9].iter().all(|&v| v == 0.0));
        assert!(y.value().data()[9..].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let x = Var::constant(Tensor::<f64>::from_fn(vec![2, 3, 8], |i| (i * i % 7) as f64));
        let y = x
            .layer_norm(&Var::constant(Tensor::ones(vec![8])), &Var::constant(Tensor::zeros(vec![8])), 1e-9)
            .unwrap();
        for row in y.value().data().chunks(8) {
            let m: f64 = row.iter().sum::<f64>() / 8.0;
            let v: f64 = row.iter().map(|x| x * x).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-6);
        }
    }
}
