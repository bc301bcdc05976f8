//! Forward and backward kernels for the layer catalogue.
//!
//! All kernels are plain loops over contiguous `Vec`s; weight layouts are
//! row-major `[out, in]` for dense and `[c_out, c_in, k]` for convolutions.
//! Backward functions accumulate into caller-provided gradient buffers so a
//! batch loop reuses one allocation.

use super::scalar::Scalar;

/// Divisor guard inside layer normalization.
pub const LN_EPS: f64 = 1e-5;

/// SELU constants from the self-normalizing network fixed point.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
    Elu,
    Selu,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Linear => x,
            Activation::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => S::one() / (S::one() + (-x).exp()),
            Activation::Elu => {
                if x > S::zero() {
                    x
                } else {
                    x.exp() - S::one()
                }
            }
            Activation::Selu => {
                let lambda = S::c(SELU_LAMBDA);
                if x > S::zero() {
                    lambda * x
                } else {
                    lambda * S::c(SELU_ALPHA) * (x.exp() - S::one())
                }
            }
        }
    }

    /// Derivative given pre-activation `x` and output `y = apply(x)`.
    pub fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Activation::Linear => S::one(),
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => S::one() - y * y,
            Activation::Sigmoid => y * (S::one() - y),
            Activation::Elu => {
                if x > S::zero() {
                    S::one()
                } else {
                    y + S::one()
                }
            }
            Activation::Selu => {
                if x > S::zero() {
                    S::c(SELU_LAMBDA)
                } else {
                    y + S::c(SELU_LAMBDA) * S::c(SELU_ALPHA)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Elu => "elu",
            Activation::Selu => "selu",
        }
    }
}

/// y[o] = b[o] + sum_i w[o*n_in + i] * x[i]
pub fn dense_forward<S: Scalar>(w: &[S], b: &[S], x: &[S], n_out: usize, n_in: usize) -> Vec<S> {
    debug_assert_eq!(w.len(), n_out * n_in);
    debug_assert_eq!(x.len(), n_in);
    let mut y = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b[o];
        for i in 0..n_in {
            acc += row[i] * x[i];
        }
        y.push(acc);
    }
    y
}

pub fn dense_backward<S: Scalar>(
    w: &[S],
    x: &[S],
    g: &[S],
    n_out: usize,
    n_in: usize,
    dw: &mut [S],
    db: &mut [S],
    dx: &mut [S],
) {
    for o in 0..n_out {
        let go = g[o];
        db[o] += go;
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += go * x[i];
            dx[i] += go * row[i];
        }
    }
}

/// Same-padded 1D convolution over `c_in` channels of length `l`.
/// y[co, t] = b[co] + sum_{ci, j} w[co, ci, j] * x[ci, t + j - pad]
pub fn conv1d_forward<S: Scalar>(
    w: &[S],
    b: &[S],
    x: &[S],
    c_in: usize,
    c_out: usize,
    l: usize,
    k: usize,
) -> Vec<S> {
    let pad = (k - 1) / 2;
    let mut y = vec![S::zero(); c_out * l];
    for co in 0..c_out {
        let yrow = &mut y[co * l..(co + 1) * l];
        for t in 0..l {
            yrow[t] = b[co];
        }
        for ci in 0..c_in {
            let xrow = &x[ci * l..(ci + 1) * l];
            let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            for j in 0..k {
                let wj = wrow[j];
                // t + j - pad must land in [0, l)
                let t_lo = pad.saturating_sub(j);
                let t_hi = (l + pad).saturating_sub(j).min(l);
                for t in t_lo..t_hi {
                    yrow[t] += wj * xrow[t + j - pad];
                }
            }
        }
    }
    y
}

pub fn conv1d_backward<S: Scalar>(
    w: &[S],
    x: &[S],
    g: &[S],
    c_in: usize,
    c_out: usize,
    l: usize,
    k: usize,
    dw: &mut [S],
    db: &mut [S],
    dx: &mut [S],
) {
    let pad = (k - 1) / 2;
    for co in 0..c_out {
        let grow = &g[co * l..(co + 1) * l];
        for t in 0..l {
            db[co] += grow[t];
        }
        for ci in 0..c_in {
            let xrow = &x[ci * l..(ci + 1) * l];
            let dxrow = &mut dx[ci * l..(ci + 1) * l];
            let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            let dwrow = &mut dw[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            for j in 0..k {
                let t_lo = pad.saturating_sub(j);
                let t_hi = (l + pad).saturating_sub(j).min(l);
                for t in t_lo..t_hi {
                    let s = t + j - pad;
                    dwrow[j] += grow[t] * xrow[s];
                    dxrow[s] += grow[t] * wrow[j];
                }
            }
        }
    }
}

/// Per-sample standardization cache reused by backward.
pub struct LnCache<S> {
    pub xhat: Vec<S>,
    pub inv_std: S,
}

/// y = gain * (z - mean) / sqrt(var + eps) + offset, statistics over the
/// whole per-sample feature vector.
pub fn layer_norm_forward<S: Scalar>(z: &[S], gain: &[S], offset: &[S]) -> (Vec<S>, LnCache<S>) {
    let n = S::c(z.len() as f64);
    let mut mean = S::zero();
    for &v in z {
        mean += v;
    }
    mean /= n;
    let mut var = S::zero();
    for &v in z {
        let d = v - mean;
        var += d * d;
    }
    var /= n;
    let inv_std = S::one() / (var + S::c(LN_EPS)).sqrt();
    let mut xhat = Vec::with_capacity(z.len());
    let mut y = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let h = (z[i] - mean) * inv_std;
        xhat.push(h);
        y.push(gain[i] * h + offset[i]);
    }
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward<S: Scalar>(
    cache: &LnCache<S>,
    gain: &[S],
    g: &[S],
    dgain: &mut [S],
    doffset: &mut [S],
    dz: &mut [S],
) {
    let n = cache.xhat.len();
    let nf = S::c(n as f64);
    let mut mean_dxhat = S::zero();
    let mut mean_dxhat_xhat = S::zero();
    for i in 0..n {
        let dxh = g[i] * gain[i];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * cache.xhat[i];
    }
    mean_dxhat /= nf;
    mean_dxhat_xhat /= nf;
    for i in 0..n {
        dgain[i] += g[i] * cache.xhat[i];
        doffset[i] += g[i];
        let dxh = g[i] * gain[i];
        dz[i] += cache.inv_std * (dxh - mean_dxhat - cache.xhat[i] * mean_dxhat_xhat);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dense_identity() {
        // 2x2 identity weights, zero bias.
        let w = vec![1.0f64, 0.0, 0.0, 1.0];
        let b = vec![0.0, 0.0];
        let y = dense_forward(&w, &b, &[3.0, -2.0], 2, 2);
        assert_eq!(y, vec![3.0, -2.0]);
    }

    #[test]
    fn dense_scalar_tanh_path() {
        // w = 2, b = 0.5, x = 1 -> tanh(2.5)
        let z = dense_forward(&[2.0f64], &[0.5], &[1.0], 1, 1);
        let y = Activation::Tanh.apply(z[0]);
        assert_relative_eq!(y, (2.5f64).tanh(), max_relative = 1e-15);
    }

    #[test]
    fn layer_norm_standardizes() {
        let z = vec![1.0f64, 2.0, 3.0, 4.0];
        let gain = vec![1.0; 4];
        let offset = vec![0.0; 4];
        let (y, _) = layer_norm_forward(&z, &gain, &offset);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert_relative_eq!(var, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn conv_same_padding_identity_kernel() {
        // kernel [0,1,0] reproduces the input, 1 channel.
        let w = vec![0.0f64, 1.0, 0.0];
        let b = vec![0.0];
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = conv1d_forward(&w, &b, &x, 1, 1, 4, 3);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_shift_kernel_zero_pads() {
        // kernel [1,0,0] shifts left neighbour in; first element sees padding.
        let w = vec![1.0f64, 0.0, 0.0];
        let b = vec![0.0];
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = conv1d_forward(&w, &b, &x, 1, 1, 4, 3);
        assert_eq!(y, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn selu_constants_fixed_point_shape() {
        // selu(0) = 0, slope lambda above zero.
        assert_eq!(Activation::Selu.apply(0.0f64), 0.0);
        assert_relative_eq!(Activation::Selu.apply(1.0f64), SELU_LAMBDA, max_relative = 1e-12);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let acts = [
            Activation::Linear,
            Activation::Relu,
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Elu,
            Activation::Selu,
        ];
        let h = 1e-6f64;
        for act in acts {
            for &x in &[-1.7, -0.3, 0.4, 2.1] {
                let y = act.apply(x);
                let d = act.derivative(x, y);
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert_relative_eq!(d, fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }
}
