//! Forward and reverse-mode computation for the four convolution families
//! (strict/relaxed group convolution, strict/relaxed steerable convolution),
//! the low-rank translation relaxation, and the elementwise nonlinearity.
//!
//! Every layer materializes an effective plain kernel and runs the shared
//! direct convolution below: zero padding, stride 1, same-size output.

mod gconv;
mod steer;

pub use gconv::{GroupConvLayer, RelaxedGroupConvLayer};
pub use steer::{
    LowRankSteerableConvLayer, RelaxedSteerableConvLayer, SpatialWeights, SteerableConvLayer,
};

use crate::error::{Error, Result};
use crate::group::FeatureField;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// out(o, x) = sum_{i, y} K[o, i, y] * in[i, x + y], offsets y in [-k, k]^2,
/// inputs outside the grid treated as zero.
pub(crate) fn conv2d_same<T: Scalar>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    c_out: usize,
    ks: usize,
) -> Vec<T> {
    let k = (ks / 2) as isize;
    let mut out = vec![T::zero(); c_out * h * w];
    for o in 0..c_out {
        let out_ch = &mut out[o * h * w..(o + 1) * h * w];
        for i in 0..c_in {
            let in_ch = &input[i * h * w..(i + 1) * h * w];
            let k_base = (o * c_in + i) * ks * ks;
            for ky in 0..ks {
                let dy = ky as isize - k;
                for kx in 0..ks {
                    let dx = kx as isize - k;
                    let kv = kernel[k_base + ky * ks + kx];
                    if kv == T::zero() {
                        continue;
                    }
                    let r0 = (-dy).max(0) as usize;
                    let r1 = (h as isize - dy).min(h as isize) as usize;
                    let c0 = (-dx).max(0) as usize;
                    let c1 = (w as isize - dx).min(w as isize) as usize;
                    for r in r0..r1 {
                        let src_row = ((r as isize + dy) as usize) * w;
                        let dst_row = r * w;
                        for c in c0..c1 {
                            out_ch[dst_row + c] +=
                                kv * in_ch[src_row + (c as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `conv2d_same` w.r.t. its input: df(z) = sum_y K[.,.,y]^T u(z - y).
pub(crate) fn conv2d_same_input_grad<T: Scalar>(
    upstream: &[T],
    c_out: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    c_in: usize,
    ks: usize,
) -> Vec<T> {
    let k = (ks / 2) as isize;
    let mut din = vec![T::zero(); c_in * h * w];
    for o in 0..c_out {
        let up_ch = &upstream[o * h * w..(o + 1) * h * w];
        for i in 0..c_in {
            let din_ch = &mut din[i * h * w..(i + 1) * h * w];
            let k_base = (o * c_in + i) * ks * ks;
            for ky in 0..ks {
                let dy = ky as isize - k;
                for kx in 0..ks {
                    let dx = kx as isize - k;
                    let kv = kernel[k_base + ky * ks + kx];
                    if kv == T::zero() {
                        continue;
                    }
                    // din[r + dy, c + dx] += kv * up[r, c] over the same
                    // valid region as the forward pass
                    let r0 = (-dy).max(0) as usize;
                    let r1 = (h as isize - dy).min(h as isize) as usize;
                    let c0 = (-dx).max(0) as usize;
                    let c1 = (w as isize - dx).min(w as isize) as usize;
                    for r in r0..r1 {
                        let dst_row = ((r as isize + dy) as usize) * w;
                        let src_row = r * w;
                        for c in c0..c1 {
                            din_ch[dst_row + (c as isize + dx) as usize] +=
                                kv * up_ch[src_row + c];
                        }
                    }
                }
            }
        }
    }
    din
}

/// Gradient of `conv2d_same` w.r.t. its kernel:
/// dK[o, i, y] = sum_x u[o, x] * f[i, x + y].
pub(crate) fn conv2d_same_kernel_grad<T: Scalar>(
    input: &[T],
    upstream: &[T],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    ks: usize,
) -> Vec<T> {
    let k = (ks / 2) as isize;
    let mut dk = vec![T::zero(); c_out * c_in * ks * ks];
    for o in 0..c_out {
        let up_ch = &upstream[o * h * w..(o + 1) * h * w];
        for i in 0..c_in {
            let in_ch = &input[i * h * w..(i + 1) * h * w];
            let k_base = (o * c_in + i) * ks * ks;
            for ky in 0..ks {
                let dy = ky as isize - k;
                for kx in 0..ks {
                    let dx = kx as isize - k;
                    let r0 = (-dy).max(0) as usize;
                    let r1 = (h as isize - dy).min(h as isize) as usize;
                    let c0 = (-dx).max(0) as usize;
                    let c1 = (w as isize - dx).min(w as isize) as usize;
                    let mut acc = T::zero();
                    for r in r0..r1 {
                        let src_row = ((r as isize + dy) as usize) * w;
                        let up_row = r * w;
                        for c in c0..c1 {
                            acc += up_ch[up_row + c] * in_ch[src_row + (c as isize + dx) as usize];
                        }
                    }
                    dk[k_base + ky * ks + kx] += acc;
                }
            }
        }
    }
    dk
}

/// Elementwise rectifier. Permutation channel actions (regular rep) commute
/// with it, so it preserves equivariance of regular-rep features.
pub fn relu<T: Scalar>(f: &FeatureField<T>) -> FeatureField<T> {
    FeatureField {
        data: f.data.map(|x| if x > T::zero() { x } else { T::zero() }),
        rep: f.rep.clone(),
        group: f.group,
    }
}

/// Reverse-mode rectifier; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(
    input: &FeatureField<T>,
    upstream: &FeatureField<T>,
) -> Result<FeatureField<T>> {
    if input.data.dims() != upstream.data.dims() {
        return Err(Error::Shape(format!(
            "relu backward dims {:?} vs {:?}",
            input.data.dims(),
            upstream.data.dims()
        )));
    }
    let data = Tensor::from_vec(
        &input.data.dims().to_vec(),
        input
            .data
            .data()
            .iter()
            .zip(upstream.data.data().iter())
            .map(|(&x, &u)| if x > T::zero() { u } else { T::zero() })
            .collect(),
    )?;
    Ok(FeatureField {
        data,
        rep: input.rep.clone(),
        group: input.group,
    })
}
