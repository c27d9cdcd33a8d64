//! Group convolution over the roto-translation group: regular-representation
//! features on a grid, kernels indexed by a relative rotation, spatial offsets
//! rotated per output rotation channel.

use super::{conv2d_same, conv2d_same_input_grad, conv2d_same_kernel_grad};
use crate::error::{Error, Result};
use crate::group::{rotate_grid, rotate_grid_adjoint, CyclicGroup, FeatureField, Representation};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Strictly equivariant group convolution. Output rotation channel r sees the
/// kernel bank at relative rotation (s - r) mod n with spatial offsets rotated
/// by r (exact index rotation for quarter turns).
#[derive(Clone, Debug)]
pub struct GroupConvLayer<T> {
    pub group: CyclicGroup,
    pub out_mult: usize,
    pub in_mult: usize,
    pub k: usize,
    /// (n, out_mult, in_mult, ks, ks), trainable.
    pub kernel: Tensor<T>,
}

impl<T: Scalar> GroupConvLayer<T> {
    pub fn zeros(group: CyclicGroup, out_mult: usize, in_mult: usize, k: usize) -> Self {
        let ks = 2 * k + 1;
        GroupConvLayer {
            group,
            out_mult,
            in_mult,
            k,
            kernel: Tensor::zeros(&[group.order(), out_mult, in_mult, ks, ks]),
        }
    }

    pub fn forward(&self, f: &FeatureField<T>) -> Result<FeatureField<T>> {
        let plain = materialize_gconv(
            self.group,
            std::slice::from_ref(&self.kernel),
            None,
            self.out_mult,
            self.in_mult,
            self.k,
        )?;
        gconv_apply(self.group, f, &plain, self.out_mult, self.in_mult, self.k)
    }

    /// Returns (grad wrt input, grad wrt kernel).
    pub fn backward(
        &self,
        f: &FeatureField<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Tensor<T>)> {
        let plain = materialize_gconv(
            self.group,
            std::slice::from_ref(&self.kernel),
            None,
            self.out_mult,
            self.in_mult,
            self.k,
        )?;
        let (din, dplain) =
            gconv_apply_backward(self.group, f, upstream, &plain, self.out_mult, self.in_mult, self.k)?;
        let (mut dbanks, _) = scatter_gconv_grad(
            self.group,
            std::slice::from_ref(&self.kernel),
            None,
            &dplain,
            self.out_mult,
            self.in_mult,
            self.k,
        )?;
        Ok((din, dbanks.pop().unwrap()))
    }
}

/// Relaxed group convolution: L kernel banks combined with weights w_l(s)
/// that depend on the input rotation channel, breaking strict equivariance
/// when the weights vary over the group.
#[derive(Clone, Debug)]
pub struct RelaxedGroupConvLayer<T> {
    pub group: CyclicGroup,
    pub out_mult: usize,
    pub in_mult: usize,
    pub k: usize,
    /// L banks, each (n, out_mult, in_mult, ks, ks), trainable.
    pub banks: Vec<Tensor<T>>,
    /// (L, n) relaxation weights, trainable.
    pub w: Tensor<T>,
}

impl<T: Scalar> RelaxedGroupConvLayer<T> {
    pub fn new(
        group: CyclicGroup,
        out_mult: usize,
        in_mult: usize,
        k: usize,
        banks: Vec<Tensor<T>>,
        w: Tensor<T>,
    ) -> Result<Self> {
        if banks.is_empty() {
            return Err(Error::Config("relaxed group conv needs L >= 1 banks".into()));
        }
        let ks = 2 * k + 1;
        for b in &banks {
            if b.dims() != [group.order(), out_mult, in_mult, ks, ks] {
                return Err(Error::Shape(format!(
                    "bank dims {:?}, expected {:?}",
                    b.dims(),
                    [group.order(), out_mult, in_mult, ks, ks]
                )));
            }
        }
        if w.dims() != [banks.len(), group.order()] {
            return Err(Error::Shape(format!(
                "relaxation weight dims {:?}, expected {:?}",
                w.dims(),
                [banks.len(), group.order()]
            )));
        }
        Ok(RelaxedGroupConvLayer {
            group,
            out_mult,
            in_mult,
            k,
            banks,
            w,
        })
    }

    pub fn num_banks(&self) -> usize {
        self.banks.len()
    }

    pub fn forward(&self, f: &FeatureField<T>) -> Result<FeatureField<T>> {
        let plain = materialize_gconv(
            self.group,
            &self.banks,
            Some(&self.w),
            self.out_mult,
            self.in_mult,
            self.k,
        )?;
        gconv_apply(self.group, f, &plain, self.out_mult, self.in_mult, self.k)
    }

    /// Returns (grad wrt input, grads wrt banks, grad wrt w).
    pub fn backward(
        &self,
        f: &FeatureField<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Vec<Tensor<T>>, Tensor<T>)> {
        let plain = materialize_gconv(
            self.group,
            &self.banks,
            Some(&self.w),
            self.out_mult,
            self.in_mult,
            self.k,
        )?;
        let (din, dplain) =
            gconv_apply_backward(self.group, f, upstream, &plain, self.out_mult, self.in_mult, self.k)?;
        let (dbanks, dw) = scatter_gconv_grad(
            self.group,
            &self.banks,
            Some(&self.w),
            &dplain,
            self.out_mult,
            self.in_mult,
            self.k,
        )?;
        Ok((din, dbanks, dw.unwrap()))
    }
}

fn check_regular_input<T: Scalar>(
    group: CyclicGroup,
    in_mult: usize,
    f: &FeatureField<T>,
) -> Result<()> {
    let n = group.order();
    if f.group != group {
        return Err(Error::Config("input field group does not match layer".into()));
    }
    if f.channels() % n != 0 || f.channels() != in_mult * n {
        return Err(Error::Shape(format!(
            "group conv expects {} regular channels, got {}",
            in_mult * n,
            f.channels()
        )));
    }
    Ok(())
}

/// Effective plain kernel (out_mult*n, in_mult*n, ks, ks):
/// plain[(u, r), (v, s)] = sum_l w_l(s) * rot_r(bank_l[(s - r) mod n])[u, v].
fn materialize_gconv<T: Scalar>(
    group: CyclicGroup,
    banks: &[Tensor<T>],
    w: Option<&Tensor<T>>,
    out_mult: usize,
    in_mult: usize,
    k: usize,
) -> Result<Tensor<T>> {
    let n = group.order();
    let ks = 2 * k + 1;
    let sp = ks * ks;
    let chans = n * out_mult * in_mult;
    let mut plain = Tensor::zeros(&[out_mult * n, in_mult * n, ks, ks]);
    for r in 0..n {
        for (l, bank) in banks.iter().enumerate() {
            let rot = rotate_grid(bank.data(), chans, ks, ks, group, r)?;
            for s in 0..n {
                let wls = match w {
                    Some(w) => w.at(&[l, s]),
                    None => T::one(),
                };
                if wls == T::zero() {
                    continue;
                }
                let b = (s + n - r) % n;
                for u in 0..out_mult {
                    for v in 0..in_mult {
                        let src = ((b * out_mult + u) * in_mult + v) * sp;
                        let dst = ((u * n + r) * (in_mult * n) + (v * n + s)) * sp;
                        for y in 0..sp {
                            plain.data_mut()[dst + y] += wls * rot[src + y];
                        }
                    }
                }
            }
        }
    }
    Ok(plain)
}

/// Routes a gradient w.r.t. the effective plain kernel back onto the banks
/// and relaxation weights (adjoint of `materialize_gconv`).
fn scatter_gconv_grad<T: Scalar>(
    group: CyclicGroup,
    banks: &[Tensor<T>],
    w: Option<&Tensor<T>>,
    dplain: &Tensor<T>,
    out_mult: usize,
    in_mult: usize,
    k: usize,
) -> Result<(Vec<Tensor<T>>, Option<Tensor<T>>)> {
    let n = group.order();
    let ks = 2 * k + 1;
    let sp = ks * ks;
    let chans = n * out_mult * in_mult;
    let mut dbanks: Vec<Tensor<T>> = banks.iter().map(|b| Tensor::zeros(b.dims())).collect();
    let mut dw = w.map(|w| Tensor::zeros(w.dims()));
    for r in 0..n {
        // gather the rotated view of dplain for this output rotation
        let mut drot_per_bank: Vec<Vec<T>> = vec![vec![T::zero(); chans * sp]; banks.len()];
        for (l, bank) in banks.iter().enumerate() {
            let rot = rotate_grid(bank.data(), chans, ks, ks, group, r)?;
            for s in 0..n {
                let b = (s + n - r) % n;
                let wls = match w {
                    Some(w) => w.at(&[l, s]),
                    None => T::one(),
                };
                for u in 0..out_mult {
                    for v in 0..in_mult {
                        let rot_off = ((b * out_mult + u) * in_mult + v) * sp;
                        let plain_off = ((u * n + r) * (in_mult * n) + (v * n + s)) * sp;
                        let mut dot = T::zero();
                        for y in 0..sp {
                            let dp = dplain.data()[plain_off + y];
                            drot_per_bank[l][rot_off + y] += wls * dp;
                            dot += dp * rot[rot_off + y];
                        }
                        if let Some(dw) = dw.as_mut() {
                            *dw.at_mut(&[l, s]) += dot;
                        }
                    }
                }
            }
        }
        for (l, drot) in drot_per_bank.iter().enumerate() {
            let back = rotate_grid_adjoint(drot, chans, ks, ks, group, r)?;
            for (dst, src) in dbanks[l].data_mut().iter_mut().zip(back.iter()) {
                *dst += *src;
            }
        }
    }
    Ok((dbanks, dw))
}

fn gconv_apply<T: Scalar>(
    group: CyclicGroup,
    f: &FeatureField<T>,
    plain: &Tensor<T>,
    out_mult: usize,
    in_mult: usize,
    k: usize,
) -> Result<FeatureField<T>> {
    check_regular_input(group, in_mult, f)?;
    let n = group.order();
    let (h, w) = (f.height(), f.width());
    let out = conv2d_same(
        f.data.data(),
        in_mult * n,
        h,
        w,
        plain.data(),
        out_mult * n,
        2 * k + 1,
    );
    FeatureField::new(
        Tensor::from_vec(&[out_mult * n, h, w], out)?,
        Representation::Regular,
        group,
    )
}

fn gconv_apply_backward<T: Scalar>(
    group: CyclicGroup,
    f: &FeatureField<T>,
    upstream: &FeatureField<T>,
    plain: &Tensor<T>,
    out_mult: usize,
    in_mult: usize,
    k: usize,
) -> Result<(FeatureField<T>, Tensor<T>)> {
    check_regular_input(group, in_mult, f)?;
    let n = group.order();
    let (h, w) = (f.height(), f.width());
    let ks = 2 * k + 1;
    if upstream.data.dims() != [out_mult * n, h, w] {
        return Err(Error::Shape(format!(
            "group conv upstream dims {:?}, expected {:?}",
            upstream.data.dims(),
            [out_mult * n, h, w]
        )));
    }
    let din = conv2d_same_input_grad(
        upstream.data.data(),
        out_mult * n,
        h,
        w,
        plain.data(),
        in_mult * n,
        ks,
    );
    let dplain = conv2d_same_kernel_grad(
        f.data.data(),
        upstream.data.data(),
        in_mult * n,
        out_mult * n,
        h,
        w,
        ks,
    );
    Ok((
        FeatureField::new(
            Tensor::from_vec(&[in_mult * n, h, w], din)?,
            Representation::Regular,
            group,
        )?,
        Tensor::from_vec(&[out_mult * n, in_mult * n, ks, ks], dplain)?,
    ))
}
