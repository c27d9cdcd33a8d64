//! Steerable convolutions built from a precomputed equivariant kernel basis,
//! their offset-dependent relaxation, and the low-rank translation relaxation.
//!
//! Weights are scalars per (output multiplicity, input multiplicity, basis
//! element); the effective kernel block (u, v) is sum_l w[u,v,l] * Phi_l,
//! which keeps the strict layer exactly equivariant for any weight value.

use super::{conv2d_same, conv2d_same_input_grad, conv2d_same_kernel_grad};
use crate::basis::KernelBasis;
use crate::error::{Error, Result};
use crate::group::FeatureField;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Strict G-steerable 2D convolution; equivariance is inherited from the
/// basis no matter the weights.
#[derive(Clone, Debug)]
pub struct SteerableConvLayer<T> {
    pub basis: KernelBasis<T>,
    pub out_mult: usize,
    pub in_mult: usize,
    /// (out_mult, in_mult, L), trainable.
    pub w: Tensor<T>,
}

impl<T: Scalar> SteerableConvLayer<T> {
    pub fn zeros(basis: KernelBasis<T>, out_mult: usize, in_mult: usize) -> Self {
        let l = basis.len();
        SteerableConvLayer {
            basis,
            out_mult,
            in_mult,
            w: Tensor::zeros(&[out_mult, in_mult, l]),
        }
    }

    pub fn forward(&self, f: &FeatureField<T>) -> Result<FeatureField<T>> {
        let plain = self.materialize();
        steer_apply(&self.basis, f, &plain, self.out_mult, self.in_mult)
    }

    /// Returns (grad wrt input, grad wrt w).
    pub fn backward(
        &self,
        f: &FeatureField<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Tensor<T>)> {
        let plain = self.materialize();
        let (din, dplain) =
            steer_apply_backward(&self.basis, f, upstream, &plain, self.out_mult, self.in_mult)?;
        let mut dw = Tensor::zeros(self.w.dims());
        let ks = self.basis.kernel_size();
        let sp = ks * ks;
        let (d_out, d_in) = (self.basis.d_out(), self.basis.d_in());
        for u in 0..self.out_mult {
            for v in 0..self.in_mult {
                for (l, phi) in self.basis.elems.iter().enumerate() {
                    let mut acc = T::zero();
                    for a in 0..d_out {
                        for b in 0..d_in {
                            let po = plain_offset(u, a, v, b, self.in_mult, d_out, d_in, sp);
                            let fo = (a * d_in + b) * sp;
                            for y in 0..sp {
                                acc += dplain.data()[po + y] * phi.data()[fo + y];
                            }
                        }
                    }
                    *dw.at_mut(&[u, v, l]) = acc;
                }
            }
        }
        Ok((din, dw))
    }

    /// Effective plain kernel (out_mult*d_out, in_mult*d_in, ks, ks).
    pub fn materialize(&self) -> Tensor<T> {
        let ks = self.basis.kernel_size();
        let sp = ks * ks;
        let (d_out, d_in) = (self.basis.d_out(), self.basis.d_in());
        let mut plain =
            Tensor::zeros(&[self.out_mult * d_out, self.in_mult * d_in, ks, ks]);
        for u in 0..self.out_mult {
            for v in 0..self.in_mult {
                for (l, phi) in self.basis.elems.iter().enumerate() {
                    let wl = self.w.at(&[u, v, l]);
                    if wl == T::zero() {
                        continue;
                    }
                    for a in 0..d_out {
                        for b in 0..d_in {
                            let po = plain_offset(u, a, v, b, self.in_mult, d_out, d_in, sp);
                            let fo = (a * d_in + b) * sp;
                            for y in 0..sp {
                                plain.data_mut()[po + y] += wl * phi.data()[fo + y];
                            }
                        }
                    }
                }
            }
        }
        plain
    }
}

/// Offset-dependent relaxation weights: either one weight tensor per kernel
/// offset, or one per angular sector of the offset vector (the center offset
/// gets its own dedicated slot since its angle is undefined).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpatialWeights {
    /// w indexed (ky, kx, out_mult, in_mult, L).
    PerOffset,
    /// w indexed (sector, out_mult, in_mult, L) with `n_angles` sectors of
    /// [0, 2pi) plus slot n_angles for the center offset.
    Angular { n_angles: usize },
}

/// Relaxed steerable convolution: basis coefficients vary with the kernel
/// offset, trading strict equivariance for expressivity.
#[derive(Clone, Debug)]
pub struct RelaxedSteerableConvLayer<T> {
    pub basis: KernelBasis<T>,
    pub out_mult: usize,
    pub in_mult: usize,
    pub kind: SpatialWeights,
    /// PerOffset: (ks, ks, out_mult, in_mult, L); Angular: (n_angles + 1,
    /// out_mult, in_mult, L). Trainable.
    pub w: Tensor<T>,
}

impl<T: Scalar> RelaxedSteerableConvLayer<T> {
    pub fn weight_dims(
        basis: &KernelBasis<T>,
        out_mult: usize,
        in_mult: usize,
        kind: &SpatialWeights,
    ) -> Vec<usize> {
        let ks = basis.kernel_size();
        match kind {
            SpatialWeights::PerOffset => vec![ks, ks, out_mult, in_mult, basis.len()],
            SpatialWeights::Angular { n_angles } => {
                vec![n_angles + 1, out_mult, in_mult, basis.len()]
            }
        }
    }

    pub fn zeros(
        basis: KernelBasis<T>,
        out_mult: usize,
        in_mult: usize,
        kind: SpatialWeights,
    ) -> Self {
        let dims = Self::weight_dims(&basis, out_mult, in_mult, &kind);
        RelaxedSteerableConvLayer {
            basis,
            out_mult,
            in_mult,
            kind,
            w: Tensor::zeros(&dims),
        }
    }

    /// Weight slot for a kernel offset (row ky, col kx).
    fn slot(&self, ky: usize, kx: usize) -> usize {
        let ks = self.basis.kernel_size();
        match &self.kind {
            SpatialWeights::PerOffset => ky * ks + kx,
            SpatialWeights::Angular { n_angles } => angular_bucket(ky, kx, ks / 2, *n_angles),
        }
    }

    fn coef(&self, ky: usize, kx: usize, u: usize, v: usize, l: usize) -> T {
        match &self.kind {
            SpatialWeights::PerOffset => self.w.at(&[ky, kx, u, v, l]),
            SpatialWeights::Angular { .. } => {
                self.w.at(&[self.slot(ky, kx), u, v, l])
            }
        }
    }

    pub fn forward(&self, f: &FeatureField<T>) -> Result<FeatureField<T>> {
        let plain = self.materialize();
        steer_apply(&self.basis, f, &plain, self.out_mult, self.in_mult)
    }

    /// Returns (grad wrt input, grad wrt w).
    pub fn backward(
        &self,
        f: &FeatureField<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Tensor<T>)> {
        let plain = self.materialize();
        let (din, dplain) =
            steer_apply_backward(&self.basis, f, upstream, &plain, self.out_mult, self.in_mult)?;
        let ks = self.basis.kernel_size();
        let sp = ks * ks;
        let (d_out, d_in) = (self.basis.d_out(), self.basis.d_in());
        let mut dw = Tensor::zeros(self.w.dims());
        let lcount = self.basis.len();
        for u in 0..self.out_mult {
            for v in 0..self.in_mult {
                for l in 0..lcount {
                    let phi = &self.basis.elems[l];
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let y = ky * ks + kx;
                            let mut acc = T::zero();
                            for a in 0..d_out {
                                for b in 0..d_in {
                                    let po =
                                        plain_offset(u, a, v, b, self.in_mult, d_out, d_in, sp);
                                    let fo = (a * d_in + b) * sp;
                                    acc += dplain.data()[po + y] * phi.data()[fo + y];
                                }
                            }
                            let slot = self.slot(ky, kx);
                            match &self.kind {
                                SpatialWeights::PerOffset => {
                                    *dw.at_mut(&[ky, kx, u, v, l]) += acc;
                                }
                                SpatialWeights::Angular { .. } => {
                                    *dw.at_mut(&[slot, u, v, l]) += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((din, dw))
    }

    pub fn materialize(&self) -> Tensor<T> {
        let ks = self.basis.kernel_size();
        let sp = ks * ks;
        let (d_out, d_in) = (self.basis.d_out(), self.basis.d_in());
        let mut plain =
            Tensor::zeros(&[self.out_mult * d_out, self.in_mult * d_in, ks, ks]);
        for u in 0..self.out_mult {
            for v in 0..self.in_mult {
                for (l, phi) in self.basis.elems.iter().enumerate() {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let wl = self.coef(ky, kx, u, v, l);
                            if wl == T::zero() {
                                continue;
                            }
                            let y = ky * ks + kx;
                            for a in 0..d_out {
                                for b in 0..d_in {
                                    let po =
                                        plain_offset(u, a, v, b, self.in_mult, d_out, d_in, sp);
                                    let fo = (a * d_in + b) * sp;
                                    plain.data_mut()[po + y] += wl * phi.data()[fo + y];
                                }
                            }
                        }
                    }
                }
            }
        }
        plain
    }
}

/// Sector of the offset vector's angle, buckets of width 2pi/n_angles; the
/// center offset maps to the dedicated slot n_angles.
pub(crate) fn angular_bucket(ky: usize, kx: usize, k: usize, n_angles: usize) -> usize {
    let dy = ky as f64 - k as f64; // rows grow downward
    let dx = kx as f64 - k as f64;
    if dy == 0.0 && dx == 0.0 {
        return n_angles;
    }
    let mut theta = (-dy).atan2(dx);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    let sector = (theta / (2.0 * std::f64::consts::PI) * n_angles as f64).floor() as usize;
    sector.min(n_angles - 1)
}

/// Steerable convolution whose per-offset weights also vary with the input
/// position through a rank-R factorization w_l(x, y) = sum_r a_r(x) b_{r,l}(y).
/// Spatially constant a_r recovers translation equivariance exactly.
#[derive(Clone, Debug)]
pub struct LowRankSteerableConvLayer<T> {
    pub basis: KernelBasis<T>,
    pub out_mult: usize,
    pub in_mult: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub rank: usize,
    /// (rank, H, W) per-position factors, trainable.
    pub a: Tensor<T>,
    /// (rank, L, ks, ks, out_mult, in_mult) per-offset factors, trainable.
    pub b: Tensor<T>,
}

impl<T: Scalar> LowRankSteerableConvLayer<T> {
    pub fn zeros(
        basis: KernelBasis<T>,
        out_mult: usize,
        in_mult: usize,
        grid_h: usize,
        grid_w: usize,
        rank: usize,
    ) -> Self {
        let ks = basis.kernel_size();
        let l = basis.len();
        LowRankSteerableConvLayer {
            basis,
            out_mult,
            in_mult,
            grid_h,
            grid_w,
            rank,
            a: Tensor::zeros(&[rank, grid_h, grid_w]),
            b: Tensor::zeros(&[rank, l, ks, ks, out_mult, in_mult]),
        }
    }

    fn check_grid(&self, f: &FeatureField<T>) -> Result<()> {
        if f.height() != self.grid_h || f.width() != self.grid_w {
            return Err(Error::Shape(format!(
                "low-rank layer bound to {}x{} grid, input is {}x{}",
                self.grid_h,
                self.grid_w,
                f.height(),
                f.width()
            )));
        }
        Ok(())
    }

    /// Effective plain kernel of rank component r.
    fn materialize_rank(&self, r: usize) -> Tensor<T> {
        let ks = self.basis.kernel_size();
        let sp = ks * ks;
        let (d_out, d_in) = (self.basis.d_out(), self.basis.d_in());
        let mut plain =
            Tensor::zeros(&[self.out_mult * d_out, self.in_mult * d_in, ks, ks]);
        for (l, phi) in self.basis.elems.iter().enumerate() {
            for ky in 0..ks {
                for kx in 0..ks {
                    let y = ky * ks + kx;
                    for u in 0..self.out_mult {
                        for v in 0..self.in_mult {
                            let coef = self.b.at(&[r, l, ky, kx, u, v]);
                            if coef == T::zero() {
                                continue;
                            }
                            for a in 0..d_out {
                                for bch in 0..d_in {
                                    let po = plain_offset(
                                        u,
                                        a,
                                        v,
                                        bch,
                                        self.in_mult,
                                        d_out,
                                        d_in,
                                        sp,
                                    );
                                    let fo = (a * d_in + bch) * sp;
                                    plain.data_mut()[po + y] += coef * phi.data()[fo + y];
                                }
                            }
                        }
                    }
                }
            }
        }
        plain
    }

    pub fn forward(&self, f: &FeatureField<T>) -> Result<FeatureField<T>> {
        check_steer_input(&self.basis, self.in_mult, f)?;
        self.check_grid(f)?;
        let (h, w) = (f.height(), f.width());
        let hw = h * w;
        let c_out = self.out_mult * self.basis.d_out();
        let c_in = self.in_mult * self.basis.d_in();
        let ks = self.basis.kernel_size();
        let mut out = vec![T::zero(); c_out * hw];
        for r in 0..self.rank {
            let plain = self.materialize_rank(r);
            let conv = conv2d_same(f.data.data(), c_in, h, w, plain.data(), c_out, ks);
            let ar = &self.a.data()[r * hw..(r + 1) * hw];
            for ch in 0..c_out {
                for p in 0..hw {
                    out[ch * hw + p] += ar[p] * conv[ch * hw + p];
                }
            }
        }
        FeatureField::new(
            Tensor::from_vec(&[c_out, h, w], out)?,
            self.basis.rep_out.clone(),
            self.basis.group,
        )
    }

    /// Returns (grad wrt input, grad wrt a, grad wrt b).
    pub fn backward(
        &self,
        f: &FeatureField<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Tensor<T>, Tensor<T>)> {
        check_steer_input(&self.basis, self.in_mult, f)?;
        self.check_grid(f)?;
        let (h, w) = (f.height(), f.width());
        let hw = h * w;
        let c_out = self.out_mult * self.basis.d_out();
        let c_in = self.in_mult * self.basis.d_in();
        let ks = self.basis.kernel_size();
        let sp = ks * ks;
        let (d_out, d_in) = (self.basis.d_out(), self.basis.d_in());
        if upstream.data.dims() != [c_out, h, w] {
            return Err(Error::Shape(format!(
                "low-rank upstream dims {:?}, expected {:?}",
                upstream.data.dims(),
                [c_out, h, w]
            )));
        }
        let mut din = vec![T::zero(); c_in * hw];
        let mut da = Tensor::zeros(self.a.dims());
        let mut db = Tensor::zeros(self.b.dims());
        for r in 0..self.rank {
            let plain = self.materialize_rank(r);
            let conv = conv2d_same(f.data.data(), c_in, h, w, plain.data(), c_out, ks);
            let ar = &self.a.data()[r * hw..(r + 1) * hw];
            // da_r(x) = sum_ch upstream[ch, x] * conv_r[ch, x]
            for p in 0..hw {
                let mut acc = T::zero();
                for ch in 0..c_out {
                    acc += upstream.data.data()[ch * hw + p] * conv[ch * hw + p];
                }
                da.data_mut()[r * hw + p] = acc;
            }
            // weighted upstream a_r(x) * u(x) drives both dK_r and din
            let mut weighted = vec![T::zero(); c_out * hw];
            for ch in 0..c_out {
                for p in 0..hw {
                    weighted[ch * hw + p] = ar[p] * upstream.data.data()[ch * hw + p];
                }
            }
            let dplain =
                conv2d_same_kernel_grad(f.data.data(), &weighted, c_in, c_out, h, w, ks);
            let dinr = conv2d_same_input_grad(&weighted, c_out, h, w, plain.data(), c_in, ks);
            for (d, s) in din.iter_mut().zip(dinr.iter()) {
                *d += *s;
            }
            for (l, phi) in self.basis.elems.iter().enumerate() {
                for ky in 0..ks {
                    for kx in 0..ks {
                        let y = ky * ks + kx;
                        for u in 0..self.out_mult {
                            for v in 0..self.in_mult {
                                let mut acc = T::zero();
                                for a in 0..d_out {
                                    for bch in 0..d_in {
                                        let po = plain_offset(
                                            u,
                                            a,
                                            v,
                                            bch,
                                            self.in_mult,
                                            d_out,
                                            d_in,
                                            sp,
                                        );
                                        let fo = (a * d_in + bch) * sp;
                                        acc += dplain[po + y] * phi.data()[fo + y];
                                    }
                                }
                                *db.at_mut(&[r, l, ky, kx, u, v]) += acc;
                            }
                        }
                    }
                }
            }
        }
        let din = FeatureField::new(
            Tensor::from_vec(&[c_in, h, w], din)?,
            self.basis.rep_in.clone(),
            self.basis.group,
        )?;
        Ok((din, da, db))
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn plain_offset(
    u: usize,
    a: usize,
    v: usize,
    b: usize,
    in_mult: usize,
    d_out: usize,
    d_in: usize,
    sp: usize,
) -> usize {
    ((u * d_out + a) * (in_mult * d_in) + (v * d_in + b)) * sp
}

fn check_steer_input<T: Scalar>(
    basis: &KernelBasis<T>,
    in_mult: usize,
    f: &FeatureField<T>,
) -> Result<()> {
    if f.group != basis.group {
        return Err(Error::Config(
            "input field group does not match basis group".into(),
        ));
    }
    if f.rep != basis.rep_in {
        return Err(Error::Config(format!(
            "input rep {:?} does not match basis rep_in {:?}",
            f.rep, basis.rep_in
        )));
    }
    if f.channels() != in_mult * basis.d_in() {
        return Err(Error::Shape(format!(
            "steerable conv expects {} channels, got {}",
            in_mult * basis.d_in(),
            f.channels()
        )));
    }
    Ok(())
}

fn steer_apply<T: Scalar>(
    basis: &KernelBasis<T>,
    f: &FeatureField<T>,
    plain: &Tensor<T>,
    out_mult: usize,
    in_mult: usize,
) -> Result<FeatureField<T>> {
    check_steer_input(basis, in_mult, f)?;
    let (h, w) = (f.height(), f.width());
    let c_out = out_mult * basis.d_out();
    let out = conv2d_same(
        f.data.data(),
        in_mult * basis.d_in(),
        h,
        w,
        plain.data(),
        c_out,
        basis.kernel_size(),
    );
    FeatureField::new(
        Tensor::from_vec(&[c_out, h, w], out)?,
        basis.rep_out.clone(),
        basis.group,
    )
}

fn steer_apply_backward<T: Scalar>(
    basis: &KernelBasis<T>,
    f: &FeatureField<T>,
    upstream: &FeatureField<T>,
    plain: &Tensor<T>,
    out_mult: usize,
    in_mult: usize,
) -> Result<(FeatureField<T>, Tensor<T>)> {
    check_steer_input(basis, in_mult, f)?;
    let (h, w) = (f.height(), f.width());
    let ks = basis.kernel_size();
    let c_out = out_mult * basis.d_out();
    let c_in = in_mult * basis.d_in();
    if upstream.data.dims() != [c_out, h, w] {
        return Err(Error::Shape(format!(
            "steerable upstream dims {:?}, expected {:?}",
            upstream.data.dims(),
            [c_out, h, w]
        )));
    }
    let din = conv2d_same_input_grad(upstream.data.data(), c_out, h, w, plain.data(), c_in, ks);
    let dplain =
        conv2d_same_kernel_grad(f.data.data(), upstream.data.data(), c_in, c_out, h, w, ks);
    Ok((
        FeatureField::new(
            Tensor::from_vec(&[c_in, h, w], din)?,
            basis.rep_in.clone(),
            basis.group,
        )?,
        Tensor::from_vec(&[c_out, c_in, ks, ks], dplain)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::solve_basis;
    use crate::group::{act_on_field, CyclicGroup, Representation};
    use crate::tensor::max_abs_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c4() -> CyclicGroup {
        CyclicGroup::new(4).unwrap()
    }

    fn reg_basis() -> KernelBasis<f64> {
        solve_basis(c4(), &Representation::Regular, &Representation::Regular, 1).unwrap()
    }

    fn random_layer(rng: &mut ChaCha8Rng, out_mult: usize, in_mult: usize) -> SteerableConvLayer<f64> {
        let basis = reg_basis();
        let l = basis.len();
        SteerableConvLayer {
            basis,
            out_mult,
            in_mult,
            w: Tensor::rand_uniform(&[out_mult, in_mult, l], -0.5, 0.5, rng),
        }
    }

    fn regular_field(rng: &mut ChaCha8Rng, mult: usize, h: usize) -> FeatureField<f64> {
        FeatureField::new(
            Tensor::rand_uniform(&[mult * 4, h, h], -1.0, 1.0, rng),
            Representation::Regular,
            c4(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let layer = SteerableConvLayer::zeros(reg_basis(), 1, 1);
        let f = regular_field(&mut rng, 1, 5);
        assert_eq!(layer.forward(&f).unwrap().data.max_abs(), 0.0);
    }

    #[test]
    fn strict_steerable_is_equivariant_for_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let layer = random_layer(&mut rng, 2, 1);
        let f = regular_field(&mut rng, 1, 16);
        let out = layer.forward(&f).unwrap();
        for g in 0..4 {
            let lhs = layer.forward(&act_on_field(g, &f).unwrap()).unwrap();
            let rhs = act_on_field(g, &out).unwrap();
            assert!(max_abs_diff(&lhs.data, &rhs.data) < 1e-12);
        }
    }

    #[test]
    fn c1_full_basis_recovers_arbitrary_conv() {
        // C1 basis spans everything: a steerable layer with matching weights
        // equals a direct dense convolution.
        let c1 = CyclicGroup::new(1).unwrap();
        let basis = solve_basis::<f64>(c1, &Representation::Trivial, &Representation::Trivial, 1)
            .unwrap();
        assert_eq!(basis.len(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut layer = SteerableConvLayer::zeros(basis, 2, 3);
        layer.w = Tensor::rand_uniform(layer.w.dims(), -1.0, 1.0, &mut rng);
        let f = FeatureField::new(
            Tensor::rand_uniform(&[3, 6, 6], -1.0, 1.0, &mut rng),
            Representation::Trivial,
            c1,
        )
        .unwrap();
        let out = layer.forward(&f).unwrap();
        // oracle: dense conv with the materialized kernel
        let plain = layer.materialize();
        let oracle = conv2d_same(f.data.data(), 3, 6, 6, plain.data(), 2, 3);
        for (a, b) in out.data.data().iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn constant_relaxed_weights_reduce_to_strict() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let strict = random_layer(&mut rng, 2, 2);
        let mut relaxed = RelaxedSteerableConvLayer::zeros(
            strict.basis.clone(),
            2,
            2,
            SpatialWeights::PerOffset,
        );
        let ks = 3;
        for ky in 0..ks {
            for kx in 0..ks {
                for u in 0..2 {
                    for v in 0..2 {
                        for l in 0..strict.basis.len() {
                            *relaxed.w.at_mut(&[ky, kx, u, v, l]) = strict.w.at(&[u, v, l]);
                        }
                    }
                }
            }
        }
        let f = regular_field(&mut rng, 2, 8);
        let a = strict.forward(&f).unwrap();
        let b = relaxed.forward(&f).unwrap();
        assert!(max_abs_diff(&a.data, &b.data) <= 1e-6);
    }

    #[test]
    fn center_indicator_weights_equal_1x1_steerable_conv() {
        // w(y) supported only at y = (0,0): the layer degenerates to a 1x1
        // steerable conv; oracle is a direct per-pixel matrix multiply with
        // the materialized center block.
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut relaxed =
            RelaxedSteerableConvLayer::zeros(reg_basis(), 1, 1, SpatialWeights::PerOffset);
        let w0 = Tensor::rand_uniform(&[relaxed.basis.len()], -1.0, 1.0, &mut rng);
        for l in 0..relaxed.basis.len() {
            *relaxed.w.at_mut(&[1, 1, 0, 0, l]) = w0.data()[l];
        }
        let plain = relaxed.materialize();
        let ks = 3;
        for o in 0..4 {
            for i in 0..4 {
                for ky in 0..ks {
                    for kx in 0..ks {
                        if (ky, kx) != (1, 1) {
                            assert_eq!(plain.at(&[o, i, ky, kx]), 0.0);
                        }
                    }
                }
            }
        }
        let f = regular_field(&mut rng, 1, 6);
        let out = relaxed.forward(&f).unwrap();
        let hw = 36;
        for o in 0..4 {
            for p in 0..hw {
                let mut acc = 0.0;
                for i in 0..4 {
                    acc += plain.at(&[o, i, 1, 1]) * f.data.data()[i * hw + p];
                }
                assert!((out.data.data()[o * hw + p] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_relaxed_weights_break_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let mut relaxed =
            RelaxedSteerableConvLayer::zeros(reg_basis(), 1, 1, SpatialWeights::PerOffset);
        relaxed.w = Tensor::rand_uniform(relaxed.w.dims(), 0.5, 1.5, &mut rng);
        let f = regular_field(&mut rng, 1, 8);
        let out = relaxed.forward(&f).unwrap();
        let mut defect: f64 = 0.0;
        for g in 1..4 {
            let lhs = relaxed.forward(&act_on_field(g, &f).unwrap()).unwrap();
            let rhs = act_on_field(g, &out).unwrap();
            defect = defect.max(max_abs_diff(&lhs.data, &rhs.data));
        }
        assert!(defect > 1e-3, "expected broken equivariance, defect {defect}");
    }

    #[test]
    fn angular_buckets_partition_offsets() {
        // 3x3 kernel, 4 sectors: 8 non-center offsets spread over sectors,
        // center gets slot 4
        let counts = {
            let mut c = vec![0usize; 5];
            for ky in 0..3 {
                for kx in 0..3 {
                    c[angular_bucket(ky, kx, 1, 4)] += 1;
                }
            }
            c
        };
        assert_eq!(counts[4], 1);
        assert_eq!(counts.iter().sum::<usize>(), 9);
        assert_eq!(counts[0], 2); // angles 0 and 45 degrees
    }

    #[test]
    fn angular_variant_reduces_to_strict_when_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let strict = random_layer(&mut rng, 1, 1);
        let mut relaxed = RelaxedSteerableConvLayer::zeros(
            strict.basis.clone(),
            1,
            1,
            SpatialWeights::Angular { n_angles: 4 },
        );
        for slot in 0..5 {
            for l in 0..strict.basis.len() {
                *relaxed.w.at_mut(&[slot, 0, 0, l]) = strict.w.at(&[0, 0, l]);
            }
        }
        let f = regular_field(&mut rng, 1, 8);
        assert!(
            max_abs_diff(
                &strict.forward(&f).unwrap().data,
                &relaxed.forward(&f).unwrap().data
            ) <= 1e-6
        );
    }

    #[test]
    fn lowrank_reduces_and_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let basis = reg_basis();
        let lcount = basis.len();

        // R=1 with a == 1 equals the relaxed steerable layer with w = b_1
        let mut lr = LowRankSteerableConvLayer::zeros(basis.clone(), 1, 1, 8, 8, 1);
        lr.a.fill(1.0);
        lr.b = Tensor::rand_uniform(lr.b.dims(), -1.0, 1.0, &mut rng);
        let mut rsteer =
            RelaxedSteerableConvLayer::zeros(basis.clone(), 1, 1, SpatialWeights::PerOffset);
        for l in 0..lcount {
            for ky in 0..3 {
                for kx in 0..3 {
                    *rsteer.w.at_mut(&[ky, kx, 0, 0, l]) = lr.b.at(&[0, l, ky, kx, 0, 0]);
                }
            }
        }
        let f = regular_field(&mut rng, 1, 8);
        assert!(
            max_abs_diff(&lr.forward(&f).unwrap().data, &rsteer.forward(&f).unwrap().data)
                <= 1e-6
        );

        // a == 0 kills the output
        lr.a.fill(0.0);
        assert_eq!(lr.forward(&f).unwrap().data.max_abs(), 0.0);

        // R=2 random parameters match a dense per-position materialization
        let mut lr2 = LowRankSteerableConvLayer::zeros(basis.clone(), 1, 1, 8, 8, 2);
        lr2.a = Tensor::rand_uniform(lr2.a.dims(), -1.0, 1.0, &mut rng);
        lr2.b = Tensor::rand_uniform(lr2.b.dims(), -1.0, 1.0, &mut rng);
        let out = lr2.forward(&f).unwrap();

        // dense oracle: materialize w_l(x, y) explicitly and brute-force
        let (h, w, ks, k) = (8usize, 8usize, 3usize, 1isize);
        let sp = ks * ks;
        let mut oracle = vec![0.0f64; 4 * h * w];
        for or in 0..h as isize {
            for oc in 0..w as isize {
                for ky in 0..ks {
                    for kx in 0..ks {
                        let (rr, cc) = (or + ky as isize - k, oc + kx as isize - k);
                        if rr < 0 || rr >= h as isize || cc < 0 || cc >= w as isize {
                            continue;
                        }
                        for l in 0..lcount {
                            // w_l(x, y) = sum_r a_r(x) b_{r,l}(y)
                            let mut wl = 0.0;
                            for r in 0..2 {
                                wl += lr2.a.at(&[r, or as usize, oc as usize])
                                    * lr2.b.at(&[r, l, ky, kx, 0, 0]);
                            }
                            let phi = &lr2.basis.elems[l];
                            for a in 0..4 {
                                for b in 0..4 {
                                    oracle[(a * h + or as usize) * w + oc as usize] += wl
                                        * phi.data()[(a * 4 + b) * sp + ky * ks + kx]
                                        * f.data.data()
                                            [(b * h + rr as usize) * w + cc as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        for (x, y) in out.data.data().iter().zip(oracle.iter()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn lowrank_wrong_grid_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let lr = LowRankSteerableConvLayer::<f64>::zeros(reg_basis(), 1, 1, 8, 8, 1);
        let f = regular_field(&mut rng, 1, 6);
        assert!(lr.forward(&f).is_err());
    }

    #[test]
    fn rep_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let layer = random_layer(&mut rng, 1, 1);
        let f = FeatureField::new(
            Tensor::rand_uniform(&[4, 5, 5], -1.0, 1.0, &mut rng),
            Representation::DirectSum(vec![Representation::Trivial; 4]),
            c4(),
        )
        .unwrap();
        assert!(layer.forward(&f).is_err());
    }

    #[test]
    fn conv_layers_are_linear_in_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let layer = random_layer(&mut rng, 2, 1);
        let f1 = regular_field(&mut rng, 1, 6);
        let f2 = regular_field(&mut rng, 1, 6);
        let (alpha, beta) = (0.7, -1.3);
        let mut combo = f1.data.clone();
        combo.scale(alpha);
        combo.add_scaled(&f2.data, beta).unwrap();
        let combo = FeatureField::new(combo, Representation::Regular, c4()).unwrap();
        let lhs = layer.forward(&combo).unwrap();
        let mut rhs = layer.forward(&f1).unwrap().data;
        rhs.scale(alpha);
        rhs.add_scaled(&layer.forward(&f2).unwrap().data, beta).unwrap();
        assert!(max_abs_diff(&lhs.data, &rhs) <= 1e-6);
    }
}
