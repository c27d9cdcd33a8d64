//! Lifting raw 2D velocity vectors to regular-representation features, one
//! group channel per rotation, so group convolutions and elementwise
//! nonlinearities apply downstream.

use crate::error::{Error, Result};
use crate::group::{turn_cos_sin, CyclicGroup, FeatureField, Representation};
use crate::scalar::{cast, Scalar};
use crate::tensor::Tensor;

/// Maps irrep(1) vector channels (a, b) to n regular channels
/// f(i) = c*a*cos(2*pi*i/n) + c*b*sin(2*pi*i/n), with one trainable scalar c
/// per input multiplicity, shared across pixels.
#[derive(Clone, Debug)]
pub struct LiftLayer<T> {
    pub group: CyclicGroup,
    /// (multiplicity,) trainable weights, initialized to 1.
    pub c: Tensor<T>,
}

impl<T: Scalar> LiftLayer<T> {
    pub fn new(group: CyclicGroup, multiplicity: usize) -> Self {
        LiftLayer {
            group,
            c: Tensor::filled(&[multiplicity], T::one()),
        }
    }

    pub fn multiplicity(&self) -> usize {
        self.c.len()
    }

    fn check_input(&self, v: &FeatureField<T>) -> Result<()> {
        if v.rep != Representation::Irrep(1) {
            return Err(Error::Shape(
                "lift expects irrep(1) vector channels".into(),
            ));
        }
        if v.channels() != 2 * self.multiplicity() {
            return Err(Error::Shape(format!(
                "lift expects {} channels (2 per multiplicity), got {}",
                2 * self.multiplicity(),
                v.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, v: &FeatureField<T>) -> Result<FeatureField<T>> {
        self.check_input(v)?;
        let n = self.group.order();
        let (h, w) = (v.height(), v.width());
        let hw = h * w;
        let mult = self.multiplicity();
        let mut out = Tensor::zeros(&[mult * n, h, w]);
        let src = v.data.data();
        let dst = out.data_mut();
        for m in 0..mult {
            let c = self.c.data()[m];
            let a_off = (2 * m) * hw;
            let b_off = (2 * m + 1) * hw;
            for i in 0..n {
                let (cos_i, sin_i) = turn_cos_sin(i as i64, n as i64);
                let (cos_i, sin_i) = (cast::<T>(cos_i), cast::<T>(sin_i));
                let o = (m * n + i) * hw;
                for p in 0..hw {
                    dst[o + p] = c * (cos_i * src[a_off + p] + sin_i * src[b_off + p]);
                }
            }
        }
        FeatureField::new(out, Representation::Regular, self.group)
    }

    /// Reverse-mode gradients: returns (grad wrt input field, grad wrt c).
    pub fn backward(
        &self,
        v: &FeatureField<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Tensor<T>)> {
        self.check_input(v)?;
        let n = self.group.order();
        let (h, w) = (v.height(), v.width());
        let hw = h * w;
        let mult = self.multiplicity();
        if upstream.data.dims() != [mult * n, h, w] {
            return Err(Error::Shape(format!(
                "lift upstream dims {:?}, expected {:?}",
                upstream.data.dims(),
                [mult * n, h, w]
            )));
        }
        let mut dv = Tensor::zeros(&[2 * mult, h, w]);
        let mut dc = Tensor::zeros(&[mult]);
        let src = v.data.data();
        let up = upstream.data.data();
        for m in 0..mult {
            let c = self.c.data()[m];
            let a_off = (2 * m) * hw;
            let b_off = (2 * m + 1) * hw;
            let mut dcm = T::zero();
            for i in 0..n {
                let (cos_i, sin_i) = turn_cos_sin(i as i64, n as i64);
                let (cos_i, sin_i) = (cast::<T>(cos_i), cast::<T>(sin_i));
                let o = (m * n + i) * hw;
                for p in 0..hw {
                    let u = up[o + p];
                    dv.data_mut()[a_off + p] += c * cos_i * u;
                    dv.data_mut()[b_off + p] += c * sin_i * u;
                    dcm += (cos_i * src[a_off + p] + sin_i * src[b_off + p]) * u;
                }
            }
            dc.data_mut()[m] = dcm;
        }
        let dv = FeatureField::new(dv, Representation::Irrep(1), self.group)?;
        Ok((dv, dc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::act_on_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c4() -> CyclicGroup {
        CyclicGroup::new(4).unwrap()
    }

    fn constant_vector(a: f64, b: f64, h: usize) -> FeatureField<f64> {
        let mut data = Tensor::zeros(&[2, h, h]);
        for p in 0..h * h {
            data.data_mut()[p] = a;
            data.data_mut()[h * h + p] = b;
        }
        FeatureField::new(data, Representation::Irrep(1), c4()).unwrap()
    }

    #[test]
    fn lift_unit_x_gives_cosine_channels() {
        let layer = LiftLayer::<f64>::new(c4(), 1);
        let out = layer.forward(&constant_vector(1.0, 0.0, 3)).unwrap();
        for (i, want) in [1.0, 0.0, -1.0, 0.0].iter().enumerate() {
            assert_eq!(out.data.at(&[i, 1, 1]), *want);
        }
    }

    #[test]
    fn lift_unit_y_gives_sine_channels() {
        let layer = LiftLayer::<f64>::new(c4(), 1);
        let out = layer.forward(&constant_vector(0.0, 1.0, 3)).unwrap();
        for (i, want) in [0.0, 1.0, 0.0, -1.0].iter().enumerate() {
            assert_eq!(out.data.at(&[i, 1, 1]), *want);
        }
    }

    #[test]
    fn lift_scales_with_c() {
        // independent oracle: evaluate c*(a cos + b sin) per channel
        let mut layer = LiftLayer::<f64>::new(c4(), 1);
        layer.c.data_mut()[0] = 2.0;
        let out = layer.forward(&constant_vector(1.0, 1.0, 2)).unwrap();
        let oracle: Vec<f64> = (0..4)
            .map(|i| {
                let th = std::f64::consts::PI * i as f64 / 2.0;
                2.0 * (th.cos() + th.sin())
            })
            .collect();
        for i in 0..4 {
            assert!((out.data.at(&[i, 0, 0]) - oracle[i]).abs() < 1e-15);
            assert_eq!(out.data.at(&[i, 0, 0]), [2.0, 2.0, -2.0, -2.0][i]);
        }
    }

    #[test]
    fn wrong_channel_count_is_shape_error() {
        let layer = LiftLayer::<f64>::new(c4(), 2);
        assert!(layer.forward(&constant_vector(1.0, 0.0, 3)).is_err());
    }

    #[test]
    fn gradient_of_all_ones_upstream_vanishes_on_a() {
        let layer = LiftLayer::<f64>::new(c4(), 1);
        let v = constant_vector(0.3, -0.6, 2);
        let up = FeatureField::new(
            Tensor::filled(&[4, 2, 2], 1.0),
            Representation::Regular,
            c4(),
        )
        .unwrap();
        let (dv, _) = layer.backward(&v, &up).unwrap();
        // sum of cosines (and sines) over a full period is zero
        assert!(dv.data.max_abs() < 1e-15);
    }

    #[test]
    fn gradient_of_one_hot_channel_zero() {
        let layer = LiftLayer::<f64>::new(c4(), 1);
        let v = constant_vector(0.0, 0.0, 1);
        let mut up = Tensor::zeros(&[4, 1, 1]);
        *up.at_mut(&[0, 0, 0]) = 1.0;
        let up = FeatureField::new(up, Representation::Regular, c4()).unwrap();
        let (dv, _) = layer.backward(&v, &up).unwrap();
        assert_eq!(dv.data.at(&[0, 0, 0]), 1.0);
        assert_eq!(dv.data.at(&[1, 0, 0]), 0.0);
    }

    #[test]
    fn lift_intertwines_irrep1_and_regular_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = LiftLayer::<f64>::new(c4(), 2);
        let v = FeatureField::new(
            Tensor::rand_uniform(&[4, 6, 6], -1.0, 1.0, &mut rng),
            Representation::Irrep(1),
            c4(),
        )
        .unwrap();
        for g in 0..4 {
            let lhs = layer.forward(&act_on_field(g, &v).unwrap()).unwrap();
            let rhs = act_on_field(g, &layer.forward(&v).unwrap()).unwrap();
            assert!(
                crate::tensor::max_abs_diff(&lhs.data, &rhs.data) < 1e-14,
                "lift equivariance at g={g}"
            );
        }
    }
}
