//! Equivariance-error measurement, forecast RMSE, and the two equivariance
//! propositions run as executable numerical checks.

use crate::datagen::{window_input, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::group::{act_on_field, CyclicGroup, FeatureField, Representation};
use crate::model::Model;
use crate::scalar::{to_f64, Scalar};
use crate::tensor::Tensor;
use crate::train::rollout;
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L1,
    L2,
}

/// Equivariance error estimated over a finite probe set, so the reported
/// value is a lower bound on the true supremum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EEReport {
    pub norm: NormKind,
    pub samples: usize,
    /// Max error per group element (element 0 is always 0).
    pub per_element: Vec<f64>,
    /// Supremum over probes and elements, normalized per output element.
    pub overall: f64,
    /// Same supremum without the per-element normalization.
    pub raw: f64,
}

fn field_norm<T: Scalar>(a: &FeatureField<T>, b: &FeatureField<T>, norm: NormKind) -> f64 {
    match norm {
        NormKind::L1 => a
            .data
            .data()
            .iter()
            .zip(b.data.data())
            .map(|(&x, &y)| (to_f64(x) - to_f64(y)).abs())
            .sum(),
        NormKind::L2 => a
            .data
            .data()
            .iter()
            .zip(b.data.data())
            .map(|(&x, &y)| {
                let d = to_f64(x) - to_f64(y);
                d * d
            })
            .sum::<f64>()
            .sqrt(),
    }
}

/// Measures sup over probes and group elements of
/// ||f(g x) - g f(x)|| for the model's own input/output actions.
pub fn model_ee<T: Scalar>(
    model: &Model<T>,
    probes: &[FeatureField<T>],
    norm: NormKind,
) -> Result<EEReport> {
    if probes.is_empty() {
        return Err(Error::Data("no probe inputs".into()));
    }
    let group = model.group;
    let mut per_element = vec![0.0f64; group.order()];
    let mut raw = 0.0f64;
    for probe in probes {
        let out = model.forward(probe)?;
        let elems = out.data.len() as f64;
        for g in group.elements().skip(1) {
            let lhs = model.forward(&act_on_field(g, probe)?)?;
            let rhs = act_on_field(g, &out)?;
            let raw_err = field_norm(&lhs, &rhs, norm);
            let err = match norm {
                NormKind::L1 => raw_err / elems,
                NormKind::L2 => raw_err / elems.sqrt(),
            };
            raw = raw.max(raw_err);
            if err > per_element[g] {
                per_element[g] = err;
            }
        }
    }
    let overall = per_element.iter().cloned().fold(0.0, f64::max);
    Ok(EEReport {
        norm,
        samples: probes.len(),
        per_element,
        overall,
        raw,
    })
}

/// Probe inputs drawn from a dataset's windows (every trajectory, evenly
/// spaced starts), capped at `count`.
pub fn dataset_probes<T: Scalar>(
    ds: &TrajectoryDataset,
    input_len: usize,
    count: usize,
) -> Result<Vec<FeatureField<T>>> {
    let windows = crate::datagen::sliding_windows(ds, input_len, 1)?;
    probes_from_windows(ds, &windows, input_len, count)
}

/// Evenly spaced probe inputs from a window subset (e.g. test windows).
pub fn probes_from_windows<T: Scalar>(
    ds: &TrajectoryDataset,
    windows: &[crate::datagen::Window],
    input_len: usize,
    count: usize,
) -> Result<Vec<FeatureField<T>>> {
    if windows.is_empty() {
        return Err(Error::Data("no probe windows".into()));
    }
    let stride = (windows.len() / count.max(1)).max(1);
    windows
        .iter()
        .step_by(stride)
        .take(count)
        .map(|&w| window_input::<T>(ds, w, input_len))
        .collect()
}

/// Root mean squared error over all frames, pixels, and channels.
pub fn rollout_rmse<T: Scalar>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    if predictions.dims() != targets.dims() {
        return Err(Error::Shape(format!(
            "rmse dims {:?} vs {:?}",
            predictions.dims(),
            targets.dims()
        )));
    }
    let mut total = 0.0f64;
    for (&p, &t) in predictions.data().iter().zip(targets.data()) {
        let d = to_f64(p) - to_f64(t);
        total += d * d;
    }
    Ok((total / predictions.len() as f64).sqrt())
}

/// Autoregressive 20-step-style evaluation: for each listed trajectory,
/// seed with its first `input_len` frames, roll out, and compare against the
/// ground truth continuation. Returns the mean RMSE over trajectories.
pub fn rollout_rmse_over<T: Scalar>(
    model: &Model<T>,
    ds: &TrajectoryDataset,
    trajectories: &[usize],
    steps: usize,
) -> Result<f64> {
    let il = model.input_len;
    if ds.steps() < il + steps {
        return Err(Error::Data(format!(
            "need {} frames for a {steps}-step rollout, have {}",
            il + steps,
            ds.steps()
        )));
    }
    let mut total = 0.0;
    for &t in trajectories {
        let seed = window_input::<T>(ds, crate::datagen::Window { traj: t, start: 0 }, il)?;
        let pred = rollout(model, &seed, steps)?;
        let tr = &ds.trajectories[t];
        let dims = tr.frames.dims();
        let chw = dims[1] * dims[2] * dims[3];
        let truth: Vec<T> = tr.frames.data()[il * chw..(il + steps) * chw]
            .iter()
            .map(|&x| crate::scalar::cast::<T>(x))
            .collect();
        let truth = Tensor::from_vec(&[steps, dims[1], dims[2], dims[3]], truth)?;
        total += rollout_rmse(&pred, &truth)?;
    }
    Ok(total / trajectories.len() as f64)
}

/// A function on a finite G-set with vector values: values[i] is f(x_i), the
/// group permutes points via `point_perm` and acts on values via `rep`.
#[derive(Clone, Debug)]
pub struct FunctionTable {
    pub values: Tensor<f64>, // (points, value_dim)
    /// point_perm[g][i] = index of g . x_i
    pub point_perm: Vec<Vec<usize>>,
    pub group: CyclicGroup,
    pub rep: Representation,
}

impl FunctionTable {
    pub fn points(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.dims()[1]
    }

    fn value(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values.data()[i * d..(i + 1) * d]
    }

    /// sup over points and elements of ||f(g x) - g f(x)||_2.
    pub fn equivariance_error(&self) -> Result<f64> {
        let d = self.dim();
        let mut worst = 0.0f64;
        for g in self.group.elements() {
            let rho = self.rep.matrix_f64(self.group, g)?;
            for i in 0..self.points() {
                let fx = self.value(i);
                let fgx = self.value(self.point_perm[g][i]);
                let mut err2 = 0.0;
                for a in 0..d {
                    let mut rfx = 0.0;
                    for b in 0..d {
                        rfx += rho.at(&[a, b]) * fx[b];
                    }
                    err2 += (fgx[a] - rfx) * (fgx[a] - rfx);
                }
                worst = worst.max(err2.sqrt());
            }
        }
        Ok(worst)
    }

    /// Group-averaged (Reynolds) table: always exactly equivariant.
    pub fn group_average(&self) -> Result<FunctionTable> {
        let d = self.dim();
        let n = self.group.order();
        let mut values = Tensor::zeros(&[self.points(), d]);
        for g in self.group.elements() {
            let rho_inv = self.rep.matrix_f64(self.group, self.group.inverse(g)?)?;
            for i in 0..self.points() {
                let fgx = self.value(self.point_perm[g][i]);
                for a in 0..d {
                    let mut acc = 0.0;
                    for b in 0..d {
                        acc += rho_inv.at(&[a, b]) * fgx[b];
                    }
                    *values.at_mut(&[i, a]) += acc / n as f64;
                }
            }
        }
        Ok(FunctionTable {
            values,
            point_perm: self.point_perm.clone(),
            group: self.group,
            rep: self.rep.clone(),
        })
    }

    fn check_norm_preserving(&self) -> Result<()> {
        let d = self.dim();
        for g in self.group.elements() {
            let rho = self.rep.matrix_f64(self.group, g)?;
            for r in 0..d {
                for c in 0..d {
                    let dot: f64 = (0..d).map(|k| rho.at(&[r, k]) * rho.at(&[c, k])).sum();
                    let want = if r == c { 1.0 } else { 0.0 };
                    if (dot - want).abs() > 1e-10 {
                        return Err(Error::Domain(
                            "representation is not norm-preserving".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Approximation lower bound: any equivariant comparator misses an
/// approximately equivariant function by at least half its equivariance
/// error at some point. Returns (bound holds, witness point index).
/// This is a theorem for valid inputs — `false` signals an implementation bug.
pub fn check_prop_33(f: &FunctionTable, f_eq: &FunctionTable) -> Result<(bool, usize)> {
    f.check_norm_preserving()?;
    if f_eq.equivariance_error()? > 1e-10 {
        return Err(Error::Domain(
            "comparator table is not equivariant".into(),
        ));
    }
    if f.points() != f_eq.points() || f.dim() != f_eq.dim() {
        return Err(Error::Shape("tables differ in shape".into()));
    }
    let ee = f.equivariance_error()?;
    let d = f.dim();
    let mut best = (0usize, 0.0f64);
    for i in 0..f.points() {
        let mut err2 = 0.0;
        for a in 0..d {
            let diff = f.value(i)[a] - f_eq.value(i)[a];
            err2 += diff * diff;
        }
        let err = err2.sqrt();
        if err > best.1 {
            best = (i, err);
        }
    }
    // small slack for floating-point equality cases
    Ok((best.1 >= ee / 2.0 - 1e-12, best.0))
}

/// Stability of the equivariance error under uniform approximation:
/// | EE(f) - EE(f_theta) | <= 2c + EE(f) whenever ||f - f_theta||_inf <= c.
/// Always true for valid inputs; `false` signals an implementation bug.
pub fn check_prop_34(f: &FunctionTable, f_theta: &FunctionTable, c: f64) -> Result<bool> {
    if f.points() != f_theta.points() || f.dim() != f_theta.dim() {
        return Err(Error::Shape("tables differ in shape".into()));
    }
    // verify the sup-distance precondition
    let d = f.dim();
    let mut sup = 0.0f64;
    for i in 0..f.points() {
        let mut err2 = 0.0;
        for a in 0..d {
            let diff = f.value(i)[a] - f_theta.value(i)[a];
            err2 += diff * diff;
        }
        sup = sup.max(err2.sqrt());
    }
    if sup > c + 1e-12 {
        return Err(Error::Domain(format!(
            "sup distance {sup} exceeds the declared bound {c}"
        )));
    }
    let ee_f = f.equivariance_error()?;
    let ee_t = f_theta.equivariance_error()?;
    Ok((ee_f - ee_t).abs() <= 2.0 * c + ee_f + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_rotsmoke, GeneratorKind, SimConfig};
    use crate::model::{ModelFamily, ModelSpec, RelaxMode};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn smoke_ds() -> TrajectoryDataset {
        gen_rotsmoke(&SimConfig {
            grid: 8,
            dt: 0.25,
            steps: 10,
            kind: GeneratorKind::RotSmoke,
            delta: 0.1,
            seed: 2,
        })
        .unwrap()
    }

    fn spec(family: ModelFamily) -> ModelSpec {
        ModelSpec {
            family,
            group: 4,
            depth: 2,
            hidden: 2,
            k: 1,
            banks: 1,
            relax: RelaxMode::Spatial,
            n_angles: 0,
            combo_prefix: 0,
            rank: 1,
        }
    }

    #[test]
    fn strict_model_has_tiny_ee_and_duplicates_change_nothing() {
        let ds = smoke_ds();
        let model = Model::<f64>::build(&spec(ModelFamily::Steer), &ds.channel_rep, 3, 8, 4)
            .unwrap();
        let probes = dataset_probes::<f64>(&ds, 3, 8).unwrap();
        let report = model_ee(&model, &probes, NormKind::L1).unwrap();
        assert!(report.overall <= 1e-10, "strict EE {}", report.overall);
        let mut doubled = probes.clone();
        doubled.extend(probes.iter().cloned());
        let report2 = model_ee(&model, &doubled, NormKind::L1).unwrap();
        assert_eq!(report.overall, report2.overall);
    }

    #[test]
    fn perturbed_relaxed_model_has_positive_ee() {
        let ds = smoke_ds();
        let mut model = Model::<f64>::build(&spec(ModelFamily::RSteer), &ds.channel_rep, 3, 8, 4)
            .unwrap();
        // push one offset's weights away from the tie
        for node in &mut model.nodes {
            if let crate::model::LayerNode::RSteer(l) = node {
                let lcount = l.basis.len();
                for li in 0..lcount {
                    *l.w.at_mut(&[0, 0, 0, 0, li]) += 0.5;
                }
                break;
            }
        }
        let probes = dataset_probes::<f64>(&ds, 3, 6).unwrap();
        let report = model_ee(&model, &probes, NormKind::L1).unwrap();
        assert!(report.overall > 0.0);
        // direct evaluation oracle on one probe and one element
        let probe = &probes[0];
        let lhs = model.forward(&act_on_field(1, probe).unwrap()).unwrap();
        let rhs = act_on_field(1, &model.forward(probe).unwrap()).unwrap();
        let direct: f64 = lhs
            .data
            .data()
            .iter()
            .zip(rhs.data.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / lhs.data.len() as f64;
        assert!(report.per_element[1] >= direct - 1e-12);
    }

    #[test]
    fn rmse_basics_and_naive_oracle() {
        let a = Tensor::<f64>::filled(&[2, 3, 4, 4], 0.5);
        assert_eq!(rollout_rmse(&a, &a).unwrap(), 0.0);
        let b = a.map(|x| x + 0.1);
        assert!((rollout_rmse(&a, &b).unwrap() - 0.1).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f64>::rand_uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut rng);
        let y = Tensor::<f64>::rand_uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut rng);
        let fast = rollout_rmse(&x, &y).unwrap();
        let mut acc = 0.0;
        for i in 0..x.len() {
            let d = x.data()[i] - y.data()[i];
            acc += d * d;
        }
        let slow = (acc / x.len() as f64).sqrt();
        assert!((fast - slow).abs() <= 1e-12);

        let c = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        assert!(rollout_rmse(&a, &c).is_err());
    }

    /// Two free C4 orbits on 8 points.
    fn free_perm(n_points: usize, group: CyclicGroup) -> Vec<Vec<usize>> {
        let n = group.order();
        assert_eq!(n_points % n, 0);
        (0..n)
            .map(|g| {
                (0..n_points)
                    .map(|i| {
                        let orbit = i / n;
                        let pos = i % n;
                        orbit * n + (pos + g) % n
                    })
                    .collect()
            })
            .collect()
    }

    fn random_table(seed: u64, rep: Representation, group: CyclicGroup) -> FunctionTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rep.dim(group);
        let points = 2 * group.order();
        FunctionTable {
            values: Tensor::rand_uniform(&[points, d], -1.0, 1.0, &mut rng),
            point_perm: free_perm(points, group),
            group,
            rep,
        }
    }

    #[test]
    fn prop33_two_point_example() {
        // X = {x, gx}, C2, trivial rep, f(x)=0, f(gx)=1: EE = 1 and any
        // invariant comparator errs by at least 1/2
        let group = CyclicGroup::new(2).unwrap();
        let f = FunctionTable {
            values: Tensor::from_vec(&[2, 1], vec![0.0, 1.0]).unwrap(),
            point_perm: vec![vec![0, 1], vec![1, 0]],
            group,
            rep: Representation::Trivial,
        };
        assert!((f.equivariance_error().unwrap() - 1.0).abs() < 1e-12);
        let f_eq = f.group_average().unwrap(); // constant 1/2
        let (ok, witness) = check_prop_33(&f, &f_eq).unwrap();
        assert!(ok);
        assert!(witness < 2);
    }

    #[test]
    fn prop33_equivariant_function_is_its_own_comparator() {
        let group = CyclicGroup::new(4).unwrap();
        let f = random_table(3, Representation::Irrep(1), group)
            .group_average()
            .unwrap();
        let (ok, _) = check_prop_33(&f, &f).unwrap();
        assert!(ok);
    }

    #[test]
    fn prop33_rejects_non_equivariant_comparator() {
        let group = CyclicGroup::new(4).unwrap();
        let f = random_table(4, Representation::Irrep(1), group);
        assert!(check_prop_33(&f, &f).is_err());
    }

    #[test]
    fn prop34_examples() {
        let group = CyclicGroup::new(4).unwrap();
        let f = random_table(5, Representation::Regular, group);
        assert!(check_prop_34(&f, &f, 0.0).unwrap());
        // constant shift with trivial rep: EEs are equal
        let g = FunctionTable {
            values: f.values.map(|x| x + 0.3),
            ..f.clone()
        };
        let c = 0.3 * (f.dim() as f64).sqrt();
        assert!(check_prop_34(&f, &g, c).unwrap());
        // violated precondition
        assert!(check_prop_34(&f, &g, 1e-6).is_err());
    }

    #[test]
    fn propositions_hold_on_many_random_instances() {
        let group = CyclicGroup::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..200 {
            let rep = match i % 3 {
                0 => Representation::Irrep(1),
                1 => Representation::Regular,
                _ => Representation::DirectSum(vec![
                    Representation::Trivial,
                    Representation::Irrep(1),
                ]),
            };
            let f = random_table(1000 + i as u64, rep, group);
            let f_eq = f.group_average().unwrap();
            let (ok, _) = check_prop_33(&f, &f_eq).unwrap();
            assert!(ok, "prop 3.3 failed on instance {i}");

            let eps: f64 = rng.gen::<f64>() * 0.2;
            let mut theta = f.clone();
            for v in theta.values.data_mut() {
                *v += (rng.gen::<f64>() - 0.5) * eps;
            }
            let d = f.dim();
            let mut sup = 0.0f64;
            for p in 0..f.points() {
                let mut e2 = 0.0;
                for a in 0..d {
                    let diff = f.values.at(&[p, a]) - theta.values.at(&[p, a]);
                    e2 += diff * diff;
                }
                sup = sup.max(e2.sqrt());
            }
            assert!(check_prop_34(&f, &theta, sup).unwrap(), "prop 3.4 failed on {i}");
        }
    }
}
