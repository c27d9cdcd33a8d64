//! Runnable verification suites: finite-difference gradient checks for every
//! layer family and regularizer, basis-solver checks, executable proposition
//! checks, and tied-weight reduction checks. Shared between the test suite
//! and the command-line `verify` subcommand.

use crate::basis::{solve_basis, verify_basis, KernelBasis};
use crate::datagen::{gen_heat, sliding_windows, GeneratorKind, SimConfig};
use crate::error::Result;
use crate::eval::{check_prop_33, check_prop_34, FunctionTable};
use crate::group::{CyclicGroup, FeatureField, Representation};
use crate::layers::{
    relu, relu_backward, GroupConvLayer, LowRankSteerableConvLayer, RelaxedGroupConvLayer,
    RelaxedSteerableConvLayer, SpatialWeights, SteerableConvLayer,
};
use crate::lift::LiftLayer;
use crate::model::{Model, ModelFamily, ModelSpec, RelaxMode};
use crate::reg::{hinge_residual_gap, l_gconv, l_hinge, l_sconv};
use crate::tensor::{max_abs_diff, Tensor};
use crate::train::loss_and_grad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {}: {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        out.push_str(&format!(
            "suite {}: {}\n",
            self.suite,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

/// Central-difference check of an analytic gradient: every `stride`-th
/// coordinate is perturbed, and the worst relative error is returned.
/// `eval_at(i, d)` must evaluate the scalar objective with coordinate i
/// shifted by d.
pub fn max_fd_rel_err(
    analytic: &[f64],
    mut eval_at: impl FnMut(usize, f64) -> f64,
    stride: usize,
) -> f64 {
    let mut worst = 0.0f64;
    let mut i = 0;
    while i < analytic.len() {
        let fp = eval_at(i, FD_STEP);
        let fm = eval_at(i, -FD_STEP);
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1.0);
        worst = worst.max(rel);
        i += stride.max(1);
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reg_field(rng: &mut ChaCha8Rng, group: CyclicGroup, mult: usize, h: usize) -> FeatureField<f64> {
    FeatureField::new(
        Tensor::rand_uniform(&[mult * group.order(), h, h], -1.0, 1.0, rng),
        Representation::Regular,
        group,
    )
    .unwrap()
}

/// Finite-difference gradient checks for every layer family, the lift layer,
/// the elementwise nonlinearity, both regularizers, and the fully unrolled
/// training loss. `instances` independent random instances per family.
pub fn suite_gradcheck(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "gradcheck".into(),
        checks: Vec::new(),
    };
    let group = CyclicGroup::new(4)?;
    let basis = solve_basis::<f64>(group, &Representation::Regular, &Representation::Regular, 1)?;

    let mut worst = [0.0f64; 10];
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(inst as u64));
        let h = 5 + (inst % 3); // grids 5..7

        // strict group conv
        {
            let mut layer = GroupConvLayer::<f64>::zeros(group, 2, 1, 1);
            layer.kernel = Tensor::rand_uniform(layer.kernel.dims(), -1.0, 1.0, &mut rng);
            let x = reg_field(&mut rng, group, 1, h);
            let u = reg_field(&mut rng, group, 2, h);
            let (dx, dk) = layer.backward(&x, &u)?;
            let e1 = max_fd_rel_err(dk.data(), |i, d| {
                let mut l2 = layer.clone();
                l2.kernel.data_mut()[i] += d;
                dot(l2.forward(&x).unwrap().data.data(), u.data.data())
            }, 1);
            let e2 = max_fd_rel_err(dx.data.data(), |i, d| {
                let mut x2 = x.clone();
                x2.data.data_mut()[i] += d;
                dot(layer.forward(&x2).unwrap().data.data(), u.data.data())
            }, 3);
            worst[0] = worst[0].max(e1).max(e2);
        }

        // relaxed group conv
        {
            let banks: Vec<Tensor<f64>> = (0..2)
                .map(|_| Tensor::rand_uniform(&[4, 1, 1, 3, 3], -1.0, 1.0, &mut rng))
                .collect();
            let w = Tensor::rand_uniform(&[2, 4], -1.0, 1.0, &mut rng);
            let layer = RelaxedGroupConvLayer::new(group, 1, 1, 1, banks, w)?;
            let x = reg_field(&mut rng, group, 1, h);
            let u = reg_field(&mut rng, group, 1, h);
            let (dx, dbanks, dw) = layer.backward(&x, &u)?;
            let mut e = max_fd_rel_err(dw.data(), |i, d| {
                let mut l2 = layer.clone();
                l2.w.data_mut()[i] += d;
                dot(l2.forward(&x).unwrap().data.data(), u.data.data())
            }, 1);
            for (b, db) in dbanks.iter().enumerate() {
                e = e.max(max_fd_rel_err(db.data(), |i, d| {
                    let mut l2 = layer.clone();
                    l2.banks[b].data_mut()[i] += d;
                    dot(l2.forward(&x).unwrap().data.data(), u.data.data())
                }, 2));
            }
            e = e.max(max_fd_rel_err(dx.data.data(), |i, d| {
                let mut x2 = x.clone();
                x2.data.data_mut()[i] += d;
                dot(layer.forward(&x2).unwrap().data.data(), u.data.data())
            }, 3));
            worst[1] = worst[1].max(e);
        }

        // strict steerable
        {
            let mut layer = SteerableConvLayer::zeros(basis.clone(), 2, 1);
            layer.w = Tensor::rand_uniform(layer.w.dims(), -1.0, 1.0, &mut rng);
            let x = reg_field(&mut rng, group, 1, h);
            let u = reg_field(&mut rng, group, 2, h);
            let (dx, dw) = layer.backward(&x, &u)?;
            let e1 = max_fd_rel_err(dw.data(), |i, d| {
                let mut l2 = layer.clone();
                l2.w.data_mut()[i] += d;
                dot(l2.forward(&x).unwrap().data.data(), u.data.data())
            }, 1);
            let e2 = max_fd_rel_err(dx.data.data(), |i, d| {
                let mut x2 = x.clone();
                x2.data.data_mut()[i] += d;
                dot(layer.forward(&x2).unwrap().data.data(), u.data.data())
            }, 3);
            worst[2] = worst[2].max(e1).max(e2);
        }

        // relaxed steerable, both layouts
        {
            let kind = if inst % 2 == 0 {
                SpatialWeights::PerOffset
            } else {
                SpatialWeights::Angular { n_angles: 4 }
            };
            let mut layer = RelaxedSteerableConvLayer::zeros(basis.clone(), 1, 1, kind);
            layer.w = Tensor::rand_uniform(layer.w.dims(), -1.0, 1.0, &mut rng);
            let x = reg_field(&mut rng, group, 1, h);
            let u = reg_field(&mut rng, group, 1, h);
            let (dx, dw) = layer.backward(&x, &u)?;
            let e1 = max_fd_rel_err(dw.data(), |i, d| {
                let mut l2 = layer.clone();
                l2.w.data_mut()[i] += d;
                dot(l2.forward(&x).unwrap().data.data(), u.data.data())
            }, 2);
            let e2 = max_fd_rel_err(dx.data.data(), |i, d| {
                let mut x2 = x.clone();
                x2.data.data_mut()[i] += d;
                dot(layer.forward(&x2).unwrap().data.data(), u.data.data())
            }, 3);
            worst[3] = worst[3].max(e1).max(e2);
        }

        // low-rank translation relaxation
        {
            let mut layer = LowRankSteerableConvLayer::zeros(basis.clone(), 1, 1, h, h, 2);
            layer.a = Tensor::rand_uniform(layer.a.dims(), -1.0, 1.0, &mut rng);
            layer.b = Tensor::rand_uniform(layer.b.dims(), -1.0, 1.0, &mut rng);
            let x = reg_field(&mut rng, group, 1, h);
            let u = reg_field(&mut rng, group, 1, h);
            let (dx, da, db) = layer.backward(&x, &u)?;
            let mut e = max_fd_rel_err(da.data(), |i, d| {
                let mut l2 = layer.clone();
                l2.a.data_mut()[i] += d;
                dot(l2.forward(&x).unwrap().data.data(), u.data.data())
            }, 2);
            e = e.max(max_fd_rel_err(db.data(), |i, d| {
                let mut l2 = layer.clone();
                l2.b.data_mut()[i] += d;
                dot(l2.forward(&x).unwrap().data.data(), u.data.data())
            }, 5));
            e = e.max(max_fd_rel_err(dx.data.data(), |i, d| {
                let mut x2 = x.clone();
                x2.data.data_mut()[i] += d;
                dot(layer.forward(&x2).unwrap().data.data(), u.data.data())
            }, 3));
            worst[4] = worst[4].max(e);
        }

        // lift layer
        {
            let mut layer = LiftLayer::<f64>::new(group, 2);
            layer.c = Tensor::rand_uniform(&[2], 0.5, 1.5, &mut rng);
            let x = FeatureField::new(
                Tensor::rand_uniform(&[4, h, h], -1.0, 1.0, &mut rng),
                Representation::Irrep(1),
                group,
            )?;
            let u = reg_field(&mut rng, group, 2, h);
            let (dx, dc) = layer.backward(&x, &u)?;
            let e1 = max_fd_rel_err(dc.data(), |i, d| {
                let mut l2 = layer.clone();
                l2.c.data_mut()[i] += d;
                dot(l2.forward(&x).unwrap().data.data(), u.data.data())
            }, 1);
            let e2 = max_fd_rel_err(dx.data.data(), |i, d| {
                let mut x2 = x.clone();
                x2.data.data_mut()[i] += d;
                dot(layer.forward(&x2).unwrap().data.data(), u.data.data())
            }, 2);
            worst[5] = worst[5].max(e1).max(e2);
        }

        // relu away from the kink
        {
            let x = FeatureField::new(
                Tensor::rand_uniform(&[4, h, h], 0.1, 1.0, &mut rng)
                    .map(|v| if v > 0.55 { v } else { v - 1.1 }),
                Representation::Regular,
                group,
            )?;
            let u = reg_field(&mut rng, group, 1, h);
            let dx = relu_backward(&x, &u)?;
            let e = max_fd_rel_err(dx.data.data(), |i, d| {
                let mut x2 = x.clone();
                x2.data.data_mut()[i] += d;
                dot(relu(&x2).data.data(), u.data.data())
            }, 1);
            worst[6] = worst[6].max(e);
        }

        // regularizers: the FD contract only holds away from the L1 kinks,
        // so resample until every relevant difference clears the tie band
        {
            let min_gap = 5e-3;
            let w = loop {
                let w = Tensor::<f64>::rand_uniform(&[2, 4], -1.0, 1.0, &mut rng);
                let mut gap = f64::INFINITY;
                for l in 0..2 {
                    for a in 0..4 {
                        for b in 0..4 {
                            if a != b {
                                gap = gap.min((w.at(&[l, a]) - w.at(&[l, b])).abs());
                            }
                        }
                    }
                }
                if gap > min_gap {
                    break w;
                }
            };
            let (_, grad) = l_gconv(&w, 0.3)?;
            let e1 = max_fd_rel_err(grad.data(), |i, d| {
                let mut w2 = w.clone();
                w2.data_mut()[i] += d;
                l_gconv(&w2, 0.3).unwrap().0
            }, 1);

            let ws = loop {
                let ws = Tensor::<f64>::rand_uniform(&[3, 3, 2], -1.0, 1.0, &mut rng);
                let mut gap = f64::INFINITY;
                for m in 0..3 {
                    for n in 0..3 {
                        for r in 0..2 {
                            if m + 1 < 3 {
                                gap = gap.min((ws.at(&[m + 1, n, r]) - ws.at(&[m, n, r])).abs());
                            }
                            if n + 1 < 3 {
                                gap = gap.min((ws.at(&[m, n + 1, r]) - ws.at(&[m, n, r])).abs());
                            }
                        }
                    }
                }
                if gap > min_gap {
                    break ws;
                }
            };
            let (_, grad) = l_sconv(&ws, 0.3)?;
            let e2 = max_fd_rel_err(grad.data(), |i, d| {
                let mut w2 = ws.clone();
                w2.data_mut()[i] += d;
                l_sconv(&w2, 0.3).unwrap().0
            }, 1);

            let (rep_in, rep_out) = (Representation::Trivial, Representation::Irrep(1));
            let phi = loop {
                let phi =
                    Tensor::<f64>::rand_uniform(&[4, 4, 2, 1, 1, 1], -1.0, 1.0, &mut rng);
                if hinge_residual_gap(&phi, group, &rep_in, &rep_out)? > min_gap {
                    break phi;
                }
            };
            let (_, grad) = l_hinge(&phi, group, &rep_in, &rep_out, 0.3)?;
            let e3 = max_fd_rel_err(grad.data(), |i, d| {
                let mut p2 = phi.clone();
                p2.data_mut()[i] += d;
                l_hinge(&p2, group, &rep_in, &rep_out, 0.3).unwrap().0
            }, 3);
            worst[7] = worst[7].max(e1).max(e2).max(e3);
        }

        // full unrolled loss on a 2-layer model (one instance in four to
        // keep the suite fast)
        if inst % 4 == 0 {
            let ds = gen_heat(&SimConfig {
                grid: 8,
                dt: 0.5,
                steps: 8,
                kind: GeneratorKind::Heat,
                delta: 0.2,
                seed: seed ^ inst as u64,
            })?;
            let spec = ModelSpec {
                family: if inst % 8 == 0 {
                    ModelFamily::RSteer
                } else {
                    ModelFamily::RGConv
                },
                group: 4,
                depth: 2,
                hidden: 1,
                k: 1,
                banks: 2,
                relax: RelaxMode::Spatial,
                n_angles: 0,
                combo_prefix: 0,
                rank: 1,
            };
            let mut model = Model::<f64>::build(&spec, &Representation::Trivial, 3, 8, seed)?;
            // move relaxation weights off the tie with guaranteed pairwise
            // separation (the FD contract only holds away from the
            // non-smooth points of the L1 penalties)
            let names = model.param_names();
            for (pi, p) in model.params_mut().into_iter().enumerate() {
                if names[pi].ends_with(".w") {
                    for (i, v) in p.data_mut().iter_mut().enumerate() {
                        *v = 0.02 + 0.005 * i as f64;
                    }
                } else {
                    for v in p.data_mut().iter_mut() {
                        *v += 0.01 * (rng.gen::<f64>() - 0.5);
                    }
                }
            }
            let windows = sliding_windows(&ds, 3, 2)?;
            let batch = &windows[..2];
            let (_, grads) = loss_and_grad(&model, &ds, batch, 2, 1e-3)?;
            let names = model.param_names();
            let mut e = 0.0f64;
            for (pi, g) in grads.iter().enumerate() {
                let stride = (g.len() / 8).max(1);
                let err = max_fd_rel_err(g.data(), |i, d| {
                    let mut m2 = model.clone();
                    m2.params_mut()[pi].data_mut()[i] += d;
                    loss_and_grad(&m2, &ds, batch, 2, 1e-3).unwrap().0.total
                }, stride);
                e = e.max(err);
                let _ = &names;
            }
            worst[8] = worst[8].max(e);
        }
    }

    let names = [
        "group conv gradients",
        "relaxed group conv gradients",
        "steerable conv gradients",
        "relaxed steerable conv gradients",
        "low-rank relaxation gradients",
        "lift gradients",
        "relu gradients",
        "regularizer gradients",
        "unrolled loss gradients",
    ];
    for (i, name) in names.iter().enumerate() {
        report.push(
            *name,
            worst[i] <= FD_TOL,
            format!("max relative error {:.3e} (tol {FD_TOL:.0e})", worst[i]),
        );
    }
    Ok(report)
}

/// Basis-solver checks: nullspace dimensions against counting oracles,
/// residuals, determinism.
pub fn suite_basis() -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "basis".into(),
        checks: Vec::new(),
    };
    let c4 = CyclicGroup::new(4)?;

    let triv: KernelBasis<f64> =
        solve_basis(c4, &Representation::Trivial, &Representation::Trivial, 1)?;
    report.push(
        "trivial->trivial 3x3 dimension",
        triv.len() == 3,
        format!("L = {} (orbit count 3)", triv.len()),
    );

    let mut max_res: f64 = verify_basis(&triv)?;
    let pairs = [
        (Representation::Regular, Representation::Regular),
        (Representation::Regular, Representation::Irrep(1)),
        (
            Representation::DirectSum(vec![Representation::Trivial, Representation::Irrep(1)]),
            Representation::Regular,
        ),
    ];
    for (rin, rout) in &pairs {
        let b: KernelBasis<f64> = solve_basis(c4, rin, rout, 1)?;
        max_res = max_res.max(verify_basis(&b)?);
    }
    report.push(
        "steerable constraint residuals",
        max_res <= 1e-10,
        format!("max residual {max_res:.3e} (tol 1e-10)"),
    );

    let empty: KernelBasis<f64> =
        solve_basis(c4, &Representation::Irrep(1), &Representation::Trivial, 0)?;
    report.push(
        "irrep(1)->trivial 1x1 is empty",
        empty.is_empty(),
        format!("L = {}", empty.len()),
    );

    let a: KernelBasis<f64> =
        solve_basis(c4, &Representation::Regular, &Representation::Regular, 1)?;
    let b: KernelBasis<f64> =
        solve_basis(c4, &Representation::Regular, &Representation::Regular, 1)?;
    let deterministic =
        a.len() == b.len() && a.elems.iter().zip(b.elems.iter()).all(|(x, y)| x == y);
    report.push(
        "solver determinism",
        deterministic,
        "reruns produce bit-identical bases",
    );
    Ok(report)
}

/// Proposition checks over randomized valid instances.
pub fn suite_props(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "props".into(),
        checks: Vec::new(),
    };
    let group = CyclicGroup::new(4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok33 = 0usize;
    let mut ok34 = 0usize;
    for i in 0..instances {
        let rep = match i % 3 {
            0 => Representation::Irrep(1),
            1 => Representation::Regular,
            _ => Representation::DirectSum(vec![
                Representation::Trivial,
                Representation::Irrep(1),
            ]),
        };
        let d = rep.dim(group);
        let points = group.order() * (1 + i % 3);
        let perm: Vec<Vec<usize>> = (0..group.order())
            .map(|g| {
                (0..points)
                    .map(|p| (p / group.order()) * group.order() + (p % group.order() + g) % group.order())
                    .collect()
            })
            .collect();
        let f = FunctionTable {
            values: Tensor::rand_uniform(&[points, d], -1.0, 1.0, &mut rng),
            point_perm: perm,
            group,
            rep,
        };
        let f_eq = f.group_average()?;
        if check_prop_33(&f, &f_eq)?.0 {
            ok33 += 1;
        }
        let mut theta = f.clone();
        let eps = rng.gen::<f64>() * 0.3;
        for v in theta.values.data_mut() {
            *v += (rng.gen::<f64>() - 0.5) * eps;
        }
        let mut sup = 0.0f64;
        for p in 0..points {
            let mut e2 = 0.0;
            for a in 0..d {
                let diff = f.values.at(&[p, a]) - theta.values.at(&[p, a]);
                e2 += diff * diff;
            }
            sup = sup.max(e2.sqrt());
        }
        if check_prop_34(&f, &theta, sup)? {
            ok34 += 1;
        }
    }
    report.push(
        "approximation lower bound (prop 3.3)",
        ok33 == instances,
        format!("{ok33}/{instances} instances"),
    );
    report.push(
        "equivariance error stability (prop 3.4)",
        ok34 == instances,
        format!("{ok34}/{instances} instances"),
    );
    Ok(report)
}

/// Tied-weight reductions: every relaxed family with constant relaxation
/// weights must match its strict counterpart.
pub fn suite_reductions(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "reductions".into(),
        checks: Vec::new(),
    };
    let group = CyclicGroup::new(4)?;
    let basis = solve_basis::<f64>(group, &Representation::Regular, &Representation::Regular, 1)?;
    let mut worst_g: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    let mut worst_a: f64 = 0.0;
    let mut worst_l: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(inst as u64));
        let h = 5 + (inst % 4);

        // relaxed group conv with constant weights = strict with the
        // weighted bank sum
        {
            let banks: Vec<Tensor<f64>> = (0..3)
                .map(|_| Tensor::rand_uniform(&[4, 1, 1, 3, 3], -1.0, 1.0, &mut rng))
                .collect();
            let coefs: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let mut w = Tensor::zeros(&[3, 4]);
            for l in 0..3 {
                for s in 0..4 {
                    *w.at_mut(&[l, s]) = coefs[l];
                }
            }
            let relaxed =
                RelaxedGroupConvLayer::new(group, 1, 1, 1, banks.clone(), w)?;
            let mut summed = Tensor::zeros(&[4, 1, 1, 3, 3]);
            for (l, b) in banks.iter().enumerate() {
                summed.add_scaled(b, coefs[l])?;
            }
            let strict = GroupConvLayer {
                group,
                out_mult: 1,
                in_mult: 1,
                k: 1,
                kernel: summed,
            };
            let x = reg_field(&mut rng, group, 1, h);
            worst_g = worst_g.max(max_abs_diff(
                &relaxed.forward(&x)?.data,
                &strict.forward(&x)?.data,
            ));
        }

        // relaxed steerable (per-offset) with constant weights
        {
            let mut strict = SteerableConvLayer::zeros(basis.clone(), 1, 1);
            strict.w = Tensor::rand_uniform(strict.w.dims(), -1.0, 1.0, &mut rng);
            let mut relaxed = RelaxedSteerableConvLayer::zeros(
                basis.clone(),
                1,
                1,
                SpatialWeights::PerOffset,
            );
            for ky in 0..3 {
                for kx in 0..3 {
                    for l in 0..basis.len() {
                        *relaxed.w.at_mut(&[ky, kx, 0, 0, l]) = strict.w.at(&[0, 0, l]);
                    }
                }
            }
            let x = reg_field(&mut rng, group, 1, h);
            worst_s = worst_s.max(max_abs_diff(
                &relaxed.forward(&x)?.data,
                &strict.forward(&x)?.data,
            ));
        }

        // angular variant with constant weights
        {
            let mut strict = SteerableConvLayer::zeros(basis.clone(), 1, 1);
            strict.w = Tensor::rand_uniform(strict.w.dims(), -1.0, 1.0, &mut rng);
            let mut relaxed = RelaxedSteerableConvLayer::zeros(
                basis.clone(),
                1,
                1,
                SpatialWeights::Angular { n_angles: 4 },
            );
            for slot in 0..5 {
                for l in 0..basis.len() {
                    *relaxed.w.at_mut(&[slot, 0, 0, l]) = strict.w.at(&[0, 0, l]);
                }
            }
            let x = reg_field(&mut rng, group, 1, h);
            worst_a = worst_a.max(max_abs_diff(
                &relaxed.forward(&x)?.data,
                &strict.forward(&x)?.data,
            ));
        }

        // low-rank with R=1, a == 1 equals the per-offset relaxed layer
        {
            let mut lr = LowRankSteerableConvLayer::zeros(basis.clone(), 1, 1, h, h, 1);
            lr.a.fill(1.0);
            lr.b = Tensor::rand_uniform(lr.b.dims(), -1.0, 1.0, &mut rng);
            let mut rsteer = RelaxedSteerableConvLayer::zeros(
                basis.clone(),
                1,
                1,
                SpatialWeights::PerOffset,
            );
            for l in 0..basis.len() {
                for ky in 0..3 {
                    for kx in 0..3 {
                        *rsteer.w.at_mut(&[ky, kx, 0, 0, l]) = lr.b.at(&[0, l, ky, kx, 0, 0]);
                    }
                }
            }
            let x = reg_field(&mut rng, group, 1, h);
            worst_l = worst_l.max(max_abs_diff(
                &lr.forward(&x)?.data,
                &rsteer.forward(&x)?.data,
            ));
        }
    }
    report.push(
        "relaxed group conv tie",
        worst_g <= 1e-6,
        format!("max diff {worst_g:.3e} over {instances} instances"),
    );
    report.push(
        "relaxed steerable tie",
        worst_s <= 1e-6,
        format!("max diff {worst_s:.3e}"),
    );
    report.push(
        "angular relaxed steerable tie",
        worst_a <= 1e-6,
        format!("max diff {worst_a:.3e}"),
    );
    report.push(
        "low-rank translation tie",
        worst_l <= 1e-6,
        format!("max diff {worst_l:.3e}"),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradcheck_suite_passes() {
        let report = suite_gradcheck(1234, 4).unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn basis_suite_passes() {
        let report = suite_basis().unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn props_suite_passes() {
        let report = suite_props(7, 100).unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn reductions_suite_passes() {
        let report = suite_reductions(11, 20).unwrap();
        assert!(report.passed(), "{}", report.render());
    }
}
