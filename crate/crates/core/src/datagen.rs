//! Synthetic approximately symmetric 2D dynamics with a tunable
//! symmetry-breaking magnitude, plus the data-equivariance-error measurement.
//!
//! Both generators integrate the reference configuration and every rotated
//! configuration with the same stencils, arranged so that at delta = 0 the
//! trajectories are exact C4 rotations of each other down to the last bit:
//! directional terms are grouped in pairs that swap wholesale under quarter
//! turns, which IEEE addition commutes over.

use crate::error::{Error, Result};
use crate::group::{act_on_field, CyclicGroup, FeatureField, Representation};
use crate::io;
use crate::scalar::{cast, Scalar};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Base diffusion coefficient of the heat generator.
const HEAT_KAPPA0: f64 = 0.2;
/// Buoyancy magnitude and velocity damping of the smoke proxy. Buoyancy is
/// deliberately a dominant force so the per-trajectory magnitude differences
/// show up in the one-step dynamics, not only in long-horizon drift.
const SMOKE_BUOYANCY: f64 = 1.0;
const SMOKE_DAMPING: f64 = 0.7;
/// Total peak density injected over the whole inflow phase; the per-step
/// amplitude is this divided by the shutoff step so longer rollouts stay
/// inside the CFL budget.
const SMOKE_INFLOW_TOTAL: f64 = 1.2;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Heat,
    RotSmoke,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Square grid side H; must be even so C4 rotation is an exact
    /// index permutation.
    pub grid: usize,
    pub dt: f64,
    /// Number of recorded frames (the initial state counts).
    pub steps: usize,
    pub kind: GeneratorKind,
    /// Symmetry-breaking magnitude, >= 0; 0 gives exactly C4-related data.
    pub delta: f64,
    pub seed: u64,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.grid < 4 || self.grid % 2 != 0 {
            return Err(Error::Config(format!(
                "grid must be even and >= 4, got {}",
                self.grid
            )));
        }
        if self.steps < 2 {
            return Err(Error::Config("need at least 2 frames".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Config("delta must be >= 0".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        Ok(())
    }
}

/// One rollout plus the group element relating its configuration to the
/// reference one.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub tag: usize,
    /// (steps, channels, H, W)
    pub frames: Tensor<f64>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    pub config: SimConfig,
    pub group: CyclicGroup,
    /// Channel action of one frame (multiplicity 1 per frame).
    pub channel_rep: Representation,
    /// Measured data equivariance error, filled by the generators.
    pub declared_data_ee: Option<f64>,
}

impl TrajectoryDataset {
    pub fn channels(&self) -> usize {
        self.trajectories[0].frames.dims()[1]
    }

    pub fn grid(&self) -> usize {
        self.config.grid
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn frame(&self, traj: usize, t: usize) -> Result<FeatureField<f64>> {
        let tr = &self.trajectories[traj];
        let dims = tr.frames.dims();
        let (c, h, w) = (dims[1], dims[2], dims[3]);
        let chw = c * h * w;
        let data = tr.frames.data()[t * chw..(t + 1) * chw].to_vec();
        FeatureField::new(
            Tensor::from_vec(&[c, h, w], data)?,
            self.channel_rep.clone(),
            self.group,
        )
    }
}

/// Step counter after which the smoke inflow shuts off.
pub fn inflow_shutoff(steps: usize) -> usize {
    (steps / 4).max(1)
}

/// Dispatch on `config.kind`.
pub fn generate(config: &SimConfig) -> Result<TrajectoryDataset> {
    match config.kind {
        GeneratorKind::Heat => gen_heat(config),
        GeneratorKind::RotSmoke => gen_rotsmoke(config),
    }
}

/// Heat diffusion with a spatially varying coefficient
/// kappa(x) = kappa0 * (1 + delta * p(x)), zero-flux boundaries, and a hot
/// disk initial condition placed at a position rotated by g for each g in C4.
pub fn gen_heat(config: &SimConfig) -> Result<TrajectoryDataset> {
    config.validate()?;
    let h = config.grid;
    let group = CyclicGroup::new(4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let perturbation = smooth_perturbation(h, &mut rng);
    let kappa: Vec<f64> = perturbation
        .iter()
        .map(|&p| HEAT_KAPPA0 * (1.0 + config.delta * p))
        .collect();
    let kappa_max = kappa.iter().cloned().fold(0.0, f64::max);
    if config.dt * kappa_max > 0.25 {
        return Err(Error::Config(format!(
            "unstable heat step: dt * kappa_max = {} > 0.25",
            config.dt * kappa_max
        )));
    }

    // reference initial condition: hot disk below the grid center
    let ctr = (h as f64 - 1.0) / 2.0;
    let radius = h as f64 / 6.0;
    let (disk_r, disk_c) = (ctr + h as f64 / 4.0, ctr);
    let mut ic0 = Tensor::<f64>::zeros(&[1, h, h]);
    for i in 0..h {
        for j in 0..h {
            let d2 = (i as f64 - disk_r).powi(2) + (j as f64 - disk_c).powi(2);
            if d2 <= radius * radius {
                *ic0.at_mut(&[0, i, j]) = 1.0;
            }
        }
    }
    let ic0 = FeatureField::new(ic0, Representation::Trivial, group)?;

    let mut trajectories = Vec::with_capacity(4);
    for g in group.elements() {
        let ic = act_on_field(g, &ic0)?;
        let mut u = ic.data.data().to_vec();
        let mut frames = Vec::with_capacity(config.steps * h * h);
        frames.extend_from_slice(&u);
        for _ in 1..config.steps {
            heat_step(&mut u, &kappa, h, config.dt);
            frames.extend_from_slice(&u);
        }
        trajectories.push(Trajectory {
            tag: g,
            frames: Tensor::from_vec(&[config.steps, 1, h, h], frames)?,
        });
    }
    let mut ds = TrajectoryDataset {
        trajectories,
        config: config.clone(),
        group,
        channel_rep: Representation::Trivial,
        declared_data_ee: None,
    };
    ds.declared_data_ee = Some(measure_data_ee(&ds)?);
    Ok(ds)
}

/// One explicit step of u += dt * div(kappa grad u) with face-averaged
/// coefficients and zero-flux boundaries. Row and column contributions are
/// kept as separate pairs so quarter rotations permute them exactly.
fn heat_step(u: &mut [f64], kappa: &[f64], h: usize, dt: f64) {
    let w = h;
    let mut div = vec![0.0f64; u.len()];
    for i in 0..h {
        for j in 0..w {
            let idx = i * w + j;
            let (uc, kc) = (u[idx], kappa[idx]);
            let mut row_pair = 0.0;
            if i > 0 {
                row_pair += 0.5 * (kc + kappa[idx - w]) * (u[idx - w] - uc);
            }
            if i + 1 < h {
                row_pair += 0.5 * (kc + kappa[idx + w]) * (u[idx + w] - uc);
            }
            let mut col_pair = 0.0;
            if j > 0 {
                col_pair += 0.5 * (kc + kappa[idx - 1]) * (u[idx - 1] - uc);
            }
            if j + 1 < w {
                col_pair += 0.5 * (kc + kappa[idx + 1]) * (u[idx + 1] - uc);
            }
            div[idx] = row_pair + col_pair;
        }
    }
    for (x, d) in u.iter_mut().zip(div) {
        *x += dt * d;
    }
}

/// Fixed smooth perturbation field with no rotational symmetry, normalized to
/// max-abs 1. Seeded, so datasets are reproducible.
fn smooth_perturbation(h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = vec![0.0f64; h * h];
    let two_pi = 2.0 * std::f64::consts::PI;
    for _ in 0..3 {
        let (fa, fb) = (rng.gen_range(1..=3) as f64, rng.gen_range(1..=3) as f64);
        let amp = 0.5 + 0.5 * rng.gen::<f64>();
        let phase = two_pi * rng.gen::<f64>();
        for i in 0..h {
            for j in 0..h {
                p[i * h + j] +=
                    amp * (two_pi * (fa * i as f64 + 2.0 * fb * j as f64) / h as f64 + phase).sin();
            }
        }
    }
    let max = p.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
    for x in &mut p {
        *x /= max;
    }
    p
}

/// Buoyancy-magnitude variants per orientation: every rotation g appears in
/// several simulations whose magnitudes differ by a small jitter, so a
/// domain split holds out a simulation whose orientation is still covered by
/// the training set (the few-trajectory analogue of the many-simulation
/// datasets). Variants coincide bit-exactly at delta = 0.
const SMOKE_VARIANTS: usize = 2;
const SMOKE_VARIANT_JITTER: f64 = 0.1;

/// Smoke-plume proxy: density injected at an inflow position rotated by g,
/// radially directed buoyant acceleration with magnitude scaled by
/// (1 + delta * (g + jitter) / n) per simulation, damped velocity, donor-cell
/// upwind advection of the density. Channels: (density, vx, vy), vy up.
pub fn gen_rotsmoke(config: &SimConfig) -> Result<TrajectoryDataset> {
    config.validate()?;
    let h = config.grid;
    let group = CyclicGroup::new(4)?;
    let n = group.order();
    let ctr = (h as f64 - 1.0) / 2.0;

    // radial unit field; exactly C4-equivariant in floating point because
    // negation and commutative sums are exact
    let mut rhat_x = vec![0.0f64; h * h];
    let mut rhat_y = vec![0.0f64; h * h];
    for i in 0..h {
        for j in 0..h {
            let dx = j as f64 - ctr;
            let dy = ctr - i as f64;
            let r = (dx * dx + dy * dy).sqrt();
            if r > 0.0 {
                rhat_x[i * h + j] = dx / r;
                rhat_y[i * h + j] = dy / r;
            }
        }
    }

    // reference inflow blob below the center
    let shutoff = inflow_shutoff(config.steps);
    let sigma = h as f64 / 10.0;
    let amplitude = SMOKE_INFLOW_TOTAL / shutoff as f64;
    let (src_r, src_c) = (ctr + h as f64 / 4.0, ctr);
    let mut blob0 = Tensor::<f64>::zeros(&[1, h, h]);
    for i in 0..h {
        for j in 0..h {
            let d2 = (i as f64 - src_r).powi(2) + (j as f64 - src_c).powi(2);
            *blob0.at_mut(&[0, i, j]) = amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let blob0 = FeatureField::new(blob0, Representation::Trivial, group)?;

    let mut trajectories = Vec::with_capacity(n * SMOKE_VARIANTS);
    for g in group.elements() {
        let blob = act_on_field(g, &blob0)?;
        for variant in 0..SMOKE_VARIANTS {
            let bmag = SMOKE_BUOYANCY
                * (1.0
                    + config.delta * (g as f64 + SMOKE_VARIANT_JITTER * variant as f64)
                        / n as f64);
            let mut rho = blob.data.data().to_vec();
            let mut vx = vec![0.0f64; h * h];
            let mut vy = vec![0.0f64; h * h];
            let mut frames = Vec::with_capacity(config.steps * 3 * h * h);
            frames.extend_from_slice(&rho);
            frames.extend_from_slice(&vx);
            frames.extend_from_slice(&vy);
            for t in 1..config.steps {
                smoke_step(
                    &mut rho, &mut vx, &mut vy, &rhat_x, &rhat_y, bmag, h, config.dt,
                )?;
                if t < shutoff {
                    for (r, s) in rho.iter_mut().zip(blob.data.data()) {
                        *r += *s;
                    }
                }
                frames.extend_from_slice(&rho);
                frames.extend_from_slice(&vx);
                frames.extend_from_slice(&vy);
            }
            trajectories.push(Trajectory {
                tag: g,
                frames: Tensor::from_vec(&[config.steps, 3, h, h], frames)?,
            });
        }
    }
    let mut ds = TrajectoryDataset {
        trajectories,
        config: config.clone(),
        group,
        channel_rep: Representation::DirectSum(vec![
            Representation::Trivial,
            Representation::Irrep(1),
        ]),
        declared_data_ee: None,
    };
    ds.declared_data_ee = Some(measure_data_ee(&ds)?);
    Ok(ds)
}

/// Buoyancy kick, damping, CFL check, then conservative donor-cell advection
/// of the density with zero-inflow boundaries.
#[allow(clippy::too_many_arguments)]
fn smoke_step(
    rho: &mut [f64],
    vx: &mut [f64],
    vy: &mut [f64],
    rhat_x: &[f64],
    rhat_y: &[f64],
    bmag: f64,
    h: usize,
    dt: f64,
) -> Result<()> {
    let w = h;
    for p in 0..h * w {
        vx[p] += dt * bmag * rhat_x[p] * rho[p];
        vy[p] += dt * bmag * rhat_y[p] * rho[p];
    }
    let decay = 1.0 - SMOKE_DAMPING * dt;
    for p in 0..h * w {
        vx[p] *= decay;
        vy[p] *= decay;
    }
    let max_col = vx.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let max_row = vy.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if dt * (max_col + max_row) > 0.9 {
        return Err(Error::Config(format!(
            "CFL violation: dt * (|vx| + |vy|) = {}",
            dt * (max_col + max_row)
        )));
    }

    // face fluxes; vy points up so the row velocity is -vy
    let donor = |u: f64, left: f64, right: f64| if u >= 0.0 { u * left } else { u * right };
    // col_flux[i][j] = flux through the face left of column j, j in 0..=w
    let mut col_flux = vec![0.0f64; h * (w + 1)];
    for i in 0..h {
        for j in 0..=w {
            col_flux[i * (w + 1) + j] = if j == 0 {
                let u = vx[i * w];
                if u < 0.0 {
                    u * rho[i * w]
                } else {
                    0.0
                }
            } else if j == w {
                let u = vx[i * w + w - 1];
                if u > 0.0 {
                    u * rho[i * w + w - 1]
                } else {
                    0.0
                }
            } else {
                let u = 0.5 * (vx[i * w + j - 1] + vx[i * w + j]);
                donor(u, rho[i * w + j - 1], rho[i * w + j])
            };
        }
    }
    // row_flux[i][j] = flux through the face above row i, i in 0..=h
    let mut row_flux = vec![0.0f64; (h + 1) * w];
    for i in 0..=h {
        for j in 0..w {
            row_flux[i * w + j] = if i == 0 {
                let u = -vy[j];
                if u < 0.0 {
                    u * rho[j]
                } else {
                    0.0
                }
            } else if i == h {
                let u = -vy[(h - 1) * w + j];
                if u > 0.0 {
                    u * rho[(h - 1) * w + j]
                } else {
                    0.0
                }
            } else {
                let u = 0.5 * (-vy[(i - 1) * w + j] + -vy[i * w + j]);
                donor(u, rho[(i - 1) * w + j], rho[i * w + j])
            };
        }
    }
    for i in 0..h {
        for j in 0..w {
            let col_pair = col_flux[i * (w + 1) + j + 1] - col_flux[i * (w + 1) + j];
            let row_pair = row_flux[(i + 1) * w + j] - row_flux[i * w + j];
            rho[i * w + j] -= dt * (col_pair + row_pair);
        }
    }
    Ok(())
}

/// Rotates every trajectory back by the inverse of its tag (grid rotation
/// plus the channel action) and returns the mean absolute deviation from the
/// g = 0 reference, averaged over frames, pixels, channels, and the
/// non-reference trajectories.
pub fn measure_data_ee(ds: &TrajectoryDataset) -> Result<f64> {
    let reference = ds
        .trajectories
        .iter()
        .position(|t| t.tag == 0)
        .ok_or_else(|| Error::Data("no reference trajectory with tag g=0".into()))?;
    if ds.trajectories.len() == 1 {
        return Ok(0.0);
    }
    let steps = ds.steps();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (ti, tr) in ds.trajectories.iter().enumerate() {
        if ti == reference {
            continue;
        }
        let back_tag = ds.group.inverse(tr.tag)?;
        for t in 0..steps {
            let frame = ds.frame(ti, t)?;
            let back = act_on_field(back_tag, &frame)?;
            let ref_frame = ds.frame(reference, t)?;
            for (a, b) in back.data.data().iter().zip(ref_frame.data.data()) {
                total += (a - b).abs();
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// A contiguous (input window, target window) sample: indices into a
/// trajectory, materialized on demand.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub traj: usize,
    pub start: usize,
}

/// All contiguous windows of every trajectory.
pub fn sliding_windows(
    ds: &TrajectoryDataset,
    input_len: usize,
    target_len: usize,
) -> Result<Vec<Window>> {
    if ds.steps() < input_len + target_len {
        return Err(Error::Data(format!(
            "trajectory too short: {} frames < input {} + target {}",
            ds.steps(),
            input_len,
            target_len
        )));
    }
    let per_traj = ds.steps() - input_len - target_len + 1;
    let mut windows = Vec::with_capacity(ds.trajectories.len() * per_traj);
    for traj in 0..ds.trajectories.len() {
        for start in 0..per_traj {
            windows.push(Window { traj, start });
        }
    }
    Ok(windows)
}

/// Input windows concatenate `input_len` frames along channels
/// (multiplicity = input_len copies of the frame representation).
pub fn window_input<T: Scalar>(
    ds: &TrajectoryDataset,
    w: Window,
    input_len: usize,
) -> Result<FeatureField<T>> {
    let tr = &ds.trajectories[w.traj];
    let dims = tr.frames.dims();
    let (c, hh, ww) = (dims[1], dims[2], dims[3]);
    let chw = c * hh * ww;
    let src = &tr.frames.data()[w.start * chw..(w.start + input_len) * chw];
    let data: Vec<T> = src.iter().map(|&x| cast::<T>(x)).collect();
    FeatureField::new(
        Tensor::from_vec(&[input_len * c, hh, ww], data)?,
        ds.channel_rep.clone(),
        ds.group,
    )
}

/// Target frames following a window, each (channels, H, W).
pub fn window_targets<T: Scalar>(
    ds: &TrajectoryDataset,
    w: Window,
    input_len: usize,
    target_len: usize,
) -> Result<Vec<Tensor<T>>> {
    let tr = &ds.trajectories[w.traj];
    let dims = tr.frames.dims();
    let (c, hh, ww) = (dims[1], dims[2], dims[3]);
    let chw = c * hh * ww;
    (0..target_len)
        .map(|k| {
            let t = w.start + input_len + k;
            let data: Vec<T> = tr.frames.data()[t * chw..(t + 1) * chw]
                .iter()
                .map(|&x| cast::<T>(x))
                .collect();
            Tensor::from_vec(&[c, hh, ww], data)
        })
        .collect()
}

/// test-future split: per trajectory, later windows are held out.
pub fn split_future(windows: &[Window], test_frac: f64) -> (Vec<Window>, Vec<Window>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let max_start = windows.iter().map(|w| w.start).max().unwrap_or(0);
    let cut = ((max_start + 1) as f64 * (1.0 - test_frac)).ceil() as usize;
    for &w in windows {
        if w.start < cut {
            train.push(w);
        } else {
            test.push(w);
        }
    }
    (train, test)
}

/// test-domain split: whole trajectories are held out. The held-out block is
/// taken from the middle of the configuration range, so transferring to it
/// is interpolation rather than extrapolation in the symmetry-breaking
/// magnitude (the many-simulation analogue holds out interior
/// configurations).
pub fn split_domain(ds: &TrajectoryDataset, test_frac: f64) -> (Vec<usize>, Vec<usize>) {
    let n = ds.trajectories.len();
    let n_test = ((n as f64 * test_frac).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let start = (n - n_test + 1) / 2;
    let test: Vec<usize> = (start..start + n_test).collect();
    let train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
    (train, test)
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    config: SimConfig,
    group_order: usize,
    channel_rep: Representation,
    tags: Vec<usize>,
    declared_data_ee: Option<f64>,
}

/// Writes tensors plus a sidecar metadata document into `dir`.
pub fn save_dataset(ds: &TrajectoryDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        config: ds.config.clone(),
        group_order: ds.group.order(),
        channel_rep: ds.channel_rep.clone(),
        tags: ds.trajectories.iter().map(|t| t.tag).collect(),
        declared_data_ee: ds.declared_data_ee,
    };
    std::fs::write(
        dir.join("metadata.json"),
        serde_json::to_string_pretty(&meta).unwrap(),
    )?;
    for (i, tr) in ds.trajectories.iter().enumerate() {
        io::write_tensor(&dir.join(format!("traj_{i:02}_g{}.aeqv", tr.tag)), &tr.frames)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<TrajectoryDataset> {
    let meta: DatasetMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metadata.json"))?)
            .map_err(|e| Error::Format(format!("dataset metadata: {e}")))?;
    let group = CyclicGroup::new(meta.group_order)?;
    let mut trajectories = Vec::with_capacity(meta.tags.len());
    for (i, &tag) in meta.tags.iter().enumerate() {
        let frames = io::read_tensor(&dir.join(format!("traj_{i:02}_g{tag}.aeqv")))?;
        trajectories.push(Trajectory { tag, frames });
    }
    Ok(TrajectoryDataset {
        trajectories,
        config: meta.config,
        group,
        channel_rep: meta.channel_rep,
        declared_data_ee: meta.declared_data_ee,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat_config(delta: f64) -> SimConfig {
        SimConfig {
            grid: 16,
            dt: 0.5,
            steps: 30,
            kind: GeneratorKind::Heat,
            delta,
            seed: 7,
        }
    }

    fn smoke_config(delta: f64) -> SimConfig {
        SimConfig {
            grid: 16,
            dt: 0.25,
            steps: 40,
            kind: GeneratorKind::RotSmoke,
            delta,
            seed: 7,
        }
    }

    #[test]
    fn heat_delta_zero_trajectories_are_exact_rotations() {
        let ds = gen_heat(&heat_config(0.0)).unwrap();
        let g1 = &ds.trajectories[1];
        assert_eq!(g1.tag, 1);
        for t in 0..ds.steps() {
            let rotated = act_on_field(1, &ds.frame(0, t).unwrap()).unwrap();
            let diff: f64 = rotated
                .data
                .data()
                .iter()
                .zip(ds.frame(1, t).unwrap().data.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-12, "frame {t} diff {diff}");
        }
        assert!(ds.declared_data_ee.unwrap() <= 1e-12);
    }

    #[test]
    fn heat_ee_grows_with_delta() {
        let small = gen_heat(&heat_config(0.05)).unwrap().declared_data_ee.unwrap();
        let large = gen_heat(&heat_config(0.5)).unwrap().declared_data_ee.unwrap();
        assert!(large > 2.0 * small, "EE({large}) vs EE({small})");
    }

    #[test]
    fn unstable_heat_step_is_config_error() {
        let mut cfg = heat_config(0.0);
        cfg.dt = 2.0; // dt * kappa = 0.4 > 0.25
        assert!(gen_heat(&cfg).is_err());
    }

    #[test]
    fn heat_conserves_total_heat() {
        let mut cfg = heat_config(0.3);
        cfg.steps = 101;
        let ds = gen_heat(&cfg).unwrap();
        let hh = cfg.grid * cfg.grid;
        let frames = &ds.trajectories[0].frames;
        let mass =
            |t: usize| frames.data()[t * hh..(t + 1) * hh].iter().sum::<f64>();
        let (m0, m100) = (mass(0), mass(100));
        let drift = ((m100 - m0) / m0).abs();
        assert!(drift <= 1e-9, "heat drift {drift}");
    }

    #[test]
    fn smoke_delta_zero_is_exactly_symmetric() {
        let ds = gen_rotsmoke(&smoke_config(0.0)).unwrap();
        assert!(ds.declared_data_ee.unwrap() <= 1e-12);
    }

    #[test]
    fn smoke_mass_nonincreasing_after_shutoff() {
        let cfg = smoke_config(0.2);
        let ds = gen_rotsmoke(&cfg).unwrap();
        let shutoff = inflow_shutoff(cfg.steps);
        let chw = 3 * cfg.grid * cfg.grid;
        let hw = cfg.grid * cfg.grid;
        let frames = &ds.trajectories[0].frames;
        let mass = |t: usize| frames.data()[t * chw..t * chw + hw].iter().sum::<f64>();
        for t in shutoff + 1..cfg.steps {
            assert!(
                mass(t) <= mass(t - 1) + 1e-12,
                "mass grew at step {t}: {} -> {}",
                mass(t - 1),
                mass(t)
            );
        }
    }

    #[test]
    fn smoke_ee_strictly_increases_over_delta_grid() {
        let mut prev = -1.0;
        for i in 0..10 {
            let delta = 0.05 * i as f64;
            let ee = gen_rotsmoke(&smoke_config(delta))
                .unwrap()
                .declared_data_ee
                .unwrap();
            assert!(ee > prev, "EE not increasing at delta={delta}: {ee} <= {prev}");
            prev = ee;
        }
    }

    #[test]
    fn measure_ee_hand_built_dataset() {
        // two trajectories on a 2x2 grid, 2 frames, trivial channels; the
        // non-reference one is the rotated reference plus a constant 0.3
        let group = CyclicGroup::new(4).unwrap();
        let ref_frames =
            Tensor::from_vec(&[2, 1, 2, 2], (0..8).map(|x| x as f64).collect()).unwrap();
        let mut other = Vec::new();
        for t in 0..2 {
            let frame = Tensor::from_vec(
                &[1, 2, 2],
                ref_frames.data()[t * 4..(t + 1) * 4].to_vec(),
            )
            .unwrap();
            let f = FeatureField::new(frame, Representation::Trivial, group).unwrap();
            let rotated = act_on_field(1, &f).unwrap();
            other.extend(rotated.data.data().iter().map(|x| x + 0.3));
        }
        let ds = TrajectoryDataset {
            trajectories: vec![
                Trajectory {
                    tag: 0,
                    frames: ref_frames,
                },
                Trajectory {
                    tag: 1,
                    frames: Tensor::from_vec(&[2, 1, 2, 2], other).unwrap(),
                },
            ],
            config: SimConfig {
                grid: 2,
                dt: 0.1,
                steps: 2,
                kind: GeneratorKind::Heat,
                delta: 0.0,
                seed: 0,
            },
            group,
            channel_rep: Representation::Trivial,
            declared_data_ee: None,
        };
        let ee = measure_data_ee(&ds).unwrap();
        assert!((ee - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_trajectory_has_zero_ee() {
        let mut ds = gen_heat(&heat_config(0.4)).unwrap();
        ds.trajectories.truncate(1);
        assert_eq!(measure_data_ee(&ds).unwrap(), 0.0);
    }

    #[test]
    fn missing_reference_is_data_error() {
        let mut ds = gen_heat(&heat_config(0.0)).unwrap();
        ds.trajectories.remove(0);
        assert!(measure_data_ee(&ds).is_err());
    }

    #[test]
    fn window_counting_and_errors() {
        let mut cfg = heat_config(0.0);
        cfg.steps = 12;
        let ds = gen_heat(&cfg).unwrap();
        let windows = sliding_windows(&ds, 10, 1).unwrap();
        assert_eq!(windows.len(), 2 * ds.trajectories.len());
        cfg.steps = 10;
        let ds = gen_heat(&cfg).unwrap();
        assert!(sliding_windows(&ds, 10, 1).is_err());
    }

    #[test]
    fn windows_are_views_index_bookkeeping() {
        let mut cfg = heat_config(0.1);
        cfg.steps = 8;
        cfg.grid = 8;
        let ds = gen_heat(&cfg).unwrap();
        let (il, tl) = (3usize, 2usize);
        let windows = sliding_windows(&ds, il, tl).unwrap();
        // sum over all window inputs+targets == sum of frame sums weighted by
        // how many windows cover each frame (direct index arithmetic oracle)
        let mut via_windows = 0.0f64;
        for &w in &windows {
            via_windows += window_input::<f64>(&ds, w, il).unwrap().data.sum();
            for t in window_targets::<f64>(&ds, w, il, tl).unwrap() {
                via_windows += t.sum();
            }
        }
        let per_traj = cfg.steps - il - tl + 1;
        let chw = cfg.grid * cfg.grid;
        let mut oracle = 0.0f64;
        for tr in &ds.trajectories {
            for t in 0..cfg.steps {
                // window starts s with s <= t <= s + il + tl - 1
                let lo = t.saturating_sub(il + tl - 1);
                let hi = t.min(per_traj - 1);
                let covers = if hi >= lo { hi - lo + 1 } else { 0 };
                let frame_sum: f64 = tr.frames.data()[t * chw..(t + 1) * chw].iter().sum();
                oracle += covers as f64 * frame_sum;
            }
        }
        assert!((via_windows - oracle).abs() < 1e-9 * oracle.abs().max(1.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_heat(&heat_config(0.3)).unwrap();
        let b = gen_heat(&heat_config(0.3)).unwrap();
        for (x, y) in a.trajectories.iter().zip(b.trajectories.iter()) {
            assert_eq!(x.frames, y.frames);
        }
        let a = gen_rotsmoke(&smoke_config(0.3)).unwrap();
        let b = gen_rotsmoke(&smoke_config(0.3)).unwrap();
        for (x, y) in a.trajectories.iter().zip(b.trajectories.iter()) {
            assert_eq!(x.frames, y.frames);
        }
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_rotsmoke(&smoke_config(0.15)).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.trajectories.len(), ds.trajectories.len());
        for (a, b) in ds.trajectories.iter().zip(back.trajectories.iter()) {
            assert_eq!(a.tag, b.tag);
            assert_eq!(a.frames, b.frames);
        }
        assert_eq!(back.declared_data_ee, ds.declared_data_ee);
    }

    #[test]
    fn future_and_domain_splits() {
        let mut cfg = heat_config(0.0);
        cfg.steps = 20;
        let ds = gen_heat(&cfg).unwrap();
        let windows = sliding_windows(&ds, 10, 1).unwrap();
        let (train, test) = split_future(&windows, 0.2);
        assert!(!train.is_empty() && !test.is_empty());
        assert_eq!(train.len() + test.len(), windows.len());
        let max_train = train.iter().map(|w| w.start).max().unwrap();
        let min_test = test.iter().map(|w| w.start).min().unwrap();
        assert!(max_train < min_test);

        let (train_t, test_t) = split_domain(&ds, 0.2);
        assert_eq!(train_t, vec![0, 1, 3]);
        assert_eq!(test_t, vec![2]);
    }
}
