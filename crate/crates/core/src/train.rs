//! Loss assembly (multi-step prediction error plus soft equivariance
//! penalties), Adam, the training loop, autoregressive rollout, and
//! checkpoint serialization.

use crate::datagen::{split_future, window_input, window_targets, TrajectoryDataset, Window};
use crate::error::{Error, Result};
use crate::group::{FeatureField, Representation};
use crate::io;
use crate::model::{Model, ModelSpec};
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Prediction steps unrolled through the model during training.
    #[serde(default = "default_unroll")]
    pub unroll: usize,
    /// Soft equivariance regularization coefficient.
    #[serde(default)]
    pub alpha: f64,
    /// Early-stopping patience in epochs (0 disables).
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_input_len")]
    pub input_len: usize,
    /// Fraction of training windows (latest starts) held out for validation.
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    50
}
fn default_unroll() -> usize {
    4
}
fn default_patience() -> usize {
    5
}
fn default_input_len() -> usize {
    10
}
fn default_val_frac() -> f64 {
    0.1
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub reg: f64,
    /// Unscaled weight-variation term summed over relaxed layers.
    pub reg_raw: f64,
}

/// Mean squared error of a K-step unrolled prediction plus the scaled
/// regularizers, with full reverse-mode gradients through the unroll.
pub fn loss_and_grad<T: Scalar>(
    model: &Model<T>,
    ds: &TrajectoryDataset,
    batch: &[Window],
    unroll: usize,
    alpha: f64,
) -> Result<(LossParts, Vec<Tensor<T>>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let il = model.input_len;
    for w in batch {
        if w.start + il + unroll > ds.steps() {
            return Err(Error::Data(format!(
                "window at {} needs {} target frames beyond the trajectory",
                w.start, unroll
            )));
        }
    }
    let (reg_loss, reg_grads, reg_raw) = model.regularizers(alpha)?;
    let mut grads: Vec<Tensor<T>> = model
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.dims()))
        .collect();

    let c_data = ds.channels();
    let hw = ds.grid() * ds.grid();
    let norm = (batch.len() * unroll * c_data * hw) as f64;
    let mut mse_total = 0.0f64;

    for &w in batch {
        let targets = window_targets::<T>(ds, w, il, unroll)?;
        let mut x = window_input::<T>(ds, w, il)?;
        let mut traces = Vec::with_capacity(unroll);
        let mut preds: Vec<FeatureField<T>> = Vec::with_capacity(unroll);
        for k in 0..unroll {
            let trace = model.forward_trace(&x)?;
            let pred = trace.output.clone();
            if k + 1 < unroll {
                x = shift_window(&x, &pred, c_data)?;
            }
            traces.push(trace);
            preds.push(pred);
        }

        // reverse over prediction steps; dwindow carries the gradient into
        // the fed-back window of the step
        let mut dwindow: Option<Tensor<T>> = None;
        for k in (0..unroll).rev() {
            let mut dpred = Tensor::zeros(preds[k].data.dims());
            let scale = cast::<T>(2.0 / norm);
            for ((dp, &p), &t) in dpred
                .data_mut()
                .iter_mut()
                .zip(preds[k].data.data())
                .zip(targets[k].data())
            {
                let diff = p - t;
                mse_total += to_f64(diff) * to_f64(diff);
                *dp = scale * diff;
            }
            if let Some(dw) = dwindow.take() {
                // window_{k+1} = [window_k channels c.., pred_k]
                let keep = (il - 1) * c_data * hw;
                for i in 0..c_data * hw {
                    dpred.data_mut()[i] += dw.data()[keep + i];
                }
                let mut dprev = Tensor::zeros(&[il * c_data, ds.grid(), ds.grid()]);
                for i in 0..keep {
                    dprev.data_mut()[c_data * hw + i] = dw.data()[i];
                }
                dwindow = Some(dprev);
            }
            let up = FeatureField::new(dpred, preds[k].rep.clone(), preds[k].group)?;
            let (dx, step_grads) = model.backward(&traces[k], &up)?;
            for (g, sg) in grads.iter_mut().zip(step_grads.iter()) {
                g.add_scaled(sg, T::one())?;
            }
            match dwindow.as_mut() {
                Some(dw) => dw.add_scaled(&dx.data, T::one())?,
                None => dwindow = Some(dx.data),
            }
        }
    }

    for (g, rg) in grads.iter_mut().zip(reg_grads.iter()) {
        g.add_scaled(rg, T::one())?;
    }
    let mse = mse_total / norm;
    let parts = LossParts {
        total: mse + to_f64(reg_loss),
        mse,
        reg: to_f64(reg_loss),
        reg_raw,
    };
    Ok((parts, grads))
}

/// Drops the oldest frame's channels and appends the prediction.
fn shift_window<T: Scalar>(
    window: &FeatureField<T>,
    pred: &FeatureField<T>,
    c_data: usize,
) -> Result<FeatureField<T>> {
    let dims = window.data.dims().to_vec();
    let hw = dims[1] * dims[2];
    let total = dims[0] * hw;
    let keep = total - c_data * hw;
    let mut data = Vec::with_capacity(total);
    data.extend_from_slice(&window.data.data()[c_data * hw..]);
    data.extend_from_slice(pred.data.data());
    debug_assert_eq!(data.len(), keep + c_data * hw);
    Ok(FeatureField {
        data: Tensor::from_vec(&dims, data)?,
        rep: window.rep.clone(),
        group: window.group,
    })
}

/// Autoregressive rollout: feeds predictions back as inputs and returns
/// `steps` predicted frames as (steps, channels, H, W).
pub fn rollout<T: Scalar>(
    model: &Model<T>,
    seed_window: &FeatureField<T>,
    steps: usize,
) -> Result<Tensor<T>> {
    let c_total = seed_window.channels();
    if c_total % model.input_len != 0 {
        return Err(Error::Shape(format!(
            "seed window channels {} not divisible by input length {}",
            c_total, model.input_len
        )));
    }
    let c_data = c_total / model.input_len;
    let (h, w) = (seed_window.height(), seed_window.width());
    let mut x = seed_window.clone();
    let mut frames = Vec::with_capacity(steps * c_data * h * w);
    for _ in 0..steps {
        let pred = model.forward(&x)?;
        frames.extend_from_slice(pred.data.data());
        x = shift_window(&x, &pred, c_data)?;
    }
    Tensor::from_vec(&[steps, c_data, h, w], frames)
}

/// Adam with bias correction; moments are kept per parameter tensor.
pub struct Adam<T> {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
    frozen: HashSet<usize>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Model<T>, lr: f64) -> Self {
        let m = model.params().iter().map(|p| Tensor::zeros(p.dims())).collect();
        let v = model.params().iter().map(|p| Tensor::zeros(p.dims())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            step: 0,
            frozen: HashSet::new(),
        }
    }

    /// Excludes parameters (by `params()` index) from updates.
    pub fn freeze(&mut self, indices: impl IntoIterator<Item = usize>) {
        self.frozen.extend(indices);
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &[Tensor<T>]) -> Result<()> {
        let names = model.param_names();
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", names[i])));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (cast::<T>(self.beta1), cast::<T>(self.beta2));
        let (ob1, ob2) = (cast::<T>(1.0 - self.beta1), cast::<T>(1.0 - self.beta2));
        let lr_t = cast::<T>(self.lr / bc1);
        let denom_scale = cast::<T>(1.0 / bc2.sqrt());
        let eps = cast::<T>(self.eps);
        for (i, p) in model.params_mut().into_iter().enumerate() {
            if self.frozen.contains(&i) {
                continue;
            }
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + ob1 * g[j];
                v[j] = b2 * v[j] + ob2 * g[j] * g[j];
                let vhat = (v[j] * denom_scale * denom_scale).sqrt();
                p.data_mut()[j] -= lr_t * m[j] / (vhat + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Unscaled weight-variation term of the relaxed layers.
    pub reg_value: f64,
    pub model_ee: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
    pub final_val_loss: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,reg_value,model_ee\n");
        for r in &self.rows {
            let ee = r.model_ee.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.reg_value, ee
            ));
        }
        out
    }
}

/// Epochs of shuffled mini-batch Adam with early stopping on validation
/// loss; the best parameters (by validation loss) are restored at the end.
/// `ee_probe` optionally measures model equivariance error once per epoch.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    ds: &TrajectoryDataset,
    windows: &[Window],
    cfg: &TrainConfig,
    seed: u64,
    ee_probe: Option<&dyn Fn(&Model<T>) -> f64>,
) -> Result<TrainLog> {
    if windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let (train_windows, val_windows) = split_future(windows, cfg.val_frac);
    let val_windows = if val_windows.is_empty() {
        train_windows.clone()
    } else {
        val_windows
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(model, cfg.lr);
    let mut log = TrainLog::default();
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<Tensor<T>>> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order = train_windows.clone();
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let (parts, grads) = loss_and_grad(model, ds, chunk, cfg.unroll, cfg.alpha)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            adam.step(model, &grads)?;
            train_loss += parts.total;
            batches += 1;
        }
        train_loss /= batches as f64;
        let reg_raw = model.regularizers(cfg.alpha)?.2;

        let mut val_loss = 0.0;
        let mut val_batches = 0usize;
        for chunk in val_windows.chunks(cfg.batch.max(1)) {
            let (parts, _) = validation_loss(model, ds, chunk, cfg.unroll)?;
            val_loss += parts;
            val_batches += 1;
        }
        val_loss /= val_batches as f64;

        let model_ee = ee_probe.map(|f| f(model));
        log.rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            reg_value: reg_raw,
            model_ee,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_params = Some(model.params().into_iter().cloned().collect());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some(best) = best_params {
        for (p, b) in model.params_mut().into_iter().zip(best) {
            *p = b;
        }
    }
    log.final_val_loss = best_val;
    Ok(log)
}

/// Validation objective: the prediction MSE alone (no penalty terms), so
/// early stopping tracks forecast quality.
fn validation_loss<T: Scalar>(
    model: &Model<T>,
    ds: &TrajectoryDataset,
    batch: &[Window],
    unroll: usize,
) -> Result<(f64, ())> {
    let il = model.input_len;
    let c_data = ds.channels();
    let hw = ds.grid() * ds.grid();
    let norm = (batch.len() * unroll * c_data * hw) as f64;
    let mut total = 0.0;
    for &w in batch {
        let targets = window_targets::<T>(ds, w, il, unroll)?;
        let mut x = window_input::<T>(ds, w, il)?;
        for target in targets.iter() {
            let pred = model.forward(&x)?;
            for (&p, &t) in pred.data.data().iter().zip(target.data()) {
                let d = to_f64(p) - to_f64(t);
                total += d * d;
            }
            x = shift_window(&x, &pred, c_data)?;
        }
    }
    Ok((total / norm, ()))
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    spec: ModelSpec,
    data_rep: Representation,
    group_order: usize,
    input_len: usize,
    grid: usize,
    elem_bytes: u8,
    params: Vec<(String, Vec<usize>)>,
}

/// Writes the model parameters in the repository tensor format with a
/// manifest listing layer types and shapes.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names = model.param_names();
    let params = model.params();
    let meta = CheckpointMeta {
        spec: model.spec.clone(),
        data_rep: model.data_rep.clone(),
        group_order: model.group.order(),
        input_len: model.input_len,
        grid: model.grid,
        elem_bytes: T::ELEM_BYTES,
        params: names
            .iter()
            .zip(params.iter())
            .map(|(n, p)| (n.clone(), p.dims().to_vec()))
            .collect(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&meta).unwrap(),
    )?;
    for (i, (name, p)) in names.iter().zip(params.iter()).enumerate() {
        io::write_tensor(&dir.join(format!("p{i:03}_{}.aeqv", sanitize(name))), p)?;
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Model<T>> {
    let meta: CheckpointMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    if meta.elem_bytes != T::ELEM_BYTES {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint stores {}-byte elements, requested {}",
            meta.elem_bytes,
            T::ELEM_BYTES
        )));
    }
    let mut model = Model::<T>::build(
        &meta.spec,
        &meta.data_rep,
        meta.input_len,
        meta.grid,
        0,
    )?;
    if meta.group_order != model.group.order() {
        return Err(Error::CheckpointMismatch("group order mismatch".into()));
    }
    let names = model.param_names();
    if names.len() != meta.params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "{} parameters in manifest, model has {}",
            meta.params.len(),
            names.len()
        )));
    }
    for (i, ((name, dims), model_name)) in meta.params.iter().zip(names.iter()).enumerate() {
        if name != model_name {
            return Err(Error::CheckpointMismatch(format!(
                "parameter {i} is {name} in manifest, {model_name} in model"
            )));
        }
        let t: Tensor<T> = io::read_tensor(&dir.join(format!("p{i:03}_{}.aeqv", sanitize(name))))?;
        if t.dims() != dims.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter {name} dims {:?} do not match manifest {:?}",
                t.dims(),
                dims
            )));
        }
        let params = model.params_mut();
        if params[i].dims() != t.dims() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter {name} dims {:?} do not match model {:?}",
                t.dims(),
                params[i].dims()
            )));
        }
        *model.params_mut()[i] = t;
    }
    Ok(model)
}

fn sanitize(name: &str) -> String {
    name.replace('.', "_")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_heat, sliding_windows, GeneratorKind, SimConfig};
    use crate::model::{ModelFamily, ModelSpec, RelaxMode};

    fn heat_ds(steps: usize) -> TrajectoryDataset {
        gen_heat(&SimConfig {
            grid: 8,
            dt: 0.5,
            steps,
            kind: GeneratorKind::Heat,
            delta: 0.0,
            seed: 3,
        })
        .unwrap()
    }

    fn tiny_spec(family: ModelFamily) -> ModelSpec {
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

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            batch: 4,
            epochs: 3,
            unroll: 2,
            alpha: 0.0,
            patience: 0,
            input_len: 3,
            val_frac: 0.25,
        }
    }

    #[test]
    fn adam_first_step_matches_hand_formula() {
        let mut model =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let mut adam = Adam::new(&model, 0.1);
        let grads: Vec<Tensor<f64>> = model
            .params()
            .iter()
            .map(|p| Tensor::filled(p.dims(), 1.0))
            .collect();
        let before: Vec<f64> = model.params().iter().map(|p| p.data()[0]).collect();
        adam.step(&mut model, &grads).unwrap();
        for (i, p) in model.params().iter().enumerate() {
            // first bias-corrected step: delta = lr * 1 / (1 + eps)
            let delta = before[i] - p.data()[0];
            assert!((delta - 0.1).abs() < 1e-6, "step {delta}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut model =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let before: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
        let mut adam = Adam::new(&model, 0.1);
        let grads: Vec<Tensor<f64>> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.dims()))
            .collect();
        adam.step(&mut model, &grads).unwrap();
        for (p, b) in model.params().iter().zip(before.iter()) {
            assert_eq!(*p, b);
        }
    }

    #[test]
    fn nonfinite_gradient_aborts_with_parameter_name() {
        let mut model =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let mut adam = Adam::new(&model, 0.1);
        let mut grads: Vec<Tensor<f64>> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.dims()))
            .collect();
        grads[0].data_mut()[0] = f64::NAN;
        let err = adam.step(&mut model, &grads).unwrap_err();
        assert!(err.to_string().contains("n"), "{err}");
    }

    #[test]
    fn perfect_model_loss_is_regularizer_only() {
        // zero targets and a zero model: MSE = mean target^2 = 0 when the
        // model output matches. Use alpha = 0 and a dataset of zeros via
        // delta-free heat data with zero weights: outputs are zero, targets
        // are not, so instead check the alpha = 0 pure-MSE contract.
        let ds = heat_ds(8);
        let model =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let windows = sliding_windows(&ds, 3, 2).unwrap();
        let (parts, _) = loss_and_grad(&model, &ds, &windows[..2], 2, 0.0).unwrap();
        assert_eq!(parts.reg, 0.0);
        assert!((parts.total - parts.mse).abs() < 1e-15);
    }

    #[test]
    fn unrolled_loss_needs_enough_target_frames() {
        let ds = heat_ds(8);
        let model =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let windows = sliding_windows(&ds, 3, 1).unwrap();
        let last = *windows.last().unwrap();
        assert!(loss_and_grad(&model, &ds, &[last], 3, 0.0).is_err());
    }

    #[test]
    fn rollout_identity_semantics() {
        let ds = heat_ds(8);
        let model =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let w = Window { traj: 0, start: 0 };
        let x = window_input::<f64>(&ds, w, 3).unwrap();
        // steps = 1 equals a single forward prediction
        let roll = rollout(&model, &x, 1).unwrap();
        let single = model.forward(&x).unwrap();
        assert_eq!(&roll.data()[..], single.data.data());
    }

    #[test]
    fn training_reduces_validation_loss_and_is_deterministic() {
        let ds = heat_ds(12);
        let windows = sliding_windows(&ds, 3, 2).unwrap();
        let cfg = tiny_cfg();
        let mut m1 =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let log1 = train(&mut m1, &ds, &windows, &cfg, 42, None).unwrap();
        let mut m2 =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let log2 = train(&mut m2, &ds, &windows, &cfg, 42, None).unwrap();
        for (a, b) in log1.rows.iter().zip(log2.rows.iter()) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_loss, b.val_loss);
        }
        for (p, q) in m1.params().iter().zip(m2.params().iter()) {
            assert_eq!(*p, *q, "seed determinism");
        }
        assert!(
            log1.rows.last().unwrap().val_loss <= log1.rows[0].val_loss,
            "validation loss should not increase on this smoke problem"
        );
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let ds = heat_ds(10);
        let windows = sliding_windows(&ds, 3, 2).unwrap();
        let mut cfg = tiny_cfg();
        cfg.lr = 0.0;
        cfg.epochs = 2;
        let mut model =
            Model::<f64>::build(&tiny_spec(ModelFamily::Steer), &Representation::Trivial, 3, 8, 1)
                .unwrap();
        let before: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
        let log = train(&mut model, &ds, &windows, &cfg, 1, None).unwrap();
        for (p, b) in model.params().iter().zip(before.iter()) {
            assert_eq!(*p, b);
        }
        // batch order reshuffles between epochs, so the mean-of-batch-means
        // agrees only up to accumulation order
        let (a, b) = (log.rows[0].train_loss, log.rows[1].train_loss);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn frozen_relaxation_training_matches_strict_bitwise() {
        // L = 1 relaxed group conv with w frozen at its equivariant value
        // trains exactly like the strict layer from the same kernel init.
        let ds = heat_ds(10);
        let windows = sliding_windows(&ds, 3, 2).unwrap();
        let seed = 9;
        let mut strict =
            Model::<f64>::build(&tiny_spec(ModelFamily::GConv), &Representation::Trivial, 3, 8, seed)
                .unwrap();
        let mut relaxed = Model::<f64>::build(
            &tiny_spec(ModelFamily::RGConv),
            &Representation::Trivial,
            3,
            8,
            seed,
        )
        .unwrap();
        // banks = 1 and w = 1 so forwards agree; freeze the w parameters
        let frozen: Vec<usize> = relaxed
            .param_names()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.ends_with(".w"))
            .map(|(i, _)| i)
            .collect();
        for (i, p) in relaxed.params_mut().into_iter().enumerate() {
            if frozen.contains(&i) {
                p.fill(1.0);
            }
        }
        let cfg = tiny_cfg();
        let mut adam_s = Adam::new(&strict, cfg.lr);
        let mut adam_r = Adam::new(&relaxed, cfg.lr);
        adam_r.freeze(frozen.clone());
        for step in 0..6 {
            let batch = &windows[(step * 2) % windows.len()..(step * 2) % windows.len() + 2];
            let (ls, gs) = loss_and_grad(&strict, &ds, batch, 2, 0.0).unwrap();
            let (lr_, gr) = loss_and_grad(&relaxed, &ds, batch, 2, 0.0).unwrap();
            assert_eq!(ls.total, lr_.total, "loss curves diverged at step {step}");
            adam_s.step(&mut strict, &gs).unwrap();
            adam_r.step(&mut relaxed, &gr).unwrap();
        }
        // kernels stay bit-identical
        let ps = strict.params();
        let pr = relaxed.params();
        let names = relaxed.param_names();
        let mut checked = 0;
        for (i, name) in names.iter().enumerate() {
            if name.ends_with(".bank0") {
                // match against the strict kernel of the same node position
                assert_eq!(pr[i], ps[checked + 1], "bank vs kernel at {name}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f64>::build(
            &tiny_spec(ModelFamily::RSteer),
            &Representation::Trivial,
            3,
            8,
            5,
        )
        .unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let loaded: Model<f64> = load_checkpoint(dir.path()).unwrap();
        for (a, b) in model.params().iter().zip(loaded.params().iter()) {
            assert_eq!(*a, *b);
        }
        assert!(load_checkpoint::<f32>(dir.path()).is_err());
    }
}
