//! Command implementations, generic over the scalar type and dispatched on
//! the config's dtype field.

use crate::config::{Dtype, EvalConfig, ExperimentConfig};
use relaxconv::datagen::{generate, load_dataset, save_dataset, sliding_windows, split_domain};
use relaxconv::eval::{model_ee, probes_from_windows, rollout_rmse_over, EEReport};
use relaxconv::model::Model;
use relaxconv::train::{load_checkpoint, save_checkpoint, train};
use relaxconv::verify::{suite_basis, suite_gradcheck, suite_props, suite_reductions, SuiteReport};
use relaxconv::{Error, Result, Scalar};
use serde_json::json;
use std::path::Path;

/// Stable per-point seeds for sweeps (splitmix64 of root ^ index).
pub fn derive_seed(root: u64, idx: u64) -> u64 {
    let mut z = root ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn cmd_gen_data(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    delta: Option<f64>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let mut data_cfg = cfg.data;
    if let Some(s) = seed {
        data_cfg.seed = s;
    }
    if let Some(d) = delta {
        data_cfg.delta = d;
    }
    let ds = generate(&data_cfg)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} trajectories to {} (data EE {:.6e})",
        ds.trajectories.len(),
        out.display(),
        ds.declared_data_ee.unwrap_or(0.0)
    );
    Ok(())
}

pub fn cmd_train(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    alpha: Option<f64>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(a) = alpha {
        cfg.train.alpha = a;
    }
    println!(
        "training {} seed={} alpha={}",
        cfg.model.family.name(),
        cfg.seed,
        cfg.train.alpha
    );
    let rmse = match cfg.dtype {
        Dtype::F32 => run_train::<f32>(&cfg, out)?,
        Dtype::F64 => run_train::<f64>(&cfg, out)?,
    };
    println!("final val RMSE {rmse:.6}");
    Ok(())
}

fn run_train<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<f64> {
    let ds = generate(&cfg.data)?;
    std::fs::create_dir_all(out)?;
    let (train_trajs, _) = split_domain(&ds, 0.2);
    let windows: Vec<_> = sliding_windows(&ds, cfg.train.input_len, cfg.train.unroll)?
        .into_iter()
        .filter(|w| train_trajs.contains(&w.traj))
        .collect();
    let mut model = Model::<T>::build(
        &cfg.model,
        &ds.channel_rep,
        cfg.train.input_len,
        ds.grid(),
        cfg.seed,
    )?;
    let log = train(&mut model, &ds, &windows, &cfg.train, cfg.seed, None)?;
    save_checkpoint(&model, &out.join("checkpoint"))?;
    std::fs::write(out.join("metrics.csv"), log.to_csv())?;
    Ok(log.final_val_loss.sqrt())
}

pub fn cmd_ee(checkpoint: &Path, dataset: &Path, out: Option<&Path>) -> Result<()> {
    // dispatch on the element width recorded in the checkpoint manifest
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(checkpoint.join("manifest.json"))
            .map_err(Error::Io)?,
    )
    .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    let elem_bytes = manifest["elem_bytes"].as_u64().unwrap_or(0);
    let report = match elem_bytes {
        4 => run_ee::<f32>(checkpoint, dataset)?,
        8 => run_ee::<f64>(checkpoint, dataset)?,
        other => {
            return Err(Error::Format(format!(
                "unsupported element width {other} in checkpoint"
            )))
        }
    };
    let text = serde_json::to_string_pretty(&report).unwrap();
    match out {
        Some(path) => std::fs::write(path, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Library-callable EE report for a saved checkpoint against a saved dataset;
/// the CLI output is exactly this value serialized.
pub fn run_ee<T: Scalar>(checkpoint: &Path, dataset: &Path) -> Result<serde_json::Value> {
    let model: Model<T> = load_checkpoint(checkpoint)?;
    let ds = load_dataset(dataset)?;
    if ds.channel_rep != model.data_rep {
        return Err(Error::CheckpointMismatch(format!(
            "dataset channel action {:?} does not match model {:?}",
            ds.channel_rep, model.data_rep
        )));
    }
    let eval_cfg = EvalConfig::default();
    let windows = sliding_windows(&ds, model.input_len, 1)?;
    let probes = probes_from_windows::<T>(&ds, &windows, model.input_len, eval_cfg.probes)?;
    let report: EEReport = model_ee(&model, &probes, eval_cfg.norm)?;
    Ok(json!({
        "model_kind": model.spec.family.name(),
        "data_ee": ds.declared_data_ee,
        "model_ee": report.overall,
        "per_element": report.per_element,
        "raw_l1": report.raw,
        "norm": report.norm,
        "samples": report.samples,
    }))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Delta,
    Alpha,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(SweepAxis::Delta),
            "alpha" => Ok(SweepAxis::Alpha),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected delta or alpha)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
struct SweepRow {
    value: f64,
    data_ee: f64,
    model_ee: f64,
    rollout_rmse: f64,
    reg_raw: f64,
    model_kind: &'static str,
    status: &'static str,
}

/// Trains and evaluates one model per grid point; failed points are flagged
/// and the remaining points still run. Returns the process exit code
/// (0, or 6 on partial failure).
pub fn cmd_sweep(config_path: &Path, axis: SweepAxis, out: &Path, seed: Option<u64>) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(out)?;
    let points: Vec<f64> = match axis {
        SweepAxis::Delta => (0..10).map(|i| 0.05 * i as f64).collect(),
        SweepAxis::Alpha => vec![0.0, 1e-6, 1e-4, 1e-2],
    };
    let threads: usize = std::env::var("RELAXCONV_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
        .clamp(1, points.len());

    let mut rows: Vec<Option<SweepRow>> = vec![None; points.len()];
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for tid in 0..threads {
            let cfg = &cfg;
            let points = &points;
            handles.push(scope.spawn(move || {
                let mut mine = Vec::new();
                for (i, &value) in points.iter().enumerate() {
                    if i % threads != tid {
                        continue;
                    }
                    let row = run_sweep_point(cfg, axis, i, value);
                    mine.push((i, row));
                }
                mine
            }));
        }
        for h in handles {
            for (i, row) in h.join().expect("sweep worker panicked") {
                rows[i] = Some(row);
            }
        }
    });

    let axis_name = match axis {
        SweepAxis::Delta => "delta",
        SweepAxis::Alpha => "alpha",
    };
    let mut csv = String::from(
        "axis,value,data_ee,model_ee,rollout_rmse,reg_raw,model_kind,status\n",
    );
    let mut failed = false;
    for row in rows.into_iter().flatten() {
        failed |= row.status != "ok";
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            axis_name,
            row.value,
            row.data_ee,
            row.model_ee,
            row.rollout_rmse,
            row.reg_raw,
            row.model_kind,
            row.status
        ));
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(if failed { 6 } else { 0 })
}

fn run_sweep_point(cfg: &ExperimentConfig, axis: SweepAxis, idx: usize, value: f64) -> SweepRow {
    let result = match cfg.dtype {
        Dtype::F32 => sweep_point::<f32>(cfg, axis, idx, value),
        Dtype::F64 => sweep_point::<f64>(cfg, axis, idx, value),
    };
    match result {
        Ok(row) => row,
        Err(e) => {
            eprintln!("sweep point {axis:?}={value} failed: {e}");
            SweepRow {
                value,
                data_ee: f64::NAN,
                model_ee: f64::NAN,
                rollout_rmse: f64::NAN,
                reg_raw: f64::NAN,
                model_kind: cfg.model.family.name(),
                status: "failed",
            }
        }
    }
}

fn sweep_point<T: Scalar>(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    idx: usize,
    value: f64,
) -> Result<SweepRow> {
    let point_seed = derive_seed(cfg.seed, idx as u64);
    let mut data_cfg = cfg.data.clone();
    let mut train_cfg = cfg.train.clone();
    match axis {
        SweepAxis::Delta => data_cfg.delta = value,
        SweepAxis::Alpha => train_cfg.alpha = value,
    }
    let ds = generate(&data_cfg)?;
    let (train_trajs, test_trajs) = split_domain(&ds, 0.2);
    let windows: Vec<_> = sliding_windows(&ds, train_cfg.input_len, train_cfg.unroll)?
        .into_iter()
        .filter(|w| train_trajs.contains(&w.traj))
        .collect();
    let mut model = Model::<T>::build(
        &cfg.model,
        &ds.channel_rep,
        train_cfg.input_len,
        ds.grid(),
        point_seed,
    )?;
    train(&mut model, &ds, &windows, &train_cfg, point_seed, None)?;

    let test_windows: Vec<_> = sliding_windows(&ds, train_cfg.input_len, 1)?
        .into_iter()
        .filter(|w| test_trajs.contains(&w.traj))
        .collect();
    let probes =
        probes_from_windows::<T>(&ds, &test_windows, train_cfg.input_len, cfg.eval.probes)?;
    let report = model_ee(&model, &probes, cfg.eval.norm)?;
    let steps = cfg
        .eval
        .rollout_steps
        .min(ds.steps().saturating_sub(train_cfg.input_len));
    let rmse = rollout_rmse_over(&model, &ds, &test_trajs, steps)?;
    let reg_raw = model.regularizers(train_cfg.alpha)?.2;
    Ok(SweepRow {
        value,
        data_ee: ds.declared_data_ee.unwrap_or(f64::NAN),
        model_ee: report.overall,
        rollout_rmse: rmse,
        reg_raw,
        model_kind: cfg.model.family.name(),
        status: "ok",
    })
}

pub fn cmd_verify(suite: &str, seed: u64) -> Result<SuiteReport> {
    let report = match suite {
        "gradcheck" => suite_gradcheck(seed, 20)?,
        "basis" => suite_basis()?,
        "props" => suite_props(seed, 1000)?,
        "reductions" => suite_reductions(seed, 200)?,
        other => {
            return Err(Error::Config(format!(
                "unknown suite {other:?} (expected gradcheck, basis, props, or reductions)"
            )))
        }
    };
    Ok(report)
}

