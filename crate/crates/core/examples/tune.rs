//! Scratch harness for sizing the acceptance experiments.

use relaxconv::datagen::{gen_rotsmoke, sliding_windows, split_domain, GeneratorKind, SimConfig};
use relaxconv::eval::{model_ee, probes_from_windows, rollout_rmse_over, NormKind};
use relaxconv::model::{Model, ModelFamily, ModelSpec, RelaxMode};
use relaxconv::train::{train, TrainConfig};
use relaxconv::Representation;
use std::time::Instant;

fn sim(delta: f64, steps: usize) -> SimConfig {
    SimConfig {
        grid: 32,
        dt: 0.25,
        steps,
        kind: GeneratorKind::RotSmoke,
        delta,
        seed: 17,
    }
}

fn spec(family: ModelFamily) -> ModelSpec {
    ModelSpec {
        family,
        group: 4,
        depth: 2,
        hidden: 4,
        k: 1,
        banks: 3,
        relax: RelaxMode::Spatial,
        n_angles: 0,
        combo_prefix: 0,
        rank: 1,
    }
}

fn tcfg(alpha: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        batch: 8,
        epochs,
        unroll: 3,
        alpha,
        patience: 0,
        input_len: 10,
        val_frac: 0.1,
    }
}

fn run_one(
    family: ModelFamily,
    delta: f64,
    steps: usize,
    seed: u64,
    alpha: f64,
    epochs: usize,
) -> (f64, f64, f64, f64) {
    let ds = gen_rotsmoke(&sim(delta, steps)).unwrap();
    let cfg = tcfg(alpha, epochs);
    let (train_trajs, test_trajs) = split_domain(&ds, 0.2);
    let windows: Vec<_> = sliding_windows(&ds, cfg.input_len, cfg.unroll)
        .unwrap()
        .into_iter()
        .filter(|w| train_trajs.contains(&w.traj))
        .collect();
    let mut model =
        Model::<f32>::build(&spec(family), &ds.channel_rep, cfg.input_len, 32, seed).unwrap();
    let log = train(&mut model, &ds, &windows, &cfg, seed, None).unwrap();
    let test_windows: Vec<_> = sliding_windows(&ds, cfg.input_len, 1)
        .unwrap()
        .into_iter()
        .filter(|w| test_trajs.contains(&w.traj))
        .collect();
    let probes = probes_from_windows::<f32>(&ds, &test_windows, cfg.input_len, 32).unwrap();
    let ee = model_ee(&model, &probes, NormKind::L1).unwrap().overall;
    let rollout_steps = 20.min(steps - cfg.input_len);
    let rmse = rollout_rmse_over(&model, &ds, &test_trajs, rollout_steps).unwrap();
    let raw = model.regularizers(alpha).unwrap().2;
    if std::env::var("TUNE_VERBOSE").is_ok() {
        let last = log.rows.last().unwrap();
        eprintln!(
            "    [{family:?} seed {seed}] train {:.3e} best-val {:.3e} rollout {rmse:.4}",
            last.train_loss, log.final_val_loss
        );
    }
    (
        ds.declared_data_ee.unwrap(),
        ee,
        rmse,
        raw.max(log.final_val_loss * 0.0),
    )
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "trend".into());
    match mode.as_str() {
        "trend" => {
            println!("delta, data_ee, rsteer_ee, strict_ee, rsteer_rmse, secs");
            for i in 0..10 {
                let delta = 0.05 * i as f64;
                let t0 = Instant::now();
                let (data_ee, ee_r, rmse_r, _) =
                    run_one(ModelFamily::RSteer, delta, 40, 100, 0.0, 12);
                let (_, ee_s, _, _) = run_one(ModelFamily::Steer, delta, 40, 100, 0.0, 12);
                println!(
                    "{delta:.2}, {data_ee:.5e}, {ee_r:.5e}, {ee_s:.5e}, {rmse_r:.4}, {:.1}",
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "advantage" => {
            let epochs: usize = std::env::args()
                .nth(2)
                .and_then(|s| s.parse().ok())
                .unwrap_or(12);
            let alpha_r: f64 = std::env::args()
                .nth(3)
                .and_then(|s| s.parse().ok())
                .unwrap_or(0.0);
            let ronly = std::env::args().nth(4).as_deref() == Some("ronly");
            let mut plan = vec![(ModelFamily::RSteer, alpha_r)];
            if !ronly {
                plan.push((ModelFamily::Steer, 0.0));
                plan.push((ModelFamily::Conv, 0.0));
            }
            for (family, alpha) in plan {
                let mut mean = 0.0;
                let t0 = Instant::now();
                for seed in [1u64, 2, 3] {
                    let (_, _, rmse, _) = run_one(family, 0.25, 40, seed, alpha, epochs);
                    print!("  {rmse:.4}");
                    mean += rmse / 3.0;
                }
                println!(
                    "  -> {:?} mean rmse {mean:.4} ({:.1}s)",
                    family,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "alpha" => {
            println!("alpha, raw_variation, rmse");
            for alpha in [0.0, 1e-6, 1e-4, 1e-2] {
                let (_, _, rmse, raw) = run_one(ModelFamily::RSteer, 0.1, 60, 5, alpha, 12);
                println!("{alpha:.0e}, {raw:.5e}, {rmse:.4}");
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
