//! Paired comparison of the confidence penalty on the synthetic dataset.
//!
//! `cargo run --release -p confrec-core --example lambda_sweep -- [seeds]`
//!
//! Every seed trains the fixture recipe twice, without and with the
//! penalty, and reports raw/calibrated ECE, mean negative confidence and
//! Precision@20. Environment overrides: `LR`, `BATCH`, `L2`, `NEG`,
//! `EPOCHS`, `CW`.

use confrec::calibration::{MeanMode, DEFAULT_TAU_GRID};
use confrec::eval::{evaluate, ranking_metrics, tune_tau};
use confrec::synth::{generate, recipe_train_config, SyntheticConfig};
use confrec::train::{mean_negative_confidence, sample_batch, train};
use confrec::{par, Bucket, CalibrationParams, InteractionGraph, ReliabilityMode, TrainConfig};
use rand::SeedableRng;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

struct Arm {
    negconf: f64,
    precision: f64,
    raw_ece: f64,
    cal_ece: f64,
}

fn run(seed: u64, conf_weight: f64) -> confrec::Result<Arm> {
    let raw = generate(&SyntheticConfig::with_seed(seed))?;
    let split = raw.split(seed);
    let graph = InteractionGraph::build(
        split.edges(Bucket::Train),
        split.num_users(),
        split.num_items(),
    )?;
    let adj = graph.normalize();
    let base = recipe_train_config(seed, conf_weight);
    let config = TrainConfig {
        epochs: env_or("EPOCHS", base.epochs),
        learning_rate: env_or("LR", base.learning_rate),
        batch_size: env_or("BATCH", base.batch_size),
        l2_weight: env_or("L2", base.l2_weight),
        negatives: env_or("NEG", base.negatives),
        ..base
    };
    let (state, _) = train(&adj, &config)?;
    let tau = tune_tau(
        &state,
        &split,
        Bucket::Valid,
        20,
        &DEFAULT_TAU_GRID,
        ReliabilityMode::Item,
        MeanMode::Candidates,
    )?;
    let params = CalibrationParams::new(tau.best_tau)?;
    let ev = evaluate(&state, &split, Bucket::Test, 20, Some(&params))?;
    let metrics = ranking_metrics(&ev.raw, &split, Bucket::Test, 20)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let probe = sample_batch(&graph, 5000, config.negatives, &mut rng)?;
    let calibrated = ev.calibrated.as_deref().unwrap_or_default();
    Ok(Arm {
        negconf: mean_negative_confidence(&state, &probe),
        precision: metrics.precision,
        raw_ece: confrec::reliability(&ev.raw, ReliabilityMode::Item).ece,
        cal_ece: confrec::reliability(calibrated, ReliabilityMode::Item).ece,
    })
}

fn main() -> confrec::Result<()> {
    let seeds: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let cw = env_or("CW", 0.1);
    let rows = par::map_range(seeds, |s| -> confrec::Result<_> {
        Ok((run(s as u64, 0.0)?, run(s as u64, cw)?))
    });
    let (mut ece_wins, mut conf_wins, mut prec_wins) = (0, 0, 0);
    for (s, row) in rows.into_iter().enumerate() {
        let (a, b) = row?;
        let ece_ok = a.raw_ece > 0.05 && a.cal_ece < a.raw_ece;
        let conf_ok = b.negconf < a.negconf;
        let prec_ok = b.precision >= a.precision - 0.5;
        ece_wins += ece_ok as usize;
        conf_wins += conf_ok as usize;
        prec_wins += prec_ok as usize;
        println!(
            "seed {s}: ece {:.4}->{:.4} {ece_ok} | negconf {:.5} vs {:.5} {conf_ok} | P@20 {:.3} vs {:.3} {prec_ok}",
            a.raw_ece, a.cal_ece, a.negconf, b.negconf, a.precision, b.precision
        );
    }
    println!("calibration {ece_wins}/{seeds}  negative confidence {conf_wins}/{seeds}  precision {prec_wins}/{seeds}");
    Ok(())
}
