use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use confrec::eval::{evaluate, ranking_metrics, reliability_pair, tune_tau};
use confrec::{
    Bucket, CalibrationParams, Checkpoint, EmbeddingState, InteractionGraph, NormalizedAdjacency,
    RawDataset, SplitDataset, TrainConfig, Trainer,
};
use serde_json::json;

use crate::config::RunConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RELIABILITY_RAW_FILE: &str = "reliability_raw.csv";
pub const RELIABILITY_CALIBRATED_FILE: &str = "reliability_calibrated.csv";

/// Loaded dataset, its split and the training graph.
struct Prepared {
    raw: RawDataset,
    split: SplitDataset,
    adj: NormalizedAdjacency,
}

fn prepare(data: &Path, seed: u64) -> Result<Prepared> {
    let raw = RawDataset::load(data)?;
    let split = raw.split(seed);
    let graph = InteractionGraph::build(
        split.edges(Bucket::Train),
        split.num_users(),
        split.num_items(),
    )?;
    log::info!(
        "{}: {} users, {} items, {} train / {} valid / {} test edges",
        data.display(),
        raw.num_users(),
        raw.num_items(),
        split.len(Bucket::Train),
        split.len(Bucket::Valid),
        split.len(Bucket::Test)
    );
    Ok(Prepared {
        adj: graph.normalize(),
        raw,
        split,
    })
}

fn require_data(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .as_deref()
        .ok_or_else(|| anyhow!("no dataset given (use --data)"))
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn config_snapshot(data: &Path, train: &TrainConfig) -> BTreeMap<String, String> {
    [
        ("data", data.display().to_string()),
        ("seed", train.seed.to_string()),
        ("epochs", train.epochs.to_string()),
        ("batch-size", train.batch_size.to_string()),
        ("lr", train.learning_rate.to_string()),
        ("dim", train.embed_dim.to_string()),
        ("layers", train.layers.to_string()),
        ("l2", train.l2_weight.to_string()),
        ("conf-weight", train.conf_weight.to_string()),
        ("negatives", train.negatives.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect()
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = require_data(cfg)?;
    let train_cfg = &cfg.train;
    train_cfg.validate()?;
    let prepared = prepare(data, train_cfg.seed)?;
    let adj = &prepared.adj;

    create_out_dir(&cfg.out)?;
    let log_path = cfg.out.join(TRAIN_LOG_FILE);
    let mut log_file = BufWriter::new(
        File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?,
    );

    let mut state = EmbeddingState::init(
        adj.num_users(),
        adj.num_items(),
        train_cfg.embed_dim,
        train_cfg.seed,
    )?;
    state.propagate(adj, train_cfg.layers)?;
    let mut trainer = Trainer::new(train_cfg.clone(), &state)?;

    let mut best: Option<(f64, usize, EmbeddingState)> = None;
    let mut io_error = None;
    let split = &prepared.split;
    let has_valid = split.len(Bucket::Valid) > 0;
    let log = trainer.fit(&mut state, adj, |stats, state| {
        let mut record = json!({
            "epoch": stats.epoch,
            "bpr": stats.bpr,
            "conf": stats.conf,
            "l2": stats.l2,
            "wall_secs": stats.wall_secs,
        });
        let mut keep_going = true;
        if cfg.patience > 0 && has_valid {
            match evaluate(state, split, Bucket::Valid, cfg.topn, None)
                .and_then(|ev| ranking_metrics(&ev.raw, split, Bucket::Valid, cfg.topn))
            {
                Ok(m) => {
                    record["valid_precision"] = json!(m.precision);
                    let improved = best.as_ref().is_none_or(|(p, _, _)| m.precision > *p);
                    if improved {
                        best = Some((m.precision, stats.epoch, state.clone()));
                    } else if stats.epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
                        keep_going = false;
                    }
                }
                Err(e) => log::warn!("validation skipped: {e}"),
            }
        }
        if let Err(e) = writeln!(log_file, "{record}") {
            io_error.get_or_insert(e);
        }
        keep_going
    })?;
    if let Some(e) = io_error {
        return Err(e).with_context(|| format!("cannot write {}", log_path.display()));
    }
    log_file.flush()?;

    let final_state = match best {
        Some((precision, epoch, snapshot)) if cfg.patience > 0 => {
            log::info!(
                "keeping epoch {epoch} (valid Precision@{} {precision:.3})",
                cfg.topn
            );
            snapshot
        }
        _ => state,
    };
    let ck_path = cfg.out.join(CHECKPOINT_FILE);
    Checkpoint::from_state(
        &final_state,
        train_cfg.layers,
        config_snapshot(data, train_cfg),
    )
    .write(&ck_path)?;

    if let Some(last) = log.last() {
        println!(
            "epochs {} bpr {:.6} conf {:.6} l2 {:.6}",
            last.epoch, last.bpr, last.conf, last.l2
        );
    }
    println!("checkpoint {}", ck_path.display());
    Ok(())
}

/// Checkpoint, propagated state and the split it was trained on.
struct Loaded {
    state: EmbeddingState,
    prepared: Prepared,
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Loaded> {
    let path = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
    let ck = Checkpoint::read(&path)?;
    let data = match (&cfg.data, ck.config.get("data")) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => bail!("no dataset given and checkpoint does not record one"),
    };
    let seed: u64 = ck
        .config
        .get("seed")
        .ok_or_else(|| anyhow!("checkpoint does not record its seed"))?
        .parse()
        .context("bad seed in checkpoint")?;
    let prepared = prepare(&data, seed)?;
    if (ck.num_users, ck.num_items) != (prepared.raw.num_users(), prepared.raw.num_items()) {
        return Err(confrec::Error::DimensionMismatch(format!(
            "checkpoint has {} users / {} items, dataset {} has {} / {}",
            ck.num_users,
            ck.num_items,
            data.display(),
            prepared.raw.num_users(),
            prepared.raw.num_items()
        ))
        .into());
    }
    let mut state = ck.to_state();
    state.propagate(&prepared.adj, ck.layers)?;
    Ok(Loaded { state, prepared })
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let loaded = load_checkpoint(cfg)?;
    let split = &loaded.prepared.split;
    let params = CalibrationParams::with_mode(cfg.tau, cfg.mean_mode)?;
    let ev = evaluate(
        &loaded.state,
        split,
        Bucket::Test,
        cfg.topn,
        cfg.calibrate.then_some(&params),
    )?;
    let n = cfg.topn;
    let raw = ranking_metrics(&ev.raw, split, Bucket::Test, n)?;
    println!("users {}", raw.users);
    println!(
        "raw Precision@{n} {:.3} Accuracy@{n} {:.3}",
        raw.precision, raw.accuracy
    );
    if let Some(cal) = &ev.calibrated {
        let m = ranking_metrics(cal, split, Bucket::Test, n)?;
        println!(
            "calibrated Precision@{n} {:.3} Accuracy@{n} {:.3} tau {}",
            m.precision, m.accuracy, cfg.tau
        );
    }
    Ok(())
}

pub fn cmd_reliability(cfg: &RunConfig) -> Result<()> {
    let loaded = load_checkpoint(cfg)?;
    let split = &loaded.prepared.split;
    let params = CalibrationParams::with_mode(cfg.tau, cfg.mean_mode)?;
    let ev = evaluate(&loaded.state, split, Bucket::Test, cfg.topn, Some(&params))?;
    let (raw, cal) = reliability_pair(&ev, cfg.reliability_mode);
    let cal = cal.expect("calibration requested");

    create_out_dir(&cfg.out)?;
    for (file, report) in [
        (RELIABILITY_RAW_FILE, &raw),
        (RELIABILITY_CALIBRATED_FILE, &cal),
    ] {
        let path = cfg.out.join(file);
        fs::write(&path, report.to_csv())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!("mode {}", cfg.reliability_mode.as_str());
    println!("ece raw {}", raw.ece);
    println!("ece calibrated {} tau {}", cal.ece, cfg.tau);
    Ok(())
}

pub fn cmd_tune_tau(cfg: &RunConfig) -> Result<()> {
    let loaded = load_checkpoint(cfg)?;
    let search = tune_tau(
        &loaded.state,
        &loaded.prepared.split,
        Bucket::Valid,
        cfg.topn,
        &cfg.tau_grid,
        cfg.reliability_mode,
        cfg.mean_mode,
    )?;
    for (tau, ece) in &search.grid {
        println!("tau {tau} ece {ece}");
    }
    println!("best tau {} ece {}", search.best_tau, search.best_ece);
    Ok(())
}

pub fn cmd_split_export(cfg: &RunConfig) -> Result<()> {
    let data = require_data(cfg)?;
    let raw = RawDataset::load(data)?;
    let split = raw.split(cfg.train.seed);
    for path in split.export(&raw, &cfg.out)? {
        println!("{}", path.display());
    }
    Ok(())
}
