//! Per-user scoring against a held-out bucket, optional calibration, and
//! temperature selection.

use crate::calibration::{calibrate_sheet, CalibrationParams, MeanMode};
use crate::dataset::{Bucket, SplitDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy_at_n, precision_at_n, reliability, ReliabilityMode, ReliabilityReport, TopKResult,
};
use crate::model::{EmbeddingState, ScoreSheet};
use crate::par;

/// Users scored against `target`: at least one training edge (the graph
/// carries no signal for the rest) and at least one target item.
pub fn eligible_users(split: &SplitDataset, target: Bucket) -> Vec<usize> {
    (0..split.num_users())
        .filter(|&u| !split.train(u).is_empty() && !split.items(target, u).is_empty())
        .collect()
}

/// Score sheet of `user` with training items excluded.
pub fn score_sheet(
    state: &EmbeddingState,
    split: &SplitDataset,
    user: usize,
) -> Result<ScoreSheet> {
    ScoreSheet::new(user, state.score(user)?, split.train(user))
}

/// Top-`n` list of `sheet`, flagged against the sorted `targets`.
pub fn top_k(sheet: &ScoreSheet, n: usize, targets: &[u32]) -> TopKResult {
    let items = sheet.top_n(n);
    let confidences = items.iter().map(|&i| sheet.probs[i]).collect();
    let hits = items
        .iter()
        .map(|&i| targets.binary_search(&(i as u32)).is_ok())
        .collect();
    TopKResult {
        user: sheet.user,
        items,
        confidences,
        hits,
    }
}

/// Raw and (optionally) calibrated top-N lists over the same users.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub target: Bucket,
    pub topn: usize,
    pub raw: Vec<TopKResult>,
    pub calibrated: Option<Vec<TopKResult>>,
    pub skipped_users: usize,
}

pub fn evaluate(
    state: &EmbeddingState,
    split: &SplitDataset,
    target: Bucket,
    topn: usize,
    calibration: Option<&CalibrationParams>,
) -> Result<Evaluation> {
    if topn == 0 {
        return Err(Error::InvalidConfig("top-N must be >= 1".into()));
    }
    let users = eligible_users(split, target);
    let with_targets = (0..split.num_users())
        .filter(|&u| !split.items(target, u).is_empty())
        .count();
    let skipped_users = with_targets - users.len();
    if skipped_users > 0 {
        log::warn!("{skipped_users} users with held-out items have no training edges; skipped");
    }
    let per_user = par::map_slice(&users, |&u| -> Result<_> {
        let sheet = score_sheet(state, split, u)?;
        let targets = split.items(target, u);
        let raw = top_k(&sheet, topn, targets);
        let cal = match calibration {
            Some(p) => Some(top_k(&calibrate_sheet(&sheet, p)?, topn, targets)),
            None => None,
        };
        Ok((raw, cal))
    });
    let mut raw = Vec::with_capacity(users.len());
    let mut calibrated = calibration.map(|_| Vec::with_capacity(users.len()));
    for r in per_user {
        let (r, c) = r?;
        raw.push(r);
        if let (Some(all), Some(c)) = (calibrated.as_mut(), c) {
            all.push(c);
        }
    }
    Ok(Evaluation {
        target,
        topn,
        raw,
        calibrated,
        skipped_users,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingMetrics {
    pub precision: f64,
    pub accuracy: f64,
    pub users: usize,
}

pub fn ranking_metrics(
    results: &[TopKResult],
    split: &SplitDataset,
    target: Bucket,
    topn: usize,
) -> Result<RankingMetrics> {
    Ok(RankingMetrics {
        precision: precision_at_n(results, topn)?,
        accuracy: accuracy_at_n(results, split.bucket(target), topn)?,
        users: results.len(),
    })
}

/// ECE of every grid temperature and the selected one.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSearch {
    pub best_tau: f64,
    pub best_ece: f64,
    /// `(tau, ece)` in ascending tau order.
    pub grid: Vec<(f64, f64)>,
}

/// Picks the grid temperature with the lowest calibrated ECE on
/// `target`; ties go to the smaller temperature.
pub fn tune_tau(
    state: &EmbeddingState,
    split: &SplitDataset,
    target: Bucket,
    topn: usize,
    grid: &[f64],
    mode: ReliabilityMode,
    mean_mode: MeanMode,
) -> Result<TauSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("temperature grid is empty".into()));
    }
    let users = eligible_users(split, target);
    if users.is_empty() {
        return Err(Error::NoUsers);
    }
    let sheets = par::map_slice(&users, |&u| score_sheet(state, split, u))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut taus = grid.to_vec();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut evaluated = Vec::with_capacity(taus.len());
    for &tau in &taus {
        let params = CalibrationParams::with_mode(tau, mean_mode)?;
        let results = par::map_slice(&sheets, |s| -> Result<TopKResult> {
            Ok(top_k(
                &calibrate_sheet(s, &params)?,
                topn,
                split.items(target, s.user),
            ))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        evaluated.push((tau, reliability(&results, mode).ece));
    }
    let (best_tau, best_ece) = evaluated
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, (t, e)| match best {
            Some((_, be)) if be <= e => best,
            _ => Some((t, e)),
        })
        .expect("nonempty grid");
    Ok(TauSearch {
        best_tau,
        best_ece,
        grid: evaluated,
    })
}

/// Reliability of both the raw and calibrated lists of an evaluation.
pub fn reliability_pair(
    eval: &Evaluation,
    mode: ReliabilityMode,
) -> (ReliabilityReport, Option<ReliabilityReport>) {
    (
        reliability(&eval.raw, mode),
        eval.calibrated.as_ref().map(|c| reliability(c, mode)),
    )
}
