//! Post-hoc rating calibration.
//!
//! Ratings at or below the user's mean are kept; the excess above the mean
//! is compressed logarithmically:
//!
//! ```text
//! rc(r) = r                            if r <= mean
//!       = mean + tau * ln(1 + r - mean)  otherwise
//! ```
//!
//! The `1 +` offset keeps `rc` continuous at the mean (a bare
//! `ln(r - mean)` diverges there), so `rc` is strictly increasing and the
//! ranking of every user's items is unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreSheet;

/// Temperature grid searched by `tune-tau`.
pub const DEFAULT_TAU_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

/// Which ratings the user mean is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MeanMode {
    /// Only the items under evaluation (training items masked).
    #[default]
    Candidates,
    /// All `M` ratings.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub tau: f64,
    pub mean_mode: MeanMode,
}

impl CalibrationParams {
    pub fn new(tau: f64) -> Result<Self> {
        Self::with_mode(tau, MeanMode::default())
    }

    pub fn with_mode(tau: f64, mean_mode: MeanMode) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive and finite, got {tau}"
            )));
        }
        Ok(Self { tau, mean_mode })
    }
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            mean_mode: MeanMode::Candidates,
        }
    }
}

/// Arithmetic mean of the ratings whose `masked` flag is false.
pub fn user_mean(ratings: &[f64], masked: Option<&[bool]>) -> Result<f64> {
    let (sum, count) = match masked {
        None => (ratings.iter().sum::<f64>(), ratings.len()),
        Some(mask) => {
            if mask.len() != ratings.len() {
                return Err(Error::LengthMismatch {
                    left: ratings.len(),
                    right: mask.len(),
                });
            }
            ratings
                .iter()
                .zip(mask)
                .filter(|(_, &m)| !m)
                .fold((0.0, 0usize), |(s, c), (&r, _)| (s + r, c + 1))
        }
    };
    if count == 0 {
        return Err(Error::AllMasked);
    }
    Ok(sum / count as f64)
}

#[inline]
pub fn calibrate_rating(rating: f64, mean: f64, tau: f64) -> f64 {
    if rating <= mean {
        rating
    } else {
        tau * (rating - mean).ln_1p() + mean
    }
}

/// Calibrates every rating of `sheet` and rebuilds its distribution.
pub fn calibrate_sheet(sheet: &ScoreSheet, params: &CalibrationParams) -> Result<ScoreSheet> {
    let mean = match params.mean_mode {
        MeanMode::Candidates => user_mean(&sheet.ratings, Some(&sheet.excluded))?,
        MeanMode::All => user_mean(&sheet.ratings, None)?,
    };
    let ratings = sheet
        .ratings
        .iter()
        .map(|&r| calibrate_rating(r, mean, params.tau))
        .collect();
    ScoreSheet::with_mask(sheet.user, ratings, sheet.excluded.clone())
}
