//! Top-N quality metrics and ten-bin reliability diagnostics.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_BINS: usize = 10;

/// One user's ranked recommendations.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    pub user: usize,
    pub items: Vec<usize>,
    /// Normalized probability of each recommended item.
    pub confidences: Vec<f64>,
    pub hits: Vec<bool>,
}

impl TopKResult {
    pub fn hits_at(&self, n: usize) -> usize {
        self.hits.iter().take(n).filter(|&&h| h).count()
    }

    pub fn mean_confidence(&self) -> f64 {
        self.confidences.iter().sum::<f64>() / self.confidences.len() as f64
    }
}

/// Mean over users of `hits@N / N`, in percent.
pub fn precision_at_n(results: &[TopKResult], n: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::NoUsers);
    }
    let total: f64 = results.iter().map(|r| r.hits_at(n) as f64 / n as f64).sum();
    Ok(100.0 * total / results.len() as f64)
}

/// Mean over users of `hits@N / |test items|` (recall at N), in percent.
///
/// `test_sets` is indexed by user.
pub fn accuracy_at_n(results: &[TopKResult], test_sets: &[Vec<u32>], n: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::NoUsers);
    }
    let mut total = 0.0;
    for r in results {
        let relevant = test_sets
            .get(r.user)
            .ok_or(Error::IndexOutOfRange {
                kind: "user",
                index: r.user,
                size: test_sets.len(),
            })?
            .len();
        if relevant > 0 {
            total += r.hits_at(n) as f64 / relevant as f64;
        }
    }
    Ok(100.0 * total / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReliabilityMode {
    /// Every recommended item is one sample; accuracy is its hit flag.
    #[default]
    Item,
    /// Every user is one sample: mean top-K confidence vs. precision@K.
    UserMean,
}

impl ReliabilityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReliabilityMode::Item => "item",
            ReliabilityMode::UserMean => "user-mean",
        }
    }
}

impl FromStr for ReliabilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "item" => Ok(ReliabilityMode::Item),
            "user-mean" => Ok(ReliabilityMode::UserMean),
            other => Err(Error::InvalidConfig(format!(
                "reliability mode must be `item` or `user-mean`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinStats {
    pub count: usize,
    conf_sum: f64,
    acc_sum: f64,
}

impl BinStats {
    /// `None` for an empty bin.
    pub fn mean_confidence(&self) -> Option<f64> {
        (self.count > 0).then(|| self.conf_sum / self.count as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.acc_sum / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityReport {
    pub mode: ReliabilityMode,
    pub bins: [BinStats; NUM_BINS],
    pub total: usize,
    pub ece: f64,
}

/// Lower edge of bin `b`; `bin_edge(10) == 1.0`.
pub fn bin_edge(b: usize) -> f64 {
    b as f64 / NUM_BINS as f64
}

/// Bins are `[b/10, (b+1)/10)` except the last, which also holds 1.0.
/// Values outside `[0, 1]` are clamped.
pub fn bin_index(confidence: f64) -> usize {
    let c = confidence.clamp(0.0, 1.0);
    let mut b = ((c * NUM_BINS as f64).floor() as usize).min(NUM_BINS - 1);
    // Guard against rounding in the product disagreeing with the edges.
    if c < bin_edge(b) {
        b -= 1;
    } else if b + 1 < NUM_BINS && c >= bin_edge(b + 1) {
        b += 1;
    }
    b
}

impl ReliabilityReport {
    /// Bins `(confidence, accuracy)` samples.
    pub fn from_samples(
        mode: ReliabilityMode,
        samples: impl IntoIterator<Item = (f64, f64)>,
    ) -> Self {
        let mut bins = [BinStats::default(); NUM_BINS];
        let mut total = 0;
        for (conf, acc) in samples {
            let bin = &mut bins[bin_index(conf)];
            bin.count += 1;
            bin.conf_sum += conf;
            bin.acc_sum += acc;
            total += 1;
        }
        let ece = if total == 0 {
            0.0
        } else {
            bins.iter()
                .filter_map(|b| Some((b.count, b.mean_confidence()?, b.accuracy()?)))
                .map(|(n, conf, acc)| n as f64 / total as f64 * (acc - conf).abs())
                .sum()
        };
        Self {
            mode,
            bins,
            total,
            ece,
        }
    }

    /// Rows `(lo, hi, count, mean_confidence, accuracy)` of occupied bins.
    pub fn occupied(&self) -> impl Iterator<Item = (f64, f64, usize, f64, f64)> + '_ {
        self.bins.iter().enumerate().filter_map(|(b, s)| {
            Some((
                bin_edge(b),
                bin_edge(b + 1),
                s.count,
                s.mean_confidence()?,
                s.accuracy()?,
            ))
        })
    }

    /// `bin_lo,bin_hi,count,mean_confidence,accuracy` rows for occupied
    /// bins followed by an `ece,<value>` footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,mean_confidence,accuracy\n");
        for (lo, hi, count, conf, acc) in self.occupied() {
            writeln!(out, "{lo:?},{hi:?},{count},{conf:?},{acc:?}").unwrap();
        }
        writeln!(out, "ece,{:?}", self.ece).unwrap();
        out
    }
}

/// Reliability report over ranked recommendations.
pub fn reliability(results: &[TopKResult], mode: ReliabilityMode) -> ReliabilityReport {
    match mode {
        ReliabilityMode::Item => ReliabilityReport::from_samples(
            mode,
            results.iter().flat_map(|r| {
                r.confidences
                    .iter()
                    .zip(&r.hits)
                    .map(|(&c, &h)| (c, if h { 1.0 } else { 0.0 }))
            }),
        ),
        ReliabilityMode::UserMean => ReliabilityReport::from_samples(
            mode,
            results.iter().filter(|r| !r.items.is_empty()).map(|r| {
                (
                    r.mean_confidence(),
                    r.hits_at(r.items.len()) as f64 / r.items.len() as f64,
                )
            }),
        ),
    }
}
