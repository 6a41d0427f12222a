//! Embedding tables, linear message propagation, scoring and the softmax
//! normalization layer that turns ratings into confidences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::{axpy, dot, Matrix};
use crate::par;

/// Standard deviation of the initial embedding entries.
pub const INIT_STD: f64 = 0.1;

/// Layer-0 parameters plus the propagated readout.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub user_emb: Matrix,
    pub item_emb: Matrix,
    /// Per-layer outputs `h^(0)..h^(L)` as `(users, items)`, kept only on request.
    pub layer_outputs: Option<Vec<(Matrix, Matrix)>>,
    pub final_user: Matrix,
    pub final_item: Matrix,
}

impl EmbeddingState {
    /// I.i.d. `N(0, 0.1^2)` entries from a ChaCha8 stream seeded with `seed`,
    /// users first, row-major. The readout starts equal to layer 0.
    pub fn init(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "embedding dimension must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal parameters");
        let mut draw = |rows: usize| {
            Matrix::from_vec(
                rows,
                dim,
                (0..rows * dim).map(|_| normal.sample(&mut rng)).collect(),
            )
        };
        let user_emb = draw(num_users);
        let item_emb = draw(num_items);
        Ok(Self::from_layer0(user_emb, item_emb))
    }

    pub fn from_layer0(user_emb: Matrix, item_emb: Matrix) -> Self {
        Self {
            final_user: user_emb.clone(),
            final_item: item_emb.clone(),
            user_emb,
            item_emb,
            layer_outputs: None,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.user_emb.is_finite()
            && self.item_emb.is_finite()
            && self.final_user.is_finite()
            && self.final_item.is_finite()
    }

    /// Recomputes the readout from the layer-0 tables.
    pub fn propagate(&mut self, adj: &NormalizedAdjacency, layers: usize) -> Result<()> {
        self.propagate_with(adj, layers, false)
    }

    pub fn propagate_with(
        &mut self,
        adj: &NormalizedAdjacency,
        layers: usize,
        keep_layers: bool,
    ) -> Result<()> {
        let out = propagate(&self.user_emb, &self.item_emb, adj, layers, keep_layers)?;
        self.final_user = out.users;
        self.final_item = out.items;
        self.layer_outputs = out.layers;
        Ok(())
    }

    /// Ratings of `user` against every item.
    pub fn score(&self, user: usize) -> Result<Vec<f64>> {
        if user >= self.final_user.rows() {
            return Err(Error::IndexOutOfRange {
                kind: "user",
                index: user,
                size: self.final_user.rows(),
            });
        }
        let u = self.final_user.row(user);
        Ok((0..self.final_item.rows())
            .map(|i| dot(u, self.final_item.row(i)))
            .collect())
    }

    pub fn score_pair(&self, user: usize, item: usize) -> f64 {
        dot(self.final_user.row(user), self.final_item.row(item))
    }
}

/// Result of [`propagate`].
#[derive(Debug, Clone)]
pub struct Propagated {
    pub users: Matrix,
    pub items: Matrix,
    pub layers: Option<Vec<(Matrix, Matrix)>>,
}

/// Layer-mean readout of `layers` rounds of normalized neighbor summation:
/// `h_u^(l+1) = sum_i w(u,i) h_i^(l)`, symmetrically for items, readout
/// `mean(h^(0)..h^(L))`.
///
/// The operator is linear and symmetric, so the same call maps an upstream
/// gradient on the readout back onto the layer-0 tables.
pub fn propagate(
    users: &Matrix,
    items: &Matrix,
    adj: &NormalizedAdjacency,
    layers: usize,
    keep_layers: bool,
) -> Result<Propagated> {
    if users.rows() != adj.num_users() || items.rows() != adj.num_items() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings are {}x{} users / {}x{} items, adjacency is {} users / {} items",
            users.rows(),
            users.cols(),
            items.rows(),
            items.cols(),
            adj.num_users(),
            adj.num_items()
        )));
    }
    if users.cols() != items.cols() {
        return Err(Error::DimensionMismatch(format!(
            "user dim {} != item dim {}",
            users.cols(),
            items.cols()
        )));
    }
    let dim = users.cols();
    let mut acc_u = users.clone();
    let mut acc_i = items.clone();
    let mut kept = keep_layers.then(|| vec![(users.clone(), items.clone())]);
    let mut cur_u = users.clone();
    let mut cur_i = items.clone();
    for _ in 0..layers {
        let mut next_u = Matrix::zeros(users.rows(), dim);
        let mut next_i = Matrix::zeros(items.rows(), dim);
        par::for_each_row_mut(next_u.as_mut_slice(), dim, |u, row| {
            for (i, w) in adj.user_row(u) {
                axpy(w, cur_i.row(i), row);
            }
        });
        par::for_each_row_mut(next_i.as_mut_slice(), dim, |i, row| {
            for (u, w) in adj.item_row(i) {
                axpy(w, cur_u.row(u), row);
            }
        });
        acc_u.add_assign(&next_u);
        acc_i.add_assign(&next_i);
        if let Some(k) = kept.as_mut() {
            k.push((next_u.clone(), next_i.clone()));
        }
        cur_u = next_u;
        cur_i = next_i;
    }
    let scale = 1.0 / (layers as f64 + 1.0);
    acc_u.scale(scale);
    acc_i.scale(scale);
    Ok(Propagated {
        users: acc_u,
        items: acc_i,
        layers: kept,
    })
}

/// Softmax over the non-excluded ratings, with max-subtraction. Excluded
/// entries get probability exactly 0.
pub fn normalize_scores(ratings: &[f64], exclude: &[u32]) -> Result<Vec<f64>> {
    let mask = exclusion_mask(ratings.len(), exclude)?;
    normalize_masked(ratings, &mask)
}

pub(crate) fn exclusion_mask(len: usize, exclude: &[u32]) -> Result<Vec<bool>> {
    let mut mask = vec![false; len];
    for &i in exclude {
        let i = i as usize;
        if i >= len {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: i,
                size: len,
            });
        }
        mask[i] = true;
    }
    Ok(mask)
}

pub(crate) fn normalize_masked(ratings: &[f64], excluded: &[bool]) -> Result<Vec<f64>> {
    let max = ratings
        .iter()
        .zip(excluded)
        .filter(|(_, &x)| !x)
        .map(|(&r, _)| r)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllExcluded);
    }
    let mut probs: Vec<f64> = ratings
        .iter()
        .zip(excluded)
        .map(|(&r, &x)| if x { 0.0 } else { (r - max).exp() })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// One user's ratings and the distribution derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSheet {
    pub user: usize,
    pub ratings: Vec<f64>,
    pub probs: Vec<f64>,
    pub excluded: Vec<bool>,
    pub top_prediction: usize,
    pub top_confidence: f64,
}

impl ScoreSheet {
    pub fn new(user: usize, ratings: Vec<f64>, exclude: &[u32]) -> Result<Self> {
        let excluded = exclusion_mask(ratings.len(), exclude)?;
        Self::with_mask(user, ratings, excluded)
    }

    pub fn with_mask(user: usize, ratings: Vec<f64>, excluded: Vec<bool>) -> Result<Self> {
        if excluded.len() != ratings.len() {
            return Err(Error::LengthMismatch {
                left: ratings.len(),
                right: excluded.len(),
            });
        }
        let probs = normalize_masked(&ratings, &excluded)?;
        let top_prediction = rank_candidates(&ratings, &excluded, 1)[0];
        let top_confidence = probs[top_prediction];
        Ok(Self {
            user,
            ratings,
            probs,
            excluded,
            top_prediction,
            top_confidence,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.excluded.iter().filter(|&&x| !x).count()
    }

    /// Up to `n` non-excluded items by descending rating; ties go to the
    /// lower index.
    pub fn top_n(&self, n: usize) -> Vec<usize> {
        rank_candidates(&self.ratings, &self.excluded, n)
    }
}

/// The `n` best non-excluded items in rank order.
fn rank_candidates(ratings: &[f64], excluded: &[bool], n: usize) -> Vec<usize> {
    let order = |a: &usize, b: &usize| ratings[*b].total_cmp(&ratings[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..ratings.len()).filter(|&i| !excluded[i]).collect();
    if n == 0 {
        return Vec::new();
    }
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, order);
        idx.truncate(n);
    }
    idx.sort_unstable_by(order);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InteractionGraph;

    #[test]
    fn init_shapes_and_determinism() {
        let a = EmbeddingState::init(2, 3, 4, 7).unwrap();
        assert_eq!(a.user_emb.shape(), (2, 4));
        assert_eq!(a.item_emb.shape(), (3, 4));
        assert_eq!(a, EmbeddingState::init(2, 3, 4, 7).unwrap());
        assert_ne!(
            a.user_emb,
            EmbeddingState::init(2, 3, 4, 8).unwrap().user_emb
        );
        assert!(EmbeddingState::init(2, 3, 0, 7).is_err());
    }

    #[test]
    fn zero_layers_is_identity() {
        let g = InteractionGraph::build([(0, 0), (1, 1), (0, 1)], 2, 2).unwrap();
        let mut s = EmbeddingState::init(2, 2, 3, 1).unwrap();
        s.propagate(&g.normalize(), 0).unwrap();
        assert_eq!(s.final_user, s.user_emb);
        assert_eq!(s.final_item, s.item_emb);
    }

    #[test]
    fn single_edge_one_layer() {
        let g = InteractionGraph::build([(0, 0)], 1, 1).unwrap();
        let mut s = EmbeddingState::init(1, 1, 3, 2).unwrap();
        s.propagate_with(&g.normalize(), 1, true).unwrap();
        let layers = s.layer_outputs.as_ref().unwrap();
        assert_eq!(layers[1].0.row(0), s.item_emb.row(0));
        for k in 0..3 {
            assert_eq!(
                s.final_user[(0, k)],
                (s.user_emb[(0, k)] + s.item_emb[(0, k)]) / 2.0
            );
        }
    }

    #[test]
    fn dimension_mismatch() {
        let g = InteractionGraph::build([(0, 0)], 1, 1).unwrap();
        let mut s = EmbeddingState::init(2, 1, 3, 2).unwrap();
        assert!(matches!(
            s.propagate(&g.normalize(), 1),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn scores() {
        let mut s = EmbeddingState::init(1, 2, 2, 0).unwrap();
        s.final_user = Matrix::from_vec(1, 2, vec![0.0, 0.0]);
        assert_eq!(s.score(0).unwrap(), vec![0.0, 0.0]);
        s.final_user = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        s.final_item = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.score(0).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(s.score(1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(normalize_scores(&[3.0; 4], &[]).unwrap(), vec![0.25; 4]);
        let p = normalize_scores(&[2.0, 0.0], &[]).unwrap();
        assert!((p[0] - 0.88080).abs() < 1e-5 && (p[1] - 0.11920).abs() < 1e-5);
        let p = normalize_scores(&[5.0, 1.0, 3.0], &[0]).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.11920).abs() < 1e-5 && (p[2] - 0.88080).abs() < 1e-5);
        assert!(matches!(
            normalize_scores(&[1.0, 2.0], &[0, 1]),
            Err(Error::AllExcluded)
        ));
    }

    #[test]
    fn softmax_survives_huge_ratings() {
        let p = normalize_scores(&[1e308, -1e308, 1e308], &[]).unwrap();
        assert_eq!(p, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn sheet_top_items() {
        let s = ScoreSheet::new(0, vec![0.1, 0.9, 0.5, 0.9], &[3]).unwrap();
        assert_eq!(s.top_prediction, 1);
        assert_eq!(s.top_n(2), vec![1, 2]);
        assert_eq!(s.num_candidates(), 3);
        assert_eq!(s.top_confidence, s.probs[1]);
    }
}
