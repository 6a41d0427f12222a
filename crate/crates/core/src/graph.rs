//! User-item bipartite interaction graph and its symmetric normalization.

use crate::error::{Error, Result};

/// Compressed sparse rows: `indices[offsets[r]..offsets[r + 1]]` are the
/// neighbors of row `r`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl Csr {
    fn from_sorted_pairs(rows: usize, pairs: impl Iterator<Item = (usize, u32)>) -> Self {
        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::new();
        for (r, c) in pairs {
            offsets[r + 1] += 1;
            indices.push(c);
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        Self { offsets, indices }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn contains(&self, r: usize, c: u32) -> bool {
        self.row(r).binary_search(&c).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_adj: Csr,
    item_adj: Csr,
}

impl InteractionGraph {
    /// Builds the deduplicated graph from `(user, item)` pairs.
    pub fn build(
        edges: impl IntoIterator<Item = (usize, usize)>,
        num_users: usize,
        num_items: usize,
    ) -> Result<Self> {
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (u, i) in edges {
            if u >= num_users {
                return Err(Error::IndexOutOfRange {
                    kind: "user",
                    index: u,
                    size: num_users,
                });
            }
            if i >= num_items {
                return Err(Error::IndexOutOfRange {
                    kind: "item",
                    index: i,
                    size: num_items,
                });
            }
            pairs.push((u as u32, i as u32));
        }
        pairs.sort_unstable();
        pairs.dedup();
        if pairs.is_empty() {
            return Err(Error::EmptyGraph);
        }

        let user_adj =
            Csr::from_sorted_pairs(num_users, pairs.iter().map(|&(u, i)| (u as usize, i)));
        let mut transposed: Vec<(u32, u32)> = pairs.iter().map(|&(u, i)| (i, u)).collect();
        transposed.sort_unstable();
        let item_adj =
            Csr::from_sorted_pairs(num_items, transposed.iter().map(|&(i, u)| (i as usize, u)));

        let zero_users = (0..num_users).filter(|&u| user_adj.row_len(u) == 0).count();
        let zero_items = (0..num_items).filter(|&i| item_adj.row_len(i) == 0).count();
        if zero_users > 0 || zero_items > 0 {
            log::warn!(
                "{zero_users} users and {zero_items} items have no edges; they are skipped by sampling and evaluation"
            );
        }

        Ok(Self {
            num_users,
            num_items,
            user_adj,
            item_adj,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_adj.nnz()
    }

    pub fn user_adj(&self) -> &Csr {
        &self.user_adj
    }

    pub fn item_adj(&self) -> &Csr {
        &self.item_adj
    }

    pub fn user_items(&self, u: usize) -> &[u32] {
        self.user_adj.row(u)
    }

    pub fn item_users(&self, i: usize) -> &[u32] {
        self.item_adj.row(i)
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_adj.row_len(u)
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_adj.row_len(i)
    }

    pub fn has_edge(&self, u: usize, i: usize) -> bool {
        self.user_adj.contains(u, i as u32)
    }

    /// Edges in user-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users)
            .flat_map(move |u| self.user_adj.row(u).iter().map(move |&i| (u, i as usize)))
    }

    /// Symmetric degree normalization: every edge `(u, i)` gets weight
    /// `1 / sqrt(deg(u) * deg(i))`, stored for both directions.
    pub fn normalize(&self) -> NormalizedAdjacency {
        let weight = |du: usize, di: usize| ((du as f64) * (di as f64)).sqrt().recip();
        let user_weights = self
            .edges()
            .map(|(u, i)| weight(self.user_degree(u), self.item_degree(i)))
            .collect();
        let item_weights = (0..self.num_items)
            .flat_map(|i| self.item_adj.row(i).iter().map(move |&u| (i, u as usize)))
            .map(|(i, u)| weight(self.user_degree(u), self.item_degree(i)))
            .collect();
        NormalizedAdjacency {
            graph: self.clone(),
            user_weights,
            item_weights,
        }
    }
}

/// Propagation weights aligned with the CSR layout of both directions.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    graph: InteractionGraph,
    user_weights: Vec<f64>,
    item_weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn num_users(&self) -> usize {
        self.graph.num_users
    }

    pub fn num_items(&self) -> usize {
        self.graph.num_items
    }

    /// `(item, weight)` neighbors of user `u`.
    pub fn user_row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let off = &self.graph.user_adj.offsets;
        let span = off[u]..off[u + 1];
        self.graph.user_adj.indices[span.clone()]
            .iter()
            .zip(&self.user_weights[span])
            .map(|(&i, &w)| (i as usize, w))
    }

    /// `(user, weight)` neighbors of item `i`.
    pub fn item_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let off = self.graph.item_adj.offsets();
        let span = off[i]..off[i + 1];
        self.graph.item_adj.indices[span.clone()]
            .iter()
            .zip(&self.item_weights[span])
            .map(|(&u, &w)| (u as usize, w))
    }

    /// Weight of edge `(u, i)` looked up from the user side.
    pub fn user_item_weight(&self, u: usize, i: usize) -> Option<f64> {
        let row = self.graph.user_adj.row(u);
        let k = row.binary_search(&(i as u32)).ok()?;
        Some(self.user_weights[self.graph.user_adj.offsets[u] + k])
    }

    /// Weight of edge `(u, i)` looked up from the item side.
    pub fn item_user_weight(&self, i: usize, u: usize) -> Option<f64> {
        let row = self.graph.item_adj.row(i);
        let k = row.binary_search(&(u as u32)).ok()?;
        Some(self.item_weights[self.graph.item_adj.offsets[i] + k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge() {
        let g = InteractionGraph::build([(0, 0)], 1, 1).unwrap();
        assert_eq!(g.user_degree(0), 1);
        assert_eq!(g.item_degree(0), 1);
        assert_eq!(g.normalize().user_item_weight(0, 0), Some(1.0));
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = InteractionGraph::build([(0, 0), (0, 0)], 1, 1).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn degrees_and_weights() {
        let g = InteractionGraph::build([(0, 0), (0, 1), (1, 1)], 2, 2).unwrap();
        assert_eq!(
            [
                g.user_degree(0),
                g.user_degree(1),
                g.item_degree(0),
                g.item_degree(1)
            ],
            [2, 1, 1, 2]
        );
        let adj = g.normalize();
        assert_eq!(adj.user_item_weight(0, 1), Some(0.5));
        assert_eq!(adj.item_user_weight(1, 0), Some(0.5));
        assert_eq!(adj.user_item_weight(1, 0), None);
    }

    #[test]
    fn rows_sorted_ascending() {
        let g = InteractionGraph::build([(0, 3), (0, 1), (1, 2), (0, 2)], 2, 4).unwrap();
        assert_eq!(g.user_items(0), &[1, 2, 3]);
        assert_eq!(g.item_users(2), &[0, 1]);
    }

    #[test]
    fn bad_indices_rejected() {
        assert!(matches!(
            InteractionGraph::build([(2, 0)], 2, 2),
            Err(Error::IndexOutOfRange { kind: "user", .. })
        ));
        assert!(matches!(
            InteractionGraph::build([(0, 5)], 2, 2),
            Err(Error::IndexOutOfRange { kind: "item", .. })
        ));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(
            InteractionGraph::build(std::iter::empty(), 2, 2),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn isolated_nodes_allowed() {
        let g = InteractionGraph::build([(0, 0)], 3, 4).unwrap();
        assert_eq!(g.user_degree(2), 0);
        assert_eq!(g.item_degree(3), 0);
        let adj = g.normalize();
        assert_eq!(adj.user_row(2).count(), 0);
    }
}
