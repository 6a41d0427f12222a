//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use confrec::train::{batch_objective, TrainBatch};
use confrec::{InteractionGraph, Matrix, NormalizedAdjacency, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `(N+M) x (N+M)` matrix `D^-1/2 A D^-1/2` of the bipartite graph,
/// users first. Zero-degree nodes get all-zero rows.
pub fn dense_normalized(graph: &InteractionGraph) -> Vec<Vec<f64>> {
    let (n, m) = (graph.num_users(), graph.num_items());
    let size = n + m;
    let mut a = vec![vec![0.0; size]; size];
    for (u, i) in graph.edges() {
        a[u][n + i] = 1.0;
        a[n + i][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    for r in 0..size {
        for c in 0..size {
            if a[r][c] != 0.0 {
                a[r][c] /= (deg[r] * deg[c]).sqrt();
            }
        }
    }
    a
}

/// Layer-mean readout computed with dense matrix products.
pub fn dense_propagate(
    graph: &InteractionGraph,
    users: &Matrix,
    items: &Matrix,
    layers: usize,
) -> (Matrix, Matrix) {
    let a = dense_normalized(graph);
    let (n, d) = (users.rows(), users.cols());
    let mut cur: Vec<Vec<f64>> = (0..n)
        .map(|u| users.row(u).to_vec())
        .chain((0..items.rows()).map(|i| items.row(i).to_vec()))
        .collect();
    let mut acc = cur.clone();
    for _ in 0..layers {
        let next: Vec<Vec<f64>> = a
            .iter()
            .map(|row| {
                let mut out = vec![0.0; d];
                for (c, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        for k in 0..d {
                            out[k] += w * cur[c][k];
                        }
                    }
                }
                out
            })
            .collect();
        for (a_row, n_row) in acc.iter_mut().zip(&next) {
            for (x, y) in a_row.iter_mut().zip(n_row) {
                *x += y;
            }
        }
        cur = next;
    }
    let scale = 1.0 / (layers + 1) as f64;
    let flat =
        |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().flatten().map(|x| x * scale).collect() };
    (
        Matrix::from_vec(n, d, flat(&acc[..n])),
        Matrix::from_vec(items.rows(), d, flat(&acc[n..])),
    )
}

/// Random bipartite graph with at least one edge.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> InteractionGraph {
    let mut edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (0..m).map(move |i| (u, i)))
        .filter(|_| rng.random::<f64>() < density)
        .collect();
    if edges.is_empty() {
        edges.push((rng.random_range(0..n), rng.random_range(0..m)));
    }
    InteractionGraph::build(edges, n, m).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest relative error between the analytic gradient of the batch
/// objective and central differences with step `h`, over every layer-0
/// parameter. The denominator is floored at 1e-6 so near-zero entries are
/// judged absolutely.
pub fn max_gradient_error(
    users: &Matrix,
    items: &Matrix,
    adj: &NormalizedAdjacency,
    batch: &TrainBatch,
    config: &TrainConfig,
    h: f64,
) -> f64 {
    let (_, grads) = batch_objective(users, items, adj, batch, config, true).unwrap();
    let grads = grads.unwrap();
    let loss = |u: &Matrix, i: &Matrix| {
        batch_objective(u, i, adj, batch, config, false)
            .unwrap()
            .0
            .total()
    };
    let mut worst: f64 = 0.0;
    for table in 0..2 {
        let len = if table == 0 {
            users.as_slice().len()
        } else {
            items.as_slice().len()
        };
        for k in 0..len {
            let (mut up_u, mut up_i) = (users.clone(), items.clone());
            let (mut dn_u, mut dn_i) = (users.clone(), items.clone());
            if table == 0 {
                up_u.as_mut_slice()[k] += h;
                dn_u.as_mut_slice()[k] -= h;
            } else {
                up_i.as_mut_slice()[k] += h;
                dn_i.as_mut_slice()[k] -= h;
            }
            let numeric = (loss(&up_u, &up_i) - loss(&dn_u, &dn_i)) / (2.0 * h);
            let analytic = if table == 0 {
                grads.users.as_slice()[k]
            } else {
                grads.items.as_slice()[k]
            };
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Exhaustive apportionment of `n` items into (train, valid, test): the
/// split with minimal L1 distance to `(0.7n, 0.1n, 0.2n)` among those with
/// at least one test item; ties prefer more test, then more train.
pub fn brute_force_apportion(n: usize) -> (usize, usize, usize) {
    let target = [0.7 * n as f64, 0.1 * n as f64, 0.2 * n as f64];
    let mut best: Option<((usize, usize, usize), f64)> = None;
    for test in 1..=n {
        for train in 0..=n - test {
            let valid = n - test - train;
            let dev = (train as f64 - target[0]).abs()
                + (valid as f64 - target[1]).abs()
                + (test as f64 - target[2]).abs();
            let better = match best {
                None => true,
                Some(((bt, _, bs), bd)) => {
                    if (dev - bd).abs() > 1e-9 {
                        dev < bd
                    } else if test != bs {
                        test > bs
                    } else {
                        train > bt
                    }
                }
            };
            if better {
                best = Some(((train, valid, test), dev));
            }
        }
    }
    best.unwrap().0
}
