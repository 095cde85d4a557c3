//! Client clustering from one-epoch update directions: cosine distances and
//! greedy average-linkage agglomeration.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::{local_train, Network, OptimizerState, ParamSet, TrainConfig};

/// Δw_k: parameters after one local epoch minus the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDelta {
    pub client: usize,
    pub values: Vec<f64>,
}

impl UpdateDelta {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Trains exactly one epoch from `reference` (dropout off, fresh Adam) and
/// returns the parameter change.
pub fn compute_delta(
    net: &Network,
    reference: &ParamSet,
    client: &ClientDataset,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<UpdateDelta> {
    let cfg = TrainConfig {
        epochs: 1,
        batch_size,
        learning_rate,
        dropout: false,
    };
    let mut opt = OptimizerState::new(reference.len(), learning_rate);
    let out = local_train(
        net,
        reference,
        &client.train,
        &cfg,
        &mut opt,
        None,
        None,
        seed,
    )?;
    Ok(UpdateDelta {
        client: client.id,
        values: out.params.delta_from(reference)?,
    })
}

/// Dense symmetric distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("distance matrix must be square"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row[i] != 0.0 {
                return Err(Error::config("distance matrix diagonal must be zero"));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != rows[j][i] || v.is_nan() || v < 0.0 {
                    return Err(Error::config(
                        "distance matrix must be symmetric and non-negative",
                    ));
                }
            }
        }
        Ok(Self {
            n,
            data: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.n.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// `1 - cos(Δw_k, Δw_k')`, clamped to [0, 2]. A zero-norm delta is at
/// distance 1 from every other client.
pub fn cosine_distance_matrix(deltas: &[UpdateDelta]) -> Result<DistanceMatrix> {
    if deltas.len() < 2 {
        return Err(Error::config("need at least two deltas"));
    }
    let len = deltas[0].values.len();
    if deltas.iter().any(|d| d.values.len() != len) {
        return Err(Error::shape("update deltas differ in length"));
    }
    let sq: Vec<f64> = deltas
        .iter()
        .map(|d| d.values.iter().map(|v| v * v).sum())
        .collect();
    Ok(DistanceMatrix::from_fn(deltas.len(), |i, j| {
        if sq[i] == 0.0 || sq[j] == 0.0 {
            return 1.0;
        }
        let dot: f64 = deltas[i]
            .values
            .iter()
            .zip(&deltas[j].values)
            .map(|(a, b)| a * b)
            .sum();
        (1.0 - dot / (sq[i] * sq[j]).sqrt()).clamp(0.0, 2.0)
    }))
}

/// A partition of clients (by position) into `k` non-empty clusters.
///
/// Clusters are numbered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    /// Builds an assignment from member lists, renumbering by smallest member.
    pub fn from_members(mut members: Vec<Vec<usize>>) -> Result<Self> {
        for m in members.iter_mut() {
            m.sort_unstable();
        }
        if members.iter().any(Vec::is_empty) {
            return Err(Error::config("empty cluster"));
        }
        members.sort_by_key(|m| m[0]);
        let n: usize = members.iter().map(Vec::len).sum();
        let mut labels = vec![usize::MAX; n];
        for (c, m) in members.iter().enumerate() {
            for &i in m {
                if i >= n || labels[i] != usize::MAX {
                    return Err(Error::config("cluster members do not form a partition"));
                }
                labels[i] = c;
            }
        }
        Ok(Self { labels, members })
    }

    pub fn single(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            members: vec![(0..n).collect()],
        }
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_of(&self, client: usize) -> usize {
        self.labels[client]
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("client,cluster\n");
        for (i, c) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "{i},{c}");
        }
        out
    }
}

/// Average-linkage agglomerative clustering down to `k` clusters.
///
/// Starting from singletons, repeatedly merges the pair of clusters with the
/// smallest mean pairwise distance. Clusters are kept ordered by smallest
/// member; ties go to the lexicographically lowest (index, index) pair.
pub fn agglomerative_cluster(dist: &DistanceMatrix, k: usize) -> Result<ClusterAssignment> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "cannot form {k} clusters from {n} clients"
        )));
    }
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // sums[a][b]: total distance between members of a and members of b
    let mut sums: Vec<Vec<f64>> = dist.rows();
    while members.len() > k {
        let mut best = (0, 1);
        let mut best_d = f64::INFINITY;
        for a in 0..members.len() {
            for b in (a + 1)..members.len() {
                let d = sums[a][b] / (members[a].len() * members[b].len()) as f64;
                if d < best_d {
                    best_d = d;
                    best = (a, b);
                }
            }
        }
        let (a, b) = best;
        let absorbed = members.remove(b);
        members[a].extend(absorbed);
        let row_b = sums.remove(b);
        for row in sums.iter_mut() {
            row.remove(b);
        }
        for x in 0..members.len() {
            let add = if x < b { row_b[x] } else { row_b[x + 1] };
            if x != a {
                sums[a][x] += add;
                sums[x][a] = sums[a][x];
            }
        }
    }
    ClusterAssignment::from_members(members)
}

/// Fraction of client pairs on which two labelings agree (same/different).
pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
            total += 1;
        }
    }
    agree as f64 / total as f64
}
