//! Joint gradient/geography features, k-means partitioning and parameter
//! server election.

use rand::Rng;
use thiserror::Error;

use crate::constellation::{distance, Position};
use crate::domain::ModelVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusteringError {
    #[error("client {0} has a zero-norm update")]
    ZeroUpdate(usize),
    #[error("update dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cluster count must be positive")]
    NoClusters,
    #[error("cannot form {k} clusters from {n} points")]
    TooManyClusters { k: usize, n: usize },
}

/// Dense symmetric `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// `H_cos(i, j) = (1 + cos(dw_i, dw_j)) / 2`.
pub fn gradient_similarity(updates: &[ModelVector]) -> Result<SquareMatrix, ClusteringError> {
    let n = updates.len();
    if let Some(first) = updates.first() {
        if let Some(bad) = updates.iter().find(|u| u.len() != first.len()) {
            return Err(ClusteringError::DimensionMismatch(first.len(), bad.len()));
        }
    }
    let norms: Vec<f64> = updates.iter().map(ModelVector::norm).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(ClusteringError::ZeroUpdate(i));
    }
    let mut h = SquareMatrix::filled(n, 1.0);
    for i in 0..n {
        for j in 0..i {
            let cos = (updates[i].dot(&updates[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            h.set_sym(i, j, (1.0 + cos) / 2.0);
        }
    }
    Ok(h)
}

/// `H_geo(i, j) = 1 - (R(i, j) - R_min) / (R_max - R_min)` over off-diagonal
/// pairs; all-ones when every position coincides.
pub fn geo_similarity(positions: &[Position]) -> SquareMatrix {
    let n = positions.len();
    let mut h = SquareMatrix::filled(n, 1.0);
    let mut dist = SquareMatrix::filled(n, 0.0);
    let (mut r_min, mut r_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..i {
            let r = distance(&positions[i], &positions[j]);
            dist.set_sym(i, j, r);
            r_min = r_min.min(r);
            r_max = r_max.max(r);
        }
    }
    if n < 2 || r_max <= r_min {
        return h;
    }
    for i in 0..n {
        for j in 0..i {
            h.set_sym(i, j, 1.0 - (dist.get(i, j) - r_min) / (r_max - r_min));
        }
    }
    h
}

/// Client `i`'s feature: `theta * row_i(H_cos) ++ (1 - theta) * row_i(H_geo)`.
pub fn joint_features(h_cos: &SquareMatrix, h_geo: &SquareMatrix, theta: f64) -> Vec<Vec<f64>> {
    assert_eq!(
        h_cos.size(),
        h_geo.size(),
        "similarity matrices must be conformant"
    );
    (0..h_cos.size())
        .map(|i| {
            h_cos
                .row(i)
                .iter()
                .map(|v| theta * v)
                .chain(h_geo.row(i).iter().map(|v| (1.0 - theta) * v))
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn seed_centroids<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Rounding can leave `target` just above the tail mass.
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| nearest(p, centroids)).collect()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut victim = None;
        let mut worst = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if d > worst {
                worst = d;
                victim = Some(i);
            }
        }
        let Some(v) = victim else { return };
        labels[v] = empty;
        centroids[empty] = points[v].clone();
    }
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            let inv = 1.0 / c as f64;
            s.iter_mut().for_each(|v| *v *= inv);
        }
    }
    sums
}

/// Lloyd's algorithm with k-means++ seeding. Stops when no label changes
/// or after `max_iter` updates. Never returns an empty cluster.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<KMeans, ClusteringError> {
    if k == 0 {
        return Err(ClusteringError::NoClusters);
    }
    if k > points.len() {
        return Err(ClusteringError::TooManyClusters { k, n: points.len() });
    }
    let mut centroids = seed_centroids(points, k, rng);
    let mut labels = assign(points, &centroids);
    repair_empty(points, &mut centroids, &mut labels);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centroids = means(points, &labels, k);
        let mut next = assign(points, &centroids);
        repair_empty(points, &mut centroids, &mut next);
        if next == labels {
            break;
        }
        labels = next;
    }
    let centroids = means(points, &labels, k);
    Ok(KMeans {
        labels,
        centroids,
        iterations,
    })
}

/// Candidate for parameter-server election.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsCandidate {
    pub id: u32,
    pub position: Position,
    /// Expected local computation time; lower means idler.
    pub comp_time_s: f64,
}

/// Member closest to the cluster's mean position; ties go to the idlest,
/// then to the lowest id.
pub fn select_ps(members: &[PsCandidate]) -> Option<u32> {
    let n = members.len() as f64;
    let mut centre = [0.0; 3];
    for m in members {
        for (c, p) in centre.iter_mut().zip(&m.position) {
            *c += p;
        }
    }
    centre.iter_mut().for_each(|c| *c /= n);
    members
        .iter()
        .map(|m| (distance(&m.position, &centre), m.comp_time_s, m.id))
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.cmp(&b.2))
        })
        .map(|(_, _, id)| id)
}

/// Partition of the clients plus the elected parameter server per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub ps_ids: Vec<u32>,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.ps_ids.len()
    }

    /// Client ids of cluster `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<u32> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == k)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn is_ps(&self, client: u32) -> bool {
        self.ps_ids.contains(&client)
    }
}

/// Clusters clients by joint gradient and geographic similarity and elects
/// one parameter server per cluster.
pub fn form_clusters<R: Rng + ?Sized>(
    updates: &[ModelVector],
    positions: &[Position],
    comp_times: &[f64],
    theta: f64,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<ClusterAssignment, ClusteringError> {
    let h_cos = gradient_similarity(updates)?;
    let h_geo = geo_similarity(positions);
    let features = joint_features(&h_cos, &h_geo, theta);
    let km = kmeans(&features, k, max_iter, rng)?;
    let ps_ids = (0..k)
        .map(|c| {
            let members: Vec<PsCandidate> = km
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == c)
                .map(|(i, _)| PsCandidate {
                    id: i as u32,
                    position: positions[i],
                    comp_time_s: comp_times[i],
                })
                .collect();
            select_ps(&members).expect("k-means never leaves a cluster empty")
        })
        .collect();
    Ok(ClusterAssignment {
        labels: km.labels,
        ps_ids,
        centroids: km.centroids,
    })
}
