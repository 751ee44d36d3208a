//! Hard k-means and seeded fuzzy c-means over embedding vectors.
//!
//! Fuzzy memberships follow a softmax over bounded distances
//!
//! ```text
//! q_tk = |x_t - mu_k|^2 / (1 + |x_t - mu_k|^2)
//! u_tk = exp(-(2/gamma) q_tk) / sum_l exp(-(2/gamma) q_tl)
//! ```
//!
//! and centroids are the `d_tk u_tk`-weighted means with
//! `d_tk = (|x_t - mu_k| + 2) / (|x_t - mu_k| + 1)^2`, where distances are
//! taken against the previous centroids.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClusterError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("seed labels cover {found} classes, {expected} required")]
    MissingClasses { expected: usize, found: usize },
    #[error("seed label {label} out of range for {k} clusters")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("no points")]
    Empty,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ClusterError> {
        if rows * cols != data.len() {
            return Err(ClusterError::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Rows at the given positions.
    pub fn select(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn one_hot(assignments: &[usize], k: usize) -> Matrix {
        let mut m = Matrix::zeros(assignments.len(), k);
        for (t, &a) in assignments.iter().enumerate() {
            m.data[t * k + a] = 1.0;
        }
        m
    }

    /// Column of the largest entry in each row, lowest index on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                    .0
            })
            .collect()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(points: &Matrix, centroids: &Matrix) -> Result<(), ClusterError> {
    if points.cols != centroids.cols {
        return Err(ClusterError::Dimension(format!(
            "points have {} columns, centroids {}",
            points.cols, centroids.cols
        )));
    }
    if centroids.rows == 0 {
        return Err(ClusterError::Dimension("no centroids".into()));
    }
    Ok(())
}

/// A centroid that lost all its mass and was moved onto a data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub cluster: usize,
    pub point: usize,
}

/// Nearest centroid per point; ties go to the lowest cluster index.
pub fn kmeans_assign(points: &Matrix, centroids: &Matrix) -> Result<Vec<usize>, ClusterError> {
    check_dims(points, centroids)?;
    Ok(points
        .rows()
        .map(|x| {
            let mut best = (0, f64::INFINITY);
            for (k, mu) in centroids.rows().enumerate() {
                let d = squared_distance(x, mu);
                if d < best.1 {
                    best = (k, d);
                }
            }
            best.0
        })
        .collect())
}

/// Move every empty cluster onto the point farthest from its nearest
/// centroid, one point per empty cluster.
fn repair_empty(points: &Matrix, centroids: &mut Matrix, empty: &[usize]) -> Vec<Repair> {
    let mut repairs = Vec::new();
    let mut taken = vec![false; points.rows];
    for &k in empty {
        let mut best: Option<(usize, f64)> = None;
        for (t, x) in points.rows().enumerate() {
            if taken[t] {
                continue;
            }
            let nearest = centroids
                .rows()
                .enumerate()
                .filter(|(j, _)| !empty.contains(j) || repairs.iter().any(|r: &Repair| r.cluster == *j))
                .map(|(_, mu)| squared_distance(x, mu))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, d)| nearest > d) {
                best = Some((t, nearest));
            }
        }
        if let Some((t, _)) = best {
            taken[t] = true;
            centroids.row_mut(k).copy_from_slice(points.row(t));
            log::warn!("cluster {k} emptied; re-seeded on point {t}");
            repairs.push(Repair { cluster: k, point: t });
        }
    }
    repairs
}

/// Cluster means of the assigned points.
pub fn kmeans_update(
    points: &Matrix,
    assignments: &[usize],
    previous: &Matrix,
) -> Result<(Matrix, Vec<Repair>), ClusterError> {
    check_dims(points, previous)?;
    if assignments.len() != points.rows {
        return Err(ClusterError::Dimension("one assignment per point required".into()));
    }
    let k = previous.rows;
    let mut sums = Matrix::zeros(k, points.cols);
    let mut counts = vec![0usize; k];
    for (x, &a) in points.rows().zip(assignments) {
        counts[a] += 1;
        sums.row_mut(a).iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    let mut empty = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
            empty.push(c);
        } else {
            let n = counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|s| *s /= n);
        }
    }
    let repairs = repair_empty(points, &mut sums, &empty);
    Ok((sums, repairs))
}

/// `sum_t |x_t - mu_{s_t}|^2`.
pub fn kmeans_loss(points: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    points
        .rows()
        .zip(assignments)
        .map(|(x, &a)| squared_distance(x, centroids.row(a)))
        .sum()
}

/// Fuzzy memberships, one row-stochastic row per point.
pub fn cmeans_membership(points: &Matrix, centroids: &Matrix, gamma: f64) -> Result<Matrix, ClusterError> {
    check_dims(points, centroids)?;
    if !(gamma > 0.0) {
        return Err(ClusterError::BadGamma(gamma));
    }
    let k = centroids.rows;
    let mut u = Matrix::zeros(points.rows, k);
    let mut logits = vec![0.0; k];
    for (t, x) in points.rows().enumerate() {
        for (j, mu) in centroids.rows().enumerate() {
            let d2 = squared_distance(x, mu);
            logits[j] = -(2.0 / gamma) * (d2 / (1.0 + d2));
        }
        softmax_into(&logits, u.row_mut(t));
    }
    Ok(u)
}

/// Max-shifted softmax.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// `(r + 2) / (r + 1)^2` for a euclidean distance `r`.
pub fn distance_weight(distance: f64) -> f64 {
    (distance + 2.0) / ((distance + 1.0) * (distance + 1.0))
}

/// Weighted centroid update; `previous` supplies the distances in `d_tk`.
pub fn cmeans_centroids(
    points: &Matrix,
    memberships: &Matrix,
    previous: &Matrix,
) -> Result<(Matrix, Vec<Repair>), ClusterError> {
    check_dims(points, previous)?;
    if memberships.rows != points.rows || memberships.cols != previous.rows {
        return Err(ClusterError::Dimension(format!(
            "memberships are {}x{}, expected {}x{}",
            memberships.rows, memberships.cols, points.rows, previous.rows
        )));
    }
    let k = previous.rows;
    let mut num = Matrix::zeros(k, points.cols);
    let mut den = vec![0.0; k];
    for (t, x) in points.rows().enumerate() {
        for c in 0..k {
            let w = distance_weight(squared_distance(x, previous.row(c)).sqrt()) * memberships.data[t * k + c];
            den[c] += w;
            num.row_mut(c).iter_mut().zip(x).for_each(|(s, v)| *s += w * v);
        }
    }
    let mut empty = Vec::new();
    for c in 0..k {
        if den[c] > 0.0 {
            let d = den[c];
            num.row_mut(c).iter_mut().for_each(|s| *s /= d);
        } else {
            num.row_mut(c).copy_from_slice(previous.row(c));
            empty.push(c);
        }
    }
    let repairs = repair_empty(points, &mut num, &empty);
    Ok((num, repairs))
}

/// `sum_t sum_k u_tk |x_t - mu_k|^2`, unnormalized.
pub fn cmeans_loss_sum(points: &Matrix, centroids: &Matrix, memberships: &Matrix) -> f64 {
    let k = centroids.rows;
    points
        .rows()
        .enumerate()
        .map(|(t, x)| {
            (0..k)
                .map(|c| memberships.data[t * k + c] * squared_distance(x, centroids.row(c)))
                .sum::<f64>()
        })
        .sum()
}

/// [`cmeans_loss_sum`] divided by the number of points.
pub fn cmeans_loss(points: &Matrix, centroids: &Matrix, memberships: &Matrix) -> f64 {
    if points.rows == 0 {
        return 0.0;
    }
    cmeans_loss_sum(points, centroids, memberships) / points.rows as f64
}

/// Initial one-hot memberships from seed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeding {
    pub memberships: Matrix,
    /// Cluster index -> class id.
    pub pseudo_labels: Vec<usize>,
}

/// Cluster `k` starts as exactly the windows labelled `k`.
pub fn seed(labels: &[usize], k: usize) -> Result<Seeding, ClusterError> {
    if labels.is_empty() {
        return Err(ClusterError::Empty);
    }
    let mut seen = vec![false; k];
    for &l in labels {
        if l >= k {
            return Err(ClusterError::LabelOutOfRange { label: l, k });
        }
        seen[l] = true;
    }
    let found = seen.iter().filter(|&&s| s).count();
    if found < k || k < 2 {
        return Err(ClusterError::MissingClasses { expected: k.max(2), found });
    }
    Ok(Seeding {
        memberships: Matrix::one_hot(labels, k),
        pseudo_labels: (0..k).collect(),
    })
}

/// Centroids for one-hot seed memberships. With no previous iterate every
/// `d_tk` is taken at distance zero (weight 2), which reduces the weighted
/// update to the plain class mean.
pub fn seed_centroids(points: &Matrix, seeding: &Seeding) -> Result<Matrix, ClusterError> {
    let k = seeding.memberships.cols;
    let mut num = Matrix::zeros(k, points.cols);
    let mut den = vec![0.0; k];
    for (t, x) in points.rows().enumerate() {
        for c in 0..k {
            let w = distance_weight(0.0) * seeding.memberships.data[t * k + c];
            den[c] += w;
            num.row_mut(c).iter_mut().zip(x).for_each(|(s, v)| *s += w * v);
        }
    }
    for c in 0..k {
        if den[c] == 0.0 {
            return Err(ClusterError::MissingClasses { expected: k, found: den.iter().filter(|&&d| d > 0.0).count() });
        }
        let d = den[c];
        num.row_mut(c).iter_mut().for_each(|s| *s /= d);
    }
    Ok(num)
}

/// Fuzzy clustering state carried through training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub gamma: f64,
    pub centroids: Matrix,
    pub memberships: Matrix,
    pub pseudo_labels: Vec<usize>,
}

impl ClusterState {
    pub fn k(&self) -> usize {
        self.centroids.rows
    }

    /// Seeded state for the given embeddings.
    pub fn seeded(points: &Matrix, labels: &[usize], k: usize, gamma: f64) -> Result<Self, ClusterError> {
        if !(gamma > 0.0) {
            return Err(ClusterError::BadGamma(gamma));
        }
        if points.rows != labels.len() {
            return Err(ClusterError::Dimension("one label per point required".into()));
        }
        let seeding = seed(labels, k)?;
        let centroids = seed_centroids(points, &seeding)?;
        Ok(Self {
            gamma,
            centroids,
            memberships: seeding.memberships,
            pseudo_labels: seeding.pseudo_labels,
        })
    }

    /// Memberships against the current centroids, then the weighted
    /// centroid update.
    pub fn refresh(&mut self, points: &Matrix) -> Result<Vec<Repair>, ClusterError> {
        self.memberships = cmeans_membership(points, &self.centroids, self.gamma)?;
        let (centroids, repairs) = cmeans_centroids(points, &self.memberships, &self.centroids)?;
        self.centroids = centroids;
        Ok(repairs)
    }

    /// Class id and membership row per point.
    pub fn predict(&self, points: &Matrix) -> Result<(Vec<usize>, Matrix), ClusterError> {
        let u = cmeans_membership(points, &self.centroids, self.gamma)?;
        let classes = u.argmax_rows().into_iter().map(|c| self.pseudo_labels[c]).collect();
        Ok((classes, u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub per_point: Vec<f64>,
    pub mean: f64,
}

/// Silhouette coefficients with euclidean distance. Members of singleton
/// clusters, and points with `a = b = 0`, score 0.
pub fn silhouette(points: &Matrix, assignments: &[usize]) -> Result<Silhouette, ClusterError> {
    if assignments.len() != points.rows {
        return Err(ClusterError::Dimension("one assignment per point required".into()));
    }
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let n = points.rows;
    let mut per_point = Vec::with_capacity(n);
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.fill(0.0);
        let xi = points.row(i);
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += squared_distance(xi, points.row(j)).sqrt();
            }
        }
        let own = assignments[i];
        if sizes[own] <= 1 {
            per_point.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        per_point.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    let mean = per_point.iter().sum::<f64>() / n as f64;
    Ok(Silhouette { per_point, mean })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        m(rows, cols, &(0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>())
    }

    #[test]
    fn assign_examples() {
        let c = m(2, 2, &[1.0, 1.0, 5.0, 5.0]);
        assert_eq!(kmeans_assign(&m(1, 2, &[1.0, 1.0]), &c).unwrap(), vec![0]);
        let pts = m(2, 1, &[0.0, 10.0]);
        assert_eq!(kmeans_assign(&pts, &m(2, 1, &[1.0, 9.0])).unwrap(), vec![0, 1]);
        assert_eq!(kmeans_assign(&m(1, 1, &[5.0]), &m(2, 1, &[4.0, 6.0])).unwrap(), vec![0]);
    }

    #[test]
    fn update_examples() {
        let pts = m(3, 2, &[0.0, 0.0, 2.0, 2.0, 7.0, 7.0]);
        let prev = m(2, 2, &[0.0, 0.0, 9.0, 9.0]);
        let (c, repairs) = kmeans_update(&pts, &[0, 0, 1], &prev).unwrap();
        assert_eq!(c.row(0), &[1.0, 1.0]);
        assert_eq!(c.row(1), &[7.0, 7.0]);
        assert!(repairs.is_empty());
    }

    #[test]
    fn empty_cluster_moves_to_farthest_point() {
        let pts = m(3, 1, &[0.0, 1.0, 10.0]);
        let prev = m(2, 1, &[0.5, 100.0]);
        let (c, repairs) = kmeans_update(&pts, &[0, 0, 0], &prev).unwrap();
        assert_eq!(repairs, vec![Repair { cluster: 1, point: 2 }]);
        assert_eq!(c.row(1), &[10.0]);
    }

    #[test]
    fn membership_examples() {
        let pts = m(1, 2, &[0.3, 0.7]);
        let u = cmeans_membership(&pts, &m(1, 2, &[5.0, 5.0]), 0.1).unwrap();
        assert_eq!(u.data, vec![1.0]);
        let u = cmeans_membership(&m(1, 1, &[0.0]), &m(2, 1, &[-2.0, 2.0]), 0.1).unwrap();
        assert_eq!(u.data, vec![0.5, 0.5]);
        let u = cmeans_membership(&m(1, 1, &[0.0]), &m(2, 1, &[0.0, 1e6]), 0.1).unwrap();
        let expected = 1.0 / (1.0 + (-20.0f64 * (1e12 / (1.0 + 1e12))).exp());
        assert!((u.data[0] - expected).abs() < 1e-15);
        assert!((u.data[0] - (1.0 - 2.06e-9)).abs() < 1e-11);
        assert!(cmeans_membership(&pts, &m(1, 2, &[0.0, 0.0]), 0.0).is_err());
    }

    #[test]
    fn centroid_examples() {
        let pts = m(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let prev = m(1, 2, &[1.0, 2.0]);
        let u = m(2, 1, &[1.0, 1.0]);
        assert_eq!(distance_weight(0.0), 2.0);
        let (c, _) = cmeans_centroids(&pts, &u, &prev).unwrap();
        assert_eq!(c.row(0), &[1.0, 2.0]);

        let pts = m(2, 1, &[-1.0, 3.0]);
        let prev = m(1, 1, &[1.0]);
        let (c, _) = cmeans_centroids(&pts, &m(2, 1, &[0.5, 0.5]), &prev).unwrap();
        assert!((c.data[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let pts = m(2, 1, &[3.0, 3.0]);
        assert_eq!(cmeans_loss(&pts, &m(1, 1, &[3.0]), &m(2, 1, &[1.0, 1.0])), 0.0);
        let pts = m(1, 1, &[0.0]);
        let c = m(2, 1, &[1.0, 2.0]);
        assert_eq!(cmeans_loss(&pts, &c, &m(1, 2, &[0.5, 0.5])), 2.5);
    }

    #[test]
    fn seed_examples() {
        let s = seed(&[0, 0, 1], 2).unwrap();
        assert_eq!(s.memberships.data, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.pseudo_labels, vec![0, 1]);
        assert_eq!(seed(&[1, 1], 2), Err(ClusterError::MissingClasses { expected: 2, found: 1 }));
        assert!(seed(&[0, 2], 2).is_err());
    }

    #[test]
    fn seeded_centroids_are_class_means() {
        let pts = m(4, 2, &[0.0, 0.0, 2.0, 0.0, 10.0, 10.0, 10.0, 12.0]);
        let state = ClusterState::seeded(&pts, &[0, 0, 1, 1], 2, 0.1).unwrap();
        assert_eq!(state.centroids.row(0), &[1.0, 0.0]);
        assert_eq!(state.centroids.row(1), &[10.0, 11.0]);
        let (classes, _) = state.predict(&pts).unwrap();
        assert_eq!(classes, vec![0, 0, 1, 1]);
    }

    #[test]
    fn silhouette_examples() {
        let pts = m(4, 2, &[0.0, 0.0, 0.0, 0.01, 10.0, 10.0, 10.0, 10.01]);
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        assert!(s.mean > 0.9);
        // direct computation for point 0: a = 0.01, b = mean(d to (10,10), (10,10.01))
        let b = (200f64.sqrt() + (100.0 + 10.01f64 * 10.01).sqrt()) / 2.0;
        assert!((s.per_point[0] - (b - 0.01) / b).abs() < 1e-12);

        let same = m(4, 1, &[1.0; 4]);
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap().mean, 0.0);
        let singles = m(2, 1, &[0.0, 5.0]);
        assert_eq!(silhouette(&singles, &[0, 1]).unwrap().per_point, vec![0.0, 0.0]);
        assert_eq!(silhouette(&singles, &[1, 1]), Err(ClusterError::SingleCluster));
    }

    #[test]
    fn refresh_produces_stochastic_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random(&mut rng, 30, 3);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let mut state = ClusterState::seeded(&pts, &labels, 3, 0.1).unwrap();
        for _ in 0..5 {
            state.refresh(&pts).unwrap();
            for row in state.memberships.rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn refresh_can_raise_clustering_loss() {
        // Seeded one-hot memberships sit at zero loss; the softmax refresh
        // always leaves some mass on the far centroid.
        let pts = m(2, 1, &[0.0, 1.0]);
        let mut state = ClusterState::seeded(&pts, &[0, 1], 2, 0.1).unwrap();
        assert_eq!(cmeans_loss(&pts, &state.centroids, &state.memberships), 0.0);
        state.memberships = cmeans_membership(&pts, &state.centroids, state.gamma).unwrap();
        let far = 1.0 / (1.0 + 10f64.exp());
        assert!((state.memberships.data[1] - far).abs() < 1e-15);
        assert!((cmeans_loss(&pts, &state.centroids, &state.memberships) - far).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(logits in prop::collection::vec(-50.0f64..0.0, 1..6), shift in -100.0f64..100.0) {
            let mut a = vec![0.0; logits.len()];
            let mut b = vec![0.0; logits.len()];
            softmax_into(&logits, &mut a);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            softmax_into(&shifted, &mut b);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn kmeans_loss_never_increases(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(3..25);
            let k = rng.random_range(1..4);
            let pts = random(&mut rng, n, 2);
            let mut c = random(&mut rng, k, 2);
            let mut s = kmeans_assign(&pts, &c).unwrap();
            let mut last = kmeans_loss(&pts, &c, &s);
            for _ in 0..8 {
                c = kmeans_update(&pts, &s, &c).unwrap().0;
                let after_update = kmeans_loss(&pts, &c, &s);
                s = kmeans_assign(&pts, &c).unwrap();
                let after_assign = kmeans_loss(&pts, &c, &s);
                prop_assert!(after_update <= last + 1e-9);
                prop_assert!(after_assign <= after_update + 1e-9);
                last = after_assign;
            }
        }

        #[test]
        fn small_gamma_recovers_hard_assignment(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random(&mut rng, 12, 2);
            let c = random(&mut rng, 3, 2);
            let hard = kmeans_assign(&pts, &c).unwrap();
            let u = cmeans_membership(&pts, &c, 1e-6).unwrap();
            for (t, x) in pts.rows().enumerate() {
                let mut q: Vec<f64> = c.rows().map(|mu| { let d = squared_distance(x, mu); d / (1.0 + d) }).collect();
                q.sort_by(f64::total_cmp);
                // strict nearest centroid with a margin the limit can resolve
                if q[1] - q[0] > 1e-3 {
                    prop_assert!(u.row(t)[hard[t]] > 1.0 - 1e-9);
                }
            }
        }
    }
}
