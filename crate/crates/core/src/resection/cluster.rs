use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ResectError;
use crate::geometry::Vec3;

/// Partition of database cameras into spatial clusters. Point sets overlap:
/// a point belongs to every cluster with a camera that sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec3>,
    pub points: Vec<BTreeSet<usize>>,
}

impl ClusterIndex {
    /// Within-cluster sum of squared distances to the centroids.
    pub fn sse(&self, positions: &[Vec3]) -> f64 {
        sse(positions, &self.assignments, self.k)
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == cluster).collect()
    }
}

/// Sum of squared distances of each position to the mean of its cluster.
pub fn sse(positions: &[Vec3], assignments: &[usize], k: usize) -> f64 {
    let centroids = centroids_of(positions, assignments, k, &vec![Vec3::zeros(); k]);
    positions.iter().zip(assignments).map(|(p, &a)| (p - centroids[a]).norm_squared()).sum()
}

/// k-means over camera positions: k-means++ seeding, then Lloyd iterations
/// until the assignments stop changing. `visibility[i]` lists the point ids
/// seen by camera `i`; pass an empty slice to skip point sets.
pub fn cluster_cameras(positions: &[Vec3], visibility: &[Vec<usize>], k: usize, seed: u64) -> Result<ClusterIndex, ResectError> {
    if k == 0 {
        return Err(ResectError::InvalidParameter("k must be positive".into()));
    }
    if positions.len() < k {
        return Err(ResectError::TooFewCameras { k, got: positions.len() });
    }
    if !visibility.is_empty() && visibility.len() != positions.len() {
        return Err(ResectError::InvalidParameter(format!(
            "{} visibility lists for {} cameras",
            visibility.len(),
            positions.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(positions, k, &mut rng);
    let mut assignments = assign(positions, &centroids);
    for _ in 0..1000 {
        centroids = centroids_of(positions, &assignments, k, &centroids);
        let next = assign(positions, &centroids);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    centroids = centroids_of(positions, &assignments, k, &centroids);

    let mut points = vec![BTreeSet::new(); k];
    for (cam, seen) in visibility.iter().enumerate() {
        points[assignments[cam]].extend(seen.iter().copied());
    }
    Ok(ClusterIndex { k, assignments, centroids, points })
}

fn seed_plus_plus(positions: &[Vec3], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut centroids = vec![positions[rng.random_range(0..positions.len())]];
    let mut d2: Vec<f64> = positions.iter().map(|p| (p - centroids[0]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = positions.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..positions.len())
        };
        let c = positions[pick];
        for (d, p) in d2.iter_mut().zip(positions) {
            *d = d.min((p - c).norm_squared());
        }
        centroids.push(c);
    }
    centroids
}

fn assign(positions: &[Vec3], centroids: &[Vec3]) -> Vec<usize> {
    positions
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = (p - c).norm_squared();
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Cluster means; an empty cluster keeps its previous centroid.
fn centroids_of(positions: &[Vec3], assignments: &[usize], k: usize, previous: &[Vec3]) -> Vec<Vec3> {
    let mut sum = vec![Vec3::zeros(); k];
    let mut count = vec![0usize; k];
    for (p, &a) in positions.iter().zip(assignments) {
        sum[a] += p;
        count[a] += 1;
    }
    (0..k).map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { previous[j] }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 3.0, 0.0)];
        let c = cluster_cameras(&pts, &[], 1, 5).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 0]);
        assert!((c.centroids[0] - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn too_few_cameras() {
        assert!(cluster_cameras(&[Vec3::zeros()], &[], 2, 0).is_err());
    }

    #[test]
    fn points_follow_visibility() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::new(50.0, 0.0, 0.0)];
        let vis = vec![vec![1, 2], vec![2, 3], vec![3, 4]];
        let c = cluster_cameras(&pts, &vis, 2, 1).unwrap();
        let a = c.assignments[0];
        assert_eq!(c.assignments[1], a);
        assert_ne!(c.assignments[2], a);
        assert_eq!(c.points[a].iter().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
        // Point 3 is shared between the two clusters.
        assert!(c.points[c.assignments[2]].contains(&3));
    }
}
