//! Feature normalization and seeded k-means for instance clustering.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    /// Per-dimension min-max scaling to `[0, 1]`.
    #[default]
    Linear,
    /// Per-dimension z-scores.
    Standard,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::None => "none",
            Normalization::Linear => "linear",
            Normalization::Standard => "standard",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Normalization::None),
            "linear" => Ok(Normalization::Linear),
            "standard" => Ok(Normalization::Standard),
            _ => Err(Error::invalid(format!("unknown normalization `{s}`"))),
        }
    }
}

/// Normalizes each dimension independently. Constant dimensions map to 0.
pub fn normalize(points: &[Vec<f64>], mode: Normalization) -> Vec<Vec<f64>> {
    let mut out = points.to_vec();
    let Some(d) = points.first().map(Vec::len) else {
        return out;
    };
    if mode == Normalization::None {
        return out;
    }
    let n = points.len() as f64;
    for j in 0..d {
        let col = points.iter().map(|p| p[j]);
        let (a, b) = match mode {
            Normalization::Linear => {
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            }
            Normalization::Standard => {
                let mean = col.clone().sum::<f64>() / n;
                let var = col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
            Normalization::None => unreachable!(),
        };
        for p in out.iter_mut() {
            p[j] = if b > 0.0 { (p[j] - a) / b } else { 0.0 };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Objective after every assignment step.
    pub objective: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from a seeded k-means++ start. An empty cluster is
/// re-seeded at the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iterations: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || points.len() < k {
        return Err(Error::invalid(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if x < *di {
                    pick = i;
                    break;
                }
                x -= di;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }

    let mut assignment = vec![usize::MAX; points.len()];
    let mut objective = Vec::new();
    for _ in 0..max_iterations.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, dd) = nearest(p, &centroids);
            dists[i] = dd;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        // Re-seed empty clusters at the worst-served points.
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if assignment.contains(&c) {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| assignment.iter().filter(|&&a| a == assignment[i]).count() > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                assignment[i] = c;
                dists[i] = 0.0;
                *centroid = points[i].clone();
                changed = true;
            }
        }
        objective.push(dists.iter().sum());
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignment).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (j, x) in centroid.iter_mut().enumerate() {
                *x = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    Ok(Clustering {
        centroids,
        assignment,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seed::rng(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = if i % 2 == 0 { -5.0 } else { 5.0 };
            pts.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
            labels.push(i % 2);
        }
        (pts, labels)
    }

    fn purity(assignment: &[usize], labels: &[usize], k: usize) -> f64 {
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == c).collect();
            let majority = (0..k).map(|l| members.iter().filter(|&&i| labels[i] == l).count()).max().unwrap();
            total += majority as f64 / members.len() as f64;
        }
        total / k as f64
    }

    #[test]
    fn separated_blobs_are_recovered() {
        for s in 0..5 {
            let (pts, labels) = blobs(s);
            let c = kmeans(&pts, 2, 300, s).unwrap();
            assert_eq!(purity(&c.assignment, &labels, 2), 1.0);
        }
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = seed::rng(11);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect();
        for s in 0..5 {
            let c = kmeans(&pts, 6, 300, s).unwrap();
            for w in c.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", c.objective);
            }
        }
    }

    #[test]
    fn no_cluster_is_empty() {
        // Duplicated points would leave k-means++ with empty clusters.
        let pts = vec![vec![0.0]; 5].into_iter().chain(vec![vec![1.0]; 5]).collect::<Vec<_>>();
        let c = kmeans(&pts, 4, 300, 0).unwrap();
        for cl in 0..4 {
            assert!(!c.members(cl).is_empty());
        }
    }

    #[test]
    fn linear_on_normalized_data_is_identity() {
        let (pts, _) = blobs(3);
        let once = normalize(&pts, Normalization::Linear);
        let twice = normalize(&once, Normalization::Linear);
        for (a, b) in once.iter().zip(&twice) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let a = kmeans(&once, 2, 300, 1).unwrap();
        let b = kmeans(&normalize(&once, Normalization::None), 2, 300, 1).unwrap();
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn standard_scaling_has_unit_variance() {
        let (pts, _) = blobs(5);
        let z = normalize(&pts, Normalization::Standard);
        let mean: f64 = z.iter().map(|p| p[0]).sum::<f64>() / z.len() as f64;
        let var: f64 = z.iter().map(|p| (p[0] - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans(&[vec![0.0]], 2, 10, 0).is_err());
    }
}
