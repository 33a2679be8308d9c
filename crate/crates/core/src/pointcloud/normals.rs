//! PCA normal estimation with minimum-spanning-tree orientation.
//!
//! Only used when an input cloud carries no normals.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, SymmetricEigen};
use ordered_float::OrderedFloat;

use super::{CloudError, KnnIndex, PointCloud};
use crate::geom::{dot, scale, Vec3};

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Neighborhoods whose covariance had rank below 2; their normal is +z.
    pub degenerate: usize,
}

pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate, CloudError> {
    let n = cloud.len();
    if k < 2 || n <= k {
        return Err(CloudError::InvalidArgument(format!(
            "normal estimation needs 2 <= K < n (K = {k}, n = {n})"
        )));
    }
    let index = KnnIndex::build(cloud.positions(), k)?;
    let neighbors = index.all_neighbors()?;
    let pts = cloud.positions();

    let mut normals = Vec::with_capacity(n);
    let mut degenerate = 0usize;
    for i in 0..n {
        let hood = std::iter::once(i).chain(neighbors[i * k..(i + 1) * k].iter().map(|&j| j as usize));
        let mut mean = [0.0; 3];
        for j in hood.clone() {
            for a in 0..3 {
                mean[a] += pts[j][a];
            }
        }
        let mean = scale(mean, 1.0 / (k + 1) as f64);
        let mut cov = Matrix3::<f64>::zeros();
        for j in hood {
            let d = [pts[j][0] - mean[0], pts[j][1] - mean[1], pts[j][2] - mean[2]];
            for r in 0..3 {
                for c in 0..3 {
                    cov[(r, c)] += d[r] * d[c];
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        if l2 <= 0.0 || l1 <= 1e-12 * l2 {
            degenerate += 1;
            normals.push([0.0, 0.0, 1.0]);
            continue;
        }
        let v = eig.eigenvectors.column(order[0]);
        let len = v.norm();
        normals.push([v[0] / len, v[1] / len, v[2] / len]);
    }
    if degenerate > 0 {
        log::warn!("{degenerate} degenerate neighborhoods during normal estimation; normals set to +z");
    }

    orient_by_mst(pts, &neighbors, k, &mut normals);
    let cloud = PointCloud::new(pts.to_vec(), normals)?;
    Ok(NormalEstimate { cloud, degenerate })
}

/// Propagates a consistent orientation along a minimum spanning tree of the
/// symmetrized KNN graph with edge cost `1 - |n_i · n_j|`. Each component is
/// rooted at its highest point, whose normal is turned to face +z.
fn orient_by_mst(pts: &[Vec3], neighbors: &[u32], k: usize, normals: &mut [Vec3]) {
    let n = pts.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for &j in &neighbors[i * k..(i + 1) * k] {
            let j = j as usize;
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }

    let mut visited = vec![false; n];
    let mut by_height: Vec<usize> = (0..n).collect();
    by_height.sort_by(|&a, &b| pts[b][2].total_cmp(&pts[a][2]).then(a.cmp(&b)));
    for root in by_height {
        if visited[root] {
            continue;
        }
        if normals[root][2] < 0.0 {
            normals[root] = scale(normals[root], -1.0);
        }
        // Prim's algorithm; heap entries are (cost, node, parent).
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((OrderedFloat(0.0), root, root)));
        while let Some(Reverse((_, node, parent))) = heap.pop() {
            if visited[node] {
                continue;
            }
            visited[node] = true;
            if node != parent && dot(normals[node], normals[parent]) < 0.0 {
                normals[node] = scale(normals[node], -1.0);
            }
            for &next in &adj[node] {
                if !visited[next] {
                    let cost = 1.0 - dot(normals[node], normals[next]).abs();
                    heap.push(Reverse((OrderedFloat(cost), next, node)));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_gives_z_normals() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f64 * 0.1 + 0.013 * (j % 3) as f64, j as f64 * 0.1, 0.0]);
            }
        }
        let cloud = PointCloud::new(pts.clone(), vec![[1.0, 0.0, 0.0]; pts.len()]).unwrap();
        let est = estimate_normals(&cloud, 8).unwrap();
        assert_eq!(est.degenerate, 0);
        for nrm in est.cloud.normals() {
            assert!((nrm[2].abs() - 1.0).abs() < 1e-9, "{nrm:?}");
        }
    }

    #[test]
    fn collinear_points_take_degenerate_path() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let cloud = PointCloud::new(pts, vec![[1.0, 0.0, 0.0]; 3]).unwrap();
        let est = estimate_normals(&cloud, 2).unwrap();
        assert_eq!(est.degenerate, 3);
        assert!(est.cloud.normals().iter().all(|n| *n == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let cloud = PointCloud::new(pts, vec![[1.0, 0.0, 0.0]; 3]).unwrap();
        assert!(estimate_normals(&cloud, 3).is_err());
    }
}
