//! Exact optimal transport for small uniform point clouds, used to check the
//! NPT surrogate against true Wasserstein distances.

use crate::bw_geometry::{bw_distance_sq, SpdMatrix};
use crate::error::{NptError, Result};

/// Largest cloud accepted by [`assignment_w2`]; the solver is O(N³).
pub const ASSIGNMENT_LIMIT: usize = 2000;

/// `N` points in `R^d`, each with mass `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    d: usize,
    points: Vec<f64>,
}

impl PointCloud {
    pub fn new(d: usize, points: Vec<f64>) -> Result<Self> {
        if d == 0 || points.is_empty() || points.len() % d != 0 {
            return Err(NptError::validation(format!(
                "point data of length {} does not form rows of width {d}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(NptError::validation("point cloud has non-finite coordinates"));
        }
        Ok(PointCloud { d, points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(NptError::validation("point rows have unequal lengths"));
        }
        Self::new(d, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.point(i)[j]).collect()
    }
}

/// Minimum-cost perfect matching on a dense square cost matrix (row-major).
/// Returns `assignment[row] = column`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // Shortest augmenting paths with row/column potentials; 1-based with a
    // virtual column 0 holding the row being inserted.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact W2 between equal-size uniform clouds via optimal assignment.
pub fn assignment_w2(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.len() != b.len() {
        return Err(NptError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(NptError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let n = a.len();
    if n > ASSIGNMENT_LIMIT {
        return Err(NptError::GuardExceeded {
            n,
            limit: ASSIGNMENT_LIMIT,
        });
    }
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cost.push(sq_dist(a.point(i), b.point(j)));
        }
    }
    let assignment = solve_assignment(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Exact univariate W2 between equal-size samples by sorted matching.
pub fn sorted_w2(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(NptError::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(NptError::validation("empty samples"));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.len() as f64).sqrt())
}

/// W2 between Gaussians: `√(‖m1 − m2‖² + B²(c1, c2))`.
pub fn gaussian_w2(m1: &[f64], c1: &SpdMatrix, m2: &[f64], c2: &SpdMatrix) -> Result<f64> {
    if m1.len() != m2.len() || m1.len() != c1.dim() {
        return Err(NptError::DimensionMismatch {
            expected: c1.dim(),
            got: m1.len().max(m2.len()),
        });
    }
    let mean_sq = sq_dist(m1, m2);
    Ok((mean_sq + bw_distance_sq(c1, c2)?).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize, d: usize) -> PointCloud {
        PointCloud::new(d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn brute_force_w2(a: &PointCloud, b: &PointCloud) -> f64 {
        fn permute(k: usize, perm: &mut Vec<usize>, a: &PointCloud, b: &PointCloud, best: &mut f64) {
            let n = perm.len();
            if k == n {
                let c: f64 = (0..n).map(|i| sq_dist(a.point(i), b.point(perm[i]))).sum();
                *best = best.min(c);
                return;
            }
            for i in k..n {
                perm.swap(k, i);
                permute(k + 1, perm, a, b, best);
                perm.swap(k, i);
            }
        }
        let mut perm: Vec<usize> = (0..a.len()).collect();
        let mut best = f64::INFINITY;
        permute(0, &mut perm, a, b, &mut best);
        (best / a.len() as f64).sqrt()
    }

    #[test]
    fn single_point_is_euclidean() {
        let a = PointCloud::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let b = PointCloud::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert!((assignment_w2(&a, &b).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 1..=6 {
            for d in 1..=3 {
                let a = random_cloud(&mut rng, n, d);
                let b = random_cloud(&mut rng, n, d);
                let fast = assignment_w2(&a, &b).unwrap();
                let slow = brute_force_w2(&a, &b);
                assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn univariate_matches_sorted() {
        assert!((sorted_w2(&[0.0, 2.0], &[3.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(sorted_w2(&[1.0, 5.0, 2.0], &[5.0, 2.0, 1.0]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let a = random_cloud(&mut rng, 40, 1);
        let b = random_cloud(&mut rng, 40, 1);
        let exact = assignment_w2(&a, &b).unwrap();
        let sorted = sorted_w2(&a.coordinate(0), &b.coordinate(0)).unwrap();
        assert!((exact - sorted).abs() < 1e-12);
    }

    #[test]
    fn size_checks() {
        let a = PointCloud::new(1, vec![0.0; 3]).unwrap();
        let b = PointCloud::new(1, vec![0.0; 4]).unwrap();
        assert!(assignment_w2(&a, &b).is_err());
        let big = PointCloud::new(1, vec![0.0; ASSIGNMENT_LIMIT + 1]).unwrap();
        assert!(matches!(
            assignment_w2(&big, &big),
            Err(NptError::GuardExceeded { .. })
        ));
        assert!(sorted_w2(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gaussian_closed_forms() {
        let i = SpdMatrix::identity(2);
        let w = gaussian_w2(&[0.0, 0.0], &i, &[3.0, 4.0], &i).unwrap();
        assert!((w - 5.0).abs() < 1e-14);
        let a = SpdMatrix::diagonal(&[1.0, 4.0, 0.25]).unwrap();
        let b = SpdMatrix::diagonal(&[9.0, 1.0, 1.0]).unwrap();
        let w = gaussian_w2(&[0.0; 3], &a, &[0.0; 3], &b).unwrap();
        let expected = ((1.0f64 - 3.0).powi(2) + (2.0f64 - 1.0).powi(2) + (0.5f64 - 1.0).powi(2)).sqrt();
        assert!((w - expected).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_cloud(&mut rng, 30, 2);
        let b = random_cloud(&mut rng, 30, 2);
        let mut rows: Vec<Vec<f64>> = (0..30).map(|i| b.point(i).to_vec()).collect();
        rows.rotate_left(7);
        let b2 = PointCloud::from_rows(&rows).unwrap();
        let w = assignment_w2(&a, &b).unwrap();
        assert!((w - assignment_w2(&a, &b2).unwrap()).abs() < 1e-12);
        assert!((w - assignment_w2(&b, &a).unwrap()).abs() < 1e-12);
    }
}
