use crate::error::{domain, Result};
use crate::Point;

/// Largest point set accepted by [`w2_exact_small`].
pub const W2_MAX_POINTS: usize = 256;

/// Exact 2-Wasserstein distance between two equal-size point sets: the square
/// root of the mean squared distance under the optimal perfect matching.
pub fn w2_exact_small(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.len() != b.len() {
        return domain(format!(
            "point sets differ in size: {} vs {}",
            a.len(),
            b.len()
        ));
    }
    if a.is_empty() || a.len() > W2_MAX_POINTS {
        return domain(format!(
            "w2_exact_small needs 1..={W2_MAX_POINTS} points, got {}",
            a.len()
        ));
    }
    let n = a.len();
    let cost: Vec<f64> = a
        .iter()
        .flat_map(|p| {
            b.iter()
                .map(move |q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        })
        .collect();
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Minimum-cost perfect matching on a dense `n × n` cost matrix (row-major).
/// Returns the column assigned to each row. Shortest augmenting paths with
/// potentials, O(n³).
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based rows/columns; column 0 is a virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{normal_point, rng};
    use itertools::Itertools;
    use proptest::prelude::*;

    fn brute_w2(a: &[Point], b: &[Point]) -> f64 {
        let n = a.len();
        let best = (0..n)
            .permutations(n)
            .map(|perm| {
                perm.iter()
                    .enumerate()
                    .map(|(i, &j)| (a[i][0] - b[j][0]).powi(2) + (a[i][1] - b[j][1]).powi(2))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        (best / n as f64).sqrt()
    }

    #[test]
    fn simple_cases() {
        let a = vec![[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]];
        assert_eq!(w2_exact_small(&a, &a).unwrap(), 0.0);
        assert_eq!(w2_exact_small(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap(), 5.0);
        assert!(w2_exact_small(&a, &a[..2]).is_err());
        assert!(w2_exact_small(&[], &[]).is_err());
        let big = vec![[0.0; 2]; 257];
        assert!(w2_exact_small(&big, &big).is_err());
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut r = rng(31, 0);
        for n in 1..=6 {
            for _ in 0..20 {
                let a: Vec<Point> = (0..n).map(|_| normal_point(&mut r)).collect();
                let b: Vec<Point> = (0..n).map(|_| normal_point(&mut r)).collect();
                let got = w2_exact_small(&a, &b).unwrap();
                let want = brute_w2(&a, &b);
                assert!((got - want).abs() <= 1e-12, "n={n}: {got} vs {want}");
            }
        }
    }

    fn pts(n: usize) -> impl Strategy<Value = Vec<Point>> {
        proptest::collection::vec(proptest::array::uniform2(-5.0f64..5.0), n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn symmetric_and_triangle((a, b, c) in (1usize..24).prop_flat_map(|n| (pts(n), pts(n), pts(n)))) {
            let ab = w2_exact_small(&a, &b).unwrap();
            let ba = w2_exact_small(&b, &a).unwrap();
            let bc = w2_exact_small(&b, &c).unwrap();
            let ac = w2_exact_small(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
