use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::exec::ExecMode;
use crate::training::rng;
use crate::Point;

/// Energy distance `2·E‖a−b‖ − E‖a−a'‖ − E‖b−b'‖`, averaging over all
/// ordered pairs (V-statistic, so it is never negative).
///
/// Both sets are sorted before summation, which makes the result exactly 0
/// for any two orderings of the same multiset.
pub fn energy_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return domain("energy_distance needs nonempty point sets");
    }
    let (a, b) = (sorted(a), sorted(b));
    let cross = mean_pair_distance(&a, &b);
    let within_a = mean_pair_distance(&a, &a);
    let within_b = mean_pair_distance(&b, &b);
    Ok(2.0 * cross - within_a - within_b)
}

fn sorted(p: &[Point]) -> Vec<Point> {
    let mut v = p.to_vec();
    v.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
    v
}

fn mean_pair_distance(a: &[Point], b: &[Point]) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut row = 0.0;
        for q in b {
            row += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        }
        total += row;
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// Result of a two-sample permutation test on the energy distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Permutation test of "A and B come from the same law". The p-value is
/// `(1 + #{permuted ≥ observed}) / (1 + permutations)`.
///
/// Pair distances inside the test are accumulated in single precision for
/// speed; the observed statistic is computed the same way as the permuted
/// ones, so the comparison is consistent.
pub fn energy_test(
    a: &[Point],
    b: &[Point],
    permutations: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<EnergyTest> {
    if a.is_empty() || b.is_empty() {
        return domain("energy_test needs nonempty point sets");
    }
    if permutations == 0 {
        return domain("energy_test needs at least one permutation");
    }
    let pooled: Vec<[f32; 2]> = a
        .iter()
        .chain(b)
        .map(|p| [p[0] as f32, p[1] as f32])
        .collect();
    let n = a.len();
    let all: Vec<usize> = (0..pooled.len()).collect();
    let total = within_sum(&pooled, &all, exec);
    let stat = |idx: &[usize]| {
        let (ia, ib) = idx.split_at(n);
        split_statistic(
            total,
            within_sum(&pooled, ia, exec),
            within_sum(&pooled, ib, exec),
            n,
            ib.len(),
        )
    };
    let observed = stat(&all);

    let mut r = rng(seed, 0);
    let mut idx = all.clone();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        idx.shuffle(&mut r);
        if stat(&idx) >= observed {
            exceed += 1;
        }
    }
    Ok(EnergyTest {
        statistic: energy_distance(a, b)?,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    })
}

/// Energy statistic from the pooled sum over unordered pairs and the two
/// within-group sums.
fn split_statistic(total: f64, wa: f64, wb: f64, n: usize, m: usize) -> f64 {
    let cross = total - wa - wb;
    let (n, m) = (n as f64, m as f64);
    2.0 * cross / (n * m) - 2.0 * wa / (n * n) - 2.0 * wb / (m * m)
}

/// Sum of distances over unordered pairs of the selected points.
fn within_sum(pool: &[[f32; 2]], idx: &[usize], exec: ExecMode) -> f64 {
    let xs: Vec<f32> = idx.iter().map(|&i| pool[i][0]).collect();
    let ys: Vec<f32> = idx.iter().map(|&i| pool[i][1]).collect();
    let rows = exec.map_range(xs.len(), |i| {
        row_sum(xs[i], ys[i], &xs[i + 1..], &ys[i + 1..]) as f64
    });
    rows.iter().sum()
}

/// `Σ_j ‖(x, y) − (xs_j, ys_j)‖` with eight independent partial sums, a
/// fixed summation order that the compiler can keep in vector registers.
fn row_sum(x: f32, y: f32, xs: &[f32], ys: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let mut cx = xs.chunks_exact(8);
    let mut cy = ys.chunks_exact(8);
    for (a, b) in (&mut cx).zip(&mut cy) {
        for l in 0..8 {
            let (dx, dy) = (x - a[l], y - b[l]);
            acc[l] += (dx * dx + dy * dy).sqrt();
        }
    }
    let mut row: f32 = acc.iter().sum();
    for (u, v) in cx.remainder().iter().zip(cy.remainder()) {
        row += ((x - u) * (x - u) + (y - v) * (y - v)).sqrt();
    }
    row
}
