use crate::error::{domain, Result};
use crate::sched::euler;
use crate::Point;

use super::Field;

/// `(σ, z)` pairs visited by one solve, σ strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<(f64, Point)>,
}

impl Trajectory {
    pub fn endpoint(&self) -> Point {
        self.points.last().expect("trajectory is never empty").1
    }

    /// `σ x y` rows for plotting.
    pub fn to_rows(&self) -> String {
        self.points
            .iter()
            .map(|(s, z)| format!("{s:?} {:?} {:?}\n", z[0], z[1]))
            .collect()
    }
}

fn check_range(sigma_from: f64, sigma_to: f64, n_substeps: usize) -> Result<()> {
    if !(sigma_to < sigma_from) || sigma_to < 0.0 || sigma_from > 1.0 {
        return domain(format!("invalid solve range {sigma_from} -> {sigma_to}"));
    }
    if n_substeps == 0 {
        return domain("n_substeps must be at least 1");
    }
    Ok(())
}

/// The `i`-th of `n` equal-width steps from `from` to `to`; the last point is
/// exactly `to`. Any two callers splitting the same interval get the same
/// bits, which is what makes stage-wise and continuous solves agree.
#[inline]
pub(crate) fn grid_point(from: f64, to: f64, i: usize, n: usize) -> f64 {
    if i == n {
        to
    } else {
        from + (to - from) * (i as f64 / n as f64)
    }
}

/// Euler integration with `n_substeps` equal steps, returning the endpoint and
/// the visited states.
pub fn ode_solve<F: Field + ?Sized>(
    field: &F,
    z: Point,
    sigma_from: f64,
    sigma_to: f64,
    n_substeps: usize,
) -> Result<(Point, Trajectory)> {
    check_range(sigma_from, sigma_to, n_substeps)?;
    let mut points = Vec::with_capacity(n_substeps + 1);
    points.push((sigma_from, z));
    let mut cur = z;
    for i in 0..n_substeps {
        let s0 = grid_point(sigma_from, sigma_to, i, n_substeps);
        let s1 = grid_point(sigma_from, sigma_to, i + 1, n_substeps);
        cur = euler(cur, field.velocity(cur, s0), s1 - s0);
        points.push((s1, cur));
    }
    Ok((cur, Trajectory { points }))
}

/// Same as [`ode_solve`] without recording the trajectory.
pub fn solve_endpoint<F: Field + ?Sized>(
    field: &F,
    z: Point,
    sigma_from: f64,
    sigma_to: f64,
    n_substeps: usize,
) -> Result<Point> {
    check_range(sigma_from, sigma_to, n_substeps)?;
    Ok(solve_unchecked(field, z, sigma_from, sigma_to, n_substeps))
}

pub(crate) fn solve_unchecked<F: Field + ?Sized>(
    field: &F,
    z: Point,
    sigma_from: f64,
    sigma_to: f64,
    n_substeps: usize,
) -> Point {
    let mut cur = z;
    for i in 0..n_substeps {
        let s0 = grid_point(sigma_from, sigma_to, i, n_substeps);
        let s1 = grid_point(sigma_from, sigma_to, i + 1, n_substeps);
        cur = euler(cur, field.velocity(cur, s0), s1 - s0);
    }
    cur
}

/// One Euler step between each pair of consecutive noise levels.
pub fn solve_on_sigmas<F: Field + ?Sized>(field: &F, z: Point, sigmas: &[f64]) -> Result<Point> {
    if sigmas.len() < 2 || sigmas.windows(2).any(|w| !(w[1] < w[0])) {
        return domain("sigma sequence must be strictly decreasing with at least two entries");
    }
    Ok(sigmas.windows(2).fold(z, |cur, w| {
        euler(cur, field.velocity(cur, w[0]), w[1] - w[0])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{AnalyticField, FnField, MixtureSpec};
    use crate::sched::step_euler;

    #[test]
    fn straight_field_is_euler_exact() {
        let mu = [1.0, -0.5];
        let f = AnalyticField::new(MixtureSpec::point_mass(mu)).unwrap();
        let eps = [0.3, 0.9];
        for n in [1, 3, 17] {
            let (end, traj) = ode_solve(&f, eps, 1.0, 0.0, n).unwrap();
            assert!((end[0] - mu[0]).abs() < 1e-12 && (end[1] - mu[1]).abs() < 1e-12);
            assert_eq!(traj.points.len(), n + 1);
            assert!(traj.points.windows(2).all(|w| w[1].0 < w[0].0));
        }
    }

    #[test]
    fn single_substep_is_one_euler_step() {
        let f = FnField(|z: Point, s: f64| [z[1] * s, -z[0]]);
        let z = [0.4, -0.2];
        let (end, _) = ode_solve(&f, z, 0.6, 0.35, 1).unwrap();
        assert_eq!(end, step_euler(z, f.velocity(z, 0.6), 0.6, 0.35).unwrap());
    }

    #[test]
    fn invalid_ranges() {
        let f = FnField(|_: Point, _: f64| [0.0, 0.0]);
        assert!(ode_solve(&f, [0.0; 2], 0.5, 0.5, 4).is_err());
        assert!(ode_solve(&f, [0.0; 2], 0.5, 0.7, 4).is_err());
        assert!(ode_solve(&f, [0.0; 2], 0.5, -0.1, 4).is_err());
        assert!(ode_solve(&f, [0.0; 2], 1.0, 0.0, 0).is_err());
        assert!(solve_on_sigmas(&f, [0.0; 2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn first_order_self_convergence() {
        let f = AnalyticField::new(MixtureSpec::benchmark()).unwrap();
        let starts = [[0.1, 0.4], [-0.7, 1.2], [0.05, -0.3], [1.5, 0.2]];
        let mut e64 = 0.0;
        let mut e256 = 0.0;
        for z in starts {
            let r = solve_endpoint(&f, z, 1.0, 0.0, 8192).unwrap();
            let a = solve_endpoint(&f, z, 1.0, 0.0, 64).unwrap();
            let b = solve_endpoint(&f, z, 1.0, 0.0, 256).unwrap();
            e64 += ((a[0] - r[0]).powi(2) + (a[1] - r[1]).powi(2)).sqrt();
            e256 += ((b[0] - r[0]).powi(2) + (b[1] - r[1]).powi(2)).sqrt();
        }
        assert!(e64 > e256);
        // Against an 8192-step reference a first-order method shows
        // e64/e256 ≈ (128 − 1)/(32 − 1) ≈ 4.10, so check the observed order.
        let order = (e64 / e256).ln() / 4f64.ln();
        assert!(
            (0.9..=1.1).contains(&order),
            "e64={e64} e256={e256} order={order}"
        );
    }
}
