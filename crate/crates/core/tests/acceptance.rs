//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass a substring argument to run only the
//! matching criteria, e.g. `cargo test --test acceptance -- golden`.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pwflow::diag::{energy_test, expected_velocity_residual, teacher_trajectory_divergence};
use pwflow::distill::{default_grid, make_pair_ota, make_pair_perflow};
use pwflow::exec::ExecMode;
use pwflow::experiment::{
    compare_methods, compare_schedulers, reproduce_tables, run_experiment, ExperimentConfig,
    ExperimentMethod, ExperimentReport, SchedulerComparisonConfig,
};
use pwflow::flow::{
    analytic_velocity, interpolate, ode_solve, AnalyticField, Field, FnField, MixtureSpec,
};
use pwflow::netcore::{backward, forward, init_params, Activation, MlpSpec};
use pwflow::Point;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn normal(r: &mut ChaCha8Rng) -> Point {
    [r.sample(StandardNormal), r.sample(StandardNormal)]
}

fn c1_golden_values() -> Verdict {
    let report = reproduce_tables();
    let failing: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.pass())
        .map(|c| c.to_string())
        .collect();
    verdict(
        report.all_pass(),
        if failing.is_empty() {
            format!("{} checks within tolerance", report.checks.len())
        } else {
            failing.join("; ")
        },
    )
}

fn c2_gradients() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let acts = [
        Activation::Tanh,
        Activation::Silu,
        Activation::Tanh,
        Activation::Silu,
        Activation::Tanh,
    ];
    for net in 0..10u64 {
        let depth = 2 + (net % 3) as usize;
        let mut widths = vec![3 + (net % 3) as usize];
        widths.extend((0..depth - 1).map(|i| 4 + ((net as usize + i) % 4)));
        widths.push(1 + (net % 2) as usize);
        let spec = MlpSpec::new(widths, acts[net as usize % acts.len()], net).unwrap();
        let mut params = init_params(&spec).unwrap();
        for v in params.values_mut() {
            *v += 0.1 * r.sample::<f64, _>(StandardNormal);
        }
        let x: Vec<f64> = (0..spec.input_dim())
            .map(|_| r.sample(StandardNormal))
            .collect();
        let w: Vec<f64> = (0..spec.output_dim())
            .map(|_| r.sample(StandardNormal))
            .collect();
        let f = |p: &pwflow::netcore::MlpParams| {
            forward(p, &x)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (grads, _) = backward(&params, &x, &w).unwrap();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut up = params.clone();
            up.values_mut()[i] += h;
            let mut dn = params.clone();
            dn.values_mut()[i] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    verdict(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over 10 nets (limit 1e-5)"),
    )
}

/// Self-normalised importance sampling of the posterior mean with the data
/// law as proposal; returns the velocity and its per-coordinate standard
/// error.
fn mc_velocity(
    spec: &MixtureSpec,
    z: Point,
    sigma: f64,
    n: usize,
    r: &mut ChaCha8Rng,
) -> (Point, Point) {
    let xs: Vec<Point> = (0..n).map(|_| spec.sample_one(r)).collect();
    let a = 1.0 - sigma;
    let logw: Vec<f64> = xs
        .iter()
        .map(|x| -0.5 * ((z[0] - a * x[0]).powi(2) + (z[1] - a * x[1]).powi(2)) / (sigma * sigma))
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let sw: f64 = w.iter().sum();
    let mut v = [0.0; 2];
    let mut se = [0.0; 2];
    for c in 0..2 {
        let m = w.iter().zip(&xs).map(|(w, x)| w * x[c]).sum::<f64>() / sw;
        let var = w
            .iter()
            .zip(&xs)
            .map(|(w, x)| (w / sw).powi(2) * (x[c] - m).powi(2))
            .sum::<f64>();
        v[c] = (z[c] - m) / sigma;
        se[c] = var.sqrt() / sigma;
    }
    (v, se)
}

fn c3_analytic_field() -> Verdict {
    let spec = MixtureSpec::benchmark();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let z = [r.random_range(-3.0..3.0), r.random_range(-2.0..2.0)];
        let sigma = r.random_range(0.2..1.0);
        let v = analytic_velocity(&spec, z, sigma).unwrap();
        let (mc, se) = mc_velocity(&spec, z, sigma, 200_000, &mut r);
        for c in 0..2 {
            worst = worst.max((v[c] - mc[c]).abs() / se[c]);
        }
    }
    verdict(
        worst <= 3.0,
        format!("largest deviation {worst:.2} standard errors over 20 probes (limit 3)"),
    )
}

fn c4_marginal_preservation() -> Verdict {
    let spec = MixtureSpec::benchmark();
    let field = AnalyticField::new(spec.clone()).unwrap();
    let n = 4096;
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let pushed: Vec<Point> = (0..n)
        .map(|_| ode_solve(&field, normal(&mut r), 1.0, 0.5, 512).unwrap().0)
        .collect();
    let direct: Vec<Point> = (0..n)
        .map(|_| {
            let x = spec.sample_one(&mut r);
            interpolate(x, normal(&mut r), 0.5).unwrap()
        })
        .collect();
    let t = energy_test(&pushed, &direct, 1000, 4, ExecMode::auto()).unwrap();
    verdict(
        t.p_value > 0.01,
        format!(
            "energy distance {:.2e}, permutation p = {:.3} (reject below 0.01)",
            t.statistic, t.p_value
        ),
    )
}

fn c5_first_moment() -> Verdict {
    let spec = MixtureSpec::benchmark();
    let field = AnalyticField::new(spec.clone()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, s) in [0.25, 0.5, 0.75].into_iter().enumerate() {
        let res = expected_velocity_residual(&field, &spec, s, 100_000, 50 + i as u64).unwrap();
        ok &= res.norm <= 3.0 * res.se;
        parts.push(format!("σ={s}: {:.1} se", res.norm / res.se));
    }
    let shifted = FnField(|z: Point, s: f64| {
        let v = field.velocity(z, s);
        [v[0] + 0.5, v[1]]
    });
    let res = expected_velocity_residual(&shifted, &spec, 0.5, 100_000, 60).unwrap();
    ok &= (res.norm - 0.5).abs() <= 3.0 * res.se;
    parts.push(format!(
        "shifted field residual {:.4} (se {:.1e})",
        res.norm, res.se
    ));
    verdict(ok, parts.join(", "))
}

fn c6_trajectory_mismatch() -> Verdict {
    let grid = default_grid(4, 3.0).unwrap();
    let exec = ExecMode::auto();
    let mix = AnalyticField::new(MixtureSpec::benchmark()).unwrap();
    let d = teacher_trajectory_divergence(&mix, &grid, 1024, 6, exec).unwrap();
    let means: Vec<f64> = d.iter().map(|b| b.mean).collect();
    let increasing = means.windows(2).all(|w| w[1] > w[0]);
    let point = AnalyticField::new(MixtureSpec::point_mass([1.5, -0.5])).unwrap();
    let dp = teacher_trajectory_divergence(&point, &grid, 1024, 6, exec).unwrap();
    let point_max = dp.iter().map(|b| b.mean).fold(0.0, f64::max);
    let bounds: Vec<String> = d
        .iter()
        .map(|b| format!("t={:.3}: {:.4}", b.boundary, b.mean))
        .collect();
    verdict(
        means.len() == 3 && means[1] > 0.05 && increasing && point_max <= 1e-9,
        format!(
            "mixture {} ; point-mass max {point_max:.1e}",
            bounds.join(", ")
        ),
    )
}

fn c7_rectified_equivalence() -> Verdict {
    let mu = [0.7, -1.2];
    let teacher = AnalyticField::new(MixtureSpec::point_mass(mu)).unwrap();
    let grid = default_grid(4, 3.0).unwrap();
    let mut total = 0.0;
    let mut count = 0;
    for seed in 0..1024u64 {
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        let eps = normal(&mut noise);
        for k in 1..=grid.stages() {
            let mut ra = ChaCha8Rng::seed_from_u64(seed);
            let mut rb = ChaCha8Rng::seed_from_u64(seed);
            let a = make_pair_perflow(&teacher, mu, eps, k, &grid, &mut ra).unwrap();
            let b = make_pair_ota(&teacher, eps, k, &grid, &mut rb).unwrap();
            total += ((a.start[0] - b.start[0]).powi(2) + (a.start[1] - b.start[1]).powi(2)).sqrt();
            count += 1;
        }
    }
    let mean = total / count as f64;
    verdict(
        mean <= 1e-9,
        format!("mean start discrepancy {mean:.1e} over 1024 seeds x 4 stages"),
    )
}

fn experiment(method: ExperimentMethod, dir: &Path, seeds: Vec<u64>) -> ExperimentReport {
    let cfg = ExperimentConfig {
        method,
        seeds,
        output: dir.join(method.to_string()),
        ..ExperimentConfig::default()
    };
    run_experiment(&cfg).unwrap()
}

fn interstage_at(report: &ExperimentReport, boundary: f64) -> f64 {
    let vals: Vec<f64> = report
        .seeds
        .iter()
        .map(|s| {
            s.mismatch
                .as_ref()
                .unwrap()
                .rows
                .iter()
                .find(|r| (r.boundary - boundary).abs() < 1e-12)
                .unwrap()
                .energy_distance
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

struct Runs {
    dir: tempfile::TempDir,
    perflow: Option<ExperimentReport>,
    ota: Option<ExperimentReport>,
}

fn c8_ota_beats_perflow(runs: &mut Runs) -> Verdict {
    let seeds: Vec<u64> = (0..5).collect();
    let perflow = experiment(ExperimentMethod::Perflow, runs.dir.path(), seeds.clone());
    let ota = experiment(ExperimentMethod::Ota, runs.dir.path(), seeds);
    let cmp = compare_methods(&perflow.to_json(), &ota.to_json()).unwrap();
    let wins = cmp.b_wins_or_ties();
    let t2 = default_grid(4, 3.0).unwrap().t(2);
    let (dp, dot) = (interstage_at(&perflow, t2), interstage_at(&ota, t2));
    let per_seed: Vec<String> = cmp
        .rows
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.w2_a, r.w2_b))
        .collect();
    runs.perflow = Some(perflow);
    runs.ota = Some(ota);
    verdict(
        wins >= 4 && dot < dp,
        format!(
            "W2 perflow/ota per seed [{}], ota <= perflow on {wins}/5; inter-stage energy at t_2={t2:.3}: perflow {dp:.2e}, ota {dot:.2e}",
            per_seed.join(", ")
        ),
    )
}

fn c9_adversarial(runs: &mut Runs) -> Verdict {
    let Some(ota) = runs.ota.clone() else {
        let seeds: Vec<u64> = (0..5).collect();
        runs.ota = Some(experiment(ExperimentMethod::Ota, runs.dir.path(), seeds));
        return c9_adversarial(runs);
    };
    let adv = experiment(ExperimentMethod::OtaAdv, runs.dir.path(), (0..5).collect());
    let cmp = compare_methods(&ota.to_json(), &adv.to_json()).unwrap();
    let wins = cmp.b_wins_or_ties();
    let worst_ratio = cmp.rows.iter().map(|r| r.w2_b / r.w2_a).fold(0.0, f64::max);
    let warmup = ExperimentConfig::default().adv.warmup;
    let mut d_min = f64::INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for seed in 0..5 {
        let csv = std::fs::read_to_string(
            runs.dir
                .path()
                .join(format!("ota+adv/seed-{seed}/losses.csv")),
        )
        .unwrap();
        for line in csv.lines().skip(1 + warmup) {
            let d: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            d_min = d_min.min(d);
            d_max = d_max.max(d);
        }
    }
    let per_seed: Vec<String> = cmp
        .rows
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.w2_a, r.w2_b))
        .collect();
    verdict(
        wins >= 3 && worst_ratio <= 1.1 && d_min >= 0.0 && d_max <= 4.0,
        format!(
            "W2 ota/ota+adv per seed [{}], adv <= ota on {wins}/5, worst ratio {worst_ratio:.3}; hinge loss after warmup in [{d_min:.3}, {d_max:.3}]",
            per_seed.join(", ")
        ),
    )
}

fn c10_scheduler_ablation() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for shift in [1.0, 3.0] {
        let cfg = SchedulerComparisonConfig {
            shift,
            ..Default::default()
        };
        let field = AnalyticField::new(cfg.data.clone()).unwrap();
        let c = compare_schedulers(&field, &cfg).unwrap();
        let wins = c.improved_wins(4);
        let (diff, band) = (c.mean_abs_difference(32), c.noise_band(32));
        ok &= wins >= 4 && diff < band;
        parts.push(format!(
            "shift {shift}: N=4 improved wins {wins}/5, N=32 |diff| {diff:.2e} vs band {band:.2e}"
        ));
    }
    verdict(ok, parts.join("; "))
}

fn c11_determinism(runs: &mut Runs) -> Verdict {
    if runs.perflow.is_none() {
        runs.perflow = Some(experiment(
            ExperimentMethod::Perflow,
            runs.dir.path(),
            vec![0],
        ));
    }
    let again = runs.dir.path().join("repeat");
    experiment(ExperimentMethod::Perflow, &again, vec![0]);
    let mut same = true;
    let mut files = Vec::new();
    for name in ["losses.csv", "mismatch.csv"] {
        let a = std::fs::read(runs.dir.path().join("perflow/seed-0").join(name)).unwrap();
        let b = std::fs::read(again.join("perflow/seed-0").join(name)).unwrap();
        same &= a == b;
        files.push(format!(
            "{name} {}",
            if a == b { "identical" } else { "differs" }
        ));
    }
    verdict(same, files.join(", "))
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut runs = Runs {
        dir: tempfile::tempdir().unwrap(),
        perflow: None,
        ota: None,
    };
    type Check<'a> = Box<dyn FnMut(&mut Runs) -> Verdict + 'a>;
    let criteria: Vec<(u32, &str, Duration, Check)> = vec![
        (
            1,
            "scheduler golden values",
            Duration::from_secs(1),
            Box::new(|_| c1_golden_values()),
        ),
        (
            2,
            "gradient correctness",
            Duration::from_secs(10),
            Box::new(|_| c2_gradients()),
        ),
        (
            3,
            "analytic field vs Monte-Carlo posterior",
            Duration::from_secs(60),
            Box::new(|_| c3_analytic_field()),
        ),
        (
            4,
            "marginal preservation",
            Duration::from_secs(120),
            Box::new(|_| c4_marginal_preservation()),
        ),
        (
            5,
            "first-moment law",
            Duration::from_secs(60),
            Box::new(|_| c5_first_moment()),
        ),
        (
            6,
            "teacher trajectory mismatch",
            Duration::from_secs(120),
            Box::new(|_| c6_trajectory_mismatch()),
        ),
        (
            7,
            "rectified-teacher equivalence",
            Duration::from_secs(60),
            Box::new(|_| c7_rectified_equivalence()),
        ),
        (
            8,
            "OTA beats PeRFlow",
            Duration::from_secs(20 * 60),
            Box::new(c8_ota_beats_perflow),
        ),
        (
            9,
            "adversarial component",
            Duration::from_secs(40 * 60),
            Box::new(c9_adversarial),
        ),
        (
            10,
            "scheduler ablation direction",
            Duration::from_secs(5 * 60),
            Box::new(|_| c10_scheduler_ablation()),
        ),
        (
            11,
            "determinism",
            Duration::from_secs(5 * 60),
            Box::new(c11_determinism),
        ),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, budget, mut check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = check(&mut runs);
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1} s, budget {} s{}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
