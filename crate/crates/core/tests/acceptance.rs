//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr (uncaptured) and the test fails if any criterion fails.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reachkit::dp::{dp_solve, GridSpec};
use reachkit::harness::record::without_column;
use reachkit::harness::{cmd_certificate, cmd_grid, cmd_solve, MethodTag, ProblemFile, ResultRecord, RunOptions};
use reachkit::mvn::mvn_box_probability;
use reachkit::objective::{reach_avoid_probability_mc, GaussianReachModel};
use reachkit::solvers::{maximize, SolverConfig};
use reachkit::{Error, GaussianVector, HyperRect, OpenLoopPolicy, QuadConfig, ReachAvoidQuery};

use common::{big_phi, dense_box_probability, gaussian_system, random_covariance};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, started: Instant, outcome: &Outcome) {
    let line = format!(
        "criterion {id} [{}] {name}: {} ({:.1} s)\n",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
    // Written to the raw handle so the line survives output capture.
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn problems_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn load(name: &str) -> ProblemFile {
    ProblemFile::load(&problems_dir().join(name)).unwrap()
}

fn analytic_boxes() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = QuadConfig::with_eps(1e-3);
    let mut worst = 0.0_f64;
    for d in [1usize, 2, 10, 100] {
        let sd: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let (mut lower, mut upper) = (Vec::new(), Vec::new());
        let mut want = 1.0;
        for i in 0..d {
            // Wide enough per axis that the product stays away from 0.
            let half = if d >= 10 { rng.random_range(2.5..3.5) } else { rng.random_range(0.3..1.5) } * sd[i];
            let c = mean[i] + rng.random_range(-0.3..0.3) * sd[i];
            lower.push(c - half);
            upper.push(c + half);
            want *= big_phi((c + half - mean[i]) / sd[i]) - big_phi((c - half - mean[i]) / sd[i]);
        }
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(d, sd.iter().map(|s| s * s)));
        let g = GaussianVector::new(DVector::from_vec(mean), cov).unwrap();
        let r = mvn_box_probability(&g, &HyperRect::new(lower, upper).unwrap(), &cfg).unwrap();
        worst = worst.max((r.p - want).abs());
    }
    let orthant = GaussianVector::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
    let region = HyperRect::new(vec![0.0, 0.0], vec![f64::INFINITY, f64::INFINITY]).unwrap();
    let p = mvn_box_probability(&orthant, &region, &cfg).unwrap().p;
    let orthant_err = (p - 1.0 / 3.0).abs();
    let elapsed = started.elapsed();
    Outcome {
        pass: worst <= 2e-3 && orthant_err <= 2e-3 && elapsed < Duration::from_secs(5),
        detail: format!("max diagonal error {worst:.2e}, orthant error {orthant_err:.2e}"),
    }
}

fn dense_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = QuadConfig::with_eps(1e-3);
    let mut worst = 0.0_f64;
    for case in 0..20 {
        let d = 1 + case % 3;
        let cov = random_covariance(&mut rng, d);
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let lower: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.5..3.0)).collect();
        let want = dense_box_probability(&mean, &cov, &lower, &upper);
        let g = GaussianVector::new(DVector::from_vec(mean), cov).unwrap();
        let r = mvn_box_probability(&g, &HyperRect::new(lower, upper).unwrap(), &cfg).unwrap();
        worst = worst.max((r.p - want).abs());
    }
    Outcome {
        pass: worst <= 5e-3 && started.elapsed() < Duration::from_secs(60),
        detail: format!("20 cases, max error {worst:.2e}"),
    }
}

struct Sweep {
    points: Vec<[ResultRecord; 3]>,
    elapsed: Duration,
    ds_fraction: f64,
    sl_fraction: f64,
}

fn run_sweep() -> Sweep {
    let started = Instant::now();
    let problem = load("double_integrator_sweep.json");
    let out = cmd_grid(&problem, &[MethodTag::Ds, MethodTag::Sl, MethodTag::Dp], &RunOptions::default()).unwrap();
    let fraction = |m: MethodTag| {
        out.summary
            .methods
            .iter()
            .find(|s| s.method == m)
            .and_then(|s| s.fraction_rel_err_below_30)
            .unwrap_or(0.0)
    };
    let (ds_fraction, sl_fraction) = (fraction(MethodTag::Ds), fraction(MethodTag::Sl));
    let mut points = Vec::new();
    for chunk in out.records.chunks(3) {
        let get = |m: MethodTag| chunk.iter().find(|r| r.method == m).unwrap().clone();
        points.push([get(MethodTag::Ds), get(MethodTag::Sl), get(MethodTag::Dp)]);
    }
    Sweep {
        points,
        elapsed: started.elapsed(),
        ds_fraction,
        sl_fraction,
    }
}

fn underapproximation(sweep: &Sweep) -> Outcome {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for [ds, sl, dp] in &sweep.points {
        for w in [ds, sl] {
            let gap = w.probability - dp.probability;
            worst = worst.max(gap);
            if gap > 0.02 {
                violations += 1;
            }
        }
    }
    Outcome {
        pass: sweep.points.len() >= 100 && violations == 0 && sweep.elapsed < Duration::from_secs(30 * 60),
        detail: format!(
            "{} points swept in {:.0} s, {violations} violations of W <= V + 0.02, max W - V = {worst:.4}",
            sweep.points.len(),
            sweep.elapsed.as_secs_f64()
        ),
    }
}

fn solver_quality(sweep: &Sweep) -> Outcome {
    let ok = sweep
        .points
        .iter()
        .filter(|[ds, sl, _]| ds.probability >= sl.probability - 2.0 * ds.err_est.max(sl.err_est))
        .count();
    let share = ok as f64 / sweep.points.len() as f64;
    Outcome {
        pass: share >= 0.9 && sweep.ds_fraction > sweep.sl_fraction,
        detail: format!(
            "DS >= SL - 2 err_est at {:.1}% of points; rel. error < 30%: DS {:.1}%, SL {:.1}%",
            100.0 * share,
            100.0 * sweep.ds_fraction,
            100.0 * sweep.sl_fraction
        ),
    }
}

fn random_query(rng: &mut ChaCha8Rng, n: usize, horizon: usize) -> ReachAvoidQuery {
    let a = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.15..0.15));
    let b = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-0.6..0.6));
    let cov = random_covariance(rng, n) * rng.random_range(0.01..0.05);
    let sys = gaussian_system(a, b, cov, HyperRect::cube(1, -1.0, 1.0).unwrap());
    let centre: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let half: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.6)).collect();
    let target = HyperRect::new(
        centre.iter().zip(&half).map(|(c, h)| c - h).collect(),
        centre.iter().zip(&half).map(|(c, h)| c + h).collect(),
    )
    .unwrap();
    let x0 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    ReachAvoidQuery::new(sys, HyperRect::cube(n, -2.0, 2.0).unwrap(), target, horizon, x0).unwrap()
}

fn cross_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let solver = SolverConfig {
        mesh_tol: 1e-3,
        ..SolverConfig::default()
    };
    let (mut queries, mut agree, mut skipped) = (0u64, 0, 0);
    while queries < 100 {
        let (n, horizon) = (rng.random_range(1..=3), rng.random_range(1..=5));
        let query = random_query(&mut rng, n, horizon);
        let seed = queries + skipped;
        let quad = QuadConfig {
            seed,
            initial_points: 100,
            ..QuadConfig::with_eps(1e-3)
        };
        let r = maximize(&query, &SolverConfig { seed, ..solver.clone() }, &quad).unwrap();
        // The normal-approximation half-width is meaningless near 0 and 1.
        if !(0.01..=0.99).contains(&r.p_star.p) {
            skipped += 1;
            continue;
        }
        queries += 1;
        let mc = reach_avoid_probability_mc(&query, &OpenLoopPolicy(r.u_star), 100_000, 1000 + seed).unwrap();
        if (r.p_star.p - mc.p_hat).abs() <= mc.half_width_95 + r.p_star.err_est {
            agree += 1;
        }
    }
    Outcome {
        pass: agree >= 95 && started.elapsed() < Duration::from_secs(600),
        detail: format!("{agree}/100 queries agree with Monte Carlo ({skipped} extreme-probability queries skipped)"),
    }
}

fn log_concavity() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = QuadConfig::with_eps(1e-5);
    let (mut pairs, mut holds) = (0, 0);
    while pairs < 200 {
        let horizon = rng.random_range(1..=4);
        let n = rng.random_range(1..=3);
        let query = random_query(&mut rng, n, horizon);
        let model = GaussianReachModel::new(&query).unwrap();
        let u: Vec<f64> = (0..horizon).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..horizon).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mid: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
        let eval = |x: Vec<f64>| model.probability(&OpenLoopPolicy(x), &cfg).unwrap();
        let (pu, pv, pm) = (eval(u), eval(v), eval(mid));
        if pu.p < 1e-3 || pv.p < 1e-3 {
            continue;
        }
        pairs += 1;
        let slack = pm.err_est / pm.p.max(1e-12) + 0.5 * (pu.err_est / pu.p + pv.err_est / pv.p) + 1e-9;
        if pm.p.ln() >= 0.5 * (pu.p.ln() + pv.p.ln()) - slack {
            holds += 1;
        }
    }
    Outcome {
        pass: holds as f64 >= 0.99 * pairs as f64 && started.elapsed() < Duration::from_secs(600),
        detail: format!("midpoint inequality holds for {holds}/{pairs} pairs"),
    }
}

fn scalability() -> Outcome {
    let started = Instant::now();
    let problem = load("chain40.json");
    let r = cmd_solve(&problem, MethodTag::Ds, &RunOptions::default()).unwrap();
    let elapsed = started.elapsed();
    let query = problem.query().unwrap();
    let spec = GridSpec::new(0.05, 0.1, HyperRect::cube(40, -0.5, 0.5).unwrap(), 0.05);
    let guarded = matches!(dp_solve(&query, &spec), Err(Error::GridTooLarge { .. }));
    let q4 = ReachAvoidQuery::new(
        gaussian_system(
            DMatrix::identity(4, 4),
            DMatrix::from_element(4, 1, 0.1),
            DMatrix::identity(4, 4) * 0.01,
            HyperRect::cube(1, -1.0, 1.0).unwrap(),
        ),
        HyperRect::cube(4, -1.0, 1.0).unwrap(),
        HyperRect::cube(4, -0.5, 0.5).unwrap(),
        2,
        vec![0.0; 4],
    )
    .unwrap();
    let coarse = GridSpec::new(0.5, 0.5, HyperRect::cube(4, -0.2, 0.2).unwrap(), 0.2);
    let refused_n4 = matches!(dp_solve(&q4, &coarse), Err(Error::DpDimension(4)));
    Outcome {
        pass: r.probability >= 0.99 && elapsed < Duration::from_secs(30 * 60) && guarded && refused_n4,
        detail: format!(
            "40-D p = {:.4} in {:.1} s; DP refused at n = 40: {guarded}, at n = 4: {refused_n4}",
            r.probability,
            elapsed.as_secs_f64()
        ),
    }
}

fn certificate() -> Outcome {
    let problem = load("integrator_1d.json");
    let rows = cmd_certificate(&problem, &[0.5, 0.01], &RunOptions::default()).unwrap();
    let at = |h: f64| rows.iter().find(|r| r.spacing == h && r.x0 == [0.0]).unwrap();
    let (coarse, fine) = (at(0.5), at(0.01));
    // x0 = 0 can steer the mean to 0.5 in a target [0.3, 0.9] with sd 0.2.
    let closed_form = big_phi(2.0) - big_phi(-1.0);
    let fine_close = (fine.dp_value - closed_form).abs() < 0.02 && (fine.ftbu - closed_form).abs() < 1e-3;
    Outcome {
        pass: !coarse.valid && fine.valid && fine_close,
        detail: format!(
            "closed form {closed_form:.4}, bound {:.4}; DP h=0.5: {:.4} (valid {}), h=0.01: {:.4} (valid {})",
            fine.ftbu, coarse.dp_value, coarse.valid, fine.dp_value, fine.valid
        ),
    }
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_reachkit"))
        .args(args)
        .env("REACHKIT_THREADS", "1")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn normalized(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let text = without_column(&text, "wall_time_s").unwrap_or(text);
    without_column(&text, "mean_wall_time_s").unwrap_or(text)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let problem = |name: &str| problems_dir().join(name).to_string_lossy().into_owned();
    let one_d = problem("integrator_1d.json");
    let single = dir.path().join("single.json");
    std::fs::write(
        &single,
        std::fs::read_to_string(&one_d).unwrap().replace(r#"{ "points": [[0.0], [-0.3], [0.6]] }"#, "[0.0]"),
    )
    .unwrap();
    let single = single.to_string_lossy().into_owned();

    let commands: Vec<(&str, Vec<String>)> = vec![
        ("solve", vec!["solve".into(), "--problem".into(), single.clone(), "--method".into(), "sl".into()]),
        ("grid", vec!["grid".into(), "--problem".into(), one_d.clone()]),
        ("bench", vec!["bench".into(), "--n".into(), "1,2".into(), "--points".into(), "2".into(), "--method".into(), "ds".into()]),
        ("certificate", vec!["certificate".into(), "--problem".into(), one_d.clone(), "--spacing".into(), "0.1".into()]),
        ("validate", vec!["validate".into(), "--problem".into(), single.clone(), "--samples".into(), "20000".into()]),
    ];
    let mut failed = Vec::new();
    for (name, args) in &commands {
        let bodies: Vec<String> = (0..2)
            .map(|k| {
                let out = dir.path().join(format!("{name}_{k}.csv"));
                let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
                let out_s = out.to_string_lossy().into_owned();
                a.extend(["--seed", "11", "--out", out_s.as_str()]);
                if !run_cli(&a) {
                    return format!("<{name} failed>");
                }
                normalized(&out)
            })
            .collect();
        if bodies[0].is_empty() || bodies[0] != bodies[1] || bodies[0].starts_with('<') {
            failed.push(*name);
        }
    }
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} commands reproduced byte-identical CSV bodies", commands.len())
        } else {
            format!("differing or failing commands: {failed:?}")
        },
    }
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    let mut check = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = f();
        report(id, name, started, &outcome);
        results.push((id, outcome.pass));
    };

    check(1, "quadrature vs analytic", &mut analytic_boxes);
    check(2, "quadrature vs dense oracle", &mut dense_oracle);
    let sweep = run_sweep();
    check(3, "open-loop bound below DP value", &mut || underapproximation(&sweep));
    check(4, "quadrature vs Monte Carlo", &mut cross_oracle);
    check(5, "log-concavity", &mut log_concavity);
    check(6, "40-D scalability and DP guard", &mut scalability);
    check(7, "grid-spacing certificate", &mut certificate);
    check(8, "direct search vs smooth local", &mut || solver_quality(&sweep));
    check(9, "determinism", &mut determinism);

    let failed: Vec<u32> = results.iter().filter(|(_, p)| !p).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
