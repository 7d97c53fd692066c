//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a non-zero status if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use conboost::boost::{boost, cvrisk, negative_gradient, BoostConfig, Loss, Resampling};
use conboost::infer::{bootstrap_ci, BootstrapConfig};
use conboost::learner::{Constraint, LearnerKind, LearnerSpec};
use conboost::linalg::{Matrix, Vector};
use conboost::penalty::{boundary_penalty, cyclic_diff_matrix, diff_matrix, Sides};
use conboost::persist;
use conboost::simulate::{simulate, Scenario, SimConfig};
use conboost::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn qp_matches_iterative() -> Outcome {
    let start = Instant::now();
    let table = simulate(Scenario::QpVsIter, &SimConfig::for_scenario(Scenario::QpVsIter, 50, 20_240_101));
    let elapsed = start.elapsed();
    match table {
        Ok(t) => {
            let worst = t.column("max_discrepancy").unwrap().into_iter().fold(0.0, f64::max);
            let active = t.mean("active_constraints").unwrap();
            outcome(
                worst <= 1e-4 && elapsed < Duration::from_secs(30),
                format!("50 problems, mean active constraints {active:.1}, worst relative discrepancy {worst:.3e}, {elapsed:.2?}"),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn cyclic_beats_unconstrained() -> Outcome {
    let start = Instant::now();
    let table = simulate(Scenario::Cyclic, &SimConfig::for_scenario(Scenario::Cyclic, 100, 7));
    let elapsed = start.elapsed();
    match table {
        Ok(t) => {
            let (mc, mf) = (t.mean("mse_cyclic").unwrap(), t.mean("mse_unconstrained").unwrap());
            let seam = t.column("seam_gap").unwrap().into_iter().fold(0.0, f64::max);
            outcome(
                mc < mf && seam <= 1e-8 && elapsed < Duration::from_secs(120),
                format!("mean MSE cyclic {mc:.5} vs unconstrained {mf:.5}, max seam gap {seam:.1e}, {elapsed:.2?}"),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn monotone_conformance() -> Outcome {
    match simulate(Scenario::Monotone, &SimConfig::for_scenario(Scenario::Monotone, 100, 11)) {
        Ok(t) => {
            let viol = t.column("violations_constrained").unwrap();
            let bad_reps = viol.iter().filter(|v| **v > 0.0).count();
            let free_viol: f64 = t.column("violations_unconstrained").unwrap().iter().sum();
            let (mc, mf) = (t.mean("mse_constrained").unwrap(), t.mean("mse_unconstrained").unwrap());
            let ratio = mc.max(mf) / mc.min(mf);
            outcome(
                bad_reps == 0 && ratio <= 2.0,
                format!(
                    "reps with violations {bad_reps}/100 (unconstrained total {free_viol}), mean MSE {mc:.5} vs {mf:.5}, ratio {ratio:.3}"
                ),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn bivariate_monotone_surface() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let n = 300;
    let x1: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..n).map(|i| 4.0 * (x1[i] - 0.5) * (x2[i] - 0.5) + noise.sample(&mut rng)).collect();
    let data = Dataset::from_pairs(vec![("x1", x1), ("x2", x2), ("y", y)]).unwrap();
    let spec = LearnerSpec::new(LearnerKind::Tensor, &["x1", "x2"])
        .with_degree(1)
        .with_knots(2)
        .with_constraint(Constraint::Increasing)
        .with_constraint(Constraint::Increasing);
    let model = match boost(&data, "y", &[spec], Loss::Gaussian, &BoostConfig::new(0.1, 300, 0)) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let g = model.coefs.get(0);
    if g.len() != 16 {
        return outcome(false, format!("expected a 4x4 grid, got {} coefficients", g.len()));
    }
    let mut worst = f64::INFINITY;
    for a in 0..4 {
        for b in 0..4 {
            for a2 in a + 1..4 {
                worst = worst.min(g[a2 * 4 + b] - g[a * 4 + b]);
            }
            for b2 in b + 1..4 {
                worst = worst.min(g[a * 4 + b2] - g[a * 4 + b]);
            }
        }
    }
    outcome(worst >= -1e-10, format!("smallest pairwise grid difference {worst:.3e}"))
}

fn l2_boosting_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200;
    let x1: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..n).map(|i| 0.5 + 1.5 * x1[i] - 2.0 * x2[i] + 0.3 * rng.random::<f64>()).collect();
    let data = Dataset::from_pairs(vec![("x1", x1.clone()), ("x2", x2.clone()), ("y", y.clone())]).unwrap();
    let start = Instant::now();
    let model = boost(
        &data,
        "y",
        &[LearnerSpec::new(LearnerKind::Linear, &["x1", "x2"])],
        Loss::Gaussian,
        &BoostConfig::new(0.1, 500, 0),
    );
    let elapsed = start.elapsed();
    let model = match model {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let x = Matrix::from_fn(n, 3, |i, j| [1.0, x1[i], x2[i]][j]);
    let yv = Vector::from_column_slice(&y);
    let ols = x.tr_mul(&x).cholesky().unwrap().solve(&x.tr_mul(&yv));
    let mut beta = model.coefs.get(0);
    beta[0] += model.offset;
    let gap = (beta - ols).amax();
    outcome(
        gap <= 1e-4 && elapsed < Duration::from_secs(1),
        format!("max |boosted - OLS| {gap:.2e}, {elapsed:.2?}"),
    )
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for loss in [Loss::Gaussian, Loss::Poisson] {
        for _ in 0..100 {
            let y = match loss {
                Loss::Gaussian => rng.random::<f64>() * 20.0 - 10.0,
                Loss::Poisson => rng.random_range(0..30) as f64,
            };
            let eta = rng.random::<f64>() * 6.0 - 3.0;
            let h = 1e-5 * (1.0 + eta.abs());
            let fd = -(loss.risk(y, eta + h) - loss.risk(y, eta - h)) / (2.0 * h);
            let u = negative_gradient(loss, &[y], &[eta]).unwrap()[0];
            worst = worst.max((u - fd).abs() / u.abs().max(1.0));
        }
    }
    outcome(worst <= 1e-6, format!("200 points, worst relative error {worst:.2e}"))
}

fn null_spaces() -> Outcome {
    let mut worst: f64 = 0.0;
    for j in 3..30 {
        for d in 1..=4.min(j - 1) {
            let dm = diff_matrix(j, d).unwrap();
            for k in 0..d {
                let poly = Vector::from_fn(j, |i, _| (i as f64).powi(k as i32));
                worst = worst.max((&dm * poly).amax());
            }
            let cm = cyclic_diff_matrix(j, d).unwrap();
            worst = worst.max((&cm * Vector::from_element(j, 1.0)).amax());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut boundary: f64 = 0.0;
    for j in 5..30 {
        for sides in [Sides::Left, Sides::Right, Sides::Both] {
            let p = boundary_penalty(j, 2, 3, sides).unwrap();
            let (a, b) = (rng.random::<f64>() * 10.0 - 5.0, rng.random::<f64>() * 4.0 - 2.0);
            let beta = Vector::from_fn(j, |i, _| a + b * i as f64);
            let scale = beta.norm_squared() * p.norm();
            boundary = boundary.max(beta.dot(&(&p * &beta)).abs() / scale);
        }
    }
    outcome(
        worst <= 1e-12 && boundary <= 1e-12,
        format!("max difference residual {worst:.1e}, max relative boundary form {boundary:.1e}"),
    )
}

fn bootstrap_sanity() -> Outcome {
    let start = Instant::now();
    let grid = 100;
    let boot = BootstrapConfig {
        n_boot: 200,
        grid,
        inner_m_max: 100,
        ..Default::default()
    };
    let spec = LearnerSpec::new(LearnerKind::Linear, &["x"]);
    let mut covered = 0;
    let mut nested = true;
    let reps = 200;
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + rep);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v + noise.sample(&mut rng)).collect();
        let data = Dataset::from_pairs(vec![("x", x.clone()), ("y", y)]).unwrap();
        let res = match bootstrap_ci(&data, "y", &[spec.clone()], Loss::Gaussian, &BoostConfig::new(0.1, 0, rep), &boot) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("repeat {rep}: {e}")),
        };
        let band = &res.pointwise[0];
        let (b80, b95) = (band.level(0.8).unwrap(), band.level(0.95).unwrap());
        nested &= (0..grid).all(|i| b95.lower[i] <= b80.lower[i] && b80.upper[i] <= b95.upper[i]);
        let xs = &band.coords[0].1;
        let mean = xs.iter().sum::<f64>() / grid as f64;
        let k = grid / 2;
        let truth = 2.0 * (xs[k] - mean);
        if b95.lower[k] <= truth && truth <= b95.upper[k] {
            covered += 1;
        }
    }
    let coverage = covered as f64 / reps as f64;
    let elapsed = start.elapsed();
    outcome(
        nested && (0.88..=0.99).contains(&coverage) && elapsed < Duration::from_secs(600),
        format!("nesting {nested}, 95% coverage at the grid median {coverage:.3} over {reps} repeats, {elapsed:.2?}"),
    )
}

fn fit_and_serialize(threads: usize) -> (String, Vec<usize>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 150;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i].powi(3) + (3.0 * z[i]).sin() + t[i].cos() + 0.2 * rng.random::<f64>()).collect();
        let data = Dataset::from_pairs(vec![("x", x), ("z", z), ("t", t), ("y", y)]).unwrap();
        let specs = vec![
            LearnerSpec::new(LearnerKind::MonotonePspline, &["x"]).with_constraint(Constraint::Increasing),
            LearnerSpec::new(LearnerKind::Pspline, &["z"]),
            LearnerSpec::new(LearnerKind::CyclicPspline, &["t"]).with_range(&[[0.0, 2.0 * PI]]),
        ];
        let cfg = BoostConfig::new(0.1, 0, 42);
        let cv = cvrisk(&data, "y", &specs, Loss::Gaussian, &cfg, Resampling::KFold(5), 200).unwrap();
        let model = boost(&data, "y", &specs, Loss::Gaussian, &BoostConfig::new(0.1, cv.m_stop, 42)).unwrap();
        let path = std::env::temp_dir().join(format!("conboost-acceptance-{}-{threads}.json", std::process::id()));
        persist::save(&model, &path).unwrap();
        let bytes = std::fs::read_to_string(&path).unwrap();
        let _ = std::fs::remove_file(&path);
        (bytes, model.trace)
    })
}

fn determinism() -> Outcome {
    let (a, ta) = fit_and_serialize(4);
    let (b, tb) = fit_and_serialize(1);
    let (c, tc) = fit_and_serialize(4);
    outcome(
        a == b && b == c && ta == tb && tb == tc,
        format!("{} iterations, model file {} bytes, identical across 4/1/4 threads: {}", ta.len(), a.len(), a == b && b == c),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("QP and iterative monotone fits agree", qp_matches_iterative),
        ("cyclic splines beat unconstrained splines on a periodic truth", cyclic_beats_unconstrained),
        ("monotone fits conform on every replication", monotone_conformance),
        ("bivariate monotone surface on a 4x4 grid", bivariate_monotone_surface),
        ("L2 boosting of a linear learner reaches least squares", l2_boosting_limit),
        ("negative gradients match finite differences", gradient_oracle),
        ("difference and boundary penalties annihilate their null spaces", null_spaces),
        ("bootstrap bands nest and cover", bootstrap_sanity),
        ("identical seeds give identical model files", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!(
            "criterion {}: {} | {name} | {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
