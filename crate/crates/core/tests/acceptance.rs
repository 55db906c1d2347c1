//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use boostmetric::boost::{
    bisection_weight, dual_from_margins, objective_and_gradient, train, train_stagewise,
    train_stagewise_observed, train_totally_corrective, InnerProblem, InnerSolveConfig,
};
use boostmetric::dataio::{make_concentric_circles, model_from_str, model_to_string};
use boostmetric::eval::{evaluate, predict_all, stratified_split, EvalOptions, SplitSpec};
use boostmetric::linalg::{dense_evd, leading_eigenpair};
use boostmetric::multipass::{train_multipass, MultipassOptions};
use boostmetric::{generate_triplets, Dataset, Loss, MetricModel, SymMatrix, TrainConfig, Variant};

use common::{balance, grid_golden_min, hand_instance, iris, naive_loss, wine};

type Outcome = std::result::Result<String, String>;

const LOSSES: [Loss; 2] = [Loss::Exponential, Loss::Logistic];
const VARIANTS: [Variant; 2] = [Variant::Stagewise, Variant::TotallyCorrective];

fn cfg(loss: Loss, max_iter: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        loss,
        max_iter,
        seed,
        ..TrainConfig::default()
    }
}

fn datasets() -> Vec<(&'static str, Dataset)> {
    vec![("iris", iris()), ("wine", wine()), ("bal", balance())]
}

/// A model trained on one seeded training fold, kept for the persistence check.
struct Trained {
    label: String,
    train: Dataset,
    queries: Vec<Vec<f64>>,
    model: MetricModel,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn representation_invariants(trained: &mut Vec<Trained>) -> Outcome {
    let start = Instant::now();
    let mut worst_eig = 0.0f64;
    let mut worst_trace = 0.0f64;
    let mut slowest = (0.0f64, String::new());
    let mut failures = Vec::new();
    for (name, ds) in datasets() {
        for seed in 0..5u64 {
            let spec = SplitSpec { seed, ..SplitSpec::default() };
            let split = stratified_split(&ds, &spec, 0).map_err(|e| e.to_string())?;
            let train_ds = ds.subset(&split.train).map_err(|e| e.to_string())?;
            let ts = generate_triplets(&train_ds, 3, seed).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let queries: Vec<Vec<f64>> = (0..100)
                .map(|_| {
                    let p = ds.point(rng.random_range(0..ds.len()));
                    p.iter().map(|x| x * rng.random_range(0.95..1.05)).collect()
                })
                .collect();
            for loss in LOSSES {
                for variant in VARIANTS {
                    let label = format!("{name}/seed{seed}/{loss}/{}", variant.tag());
                    let t0 = Instant::now();
                    let (model, _) = train(&ts, &train_ds, &cfg(loss, 500, seed), variant, &InnerSolveConfig::default())
                        .map_err(|e| format!("{label}: {e}"))?;
                    let took = t0.elapsed().as_secs_f64();
                    if took > slowest.0 {
                        slowest = (took, label.clone());
                    }
                    let spectrum = dense_evd(model.matrix()).map_err(|e| e.to_string())?;
                    let (max, min) = (spectrum[0].value, spectrum[spectrum.len() - 1].value);
                    let trace_gap = (model.matrix().trace() - model.weight_sum()).abs();
                    let eig_ratio = if max > 0.0 { -min / max } else { 0.0 };
                    worst_eig = worst_eig.max(eig_ratio);
                    worst_trace = worst_trace.max(trace_gap);
                    if min < -1e-9 * max || trace_gap > 1e-8 {
                        failures.push(format!("{label}: min eig {min:e}, trace gap {trace_gap:e}"));
                    }
                    trained.push(Trained { label, train: train_ds.clone(), queries: queries.clone(), model });
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        failures.is_empty() && secs < 120.0,
        format!(
            "{} models, worst -min/max eig {worst_eig:.2e}, worst |Tr X - sum w| {worst_trace:.2e}, {secs:.1}s (slowest {} {:.1}s){}",
            trained.len(),
            slowest.1,
            slowest.0,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn bisection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let loss = LOSSES[i % 2];
        let n = rng.random_range(2..=50);
        let mut h: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        h[0] = -rng.random_range(0.1..2.0);
        let u: Vec<f64> = match loss {
            Loss::Exponential => {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            }
            Loss::Logistic => (0..n).map(|_| rng.random_range(0.05..0.95)).collect(),
        };
        let v = rng.random_range(0.0..0.2);
        let rho0: Vec<f64> = match loss {
            Loss::Exponential => u.iter().map(|x| -x.ln()).collect(),
            Loss::Logistic => u.iter().map(|x| ((1.0 - x) / x).ln()).collect(),
        };
        let f = |w: f64| {
            let rho: Vec<f64> = rho0.iter().zip(&h).map(|(r, hr)| r + w * hr).collect();
            naive_loss(&rho, loss) + v * w
        };
        let mut hi = 1.0;
        while f(hi) < f(0.5 * hi) {
            hi *= 2.0;
        }
        let oracle = grid_golden_min(f, hi, 4000);
        let out = bisection_weight(&h, &u, v, loss, 1e-10, 1.0).map_err(|e| e.to_string())?;
        worst = worst.max((out.weight - oracle).abs());
    }
    check(worst <= 1e-6, format!("200 instances, worst |w - oracle| {worst:.2e}"))
}

fn eigensolver_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let dim = rng.random_range(1..=30);
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        let dense = dense_evd(&m).map_err(|e| e.to_string())?[0].value;
        let power = leading_eigenpair(&m, 1e-10, 1_000_000).map_err(|e| e.to_string())?.value;
        worst = worst.max((power - dense).abs() / dense.abs().max(1e-300));
    }
    check(worst <= 1e-8, format!("500 matrices, worst relative gap {worst:.2e}"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for loss in LOSSES {
        for _ in 0..100 {
            let rows = rng.random_range(1..40);
            let cols = rng.random_range(1..8);
            let columns: Vec<Vec<f64>> = (0..cols)
                .map(|_| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let p = InnerProblem { columns: &columns, offset: None, v: rng.random_range(0.0..0.5), loss };
            let w: Vec<f64> = (0..cols).map(|_| rng.random_range(0.0..3.0)).collect();
            let (_, g) = objective_and_gradient(&p, &w).map_err(|e| e.to_string())?;
            for t in 0..cols {
                let step = 1e-6 * w[t].abs().max(1.0);
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[t] += step;
                wm[t] -= step;
                let fp = objective_and_gradient(&p, &wp).map_err(|e| e.to_string())?.0;
                let fm = objective_and_gradient(&p, &wm).map_err(|e| e.to_string())?.0;
                let fd = (fp - fm) / (2.0 * step);
                worst = worst.max((g[t] - fd).abs() / g[t].abs().max(1.0));
            }
        }
    }
    check(worst <= 1e-5, format!("200 instances, worst relative error {worst:.2e}"))
}

/// Criteria 5 and 6 share the same runs.
fn monotone_and_dual(iris_ds: &Dataset) -> (Outcome, Outcome) {
    let ts = match generate_triplets(iris_ds, 3, 0) {
        Ok(t) => t,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let cs = ts.constraints(iris_ds).expect("triplets index the dataset");
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_dual = 0.0f64;
    let mut steps = 0;
    for loss in LOSSES {
        let mut prev = f64::INFINITY;
        let run = train_stagewise_observed(&ts, iris_ds, &cfg(loss, 100, 0), |view| {
            worst_rise = worst_rise.max(view.objective - prev);
            prev = view.objective;
            let rho = cs.margins(view.model.matrix()).expect("dimensions match");
            let fresh = dual_from_margins(&rho, loss);
            let gap = view.u.iter().zip(&fresh).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_dual = worst_dual.max(gap);
            steps += 1;
        });
        if let Err(e) = run {
            return (Err(e.to_string()), Err(e.to_string()));
        }
    }
    (
        check(worst_rise <= 1e-10, format!("{steps} iterations, largest objective rise {worst_rise:.2e}")),
        check(worst_dual <= 1e-8, format!("{steps} iterations, worst |u - u_kkt| {worst_dual:.2e}")),
    )
}

fn toy_mass(seed: u64, passes: usize) -> std::result::Result<f64, String> {
    let ds = make_concentric_circles(250, 4, 8, 2.0, seed).map_err(|e| e.to_string())?;
    let opts = MultipassOptions { passes, ..MultipassOptions::default() };
    let (model, _) = train_multipass(&ds, &cfg(Loss::Exponential, 500, seed), &opts).map_err(|e| e.to_string())?;
    Ok(model.normalized_spectrum().map_err(|e| e.to_string())?.1)
}

fn toy_spectrum() -> Outcome {
    let start = Instant::now();
    let ds = make_concentric_circles(250, 4, 8, 2.0, 0).map_err(|e| e.to_string())?;
    let count = generate_triplets(&ds, 3, 0).map_err(|e| e.to_string())?.len();
    let masses: Vec<f64> = (0..5).map(|s| toy_mass(s, 1)).collect::<std::result::Result<_, _>>()?;
    let passing = masses.iter().filter(|&&m| m >= 0.9).count();
    let secs = start.elapsed().as_secs_f64();
    let shown: Vec<String> = masses.iter().map(|m| format!("{m:.4}")).collect();
    check(
        passing >= 4 && count == 9000 && secs < 120.0,
        format!("{count} triplets, top-2 mass [{}], {passing}/5 >= 0.90, {secs:.1}s", shown.join(", ")),
    )
}

fn uci_errors(ds: &Dataset, v: f64) -> std::result::Result<(f64, f64), String> {
    let split = SplitSpec::default();
    let c = TrainConfig { v, ..TrainConfig::default() };
    let s = evaluate(ds, &split, &c, &EvalOptions::default()).map_err(|e| e.to_string())?;
    if s.learned.is_partial() || s.euclidean.runs() != 10 {
        return Err(format!("incomplete evaluation: {:?}", s.learned.failed_runs));
    }
    Ok((s.euclidean.mean_error, s.learned.mean_error))
}

fn uci_dominance() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, ds) in datasets() {
        let start = Instant::now();
        let (euclid, learned) = uci_errors(&ds, 1e-7)?;
        let secs = start.elapsed().as_secs_f64();
        let pass = secs < 300.0
            && if name == "iris" { learned <= euclid + 1.5 } else { learned < euclid };
        ok &= pass;
        parts.push(format!("{name} euclidean {euclid:.2} vs boost {learned:.2} ({secs:.1}s)"));
    }
    check(ok, parts.join(", "))
}

fn v_insensitivity(bal: &Dataset) -> Outcome {
    let mut errors = Vec::new();
    for v in [1e-8, 1e-7, 1e-6, 1e-5, 1e-4] {
        errors.push(uci_errors(bal, v)?.1);
    }
    let max = errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:.2}")).collect();
    check(max - min <= 1.5, format!("bal errors [{}], range {:.2}pp", shown.join(", "), max - min))
}

fn corrective_vs_stagewise(iris_ds: &Dataset) -> Outcome {
    let (hand_ds, hand_ts) = hand_instance();
    let iris_ts = generate_triplets(iris_ds, 3, 0).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, ds, ts, j) in [("hand", &hand_ds, &hand_ts, 50), ("iris", iris_ds, &iris_ts, 100)] {
        for loss in LOSSES {
            let c = cfg(loss, j, 0);
            let (_, stage) = train_stagewise(ts, ds, &c).map_err(|e| e.to_string())?;
            let (_, tc) = train_totally_corrective(ts, ds, &c, &InnerSolveConfig::default()).map_err(|e| e.to_string())?;
            let (s, t) = (stage.final_objective().unwrap_or(f64::NAN), tc.final_objective().unwrap_or(f64::NAN));
            ok &= t <= s + 1e-8;
            parts.push(format!("{name}/{loss} tc {t:.8} vs stage {s:.8}"));
        }
    }
    check(ok, parts.join(", "))
}

fn multipass_consistency(iris_ds: &Dataset) -> Outcome {
    let c = cfg(Loss::Exponential, 500, 0);
    let ts = generate_triplets(iris_ds, 3, 0).map_err(|e| e.to_string())?;
    let mut identical = true;
    for variant in VARIANTS {
        let opts = MultipassOptions { passes: 1, variant, ..MultipassOptions::default() };
        let (multi, _) = train_multipass(iris_ds, &c, &opts).map_err(|e| e.to_string())?;
        let (single, _) = train(&ts, iris_ds, &c, variant, &opts.inner).map_err(|e| e.to_string())?;
        identical &= multi.weights() == single.weights()
            && multi.bases() == single.bases()
            && multi.matrix() == single.matrix();
    }
    let mass = toy_mass(0, 2)?;
    check(
        identical && mass >= 0.9,
        format!("single pass identical: {identical}, two-pass toy top-2 mass {mass:.4}"),
    )
}

fn persistence(trained: &[Trained]) -> Outcome {
    if trained.is_empty() {
        return Err("no models from the invariant runs".into());
    }
    let mut mismatched = Vec::new();
    for t in trained {
        let text = model_to_string(&t.model).map_err(|e| format!("{}: {e}", t.label))?;
        let back = model_from_str(&text).map_err(|e| format!("{}: {e}", t.label))?;
        let before = predict_all(&t.train, &t.queries, 3, &t.model).map_err(|e| e.to_string())?;
        let after = predict_all(&t.train, &t.queries, 3, &back).map_err(|e| e.to_string())?;
        if before != after {
            mismatched.push(t.label.clone());
        }
    }
    check(
        mismatched.is_empty(),
        format!("{} models x 100 queries, mismatched: {mismatched:?}", trained.len()),
    )
}

fn main() -> ExitCode {
    let iris_ds = iris();
    let bal = balance();
    let mut trained = Vec::new();
    let c1 = representation_invariants(&mut trained);
    let (c5, c6) = monotone_and_dual(&iris_ds);
    let results = [
        ("representation invariants", c1),
        ("bisection oracle", bisection_oracle()),
        ("eigensolver oracle", eigensolver_oracle()),
        ("gradient check", gradient_check()),
        ("stage-wise monotonicity", c5),
        ("dual update equivalence", c6),
        ("toy spectrum", toy_spectrum()),
        ("UCI dominance", uci_dominance()),
        ("v insensitivity", v_insensitivity(&bal)),
        ("corrective vs stage-wise", corrective_vs_stagewise(&iris_ds)),
        ("multi-pass consistency", multipass_consistency(&iris_ds)),
        ("persistence", persistence(&trained)),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
