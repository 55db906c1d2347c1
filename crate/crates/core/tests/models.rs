mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use boostmetric::boost::train_stagewise;
use boostmetric::dataio::{load_model, save_model};
use boostmetric::eval::{evaluate, knn_classify, predict_all, EvalOptions, Metric, SplitSpec};
use boostmetric::multipass::{factor_metric, project_dataset};
use boostmetric::{generate_triplets, Dataset, TrainConfig};

use common::{iris, wine};

fn jittered_queries(ds: &Dataset, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = ds.point(rng.random_range(0..ds.len()));
            p.iter().map(|x| x + rng.random_range(-0.3..0.3)).collect()
        })
        .collect()
}

#[test]
fn saved_model_predicts_identically() {
    let ds = iris();
    let ts = generate_triplets(&ds, 3, 0).unwrap();
    let (model, _) = train_stagewise(&ts, &ds, &TrainConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("iris.model");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.weights(), model.weights());
    assert_eq!(back.meta, model.meta);
    let queries = jittered_queries(&ds, 100, 1);
    assert_eq!(
        predict_all(&ds, &queries, 3, &back).unwrap(),
        predict_all(&ds, &queries, 3, &model).unwrap()
    );
}

#[test]
fn learned_knn_equals_euclidean_knn_after_projection() {
    let ds = wine();
    let ts = generate_triplets(&ds, 3, 0).unwrap();
    let cfg = TrainConfig {
        max_iter: 100,
        ..TrainConfig::default()
    };
    let (model, _) = train_stagewise(&ts, &ds, &cfg).unwrap();
    let l = factor_metric(model.matrix(), 1e-12).unwrap();
    let projected = project_dataset(&ds, &l).unwrap();
    let queries = jittered_queries(&ds, 100, 2);
    let mut agree = 0;
    for q in &queries {
        let direct = knn_classify(&ds, q, 3, Metric::Mahalanobis(model.matrix())).unwrap();
        let pq: Vec<f64> = (0..l.ncols()).map(|k| l.column(k).iter().zip(q).map(|(x, y)| x * y).sum()).collect();
        let via = knn_classify(&projected, &pq, 3, Metric::Euclidean).unwrap();
        agree += usize::from(direct == via);
    }
    // rounding can only flip near-exact distance ties
    assert!(agree >= 99, "{agree} of 100");
}

#[test]
fn evaluation_is_reproducible_and_thread_independent() {
    let ds = iris();
    let split = SplitSpec {
        runs: 4,
        seed: 5,
        ..SplitSpec::default()
    };
    let cfg = TrainConfig {
        max_iter: 50,
        ..TrainConfig::default()
    };
    let serial = evaluate(&ds, &split, &cfg, &EvalOptions::default()).unwrap();
    let again = evaluate(&ds, &split, &cfg, &EvalOptions::default()).unwrap();
    let parallel = evaluate(&ds, &split, &cfg, &EvalOptions { jobs: 3, ..EvalOptions::default() }).unwrap();
    assert_eq!(serial, again);
    assert_eq!(serial, parallel);
    assert_eq!(serial.learned.runs(), 4);
    assert!(!serial.learned.is_partial());
}

#[test]
fn pca_preprocessing_runs_end_to_end() {
    let ds = wine();
    let split = SplitSpec {
        runs: 2,
        ..SplitSpec::default()
    };
    let cfg = TrainConfig {
        max_iter: 30,
        ..TrainConfig::default()
    };
    let opts = EvalOptions {
        pca_dim: Some(5),
        ..EvalOptions::default()
    };
    let summary = evaluate(&ds, &split, &cfg, &opts).unwrap();
    assert_eq!(summary.learned.runs(), 2);
    assert!(summary.learned.mean_error.is_finite());
}
