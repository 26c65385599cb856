use sitaware_core::ingest::parse_report_table;
use sitaware_core::nn::{self, init_network, train, train_observed, Algorithm, NetConfig};
use sitaware_core::preprocess::{prepare, DEFAULT_COEFFICIENTS, DEFAULT_NOISE_SD};
use sitaware_core::search::{self, compare_architectures, stable_hash, TrainParams};
use sitaware_core::Dataset;

fn fixture() -> Dataset {
    let table = parse_report_table(sitaware_core::FIXTURE_REPORTS).unwrap();
    prepare(&table, &DEFAULT_COEFFICIENTS, DEFAULT_NOISE_SD, 42)
        .unwrap()
        .0
}

fn bits(r: &nn::TrainResult) -> Vec<u64> {
    nn::result_matrix(r).iter().map(|v| v.to_bits()).collect()
}

#[test]
fn training_is_deterministic() {
    let data = fixture();
    for seed in [0, 7, 42] {
        let cfg = NetConfig::regression(4, &[10, 5], seed);
        assert_eq!(
            bits(&train(&cfg, &data).unwrap()),
            bits(&train(&cfg, &data).unwrap())
        );
    }
}

#[test]
fn convergence_flag_is_honest_and_loss_does_not_grow() {
    let data = fixture();
    for (seed, hidden, step_max) in [
        (1, vec![5], 100_000),
        (2, vec![10, 5], 3),
        (3, vec![4, 5, 3], 100_000),
    ] {
        let mut cfg = NetConfig::regression(4, &hidden, seed);
        cfg.step_max = step_max;
        let initial = init_network(&cfg).unwrap().loss_sse(&data).unwrap();
        let r = train(&cfg, &data).unwrap();
        assert_eq!(
            r.converged,
            r.reached_threshold < cfg.threshold,
            "{hidden:?}"
        );
        assert!(r.steps <= cfg.step_max);
        assert!(r.error <= initial, "{hidden:?}: {} > {initial}", r.error);
        assert!((r.network.loss_sse(&data).unwrap() - r.error).abs() < 1e-12);
    }
}

#[test]
fn observer_sees_every_step() {
    let data = fixture();
    let cfg = NetConfig::regression(4, &[5], 11);
    let mut seen = Vec::new();
    let r = train_observed(&cfg, &data, |p| seen.push(*p)).unwrap();
    assert_eq!(seen.len(), r.steps);
    assert_eq!(seen.last().unwrap().error.to_bits(), r.error.to_bits());
}

#[test]
fn gradient_descent_also_reduces_loss() {
    let data = fixture();
    let mut cfg = NetConfig::regression(4, &[5], 3);
    cfg.algorithm = Algorithm::gradient_descent();
    cfg.step_max = 2000;
    let initial = init_network(&cfg).unwrap().loss_sse(&data).unwrap();
    let r = train(&cfg, &data).unwrap();
    assert!(r.error < initial);
}

#[test]
fn result_matrix_round_trips() {
    let data = fixture();
    let cfg = NetConfig::regression(4, &[10, 5], 7);
    let r = train(&cfg, &data).unwrap();
    let flat = nn::result_matrix(&r);
    assert_eq!(flat.len(), 114);
    let back = nn::from_result_matrix(cfg.clone(), &flat).unwrap();
    assert_eq!(bits(&back), bits(&r));
    let labels = nn::result_matrix_labels(&cfg, &data.feature_names);
    assert_eq!(labels.len(), flat.len());
}

#[test]
fn comparison_rows_reproducible_from_their_seed() {
    let data = fixture();
    let params = TrainParams::default();
    let candidates = vec![vec![5], vec![10, 5], vec![4, 5, 3]];
    let table = compare_architectures(&data, &candidates, 3, 7, &params).unwrap();
    assert_eq!(table.rows.len(), 3);
    for (c, row) in table.rows.iter().enumerate() {
        assert!((0..3).any(|r| stable_hash(&[7, c as u64, r]) == row.seed_used));
        let cfg = params.config(4, &row.hidden_sizes, row.seed_used);
        let t = train(&cfg, &data).unwrap();
        assert_eq!(t.error.to_bits(), row.error.to_bits());
        assert_eq!(t.steps, row.steps);
        assert_eq!(row.parameter_count, cfg.parameter_count());
    }
}

#[test]
fn single_restart_equals_single_train() {
    let data = fixture();
    let params = TrainParams::default();
    let table = compare_architectures(&data, &[vec![10, 5]], 1, 99, &params).unwrap();
    let cfg = params.config(4, &[10, 5], stable_hash(&[99, 0, 0]));
    let t = train(&cfg, &data).unwrap();
    assert_eq!(table.rows[0].error.to_bits(), t.error.to_bits());
    assert_eq!(table.rows[0].steps, t.steps);
    assert_eq!(table.rows[0].seed_used, cfg.seed);
}

#[test]
fn stepwise_trace_is_monotone() {
    let data = fixture();
    let grid: Vec<usize> = (2..=6).collect();
    let r = search::stepwise_refine(&data, 2, &grid, 2, 5, &TrainParams::default()).unwrap();
    assert_eq!(r.trace.len(), 2);
    let winners: Vec<f64> = r
        .trace
        .iter()
        .map(|t| search::select_best(t).unwrap().error)
        .collect();
    assert!(winners.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(
        search::select_best(r.trace.last().unwrap())
            .unwrap()
            .hidden_sizes,
        r.best_sizes
    );
    for t in &r.trace {
        assert_eq!(t.rows.len(), grid.len());
    }
}
