use proptest::prelude::*;

use sitaware_core::ingest::{parse_report_table, validate, ReportTable, SourceReport};
use sitaware_core::meta::{self, EffectEstimate};
use sitaware_core::nn::{self, init_network, NetConfig};
use sitaware_core::preprocess::{
    minmax_apply, minmax_fit, minmax_invert, synthesize_target, Dataset,
};
use sitaware_core::score::{self, SituationWeights};
use sitaware_core::search::{self, ComparisonRow, ComparisonTable};
use sitaware_core::ParameterMatrix;

fn estimates(effects: &[f64], variances: &[f64]) -> Vec<EffectEstimate> {
    effects
        .iter()
        .zip(variances)
        .enumerate()
        .map(|(i, (&t, &v))| EffectEstimate::new(format!("s{i}"), t, v).unwrap())
        .collect()
}

fn study_sets() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..12).prop_flat_map(|k| {
        (
            prop::collection::vec(-10.0f64..10.0, k),
            prop::collection::vec(1e-3f64..10.0, k),
        )
    })
}

fn report_tables() -> impl Strategy<Value = ReportTable> {
    (1usize..5, 2usize..8).prop_flat_map(|(p, n)| {
        let names: Vec<String> = (0..p).map(|j| format!("ind_{j}")).collect();
        prop::collection::vec(
            (
                "[A-Za-z][A-Za-z ,\"]{0,12}",
                1900i32..=2100,
                prop::collection::vec(0i64..10_000_000, p),
            ),
            n,
        )
        .prop_map(move |rows| ReportTable {
            columns: names.clone(),
            rows: rows
                .into_iter()
                .map(|(source_id, year, counts)| SourceReport {
                    source_id,
                    year,
                    values: names.iter().cloned().zip(counts).collect(),
                })
                .collect(),
        })
    })
}

fn matrix(entries: Vec<f64>) -> ParameterMatrix {
    ParameterMatrix {
        entries: entries.chunks(5).map(<[f64]>::to_vec).collect(),
        factor_labels: [
            "financial",
            "materials",
            "population",
            "territory",
            "water resources",
        ]
        .map(String::from)
        .to_vec(),
        subfactor_labels: (1..=5)
            .map(|m| (1..=5).map(|n| format!("a{m}{n}")).collect())
            .collect(),
    }
}

proptest! {
    #[test]
    fn csv_round_trip(table in report_tables()) {
        let text = table.to_csv().unwrap();
        prop_assert_eq!(parse_report_table(&text).unwrap(), table);
    }

    #[test]
    fn single_cell_mutation_yields_one_violation(table in report_tables(), pick in any::<prop::sample::Index>()) {
        prop_assert!(validate(&table).is_empty());
        let row = pick.index(table.rows.len());
        let col = table.columns[pick.index(table.columns.len())].clone();
        let mut bad = table.clone();
        bad.rows[row].values[&col] = -1;
        let v = validate(&bad);
        prop_assert_eq!(v.len(), 1);
        prop_assert_eq!(v[0].row, Some(row));
        prop_assert_eq!(v[0].column.as_deref(), Some(col.as_str()));
    }

    #[test]
    fn pooling_identities((t, v) in study_sets()) {
        let r = meta::pool(&estimates(&t, &v)).unwrap();
        prop_assert!(r.q >= 0.0);
        prop_assert!((0.0..1.0).contains(&r.i2));
        prop_assert!(r.tau2 >= 0.0);
        prop_assert!((r.weights_common.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((r.weights_random.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.weights_common.iter().chain(&r.weights_random).all(|&w| w > 0.0));
        let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.pooled_common >= lo - 1e-12 && r.pooled_common <= hi + 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.p_common) && (0.0..=1.0).contains(&r.p_random));
        if r.tau2 == 0.0 {
            prop_assert!((r.pooled_random - r.pooled_common).abs() <= 1e-12);
            for (a, b) in r.weights_random.iter().zip(&r.weights_common) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn variance_scaling((t, v) in study_sets(), c in 1e-3f64..1e3) {
        let a = meta::pool(&estimates(&t, &v)).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let b = meta::pool(&estimates(&t, &scaled)).unwrap();
        let scale = a.pooled_common.abs().max(1e-300);
        prop_assert!((a.pooled_common - b.pooled_common).abs() / scale <= 1e-12 || (a.pooled_common - b.pooled_common).abs() <= 1e-14);
        prop_assert!((b.se_common - a.se_common * c.sqrt()).abs() / b.se_common <= 1e-12);
    }

    #[test]
    fn permutation_invariance((t, v) in study_sets(), seed in any::<u64>()) {
        let k = t.len();
        let mut order: Vec<usize> = (0..k).collect();
        // deterministic shuffle driven by the generated seed
        let mut s = seed;
        for i in (1..k).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = meta::pool(&estimates(&t, &v)).unwrap();
        let tp: Vec<f64> = order.iter().map(|&i| t[i]).collect();
        let vp: Vec<f64> = order.iter().map(|&i| v[i]).collect();
        let b = meta::pool(&estimates(&tp, &vp)).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
        prop_assert!(close(a.pooled_common, b.pooled_common));
        prop_assert!(close(a.pooled_random, b.pooled_random));
        prop_assert!(close(a.q, b.q));
        prop_assert!(close(a.tau2, b.tau2));
        for (j, &i) in order.iter().enumerate() {
            prop_assert!(close(a.weights_common[i], b.weights_common[j]));
        }
    }

    #[test]
    fn equal_variance_fusion_is_mean(p in prop::collection::vec(-1e6f64..1e6, 1..20), v in 1e-3f64..1e3) {
        let f = meta::fuse_predictions(&p, &vec![v; p.len()]).unwrap();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        prop_assert!((f.fused - mean).abs() <= 1e-9 * mean.abs().max(1.0));
    }

    #[test]
    fn scaler_round_trip(cols in (1usize..5, 1usize..15).prop_flat_map(|(p, n)| prop::collection::vec(prop::collection::vec(-1e6f64..1e6, n), p))) {
        let n = cols[0].len();
        let x: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let d = Dataset::new((0..cols.len()).map(|j| format!("c{j}")).collect(), x, None).unwrap();
        let s = minmax_fit(&d).unwrap();
        let z = minmax_apply(&s, &d).unwrap();
        let back = minmax_invert(&s, &z).unwrap();
        for (j, c) in s.columns.iter().enumerate() {
            for i in 0..n {
                let orig = d.x[i][j];
                if c.constant {
                    prop_assert_eq!(z.x[i][j], 0.0);
                } else {
                    prop_assert!((back.x[i][j] - orig).abs() <= 1e-12 * orig.abs().max(c.max - c.min));
                    if orig == c.min { prop_assert_eq!(z.x[i][j], 0.0); }
                    if orig == c.max { prop_assert_eq!(z.x[i][j], 1.0); }
                    prop_assert!((0.0..=1.0).contains(&z.x[i][j]));
                }
            }
        }
    }

    #[test]
    fn synthetic_target_deterministic(seed in any::<u64>(), sd in 0.0f64..0.5) {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, 1.0 - i as f64 / 5.0]).collect();
        let d = Dataset::new(vec!["a".into(), "b".into()], x, None).unwrap();
        let a = synthesize_target(&d, &[0.3, 0.6], sd, seed).unwrap();
        let b = synthesize_target(&d, &[0.3, 0.6], sd, seed).unwrap();
        let bits = |d: &Dataset| d.y.as_ref().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn generalized_weights_match_finite_differences(seed in any::<u64>(), hidden in prop::collection::vec(1usize..6, 0..3)) {
        let cfg = NetConfig::regression(3, &hidden, seed);
        let net = init_network(&cfg).unwrap();
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![0.1 * i as f64, 0.5 - 0.2 * i as f64, 0.3]).collect();
        let d = Dataset::new(vec!["a".into(), "b".into(), "c".into()], x.clone(), None).unwrap();
        let gw = net.generalized_weights(&d).unwrap();
        let h = 1e-6;
        for (i, row) in x.iter().enumerate() {
            for j in 0..3 {
                let mut up = row.clone();
                let mut dn = row.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (net.forward(&up).unwrap()[0] - net.forward(&dn).unwrap()[0]) / (2.0 * h);
                let g = gw.rows[i][j];
                prop_assert!((g - fd).abs() / g.abs().max(1.0) < 1e-6, "gw {} fd {}", g, fd);
            }
        }
    }

    #[test]
    fn hidden_neuron_permutation(seed in any::<u64>(), a in 0usize..4, b in 0usize..4) {
        let cfg = NetConfig::regression(2, &[4, 3], seed);
        let net = init_network(&cfg).unwrap();
        let mut perm = net.clone();
        // swap hidden neurons a and b of the first hidden layer:
        // their incoming columns and their outgoing rows (offset by the intercept row)
        for r in 0..perm.layers[0].rows() {
            let (va, vb) = (net.layers[0].get(r, a), net.layers[0].get(r, b));
            perm.layers[0].set(r, a, vb);
            perm.layers[0].set(r, b, va);
        }
        for c in 0..perm.layers[1].cols() {
            let (va, vb) = (net.layers[1].get(a + 1, c), net.layers[1].get(b + 1, c));
            perm.layers[1].set(a + 1, c, vb);
            perm.layers[1].set(b + 1, c, va);
        }
        for x in [[0.0, 0.0], [0.3, -1.2], [5.0, 2.0]] {
            let y0 = net.forward(&x).unwrap()[0];
            let y1 = perm.forward(&x).unwrap()[0];
            prop_assert!((y0 - y1).abs() <= 1e-12 * y0.abs().max(1.0));
        }
    }

    #[test]
    fn parameter_count_matches_result_matrix(inputs in 1usize..6, hidden in prop::collection::vec(1usize..9, 0..4)) {
        let cfg = NetConfig::regression(inputs, &hidden, 0);
        let net = init_network(&cfg).unwrap();
        let r = nn::TrainResult { network: net, error: 0.0, reached_threshold: 0.0, steps: 1, converged: true };
        prop_assert_eq!(nn::result_matrix(&r).len() - 3, cfg.parameter_count());
    }

    #[test]
    fn select_best_permutation_invariant(rows in prop::collection::vec((prop::collection::vec(1usize..10, 1..4), 0u32..5, 1usize..5), 1..8), rot in 0usize..8) {
        let rows: Vec<ComparisonRow> = rows.into_iter().map(|(sizes, e, steps)| ComparisonRow {
            parameter_count: nn::parameter_count(&[4].iter().chain(&sizes).chain(&[1]).copied().collect::<Vec<_>>()),
            hidden_sizes: sizes,
            error: f64::from(e) * 0.001,
            steps,
            seed_used: 0,
            converged: true,
            diverged: false,
        }).collect();
        let t = ComparisonTable { rows: rows.clone(), dataset_fingerprint: String::new() };
        let mut rotated = rows.clone();
        rotated.rotate_left(rot % rows.len());
        rotated.reverse();
        let u = ComparisonTable { rows: rotated, dataset_fingerprint: String::new() };
        prop_assert_eq!(search::select_best(&t).unwrap(), search::select_best(&u).unwrap());
    }

    #[test]
    fn score_additivity(a in prop::collection::vec(-10.0f64..10.0, 25), b in prop::collection::vec(-10.0f64..10.0, 25), w in prop::collection::vec(-1.0f64..1.0, 25), bias in -5.0f64..5.0) {
        let weights = SituationWeights::new(bias, w).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = score::situation_score(&matrix(sum), &weights).unwrap();
        let rhs = score::situation_score(&matrix(a), &weights).unwrap() + score::situation_score(&matrix(b), &weights).unwrap() - bias;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn feedback_residual_non_increasing(a in prop::collection::vec(-3.0f64..3.0, 25), target in -10.0f64..10.0, frac in 0.01f64..0.99) {
        let m = matrix(a);
        let rate = frac * score::stable_rate_bound(&m);
        let mut w = SituationWeights::uniform(0.0, 0.1);
        let mut prev = (score::situation_score(&m, &w).unwrap() - target).abs();
        for _ in 0..50 {
            w = score::feedback_update(&w, &m, target, rate).unwrap();
            let r = (score::situation_score(&m, &w).unwrap() - target).abs();
            prop_assert!(r <= prev * (1.0 + 1e-12) + 1e-12);
            prev = r;
        }
    }
}

#[test]
fn fixture_two_arm_pooling_matches_independent_computation() {
    // pooled value and Q computed separately with plain floating-point
    // arithmetic over the ten (a34, a35) pairs
    let table = parse_report_table(sitaware_core::FIXTURE_REPORTS).unwrap();
    let est = meta::two_arm_estimates(&table, "a34", "a35").unwrap();
    let r = meta::pool(&est).unwrap();
    assert!((r.pooled_common - 2.1122952320176758).abs() < 1e-12);
    assert!((r.q - 11812.493541475786).abs() < 1e-6);
    assert_eq!(r.df, 9);
    assert!((r.i2 - 0.999238094821521).abs() < 1e-12);
    let p = meta::plot_data(&est, &r, 0.95).unwrap();
    assert_eq!(p.study_rows().count(), 10);
    assert_eq!(p.forest_rows.len(), 12);
    assert_eq!(p.funnel_points.len(), 10);
    assert_eq!(p.residuals.len(), 10);
    for row in &p.forest_rows {
        assert!(row.ci_low <= row.effect && row.effect <= row.ci_high);
    }
}

#[test]
fn fixture_single_source_pooling() {
    let table = parse_report_table(sitaware_core::FIXTURE_REPORTS).unwrap();
    let rates = meta::parse_bias_rates(include_str!("../fixtures/bias_rates.csv")).unwrap();
    let est = meta::single_source_estimates(&table, "a35", &rates).unwrap();
    assert_eq!(est.len(), 10);
    // Wall Street Journal: 80000 reported, bias 0.10, 4 reports → se 4000
    assert!((est[0].standard_error() - 4000.0).abs() < 1e-9);
    let r = meta::pool(&est).unwrap();
    assert!(r.pooled_common > 31000.0 && r.pooled_common < 80000.0);
}
