use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabguide::codec::{Cell, Column, Encoder, Row, TabularSchema};
use tabguide::diffusion::{
    dirty_estimate, forward_noise, DenoiserNet, NetConfig, NoiseSchedule, OracleDenoiser,
};
use tabguide::exec::Execution;
use tabguide::grad::Matrix;
use tabguide::guidance::{
    eval_loss, guided_sample, ConstraintDoc, ConstraintSpec, GuidanceConfig, Norm, SampleOptions,
};
use tabguide::metrics::violation_rate;
use tabguide::tasks::{gen_mar, gen_mcar, gen_mnar};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

fn norm() -> impl Strategy<Value = Norm> {
    prop_oneof![
        Just(Norm::L1),
        Just(Norm::L2),
        Just(Norm::L2Squared),
        Just(Norm::Linf)
    ]
}

/// Scalar interval constraint on coordinate 0.
fn interval() -> impl Strategy<Value = (f64, f64, Norm, Norm)> {
    (-3.0..3.0f64, 0.0..2.0f64, norm(), norm()).prop_map(|(lo, w, a, b)| (lo, lo + w, a, b))
}

fn band((lo, hi, a, b): (f64, f64, Norm, Norm)) -> ConstraintSpec {
    ConstraintSpec::Inequality {
        selector: tabguide::guidance::Selector::coordinates(&[0]),
        lower: Some(vec![lo]),
        upper: Some(vec![hi]),
        weight: 1.0,
        norm_lower: a,
        norm_upper: b,
    }
}

fn inside(v: f64, (lo, hi, _, _): (f64, f64, Norm, Norm)) -> bool {
    lo <= v && v <= hi
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn losses_are_nonnegative_and_vanish_on_their_sets(
        a in interval(), b in interval(), v in -4.0..4.0f64, target in -2.0..2.0f64, n in norm(),
    ) {
        let x = Matrix::row_vector(vec![v, target]);
        let and = ConstraintSpec::And { children: vec![band(a), band(b)] };
        let or = ConstraintSpec::Or { children: vec![band(a), band(b)] };
        let anchor = ConstraintSpec::Imputation {
            mask: Matrix::row_vector(vec![0.0, 1.0]),
            target: Matrix::row_vector(vec![0.0, target]),
            norm: n,
        };
        for spec in [&and, &or, &anchor] {
            prop_assert!(eval_loss(spec, &x).unwrap() >= 0.0);
        }
        prop_assert_eq!(eval_loss(&anchor, &x).unwrap(), 0.0);
        if inside(v, a) && inside(v, b) {
            prop_assert_eq!(eval_loss(&and, &x).unwrap(), 0.0);
        }
        if inside(v, a) || inside(v, b) {
            prop_assert_eq!(eval_loss(&or, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn schedule_tables_are_consistent(steps in 2usize..400, first in 0.9..0.99999f64, gap in 0.001..0.5f64) {
        let last = (first - gap).max(1e-3);
        let s = NoiseSchedule::build(steps, first, last).unwrap();
        prop_assert_eq!(s.sigma(1), 0.0);
        prop_assert!(s.alpha_bar(steps) < s.alpha_bar(1));
        for t in 2..=steps {
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!(s.sigma(t) >= 0.0);
        }
    }

    #[test]
    fn oracle_dirty_estimate_inverts_the_forward_process(seed in any::<u64>(), t in 1usize..=200) {
        let s = NoiseSchedule::build(200, 0.9999, 0.98).unwrap();
        let x0 = matrix(4, 3, seed);
        let oracle = OracleDenoiser { sched: s.clone(), x0: x0.clone() };
        let xt = forward_noise(&s, &x0, t, &matrix(4, 3, seed ^ 1)).unwrap();
        prop_assert!(dirty_estimate(&oracle, &s, &xt, t).unwrap().max_abs_diff(&x0).unwrap() <= 1e-10);
    }

    #[test]
    fn adjoints_are_linear(seed in any::<u64>(), t in 1usize..=200) {
        let net = DenoiserNet::init(NetConfig::compact(3, 6, 4), seed).unwrap();
        let x = matrix(2, 3, seed);
        let (a, b) = (matrix(2, 3, seed ^ 2), matrix(2, 3, seed ^ 3));
        let grads = |adj: &Matrix| {
            let mut rec = net.forward_record(&x, &[t, t]).unwrap();
            let g = rec.tape.backward(rec.output, adj).unwrap();
            let mut all = vec![g.wrt(rec.input)];
            all.extend(g.params());
            all
        };
        let (ga, gb, gab) = (grads(&a), grads(&b), grads(&a.add(&b).unwrap()));
        for ((x, y), z) in ga.iter().zip(&gb).zip(&gab) {
            prop_assert!(x.add(y).unwrap().max_abs_diff(z).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn encoding_round_trips(seed in any::<u64>(), n in 3usize..40) {
        let schema = TabularSchema::new(vec![
            Column::continuous("x"),
            Column::categorical("c", 3),
            Column::continuous("y"),
        ]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Row> = (0..n)
            .map(|_| vec![
                Cell::Number(rng.random_range(-1e3..1e3)),
                Cell::Category(["p", "q", "r"][rng.random_range(0..3)].into()),
                Cell::Number(rng.random_range(0.0..1.0)),
            ])
            .collect();
        // Two distinct values per continuous column and every class.
        rows[0][0] = Cell::Number(-1.0);
        rows[1][0] = Cell::Number(1.0);
        rows[0][2] = Cell::Number(0.0);
        rows[1][2] = Cell::Number(1.0);
        rows[0][1] = Cell::Category("p".into());
        rows[1][1] = Cell::Category("q".into());
        rows[2][1] = Cell::Category("r".into());
        let enc = Encoder::fit(&schema, &rows).unwrap();
        let m = enc.encode_rows(&rows).unwrap();
        let (start, width) = (enc.columns()[1].start, enc.columns()[1].width);
        for (r, row) in rows.iter().enumerate() {
            let block = &m.row(r)[start..start + width];
            prop_assert_eq!(block.iter().sum::<f64>(), 1.0);
            prop_assert!(block.iter().all(|&v| v == 0.0 || v == 1.0));
            let back = enc.decode(m.row(r)).unwrap();
            for (a, b) in back.iter().zip(row) {
                match (a, b) {
                    (Cell::Number(x), Cell::Number(y)) => prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0)),
                    _ => prop_assert_eq!(a, b),
                }
            }
        }
    }

    #[test]
    fn masks_are_determined_by_their_seed(seed in any::<u64>(), ratio in 0.05..0.95f64) {
        prop_assert_eq!(gen_mcar(50, 6, ratio, seed).unwrap(), gen_mcar(50, 6, ratio, seed).unwrap());
        let x = matrix(50, 6, seed);
        prop_assert_eq!(gen_mar(&x, ratio, 2, seed).unwrap(), gen_mar(&x, ratio, 2, seed).unwrap());
        prop_assert_eq!(gen_mnar(&x, ratio, seed).unwrap(), gen_mnar(&x, ratio, seed).unwrap());
    }

    #[test]
    fn mar_never_hides_observed_columns(seed in any::<u64>(), ratio in 0.05..0.95f64, keep in 1usize..5) {
        let x = matrix(80, 6, seed);
        let m = gen_mar(&x, ratio, keep, seed).unwrap();
        for r in 0..m.rows {
            for &c in &m.observed_columns {
                prop_assert!(!m.missing(r, c));
            }
        }
    }

    #[test]
    fn composed_violation_rates_bound_their_children(seed in any::<u64>(), lo in -2.0..2.0f64, hi in -2.0..2.0f64) {
        let schema = TabularSchema::new(vec![Column::continuous("a"), Column::continuous("b")]).unwrap();
        let m = matrix(60, 2, seed);
        let rows: Vec<Row> = m.iter_rows().map(|r| r.iter().map(|&v| Cell::Number(v)).collect()).collect();
        let enc = Encoder::fit(&schema, &rows).unwrap();
        let ge = |col: &str, v: f64| ConstraintDoc::Inequality {
            column: col.into(), lower: Some(v), upper: None, weight: None, norm_lower: None, norm_upper: None,
        };
        let kids = vec![ge("a", lo), ge("b", hi)];
        let rates: Vec<f64> = kids.iter().map(|k| violation_rate(&rows, k, &enc).unwrap()).collect();
        let and = violation_rate(&rows, &ConstraintDoc::And { children: kids.clone() }, &enc).unwrap();
        let or = violation_rate(&rows, &ConstraintDoc::Or { children: kids }, &enc).unwrap();
        prop_assert!(and >= rates[0].max(rates[1]));
        prop_assert!(or <= rates[0].min(rates[1]));
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn sampling_ignores_chunking_and_execution(seed in any::<u64>(), chunk in 1usize..20, n in 1usize..25) {
        let s = NoiseSchedule::build(12, 0.9999, 0.98).unwrap();
        let net = DenoiserNet::init(NetConfig::compact(3, 8, 4), seed).unwrap();
        let spec = ConstraintSpec::at_least(1, 0.5, 1.0, Norm::L2);
        let g = GuidanceConfig::default();
        let run = |chunk_rows, execution| {
            guided_sample(&net, &s, Some(&spec), &g, n, seed, &SampleOptions { chunk_rows, execution }).unwrap()
        };
        let reference = run(256, Execution::Sequential);
        prop_assert_eq!(&run(chunk, Execution::Sequential), &reference);
        prop_assert_eq!(&run(chunk, Execution::Parallel), &reference);
    }
}
