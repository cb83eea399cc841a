mod support;

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqrules::binarize::{augment, fit_thresholds, LiteralDescriptor, LEVELS};
use seqrules::dataset::{
    sample_batch, Column, ColumnValues, Dataset, EventSequence, Schema, Split,
};
use seqrules::mcts::{generate_top_k, Search, SearchConfig, SearchTree};
use seqrules::nln::{forward_hard, forward_soft, ranking_objective, NlnParams, Noise};
use seqrules::numerics::{multiple_corr, ols_fit, pearson_corr, residualize, Matrix};
use seqrules::operators::{
    evaluate, is_valid, Aggregation, Grammar, Operator, SortOrder, StatisticChain,
};
use seqrules::rules::{auc, extract, fidelity, BoolExpr};

use support::{brute_evaluate, random_sequence, three_column_schema};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_chain<R: Rng>(g: &Grammar, rng: &mut R) -> StatisticChain {
    let none = HashSet::new();
    let mut c = StatisticChain::default();
    while !c.is_terminal() {
        let next = g.valid_next_operators(&c, &none);
        c.push(next[rng.random_range(0..next.len())]);
    }
    c
}

fn random_dataset(n: usize, seed: u64) -> Dataset {
    let schema = three_column_schema();
    let mut r = rng(seed);
    let seqs: Vec<EventSequence> = (0..n)
        .map(|i| random_sequence(&schema, 12, &format!("u{i}"), &mut r))
        .collect();
    let scores = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    Dataset::new(schema, seqs, scores).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

// dataset

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_round_trip(n in 2usize..30, seed in any::<u64>()) {
        let d = random_dataset(n, seed);
        let dir = tempfile::tempdir().unwrap();
        let (e, s, y) = (dir.path().join("e.csv"), dir.path().join("s.toml"), dir.path().join("y.csv"));
        d.write(&e, &s, &y).unwrap();
        prop_assert_eq!(Dataset::load(&e, &s, &y).unwrap(), d);
    }
}

proptest! {
    #[test]
    fn split_is_partition(n in 2usize..400, frac in 0.05f64..0.95, valid in 0usize..50, seed in any::<u64>()) {
        if let Ok(s) = Split::new(n, frac, valid, seed) {
            let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.valid.len(), valid);
        }
    }
}

#[test]
fn sample_batch_covers_every_index() {
    let mut r = rng(0);
    let mut seen = [false; 20];
    for _ in 0..200 {
        let b = sample_batch(20, 5, &mut r);
        let distinct: HashSet<usize> = b.iter().copied().collect();
        assert_eq!(distinct.len(), 5);
        for i in b {
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s));
}

// operators

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn evaluate_is_pure_and_matches_oracle(seed in any::<u64>()) {
        let schema = three_column_schema();
        let mut r = rng(seed);
        let chain = random_chain(&Grammar::new(&schema, 4), &mut r);
        let seq = random_sequence(&schema, 20, "u", &mut r);
        let a = evaluate(&chain, &schema, &seq);
        let b = evaluate(&chain, &schema, &seq);
        prop_assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert!(close(&a, &brute_evaluate(chain.ops(), &schema, &seq), 1e-9));
    }

    #[test]
    fn order_insensitive_aggregations_ignore_sorting(seed in any::<u64>(), column in 1usize..3, desc in any::<bool>()) {
        let schema = three_column_schema();
        let mut r = rng(seed);
        let chain = random_chain(&Grammar::new(&schema, 4), &mut r);
        let Some(&Operator::Agg(agg)) = chain.ops().last() else { unreachable!() };
        prop_assume!(!matches!(agg, Aggregation::First) && !chain.ops().contains(&Operator::Top5));
        let order = if desc { SortOrder::Desc } else { SortOrder::Asc };
        let mut ops = chain.ops().to_vec();
        ops.insert(1, Operator::SortBy { column, order });
        let seq = random_sequence(&schema, 20, "u", &mut r);
        let sorted = evaluate(&StatisticChain::new(ops), &schema, &seq);
        prop_assert!(close(&sorted, &evaluate(&chain, &schema, &seq), 1e-9));
    }

    #[test]
    fn filter_then_retain_is_empty(seed in any::<u64>(), category in 0u32..3, target in 0usize..3) {
        let schema = three_column_schema();
        let mut r = rng(seed);
        let seq = random_sequence(&schema, 20, "u", &mut r);
        for agg in Aggregation::all() {
            let chain = StatisticChain::new(vec![
                Operator::Select(target),
                Operator::FilterBy { column: 0, category },
                Operator::RetainBy { column: 0, category },
                Operator::Agg(agg),
            ]);
            prop_assert!(evaluate(&chain, &schema, &seq).iter().all(|&v| v == 0.0));
        }
    }

    /// A categorical target behaves like one numeric indicator per category.
    #[test]
    fn one_hot_distribution(seed in any::<u64>()) {
        let schema = three_column_schema();
        let mut r = rng(seed);
        let g = Grammar::new(&schema, 4);
        let chain = loop {
            let c = random_chain(&g, &mut r);
            if c.target() == Some(0) {
                break c;
            }
        };
        let seq = random_sequence(&schema, 20, "u", &mut r);
        let got = evaluate(&chain, &schema, &seq);

        let mut cols = schema.columns().to_vec();
        cols.push(Column::numerical("indicator"));
        let wide = Schema::new(cols).unwrap();
        let mut want = Vec::new();
        for v in 0..3u32 {
            let mut values: Vec<ColumnValues> = (0..3).map(|c| seq.column(c).clone()).collect();
            values.push(ColumnValues::Numerical(seq.categories(0).iter().map(|&c| f64::from(u8::from(c == v))).collect()));
            let s = EventSequence::new("u", values, &wide).unwrap();
            let mut ops = chain.ops().to_vec();
            ops[0] = Operator::Select(3);
            want.extend(evaluate(&StatisticChain::new(ops), &wide, &s));
        }
        prop_assert!(close(&got, &want, 1e-12));
    }
}

// numerics

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, n)
}

proptest! {
    #[test]
    fn pearson_symmetric_and_affine(x in vec_strategy(25), y in vec_strategy(25), a in 0.1f64..10.0, neg in any::<bool>(), b in -50.0f64..50.0) {
        let c = pearson_corr(&x, &y).unwrap();
        prop_assert!((c - pearson_corr(&y, &x).unwrap()).abs() < 1e-12);
        let a = if neg { -a } else { a };
        let t: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson_corr(&t, &y).unwrap() - a.signum() * c).abs() < 1e-9);
    }

    #[test]
    fn multiple_corr_ignores_recombination(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 40;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|row| row[0] - 2.0 * row[2] + r.random_range(-1.0..1.0)).collect();
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r.random_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 };
            }
        }
        let mixed: Vec<Vec<f64>> = x
            .iter()
            .map(|row| (0..3).map(|j| (0..3).map(|i| row[i] * a[i][j]).sum::<f64>() + 5.0).collect())
            .collect();
        let before = multiple_corr(&Matrix::from_rows(&x), &y);
        let after = multiple_corr(&Matrix::from_rows(&mixed), &y);
        prop_assert!((before - after).abs() < 1e-5, "{} vs {}", before, after);
    }

    #[test]
    fn residualize_is_idempotent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Matrix::from_rows(&(0..30).map(|_| (0..2).map(|_| r.random_range(-5.0..5.0)).collect()).collect::<Vec<_>>());
        let y: Vec<f64> = (0..30).map(|_| r.random_range(-5.0..5.0)).collect();
        let once = residualize(&y, &[&x]);
        let twice = residualize(&once, &[&x]);
        prop_assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() <= 1e-8));
    }

    #[test]
    fn ols_matches_normal_equations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let fit = ols_fit(&Matrix::from_rows(&rows), &y);
        let design = DMatrix::from_fn(10, 4, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        let gram = design.transpose() * &design;
        prop_assume!(gram.clone().symmetric_eigenvalues().min() > 1e-2);
        let beta = gram.cholesky().unwrap().solve(&(design.transpose() * DVector::from_vec(y)));
        prop_assert!((fit.intercept - beta[0]).abs() < 1e-6);
        for (c, b) in fit.coef.iter().zip(beta.iter().skip(1)) {
            prop_assert!((c - b).abs() < 1e-6);
        }
    }
}

// search

fn small_search_config(seed: u64) -> SearchConfig {
    SearchConfig {
        max_depth: 3,
        num_stats: 3,
        batch_size: 16,
        simulations: 40,
        seed,
        ..SearchConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tree_statistics_are_bounded(seed in any::<u64>(), iterations in 1usize..80) {
        let d = random_dataset(40, seed);
        let grammar = Grammar::new(d.schema(), 3);
        let excluded = HashSet::new();
        let config = small_search_config(seed);
        let search = Search { dataset: &d, grammar: &grammar, target: d.scores(), excluded: &excluded, config: &config };
        let mut tree = SearchTree::new(StatisticChain::default());
        let mut r = rng(seed);
        for _ in 0..iterations {
            search.grow_tree(&mut tree, &mut r).unwrap();
        }
        prop_assert_eq!(tree.root().visits as usize, iterations);
        for node in tree.nodes() {
            if node.visits > 0 {
                let q = node.mean_reward();
                prop_assert!((0.0..=1.0).contains(&q));
            }
            prop_assert!(node.state.len() <= 3);
            if node.state.is_terminal() {
                prop_assert!(is_valid(&node.state, d.schema(), 3));
            }
        }
        let root_children = grammar.valid_next_operators(&StatisticChain::default(), &excluded).len();
        if iterations >= root_children {
            prop_assert_eq!(tree.root().children.len(), root_children);
            for &c in &tree.root().children {
                prop_assert!(tree.node(c).visits >= 1);
            }
        }
    }

    #[test]
    fn top_k_is_deterministic_and_fit_is_monotone(seed in any::<u64>()) {
        let d = random_dataset(60, seed);
        let cfg = small_search_config(seed);
        let a = generate_top_k(&d, d.scores(), &cfg).unwrap();
        let b = generate_top_k(&d, d.scores(), &cfg).unwrap();
        prop_assert_eq!(a.len(), b.len());
        let mut last = 0.0;
        let mut acc: Vec<&Matrix> = Vec::new();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.chain, &y.chain);
            prop_assert_eq!(x.values.as_slice(), y.values.as_slice());
            prop_assert!(is_valid(&x.chain, d.schema(), cfg.max_depth));
            acc.push(&x.values);
            let fit = multiple_corr(&Matrix::hconcat(&acc), d.scores());
            prop_assert!(fit >= last - 1e-8, "{} after {}", fit, last);
            last = fit;
        }
    }
}

// binarize

proptest! {
    #[test]
    fn literals_are_nested(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![r.random_range(-5.0..5.0), f64::from(r.random_range(0..4)), f64::from(r.random_range(0..2))])
            .collect();
        let values = Matrix::from_rows(&rows);
        let model = fit_thresholds(&values).unwrap();
        let bits = model.transform(&values).unwrap();
        let mut start = 0;
        for cut in model.columns.iter().map(|c| c.cuts().len()) {
            let means: Vec<f64> = (start..start + cut)
                .map(|c| bits.column(c).iter().map(|&b| f64::from(b)).sum::<f64>() / 50.0)
                .collect();
            for k in start + 1..start + cut {
                for row in 0..bits.rows() {
                    prop_assert!(bits.row(row)[k - 1] >= bits.row(row)[k]);
                }
            }
            prop_assert!(means.windows(2).all(|w| w[0] >= w[1]));
            start += cut;
        }
        prop_assert_eq!(model.columns[0].cuts().len(), LEVELS.len());
        prop_assert_eq!(model.columns[2].cuts().len(), 1);
    }

    #[test]
    fn descriptors_round_trip(seed in any::<u64>(), threshold in any::<f64>().prop_filter("finite", |t| t.is_finite())) {
        let schema = three_column_schema();
        let mut r = rng(seed);
        let chain = random_chain(&Grammar::new(&schema, 4), &mut r);
        let dims = chain.output_dim(&schema);
        let dim = if dims > 1 { Some(r.random_range(0..dims)) } else { None };
        let d = LiteralDescriptor { chain, dim, threshold };
        prop_assert_eq!(LiteralDescriptor::parse(&d.render(&schema), &schema).unwrap(), d);
    }
}

// logical network

fn params_strategy() -> impl Strategy<Value = (NlnParams, u64)> {
    (1usize..6, 1usize..4, 1usize..4, 1usize..4, any::<u64>()).prop_map(|(p, l, h, r2, seed)| {
        let mut r = rng(seed);
        (NlnParams::random(p, l, h, 2 * r2, 2.0, &mut r), seed)
    })
}

proptest! {
    #[test]
    fn relaxed_activations_stay_in_unit_interval((params, seed) in params_strategy(), tau in 1e-3f64..10.0) {
        let mut r = rng(seed ^ 1);
        let z0: Vec<f64> = (0..params.input_dim()).map(|_| r.random_range(0.0..=1.0)).collect();
        let trace = forward_soft(&params, &z0, tau, &Noise::sample(&params, &mut r)).unwrap();
        for layer in &trace.z {
            prop_assert!(layer.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn hard_pass_depends_only_on_logit_order((params, seed) in params_strategy(), scale in 0.1f64..5.0) {
        let mut r = rng(seed ^ 2);
        let mut warped = params.clone();
        for l in &mut warped.layers {
            for w in &mut l.logits {
                *w = (scale * *w).exp() + w.powi(3);
            }
        }
        let p = (params.input_dim() - 2) / 2;
        for _ in 0..16 {
            let z: Vec<u8> = (0..p).map(|_| r.random_range(0..2)).collect();
            let a = forward_hard(&params, &augment(&z));
            let b = forward_hard(&warped, &augment(&z));
            prop_assert_eq!(a.activations, b.activations);
        }
    }

    #[test]
    fn rules_equal_hard_network((params, seed) in params_strategy()) {
        let mut r = rng(seed ^ 3);
        let p = (params.input_dim() - 2) / 2;
        let literals = (0..p)
            .map(|i| LiteralDescriptor {
                chain: StatisticChain::new(vec![Operator::Select(1), Operator::Agg(Aggregation::Sum)]),
                dim: None,
                threshold: i as f64,
            })
            .collect();
        let rules = extract(&params, literals).unwrap();
        for _ in 0..32 {
            let z: Vec<u8> = (0..p).map(|_| r.random_range(0..2)).collect();
            prop_assert_eq!(rules.score(&z).unwrap().to_bits(), forward_hard(&params, &augment(&z)).y.to_bits());
        }
    }

    #[test]
    fn objective_ignores_batch_order(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..20), i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>()) {
        let (mut s, mut y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let before = ranking_objective(&s, &y);
        let (i, j) = (i.index(s.len()), j.index(s.len()));
        s.swap(i, j);
        y.swap(i, j);
        prop_assert!((ranking_objective(&s, &y) - before).abs() < 1e-12);
    }
}

/// One layer whose conjunction reads (a, b) and disjunction reads (1-a, 1-b).
#[test]
fn de_morgan_at_hard_wiring() {
    let mut params = NlnParams::zeros(2, 1, 1, 2);
    let layer = &mut params.layers[0];
    let n = layer.input_dim;
    for (s, input) in [0, 1, 2, 3].into_iter().enumerate() {
        layer.logits[s * n + input] = 1.0;
    }
    params.weights = vec![1.0, 1.0];
    for z in [[0, 0], [0, 1], [1, 0], [1, 1]] {
        let out = forward_hard(&params, &augment(&z));
        assert_eq!(out.activations[0][1], 1 - out.activations[0][0], "{z:?}");
    }
}

// metrics and expressions

fn distinct(v: Vec<f64>) -> Vec<f64> {
    v.into_iter()
        .enumerate()
        .map(|(i, x)| x + i as f64 * 1e-7)
        .collect()
}

proptest! {
    #[test]
    fn fidelity_complement_without_ties(y in vec_strategy(30), s in vec_strategy(30)) {
        let (y, s) = (distinct(y), distinct(s));
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((fidelity(&y, &s).unwrap() + fidelity(&y, &neg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_increasing_transforms(y in prop::collection::vec(-3i32..3, 3..40), s in prop::collection::vec(-3i32..3, 3..40)) {
        let n = y.len().min(s.len());
        let y: Vec<f64> = y[..n].iter().map(|&v| f64::from(v)).collect();
        let s: Vec<f64> = s[..n].iter().map(|&v| f64::from(v)).collect();
        let t: Vec<f64> = s.iter().map(|v| v.powi(3) + (v / 2.0).exp()).collect();
        prop_assert!((fidelity(&y, &s).unwrap() - fidelity(&y, &t).unwrap()).abs() < 1e-12);
        let labels: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
        if let (Ok(a), Ok(b)) = (auc(&labels, &s), auc(&labels, &t)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn simplify_preserves_semantics(e in expr_strategy()) {
        let simple = e.simplify();
        for m in 0u8..16 {
            let z: Vec<u8> = (0..4).map(|k| (m >> k) & 1).collect();
            prop_assert_eq!(simple.eval(&z), e.eval(&z));
        }
        prop_assert!(simple.literal_count() <= e.literal_count());
    }
}

fn expr_strategy() -> impl Strategy<Value = BoolExpr> {
    let leaf = prop_oneof![
        any::<bool>().prop_map(BoolExpr::Const),
        (0usize..4).prop_map(BoolExpr::Lit),
        (0usize..4).prop_map(BoolExpr::NotLit),
    ];
    leaf.prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| BoolExpr::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| BoolExpr::or(a, b)),
        ]
    })
}
