//! Browser bindings: evaluate a statistic on pasted events, draw a relaxed
//! selection, and distill a small synthetic teacher into rules.
//!
//! The `*_text` functions hold the logic and return plain strings so they
//! can be tested natively; the exported wrappers only convert errors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use wasm_bindgen::prelude::*;

use seqrules::binarize::{binarize, fit_thresholds, stat_columns};
use seqrules::dataset::{parse_events, Dataset, Schema, Split};
use seqrules::mcts::{generate_top_k, SearchConfig};
use seqrules::nln::{gumbel_softmax as relax, train, NlnConfig, NoiseMode};
use seqrules::numerics::Matrix;
use seqrules::operators::{
    evaluate, evaluate_column, format_labeled, is_valid, parse_chain, StatisticChain,
};
use seqrules::rules::{extract, fidelity};
use seqrules::synthetic::{make_synthetic, Fixture};

/// CSV of the statistic's values, one row per user in order of appearance.
pub fn evaluate_statistic_text(
    events_csv: &str,
    schema_toml: &str,
    dsl: &str,
) -> Result<String, String> {
    let schema = Schema::from_toml(schema_toml).map_err(|e| e.to_string())?;
    let sequences = parse_events(events_csv, &schema).map_err(|e| e.to_string())?;
    let chain = parse_chain(dsl.trim(), &schema).map_err(|e| e.to_string())?;
    if !is_valid(&chain, &schema, chain.len().max(2)) {
        return Err(format!("`{}` is not a valid statistic", dsl.trim()));
    }
    let dims = chain.output_dim(&schema);
    let mut out = String::from("user_id");
    for d in 0..dims {
        let label = format_labeled(&chain, &schema, (dims > 1).then_some(d));
        out.push(',');
        out.push_str(&label);
    }
    out.push('\n');
    for seq in &sequences {
        out.push_str(seq.user_id());
        for v in evaluate(&chain, &schema, seq) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Gumbel noise, relaxed selection and argmax for comma separated logits.
pub fn gumbel_softmax_text(logits: &str, tau: f64, seed: u64) -> Result<String, String> {
    let w: Vec<f64> = logits
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
        })
        .collect::<Result<_, _>>()?;
    if w.is_empty() {
        return Err("no logits given".into());
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(format!("temperature must be positive, got {tau}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gumbel::new(0.0, 1.0).expect("valid parameters");
    let noise: Vec<f64> = w.iter().map(|_| g.sample(&mut rng)).collect();
    let q = relax(&w, &noise, tau);
    let hard = (0..q.len()).fold(0, |best, i| if q[i] > q[best] { i } else { best });
    let list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Ok(format!(
        "noise:     {}\nselection: {}\nargmax:    {hard}\n",
        list(&noise),
        list(&q)
    ))
}

/// Generates the rule-teacher fixture, runs a small search and network,
/// and reports the teacher rules, the learned rules and test fidelity.
pub fn distill_text(users: usize, epochs: usize, seed: u64) -> Result<String, String> {
    let err = |e: seqrules::Error| e.to_string();
    let (data, manifest) = make_synthetic(Fixture::RuleTeacher, users, seed).map_err(err)?;
    let split = Split::new(data.len(), 0.8, data.len() / 10, seed).map_err(err)?;
    let train_set = data.subset(&split.train);
    let search = SearchConfig {
        num_stats: 6,
        simulations: 200,
        seed,
        ..SearchConfig::default()
    };
    let stats = generate_top_k(&train_set, train_set.scores(), &search).map_err(err)?;
    let chains: Vec<_> = stats.iter().map(|s| s.chain.clone()).collect();
    let values = all_values(&data, &chains);
    let model = fit_thresholds(&values.select_rows(&split.train)).map_err(err)?;
    let table = binarize(&values, &model, &stat_columns(&chains, data.schema())).map_err(err)?;
    let y: Vec<f64> = split.train.iter().map(|&i| data.scores()[i]).collect();
    let config = NlnConfig {
        hidden: 8,
        rules: 8,
        epochs,
        noise: NoiseMode::PerBatch,
        seed,
        ..NlnConfig::default()
    };
    let report = train(&table.bits.select_rows(&split.train), &y, &config).map_err(err)?;
    let rules = extract(&report.params, table.descriptors).map_err(err)?;
    let student = rules
        .scores(&table.bits.select_rows(&split.test))
        .map_err(err)?;
    let teacher: Vec<f64> = split.test.iter().map(|&i| data.scores()[i]).collect();
    let fid = fidelity(&teacher, &student).map_err(err)?;

    let mut out = String::from("teacher rules\n");
    for r in &manifest.rules {
        out.push_str(&format!("{:+.4}  {}\n", r.weight, r.literals.join(" AND ")));
    }
    out.push_str("\nlearned rules\n");
    out.push_str(&rules.render(data.schema()));
    out.push_str(&format!(
        "\ntest fidelity {fid:.4} on {} users\n",
        teacher.len()
    ));
    Ok(out)
}

fn all_values(data: &Dataset, chains: &[StatisticChain]) -> Matrix {
    let rows: Vec<usize> = (0..data.len()).collect();
    let cols: Vec<Matrix> = chains
        .iter()
        .map(|c| evaluate_column(c, data, &rows))
        .collect();
    Matrix::hconcat(&cols.iter().collect::<Vec<_>>())
}

#[wasm_bindgen]
pub fn evaluate_statistic(
    events_csv: &str,
    schema_toml: &str,
    dsl: &str,
) -> Result<String, JsError> {
    evaluate_statistic_text(events_csv, schema_toml, dsl).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gumbel_softmax(logits: &str, tau: f64, seed: u32) -> Result<String, JsError> {
    gumbel_softmax_text(logits, tau, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn distill_demo(users: u32, epochs: u32, seed: u32) -> Result<String, JsError> {
    distill_text(users as usize, epochs as usize, u64::from(seed)).map_err(|e| JsError::new(&e))
}
