//! Synthetic teachers with known generating statistics or rules.
//!
//! All fixtures share one schema: `type` in {A, B, C, D}, `channel` in
//! {web, app, pos}, log-normal `amount` and `duration`, and 5 to 30 events
//! per user.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::binarize::LiteralDescriptor;
use crate::dataset::{Column, ColumnValues, Dataset, EventSequence, Schema};
use crate::error::{Error, Result};
use crate::numerics::{percentile, zscore, Matrix};
use crate::operators::{evaluate_column, format_chain, parse_labeled, StatisticChain};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fixture {
    /// `y = Sum∘RetainBy[type=A]∘Select[amount]` plus 1% noise
    SingleSignal,
    /// sum of two standardized, independent statistics plus 1% noise
    TwoSignal,
    /// weighted sum of three boolean rules, no noise
    RuleTeacher,
}

impl Fixture {
    pub const ALL: [Fixture; 3] = [
        Fixture::SingleSignal,
        Fixture::TwoSignal,
        Fixture::RuleTeacher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::SingleSignal => "single-signal",
            Fixture::TwoSignal => "two-signal",
            Fixture::RuleTeacher => "rule-teacher",
        }
    }
}

impl FromStr for Fixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fixture::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFixture(s.to_string()))
    }
}

/// A conjunction of literals with a weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherRule {
    pub weight: f64,
    pub literals: Vec<String>,
}

/// Ground truth of a generated fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fixture: String,
    pub n: usize,
    pub seed: u64,
    /// generating statistics, DSL form
    pub statistics: Vec<String>,
    pub rules: Vec<TeacherRule>,
    pub noise_std: f64,
}

pub fn schema() -> Schema {
    Schema::new(vec![
        Column::categorical("type", &["A", "B", "C", "D"]),
        Column::categorical("channel", &["web", "app", "pos"]),
        Column::numerical("amount"),
        Column::numerical("duration"),
    ])
    .expect("fixed schema is valid")
}

fn sequences<R: Rng + ?Sized>(schema: &Schema, n: usize, rng: &mut R) -> Vec<EventSequence> {
    let amount = LogNormal::new(3.0, 1.0).expect("valid parameters");
    let duration = LogNormal::new(1.0, 0.8).expect("valid parameters");
    (0..n)
        .map(|i| {
            let len = rng.random_range(5..=30);
            let types = (0..len).map(|_| rng.random_range(0..4)).collect();
            let channels = (0..len).map(|_| rng.random_range(0..3)).collect();
            let amounts = (0..len).map(|_| amount.sample(rng)).collect();
            let durations = (0..len).map(|_| duration.sample(rng)).collect();
            EventSequence::new(
                format!("user{i:05}"),
                vec![
                    ColumnValues::Categorical(types),
                    ColumnValues::Categorical(channels),
                    ColumnValues::Numerical(amounts),
                    ColumnValues::Numerical(durations),
                ],
                schema,
            )
            .expect("generated rows match the schema")
        })
        .collect()
}

fn chain(schema: &Schema, text: &str) -> StatisticChain {
    parse_labeled(text, schema).expect("fixture chain parses").0
}

/// Column `dim` of the statistic written in `text` (which may carry a label).
fn statistic(
    schema: &Schema,
    seqs: &[EventSequence],
    text: &str,
) -> (StatisticChain, Option<usize>, Vec<f64>) {
    let (c, dim) = parse_labeled(text, schema).expect("fixture chain parses");
    let probe = Dataset::new(schema.clone(), seqs.to_vec(), vec![0.0; seqs.len()]).expect("n >= 2");
    let all: Vec<usize> = (0..seqs.len()).collect();
    let m: Matrix = evaluate_column(&c, &probe, &all);
    let col = m.column(dim.unwrap_or(0));
    (c, dim, col)
}

/// Generates a fixture with `n` users.
pub fn make_synthetic(fixture: Fixture, n: usize, seed: u64) -> Result<(Dataset, Manifest)> {
    if n < 2 {
        return Err(Error::Dataset("a fixture needs at least 2 users".into()));
    }
    let schema = schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs = sequences(&schema, n, &mut rng);
    let mut statistics = Vec::new();
    let mut rules = Vec::new();
    let mut noise_std = 0.0;
    let y: Vec<f64> = match fixture {
        Fixture::SingleSignal => {
            let (c, _, s) = statistic(&schema, &seqs, "Sum∘RetainBy[type=A]∘Select[amount]");
            statistics.push(format_chain(&c, &schema));
            noise_std = 0.01 * std(&s);
            add_noise(&s, noise_std, &mut rng)
        }
        Fixture::TwoSignal => {
            let (c1, _, s1) = statistic(&schema, &seqs, "Sum∘RetainBy[type=A]∘Select[amount]");
            let (c2, _, s2) = statistic(&schema, &seqs, "Mean∘Select[duration]");
            statistics.push(format_chain(&c1, &schema));
            statistics.push(format_chain(&c2, &schema));
            let sum: Vec<f64> = zscore(&s1)
                .iter()
                .zip(zscore(&s2))
                .map(|(a, b)| a + b)
                .collect();
            noise_std = 0.01 * std(&sum);
            add_noise(&sum, noise_std, &mut rng)
        }
        Fixture::RuleTeacher => {
            // (weight, [(statistic, decile)])
            let spec: [(f64, &[(&str, f64)]); 3] = [
                (1.0, &[("Sum∘Select[type=A]", 60.0)]),
                (
                    0.6,
                    &[
                        ("Sum∘Select[channel=app]", 50.0),
                        ("Mean∘Select[duration]", 40.0),
                    ],
                ),
                (-0.8, &[("Max∘Select[amount]", 80.0)]),
            ];
            let mut y = vec![0.0; n];
            for (weight, lits) in spec {
                let mut fires = vec![true; n];
                let mut rendered = Vec::new();
                for &(text, level) in lits {
                    let (c, dim, values) = statistic(&schema, &seqs, text);
                    let threshold = percentile(&values, level)?;
                    for (f, v) in fires.iter_mut().zip(&values) {
                        *f &= *v > threshold;
                    }
                    let base = format_chain(&c, &schema);
                    if !statistics.contains(&base) {
                        statistics.push(base);
                    }
                    rendered.push(
                        LiteralDescriptor {
                            chain: c,
                            dim,
                            threshold,
                        }
                        .render(&schema),
                    );
                }
                for (t, f) in y.iter_mut().zip(&fires) {
                    if *f {
                        *t += weight;
                    }
                }
                rules.push(TeacherRule {
                    weight,
                    literals: rendered,
                });
            }
            y
        }
    };
    for s in &statistics {
        debug_assert!(crate::operators::is_valid(&chain(&schema, s), &schema, 4));
    }
    let dataset = Dataset::new(schema, seqs, y)?;
    Ok((
        dataset,
        Manifest {
            fixture: fixture.name().to_string(),
            n,
            seed,
            statistics,
            rules,
            noise_std,
        },
    ))
}

fn std(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn add_noise<R: Rng + ?Sized>(signal: &[f64], sd: f64, rng: &mut R) -> Vec<f64> {
    if sd == 0.0 {
        return signal.to_vec();
    }
    let normal = Normal::new(0.0, sd).expect("finite std");
    signal.iter().map(|s| s + normal.sample(rng)).collect()
}

/// Writes `events.csv`, `schema.toml`, `scores.csv` and `manifest.json`.
pub fn write_fixture(dir: &Path, dataset: &Dataset, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset.write(
        &dir.join("events.csv"),
        &dir.join("schema.toml"),
        &dir.join("scores.csv"),
    )?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}
