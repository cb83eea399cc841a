//! Reference implementations used as test oracles. They follow the operator
//! definitions literally (copying and rewriting a table of string/number
//! cells) and share no code with the library's evaluator or grammar.

#![allow(dead_code)]

use seqrules::dataset::{Column, ColumnValues, EventSequence, Schema};
use seqrules::operators::{Aggregation, Operator, SortOrder, PERCENTILES};

#[derive(Clone, Debug)]
enum Cell {
    Cat(String),
    Num(f64),
}

impl Cell {
    fn num(&self) -> f64 {
        match self {
            Cell::Num(v) => *v,
            Cell::Cat(_) => panic!("numeric cell expected"),
        }
    }

    fn cat(&self) -> &str {
        match self {
            Cell::Cat(s) => s,
            Cell::Num(_) => panic!("categorical cell expected"),
        }
    }
}

type Row = Vec<Cell>;

fn table(schema: &Schema, seq: &EventSequence) -> Vec<Row> {
    (0..seq.len())
        .map(|r| {
            schema
                .columns()
                .iter()
                .enumerate()
                .map(|(c, col)| match seq.column(c) {
                    ColumnValues::Categorical(v) => {
                        Cell::Cat(col.vocab().unwrap()[v[r] as usize].clone())
                    }
                    ColumnValues::Numerical(v) => Cell::Num(v[r]),
                })
                .collect()
        })
        .collect()
}

/// Aggregation of a plain list of numbers; empty lists give 0.
pub fn reduce(agg: Aggregation, v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mut total = 0.0;
    for x in v {
        total += x;
    }
    match agg {
        Aggregation::Sum => total,
        Aggregation::Mean => total / n,
        Aggregation::Count => n,
        Aggregation::First => v[0],
        Aggregation::Max => {
            let mut m = v[0];
            for &x in v {
                if x > m {
                    m = x;
                }
            }
            m
        }
        Aggregation::Min => {
            let mut m = v[0];
            for &x in v {
                if x < m {
                    m = x;
                }
            }
            m
        }
        Aggregation::Ptp => reduce(Aggregation::Max, v) - reduce(Aggregation::Min, v),
        Aggregation::Std => {
            let mean = total / n;
            let mut ss = 0.0;
            for x in v {
                ss += (x - mean).powi(2);
            }
            (ss / n).sqrt()
        }
        Aggregation::Percentile(k) => {
            let mut s = v.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos = f64::from(k) / 100.0 * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            if lo + 1 >= s.len() {
                s[lo]
            } else {
                s[lo] + (pos - lo as f64) * (s[lo + 1] - s[lo])
            }
        }
    }
}

/// Direct interpretation of a valid chain on one sequence.
pub fn brute_evaluate(ops: &[Operator], schema: &Schema, seq: &EventSequence) -> Vec<f64> {
    let mut rows = table(schema, seq);
    let Operator::Select(target) = ops[0] else {
        panic!("chain must start with Select")
    };
    let mut groups: Option<(usize, Vec<String>)> = None;
    for op in &ops[1..] {
        match *op {
            Operator::FilterBy { column, category } => {
                let name = &schema.column(column).vocab().unwrap()[category as usize];
                rows.retain(|r| r[column].cat() != name);
            }
            Operator::RetainBy { column, category } => {
                let name = &schema.column(column).vocab().unwrap()[category as usize];
                rows.retain(|r| r[column].cat() == name);
            }
            Operator::SortBy { column, order } => {
                // insertion sort is stable
                let mut sorted: Vec<Row> = Vec::new();
                for r in rows {
                    let key = r[column].num();
                    let at = sorted
                        .iter()
                        .position(|s| match order {
                            SortOrder::Asc => s[column].num() > key,
                            SortOrder::Desc => s[column].num() < key,
                        })
                        .unwrap_or(sorted.len());
                    sorted.insert(at, r);
                }
                rows = sorted;
            }
            Operator::Top5 => rows.truncate(5),
            Operator::Abs => {
                for r in &mut rows {
                    r[target] = Cell::Num(r[target].num().abs());
                }
            }
            Operator::GroupBy(g) => groups = Some((g, schema.column(g).vocab().unwrap().to_vec())),
            Operator::Agg(agg) => {
                let reduce_rows = |rows: &[Row]| -> Vec<f64> {
                    match schema.column(target).vocab() {
                        Some(vocab) => vocab
                            .iter()
                            .map(|v| {
                                let ind: Vec<f64> = rows
                                    .iter()
                                    .map(|r| if r[target].cat() == v { 1.0 } else { 0.0 })
                                    .collect();
                                reduce(agg, &ind)
                            })
                            .collect(),
                        None => vec![reduce(
                            agg,
                            &rows.iter().map(|r| r[target].num()).collect::<Vec<_>>(),
                        )],
                    }
                };
                return match &groups {
                    None => reduce_rows(&rows),
                    Some((g, vocab)) => vocab
                        .iter()
                        .flat_map(|v| {
                            let cell: Vec<Row> =
                                rows.iter().filter(|r| r[*g].cat() == v).cloned().collect();
                            reduce_rows(&cell)
                        })
                        .collect(),
                };
            }
            Operator::Select(_) => panic!("second Select"),
        }
    }
    panic!("chain has no aggregation")
}

/// Validity straight from the composition rules.
pub fn oracle_is_valid(ops: &[Operator], schema: &Schema, depth: usize) -> bool {
    if ops.len() < 2 || ops.len() > depth {
        return false;
    }
    let cat = |c: usize| c < schema.len() && schema.column(c).is_categorical();
    let num = |c: usize| c < schema.len() && !schema.column(c).is_categorical();
    let Operator::Select(t) = ops[0] else {
        return false;
    };
    if t >= schema.len() {
        return false;
    }
    let aggs = ops.iter().filter(|o| matches!(o, Operator::Agg(_))).count();
    if aggs != 1 || !matches!(ops[ops.len() - 1], Operator::Agg(_)) {
        return false;
    }
    for (i, op) in ops.iter().enumerate().skip(1) {
        let ok = match *op {
            Operator::Select(_) => false,
            Operator::Agg(Aggregation::Percentile(k)) => PERCENTILES.contains(&k),
            Operator::Agg(_) => true,
            Operator::GroupBy(g) => cat(g) && num(t) && i == ops.len() - 2,
            Operator::FilterBy { column, category } => {
                cat(column)
                    && (category as usize) < schema.column(column).vocab().unwrap().len()
                    && ops[1..i].iter().all(|o| o != op)
            }
            Operator::RetainBy { column, category } => {
                cat(column) && (category as usize) < schema.column(column).vocab().unwrap().len()
            }
            Operator::SortBy { column, .. } => num(column),
            Operator::Top5 => true,
            Operator::Abs => num(t),
        };
        if !ok {
            return false;
        }
    }
    true
}

pub fn three_column_schema() -> Schema {
    Schema::new(vec![
        Column::categorical("kind", &["A", "B", "C"]),
        Column::numerical("x"),
        Column::numerical("y"),
    ])
    .unwrap()
}

/// Random sequence with 1 to `max_len` rows; numbers are drawn from a
/// small grid so ties occur.
pub fn random_sequence<R: rand::Rng>(
    schema: &Schema,
    max_len: usize,
    id: &str,
    rng: &mut R,
) -> EventSequence {
    let len = rng.random_range(1..=max_len);
    let cols = schema
        .columns()
        .iter()
        .map(|c| match c.vocab() {
            Some(v) => ColumnValues::Categorical(
                (0..len)
                    .map(|_| rng.random_range(0..v.len() as u32))
                    .collect(),
            ),
            None => ColumnValues::Numerical(
                (0..len)
                    .map(|_| f64::from(rng.random_range(-20..=20)) * 0.5)
                    .collect(),
            ),
        })
        .collect();
    EventSequence::new(id, cols, schema).unwrap()
}

/// Fraction of ordered pairs whose strict orders agree, by enumeration.
pub fn brute_fidelity(y: &[f64], s: &[f64]) -> f64 {
    let n = y.len();
    let mut agree = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && (y[i] > y[j]) == (s[i] > s[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / (n * (n - 1)) as f64
}

/// AUC by enumerating positive/negative pairs.
pub fn brute_auc(labels: &[bool], s: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}
