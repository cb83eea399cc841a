use super::{Aggregation, Operator, SortOrder, StatisticChain};
use crate::dataset::{ColumnValues, Dataset, EventSequence, Schema};
use crate::numerics::{percentile, Matrix};

/// Reduces `values` with `agg`. An empty input yields 0 for every aggregation.
pub fn aggregate(agg: Aggregation, values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    match agg {
        Aggregation::Mean => values.iter().sum::<f64>() / n,
        Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Sum => values.iter().sum(),
        Aggregation::Std => {
            let mean = values.iter().sum::<f64>() / n;
            (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
        }
        Aggregation::Ptp => {
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        }
        Aggregation::Count => n,
        Aggregation::First => values[0],
        Aggregation::Percentile(k) => percentile(values, k as f64).expect("non-empty"),
    }
}

/// Evaluates a valid chain on one sequence. Scalar statistics return a single
/// entry; categorical targets return one entry per vocab entry of the target
/// and grouped statistics one entry per vocab entry of the group column.
///
/// Panics if `chain` does not start with a `Select` or end with an aggregation.
pub fn evaluate(chain: &StatisticChain, schema: &Schema, seq: &EventSequence) -> Vec<f64> {
    let mut out = Vec::new();
    evaluate_into(chain, schema, seq, &mut out);
    out
}

pub(crate) fn evaluate_into(
    chain: &StatisticChain,
    schema: &Schema,
    seq: &EventSequence,
    out: &mut Vec<f64>,
) {
    let ops = chain.ops();
    let Some(&Operator::Select(target)) = ops.first() else {
        panic!("statistic must start with Select");
    };
    let Some(&Operator::Agg(agg)) = ops.last() else {
        panic!("statistic must end with an aggregation");
    };
    out.clear();

    let mut rows: Vec<usize> = (0..seq.len()).collect();
    let mut abs = false;
    let mut group = None;
    for op in &ops[1..ops.len() - 1] {
        match *op {
            Operator::FilterBy { column, category } => {
                let cats = seq.categories(column);
                rows.retain(|&r| cats[r] != category);
            }
            Operator::RetainBy { column, category } => {
                let cats = seq.categories(column);
                rows.retain(|&r| cats[r] == category);
            }
            Operator::SortBy { column, order } => {
                let vals = seq.numbers(column);
                let key = |r: usize| {
                    if abs && column == target {
                        vals[r].abs()
                    } else {
                        vals[r]
                    }
                };
                // stable, so ties keep their current relative order
                match order {
                    SortOrder::Asc => rows.sort_by(|&a, &b| key(a).total_cmp(&key(b))),
                    SortOrder::Desc => rows.sort_by(|&a, &b| key(b).total_cmp(&key(a))),
                }
            }
            Operator::Top5 => rows.truncate(5),
            Operator::Abs => abs = true,
            Operator::GroupBy(c) => group = Some(c),
            Operator::Select(_) | Operator::Agg(_) => panic!("misplaced {op:?}"),
        }
    }

    let mut buf = Vec::with_capacity(rows.len());
    match seq.column(target) {
        ColumnValues::Numerical(vals) => {
            let value = |r: usize| if abs { vals[r].abs() } else { vals[r] };
            match group {
                None => {
                    buf.extend(rows.iter().map(|&r| value(r)));
                    out.push(aggregate(agg, &buf));
                }
                Some(g) => {
                    let cats = seq.categories(g);
                    let p = schema.column(g).vocab().map_or(0, <[String]>::len);
                    for k in 0..p as u32 {
                        buf.clear();
                        buf.extend(rows.iter().filter(|&&r| cats[r] == k).map(|&r| value(r)));
                        out.push(aggregate(agg, &buf));
                    }
                }
            }
        }
        ColumnValues::Categorical(cats) => {
            let p = schema.column(target).vocab().map_or(0, <[String]>::len);
            for k in 0..p as u32 {
                buf.clear();
                buf.extend(rows.iter().map(|&r| if cats[r] == k { 1.0 } else { 0.0 }));
                out.push(aggregate(agg, &buf));
            }
        }
    }
}

/// Row `i` of the result is `evaluate(chain, dataset.sequence(indices[i]))`.
pub fn evaluate_column(chain: &StatisticChain, dataset: &Dataset, indices: &[usize]) -> Matrix {
    let schema = dataset.schema();
    let dim = chain.output_dim(schema);
    let mut data = Vec::with_capacity(indices.len() * dim);
    let mut row = Vec::with_capacity(dim);
    for &i in indices {
        evaluate_into(chain, schema, dataset.sequence(i), &mut row);
        data.extend_from_slice(&row);
    }
    Matrix::from_vec(indices.len(), dim, data)
}
