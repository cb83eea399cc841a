//! Operator algebra for statistics over event sequences.
//!
//! A statistic is a chain of operators applied left to right: a `Select`
//! choosing the target column, any number of filtering / ordering /
//! transforming operators, an optional `GroupBy`, and one terminal aggregation.

mod dsl;
mod eval;
mod grammar;

pub use dsl::{format_chain, format_labeled, parse_chain, parse_labeled};
pub use eval::{aggregate, evaluate, evaluate_column};
pub use grammar::{is_valid, Grammar, DEFAULT_DEPTH};

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, Schema};

pub const PERCENTILES: [u8; 7] = [5, 10, 25, 50, 75, 90, 95];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aggregation {
    Mean,
    Max,
    Min,
    Sum,
    Std,
    Ptp,
    Count,
    First,
    Percentile(u8),
}

impl Aggregation {
    pub fn all() -> impl Iterator<Item = Aggregation> {
        use Aggregation::*;
        [Mean, Max, Min, Sum, Std, Ptp, Count, First]
            .into_iter()
            .chain(PERCENTILES.iter().map(|&k| Percentile(k)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SortOrder {
    Asc,
    Desc,
}

/// Column and category arguments are indices into the schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    Select(usize),
    Agg(Aggregation),
    GroupBy(usize),
    FilterBy { column: usize, category: u32 },
    RetainBy { column: usize, category: u32 },
    SortBy { column: usize, order: SortOrder },
    Top5,
    Abs,
}

impl Operator {
    pub fn is_aggregation(&self) -> bool {
        matches!(self, Operator::Agg(_))
    }
}

/// Every operator the schema admits, in canonical enumeration order:
/// selects, aggregations, group-bys, filters, retains, sorts, `Top5`, `Abs`.
/// Tie-breaking everywhere in the search follows this order.
pub fn canonical_operators(schema: &Schema) -> Vec<Operator> {
    let cols = schema.columns();
    let categorical: Vec<(usize, usize)> = cols
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.vocab().map(|v| (i, v.len())))
        .collect();
    let mut ops: Vec<Operator> = (0..cols.len()).map(Operator::Select).collect();
    ops.extend(Aggregation::all().map(Operator::Agg));
    ops.extend(categorical.iter().map(|&(c, _)| Operator::GroupBy(c)));
    for &(column, p) in &categorical {
        ops.extend((0..p as u32).map(|category| Operator::FilterBy { column, category }));
    }
    for &(column, p) in &categorical {
        ops.extend((0..p as u32).map(|category| Operator::RetainBy { column, category }));
    }
    for (column, c) in cols.iter().enumerate() {
        if matches!(c.kind, ColumnKind::Numerical) {
            for order in [SortOrder::Asc, SortOrder::Desc] {
                ops.push(Operator::SortBy { column, order });
            }
        }
    }
    ops.push(Operator::Top5);
    ops.push(Operator::Abs);
    ops
}

/// Operators in application order: `ops[0]` is applied first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StatisticChain {
    ops: Vec<Operator>,
}

impl StatisticChain {
    pub fn new(ops: Vec<Operator>) -> Self {
        StatisticChain { ops }
    }

    pub fn ops(&self) -> &[Operator] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn then(&self, op: Operator) -> StatisticChain {
        let mut ops = self.ops.clone();
        ops.push(op);
        StatisticChain { ops }
    }

    pub fn push(&mut self, op: Operator) {
        self.ops.push(op);
    }

    pub fn starts_with(&self, prefix: &StatisticChain) -> bool {
        self.ops.starts_with(&prefix.ops)
    }

    /// Ends with an aggregation. For chains built through [`Grammar`] this is
    /// the same as being a complete statistic.
    pub fn is_terminal(&self) -> bool {
        self.ops.last().is_some_and(Operator::is_aggregation)
    }

    pub fn target(&self) -> Option<usize> {
        match self.ops.first() {
            Some(Operator::Select(c)) => Some(*c),
            _ => None,
        }
    }

    pub fn group_column(&self) -> Option<usize> {
        self.ops.iter().find_map(|op| match op {
            Operator::GroupBy(c) => Some(*c),
            _ => None,
        })
    }

    /// Number of output entries: the target's vocab size for a categorical
    /// target, the group column's vocab size under `GroupBy`, else 1.
    pub fn output_dim(&self, schema: &Schema) -> usize {
        let Some(target) = self.target() else {
            return 0;
        };
        if let Some(v) = schema.column(target).vocab() {
            return v.len();
        }
        match self.group_column() {
            Some(g) => schema.column(g).vocab().map_or(1, <[String]>::len),
            None => 1,
        }
    }

    /// Vocab labels of the output dimensions, `None` for scalar statistics.
    pub fn dimension_labels<'a>(&self, schema: &'a Schema) -> Option<&'a [String]> {
        let target = self.target()?;
        schema
            .column(target)
            .vocab()
            .or_else(|| self.group_column().and_then(|g| schema.column(g).vocab()))
    }
}
