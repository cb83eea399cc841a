use std::collections::HashSet;

use super::{canonical_operators, Aggregation, Operator, StatisticChain, PERCENTILES};
use crate::dataset::Schema;

pub const DEFAULT_DEPTH: usize = 4;

/// Local composition rule: may `op` be appended to `prefix`? Depth is not
/// considered here.
fn may_follow(schema: &Schema, prefix: &[Operator], op: Operator) -> bool {
    let categorical_with = |column: usize, category: Option<u32>| {
        column < schema.len()
            && schema
                .column(column)
                .vocab()
                .is_some_and(|v| category.is_none_or(|c| (c as usize) < v.len()))
    };
    let Some(first) = prefix.first() else {
        return matches!(op, Operator::Select(c) if c < schema.len());
    };
    let Operator::Select(target) = *first else {
        return false;
    };
    let last = prefix[prefix.len() - 1];
    if last.is_aggregation() {
        return false;
    }
    let numerical_target = !schema.column(target).is_categorical();
    match op {
        Operator::Select(_) => false,
        Operator::Agg(Aggregation::Percentile(k)) => PERCENTILES.contains(&k),
        Operator::Agg(_) => true,
        _ if matches!(last, Operator::GroupBy(_)) => false,
        Operator::GroupBy(c) => numerical_target && categorical_with(c, None),
        Operator::FilterBy { column, category } => {
            categorical_with(column, Some(category)) && !prefix.contains(&op)
        }
        Operator::RetainBy { column, category } => categorical_with(column, Some(category)),
        Operator::SortBy { column, .. } => {
            column < schema.len() && !schema.column(column).is_categorical()
        }
        Operator::Top5 => true,
        Operator::Abs => numerical_target,
    }
}

/// True iff `chain` is a complete statistic of depth at most `max_depth`:
/// a `Select`, then non-aggregating operators (a `GroupBy` only directly
/// before the aggregation and only on a numerical target, `Abs` only on a
/// numerical target, no repeated identical `FilterBy`), then one aggregation.
pub fn is_valid(chain: &StatisticChain, schema: &Schema, max_depth: usize) -> bool {
    let ops = chain.ops();
    if ops.len() < 2 || ops.len() > max_depth || !chain.is_terminal() {
        return false;
    }
    (0..ops.len()).all(|i| may_follow(schema, &ops[..i], ops[i]))
}

/// The statistic grammar for one schema and depth bound.
#[derive(Clone, Debug)]
pub struct Grammar {
    schema: Schema,
    max_depth: usize,
    ops: Vec<Operator>,
}

impl Grammar {
    pub fn new(schema: &Schema, max_depth: usize) -> Self {
        Grammar {
            schema: schema.clone(),
            max_depth,
            ops: canonical_operators(schema),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// All operators, canonical order.
    pub fn operators(&self) -> &[Operator] {
        &self.ops
    }

    pub fn is_valid(&self, chain: &StatisticChain) -> bool {
        is_valid(chain, &self.schema, self.max_depth)
    }

    /// Is there a valid statistic extending `chain` (possibly `chain` itself)
    /// that is not in `excluded`?
    pub fn has_completion(
        &self,
        chain: &StatisticChain,
        excluded: &HashSet<StatisticChain>,
    ) -> bool {
        if chain.is_terminal() {
            return !excluded.contains(chain);
        }
        if chain.len() >= self.max_depth || (chain.is_empty() && self.max_depth < 2) {
            return false;
        }
        // Any non-terminal prefix with room left can be closed by an
        // aggregation, so only excluded chains can block it.
        if !excluded.iter().any(|e| e.starts_with(chain)) {
            return true;
        }
        self.ops
            .iter()
            .filter(|&&op| may_follow(&self.schema, chain.ops(), op))
            .any(|&op| self.has_completion(&chain.then(op), excluded))
    }

    /// Operators `T` such that `prefix` followed by `T` still has a
    /// non-excluded valid completion within the depth bound, canonical order.
    pub fn valid_next_operators(
        &self,
        prefix: &StatisticChain,
        excluded: &HashSet<StatisticChain>,
    ) -> Vec<Operator> {
        if prefix.is_terminal() || prefix.len() >= self.max_depth {
            return Vec::new();
        }
        self.ops
            .iter()
            .copied()
            .filter(|&op| may_follow(&self.schema, prefix.ops(), op))
            .filter(|&op| self.has_completion(&prefix.then(op), excluded))
            .collect()
    }
}
