//! Text form of statistics.
//!
//! ```text
//! chain    := term (sep term)*          outermost operator first
//! sep      := "∘" | "o"                 surrounding whitespace is ignored
//! term     := "Select[" col ("=" cat)? "]"
//!           | "Mean" | "Max" | "Min" | "Sum" | "Std" | "Ptp" | "Count" | "First"
//!           | "Percentile[" k "]"       k in 5,10,25,50,75,90,95
//!           | "GroupBy[" col ("=" cat)? "]"
//!           | "FilterBy[" col "=" cat "]" | "RetainBy[" col "=" cat "]"
//!           | "SortBy[" col "," ("asc" | "desc") "]"
//!           | "Top5" | "Abs"
//! ```
//!
//! `Select[col=cat]` and `GroupBy[col=cat]` name one output dimension of a
//! vector-valued statistic; they are only accepted by [`parse_labeled`].

use super::{Aggregation, Operator, SortOrder, StatisticChain};
use crate::dataset::Schema;
use crate::error::{Error, Result};

pub const SEPARATOR: char = '∘';

const NAMES: &[&str] = &[
    "Select",
    "Mean",
    "Max",
    "Min",
    "Sum",
    "Std",
    "Ptp",
    "Count",
    "First",
    "Percentile",
    "GroupBy",
    "FilterBy",
    "RetainBy",
    "SortBy",
    "Top5",
    "Abs",
];

fn agg_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Mean => "Mean",
        Aggregation::Max => "Max",
        Aggregation::Min => "Min",
        Aggregation::Sum => "Sum",
        Aggregation::Std => "Std",
        Aggregation::Ptp => "Ptp",
        Aggregation::Count => "Count",
        Aggregation::First => "First",
        Aggregation::Percentile(_) => "Percentile",
    }
}

fn format_op(op: Operator, schema: &Schema, label: Option<&str>) -> String {
    let name = |c: usize| schema.column(c).name.as_str();
    let cat = |c: usize, k: u32| {
        schema
            .column(c)
            .vocab()
            .map_or("?", |v| v[k as usize].as_str())
    };
    let labeled = |c: usize| match label {
        Some(l) => format!("{}={l}", name(c)),
        None => name(c).to_string(),
    };
    match op {
        Operator::Select(c) => format!("Select[{}]", labeled(c)),
        Operator::Agg(Aggregation::Percentile(k)) => format!("Percentile[{k}]"),
        Operator::Agg(a) => agg_name(a).to_string(),
        Operator::GroupBy(c) => format!("GroupBy[{}]", labeled(c)),
        Operator::FilterBy { column, category } => {
            format!("FilterBy[{}={}]", name(column), cat(column, category))
        }
        Operator::RetainBy { column, category } => {
            format!("RetainBy[{}={}]", name(column), cat(column, category))
        }
        Operator::SortBy { column, order } => format!(
            "SortBy[{},{}]",
            name(column),
            match order {
                SortOrder::Asc => "asc",
                SortOrder::Desc => "desc",
            }
        ),
        Operator::Top5 => "Top5".into(),
        Operator::Abs => "Abs".into(),
    }
}

/// Renders outermost operator first, e.g. `Sum∘Select[money]`.
pub fn format_chain(chain: &StatisticChain, schema: &Schema) -> String {
    format_labeled(chain, schema, None)
}

/// Like [`format_chain`] but names output dimension `dim` of a vector
/// statistic inside the operator that creates the vector, e.g.
/// `Sum∘Select[card=debit]` or `Mean∘GroupBy[type=A]∘Select[amount]`.
pub fn format_labeled(chain: &StatisticChain, schema: &Schema, dim: Option<usize>) -> String {
    let label = dim.and_then(|d| chain.dimension_labels(schema).map(|v| v[d].as_str()));
    let categorical_target = chain
        .target()
        .is_some_and(|t| schema.column(t).is_categorical());
    let parts: Vec<String> = chain
        .ops()
        .iter()
        .rev()
        .map(|&op| {
            let here = match op {
                Operator::Select(_) => categorical_target,
                Operator::GroupBy(_) => !categorical_target,
                _ => false,
            };
            format_op(op, schema, if here { label } else { None })
        })
        .collect();
    parts.join(&SEPARATOR.to_string())
}

pub fn parse_chain(text: &str, schema: &Schema) -> Result<StatisticChain> {
    let (chain, dim) = parse_labeled(text, schema)?;
    if dim.is_some() {
        return Err(Error::Parse {
            pos: 0,
            msg: "dimension labels are only allowed in literal descriptors".into(),
        });
    }
    Ok(chain)
}

/// Parses a chain that may carry one dimension label; returns the chain and
/// the labeled dimension index.
pub fn parse_labeled(text: &str, schema: &Schema) -> Result<(StatisticChain, Option<usize>)> {
    Parser {
        chars: text.chars().collect(),
        pos: 0,
        schema,
    }
    .parse()
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    schema: &'a Schema,
}

impl Parser<'_> {
    fn err<T>(&self, pos: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn parse(mut self) -> Result<(StatisticChain, Option<usize>)> {
        let mut ops = Vec::new();
        let mut dim = None;
        loop {
            self.skip_ws();
            let start = self.pos;
            let (op, label) = self.term()?;
            if let Some(l) = label {
                if dim.is_some() {
                    return self.err(start, "more than one dimension label");
                }
                dim = Some(l);
            }
            ops.push(op);
            self.skip_ws();
            match self.chars.get(self.pos) {
                None => break,
                Some(&c) if c == SEPARATOR || c == 'o' => self.pos += 1,
                Some(c) => {
                    return self.err(self.pos, format!("expected `{SEPARATOR}`, found `{c}`"))
                }
            }
        }
        ops.reverse();
        Ok((StatisticChain::new(ops), dim))
    }

    fn name(&mut self) -> Result<&'static str> {
        let rest: String = self.chars[self.pos..].iter().collect();
        let found = NAMES
            .iter()
            .filter(|n| rest.starts_with(*n))
            .max_by_key(|n| n.len());
        match found {
            Some(n) => {
                self.pos += n.chars().count();
                Ok(n)
            }
            None => self.err(self.pos, "expected an operator name"),
        }
    }

    fn args(&mut self) -> Result<Option<(usize, String)>> {
        self.skip_ws();
        if self.chars.get(self.pos) != Some(&'[') {
            return Ok(None);
        }
        let open = self.pos;
        let Some(len) = self.chars[open..].iter().position(|&c| c == ']') else {
            return self.err(open, "unclosed `[`");
        };
        let body: String = self.chars[open + 1..open + len].iter().collect();
        self.pos = open + len + 1;
        Ok(Some((open + 1, body)))
    }

    fn column(&self, pos: usize, name: &str) -> Result<usize> {
        match self.schema.index_of(name.trim()) {
            Some(c) => Ok(c),
            None => self.err(pos, format!("unknown column `{}`", name.trim())),
        }
    }

    fn category(&self, pos: usize, column: usize, value: &str) -> Result<u32> {
        if !self.schema.column(column).is_categorical() {
            return self.err(
                pos,
                format!(
                    "column `{}` is not categorical",
                    self.schema.column(column).name
                ),
            );
        }
        match self.schema.category_index(column, value.trim()) {
            Some(k) => Ok(k),
            None => self.err(pos, format!("unknown category `{}`", value.trim())),
        }
    }

    /// `col` or `col=cat`; the category is returned as an index.
    fn column_label(&self, pos: usize, body: &str) -> Result<(usize, Option<u32>)> {
        match body.split_once('=') {
            None => Ok((self.column(pos, body)?, None)),
            Some((c, k)) => {
                let c = self.column(pos, c)?;
                Ok((c, Some(self.category(pos, c, k)?)))
            }
        }
    }

    fn term(&mut self) -> Result<(Operator, Option<usize>)> {
        let start = self.pos;
        let name = self.name()?;
        let args = self.args()?;
        let needs_args = matches!(
            name,
            "Select" | "Percentile" | "GroupBy" | "FilterBy" | "RetainBy" | "SortBy"
        );
        let (pos, body) = match (needs_args, args) {
            (true, Some(a)) => a,
            (true, None) => return self.err(self.pos, format!("`{name}` needs `[...]` arguments")),
            (false, Some((p, _))) => return self.err(p, format!("`{name}` takes no arguments")),
            (false, None) => (start, String::new()),
        };
        let op = match name {
            "Select" | "GroupBy" => {
                let (c, label) = self.column_label(pos, &body)?;
                let op = if name == "Select" {
                    Operator::Select(c)
                } else {
                    Operator::GroupBy(c)
                };
                return Ok((op, label.map(|k| k as usize)));
            }
            "FilterBy" | "RetainBy" => {
                let (column, category) = self.column_label(pos, &body)?;
                let Some(category) = category else {
                    return self.err(pos, format!("`{name}` needs `column=category`"));
                };
                if name == "FilterBy" {
                    Operator::FilterBy { column, category }
                } else {
                    Operator::RetainBy { column, category }
                }
            }
            "SortBy" => {
                let Some((c, o)) = body.split_once(',') else {
                    return self.err(pos, "`SortBy` needs `column,asc|desc`");
                };
                let column = self.column(pos, c)?;
                let order = match o.trim() {
                    "asc" => SortOrder::Asc,
                    "desc" => SortOrder::Desc,
                    other => return self.err(pos, format!("unknown sort order `{other}`")),
                };
                Operator::SortBy { column, order }
            }
            "Percentile" => match body.trim().parse::<u8>() {
                Ok(k) => Operator::Agg(Aggregation::Percentile(k)),
                Err(_) => return self.err(pos, format!("bad percentile `{body}`")),
            },
            "Mean" => Operator::Agg(Aggregation::Mean),
            "Max" => Operator::Agg(Aggregation::Max),
            "Min" => Operator::Agg(Aggregation::Min),
            "Sum" => Operator::Agg(Aggregation::Sum),
            "Std" => Operator::Agg(Aggregation::Std),
            "Ptp" => Operator::Agg(Aggregation::Ptp),
            "Count" => Operator::Agg(Aggregation::Count),
            "First" => Operator::Agg(Aggregation::First),
            "Top5" => Operator::Top5,
            "Abs" => Operator::Abs,
            _ => unreachable!("name table"),
        };
        Ok((op, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Column;
    use crate::operators::is_valid;

    fn schema() -> Schema {
        Schema::new(vec![
            Column::numerical("money"),
            Column::categorical("cardtype", &["debit", "credit"]),
        ])
        .unwrap()
    }

    #[test]
    fn renders_outermost_first() {
        let s = schema();
        let c = StatisticChain::new(vec![Operator::Select(0), Operator::Agg(Aggregation::Sum)]);
        assert_eq!(format_chain(&c, &s), "Sum∘Select[money]");
        let c = StatisticChain::new(vec![Operator::Select(1), Operator::Agg(Aggregation::Sum)]);
        assert_eq!(
            format_labeled(&c, &s, Some(1)),
            "Sum∘Select[cardtype=credit]"
        );
    }

    #[test]
    fn parse_accepts_ascii_alias() {
        let s = schema();
        let a = parse_chain("Sum∘Select[money]", &s).unwrap();
        let b = parse_chain("Sum o Select[money]", &s).unwrap();
        let c = parse_chain("SumoSelect[money]", &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn structural_parse_without_validity() {
        let s = schema();
        let c = parse_chain("Sum∘Sum∘Select[money]", &s).unwrap();
        assert_eq!(c.len(), 3);
        assert!(!is_valid(&c, &s, 4));
    }

    #[test]
    fn parse_errors_carry_position() {
        let s = schema();
        match parse_chain("Sum∘Select[nope]", &s) {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 11),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_chain("Sum∘", &s),
            Err(Error::Parse { pos: 4, .. })
        ));
        assert!(matches!(
            parse_chain("Sum Select[money]", &s),
            Err(Error::Parse { pos: 4, .. })
        ));
        assert!(parse_chain("Sum∘Select[cardtype=debit]", &s).is_err());
        assert!(parse_chain("FilterBy[money=1]∘Select[money]", &s).is_err());
    }

    #[test]
    fn labeled_round_trip() {
        let s = schema();
        let (c, d) = parse_labeled("Sum∘Select[cardtype=credit]", &s).unwrap();
        assert_eq!(d, Some(1));
        assert_eq!(format_labeled(&c, &s, d), "Sum∘Select[cardtype=credit]");
    }
}
