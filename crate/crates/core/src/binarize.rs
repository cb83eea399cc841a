//! Percentile thresholding of statistic values into boolean literals.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Schema;
use crate::error::{Error, Result};
use crate::numerics::{percentile_sorted, Matrix};
use crate::operators::{format_labeled, parse_labeled, StatisticChain};

/// Percentile levels of the thresholds of one continuous column.
pub const LEVELS: [u8; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

/// One scalar column of the statistic value matrix: a chain and, for vector
/// statistics, the output dimension.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatColumn {
    pub chain: StatisticChain,
    pub dim: Option<usize>,
}

/// Scalar columns of `chains` in value-matrix order.
pub fn stat_columns(chains: &[StatisticChain], schema: &Schema) -> Vec<StatColumn> {
    let mut out = Vec::new();
    for chain in chains {
        if chain.dimension_labels(schema).is_some() {
            for d in 0..chain.output_dim(schema) {
                out.push(StatColumn {
                    chain: chain.clone(),
                    dim: Some(d),
                });
            }
        } else {
            out.push(StatColumn {
                chain: chain.clone(),
                dim: None,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "thresholds", rename_all = "lowercase")]
pub enum ColumnThresholds {
    /// all training values in {0, 1}; one literal `x > 0`
    Binary,
    Continuous(Vec<f64>),
}

impl ColumnThresholds {
    pub fn cuts(&self) -> &[f64] {
        match self {
            ColumnThresholds::Binary => &[0.0],
            ColumnThresholds::Continuous(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub columns: Vec<ColumnThresholds>,
}

/// Fits thresholds on training-set statistic values, one matrix column per
/// scalar statistic column.
pub fn fit_thresholds(values: &Matrix) -> Result<ThresholdModel> {
    if values.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let columns = (0..values.cols())
        .map(|c| {
            let mut col = values.column(c);
            if col.iter().all(|&v| v == 0.0 || v == 1.0) {
                return ColumnThresholds::Binary;
            }
            col.sort_by(f64::total_cmp);
            ColumnThresholds::Continuous(
                LEVELS
                    .iter()
                    .map(|&k| percentile_sorted(&col, k as f64))
                    .collect(),
            )
        })
        .collect();
    Ok(ThresholdModel { columns })
}

impl ThresholdModel {
    pub fn num_literals(&self) -> usize {
        self.columns.iter().map(|c| c.cuts().len()).sum()
    }

    /// Bit `(i, j)` is `values(i, c) > t` for the `j`-th (column, threshold) pair.
    pub fn transform(&self, values: &Matrix) -> Result<BitMatrix> {
        if values.cols() != self.columns.len() {
            return Err(Error::LengthMismatch {
                left: values.cols(),
                right: self.columns.len(),
            });
        }
        let p = self.num_literals();
        let mut data = Vec::with_capacity(values.rows() * p);
        for r in 0..values.rows() {
            let row = values.row(r);
            for (c, th) in self.columns.iter().enumerate() {
                data.extend(th.cuts().iter().map(|&t| u8::from(row[c] > t)));
            }
        }
        Ok(BitMatrix {
            rows: values.rows(),
            cols: p,
            data,
        })
    }

    /// Descriptors for the literals produced by [`ThresholdModel::transform`].
    pub fn descriptors(&self, columns: &[StatColumn]) -> Result<Vec<LiteralDescriptor>> {
        if columns.len() != self.columns.len() {
            return Err(Error::LengthMismatch {
                left: columns.len(),
                right: self.columns.len(),
            });
        }
        let mut out = Vec::with_capacity(self.num_literals());
        for (source, th) in columns.iter().zip(&self.columns) {
            for &t in th.cuts() {
                out.push(LiteralDescriptor {
                    chain: source.chain.clone(),
                    dim: source.dim,
                    threshold: t,
                });
            }
        }
        Ok(out)
    }
}

/// Row-major 0/1 matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BitMatrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        assert!(rows.iter().flatten().all(|&b| b <= 1), "non-binary entry");
        BitMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u8> {
        (0..self.rows)
            .map(|r| self.data[r * self.cols + c])
            .collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> BitMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        BitMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// The literal `statistic > threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiteralDescriptor {
    pub chain: StatisticChain,
    pub dim: Option<usize>,
    pub threshold: f64,
}

impl LiteralDescriptor {
    /// e.g. `Sum∘Select[cardtype=credit] > 9`. The threshold is printed in
    /// the shortest form that parses back to the same value.
    pub fn render(&self, schema: &Schema) -> String {
        format!(
            "{} > {}",
            format_labeled(&self.chain, schema, self.dim),
            self.threshold
        )
    }

    pub fn parse(text: &str, schema: &Schema) -> Result<Self> {
        let Some(at) = text.rfind(" > ") else {
            return Err(Error::Parse {
                pos: 0,
                msg: format!("expected `statistic > threshold`, got {text:?}"),
            });
        };
        let (chain, dim) = parse_labeled(&text[..at], schema)?;
        let num = text[at + 3..].trim();
        let threshold: f64 = num.parse().map_err(|_| Error::Parse {
            pos: at + 3,
            msg: format!("bad threshold {num:?}"),
        })?;
        if !threshold.is_finite() {
            return Err(Error::Parse {
                pos: at + 3,
                msg: "threshold must be finite".into(),
            });
        }
        Ok(LiteralDescriptor {
            chain,
            dim,
            threshold,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiteralTable {
    pub bits: BitMatrix,
    pub descriptors: Vec<LiteralDescriptor>,
}

impl LiteralTable {
    pub fn select_rows(&self, indices: &[usize]) -> LiteralTable {
        LiteralTable {
            bits: self.bits.select_rows(indices),
            descriptors: self.descriptors.clone(),
        }
    }

    /// Writes a CSV with a `user_id` column followed by one 0/1 column per
    /// literal, headed by its rendered descriptor.
    pub fn write_csv(&self, path: &Path, user_ids: &[&str], schema: &Schema) -> Result<()> {
        if user_ids.len() != self.bits.rows() {
            return Err(Error::LengthMismatch {
                left: user_ids.len(),
                right: self.bits.rows(),
            });
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut header = vec!["user_id".to_string()];
        header.extend(self.descriptors.iter().map(|d| d.render(schema)));
        w.write_record(&header)
            .map_err(|e| Error::format(path, e.to_string()))?;
        for (r, id) in user_ids.iter().enumerate() {
            let mut record = vec![id.to_string()];
            record.extend(self.bits.row(r).iter().map(u8::to_string));
            w.write_record(&record)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Thresholds `values` (rows of any split) with a model fitted on training
/// values. Warns about literal columns that duplicate an earlier one.
pub fn binarize(
    values: &Matrix,
    model: &ThresholdModel,
    columns: &[StatColumn],
) -> Result<LiteralTable> {
    let bits = model.transform(values)?;
    let descriptors = model.descriptors(columns)?;
    let mut seen = HashSet::new();
    let duplicates = (0..bits.cols())
        .filter(|&c| !seen.insert(bits.column(c)))
        .count();
    if duplicates > 0 {
        log::warn!("{duplicates} literal columns duplicate an earlier column");
    }
    Ok(LiteralTable { bits, descriptors })
}

/// Network input `[z, 1 - z, 1, 0]`.
pub fn augment(z: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * z.len() + 2);
    out.extend_from_slice(z);
    out.extend(z.iter().map(|&b| 1 - b));
    out.extend([1, 0]);
    out
}
