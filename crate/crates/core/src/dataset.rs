//! Event sequences, column schema and teacher scores.
//!
//! On-disk layout (all UTF-8, `.` as decimal separator):
//!
//! * schema: TOML, one `[[column]]` table per column with `name`, `kind`
//!   (`"categorical"` or `"numerical"`) and, for categorical columns, `vocab`.
//! * events: CSV with a header row. One column must be named `user_id`; every
//!   other header names a schema column. Rows are grouped by `user_id` and keep
//!   their file order, which is the event order.
//! * scores: CSV with header `user_id,score`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Characters reserved by the statistic DSL; names and categories may not use them.
pub const RESERVED_CHARS: &[char] = &['[', ']', '=', ',', '∘', '(', ')'];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical { vocab: Vec<String> },
    Numerical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn categorical(name: &str, vocab: &[&str]) -> Self {
        Column {
            name: name.to_string(),
            kind: ColumnKind::Categorical {
                vocab: vocab.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn numerical(name: &str) -> Self {
        Column {
            name: name.to_string(),
            kind: ColumnKind::Numerical,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    pub fn vocab(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { vocab } => Some(vocab),
            ColumnKind::Numerical => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(rename = "column")]
    columns: Vec<Column>,
}

fn check_name(what: &str, name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::Schema(format!("empty {what}")));
    }
    if name.trim() != name || name.contains(RESERVED_CHARS) {
        return Err(Error::Schema(format!(
            "{what} `{name}` has surrounding whitespace or a reserved character"
        )));
    }
    Ok(())
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("at least one column is required".into()));
        }
        let mut seen = HashSet::new();
        for col in &columns {
            check_name("column name", &col.name)?;
            if col.name == "user_id" {
                return Err(Error::Schema("`user_id` is reserved".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
            if let ColumnKind::Categorical { vocab } = &col.kind {
                if vocab.is_empty() {
                    return Err(Error::Schema(format!(
                        "column `{}` has an empty vocab",
                        col.name
                    )));
                }
                let mut entries = HashSet::new();
                for v in vocab {
                    check_name("category", v)?;
                    if !entries.insert(v.as_str()) {
                        return Err(Error::Schema(format!(
                            "column `{}` repeats category `{v}`",
                            col.name
                        )));
                    }
                }
            }
        }
        Ok(Schema { columns })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: Schema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Schema::new(raw.columns)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn category_index(&self, column: usize, value: &str) -> Option<u32> {
        self.columns[column]
            .vocab()?
            .iter()
            .position(|v| v == value)
            .map(|i| i as u32)
    }
}

/// Per-column storage for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnValues {
    Categorical(Vec<u32>),
    Numerical(Vec<f64>),
}

impl ColumnValues {
    fn len(&self) -> usize {
        match self {
            ColumnValues::Categorical(v) => v.len(),
            ColumnValues::Numerical(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    user_id: String,
    len: usize,
    columns: Vec<ColumnValues>,
}

impl EventSequence {
    /// Builds a sequence from column-major values; checks them against `schema`.
    pub fn new(
        user_id: impl Into<String>,
        columns: Vec<ColumnValues>,
        schema: &Schema,
    ) -> Result<Self> {
        let user_id = user_id.into();
        if columns.len() != schema.len() {
            return Err(Error::LengthMismatch {
                left: columns.len(),
                right: schema.len(),
            });
        }
        let len = columns[0].len();
        if len == 0 {
            return Err(Error::Dataset(format!("sequence `{user_id}` is empty")));
        }
        for (col, values) in schema.columns().iter().zip(&columns) {
            if values.len() != len {
                return Err(Error::LengthMismatch {
                    left: values.len(),
                    right: len,
                });
            }
            match (&col.kind, values) {
                (ColumnKind::Categorical { vocab }, ColumnValues::Categorical(v)) => {
                    if let Some(bad) = v.iter().position(|&c| c as usize >= vocab.len()) {
                        return Err(Error::OutOfVocab {
                            row: bad + 1,
                            column: col.name.clone(),
                            value: v[bad].to_string(),
                        });
                    }
                }
                (ColumnKind::Numerical, ColumnValues::Numerical(v)) => {
                    if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::NonFinite {
                            row: bad + 1,
                            column: col.name.clone(),
                        });
                    }
                }
                _ => {
                    return Err(Error::Dataset(format!(
                        "column `{}` has the wrong kind of values",
                        col.name
                    )))
                }
            }
        }
        Ok(EventSequence {
            user_id,
            len,
            columns,
        })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn column(&self, index: usize) -> &ColumnValues {
        &self.columns[index]
    }

    /// Categorical codes of column `index`. Panics if the column is numerical.
    pub fn categories(&self, index: usize) -> &[u32] {
        match &self.columns[index] {
            ColumnValues::Categorical(v) => v,
            ColumnValues::Numerical(_) => panic!("column {index} is numerical"),
        }
    }

    /// Values of numerical column `index`. Panics if the column is categorical.
    pub fn numbers(&self, index: usize) -> &[f64] {
        match &self.columns[index] {
            ColumnValues::Numerical(v) => v,
            ColumnValues::Categorical(_) => panic!("column {index} is categorical"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    sequences: Vec<EventSequence>,
    scores: Vec<f64>,
}

impl Dataset {
    pub fn new(schema: Schema, sequences: Vec<EventSequence>, scores: Vec<f64>) -> Result<Self> {
        if sequences.len() != scores.len() {
            return Err(Error::LengthMismatch {
                left: sequences.len(),
                right: scores.len(),
            });
        }
        if sequences.len() < 2 {
            return Err(Error::Dataset("at least two sequences are required".into()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                row: i + 1,
                column: "score".into(),
            });
        }
        let mut ids = HashSet::new();
        for s in &sequences {
            if !ids.insert(s.user_id()) {
                return Err(Error::Dataset(format!("duplicate user `{}`", s.user_id())));
            }
        }
        Ok(Dataset {
            schema,
            sequences,
            scores,
        })
    }

    pub fn load(events: &Path, schema: &Path, scores: &Path) -> Result<Self> {
        let schema = Schema::load(schema)?;
        let score_map = read_scores(scores)?;
        let sequences = read_events(events, &schema)?;
        let mut ordered = Vec::with_capacity(sequences.len());
        for seq in &sequences {
            match score_map.get(seq.user_id()) {
                Some(&s) => ordered.push(s),
                None => return Err(Error::MissingScore(seq.user_id().to_string())),
            }
        }
        if score_map.len() > sequences.len() {
            log::warn!(
                "{} scored users have no events and are ignored",
                score_map.len() - sequences.len()
            );
        }
        Dataset::new(schema, sequences, ordered)
    }

    /// Writes the three files in the format accepted by [`Dataset::load`].
    pub fn write(&self, events: &Path, schema: &Path, scores: &Path) -> Result<()> {
        fs::write(schema, self.schema.to_toml()).map_err(|e| Error::io(schema, e))?;

        let mut w = csv::Writer::from_path(events).map_err(|e| csv_err(events, e))?;
        let mut header = vec!["user_id".to_string()];
        header.extend(self.schema.columns().iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(|e| csv_err(events, e))?;
        for seq in &self.sequences {
            for row in 0..seq.len() {
                let mut rec = vec![seq.user_id().to_string()];
                for (ci, col) in self.schema.columns().iter().enumerate() {
                    rec.push(match (&col.kind, seq.column(ci)) {
                        (ColumnKind::Categorical { vocab }, ColumnValues::Categorical(v)) => {
                            vocab[v[row] as usize].clone()
                        }
                        (_, ColumnValues::Numerical(v)) => v[row].to_string(),
                        _ => unreachable!("validated at construction"),
                    });
                }
                w.write_record(&rec).map_err(|e| csv_err(events, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(events, e))?;

        let mut w = csv::Writer::from_path(scores).map_err(|e| csv_err(scores, e))?;
        w.write_record(["user_id", "score"])
            .map_err(|e| csv_err(scores, e))?;
        for (seq, s) in self.sequences.iter().zip(&self.scores) {
            w.write_record([seq.user_id(), &s.to_string()])
                .map_err(|e| csv_err(scores, e))?;
        }
        w.flush().map_err(|e| Error::io(scores, e))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn sequences(&self) -> &[EventSequence] {
        &self.sequences
    }

    pub fn sequence(&self, index: usize) -> &EventSequence {
        &self.sequences[index]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sub-dataset with the given rows, in the given order. Size is not checked.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        sample_batch(self.len(), batch, rng)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn read_scores(path: &Path) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() != 2 || &headers[0] != "user_id" || &headers[1] != "score" {
        return Err(Error::format(path, "expected header `user_id,score`"));
    }
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let score: f64 = rec[1]
            .parse()
            .map_err(|_| Error::format(path, format!("row {row}: bad score `{}`", &rec[1])))?;
        if !score.is_finite() {
            return Err(Error::NonFinite {
                row,
                column: "score".into(),
            });
        }
        if out.insert(rec[0].to_string(), score).is_some() {
            return Err(Error::format(
                path,
                format!("row {row}: duplicate user `{}`", &rec[0]),
            ));
        }
    }
    Ok(out)
}

fn read_events(path: &Path, schema: &Schema) -> Result<Vec<EventSequence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    events_from_reader(file, path, schema)
}

/// Parses events CSV text (header `user_id` plus every schema column).
pub fn parse_events(text: &str, schema: &Schema) -> Result<Vec<EventSequence>> {
    events_from_reader(text.as_bytes(), Path::new("<events>"), schema)
}

fn events_from_reader<R: std::io::Read>(
    reader: R,
    path: &Path,
    schema: &Schema,
) -> Result<Vec<EventSequence>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut user_field = None;
    // field position for each schema column
    let mut field_of = vec![None; schema.len()];
    for (f, name) in headers.iter().enumerate() {
        if name == "user_id" {
            user_field = Some(f);
            continue;
        }
        match schema.index_of(name) {
            Some(ci) => field_of[ci] = Some(f),
            None => {
                return Err(Error::UnknownColumn {
                    row: 1,
                    column: name.to_string(),
                })
            }
        }
    }
    let user_field = user_field.ok_or_else(|| Error::format(path, "header lacks `user_id`"))?;
    if let Some(ci) = field_of.iter().position(Option::is_none) {
        return Err(Error::format(
            path,
            format!("header lacks column `{}`", schema.column(ci).name),
        ));
    }
    let field_of: Vec<usize> = field_of.into_iter().map(Option::unwrap).collect();

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<ColumnValues>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let user = &rec[user_field];
        let cols = groups.entry(user.to_string()).or_insert_with(|| {
            order.push(user.to_string());
            schema
                .columns()
                .iter()
                .map(|c| match c.kind {
                    ColumnKind::Categorical { .. } => ColumnValues::Categorical(Vec::new()),
                    ColumnKind::Numerical => ColumnValues::Numerical(Vec::new()),
                })
                .collect()
        });
        for (ci, col) in schema.columns().iter().enumerate() {
            let raw = &rec[field_of[ci]];
            match &mut cols[ci] {
                ColumnValues::Categorical(v) => match schema.category_index(ci, raw) {
                    Some(code) => v.push(code),
                    None => {
                        return Err(Error::OutOfVocab {
                            row,
                            column: col.name.clone(),
                            value: raw.to_string(),
                        })
                    }
                },
                ColumnValues::Numerical(v) => {
                    let x: f64 = raw.parse().map_err(|_| {
                        Error::format(path, format!("row {row}: `{raw}` is not a number"))
                    })?;
                    if !x.is_finite() {
                        return Err(Error::NonFinite {
                            row,
                            column: col.name.clone(),
                        });
                    }
                    v.push(x);
                }
            }
        }
    }
    order
        .into_iter()
        .map(|user| {
            let cols = groups.remove(&user).expect("grouped above");
            EventSequence::new(user, cols, schema)
        })
        .collect()
}

/// Train / validation / test partition of a dataset.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// `round(train_frac * n)` users go to the training side, of which
    /// `valid_count` are held out for validation; the rest are test users.
    /// Each part lists indices in ascending (file) order.
    pub fn new(n: usize, train_frac: f64, valid_count: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_frac) {
            return Err(Error::InfeasibleSplit(format!(
                "train fraction {train_frac} outside [0, 1]"
            )));
        }
        let train_total = (train_frac * n as f64).round() as usize;
        if valid_count >= train_total {
            return Err(Error::InfeasibleSplit(format!(
                "{valid_count} validation users leave no training users out of {train_total}"
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = train_total - valid_count;
        let mut train = perm[..n_train].to_vec();
        let mut valid = perm[n_train..train_total].to_vec();
        let mut test = perm[train_total..].to_vec();
        train.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        Ok(Split { train, valid, test })
    }
}

/// Splits `d` into (train, valid, test) datasets; see [`Split::new`].
pub fn split(
    d: &Dataset,
    train_frac: f64,
    valid_count: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let s = Split::new(d.len(), train_frac, valid_count, seed)?;
    Ok((d.subset(&s.train), d.subset(&s.valid), d.subset(&s.test)))
}

/// Uniform sample of `min(batch, n)` distinct indices out of `0..n`.
pub fn sample_batch<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n, batch.min(n)).into_vec()
}
