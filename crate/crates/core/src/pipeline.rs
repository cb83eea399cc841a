//! End-to-end distillation: statistics, literals, network, rules, metrics.
//!
//! Every stage reads its inputs from files in the work directory and writes
//! its outputs there, so stages can be rerun one at a time:
//!
//! | stage      | reads                                   | writes                               |
//! |------------|-----------------------------------------|--------------------------------------|
//! | gen-stats  | dataset                                 | `statistics.txt`, `values.csv`, `splits.csv` |
//! | binarize   | `statistics.txt`, `values.csv`, `splits.csv` | `thresholds.json`, `literals.csv` |
//! | train      | `thresholds.json`, `literals.csv`, `splits.csv`, scores | `checkpoint.json`      |
//! | extract    | `checkpoint.json`                       | `rules.txt`, `rules_report.txt`      |
//! | evaluate   | `rules.txt`, dataset, `splits.csv`      | `evaluation.txt`                     |
//!
//! Stage seeds are `splitmix64(seed + k)` with `k` = 0 for the split, 1 for
//! the statistic search and 2 for network training.

use std::fs;
use std::path::{Path, PathBuf};

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binarize::{
    binarize, fit_thresholds, stat_columns, BitMatrix, LiteralDescriptor, ThresholdModel,
};
use crate::dataset::{Dataset, Schema, Split};
use crate::error::{Error, Result};
use crate::mcts::{generate_top_k, SearchConfig};
use crate::nln::{train, NlnConfig, NlnParams, NoiseMode};
use crate::numerics::{percentile, Matrix};
use crate::operators::{
    evaluate_column, format_chain, format_labeled, parse_chain, StatisticChain,
};
use crate::rules::{auc, extract, fidelity, RuleSet, Stamp};

pub const STATISTICS: &str = "statistics.txt";
pub const VALUES: &str = "values.csv";
pub const SPLITS: &str = "splits.csv";
pub const THRESHOLDS: &str = "thresholds.json";
pub const LITERALS: &str = "literals.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const RULES: &str = "rules.txt";
pub const RULES_REPORT: &str = "rules_report.txt";
pub const EVALUATION: &str = "evaluation.txt";

const STATS_MAGIC: &str = "seqrules-statistics";
const CHECKPOINT_FORMAT: &str = "seqrules-checkpoint";
const EVAL_MAGIC: &str = "seqrules-evaluation";
const FORMAT_VERSION: u32 = 1;

pub const SEED_SPLIT: u64 = 0;
pub const SEED_SEARCH: u64 = 1;
pub const SEED_TRAIN: u64 = 2;
pub const SEED_SYNTHETIC: u64 = 3;

/// Seed of stage `k` derived from the global seed.
pub fn stage_seed(global: u64, k: u64) -> u64 {
    SplitMix64::seed_from_u64(global.wrapping_add(k)).next_u64()
}

/// Flat run configuration; every key is optional in the TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub events: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub workdir: PathBuf,
    pub seed: u64,
    pub threads: usize,

    pub train_frac: f64,
    pub valid_count: usize,

    pub depth: usize,
    pub num_stats: usize,
    pub search_batch_size: usize,
    pub simulations: usize,
    pub exploration: f64,
    pub standardize_target: bool,

    pub layers: usize,
    pub hidden: usize,
    pub rules: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub init_std: f64,
    pub noise: NoiseMode,

    /// AUC labels are `teacher score > label_threshold`; default the median
    pub label_threshold: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SearchConfig::default();
        let n = NlnConfig::default();
        RunConfig {
            events: None,
            schema: None,
            scores: None,
            workdir: PathBuf::from("out"),
            seed: 0,
            threads: 1,
            train_frac: 0.8,
            valid_count: 1000,
            depth: s.max_depth,
            num_stats: s.num_stats,
            search_batch_size: s.batch_size,
            simulations: s.simulations,
            exploration: s.exploration,
            standardize_target: s.standardize_target,
            layers: n.layers,
            hidden: n.hidden,
            rules: n.rules,
            epochs: n.epochs,
            batch_size: n.batch_size,
            lr_start: n.lr_start,
            lr_end: n.lr_end,
            tau_start: n.tau_start,
            tau_end: n.tau_end,
            init_std: n.init_std,
            noise: n.noise,
            label_threshold: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            max_depth: self.depth,
            num_stats: self.num_stats,
            batch_size: self.search_batch_size,
            simulations: self.simulations,
            exploration: self.exploration,
            seed: stage_seed(self.seed, SEED_SEARCH),
            standardize_target: self.standardize_target,
        }
    }

    pub fn nln_config(&self) -> NlnConfig {
        NlnConfig {
            layers: self.layers,
            hidden: self.hidden,
            rules: self.rules,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            tau_start: self.tau_start,
            tau_end: self.tau_end,
            init_std: self.init_std,
            noise: self.noise,
            seed: stage_seed(self.seed, SEED_TRAIN),
            ..NlnConfig::default()
        }
    }

    pub fn split_seed(&self) -> u64 {
        stage_seed(self.seed, SEED_SPLIT)
    }

    /// SHA-256 of every setting that can change an artifact (not the paths
    /// and not `threads`), hex encoded.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.events = None;
        c.schema = None;
        c.scores = None;
        c.workdir = PathBuf::new();
        c.threads = 1;
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn stamp(&self) -> Stamp {
        Stamp {
            config_hash: self.config_hash(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search_config().validate()?;
        self.nln_config().validate()?;
        if self.threads != 1 {
            log::warn!(
                "--threads {} requested; stages run sequentially",
                self.threads
            );
        }
        Ok(())
    }

    /// Loads the dataset named by `events`, `schema` and `scores`.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let need = |p: &Option<PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| Error::Config(format!("no {what} file configured")))
        };
        Dataset::load(
            &need(&self.events, "events")?,
            &need(&self.schema, "schema")?,
            &need(&self.scores, "scores")?,
        )
    }
}

/// Part of the dataset a user belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Train,
    Valid,
    Test,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Valid => "valid",
            Part::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Part> {
        [Part::Train, Part::Valid, Part::Test]
            .into_iter()
            .find(|p| p.name() == s)
    }
}

/// Per-user split assignment in dataset order, as stored in `splits.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub users: Vec<String>,
    pub parts: Vec<Part>,
}

impl Splits {
    pub fn from_split(dataset: &Dataset, split: &Split) -> Self {
        let mut parts = vec![Part::Train; dataset.len()];
        for &i in &split.valid {
            parts[i] = Part::Valid;
        }
        for &i in &split.test {
            parts[i] = Part::Test;
        }
        Splits {
            users: dataset
                .sequences()
                .iter()
                .map(|s| s.user_id().to_string())
                .collect(),
            parts,
        }
    }

    pub fn indices(&self, part: Part) -> Vec<usize> {
        (0..self.parts.len())
            .filter(|&i| self.parts[i] == part)
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["user_id", "split"])
            .map_err(|e| csv_err(path, e))?;
        for (u, p) in self.users.iter().zip(&self.parts) {
            w.write_record([u.as_str(), p.name()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, rows) = read_csv(path)?;
        if header != ["user_id", "split"] {
            return Err(Error::format(path, "header must be `user_id,split`"));
        }
        let mut users = Vec::with_capacity(rows.len());
        let mut parts = Vec::with_capacity(rows.len());
        for (line, r) in rows.into_iter().enumerate() {
            let part = Part::parse(&r[1]).ok_or_else(|| {
                Error::format(path, format!("line {}: unknown split `{}`", line + 2, r[1]))
            })?;
            users.push(r[0].clone());
            parts.push(part);
        }
        Ok(Splits { users, parts })
    }

    /// Fails unless users are listed in the order of `ids`.
    pub fn check_users<'a>(
        &self,
        ids: impl ExactSizeIterator<Item = &'a str>,
        what: &str,
    ) -> Result<()> {
        if ids.len() != self.users.len() || !ids.zip(&self.users).all(|(a, b)| a == b) {
            return Err(Error::Dataset(format!(
                "{what} does not list the users of {SPLITS} in order"
            )));
        }
        Ok(())
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(
            rec.map_err(|e| csv_err(path, e))?
                .iter()
                .map(str::to_string)
                .collect(),
        );
    }
    Ok((header, rows))
}

/// Contents of `statistics.txt`: one line per generated statistic,
/// `statistic <reward> <DSL>`, after a versioned header.
#[derive(Clone, Debug, PartialEq)]
pub struct StatisticsFile {
    pub stamp: Stamp,
    pub statistics: Vec<(StatisticChain, f64)>,
}

impl StatisticsFile {
    pub fn to_text(&self, schema: &Schema) -> String {
        let mut out = format!(
            "{STATS_MAGIC} {FORMAT_VERSION}\nconfig-hash {}\nseed {}\n",
            self.stamp.config_hash, self.stamp.seed
        );
        for (c, r) in &self.statistics {
            out.push_str(&format!("statistic {r} {}\n", format_chain(c, schema)));
        }
        out
    }

    pub fn from_text(text: &str, schema: &Schema) -> Result<Self> {
        let err = |n: usize, m: &str| Error::Parse {
            pos: n + 1,
            msg: format!("line {}: {m}", n + 1),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let mut header = |key: &str| -> Result<String> {
            match lines.next() {
                Some((n, l)) => match l.split_once(' ') {
                    Some((k, v)) if k == key => Ok(v.trim().to_string()),
                    _ => Err(err(n, &format!("expected `{key} ...`"))),
                },
                None => Err(err(0, "truncated header")),
            }
        };
        if header(STATS_MAGIC)? != FORMAT_VERSION.to_string() {
            return Err(err(0, "unsupported statistics file version"));
        }
        let config_hash = header("config-hash")?;
        let seed = header("seed")?.parse().map_err(|_| err(2, "bad seed"))?;
        let mut statistics = Vec::new();
        for (n, l) in lines {
            let rest = l
                .strip_prefix("statistic ")
                .ok_or_else(|| err(n, "expected `statistic ...`"))?;
            let (r, dsl) = rest
                .split_once(' ')
                .ok_or_else(|| err(n, "expected reward and chain"))?;
            let reward = r.parse().map_err(|_| err(n, "bad reward"))?;
            let chain = parse_chain(dsl, schema).map_err(|e| err(n, &e.to_string()))?;
            statistics.push((chain, reward));
        }
        Ok(StatisticsFile {
            stamp: Stamp { config_hash, seed },
            statistics,
        })
    }

    pub fn chains(&self) -> Vec<StatisticChain> {
        self.statistics.iter().map(|(c, _)| c.clone()).collect()
    }
}

/// `values.csv`: `user_id` then one column per scalar statistic column,
/// headed by its labeled DSL name.
pub fn write_values(path: &Path, dataset: &Dataset, chains: &[StatisticChain]) -> Result<()> {
    let schema = dataset.schema();
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mats: Vec<Matrix> = chains
        .iter()
        .map(|c| evaluate_column(c, dataset, &all))
        .collect();
    let values = Matrix::hconcat(&mats.iter().collect::<Vec<_>>());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["user_id".to_string()];
    header.extend(
        stat_columns(chains, schema)
            .iter()
            .map(|c| format_labeled(&c.chain, schema, c.dim)),
    );
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, seq) in dataset.sequences().iter().enumerate() {
        let mut rec = vec![seq.user_id().to_string()];
        rec.extend(values.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `values.csv` back as (user ids, column names, values).
pub fn read_values(path: &Path) -> Result<(Vec<String>, Vec<String>, Matrix)> {
    let (header, rows) = read_csv(path)?;
    if header.first().map(String::as_str) != Some("user_id") {
        return Err(Error::format(path, "first column must be `user_id`"));
    }
    let cols = header.len() - 1;
    let mut users = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * cols);
    for (line, r) in rows.into_iter().enumerate() {
        users.push(r[0].clone());
        for v in &r[1..] {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad number `{v}`", line + 2)))?;
            data.push(x);
        }
    }
    let n = users.len();
    Ok((users, header[1..].to_vec(), Matrix::from_vec(n, cols, data)))
}

/// Generates statistics on the training users and writes the statistics,
/// their values for every user and the split.
pub fn gen_stats(cfg: &RunConfig, dataset: &Dataset, dir: &Path) -> Result<StatisticsFile> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let split = Split::new(
        dataset.len(),
        cfg.train_frac,
        cfg.valid_count,
        cfg.split_seed(),
    )?;
    let splits = Splits::from_split(dataset, &split);
    let train_set = dataset.subset(&split.train);
    let generated = generate_top_k(&train_set, train_set.scores(), &cfg.search_config())?;
    let file = StatisticsFile {
        stamp: cfg.stamp(),
        statistics: generated
            .iter()
            .map(|g| (g.chain.clone(), g.reward))
            .collect(),
    };
    let path = dir.join(STATISTICS);
    fs::write(&path, file.to_text(dataset.schema())).map_err(|e| Error::io(path, e))?;
    write_values(&dir.join(VALUES), dataset, &file.chains())?;
    splits.write(&dir.join(SPLITS))?;
    Ok(file)
}

/// `thresholds.json`: fitted thresholds and the resulting literals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub config_hash: String,
    pub seed: u64,
    pub model: ThresholdModel,
    pub literals: Vec<String>,
}

/// Fits thresholds on the training users and binarizes every user.
pub fn binarize_stage(schema: &Schema, dir: &Path) -> Result<ThresholdFile> {
    let stats_path = dir.join(STATISTICS);
    let text = fs::read_to_string(&stats_path).map_err(|e| Error::io(&stats_path, e))?;
    let stats = StatisticsFile::from_text(&text, schema)
        .map_err(|e| Error::format(&stats_path, e.to_string()))?;
    let values_path = dir.join(VALUES);
    let (users, names, values) = read_values(&values_path)?;
    let columns = stat_columns(&stats.chains(), schema);
    let expected: Vec<String> = columns
        .iter()
        .map(|c| format_labeled(&c.chain, schema, c.dim))
        .collect();
    if names != expected {
        return Err(Error::format(
            values_path,
            format!("columns do not match {STATISTICS}"),
        ));
    }
    let splits = Splits::read(&dir.join(SPLITS))?;
    splits.check_users(users.iter().map(String::as_str), VALUES)?;
    let model = fit_thresholds(&values.select_rows(&splits.indices(Part::Train)))?;
    let table = binarize(&values, &model, &columns)?;
    let ids: Vec<&str> = users.iter().map(String::as_str).collect();
    table.write_csv(&dir.join(LITERALS), &ids, schema)?;
    let file = ThresholdFile {
        config_hash: stats.stamp.config_hash,
        seed: stats.stamp.seed,
        model,
        literals: table.descriptors.iter().map(|d| d.render(schema)).collect(),
    };
    write_json(&dir.join(THRESHOLDS), &file)?;
    Ok(file)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads `literals.csv` as (user ids, literal names, bits).
pub fn read_literals(path: &Path) -> Result<(Vec<String>, Vec<String>, BitMatrix)> {
    let (header, rows) = read_csv(path)?;
    if header.first().map(String::as_str) != Some("user_id") {
        return Err(Error::format(path, "first column must be `user_id`"));
    }
    let mut users = Vec::with_capacity(rows.len());
    let mut bits = Vec::with_capacity(rows.len());
    for (line, r) in rows.into_iter().enumerate() {
        users.push(r[0].clone());
        let row: Option<Vec<u8>> = r[1..]
            .iter()
            .map(|v| match v.as_str() {
                "0" => Some(0),
                "1" => Some(1),
                _ => None,
            })
            .collect();
        bits.push(row.ok_or_else(|| {
            Error::format(path, format!("line {}: entries must be 0 or 1", line + 2))
        })?);
    }
    let width = header.len() - 1;
    if bits.is_empty() {
        return Ok((users, header[1..].to_vec(), BitMatrix::from_rows(&[])));
    }
    debug_assert!(bits.iter().all(|b| b.len() == width));
    Ok((users, header[1..].to_vec(), BitMatrix::from_rows(&bits)))
}

/// Trained network with everything needed to extract and read its rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub schema: Schema,
    pub nln: NlnConfig,
    pub thresholds: ThresholdModel,
    pub literals: Vec<String>,
    /// mean training objective of each epoch
    pub objectives: Vec<f64>,
    pub params: NlnParams,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let c: Checkpoint = read_json(path)?;
        if c.format != CHECKPOINT_FORMAT || c.version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("not a version {FORMAT_VERSION} checkpoint"),
            ));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn descriptors(&self) -> Result<Vec<LiteralDescriptor>> {
        self.literals
            .iter()
            .map(|l| LiteralDescriptor::parse(l, &self.schema))
            .collect()
    }
}

/// Trains the network on the training users' literals and teacher scores.
pub fn train_stage(cfg: &RunConfig, dataset: &Dataset, dir: &Path) -> Result<Checkpoint> {
    let th: ThresholdFile = read_json(&dir.join(THRESHOLDS))?;
    let (users, names, bits) = read_literals(&dir.join(LITERALS))?;
    if names != th.literals {
        return Err(Error::format(
            dir.join(LITERALS),
            format!("literals do not match {THRESHOLDS}"),
        ));
    }
    let splits = Splits::read(&dir.join(SPLITS))?;
    splits.check_users(users.iter().map(String::as_str), LITERALS)?;
    splits.check_users(
        dataset.sequences().iter().map(|s| s.user_id()),
        "the dataset",
    )?;
    let train_rows = splits.indices(Part::Train);
    let y: Vec<f64> = train_rows.iter().map(|&i| dataset.scores()[i]).collect();
    let nln = cfg.nln_config();
    let report = train(&bits.select_rows(&train_rows), &y, &nln)?;
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        version: FORMAT_VERSION,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        schema: dataset.schema().clone(),
        nln,
        thresholds: th.model,
        literals: th.literals,
        objectives: report.objectives,
        params: report.params,
    };
    ckpt.write(&dir.join(CHECKPOINT))?;
    Ok(ckpt)
}

/// Extracts the rules of a checkpoint into `rules.txt` and a rendered
/// `rules_report.txt`.
pub fn extract_stage(checkpoint: &Path, dir: &Path) -> Result<RuleSet> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let rules = extract(&ckpt.params, ckpt.descriptors()?)?;
    let stamp = Stamp {
        config_hash: ckpt.config_hash.clone(),
        seed: ckpt.seed,
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    rules.write(&dir.join(RULES), &ckpt.schema, &stamp)?;
    let path = dir.join(RULES_REPORT);
    fs::write(&path, rules.render(&ckpt.schema)).map_err(|e| Error::io(path, e))?;
    Ok(rules)
}

/// Fidelity and AUC of a rule set on one group of users.
#[derive(Clone, Debug, PartialEq)]
pub struct PartMetrics {
    pub name: String,
    pub users: usize,
    pub label_threshold: f64,
    pub fidelity: f64,
    /// `None` when the labels have a single class
    pub auc: Option<f64>,
}

pub fn evaluate_rules(
    rules: &RuleSet,
    dataset: &Dataset,
    rows: &[usize],
    name: &str,
    label_threshold: Option<f64>,
) -> Result<PartMetrics> {
    let subset = dataset.subset(rows);
    let bits = rules.literal_bits(&subset);
    let student = rules.scores(&bits)?;
    let teacher = subset.scores();
    let threshold = match label_threshold {
        Some(t) => t,
        None => percentile(teacher, 50.0)?,
    };
    let labels: Vec<bool> = teacher.iter().map(|&y| y > threshold).collect();
    let auc = match auc(&labels, &student) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(PartMetrics {
        name: name.to_string(),
        users: rows.len(),
        label_threshold: threshold,
        fidelity: fidelity(teacher, &student)?,
        auc,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub stamp: Stamp,
    pub rules: usize,
    pub max_literals: usize,
    pub parts: Vec<PartMetrics>,
}

impl Evaluation {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{EVAL_MAGIC} {FORMAT_VERSION}\nconfig-hash {}\nseed {}\nrules {}\nmax-literals {}\n",
            self.stamp.config_hash, self.stamp.seed, self.rules, self.max_literals
        );
        for p in &self.parts {
            let n = &p.name;
            out.push_str(&format!("{n}.users {}\n", p.users));
            out.push_str(&format!("{n}.label-threshold {}\n", p.label_threshold));
            out.push_str(&format!("{n}.fidelity {:.6}\n", p.fidelity));
            match p.auc {
                Some(a) => out.push_str(&format!("{n}.auc {a:.6}\n")),
                None => out.push_str(&format!("{n}.auc undefined (single class)\n")),
            }
        }
        out
    }
}

/// Evaluates `rules.txt` on the requested parts of the split, or on every
/// user as part `all` when `parts` is empty.
pub fn evaluate_stage(
    rules_path: &Path,
    dataset: &Dataset,
    splits: Option<&Splits>,
    parts: &[Part],
    label_threshold: Option<f64>,
    out: &Path,
) -> Result<Evaluation> {
    let (rules, stamp) = RuleSet::read(rules_path, dataset.schema())?;
    let mut metrics = Vec::new();
    if parts.is_empty() {
        let all: Vec<usize> = (0..dataset.len()).collect();
        metrics.push(evaluate_rules(
            &rules,
            dataset,
            &all,
            "all",
            label_threshold,
        )?);
    } else {
        let splits = splits
            .ok_or_else(|| Error::Config("evaluating a split part needs a splits file".into()))?;
        splits.check_users(
            dataset.sequences().iter().map(|s| s.user_id()),
            "the dataset",
        )?;
        for &p in parts {
            metrics.push(evaluate_rules(
                &rules,
                dataset,
                &splits.indices(p),
                p.name(),
                label_threshold,
            )?);
        }
    }
    let eval = Evaluation {
        stamp,
        rules: rules.rules.len(),
        max_literals: rules
            .rules
            .iter()
            .map(|r| r.expr.literal_count())
            .max()
            .unwrap_or(0),
        parts: metrics,
    };
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(out, eval.to_text()).map_err(|e| Error::io(out, e))?;
    Ok(eval)
}

/// Paths of the artifacts of a complete run.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub statistics: PathBuf,
    pub thresholds: PathBuf,
    pub checkpoint: PathBuf,
    pub rules: PathBuf,
    pub evaluation: PathBuf,
    pub result: Evaluation,
}

/// Runs every stage; errors carry the name of the failing stage.
pub fn run_all(cfg: &RunConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let dataset = cfg.load_dataset().map_err(|e| e.in_stage("load"))?;
    run_all_on(cfg, &dataset)
}

/// [`run_all`] on an already loaded dataset.
pub fn run_all_on(cfg: &RunConfig, dataset: &Dataset) -> Result<Artifacts> {
    let dir = &cfg.workdir;
    let started = std::time::Instant::now();
    let stats = gen_stats(cfg, dataset, dir).map_err(|e| e.in_stage("gen-stats"))?;
    log::info!(
        "gen-stats: {} statistics ({:.1?})",
        stats.statistics.len(),
        started.elapsed()
    );
    let th = binarize_stage(dataset.schema(), dir).map_err(|e| e.in_stage("binarize"))?;
    log::info!("binarize: {} literals", th.literals.len());
    train_stage(cfg, dataset, dir).map_err(|e| e.in_stage("train"))?;
    log::info!("train: done ({:.1?})", started.elapsed());
    extract_stage(&dir.join(CHECKPOINT), dir).map_err(|e| e.in_stage("extract"))?;
    let splits = Splits::read(&dir.join(SPLITS)).map_err(|e| e.in_stage("evaluate"))?;
    let result = evaluate_stage(
        &dir.join(RULES),
        dataset,
        Some(&splits),
        &[Part::Train, Part::Valid, Part::Test],
        cfg.label_threshold,
        &dir.join(EVALUATION),
    )
    .map_err(|e| e.in_stage("evaluate"))?;
    Ok(Artifacts {
        statistics: dir.join(STATISTICS),
        thresholds: dir.join(THRESHOLDS),
        checkpoint: dir.join(CHECKPOINT),
        rules: dir.join(RULES),
        evaluation: dir.join(EVALUATION),
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{make_synthetic, Fixture};

    #[test]
    fn seeds_fan_out() {
        let s: Vec<u64> = (0..4).map(|k| stage_seed(7, k)).collect();
        let mut unique = s.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 4);
        assert_eq!(stage_seed(7, 1), stage_seed(8, 0));
        assert_eq!(stage_seed(7, 1), stage_seed(7, 1));
    }

    #[test]
    fn config_round_trip_and_hash() {
        let cfg = RunConfig::from_toml("seed = 5\nepochs = 3\nnoise = \"per-batch\"\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.noise, NoiseMode::PerBatch);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(RunConfig::from_toml("sede = 5").is_err());
        let moved = RunConfig {
            workdir: "elsewhere".into(),
            ..cfg.clone()
        };
        assert_eq!(moved.config_hash(), cfg.config_hash());
        let other = RunConfig {
            epochs: 4,
            ..cfg.clone()
        };
        assert_ne!(other.config_hash(), cfg.config_hash());
        assert_eq!(cfg.config_hash().len(), 64);
    }

    #[test]
    fn small_run_produces_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, _) = make_synthetic(Fixture::SingleSignal, 120, 1).unwrap();
        let cfg = RunConfig {
            workdir: dir.path().to_path_buf(),
            valid_count: 20,
            num_stats: 2,
            simulations: 20,
            depth: 3,
            epochs: 2,
            hidden: 3,
            rules: 4,
            ..RunConfig::default()
        };
        let a = run_all_on(&cfg, &ds).unwrap();
        for p in [
            &a.statistics,
            &a.thresholds,
            &a.checkpoint,
            &a.rules,
            &a.evaluation,
        ] {
            assert!(p.exists(), "{}", p.display());
        }
        let text = fs::read_to_string(&a.evaluation).unwrap();
        assert!(text.contains("test.fidelity"));
        assert!(text.contains("test.auc"));
        let stats_text = fs::read_to_string(&a.statistics).unwrap();
        let parsed = StatisticsFile::from_text(&stats_text, ds.schema()).unwrap();
        assert_eq!(parsed.to_text(ds.schema()), stats_text);
        assert_eq!(parsed.statistics.len(), 2);
    }
}
