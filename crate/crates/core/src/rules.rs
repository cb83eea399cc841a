//! Weighted boolean rules read off a trained network, their scores, metrics
//! and the rules file.
//!
//! Rules file, UTF-8 text, one record per line, `#` lines are comments:
//!
//! ```text
//! seqrules-rules 1
//! config-hash <hex>
//! seed <u64>
//! literals <P>
//! literal Sum∘Select[money] > 3.5
//! ...
//! rules <R>
//! rule <weight> <expr>
//! ...
//! ```
//!
//! Weights are written in shortest round-trip form. `expr` is an
//! s-expression over `true`, `false`, `L<i>` (literal `i`), `!L<i>` (its
//! negation), `(and a b)` and `(or a b)`. Each rule is preceded by a comment
//! with its rendered form.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use crate::binarize::{BitMatrix, LiteralDescriptor};
use crate::dataset::{Dataset, Schema};
use crate::error::{Error, Result};
use crate::nln::{Layer, NlnParams};
use crate::operators::{evaluate_column, StatisticChain};

const MAGIC: &str = "seqrules-rules";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BoolExpr {
    Const(bool),
    Lit(usize),
    NotLit(usize),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
}

impl BoolExpr {
    pub fn and(a: BoolExpr, b: BoolExpr) -> Self {
        BoolExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: BoolExpr, b: BoolExpr) -> Self {
        BoolExpr::Or(Box::new(a), Box::new(b))
    }

    pub fn eval(&self, z: &[u8]) -> bool {
        match self {
            BoolExpr::Const(b) => *b,
            BoolExpr::Lit(i) => z[*i] == 1,
            BoolExpr::NotLit(i) => z[*i] == 0,
            BoolExpr::And(a, b) => a.eval(z) && b.eval(z),
            BoolExpr::Or(a, b) => a.eval(z) || b.eval(z),
        }
    }

    /// Bottom-up rewriting with the constant and idempotence laws only;
    /// `a AND NOT a` is left alone.
    pub fn simplify(&self) -> BoolExpr {
        match self {
            BoolExpr::And(a, b) => match (a.simplify(), b.simplify()) {
                (BoolExpr::Const(false), _) | (_, BoolExpr::Const(false)) => BoolExpr::Const(false),
                (BoolExpr::Const(true), x) | (x, BoolExpr::Const(true)) => x,
                (x, y) if x == y => x,
                (x, y) => BoolExpr::and(x, y),
            },
            BoolExpr::Or(a, b) => match (a.simplify(), b.simplify()) {
                (BoolExpr::Const(true), _) | (_, BoolExpr::Const(true)) => BoolExpr::Const(true),
                (BoolExpr::Const(false), x) | (x, BoolExpr::Const(false)) => x,
                (x, y) if x == y => x,
                (x, y) => BoolExpr::or(x, y),
            },
            leaf => leaf.clone(),
        }
    }

    /// Number of literal leaves, counting repeats.
    pub fn literal_count(&self) -> usize {
        match self {
            BoolExpr::Const(_) => 0,
            BoolExpr::Lit(_) | BoolExpr::NotLit(_) => 1,
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) => a.literal_count() + b.literal_count(),
        }
    }

    /// Distinct literal indices.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            BoolExpr::Const(_) => {}
            BoolExpr::Lit(i) | BoolExpr::NotLit(i) => {
                out.insert(*i);
            }
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// `Some(v)` if a non-constant expression takes value `v` on every
    /// assignment of its variables.
    pub fn degenerate(&self) -> Option<bool> {
        if matches!(self, BoolExpr::Const(_)) {
            return None;
        }
        let vars: Vec<usize> = self.variables().into_iter().collect();
        if vars.len() > 16 {
            return None;
        }
        let width = vars.iter().max().map_or(0, |m| m + 1);
        let mut z = vec![0u8; width];
        let mut seen = [false; 2];
        for mask in 0u32..1 << vars.len() {
            for (k, &v) in vars.iter().enumerate() {
                z[v] = ((mask >> k) & 1) as u8;
            }
            seen[usize::from(self.eval(&z))] = true;
            if seen[0] && seen[1] {
                return None;
            }
        }
        Some(seen[1])
    }

    fn render_into(&self, out: &mut String, literals: &[String], top: bool) {
        match self {
            BoolExpr::Const(true) => out.push_str(if top { "TRUE (bias)" } else { "TRUE" }),
            BoolExpr::Const(false) => out.push_str("FALSE"),
            BoolExpr::Lit(i) => {
                if top {
                    out.push_str(&literals[*i]);
                } else {
                    out.push('(');
                    out.push_str(&literals[*i]);
                    out.push(')');
                }
            }
            BoolExpr::NotLit(i) => {
                out.push_str("NOT (");
                out.push_str(&literals[*i]);
                out.push(')');
            }
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) => {
                let op = if matches!(self, BoolExpr::And(..)) {
                    " AND "
                } else {
                    " OR "
                };
                for (k, child) in [a, b].into_iter().enumerate() {
                    if k == 1 {
                        out.push_str(op);
                    }
                    let composite = matches!(**child, BoolExpr::And(..) | BoolExpr::Or(..));
                    if composite {
                        out.push('(');
                    }
                    child.render_into(out, literals, false);
                    if composite {
                        out.push(')');
                    }
                }
            }
        }
    }
}

/// The s-expression form used in the rules file.
impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::Const(b) => write!(f, "{b}"),
            BoolExpr::Lit(i) => write!(f, "L{i}"),
            BoolExpr::NotLit(i) => write!(f, "!L{i}"),
            BoolExpr::And(a, b) => write!(f, "(and {a} {b})"),
            BoolExpr::Or(a, b) => write!(f, "(or {a} {b})"),
        }
    }
}

impl std::str::FromStr for BoolExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<(usize, &str)> = tokenize(s);
        let mut pos = 0;
        let e = parse_expr(&tokens, &mut pos, s.len())?;
        if pos != tokens.len() {
            return Err(Error::Parse {
                pos: tokens[pos].0,
                msg: "trailing input".into(),
            });
        }
        Ok(e)
    }
}

fn tokenize(s: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(b) = start.take() {
                out.push((b, &s[b..i]));
            }
            if !c.is_whitespace() {
                out.push((i, &s[i..i + 1]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(b) = start {
        out.push((b, &s[b..]));
    }
    out
}

fn parse_expr(tokens: &[(usize, &str)], pos: &mut usize, end: usize) -> Result<BoolExpr> {
    let err = |p: usize, m: &str| Error::Parse {
        pos: p,
        msg: m.into(),
    };
    let &(at, tok) = tokens
        .get(*pos)
        .ok_or_else(|| err(end, "unexpected end of expression"))?;
    *pos += 1;
    let lit = |t: &str| t.parse::<usize>().map_err(|_| err(at, "bad literal index"));
    match tok {
        "true" => Ok(BoolExpr::Const(true)),
        "false" => Ok(BoolExpr::Const(false)),
        "(" => {
            let &(op_at, op) = tokens
                .get(*pos)
                .ok_or_else(|| err(end, "missing operator"))?;
            *pos += 1;
            let a = parse_expr(tokens, pos, end)?;
            let b = parse_expr(tokens, pos, end)?;
            match tokens.get(*pos) {
                Some(&(_, ")")) => *pos += 1,
                Some(&(p, _)) => return Err(err(p, "expected `)`")),
                None => return Err(err(end, "expected `)`")),
            }
            match op {
                "and" => Ok(BoolExpr::and(a, b)),
                "or" => Ok(BoolExpr::or(a, b)),
                _ => Err(err(op_at, "expected `and` or `or`")),
            }
        }
        t if t.starts_with("!L") => Ok(BoolExpr::NotLit(lit(&t[2..])?)),
        t if t.starts_with('L') => Ok(BoolExpr::Lit(lit(&t[1..])?)),
        _ => Err(err(at, "unexpected token")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub weight: f64,
    pub expr: BoolExpr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    pub literals: Vec<LiteralDescriptor>,
}

/// Run identification written into artifact headers.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

/// Unsimplified expression of every last-layer neuron under the argmax wiring.
pub fn unfold(params: &NlnParams) -> Vec<BoolExpr> {
    let wiring: Vec<Vec<usize>> = params.layers.iter().map(Layer::wiring).collect();
    let last = params.layers.len() - 1;
    (0..params.rules())
        .map(|r| node_expr(params, &wiring, last + 1, r))
        .collect()
}

/// Expression of unit `index` of activation vector `level` (0 = input).
fn node_expr(params: &NlnParams, wiring: &[Vec<usize>], level: usize, index: usize) -> BoolExpr {
    if level == 0 {
        let p = (params.input_dim() - 2) / 2;
        return match index {
            i if i < p => BoolExpr::Lit(i),
            i if i < 2 * p => BoolExpr::NotLit(i - p),
            i if i == 2 * p => BoolExpr::Const(true),
            _ => BoolExpr::Const(false),
        };
    }
    let layer = &params.layers[level - 1];
    let w = &wiring[level - 1];
    if index >= layer.neurons() {
        return node_expr(params, wiring, level - 1, index - layer.neurons());
    }
    let a = node_expr(params, wiring, level - 1, w[2 * index]);
    let b = node_expr(params, wiring, level - 1, w[2 * index + 1]);
    if index < layer.conj {
        BoolExpr::and(a, b)
    } else {
        BoolExpr::or(a, b)
    }
}

/// Rules of a trained network over the given literals.
pub fn extract(params: &NlnParams, literals: Vec<LiteralDescriptor>) -> Result<RuleSet> {
    if params.input_dim() != 2 * literals.len() + 2 {
        return Err(Error::LengthMismatch {
            left: params.input_dim(),
            right: 2 * literals.len() + 2,
        });
    }
    let rules = unfold(params)
        .into_iter()
        .zip(&params.weights)
        .map(|(e, &weight)| Rule {
            weight,
            expr: e.simplify(),
        })
        .collect();
    Ok(RuleSet { rules, literals })
}

impl RuleSet {
    /// Sum of the weights of the satisfied rules, in rule order.
    pub fn score(&self, z: &[u8]) -> Result<f64> {
        if z.len() != self.literals.len() {
            return Err(Error::LengthMismatch {
                left: z.len(),
                right: self.literals.len(),
            });
        }
        let mut y = 0.0;
        for r in &self.rules {
            if r.expr.eval(z) {
                y += r.weight;
            }
        }
        Ok(y)
    }

    pub fn scores(&self, bits: &BitMatrix) -> Result<Vec<f64>> {
        (0..bits.rows()).map(|r| self.score(bits.row(r))).collect()
    }

    /// Literal values of every sequence of `dataset`, computed from the
    /// descriptors alone.
    pub fn literal_bits(&self, dataset: &Dataset) -> BitMatrix {
        let all: Vec<usize> = (0..dataset.len()).collect();
        let mut cache: HashMap<&StatisticChain, crate::numerics::Matrix> = HashMap::new();
        for d in &self.literals {
            cache
                .entry(&d.chain)
                .or_insert_with(|| evaluate_column(&d.chain, dataset, &all));
        }
        let rows: Vec<Vec<u8>> = (0..dataset.len())
            .map(|i| {
                self.literals
                    .iter()
                    .map(|d| {
                        let v = cache[&d.chain].get(i, d.dim.unwrap_or(0));
                        u8::from(v > d.threshold)
                    })
                    .collect()
            })
            .collect();
        BitMatrix::from_rows(&rows)
    }

    /// One line per rule: signed weight, two spaces, expression; followed by
    /// a warning line for rules that are constant without being `TRUE`/`FALSE`.
    pub fn render(&self, schema: &Schema) -> String {
        let names: Vec<String> = self.literals.iter().map(|d| d.render(schema)).collect();
        let mut out = String::new();
        for (k, r) in self.rules.iter().enumerate() {
            out.push_str(&render_rule(r, &names));
            out.push('\n');
            if let Some(v) = r.expr.degenerate() {
                let what = if v {
                    "always true (tautology)"
                } else {
                    "always false (contradiction)"
                };
                out.push_str(&format!("  warning: rule {} is {what}\n", k + 1));
            }
        }
        out
    }

    pub fn to_text(&self, schema: &Schema, stamp: &Stamp) -> String {
        let names: Vec<String> = self.literals.iter().map(|d| d.render(schema)).collect();
        let mut out = format!(
            "{MAGIC} {VERSION}\nconfig-hash {}\nseed {}\n",
            stamp.config_hash, stamp.seed
        );
        out.push_str(&format!("literals {}\n", names.len()));
        for n in &names {
            out.push_str(&format!("literal {n}\n"));
        }
        out.push_str(&format!("rules {}\n", self.rules.len()));
        for r in &self.rules {
            out.push_str(&format!("# {}\n", render_rule(r, &names)));
            out.push_str(&format!("rule {} {}\n", r.weight, r.expr));
        }
        out
    }

    pub fn from_text(text: &str, schema: &Schema) -> Result<(RuleSet, Stamp)> {
        // `pos` of the returned errors is the 1-based line number
        let err = |line: usize, m: String| Error::Parse {
            pos: line + 1,
            msg: format!("line {}: {m}", line + 1),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());
        let mut next = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines.next().ok_or_else(|| Error::Parse {
                pos: 0,
                msg: format!("unexpected end of file, missing `{key}` line"),
            })?;
            match l.split_once(' ') {
                Some((k, rest)) if k == key => Ok((n, rest.to_string())),
                _ => Err(err(n, format!("expected `{key} ...`"))),
            }
        };
        let (n, version) = next(MAGIC)?;
        if version.trim() != VERSION.to_string() {
            return Err(err(n, format!("unsupported rules file version {version}")));
        }
        let (_, config_hash) = next("config-hash")?;
        let (n, seed) = next("seed")?;
        let seed = seed.trim().parse().map_err(|_| err(n, "bad seed".into()))?;
        let (n, count) = next("literals")?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| err(n, "bad literal count".into()))?;
        let mut literals = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = next("literal")?;
            literals.push(LiteralDescriptor::parse(&l, schema).map_err(|e| err(n, e.to_string()))?);
        }
        let (n, count) = next("rules")?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| err(n, "bad rule count".into()))?;
        let mut rules = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = next("rule")?;
            let (w, e) = l
                .split_once(' ')
                .ok_or_else(|| err(n, "expected `rule <weight> <expr>`".into()))?;
            let weight: f64 = w.parse().map_err(|_| err(n, format!("bad weight {w:?}")))?;
            let expr: BoolExpr = e.parse().map_err(|x: Error| err(n, x.to_string()))?;
            if expr.variables().iter().any(|&v| v >= literals.len()) {
                return Err(err(n, "literal index out of range".into()));
            }
            rules.push(Rule { weight, expr });
        }
        if let Some((n, _)) = lines.next() {
            return Err(err(n, "unexpected content after the last rule".into()));
        }
        Ok((
            RuleSet { rules, literals },
            Stamp {
                config_hash: config_hash.trim().to_string(),
                seed,
            },
        ))
    }

    pub fn write(&self, path: &Path, schema: &Schema, stamp: &Stamp) -> Result<()> {
        std::fs::write(path, self.to_text(schema, stamp)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, schema: &Schema) -> Result<(RuleSet, Stamp)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RuleSet::from_text(&text, schema).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn render_rule(rule: &Rule, names: &[String]) -> String {
    let mut s = format!("{:+.4}  ", rule.weight);
    rule.expr.render_into(&mut s, names, true);
    s
}

/// Fraction of ordered pairs `i != j` on which `y_i > y_j` and `s_i > s_j`
/// agree. Runs in `O(N log N)`.
pub fn fidelity(y: &[f64], s: &[f64]) -> Result<f64> {
    if y.len() != s.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: s.len(),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    let total = (n as u128) * (n as u128 - 1);
    let a = strict_pairs(y);
    let b = strict_pairs(s);
    let c = concordant_pairs(y, s);
    let agree = total + 2 * c - a - b;
    Ok(agree as f64 / total as f64)
}

/// Number of ordered pairs with `x_i > x_j`.
fn strict_pairs(x: &[f64]) -> u128 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let mut count = 0u128;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        count += (i as u128) * (j - i) as u128;
        i = j;
    }
    count
}

/// Number of ordered pairs with `y_i > y_j` and `s_i > s_j`.
fn concordant_pairs(y: &[f64], s: &[f64]) -> u128 {
    let n = y.len();
    // dense ranks of s
    let mut sorted_s = s.to_vec();
    sorted_s.sort_by(f64::total_cmp);
    sorted_s.dedup();
    let rank = |v: f64| sorted_s.partition_point(|&x| x < v);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| y[i].total_cmp(&y[j]));
    let mut tree = Fenwick::new(sorted_s.len());
    let mut count = 0u128;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && y[order[j]] == y[order[i]] {
            j += 1;
        }
        for &k in &order[i..j] {
            count += tree.prefix(rank(s[k])) as u128;
        }
        for &k in &order[i..j] {
            tree.add(rank(s[k]));
        }
        i = j;
    }
    count
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// count of inserted ranks `< i`
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut sum = 0;
        while i > 0 {
            sum += self.0[i];
            i -= i & i.wrapping_neg();
        }
        sum
    }
}

/// Area under the ROC curve by the rank-sum statistic; ties count one half.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: scores.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}
