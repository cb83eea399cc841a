//! Statistic generation by Monte Carlo tree search.
//!
//! One search tree is grown per operator position: the root holds the
//! committed prefix, each simulation walks down by UCT, expands one untried
//! operator, completes the chain with a uniform random rollout and scores it
//! by its absolute (multiple) correlation with the target on a fresh batch.
//! The root child with the best mean reward is committed and a new tree is
//! started, until the prefix is a complete statistic.
//!
//! Several statistics are produced by excluding each found chain and
//! replacing the target by the residual of the teacher scores after a joint
//! least-squares fit on everything found so far.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_batch, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{multiple_corr, pearson_corr, residualize, zscore, Matrix};
use crate::operators::{evaluate_column, Grammar, Operator, StatisticChain};

/// Expansion attempts before an expansion that cannot be completed is given up.
const ROLLOUT_RETRIES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_depth: usize,
    pub num_stats: usize,
    pub batch_size: usize,
    pub simulations: usize,
    pub exploration: f64,
    pub seed: u64,
    /// z-score the target before each tree search
    pub standardize_target: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_depth: 4,
            num_stats: 20,
            batch_size: 128,
            simulations: 500,
            exploration: std::f64::consts::FRAC_1_SQRT_2,
            seed: 0,
            standardize_target: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_depth < 2 {
            return bad("depth must be at least 2");
        }
        if self.num_stats < 1 {
            return bad("at least one statistic must be requested");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if self.simulations < 1 {
            return bad("at least one simulation is required");
        }
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return bad("exploration constant must be finite and non-negative");
        }
        Ok(())
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug)]
pub struct SearchNode {
    pub state: StatisticChain,
    pub action: Option<Operator>,
    pub cum_reward: f64,
    pub visits: u64,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Not yet expanded operators, canonical order; filled on first visit.
    untried: Option<Vec<Operator>>,
}

impl SearchNode {
    pub fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.cum_reward / self.visits as f64
        }
    }
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Clone, Debug)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(root_state: StatisticChain) -> Self {
        SearchTree {
            nodes: vec![SearchNode {
                state: root_state,
                action: None,
                cum_reward: 0.0,
                visits: 0,
                parent: None,
                children: Vec::new(),
                untried: None,
            }],
        }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    /// Root child with the highest mean reward; ties go to the earlier child,
    /// which is the earlier operator in canonical order.
    pub fn best_child(&self) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64)> = None;
        for &c in &self.root().children {
            let m = self.nodes[c].mean_reward();
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((c, m));
            }
        }
        best.map(|(c, _)| c)
    }
}

/// UCT value of a visited child.
pub fn uct_score(child: &SearchNode, parent_visits: u64, exploration: f64) -> f64 {
    let c = child.visits as f64;
    child.cum_reward / c + exploration * (2.0 * (parent_visits as f64).ln() / c).sqrt()
}

/// Absolute correlation of the statistic with `target` on the rows in
/// `batch`; vector statistics use the coefficient of multiple correlation.
/// `target` is indexed like the dataset.
pub fn reward(chain: &StatisticChain, dataset: &Dataset, batch: &[usize], target: &[f64]) -> f64 {
    let values = evaluate_column(chain, dataset, batch);
    let t: Vec<f64> = batch.iter().map(|&i| target[i]).collect();
    score_values(&values, &t)
}

fn score_values(values: &Matrix, target: &[f64]) -> f64 {
    if values.cols() == 1 {
        pearson_corr(values.as_slice(), target).map_or(0.0, f64::abs)
    } else {
        multiple_corr(values, target)
    }
}

/// Completes `prefix` by choosing uniformly among the valid next operators
/// until the chain is a statistic not in `excluded`.
pub fn rollout<R: Rng + ?Sized>(
    grammar: &Grammar,
    prefix: &StatisticChain,
    excluded: &HashSet<StatisticChain>,
    rng: &mut R,
) -> Result<StatisticChain> {
    let mut chain = prefix.clone();
    loop {
        if chain.is_terminal() {
            return if excluded.contains(&chain) {
                Err(Error::Exhausted)
            } else {
                Ok(chain)
            };
        }
        let next = grammar.valid_next_operators(&chain, excluded);
        if next.is_empty() {
            return Err(Error::Exhausted);
        }
        chain.push(next[rng.random_range(0..next.len())]);
    }
}

/// Tree search state for one operator position.
pub struct Search<'a> {
    pub dataset: &'a Dataset,
    pub grammar: &'a Grammar,
    pub target: &'a [f64],
    pub excluded: &'a HashSet<StatisticChain>,
    pub config: &'a SearchConfig,
}

impl Search<'_> {
    /// One selection / expansion / simulation / backpropagation pass.
    /// Returns the reward that was backpropagated.
    pub fn grow_tree<R: Rng + ?Sized>(&self, tree: &mut SearchTree, rng: &mut R) -> Result<f64> {
        for _ in 0..ROLLOUT_RETRIES {
            let mut path = vec![0];
            let mut v = 0;
            let mut expanded = false;
            loop {
                if tree.nodes[v].state.is_terminal() {
                    break;
                }
                if tree.nodes[v].untried.is_none() {
                    let ops = self
                        .grammar
                        .valid_next_operators(&tree.nodes[v].state, self.excluded);
                    tree.nodes[v].untried = Some(ops);
                }
                let untried = tree.nodes[v].untried.as_mut().expect("set above");
                if !untried.is_empty() {
                    let op = untried.remove(0);
                    let id = tree.nodes.len();
                    let state = tree.nodes[v].state.then(op);
                    tree.nodes.push(SearchNode {
                        state,
                        action: Some(op),
                        cum_reward: 0.0,
                        visits: 0,
                        parent: Some(v),
                        children: Vec::new(),
                        untried: None,
                    });
                    tree.nodes[v].children.push(id);
                    path.push(id);
                    v = id;
                    expanded = true;
                    break;
                }
                let parent_visits = tree.nodes[v].visits;
                let mut best: Option<(NodeId, f64)> = None;
                for &c in &tree.nodes[v].children {
                    let s = uct_score(&tree.nodes[c], parent_visits, self.config.exploration);
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((c, s));
                    }
                }
                match best {
                    Some((c, _)) => {
                        path.push(c);
                        v = c;
                    }
                    None => return Err(Error::Exhausted),
                }
            }

            let statistic = if tree.nodes[v].state.is_terminal() {
                tree.nodes[v].state.clone()
            } else {
                match rollout(self.grammar, &tree.nodes[v].state, self.excluded, rng) {
                    Ok(s) => s,
                    Err(_) if expanded => {
                        // dead end: drop the new child and try again
                        let parent = tree.nodes[v].parent.expect("expanded node has a parent");
                        tree.nodes[parent].children.retain(|&c| c != v);
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            };
            let batch = sample_batch(self.dataset.len(), self.config.batch_size, rng);
            let r = reward(&statistic, self.dataset, &batch, self.target);
            for &id in &path {
                tree.nodes[id].visits += 1;
                tree.nodes[id].cum_reward += r;
            }
            return Ok(r);
        }
        Err(Error::Exhausted)
    }
}

/// Builds one statistic operator by operator. Returns the chain and the mean
/// reward of the last committed node.
pub fn generate_statistic<R: Rng + ?Sized>(
    dataset: &Dataset,
    target: &[f64],
    config: &SearchConfig,
    grammar: &Grammar,
    excluded: &HashSet<StatisticChain>,
    rng: &mut R,
) -> Result<(StatisticChain, f64)> {
    let search = Search {
        dataset,
        grammar,
        target,
        excluded,
        config,
    };
    let mut prefix = StatisticChain::default();
    let mut achieved = 0.0;
    while !prefix.is_terminal() {
        if !grammar.has_completion(&prefix, excluded) {
            return Err(Error::Exhausted);
        }
        let mut tree = SearchTree::new(prefix.clone());
        for _ in 0..config.simulations {
            search.grow_tree(&mut tree, rng)?;
        }
        let best = tree.best_child().ok_or(Error::Exhausted)?;
        let node = tree.node(best);
        achieved = node.mean_reward();
        prefix = node.state.clone();
    }
    Ok((prefix, achieved))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedStatistic {
    pub chain: StatisticChain,
    /// one row per sequence of the dataset the search ran on
    pub values: Matrix,
    pub reward: f64,
}

/// Generates up to `config.num_stats` distinct statistics. Stops early with a
/// warning if the statistic space runs out.
pub fn generate_top_k(
    dataset: &Dataset,
    y: &[f64],
    config: &SearchConfig,
) -> Result<Vec<GeneratedStatistic>> {
    config.validate()?;
    if y.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: dataset.len(),
        });
    }
    let grammar = Grammar::new(dataset.schema(), config.max_depth);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut excluded = HashSet::new();
    let mut out: Vec<GeneratedStatistic> = Vec::new();
    let mut residual = y.to_vec();
    for k in 0..config.num_stats {
        let target = if config.standardize_target {
            zscore(&residual)
        } else {
            residual.clone()
        };
        let (chain, reward) =
            match generate_statistic(dataset, &target, config, &grammar, &excluded, &mut rng) {
                Ok(found) => found,
                Err(Error::Exhausted) => {
                    log::warn!("statistic space exhausted after {k} statistics");
                    break;
                }
                Err(e) => return Err(e),
            };
        log::info!(
            "statistic {}: {} (reward {reward:.4})",
            k + 1,
            crate::operators::format_chain(&chain, dataset.schema())
        );
        let values = evaluate_column(&chain, dataset, &all);
        excluded.insert(chain.clone());
        out.push(GeneratedStatistic {
            chain,
            values,
            reward,
        });
        let mats: Vec<&Matrix> = out.iter().map(|g| &g.values).collect();
        residual = residualize(y, &mats);
    }
    Ok(out)
}

/// `k` distinct uniformly rolled-out statistics, the unguided baseline.
pub fn random_statistics(
    dataset: &Dataset,
    max_depth: usize,
    k: usize,
    seed: u64,
) -> Vec<GeneratedStatistic> {
    let grammar = Grammar::new(dataset.schema(), max_depth);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut excluded = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..k {
        let Ok(chain) = rollout(&grammar, &StatisticChain::default(), &excluded, &mut rng) else {
            break;
        };
        let values = evaluate_column(&chain, dataset, &all);
        excluded.insert(chain.clone());
        out.push(GeneratedStatistic {
            chain,
            values,
            reward: 0.0,
        });
    }
    out
}
