//! Neural logical network with Gumbel-softmax input selection.
//!
//! Every neuron reads two inputs of the previous layer through two selectors.
//! A selector holds one logit per input; during training it reads the
//! relaxed selection `q = softmax((w + g) / tau)` with Gumbel noise `g`, and
//! at extraction time the argmax input. Conjunction neurons multiply the two
//! selected values, disjunction neurons compute `1 - (1 - a)(1 - b)`. Hidden
//! layers pass their input through (skip connection), the last layer does not,
//! and the score is a weighted sum of the last layer's neurons.
//!
//! Gradients are derived by hand. For a selector with value `p = q . z`,
//! `dp/dw_i = q_i (z_i - p) / tau` and `dp/dz_i = q_i`.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::binarize::{augment, BitMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// independent noise for every instance
    PerInstance,
    /// one noise draw per mini-batch, shared by its instances
    PerBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlnConfig {
    pub layers: usize,
    pub hidden: usize,
    pub rules: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init_std: f64,
    pub noise: NoiseMode,
    pub seed: u64,
}

impl Default for NlnConfig {
    fn default() -> Self {
        NlnConfig {
            layers: 2,
            hidden: 20,
            rules: 20,
            epochs: 500,
            batch_size: 128,
            lr_start: 0.1,
            lr_end: 0.001,
            tau_start: 1.0,
            tau_end: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            init_std: 0.1,
            noise: NoiseMode::PerInstance,
            seed: 0,
        }
    }
}

impl NlnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers < 1 || self.hidden < 1 {
            return bad("layers and hidden size must be at least 1");
        }
        if self.rules < 2 || !self.rules.is_multiple_of(2) {
            return bad("rule count must be even and at least 2");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        let positive = [
            self.lr_start,
            self.lr_end,
            self.tau_start,
            self.tau_end,
            self.eps,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("learning rates, temperatures and epsilon must be positive");
        }
        if self.lr_end > self.lr_start || self.tau_end > self.tau_start {
            return bad("schedules must not increase");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decay rates must lie in [0, 1)");
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad("init std must be finite and non-negative");
        }
        Ok(())
    }

    /// Learning rate and temperature for `epoch`, linear from start to end.
    pub fn schedule(&self, epoch: usize) -> (f64, f64) {
        let f = if self.epochs > 1 {
            epoch as f64 / (self.epochs - 1) as f64
        } else {
            0.0
        };
        (
            self.lr_start + (self.lr_end - self.lr_start) * f,
            self.tau_start + (self.tau_end - self.tau_start) * f,
        )
    }
}

/// One logical layer: `conj` conjunction and `disj` disjunction neurons with
/// two selectors each. Selector `2j` and `2j + 1` belong to neuron `j`;
/// neurons are numbered conjunctions first. Output is `[u, v]`, followed by
/// the layer input when `skip` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub input_dim: usize,
    pub conj: usize,
    pub disj: usize,
    pub skip: bool,
    /// row-major, one row of `input_dim` logits per selector
    pub logits: Vec<f64>,
}

impl Layer {
    pub fn neurons(&self) -> usize {
        self.conj + self.disj
    }

    pub fn selectors(&self) -> usize {
        2 * self.neurons()
    }

    pub fn output_dim(&self) -> usize {
        self.neurons() + if self.skip { self.input_dim } else { 0 }
    }

    pub fn selector(&self, s: usize) -> &[f64] {
        &self.logits[s * self.input_dim..(s + 1) * self.input_dim]
    }

    /// Hard wiring: argmax of each selector's logits, ties to the lowest index.
    pub fn wiring(&self) -> Vec<usize> {
        (0..self.selectors())
            .map(|s| argmax(self.selector(s)))
            .collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlnParams {
    pub layers: Vec<Layer>,
    /// rule weights, one per last-layer neuron
    pub weights: Vec<f64>,
}

impl NlnParams {
    /// Zero parameters for `inputs` literals: input width `2 * inputs + 2`,
    /// hidden widths `2 * hidden + previous`, last layer `rules` neurons.
    pub fn zeros(inputs: usize, layers: usize, hidden: usize, rules: usize) -> Self {
        assert!(layers >= 1 && hidden >= 1 && rules >= 2 && rules.is_multiple_of(2));
        let mut width = 2 * inputs + 2;
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let last = l + 1 == layers;
            let half = if last { rules / 2 } else { hidden };
            let layer = Layer {
                input_dim: width,
                conj: half,
                disj: half,
                skip: !last,
                logits: vec![0.0; 2 * 2 * half * width],
            };
            width = layer.output_dim();
            out.push(layer);
        }
        debug_assert_eq!(width, rules);
        NlnParams {
            layers: out,
            weights: vec![0.0; rules],
        }
    }

    /// Every entry i.i.d. normal(0, std).
    pub fn random<R: Rng + ?Sized>(
        inputs: usize,
        layers: usize,
        hidden: usize,
        rules: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(inputs, layers, hidden, rules);
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in p.values_mut() {
            *v = normal.sample(rng);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn rules(&self) -> usize {
        self.weights.len()
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for v in z.values_mut() {
            *v = 0.0;
        }
        z
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.logits.iter())
            .chain(self.weights.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.logits.iter_mut())
            .chain(self.weights.iter_mut())
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|l| l.logits.len()).sum::<usize>() + self.weights.len()
    }
}

/// Gumbel noise, one entry per logit.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise(pub Vec<Vec<f64>>);

impl Noise {
    pub fn sample<R: Rng + ?Sized>(params: &NlnParams, rng: &mut R) -> Self {
        let g = Gumbel::new(0.0, 1.0).expect("valid parameters");
        Noise(
            params
                .layers
                .iter()
                .map(|l| (0..l.logits.len()).map(|_| g.sample(rng)).collect())
                .collect(),
        )
    }

    pub fn zeros(params: &NlnParams) -> Self {
        Noise(
            params
                .layers
                .iter()
                .map(|l| vec![0.0; l.logits.len()])
                .collect(),
        )
    }
}

/// Relaxed selections `softmax((w + g) / tau)`, laid out like the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Selections {
    pub tau: f64,
    pub q: Vec<Vec<f64>>,
}

pub fn selections(params: &NlnParams, noise: &Noise, tau: f64) -> Result<Selections> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let mut q = Vec::with_capacity(params.layers.len());
    for (layer, g) in params.layers.iter().zip(&noise.0) {
        let n = layer.input_dim;
        let mut out = vec![0.0; layer.logits.len()];
        for s in 0..layer.selectors() {
            let range = s * n..(s + 1) * n;
            relax_into(
                &layer.logits[range.clone()],
                &g[range.clone()],
                tau,
                &mut out[range],
            );
        }
        q.push(out);
    }
    Ok(Selections { tau, q })
}

/// `softmax((logits + noise) / tau)` for one selector.
pub fn gumbel_softmax(logits: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
    assert_eq!(logits.len(), noise.len(), "length mismatch");
    let mut out = vec![0.0; logits.len()];
    relax_into(logits, noise, tau, &mut out);
    out
}

fn relax_into(logits: &[f64], noise: &[f64], tau: f64, out: &mut [f64]) {
    for ((o, &w), &gi) in out.iter_mut().zip(logits).zip(noise) {
        *o = (w + gi) / tau;
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Intermediate values of one relaxed forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `z[0]` is the input, `z[l]` the output of layer `l`
    pub z: Vec<Vec<f64>>,
    /// selector values `q . z` per layer
    pub p: Vec<Vec<f64>>,
    pub y: f64,
}

/// Relaxed forward pass under fixed selections.
pub fn forward_with(params: &NlnParams, sel: &Selections, z0: &[f64]) -> ForwardTrace {
    assert_eq!(z0.len(), params.input_dim(), "input width");
    let mut z = vec![z0.to_vec()];
    let mut p_all = Vec::with_capacity(params.layers.len());
    for (layer, q) in params.layers.iter().zip(&sel.q) {
        let input = z.last().expect("non-empty");
        let n = layer.input_dim;
        let p: Vec<f64> = (0..layer.selectors())
            .map(|s| dot(&q[s * n..(s + 1) * n], input))
            .collect();
        let mut out = Vec::with_capacity(layer.output_dim());
        for j in 0..layer.conj {
            out.push(p[2 * j] * p[2 * j + 1]);
        }
        for k in layer.conj..layer.neurons() {
            out.push(1.0 - (1.0 - p[2 * k]) * (1.0 - p[2 * k + 1]));
        }
        if layer.skip {
            out.extend_from_slice(input);
        }
        p_all.push(p);
        z.push(out);
    }
    let y = dot(&params.weights, z.last().expect("non-empty"));
    ForwardTrace { z, p: p_all, y }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relaxed forward pass with the given noise.
pub fn forward_soft(
    params: &NlnParams,
    z0: &[f64],
    tau: f64,
    noise: &Noise,
) -> Result<ForwardTrace> {
    let sel = selections(params, noise, tau)?;
    Ok(forward_with(params, &sel, z0))
}

/// Accumulates `dy * d(score)/d(param)` into `grad`.
pub fn backward(
    params: &NlnParams,
    sel: &Selections,
    trace: &ForwardTrace,
    dy: f64,
    grad: &mut NlnParams,
) {
    let last = trace.z.last().expect("non-empty");
    for (g, &z) in grad.weights.iter_mut().zip(last) {
        *g += dy * z;
    }
    let mut dz: Vec<f64> = params.weights.iter().map(|w| dy * w).collect();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let n = layer.input_dim;
        let p = &trace.p[l];
        let input = &trace.z[l];
        let mut dp = vec![0.0; layer.selectors()];
        for j in 0..layer.conj {
            dp[2 * j] = dz[j] * p[2 * j + 1];
            dp[2 * j + 1] = dz[j] * p[2 * j];
        }
        for k in layer.conj..layer.neurons() {
            dp[2 * k] = dz[k] * (1.0 - p[2 * k + 1]);
            dp[2 * k + 1] = dz[k] * (1.0 - p[2 * k]);
        }
        let need_dz = l > 0;
        let mut dz_in = if layer.skip {
            dz[layer.neurons()..].to_vec()
        } else {
            vec![0.0; n]
        };
        let q = &sel.q[l];
        let gl = &mut grad.layers[l].logits;
        for (s, &d) in dp.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let range = s * n..(s + 1) * n;
            let qs = &q[range.clone()];
            let c = d / sel.tau;
            for ((g, &qi), &zi) in gl[range].iter_mut().zip(qs).zip(input) {
                *g += c * qi * (zi - p[s]);
            }
            if need_dz {
                for (dzi, &qi) in dz_in.iter_mut().zip(qs) {
                    *dzi += d * qi;
                }
            }
        }
        dz = dz_in;
    }
}

/// Relaxed forward pass of a whole mini-batch under shared selections.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTrace {
    /// `z[l]` holds one row per instance
    pub z: Vec<Array2<f64>>,
    pub p: Vec<Array2<f64>>,
    pub y: Vec<f64>,
}

fn selector_matrix<'a>(layer: &Layer, q: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((layer.selectors(), layer.input_dim), q).expect("selector layout")
}

/// [`forward_with`] for many rows at once.
pub fn forward_batch(params: &NlnParams, sel: &Selections, rows: &[&[f64]]) -> BatchTrace {
    let n0 = params.input_dim();
    let mut z0 = Array2::zeros((rows.len(), n0));
    for (mut dst, src) in z0.rows_mut().into_iter().zip(rows) {
        assert_eq!(src.len(), n0, "input width");
        dst.assign(&ArrayView1::from(*src));
    }
    let mut z = vec![z0];
    let mut p_all = Vec::with_capacity(params.layers.len());
    for (layer, q) in params.layers.iter().zip(&sel.q) {
        let input = z.last().expect("non-empty");
        let p = input.dot(&selector_matrix(layer, q).t());
        let mut out = Array2::zeros((rows.len(), layer.output_dim()));
        for ((mut o, pr), zr) in out.rows_mut().into_iter().zip(p.rows()).zip(input.rows()) {
            for j in 0..layer.conj {
                o[j] = pr[2 * j] * pr[2 * j + 1];
            }
            for k in layer.conj..layer.neurons() {
                o[k] = 1.0 - (1.0 - pr[2 * k]) * (1.0 - pr[2 * k + 1]);
            }
            if layer.skip {
                o.slice_mut(s![layer.neurons()..]).assign(&zr);
            }
        }
        p_all.push(p);
        z.push(out);
    }
    let y = z
        .last()
        .expect("non-empty")
        .dot(&ArrayView1::from(&params.weights[..]))
        .to_vec();
    BatchTrace { z, p: p_all, y }
}

/// Accumulates `sum_r dy[r] * d(score_r)/d(param)` into `grad`.
pub fn backward_batch(
    params: &NlnParams,
    sel: &Selections,
    trace: &BatchTrace,
    dy: &[f64],
    grad: &mut NlnParams,
) {
    let dy = ArrayView1::from(dy);
    let last = trace.z.last().expect("non-empty");
    for (g, d) in grad.weights.iter_mut().zip(last.t().dot(&dy)) {
        *g += d;
    }
    let w = ArrayView1::from(&params.weights[..]);
    let mut dz: Array2<f64> = dy.insert_axis(Axis(1)).dot(&w.insert_axis(Axis(0)));
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let n = layer.input_dim;
        let p = &trace.p[l];
        let mut dp = Array2::zeros(p.raw_dim());
        for ((mut d, pr), dzr) in dp.rows_mut().into_iter().zip(p.rows()).zip(dz.rows()) {
            for j in 0..layer.conj {
                d[2 * j] = dzr[j] * pr[2 * j + 1];
                d[2 * j + 1] = dzr[j] * pr[2 * j];
            }
            for k in layer.conj..layer.neurons() {
                d[2 * k] = dzr[k] * (1.0 - pr[2 * k + 1]);
                d[2 * k + 1] = dzr[k] * (1.0 - pr[2 * k]);
            }
        }
        let q = selector_matrix(layer, &sel.q[l]);
        // sum over rows of dp * (z - p), split into dp^T z and dp . p
        let dpz = dp.t().dot(&trace.z[l]);
        let gl = &mut grad.layers[l].logits;
        for s in 0..layer.selectors() {
            let c = dp.column(s).dot(&p.column(s));
            let row = &mut gl[s * n..(s + 1) * n];
            for ((g, &qi), &a) in row.iter_mut().zip(q.row(s)).zip(dpz.row(s)) {
                *g += qi * (a - c) / sel.tau;
            }
        }
        if l > 0 {
            let mut dz_in = dp.dot(&q);
            if layer.skip {
                dz_in += &dz.slice(s![.., layer.neurons()..]);
            }
            dz = dz_in;
        }
    }
}

/// Discrete evaluation with every selector wired to its argmax input.
#[derive(Clone, Debug, PartialEq)]
pub struct HardOutput {
    /// `activations[l]` is the output of layer `l`
    pub activations: Vec<Vec<u8>>,
    pub y: f64,
}

pub fn forward_hard(params: &NlnParams, z0: &[u8]) -> HardOutput {
    let wiring: Vec<Vec<usize>> = params.layers.iter().map(Layer::wiring).collect();
    forward_wired(params, &wiring, z0)
}

/// [`forward_hard`] with precomputed wiring.
pub fn forward_wired(params: &NlnParams, wiring: &[Vec<usize>], z0: &[u8]) -> HardOutput {
    assert_eq!(z0.len(), params.input_dim(), "input width");
    let mut activations: Vec<Vec<u8>> = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let input = if l == 0 { z0 } else { &activations[l - 1] };
        let w = &wiring[l];
        let mut out = Vec::with_capacity(layer.output_dim());
        for j in 0..layer.conj {
            out.push(input[w[2 * j]] & input[w[2 * j + 1]]);
        }
        for k in layer.conj..layer.neurons() {
            out.push(input[w[2 * k]] | input[w[2 * k + 1]]);
        }
        if layer.skip {
            out.extend_from_slice(input);
        }
        activations.push(out);
    }
    let mut y = 0.0;
    for (&w, &b) in params
        .weights
        .iter()
        .zip(activations.last().expect("non-empty"))
    {
        if b == 1 {
            y += w;
        }
    }
    HardOutput { activations, y }
}

/// `ln(sigmoid(x))` without overflow.
pub fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean over ordered pairs `i != j` of `ln sigmoid(s_i - s_j)` when
/// `y_i > y_j` and `ln sigmoid(s_j - s_i)` otherwise. Larger is better.
pub fn ranking_objective(scores: &[f64], y: &[f64]) -> f64 {
    ranking_objective_grad(scores, y).0
}

/// The objective and its gradient with respect to `scores`.
pub fn ranking_objective_grad(scores: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(scores.len(), y.len(), "length mismatch");
    let n = scores.len();
    assert!(n >= 2, "need at least two instances");
    let norm = 1.0 / (n * (n - 1)) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // the pair ranks `hi` above `lo`
            let (hi, lo) = if y[i] > y[j] { (i, j) } else { (j, i) };
            let d = scores[hi] - scores[lo];
            total += ln_sigmoid(d);
            let g = sigmoid(-d) * norm;
            grad[hi] += g;
            grad[lo] -= g;
        }
    }
    (total * norm, grad)
}

/// Adam on a flattened parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    m: NlnParams,
    v: NlnParams,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &NlnParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, params: &mut NlnParams, grad: &NlnParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grad.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Augmented network inputs for every row, as reals.
pub fn network_inputs(bits: &BitMatrix) -> Vec<Vec<f64>> {
    (0..bits.rows())
        .map(|r| augment(bits.row(r)).into_iter().map(f64::from).collect())
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: NlnParams,
    /// mean mini-batch objective per epoch
    pub objectives: Vec<f64>,
}

/// Trains on literal rows (training split) against teacher scores `y`.
pub fn train(literals: &BitMatrix, y: &[f64], config: &NlnConfig) -> Result<TrainReport> {
    config.validate()?;
    if literals.rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: literals.rows(),
            right: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NlnParams::random(
        literals.cols(),
        config.layers,
        config.hidden,
        config.rules,
        config.init_std,
        &mut rng,
    );
    let inputs = network_inputs(literals);
    let mut adam = Adam::new(&params, config.beta1, config.beta2, config.eps);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut objectives = Vec::with_capacity(config.epochs);
    let mut grad = params.zeros_like();
    for epoch in 0..config.epochs {
        let (lr, tau) = config.schedule(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let by: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            for g in grad.values_mut() {
                *g = 0.0;
            }
            let objective = match config.noise {
                NoiseMode::PerBatch => {
                    let sel = selections(&params, &Noise::sample(&params, &mut rng), tau)?;
                    let rows: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
                    let trace = forward_batch(&params, &sel, &rows);
                    let (obj, dy) = ranking_objective_grad(&trace.y, &by);
                    let descent: Vec<f64> = dy.iter().map(|d| -d).collect();
                    backward_batch(&params, &sel, &trace, &descent, &mut grad);
                    obj
                }
                NoiseMode::PerInstance => {
                    // keep only the noise seeds and redo the forward pass in
                    // the backward sweep, which bounds memory by one instance
                    let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
                    let sel_for = |seed: u64| {
                        let mut r = ChaCha8Rng::seed_from_u64(seed);
                        selections(&params, &Noise::sample(&params, &mut r), tau)
                    };
                    let mut scores = Vec::with_capacity(batch.len());
                    for (&i, &seed) in batch.iter().zip(&seeds) {
                        scores.push(forward_with(&params, &sel_for(seed)?, &inputs[i]).y);
                    }
                    let (obj, dy) = ranking_objective_grad(&scores, &by);
                    for ((&i, &seed), d) in batch.iter().zip(&seeds).zip(dy) {
                        let sel = sel_for(seed)?;
                        let t = forward_with(&params, &sel, &inputs[i]);
                        backward(&params, &sel, &t, -d, &mut grad);
                    }
                    obj
                }
            };
            adam.step(&mut params, &grad, lr);
            sum += objective;
            batches += 1;
        }
        let mean = if batches > 0 {
            sum / batches as f64
        } else {
            0.0
        };
        log::debug!("epoch {epoch}: lr {lr:.5} tau {tau:.5} objective {mean:.5}");
        objectives.push(mean);
    }
    Ok(TrainReport { params, objectives })
}

/// Shape and randomness of a gradient check instance.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub inputs: usize,
    pub layers: usize,
    pub hidden: usize,
    pub rules: usize,
    pub tau: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            inputs: 6,
            layers: 2,
            hidden: 3,
            rules: 4,
            tau: 1.0,
            batch: 6,
            seed: 0,
        }
    }
}

/// Maximum relative error `|a - n| / max(|a|, |n|, 1e-6)` between analytic
/// and central-difference (`h = 1e-5`) gradients of the ranking objective on a
/// random network, batch and fixed noise.
pub fn grad_check(spec: &GradCheck) -> Result<f64> {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let params = NlnParams::random(
        spec.inputs,
        spec.layers,
        spec.hidden,
        spec.rules,
        1.0,
        &mut rng,
    );
    let inputs: Vec<Vec<f64>> = (0..spec.batch)
        .map(|_| {
            let z: Vec<u8> = (0..spec.inputs).map(|_| rng.random_range(0..2)).collect();
            augment(&z).into_iter().map(f64::from).collect()
        })
        .collect();
    let y: Vec<f64> = (0..spec.batch)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let noise: Vec<Noise> = (0..spec.batch)
        .map(|_| Noise::sample(&params, &mut rng))
        .collect();

    let objective = |p: &NlnParams| -> Result<f64> {
        let mut scores = Vec::with_capacity(spec.batch);
        for (z, g) in inputs.iter().zip(&noise) {
            scores.push(forward_soft(p, z, spec.tau, g)?.y);
        }
        Ok(ranking_objective(&scores, &y))
    };

    let mut analytic = params.zeros_like();
    let mut scores = Vec::with_capacity(spec.batch);
    let mut parts = Vec::with_capacity(spec.batch);
    for (z, g) in inputs.iter().zip(&noise) {
        let sel = selections(&params, g, spec.tau)?;
        let t = forward_with(&params, &sel, z);
        scores.push(t.y);
        parts.push((sel, t));
    }
    let (_, dy) = ranking_objective_grad(&scores, &y);
    for ((sel, t), d) in parts.iter().zip(dy) {
        backward(&params, sel, t, d, &mut analytic);
    }

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (k, &a) in analytic.values().enumerate() {
        let orig = *params.values().nth(k).expect("same shape");
        *probe.values_mut().nth(k).expect("same shape") = orig + H;
        let up = objective(&probe)?;
        *probe.values_mut().nth(k).expect("same shape") = orig - H;
        let down = objective(&probe)?;
        *probe.values_mut().nth(k).expect("same shape") = orig;
        let numeric = (up - down) / (2.0 * H);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_pass_matches_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = NlnParams::random(5, 3, 4, 6, 1.0, &mut rng);
        let sel = selections(&params, &Noise::sample(&params, &mut rng), 0.7).unwrap();
        let inputs: Vec<Vec<f64>> = (0..9)
            .map(|_| {
                let bits: Vec<u8> = (0..5).map(|_| rng.random_range(0..2)).collect();
                augment(&bits).into_iter().map(f64::from).collect()
            })
            .collect();
        let dy: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut by_row = params.zeros_like();
        let mut ys = Vec::new();
        for (z, &d) in inputs.iter().zip(&dy) {
            let t = forward_with(&params, &sel, z);
            ys.push(t.y);
            backward(&params, &sel, &t, d, &mut by_row);
        }
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let trace = forward_batch(&params, &sel, &rows);
        let mut batched = params.zeros_like();
        backward_batch(&params, &sel, &trace, &dy, &mut batched);
        for (a, b) in trace.y.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in batched.values().zip(by_row.values()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    fn small() -> NlnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        NlnParams::random(3, 2, 2, 4, 1.0, &mut rng)
    }

    #[test]
    fn widths() {
        for (inputs, layers, hidden, rules) in [(1, 1, 1, 2), (6, 2, 3, 4), (10, 3, 5, 8)] {
            let p = NlnParams::zeros(inputs, layers, hidden, rules);
            let mut h = 2 * inputs + 2;
            for (l, layer) in p.layers.iter().enumerate() {
                assert_eq!(layer.input_dim, h);
                h = if l + 1 < layers {
                    2 * hidden + h
                } else {
                    rules
                };
                assert_eq!(layer.output_dim(), h);
            }
            assert_eq!(p.weights.len(), rules);
        }
    }

    #[test]
    fn uniform_selection_closed_form() {
        let mut p = small();
        for l in &mut p.layers {
            l.logits.iter_mut().for_each(|w| *w = 0.0);
        }
        let z0 = vec![1.0; p.input_dim()];
        let t = forward_soft(&p, &z0, 0.7, &Noise::zeros(&p)).unwrap();
        let sum: f64 = p.weights.iter().sum();
        assert!((t.y - sum).abs() < 1e-12);
        assert!(t.p.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn shortcut_to_constant_one() {
        let mut p = NlnParams::zeros(2, 1, 1, 2);
        let ones = 2 * 2;
        let n = p.layers[0].input_dim;
        for s in 0..2 {
            for i in 0..n {
                p.layers[0].logits[s * n + i] = if i == ones { 1e6 } else { -1e6 };
            }
        }
        let t = forward_soft(&p, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0], 1.0, &Noise::zeros(&p)).unwrap();
        assert!((t.z[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_matches_hard_at_low_temperature() {
        let p = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let bits: Vec<u8> = (0..3).map(|_| rng.random_range(0..2)).collect();
            let z0 = augment(&bits);
            let zf: Vec<f64> = z0.iter().map(|&b| f64::from(b)).collect();
            let soft = forward_soft(&p, &zf, 1e-6, &Noise::zeros(&p)).unwrap();
            let hard = forward_hard(&p, &z0);
            assert!((soft.y - hard.y).abs() < 1e-4);
        }
    }

    #[test]
    fn truth_tables() {
        // one conjunction and one disjunction, both reading inputs 0 and 1
        let mut p = NlnParams::zeros(1, 1, 1, 2);
        let n = p.layers[0].input_dim;
        for s in 0..4 {
            p.layers[0].logits[s * n + (s % 2)] = 1.0;
        }
        p.weights = vec![1.0, 10.0];
        let out = forward_hard(&p, &[1, 0, 1, 0]);
        assert_eq!(out.activations[0], vec![0, 1]);
        assert_eq!(out.y, 10.0);
        // both disjunction selectors on the constant 0
        for s in 2..4 {
            p.layers[0].logits[s * n..(s + 1) * n].copy_from_slice(&[0.0, 0.0, 0.0, 1.0]);
        }
        assert_eq!(forward_hard(&p, &[1, 0, 1, 0]).activations[0][1], 0);
    }

    #[test]
    fn rejects_bad_temperature() {
        let p = small();
        assert!(forward_soft(&p, &vec![0.0; p.input_dim()], 0.0, &Noise::zeros(&p)).is_err());
    }

    #[test]
    fn objective_examples() {
        assert!((ranking_objective(&[3.0, 1.0], &[1.0, 2.0]) - ln_sigmoid(-2.0)).abs() < 1e-12);
        assert!((ln_sigmoid(-2.0) + 2.126_928_011).abs() < 1e-9);
        let c = ranking_objective(&[0.5; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((c - 0.5f64.ln()).abs() < 1e-12);
        let far = ranking_objective(&[0.0, 100.0, 200.0], &[0.0, 1.0, 2.0]);
        assert!(far < 0.0 && far > -1e-40);
        assert!(ln_sigmoid(-800.0).is_finite() && ln_sigmoid(800.0) == 0.0);
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let s = [0.3, -1.2, 2.0, 0.1];
        let y = [1.0, 0.0, 1.0, 3.0];
        let (_, g) = ranking_objective_grad(&s, &y);
        for i in 0..4 {
            let mut up = s;
            up[i] += 1e-6;
            let mut down = s;
            down[i] -= 1e-6;
            let n = (ranking_objective(&up, &y) - ranking_objective(&down, &y)) / 2e-6;
            assert!((n - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn weight_gradient_is_last_activation() {
        let p = small();
        let z0: Vec<f64> = augment(&[1, 0, 1]).into_iter().map(f64::from).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sel = selections(&p, &Noise::sample(&p, &mut rng), 0.5).unwrap();
        let t = forward_with(&p, &sel, &z0);
        let mut g = p.zeros_like();
        backward(&p, &sel, &t, 1.0, &mut g);
        assert_eq!(&g.weights, t.z.last().unwrap());
    }

    #[test]
    fn identical_inputs_give_zero_gradient() {
        let p = small();
        let z0: Vec<f64> = augment(&[0, 1, 1]).into_iter().map(f64::from).collect();
        let sel = selections(&p, &Noise::zeros(&p), 1.0).unwrap();
        let t = forward_with(&p, &sel, &z0);
        let (_, dy) = ranking_objective_grad(&[t.y; 4], &[1.0, 2.0, 3.0, 4.0]);
        let mut g = p.zeros_like();
        for d in dy {
            backward(&p, &sel, &t, d, &mut g);
        }
        assert!(g.values().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_check() {
        assert!(grad_check(&GradCheck::default()).unwrap() <= 1e-4);
        let sharp = GradCheck {
            tau: 0.1,
            ..GradCheck::default()
        };
        let e = grad_check(&sharp).unwrap();
        assert!(e <= 1e-3, "{e}");
        assert_eq!(grad_check(&sharp).unwrap(), e);
    }

    #[test]
    fn zero_epochs_returns_init_and_training_is_deterministic() {
        let bits = BitMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 1], vec![0, 0]]);
        let y = [1.0, 0.0, 2.0, -1.0];
        let cfg = NlnConfig {
            epochs: 0,
            hidden: 2,
            rules: 2,
            seed: 3,
            ..NlnConfig::default()
        };
        let init = NlnParams::random(2, 2, 2, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(train(&bits, &y, &cfg).unwrap().params, init);
        let cfg = NlnConfig { epochs: 5, ..cfg };
        assert_eq!(
            train(&bits, &y, &cfg).unwrap().params,
            train(&bits, &y, &cfg).unwrap().params
        );
    }

    #[test]
    fn schedules_are_linear() {
        let cfg = NlnConfig {
            epochs: 3,
            ..NlnConfig::default()
        };
        assert_eq!(cfg.schedule(0), (0.1, 1.0));
        let (lr, tau) = cfg.schedule(2);
        assert!((lr - 0.001).abs() < 1e-15 && (tau - 1e-4).abs() < 1e-15);
    }
}
