//! A small ReLU multilayer perceptron with hand-written backpropagation.
//!
//! Weights are stored input-major: for a layer mapping `n_in → n_out`,
//! `w[j * n_out + k]` connects input `j` to output `k`. Zero inputs are skipped
//! in both passes, which makes one-hot token encodings cheap.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::causal::{LowLevelModel, Patch, Site};
use crate::error::{Error, Result};
use crate::models::dataset::Dataset;
use crate::models::logic::{TokenInput, SEQ_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Softmax cross-entropy over the output logits.
    CrossEntropy,
    /// Sum over outputs of (output − target)².
    SquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

/// A pinned value inside a hidden layer (post-activation).
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenPatch {
    Unit {
        layer: usize,
        unit: usize,
        value: f64,
    },
    /// Sets the projection coefficient onto a unit direction to `value`.
    Direction {
        layer: usize,
        direction: Vec<f64>,
        value: f64,
    },
}

impl HiddenPatch {
    fn layer(&self) -> usize {
        match self {
            HiddenPatch::Unit { layer, .. } | HiddenPatch::Direction { layer, .. } => *layer,
        }
    }

    fn apply(&self, h: &mut [f64]) {
        match self {
            HiddenPatch::Unit { unit, value, .. } => h[*unit] = *value,
            HiddenPatch::Direction {
                direction, value, ..
            } => {
                let coef: f64 = dot(direction, h);
                for (x, d) in h.iter_mut().zip(direction) {
                    *x += (value - coef) * d;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    loss: Loss,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer values from one forward pass. `activations[0]` is the input,
/// `activations[l + 1]` the (possibly patched) output of weight layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub pre: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty trace")
    }

    /// Post-activation values of hidden layer `layer`.
    pub fn hidden(&self, layer: usize) -> &[f64] {
        &self.activations[layer + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(m: &Mlp) -> Self {
        Self {
            weights: m.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: m.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

impl Mlp {
    /// Weights and biases drawn from U(−1/√fan_in, 1/√fan_in).
    pub fn new(sizes: &[usize], loss: Loss, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(sizes, loss)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, &fan_in) in sizes.iter().enumerate().take(m.weights.len()) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            m.weights[l]
                .iter_mut()
                .for_each(|x| *x = dist.sample(&mut rng));
            m.biases[l]
                .iter_mut()
                .for_each(|x| *x = dist.sample(&mut rng));
        }
        Ok(m)
    }

    pub fn zeros(sizes: &[usize], loss: Loss) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            loss,
            weights: sizes.windows(2).map(|s| vec![0.0; s[0] * s[1]]).collect(),
            biases: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn loss_kind(&self) -> Loss {
        self.loss
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    pub fn hidden_layers(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn hidden_width(&self, layer: usize) -> Option<usize> {
        (layer < self.hidden_layers()).then(|| self.sizes[layer + 1])
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut()
                .chain(b.iter_mut())
                .for_each(|x| *x = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|x| x.is_finite())
    }

    pub fn forward(&self, x: &[f64], patches: &[HiddenPatch]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        for p in patches {
            let width = self.hidden_width(p.layer()).ok_or_else(|| {
                Error::InvalidSite(format!("hidden layer {} does not exist", p.layer()))
            })?;
            match p {
                HiddenPatch::Unit { unit, .. } if *unit >= width => {
                    return Err(Error::InvalidSite(format!(
                        "unit {unit} out of range for layer width {width}"
                    )))
                }
                HiddenPatch::Direction { direction, .. } if direction.len() != width => {
                    return Err(Error::ShapeMismatch {
                        expected: width,
                        actual: direction.len(),
                    })
                }
                _ => {}
            }
        }
        let layers = self.weights.len();
        let mut pre = Vec::with_capacity(layers);
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(x.to_vec());
        for l in 0..layers {
            let n_out = self.sizes[l + 1];
            let mut z = self.biases[l].clone();
            let a = &activations[l];
            let w = &self.weights[l];
            for (j, &aj) in a.iter().enumerate() {
                if aj == 0.0 {
                    continue;
                }
                let row = &w[j * n_out..(j + 1) * n_out];
                for (zk, wk) in z.iter_mut().zip(row) {
                    *zk += aj * wk;
                }
            }
            let mut h = if l + 1 < layers {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            for p in patches.iter().filter(|p| p.layer() == l && l + 1 < layers) {
                p.apply(&mut h);
            }
            pre.push(z);
            activations.push(h);
        }
        Ok(Trace { pre, activations })
    }

    fn example_loss(&self, out: &[f64], target: &Target) -> Result<f64> {
        match (self.loss, target) {
            (Loss::CrossEntropy, Target::Class(c)) => {
                let lse = log_sum_exp(out);
                Ok(lse - out[*c])
            }
            (Loss::SquaredError, Target::Values(y)) => {
                Ok(out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum())
            }
            _ => Err(Error::InvalidArgument(
                "target kind does not match loss".into(),
            )),
        }
    }

    /// Mean loss over a batch.
    pub fn loss(&self, batch: &[(Vec<f64>, Target)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut total = 0.0;
        for (x, t) in batch {
            let tr = self.forward(x, &[])?;
            total += self.example_loss(tr.output(), t)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &[(Vec<f64>, Target)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        let layers = self.weights.len();
        for (x, target) in batch {
            let tr = self.forward(x, &[])?;
            let out = tr.output();
            total += self.example_loss(out, target)?;
            let mut delta: Vec<f64> = match target {
                Target::Class(c) => {
                    let lse = log_sum_exp(out);
                    let mut d: Vec<f64> = out.iter().map(|o| (o - lse).exp()).collect();
                    d[*c] -= 1.0;
                    d
                }
                Target::Values(y) => out.iter().zip(y).map(|(o, t)| 2.0 * (o - t)).collect(),
            };
            for l in (0..layers).rev() {
                let n_out = self.sizes[l + 1];
                let a = &tr.activations[l];
                let gw = &mut grads.weights[l];
                for (j, &aj) in a.iter().enumerate() {
                    if aj == 0.0 {
                        continue;
                    }
                    let row = &mut gw[j * n_out..(j + 1) * n_out];
                    for (g, d) in row.iter_mut().zip(&delta) {
                        *g += aj * d;
                    }
                }
                for (g, d) in grads.biases[l].iter_mut().zip(&delta) {
                    *g += d;
                }
                if l == 0 {
                    break;
                }
                let w = &self.weights[l];
                let z_prev = &tr.pre[l - 1];
                delta = (0..self.sizes[l])
                    .map(|j| {
                        if z_prev[j] <= 0.0 {
                            0.0
                        } else {
                            dot(&w[j * n_out..(j + 1) * n_out], &delta)
                        }
                    })
                    .collect();
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        Ok((total * scale, grads))
    }

    /// Maximum relative error between analytic and central-difference gradients.
    pub fn grad_check(&self, batch: &[(Vec<f64>, Target)], step: f64) -> Result<f64> {
        let (_, grads) = self.loss_and_gradients(batch)?;
        let analytic = grads.flatten();
        let base = self.params();
        let mut probe = self.clone();
        let mut flat = base.clone();
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            flat[i] = base[i] + step;
            probe.set_params(&flat)?;
            let up = probe.loss(batch)?;
            flat[i] = base[i] - step;
            probe.set_params(&flat)?;
            let down = probe.loss(batch)?;
            flat[i] = base[i];
            let numeric = (up - down) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        Ok(worst)
    }

    fn apply_update(
        &mut self,
        grads: &Gradients,
        velocity: &mut Gradients,
        lr: f64,
        momentum: f64,
    ) {
        let params = self.weights.iter_mut().chain(self.biases.iter_mut());
        let gs = grads.weights.iter().chain(&grads.biases);
        let vs = velocity
            .weights
            .iter_mut()
            .chain(velocity.biases.iter_mut());
        for ((p, g), v) in params.zip(gs).zip(vs) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = momentum * *vi - lr * gi;
                *pi += *vi;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Hyperparameters for mini-batch SGD with momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty coefficient on weights (not biases).
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 20,
            batch_size: 32,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epoch_losses: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

/// The MLP applied to one-hot token sequences. Hidden layer `l` is a patchable site layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMlp {
    pub vocab: u32,
    pub mlp: Mlp,
}

const CHECKPOINT_FORMAT: &str = "bucketing-mlp-v1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    vocab: u32,
    sizes: Vec<usize>,
    loss: Loss,
    params: Vec<f64>,
}

impl TokenMlp {
    pub fn new(vocab: u32, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![SEQ_LEN * vocab as usize];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        Ok(Self {
            vocab,
            mlp: Mlp::new(&sizes, Loss::CrossEntropy, seed)?,
        })
    }

    pub fn encode(&self, input: &TokenInput) -> Vec<f64> {
        let v = self.vocab as usize;
        let mut x = vec![0.0; SEQ_LEN * v];
        for (pos, &t) in input.tokens().iter().enumerate() {
            x[pos * v + t as usize] = 1.0;
        }
        x
    }

    fn check_input(&self, input: &TokenInput) -> Result<()> {
        if input.tokens().iter().any(|&t| t >= self.vocab) {
            return Err(Error::InvalidArgument(format!(
                "input {input} has tokens outside the model vocabulary {}",
                self.vocab
            )));
        }
        Ok(())
    }

    pub fn trace(&self, input: &TokenInput, patches: &[Patch]) -> Result<Trace> {
        self.check_input(input)?;
        let hidden: Vec<HiddenPatch> = patches
            .iter()
            .map(|p| match &p.site {
                Site::Unit { layer, unit } => Ok(HiddenPatch::Unit {
                    layer: *layer,
                    unit: *unit,
                    value: p.value,
                }),
                Site::Direction { layer, vector } => Ok(HiddenPatch::Direction {
                    layer: *layer,
                    direction: vector.clone(),
                    value: p.value,
                }),
                other => Err(Error::InvalidSite(format!("{other} is not an MLP site"))),
            })
            .collect::<Result<_>>()?;
        self.mlp.forward(&self.encode(input), &hidden)
    }

    pub fn hidden_activations(&self, input: &TokenInput, layer: usize) -> Result<Vec<f64>> {
        if layer >= self.mlp.hidden_layers() {
            return Err(Error::InvalidSite(format!(
                "hidden layer {layer} does not exist"
            )));
        }
        Ok(self.trace(input, &[])?.hidden(layer).to_vec())
    }

    /// Unit activation or projection coefficient at `site`.
    pub fn activation(&self, input: &TokenInput, site: &Site) -> Result<f64> {
        self.read_site(input, &[], site)
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        if dataset.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for e in &dataset.examples {
            hits += usize::from(self.predict(&e.input, &[])? == e.label);
        }
        Ok(hits as f64 / dataset.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            vocab: self.vocab,
            sizes: self.mlp.sizes.clone(),
            loss: self.mlp.loss,
            params: self.mlp.params(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unknown checkpoint format `{}`",
                ck.format
            )));
        }
        if ck.sizes.first() != Some(&(SEQ_LEN * ck.vocab as usize)) {
            return Err(Error::InvalidArgument(
                "checkpoint input width does not match vocabulary".into(),
            ));
        }
        let mut mlp = Mlp::zeros(&ck.sizes, ck.loss)?;
        mlp.set_params(&ck.params)?;
        if !mlp.is_finite() {
            return Err(Error::InvalidArgument(
                "checkpoint has non-finite parameters".into(),
            ));
        }
        Ok(Self {
            vocab: ck.vocab,
            mlp,
        })
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl LowLevelModel for TokenMlp {
    type Input = TokenInput;

    fn read_site(&self, input: &TokenInput, patches: &[Patch], site: &Site) -> Result<f64> {
        self.check_site(site)?;
        let tr = self.trace(input, patches)?;
        match site {
            Site::Unit { layer, unit } => Ok(tr.hidden(*layer)[*unit]),
            Site::Direction { layer, vector } => Ok(dot(vector, tr.hidden(*layer))),
            Site::Variable { .. } => unreachable!("checked above"),
        }
    }

    fn predict(&self, input: &TokenInput, patches: &[Patch]) -> Result<i64> {
        Ok(argmax(self.trace(input, patches)?.output()) as i64)
    }

    fn check_site(&self, site: &Site) -> Result<()> {
        let width = |layer: usize| {
            self.mlp
                .hidden_width(layer)
                .ok_or_else(|| Error::InvalidSite(format!("hidden layer {layer} does not exist")))
        };
        match site {
            Site::Unit { layer, unit } => {
                let w = width(*layer)?;
                if *unit >= w {
                    return Err(Error::InvalidSite(format!(
                        "unit {unit} out of range for layer width {w}"
                    )));
                }
                Ok(())
            }
            Site::Direction { layer, vector } => {
                let w = width(*layer)?;
                if vector.len() != w {
                    return Err(Error::ShapeMismatch {
                        expected: w,
                        actual: vector.len(),
                    });
                }
                site.validate()
            }
            Site::Variable { name } => Err(Error::InvalidSite(format!(
                "MLP has no named variable `{name}`"
            ))),
        }
    }
}

/// Trains a fresh [`TokenMlp`] on a seeded (1 − test_fraction)/test_fraction split.
pub fn train_mlp(dataset: &Dataset, params: &TrainParams) -> Result<(TokenMlp, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    if params.batch_size == 0
        || params.learning_rate < 0.0
        || !(0.0..1.0).contains(&params.momentum)
        || !(0.0..1.0).contains(&params.test_fraction)
    {
        return Err(Error::InvalidArgument(format!(
            "invalid training hyperparameters {params:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = TokenMlp::new(dataset.vocab, &params.hidden, params.seed ^ 0x5eed)?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_test = ((dataset.len() as f64) * params.test_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test.min(dataset.len().saturating_sub(1)));
    let encode = |i: &usize| {
        let e = &dataset.examples[*i];
        (model.encode(&e.input), Target::Class(e.label as usize))
    };
    let train: Vec<(Vec<f64>, Target)> = train_idx.iter().map(encode).collect();
    let test_set = Dataset {
        vocab: dataset.vocab,
        examples: test_idx.iter().map(|&i| dataset.examples[i]).collect(),
    };
    let train_set = Dataset {
        vocab: dataset.vocab,
        examples: train_idx.iter().map(|&i| dataset.examples[i]).collect(),
    };

    let mut velocity = Gradients::zeros_like(&model.mlp);
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut batch_order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..params.epochs {
        batch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in batch_order.chunks(params.batch_size) {
            let batch: Vec<(Vec<f64>, Target)> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, mut grads) = model.mlp.loss_and_gradients(&batch)?;
            if params.weight_decay > 0.0 {
                for (g, w) in grads.weights.iter_mut().zip(&model.mlp.weights) {
                    for (gi, wi) in g.iter_mut().zip(w) {
                        *gi += params.weight_decay * wi;
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            model
                .mlp
                .apply_update(&grads, &mut velocity, params.learning_rate, params.momentum);
        }
        let mean = epoch_loss / train.len() as f64;
        if !mean.is_finite() || !model.mlp.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }

    let report = TrainReport {
        train_accuracy: model.accuracy(&train_set)?,
        test_accuracy: model.accuracy(&test_set)?,
        epoch_losses,
        n_train: train_set.len(),
        n_test: test_set.len(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::dataset::generate_dataset;

    fn random_batch(m: &Mlp, n: usize, seed: u64) -> Vec<(Vec<f64>, Target)> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..m.input_dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                (x, Target::Class(rng.random_range(0..m.output_dim())))
            })
            .collect()
    }

    #[test]
    fn grad_check_random_model() {
        let m = Mlp::new(&[5, 7, 4, 3], Loss::CrossEntropy, 1).unwrap();
        let batch = random_batch(&m, 6, 2);
        let err = m.grad_check(&batch, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn single_linear_unit_squared_loss() {
        let mut m = Mlp::zeros(&[1, 1], Loss::SquaredError).unwrap();
        let (w, x, y) = (0.7, 1.5, 2.0);
        m.weights_mut()[0][0] = w;
        let batch = vec![(vec![x], Target::Values(vec![y]))];
        let (_, g) = m.loss_and_gradients(&batch).unwrap();
        assert!((g.weights[0][0] - 2.0 * (w * x - y) * x).abs() < 1e-12);
        assert!((g.biases[0][0] - 2.0 * (w * x - y)).abs() < 1e-12);
        assert!(m.grad_check(&batch, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn zero_model_on_zero_input_only_bias_gradients() {
        let m = Mlp::zeros(&[4, 3, 2], Loss::CrossEntropy).unwrap();
        let batch = vec![(vec![0.0; 4], Target::Class(1))];
        let (_, g) = m.loss_and_gradients(&batch).unwrap();
        assert!(g.weights.iter().flatten().all(|&x| x == 0.0));
        // output bias: softmax(0,0) - onehot(1)
        assert_eq!(g.biases[1], vec![0.5, -0.5]);
    }

    #[test]
    fn activation_sites() {
        let model = TokenMlp::new(4, &[6], 3).unwrap();
        let x = TokenInput([0, 1, 2, 3, 0, 1]);
        let h = model.hidden_activations(&x, 0).unwrap();
        for k in 0..6 {
            let mut e = vec![0.0; 6];
            e[k] = 1.0;
            let d = Site::direction(0, e).unwrap();
            assert_eq!(model.activation(&x, &d).unwrap(), h[k]);
            assert_eq!(model.activation(&x, &Site::unit(0, k)).unwrap(), h[k]);
        }
        let d = Site::direction(0, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap();
        let a = model.activation(&x, &d).unwrap();
        assert!((a + model.activation(&x, &d.negated()).unwrap()).abs() < 1e-12);
        assert!(model.activation(&x, &Site::unit(1, 0)).is_err());
        assert!(model.activation(&x, &Site::unit(0, 6)).is_err());

        let zero = TokenMlp {
            vocab: 4,
            mlp: Mlp::zeros(&[24, 6, 2], Loss::CrossEntropy).unwrap(),
        };
        assert_eq!(zero.activation(&x, &Site::unit(0, 2)).unwrap(), 0.0);
    }

    #[test]
    fn direction_patch_sets_coefficient() {
        let model = TokenMlp::new(4, &[6, 5], 7).unwrap();
        let x = TokenInput([0, 1, 2, 3, 0, 1]);
        let d = Site::direction(1, vec![1.0, 1.0, 0.0, -1.0, 2.0]).unwrap();
        let patch = Patch {
            site: d.clone(),
            value: 0.42,
        };
        let got = model
            .read_site(&x, std::slice::from_ref(&patch), &d)
            .unwrap();
        assert!((got - 0.42).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let d = generate_dataset(64, 6, 0).unwrap();
        let params = TrainParams {
            hidden: vec![8],
            learning_rate: 0.0,
            epochs: 2,
            ..TrainParams::default()
        };
        let (trained, _) = train_mlp(&d, &params).unwrap();
        let fresh = TokenMlp::new(6, &[8], params.seed ^ 0x5eed).unwrap();
        assert_eq!(trained, fresh);
    }

    #[test]
    fn untrained_model_is_not_accurate() {
        let d = generate_dataset(500, 20, 0).unwrap();
        let params = TrainParams {
            epochs: 0,
            ..TrainParams::default()
        };
        let (_, report) = train_mlp(&d, &params).unwrap();
        assert!(report.test_accuracy < 0.9);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let d = generate_dataset(200, 20, 0).unwrap();
        let params = TrainParams {
            learning_rate: 1e300,
            momentum: 0.0,
            epochs: 5,
            ..TrainParams::default()
        };
        assert!(matches!(
            train_mlp(&d, &params),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = TokenMlp::new(5, &[4, 3], 9).unwrap();
        let back = TokenMlp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        assert!(TokenMlp::from_json(
            r#"{"format":"x","vocab":1,"sizes":[6,2],"loss":"cross_entropy","params":[]}"#
        )
        .is_err());
    }
}
