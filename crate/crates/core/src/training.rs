//! Losses, penalties, exact reverse-mode gradients, and mini-batch SGD for
//! the regularized empirical risk `(1/T) Σ L(Yᵢ, Ŷ(Xᵢ)) + λ φ(W, b)`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{softmax, DeepNet, ForwardTrace};
use crate::numerics::{Matrix, Rng, Vector};

/// Output-level loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Squared L2 norm of the residual.
    Mse,
    /// Negative log probability of the true class; predictions are logits
    /// and are passed through softmax internally.
    CrossEntropy,
}

/// Separable parameter penalty φ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Ridge,
    Lasso,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Penalty {
    pub kind: PenaltyKind,
    /// Whether biases enter φ. Off by default; weights always enter.
    #[serde(default)]
    pub include_biases: bool,
}

impl Penalty {
    pub fn ridge() -> Self {
        Self { kind: PenaltyKind::Ridge, include_biases: false }
    }

    pub fn lasso() -> Self {
        Self { kind: PenaltyKind::Lasso, include_biases: false }
    }

    pub fn none() -> Self {
        Self { kind: PenaltyKind::None, include_biases: false }
    }

    /// φ evaluated on a net's parameters.
    pub fn value(&self, net: &DeepNet) -> f64 {
        let term = |xs: &[f64]| -> f64 {
            match self.kind {
                PenaltyKind::Ridge => xs.iter().map(|x| x * x).sum(),
                PenaltyKind::Lasso => xs.iter().map(|x| x.abs()).sum(),
                PenaltyKind::None => 0.0,
            }
        };
        let mut total: f64 = net.weights().iter().map(|w| term(w.data())).sum();
        if self.include_biases {
            total += net.biases().iter().map(|b| term(b.as_slice())).sum::<f64>();
        }
        total
    }

    /// dφ/dx for one parameter. Lasso subgradient at 0 is taken as 0.
    #[inline]
    fn grad(&self, x: f64) -> f64 {
        match self.kind {
            PenaltyKind::Ridge => 2.0 * x,
            PenaltyKind::Lasso => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            PenaltyKind::None => 0.0,
        }
    }
}

/// Training settings for SGD.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub penalty: Penalty,
    /// Overall regularization weight λ ≥ 0.
    pub lambda: f64,
    pub learning_rate: f64,
    /// When set, the step at epoch e is `learning_rate / (1 + e)`.
    #[serde(default)]
    pub lr_decay: bool,
    pub batch_size: usize,
    pub epochs: usize,
    /// Input keep probability p ∈ (0, 1]. Below 1 the trainer replaces each
    /// presented input by a fresh Bernoulli mask of it; at evaluation the
    /// served input is scaled by p to match the marginalized objective.
    pub dropout_keep: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    /// Plain full-batch MSE training with no regularization.
    pub fn basic(learning_rate: f64, epochs: usize, seed: u64) -> Self {
        Self {
            loss: Loss::Mse,
            penalty: Penalty::none(),
            lambda: 0.0,
            learning_rate,
            lr_decay: false,
            batch_size: usize::MAX,
            epochs,
            dropout_keep: 1.0,
            seed,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda {} < 0", self.lambda)));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size 0".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dropout keep probability {} outside (0, 1]",
                self.dropout_keep
            )));
        }
        Ok(())
    }
}

/// Supervised rows: inputs `T×p`, targets `T×q`, optional time stamps.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub time_index: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix, time_index: Option<Vec<i64>>) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Shape(format!(
                "{} input rows vs {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if let Some(t) = &time_index {
            if t.len() != inputs.rows() {
                return Err(Error::Shape("time index length".into()));
            }
            if t.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(
                    "time index must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { inputs, targets, time_index })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick = |m: &Matrix| {
            let mut out = Matrix::zeros(idx.len(), m.cols());
            for (dst, &src) in idx.iter().enumerate() {
                out.row_mut(dst).copy_from_slice(m.row(src));
            }
            out
        };
        Dataset {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            time_index: self.time_index.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// Parameter gradients matching a net's weight/bias layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl Gradients {
    pub fn zeros_like(net: &DeepNet) -> Self {
        Self {
            weights: net.weights().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: net.biases().iter().map(|b| Vector::zeros(b.len())).collect(),
        }
    }

    pub fn add_in_place(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.axpy(1.0, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.axpy(1.0, b);
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w.data_mut() {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b.as_mut_slice() {
                *v *= s;
            }
        }
    }

    /// Flattens all parameters into one vector (weights first, layer by
    /// layer, then the layer bias), matching `flatten_params`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

/// Loss at the output layer.
pub fn loss_value(loss: Loss, y: &Vector, y_hat: &Vector) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "target length {} vs prediction length {}",
            y.len(),
            y_hat.len()
        )));
    }
    match loss {
        Loss::Mse => {
            Ok(y.as_slice().iter().zip(y_hat.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum())
        }
        Loss::CrossEntropy => {
            let class = one_hot_class(y)?;
            let p = softmax(y_hat);
            Ok(-p[class].max(f64::MIN_POSITIVE).ln())
        }
    }
}

/// dL/dŷ. For cross-entropy on logits this is `softmax(ŷ) − y`.
pub fn loss_grad(loss: Loss, y: &Vector, y_hat: &Vector) -> Result<Vector> {
    match loss {
        Loss::Mse => {
            let mut g = y_hat.sub(y)?;
            for v in g.as_mut_slice() {
                *v *= 2.0;
            }
            Ok(g)
        }
        Loss::CrossEntropy => {
            one_hot_class(y)?;
            softmax(y_hat).sub(y)
        }
    }
}

fn one_hot_class(y: &Vector) -> Result<usize> {
    let mut class = None;
    for (i, &v) in y.as_slice().iter().enumerate() {
        if v == 1.0 {
            if class.is_some() {
                return Err(Error::InvalidArgument("target has multiple ones".into()));
            }
            class = Some(i);
        } else if v != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cross-entropy target must be one-hot, entry {i} is {v}"
            )));
        }
    }
    class.ok_or_else(|| Error::InvalidArgument("cross-entropy target has no one".into()))
}

/// Mean loss over the dataset plus `λ φ(W, b)`.
pub fn objective(net: &DeepNet, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    objective_scaled(net, data, cfg, 1.0)
}

/// Objective with served inputs scaled by `input_scale` (the dropout
/// expectation correction uses the keep probability here).
pub(crate) fn objective_scaled(
    net: &DeepNet,
    data: &Dataset,
    cfg: &TrainConfig,
    input_scale: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let mut x = data.inputs.row_vector(i);
        if input_scale != 1.0 {
            x = x.scale(input_scale);
        }
        let y = data.targets.row_vector(i);
        let y_hat = net.predict(&x)?;
        total += loss_value(cfg.loss, &y, &y_hat)?;
    }
    Ok(total / data.len() as f64 + cfg.lambda * cfg.penalty.value(net))
}

/// Exact reverse-mode gradients of `loss_value` with respect to every
/// weight and bias, for one observation.
pub fn backprop(net: &DeepNet, x: &Vector, y: &Vector, loss: Loss) -> Result<Gradients> {
    ensure_trainable(net)?;
    let (_, trace) = net.forward(x)?;
    backward_from_trace(net, &trace, y, loss, None)
}

/// Rejects nets whose activations cannot carry gradients.
pub(crate) fn ensure_trainable(net: &DeepNet) -> Result<()> {
    for a in &net.spec().activations {
        if !a.differentiable() {
            return Err(Error::UnsupportedActivation(a.name()));
        }
    }
    Ok(())
}

/// Backward pass from a recorded forward trace. `hidden_extra` adds an
/// extra gradient term on the activated output of one hidden layer (the
/// sparsity penalty of the auto-encoder enters through this hook).
pub(crate) fn backward_from_trace(
    net: &DeepNet,
    trace: &ForwardTrace,
    y: &Vector,
    loss: Loss,
    hidden_extra: Option<(usize, &Vector)>,
) -> Result<Gradients> {
    let depth = net.spec().depth();
    let mut grads = Gradients::zeros_like(net);

    let upstream = loss_grad(loss, y, &trace.y_hat)?;
    grads.weights[depth] = upstream.outer(&trace.layer_outputs[depth]);
    grads.biases[depth] = upstream.clone();
    if depth == 0 {
        return Ok(grads);
    }
    let mut d_out = net.weights()[depth].transpose_matvec(&upstream)?;

    for l in (0..depth).rev() {
        if let Some((el, extra)) = hidden_extra {
            if el == l {
                d_out.axpy(1.0, extra);
            }
        }
        let act = net.spec().activations[l];
        let dz = act.backward(&trace.pre_activations[l], &trace.layer_outputs[l + 1], &d_out)?;
        grads.weights[l] = dz.outer(&trace.layer_outputs[l]);
        grads.biases[l] = dz.clone();
        if l > 0 {
            d_out = net.weights()[l].transpose_matvec(&dz)?;
        }
    }
    Ok(grads)
}

/// Applies `param -= lr * (grad + λ dφ)` across the net.
pub(crate) fn apply_update(
    net: &mut DeepNet,
    grads: &Gradients,
    lr: f64,
    lambda: f64,
    penalty: &Penalty,
) {
    for (w, g) in net.weights_mut().iter_mut().zip(&grads.weights) {
        for (v, gv) in w.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * (gv + lambda * penalty.grad(*v));
        }
    }
    let bias_lambda = if penalty.include_biases { lambda } else { 0.0 };
    for (b, g) in net.biases_mut().iter_mut().zip(&grads.biases) {
        for i in 0..b.len() {
            let v = b[i];
            b[i] = v - lr * (g[i] + bias_lambda * penalty.grad(v));
        }
    }
}

/// Mini-batch SGD on the regularized objective. Returns the trained net and
/// the per-epoch objective history (served-input scale applied when
/// dropout is active). Deterministic under a fixed seed; parallel row
/// gradients are reduced in row order so results are thread-count-invariant.
pub fn sgd_train(
    net: &DeepNet,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(DeepNet, Vec<f64>)> {
    cfg.validate()?;
    ensure_trainable(net)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut net = net.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let t = data.len();
    let batch = cfg.batch_size.min(t);
    let p = cfg.dropout_keep;

    let mut order: Vec<usize> = (0..t).collect();
    for epoch in 0..cfg.epochs {
        let lr = if cfg.lr_decay {
            cfg.learning_rate / (1.0 + epoch as f64)
        } else {
            cfg.learning_rate
        };
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        for chunk in order.chunks(batch) {
            // Draw dropout masks sequentially so the stream is identical
            // regardless of how the gradient work is scheduled.
            let rows: Vec<(Vector, Vector)> = chunk
                .iter()
                .map(|&i| {
                    let mut x = data.inputs.row_vector(i);
                    if p < 1.0 {
                        for v in x.as_mut_slice() {
                            if !rng.bernoulli(p) {
                                *v = 0.0;
                            }
                        }
                    }
                    (x, data.targets.row_vector(i))
                })
                .collect();

            let per_row: Result<Vec<Gradients>> = if rows.len() >= 8 {
                rows.par_iter()
                    .map(|(x, y)| {
                        let (_, trace) = net.forward(x)?;
                        backward_from_trace(&net, &trace, y, cfg.loss, None)
                    })
                    .collect()
            } else {
                rows.iter()
                    .map(|(x, y)| {
                        let (_, trace) = net.forward(x)?;
                        backward_from_trace(&net, &trace, y, cfg.loss, None)
                    })
                    .collect()
            };
            let per_row = per_row?;

            let mut sum = Gradients::zeros_like(&net);
            for g in &per_row {
                sum.add_in_place(g);
            }
            sum.scale_in_place(1.0 / per_row.len() as f64);
            apply_update(&mut net, &sum, lr, cfg.lambda, &cfg.penalty);
        }

        let objective = objective_scaled(&net, data, cfg, p)?;
        // The cross-entropy clamp can keep the objective finite even after
        // parameters blow up, so check both.
        let params_finite = net.weights().iter().all(|w| w.is_finite())
            && net.biases().iter().all(|b| b.is_finite());
        if !objective.is_finite() || !params_finite {
            return Err(Error::Diverged { epoch, objective });
        }
        history.push(objective);
    }
    Ok((net, history))
}

/// Serves a prediction from a dropout-trained net: inputs are scaled by the
/// keep probability so the expectation matches the training objective.
pub fn predict_served(net: &DeepNet, x: &Vector, dropout_keep: f64) -> Result<Vector> {
    if dropout_keep == 1.0 {
        net.predict(x)
    } else {
        net.predict(&x.scale(dropout_keep))
    }
}

/// Writes a training history as CSV: `epoch,objective[,validation]`.
pub fn write_history_csv<W: Write>(
    w: &mut W,
    history: &[f64],
    validation: Option<&[f64]>,
) -> Result<()> {
    if let Some(v) = validation {
        writeln!(w, "epoch,objective,validation")?;
        for (e, (h, vv)) in history.iter().zip(v).enumerate() {
            writeln!(w, "{e},{h:.16e},{vv:.16e}")?;
        }
    } else {
        writeln!(w, "epoch,objective")?;
        for (e, h) in history.iter().enumerate() {
            writeln!(w, "{e},{h:.16e}")?;
        }
    }
    Ok(())
}

/// Flattens a net's parameters in the same order as `Gradients::flatten`.
pub fn flatten_params(net: &DeepNet) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in net.weights().iter().zip(net.biases()) {
        out.extend_from_slice(w.data());
        out.extend_from_slice(b.as_slice());
    }
    out
}

/// Rebuilds a net from a flat parameter vector (inverse of
/// `flatten_params`); used by gradient checks.
pub fn unflatten_params(reference: &DeepNet, params: &[f64]) -> Result<DeepNet> {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut cursor = 0;
    for (w, b) in reference.weights().iter().zip(reference.biases()) {
        let wlen = w.rows() * w.cols();
        weights.push(Matrix::from_vec(w.rows(), w.cols(), params[cursor..cursor + wlen].to_vec())?);
        cursor += wlen;
        biases.push(Vector::from_vec(params[cursor..cursor + b.len()].to_vec())?);
        cursor += b.len();
    }
    DeepNet::new(reference.spec().clone(), weights, biases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, Activation, InitScheme, NetworkSpec};
    use crate::numerics::finite_diff_grad;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec()).unwrap()
    }

    #[test]
    fn mse_is_zero_on_equal_vectors_and_counts_squares() {
        let y = v(&[1.0, 0.0]);
        assert_eq!(loss_value(Loss::Mse, &y, &y).unwrap(), 0.0);
        assert_eq!(loss_value(Loss::Mse, &y, &v(&[0.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn cross_entropy_on_uniform_logits_is_log_k() {
        let y = v(&[0.0, 0.0, 1.0]);
        let got = loss_value(Loss::CrossEntropy, &y, &v(&[0.0, 0.0, 0.0])).unwrap();
        assert!((got - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_non_one_hot_targets() {
        let bad = v(&[0.5, 0.5]);
        assert!(loss_value(Loss::CrossEntropy, &bad, &v(&[0.0, 0.0])).is_err());
        let two = v(&[1.0, 1.0]);
        assert!(loss_value(Loss::CrossEntropy, &two, &v(&[0.0, 0.0])).is_err());
    }

    fn toy_dataset() -> Dataset {
        // y = 2x, five points.
        let xs: Vec<f64> = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        Dataset::new(
            Matrix::from_vec(5, 1, xs).unwrap(),
            Matrix::from_vec(5, 1, ys).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn objective_is_zero_for_perfect_fit_without_penalty() {
        let spec = NetworkSpec::linear(1, 1).unwrap();
        let net = DeepNet::new(
            spec,
            vec![Matrix::from_vec(1, 1, vec![2.0]).unwrap()],
            vec![Vector::zeros(1)],
        )
        .unwrap();
        let cfg = TrainConfig::basic(0.1, 0, 0);
        assert_eq!(objective(&net, &toy_dataset(), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn objective_matches_independent_resummation() {
        let mut rng = Rng::new(14);
        let spec = NetworkSpec::new(2, vec![3], vec![Activation::Tanh], 1).unwrap();
        let net = init_weights(&spec, &mut rng, InitScheme::Glorot).unwrap();
        let inputs = Matrix::from_vec(
            4,
            2,
            (0..8).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let targets =
            Matrix::from_vec(4, 1, (0..4).map(|_| rng.range_f64(-1.0, 1.0)).collect()).unwrap();
        let data = Dataset::new(inputs, targets, None).unwrap();
        let mut cfg = TrainConfig::basic(0.1, 0, 0);
        cfg.penalty = Penalty::ridge();
        cfg.lambda = 0.7;

        // Independent summation: loop rows, then add λ Σ w² by hand.
        let mut loss_sum = 0.0;
        for i in 0..data.len() {
            let y_hat = net.predict(&data.inputs.row_vector(i)).unwrap();
            let diff = y_hat[0] - data.targets.get(i, 0);
            loss_sum += diff * diff;
        }
        let mut sq = 0.0;
        for w in net.weights() {
            for x in w.data() {
                sq += x * x;
            }
        }
        let want = loss_sum / 4.0 + 0.7 * sq;
        let got = objective(&net, &data, &cfg).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn zero_net_with_ridge_objective_has_no_penalty_term() {
        let spec = NetworkSpec::linear(1, 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(0), InitScheme::Zero).unwrap();
        let mut cfg = TrainConfig::basic(0.1, 0, 0);
        cfg.penalty = Penalty::ridge();
        cfg.lambda = 1.0;
        let data = toy_dataset();
        // Mean loss of predicting zero: mean of (2x)^2.
        let want = data.targets.data().iter().map(|y| y * y).sum::<f64>() / 5.0;
        assert!((objective(&net, &data, &cfg).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn linear_net_gradient_matches_least_squares_closed_form() {
        // L = ||y - Wx - b||², dL/dW = 2(ŷ - y) xᵀ.
        let spec = NetworkSpec::linear(2, 1).unwrap();
        let net = DeepNet::new(
            spec,
            vec![Matrix::from_vec(1, 2, vec![0.5, -0.25]).unwrap()],
            vec![v(&[0.1])],
        )
        .unwrap();
        let x = v(&[1.5, -2.0]);
        let y = v(&[1.0]);
        let y_hat = net.predict(&x).unwrap();
        let g = backprop(&net, &x, &y, Loss::Mse).unwrap();
        let resid = y_hat[0] - y[0];
        assert!((g.weights[0].get(0, 0) - 2.0 * resid * x[0]).abs() < 1e-12);
        assert!((g.weights[0].get(0, 1) - 2.0 * resid * x[1]).abs() < 1e-12);
        assert!((g.biases[0][0] - 2.0 * resid).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_means_zero_gradient_under_mse() {
        let spec = NetworkSpec::linear(2, 1).unwrap();
        let net = DeepNet::new(
            spec,
            vec![Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap()],
            vec![Vector::zeros(1)],
        )
        .unwrap();
        let x = v(&[0.25, 0.5]);
        let y = net.predict(&x).unwrap();
        let g = backprop(&net, &x, &y, Loss::Mse).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    fn gradcheck_net(net: &DeepNet, x: &Vector, y: &Vector, loss: Loss) -> f64 {
        let analytic = backprop(net, x, y, loss).unwrap().flatten();
        let base = flatten_params(net);
        let f = |params: &Vector| {
            let candidate = unflatten_params(net, params.as_slice()).unwrap();
            let y_hat = candidate.predict(x).unwrap();
            loss_value(loss, y, &y_hat).unwrap()
        };
        let numeric = finite_diff_grad(f, &v(&base), 1e-5).unwrap();
        let diff: f64 = analytic
            .iter()
            .zip(numeric.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.norm()
            + 1e-12;
        diff / scale
    }

    #[test]
    fn two_hidden_tanh_net_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let spec =
            NetworkSpec::new(3, vec![4, 3], vec![Activation::Tanh, Activation::Tanh], 2).unwrap();
        let net = init_weights(&spec, &mut rng, InitScheme::Glorot).unwrap();
        let x = v(&[0.3, -0.6, 0.9]);
        let y = v(&[0.5, -0.5]);
        assert!(gradcheck_net(&net, &x, &y, Loss::Mse) < 1e-5);
    }

    #[test]
    fn softmax_cross_entropy_gradient_reduces_to_probability_gap() {
        let mut rng = Rng::new(33);
        let spec = NetworkSpec::new(2, vec![3], vec![Activation::Sigmoid], 3).unwrap();
        let net = init_weights(&spec, &mut rng, InitScheme::Glorot).unwrap();
        let x = v(&[0.4, -0.2]);
        let y = v(&[0.0, 1.0, 0.0]);
        // Analytic claim at the logit layer: dL/dŷ = softmax(ŷ) - y.
        let (y_hat, trace) = net.forward(&x).unwrap();
        let claimed = softmax(&y_hat).sub(&y).unwrap();
        let g = backward_from_trace(&net, &trace, &y, Loss::CrossEntropy, None).unwrap();
        // Bias gradient at the output layer IS dL/dŷ.
        for i in 0..3 {
            assert!((g.biases[1][i] - claimed[i]).abs() < 1e-12);
        }
        assert!(gradcheck_net(&net, &x, &y, Loss::CrossEntropy) < 1e-5);
    }

    #[test]
    fn heaviside_net_is_rejected_by_trainer() {
        let spec = NetworkSpec::new(2, vec![2], vec![Activation::Heaviside], 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(0), InitScheme::Glorot).unwrap();
        let err = backprop(&net, &v(&[1.0, 1.0]), &v(&[0.0]), Loss::Mse).unwrap_err();
        assert!(matches!(err, Error::UnsupportedActivation("heaviside")));
        let cfg = TrainConfig::basic(0.1, 1, 0);
        assert!(sgd_train(&net, &toy_dataset_2d(), &cfg, &mut Rng::new(0)).is_err());
    }

    fn toy_dataset_2d() -> Dataset {
        Dataset::new(
            Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn sgd_recovers_slope_two_on_noiseless_line() {
        let spec = NetworkSpec::linear(1, 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(5), InitScheme::Zero).unwrap();
        let mut cfg = TrainConfig::basic(0.05, 400, 5);
        cfg.batch_size = usize::MAX; // full batch
        let (trained, history) = sgd_train(&net, &toy_dataset(), &cfg, &mut Rng::new(5)).unwrap();
        assert!((trained.weights()[0].get(0, 0) - 2.0).abs() < 1e-3);
        assert!(history.last().unwrap() < &1e-5);
    }

    #[test]
    fn zero_epochs_leaves_the_net_unchanged() {
        let spec = NetworkSpec::new(1, vec![2], vec![Activation::Tanh], 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(9), InitScheme::Glorot).unwrap();
        let cfg = TrainConfig::basic(0.1, 0, 9);
        let (trained, history) = sgd_train(&net, &toy_dataset(), &cfg, &mut Rng::new(9)).unwrap();
        assert_eq!(trained, net);
        assert!(history.is_empty());
    }

    #[test]
    fn ridge_weight_norm_shrinks_as_lambda_grows() {
        let spec = NetworkSpec::linear(1, 1).unwrap();
        let mut norms = Vec::new();
        for &lambda in &[0.0, 0.5, 2.0, 10.0] {
            let net = init_weights(&spec, &mut Rng::new(3), InitScheme::Zero).unwrap();
            let mut cfg = TrainConfig::basic(0.02, 500, 3);
            cfg.penalty = Penalty::ridge();
            cfg.lambda = lambda;
            let (trained, _) = sgd_train(&net, &toy_dataset(), &cfg, &mut Rng::new(3)).unwrap();
            norms.push(trained.weights()[0].get(0, 0).abs());
        }
        for pair in norms.windows(2) {
            assert!(pair[1] < pair[0] + 1e-12, "norms {norms:?}");
        }
        // Ridge path oracle on the linear case: w(λT') = Σxy / (Σx² + λT'),
        // from d/dw [ (1/T)Σ(y-wx)² + λw² ] = 0.
        let data = toy_dataset();
        let sxy: f64 = (0..5).map(|i| data.inputs.get(i, 0) * data.targets.get(i, 0)).sum();
        let sxx: f64 = (0..5).map(|i| data.inputs.get(i, 0).powi(2)).sum();
        let lambda = 2.0;
        let want = sxy / (sxx + lambda * 5.0);
        let net = init_weights(&spec, &mut Rng::new(3), InitScheme::Zero).unwrap();
        let mut cfg = TrainConfig::basic(0.02, 4000, 3);
        cfg.penalty = Penalty::ridge();
        cfg.lambda = lambda;
        let (trained, _) = sgd_train(&net, &data, &cfg, &mut Rng::new(3)).unwrap();
        assert!((trained.weights()[0].get(0, 0) - want).abs() < 1e-3);
    }

    #[test]
    fn divergence_is_reported_with_the_epoch() {
        let spec = NetworkSpec::linear(1, 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(0), InitScheme::Zero).unwrap();
        let mut cfg = TrainConfig::basic(1e6, 50, 0); // absurd step size
        cfg.batch_size = 1;
        let err = sgd_train(&net, &toy_dataset(), &cfg, &mut Rng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn training_is_bit_deterministic_under_seed() {
        let spec = NetworkSpec::new(2, vec![3], vec![Activation::Tanh], 1).unwrap();
        let mut cfg = TrainConfig::basic(0.05, 30, 42);
        cfg.batch_size = 2;
        cfg.dropout_keep = 0.7;
        let run = || {
            let net = init_weights(&spec, &mut Rng::new(42), InitScheme::Glorot).unwrap();
            let (trained, history) =
                sgd_train(&net, &toy_dataset_wide(), &cfg, &mut Rng::new(42)).unwrap();
            (flatten_params(&trained), history)
        };
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }

    fn toy_dataset_wide() -> Dataset {
        let mut rng = Rng::new(100);
        let inputs =
            Matrix::from_vec(12, 2, (0..24).map(|_| rng.range_f64(-1.0, 1.0)).collect()).unwrap();
        let targets = Matrix::from_vec(
            12,
            1,
            (0..12).map(|i| inputs.get(i, 0) - 0.5 * inputs.get(i, 1)).collect(),
        )
        .unwrap();
        Dataset::new(inputs, targets, None).unwrap()
    }

    #[test]
    fn map_objective_is_affine_in_negative_log_posterior() {
        // For MSE + ridge: objective = (1/T)Σ||y-ŷ||² + λΣw², while the
        // negative Gaussian log-posterior is (1/2σ²)Σ||y-ŷ||² + (1/2τ²)Σw²
        // + const. With τ² = σ²/(λT) they agree up to an affine map.
        let mut rng = Rng::new(8);
        let spec = NetworkSpec::new(2, vec![2], vec![Activation::Tanh], 1).unwrap();
        let data = toy_dataset_wide();
        let mut cfg = TrainConfig::basic(0.1, 0, 0);
        cfg.penalty = Penalty::ridge();
        cfg.lambda = 0.3;
        let sigma2 = 1.7;
        let t = data.len() as f64;
        let tau2 = sigma2 / (cfg.lambda * t);

        let mut points = Vec::new();
        for _ in 0..6 {
            let net = init_weights(&spec, &mut rng, InitScheme::Glorot).unwrap();
            let obj = objective(&net, &data, &cfg).unwrap();
            let mut loss_sum = 0.0;
            for i in 0..data.len() {
                let y_hat = net.predict(&data.inputs.row_vector(i)).unwrap();
                let d = y_hat[0] - data.targets.get(i, 0);
                loss_sum += d * d;
            }
            let w_sq: f64 = net.weights().iter().map(|w| w.frob_sq()).sum();
            let neg_log_post = loss_sum / (2.0 * sigma2) + w_sq / (2.0 * tau2);
            points.push((obj, neg_log_post));
        }
        // Fit the affine map from the first two points, verify the rest.
        let (o1, n1) = points[0];
        let (o2, n2) = points[1];
        let a = (o2 - o1) / (n2 - n1);
        let b = o1 - a * n1;
        for &(o, n) in &points[2..] {
            assert!((o - (a * n + b)).abs() < 1e-10, "objective {o} vs affine {}", a * n + b);
        }
    }

    #[test]
    fn history_csv_has_expected_shape() {
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &[1.0, 0.5], Some(&[1.2, 0.7])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,objective,validation");
        assert_eq!(text.lines().count(), 3);
    }
}
