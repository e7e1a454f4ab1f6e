//! Configurable feedforward predictor: a stack of semi-affine hidden layers
//! `Z = f(W z + b)` finished by an affine output layer.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Vector};

/// Univariate activation choices, plus two whole-vector ones: `Softmax`
/// normalizes the layer and `MaxPool` collapses it to its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Heaviside,
    MaxPool,
    Identity,
    Softmax,
}

impl Activation {
    pub const ALL: [Activation; 7] = [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::Heaviside,
        Activation::MaxPool,
        Activation::Identity,
        Activation::Softmax,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Heaviside => "heaviside",
            Activation::MaxPool => "max_pool",
            Activation::Identity => "identity",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown activation '{s}'")))
    }

    /// Output length for an input of length `n` (MaxPool collapses to 1).
    pub fn output_len(&self, n: usize) -> usize {
        match self {
            Activation::MaxPool => 1,
            _ => n,
        }
    }

    /// Whether gradients can flow through this activation.
    pub fn differentiable(&self) -> bool {
        !matches!(self, Activation::Heaviside)
    }

    /// Applies the activation to a pre-activation vector.
    pub fn apply(&self, z: &Vector) -> Vector {
        match self {
            Activation::Sigmoid => map(z, sigmoid),
            Activation::Tanh => map(z, f64::tanh),
            Activation::Relu => map(z, |x| x.max(0.0)),
            Activation::Heaviside => map(z, |x| if x > 0.0 { 1.0 } else { 0.0 }),
            Activation::Identity => z.clone(),
            Activation::MaxPool => {
                let m = z.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Vector::from_raw(vec![m])
            }
            Activation::Softmax => softmax(z),
        }
    }

    /// Pulls an upstream gradient on the activation output back to the
    /// pre-activation. `z` is the pre-activation, `a` its activation.
    pub(crate) fn backward(&self, z: &Vector, a: &Vector, upstream: &Vector) -> Result<Vector> {
        let mut out = Vector::zeros(z.len());
        match self {
            Activation::Sigmoid => {
                for i in 0..z.len() {
                    out[i] = upstream[i] * a[i] * (1.0 - a[i]);
                }
            }
            Activation::Tanh => {
                for i in 0..z.len() {
                    out[i] = upstream[i] * (1.0 - a[i] * a[i]);
                }
            }
            Activation::Relu => {
                for i in 0..z.len() {
                    out[i] = if z[i] > 0.0 { upstream[i] } else { 0.0 };
                }
            }
            Activation::Identity => return Ok(upstream.clone()),
            Activation::MaxPool => {
                // Gradient flows only into the (first) maximal coordinate.
                let arg = argmax(z.as_slice());
                out[arg] = upstream[0];
            }
            Activation::Softmax => {
                // J = diag(a) - a aᵀ, so Jᵀu = a ⊗ (u - a·u).
                let inner: f64 =
                    a.as_slice().iter().zip(upstream.as_slice()).map(|(x, u)| x * u).sum();
                for i in 0..z.len() {
                    out[i] = a[i] * (upstream[i] - inner);
                }
            }
            Activation::Heaviside => {
                return Err(Error::UnsupportedActivation("heaviside"));
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn map(z: &Vector, f: impl Fn(f64) -> f64) -> Vector {
    Vector::from_raw(z.as_slice().iter().map(|&x| f(x)).collect())
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax over the whole vector.
pub fn softmax(z: &Vector) -> Vector {
    let m = z.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.as_slice().iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Vector::from_raw(exps.into_iter().map(|e| e / sum).collect())
}

/// Shape of the predictor: input width, hidden widths with one activation
/// each, output width. Depth is the number of hidden layers.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_sizes: Vec<usize>,
        activations: Vec<Activation>,
        output_dim: usize,
    ) -> Result<Self> {
        let spec = Self { input_dim, hidden_sizes, activations, output_dim };
        spec.validate()?;
        Ok(spec)
    }

    /// A depth-zero spec: plain affine map.
    pub fn linear(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(input_dim, vec![], vec![], output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument("zero input or output width".into()));
        }
        if self.hidden_sizes.len() != self.activations.len() {
            return Err(Error::InvalidArgument(format!(
                "{} hidden sizes but {} activations",
                self.hidden_sizes.len(),
                self.activations.len()
            )));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument("zero-width hidden layer".into()));
        }
        Ok(())
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.hidden_sizes.len()
    }

    /// Widths seen by each weight matrix: `(rows, cols)` for `W(0) ..= W(L)`.
    /// A MaxPool hidden layer narrows the next layer's input to 1.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth() + 1);
        let mut feed = self.input_dim;
        for l in 0..self.depth() {
            shapes.push((self.hidden_sizes[l], feed));
            feed = self.activations[l].output_len(self.hidden_sizes[l]);
        }
        shapes.push((self.output_dim, feed));
        shapes
    }

    /// Total number of trainable parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.weight_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)).
    Glorot,
    /// All parameters zero.
    Zero,
}

/// A fully materialized predictor: spec plus weights `W(0)..=W(L)` and
/// biases `b(0)..=b(L)`. Immutable during forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepNet {
    spec: NetworkSpec,
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
}

/// Per-layer record of one forward pass: `layer_outputs[0]` is the input,
/// then one activated output per hidden layer; `pre_activations[l]` is the
/// affine value feeding hidden layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layer_outputs: Vec<Vector>,
    pub pre_activations: Vec<Vector>,
    pub y_hat: Vector,
}

impl DeepNet {
    pub fn new(spec: NetworkSpec, weights: Vec<Matrix>, biases: Vec<Vector>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.weight_shapes();
        if weights.len() != shapes.len() || biases.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} weight/bias pairs, got {}/{}",
                shapes.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (l, ((w, b), (rows, cols))) in weights.iter().zip(&biases).zip(&shapes).enumerate() {
            if w.rows() != *rows || w.cols() != *cols {
                return Err(Error::Shape(format!(
                    "layer {l}: weight is {}x{}, expected {rows}x{cols}",
                    w.rows(),
                    w.cols()
                )));
            }
            if b.len() != *rows {
                return Err(Error::Shape(format!(
                    "layer {l}: bias length {} != {rows}",
                    b.len()
                )));
            }
            if !w.is_finite() || !b.is_finite() {
                return Err(Error::NonFinite(format!("layer {l} parameters")));
            }
        }
        Ok(Self { spec, weights, biases })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Vector] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Runs the composite map on one observation and records every layer.
    pub fn forward(&self, x: &Vector) -> Result<(Vector, ForwardTrace)> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input length {} != input_dim {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        let depth = self.spec.depth();
        let mut layer_outputs = Vec::with_capacity(depth + 1);
        let mut pre_activations = Vec::with_capacity(depth);
        layer_outputs.push(x.clone());
        let mut current = x.clone();
        for l in 0..depth {
            let mut z = self.weights[l].matvec(&current)?;
            z = z.add(&self.biases[l])?;
            let a = self.spec.activations[l].apply(&z);
            pre_activations.push(z);
            layer_outputs.push(a.clone());
            current = a;
        }
        let mut y_hat = self.weights[depth].matvec(&current)?;
        y_hat = y_hat.add(&self.biases[depth])?;
        let trace = ForwardTrace { layer_outputs, pre_activations, y_hat: y_hat.clone() };
        Ok((y_hat, trace))
    }

    /// Forward pass without keeping the trace.
    pub fn predict(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward(x)?.0)
    }

    /// Row-mapped convenience over a `T×p` matrix of observations.
    pub fn predict_batch(&self, xs: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(xs.rows(), self.spec.output_dim);
        for i in 0..xs.rows() {
            let y = self.predict(&xs.row_vector(i))?;
            out.row_mut(i).copy_from_slice(y.as_slice());
        }
        Ok(out)
    }

    /// Writes the versioned self-describing text form. Values are printed
    /// with 17 significant digits, which round-trips `f64` exactly.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "DEEPNET v1")?;
        writeln!(w, "input_dim {}", self.spec.input_dim)?;
        writeln!(w, "output_dim {}", self.spec.output_dim)?;
        write!(w, "hidden")?;
        for h in &self.spec.hidden_sizes {
            write!(w, " {h}")?;
        }
        writeln!(w)?;
        write!(w, "activations")?;
        for a in &self.spec.activations {
            write!(w, " {}", a.name())?;
        }
        writeln!(w)?;
        for (l, (wm, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            writeln!(w, "W {l} {} {}", wm.rows(), wm.cols())?;
            for i in 0..wm.rows() {
                write_row(w, wm.row(i))?;
            }
            writeln!(w, "b {l} {}", b.len())?;
            write_row(w, b.as_slice())?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    /// Parses the text form written by [`DeepNet::write_text`].
    pub fn read_text<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = TokenLines::new(r);
        lines.expect_header("DEEPNET v1")?;
        let input_dim = lines.keyed_usize("input_dim")?;
        let output_dim = lines.keyed_usize("output_dim")?;
        let hidden_sizes = lines.keyed_usize_list("hidden")?;
        let activations = lines
            .keyed_str_list("activations")?
            .iter()
            .map(|s| Activation::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec::new(input_dim, hidden_sizes, activations, output_dim)?;
        let shapes = spec.weight_shapes();
        let mut weights = Vec::with_capacity(shapes.len());
        let mut biases = Vec::with_capacity(shapes.len());
        for (l, (rows, cols)) in shapes.iter().enumerate() {
            let head = lines.next_tokens()?;
            if head.len() != 4 || head[0] != "W" || head[1] != l.to_string() {
                return Err(Error::Format(format!("expected 'W {l} rows cols', got {head:?}")));
            }
            let (r, c): (usize, usize) = (parse_num(&head[2])?, parse_num(&head[3])?);
            if (r, c) != (*rows, *cols) {
                return Err(Error::Format(format!(
                    "layer {l}: declared {r}x{c}, spec implies {rows}x{cols}"
                )));
            }
            let mut data = Vec::with_capacity(r * c);
            for _ in 0..r {
                lines.floats_into(&mut data, c)?;
            }
            weights.push(Matrix::from_vec(r, c, data)?);
            let bhead = lines.next_tokens()?;
            if bhead.len() != 3 || bhead[0] != "b" {
                return Err(Error::Format(format!("expected 'b {l} len', got {bhead:?}")));
            }
            let blen: usize = parse_num(&bhead[2])?;
            let mut bdata = Vec::with_capacity(blen);
            lines.floats_into(&mut bdata, blen)?;
            biases.push(Vector::from_vec(bdata)?);
        }
        lines.expect_header("end")?;
        DeepNet::new(spec, weights, biases)
    }
}

pub(crate) fn write_row<W: Write>(w: &mut W, row: &[f64]) -> Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            write!(w, " ")?;
        }
        write!(w, "{v:.16e}")?;
        first = false;
    }
    writeln!(w)?;
    Ok(())
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("bad number '{s}'")))
}

/// Line-oriented token reader shared by the model text formats.
pub(crate) struct TokenLines<'a, R: BufRead> {
    reader: &'a mut R,
}

impl<'a, R: BufRead> TokenLines<'a, R> {
    pub fn new(reader: &'a mut R) -> Self {
        Self { reader }
    }

    pub fn next_line(&mut self) -> Result<String> {
        let mut line = String::new();
        loop {
            line.clear();
            let n = self.reader.read_line(&mut line)?;
            if n == 0 {
                return Err(Error::Format("unexpected end of file".into()));
            }
            if !line.trim().is_empty() {
                return Ok(line.trim_end().to_string());
            }
        }
    }

    pub fn next_tokens(&mut self) -> Result<Vec<String>> {
        Ok(self.next_line()?.split_whitespace().map(str::to_string).collect())
    }

    pub fn expect_header(&mut self, want: &str) -> Result<()> {
        let line = self.next_line()?;
        if line != want {
            return Err(Error::Format(format!("expected '{want}', got '{line}'")));
        }
        Ok(())
    }

    pub fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let toks = self.next_tokens()?;
        if toks.len() != 2 || toks[0] != key {
            return Err(Error::Format(format!("expected '{key} <n>', got {toks:?}")));
        }
        parse_num(&toks[1])
    }

    pub fn keyed_usize_list(&mut self, key: &str) -> Result<Vec<usize>> {
        Ok(self
            .keyed_str_list(key)?
            .iter()
            .map(|s| parse_num(s))
            .collect::<Result<Vec<_>>>()?)
    }

    pub fn keyed_str_list(&mut self, key: &str) -> Result<Vec<String>> {
        let mut toks = self.next_tokens()?;
        if toks.is_empty() || toks[0] != key {
            return Err(Error::Format(format!("expected '{key} ...', got {toks:?}")));
        }
        toks.remove(0);
        Ok(toks)
    }

    pub fn floats_into(&mut self, out: &mut Vec<f64>, count: usize) -> Result<()> {
        let toks = self.next_tokens()?;
        if toks.len() != count {
            return Err(Error::Format(format!(
                "expected {count} values on a line, got {}",
                toks.len()
            )));
        }
        for t in toks {
            out.push(parse_num(&t)?);
        }
        Ok(())
    }
}

/// Draws a fresh net for `spec`: weights per `scheme`, biases zero.
/// Deterministic under a fixed generator state.
pub fn init_weights(spec: &NetworkSpec, rng: &mut Rng, scheme: InitScheme) -> Result<DeepNet> {
    spec.validate()?;
    let shapes = spec.weight_shapes();
    let mut weights = Vec::with_capacity(shapes.len());
    let mut biases = Vec::with_capacity(shapes.len());
    for (rows, cols) in shapes {
        let mut w = Matrix::zeros(rows, cols);
        if let InitScheme::Glorot = scheme {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            for v in w.data_mut() {
                *v = rng.range_f64(-limit, limit);
            }
        }
        weights.push(w);
        biases.push(Vector::zeros(rows));
    }
    DeepNet::new(spec.clone(), weights, biases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec()).unwrap()
    }

    #[test]
    fn depth_zero_identity_net_returns_input() {
        let spec = NetworkSpec::linear(3, 3).unwrap();
        let net = DeepNet::new(spec, vec![Matrix::identity(3)], vec![Vector::zeros(3)]).unwrap();
        let x = v(&[0.5, -1.5, 2.0]);
        let (y, trace) = net.forward(&x).unwrap();
        assert_eq!(y, x);
        assert_eq!(trace.layer_outputs[0], x);
    }

    #[test]
    fn all_zero_relu_net_outputs_zero() {
        let spec =
            NetworkSpec::new(2, vec![3], vec![Activation::Relu], 2).unwrap();
        let mut rng = Rng::new(0);
        let net = init_weights(&spec, &mut rng, InitScheme::Zero).unwrap();
        let (y, _) = net.forward(&v(&[1.0, -2.0])).unwrap();
        assert!(y.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_layer_tanh_net_matches_hand_unrolled_composition() {
        // 2 -> 2 -> 2 -> 1, tanh twice, affine readout; unrolled by hand.
        let w0 = Matrix::from_rows(&[vec![0.3, -0.2], vec![0.5, 0.1]]).unwrap();
        let b0 = v(&[0.1, -0.1]);
        let w1 = Matrix::from_rows(&[vec![-0.4, 0.6], vec![0.2, 0.2]]).unwrap();
        let b1 = v(&[0.0, 0.3]);
        let w2 = Matrix::from_rows(&[vec![1.5, -0.7]]).unwrap();
        let b2 = v(&[0.05]);
        let spec =
            NetworkSpec::new(2, vec![2, 2], vec![Activation::Tanh, Activation::Tanh], 1).unwrap();
        let net = DeepNet::new(
            spec,
            vec![w0.clone(), w1.clone(), w2.clone()],
            vec![b0.clone(), b1.clone(), b2.clone()],
        )
        .unwrap();

        let x = v(&[0.7, -0.4]);
        let z1 = [
            (w0.get(0, 0) * x[0] + w0.get(0, 1) * x[1] + b0[0]).tanh(),
            (w0.get(1, 0) * x[0] + w0.get(1, 1) * x[1] + b0[1]).tanh(),
        ];
        let z2 = [
            (w1.get(0, 0) * z1[0] + w1.get(0, 1) * z1[1] + b1[0]).tanh(),
            (w1.get(1, 0) * z1[0] + w1.get(1, 1) * z1[1] + b1[1]).tanh(),
        ];
        let want = w2.get(0, 0) * z2[0] + w2.get(0, 1) * z2[1] + b2[0];

        let (y, trace) = net.forward(&x).unwrap();
        assert!((y[0] - want).abs() < 1e-14);
        assert!((trace.layer_outputs[1][0] - z1[0]).abs() < 1e-14);
        assert!((trace.layer_outputs[2][1] - z2[1]).abs() < 1e-14);
    }

    #[test]
    fn activation_point_values() {
        assert_eq!(Activation::Sigmoid.apply(&v(&[0.0]))[0], 0.5);
        assert_eq!(Activation::Relu.apply(&v(&[-3.0]))[0], 0.0);
        assert_eq!(Activation::Relu.apply(&v(&[3.0]))[0], 3.0);
        let sm = Activation::Softmax.apply(&v(&[1.0, 1.0, 1.0]));
        for i in 0..3 {
            assert!((sm[i] - 1.0 / 3.0).abs() < 1e-15);
        }
        let mp = Activation::MaxPool.apply(&v(&[1.0, 7.0, -2.0]));
        assert_eq!(mp.len(), 1);
        assert_eq!(mp[0], 7.0);
        assert_eq!(Activation::Heaviside.apply(&v(&[0.2, -0.2])).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn activation_ranges_hold_on_random_inputs() {
        let mut rng = Rng::new(8);
        for _ in 0..200 {
            // tanh rounds to exactly ±1.0 in f64 beyond |x| ≈ 19.
            let x = rng.range_f64(-15.0, 15.0);
            let s = Activation::Sigmoid.apply(&v(&[x]))[0];
            assert!(s > 0.0 && s < 1.0);
            let t = Activation::Tanh.apply(&v(&[x]))[0];
            assert!(t > -1.0 && t < 1.0);
            assert!(Activation::Relu.apply(&v(&[x]))[0] >= 0.0);
        }
        let z = v(&[0.3, -2.0, 5.0, 0.0]);
        let sm = Activation::Softmax.apply(&z);
        let sum: f64 = sm.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(sm.as_slice().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn activations_are_continuous_except_heaviside() {
        let mut rng = Rng::new(4);
        let smooth = [
            Activation::Sigmoid,
            Activation::Tanh,
            Activation::Relu,
            Activation::Identity,
        ];
        for act in smooth {
            for _ in 0..50 {
                let x = rng.range_f64(-3.0, 3.0);
                let mut prev = f64::INFINITY;
                for &eps in &[1e-2, 1e-5, 1e-8] {
                    let d = (act.apply(&v(&[x + eps]))[0] - act.apply(&v(&[x]))[0]).abs();
                    assert!(d <= prev + 1e-12);
                    prev = d;
                }
                assert!(prev < 1e-7);
            }
        }
        // Heaviside jumps across zero no matter how small the step.
        let h = Activation::Heaviside;
        assert_eq!((h.apply(&v(&[1e-12]))[0] - h.apply(&v(&[-1e-12]))[0]).abs(), 1.0);
    }

    #[test]
    fn init_is_deterministic_under_seed() {
        let spec =
            NetworkSpec::new(4, vec![5, 3], vec![Activation::Tanh, Activation::Relu], 2).unwrap();
        let a = init_weights(&spec, &mut Rng::new(77), InitScheme::Glorot).unwrap();
        let b = init_weights(&spec, &mut Rng::new(77), InitScheme::Glorot).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_scheme_gives_zero_weights() {
        let spec = NetworkSpec::new(3, vec![4], vec![Activation::Sigmoid], 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(1), InitScheme::Zero).unwrap();
        assert!(net.weights().iter().all(|w| w.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn glorot_variance_tracks_reciprocal_fan_in_on_square_layers() {
        // 100x100 layer: Var = 2/(fan_in+fan_out) = 1/fan_in exactly.
        let spec = NetworkSpec::new(100, vec![100], vec![Activation::Tanh], 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(123), InitScheme::Glorot).unwrap();
        let w = &net.weights()[0];
        let n = (w.rows() * w.cols()) as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let want = 1.0 / 100.0;
        assert!((var - want).abs() < 0.2 * want, "var {var} want {want}");
    }

    #[test]
    fn stacking_specs_composes_like_sequential_forward() {
        // A: 2 -> [3 tanh] -> 3 with identity readout; B: 3 -> [2 sigmoid] -> 1.
        let mut rng = Rng::new(55);
        let spec_a = NetworkSpec::new(2, vec![3], vec![Activation::Tanh], 3).unwrap();
        let mut a = init_weights(&spec_a, &mut rng, InitScheme::Glorot).unwrap();
        a.weights[1] = Matrix::identity(3);
        a.biases[1] = Vector::zeros(3);
        let spec_b = NetworkSpec::new(3, vec![2], vec![Activation::Sigmoid], 1).unwrap();
        let b = init_weights(&spec_b, &mut rng, InitScheme::Glorot).unwrap();

        let stacked_spec = NetworkSpec::new(
            2,
            vec![3, 2],
            vec![Activation::Tanh, Activation::Sigmoid],
            1,
        )
        .unwrap();
        let stacked = DeepNet::new(
            stacked_spec,
            vec![a.weights[0].clone(), b.weights[0].clone(), b.weights[1].clone()],
            vec![a.biases[0].clone(), b.biases[0].clone(), b.biases[1].clone()],
        )
        .unwrap();

        let x = v(&[0.4, -0.9]);
        let via_a = a.predict(&x).unwrap();
        let sequential = b.predict(&via_a).unwrap();
        let direct = stacked.predict(&x).unwrap();
        assert_eq!(sequential, direct);
    }

    #[test]
    fn zeroing_a_units_outgoing_weights_equals_deleting_the_unit() {
        let mut rng = Rng::new(91);
        for act in [Activation::Tanh, Activation::Relu, Activation::Sigmoid] {
            let spec = NetworkSpec::new(3, vec![4], vec![act], 2).unwrap();
            let full = init_weights(&spec, &mut rng, InitScheme::Glorot).unwrap();
            let drop = 2; // unit index to remove

            // Zero the outgoing column of the dropped unit.
            let mut zeroed = full.clone();
            for r in 0..zeroed.weights[1].rows() {
                zeroed.weights[1].set(r, drop, 0.0);
            }

            // Delete the unit: remove its incoming row/bias and outgoing column.
            let mut w0_rows = Vec::new();
            let mut b0 = Vec::new();
            for r in 0..4 {
                if r != drop {
                    w0_rows.push(full.weights[0].row(r).to_vec());
                    b0.push(full.biases[0][r]);
                }
            }
            let mut w1_rows = Vec::new();
            for r in 0..full.weights[1].rows() {
                let row: Vec<f64> = full.weights[1]
                    .row(r)
                    .iter()
                    .enumerate()
                    .filter(|(c, _)| *c != drop)
                    .map(|(_, &x)| x)
                    .collect();
                w1_rows.push(row);
            }
            let small_spec = NetworkSpec::new(3, vec![3], vec![act], 2).unwrap();
            let small = DeepNet::new(
                small_spec,
                vec![
                    Matrix::from_rows(&w0_rows).unwrap(),
                    Matrix::from_rows(&w1_rows).unwrap(),
                ],
                vec![Vector::from_vec(b0).unwrap(), full.biases[1].clone()],
            )
            .unwrap();

            for _ in 0..10 {
                let x = v(&[
                    rng.range_f64(-1.0, 1.0),
                    rng.range_f64(-1.0, 1.0),
                    rng.range_f64(-1.0, 1.0),
                ]);
                assert_eq!(zeroed.predict(&x).unwrap(), small.predict(&x).unwrap());
            }
        }
    }

    #[test]
    fn max_pool_layer_narrows_the_chain() {
        let spec = NetworkSpec::new(3, vec![4], vec![Activation::MaxPool], 2).unwrap();
        assert_eq!(spec.weight_shapes(), vec![(4, 3), (2, 1)]);
        let net = init_weights(&spec, &mut Rng::new(6), InitScheme::Glorot).unwrap();
        let (y, trace) = net.forward(&v(&[1.0, 0.0, -1.0])).unwrap();
        assert_eq!(y.len(), 2);
        assert_eq!(trace.layer_outputs[1].len(), 1);
    }

    #[test]
    fn text_serialization_round_trips_bit_exactly() {
        let mut rng = Rng::new(2718);
        let spec = NetworkSpec::new(
            3,
            vec![4, 2],
            vec![Activation::Tanh, Activation::Sigmoid],
            2,
        )
        .unwrap();
        let mut net = init_weights(&spec, &mut rng, InitScheme::Glorot).unwrap();
        // Nudge biases off zero so the round trip is not trivially zeros.
        for b in net.biases_mut() {
            for i in 0..b.len() {
                b[i] = rng.normal();
            }
        }
        let mut buf = Vec::new();
        net.write_text(&mut buf).unwrap();
        let parsed = DeepNet::read_text(&mut buf.as_slice()).unwrap();
        assert_eq!(net, parsed);
    }

    #[test]
    fn read_text_rejects_corrupted_headers() {
        let spec = NetworkSpec::linear(2, 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(0), InitScheme::Glorot).unwrap();
        let mut buf = Vec::new();
        net.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("DEEPNET v1", "DEEPNET v9");
        assert!(DeepNet::read_text(&mut text.as_bytes()).is_err());
    }

    #[test]
    fn spec_validation_rejects_inconsistent_shapes() {
        assert!(NetworkSpec::new(0, vec![], vec![], 1).is_err());
        assert!(NetworkSpec::new(2, vec![3], vec![], 1).is_err());
        assert!(NetworkSpec::new(2, vec![0], vec![Activation::Tanh], 1).is_err());
        let spec = NetworkSpec::linear(2, 1).unwrap();
        assert!(DeepNet::new(spec, vec![Matrix::zeros(1, 3)], vec![Vector::zeros(1)]).is_err());
    }

    #[test]
    fn batched_forward_equals_mapped_single_forward() {
        let mut rng = Rng::new(13);
        let spec = NetworkSpec::new(3, vec![4], vec![Activation::Tanh], 2).unwrap();
        let net = init_weights(&spec, &mut rng, InitScheme::Glorot).unwrap();
        let xs = Matrix::from_vec(5, 3, (0..15).map(|_| rng.range_f64(-1.0, 1.0)).collect())
            .unwrap();
        let batch = net.predict_batch(&xs).unwrap();
        for i in 0..5 {
            let single = net.predict(&xs.row_vector(i)).unwrap();
            assert_eq!(batch.row(i), single.as_slice());
        }
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let spec = NetworkSpec::linear(2, 1).unwrap();
        let net = init_weights(&spec, &mut Rng::new(0), InitScheme::Glorot).unwrap();
        assert!(net.predict(&v(&[1.0, 2.0, 3.0])).is_err());
    }
}
