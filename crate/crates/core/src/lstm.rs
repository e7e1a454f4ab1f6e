//! LSTM cell with forget/input/modulation/output gates, exact
//! backpropagation through time, plus a vanilla recurrent baseline.
//!
//! Gates act on the concatenation `[z_prev, x_t]`. The memory cell update
//! is `c_t = f ⊗ c_prev + i ⊗ c̄` and the hidden state `z_t = o ⊗ tanh(c_t)`.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{sigmoid, Activation};
use crate::numerics::{Matrix, Rng, Vector};
use crate::training::{Loss, TrainConfig};

/// Gate parameters. Every gate weight is `hidden × (hidden + input)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vector,
    pub b_i: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
    hidden_size: usize,
    input_size: usize,
}

/// Hidden state and memory cell, equal lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vector,
    pub cell: Vector,
}

impl LstmState {
    pub fn zero(hidden_size: usize) -> Self {
        Self { hidden: Vector::zeros(hidden_size), cell: Vector::zeros(hidden_size) }
    }
}

/// Affine readout applied to the hidden state at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub weights: Matrix,
    pub bias: Vector,
}

impl AffineMap {
    pub fn new(weights: Matrix, bias: Vector) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::Shape("readout bias length".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weights: Matrix::zeros(out_dim, in_dim), bias: Vector::zeros(out_dim) }
    }

    pub fn init(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (out_dim + in_dim) as f64).sqrt();
        let mut w = Matrix::zeros(out_dim, in_dim);
        for v in w.data_mut() {
            *v = rng.range_f64(-limit, limit);
        }
        Self { weights: w, bias: Vector::zeros(out_dim) }
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        self.weights.matvec(x)?.add(&self.bias)
    }
}

impl LstmCell {
    /// All-zero parameters.
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let w = || Matrix::zeros(hidden_size, hidden_size + input_size);
        let b = || Vector::zeros(hidden_size);
        Self {
            w_f: w(),
            w_i: w(),
            w_c: w(),
            w_o: w(),
            b_f: b(),
            b_i: b(),
            b_c: b(),
            b_o: b(),
            hidden_size,
            input_size,
        }
    }

    /// Uniform init on ±sqrt(6/(fan_in+fan_out)); the forget-gate bias
    /// starts at +1 so memory flows during early training.
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut Rng) -> Self {
        let mut cell = Self::zeros(input_size, hidden_size);
        let limit = (6.0 / (2 * hidden_size + input_size) as f64).sqrt();
        for w in [&mut cell.w_f, &mut cell.w_i, &mut cell.w_c, &mut cell.w_o] {
            for v in w.data_mut() {
                *v = rng.range_f64(-limit, limit);
            }
        }
        for j in 0..hidden_size {
            cell.b_f[j] = 1.0;
        }
        cell
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.hidden_size + self.input_size;
        for (name, w, b) in [
            ("forget", &self.w_f, &self.b_f),
            ("input", &self.w_i, &self.b_i),
            ("modulation", &self.w_c, &self.b_c),
            ("output", &self.w_o, &self.b_o),
        ] {
            if w.rows() != self.hidden_size || w.cols() != cols {
                return Err(Error::Shape(format!(
                    "{name} gate weight is {}x{}, expected {}x{cols}",
                    w.rows(),
                    w.cols(),
                    self.hidden_size
                )));
            }
            if b.len() != self.hidden_size {
                return Err(Error::Shape(format!("{name} gate bias length {}", b.len())));
            }
            if !w.is_finite() || !b.is_finite() {
                return Err(Error::NonFinite(format!("{name} gate parameters")));
            }
        }
        Ok(())
    }

    /// Writes the versioned text form (17 significant digits, exact
    /// round trip).
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "LSTMCELL v1")?;
        writeln!(w, "input_size {}", self.input_size)?;
        writeln!(w, "hidden_size {}", self.hidden_size)?;
        for (tag, wm, b) in [
            ("f", &self.w_f, &self.b_f),
            ("i", &self.w_i, &self.b_i),
            ("c", &self.w_c, &self.b_c),
            ("o", &self.w_o, &self.b_o),
        ] {
            writeln!(w, "W{tag} {} {}", wm.rows(), wm.cols())?;
            for r in 0..wm.rows() {
                crate::network::write_row(w, wm.row(r))?;
            }
            writeln!(w, "b{tag} {}", b.len())?;
            crate::network::write_row(w, b.as_slice())?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = crate::network::TokenLines::new(r);
        lines.expect_header("LSTMCELL v1")?;
        let input_size = lines.keyed_usize("input_size")?;
        let hidden_size = lines.keyed_usize("hidden_size")?;
        let mut cell = Self::zeros(input_size, hidden_size);
        let cols = hidden_size + input_size;
        for (tag, slot_w, slot_b) in [
            ("f", 0usize, 0usize),
            ("i", 1, 1),
            ("c", 2, 2),
            ("o", 3, 3),
        ] {
            let head = lines.next_tokens()?;
            if head.len() != 3 || head[0] != format!("W{tag}") {
                return Err(Error::Format(format!("expected 'W{tag} rows cols', got {head:?}")));
            }
            let mut data = Vec::with_capacity(hidden_size * cols);
            for _ in 0..hidden_size {
                lines.floats_into(&mut data, cols)?;
            }
            let w = Matrix::from_vec(hidden_size, cols, data)?;
            let bhead = lines.next_tokens()?;
            if bhead.len() != 2 || bhead[0] != format!("b{tag}") {
                return Err(Error::Format(format!("expected 'b{tag} len', got {bhead:?}")));
            }
            let mut bdata = Vec::with_capacity(hidden_size);
            lines.floats_into(&mut bdata, hidden_size)?;
            let b = Vector::from_vec(bdata)?;
            match slot_w {
                0 => cell.w_f = w,
                1 => cell.w_i = w,
                2 => cell.w_c = w,
                _ => cell.w_o = w,
            }
            match slot_b {
                0 => cell.b_f = b,
                1 => cell.b_i = b,
                2 => cell.b_c = b,
                _ => cell.b_o = b,
            }
        }
        lines.expect_header("end")?;
        cell.validate()?;
        Ok(cell)
    }
}

// Full record of one step, kept for backpropagation through time.
#[derive(Debug, Clone)]
struct StepCache {
    v: Vector, // [z_prev, x]
    f: Vector,
    i: Vector,
    c_bar: Vector,
    o: Vector,
    c_prev: Vector,
    c: Vector,
    tanh_c: Vector,
    z: Vector,
}

fn concat(z_prev: &Vector, x: &Vector) -> Vector {
    let mut v = Vec::with_capacity(z_prev.len() + x.len());
    v.extend_from_slice(z_prev.as_slice());
    v.extend_from_slice(x.as_slice());
    Vector::from_raw(v)
}

fn gate(w: &Matrix, v: &Vector, b: &Vector, squash: fn(f64) -> f64) -> Result<Vector> {
    let mut a = w.matvec(v)?.add(b)?;
    for e in a.as_mut_slice() {
        *e = squash(*e);
    }
    Ok(a)
}

fn step_cached(cell: &LstmCell, state: &LstmState, x: &Vector) -> Result<StepCache> {
    if x.len() != cell.input_size {
        return Err(Error::Shape(format!(
            "input length {} vs cell input size {}",
            x.len(),
            cell.input_size
        )));
    }
    let v = concat(&state.hidden, x);
    let f = gate(&cell.w_f, &v, &cell.b_f, sigmoid)?;
    let i = gate(&cell.w_i, &v, &cell.b_i, sigmoid)?;
    let c_bar = gate(&cell.w_c, &v, &cell.b_c, f64::tanh)?;
    let o = gate(&cell.w_o, &v, &cell.b_o, sigmoid)?;
    let mut c = Vector::zeros(cell.hidden_size);
    let mut tanh_c = Vector::zeros(cell.hidden_size);
    let mut z = Vector::zeros(cell.hidden_size);
    for j in 0..cell.hidden_size {
        c[j] = f[j] * state.cell[j] + i[j] * c_bar[j];
        tanh_c[j] = c[j].tanh();
        z[j] = o[j] * tanh_c[j];
    }
    Ok(StepCache { v, f, i, c_bar, o, c_prev: state.cell.clone(), c, tanh_c, z })
}

/// One gate update: new memory cell and hidden state from the previous
/// state and the current input.
pub fn lstm_step(cell: &LstmCell, state: &LstmState, x: &Vector) -> Result<LstmState> {
    let cache = step_cached(cell, state, x)?;
    Ok(LstmState { hidden: cache.z, cell: cache.c })
}

/// Threads the cell over a sequence from the zero state and applies the
/// readout to every hidden state.
pub fn lstm_forward(
    cell: &LstmCell,
    sequence: &[Vector],
    readout: &AffineMap,
) -> Result<Vec<Vector>> {
    if sequence.is_empty() {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    let mut state = LstmState::zero(cell.hidden_size);
    let mut outputs = Vec::with_capacity(sequence.len());
    for x in sequence {
        state = lstm_step(cell, &state, x)?;
        outputs.push(readout.apply(&state.hidden)?);
    }
    Ok(outputs)
}

/// One aligned (inputs, targets) sequence pair.
#[derive(Debug, Clone)]
pub struct SequencePair {
    pub inputs: Vec<Vector>,
    pub targets: Vec<Vector>,
}

impl SequencePair {
    pub fn new(inputs: Vec<Vector>, targets: Vec<Vector>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Shape(format!(
                "sequence pair lengths {} vs {}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }
}

// Gradients for cell + readout, flattened in a fixed order.
#[derive(Debug, Clone)]
struct LstmGradients {
    w: [Matrix; 4], // f, i, c, o
    b: [Vector; 4],
    w_r: Matrix,
    b_r: Vector,
}

impl LstmGradients {
    fn zeros(cell: &LstmCell, readout: &AffineMap) -> Self {
        let w = || Matrix::zeros(cell.hidden_size, cell.hidden_size + cell.input_size);
        let b = || Vector::zeros(cell.hidden_size);
        Self {
            w: [w(), w(), w(), w()],
            b: [b(), b(), b(), b()],
            w_r: Matrix::zeros(readout.weights.rows(), readout.weights.cols()),
            b_r: Vector::zeros(readout.bias.len()),
        }
    }

    fn add_in_place(&mut self, other: &LstmGradients) {
        for k in 0..4 {
            self.w[k].axpy(1.0, &other.w[k]);
            self.b[k].axpy(1.0, &other.b[k]);
        }
        self.w_r.axpy(1.0, &other.w_r);
        self.b_r.axpy(1.0, &other.b_r);
    }

    fn scale_in_place(&mut self, s: f64) {
        for k in 0..4 {
            for v in self.w[k].data_mut() {
                *v *= s;
            }
            for v in self.b[k].as_mut_slice() {
                *v *= s;
            }
        }
        for v in self.w_r.data_mut() {
            *v *= s;
        }
        for v in self.b_r.as_mut_slice() {
            *v *= s;
        }
    }
}

// Mean-over-steps squared error of one sequence and its exact BPTT
// gradient.
fn sequence_loss_and_grad(
    cell: &LstmCell,
    readout: &AffineMap,
    pair: &SequencePair,
) -> Result<(f64, LstmGradients)> {
    let t_len = pair.inputs.len();
    let h = cell.hidden_size;
    let mut caches = Vec::with_capacity(t_len);
    let mut state = LstmState::zero(h);
    let mut outputs = Vec::with_capacity(t_len);
    for x in &pair.inputs {
        let cache = step_cached(cell, &state, x)?;
        state = LstmState { hidden: cache.z.clone(), cell: cache.c.clone() };
        outputs.push(readout.apply(&cache.z)?);
        caches.push(cache);
    }

    let scale = 1.0 / t_len as f64;
    let mut loss = 0.0;
    let mut grads = LstmGradients::zeros(cell, readout);
    let mut dz_next = Vector::zeros(h);
    let mut dc_next = Vector::zeros(h);
    for t in (0..t_len).rev() {
        let cache = &caches[t];
        let y = &outputs[t];
        let target = &pair.targets[t];
        if target.len() != y.len() {
            return Err(Error::Shape("target length vs readout width".into()));
        }
        let mut dy = Vector::zeros(y.len());
        for k in 0..y.len() {
            let d = y[k] - target[k];
            loss += scale * d * d;
            dy[k] = scale * 2.0 * d;
        }
        grads.w_r.axpy(1.0, &dy.outer(&cache.z));
        grads.b_r.axpy(1.0, &dy);

        let mut dz = readout.weights.transpose_matvec(&dy)?;
        dz.axpy(1.0, &dz_next);

        let mut dc = dc_next.clone();
        let mut da = [Vector::zeros(h), Vector::zeros(h), Vector::zeros(h), Vector::zeros(h)];
        for j in 0..h {
            let o = cache.o[j];
            let tc = cache.tanh_c[j];
            // z = o ⊗ tanh(c)
            da[3][j] = dz[j] * tc * o * (1.0 - o);
            dc[j] += dz[j] * o * (1.0 - tc * tc);
            // c = f ⊗ c_prev + i ⊗ c̄
            let f = cache.f[j];
            let i = cache.i[j];
            let cb = cache.c_bar[j];
            da[0][j] = dc[j] * cache.c_prev[j] * f * (1.0 - f);
            da[1][j] = dc[j] * cb * i * (1.0 - i);
            da[2][j] = dc[j] * i * (1.0 - cb * cb);
        }

        let mut dv = Vector::zeros(h + cell.input_size);
        let weights = [&cell.w_f, &cell.w_i, &cell.w_c, &cell.w_o];
        for k in 0..4 {
            grads.w[k].axpy(1.0, &da[k].outer(&cache.v));
            grads.b[k].axpy(1.0, &da[k]);
            dv.axpy(1.0, &weights[k].transpose_matvec(&da[k])?);
        }
        for j in 0..h {
            dz_next[j] = dv[j];
            dc_next[j] = dc[j] * cache.f[j];
        }
    }
    Ok((loss, grads))
}

/// Mean-over-steps squared error of a sequence under a cell and readout.
pub fn sequence_loss(cell: &LstmCell, readout: &AffineMap, pair: &SequencePair) -> Result<f64> {
    Ok(sequence_loss_and_grad(cell, readout, pair)?.0)
}

/// Loss plus the exact BPTT gradient, flattened in the order of
/// [`flatten_lstm_params`].
pub fn sequence_gradient(
    cell: &LstmCell,
    readout: &AffineMap,
    pair: &SequencePair,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grads) = sequence_loss_and_grad(cell, readout, pair)?;
    let mut flat = Vec::new();
    for k in 0..4 {
        flat.extend_from_slice(grads.w[k].data());
        flat.extend_from_slice(grads.b[k].as_slice());
    }
    flat.extend_from_slice(grads.w_r.data());
    flat.extend_from_slice(grads.b_r.as_slice());
    Ok((loss, flat))
}

/// Flattens gate weights and biases (f, i, c, o order) then the readout.
pub fn flatten_lstm_params(cell: &LstmCell, readout: &AffineMap) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in [
        (&cell.w_f, &cell.b_f),
        (&cell.w_i, &cell.b_i),
        (&cell.w_c, &cell.b_c),
        (&cell.w_o, &cell.b_o),
    ] {
        out.extend_from_slice(w.data());
        out.extend_from_slice(b.as_slice());
    }
    out.extend_from_slice(readout.weights.data());
    out.extend_from_slice(readout.bias.as_slice());
    out
}

/// Rebuilds a cell and readout from a flat parameter vector (inverse of
/// [`flatten_lstm_params`]); shapes come from the templates.
pub fn unflatten_lstm_params(
    cell_template: &LstmCell,
    readout_template: &AffineMap,
    params: &[f64],
) -> (LstmCell, AffineMap) {
    let mut cell = cell_template.clone();
    let mut cursor = 0;
    {
        let slots: [(&mut Matrix, &mut Vector); 4] = [
            (&mut cell.w_f, &mut cell.b_f),
            (&mut cell.w_i, &mut cell.b_i),
            (&mut cell.w_c, &mut cell.b_c),
            (&mut cell.w_o, &mut cell.b_o),
        ];
        for (w, b) in slots {
            let wlen = w.rows() * w.cols();
            w.data_mut().copy_from_slice(&params[cursor..cursor + wlen]);
            cursor += wlen;
            for j in 0..b.len() {
                b[j] = params[cursor + j];
            }
            cursor += b.len();
        }
    }
    let mut readout = readout_template.clone();
    let wlen = readout.weights.rows() * readout.weights.cols();
    readout.weights.data_mut().copy_from_slice(&params[cursor..cursor + wlen]);
    cursor += wlen;
    for j in 0..readout.bias.len() {
        readout.bias[j] = params[cursor + j];
    }
    (cell, readout)
}

/// Loss plus the exact BPTT gradient of the vanilla recurrent cell,
/// flattened as [`flatten_rnn_params`].
pub fn rnn_gradient(cell: &RnnCell, pair: &SequencePair) -> Result<(f64, Vec<f64>)> {
    let (loss, g) = rnn_loss_and_grad(cell, pair)?;
    let mut flat = Vec::new();
    flat.extend_from_slice(g.w_xz.data());
    flat.extend_from_slice(g.w_zz.data());
    flat.extend_from_slice(g.b_x.as_slice());
    flat.extend_from_slice(g.w_hz.data());
    flat.extend_from_slice(g.b_z.as_slice());
    Ok((loss, flat))
}

/// Flattens the recurrent cell: w_xz, w_zz, b_x, w_hz, b_z.
pub fn flatten_rnn_params(cell: &RnnCell) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(cell.w_xz.data());
    out.extend_from_slice(cell.w_zz.data());
    out.extend_from_slice(cell.b_x.as_slice());
    out.extend_from_slice(cell.w_hz.data());
    out.extend_from_slice(cell.b_z.as_slice());
    out
}

/// Rebuilds a recurrent cell from a flat parameter vector.
pub fn unflatten_rnn_params(template: &RnnCell, params: &[f64]) -> RnnCell {
    let mut cell = template.clone();
    let mut cursor = 0;
    for w in [&mut cell.w_xz, &mut cell.w_zz] {
        let len = w.rows() * w.cols();
        w.data_mut().copy_from_slice(&params[cursor..cursor + len]);
        cursor += len;
    }
    for j in 0..cell.b_x.len() {
        cell.b_x[j] = params[cursor + j];
    }
    cursor += cell.b_x.len();
    let len = cell.w_hz.rows() * cell.w_hz.cols();
    cell.w_hz.data_mut().copy_from_slice(&params[cursor..cursor + len]);
    cursor += len;
    for j in 0..cell.b_z.len() {
        cell.b_z[j] = params[cursor + j];
    }
    cell
}

fn penalty_step(w: &mut Matrix, g: &Matrix, lr: f64, lambda: f64, cfg: &TrainConfig) {
    for (v, gv) in w.data_mut().iter_mut().zip(g.data()) {
        let pen = match cfg.penalty.kind {
            crate::training::PenaltyKind::Ridge => 2.0 * *v,
            crate::training::PenaltyKind::Lasso => {
                if *v > 0.0 {
                    1.0
                } else if *v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            crate::training::PenaltyKind::None => 0.0,
        };
        *v -= lr * (gv + lambda * pen);
    }
}

fn validate_sequence_cfg(cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.loss != Loss::Mse {
        return Err(Error::InvalidArgument(
            "sequence training supports squared-error loss only".into(),
        ));
    }
    if cfg.dropout_keep != 1.0 {
        return Err(Error::InvalidArgument(
            "sequence training does not apply input dropout".into(),
        ));
    }
    Ok(())
}

/// Mini-batch SGD over whole sequences with exact BPTT gradients. Returns
/// the trained cell, the trained readout, and per-epoch mean loss.
pub fn lstm_train(
    cell: &LstmCell,
    readout: &AffineMap,
    data: &[SequencePair],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(LstmCell, AffineMap, Vec<f64>)> {
    validate_sequence_cfg(cfg)?;
    cell.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training sequences".into()));
    }
    let mut cell = cell.clone();
    let mut readout = readout.clone();
    let batch = cfg.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

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
            let per_seq: Result<Vec<LstmGradients>> = chunk
                .par_iter()
                .map(|&s| Ok(sequence_loss_and_grad(&cell, &readout, &data[s])?.1))
                .collect();
            let per_seq = per_seq?;
            let mut sum = LstmGradients::zeros(&cell, &readout);
            for g in &per_seq {
                sum.add_in_place(g);
            }
            sum.scale_in_place(1.0 / per_seq.len() as f64);

            let gates = [&mut cell.w_f, &mut cell.w_i, &mut cell.w_c, &mut cell.w_o];
            for (w, g) in gates.into_iter().zip(&sum.w) {
                penalty_step(w, g, lr, cfg.lambda, cfg);
            }
            let biases = [&mut cell.b_f, &mut cell.b_i, &mut cell.b_c, &mut cell.b_o];
            for (b, g) in biases.into_iter().zip(&sum.b) {
                for j in 0..b.len() {
                    b[j] -= lr * g[j];
                }
            }
            penalty_step(&mut readout.weights, &sum.w_r, lr, cfg.lambda, cfg);
            for j in 0..readout.bias.len() {
                readout.bias[j] -= lr * sum.b_r[j];
            }
        }

        let mut total = 0.0;
        for pair in data {
            total += sequence_loss_and_grad(&cell, &readout, pair)?.0;
        }
        let objective = total / data.len() as f64;
        if !objective.is_finite() {
            return Err(Error::Diverged { epoch, objective });
        }
        history.push(objective);
    }
    Ok((cell, readout, history))
}

/// Vanilla recurrent cell: `z_t = f(W_xz x_t + W_zz z_prev + b_x)` and
/// `y_t = f(W_hz z_t + b_z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCell {
    pub w_xz: Matrix,
    pub w_zz: Matrix,
    pub b_x: Vector,
    pub w_hz: Matrix,
    pub b_z: Vector,
    pub activation: Activation,
}

impl RnnCell {
    pub fn init(
        input_size: usize,
        hidden_size: usize,
        output_size: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut draw = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let mut w = Matrix::zeros(rows, cols);
            for v in w.data_mut() {
                *v = rng.range_f64(-limit, limit);
            }
            w
        };
        let cell = Self {
            w_xz: draw(hidden_size, input_size),
            w_zz: draw(hidden_size, hidden_size),
            b_x: Vector::zeros(hidden_size),
            w_hz: draw(output_size, hidden_size),
            b_z: Vector::zeros(output_size),
            activation,
        };
        cell.validate()?;
        Ok(cell)
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xz.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w_xz.rows();
        if self.w_zz.rows() != h || self.w_zz.cols() != h || self.b_x.len() != h {
            return Err(Error::Shape("recurrent block shapes".into()));
        }
        if self.w_hz.cols() != h || self.b_z.len() != self.w_hz.rows() {
            return Err(Error::Shape("output map shapes".into()));
        }
        match self.activation {
            Activation::Sigmoid | Activation::Tanh | Activation::Relu | Activation::Identity => {
                Ok(())
            }
            other => Err(Error::UnsupportedActivation(other.name())),
        }
    }
}

/// Runs the recurrence from the zero state, returning one output per step.
pub fn rnn_forward(cell: &RnnCell, sequence: &[Vector]) -> Result<Vec<Vector>> {
    if sequence.is_empty() {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    cell.validate()?;
    let mut z = Vector::zeros(cell.hidden_size());
    let mut outputs = Vec::with_capacity(sequence.len());
    for x in sequence {
        let mut a = cell.w_xz.matvec(x)?;
        a.axpy(1.0, &cell.w_zz.matvec(&z)?);
        a.axpy(1.0, &cell.b_x);
        z = cell.activation.apply(&a);
        let u = cell.w_hz.matvec(&z)?.add(&cell.b_z)?;
        outputs.push(cell.activation.apply(&u));
    }
    Ok(outputs)
}

#[derive(Debug, Clone)]
struct RnnGradients {
    w_xz: Matrix,
    w_zz: Matrix,
    b_x: Vector,
    w_hz: Matrix,
    b_z: Vector,
}

fn rnn_loss_and_grad(cell: &RnnCell, pair: &SequencePair) -> Result<(f64, RnnGradients)> {
    let h = cell.hidden_size();
    let t_len = pair.inputs.len();
    // Forward with caches.
    let mut pre_state = Vec::with_capacity(t_len);
    let mut states = Vec::with_capacity(t_len);
    let mut pre_out = Vec::with_capacity(t_len);
    let mut outs = Vec::with_capacity(t_len);
    let mut z = Vector::zeros(h);
    for x in &pair.inputs {
        let mut a = cell.w_xz.matvec(x)?;
        a.axpy(1.0, &cell.w_zz.matvec(&z)?);
        a.axpy(1.0, &cell.b_x);
        z = cell.activation.apply(&a);
        let u = cell.w_hz.matvec(&z)?.add(&cell.b_z)?;
        pre_state.push(a);
        states.push(z.clone());
        pre_out.push(u.clone());
        outs.push(cell.activation.apply(&u));
    }

    let scale = 1.0 / t_len as f64;
    let mut loss = 0.0;
    let mut g = RnnGradients {
        w_xz: Matrix::zeros(cell.w_xz.rows(), cell.w_xz.cols()),
        w_zz: Matrix::zeros(h, h),
        b_x: Vector::zeros(h),
        w_hz: Matrix::zeros(cell.w_hz.rows(), cell.w_hz.cols()),
        b_z: Vector::zeros(cell.b_z.len()),
    };
    let mut dz_next = Vector::zeros(h);
    for t in (0..t_len).rev() {
        let y = &outs[t];
        let target = &pair.targets[t];
        let mut dy = Vector::zeros(y.len());
        for k in 0..y.len() {
            let d = y[k] - target[k];
            loss += scale * d * d;
            dy[k] = scale * 2.0 * d;
        }
        let du = cell.activation.backward(&pre_out[t], y, &dy)?;
        g.w_hz.axpy(1.0, &du.outer(&states[t]));
        g.b_z.axpy(1.0, &du);

        let mut dz = cell.w_hz.transpose_matvec(&du)?;
        dz.axpy(1.0, &dz_next);
        let da = cell.activation.backward(&pre_state[t], &states[t], &dz)?;
        g.w_xz.axpy(1.0, &da.outer(&pair.inputs[t]));
        let z_prev = if t == 0 { Vector::zeros(h) } else { states[t - 1].clone() };
        g.w_zz.axpy(1.0, &da.outer(&z_prev));
        g.b_x.axpy(1.0, &da);
        dz_next = cell.w_zz.transpose_matvec(&da)?;
    }
    Ok((loss, g))
}

/// SGD over sequences for the vanilla recurrent baseline.
pub fn rnn_train(
    cell: &RnnCell,
    data: &[SequencePair],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(RnnCell, Vec<f64>)> {
    validate_sequence_cfg(cfg)?;
    cell.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training sequences".into()));
    }
    let mut cell = cell.clone();
    let batch = cfg.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

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
            let per_seq: Result<Vec<RnnGradients>> = chunk
                .par_iter()
                .map(|&s| Ok(rnn_loss_and_grad(&cell, &data[s])?.1))
                .collect();
            let per_seq = per_seq?;
            let inv = 1.0 / per_seq.len() as f64;
            let mut sum = per_seq[0].clone();
            for g in &per_seq[1..] {
                sum.w_xz.axpy(1.0, &g.w_xz);
                sum.w_zz.axpy(1.0, &g.w_zz);
                sum.b_x.axpy(1.0, &g.b_x);
                sum.w_hz.axpy(1.0, &g.w_hz);
                sum.b_z.axpy(1.0, &g.b_z);
            }
            for m in [&mut sum.w_xz, &mut sum.w_zz, &mut sum.w_hz] {
                for v in m.data_mut() {
                    *v *= inv;
                }
            }
            for b in [&mut sum.b_x, &mut sum.b_z] {
                for v in b.as_mut_slice() {
                    *v *= inv;
                }
            }
            penalty_step(&mut cell.w_xz, &sum.w_xz, lr, cfg.lambda, cfg);
            penalty_step(&mut cell.w_zz, &sum.w_zz, lr, cfg.lambda, cfg);
            penalty_step(&mut cell.w_hz, &sum.w_hz, lr, cfg.lambda, cfg);
            for j in 0..cell.b_x.len() {
                cell.b_x[j] -= lr * sum.b_x[j];
            }
            for j in 0..cell.b_z.len() {
                cell.b_z[j] -= lr * sum.b_z[j];
            }
        }

        let mut total = 0.0;
        for pair in data {
            total += rnn_loss_and_grad(&cell, pair)?.0;
        }
        let objective = total / data.len() as f64;
        if !objective.is_finite() {
            return Err(Error::Diverged { epoch, objective });
        }
        history.push(objective);
    }
    Ok((cell, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec()).unwrap()
    }

    #[test]
    fn zero_parameter_step_matches_hand_evaluation() {
        // All gates sigmoid(0) = 0.5 and c̄ = tanh(0) = 0, so
        // c = 0.5 c_prev and z = 0.5 tanh(0.5 c_prev).
        let cell = LstmCell::zeros(2, 3);
        let state = LstmState { hidden: Vector::zeros(3), cell: v(&[1.0, -2.0, 0.5]) };
        let next = lstm_step(&cell, &state, &v(&[0.3, 0.7])).unwrap();
        for j in 0..3 {
            let want_c = 0.5 * state.cell[j];
            assert!((next.cell[j] - want_c).abs() < 1e-15);
            assert!((next.hidden[j] - 0.5 * want_c.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_forget_bias_preserves_memory() {
        let mut cell = LstmCell::zeros(1, 2);
        for j in 0..2 {
            cell.b_f[j] = 50.0;
        }
        let state = LstmState { hidden: Vector::zeros(2), cell: v(&[2.0, -1.5]) };
        let next = lstm_step(&cell, &state, &v(&[1.0])).unwrap();
        // F ≈ 1 and C̄ = 0, so the cell passes through untouched.
        for j in 0..2 {
            assert!((next.cell[j] - state.cell[j]).abs() < 1e-12);
        }
    }

    // Independent scalar-loop reimplementation of the step equations.
    fn reference_step(cell: &LstmCell, state: &LstmState, x: &Vector) -> (Vec<f64>, Vec<f64>) {
        let h = cell.hidden_size();
        let n = h + x.len();
        let mut vcat = vec![0.0; n];
        for j in 0..h {
            vcat[j] = state.hidden[j];
        }
        for k in 0..x.len() {
            vcat[h + k] = x[k];
        }
        let act = |w: &Matrix, b: &Vector, j: usize, squash: fn(f64) -> f64| {
            let mut a = b[j];
            for k in 0..n {
                a += w.get(j, k) * vcat[k];
            }
            squash(a)
        };
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut c = vec![0.0; h];
        let mut z = vec![0.0; h];
        for j in 0..h {
            let f = act(&cell.w_f, &cell.b_f, j, sig);
            let i = act(&cell.w_i, &cell.b_i, j, sig);
            let cb = act(&cell.w_c, &cell.b_c, j, f64::tanh);
            let o = act(&cell.w_o, &cell.b_o, j, sig);
            c[j] = f * state.cell[j] + i * cb;
            z[j] = o * c[j].tanh();
        }
        (z, c)
    }

    #[test]
    fn random_cell_step_matches_independent_reference() {
        let mut rng = Rng::new(303);
        let cell = LstmCell::init(3, 4, &mut rng);
        let state = LstmState {
            hidden: Vector::from_vec((0..4).map(|_| rng.range_f64(-0.9, 0.9)).collect()).unwrap(),
            cell: Vector::from_vec((0..4).map(|_| rng.normal()).collect()).unwrap(),
        };
        let x = Vector::from_vec((0..3).map(|_| rng.normal()).collect()).unwrap();
        let fast = lstm_step(&cell, &state, &x).unwrap();
        let (z_ref, c_ref) = reference_step(&cell, &state, &x);
        for j in 0..4 {
            assert!((fast.hidden[j] - z_ref[j]).abs() < 1e-14);
            assert!((fast.cell[j] - c_ref[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn gate_outputs_stay_in_their_open_ranges() {
        let mut rng = Rng::new(304);
        let cell = LstmCell::init(2, 4, &mut rng);
        let mut state = LstmState::zero(4);
        for _ in 0..50 {
            let x = Vector::from_vec(vec![rng.normal(), rng.normal()]).unwrap();
            let cache = step_cached(&cell, &state, &x).unwrap();
            for j in 0..4 {
                assert!(cache.f[j] > 0.0 && cache.f[j] < 1.0);
                assert!(cache.i[j] > 0.0 && cache.i[j] < 1.0);
                assert!(cache.o[j] > 0.0 && cache.o[j] < 1.0);
                assert!(cache.c_bar[j] > -1.0 && cache.c_bar[j] < 1.0);
                // Hidden state is a gate times a tanh, hence inside (-1, 1).
                assert!(cache.z[j] > -1.0 && cache.z[j] < 1.0);
            }
            state = LstmState { hidden: cache.z, cell: cache.c };
        }
    }

    #[test]
    fn forward_on_singleton_sequence_is_one_step_plus_readout() {
        let mut rng = Rng::new(305);
        let cell = LstmCell::init(2, 3, &mut rng);
        let readout = AffineMap::init(1, 3, &mut rng);
        let x = v(&[0.4, -0.6]);
        let outputs = lstm_forward(&cell, std::slice::from_ref(&x), &readout).unwrap();
        assert_eq!(outputs.len(), 1);
        let state = lstm_step(&cell, &LstmState::zero(3), &x).unwrap();
        let want = readout.apply(&state.hidden).unwrap();
        assert_eq!(outputs[0], want);
    }

    #[test]
    fn zero_cell_memory_decays_geometrically_from_a_seeded_state() {
        let cell = LstmCell::zeros(1, 1);
        let mut state = LstmState { hidden: Vector::zeros(1), cell: v(&[4.0]) };
        let x = v(&[1.0]);
        for t in 1..=10 {
            state = lstm_step(&cell, &state, &x).unwrap();
            let want = 4.0 * 0.5f64.powi(t);
            assert!((state.cell[0] - want).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn prefix_outputs_agree_with_the_full_run() {
        let mut rng = Rng::new(306);
        let cell = LstmCell::init(2, 3, &mut rng);
        let readout = AffineMap::init(2, 3, &mut rng);
        let seq: Vec<Vector> = (0..8)
            .map(|_| Vector::from_vec(vec![rng.normal(), rng.normal()]).unwrap())
            .collect();
        let full = lstm_forward(&cell, &seq, &readout).unwrap();
        for k in 1..=seq.len() {
            let prefix = lstm_forward(&cell, &seq[..k], &readout).unwrap();
            assert_eq!(prefix.as_slice(), &full[..k]);
        }
    }

    #[test]
    fn bptt_gradient_matches_finite_differences() {
        let mut rng = Rng::new(307);
        for trial in 0..5 {
            let hidden = 2 + (trial % 3);
            let cell = LstmCell::init(2, hidden, &mut rng);
            let readout = AffineMap::init(1, hidden, &mut rng);
            let len = 3 + (trial % 3);
            let pair = SequencePair::new(
                (0..len)
                    .map(|_| Vector::from_vec(vec![rng.normal(), rng.normal()]).unwrap())
                    .collect(),
                (0..len).map(|_| Vector::from_vec(vec![rng.normal()]).unwrap()).collect(),
            )
            .unwrap();

            let (_, grads) = sequence_loss_and_grad(&cell, &readout, &pair).unwrap();
            let mut analytic = Vec::new();
            for k in 0..4 {
                analytic.extend_from_slice(grads.w[k].data());
                analytic.extend_from_slice(grads.b[k].as_slice());
            }
            analytic.extend_from_slice(grads.w_r.data());
            analytic.extend_from_slice(grads.b_r.as_slice());

            let base = flatten_lstm_params(&cell, &readout);
            let f = |params: &Vector| {
                let (c, r) = unflatten_lstm_params(&cell, &readout, params.as_slice());
                sequence_loss_and_grad(&c, &r, &pair).unwrap().0
            };
            let numeric = finite_diff_grad(f, &Vector::from_vec(base).unwrap(), 1e-5).unwrap();
            let diff: f64 = analytic
                .iter()
                .zip(numeric.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let scale =
                analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.norm() + 1e-12;
            assert!(diff / scale < 1e-5, "trial {trial}: rel err {}", diff / scale);
        }
    }

    fn lag_task(rng: &mut Rng, n_seq: usize, len: usize, lag: usize) -> Vec<SequencePair> {
        (0..n_seq)
            .map(|_| {
                let bits: Vec<f64> =
                    (0..len).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
                let inputs: Vec<Vector> = bits.iter().map(|&b| v(&[b])).collect();
                let targets: Vec<Vector> = (0..len)
                    .map(|t| if t >= lag { v(&[bits[t - lag]]) } else { v(&[0.0]) })
                    .collect();
                SequencePair::new(inputs, targets).unwrap()
            })
            .collect()
    }

    fn exact_match_rate(outputs: &[Vec<Vector>], data: &[SequencePair], lag: usize) -> f64 {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (outs, pair) in outputs.iter().zip(data) {
            for t in lag..outs.len() {
                let predicted = if outs[t][0] > 0.5 { 1.0 } else { 0.0 };
                if predicted == pair.targets[t][0] {
                    hits += 1;
                }
                total += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn trained_lstm_memorizes_a_two_step_lag() {
        let mut rng = Rng::new(308);
        let train = lag_task(&mut rng, 30, 14, 2);
        let test = lag_task(&mut rng, 10, 14, 2);
        let cell = LstmCell::init(1, 4, &mut rng);
        let readout = AffineMap::init(1, 4, &mut rng);
        let mut cfg = TrainConfig::basic(0.5, 400, 308);
        cfg.batch_size = 10;
        let (cell, readout, history) = lstm_train(&cell, &readout, &train, &cfg, &mut rng).unwrap();
        assert!(history.last().unwrap() < &history[0]);
        let outputs: Vec<Vec<Vector>> =
            test.iter().map(|p| lstm_forward(&cell, &p.inputs, &readout).unwrap()).collect();
        let rate = exact_match_rate(&outputs, &test, 2);
        assert!(rate > 0.95, "exact-match rate {rate}");
    }

    #[test]
    fn zero_epochs_leaves_cell_and_readout_unchanged() {
        let mut rng = Rng::new(309);
        let cell = LstmCell::init(1, 3, &mut rng);
        let readout = AffineMap::init(1, 3, &mut rng);
        let data = lag_task(&mut rng, 4, 6, 1);
        let cfg = TrainConfig::basic(0.5, 0, 309);
        let (c2, r2, h) = lstm_train(&cell, &readout, &data, &cfg, &mut rng).unwrap();
        assert_eq!(c2, cell);
        assert_eq!(r2, readout);
        assert!(h.is_empty());
    }

    #[test]
    fn training_rejects_cross_entropy_and_dropout() {
        let mut rng = Rng::new(310);
        let cell = LstmCell::init(1, 2, &mut rng);
        let readout = AffineMap::init(1, 2, &mut rng);
        let data = lag_task(&mut rng, 2, 5, 1);
        let mut cfg = TrainConfig::basic(0.1, 1, 0);
        cfg.loss = Loss::CrossEntropy;
        assert!(lstm_train(&cell, &readout, &data, &cfg, &mut rng).is_err());
        let mut cfg = TrainConfig::basic(0.1, 1, 0);
        cfg.dropout_keep = 0.5;
        assert!(lstm_train(&cell, &readout, &data, &cfg, &mut rng).is_err());
    }

    #[test]
    fn cell_text_serialization_round_trips_bit_exactly() {
        let mut rng = Rng::new(311);
        let cell = LstmCell::init(3, 4, &mut rng);
        let mut buf = Vec::new();
        cell.write_text(&mut buf).unwrap();
        let parsed = LstmCell::read_text(&mut buf.as_slice()).unwrap();
        assert_eq!(cell, parsed);
    }

    #[test]
    fn rnn_with_zero_recurrence_is_a_per_step_feedforward_map() {
        let mut rng = Rng::new(312);
        let mut cell = RnnCell::init(2, 3, 1, Activation::Tanh, &mut rng).unwrap();
        cell.w_zz = Matrix::zeros(3, 3);
        let seq: Vec<Vector> = (0..5)
            .map(|_| Vector::from_vec(vec![rng.normal(), rng.normal()]).unwrap())
            .collect();
        let outs = rnn_forward(&cell, &seq).unwrap();
        for (t, x) in seq.iter().enumerate() {
            let single = rnn_forward(&cell, std::slice::from_ref(x)).unwrap();
            assert_eq!(outs[t], single[0], "step {t}");
        }
    }

    #[test]
    fn rnn_matches_independent_recurrence() {
        let mut rng = Rng::new(313);
        let cell = RnnCell::init(2, 3, 2, Activation::Tanh, &mut rng).unwrap();
        let seq: Vec<Vector> = (0..6)
            .map(|_| Vector::from_vec(vec![rng.normal(), rng.normal()]).unwrap())
            .collect();
        let fast = rnn_forward(&cell, &seq).unwrap();
        // Scalar-loop reference.
        let mut z = vec![0.0; 3];
        for (t, x) in seq.iter().enumerate() {
            let mut z_new = vec![0.0; 3];
            for j in 0..3 {
                let mut a = cell.b_x[j];
                for k in 0..2 {
                    a += cell.w_xz.get(j, k) * x[k];
                }
                for k in 0..3 {
                    a += cell.w_zz.get(j, k) * z[k];
                }
                z_new[j] = a.tanh();
            }
            z = z_new;
            for out_k in 0..2 {
                let mut u = cell.b_z[out_k];
                for k in 0..3 {
                    u += cell.w_hz.get(out_k, k) * z[k];
                }
                assert!((fast[t][out_k] - u.tanh()).abs() < 1e-14, "step {t}");
            }
        }
    }

    #[test]
    fn rnn_bptt_gradient_matches_finite_differences() {
        let mut rng = Rng::new(314);
        let cell = RnnCell::init(2, 3, 1, Activation::Tanh, &mut rng).unwrap();
        let pair = SequencePair::new(
            (0..4).map(|_| Vector::from_vec(vec![rng.normal(), rng.normal()]).unwrap()).collect(),
            (0..4).map(|_| Vector::from_vec(vec![rng.normal()]).unwrap()).collect(),
        )
        .unwrap();
        let (_, grads) = rnn_loss_and_grad(&cell, &pair).unwrap();
        let mut analytic = Vec::new();
        analytic.extend_from_slice(grads.w_xz.data());
        analytic.extend_from_slice(grads.w_zz.data());
        analytic.extend_from_slice(grads.b_x.as_slice());
        analytic.extend_from_slice(grads.w_hz.data());
        analytic.extend_from_slice(grads.b_z.as_slice());

        let mut base = Vec::new();
        base.extend_from_slice(cell.w_xz.data());
        base.extend_from_slice(cell.w_zz.data());
        base.extend_from_slice(cell.b_x.as_slice());
        base.extend_from_slice(cell.w_hz.data());
        base.extend_from_slice(cell.b_z.as_slice());

        let rebuild = |params: &[f64]| {
            let mut c = cell.clone();
            let mut cur = 0;
            let wlen = c.w_xz.rows() * c.w_xz.cols();
            c.w_xz.data_mut().copy_from_slice(&params[cur..cur + wlen]);
            cur += wlen;
            let wlen = 9;
            c.w_zz.data_mut().copy_from_slice(&params[cur..cur + wlen]);
            cur += wlen;
            for j in 0..3 {
                c.b_x[j] = params[cur + j];
            }
            cur += 3;
            let wlen = 3;
            c.w_hz.data_mut().copy_from_slice(&params[cur..cur + wlen]);
            cur += wlen;
            c.b_z[0] = params[cur];
            c
        };
        let f = |params: &Vector| rnn_loss_and_grad(&rebuild(params.as_slice()), &pair).unwrap().0;
        let numeric = finite_diff_grad(f, &Vector::from_vec(base).unwrap(), 1e-5).unwrap();
        let diff: f64 = analytic
            .iter()
            .zip(numeric.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.norm() + 1e-12;
        assert!(diff / scale < 1e-5, "rel err {}", diff / scale);
    }

    #[test]
    fn sequence_training_is_deterministic_under_seed() {
        let run = || {
            let mut rng = Rng::new(315);
            let data = lag_task(&mut rng, 8, 8, 1);
            let cell = LstmCell::init(1, 3, &mut rng);
            let readout = AffineMap::init(1, 3, &mut rng);
            let mut cfg = TrainConfig::basic(0.3, 20, 315);
            cfg.batch_size = 4;
            let (c, r, h) = lstm_train(&cell, &readout, &data, &cfg, &mut rng).unwrap();
            (flatten_lstm_params(&c, &r), h)
        };
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }
}
