//! Random-configuration gradient checking: analytic gradients of the
//! feedforward, LSTM, and recurrent trainers against central finite
//! differences.

use anyhow::Result;

use deepindex_core::lstm::{
    flatten_lstm_params, flatten_rnn_params, rnn_gradient, sequence_gradient, unflatten_lstm_params,
    unflatten_rnn_params, AffineMap, LstmCell, RnnCell, SequencePair,
};
use deepindex_core::network::{init_weights, Activation, DeepNet, InitScheme, NetworkSpec};
use deepindex_core::numerics::{finite_diff_grad, Rng, Vector};
use deepindex_core::training::{
    backprop, flatten_params, loss_value, unflatten_params, Loss,
};

/// Result of one gradient-check sweep.
#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub net_trials: usize,
    pub lstm_trials: usize,
    pub rnn_trials: usize,
    pub max_rel_error: f64,
    pub worst_case: String,
}

fn rel_error(analytic: &[f64], numeric: &Vector) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.norm() + 1e-12;
    diff / scale
}

const HIDDEN_CHOICES: [Activation; 6] = [
    Activation::Sigmoid,
    Activation::Tanh,
    Activation::Relu,
    Activation::Identity,
    Activation::Softmax,
    Activation::MaxPool,
];

// Finite differences step across relu kinks and max-pool argmax ties; an
// input is admissible only when every pre-activation sits clear of them.
fn kink_margin(net: &DeepNet, x: &Vector) -> f64 {
    let Ok((_, trace)) = net.forward(x) else { return 0.0 };
    let mut margin = f64::INFINITY;
    for (l, act) in net.spec().activations.iter().enumerate() {
        let z = &trace.pre_activations[l];
        match act {
            Activation::Relu => {
                for i in 0..z.len() {
                    margin = margin.min(z[i].abs());
                }
            }
            Activation::MaxPool => {
                let mut sorted: Vec<f64> = z.as_slice().to_vec();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if sorted.len() > 1 {
                    margin = margin.min(sorted[0] - sorted[1]);
                }
            }
            _ => {}
        }
    }
    margin
}

fn random_vector(rng: &mut Rng, len: usize) -> Vector {
    Vector::from_vec((0..len).map(|_| rng.range_f64(-1.0, 1.0)).collect()).unwrap()
}

fn check_net(rng: &mut Rng) -> Result<(f64, String)> {
    let input_dim = 1 + rng.below(5);
    let depth = rng.below(4);
    let mut hidden = Vec::new();
    let mut acts = Vec::new();
    for _ in 0..depth {
        hidden.push(1 + rng.below(8));
        acts.push(HIDDEN_CHOICES[rng.below(HIDDEN_CHOICES.len())]);
    }
    let use_ce = rng.bernoulli(0.25);
    let output_dim = if use_ce { 2 + rng.below(3) } else { 1 + rng.below(3) };
    let loss = if use_ce { Loss::CrossEntropy } else { Loss::Mse };
    let spec = NetworkSpec::new(input_dim, hidden, acts, output_dim)?;
    let net = init_weights(&spec, rng, InitScheme::Glorot)?;

    // Resample the probe point until it clears every kink.
    let mut x = random_vector(rng, input_dim);
    for _ in 0..100 {
        if kink_margin(&net, &x) > 1e-3 {
            break;
        }
        x = random_vector(rng, input_dim);
    }
    let y = if use_ce {
        let mut y = Vector::zeros(output_dim);
        y[rng.below(output_dim)] = 1.0;
        y
    } else {
        random_vector(rng, output_dim)
    };

    let analytic = backprop(&net, &x, &y, loss)?.flatten();
    let base = flatten_params(&net);
    let f = |params: &Vector| {
        let candidate = unflatten_params(&net, params.as_slice()).unwrap();
        let y_hat = candidate.predict(&x).unwrap();
        loss_value(loss, &y, &y_hat).unwrap()
    };
    let numeric = finite_diff_grad(f, &Vector::from_vec(base)?, 1e-5)?;
    let err = rel_error(&analytic, &numeric);
    let label = format!(
        "net depth={} widths={:?} loss={loss:?}",
        spec.depth(),
        spec.hidden_sizes
    );
    Ok((err, label))
}

fn check_lstm(rng: &mut Rng) -> Result<(f64, String)> {
    let input = 1 + rng.below(3);
    let hidden = 1 + rng.below(4);
    let len = 1 + rng.below(5);
    let cell = LstmCell::init(input, hidden, rng);
    let readout = AffineMap::init(1, hidden, rng);
    let pair = SequencePair::new(
        (0..len).map(|_| random_vector(rng, input)).collect(),
        (0..len).map(|_| random_vector(rng, 1)).collect(),
    )?;
    let (_, analytic) = sequence_gradient(&cell, &readout, &pair)?;
    let base = flatten_lstm_params(&cell, &readout);
    let f = |params: &Vector| {
        let (c, r) = unflatten_lstm_params(&cell, &readout, params.as_slice());
        deepindex_core::lstm::sequence_loss(&c, &r, &pair).unwrap()
    };
    let numeric = finite_diff_grad(f, &Vector::from_vec(base)?, 1e-5)?;
    Ok((rel_error(&analytic, &numeric), format!("lstm hidden={hidden} len={len}")))
}

fn check_rnn(rng: &mut Rng) -> Result<(f64, String)> {
    let input = 1 + rng.below(3);
    let hidden = 1 + rng.below(4);
    let len = 1 + rng.below(5);
    let act = [Activation::Tanh, Activation::Sigmoid][rng.below(2)];
    let cell = RnnCell::init(input, hidden, 1, act, rng)?;
    let pair = SequencePair::new(
        (0..len).map(|_| random_vector(rng, input)).collect(),
        (0..len).map(|_| random_vector(rng, 1)).collect(),
    )?;
    let (_, analytic) = rnn_gradient(&cell, &pair)?;
    let base = flatten_rnn_params(&cell);
    let f = |params: &Vector| {
        let c = unflatten_rnn_params(&cell, params.as_slice());
        rnn_gradient(&c, &pair).unwrap().0
    };
    let numeric = finite_diff_grad(f, &Vector::from_vec(base)?, 1e-5)?;
    Ok((rel_error(&analytic, &numeric), format!("rnn hidden={hidden} len={len}")))
}

/// Runs `trials` random feedforward checks plus `trials/2` LSTM and
/// `trials/2` recurrent checks, reporting the worst relative error.
pub fn run_gradcheck(trials: usize, seed: u64) -> Result<GradCheckSummary> {
    let mut rng = Rng::new(seed);
    let mut max_rel_error: f64 = 0.0;
    let mut worst_case = String::from("none");
    let mut track = |err: f64, label: String| {
        if err > max_rel_error {
            max_rel_error = err;
            worst_case = label;
        }
    };
    for _ in 0..trials {
        let (err, label) = check_net(&mut rng)?;
        track(err, label);
    }
    let seq_trials = trials.div_ceil(2);
    for _ in 0..seq_trials {
        let (err, label) = check_lstm(&mut rng)?;
        track(err, label);
        let (err, label) = check_rnn(&mut rng)?;
        track(err, label);
    }
    Ok(GradCheckSummary {
        net_trials: trials,
        lstm_trials: seq_trials,
        rnn_trials: seq_trials,
        max_rel_error,
        worst_case,
    })
}
