//! Volatility-pattern sequence task: returns drawn under a two-state
//! regime-switching volatility, an LSTM trained to predict the next
//! squared return, and flat/persistence baselines for comparison.

use anyhow::Result;
use serde::{Deserialize, Serialize};

use deepindex_core::lstm::{lstm_forward, lstm_train, AffineMap, LstmCell, SequencePair};
use deepindex_core::numerics::{Rng, Vector};
use deepindex_core::training::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolRegimeSpec {
    pub periods: usize,
    /// Probability of staying in the current regime each step.
    pub persistence: f64,
    pub low_vol: f64,
    pub high_vol: f64,
}

impl Default for VolRegimeSpec {
    fn default() -> Self {
        Self { periods: 3000, persistence: 0.98, low_vol: 0.008, high_vol: 0.025 }
    }
}

/// Draws returns `r_t = σ(state_t) z_t` under a symmetric two-state Markov
/// chain over volatilities.
pub fn synth_vol_returns(spec: &VolRegimeSpec, rng: &mut Rng) -> Vec<f64> {
    let mut state_high = false;
    let mut out = Vec::with_capacity(spec.periods);
    for _ in 0..spec.periods {
        if !rng.bernoulli(spec.persistence) {
            state_high = !state_high;
        }
        let sigma = if state_high { spec.high_vol } else { spec.low_vol };
        out.push(sigma * rng.normal());
    }
    out
}

/// Out-of-sample mean squared errors of the trained LSTM and two
/// baselines on next-step squared-return prediction.
#[derive(Debug, Clone, Serialize)]
pub struct VolatilityOutcome {
    pub lstm_mse: f64,
    /// Predicting the training-window mean squared return.
    pub flat_mse: f64,
    /// Predicting the previous squared return.
    pub previous_mse: f64,
}

// Chops a normalized squared-return series into (input, next-step target)
// sequence pairs of the given length.
fn chop(xs: &[f64], len: usize) -> Vec<SequencePair> {
    let mut pairs = Vec::new();
    let mut start = 0;
    while start + len + 1 <= xs.len() {
        let inputs: Vec<Vector> =
            (0..len).map(|i| Vector::from_vec(vec![xs[start + i]]).unwrap()).collect();
        let targets: Vec<Vector> =
            (0..len).map(|i| Vector::from_vec(vec![xs[start + i + 1]]).unwrap()).collect();
        pairs.push(SequencePair::new(inputs, targets).unwrap());
        start += len;
    }
    pairs
}

/// Generates a regime-switching series, trains the LSTM on the first 70%,
/// and scores next-step squared-return prediction on the rest.
pub fn run_volatility_task(
    spec: &VolRegimeSpec,
    hidden: usize,
    epochs: usize,
    seed: u64,
) -> Result<VolatilityOutcome> {
    let mut rng = Rng::new(seed);
    let returns = synth_vol_returns(spec, &mut rng);
    let squared: Vec<f64> = returns.iter().map(|r| r * r).collect();
    let split = squared.len() * 7 / 10;

    // Normalize by the training mean so the sequences are unit scale.
    let m2 = squared[..split].iter().sum::<f64>() / split as f64;
    let xs: Vec<f64> = squared.iter().map(|s| s / m2).collect();

    let seq_len = 40;
    let train = chop(&xs[..split], seq_len);
    let test = chop(&xs[split..], seq_len);

    let mut cfg = TrainConfig::basic(0.1, epochs, seed);
    cfg.batch_size = 8;
    let mut model_rng = Rng::new(seed).split(1);
    let cell = LstmCell::init(1, hidden, &mut model_rng);
    let readout = AffineMap::init(1, hidden, &mut model_rng);
    let (cell, readout, _) = lstm_train(&cell, &readout, &train, &cfg, &mut model_rng)?;

    let mut lstm_se = 0.0;
    let mut flat_se = 0.0;
    let mut prev_se = 0.0;
    let mut count = 0usize;
    for pair in &test {
        let outputs = lstm_forward(&cell, &pair.inputs, &readout)?;
        for t in 0..pair.inputs.len() {
            let target = pair.targets[t][0];
            lstm_se += (outputs[t][0] - target).powi(2);
            flat_se += (1.0 - target).powi(2); // the normalized train mean is 1
            prev_se += (pair.inputs[t][0] - target).powi(2);
            count += 1;
        }
    }
    let n = count as f64;
    Ok(VolatilityOutcome {
        lstm_mse: lstm_se / n,
        flat_mse: flat_se / n,
        previous_mse: prev_se / n,
    })
}
