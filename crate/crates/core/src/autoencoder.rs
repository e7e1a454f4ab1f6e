//! Bottleneck auto-encoder trained to reproduce its input, the KL sparsity
//! penalty that keeps it from learning the identity, the PCA baseline, and
//! the communal-information ranking of assets by reconstruction proximity.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{init_weights, Activation, DeepNet, InitScheme, NetworkSpec};
use crate::numerics::{svd, Matrix, Rng, Vector};
use crate::training::{
    apply_update, backward_from_trace, loss_value, Gradients, Loss, TrainConfig,
};

/// Shape and sparsity settings of the auto-encoder.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AutoencoderSpec {
    /// Width of the panel (assets).
    pub input_dim: usize,
    /// Hidden width M, strictly below the input width.
    pub bottleneck: usize,
    /// Hidden activation; sigmoid keeps unit activations rate-like.
    pub activation: Activation,
    /// Target mean activation ρ per hidden unit.
    pub sparsity_rho: f64,
    /// Weight β of the KL sparsity term; 0 disables it.
    pub sparsity_beta: f64,
}

impl AutoencoderSpec {
    /// Sigmoid hidden layer, ρ = 0.01, β = 3.
    pub fn new(input_dim: usize, bottleneck: usize) -> Self {
        Self {
            input_dim,
            bottleneck,
            activation: Activation::Sigmoid,
            sparsity_rho: 0.01,
            sparsity_beta: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bottleneck == 0 || self.bottleneck >= self.input_dim {
            return Err(Error::InvalidArgument(format!(
                "bottleneck {} must sit in [1, {})",
                self.bottleneck, self.input_dim
            )));
        }
        if self.sparsity_beta < 0.0 {
            return Err(Error::InvalidArgument("sparsity weight below zero".into()));
        }
        if self.sparsity_beta > 0.0 {
            if !(self.sparsity_rho > 0.0 && self.sparsity_rho < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "sparsity target {} outside (0, 1)",
                    self.sparsity_rho
                )));
            }
            if self.activation != Activation::Sigmoid {
                return Err(Error::InvalidArgument(
                    "the sparsity penalty needs a rate-like (sigmoid) hidden activation".into(),
                ));
            }
        }
        Ok(())
    }
}

/// KL divergence between Bernoulli rates, `KL(ρ ‖ ρ̂)`. Nonnegative, zero
/// exactly when the rates agree.
pub fn kl_bernoulli(rho: f64, rho_hat: f64) -> f64 {
    let r = rho_hat.clamp(1e-9, 1.0 - 1e-9);
    rho * (rho / r).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - r)).ln()
}

fn kl_grad(rho: f64, rho_hat: f64) -> f64 {
    let r = rho_hat.clamp(1e-6, 1.0 - 1e-6);
    -rho / r + (1.0 - rho) / (1.0 - r)
}

/// A fitted auto-encoder together with the column standardization it was
/// trained under. Constant panel columns cannot be standardized; they are
/// excluded from the net and flagged.
#[derive(Debug, Clone)]
pub struct TrainedAutoencoder {
    pub net: DeepNet,
    /// Per-column mean of the training panel (all columns).
    pub center: Vector,
    /// Per-column standard deviation; 0 marks an excluded column.
    pub scale: Vector,
    /// Panel columns fed to the net, in net input order.
    pub kept: Vec<usize>,
    /// Degenerate (constant) columns, excluded from encoding and ranking.
    pub excluded: Vec<usize>,
    /// Input keep probability used in training; served inputs are scaled
    /// by it.
    pub dropout_keep: f64,
}

impl TrainedAutoencoder {
    /// Reconstructs every row of a panel in original units. Excluded
    /// columns are reproduced as their training-window constant.
    pub fn reconstruct_rows(&self, values: &Matrix) -> Result<Matrix> {
        if values.cols() != self.center.len() {
            return Err(Error::Shape(format!(
                "panel has {} columns, auto-encoder saw {}",
                values.cols(),
                self.center.len()
            )));
        }
        let mut out = Matrix::zeros(values.rows(), values.cols());
        for i in 0..values.rows() {
            let row = values.row(i);
            let std_in = Vector::from_vec(
                self.kept
                    .iter()
                    .map(|&j| (row[j] - self.center[j]) / self.scale[j] * self.dropout_keep)
                    .collect(),
            )?;
            let recon = self.net.predict(&std_in)?;
            let out_row = out.row_mut(i);
            for (slot, &j) in self.kept.iter().enumerate() {
                out_row[j] = recon[slot] * self.scale[j] + self.center[j];
            }
            for &j in &self.excluded {
                out_row[j] = self.center[j];
            }
        }
        Ok(out)
    }
}

fn column_moments(values: &Matrix) -> (Vector, Vector) {
    let t = values.rows() as f64;
    let mut mean = Vector::zeros(values.cols());
    let mut std = Vector::zeros(values.cols());
    for j in 0..values.cols() {
        let col: Vec<f64> = (0..values.rows()).map(|i| values.get(i, j)).collect();
        let m = col.iter().sum::<f64>() / t;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / t;
        mean[j] = m;
        std[j] = var.sqrt();
    }
    (mean, std)
}

/// Trains the two-layer auto-encoder on a returns panel: standardize each
/// column, encode through the bottleneck, decode affinely, and minimize
/// reconstruction error plus `β Σ_j KL(ρ ‖ ρ̂_j)` where `ρ̂_j` is unit j's
/// mean activation over the mini-batch. Returns the fitted wrapper and the
/// per-epoch objective history.
pub fn train_autoencoder(
    spec: &AutoencoderSpec,
    values: &Matrix,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(TrainedAutoencoder, Vec<f64>)> {
    spec.validate()?;
    cfg.validate()?;
    if values.cols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "panel has {} columns, spec expects {}",
            values.cols(),
            spec.input_dim
        )));
    }
    if values.rows() < 2 {
        return Err(Error::InvalidArgument("need at least two panel rows".into()));
    }

    let (center, mut scale) = column_moments(values);
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for j in 0..values.cols() {
        if scale[j] <= 1e-12 * center[j].abs().max(1.0) {
            scale[j] = 0.0;
            excluded.push(j);
        } else {
            kept.push(j);
        }
    }
    if kept.len() <= spec.bottleneck {
        return Err(Error::InvalidArgument(format!(
            "{} usable columns leave no bottleneck below width {}",
            kept.len(),
            spec.bottleneck
        )));
    }

    // Standardized training matrix over kept columns.
    let mut xs = Matrix::zeros(values.rows(), kept.len());
    for i in 0..values.rows() {
        let row = values.row(i);
        let dst = xs.row_mut(i);
        for (slot, &j) in kept.iter().enumerate() {
            dst[slot] = (row[j] - center[j]) / scale[j];
        }
    }

    let net_spec = NetworkSpec::new(
        kept.len(),
        vec![spec.bottleneck],
        vec![spec.activation],
        kept.len(),
    )?;
    let mut net = init_weights(&net_spec, rng, InitScheme::Glorot)?;
    crate::training::ensure_trainable(&net)?;

    let t = xs.rows();
    let batch = cfg.batch_size.min(t);
    let p = cfg.dropout_keep;
    let mut order: Vec<usize> = (0..t).collect();
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
            let rows: Vec<(Vector, Vector)> = chunk
                .iter()
                .map(|&i| {
                    let clean = xs.row_vector(i);
                    let mut fed = clean.clone();
                    if p < 1.0 {
                        for v in fed.as_mut_slice() {
                            if !rng.bernoulli(p) {
                                *v = 0.0;
                            }
                        }
                    }
                    (fed, clean)
                })
                .collect();

            let grad = batch_gradient(&net, &rows, spec)?;
            apply_update(&mut net, &grad, lr, cfg.lambda, &cfg.penalty);
        }

        let objective = autoencoder_objective(&net, &xs, spec, cfg)?;
        if !objective.is_finite() {
            return Err(Error::Diverged { epoch, objective });
        }
        history.push(objective);
    }

    Ok((
        TrainedAutoencoder { net, center, scale, kept, excluded, dropout_keep: p },
        history,
    ))
}

// Gradient of the batch objective
// (1/B) Σ_i ‖x̂ᵢ − xᵢ‖² + β Σ_j KL(ρ ‖ ρ̂_j),  ρ̂_j = (1/B) Σ_i a_ij.
// The KL term enters each row's backward pass as an extra gradient on the
// hidden activation; averaging over rows supplies the 1/B of dρ̂/da.
fn batch_gradient(
    net: &DeepNet,
    rows: &[(Vector, Vector)],
    spec: &AutoencoderSpec,
) -> Result<Gradients> {
    let traces: Result<Vec<_>> =
        rows.par_iter().map(|(fed, _)| Ok(net.forward(fed)?.1)).collect();
    let traces = traces?;

    let b = rows.len() as f64;
    let mut extra = Vector::zeros(spec.bottleneck);
    if spec.sparsity_beta > 0.0 {
        let mut rho_hat = Vector::zeros(spec.bottleneck);
        for trace in &traces {
            rho_hat.axpy(1.0 / b, &trace.layer_outputs[1]);
        }
        for j in 0..spec.bottleneck {
            extra[j] = spec.sparsity_beta * kl_grad(spec.sparsity_rho, rho_hat[j]);
        }
    }

    let per_row: Result<Vec<Gradients>> = traces
        .par_iter()
        .zip(rows)
        .map(|(trace, (_, clean))| {
            backward_from_trace(net, trace, clean, Loss::Mse, Some((0, &extra)))
        })
        .collect();
    let per_row = per_row?;
    let mut sum = Gradients::zeros_like(net);
    for g in &per_row {
        sum.add_in_place(g);
    }
    sum.scale_in_place(1.0 / b);
    Ok(sum)
}

fn autoencoder_objective(
    net: &DeepNet,
    xs: &Matrix,
    spec: &AutoencoderSpec,
    cfg: &TrainConfig,
) -> Result<f64> {
    let t = xs.rows() as f64;
    let mut loss_sum = 0.0;
    let mut rho_hat = Vector::zeros(spec.bottleneck);
    for i in 0..xs.rows() {
        let clean = xs.row_vector(i);
        let fed =
            if cfg.dropout_keep < 1.0 { clean.scale(cfg.dropout_keep) } else { clean.clone() };
        let (y_hat, trace) = net.forward(&fed)?;
        loss_sum += loss_value(Loss::Mse, &clean, &y_hat)?;
        rho_hat.axpy(1.0 / t, &trace.layer_outputs[1]);
    }
    let mut kl = 0.0;
    if spec.sparsity_beta > 0.0 {
        for j in 0..spec.bottleneck {
            kl += kl_bernoulli(spec.sparsity_rho, rho_hat[j]);
        }
    }
    Ok(loss_sum / t + spec.sparsity_beta * kl + cfg.lambda * cfg.penalty.value(net))
}

/// Orthonormal principal-component basis of a centered panel.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    /// `N×rank`, orthonormal columns ordered by decreasing variance.
    pub components: Matrix,
    /// Column means the panel was centered by.
    pub center: Vector,
    pub rank: usize,
    /// All singular values of the centered panel, descending.
    pub singular_values: Vec<f64>,
}

impl PcaBasis {
    /// `W Wᵀ (x − b) + b`.
    pub fn reconstruct(&self, x: &Vector) -> Result<Vector> {
        let centered = x.sub(&self.center)?;
        let coords = self.components.transpose_matvec(&centered)?;
        let back = self.components.matvec(&coords)?;
        back.add(&self.center)
    }

    pub fn reconstruct_rows(&self, values: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(values.rows(), values.cols());
        for i in 0..values.rows() {
            let r = self.reconstruct(&values.row_vector(i))?;
            out.row_mut(i).copy_from_slice(r.as_slice());
        }
        Ok(out)
    }

    /// Total squared reconstruction error over a panel.
    pub fn reconstruction_error(&self, values: &Matrix) -> Result<f64> {
        let recon = self.reconstruct_rows(values)?;
        let mut err = 0.0;
        for i in 0..values.rows() {
            for j in 0..values.cols() {
                let d = values.get(i, j) - recon.get(i, j);
                err += d * d;
            }
        }
        Ok(err)
    }
}

/// Centered SVD factor basis of the panel.
pub fn pca_fit(values: &Matrix, rank: usize) -> Result<PcaBasis> {
    let max_rank = values.rows().min(values.cols());
    if rank > max_rank {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} exceeds min(rows, cols) = {max_rank}"
        )));
    }
    let (center, _) = column_moments(values);
    let mut centered = values.clone();
    for i in 0..centered.rows() {
        let row = centered.row_mut(i);
        for j in 0..row.len() {
            row[j] -= center[j];
        }
    }
    let decomp = svd(&centered);
    let mut components = Matrix::zeros(values.cols(), rank);
    for j in 0..rank {
        for i in 0..values.cols() {
            components.set(i, j, decomp.v.get(i, j));
        }
    }
    Ok(PcaBasis { components, center, rank, singular_values: decomp.singular_values })
}

/// Per-asset reconstruction distances and the communal ordering they induce.
#[derive(Debug, Clone)]
pub struct CommunalRanking {
    /// Normalized reconstruction distance per asset; infinite for assets
    /// that could not be ranked.
    pub distances: Vec<f64>,
    /// Asset indices sorted by ascending distance, ties by index; unranked
    /// assets trail at the end.
    pub order: Vec<usize>,
    /// Assets excluded from ranking (degenerate columns), worst-ranked.
    pub excluded: Vec<usize>,
}

/// Ranks panel columns by how closely the auto-encoder reproduces them:
/// `‖col − col_recon‖₂ / ‖col‖₂`, ascending. The closer, the more communal
/// the asset.
pub fn communal_rank(ae: &TrainedAutoencoder, values: &Matrix) -> Result<CommunalRanking> {
    let recon = ae.reconstruct_rows(values)?;
    let n = values.cols();
    let mut distances = vec![f64::INFINITY; n];
    let mut excluded: Vec<usize> = ae.excluded.clone();
    for j in 0..n {
        if ae.excluded.contains(&j) {
            continue;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..values.rows() {
            let d = values.get(i, j) - recon.get(i, j);
            num += d * d;
            den += values.get(i, j) * values.get(i, j);
        }
        if den == 0.0 {
            excluded.push(j);
            continue;
        }
        distances[j] = (num / den).sqrt();
    }
    excluded.sort_unstable();
    excluded.dedup();

    let mut ranked: Vec<usize> = (0..n).filter(|j| !excluded.contains(j)).collect();
    ranked.sort_by(|&a, &b| distances[a].partial_cmp(&distances[b]).unwrap().then(a.cmp(&b)));
    let mut order = ranked;
    order.extend(excluded.iter().copied());

    Ok(CommunalRanking { distances, order, excluded })
}

/// Writes a ranking as CSV: `rank,asset,distance`.
pub fn write_ranking_csv<W: Write>(
    w: &mut W,
    ranking: &CommunalRanking,
    asset_ids: &[String],
) -> Result<()> {
    writeln!(w, "rank,asset,distance")?;
    for (rank, &j) in ranking.order.iter().enumerate() {
        let d = ranking.distances[j];
        if d.is_finite() {
            writeln!(w, "{},{},{:.16e}", rank + 1, asset_ids[j], d)?;
        } else {
            writeln!(w, "{},{},excluded", rank + 1, asset_ids[j])?;
        }
    }
    Ok(())
}
