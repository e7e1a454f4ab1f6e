//! Choosing λ, depth, and width: time-split cross-validation, regularization
//! paths with warm starts, SURE risk estimates, and the closed-form check
//! that input dropout on a linear layer marginalizes to a scaled ridge
//! problem with penalty matrix `Γ = diag(XᵀX)^½`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{init_weights, DeepNet, InitScheme, NetworkSpec};
use crate::numerics::{solve_spd, Cholesky, Matrix, Rng, Vector};
use crate::training::{loss_value, objective, predict_served, sgd_train, Dataset, Loss, TrainConfig};

/// Disjoint, contiguous, equal-length (±1) row ranges in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeSplit {
    folds: Vec<std::ops::Range<usize>>,
}

impl TimeSplit {
    pub fn contiguous(n_rows: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("fold count {k} < 2")));
        }
        if n_rows < 2 * k {
            return Err(Error::InvalidArgument(format!(
                "{n_rows} rows cannot fill {k} folds of at least 2"
            )));
        }
        let base = n_rows / k;
        let extra = n_rows % k;
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            folds.push(start..start + len);
            start += len;
        }
        Ok(Self { folds })
    }

    pub fn folds(&self) -> &[std::ops::Range<usize>] {
        &self.folds
    }
}

/// One (candidate, fold) fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CvRecord {
    pub spec_index: usize,
    pub fold: usize,
    pub lambda: f64,
    pub train_objective: f64,
    pub validation_loss: f64,
}

/// Mean validation loss per (spec, λ) candidate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CvSummary {
    pub spec_index: usize,
    pub lambda: f64,
    pub param_count: usize,
    pub mean_validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub records: Vec<CvRecord>,
    pub table: Vec<CvSummary>,
    pub winner_spec: usize,
    pub winner_lambda: f64,
}

/// K-fold cross-validation over a (spec × λ) candidate grid.
///
/// Folds are contiguous time blocks when the dataset carries a time index,
/// random otherwise. Each candidate trains on k−1 folds and scores mean
/// validation loss on the held-out fold, rotating. The winner minimizes
/// mean validation loss; ties fall to fewer parameters, then larger λ,
/// then listed order. Candidate fits run in parallel and merge in
/// (candidate, fold) order, so the outcome is thread-count-invariant.
pub fn cross_validate(
    specs: &[NetworkSpec],
    lambdas: &[f64],
    data: &Dataset,
    k: usize,
    cfg: &TrainConfig,
) -> Result<CvOutcome> {
    if specs.is_empty() || lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty candidate list".into()));
    }
    cfg.validate()?;
    let split = TimeSplit::contiguous(data.len(), k)?;

    // Row order: identity for time-indexed data, seeded shuffle otherwise.
    let mut rows: Vec<usize> = (0..data.len()).collect();
    if data.time_index.is_none() {
        let mut fold_rng = Rng::new(cfg.seed).split(u64::MAX);
        fold_rng.shuffle(&mut rows);
    }

    let base_rng = Rng::new(cfg.seed);
    let mut jobs = Vec::new();
    for (ci, spec) in specs.iter().enumerate() {
        for &lambda in lambdas {
            for (f, fold) in split.folds().iter().enumerate() {
                jobs.push((ci, lambda, f, fold.clone(), spec.clone()));
            }
        }
    }

    let records: Result<Vec<CvRecord>> = jobs
        .par_iter()
        .map(|(ci, lambda, f, fold, spec)| {
            let train_idx: Vec<usize> = rows
                .iter()
                .enumerate()
                .filter(|(pos, _)| !fold.contains(pos))
                .map(|(_, &r)| r)
                .collect();
            let val_idx: Vec<usize> = rows[fold.clone()].to_vec();
            let train = data.subset(&train_idx);
            let val = data.subset(&val_idx);

            let mut candidate_cfg = cfg.clone();
            candidate_cfg.lambda = *lambda;
            // Stream keyed on candidate content, not list position, so the
            // winner is invariant to candidate permutation.
            let mut rng = base_rng.split(candidate_stream(spec, *lambda, *f));
            let net = init_weights(spec, &mut rng, InitScheme::Glorot)?;
            let (trained, _) = sgd_train(&net, &train, &candidate_cfg, &mut rng)?;
            Ok(CvRecord {
                spec_index: *ci,
                fold: *f,
                lambda: *lambda,
                train_objective: objective(&trained, &train, &candidate_cfg)?,
                validation_loss: mean_loss(&trained, &val, cfg.loss, cfg.dropout_keep)?,
            })
        })
        .collect();
    let records = records?;

    let mut table = Vec::new();
    for (ci, spec) in specs.iter().enumerate() {
        for &lambda in lambdas {
            let losses: Vec<f64> = records
                .iter()
                .filter(|r| r.spec_index == ci && r.lambda == lambda)
                .map(|r| r.validation_loss)
                .collect();
            table.push(CvSummary {
                spec_index: ci,
                lambda,
                param_count: spec.param_count(),
                mean_validation_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            });
        }
    }

    let mut winner = &table[0];
    for cand in &table[1..] {
        let better = cand.mean_validation_loss < winner.mean_validation_loss
            || (cand.mean_validation_loss == winner.mean_validation_loss
                && (cand.param_count < winner.param_count
                    || (cand.param_count == winner.param_count && cand.lambda > winner.lambda)));
        if better {
            winner = cand;
        }
    }

    Ok(CvOutcome {
        winner_spec: winner.spec_index,
        winner_lambda: winner.lambda,
        records,
        table,
    })
}

// FNV-1a over the candidate's structure; stable across platforms and
// releases, unlike the stdlib hasher.
fn candidate_stream(spec: &NetworkSpec, lambda: f64, fold: usize) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for byte in x.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(spec.input_dim as u64);
    eat(spec.output_dim as u64);
    for (&n, a) in spec.hidden_sizes.iter().zip(&spec.activations) {
        eat(n as u64);
        eat(a.name().len() as u64);
        eat(a.name().as_bytes().iter().map(|&b| b as u64).sum());
    }
    eat(lambda.to_bits());
    eat(fold as u64);
    h
}

/// Mean per-row loss of a served predictor on a dataset.
pub(crate) fn mean_loss(
    net: &DeepNet,
    data: &Dataset,
    loss: Loss,
    dropout_keep: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let y_hat = predict_served(net, &data.inputs.row_vector(i), dropout_keep)?;
        total += loss_value(loss, &data.targets.row_vector(i), &y_hat)?;
    }
    Ok(total / data.len() as f64)
}

/// Writes the selection table as CSV:
/// `candidate,fold,lambda,train_objective,validation_loss`.
pub fn write_selection_csv<W: Write>(w: &mut W, records: &[CvRecord]) -> Result<()> {
    writeln!(w, "candidate,fold,lambda,train_objective,validation_loss")?;
    for r in records {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e}",
            r.spec_index, r.fold, r.lambda, r.train_objective, r.validation_loss
        )?;
    }
    Ok(())
}

/// In-sample error, degrees of freedom, and the risk estimate
/// `err_in + 2 σ² df`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SureEstimate {
    pub err_in: f64,
    pub df: f64,
    pub sigma2: f64,
    pub err_hat: f64,
}

/// Ridge fit `w = (XᵀX + λI)⁻¹ Xᵀ y` (λ = 0 is OLS on a full-rank design).
pub fn ridge_fit(x: &Matrix, y: &Vector, lambda: f64) -> Result<Vector> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda {lambda} < 0")));
    }
    let mut a = x.gram();
    for i in 0..a.rows() {
        let v = a.get(i, i) + lambda;
        a.set(i, i, v);
    }
    let b = x.transpose_matvec(y)?;
    solve_spd(&a, &b)
}

/// SURE for the ridge smoother `Ŷ = X (XᵀX + λI)⁻¹ Xᵀ Y`.
///
/// Degrees of freedom are the exact trace of the smoother, computed by
/// solving against the factored normal matrix row by row.
pub fn sure_ridge(x: &Matrix, y: &Vector, lambda: f64, sigma2: f64) -> Result<SureEstimate> {
    if sigma2 <= 0.0 {
        return Err(Error::InvalidArgument(format!("sigma2 {sigma2} must be positive")));
    }
    if y.len() != x.rows() {
        return Err(Error::Shape("target length vs design rows".into()));
    }
    let w = ridge_fit(x, y, lambda)?;
    let y_hat = x.matvec(&w)?;
    let err_in: f64 = y
        .as_slice()
        .iter()
        .zip(y_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let mut a = x.gram();
    for i in 0..a.rows() {
        let v = a.get(i, i) + lambda;
        a.set(i, i, v);
    }
    let factor = Cholesky::new(&a)?;
    let mut df = 0.0;
    for i in 0..x.rows() {
        let xi = x.row_vector(i);
        let zi = factor.solve(&xi)?;
        df += xi.dot(&zi); // S_ii = xᵢᵀ (XᵀX + λI)⁻¹ xᵢ
    }

    Ok(SureEstimate { err_in, df, sigma2, err_hat: err_in + 2.0 * sigma2 * df })
}

/// SURE for a trained net via target perturbation: each training target is
/// nudged by `eps`, the net is refit from the same seed, and the slope of
/// its own fitted value approximates `∂Ŷᵢ/∂Yᵢ`. Approximate by
/// construction, and T+1 fits deep; scalar targets only.
pub fn sure_net_perturbation(
    spec: &NetworkSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    sigma2: f64,
    eps: f64,
) -> Result<SureEstimate> {
    if data.targets.cols() != 1 {
        return Err(Error::InvalidArgument(
            "degrees-of-freedom estimation supports scalar targets only".into(),
        ));
    }
    if sigma2 <= 0.0 || eps <= 0.0 {
        return Err(Error::InvalidArgument("sigma2 and eps must be positive".into()));
    }

    let fit = |d: &Dataset| -> Result<Vec<f64>> {
        let mut rng = Rng::new(cfg.seed);
        let net = init_weights(spec, &mut rng, InitScheme::Glorot)?;
        let (trained, _) = sgd_train(&net, d, cfg, &mut rng)?;
        (0..d.len())
            .map(|i| Ok(predict_served(&trained, &d.inputs.row_vector(i), cfg.dropout_keep)?[0]))
            .collect()
    };

    let base = fit(data)?;
    let err_in: f64 = (0..data.len())
        .map(|i| {
            let d = data.targets.get(i, 0) - base[i];
            d * d
        })
        .sum();

    // Collect in row order, then reduce sequentially, so the estimate is
    // identical at any thread count.
    let slopes: Result<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut bumped = data.clone();
            let y = bumped.targets.get(i, 0);
            bumped.targets.set(i, 0, y + eps);
            let refit = fit(&bumped)?;
            Ok((refit[i] - base[i]) / eps)
        })
        .collect();
    let df: f64 = slopes?.iter().sum();

    Ok(SureEstimate { err_in, df, sigma2, err_hat: err_in + 2.0 * sigma2 * df })
}

/// Outcome of the dropout-vs-ridge identity check on one linear layer.
#[derive(Debug, Clone)]
pub struct RidgeEquivalenceReport {
    pub keep_prob: f64,
    /// Diagonal of `(diag(XᵀX))^½`.
    pub gamma: Vector,
    pub w_marginal: Vector,
    pub w_closed: Vector,
    pub discrepancy: f64,
}

/// Closed-form minimizer of `‖Y − pWX‖² + p(1−p)‖ΓW‖²`:
/// `(p XᵀX + (1−p) Γ²) w = Xᵀ y`. Zero columns carry no signal and no
/// penalty direction; their weights are fixed to 0.
pub fn dropout_ridge_closed_form(x: &Matrix, y: &Vector, p: f64) -> Result<Vector> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep probability {p} outside (0, 1]")));
    }
    let gram = x.gram();
    let live: Vec<usize> = (0..x.cols()).filter(|&j| gram.get(j, j) > 0.0).collect();
    let n = live.len();
    if n == 0 {
        return Err(Error::InvalidArgument("design matrix is entirely zero".into()));
    }
    let mut a = Matrix::zeros(n, n);
    for (ri, &i) in live.iter().enumerate() {
        for (rj, &j) in live.iter().enumerate() {
            let mut v = p * gram.get(i, j);
            if ri == rj {
                v += (1.0 - p) * gram.get(i, i);
            }
            a.set(ri, rj, v);
        }
    }
    let xty = x.transpose_matvec(y)?;
    let b = Vector::from_vec(live.iter().map(|&j| xty[j]).collect())?;
    let w_live = solve_spd(&a, &b)?;
    let mut w = Vector::zeros(x.cols());
    for (ri, &j) in live.iter().enumerate() {
        w[j] = w_live[ri];
    }
    Ok(w)
}

/// Draws `n_mc` Bernoulli masks of the design, minimizes the empirical
/// marginal objective `(1/n) Σ ‖Y − W(D⋆X)‖²` exactly through its normal
/// equations, and compares against [`dropout_ridge_closed_form`].
pub fn dropout_ridge_check(
    x: &Matrix,
    y: &Vector,
    p: f64,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<RidgeEquivalenceReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("keep probability {p} outside (0, 1)")));
    }
    if n_mc == 0 {
        return Err(Error::InvalidArgument("need at least one mask".into()));
    }
    if y.len() != x.rows() {
        return Err(Error::Shape("target length vs design rows".into()));
    }
    let t = x.rows();
    let cols = x.cols();
    let gram = x.gram();
    let gamma = Vector::from_vec((0..cols).map(|j| gram.get(j, j).sqrt()).collect())?;
    let live: Vec<usize> = (0..cols).filter(|&j| gram.get(j, j) > 0.0).collect();

    // Accumulate Σ_m X̃ᵀX̃ and Σ_m X̃ᵀy over masked designs X̃ = D ⋆ X.
    let n = live.len();
    let mut a_sum = Matrix::zeros(n, n);
    let mut b_sum = Vector::zeros(n);
    let mut masked = vec![0.0; n];
    for _ in 0..n_mc {
        for row in 0..t {
            let xr = x.row(row);
            for (slot, &j) in live.iter().enumerate() {
                masked[slot] = if rng.bernoulli(p) { xr[j] } else { 0.0 };
            }
            for i in 0..n {
                let mi = masked[i];
                if mi == 0.0 {
                    continue;
                }
                b_sum[i] += mi * y[row];
                for j in 0..n {
                    let v = a_sum.get(i, j) + mi * masked[j];
                    a_sum.set(i, j, v);
                }
            }
        }
    }
    a_sum = a_sum.scale(1.0 / n_mc as f64);
    let b_sum = b_sum.scale(1.0 / n_mc as f64);

    let w_live = solve_spd(&a_sum, &b_sum)?;
    let mut w_marginal = Vector::zeros(cols);
    for (slot, &j) in live.iter().enumerate() {
        w_marginal[j] = w_live[slot];
    }

    let w_closed = dropout_ridge_closed_form(x, y, p)?;
    let discrepancy = w_marginal.sub(&w_closed)?.norm();
    Ok(RidgeEquivalenceReport { keep_prob: p, gamma, w_marginal, w_closed, discrepancy })
}

/// One grid point of a regularization path.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub train_objective: f64,
    pub validation_loss: f64,
}

/// Trains one model per λ along an ascending grid, warm-starting each fit
/// from the previous one. Returns the path and the λ minimizing validation
/// loss (largest such λ on ties).
pub fn regularization_path(
    spec: &NetworkSpec,
    train: &Dataset,
    validation: &Dataset,
    lambdas: &[f64],
    cfg: &TrainConfig,
) -> Result<(Vec<PathPoint>, f64)> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("lambda grid must be sorted ascending".into()));
    }
    cfg.validate()?;

    let mut rng = Rng::new(cfg.seed);
    let mut net = init_weights(spec, &mut rng, InitScheme::Glorot)?;
    let mut path: Vec<PathPoint> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut step_cfg = cfg.clone();
        step_cfg.lambda = lambda;
        let (trained, _) = sgd_train(&net, train, &step_cfg, &mut rng)?;
        path.push(PathPoint {
            lambda,
            train_objective: objective(&trained, train, &step_cfg)?,
            validation_loss: mean_loss(&trained, validation, cfg.loss, cfg.dropout_keep)?,
        });
        net = trained;
    }

    let mut best = &path[0];
    for point in &path[1..] {
        if point.validation_loss <= best.validation_loss {
            best = point; // ties fall to the larger λ
        }
    }
    let best_lambda = best.lambda;
    Ok((path, best_lambda))
}
