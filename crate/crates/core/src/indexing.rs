//! Index replication from a communal-information basis: rank assets with
//! the auto-encoder, hold the top names equally weighted, or train a deep
//! net mapping the top+bottom basis returns to the index return, then
//! compare cumulative tracking in and out of sample.

use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;

use crate::autoencoder::{communal_rank, train_autoencoder, AutoencoderSpec, CommunalRanking,
    TrainedAutoencoder};
use crate::error::{Error, Result};
use crate::network::{init_weights, DeepNet, InitScheme, NetworkSpec};
use crate::numerics::{Matrix, Rng, Vector};
use crate::training::{predict_served, sgd_train, Dataset, TrainConfig};

/// Time-indexed panel of simple returns, one column per asset.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    values: Matrix,
    prices: Option<Matrix>,
}

impl ReturnsPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        values: Matrix,
        prices: Option<Matrix>,
    ) -> Result<Self> {
        if dates.is_empty() || assets.is_empty() {
            return Err(Error::InvalidArgument("panel needs dates and assets".into()));
        }
        if values.rows() != dates.len() {
            return Err(Error::Shape(format!(
                "{} dates vs {} return rows",
                dates.len(),
                values.rows()
            )));
        }
        if values.cols() != assets.len() {
            return Err(Error::Shape(format!(
                "{} assets vs {} return columns",
                assets.len(),
                values.cols()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("dates must be strictly increasing".into()));
        }
        if values.data().iter().any(|&r| r <= -1.0) {
            return Err(Error::InvalidArgument("returns must exceed -1".into()));
        }
        if let Some(p) = &prices {
            if p.rows() != dates.len() || p.cols() != assets.len() {
                return Err(Error::Shape("price block shape".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for a in &assets {
            if a.is_empty() || a.contains([',', '"', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!(
                    "asset id '{a}' cannot appear in CSV output"
                )));
            }
            if !seen.insert(a.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate asset id '{a}'")));
            }
        }
        Ok(Self { dates, assets, values, prices })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn prices(&self) -> Option<&Matrix> {
        self.prices.as_ref()
    }

    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == id)
    }

    /// Row range covered by a date window (inclusive bounds).
    pub fn window_rows(&self, window: &Window) -> Result<std::ops::Range<usize>> {
        let start = self.dates.partition_point(|d| *d < window.start);
        let end = self.dates.partition_point(|d| *d <= window.end);
        if start >= end {
            return Err(Error::InvalidArgument(format!(
                "window {} covers no panel dates",
                window.label
            )));
        }
        Ok(start..end)
    }

    /// The panel restricted to a window.
    pub fn slice(&self, window: &Window) -> Result<ReturnsPanel> {
        let rows = self.window_rows(window)?;
        let take = |m: &Matrix| {
            let mut out = Matrix::zeros(rows.len(), m.cols());
            for (dst, src) in rows.clone().enumerate() {
                out.row_mut(dst).copy_from_slice(m.row(src));
            }
            out
        };
        Ok(ReturnsPanel {
            dates: self.dates[rows.clone()].to_vec(),
            assets: self.assets.clone(),
            values: take(&self.values),
            prices: self.prices.as_ref().map(take),
        })
    }

    /// Writes the panel as CSV (`date,ASSET,...`), 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "date")?;
        for a in &self.assets {
            write!(w, ",{a}")?;
        }
        writeln!(w)?;
        for (i, d) in self.dates.iter().enumerate() {
            write!(w, "{}", d.format("%Y-%m-%d"))?;
            for v in self.values.row(i) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Per-period index returns aligned to a panel's dates.
#[derive(Debug, Clone)]
pub struct IndexSeries {
    dates: Vec<NaiveDate>,
    returns: Vec<f64>,
}

impl IndexSeries {
    pub fn from_returns(dates: Vec<NaiveDate>, returns: Vec<f64>) -> Result<Self> {
        if dates.len() != returns.len() {
            return Err(Error::Shape("index dates vs returns".into()));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("dates must be strictly increasing".into()));
        }
        if returns.iter().any(|r| !r.is_finite() || *r <= -1.0) {
            return Err(Error::InvalidArgument("index returns must be finite and exceed -1".into()));
        }
        Ok(Self { dates, returns })
    }

    /// Builds returns from a level series; the first date carries no return
    /// and is dropped.
    pub fn from_levels(dates: Vec<NaiveDate>, levels: Vec<f64>) -> Result<Self> {
        if dates.len() != levels.len() || dates.len() < 2 {
            return Err(Error::InvalidArgument("need at least two index levels".into()));
        }
        if levels.iter().any(|&l| l.is_nan() || l <= 0.0) {
            return Err(Error::InvalidArgument("index levels must be positive".into()));
        }
        let returns: Vec<f64> = levels.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
        Self::from_returns(dates[1..].to_vec(), returns)
    }

    /// Weighted sum of panel columns with fixed weights.
    pub fn weighted(panel: &ReturnsPanel, weights: &Vector) -> Result<Self> {
        if weights.len() != panel.n_assets() {
            return Err(Error::Shape("weight length vs panel width".into()));
        }
        let returns: Vec<f64> = (0..panel.n_periods())
            .map(|i| {
                panel
                    .values
                    .row(i)
                    .iter()
                    .zip(weights.as_slice())
                    .map(|(r, w)| r * w)
                    .sum()
            })
            .collect();
        Self::from_returns(panel.dates.clone(), returns)
    }

    /// Equal-weighted sum of all panel columns.
    pub fn equal_weighted(panel: &ReturnsPanel) -> Result<Self> {
        let n = panel.n_assets() as f64;
        Self::weighted(panel, &Vector::filled(panel.n_assets(), 1.0 / n))
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    /// Returns over a window, which must be covered by the series.
    pub fn window_returns(&self, window: &Window) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
        let start = self.dates.partition_point(|d| *d < window.start);
        let end = self.dates.partition_point(|d| *d <= window.end);
        if start >= end {
            return Err(Error::InvalidArgument(format!(
                "window {} covers no index dates",
                window.label
            )));
        }
        Ok((self.dates[start..end].to_vec(), self.returns[start..end].to_vec()))
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "date,return")?;
        for (d, r) in self.dates.iter().zip(&self.returns) {
            writeln!(w, "{},{r:.16e}", d.format("%Y-%m-%d"))?;
        }
        Ok(())
    }
}

/// A labeled inclusive date range.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Window {
    pub fn new(label: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidArgument("window start after end".into()));
        }
        Ok(Self { label: label.into(), start, end })
    }
}

/// The k most communal and k most individualistic asset ids.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct BasisSelection {
    pub top: Vec<String>,
    pub bottom: Vec<String>,
    pub k: usize,
}

impl BasisSelection {
    /// Top then bottom, the input order of the deep tracker.
    pub fn combined(&self) -> Vec<String> {
        self.top.iter().chain(self.bottom.iter()).cloned().collect()
    }
}

/// Trains the auto-encoder on the panel, ranks assets by reconstruction
/// proximity, and picks the top-k (most communal) and bottom-k (most
/// individualistic) of the eligible assets.
pub fn select_basis(
    panel: &ReturnsPanel,
    ae_spec: &AutoencoderSpec,
    k: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(BasisSelection, CommunalRanking, TrainedAutoencoder)> {
    if k == 0 {
        return Err(Error::InvalidArgument("basis size k must be positive".into()));
    }
    let (ae, _history) = train_autoencoder(ae_spec, &panel.values, cfg, rng)?;
    let ranking = communal_rank(&ae, &panel.values)?;
    let eligible = ranking.order.len() - ranking.excluded.len();
    if 2 * k > eligible {
        return Err(Error::InvalidArgument(format!(
            "k = {k} needs {} eligible assets, have {eligible}",
            2 * k
        )));
    }
    let ranked = &ranking.order[..eligible];
    let top = ranked[..k].iter().map(|&j| panel.assets[j].clone()).collect();
    let bottom = ranked[eligible - k..].iter().map(|&j| panel.assets[j].clone()).collect();
    Ok((BasisSelection { top, bottom, k }, ranking, ae))
}

/// Tracking comparison over one window: cumulative paths (leading 1.0),
/// the stdev of per-period return differences, mean absolute deviation,
/// and the terminal level gap.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TrackerReport {
    pub label: String,
    pub model: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub dates: Vec<NaiveDate>,
    /// Cumulative tracker levels; entry 0 is the 1.0 base before the first
    /// window date.
    pub tracker_path: Vec<f64>,
    pub index_path: Vec<f64>,
    pub tracking_error: f64,
    pub mean_abs_deviation: f64,
    pub terminal_gap: f64,
    /// Periods whose tracker return magnitude exceeded 50%; a flag for
    /// implied leverage in the unconstrained deep tracker.
    pub extreme_outputs: usize,
    /// Set when the model was evaluated without any training epochs.
    pub untrained: bool,
}

/// A tracker that can be evaluated on any window.
#[derive(Debug, Clone)]
pub enum TrackerModel<'a> {
    /// Equal-weighted portfolio over a fixed basis.
    EqualWeight { basis: &'a [String] },
    /// Deep net mapping basis returns to the index return.
    Deep { net: &'a DeepNet, basis: &'a [String], dropout_keep: f64, untrained: bool },
}

impl TrackerModel<'_> {
    fn name(&self) -> &'static str {
        match self {
            TrackerModel::EqualWeight { .. } => "equal_weight",
            TrackerModel::Deep { .. } => "dfp",
        }
    }
}

fn basis_columns(panel: &ReturnsPanel, basis: &[String]) -> Result<Vec<usize>> {
    basis
        .iter()
        .map(|id| {
            panel
                .asset_index(id)
                .ok_or_else(|| Error::InvalidArgument(format!("asset '{id}' not in panel")))
        })
        .collect()
}

// Equal-weight returns summed in ascending column order, so any
// permutation of the basis set produces bit-identical output.
fn equal_weight_returns(panel: &ReturnsPanel, basis: &[String], rows: std::ops::Range<usize>)
    -> Result<Vec<f64>> {
    let mut cols = basis_columns(panel, basis)?;
    cols.sort_unstable();
    let inv = 1.0 / cols.len() as f64;
    Ok(rows
        .map(|i| {
            let row = panel.values.row(i);
            cols.iter().map(|&j| row[j]).sum::<f64>() * inv
        })
        .collect())
}

fn build_report(
    window: &Window,
    model: &str,
    dates: Vec<NaiveDate>,
    tracker_returns: &[f64],
    index_returns: &[f64],
    untrained: bool,
) -> TrackerReport {
    let n = tracker_returns.len();
    let diffs: Vec<f64> =
        tracker_returns.iter().zip(index_returns).map(|(t, i)| t - i).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let mad = diffs.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    let cumulative = |rets: &[f64]| {
        let mut path = Vec::with_capacity(n + 1);
        path.push(1.0);
        let mut level = 1.0;
        for r in rets {
            level *= 1.0 + r;
            path.push(level);
        }
        path
    };
    let tracker_path = cumulative(tracker_returns);
    let index_path = cumulative(index_returns);
    let terminal_gap = (tracker_path[n] - index_path[n]).abs();
    let extreme_outputs = tracker_returns.iter().filter(|r| r.abs() > 0.5).count();
    TrackerReport {
        label: window.label.clone(),
        model: model.to_string(),
        start: window.start,
        end: window.end,
        dates,
        tracker_path,
        index_path,
        tracking_error: var.sqrt(),
        mean_abs_deviation: mad,
        terminal_gap,
        extreme_outputs,
        untrained,
    }
}

/// Equal-weighted tracker of the index over one window.
pub fn equal_weight_tracker(
    panel: &ReturnsPanel,
    basis: &[String],
    index: &IndexSeries,
    window: &Window,
) -> Result<TrackerReport> {
    if basis.is_empty() {
        return Err(Error::InvalidArgument("empty basis".into()));
    }
    let rows = panel.window_rows(window)?;
    let dates = panel.dates[rows.clone()].to_vec();
    let tracker = equal_weight_returns(panel, basis, rows)?;
    let (index_dates, index_returns) = index.window_returns(window)?;
    if index_dates != dates {
        return Err(Error::InvalidArgument(format!(
            "index dates do not align with panel dates in window {}",
            window.label
        )));
    }
    Ok(build_report(window, "equal_weight", dates, &tracker, &index_returns, false))
}

/// Builds the supervised dataset for the deep tracker: basis returns in,
/// index return out, time-indexed by date.
pub fn dfp_dataset(
    panel: &ReturnsPanel,
    basis: &[String],
    index: &IndexSeries,
) -> Result<Dataset> {
    let cols = basis_columns(panel, basis)?;
    if index.dates != panel.dates {
        return Err(Error::InvalidArgument("index dates do not align with panel dates".into()));
    }
    let t = panel.n_periods();
    let mut inputs = Matrix::zeros(t, cols.len());
    let mut targets = Matrix::zeros(t, 1);
    for i in 0..t {
        let row = panel.values.row(i);
        let dst = inputs.row_mut(i);
        for (slot, &j) in cols.iter().enumerate() {
            dst[slot] = row[j];
        }
        targets.set(i, 0, index.returns[i]);
    }
    let time: Vec<i64> = panel.dates.iter().map(|d| d.num_days_from_ce() as i64).collect();
    Dataset::new(inputs, targets, Some(time))
}

/// Trains the deep tracker: a scalar-output net over the 2k combined basis
/// returns, regressed on the per-period index return.
pub fn train_dfp(
    panel: &ReturnsPanel,
    basis: &BasisSelection,
    index: &IndexSeries,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(DeepNet, Vec<f64>)> {
    let combined = basis.combined();
    if spec.input_dim != combined.len() {
        return Err(Error::Shape(format!(
            "tracker spec input width {} vs basis size {}",
            spec.input_dim,
            combined.len()
        )));
    }
    if spec.output_dim != 1 {
        return Err(Error::Shape("tracker output must be scalar".into()));
    }
    let data = dfp_dataset(panel, &combined, index)?;
    let net = init_weights(spec, rng, InitScheme::Glorot)?;
    sgd_train(&net, &data, cfg, rng)
}

/// Evaluates a tracker on each window (windows may overlap each other or
/// the training period, and may precede it). One report per window, in
/// input order; windows run in parallel and merge deterministically.
pub fn evaluate_tracker(
    model: &TrackerModel,
    panel: &ReturnsPanel,
    index: &IndexSeries,
    windows: &[Window],
) -> Result<Vec<TrackerReport>> {
    windows
        .par_iter()
        .map(|window| {
            let rows = panel.window_rows(window)?;
            let dates = panel.dates[rows.clone()].to_vec();
            let (index_dates, index_returns) = index.window_returns(window)?;
            if index_dates != dates {
                return Err(Error::InvalidArgument(format!(
                    "index dates do not align with panel dates in window {}",
                    window.label
                )));
            }
            let (tracker, untrained) = match model {
                TrackerModel::EqualWeight { basis } => {
                    (equal_weight_returns(panel, basis, rows)?, false)
                }
                TrackerModel::Deep { net, basis, dropout_keep, untrained } => {
                    let cols = basis_columns(panel, basis)?;
                    let mut out = Vec::with_capacity(rows.len());
                    for i in rows {
                        let row = panel.values.row(i);
                        let x = Vector::from_vec(cols.iter().map(|&j| row[j]).collect())?;
                        let y = predict_served(net, &x, *dropout_keep)?;
                        out.push(y[0].max(-0.999_999)); // a return cannot reach -1
                    }
                    (out, *untrained)
                }
            };
            Ok(build_report(window, model.name(), dates, &tracker, &index_returns, untrained))
        })
        .collect()
}

/// Writes one window's paths as CSV: `date,tracker,index` (levels after
/// each date; both series start from 1.0 before the first row).
pub fn write_paths_csv<W: Write>(w: &mut W, report: &TrackerReport) -> Result<()> {
    writeln!(w, "date,tracker,index")?;
    for (i, d) in report.dates.iter().enumerate() {
        writeln!(
            w,
            "{},{:.16e},{:.16e}",
            d.format("%Y-%m-%d"),
            report.tracker_path[i + 1],
            report.index_path[i + 1]
        )?;
    }
    Ok(())
}
