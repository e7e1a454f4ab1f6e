//! Synthetic factor-market generator: a stand-in return panel with known
//! communal structure, so rankings and trackers can be verified against
//! planted ground truth.

use anyhow::bail;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use deepindex_core::indexing::{IndexSeries, ReturnsPanel};
use deepindex_core::numerics::{Matrix, Rng, Vector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexWeighting {
    #[default]
    Equal,
    /// Fixed lognormal weights, a proxy for capitalization weighting.
    CapProxy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMarketSpec {
    pub n_assets: usize,
    pub periods: usize,
    #[serde(default = "default_factors")]
    pub n_factors: usize,
    /// One volatility per factor (daily return scale).
    #[serde(default = "default_factor_vols")]
    pub factor_vols: Vec<f64>,
    /// Idiosyncratic noise scale shared by all assets.
    #[serde(default = "default_idio")]
    pub idio_vol: f64,
    /// Fraction of assets that are individualistic (noise-driven).
    #[serde(default = "default_fraction")]
    pub individualistic_fraction: f64,
    /// Factor loading of the individualistic group (communal assets load
    /// 1.0); zero makes them pure noise.
    #[serde(default)]
    pub individualistic_loading: f64,
    /// Multiplier on `idio_vol` for the individualistic group.
    #[serde(default = "default_idio_scale")]
    pub individualistic_idio_scale: f64,
    #[serde(default)]
    pub weighting: IndexWeighting,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
}

fn default_idio_scale() -> f64 {
    1.0
}

fn default_factors() -> usize {
    1
}

fn default_factor_vols() -> Vec<f64> {
    vec![0.01]
}

fn default_idio() -> f64 {
    0.005
}

fn default_fraction() -> f64 {
    0.5
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).unwrap()
}

impl SyntheticMarketSpec {
    pub fn new(n_assets: usize, periods: usize) -> Self {
        Self {
            n_assets,
            periods,
            n_factors: default_factors(),
            factor_vols: default_factor_vols(),
            idio_vol: default_idio(),
            individualistic_fraction: default_fraction(),
            individualistic_loading: 0.0,
            individualistic_idio_scale: default_idio_scale(),
            weighting: IndexWeighting::default(),
            start_date: default_start(),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n_assets == 0 || self.periods < 2 {
            bail!("need at least one asset and two periods");
        }
        if self.n_factors == 0 || self.n_factors >= self.n_assets {
            bail!("factor count must sit in [1, n_assets)");
        }
        if self.factor_vols.len() != self.n_factors {
            bail!(
                "{} factor volatilities for {} factors",
                self.factor_vols.len(),
                self.n_factors
            );
        }
        if self.factor_vols.iter().any(|v| *v <= 0.0) {
            bail!("factor volatilities must be positive");
        }
        if self.idio_vol < 0.0 {
            bail!("idiosyncratic volatility must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.individualistic_fraction) {
            bail!("individualistic fraction outside [0, 1]");
        }
        if self.individualistic_loading < 0.0 || self.individualistic_idio_scale <= 0.0 {
            bail!("individualistic loading must be nonnegative and its noise scale positive");
        }
        Ok(())
    }

    /// Number of communal (factor-loaded) assets.
    pub fn n_communal(&self) -> usize {
        self.n_assets - (self.n_assets as f64 * self.individualistic_fraction).round() as usize
    }
}

/// A generated market: the panel, the tracked index, the planted factor
/// loadings (`N × f`), and the index weights.
#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub panel: ReturnsPanel,
    pub index: IndexSeries,
    pub loadings: Matrix,
    pub index_weights: Vector,
}

/// Draws `r_{t,j} = Σ_f β_{j,f} F_{t,f} + σ ε_{t,j}` with Gaussian factors
/// and noise. The first `n_communal` assets load 1.0 on one factor each
/// (round-robin); the rest load zero everywhere. Deterministic under the
/// generator state.
pub fn synth_market(spec: &SyntheticMarketSpec, rng: &mut Rng) -> anyhow::Result<SyntheticMarket> {
    spec.validate()?;
    let n = spec.n_assets;
    let t = spec.periods;
    let communal = spec.n_communal();

    let mut loadings = Matrix::zeros(n, spec.n_factors);
    for j in 0..n {
        let factor = j % spec.n_factors;
        let beta = if j < communal { 1.0 } else { spec.individualistic_loading };
        if beta != 0.0 {
            loadings.set(j, factor, beta);
        }
    }

    let mut values = Matrix::zeros(t, n);
    for i in 0..t {
        let factors: Vec<f64> =
            spec.factor_vols.iter().map(|v| v * rng.normal()).collect();
        let row = values.row_mut(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let mut r = 0.0;
            for (f, fv) in factors.iter().enumerate() {
                r += loadings.get(j, f) * fv;
            }
            if spec.idio_vol > 0.0 {
                let scale =
                    if j < communal { 1.0 } else { spec.individualistic_idio_scale };
                r += scale * spec.idio_vol * rng.normal();
            }
            *slot = r;
        }
    }

    let index_weights = match spec.weighting {
        IndexWeighting::Equal => Vector::filled(n, 1.0 / n as f64),
        IndexWeighting::CapProxy => {
            let raw: Vec<f64> = (0..n).map(|_| (0.5 * rng.normal()).exp()).collect();
            let total: f64 = raw.iter().sum();
            Vector::from_vec(raw.into_iter().map(|w| w / total).collect())?
        }
    };

    let dates: Vec<NaiveDate> =
        (0..t).map(|i| spec.start_date + chrono::Duration::days(i as i64)).collect();
    let assets: Vec<String> = (0..n).map(|j| format!("A{j:03}")).collect();
    let panel = ReturnsPanel::new(dates, assets, values, None)?;
    let index = IndexSeries::weighted(&panel, &index_weights)?;

    Ok(SyntheticMarket { panel, index, loadings, index_weights })
}

/// Writes the planted loadings as CSV (`asset,factor_0,...`).
pub fn write_loadings_csv<W: std::io::Write>(
    w: &mut W,
    market: &SyntheticMarket,
) -> anyhow::Result<()> {
    write!(w, "asset")?;
    for f in 0..market.loadings.cols() {
        write!(w, ",factor_{f}")?;
    }
    writeln!(w, ",index_weight")?;
    for (j, asset) in market.panel.assets().iter().enumerate() {
        write!(w, "{asset}")?;
        for f in 0..market.loadings.cols() {
            write!(w, ",{:.16e}", market.loadings.get(j, f))?;
        }
        writeln!(w, ",{:.16e}", market.index_weights[j])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use deepindex_core::numerics::svd;

    #[test]
    fn zero_noise_equal_loadings_collapse_to_the_index() {
        let mut spec = SyntheticMarketSpec::new(6, 50);
        spec.idio_vol = 0.0;
        spec.individualistic_fraction = 0.0;
        let market = synth_market(&spec, &mut Rng::new(5)).unwrap();
        // Every asset is the factor itself, and so is the equal-weight index.
        for i in 0..50 {
            let row = market.panel.values().row(i);
            for j in 1..6 {
                assert_eq!(row[j], row[0]);
            }
            assert!((market.index.returns()[i] - row[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_panel_bit_for_bit() {
        let spec = SyntheticMarketSpec::new(10, 30);
        let a = synth_market(&spec, &mut Rng::new(9)).unwrap();
        let b = synth_market(&spec, &mut Rng::new(9)).unwrap();
        assert_eq!(a.panel.values().data(), b.panel.values().data());
        assert_eq!(a.index.returns(), b.index.returns());
    }

    #[test]
    fn one_factor_panel_has_a_dominant_eigenvalue() {
        // With loadings β = 1 on half the assets, the top sample-covariance
        // eigenvalue should be close to N_communal σ_F² + σ_ε².
        let mut spec = SyntheticMarketSpec::new(20, 2000);
        spec.individualistic_fraction = 0.5;
        spec.factor_vols = vec![0.02];
        spec.idio_vol = 0.005;
        let market = synth_market(&spec, &mut Rng::new(11)).unwrap();

        let values = market.panel.values();
        let t = values.rows();
        // Center columns, take singular values of the centered panel.
        let mut centered = values.clone();
        for j in 0..centered.cols() {
            let mean: f64 = (0..t).map(|i| centered.get(i, j)).sum::<f64>() / t as f64;
            for i in 0..t {
                let v = centered.get(i, j) - mean;
                centered.set(i, j, v);
            }
        }
        let sv = svd(&centered).singular_values;
        let top_ev = sv[0] * sv[0] / (t as f64 - 1.0);
        let want = 10.0 * 0.02f64.powi(2) + 0.005f64.powi(2);
        assert!(
            (top_ev - want).abs() < 0.3 * want,
            "top eigenvalue {top_ev} vs expected {want}"
        );
        // And the rest are an order of magnitude smaller.
        let second = sv[1] * sv[1] / (t as f64 - 1.0);
        assert!(second < 0.1 * top_ev, "second {second} vs top {top_ev}");
    }

    #[test]
    fn spec_validation_catches_inconsistencies() {
        let mut spec = SyntheticMarketSpec::new(5, 50);
        spec.factor_vols = vec![0.01, 0.02];
        assert!(spec.validate().is_err());
        let mut spec = SyntheticMarketSpec::new(5, 50);
        spec.individualistic_fraction = 1.5;
        assert!(spec.validate().is_err());
        assert!(SyntheticMarketSpec::new(0, 50).validate().is_err());
    }

    #[test]
    fn cap_proxy_weights_are_positive_and_normalized() {
        let mut spec = SyntheticMarketSpec::new(12, 20);
        spec.weighting = IndexWeighting::CapProxy;
        let market = synth_market(&spec, &mut Rng::new(3)).unwrap();
        let sum: f64 = market.index_weights.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(market.index_weights.as_slice().iter().all(|&w| w > 0.0));
    }
}
