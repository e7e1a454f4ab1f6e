//! End-to-end orchestration: load or generate the market, rank assets with
//! the auto-encoder, build the equal-weight tracker, train the deep
//! tracker, evaluate every window, and write all artifacts under the
//! configured output directory.
//!
//! A failed stage leaves its partial artifacts in place together with a
//! `FAILED` marker naming the stage. Given the same config and seed, every
//! artifact byte-reproduces at any thread count.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use deepindex_core::autoencoder::{write_ranking_csv, CommunalRanking, TrainedAutoencoder};
use deepindex_core::indexing::{
    equal_weight_tracker, evaluate_tracker, select_basis, train_dfp, BasisSelection, IndexSeries,
    ReturnsPanel, TrackerModel, TrackerReport, Window,
};
use deepindex_core::network::DeepNet;
use deepindex_core::numerics::{Rng, RNG_ALGORITHM};
use deepindex_core::training::write_history_csv;

use crate::config::{Config, DataSource, IndexSource};
use crate::ingest::ingest_csv;
use crate::synth::{synth_market, write_loadings_csv, SyntheticMarket};

// Stage-scoped RNG streams off the root seed.
const STREAM_AUTOENCODER: u64 = 1;
const STREAM_DFP: u64 = 2;

/// Panel and index ready for the pipeline, plus planted truth when the
/// data is synthetic.
pub struct LoadedData {
    pub panel: ReturnsPanel,
    pub index: IndexSeries,
    pub synth: Option<SyntheticMarket>,
}

/// Loads the configured data source. Synthetic markets draw from the
/// root seed's stream 0.
pub fn load_data(config: &Config, seed: u64) -> Result<LoadedData> {
    match &config.data {
        DataSource::Synthetic(spec) => {
            let mut rng = Rng::new(seed).split(0);
            let market = synth_market(spec, &mut rng)?;
            Ok(LoadedData {
                panel: market.panel.clone(),
                index: market.index.clone(),
                synth: Some(market),
            })
        }
        DataSource::Csv(source) => {
            let (panel, stats) = ingest_csv(&source.path, &source.date_column, source.kind)?;
            if stats.rows_dropped > 0 {
                eprintln!(
                    "ingest: dropped {} of {} rows with missing cells",
                    stats.rows_dropped, stats.rows_read
                );
            }
            let (panel, index) = match &source.index {
                IndexSource::EqualWeight => {
                    let index = IndexSeries::equal_weighted(&panel)?;
                    (panel, index)
                }
                IndexSource::Column(name) => split_index_column(panel, name)?,
            };
            if 2 * config.k > panel.n_assets() {
                anyhow::bail!(
                    "k = {} needs {} assets, panel has {}",
                    config.k,
                    2 * config.k,
                    panel.n_assets()
                );
            }
            Ok(LoadedData { panel, index, synth: None })
        }
    }
}

// Pulls one column out of the panel to serve as the index.
fn split_index_column(panel: ReturnsPanel, name: &str) -> Result<(ReturnsPanel, IndexSeries)> {
    let idx = panel
        .asset_index(name)
        .with_context(|| format!("index column '{name}' not in panel"))?;
    let index =
        IndexSeries::from_returns(panel.dates().to_vec(), panel.values().column(idx).as_slice().to_vec())?;
    let keep: Vec<usize> = (0..panel.n_assets()).filter(|&j| j != idx).collect();
    let mut values = deepindex_core::numerics::Matrix::zeros(panel.n_periods(), keep.len());
    for i in 0..panel.n_periods() {
        let row = panel.values().row(i);
        let dst = values.row_mut(i);
        for (slot, &j) in keep.iter().enumerate() {
            dst[slot] = row[j];
        }
    }
    let assets: Vec<String> = keep.iter().map(|&j| panel.assets()[j].clone()).collect();
    let reduced = ReturnsPanel::new(panel.dates().to_vec(), assets, values, None)?;
    Ok((reduced, index))
}

/// Output of the basis-selection stage.
pub struct SelectedBasis {
    pub basis: BasisSelection,
    pub ranking: CommunalRanking,
    pub autoencoder: TrainedAutoencoder,
}

/// Trains the auto-encoder on the training window and ranks the panel.
pub fn select_basis_stage(config: &Config, data: &LoadedData, seed: u64) -> Result<SelectedBasis> {
    let train_window = config.train_window.to_window()?;
    let train_panel = data.panel.slice(&train_window)?;
    let ae_spec = config.autoencoder.to_spec(train_panel.n_assets());
    let cfg = config.ae_train.to_train_config(seed);
    let mut rng = Rng::new(seed).split(STREAM_AUTOENCODER);
    let (basis, ranking, autoencoder) =
        select_basis(&train_panel, &ae_spec, config.k, &cfg, &mut rng)?;
    Ok(SelectedBasis { basis, ranking, autoencoder })
}

/// Trains the deep tracker on the training window.
pub fn train_dfp_stage(
    config: &Config,
    data: &LoadedData,
    basis: &BasisSelection,
    seed: u64,
) -> Result<(DeepNet, Vec<f64>)> {
    let train_window = config.train_window.to_window()?;
    let train_panel = data.panel.slice(&train_window)?;
    let (dates, returns) = data.index.window_returns(&train_window)?;
    let train_index = IndexSeries::from_returns(dates, returns)?;
    let spec = config.dfp.to_spec(2 * config.k)?;
    let cfg = config.dfp_train.to_train_config(seed);
    let mut rng = Rng::new(seed).split(STREAM_DFP);
    Ok(train_dfp(&train_panel, basis, &train_index, &spec, &cfg, &mut rng)?)
}

#[derive(Serialize)]
struct Metrics {
    tracking_error: f64,
    mean_abs_deviation: f64,
    terminal_gap: f64,
    extreme_outputs: usize,
    untrained: bool,
}

impl From<&TrackerReport> for Metrics {
    fn from(r: &TrackerReport) -> Self {
        Metrics {
            tracking_error: r.tracking_error,
            mean_abs_deviation: r.mean_abs_deviation,
            terminal_gap: r.terminal_gap,
            extreme_outputs: r.extreme_outputs,
            untrained: r.untrained,
        }
    }
}

#[derive(Serialize)]
struct WindowReport {
    label: String,
    start: chrono::NaiveDate,
    end: chrono::NaiveDate,
    periods: usize,
    equal_weight: Metrics,
    dfp: Metrics,
}

#[derive(Serialize)]
struct Report {
    seed: u64,
    rng_algorithm: &'static str,
    k: usize,
    basis: BasisSelection,
    excluded_assets: Vec<String>,
    windows: Vec<WindowReport>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    rng_algorithm: &'static str,
    seed: u64,
    config: &'a Config,
}

fn write_json<P: Serialize>(path: &Path, payload: &P) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, payload)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// All windows the pipeline evaluates: the training window first, then the
/// configured evaluation windows.
pub fn all_windows(config: &Config) -> Result<Vec<Window>> {
    let mut windows = vec![config.train_window.to_window()?];
    for w in &config.eval_windows {
        windows.push(w.to_window()?);
    }
    Ok(windows)
}

// Merged per-window path file: date, index level, both tracker levels.
fn write_merged_paths<W: Write>(w: &mut W, ew: &TrackerReport, dfp: &TrackerReport) -> Result<()> {
    writeln!(w, "date,index,equal_weight,dfp")?;
    for (i, d) in ew.dates.iter().enumerate() {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e}",
            d.format("%Y-%m-%d"),
            ew.index_path[i + 1],
            ew.tracker_path[i + 1],
            dfp.tracker_path[i + 1]
        )?;
    }
    Ok(())
}

/// Runs every stage and writes the artifact set:
/// `manifest.json`, `panel.csv`/`index.csv`/`loadings.csv` (synthetic data),
/// `ranking.csv`, `autoencoder.net`, `reconstructed.csv`, `dfp.net`,
/// `history_dfp.csv`, `paths_<label>.csv` per window, and `report.json`.
pub fn run_pipeline(config: &Config) -> Result<()> {
    config.validate()?;
    let seed = config.require_seed()?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .context("building thread pool")?;
    let result = pool.install(|| run_stages(config, seed, &out));
    if let Err(err) = &result {
        let _ = fs::write(out.join("FAILED"), format!("{err:#}\n"));
    }
    result
}

fn run_stages(config: &Config, seed: u64, out: &Path) -> Result<()> {
    write_json(&out.join("manifest.json"), &Manifest {
        version: env!("CARGO_PKG_VERSION"),
        rng_algorithm: RNG_ALGORITHM,
        seed,
        config,
    })
    .context("stage manifest")?;

    let data = load_data(config, seed).context("stage load_data")?;
    if data.synth.is_some() {
        (|| -> Result<()> {
            let market = data.synth.as_ref().unwrap();
            let mut w = BufWriter::new(fs::File::create(out.join("panel.csv"))?);
            market.panel.write_csv(&mut w)?;
            let mut w = BufWriter::new(fs::File::create(out.join("index.csv"))?);
            market.index.write_csv(&mut w)?;
            let mut w = BufWriter::new(fs::File::create(out.join("loadings.csv"))?);
            write_loadings_csv(&mut w, market)?;
            Ok(())
        })()
        .context("stage write_market")?;
    }

    let selected = select_basis_stage(config, &data, seed).context("stage select_basis")?;
    (|| -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(out.join("ranking.csv"))?);
        write_ranking_csv(&mut w, &selected.ranking, data.panel.assets())?;
        let mut w = BufWriter::new(fs::File::create(out.join("autoencoder.net"))?);
        selected.autoencoder.net.write_text(&mut w)?;
        // Reconstruction of the training window, panel-shaped.
        let train_window = config.train_window.to_window()?;
        let train_panel = data.panel.slice(&train_window)?;
        let recon = selected.autoencoder.reconstruct_rows(train_panel.values())?;
        let mut w = BufWriter::new(fs::File::create(out.join("reconstructed.csv"))?);
        write!(w, "date")?;
        for a in train_panel.assets() {
            write!(w, ",{a}")?;
        }
        writeln!(w)?;
        for (i, d) in train_panel.dates().iter().enumerate() {
            write!(w, "{}", d.format("%Y-%m-%d"))?;
            for v in recon.row(i) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })()
    .context("stage write_ranking")?;

    let train_window = config.train_window.to_window()?;
    let in_sample_ew =
        equal_weight_tracker(&data.panel, &selected.basis.top, &data.index, &train_window)
            .context("stage equal_weight_tracker")?;

    let (dfp_net, dfp_history) =
        train_dfp_stage(config, &data, &selected.basis, seed).context("stage train_dfp")?;
    (|| -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(out.join("dfp.net"))?);
        dfp_net.write_text(&mut w)?;
        let mut w = BufWriter::new(fs::File::create(out.join("history_dfp.csv"))?);
        write_history_csv(&mut w, &dfp_history, None)?;
        Ok(())
    })()
    .context("stage write_dfp")?;

    let windows = all_windows(config)?;
    let combined = selected.basis.combined();
    let ew_model = TrackerModel::EqualWeight { basis: &selected.basis.top };
    let dfp_model = TrackerModel::Deep {
        net: &dfp_net,
        basis: &combined,
        dropout_keep: config.dfp_train.dropout_keep,
        untrained: config.dfp_train.epochs == 0,
    };
    let ew_reports =
        evaluate_tracker(&ew_model, &data.panel, &data.index, &windows).context("stage evaluate")?;
    let dfp_reports = evaluate_tracker(&dfp_model, &data.panel, &data.index, &windows)
        .context("stage evaluate")?;

    (|| -> Result<()> {
        let mut window_reports = Vec::new();
        for (ew, dfp) in ew_reports.iter().zip(&dfp_reports) {
            let mut w = BufWriter::new(
                fs::File::create(out.join(format!("paths_{}.csv", crate::config::sanitize_label(&ew.label))))?,
            );
            write_merged_paths(&mut w, ew, dfp)?;
            window_reports.push(WindowReport {
                label: ew.label.clone(),
                start: ew.start,
                end: ew.end,
                periods: ew.dates.len(),
                equal_weight: Metrics::from(ew),
                dfp: Metrics::from(dfp),
            });
        }
        let excluded_assets: Vec<String> = selected
            .ranking
            .excluded
            .iter()
            .map(|&j| data.panel.assets()[j].clone())
            .collect();
        write_json(&out.join("report.json"), &Report {
            seed,
            rng_algorithm: RNG_ALGORITHM,
            k: config.k,
            basis: selected.basis.clone(),
            excluded_assets,
            windows: window_reports,
        })?;
        Ok(())
    })()
    .context("stage report")?;

    // The dedicated in-sample tracker and the evaluation of the training
    // window must be the same computation.
    if in_sample_ew.tracking_error != ew_reports[0].tracking_error {
        anyhow::bail!(
            "in-sample tracker disagrees with window evaluation: {} vs {}",
            in_sample_ew.tracking_error,
            ew_reports[0].tracking_error
        );
    }
    Ok(())
}

/// Reads a ranking CSV back into a basis selection (top k and bottom k of
/// the non-excluded rows).
pub fn read_ranking_csv(path: &Path, k: usize) -> Result<BasisSelection> {
    let text = fs::read_to_string(path)?;
    let mut ranked = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            anyhow::bail!("ranking line {} has {} fields", i + 1, fields.len());
        }
        if fields[2] != "excluded" {
            ranked.push(fields[1].to_string());
        }
    }
    if ranked.len() < 2 * k {
        anyhow::bail!("ranking holds {} eligible assets, need {}", ranked.len(), 2 * k);
    }
    Ok(BasisSelection {
        top: ranked[..k].to_vec(),
        bottom: ranked[ranked.len() - k..].to_vec(),
        k,
    })
}

/// Loads a serialized net.
pub fn read_net(path: &Path) -> Result<DeepNet> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(DeepNet::read_text(&mut std::io::BufReader::new(file))?)
}

/// Writes evaluation reports for a previously trained model (the
/// `evaluate` subcommand): one merged paths CSV per window plus
/// `report.json` in the output directory.
pub fn evaluate_saved(
    config: &Config,
    dfp_path: &Path,
    ranking_path: &Path,
) -> Result<PathBuf> {
    config.validate()?;
    let seed = config.require_seed()?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out)?;
    let data = load_data(config, seed)?;
    let basis = read_ranking_csv(ranking_path, config.k)?;
    let net = read_net(dfp_path)?;
    let windows = all_windows(config)?;
    let combined = basis.combined();
    let ew_model = TrackerModel::EqualWeight { basis: &basis.top };
    let dfp_model = TrackerModel::Deep {
        net: &net,
        basis: &combined,
        dropout_keep: config.dfp_train.dropout_keep,
        untrained: false,
    };
    let ew_reports = evaluate_tracker(&ew_model, &data.panel, &data.index, &windows)?;
    let dfp_reports = evaluate_tracker(&dfp_model, &data.panel, &data.index, &windows)?;
    let mut window_reports = Vec::new();
    for (ew, dfp) in ew_reports.iter().zip(&dfp_reports) {
        let mut w = BufWriter::new(
            fs::File::create(out.join(format!("paths_{}.csv", crate::config::sanitize_label(&ew.label))))?,
        );
        write_merged_paths(&mut w, ew, dfp)?;
        window_reports.push(WindowReport {
            label: ew.label.clone(),
            start: ew.start,
            end: ew.end,
            periods: ew.dates.len(),
            equal_weight: Metrics::from(ew),
            dfp: Metrics::from(dfp),
        });
    }
    let report_path = out.join("report.json");
    write_json(&report_path, &Report {
        seed,
        rng_algorithm: RNG_ALGORITHM,
        k: config.k,
        basis,
        excluded_assets: Vec::new(),
        windows: window_reports,
    })?;
    Ok(report_path)
}
