use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use deepindex_cli::config::{Config, CsvKind};
use deepindex_cli::gradcheck::run_gradcheck;
use deepindex_cli::ingest::ingest_csv;
use deepindex_cli::pipeline::{
    evaluate_saved, load_data, run_pipeline, select_basis_stage, train_dfp_stage,
};
use deepindex_cli::synth::write_loadings_csv;
use deepindex_core::autoencoder::write_ranking_csv;
use deepindex_core::indexing::equal_weight_tracker;
use deepindex_core::training::write_history_csv;

/// Asset-ranking and index-tracking pipeline on deep predictors.
#[derive(Parser)]
#[command(name = "deepindex", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Seed override; stochastic commands require a seed here or in the
    /// config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker thread count override (results are thread-count-invariant).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut config = Config::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(threads) = self.threads {
            config.threads = threads;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Prices,
    Returns,
}

impl From<KindArg> for CsvKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Prices => CsvKind::Prices,
            KindArg::Returns => CsvKind::Returns,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market and write panel/index/loadings CSVs.
    Synth(Common),
    /// Parse a CSV panel and report what ingestion would keep.
    IngestCheck {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "date")]
        date_column: String,
        #[arg(long, value_enum, default_value = "prices")]
        kind: KindArg,
        /// Re-emit the normalized returns panel to this path.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Train the auto-encoder and write the model plus reconstruction.
    Autoencode(Common),
    /// Rank assets by communal information and write `ranking.csv`.
    Rank(Common),
    /// Evaluate the equal-weight communal tracker on the training window.
    Track(Common),
    /// Train the deep tracker and write `dfp.net`.
    TrainDfp(Common),
    /// Evaluate saved models over the configured windows.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Serialized deep tracker (from `train-dfp` or `run`).
        #[arg(long)]
        dfp_model: PathBuf,
        /// Ranking CSV (from `rank` or `run`).
        #[arg(long)]
        ranking: PathBuf,
    },
    /// Run the full pipeline: select basis, train trackers, evaluate.
    Run(Common),
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Train the LSTM on a regime-switching variance sequence and compare
    /// next-step forecasts against flat and persistence baselines.
    Volatility {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3000)]
        periods: usize,
        #[arg(long, default_value_t = 6)]
        hidden: usize,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(common) => {
            let config = common.load()?;
            let seed = config.require_seed()?;
            let data = load_data(&config, seed)?;
            let market = data
                .synth
                .as_ref()
                .context("synth requires a synthetic data source in the config")?;
            fs::create_dir_all(&config.output_dir)?;
            let mut w = BufWriter::new(fs::File::create(config.output_dir.join("panel.csv"))?);
            market.panel.write_csv(&mut w)?;
            let mut w = BufWriter::new(fs::File::create(config.output_dir.join("index.csv"))?);
            market.index.write_csv(&mut w)?;
            let mut w = BufWriter::new(fs::File::create(config.output_dir.join("loadings.csv"))?);
            write_loadings_csv(&mut w, market)?;
            println!(
                "synthetic market: {} assets x {} periods -> {}",
                market.panel.n_assets(),
                market.panel.n_periods(),
                config.output_dir.display()
            );
            Ok(())
        }
        Command::IngestCheck { csv, date_column, kind, emit } => {
            let (panel, stats) = ingest_csv(&csv, &date_column, kind.into())?;
            println!(
                "{}: {} assets, {} return rows ({} read, {} dropped), {} .. {}",
                csv.display(),
                panel.n_assets(),
                panel.n_periods(),
                stats.rows_read,
                stats.rows_dropped,
                panel.dates()[0],
                panel.dates().last().unwrap()
            );
            if let Some(path) = emit {
                let mut w = BufWriter::new(fs::File::create(&path)?);
                panel.write_csv(&mut w)?;
                println!("normalized panel -> {}", path.display());
            }
            Ok(())
        }
        Command::Autoencode(common) | Command::Rank(common) => {
            let config = common.load()?;
            let seed = config.require_seed()?;
            let data = load_data(&config, seed)?;
            let selected = select_basis_stage(&config, &data, seed)?;
            fs::create_dir_all(&config.output_dir)?;
            let mut w =
                BufWriter::new(fs::File::create(config.output_dir.join("autoencoder.net"))?);
            selected.autoencoder.net.write_text(&mut w)?;
            let mut w = BufWriter::new(fs::File::create(config.output_dir.join("ranking.csv"))?);
            write_ranking_csv(&mut w, &selected.ranking, data.panel.assets())?;
            println!(
                "top-{}: {:?}",
                config.k, selected.basis.top
            );
            Ok(())
        }
        Command::Track(common) => {
            let config = common.load()?;
            let seed = config.require_seed()?;
            let data = load_data(&config, seed)?;
            let selected = select_basis_stage(&config, &data, seed)?;
            let window = config.train_window.to_window()?;
            let report =
                equal_weight_tracker(&data.panel, &selected.basis.top, &data.index, &window)?;
            println!(
                "{}: tracking error {:.6e}, mean abs deviation {:.6e}, terminal gap {:.6e}",
                report.label, report.tracking_error, report.mean_abs_deviation, report.terminal_gap
            );
            Ok(())
        }
        Command::TrainDfp(common) => {
            let config = common.load()?;
            let seed = config.require_seed()?;
            let data = load_data(&config, seed)?;
            let selected = select_basis_stage(&config, &data, seed)?;
            let (net, history) = train_dfp_stage(&config, &data, &selected.basis, seed)?;
            fs::create_dir_all(&config.output_dir)?;
            let mut w = BufWriter::new(fs::File::create(config.output_dir.join("dfp.net"))?);
            net.write_text(&mut w)?;
            let mut w =
                BufWriter::new(fs::File::create(config.output_dir.join("history_dfp.csv"))?);
            write_history_csv(&mut w, &history, None)?;
            if let Some(last) = history.last() {
                println!("deep tracker trained, final objective {last:.6e}");
            } else {
                println!("deep tracker written untrained (0 epochs)");
            }
            Ok(())
        }
        Command::Evaluate { common, dfp_model, ranking } => {
            let config = common.load()?;
            let report = evaluate_saved(&config, &dfp_model, &ranking)?;
            println!("report -> {}", report.display());
            Ok(())
        }
        Command::Run(common) => {
            let config = common.load()?;
            run_pipeline(&config)?;
            println!("pipeline complete -> {}", config.output_dir.display());
            Ok(())
        }
        Command::Volatility { seed, periods, hidden, epochs } => {
            let spec = deepindex_cli::volatility::VolRegimeSpec {
                periods,
                ..Default::default()
            };
            let outcome =
                deepindex_cli::volatility::run_volatility_task(&spec, hidden, epochs, seed)?;
            println!(
                "next-step squared-return mse — lstm: {:.4e}, flat: {:.4e}, previous: {:.4e}",
                outcome.lstm_mse, outcome.flat_mse, outcome.previous_mse
            );
            Ok(())
        }
        Command::Gradcheck { seed, trials } => {
            let summary = run_gradcheck(trials, seed)?;
            println!(
                "{} net, {} lstm, {} rnn checks: max relative error {:.3e} ({})",
                summary.net_trials,
                summary.lstm_trials,
                summary.rnn_trials,
                summary.max_rel_error,
                summary.worst_case
            );
            if summary.max_rel_error >= 1e-5 {
                bail!("gradient check failed: {:.3e} >= 1e-5", summary.max_rel_error);
            }
            Ok(())
        }
    }
}
