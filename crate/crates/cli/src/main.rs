//! `softlif` command-line tool.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use softlif::convert::{convert, load_snn, save_snn};
use softlif::data::Split;
use softlif::efficiency::{relative_efficiency, snn_energy, sweep, EfficiencyReport};
use softlif::model_io::{load_model, save_model};
use softlif::network::{count_flops, FLOP_CONVENTION};
use softlif::rng::{purpose, stream};
use softlif::sim::{accuracy_curve, evaluate_snn};
use softlif::synapse::{expected_filtered_mean, spike_statistics};
use softlif::trainer::{evaluate_ann, train_observed};

use crate::config::{CurveConfig, ExperimentConfig, StatsConfig};
use crate::output::CsvOut;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit code 1).
    Config(String),
    /// Failure while doing the work (exit code 2).
    Runtime(softlif::Error),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<softlif::Error> for CliError {
    fn from(e: softlif::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Validation failures from the library, reported as configuration errors.
fn invalid(e: softlif::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "softlif",
    version,
    about = "Train soft-LIF networks, convert them to spiking networks, simulate, and estimate energy"
)]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides `data.root` and $SOFTLIF_DATA_ROOT.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimOverrides {
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate only the first N test images.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ANN; writes model.json/model.bin and train_metrics.csv to the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        train_limit: Option<usize>,
    },
    /// Test error of an ANN.
    EvalAnn {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Convert a trained soft-LIF ANN into a spiking model.
    Convert {
        #[arg(long)]
        model: PathBuf,
        /// Synaptic time constant in seconds (0 = no filtering); falls back to `tau_s` in the config.
        #[arg(long)]
        tau_s: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a spiking model on the test set; one CSV row per image.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimOverrides,
    },
    /// Error for every (c0, c1) readout window from one simulation per image.
    Curve {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimOverrides,
        /// Comma-separated readout starts, seconds.
        #[arg(long, value_delimiter = ',')]
        c0_list: Option<Vec<f64>>,
        /// Comma-separated presentation ends, seconds.
        #[arg(long, value_delimiter = ',')]
        c1_grid: Option<Vec<f64>>,
    },
    /// Energy and efficiency, from measured runs (--ann and --model) or from given rates.
    Efficiency {
        /// Source ANN, for the flop count.
        #[arg(long)]
        ann: Option<PathBuf>,
        /// Spiking model to sweep over the config's `sweep` rows.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, requires_all = ["updates_per_s", "presentation"], conflicts_with = "model")]
        synops_per_s: Option<f64>,
        #[arg(long)]
        updates_per_s: Option<f64>,
        /// Presentation time, seconds.
        #[arg(long)]
        presentation: Option<f64>,
        /// ANN flops per image to compare against (with given rates).
        #[arg(long)]
        ann_flops: Option<f64>,
        #[arg(long, default_value = "given")]
        dataset: String,
    },
    /// Statistics of filtered spike trains over a grid of input currents.
    Stats {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tau_s: Option<f64>,
        /// Comma-separated input currents.
        #[arg(long, value_delimiter = ',')]
        currents: Option<Vec<f64>>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 1,
                CliError::Runtime(_) | CliError::Io(_) => 2,
            })
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train {
            config,
            data_root,
            output_dir,
            epochs,
            seed,
            noise_sigma,
            learning_rate,
            train_limit,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let mut train_cfg = cfg
                .train
                .clone()
                .ok_or_else(|| CliError::Config("missing field `train`".into()))?;
            train_cfg.epochs = epochs.unwrap_or(train_cfg.epochs);
            train_cfg.seed = seed.unwrap_or(train_cfg.seed);
            train_cfg.noise_sigma = noise_sigma.unwrap_or(train_cfg.noise_sigma);
            train_cfg.learning_rate = learning_rate.unwrap_or(train_cfg.learning_rate);
            train_cfg.validate().map_err(invalid)?;
            cfg.train = Some(train_cfg.clone());
            let arch = cfg
                .architecture
                .clone()
                .ok_or_else(|| CliError::Config("missing field `architecture`".into()))?;
            let mut data = cfg.data(data_root.as_deref())?;
            data.train_limit = train_limit.or(data.train_limit);
            cfg.data = Some(data.clone());
            let output_dir = output_dir
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| CliError::Config("missing field `output_dir` (or --output-dir)".into()))?;
            cfg.output_dir = Some(output_dir.clone());

            let net = arch
                .build(&mut stream(train_cfg.seed, &[purpose::INIT]))
                .map_err(invalid)?;
            let train = data.load(Split::Train)?;
            let test = data.load(Split::Test)?;
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| CliError::Io(format!("creating {}: {e}", output_dir.display())))?;
            let hash = ExperimentConfig::hash_of(&cfg);
            let mut csv = CsvOut::create(
                Some(&output_dir.join("train_metrics.csv")),
                &hash,
                &[],
                &["epoch", "train_loss", "test_error", "wall_seconds"],
            )?;
            let mut write_error = None;
            let outcome = train_observed(&net, &train, Some(&test), &train_cfg, |m| {
                eprintln!(
                    "epoch {}: loss {:.5}, test error {:.4}, {:.1} s",
                    m.epoch,
                    m.train_loss,
                    m.test_error.unwrap_or(f64::NAN),
                    m.wall_seconds
                );
                let row = [
                    m.epoch.to_string(),
                    m.train_loss.to_string(),
                    m.test_error.map_or(String::new(), |e| e.to_string()),
                    m.wall_seconds.to_string(),
                ];
                if let Err(e) = csv.row(&row) {
                    write_error.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_error {
                return Err(e);
            }
            csv.finish()?;
            let net = outcome.net.with_provenance(format!(
                "trained by softlif {} (config sha256 {hash})",
                env!("CARGO_PKG_VERSION")
            ));
            save_model(&net, output_dir.join("model.json"))?;
            Ok(())
        }

        Command::EvalAnn { model, common, limit } => {
            let cfg = ExperimentConfig::load_opt(common.config.as_deref())?;
            let data = cfg.data(common.data_root.as_deref())?;
            let net = load_model(&model)?;
            let mut test = data.load(Split::Test)?;
            if let Some(n) = limit {
                test = test.take(n);
            }
            let error = evaluate_ann(&net, &test)?;
            let hash = ExperimentConfig::hash_of(
                &json!({"command": "eval-ann", "model": model, "data": data, "limit": limit}),
            );
            let mut csv = CsvOut::create(common.out.as_deref(), &hash, &[], &["model", "images", "error"])?;
            csv.row(&[model.display().to_string(), test.len().to_string(), error.to_string()])?;
            csv.finish()
        }

        Command::Convert {
            model,
            tau_s,
            config,
            out,
        } => {
            let cfg = ExperimentConfig::load_opt(config.as_deref())?;
            let tau_s = tau_s
                .or(cfg.tau_s)
                .ok_or_else(|| CliError::Config("missing field `tau_s` (or --tau-s)".into()))?;
            if !(tau_s >= 0.0 && tau_s.is_finite()) {
                return Err(CliError::Config(format!("field `tau_s`: must be >= 0, got {tau_s}")));
            }
            let ann = load_model(&model)?;
            let snn = convert(&ann, tau_s).map_err(|e| match e {
                softlif::Error::UnsupportedLayer { .. } => invalid(e),
                other => CliError::Runtime(other),
            })?;
            save_snn(&snn, &out)?;
            Ok(())
        }

        Command::Simulate { model, common, sim } => {
            let cfg = ExperimentConfig::load_opt(common.config.as_deref())?;
            let data = cfg.data(common.data_root.as_deref())?;
            let snn = load_snn(&model)?;
            let config = sim_config(&cfg, &sim)?;
            config.validate(snn.tau_s()).map_err(invalid)?;
            let test = limited(data.load(Split::Test)?, sim.limit);
            let eval = evaluate_snn(&snn, &test, &config)?;
            eprintln!(
                "error {:.4}, {:.4e} synops/s, {:.4e} updates/s, mean rate {:.3} Hz",
                eval.error, eval.synops_per_s, eval.updates_per_s, eval.mean_rate_hz
            );
            let hash = ExperimentConfig::hash_of(
                &json!({"command": "simulate", "model": model, "data": data, "sim": config, "tau_s": snn.tau_s(), "limit": sim.limit}),
            );
            let mut csv = CsvOut::create(
                common.out.as_deref(),
                &hash,
                &[],
                &["image_id", "label", "prediction", "synops", "updates"],
            )?;
            for o in &eval.images {
                csv.row(&[
                    o.index.to_string(),
                    o.label.to_string(),
                    o.prediction.to_string(),
                    o.synops.to_string(),
                    o.updates.to_string(),
                ])?;
            }
            csv.finish()
        }

        Command::Curve {
            model,
            common,
            sim,
            c0_list,
            c1_grid,
        } => {
            let cfg = ExperimentConfig::load_opt(common.config.as_deref())?;
            let data = cfg.data(common.data_root.as_deref())?;
            let snn = load_snn(&model)?;
            let config = sim_config(&cfg, &sim)?;
            let from_cfg = cfg.curve.clone();
            let curve = CurveConfig {
                c0_list: c0_list
                    .or_else(|| from_cfg.as_ref().map(|c| c.c0_list.clone()))
                    .ok_or_else(|| CliError::Config("missing field `curve.c0_list` (or --c0-list)".into()))?,
                c1_grid: c1_grid
                    .or_else(|| from_cfg.as_ref().map(|c| c.c1_grid.clone()))
                    .ok_or_else(|| CliError::Config("missing field `curve.c1_grid` (or --c1-grid)".into()))?,
            };
            let test = limited(data.load(Split::Test)?, sim.limit);
            let points = accuracy_curve(&snn, &test, &curve.c0_list, &curve.c1_grid, &config).map_err(|e| match e {
                softlif::Error::InvalidParameter { .. } => invalid(e),
                other => CliError::Runtime(other),
            })?;
            let hash = ExperimentConfig::hash_of(
                &json!({"command": "curve", "model": model, "data": data, "sim": config, "curve": curve, "limit": sim.limit}),
            );
            let mut csv = CsvOut::create(common.out.as_deref(), &hash, &[], &["c0", "c1", "error"])?;
            for p in &points {
                csv.row(&[p.c0.to_string(), p.c1.to_string(), p.error.to_string()])?;
            }
            csv.finish()
        }

        Command::Efficiency {
            ann,
            model,
            common,
            limit,
            synops_per_s,
            updates_per_s,
            presentation,
            ann_flops,
            dataset,
        } => {
            let cfg = ExperimentConfig::load_opt(common.config.as_deref())?;
            cfg.energy.validate().map_err(invalid)?;
            let header = [
                "dataset",
                "tau_s_ms",
                "c0_ms",
                "c1_ms",
                "error",
                "synops_per_s",
                "updates_per_s",
                "energy",
                "efficiency",
            ];
            let convention = format!("flops convention: {FLOP_CONVENTION}");
            let energy_note = format!(
                "energy model: e_synop = {}, e_update = {} flop-equivalents",
                cfg.energy.e_synop, cfg.energy.e_update
            );
            if let Some(synops) = synops_per_s {
                let (updates, presentation) = (updates_per_s.unwrap_or(0.0), presentation.unwrap_or(0.0));
                if synops < 0.0 || updates < 0.0 || presentation < 0.0 {
                    return Err(CliError::Config("rates and presentation time must be >= 0".into()));
                }
                let energy = snn_energy(synops, updates, presentation, &cfg.energy);
                let efficiency = match ann_flops {
                    Some(f) => relative_efficiency(f, energy).map_err(invalid)?.to_string(),
                    None => String::new(),
                };
                let hash = ExperimentConfig::hash_of(
                    &json!({"command": "efficiency", "synops_per_s": synops, "updates_per_s": updates, "presentation": presentation, "ann_flops": ann_flops, "energy": cfg.energy}),
                );
                let mut csv = CsvOut::create(common.out.as_deref(), &hash, &[&convention, &energy_note], &header)?;
                csv.row(&[
                    dataset,
                    String::new(),
                    String::new(),
                    ms(presentation),
                    String::new(),
                    synops.to_string(),
                    updates.to_string(),
                    energy.to_string(),
                    efficiency,
                ])?;
                return csv.finish();
            }
            let (Some(ann_path), Some(snn_path)) = (ann, model) else {
                return Err(CliError::Config(
                    "efficiency needs either --ann and --model, or --synops-per-s, --updates-per-s and --presentation"
                        .into(),
                ));
            };
            let rows = cfg
                .sweep
                .clone()
                .ok_or_else(|| CliError::Config("missing field `sweep`".into()))?;
            let data = cfg.data(common.data_root.as_deref())?;
            let base = cfg.sim()?;
            let ann = load_model(&ann_path)?;
            let snn = load_snn(&snn_path)?;
            for row in &rows {
                let probe = softlif::sim::SimConfig {
                    c0: row.c0,
                    c1: row.c1,
                    ..base.clone()
                };
                probe.validate(row.tau_s).map_err(invalid)?;
            }
            let test = limited(data.load(Split::Test)?, limit);
            let name = match data.format {
                config::DataFormat::Mnist => "mnist",
                config::DataFormat::Cifar10 => "cifar10",
            };
            let reports = sweep(&ann, &snn, &test, name, &rows, &base, &cfg.energy)?;
            let flops = count_flops(&ann);
            let flops_note = format!(
                "ann: {} neurons, {} connections, {} flops per image",
                flops.neurons, flops.connections, flops.flops_per_image
            );
            let hash = ExperimentConfig::hash_of(
                &json!({"command": "efficiency", "ann": ann_path, "model": snn_path, "data": data, "sim": base, "sweep": rows, "energy": cfg.energy, "limit": limit}),
            );
            let mut csv = CsvOut::create(
                common.out.as_deref(),
                &hash,
                &[&convention, &flops_note, &energy_note],
                &header,
            )?;
            for r in &reports {
                csv.row(&efficiency_row(r))?;
            }
            csv.finish()
        }

        Command::Stats {
            config,
            tau_s,
            currents,
            duration,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig::load_opt(config.as_deref())?;
            let mut stats = cfg.stats.clone().unwrap_or_default();
            stats.tau_s = tau_s.unwrap_or(stats.tau_s);
            stats.currents = currents.unwrap_or(stats.currents);
            stats.duration = duration.unwrap_or(stats.duration);
            stats.seed = seed.unwrap_or(stats.seed);
            run_stats(&stats, out.as_deref())
        }
    }
}

fn ms(seconds: f64) -> String {
    (seconds * 1e3).to_string()
}

fn efficiency_row(r: &EfficiencyReport) -> Vec<String> {
    vec![
        r.dataset.clone(),
        ms(r.tau_s),
        ms(r.c0),
        ms(r.c1),
        r.error.to_string(),
        r.synops_per_s.to_string(),
        r.updates_per_s.to_string(),
        r.snn_energy_per_image.to_string(),
        r.relative_efficiency.to_string(),
    ]
}

fn run_stats(stats: &StatsConfig, out: Option<&Path>) -> Result<(), CliError> {
    let params = softlif::neuron::LifParams::default();
    if stats.currents.is_empty() {
        return Err(CliError::Config("field `stats.currents`: must not be empty".into()));
    }
    let hash = ExperimentConfig::hash_of(&json!({"command": "stats", "stats": stats, "params": params}));
    let mut csv = CsvOut::create(
        out,
        &hash,
        &[],
        &["j", "mean", "median", "p25", "p75", "min", "max", "std", "rate"],
    )?;
    for (k, &j) in stats.currents.iter().enumerate() {
        let s = spike_statistics(
            &params,
            j,
            stats.tau_s,
            stats.duration,
            stats.dt,
            stats.seed.wrapping_add(k as u64),
        )
        .map_err(invalid)?;
        csv.row(&[
            j.to_string(),
            s.mean.to_string(),
            s.median.to_string(),
            s.p25.to_string(),
            s.p75.to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.std.to_string(),
            expected_filtered_mean(&params, j).to_string(),
        ])?;
    }
    csv.finish()
}

fn sim_config(cfg: &ExperimentConfig, o: &SimOverrides) -> Result<softlif::sim::SimConfig, CliError> {
    let mut sim = cfg.sim.clone().unwrap_or_default();
    sim.dt = o.dt.unwrap_or(sim.dt);
    sim.c0 = o.c0.unwrap_or(sim.c0);
    sim.c1 = o.c1.unwrap_or(sim.c1);
    sim.seed = o.seed.unwrap_or(sim.seed);
    Ok(sim)
}

fn limited(d: softlif::data::Dataset, limit: Option<usize>) -> softlif::data::Dataset {
    match limit {
        Some(n) => d.take(n),
        None => d,
    }
}
