//! `sqn` command-line surface and the annotation service.

pub mod service;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sqn_core::config::{parse_pairs, RunConfig};
use sqn_core::harness::experiments::{
    ablation_subsets, degradation_sweep, k_sweep, mean_std, query_level_ablation, seed_sensitivity, Benchmark,
};
use sqn_core::harness::{synth_scene, ExperimentResult, SceneSpec};
use sqn_core::metrics::eval_report;
use sqn_core::model::SqnModel;
use sqn_core::pointcloud::io::parse_xyz;
use sqn_core::pointcloud::{grid_downsample, load_cloud, save_cloud, CloudFormat};
use sqn_core::trainer::{format_predictions, save_log_csv, train};
use sqn_core::weak_labels::{export_label_file, import_label_file, sample_sparse_labels};
use sqn_core::PointCloud;

#[derive(Debug, Parser)]
#[command(name = "sqn", version, about = "Weakly supervised point-cloud segmentation with semantic queries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert between SQNC (`.sqnc`) and ASCII XYZ (any other extension).
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Class count for ASCII input; inferred from the labels when omitted.
        #[arg(long)]
        num_classes: Option<u16>,
    },
    /// Voxel-grid downsampling: one barycenter per occupied cell.
    Gridsample {
        input: PathBuf,
        output: PathBuf,
        /// Cell edge in meters.
        #[arg(long)]
        cell: f64,
    },
    /// Generate a labeled synthetic room.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Points per class.
        #[arg(long, default_value_t = 2000)]
        points_per_class: usize,
        /// Give objects RGB colors.
        #[arg(long)]
        colored: bool,
    },
    /// Draw a random sparse annotation set from a labeled cloud.
    LabelSample {
        cloud: PathBuf,
        output: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a cloud and its sparse labels.
    Train {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// `key = value` run config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict classes for a cloud, or for query positions given that cloud.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        /// ASCII `x y z` positions to classify instead of the cloud points.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// `SQNP` prediction file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on a labeled cloud; writes `metric,class,value` CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Boundary radii for the boundary / interior split.
        #[arg(long, value_delimiter = ',')]
        boundary_radius: Vec<f64>,
    },
    /// Degradation sweep over annotation ratios (descending, nested labels).
    SweepRatio {
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.01, 0.001, 0.0001])]
        ratios: Vec<f64>,
        #[command(flatten)]
        common: ExperimentArgs,
    },
    /// Query-level ablation over {1}, {4}, {1,2}, {1,2,3}, {1,2,3,4}.
    AblateLevels {
        #[arg(long, default_value_t = 0.005)]
        ratio: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
        seeds: Vec<u64>,
        #[command(flatten)]
        common: ExperimentArgs,
    },
    /// Sweep the number of queried neighbors K.
    SweepK {
        #[arg(long, default_value_t = 0.005)]
        ratio: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 3, 5, 10, 25])]
        ks: Vec<usize>,
        #[command(flatten)]
        common: ExperimentArgs,
    },
    /// Repeat training with several seeds (labels and initialization).
    SweepSeeds {
        #[arg(long, default_value_t = 0.005)]
        ratio: f64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[command(flatten)]
        common: ExperimentArgs,
    },
    /// Run the annotation service for a cloud.
    Serve {
        cloud: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid cell of the reference cloud, meters.
        #[arg(long, default_value_t = 0.05)]
        reference_cell: f64,
        /// Comma-separated class names.
        #[arg(long, value_delimiter = ',')]
        class_names: Vec<String>,
        /// Where `POST /commit` writes the SQNL file.
        #[arg(long, default_value = "labels.sqnl")]
        labels_out: PathBuf,
    },
}

/// Options shared by the experiment suites.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Output directory for `<experiment>.csv` and `<experiment>.html`.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// `key = value` overrides of the desk benchmark's model and training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the epoch count per training stage.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run independent cells on separate threads.
    #[arg(long)]
    pub parallel: bool,
}

impl ExperimentArgs {
    fn benchmark(&self) -> anyhow::Result<Benchmark> {
        let mut bench = Benchmark::desk();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (k, v) in parse_pairs(&text)? {
                if !bench.model.set(&k, &v)? && !bench.train.set(&k, &v)? {
                    bail!("{}: unknown key `{k}`", path.display());
                }
            }
        }
        if let Some(e) = self.epochs {
            bench.train.epochs = e;
        }
        bench.parallel = self.parallel;
        bench.model.validate()?;
        bench.train.validate()?;
        Ok(bench)
    }
}

fn load(path: &Path) -> anyhow::Result<PointCloud> {
    load_cloud(path, CloudFormat::from_path(path)).with_context(|| format!("loading {}", path.display()))
}

fn save(cloud: &PointCloud, path: &Path) -> anyhow::Result<()> {
    save_cloud(cloud, path, CloudFormat::from_path(path)).with_context(|| format!("writing {}", path.display()))
}

fn report(result: &ExperimentResult, dir: &Path) -> anyhow::Result<()> {
    for (param, mean, std, n) in result.miou_by_param() {
        if n > 1 {
            println!("{}={param}: mIoU {mean:.4} +- {std:.4} over {n} runs", result.parameter);
        } else {
            println!("{}={param}: mIoU {mean:.4}", result.parameter);
        }
    }
    let (csv, html) = result.save(dir)?;
    println!("wrote {} and {}", csv.display(), html.display());
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Convert {
            input,
            output,
            num_classes,
        } => {
            let cloud = match (CloudFormat::from_path(&input), num_classes) {
                (CloudFormat::Xyz, Some(c)) => parse_xyz(&fs::read_to_string(&input)?, Some(c))?,
                _ => load(&input)?,
            };
            save(&cloud, &output)?;
            println!("{} points -> {}", cloud.len(), output.display());
        }
        Command::Gridsample { input, output, cell } => {
            let cloud = load(&input)?;
            let r = grid_downsample(&cloud, cell)?;
            save(&r.sampled, &output)?;
            println!("{} -> {} points (cell {cell} m)", cloud.len(), r.sampled.len());
        }
        Command::Synth {
            output,
            seed,
            points_per_class,
            colored,
        } => {
            let mut spec = SceneSpec::room(seed);
            spec.points_per_class = vec![points_per_class; spec.classes.len()];
            spec.colored = colored;
            let cloud = synth_scene(&spec)?;
            save(&cloud, &output)?;
            println!("{} points, classes {}", cloud.len(), spec.class_names().join(","));
        }
        Command::LabelSample {
            cloud,
            output,
            ratio,
            seed,
        } => {
            let cloud = load(&cloud)?;
            let labels = sample_sparse_labels(&cloud, ratio, seed)?;
            export_label_file(&labels, &output)?;
            println!("{} of {} points labeled -> {}", labels.len(), cloud.len(), output.display());
        }
        Command::Train {
            cloud,
            labels,
            out,
            config,
            log,
            epochs,
        } => {
            let cloud = load(&cloud)?;
            let labels = import_label_file(&labels, cloud.len(), cloud.num_classes())?;
            let mut cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let outcome = train(&cloud, &labels, &cfg.model, &cfg.train)?;
            outcome.model.save(&out)?;
            if let Some(path) = log {
                save_log_csv(&outcome.log, path)?;
            }
            if let Some(last) = outcome.log.last() {
                println!(
                    "{} epochs, final loss {:.4}, train acc {:.4}, {:.1}s",
                    outcome.log.len(),
                    last.loss,
                    last.train_acc,
                    last.seconds
                );
            }
            println!("checkpoint -> {}", out.display());
        }
        Command::Infer {
            model,
            cloud,
            queries,
            out,
        } => {
            let model = SqnModel::load(&model)?;
            let cloud = load(&cloud)?;
            let preds = match queries {
                Some(q) => {
                    let qs = parse_xyz(&fs::read_to_string(&q)?, None)?;
                    model.predict(&cloud, qs.positions())?
                }
                None => model.predict_cloud(&cloud)?,
            };
            fs::write(&out, format_predictions(&preds))?;
            println!("{} predictions -> {}", preds.len(), out.display());
        }
        Command::Eval {
            model,
            cloud,
            out,
            boundary_radius,
        } => {
            let model = SqnModel::load(&model)?;
            let cloud = load(&cloud)?;
            let r = eval_report(&model, &cloud, &boundary_radius)?;
            println!("OA {:.4}  mAcc {:.4}  mIoU {:.4}", r.overall.oa, r.overall.macc, r.overall.miou);
            match out {
                Some(path) => fs::write(path, r.to_csv())?,
                None => print!("{}", r.to_csv()),
            }
        }
        Command::SweepRatio { ratios, common } => {
            report(&degradation_sweep(&common.benchmark()?, &ratios)?, &common.out)?;
        }
        Command::AblateLevels { ratio, seeds, common } => {
            let r = query_level_ablation(&common.benchmark()?, ratio, &ablation_subsets(), &seeds)?;
            report(&r, &common.out)?;
        }
        Command::SweepK { ratio, ks, common } => {
            report(&k_sweep(&common.benchmark()?, ratio, &ks)?, &common.out)?;
        }
        Command::SweepSeeds { ratio, seeds, common } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let r = seed_sensitivity(&common.benchmark()?, ratio, &seeds)?;
            let (mean, std) = mean_std(&r.cells.iter().map(|c| c.miou()).collect::<Vec<_>>());
            report(&r, &common.out)?;
            println!("mIoU mean {mean:.4}, std {std:.4}");
        }
        Command::Serve {
            cloud,
            ratio,
            port,
            host,
            seed,
            reference_cell,
            class_names,
            labels_out,
        } => {
            let cloud = load(&cloud)?;
            let router = service::router(
                &cloud,
                service::ServiceConfig {
                    ratio,
                    seed,
                    reference_cell,
                    class_names,
                    labels_out,
                },
            )?;
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            tokio::runtime::Runtime::new()?.block_on(service::serve(router, addr))?;
        }
    }
    Ok(())
}
