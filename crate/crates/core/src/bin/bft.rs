use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use bft_core::assembly::{
    assemble_target, fuse, load_model, load_target, network_transfer_init, save_target, snet_head,
    train_target,
};
use bft_core::bank::{build_bank, load_bank, sample, save_bank, BankSource};
use bft_core::experiments::protocol::shuffle_below;
use bft_core::experiments::{
    emit_curves, emit_report, write_glyph_dataset, ExperimentConfig, GlyphConfig, ReportFormat,
    ShuffleMode, TaskSpec, Workbench,
};
use bft_core::model::{init_net, load_net, save_net, train, Hyper, LrSchedule, NetSpec};
use bft_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "bft",
    version,
    about = "Bank-of-filter-trees transfer learning on a small CNN engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the procedural glyph dataset as IDX files.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        train_per_class: usize,
        #[arg(long, default_value_t = 300)]
        test_per_class: usize,
        #[arg(long, default_value_t = GlyphConfig::default().seed)]
        seed: u64,
    },
    /// Train a network from scratch on a task.
    Train {
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "snet")]
        arch: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Pool every layer-k filter-tree of the given networks into a bank.
    ExtractBank {
        #[arg(long, value_delimiter = ',', required = true)]
        nets: Vec<PathBuf>,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample n trees from a bank and fuse them under a fresh head.
    Assemble {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "snet-tail")]
        head: String,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the head of an assembled target network.
    TransferTrain {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Conventional transfer from one network, optionally shuffled.
    BaselineNet {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long, value_enum)]
        shuffle: Option<ShuffleArg>,
        #[arg(long, default_value_t = 0)]
        perm_seed: u64,
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Full leave-one-out sweep from a JSON configuration.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Also save the scratch source networks here.
        #[arg(long)]
        nets_dir: Option<PathBuf>,
    },
    /// Test accuracy of a network or target file on a task.
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        task: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ShuffleArg {
    Consistent,
    Destructive,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 20)]
    eval_every: usize,
    /// Keep the learning rate fixed instead of cosine decay.
    #[arg(long)]
    constant_lr: bool,
}

impl HyperArgs {
    fn hyper(&self) -> Hyper {
        Hyper {
            lr: self.lr,
            momentum: self.momentum,
            batch: self.batch,
            iterations: self.iters,
            eval_every: self.eval_every,
            seed: self.seed,
            parallel: false,
            schedule: if self.constant_lr {
                LrSchedule::Constant
            } else {
                LrSchedule::Cosine
            },
        }
    }
}

fn arch_spec(arch: &str, classes: usize) -> Result<NetSpec> {
    match arch {
        "snet" => Ok(NetSpec::snet(classes)),
        other => Err(Error::InvalidArgument(format!(
            "unknown architecture {other:?}"
        ))),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn final_acc(h: &bft_core::model::TrainHistory) -> Option<f64> {
    h.evals.last().map(|e| e.accuracy)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::GenData {
            out,
            train_per_class,
            test_per_class,
            seed,
        } => {
            let cfg = GlyphConfig {
                train_per_class,
                test_per_class,
                seed,
                ..GlyphConfig::default()
            };
            write_glyph_dataset(&out, &cfg)?;
            Ok(json!({ "out": out, "train": train_per_class * 10, "test": test_per_class * 10 }))
        }
        Command::Train {
            task,
            arch,
            out,
            hyper,
        } => {
            let task = TaskSpec::parse(&task)?;
            let data = task.load()?;
            let spec = arch_spec(&arch, task.num_classes())?;
            let hyper = hyper.hyper();
            let (params, history) = train(&spec, &init_net(&spec, hyper.seed), 0, &data, &hyper)?;
            save_net(&spec, &params, &out)?;
            Ok(json!({ "out": out, "final_acc": final_acc(&history), "curve": history.evals }))
        }
        Command::ExtractBank { nets, layer, out } => {
            let loaded = nets
                .iter()
                .map(|p| Ok((stem(p), load_net(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let sources: Vec<BankSource> = loaded
                .iter()
                .map(|(id, (spec, params))| BankSource {
                    spec,
                    params,
                    source_id: id,
                    task: id,
                })
                .collect();
            let bank = build_bank(&sources, layer)?;
            save_bank(&bank, &out)?;
            Ok(json!({ "out": out, "entries": bank.len(), "apex_layer": layer }))
        }
        Command::Assemble {
            bank,
            n,
            seed,
            head,
            classes,
            out,
        } => {
            let bank = load_bank(&bank)?;
            let selection = sample(&bank, n, seed)?;
            let prefix = fuse(&bank, &selection)?;
            let arch = head.strip_suffix("-tail").ok_or_else(|| {
                Error::InvalidArgument(format!("unknown head {head:?}; expected <arch>-tail"))
            })?;
            let head_spec = snet_head(&arch_spec(arch, classes)?, bank.apex_layer(), n, classes)?;
            let branches = prefix.branches.len();
            let target = assemble_target(prefix, head_spec, seed)?;
            save_target(&target, &out)?;
            Ok(json!({ "out": out, "selection": selection.indices, "branches": branches }))
        }
        Command::TransferTrain {
            target,
            task,
            out,
            hyper,
        } => {
            let target = load_target(&target)?;
            let data = TaskSpec::parse(&task)?.load()?;
            let (trained, history) = train_target(&target, &data, &hyper.hyper())?;
            save_target(&trained, &out)?;
            Ok(json!({ "out": out, "final_acc": final_acc(&history), "curve": history.evals }))
        }
        Command::BaselineNet {
            source,
            layer,
            shuffle,
            perm_seed,
            task,
            out,
            hyper,
        } => {
            let (spec, params) = load_net(&source)?;
            let task = TaskSpec::parse(&task)?;
            let data = task.load()?;
            let params = match shuffle {
                None => params,
                Some(ShuffleArg::Consistent) => {
                    shuffle_below(&spec, &params, layer, ShuffleMode::Consistent, perm_seed)?
                }
                Some(ShuffleArg::Destructive) => {
                    shuffle_below(&spec, &params, layer, ShuffleMode::Destructive, perm_seed)?
                }
            };
            let hyper = hyper.hyper();
            let target = network_transfer_init(
                &spec,
                &params,
                &stem(&source),
                layer,
                hyper.seed,
                task.num_classes(),
            )?;
            let (trained, history) = train_target(&target, &data, &hyper)?;
            if let Some(out) = &out {
                save_target(&trained, out)?;
            }
            Ok(json!({ "final_acc": final_acc(&history), "curve": history.evals, "out": out }))
        }
        Command::Experiment {
            config,
            out,
            csv,
            curves,
            nets_dir,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let config: ExperimentConfig = serde_json::from_str(&text)?;
            let bench = Workbench::prepare(config)?;
            if let Some(dir) = &nets_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                for s in &bench.sources {
                    save_net(&s.spec, &s.params, dir.join(format!("{}.cnn", s.id)))?;
                }
            }
            let reports = bench.sweep()?;
            emit_report(&reports, &out, ReportFormat::Json)?;
            if let Some(csv) = &csv {
                emit_report(&reports, csv, ReportFormat::Csv)?;
            }
            if let Some(curves) = &curves {
                emit_curves(&reports, curves)?;
            }
            let summary: Vec<_> = reports
                .iter()
                .map(|r| json!({ "protocol": r.config.protocol, "task": r.config.task, "mean": r.summary.mean, "std": r.summary.std }))
                .collect();
            Ok(json!({ "out": out, "reports": summary }))
        }
        Command::Eval { net, task } => {
            let model = load_model(&net)?;
            let data = TaskSpec::parse(&task)?.load()?;
            Ok(
                json!({ "accuracy": model.evaluate(&data.test, false)?, "examples": data.test.len() }),
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = json!({ "error": e.kind(), "code": e.code(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(e.code().clamp(1, 255) as u8)
        }
    }
}
