//! Scratch, filter-tree-bank, network-transfer and shuffled-transfer runs
//! with leave-one-out source rotation.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idx::load_idx_dir;
use super::report::{ConfigEcho, EnvStamp, RunReport, Summary, TrialResult};
use super::tasks::{default_subsets, make_disjoint_tasks, TaskSpec};
use crate::assembly::{
    assemble_target, fuse, network_transfer_init, shuffle_filters, snet_head, train_target,
};
use crate::bank::{build_bank, sample, BankSource, FilterBank};
use crate::error::{Error, Result};
use crate::model::{
    init_net, train, Hyper, LrSchedule, NetParams, NetSpec, TaskData, TrainHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Every layer trained from a random start.
    Scratch,
    /// Frozen prefix fused from `n` trees sampled from the other tasks' nets.
    Bft,
    /// Frozen layers `1..=k` of one other task's net.
    Net,
    /// Frozen layers `1..=k` of the target task's own net.
    SameTaskNet,
    /// As `SameTaskNet`, after shuffling the filters of layers `1..k`.
    ShuffledNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    /// Compensated in the consuming layer; the function is unchanged.
    Consistent,
    /// Uncompensated; learnt features are broken.
    #[default]
    Destructive,
}

fn default_arch() -> String {
    "snet".into()
}

fn default_margin() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_arch")]
    pub arch: String,
    pub data_dir: PathBuf,
    #[serde(default = "default_subsets")]
    pub subsets: Vec<Vec<u8>>,
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: Option<usize>,
    pub k: usize,
    pub n: usize,
    pub protocols: Vec<Protocol>,
    pub hyper: Hyper,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub shuffle: ShuffleMode,
    /// Convergence threshold is the scratch mean accuracy minus this.
    #[serde(default = "default_margin")]
    pub threshold_margin: f64,
    /// Task indices used as targets; all when absent.
    #[serde(default)]
    pub targets: Option<Vec<usize>>,
}

impl ExperimentConfig {
    /// The desk-scale setup: five 2-class tasks, S-Net, `k = 3`, `n = 32`,
    /// five trials, 300 iterations of cosine-decayed SGD.
    pub fn desk_default(data_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            arch: default_arch(),
            data_dir: data_dir.into(),
            subsets: default_subsets(),
            train_per_class: Some(1000),
            test_per_class: Some(300),
            k: 3,
            n: 32,
            protocols: vec![Protocol::Scratch, Protocol::Bft, Protocol::Net],
            hyper: Hyper {
                lr: 0.02,
                momentum: 0.9,
                batch: 16,
                iterations: 300,
                eval_every: 20,
                seed: 0,
                parallel: false,
                schedule: LrSchedule::Cosine,
            },
            trials: 5,
            master_seed: 1,
            shuffle: ShuffleMode::Destructive,
            threshold_margin: default_margin(),
            targets: None,
        }
    }

    pub fn spec(&self, num_classes: usize) -> Result<NetSpec> {
        match self.arch.as_str() {
            "snet" => Ok(NetSpec::snet(num_classes)),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture {other:?}"
            ))),
        }
    }

    /// Seed of trial `t`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.master_seed.wrapping_add(trial as u64)
    }
}

/// Initialization seed for a network trained on task `task` in a trial:
/// distinct tasks start from distinct weights under one trial seed.
pub fn init_seed(trial_seed: u64, task: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(1 + task as u64);
    rand::Rng::random(&mut rng)
}

/// A trained network offered as a transfer source.
#[derive(Debug, Clone)]
pub struct SourceNet {
    pub id: String,
    pub task: String,
    pub spec: NetSpec,
    pub params: NetParams,
}

fn final_accuracy(h: &TrainHistory) -> Result<f64> {
    h.evals
        .last()
        .map(|e| e.accuracy)
        .ok_or_else(|| Error::InvalidArgument("training recorded no evaluation".into()))
}

fn trial_hyper(config: &ExperimentConfig, seed: u64) -> Hyper {
    Hyper {
        seed,
        ..config.hyper.clone()
    }
}

fn finish_report(
    config: &ExperimentConfig,
    protocol: Protocol,
    task: &str,
    k: usize,
    n: usize,
    threshold: Option<f64>,
    per_trial: Vec<TrialResult>,
) -> RunReport {
    let accs: Vec<f64> = per_trial.iter().map(|t| t.final_acc).collect();
    let mut report = RunReport {
        config: ConfigEcho {
            arch: config.arch.clone(),
            protocol,
            task: task.to_string(),
            k,
            n,
            trials: config.trials,
            master_seed: config.master_seed,
            hyper: config.hyper.clone(),
            threshold: None,
            head_init: "random".into(),
        },
        summary: Summary::of(&accs),
        per_trial,
        env: EnvStamp::current(!config.hyper.parallel),
    };
    if let Some(t) = threshold {
        report.set_threshold(t);
    }
    report
}

fn trial_result(
    trial: usize,
    seed: u64,
    history: &TrainHistory,
    sources: Vec<String>,
) -> Result<TrialResult> {
    Ok(TrialResult {
        trial,
        seed,
        final_acc: final_accuracy(history)?,
        iters_to_threshold: None,
        curve: history.evals.clone(),
        sources,
    })
}

/// Trains `config.trials` networks from scratch on `data`. Returns the
/// report and the trained parameters of every trial.
pub fn run_scratch(
    config: &ExperimentConfig,
    task_index: usize,
    task: &str,
    data: &TaskData,
) -> Result<(RunReport, Vec<NetParams>)> {
    let spec = config.spec(data.train.num_classes)?;
    let mut trials = Vec::with_capacity(config.trials);
    let mut nets = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let seed = config.trial_seed(t);
        let params = init_net(&spec, init_seed(seed, task_index));
        let (trained, history) = train(&spec, &params, 0, data, &trial_hyper(config, seed))?;
        trials.push(trial_result(t, seed, &history, vec![])?);
        nets.push(trained);
    }
    let mut report = finish_report(config, Protocol::Scratch, task, 0, 0, None, trials);
    report.set_threshold(report.summary.mean - config.threshold_margin);
    Ok((report, nets))
}

/// One seeded random permutation of `0..n`.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

/// Shuffles the filters of conv layers `1..k` of a network.
pub fn shuffle_below(
    spec: &NetSpec,
    params: &NetParams,
    k: usize,
    mode: ShuffleMode,
    seed: u64,
) -> Result<NetParams> {
    let mut p = params.clone();
    for l in 1..k.min(spec.conv_count()) {
        let perm = random_permutation(
            spec.filters_in(l)?,
            seed.wrapping_mul(31).wrapping_add(l as u64),
        );
        p = shuffle_filters(spec, &p, l, &perm, mode == ShuffleMode::Consistent)?;
    }
    Ok(p)
}

pub fn make_bank(sources: &[SourceNet], k: usize) -> Result<FilterBank> {
    let offered: Vec<BankSource> = sources
        .iter()
        .map(|s| BankSource {
            spec: &s.spec,
            params: &s.params,
            source_id: &s.id,
            task: &s.task,
        })
        .collect();
    build_bank(&offered, k)
}

/// Runs a transfer protocol at depth `k` (and `n` trees for the bank).
///
/// `sources` are the other tasks' nets for `Bft` and `Net`, and the target
/// task's own net for the same-task protocols.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol(
    config: &ExperimentConfig,
    protocol: Protocol,
    task: &str,
    data: &TaskData,
    sources: &[SourceNet],
    k: usize,
    n: usize,
    threshold: Option<f64>,
) -> Result<RunReport> {
    if protocol == Protocol::Scratch {
        return Err(Error::InvalidArgument(
            "use run_scratch for the scratch protocol".into(),
        ));
    }
    let first = sources
        .first()
        .ok_or_else(|| Error::Missing(format!("no source networks for {task}")))?;
    let classes = data.train.num_classes;
    let bank = if protocol == Protocol::Bft {
        let bank = make_bank(sources, k)?;
        if n > bank.len() {
            return Err(Error::Capacity {
                requested: n,
                available: bank.len(),
            });
        }
        Some(bank)
    } else {
        None
    };
    let mut trials = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let seed = config.trial_seed(t);
        let (target, used) = match protocol {
            Protocol::Bft => {
                let bank = bank.as_ref().unwrap();
                let selection = sample(bank, n, seed)?;
                let prefix = fuse(bank, &selection)?;
                let mut used: Vec<String> = prefix
                    .branches
                    .iter()
                    .map(|b| b.source_id.clone())
                    .collect();
                used.sort();
                (
                    assemble_target(prefix, snet_head(&first.spec, k, n, classes)?, seed)?,
                    used,
                )
            }
            Protocol::Net => {
                let src = &sources[t % sources.len()];
                (
                    network_transfer_init(&src.spec, &src.params, &src.id, k, seed, classes)?,
                    vec![src.id.clone()],
                )
            }
            Protocol::SameTaskNet => (
                network_transfer_init(&first.spec, &first.params, &first.id, k, seed, classes)?,
                vec![first.id.clone()],
            ),
            Protocol::ShuffledNet => {
                let shuffled = shuffle_below(&first.spec, &first.params, k, config.shuffle, seed)?;
                (
                    network_transfer_init(&first.spec, &shuffled, &first.id, k, seed, classes)?,
                    vec![first.id.clone()],
                )
            }
            Protocol::Scratch => unreachable!(),
        };
        let (_, history) = train_target(&target, data, &trial_hyper(config, seed))?;
        trials.push(trial_result(t, seed, &history, used)?);
    }
    let n_used = if protocol == Protocol::Bft { n } else { 0 };
    Ok(finish_report(
        config, protocol, task, k, n_used, threshold, trials,
    ))
}

/// Tasks, their data, scratch results and the trial-0 scratch nets that
/// serve as transfer sources.
pub struct Workbench {
    pub config: ExperimentConfig,
    pub tasks: Vec<TaskSpec>,
    pub data: Vec<TaskData>,
    pub scratch: Vec<RunReport>,
    pub sources: Vec<SourceNet>,
}

impl Workbench {
    /// Loads the tasks and trains the scratch baselines.
    pub fn prepare(config: ExperimentConfig) -> Result<Workbench> {
        if config.trials == 0 {
            return Err(Error::InvalidArgument(
                "at least one trial is required".into(),
            ));
        }
        let tasks = make_disjoint_tasks(
            &config.data_dir,
            &config.subsets,
            config.train_per_class,
            config.test_per_class,
        )?;
        let (train, test) = load_idx_dir(&config.data_dir)?;
        let data = tasks
            .iter()
            .map(|t| t.load_from(&train, &test))
            .collect::<Result<Vec<_>>>()?;
        drop((train, test));
        let mut scratch = Vec::with_capacity(tasks.len());
        let mut sources = Vec::with_capacity(tasks.len());
        for (i, (task, d)) in tasks.iter().zip(&data).enumerate() {
            let (report, mut nets) = run_scratch(&config, i, &task.name, d)?;
            sources.push(SourceNet {
                id: format!("{}-net", task.name),
                task: task.name.clone(),
                spec: config.spec(d.train.num_classes)?,
                params: nets.swap_remove(0),
            });
            scratch.push(report);
        }
        Ok(Workbench {
            config,
            tasks,
            data,
            scratch,
            sources,
        })
    }

    /// Every task's net except the target's.
    pub fn other_sources(&self, target: usize) -> Vec<SourceNet> {
        self.sources
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target)
            .map(|(_, s)| s.clone())
            .collect()
    }

    pub fn threshold(&self, target: usize) -> f64 {
        self.scratch[target].summary.mean - self.config.threshold_margin
    }

    pub fn run(&self, protocol: Protocol, target: usize, k: usize, n: usize) -> Result<RunReport> {
        if protocol == Protocol::Scratch {
            return Ok(self.scratch[target].clone());
        }
        let sources = match protocol {
            Protocol::SameTaskNet | Protocol::ShuffledNet => vec![self.sources[target].clone()],
            _ => self.other_sources(target),
        };
        run_protocol(
            &self.config,
            protocol,
            &self.tasks[target].name,
            &self.data[target],
            &sources,
            k,
            n,
            Some(self.threshold(target)),
        )
    }

    /// Every configured protocol on every target task.
    pub fn sweep(&self) -> Result<Vec<RunReport>> {
        let targets: Vec<usize> = self
            .config
            .targets
            .clone()
            .unwrap_or_else(|| (0..self.tasks.len()).collect());
        let mut reports = Vec::new();
        for &t in &targets {
            if t >= self.tasks.len() {
                return Err(Error::OutOfBounds(format!(
                    "target task {t} of {}",
                    self.tasks.len()
                )));
            }
            for &p in &self.config.protocols {
                reports.push(self.run(p, t, self.config.k, self.config.n)?);
            }
        }
        Ok(reports)
    }
}

/// Full leave-one-out sweep for a configuration.
pub fn run_sweep(config: ExperimentConfig) -> Result<Vec<RunReport>> {
    Workbench::prepare(config)?.sweep()
}
