use std::path::PathBuf;

use anyhow::Result;
use clap::{Subcommand, ValueEnum};
use cxr_core::embedding_store::{class_counts, save_frame};
use cxr_core::metrics::{accuracy_table, num};
use cxr_core::par::Execution;
use cxr_core::probe::{
    evaluate, grid_search, leaderboard_table, train, GridSearchSpace, Optimizer, ProbeWeights, SelectionMetric,
    TrainConfig,
};
use cxr_core::synthetic::{generate, SyntheticSpec};
use cxr_core::types::DEFAULT_DECISION_THRESHOLD;
use cxr_core::Error;

use crate::data::{print_json, FrameArgs};

#[derive(Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MetricArg {
    ExactMatch,
    SingleMatch,
    MacroAuc,
}

impl From<MetricArg> for SelectionMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::ExactMatch => SelectionMetric::ExactMatch,
            MetricArg::SingleMatch => SelectionMetric::SingleMatch,
            MetricArg::MacroAuc => SelectionMetric::MacroAuc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PartArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(clap::Args, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "sgd")]
    optimizer: OptimizerArg,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig::new(
            self.batch_size,
            self.epochs,
            self.lr,
            self.seed,
            self.optimizer.into(),
        )?)
    }
}

#[derive(Subcommand)]
pub enum ProbeCmd {
    /// Fit a probe on the train part.
    Train {
        #[command(flatten)]
        data: FrameArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Where to write the weights.
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search on train/val; optionally saves the best probe.
    Grid {
        #[command(flatten)]
        data: FrameArgs,
        /// Seed and optimizer shared by every configuration.
        #[command(flatten)]
        train: TrainArgs,
        /// JSON file with batch_sizes, epochs_options and learning_rates.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "exact-match")]
        metric: MetricArg,
        /// Retrain the winner and write its weights here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Accuracy, AUC and top-1 on one part of a dataset.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        data: FrameArgs,
        #[arg(long, value_enum, default_value = "test")]
        part: PartArg,
        #[arg(long, default_value_t = DEFAULT_DECISION_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic dataset with planted linear structure.
    Synth {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn run(cmd: ProbeCmd, exec: Execution) -> Result<()> {
    match cmd {
        ProbeCmd::Train { data, train: t, out } => {
            let parts = data.parts()?;
            let w = train(&parts.train, &t.config()?)?;
            w.save(&out)?;
            let loss = w.provenance().and_then(|p| p.final_loss()).unwrap_or(f64::NAN);
            println!("trained on {} scans, final loss {loss:.6}", parts.train.len());
            if !parts.val.is_empty() {
                let ev = evaluate(&w, &parts.val, DEFAULT_DECISION_THRESHOLD, exec)?;
                println!(
                    "validation: exact match {:.4}, macro AUC {}",
                    ev.accuracy.overall,
                    num(ev.auc.macro_average, 4)
                );
            }
            Ok(())
        }
        ProbeCmd::Grid {
            data,
            train: t,
            space,
            metric,
            out,
            json,
        } => {
            let parts = data.parts()?;
            let space = match space {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .map_err(|e| Error::format(format!("{}: {e}", p.display())))?,
                None => GridSearchSpace::default(),
            };
            let base = t.config()?;
            let result = grid_search(&parts.train, &parts.val, &space, metric.into(), &base, exec)?;
            if let Some(out) = out {
                train(&parts.train, &result.best)?.save(&out)?;
            }
            if json {
                print_json(&result)
            } else {
                print!("{}", leaderboard_table(&result));
                println!(
                    "best: batch {}, epochs {}, lr {:e}",
                    result.best.batch_size, result.best.epochs, result.best.learning_rate
                );
                Ok(())
            }
        }
        ProbeCmd::Eval {
            weights,
            data,
            part,
            threshold,
            json,
        } => {
            let w = ProbeWeights::load(&weights)?;
            let frame = match part {
                PartArg::All => data.load()?,
                p => {
                    let parts = data.parts()?;
                    match p {
                        PartArg::Train => parts.train,
                        PartArg::Val => parts.val,
                        _ => parts.test,
                    }
                }
            };
            if frame.is_empty() {
                return Err(Error::invalid("selected part is empty").into());
            }
            if w.label_set().labels() != frame.label_set().labels() {
                return Err(Error::Consistency("probe and dataset label sets differ".into()).into());
            }
            let ev = evaluate(&w, &frame, threshold, exec)?;
            if json {
                return print_json(&ev);
            }
            print!("{}", accuracy_table([("probe", &ev.accuracy)]));
            println!("macro AUC {}", num(ev.auc.macro_average, 4));
            for (label, auc) in frame.label_set().labels().iter().zip(&ev.auc.per_label) {
                println!("  {label}: {}", num(*auc, 4));
            }
            println!("top-1 {:.4}", ev.top1);
            Ok(())
        }
        ProbeCmd::Synth {
            manifest,
            embeddings,
            rows,
            dim,
            seed,
        } => {
            let s = generate(&SyntheticSpec {
                rows,
                dim,
                seed,
                ..SyntheticSpec::default()
            })?;
            save_frame(&s.frame, &manifest, &embeddings)?;
            println!("{} rows, dim {dim}", s.frame.len());
            for (label, n) in class_counts(&s.frame).as_map() {
                println!("  {label}: {n}");
            }
            Ok(())
        }
    }
}
