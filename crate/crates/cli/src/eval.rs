use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Subcommand, ValueEnum};
use cxr_core::evaluation::{load_cases, results_table, DatasetTag, EvalStore, ResultsFilter};
use cxr_core::grounding::StubGrounder;
use cxr_http::{router, serve, stub_router, AppState};

use crate::data::print_json;

#[derive(Clone, Copy, ValueEnum)]
pub enum TagArg {
    Mimic,
    Chexpert,
    Other,
}

impl From<TagArg> for DatasetTag {
    fn from(t: TagArg) -> Self {
        match t {
            TagArg::Mimic => DatasetTag::Mimic,
            TagArg::Chexpert => DatasetTag::Chexpert,
            TagArg::Other => DatasetTag::Other,
        }
    }
}

#[derive(Subcommand)]
pub enum EvalCmd {
    /// Serve the evaluation API over an append-only log.
    Serve {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory served under /images.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Require this bearer token on API calls.
        #[arg(long, env = "CXR_EVAL_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
    /// Add evaluation cases (JSON array) to a log.
    Import {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        cases: PathBuf,
    },
    /// Aggregate scores from a log.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum)]
        dataset_tag: Option<TagArg>,
        #[arg(long)]
        abnormal: Option<bool>,
        #[arg(long)]
        rater_id: Option<String>,
        #[arg(long)]
        session_id: Option<String>,
        /// Plain-text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
}

#[derive(Subcommand)]
pub enum StubCmd {
    /// Serve /ground from a stub table and /v1/generate from the template engine.
    Serve {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8090")]
        addr: String,
    },
}

fn open(log: &PathBuf) -> Result<EvalStore> {
    EvalStore::open(log).with_context(|| format!("opening {}", log.display()))
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

pub fn run(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Serve {
            log,
            addr,
            images,
            token,
        } => {
            let state = AppState {
                store: Arc::new(open(&log)?),
                token,
            };
            eprintln!("listening on {addr}");
            runtime()?.block_on(serve(&addr, router(state, images)))?;
            Ok(())
        }
        EvalCmd::Import { log, cases } => {
            let n = open(&log)?.import_cases(load_cases(&cases)?)?;
            println!("imported {n} cases");
            Ok(())
        }
        EvalCmd::Export {
            log,
            dataset_tag,
            abnormal,
            rater_id,
            session_id,
            table,
        } => {
            let filter = ResultsFilter {
                dataset_tag: dataset_tag.map(Into::into),
                abnormal,
                rater_id,
                session_id,
            };
            let export = open(&log)?.export_results(&filter)?;
            if table {
                print!("{}", results_table(&export));
                Ok(())
            } else {
                print_json(&export)
            }
        }
    }
}

pub fn run_stub(cmd: StubCmd) -> Result<()> {
    let StubCmd::Serve { fixture, addr } = cmd;
    let grounder = StubGrounder::load(&fixture)?;
    eprintln!("listening on {addr}");
    runtime()?.block_on(serve(&addr, stub_router(grounder)))?;
    Ok(())
}
