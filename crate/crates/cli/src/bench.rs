use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use clap::{Subcommand, ValueEnum};
use cxr_core::grounding::{CoordinateConvention, GroundingBackend, StubGrounder};
use cxr_core::metrics::pct;
use cxr_core::par::Execution;
use cxr_core::pipeline::{load_localisation_cases, run_localisation_benchmark, Strategy};
use cxr_core::Error;
use cxr_http::HttpGrounder;

use crate::data::print_json;

#[derive(Clone, Copy, ValueEnum)]
pub enum ConventionArg {
    ImageSide,
    PatientSide,
}

impl From<ConventionArg> for CoordinateConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::ImageSide => CoordinateConvention::ImageSide,
            ConventionArg::PatientSide => CoordinateConvention::PatientSide,
        }
    }
}

#[derive(Subcommand)]
pub enum BenchCmd {
    /// Left/right localisation accuracy of a grounding backend.
    Localisation {
        #[arg(long)]
        cases: PathBuf,
        /// two-option or position.
        #[arg(long)]
        strategy: Strategy,
        /// Stub grounding table (JSON).
        #[arg(long, conflicts_with = "endpoint", required_unless_present = "endpoint")]
        fixture: Option<PathBuf>,
        /// Base URL of a grounding service.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
        #[arg(long, value_enum, default_value = "image-side")]
        convention: ConventionArg,
        #[arg(long)]
        json: bool,
    },
}

pub fn run(cmd: BenchCmd, exec: Execution) -> Result<()> {
    let BenchCmd::Localisation {
        cases,
        strategy,
        fixture,
        endpoint,
        timeout_ms,
        convention,
        json,
    } = cmd;
    let cases = load_localisation_cases(&cases)?;
    let backend: Box<dyn GroundingBackend> = match (fixture, endpoint) {
        (Some(f), _) => Box::new(StubGrounder::load(f)?),
        (None, Some(url)) => Box::new(HttpGrounder::new(&url, Duration::from_millis(timeout_ms))?),
        (None, None) => return Err(Error::invalid("pass --fixture or --endpoint").into()),
    };
    let report = run_localisation_benchmark(&cases, strategy, backend.as_ref(), convention.into(), exec)?;
    if json {
        return print_json(&report);
    }
    println!("cases       {}", report.cases);
    println!("undetected  {}", report.undetected);
    println!("abstained   {}", report.abstained);
    println!("correct     {} of {} decided", report.correct, report.decided);
    println!(
        "accuracy    {}% decided, {}% overall",
        pct(report.accuracy_decided),
        pct(report.accuracy_overall)
    );
    Ok(())
}
