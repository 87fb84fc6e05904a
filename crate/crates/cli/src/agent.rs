use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Subcommand;
use cxr_core::embedding_store::load_frame;
use cxr_core::generation::{GenerationBackend, ReplayBackend, TemplateEngine};
use cxr_core::grounding::{GroundingBackend, StubGrounder};
use cxr_core::par::Execution;
use cxr_core::pipeline::{resolve_user_prompt, Agent, AgentConfig, GroundingSource, TEMPLATE_ENGINE_ID};
use cxr_core::Error;
use cxr_http::{HttpGenerator, HttpGrounder};
use serde::{Deserialize, Serialize};

use crate::data::{print_json, read_embedding};

const GENERATION_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Subcommand)]
pub enum AgentCmd {
    /// Findings for one scan.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image_id: String,
        /// Single-row embedding file or JSON array of floats.
        #[arg(long)]
        embedding: PathBuf,
        /// Prompt name (findings, list) or literal prompt text.
        #[arg(long, default_value = "findings")]
        prompt: String,
        /// Print the report and the full pipeline trace as JSON.
        #[arg(long)]
        json_trace: bool,
        /// Answer generation requests from recorded responses.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Findings for every scan in a dataset; one JSON file per scan.
    Batch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        replay: Option<PathBuf>,
    },
}

/// Batch job description. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchManifest {
    pub config: PathBuf,
    #[serde(default = "default_prompt")]
    pub prompt: String,
    /// Dataset manifest supplying the image ids.
    pub dataset: PathBuf,
    pub embeddings: PathBuf,
    /// Restrict the run to these scans.
    #[serde(default)]
    pub image_ids: Option<Vec<String>>,
}

fn default_prompt() -> String {
    "findings".into()
}

#[derive(Serialize)]
struct BatchSummary {
    scans: usize,
    succeeded: usize,
    failed: Vec<BatchFailure>,
}

#[derive(Serialize)]
struct BatchFailure {
    image_id: String,
    error: String,
}

pub fn build_agent(config_path: &Path, replay: Option<&Path>, exec: Execution) -> Result<Agent> {
    let config = AgentConfig::load(config_path).with_context(|| format!("loading {}", config_path.display()))?;
    let grounder: Arc<dyn GroundingBackend> = match &config.grounding {
        GroundingSource::Stub { fixture } => Arc::new(StubGrounder::load(fixture)?),
        GroundingSource::Http { endpoint, timeout_ms } => {
            Arc::new(HttpGrounder::new(endpoint, Duration::from_millis(*timeout_ms))?)
        }
    };
    let engine = config.resolve_engine()?;
    let generator: Arc<dyn GenerationBackend> = match (replay, &engine.endpoint) {
        (Some(path), _) => Arc::new(ReplayBackend::load(path)?),
        (None, Some(_)) => Arc::new(HttpGenerator::for_engine(&engine, GENERATION_TIMEOUT)?),
        (None, None) if engine.engine_id == TEMPLATE_ENGINE_ID => Arc::new(TemplateEngine),
        (None, None) => {
            return Err(Error::invalid(format!(
                "engine {:?} has no endpoint; pass --replay or use the {TEMPLATE_ENGINE_ID} engine",
                engine.engine_id
            ))
            .into())
        }
    };
    Ok(Agent::from_config(&config, grounder, generator)?.with_execution(exec))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn file_stem_for(image_id: &str) -> String {
    image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn run(cmd: AgentCmd, exec: Execution) -> Result<()> {
    match cmd {
        AgentCmd::Run {
            config,
            image_id,
            embedding,
            prompt,
            json_trace,
            replay,
        } => {
            let agent = build_agent(&config, replay.as_deref(), exec)?;
            let x = read_embedding(&embedding)?;
            let (report, trace) = agent.run_findings(&image_id, &x, &resolve_user_prompt(&prompt))?;
            if json_trace {
                print_json(&serde_json::json!({ "report": report, "trace": trace }))
            } else {
                println!("{}", report.text);
                Ok(())
            }
        }
        AgentCmd::Batch { manifest, out, replay } => {
            let text = std::fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let job: BatchManifest =
                serde_json::from_str(&text).map_err(|e| Error::format(format!("batch manifest: {e}")))?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let agent = build_agent(&resolve(base, &job.config), replay.as_deref(), exec)?;
            let frame = load_frame(resolve(base, &job.dataset), resolve(base, &job.embeddings))?;
            let mut scans: Vec<(String, Vec<f32>)> = frame
                .records()
                .iter()
                .enumerate()
                .map(|(i, r)| (r.image_id.clone(), frame.embeddings().row(i).to_vec()))
                .collect();
            if let Some(ids) = &job.image_ids {
                for id in ids {
                    if !scans.iter().any(|(s, _)| s == id) {
                        return Err(Error::NotFound(format!("image {id:?} is not in the dataset")).into());
                    }
                }
                scans.retain(|(id, _)| ids.contains(id));
            }
            std::fs::create_dir_all(&out)?;
            let results = agent.run_batch(&scans, &resolve_user_prompt(&job.prompt));
            let mut summary = BatchSummary {
                scans: scans.len(),
                succeeded: 0,
                failed: Vec::new(),
            };
            let mut first_error = None;
            for ((id, _), r) in scans.iter().zip(results) {
                match r {
                    Ok((report, trace)) => {
                        let body = serde_json::json!({ "report": report, "trace": trace });
                        let path = out.join(format!("{}.json", file_stem_for(id)));
                        std::fs::write(&path, serde_json::to_string_pretty(&body)?)?;
                        summary.succeeded += 1;
                    }
                    Err(e) => {
                        summary.failed.push(BatchFailure {
                            image_id: id.clone(),
                            error: e.to_string(),
                        });
                        first_error.get_or_insert(e);
                    }
                }
            }
            std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            eprintln!("{} of {} scans succeeded", summary.succeeded, summary.scans);
            match first_error {
                Some(e) => Err(anyhow::Error::from(e).context(format!("{} scans failed", summary.failed.len()))),
                None => Ok(()),
            }
        }
    }
}
