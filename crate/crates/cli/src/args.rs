use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thinktank_core::knowledge::{DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use thinktank_core::llm::DEFAULT_LLM_URL;
use thinktank_core::model::{DEFAULT_CONTEXT_BUDGET, DEFAULT_RETRIEVAL_K};

#[derive(Debug, Parser)]
#[command(name = "thinktank", version, about = "Run structured multi-agent expert meetings")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Talk to a running service instead of opening the data directory.
    #[arg(long, global = true, env = "THINKTANK_SERVICE_URL", conflicts_with = "embedded")]
    pub service: Option<String>,

    /// Force embedded mode even if THINKTANK_SERVICE_URL is set.
    #[arg(long, global = true)]
    pub embedded: bool,

    #[arg(long, global = true, env = "THINKTANK_DATA_DIR", default_value = "thinktank-data")]
    pub data_dir: PathBuf,

    #[arg(long, global = true, env = "THINKTANK_LLM_URL", default_value = DEFAULT_LLM_URL)]
    pub llm_url: String,

    #[arg(long, global = true, env = "THINKTANK_MODEL", default_value = "llama3.1")]
    pub model: String,

    /// `scripted` answers from a canned script and needs no model server.
    #[arg(long, global = true, env = "THINKTANK_BACKEND", value_enum, default_value_t = BackendKind::Ollama)]
    pub backend: BackendKind,

    /// Rules for the scripted backend (JSON); defaults to the built-in script.
    #[arg(long, global = true, env = "THINKTANK_SCRIPT")]
    pub script: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,

    #[arg(long, global = true, default_value_t = DEFAULT_CHUNK_OVERLAP)]
    pub chunk_overlap: usize,

    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Human)]
    pub output: OutputFormat,
}

impl Global {
    pub fn remote(&self) -> Option<&str> {
        if self.embedded {
            None
        } else {
            self.service.as_deref()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Ollama,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Human,
    /// One JSON object per line.
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(subcommand)]
    Project(ProjectCmd),
    #[command(subcommand)]
    Expert(ExpertCmd),
    #[command(subcommand)]
    Doc(DocCmd),
    /// Have an expert study its knowledge base.
    Warmup(WarmupArgs),
    #[command(subcommand)]
    Meeting(MeetingCmd),
    #[command(subcommand)]
    Minutes(MinutesCmd),
    /// Report whether the LLM backend is reachable.
    Health,
    /// Serve the HTTP API over the data directory.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum ProjectCmd {
    Create {
        #[arg(long)]
        title: String,
        #[arg(long, default_value = "")]
        description: String,
        /// Repeat for several objectives.
        #[arg(long = "objective")]
        objectives: Vec<String>,
    },
    List,
    Show {
        /// Project id.
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExpertCmd {
    Add {
        #[arg(long)]
        project: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        persona_file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DocCmd {
    Ingest {
        #[arg(long)]
        project: String,
        #[arg(long)]
        expert: String,
        #[arg(long)]
        file: PathBuf,
        /// plain_text, markdown or pdf_extracted (text already extracted).
        #[arg(long)]
        media: Option<String>,
        /// Name recorded in citations; defaults to the file name.
        #[arg(long)]
        source_name: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct WarmupArgs {
    #[arg(long)]
    pub project: String,
    #[arg(long)]
    pub expert: String,
    #[arg(long)]
    pub follow: bool,
}

#[derive(Debug, Subcommand)]
pub enum MeetingCmd {
    Run(RunArgs),
    List {
        #[arg(long)]
        project: String,
    },
    Show {
        #[arg(long)]
        meeting: String,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub project: String,
    #[arg(long)]
    pub agenda_file: PathBuf,
    #[arg(long)]
    pub rounds: u32,
    /// Comma-separated expert names, in speaking order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub experts: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_RETRIEVAL_K)]
    pub retrieval_k: usize,
    #[arg(long, default_value_t = DEFAULT_CONTEXT_BUDGET)]
    pub context_budget: usize,
    /// Print events as they happen.
    #[arg(long)]
    pub follow: bool,
}

#[derive(Debug, Subcommand)]
pub enum MinutesCmd {
    Show {
        #[arg(long)]
        meeting: String,
        /// Write the minutes here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "THINKTANK_PORT", default_value_t = thinktank_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}
