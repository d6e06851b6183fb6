//! `thinktank` command-line tool.
//!
//! Works either in-process on a data directory (the default) or against a
//! running service (`--service URL`). Exit codes: 0 success, 2 invalid input
//! or state, 3 not found, 4 backend failure, 5 data integrity.

mod args;
mod backend;
mod error;
mod output;
mod remote;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use thinktank_core::model::{Media, MeetingConfig, MeetingId, MeetingKind, ProjectId};

use args::{Cli, Command, DocCmd, ExpertCmd, Global, MeetingCmd, MinutesCmd, ProjectCmd, RunArgs, ServeArgs};
use backend::{Backend, Embedded};
use error::{CliError, CliResult, EXIT_FAILURE};
use output::Output;
use remote::Remote;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(u8::try_from(err.code).unwrap_or(1))
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let out = Output::new(cli.global.output);
    if let Command::Serve(args) = &cli.command {
        return serve(&cli.global, args);
    }
    let backend: Box<dyn Backend> = match cli.global.remote() {
        Some(url) => Box::new(Remote::new(url)),
        None => Box::new(Embedded::open(&cli.global)?),
    };
    let b = backend.as_ref();
    match cli.command {
        Command::Project(cmd) => project(b, &out, cmd),
        Command::Expert(ExpertCmd::Add {
            project,
            name,
            persona_file,
        }) => {
            let persona = read_file(&persona_file)?;
            let expert = b.add_expert(&ProjectId(project.clone()), &name, &persona)?;
            out.emit("expert", &expert, || format!("added expert {} ({}) to {project}", expert.name, expert.id));
            Ok(())
        }
        Command::Doc(DocCmd::Ingest {
            project,
            expert,
            file,
            media,
            source_name,
        }) => {
            let media = match media {
                Some(m) => m.parse()?,
                None => media_from_extension(&file),
            };
            let content = read_file(&file)?;
            let source = source_name.unwrap_or_else(|| {
                file.file_name()
                    .map_or_else(|| file.display().to_string(), |n| n.to_string_lossy().into_owned())
            });
            let summary = b.ingest(&ProjectId(project), &expert, &source, &content, media)?;
            out.emit("document", &summary, || {
                format!(
                    "ingested {} as {} for {expert}: {} chunk(s)",
                    summary.document.source_name, summary.document.doc_id, summary.chunk_count
                )
            });
            Ok(())
        }
        Command::Warmup(args) => {
            let mut on_event = follower(&out, args.follow);
            let record = b.run_warmup(&ProjectId(args.project), &args.expert, &mut on_event)?;
            out.meeting(&record);
            Ok(())
        }
        Command::Meeting(MeetingCmd::Run(args)) => run_meeting(b, &out, args),
        Command::Meeting(MeetingCmd::List { project }) => {
            for m in b.meetings(&ProjectId(project))? {
                out.meeting(&m);
            }
            Ok(())
        }
        Command::Meeting(MeetingCmd::Show { meeting }) => {
            out.meeting(&b.meeting(&MeetingId(meeting))?);
            Ok(())
        }
        Command::Minutes(MinutesCmd::Show { meeting, out: path }) => minutes(b, &out, MeetingId(meeting), path.as_deref()),
        Command::Health => {
            let status = b.health()?;
            out.emit("health", &status, || {
                let mut s = if status.reachable {
                    format!("backend reachable, models: {}", status.models.join(", "))
                } else {
                    "backend unreachable".to_owned()
                };
                if let Some(w) = &status.warning {
                    s += &format!("\nwarning: {w}");
                }
                s
            });
            Ok(())
        }
        Command::Serve(_) => unreachable!("handled above"),
    }
}

fn project(b: &dyn Backend, out: &Output, cmd: ProjectCmd) -> CliResult<()> {
    match cmd {
        ProjectCmd::Create {
            title,
            description,
            objectives,
        } => out.project(&b.create_project(&title, &description, objectives)?),
        ProjectCmd::List => {
            let projects = b.projects()?;
            if projects.is_empty() && !out.is_json() {
                println!("no projects");
            }
            for p in projects {
                out.emit("project", &p, || {
                    format!(
                        "{}  {}  ({} expert(s), {} meeting(s))",
                        p.id,
                        p.title,
                        p.experts.len(),
                        p.meetings.len()
                    )
                });
            }
        }
        ProjectCmd::Show { id } => out.project(&b.project(&ProjectId(id))?),
    }
    Ok(())
}

fn run_meeting(b: &dyn Backend, out: &Output, args: RunArgs) -> CliResult<()> {
    let agenda = read_file(&args.agenda_file)?;
    let config = MeetingConfig {
        project_id: ProjectId(args.project),
        agenda,
        rounds: args.rounds,
        participants: args.experts,
        kind: MeetingKind::Team,
        retrieval_k: args.retrieval_k,
        context_budget: args.context_budget,
    };
    let mut on_event = follower(out, args.follow);
    let record = b.run_meeting(config, &mut on_event)?;
    out.meeting(&record);
    Ok(())
}

/// Event callback: prints events when following, otherwise ignores them.
fn follower(out: &Output, follow: bool) -> impl FnMut(&thinktank_core::model::MeetingEvent) + '_ {
    move |event| {
        if follow {
            out.event(event);
        }
    }
}

fn minutes(b: &dyn Backend, out: &Output, id: MeetingId, path: Option<&Path>) -> CliResult<()> {
    match (path, out.is_json()) {
        (None, true) => {
            let minutes = b.minutes(&id)?;
            out.emit("minutes", &minutes, String::new);
        }
        (None, false) => print!("{}", b.export_minutes(&id)?),
        (Some(path), _) => {
            let text = b.export_minutes(&id)?;
            std::fs::write(path, text).map_err(|e| CliError::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
            out.emit("file", &json!({"meeting_id": id, "path": path}), || {
                format!("minutes of {id} written to {}", path.display())
            });
        }
    }
    Ok(())
}

fn serve(global: &Global, args: &ServeArgs) -> CliResult<()> {
    if global.remote().is_some() {
        return Err(CliError::usage("serve runs on a data directory; drop --service"));
    }
    let engine = backend::engine(global)?;
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::new(EXIT_FAILURE, format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::new(EXIT_FAILURE, format!("cannot listen on {addr}: {e}")))?;
        eprintln!("serving {} on http://{addr}", global.data_dir.display());
        thinktank_service::serve(listener, engine)
            .await
            .map_err(|e| CliError::new(EXIT_FAILURE, format!("service stopped: {e}")))
    })
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn media_from_extension(path: &Path) -> Media {
    match path.extension().and_then(|e| e.to_str()) {
        Some("md" | "markdown") => Media::Markdown,
        _ => Media::PlainText,
    }
}
