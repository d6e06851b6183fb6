//! Role-specific prompt assembly.
//!
//! Every prompt is a system message describing the role plus one user message
//! made of labeled `## Section` blocks. Each section body is bounded by the
//! meeting's context budget.

use std::fmt::Write;

use crate::knowledge::Citation;
use crate::llm::{ChatMessage, ChatRequest, RequestTag, TurnKind};
use crate::memory::{render_recent, truncate_front, ScoredNote};
use crate::model::{AgentProfile, ExpertTurn, ProjectRecord, RoundRecord, COORDINATOR_NAME, CRITIC_NAME};

use super::EngineSettings;

pub const NONE: &str = "none";

pub const SECTION_PERSONA: &str = "Persona";
pub const SECTION_AGENDA: &str = "Agenda";
pub const SECTION_CARRIED: &str = "Carried Context";
pub const SECTION_GUIDANCE: &str = "Coordinator Guidance";
pub const SECTION_EARLIER: &str = "Earlier Contributions This Round";
pub const SECTION_RETRIEVED: &str = "Retrieved Knowledge";
pub const SECTION_NOTES: &str = "Recalled Notes";
pub const SECTION_CONTRIBUTIONS: &str = "Expert Contributions";
pub const SECTION_CRITIQUE: &str = "Critique";

pub const SYNTHESIS_HEADER: &str = "SYNTHESIS:";
pub const QUESTIONS_HEADER: &str = "FOLLOW-UP QUESTIONS:";

const CRITIC_INSTRUCTIONS: &str = "Examine the experts' contributions for fallacies, unstated \
assumptions, potential biases, and implementation risks. Be specific: quote or name the claim you \
are challenging and say what evidence or analysis is missing. End with one line of the form \
`Focus topic: <topic>` naming the issue that most needs deeper investigation.";

const SYNTHESIS_FORMAT: &str = "Reply in exactly this format and nothing else:\n\
SYNTHESIS:\n\
<the key discussion points, decisions, disagreements and criticisms of this round>\n\
\n\
FOLLOW-UP QUESTIONS:\n\
1. <question the team must answer next>\n\
2. <another question>";

pub(crate) struct Section<'a> {
    title: &'a str,
    body: String,
}

impl<'a> Section<'a> {
    pub(crate) fn new(title: &'a str, body: impl Into<String>) -> Self {
        let body = body.into();
        Self {
            title,
            body: if body.trim().is_empty() { NONE.to_owned() } else { body },
        }
    }
}

/// Renders sections, each body cut to `budget` characters keeping its tail.
pub(crate) fn render_sections(sections: &[Section<'_>], budget: usize) -> String {
    let mut out = String::new();
    for s in sections {
        let _ = write!(out, "## {}\n{}\n\n", s.title, truncate_front(s.body.trim_end(), budget));
    }
    out.trim_end().to_owned()
}

pub(crate) fn request(
    settings: &EngineSettings,
    kind: TurnKind,
    speaker: &str,
    round: u32,
    temperature: f32,
    system: String,
    user: String,
) -> ChatRequest {
    ChatRequest {
        model: settings.model.clone(),
        messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
        temperature,
        max_output_chars: settings.max_output_chars,
        timeout: settings.request_timeout,
        tag: RequestTag {
            kind,
            speaker: speaker.to_owned(),
            round,
        },
    }
}

/// Previous round's synthesis and follow-up questions, verbatim.
pub fn carried_context(previous: Option<&RoundRecord>) -> String {
    let Some(prev) = previous else {
        return String::new();
    };
    let mut out = format!("Round {} synthesis:\n{}\n", prev.round, prev.synthesis);
    if !prev.follow_up_questions.is_empty() {
        let _ = write!(out, "\nRound {} follow-up questions:\n", prev.round);
        out.push_str(&numbered(&prev.follow_up_questions));
    }
    out
}

pub fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}\n", i + 1))
        .collect()
}

fn render_turns(turns: &[ExpertTurn], budget: usize) -> String {
    render_recent(
        turns.iter().map(|t| format!("[{}]\n{}\n\n", t.speaker, t.content.trim_end())),
        budget,
    )
}

/// Keeps leading (best-ranked) items while they fit; an oversized first item
/// is shortened.
fn render_ranked(items: Vec<String>, budget: usize) -> String {
    let mut out = String::new();
    let mut used = 0;
    for item in items {
        let len = item.chars().count();
        if used + len > budget {
            if out.is_empty() {
                out = item.chars().take(budget).collect();
            }
            break;
        }
        used += len;
        out.push_str(&item);
    }
    out
}

pub fn render_citations(citations: &[Citation], budget: usize) -> String {
    render_ranked(
        citations
            .iter()
            .enumerate()
            .map(|(i, c)| {
                format!(
                    "[{}] {} (chunk {}, score {:.3})\n{}\n\n",
                    i + 1,
                    c.document.source_name,
                    c.scored.chunk.ordinal,
                    c.scored.score,
                    c.scored.chunk.text
                )
            })
            .collect(),
        budget,
    )
}

/// Warm-up excerpts: like citations but without retrieval scores.
pub fn render_excerpts(excerpts: &[Citation], budget: usize) -> String {
    render_ranked(
        excerpts
            .iter()
            .map(|c| {
                format!(
                    "[{} chunk {}]\n{}\n\n",
                    c.document.source_name, c.scored.chunk.ordinal, c.scored.chunk.text
                )
            })
            .collect(),
        budget,
    )
}

pub fn render_notes(notes: &[ScoredNote], budget: usize) -> String {
    render_ranked(
        notes
            .iter()
            .map(|n| format!("- ({}) {}\n", n.note.origin.as_str(), n.note.text.trim_end()))
            .collect(),
        budget,
    )
}

fn project_brief(project: &ProjectRecord) -> String {
    let mut out = format!("{}\n", project.title);
    if !project.description.trim().is_empty() {
        let _ = writeln!(out, "\n{}", project.description.trim_end());
    }
    if !project.objectives.is_empty() {
        out.push_str("\nObjectives:\n");
        for o in &project.objectives {
            let _ = writeln!(out, "- {o}");
        }
    }
    out
}

pub struct GuidanceInputs<'a> {
    pub project: &'a ProjectRecord,
    pub agenda: &'a str,
    pub round: u32,
    pub rounds: u32,
    pub participants: &'a [AgentProfile],
    pub carried_context: &'a str,
}

pub fn assemble_guidance_prompt(settings: &EngineSettings, input: &GuidanceInputs<'_>, budget: usize) -> ChatRequest {
    let coordinator = AgentProfile::coordinator();
    let roster: String = input
        .participants
        .iter()
        .map(|p| format!("- {}: {}\n", p.name, p.persona.lines().next().unwrap_or_default()))
        .collect();
    let user = render_sections(
        &[
            Section::new("Project", project_brief(input.project)),
            Section::new(SECTION_AGENDA, input.agenda),
            Section::new("Round", format!("{} of {}", input.round, input.rounds)),
            Section::new("Participants", roster),
            Section::new(SECTION_CARRIED, input.carried_context),
        ],
        budget,
    );
    let system = format!(
        "{}\n\nIssue the guidance for round {} of {}. Tell the experts what this round must settle, \
         building on the carried context when there is one, so that every contribution stays on the agenda.",
        coordinator.persona, input.round, input.rounds
    );
    request(
        settings,
        TurnKind::Guidance,
        COORDINATOR_NAME,
        input.round,
        settings.coordinator_temperature,
        system,
        user,
    )
}

pub struct ExpertInputs<'a> {
    pub expert: &'a AgentProfile,
    pub round: u32,
    pub agenda: &'a str,
    pub guidance: &'a str,
    pub prior_turns: &'a [ExpertTurn],
    pub carried_context: &'a str,
    pub retrieved: &'a [Citation],
    pub recalled_notes: &'a [ScoredNote],
}

pub fn assemble_expert_prompt(settings: &EngineSettings, input: &ExpertInputs<'_>, budget: usize) -> ChatRequest {
    let user = render_sections(
        &[
            Section::new(SECTION_PERSONA, input.expert.persona.as_str()),
            Section::new(SECTION_AGENDA, input.agenda),
            Section::new(SECTION_CARRIED, input.carried_context),
            Section::new(SECTION_GUIDANCE, input.guidance),
            Section::new(SECTION_EARLIER, render_turns(input.prior_turns, budget)),
            Section::new(SECTION_RETRIEVED, render_citations(input.retrieved, budget)),
            Section::new(SECTION_NOTES, render_notes(input.recalled_notes, budget)),
        ],
        budget,
    );
    let system = format!(
        "You are {}, a domain expert taking part in a structured team meeting. Contribute the insight \
         your expertise gives on the agenda, follow the coordinator's guidance, build on or challenge the \
         earlier contributions of this round, and cite retrieved sources by their [number] when you use them.",
        input.expert.name
    );
    request(
        settings,
        TurnKind::Expert,
        &input.expert.name,
        input.round,
        settings.expert_temperature,
        system,
        user,
    )
}

pub fn assemble_critic_prompt(
    settings: &EngineSettings,
    agenda: &str,
    round: u32,
    expert_turns: &[ExpertTurn],
    carried_context: &str,
    budget: usize,
) -> ChatRequest {
    let critic = AgentProfile::critical_thinker();
    let user = render_sections(
        &[
            Section::new(SECTION_AGENDA, agenda),
            Section::new(SECTION_CARRIED, carried_context),
            Section::new(SECTION_CONTRIBUTIONS, render_turns(expert_turns, budget)),
        ],
        budget,
    );
    let system = format!("{}\n\n{CRITIC_INSTRUCTIONS}", critic.persona);
    request(
        settings,
        TurnKind::Critique,
        CRITIC_NAME,
        round,
        settings.critic_temperature,
        system,
        user,
    )
}

pub struct SynthesisInputs<'a> {
    pub agenda: &'a str,
    pub round: u32,
    pub rounds: u32,
    pub guidance: &'a str,
    pub expert_turns: &'a [ExpertTurn],
    pub critique: &'a str,
}

pub fn assemble_synthesis_prompt(settings: &EngineSettings, input: &SynthesisInputs<'_>, budget: usize) -> ChatRequest {
    let coordinator = AgentProfile::coordinator();
    let user = render_sections(
        &[
            Section::new(SECTION_AGENDA, input.agenda),
            Section::new(SECTION_GUIDANCE, input.guidance),
            Section::new(SECTION_CONTRIBUTIONS, render_turns(input.expert_turns, budget)),
            Section::new(SECTION_CRITIQUE, input.critique),
        ],
        budget,
    );
    let next = if input.round < input.rounds {
        format!("The follow-up questions will open round {}.", input.round + 1)
    } else {
        "This is the final round; the follow-up questions are handed to the user for the next meeting \
         and may be left empty if nothing remains open."
            .to_owned()
    };
    let system = format!(
        "{}\n\nSummarize round {} of {}: synthesize the key discussion points, decisions and criticisms, \
         resolve conflicts between the experts where you can, and turn the critique's open issues into \
         follow-up questions. {next}\n\n{SYNTHESIS_FORMAT}",
        coordinator.persona, input.round, input.rounds
    );
    request(
        settings,
        TurnKind::Synthesis,
        COORDINATOR_NAME,
        input.round,
        settings.coordinator_temperature,
        system,
        user,
    )
}

pub fn assemble_reformat_prompt(settings: &EngineSettings, round: u32, previous_output: &str) -> ChatRequest {
    let system = format!(
        "Rewrite the text you are given into the required structure without adding new content.\n\n{SYNTHESIS_FORMAT}"
    );
    request(
        settings,
        TurnKind::Reformat,
        COORDINATOR_NAME,
        round,
        settings.coordinator_temperature,
        system,
        previous_output.to_owned(),
    )
}

pub fn assemble_final_prompt(
    settings: &EngineSettings,
    agenda: &str,
    rounds: &[RoundRecord],
    transcript: &str,
    budget: usize,
) -> ChatRequest {
    let coordinator = AgentProfile::coordinator();
    let syntheses: String = rounds
        .iter()
        .map(|r| {
            let mut s = format!("Round {} synthesis:\n{}\n", r.round, r.synthesis);
            if !r.follow_up_questions.is_empty() {
                let _ = write!(s, "Round {} follow-up questions:\n{}", r.round, numbered(&r.follow_up_questions));
            }
            s.push('\n');
            s
        })
        .collect();
    let user = render_sections(
        &[
            Section::new(SECTION_AGENDA, agenda),
            Section::new("Round Syntheses", syntheses),
            Section::new("Recent Transcript", transcript),
        ],
        budget,
    );
    let system = format!(
        "{}\n\nThe meeting is over. Compile the final summary for the user: the conclusions reached, the \
         decisions taken, the disagreements that remain and the questions to carry into the next meeting.",
        coordinator.persona
    );
    request(
        settings,
        TurnKind::FinalSummary,
        COORDINATOR_NAME,
        0,
        settings.coordinator_temperature,
        system,
        user,
    )
}

pub fn assemble_warmup_prompt(
    settings: &EngineSettings,
    expert: &AgentProfile,
    batch: u32,
    batches: u32,
    excerpts: &[Citation],
    budget: usize,
) -> ChatRequest {
    let user = render_sections(
        &[
            Section::new(SECTION_PERSONA, expert.persona.as_str()),
            Section::new("Batch", format!("{batch} of {batches}")),
            Section::new("Knowledge Base Excerpts", render_excerpts(excerpts, budget)),
        ],
        budget,
    );
    let system = format!(
        "You are {}, preparing for upcoming team meetings by reading your own knowledge base. From the \
         excerpts, write down the key concepts, terminology and context you will need to remember, as \
         concise notes.",
        expert.name
    );
    request(
        settings,
        TurnKind::Warmup,
        &expert.name,
        batch,
        settings.expert_temperature,
        system,
        user,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sections_are_marked_none() {
        let out = render_sections(&[Section::new("A", ""), Section::new("B", "body")], 100);
        assert_eq!(out, "## A\nnone\n\n## B\nbody");
    }

    #[test]
    fn section_bodies_respect_budget() {
        let out = render_sections(&[Section::new("A", "x".repeat(50))], 10);
        assert_eq!(out.lines().nth(1).unwrap().chars().count(), 10);
    }

    #[test]
    fn carried_context_is_verbatim() {
        let round = RoundRecord {
            round: 1,
            guidance: "g".into(),
            expert_turns: vec![],
            critique: "c".into(),
            synthesis: "We agreed on X.".into(),
            follow_up_questions: vec!["Why X?".into(), "When Y?".into()],
        };
        let carried = carried_context(Some(&round));
        assert!(carried.contains("We agreed on X."));
        assert!(carried.contains("1. Why X?\n2. When Y?\n"));
        assert!(carried_context(None).is_empty());
    }

    #[test]
    fn ranked_lists_keep_the_best_items() {
        let out = render_ranked(vec!["aaaa".into(), "bbbb".into(), "cc".into()], 9);
        assert_eq!(out, "aaaabbbb");
        assert_eq!(render_ranked(vec!["abcdef".into()], 3), "abc");
    }
}
